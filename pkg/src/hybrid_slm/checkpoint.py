"""Versioned checkpoint container.

Layout::

    HSLMCKPT\\n
    <one line of JSON: version, config echo, parameter table>\\n
    <raw little-endian parameter blobs in table order>

The JSON header is written with sorted keys and parameters in sorted name
order, so identical weights produce identical bytes.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np
import torch

from .model import HybridLM, ModelConfig

MAGIC = b"HSLMCKPT\n"
VERSION = 1


class CheckpointError(ValueError):
    pass


def save_checkpoint(model: HybridLM, path: str | Path, extra: dict | None = None) -> None:
    state = model.state_dict()
    table, blobs, offset = [], [], 0
    for name in sorted(state):
        arr = state[name].detach().cpu().numpy()
        arr = np.ascontiguousarray(arr.astype(arr.dtype.newbyteorder("<")))
        data = arr.tobytes()
        table.append({"name": name, "shape": list(arr.shape), "dtype": arr.dtype.str, "offset": offset, "nbytes": len(data)})
        blobs.append(data)
        offset += len(data)
    header = {
        "version": VERSION,
        "config": {k: v for k, v in model.cfg.to_config().items()},
        "params": table,
        "extra": extra or {},
    }
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(json.dumps(header, sort_keys=True, separators=(",", ":")).encode() + b"\n")
        for data in blobs:
            f.write(data)


def read_header(path: str | Path) -> tuple[dict, int]:
    with open(path, "rb") as f:
        if f.read(len(MAGIC)) != MAGIC:
            raise CheckpointError(f"{path}: not a checkpoint (bad magic)")
        line = f.readline()
        start = f.tell()
    header = json.loads(line)
    if header.get("version") != VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {header.get('version')}")
    return header, start


def load_checkpoint(path: str | Path) -> HybridLM:
    header, start = read_header(path)
    cfg = ModelConfig.from_config({k: _as_str(v) for k, v in header["config"].items()})
    model = HybridLM(cfg)
    raw = Path(path).read_bytes()[start:]
    state = {}
    for entry in header["params"]:
        chunk = raw[entry["offset"]:entry["offset"] + entry["nbytes"]]
        if len(chunk) != entry["nbytes"]:
            raise CheckpointError(f"{path}: truncated blob for {entry['name']}")
        arr = np.frombuffer(chunk, dtype=np.dtype(entry["dtype"])).reshape(entry["shape"])
        state[entry["name"]] = torch.from_numpy(arr.copy())
    missing = set(model.state_dict()) - set(state)
    if missing:
        raise CheckpointError(f"{path}: missing parameters {sorted(missing)}")
    model.load_state_dict(state)
    return model


def _as_str(v) -> str:
    if isinstance(v, (list, tuple)):
        return ", ".join(str(x) for x in v)
    return str(v)
