"""Joint text/audio token universe.

A response element is either a :class:`Text` token or an :class:`AudioFrame`
holding one id per codebook. The first output head predicts over a unified
vocabulary laid out as ``[text block | layer-0 audio block]``, so text id
``i`` maps to ``i`` and layer-0 audio id ``a`` maps to ``text_size + a``.

Each codebook reserves its last id as the delay pad. Turn markers, BOS and
the two end-of-stream ids live in the text vocabulary.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Sequence, Union

from . import kvfile

AUDIO_EOS_MODES = ("token", "implicit")


class VocabError(ValueError):
    pass


@dataclass(frozen=True)
class Text:
    id: int


@dataclass(frozen=True)
class AudioFrame:
    ids: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "ids", tuple(int(i) for i in self.ids))


HybridToken = Union[Text, AudioFrame]


def is_text(token) -> bool:
    return isinstance(token, Text)


def is_audio(token) -> bool:
    return isinstance(token, AudioFrame)


@dataclass(frozen=True)
class VocabSpec:
    """Sizes and reserved ids of the joint vocabulary.

    ``role_marker_ids`` is ``(user, assistant, system)``. ``audio_eos``
    selects how the end of the audio stream is labelled for the first head:
    ``"token"`` uses ``eos_audio_id``, ``"implicit"`` uses the layer-0 pad.
    """

    text_size: int = 100
    codebook_sizes: tuple[int, ...] = (64,) * 8
    bos_id: int = 0
    eos_text_id: int = 1
    eos_audio_id: int = 2
    role_marker_ids: tuple[int, int, int] = (3, 4, 5)
    audio_eos: str = "token"

    def __post_init__(self):
        object.__setattr__(self, "codebook_sizes", tuple(int(s) for s in self.codebook_sizes))
        object.__setattr__(self, "role_marker_ids", tuple(int(r) for r in self.role_marker_ids))
        validate(self)

    @property
    def num_codebooks(self) -> int:
        return len(self.codebook_sizes)

    @property
    def pad_audio_id(self) -> tuple[int, ...]:
        return tuple(size - 1 for size in self.codebook_sizes)

    @property
    def head0_size(self) -> int:
        return self.text_size + self.codebook_sizes[0]

    @property
    def user_id(self) -> int:
        return self.role_marker_ids[0]

    @property
    def assistant_id(self) -> int:
        return self.role_marker_ids[1]

    @property
    def system_id(self) -> int:
        return self.role_marker_ids[2]

    @property
    def reserved_text_ids(self) -> tuple[int, ...]:
        return (self.bos_id, self.eos_text_id, self.eos_audio_id, *self.role_marker_ids)

    @property
    def content_text_ids(self) -> list[int]:
        """Text ids free for ordinary content (everything not reserved)."""
        reserved = set(self.reserved_text_ids)
        return [i for i in range(self.text_size) if i not in reserved]

    def audio_end_label(self) -> int:
        """Unified head-0 label that marks the end of the layer-0 stream."""
        if self.audio_eos == "token":
            return self.eos_audio_id
        return self.text_size + self.pad_audio_id[0]

    def to_config(self) -> dict[str, object]:
        return {
            "text_size": self.text_size,
            "num_codebooks": self.num_codebooks,
            "codebook_sizes": list(self.codebook_sizes),
            "pad_audio_id": list(self.pad_audio_id),
            "bos_id": self.bos_id,
            "eos_text_id": self.eos_text_id,
            "eos_audio_id": self.eos_audio_id,
            "role_marker_ids": list(self.role_marker_ids),
            "audio_eos": self.audio_eos,
        }

    @classmethod
    def from_config(cls, values: dict[str, str]) -> "VocabSpec":
        spec = cls(
            text_size=kvfile.as_int(values, "text_size"),
            codebook_sizes=kvfile.as_int_list(values, "codebook_sizes"),
            bos_id=kvfile.as_int(values, "bos_id"),
            eos_text_id=kvfile.as_int(values, "eos_text_id"),
            eos_audio_id=kvfile.as_int(values, "eos_audio_id"),
            role_marker_ids=kvfile.as_int_list(values, "role_marker_ids"),
            audio_eos=values.get("audio_eos", "token"),
        )
        # derived keys are optional but must agree when present
        if "num_codebooks" in values and kvfile.as_int(values, "num_codebooks") != spec.num_codebooks:
            raise VocabError("num_codebooks disagrees with codebook_sizes")
        if "pad_audio_id" in values and kvfile.as_int_list(values, "pad_audio_id") != spec.pad_audio_id:
            raise VocabError("pad_audio_id must be the last id of each codebook")
        return spec

    def save(self, path: str | Path) -> None:
        Path(path).write_text(kvfile.format_kv(self.to_config(), header="hybrid_slm vocab spec"))

    @classmethod
    def load(cls, path: str | Path) -> "VocabSpec":
        return cls.from_config(kvfile.read_kv(path))


def validate(spec: VocabSpec) -> None:
    """Raise :class:`VocabError` unless every invariant of ``spec`` holds."""
    if spec.text_size < 1:
        raise VocabError(f"zero-size text vocabulary: text_size={spec.text_size}")
    if len(spec.codebook_sizes) == 0:
        raise VocabError("J = 0: at least one codebook is required")
    for j, size in enumerate(spec.codebook_sizes):
        if size < 1:
            raise VocabError(f"zero-size codebook {j}: size={size}")
    if len(spec.role_marker_ids) != 3:
        raise VocabError("role_marker_ids must list (user, assistant, system)")
    reserved = spec.reserved_text_ids
    if len(set(reserved)) != len(reserved):
        raise VocabError(f"duplicate reserved id among {reserved}")
    for rid in reserved:
        if not 0 <= rid < spec.text_size:
            raise VocabError(f"reserved id {rid} outside text vocabulary [0, {spec.text_size})")
    if spec.audio_eos not in AUDIO_EOS_MODES:
        raise VocabError(f"audio_eos must be one of {AUDIO_EOS_MODES}, got {spec.audio_eos!r}")


def check_token(token: HybridToken, spec: VocabSpec) -> None:
    if isinstance(token, Text):
        if not 0 <= token.id < spec.text_size:
            raise VocabError(f"text id {token.id} out of range [0, {spec.text_size})")
    elif isinstance(token, AudioFrame):
        if len(token.ids) != spec.num_codebooks:
            raise VocabError(f"audio frame has {len(token.ids)} ids, expected {spec.num_codebooks}")
        for j, (a, size) in enumerate(zip(token.ids, spec.codebook_sizes)):
            if not 0 <= a < size:
                raise VocabError(f"codebook {j} id {a} out of range [0, {size})")
    else:
        raise TypeError(f"not a hybrid token: {token!r}")


def to_unified_head0(token: HybridToken, spec: VocabSpec) -> int:
    if isinstance(token, Text):
        if not 0 <= token.id < spec.text_size:
            raise VocabError(f"text id {token.id} out of range [0, {spec.text_size})")
        return token.id
    if isinstance(token, AudioFrame):
        a = token.ids[0]
        if not 0 <= a < spec.codebook_sizes[0]:
            raise VocabError(f"layer-0 id {a} out of range [0, {spec.codebook_sizes[0]})")
        return spec.text_size + a
    raise TypeError(f"not a hybrid token: {token!r}")


def from_unified_head0(uid: int, spec: VocabSpec) -> tuple[str, int]:
    """Return ``("text", id)`` or ``("audio0", id)`` for a unified head-0 id."""
    if not 0 <= uid < spec.head0_size:
        raise VocabError(f"unified id {uid} out of range [0, {spec.head0_size})")
    if uid < spec.text_size:
        return "text", uid
    return "audio0", uid - spec.text_size


def as_token(x) -> HybridToken:
    """Coerce an int to :class:`Text` and a sequence to :class:`AudioFrame`."""
    if isinstance(x, (Text, AudioFrame)):
        return x
    if isinstance(x, Sequence):
        return AudioFrame(tuple(x))
    return Text(int(x))
