import json
from collections import Counter

import pytest
from hypothesis import given, strategies as st

from hybrid_slm.corpus_io import (
    PackingError,
    RecordError,
    hybrid_record,
    pack_sequences,
    parse_records,
    read_records,
    record_to_hybrid,
    write_records,
)
from hybrid_slm.interleaver import InterleaveConfig, interleave


def test_pack_fixture():
    packs = pack_sequences([4000, 3000, 5000], 10_000)
    assert [[s.end - s.start for s in p.segments] for p in packs] == [[4000, 3000], [5000]]
    assert [p.fill for p in packs] == [7000, 5000]
    assert packs[0].segments[1].start == 4000 and packs[0].segments[1].segment == 1


def test_pack_exact_capacity_and_overflow():
    (only,) = pack_sequences([("r0", 10_000)])
    assert only.fill == only.capacity == 10_000
    with pytest.raises(PackingError, match="big") as err:
        pack_sequences([("ok", 5), ("big", 10_001)])
    assert err.value.offenders == [("big", 10_001)]


def test_segment_ids():
    (p,) = pack_sequences([2, 3], capacity=6)
    assert p.segment_ids() == [0, 0, 1, 1, 1, -1]
    assert p.to_record() == {
        "capacity": 6,
        "fill": 5,
        "segments": [{"record": 0, "start": 0, "end": 2, "segment": 0}, {"record": 1, "start": 2, "end": 5, "segment": 1}],
    }


@given(st.integers(1, 500), st.data())
def test_packing_invariants(capacity, data):
    lengths = data.draw(st.lists(st.integers(0, capacity), max_size=40))
    packs = pack_sequences(lengths, capacity)
    ids = [s.record for p in packs for s in p.segments]
    assert Counter(ids) == Counter(range(len(lengths)))
    assert ids == sorted(ids)
    assert sum(p.fill for p in packs) == sum(lengths)
    for p in packs:
        assert p.fill <= capacity
        assert len({s.segment for s in p.segments}) == len(p.segments)
        spans = sorted((s.start, s.end) for s in p.segments)
        assert all(a[1] <= b[0] for a, b in zip(spans, spans[1:]))
    assert [p.to_record() for p in pack_sequences(lengths, capacity)] == [p.to_record() for p in packs]


records = st.lists(
    st.dictionaries(st.text(min_size=1, max_size=5), st.one_of(st.integers(), st.text(max_size=5), st.lists(st.integers(), max_size=3)), max_size=4),
    min_size=100,
    max_size=100,
)


@given(records)
def test_records_roundtrip(tmp_path_factory, recs):
    path = tmp_path_factory.mktemp("rec") / "r.jsonl"
    write_records(path, recs)
    assert read_records(path) == recs


def test_empty_file(tmp_path):
    path = tmp_path / "empty.jsonl"
    path.write_text("")
    assert read_records(path) == []


def test_truncated_final_line_reports_line_number():
    lines = ['{"a": 1}', '{"a": 2}', '{"a": ']
    with pytest.raises(RecordError, match="line 3") as err:
        parse_records(lines)
    assert err.value.line == 3


def test_missing_field_reports_line():
    with pytest.raises(RecordError, match="line 2"):
        parse_records(['{"text": []}', '{"frames": []}'], required=("text",))


def test_hybrid_record_fields():
    cfg = InterleaveConfig(2, 3)
    rec = hybrid_record([7, 8, 9], [[1, 2], [3, 4]], cfg, id="x")
    assert rec == {"text": [7, 8, 9], "frames": [[1, 2], [3, 4]], "schedule": [2, 3], "layout": "TTAAT", "id": "x"}
    seq, back = record_to_hybrid(json.loads(json.dumps(rec)))
    assert back == cfg and seq == interleave([7, 8, 9], [(1, 2), (3, 4)], cfg)
    with pytest.raises(RecordError, match="layout"):
        record_to_hybrid({**rec, "layout": "TATAT"})
    with pytest.raises(RecordError, match="mixed widths"):
        record_to_hybrid({**rec, "frames": [[1, 2], [3]], "layout": "TTAAT"})
