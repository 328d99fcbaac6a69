import pytest
from hypothesis import given, strategies as st

from hybrid_slm import oracles
from hybrid_slm.delay_pattern import DelayError, DelayGrid, apply_delay, delayed_column, invert_delay, pad_count

P = -1


def test_single_codebook_is_identity():
    grid = apply_delay([(5,), (6,)], 1, P)
    assert grid.rows == ((5, 6),)
    assert invert_delay(grid) == [(5,), (6,)]
    assert delayed_column(1, grid) == (6,)


def test_three_codebook_example():
    frames = [(10, 20, 30), (11, 21, 31)]
    grid = apply_delay(frames, 3, P)
    assert grid.rows == ((10, 11, P, P), (P, 20, 21, P), (P, P, 30, 31))
    assert invert_delay(grid) == frames
    assert delayed_column(0, grid) == (10, P, P)
    assert delayed_column(2, grid) == (P, 21, 30)


def test_empty_grid():
    grid = apply_delay([], 4, P)
    assert grid.width == 0 and grid.T == 0
    assert invert_delay(grid) == []


def test_frame_arity_error():
    with pytest.raises(DelayError, match="expected J=3"):
        apply_delay([(1, 2)], 3, P)


def test_invert_rejects_interior_pad():
    grid = DelayGrid(((1, P, 3, P), (P, 4, 5, 6)), (P, P))
    with pytest.raises(DelayError, match="pad inside"):
        invert_delay(grid)


def test_invert_rejects_value_outside_window():
    grid = DelayGrid(((1, 2, 9), (7, 4, 5)), (P, P))
    with pytest.raises(DelayError, match="outside the window"):
        invert_delay(grid)


def test_invert_rejects_bad_width():
    with pytest.raises(DelayError, match="inconsistent"):
        invert_delay(DelayGrid(((P,), (P,), (P,)), (P, P, P)))


def test_delayed_column_on_partial_rows():
    assert delayed_column(1, [[1, 2], [P, 3, 4]]) == (2, 3)
    with pytest.raises(DelayError, match="not yet emitted"):
        delayed_column(2, [[1, 2], [P, 3, 4]])


def test_per_codebook_pads():
    grid = apply_delay([(1, 2)], 2, (8, 9))
    assert grid.rows == ((1, 8), (9, 2))
    assert invert_delay(grid) == [(1, 2)]


@given(st.sampled_from([1, 2, 4, 8]), st.data())
def test_roundtrip_and_pad_count(J, data):
    T = data.draw(st.integers(1, 40))
    frames = data.draw(st.lists(st.tuples(*[st.integers(0, 30)] * J), min_size=T, max_size=T))
    grid = apply_delay(frames, J, 31)
    assert [list(r) for r in grid.rows] == oracles.delay_by_formula(frames, J, (31,) * J)
    assert invert_delay(grid) == frames
    assert pad_count(grid) == J * (J - 1)
    assert sum(v != 31 for row in grid.rows for v in row) == J * T
    for j, row in enumerate(grid.rows):
        assert row[:j] == (31,) * j and row[len(row) - (J - 1 - j):] == (31,) * (J - 1 - j)


@given(st.integers(1, 8), st.integers(0, 30))
def test_width_increases_with_T(J, T):
    a = apply_delay([(0,) * J] * T, J, 9)
    b = apply_delay([(0,) * J] * (T + 1), J, 9)
    assert b.width > a.width
