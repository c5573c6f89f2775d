import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from oracles import tiou_ref
from tadkit.errors import RangeError, TadError
from tadkit.segments import (
    DEFAULT_OFFSETS, Segment, clamp_segment, generate_fake_proposals, tiou, tiou_many,
)

coords = st.floats(min_value=0, max_value=1000, allow_nan=False)


@st.composite
def segments(draw):
    a = draw(coords)
    length = draw(st.floats(min_value=1e-3, max_value=500))
    return Segment(a, a + length)


def test_tiou_examples():
    assert tiou(Segment(3, 7), Segment(3, 7)) == 1.0
    assert tiou(Segment(0, 1), Segment(2, 3)) == 0.0
    # intersection 1, union 3
    assert tiou(Segment(0, 2), Segment(1, 3)) == pytest.approx(1 / 3, abs=1e-15)


def test_touching_segments_do_not_overlap():
    assert tiou(Segment(0, 1), Segment(1, 2)) == 0.0


@given(segments(), segments())
def test_tiou_properties(a, b):
    v = tiou(a, b)
    assert 0.0 <= v <= 1.0
    assert v == tiou(b, a)
    assert v == pytest.approx(tiou_ref((a.start, a.end), (b.start, b.end)), abs=1e-12)


@given(segments(), segments(), st.floats(min_value=-100, max_value=100))
def test_tiou_shift_invariant(a, b, shift):
    shifted = tiou(Segment(a.start + shift, a.end + shift), Segment(b.start + shift, b.end + shift))
    assert shifted == pytest.approx(tiou(a, b), abs=1e-9)


@given(segments(), segments())
def test_tiou_one_iff_equal(a, b):
    assert tiou(a, a) == 1.0
    if tiou(a, b) == 1.0:
        assert math.isclose(a.start, b.start, abs_tol=1e-9) and math.isclose(a.end, b.end, abs_tol=1e-9)


def test_tiou_many_matches_scalar():
    rng = np.random.default_rng(0)
    starts = rng.uniform(0, 50, 20)
    ends = starts + rng.uniform(0.1, 20, 20)
    target = Segment(10, 25)
    expected = [tiou(target, Segment(s, e)) for s, e in zip(starts, ends)]
    np.testing.assert_allclose(tiou_many(target, starts, ends), expected, rtol=0, atol=1e-15)


def test_segment_rejects_empty_and_nonfinite():
    with pytest.raises(RangeError):
        Segment(5, 5)
    with pytest.raises(RangeError):
        Segment(0, float("inf"))


@pytest.mark.parametrize("seg, expected", [((-1, 5), (0, 5)), ((10, 50), (10, 30)), ((2, 3), (2, 3))])
def test_clamp_segment(seg, expected):
    assert clamp_segment(Segment(*seg), 30) == Segment(*expected)


def test_clamp_segment_outside():
    with pytest.raises(RangeError):
        clamp_segment(Segment(40, 50), 30)
    with pytest.raises(RangeError):
        clamp_segment(Segment(1, 2), 0)


def test_fake_zero_offset():
    (p,) = generate_fake_proposals(Segment(10, 20), [0.0])
    assert p.segment == Segment(10, 20)
    assert p.target == (0.0, 0.0)


def test_fake_grid_size_and_order():
    props = generate_fake_proposals(Segment(10, 20), [-0.1, 0.0, 0.1])
    assert len(props) == 9
    # row-major: start offset varies slowest
    assert [p.segment.start for p in props[:3]] == [9.0, 9.0, 9.0]
    assert [p.segment.end for p in props[:3]] == [19.0, 20.0, 21.0]


def test_fake_target_hand_value():
    props = generate_fake_proposals(Segment(10, 20), [0.0, 0.1])
    p = next(p for p in props if p.segment == Segment(11, 20))
    # (10 - 11) / 9
    assert p.target[0] == pytest.approx(-1 / 9, abs=1e-15)
    assert p.target[1] == 0.0


def test_fake_errors():
    with pytest.raises(TadError):
        generate_fake_proposals(Segment(0, 1), [])
    with pytest.raises(RangeError):
        generate_fake_proposals(Segment(0, 1), [0.5])


@given(segments())
def test_fake_reconstruction(gt):
    props = generate_fake_proposals(gt, DEFAULT_OFFSETS)
    assert len(props) == len(DEFAULT_OFFSETS) ** 2
    assert any(p.segment == gt and p.target == (0.0, 0.0) for p in props)
    for p in props:
        rec = p.apply_target()
        assert abs(rec.start - gt.start) <= 1e-9
        assert abs(rec.end - gt.end) <= 1e-9
