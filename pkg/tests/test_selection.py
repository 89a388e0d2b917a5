import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from selfx.features import MatchMaps
from selfx.retrieval import ExemplarCandidate
from selfx.selection import SelectionConfig, select

SCALES = (1.2, 1.4, 1.7, 2.1, 2.5, 2.9, 3.5)


def cand(scale, mean_d, score=0.9, frame=0):
    maps = MatchMaps(np.zeros((2, 2)), np.full((2, 2), float(mean_d)), np.ones((2, 2, 2), dtype=int))
    return ExemplarCandidate(frame, scale, (0, 0), int(32 * scale + 0.5), score, "global"), maps


def scales_of(sel):
    return [c.scale for c, _ in sel.refs]


def test_example_largest_passing():
    ds = [0.05, 0.08, 0.3, 0.02, 0.5, 0.09, 0.11]
    sel = select([cand(s, d) for s, d in zip(SCALES, ds)], SelectionConfig(0.1, 3))
    assert scales_of(sel) == [2.9, 2.1, 1.4] and sel.fill_count == 0


def test_all_zero_distance():
    sel = select([cand(s, 0.0) for s in SCALES], SelectionConfig())
    assert scales_of(sel) == [3.5, 2.9, 2.5] and sel.fill_count == 0


def test_all_failing_fallback():
    ds = [0.4, 0.2, 0.9, 0.15, 0.3, 0.6, 0.25]
    sel = select([cand(s, d) for s, d in zip(SCALES, ds)], SelectionConfig())
    assert scales_of(sel) == [2.1, 1.4, 3.5] and sel.fill_count == 3


def test_partial_fill_order():
    ds = [0.5, 0.01, 0.3, 0.2, 0.5, 0.5, 0.5]
    sel = select([cand(s, d) for s, d in zip(SCALES, ds)], SelectionConfig())
    # one passer (1.4), then the two smallest failing mean(D): 2.1 (0.2), 1.7 (0.3)
    assert scales_of(sel) == [1.4, 2.1, 1.7] and sel.fill_count == 2


def test_tie_breaks():
    cands = [cand(2.1, 0.0, 0.7, 4), cand(2.1, 0.0, 0.9, 5), cand(2.1, 0.0, 0.9, 2)]
    sel = select(cands, SelectionConfig(k=3))
    assert [c.source_frame for c, _ in sel.refs] == [2, 5, 4]


def test_padding_when_too_few():
    sel = select([cand(1.7, 0.05), cand(2.5, 0.2)], SelectionConfig(k=3))
    assert scales_of(sel) == [1.7, 2.5, 1.7]
    assert sel.degenerate and sel.padded == 1


def test_errors():
    with pytest.raises(ValueError):
        select([], SelectionConfig())
    with pytest.raises(ValueError):
        SelectionConfig(delta=0)
    with pytest.raises(ValueError):
        select([cand(2.1, 0)], SelectionConfig(k=0))


candidate_sets = st.lists(st.tuples(st.sampled_from(SCALES), st.floats(0, 0.5),
                                    st.floats(-1, 1), st.integers(0, 20)), min_size=1, max_size=10)


@given(candidate_sets, st.integers(1, 5), st.floats(0.01, 0.4))
@settings(max_examples=100, deadline=None)
def test_length_and_ordering(items, k, delta):
    sel = select([cand(*it) for it in items], SelectionConfig(delta, k))
    assert len(sel.refs) == k
    head = sel.refs[:k - sel.fill_count]
    assert all(m.mean_distance <= delta for _, m in head)
    assert [c.scale for c, _ in head] == sorted((c.scale for c, _ in head), reverse=True)


@given(candidate_sets, st.randoms(use_true_random=False))
@settings(max_examples=100, deadline=None)
def test_permutation_invariant(items, rnd):
    cands = [cand(*it) for it in items]
    shuffled = cands[:]
    rnd.shuffle(shuffled)
    a, b = select(cands, SelectionConfig()), select(shuffled, SelectionConfig())
    key = lambda s: [(c, m.mean_distance) for c, m in s.refs]  # noqa: E731
    assert key(a) == key(b) and a.fill_count == b.fill_count


@given(candidate_sets, st.floats(0.01, 0.3), st.floats(0.0, 0.3))
@settings(max_examples=100, deadline=None)
def test_raising_delta_is_monotone(items, delta, extra):
    cands = [cand(*it) for it in items]
    lo = select(cands, SelectionConfig(delta, 3))
    hi = select(cands, SelectionConfig(delta + extra, 3))
    assert 3 - hi.fill_count >= 3 - lo.fill_count
