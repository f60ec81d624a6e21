import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from casa.outliers import OutlierMemory, find_group, pairwise_distances
from oracles import max_clique_bruteforce


def _memory(points):
    om = OutlierMemory()
    for i, p in enumerate(points):
        om.add(f"s{i}", p)
    return om


def test_add():
    om = OutlierMemory()
    om.add("a", np.zeros(2))
    assert len(om) == 1
    om.add("a", np.zeros(2))
    assert len(om) == 2
    for i in range(5):
        om.add(i, np.ones(2))
    assert len(om) == 7 and all(e.age == 0 for e in om.entries)


def test_tick_and_evict_ages():
    om = _memory([np.zeros(1)])
    assert om.tick_and_evict(3) == []
    assert om.tick_and_evict(3) == []
    assert om.tick_and_evict(3) == ["s0"]
    assert len(om) == 0


def test_tick_mixed_ages(rng):
    om = OutlierMemory()
    table = {}
    added = 0
    for step in range(12):
        for _ in range(rng.integers(0, 3)):
            name = f"x{added}"
            added += 1
            om.add(name, np.zeros(1))
            table[name] = 0
        for name in table:
            table[name] += 1
        expected = sorted(n for n, a in table.items() if a >= 4)
        table = {n: a for n, a in table.items() if a < 4}
        assert sorted(om.tick_and_evict(4)) == expected
        assert all(0 <= e.age < 4 for e in om.entries)


def test_discover_ball_among_scattered(rng):
    t = 1.0
    ball = rng.normal(size=(6, 3)) * 0.1
    far = np.array([[10, 0, 0], [0, 10, 0], [0, 0, 10], [-10, 0, 0]], dtype=float)
    pts = np.vstack([far[:2], ball[:3], far[2:], ball[3:]])
    om = _memory(pts)
    group = om.discover(t, 4)
    assert sorted(g.sample for g in group) == ["s2", "s3", "s4", "s7", "s8", "s9"]
    assert len(om) == 4
    size, _, _ = max_clique_bruteforce(pts, t, 4)
    assert size == 6


def test_discover_none_when_sparse():
    pts = np.arange(10, dtype=float)[:, None] * 5
    om = _memory(pts)
    assert om.discover(1.0, 4) is None
    assert len(om) == 10


def test_discover_picks_larger_group(rng):
    a = rng.normal(size=(5, 2)) * 0.05
    b = rng.normal(size=(7, 2)) * 0.05 + 20
    om = _memory(np.vstack([a, b]))
    group = om.discover(1.0, 4)
    assert len(group) == 7 and all(int(g.sample[1:]) >= 5 for g in group)


def test_discover_tie_break_smallest_spread():
    tight = np.array([[0, 0], [0.1, 0], [0, 0.1], [0.1, 0.1]])
    loose = np.array([[50, 0], [50.9, 0], [50, 0.9], [50.9, 0.9]])
    idx = find_group(np.vstack([loose, tight]), 1.5, 4)
    assert idx == [4, 5, 6, 7]


def test_discover_rejects_bad_t():
    with pytest.raises(ValueError):
        _memory([np.zeros(2)] * 5).discover(0.0)


@settings(max_examples=80, deadline=None)
@given(st.integers(0, 2**31), st.integers(4, 12))
def test_group_matches_bruteforce(seed, n):
    rng = np.random.default_rng(seed)
    pts = rng.random((n, 2)) * rng.uniform(0.5, 3)
    t = 1.0
    idx = find_group(pts, t, 4)
    size, best, dist = max_clique_bruteforce(pts, t, 4)
    if size == 0:
        assert idx is None
        return
    assert len(idx) == size
    assert all(dist[i, j] < t for i in idx for j in idx if i != j)
    spreads = [dist[np.ix_(c, c)].sum() for c in best]
    assert dist[np.ix_(idx, idx)].sum() == pytest.approx(min(spreads), rel=1e-12)


def test_pairwise_distances(rng):
    x = rng.normal(size=(6, 3))
    d = pairwise_distances(x)
    for i in range(6):
        for j in range(6):
            assert d[i, j] == pytest.approx(np.linalg.norm(x[i] - x[j]), abs=1e-12)
