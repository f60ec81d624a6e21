import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from casa.domains import PseudoDomain, PseudoDomainRegistry, RegistryError, compute_radius, domains_from_dicts


def _registry(*domains):
    reg = PseudoDomainRegistry(window_size=3)
    for center, radius in domains:
        pd = reg.create_domain(np.array([center], dtype=float))
        pd.radius = radius
    return reg


def test_assign_exact_center():
    reg = _registry(([0.0, 0.0], 1.0), ([5.0, 0.0], 1.0))
    assert reg.assign(np.array([5.0, 0.0])) == 1


def test_assign_empty_registry():
    assert PseudoDomainRegistry().assign(np.zeros(3)) is None


def test_assign_strict_argmin_then_radius():
    emb = np.zeros(2)
    near, far = [1.0, 0.0], [-3.0, 0.0]
    assert _registry((near, 2.0), (far, 10.0)).assign(emb) == 0
    # the nearer domain does not cover emb; the farther one would, but is not consulted
    assert _registry((near, 0.5), (far, 10.0)).assign(emb) is None
    # radius test is strict
    assert _registry((near, 1.0)).assign(emb) is None


def test_assign_tie_lowest_id():
    reg = _registry(([1.0, 0.0], 5.0), ([-1.0, 0.0], 5.0))
    assert reg.assign(np.zeros(2)) == 0


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10_000), st.floats(0.01, 100.0))
def test_assign_scale_invariant_and_within_radius(seed, scale):
    rng = np.random.default_rng(seed)
    reg, reg_s = PseudoDomainRegistry(), PseudoDomainRegistry()
    for _ in range(4):
        m = rng.normal(size=(3, 2)) + rng.normal(scale=3, size=2)
        reg.create_domain(m)
        reg_s.create_domain(m * scale)
    for emb in rng.normal(scale=3, size=(10, 2)):
        got = reg.assign(emb)
        if got is not None:
            assert np.linalg.norm(emb - reg[got].center) < reg[got].radius
        assert reg_s.assign(emb * scale) == got


def test_compute_radius_examples(rng):
    c = np.zeros(2)
    assert compute_radius(c, np.array([[1.0, 0.0], [0.0, 3.0]])) == 4.0
    assert compute_radius(c, np.array([[0.0, 0.0]])) == 0.0
    members = rng.normal(size=(50, 5))
    center = rng.normal(size=5)
    brute = 2 * sum(np.sqrt(sum((m[i] - center[i]) ** 2 for i in range(5))) for m in members) / 50
    assert abs(compute_radius(center, members) - brute) <= 1e-12 * brute
    with pytest.raises(RegistryError):
        compute_radius(c, np.zeros((0, 2)))


def test_update_performance_window():
    pd = PseudoDomain(0, np.zeros(2), 1.0, window_size=2)
    pd.update_performance(0.6)
    pd.update_performance(0.8)
    pd.update_performance(1.0)
    assert list(pd.perf_window) == [0.8, 1.0]
    assert pd.mean_performance == pytest.approx(0.9)
    fresh = PseudoDomain(1, np.zeros(2), 1.0)
    fresh.update_performance(0.5)
    assert fresh.mean_performance == 0.5
    with pytest.raises(RegistryError):
        fresh.update_performance(float("nan"))


def test_update_performance_keeps_last_p(rng):
    P = 5
    pd = PseudoDomain(0, np.zeros(1), 0.0, window_size=P)
    history = rng.random(P + 3).tolist()
    for v in history:
        pd.update_performance(v)
    assert pd.mean_performance == pytest.approx(sum(history[-P:]) / P, abs=1e-15)


def test_is_complete_examples():
    pd = PseudoDomain(0, np.zeros(1), 0.0, window_size=2)
    pd.update_performance(0.99)
    assert not pd.is_complete("classification", 0.75)
    pd.update_performance(0.61)
    assert pd.is_complete("classification", 0.75)  # mean 0.8
    reg = PseudoDomain(1, np.zeros(1), 0.0, window_size=2)
    for v in (4.0, 4.4):
        reg.update_performance(v)
    assert reg.is_complete("regression", 5.0)


def test_is_complete_sticky_and_monotone():
    pd = PseudoDomain(0, np.zeros(1), 0.0, window_size=2)
    pd.update_performance(1.0)
    pd.update_performance(1.0)
    assert pd.is_complete("classification", 0.9)
    pd.update_performance(0.0)
    pd.update_performance(0.0)
    assert pd.is_complete("classification", 0.9)
    lo, hi = PseudoDomain(1, np.zeros(1), 0.0, window_size=2), PseudoDomain(2, np.zeros(1), 0.0, window_size=2)
    for v in (0.5, 0.7):
        lo.update_performance(v)
        hi.update_performance(v + 0.2)
    assert lo.is_complete("classification", 0.55) <= hi.is_complete("classification", 0.55)


def test_create_domain_examples(rng):
    reg = PseudoDomainRegistry()
    pd = reg.create_domain(np.array([[0.0, 0.0], [2.0, 0.0]]), step=7)
    assert pd.center.tolist() == [1.0, 0.0] and pd.radius == 2.0 and pd.created_at == 7
    assert len(pd.perf_window) == 0
    v = np.array([3.0, -1.0])
    single = reg.create_domain(v)
    assert single.radius == 0.0 and np.array_equal(single.center, v)
    members = rng.normal(size=(20, 4)) * 0.1 + 3
    pd3 = PseudoDomainRegistry().create_domain(members)
    brute = [sum(m[i] for m in members) / 20 for i in range(4)]
    np.testing.assert_allclose(pd3.center, brute, rtol=1e-12)
    assert [d.id for d in reg] == [0, 1]
    with pytest.raises(RegistryError):
        reg.create_domain(np.zeros((0, 4)))


def test_registry_roundtrip():
    reg = PseudoDomainRegistry(window_size=3)
    reg.create_domain(np.array([[0.0, 1.0], [1.0, 1.0]]))
    reg[0].update_performance(1.0)
    back = domains_from_dicts(reg.to_dict()["domains"], window_size=3)
    assert back[0].radius == reg[0].radius
    assert list(back[0].perf_window) == [1.0]
    assert back.assign(np.array([0.5, 1.0])) == 0
