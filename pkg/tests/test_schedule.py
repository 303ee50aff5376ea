import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from spdql.errors import InvalidArgument, InvalidSchedule
from spdql.mdp import grid_world, random_mdp
from spdql.schedule import (
    DistributionSchedule,
    TabulatedSchedule,
    beta_at,
    estimate_zeta,
    m_matrix_at,
    mixing_threshold_kstar,
    random_ergodic_schedule,
    second_eigenvalue_modulus,
    state_distribution_at,
    stationary_distribution,
    uniform_schedule,
    verify_mixing_bounds,
)


def test_v0_and_limit(schedule):
    np.testing.assert_array_equal(state_distribution_at(schedule, 0), [0.4, 0.6])
    np.testing.assert_allclose(state_distribution_at(schedule, 500), [0.4286, 0.5714], atol=1e-4)
    np.testing.assert_allclose(schedule.v_infinity, [3 / 7, 4 / 7], atol=1e-15)


def test_memoised_matches_fresh_products(rng):
    sched = random_ergodic_schedule(random_mdp(5, 3, rng), rng)
    for k in (0, 1, 7, 30):
        v = sched.v0.copy()
        for _ in range(k):
            v = sched.p_beta.T @ v
        np.testing.assert_allclose(state_distribution_at(sched, k), v, atol=1e-12)


def test_m_matrix_limit(schedule):
    m_inf = schedule.m_infinity.T.ravel()
    np.testing.assert_allclose(m_inf, [0.0857, 0.4, 0.3429, 0.1714], atol=1e-4)
    np.testing.assert_allclose(m_matrix_at(schedule, 400), m_inf, atol=1e-12)


def test_uniform_stationary_measure():
    g = grid_world()
    sched = uniform_schedule(g)
    np.testing.assert_allclose(m_matrix_at(sched, 0), 1 / 16, atol=1e-15)
    assert sched.zeta == pytest.approx(1 / 16)


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 5), st.integers(1, 4), st.integers(0, 2**32 - 1), st.integers(0, 60))
def test_measure_sums_to_one(n_states, n_actions, seed, k):
    rng = np.random.default_rng(seed)
    sched = random_ergodic_schedule(random_mdp(n_states, n_actions, rng), rng)
    assert m_matrix_at(sched, k).sum() == pytest.approx(1.0, abs=1e-12)
    assert sched.tau_at(k).min() >= sched.zeta * (1 - 1e-12)


def test_reference_zeta(schedule, schedule_from_one):
    # the minimum over k >= 1 is the printed constant; k = 0 itself dips to 0.08
    assert schedule_from_one.zeta == pytest.approx(0.0856, abs=1e-3)
    assert schedule.zeta == pytest.approx(0.08, abs=1e-12)


def test_zeta_stationary_start(rng):
    m = random_mdp(4, 2, rng)
    base = random_ergodic_schedule(m, rng)
    sched = DistributionSchedule(m, base.behavior, base.v_infinity)
    assert sched.zeta == pytest.approx(base.m_infinity.min(), abs=1e-15)


@pytest.mark.parametrize("seed", range(5))
def test_zeta_horizon_sufficient(seed):
    rng = np.random.default_rng(seed)
    sched = random_ergodic_schedule(random_mdp(4, 3, rng), rng)
    long = min(float(sched.tau_at(k).min()) for k in range(10 * 1000 + 1))
    assert sched.zeta == pytest.approx(min(long, float(sched.m_infinity.min())), abs=1e-12)


def test_zeta_rejects_zero_floor(model):
    with pytest.raises(InvalidSchedule):
        DistributionSchedule(model, np.array([[1.0, 0.0], [0.5, 0.5]]), [0.5, 0.5])


def test_zeta_horizon_validation(schedule):
    with pytest.raises(InvalidArgument):
        estimate_zeta(schedule, horizon=0, first_step=3)


def test_beta_first_step(schedule):
    v1 = schedule.v_at(1)
    np.testing.assert_allclose(v1, [0.428, 0.572], atol=1e-12)
    assert beta_at(schedule, 0) == pytest.approx(0.028 / schedule.zeta**2, rel=1e-12)


def test_beta_stationary_zero(rng):
    m = random_mdp(3, 2, rng)
    base = random_ergodic_schedule(m, rng)
    sched = DistributionSchedule(m, base.behavior, base.v_infinity)
    assert max(beta_at(sched, k) for k in range(20)) <= 1e-13 / sched.zeta**2


@pytest.mark.parametrize("seed", range(5))
def test_beta_bounds_inverse_drift(seed):
    rng = np.random.default_rng(seed)
    sched = random_ergodic_schedule(random_mdp(4, 3, rng), rng)
    for k in range(101):
        beta = beta_at(sched, k, check=True)
        direct = np.max(np.abs(1 / sched.tau_at(k) - 1 / sched.tau_at(k + 1)))
        assert direct <= beta * (1 + 1e-9) + 1e-12


def test_second_eigenvalue_reference(schedule):
    assert second_eigenvalue_modulus(schedule.p_beta) == pytest.approx(0.02, abs=1e-8)


def test_second_eigenvalue_rank_one():
    p = np.tile([0.2, 0.3, 0.5], (3, 1))
    assert second_eigenvalue_modulus(p) == pytest.approx(0.0, abs=1e-12)


@pytest.mark.parametrize("seed", range(5))
def test_second_eigenvalue_vs_characteristic_roots(seed):
    rng = np.random.default_rng(seed)
    p = rng.random((5, 5))
    p /= p.sum(axis=1, keepdims=True)
    roots = np.roots(np.poly(p))
    mods = np.sort(np.abs(roots))[::-1]
    assert second_eigenvalue_modulus(p) == pytest.approx(mods[1], abs=1e-6)


def test_second_eigenvalue_complex_pair():
    cyc = np.roll(np.eye(3), 1, axis=1)
    p = 0.9 * cyc + 0.1 / 3
    assert second_eigenvalue_modulus(p) == pytest.approx(0.9, abs=1e-8)


@pytest.mark.parametrize("lam, expected", [(math.exp(-1), 0), (0.02, 0), (0.9, 162)])
def test_kstar_examples(lam, expected):
    assert mixing_threshold_kstar(lam) == expected


def test_kstar_sweep_property():
    rng = np.random.default_rng(3)
    for lam in rng.uniform(0.01, 0.99, 20):
        k0 = mixing_threshold_kstar(lam)
        k = np.arange(k0, k0 + 1001)
        assert np.all(k * np.log(lam) <= -np.log(k + 1) + 1e-12)


@pytest.mark.parametrize("bad", [0.0, 1.0, -0.3, 1.5])
def test_kstar_domain(bad):
    with pytest.raises(InvalidArgument):
        mixing_threshold_kstar(bad)


def test_mixing_reference(schedule):
    report = verify_mixing_bounds(schedule, horizon=200)
    assert report.ok and report.kstar == 0
    assert schedule.beta0 == report.beta0


def test_mixing_stationary(rng):
    m = random_mdp(3, 2, rng)
    base = random_ergodic_schedule(m, rng)
    report = verify_mixing_bounds(DistributionSchedule(m, base.behavior, base.v_infinity), horizon=50)
    assert report.ok and report.c <= 1e-10


@pytest.mark.parametrize("seed", range(3))
def test_mixing_random(seed):
    rng = np.random.default_rng(50 + seed)
    sched = random_ergodic_schedule(random_mdp(4, 2, rng), rng)
    assert verify_mixing_bounds(sched, horizon=500).ok


def test_convergence_to_limit(schedule):
    kstar = mixing_threshold_kstar(second_eigenvalue_modulus(schedule.p_beta))
    k = 10 * kstar + 100
    assert np.max(np.abs(schedule.tau_at(k) - schedule.m_infinity)) < 1e-6
    g = uniform_schedule(grid_world(), v0=np.array([0.7, 0.1, 0.1, 0.1]))
    lam2 = second_eigenvalue_modulus(g.p_beta)
    k = 10 * mixing_threshold_kstar(lam2) + 100
    assert np.max(np.abs(g.tau_at(k) - g.m_infinity)) < 1e-6


def test_geometric_convergence_of_states(rng):
    sched = random_ergodic_schedule(random_mdp(4, 3, rng), rng)
    lam2 = second_eigenvalue_modulus(sched.p_beta)
    errs = np.array([np.max(np.abs(sched.v_at(k) - sched.v_infinity)) for k in range(1, 40)])
    ratios = errs / lam2 ** np.arange(1, 40)
    c = ratios[:5].max() * 10
    assert np.all(errs <= c * lam2 ** np.arange(1, 40) + 1e-15)


def test_tabulated_schedule(model):
    taus = [np.full((2, 2), 0.25), np.array([[0.1, 0.2], [0.3, 0.4]])]
    sched = TabulatedSchedule(model, taus)
    assert sched.zeta == pytest.approx(0.1)
    np.testing.assert_array_equal(sched.tau_at(10), taus[1])


def test_stationary_distribution(rng):
    p = rng.random((4, 4))
    p /= p.sum(axis=1, keepdims=True)
    v = stationary_distribution(p)
    np.testing.assert_allclose(v @ p, v, atol=1e-13)
