import math

import clarabel
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import sparse

from cellfree.apg import project_theta
from cellfree.network import NetworkConfig, make_realization, preset, realization_from_beta
from cellfree.sca import (
    ScaIterate, ScaParams, convexified_constraints, fronthaul_surrogate, initial_iterate,
    integrality_gap, interference_linearized, q_hat, sca_solve, se_relaxed, solve_subproblem,
    surrogate_se_lower, surrogate_se_upper,
)
from cellfree.se import link_coefficients, se_per_ue, signal_and_interference
from cellfree.validation import exhaustive_oracle, surrogate_check
from conftest import random_small

seeds = st.integers(0, 2**31 - 1)


def expansion(rng, cfg, r):
    theta0 = project_theta(rng.uniform(0.05, 1.0, (cfg.num_aps, cfg.num_ues))) * 0.95
    s0, v0 = signal_and_interference(theta0, r, cfg)
    return theta0, np.sqrt(s0), v0


# -- SE surrogates ------------------------------------------------------------------

@settings(max_examples=30)
@given(seeds)
def test_lower_surrogate_tight_at_expansion(seed):
    rng = np.random.default_rng(seed)
    cfg, r = random_small(rng)
    theta0, u0, v0 = expansion(rng, cfg, r)
    np.testing.assert_allclose(surrogate_se_lower(theta0, u0, v0, r, cfg),
                               se_per_ue(theta0, r, cfg), rtol=0, atol=1e-9)


def test_lower_surrogate_below_se_on_samples():
    rng = np.random.default_rng(7)
    cfg, r = random_small(rng)
    theta0, u0, v0 = expansion(rng, cfg, r)
    for _ in range(1000):
        theta = project_theta(theta0 + rng.normal(0, 0.3, theta0.shape))
        assert np.all(surrogate_se_lower(theta, u0, v0, r, cfg)
                      <= se_per_ue(theta, r, cfg) + 1e-9)


def test_lower_surrogate_degenerate_expansion():
    # with U0 = 0 the bound is identically zero, so it stays finite
    rng = np.random.default_rng(8)
    cfg, r = random_small(rng)
    theta = rng.uniform(0, 0.4, (5, 3))
    val = surrogate_se_lower(theta, np.zeros(3), np.full(3, 2.0), r, cfg)
    assert np.all(np.isfinite(val))
    np.testing.assert_array_equal(val, 0.0)


@settings(max_examples=30)
@given(seeds)
def test_upper_surrogate_tight_at_expansion(seed):
    rng = np.random.default_rng(seed)
    cfg, r = random_small(rng)
    theta0, u0, v0 = expansion(rng, cfg, r)
    np.testing.assert_allclose(surrogate_se_upper(theta0, v0, u0, v0, r, cfg),
                               se_relaxed(theta0, v0, r, cfg), rtol=0, atol=1e-9)


def test_upper_surrogate_above_relaxed_se_on_samples():
    rng = np.random.default_rng(9)
    cfg, r = random_small(rng)
    theta0, u0, v0 = expansion(rng, cfg, r)
    for _ in range(1000):
        theta = project_theta(theta0 + rng.normal(0, 0.3, theta0.shape))
        w = v0 * np.exp(rng.normal(0, 1, 3))
        w = np.maximum(w, 1.0)
        assert np.all(surrogate_se_upper(theta, w, u0, v0, r, cfg)
                      >= se_relaxed(theta, w, r, cfg) - 1e-9)


def test_upper_surrogate_at_zero_power():
    rng = np.random.default_rng(10)
    cfg, r = random_small(rng)
    c = link_coefficients(r, cfg)
    w0 = np.array([1.5, 3.0, 7.0])
    for w in (w0, np.array([1.0, 4.0, 20.0])):
        val = surrogate_se_upper(np.zeros((5, 3)), w, np.zeros(3), w0, r, cfg)
        expect = c.prelog * (np.log(w0) + w / w0 - 1 - np.log(w)) / math.log(2)
        np.testing.assert_allclose(val, expect, rtol=1e-12)
        assert np.all(val >= 0)
    np.testing.assert_allclose(surrogate_se_upper(np.zeros((5, 3)), w0, np.zeros(3), w0, r, cfg),
                               0.0, atol=1e-15)


def test_surrogate_validation_check_passes():
    res = surrogate_check(num_instances=10)
    assert res.passed, res.line()


# -- integrality, interference and fronthaul surrogates ----------------------------

@given(st.lists(st.floats(0, 1), min_size=1, max_size=12),
       st.lists(st.floats(0, 1), min_size=1, max_size=12))
def test_q_hat_majorizes(a, a0):
    n = min(len(a), len(a0))
    a, a0 = np.array(a[:n]), np.array(a0[:n])
    assert q_hat(a0, a0) == pytest.approx(integrality_gap(a0), abs=1e-12)
    assert q_hat(a, a0) >= integrality_gap(a) - 1e-12


def test_integrality_gap_examples():
    assert integrality_gap([0.0, 1.0, 1.0]) == 0.0
    assert integrality_gap([0.5, 0.5]) == 0.5


@settings(max_examples=30)
@given(seeds)
def test_interference_linearization(seed):
    rng = np.random.default_rng(seed)
    cfg, r = random_small(rng)
    theta0 = rng.uniform(0, 0.6, (5, 3))
    _, v0 = signal_and_interference(theta0, r, cfg)
    np.testing.assert_allclose(interference_linearized(theta0, theta0, r, cfg), v0, rtol=1e-12)
    theta = rng.uniform(0, 0.6, (5, 3))
    _, v = signal_and_interference(theta, r, cfg)
    assert np.all(interference_linearized(theta, theta0, r, cfg) <= v * (1 + 1e-12))


@settings(max_examples=50)
@given(seeds)
def test_fronthaul_surrogate(seed):
    rng = np.random.default_rng(seed)
    a0, a = rng.uniform(0, 1, (2, 4, 3))
    t0, t = rng.uniform(0, 8, (2, 3))
    np.testing.assert_allclose(fronthaul_surrogate(a0, t0, a0, t0), a0 @ t0, rtol=1e-12)
    assert np.all(fronthaul_surrogate(a, t, a0, t0) >= a @ t - 1e-9)


# -- subproblem -----------------------------------------------------------------------

def small_iterate(r, cfg, a, theta):
    se = se_per_ue(theta, r, cfg)
    _, v = signal_and_interference(theta, r, cfg)
    return ScaIterate(a=np.asarray(a, float), theta=theta, t=se.copy(), t_hat=se.copy(), w_hat=v)


def test_single_link_subproblem_reaches_full_power():
    # at low SNR the minorant keeps increasing up to the power ball
    cfg = NetworkConfig(num_aps=1, num_ues=1, max_served=1, qos_se=0.0)
    r = realization_from_beta([[1e-12]], cfg)
    it = small_iterate(r, cfg, [[1.0]], np.array([[0.5]]))
    nxt, _ = solve_subproblem(convexified_constraints(it, r, cfg))
    assert nxt.a[0, 0] == pytest.approx(1.0, abs=1e-5)
    assert nxt.theta[0, 0] == pytest.approx(1.0, abs=1e-3)


def test_single_link_high_snr_moves_up():
    # at high SINR the minorant is sharply curved, so one step is short but upward
    cfg = NetworkConfig(num_aps=1, num_ues=1, max_served=1, qos_se=0.0)
    r = realization_from_beta([[1e-9]], cfg)
    it = small_iterate(r, cfg, [[1.0]], np.array([[0.5]]))
    nxt, _ = solve_subproblem(convexified_constraints(it, r, cfg))
    assert 0.5 < nxt.theta[0, 0] < 1.0
    assert se_per_ue(nxt.theta, r, cfg)[0] > se_per_ue(it.theta, r, cfg)[0]


def test_expansion_point_feasible_and_solution_within_tolerance():
    cfg = preset("small-25x7")
    r = make_realization(cfg, 2)
    params = ScaParams()
    it = initial_iterate(r, cfg, params)
    for _ in range(3):
        sub = convexified_constraints(it, r, cfg, params)
        x0 = sub.point(it, r, cfg)
        if it.iter > 0:
            # the previous solution is feasible for the next subproblem
            assert sub.max_violation(x0) <= 1e-6
        it, x = solve_subproblem(sub, it)
        assert sub.max_violation(x) <= 1e-6
        assert sub.objective(x) <= sub.objective(x0) + 1e-6 * max(1.0, abs(sub.objective(x0)))


def test_subproblem_solution_has_duality_certificate():
    # a dual point in the dual cone with zero gap proves optimality (weak duality)
    rng = np.random.default_rng(12)
    cfg, r = random_small(rng, num_aps=2, num_ues=2, max_served=1)
    theta = np.array([[0.6, 0.0], [0.0, 0.6]])
    it = small_iterate(r, cfg, [[0.7, 0.3], [0.3, 0.7]], theta)
    sub = convexified_constraints(it, r, cfg)
    _, x = solve_subproblem(sub, it)
    settings_ = clarabel.DefaultSettings()
    settings_.verbose = False
    n = sub.layout.n
    sol = clarabel.DefaultSolver(sparse.csc_matrix((n, n)), sub.q, sub.A, sub.b,
                                 sub.cones, settings_).solve()
    z = np.asarray(sol.z)
    scale = max(1.0, np.max(np.abs(sub.q)))
    assert np.max(np.abs(sub.q + sub.A.T @ z)) <= 1e-6 * scale
    pos = 0
    for kind, dim in sub.cone_dims:
        blk = z[pos:pos + dim]
        if kind == "nonneg":
            assert np.all(blk >= -1e-9)
        elif kind == "soc":
            assert np.linalg.norm(blk[1:]) <= blk[0] + 1e-9
        else:  # dual exponential cone: u < 0, w >= -u exp(v/u - 1)
            u, v, w = blk
            assert u <= 1e-9 and w >= -u * math.exp(v / u - 1) - 1e-7
        pos += dim
    primal, dual = sub.q @ x, -sub.b @ z
    assert primal - dual <= 1e-6 * max(1.0, abs(primal))
    assert sub.max_violation(x) <= 1e-6


# -- outer loop -----------------------------------------------------------------------

@pytest.mark.parametrize("index", [0, 3])
def test_trace_monotone_and_terminates(index):
    cfg = preset("small-25x7")
    out = sca_solve(make_realization(cfg, index), cfg)
    trace = np.array(out.objective_trace)
    assert len(trace) <= 50
    assert np.all(np.diff(trace) <= 1e-6 * np.maximum(1.0, np.abs(trace[:-1])))
    assert out.converged and out.feasible


def test_outcome_is_binary_and_pinned():
    cfg = preset("small-25x7")
    out = sca_solve(make_realization(cfg, 1), cfg)
    assert set(np.unique(out.a)) <= {0.0, 1.0}
    assert np.all(out.theta[out.a == 0] == 0)
    assert out.info["integrality_gap"] <= 5e-5


def test_polish_never_lowers_sum_se():
    cfg = preset("small-25x7")
    for i in range(3):
        r = make_realization(cfg, i)
        plain = sca_solve(r, cfg, ScaParams(polish=False))
        polished = sca_solve(r, cfg)
        assert polished.sum_se >= plain.sum_se - 1e-12


@pytest.mark.parametrize("seed", [21, 22])
def test_two_by_two_feasible_and_bounded_by_oracle(seed):
    # the grid oracle can miss the optimum by a little, never by much
    rng = np.random.default_rng(seed)
    cfg, r = random_small(rng, num_aps=2, num_ues=2, max_served=1)
    ref, _, _ = exhaustive_oracle(r, cfg)
    assert math.isfinite(ref)
    out = sca_solve(r, cfg)
    assert out.feasible
    assert out.sum_se <= 1.02 * ref


def test_params_validation():
    with pytest.raises(ValueError):
        ScaParams(lam=0.0)
    with pytest.raises(ValueError):
        ScaParams(max_iters=0)
    with pytest.raises(ValueError):
        ScaParams(init="random")
    with pytest.raises(ValueError):
        ScaParams(qos_margin=-0.1)
