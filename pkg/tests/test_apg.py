import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cellfree.apg import (
    ApgParams, ApgState, PenaltyObjective, _round_association, apg_inner, apg_solve,
    gradient, initial_point, next_q, penalty_terms, project_theta, project_z, rank_score,
)
from cellfree.network import NetworkConfig, make_realization, preset, realization_from_beta
from cellfree.validation import _ball_orthant_kkt, gradient_check, grid_projection
from conftest import manual_realization, random_small

seeds = st.integers(0, 2**31 - 1)
vectors = st.lists(st.floats(-5, 5), min_size=1, max_size=8).map(np.array)


# -- penalty terms ----------------------------------------------------------------

def test_q1_zero_on_binary_z():
    rng = np.random.default_rng(0)
    cfg, r = random_small(rng)
    z = (rng.uniform(size=(5, 3)) < 0.5).astype(float)
    assert penalty_terms(np.zeros((5, 3)), z, r, cfg).q1 == 0.0


def test_q1_single_fractional_entry():
    rng = np.random.default_rng(1)
    cfg, r = random_small(rng)
    z = np.ones((5, 3))
    z[2, 1] = 0.5
    assert penalty_terms(np.zeros((5, 3)), z, r, cfg).q1 == pytest.approx(0.1875)


def test_q2_at_zero_power():
    cfg = NetworkConfig(num_aps=2, num_ues=2, max_served=1, qos_se=0.2)
    r = manual_realization([[1e-7, 1e-8], [1e-8, 1e-7]], [[5e-8, 5e-9], [5e-9, 5e-8]])
    assert penalty_terms(np.zeros((2, 2)), np.ones((2, 2)), r, cfg).q2 == pytest.approx(0.08)


def test_objective_composition():
    rng = np.random.default_rng(2)
    cfg, r = random_small(rng)
    theta, z = rng.uniform(0, 0.5, (5, 3)), rng.uniform(0, 1, (5, 3))
    t = penalty_terms(theta, z, r, cfg, chi=3.0, mu=(1.0, 2.0, 3.0, 4.0))
    assert t.f == pytest.approx(t.h + 3.0 * (t.q1 + 2 * t.q2 + 3 * t.q3 + 4 * t.q4))


@settings(max_examples=50)
@given(seeds)
def test_penalties_nonnegative(seed):
    rng = np.random.default_rng(seed)
    cfg, r = random_small(rng, qos_se=float(rng.uniform(0, 5)),
                          fronthaul_cap=float(rng.uniform(0.1, 10)))
    t = penalty_terms(rng.uniform(0, 1, (5, 3)), rng.uniform(0, 1, (5, 3)), r, cfg)
    assert min(t.q1, t.q2, t.q3, t.q4) >= 0


# -- gradient -----------------------------------------------------------------------

def test_gradient_vanishes_in_theta_at_zero_power():
    rng = np.random.default_rng(3)
    cfg, r = random_small(rng)
    g = gradient(np.zeros((5, 3)), rng.uniform(0, 1, (5, 3)), r, cfg)
    assert np.all(g[:15] == 0)


def test_gradient_equals_sum_se_gradient_when_penalties_flat():
    # z = 1/sqrt(2) is a stationary point of z^2 - z^4 and all hinges are slack
    rng = np.random.default_rng(4)
    cfg, r = random_small(rng, qos_se=0.0, fronthaul_cap=1e6)
    theta = rng.uniform(0, 0.6, (5, 3))
    z = np.full((5, 3), 1 / math.sqrt(2))
    g = gradient(theta, z, r, cfg, chi=7.0)
    h_only = gradient(theta, z, r, cfg, chi=0.0)
    np.testing.assert_array_equal(g[:15], h_only[:15])
    np.testing.assert_allclose(g[15:], 0.0, atol=1e-12)  # 2z - 4z^3 up to roundoff


def test_gradient_matches_finite_differences():
    res = gradient_check(num_instances=20, seed=11)
    assert res.passed, res.line()


@settings(max_examples=20, deadline=None)
@given(seeds)
def test_fixed_association_gradient_matches_fd(seed):
    rng = np.random.default_rng(seed)
    cfg, r = random_small(rng)
    a = np.ones((5, 3))
    a[rng.uniform(size=(5, 3)) < 0.3] = 0.0
    obj = PenaltyObjective(r, cfg, chi=2.0, fixed_assoc=a, fronthaul=True)
    theta = np.where(a > 0, rng.uniform(0.05, 0.5, (5, 3)), 0.0)
    v = obj.join(theta, np.sqrt(a))
    g = obj.gradient(v)
    fd = np.zeros(15)
    for i in range(15):
        e = np.zeros_like(v)
        e[i] = 1e-6
        fd[i] = (obj.value(v + e) - obj.value(v - e)) / 2e-6
    fd = np.where(a.ravel() > 0, fd, 0.0)
    assert np.max(np.abs(g[:15] - fd)) <= 1e-5 * max(1.0, np.max(np.abs(g)))
    assert np.all(g[15:] == 0)


# -- projections ------------------------------------------------------------------

def test_project_theta_examples():
    np.testing.assert_allclose(project_theta([0.3, 0.4]), [0.3, 0.4])
    np.testing.assert_allclose(project_theta([3.0, 4.0]), [0.6, 0.8])
    np.testing.assert_allclose(project_theta([-1.0, 2.0]), [0.0, 1.0])


def test_project_z_examples():
    np.testing.assert_allclose(project_z([2.0, 2.0], 1), [1 / math.sqrt(2)] * 2, atol=1e-4)
    inside = np.array([0.2, 0.9, 0.0])
    np.testing.assert_array_equal(project_z(inside, 2), inside)
    cube = np.array([1.0, 0.7, 1.0, 0.3])
    np.testing.assert_array_equal(project_z(cube, 4), cube)


def test_project_z_is_not_the_exact_projection():
    # composed projection differs from the nearest point of the intersection
    y = np.array([3.0, 0.4])
    p = project_z(y, 2)
    np.testing.assert_allclose(p, [1.0, 0.4 * math.sqrt(2 / 9.16)])
    exact = np.array([1.0, 0.4])   # box projection, already inside the ball
    assert np.linalg.norm(y - exact) < np.linalg.norm(y - p)


@given(vectors)
def test_project_theta_matches_kkt_oracle(y):
    # near-ties between active sets make the oracle itself ambiguous below 1e-7
    np.testing.assert_allclose(project_theta(y), _ball_orthant_kkt(y), atol=1e-6)


@settings(max_examples=25, deadline=None)
@given(st.tuples(st.floats(-2, 2), st.floats(-2, 2)))
def test_project_theta_matches_grid_oracle(y):
    # the projection must beat every grid point, and the best grid point is
    # at most one cell diagonal farther away
    y = np.array(y)
    p, g = project_theta(y), grid_projection(y)
    assert np.linalg.norm(y - p) <= np.linalg.norm(y - g) + 1e-12
    assert np.linalg.norm(y - g) - np.linalg.norm(y - p) <= 1e-3 * math.sqrt(2)


@given(vectors, st.integers(1, 8))
def test_projection_postconditions(y, max_served):
    p = project_theta(y)
    assert np.all(p >= 0) and np.sum(p**2) <= 1 + 1e-12
    np.testing.assert_allclose(project_theta(p), p, atol=1e-15)
    z = project_z(y, max_served)
    assert np.all((z >= 0) & (z <= 1)) and np.sum(z**2) <= max_served + 1e-12
    np.testing.assert_allclose(project_z(z, max_served), z, atol=1e-15)


# -- extrapolation and averaging ----------------------------------------------------------

def test_q_recursion():
    assert next_q(1.0) == pytest.approx((1 + math.sqrt(5)) / 2)
    q = 1.0
    for n in range(1, 101):
        q_new = next_q(q)
        assert q_new > q and q_new >= (n + 2) / 2
        q = q_new


def _stepwise(objective, v0, params, steps):
    state = ApgState.start(objective.project(v0), objective)
    one = ApgParams(**{**params.__dict__, "max_inner": 1})
    for _ in range(steps):
        apg_inner(state, objective, one)
        yield state


def _in_set(v, obj, max_served):
    theta, z = obj.split(v)
    return (np.all(theta >= 0) and np.all(np.sum(theta**2, axis=1) <= 1 + 1e-12)
            and np.all((z >= 0) & (z <= 1))
            and np.all(np.sum(z**2, axis=1) <= max_served + 1e-12))


def test_iterates_stay_feasible_and_average_is_bracketed():
    cfg = preset("small-25x7")
    r = make_realization(cfg, 0)
    params = ApgParams()
    obj = PenaltyObjective(r, cfg)
    v0 = obj.join(*initial_point(r, cfg, ApgParams(random_init=True), rng=0))
    for state in _stepwise(obj, v0, params, 60):
        assert _in_set(state.v, obj, cfg.max_served)
        assert min(state.f_hist) - 1e-9 <= state.c <= max(state.f_hist) + 1e-9


def test_zeta_zero_is_monotone_acceptance():
    cfg = preset("small-25x7")
    r = make_realization(cfg, 1)
    params = ApgParams(zeta=0.0)
    obj = PenaltyObjective(r, cfg)
    v0 = obj.join(*initial_point(r, cfg, ApgParams(random_init=True), rng=1))
    for state in _stepwise(obj, v0, params, 40):
        assert state.c == pytest.approx(obj.value(state.v), rel=1e-12)


def test_params_validation():
    with pytest.raises(ValueError):
        ApgParams(zeta=1.0)
    with pytest.raises(ValueError):
        ApgParams(delta=1.0)
    with pytest.raises(ValueError):
        ApgParams(mu=(1.0, 2.0, 3.0))


# -- rounding and the full solver ------------------------------------------------------

def test_rank_score_rows():
    s = rank_score(np.array([[3.0, 1.0, 2.0], [0.0, 5.0, 5.0]]))
    np.testing.assert_allclose(s, [[1, -1, 0], [-1, 1, 0]])


def test_rounding_repairs_cap_and_coverage():
    beta = np.array([[3.0, 2.0, 1.0], [1.0, 1.0, 0.5]])
    z = np.array([[1.0, 1.0, 1.0], [0.0, 0.0, 0.0]])
    a = _round_association(z, beta, max_served=2)
    assert a.sum(axis=1).max() <= 2 and a.sum(axis=0).min() >= 1
    assert a.tolist() == [[1, 1, 0], [0, 0, 1]]


def test_single_link_full_power():
    # with one UE the AP zero-forces it, so the link is noise limited
    cfg = NetworkConfig(num_aps=1, num_ues=1, max_served=1, qos_se=0.01)
    r = realization_from_beta([[1e-7]], cfg)
    assert r.delta[0, 0] == 1
    out = apg_solve(r, cfg)
    assert out.a.tolist() == [[1.0]]
    assert out.theta[0, 0] == pytest.approx(1.0, abs=1e-6)
    assert out.feasible


def test_apg_deterministic_and_feasible():
    cfg = preset("small-25x7")
    r = make_realization(cfg, 5)
    o1, o2 = apg_solve(r, cfg), apg_solve(r, cfg)
    np.testing.assert_array_equal(o1.se_per_ue, o2.se_per_ue)
    assert o1.feasible and o1.converged
    assert set(np.unique(o1.a)) <= {0.0, 1.0}
    assert np.all(o1.theta[o1.a == 0] == 0)


def test_apg_accepts_explicit_init():
    cfg = preset("small-25x7")
    r = make_realization(cfg, 6)
    theta, z = initial_point(r, cfg, ApgParams(random_init=True), rng=3)
    out = apg_solve(r, cfg, init=(theta, z))
    assert out.feasibility.passed["power"] and out.feasibility.passed["coverage"]
