"""FULL and HEU reference schemes plus fronthaul SE capping."""

from __future__ import annotations

import math
import time

import numpy as np

from .apg import ApgParams, PenaltyObjective, project_theta, run_penalty_schedule
from .network import NetworkConfig, Realization
from .se import FULL_EXEMPT, cap_fronthaul, make_outcome, se_per_ue


def full_associate(cfg: NetworkConfig) -> np.ndarray:
    """Every AP serves every UE."""
    return np.ones((cfg.num_aps, cfg.num_ues))


def heu_associate(r: Realization, cfg: NetworkConfig, order=None) -> np.ndarray:
    """Strongest-gain heuristic association.

    Phase one walks the UEs (index order unless ``order`` is given) and
    gives each its strongest AP among those not yet picked in this phase, so
    every UE is covered. When UEs outnumber APs the distinctness requirement
    is dropped once all APs are used. Phase two lets each AP top up to
    ``max_served`` UEs with its strongest remaining ones.
    """
    beta = np.asarray(r.beta, float)
    M, K = beta.shape
    a = np.zeros((M, K))
    taken = np.zeros(M, dtype=bool)
    for k in (range(K) if order is None else order):
        if taken.all():
            taken[:] = False
        candidates = np.flatnonzero(~taken)
        m = candidates[np.argmax(beta[candidates, k])]
        a[m, k] = 1.0
        taken[m] = True
    for m in range(M):
        room = cfg.max_served - int(a[m].sum())
        if room <= 0:
            continue
        free = np.flatnonzero(a[m] == 0)
        best = free[np.argsort(-beta[m, free], kind="stable")][:room]
        a[m, best] = 1.0
    return a


def optimize_power_fixed_assoc(a, r: Realization, cfg: NetworkConfig,
                               params: ApgParams | None = None, theta0=None):
    """Power control for a frozen binary association with the APG machinery.

    Only the sum SE and the QoS penalty are active; ``theta`` stays zero off
    the association. Returns ``(theta, info)``.
    """
    params = params or ApgParams()
    a = np.asarray(a, float)
    if theta0 is None:
        served = np.maximum(a.sum(axis=1, keepdims=True), 1.0)
        theta0 = a / np.sqrt(served)
    objective = PenaltyObjective(r, cfg, mu=params.mu, fixed_assoc=a)
    v, info = run_penalty_schedule(objective, objective.join(theta0, np.sqrt(a)), params)
    theta, _ = objective.split(v)
    return project_theta(np.where(a > 0.5, theta, 0.0)), info


def _baseline(name, a, r, cfg, params, exempt, cap):
    t0 = time.perf_counter()
    theta, info = optimize_power_fixed_assoc(a, r, cfg, params)
    raw = se_per_ue(theta, r, cfg)
    se = cap_fronthaul(raw, a, cfg) if cap else raw
    return make_outcome(
        name, theta, a, r, cfg, exempt=exempt, se=se,
        iterations=info["inner_iterations"],
        wall_time=time.perf_counter() - t0,
        objective_trace=info["trace"],
        converged=info["penalties_ok"],
        info=dict(se_uncapped=raw, sum_se_uncapped=float(raw.sum()),
                  outer_rounds=info["outer_rounds"]),
    )


def full_solve(r: Realization, cfg: NetworkConfig, params: ApgParams | None = None):
    """FULL baseline: all-ones association, fronthaul/cap/coverage exempt."""
    return _baseline("FULL", full_associate(cfg), r, cfg, params, FULL_EXEMPT, cap=False)


def heu_solve(r: Realization, cfg: NetworkConfig, params: ApgParams | None = None,
              cap: bool = True):
    """HEU baseline: heuristic association, optimized power, capped SEs."""
    return _baseline("HEU", heu_associate(r, cfg), r, cfg, params, (), cap=cap)


def uniform_power(a, max_served=None) -> np.ndarray:
    """``theta = a / sqrt(K_hat)``, inside the power ball whenever rows sum to <= K_hat."""
    a = np.asarray(a, float)
    if max_served is None:
        max_served = max(1, int(a.sum(axis=1).max()))
    return a / math.sqrt(max_served)
