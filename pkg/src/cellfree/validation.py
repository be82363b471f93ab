"""Self-contained numerical checks run by ``python3 -m cellfree validate``.

Each check returns a ``CheckResult``; none of them needs files or a network.
The same checks back the acceptance tests, so the thresholds here are the
acceptance thresholds.
"""

from __future__ import annotations

import itertools
import math
import time
from dataclasses import dataclass

import numpy as np

from .apg import PenaltyObjective, project_theta, project_z
from .network import NetworkConfig, channel_estimate_variance, realization_from_beta, \
    simulate_mmse_estimate
from .sca import integrality_gap, q_hat, surrogate_se_lower, surrogate_se_upper
from .se import se_per_ue, signal_and_interference


@dataclass
class CheckResult:
    name: str
    passed: bool
    value: float
    threshold: float
    seconds: float
    detail: str = ""

    def line(self) -> str:
        mark = "PASS" if self.passed else "FAIL"
        return (f"[{mark}] {self.name}: {self.value:.3e} (threshold {self.threshold:.1e}, "
                f"{self.seconds:.2f} s){' ' + self.detail if self.detail else ''}")


def random_instance(rng, num_aps=5, num_ues=3, max_served=2, **overrides):
    """Small random realization with log-uniform gains over three decades."""
    cfg = NetworkConfig(num_aps=num_aps, num_ues=num_ues, max_served=max_served,
                        **overrides)
    beta = 10 ** rng.uniform(-9.5, -6.5, size=(num_aps, num_ues))
    return cfg, realization_from_beta(beta, cfg)


def _interior_point(rng, cfg):
    M, K = cfg.num_aps, cfg.num_ues
    theta = project_theta(rng.uniform(0.05, 1.0, (M, K))) * 0.95
    z = rng.uniform(0.05, 0.95, (M, K))
    z = project_z(z, cfg.max_served) * 0.98
    return theta, z


def gradient_check(num_instances=50, h=1e-6, seed=0, threshold=1e-5) -> CheckResult:
    """Analytic penalty gradient against central differences.

    The error is normwise, ``max|g - g_fd| / max(max|g|, 1)``: single
    coordinates near zero carry the roundoff of the whole penalty value and
    would dominate a coordinatewise ratio.
    Points are drawn away from the hinge kinks so both sides of every
    difference see the same active set.
    """
    t0 = time.perf_counter()
    rng = np.random.default_rng(seed)
    worst = 0.0
    done = 0
    while done < num_instances:
        cfg, r = random_instance(rng)
        theta, z = _interior_point(rng, cfg)
        obj = PenaltyObjective(r, cfg, chi=float(rng.uniform(0.5, 4.0)))
        v = obj.join(theta, z)
        if _near_kink(obj, v, r, 10 * h):
            continue
        g = obj.gradient(v)
        fd = np.empty_like(v)
        for i in range(v.size):
            e = np.zeros_like(v)
            e[i] = h
            fd[i] = (obj.value(v + e) - obj.value(v - e)) / (2 * h)
        worst = max(worst, float(np.max(np.abs(g - fd)) / max(np.max(np.abs(g)), 1.0)))
        done += 1
    return CheckResult("gradient vs central differences", worst <= threshold, worst,
                       threshold, time.perf_counter() - t0, f"{num_instances} instances")


def _near_kink(obj: PenaltyObjective, v, r, margin) -> bool:
    """True when some hinge argument lies within ``1e3 * margin`` of zero."""
    theta, z = obj.split(v)
    se = se_per_ue(theta, r, obj.cfg)
    z2 = z**2
    args = [obj.qos - se, 1.0 - z2.sum(axis=0), (theta**2 - z2).ravel(),
            z2 @ se - obj.cfg.fronthaul_cap]
    return any(np.min(np.abs(a)) < 1e3 * margin for a in args)


def mmse_check(num_samples=100_000, seed=1, threshold=0.02) -> CheckResult:
    """Monte-Carlo estimate power against the closed form on a 3 x 3 grid."""
    t0 = time.perf_counter()
    rng = np.random.default_rng(seed)
    worst = 0.0
    for beta, snr in itertools.product((0.1, 1.0, 10.0), (0.5, 1.0, 10.0)):
        tau_p = 1
        rho_p = snr / tau_p
        sim = simulate_mmse_estimate(beta, rho_p, tau_p, num_samples, rng=rng)
        exact = float(channel_estimate_variance(beta, rho_p, tau_p))
        worst = max(worst, abs(sim - exact) / exact)
    return CheckResult("MMSE estimate variance", worst <= threshold, worst, threshold,
                       time.perf_counter() - t0, f"{num_samples} samples per point")


def _ball_orthant_kkt(y):
    """Exact projection onto ``{x >= 0, ||x|| <= 1}`` by active-set enumeration."""
    y = np.asarray(y, float)
    best, best_d = None, math.inf
    n = y.size
    for support in itertools.product((False, True), repeat=n):
        s = np.array(support)
        x = np.where(s, y, 0.0)
        if np.any(x < 0):
            continue
        norm = np.linalg.norm(x)
        if norm > 1:
            x = x / norm
        d = np.linalg.norm(x - y)
        if d < best_d - 1e-15:
            best, best_d = x, d
    return best


def grid_projection(y, step=1e-3):
    """Nearest point of ``{x >= 0, ||x|| <= 1}`` in 2-D among grid points of spacing ``step``."""
    axis = np.arange(0.0, 1.0 + step / 2, step)
    X, Y = np.meshgrid(axis, axis, indexing="ij")
    pts = np.stack([X.ravel(), Y.ravel()], axis=1)
    pts = pts[np.sum(pts**2, axis=1) <= 1.0]
    return pts[np.argmin(np.sum((pts - np.asarray(y, float)) ** 2, axis=1))]


def _ball_orthant(x, radius):
    x = np.maximum(x, 0.0)
    norm = np.linalg.norm(x)
    return x * (radius / norm) if norm > radius else x


def alternating_projection(y, max_served, rounds=500):
    """Alternate the exact ball-orthant and box projections, ball first."""
    x = np.asarray(y, float)
    radius = math.sqrt(max_served)
    for _ in range(rounds):
        x = np.minimum(_ball_orthant(x, radius), 1.0)
    return x


def dykstra_projection(y, max_served, rounds=500):
    """Exact projection onto ``{0 <= x <= 1, ||x||^2 <= K_hat}`` by Dykstra's method."""
    x = np.asarray(y, float).copy()
    radius = math.sqrt(max_served)
    p = np.zeros_like(x)
    q = np.zeros_like(x)
    for _ in range(rounds):
        u = _ball_orthant(x + p, radius)
        p = x + p - u
        x = np.minimum(u + q, 1.0)
        q = u + q - x
    return x


def projection_check(num_trials=200, seed=2, threshold=1e-6,
                     approx_threshold=1e-2) -> CheckResult:
    """``project_theta`` against exact KKT enumeration over all active sets.

    ``project_z`` is the composition of two projections, so it is compared
    with 500 rounds of alternating projections at the looser tolerance. The
    distance to the exact projection (Dykstra) is reported but not judged:
    the composition is an approximation of it.
    """
    t0 = time.perf_counter()
    rng = np.random.default_rng(seed)
    worst_exact = 0.0
    for _ in range(num_trials):
        y = rng.normal(0.0, 1.0, size=int(rng.integers(2, 6)))
        worst_exact = max(worst_exact,
                          float(np.max(np.abs(project_theta(y) - _ball_orthant_kkt(y)))))
    worst_approx = 0.0
    worst_exact_z = 0.0
    for _ in range(num_trials):
        k = int(rng.integers(2, 7))
        max_served = int(rng.integers(1, k + 1))
        y = rng.normal(0.5, 0.7, size=k)
        pz = project_z(y, max_served)
        worst_approx = max(worst_approx, float(np.max(np.abs(
            pz - alternating_projection(y, max_served)))))
        worst_exact_z = max(worst_exact_z, float(np.max(np.abs(
            pz - dykstra_projection(y, max_served)))))
    ok = worst_exact <= threshold and worst_approx <= approx_threshold
    return CheckResult("projection oracles", ok, worst_exact, threshold,
                       time.perf_counter() - t0,
                       f"project_z vs alternating {worst_approx:.1e} (<= {approx_threshold:.0e}), "
                       f"vs exact {worst_exact_z:.2f} (not judged)")


def surrogate_check(num_instances=30, seed=3, threshold=1e-8) -> CheckResult:
    """SCA surrogates: tight at the expansion point and on the correct side elsewhere."""
    t0 = time.perf_counter()
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(num_instances):
        cfg, r = random_instance(rng)
        theta0, a0 = _interior_point(rng, cfg)
        s0, v0 = signal_and_interference(theta0, r, cfg)
        u0 = np.sqrt(s0)
        se0 = se_per_ue(theta0, r, cfg)
        worst = max(worst, float(np.max(np.abs(
            surrogate_se_lower(theta0, u0, v0, r, cfg) - se0))))
        worst = max(worst, float(np.max(np.abs(
            surrogate_se_upper(theta0, v0, u0, v0, r, cfg) - se0))))
        worst = max(worst, abs(q_hat(a0, a0) - integrality_gap(a0)))
        theta = project_theta(theta0 + rng.normal(0, 0.2, theta0.shape))
        se = se_per_ue(theta, r, cfg)
        _, v = signal_and_interference(theta, r, cfg)
        worst = max(worst, float(np.max(surrogate_se_lower(theta, u0, v0, r, cfg) - se)))
        worst = max(worst, float(np.max(se - surrogate_se_upper(theta, v, u0, v0, r, cfg))))
        a = np.clip(a0 + rng.normal(0, 0.2, a0.shape), 0, 1)
        worst = max(worst, integrality_gap(a) - q_hat(a, a0))
    return CheckResult("SCA surrogate tightness and bounds", worst <= threshold, worst,
                       threshold, time.perf_counter() - t0, f"{num_instances} instances")


def feasible_associations(num_aps, num_ues, max_served):
    """All binary ``a`` with row sums ``<= max_served`` and column sums ``>= 1``."""
    for bits in itertools.product((0.0, 1.0), repeat=num_aps * num_ues):
        a = np.array(bits).reshape(num_aps, num_ues)
        if a.sum(axis=1).max() <= max_served and a.sum(axis=0).min() >= 1:
            yield a


def exhaustive_oracle(r, cfg: NetworkConfig, step=0.02):
    """Best feasible sum SE over all associations and a power grid.

    Every active link takes amplitudes ``0, step, ..., 1``; grid points
    outside the per-AP power ball, below the QoS floor or above the
    fronthaul cap are discarded. Returns ``(sum_se, theta, a)`` with
    ``sum_se = -inf`` when no grid point is feasible. Cost grows as
    ``(1/step)**links``, so this is meant for two or three links.
    """
    levels = np.arange(0.0, 1.0 + step / 2, step)
    best = (-math.inf, None, None)
    for a in feasible_associations(cfg.num_aps, cfg.num_ues, cfg.max_served):
        links = np.argwhere(a > 0)
        grids = np.meshgrid(*([levels] * len(links)), indexing="ij")
        pts = np.stack([g.ravel() for g in grids], axis=1)
        theta = np.zeros((len(pts),) + a.shape)
        theta[:, links[:, 0], links[:, 1]] = pts
        ok = np.all(np.sum(theta**2, axis=2) <= 1.0 + 1e-12, axis=1)
        theta = theta[ok]
        se = np.array([se_per_ue(t, r, cfg) for t in theta])
        load = se @ a.T
        ok = np.all(se >= cfg.qos_se, axis=1) & np.all(load <= cfg.fronthaul_cap, axis=1)
        if not ok.any():
            continue
        tot = se[ok].sum(axis=1)
        i = int(np.argmax(tot))
        if tot[i] > best[0]:
            best = (float(tot[i]), theta[ok][i], a)
    return best


def oracle_check(num_instances=20, seed=4, threshold=0.95, step=0.02) -> CheckResult:
    """SCA and APG against the exhaustive oracle on M=2, K=2, K_hat=1."""
    from .apg import apg_solve
    from .sca import sca_solve

    t0 = time.perf_counter()
    rng = np.random.default_rng(seed)
    worst = math.inf
    done = 0
    while done < num_instances:
        cfg, r = random_instance(rng, num_aps=2, num_ues=2, max_served=1)
        ref, _, _ = exhaustive_oracle(r, cfg, step)
        if not math.isfinite(ref):
            continue  # QoS unreachable on this draw
        for out in (sca_solve(r, cfg), apg_solve(r, cfg)):
            worst = min(worst, out.sum_se / ref)
        done += 1
    return CheckResult("SCA and APG vs exhaustive oracle (M=2, K=2)", worst >= threshold,
                       worst, threshold, time.perf_counter() - t0,
                       f"worst ratio over {num_instances} instances")


CHECKS = {
    "gradient": gradient_check,
    "projection": projection_check,
    "mmse": mmse_check,
    "surrogate": surrogate_check,
    "oracle": oracle_check,
}


# The oracle check runs both solvers on every instance; it is opt-in.
DEFAULT_CHECKS = ("gradient", "projection", "mmse", "surrogate")


def run_all(names=None) -> list:
    return [CHECKS[n]() for n in (names or DEFAULT_CHECKS)]


__all__ = ["CheckResult", "CHECKS", "DEFAULT_CHECKS", "run_all", "gradient_check", "projection_check",
           "mmse_check", "surrogate_check", "oracle_check", "exhaustive_oracle", "feasible_associations",
           "alternating_projection", "random_instance"]
