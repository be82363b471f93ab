"""Penalty-based nonmonotone accelerated projected gradient (APG) solver.

The association is relaxed through ``a = z**2`` with ``z`` in ``[0, 1]``.
Integrality, QoS, coverage/link and fronthaul constraints move into squared
hinge penalties weighted by ``chi * mu_i``; only the per-AP power ball, the
box on ``z`` and the per-AP ``||z_m||^2 <= K_hat`` ball are kept as the
projection set. ``chi`` is multiplied by ``delta`` between rounds until all
normalized penalties are below ``eps``.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .network import NetworkConfig, Realization
from .se import LOG2, cap_fronthaul, link_coefficients, make_outcome, se_per_ue

DEFAULT_MU = (50.0, 1e3, 5e4, 10.0)


@dataclass(frozen=True)
class ApgParams:
    """Tuning constants of the APG method.

    ``upsilon`` is carried for completeness; no step of the method reads it.
    ``min_inner`` keeps the relative-change stopping tests from firing before
    the extrapolation has had a chance to move the iterate. ``qos_margin``
    raises the QoS target of the penalty by that relative amount so the
    rounded solution, which loses the small powers on dropped links, still
    clears the QoS floor. ``refine`` re-optimizes the powers on the rounded
    association (QoS and fronthaul penalties kept, and ``chi`` raised until
    every capped SE clears the floor) before scoring; UEs
    still under QoS then gain their next strongest free AP, at most
    ``max_repair`` times.
    """

    mu: tuple = DEFAULT_MU
    chi_init: float = 0.25
    delta: float = 2.0
    alpha_vbar: float = 1e-4
    alpha_v: float = 1e-4
    zeta: float = 0.1
    eps: float = 1e-3
    inner_eps: float = 1e-6
    upsilon: float = 1e-2
    min_inner: int = 20
    max_inner: int = 10_000
    max_outer: int = 30
    random_init: bool = False
    qos_margin: float = 0.05
    z_spread: float = 0.45
    refine: bool = True
    max_repair: int = 10

    def __post_init__(self):
        if len(self.mu) != 4 or min(self.mu) <= 0:
            raise ValueError("mu must hold four positive weights")
        if not 0 <= self.zeta < 1:
            raise ValueError("zeta must lie in [0, 1)")
        if self.delta <= 1:
            raise ValueError("delta must exceed 1")
        if min(self.chi_init, self.alpha_v, self.alpha_vbar, self.eps) <= 0:
            raise ValueError("chi_init, step sizes and eps must be positive")
        if not 0 <= self.z_spread < 0.5:
            raise ValueError("z_spread must lie in [0, 0.5)")
        if self.qos_margin < 0:
            raise ValueError("qos_margin must be nonnegative")


class PenaltyTerms(NamedTuple):
    q1: float
    q2: float
    q3: float
    q4: float
    h: float
    f: float


def project_theta(r1):
    """Project rows onto ``{x >= 0, ||x|| <= 1}`` (exact, closed form)."""
    x = np.maximum(np.asarray(r1, float), 0.0)
    norm = np.linalg.norm(x, axis=-1, keepdims=True)
    return x / np.maximum(1.0, norm)


def project_z(r2, max_served):
    """Composed projection onto ``{x >= 0, ||x||^2 <= K_hat}`` then ``{x <= 1}``.

    This is the cheap composition of the two projections, not the exact
    projection onto their intersection.
    """
    x = np.maximum(np.asarray(r2, float), 0.0)
    radius = math.sqrt(max_served)
    norm = np.linalg.norm(x, axis=-1, keepdims=True)
    return np.minimum(x * (radius / np.maximum(radius, norm)), 1.0)


class PenaltyObjective:
    """``f = -sum SE + chi * sum_i mu_i Q_i`` and its gradient on one realization.

    With ``fixed_assoc`` the association is frozen at ``z = sqrt(a)``: only
    the sum SE, the QoS penalty and, if ``fronthaul`` is set, the fronthaul
    penalty remain, the ``z`` block of the gradient is zero and ``theta`` is
    pinned to zero off the association.
    """

    def __init__(self, r: Realization, cfg: NetworkConfig, mu=DEFAULT_MU, chi=1.0,
                 fixed_assoc=None, qos_target=None, fronthaul=False):
        self.cfg = cfg
        self.qos = cfg.qos_se if qos_target is None else float(qos_target)
        self.coeffs = link_coefficients(r, cfg)
        self.shape = r.beta.shape
        self.size = r.beta.size
        self.mu = tuple(float(x) for x in mu)
        self.chi = float(chi)
        self.scale = self.coeffs.prelog / LOG2
        if fixed_assoc is None:
            self.mask = None
            self.z_fixed = None
        else:
            a = np.asarray(fixed_assoc, float)
            self.mask = a > 0.5
            self.z_fixed = np.sqrt(np.clip(a, 0.0, 1.0))
        self.fixed_fronthaul = bool(fronthaul) and self.mask is not None

    # -- flat vector helpers -------------------------------------------------
    def split(self, v):
        return v[: self.size].reshape(self.shape), v[self.size:].reshape(self.shape)

    @staticmethod
    def join(theta, z):
        return np.concatenate([np.ravel(theta), np.ravel(z)])

    def project(self, v):
        theta, z = self.split(v)
        if self.mask is not None:
            theta = project_theta(np.where(self.mask, theta, 0.0))
            return self.join(theta, self.z_fixed)
        return self.join(project_theta(theta), project_z(z, self.cfg.max_served))

    # -- model ---------------------------------------------------------------
    def _sinr_parts(self, theta):
        c = self.coeffs
        amp = np.sum(c.gain * theta, axis=0)
        v = c.leak.T @ np.sum(theta**2, axis=1) + 1.0
        s = amp**2
        se = self.scale * (np.log(s + v) - np.log(v))
        return amp, s, v, se

    def terms(self, v) -> PenaltyTerms:
        theta, z = self.split(v)
        *_, se = self._sinr_parts(theta)
        return self._terms(theta, z, se)

    def _terms(self, theta, z, se):
        cfg = self.cfg
        h = -float(np.sum(se))
        q2 = float(np.sum(np.maximum(0.0, self.qos - se) ** 2))
        if self.mask is not None:
            q1 = q3 = q4 = 0.0
            if self.fixed_fronthaul:
                load = self.z_fixed**2 @ se
                q4 = float(np.sum(np.maximum(0.0, load - cfg.fronthaul_cap) ** 2))
        else:
            z2 = z**2
            q1 = float(np.sum(z2 - z2**2))
            q3 = float(
                np.sum(np.maximum(0.0, 1.0 - z2.sum(axis=0)) ** 2)
                + np.sum(np.maximum(0.0, theta**2 - z2) ** 2)
            )
            q4 = float(np.sum(np.maximum(0.0, z2 @ se - cfg.fronthaul_cap) ** 2))
        mu1, mu2, mu3, mu4 = self.mu
        f = h + self.chi * (mu1 * q1 + mu2 * q2 + mu3 * q3 + mu4 * q4)
        return PenaltyTerms(q1, q2, q3, q4, h, f)

    def value(self, v) -> float:
        return self.terms(v).f

    def gradient(self, v):
        theta, z = self.split(v)
        cfg, c = self.cfg, self.coeffs
        mu1, mu2, mu3, mu4 = self.mu
        chi = self.chi
        amp, s, vk, se = self._sinr_parts(theta)

        # dF/dSE_i for every smooth term that depends on the SEs.
        weight = -1.0 - 2.0 * chi * mu2 * np.maximum(0.0, self.qos - se)
        if self.mask is None or self.fixed_fronthaul:
            z2 = z**2
            over = np.maximum(0.0, z2 @ se - cfg.fronthaul_cap)
            weight = weight + 2.0 * chi * mu4 * (z2.T @ over)

        total = s + vk
        g_theta = self.scale * (
            c.gain * (2.0 * weight * amp / total)[None, :]
            + 2.0 * theta * (c.leak @ (weight * (1.0 / total - 1.0 / vk)))[:, None]
        )
        if self.mask is not None:
            g_theta = np.where(self.mask, g_theta, 0.0)
            return self.join(g_theta, np.zeros(self.shape))

        link = np.maximum(0.0, theta**2 - z2)
        cover = np.maximum(0.0, 1.0 - z2.sum(axis=0))
        g_theta = g_theta + chi * mu3 * 4.0 * link * theta
        g_z = chi * (
            mu1 * (2.0 * z - 4.0 * z**3)
            - mu3 * 4.0 * link * z
            - mu3 * 4.0 * cover[None, :] * z
            + mu4 * 4.0 * over[:, None] * z * se[None, :]
        )
        return self.join(g_theta, g_z)

    def normalized_penalties(self, v):
        q = self.terms(v)
        M, K = self.shape
        return np.array([q.q1 / (M * K), q.q2 / K, q.q3 / (M * K), q.q4 / M])


def penalty_terms(theta, z, r: Realization, cfg: NetworkConfig, chi=1.0,
                  mu=DEFAULT_MU) -> PenaltyTerms:
    """``(Q1, Q2, Q3, Q4, h, f)`` at ``(theta, z)``."""
    obj = PenaltyObjective(r, cfg, mu=mu, chi=chi)
    return obj.terms(obj.join(theta, z))


def gradient(theta, z, r: Realization, cfg: NetworkConfig, chi=1.0, mu=DEFAULT_MU):
    """Gradient of ``f`` as a flat ``2MK`` vector ordered ``[theta, z]`` row-major.

    Hinge terms use the zero subgradient at their kinks.
    """
    obj = PenaltyObjective(r, cfg, mu=mu, chi=chi)
    return obj.gradient(obj.join(theta, z))


def next_q(q: float) -> float:
    return (1.0 + math.sqrt(4.0 * q * q + 1.0)) / 2.0


@dataclass
class ApgState:
    """Iterate and bookkeeping of the nonmonotone APG recursion."""

    v: np.ndarray
    v_prev: np.ndarray
    v_tilde: np.ndarray
    q: float = 1.0
    q_prev: float = 0.0
    b: float = 1.0
    c: float = 0.0
    chi: float = 1.0
    iter: int = 0
    f_hist: list = field(default_factory=list)
    h_hist: list = field(default_factory=list)

    @classmethod
    def start(cls, v0, objective: PenaltyObjective) -> "ApgState":
        v0 = np.array(v0, float)
        state = cls(v=v0, v_prev=v0.copy(), v_tilde=v0.copy(), chi=objective.chi)
        state.restart(objective)
        return state

    def restart(self, objective: PenaltyObjective):
        """Reset momentum and the nonmonotone average for a new ``chi``."""
        terms = objective.terms(self.v)
        self.v_prev = self.v.copy()
        self.v_tilde = self.v.copy()
        self.q, self.q_prev, self.b = 1.0, 0.0, 1.0
        self.c = terms.f
        self.chi = objective.chi
        self.f_hist = [terms.f]
        self.h_hist = [terms.h]


class ApgDiverged(FloatingPointError):
    """Non-finite objective; the step sizes are too large for the instance."""


def apg_inner(state: ApgState, objective: PenaltyObjective, params: ApgParams) -> ApgState:
    """Run APG iterations at the current ``chi`` until the stopping test fires."""
    zeta = params.zeta
    eps = params.inner_eps
    start = state.iter
    while state.iter - start < params.max_inner:
        v_bar = (state.v + state.q_prev / state.q * (state.v_tilde - state.v)
                 + (state.q_prev - 1.0) / state.q * (state.v - state.v_prev))
        v_tilde = objective.project(v_bar - params.alpha_vbar * objective.gradient(v_bar))
        t_tilde = objective.terms(v_tilde)
        if t_tilde.f <= state.c - zeta * float(np.sum((v_tilde - v_bar) ** 2)):
            v_new, t_new = v_tilde, t_tilde
        else:
            v_hat = objective.project(state.v - params.alpha_v * objective.gradient(state.v))
            t_hat = objective.terms(v_hat)
            v_new, t_new = (v_tilde, t_tilde) if t_tilde.f <= t_hat.f else (v_hat, t_hat)
        if not math.isfinite(t_new.f):
            raise ApgDiverged(f"objective became {t_new.f} at iteration {state.iter}")

        state.v_prev, state.v, state.v_tilde = state.v, v_new, v_tilde
        state.q_prev, state.q = state.q, next_q(state.q)
        b_next = zeta * state.b + 1.0
        state.c = (zeta * state.b * state.c + t_new.f) / b_next
        state.b = b_next
        state.iter += 1
        state.f_hist.append(t_new.f)
        state.h_hist.append(t_new.h)

        n = len(state.f_hist) - 1
        if n < params.min_inner:
            continue
        f_now, h_now = state.f_hist[-1], state.h_hist[-1]
        f_stall = abs(f_now - state.f_hist[-11]) <= eps * abs(f_now)
        h_stall = abs(h_now - state.h_hist[-2]) <= eps * abs(h_now)
        if f_stall or h_stall:
            break
    return state


def _round_association(z, beta, max_served):
    """Threshold ``z**2 >= 0.5`` then repair coverage and the per-AP cap."""
    a = (np.asarray(z) ** 2 >= 0.5).astype(float)
    strength = np.asarray(beta, float)
    M, K = a.shape
    for m in range(M):
        served = np.flatnonzero(a[m])
        if len(served) > max_served:
            ranked = served[np.argsort(-strength[m, served], kind="stable")]
            a[m, ranked[max_served:]] = 0.0
    for k in range(K):
        if a[:, k].sum() >= 1:
            continue
        for m in np.argsort(-strength[:, k], kind="stable"):
            if a[m].sum() < max_served:
                a[m, k] = 1.0
                break
        else:
            a[int(np.argmax(strength[:, k])), k] = 1.0
    return a


def rank_score(beta) -> np.ndarray:
    """Per-AP (row) rank of each entry mapped linearly onto ``[1, -1]``, largest first."""
    beta = np.asarray(beta, float)
    score = np.empty_like(beta)
    ramp = np.linspace(1.0, -1.0, beta.shape[1]) if beta.shape[1] > 1 else np.ones(1)
    order = np.argsort(-beta, axis=1, kind="stable")
    np.put_along_axis(score, order, np.broadcast_to(ramp, beta.shape), axis=1)
    return score


def full_power(r: Realization, cfg: NetworkConfig, params: ApgParams | None = None):
    """Power control optimized for the all-ones association (the FULL powers)."""
    params = params or ApgParams()
    ones = np.ones(r.beta.shape)
    objective = PenaltyObjective(r, cfg, mu=params.mu, fixed_assoc=ones)
    v, _ = run_penalty_schedule(
        objective, objective.join(ones / math.sqrt(cfg.num_ues), ones), params)
    return objective.split(v)[0]


def initial_point(r: Realization, cfg: NetworkConfig, params: ApgParams, rng=None):
    """Warm start for the joint solver, or a random point of the set.

    ``theta`` is the power control optimized for the all-ones association.
    ``z**2`` starts at ``0.5 + z_spread * score`` with ``score`` the per-AP
    rank of those powers, so every link sits near the rounding threshold
    with the links FULL powers most slightly favoured. A uniform ``z`` start is a trap: the ``Q1`` push
    toward 1 is equal on all links, the ``K_hat`` ball rescales them equally
    and whole rows freeze at ``z**2 = K_hat / K``.
    """
    if params.random_init:
        rng = np.random.default_rng(rng)
        theta = project_theta(rng.uniform(0.0, 1.0, r.beta.shape))
        z = project_z(rng.uniform(0.0, 1.0, r.beta.shape), cfg.max_served)
        return theta, z
    theta = full_power(r, cfg, params)
    z = np.sqrt(0.5 + params.z_spread * rank_score(theta))
    return theta, project_z(z, cfg.max_served)


def run_penalty_schedule(objective: PenaltyObjective, v0, params: ApgParams, done=None):
    """Outer loop: APG at fixed ``chi``, then ``chi *= delta`` until penalties fit.

    ``done(v)``, if given, is an extra stopping condition checked together
    with the penalty test. Returns ``(v, info)`` with ``info`` holding the
    trace and flags.
    """
    objective.chi = params.chi_init
    state = ApgState.start(objective.project(v0), objective)
    trace = []
    rounds = 0
    ok = False
    penalties = objective.normalized_penalties(state.v)
    for rounds in range(1, params.max_outer + 1):
        apg_inner(state, objective, params)
        trace.extend(state.h_hist[1:])
        penalties = objective.normalized_penalties(state.v)
        if np.all(penalties <= params.eps) and (done is None or done(state.v)):
            ok = True
            break
        objective.chi *= params.delta
        state.restart(objective)
    info = dict(outer_rounds=rounds, penalties_ok=ok, penalties=penalties.tolist(),
                chi=objective.chi, inner_iterations=state.iter, trace=trace)
    return state.v, info


def refine_power(a, theta, r: Realization, cfg: NetworkConfig, params: ApgParams):
    """Re-optimize ``theta`` on a frozen binary association.

    Keeps the QoS (with margin) and fronthaul penalties. Links switched on
    by the rounding repair, and all links of UEs starting below QoS, are
    raised to at least ``1/sqrt(K_hat)``: at zero amplitude the SE gradient
    of a UE vanishes and it could never be powered up.
    Returns ``(theta, info)``.
    """
    a = np.asarray(a, float)
    theta = np.where(a > 0.5, theta, 0.0)
    short = se_per_ue(theta, r, cfg) < cfg.qos_se
    dead = (a > 0.5) & ((theta < 1e-3) | short[None, :])
    theta = project_theta(np.where(dead, np.maximum(theta, 1.0 / math.sqrt(cfg.max_served)), theta))
    objective = PenaltyObjective(r, cfg, mu=params.mu, fixed_assoc=a, fronthaul=True,
                                 qos_target=cfg.qos_se * (1.0 + params.qos_margin))

    def meets_qos(v):
        raw = se_per_ue(objective.split(v)[0], r, cfg)
        return bool(np.all(cap_fronthaul(raw, a, cfg) >= cfg.qos_se))

    v, info = run_penalty_schedule(objective, objective.join(theta, np.sqrt(a)), params,
                                   done=meets_qos)
    return objective.split(v)[0], info


def _add_links(a, beta, needy, max_served):
    """Give every UE in ``needy`` its strongest not-yet-serving AP with room."""
    a = a.copy()
    added = False
    for k in np.flatnonzero(needy):
        for m in np.argsort(-beta[:, k], kind="stable"):
            if a[m, k] == 0 and a[m].sum() < max_served:
                a[m, k] = 1.0
                added = True
                break
    return a, added


def apg_solve(r: Realization, cfg: NetworkConfig, params: ApgParams | None = None,
              init=None):
    """Joint association and power control by the penalty APG method.

    ``init`` is an optional ``(theta, z)`` pair; by default ``initial_point``
    supplies one. The continuous ``z`` is rounded to a binary association
    (``z**2 >= 0.5`` plus coverage/cap repair), ``theta`` is zeroed off the
    association and re-projected, the powers are refined on the rounded
    association (``refine_power``), and the SEs are scaled down uniformly if
    any AP is still above the fronthaul cap. The reported SEs are the
    uncapped ones whenever no capping was needed. Non-convergence is
    reported in the outcome, not raised.
    """
    params = params or ApgParams()
    t0 = time.perf_counter()
    if init is None:
        init = initial_point(r, cfg, params, rng=r.seed)
    objective = PenaltyObjective(r, cfg, mu=params.mu, chi=params.chi_init,
                                 qos_target=cfg.qos_se * (1.0 + params.qos_margin))
    v0 = objective.join(*init)
    try:
        v, info = run_penalty_schedule(objective, v0, params)
        error = None
    except ApgDiverged as exc:
        v, info, error = objective.project(v0), {}, str(exc)
    theta, z = objective.split(v)
    a = _round_association(z, r.beta, cfg.max_served)
    theta = project_theta(np.where(a > 0, theta, 0.0))
    converged = bool(info.get("penalties_ok", False))
    refine_info = {}
    repairs = 0
    if params.refine:
        theta, refine_info = refine_power(a, theta, r, cfg, params)
        while repairs < params.max_repair:
            needy = se_per_ue(theta, r, cfg) < cfg.qos_se
            if not needy.any():
                break
            a, added = _add_links(a, r.beta, needy, cfg.max_served)
            if not added:
                break
            repairs += 1
            theta, refine_info = refine_power(a, theta, r, cfg, params)
        converged = converged and refine_info["penalties_ok"]
    raw = se_per_ue(theta, r, cfg)
    se = cap_fronthaul(raw, a, cfg)
    wall = time.perf_counter() - t0
    return make_outcome(
        "APG", theta, a, r, cfg, se=se,
        iterations=info.get("inner_iterations", 0) + refine_info.get("inner_iterations", 0),
        wall_time=wall,
        objective_trace=info.get("trace", []),
        converged=converged,
        info=dict(z=z, outer_rounds=info.get("outer_rounds", 0),
                  penalties=info.get("penalties"), chi=info.get("chi"), error=error,
                  se_uncapped=raw, sum_se_uncapped=float(raw.sum()), repairs=repairs),
    )
