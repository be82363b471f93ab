"""Successive convex approximation (SCA) for joint association and power control.

The binary association is relaxed to ``a in [0, 1]`` with the concave
integrality gap ``Q(a) = sum(a - a**2)`` priced by ``lam`` in the objective.
Each SE is sandwiched between a concave minorant (for the ``t <= SE`` rows)
and a convex majorant (for the fronthaul rows), the bilinear fronthaul load
``a * t_hat`` is majorized through ``4xy = (x+y)**2 - (x-y)**2``, and the
interference bound ``w_hat <= V(theta)`` is linearized. All surrogates are
tight at the expansion point, so the previous solution is always feasible for
the next subproblem and the surrogate objective cannot increase.

Each subproblem is assembled directly in conic form (scipy sparse matrices)
and solved by the Clarabel interior-point solver.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import clarabel
import numpy as np
from scipy import sparse

from .apg import ApgParams, _round_association, full_power, project_theta, rank_score, refine_power
from .baselines import heu_associate
from .network import NetworkConfig, Realization
from .se import (LOG2, cap_fronthaul, link_coefficients, make_outcome,
                 se_per_ue, signal_and_interference)

DEFAULT_LAMBDA = 100.0
INTEGRALITY_TOL = 5e-5


class ScaError(RuntimeError):
    """The conic solver failed on a subproblem that is feasible by construction."""


@dataclass(frozen=True)
class ScaParams:
    """Tuning constants of the SCA method.

    ``elastic_weight`` prices the nonnegative slacks added to the QoS and
    fronthaul rows so that any starting point gives a feasible subproblem;
    they are driven to zero within a few iterations. ``qos_margin`` raises
    the QoS row to ``qos_se * (1 + qos_margin)`` so the power lost on links
    dropped by rounding does not leave a UE just under the floor. With
    ``polish`` the powers of the rounded association are re-optimized by the
    fixed-association penalty method and kept only if they raise the capped
    sum SE without breaking QoS.
    """

    lam: float = DEFAULT_LAMBDA
    tol: float = 1e-3
    max_iters: int = 50
    elastic_weight: float = 1e3
    solver_tol: float = 1e-7
    accept_violation: float = 1e-5
    qos_margin: float = 0.05
    init: str = "relaxed"
    a_spread: float = 0.3
    rank_by: str = "power"
    polish: bool = True

    def __post_init__(self):
        if self.lam <= 0 or self.tol <= 0 or self.max_iters < 1:
            raise ValueError("lam and tol must be positive, max_iters >= 1")
        if self.rank_by not in ("power", "gain"):
            raise ValueError(f"unknown rank_by {self.rank_by!r}")
        if self.init not in ("relaxed", "heu"):
            raise ValueError(f"unknown init {self.init!r}")
        if self.qos_margin < 0:
            raise ValueError("qos_margin must be nonnegative")


@dataclass
class ScaIterate:
    """Point of the lifted problem plus bookkeeping."""

    a: np.ndarray
    theta: np.ndarray
    t: np.ndarray
    t_hat: np.ndarray
    w_hat: np.ndarray
    lam: float = DEFAULT_LAMBDA
    iter: int = 0
    objective: float = math.nan

    def expansion(self, r: Realization, cfg: NetworkConfig, coeffs=None):
        """``(U0, V0, w0)`` at this point: amplitude, true interference, slack."""
        c = coeffs or link_coefficients(r, cfg)
        u0 = np.sum(c.gain * self.theta, axis=0)
        _, v0 = signal_and_interference(self.theta, r, cfg, c)
        return u0, v0, np.maximum(self.w_hat, 1.0)


# -- surrogates (numeric) ----------------------------------------------------

def integrality_gap(a) -> float:
    a = np.asarray(a, float)
    return float(np.sum(a - a**2))


def q_hat(a, a0) -> float:
    """Linear majorant of ``Q`` at ``a0``."""
    a, a0 = np.asarray(a, float), np.asarray(a0, float)
    return float(np.sum(a - 2.0 * a0 * a + a0**2))


def surrogate_se_lower(theta, u0, w0, r: Realization, cfg: NetworkConfig, coeffs=None):
    """Concave minorant of the SE, expanded at amplitude ``u0`` and interference ``w0``.

    Uses ``log(1 + x**2/y) >= log(1 + x0**2/y0) - x0**2/y0 + 2 x0 x / y0
    - x0**2 (x**2 + y) / (y0 (x0**2 + y0))`` with ``x = U(theta)`` and
    ``y = V(theta)``; equality holds at ``(x0, y0)``.
    """
    c = coeffs or link_coefficients(r, cfg)
    u0, w0 = np.asarray(u0, float), np.asarray(w0, float)
    u = np.sum(c.gain * np.asarray(theta, float), axis=0)
    _, v = signal_and_interference(theta, r, cfg, c)
    bracket = (np.log1p(u0**2 / w0) - u0**2 / w0 + 2.0 * u0 * u / w0
               - u0**2 * (u**2 + v) / (w0 * (u0**2 + w0)))
    return c.prelog / LOG2 * bracket


def surrogate_se_upper(theta, w_hat, u0, w0, r: Realization, cfg: NetworkConfig,
                       coeffs=None):
    """Convex majorant of ``prelog log2(1 + U**2 / w_hat)``.

    From concavity of ``log``: ``log(x**2 + y) <= log(x0**2 + y0) + (x**2 + y
    - x0**2 - y0) / (x0**2 + y0)``. Tight at ``(u0, w0)``.
    """
    c = coeffs or link_coefficients(r, cfg)
    u0, w0 = np.asarray(u0, float), np.asarray(w0, float)
    w_hat = np.asarray(w_hat, float)
    u = np.sum(c.gain * np.asarray(theta, float), axis=0)
    d = u0**2 + w0
    return c.prelog / LOG2 * (np.log(d) + (u**2 + w_hat) / d - 1.0 - np.log(w_hat))


def se_relaxed(theta, w_hat, r: Realization, cfg: NetworkConfig, coeffs=None):
    """``prelog log2(1 + U**2 / w_hat)``: the SE with ``V`` replaced by ``w_hat``."""
    c = coeffs or link_coefficients(r, cfg)
    u = np.sum(c.gain * np.asarray(theta, float), axis=0)
    return c.prelog * np.log2(1.0 + u**2 / np.asarray(w_hat, float))


def interference_linearized(theta, theta0, r: Realization, cfg: NetworkConfig,
                            coeffs=None):
    """Affine minorant of ``V(theta)`` at ``theta0`` (``V`` is convex in ``theta``)."""
    c = coeffs or link_coefficients(r, cfg)
    theta, theta0 = np.asarray(theta, float), np.asarray(theta0, float)
    lin = np.sum(2.0 * theta0 * theta - theta0**2, axis=1)
    return c.leak.T @ lin + 1.0


def fronthaul_surrogate(a, t_hat, a0, t_hat0):
    """Per-AP convex majorant of ``sum_k a_mk t_hat_k``."""
    a, a0 = np.asarray(a, float), np.asarray(a0, float)
    s = np.asarray(t_hat, float)[None, :]
    d0 = a0 - np.asarray(t_hat0, float)[None, :]
    return 0.25 * np.sum((a + s) ** 2 - 2.0 * d0 * (a - s) + d0**2, axis=1)


# -- conic subproblem -----------------------------------------------------------

_BLOCKS = ("a", "theta", "t", "t_hat", "w_hat", "qos_slack", "fh_slack",
           "power", "lin_power", "lower_sq", "upper_sq", "log_w", "fh_sq")


class _Layout:
    """Column ranges of the stacked decision vector.

    Besides ``(a, theta, t, t_hat, w_hat)`` and the two elastic slacks the
    vector holds epigraph variables: per-AP power ``P_m >= ||theta_m||**2``,
    its linearization ``L_m <= sum_k (2 theta0_mk theta_mk - theta0_mk**2)``
    (which keeps the interference rows at ``M`` entries each), the two squared terms of the SE bounds, ``log_w <= log(w_hat)`` and the
    per-AP square ``sum_k (a_mk + t_hat_k)**2`` of the fronthaul majorant.
    """

    def __init__(self, M: int, K: int):
        self.M, self.K = M, K
        sizes = dict(a=M * K, theta=M * K, t=K, t_hat=K, w_hat=K, qos_slack=K,
                     fh_slack=M, power=M, lin_power=M, lower_sq=K, upper_sq=K, log_w=K, fh_sq=M)
        self.slices = {}
        start = 0
        for name in _BLOCKS:
            self.slices[name] = slice(start, start + sizes[name])
            start += sizes[name]
        self.n = start

    def idx(self, name):
        s = self.slices[name]
        cols = np.arange(s.start, s.stop)
        return cols.reshape(self.M, self.K) if name in ("a", "theta") else cols

    def get(self, x, name):
        v = np.asarray(x[self.slices[name]], float)
        return v.reshape(self.M, self.K) if name in ("a", "theta") else v


class _Rows:
    """Affine expressions ``F x + g`` stored as COO triplets."""

    def __init__(self):
        self.n = 0
        self.g = []
        self.r, self.c, self.v = [], [], []

    def take(self, count, const=0.0):
        rows = np.arange(self.n, self.n + count)
        self.n += count
        self.g.append(np.broadcast_to(np.asarray(const, float), (count,)).copy())
        return rows

    def add(self, rows, cols, vals=1.0):
        rows, cols, vals = np.broadcast_arrays(rows, cols, np.asarray(vals, float))
        self.r.append(rows.ravel())
        self.c.append(cols.ravel())
        self.v.append(vals.ravel())

    def matrices(self, n_cols):
        f = sparse.coo_matrix(
            (np.concatenate(self.v), (np.concatenate(self.r), np.concatenate(self.c))),
            shape=(self.n, n_cols)).tocsc()
        return f, np.concatenate(self.g)


@dataclass
class ConvexSubproblem:
    """Convexified problem at one expansion point, in Clarabel's conic form.

    Minimize ``q @ x + offset`` subject to ``b - A x`` in ``cones``. The
    linear objective is ``-sum t + lam * Q_hat(a) + elastic_weight *
    (slacks)``; ``offset`` carries the constant of ``Q_hat``. Rows are a
    nonnegative block (affine constraints and the linearized rows), second
    order cones (power, ``theta**2 <= a``, the SE-bound squares, the
    fronthaul square) and one exponential cone per UE for ``log w_hat``.
    """

    layout: _Layout
    q: np.ndarray
    A: sparse.csc_matrix
    b: np.ndarray
    cones: list
    cone_dims: list
    offset: float
    params: ScaParams
    lam: float

    def objective(self, x) -> float:
        return float(self.q @ x + self.offset)

    def max_violation(self, x) -> float:
        """Largest cone violation of ``b - A x`` (0 when ``x`` is feasible)."""
        s = self.b - self.A @ x
        worst = 0.0
        pos = 0
        for kind, dim in self.cone_dims:
            blk = s[pos:pos + dim]
            if kind == "nonneg":
                worst = max(worst, float(np.max(-blk, initial=0.0)))
            elif kind == "soc":
                worst = max(worst, float(np.linalg.norm(blk[1:]) - blk[0]))
            else:
                xe, ye, ze = blk
                if ye > 0:
                    worst = max(worst, float(ye * np.exp(min(xe / ye, 700.0)) - ze))
                else:
                    worst = max(worst, float(-ye))
            pos += dim
        return max(worst, 0.0)

    def point(self, it: "ScaIterate", r: Realization, cfg: NetworkConfig, coeffs=None):
        """Stack an iterate into ``x`` with tight epigraph variables and zero slacks."""
        c = coeffs or link_coefficients(r, cfg)
        lay = self.layout
        x = np.zeros(lay.n)
        x[lay.slices["a"]] = np.ravel(it.a)
        x[lay.slices["theta"]] = np.ravel(it.theta)
        x[lay.slices["t"]] = it.t
        x[lay.slices["t_hat"]] = it.t_hat
        x[lay.slices["w_hat"]] = it.w_hat
        x[lay.slices["power"]] = np.sum(it.theta**2, axis=1)
        x[lay.slices["lin_power"]] = np.sum(it.theta**2, axis=1)
        u = np.sum(c.gain * it.theta, axis=0)
        x[lay.slices["lower_sq"]] = self._lower_sq_arg(u) ** 2
        x[lay.slices["upper_sq"]] = (self._upper_root * u) ** 2
        x[lay.slices["log_w"]] = np.log(it.w_hat)
        x[lay.slices["fh_sq"]] = np.sum((it.a + it.t_hat[None, :]) ** 2, axis=1)
        return x

    # Filled by convexified_constraints; ``center`` is the expansion point.
    center: np.ndarray = field(default=None, repr=False)
    _lower_root: np.ndarray = field(default=None, repr=False)
    _lower_shift: np.ndarray = field(default=None, repr=False)
    _upper_root: np.ndarray = field(default=None, repr=False)

    def _lower_sq_arg(self, u):
        return self._lower_root * u - self._lower_shift


def convexified_constraints(it: ScaIterate, r: Realization, cfg: NetworkConfig,
                            params: ScaParams | None = None, coeffs=None) -> ConvexSubproblem:
    """Assemble the convex subproblem expanded at ``it``.

    The SE minorant is expanded at ``(U(theta0), V(theta0))`` and written in
    completed-square form, ``log(1+g0) - k + 2 u0 u / (u0**2 + v0) - (k/v0) V
    - (sqrt(k/v0) u - sqrt(k g0))**2`` with ``g0 = u0**2/v0`` and ``k =
    g0/(1+g0)``; expanding the square cancels terms of size ``g0`` and
    stalls the interior-point solver on strong UEs. The SE majorant is
    expanded at ``(U(theta0), w_hat0)``.
    """
    params = params or ScaParams(lam=it.lam)
    c = coeffs or link_coefficients(r, cfg)
    M, K = r.beta.shape
    lay = _Layout(M, K)
    scale = c.prelog / LOG2
    ia, ith = lay.idx("a"), lay.idx("theta")
    it_, ith_hat, iw = lay.idx("t"), lay.idx("t_hat"), lay.idx("w_hat")
    ie, ifh = lay.idx("qos_slack"), lay.idx("fh_slack")
    ip, ilo, iup = lay.idx("power"), lay.idx("lower_sq"), lay.idx("upper_sq")
    ilin = lay.idx("lin_power")
    ilog, ifq = lay.idx("log_w"), lay.idx("fh_sq")
    mm, kk = np.meshgrid(np.arange(M), np.arange(K), indexing="ij")

    # Expansion point.
    a0 = np.clip(it.a, 0.0, 1.0)
    theta0 = np.maximum(it.theta, 0.0)
    u0 = np.sum(c.gain * theta0, axis=0)
    _, v0 = signal_and_interference(theta0, r, cfg, c)
    w0 = np.maximum(it.w_hat, 1.0)
    sinr0 = u0**2 / v0
    kappa = sinr0 / (1.0 + sinr0)
    lo_const = np.log1p(sinr0) - kappa
    lo_lin = 2.0 * u0 / (u0**2 + v0)
    lo_quad = kappa / v0
    lo_root, lo_shift = np.sqrt(kappa / v0), np.sqrt(kappa * sinr0)
    d_up = u0**2 + w0
    up_root = np.sqrt(1.0 / d_up)
    d0 = a0 - it.t_hat[None, :]

    # Nonnegative block: every row is an expression that must be >= 0.
    nn = _Rows()
    nn.add(nn.take(M * K), ia.ravel())                       # a >= 0
    nn.add(nn.take(M * K, 1.0), ia.ravel(), -1.0)            # a <= 1
    nn.add(nn.take(M * K), ith.ravel())                      # theta >= 0
    rows = nn.take(M, cfg.max_served)                        # sum_k a <= K_hat
    nn.add(rows[mm], ia, -1.0)
    rows = nn.take(K, -1.0)                                  # sum_m a >= 1
    nn.add(rows[kk], ia, 1.0)
    rows = nn.take(K, -cfg.qos_se * (1.0 + params.qos_margin))  # t >= QoS - slack
    nn.add(rows, it_)
    nn.add(rows, ie)
    nn.add(nn.take(K), ie)
    nn.add(nn.take(M), ifh)
    nn.add(nn.take(K, -1.0), iw)                             # w_hat >= 1
    # w_hat <= V linearized at theta0: sum_m leak_mk L_m + 1.
    rows = nn.take(M, -np.sum(theta0**2, axis=1))
    nn.add(rows[mm], ith, 2.0 * theta0)
    nn.add(rows, ilin, -1.0)
    rows = nn.take(K, 1.0)
    nn.add(rows[kk], ilin[mm], c.leak)
    nn.add(rows, iw, -1.0)
    nn.add(nn.take(M, 1.0), ip, -1.0)                        # P_m <= 1
    # t <= scale * (lo_const + lo_lin u - lower_sq - lo_quad (leak^T P + 1)).
    rows = nn.take(K, scale * (lo_const - lo_quad))
    nn.add(rows[kk], ith, scale * lo_lin[kk] * c.gain)
    nn.add(rows, ilo, -scale)
    nn.add(rows[kk], ip[mm], -scale * lo_quad[kk] * c.leak)
    nn.add(rows, it_, -1.0)
    # scale * (log d + upper_sq + w_hat / d - 1 - log_w) <= t_hat.
    rows = nn.take(K, -scale * (np.log(d_up) - 1.0))
    nn.add(rows, ith_hat, 1.0)
    nn.add(rows, iup, -scale)
    nn.add(rows, iw, -scale / d_up)
    nn.add(rows, ilog, scale)
    # 0.25 [fh_sq - 2 sum d0 (a - t_hat) + sum d0^2] <= C + slack.
    rows = nn.take(M, cfg.fronthaul_cap - 0.25 * np.sum(d0**2, axis=1))
    nn.add(rows, ifh, 1.0)
    nn.add(rows, ifq, -0.25)
    nn.add(rows[mm], ia, 0.5 * d0)
    nn.add(rows[mm], ith_hat[kk], -0.5 * d0)
    n_nonneg = nn.n

    # Second-order cones, ``(s0, s1..)`` with ``||s1..|| <= s0``. A rotated
    # cone ``||v||^2 <= y`` is ``(y + 1, 2 v, y - 1)``.
    soc = nn
    dims = [("nonneg", n_nonneg)]
    base = soc.take(M * (K + 2)).reshape(M, K + 2)           # ||theta_m||^2 <= P_m
    soc.g[-1][:] = np.tile(np.r_[1.0, np.zeros(K), -1.0], M)
    soc.add(base[:, 0], ip)
    soc.add(base[:, -1], ip)
    soc.add(base[:, 1:K + 1], ith, 2.0)
    dims += [("soc", K + 2)] * M
    base = soc.take(3 * M * K).reshape(M * K, 3)             # theta^2 <= a
    soc.g[-1][:] = np.tile([1.0, 0.0, -1.0], M * K)
    soc.add(base[:, 0], ia.ravel())
    soc.add(base[:, 2], ia.ravel())
    soc.add(base[:, 1], ith.ravel(), 2.0)
    dims += [("soc", 3)] * (M * K)
    base = soc.take(3 * K).reshape(K, 3)                     # (lo_root u - lo_shift)^2 <= lower_sq
    soc.g[-1][:] = np.column_stack([np.ones(K), -2.0 * lo_shift, -np.ones(K)]).ravel()
    soc.add(base[:, 0], ilo)
    soc.add(base[:, 2], ilo)
    soc.add(base[kk, 1], ith, 2.0 * lo_root[kk] * c.gain)
    dims += [("soc", 3)] * K
    base = soc.take(3 * K).reshape(K, 3)                     # (up_root u)^2 <= upper_sq
    soc.g[-1][:] = np.tile([1.0, 0.0, -1.0], K)
    soc.add(base[:, 0], iup)
    soc.add(base[:, 2], iup)
    soc.add(base[kk, 1], ith, 2.0 * up_root[kk] * c.gain)
    dims += [("soc", 3)] * K
    base = soc.take(M * (K + 2)).reshape(M, K + 2)           # sum_k (a + t_hat)^2 <= fh_sq
    soc.g[-1][:] = np.tile(np.r_[1.0, np.zeros(K), -1.0], M)
    soc.add(base[:, 0], ifq)
    soc.add(base[:, -1], ifq)
    soc.add(base[:, 1:K + 1], ia, 2.0)
    soc.add(base[:, 1:K + 1], ith_hat[kk], 2.0)
    dims += [("soc", K + 2)] * M
    # Exponential cones (x, y, z): y exp(x / y) <= z, here exp(log_w) <= w_hat.
    base = soc.take(3 * K).reshape(K, 3)
    soc.g[-1][:] = np.tile([0.0, 1.0, 0.0], K)
    soc.add(base[:, 0], ilog)
    soc.add(base[:, 2], iw)
    dims += [("exp", 3)] * K

    f, g = soc.matrices(lay.n)
    q = np.zeros(lay.n)
    q[lay.slices["t"]] = -1.0
    q[lay.slices["a"]] = params.lam * np.ravel(1.0 - 2.0 * a0)
    q[lay.slices["qos_slack"]] = params.elastic_weight
    q[lay.slices["fh_slack"]] = params.elastic_weight
    cones = [clarabel.NonnegativeConeT(n_nonneg)]
    for kind, dim in dims[1:]:
        cones.append(clarabel.SecondOrderConeT(dim) if kind == "soc"
                     else clarabel.ExponentialConeT())
    sub = ConvexSubproblem(
        layout=lay, q=q, A=-f, b=g, cones=cones, cone_dims=dims,
        offset=params.lam * float(np.sum(a0**2)), params=params, lam=params.lam,
        _lower_root=lo_root, _lower_shift=lo_shift, _upper_root=up_root)
    sub.center = sub.point(it, r, cfg, c)
    return sub


# Solver attempts in order: (solve for the step from the expansion point,
# extra settings). Tried until one returns a point within tolerance.
_ATTEMPTS = ((True, {}), (False, {}), (True, {"max_step_fraction": 0.9}),
             (False, {"max_step_fraction": 0.9}), (True, {"equilibrate_enable": False}),
             (False, {"equilibrate_enable": False}))


def solve_subproblem(sub: ConvexSubproblem, it: ScaIterate | None = None,
                     tol: float | None = None):
    """Solve ``sub`` with Clarabel; returns ``(next_iterate, x)``.

    The solver first works on the step ``y = x - center`` from the
    expansion point. In absolute coordinates the integrality price alone
    contributes about ``-lam * sum(a)`` to ``q @ x`` (around -1e5 at
    150x40) while the objective that matters is of the order of the sum SE,
    so a relative gap tolerance would allow absolute errors near 1e-2 and
    break monotonicity. When the center is far from feasible (the first
    iteration) the absolute form is the better conditioned one.

    A point is accepted when it violates no cone by more than
    ``params.accept_violation``, whatever the solver status (``Solved``,
    ``AlmostSolved``, ``InsufficientProgress``); otherwise the next attempt
    of ``_ATTEMPTS`` is tried. While the expansion point itself is
    infeasible (the elastic phase from the starting point, objective
    dominated by slack prices) a point is also accepted when it cuts that
    violation by four orders of magnitude; the slacks of the next
    subproblem absorb the remainder. If all fail ``ScaError`` lists the statuses:
    subproblems are feasible by construction, so this signals a numerical
    failure.
    """
    tol = sub.params.solver_tol if tol is None else tol
    n = sub.layout.n
    limit = sub.params.accept_violation
    if sub.center is not None:
        limit = max(limit, 1e-4 * sub.max_violation(sub.center))
    failures = []
    for centered, extra in _ATTEMPTS:
        center = sub.center if centered and sub.center is not None else np.zeros(n)
        settings = clarabel.DefaultSettings()
        settings.verbose = False
        settings.tol_gap_abs = settings.tol_gap_rel = settings.tol_feas = tol
        # qdldl beats the multithreaded default factorization on one core.
        settings.direct_solve_method = "qdldl"
        for key, value in extra.items():
            setattr(settings, key, value)
        sol = clarabel.DefaultSolver(sparse.csc_matrix((n, n)), sub.q, sub.A,
                                     sub.b - sub.A @ center, sub.cones, settings).solve()
        status = str(sol.status)
        x = center + np.asarray(sol.x, float)
        viol = sub.max_violation(x) if np.all(np.isfinite(x)) else math.inf
        if viol <= limit:
            break
        failures.append(f"{status} (violation {viol:.2e})")
    else:
        at = "" if it is None else f" at iteration {it.iter}"
        raise ScaError(f"subproblem failed{at}: " + "; ".join(failures))
    # Snap to the simple bounds before scoring: slightly negative slacks
    # priced at ``elastic_weight`` would otherwise overstate the decrease.
    lay = sub.layout
    for name, lo, hi in (("a", 0.0, 1.0), ("theta", 0.0, None),
                         ("qos_slack", 0.0, None), ("fh_slack", 0.0, None)):
        x[lay.slices[name]] = np.clip(x[lay.slices[name]], lo, hi)
    nxt = ScaIterate(
        a=lay.get(x, "a"),
        theta=lay.get(x, "theta"),
        t=lay.get(x, "t"),
        t_hat=lay.get(x, "t_hat"),
        w_hat=np.maximum(lay.get(x, "w_hat"), 1.0),
        lam=sub.lam,
        iter=(0 if it is None else it.iter) + 1,
        objective=sub.objective(x),
    )
    return nxt, x


# -- outer loop -----------------------------------------------------------------

def initial_iterate(r: Realization, cfg: NetworkConfig, params: ScaParams) -> ScaIterate:
    """Starting point with consistent slacks.

    ``"relaxed"`` (default) sets ``a = 0.5 + a_spread * score`` with
    ``score`` the per-AP rank in ``[-1, 1]`` of the FULL powers (or of the
    gains with ``rank_by="gain"``), rows rescaled to at most ``K_hat``, and
    ``theta`` the FULL power control clipped to ``theta**2 <= a``. ``"heu"`` starts from the binary heuristic association
    with ``theta = a / sqrt(K_hat)``. Near ``a = 0.5`` the linearized
    integrality price ``lam (1 - 2 a0)`` is small, so the SE terms still
    steer the association; a binary start freezes it and a uniform start
    drifts to a single AP per UE.
    """
    if params.init == "heu":
        a = heu_associate(r, cfg)
        theta = a / math.sqrt(cfg.max_served)
    else:
        theta = full_power(r, cfg)
        score = rank_score(theta if params.rank_by == "power" else r.beta)
        a = np.clip(0.5 + params.a_spread * score, 0.0, 1.0)
        a *= np.minimum(1.0, cfg.max_served / a.sum(axis=1, keepdims=True))
        theta = project_theta(np.minimum(theta, np.sqrt(a)))
    _, v = signal_and_interference(theta, r, cfg)
    se = se_per_ue(theta, r, cfg)
    return ScaIterate(a=a, theta=theta, t=se.copy(), t_hat=se.copy(), w_hat=v,
                      lam=params.lam, iter=0)


def sca_solve(r: Realization, cfg: NetworkConfig, params: ScaParams | None = None,
              init: ScaIterate | None = None):
    """Joint association and power control by SCA.

    Iterates until the relative change of the surrogate objective is at most
    ``tol`` or ``max_iters`` subproblems have been solved. The final ``a`` is
    rounded (``a >= 0.5`` plus coverage/cap repair), ``theta`` zeroed off the
    association and re-projected, and SEs above the fronthaul cap scaled down
    uniformly. ``converged`` is false when the iteration cap was hit, when
    ``Q(a)/(MK)`` exceeds the integrality threshold or when elastic slack
    remains.
    """
    params = params or ScaParams()
    t0 = time.perf_counter()
    coeffs = link_coefficients(r, cfg)
    it = init if init is not None else initial_iterate(r, cfg, params)
    trace = []
    stopped = False
    error = None
    slack = math.nan
    for _ in range(params.max_iters):
        sub = convexified_constraints(it, r, cfg, params, coeffs)
        try:
            nxt, x = solve_subproblem(sub, it)
        except ScaError as exc:
            error = str(exc)
            break
        lay = sub.layout
        slack = float(np.sum(np.maximum(lay.get(x, "qos_slack"), 0.0))
                      + np.sum(np.maximum(lay.get(x, "fh_slack"), 0.0)))
        trace.append(nxt.objective)
        prev = it.objective
        it = nxt
        if math.isfinite(prev) and abs(prev - it.objective) <= params.tol * abs(it.objective):
            stopped = True
            break
    M, K = r.beta.shape
    gap = integrality_gap(it.a) / (M * K)
    a = _round_association(np.sqrt(it.a), r.beta, cfg.max_served)
    theta = project_theta(np.where(a > 0, it.theta, 0.0))
    raw = se_per_ue(theta, r, cfg)
    se = cap_fronthaul(raw, a, cfg)
    polished = False
    if params.polish:
        theta, raw, se, polished = _polish(a, theta, raw, se, r, cfg)
    converged = stopped and gap <= INTEGRALITY_TOL and slack <= 1e-6
    return make_outcome(
        "SCA", theta, a, r, cfg, se=se,
        iterations=it.iter,
        wall_time=time.perf_counter() - t0,
        objective_trace=trace,
        converged=converged,
        info=dict(integrality_gap=gap, elastic_slack=slack, error=error,
                  a_relaxed=it.a, se_uncapped=raw, sum_se_uncapped=float(raw.sum()),
                  stopped=stopped, polished=polished),
    )


def _polish(a, theta, raw, se, r, cfg):
    """Power-only pass on the rounded association, kept if it helps."""
    ok_before = bool(np.all(se >= cfg.qos_se * (1 - 1e-9)))
    cand, _ = refine_power(a, theta, r, cfg, ApgParams())
    cand_raw = se_per_ue(cand, r, cfg)
    cand_se = cap_fronthaul(cand_raw, a, cfg)
    ok_after = bool(np.all(cand_se >= cfg.qos_se * (1 - 1e-9)))
    if (ok_after and (not ok_before or cand_se.sum() > se.sum())):
        return cand, cand_raw, cand_se, True
    return theta, raw, se, False
