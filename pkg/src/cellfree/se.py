"""Closed-form downlink SE with PPZF precoding, fronthaul loads and feasibility."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .network import NetworkConfig, Realization

LOG2 = np.log(2.0)
ALGEBRAIC_TOL = 1e-6
SE_TOL = 1e-4


class LinkCoefficients(NamedTuple):
    """Per-realization constants of the SINR expression.

    ``gain[m, k] = sqrt(rho_d (N - |S_m|) sigma_mk^2)`` multiplies ``theta_mk``
    in the coherent signal amplitude; ``leak[m, k] = rho_d (beta_mk -
    delta_mk sigma_mk^2)`` multiplies AP ``m``'s total power in UE ``k``'s
    interference term.
    """

    gain: np.ndarray
    leak: np.ndarray
    prelog: float


def link_coefficients(r: Realization, cfg: NetworkConfig) -> LinkCoefficients:
    dof = cfg.antennas_per_ap - r.strong_counts
    gain = np.sqrt(cfg.dl_power * dof[:, None] * r.sigma_sq)
    leak = cfg.dl_power * (r.beta - r.delta * r.sigma_sq)
    return LinkCoefficients(gain, np.maximum(leak, 0.0), cfg.prelog)


def signal_and_interference(theta, r: Realization, cfg: NetworkConfig, coeffs=None):
    """Squared coherent signal ``S_k`` and interference-plus-noise ``V_k``."""
    c = coeffs or link_coefficients(r, cfg)
    theta = np.asarray(theta, float)
    amplitude = np.sum(c.gain * theta, axis=0)
    ap_power = np.sum(theta**2, axis=1)
    return amplitude**2, c.leak.T @ ap_power + 1.0


def se_per_ue(theta, r: Realization, cfg: NetworkConfig, coeffs=None) -> np.ndarray:
    c = coeffs or link_coefficients(r, cfg)
    s, v = signal_and_interference(theta, r, cfg, c)
    return c.prelog * np.log2(1.0 + s / v)


def fronthaul_load(a, se) -> np.ndarray:
    """Per-AP fronthaul load ``sum_k a_mk SE_k``."""
    return np.asarray(a, float) @ np.asarray(se, float)


def cap_fronthaul(se, a, cfg: NetworkConfig) -> np.ndarray:
    """Scale all SEs down uniformly so no AP exceeds the fronthaul cap."""
    se = np.asarray(se, float)
    peak = float(np.max(fronthaul_load(a, se), initial=0.0))
    if peak > cfg.fronthaul_cap:
        return se * (cfg.fronthaul_cap / peak)
    return se.copy()


@dataclass
class FeasibilityReport:
    """Worst violation per constraint (0 when satisfied) and the pass flags."""

    violations: dict
    tolerances: dict
    exempt: tuple = ()

    @property
    def passed(self) -> dict:
        return {
            name: name in self.exempt or v <= self.tolerances[name]
            for name, v in self.violations.items()
        }

    @property
    def ok(self) -> bool:
        return all(self.passed.values())

    def failing(self) -> list:
        return [name for name, good in self.passed.items() if not good]


FULL_EXEMPT = ("fronthaul", "max_served", "coverage")


def check_feasibility(theta, a, r: Realization, cfg: NetworkConfig, tol=ALGEBRAIC_TOL,
                      se_tol=SE_TOL, exempt=(), se=None) -> FeasibilityReport:
    """Evaluate every constraint of the joint problem at ``(theta, a)``.

    Pure reporting. ``exempt`` names constraints that are computed but not
    enforced (the FULL baseline exempts ``FULL_EXEMPT``). ``se`` overrides
    the SE vector used for the QoS and fronthaul rows, e.g. after capping.
    """
    theta = np.asarray(theta, float)
    a = np.asarray(a, float)
    if se is None:
        se = se_per_ue(theta, r, cfg)
    se = np.asarray(se, float)

    def worst(x):
        return float(max(np.max(x, initial=0.0), 0.0))

    violations = {
        "nonnegative": worst(-theta),
        "power": worst(np.sum(theta**2, axis=1) - 1.0),
        "binary": worst(np.minimum(np.abs(a), np.abs(1.0 - a))),
        "link": worst(theta**2 - a),
        "qos": worst(cfg.qos_se - se),
        "fronthaul": worst(fronthaul_load(a, se) - cfg.fronthaul_cap),
        "max_served": worst(np.sum(a, axis=1) - cfg.max_served),
        "coverage": worst(1.0 - np.sum(a, axis=0)),
    }
    tolerances = {name: tol for name in violations}
    tolerances["qos"] = tolerances["fronthaul"] = se_tol
    return FeasibilityReport(violations, tolerances, tuple(exempt))


@dataclass
class SolveOutcome:
    """Result of one solver run on one realization."""

    solver: str
    se_per_ue: np.ndarray
    fronthaul_per_ap: np.ndarray
    feasibility: FeasibilityReport
    theta: np.ndarray
    a: np.ndarray
    iterations: int = 0
    wall_time: float = 0.0
    objective_trace: list = field(default_factory=list)
    converged: bool = True
    info: dict = field(default_factory=dict)

    @property
    def sum_se(self) -> float:
        return float(np.sum(self.se_per_ue))

    @property
    def feasible(self) -> bool:
        return self.feasibility.ok


def make_outcome(solver, theta, a, r, cfg, exempt=(), se=None, **kwargs) -> SolveOutcome:
    """Score ``(theta, a)`` with the SE model and wrap it in a ``SolveOutcome``."""
    theta = np.asarray(theta, float)
    a = np.asarray(a, float)
    if se is None:
        se = se_per_ue(theta, r, cfg)
    report = check_feasibility(theta, a, r, cfg, exempt=exempt, se=se)
    return SolveOutcome(
        solver=solver,
        se_per_ue=np.asarray(se, float),
        fronthaul_per_ap=fronthaul_load(a, se),
        feasibility=report,
        theta=theta,
        a=a,
        **kwargs,
    )
