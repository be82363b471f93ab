"""Network geometry, large-scale fading and channel-estimation statistics.

Every realization is a pure function of ``(config, seed)``: AP and UE drops on
a wrapped-around square, log-distance path loss with log-normal shadowing,
per-antenna MMSE estimate variances and the strong/weak UE partition used by
partial protective zero-forcing.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field

import numpy as np

BOLTZMANN = 1.381e-23
NOISE_TEMPERATURE = 290.0

# Log-distance model (3GPP urban microcell, as used for cell-free setups).
PATHLOSS_INTERCEPT_DB = -30.5
PATHLOSS_SLOPE_DB = 36.7
MAX_PLACEMENT_ROUNDS = 10_000


class ConfigError(ValueError):
    """Raised for parameter sets that violate the model's invariants."""


class PlacementError(RuntimeError):
    """Raised when the minimum AP separation cannot be met."""


def noise_power_w(bandwidth_hz: float, noise_figure_db: float) -> float:
    """Thermal noise power ``B * k_B * T0 * NF`` in watts."""
    return bandwidth_hz * BOLTZMANN * NOISE_TEMPERATURE * 10 ** (noise_figure_db / 10)


def noise_power_dbm(bandwidth_hz: float, noise_figure_db: float) -> float:
    return 10 * math.log10(noise_power_w(bandwidth_hz, noise_figure_db)) + 30


@dataclass(frozen=True)
class NetworkConfig:
    """Scalar parameters of one cell-free deployment.

    ``dl_power`` and ``pilot_power`` are transmit powers normalized by the
    noise power. When left as ``None`` they are derived from
    ``dl_power_w``/``pilot_power_w`` and the thermal noise of the configured
    bandwidth and noise figure. ``pilot_len`` defaults to the number of UEs.
    """

    num_aps: int = 25
    num_ues: int = 7
    antennas_per_ap: int = 2
    coherence_len: int = 200
    pilot_len: int | None = None
    pilot_power: float | None = None
    dl_power: float | None = None
    qos_se: float = 0.2
    fronthaul_cap: float = 20.0
    max_served: int = 5
    area_side: float = 1000.0
    min_ap_separation: float = 50.0
    strong_set_fraction: float = 95.0
    noise_figure: float = 9.0
    bandwidth: float = 20e6
    rng_seed: int = 0
    dl_power_w: float = 1.0
    pilot_power_w: float = 0.1
    height_diff: float = 10.0
    shadowing_std_db: float = 4.0

    def __post_init__(self):
        noise = noise_power_w(self.bandwidth, self.noise_figure)
        if self.pilot_len is None:
            object.__setattr__(self, "pilot_len", self.num_ues)
        if self.dl_power is None:
            object.__setattr__(self, "dl_power", self.dl_power_w / noise)
        if self.pilot_power is None:
            object.__setattr__(self, "pilot_power", self.pilot_power_w / noise)
        self.validate()

    def validate(self):
        problems = []
        if self.num_aps < 1 or self.num_ues < 1:
            problems.append("num_aps and num_ues must be positive")
        if self.antennas_per_ap < 1:
            problems.append("antennas_per_ap must be positive")
        if self.pilot_len < self.num_ues:
            problems.append("pilot_len must be >= num_ues (orthogonal pilots)")
        if self.pilot_len >= self.coherence_len:
            problems.append("pilot_len must be < coherence_len")
        if not 1 <= self.max_served <= self.num_ues:
            problems.append("max_served must lie in [1, num_ues]")
        if self.pilot_power <= 0 or self.dl_power <= 0:
            problems.append("powers must be positive")
        if not 0 < self.strong_set_fraction <= 100:
            problems.append("strong_set_fraction must lie in (0, 100]")
        if self.area_side <= 0:
            problems.append("area_side must be positive")
        if int(self.rng_seed) != self.rng_seed or self.rng_seed < 0:
            problems.append("rng_seed must be a nonnegative integer")
        if problems:
            raise ConfigError("; ".join(problems))

    @property
    def prelog(self) -> float:
        return (self.coherence_len - self.pilot_len) / self.coherence_len

    def replace(self, **changes) -> "NetworkConfig":
        """Copy with changes; derived quantities are recomputed unless given."""
        base = dataclasses.asdict(self)
        if "num_ues" in changes and "pilot_len" not in changes:
            base["pilot_len"] = None
        for key in ("dl_power", "pilot_power"):
            if key not in changes and any(
                k in changes for k in ("bandwidth", "noise_figure", key + "_w")
            ):
                base[key] = None
        base.update(changes)
        return NetworkConfig(**base)


PRESETS = {
    "small-25x7": dict(num_aps=25, num_ues=7, max_served=5),
    "small-36x5": dict(num_aps=36, num_ues=5, max_served=3),
    "large-150x40": dict(num_aps=150, num_ues=40, max_served=15),
    "large-300x40": dict(num_aps=300, num_ues=40, max_served=15),
}


def preset(name: str, **overrides) -> NetworkConfig:
    try:
        params = dict(PRESETS[name])
    except KeyError:
        raise ConfigError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
    params.update(overrides)
    return NetworkConfig(**params)


@dataclass(frozen=True)
class Realization:
    """One Monte-Carlo drop of the network.

    ``beta`` and ``sigma_sq`` are ``(M, K)`` arrays, ``strong_sets[m]`` holds
    the UE indices AP ``m`` zero-forces and ``delta`` is its 0/1 indicator.
    """

    ap_positions: np.ndarray
    ue_positions: np.ndarray
    beta: np.ndarray
    sigma_sq: np.ndarray
    strong_sets: tuple
    delta: np.ndarray
    seed: int | None = None
    meta: dict = field(default_factory=dict, compare=False)

    @property
    def num_aps(self) -> int:
        return self.beta.shape[0]

    @property
    def num_ues(self) -> int:
        return self.beta.shape[1]

    @property
    def strong_counts(self) -> np.ndarray:
        return np.array([len(s) for s in self.strong_sets])


def wrap_displacement(p, q, side: float) -> np.ndarray:
    """Per-axis shortest displacement magnitude on a torus of the given side."""
    d = np.abs(np.asarray(p, float) - np.asarray(q, float)) % side
    return np.minimum(d, side - d)


def wrap_distance(p, q, side: float) -> np.ndarray:
    """Euclidean distance between points on the wrapped-around square.

    Broadcasts over leading axes; the last axis holds the 2-D coordinates.
    """
    return np.sqrt(np.sum(wrap_displacement(p, q, side) ** 2, axis=-1))


def _seed_streams(seed: int):
    geo, shadow = np.random.SeedSequence(seed).spawn(2)
    return np.random.default_rng(geo), np.random.default_rng(shadow)


def build_geometry(cfg: NetworkConfig, seed: int):
    """Drop APs (with minimum wrap-around spacing) and UEs uniformly.

    Returns ``(ap_positions, ue_positions)`` with shapes ``(M, 2)``, ``(K, 2)``.
    """
    rng, _ = _seed_streams(seed)
    side, sep = cfg.area_side, cfg.min_ap_separation
    aps = np.empty((cfg.num_aps, 2))
    for m in range(cfg.num_aps):
        for _ in range(MAX_PLACEMENT_ROUNDS):
            candidate = rng.uniform(0.0, side, size=2)
            if m == 0 or wrap_distance(aps[:m], candidate, side).min() >= sep:
                aps[m] = candidate
                break
        else:
            raise PlacementError(
                f"could not place AP {m} at >= {sep} m spacing after "
                f"{MAX_PLACEMENT_ROUNDS} draws; the deployment is too dense"
            )
    ues = rng.uniform(0.0, side, size=(cfg.num_ues, 2))
    return aps, ues


def pathloss_db(distance) -> np.ndarray:
    d = np.maximum(np.asarray(distance, float), 1.0)
    return PATHLOSS_INTERCEPT_DB - PATHLOSS_SLOPE_DB * np.log10(d)


def large_scale_fading(ap_positions, ue_positions, cfg: NetworkConfig, seed: int):
    """Large-scale fading gains ``beta[m, k]`` (linear, dimensionless).

    The 3-D distance combines the wrap-around horizontal distance with the
    fixed AP-UE height difference; shadowing is i.i.d. log-normal. The gains
    are not divided by the noise power because the transmit powers already are.
    """
    _, rng = _seed_streams(seed)
    horizontal = wrap_distance(
        ap_positions[:, None, :], ue_positions[None, :, :], cfg.area_side
    )
    distance = np.sqrt(horizontal**2 + cfg.height_diff**2)
    shadowing = cfg.shadowing_std_db * rng.standard_normal(distance.shape)
    return 10 ** ((pathloss_db(distance) + shadowing) / 10)


def channel_estimate_variance(beta, rho_p: float, tau_p: float):
    """Per-antenna mean-square of the MMSE channel estimate."""
    beta = np.asarray(beta, float)
    snr = tau_p * rho_p * beta
    return snr * beta / (snr + 1.0)


def select_strong_sets(beta, cfg: NetworkConfig):
    """Strong-UE sets per AP and their indicator matrix.

    Each AP ranks UEs by gain (ties go to the lower index) and takes the
    shortest prefix holding ``strong_set_fraction`` percent of its total gain,
    capped at ``N - 1`` UEs so zero-forcing stays well posed.
    """
    beta = np.asarray(beta, float)
    M, K = beta.shape
    cap = cfg.antennas_per_ap - 1
    target = cfg.strong_set_fraction / 100.0
    delta = np.zeros((M, K), dtype=np.int8)
    sets = []
    for m in range(M):
        order = np.argsort(-beta[m], kind="stable")
        total = beta[m].sum()
        if total <= 0:
            sets.append(())
            continue
        share = np.cumsum(beta[m, order]) / total
        count = int(np.searchsorted(share, target - 1e-12)) + 1
        chosen = tuple(sorted(int(k) for k in order[: min(count, cap, K)]))
        delta[m, list(chosen)] = 1
        sets.append(chosen)
    return tuple(sets), delta


def realization_from_beta(beta, cfg: NetworkConfig, seed=None, ap_positions=None,
                          ue_positions=None) -> Realization:
    """Assemble a realization from given gains (positions are optional)."""
    beta = np.asarray(beta, float)
    M, K = beta.shape
    sigma_sq = channel_estimate_variance(beta, cfg.pilot_power, cfg.pilot_len)
    sets, delta = select_strong_sets(beta, cfg)
    return Realization(
        ap_positions=np.full((M, 2), np.nan) if ap_positions is None else ap_positions,
        ue_positions=np.full((K, 2), np.nan) if ue_positions is None else ue_positions,
        beta=beta,
        sigma_sq=sigma_sq,
        strong_sets=sets,
        delta=delta,
        seed=seed,
    )


def realization_seed(cfg: NetworkConfig, index: int) -> int:
    """Seed of realization ``index``: ``rng_seed XOR index``.

    Sweeps with different ``rng_seed`` values can share realizations
    (seed 0 index 1 equals seed 1 index 0); use seeds that differ in bits
    above the realization count when independent sweeps are needed.
    """
    if index < 0:
        raise ValueError("realization index must be nonnegative")
    return int(cfg.rng_seed) ^ int(index)


def make_realization(cfg: NetworkConfig, index: int = 0) -> Realization:
    """Realization number ``index`` of the Monte-Carlo sweep for ``cfg``."""
    seed = realization_seed(cfg, index)
    aps, ues = build_geometry(cfg, seed)
    beta = large_scale_fading(aps, ues, cfg, seed)
    return realization_from_beta(beta, cfg, seed=seed, ap_positions=aps,
                                 ue_positions=ues)


def simulate_mmse_estimate(beta: float, rho_p: float, tau_p: int, num_samples: int,
                           rng=None, return_error: bool = False):
    """Monte-Carlo check of the per-antenna MMSE estimate statistics.

    Simulates one UE sending an orthogonal pilot of length ``tau_p`` through
    ``g = sqrt(beta) * CN(0, 1)``, correlates the received block with the
    pilot and applies the MMSE scaling. Returns the empirical mean-square of
    the estimate, and with ``return_error`` also the empirical variance of the
    estimation error.
    """
    rng = np.random.default_rng(rng)
    tau_p = int(tau_p)
    n = int(num_samples)

    def cn(*shape):
        return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2)

    pilot = np.exp(2j * np.pi * np.arange(tau_p) / max(tau_p, 1))
    g = np.sqrt(beta) * cn(n)
    received = np.sqrt(rho_p) * g[:, None] * pilot.conj()[None, :] + cn(n, tau_p)
    projected = received @ pilot
    c = np.sqrt(rho_p) * beta / (tau_p * rho_p * beta + 1.0)
    estimate = c * projected
    mean_square = float(np.mean(np.abs(estimate) ** 2))
    if return_error:
        return mean_square, float(np.mean(np.abs(g - estimate) ** 2))
    return mean_square
