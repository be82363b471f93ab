"""Monte-Carlo experiment runner, CSV emitters and the run-time benchmark.

A run is described by an ``ExperimentSpec`` (JSON on disk). Realizations are
independent: each worker builds its realization from ``(rng_seed, index)``,
runs the selected solvers and returns plain records, which the parent sorts
on ``(realization, solver, ue)`` before writing. Output is therefore the same
for any worker count, apart from the wall-time column.

JSON schema::

    {
      "scenario": "small-25x7",          # label; also the preset name if "preset" is absent
      "preset": "small-25x7",            # optional base configuration
      "config": {"rng_seed": 3},         # optional NetworkConfig overrides
      "solvers": ["SCA", "APG", "FULL", "HEU"],
      "num_realizations": 200,
      "jobs": 1,
      "output_dir": "results/small"
    }
"""

from __future__ import annotations

import csv
import json
import os
import time
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from .apg import apg_solve
from .baselines import full_solve, heu_solve
from .network import PRESETS, ConfigError, NetworkConfig, make_realization, preset
from .sca import sca_solve

SOLVERS = {
    "SCA": sca_solve,
    "APG": apg_solve,
    "FULL": full_solve,
    "HEU": heu_solve,
}

UE_HEADER = ("realization", "solver", "ue", "se_bits_hz")
SUMMARY_HEADER = ("realization", "solver", "sum_se", "feasible", "converged",
                  "iterations", "wall_time_s", "error")
CDF_HEADER = ("sum_se", "probability")
BENCH_HEADER = ("solver", "realizations", "mean_wall_time_s", "median_sum_se",
                "ratio_to_sca")


def _fmt(x: float) -> str:
    """Shortest round-trip text for a float, so reruns are byte-identical."""
    return repr(float(x))


@dataclass(frozen=True)
class ExperimentSpec:
    """One Monte-Carlo sweep."""

    scenario: str
    config: NetworkConfig = field(default_factory=NetworkConfig)
    solvers: tuple = ("SCA", "APG", "FULL", "HEU")
    num_realizations: int = 1
    jobs: int = 1
    output_dir: str = "results"

    def __post_init__(self):
        object.__setattr__(self, "solvers", tuple(self.solvers))
        self.validate()

    def validate(self):
        if isinstance(self.num_realizations, bool) or not isinstance(self.num_realizations, int):
            raise ConfigError("num_realizations must be an integer")
        if self.num_realizations < 1:
            raise ConfigError(f"num_realizations must be >= 1, got {self.num_realizations}")
        if not self.solvers:
            raise ConfigError("at least one solver must be selected")
        unknown = [s for s in self.solvers if s not in SOLVERS]
        if unknown:
            raise ConfigError(f"unknown solvers {unknown}; choose from {sorted(SOLVERS)}")
        if len(set(self.solvers)) != len(self.solvers):
            raise ConfigError("solvers must not repeat")
        if not isinstance(self.jobs, int) or self.jobs < 1:
            raise ConfigError(f"jobs must be a positive integer, got {self.jobs!r}")
        self.config.validate()

    def replace(self, **changes) -> "ExperimentSpec":
        values = {f.name: getattr(self, f.name) for f in fields(self)}
        values.update(changes)
        return ExperimentSpec(**values)

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentSpec":
        if not isinstance(data, dict):
            raise ConfigError("spec must be a JSON object")
        known = {"scenario", "preset", "config", "solvers", "num_realizations", "jobs",
                 "output_dir"}
        extra = sorted(set(data) - known)
        if extra:
            raise ConfigError(f"unknown spec keys {extra}")
        if "scenario" not in data:
            raise ConfigError("spec needs a 'scenario'")
        scenario = str(data["scenario"])
        base = data.get("preset", scenario if scenario in PRESETS else None)
        overrides = data.get("config", {})
        if not isinstance(overrides, dict):
            raise ConfigError("'config' must be an object")
        try:
            cfg = preset(base, **overrides) if base is not None else NetworkConfig(**overrides)
        except TypeError as exc:
            raise ConfigError(f"bad config override: {exc}") from exc
        kwargs = {k: data[k] for k in ("solvers", "num_realizations", "jobs", "output_dir")
                  if k in data}
        if "solvers" in kwargs:
            if isinstance(kwargs["solvers"], str) or not isinstance(kwargs["solvers"], list):
                raise ConfigError("'solvers' must be a list of names")
            kwargs["solvers"] = tuple(s.upper() for s in kwargs["solvers"])
        return cls(scenario=scenario, config=cfg, **kwargs)

    @classmethod
    def load(cls, path) -> "ExperimentSpec":
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read spec {path}: {exc}") from exc
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON at line {exc.lineno} "
                              f"column {exc.colno}: {exc.msg}") from exc
        return cls.from_dict(data)


# -- running -------------------------------------------------------------------

def solve_realization(cfg: NetworkConfig, index: int, solvers) -> list:
    """Run ``solvers`` on realization ``index``; failures become records, not exceptions."""
    r = make_realization(cfg, index)
    records = []
    for name in solvers:
        t0 = time.perf_counter()
        try:
            out = SOLVERS[name](r, cfg)
            records.append(dict(
                realization=index, solver=name, se=np.asarray(out.se_per_ue, float),
                sum_se=out.sum_se, feasible=out.feasible, converged=bool(out.converged),
                iterations=int(out.iterations), wall_time=out.wall_time, error=""))
        except Exception as exc:  # a failed solve must not abort the sweep
            records.append(dict(
                realization=index, solver=name, se=np.full(cfg.num_ues, np.nan),
                sum_se=float("nan"), feasible=False, converged=False, iterations=0,
                wall_time=time.perf_counter() - t0,
                error=f"{type(exc).__name__}: {exc}".replace("\n", " ")[:500],
                traceback=traceback.format_exc()))
    return records


def _solve_task(task):
    cfg, index, solvers = task
    return solve_realization(cfg, index, solvers)


def collect_records(spec: ExperimentSpec, jobs: int | None = None) -> list:
    """All records of the sweep, sorted on ``(realization, solver)``."""
    jobs = spec.jobs if jobs is None else jobs
    tasks = [(spec.config, i, spec.solvers) for i in range(spec.num_realizations)]
    if jobs <= 1 or len(tasks) <= 1:
        chunks = [_solve_task(t) for t in tasks]
    else:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            chunks = list(pool.map(_solve_task, tasks))
    records = [rec for chunk in chunks for rec in chunk]
    records.sort(key=lambda rec: (rec["realization"], rec["solver"]))
    return records


def planned_rows(spec: ExperimentSpec) -> dict:
    """Row counts of every output file, computed without running any solver."""
    n, s = spec.num_realizations, len(spec.solvers)
    return {
        "ue_se.csv": n * s * spec.config.num_ues,
        "summary.csv": n * s,
        **{f"cdf_{name}.csv": n for name in spec.solvers},
    }


def write_ue_rows(path, records):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(UE_HEADER)
        for rec in records:
            for k, se in enumerate(rec["se"]):
                w.writerow((rec["realization"], rec["solver"], k, _fmt(se)))


def write_summary_rows(path, records):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SUMMARY_HEADER)
        for rec in records:
            w.writerow((rec["realization"], rec["solver"], _fmt(rec["sum_se"]),
                        int(rec["feasible"]), int(rec["converged"]), rec["iterations"],
                        f"{rec['wall_time']:.6f}", rec["error"]))


def emit_cdf(values, grid: int | None = None) -> list:
    """Empirical CDF as ``(value, probability)`` pairs.

    With ``grid=None`` every sorted value ``x_(i)`` is paired with ``i/n``.
    With ``grid=g`` the CDF is resampled at ``g`` evenly spaced probabilities
    in ``(0, 1]`` using ``cdf_quantile``.
    """
    v = np.sort(np.asarray(values, float).ravel())
    if v.size == 0:
        raise ValueError("emit_cdf needs at least one value")
    if grid is None:
        n = v.size
        return [(float(x), (i + 1) / n) for i, x in enumerate(v)]
    if grid < 1:
        raise ValueError("grid must be >= 1")
    pairs = emit_cdf(v)
    probs = np.arange(1, grid + 1) / grid
    return [(cdf_quantile(pairs, p), float(p)) for p in probs]


def cdf_quantile(pairs, p: float) -> float:
    """Quantile of the sample behind ``pairs`` by linear interpolation.

    Order statistics sit at positions ``(i - 1)/(n - 1)``, so ``p = 0.5``
    gives the usual median (mean of the middle two for even ``n``).
    """
    v = np.array([x for x, _ in pairs], float)
    if v.size == 1:
        return float(v[0])
    return float(np.interp(p * (v.size - 1), np.arange(v.size), v))


def write_cdf(path, pairs):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CDF_HEADER)
        for x, prob in pairs:
            w.writerow((_fmt(x), _fmt(prob)))


@dataclass
class MonteCarloResult:
    spec: ExperimentSpec
    records: list
    files: dict

    def sum_se(self, solver: str) -> np.ndarray:
        return np.array([r["sum_se"] for r in self.records if r["solver"] == solver])

    def medians(self) -> dict:
        out = {}
        for name in self.spec.solvers:
            vals = self.sum_se(name)
            vals = vals[np.isfinite(vals)]
            out[name] = float(np.median(vals)) if vals.size else float("nan")
        return out


def run_monte_carlo(spec: ExperimentSpec, jobs: int | None = None,
                    dry_run: bool = False):
    """Run the sweep and write ``ue_se.csv``, ``summary.csv`` and ``cdf_<solver>.csv``.

    With ``dry_run`` nothing is solved or written; the planned row counts
    are returned instead.
    """
    if dry_run:
        return planned_rows(spec)
    records = collect_records(spec, jobs)
    out = Path(spec.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    files = {"ue_se.csv": out / "ue_se.csv", "summary.csv": out / "summary.csv"}
    write_ue_rows(files["ue_se.csv"], records)
    write_summary_rows(files["summary.csv"], records)
    for name in spec.solvers:
        vals = [r["sum_se"] for r in records if r["solver"] == name]
        path = out / f"cdf_{name}.csv"
        write_cdf(path, emit_cdf(vals))
        files[path.name] = path
    return MonteCarloResult(spec, records, files)


def bench(spec: ExperimentSpec, jobs: int | None = None) -> list:
    """Mean wall time and median sum SE per solver, with the time ratio to SCA.

    Writes ``bench.csv`` into ``spec.output_dir`` and returns the rows.
    """
    records = collect_records(spec, jobs)
    rows = []
    sca_time = None
    means = {}
    for name in spec.solvers:
        recs = [r for r in records if r["solver"] == name]
        means[name] = float(np.mean([r["wall_time"] for r in recs]))
    sca_time = means.get("SCA")
    for name in spec.solvers:
        vals = np.array([r["sum_se"] for r in records if r["solver"] == name])
        ratio = means[name] / sca_time if sca_time else float("nan")
        rows.append((name, spec.num_realizations, means[name],
                     float(np.nanmedian(vals)) if np.isfinite(vals).any() else float("nan"),
                     ratio))
    out = Path(spec.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "bench.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(BENCH_HEADER)
        for row in rows:
            w.writerow((row[0], row[1], f"{row[2]:.6f}", _fmt(row[3]), f"{row[4]:.6f}"))
    return rows


def default_jobs() -> int:
    return max(1, os.cpu_count() or 1)
