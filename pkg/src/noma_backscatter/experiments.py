"""Monte Carlo sweeps over power budget, QoS floor and cell count, with CSV output.

Trials use common random numbers: trial ``t`` of a sweep draws its channels
from a seed derived from ``(seed, t)`` alone, so every baseline, delta and sweep
value sees the same realization. Aggregation is by trial index, so the
results do not depend on the worker count.
"""
from __future__ import annotations

import csv
import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Callable, Literal, Mapping, Optional, Sequence

import numpy as np

from . import __version__
from .channel import RNG_ALGORITHM, NetworkConfig, sample_network
from .errors import ConfigError
from .solver import NetworkResult, SolverSettings, solve_network

SweepKind = Literal["ee_vs_power", "ee_vs_rmin", "convergence"]

CSV_HEADER = ("sweep_kind", "sweep_value", "baseline", "delta", "S", "mean_ee", "std_ee",
              "mean_iters", "infeasible_fraction", "seed")
WORKERS_ENV = "NOMA_BS_WORKERS"

# link-gain multipliers used by the shipped figure scenarios; with unit-mean
# gains the QoS floors of the figures are almost never attainable
FIGURE_GAINS = dict(direct_gain_mean=10.0, backscatter_gain_mean=1.0, cross_gain_mean=0.01)


@dataclass(frozen=True)
class SweepSpec:
    sweep_kind: SweepKind
    sweep_values: tuple
    baselines: tuple = ("WBS", "NBS")
    delta_values: tuple = (0.0,)
    rsu_counts: tuple = (1,)
    trials: int = 500
    base_config: NetworkConfig = field(default_factory=NetworkConfig)
    settings: SolverSettings = field(default_factory=SolverSettings)
    seed: int = 0

    def __post_init__(self):
        if self.sweep_kind not in ("ee_vs_power", "ee_vs_rmin", "convergence"):
            raise ConfigError(f"unknown sweep_kind {self.sweep_kind!r}")
        vals = tuple(float(v) for v in self.sweep_values)
        if not vals:
            raise ConfigError("sweep_values must be nonempty")
        if any(b <= a for a, b in zip(vals, vals[1:])):
            raise ConfigError("sweep_values must be strictly increasing")
        if self.sweep_kind == "convergence" and any(v < 1 or v != int(v) for v in vals):
            raise ConfigError("convergence sweep_values are iteration indices (integers >= 1)")
        if int(self.trials) < 1:
            raise ConfigError("trials must be >= 1")
        bad = set(self.baselines) - {"WBS", "NBS"}
        if bad or not self.baselines:
            raise ConfigError(f"baselines must be a nonempty subset of WBS, NBS (got {self.baselines!r})")
        if not self.delta_values or not self.rsu_counts:
            raise ConfigError("delta_values and rsu_counts must be nonempty")
        if not 0 <= int(self.seed) < 2**64:
            raise ConfigError("seed must fit in 64 unsigned bits")
        object.__setattr__(self, "sweep_values", vals)
        object.__setattr__(self, "baselines", tuple(self.baselines))
        object.__setattr__(self, "delta_values", tuple(float(d) for d in self.delta_values))
        object.__setattr__(self, "rsu_counts", tuple(int(s) for s in self.rsu_counts))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["sweep_values"] = list(self.sweep_values)
        return d


@dataclass(frozen=True)
class ResultRow:
    sweep_kind: str
    sweep_value: float
    baseline: str
    delta: float
    S: int
    mean_ee: Optional[float]
    std_ee: Optional[float]
    mean_iters: float
    infeasible_fraction: float
    seed: int


@dataclass(frozen=True)
class ShapeReport:
    is_unimodal: bool
    argmax_value: float
    # comparison name -> True when this curve is >= the other at every point
    dominance_vs: dict
    # comparison name -> pointwise flags
    dominance_points: dict = field(default_factory=dict)


@dataclass(frozen=True)
class TrialContext:
    """Identifies one curve point; passed to ``on_trial`` callbacks."""

    sweep_value: float
    baseline: str
    delta: float
    S: int
    trial: int


def trial_seed(seed: int, trial: int) -> int:
    """64-bit channel seed for one trial, independent of everything but (seed, trial)."""
    words = np.random.SeedSequence(int(seed), spawn_key=(int(trial),)).generate_state(2, np.uint32)
    return int(words[0]) | (int(words[1]) << 32)


def _point_config(spec: SweepSpec, value: float, delta: float, S: int, trial: int) -> NetworkConfig:
    cfg = replace(spec.base_config, num_cells=S, sic_imperfection=delta, rng_seed=trial_seed(spec.seed, trial))
    if spec.sweep_kind == "ee_vs_power":
        cfg = replace(cfg, power_budget_dbm=value)
    elif spec.sweep_kind == "ee_vs_rmin":
        cfg = replace(cfg, qos_rate_min=value)
    return cfg


def _run_trial(job):
    spec, S, delta, trial = job
    # the channel draw does not depend on the swept parameter
    channels = sample_network(_point_config(spec, spec.sweep_values[0], delta, S, trial))
    out = {}
    values = spec.sweep_values if spec.sweep_kind != "convergence" else (None,)
    for value in values:
        cfg = _point_config(spec, value if value is not None else 0.0, delta, S, trial)
        for baseline in spec.baselines:
            out[(value, baseline)] = solve_network(channels, cfg, spec.settings, baseline=baseline)
    return out


def worker_count() -> int:
    raw = os.environ.get(WORKERS_ENV, "1")
    try:
        n = int(raw)
    except ValueError:
        raise ConfigError(f"{WORKERS_ENV} must be an integer, got {raw!r}") from None
    if n < 1:
        raise ConfigError(f"{WORKERS_ENV} must be >= 1, got {n}")
    return n


def _stats(values: Sequence[float]) -> tuple[float, float]:
    arr = np.asarray(values, dtype=float)
    std = float(arr.std(ddof=1)) if arr.size > 1 else 0.0
    return float(arr.mean()), std


def run_sweep(spec: SweepSpec,
              on_trial: Optional[Callable[[TrialContext, NetworkResult], None]] = None,
              workers: Optional[int] = None) -> list[ResultRow]:
    """Run every (sweep value, baseline, delta, S) point over ``spec.trials`` trials.

    A trial's EE is the network total, where cells that cannot meet the QoS
    floor count as zero. ``infeasible_fraction`` is the share of infeasible
    cells over all trials; EE is absent when that share is 1.

    For ``convergence`` sweeps the values are iteration indices ``k``: the
    row's ``mean_ee`` is the network EE after ``k`` iterations (runs that
    stopped earlier hold their final value) and ``mean_iters`` is the mean
    iteration count to convergence.
    """
    workers = worker_count() if workers is None else int(workers)
    rows: list[ResultRow] = []
    for S in spec.rsu_counts:
        for delta in spec.delta_values:
            jobs = [(spec, S, delta, t) for t in range(spec.trials)]
            if workers > 1:
                with ProcessPoolExecutor(max_workers=workers) as pool:
                    results = list(pool.map(_run_trial, jobs, chunksize=max(1, len(jobs) // (4 * workers))))
            else:
                results = [_run_trial(j) for j in jobs]
            rows.extend(_aggregate(spec, S, delta, results, on_trial))
    return rows


def _aggregate(spec: SweepSpec, S: int, delta: float, results: list[dict], on_trial) -> list[ResultRow]:
    rows = []
    if spec.sweep_kind == "convergence":
        for baseline in spec.baselines:
            runs = [r[(None, baseline)] for r in results]
            if on_trial is not None:
                for t, run in enumerate(runs):
                    on_trial(TrialContext(math.nan, baseline, delta, S, t), run)
            iters = float(np.mean([run.iterations for run in runs]))
            inf = sum(len(run.infeasible_cells) for run in runs) / (len(runs) * S)
            for k in spec.sweep_values:
                ees = [_ee_after(run, int(k)) for run in runs]
                mean, std = _stats(ees) if inf < 1 else (None, None)
                rows.append(ResultRow(spec.sweep_kind, k, baseline, delta, S, mean, std, iters, inf, spec.seed))
        return rows
    for value in spec.sweep_values:
        for baseline in spec.baselines:
            runs = [r[(value, baseline)] for r in results]
            if on_trial is not None:
                for t, run in enumerate(runs):
                    on_trial(TrialContext(value, baseline, delta, S, t), run)
            inf = sum(len(run.infeasible_cells) for run in runs) / (len(runs) * S)
            mean, std = _stats([run.total_ee for run in runs]) if inf < 1 else (None, None)
            iters = float(np.mean([run.iterations for run in runs]))
            rows.append(ResultRow(spec.sweep_kind, value, baseline, delta, S, mean, std, iters, inf, spec.seed))
    return rows


def _ee_after(run: NetworkResult, k: int) -> float:
    ees = run.trace.ees
    if not ees:
        return 0.0
    return ees[min(k, len(ees)) - 1]


def summarize_shape(rows: Sequence[ResultRow], trials: int,
                    compare: Optional[Mapping[str, Sequence[ResultRow]]] = None,
                    dominance_tol: float = 0.0) -> ShapeReport:
    """Unimodality, argmax and pointwise dominance of one curve.

    A curve is unimodal when it is non-decreasing up to its maximum and
    non-increasing after it, where each step may go the wrong way by at most
    the noise band ``2 * std / sqrt(trials)`` of the larger-std endpoint.
    Dominance compares means at matching sweep values.
    """
    pts = sorted((r for r in rows if r.mean_ee is not None), key=lambda r: r.sweep_value)
    if len(pts) < 3:
        raise ValueError("summarize_shape needs at least 3 feasible points on the curve")
    if trials < 1:
        raise ValueError("trials must be >= 1")
    y = [r.mean_ee for r in pts]
    band = [2.0 * (r.std_ee or 0.0) / math.sqrt(trials) for r in pts]
    peak = int(np.argmax(y))
    unimodal = True
    for i in range(len(pts) - 1):
        b = max(band[i], band[i + 1])
        step = y[i + 1] - y[i]
        if (i < peak and step < -b) or (i >= peak and step > b):
            unimodal = False
    dominance, points = {}, {}
    for name, other in (compare or {}).items():
        ref = {r.sweep_value: r.mean_ee for r in other}
        flags = []
        for r in pts:
            o = ref.get(r.sweep_value)
            flags.append(o is None or r.mean_ee >= o - dominance_tol)
        points[name] = tuple(flags)
        dominance[name] = all(flags)
    return ShapeReport(unimodal, pts[peak].sweep_value, dominance, points)


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (int, np.integer)) and not isinstance(v, bool):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return format(float(v), ".9g")
    return str(v)


def metadata_path(path) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".meta.json")


def write_results(rows: Sequence[ResultRow], path, meta: Optional[dict] = None) -> None:
    """Write rows as CSV (9 significant digits, LF line endings) plus an optional
    JSON sidecar ``<path>.meta.json``; output is byte-stable for fixed inputs."""
    path = Path(path)
    try:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(CSV_HEADER)
            for r in rows:
                w.writerow([_fmt(getattr(r, k)) for k in CSV_HEADER])
        if meta is not None:
            with open(metadata_path(path), "w", newline="", encoding="utf-8") as fh:
                fh.write(json.dumps(meta, sort_keys=True, indent=2) + "\n")
    except OSError as exc:
        raise OSError(f"cannot write results to {path}: {exc.strerror or exc}") from exc


def sweep_metadata(spec: SweepSpec, overrides: Sequence[str] = ()) -> dict:
    return {
        "artifact_version": __version__,
        "rng_algorithm": RNG_ALGORITHM,
        "spec": spec.to_dict(),
        "overrides": list(overrides),
        "infeasible_cells_count_as_zero_ee": True,
    }


# --- figure presets -----------------------------------------------------------------

def figure_config(**kw) -> NetworkConfig:
    return NetworkConfig(**{**FIGURE_GAINS, **kw})


def fig4_spec(trials: int = 200, seed: int = 0) -> SweepSpec:
    """EE against RSU budget, 10..30 dBm, for three SIC imperfection levels."""
    return SweepSpec("ee_vs_power", (10.0, 15.0, 20.0, 25.0, 30.0), ("WBS", "NBS"), (0.3, 0.6, 0.9), (10,),
                     trials, figure_config(num_cells=10, qos_rate_min=0.5), seed=seed)


def fig5_spec(trials: int = 200, seed: int = 0) -> SweepSpec:
    """EE against the QoS floor, 0..1 bits/s/Hz, for three cell counts."""
    return SweepSpec("ee_vs_rmin", (0.0, 0.25, 0.5, 0.75, 1.0), ("WBS", "NBS"), (0.1,), (3, 5, 10),
                     trials, figure_config(power_budget_dbm=30.0), seed=seed)


def fig6_spec(trials: int = 100, seed: int = 0, max_iter: int = 10) -> SweepSpec:
    """Network EE per iteration for 1, 4 and 8 cells."""
    return SweepSpec("convergence", tuple(range(1, max_iter + 1)), ("WBS",), (0.6,), (1, 4, 8), trials,
                     figure_config(power_budget_dbm=30.0, qos_rate_min=1.0), seed=seed)
