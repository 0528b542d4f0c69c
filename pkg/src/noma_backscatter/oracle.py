"""Brute-force verifier for the per-cell subproblem, plus the concavity batteries.

The grid search shares only the SINR/rate/constraint evaluators with the
solver; it knows nothing about closed forms or multipliers.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .channel import Allocation, CellChannels, NetworkConfig, dbm_to_watts, sample_network
from .errors import ConfigError
from .objective import check_constraints, sum_rate

ALPHA_RANGE = (0.0, 0.5)
BETA_RANGE = (0.0, 1.0)


@dataclass(frozen=True)
class GridSpec:
    """Grid over alpha_n in [0, 0.5] and beta in [0, 1], ``steps`` intervals each
    (so ``steps + 1`` points and a resolution of range/steps)."""

    alpha_steps: int = 1000
    beta_steps: int = 1000

    def __post_init__(self):
        if int(self.alpha_steps) < 2 or int(self.beta_steps) < 2:
            raise ConfigError("grid needs at least 2 steps per axis")

    @property
    def alpha_resolution(self) -> float:
        return (ALPHA_RANGE[1] - ALPHA_RANGE[0]) / self.alpha_steps

    @property
    def beta_resolution(self) -> float:
        return (BETA_RANGE[1] - BETA_RANGE[0]) / self.beta_steps

    def alphas(self) -> np.ndarray:
        return np.linspace(*ALPHA_RANGE, self.alpha_steps + 1)

    def betas(self) -> np.ndarray:
        return np.linspace(*BETA_RANGE, self.beta_steps + 1)


@dataclass(frozen=True)
class GridResult:
    feasible: bool
    alpha_n: float = math.nan
    beta: float = math.nan
    ee: float = math.nan
    n_feasible: int = 0


def grid_search_cell(ch: CellChannels, delta, i_n, i_f, noise, r_min, p_tot_dbm, p_c,
                     grid: Optional[GridSpec] = None, beta_fixed: Optional[float] = None) -> GridResult:
    """Exhaustive search of the cell EE over (alpha_n, beta) with alpha_f = 1 - alpha_n.

    The RSU transmits at the budget. ``beta_fixed`` collapses the beta axis to
    one value. Returns an infeasible result when no grid point passes every
    constraint.
    """
    grid = grid or GridSpec()
    p = dbm_to_watts(p_tot_dbm)
    an = grid.alphas()[:, None]
    b = np.array([[float(beta_fixed)]]) if beta_fixed is not None else grid.betas()[None, :]
    a = Allocation(an, 1.0 - an, b, p)
    ok = check_constraints(ch, a, delta, i_n, i_f, noise, r_min, p_tot_dbm).all_ok
    ok = np.broadcast_to(ok, (an.shape[0], b.shape[1]))
    if not ok.any():
        return GridResult(False)
    power = p * 1.0 + p_c
    ee = np.where(ok, sum_rate(ch, a, delta, i_n, i_f, noise) / power, -np.inf)
    i, j = np.unravel_index(np.argmax(ee), ee.shape)
    return GridResult(True, float(an[i, 0]), float(b[0, j]), float(ee[i, j]), int(ok.sum()))


@dataclass(frozen=True)
class Certificate:
    passed: bool
    # solution - (oracle - rel_tol * max(1, oracle)); >= 0 iff passed
    margin: float
    # solution - oracle; positive when the solver beats the discrete grid
    gap: float


def certify(solution_ee: float, oracle_ee: float, rel_tol: float = 1e-3) -> Certificate:
    if not (math.isfinite(solution_ee) and math.isfinite(oracle_ee)):
        raise ValueError("certify needs finite EE values")
    if oracle_ee < 0:
        raise ValueError("oracle EE must be >= 0")
    floor = oracle_ee - rel_tol * max(1.0, oracle_ee)
    margin = solution_ee - floor
    return Certificate(margin >= 0, margin, solution_ee - oracle_ee)


# --- concavity batteries ------------------------------------------------------------

@dataclass(frozen=True)
class BatteryResult:
    checks: int
    violations: int
    worst: float
    # index of each violating instance/point
    failed: tuple = ()

    @property
    def passed(self) -> bool:
        return self.violations == 0


BATTERY_DELTAS = (0.0, 0.1, 0.3, 0.6, 0.9)


def _random_scenario(rng: np.random.Generator, config: NetworkConfig):
    seed = int(rng.integers(2**63))
    ch = sample_network(NetworkConfig(
        num_cells=1, rng_seed=seed,
        direct_gain_mean=config.direct_gain_mean,
        backscatter_gain_mean=config.backscatter_gain_mean,
        cross_gain_mean=config.cross_gain_mean,
    ))[0]
    delta = float(rng.choice(BATTERY_DELTAS))
    p = dbm_to_watts(float(rng.uniform(10.0, 30.0)))
    return ch, delta, p


def beta_concavity_battery(instances: int = 100, beta_samples: int = 20, seed: int = 0,
                   config: Optional[NetworkConfig] = None, h: float = 1e-3,
                   tol: float = 1e-6) -> BatteryResult:
    """Concavity and monotonicity of the cell sum rate in the reflection coefficient.

    Each instance is a random cell with a feasible power split (the middle of
    the exact feasible alpha interval at beta = 1) at the configured QoS floor.
    At ``beta_samples`` points of (h, 1 - h) the central second difference must
    be <= tol and the forward first difference >= -tol.
    """
    from .solver import feasible_alpha_interval

    config = config or NetworkConfig()
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    violations, worst, failed, checks = 0, -math.inf, [], 0
    done = 0
    while done < instances:
        ch, delta, p = _random_scenario(rng, config)
        lo, hi = feasible_alpha_interval(ch, 1.0, p, delta, 0.0, 0.0, config.noise_variance,
                                         config.qos_rate_min)
        if lo > hi:
            continue
        an = 0.5 * (lo + hi)
        b = np.sort(rng.uniform(h, 1.0 - h, beta_samples))

        def r(beta):
            return sum_rate(ch, Allocation(an, 1.0 - an, beta, p), delta, 0.0, 0.0, config.noise_variance)

        second = r(b + h) - 2.0 * r(b) + r(b - h)
        first = r(b + h) - r(b)
        bad = (second > tol) | (first < -tol)
        checks += beta_samples
        worst = max(worst, float(second.max()), float((-first).max()))
        if bad.any():
            violations += int(bad.sum())
            failed.append(done)
        done += 1
    return BatteryResult(checks, violations, worst, tuple(failed))


def rate_hessian(ch: CellChannels, a: Allocation, delta, i_n, i_f, noise, h: float = 1e-4) -> np.ndarray:
    """Central finite-difference Hessian of the sum rate in (alpha_n, alpha_f)."""
    def f(dn, df):
        return float(sum_rate(ch, Allocation(a.alpha_n + dn, a.alpha_f + df, a.beta, a.p_s_w),
                              delta, i_n, i_f, noise))

    f0 = f(0, 0)
    h11 = (f(h, 0) - 2 * f0 + f(-h, 0)) / h**2
    h22 = (f(0, h) - 2 * f0 + f(0, -h)) / h**2
    h12 = (f(h, h) - f(h, -h) - f(-h, h) + f(-h, -h)) / (4 * h * h)
    return np.array([[h11, h12], [h12, h22]])


def alpha_hessian_battery(points: int = 100, seed: int = 0, config: Optional[NetworkConfig] = None,
                   h: float = 1e-4, deltas=BATTERY_DELTAS) -> BatteryResult:
    """Negative definiteness of the sum-rate Hessian in (alpha_n, alpha_f).

    Points are interior: alpha_n ~ U(0.01, 0.49), alpha_f ~ U(alpha_n, 1 - alpha_n),
    beta ~ U(0, 1), a random budget in 10..30 dBm and delta drawn from ``deltas``.
    A point violates when a diagonal entry is >= 0 or the determinant is <= 0.
    ``worst`` is the largest of (H11, H22, -det) seen.
    """
    config = config or NetworkConfig()
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    violations, worst, failed = 0, -math.inf, []
    for k in range(points):
        ch, _, p = _random_scenario(rng, config)
        delta = float(rng.choice(deltas))
        an = float(rng.uniform(0.01, 0.49))
        af = float(rng.uniform(an, 1.0 - an))
        beta = float(rng.uniform(0.0, 1.0))
        H = rate_hessian(ch, Allocation(an, af, beta, p), delta, 0.0, 0.0, config.noise_variance, h)
        det = H[0, 0] * H[1, 1] - H[0, 1] ** 2
        score = max(H[0, 0], H[1, 1], -det)
        worst = max(worst, score)
        if not (H[0, 0] < 0 and H[1, 1] < 0 and det > 0):
            violations += 1
            failed.append(k)
    return BatteryResult(points, violations, worst, tuple(failed))


# --- randomized certification run ------------------------------------------------

CERT_DELTAS = (0.0, 0.3)
CERT_RMINS = (0.0, 0.5)


@dataclass(frozen=True)
class CertRecord:
    seed: int
    delta: float
    r_min: float
    solver_ee: float
    oracle: GridResult
    certificate: Certificate
    # the solver's CellResult
    result: object


@dataclass(frozen=True)
class CertificationRun:
    records: tuple
    skipped_infeasible: int
    rel_tol: float

    @property
    def passed(self) -> int:
        return sum(r.certificate.passed for r in self.records)

    @property
    def worst_margin(self) -> float:
        return min(r.certificate.margin for r in self.records)


def certify_random(instances: int = 100, grid: Optional[GridSpec] = None, seed: int = 0,
                   config: Optional[NetworkConfig] = None, rel_tol: float = 1e-3,
                   settings=None, deltas=CERT_DELTAS, r_mins=CERT_RMINS) -> CertificationRun:
    """Solve random single-cell instances and certify each against the grid oracle.

    Instance ``k`` uses ``deltas[k % len]`` and ``r_mins[(k // len(deltas)) % len]``;
    channel draws the oracle finds infeasible are skipped and counted. The
    budget, noise, circuit power and gain scales come from ``config``.
    """
    from .solver import solve_cell

    config = config or NetworkConfig()
    grid = grid or GridSpec()
    if instances < 1:
        raise ConfigError("instances must be >= 1")
    records, skipped, draw = [], 0, 0
    while len(records) < instances:
        k = len(records)
        delta = float(deltas[k % len(deltas)])
        r_min = float(r_mins[(k // len(deltas)) % len(r_mins)])
        words = np.random.SeedSequence(int(seed), spawn_key=(draw,)).generate_state(2, np.uint32)
        ch_seed = int(words[0]) | (int(words[1]) << 32)
        draw += 1
        ch = sample_network(NetworkConfig(
            num_cells=1, rng_seed=ch_seed, direct_gain_mean=config.direct_gain_mean,
            backscatter_gain_mean=config.backscatter_gain_mean, cross_gain_mean=config.cross_gain_mean))[0]
        args = (ch, delta, 0.0, 0.0, config.noise_variance, r_min, config.power_budget_dbm, config.circuit_power_w)
        oracle = grid_search_cell(*args, grid=grid)
        if not oracle.feasible:
            skipped += 1
            continue
        res = solve_cell(*args, settings)
        sol = float(res.ee.ee) if res.feasible else 0.0
        records.append(CertRecord(ch_seed, delta, r_min, sol, oracle, certify(sol, oracle.ee, rel_tol), res))
    return CertificationRun(tuple(records), skipped, rel_tol)
