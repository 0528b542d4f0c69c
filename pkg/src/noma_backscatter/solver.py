"""Two-stage alternating EE maximization: reflection coefficient, then power split.

Per cell, one outer (Dinkelbach) iteration does

1. beta stage: KKT candidates for the reflection coefficient, i.e. the
   closed-form value from the active rate constraint and the active upper
   bound beta = 1, keeping the feasible one with the larger ``F(theta)``;
2. alpha stage: stationary points of the Lagrangian in ``alpha_n`` (with
   ``alpha_f = 1 - alpha_n``) from the quadratic ``x a^2 + y a + z = 0``,
   together with the active-constraint endpoints of the feasible interval;
3. projected subgradient step on the Lagrange multipliers;
4. Dinkelbach update ``theta <- R_sum / P_T``.

The RSU transmits at its full budget. Co-channel interference then depends only
on the budgets, so the multi-cell Gauss-Seidel sweep settles after one pass
plus one confirming pass.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Literal, NamedTuple, Optional, Sequence

from scipy.optimize import brentq

from .channel import Allocation, CellChannels, NetworkConfig, dbm_to_watts, interference
from .errors import ConfigError, DegenerateChannelError
from .objective import (
    EEBreakdown,
    FeasibilityReport,
    cell_ee,
    check_constraints,
    dinkelbach_value,
)

LN2 = math.log(2.0)

RootPolicy = Literal["feasible-best", "plus", "minus"]
Baseline = Literal["WBS", "NBS"]

# alpha_n <= alpha_f under C4 equality
ALPHA_N_MAX = 0.5
PROBE_ALPHA_N = 0.25


@dataclass(frozen=True)
class Multipliers:
    """Lagrange multipliers and the Dinkelbach parameter, all kept >= 0."""

    mu_n: float = 0.0
    mu_f: float = 0.0
    lambda_: float = 0.0
    tau: float = 0.0
    eta: float = 0.0
    theta: float = 0.0


@dataclass(frozen=True)
class SolverSettings:
    dinkelbach_tol: float = 1e-4
    sweep_tol: float = 1e-4
    max_outer_iters: int = 20
    max_inner_iters: int = 50
    max_sweeps: int = 50
    subgradient_step0: float = 0.1
    # step_t = step0 / t**step_decay
    step_decay: float = 0.5
    root_branch_policy: RootPolicy = "feasible-best"

    def __post_init__(self):
        if not (self.dinkelbach_tol > 0 and self.sweep_tol > 0):
            raise ConfigError("tolerances must be > 0")
        for name in ("max_outer_iters", "max_inner_iters", "max_sweeps"):
            if int(getattr(self, name)) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if not self.subgradient_step0 > 0:
            raise ConfigError("subgradient_step0 must be > 0")
        if not 0 < self.step_decay <= 1:
            raise ConfigError("step_decay must lie in (0, 1]")
        if self.root_branch_policy not in ("feasible-best", "plus", "minus"):
            raise ConfigError(f"unknown root_branch_policy {self.root_branch_policy!r}")

    def step(self, t: int) -> float:
        return self.subgradient_step0 / t ** self.step_decay


@dataclass(frozen=True)
class IterationRecord:
    """One outer iteration. For a single cell the tuples have length 1; for a
    network ``theta`` holds each cell's parameter and ``f_value`` is the sum."""

    theta: tuple
    f_value: float
    total_ee: float
    allocations: tuple
    reports: tuple


@dataclass
class SolveTrace:
    records: list = field(default_factory=list)

    def __len__(self):
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    @property
    def ees(self) -> list[float]:
        return [r.total_ee for r in self.records]

    @property
    def f_values(self) -> list[float]:
        return [r.f_value for r in self.records]


@dataclass
class CellResult:
    status: Literal["converged", "max_iter", "infeasible"]
    allocation: Optional[Allocation]
    multipliers: Multipliers
    trace: SolveTrace
    report: FeasibilityReport
    ee: Optional[EEBreakdown] = None

    @property
    def feasible(self) -> bool:
        return self.status != "infeasible"

    @property
    def converged(self) -> bool:
        return self.status == "converged"

    @property
    def iterations(self) -> int:
        return len(self.trace)

    @property
    def thetas(self) -> list[float]:
        return [r.theta[0] for r in self.trace]


@dataclass
class NetworkResult:
    cells: list[CellResult]
    trace: SolveTrace
    sweeps: int
    iterations: int
    converged: bool
    interference: list[tuple[float, float]]

    @property
    def allocations(self) -> list[Optional[Allocation]]:
        return [c.allocation for c in self.cells]

    @property
    def infeasible_cells(self) -> list[int]:
        return [s for s, c in enumerate(self.cells) if not c.feasible]

    @property
    def total_ee(self) -> float:
        # cells that cannot meet QoS deliver no admissible rate
        return float(sum(c.ee.ee for c in self.cells if c.feasible))


# --- beta stage -----------------------------------------------------------------

def reflection_closed_form(ch: CellChannels, alpha_n: float, p_s: float, r_min: float,
                           alpha_n_star: Optional[float] = None) -> float:
    """Reflection coefficient from the active near-vehicle rate constraint, clamped to [0, 1].

    The numerator uses ``alpha_n_star`` (defaults to the current iterate), so
    the power terms cancel and the value depends on the channels only.
    """
    path = ch.g_k_sq * ch.h_nk_sq
    if not path > 0:
        raise DegenerateChannelError("backscatter path gain is zero; reflection coefficient undefined")
    if not (alpha_n > 0 and p_s > 0):
        raise DegenerateChannelError("near-vehicle power share is zero; reflection coefficient undefined")
    star = alpha_n if alpha_n_star is None else alpha_n_star
    raw = (2.0 ** r_min - 1.0) * p_s * star * ch.g_n_sq / (p_s * alpha_n * path)
    return min(max(raw, 0.0), 1.0)


# --- alpha stage ----------------------------------------------------------------

class CoefficientTerms(NamedTuple):
    near_gain: float
    far_gain: float
    lam_hat: float
    omega_hat: float
    psi_n: float
    psi_f: float
    delta_hat: float
    gamma_f: float


class Quadratic(NamedTuple):
    x: float
    y: float
    z: float


def coefficient_terms(ch: CellChannels, a: Allocation, delta, i_n, i_f, noise, r_min,
                      mults: Multipliers) -> CoefficientTerms:
    """Building blocks of the stationarity quadratic, normalized by the RSU power.

    With ``p_s = 1`` these are exactly the grouped terms of the derivation.
    ``omega_hat`` is the alpha_n-slope of the far vehicle's received power once
    ``alpha_f = 1 - alpha_n`` is substituted, which is identically zero.
    ``gamma_f`` is evaluated at the allocation ``a``.
    """
    p = a.p_s_w
    g_near = ch.near_gain(a.beta)
    g_far = ch.far_gain(a.beta)
    lam_hat = g_near - ch.g_n_sq * delta
    omega_hat = g_far - g_far
    psi_n = ch.g_n_sq * delta + (i_n + noise) / p
    psi_f = g_far + (i_f + noise) / p
    c = 2.0 ** r_min - 1.0
    delta_hat = mults.theta * p - mults.mu_n * g_near + mults.mu_f * c * g_far + mults.eta
    gamma_f = p * a.alpha_f * g_far / (p * a.alpha_n * g_far + i_f + noise)
    return CoefficientTerms(g_near, g_far, lam_hat, omega_hat, psi_n, psi_f, delta_hat, gamma_f)


def quadratic_from_terms(t: CoefficientTerms) -> Quadratic:
    ld = LN2 * t.delta_hat
    x = -ld * t.lam_hat * t.omega_hat
    y = (t.near_gain * t.omega_hat - t.gamma_f * t.far_gain * t.lam_hat
         - ld * t.lam_hat * t.psi_f - ld * t.omega_hat * t.psi_n)
    z = t.near_gain * t.psi_f - t.gamma_f * t.far_gain * t.psi_n - ld * t.psi_n * t.psi_f
    return Quadratic(x, y, z)


def quadratic_coefficients(ch: CellChannels, a: Allocation, delta, i_n, i_f, noise, r_min,
                           mults: Multipliers) -> Quadratic:
    """``(x, y, z)`` such that ``x a^2 + y a + z = 0`` at a stationary ``alpha_n``.

    Obtained by clearing denominators in ``dL/d alpha_n = 0`` with
    ``alpha_f = 1 - alpha_n``. The far vehicle's SINR enters as a value taken
    at ``a``; see :func:`self_consistent_roots` for closing that loop.
    """
    return quadratic_from_terms(coefficient_terms(ch, a, delta, i_n, i_f, noise, r_min, mults))


def quadratic_roots(x: float, y: float, z: float) -> dict[str, float]:
    """Real roots keyed by branch (``"plus"``/``"minus"``); one ``"linear"`` root when x == 0."""
    if x == 0.0:
        if y == 0.0:
            raise ValueError("degenerate quadratic: x and y are both zero")
        return {"linear": -z / y}
    disc = y * y - 4.0 * x * z
    if disc < 0:
        return {}
    sq = math.sqrt(disc)
    # cancellation-free evaluation of (-y +- sq) / 2x
    q = -0.5 * (y + math.copysign(sq, y))
    r1 = q / x
    r2 = z / q if q != 0.0 else r1
    plus, minus = ((r1, r2) if y < 0 else (r2, r1))
    return {"plus": plus, "minus": minus}


def split_candidates(x: float, y: float, z: float, bounds=(0.0, ALPHA_N_MAX)) -> list[float]:
    """Roots after ``[.]^+`` and clipping into ``bounds``; the bounds themselves if no real root."""
    lo, hi = bounds
    roots = quadratic_roots(x, y, z)
    if not roots:
        return [lo, hi]
    return sorted({min(max(r, 0.0, lo), hi) for r in roots.values()})


def power_split_closed_form(x: float, y: float, z: float, policy: RootPolicy = "feasible-best",
                            bounds=(0.0, ALPHA_N_MAX),
                            score: Optional[Callable[[float], float]] = None) -> tuple[float, float]:
    """Closed-form power split ``(alpha_n, 1 - alpha_n)``.

    ``bounds`` is the feasible interval for alpha_n. Under ``feasible-best`` the
    candidates are the clipped roots plus both interval ends (where C1, C2 or
    the NOMA ordering is active) and the ``score`` maximizer wins.
    """
    lo, hi = bounds
    roots = quadratic_roots(x, y, z)
    if policy == "feasible-best" or not roots:
        if score is None:
            raise ValueError("feasible-best selection needs a score function")
        cands = split_candidates(x, y, z, bounds) + [lo, hi]
        best = max(cands, key=score)
    else:
        r = roots.get(policy, roots.get("linear"))
        best = min(max(r, 0.0, lo), hi)
    return best, 1.0 - best


def feasible_alpha_interval(ch: CellChannels, beta: float, p: float, delta, i_n, i_f, noise,
                            r_min) -> tuple[float, float]:
    """Exact interval of alpha_n (with alpha_f = 1 - alpha_n) satisfying C1, C2 and alpha_n <= 0.5.

    C1 is linear increasing in alpha_n and C2 linear decreasing, so each gives
    one endpoint. Empty when ``lo > hi``.
    """
    c = 2.0 ** r_min - 1.0
    g_near = ch.near_gain(beta)
    g_far = ch.far_gain(beta)
    if c == 0.0:
        return 0.0, ALPHA_N_MAX
    lo = c * (p * ch.g_n_sq * delta + i_n + noise) / (p * (g_near + c * ch.g_n_sq * delta))
    hi = (p * g_far - c * (i_f + noise)) / (p * g_far * (1.0 + c))
    return max(lo, 0.0), min(hi, ALPHA_N_MAX)


def self_consistent_roots(ch: CellChannels, beta: float, p: float, delta, i_n, i_f, noise, r_min,
                          mults: Multipliers, bounds, max_iter: int = 50, scan: int = 8) -> list[float]:
    """Points in ``bounds`` that are roots of the quadratic built at themselves.

    The coefficients depend on the far SINR, which depends on alpha_n. A
    fixed point of ``alpha -> root(coefficients(alpha))`` is an exact zero of
    the Lagrangian derivative. Found by bracketing on a coarse scan and refining
    with Brent's method.
    """
    lo, hi = bounds
    if not hi > lo:
        return []

    def mismatch(alpha, branch):
        a = Allocation(alpha, 1.0 - alpha, beta, p)
        roots = quadratic_roots(*quadratic_coefficients(ch, a, delta, i_n, i_f, noise, r_min, mults))
        r = roots.get(branch, roots.get("linear"))
        return math.nan if r is None else r - alpha

    mid = 0.5 * (lo + hi)
    probe = Allocation(mid, 1.0 - mid, beta, p)
    x0, _, _ = quadratic_coefficients(ch, probe, delta, i_n, i_f, noise, r_min, mults)
    branches = ("linear",) if x0 == 0.0 else ("plus", "minus")
    grid = [lo + (hi - lo) * k / scan for k in range(scan + 1)]
    found = []
    for branch in branches:
        vals = [mismatch(g, branch) for g in grid]
        for (a0, v0), (a1, v1) in zip(zip(grid, vals), zip(grid[1:], vals[1:])):
            if math.isnan(v0) or math.isnan(v1):
                continue
            if v0 == 0.0:
                found.append(a0)
                continue
            if v0 * v1 < 0:
                root = brentq(mismatch, a0, a1, args=(branch,), xtol=1e-14, maxiter=max_iter,
                              full_output=True, disp=False)[0]
                # a sign change across a pole of the root map is not a fixed point
                if abs(mismatch(root, branch)) <= 1e-9:
                    found.append(root)
        if vals[-1] == 0.0:
            found.append(grid[-1])
    return sorted(set(found))


# --- multipliers ----------------------------------------------------------------

def update_multipliers(mults: Multipliers, report: FeasibilityReport, step: float) -> Multipliers:
    """Projected subgradient step: ``m <- max(0, m - step * residual)``."""
    if not step > 0:
        raise ValueError("step must be > 0")
    return replace(
        mults,
        mu_n=max(0.0, mults.mu_n - step * report.c1_slack),
        mu_f=max(0.0, mults.mu_f - step * report.c2_slack),
        lambda_=max(0.0, mults.lambda_ - step * report.budget_residual),
        tau=max(0.0, mults.tau - step * report.beta_residual),
        eta=max(0.0, mults.eta - step * report.split_residual),
    )


# --- per-cell and network solvers -----------------------------------------------

def solve_cell(ch: CellChannels, delta, i_n, i_f, noise, r_min, p_tot_dbm, p_c,
               settings: Optional[SolverSettings] = None, *, beta_fixed: Optional[float] = None,
               warm_start: Optional[CellResult] = None) -> CellResult:
    """Alternating beta / alpha optimization of one cell under a Dinkelbach outer loop.

    ``beta_fixed`` pins the reflection coefficient (0 gives the no-backscatter
    baseline). ``warm_start`` resumes from a previous result's allocation,
    multipliers and theta.
    """
    settings = settings or SolverSettings()
    p = dbm_to_watts(p_tot_dbm)
    beta_cap = 1.0 if beta_fixed is None else float(beta_fixed)

    def report_at(alloc):
        return check_constraints(ch, alloc, delta, i_n, i_f, noise, r_min, p_tot_dbm)

    lo, hi = feasible_alpha_interval(ch, beta_cap, p, delta, i_n, i_f, noise, r_min)
    if lo > hi:
        probe = Allocation(PROBE_ALPHA_N, 1.0 - PROBE_ALPHA_N, beta_cap, p)
        return CellResult("infeasible", None, Multipliers(), SolveTrace(), report_at(probe))

    if warm_start is not None and warm_start.feasible and lo <= warm_start.allocation.alpha_n <= hi:
        alloc = replace(warm_start.allocation, p_s_w=p)
        mults = warm_start.multipliers
    else:
        alpha0 = 0.5 * (lo + hi)
        alloc = Allocation(alpha0, 1.0 - alpha0, beta_cap, p)
        mults = Multipliers()

    power_total = p + p_c
    trace = SolveTrace()
    status = "max_iter"
    for t in range(1, settings.max_outer_iters + 1):
        theta = mults.theta

        def f_of(a):
            e = cell_ee(ch, a, delta, i_n, i_f, noise, p_c)
            return dinkelbach_value(e.rate_sum, e.power_total, theta)

        # (i) reflection coefficient at fixed power split
        if beta_fixed is None:
            cands = [1.0]
            try:
                cands.append(reflection_closed_form(ch, alloc.alpha_n, p, r_min))
            except DegenerateChannelError:
                cands.append(0.0)
            feasible = [replace(alloc, beta=b) for b in cands if report_at(replace(alloc, beta=b)).all_ok]
            alloc = max(feasible, key=f_of)

        # (ii) power split at fixed reflection coefficient
        bounds = feasible_alpha_interval(ch, alloc.beta, p, delta, i_n, i_f, noise, r_min)

        def score(alpha):
            return f_of(Allocation(alpha, 1.0 - alpha, alloc.beta, p))

        picks = []
        fixed_points = self_consistent_roots(ch, alloc.beta, p, delta, i_n, i_f, noise, r_min, mults,
                                             bounds, max_iter=settings.max_inner_iters)
        for root in fixed_points or [alloc.alpha_n]:
            at = Allocation(root, 1.0 - root, alloc.beta, p)
            x, y, z = quadratic_coefficients(ch, at, delta, i_n, i_f, noise, r_min, mults)
            if x == 0.0 and y == 0.0:
                picks.extend(bounds)
                continue
            picks.append(power_split_closed_form(x, y, z, settings.root_branch_policy, bounds, score)[0])
        alpha_n = max(picks, key=score)
        alloc = Allocation(alpha_n, 1.0 - alpha_n, alloc.beta, p)

        # (iii) multipliers
        report = report_at(alloc)
        mults = update_multipliers(mults, report, settings.step(t))

        # (iv) Dinkelbach
        ee = cell_ee(ch, alloc, delta, i_n, i_f, noise, p_c)
        f_val = float(dinkelbach_value(ee.rate_sum, ee.power_total, theta))
        trace.records.append(IterationRecord((theta,), f_val, float(ee.ee), (alloc,), (report,)))
        if abs(f_val) < settings.dinkelbach_tol:
            status = "converged"
            break
        mults = replace(mults, theta=float(ee.rate_sum / power_total))

    return CellResult(status, alloc, mults, trace, report, ee)


def solve_network(channels: Sequence[CellChannels], config: NetworkConfig,
                  settings: Optional[SolverSettings] = None, *, baseline: Baseline = "WBS") -> NetworkResult:
    """Gauss-Seidel sweeps of :func:`solve_cell` over all cells.

    Each cell sees interference computed from the other RSUs' current transmit
    powers. Sweeps stop once the total EE moves by less than ``sweep_tol``
    (relative). The network iteration count adds, per sweep, the largest
    number of Dinkelbach iterations any cell needed.
    """
    settings = settings or SolverSettings()
    if baseline not in ("WBS", "NBS"):
        raise ConfigError(f"unknown baseline {baseline!r}")
    S = len(channels)
    if S < 1 or S != config.num_cells:
        raise ConfigError(f"got {S} cells for a {config.num_cells}-cell configuration")
    beta_fixed = 0.0 if baseline == "NBS" else None
    p = config.power_budget_w
    powers = [p] * S
    cells: list[Optional[CellResult]] = [None] * S
    interf = [(0.0, 0.0)] * S
    trace = SolveTrace()
    iterations = 0
    converged = False
    prev_total = None
    sweeps = 0
    for sweeps in range(1, settings.max_sweeps + 1):
        for s in range(S):
            i_n = interference(s, "near", channels, powers)
            i_f = interference(s, "far", channels, powers)
            interf[s] = (i_n, i_f)
            cells[s] = solve_cell(channels[s], config.sic_imperfection, i_n, i_f, config.noise_variance,
                                  config.qos_rate_min, config.power_budget_dbm, config.circuit_power_w,
                                  settings, beta_fixed=beta_fixed, warm_start=cells[s])
            if cells[s].feasible:
                powers[s] = cells[s].allocation.p_s_w

        depth = max(c.iterations for c in cells)
        for k in range(depth):
            recs = [c.trace.records[min(k, c.iterations - 1)] if c.iterations else None for c in cells]
            trace.records.append(IterationRecord(
                theta=tuple(r.theta[0] if r else None for r in recs),
                f_value=float(sum(r.f_value for r in recs if r)),
                total_ee=float(sum(r.total_ee for r in recs if r)),
                allocations=tuple(r.allocations[0] if r else None for r in recs),
                reports=tuple(r.reports[0] if r else c.report for r, c in zip(recs, cells)),
            ))
        iterations += depth

        total = sum(c.ee.ee for c in cells if c.feasible)
        if prev_total is not None and abs(total - prev_total) <= settings.sweep_tol * max(1.0, abs(prev_total)):
            converged = all(c.converged for c in cells if c.feasible)
            break
        prev_total = total

    return NetworkResult(cells, trace, sweeps, iterations, converged, list(interf))
