"""Energy-efficiency objective, constraint set and the Dinkelbach subtractive form.

Constraints are checked in their linear (power-domain) form:

* C1/C2: minimum rate of the near/far vehicle,
* C3: RSU power budget,
* C4: power split ``alpha_n + alpha_f <= 1``,
* C5: reflection coefficient in ``[0, 1]``.

Like ``channel``, the evaluation helpers broadcast over numpy arrays.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .channel import Allocation, CellChannels, dbm_to_watts, rate, sinr_far, sinr_near

# relative tolerance for boundary equality on every constraint
CONSTRAINT_RTOL = 1e-9


@dataclass(frozen=True)
class EEBreakdown:
    rate_n: float
    rate_f: float
    power_total: float
    ee: float

    @property
    def rate_sum(self):
        return self.rate_n + self.rate_f


@dataclass(frozen=True)
class FeasibilityReport:
    """Constraint flags plus signed slacks (LHS - RHS, >= 0 when satisfied).

    ``budget_residual``, ``beta_residual`` and ``split_residual`` are the
    residuals of C3, the upper bound of C5 and C4; the subgradient multiplier
    update consumes them.
    """

    c1_ok: bool
    c2_ok: bool
    c3_ok: bool
    c4_ok: bool
    c5_ok: bool
    c1_slack: float
    c2_slack: float
    budget_residual: float = 0.0
    beta_residual: float = 0.0
    split_residual: float = 0.0

    @property
    def all_ok(self):
        return self.c1_ok & self.c2_ok & self.c3_ok & self.c4_ok & self.c5_ok


def sum_rate(ch: CellChannels, a: Allocation, delta, i_n, i_f, noise):
    return rate(sinr_near(ch, a, delta, i_n, noise)) + rate(sinr_far(ch, a, i_f, noise))


def cell_ee(ch: CellChannels, a: Allocation, delta, i_n, i_f, noise, p_c) -> EEBreakdown:
    r_n = rate(sinr_near(ch, a, delta, i_n, noise))
    r_f = rate(sinr_far(ch, a, i_f, noise))
    power = a.p_s_w * (a.alpha_n + a.alpha_f) + p_c
    return EEBreakdown(r_n, r_f, power, (r_n + r_f) / power)


def total_ee(per_cell: Sequence[EEBreakdown]) -> float:
    """Network EE: the sum of per-cell EE ratios (not a global ratio)."""
    if len(per_cell) == 0:
        raise ValueError("total_ee needs at least one cell")
    return float(sum(c.ee for c in per_cell))


def rate_constraint_terms(ch: CellChannels, a: Allocation, delta, i_n, i_f, noise, r_min):
    """Both sides of C1 and C2 as printed: ``(lhs1, rhs1, lhs2, rhs2)``."""
    c = 2.0 ** r_min - 1.0
    p = a.p_s_w
    lhs1 = p * a.alpha_n * ch.near_gain(a.beta)
    rhs1 = c * (ch.g_n_sq * p * a.alpha_f * delta + i_n + noise)
    g_far = ch.far_gain(a.beta)
    lhs2 = p * a.alpha_f * g_far
    rhs2 = c * (p * a.alpha_n * g_far + i_f + noise)
    return lhs1, rhs1, lhs2, rhs2


def _holds(lhs, rhs, rtol):
    return lhs - rhs >= -rtol * np.maximum(np.abs(lhs), np.abs(rhs))


def check_constraints(ch: CellChannels, a: Allocation, delta, i_n, i_f, noise, r_min, p_tot_dbm,
                      rtol: float = CONSTRAINT_RTOL) -> FeasibilityReport:
    lhs1, rhs1, lhs2, rhs2 = rate_constraint_terms(ch, a, delta, i_n, i_f, noise, r_min)
    p_max = dbm_to_watts(p_tot_dbm)
    split = a.alpha_n + a.alpha_f
    fields = dict(
        c1_ok=_holds(lhs1, rhs1, rtol),
        c2_ok=_holds(lhs2, rhs2, rtol),
        c3_ok=(a.p_s_w >= 0) & _holds(p_max, a.p_s_w, rtol),
        c4_ok=_holds(1.0, split, rtol) & (a.alpha_n >= 0) & (a.alpha_f >= 0),
        c5_ok=(a.beta >= 0) & (a.beta <= 1),
        c1_slack=lhs1 - rhs1,
        c2_slack=lhs2 - rhs2,
        budget_residual=p_max - a.p_s_w,
        beta_residual=1.0 - a.beta,
        split_residual=1.0 - split,
    )
    if all(np.ndim(v) == 0 for v in fields.values()):
        fields = {k: (bool(v) if k.endswith("_ok") else float(v)) for k, v in fields.items()}
    return FeasibilityReport(**fields)


def dinkelbach_value(rate_sum, power_total, theta):
    """Subtractive form ``R - theta * P``; its root in theta is the EE ratio."""
    return rate_sum - theta * power_total
