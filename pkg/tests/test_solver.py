import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import assume, given, settings, strategies as st

from noma_backscatter.channel import Allocation, CellChannels, NetworkConfig, rate, sample_network
from noma_backscatter.errors import ConfigError, DegenerateChannelError
from noma_backscatter.experiments import figure_config
from noma_backscatter.objective import FeasibilityReport, check_constraints, rate_constraint_terms, sum_rate
from noma_backscatter.oracle import GridSpec, grid_search_cell
from noma_backscatter.solver import (
    Multipliers,
    SolverSettings,
    coefficient_terms,
    feasible_alpha_interval,
    power_split_closed_form,
    quadratic_coefficients,
    quadratic_roots,
    reflection_closed_form,
    self_consistent_roots,
    solve_cell,
    solve_network,
    split_candidates,
    update_multipliers,
)

S2, PC = 0.1, 0.1


def fig_cell(seed):
    return sample_network(figure_config(rng_seed=seed))[0]


def lagrangian(ch, an, af, beta, p, delta, i_n, i_f, r_min, m, p_c=PC):
    """Reference Lagrangian with the rate constraints divided by the RSU power."""
    a = Allocation(an, af, beta, p)
    l1, r1, l2, r2 = rate_constraint_terms(ch, a, delta, i_n, i_f, S2, r_min)
    return (sum_rate(ch, a, delta, i_n, i_f, S2) - m.theta * (p * (an + af) + p_c)
            + m.mu_n * (l1 - r1) / p + m.mu_f * (l2 - r2) / p - m.eta * (an + af - 1.0))


def d_alpha_n(ch, an, beta, p, delta, i_n, i_f, r_min, m, h=1e-6):
    """Central difference of the Lagrangian in alpha_n with alpha_f held at 1 - an."""
    f = lambda x: lagrangian(ch, x, 1.0 - an, beta, p, delta, i_n, i_f, r_min, m)
    return (f(an + h) - f(an - h)) / (2 * h)


# --- settings ------------------------------------------------------------------------

@pytest.mark.parametrize("kw", [dict(dinkelbach_tol=0), dict(max_outer_iters=0), dict(step_decay=0),
                                dict(step_decay=1.5), dict(subgradient_step0=-1), dict(root_branch_policy="x")])
def test_settings_validation(kw):
    with pytest.raises(ConfigError):
        SolverSettings(**kw)


def test_step_schedule():
    s = SolverSettings()
    assert s.step(1) == pytest.approx(0.1)
    assert s.step(4) == pytest.approx(0.05)


# --- reflection coefficient ----------------------------------------------------------

def test_reflection_rmin_zero():
    ch = CellChannels(1.0, 0.5, 0.5, 0.4, 0.2)
    assert reflection_closed_form(ch, 0.3, 1.0, 0.0) == 0.0


def test_reflection_clamped():
    ch = CellChannels(1.0, 0.5, 0.5, 0.4, 0.2)
    assert reflection_closed_form(ch, 0.3, 1.0, 1.0) == 1.0


def test_reflection_hand_value():
    ch = CellChannels(0.2, 0.1, 1.0, 1.0, 0.5)
    assert reflection_closed_form(ch, 0.3, 1.0, 0.5) == pytest.approx((math.sqrt(2) - 1) * 0.2)
    assert reflection_closed_form(ch, 0.3, 1.0, 0.5) == pytest.approx(0.0828, abs=1e-4)


def test_reflection_independent_of_alpha_when_star_matches():
    ch = CellChannels(0.2, 0.1, 1.0, 1.0, 0.5)
    vals = {reflection_closed_form(ch, a, p, 0.5) for a in (0.1, 0.25, 0.5) for p in (0.01, 1.0)}
    assert max(vals) - min(vals) < 1e-15
    # a distinct optimal split in the numerator scales the raw value
    assert reflection_closed_form(ch, 0.2, 1.0, 0.5, alpha_n_star=0.4) == pytest.approx(2 * 0.0828, abs=1e-3)


def test_reflection_degenerate():
    with pytest.raises(DegenerateChannelError):
        reflection_closed_form(CellChannels(1.0, 0.5, 0.0, 0.4, 0.2), 0.3, 1.0, 0.5)
    with pytest.raises(DegenerateChannelError):
        reflection_closed_form(CellChannels(1.0, 0.5, 0.5, 0.4, 0.2), 0.0, 1.0, 0.5)


def test_full_reflection_beats_closed_form_on_oracle():
    # the oracle optimum uses beta = 1, above the closed-form value from the rate floor
    ch = CellChannels(0.2 * 10, 0.1 * 10, 1.0, 1.0, 0.5)
    g = grid_search_cell(ch, 0.0, 0.0, 0.0, S2, 0.5, 30.0, PC, GridSpec(200, 200))
    assert g.beta == 1.0
    assert reflection_closed_form(ch, 0.3, 1.0, 0.5) < 1.0
    res = solve_cell(ch, 0.0, 0.0, 0.0, S2, 0.5, 30.0, PC)
    assert res.allocation.beta == 1.0 and res.ee.ee >= g.ee - 1e-9


# --- quadratic ------------------------------------------------------------------------

def test_omega_hat_zero_gives_linear_equation():
    ch = fig_cell(3)
    a = Allocation(0.2, 0.8, 0.7, 1.0)
    t = coefficient_terms(ch, a, 0.3, 0.01, 0.02, S2, 0.5, Multipliers(mu_n=0.2, theta=1.0))
    assert t.omega_hat == 0.0
    q = quadratic_coefficients(ch, a, 0.3, 0.01, 0.02, S2, 0.5, Multipliers(mu_n=0.2, theta=1.0))
    assert q.x == 0.0 and q.y != 0.0
    assert set(quadratic_roots(*q)) == {"linear"}


def test_mu_n_shift_of_delta_hat():
    ch = fig_cell(4)
    a = Allocation(0.2, 0.8, 0.6, 0.5)
    m = Multipliers(mu_n=0.3, mu_f=0.1, eta=0.05, theta=2.0)
    d0 = coefficient_terms(ch, a, 0.1, 0, 0, S2, 0.5, m).delta_hat
    d1 = coefficient_terms(ch, a, 0.1, 0, 0, S2, 0.5, replace(m, mu_n=m.mu_n + 1)).delta_hat
    assert d1 - d0 == pytest.approx(-(ch.g_n_sq + 0.6 * ch.g_k_sq * ch.h_nk_sq), rel=1e-12)


def test_terms_reduce_at_unit_power():
    ch = fig_cell(5)
    a = Allocation(0.3, 0.7, 0.5, 1.0)
    t = coefficient_terms(ch, a, 0.2, 0.01, 0.03, S2, 0.5, Multipliers(theta=1.5))
    G_n, G_f = ch.near_gain(0.5), ch.far_gain(0.5)
    assert t.lam_hat == pytest.approx(G_n - ch.g_n_sq * 0.2)
    assert t.psi_n == pytest.approx(ch.g_n_sq * 0.2 + 0.11)
    assert t.psi_f == pytest.approx(G_f + 0.13)
    assert t.delta_hat == pytest.approx(1.5)


@pytest.mark.parametrize("seed", range(12))
def test_roots_match_scanned_stationary_points(seed):
    # zero multipliers and theta: the roots are the zeros of d R_sum / d alpha_n found by a dense scan
    ch = fig_cell(100 + seed)
    rng = np.random.default_rng(seed)
    beta, p, delta = float(rng.uniform()), float(rng.uniform(0.01, 1)), float(rng.choice([0.0, 0.3, 0.6]))
    m = Multipliers()
    roots = self_consistent_roots(ch, beta, p, delta, 0.0, 0.0, S2, 0.0, m, (0.0, 0.5))
    grid = np.linspace(1e-4, 0.5 - 1e-4, 20001)
    d = np.array([d_alpha_n(ch, a, beta, p, delta, 0, 0, 0.0, m) for a in grid])
    flips = np.nonzero(np.sign(d[:-1]) != np.sign(d[1:]))[0]
    scanned = []
    for i in flips:
        # linear interpolation inside the scan cell
        scanned.append(grid[i] - d[i] * (grid[i + 1] - grid[i]) / (d[i + 1] - d[i]))
    assert len(roots) == len(scanned)
    for r, s in zip(roots, scanned):
        assert r == pytest.approx(s, abs=1e-6)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32), st.floats(0, 1), st.floats(0.01, 1), st.sampled_from([0.0, 0.3, 0.6]),
       st.floats(0, 0.2), st.floats(0, 0.2), st.floats(0, 1), st.floats(0, 1), st.floats(0, 0.3), st.floats(0, 3))
def test_stationarity_consistency(seed, beta, p, delta, i_n, i_f, mu_n, mu_f, eta, theta):
    ch = fig_cell(seed)
    m = Multipliers(mu_n=mu_n, mu_f=mu_f, eta=eta, theta=theta)
    r_min = 0.3
    for root in self_consistent_roots(ch, beta, p, delta, i_n, i_f, S2, r_min, m, (0.0, 0.5)):
        at = Allocation(root, 1 - root, beta, p)
        x, y, z = quadratic_coefficients(ch, at, delta, i_n, i_f, S2, r_min, m)
        an, af = power_split_closed_form(x, y, z, "plus", (0.0, 0.5))
        assume(0.0 < an < 0.5)
        g = d_alpha_n(ch, an, beta, p, delta, i_n, i_f, r_min, m)
        h = 1e-6
        scale = abs(float(sum_rate(ch, Allocation(an + h, af, beta, p), delta, i_n, i_f, S2)
                          - sum_rate(ch, Allocation(an - h, af, beta, p), delta, i_n, i_f, S2))) / (2 * h)
        assert abs(g) <= 1e-5 * max(1.0, scale)
        assert af == 1 - an


def test_split_examples():
    assert split_candidates(-1.0, 1.0, 0.0) == [0.0, 0.5]
    assert power_split_closed_form(0.0, -2.0, 1.0, "plus") == (0.5, 0.5)
    assert power_split_closed_form(0.0, -2.0, 1.0, "minus") == (0.5, 0.5)
    # [.]^+ on a negative root
    assert power_split_closed_form(0.0, 1.0, 0.3, "plus") == (0.0, 1.0)


def test_split_negative_discriminant_uses_bounds():
    assert quadratic_roots(1.0, 0.0, 1.0) == {}
    assert split_candidates(1.0, 0.0, 1.0, (0.1, 0.4)) == [0.1, 0.4]
    best = power_split_closed_form(1.0, 0.0, 1.0, "plus", (0.1, 0.4), score=lambda a: -abs(a - 0.35))
    assert best[0] == 0.4


def test_split_feasible_best_uses_score():
    # roots 0.1 and 0.3; the score prefers 0.3
    a, _ = power_split_closed_form(1.0, -0.4, 0.03, "feasible-best", (0.0, 0.5), score=lambda v: -abs(v - 0.3))
    assert a == pytest.approx(0.3)
    with pytest.raises(ValueError):
        power_split_closed_form(1.0, -0.4, 0.03, "feasible-best")
    with pytest.raises(ValueError):
        quadratic_roots(0.0, 0.0, 1.0)


@settings(max_examples=200, deadline=None)
@given(st.one_of(st.just(0.0), st.floats(-10, 10).filter(lambda v: abs(v) > 1e-6)),
       st.floats(-10, 10), st.floats(-10, 10))
def test_quadratic_roots_solve_equation(x, y, z):
    assume(x != 0.0 or abs(y) > 1e-3)
    for r in quadratic_roots(x, y, z).values():
        assert abs(x * r * r + y * r + z) <= 1e-8 * max(1.0, abs(x) * r * r, abs(y * r), abs(z))


# --- feasibility interval ------------------------------------------------------------

@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**32), st.floats(0, 1), st.floats(0.01, 1), st.floats(0, 0.9), st.floats(0, 1.5))
def test_alpha_interval_is_exact(seed, beta, p, delta, r_min):
    ch = fig_cell(seed)
    lo, hi = feasible_alpha_interval(ch, beta, p, delta, 0.01, 0.02, S2, r_min)
    an = np.linspace(0, 0.5, 2001)
    ok = check_constraints(ch, Allocation(an, 1 - an, beta, p), delta, 0.01, 0.02, S2, r_min, 30.0).all_ok
    inside = (an >= lo - 1e-12) & (an <= hi + 1e-12)
    # grid points away from the ends agree with the interval test
    away = (np.abs(an - lo) > 1e-9) & (np.abs(an - hi) > 1e-9)
    assert np.array_equal(ok[away], inside[away])


# --- multipliers -----------------------------------------------------------------------

def _report(**kw):
    base = dict(c1_ok=True, c2_ok=True, c3_ok=True, c4_ok=True, c5_ok=True, c1_slack=0.0, c2_slack=0.0)
    base.update(kw)
    return FeasibilityReport(**base)


def test_multipliers_stay_zero_at_interior():
    m = update_multipliers(Multipliers(), _report(c1_slack=1, c2_slack=2, budget_residual=0.5,
                                                  beta_residual=0.2, split_residual=0.1), 0.1)
    assert (m.mu_n, m.mu_f, m.lambda_, m.tau, m.eta) == (0, 0, 0, 0, 0)


def test_multiplier_grows_on_violation():
    m = update_multipliers(Multipliers(mu_n=1.0), _report(c1_ok=False, c1_slack=-0.5), 0.1)
    assert m.mu_n == pytest.approx(1.05)


def test_multiplier_projection():
    m = update_multipliers(Multipliers(mu_n=0.01), _report(c1_slack=1.0), 0.1)
    assert m.mu_n == 0.0
    with pytest.raises(ValueError):
        update_multipliers(Multipliers(), _report(), 0.0)


def test_subgradient_drives_violation_down():
    # a large theta pulls alpha_n to zero; only a growing mu_n can restore C1
    ch = fig_cell(9)
    r_min, delta, p = 1.0, 0.3, 1.0
    lo, hi = feasible_alpha_interval(ch, 0.0, p, delta, 0, 0, S2, r_min)
    assert lo < hi
    m = Multipliers(theta=20.0)
    an = 0.5 * lo
    violation = []
    s = SolverSettings(subgradient_step0=5.0)
    for t in range(1, 200):
        rep = check_constraints(ch, Allocation(an, 1 - an, 0.0, p), delta, 0, 0, S2, r_min, 30.0)
        violation.append(max(0.0, -rep.c1_slack))
        m = update_multipliers(m, rep, s.step(t))
        an = min(0.5, max(0.0, an + 1e-3 * d_alpha_n(ch, an, 0.0, p, delta, 0, 0, r_min, m)))
    assert m.mu_n > 0
    assert violation[0] > 0
    assert np.mean(violation[-50:]) < 0.1 * violation[0]


# --- solve_cell -----------------------------------------------------------------------

def test_solve_cell_rmin_zero_matches_oracle():
    ch = fig_cell(11)
    res = solve_cell(ch, 0.0, 0.0, 0.0, S2, 0.0, 30.0, PC)
    g = grid_search_cell(ch, 0.0, 0.0, 0.0, S2, 0.0, 30.0, PC)
    assert res.converged
    assert res.ee.ee >= g.ee * (1 - 1e-3)


def test_solve_cell_sic_dominance():
    for seed in range(20):
        ch = fig_cell(seed)
        e0 = solve_cell(ch, 0.0, 0.0, 0.0, S2, 0.5, 30.0, PC)
        e6 = solve_cell(ch, 0.6, 0.0, 0.0, S2, 0.5, 30.0, PC)
        if e6.feasible:
            assert e0.ee.ee >= e6.ee.ee


def test_solve_cell_converges_within_four():
    cfg = figure_config()
    for seed in range(30):
        res = solve_cell(fig_cell(seed), 0.1, 0.0, 0.0, S2, 0.5, cfg.power_budget_dbm, PC)
        if not res.feasible:
            continue
        assert res.converged and res.iterations <= 4


@pytest.mark.parametrize("seed", range(10))
def test_returned_alpha_matches_grid_argmax(seed):
    ch = fig_cell(200 + seed)
    res = solve_cell(ch, 0.3, 0.0, 0.0, S2, 0.5, 30.0, PC)
    if not res.feasible:
        pytest.skip("infeasible draw")
    g = grid_search_cell(ch, 0.3, 0.0, 0.0, S2, 0.5, 30.0, PC, GridSpec(1000, 2), beta_fixed=res.allocation.beta)
    assert abs(res.allocation.alpha_n - g.alpha_n) <= 1e-3


def test_solve_cell_infeasible_reports_probe():
    ch = fig_cell(1)
    res = solve_cell(ch, 0.9, 0.0, 0.0, S2, 6.0, 30.0, PC)
    assert res.status == "infeasible" and res.allocation is None
    assert not res.report.all_ok
    assert res.report.c2_slack < 0 or res.report.c1_slack < 0


def test_solve_cell_nbs_keeps_beta_zero():
    res = solve_cell(fig_cell(2), 0.1, 0.0, 0.0, S2, 0.5, 30.0, PC, beta_fixed=0.0)
    assert res.allocation.beta == 0.0


def test_dinkelbach_monotone_trace():
    for seed in range(20):
        res = solve_cell(fig_cell(seed), 0.3, 0.01, 0.01, S2, 0.5, 25.0, PC)
        if not res.feasible:
            continue
        th = res.thetas
        assert all(b >= a for a, b in zip(th, th[1:]))
        f = res.trace.f_values
        assert all(b <= a + 1e-12 for a, b in zip(f, f[1:]))
        assert abs(f[-1]) < 1e-4


def test_max_iter_status():
    res = solve_cell(fig_cell(2), 0.1, 0.0, 0.0, S2, 0.5, 30.0, PC, SolverSettings(max_outer_iters=1))
    assert res.status == "max_iter" and res.iterations == 1 and res.report.all_ok


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32), st.floats(0.01, 100), st.sampled_from([0.0, 0.3, 0.6]))
def test_scaling_invariance(seed, c, delta):
    ch = fig_cell(seed)
    a = solve_cell(ch, delta, 0.01, 0.02, S2, 0.5, 30.0, PC)
    b = solve_cell(ch.scaled(c), delta, 0.01 * c, 0.02 * c, S2 * c, 0.5, 30.0, PC)
    assert a.status == b.status
    if a.feasible:
        assert b.allocation.alpha_n == pytest.approx(a.allocation.alpha_n, rel=1e-9, abs=1e-12)
        assert b.allocation.beta == a.allocation.beta
        assert b.ee.ee == pytest.approx(a.ee.ee, rel=1e-9)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32), st.sampled_from([0.0, 0.3, 0.9]), st.floats(0, 1.5), st.floats(10, 30))
def test_output_feasibility(seed, delta, r_min, p_dbm):
    ch = fig_cell(seed)
    res = solve_cell(ch, delta, 0.0, 0.0, S2, r_min, p_dbm, PC)
    if res.feasible:
        rep = check_constraints(ch, res.allocation, delta, 0.0, 0.0, S2, r_min, p_dbm)
        assert rep.all_ok
        assert rep.c1_slack >= -1e-9 and rep.c2_slack >= -1e-9


# --- solve_network --------------------------------------------------------------------

def test_network_single_cell_reduces_to_cell():
    cfg = figure_config(rng_seed=4, qos_rate_min=0.5, sic_imperfection=0.3)
    chs = sample_network(cfg)
    net = solve_network(chs, cfg)
    cell = solve_cell(chs[0], 0.3, 0.0, 0.0, cfg.noise_variance, 0.5, cfg.power_budget_dbm, cfg.circuit_power_w)
    assert net.cells[0].allocation == cell.allocation
    assert net.total_ee == pytest.approx(cell.ee.ee)
    assert net.interference == [(0.0, 0.0)]


def test_network_symmetric_cells():
    ch = CellChannels(8.0, 3.0, 1.2, 0.7, 0.4, (0.02,), (0.03,))
    cfg = figure_config(num_cells=2, qos_rate_min=0.5, sic_imperfection=0.2)
    net = solve_network([ch, ch], cfg)
    a, b = net.allocations
    assert a.alpha_n == pytest.approx(b.alpha_n, abs=1e-6)
    assert a.beta == pytest.approx(b.beta, abs=1e-6)


def test_network_sweeps_grow_with_cells():
    for seed in range(10):
        one = solve_network(sample_network(figure_config(rng_seed=seed)), figure_config(rng_seed=seed))
        cfg8 = figure_config(num_cells=8, rng_seed=seed)
        eight = solve_network(sample_network(cfg8), cfg8)
        assert eight.sweeps >= one.sweeps
        assert eight.iterations >= one.iterations


def test_network_marks_infeasible_cells():
    cfg = figure_config(num_cells=4, qos_rate_min=3.0, sic_imperfection=0.9, rng_seed=1)
    net = solve_network(sample_network(cfg), cfg)
    assert net.infeasible_cells
    assert all(not net.cells[s].feasible for s in net.infeasible_cells)
    assert net.total_ee == pytest.approx(sum(c.ee.ee for c in net.cells if c.feasible))


def test_network_errors():
    cfg = figure_config(num_cells=2)
    with pytest.raises(ConfigError):
        solve_network(sample_network(figure_config(num_cells=3)), cfg)
    with pytest.raises(ConfigError):
        solve_network(sample_network(cfg), cfg, baseline="XBS")


def test_network_wbs_dominates_nbs():
    for seed in range(10):
        cfg = figure_config(num_cells=5, rng_seed=seed, qos_rate_min=0.5, sic_imperfection=0.3)
        chs = sample_network(cfg)
        w = solve_network(chs, cfg, baseline="WBS")
        n = solve_network(chs, cfg, baseline="NBS")
        assert w.total_ee >= n.total_ee
        assert set(w.infeasible_cells) <= set(n.infeasible_cells)
