"""Command-line entry point: ``solve``, ``sweep``, ``certify`` and ``lemma-check``.

Exit codes: 0 success, 2 bad configuration or usage, 3 infeasible instance,
4 certification or battery failure.
"""
from __future__ import annotations

import argparse
import sys
from typing import Optional, Sequence

from . import config as cfgmod
from .channel import sample_network
from .errors import CertificationError, ConfigError, InfeasibleError
from .experiments import figure_config, run_sweep, sweep_metadata, write_results
from .oracle import GridSpec, alpha_hessian_battery, beta_concavity_battery, certify_random
from .solver import solve_network

EXIT_CODES = {"ok": 0, "config": 2, "infeasible": 3, "certification": 4}


def _add_common(p: argparse.ArgumentParser, config_required: bool = False):
    p.add_argument("--config", required=config_required, help="TOML file with [network], [solver], [sweep] tables")
    p.add_argument("--seed", type=int, help="RNG seed (network draw and sweep trials)")
    p.add_argument("--set", dest="overrides", action="append", default=[], metavar="TABLE.KEY=VALUE",
                   help="override a config entry after parsing (repeatable, last wins)")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="noma-bs", description="EE-maximizing NOMA + backscatter resource allocation")
    sub = ap.add_subparsers(dest="verb", required=True)

    p = sub.add_parser("solve", help="solve one random network realization")
    _add_common(p)

    p = sub.add_parser("sweep", help="run a Monte Carlo sweep and write CSV")
    _add_common(p, config_required=True)
    p.add_argument("--out", required=True, help="CSV output path (metadata goes to <out>.meta.json)")

    p = sub.add_parser("certify", help="check the solver against the grid oracle on random cells")
    _add_common(p)
    p.add_argument("--instances", type=int, default=100)
    p.add_argument("--grid", type=int, default=1000, help="grid steps per axis")
    p.add_argument("--tol", type=float, default=1e-3, help="relative tolerance")

    p = sub.add_parser("lemma-check", help="run the concavity batteries")
    _add_common(p)
    p.add_argument("--instances", type=int, default=100)
    return ap


def _load(args, default_network=None) -> cfgmod.RunConfig:
    if args.config:
        cfg = cfgmod.load(args.config, args.overrides)
    else:
        base = cfgmod.RunConfig(network=default_network) if default_network else cfgmod.RunConfig()
        cfg = cfgmod.from_dict(cfgmod.apply_overrides(cfgmod.to_dict(base), args.overrides))
    return cfgmod.with_seed(cfg, args.seed)


def cmd_solve(args) -> int:
    cfg = _load(args)
    res = solve_network(sample_network(cfg.network), cfg.network, cfg.solver)
    for s, cell in enumerate(res.cells):
        if cell.feasible:
            a = cell.allocation
            print(f"cell {s}: {cell.status} alpha_n={a.alpha_n:.6f} alpha_f={a.alpha_f:.6f} "
                  f"beta={a.beta:.6f} ee={cell.ee.ee:.6g} iters={cell.iterations}")
        else:
            print(f"cell {s}: infeasible (c1_slack={cell.report.c1_slack:.4g}, c2_slack={cell.report.c2_slack:.4g})")
    print(f"total EE: {res.total_ee:.9g} bits/s/Hz/W")
    print(f"iterations: {res.iterations}  sweeps: {res.sweeps}  converged: {res.converged}")
    print("EE trace: " + " ".join(f"{e:.6g}" for e in res.trace.ees))
    if res.infeasible_cells:
        raise InfeasibleError(f"cells {res.infeasible_cells} cannot meet R_min={cfg.network.qos_rate_min}; "
                              "lower qos_rate_min or raise the power budget")
    return 0


def cmd_sweep(args) -> int:
    cfg = _load(args)
    spec = cfg.sweep_spec()
    rows = run_sweep(spec)
    meta = sweep_metadata(spec, args.overrides)
    write_results(rows, args.out, meta)
    print(f"wrote {len(rows)} rows to {args.out}")
    return 0


def cmd_certify(args) -> int:
    if args.instances < 1 or args.grid < 2:
        raise ConfigError("--instances must be >= 1 and --grid >= 2")
    cfg = _load(args, default_network=figure_config())
    run = certify_random(args.instances, GridSpec(args.grid, args.grid), args.seed or 0, cfg.network,
                         args.tol, cfg.solver)
    for k, rec in enumerate(run.records):
        if not rec.certificate.passed:
            print(f"instance {k} (seed {rec.seed}, delta={rec.delta}, r_min={rec.r_min}): "
                  f"solver {rec.solver_ee:.9g} oracle {rec.oracle.ee:.9g} margin {rec.certificate.margin:.3g}")
    print(f"{run.passed}/{len(run.records)} within {args.tol:g}")
    print(f"worst margin {run.worst_margin:.3g}; skipped {run.skipped_infeasible} infeasible draws")
    if run.passed != len(run.records):
        raise CertificationError(f"{len(run.records) - run.passed} instance(s) below the oracle")
    return 0


def cmd_lemma(args) -> int:
    if args.instances < 1:
        raise ConfigError("--instances must be >= 1")
    cfg = _load(args, default_network=figure_config())
    seed = args.seed or 0
    l1 = beta_concavity_battery(args.instances, 20, seed, cfg.network)
    l2 = alpha_hessian_battery(args.instances, seed, cfg.network)
    print(f"beta concavity/monotonicity: {l1.violations} violations in {l1.checks} checks (worst {l1.worst:.3g})")
    print(f"alpha Hessian negative definite: {l2.violations} violations in {l2.checks} points (worst {l2.worst:.3g})")
    if l1.violations or l2.violations:
        raise CertificationError("concavity battery reported violations")
    return 0


COMMANDS = {"solve": cmd_solve, "sweep": cmd_sweep, "certify": cmd_certify, "lemma-check": cmd_lemma}


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.verb](args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CODES["config"]
    except InfeasibleError as exc:
        print(f"infeasible: {exc}", file=sys.stderr)
        return EXIT_CODES["infeasible"]
    except CertificationError as exc:
        print(f"certification failed: {exc}", file=sys.stderr)
        return EXIT_CODES["certification"]
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CODES["config"]


if __name__ == "__main__":
    sys.exit(main())
