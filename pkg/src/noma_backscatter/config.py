"""TOML run configuration: ``[network]``, ``[solver]`` and an optional ``[sweep]`` table.

Overrides are ``table.key=value`` strings applied after parsing, last wins.
Values are parsed as TOML literals (``0.5``, ``[1, 2]``, ``"WBS"``); anything
that does not parse is taken as a bare string.
"""
from __future__ import annotations

from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Optional, Sequence

import tomli
import tomli_w

from .channel import NetworkConfig
from .errors import ConfigError
from .experiments import SweepSpec
from .solver import SolverSettings

SWEEP_KEYS = ("sweep_kind", "sweep_values", "baselines", "delta_values", "rsu_counts", "trials", "seed")


@dataclass(frozen=True)
class RunConfig:
    network: NetworkConfig = field(default_factory=NetworkConfig)
    solver: SolverSettings = field(default_factory=SolverSettings)
    # raw [sweep] table; None when the file has none
    sweep: Optional[dict] = None

    def sweep_spec(self) -> SweepSpec:
        if self.sweep is None:
            raise ConfigError("config has no [sweep] table")
        return SweepSpec(base_config=self.network, settings=self.solver, **self.sweep)


def _field_names(cls) -> set:
    return {f.name for f in fields(cls)}


def _build(cls, table: dict, name: str):
    unknown = set(table) - _field_names(cls)
    if unknown:
        raise ConfigError(f"unknown key(s) in [{name}]: {', '.join(sorted(unknown))}")
    try:
        return cls(**table)
    except TypeError as exc:
        raise ConfigError(f"bad [{name}] table: {exc}") from None


def _parse_value(raw: str):
    try:
        return tomli.loads(f"v = {raw}")["v"]
    except tomli.TOMLDecodeError:
        return raw


def apply_overrides(doc: dict, overrides: Sequence[str]) -> dict:
    doc = {k: dict(v) if isinstance(v, dict) else v for k, v in doc.items()}
    for item in overrides:
        key, sep, raw = item.partition("=")
        table, dot, name = key.strip().partition(".")
        if not sep or not dot or not name:
            raise ConfigError(f"override {item!r} must look like table.key=value")
        if table not in ("network", "solver", "sweep"):
            raise ConfigError(f"override {item!r}: unknown table {table!r} (use network, solver or sweep)")
        doc.setdefault(table, {})[name] = _parse_value(raw.strip())
    return doc


def from_dict(doc: dict) -> RunConfig:
    unknown = set(doc) - {"network", "solver", "sweep"}
    if unknown:
        raise ConfigError(f"unknown table(s): {', '.join(sorted(unknown))}")
    network = _build(NetworkConfig, doc.get("network", {}), "network")
    solver = _build(SolverSettings, doc.get("solver", {}), "solver")
    sweep = doc.get("sweep")
    if sweep is not None:
        bad = set(sweep) - set(SWEEP_KEYS)
        if bad:
            raise ConfigError(f"unknown key(s) in [sweep]: {', '.join(sorted(bad))}")
        if "sweep_kind" not in sweep or "sweep_values" not in sweep:
            raise ConfigError("[sweep] needs sweep_kind and sweep_values")
        sweep = dict(sweep)
        for k in ("sweep_values", "baselines", "delta_values", "rsu_counts"):
            if k in sweep:
                sweep[k] = tuple(sweep[k])
    cfg = RunConfig(network, solver, sweep)
    if sweep is not None:
        cfg.sweep_spec()
    return cfg


def loads(text: str, overrides: Sequence[str] = ()) -> RunConfig:
    try:
        doc = tomli.loads(text)
    except tomli.TOMLDecodeError as exc:
        raise ConfigError(f"malformed TOML: {exc}") from None
    return from_dict(apply_overrides(doc, overrides))


def load(path, overrides: Sequence[str] = ()) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror or exc}") from None
    try:
        return loads(text, overrides)
    except ConfigError as exc:
        raise ConfigError(f"{path}: {exc}") from None


def to_dict(cfg: RunConfig) -> dict:
    doc = {"network": cfg.network.to_dict(), "solver": {f.name: getattr(cfg.solver, f.name) for f in fields(SolverSettings)}}
    if cfg.sweep is not None:
        doc["sweep"] = {k: list(v) if isinstance(v, tuple) else v for k, v in cfg.sweep.items()}
    return doc


def dumps(cfg: RunConfig) -> str:
    return tomli_w.dumps(to_dict(cfg))


def with_seed(cfg: RunConfig, seed: Optional[int]) -> RunConfig:
    """Apply a ``--seed``: it drives the network draw and, when present, the sweep."""
    if seed is None:
        return cfg
    sweep = None if cfg.sweep is None else {**cfg.sweep, "seed": int(seed)}
    return replace(cfg, network=replace(cfg.network, rng_seed=int(seed)), sweep=sweep)
