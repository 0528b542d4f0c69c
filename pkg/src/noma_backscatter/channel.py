"""Network realizations, co-channel interference, SINRs and rates.

Each cell holds one RSU serving a near (strong) and a far (weak) vehicle via
downlink NOMA, plus one ambient backscatter tag that re-radiates the RSU's
superimposed signal towards both vehicles. All gains here are squared
magnitudes (power gains).

The SINR/rate functions are written with plain arithmetic so they accept
Python floats or broadcastable numpy arrays; the brute-force oracle relies on
that to evaluate whole grids at once.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import ClassVar, Literal, Sequence

import numpy as np

from .errors import ConfigError

RNG_ALGORITHM = "numpy.random.Generator(PCG64) seeded via SeedSequence"

Vehicle = Literal["near", "far"]


@dataclass(frozen=True)
class NetworkConfig:
    """Scenario parameters for one multi-cell network.

    The ``*_gain_mean`` fields scale the unit-mean exponential power gains of
    each link family (direct RSU->vehicle, every backscatter hop, and
    cross-cell RSU->vehicle). They default to 1.
    """

    num_cells: int = 1
    power_budget_dbm: float = 30.0
    circuit_power_w: float = 0.1
    qos_rate_min: float = 0.5
    sic_imperfection: float = 0.0
    noise_variance: float = 0.1
    rng_seed: int = 0
    direct_gain_mean: float = 1.0
    backscatter_gain_mean: float = 1.0
    cross_gain_mean: float = 1.0

    vehicles_per_cell: ClassVar[int] = 2
    backscatter_per_cell: ClassVar[int] = 1

    def __post_init__(self):
        if isinstance(self.num_cells, bool) or int(self.num_cells) != self.num_cells or self.num_cells < 1:
            raise ConfigError(f"num_cells must be a positive integer, got {self.num_cells!r}")
        if not math.isfinite(self.power_budget_dbm) or self.power_budget_dbm < 0:
            raise ConfigError(f"power_budget_dbm must be >= 0 dBm, got {self.power_budget_dbm!r}")
        if not self.circuit_power_w > 0:
            raise ConfigError(f"circuit_power_w must be > 0, got {self.circuit_power_w!r}")
        if not self.qos_rate_min >= 0:
            raise ConfigError(f"qos_rate_min must be >= 0, got {self.qos_rate_min!r}")
        if not 0.0 <= self.sic_imperfection <= 1.0:
            raise ConfigError(f"sic_imperfection must lie in [0, 1], got {self.sic_imperfection!r}")
        if not self.noise_variance > 0:
            raise ConfigError(f"noise_variance must be > 0, got {self.noise_variance!r}")
        if not 0 <= int(self.rng_seed) < 2**64:
            raise ConfigError(f"rng_seed must fit in 64 unsigned bits, got {self.rng_seed!r}")
        for name in ("direct_gain_mean", "backscatter_gain_mean", "cross_gain_mean"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be > 0, got {getattr(self, name)!r}")

    @property
    def power_budget_w(self) -> float:
        return dbm_to_watts(self.power_budget_dbm)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class CellChannels:
    """Power gains seen in one cell.

    ``cross_gains_n[j]`` is the gain from the j-th *other* RSU (cells in
    ascending index order, skipping this one) to this cell's near vehicle.
    """

    g_n_sq: float
    g_f_sq: float
    g_k_sq: float
    h_nk_sq: float
    h_fk_sq: float
    cross_gains_n: tuple[float, ...] = field(default_factory=tuple)
    cross_gains_f: tuple[float, ...] = field(default_factory=tuple)

    def near_gain(self, beta):
        """Effective near-vehicle gain: direct path plus reflected path."""
        return self.g_n_sq + beta * self.g_k_sq * self.h_nk_sq

    def far_gain(self, beta):
        return self.g_f_sq + beta * self.g_k_sq * self.h_fk_sq

    def scaled(self, factor: float) -> "CellChannels":
        """Every link scaled by ``factor`` (the backscatter product scales once, via g_k)."""
        return CellChannels(
            self.g_n_sq * factor,
            self.g_f_sq * factor,
            self.g_k_sq * factor,
            self.h_nk_sq,
            self.h_fk_sq,
            tuple(g * factor for g in self.cross_gains_n),
            tuple(g * factor for g in self.cross_gains_f),
        )


@dataclass(frozen=True)
class Allocation:
    """Per-cell decision variables plus the RSU transmit power.

    Fields may be numpy arrays when evaluating grids; constraint checking
    lives in ``objective.check_constraints``.
    """

    alpha_n: float
    alpha_f: float
    beta: float
    p_s_w: float


def dbm_to_watts(p_dbm):
    return 10.0 ** ((p_dbm - 30.0) / 10.0)


def sample_network(config: NetworkConfig) -> list[CellChannels]:
    """Draw one Rayleigh-fading realization of the whole network.

    Draw order (fixed, so results are reproducible across versions): an
    ``(S, 5)`` block of direct/backscatter gains, then an ``(S, S)`` block for
    cross gains to near vehicles, then one for far vehicles. Diagonals of the
    cross blocks are discarded.
    """
    S = config.num_cells
    rng = np.random.default_rng(np.random.SeedSequence(int(config.rng_seed)))
    local = rng.exponential(1.0, size=(S, 5))
    cross_n = rng.exponential(config.cross_gain_mean, size=(S, S))
    cross_f = rng.exponential(config.cross_gain_mean, size=(S, S))

    direct = np.sort(local[:, :2], axis=1)[:, ::-1] * config.direct_gain_mean
    hops = local[:, 2:] * config.backscatter_gain_mean

    cells = []
    for s in range(S):
        others = [j for j in range(S) if j != s]
        cells.append(
            CellChannels(
                g_n_sq=float(direct[s, 0]),
                g_f_sq=float(direct[s, 1]),
                g_k_sq=float(hops[s, 0]),
                h_nk_sq=float(hops[s, 1]),
                h_fk_sq=float(hops[s, 2]),
                cross_gains_n=tuple(float(cross_n[j, s]) for j in others),
                cross_gains_f=tuple(float(cross_f[j, s]) for j in others),
            )
        )
    return cells


def interference(cell_index: int, vehicle: Vehicle, channels: Sequence[CellChannels], powers: Sequence[float]) -> float:
    """Co-channel interference power at a vehicle of ``cell_index`` from all other RSUs."""
    S = len(channels)
    if len(powers) != S:
        raise ConfigError(f"got {len(powers)} RSU powers for {S} cells")
    if not 0 <= cell_index < S:
        raise ConfigError(f"cell_index {cell_index} out of range for {S} cells")
    if vehicle == "near":
        gains = channels[cell_index].cross_gains_n
    elif vehicle == "far":
        gains = channels[cell_index].cross_gains_f
    else:
        raise ConfigError(f"vehicle must be 'near' or 'far', got {vehicle!r}")
    other_powers = [p for j, p in enumerate(powers) if j != cell_index]
    if len(gains) != len(other_powers):
        raise ConfigError(f"cell {cell_index} has {len(gains)} cross gains, expected {S - 1}")
    return float(sum(g * p for g, p in zip(gains, other_powers)))


def sinr_near(ch: CellChannels, a: Allocation, delta, i_n, noise):
    """Near vehicle SINR after (imperfect) SIC of the far vehicle's signal."""
    p = a.p_s_w
    signal = p * a.alpha_n * ch.near_gain(a.beta)
    residual = p * a.alpha_f * ch.g_n_sq * delta
    return signal / (residual + i_n + noise)


def sinr_far(ch: CellChannels, a: Allocation, i_f, noise):
    """Far vehicle SINR; the near vehicle's signal is treated as noise."""
    p = a.p_s_w
    g = ch.far_gain(a.beta)
    return p * a.alpha_f * g / (p * a.alpha_n * g + i_f + noise)


def rate(gamma):
    """Spectral efficiency in bits/s/Hz."""
    return np.log2(1.0 + gamma)
