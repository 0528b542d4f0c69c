"""Energy-efficient resource allocation for multi-cell NOMA vehicular networks
with ambient backscatter tags."""

__version__ = "0.1.0"

from .channel import (  # noqa: E402
    Allocation,
    CellChannels,
    NetworkConfig,
    dbm_to_watts,
    interference,
    rate,
    sample_network,
    sinr_far,
    sinr_near,
)
from .errors import (  # noqa: E402
    CertificationError,
    ConfigError,
    DegenerateChannelError,
    InfeasibleError,
    NomaBackscatterError,
)
from .objective import EEBreakdown, FeasibilityReport, cell_ee, check_constraints, dinkelbach_value, total_ee  # noqa: E402
from .solver import Multipliers, SolverSettings, solve_cell, solve_network  # noqa: E402
