"""Sum-rate resource allocation for multiuser OFDM SWIPT with time-frequency splitting."""

from .baselines import SsAllocation, TsAllocation, solve_ss, solve_ts
from .channel import ChannelConfig, generate, reference_instance, pathloss_db
from .core import (
    Allocation,
    ChannelGains,
    FeasibilityReport,
    ProblemInstance,
    QosRequirements,
    SolveResult,
    SystemParams,
    check_feasibility,
    objective,
    per_term_rate,
    user_energy,
    user_rate,
)
from .oracle import OracleConfig, OracleRefusal, grid_optimum, projected_gradient_optimum
from .scfb import DualState, InfeasibleProblemError, SolverConfig, solve

__version__ = "0.1.0"

__all__ = [
    "Allocation", "ChannelConfig", "ChannelGains", "DualState", "FeasibilityReport",
    "InfeasibleProblemError", "OracleConfig", "OracleRefusal", "ProblemInstance", "QosRequirements",
    "SolveResult", "SolverConfig", "SsAllocation", "SystemParams", "TsAllocation", "check_feasibility",
    "generate", "grid_optimum", "objective", "reference_instance", "pathloss_db", "per_term_rate",
    "projected_gradient_optimum", "solve", "solve_ss", "solve_ts", "user_energy", "user_rate",
]
