"""Market clearing for integrated heat and power systems.

Two-step clearing: a welfare-maximizing dispatch QP whose balance duals are
the energy prices, followed (when marginal prices leave generators short of
their marginal costs) by an uplift-pricing LP that restores cost recovery per
energy vector while staying revenue neutral.
"""

from .cli import ParseError, RunConfig, parse_instance, render_report, run_pipeline
from .dispatch import (
    DispatchSolution,
    Infeasible,
    RecoveryDiagnosis,
    SolverFailure,
    build_ihpd,
    diagnose_recovery,
    solve_ihpd,
)
from .model import (
    CostCoefficients,
    DemandBid,
    GeneratorSpec,
    MarketInstance,
    ValidationError,
    marginal_costs,
    total_cost,
    validate_instance,
)
from .pricing import PricingSolution, SettlementReport, build_pm, settle, solve_pm
from .qpsolver import (
    DimensionMismatch,
    KKTResiduals,
    NumericalFailure,
    QuadraticProgram,
    SolverSolution,
    kkt_report,
    solve_lp,
    solve_qp,
)
from .region import (
    DegenerateInput,
    HalfSpace,
    OperatingRegion,
    Unbounded,
    active_bounds,
    contains,
    enumerate_vertices,
    halfspaces_from_vertices,
)

__version__ = "0.1.0"

__all__ = [
    "CostCoefficients",
    "DegenerateInput",
    "DemandBid",
    "DimensionMismatch",
    "DispatchSolution",
    "GeneratorSpec",
    "HalfSpace",
    "Infeasible",
    "KKTResiduals",
    "MarketInstance",
    "NumericalFailure",
    "OperatingRegion",
    "ParseError",
    "PricingSolution",
    "QuadraticProgram",
    "RecoveryDiagnosis",
    "RunConfig",
    "SettlementReport",
    "SolverFailure",
    "SolverSolution",
    "Unbounded",
    "ValidationError",
    "active_bounds",
    "build_ihpd",
    "build_pm",
    "contains",
    "diagnose_recovery",
    "enumerate_vertices",
    "halfspaces_from_vertices",
    "kkt_report",
    "marginal_costs",
    "parse_instance",
    "render_report",
    "run_pipeline",
    "settle",
    "solve_ihpd",
    "solve_lp",
    "solve_pm",
    "solve_qp",
    "total_cost",
    "validate_instance",
]
