"""Coupled power-transportation equilibria, Braess-paradox screening, and pricing."""

from .equilibrium import (
    BindingPattern,
    DispatchSolution,
    GueSolution,
    congestion_pattern,
    economic_dispatch,
    solve_gue,
    solve_gue_multi_od,
    transport_ue,
)
from .errors import GridrouteError
from .metrics import (
    BpReport,
    Param,
    SensitivityRow,
    SocialCosts,
    derivative_fd,
    derivative_kkt,
    screen_bp,
    social_costs,
    sweep,
)
from .model import (
    CoupledSystem,
    Coupling,
    PowerNetwork,
    TransportationNetwork,
    ValidationReport,
    builtin_case,
    charging_load,
    load_system,
    save_system,
    validate_system,
)
from .pricing import (
    CriticalRegion,
    MitigationResult,
    PricingPolicy,
    critical_region,
    eliminate_bp_static,
    gue_under_policy,
    policy_prices,
    region_walk,
    screen_under_policy,
)
from .qp import KktReport, QpProblem, QpSolution, QpStatus, solve_qp, verify_kkt
from .radial import (
    AggregatedSystem,
    ConditionVerdicts,
    RouteBundle,
    Subnetwork,
    aggregate,
    aggregate_sensitivities,
    assert_radial,
    bp_relations,
    check_atbp,
    check_fully_congested,
    check_pbp_aggregated,
    check_uncongested,
    classical_bp_in_bundle,
    partition_subnetworks,
    route_bundles,
)

__version__ = "0.1.0"
