"""Budget-paced first-price auction markets: a solver plus a verification lab.

Given bidders with per-good values and hard budgets competing in independent
first-price auctions, the library computes the unique pacing multipliers and
the market-clearing allocation, certifies every equilibrium condition as an
auditable residual, and runs monotonicity, sensitivity, shill-proofness, and
strategic-deviation experiments.
"""

from .checks import (
    EquilibriumReport,
    certify,
    check_bfpm,
    check_erce,
    check_fppe,
    kkt_residuals,
    metrics,
    price_taking_optimum,
)
from .dual import (
    DualPoint,
    SolveResult,
    dual_objective,
    dual_subgradient,
    extract_multipliers,
    price_bounds,
    rates_from_prices,
    recompute_prices,
    solve_dual,
)
from .flows import (
    FlowNetwork,
    InfeasibleFlowError,
    TieGraph,
    TieGraphError,
    build_tie_graph,
    max_flow,
    recover_allocation,
)
from .market import (
    InstanceFormatError,
    MarketInstance,
    PacingOutcome,
    SolverConfig,
    generate_complete_graph,
    load_instance,
    save_instance,
    validate_instance,
)
from .oracle import compare_solver_oracle, oracle_solve
from .statics import (
    StaticsRecord,
    add_bidder,
    add_budget,
    add_good,
    run_monotonicity_suite,
    run_sensitivity_suite,
    run_shill_suite,
    scale_budget,
    set_value,
    shill_proofness_check,
)
from .strategic import (
    RegretRecord,
    best_response_bids,
    best_response_multiplier,
    instance_regrets,
    misreport_grid,
    regret_grid,
    relative_regret,
    reserve_prices,
)

__version__ = "0.1.0"
