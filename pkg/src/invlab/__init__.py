"""Desk-scale dynamic-programming laboratory for periodic-review inventory control."""

from .average_cost import (
    DEFAULT_LADDER,
    DiscountLadder,
    RelativeValue,
    assumption_B_diagnostic,
    check_optimality_inequality,
    greedy_policy,
    long_run_average,
    relative_value,
    solve_ladder,
)
from .costs import (
    INFINITE,
    CostModel,
    HoldingCost,
    N_alpha,
    check_GB,
    expected_holding,
    f_t_alpha,
    is_K_convex,
    regime_constants,
)
from .demand import DemandDistribution, convolve, convolve_power, from_atoms, quantize
from .dp_core import (
    Dynamics,
    GridMDP,
    ValueSolution,
    build_mdp,
    check_stationary_optimality,
    finite_horizon_vi,
    infinite_horizon_vi,
    k0_clone,
    make_inventory_mdp,
    min_action_policy,
)
from .errors import InvLabError, ValidationErrors
from .policy_structure import (
    PolicyStructure,
    Regime,
    classify_regime,
    extract_sS,
    g_function,
    predict_finite_horizon,
    threshold_limits,
    v0_terminal,
    verify_structure,
)
from .pomdp import (
    Container,
    ContainerPartition,
    TreePolicy,
    bayes_filter,
    belief_value_iteration,
    comdp_cost,
    make_belief,
    observation_marginal,
    observe_psi,
    pomdp_simulate,
)

__version__ = "0.1.0"
