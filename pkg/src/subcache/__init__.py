"""Cache allocation and delivery-phase evaluation for subpacketized
device-to-device content caching in mobile networks."""

from .allocation import (
    Allocation,
    InfeasibleBudgetError,
    ScalingRecord,
    classify_boundaries,
    delay_scaling,
    mds_allocation,
    mds_boundaries,
    uncoded_allocation,
    uncoded_boundary,
    validate_allocation,
)
from .delay_model import (
    DelayEstimate,
    NetworkConfig,
    contact_prob,
    contact_prob_order,
    expected_delay_mds,
    expected_delay_random_walk,
    expected_delay_uncoded,
    per_node_throughput,
)
from .mds_codec import CodedSubpacket, decode, encode
from .placement import (
    CacheAssignment,
    PlacementReport,
    load_assignment,
    place,
    save_assignment,
    verify,
)
from .popularity import (
    HarmonicClass,
    PopularityModel,
    harmonic_class,
    harmonic_sum,
    zipf_pmf,
)
from .simulator import (
    ContactStats,
    HittingTimeEstimate,
    TrialMetrics,
    empirical_contact_check,
    estimate_hitting_time,
    run_trial,
    run_trials,
)
from .solvers import (
    SearchSpaceError,
    SolverReport,
    brute_force,
    order_objective_mds,
    order_objective_uncoded,
    solve_mds,
    solve_uncoded,
)

__version__ = "0.1.0"
