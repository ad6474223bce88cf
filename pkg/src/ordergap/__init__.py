"""ordergap: two-operator learning dynamics and the order-gap observable.

A consolidation operator Q and an event-indexed expansion family P_e act on
a parameter vector; the order gap omega(theta; e) = ||Q(P_e(theta)) -
P_e(Q(theta))|| measures their non-commutativity at the current state.  The
package provides the dynamics and observable (core), windowed stopping rules
with certified bound calculators (stopping), commutator/Gramian sensitivity
analysis (analysis), four worked instantiations (bandit, actor_critic, rlm,
sgd), and a reproducible experiment harness (harness).
"""

from .analysis import (
    CommutatorReport,
    ConstantsEstimate,
    ConvergenceError,
    EquilibriumReport,
    FixedPointResult,
    JacobianPair,
    commutator,
    commutator_stats,
    consolidation_fixed_point,
    effective_equilibrium,
    estimate_constants,
    finite_diff_jacobian,
    matrix_rank_by_svd,
    orthonormal_basis,
    second_order_remainder,
    stats_from_sigmas,
    validity_radius,
)
from .core import (
    Event,
    EventSampler,
    NonFiniteStateError,
    OperatorPair,
    OrderGapTrace,
    as_state,
    block_max_norm,
    decision_order_gap,
    finite_sampler,
    l2_norm,
    order_gap,
    order_gap_with_next,
    run_trajectory,
    step,
)
from .rng import child_rng
from .stopping import (
    BelowFloorWarning,
    NoiseFloor,
    StoppingBounds,
    StoppingConfig,
    StoppingReport,
    SuboptimalityBounds,
    TheoryConstants,
    expected_gap_stop,
    noise_floor,
    stopping_bounds,
    suboptimality_bounds,
    windowed_stop,
)

__version__ = "0.1.0"

__all__ = [
    "__version__",
    # core
    "Event",
    "EventSampler",
    "NonFiniteStateError",
    "OperatorPair",
    "OrderGapTrace",
    "as_state",
    "block_max_norm",
    "decision_order_gap",
    "finite_sampler",
    "l2_norm",
    "order_gap",
    "order_gap_with_next",
    "run_trajectory",
    "step",
    "child_rng",
    # stopping
    "BelowFloorWarning",
    "NoiseFloor",
    "StoppingBounds",
    "StoppingConfig",
    "StoppingReport",
    "SuboptimalityBounds",
    "TheoryConstants",
    "expected_gap_stop",
    "noise_floor",
    "stopping_bounds",
    "suboptimality_bounds",
    "windowed_stop",
    # analysis
    "CommutatorReport",
    "ConstantsEstimate",
    "ConvergenceError",
    "EquilibriumReport",
    "FixedPointResult",
    "JacobianPair",
    "commutator",
    "commutator_stats",
    "consolidation_fixed_point",
    "effective_equilibrium",
    "estimate_constants",
    "finite_diff_jacobian",
    "matrix_rank_by_svd",
    "orthonormal_basis",
    "second_order_remainder",
    "stats_from_sigmas",
    "validity_radius",
]
