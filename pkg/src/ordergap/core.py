"""Two-operator dynamics and the order-gap observable.

A consolidation operator Q and an event-indexed expansion family P_e act on
a parameter vector.  The order gap at a state is the distance between the
two compositions,

    omega(theta; e) = || Q(P_e(theta)) - P_e(Q(theta)) ||,

and the canonical dynamics advances by theta <- Q(P_e(theta)).  Everything
downstream (stopping rules, sensitivity analysis, the domain instantiations)
is built on the functions here.
"""

from dataclasses import dataclass, field
from typing import Any, Callable, Sequence

import numpy as np

__all__ = [
    "Event",
    "OperatorPair",
    "EventSampler",
    "OrderGapTrace",
    "NonFiniteStateError",
    "as_state",
    "l2_norm",
    "block_max_norm",
    "finite_sampler",
    "order_gap",
    "order_gap_with_next",
    "decision_order_gap",
    "step",
    "run_trajectory",
]


class NonFiniteStateError(RuntimeError):
    """An operator produced NaN or infinity; dynamics must not continue."""

    def __init__(self, message: str, step_index: int | None = None):
        super().__init__(message)
        self.step_index = step_index


def as_state(values, dimension: int | None = None) -> np.ndarray:
    """Validate and return a parameter vector as a float64 array.

    Rejects non-finite entries and, when given, a mismatched dimension.
    """
    theta = np.asarray(values, dtype=np.float64)
    if theta.ndim != 1:
        raise ValueError(f"state must be a 1-d vector, got shape {theta.shape}")
    if dimension is not None and theta.shape[0] != dimension:
        raise ValueError(f"state dimension {theta.shape[0]} != expected {dimension}")
    if not np.all(np.isfinite(theta)):
        raise NonFiniteStateError("state contains non-finite entries")
    return theta


def l2_norm(x: np.ndarray) -> float:
    return float(np.linalg.norm(x))


def block_max_norm(blocks: Sequence[slice]) -> Callable[[np.ndarray], float]:
    """Product norm: max over blocks of the Euclidean norm of each block.

    Used when a state splits into heterogeneous coordinate groups and
    per-block Lipschitz constants are the meaningful ones.
    """
    frozen = tuple(blocks)

    def norm(x: np.ndarray) -> float:
        return max(float(np.linalg.norm(x[b])) for b in frozen)

    return norm


@dataclass(frozen=True)
class Event:
    """One expansion event: an integer id plus arbitrary payload.

    The payload carries everything the expansion map needs (arm and reward,
    feature index, noise vector, ...), so P_e is deterministic given the
    event.
    """

    id: int
    payload: Any = None


@dataclass(frozen=True)
class OperatorPair:
    """A consolidation map Q and an event-indexed expansion family P_e.

    consolidate: theta -> theta', expand: (event, theta) -> theta'.  Both
    must preserve the dimension.  event_kind is a short label for traces.
    """

    dimension: int
    consolidate: Callable[[np.ndarray], np.ndarray]
    expand: Callable[[Event, np.ndarray], np.ndarray]
    event_kind: str = "generic"

    def __post_init__(self):
        if self.dimension < 1:
            raise ValueError("dimension must be >= 1")


@dataclass(frozen=True)
class EventSampler:
    """Draws events, optionally conditioned on the current state.

    mode is "fixed" (draw ignores the state) or "state-dependent".  When the
    event set is finite with known probabilities, ``exact`` returns it so
    expectations can be taken as exact weighted sums; otherwise exact is
    None and callers fall back to Monte Carlo.
    """

    draw: Callable[[np.ndarray, np.random.Generator], Event]
    mode: str = "fixed"
    exact: Callable[[np.ndarray], tuple[Sequence[Event], np.ndarray]] | None = None

    def __post_init__(self):
        if self.mode not in ("fixed", "state-dependent"):
            raise ValueError(f"sampler mode {self.mode!r} not in ('fixed', 'state-dependent')")


def finite_sampler(events: Sequence[Event], probs=None) -> EventSampler:
    """Sampler over a finite event set with fixed probabilities."""
    events = list(events)
    if not events:
        raise ValueError("finite_sampler needs at least one event")
    if probs is None:
        p = np.full(len(events), 1.0 / len(events))
    else:
        p = np.asarray(probs, dtype=np.float64)
        if p.shape != (len(events),):
            raise ValueError("probs length must match events")
        if np.any(p < 0) or abs(p.sum() - 1.0) > 1e-12:
            raise ValueError("probs must be nonnegative and sum to 1")

    # inverse-CDF draw: rng.choice revalidates p on every call, which is the
    # dominant cost of long runs
    cum = np.cumsum(p)
    cum[-1] = 1.0
    last = len(events) - 1

    def draw(state: np.ndarray, rng: np.random.Generator) -> Event:
        return events[min(int(np.searchsorted(cum, rng.random(), side="right")), last)]

    def exact(state: np.ndarray):
        return events, p

    return EventSampler(draw=draw, mode="fixed", exact=exact)


@dataclass
class OrderGapTrace:
    """Per-step record of a run: times, event ids, gaps, optional extras.

    dist_to_ref is the distance of the pre-step state to a reference point
    (usually a fixed point) when one was supplied.  window_mean holds the
    trailing-window average from the step the window first fills; NaN
    before that.
    """

    t: np.ndarray
    event_id: np.ndarray
    omega: np.ndarray
    dist_to_ref: np.ndarray | None = None
    window_mean: np.ndarray | None = None
    reference: np.ndarray | None = None
    columns: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        n = len(self.t)
        for name, arr in (("event_id", self.event_id), ("omega", self.omega)):
            if len(arr) != n:
                raise ValueError(f"trace column {name} has length {len(arr)} != {n}")
        if np.any(self.omega < 0):
            raise ValueError("omega entries must be nonnegative")

    def __len__(self) -> int:
        return len(self.t)


def _check_finite(theta: np.ndarray, step_index: int | None, what: str) -> np.ndarray:
    if not np.all(np.isfinite(theta)):
        raise NonFiniteStateError(
            f"{what} produced a non-finite state"
            + (f" at step {step_index}" if step_index is not None else ""),
            step_index=step_index,
        )
    return theta


def order_gap_with_next(
    pair: OperatorPair,
    theta: np.ndarray,
    event: Event,
    step_index: int | None = None,
) -> tuple[float, np.ndarray]:
    """Order gap at theta for one event, plus the Q(P_e(theta)) branch.

    The returned state is exactly the canonical next iterate, so a stepper
    that already paid for the gap gets the advance for free.  Costs two
    operator evaluations beyond the step itself.
    """
    theta = as_state(theta, pair.dimension)
    expanded = pair.expand(event, theta)
    q_after_p = _check_finite(np.asarray(expanded, dtype=np.float64), step_index, "expand")
    q_after_p = _check_finite(
        np.asarray(pair.consolidate(q_after_p), dtype=np.float64), step_index, "consolidate"
    )
    consolidated = _check_finite(
        np.asarray(pair.consolidate(theta), dtype=np.float64), step_index, "consolidate"
    )
    p_after_q = _check_finite(
        np.asarray(pair.expand(event, consolidated), dtype=np.float64), step_index, "expand"
    )
    if q_after_p.shape != (pair.dimension,) or p_after_q.shape != (pair.dimension,):
        raise ValueError("operator changed the state dimension")
    return float(np.linalg.norm(q_after_p - p_after_q)), q_after_p


def order_gap(pair: OperatorPair, theta: np.ndarray, event: Event) -> float:
    """omega(theta; e) = ||Q(P_e(theta)) - P_e(Q(theta))||, always >= 0."""
    omega, _ = order_gap_with_next(pair, theta, event)
    return omega


def decision_order_gap(
    pair: OperatorPair,
    theta: np.ndarray,
    event: Event,
    decision: Callable[[np.ndarray], np.ndarray],
    decision_metric: Callable[[np.ndarray, np.ndarray], float] | None = None,
) -> float:
    """Order gap after mapping both compositions through a decision head.

    decision maps parameters to decision scores; the gap is the metric
    distance (Euclidean unless decision_metric is given) between the two
    decisions.  Zero whenever the raw gap lies in directions the decision
    ignores.
    """
    theta = as_state(theta, pair.dimension)
    q_after_p = pair.consolidate(pair.expand(event, theta))
    p_after_q = pair.expand(event, pair.consolidate(theta))
    za = np.asarray(decision(np.asarray(q_after_p, dtype=np.float64)), dtype=np.float64)
    zb = np.asarray(decision(np.asarray(p_after_q, dtype=np.float64)), dtype=np.float64)
    if decision_metric is None:
        return float(np.linalg.norm(za - zb))
    return float(decision_metric(za, zb))


def step(pair: OperatorPair, theta: np.ndarray, event: Event, step_index: int | None = None) -> np.ndarray:
    """Canonical advance theta <- Q(P_e(theta))."""
    theta = as_state(theta, pair.dimension)
    expanded = _check_finite(
        np.asarray(pair.expand(event, theta), dtype=np.float64), step_index, "expand"
    )
    return _check_finite(
        np.asarray(pair.consolidate(expanded), dtype=np.float64), step_index, "consolidate"
    )


def run_trajectory(
    pair: OperatorPair,
    sampler: EventSampler,
    theta0: np.ndarray,
    n_steps: int,
    rng: np.random.Generator,
    reference: np.ndarray | None = None,
) -> tuple[OrderGapTrace, np.ndarray]:
    """Run the canonical dynamics for n_steps, recording omega at each step.

    Deterministic given (rng state, inputs).  Aborts with the offending step
    index if any operator output is non-finite.  Returns the trace and the
    final state theta_{n_steps}.
    """
    if n_steps < 0:
        raise ValueError("n_steps must be >= 0")
    theta = as_state(theta0, pair.dimension)
    ref = None if reference is None else as_state(reference, pair.dimension)

    ts = np.arange(n_steps, dtype=np.int64)
    ids = np.zeros(n_steps, dtype=np.int64)
    omegas = np.zeros(n_steps, dtype=np.float64)
    dists = np.zeros(n_steps, dtype=np.float64) if ref is not None else None

    for t in range(n_steps):
        event = sampler.draw(theta, rng)
        if dists is not None:
            dists[t] = np.linalg.norm(theta - ref)
        omega, nxt = order_gap_with_next(pair, theta, event, step_index=t)
        ids[t] = event.id
        omegas[t] = omega
        theta = nxt

    trace = OrderGapTrace(t=ts, event_id=ids, omega=omegas, dist_to_ref=dists, reference=ref)
    return trace, theta
