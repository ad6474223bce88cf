"""Recursive summarize-and-ingest toy in a linearized state space.

The state S is a d-vector centred at the target S* = 0.  Consolidation
blends toward an answer subspace through the projector P: S <- ((1 - beta) I
+ beta P) S.  Expansion ingests one chunk as a linear perturbation S <-
(I + E_c) S.  The commutator of the two linearizations collapses to
beta [P, E_c], so whether the order gap can certify convergence reduces to
a coverage question: on the answer-relevant subspace range(I - P), do the
chunk commutators excite every direction?

Distances that matter live on range(I - P): directions inside the answer
subspace are answer-preserving, and the dynamics is free to drift along
them.  The contraction rate on the answer-relevant block is

    gamma_eff = (1 - beta) * max_c || V^T (I + E_c) V ||,   V = basis(range(I - P)),

valid when no chunk feeds the answer component back into the relevant block
(feedback_norm below measures exactly that leakage).
"""

from dataclasses import dataclass

import numpy as np

from .analysis import CommutatorReport, stats_from_sigmas
from .core import Event, EventSampler, OperatorPair, OrderGapTrace, order_gap_with_next
from .rng import child_rng
from .stopping import StoppingConfig, StoppingReport, TheoryConstants, windowed_stop

__all__ = [
    "RlmModel",
    "rlm_consolidation",
    "rlm_expansion",
    "rlm_pair",
    "rlm_sampler",
    "rlm_round_robin_sampler",
    "rlm_sigma_event",
    "RlmCoverageReport",
    "coverage_report",
    "DecayFit",
    "fit_decay",
    "ScheduleResult",
    "run_schedule",
    "RlmRunReport",
    "run_recursive",
]


@dataclass(frozen=True)
class RlmModel:
    """Projector, blend rate, and chunk perturbations.

    p_proj must be symmetric and idempotent (an orthogonal projector onto
    the answer subspace).  beta in (0, 1] is the consolidation blend;
    chunks is a stack of d x d perturbation matrices with sampling
    probabilities probs.
    """

    p_proj: np.ndarray
    beta: float
    chunks: np.ndarray
    probs: np.ndarray | None = None

    def __post_init__(self):
        p = np.asarray(self.p_proj, dtype=np.float64)
        object.__setattr__(self, "p_proj", p)
        d = p.shape[0]
        if p.shape != (d, d):
            raise ValueError("p_proj must be square")
        if not np.allclose(p, p.T, atol=1e-10):
            raise ValueError("p_proj must be symmetric")
        if not np.allclose(p @ p, p, atol=1e-10):
            raise ValueError("p_proj must be idempotent")
        if not (0.0 < self.beta <= 1.0):
            raise ValueError(f"beta must lie in (0, 1], got {self.beta}")
        chunks = np.asarray(self.chunks, dtype=np.float64)
        if chunks.ndim != 3 or chunks.shape[1:] != (d, d):
            raise ValueError(f"chunks must be stacked ({d}, {d}) matrices")
        object.__setattr__(self, "chunks", chunks)
        if self.probs is None:
            object.__setattr__(self, "probs", np.full(chunks.shape[0], 1.0 / chunks.shape[0]))
        else:
            probs = np.asarray(self.probs, dtype=np.float64)
            if probs.shape != (chunks.shape[0],) or np.any(probs < 0) or abs(probs.sum() - 1.0) > 1e-12:
                raise ValueError("probs must be a probability vector over chunks")
            object.__setattr__(self, "probs", probs)

    @property
    def d(self) -> int:
        return self.p_proj.shape[0]

    @property
    def n_chunks(self) -> int:
        return self.chunks.shape[0]

    @property
    def a_matrix(self) -> np.ndarray:
        return (1.0 - self.beta) * np.eye(self.d) + self.beta * self.p_proj

    @property
    def answer_basis(self) -> np.ndarray:
        """Orthonormal basis (columns) of the answer-relevant subspace range(I - P)."""
        evals, evecs = np.linalg.eigh(self.p_proj)
        return evecs[:, evals < 0.5]

    @property
    def gamma_eff(self) -> float:
        """Contraction rate of the answer-relevant block of the averaged dynamics."""
        v = self.answer_basis
        if v.shape[1] == 0:
            return 0.0
        worst = 0.0
        for c in range(self.n_chunks):
            b = np.eye(self.d) + self.chunks[c]
            worst = max(worst, float(np.linalg.norm(v.T @ b @ v, ord=2)))
        return (1.0 - self.beta) * worst

    @property
    def feedback_norm(self) -> float:
        """max_c ||V^T E_c P||: leakage of the answer component back into the
        relevant block.  gamma_eff governs the order-gap decay only when this
        is zero."""
        v = self.answer_basis
        if v.shape[1] == 0:
            return 0.0
        return max(
            float(np.linalg.norm(v.T @ self.chunks[c] @ self.p_proj, ord=2))
            for c in range(self.n_chunks)
        )

    def answer_distance(self, s: np.ndarray) -> float:
        """Distance measured on the answer-relevant subspace, ||V^T S||."""
        return float(np.linalg.norm(self.answer_basis.T @ np.asarray(s, dtype=np.float64)))


def rlm_consolidation(s: np.ndarray, model: RlmModel) -> np.ndarray:
    return model.a_matrix @ np.asarray(s, dtype=np.float64)


def rlm_expansion(s: np.ndarray, chunk_index: int, model: RlmModel) -> np.ndarray:
    if not 0 <= chunk_index < model.n_chunks:
        raise ValueError(f"chunk index {chunk_index} out of range")
    s = np.asarray(s, dtype=np.float64)
    return s + model.chunks[chunk_index] @ s


def rlm_pair(model: RlmModel) -> OperatorPair:
    def consolidate(s: np.ndarray) -> np.ndarray:
        return rlm_consolidation(s, model)

    def expand(event: Event, s: np.ndarray) -> np.ndarray:
        return rlm_expansion(s, event.id, model)

    return OperatorPair(dimension=model.d, consolidate=consolidate, expand=expand, event_kind="chunk")


def rlm_sampler(model: RlmModel) -> EventSampler:
    """Chunks drawn with replacement from the model's distribution."""
    events = [Event(id=i) for i in range(model.n_chunks)]
    probs = model.probs
    cum = np.cumsum(probs)
    cum[-1] = 1.0
    last = model.n_chunks - 1

    def draw(state: np.ndarray, rng: np.random.Generator) -> Event:
        return events[min(int(np.searchsorted(cum, rng.random(), side="right")), last)]

    def exact(state: np.ndarray):
        return events, probs

    return EventSampler(draw=draw, mode="fixed", exact=exact)


def rlm_round_robin_sampler(model: RlmModel) -> EventSampler:
    """Chunks visited cyclically in index order; ignores the rng."""
    events = [Event(id=i) for i in range(model.n_chunks)]
    counter = {"t": 0}

    def draw(state: np.ndarray, rng: np.random.Generator) -> Event:
        e = events[counter["t"] % model.n_chunks]
        counter["t"] += 1
        return e

    return EventSampler(draw=draw, mode="fixed", exact=None)


def rlm_sigma_event(model: RlmModel, chunk_index: int) -> np.ndarray:
    """Analytic commutator of the linearizations: beta (P E_c - E_c P)."""
    e = model.chunks[chunk_index]
    return model.beta * (model.p_proj @ e - e @ model.p_proj)


@dataclass
class RlmCoverageReport:
    """Gramian coverage on the answer-relevant subspace.

    covered means the restricted Gramian is positive definite: every
    answer-relevant direction is excited by some chunk's commutator, so the
    order gap is sensitive to the full remaining error.  unexcited_directions
    lists an orthonormal set of dead directions otherwise.  mu is the
    certified sensitivity constant lambda_min / (2 C) with the conservative
    Jacobian envelope C = 2 max_c ||A|| ||B_c||; None when not covered.
    """

    report: CommutatorReport
    covered: bool
    lambda_min: float
    unexcited_directions: np.ndarray
    envelope_c: float
    mu: float | None
    answer_dim: int


def coverage_report(model: RlmModel, rtol: float = 1e-10) -> RlmCoverageReport:
    sigmas = [(c, rlm_sigma_event(model, c)) for c in range(model.n_chunks)]
    v = model.answer_basis
    if v.shape[1] == 0:
        raise ValueError("answer-relevant subspace is trivial; coverage is vacuous")
    report = stats_from_sigmas(sigmas, weights=model.probs, subspace=v)

    g_restricted = v.T @ report.gramian @ v
    evals, evecs = np.linalg.eigh(0.5 * (g_restricted + g_restricted.T))
    scale = max(float(evals.max(initial=0.0)), 0.0)
    dead = evals <= rtol * max(scale, 1e-300)
    unexcited = v @ evecs[:, dead]
    covered = not bool(dead.any())

    a_norm = float(np.linalg.norm(model.a_matrix, ord=2))
    envelope = 2.0 * max(
        a_norm * float(np.linalg.norm(np.eye(model.d) + model.chunks[c], ord=2))
        for c in range(model.n_chunks)
    )
    lam = float(max(evals[0], 0.0))
    return RlmCoverageReport(
        report=report,
        covered=covered,
        lambda_min=lam,
        unexcited_directions=unexcited,
        envelope_c=envelope,
        mu=(lam / (2.0 * envelope)) if covered else None,
        answer_dim=v.shape[1],
    )


@dataclass
class DecayFit:
    """Least-squares line through (t, log omega_t) after a transient."""

    slope: float
    intercept: float
    r_squared: float
    t_start: int
    t_end: int
    n_points: int


def fit_decay(trace: OrderGapTrace, transient: int | None = None, floor: float = 1e-250) -> DecayFit:
    """Fit log omega_t ~ slope * t + intercept on the post-transient steps.

    The default transient is max(5, 10% of the trace).  Steps whose gap has
    underflowed below `floor` are excluded; at least three points must
    remain.
    """
    n = len(trace)
    if transient is None:
        transient = max(5, int(np.ceil(0.1 * n)))
    t = trace.t[transient:]
    omega = trace.omega[transient:]
    keep = omega > floor
    t, omega = t[keep], omega[keep]
    if t.size < 3:
        raise ValueError(f"decay fit needs >= 3 usable steps after transient {transient}, got {t.size}")
    y = np.log(omega)
    slope, intercept = np.polyfit(t.astype(np.float64), y, 1)
    resid = y - (slope * t + intercept)
    ss_res = float(np.sum(resid**2))
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 if ss_tot <= 1e-300 else 1.0 - ss_res / ss_tot
    return DecayFit(
        slope=float(slope),
        intercept=float(intercept),
        r_squared=float(r2),
        t_start=int(t[0]),
        t_end=int(t[-1]),
        n_points=int(t.size),
    )


@dataclass
class ScheduleResult:
    """Accumulate-and-trigger consolidation schedule.

    Expansion runs every step; consolidation fires only when the gap
    accumulated since the last consolidation exceeds the cost c.  c = 0
    consolidates after every chunk with a nonzero gap (the canonical
    dynamics); c = inf never consolidates.
    """

    trace: OrderGapTrace
    consolidation_steps: np.ndarray
    final_state: np.ndarray
    trigger_cost: float


def run_schedule(
    model: RlmModel,
    s0: np.ndarray,
    n_steps: int,
    trigger_cost: float,
    seed: int = 0,
    round_robin: bool = False,
) -> ScheduleResult:
    if trigger_cost < 0:
        raise ValueError("trigger cost must be >= 0")
    pair = rlm_pair(model)
    sampler = rlm_round_robin_sampler(model) if round_robin else rlm_sampler(model)
    rng = child_rng(seed, 6)
    s = np.asarray(s0, dtype=np.float64).copy()
    acc = 0.0
    cons: list[int] = []
    ids = np.zeros(n_steps, dtype=np.int64)
    omegas = np.zeros(n_steps)
    for t in range(n_steps):
        event = sampler.draw(s, rng)
        omega, _ = order_gap_with_next(pair, s, event, step_index=t)
        ids[t] = event.id
        omegas[t] = omega
        s = rlm_expansion(s, event.id, model)
        acc += omega
        if acc > trigger_cost:
            s = rlm_consolidation(s, model)
            cons.append(t)
            acc = 0.0
    trace = OrderGapTrace(
        t=np.arange(n_steps, dtype=np.int64), event_id=ids, omega=omegas
    )
    return ScheduleResult(
        trace=trace,
        consolidation_steps=np.asarray(cons, dtype=np.int64),
        final_state=s,
        trigger_cost=trigger_cost,
    )


@dataclass
class RlmRunReport:
    """One recursive run: stopping report, decay fit, coverage handles.

    stopping comes from the canonical windowed rule; fit from an
    uninterrupted trajectory with the same event stream (identical prefix,
    so the two views agree step for step).  answer_distance_final measures
    the endpoint on the answer-relevant subspace, the metric mu certifies.
    """

    stopping: StoppingReport
    fit: DecayFit
    full_trace: OrderGapTrace
    gamma_eff: float
    answer_distance_final: float
    schedule: ScheduleResult | None = None


def run_recursive(
    model: RlmModel,
    s0: np.ndarray,
    stop_cfg: StoppingConfig,
    seed: int = 0,
    trajectory_index: int = 0,
    round_robin: bool = False,
    transient: int | None = None,
    trigger_cost: float | None = None,
    constants: TheoryConstants | None = None,
) -> RlmRunReport:
    """Canonical recursive dynamics with windowed stopping and a decay fit.

    The fit trajectory replays the same child stream as the stopping run,
    so its first tau steps coincide with the stopping trace.  When
    trigger_cost is given, the accumulate-and-trigger schedule is run as
    well (same stream again) and attached.
    """
    pair = rlm_pair(model)
    make_sampler = (lambda: rlm_round_robin_sampler(model)) if round_robin else (lambda: rlm_sampler(model))
    s0 = np.asarray(s0, dtype=np.float64)

    report = windowed_stop(
        pair,
        make_sampler(),
        s0,
        stop_cfg,
        child_rng(seed, trajectory_index),
        reference=np.zeros(model.d),
        constants=constants,
    )

    from .core import run_trajectory

    full_trace, _ = run_trajectory(
        pair,
        make_sampler(),
        s0,
        stop_cfg.t_max,
        child_rng(seed, trajectory_index),
        reference=np.zeros(model.d),
    )
    fit = fit_decay(full_trace, transient=transient)

    schedule = None
    if trigger_cost is not None:
        schedule = run_schedule(
            model, s0, stop_cfg.t_max, trigger_cost, seed=seed, round_robin=round_robin
        )

    return RlmRunReport(
        stopping=report,
        fit=fit,
        full_trace=full_trace,
        gamma_eff=model.gamma_eff,
        answer_distance_final=model.answer_distance(report.final_state),
        schedule=schedule,
    )
