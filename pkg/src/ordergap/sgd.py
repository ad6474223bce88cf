"""Momentum SGD on a quadratic, split into gradient and momentum operators.

Expansion is one noisy gradient step that also feeds the momentum buffer:
g = H w + n,  w <- w - eta g,  m <- coef m + g.  Consolidation applies the
buffered momentum, w <- w - eta coef m.  With coef = 0 the consolidation is
the identity, the operators commute exactly, and the order gap is zero to
the last bit; with coef > 0 the gap is a cheap interference diagnostic
between the instantaneous gradient direction and the momentum buffer.  This
instantiation is diagnostic-grade: the split consolidation is not a
contraction in the plain Euclidean norm, so none of the certified stopping
bounds apply to it.
"""

import math
from dataclasses import dataclass

import numpy as np

from .core import Event, EventSampler, OperatorPair, OrderGapTrace, order_gap_with_next
from .rng import child_rng

__all__ = [
    "QuadraticProblem",
    "SgdState",
    "sgd_expansion",
    "sgd_consolidation",
    "sgd_pair",
    "sgd_sampler",
    "sgd_commutator",
    "joint_step_matrix",
    "SgdDiagnostics",
    "sgd_diagnostic_trace",
]


@dataclass(frozen=True)
class QuadraticProblem:
    """Objective 0.5 w^T H w with isotropic Gaussian gradient noise."""

    h: np.ndarray
    eta: float
    momentum: float
    noise_scale: float = 0.0

    def __post_init__(self):
        h = np.asarray(self.h, dtype=np.float64)
        object.__setattr__(self, "h", h)
        if h.ndim != 2 or h.shape[0] != h.shape[1]:
            raise ValueError("h must be square")
        if not np.allclose(h, h.T, atol=1e-10):
            raise ValueError("h must be symmetric")
        if np.linalg.eigvalsh(h).min() < -1e-12:
            raise ValueError("h must be positive semidefinite")
        if self.eta <= 0:
            raise ValueError("eta must be positive")
        if not (0.0 <= self.momentum < 1.0):
            raise ValueError("momentum must lie in [0, 1)")
        if self.noise_scale < 0:
            raise ValueError("noise_scale must be >= 0")

    @property
    def d(self) -> int:
        return self.h.shape[0]


@dataclass(frozen=True)
class SgdState:
    """Iterate w and momentum buffer m, flattened as [w, m]."""

    w: np.ndarray
    m: np.ndarray

    def to_vector(self) -> np.ndarray:
        return np.concatenate([self.w, self.m])

    @staticmethod
    def from_vector(theta: np.ndarray, d: int) -> "SgdState":
        theta = np.asarray(theta, dtype=np.float64)
        return SgdState(w=theta[:d], m=theta[d:])


def sgd_expansion(state: SgdState, noise: np.ndarray, prob: QuadraticProblem) -> SgdState:
    """One gradient step; the same gradient also accumulates into the buffer."""
    g = prob.h @ state.w + noise
    return SgdState(w=state.w - prob.eta * g, m=prob.momentum * state.m + g)


def sgd_consolidation(state: SgdState, prob: QuadraticProblem) -> SgdState:
    """Apply the buffered momentum to the iterate; the buffer is unchanged."""
    return SgdState(w=state.w - prob.eta * prob.momentum * state.m, m=state.m)


def sgd_pair(prob: QuadraticProblem) -> OperatorPair:
    d = prob.d

    def consolidate(theta: np.ndarray) -> np.ndarray:
        return sgd_consolidation(SgdState.from_vector(theta, d), prob).to_vector()

    def expand(event: Event, theta: np.ndarray) -> np.ndarray:
        return sgd_expansion(SgdState.from_vector(theta, d), event.payload, prob).to_vector()

    return OperatorPair(dimension=2 * d, consolidate=consolidate, expand=expand, event_kind="minibatch")


def sgd_sampler(prob: QuadraticProblem) -> EventSampler:
    """Event payload is the gradient noise vector for the step."""

    def draw(theta: np.ndarray, rng: np.random.Generator) -> Event:
        if prob.noise_scale == 0.0:
            return Event(id=0, payload=np.zeros(prob.d))
        return Event(id=0, payload=prob.noise_scale * rng.standard_normal(prob.d))

    return EventSampler(draw=draw, mode="fixed")


def sgd_commutator(prob: QuadraticProblem) -> np.ndarray:
    """Analytic commutator of the two linearizations (state-independent):

        [[-eta c H,  eta c (1 - c) I - eta^2 c H],
         [0,          eta c H]]                      with c = momentum.

    Identically zero at c = 0.
    """
    d = prob.d
    c = prob.momentum
    sigma = np.zeros((2 * d, 2 * d))
    sigma[:d, :d] = -prob.eta * c * prob.h
    sigma[:d, d:] = prob.eta * c * (1.0 - c) * np.eye(d) - prob.eta**2 * c * prob.h
    sigma[d:, d:] = prob.eta * c * prob.h
    return sigma


def joint_step_matrix(prob: QuadraticProblem) -> np.ndarray:
    """Exact linear map of one noiseless composed step Q(P(.)) on [w, m]."""
    d = prob.d
    c = prob.momentum
    i = np.eye(d)
    j = np.zeros((2 * d, 2 * d))
    j[:d, :d] = i - prob.eta * prob.h - prob.eta * c * prob.h
    j[:d, d:] = -prob.eta * c * c * i
    j[d:, :d] = prob.h
    j[d:, d:] = c * i
    return j


@dataclass
class SgdDiagnostics:
    """Diagnostic-only correlation between the order gap and the angle
    between the step's gradient and the pre-step momentum buffer.

    correlation is None when either series is constant (for example, zero
    momentum makes every gap zero).
    """

    trace: OrderGapTrace
    angles: np.ndarray
    correlation: float | None
    final_state: SgdState


def sgd_diagnostic_trace(
    prob: QuadraticProblem,
    state0: SgdState,
    n_steps: int,
    seed: int = 0,
    trajectory_index: int = 0,
) -> SgdDiagnostics:
    """Canonical run recording omega_t and angle(g_t, m_t) per step."""
    pair = sgd_pair(prob)
    sampler = sgd_sampler(prob)
    rng = child_rng(seed, trajectory_index)
    theta = state0.to_vector()
    d = prob.d

    ids = np.zeros(n_steps, dtype=np.int64)
    omegas = np.zeros(n_steps)
    angles = np.full(n_steps, np.nan)
    for t in range(n_steps):
        event = sampler.draw(theta, rng)
        g = prob.h @ theta[:d] + event.payload
        m = theta[d:]
        gn, mn = float(np.linalg.norm(g)), float(np.linalg.norm(m))
        if gn > 0 and mn > 0:
            angles[t] = math.acos(float(np.clip(g @ m / (gn * mn), -1.0, 1.0)))
        omega, nxt = order_gap_with_next(pair, theta, event, step_index=t)
        omegas[t] = omega
        theta = nxt

    trace = OrderGapTrace(
        t=np.arange(n_steps, dtype=np.int64), event_id=ids, omega=omegas,
        columns={"angle": angles},
    )
    valid = np.isfinite(angles)
    corr = None
    if valid.sum() >= 2:
        om, an = omegas[valid], angles[valid]
        if om.std() > 0 and an.std() > 0:
            corr = float(np.corrcoef(om, an)[0, 1])
    return SgdDiagnostics(
        trace=trace, angles=angles, correlation=corr, final_state=SgdState.from_vector(theta, d)
    )
