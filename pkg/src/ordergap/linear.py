"""Generic affine operator pairs.

Consolidation Q(theta) = A theta + a and expansion family P_e(theta) =
B theta + b_e share one linear part B across events, so every per-event
commutator equals [A, B] and all the theory constants are exact matrix
norms.  These pairs are the workhorse fixtures: contraction factors,
displacement bounds, the sensitivity constant, and the validity radius are
all available in closed form, which makes every bound calculator checkable
without estimation error.
"""

from dataclasses import dataclass

import numpy as np

from .analysis import CommutatorReport, commutator, stats_from_sigmas
from .core import Event, EventSampler, OperatorPair, finite_sampler
from .stopping import TheoryConstants

__all__ = ["LinearPair"]


@dataclass(frozen=True)
class LinearPair:
    """Affine consolidation and affine expansions with shared linear part.

    offsets holds one expansion offset per event (rows); probs their
    sampling distribution (uniform by default).  The spectral norm of
    q_matrix must be below 1 so the consolidation is a contraction.
    """

    q_matrix: np.ndarray
    p_matrix: np.ndarray | None = None
    q_offset: np.ndarray | None = None
    offsets: np.ndarray | None = None
    probs: np.ndarray | None = None

    def __post_init__(self):
        q = np.atleast_2d(np.asarray(self.q_matrix, dtype=np.float64))
        d = q.shape[0]
        if q.shape != (d, d):
            raise ValueError("q_matrix must be square")
        object.__setattr__(self, "q_matrix", q)

        p = np.eye(d) if self.p_matrix is None else np.asarray(self.p_matrix, dtype=np.float64)
        if p.shape != (d, d):
            raise ValueError(f"p_matrix must be ({d}, {d})")
        object.__setattr__(self, "p_matrix", p)

        a = np.zeros(d) if self.q_offset is None else np.asarray(self.q_offset, dtype=np.float64)
        if a.shape != (d,):
            raise ValueError(f"q_offset must have length {d}")
        object.__setattr__(self, "q_offset", a)

        if self.offsets is None:
            b = np.zeros((1, d))
        else:
            b = np.atleast_2d(np.asarray(self.offsets, dtype=np.float64))
        if b.ndim != 2 or b.shape[1] != d:
            raise ValueError(f"offsets must be rows of length {d}")
        object.__setattr__(self, "offsets", b)

        if self.probs is None:
            w = np.full(b.shape[0], 1.0 / b.shape[0])
        else:
            w = np.asarray(self.probs, dtype=np.float64)
            if w.shape != (b.shape[0],) or np.any(w < 0) or abs(w.sum() - 1.0) > 1e-12:
                raise ValueError("probs must be a probability vector over the offsets")
        object.__setattr__(self, "probs", w)

        if self.rho >= 1.0:
            raise ValueError(f"q_matrix spectral norm {self.rho} >= 1: not a contraction")

    @property
    def dimension(self) -> int:
        return self.q_matrix.shape[0]

    @property
    def n_events(self) -> int:
        return self.offsets.shape[0]

    @property
    def rho(self) -> float:
        """Exact contraction factor of Q: the spectral norm of its linear part."""
        return float(np.linalg.norm(self.q_matrix, ord=2))

    @property
    def lipschitz(self) -> float:
        """Exact shared Lipschitz constant of the expansions."""
        return float(np.linalg.norm(self.p_matrix, ord=2))

    def theta_star(self) -> np.ndarray:
        """Fixed point of Q, exactly: (I - A)^{-1} a."""
        d = self.dimension
        return np.linalg.solve(np.eye(d) - self.q_matrix, self.q_offset)

    def displacements(self) -> np.ndarray:
        """W_e = ||P_e(theta*) - theta*|| per event."""
        star = self.theta_star()
        moved = star @ self.p_matrix.T + self.offsets
        return np.linalg.norm(moved - star, axis=1)

    def constants(
        self, theta0, mu: float | None = None, r: float | None = None
    ) -> TheoryConstants:
        """Exact theory constants for a run started at theta0."""
        w = self.displacements()
        sigma = float(self.probs @ w)
        m = float(w[self.probs > 0].max())  # a.s. envelope ignores never-drawn events
        if sigma == 0.0:
            m = 0.0
        return TheoryConstants(
            rho=self.rho,
            L=self.lipschitz,
            sigma=sigma,
            M=m,
            mu=mu,
            r=r,
            R0=float(np.linalg.norm(np.asarray(theta0, dtype=np.float64) - self.theta_star())),
        )

    def pair(self) -> OperatorPair:
        q, a = self.q_matrix, self.q_offset
        p, b = self.p_matrix, self.offsets

        def consolidate(theta: np.ndarray) -> np.ndarray:
            return q @ theta + a

        def expand(event: Event, theta: np.ndarray) -> np.ndarray:
            return p @ theta + b[event.id]

        return OperatorPair(
            dimension=self.dimension, consolidate=consolidate, expand=expand, event_kind="offset"
        )

    def events(self) -> list[Event]:
        return [Event(id=i) for i in range(self.n_events)]

    def sampler(self) -> EventSampler:
        return finite_sampler(self.events(), self.probs)

    def sigma_event(self) -> np.ndarray:
        """Per-event commutator [A, B]; identical for every event."""
        return commutator(self.q_matrix, self.p_matrix)

    def commutator_report(self) -> CommutatorReport:
        """Exact commutator statistics (no finite differencing needed)."""
        s = self.sigma_event()
        return stats_from_sigmas([(i, s) for i in range(self.n_events)], weights=self.probs)

    def expected_gap(self, theta) -> float:
        """Exact E_e[omega(theta; e)], a finite weighted sum."""
        theta = np.asarray(theta, dtype=np.float64)
        q, a = self.q_matrix, self.q_offset
        p, b = self.p_matrix, self.offsets
        first = q @ (p @ theta) + (b @ q.T) + a[None, :]  # Q(P_e(theta)) rows
        second = p @ (q @ theta + a) + b  # P_e(Q(theta)) rows
        gaps = np.linalg.norm(first - second, axis=1)
        return float(self.probs @ gaps)
