"""Sensitivity analysis for operator pairs.

The central objects are the commutator of the two linearizations at an
equilibrium, Sigma_e = A B_e - B_e A with A = DQ and B_e = DP_e, its event
average Sigma_bar, and the Gramian G = E[Sigma_e^T Sigma_e].  Their smallest
singular value / eigenvalue (restricted to a subspace when only part of the
state is identifiable) certify that the expected order gap grows linearly
with the distance from equilibrium:

    first-moment path   E[Omega(theta)] >= mu0 * ||theta - theta*||, locally,
                        with certified constant mu = mu0 / 2;
    Gramian path        E[Omega] >= (mu1_sq / (2 C)) * ||theta - theta*||
                        under a uniform Jacobian envelope C.

Also here: fixed points of the consolidation map, the effective equilibrium
of the averaged dynamics T(theta) = E_e[Q(P_e(theta))], and empirical
estimates of the contraction / Lipschitz / noise constants.
"""

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .core import Event, EventSampler, OperatorPair, as_state, l2_norm
from .rng import child_rng

__all__ = [
    "finite_diff_jacobian",
    "commutator",
    "JacobianPair",
    "CommutatorReport",
    "commutator_stats",
    "stats_from_sigmas",
    "FixedPointResult",
    "ConvergenceError",
    "consolidation_fixed_point",
    "EquilibriumReport",
    "effective_equilibrium",
    "ConstantsEstimate",
    "estimate_constants",
    "second_order_remainder",
    "validity_radius",
    "orthonormal_basis",
    "matrix_rank_by_svd",
]

RANK_RTOL = 1e-8  # singular values below RANK_RTOL * sigma_max count as zero


def finite_diff_jacobian(
    f: Callable[[np.ndarray], np.ndarray],
    theta: np.ndarray,
    h: float = 1e-5,
    richardson: bool = False,
) -> np.ndarray:
    """Central-difference Jacobian of f at theta.

    Error is O(h^2) for smooth f.  With richardson=True the h and h/2
    estimates are combined, (4 J_{h/2} - J_h) / 3, for use when the
    operator's scale is unknown.
    """
    theta = np.asarray(theta, dtype=np.float64)
    if h <= 0:
        raise ValueError("h must be positive")

    def central(hh: float) -> np.ndarray:
        cols = []
        for j in range(theta.shape[0]):
            dv = np.zeros_like(theta)
            dv[j] = hh
            fp = np.asarray(f(theta + dv), dtype=np.float64)
            fm = np.asarray(f(theta - dv), dtype=np.float64)
            if not (np.all(np.isfinite(fp)) and np.all(np.isfinite(fm))):
                raise ValueError(f"f produced a non-finite output at perturbed coordinate {j}")
            cols.append((fp - fm) / (2.0 * hh))
        return np.stack(cols, axis=1)

    if not richardson:
        return central(h)
    coarse = central(h)
    fine = central(h / 2.0)
    return (4.0 * fine - coarse) / 3.0


def commutator(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Matrix commutator [a, b] = a @ b - b @ a."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"commutator needs square matrices of equal shape, got {a.shape} and {b.shape}")
    return a @ b - b @ a


def orthonormal_basis(vectors: np.ndarray, rtol: float = RANK_RTOL) -> np.ndarray:
    """Orthonormal basis (columns) for the span of the given columns."""
    v = np.atleast_2d(np.asarray(vectors, dtype=np.float64))
    if v.ndim != 2:
        raise ValueError("expected a matrix of basis columns")
    u, s, _ = np.linalg.svd(v, full_matrices=False)
    if s.size == 0 or s[0] == 0.0:
        return np.zeros((v.shape[0], 0))
    keep = s > rtol * s[0]
    return u[:, keep]


def matrix_rank_by_svd(m: np.ndarray, rtol: float = RANK_RTOL) -> int:
    """Rank as the count of singular values above rtol * sigma_max."""
    s = np.linalg.svd(np.asarray(m, dtype=np.float64), compute_uv=False)
    if s.size == 0 or s[0] == 0.0:
        return 0
    return int(np.sum(s > rtol * s[0]))


@dataclass(frozen=True)
class JacobianPair:
    """Linearizations at an evaluation point: A = DQ and per-event B_e."""

    a: np.ndarray
    b_events: list[tuple[int, np.ndarray]]
    eval_point: np.ndarray

    def __post_init__(self):
        d = self.a.shape[0]
        if self.a.shape != (d, d):
            raise ValueError("A must be square")
        for eid, b in self.b_events:
            if b.shape != (d, d):
                raise ValueError(f"B for event {eid} has shape {b.shape}, expected {(d, d)}")


@dataclass
class CommutatorReport:
    """Event-averaged commutator statistics, optionally on a subspace.

    mu0 is the smallest singular value of Sigma_bar (restricted to the
    subspace when one is given); mu1_sq the smallest eigenvalue of the
    restricted Gramian.  mu_first_moment = mu0 / 2 is the certified local
    sensitivity constant from the first-moment path.
    """

    sigma_bar: np.ndarray
    gramian: np.ndarray
    mu0: float
    mu1_sq: float
    rank_sigma_bar: int
    rank_gramian: int
    rank_rtol: float
    subspace: np.ndarray | None = None
    per_event: list[tuple[int, np.ndarray]] | None = None
    weights: np.ndarray | None = None

    @property
    def mu_first_moment(self) -> float:
        return 0.5 * self.mu0

    def __post_init__(self):
        g = self.gramian
        if not np.allclose(g, g.T, atol=1e-10 * max(1.0, float(np.abs(g).max(initial=0.0)))):
            raise ValueError("gramian must be symmetric")
        if self.mu0 < 0 or self.mu1_sq < -1e-12:
            raise ValueError("mu0 and mu1_sq must be nonnegative")


def stats_from_sigmas(
    sigmas: Sequence[tuple[int, np.ndarray]],
    weights=None,
    subspace: np.ndarray | None = None,
    rank_rtol: float = RANK_RTOL,
    keep_per_event: bool = True,
) -> CommutatorReport:
    """Assemble Sigma_bar, the Gramian, and their spectra from per-event commutators.

    weights default to uniform and must be a probability vector.  The
    subspace, when given, is a matrix of basis columns; mu0 / mu1_sq and the
    ranks are computed for the restriction to its span.
    """
    sigmas = list(sigmas)
    if not sigmas:
        raise ValueError("need at least one per-event commutator")
    d = sigmas[0][1].shape[0]
    if weights is None:
        w = np.full(len(sigmas), 1.0 / len(sigmas))
    else:
        w = np.asarray(weights, dtype=np.float64)
        if w.shape != (len(sigmas),):
            raise ValueError("weights length must match the number of events")
        if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-9:
            raise ValueError("weights must be nonnegative and sum to 1")

    sigma_bar = np.zeros((d, d))
    gramian = np.zeros((d, d))
    for (eid, s), we in zip(sigmas, w):
        if s.shape != (d, d):
            raise ValueError(f"commutator for event {eid} has shape {s.shape}, expected {(d, d)}")
        sigma_bar += we * s
        gramian += we * (s.T @ s)
    gramian = 0.5 * (gramian + gramian.T)  # kill rounding asymmetry

    basis = None
    if subspace is not None:
        basis = orthonormal_basis(subspace, rtol=rank_rtol)
        if basis.shape[1] == 0:
            raise ValueError("subspace basis spans nothing")
        sb = sigma_bar @ basis
        gr = basis.T @ gramian @ basis
    else:
        sb = sigma_bar
        gr = gramian

    svals = np.linalg.svd(sb, compute_uv=False)
    mu0 = float(svals[-1]) if svals.size else 0.0
    evals = np.linalg.eigvalsh(0.5 * (gr + gr.T))
    mu1_sq = float(max(evals[0], 0.0)) if evals.size else 0.0

    return CommutatorReport(
        sigma_bar=sigma_bar,
        gramian=gramian,
        mu0=mu0,
        mu1_sq=mu1_sq,
        rank_sigma_bar=matrix_rank_by_svd(sb, rank_rtol),
        rank_gramian=matrix_rank_by_svd(gr, rank_rtol),
        rank_rtol=rank_rtol,
        subspace=basis,
        per_event=sigmas if keep_per_event else None,
        weights=w,
    )


def commutator_stats(
    jacobians: JacobianPair,
    weights=None,
    subspace: np.ndarray | None = None,
    rank_rtol: float = RANK_RTOL,
) -> CommutatorReport:
    """Commutator statistics from a consolidation Jacobian and per-event expansion Jacobians."""
    sigmas = [(eid, commutator(jacobians.a, b)) for eid, b in jacobians.b_events]
    return stats_from_sigmas(sigmas, weights=weights, subspace=subspace, rank_rtol=rank_rtol)


class ConvergenceError(RuntimeError):
    """Fixed-point iteration failed to reach tolerance within max_iter."""

    def __init__(self, message: str, partial=None):
        super().__init__(message)
        self.partial = partial


@dataclass
class FixedPointResult:
    point: np.ndarray
    residuals: np.ndarray
    iterations: int
    converged: bool


def _damped_iteration(
    f: Callable[[np.ndarray], np.ndarray],
    theta0: np.ndarray,
    tol: float,
    max_iter: int,
    damping: float,
) -> FixedPointResult:
    if not (0.0 < damping <= 1.0):
        raise ValueError("damping must be in (0, 1]")
    if tol <= 0:
        raise ValueError("tol must be positive")
    theta = np.asarray(theta0, dtype=np.float64).copy()
    residuals = []
    for k in range(max_iter):
        nxt = np.asarray(f(theta), dtype=np.float64)
        if not np.all(np.isfinite(nxt)):
            raise ConvergenceError(f"iteration produced non-finite values at iteration {k}")
        res = float(np.linalg.norm(nxt - theta))
        residuals.append(res)
        theta = (1.0 - damping) * theta + damping * nxt
        if res <= tol:
            return FixedPointResult(theta, np.asarray(residuals), k + 1, True)
    return FixedPointResult(theta, np.asarray(residuals), max_iter, False)


def consolidation_fixed_point(
    consolidate: Callable[[np.ndarray], np.ndarray],
    theta0: np.ndarray,
    tol: float = 1e-12,
    max_iter: int = 10_000,
) -> FixedPointResult:
    """theta* with Q(theta*) = theta*, by plain Banach iteration.

    Raises ConvergenceError when tol is not reached within max_iter, which
    signals a non-contractive Q or an over-tight tolerance; the partial
    result rides along on the exception.
    """
    result = _damped_iteration(consolidate, theta0, tol, max_iter, damping=1.0)
    if not result.converged:
        raise ConvergenceError(
            f"consolidation fixed point not reached in {max_iter} iterations "
            f"(last residual {result.residuals[-1]:.3e})",
            partial=result,
        )
    return result


@dataclass
class EquilibriumReport:
    """Fixed points of Q alone and of the averaged step T = E_e[Q o P_e].

    residuals are the per-iteration ||T(theta) - theta|| norms of the T
    iteration; sigma_inf_estimate is the mean displacement E||P_e(theta) -
    theta|| at the effective equilibrium.  mc_noise_estimate scales the
    Monte-Carlo error of one T evaluation; n_mc_insufficient flags it
    exceeding the tolerance.
    """

    theta_star: np.ndarray
    theta_star_inf: np.ndarray
    residuals: np.ndarray
    sigma_inf_estimate: float
    converged: bool
    mc_noise_estimate: float = 0.0
    n_mc_insufficient: bool = False
    exact_expectation: bool = False


def effective_equilibrium(
    pair: OperatorPair,
    sampler: EventSampler,
    theta0: np.ndarray,
    n_mc: int = 1024,
    tol: float = 1e-10,
    max_iter: int = 2000,
    damping: float = 1.0,
    seed: int = 0,
) -> EquilibriumReport:
    """Locate theta*_inf with T(theta*_inf) = theta*_inf, T = E_e[Q(P_e(.))].

    With a finite event set the expectation is an exact weighted sum (for
    state-dependent samplers the probabilities are conditioned on the
    current iterate).  Otherwise T is estimated by Monte Carlo with common
    random numbers: every iteration replays the same event stream, so the
    iteration map stays deterministic and Banach iteration applies to it
    verbatim.
    """
    theta0 = as_state(theta0, pair.dimension)
    exact = sampler.exact is not None

    if exact:

        def t_map(theta: np.ndarray) -> np.ndarray:
            events, probs = sampler.exact(theta)
            acc = np.zeros(pair.dimension)
            for e, p in zip(events, probs):
                if p == 0.0:
                    continue
                acc += p * np.asarray(pair.consolidate(pair.expand(e, theta)), dtype=np.float64)
            return acc

    else:
        if n_mc < 1:
            raise ValueError("n_mc must be >= 1")

        def t_map(theta: np.ndarray) -> np.ndarray:
            rng = child_rng(seed, 0)  # identical stream each call: common random numbers
            acc = np.zeros(pair.dimension)
            for _ in range(n_mc):
                e = sampler.draw(theta, rng)
                acc += np.asarray(pair.consolidate(pair.expand(e, theta)), dtype=np.float64)
            return acc / n_mc

    result = _damped_iteration(t_map, theta0, tol, max_iter, damping)
    theta_inf = result.point

    q_fixed = consolidation_fixed_point(pair.consolidate, theta0, tol=max(tol, 1e-12))

    # displacement statistics of the expansion at the effective equilibrium
    mc_noise = 0.0
    if exact:
        events, probs = sampler.exact(theta_inf)
        disp = 0.0
        for e, p in zip(events, probs):
            if p == 0.0:
                continue
            moved = np.asarray(pair.expand(e, theta_inf), dtype=np.float64)
            disp += p * float(np.linalg.norm(moved - theta_inf))
        sigma_inf = disp
    else:
        rng = child_rng(seed, 1)
        samples = np.empty(n_mc)
        for i in range(n_mc):
            e = sampler.draw(theta_inf, rng)
            moved = np.asarray(pair.expand(e, theta_inf), dtype=np.float64)
            samples[i] = np.linalg.norm(moved - theta_inf)
        sigma_inf = float(samples.mean())
        mc_noise = float(samples.std(ddof=1) / np.sqrt(n_mc)) if n_mc > 1 else float("inf")

    return EquilibriumReport(
        theta_star=q_fixed.point,
        theta_star_inf=theta_inf,
        residuals=result.residuals,
        sigma_inf_estimate=sigma_inf,
        converged=result.converged,
        mc_noise_estimate=mc_noise,
        n_mc_insufficient=(not exact) and mc_noise > tol,
        exact_expectation=exact,
    )


@dataclass
class ConstantsEstimate:
    """Empirical operator constants.  All are lower bounds from finite probing:

    rho_hat / L_hat can only undershoot the true Lipschitz constants, and
    sigma_hat / M_hat come from finitely many displacement samples.
    """

    rho_hat: float
    l_hat: float
    sigma_hat: float
    m_hat: float
    n_probes: int
    n_events: int
    lower_bound: bool = True


def estimate_constants(
    pair: OperatorPair,
    sampler: EventSampler,
    theta_star: np.ndarray,
    n_probes: int = 64,
    n_events: int = 256,
    radius: float = 1.0,
    seed: int = 0,
    norm: Callable[[np.ndarray], float] = l2_norm,
    probe_pairs: Sequence[tuple[np.ndarray, np.ndarray]] | None = None,
) -> ConstantsEstimate:
    """Probe-based estimates of (rho, L, sigma, M) around theta_star.

    rho_hat = max ||Q(x) - Q(y)|| / ||x - y|| over probe pairs, L_hat the
    same for each sampled expansion, sigma_hat / M_hat the mean / max of
    W_e = ||P_e(theta*) - theta*|| over sampled events.  The norm is
    pluggable so per-block product norms can be used where those are the
    natural ones.  Pass probe_pairs to control the probe geometry (for
    example, block-aligned probes).
    """
    theta_star = as_state(theta_star, pair.dimension)
    rng = child_rng(seed, 2)

    if probe_pairs is None:
        if n_probes < 1:
            raise ValueError("n_probes must be >= 1")
        pairs = []
        for _ in range(n_probes):
            scale = radius * float(rng.uniform(0.05, 1.0))
            x = theta_star + scale * rng.standard_normal(pair.dimension)
            y = theta_star + scale * rng.standard_normal(pair.dimension)
            pairs.append((x, y))
    else:
        pairs = [(as_state(x, pair.dimension), as_state(y, pair.dimension)) for x, y in probe_pairs]
        if not pairs:
            raise ValueError("probe_pairs must be nonempty")

    events = [sampler.draw(theta_star, rng) for _ in range(max(1, n_events))]

    rho_hat = 0.0
    l_hat = 0.0
    for x, y in pairs:
        gap = norm(x - y)
        if gap == 0.0:
            continue
        rho_hat = max(rho_hat, norm(np.asarray(pair.consolidate(x)) - np.asarray(pair.consolidate(y))) / gap)
        for e in events[: min(len(events), 16)]:
            l_hat = max(
                l_hat,
                norm(np.asarray(pair.expand(e, x)) - np.asarray(pair.expand(e, y))) / gap,
            )

    w_samples = np.array(
        [norm(np.asarray(pair.expand(e, theta_star), dtype=np.float64) - theta_star) for e in events]
    )
    return ConstantsEstimate(
        rho_hat=float(rho_hat),
        l_hat=float(l_hat),
        sigma_hat=float(w_samples.mean()),
        m_hat=float(w_samples.max()),
        n_probes=len(pairs),
        n_events=len(events),
    )


def second_order_remainder(
    expected_gap: Callable[[np.ndarray], float],
    theta_star: np.ndarray,
    sigma_bar: np.ndarray,
    n_directions: int = 16,
    scale: float = 1e-3,
    seed: int = 0,
) -> float:
    """Estimate of the quadratic remainder R in E[Omega(theta* + x)] >= ||Sigma_bar x|| - R ||x||^2.

    Probes |E[Omega(theta* + s u)] - ||Sigma_bar s u||| / s^2 over random unit
    directions u.  Zero (up to rounding) for pairs whose composition branches
    are affine.
    """
    theta_star = np.asarray(theta_star, dtype=np.float64)
    rng = child_rng(seed, 3)
    worst = 0.0
    for _ in range(n_directions):
        u = rng.standard_normal(theta_star.shape[0])
        u /= np.linalg.norm(u)
        x = scale * u
        gap = float(expected_gap(theta_star + x))
        linear = float(np.linalg.norm(sigma_bar @ x))
        worst = max(worst, abs(gap - linear) / scale**2)
    return worst


def validity_radius(mu0: float, remainder: float) -> float:
    """Radius r = mu0 / (2 R) on which the first-moment sensitivity bound holds.

    Infinite when the measured quadratic remainder is zero (affine branches).
    """
    if mu0 < 0 or remainder < 0:
        raise ValueError("mu0 and remainder must be nonnegative")
    if remainder == 0.0:
        return float("inf")
    return mu0 / (2.0 * remainder)
