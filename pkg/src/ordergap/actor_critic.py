"""Linearized actor-critic pair around a joint equilibrium.

Coordinates are centred so the equilibrium is the origin.  Expansion is one
TD-style critic update along a sampled feature event, w <- w + alpha phi_e
(delta_e^T w), leaving the policy parameters psi untouched.  Consolidation
shrinks the critic, w <- (1 - beta') w, and moves the policy along the
linearized policy gradient, psi <- psi + beta (H_w w + H_psi psi).  The
augmented variant adds a policy-to-critic distillation term beta' J_psi psi
to the critic update, which is what makes the policy block visible to the
order gap at all: without it, the averaged commutator annihilates every
(0, psi) direction, so no gap-based certificate about the policy can exist.

Everything here is linear, so analytic block formulas and finite-difference
Jacobians must agree to machine precision; both paths are provided.
"""

from dataclasses import dataclass

import numpy as np

from .analysis import (
    CommutatorReport,
    commutator,
    finite_diff_jacobian,
    matrix_rank_by_svd,
    orthonormal_basis,
    stats_from_sigmas,
)
from .core import Event, EventSampler, OperatorPair, finite_sampler

__all__ = [
    "ACModel",
    "ACParams",
    "td_expansion",
    "ac_consolidation",
    "ac_pair",
    "ac_sampler",
    "ac_sigma_event",
    "ac_sigma_bar",
    "Mu0Prediction",
    "mu0_prediction",
    "ACCommutatorReport",
    "ac_commutator_report",
    "random_model",
]

VARIANTS = ("baseline", "augmented")


@dataclass(frozen=True)
class ACModel:
    """Event family and linear blocks of the actor-critic pair.

    phis / deltas hold one feature vector and one TD-difference vector per
    event (rows), probs their sampling distribution.  H_w and H_psi are the
    policy-gradient blocks (H_psi must have a negative-definite symmetric
    part so the policy block alone is stable), J_psi the distillation block
    of the augmented consolidation.  m_feat = -E[phi delta^T] is derived and
    must have a positive-definite symmetric part, which is the standard
    on-policy TD stability condition.
    """

    phis: np.ndarray
    deltas: np.ndarray
    probs: np.ndarray
    h_w: np.ndarray
    h_psi: np.ndarray
    j_psi: np.ndarray
    alpha: float
    beta: float
    beta_prime: float
    gamma_rl: float = 0.9

    def __post_init__(self):
        for name in ("phis", "deltas", "probs", "h_w", "h_psi", "j_psi"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=np.float64))
        n, d = self.phis.shape
        if self.deltas.shape != (n, d):
            raise ValueError("deltas must match phis in shape")
        if self.probs.shape != (n,) or np.any(self.probs < 0) or abs(self.probs.sum() - 1.0) > 1e-12:
            raise ValueError("probs must be a probability vector over events")
        d_pi = self.h_psi.shape[0]
        if self.h_psi.shape != (d_pi, d_pi):
            raise ValueError("h_psi must be square")
        if self.h_w.shape != (d_pi, d):
            raise ValueError(f"h_w must be ({d_pi}, {d})")
        if self.j_psi.shape != (d, d_pi):
            raise ValueError(f"j_psi must be ({d}, {d_pi})")
        for val, name in ((self.alpha, "alpha"), (self.beta, "beta")):
            if val <= 0:
                raise ValueError(f"{name} must be positive")
        if self.beta_prime <= 0 or self.beta_prime >= 1:
            raise ValueError("beta_prime must lie in (0, 1)")
        sym = 0.5 * (self.h_psi + self.h_psi.T)
        if np.linalg.eigvalsh(sym).max() >= 0:
            raise ValueError("h_psi must have a negative-definite symmetric part")
        m = self.m_feat
        if np.linalg.eigvalsh(0.5 * (m + m.T)).min() <= 0:
            raise ValueError("m_feat = -E[phi delta^T] must have a positive-definite symmetric part")

    @property
    def d(self) -> int:
        return self.phis.shape[1]

    @property
    def d_pi(self) -> int:
        return self.h_psi.shape[0]

    @property
    def n_events(self) -> int:
        return self.phis.shape[0]

    @property
    def m_feat(self) -> np.ndarray:
        return -np.einsum("e,ei,ej->ij", self.probs, self.phis, self.deltas)


@dataclass(frozen=True)
class ACParams:
    """Critic weights w and policy parameters psi, flattened as [w, psi]."""

    w: np.ndarray
    psi: np.ndarray

    def to_vector(self) -> np.ndarray:
        return np.concatenate([self.w, self.psi])

    @staticmethod
    def from_vector(theta: np.ndarray, d: int) -> "ACParams":
        theta = np.asarray(theta, dtype=np.float64)
        return ACParams(w=theta[:d], psi=theta[d:])


def td_expansion(params: ACParams, event_index: int, model: ACModel) -> ACParams:
    """w <- w + alpha phi_e (delta_e^T w); the policy is untouched."""
    phi = model.phis[event_index]
    delta = model.deltas[event_index]
    return ACParams(w=params.w + model.alpha * phi * float(delta @ params.w), psi=params.psi)


def ac_consolidation(params: ACParams, model: ACModel, variant: str = "baseline") -> ACParams:
    """Critic shrinkage plus linearized policy-gradient step.

    Both output blocks read the input (w, psi); the augmented critic update
    uses the pre-update psi.
    """
    if variant not in VARIANTS:
        raise ValueError(f"variant {variant!r} not in {VARIANTS}")
    w = (1.0 - model.beta_prime) * params.w
    if variant == "augmented":
        w = w + model.beta_prime * (model.j_psi @ params.psi)
    psi = params.psi + model.beta * (model.h_w @ params.w + model.h_psi @ params.psi)
    return ACParams(w=w, psi=psi)


def ac_pair(model: ACModel, variant: str = "baseline") -> OperatorPair:
    d = model.d

    def consolidate(theta: np.ndarray) -> np.ndarray:
        return ac_consolidation(ACParams.from_vector(theta, d), model, variant).to_vector()

    def expand(event: Event, theta: np.ndarray) -> np.ndarray:
        return td_expansion(ACParams.from_vector(theta, d), event.id, model).to_vector()

    return OperatorPair(
        dimension=d + model.d_pi, consolidate=consolidate, expand=expand, event_kind="feature"
    )


def ac_sampler(model: ACModel) -> EventSampler:
    return finite_sampler([Event(id=i) for i in range(model.n_events)], model.probs)


def _blocks(model: ACModel, variant: str):
    d, d_pi = model.d, model.d_pi
    a = np.zeros((d + d_pi, d + d_pi))
    a[:d, :d] = (1.0 - model.beta_prime) * np.eye(d)
    if variant == "augmented":
        a[:d, d:] = model.beta_prime * model.j_psi
    a[d:, :d] = model.beta * model.h_w
    a[d:, d:] = np.eye(d_pi) + model.beta * model.h_psi
    return a


def ac_sigma_event(model: ACModel, event_index: int, variant: str = "baseline") -> np.ndarray:
    """Analytic per-event commutator.

    baseline:   [[0, 0], [alpha beta H_w phi delta^T, 0]]
    augmented:  adds the top-right block -alpha beta' phi delta^T J_psi.
    """
    if variant not in VARIANTS:
        raise ValueError(f"variant {variant!r} not in {VARIANTS}")
    d, d_pi = model.d, model.d_pi
    outer = np.outer(model.phis[event_index], model.deltas[event_index])
    sigma = np.zeros((d + d_pi, d + d_pi))
    sigma[d:, :d] = model.alpha * model.beta * (model.h_w @ outer)
    if variant == "augmented":
        sigma[:d, d:] = -model.alpha * model.beta_prime * (outer @ model.j_psi)
    return sigma


def ac_sigma_bar(model: ACModel, variant: str = "baseline") -> np.ndarray:
    """Analytic averaged commutator.

    baseline:   [[0, 0], [-alpha beta H_w M, 0]]
    augmented:  [[0, alpha beta' M J_psi], [-alpha beta H_w M, 0]]
    """
    if variant not in VARIANTS:
        raise ValueError(f"variant {variant!r} not in {VARIANTS}")
    d, d_pi = model.d, model.d_pi
    m = model.m_feat
    sigma = np.zeros((d + d_pi, d + d_pi))
    sigma[d:, :d] = -(model.alpha * model.beta) * (model.h_w @ m)
    if variant == "augmented":
        sigma[:d, d:] = (model.alpha * model.beta_prime) * (m @ model.j_psi)
    return sigma


def _smallest_positive_singular(m: np.ndarray, rtol: float = 1e-8) -> float:
    s = np.linalg.svd(m, compute_uv=False)
    if s.size == 0 or s[0] == 0.0:
        return 0.0
    keep = s[s > rtol * s[0]]
    return float(keep[-1]) if keep.size else 0.0


@dataclass
class Mu0Prediction:
    """Identifiable subspace and the predicted restricted sigma_min.

    The averaged commutator of the augmented variant is the off-diagonal
    pair U = alpha beta' M J_psi (critic rows) and L = -alpha beta H_w M
    (policy rows).  Its action separates: (w, psi) -> (U psi, L w).  On the
    joint subspace V = range(L^T) x range(U^T) the smallest singular value
    is exactly min over the two blocks of their smallest positive singular
    value, provided the rank conditions hold:

        (C1) rank(H_w M)  = min(d_pi, d)
        (C2) rank(M J_psi) = min(d, d_pi)

    With either rank condition failing, mu0 is None and the rank fields
    say which directions are lost; reporting a number there would certify
    sensitivity the pair does not have.
    """

    mu0: float | None
    c1_ok: bool
    c2_ok: bool
    rank_hw_m: int
    rank_m_jpsi: int
    v_w: np.ndarray
    v_psi: np.ndarray
    joint_basis: np.ndarray
    sigma_min_critic_block: float
    sigma_min_policy_block: float


def mu0_prediction(model: ACModel) -> Mu0Prediction:
    """Closed-form restricted sigma_min of the augmented averaged commutator."""
    m = model.m_feat
    hw_m = model.h_w @ m
    m_j = m @ model.j_psi
    rank1 = matrix_rank_by_svd(hw_m)
    rank2 = matrix_rank_by_svd(m_j)
    c1 = rank1 == min(model.d_pi, model.d)
    c2 = rank2 == min(model.d, model.d_pi)

    v_w = orthonormal_basis(hw_m.T)    # identifiable critic directions, in R^d
    v_psi = orthonormal_basis(m_j.T)   # identifiable policy directions, in R^d_pi
    d, d_pi = model.d, model.d_pi
    joint = np.zeros((d + d_pi, v_w.shape[1] + v_psi.shape[1]))
    joint[:d, : v_w.shape[1]] = v_w
    joint[d:, v_w.shape[1]:] = v_psi

    s_policy = model.alpha * model.beta * _smallest_positive_singular(hw_m)
    s_critic = model.alpha * model.beta_prime * _smallest_positive_singular(m_j)
    mu0 = min(s_policy, s_critic) if (c1 and c2) else None
    return Mu0Prediction(
        mu0=mu0,
        c1_ok=c1,
        c2_ok=c2,
        rank_hw_m=rank1,
        rank_m_jpsi=rank2,
        v_w=v_w,
        v_psi=v_psi,
        joint_basis=joint,
        sigma_min_critic_block=s_critic,
        sigma_min_policy_block=s_policy,
    )


@dataclass
class ACCommutatorReport:
    """Analytic and numeric commutator statistics side by side.

    numeric holds the finite-difference report (restricted to the
    identifiable subspace for the augmented variant); max_block_error is the
    largest absolute entry difference between the analytic and numeric
    averaged commutators; policy_null_residual (baseline only) is
    max over unit policy directions of ||Sigma_bar (0, x_psi)||, which the
    baseline must annihilate.
    """

    variant: str
    numeric: CommutatorReport
    sigma_bar_analytic: np.ndarray
    max_block_error: float
    prediction: Mu0Prediction | None = None
    policy_null_residual: float | None = None


def ac_commutator_report(model: ACModel, variant: str = "baseline", h: float = 1e-5) -> ACCommutatorReport:
    """Finite-difference commutator statistics at the origin, checked
    against the analytic block formulas."""
    pair = ac_pair(model, variant)
    zero = np.zeros(pair.dimension)
    a_num = finite_diff_jacobian(pair.consolidate, zero, h=h)
    sigmas = []
    for i in range(model.n_events):
        b_num = finite_diff_jacobian(lambda th, i=i: pair.expand(Event(id=i), th), zero, h=h)
        sigmas.append((i, commutator(a_num, b_num)))

    prediction = mu0_prediction(model) if variant == "augmented" else None
    subspace = prediction.joint_basis if prediction is not None else None
    numeric = stats_from_sigmas(sigmas, weights=model.probs, subspace=subspace)

    analytic = ac_sigma_bar(model, variant)
    max_err = float(np.abs(numeric.sigma_bar - analytic).max())

    null_res = None
    if variant == "baseline":
        d = model.d
        residuals = [
            float(np.linalg.norm(numeric.sigma_bar[:, d + j])) for j in range(model.d_pi)
        ]
        null_res = max(residuals)
    return ACCommutatorReport(
        variant=variant,
        numeric=numeric,
        sigma_bar_analytic=analytic,
        max_block_error=max_err,
        prediction=prediction,
        policy_null_residual=null_res,
    )


def random_model(
    seed: int,
    d: int = 2,
    d_pi: int = 2,
    n_events: int | None = None,
    alpha: float = 0.1,
    beta: float = 0.2,
    beta_prime: float = 0.3,
    gamma_rl: float = 0.9,
    max_tries: int = 200,
) -> ACModel:
    """Random well-posed model: unit-sphere features, Delta = gamma_rl phi' - phi.

    Resamples until the TD stability condition (m_feat positive definite)
    and both rank conditions hold, so every generated model admits the
    closed-form mu0.
    """
    from .rng import child_rng

    rng = child_rng(seed, 5)
    n = n_events if n_events is not None else max(2 * d, d + d_pi)
    for _ in range(max_tries):
        phis = rng.standard_normal((n, d))
        phis /= np.linalg.norm(phis, axis=1, keepdims=True)
        nxt = rng.standard_normal((n, d))
        nxt /= np.linalg.norm(nxt, axis=1, keepdims=True)
        deltas = gamma_rl * nxt - phis
        probs = rng.dirichlet(np.full(n, 5.0))
        g = rng.standard_normal((d_pi, d_pi))
        h_psi = -(g @ g.T + 0.5 * np.eye(d_pi))
        h_psi /= max(1.0, float(np.abs(np.linalg.eigvalsh(h_psi)).max()))
        h_w = rng.standard_normal((d_pi, d))
        j_psi = rng.standard_normal((d, d_pi))
        try:
            model = ACModel(
                phis=phis,
                deltas=deltas,
                probs=probs,
                h_w=h_w,
                h_psi=h_psi,
                j_psi=j_psi,
                alpha=alpha,
                beta=beta,
                beta_prime=beta_prime,
                gamma_rl=gamma_rl,
            )
        except ValueError:
            continue
        pred = mu0_prediction(model)
        if pred.c1_ok and pred.c2_ok:
            return model
    raise RuntimeError(f"no well-posed model found in {max_tries} tries for d={d}, d_pi={d_pi}")
