"""Bayesian bandit head with prior-coupled consolidation.

State per arm: posterior mean and posterior variance.  Expansion is the
conjugate Gaussian update of the selected arm with the observed reward;
consolidation shrinks every mean toward a prior anchor mu_p by factor
lambda and deflates every variance by 1 / (1 + kappa).  The two maps fail
to commute only through the mean-from-variance coupling of the Bayesian
update, which makes the commutator a single matrix entry per event and the
coverage question exactly solvable.

Flattening convention: means first, then variances, so a 2A-vector is
[mu_hat_1 .. mu_hat_A, sigma2_hat_1 .. sigma2_hat_A].
"""

from dataclasses import dataclass, field

import numpy as np

from .analysis import CommutatorReport, stats_from_sigmas
from .core import Event, EventSampler, OperatorPair, block_max_norm
from .rng import child_rng
from .stopping import StoppingConfig, StoppingReport, TheoryConstants, windowed_stop

__all__ = [
    "BanditConfig",
    "BanditState",
    "bandit_expansion",
    "bandit_consolidation",
    "bandit_pair",
    "bandit_sampler",
    "arm_probabilities",
    "analytic_commutator",
    "analytic_commutator_entry",
    "expected_step",
    "bandit_equilibrium",
    "BanditGramianReport",
    "gramian_diagnostics",
    "quasi_stationary_means",
    "simulate_bandit",
    "mean_block",
    "variance_block",
    "bandit_product_norm",
]


@dataclass(frozen=True)
class BanditConfig:
    """Arms, reward model, and operator parameters.

    mu_arm are the true arm means, sigma_r2 the reward variance, mu_p the
    prior anchor of the consolidation, lam the mean-shrinkage weight in
    (0, 1), kappa > 0 the variance deflation.  selection is "fixed" (arm
    probabilities p) or "epsilon-greedy" (explore with probability epsilon,
    otherwise the highest posterior mean, ties to the lowest index).
    """

    mu_arm: np.ndarray
    sigma_r2: float
    mu_p: np.ndarray
    lam: float
    kappa: float
    selection: str = "fixed"
    p: np.ndarray | None = None
    epsilon: float = 0.1

    def __post_init__(self):
        object.__setattr__(self, "mu_arm", np.asarray(self.mu_arm, dtype=np.float64))
        object.__setattr__(self, "mu_p", np.asarray(self.mu_p, dtype=np.float64))
        if self.mu_arm.ndim != 1 or self.mu_arm.shape[0] < 1:
            raise ValueError("mu_arm must be a nonempty vector")
        if self.mu_p.shape != self.mu_arm.shape:
            raise ValueError("mu_p must match mu_arm in length")
        if self.sigma_r2 <= 0:
            raise ValueError("sigma_r2 must be positive")
        if not (0.0 < self.lam < 1.0):
            raise ValueError(f"lambda must lie in (0, 1), got {self.lam}")
        if self.kappa <= 0:
            raise ValueError(f"kappa must be positive, got {self.kappa}")
        if self.selection not in ("fixed", "epsilon-greedy"):
            raise ValueError(f"selection {self.selection!r} not in ('fixed', 'epsilon-greedy')")
        if self.selection == "fixed":
            if self.p is None:
                raise ValueError("fixed selection needs arm probabilities p")
            p = np.asarray(self.p, dtype=np.float64)
            if p.shape != self.mu_arm.shape or np.any(p < 0) or abs(p.sum() - 1.0) > 1e-12:
                raise ValueError("p must be a probability vector over the arms")
            object.__setattr__(self, "p", p)
        else:
            if not (0.0 <= self.epsilon <= 1.0):
                raise ValueError("epsilon must lie in [0, 1]")

    @property
    def n_arms(self) -> int:
        return self.mu_arm.shape[0]


@dataclass(frozen=True)
class BanditState:
    """Posterior means and strictly positive posterior variances."""

    mu_hat: np.ndarray
    sigma2_hat: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "mu_hat", np.asarray(self.mu_hat, dtype=np.float64))
        object.__setattr__(self, "sigma2_hat", np.asarray(self.sigma2_hat, dtype=np.float64))
        if self.mu_hat.shape != self.sigma2_hat.shape or self.mu_hat.ndim != 1:
            raise ValueError("mu_hat and sigma2_hat must be vectors of equal length")
        if not (np.all(np.isfinite(self.mu_hat)) and np.all(np.isfinite(self.sigma2_hat))):
            raise ValueError("bandit state must be finite")
        if np.any(self.sigma2_hat <= 0):
            raise ValueError("sigma2_hat must be positive elementwise")

    def to_vector(self) -> np.ndarray:
        return np.concatenate([self.mu_hat, self.sigma2_hat])

    @staticmethod
    def from_vector(theta: np.ndarray) -> "BanditState":
        theta = np.asarray(theta, dtype=np.float64)
        if theta.ndim != 1 or theta.shape[0] % 2:
            raise ValueError("flattened bandit state must have even length")
        a = theta.shape[0] // 2
        return BanditState(mu_hat=theta[:a], sigma2_hat=theta[a:])


def mean_block(n_arms: int) -> slice:
    return slice(0, n_arms)


def variance_block(n_arms: int) -> slice:
    return slice(n_arms, 2 * n_arms)


def bandit_product_norm(n_arms: int):
    """max(||mean block||, ||variance block||): the norm in which the
    consolidation's contraction factor is exactly max(1 - lambda, 1/(1 + kappa))."""
    return block_max_norm([mean_block(n_arms), variance_block(n_arms)])


def bandit_expansion(state: BanditState, arm: int, reward: float, sigma_r2: float) -> BanditState:
    """Conjugate Gaussian update of one arm; every other arm untouched."""
    if not 0 <= arm < state.mu_hat.shape[0]:
        raise ValueError(f"arm {arm} out of range")
    m = state.mu_hat.copy()
    v = state.sigma2_hat.copy()
    denom = v[arm] + sigma_r2
    m[arm] = (m[arm] * sigma_r2 + reward * v[arm]) / denom
    v[arm] = v[arm] * sigma_r2 / denom
    return BanditState(mu_hat=m, sigma2_hat=v)


def bandit_consolidation(state: BanditState, cfg: BanditConfig) -> BanditState:
    """Shrink means toward the prior anchor, deflate variances."""
    m = (1.0 - cfg.lam) * state.mu_hat + cfg.lam * cfg.mu_p
    v = state.sigma2_hat / (1.0 + cfg.kappa)
    return BanditState(mu_hat=m, sigma2_hat=v)


def _consolidate_vec(theta: np.ndarray, cfg: BanditConfig) -> np.ndarray:
    a = cfg.n_arms
    out = np.empty_like(theta)
    out[:a] = (1.0 - cfg.lam) * theta[:a] + cfg.lam * cfg.mu_p
    out[a:] = theta[a:] / (1.0 + cfg.kappa)
    return out


def _expand_vec(theta: np.ndarray, arm: int, reward: float, cfg: BanditConfig) -> np.ndarray:
    a = cfg.n_arms
    out = theta.copy()
    denom = theta[a + arm] + cfg.sigma_r2
    out[arm] = (theta[arm] * cfg.sigma_r2 + reward * theta[a + arm]) / denom
    out[a + arm] = theta[a + arm] * cfg.sigma_r2 / denom
    return out


def bandit_pair(cfg: BanditConfig) -> OperatorPair:
    """Operator pair on the flattened 2A-vector; event payload is (arm, reward)."""

    def consolidate(theta: np.ndarray) -> np.ndarray:
        return _consolidate_vec(theta, cfg)

    def expand(event: Event, theta: np.ndarray) -> np.ndarray:
        arm, reward = event.payload
        return _expand_vec(theta, arm, reward, cfg)

    return OperatorPair(
        dimension=2 * cfg.n_arms, consolidate=consolidate, expand=expand, event_kind="arm-reward"
    )


def arm_probabilities(cfg: BanditConfig, theta: np.ndarray) -> np.ndarray:
    """Selection distribution at the given flattened state."""
    if cfg.selection == "fixed":
        return cfg.p
    a = cfg.n_arms
    greedy = int(np.argmax(theta[:a]))  # argmax takes the lowest index on ties
    probs = np.full(a, cfg.epsilon / a)
    probs[greedy] += 1.0 - cfg.epsilon
    return probs


def bandit_sampler(cfg: BanditConfig) -> EventSampler:
    """Draw an arm by the selection rule, then a Gaussian reward for it.

    Event id is the arm index.  Under epsilon-greedy the distribution
    depends on the posterior means, so the sampler is state-dependent.
    """
    sd = np.sqrt(cfg.sigma_r2)
    last = cfg.n_arms - 1

    def draw(theta: np.ndarray, rng: np.random.Generator) -> Event:
        probs = arm_probabilities(cfg, theta)
        # inverse CDF by linear scan: fast for a handful of arms and avoids
        # rng.choice revalidating probs on every step
        u = rng.random()
        acc = 0.0
        arm = last
        for i in range(last):
            acc += probs[i]
            if u < acc:
                arm = i
                break
        reward = float(rng.normal(cfg.mu_arm[arm], sd))
        return Event(id=arm, payload=(arm, reward))

    mode = "fixed" if cfg.selection == "fixed" else "state-dependent"
    return EventSampler(draw=draw, mode=mode)


def _coupling_factor(cfg: BanditConfig) -> float:
    """(kappa (1 - lambda) - lambda) / (1 + kappa): the consolidation asymmetry
    between the mean and the variance coordinate.  Zero iff the two shrinkage
    factors coincide, which degenerates the whole commutator."""
    return (cfg.kappa * (1.0 - cfg.lam) - cfg.lam) / (1.0 + cfg.kappa)


def analytic_commutator_entry(state: BanditState, arm: int, reward: float, cfg: BanditConfig) -> float:
    """Value of the single nonzero commutator entry for event (arm, reward).

    Row mean_arm, column variance_arm:
        sigma_r2 (reward - mu_hat_arm) / (sigma2_hat_arm + sigma_r2)^2
        * (kappa (1 - lambda) - lambda) / (1 + kappa).
    Valid at any state, not just at an equilibrium: the expansion Jacobian
    is identity outside the updated arm's 2x2 block and the consolidation
    Jacobian is diagonal, so every other entry cancels exactly.
    """
    denom = state.sigma2_hat[arm] + cfg.sigma_r2
    return float(cfg.sigma_r2 * (reward - state.mu_hat[arm]) / denom**2 * _coupling_factor(cfg))


def analytic_commutator(state: BanditState, arm: int, reward: float, cfg: BanditConfig) -> np.ndarray:
    """Full commutator matrix: a single entry at (mean_arm, variance_arm)."""
    a = cfg.n_arms
    sigma = np.zeros((2 * a, 2 * a))
    sigma[arm, a + arm] = analytic_commutator_entry(state, arm, reward, cfg)
    return sigma


def expected_step(theta: np.ndarray, cfg: BanditConfig) -> np.ndarray:
    """Exact averaged step T(theta) = E_{arm, reward}[Q(P_e(theta))].

    The posterior-mean update is linear in the reward and the variance
    update is reward-free, so the reward expectation is closed-form; the
    arm expectation is a finite sum; and Q is affine, so it commutes with
    taking expectations.  Under epsilon-greedy the arm distribution is
    conditioned on the supplied state.
    """
    a = cfg.n_arms
    probs = arm_probabilities(cfg, theta)
    m, v = theta[:a], theta[a:]
    denom = v + cfg.sigma_r2
    mean_exp = m + probs * v * (cfg.mu_arm - m) / denom
    var_exp = v * (1.0 - probs * v / denom)
    return _consolidate_vec(np.concatenate([mean_exp, var_exp]), cfg)


def bandit_equilibrium(
    cfg: BanditConfig,
    theta0: np.ndarray,
    tol: float = 1e-12,
    max_iter: int = 200_000,
) -> np.ndarray:
    """Fixed point of the exact averaged step, by deterministic iteration.

    Both operators deflate variances, so the equilibrium variances sit at
    the zero boundary up to tol and the equilibrium means at the prior
    anchor; the iterate keeps every variance strictly positive, which is
    all the commutator formulas need (sigma_r2 > 0 regularizes them).
    """
    theta = np.asarray(theta0, dtype=np.float64).copy()
    for _ in range(max_iter):
        nxt = expected_step(theta, cfg)
        if float(np.linalg.norm(nxt - theta)) <= tol:
            return nxt
        theta = nxt
    raise RuntimeError(f"bandit equilibrium iteration did not reach tol={tol} in {max_iter} steps")


@dataclass
class BanditGramianReport:
    """Coverage diagnostics of the commutator Gramian on the variance subspace.

    Exact reward moments make everything deterministic: per event (arm a,
    reward r) the commutator has the single entry c_a(theta) (r - mu_hat_a)
    with c_a = sigma_r2 / (sigma2_hat_a + sigma_r2)^2 * coupling, so

        Sigma_bar entry_a  = p_a c_a (mu_arm_a - mu_hat_a),
        Gramian diag_a     = p_a c_a^2 (sigma_r2 + (mu_arm_a - mu_hat_a)^2)
                          >= p_a c_a^2 sigma_r2   (the per-arm floor).

    covered is True iff every arm has positive selection probability (and
    the coupling factor is nonzero); the variance-subspace rank drops by
    one for each unselected arm.
    """

    report: CommutatorReport
    arm_probs: np.ndarray
    per_arm_floor: np.ndarray
    per_arm_gramian: np.ndarray
    mean_first_moment: np.ndarray
    variance_rank: int
    covered: bool
    coupling: float
    eval_state: np.ndarray = field(repr=False, default=None)


def gramian_diagnostics(
    cfg: BanditConfig,
    theta: np.ndarray,
    n_reward_mc: int = 0,
    seed: int = 0,
) -> BanditGramianReport:
    """Gramian coverage report at a given (usually equilibrium) state.

    Default uses the exact Gaussian reward moments.  n_reward_mc > 0 switches
    to Monte-Carlo reward averaging, for cross-checking the closed forms.
    """
    a = cfg.n_arms
    theta = np.asarray(theta, dtype=np.float64)
    probs = arm_probabilities(cfg, theta)
    m, v = theta[:a], theta[a:]
    coup = _coupling_factor(cfg)
    c = cfg.sigma_r2 / (v + cfg.sigma_r2) ** 2 * coup

    if n_reward_mc > 0:
        rng = child_rng(seed, 4)
        sd = np.sqrt(cfg.sigma_r2)
        first = np.zeros(a)
        second = np.zeros(a)
        for arm in range(a):
            rewards = rng.normal(cfg.mu_arm[arm], sd, size=n_reward_mc)
            first[arm] = c[arm] * float(np.mean(rewards - m[arm]))
            second[arm] = c[arm] ** 2 * float(np.mean((rewards - m[arm]) ** 2))
    else:
        first = c * (cfg.mu_arm - m)
        second = c**2 * (cfg.sigma_r2 + (cfg.mu_arm - m) ** 2)

    d = 2 * a
    sigma_bar = np.zeros((d, d))
    gramian = np.zeros((d, d))
    for arm in range(a):
        sigma_bar[arm, a + arm] = probs[arm] * first[arm]
        gramian[a + arm, a + arm] = probs[arm] * second[arm]

    var_basis = np.zeros((d, a))
    for arm in range(a):
        var_basis[a + arm, arm] = 1.0
    g_var = var_basis.T @ gramian @ var_basis
    evals = np.linalg.eigvalsh(g_var)
    scale = float(evals.max(initial=0.0))
    rank = int(np.sum(evals > 1e-8 * max(scale, 1e-300)))
    mu1_sq = float(max(evals[0], 0.0))
    sb_restricted = sigma_bar @ var_basis
    svals = np.linalg.svd(sb_restricted, compute_uv=False)

    report = CommutatorReport(
        sigma_bar=sigma_bar,
        gramian=gramian,
        mu0=float(svals[-1]),
        mu1_sq=mu1_sq,
        rank_sigma_bar=int(np.sum(svals > 1e-8 * max(float(svals.max(initial=0.0)), 1e-300))),
        rank_gramian=rank,
        rank_rtol=1e-8,
        subspace=var_basis,
        weights=probs,
    )
    floor = probs * c**2 * cfg.sigma_r2
    return BanditGramianReport(
        report=report,
        arm_probs=probs,
        per_arm_floor=floor,
        per_arm_gramian=np.diag(gramian)[a:].copy(),
        mean_first_moment=np.abs(probs * first),
        variance_rank=rank,
        covered=bool(rank == a and coup != 0.0),
        coupling=coup,
        eval_state=theta,
    )


def quasi_stationary_means(cfg: BanditConfig, v_bar: float, probs: np.ndarray | None = None) -> np.ndarray:
    """Mean equilibrium with variances frozen at v_bar > 0.

    Solves, per arm, lambda (mu_p - mu) + (1 - lambda) p q (mu_arm - mu) = 0
    with q = v_bar / (v_bar + sigma_r2).  The bias mu_arm - mu scales like
    lambda for small lambda, which is the measurable mean-block sensitivity
    slope.  (The unfrozen equilibrium drifts to the prior anchor as the
    variances deflate to zero, so a variance level must be pinned to make
    the mean bias well defined.)
    """
    if v_bar <= 0:
        raise ValueError("v_bar must be positive")
    if probs is None:
        if cfg.selection != "fixed":
            raise ValueError("need explicit probs for non-fixed selection")
        probs = cfg.p
    q = v_bar / (v_bar + cfg.sigma_r2)
    w = (1.0 - cfg.lam) * probs * q
    return (w * cfg.mu_arm + cfg.lam * cfg.mu_p) / (w + cfg.lam)


def simulate_bandit(
    cfg: BanditConfig,
    theta0: BanditState,
    stop_cfg: StoppingConfig,
    seed: int = 0,
    trajectory_index: int = 0,
    constants: TheoryConstants | None = None,
    reference: np.ndarray | None = None,
) -> tuple[StoppingReport, np.ndarray]:
    """One stopping run of the bandit dynamics plus its per-step regret.

    Regret at step t is max(mu_arm) - mu_arm[a_t], recovered from the event
    ids in the trace.  Returns (stopping report, regret array).
    """
    pair = bandit_pair(cfg)
    sampler = bandit_sampler(cfg)
    rng = child_rng(seed, trajectory_index)
    report = windowed_stop(
        pair, sampler, theta0.to_vector(), stop_cfg, rng, reference=reference, constants=constants
    )
    best = float(cfg.mu_arm.max())
    regret = best - cfg.mu_arm[report.trace.event_id]
    report.trace.columns["regret"] = regret
    return report, regret
