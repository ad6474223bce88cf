"""Windowed stopping on the order gap, with certified bound calculators.

The stopping rule watches a trailing window of gap values and halts the
first time the window mean falls to the threshold epsilon.  Under the
contraction assumptions (Q a rho-contraction, P_e L-Lipschitz with
gamma = rho * L < 1, displacement W_e = ||P_e(theta*) - theta*|| with mean
<= sigma and almost-sure bound M) the calculators here give:

  * the noise floor below which no threshold is reachable,
  * deterministic and high-probability stopping-time bounds,
  * endpoint quality bounds through the sensitivity constant mu,
  * inverse (suboptimality) bounds reading distance from observed gaps.

All bound inputs are recorded alongside the outputs so reports can be
audited.  gamma is always recomputed from rho and L, never stored.
"""

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .core import (
    EventSampler,
    NonFiniteStateError,
    OperatorPair,
    OrderGapTrace,
    as_state,
    order_gap_with_next,
)

__all__ = [
    "TheoryConstants",
    "StoppingConfig",
    "NoiseFloor",
    "noise_floor",
    "StoppingBounds",
    "stopping_bounds",
    "SuboptimalityBounds",
    "suboptimality_bounds",
    "StoppingReport",
    "windowed_stop",
    "expected_gap_stop",
    "BelowFloorWarning",
]


class BelowFloorWarning(UserWarning):
    """The stopping threshold sits at or below the noise floor; the rule may never trigger."""


@dataclass(frozen=True)
class TheoryConstants:
    """Constants of the contraction model.

    rho: contraction factor of Q, in [0, 1).
    L: Lipschitz constant of every P_e, >= 0.
    sigma: bound on the mean displacement E[W_e] at theta*.
    M: almost-sure displacement bound, M >= sigma (sigma = 0 forces M = 0).
    mu: sensitivity constant (expected gap >= mu * distance), when known.
    r: radius on which the sensitivity bound is valid, when known.
    R0: initial distance ||theta_0 - theta*||.
    """

    rho: float
    L: float
    sigma: float = 0.0
    M: float = 0.0
    mu: float | None = None
    r: float | None = None
    R0: float = 0.0

    def __post_init__(self):
        if not (0.0 <= self.rho < 1.0):
            raise ValueError(f"rho must be in [0, 1), got {self.rho}")
        if self.L < 0:
            raise ValueError("L must be >= 0")
        if self.sigma < 0:
            raise ValueError("sigma must be >= 0")
        if self.M < self.sigma:
            raise ValueError(f"M must be >= sigma, got M={self.M} < sigma={self.sigma}")
        if self.sigma == 0.0 and self.M != 0.0:
            raise ValueError("sigma = 0 forces M = 0 (displacement vanishes almost surely)")
        if self.mu is not None and self.mu <= 0:
            raise ValueError("mu must be positive when given")
        if self.r is not None and self.r <= 0:
            raise ValueError("r must be positive when given")
        if self.R0 < 0:
            raise ValueError("R0 must be >= 0")

    @property
    def gamma(self) -> float:
        """Composite contraction factor rho * L, recomputed on every access."""
        return self.rho * self.L


@dataclass(frozen=True)
class StoppingConfig:
    """Rule parameters: threshold, window length, budget, confidence.

    rule is "empirical" (window of realized gaps) or "expected" (window of
    exact conditional expected gaps; needs a finite event set).
    """

    epsilon: float
    window: int
    t_max: int
    delta: float | None = None
    rule: str = "empirical"

    def __post_init__(self):
        if self.epsilon <= 0:
            raise ValueError("epsilon must be positive")
        if self.window < 1:
            raise ValueError("window must be >= 1")
        if self.t_max < self.window:
            raise ValueError("t_max must be >= window")
        if self.delta is not None and not (0.0 < self.delta < 1.0):
            raise ValueError("delta must lie in (0, 1)")
        if self.rule not in ("empirical", "expected"):
            raise ValueError(f"rule {self.rule!r} not in ('empirical', 'expected')")


@dataclass(frozen=True)
class NoiseFloor:
    """Threshold floor under persistent noise.

    eps_equilibrium = (1 + rho) * sigma is the gap level sustained at the
    effective equilibrium; eps_trajectory = 2 gamma rho sigma / (1 - gamma)
    the extra level carried by the stationary trajectory.  eps_star is their
    sum; eps_star_envelope the same built from the almost-sure bound M.
    """

    eps_equilibrium: float
    eps_trajectory: float
    eps_star: float
    eps_star_envelope: float


def noise_floor(c: TheoryConstants) -> NoiseFloor:
    """Noise-floor decomposition; requires gamma < 1."""
    g = c.gamma
    if g >= 1.0:
        raise ValueError(f"gamma = rho * L = {g} >= 1: no contraction, floor undefined")
    eps_eq = (1.0 + c.rho) * c.sigma
    eps_traj = 2.0 * g * c.rho * c.sigma / (1.0 - g)
    eps_m = (1.0 + c.rho) * c.M + 2.0 * g * c.rho * c.M / (1.0 - g)
    return NoiseFloor(
        eps_equilibrium=eps_eq,
        eps_trajectory=eps_traj,
        eps_star=eps_eq + eps_traj,
        eps_star_envelope=eps_m,
    )


def _ceil_log_ratio(numerator: float, denominator: float, gamma: float) -> int:
    """ceil(log(numerator / denominator) / log(1 / gamma)), for 0 < gamma < 1."""
    value = math.log(numerator / denominator) / math.log(1.0 / gamma)
    return max(0, math.ceil(value))


def _n_eps(c: TheoryConstants, epsilon: float) -> int:
    """Steps until the noiseless pathwise gap bound 2 gamma^{t+1} R0 drops to epsilon."""
    g = c.gamma
    if g == 0.0 or c.R0 == 0.0 or 2.0 * g * c.R0 <= epsilon:
        return 0
    return _ceil_log_ratio(2.0 * g * c.R0, epsilon, g)


def _n_eps_envelope(c: TheoryConstants, epsilon: float, floor_envelope: float) -> int:
    """Steps until the noisy drift bound falls below (epsilon - eps_star_envelope) / 4."""
    slack = epsilon - floor_envelope
    if slack <= 0:
        raise ValueError(
            f"epsilon = {epsilon} is not above the envelope noise floor {floor_envelope}; "
            "noisy stopping bounds are undefined"
        )
    g = c.gamma
    if g == 0.0 or c.R0 == 0.0 or 4.0 * c.R0 <= slack:
        return 0
    return _ceil_log_ratio(4.0 * c.R0, slack, g)


def _gap_envelope(c: TheoryConstants) -> float:
    """Almost-sure bound K on single-step gaps along the contained trajectory."""
    g = c.gamma
    return 2.0 * c.rho * c.L * (c.R0 + c.rho * c.M / (1.0 - g)) + (1.0 + c.rho) * c.M


def _solve_w_min(c: TheoryConstants, epsilon: float, delta: float, floor_envelope: float) -> int:
    """Smallest window with w >= (8 K^2 / slack^2) * log(2 (w + N) / delta).

    The requirement is self-consistent (the horizon bound T0 = w + N depends
    on w), so it is resolved by fixed-point iteration on w; the logarithm
    grows slowly, so a handful of rounds settle it.  A final climb enforces
    the inequality exactly.
    """
    slack = epsilon - floor_envelope
    if slack <= 0:
        raise ValueError("epsilon must exceed the envelope noise floor")
    k = _gap_envelope(c)
    if k == 0.0:
        return 1
    n = _n_eps_envelope(c, epsilon, floor_envelope)
    base = 8.0 * k * k / (slack * slack)

    w = 1
    for _ in range(10):
        w_next = max(1, math.ceil(base * math.log(2.0 * (w + n) / delta)))
        if w_next == w:
            break
        w = w_next
    for _ in range(100):
        need = base * math.log(2.0 * (w + n) / delta)
        if w >= need:
            return w
        w = max(w + 1, math.ceil(need))
    raise ValueError("window requirement did not stabilize; constants are out of range")


@dataclass(frozen=True)
class StoppingBounds:
    """Calculated bounds for one (constants, config) pair.

    Noiseless: the rule triggers by w + n_eps and, with a sensitivity
    constant, the endpoint distance is at most epsilon / mu.  Noisy (delta
    given): with probability >= 1 - delta the rule triggers by t0 = w +
    n_eps_envelope, window-average distance is at most (epsilon + eta) / mu,
    and the endpoint adds the equilibrium offset rho M / (1 - gamma).
    containment_t0 is the step count after which the trajectory stays inside
    the sensitivity radius r.
    """

    epsilon: float
    window: int
    floor: NoiseFloor
    n_eps: int
    tau_bound_noiseless: int
    k_envelope: float
    n_eps_envelope: int | None = None
    t0: int | None = None
    eta: float | None = None
    w_min: int | None = None
    endpoint_noiseless: float | None = None
    window_distance_noisy: float | None = None
    endpoint_noisy: float | None = None
    containment_t0: int | None = None
    inputs: dict = field(default_factory=dict)


def stopping_bounds(c: TheoryConstants, cfg: StoppingConfig) -> StoppingBounds:
    """All bounds computable from the given constants and rule parameters.

    Pieces that need inputs the constants do not carry (delta, mu, r) are
    left as None.  Errors: gamma >= 1; in the noisy regime (delta given),
    epsilon at or below the envelope noise floor; containment requested with
    r <= rho M / (1 - gamma).
    """
    g = c.gamma
    if g >= 1.0:
        raise ValueError(f"gamma = {g} >= 1: no contraction, bounds undefined")
    floor = noise_floor(c)

    n_eps = _n_eps(c, cfg.epsilon)
    k = _gap_envelope(c)

    n_env = t0 = None
    eta = w_min = None
    window_dist = endpoint_noisy = None
    if cfg.delta is not None:
        n_env = _n_eps_envelope(c, cfg.epsilon, floor.eps_star_envelope)
        t0 = cfg.window + n_env
        eta = k * math.sqrt(2.0 * math.log(2.0 * t0 / cfg.delta) / cfg.window)
        w_min = _solve_w_min(c, cfg.epsilon, cfg.delta, floor.eps_star_envelope)
        if c.mu is not None:
            window_dist = (cfg.epsilon + eta) / c.mu
            endpoint_noisy = window_dist + c.rho * c.M / (1.0 - g)

    endpoint_det = None if c.mu is None else cfg.epsilon / c.mu

    containment = None
    if c.r is not None:
        offset = c.rho * c.M / (1.0 - g)
        if c.r <= offset:
            raise ValueError(
                f"containment needs r > rho M / (1 - gamma) = {offset}, got r = {c.r}"
            )
        if c.R0 <= c.r - offset:
            containment = 0
        elif g == 0.0:
            containment = 1
        else:
            containment = _ceil_log_ratio(c.R0, c.r - offset, g)

    return StoppingBounds(
        epsilon=cfg.epsilon,
        window=cfg.window,
        floor=floor,
        n_eps=n_eps,
        tau_bound_noiseless=cfg.window + n_eps,
        k_envelope=k,
        n_eps_envelope=n_env,
        t0=t0,
        eta=eta,
        w_min=w_min,
        endpoint_noiseless=endpoint_det,
        window_distance_noisy=window_dist,
        endpoint_noisy=endpoint_noisy,
        containment_t0=containment,
        inputs={
            "rho": c.rho,
            "L": c.L,
            "gamma": g,
            "sigma": c.sigma,
            "M": c.M,
            "mu": c.mu,
            "r": c.r,
            "R0": c.R0,
            "epsilon": cfg.epsilon,
            "window": cfg.window,
            "delta": cfg.delta,
        },
    )


@dataclass(frozen=True)
class SuboptimalityBounds:
    """Inverse bounds: read distance and loss from an observed mean gap.

    distance_lb lower-bounds ||theta - theta*||; loss_lb lower-bounds the
    loss gap under quadratic growth with modulus m_qg; the excess_loss
    fields upper-bound the loss at a stopped point under smoothness modulus
    m_smooth.
    """

    observed_gap: float
    distance_lb: float
    loss_lb: float | None = None
    excess_loss_noiseless: float | None = None
    excess_loss_noisy: float | None = None


def suboptimality_bounds(
    c: TheoryConstants,
    observed_gap_mean: float,
    epsilon: float | None = None,
    eta: float | None = None,
    m_qg: float | None = None,
    m_smooth: float | None = None,
) -> SuboptimalityBounds:
    """Distance and loss bounds from an observed expected-gap level.

    distance >= (observed - (1 + rho) sigma)_+ / (2 rho L); requires
    gamma > 0 (the forward sensitivity cannot be inverted at gamma = 0).
    Loss bounds are filled in when the corresponding moduli are supplied;
    the upper bounds additionally need epsilon (and eta for the noisy one)
    plus the sensitivity constant mu.
    """
    if observed_gap_mean < 0:
        raise ValueError("observed gap mean must be nonnegative")
    g = c.gamma
    if g == 0.0:
        raise ValueError("gamma = 0: observed gaps carry no distance information")
    excess = max(observed_gap_mean - (1.0 + c.rho) * c.sigma, 0.0)
    distance_lb = excess / (2.0 * c.rho * c.L)

    loss_lb = None
    if m_qg is not None:
        loss_lb = m_qg / (8.0 * c.rho**2 * c.L**2) * excess**2

    excess_det = excess_noisy = None
    if m_smooth is not None and epsilon is not None and c.mu is not None:
        excess_det = 0.5 * m_smooth * (epsilon / c.mu) ** 2
        if eta is not None:
            reach = (epsilon + eta) / c.mu + c.rho * c.M / (1.0 - g)
            excess_noisy = 0.5 * m_smooth * reach**2

    return SuboptimalityBounds(
        observed_gap=observed_gap_mean,
        distance_lb=distance_lb,
        loss_lb=loss_lb,
        excess_loss_noiseless=excess_det,
        excess_loss_noisy=excess_noisy,
    )


@dataclass
class StoppingReport:
    """Outcome of one stopping run.

    tau is the number of steps taken (the returned state is theta_tau);
    triggered says whether the window condition fired before the budget.
    window_averages holds the trailing mean per step (NaN until the window
    first fills).  checks maps bound names to booleans for every bound that
    was evaluable from the supplied constants and reference.
    """

    tau: int
    final_state: np.ndarray
    triggered: bool
    window_averages: np.ndarray
    trace: OrderGapTrace
    rule: str
    bounds: StoppingBounds | None = None
    checks: dict[str, bool] = field(default_factory=dict)
    below_floor: bool = False
    final_distance: float | None = None


def _prepare_bounds(
    cfg: StoppingConfig, constants: TheoryConstants | None
) -> tuple[StoppingBounds | None, bool]:
    if constants is None:
        return None, False
    below = False
    floor = noise_floor(constants)
    if constants.sigma > 0.0 and cfg.epsilon <= floor.eps_star:
        below = True
        warnings.warn(
            f"epsilon = {cfg.epsilon} is at or below the noise floor {floor.eps_star}; "
            "the window mean may never reach it",
            BelowFloorWarning,
            stacklevel=3,
        )
    try:
        return stopping_bounds(constants, cfg), below
    except ValueError:
        return None, below


def _evaluate_checks(
    cfg: StoppingConfig,
    constants: TheoryConstants | None,
    bounds: StoppingBounds | None,
    tau: int,
    triggered: bool,
    final_distance: float | None,
) -> dict[str, bool]:
    checks: dict[str, bool] = {}
    if bounds is None or constants is None:
        return checks
    if constants.sigma == 0.0:
        checks["tau_within_noiseless_bound"] = triggered and tau <= bounds.tau_bound_noiseless
        if bounds.endpoint_noiseless is not None and final_distance is not None:
            checks["endpoint_within_noiseless_bound"] = final_distance <= bounds.endpoint_noiseless
    if bounds.t0 is not None:
        checks["tau_within_t0"] = triggered and tau <= bounds.t0
        if bounds.endpoint_noisy is not None and final_distance is not None:
            checks["endpoint_within_noisy_bound"] = final_distance <= bounds.endpoint_noisy
    return checks


def _stop_loop(
    pair: OperatorPair,
    sampler: EventSampler,
    theta0: np.ndarray,
    cfg: StoppingConfig,
    rng: np.random.Generator,
    statistic,
    rule: str,
    reference: np.ndarray | None,
    constants: TheoryConstants | None,
) -> StoppingReport:
    """Shared engine: FIFO window of `statistic`, canonical state advance.

    One pass per step: sample e_t, compute the statistic and the reused
    branch state Q(P_{e_t}(theta_t)), enqueue, and trigger the first time a
    full window's mean is at or below epsilon (ties trigger).  The window
    sum is recomputed from the buffer on every enqueue; no incremental
    update drift.  Budget exhaustion returns tau = t_max, triggered False.
    """
    theta = as_state(theta0, pair.dimension)
    ref = None if reference is None else as_state(reference, pair.dimension)
    bounds, below = _prepare_bounds(cfg, constants)

    w = cfg.window
    buf = np.zeros(w)
    filled = 0
    pos = 0

    ts: list[int] = []
    ids: list[int] = []
    omegas: list[float] = []
    means: list[float] = []
    dists: list[float] | None = None if ref is None else []

    tau = cfg.t_max
    triggered = False
    final = theta

    for t in range(cfg.t_max):
        event = sampler.draw(theta, rng)
        if dists is not None:
            dists.append(float(np.linalg.norm(theta - ref)))
        value, omega, nxt = statistic(theta, event, t)
        ts.append(t)
        ids.append(event.id)
        omegas.append(omega)
        buf[pos] = value
        pos = (pos + 1) % w
        filled = min(filled + 1, w)
        if filled == w:
            mean = float(buf.sum()) / w
            means.append(mean)
            if mean <= cfg.epsilon:
                tau = t + 1
                triggered = True
                final = nxt
                break
        else:
            means.append(float("nan"))
        theta = nxt
    else:
        final = theta

    trace = OrderGapTrace(
        t=np.asarray(ts, dtype=np.int64),
        event_id=np.asarray(ids, dtype=np.int64),
        omega=np.asarray(omegas, dtype=np.float64),
        dist_to_ref=None if dists is None else np.asarray(dists, dtype=np.float64),
        window_mean=np.asarray(means, dtype=np.float64),
        reference=ref,
    )
    final_distance = None if ref is None else float(np.linalg.norm(final - ref))
    report = StoppingReport(
        tau=tau,
        final_state=final,
        triggered=triggered,
        window_averages=np.asarray(means, dtype=np.float64),
        trace=trace,
        rule=rule,
        bounds=bounds,
        below_floor=below,
        final_distance=final_distance,
    )
    report.checks = _evaluate_checks(cfg, constants, bounds, tau, triggered, final_distance)
    return report


def windowed_stop(
    pair: OperatorPair,
    sampler: EventSampler,
    theta0: np.ndarray,
    cfg: StoppingConfig,
    rng: np.random.Generator,
    reference: np.ndarray | None = None,
    constants: TheoryConstants | None = None,
) -> StoppingReport:
    """Run the canonical dynamics until the windowed gap mean reaches epsilon.

    The per-step statistic is the realized gap omega_t; the branch state
    Q(P_{e_t}(theta_t)) computed for the gap is reused as the next iterate.
    With w = 1 this stops at the first step whose gap is <= epsilon.  When
    constants (and a reference point) are supplied, the evaluable bound
    checks land in report.checks.
    """

    def statistic(theta, event, t):
        omega, nxt = order_gap_with_next(pair, theta, event, step_index=t)
        return omega, omega, nxt

    return _stop_loop(pair, sampler, theta0, cfg, rng, statistic, "empirical", reference, constants)


def expected_gap_stop(
    pair: OperatorPair,
    sampler: EventSampler,
    theta0: np.ndarray,
    cfg: StoppingConfig,
    rng: np.random.Generator,
    reference: np.ndarray | None = None,
    constants: TheoryConstants | None = None,
) -> StoppingReport:
    """Windowed stopping on the exact conditional expected gap.

    The window holds g_t = sum_e p_e(theta_t) * omega(theta_t; e) while the
    state still advances by one sampled event per step.  Requires a sampler
    with a finite exact event set.  Removes sampling noise from the statistic,
    not from the trajectory.
    """
    if sampler.exact is None:
        raise ValueError("expected-gap rule needs a sampler with a finite exact event set")

    def statistic(theta, event, t):
        omega, nxt = order_gap_with_next(pair, theta, event, step_index=t)
        events, probs = sampler.exact(theta)
        g = 0.0
        for e, p in zip(events, probs):
            if p == 0.0:
                continue
            if e is event:
                g += p * omega
            else:
                g += p * order_gap_with_next(pair, theta, e, step_index=t)[0]
        return g, omega, nxt

    return _stop_loop(pair, sampler, theta0, cfg, rng, statistic, "expected", reference, constants)
