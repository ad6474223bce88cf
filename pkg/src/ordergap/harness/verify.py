"""Bound-verification suite: one check per advertised guarantee.

Every check pins a concrete fixture, measures the guaranteed quantity, and
compares it against the stated bound, so a regression in any operator,
bound calculator, or domain instantiation turns exactly one named criterion
red.  run_suite prints one line per criterion: name, measured value, bound,
verdict.  Checks also carry a wall-clock budget; exceeding it fails the
criterion, because the guarantees are stated at fixed fixture sizes.
"""

import os
import tempfile
import time
import warnings
from dataclasses import dataclass, replace

import numpy as np

from ..actor_critic import ac_commutator_report, ac_sigma_bar, random_model
from ..analysis import (
    commutator,
    effective_equilibrium,
    finite_diff_jacobian,
    second_order_remainder,
    validity_radius,
)
from ..bandit import (
    BanditConfig,
    BanditState,
    analytic_commutator,
    bandit_equilibrium,
    bandit_pair,
    gramian_diagnostics,
)
from ..core import Event, EventSampler, OperatorPair, run_trajectory
from ..linear import LinearPair
from ..rlm import RlmModel, coverage_report, fit_decay, rlm_pair, rlm_sampler, rlm_sigma_event
from ..rng import child_rng
from ..sgd import QuadraticProblem, sgd_pair, sgd_sampler
from ..stopping import BelowFloorWarning, StoppingConfig, expected_gap_stop, stopping_bounds, windowed_stop
from .config import parse_config
from .runner import run_experiment

__all__ = ["CheckResult", "run_suite", "suite_names"]


@dataclass
class CheckResult:
    """Verdict for one criterion: measured value against its stated bound."""

    name: str
    suite: str
    passed: bool
    measured: float
    bound: float
    seconds: float
    limit: float | None = None
    detail: str = ""


# ---------------------------------------------------------------------------
# shared fixtures

_DIAG = np.diag([0.5, 0.25])
_ROT = np.array([[0.0, -1.0], [1.0, 0.0]])


def _diag_rot() -> LinearPair:
    """Noiseless contraction/rotation pair: rho = 0.5, L = 1, gamma = 0.5."""
    return LinearPair(q_matrix=_DIAG, p_matrix=_ROT)


def _noisy_pair() -> LinearPair:
    """Same maps with four axis offsets of norm 0.1: sigma = M = 0.1."""
    offsets = 0.1 * np.array([[1.0, 0.0], [-1.0, 0.0], [0.0, 1.0], [0.0, -1.0]])
    return LinearPair(q_matrix=_DIAG, p_matrix=_ROT, offsets=offsets)


# ---------------------------------------------------------------------------
# criteria

def _check_geometric_decay():
    """Noiseless run: distance <= gamma^t R0 and gap <= 2 gamma^(t+1) R0."""
    spec = _diag_rot()
    theta0 = np.array([1.0, 0.0])
    gamma, r0 = 0.5, 1.0
    n = 40
    trace, final = run_trajectory(
        spec.pair(), spec.sampler(), theta0, n, child_rng(1, 0), reference=np.zeros(2)
    )
    t = trace.t.astype(np.float64)
    dist_slack = float((trace.dist_to_ref - gamma**t * r0).max())
    final_slack = float(np.linalg.norm(final) - gamma**n * r0)
    gap_slack = float((trace.omega - 2.0 * gamma ** (t + 1.0) * r0).max())
    measured = max(dist_slack, final_slack, gap_slack)
    return (
        measured <= 1e-12,
        measured,
        1e-12,
        f"max slack over {n} steps: distance {max(dist_slack, final_slack):.3g}, gap {gap_slack:.3g}",
    )


def _check_noiseless_stopping():
    """tau <= w + N_eps and endpoint <= eps / mu on every noiseless run."""
    spec = _diag_rot()
    theta0 = np.array([1.0, 0.0])
    rep = spec.commutator_report()
    mu = rep.mu_first_moment
    remainder = second_order_remainder(spec.expected_gap, spec.theta_star(), rep.sigma_bar)
    radius = validity_radius(rep.mu0, remainder)
    gamma = 0.5

    worst = -np.inf
    runs = 0
    for eps in (0.1, 0.01):
        if not eps <= 2.0 * gamma * radius:
            return False, np.inf, 0.0, f"epsilon {eps} outside sensitivity radius {radius:.3g}"
        for w in (1, 2, 5):
            cfg = StoppingConfig(epsilon=eps, window=w, t_max=200)
            constants = spec.constants(theta0, mu=mu)
            for runner in (windowed_stop, expected_gap_stop):
                report = runner(
                    spec.pair(), spec.sampler(), theta0, cfg, child_rng(2, runs),
                    reference=np.zeros(2), constants=constants,
                )
                runs += 1
                if not report.triggered:
                    return False, np.inf, 0.0, f"rule never triggered at eps={eps} w={w}"
                b = report.bounds
                worst = max(
                    worst,
                    float(report.tau - b.tau_bound_noiseless),
                    float(report.final_distance - b.endpoint_noiseless),
                )
    return (
        worst <= 0.0,
        worst,
        0.0,
        f"{runs} runs (eps x window x rule); max excess over tau and endpoint bounds; "
        f"mu={mu:g}, radius={radius:.3g}",
    )


def _noisy_statistics(pair, make_sampler, seed_base: int, label: str):
    """Shared engine for the two noisy stopping criteria (fixed and greedy).

    Both use the same maps, offset set, and constants (sigma = M = 0.1); the
    almost-sure envelope holds for any selection rule because every offset
    has the same norm.
    """
    spec = _noisy_pair()
    theta0 = np.array([1.0, 0.0])
    rep = spec.commutator_report()
    constants = spec.constants(theta0, mu=rep.mu_first_moment)
    delta = 0.1

    probe = stopping_bounds(constants, StoppingConfig(epsilon=0.45, window=1, t_max=2, delta=delta))
    epsilon = probe.floor.eps_star_envelope + 0.2
    slack = epsilon - probe.floor.eps_star_envelope
    # sensitivity bound must reach the noisy band: r >= rho M/(1-gamma) + slack/4.
    # The radius measures map curvature, so probe the centered pair: the
    # offsets' contribution is what the noise-floor terms already cover.
    centered = _diag_rot()
    remainder = second_order_remainder(centered.expected_gap, centered.theta_star(), rep.sigma_bar)
    radius = validity_radius(rep.mu0, remainder)
    need = constants.rho * constants.M / (1.0 - constants.gamma) + slack / 4.0
    if not radius >= need:
        return False, np.inf, delta, f"validity radius {radius:.3g} below required {need:.3g}"

    cfg = StoppingConfig(
        epsilon=epsilon, window=probe.w_min, t_max=probe.w_min + 60, delta=delta
    )
    n_runs = 200
    violations = 0
    endpoint_bad = 0
    t0_bound = None
    for s in range(n_runs):
        report = windowed_stop(
            pair, make_sampler(), theta0, cfg, child_rng(seed_base, s),
            reference=np.zeros(2), constants=constants,
        )
        t0_bound = report.bounds.t0
        if not report.checks["tau_within_t0"]:
            violations += 1
        elif not report.checks["endpoint_within_noisy_bound"]:
            endpoint_bad += 1
    fraction = violations / n_runs
    passed = fraction <= delta and endpoint_bad == 0
    return (
        passed,
        fraction,
        delta,
        f"{n_runs} seeds, w={cfg.window}, T0={t0_bound}, eps={epsilon:g}; {label}; "
        f"{violations} late stops, {endpoint_bad} endpoint violations among the rest",
    )


def _check_noisy_stopping():
    spec = _noisy_pair()
    return _noisy_statistics(spec.pair(), spec.sampler, seed_base=3, label="uniform offsets")


def _greedy_events():
    offsets = 0.1 * np.array([[1.0, 0.0], [-1.0, 0.0], [0.0, 1.0], [0.0, -1.0]])
    return [Event(id=i, payload=offsets[i]) for i in range(4)]


def _greedy_probs(theta: np.ndarray, explore: float = 0.2) -> np.ndarray:
    axis = int(np.argmax(np.abs(theta)))
    probs = np.full(4, explore / 4.0)
    probs[2 * axis] += (1.0 - explore) / 2.0
    probs[2 * axis + 1] += (1.0 - explore) / 2.0
    return probs


def _check_state_dependent_stopping():
    """Noisy stopping statistics under an axis-greedy state-dependent sampler.

    Every offset has norm exactly 0.1, so the almost-sure envelope M holds by
    construction for any selection rule, and the mirror-symmetric pairs keep
    the conditional mean displacement zero.
    """
    events = _greedy_events()
    pair = OperatorPair(
        dimension=2,
        consolidate=lambda th: _DIAG @ th,
        expand=lambda e, th: _ROT @ th + e.payload,
        event_kind="offset",
    )

    def make_sampler() -> EventSampler:
        def draw(theta: np.ndarray, rng: np.random.Generator) -> Event:
            probs = _greedy_probs(theta)
            u = rng.random()
            acc = 0.0
            for i in range(3):
                acc += probs[i]
                if u < acc:
                    return events[i]
            return events[3]

        return EventSampler(draw=draw, mode="state-dependent")

    return _noisy_statistics(
        pair, make_sampler, seed_base=10, label="axis-greedy state-dependent sampler"
    )


def _check_effective_equilibrium():
    """theta*_inf matches the fixed points, residuals contract at <= gamma + 0.02."""
    cases = [
        ("diag-rotation", _diag_rot(), np.zeros(2), np.array([1.0, 0.0])),
        (
            "conformal",
            LinearPair(q_matrix=0.5 * np.eye(2), p_matrix=_ROT),
            np.zeros(2),
            np.array([1.0, 0.0]),
        ),
        (
            "affine-offset",
            LinearPair(q_matrix=0.5 * np.eye(2), offsets=np.array([[1.0, 0.0]])),
            np.array([1.0, 0.0]),  # rho b / (1 - rho) with rho = 0.5, b = e1
            np.array([-1.0, 0.5]),
        ),
    ]
    worst_shift = 0.0
    worst_ratio = 0.0
    for name, spec, expect, theta0 in cases:
        eq = effective_equilibrium(spec.pair(), spec.sampler(), theta0, tol=1e-12)
        if not eq.converged:
            return False, np.inf, 1e-8, f"{name}: equilibrium iteration did not converge"
        worst_shift = max(worst_shift, float(np.linalg.norm(eq.theta_star_inf - expect)))
        resid = eq.residuals[eq.residuals > 1e-8]
        if resid.size >= 2:
            worst_ratio = max(worst_ratio, float((resid[1:] / resid[:-1]).max()))
    ratio_bound = 0.5 + 0.02
    passed = worst_shift <= 1e-8 and worst_ratio <= ratio_bound
    return (
        passed,
        worst_shift,
        1e-8,
        f"3 pairs; worst residual contraction ratio {worst_ratio:.4f} (bound {ratio_bound})",
    )


def _bandit_numeric_commutator(cfg: BanditConfig, state: BanditState, arm: int, reward: float):
    """FD commutator of the two linearizations at the same state."""
    pair = bandit_pair(cfg)
    event = Event(id=arm, payload=(arm, reward))
    theta = state.to_vector()
    a_num = finite_diff_jacobian(
        lambda th: np.asarray(pair.consolidate(th), dtype=np.float64), theta, richardson=True
    )
    b_num = finite_diff_jacobian(
        lambda th: np.asarray(pair.expand(event, th), dtype=np.float64), theta, richardson=True
    )
    return commutator(a_num, b_num)


def _check_bandit_commutator():
    """FD commutator matches the single-entry closed form at random states."""
    cfg = BanditConfig(
        mu_arm=np.array([0.2, -0.4, 0.9]),
        sigma_r2=0.7,
        mu_p=np.array([0.1, -0.2, 0.3]),
        lam=0.3,
        kappa=0.8,
        selection="fixed",
        p=np.array([0.5, 0.3, 0.2]),
    )
    a = cfg.n_arms
    rng = child_rng(5, 0)
    worst_rel = 0.0
    worst_off = 0.0
    for _ in range(100):
        state = BanditState(
            mu_hat=rng.uniform(-2.0, 2.0, a), sigma2_hat=rng.uniform(0.3, 2.0, a)
        )
        arm = int(rng.integers(a))
        sign = 1.0 if rng.random() < 0.5 else -1.0
        reward = float(state.mu_hat[arm] + sign * rng.uniform(0.2, 2.0))
        numeric = _bandit_numeric_commutator(cfg, state, arm, reward)
        exact = analytic_commutator(state, arm, reward, cfg)
        entry = exact[arm, a + arm]
        worst_rel = max(worst_rel, abs(numeric[arm, a + arm] - entry) / abs(entry))
        off = numeric.copy()
        off[arm, a + arm] = 0.0
        worst_off = max(worst_off, float(np.abs(off).max()))

    # lambda = kappa (1 - lambda): coupling factor zero, commutator vanishes
    degenerate = BanditConfig(
        mu_arm=cfg.mu_arm, sigma_r2=cfg.sigma_r2, mu_p=cfg.mu_p,
        lam=0.5, kappa=1.0, selection="fixed", p=cfg.p,
    )
    worst_degenerate = 0.0
    for _ in range(20):
        state = BanditState(
            mu_hat=rng.uniform(-2.0, 2.0, a), sigma2_hat=rng.uniform(0.3, 2.0, a)
        )
        arm = int(rng.integers(a))
        reward = float(state.mu_hat[arm] + rng.uniform(0.2, 2.0))
        numeric = _bandit_numeric_commutator(degenerate, state, arm, reward)
        worst_degenerate = max(worst_degenerate, float(np.abs(numeric).max()))

    passed = worst_rel <= 1e-6 and worst_off <= 1e-8 and worst_degenerate <= 1e-10
    return (
        passed,
        worst_rel,
        1e-6,
        f"100 probes; off-entry max {worst_off:.3g} (<= 1e-8); "
        f"degenerate lam=0.5 kappa=1 max {worst_degenerate:.3g} (<= 1e-10)",
    )


def _check_bandit_gramian():
    """Full support covers the variance subspace; a dead arm drops rank by one."""
    base = dict(
        mu_arm=np.array([0.2, -0.4, 0.9]),
        sigma_r2=1.0,
        mu_p=np.array([0.0, 0.0, 0.0]),
        lam=0.2,
        kappa=0.5,
        selection="fixed",
    )
    cfg = BanditConfig(p=np.array([0.4, 0.4, 0.2]), **base)
    theta0 = np.concatenate([cfg.mu_p, np.ones(3)])
    theta_inf = bandit_equilibrium(cfg, theta0)
    full = gramian_diagnostics(cfg, theta_inf)

    dead = BanditConfig(p=np.array([0.5, 0.5, 0.0]), **base)
    theta_inf_dead = bandit_equilibrium(dead, theta0)
    dropped = gramian_diagnostics(dead, theta_inf_dead)

    rank_drop = full.variance_rank - dropped.variance_rank
    passed = (
        full.report.mu1_sq > 0.0
        and full.covered
        and rank_drop == 1
        and not dropped.covered
    )
    return (
        passed,
        full.report.mu1_sq,
        0.0,
        f"lambda_min > bound required; variance rank {full.variance_rank} -> "
        f"{dropped.variance_rank} with arm 3 unselected (drop {rank_drop}, expected 1)",
    )


def _check_actor_critic_rank():
    """Baseline annihilates policy directions; augmented matches the block
    singular-value prediction; halving beta' halves the critic-policy block."""
    worst_null = 0.0
    worst_mu0 = 0.0
    halving_exact = True
    n_models = 50
    for i in range(n_models):
        model = random_model(700 + i, d=1 + (i % 3), d_pi=1 + ((i // 3) % 3))
        base = ac_commutator_report(model, "baseline")
        worst_null = max(worst_null, float(base.policy_null_residual))
        aug = ac_commutator_report(model, "augmented")
        if aug.prediction.mu0 is None:
            return False, np.inf, 1e-12, f"model {i}: rank conditions failed unexpectedly"
        worst_mu0 = max(worst_mu0, abs(aug.numeric.mu0 - aug.prediction.mu0))
        half = replace(model, beta_prime=model.beta_prime / 2.0)
        d = model.d
        full_block = ac_sigma_bar(model, "augmented")[:d, d:]
        half_block = ac_sigma_bar(half, "augmented")[:d, d:]
        if not np.array_equal(half_block, 0.5 * full_block):
            halving_exact = False
    passed = worst_null <= 1e-12 and worst_mu0 <= 1e-8 and halving_exact
    return (
        passed,
        worst_null,
        1e-12,
        f"{n_models} random models (d, d_pi <= 3); worst restricted sigma_min error "
        f"{worst_mu0:.3g} (<= 1e-8); beta'/2 halves the critic-policy block exactly: "
        f"{halving_exact}",
    )


def _rlm_numeric_sigma(model: RlmModel, chunk: int) -> np.ndarray:
    pair = rlm_pair(model)
    event = Event(id=chunk)

    def f_qp(s: np.ndarray) -> np.ndarray:
        return np.asarray(pair.consolidate(pair.expand(event, s)), dtype=np.float64)

    def f_pq(s: np.ndarray) -> np.ndarray:
        return np.asarray(pair.expand(event, pair.consolidate(s)), dtype=np.float64)

    zero = np.zeros(model.d)
    return finite_diff_jacobian(f_qp, zero) - finite_diff_jacobian(f_pq, zero)


def _check_rlm():
    """Worked commutator, commuting-chunk degeneracy, covered-model decay fit."""
    p_proj = np.diag([1.0, 0.0])

    worked = RlmModel(p_proj=p_proj, beta=0.5, chunks=np.array([[[0.0, 1.0], [0.0, 0.0]]]))
    analytic = rlm_sigma_event(worked, 0)
    err_worked = float(np.abs(_rlm_numeric_sigma(worked, 0) - analytic).max())
    expected = np.array([[0.0, 0.5], [0.0, 0.0]])
    if not np.array_equal(analytic, expected):
        return False, np.inf, 1e-10, "worked-example analytic commutator mismatch"

    commuting = RlmModel(
        p_proj=p_proj,
        beta=0.5,
        chunks=np.array([np.diag([0.3, -0.2]), np.diag([-0.1, 0.4])]),
    )
    cov_comm = coverage_report(commuting)
    gramian_zero = float(np.abs(cov_comm.report.gramian).max()) == 0.0
    err_commuting = max(
        float(np.abs(_rlm_numeric_sigma(commuting, c)).max()) for c in range(2)
    )

    covering = RlmModel(
        p_proj=p_proj, beta=0.5, chunks=np.array([[[-0.5, 1.0], [0.0, 0.0]]])
    )
    cov = coverage_report(covering)
    trace, _ = run_trajectory(
        rlm_pair(covering),
        rlm_sampler(covering),
        np.array([1.0, 1.0]),
        41,
        child_rng(8, 0),
    )
    fit = fit_decay(trace, transient=5)
    slope_excess = fit.slope - np.log(covering.gamma_eff)

    passed = (
        err_worked <= 1e-10
        and gramian_zero
        and not cov_comm.covered
        and err_commuting <= 1e-10
        and cov.covered
        and cov.lambda_min > 0.0
        and fit.t_start == 5
        and fit.t_end == 40
        and fit.r_squared >= 0.99
        and slope_excess <= 0.05
    )
    return (
        passed,
        err_worked,
        1e-10,
        f"worked-example FD error vs beta[P,E]; commuting chunks: gramian zero "
        f"{gramian_zero}, covered {cov_comm.covered}; covering model: lambda_min "
        f"{cov.lambda_min:.3g}, fit R^2 {fit.r_squared:.6f}, slope excess {slope_excess:.3g}",
    )


def _check_sgd_zero_gap():
    """momentum = 0 makes the operators commute bitwise under noise."""
    prob = QuadraticProblem(
        h=np.array([[1.0, 0.2], [0.2, 0.5]]), eta=0.1, momentum=0.0, noise_scale=0.5
    )
    theta0 = np.array([1.0, 1.0, 0.0, 0.0])
    trace, _ = run_trajectory(sgd_pair(prob), sgd_sampler(prob), theta0, 1000, child_rng(9, 0))
    measured = float(np.abs(trace.omega).max())
    exact_zero = bool(np.all(trace.omega == 0.0))
    return (
        exact_zero,
        measured,
        0.0,
        f"1000 noisy steps; every realized gap identically 0.0: {exact_zero}",
    )


_DETERMINISM_BANDIT = """\
schema = 1
experiment = "determinism-bandit"
seed = 7
seeds = 3

[bandit]
mu_arm = [0.2, -0.1, 0.55]
sigma_r2 = 0.8
mu_p = [0.0, 0.0, 0.0]
lambda = 0.25
kappa = 0.6
selection = "epsilon-greedy"
epsilon = 0.15

[stopping]
epsilon = 0.02
window = 25
t_max = 300
delta = 0.1

[constants]
rho = 0.75
L = 1.0
sigma = 0.3
M = 1.5
mu = 0.05
R0 = 1.0
"""

_DETERMINISM_RLM = """\
schema = 1
experiment = "determinism-rlm"
seed = 11
seeds = 2

[rlm]
p_proj = [[1.0, 0.0], [0.0, 0.0]]
beta = 0.5
chunks = [[[-0.5, 1.0], [0.0, 0.0]], [[0.2, 0.0], [0.3, 0.0]]]
probs = [0.6, 0.4]
theta0 = [1.0, 1.0]
transient = 5
trigger_cost = 0.4

[stopping]
epsilon = 0.001
window = 8
t_max = 80
"""


def _dir_bytes(path: str) -> dict[str, bytes]:
    out = {}
    for name in sorted(os.listdir(path)):
        with open(os.path.join(path, name), "rb") as fh:
            out[name] = fh.read()
    return out


def _check_determinism():
    """Running any config twice yields byte-identical traces and reports."""
    diffs = 0
    files = 0
    with tempfile.TemporaryDirectory() as tmp, warnings.catch_warnings():
        warnings.simplefilter("ignore", BelowFloorWarning)
        for tag, text in (("bandit", _DETERMINISM_BANDIT), ("rlm", _DETERMINISM_RLM)):
            cfg = parse_config(text.encode("utf-8"), source=f"<{tag}>")
            first = os.path.join(tmp, tag, "a")
            second = os.path.join(tmp, tag, "b")
            run_experiment(cfg, out_dir=first, quiet=True)
            run_experiment(cfg, out_dir=second, quiet=True)
            a, b = _dir_bytes(first), _dir_bytes(second)
            names = set(a) | set(b)
            files += len(names)
            diffs += sum(1 for n in names if a.get(n) != b.get(n))
    return (
        diffs == 0,
        float(diffs),
        0.0,
        f"two configs (bandit epsilon-greedy with bounds, rlm with schedule), "
        f"{files} files compared byte for byte",
    )


# ---------------------------------------------------------------------------
# registry and driver

_CHECKS = [
    ("noiseless-geometric-decay", "core", 1.0, _check_geometric_decay),
    ("noiseless-stopping-bound", "stopping", 1.0, _check_noiseless_stopping),
    ("noisy-stopping-statistics", "stopping", 30.0, _check_noisy_stopping),
    ("effective-equilibrium", "analysis", 5.0, _check_effective_equilibrium),
    ("bandit-analytic-commutator", "bandit", 5.0, _check_bandit_commutator),
    ("bandit-gramian-coverage", "bandit", 1.0, _check_bandit_gramian),
    ("actor-critic-rank-structure", "actor_critic", 10.0, _check_actor_critic_rank),
    ("rlm-coverage-and-decay", "rlm", 5.0, _check_rlm),
    ("sgd-zero-gap-baseline", "sgd", 1.0, _check_sgd_zero_gap),
    ("state-dependent-stopping", "stopping", 30.0, _check_state_dependent_stopping),
    ("determinism", "harness", None, _check_determinism),
]


def suite_names() -> list[str]:
    names = ["all"]
    for _, suite, _, _ in _CHECKS:
        if suite not in names:
            names.append(suite)
    return names


def _normalize(suite: str) -> str:
    s = suite.strip().lower().replace("-", "_")
    if s.startswith("domain_"):
        s = s[len("domain_"):]
    return s


def run_suite(suite: str = "all", quiet: bool = False) -> list[CheckResult]:
    """Run the criteria for one suite (or all) and print one verdict per line."""
    want = _normalize(suite)
    selected = [
        entry
        for entry in _CHECKS
        if want == "all" or _normalize(entry[1]) == want or _normalize(entry[0]) == want
    ]
    if not selected:
        raise ValueError(f"unknown suite {suite!r}; choose from {', '.join(suite_names())}")

    results: list[CheckResult] = []
    for name, grp, limit, fn in selected:
        start = time.perf_counter()
        try:
            ok, measured, bound, detail = fn()
        except Exception as exc:  # a crashed check is a failed criterion
            ok, measured, bound = False, float("nan"), float("nan")
            detail = f"{type(exc).__name__}: {exc}"
        seconds = time.perf_counter() - start
        within = limit is None or seconds <= limit
        result = CheckResult(
            name=name,
            suite=grp,
            passed=bool(ok and within),
            measured=float(measured),
            bound=float(bound),
            seconds=seconds,
            limit=limit,
            detail=detail,
        )
        results.append(result)
        if not quiet:
            verdict = "PASS" if result.passed else "FAIL"
            budget = f", limit {limit:g}s" if limit is not None else ""
            print(
                f"{name:<28} measured={measured:<12.4g} bound={bound:<12.4g} "
                f"{verdict} ({seconds:.2f}s{budget})"
            )
            if detail and (not result.passed or not within):
                print(f"    {detail}")
    if not quiet:
        n_pass = sum(r.passed for r in results)
        print(f"{n_pass}/{len(results)} criteria passed")
    return results
