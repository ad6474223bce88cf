"""Experiment orchestration: seed sweeps, per-seed artifacts, aggregation.

Each seed runs one stopping trajectory on the configured domain with its own
child RNG stream, writes a trace CSV and a stopping report, and contributes
to an aggregate report carrying bound-satisfaction fractions and the
domain's analysis numbers (commutator spectra, coverage verdicts, decay-fit
slopes).  Seeds run serially in index order; every artifact is a pure
function of the config bytes, so reruns are byte-identical.
"""

import os
from dataclasses import dataclass, replace
from typing import Callable

import numpy as np

from ..actor_critic import ac_commutator_report, ac_pair, ac_sampler
from ..analysis import effective_equilibrium, estimate_constants
from ..bandit import (
    bandit_equilibrium,
    bandit_pair,
    bandit_product_norm,
    bandit_sampler,
    gramian_diagnostics,
)
from ..core import OperatorPair, run_trajectory
from ..linear import LinearPair
from ..rlm import (
    coverage_report,
    fit_decay,
    rlm_pair,
    rlm_round_robin_sampler,
    rlm_sampler,
    run_recursive,
)
from ..rng import child_rng
from ..sgd import SgdState, joint_step_matrix, sgd_commutator, sgd_diagnostic_trace, sgd_pair, sgd_sampler
from ..stopping import StoppingReport, expected_gap_stop, noise_floor, windowed_stop
from .config import ExperimentConfig
from .io import write_report, write_trace

__all__ = ["SeedOutcome", "ExperimentResult", "run_experiment", "analyze", "bounds_records"]


@dataclass
class SeedOutcome:
    index: int
    report: StoppingReport
    extras: dict
    trace_path: str | None = None
    report_path: str | None = None


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    outcomes: list[SeedOutcome]
    aggregate: dict
    analysis: dict
    out_dir: str | None = None
    aggregate_path: str | None = None


def _build(cfg: ExperimentConfig) -> tuple[OperatorPair, Callable, np.ndarray, np.ndarray | None]:
    """(pair, sampler factory, theta0, reference) for the configured domain."""
    d = cfg.domain
    if d.name == "linear_pair":
        spec: LinearPair = d.model
        return spec.pair(), spec.sampler, d.theta0, d.reference
    if d.name == "bandit":
        return bandit_pair(d.model), (lambda: bandit_sampler(d.model)), d.theta0, d.reference
    if d.name == "actor_critic":
        variant = d.options["variant"]
        return (
            ac_pair(d.model, variant),
            (lambda: ac_sampler(d.model)),
            d.theta0,
            d.reference,
        )
    if d.name == "rlm":
        factory = (
            (lambda: rlm_round_robin_sampler(d.model))
            if d.options.get("round_robin")
            else (lambda: rlm_sampler(d.model))
        )
        return rlm_pair(d.model), factory, d.theta0, d.reference
    if d.name == "sgd":
        return sgd_pair(d.model), (lambda: sgd_sampler(d.model)), d.theta0, d.reference
    raise ValueError(f"unknown domain {d.name!r}")


def _run_seed(
    cfg: ExperimentConfig,
    pair: OperatorPair,
    make_sampler: Callable,
    index: int,
) -> tuple[StoppingReport, dict]:
    d = cfg.domain
    extras: dict = {}

    if d.name == "rlm" and cfg.stopping.rule == "empirical":
        run = run_recursive(
            d.model,
            d.theta0,
            cfg.stopping,
            seed=cfg.seed,
            trajectory_index=index,
            round_robin=bool(d.options.get("round_robin")),
            transient=d.options.get("transient"),
            trigger_cost=d.options.get("trigger_cost"),
            constants=cfg.constants,
        )
        extras["fit_slope"] = run.fit.slope
        extras["fit_r_squared"] = run.fit.r_squared
        extras["answer_distance_final"] = run.answer_distance_final
        if run.schedule is not None:
            extras["schedule_consolidations"] = int(len(run.schedule.consolidation_steps))
        return run.stopping, extras

    rng = child_rng(cfg.seed, index)
    runner = expected_gap_stop if cfg.stopping.rule == "expected" else windowed_stop
    report = runner(
        pair,
        make_sampler(),
        d.theta0,
        cfg.stopping,
        rng,
        reference=d.reference,
        constants=cfg.constants,
    )

    if d.name == "bandit":
        regret = float(d.model.mu_arm.max()) - d.model.mu_arm[report.trace.event_id]
        report.trace.columns["regret"] = regret
        extras["regret_total"] = float(regret.sum())
    elif d.name == "rlm":
        # Expected rule: replay the same stream uninterrupted so the decay
        # fit sees the whole horizon, not just the stopped prefix.
        full_trace, _ = run_trajectory(
            pair,
            make_sampler(),
            d.theta0,
            cfg.stopping.t_max,
            child_rng(cfg.seed, index),
            reference=d.reference,
        )
        fit = fit_decay(full_trace, transient=d.options.get("transient"))
        extras["fit_slope"] = fit.slope
        extras["fit_r_squared"] = fit.r_squared
        extras["answer_distance_final"] = d.model.answer_distance(report.final_state)
    return report, extras


def analyze(cfg: ExperimentConfig) -> dict:
    """Domain analysis records (deterministic, seed-independent sweep-wise)."""
    out: dict = {}
    d = cfg.domain
    opts = cfg.analysis
    if d.name == "linear_pair":
        spec: LinearPair = d.model
        if opts.commutator:
            rep = spec.commutator_report()
            out["mu0"] = rep.mu0
            out["mu1_sq"] = rep.mu1_sq
            out["mu_first_moment"] = rep.mu_first_moment
            out["rank_sigma_bar"] = rep.rank_sigma_bar
            out["rank_gramian"] = rep.rank_gramian
        if opts.equilibrium:
            eq = effective_equilibrium(
                spec.pair(),
                spec.sampler(),
                d.theta0,
                n_mc=opts.n_mc,
                tol=opts.tol,
                max_iter=opts.max_iter,
                seed=cfg.seed,
            )
            out["theta_star"] = eq.theta_star
            out["theta_star_inf"] = eq.theta_star_inf
            out["equilibrium_shift"] = float(np.linalg.norm(eq.theta_star_inf - eq.theta_star))
            out["sigma_inf"] = eq.sigma_inf_estimate
            out["equilibrium_converged"] = eq.converged
        if opts.estimate_constants:
            est = estimate_constants(spec.pair(), spec.sampler(), spec.theta_star(), seed=cfg.seed)
            out["rho_hat"] = est.rho_hat
            out["l_hat"] = est.l_hat
            out["sigma_hat"] = est.sigma_hat
            out["m_hat"] = est.m_hat
            out["rho_exact"] = spec.rho
            out["l_exact"] = spec.lipschitz
    elif d.name == "bandit":
        bc = d.model
        if opts.equilibrium:
            theta_inf = bandit_equilibrium(bc, d.theta0, tol=opts.tol)
            out["theta_star_inf"] = theta_inf
        else:
            theta_inf = d.theta0
        if opts.commutator:
            g = gramian_diagnostics(bc, theta_inf)
            out["coupling"] = g.coupling
            out["covered"] = g.covered
            out["variance_rank"] = g.variance_rank
            out["lambda_min_variance"] = g.report.mu1_sq
            out["per_arm_floor"] = g.per_arm_floor
            out["mu0"] = g.report.mu0
        if opts.estimate_constants:
            # probe only valid states: radius-ball probes around the
            # zero-variance fixed point would cross the update's pole at
            # sigma2_hat = -sigma_r2 and inflate l_hat with off-domain ratios
            a = bc.n_arms
            prng = child_rng(cfg.seed, 4)

            def _probe() -> np.ndarray:
                return np.concatenate(
                    [bc.mu_p + prng.uniform(-1.0, 1.0, a), prng.uniform(0.1, 1.1, a)]
                )

            est = estimate_constants(
                bandit_pair(bc),
                bandit_sampler(bc),
                d.reference,
                seed=cfg.seed,
                norm=bandit_product_norm(bc.n_arms),
                probe_pairs=[(_probe(), _probe()) for _ in range(64)],
            )
            out["rho_hat"] = est.rho_hat
            out["l_hat"] = est.l_hat
            out["sigma_hat"] = est.sigma_hat
            out["m_hat"] = est.m_hat
    elif d.name == "actor_critic":
        if opts.commutator:
            rep = ac_commutator_report(d.model, d.options["variant"])
            out["variant"] = rep.variant
            out["mu0"] = rep.numeric.mu0
            out["mu1_sq"] = rep.numeric.mu1_sq
            out["analytic_block_error"] = rep.max_block_error
            if rep.prediction is not None:
                out["mu0_predicted"] = rep.prediction.mu0
                out["rank_condition_c1"] = rep.prediction.c1_ok
                out["rank_condition_c2"] = rep.prediction.c2_ok
            if rep.policy_null_residual is not None:
                out["policy_null_residual"] = rep.policy_null_residual
    elif d.name == "rlm":
        model = d.model
        cov = coverage_report(model)
        out["coverage"] = "PASS" if cov.covered else "FAIL"
        out["lambda_min"] = cov.lambda_min
        out["answer_dim"] = cov.answer_dim
        out["gamma_eff"] = model.gamma_eff
        out["feedback_norm"] = model.feedback_norm
        if cov.covered:
            # mu-dependent bounds are only certified under coverage
            out["mu"] = cov.mu
            out["envelope_c"] = cov.envelope_c
    elif d.name == "sgd":
        prob = d.model
        if opts.commutator:
            sig = sgd_commutator(prob)
            out["commutator_norm"] = float(np.linalg.norm(sig, ord=2))
            joint = joint_step_matrix(prob)
            out["joint_spectral_radius"] = float(np.abs(np.linalg.eigvals(joint)).max())
        diag = sgd_diagnostic_trace(
            prob,
            SgdState.from_vector(d.theta0, prob.d),
            min(cfg.stopping.t_max, 512),
            seed=cfg.seed,
            trajectory_index=0,
        )
        out["angle_gap_correlation"] = diag.correlation
    return out


def bounds_records(b) -> dict:
    """Flatten a StoppingBounds object into report key=value records."""
    out: dict = {}
    if b is None:
        return out
    fl = b.floor
    out["floor.eps_equilibrium"] = fl.eps_equilibrium
    out["floor.eps_trajectory"] = fl.eps_trajectory
    out["floor.eps_star"] = fl.eps_star
    out["floor.eps_star_envelope"] = fl.eps_star_envelope
    out["bound.n_eps"] = b.n_eps
    out["bound.tau_noiseless"] = b.tau_bound_noiseless
    out["bound.k_envelope"] = b.k_envelope
    out["bound.n_eps_envelope"] = b.n_eps_envelope
    out["bound.t0"] = b.t0
    out["bound.eta"] = b.eta
    out["bound.w_min"] = b.w_min
    out["bound.endpoint_noiseless"] = b.endpoint_noiseless
    out["bound.window_distance_noisy"] = b.window_distance_noisy
    out["bound.endpoint_noisy"] = b.endpoint_noisy
    out["bound.containment_t0"] = b.containment_t0
    return out


def _bound_curve(cfg: ExperimentConfig, t: np.ndarray) -> np.ndarray | None:
    """Per-step expected-gap bound 2 gamma^{t+1} R0 + eps_star_envelope."""
    c = cfg.constants
    if c is None or c.gamma >= 1.0:
        return None
    envelope = noise_floor(c).eps_star_envelope
    return 2.0 * c.gamma ** (t.astype(np.float64) + 1.0) * c.R0 + envelope


def _seed_records(cfg: ExperimentConfig, outcome: SeedOutcome) -> dict:
    rep = outcome.report
    records: dict = {
        "seed": cfg.seed,
        "trajectory": outcome.index,
        "rule": rep.rule,
        "tau": rep.tau,
        "triggered": rep.triggered,
        "below_floor": rep.below_floor,
        "steps_recorded": len(rep.trace),
    }
    finite_means = rep.window_averages[np.isfinite(rep.window_averages)]
    records["last_window_mean"] = float(finite_means[-1]) if finite_means.size else None
    records["final_distance"] = rep.final_distance
    records.update(bounds_records(rep.bounds))
    for name, value in rep.checks.items():
        records[f"check.{name}"] = value
    for name, value in outcome.extras.items():
        records[name] = value
    return records


def _aggregate_records(cfg: ExperimentConfig, outcomes: list[SeedOutcome], analysis: dict) -> dict:
    records: dict = {
        "n_seeds": len(outcomes),
        "rule": cfg.stopping.rule,
        "epsilon": cfg.stopping.epsilon,
        "window": cfg.stopping.window,
        "t_max": cfg.stopping.t_max,
        "delta": cfg.stopping.delta,
    }
    taus = np.array([o.report.tau for o in outcomes], dtype=np.int64)
    triggered = np.array([o.report.triggered for o in outcomes], dtype=bool)
    records["triggered_count"] = int(triggered.sum())
    records["triggered_fraction"] = float(triggered.mean())
    records["tau_min"] = int(taus.min())
    records["tau_mean"] = float(taus.mean())
    records["tau_max"] = int(taus.max())
    dists = [o.report.final_distance for o in outcomes if o.report.final_distance is not None]
    if dists:
        records["final_distance_mean"] = float(np.mean(dists))
        records["final_distance_max"] = float(np.max(dists))
    records["below_floor"] = bool(any(o.report.below_floor for o in outcomes))

    check_names: list[str] = []
    for o in outcomes:
        for name in o.report.checks:
            if name not in check_names:
                check_names.append(name)
    for name in check_names:
        values = [o.report.checks[name] for o in outcomes if name in o.report.checks]
        true_count = sum(bool(v) for v in values)
        records[f"check.{name}.true"] = true_count
        records[f"check.{name}.total"] = len(values)
        records[f"check.{name}.violation_fraction"] = (
            float(1.0 - true_count / len(values)) if values else None
        )

    if outcomes and outcomes[0].report.bounds is not None:
        records.update(bounds_records(outcomes[0].report.bounds))

    numeric_extras: dict[str, list[float]] = {}
    for o in outcomes:
        for name, value in o.extras.items():
            if isinstance(value, (int, float, np.integer, np.floating)):
                numeric_extras.setdefault(name, []).append(float(value))
    for name in sorted(numeric_extras):
        records[f"{name}_mean"] = float(np.mean(numeric_extras[name]))

    for name, value in analysis.items():
        records[f"analysis.{name}"] = value
    return records


def run_experiment(
    cfg: ExperimentConfig,
    out_dir: str | None = None,
    quiet: bool = True,
    write: bool = True,
) -> ExperimentResult:
    """Run the configured sweep: one stopping trajectory per seed index.

    Seed i uses the child stream (cfg.seed, i).  With write=True (and an
    output directory from the call or the config), each seed writes
    trace_seedNNNN.csv and report_seedNNNN.txt, and the sweep writes
    aggregate.txt.  Domain errors are re-raised with the seed index.
    """
    target = out_dir if out_dir is not None else cfg.out_dir
    if write and target is None:
        raise ValueError("no output directory: pass out_dir or set [output] dir in the config")
    if write:
        os.makedirs(target, exist_ok=True)

    analysis = analyze(cfg)
    pair, sampler_factory, _, _ = _build(cfg)

    outcomes: list[SeedOutcome] = []
    for i in range(cfg.seed_count):
        try:
            report, extras = _run_seed(cfg, pair, sampler_factory, i)
        except Exception as exc:
            raise RuntimeError(f"seed {i}: {exc}") from exc
        outcome = SeedOutcome(index=i, report=report, extras=extras)
        if write:
            trace_path = os.path.join(target, f"trace_seed{i:04d}.csv")
            report_path = os.path.join(target, f"report_seed{i:04d}.txt")
            write_trace(
                trace_path,
                report.trace,
                experiment=cfg.experiment,
                digest=cfg.digest,
                seed=cfg.seed,
                trajectory=i,
                bound_curve=_bound_curve(cfg, report.trace.t),
            )
            write_report(
                report_path,
                _seed_records(cfg, outcome),
                kind="stopping",
                experiment=cfg.experiment,
                digest=cfg.digest,
            )
            outcome.trace_path = trace_path
            outcome.report_path = report_path
        if not quiet:
            print(
                f"seed {i}: tau={report.tau} triggered={str(report.triggered).lower()}"
                + (
                    f" final_distance={report.final_distance:.6g}"
                    if report.final_distance is not None
                    else ""
                )
            )
        outcomes.append(outcome)

    aggregate = _aggregate_records(cfg, outcomes, analysis)
    aggregate_path = None
    if write:
        aggregate_path = os.path.join(target, "aggregate.txt")
        write_report(
            aggregate_path,
            aggregate,
            kind="aggregate",
            experiment=cfg.experiment,
            digest=cfg.digest,
        )
    if not quiet and write:
        print(f"wrote {len(outcomes)} trace/report pairs and aggregate.txt to {target}")

    return ExperimentResult(
        config=cfg,
        outcomes=outcomes,
        aggregate=aggregate,
        analysis=analysis,
        out_dir=target,
        aggregate_path=aggregate_path,
    )


def override(cfg: ExperimentConfig, seed: int | None = None, seeds: int | None = None) -> ExperimentConfig:
    """CLI overrides: replace the base seed and/or the sweep width."""
    if seed is None and seeds is None:
        return cfg
    if seeds is not None and seeds < 1:
        raise ValueError("seeds override must be >= 1")
    return replace(
        cfg,
        seed=cfg.seed if seed is None else seed,
        seed_count=cfg.seed_count if seeds is None else seeds,
    )
