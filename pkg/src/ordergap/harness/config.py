"""Experiment configuration: a single TOML file drives every run.

Exactly one domain block must be present (linear_pair, bandit, actor_critic,
rlm, or sgd) along with a stopping block; constants, analysis, and output
blocks are optional.  Every numeric parameter is validated against its
domain invariant at load time, and validation errors name the offending
field.  The sha256 digest of the raw file bytes is stamped into every
artifact the run writes, so outputs can always be traced to their exact
config.
"""

import hashlib
from dataclasses import dataclass, field
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # Python 3.10
    import tomli as tomllib

import numpy as np

from ..actor_critic import ACModel, random_model
from ..bandit import BanditConfig
from ..linear import LinearPair
from ..rlm import RlmModel
from ..sgd import QuadraticProblem
from ..stopping import StoppingConfig, TheoryConstants

__all__ = [
    "ConfigError",
    "AnalysisOptions",
    "DomainSpec",
    "ExperimentConfig",
    "parse_config",
    "load_config",
]

DOMAIN_BLOCKS = ("linear_pair", "bandit", "actor_critic", "rlm", "sgd")


class ConfigError(ValueError):
    """A config field is missing, has the wrong type, or violates its invariant."""


def _reject_unknown(table: dict, allowed: set[str], where: str) -> None:
    unknown = sorted(set(table) - allowed)
    if unknown:
        raise ConfigError(f"{where}: unknown key(s) {', '.join(unknown)}")


def _get(table: dict, key: str, kind, where: str, required: bool = False, default=None):
    if key not in table:
        if required:
            raise ConfigError(f"{where}.{key}: required key is missing")
        return default
    value = table[key]
    if kind is float and isinstance(value, int) and not isinstance(value, bool):
        value = float(value)
    if kind is int and isinstance(value, bool):
        raise ConfigError(f"{where}.{key}: expected an integer, got a boolean")
    if not isinstance(value, kind):
        raise ConfigError(f"{where}.{key}: expected {kind.__name__}, got {type(value).__name__}")
    return value


def _vector(table: dict, key: str, where: str, required: bool = False, default=None):
    if key not in table:
        if required:
            raise ConfigError(f"{where}.{key}: required key is missing")
        return default
    try:
        arr = np.asarray(table[key], dtype=np.float64)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}.{key}: not a numeric array ({exc})") from None
    if arr.ndim != 1:
        raise ConfigError(f"{where}.{key}: expected a flat list of numbers")
    return arr


def _matrix(table: dict, key: str, where: str, required: bool = False, default=None):
    if key not in table:
        if required:
            raise ConfigError(f"{where}.{key}: required key is missing")
        return default
    try:
        arr = np.asarray(table[key], dtype=np.float64)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}.{key}: not a numeric matrix ({exc})") from None
    if arr.ndim != 2:
        raise ConfigError(f"{where}.{key}: expected a list of equal-length rows")
    return arr


@dataclass(frozen=True)
class AnalysisOptions:
    """Which analysis reports the run computes, and their knobs."""

    equilibrium: bool = True
    commutator: bool = True
    estimate_constants: bool = False
    n_mc: int = 1024
    tol: float = 1e-10
    max_iter: int = 5000


@dataclass(frozen=True)
class DomainSpec:
    """One validated domain block: its name, the built model object, the
    initial state, and the reference point distances are measured against."""

    name: str
    model: object
    theta0: np.ndarray
    reference: np.ndarray | None
    options: dict = field(default_factory=dict)


@dataclass(frozen=True)
class ExperimentConfig:
    experiment: str
    seed: int
    seed_count: int
    domain: DomainSpec
    stopping: StoppingConfig
    analysis: AnalysisOptions
    constants: TheoryConstants | None
    out_dir: str | None
    schema: int
    digest: str
    source: str


def _wrap(where: str, build):
    """Run a model constructor, renaming its invariant errors to the block."""
    try:
        return build()
    except ConfigError:
        raise
    except (ValueError, np.linalg.LinAlgError) as exc:
        raise ConfigError(f"{where}: {exc}") from None


def _parse_linear(table: dict) -> DomainSpec:
    where = "linear_pair"
    _reject_unknown(
        table, {"q_matrix", "q_offset", "p_matrix", "offsets", "probs", "theta0"}, where
    )
    q = _matrix(table, "q_matrix", where, required=True)
    theta0 = _vector(table, "theta0", where, required=True)
    spec = _wrap(
        where,
        lambda: LinearPair(
            q_matrix=q,
            p_matrix=_matrix(table, "p_matrix", where),
            q_offset=_vector(table, "q_offset", where),
            offsets=_matrix(table, "offsets", where),
            probs=_vector(table, "probs", where),
        ),
    )
    if theta0.shape != (spec.dimension,):
        raise ConfigError(f"{where}.theta0: expected length {spec.dimension}")
    return DomainSpec(
        name="linear_pair", model=spec, theta0=theta0, reference=spec.theta_star()
    )


def _parse_bandit(table: dict) -> DomainSpec:
    where = "bandit"
    _reject_unknown(
        table,
        {
            "mu_arm", "sigma_r2", "mu_p", "lambda", "kappa", "selection", "p",
            "epsilon", "theta0_mean", "theta0_variance",
        },
        where,
    )
    mu_arm = _vector(table, "mu_arm", where, required=True)
    mu_p = _vector(table, "mu_p", where, required=True)
    cfg = _wrap(
        where,
        lambda: BanditConfig(
            mu_arm=mu_arm,
            sigma_r2=_get(table, "sigma_r2", float, where, required=True),
            mu_p=mu_p,
            lam=_get(table, "lambda", float, where, required=True),
            kappa=_get(table, "kappa", float, where, required=True),
            selection=_get(table, "selection", str, where, default="fixed"),
            p=_vector(table, "p", where),
            epsilon=_get(table, "epsilon", float, where, default=0.1),
        ),
    )
    mean0 = _vector(table, "theta0_mean", where, default=mu_p.copy())
    var0 = _vector(table, "theta0_variance", where, default=np.ones(cfg.n_arms))
    if mean0.shape != (cfg.n_arms,):
        raise ConfigError(f"{where}.theta0_mean: expected length {cfg.n_arms}")
    if var0.shape != (cfg.n_arms,):
        raise ConfigError(f"{where}.theta0_variance: expected length {cfg.n_arms}")
    if np.any(var0 <= 0):
        raise ConfigError(f"{where}.theta0_variance: entries must be positive")
    theta0 = np.concatenate([mean0, var0])
    # Q's fixed point: means at the prior anchor, variances at the zero boundary.
    reference = np.concatenate([cfg.mu_p, np.zeros(cfg.n_arms)])
    return DomainSpec(name="bandit", model=cfg, theta0=theta0, reference=reference)


def _parse_actor_critic(table: dict) -> DomainSpec:
    where = "actor_critic"
    _reject_unknown(
        table,
        {
            "variant", "model_seed", "d", "d_pi", "n_events", "alpha", "beta",
            "beta_prime", "gamma_rl", "theta0",
        },
        where,
    )
    variant = _get(table, "variant", str, where, default="baseline")
    if variant not in ("baseline", "augmented"):
        raise ConfigError(f"{where}.variant: must be 'baseline' or 'augmented'")
    model: ACModel = _wrap(
        where,
        lambda: random_model(
            seed=_get(table, "model_seed", int, where, required=True),
            d=_get(table, "d", int, where, default=2),
            d_pi=_get(table, "d_pi", int, where, default=2),
            n_events=_get(table, "n_events", int, where),
            alpha=_get(table, "alpha", float, where, default=0.1),
            beta=_get(table, "beta", float, where, default=0.2),
            beta_prime=_get(table, "beta_prime", float, where, default=0.3),
            gamma_rl=_get(table, "gamma_rl", float, where, default=0.9),
        ),
    )
    dim = model.d + model.d_pi
    theta0 = _vector(table, "theta0", where, default=np.full(dim, 0.5))
    if theta0.shape != (dim,):
        raise ConfigError(f"{where}.theta0: expected length {dim}")
    return DomainSpec(
        name="actor_critic",
        model=model,
        theta0=theta0,
        reference=np.zeros(dim),
        options={"variant": variant},
    )


def _parse_rlm(table: dict) -> DomainSpec:
    where = "rlm"
    _reject_unknown(
        table,
        {"p_proj", "beta", "chunks", "probs", "theta0", "round_robin", "transient", "trigger_cost"},
        where,
    )
    p_proj = _matrix(table, "p_proj", where, required=True)
    chunks_raw = table.get("chunks")
    if chunks_raw is None:
        raise ConfigError(f"{where}.chunks: required key is missing")
    try:
        chunks = np.asarray(chunks_raw, dtype=np.float64)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}.chunks: not a numeric array ({exc})") from None
    if chunks.ndim != 3:
        raise ConfigError(f"{where}.chunks: expected a list of square matrices")
    model = _wrap(
        where,
        lambda: RlmModel(
            p_proj=p_proj,
            beta=_get(table, "beta", float, where, required=True),
            chunks=chunks,
            probs=_vector(table, "probs", where),
        ),
    )
    theta0 = _vector(table, "theta0", where, required=True)
    if theta0.shape != (model.d,):
        raise ConfigError(f"{where}.theta0: expected length {model.d}")
    transient = _get(table, "transient", int, where)
    if transient is not None and transient < 0:
        raise ConfigError(f"{where}.transient: must be >= 0")
    trigger_cost = _get(table, "trigger_cost", float, where)
    if trigger_cost is not None and trigger_cost < 0:
        raise ConfigError(f"{where}.trigger_cost: must be >= 0")
    return DomainSpec(
        name="rlm",
        model=model,
        theta0=theta0,
        reference=np.zeros(model.d),
        options={
            "round_robin": _get(table, "round_robin", bool, where, default=False),
            "transient": transient,
            "trigger_cost": trigger_cost,
        },
    )


def _parse_sgd(table: dict) -> DomainSpec:
    where = "sgd"
    _reject_unknown(
        table, {"h", "h_diag", "eta", "momentum", "noise_scale", "w0", "m0"}, where
    )
    if ("h" in table) == ("h_diag" in table):
        raise ConfigError(f"{where}: exactly one of h or h_diag must be given")
    h = np.diag(_vector(table, "h_diag", where)) if "h_diag" in table else _matrix(
        table, "h", where, required=True
    )
    prob = _wrap(
        where,
        lambda: QuadraticProblem(
            h=h,
            eta=_get(table, "eta", float, where, required=True),
            momentum=_get(table, "momentum", float, where, required=True),
            noise_scale=_get(table, "noise_scale", float, where, default=0.0),
        ),
    )
    w0 = _vector(table, "w0", where, default=np.ones(prob.d))
    m0 = _vector(table, "m0", where, default=np.zeros(prob.d))
    if w0.shape != (prob.d,):
        raise ConfigError(f"{where}.w0: expected length {prob.d}")
    if m0.shape != (prob.d,):
        raise ConfigError(f"{where}.m0: expected length {prob.d}")
    theta0 = np.concatenate([w0, m0])
    return DomainSpec(name="sgd", model=prob, theta0=theta0, reference=np.zeros(2 * prob.d))


_DOMAIN_PARSERS = {
    "linear_pair": _parse_linear,
    "bandit": _parse_bandit,
    "actor_critic": _parse_actor_critic,
    "rlm": _parse_rlm,
    "sgd": _parse_sgd,
}


def _parse_stopping(table: dict) -> StoppingConfig:
    where = "stopping"
    _reject_unknown(table, {"epsilon", "window", "t_max", "delta", "rule"}, where)
    try:
        return StoppingConfig(
            epsilon=_get(table, "epsilon", float, where, required=True),
            window=_get(table, "window", int, where, required=True),
            t_max=_get(table, "t_max", int, where, required=True),
            delta=_get(table, "delta", float, where),
            rule=_get(table, "rule", str, where, default="empirical"),
        )
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(f"{where}: {exc}") from None


def _parse_constants(table: dict) -> TheoryConstants:
    where = "constants"
    _reject_unknown(table, {"rho", "L", "sigma", "M", "mu", "r", "R0"}, where)
    try:
        return TheoryConstants(
            rho=_get(table, "rho", float, where, required=True),
            L=_get(table, "L", float, where, required=True),
            sigma=_get(table, "sigma", float, where, default=0.0),
            M=_get(table, "M", float, where, default=0.0),
            mu=_get(table, "mu", float, where),
            r=_get(table, "r", float, where),
            R0=_get(table, "R0", float, where, default=0.0),
        )
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(f"{where}: {exc}") from None


def _parse_analysis(table: dict) -> AnalysisOptions:
    where = "analysis"
    _reject_unknown(
        table, {"equilibrium", "commutator", "estimate_constants", "n_mc", "tol", "max_iter"}, where
    )
    opts = AnalysisOptions(
        equilibrium=_get(table, "equilibrium", bool, where, default=True),
        commutator=_get(table, "commutator", bool, where, default=True),
        estimate_constants=_get(table, "estimate_constants", bool, where, default=False),
        n_mc=_get(table, "n_mc", int, where, default=1024),
        tol=_get(table, "tol", float, where, default=1e-10),
        max_iter=_get(table, "max_iter", int, where, default=5000),
    )
    if opts.n_mc < 1:
        raise ConfigError(f"{where}.n_mc: must be >= 1")
    if opts.tol <= 0:
        raise ConfigError(f"{where}.tol: must be positive")
    if opts.max_iter < 1:
        raise ConfigError(f"{where}.max_iter: must be >= 1")
    return opts


def parse_config(data: bytes, source: str = "<memory>") -> ExperimentConfig:
    """Parse and validate a raw TOML document into an ExperimentConfig."""
    try:
        doc = tomllib.loads(data.decode("utf-8"))
    except (UnicodeDecodeError, tomllib.TOMLDecodeError) as exc:
        raise ConfigError(f"{source}: parse error: {exc}") from None

    top_allowed = {"schema", "experiment", "seed", "seeds", "stopping", "constants", "analysis", "output"}
    _reject_unknown(doc, top_allowed | set(DOMAIN_BLOCKS), "top level")

    schema = _get(doc, "schema", int, "top level", default=1)
    if schema != 1:
        raise ConfigError(f"schema: version {schema} not supported (this build reads schema 1)")

    experiment = _get(doc, "experiment", str, "top level", required=True)
    seed = _get(doc, "seed", int, "top level", default=0)
    seed_count = _get(doc, "seeds", int, "top level", default=1)
    if seed_count < 1:
        raise ConfigError("seeds: must be >= 1")

    present = [name for name in DOMAIN_BLOCKS if name in doc]
    if len(present) != 1:
        raise ConfigError(
            "exactly one domain block required "
            f"({' | '.join(DOMAIN_BLOCKS)}); found {len(present)}"
            + (f": {', '.join(present)}" if present else "")
        )
    block = doc[present[0]]
    if not isinstance(block, dict):
        raise ConfigError(f"{present[0]}: must be a table")
    domain = _DOMAIN_PARSERS[present[0]](block)

    if "stopping" not in doc:
        raise ConfigError("stopping: required block is missing")
    stopping = _parse_stopping(doc["stopping"])
    if stopping.rule == "expected" and domain.name in ("sgd", "bandit"):
        raise ConfigError(
            f"stopping.rule: 'expected' needs a finite event set; the {domain.name} domain "
            "draws continuous noise"
        )

    constants = _parse_constants(doc["constants"]) if "constants" in doc else None
    analysis = _parse_analysis(doc["analysis"]) if "analysis" in doc else AnalysisOptions()

    out_dir = None
    if "output" in doc:
        _reject_unknown(doc["output"], {"dir"}, "output")
        out_dir = _get(doc["output"], "dir", str, "output")

    return ExperimentConfig(
        experiment=experiment,
        seed=seed,
        seed_count=seed_count,
        domain=domain,
        stopping=stopping,
        analysis=analysis,
        constants=constants,
        out_dir=out_dir,
        schema=schema,
        digest=hashlib.sha256(data).hexdigest(),
        source=source,
    )


def load_config(path) -> ExperimentConfig:
    """Read, parse, and validate a config file."""
    p = Path(path)
    try:
        data = p.read_bytes()
    except OSError as exc:
        raise ConfigError(f"{path}: cannot read config: {exc}") from None
    return parse_config(data, source=str(p))
