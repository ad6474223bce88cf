"""Config parsing, artifact round-trips, the sweep runner, and the CLI."""

import numpy as np
import pytest

from ordergap.core import OrderGapTrace
from ordergap.harness.cli import main
from ordergap.harness.config import ConfigError, load_config, parse_config
from ordergap.harness.io import read_report, read_trace, write_report, write_trace
from ordergap.harness.runner import analyze, bounds_records, override, run_experiment
from ordergap.stopping import BelowFloorWarning, StoppingConfig, TheoryConstants, stopping_bounds

LINEAR_NOISY = """
experiment = "demo"
seed = 7
seeds = 2

[linear_pair]
q_matrix = [[0.5, 0.0], [0.0, 0.25]]
p_matrix = [[0.0, -1.0], [1.0, 0.0]]
offsets = [[0.1, 0.0], [-0.1, 0.0], [0.0, 0.1], [0.0, -0.1]]
theta0 = [1.0, 0.0]

[stopping]
epsilon = 0.45
window = 16
t_max = 200
delta = 0.1

[constants]
rho = 0.5
L = 1.0
sigma = 0.1
M = 0.1
mu = 0.125
r = 100.0
R0 = 1.0

[analysis]
equilibrium = false
commutator = true
"""


def cfg_bytes(text: str) -> bytes:
    return text.encode("utf-8")


class TestConfigParsing:
    def test_defaults(self):
        cfg = parse_config(
            cfg_bytes(
                """
experiment = "tiny"
[linear_pair]
q_matrix = [[0.5]]
theta0 = [1.0]
[stopping]
epsilon = 0.1
window = 2
t_max = 10
"""
            )
        )
        assert cfg.experiment == "tiny"
        assert cfg.seed == 0 and cfg.seed_count == 1 and cfg.schema == 1
        assert cfg.stopping.rule == "empirical" and cfg.stopping.delta is None
        assert cfg.constants is None and cfg.out_dir is None
        assert cfg.analysis.equilibrium and not cfg.analysis.estimate_constants

    def test_digest_is_byte_level(self):
        a = parse_config(cfg_bytes(LINEAR_NOISY))
        b = parse_config(cfg_bytes(LINEAR_NOISY))
        c = parse_config(cfg_bytes(LINEAR_NOISY + "\n# trailing comment\n"))
        assert a.digest == b.digest and len(a.digest) == 64
        assert a.digest != c.digest  # digest covers raw bytes, not semantics

    def test_exactly_one_domain_block(self):
        doc = LINEAR_NOISY + "\n[sgd]\nh = [[1.0]]\neta = 0.1\nmomentum = 0.0\nw0 = [1.0]\n"
        with pytest.raises(ConfigError, match="exactly one domain block"):
            parse_config(cfg_bytes(doc))
        with pytest.raises(ConfigError, match="found 0"):
            parse_config(cfg_bytes("experiment = 'x'\n[stopping]\nepsilon = 0.1\nwindow = 1\nt_max = 5\n"))

    def test_unknown_keys_rejected(self):
        with pytest.raises(ConfigError, match="unknown"):
            parse_config(cfg_bytes(LINEAR_NOISY + "\ncolor = 'red'\n"))

    def test_schema_gate(self):
        with pytest.raises(ConfigError, match="version 2 not supported"):
            parse_config(cfg_bytes("schema = 2\n" + LINEAR_NOISY))

    def test_missing_stopping_block(self):
        doc = """
experiment = "x"
[linear_pair]
q_matrix = [[0.5]]
theta0 = [1.0]
"""
        with pytest.raises(ConfigError, match="stopping: required block is missing"):
            parse_config(cfg_bytes(doc))

    def test_missing_required_key(self):
        doc = """
experiment = "x"
[bandit]
mu_arm = [1.0]
mu_p = [0.0]
kappa = 0.8
p = [1.0]
[stopping]
epsilon = 0.1
window = 2
t_max = 10
"""
        with pytest.raises(ConfigError, match="required key is missing"):
            parse_config(cfg_bytes(doc))

    def test_domain_validation_is_wrapped(self):
        doc = """
experiment = "x"
[bandit]
mu_arm = [1.0]
sigma_r2 = 0.7
mu_p = [0.0]
lambda = 1.5
kappa = 0.8
p = [1.0]
[stopping]
epsilon = 0.1
window = 2
t_max = 10
"""
        with pytest.raises(ConfigError, match=r"bandit: lambda must lie in \(0, 1\), got 1.5"):
            parse_config(cfg_bytes(doc))

    def test_expected_rule_needs_finite_events(self):
        doc = """
experiment = "x"
[sgd]
h = [[1.0]]
eta = 0.1
momentum = 0.5
noise_scale = 0.1
w0 = [1.0]
[stopping]
epsilon = 0.1
window = 2
t_max = 10
rule = "expected"
"""
        with pytest.raises(ConfigError, match="draws continuous noise"):
            parse_config(cfg_bytes(doc))

    def test_expected_rule_fine_for_linear(self):
        doc = LINEAR_NOISY.replace("delta = 0.1", 'delta = 0.1\nrule = "expected"')
        assert parse_config(cfg_bytes(doc)).stopping.rule == "expected"

    def test_seeds_floor(self):
        with pytest.raises(ConfigError, match="seeds"):
            parse_config(cfg_bytes(LINEAR_NOISY.replace("seeds = 2", "seeds = 0")))

    def test_bandit_default_state_and_reference(self):
        doc = """
experiment = "x"
[bandit]
mu_arm = [1.0, 0.4]
sigma_r2 = 0.7
mu_p = [0.2, 0.1]
lambda = 0.3
kappa = 0.8
p = [0.6, 0.4]
[stopping]
epsilon = 0.1
window = 2
t_max = 10
"""
        cfg = parse_config(cfg_bytes(doc))
        np.testing.assert_array_equal(cfg.domain.theta0, [0.2, 0.1, 1.0, 1.0])
        np.testing.assert_array_equal(cfg.domain.reference, [0.2, 0.1, 0.0, 0.0])

    def test_rlm_options_carried(self):
        doc = """
experiment = "x"
[rlm]
p_proj = [[1.0, 0.0], [0.0, 0.0]]
beta = 0.5
chunks = [[[0.0, 1.0], [0.0, 0.0]]]
theta0 = [1.0, 1.0]
transient = 7
trigger_cost = 0.4
[stopping]
epsilon = 1e-6
window = 4
t_max = 60
"""
        cfg = parse_config(cfg_bytes(doc))
        assert cfg.domain.options["transient"] == 7
        assert cfg.domain.options["trigger_cost"] == 0.4
        assert not cfg.domain.options["round_robin"]

    def test_bad_toml_reports_parse_error(self):
        with pytest.raises(ConfigError, match="parse error"):
            parse_config(b"experiment = [unclosed")

    def test_load_config_missing_file(self, tmp_path):
        with pytest.raises(ConfigError, match="cannot read config"):
            load_config(tmp_path / "nope.toml")

    def test_config_error_is_value_error(self):
        assert issubclass(ConfigError, ValueError)


class TestOverride:
    def test_replaces_seed_and_count(self):
        cfg = parse_config(cfg_bytes(LINEAR_NOISY))
        out = override(cfg, seed=99, seeds=5)
        assert out.seed == 99 and out.seed_count == 5
        assert out.digest == cfg.digest

    def test_noop_returns_same_object(self):
        cfg = parse_config(cfg_bytes(LINEAR_NOISY))
        assert override(cfg) is cfg

    def test_rejects_bad_count(self):
        cfg = parse_config(cfg_bytes(LINEAR_NOISY))
        with pytest.raises(ValueError, match="seeds override"):
            override(cfg, seeds=0)


class TestArtifacts:
    @staticmethod
    def _trace() -> OrderGapTrace:
        omega = np.array([0.25, np.pi * 1e-3, 0.1 + 0.2, 0.0])
        return OrderGapTrace(
            t=np.arange(4, dtype=np.int64),
            event_id=np.array([0, 1, 1, 3], dtype=np.int64),
            omega=omega,
            window_mean=np.array([np.nan, np.nan, 0.18, 0.14]),
            dist_to_ref=np.array([1.0, 0.5, 0.25, 0.125]),
            columns={"regret": np.array([0.0, 0.3, 0.3, 0.9])},
        )

    def test_trace_round_trip_bit_exact(self, tmp_path):
        path = tmp_path / "trace.csv"
        write_trace(
            path, self._trace(), experiment="demo", digest="abc123", seed=7, trajectory=3,
            bound_curve=np.array([1.25, 0.875, 0.6875, 0.59375]),
        )
        header, cols = read_trace(path)
        assert header["schema"] == "1"
        assert header["experiment"] == "demo"
        assert header["config_digest"] == "abc123"
        assert header["seed"] == "7" and header["trajectory"] == "3"
        tr = self._trace()
        np.testing.assert_array_equal(cols["t"], tr.t)
        np.testing.assert_array_equal(cols["event_id"], tr.event_id)
        np.testing.assert_array_equal(cols["omega"], tr.omega)  # %.17g is lossless
        np.testing.assert_array_equal(cols["dist_to_ref"], tr.dist_to_ref)
        np.testing.assert_array_equal(cols["regret"], tr.columns["regret"])
        np.testing.assert_array_equal(cols["gap_bound"], [1.25, 0.875, 0.6875, 0.59375])
        # NaN means empty cell, round-tripped as NaN
        assert np.isnan(cols["window_mean"][0]) and cols["window_mean"][2] == 0.18
        assert np.isnan(cols["log10_omega"][3])  # omega zero has no log

    def test_bound_curve_length_checked(self, tmp_path):
        with pytest.raises(ValueError, match="bound curve"):
            write_trace(
                tmp_path / "t.csv", self._trace(), experiment="e", digest="d", seed=0,
                trajectory=0, bound_curve=np.ones(2),
            )

    def test_report_round_trip(self, tmp_path):
        path = tmp_path / "report.txt"
        records = {"tau": 17, "triggered": True, "mu0": 0.0625, "note": None, "x": 0.1 + 0.2}
        write_report(path, records, kind="stopping", experiment="demo", digest="abc")
        out = read_report(path)
        assert out["kind"] == "stopping"
        assert out["tau"] == "17"
        assert out["triggered"] == "true"
        assert out["note"] == "none"
        assert float(out["x"]) == 0.1 + 0.2
        assert out["experiment"] == "demo" and out["config_digest"] == "abc"

    def test_writes_are_reproducible_bytes(self, tmp_path):
        a, b = tmp_path / "a.csv", tmp_path / "b.csv"
        for path in (a, b):
            write_trace(path, self._trace(), experiment="demo", digest="abc", seed=7, trajectory=0)
        assert a.read_bytes() == b.read_bytes()


class TestBoundsRecords:
    def test_none_is_empty(self):
        assert bounds_records(None) == {}

    def test_noisy_keys(self):
        b = stopping_bounds(
            TheoryConstants(rho=0.5, L=1.0, sigma=0.1, M=0.1, mu=0.125, r=100.0, R0=1.0),
            StoppingConfig(epsilon=0.45, window=16, t_max=200, delta=0.1),
        )
        rec = bounds_records(b)
        for key in (
            "floor.eps_star", "bound.n_eps", "bound.k_envelope", "bound.t0",
            "bound.eta", "bound.w_min", "bound.endpoint_noisy", "bound.containment_t0",
        ):
            assert key in rec
        assert rec["floor.eps_star"] == 0.25
        assert rec["bound.t0"] == 16 + b.n_eps_envelope


class TestRunExperiment:
    def test_writes_expected_files(self, tmp_path):
        cfg = parse_config(cfg_bytes(LINEAR_NOISY))
        result = run_experiment(cfg, out_dir=str(tmp_path / "out"))
        assert (tmp_path / "out" / "trace_seed0000.csv").exists()
        assert (tmp_path / "out" / "trace_seed0001.csv").exists()
        assert (tmp_path / "out" / "report_seed0000.txt").exists()
        assert (tmp_path / "out" / "aggregate.txt").exists()
        assert result.aggregate["n_seeds"] == 2
        assert result.aggregate["triggered_count"] == 2
        assert "tau_within_t0" in result.outcomes[0].report.checks

    def test_byte_identical_reruns(self, tmp_path):
        cfg = parse_config(cfg_bytes(LINEAR_NOISY))
        run_experiment(cfg, out_dir=str(tmp_path / "a"))
        run_experiment(cfg, out_dir=str(tmp_path / "b"))
        for name in ("trace_seed0000.csv", "trace_seed0001.csv", "report_seed0001.txt", "aggregate.txt"):
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()

    def test_gap_bound_column_from_constants(self, tmp_path):
        cfg = parse_config(cfg_bytes(LINEAR_NOISY))
        run_experiment(cfg, out_dir=str(tmp_path / "out"))
        _, cols = read_trace(tmp_path / "out" / "trace_seed0000.csv")
        # 2 gamma^{t+1} R0 + eps_star_envelope with gamma 0.5, R0 1, envelope 0.25
        assert cols["gap_bound"][0] == pytest.approx(1.25)
        np.testing.assert_allclose(
            cols["gap_bound"], 2.0 * 0.5 ** (cols["t"] + 1.0) + 0.25, rtol=1e-15
        )

    def test_write_false_needs_no_directory(self):
        cfg = parse_config(cfg_bytes(LINEAR_NOISY))
        result = run_experiment(cfg, write=False)
        assert result.aggregate_path is None
        assert len(result.outcomes) == 2
        assert result.outcomes[0].trace_path is None

    def test_write_true_needs_directory(self):
        cfg = parse_config(cfg_bytes(LINEAR_NOISY))
        with pytest.raises(ValueError, match="no output directory"):
            run_experiment(cfg)

    def test_seed_errors_carry_index(self):
        # a zero chunk commutes with everything: omega is identically zero,
        # so the per-seed decay fit has nothing to work with and raises
        doc = """
experiment = "flat"
[rlm]
p_proj = [[1.0, 0.0], [0.0, 0.0]]
beta = 0.5
chunks = [[[0.0, 0.0], [0.0, 0.0]]]
theta0 = [1.0, 1.0]
[stopping]
epsilon = 1e-9
window = 4
t_max = 60
"""
        cfg = parse_config(cfg_bytes(doc))
        with pytest.raises(RuntimeError, match="seed 0:"):
            run_experiment(cfg, write=False)

    def test_rlm_uncovered_aggregate_has_no_mu(self):
        # the chunk writes coordinate 2 into coordinate 1 only, so the
        # answer-relevant direction e3 is never excited: coverage FAIL
        doc = """
experiment = "uncovered"
seeds = 1
[rlm]
p_proj = [[1.0, 0.0, 0.0], [0.0, 0.0, 0.0], [0.0, 0.0, 0.0]]
beta = 0.5
chunks = [[[0.0, 1.0, 0.0], [0.0, 0.0, 0.0], [0.0, 0.0, 0.0]]]
theta0 = [1.0, 1.0, 0.5]
[stopping]
epsilon = 1e-9
window = 4
t_max = 60
"""
        cfg = parse_config(cfg_bytes(doc))
        result = run_experiment(cfg, write=False)
        assert result.aggregate["analysis.coverage"] == "FAIL"
        assert "analysis.mu" not in result.aggregate
        assert "analysis.envelope_c" not in result.aggregate
        assert result.aggregate["fit_slope_mean"] == pytest.approx(np.log(0.5), abs=0.05)

    def test_misreported_rho_degrades_gracefully(self):
        # rho = 0.99 pushes the noise floor above epsilon: the calculator
        # refuses, the run still completes with no bound records
        doc = LINEAR_NOISY.replace("rho = 0.5", "rho = 0.99").replace("L = 1.0", "L = 0.9")
        cfg = parse_config(cfg_bytes(doc))
        with pytest.warns(BelowFloorWarning):
            result = run_experiment(cfg, write=False)
        assert result.aggregate["below_floor"] is True
        assert "bound.n_eps" not in result.aggregate
        assert not result.outcomes[0].report.checks

    def test_expected_rule_runs_linear(self, tmp_path):
        doc = LINEAR_NOISY.replace("delta = 0.1", 'delta = 0.1\nrule = "expected"')
        cfg = parse_config(cfg_bytes(doc))
        result = run_experiment(cfg, write=False)
        assert result.aggregate["rule"] == "expected"
        assert result.aggregate["triggered_count"] == 2


class TestAnalyze:
    def test_linear_records(self):
        cfg = parse_config(cfg_bytes(LINEAR_NOISY))
        rec = analyze(cfg)
        assert rec["mu0"] == pytest.approx(0.25)  # sigma_min of the exact commutator
        assert rec["rank_sigma_bar"] == 2
        assert "theta_star" not in rec  # equilibrium disabled in this config

    def test_bandit_records(self):
        doc = """
experiment = "x"
seed = 11
[bandit]
mu_arm = [1.0, 0.4, 0.1]
sigma_r2 = 0.7
mu_p = [0.0, 0.0, 0.0]
lambda = 0.3
kappa = 0.8
p = [0.5, 0.3, 0.2]
[stopping]
epsilon = 0.05
window = 16
t_max = 400
[analysis]
estimate_constants = true
"""
        cfg = parse_config(cfg_bytes(doc))
        rec = analyze(cfg)
        assert rec["covered"] is True and rec["variance_rank"] == 3
        assert rec["rho_hat"] == pytest.approx(0.7, rel=1e-9)  # max(1 - lam, 1/(1 + kappa))
        assert rec["l_hat"] < 3.0  # probes stay in the valid region

    def test_actor_critic_records(self):
        doc = """
experiment = "x"
[actor_critic]
model_seed = 4
variant = "augmented"
[stopping]
epsilon = 0.01
window = 8
t_max = 200
"""
        cfg = parse_config(cfg_bytes(doc))
        rec = analyze(cfg)
        assert rec["variant"] == "augmented"
        assert rec["mu0"] == pytest.approx(rec["mu0_predicted"], abs=1e-8)
        assert rec["rank_condition_c1"] and rec["rank_condition_c2"]
        assert rec["analytic_block_error"] <= 1e-9

    def test_sgd_records(self):
        doc = """
experiment = "x"
[sgd]
h = [[1.0, 0.2], [0.2, 0.5]]
eta = 0.1
momentum = 0.9
noise_scale = 0.05
w0 = [1.0, 1.0]
[stopping]
epsilon = 0.05
window = 32
t_max = 400
"""
        cfg = parse_config(cfg_bytes(doc))
        rec = analyze(cfg)
        assert rec["joint_spectral_radius"] < 1.0
        assert rec["commutator_norm"] > 0.0
        assert -1.0 <= rec["angle_gap_correlation"] <= 1.0


class TestCli:
    def test_run_and_artifacts(self, tmp_path, capsys):
        cfg_path = tmp_path / "exp.toml"
        cfg_path.write_text(LINEAR_NOISY, encoding="utf-8")
        rc = main(["run", "--config", str(cfg_path), "--out", str(tmp_path / "out"), "--seeds", "1"])
        assert rc == 0
        assert (tmp_path / "out" / "aggregate.txt").exists()
        assert not (tmp_path / "out" / "trace_seed0001.csv").exists()
        out = capsys.readouterr().out
        assert "seed 0: tau=" in out and "triggered 1/1" in out

    def test_analyze_prints_records(self, tmp_path, capsys):
        cfg_path = tmp_path / "exp.toml"
        cfg_path.write_text(LINEAR_NOISY, encoding="utf-8")
        assert main(["analyze", "--config", str(cfg_path)]) == 0
        assert "mu0=" in capsys.readouterr().out

    def test_stop_bounds_prints_bounds(self, tmp_path, capsys):
        cfg_path = tmp_path / "exp.toml"
        cfg_path.write_text(LINEAR_NOISY, encoding="utf-8")
        assert main(["stop-bounds", "--config", str(cfg_path)]) == 0
        out = capsys.readouterr().out
        assert "bound.t0=" in out and "floor.eps_star=0.25" in out

    def test_stop_bounds_needs_constants(self, tmp_path, capsys):
        doc = LINEAR_NOISY.split("[constants]")[0] + "[analysis]\nequilibrium = false\n"
        cfg_path = tmp_path / "exp.toml"
        cfg_path.write_text(doc, encoding="utf-8")
        assert main(["stop-bounds", "--config", str(cfg_path)]) == 1
        assert "no [constants] block" in capsys.readouterr().err

    def test_stop_bounds_fails_below_floor(self, tmp_path, capsys):
        doc = LINEAR_NOISY.replace("epsilon = 0.45", "epsilon = 0.2")
        cfg_path = tmp_path / "exp.toml"
        cfg_path.write_text(doc, encoding="utf-8")
        assert main(["stop-bounds", "--config", str(cfg_path)]) == 1
        assert "error:" in capsys.readouterr().err

    def test_config_errors_become_exit_one(self, tmp_path, capsys):
        cfg_path = tmp_path / "exp.toml"
        cfg_path.write_text(LINEAR_NOISY.replace('experiment = "demo"', ""), encoding="utf-8")
        assert main(["run", "--config", str(cfg_path)]) == 1
        assert "error:" in capsys.readouterr().err
