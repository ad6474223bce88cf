"""Windowed stopping, noise floors, and the closed-form bound calculators."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ordergap.core import Event, OperatorPair, finite_sampler, run_trajectory
from ordergap.linear import LinearPair
from ordergap.rng import child_rng
from ordergap.stopping import (
    BelowFloorWarning,
    StoppingConfig,
    TheoryConstants,
    expected_gap_stop,
    noise_floor,
    stopping_bounds,
    suboptimality_bounds,
    windowed_stop,
)

DIAG = np.diag([0.5, 0.25])
ROT = np.array([[0.0, -1.0], [1.0, 0.0]])


def noisy_constants(**over) -> TheoryConstants:
    base = dict(rho=0.5, L=1.0, sigma=0.1, M=0.1, R0=1.0)
    base.update(over)
    return TheoryConstants(**base)


class TestTheoryConstants:
    def test_gamma_derived(self):
        assert noisy_constants(L=0.8).gamma == pytest.approx(0.4)

    def test_rho_range_enforced(self):
        with pytest.raises(ValueError, match="rho"):
            TheoryConstants(rho=1.0, L=1.0)

    def test_envelope_dominates_sigma(self):
        with pytest.raises(ValueError, match="M"):
            TheoryConstants(rho=0.5, L=1.0, sigma=0.2, M=0.1)

    def test_noiseless_forces_zero_envelope(self):
        with pytest.raises(ValueError):
            TheoryConstants(rho=0.5, L=1.0, sigma=0.0, M=0.5)


class TestStoppingConfig:
    def test_rejects_bad_window(self):
        with pytest.raises(ValueError):
            StoppingConfig(epsilon=0.1, window=0, t_max=10)

    def test_rejects_budget_below_window(self):
        with pytest.raises(ValueError):
            StoppingConfig(epsilon=0.1, window=8, t_max=4)

    def test_rejects_bad_delta(self):
        with pytest.raises(ValueError):
            StoppingConfig(epsilon=0.1, window=2, t_max=10, delta=1.5)

    def test_rejects_unknown_rule(self):
        with pytest.raises(ValueError):
            StoppingConfig(epsilon=0.1, window=2, t_max=10, rule="adaptive")


class TestNoiseFloor:
    def test_arithmetic_oracle(self):
        f = noise_floor(noisy_constants())
        assert f.eps_equilibrium == pytest.approx(0.15)
        assert f.eps_trajectory == pytest.approx(0.1)
        assert f.eps_star == pytest.approx(0.25)
        assert f.eps_star_envelope == pytest.approx(0.25)

    def test_noiseless_floor_vanishes(self):
        f = noise_floor(TheoryConstants(rho=0.5, L=1.0))
        assert (f.eps_equilibrium, f.eps_trajectory, f.eps_star, f.eps_star_envelope) == (
            0.0,
            0.0,
            0.0,
            0.0,
        )

    def test_envelope_linear_in_m(self):
        f = noise_floor(noisy_constants(M=0.2))
        assert f.eps_star_envelope == pytest.approx(2 * f.eps_star)

    def test_no_contraction_rejected(self):
        with pytest.raises(ValueError, match="gamma"):
            noise_floor(TheoryConstants(rho=0.5, L=2.0))


class TestStoppingBounds:
    def test_n_eps_oracle(self):
        b = stopping_bounds(
            TheoryConstants(rho=0.5, L=1.0, R0=1.0),
            StoppingConfig(epsilon=0.1, window=2, t_max=100),
        )
        assert b.n_eps == 4  # ceil(log2(2 * 0.5 * 1 / 0.1))
        assert b.tau_bound_noiseless == 6

    def test_k_envelope_oracle(self):
        b = stopping_bounds(noisy_constants(), StoppingConfig(epsilon=0.5, window=2, t_max=100))
        assert b.k_envelope == pytest.approx(1.25)  # 2*0.5*(1 + 0.1) + 1.5*0.1

    def test_wide_epsilon_stops_at_window(self):
        b = stopping_bounds(
            TheoryConstants(rho=0.5, L=1.0, R0=1.0),
            StoppingConfig(epsilon=1.0, window=3, t_max=100),
        )
        assert b.n_eps == 0
        assert b.tau_bound_noiseless == 3

    def test_containment_oracle(self):
        b = stopping_bounds(
            noisy_constants(r=0.2), StoppingConfig(epsilon=0.5, window=2, t_max=100)
        )
        assert b.containment_t0 == 4  # ceil(log2(1 / (0.2 - 0.1)))

    def test_containment_needs_room_above_offset(self):
        with pytest.raises(ValueError, match="containment"):
            stopping_bounds(
                noisy_constants(r=0.05), StoppingConfig(epsilon=0.5, window=2, t_max=100)
            )

    def test_sub_floor_epsilon_rejected_in_noisy_mode(self):
        with pytest.raises(ValueError, match="floor"):
            stopping_bounds(
                noisy_constants(), StoppingConfig(epsilon=0.2, window=2, t_max=100, delta=0.1)
            )

    def test_noisy_pieces_need_delta(self):
        b = stopping_bounds(noisy_constants(), StoppingConfig(epsilon=0.5, window=2, t_max=100))
        assert b.eta is None and b.t0 is None and b.w_min is None

    def test_eta_formula(self):
        cfg = StoppingConfig(epsilon=0.5, window=16, t_max=500, delta=0.1)
        b = stopping_bounds(noisy_constants(), cfg)
        expected = b.k_envelope * np.sqrt(2.0 * np.log(2.0 * b.t0 / 0.1) / 16)
        assert b.eta == pytest.approx(expected)

    def test_w_min_is_self_consistent_minimum(self):
        cfg = StoppingConfig(epsilon=0.45, window=1, t_max=2, delta=0.1)
        c = noisy_constants()
        b = stopping_bounds(c, cfg)
        slack = 0.45 - 0.25

        def eta_at(w: int) -> float:
            t0 = w + b.n_eps_envelope
            return b.k_envelope * np.sqrt(2.0 * np.log(2.0 * t0 / 0.1) / w)

        assert eta_at(b.w_min) <= slack / 2.0
        assert eta_at(b.w_min - 1) > slack / 2.0

    def test_endpoint_bounds_need_mu(self):
        b = stopping_bounds(noisy_constants(), StoppingConfig(epsilon=0.5, window=2, t_max=100))
        assert b.endpoint_noiseless is None
        b2 = stopping_bounds(
            noisy_constants(mu=0.125), StoppingConfig(epsilon=0.5, window=2, t_max=100)
        )
        assert b2.endpoint_noiseless == pytest.approx(4.0)

    def test_endpoint_noisy_formula(self):
        cfg = StoppingConfig(epsilon=0.45, window=64, t_max=500, delta=0.1)
        b = stopping_bounds(noisy_constants(mu=0.125), cfg)
        assert b.window_distance_noisy == pytest.approx((0.45 + b.eta) / 0.125)
        assert b.endpoint_noisy == pytest.approx(b.window_distance_noisy + 0.1)


class TestSuboptimalityBounds:
    def test_distance_oracle(self):
        b = suboptimality_bounds(noisy_constants(), observed_gap_mean=0.5)
        assert b.distance_lb == pytest.approx(0.35)

    def test_positive_part_clamp(self):
        b = suboptimality_bounds(noisy_constants(), observed_gap_mean=0.1)
        assert b.distance_lb == 0.0

    def test_excess_loss_oracle(self):
        b = suboptimality_bounds(
            noisy_constants(mu=0.2), observed_gap_mean=0.0, epsilon=0.1, m_smooth=2.0
        )
        assert b.excess_loss_noiseless == pytest.approx(0.25)

    def test_quadratic_growth_lower_bound(self):
        b = suboptimality_bounds(noisy_constants(), observed_gap_mean=0.5, m_qg=2.0)
        assert b.loss_lb == pytest.approx(0.35**2)  # (m_qg / 2) d^2

    def test_gamma_zero_rejected(self):
        with pytest.raises(ValueError, match="gamma"):
            suboptimality_bounds(TheoryConstants(rho=0.0, L=1.0), observed_gap_mean=0.5)


class TestWindowedStop:
    def test_zero_gap_triggers_at_first_full_window(self):
        pair = OperatorPair(
            dimension=2, consolidate=lambda th: th, expand=lambda e, th: th + 1.0
        )
        rep = windowed_stop(
            pair,
            finite_sampler([Event(id=0)]),
            np.zeros(2),
            StoppingConfig(epsilon=0.1, window=5, t_max=50),
            child_rng(0, 0),
        )
        assert rep.triggered and rep.tau == 5

    def test_noiseless_tau_bound(self, diag_rot):
        c = diag_rot.constants(np.array([1.0, 0.0]))
        rep = windowed_stop(
            diag_rot.pair(),
            diag_rot.sampler(),
            np.array([1.0, 0.0]),
            StoppingConfig(epsilon=0.1, window=2, t_max=200),
            child_rng(0, 0),
            reference=diag_rot.theta_star(),
            constants=c,
        )
        assert rep.triggered
        assert rep.tau <= 2 + 4  # w + N_eps
        assert rep.checks["tau_within_noiseless_bound"]

    def test_budget_exhaustion(self, diag_rot):
        rep = windowed_stop(
            diag_rot.pair(),
            diag_rot.sampler(),
            np.array([1.0, 0.0]),
            StoppingConfig(epsilon=1e-300, window=2, t_max=50),
            child_rng(0, 0),
        )
        assert not rep.triggered
        assert rep.tau == 50
        assert len(rep.trace) == 50

    def test_window_one_stops_at_first_small_gap(self, diag_rot):
        # omegas from (1, 0): 0.25, 0.0625, 0.03125; first <= 0.05 at t = 2
        rep = windowed_stop(
            diag_rot.pair(),
            diag_rot.sampler(),
            np.array([1.0, 0.0]),
            StoppingConfig(epsilon=0.05, window=1, t_max=50),
            child_rng(0, 0),
        )
        assert rep.triggered and rep.tau == 3
        assert rep.trace.omega[-1] <= 0.05 < rep.trace.omega[-2]

    def test_tie_at_threshold_triggers(self):
        # constant gap || (A - I) b || = 0.25 exactly; epsilon = 0.25 must stop
        spec = LinearPair(q_matrix=0.5 * np.eye(2), offsets=np.array([[0.5, 0.0]]))
        rep = windowed_stop(
            spec.pair(),
            spec.sampler(),
            np.zeros(2),
            StoppingConfig(epsilon=0.25, window=3, t_max=50),
            child_rng(0, 0),
        )
        assert rep.triggered and rep.tau == 3

    def test_triggered_implies_last_mean_at_most_epsilon(self, noisy_diag_rot):
        rep = windowed_stop(
            noisy_diag_rot.pair(),
            noisy_diag_rot.sampler(),
            np.array([1.0, 0.0]),
            StoppingConfig(epsilon=0.3, window=4, t_max=500),
            child_rng(3, 0),
        )
        assert rep.triggered
        assert rep.window_averages[-1] <= 0.3

    def test_monotone_distance_decrease_noiseless(self, diag_rot):
        rep = windowed_stop(
            diag_rot.pair(),
            diag_rot.sampler(),
            np.array([0.6, 0.8]),
            StoppingConfig(epsilon=1e-6, window=1, t_max=100),
            child_rng(0, 0),
            reference=diag_rot.theta_star(),
        )
        d = rep.trace.dist_to_ref
        assert np.all(np.diff(d) <= 1e-15)

    def test_below_floor_warning(self, noisy_diag_rot):
        c = noisy_diag_rot.constants(np.array([1.0, 0.0]))
        with pytest.warns(BelowFloorWarning):
            rep = windowed_stop(
                noisy_diag_rot.pair(),
                noisy_diag_rot.sampler(),
                np.array([1.0, 0.0]),
                StoppingConfig(epsilon=0.01, window=2, t_max=20),
                child_rng(0, 0),
                constants=c,
            )
        assert rep.below_floor

    def test_final_state_reuses_branch(self, diag_rot):
        # the returned state must be theta_tau of the canonical dynamics
        cfg = StoppingConfig(epsilon=0.05, window=1, t_max=50)
        rep = windowed_stop(
            diag_rot.pair(), diag_rot.sampler(), np.array([1.0, 0.0]), cfg, child_rng(0, 0)
        )
        trace, final = run_trajectory(
            diag_rot.pair(), diag_rot.sampler(), np.array([1.0, 0.0]), rep.tau, child_rng(0, 0)
        )
        np.testing.assert_array_equal(rep.final_state, final)


class TestExpectedGapStop:
    def test_point_mass_matches_windowed(self, diag_rot):
        cfg = StoppingConfig(epsilon=0.1, window=2, t_max=100)
        a = windowed_stop(
            diag_rot.pair(), diag_rot.sampler(), np.array([1.0, 0.0]), cfg, child_rng(0, 0)
        )
        b = expected_gap_stop(
            diag_rot.pair(), diag_rot.sampler(), np.array([1.0, 0.0]), cfg, child_rng(0, 0)
        )
        assert a.tau == b.tau
        np.testing.assert_array_equal(a.final_state, b.final_state)
        np.testing.assert_allclose(a.window_averages, b.window_averages, atol=1e-15)

    def test_needs_exact_event_set(self, diag_rot):
        sampler = diag_rot.sampler()
        stripped = type(sampler)(draw=sampler.draw, mode=sampler.mode, exact=None)
        with pytest.raises(ValueError, match="exact"):
            expected_gap_stop(
                diag_rot.pair(),
                stripped,
                np.ones(2),
                StoppingConfig(epsilon=0.1, window=2, t_max=10),
                child_rng(0, 0),
            )

    def test_noiseless_tau_bound_both_rules(self, diag_rot):
        c = diag_rot.constants(np.array([1.0, 0.0]), mu=0.125)
        for runner in (windowed_stop, expected_gap_stop):
            rep = runner(
                diag_rot.pair(),
                diag_rot.sampler(),
                np.array([1.0, 0.0]),
                StoppingConfig(epsilon=0.01, window=5, t_max=300),
                child_rng(1, 0),
                reference=diag_rot.theta_star(),
                constants=c,
            )
            assert rep.checks["tau_within_noiseless_bound"]
            assert rep.checks["endpoint_within_noiseless_bound"]

    def test_cancelling_first_moments_separate_the_rules(self):
        # Sigma_e = c_e * (a1 - a2) N with c = (+2, -1), p = (1/3, 2/3):
        # Sigma_bar = 0 while per-event gaps differ by the factor |c_e|, so a
        # window of mostly c=+2 draws puts the realized mean above the exact
        # expectation at every position.
        a = np.diag([1.2, 0.2])
        n = np.array([[0.0, 1.0], [0.0, 0.0]])
        pair = OperatorPair(
            dimension=2,
            consolidate=lambda th: a @ th,
            expand=lambda e, th: th + (2.0 if e.id == 0 else -1.0) * (n @ th),
        )
        sampler = finite_sampler([Event(id=0), Event(id=1)], [1.0 / 3.0, 2.0 / 3.0])
        cfg = StoppingConfig(epsilon=1e-12, window=2, t_max=4)
        theta0 = np.array([0.3, 1.0])

        # seed 100 draws the |c| = 2 event at t = 0, 1, 2
        emp = windowed_stop(pair, sampler, theta0, cfg, child_rng(100, 0))
        exp = expected_gap_stop(pair, sampler, theta0, cfg, child_rng(100, 0))
        np.testing.assert_array_equal(emp.final_state, exp.final_state)

        # theta_2(t) = 0.2^t regardless of draws, so the exact statistic is
        # (4/3) * mean(|theta_2|) over the window
        t2 = 0.2 ** np.arange(4)
        closed = (4.0 / 3.0) * np.array(
            [np.nan, (t2[0] + t2[1]) / 2, (t2[1] + t2[2]) / 2, (t2[2] + t2[3]) / 2]
        )
        np.testing.assert_allclose(exp.window_averages[1:], closed[1:], rtol=1e-12)
        assert np.all(emp.window_averages[1:] > exp.window_averages[1:])


class TestWithNoise:
    def test_noisy_run_checks_populated(self, noisy_diag_rot):
        c = noisy_diag_rot.constants(np.array([1.0, 0.0]), mu=0.125)
        cfg = StoppingConfig(epsilon=0.45, window=64, t_max=400, delta=0.1)
        rep = windowed_stop(
            noisy_diag_rot.pair(),
            noisy_diag_rot.sampler(),
            np.array([1.0, 0.0]),
            cfg,
            child_rng(5, 0),
            reference=noisy_diag_rot.theta_star(),
            constants=c,
        )
        assert rep.triggered
        assert set(rep.checks) == {"tau_within_t0", "endpoint_within_noisy_bound"}
        assert rep.bounds.t0 == 64 + rep.bounds.n_eps_envelope

    def test_bounds_none_when_calculator_rejects(self, noisy_diag_rot):
        # epsilon above eps_star but below the M envelope: stopping_bounds
        # raises, the run proceeds with bounds omitted
        spec = LinearPair(
            q_matrix=DIAG,
            p_matrix=ROT,
            offsets=np.array([[0.3, 0.0], [-0.05, 0.0]]),
            probs=[0.2, 0.8],
        )
        c = spec.constants(np.array([1.0, 0.0]))
        floor = noise_floor(c)
        eps = 0.5 * (floor.eps_star + floor.eps_star_envelope)
        assert floor.eps_star < eps < floor.eps_star_envelope
        rep = windowed_stop(
            spec.pair(),
            spec.sampler(),
            np.array([1.0, 0.0]),
            StoppingConfig(epsilon=eps, window=8, t_max=200, delta=0.1),
            child_rng(2, 0),
            constants=c,
        )
        assert rep.bounds is None
        assert rep.checks == {}


@given(st.integers(0, 10_000), st.integers(1, 6))
@settings(max_examples=30, deadline=None)
def test_tau_bound_holds_across_seeds_noiseless(seed, window):
    spec = LinearPair(q_matrix=DIAG, p_matrix=ROT)
    cfg = StoppingConfig(epsilon=0.1, window=window, t_max=200)
    rep = windowed_stop(
        spec.pair(),
        spec.sampler(),
        np.array([1.0, 0.0]),
        cfg,
        child_rng(seed, 0),
        reference=spec.theta_star(),
        constants=spec.constants(np.array([1.0, 0.0])),
    )
    assert rep.triggered
    assert rep.tau <= window + 4
