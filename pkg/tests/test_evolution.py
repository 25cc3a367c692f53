import math

import numpy as np
import pytest

from blowlab.eigen import DirichletProblem, solve_dirichlet
from blowlab.evolution import (
    BLOWN_UP,
    GLOBAL_SUSPECTED,
    HORIZON_REACHED,
    SchemeConfig,
    check_initial_condition_b,
    decay_profile,
    explicit_update,
    g_factor,
    gamma_s,
    kaplan_check,
    rate_series,
    run_diffusion,
    run_semilinear,
    step,
)
from blowlab.lattice import (
    LatticeField,
    constant_extension,
    mass,
    norm,
    restrict_function,
)
from blowlab.odekit import OdeClosedForm, blowup_times, state_at
from blowlab.weights import build_kernel, cfl_tau_max

LAP1 = build_kernel("laplacian", h=1.0)
LAP_HALF = build_kernel("laplacian", h=0.5)


def bump(x):
    return 0.9 * np.maximum(1 - x**2, 0.0)


def constant_field(value, h=1.0, box=3):
    return LatticeField(h, 1, box, np.full(2 * box + 1, float(value)),
                        constant_extension(value))


class TestStep:
    def test_constant_field_pure_reaction(self):
        field = constant_field(2.0)
        out, tau_j = step(LAP1, field, p=2.0, tau=0.1)
        assert tau_j == pytest.approx(0.05)
        np.testing.assert_allclose(out.values, 2.2)
        assert out.extension.value == pytest.approx(2.2)

    def test_zero_field_fixed_point(self):
        field = LatticeField(1.0, 1, 3, np.zeros(7))
        out, tau_j = step(LAP1, field, p=2.0, tau=0.1)
        assert tau_j == 0.1
        np.testing.assert_array_equal(out.values, 0.0)

    def test_spike_hand_value(self):
        values = np.zeros(7)
        values[3] = 0.5
        field = LatticeField(1.0, 1, 3, values)
        out, tau_j = step(LAP1, field, p=2.0, tau=0.1)
        assert tau_j == pytest.approx(0.1)
        assert out.values[3] == pytest.approx(0.425)

    def test_rejects_negative_data_and_bad_tau(self):
        field = LatticeField(1.0, 1, 2, [-0.1, 0, 0, 0, 0])
        with pytest.raises(ValueError):
            step(LAP1, field, p=2.0, tau=0.1)
        good = LatticeField(1.0, 1, 2, np.ones(5))
        with pytest.raises(ValueError):
            step(LAP1, good, p=2.0, tau=1.0)  # cfl is 1/8

    def test_positivity_preserved_at_cfl(self):
        rng = np.random.default_rng(2)
        tau = cfl_tau_max(LAP_HALF)
        for _ in range(50):
            field = LatticeField(0.5, 1, 6, rng.uniform(0, 2, 13))
            out, _ = step(LAP_HALF, field, p=1.7, tau=tau)
            assert np.all(out.values >= 0)


class TestRunSemilinearOdeMode:
    def test_matches_closed_form_per_step(self):
        cfg = SchemeConfig(p=2.0, tau=0.1, blowup_threshold=1e8)
        trace, report = run_semilinear(LAP1, constant_field(1.0), cfg)
        assert report.verdict == BLOWN_UP
        ode = OdeClosedForm(1.0, 2.0, 0.1)
        for j in range(0, len(trace), 17):
            t_j, y_j = state_at(ode, j)
            assert trace.sup_norm[j] == pytest.approx(y_j, rel=1e-10)
            assert trace.t[j] == pytest.approx(t_j, rel=1e-10, abs=1e-14)

    def test_t_estimate_matches_ode_blowup_time(self):
        cfg = SchemeConfig(p=2.0, tau=0.1, blowup_threshold=1e8)
        _, report = run_semilinear(LAP1, constant_field(1.0), cfg)
        t_tau, _ = blowup_times(OdeClosedForm(1.0, 2.0, 0.1))
        assert report.T_estimate == pytest.approx(t_tau, abs=1e-9)
        assert report.T_lower <= report.T_estimate

    def test_rate_series_exactly_constant_for_ode_run(self):
        cfg = SchemeConfig(p=2.0, tau=0.1, blowup_threshold=1e6)
        trace, report = run_semilinear(LAP1, constant_field(1.0), cfg)
        series = rate_series(trace, report, p=2.0)
        # constant up to cancellation in T_estimate - t_j near the singularity
        np.testing.assert_allclose(series.values, g_factor(0.1, 2.0),
                                   rtol=1e-8)
        assert series.tail_mean == pytest.approx(1.1, rel=1e-10)


class TestRunSemilinearVerdicts:
    def test_bump_blows_up_for_subcritical_p(self):
        u0 = restrict_function(bump, h=0.5, box_radius=20)
        cfg = SchemeConfig(p=2.0, tau=0.9 * cfl_tau_max(LAP_HALF),
                           horizon=100.0, blowup_threshold=1e8)
        trace, report = run_semilinear(LAP_HALF, u0, cfg)
        assert report.verdict == BLOWN_UP
        assert report.trigger_step is not None
        assert report.T_lower <= report.T_estimate

    def test_bump_global_for_supercritical_p(self):
        u0 = restrict_function(bump, h=0.5, box_radius=40)
        cfg = SchemeConfig(p=5.0, tau=0.9 * cfl_tau_max(LAP_HALF),
                           horizon=20.0)
        trace, report = run_semilinear(LAP_HALF, u0, cfg)
        assert report.verdict == GLOBAL_SUSPECTED
        assert report.T_estimate is None

    def test_horizon_reached_when_still_growing(self):
        # constant data grow from step zero, so an early horizon is inconclusive
        cfg = SchemeConfig(p=2.0, tau=0.1, horizon=0.3)
        _, report = run_semilinear(LAP1, constant_field(1.0), cfg)
        assert report.verdict == HORIZON_REACHED

    def test_post_trigger_strict_growth_and_eps_increase(self):
        u0 = restrict_function(bump, h=0.5, box_radius=20)
        cfg = SchemeConfig(p=2.0, tau=0.9 * cfl_tau_max(LAP_HALF),
                           horizon=100.0)
        trace, report = run_semilinear(LAP_HALF, u0, cfg)
        k = report.trigger_step
        sups = trace.sup_norm[k:]
        assert np.all(np.diff(sups) > 0)
        eps = trace.eps[k:]
        assert np.all(np.isfinite(eps))
        assert np.all(np.diff(eps) > 0)
        assert np.all((eps > 0) & (eps < 1))
        assert eps[-1] > 0.999

    def test_time_accumulation_identity(self):
        u0 = restrict_function(bump, h=0.5, box_radius=15)
        cfg = SchemeConfig(p=2.0, tau=0.9 * cfl_tau_max(LAP_HALF),
                           horizon=100.0)
        trace, _ = run_semilinear(LAP_HALF, u0, cfg)
        drift = trace.t[1:] - (trace.t[:-1] + trace.tau[:-1])
        assert np.max(np.abs(drift)) < 64 * np.finfo(float).eps * max(trace.t[-1], 1.0)
        assert np.all(trace.tau > 0)
        assert np.all(trace.tau <= cfg.tau * (1 + 1e-15))

    def test_rejects_trivial_datum(self):
        with pytest.raises(ValueError):
            run_semilinear(LAP1, LatticeField(1.0, 1, 2, np.zeros(5)),
                           SchemeConfig(p=2.0, tau=0.1, horizon=1.0))

    def test_shrinking_bracket_in_threshold(self):
        u0 = restrict_function(bump, h=0.5, box_radius=15)
        widths = []
        for u_max in (1e4, 1e6, 1e8):
            cfg = SchemeConfig(p=2.0, tau=0.9 * cfl_tau_max(LAP_HALF),
                               horizon=100.0, blowup_threshold=u_max)
            _, report = run_semilinear(LAP_HALF, u0, cfg)
            widths.append(report.T_estimate - report.T_lower)
        assert widths[0] > widths[1] > widths[2]


class TestComparison:
    def test_ordered_data_stay_ordered_under_shared_steps(self):
        rng = np.random.default_rng(9)
        tau = cfl_tau_max(LAP_HALF)
        for _ in range(20):
            lo = rng.uniform(0, 0.3, 13)
            hi = lo + rng.uniform(0, 0.3, 13)
            u = LatticeField(0.5, 1, 6, lo)
            v = LatticeField(0.5, 1, 6, hi)
            # drive both with the tau_j sequence of the larger solution
            for _ in range(5):
                tau_j = tau * min(1.0, norm(v, "sup") ** (1.0 - 1.5))
                u = explicit_update(LAP_HALF, u, 1.5, tau_j)
                v = explicit_update(LAP_HALF, v, 1.5, tau_j)
                assert np.all(u.values <= v.values + 1e-14)


class TestRunDiffusion:
    def test_spike_one_step_stencil(self):
        values = np.zeros(11)
        values[5] = 1.0
        phi = LatticeField(0.5, 1, 5, values)
        tau = 0.02
        trace, samples = run_diffusion(LAP_HALF, phi, tau, steps=1,
                                       sample_steps=[1])
        out = samples[1].values
        assert out[5] == pytest.approx(1 - 2 * tau / 0.25)
        assert out[4] == pytest.approx(tau / 0.25)
        assert out[6] == pytest.approx(tau / 0.25)

    def test_zero_datum_stays_zero(self):
        phi = LatticeField(0.5, 1, 5, np.zeros(11))
        trace, _ = run_diffusion(LAP_HALF, phi, 0.02, steps=20)
        assert np.all(trace.sup_norm == 0.0)

    def test_sup_nonincreasing_and_mass_conserved(self):
        phi = restrict_function(lambda x: np.exp(-(x**2)), h=0.5, box_radius=40)
        tau = cfl_tau_max(LAP_HALF)
        trace, samples = run_diffusion(LAP_HALF, phi, tau, steps=60,
                                       sample_steps=[0, 60])
        assert np.all(np.diff(trace.sup_norm) <= 1e-15)
        assert abs(mass(samples[60]) - mass(samples[0])) < 1e-10

    def test_constant_extension_rejected(self):
        phi = LatticeField(0.5, 1, 3, np.ones(7), constant_extension(1.0))
        with pytest.raises(ValueError):
            run_diffusion(LAP_HALF, phi, 0.01, steps=1)


class TestGammaS:
    def test_gaussian_normalization(self):
        assert gamma_s(0.0, 1.0 / (4 * math.pi), K=1.0, s=1.0) == pytest.approx(1.0)

    def test_poisson_kernel_value(self):
        assert gamma_s(0.0, 1.0, K=1.0, s=0.5) == pytest.approx(1 / math.pi)

    def test_quadrature_matches_poisson_closed_form(self):
        xs = np.array([0.0, 0.5, 1.0, 2.0, 5.0])
        for t in (0.5, 1.0, 3.0):
            closed = gamma_s(xs, t, K=1.0, s=0.5, method="closed")
            quad = gamma_s(xs, t, K=1.0, s=0.5, method="quadrature")
            np.testing.assert_allclose(quad, closed, atol=1e-7)

    def test_gaussian_quadrature_cross_check(self):
        closed = gamma_s(np.array([0.0, 1.0]), 0.7, K=2.0, s=1.0)
        quad = gamma_s(np.array([0.0, 1.0]), 0.7, K=2.0, s=1.0,
                       method="quadrature")
        np.testing.assert_allclose(quad, closed, atol=1e-7)

    def test_validation(self):
        with pytest.raises(ValueError):
            gamma_s(0.0, 0.0, K=1.0, s=0.5)
        with pytest.raises(ValueError):
            gamma_s(0.0, 1.0, K=1.0, s=1.5)


class TestDecayAndRates:
    def test_decay_profile_slope_of_pure_power(self):
        # synthetic fields following exactly t^(-1/2) at the center
        fields = []
        for t in np.linspace(4.0, 64.0, 12):
            vals = t ** (-0.5) * np.exp(-np.arange(-5, 6) ** 2 / (4.0 * t))
            fields.append((t, LatticeField(1.0, 1, 5, vals)))
        prof = decay_profile(fields, phi_mass=math.sqrt(4 * math.pi),
                             K=1.0, s=1.0)
        assert prof.tail_slope == pytest.approx(-0.5, abs=1e-6)

    def test_rate_series_requires_blowup(self):
        u0 = restrict_function(bump, h=0.5, box_radius=10)
        cfg = SchemeConfig(p=5.0, tau=0.9 * cfl_tau_max(LAP_HALF), horizon=5.0)
        trace, report = run_semilinear(LAP_HALF, u0, cfg)
        with pytest.raises(ValueError):
            rate_series(trace, report, p=5.0)

    def test_rate_tail_mean_in_theoretical_bracket(self):
        for p in (1.5, 2.0, 2.5):
            u0 = restrict_function(bump, h=0.5, box_radius=20)
            cfg = SchemeConfig(p=p, tau=0.9 * cfl_tau_max(LAP_HALF),
                               horizon=200.0)
            trace, report = run_semilinear(LAP_HALF, u0, cfg)
            series = rate_series(trace, report, p)
            lower = 1.0 / (p - 1.0)
            upper = 2 ** (p - 1) / (2 ** (p - 1) - 1)
            assert lower <= series.tail_mean <= upper


class TestKaplan:
    def test_threshold_inequality(self):
        k = build_kernel("laplacian", h=0.5)
        res = solve_dirichlet(DirichletProblem.from_ball(k, 4.0))
        # scale the datum so I0 crosses the threshold either way
        phi = res.eigenfunction
        u_small = LatticeField(phi.h, 1, phi.box_radius,
                               0.01 * np.ones_like(phi.values))
        u_large = LatticeField(phi.h, 1, phi.box_radius,
                               100.0 * np.ones_like(phi.values))
        small = kaplan_check(u_small, res, p=2.0)
        large = kaplan_check(u_large, res, p=2.0)
        assert small.threshold == pytest.approx(res.lam)
        assert not small.guaranteed
        assert large.guaranteed

    def test_zero_datum_never_guaranteed(self):
        k = build_kernel("laplacian", h=0.5)
        res = solve_dirichlet(DirichletProblem.from_ball(k, 2.0))
        u0 = LatticeField(0.5, 1, res.eigenfunction.box_radius,
                          np.zeros_like(res.eigenfunction.values))
        rep = kaplan_check(u0, res, p=2.0)
        assert rep.I0 == 0.0
        assert not rep.guaranteed

    def test_normalization_enforced(self):
        k = build_kernel("laplacian", h=0.5)
        res = solve_dirichlet(DirichletProblem.from_ball(k, 2.0),
                              normalization="l2")
        u0 = LatticeField(0.5, 1, res.eigenfunction.box_radius,
                          np.ones_like(res.eigenfunction.values))
        with pytest.raises(ValueError):
            kaplan_check(u0, res, p=2.0)

    def test_kaplan_flips_true_with_growing_ball(self):
        # fractional s=1/2, p below the critical exponent 1 + 2s/N = 2:
        # the certificate must eventually fire as the ball dilates
        k = build_kernel({"family": "fractional", "s": 0.5}, h=0.5,
                         cutoff_radius=256)
        u0 = restrict_function(bump, h=0.5, box_radius=64)
        flags = []
        for R in (2.0, 4.0, 8.0, 16.0, 32.0):
            res = solve_dirichlet(DirichletProblem.from_ball(k, R))
            flags.append(kaplan_check(u0, res, p=1.5).guaranteed)
        assert flags[-1]
        first_true = flags.index(True)
        assert all(flags[first_true:])


class TestInitialConditionB:
    def test_zero_datum_passes(self):
        u0 = LatticeField(1.0, 1, 3, np.zeros(7))
        assert check_initial_condition_b(LAP1, u0, epsilon=0.5, p=2.0)

    def test_unit_spike_fails(self):
        values = np.zeros(7)
        values[3] = 1.0
        u0 = LatticeField(1.0, 1, 3, values)
        # at the origin: L_h u0 + 0.5 * 1 = -2 + 0.5 < 0
        assert not check_initial_condition_b(LAP1, u0, epsilon=0.5, p=2.0)

    def test_smooth_bump_with_small_h_passes(self):
        # wide smooth profile with fat interior: reaction dominates where the
        # operator is negative once h resolves the curvature
        prof = lambda x: np.maximum(1 - x**2 / 16.0, 0.0) ** 4
        k = build_kernel({"family": "zero_order", "profile": "gaussian"}, h=0.25)
        u0 = restrict_function(prof, h=0.25, box_radius=80)
        assert check_initial_condition_b(k, u0, epsilon=0.1, p=2.0)

    def test_epsilon_validated(self):
        u0 = LatticeField(1.0, 1, 2, np.zeros(5))
        with pytest.raises(ValueError):
            check_initial_condition_b(LAP1, u0, epsilon=1.5, p=2.0)


class TestNumericsGuards:
    def test_overflow_raises_numerics_error(self):
        field = LatticeField(1.0, 1, 2, np.full(5, 1e200),
                             constant_extension(1e200))
        from blowlab.evolution import NumericsError
        with pytest.raises(NumericsError):
            step(LAP1, field, p=2.0, tau=0.1)
