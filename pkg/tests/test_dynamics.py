import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dropsg import (BranchState, CrashedIntoMagnetsError, DropKinematics,
                    SpinLabel, build_schedule, integrate_reference,
                    propagate_segment, segment_equilibrium, simulate_branches)
from dropsg.model import apply_overrides
from conftest import uniform_sample_indices


class TestSegmentEquilibrium:
    def test_spin_zero_no_bias_no_tilt(self, scenario):
        clean = apply_overrides(scenario, ["biasField=0"])
        assert segment_equilibrium(SpinLabel.ZERO, +1, clean) == 0.0

    def test_spin_minus_one_positive_sigma(self, scenario, derived):
        clean = apply_overrides(scenario, ["biasField=0"])
        x_eq = segment_equilibrium(SpinLabel.MINUS_ONE, +1, clean)
        assert x_eq == pytest.approx(derived.equilibrium_offset, rel=1e-12)
        assert x_eq == pytest.approx(137.6e-9, rel=1e-3)

    def test_spin_minus_one_negative_sigma(self, scenario, derived):
        clean = apply_overrides(scenario, ["biasField=0"])
        x_eq = segment_equilibrium(SpinLabel.MINUS_ONE, -1, clean)
        assert x_eq == pytest.approx(-derived.equilibrium_offset, rel=1e-12)

    def test_bias_offset(self, scenario):
        # force balance: the bias kick against the diamagnetic stiffness
        # reduces to -B0/B' for spin zero, about -447 um at the defaults
        x_eq = segment_equilibrium(SpinLabel.ZERO, +1, scenario)
        g = scenario.geometry
        assert x_eq == pytest.approx(-g.bias_field / g.gradient_magnitude, rel=1e-12)
        assert x_eq == pytest.approx(-4.468e-4, rel=1e-3)

    def test_tilt_term(self, scenario):
        tilted = apply_overrides(scenario, ["biasField=0", "phi=5e-4"])
        d, g, c = tilted.diamond, tilted.geometry, tilted.constants
        stiffness = (abs(d.susceptibility) * d.volume / c.vacuum_permeability
                     * g.gradient_magnitude ** 2)
        expected = -d.mass * c.g_surface * math.sin(5e-4) / stiffness
        assert segment_equilibrium(SpinLabel.ZERO, +1, tilted) == pytest.approx(
            expected, rel=1e-12)

    def test_accepts_plain_int(self, scenario):
        a = segment_equilibrium(-1, +1, scenario)
        b = segment_equilibrium(SpinLabel.MINUS_ONE, +1, scenario)
        assert a == b


class TestPropagateSegment:
    def test_zero_dt_is_identity(self, derived):
        state = BranchState(x=1e-9, vx=2e-6, spin=SpinLabel.ZERO, t=0.0)
        assert propagate_segment(state, 0.0, derived.angular_frequency, 0.0) is state

    def test_fixed_point(self, derived):
        state = BranchState(x=derived.equilibrium_offset, vx=0.0,
                            spin=SpinLabel.MINUS_ONE, t=0.0)
        out = propagate_segment(state, derived.equilibrium_offset,
                                derived.angular_frequency, 0.01)
        assert out.x == state.x
        assert out.vx == 0.0

    def test_half_period_swing_is_max_separation(self, derived):
        # released at the old equilibrium, swings to twice the offset
        state = BranchState(x=0.0, vx=0.0, spin=SpinLabel.MINUS_ONE, t=0.0)
        out = propagate_segment(state, derived.equilibrium_offset,
                                derived.angular_frequency,
                                math.pi / derived.angular_frequency)
        assert out.x == pytest.approx(derived.max_separation, rel=1e-12)
        assert out.x == pytest.approx(276e-9, abs=1e-9)
        assert abs(out.vx) < 1e-18

    def test_rejects_negative_dt(self, derived):
        state = BranchState(x=0.0, vx=0.0, spin=SpinLabel.ZERO, t=0.0)
        with pytest.raises(ValueError):
            propagate_segment(state, 0.0, derived.angular_frequency, -1.0)

    @settings(max_examples=100, deadline=None)
    @given(x=st.floats(-1e-6, 1e-6), v=st.floats(-1e-4, 1e-4),
           x_eq=st.floats(-1e-6, 1e-6), dt=st.floats(0.0, 0.2))
    def test_energy_conserved(self, x, v, x_eq, dt):
        omega = 66.4
        state = BranchState(x=x, vx=v, spin=SpinLabel.ZERO, t=0.0)
        out = propagate_segment(state, x_eq, omega, dt)
        e_in = 0.5 * v ** 2 + 0.5 * omega ** 2 * (x - x_eq) ** 2
        e_out = 0.5 * out.vx ** 2 + 0.5 * omega ** 2 * (out.x - x_eq) ** 2
        assert e_out == pytest.approx(e_in, rel=1e-10, abs=1e-30)


class TestSimulateBranches:
    def test_max_separation(self, result, derived):
        abs_sep = np.abs(result.separation)
        i = int(np.argmax(abs_sep))
        assert abs(abs_sep[i] - 276e-9) <= 0.02 * 276e-9
        assert abs(result.times[i] - derived.period / 2) <= 0.01 * derived.period / 2

    def test_recombination_residuals(self, result):
        rec = result.recombination
        assert rec.dx_mid < 2e-9 and rec.dx_end < 2e-9
        assert rec.dvx_mid < 1e-7 and rec.dvx_end < 1e-7
        assert result.separable

    def test_matches_analytic_envelope(self, result, derived):
        t, T = result.times, derived.period
        omega, dx_eq = derived.angular_frequency, derived.equilibrium_offset
        envelope = np.where(t <= T, dx_eq * (1 - np.cos(omega * t)),
                            dx_eq * (1 - np.cos(omega * (t - T))))
        dev = np.max(np.abs(np.abs(result.separation) - envelope))
        assert dev < 1e-10  # 0.1 nm

    def test_no_teeth_zero_bias_closed_form(self, no_teeth_result, derived):
        t, T = no_teeth_result.times, derived.period
        omega, dx_eq = derived.angular_frequency, derived.equilibrium_offset
        envelope = np.where(t <= T, dx_eq * (1 - np.cos(omega * t)),
                            dx_eq * (1 - np.cos(omega * (t - T))))
        assert np.max(np.abs(np.abs(no_teeth_result.separation) - envelope)) < 1e-15

    def test_spins_alternate_and_start_correctly(self, result):
        assert result.spin_a[0] == -1 and result.spin_b[0] == 0
        assert np.all(result.spin_a + result.spin_b == -1)

    def test_common_mode_cancellation_ratio(self, result, result_full_width):
        peak_half = np.max(np.abs(result.common_mode))
        peak_full = np.max(np.abs(result_full_width.common_mode))
        assert peak_half <= 0.10 * peak_full

    def test_equal_time_in_spin_states(self, result, schedule, derived):
        max_gap = float(np.max(np.diff(schedule.crossing_times)))
        t_a, t_b = result.time_in_minus_one
        assert abs(t_a - derived.period) <= max_gap
        assert abs(t_b - derived.period) <= max_gap

    def test_separation_invariant_under_bias(self, scenario, schedule, result):
        off = apply_overrides(scenario, ["biasField=0"])
        res0 = simulate_branches(off, schedule)
        assert np.max(np.abs(res0.separation - result.separation)) < 1e-11

    def test_separation_invariant_under_tilt(self, scenario, schedule, result):
        tilted = apply_overrides(scenario, ["phi=5e-4"])
        res_t = simulate_branches(tilted, schedule)
        assert np.max(np.abs(res_t.separation - result.separation)) < 1e-11
        # paths themselves do shift with tilt
        assert np.max(np.abs(res_t.common_mode - result.common_mode)) > 1e-9

    def test_path_inversion_between_halves(self, scenario, derived):
        # branch A retraces branch B's path one oscillation later (B0 = 0)
        T = derived.period
        sc = apply_overrides(scenario, ["biasField=0",
                                        f"samplingInterval={T / 1000!r}"])
        kin = DropKinematics.from_scenario(sc)
        sched = build_schedule(kin, sc.geometry, T)
        res = simulate_branches(sc, sched)
        idx = uniform_sample_indices(res, T / 1000)
        assert len(idx) >= 2000
        first, second = idx[:1000], idx[1000:2000]
        dev = np.abs(res.x_a[second] - res.x_b[first])
        assert np.max(dev) < 1e-10  # 0.1 nm
        dev_b = np.abs(res.x_b[second] - res.x_a[first])
        assert np.max(dev_b) < 1e-10

    def test_crash_detection(self, scenario, derived):
        # no teeth and a stronger bias: the shared oscillation exceeds 1 mm
        sc = apply_overrides(scenario, ["toothWidth=10.0", "biasField=0.5"])
        kin = DropKinematics.from_scenario(sc)
        sched = build_schedule(kin, sc.geometry, derived.period)
        with pytest.raises(CrashedIntoMagnetsError) as err:
            simulate_branches(sc, sched)
        assert err.value.time > 0

    def test_sample_rows_include_events(self, result, schedule):
        times = set(result.times.tolist())
        for e in schedule.events:
            assert e.time in times


class TestIntegrateReference:
    def test_oracle_equivalence(self, result, reference_result):
        assert np.array_equal(result.times, reference_result.times)
        dev = np.max(np.abs(result.separation - reference_result.separation))
        assert dev < 1e-11  # 0.01 nm over the full scheme

    def test_no_teeth_matches_closed_form(self, no_teeth_scenario, derived):
        kin = DropKinematics.from_scenario(no_teeth_scenario)
        sched = build_schedule(kin, no_teeth_scenario.geometry, derived.period)
        ref = integrate_reference(no_teeth_scenario, sched, rel_tol=1e-10)
        t, T = ref.times, derived.period
        omega, dx_eq = derived.angular_frequency, derived.equilibrium_offset
        envelope = np.where(t <= T, dx_eq * (1 - np.cos(omega * t)),
                            dx_eq * (1 - np.cos(omega * (t - T))))
        assert np.max(np.abs(np.abs(ref.separation) - envelope)) < 1e-13

    def test_error_decreases_with_tolerance(self, scenario, derived):
        # on the dense tooth schedule every segment is resolved to round-off
        # at any tolerance, so convergence is probed on a sparse-segment
        # scheme where the adaptive stepper actually has to subdivide
        sc = apply_overrides(scenario, ["toothWidth=10.0", "biasField=0",
                                        "samplingInterval=0.03"])
        kin = DropKinematics.from_scenario(sc)
        sched = build_schedule(kin, sc.geometry, derived.period)
        exact = simulate_branches(sc, sched)
        errors = []
        for rel_tol in (1e-6, 1e-8, 1e-10):
            ref = integrate_reference(sc, sched, rel_tol=rel_tol)
            errors.append(float(np.max(np.abs(ref.separation - exact.separation))))
        assert errors[0] > errors[1] > errors[2]

    def test_rel_tol_domain(self, scenario, schedule):
        with pytest.raises(ValueError):
            integrate_reference(scenario, schedule, rel_tol=1e-13)
        with pytest.raises(ValueError):
            integrate_reference(scenario, schedule, rel_tol=1e-3)

    def test_step_size_underflow(self):
        from dropsg.dynamics import IntegrationFailureError, _dp54_segment

        # an acceleration too stiff to resolve forces the step below the floor
        def explosive(x, branch):
            return 1e300 * (x + 1.0)

        with np.errstate(over="ignore", invalid="ignore"):
            with pytest.raises(IntegrationFailureError, match="underflow"):
                _dp54_segment(np.zeros(4), 0.0, 1.0, explosive, 1e-10,
                              np.full(4, 1e-30))
