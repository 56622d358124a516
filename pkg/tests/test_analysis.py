import math

import numpy as np
import numpy.testing as npt
import pytest

from dvocsim import analysis
from dvocsim.control import DvocParams, droop_approx_freq, droop_approx_vmag_ss, \
    droop_vmag_tangent_ss
from dvocsim.network import Branch, Topology
from dvocsim.sim import Trace, run_scenario

from conftest import OMEGA0, PU_PARAMS, pu_scenario

TABLE_PARAMS = DvocParams(eta=21.71, alpha=0.9722, kappa=math.pi / 2.0,
                          p_star=500.0, q_star=-125.0,
                          v_star=120.0 * math.sqrt(2.0), omega0=OMEGA0)


def synthetic_trace(t, v):
    t = np.asarray(t, dtype=float)
    v = np.asarray(v, dtype=complex)
    i_o = np.zeros_like(v)
    ang = np.angle(v)
    theta = np.unwrap(ang, axis=0)
    return Trace(t=t, v=v, i_o=i_o, p=(np.conj(v) * i_o).real,
                 q=-(np.conj(v) * i_o).imag, vmag=np.abs(v), theta=theta,
                 inverter_ids=[f"inv{k+1}" for k in range(v.shape[1])],
                 events=[], dt_sample=float(t[1] - t[0]), meta={})


class TestBlackstartAnalytic:
    def test_recovers_initial_condition(self):
        for v0 in (1e-3, 0.3, 0.999, 1.5, 40.0):
            p = TABLE_PARAMS
            curve = analysis.blackstart_analytic(v0 * p.v_star / 1.0, p, [0.0])
            assert curve.magnitudes[0] == pytest.approx(v0 * p.v_star, rel=1e-12)

    def test_limits_to_setpoint(self):
        p = TABLE_PARAMS
        curve = analysis.blackstart_analytic(1e-3 * p.v_star, p, [5.0])
        assert curve.magnitudes[-1] == pytest.approx(p.v_star, rel=1e-12)

    def test_monotone_rise(self):
        p = PU_PARAMS
        t = np.linspace(0.0, 0.5, 400)
        curve = analysis.blackstart_analytic(1e-3, p, t)
        assert np.all(np.diff(curve.magnitudes) > 0.0)
        assert curve.magnitudes[-1] < p.v_star

    def test_satisfies_the_amplitude_ode(self):
        # 5-point-stencil derivative of the curve against the ODE right side.
        p = PU_PARAMS
        rate = p.eta * p.alpha
        h = 1e-6
        for v0 in (1e-3, 0.4, 1.6):
            for t0 in (0.01, 0.08, 0.2):
                ts = t0 + h * np.array([-2.0, -1.0, 0.0, 1.0, 2.0])
                m = analysis.blackstart_analytic(v0, p, ts).magnitudes
                deriv = (-m[4] + 8.0 * m[3] - 8.0 * m[1] + m[0]) / (12.0 * h)
                rhs = rate / p.v_star**2 * (p.v_star**2 - m[2] ** 2) * m[2]
                assert abs(deriv - rhs) < 1e-8

    def test_decaying_branch_from_above(self):
        p = PU_PARAMS
        t = np.linspace(0.0, 0.15, 50)
        curve = analysis.blackstart_analytic(1.7, p, t)
        assert np.all(np.diff(curve.magnitudes) < 0.0)
        assert curve.magnitudes[-1] == pytest.approx(p.v_star, rel=1e-4)

    def test_degenerate_origin(self):
        curve = analysis.blackstart_analytic(0.0, PU_PARAMS, np.linspace(0, 1, 5))
        assert curve.degenerate
        assert np.all(curve.magnitudes == 0.0)

    def test_rejects_start_at_setpoint(self):
        with pytest.raises(ValueError):
            analysis.blackstart_analytic(PU_PARAMS.v_star, PU_PARAMS, [0.0])

    def test_matches_brute_force_integration(self):
        # Reference-hardware gains, fine RK4 oracle at dt = 1e-5.
        p = TABLE_PARAMS
        v0 = 1e-3 * p.v_star
        times = np.linspace(0.0, 0.45, 200)
        oracle = analysis.integrate_magnitude_ode(v0, p, times, max_dt=1e-5)
        curve = analysis.blackstart_analytic(v0, p, times)
        rel = np.abs(curve.magnitudes[1:] - oracle[1:]) / oracle[1:]
        assert rel.max() < 1e-6


class TestBlackstartCompare:
    def test_unloaded_single_inverter_tracks_closed_form(self):
        # kappa = pi/2 and q* = 0: the open-circuit amplitude dynamics are
        # exactly the scalar ODE, so only integrator error remains.
        sc = pu_scenario(load_g=0.0, branch_r=1.0, branch_l=0.0,
                         initial={"mode": "blackstart"},
                         sim={"dt_s": 2e-5, "t_end_s": 0.4,
                              "network_model": "quasistatic",
                              "record_decimation": 10, "noise_seed": 2})
        tr = run_scenario(sc)
        cmp = analysis.blackstart_compare(tr, PU_PARAMS)
        assert cmp.defined
        assert cmp.max_rel_dev < 5e-3

    def test_no_rise_interval_flagged(self):
        sc = pu_scenario(initial={"mode": "nominal", "angle_rad": 0.0},
                         sim={"dt_s": 2e-5, "t_end_s": 0.02,
                              "network_model": "quasistatic",
                              "record_decimation": 10, "noise_seed": 0})
        tr = run_scenario(sc)
        cmp = analysis.blackstart_compare(tr, PU_PARAMS)
        assert not cmp.defined
        assert math.isnan(cmp.max_rel_dev)


class TestEstimateFrequency:
    def test_pure_tone_recovered(self):
        t = np.arange(0.0, 0.1, 1e-4)
        v = np.exp(1j * OMEGA0 * t)[:, None]
        tr = synthetic_trace(t, v)
        got = analysis.estimate_frequency(tr)
        assert got[0] == pytest.approx(OMEGA0, rel=1e-6)

    def test_chirp_error_scales_with_window_squared(self):
        a, big_omega = 5.0, 2.0 * math.pi * 5.0
        t = np.arange(0.0, 0.1001, 1e-4)
        theta = OMEGA0 * t - a / big_omega * np.cos(big_omega * t)
        v = np.exp(1j * theta)[:, None]
        tr = synthetic_trace(t, v)
        tm = 0.05
        inst = OMEGA0 + a * math.sin(big_omega * tm)
        errs = []
        for w in (0.04, 0.02):
            got = analysis.estimate_frequency(tr, (tm - w / 2, tm + w / 2))[0]
            errs.append(abs(got - inst))
        ratio = errs[0] / errs[1]
        assert 3.0 < ratio < 5.0

    def test_low_amplitude_rejected(self):
        t = np.arange(0.0, 0.01, 1e-4)
        v = np.exp(1j * OMEGA0 * t)[:, None]
        v[30] *= 1e-9
        tr = synthetic_trace(t, v)
        with pytest.raises(ValueError):
            analysis.estimate_frequency(tr, min_amplitude=1e-6)


class TestSyncTime:
    def two_trace(self, offset_fn):
        t = np.arange(0.0, 0.2, 1e-4)
        v1 = np.exp(1j * OMEGA0 * t)
        v2 = v1 * np.exp(1j * offset_fn(t))
        return synthetic_trace(t, np.column_stack([v1, v2]))

    def test_identical_states_sync_at_zero(self):
        tr = self.two_trace(lambda t: np.zeros_like(t))
        assert analysis.sync_time(tr, v_ref=1.0, omega0=OMEGA0, event_time=0.0) == 0.0

    def test_exponential_pull_in(self):
        tr = self.two_trace(lambda t: 0.5 * np.exp(-t / 0.02))
        st = analysis.sync_time(tr, threshold=0.02, v_ref=1.0, omega0=OMEGA0,
                                event_time=0.0)
        # |v1 - v2| ~ |offset|; 0.5 exp(-t/0.02) < 0.02 after ~64 ms
        assert st == pytest.approx(0.0644, abs=0.002)

    def test_never_synchronizing_flagged(self):
        tr = self.two_trace(lambda t: 0.5 * np.ones_like(t))
        assert analysis.sync_time(tr, v_ref=1.0, omega0=OMEGA0, event_time=0.0) is None

    def test_needs_two_inverters(self):
        t = np.arange(0.0, 0.01, 1e-4)
        tr = synthetic_trace(t, np.exp(1j * OMEGA0 * t)[:, None])
        with pytest.raises(ValueError):
            analysis.sync_time(tr)


class TestSteadyWindow:
    def test_settled_trace_detected(self):
        t = np.arange(0.0, 0.2, 1e-4)
        tr = synthetic_trace(t, 1.3 * np.exp(1j * OMEGA0 * t)[:, None])
        _, _, settled = analysis.steady_window(tr, OMEGA0)
        assert settled

    def test_drifting_trace_flagged(self):
        t = np.arange(0.0, 0.2, 1e-4)
        mag = 1.0 + 0.05 * t / t[-1]
        tr = synthetic_trace(t, (mag * np.exp(1j * OMEGA0 * t))[:, None])
        _, _, settled = analysis.steady_window(tr, OMEGA0)
        assert not settled


class TestStationaryMagnitude:
    def test_matches_quadratic_oracle(self):
        # kappa = pi/2 stationarity is quadratic in u = r^2:
        # (alpha/v*^2) u^2 - (q*/v*^2 + alpha) u + q = 0.
        p = PU_PARAMS
        for q in np.linspace(-0.3, 0.2, 11):
            a = p.alpha / p.v_star**2
            b = -(p.q_star / p.v_star**2 + p.alpha)
            c = q
            disc = math.sqrt(b * b - 4 * a * c)
            u = (-b + disc) / (2 * a)  # branch containing v_star at q = q*
            expected = math.sqrt(u)
            got = analysis.stationary_magnitude(p, p.p_star, q)
            assert got == pytest.approx(expected, rel=1e-12)

    def test_no_bracket_sign_change_raises(self):
        with pytest.raises(ValueError):
            analysis.stationary_magnitude(PU_PARAMS, 0.5, 5.0)


class TestDroopSweepClosedForm:
    def test_passes_through_setpoints(self):
        res_p = analysis.droop_sweep_closed_form(
            PU_PARAMS, [0.3, PU_PARAMS.p_star, 0.7], "p")
        k = 1
        assert res_p.exact.ordinate[k] == pytest.approx(OMEGA0, rel=1e-12)
        res_q = analysis.droop_sweep_closed_form(
            PU_PARAMS, [-0.2, PU_PARAMS.q_star, 0.2], "q")
        assert res_q.exact.ordinate[1] == pytest.approx(PU_PARAMS.v_star, rel=1e-12)

    def test_expected_monotonicity(self):
        res_p = analysis.droop_sweep_closed_form(PU_PARAMS,
                                                 np.linspace(0.3, 0.7, 9), "p")
        assert np.all(np.diff(res_p.exact.ordinate) < 0.0)  # omega falls with p
        res_q = analysis.droop_sweep_closed_form(PU_PARAMS,
                                                 np.linspace(-0.2, 0.2, 9), "q")
        assert np.all(np.diff(res_q.exact.ordinate) < 0.0)  # |v| falls with q

    def test_frequency_line_exact_at_nominal_reactive(self):
        # With q = q* the stationary magnitude is exactly v_star, so the
        # frequency curve coincides with the linear droop form.
        grid = np.linspace(0.45, 0.55, 11)
        res = analysis.droop_sweep_closed_form(PU_PARAMS, grid, "p")
        lin = np.array([droop_approx_freq(p, PU_PARAMS) for p in grid])
        npt.assert_allclose(res.exact.ordinate, lin, rtol=1e-12)

    def test_tangent_within_one_percent_for_small_mismatch(self):
        grid = np.linspace(-0.05, 0.05, 21)
        res = analysis.droop_sweep_closed_form(PU_PARAMS, grid, "q")
        dev = np.abs(res.exact.ordinate - res.linear.ordinate) / PU_PARAMS.v_star
        assert dev.max() < 0.01

    def test_tangent_error_quadratic_bound(self):
        # |exact - tangent| / v* < 3 (dq / (alpha v*^2))^2 over the range.
        p = PU_PARAMS
        for dq in np.linspace(-0.08, 0.08, 17):
            if dq == 0.0:
                continue
            q = p.q_star + dq
            exact = analysis.stationary_magnitude(p, p.p_star, q)
            tangent = droop_vmag_tangent_ss(q, p)
            delta = dq / (p.alpha * p.v_star**2)
            assert abs(exact - tangent) / p.v_star < 3.0 * delta**2

    def test_coarse_form_error_is_first_order(self):
        # The droop-coefficient form overshoots the exact curve by about
        # dq / (2 alpha v*), i.e. linearly in the mismatch.
        p = PU_PARAMS
        for dq in (-0.05, -0.02, 0.02, 0.05):
            q = p.q_star + dq
            exact = analysis.stationary_magnitude(p, p.p_star, q)
            coarse = droop_approx_vmag_ss(q, p)
            expected_gap = abs(dq) / (2.0 * p.alpha * p.v_star)
            assert abs(coarse - exact) == pytest.approx(expected_gap, rel=0.25)

    def test_curve_requires_increasing_abscissa(self):
        with pytest.raises(ValueError):
            analysis.DroopCurve([0.0, 0.0], [1.0, 2.0], "p", "omega", "closed_form")


class TestDroopSweepSimulated:
    def test_matches_closed_form(self):
        template = pu_scenario()
        sweep = analysis.droop_sweep_simulated(template, "p", [0.45, 0.5, 0.55])
        assert all(pt.settled for pt in sweep.points)
        for pt in sweep.points:
            cf = analysis.droop_sweep_closed_form(PU_PARAMS, [pt.p], "p")
            assert pt.omega == pytest.approx(cf.exact.ordinate[0],
                                             abs=5e-3 * OMEGA0 / 100.0)
        # load matched to the set-point lands on the nominal frequency
        mid = sweep.points[1]
        assert abs(mid.omega - OMEGA0) / (2 * math.pi) < 1e-3

    def test_reactive_actuators_cover_both_signs(self):
        template = pu_scenario()
        sweep = analysis.droop_sweep_simulated(template, "q", [-0.04, 0.04])
        qs = [pt.q for pt in sweep.points]
        assert qs[0] < -0.02 and qs[1] > 0.02
        for pt in sweep.points:
            cf = analysis.droop_sweep_closed_form(PU_PARAMS, [pt.q], "q")
            assert pt.vmag == pytest.approx(cf.exact.ordinate[0], rel=5e-3)

    def test_non_settling_point_flagged_and_excluded(self):
        template = pu_scenario(initial={"mode": "blackstart"},
                               sim={"dt_s": 2e-5, "t_end_s": 0.02,
                                    "network_model": "quasistatic",
                                    "record_decimation": 5, "noise_seed": 3})
        sweep = analysis.droop_sweep_simulated(template, "p", [0.5])
        assert not sweep.points[0].settled
        assert len(sweep.curve.abscissa) == 0


class TestConsistency:
    def symmetric_topo(self, g):
        return Topology(
            inverter_nodes=("n1", "n2"),
            branches=(Branch("b1", "n1", "bus", 0.05, 1e-4),
                      Branch("b2", "n2", "bus", 0.05, 1e-4)),
            loads={"bus": g})

    def test_zero_setpoints_zero_load(self):
        topo = Topology(inverter_nodes=("n1",),
                        branches=(Branch("b1", "n1", "bus", 1.0, 0.0),),
                        loads={"bus": 0.0})
        # amplitude fixed, open network: inject nothing
        rep = analysis.check_setpoint_consistency(topo, [(0.0, 0.0, 1.0)], OMEGA0)
        assert rep.status == "consistent"
        assert rep.residual_norm < 1e-12

    def test_forward_roundtrip_is_consistent(self):
        topo = self.symmetric_topo(0.4)
        v_stars = [1.0, 1.0]
        p, q = analysis.forward_power_flow(topo, OMEGA0, v_stars, [0.0, 0.0])
        rep = analysis.check_setpoint_consistency(
            topo, list(zip(p, q, v_stars)), OMEGA0)
        assert rep.status == "consistent"
        assert rep.residual_rel < 1e-9
        npt.assert_allclose(rep.angles, [0.0, 0.0], atol=1e-9)

    def test_asymmetric_roundtrip(self):
        topo = self.symmetric_topo(0.6)
        v_stars = [1.0, 1.1]
        angles = [0.0, 0.07]
        p, q = analysis.forward_power_flow(topo, OMEGA0, v_stars, angles)
        rep = analysis.check_setpoint_consistency(
            topo, list(zip(p, q, v_stars)), OMEGA0)
        assert rep.status == "consistent"
        assert rep.residual_rel < 1e-9
        npt.assert_allclose(rep.angles, angles, atol=1e-8)

    def test_surplus_generation_inconsistent(self):
        # Both inverters demand 0.5 pu into a 0.5 pu load: total set-point
        # generation exceeds what any angle configuration can absorb.
        topo = self.symmetric_topo(0.5)
        rep = analysis.check_setpoint_consistency(
            topo, [(0.5, 0.0, 1.0), (0.5, 0.0, 1.0)], OMEGA0)
        assert rep.status == "inconsistent"
        assert rep.residual_rel > 1e-3
