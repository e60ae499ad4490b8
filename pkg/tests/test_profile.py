import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from modwave.eikonal import EikonalConfig, invert_q, optical_field
from modwave.errors import InputDomainError, UnsupportedOperationError
from modwave.model import Metric
from modwave.profile import (ProfileEvaluator, default_T_R, eikonal_leading_terms, eikonal_residual, eta,
                             eval_U, eval_u_app, pde_residual, profile_jet, psi, scattering_identity_residual,
                             smoothstep)
from modwave.reduced import AsymptoticState

from conftest import make_evaluator, make_state


class TestCutoffs:
    @given(st.floats(0.75, 1.25))
    def test_psi_plateau(self, x):
        assert psi(x) == 1.0

    @given(st.one_of(st.floats(0.0, 0.5), st.floats(1.5, 10.0)))
    def test_psi_outside(self, x):
        assert psi(x) == 0.0

    @given(st.floats(0.0, 1.0))
    def test_eta_ranges(self, y):
        assert eta(20.0 * y, 20.0) == 0.0
        assert eta(40.0 + 100.0 * y, 20.0) == 1.0

    def test_smoothstep_derivatives(self):
        y = np.linspace(0.05, 0.95, 19)
        h = 1e-6
        for k in (0, 1):
            fd = (smoothstep(y + h, k) - smoothstep(y - h, k)) / (2 * h)
            assert np.allclose(fd, smoothstep(y, k + 1), atol=1e-7)
        assert smoothstep(0.5) == 0.5

    def test_default_T_R(self):
        assert default_T_R(1.0, 0.05, 0.1) == 20.0
        assert default_T_R(1.0, 0.5, 0.1) == pytest.approx(max(4.0, math.exp(0.4)))
        assert default_T_R(8.0, 0.05, 0.1) == 32.0

    def test_bad_band(self):
        with pytest.raises(InputDomainError):
            ProfileEvaluator(EikonalConfig(), make_state(), psi_band=(0.5, 1.3, 1.2, 1.5))


class TestProfileValues:
    def test_U_vanishes_inside(self, ev):
        assert eval_U(ev, 100.0, 98.5) == 0.0

    def test_U_constant_outside(self, ev):
        t = 300.0
        r = invert_q(ev.cfg, ev.state, t, 2.0)
        s = ev.cfg.s(t)
        assert eval_U(ev, t, r) == pytest.approx(float(ev.state.U(s, ev.state.R)), abs=1e-13)

    def test_zero_data(self, ev_zero):
        r = np.linspace(50, 150, 11)
        assert np.all(eval_U(ev_zero, 100.0, r) == 0.0)
        assert np.all(eval_u_app(ev_zero, 100.0, r) == 0.0)

    def test_u_app_before_switch_on(self, ev):
        assert eval_u_app(ev, 0.9 * ev.T_R, 0.9 * ev.T_R) == 0.0

    @given(st.floats(-0.25, 0.25), st.floats(40.0, 2000.0))
    @settings(max_examples=20)
    def test_u_app_plateau(self, x, t):
        ev = make_evaluator()
        r = t * (1.0 + x)
        expect = ev.cfg.epsilon / r * eval_U(ev, t, r)
        assert eval_u_app(ev, t, r) == pytest.approx(expect, rel=1e-14, abs=1e-300)

    def test_u_app_support(self, ev):
        t = 200.0
        r = np.concatenate([np.linspace(0.0, t - ev.state.R, 50), np.linspace(1.5 * t, 3 * t, 50)])
        assert np.all(eval_u_app(ev, t, r) == 0.0)

    def test_jet_matches_evaluators(self, ev):
        t, r = 150.0, 150.0 + np.linspace(-0.9, 3.0, 13)
        jet = profile_jet(ev, t, r)
        assert np.allclose(jet.u, eval_u_app(ev, t, r), rtol=1e-11, atol=0)


class TestDerivatives:
    def test_first_derivatives(self, ev):
        t, r, h = 37.0, 36.7 + np.linspace(0, 2, 9), 1e-5
        jet = profile_jet(ev, t, r)
        u = lambda a, b: profile_jet(ev, a, b).u
        assert np.allclose(jet.u_t, (u(t + h, r) - u(t - h, r)) / (2 * h), atol=1e-10)
        assert np.allclose(jet.u_r, (u(t, r + h) - u(t, r - h)) / (2 * h), atol=1e-10)

    def test_second_derivatives(self, ev):
        t, r, h = 37.0, 36.7 + np.linspace(0, 2, 9), 1e-4
        jet = profile_jet(ev, t, r)
        j = lambda a, b: profile_jet(ev, a, b)
        u_tt = (j(t + h, r).u_t - j(t - h, r).u_t) / (2 * h)
        u_rr = (j(t, r + h).u_r - j(t, r - h).u_r) / (2 * h)
        assert np.allclose(jet.u_tt, u_tt, atol=1e-9)
        assert np.allclose(jet.lap, u_rr + 2 * jet.u_r / r, atol=1e-9)

    def test_gradient_decay(self, ev):
        ts = np.geomspace(100, 1e4, 6)
        sup = []
        for t in ts:
            jet = profile_jet(ev, t, t + np.linspace(-1, 3, 200))
            sup.append(np.max(np.hypot(jet.u_t, jet.u_r)))
        slope = np.polyfit(np.log(ts), np.log(sup), 1)[0]
        assert abs(slope + 1.0) <= 0.1


class TestResiduals:
    def test_zero_data(self, ev_zero):
        t, r = 200.0, np.linspace(190, 215, 7)
        assert np.all(scattering_identity_residual(ev_zero, t, r) == 0.0)
        assert np.all(eikonal_residual(ev_zero, t, r) == 0.0)
        assert np.max(np.abs(pde_residual(ev_zero, t, r))) <= 1e-12
        assert np.max(np.abs(pde_residual(ev_zero, t, r, method="fd"))) <= 1e-12

    def test_scattering_residual_against_differences(self, ev, rng):
        t = rng.uniform(50, 400, 20)
        r = t + rng.uniform(-0.95, 0.95, 20)
        exact = scattering_identity_residual(ev, t, r)
        psiA = 2 * ev.cfg.epsilon * psi(r / t) * ev.state.A(optical_field(ev.cfg, ev.state, t, r).q) / r
        errs = []
        for h in (2e-3, 1e-3):
            u = lambda a, b: eval_u_app(ev, a, b)
            d = ((u(t + h, r) - u(t - h, r)) - (u(t, r + h) - u(t, r - h))) / (2 * h)
            errs.append(np.max(np.abs(d + psiA - exact)))
        assert math.log2(errs[0] / errs[1]) >= 1.9

    def test_scattering_residual_decay(self, ev):
        ts = np.geomspace(100, 1e4, 6)
        sup = []
        for t in ts:
            r = np.array([invert_q(ev.cfg, ev.state, t, q) for q in np.linspace(-1, 1, 21)])
            sup.append(np.max(np.abs(scattering_identity_residual(ev, t, r))))
        slope = np.polyfit(np.log(ts), np.log(sup), 1)[0]
        assert abs(slope + 2.0) <= 0.25

    def test_leading_terms(self, ev):
        t = 1e4
        r = np.array([invert_q(ev.cfg, ev.state, t, q) for q in (-0.5, 0.0, 0.5)])
        full = eikonal_residual(ev, t, r)
        lead = eikonal_leading_terms(ev, t, r)
        assert np.all(np.abs(full - lead) <= 0.2 * np.abs(full))

    def test_general_metric_residual(self):
        g = np.diag([0.0, 2.0, 2.0, 2.0])
        st_ = AsymptoticState.from_metric(Metric.general(g), make_state().data)
        ev = ProfileEvaluator(EikonalConfig(), st_, metric=Metric.general(g))
        assert np.isfinite(eikonal_residual(ev, 500.0, 500.2))
        with pytest.raises(UnsupportedOperationError):
            pde_residual(ev, 500.0, 500.2)

    def test_pde_residual_methods_agree(self, ev):
        # the sup over r sits in the outer cutoff region; near q = 0 both are at roundoff
        t, r = 1000.0, np.linspace(999.0, 1500.0, 400)
        a = pde_residual(ev, t, r)
        b = pde_residual(ev, t, r, method="fd")
        assert np.max(np.abs(a - b)) <= 1e-2 * np.max(np.abs(a))

    def test_pde_residual_step_halving(self):
        ev = make_evaluator(epsilon=0.02)
        ev2 = ProfileEvaluator(ev.cfg, ev.state, fd_step=ev.fd_step / 2)
        t, r = 1000.0, np.linspace(999.0, 1500.0, 400)
        a, b = pde_residual(ev, t, r, method="fd"), pde_residual(ev2, t, r, method="fd")
        assert np.max(np.abs(a - b)) <= 0.01 * np.max(np.abs(b))

    def test_pde_residual_bounded_relative_to_t2(self, ev):
        vals = []
        for t in (200.0, 800.0, 3200.0):
            r = t + np.linspace(-0.9, 0.9, 15)
            vals.append(np.max(np.abs(pde_residual(ev, t, r))) / (ev.cfg.epsilon / t**2))
        assert max(vals) < 1.0

    def test_pde_residual_domain(self, ev):
        with pytest.raises(InputDomainError):
            pde_residual(ev, 10.0, 0.0)
        with pytest.raises(InputDomainError):
            pde_residual(ev, 10.0, 10.0, method="spectral")
