import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.integrate import solve_ivp

from modwave.eikonal import (EikonalConfig, invert_q, lambda_fd, optical_field, refined_nu_residual,
                             solve_nu, solve_q, write_samples_csv)
from modwave.errors import InputDomainError
from modwave.model import AngularFactor, Metric, ScatteringData, make_profile
from modwave.reduced import AsymptoticState

from conftest import make_state

CFG = EikonalConfig(0.05, 0.1)


def oracle_q(cfg, state, t, r, tol=1e-13):
    """Characteristic from the axis: z = -(t + r) at tau = t + r, integrated down to tau = t."""
    def rhs(tau, z):
        return [float(state.mu(cfg.s(tau), z[0]))]

    sol = solve_ivp(rhs, (t + r, t), [-(t + r)], method="RK45", rtol=tol, atol=tol, max_step=0.5)
    return sol.y[0, -1]


class TestConfig:
    @pytest.mark.parametrize("kw", [{"epsilon": 0.0}, {"epsilon": 1.0}, {"delta": 0.0}, {"delta": 1.5}])
    def test_ranges(self, kw):
        with pytest.raises(InputDomainError):
            EikonalConfig(**kw)


class TestOpticalFunction:
    def test_zero_data_is_flat(self, zero_state):
        t = np.array([30.0, 100.0, 500.0])
        f = optical_field(CFG, zero_state, t, t + 0.3)
        assert np.array_equal(f.q, 0.3 + 0 * t) or np.allclose(f.q, 0.3, atol=1e-13)
        assert np.all(f.nu == 0.0)

    @given(st.floats(10.0, 1e4), st.floats(0.0, 1.0))
    @settings(max_examples=25)
    def test_exact_region(self, t, frac):
        st_ = make_state()
        r = frac * (t - st_.R)
        f = optical_field(CFG, st_, t, r)
        assert f.q == r - t
        assert f.nu == 0.0 and f.nu_r == 0.0

    def test_matches_full_range_oracle(self, bump_state):
        for t, r in [(40.0, 39.5), (100.0, 100.2), (300.0, 301.5), (1000.0, 1000.0)]:
            q = solve_q(CFG, bump_state, t, r).q
            assert abs(q - oracle_q(CFG, bump_state, t, r)) <= 1e-9

    def test_sample_identities(self, bump_state):
        s = solve_q(CFG, bump_state, 200.0, 200.3)
        assert s.q_t == 0.5 * (s.mu + s.nu)
        assert s.q_r == 0.5 * (s.nu - s.mu)
        assert s.t1 == 0.5 * (200.0 + 200.3 + bump_state.R)
        assert s.mu < 0 and s.q_r > 0
        assert np.all(s.lam == 0.0)

    def test_exit_time_and_sentinel(self, bump_state):
        inner = solve_q(CFG, bump_state, 100.0, 99.5)
        outer = solve_q(CFG, bump_state, 100.0, 110.0)
        assert inner.t0 == math.inf
        assert outer.t0 < 100.0 + 10.0 and outer.q == pytest.approx(bump_state.R + 2 * (outer.t0 - 100.0))

    def test_monotone_in_r(self, bump_state):
        r = np.linspace(95.0, 110.0, 1501)
        assert np.all(np.diff(optical_field(CFG, bump_state, 100.0, r).q) > 0)

    def test_continuous_across_exit(self, bump_state):
        # locate r where the characteristic just reaches q = R at tau = t
        t = 150.0
        r0 = invert_q(CFG, bump_state, t, bump_state.R)
        d = 1e-7
        f = optical_field(CFG, bump_state, t, np.array([r0 - d, r0, r0 + d]))
        assert abs(f.q[2] - f.q[0] - 2 * d * f.q_r[1]) <= 1e-9

    def test_nu_matches_difference_quotient(self, bump_state):
        t, r, h = 120.0, 120.4, 1e-4
        q = lambda a, b: float(optical_field(CFG, bump_state, a, b).q)
        fd = (q(t + h, r + h) - q(t - h, r - h)) / (2 * h)
        assert solve_nu(CFG, bump_state, t, r) == pytest.approx(fd, abs=1e-8)

    def test_nu_r_matches_difference_quotient(self, bump_state):
        t, r, h = 120.0, np.array([119.6, 120.4, 121.0]), 1e-4
        f = optical_field(CFG, bump_state, t, r)
        fd = (optical_field(CFG, bump_state, t, r + h).nu - optical_field(CFG, bump_state, t, r - h).nu) / (2 * h)
        assert np.allclose(f.nu_r, fd, atol=1e-8)

    def test_domain(self, bump_state):
        with pytest.raises(InputDomainError):
            optical_field(CFG, bump_state, 0.0, 1.0)
        with pytest.raises(InputDomainError):
            optical_field(CFG, bump_state, 1.0, -1.0)

    def test_drift_grows_slowly(self, bump_state):
        # the drift is proportional to the slow time s = eps ln t - delta; its
        # log-log slope only settles below 0.2 once s is well away from zero
        ts = np.geomspace(400, 1e5, 7)
        drift = []
        for t in ts:
            r = t + np.linspace(-1, 20, 400)
            drift.append(np.max(np.abs(optical_field(CFG, bump_state, t, r).q - (r - t))))
        slope = np.polyfit(np.log(ts), np.log(drift), 1)[0]
        assert slope < 0.2
        ratio = np.array(drift) / CFG.s(ts)
        assert np.ptp(ratio) < 0.05 * ratio.mean()

    def test_samples_csv(self, bump_state, tmp_path):
        f = optical_field(CFG, bump_state, 100.0, np.array([98.0, 100.0, 103.0]))
        write_samples_csv(tmp_path / "s.csv", f)
        lines = (tmp_path / "s.csv").read_text().splitlines()
        assert lines[0] == "t,r,q,nu,mu,q_t,q_r,t0,t1" and len(lines) == 4


class TestRefinedNu:
    def test_zero_data(self, zero_state):
        assert refined_nu_residual(CFG, zero_state, 100.0, 100.5) == 0.0

    def test_correction_captures_leading_term(self, bump_state):
        r = 1000.0 + np.linspace(-0.9, 0.9, 19)
        nu = np.abs(solve_nu(CFG, bump_state, 1000.0, r))
        ref = np.abs(refined_nu_residual(CFG, bump_state, 1000.0, r))
        assert np.all(ref <= nu)


class TestLambda:
    def test_zero_for_isotropic_data(self, bump_state):
        assert np.all(lambda_fd(CFG, bump_state, 100.0, 100.0) == 0.0)

    def test_angular_data(self):
        data = ScatteringData(make_profile("bump"), angular=AngularFactor(0.5, (1.0, 0.0, 0.0)))
        state = AsymptoticState.from_metric(Metric.sound_speed(1.0), data)
        omega = (0.6, 0.0, 0.8)
        cfg = EikonalConfig(0.05, 0.1, omega=omega)
        vals = [lambda_fd(cfg, state, 200.0, 200.3, step=h) for h in (4e-3, 2e-3, 1e-3)]
        assert np.linalg.norm(vals[-1]) > 0
        assert abs(np.dot(vals[-1], omega)) <= 1e-12
        e1, e2 = np.linalg.norm(vals[0] - vals[1]), np.linalg.norm(vals[1] - vals[2])
        assert math.log2(e1 / e2) >= 1.9


class TestInvert:
    def test_flat(self, zero_state):
        assert invert_q(CFG, zero_state, 100.0, 0.0) == pytest.approx(100.0, abs=1e-9)

    def test_exact_region(self, bump_state):
        assert invert_q(CFG, bump_state, 100.0, 50.0 - 100.0) == 50.0

    @pytest.mark.parametrize("target", [-1.0, 0.0, 0.7, 3.0])
    def test_round_trip(self, bump_state, target):
        r = invert_q(CFG, bump_state, 300.0, target)
        assert abs(float(optical_field(CFG, bump_state, 300.0, r).q) - target) <= 1e-10

    def test_below_axis_rejected(self, bump_state):
        with pytest.raises(InputDomainError):
            invert_q(CFG, bump_state, 10.0, -11.0)
