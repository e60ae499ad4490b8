import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from modwave.errors import InputDomainError
from modwave.model import GeneralReducedModel, ScatteringData, make_profile
from modwave.reduced import (AsymptoticState, GeneralReducedState, Uq_closed, U_closed, Us_closed,
                             integrate_general_reduced, integrate_reduced_ode, mu_closed, steepest_point,
                             write_trajectory_csv)

from conftest import make_state

# high-precision quadrature values for the standard bump, R = 1, G = -2
BUMP_MASS = 0.443993816168079437823
U_S1_Q0 = 0.300457798710135851699
US_S1_R = 0.183539289222015196070

s_vals = st.floats(0.0, 3.0)
q_vals = st.floats(-3.0, 3.0)


class TestClosedForms:
    @given(q_vals)
    def test_initial_gauge(self, q):
        assert mu_closed(make_state(), 0.0, q) == -2.0

    @given(s_vals, st.floats(1.0, 4.0))
    def test_outside_support_mu(self, s, q):
        assert mu_closed(make_state(), s, q) == -2.0
        assert Uq_closed(make_state(), s, q) == 0.0

    def test_substitution(self, bump_state):
        # G A(q) = -1 at the centre once the amplitude is e / 2
        st_ = make_state(amplitude=math.e / 2.0)
        assert st_.G * st_.A(0.0) == pytest.approx(-1.0)
        assert mu_closed(st_, 2.0, 0.0) == pytest.approx(-2.0 * math.exp(-1.0), abs=1e-15)

    @given(s_vals, q_vals)
    def test_conservation(self, s, q):
        st_ = make_state()
        assert mu_closed(st_, s, q) * Uq_closed(st_, s, q) == pytest.approx(-2.0 * st_.A(q), abs=1e-12)

    @given(s_vals, q_vals)
    def test_mu_negative(self, s, q):
        assert mu_closed(make_state(), s, q) < 0

    def test_Uq_initial(self, bump_state):
        q = np.linspace(-1, 1, 11)
        assert np.array_equal(Uq_closed(bump_state, 0.0, q), bump_state.A(q))


class TestProfileIntegral:
    def test_vanishes_left(self, bump_state):
        assert U_closed(bump_state, 0.7, -1.0) == 0.0
        assert Us_closed(bump_state, 0.7, -2.0) == 0.0

    def test_mass(self, bump_state):
        assert U_closed(bump_state, 0.0, 1.0) == pytest.approx(BUMP_MASS, abs=1e-10)
        assert U_closed(bump_state, 0.0, 5.0) == pytest.approx(BUMP_MASS, abs=1e-10)

    def test_generic_value(self, bump_state):
        assert U_closed(bump_state, 1.0, 0.0) == pytest.approx(U_S1_Q0, abs=1e-10)
        assert Us_closed(bump_state, 1.0, 3.0) == pytest.approx(US_S1_R, abs=1e-10)

    def test_scales_with_R_and_amplitude(self):
        st_ = make_state(R=2.0, amplitude=3.0)
        assert U_closed(st_, 0.0, 2.0) == pytest.approx(6.0 * BUMP_MASS, abs=1e-9)

    def test_Us_vanishes_without_nonlinearity(self):
        st_ = make_state(c_prime0=0.0)
        assert Us_closed(st_, 1.3, 0.2) == 0.0

    def test_Us_matches_difference_quotient(self, bump_state):
        h = 1e-4
        for s, q in [(0.5, -0.3), (1.2, 0.4), (2.0, 2.0)]:
            fd = (U_closed(bump_state, s + h, q) - U_closed(bump_state, s - h, q)) / (2 * h)
            assert Us_closed(bump_state, s, q) == pytest.approx(fd, abs=1e-8)

    @given(st.floats(0.0, 2.5), st.floats(-1.2, 1.2))
    def test_vectorized_matches_reference(self, s, q):
        st_ = make_state()
        assert float(st_.U(s, q)) == pytest.approx(U_closed(st_, s, q), abs=1e-10)
        assert float(st_.Us(s, q)) == pytest.approx(Us_closed(st_, s, q), abs=1e-10)

    @pytest.mark.parametrize("name", ["bump", "sine_bump", "spline"])
    def test_cumulative_family_matches_pointwise(self, name):
        st_ = make_state(profile=name)
        q = np.sort(np.random.default_rng(1).uniform(-1.5, 1.5, 200))
        fam = st_.U_family_at_s(0.8, q)
        ref = st_.U_family(np.full_like(q, 0.8), q)
        assert np.max(np.abs(np.asarray(fam) - np.asarray(ref))) <= 1e-12

    @given(st.floats(0.0, 3.0))
    def test_nondecreasing_in_q(self, s):
        q = np.linspace(-1.5, 1.5, 301)
        U = make_state().U(s, q)
        assert np.all(np.diff(U) >= -1e-15)

    @given(s_vals, st.floats(1.0, 5.0))
    def test_support(self, s, q):
        st_ = make_state()
        assert mu_closed(st_, s, q) + 2.0 == 0.0
        assert float(st_.Us(s, -q)) == 0.0
        assert float(st_.U(s, q)) == float(st_.U(s, 1.0))


class TestReducedODE:
    def test_matches_closed_forms(self, bump_state):
        q = np.linspace(-1.5, 1.5, 201)
        tr = integrate_reduced_ode(bump_state, 3.0, 3000, q)
        S = tr.s[:, None]
        assert np.max(np.abs(tr.mu - mu_closed(bump_state, S, q))) <= 1e-8
        assert np.max(np.abs(tr.Uq - Uq_closed(bump_state, S, q))) <= 1e-8
        assert np.max(np.abs(tr.mu * tr.Uq + 2.0 * bump_state.A(q))) <= 1e-10

    def test_fourth_order(self):
        st_ = make_state(amplitude=4.0)
        q = np.linspace(-1, 1, 41)
        errs = []
        for n in (20, 40):
            tr = integrate_reduced_ode(st_, 3.0, n, q)
            errs.append(np.max(np.abs(tr.mu[-1] - mu_closed(st_, 3.0, q))))
        assert math.log2(errs[0] / errs[1]) >= 3.8

    def test_zero_data_fixed_point(self, zero_state):
        tr = integrate_reduced_ode(zero_state, 2.0, 10, np.linspace(-1, 1, 5))
        assert np.all(tr.mu == -2.0) and np.all(tr.Uq == 0.0)

    def test_bad_arguments(self, bump_state):
        with pytest.raises(InputDomainError):
            integrate_reduced_ode(bump_state, 0.0, 10, [0.0])
        with pytest.raises(InputDomainError):
            integrate_reduced_ode(bump_state, 1.0, 0, [0.0])

    def test_trajectory_csv(self, bump_state, tmp_path):
        tr = integrate_reduced_ode(bump_state, 1.0, 4, np.linspace(-1.5, 1.5, 7))
        path = tmp_path / "traj.csv"
        write_trajectory_csv(path, tr)
        lines = path.read_text().splitlines()
        assert lines[0] == "s,q,mu,Uq,U"
        assert len(lines) == 1 + 5 * 7


def blowup_setup(n_q=2401):
    data = ScatteringData(make_profile("bump"))
    qs = steepest_point(data)
    slope = float(data.A(np.array(qs), (0.0, 0.0, 1.0), 1))
    model = GeneralReducedModel(G3=2.0 / slope)
    return GeneralReducedState.build(model, data, n_q=n_q, anchor=qs), qs


class TestGeneralSystem:
    def test_stationary(self):
        data = ScatteringData(make_profile("bump"))
        state = GeneralReducedState.build(GeneralReducedModel(), data, n_q=201)
        tr, rep = integrate_general_reduced(state, 2.0, 0.05)
        assert not rep.blowup
        assert np.all(tr.mu == -2.0)
        assert np.allclose(tr.Uq, data.A(state.q, (0.0, 0.0, 1.0)), atol=0)

    def test_blowup_profile_and_time(self):
        state, qs = blowup_setup()
        tr, rep = integrate_general_reduced(state, 3.0, 1e-3)
        k = int(np.argmin(np.abs(state.q - qs)))
        early = tr.s <= 0.9
        exact = 1.0 / (0.5 * tr.s[early] - 0.5)
        assert np.max(np.abs(tr.mu[early, k] - exact)) <= 1e-6
        assert rep.blowup
        assert rep.s_blowup == pytest.approx(1.0, rel=0.05)

    def test_conserved_product_before_blowup(self):
        state, _ = blowup_setup(n_q=401)
        tr, rep = integrate_general_reduced(state, 0.9, 1e-3)
        prod = tr.mu * tr.Uq
        assert np.max(np.abs(prod - prod[0])) <= 1e-8

    def test_boundary_values_fixed(self):
        state, _ = blowup_setup(n_q=401)
        tr, _ = integrate_general_reduced(state, 0.8, 1e-3)
        assert np.all(tr.mu[:, 0] == -2.0) and np.all(tr.mu[:, -1] == -2.0)

    def test_coarse_grid_rejected(self):
        data = ScatteringData(make_profile("bump"))
        with pytest.raises(InputDomainError):
            GeneralReducedState.build(GeneralReducedModel(), data, n_q=20)
