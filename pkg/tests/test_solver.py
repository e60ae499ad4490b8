import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from modwave.errors import ContractViolationError, InputDomainError, UnsupportedOperationError
from modwave.eikonal import EikonalConfig
from modwave.model import Metric
from modwave.profile import ProfileEvaluator
from modwave.reduced import AsymptoticState
from modwave.analysis import radial_integral, refinement_difference
from modwave.solver import (RECORD_RATIO, RadialField, RadialGrid, SolveConfig, app_terms, backward_solve, chi,
                            forward_solve, read_slices, record_times_for, residual_check, support_leak, write_slices)

from conftest import make_evaluator, make_state


@pytest.fixture(scope="module")
def small_run(ev):
    return backward_solve(SolveConfig(25.0, ev, h=0.05))


@pytest.fixture(scope="module")
def fine_run(ev):
    return backward_solve(SolveConfig(25.0, ev, h=0.025, record_times=(37.5, 20.0)))


@pytest.fixture(scope="module")
def null_run(ev_zero):
    return backward_solve(SolveConfig(25.0, ev_zero, h=0.05))


class TestCutoff:
    def test_values(self):
        assert chi(0.0) == 1.0 and chi(1.0) == 1.0
        assert chi(2.0) == 0.0 and chi(3.0) == 0.0
        assert chi(1.5) == 0.5

    @given(st.floats(-5, 5))
    def test_even_and_bounded(self, x):
        assert chi(x) == chi(-x)
        assert 0.0 <= chi(x) <= 1.0


class TestConfig:
    def test_record_times(self):
        ts = record_times_for(50.0, 20.0)
        assert ts[0] == 100.0 and ts[-1] == 20.0
        assert all(a / b == pytest.approx(RECORD_RATIO) for a, b in zip(ts[:-2], ts[1:-1]))
        assert 25.0 == pytest.approx(ts[8])

    def test_defaults(self, ev):
        cfg = SolveConfig(50.0, ev)
        assert cfg.t_min == ev.T_R
        assert cfg.h == 0.025
        assert cfg.r_max >= 6 * 50.0 + 4.0
        assert cfg.record_times[0] == 100.0

    @pytest.mark.parametrize("kw", [dict(h=0.1), dict(cfl=1.5), dict(cfl=0.0), dict(r_max=200.0), dict(T=15.0),
                                    dict(record_times=(10.0,))])
    def test_rejects(self, ev, kw):
        args = dict(T=50.0) | kw
        with pytest.raises(InputDomainError):
            SolveConfig(ev=ev, **args)

    def test_general_metric(self):
        m = Metric.general(np.diag([0.0, 2.0, 2.0, 2.0]))
        ev = ProfileEvaluator(EikonalConfig(), AsymptoticState.from_metric(m, make_state().data), metric=m)
        with pytest.raises(UnsupportedOperationError):
            SolveConfig(50.0, ev)

    def test_grid(self):
        with pytest.raises(InputDomainError):
            RadialGrid(0.03, 1.0)
        g = RadialGrid(0.25, 1.0)
        assert g.n == 5 and np.allclose(g.r, [0, 0.25, 0.5, 0.75, 1.0])
        with pytest.raises(ContractViolationError):
            RadialField(g, np.zeros(4), 1.0)
        with pytest.raises(ContractViolationError):
            RadialField(g, np.array([0, 0, np.nan, 0, 0]), 1.0)


class TestNullData:
    def test_vanishes(self, null_run):
        for sl in null_run.slices:
            assert np.max(np.abs(sl.v.values)) <= 1e-12
            assert np.max(np.abs(sl.v_t.values)) <= 1e-12

    def test_support_leak_zero(self, null_run):
        assert all(support_leak(null_run.cfg, sl) == 0.0 for sl in null_run.slices)


class TestGenericRun:
    def test_records(self, small_run):
        assert small_run.times == list(small_run.cfg.record_times)
        assert small_run.at(50.0).t == 50.0
        with pytest.raises(KeyError):
            small_run.at(33.0)

    def test_final_state_zero(self, small_run):
        sl = small_run.at(50.0)
        assert not np.any(sl.v.values) and not np.any(sl.v_t.values)

    def test_certificate(self, small_run):
        c = small_run.certificate
        assert c.finite and c.steps > 0
        assert 1.0 <= c.max_c <= c.c_bound
        assert c.dt <= small_run.cfg.cfl * small_run.cfg.h / c.c_bound * (1 + 1e-12)
        assert [t for t, _ in c.max_abs_v] == small_run.times

    def test_boundary_and_nontrivial(self, small_run):
        sl = small_run.at(20.0)
        assert sl.v.values[0] == 0.0 and sl.v.values[-1] == 0.0
        assert np.max(np.abs(sl.v.values)) > 1e-5

    def test_residual_at_final_time_is_profile_residual(self, small_run, ev):
        # v = 0 and chi = 0 at t = 2T, so the check reduces to the u_app residual on the band
        cfg, sl = small_run.cfg, small_run.at(50.0)
        r = sl.grid.r
        _, res, _ = app_terms(ev, 50.0, r)
        sel = (r >= 50.0 - ev.state.R) & (r <= 6 * cfg.T - 50.0)
        assert residual_check(cfg, sl) == np.max(np.abs(res[sel]))

    def test_residual_with_partial_source(self, fine_run, ev):
        # t = 1.5T: the scheme's truncation is negligible next to (1 - chi) times the u_app residual
        cfg, sl = fine_run.cfg, fine_run.at(37.5)
        r = sl.grid.r
        _, res, _ = app_terms(ev, 37.5, r)
        sel = (r >= 37.5 - ev.state.R) & (r <= 6 * cfg.T - 37.5)
        expect = (1.0 - chi(1.5)) * np.max(np.abs(res[sel]))
        assert residual_check(cfg, sl) == pytest.approx(expect, rel=1e-3)

    def test_time_reversal(self, small_run, fine_run):
        # evolving the last slice forward returns the zero state at 2T well inside the truncation error
        cfg = small_run.cfg
        start = small_run.at(20.0)
        end = forward_solve(cfg, start)
        trunc = refinement_difference(start, fine_run.at(20.0))
        size = math.sqrt(radial_integral(end.v.values**2, cfg.grid))
        assert end.t == 50.0
        assert size <= 10.0 * trunc
        assert size <= 1e-6 * math.sqrt(radial_integral(start.v.values**2, cfg.grid))

    def test_forward_domain(self, small_run):
        with pytest.raises(InputDomainError):
            forward_solve(small_run.cfg, small_run.slices[1], 30.0)

    def test_support_is_nearly_confined(self, small_run):
        # the exact cone is violated only by the scheme's O(h^2) dispersion tail
        assert all(support_leak(small_run.cfg, sl) < 1e-3 for sl in small_run.slices)

    def test_deterministic(self, small_run, ev):
        again = backward_solve(SolveConfig(25.0, ev, h=0.05))
        for a, b in zip(small_run.slices, again.slices):
            assert np.array_equal(a.v.values, b.v.values)
            assert np.array_equal(a.v_t.values, b.v_t.values)

    def test_round_trip(self, small_run, tmp_path):
        write_slices(small_run, tmp_path)
        manifest, slices = read_slices(tmp_path)
        assert manifest["T"] == 25.0 and manifest["times"] == small_run.times
        for a, b in zip(small_run.slices, slices):
            assert a.t == b.t
            assert np.array_equal(a.v.values, b.v.values)
            assert np.array_equal(a.v_t.values, b.v_t.values)

    def test_read_missing(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            read_slices(tmp_path / "nothing")


class TestConvergence:
    def test_residual_decreases_under_refinement(self, small_run, fine_run):
        coarse_res = residual_check(small_run.cfg, small_run.at(20.0))
        fine_res = residual_check(fine_run.cfg, fine_run.at(20.0))
        assert fine_res < 0.75 * coarse_res

    @pytest.mark.xfail(strict=True, reason="pre-asymptotic: the bump's edge layers give ratios near 2 at "
                                           "desk resolutions; see the decisions ledger")
    def test_residual_second_order(self, ev):
        vals = []
        for h in (0.05, 0.025):
            res = backward_solve(SolveConfig(50.0, ev, h=h, record_times=(25.0,)))
            vals.append(residual_check(res.cfg, res.at(25.0)))
        assert 3.0 <= vals[0] / vals[1] <= 5.0
