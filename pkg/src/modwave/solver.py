"""Radial finite-difference solver for the backward problem for v = u - u_app.

With ``u = u_app + v`` and ``c(u) = 1 + c' u`` the unknown solves

    v_tt - c(u)^2 Lap v = -chi(t / T) (u_app_tt - c(u)^2 Lap u_app),   v = v_t = 0 at t = 2T,

integrated backward in time.  The radial Laplacian is handled in the form
``Lap v = w_rr / r`` with ``w = r v`` (second-order central differences,
``w(0) = 0``), and time stepping is classical RK4 on ``(w, w_t)``.

The time step is ``dt = 2h / N`` with integer ``N``, so every RK4 stage time
lies on a lattice of spacing ``h / N`` that is aligned with ``rho = t + r``.
Incoming characteristics are therefore shared between stage times and are
advanced in lockstep by :class:`CharacteristicTracker` rather than integrated
from scratch at every stage.
"""

from __future__ import annotations

import csv
import json
import math
import os
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from numba import njit

from .eikonal import OpticalField, characteristic_rhs, optical_field
from .errors import ContractViolationError, InputDomainError, NumericalError, UnsupportedOperationError
from .model import MetricKind
from .profile import ProfileEvaluator, U_family, eta, profile_jet, smoothstep

RECORD_RATIO = 2.0 ** 0.25


def chi(x):
    """Even cutoff: 1 for |x| <= 1, 0 for |x| >= 2, quintic smoothstep in between."""
    x = np.abs(np.asarray(x, dtype=float))
    out = smoothstep(2.0 - x)
    return float(out) if out.ndim == 0 else out


# ---------------------------------------------------------------------------
# grid, fields, configuration


@dataclass(frozen=True)
class RadialGrid:
    h: float
    r_max: float

    def __post_init__(self):
        if not (self.h > 0 and self.r_max > 0):
            raise InputDomainError("grid spacing and extent must be positive")
        n = self.r_max / self.h
        if abs(n - round(n)) > 1e-9 * max(1.0, n):
            raise InputDomainError("r_max must be an integer multiple of h")

    @property
    def n(self) -> int:
        return int(round(self.r_max / self.h)) + 1

    @property
    def r(self) -> np.ndarray:
        return np.arange(self.n) * self.h

    def compatible(self, other: "RadialGrid") -> bool:
        return math.isclose(self.h, other.h, rel_tol=1e-12)


@dataclass
class RadialField:
    grid: RadialGrid
    values: np.ndarray
    t: float

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (self.grid.n,):
            raise ContractViolationError("field length does not match the grid")
        if not np.all(np.isfinite(self.values)):
            raise ContractViolationError("field has non-finite entries")


@dataclass(frozen=True)
class Slice:
    """Recorded state (v, v_t) at one time."""

    v: RadialField
    v_t: RadialField

    @property
    def t(self) -> float:
        return self.v.t

    @property
    def grid(self) -> RadialGrid:
        return self.v.grid


def record_times_for(T: float, t_min: float, ratio: float = RECORD_RATIO) -> list:
    """2T * ratio^-k for k = 0, 1, ... down to t_min, with t_min itself appended."""
    times = []
    k = 0
    while True:
        t = 2.0 * T * ratio ** (-k)
        if t < t_min * (1.0 + 1e-12):
            break
        times.append(t)
        k += 1
    if not times or abs(times[-1] - t_min) > 1e-9 * t_min:
        times.append(float(t_min))
    return times


@dataclass(frozen=True)
class SolveConfig:
    T: float
    ev: ProfileEvaluator
    t_min: Optional[float] = None
    cfl: float = 0.4
    h: Optional[float] = None
    r_max: Optional[float] = None
    record_times: Optional[tuple] = None

    def __post_init__(self):
        R = self.ev.state.R
        if self.t_min is None:
            object.__setattr__(self, "t_min", float(self.ev.T_R))
        if self.h is None:
            object.__setattr__(self, "h", R / 40.0)
        if self.r_max is None:
            object.__setattr__(self, "r_max", self.h * math.ceil((6.0 * self.T + 4.0 * R) / self.h - 1e-9))
        if not self.t_min >= 1.0:
            raise InputDomainError("t_min must be at least 1")
        if not self.T > self.t_min:
            raise InputDomainError("T must exceed t_min")
        if not 0.0 < self.cfl < 1.0:
            raise InputDomainError(f"cfl must lie in (0, 1), got {self.cfl!r}")
        if not self.h <= R / 20.0 * (1 + 1e-12):
            raise InputDomainError(f"grid must resolve the light cone: h <= R/20 = {R / 20.0}")
        if self.r_max < 6.0 * self.T:
            raise InputDomainError("r_max must be at least 6T (finite propagation support)")
        if self.metric.kind is not MetricKind.SOUND_SPEED:
            raise UnsupportedOperationError("the radial solver needs a sound-speed metric")
        rec = record_times_for(self.T, self.t_min) if self.record_times is None else self.record_times
        rec = tuple(sorted({float(t) for t in rec}, reverse=True))
        if any(not (self.t_min - 1e-12 <= t <= 2.0 * self.T + 1e-12) for t in rec):
            raise InputDomainError("record times must lie in [t_min, 2T]")
        object.__setattr__(self, "record_times", rec)

    @property
    def metric(self):
        return self.ev.metric

    @property
    def grid(self) -> RadialGrid:
        return RadialGrid(self.h, self.r_max)


@dataclass
class StabilityCertificate:
    finite: bool
    steps: int
    dt: float
    c_bound: float
    max_c: float
    max_abs_v: list  # (t, max|v|) at every recorded time


@dataclass
class SolveResult:
    cfg: SolveConfig
    slices: list
    certificate: StabilityCertificate

    def at(self, t: float) -> Slice:
        for s in self.slices:
            if math.isclose(s.t, t, rel_tol=1e-12, abs_tol=1e-12):
                return s
        raise KeyError(f"no slice recorded at t={t!r}")

    @property
    def times(self) -> list:
        return [s.t for s in self.slices]


# ---------------------------------------------------------------------------
# compiled kernels


@njit(cache=True)
def _ss(y):
    if y <= 0.0:
        return 0.0, 0.0, 0.0
    if y >= 1.0:
        return 1.0, 0.0, 0.0
    return (y * y * y * (10.0 - 15.0 * y + 6.0 * y * y), 30.0 * y * y * (1.0 - y) ** 2,
            60.0 * y * (1.0 - y) * (1.0 - 2.0 * y))


@njit(cache=True)
def _psi_jet(x, a, b, c, d):
    if x < b:
        s0, s1, s2 = _ss((x - a) / (b - a))
        return s0, s1 / (b - a), s2 / (b - a) ** 2
    if x > c:
        s0, s1, s2 = _ss((d - x) / (d - c))
        return s0, -s1 / (d - c), s2 / (d - c) ** 2
    return 1.0, 0.0, 0.0


@njit(cache=True)
def _fill_outer(r, lo, hi, tau, eps, cp, a, b, c, d, e0, e1, e2, U0, Us0, Uss0, chi_, ua, rw, lw):
    """Profile terms on nodes whose characteristic has left the support of A.

    There A = 0, so U = U(s, R) depends on t only and U_r = U_rr = 0.
    Writes u_app, chi * r * (residual of u_app) and chi * r * Lap u_app.
    """
    s_t = eps / tau
    s_tt = -eps / (tau * tau)
    Ut = Us0 * s_t
    box = Uss0 * s_t * s_t + Us0 * s_tt
    for j in range(lo, hi):
        x = r[j] / tau
        p0, p1, p2 = _psi_jet(x, a, b, c, d)
        Phi = e0 * p0
        Phi_t = e1 * p0 - e0 * p1 * x / tau
        Phi_tt = e2 * p0 - 2.0 * e1 * p1 * x / tau + e0 * (p2 * x * x + 2.0 * p1 * x) / (tau * tau)
        Phi_rr = e0 * p2 / (tau * tau)
        u = eps * Phi * U0 / r[j]
        ca = 1.0 + cp * u
        ua[j] = u
        rw[j] = chi_ * eps * ((Phi_tt - ca * ca * Phi_rr) * U0 + 2.0 * Phi_t * Ut + Phi * box)
        lw[j] = chi_ * eps * Phi_rr * U0


@njit(cache=True)
def _accel(w, out, a, b, inv_h2, inv_r, cp, ua, rw, lw):
    cmax = 0.0
    for j in range(a, b):
        d2 = (w[j + 1] - 2.0 * w[j] + w[j - 1]) * inv_h2
        uap = ua[j]
        c = 1.0 + cp * (uap + w[j] * inv_r[j])
        ca = 1.0 + cp * uap
        c2 = c * c
        out[j] = c2 * d2 - (rw[j] - (c2 - ca * ca) * lw[j])
        if abs(c) > cmax:
            cmax = abs(c)
    return cmax


@njit(cache=True)
def _rk4_step(w, wt, a, b, h, dt, inv_r, cp, ua0, rw0, lw0, ua1, rw1, lw1, ua2, rw2, lw2, ws, wts, k, sw, swt):
    """One RK4 step of size -dt for w_tt = c^2 w_rr - source on nodes [a, b).

    Nodes outside [a, b) are held fixed (they are zero by finite propagation).
    Returns (max |c|, max |w|); the latter is NaN if the state became non-finite.
    """
    hs = -dt
    inv_h2 = 1.0 / (h * h)
    for j in range(a - 1, b + 1):
        ws[j] = w[j]
        wts[j] = wt[j]
    cmax = _accel(w, k, a, b, inv_h2, inv_r, cp, ua0, rw0, lw0)
    for j in range(a, b):
        sw[j] = wt[j]
        swt[j] = k[j]
        ws[j] = w[j] + 0.5 * hs * wt[j]
        wts[j] = wt[j] + 0.5 * hs * k[j]
    cmax = max(cmax, _accel(ws, k, a, b, inv_h2, inv_r, cp, ua1, rw1, lw1))
    for j in range(a, b):
        v2 = wts[j]
        sw[j] += 2.0 * v2
        swt[j] += 2.0 * k[j]
        ws[j] = w[j] + 0.5 * hs * v2
        wts[j] = wt[j] + 0.5 * hs * k[j]
    cmax = max(cmax, _accel(ws, k, a, b, inv_h2, inv_r, cp, ua1, rw1, lw1))
    for j in range(a, b):
        v3 = wts[j]
        sw[j] += 2.0 * v3
        swt[j] += 2.0 * k[j]
        ws[j] = w[j] + hs * v3
        wts[j] = wt[j] + hs * k[j]
    cmax = max(cmax, _accel(ws, k, a, b, inv_h2, inv_r, cp, ua2, rw2, lw2))
    wmax = 0.0
    for j in range(a, b):
        w[j] += hs / 6.0 * (sw[j] + wts[j])
        wt[j] += hs / 6.0 * (swt[j] + k[j])
        aw = abs(w[j])
        if not (aw <= wmax):
            wmax = aw if aw == aw else np.nan
            if wmax != wmax:
                break
    return cmax, wmax


# ---------------------------------------------------------------------------
# characteristics on the stage-time lattice


class CharacteristicTracker:
    """Incoming characteristics labelled by rho = tau + r on a lattice of spacing ``step``.

    Stage time ``tau_m = tau0 - m * step`` meets node ``r_j = j * N * step`` on the
    characteristic with index ``k = j N - m`` (``rho_k = tau0 + k * step``).  Each
    characteristic starts at ``t1 = (rho + R) / 2`` with ``(z, nu, nu_r) = (-R, 0, 0)``,
    is advanced with one RK4 step per lattice step, and is frozen once ``z >= R``.
    """

    PENDING, LIVE, EXITED = 0, 1, 2

    def __init__(self, ev: ProfileEvaluator, tau0: float, step: float, N: int, tau_end: float):
        self.cfg, self.state = ev.cfg, ev.state
        self.tau0, self.step, self.N = float(tau0), float(step), int(N)
        R = self.state.R
        self.rhs = characteristic_rhs(self.cfg, self.state)
        # kappa: rho_k > 2 tau_m - R  <=>  k > kappa - 2m
        self.kappa = (self.tau0 - R) / self.step
        self.k_min = int(math.floor((2.0 * tau_end - R - self.tau0) / self.step)) - 2 * self.N - 4
        self.k_max = int(math.ceil((self.tau0 + 4.0 * R) / self.step))
        size = self.k_max - self.k_min + 1
        self.z = np.full(size, -R)
        self.nu = np.zeros(size)
        self.nur = np.zeros(size)
        self.t0 = np.full(size, np.inf)
        self.status = np.zeros(size, dtype=np.int8)
        self.m = 0
        # initial states straight from the adaptive integrator
        k_lo = self.first_started(0)
        ks = np.arange(k_lo, self.k_max + 1)
        f = optical_field(self.cfg, self.state, self.tau0, self.rho(ks) - self.tau0)
        i = ks - self.k_min
        exited = np.isfinite(f.t0)
        self.z[i] = np.where(exited, R, f.q)
        self.nu[i], self.nur[i], self.t0[i] = f.nu, f.nu_r, f.t0
        self.status[i] = np.where(exited, self.EXITED, self.LIVE)
        if not exited[-1]:
            raise NumericalError("characteristic lattice too short; last characteristic still live")
        self.lo = k_lo  # smallest started index
        live = np.flatnonzero(~exited)
        self.hi = int(ks[live[-1]]) + 1 if live.size else k_lo  # one past the largest live index

    def rho(self, k):
        return self.tau0 + np.asarray(k, dtype=float) * self.step

    def tau(self, m: int) -> float:
        return self.tau0 - m * self.step

    def first_started(self, m: int) -> int:
        return int(math.floor(self.kappa - 2 * m)) + 1

    def advance(self):
        """Move every live characteristic from tau_m to tau_{m+1}; start the new ones."""
        R = self.state.R
        tau_old, tau_new = self.tau(self.m), self.tau(self.m + 1)
        new_lo = self.first_started(self.m + 1)
        if new_lo - self.k_min < 0:
            raise NumericalError("characteristic lattice exhausted", tau=tau_new)
        idx = np.arange(new_lo, self.hi) - self.k_min
        idx = idx[self.status[idx] != self.EXITED]
        if idx.size:
            starting = self.status[idx] == self.PENDING
            x0 = np.where(starting, 0.5 * (self.rho(idx + self.k_min) + R), tau_old)
            hstep = tau_new - x0
            y = np.stack((self.z[idx], self.nu[idx], self.nur[idx]))
            y[:, starting] = np.array([[-R], [0.0], [0.0]])
            k1 = self.rhs(x0, y)
            k2 = self.rhs(x0 + 0.5 * hstep, y + 0.5 * hstep * k1)
            k3 = self.rhs(x0 + 0.5 * hstep, y + 0.5 * hstep * k2)
            k4 = self.rhs(x0 + hstep, y + hstep * k3)
            y = y + hstep / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
            out = y[0] >= R
            self.z[idx], self.nu[idx], self.nur[idx] = y
            self.status[idx] = np.where(out, self.EXITED, self.LIVE)
            self.t0[idx] = np.where(out, tau_new + 0.5 * (y[0] - R), np.inf)
            live = idx[~out]
            self.hi = int(live[-1] + self.k_min) + 1 if live.size else new_lo
        self.lo = new_lo
        self.m += 1

    def node_window(self, h: float, n: int):
        """Node range [j0, j1) that can carry a started, unexited characteristic at tau_m."""
        j0 = -(-(self.lo + self.m) // self.N)  # ceil
        j1 = (self.hi - 1 + self.m) // self.N + 1
        return max(j0, 1), min(max(j1, j0), n - 1)

    def sample(self, j):
        """Status and optical data for nodes j at the current stage time."""
        i = np.asarray(j) * self.N - self.m - self.k_min
        st = self.status[i]
        z, nu, nur = self.z[i], self.nu[i], self.nur[i]
        tau = self.tau(self.m)
        with np.errstate(invalid="ignore"):
            q = np.where(st == self.EXITED, self.state.R + 2.0 * (self.t0[i] - tau), z)
        return st, q, nu, nur


# ---------------------------------------------------------------------------
# per-stage source assembly


class _StageBuffers:
    """u_app, chi r F and chi r Lap u_app on the full grid for one stage time."""

    def __init__(self, n: int):
        self.ua = np.zeros(n)
        self.rw = np.zeros(n)
        self.lw = np.zeros(n)
        self.lo = 0
        self.hi = 0

    def clear(self):
        for a in (self.ua, self.rw, self.lw):
            a[self.lo:self.hi] = 0.0
        self.lo = self.hi = 0


class _Source:
    def __init__(self, cfg: SolveConfig):
        self.cfg = cfg
        self.ev = cfg.ev
        self.grid = cfg.grid
        self.r = self.grid.r
        self.cp = cfg.metric.c_prime0
        self.band = tuple(float(x) for x in self.ev.psi_band)
        # U(s, R) and its s-derivatives are entire in s: interpolate once over the run
        st, ecfg = self.ev.state, self.ev.cfg
        dom = [ecfg.s(0.5 * cfg.t_min), ecfg.s(2.5 * cfg.T)]
        self.top = [np.polynomial.Chebyshev.interpolate(
            lambda x, k=k: st.U_family(x, np.full_like(x, st.R))[k], 40, domain=dom) for k in range(3)]

    def _scalars(self, tau):
        T_R = self.ev.T_R
        y = min(max((tau - T_R) / T_R, 0.0), 1.0)
        e = (y**3 * (10.0 - 15.0 * y + 6.0 * y * y), 30.0 * y * y * (1.0 - y) ** 2 / T_R,
             60.0 * y * (1.0 - y) * (1.0 - 2.0 * y) / T_R**2)
        s = self.ev.cfg.s(tau)
        return e, float(self.top[0](s)), float(self.top[1](s)), float(self.top[2](s))

    def fill(self, buf: _StageBuffers, tau: float, j_lo: int, inner_j, opt: Optional[OpticalField]):
        """Write stage data for band nodes [j_lo, j_hi); ``inner_j`` get the full profile jet."""
        buf.clear()
        n = self.grid.n
        h = self.grid.h
        j_hi = min(int(math.floor(self.band[3] * tau / h)) + 1, n - 1)
        if j_lo >= j_hi or tau <= self.ev.T_R:
            return  # u_app vanishes identically before the switch-on
        ch = chi(tau / self.cfg.T)
        e, U0, Us0, Uss0 = self._scalars(tau)
        a, b, c, d = self.band
        _fill_outer(self.r, j_lo, j_hi, tau, self.ev.cfg.epsilon, self.cp, a, b, c, d,
                    e[0], e[1], e[2], U0, Us0, Uss0, ch, buf.ua, buf.rw, buf.lw)
        if len(inner_j):
            jet = profile_jet(self.ev, tau, self.r[inner_j], opt=opt)
            rr = self.r[inner_j]
            buf.ua[inner_j] = jet.u
            buf.rw[inner_j] = ch * jet.residual * rr
            buf.lw[inner_j] = ch * jet.lap * rr
        buf.lo, buf.hi = j_lo, j_hi

    def tracker_stage(self, tracker: CharacteristicTracker):
        """(tau, j_lo, inner nodes, optical data) for the tracker's current stage time."""
        tau = tracker.tau(tracker.m)
        h = self.grid.h
        # first node whose characteristic has started (integer test, no rounding)
        j_lo = max(1, -(-(tracker.lo + tracker.m) // tracker.N))
        j0, j1 = tracker.node_window(h, self.grid.n)
        j0 = max(j0, j_lo)
        inner = np.arange(j0, j1)
        opt = None
        if inner.size:
            st, q, nu, nur = tracker.sample(inner)
            keep = st == CharacteristicTracker.LIVE
            inner, q, nu, nur = inner[keep], q[keep], nu[keep], nur[keep]
            if inner.size:
                t = np.full(inner.size, tau)
                mu = self.ev.state.mu(self.ev.cfg.s(t), q)
                opt = OpticalField(t, self.r[inner], q, nu, nur, mu,
                                   np.full(inner.size, np.inf), 0.5 * (t + self.r[inner] + self.ev.state.R))
        return tau, j_lo, inner, opt

    def fill_from_tracker(self, buf: _StageBuffers, tracker: CharacteristicTracker):
        self.fill(buf, *self.tracker_stage(tracker))

    def fill_direct(self, buf: _StageBuffers, tau: float, j_cap: int):
        """Off-lattice stage time: characteristics integrated directly for nodes below ``j_cap``."""
        R, h = self.ev.state.R, self.grid.h
        j_lo = max(1, int(math.floor((tau - R) / h)) + 1)
        inner = np.arange(j_lo, max(j_lo, min(j_cap, self.grid.n - 1)))
        opt = optical_field(self.ev.cfg, self.ev.state, tau, self.r[inner]) if inner.size else None
        self.fill(buf, tau, j_lo, inner, opt)


# ---------------------------------------------------------------------------


def _c_bound(cfg: SolveConfig) -> float:
    """Sound-speed bound for the time step: u_app is at most 2 eps max|U| / t on its support."""
    ev = cfg.ev
    s = ev.cfg.s(np.array([cfg.t_min, 2.0 * cfg.T]))
    q = np.linspace(-ev.state.R, ev.state.R, 65)
    U = np.abs(ev.state.U(s[:, None], q[None, :]))
    u_max = 2.0 * ev.cfg.epsilon * float(U.max()) / max(cfg.t_min, 1.0)
    return 1.0 + abs(cfg.metric.c_prime0) * 2.0 * u_max


def _window(cfg: SolveConfig, tau: float, n: int, margin: int = 16):
    """Nodes [a, b) that can be nonzero: the support t - R <= r <= 6T - t plus a margin."""
    h, R = cfg.h, cfg.ev.state.R
    a = max(1, int(math.floor((tau - R) / h)) - margin)
    b = min(n - 1, int(math.ceil((6.0 * cfg.T - tau) / h)) + margin + 1)
    return a, b


def backward_solve(cfg: SolveConfig, progress=None) -> SolveResult:
    """Integrate from v = v_t = 0 at t = 2T down to t_min; record slices at ``cfg.record_times``."""
    grid = cfg.grid
    n, h = grid.n, grid.h
    r = grid.r
    inv_r = np.zeros(n)
    inv_r[1:] = 1.0 / r[1:]
    cp = cfg.metric.c_prime0
    c_bound = _c_bound(cfg)
    N = int(math.ceil(2.0 * c_bound / cfg.cfl - 1e-12))
    dt = 2.0 * h / N
    tau0 = 2.0 * cfg.T
    tracker = CharacteristicTracker(cfg.ev, tau0, dt / 2.0, N, cfg.t_min)
    src = _Source(cfg)

    w = np.zeros(n)
    wt = np.zeros(n)
    tmp = [np.zeros(n) for _ in range(5)]
    slots = [_StageBuffers(n) for _ in range(3)]
    spare = [_StageBuffers(n) for _ in range(3)]
    src.fill_from_tracker(slots[0], tracker)

    records = list(cfg.record_times)
    slices: list = []
    max_abs_v: list = []
    max_c = 1.0
    steps = 0

    def record(t, wv, wtv):
        v = np.zeros(n)
        vt = np.zeros(n)
        v[1:-1] = wv[1:-1] * inv_r[1:-1]
        vt[1:-1] = wtv[1:-1] * inv_r[1:-1]
        slices.append(Slice(RadialField(grid, v, t), RadialField(grid, vt, t)))
        max_abs_v.append((t, float(np.max(np.abs(v)))))

    def check(cm, wmax, t):
        nonlocal max_c
        if not np.isfinite(wmax):
            raise NumericalError("non-finite state in backward solve", last_stable_time=t)
        max_c = max(max_c, cm)
        if cm > c_bound * (1.0 + 1e-9):
            raise NumericalError("sound speed exceeded the CFL bound", t=t, max_c=cm, c_bound=c_bound,
                                 advice="re-run with a smaller cfl or smaller data")

    def partial(t_target, j_cap):
        """RK4 step from the current lattice time to an off-lattice time, on copies."""
        tau = tracker.tau(tracker.m)
        d = tau - t_target
        src.fill_direct(spare[1], tau - 0.5 * d, j_cap)
        src.fill_direct(spare[2], t_target, j_cap)
        wc, wtc = w.copy(), wt.copy()
        a, b = _window(cfg, t_target, n)
        s0, s1, s2 = slots[0], spare[1], spare[2]
        cm, wmax = _rk4_step(wc, wtc, a, b, h, d, inv_r, cp, s0.ua, s0.rw, s0.lw, s1.ua, s1.rw, s1.lw,
                             s2.ua, s2.rw, s2.lw, *tmp)
        check(cm, wmax, t_target)
        return wc, wtc

    def j_cap():
        return (tracker.hi - 1 + tracker.m) // tracker.N + 2

    while records and records[0] >= tracker.tau(tracker.m) - 1e-12 * tau0:
        record(records.pop(0), w, wt)  # t = 2T: v = 0

    while records:
        tau = tracker.tau(tracker.m)
        tau_next = tracker.tau(tracker.m + 2)
        # records that fall strictly inside the next step
        while records and records[0] > tau_next + 1e-12 * tau0:
            wc, wtc = partial(records[0], j_cap())
            record(records.pop(0), wc, wtc)
        if not records:
            break
        a, b = _window(cfg, tau_next, n)
        tracker.advance()
        src.fill_from_tracker(slots[1], tracker)
        tracker.advance()
        src.fill_from_tracker(slots[2], tracker)
        s0, s1, s2 = slots
        cm, wmax = _rk4_step(w, wt, a, b, h, dt, inv_r, cp, s0.ua, s0.rw, s0.lw, s1.ua, s1.rw, s1.lw,
                             s2.ua, s2.rw, s2.lw, *tmp)
        steps += 1
        check(cm, wmax, tau_next)
        slots = [s2, s0, s1]
        if records and abs(records[0] - tau_next) <= 1e-12 * tau0:
            record(records.pop(0), w, wt)
        if progress is not None and steps % 1000 == 0:
            progress(tau_next)

    cert = StabilityCertificate(True, steps, dt, c_bound, max_c, max_abs_v)
    return SolveResult(cfg, slices, cert)


def forward_solve(cfg: SolveConfig, start: Slice, t_end: Optional[float] = None) -> Slice:
    """Evolve a recorded slice forward in time to ``t_end`` (default 2T) with the same scheme.

    Full steps reuse the backward solve's stage lattice: the characteristic
    tracker is run once from 2T down to the start time and its stage samples
    are replayed in reverse.  Steps that leave the lattice (the first one and
    possibly the last midpoint) use direct characteristic integration.  Every
    interior node is updated, so leaks outside the support window are kept.
    """
    T2 = 2.0 * cfg.T
    t_end = T2 if t_end is None else float(t_end)
    if not start.t < t_end <= T2 * (1 + 1e-12):
        raise InputDomainError("forward evolution needs start time < t_end <= 2T")
    grid = cfg.grid
    if start.grid != grid:
        raise ContractViolationError("start slice is not on the configured grid")
    n, h, r = grid.n, grid.h, grid.r
    inv_r = np.zeros(n)
    inv_r[1:] = 1.0 / r[1:]
    cp = cfg.metric.c_prime0
    c_bound = _c_bound(cfg)
    N = int(math.ceil(2.0 * c_bound / cfg.cfl - 1e-12))
    step = h / N
    src = _Source(cfg)
    tracker = CharacteristicTracker(cfg.ev, T2, step, N, start.t)
    # lattice indices m with tau_m = 2T - m step; forward time runs from m_hi down to m_lo
    m_hi = int(math.floor((T2 - start.t) / step + 1e-9))
    m_lo = int(math.ceil((T2 - t_end) / step - 1e-9))
    stages = {}
    for m in range(m_hi + 1):
        if m:
            tracker.advance()
        if m_lo <= m <= m_hi:
            stages[m] = src.tracker_stage(tracker)

    w, wt = r * start.v.values, r * start.v_t.values
    tmp = [np.zeros(n) for _ in range(5)]
    bufs = [_StageBuffers(n) for _ in range(3)]
    j_cap = lambda tau: int(math.ceil((tau + 4.0 * cfg.ev.state.R) / h)) + 1

    def advance(t0, d, fills):
        for buf, (tau, fill) in zip(bufs, zip((t0, t0 + 0.5 * d, t0 + d), fills)):
            if fill is None:
                src.fill_direct(buf, tau, j_cap(tau))
            else:
                src.fill(buf, *fill)
        s0, s1, s2 = bufs
        _, wmax = _rk4_step(w, wt, 1, n - 1, h, -d, inv_r, cp, s0.ua, s0.rw, s0.lw, s1.ua, s1.rw, s1.lw,
                            s2.ua, s2.rw, s2.lw, *tmp)
        if not np.isfinite(wmax):
            raise NumericalError("non-finite state in forward solve", last_stable_time=t0)

    t = start.t
    m = m_hi
    tau_hi = T2 - m_hi * step
    if tau_hi > t + 1e-12 * T2:
        advance(t, tau_hi - t, (None, None, stages[m]))
        t = tau_hi
    while m - 2 >= m_lo:
        advance(t, 2.0 * step, (stages[m], stages[m - 1], stages[m - 2]))
        m -= 2
        t = T2 - m * step
    if t < t_end - 1e-12 * T2:
        advance(t, t_end - t, (stages[m], None, None))
    v, vt = np.zeros(n), np.zeros(n)
    v[1:-1] = w[1:-1] * inv_r[1:-1]
    vt[1:-1] = wt[1:-1] * inv_r[1:-1]
    return Slice(RadialField(grid, v, t_end), RadialField(grid, vt, t_end))


# ---------------------------------------------------------------------------
# diagnostics on slices


def _lap2_w(w, h):
    out = np.zeros_like(w)
    out[1:-1] = (w[2:] - 2.0 * w[1:-1] + w[:-2]) / (h * h)
    return out


def _lap4_w(w, h):
    out = np.zeros_like(w)
    out[2:-2] = (-w[4:] + 16.0 * w[3:-1] - 30.0 * w[2:-2] + 16.0 * w[1:-3] - w[:-4]) / (12.0 * h * h)
    out[1] = (w[2] - 2.0 * w[1] + w[0]) / (h * h)
    out[-2] = (w[-1] - 2.0 * w[-2] + w[-3]) / (h * h)
    return out


def app_terms(ev: ProfileEvaluator, t: float, r: np.ndarray):
    """u_app, its residual and Lap u_app at nodes r (zero off the support band)."""
    n = r.size
    ua, res, lap = np.zeros(n), np.zeros(n), np.zeros(n)
    band = (r > t - ev.state.R) & (r < ev.psi_band[3] * t) & (r > 0)
    if np.any(band) and t > ev.T_R:
        jet = profile_jet(ev, t, r[band])
        ua[band], res[band], lap[band] = jet.u, jet.residual, jet.lap
    return ua, res, lap


def residual_check(cfg: SolveConfig, sl: Slice) -> float:
    """Max norm of the full equation residual of u = u_app + v on the support band.

    v_tt is the scheme's own acceleration (second-order stencil); the residual
    evaluates the equation with a fourth-order Laplacian, so it equals
    ``c^2 (Lap_2 - Lap_4) v + (1 - chi) (F_app - (c^2 - c_app^2) Lap u_app)``:
    the spatial truncation of the scheme plus the part of the source that chi removes.
    """
    grid = sl.grid
    r, h, t = grid.r, grid.h, sl.t
    R = cfg.ev.state.R
    w = r * sl.v.values
    ua, res, lap = app_terms(cfg.ev, t, r)
    cp = cfg.metric.c_prime0
    c2 = (1.0 + cp * (ua + sl.v.values)) ** 2
    ca2 = (1.0 + cp * ua) ** 2
    with np.errstate(divide="ignore", invalid="ignore"):
        lap_diff = np.where(r > 0, (_lap2_w(w, h) - _lap4_w(w, h)) / r, 0.0)
    full = c2 * lap_diff + (1.0 - chi(t / cfg.T)) * (res - (c2 - ca2) * lap)
    sel = (r >= t - R) & (r <= 6.0 * cfg.T - t) & (r > 2 * h) & (r < r[-1] - 2 * h)
    return float(np.max(np.abs(full[sel]))) if np.any(sel) else 0.0


def support_leak(cfg: SolveConfig, sl: Slice) -> float:
    """max|v| outside [t - R - 2h, 6T - t + 2h] relative to max|v| (0 when v = 0)."""
    r, h, t = sl.grid.r, sl.grid.h, sl.t
    R = cfg.ev.state.R
    v = np.abs(sl.v.values)
    vmax = float(v.max())
    if vmax == 0.0:
        return 0.0
    out = (r < t - R - 2 * h) | (r + t > 6.0 * cfg.T + 2 * h)
    return float(v[out].max() / vmax) if np.any(out) else 0.0


# ---------------------------------------------------------------------------
# persistence


def _atomic_write(path: Path, text: str):
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=".tmp-")
    with os.fdopen(fd, "w", newline="") as f:
        f.write(text)
    os.replace(tmp, path)


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def slice_filename(i: int) -> str:
    return f"slice_{i:04d}.csv"


def write_slices(result: SolveResult, out_dir) -> Path:
    """One CSV per recorded time (``r,v,v_t``) plus ``manifest.json``."""
    out = Path(out_dir)
    cfg = result.cfg
    for i, sl in enumerate(result.slices):
        lines = ["r,v,v_t"]
        for rr, v, vt in zip(sl.grid.r, sl.v.values, sl.v_t.values):
            lines.append(f"{_fmt(rr)},{_fmt(v)},{_fmt(vt)}")
        _atomic_write(out / slice_filename(i), "\n".join(lines) + "\n")
    manifest = {
        "T": cfg.T,
        "epsilon": cfg.ev.cfg.epsilon,
        "delta": cfg.ev.cfg.delta,
        "h": cfg.h,
        "r_max": cfg.r_max,
        "dt": result.certificate.dt,
        "times": result.times,
        "files": [slice_filename(i) for i in range(len(result.slices))],
        "certificate": {
            "finite": result.certificate.finite,
            "steps": result.certificate.steps,
            "c_bound": result.certificate.c_bound,
            "max_c": result.certificate.max_c,
            "max_abs_v": result.certificate.max_abs_v,
        },
    }
    _atomic_write(out / "manifest.json", json.dumps(manifest, indent=2) + "\n")
    return out


def read_slices(out_dir) -> tuple[dict, list]:
    """Manifest and slices written by :func:`write_slices`."""
    out = Path(out_dir)
    mpath = out / "manifest.json"
    if not mpath.exists():
        raise FileNotFoundError(f"no solver output in {out}; run cmd_solve first")
    manifest = json.loads(mpath.read_text())
    grid = RadialGrid(manifest["h"], manifest["r_max"])
    slices = []
    for t, name in zip(manifest["times"], manifest["files"]):
        data = np.loadtxt(out / name, delimiter=",", skiprows=1, ndmin=2)
        slices.append(Slice(RadialField(grid, data[:, 1], t), RadialField(grid, data[:, 2], t)))
    return manifest, slices
