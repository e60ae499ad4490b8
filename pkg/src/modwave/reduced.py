"""Reduced asymptotic system in the slow time s.

The special system ``mu_s = -G mu^2 U_q / 4``, ``(U_q)_s = G mu U_q^2 / 4`` with
``mu(0) = -2`` and ``U_q(0) = A`` conserves ``mu U_q = -2A`` and integrates to

    mu  = -2 exp(G A s / 2)
    U_q = A exp(-G A s / 2)
    U   = int_{-inf}^q A(p) exp(-G A(p) s / 2) dp.

``integrate_reduced_ode`` solves the same system numerically as an oracle, and
``integrate_general_reduced`` handles the general system with q-derivatives,
which can blow up in finite s.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.integrate import cumulative_simpson

from .errors import InputDomainError, NumericalError
from .model import GeneralReducedModel, Metric, ScatteringData, check_unit, null_form_G
from .quadrature import _gl_nodes, adaptive_simpson, gauss_legendre

_Z = (0.0, 0.0, 1.0)


@dataclass(frozen=True)
class AsymptoticState:
    """Scattering data at a fixed direction together with the null form G there."""

    data: ScatteringData
    G: float
    omega: tuple = _Z
    quad_tol: float = 1e-10
    metric: Optional[Metric] = None

    def __post_init__(self):
        object.__setattr__(self, "omega", tuple(check_unit(self.omega)))
        if not self.quad_tol > 0:
            raise InputDomainError("quad_tol must be positive")

    @classmethod
    def from_metric(cls, metric: Metric, data: ScatteringData, omega=_Z, quad_tol=1e-10):
        return cls(data, null_form_G(metric, omega), tuple(omega), quad_tol, metric)

    def at_omega(self, omega) -> "AsymptoticState":
        """Same data at another direction; G is recomputed when the metric is known."""
        G = null_form_G(self.metric, omega) if self.metric is not None else self.G
        return AsymptoticState(self.data, G, tuple(omega), self.quad_tol, self.metric)

    @property
    def R(self) -> float:
        return self.data.R

    # profile and its q-derivatives at this direction
    def A(self, q, deriv: int = 0):
        return self.data.A(q, self.omega, deriv)

    def A_jet(self, q):
        return self.data.A_jet(q, self.omega)

    # closed forms, vectorized in (s, q)
    def mu(self, s, q):
        return -2.0 * np.exp(0.5 * self.G * self.A(q) * s)

    def mu_s(self, s, q):
        a = self.A(q)
        return 0.5 * self.G * a * self.mu(s, q)

    def mu_q(self, s, q):
        return 0.5 * self.G * self.A(q, 1) * s * self.mu(s, q)

    def mu_qq(self, s, q):
        m = self.mu(s, q)
        a1 = self.A(q, 1)
        return 0.5 * self.G * s * (self.A(q, 2) * m + a1 * 0.5 * self.G * a1 * s * m)

    def Uq(self, s, q):
        a = self.A(q)
        return a * np.exp(-0.5 * self.G * a * s)

    def Uqq(self, s, q):
        a = self.A(q)
        return self.A(q, 1) * (1.0 - 0.5 * self.G * a * s) * np.exp(-0.5 * self.G * a * s)

    def Usq(self, s, q):
        a = self.A(q)
        return -0.5 * self.G * a * a * np.exp(-0.5 * self.G * a * s)

    # U and its s-derivatives: integrals of A^k exp(-G A s / 2) over [-R, min(q, R)]
    def _integrand(self, s, power: int):
        c = (-0.5 * self.G) ** (power - 1)

        def f(p):
            a = self.A(p)
            return c * a**power * np.exp(-0.5 * self.G * a * s)

        return f

    def _integral(self, s, q, power, panels: int = 16, order: int = 16):
        """Integrals for one power or a tuple of powers (sharing the quadrature nodes)."""
        powers = (power,) if np.ndim(power) == 0 else tuple(power)
        s_arr, q_arr = np.broadcast_arrays(np.asarray(s, float), np.asarray(q, float))
        upper = np.clip(q_arr, -self.R, self.R)
        out = np.zeros((len(powers),) + s_arr.shape)
        coef = np.array([(-0.5 * self.G) ** (k - 1) for k in powers])[:, None, None]
        knots = self.R * np.asarray(self.data.profile.breakpoints)
        # integrate piece by piece between the profile's breakpoints
        for lo, hi in zip(knots[:-1], knots[1:]):
            live = upper > lo
            if not np.any(live):
                break
            sl = s_arr[live][:, None]

            def f(p, sl=sl):
                a = self.A(p)
                e = np.exp(-0.5 * self.G * a * sl)
                return coef * np.stack([a**k * e for k in powers])

            out[:, live] += gauss_legendre(f, lo, np.minimum(upper[live], hi), panels, order)
        return out[0] if np.ndim(power) == 0 else out

    def U_family(self, s, q):
        """(U, U_s, U_ss) from one quadrature pass."""
        return self._integral(s, q, (1, 2, 3))

    def U_family_at_s(self, s: float, q, width: float = 1.0 / 32.0, order: int = 10):
        """(U, U_s, U_ss) at one slow time for many q, as a cumulative sum.

        The sorted targets and the profile breakpoints split [-R, R] into pieces no
        wider than ``width * R``; each piece gets a Gauss-Legendre rule and the
        running sum gives all targets in one pass.
        """
        q = np.asarray(q, dtype=float)
        upper = np.clip(q, -self.R, self.R)
        pts = np.unique(np.concatenate([self.R * np.asarray(self.data.profile.breakpoints), upper.ravel()]))
        gaps = np.diff(pts)
        n_sub = np.maximum(1, np.ceil(gaps / (width * self.R)).astype(int))
        ends = np.concatenate([[0], np.cumsum(n_sub)])
        frac = (np.arange(ends[-1]) - np.repeat(ends[:-1], n_sub)) / np.repeat(n_sub, n_sub)
        left = np.repeat(pts[:-1], n_sub) + np.repeat(gaps, n_sub) * frac
        right = np.append(left[1:], pts[-1])
        x, w = _gl_nodes(order)
        half = 0.5 * (right - left)
        nodes = 0.5 * (right + left)[:, None] + half[:, None] * x[None, :]
        a = self.A(nodes)
        e = np.exp(-0.5 * self.G * a * s)
        c = -0.5 * self.G
        ae = a * e
        pieces = np.stack([ae, c * a * ae, c * c * a * a * ae]) @ w * half
        cum = np.concatenate([np.zeros((3, 1)), np.cumsum(pieces, axis=1)], axis=1)
        # value at pts[i] is the running sum up to the last piece ending there
        at_pts = cum[:, ends]
        idx = np.searchsorted(pts, upper)
        return at_pts[:, idx]

    def U(self, s, q):
        return self._integral(s, q, 1)

    def Us(self, s, q):
        return self._integral(s, q, 2)

    def Uss(self, s, q):
        return self._integral(s, q, 3)


def _reference_integral(state: AsymptoticState, s: float, q: float, power: int) -> float:
    upper = min(float(q), state.R)
    if upper <= -state.R:
        return 0.0
    f = state._integrand(float(s), power)
    return adaptive_simpson(lambda p: float(f(np.array(p))), -state.R, upper, state.quad_tol)


def mu_closed(state: AsymptoticState, s, q):
    """mu(s, q) = -2 exp(G A(q) s / 2); strictly negative."""
    return state.mu(s, q)


def Uq_closed(state: AsymptoticState, s, q):
    """U_q(s, q) = A(q) exp(-G A(q) s / 2)."""
    return state.Uq(s, q)


def U_closed(state: AsymptoticState, s: float, q: float) -> float:
    """U(s, q) by adaptive Simpson over [-R, min(q, R)] to ``state.quad_tol``."""
    return _reference_integral(state, s, q, 1)


def Us_closed(state: AsymptoticState, s: float, q: float) -> float:
    """dU/ds(s, q) by adaptive Simpson; the integrand is -G A^2 exp(-G A s / 2) / 2."""
    return _reference_integral(state, s, q, 2)


# ---------------------------------------------------------------------------
# oracle ODE integration of the special system


@dataclass
class ReducedTrajectory:
    s: np.ndarray
    q: np.ndarray
    mu: np.ndarray  # shape (len(s), len(q))
    Uq: np.ndarray


def integrate_reduced_ode(state: AsymptoticState, s_max: float, n_steps: int, q_grid) -> ReducedTrajectory:
    """Classical RK4 on the pointwise system, all q-points advanced together."""
    if not s_max > 0:
        raise InputDomainError("s_max must be positive")
    if n_steps < 1:
        raise InputDomainError("n_steps must be >= 1")
    q = np.asarray(q_grid, dtype=float)
    G = state.G
    ds = s_max / n_steps

    def rhs(m, p):
        return -0.25 * G * m * m * p, 0.25 * G * m * p * p

    mu = np.full(q.shape, -2.0)
    uq = state.A(q)
    mus = np.empty((n_steps + 1,) + q.shape)
    uqs = np.empty_like(mus)
    mus[0], uqs[0] = mu, uq
    for k in range(n_steps):
        k1m, k1p = rhs(mu, uq)
        k2m, k2p = rhs(mu + 0.5 * ds * k1m, uq + 0.5 * ds * k1p)
        k3m, k3p = rhs(mu + 0.5 * ds * k2m, uq + 0.5 * ds * k2p)
        k4m, k4p = rhs(mu + ds * k3m, uq + ds * k3p)
        mu = mu + ds / 6.0 * (k1m + 2.0 * k2m + 2.0 * k3m + k4m)
        uq = uq + ds / 6.0 * (k1p + 2.0 * k2p + 2.0 * k3p + k4p)
        mus[k + 1], uqs[k + 1] = mu, uq
    s = np.linspace(0.0, s_max, n_steps + 1)
    return ReducedTrajectory(s, q, mus, uqs)


# ---------------------------------------------------------------------------
# general reduced system


def steepest_point(data: ScatteringData, omega=_Z) -> float:
    """Location of max A_q on [-R, R], refined by golden-section search."""
    from scipy.optimize import minimize_scalar

    qs = np.linspace(-data.R, data.R, 4001)
    k = int(np.argmax(data.A(qs, omega, 1)))
    lo, hi = qs[max(k - 1, 0)], qs[min(k + 1, len(qs) - 1)]
    res = minimize_scalar(lambda x: -float(data.A(np.array(x), omega, 1)), bounds=(lo, hi),
                          method="bounded", options={"xatol": 1e-13})
    return float(res.x)


@dataclass
class GeneralReducedState:
    """Unknowns of the general system on a uniform q-grid padding [-R, R] by one unit."""

    model: GeneralReducedModel
    data: ScatteringData
    q: np.ndarray
    omega: tuple = _Z

    @classmethod
    def build(cls, model, data, n_q: int = 2401, omega=_Z, anchor: Optional[float] = None):
        """Grid of ``n_q`` points over [-R-1, R+1]; shifted so ``anchor`` is a node if given."""
        lo = -data.R - 1.0
        dq = (2.0 * data.R + 2.0) / (n_q - 1)
        q = lo + dq * np.arange(n_q)
        if anchor is not None:
            k = int(round((anchor - lo) / dq))
            q = q + (anchor - q[k])
        if np.count_nonzero(np.abs(q) < data.R) < 16:
            raise InputDomainError("q-grid must put at least 16 points across [-R, R]")
        return cls(model, data, q, tuple(omega))

    @property
    def dq(self) -> float:
        return float(self.q[1] - self.q[0])


def _d1_4th(f: np.ndarray, h: float) -> np.ndarray:
    """Fourth-order first derivative; one-sided fourth-order closure at both ends."""
    d = np.empty_like(f)
    d[2:-2] = (f[:-4] - 8.0 * f[1:-3] + 8.0 * f[3:-1] - f[4:]) / (12.0 * h)
    d[0] = (-25.0 * f[0] + 48.0 * f[1] - 36.0 * f[2] + 16.0 * f[3] - 3.0 * f[4]) / (12.0 * h)
    d[1] = (-3.0 * f[0] - 10.0 * f[1] + 18.0 * f[2] - 6.0 * f[3] + f[4]) / (12.0 * h)
    d[-1] = -(-25.0 * f[-1] + 48.0 * f[-2] - 36.0 * f[-3] + 16.0 * f[-4] - 3.0 * f[-5]) / (12.0 * h)
    d[-2] = -(-3.0 * f[-1] - 10.0 * f[-2] + 18.0 * f[-3] - 6.0 * f[-4] + f[-5]) / (12.0 * h)
    return d


@dataclass
class GeneralTrajectory:
    s: np.ndarray
    q: np.ndarray
    mu: np.ndarray
    Uq: np.ndarray


@dataclass
class BlowupReport:
    blowup: bool
    s_blowup: Optional[float]
    reason: Optional[str]
    max_abs_mu: float
    steps: int


def integrate_general_reduced(state: GeneralReducedState, s_max: float, ds: float,
                              threshold: float = 1e6, save_every: int = 1, growth: float = 0.01):
    """Method of lines for the general system; RK4 in s with (mu, mu U_q) as unknowns.

    q-derivatives use fourth-order central differences (one-sided at the ends).

    The step is capped at ``growth / max|mu|`` so the integration can follow a
    blowup up to ``threshold``; the report gives the last s with finite
    ``max|mu| <= threshold``.
    """
    if not (s_max > 0 and ds > 0):
        raise InputDomainError("s_max and ds must be positive")
    c = state.model.at(state.omega)
    G2, G3, F1, F2, f0 = c["G2"], c["G3"], c["F1"], c["F2"], c["f0"]
    q, h = state.q, state.dq
    a = state.data.A(q, state.omega)

    def rhs(m, Q):
        p = Q / m
        dQ = 0.25 * F2 * m * m * p * p
        if f0 != 0.0 or F1 != 0.0:
            U = cumulative_simpson(p, dx=h, initial=0.0)
            dQ = dQ + f0 * U * U - 0.5 * F1 * m * U * p
        dm = -0.25 * G2 * m * m * p
        if G3 != 0.0:
            # mu^3 U_qq + mu^2 mu_q U_q = mu^2 (mu U_q)_q; the product stays smooth
            # while mu itself sharpens, so it is the factor that gets differenced
            dm = dm + 0.125 * G3 * m * m * _d1_4th(Q, h)
        return dm, dQ

    mu = np.full(q.shape, -2.0)
    Q = -2.0 * a
    s = 0.0
    ss, mus, uqs = [0.0], [mu.copy()], [a.copy()]
    steps = 0
    report = BlowupReport(False, None, None, 2.0, 0)
    while s < s_max * (1 - 1e-14):
        peak = float(np.max(np.abs(mu)))
        step = min(ds, growth / peak, s_max - s)
        k1m, k1Q = rhs(mu, Q)
        k2m, k2Q = rhs(mu + 0.5 * step * k1m, Q + 0.5 * step * k1Q)
        k3m, k3Q = rhs(mu + 0.5 * step * k2m, Q + 0.5 * step * k2Q)
        k4m, k4Q = rhs(mu + step * k3m, Q + step * k3Q)
        new_mu = mu + step / 6.0 * (k1m + 2 * k2m + 2 * k3m + k4m)
        new_Q = Q + step / 6.0 * (k1Q + 2 * k2Q + 2 * k3Q + k4Q)
        steps += 1
        finite = np.all(np.isfinite(new_mu)) and np.all(np.isfinite(new_Q))
        new_peak = float(np.max(np.abs(new_mu))) if finite else math.inf
        if not finite or new_peak > threshold:
            report = BlowupReport(True, s, "threshold" if finite else "nonfinite", peak, steps)
            break
        mu, Q, s = new_mu, new_Q, s + step
        if steps % save_every == 0:
            ss.append(s)
            mus.append(mu.copy())
            uqs.append(Q / mu)
        if np.any(mu >= 0):
            # mu passed through infinity between two samples
            report = BlowupReport(True, s - step, "sign", peak, steps)
            break
    else:
        report = BlowupReport(False, None, None, float(np.max(np.abs(mu))), steps)
    if ss[-1] != s:
        ss.append(s)
        mus.append(mu.copy())
        uqs.append(Q / mu)
    traj = GeneralTrajectory(np.array(ss), q.copy(), np.array(mus), np.array(uqs))
    return traj, report


def write_trajectory_csv(path, traj) -> None:
    """CSV ``s,q,mu,Uq,U`` for a reduced or general trajectory.

    U is rebuilt from U_q by cumulative Simpson quadrature from the first grid
    point, which must lie left of the support (U = 0 there).
    """
    from pathlib import Path

    rows = ["s,q,mu,Uq,U"]
    q = np.asarray(traj.q, dtype=float)
    for k, s in enumerate(traj.s):
        U = cumulative_simpson(traj.Uq[k], x=q, initial=0.0) if q.size > 1 else np.zeros(1)
        for j in range(q.size):
            vals = (s, q[j], traj.mu[k, j], traj.Uq[k, j], U[j])
            rows.append(",".join(format(float(v), ".17g") for v in vals))
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    p.write_text("\n".join(rows) + "\n")
