"""Approximate optical function q(t, r, omega) and its first derivatives.

q solves ``(d_t - d_r) q = mu(eps ln t - delta, q)`` with ``q(t, 0) = -t``.
Along the incoming characteristic ``tau -> (tau, r + t - tau)`` this is the ODE
``z' = mu(s(tau), z)``.  The characteristic is exactly linear while ``z <= -R``
(that is, for ``tau >= t1 = (t + r + R) / 2``) and again once ``z >= R``
(``q = R + 2 (t0 - tau)``), so only the window between the two is integrated.

Along the same characteristic

    nu   = q_t + q_r   obeys  nu'   = mu_q nu + eps G A mu / (2 tau)
    nu_r = d_r nu      obeys  nu_r' = d_r(right-hand side above)

with zero data at ``t1``.  ``nu_r`` makes every second derivative of q
available without numerical differentiation.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq

from .errors import InputDomainError
from .model import MetricKind, check_unit
from .ode import dopri5_batch
from .reduced import AsymptoticState


@dataclass(frozen=True)
class EikonalConfig:
    epsilon: float = 0.05
    delta: float = 0.1
    ode_tol: float = 1e-10
    omega: tuple = (0.0, 0.0, 1.0)

    def __post_init__(self):
        if not 0.0 < self.epsilon < 1.0:
            raise InputDomainError(f"epsilon must lie in (0, 1), got {self.epsilon!r}")
        if not 0.0 < self.delta < 1.0:
            raise InputDomainError(f"delta must lie in (0, 1), got {self.delta!r}")
        if not self.ode_tol > 0:
            raise InputDomainError("ode_tol must be positive")
        object.__setattr__(self, "omega", tuple(check_unit(self.omega)))

    def s(self, t):
        """Slow time s = eps ln t - delta."""
        return self.epsilon * np.log(t) - self.delta


@dataclass
class OpticalField:
    """Vectorized optical data at sample points (t, r)."""

    t: np.ndarray
    r: np.ndarray
    q: np.ndarray
    nu: np.ndarray
    nu_r: np.ndarray
    mu: np.ndarray
    t0: np.ndarray
    t1: np.ndarray

    @property
    def q_t(self):
        return 0.5 * (self.mu + self.nu)

    @property
    def q_r(self):
        return 0.5 * (self.nu - self.mu)


@dataclass(frozen=True)
class OpticalSample:
    q: float
    nu: float
    mu: float
    q_t: float
    q_r: float
    lam: np.ndarray = field(default_factory=lambda: np.zeros(3))
    t0: float = np.inf
    t1: float = np.nan


def _state_for(cfg: EikonalConfig, state: AsymptoticState) -> AsymptoticState:
    return state if tuple(state.omega) == tuple(cfg.omega) else state.at_omega(cfg.omega)


def characteristic_rhs(cfg: EikonalConfig, state: AsymptoticState):
    """Right-hand side in tau of (z, nu, nu_r) along incoming characteristics."""
    G, eps = state.G, cfg.epsilon

    def rhs(tau, y):
        z, nu, nur = y
        s = cfg.s(tau)
        a, a1, a2 = state.A_jet(z)
        mu = -2.0 * np.exp(0.5 * G * a * s)
        mu_q = 0.5 * G * a1 * s * mu
        mu_qq = 0.5 * G * s * (a2 * mu + a1 * mu_q)
        src = eps * G / (2.0 * tau)
        q_r = 0.5 * (nu - mu)
        dnu = mu_q * nu + src * a * mu
        dnur = mu_qq * q_r * nu + mu_q * nur + src * (a1 * mu + a * mu_q) * q_r
        return np.stack((mu, dnu, dnur))

    return rhs


def optical_field(cfg: EikonalConfig, state: AsymptoticState, t, r) -> OpticalField:
    """q, nu, nu_r, mu, t0, t1 at every (t, r) pair (broadcast)."""
    state = _state_for(cfg, state)
    t, r = np.broadcast_arrays(np.asarray(t, dtype=float), np.asarray(r, dtype=float))
    shape = t.shape
    t, r = t.ravel(), r.ravel()
    if np.any(t <= 0) or np.any(r < 0):
        raise InputDomainError("optical function needs t > 0 and r >= 0")
    R = state.R
    t1 = 0.5 * (t + r + R)
    q = r - t
    nu = np.zeros_like(t)
    nur = np.zeros_like(t)
    t0 = np.full_like(t, np.inf)
    live = np.flatnonzero(t1 > t)
    if live.size:
        y0 = np.zeros((3, live.size))
        y0[0] = -R
        # nu and nu_r are of size eps |G| max|A| / t; measure their error on that scale
        amp = abs(state.data.amplitude * state.data.angular(state.omega))
        size = cfg.epsilon * abs(state.G) * amp
        size = size if size > 0 else 1.0
        nu_tol = cfg.ode_tol * size / np.maximum(t1[live], 1.0)
        atol = np.stack((np.full(live.size, cfg.ode_tol * R), nu_tol, nu_tol))
        res = dopri5_batch(characteristic_rhs(cfg, state), t1[live], y0, t[live],
                           rtol=cfg.ode_tol, atol=atol, h0=0.05 * R,
                           stop=lambda x, y: y[0] >= R)
        z, nu_l, nur_l = res.y
        exited = res.stopped
        # past the exit time the characteristic is exactly linear with frozen nu
        t0_l = np.where(exited, res.x + 0.5 * (z - R), np.inf)
        q_l = np.where(exited, R + 2.0 * (t0_l - t[live]), z)
        q[live], nu[live], nur[live], t0[live] = q_l, nu_l, nur_l, t0_l
    mu = state.mu(cfg.s(t), q)
    return OpticalField(*(a.reshape(shape) for a in (t, r, q, nu, nur, mu, t0, t1)))


def solve_q(cfg: EikonalConfig, state: AsymptoticState, t: float, r: float) -> OpticalSample:
    """Optical data at one point; lambda is filled only for direction-dependent data."""
    f = optical_field(cfg, state, t, r)
    lam = lambda_fd(cfg, state, t, r) if _direction_dependent(state) else np.zeros(3)
    return OpticalSample(float(f.q), float(f.nu), float(f.mu), float(f.q_t), float(f.q_r),
                         np.asarray(lam, dtype=float), float(f.t0), float(f.t1))


def solve_nu(cfg: EikonalConfig, state: AsymptoticState, t, r):
    """nu = q_t + q_r."""
    nu = optical_field(cfg, state, t, r).nu
    return float(nu) if nu.ndim == 0 else nu


def refined_nu_residual(cfg: EikonalConfig, state: AsymptoticState, t, r):
    """nu + eps G mu U / (4 t), which removes the leading part of nu."""
    st = _state_for(cfg, state)
    f = optical_field(cfg, st, t, r)
    U = st.U(cfg.s(f.t), f.q)
    out = f.nu + cfg.epsilon * st.G / (4.0 * f.t) * f.mu * U
    return float(out) if out.ndim == 0 else out


def _direction_dependent(state: AsymptoticState) -> bool:
    metric_varies = state.metric is not None and state.metric.kind is MetricKind.GENERAL_LINEARIZED
    return (not state.data.angular.is_constant) or metric_varies


def tangent_basis(omega) -> tuple[np.ndarray, np.ndarray]:
    w = check_unit(omega)
    seed = np.eye(3)[int(np.argmin(np.abs(w)))]
    e1 = seed - np.dot(seed, w) * w
    e1 /= np.linalg.norm(e1)
    return e1, np.cross(w, e1)


def lambda_fd(cfg: EikonalConfig, state: AsymptoticState, t, r, omega=None, step: float = 1e-4):
    """(d_i - omega_i d_r) q by central differences along great circles through omega.

    Returns shape (..., 3).  Exactly zero when q cannot depend on omega.
    """
    w = check_unit(cfg.omega if omega is None else omega)
    t, r = np.broadcast_arrays(np.asarray(t, dtype=float), np.asarray(r, dtype=float))
    out = np.zeros(t.shape + (3,))
    if not _direction_dependent(state):
        return out
    for e in tangent_basis(w):
        qs = []
        for sign in (1.0, -1.0):
            wk = np.cos(step) * w + sign * np.sin(step) * e
            wk /= np.linalg.norm(wk)
            ck = EikonalConfig(cfg.epsilon, cfg.delta, cfg.ode_tol, tuple(wk))
            qs.append(optical_field(ck, state.at_omega(wk), t, r).q)
        out += ((qs[0] - qs[1]) / (2.0 * step) / r)[..., None] * e
    return out


def invert_q(cfg: EikonalConfig, state: AsymptoticState, t: float, q_target: float,
             tol: float = 1e-10) -> float:
    """r with q(t, r) = q_target, using monotonicity of q in r."""
    if q_target < -t:
        raise InputDomainError("q_target must be >= -t")
    R = state.R
    if q_target <= -R:
        return t + q_target  # exact linear region
    st = _state_for(cfg, state)

    def g(r):
        return float(optical_field(cfg, st, t, r).q) - q_target

    lo = max(0.0, t - R)
    hi = t + abs(q_target) + 10.0 * R
    glo, ghi = g(lo), g(hi)
    if glo > 0 or ghi < 0:
        raise InputDomainError("no bracket for q_target within [0, t + |q| + 10R]")
    r = brentq(g, lo, hi, xtol=1e-14 * max(1.0, t), rtol=1e-15, maxiter=200)
    if abs(g(r)) > tol:
        raise InputDomainError("inversion did not reach the requested tolerance in q")
    return r


def write_samples_csv(path, f: OpticalField) -> None:
    """CSV ``t,r,q,nu,mu,q_t,q_r,t0,t1`` with one row per sample point."""
    from pathlib import Path

    cols = [np.ravel(c) for c in (f.t, f.r, f.q, f.nu, f.mu, f.q_t, f.q_r, f.t0, f.t1)]
    rows = ["t,r,q,nu,mu,q_t,q_r,t0,t1"]
    rows += [",".join(format(float(v), ".17g") for v in vals) for vals in zip(*cols)]
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    p.write_text("\n".join(rows) + "\n")
