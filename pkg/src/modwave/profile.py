"""Asymptotic profile, approximate solution and its residuals.

    u_app(t, x) = eps / r * eta(t) * psi(r / t) * U(eps ln t - delta, q(t, r))

All derivatives up to second order are assembled by the chain rule from the
closed forms in ``reduced`` and the characteristic data (q, nu, nu_r) from
``eikonal``.  For the radial wave operator the identity
``u_tt - c^2 (u_rr + 2 u_r / r) = (w_tt - c^2 w_rr) / r`` with ``w = r u`` is
used, and the near-cancellation ``q_t^2 - q_r^2 = mu nu`` is formed
analytically, so the residual keeps full relative precision even at the
``t^-3`` scale.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .eikonal import EikonalConfig, OpticalField, _direction_dependent, _state_for, lambda_fd, optical_field
from .errors import InputDomainError, UnsupportedOperationError
from .model import Metric, MetricKind, check_unit
from .reduced import AsymptoticState

# ---------------------------------------------------------------------------
# cutoffs


def smoothstep(y, deriv: int = 0):
    """Quintic smoothstep 6y^5 - 15y^4 + 10y^3 clamped to [0, 1], and its derivatives."""
    y = np.clip(np.asarray(y, dtype=float), 0.0, 1.0)
    if deriv == 0:
        return y**3 * (10.0 - 15.0 * y + 6.0 * y * y)
    if deriv == 1:
        return 30.0 * y * y * (1.0 - y) ** 2
    if deriv == 2:
        return 60.0 * y * (1.0 - y) * (1.0 - 2.0 * y)
    raise InputDomainError("smoothstep derivatives up to order 2 only")


def psi(x, band=(0.5, 0.75, 1.25, 1.5), deriv: int = 0):
    """Plateau cutoff: 1 on [band[1], band[2]], 0 outside (band[0], band[3])."""
    a, b, c, d = band
    x = np.asarray(x, dtype=float)
    rise = smoothstep((x - a) / (b - a), deriv) / (b - a) ** deriv
    fall = smoothstep((d - x) / (d - c), deriv) * (-1.0 / (d - c)) ** deriv
    if deriv == 0:
        return np.where(x < b, rise, np.where(x > c, fall, 1.0))
    return np.where(x < b, rise, np.where(x > c, fall, 0.0))


def eta(t, T_R: float, deriv: int = 0):
    """Switch-on cutoff: 0 for t <= T_R, 1 for t >= 2 T_R."""
    return smoothstep((np.asarray(t, dtype=float) - T_R) / T_R, deriv) / T_R**deriv


def default_T_R(R: float, epsilon: float, delta: float) -> float:
    """max(4R, min(exp((delta + 0.1) / eps), 20))."""
    grow = (delta + 0.1) / epsilon
    return max(4.0 * R, min(math.exp(grow) if grow < 700 else math.inf, 20.0))


# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ProfileEvaluator:
    cfg: EikonalConfig
    state: AsymptoticState
    T_R: Optional[float] = None
    psi_band: tuple = (0.5, 0.75, 1.25, 1.5)
    fd_step: float = 0.05
    metric: Optional[Metric] = None

    def __post_init__(self):
        object.__setattr__(self, "state", _state_for(self.cfg, self.state))
        if self.T_R is None:
            object.__setattr__(self, "T_R", default_T_R(self.state.R, self.cfg.epsilon, self.cfg.delta))
        if not self.T_R > 0:
            raise InputDomainError("T_R must be positive")
        a, b, c, d = self.psi_band
        if not 0 < a < b < c < d:
            raise InputDomainError("psi_band break points must be increasing and positive")
        if self.metric is None:
            m = self.state.metric if self.state.metric is not None else Metric.sound_speed(-0.5 * self.state.G)
            object.__setattr__(self, "metric", m)


@dataclass
class ProfileJet:
    """u_app with first and second derivatives at sample points."""

    opt: OpticalField
    U: np.ndarray
    U_t: np.ndarray
    U_r: np.ndarray
    A: np.ndarray
    Phi: np.ndarray  # eta * psi
    Phi_t: np.ndarray
    Phi_r: np.ndarray
    psi: np.ndarray
    u: np.ndarray
    u_t: np.ndarray
    u_r: np.ndarray
    u_tt: np.ndarray
    lap: np.ndarray  # u_rr + 2 u_r / r
    residual: np.ndarray  # u_tt - c(u)^2 lap, formed without cancellation
    scattering: np.ndarray  # (d_t - d_r) u + 2 eps psi A / r

    @property
    def t(self):
        return self.opt.t

    @property
    def r(self):
        return self.opt.r


def _cutoff_jet(ev: ProfileEvaluator, t, r):
    x = r / t
    p0, p1, p2 = (psi(x, ev.psi_band, k) for k in range(3))
    e0, e1, e2 = (eta(t, ev.T_R, k) for k in range(3))
    Phi = e0 * p0
    Phi_t = e1 * p0 - e0 * p1 * x / t
    Phi_r = e0 * p1 / t
    Phi_tt = e2 * p0 - 2.0 * e1 * p1 * x / t + e0 * (p2 * x * x + 2.0 * p1 * x) / (t * t)
    Phi_rr = e0 * p2 / (t * t)
    return p0, Phi, Phi_t, Phi_r, Phi_tt, Phi_rr


def U_family(st: AsymptoticState, s, q):
    """(U, U_s, U_ss); U vanishes for q <= -R and is constant in q for q >= R."""
    s, q = np.broadcast_arrays(np.asarray(s, dtype=float), np.asarray(q, dtype=float))
    out = [np.zeros(q.shape) for _ in range(3)]
    live = q > -st.R
    if np.any(live) and np.ptp(s[live]) == 0.0:
        # a single slow time: one cumulative pass serves every q
        vals = st.U_family_at_s(float(s[live].flat[0]), q[live])
        for o, v in zip(out, vals):
            o[live] = v
        return out
    inner = live & (q < st.R)
    if np.any(inner):
        vals = st.U_family(s[inner], q[inner])
        for o, v in zip(out, vals):
            o[inner] = v
    outer = q >= st.R
    if np.any(outer):
        # beyond the support only the slow time matters, so evaluate once per distinct s
        su, inv = np.unique(s[outer], return_inverse=True)
        top = np.full(su.shape, st.R)
        vals = st.U_family(su, top)
        for o, v in zip(out, vals):
            o[outer] = v[inv.ravel()]
    return out


def profile_jet(ev: ProfileEvaluator, t, r, opt: Optional[OpticalField] = None) -> ProfileJet:
    """Evaluate u_app and its derivatives; ``opt`` may be supplied to reuse characteristics."""
    cfg, st = ev.cfg, ev.state
    if opt is None:
        opt = optical_field(cfg, st, t, r)
    t, r = opt.t, opt.r
    eps, G = cfg.epsilon, st.G
    q, nu, nur, mu = opt.q, opt.nu, opt.nu_r, opt.mu
    s = cfg.s(t)
    s_t, s_tt = eps / t, -eps / (t * t)

    a, a1, _ = st.A_jet(q)
    E = np.exp(-0.5 * G * a * s)
    mu_q = 0.5 * G * a1 * s * mu
    mu_s = 0.5 * G * a * mu
    q_t, q_r = 0.5 * (mu + nu), 0.5 * (nu - mu)
    src = eps * G / (2.0 * t) * a * mu
    mu_r = mu_q * q_r
    q_rr = 0.5 * (nur - mu_r)
    box_q = 0.5 * (mu_s * s_t + 2.0 * mu_q * nu + src)  # q_tt - q_rr

    U, Us, Uss = U_family(st, s, q)
    Uq = a * E
    Uqq = a1 * (1.0 - 0.5 * G * a * s) * E
    Usq = -0.5 * G * a * a * E

    U_t = Us * s_t + Uq * q_t
    U_r = Uq * q_r
    p0, Phi, Phi_t, Phi_r, Phi_tt, Phi_rr = _cutoff_jet(ev, t, r)

    with np.errstate(divide="ignore", invalid="ignore"):
        inv_r = np.where(r > 0, 1.0 / r, 0.0)
    w = eps * Phi * U
    u = w * inv_r
    c_prime = ev.metric.c_prime0 if ev.metric.kind is MetricKind.SOUND_SPEED else np.nan
    c2m1 = c_prime * u * (2.0 + c_prime * u)  # c(u)^2 - 1

    q_tt = box_q + q_rr
    U_tt = Uss * s_t * s_t + 2.0 * Usq * s_t * q_t + Uqq * q_t * q_t + Us * s_tt + Uq * q_tt
    U_rr = Uqq * q_r * q_r + Uq * q_rr
    w_t = eps * (Phi_t * U + Phi * U_t)
    w_r = eps * (Phi_r * U + Phi * U_r)
    w_tt = eps * (Phi_tt * U + 2.0 * Phi_t * U_t + Phi * U_tt)
    w_rr = eps * (Phi_rr * U + 2.0 * Phi_r * U_r + Phi * U_rr)

    # U_tt - c^2 U_rr grouped so the O(1) parts cancel analytically
    box_U = (Uss * s_t * s_t + 2.0 * Usq * s_t * q_t + Us * s_tt
             + Uqq * (mu * nu - c2m1 * q_r * q_r) + Uq * (box_q - c2m1 * q_rr))
    c2 = 1.0 + c2m1
    res_w = eps * ((Phi_tt - c2 * Phi_rr) * U + 2.0 * (Phi_t * U_t - c2 * Phi_r * U_r) + Phi * box_U)

    # (d_t - d_r) u + 2 eps psi A / r, using U_t - U_r = U_s s_t + mu U_q = U_s s_t - 2A
    scat = (eps * ((Phi_t - Phi_r) * U + Phi * Us * s_t + 2.0 * a * (p0 - Phi)) * inv_r
            + w * inv_r * inv_r)

    return ProfileJet(
        opt=opt, U=U, U_t=U_t, U_r=U_r, A=a, Phi=Phi, Phi_t=Phi_t, Phi_r=Phi_r, psi=p0, u=u,
        u_t=w_t * inv_r, u_r=w_r * inv_r - w * inv_r * inv_r,
        u_tt=w_tt * inv_r, lap=w_rr * inv_r,
        residual=res_w * inv_r, scattering=scat,
    )


def _scalar(x):
    x = np.asarray(x)
    return float(x) if x.ndim == 0 else x


def eval_U(ev: ProfileEvaluator, t, r):
    """U(eps ln t - delta, q(t, r))."""
    if np.any(np.asarray(t) <= 0):
        raise InputDomainError("t must be positive")
    f = optical_field(ev.cfg, ev.state, t, r)
    return _scalar(ev.state.U(ev.cfg.s(f.t), f.q))


def eval_u_app(ev: ProfileEvaluator, t, r):
    """eps / r * eta(t) psi(r/t) U; zero for t <= T_R and outside the psi band."""
    t, r = np.broadcast_arrays(np.asarray(t, dtype=float), np.asarray(r, dtype=float))
    if np.any(t < 0) or np.any(r < 0):
        raise InputDomainError("u_app needs t >= 0 and r >= 0")
    out = np.zeros(t.shape)
    on = (t > ev.T_R) & (r > ev.psi_band[0] * t) & (r < ev.psi_band[3] * t) & (r > t - ev.state.R)
    if np.any(on):
        tt, rr = t[on], r[on]
        f = optical_field(ev.cfg, ev.state, tt, rr)
        cut = eta(tt, ev.T_R) * psi(rr / tt, ev.psi_band)
        out[on] = ev.cfg.epsilon / rr * cut * ev.state.U(ev.cfg.s(tt), f.q)
    return _scalar(out)


def scattering_identity_residual(ev: ProfileEvaluator, t, r):
    """(d_t - d_r) u_app + 2 eps psi(r/t) A(q) / r."""
    return _scalar(profile_jet(ev, t, r).scattering)


def eikonal_residual(ev: ProfileEvaluator, t, r):
    """g~(eps U / r)^{ab} q_a q_b with q_0 = q_t and q_i = lambda_i + omega_i q_r."""
    cfg, st = ev.cfg, ev.state
    f = optical_field(cfg, st, t, r)
    U = st.U(cfg.s(f.t), f.q)
    u = cfg.epsilon * U / f.r
    lam = lambda_fd(cfg, st, f.t, f.r) if _direction_dependent(st) else np.zeros(f.t.shape + (3,))
    lam2 = np.sum(lam * lam, axis=-1)
    base = f.mu * f.nu - lam2  # Minkowski part: q_t^2 - q_r^2 - |lambda|^2
    if ev.metric.kind is MetricKind.SOUND_SPEED:
        cp = ev.metric.c_prime0
        out = base - cp * u * (2.0 + cp * u) * (f.q_r**2 + lam2)
    else:
        w = np.asarray(cfg.omega)
        dq = np.concatenate([f.q_t[..., None], lam + f.q_r[..., None] * w], axis=-1)
        out = base + u * np.einsum("...a,ab,...b->...", dq, ev.metric.g_lin, dq)
    return _scalar(out)


def eikonal_leading_terms(ev: ProfileEvaluator, t, r):
    """mu (nu + eps G mu U / (4t)) + eps G (t - r) mu^2 U / (4 t r)."""
    cfg, st = ev.cfg, ev.state
    f = optical_field(cfg, st, t, r)
    U = st.U(cfg.s(f.t), f.q)
    eg = cfg.epsilon * st.G
    out = f.mu * (f.nu + eg * f.mu * U / (4.0 * f.t)) + eg * (f.t - f.r) * f.mu**2 * U / (4.0 * f.t * f.r)
    return _scalar(out)


def pde_residual(ev: ProfileEvaluator, t, r, method: str = "transport"):
    """u_tt - c(u)^2 (u_rr + 2 u_r / r) for u = u_app (sound-speed metric).

    ``method="transport"`` uses exact second derivatives from the characteristic
    transport of nu and nu_r.  ``method="fd"`` differentiates the analytic first
    derivatives by central differences with step ``fd_step * sqrt(max(1, t)) * 1e-3``.
    """
    if ev.metric.kind is not MetricKind.SOUND_SPEED:
        raise UnsupportedOperationError("the PDE residual needs the full sound-speed nonlinearity")
    t, r = np.broadcast_arrays(np.asarray(t, dtype=float), np.asarray(r, dtype=float))
    if np.any(r < 1e-6):
        raise InputDomainError("the PDE residual is evaluated only away from the origin (r >= 1e-6)")
    if method == "transport":
        return _scalar(profile_jet(ev, t, r).residual)
    if method != "fd":
        raise InputDomainError(f"unknown method {method!r}")
    h = ev.fd_step * np.sqrt(np.maximum(1.0, t)) * 1e-3
    centre = profile_jet(ev, t, r)
    tp, tm = profile_jet(ev, t + h, r), profile_jet(ev, t - h, r)
    rp, rm = profile_jet(ev, t, r + h), profile_jet(ev, t, r - h)
    u_tt = (tp.u_t - tm.u_t) / (2.0 * h)
    u_rr = (rp.u_r - rm.u_r) / (2.0 * h)
    cp = ev.metric.c_prime0
    c2 = (1.0 + cp * centre.u) ** 2
    return _scalar(u_tt - c2 * (u_rr + 2.0 * centre.u_r / r))
