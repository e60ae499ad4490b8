"""Energies, Poincare ratios, decay fits and the end-to-end checks on solver output.

All integrals are radial: ``int f dx = 4 pi int f(r) r^2 dr`` by the trapezoid
rule on the slice grid.  Radial derivatives of grid functions use second-order
central differences (one-sided at the ends).
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from typing import Mapping, Optional, Sequence

import numpy as np

from .eikonal import optical_field
from .errors import ContractViolationError, DegenerateInputError, InputDomainError
from .model import Metric
from .profile import ProfileEvaluator, profile_jet
from .solver import RadialField, RadialGrid, Slice

FOUR_PI = 4.0 * math.pi


@dataclass(frozen=True)
class EnergyConfig:
    c0: float = 20.0
    epsilon: float = 0.05
    delta: float = 0.1
    R: float = 1.0

    def __post_init__(self):
        if not self.c0 > 0:
            raise InputDomainError("c0 must be positive")
        if not self.epsilon >= 0:
            raise InputDomainError("epsilon must be nonnegative")
        if not self.R >= 1.0:
            raise InputDomainError("R must be at least 1")


# ---------------------------------------------------------------------------
# grid helpers


def radial_integral(f, grid: RadialGrid) -> float:
    """4 pi int f r^2 dr over the grid (trapezoid)."""
    r = grid.r
    return FOUR_PI * float(np.trapezoid(np.asarray(f) * r * r, dx=grid.h))


def d_r(values, h: float) -> np.ndarray:
    return np.gradient(np.asarray(values, dtype=float), h, edge_order=2)


def _same_slice(*fields: RadialField):
    g, t = fields[0].grid, fields[0].t
    for f in fields[1:]:
        if f.grid != g or not math.isclose(f.t, t, rel_tol=1e-12, abs_tol=1e-12):
            raise ContractViolationError("fields must share one grid and time stamp")
    return g, t


# ---------------------------------------------------------------------------
# weights and energies


def sigma(q, R: float):
    return (R + np.asarray(q, dtype=float) + 1.0) ** (-1.0 / 16.0)


def weight(ecfg: EnergyConfig, t: float, r, q=None) -> np.ndarray:
    """exp(c0 eps ln t sigma(q)) for r >= t - R and 1 inside; q defaults to r - t."""
    r = np.asarray(r, dtype=float)
    q = r - t if q is None else np.asarray(q, dtype=float)
    inside = r < t - ecfg.R
    qq = np.where(inside, 0.0, q)
    w = np.exp(ecfg.c0 * ecfg.epsilon * math.log(t) * sigma(qq, ecfg.R))
    return np.where(inside, 1.0, w)


def _slice_q(ev: Optional[ProfileEvaluator], t: float, r: np.ndarray):
    """q and q_r at the nodes; the flat values r - t and 1 without an evaluator."""
    q, q_r = r - t, np.ones_like(r)
    if ev is None:
        return q, q_r
    live = r > t - ev.state.R
    if np.any(live):
        f = optical_field(ev.cfg, ev.state, t, r[live])
        q = q.copy()
        q_r = q_r.copy()
        q[live], q_r[live] = f.q, f.q_r
    return q, q_r


def weighted_energy(ecfg: EnergyConfig, metric: Metric, u_slice: RadialField, phi: RadialField,
                    phi_t: RadialField, ev: Optional[ProfileEvaluator] = None,
                    support_tol: float = 1e-10) -> float:
    """4 pi int w (phi_t^2 + c(u)^2 phi_r^2) r^2 dr with the ghost weight w.

    ``phi`` must vanish in r < t - R (two grid cells of slack), where w is set to 1.
    """
    grid, t = _same_slice(u_slice, phi, phi_t)
    r, h = grid.r, grid.h
    inner = r < t - ecfg.R - 2.0 * h
    if np.any(inner):
        leak = max(np.max(np.abs(phi.values[inner])), np.max(np.abs(phi_t.values[inner])))
        if leak > support_tol:
            raise ContractViolationError("phi does not vanish inside r < t - R", max_abs=float(leak))
    q, _ = _slice_q(ev, t, r)
    w = weight(ecfg, t, r, q)
    c2 = np.asarray(metric.sound_speed_of(u_slice.values)) ** 2
    pr = d_r(phi.values, h)
    return radial_integral(w * (phi_t.values**2 + c2 * pr**2), grid)


def flat_energy_norm(phi, phi_t, grid: RadialGrid, r_cap: Optional[float] = None) -> float:
    """||(phi_t, phi_r)||_{L^2}, optionally restricted to r <= r_cap."""
    pr = d_r(phi, grid.h)
    dens = np.asarray(phi_t) ** 2 + pr**2
    if r_cap is not None:
        dens = np.where(grid.r <= r_cap + 1e-12, dens, 0.0)
    return math.sqrt(max(radial_integral(dens, grid), 0.0))


# ---------------------------------------------------------------------------
# Poincare ratios


def _japanese(x):
    return np.sqrt(1.0 + np.asarray(x) ** 2)


def poincare_flat(phi: RadialField, t: float) -> float:
    """int <t - r>^-2 phi^2 dx / int phi_r^2 dx."""
    grid = phi.grid
    r = grid.r
    num = radial_integral(phi.values**2 / _japanese(t - r) ** 2, grid)
    den = radial_integral(d_r(phi.values, grid.h) ** 2, grid)
    if not den > 0:
        raise DegenerateInputError("zero gradient norm in the Poincare ratio")
    return num / den


def poincare_weighted(ecfg: EnergyConfig, phi: RadialField, t: float,
                      ev: Optional[ProfileEvaluator] = None) -> float:
    """int phi^2 q_r^2 <q>^-2 w dx / int phi_r^2 w dx with q, q_r and w from the optical function."""
    grid = phi.grid
    r = grid.r
    q, q_r = _slice_q(ev, t, r)
    w = weight(ecfg, t, r, q)
    num = radial_integral(phi.values**2 * q_r**2 / _japanese(q) ** 2 * w, grid)
    den = radial_integral(d_r(phi.values, grid.h) ** 2 * w, grid)
    if not den > 0:
        raise DegenerateInputError("zero gradient norm in the Poincare ratio")
    return num / den


def canonical_fields(t: float) -> dict:
    """Smooth radial test fields concentrated near the light cone r = t."""

    def bump(r):
        y = r - t
        out = np.zeros_like(r)
        m = np.abs(y) < 1.0
        out[m] = np.exp(-1.0 / (1.0 - y[m] ** 2))
        return out

    return {
        "bump": bump,
        "gaussian_shell": lambda r: np.exp(-0.5 * ((r - t) / 2.0) ** 2),
        "oscillating_shell": lambda r: np.sin(r - t) * np.exp(-0.125 * (r - t) ** 2) * r / (1.0 + r),
    }


# ---------------------------------------------------------------------------
# decay fits


@dataclass(frozen=True)
class DecayFit:
    samples: tuple  # ((t, value), ...)
    slope: float
    intercept: float
    max_residual: float

    def to_dict(self) -> dict:
        return {"slope": self.slope, "intercept": self.intercept, "max_residual": self.max_residual,
                "samples": [list(s) for s in self.samples]}


def fit_decay(samples: Sequence, min_samples: int = 4) -> DecayFit:
    """Least-squares line through (ln t, ln value)."""
    pts = [(float(t), float(v)) for t, v in samples]
    if len(pts) < min_samples:
        raise InputDomainError(f"need at least {min_samples} samples, got {len(pts)}")
    t, v = np.array(pts).T
    if np.any(v <= 0) or np.any(t <= 0) or not np.all(np.isfinite(v)):
        raise InputDomainError("decay samples need positive finite times and values")
    x, y = np.log(t), np.log(v)
    (slope, intercept), *_ = np.linalg.lstsq(np.stack([x, np.ones_like(x)], axis=1), y, rcond=None)
    resid = float(np.max(np.abs(y - slope * x - intercept)))
    return DecayFit(tuple(pts), float(slope), float(intercept), resid)


# ---------------------------------------------------------------------------
# Cauchy property of v^T


def _padded(values: np.ndarray, n: int) -> np.ndarray:
    out = np.zeros(n)
    out[: values.size] = values
    return out


def cauchy_difference(slices_1: Sequence[Slice], slices_2: Sequence[Slice],
                      common_times: Optional[Sequence[float]] = None) -> float:
    """sup over common times of ||d(v_2 - v_1)||_{L^2}.

    Both runs must share the grid spacing.  The shorter grid is extended by zeros:
    each solution vanishes identically beyond its own outer boundary.
    """
    g1, g2 = slices_1[0].grid, slices_2[0].grid
    if not g1.compatible(g2):
        raise ContractViolationError("runs use different grid spacings", h1=g1.h, h2=g2.h)
    grid = g1 if g1.n >= g2.n else g2
    by_t2 = {round(s.t, 9): s for s in slices_2}
    by_t1 = {round(s.t, 9): s for s in slices_1}
    times = sorted(set(by_t1) & set(by_t2)) if common_times is None else [round(t, 9) for t in common_times]
    if not times:
        raise ContractViolationError("the runs have no recorded time in common")
    best = 0.0
    for t in times:
        if t not in by_t1 or t not in by_t2:
            raise ContractViolationError(f"time {t!r} missing from one of the runs")
        a, b = by_t1[t], by_t2[t]
        dv = _padded(b.v.values, grid.n) - _padded(a.v.values, grid.n)
        dvt = _padded(b.v_t.values, grid.n) - _padded(a.v_t.values, grid.n)
        best = max(best, flat_energy_norm(dv, dvt, grid))
    return best


def compare_vT(pairs: Mapping[float, tuple], common_times: Optional[Mapping[float, Sequence]] = None,
               min_samples: int = 3) -> DecayFit:
    """Fit of cauchy_difference(v^{T1}, v^{T2}) against T1.

    ``pairs`` maps T1 to ``(slices_T1, slices_T2)``.
    """
    samples = []
    for T1 in sorted(pairs):
        s1, s2 = pairs[T1]
        ct = None if common_times is None else common_times.get(T1)
        samples.append((T1, cauchy_difference(s1, s2, ct)))
    return fit_decay(samples, min_samples=min_samples)


def monotone_nonincreasing(values: Sequence[float], noise: float = 0.05) -> bool:
    """True when the sequence never rises, allowing one rise within the relative noise band."""
    rises = [(a, b) for a, b in zip(values, values[1:]) if b > a]
    if not rises:
        return True
    return len(rises) == 1 and rises[0][1] <= rises[0][0] * (1.0 + noise)


def refinement_difference(coarse: Slice, fine: Slice) -> float:
    """||v_fine - v_coarse||_{L^2} on the coarse nodes; fine.h must divide coarse.h."""
    k = coarse.grid.h / fine.grid.h
    if abs(k - round(k)) > 1e-9 or round(k) < 1:
        raise ContractViolationError("grid spacings are not nested", h_coarse=coarse.grid.h, h_fine=fine.grid.h)
    if not math.isclose(coarse.t, fine.t, rel_tol=1e-12, abs_tol=1e-12):
        raise ContractViolationError("slices are recorded at different times")
    vf = fine.v.values[:: int(round(k))]
    diff = _padded(vf, max(vf.size, coarse.grid.n))[: coarse.grid.n] - coarse.v.values
    return math.sqrt(max(radial_integral(diff**2, coarse.grid), 0.0))


def convergence_ratios(slices: Sequence[Slice]) -> list:
    """Successive ratios of refinement differences for slices on grids h, h/2, h/4, ..."""
    diffs = [refinement_difference(a, b) for a, b in zip(slices, slices[1:])]
    return [a / b for a, b in zip(diffs, diffs[1:])]


# ---------------------------------------------------------------------------
# quantities of the full solution u = u_app + v


def energy_history(slices: Sequence[Slice], t_lo: float, t_hi: float) -> list:
    """(t, ||d v(t)||_{L^2}) for recorded slices with t_lo <= t <= t_hi."""
    out = []
    for s in sorted(slices, key=lambda s: s.t):
        if t_lo - 1e-9 <= s.t <= t_hi + 1e-9:
            out.append((s.t, flat_energy_norm(s.v.values, s.v_t.values, s.grid)))
    return out


def scattering_sup(ev: ProfileEvaluator, sl: Slice) -> float:
    """sup over |q| <= R of |(d_t - d_r) u + 2 eps A(q) / r| for u = u_app + v."""
    grid, t = sl.grid, sl.t
    r, h = grid.r, grid.h
    R = ev.state.R
    band = np.flatnonzero((r >= t - R) & (r <= t + 4.0 * R) & (r > 0))
    if band.size == 0:
        return 0.0
    rb = r[band]
    jet = profile_jet(ev, t, rb)
    sel = np.abs(jet.opt.q) <= R
    v_r = d_r(sl.v.values, h)[band]
    dv = sl.v_t.values[band] - v_r
    # jet.scattering carries psi A; psi = 1 on |q| <= R once t >= 4R, which the caller guarantees
    val = jet.scattering + dv + 2.0 * ev.cfg.epsilon * (1.0 - jet.psi) * jet.A / rb
    return float(np.max(np.abs(val[sel]))) if np.any(sel) else 0.0


def scattering_check(slices: Sequence[Slice], ev: ProfileEvaluator, t_lo: float, t_hi: float) -> DecayFit:
    """Decay of the scattering-identity defect of u = u_app + v over recorded t in [t_lo, t_hi]."""
    samples = [(s.t, scattering_sup(ev, s)) for s in sorted(slices, key=lambda s: s.t)
               if t_lo - 1e-9 <= s.t <= t_hi + 1e-9]
    return fit_decay(samples)


def profile_energy_defect(ev: ProfileEvaluator, sl: Slice) -> float:
    """||d(u - eps U / r)(t)||_{L^2(|x| <= 5t/4)} for u = u_app + v."""
    grid, t = sl.grid, sl.t
    r, h = grid.r, grid.h
    eps = ev.cfg.epsilon
    cap = 1.25 * t
    v_r = d_r(sl.v.values, h)
    dt_ = sl.v_t.values.copy()
    dr_ = v_r.copy()
    live = np.flatnonzero((r > t - ev.state.R) & (r <= cap + h) & (r > 0))
    if live.size:
        rl = r[live]
        jet = profile_jet(ev, t, rl)
        # u_app - eps U / r = eps (Phi - 1) U / r
        dt_[live] += eps * ((jet.Phi - 1.0) * jet.U_t + jet.Phi_t * jet.U) / rl
        dr_[live] += eps * ((jet.Phi - 1.0) * (jet.U_r - jet.U / rl) + jet.Phi_r * jet.U) / rl
    dens = np.where(r <= cap + 1e-12, dt_**2 + dr_**2, 0.0)
    return math.sqrt(max(radial_integral(dens, grid), 0.0))


def companion_energy_check(slices: Sequence[Slice], ev: ProfileEvaluator, t_lo: float, t_hi: float) -> DecayFit:
    samples = [(s.t, profile_energy_defect(ev, s)) for s in sorted(slices, key=lambda s: s.t)
               if t_lo - 1e-9 <= s.t <= t_hi + 1e-9]
    return fit_decay(samples)


# ---------------------------------------------------------------------------
# reporting


@dataclass
class CheckResult:
    name: str
    value: float  # slope or measured quantity
    target: float
    tolerance: float
    passed: bool
    samples: list = field(default_factory=list)
    note: str = ""

    @classmethod
    def slope(cls, name: str, fit: DecayFit, target: float, tol: float, note: str = "") -> "CheckResult":
        ok = bool(abs(fit.slope - target) <= tol)
        return cls(name, fit.slope, target, tol, ok, [list(s) for s in fit.samples], note)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["slope"] = d.pop("value")
        d["pass"] = d.pop("passed")
        return d


def report_json(checks: Sequence[CheckResult]) -> str:
    body = {"checks": [c.to_dict() for c in checks], "all_pass": all(c.passed for c in checks)}
    return json.dumps(body, indent=2, allow_nan=True) + "\n"
