"""Metric family, null forms and scattering data.

The quasilinear operator is ``g~^{ab}(u) d_a d_b`` with ``g~(0)`` the wave
operator symbol ``diag(1, -1, -1, -1)``.  Only the sound-speed model
``g~^{00} = 1, g~^{ij} = -c(u)^2 delta_ij`` with ``c(u) = 1 + c' u`` is carried
at full nonlinearity; any other metric is represented by its linearization
``g^{ab} = d/du g~^{ab}(0)``, which is all the asymptotic analysis sees.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Callable, Union

import numpy as np

from .errors import ContractViolationError, InputDomainError, UnsupportedOperationError

MINKOWSKI = np.diag([1.0, -1.0, -1.0, -1.0])
_UNIT_TOL = 1e-12


def check_unit(omega) -> np.ndarray:
    """Return ``omega`` as a float array, raising if it is not a unit 3-vector."""
    w = np.asarray(omega, dtype=float)
    if w.shape != (3,) or not np.all(np.isfinite(w)):
        raise InputDomainError(f"omega must be a finite 3-vector, got {omega!r}")
    if abs(np.linalg.norm(w) - 1.0) > _UNIT_TOL:
        raise InputDomainError(f"omega must have unit length, |omega| = {np.linalg.norm(w)!r}")
    return w


class MetricKind(enum.Enum):
    SOUND_SPEED = "SoundSpeed"
    GENERAL_LINEARIZED = "GeneralLinearized"


@dataclass(frozen=True)
class Metric:
    """Quasilinear metric, stored through its linearization ``g_lin``."""

    kind: MetricKind
    c_prime0: float = 0.0
    g_lin: np.ndarray = field(default_factory=lambda: np.zeros((4, 4)))

    def __post_init__(self):
        g = np.array(self.g_lin, dtype=float)
        if g.shape != (4, 4):
            raise InputDomainError("g_lin must be a 4x4 matrix")
        if not np.array_equal(g, g.T):
            raise ContractViolationError("g_lin must be symmetric")
        if self.kind is MetricKind.SOUND_SPEED:
            expected = np.diag([0.0] + [-2.0 * self.c_prime0] * 3)
            if not np.array_equal(g, expected):
                raise ContractViolationError(
                    "sound-speed metric requires g_lin = diag(0, -2c', -2c', -2c')"
                )
        g.setflags(write=False)
        object.__setattr__(self, "g_lin", g)

    @classmethod
    def sound_speed(cls, c_prime0: float = 1.0) -> "Metric":
        g = np.diag([0.0] + [-2.0 * float(c_prime0)] * 3)
        return cls(MetricKind.SOUND_SPEED, float(c_prime0), g)

    @classmethod
    def general(cls, g_lin) -> "Metric":
        return cls(MetricKind.GENERAL_LINEARIZED, 0.0, np.asarray(g_lin, dtype=float))

    def sound_speed_of(self, u):
        """c(u) = 1 + c' u (sound-speed kind only)."""
        if self.kind is not MetricKind.SOUND_SPEED:
            raise UnsupportedOperationError("c(u) is defined only for the sound-speed metric")
        return 1.0 + self.c_prime0 * np.asarray(u, dtype=float)


def null_form_G(metric: Metric, omega) -> float:
    """G(omega) = g^{ab} w_a w_b with w = (-1, omega)."""
    w = np.concatenate(([-1.0], check_unit(omega)))
    return float(w @ metric.g_lin @ w)


def eval_gtilde(metric: Metric, u: float) -> np.ndarray:
    """Full nonlinear symbol ``diag(1, -c^2, -c^2, -c^2)`` of the sound-speed model."""
    if metric.kind is not MetricKind.SOUND_SPEED:
        raise UnsupportedOperationError("the full nonlinearity is only defined for SoundSpeed metrics")
    c = float(metric.sound_speed_of(u))
    if not abs(u) < 1.0 or c <= 0.0:
        raise InputDomainError(f"u={u!r} outside the admissible range (|u|<1, c(u)>0)")
    return np.diag([1.0, -c * c, -c * c, -c * c])


def eval_gtilde_linear(metric: Metric, u: float) -> np.ndarray:
    """First-order truncation ``g~(0) + u g^{ab}``; available for every kind."""
    return MINKOWSKI + float(u) * metric.g_lin


# ---------------------------------------------------------------------------
# radial profiles a(x), x = q / R, supported in [-1, 1]


class RadialProfile:
    """Compactly supported profile on [-1, 1] with analytic x-derivatives."""

    name = "abstract"
    # points in [-1, 1] where the profile is not analytic (quadrature panel edges)
    breakpoints = (-1.0, 1.0)

    def __call__(self, x, deriv: int = 0) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        out = np.zeros_like(x)
        inside = np.abs(x) < 1.0
        if np.any(inside):
            out[inside] = self._inside(x[inside], deriv)
        return out

    def _inside(self, x: np.ndarray, deriv: int) -> np.ndarray:
        raise NotImplementedError

    def jet(self, x) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(a, a', a'') in one pass."""
        return self(x, 0), self(x, 1), self(x, 2)


class BumpProfile(RadialProfile):
    """exp(-1 / (1 - x^2))."""

    name = "bump"
    # exp(-1/(1-x^2)) underflows to zero well before 1-x^2 reaches this level
    _floor = 1.0 / 745.0

    def _inside(self, x, deriv):
        d = 1.0 - x * x
        out = np.zeros_like(x)
        ok = d > self._floor
        d = d[ok]
        xo = x[ok]
        a = np.exp(-1.0 / d)
        if deriv == 0:
            out[ok] = a
            return out
        g1 = -2.0 * xo / d**2
        if deriv == 1:
            out[ok] = g1 * a
            return out
        if deriv == 2:
            g2 = -2.0 / d**2 - 8.0 * xo * xo / d**3
            out[ok] = (g2 + g1 * g1) * a
            return out
        raise InputDomainError("only derivatives up to order 2 are available")

    def jet(self, x):
        x = np.asarray(x, dtype=float)
        d = 1.0 - x * x
        ok = d > self._floor
        a0, a1, a2 = np.zeros_like(x), np.zeros_like(x), np.zeros_like(x)
        d, xo = d[ok], x[ok]
        a = np.exp(-1.0 / d)
        inv = 1.0 / d
        g1 = -2.0 * xo * inv * inv
        g2 = -2.0 * inv * inv - 8.0 * xo * xo * inv**3
        a0[ok], a1[ok], a2[ok] = a, g1 * a, (g2 + g1 * g1) * a
        return a0, a1, a2


class SineBumpProfile(RadialProfile):
    """cos^2(pi x / 2); C^1 at the support boundary."""

    name = "sine_bump"

    def _inside(self, x, deriv):
        if deriv == 0:
            return 0.5 * (1.0 + np.cos(np.pi * x))
        if deriv == 1:
            return -0.5 * np.pi * np.sin(np.pi * x)
        if deriv == 2:
            return -0.5 * np.pi**2 * np.cos(np.pi * x)
        raise InputDomainError("only derivatives up to order 2 are available")


class SplineProfile(RadialProfile):
    """Cubic B-spline on knots {-1, -1/2, 0, 1/2, 1}, scaled so a(0) = 1 (C^2)."""

    name = "spline"
    breakpoints = (-1.0, -0.5, 0.0, 0.5, 1.0)

    def _inside(self, x, deriv):
        y = 2.0 * x
        ay = np.abs(y)
        sgn = np.sign(y)
        inner = ay <= 1.0
        if deriv == 0:
            v = np.where(inner, 2.0 / 3.0 - ay**2 + 0.5 * ay**3, (2.0 - ay) ** 3 / 6.0)
            return 1.5 * v
        if deriv == 1:
            v = np.where(inner, -2.0 * ay + 1.5 * ay**2, -0.5 * (2.0 - ay) ** 2) * sgn
            return 1.5 * 2.0 * v
        if deriv == 2:
            v = np.where(inner, -2.0 + 3.0 * ay, 2.0 - ay)
            return 1.5 * 4.0 * v
        raise InputDomainError("only derivatives up to order 2 are available")


PROFILES: dict[str, type[RadialProfile]] = {
    cls.name: cls for cls in (BumpProfile, SineBumpProfile, SplineProfile)
}


def make_profile(name: str) -> RadialProfile:
    try:
        return PROFILES[name]()
    except KeyError:
        raise InputDomainError(f"unknown profile {name!r}; choose from {sorted(PROFILES)}") from None


# ---------------------------------------------------------------------------
# angular factors b(omega)


@dataclass(frozen=True)
class AngularFactor:
    """b(omega) = 1 + beta * (axis . omega), with its ambient gradient ``beta * axis``.

    ``beta = 0`` is the constant factor.  |beta| < 1 keeps b positive.
    """

    beta: float = 0.0
    axis: tuple = (0.0, 0.0, 1.0)

    def __post_init__(self):
        if not abs(self.beta) < 1.0:
            raise InputDomainError("angular factor needs |beta| < 1 to stay positive")
        check_unit(self.axis)

    @property
    def is_constant(self) -> bool:
        return self.beta == 0.0

    def __call__(self, omega) -> float:
        return 1.0 + self.beta * float(np.dot(self.axis, omega))

    def tangential_gradient(self, omega) -> np.ndarray:
        w = np.asarray(omega, dtype=float)
        g = self.beta * np.asarray(self.axis, dtype=float)
        return g - np.dot(g, w) * w


@dataclass(frozen=True)
class ScatteringData:
    """A(q, omega) = amplitude * a(q / R) * b(omega)."""

    profile: RadialProfile = field(default_factory=BumpProfile)
    R: float = 1.0
    amplitude: float = 1.0
    angular: AngularFactor = field(default_factory=AngularFactor)

    def __post_init__(self):
        if not (np.isfinite(self.R) and self.R >= 1.0):
            raise InputDomainError(f"support radius must satisfy R >= 1, got R={self.R!r}")
        if not np.isfinite(self.amplitude):
            raise InputDomainError("amplitude must be finite")

    def A_jet(self, q, omega):
        """(A, A_q, A_qq) at fixed omega."""
        scale = self.amplitude * self.angular(omega)
        a0, a1, a2 = self.profile.jet(np.asarray(q, dtype=float) / self.R)
        return scale * a0, scale / self.R * a1, scale / self.R**2 * a2

    def A(self, q, omega, deriv: int = 0) -> np.ndarray:
        """q-derivative of order ``deriv`` of A at fixed omega."""
        scale = self.amplitude * self.angular(omega) / self.R**deriv
        return scale * self.profile(np.asarray(q, dtype=float) / self.R, deriv)


def eval_A(data: ScatteringData, q, omega) -> np.ndarray:
    """amplitude * a(q) * b(omega); exactly zero for |q| >= R."""
    return data.A(q, check_unit(omega))


@dataclass(frozen=True)
class GeneralReducedModel:
    """Coefficients of the general reduced system, evaluated at one direction.

    Each null form may be given as a number or as a callable of omega.
    """

    G2: Union[float, Callable] = 0.0
    G3: Union[float, Callable] = 0.0
    F1: Union[float, Callable] = 0.0
    F2: Union[float, Callable] = 0.0
    f0: float = 0.0

    def at(self, omega) -> dict:
        w = check_unit(omega)
        out = {}
        for name in ("G2", "G3", "F1", "F2"):
            v = getattr(self, name)
            out[name] = float(v(w) if callable(v) else v)
        out["f0"] = float(self.f0)
        return out
