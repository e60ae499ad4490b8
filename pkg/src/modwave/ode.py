"""Batched embedded Runge-Kutta integration.

Many independent scalar-parameter IVPs are advanced together, each element with
its own step size and error control, so a sweep over thousands of sample points
costs a few hundred vectorized right-hand-side evaluations instead of thousands
of Python-level solver calls.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import NumericalError

# Dormand-Prince 5(4) tableau
_C = (0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0)
_A = (
    (),
    (1 / 5,),
    (3 / 40, 9 / 40),
    (44 / 45, -56 / 15, 32 / 9),
    (19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729),
    (9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656),
    (35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84),
)
_E = (71 / 57600, 0.0, -71 / 16695, 71 / 1920, -17253 / 339200, 22 / 525, -1 / 40)


@dataclass
class BatchResult:
    x: np.ndarray  # where each element stopped
    y: np.ndarray  # state there, shape (m, n)
    stopped: np.ndarray  # True where the ``stop`` predicate ended the element early
    steps: np.ndarray  # accepted steps per element


def _combine(coeffs, ks):
    out = None
    for a, k in zip(coeffs, ks):
        if a != 0.0:
            out = a * k if out is None else out + a * k
    return out


def dopri5_batch(rhs, x0, y0, x_end, rtol, atol, h0=None, stop=None, max_steps=10**6):
    """Integrate ``y' = rhs(x, y)`` for every column of ``y0`` from ``x0`` to ``x_end``.

    ``rhs`` receives ``x`` of shape (k,) and ``y`` of shape (m, k) for the active
    subset and returns the derivative with the shape of ``y``.  ``atol`` is a
    scalar, a per-component (m,) array or a full (m, n) array.
    ``stop(x, y)`` is checked after each accepted step and ends an element early.
    """
    x_out = np.array(x0, dtype=float, copy=True)
    y_out = np.array(y0, dtype=float, copy=True)
    m, n = y_out.shape
    x_end = np.broadcast_to(np.asarray(x_end, dtype=float), (n,)).copy()
    if np.ndim(atol) == 1:
        atol = np.asarray(atol, dtype=float).reshape(-1, 1)
    atol = np.broadcast_to(np.asarray(atol, dtype=float), (m, n))
    stopped = np.zeros(n, dtype=bool)
    steps_out = np.zeros(n, dtype=np.int64)

    idx = np.flatnonzero(x_end != x_out)
    if idx.size == 0:
        return BatchResult(x_out, y_out, stopped, steps_out)
    # compacted working copies of the unfinished elements
    x, y, xe, at = x_out[idx], y_out[:, idx], x_end[idx], atol[:, idx].copy()
    span = xe - x
    h = np.sign(span) * (np.abs(span) if h0 is None else np.minimum(np.abs(span), h0))
    k1 = rhs(x, y)
    steps = np.zeros(idx.size, dtype=np.int64)

    while idx.size:
        ks = [k1]
        for i in range(1, 7):
            ks.append(rhs(x + _C[i] * h, y + h * _combine(_A[i], ks)))
        y5 = y + h * _combine(_A[6], ks)
        err = h * _combine(_E, ks)
        scale = at + rtol * np.maximum(np.abs(y), np.abs(y5))
        enorm = np.max(np.abs(err) / scale, axis=0)
        ok = enorm <= 1.0  # NaN compares False and counts as a rejection
        x_new = x + h
        reach = ok & (np.abs(xe - x_new) <= 1e-13 * np.maximum(1.0, np.abs(xe)))
        x = np.where(ok, np.where(reach, xe, x_new), x)
        y = np.where(ok, y5, y)
        k1 = np.where(ok, ks[6], k1)
        steps += ok

        with np.errstate(divide="ignore", invalid="ignore"):
            factor = np.where(enorm > 0, 0.9 * enorm ** -0.2, 5.0)
        factor = np.clip(np.nan_to_num(factor, nan=0.2), 0.2, 5.0)
        factor = np.where(ok, factor, np.minimum(factor, 0.9))
        remaining = xe - x
        h = h * factor
        h = np.where(np.abs(h) >= np.abs(remaining), remaining, h)

        done = x == xe
        if stop is not None:
            hit = ok & ~done
            if np.any(hit):
                hit[hit] = stop(x[hit], y[:, hit])
                stopped[idx[hit]] = True
                done |= hit
        tiny = ~done & (np.abs(h) < 1e-14 * np.maximum(1.0, np.abs(x)))
        if np.any(tiny):
            raise NumericalError("step size underflow in characteristic integration",
                                 tau=float(x[tiny][0]))
        if steps.max() > max_steps:
            raise NumericalError("maximum number of steps exceeded",
                                 tau=float(x[np.argmax(steps)]))
        if np.any(done):
            fin = idx[done]
            x_out[fin], y_out[:, fin], steps_out[fin] = x[done], y[:, done], steps[done]
            keep = ~done
            idx, x, y, xe, at = idx[keep], x[keep], y[:, keep], xe[keep], at[:, keep]
            h, k1, steps = h[keep], k1[:, keep], steps[keep]
    return BatchResult(x_out, y_out, stopped, steps_out)
