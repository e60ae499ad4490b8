"""One-dimensional quadrature used by the profile integrals.

``adaptive_simpson`` is the scalar reference rule.  ``gauss_legendre`` is a
vectorized fixed rule used when many integrals of the same integrand are needed
with different upper limits (e.g. one per grid node).
"""

from __future__ import annotations

from functools import lru_cache

import numpy as np

from .errors import NumericalError


def adaptive_simpson(f, a: float, b: float, tol: float = 1e-10, max_depth: int = 48) -> float:
    """Integrate scalar ``f`` over [a, b] by adaptive Simpson with Richardson correction.

    Intervals are bisected until the local estimate ``|S2 - S1| / 15`` is below
    the share of ``tol`` proportional to the interval length.
    """
    if a == b:
        return 0.0
    sign = 1.0
    if b < a:
        a, b, sign = b, a, -1.0
    fa, fm, fb = f(a), f(0.5 * (a + b)), f(b)
    whole = (b - a) * (fa + 4.0 * fm + fb) / 6.0
    total = 0.0
    worst = 0.0
    width = b - a
    stack = [(a, b, fa, fm, fb, whole, 0)]
    while stack:
        lo, hi, flo, fmid, fhi, s, depth = stack.pop()
        mid = 0.5 * (lo + hi)
        lm, rm = 0.5 * (lo + mid), 0.5 * (mid + hi)
        flm, frm = f(lm), f(rm)
        left = (mid - lo) * (flo + 4.0 * flm + fmid) / 6.0
        right = (hi - mid) * (fmid + 4.0 * frm + fhi) / 6.0
        delta = left + right - s
        local_tol = tol * (hi - lo) / width
        # require two levels so a symmetric integrand cannot fool the first test
        if depth >= 2 and abs(delta) <= 15.0 * local_tol:
            total += left + right + delta / 15.0
            continue
        if depth >= max_depth:
            worst = max(worst, abs(delta) / 15.0)
            total += left + right + delta / 15.0
            continue
        stack.append((mid, hi, fmid, frm, fhi, right, depth + 1))
        stack.append((lo, mid, flo, flm, fmid, left, depth + 1))
    if worst > tol:
        raise NumericalError("adaptive Simpson did not converge", achieved=worst, tol=tol)
    return sign * total


@lru_cache(maxsize=8)
def _gl_nodes(order: int):
    return np.polynomial.legendre.leggauss(order)


def gauss_legendre(f, a, b, panels: int = 8, order: int = 16) -> np.ndarray:
    """Composite Gauss-Legendre integral of vectorized ``f`` over [a_i, b_i].

    ``a`` and ``b`` broadcast against each other; ``f`` receives an array of
    shape ``(n, panels * order)`` and must return the same shape.
    """
    a, b = np.broadcast_arrays(np.asarray(a, dtype=float), np.asarray(b, dtype=float))
    shape = a.shape
    a = a.reshape(-1, 1)
    b = b.reshape(-1, 1)
    x, w = _gl_nodes(order)
    edges = np.linspace(0.0, 1.0, panels + 1)
    half = 0.5 * (edges[1:] - edges[:-1])
    centre = 0.5 * (edges[1:] + edges[:-1])
    u = (centre[:, None] + half[:, None] * x[None, :]).ravel()
    wu = (half[:, None] * w[None, :]).ravel()
    nodes = a + (b - a) * u[None, :]
    vals = f(nodes)  # (n, m) or (k, n, m) for k integrands sharing the nodes
    out = (b - a)[:, 0] * (vals @ wu)
    return out.reshape(out.shape[:-1] + shape)
