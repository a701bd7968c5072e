"""Spline algebra in the local monomial basis ``[1, (x - x_prev), ..., (x - x_prev)^d]``.

Integer coefficient tables (falling factorials, binomials, curvature
weights) are built once per order in exact arithmetic and cached.
"""
from __future__ import annotations

from functools import lru_cache
from math import comb, factorial

import numpy as np

from .core import MAX_ORDER, RtiError, Spline, SplineConfig, ValidationError


class NonPositiveSectionLength(ValidationError):
    pass


class OutOfDomain(RtiError, ValueError):
    pass


def _check_order(d: int) -> None:
    if not 1 <= d <= MAX_ORDER:
        raise ValidationError(f"order must be in [1, {MAX_ORDER}], got {d}")


def powers(u, d: int) -> np.ndarray:
    """``[1, u, u^2, ..., u^d]`` along a new last axis, by repeated multiplication."""
    u = np.asarray(u, dtype=float)
    out = np.empty(u.shape + (d + 1,))
    out[..., 0] = 1.0
    for i in range(1, d + 1):
        out[..., i] = out[..., i - 1] * u
    return out


@lru_cache(maxsize=None)
def falling_factorials(d: int, k: int) -> np.ndarray:
    """Entry ``i`` (0-based) is ``i (i-1) ... (i-k+1)``, zero when ``i < k``."""
    vals = [factorial(i) // factorial(i - k) if i >= k else 0 for i in range(d + 1)]
    arr = np.array(vals, dtype=float)
    arr.setflags(write=False)
    return arr


@lru_cache(maxsize=None)
def _binomial_table(d: int, phi: int) -> np.ndarray:
    # [q, i] = C(i, q) for the 0-based q-th continuity entry and i-th coefficient
    tab = np.array([[comb(i, q) for i in range(d + 1)] for q in range(phi + 1)], dtype=float)
    tab.setflags(write=False)
    return tab


@lru_cache(maxsize=None)
def _curvature_weights(d: int) -> tuple[np.ndarray, np.ndarray]:
    n = d + 1
    w = np.zeros((n, n))
    expo = np.zeros((n, n), dtype=int)
    for i in range(2, n):
        for j in range(2, n):
            # 0-based i, j: (i)(i-1)(j)(j-1) / (i+j-3) u^(i+j-3)
            w[i, j] = i * (i - 1) * j * (j - 1) / (i + j - 3)
            expo[i, j] = i + j - 3
    w.setflags(write=False)
    expo.setflags(write=False)
    return w, expo


def basis_vector(x, x_prev, d: int) -> np.ndarray:
    return powers(np.asarray(x, dtype=float) - x_prev, d)


def basis_derivative(x, x_prev, d: int, k: int) -> np.ndarray:
    """k-th derivative of the basis vector with respect to ``x``."""
    if not 0 <= k <= d:
        raise ValidationError(f"derivative order must be in [0, {d}]")
    h = np.asarray(x, dtype=float) - x_prev
    p = powers(h, d)
    out = np.zeros_like(p)
    out[..., k:] = p[..., : d + 1 - k]
    return out * falling_factorials(d, k)


def continuity_matrix(u, cfg: SplineConfig) -> np.ndarray:
    """Linear map from a section's coefficients to the next section's forced head.

    ``continuity_matrix(u, cfg) @ a`` equals the value and the scaled
    derivatives ``g^(k)(u) / k!`` for ``k = 0..phi`` of the section ``a``
    evaluated at its right end. Broadcasts over leading dimensions of ``u``.
    """
    d, phi = cfg.d, cfg.phi
    u = np.asarray(u, dtype=float)
    p = powers(u, d)
    tab = _binomial_table(d, phi)
    out = np.zeros(u.shape + (phi + 1, d + 1))
    for q in range(phi + 1):
        out[..., q, q:] = tab[q, q:] * p[..., : d + 1 - q]
    return out


def continuity_vector(a_prev, u_prev: float, cfg: SplineConfig) -> np.ndarray:
    a_prev = np.asarray(a_prev, dtype=float)
    if a_prev.shape[-1] != cfg.n_coeffs:
        raise ValidationError(f"expected {cfg.n_coeffs} coefficients, got {a_prev.shape[-1]}")
    if not u_prev > 0:
        raise NonPositiveSectionLength("section length must be positive")
    return continuity_matrix(u_prev, cfg) @ a_prev


def curvature_matrix(u, d: int) -> np.ndarray:
    """Gram matrix of second derivatives of the basis over a section of length ``u``.

    ``a @ curvature_matrix(u, d) @ a`` is the integral of the squared second
    derivative of the section polynomial. Rows and columns 0 and 1 vanish.
    Broadcasts over leading dimensions of ``u``.
    """
    _check_order(d)
    u = np.asarray(u, dtype=float)
    if np.any(~(u > 0)):
        raise NonPositiveSectionLength("section length must be positive")
    w, expo = _curvature_weights(d)
    p = powers(u, 2 * d)
    return w * np.take(p, expo, axis=-1)


def section_curvature(a, m: np.ndarray) -> float:
    a = np.asarray(a, dtype=float)
    return float(a @ m @ a)


def _locate(s: Spline, x: float) -> int:
    knots = s.knots
    if not knots[0] <= x <= knots[-1]:
        raise OutOfDomain(f"x={x} outside [{knots[0]}, {knots[-1]}]")
    if x == knots[0]:
        return 0
    # section t covers (knots[t], knots[t+1]]
    return int(np.searchsorted(knots, x, side="left")) - 1


def spline_eval(s: Spline, x: float, k: int = 0) -> float:
    t = _locate(s, x)
    return float(s.sections[t] @ basis_derivative(x, s.knots[t], s.config.d, k))


def spline_eval_many(s: Spline, xs, k: int = 0) -> np.ndarray:
    xs = np.asarray(xs, dtype=float)
    return np.array([spline_eval(s, float(x), k) for x in xs.ravel()]).reshape(xs.shape)


def spline_curvature(s: Spline) -> float:
    return float(np.sum(per_section_curvature(s)))


def per_section_curvature(s: Spline) -> np.ndarray:
    a = s.coefficients()
    m = curvature_matrix(np.diff(s.knots), s.config.d)
    return np.einsum("ti,tij,tj->t", a, m, a)


def numeric_curvature(s: Spline, panels: int = 64) -> float:
    """Composite Simpson estimate of the integral of ``f''(x)^2`` over the domain.

    Each section is integrated separately with ``panels`` (rounded up to even)
    subintervals, so the result is exact up to roundoff whenever
    ``2 (d - 2) <= 3``.
    """
    if panels < 64:
        raise ValidationError("panels must be at least 64")
    panels += panels % 2
    d = s.config.d
    w = np.ones(panels + 1)
    w[1:-1:2] = 4.0
    w[2:-1:2] = 2.0
    total = 0.0
    for t, a in enumerate(s.sections):
        u = s.knots[t + 1] - s.knots[t]
        h = np.linspace(0.0, u, panels + 1)
        f2 = basis_derivative(h, 0.0, d, 2) @ a
        total += (u / panels) / 3.0 * float(w @ (f2 * f2))
    return total
