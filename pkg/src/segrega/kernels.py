"""Chebyshev polynomials, the disk automorphism and circle quadrature."""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .errors import BoundaryPoint, EmptyRule, NegativeDegree, PoleOnDisk

BOUNDARY_EPS = 1e-12
CLAMP_EPS = 1e-12
DEFAULT_NODES = 4096


def _clamp(x):
    x = np.asarray(x, dtype=float)
    return np.where(np.abs(x) <= 1.0 + CLAMP_EPS, np.clip(x, -1.0, 1.0), x)


def _recurrence(j: int, x, first):
    if j < 0:
        raise NegativeDegree(f"degree must be nonnegative, got {j}")
    x = _clamp(x)
    prev = np.ones_like(x)
    if j == 0:
        return prev if prev.ndim else float(prev)
    cur = first(x)
    for _ in range(j - 1):
        prev, cur = cur, 2.0 * x * cur - prev
    return cur if np.ndim(cur) else float(cur)


def chebyshev_T(j: int, x):
    """First-kind Chebyshev polynomial by three-term recurrence."""
    return _recurrence(j, x, lambda t: t.copy())


def chebyshev_U(j: int, x):
    """Second-kind Chebyshev polynomial by three-term recurrence."""
    return _recurrence(j, x, lambda t: 2.0 * t)


def chebyshev_T_all(n: int, x) -> np.ndarray:
    """Stack ``[T_0(x), ..., T_n(x)]`` along a new leading axis."""
    x = _clamp(x)
    out = np.empty((n + 1,) + x.shape)
    out[0] = 1.0
    if n >= 1:
        out[1] = x
    for j in range(2, n + 1):
        out[j] = 2.0 * x * out[j - 1] - out[j - 2]
    return out


def chebyshev_U_all(n: int, x) -> np.ndarray:
    """Stack ``[U_0(x), ..., U_n(x)]`` along a new leading axis."""
    x = _clamp(x)
    out = np.empty((n + 1,) + x.shape)
    out[0] = 1.0
    if n >= 1:
        out[1] = 2.0 * x
    for j in range(2, n + 1):
        out[j] = 2.0 * x * out[j - 1] - out[j - 2]
    return out


def monomial_in_T(j: int) -> np.ndarray:
    """Coefficients ``c`` with ``x**j == sum_i c[i] T_i(x)``.

    c_i = 2**(1-j) * C(j, (j-i)/2) for j-i even, with the i=0 term halved.
    """
    if j < 0:
        raise NegativeDegree(f"degree must be nonnegative, got {j}")
    c = np.zeros(j + 1)
    for i in range(j % 2, j + 1, 2):
        c[i] = math.ldexp(math.comb(j, (j - i) // 2), 1 - j)
    if j % 2 == 0:
        c[0] *= 0.5
    return c


def T_in_U(j: int) -> np.ndarray:
    """Coefficients ``d`` with ``T_j == sum_i d[i] U_i``.

    Uses T_0 = U_0, T_1 = U_1/2 and T_j = (U_j - U_{j-2})/2.
    """
    d = np.zeros(j + 1)
    if j == 0:
        d[0] = 1.0
    elif j == 1:
        d[1] = 0.5
    else:
        d[j] = 0.5
        d[j - 2] = -0.5
    return d


def monomial_in_U(j: int) -> np.ndarray:
    """Coefficients ``d`` with ``x**j == sum_i d[i] U_i(x)``."""
    c = monomial_in_T(j)
    d = np.zeros(j + 1)
    for i, ci in enumerate(c):
        if ci:
            d[: i + 1] += ci * T_in_U(i)
    return d


# ---------------------------------------------------------------------------
# disk geometry


def as_complex(p) -> complex:
    if isinstance(p, (complex, float, int, np.number)):
        return complex(p)
    x1, x2 = p
    return complex(float(x1), float(x2))


def check_interior(p, eps: float = BOUNDARY_EPS) -> complex:
    z = as_complex(p)
    if not abs(z) < 1.0 - eps:
        raise BoundaryPoint(f"point {z} is not inside the unit disk (|p| = {abs(z):.3g})")
    return z


def moebius(p, zeta):
    """Disk automorphism ``(zeta + p) / (conj(p) zeta + 1)`` sending 0 to p."""
    p = as_complex(p)
    if abs(p) >= 1.0:
        raise PoleOnDisk(f"|p| = {abs(p)} >= 1 puts the pole on the closed disk")
    zeta = np.asarray(zeta, dtype=complex)
    out = (zeta + p) / (p.conjugate() * zeta + 1.0)
    return complex(out) if out.ndim == 0 else out


# ---------------------------------------------------------------------------
# quadrature


@dataclass(frozen=True)
class QuadratureRule:
    """Uniform periodic trapezoid rule on the unit circle."""

    n_nodes: int = DEFAULT_NODES

    def __post_init__(self):
        if self.n_nodes < 1:
            raise EmptyRule("quadrature rule needs at least one node")

    @cached_property
    def nodes(self) -> np.ndarray:
        return 2.0 * math.pi * np.arange(self.n_nodes) / self.n_nodes

    @cached_property
    def points(self) -> np.ndarray:
        return np.exp(1j * self.nodes)

    @property
    def weight(self) -> float:
        return 2.0 * math.pi / self.n_nodes

    @cached_property
    def weights(self) -> np.ndarray:
        return np.full(self.n_nodes, self.weight)


def circle_integral(f, rule: QuadratureRule) -> float:
    """Integral over the circle of ``f`` (callable of theta, or node samples)."""
    if rule.n_nodes < 1:
        raise EmptyRule("empty quadrature rule")
    vals = f(rule.nodes) if callable(f) else np.asarray(f)
    return float(np.sum(vals, axis=-1) * rule.weight) if vals.ndim == 1 else np.sum(vals, axis=-1) * rule.weight
