"""Harmonic extension of a boundary function to the unit disk.

The extension is stored as its truncated Fourier series

    psi(r, theta) = A_0/2 + sum_j (A_j cos(j theta) + B_j sin(j theta)) r**j,

equivalently ``psi = Re F(z)`` with ``F(z) = A_0/2 + sum_j (A_j - i B_j) z**j``.
Derivatives come from F' and F'' (``grad psi = (Re F', -Im F')``).  A
Poisson-kernel quadrature is kept as an independent evaluation path.
"""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .datum import AdmissibleDatum
from .errors import NewtonDivergence, TooManyCriticalPoints, TruncationTooSmall
from .kernels import QuadratureRule, as_complex, check_interior, moebius

log = logging.getLogger(__name__)

DEFAULT_N = 256
TOL_VALUE = 1e-8
TOL_GRAD = 1e-8
TOL_ORDER = 1e-6
DEDUP_RADIUS = 1e-4
BOUNDARY_REJECT = 1e-6
TAIL_TOL = 1e-6
# coefficients below this fraction of the largest are FFT round-off
CHOP = 64 * np.finfo(float).eps


@dataclass(frozen=True)
class FourierField:
    """Truncated Fourier representation of a harmonic function on the disk."""

    A: np.ndarray
    B: np.ndarray
    tail_energy: float = 0.0
    decay_constant: float = 0.0
    source: Callable | None = field(default=None, compare=False, repr=False)

    @property
    def N(self) -> int:
        return len(self.A) - 1

    @property
    def coefficients(self) -> np.ndarray:
        """Taylor coefficients of F, lowest degree first."""
        c = self.A - 1j * self.B
        c = c.astype(complex)
        c[0] = 0.5 * self.A[0]
        return c

    @property
    def scale(self) -> float:
        """L2-type size of the field: sqrt(A_0^2/2 + sum A_j^2 + B_j^2)."""
        return math.sqrt(0.5 * self.A[0] ** 2 + float(np.sum(self.A[1:] ** 2 + self.B[1:] ** 2)))

    def boundary(self, theta):
        """Series trace on the unit circle."""
        return eval_field(self, np.exp(1j * np.asarray(theta, dtype=float)))

    def boundary_function(self) -> Callable:
        return self.source if self.source is not None else self.boundary

    def order_at_origin(self, tol_order: float = TOL_ORDER) -> int:
        """Smallest j >= 1 with A_j^2 + B_j^2 above ``tol_order**2 * scale**2``."""
        thresh = tol_order**2 * max(self.scale, 1e-300) ** 2
        energy = self.A**2 + self.B**2
        for j in range(1, self.N + 1):
            if energy[j] > thresh:
                return j
        return self.N + 1

    def dump_csv(self) -> str:
        lines = ["j,A_j,B_j"]
        lines += [f"{j},{a:.17g},{b:.17g}" for j, (a, b) in enumerate(zip(self.A, self.B))]
        return "\n".join(lines) + "\n"


def _tail_estimate(A: np.ndarray, B: np.ndarray) -> tuple[float, float]:
    """Tail energy sum_{j>N} (A_j^2 + B_j^2) by geometric octave extrapolation.

    Also returns the decay constant ``max_j j*sqrt(A_j^2+B_j^2)``.
    """
    N = len(A) - 1
    energy = A**2 + B**2
    j = np.arange(N + 1)
    decay = float(np.max(j[1:] * np.sqrt(energy[1:]))) if N >= 1 else 0.0
    if N < 4:
        return 0.0, decay
    last = float(energy[N // 2 + 1:].sum())
    prev = float(energy[N // 4 + 1: N // 2 + 1].sum())
    if last == 0.0:
        return 0.0, decay
    q = last / prev if prev > 0 else 1.0
    if q >= 1.0:
        return math.inf, decay
    return last * q / (1.0 - q), decay


def _chop(A: np.ndarray, B: np.ndarray) -> None:
    big = max(float(np.max(np.abs(A))), float(np.max(np.abs(B))), 0.0)
    if big > 0:
        A[np.abs(A) < CHOP * big] = 0.0
        B[np.abs(B) < CHOP * big] = 0.0


def coefficients_from_samples(samples: np.ndarray, N: int) -> tuple[np.ndarray, np.ndarray]:
    """A_j, B_j (j <= N) of uniformly sampled boundary data via the FFT.

    A_j = (1/pi) int f cos(j theta), B_j = (1/pi) int f sin(j theta).
    """
    n = len(samples)
    if N > n // 2:
        raise ValueError(f"truncation N={N} exceeds Nyquist limit {n // 2} of {n} samples")
    c = np.fft.rfft(samples) / n
    A = 2.0 * c.real[: N + 1]
    B = -2.0 * c.imag[: N + 1]
    B[0] = 0.0
    if N == n // 2:
        # Nyquist mode is real; its cosine coefficient is not doubled
        A[N] *= 0.5
        B[N] = 0.0
    _chop(A, B)
    return A.copy(), B.copy()


def solve_dirichlet(datum, N: int = DEFAULT_N, rule: QuadratureRule | None = None,
                    tail_tol: float = TAIL_TOL) -> FourierField:
    """Harmonic extension of ``datum`` (callable of theta) as a Fourier field.

    A :class:`TruncationTooSmall` warning is issued when the extrapolated tail
    energy exceeds ``tail_tol`` times the field energy.
    """
    if N < 1:
        raise ValueError("truncation N must be >= 1")
    if isinstance(datum, AdmissibleDatum):
        raise TypeError("pass alternating(datum) or a boundary callable, not the unsigned datum")
    rule = rule or QuadratureRule()
    samples = np.asarray(datum(rule.nodes), dtype=float)
    A, B = coefficients_from_samples(samples, N)
    tail, decay = _tail_estimate(A, B)
    fld = FourierField(A, B, tail, decay, source=datum)
    if tail > tail_tol * max(fld.scale, 1e-300) ** 2:
        warnings.warn(
            f"estimated Fourier tail energy {tail:.3g} above tolerance at N={N}",
            TruncationTooSmall,
            stacklevel=2,
        )
    return fld


def _points(p) -> np.ndarray:
    if isinstance(p, np.ndarray) and np.iscomplexobj(p):
        return p
    if isinstance(p, (complex, float, int)):
        return np.asarray(complex(p))
    arr = np.asarray(p, dtype=float)
    if arr.shape == (2,):
        return np.asarray(complex(arr[0], arr[1]))
    return arr[..., 0] + 1j * arr[..., 1]


def _polyval(c: np.ndarray, z):
    # Horner, highest degree first
    out = np.zeros_like(z, dtype=complex)
    for coef in c[::-1]:
        out = out * z + coef
    return out


def _derivs(field: FourierField, z, order: int):
    c = field.coefficients
    out = [_polyval(c, z)]
    for _ in range(order):
        c = c[1:] * np.arange(1, len(c))
        out.append(_polyval(c, z) if len(c) else np.zeros_like(z, dtype=complex))
    return out


def eval_field(field: FourierField, p):
    """psi at ``p``: a point (pair or complex) or an array of complex points."""
    z = _points(p)
    val = _polyval(field.coefficients, z).real
    return float(val) if np.ndim(val) == 0 else val


def eval_gradient(field: FourierField, p) -> np.ndarray:
    z = _points(p)
    d1 = _derivs(field, z, 1)[1]
    return np.stack([d1.real, -d1.imag], axis=-1)


def eval_hessian(field: FourierField, p) -> np.ndarray:
    z = _points(p)
    d2 = _derivs(field, z, 2)[2]
    a, b = d2.real, -d2.imag
    return np.stack([np.stack([a, b], -1), np.stack([b, -a], -1)], -2)


def poisson_eval(boundary: Callable, p, rule: QuadratureRule | None = None) -> float:
    """Direct Poisson-integral quadrature of the harmonic extension at ``p``."""
    rule = rule or QuadratureRule()
    z = check_interior(p)
    eta = rule.points
    kern = (1.0 - abs(z) ** 2) / np.abs(z - eta) ** 2
    return float(np.sum(kern * boundary(rule.nodes)) * rule.weight / (2.0 * math.pi))


def pullback_samples(boundary: Callable, p, rule: QuadratureRule) -> np.ndarray:
    """Samples of ``boundary(R_p(zeta))`` at the quadrature nodes."""
    z = as_complex(p)
    w = moebius(z, rule.points)
    return np.asarray(boundary(np.angle(w)), dtype=float)


def recenter(field: FourierField, p, N: int | None = None,
             rule: QuadratureRule | None = None) -> FourierField:
    """Fourier field of the Mobius pull-back ``psi(R_p(zeta))``.

    The pulled-back boundary function is sampled at the quadrature nodes; the
    field's source datum is used when available, otherwise its series trace.
    """
    z = check_interior(p)
    rule = rule or QuadratureRule()
    N = N or field.N
    bnd = field.boundary_function()
    samples = pullback_samples(bnd, z, rule)
    A, B = coefficients_from_samples(samples, N)
    tail, decay = _tail_estimate(A, B)

    def pulled(theta, _b=bnd, _z=z):
        return _b(np.angle(moebius(_z, np.exp(1j * np.asarray(theta, dtype=float)))))

    return FourierField(A, B, tail, decay, source=pulled)


# ---------------------------------------------------------------------------
# critical points


@dataclass(frozen=True)
class CriticalPoint:
    location: tuple[float, float]
    residual_value: float
    residual_gradient: float
    order: int

    @property
    def z(self) -> complex:
        return complex(*self.location)


def _newton(field: FourierField, z0: np.ndarray, iters: int = 200) -> np.ndarray:
    """Damped Newton on F'(z) = 0, i.e. on grad psi = 0 with the Hessian.

    For analytic F' the Newton direction -F'/F'' is also the steepest-descent
    direction of |F'|^2, so near-singular Hessians (|det| = |F''|^2 < 1e-10)
    are handled by the same direction with a capped length; every step is
    accepted only after Armijo backtracking on |F'|^2.
    """
    c1 = field.coefficients[1:] * np.arange(1, field.N + 1)
    c2 = c1[1:] * np.arange(1, len(c1))
    z = z0.astype(complex).copy()
    active = np.ones(z.shape, dtype=bool)
    for _ in range(iters):
        if not active.any():
            break
        idx = np.flatnonzero(active)
        za = z[idx]
        f1 = _polyval(c1, za)
        f2 = _polyval(c2, za) if len(c2) else np.zeros_like(za)
        singular = np.abs(f2) ** 2 < 1e-10
        safe = np.where(f2 == 0, 1.0, f2)
        step = np.where(f2 == 0, f1, f1 / safe)
        cap = np.where(singular, 0.05, 0.25)
        mag = np.abs(step)
        step = np.where(mag > cap, step * cap / np.where(mag > 0, mag, 1.0), step)
        g0 = np.abs(f1) ** 2
        t = np.ones(za.shape)
        for _ in range(40):
            trial = za - t * step
            ok = (np.abs(_polyval(c1, trial)) ** 2 <= g0 * (1.0 - 1e-4 * t)) & (
                np.abs(trial) < 1.0 - BOUNDARY_REJECT
            )
            if ok.all():
                break
            t = np.where(ok, t, 0.5 * t)
        znew = za - np.where(ok, t, 0.0) * step
        z[idx] = znew
        done = ~ok | (np.abs(znew - za) <= 1e-16 * np.maximum(1.0, np.abs(znew))) | (g0 == 0)
        active[idx[done]] = False
    return z


def find_zero_critical_points(field: FourierField, s: int | None = None, seeds: int = 64,
                              tol_value: float = TOL_VALUE, tol_grad: float = TOL_GRAD,
                              dedup_radius: float = DEDUP_RADIUS,
                              rule: QuadratureRule | None = None) -> list[CriticalPoint]:
    """Zero-level critical points of ``field`` seeded from a ``seeds x seeds`` polar grid.

    At most ``s - 1`` such points can exist when the field extends an
    alternating datum with 2s sign changes; a larger count raises
    :class:`TooManyCriticalPoints`.
    """
    scale = max(field.scale, 1e-300)
    r = (np.arange(seeds) + 0.5) / seeds * (1.0 - 2 * BOUNDARY_REJECT)
    th = 2.0 * math.pi * np.arange(seeds) / seeds
    z0 = (r[:, None] * np.exp(1j * th[None, :])).ravel()
    z0 = np.concatenate([[0.0 + 0.0j], z0])
    zf = _newton(field, z0)
    vals = np.abs(eval_field(field, zf))
    grads = np.linalg.norm(eval_gradient(field, zf), axis=-1)
    good = (vals < tol_value * scale) & (grads < tol_grad * scale) & (np.abs(zf) < 1.0 - BOUNDARY_REJECT)
    n_bad = int(np.count_nonzero(~np.isfinite(zf)))
    if n_bad:
        log.debug("%d Newton seeds diverged", n_bad)
    hits = zf[good]
    # deterministic merge: sort lexicographically, then cluster
    order = np.lexsort((hits.imag, hits.real))
    hits = hits[order]
    clusters: list[list[complex]] = []
    for h in hits:
        for cl in clusters:
            if abs(h - np.mean(cl)) < dedup_radius:
                cl.append(h)
                break
        else:
            clusters.append([h])
    found = []
    for cl in clusters:
        zc = complex(np.mean(cl))
        loc = (float(zc.real), float(zc.imag))
        rec = recenter(field, zc, rule=rule)
        found.append(
            CriticalPoint(
                location=loc,
                residual_value=float(abs(eval_field(field, zc))),
                residual_gradient=float(np.linalg.norm(eval_gradient(field, zc))),
                order=rec.order_at_origin(),
            )
        )
    found.sort(key=lambda c: c.location)
    if s is not None and len(found) > s - 1:
        raise TooManyCriticalPoints(
            f"found {len(found)} zero-level critical points but at most s-1 = {s - 1} exist; "
            "the datum is not admissible or the search is under-resolved"
        )
    return found


def boundary_sign_changes(datum, n: int = 4096) -> int:
    """Sign changes of a boundary function around the circle (always even).

    Zeros of the sampled values are skipped, so a sign change across a zero
    arc still counts once.
    """
    th = 2.0 * math.pi * np.arange(n) / n
    v = np.sign(np.asarray(datum(th), dtype=float))
    v = v[v != 0]
    if v.size == 0:
        return 0
    return int(np.count_nonzero(v != np.roll(v, 1)))


def sample_polar(field: FourierField, n_r: int = 64, n_theta: int = 128) -> str:
    """CSV ``r,theta,psi`` on a cell-centred polar grid."""
    r = (np.arange(n_r) + 0.5) / n_r
    th = 2.0 * math.pi * np.arange(n_theta) / n_theta
    R, T = np.meshgrid(r, th, indexing="ij")
    psi = eval_field(field, R * np.exp(1j * T))
    lines = ["r,theta,psi"]
    lines += [f"{a:.17g},{b:.17g},{c:.17g}" for a, b, c in zip(R.ravel(), T.ravel(), psi.ravel())]
    return "\n".join(lines) + "\n"


__all__ = [
    "FourierField",
    "CriticalPoint",
    "NewtonDivergence",
    "solve_dirichlet",
    "eval_field",
    "eval_gradient",
    "eval_hessian",
    "poisson_eval",
    "recenter",
    "pullback_samples",
    "find_zero_critical_points",
    "boundary_sign_changes",
    "sample_polar",
]
