"""Point certificates for the even-multiplicity limit configurations.

A point p inside the disk is a 2s-point of |psi_a| exactly when the
alternating datum, pulled back by the disk automorphism R_p, has vanishing
low-order moments on the circle:

    int Phi^a(R_p(zeta)) T_j(zeta_1) ds = 0,           j = 0..s-1
    int Phi^a(R_p(zeta)) zeta_2 U_{j-1}(zeta_1) ds = 0, j = 1..s-1

or equivalently all monomial moments ``zeta_1^(j-h) zeta_2^h`` of degree
``j <= s-1`` vanish.  The order-s pair (A_s, B_s) must then be nonzero.
All moments are computed by pull-back quadrature on a uniform rule.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .datum import AdmissibleDatum, AlternatingDatum
from .errors import DegenerateDatum, OddMultiplicityPresent, OddSpeciesCount, SpeciesCountNot6
from .harmonic import FourierField, eval_field, eval_gradient, eval_hessian
from .kernels import (
    QuadratureRule,
    as_complex,
    check_interior,
    chebyshev_T_all,
    chebyshev_U_all,
    monomial_in_T,
    monomial_in_U,
    moebius,
)

TOL_MOMENT_REL = 1e-8
TOL_ORDER = 1e-6
BOUNDARY_EPS = 1e-6


def _resolve(datum, s: int | None) -> tuple[Callable, int, float | None]:
    """Boundary callable, half species count and amplitude (if known)."""
    if isinstance(datum, AdmissibleDatum):
        datum = AlternatingDatum(datum)
    if isinstance(datum, AlternatingDatum):
        if s is not None and s != datum.s:
            raise ValueError(f"s={s} does not match datum with k={datum.k}")
        return datum, datum.s, datum.amplitude
    if s is None:
        raise ValueError("s is required for a bare boundary function")
    return datum, int(s), None


def default_tolerance(amplitude: float) -> float:
    """Moment tolerance: 1e-8 times the mass scale 2 pi * amplitude."""
    return TOL_MOMENT_REL * amplitude * 2.0 * math.pi


def _pullback(boundary: Callable, p: complex, rule: QuadratureRule):
    zeta = rule.points
    angles = np.angle(moebius(p, zeta))
    return zeta.real, zeta.imag, angles


@dataclass
class MomentReport:
    p: tuple[float, float]
    s: int
    cheb_T_moments: list[float] = field(default_factory=list)
    cheb_U_moments: list[float] = field(default_factory=list)
    monomial_moments: dict[tuple[int, int], float] = field(default_factory=dict)
    named_moments: dict[str, float] = field(default_factory=dict)
    tolerance: float = 0.0
    order_pair: tuple[float, float] | None = None

    @property
    def values(self) -> list[float]:
        return (
            list(self.cheb_T_moments)
            + list(self.cheb_U_moments)
            + list(self.monomial_moments.values())
            + list(self.named_moments.values())
        )

    @property
    def max_abs(self) -> float:
        vals = self.values
        return float(max(abs(v) for v in vals)) if vals else 0.0

    @property
    def verdict(self) -> bool:
        return self.max_abs < self.tolerance

    @property
    def cheb_verdict(self) -> bool:
        vals = list(self.cheb_T_moments) + list(self.cheb_U_moments)
        return max((abs(v) for v in vals), default=0.0) < self.tolerance

    @property
    def monomial_verdict(self) -> bool:
        return max((abs(v) for v in self.monomial_moments.values()), default=0.0) < self.tolerance

    def to_dict(self) -> dict:
        moments: dict = {}
        if self.cheb_T_moments:
            moments["chebyshev_T"] = list(self.cheb_T_moments)
        if self.cheb_U_moments:
            moments["chebyshev_U"] = list(self.cheb_U_moments)
        if self.monomial_moments:
            moments["monomial"] = {f"{j},{h}": v for (j, h), v in self.monomial_moments.items()}
        if self.named_moments:
            moments.update(self.named_moments)
        out = {
            "p": list(self.p),
            "s": self.s,
            "moments": moments,
            "max_abs": self.max_abs,
            "tolerance": self.tolerance,
            "verdict": self.verdict,
        }
        if self.order_pair is not None:
            out["order_pair"] = list(self.order_pair)
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


def _setup(datum, p, s, rule, tol):
    boundary, s, amp = _resolve(datum, s)
    z = check_interior(p, BOUNDARY_EPS)
    rule = rule or QuadratureRule()
    z1, z2, angles = _pullback(boundary, z, rule)
    g = np.asarray(boundary(angles), dtype=float)
    if amp is None:
        amp = float(np.max(np.abs(g))) or 1.0
    tol = default_tolerance(amp) if tol is None else tol
    return s, z, rule, z1, z2, g, tol


def _cheb_parts(g, z1, z2, s_max: int, w: float):
    T = chebyshev_T_all(s_max, z1)
    U = chebyshev_U_all(max(s_max - 1, 0), z1)
    t_moms = [float(np.sum(g * T[j]) * w) for j in range(s_max + 1)]
    u_moms = [float(np.sum(g * z2 * U[j - 1]) * w) for j in range(1, s_max + 1)]
    return t_moms, u_moms


def chebyshev_moments(datum, p, s: int | None = None, rule: QuadratureRule | None = None,
                      tol: float | None = None) -> MomentReport:
    """T-moments for j = 0..s-1 and zeta_2 U_{j-1}-moments for j = 1..s-1."""
    s, z, rule, z1, z2, g, tol = _setup(datum, p, s, rule, tol)
    t_moms, u_moms = _cheb_parts(g, z1, z2, s, rule.weight)
    return MomentReport(
        p=(z.real, z.imag),
        s=s,
        cheb_T_moments=t_moms[:s],
        cheb_U_moments=u_moms[: s - 1],
        tolerance=tol,
        order_pair=(t_moms[s] / math.pi, u_moms[s - 1] / math.pi),
    )


def monomial_moments(datum, p, s: int | None = None, rule: QuadratureRule | None = None,
                     tol: float | None = None) -> MomentReport:
    """Moments of zeta_1^(j-h) zeta_2^h for 0 <= h <= j <= s-1."""
    s, z, rule, z1, z2, g, tol = _setup(datum, p, s, rule, tol)
    moms = {}
    for j in range(s):
        for h in range(j + 1):
            moms[(j, h)] = float(np.sum(g * z1 ** (j - h) * z2**h) * rule.weight)
    return MomentReport(p=(z.real, z.imag), s=s, monomial_moments=moms, tolerance=tol)


def monomials_from_chebyshev(t_moms, u_moms, s: int) -> dict[tuple[int, int], float]:
    """Rebuild monomial moments from Chebyshev moments on the circle.

    ``t_moms[j]`` is the T_j moment (j = 0..s-1) and ``u_moms[j-1]`` the
    zeta_2 U_{j-1} moment (j = 1..s-1).  Even powers of zeta_2 are removed with
    zeta_2^2 = 1 - zeta_1^2; pure zeta_1 powers go through the T expansion of
    x^n and the remaining zeta_2 * zeta_1^n terms through the U expansion.
    """
    out = {}
    for j in range(s):
        for h in range(j + 1):
            a, b = j - h, h
            ell = b // 2
            # zeta_2^(2 ell) = sum_i C(ell, i) (-1)^i zeta_1^(2i)
            poly = np.zeros(j + 1)
            for i in range(ell + 1):
                poly[a + 2 * i] += math.comb(ell, i) * (-1) ** i
            total = 0.0
            if b % 2 == 0:
                for n, coef in enumerate(poly):
                    if coef:
                        total += coef * float(np.dot(monomial_in_T(n), t_moms[: n + 1]))
            else:
                for n, coef in enumerate(poly):
                    if coef:
                        d = monomial_in_U(n)
                        # U_kappa moment is u_moms[kappa] (index j-1 = kappa)
                        total += coef * float(np.dot(d, u_moms[: n + 1]))
            out[(j, h)] = total
    return out


def moment_report(datum, p, s: int | None = None, rule: QuadratureRule | None = None,
                  tol: float | None = None) -> MomentReport:
    """Chebyshev and monomial moments from one set of pull-back samples."""
    s, z, rule, z1, z2, g, tol = _setup(datum, p, s, rule, tol)
    t_moms, u_moms = _cheb_parts(g, z1, z2, s, rule.weight)
    moms = {}
    for j in range(s):
        for h in range(j + 1):
            moms[(j, h)] = float(np.sum(g * z1 ** (j - h) * z2**h) * rule.weight)
    return MomentReport(
        p=(z.real, z.imag),
        s=s,
        cheb_T_moments=t_moms[:s],
        cheb_U_moments=u_moms[: s - 1],
        monomial_moments=moms,
        tolerance=tol,
        order_pair=(t_moms[s] / math.pi, u_moms[s - 1] / math.pi),
    )


def is_2s_point(datum, p, rule: QuadratureRule | None = None, s: int | None = None,
                tol: float | None = None, tol_order: float = TOL_ORDER) -> tuple[bool, MomentReport]:
    """Decide whether ``p`` is a 2s-point of |psi_a|.

    All moments below ``s`` must vanish and the recentred pair (A_s, B_s)
    must not.  If the moments vanish together with (A_s, B_s), the datum
    cannot have exactly 2s sign changes and :class:`DegenerateDatum` is raised.
    """
    rep = moment_report(datum, p, s=s, rule=rule, tol=tol)
    if not rep.verdict:
        return False, rep
    if rep.cheb_verdict != rep.monomial_verdict:
        return False, rep
    boundary, s_, _ = _resolve(datum, s)
    rule = rule or QuadratureRule()
    g = boundary(np.angle(moebius(as_complex(p), rule.points)))
    scale = math.sqrt(float(np.sum(np.asarray(g) ** 2)) * rule.weight / math.pi)
    a_s, b_s = rep.order_pair
    if a_s**2 + b_s**2 <= (tol_order * scale) ** 2:
        raise DegenerateDatum(
            f"all moments below order {s_} vanish at p={rep.p} and so does (A_s, B_s); "
            "the datum does not have exactly 2s sign changes"
        )
    return True, rep


def k6_conditions(datum, p, rule: QuadratureRule | None = None,
                  tol: float | None = None) -> MomentReport:
    """The four six-species condition groups, summed species by species.

    C1 is the mass, C2 the two first moments, C3 the zeta_1^2 moment and C4
    the zeta_1 zeta_2 moment of the pulled-back signed datum.
    """
    if isinstance(datum, AlternatingDatum):
        base = datum.base
    elif isinstance(datum, AdmissibleDatum):
        base = datum
    else:
        raise TypeError("k6_conditions needs an admissible datum")
    if base.k != 6:
        raise SpeciesCountNot6(f"expected 6 species, got {base.k}")
    z = check_interior(p, BOUNDARY_EPS)
    rule = rule or QuadratureRule()
    z1, z2, angles = _pullback(None, z, rule)
    phis = base.species_values(angles)
    w = rule.weight
    weights = {"C1": np.ones_like(z1), "C2_1": z1, "C2_2": z2, "C3": z1 * z1, "C4": z1 * z2}
    named = {}
    for name, wt in weights.items():
        named[name] = float(sum((-1) ** (j + 1) * np.sum(phis[j] * wt) * w for j in range(6)))
    tol = default_tolerance(base.amplitude) if tol is None else tol
    return MomentReport(p=(z.real, z.imag), s=3, named_moments=named, tolerance=tol)


@dataclass
class DerivativeReport:
    p: tuple[float, float]
    value: float
    gradient: tuple[float, float]
    hessian: tuple[tuple[float, float], tuple[float, float]]
    bridged_moments: dict[str, float]
    tolerance: float

    @property
    def max_abs(self) -> float:
        return float(max(abs(v) for v in self.bridged_moments.values()))

    @property
    def verdict(self) -> bool:
        return self.max_abs < self.tolerance

    def to_dict(self) -> dict:
        return {
            "p": list(self.p),
            "s": 3,
            "value": self.value,
            "gradient": list(self.gradient),
            "hessian": [list(r) for r in self.hessian],
            "moments": dict(self.bridged_moments),
            "max_abs": self.max_abs,
            "tolerance": self.tolerance,
            "verdict": self.verdict,
        }


def pullback_derivatives(field: FourierField, p) -> tuple[float, np.ndarray, np.ndarray]:
    """Value, gradient and Hessian at 0 of zeta -> psi(R_p(zeta)).

    With psi = Re F and G = F o R_p:  G'(0) = (1-|p|^2) F'(p) and
    G''(0) = (1-|p|^2)^2 F''(p) - 2 conj(p) (1-|p|^2) F'(p).
    """
    z = check_interior(p, BOUNDARY_EPS)
    q = 1.0 - abs(z) ** 2
    gx = eval_gradient(field, z)
    hx = eval_hessian(field, z)
    f1 = complex(gx[0], -gx[1])
    f2 = complex(hx[0, 0], -hx[0, 1])
    g1 = q * f1
    g2 = q * q * f2 - 2.0 * z.conjugate() * q * f1
    grad = np.array([g1.real, -g1.imag])
    hess = np.array([[g2.real, -g2.imag], [-g2.imag, -g2.real]])
    return eval_field(field, z), grad, hess


def derivative_characterization(field: FourierField, p, tol: float | None = None,
                                amplitude: float | None = None) -> DerivativeReport:
    """Value, gradient and Hessian of psi_a at ``p`` and the moments they imply.

    The six-species conditions are linear images of the recentred derivatives:
    C1 = 2 pi Psi(0), C2_j = pi d_j Psi(0), C3 = (pi/4) d_11 Psi(0) + C1/2 and
    C4 = (pi/4) d_12 Psi(0).  The verdict is taken on these bridged moments, so
    it is comparable with :func:`k6_conditions` at the same tolerance.
    """
    z = check_interior(p, BOUNDARY_EPS)
    val0, grad0, hess0 = pullback_derivatives(field, z)
    c1 = 2.0 * math.pi * val0
    bridged = {
        "C1": c1,
        "C2_1": math.pi * grad0[0],
        "C2_2": math.pi * grad0[1],
        "C3": 0.25 * math.pi * hess0[0, 0] + 0.5 * c1,
        "C4": 0.25 * math.pi * hess0[0, 1],
    }
    if tol is None:
        if amplitude is None:
            src = field.boundary_function()
            amplitude = float(np.max(np.abs(src(QuadratureRule(1024).nodes)))) or 1.0
        tol = default_tolerance(amplitude)
    gx = eval_gradient(field, z)
    hx = eval_hessian(field, z)
    return DerivativeReport(
        p=(z.real, z.imag),
        value=float(eval_field(field, z)),
        gradient=(float(gx[0]), float(gx[1])),
        hessian=((float(hx[0, 0]), float(hx[0, 1])), (float(hx[1, 0]), float(hx[1, 1]))),
        bridged_moments=bridged,
        tolerance=tol,
    )


def find_2s_point(datum, rule: QuadratureRule | None = None, N: int = 256):
    """Search for a 2s-point: zero-level critical points of psi_a of order s.

    Returns ``(point, report)`` or ``(None, None)`` when no such point exists,
    which is the generic outcome.
    """
    from .harmonic import find_zero_critical_points, solve_dirichlet

    boundary, s, _ = _resolve(datum, None)
    field_ = solve_dirichlet(boundary, N=N, rule=rule)
    for cp in find_zero_critical_points(field_, s=s, rule=rule):
        try:
            ok, rep = is_2s_point(boundary, cp.location, rule=rule, s=s)
        except DegenerateDatum:
            continue
        if ok:
            return cp.location, rep
    return None, None


def reconstruct_alternating(partition, tol_factor: float = 10.0) -> dict:
    """Signed sum sum_j (-1)^j u_j of a segregated state and its harmonicity residual.

    Refused when the partition has an interior multiple point of odd
    multiplicity, since then U cannot be |psi_a|.  For polar-grid states the
    residual is the max of |Lap_h psi| relative to max|psi|, compared with
    ``tol_factor`` times the same ratio for r^3 cos 3theta on the grid.
    """
    from .pde import interior_max, reference_laplacian_residual

    if partition.k % 2:
        raise OddSpeciesCount(f"reconstruction needs even k, got {partition.k}")
    odd = [mp for mp in partition.multiple_points if not mp.on_boundary and mp.multiplicity % 2]
    if odd:
        raise OddMultiplicityPresent(
            f"interior multiple point(s) of odd multiplicity {[mp.multiplicity for mp in odd]}; "
            "U is not |psi_a|"
        )
    state = partition.state
    if state is None:
        raise ValueError("partition carries no polar density state")
    signs = np.array([(-1.0) ** (j + 1) for j in range(state.k)])
    psi = np.tensordot(signs, state.u, axes=1)
    bnd = np.tensordot(signs, state.boundary, axes=1)
    lap = state.grid.neg_laplacian(psi, bnd)
    scale = float(np.max(np.abs(psi))) or 1.0
    rel = interior_max(lap) / scale
    ref = reference_laplacian_residual(state.grid)
    return {
        "psi": psi,
        "residual": rel,
        "reference_residual": ref,
        "tolerance": tol_factor * ref,
        "passed": rel <= tol_factor * ref,
    }
