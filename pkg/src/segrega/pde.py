"""Finite-difference solver for the competition-diffusion system on the disk.

For species i = 1..k the discrete system is

    -Lap_h u_i + mu * u_i * sum_{j != i} u_j = 0,   u_i = phi_i on r = 1,

on a cell-centred polar grid.  The nonlinear iteration lags the coupling:
each species in turn solves the linear M-matrix problem
``(-Lap_h + mu * diag(sum_{j!=i} u_j)) v = b_i`` and is relaxed toward ``v``.
The linear problems are solved by sparse LU.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .datum import AdmissibleDatum
from .errors import EmptySchedule, NegativityViolation, NonConvergence

log = logging.getLogger(__name__)

DEFAULT_GRID = (128, 256)
DEFAULT_OMEGA = 0.8
DEFAULT_MAX_ITER = 100_000
COLD_START_LIMIT = 1e2
NEGATIVITY_SLACK = 1e-8


@dataclass(frozen=True)
class PolarGrid:
    """Cell-centred polar grid: r_m = (m + 1/2) dr, theta_j = j dtheta."""

    n_r: int = DEFAULT_GRID[0]
    n_theta: int = DEFAULT_GRID[1]

    def __post_init__(self):
        if self.n_theta % 2 or self.n_theta < 64:
            raise ValueError(f"n_theta must be even and >= 64, got {self.n_theta}")
        if self.n_r < 2:
            raise ValueError(f"n_r must be >= 2, got {self.n_r}")

    @property
    def dr(self) -> float:
        return 1.0 / self.n_r

    @property
    def dtheta(self) -> float:
        return 2.0 * math.pi / self.n_theta

    @cached_property
    def r(self) -> np.ndarray:
        return (np.arange(self.n_r) + 0.5) * self.dr

    @cached_property
    def theta(self) -> np.ndarray:
        return np.arange(self.n_theta) * self.dtheta

    @property
    def shape(self) -> tuple[int, int]:
        return (self.n_r, self.n_theta)

    @property
    def size(self) -> int:
        return self.n_r * self.n_theta

    @cached_property
    def cell_area(self) -> np.ndarray:
        """Area of each cell, shape (n_r, 1); sums to pi over the grid."""
        return (self.r * self.dr * self.dtheta)[:, None]

    def xy(self) -> tuple[np.ndarray, np.ndarray]:
        R, T = np.meshgrid(self.r, self.theta, indexing="ij")
        return R * np.cos(T), R * np.sin(T)

    @cached_property
    def _stencil(self):
        """(operator, boundary coefficient) for -Lap_h with Dirichlet data at r=1.

        Radial fluxes use face radii r_{m +- 1/2}.  The innermost face sits at
        r = 0, so the across-centre neighbour (theta + pi) enters with weight
        zero.  The Dirichlet value enters through the ghost u_ghost = 2 phi - u.
        """
        nr, nt, dr, dt = self.n_r, self.n_theta, self.dr, self.dtheta
        r = self.r
        c_out = (r + 0.5 * dr) / (r * dr * dr)
        c_in = (r - 0.5 * dr) / (r * dr * dr)
        c_th = 1.0 / (r * r * dt * dt)
        idx = np.arange(nr * nt).reshape(nr, nt)
        rows, cols, vals = [], [], []
        diag = np.zeros((nr, nt))
        # angular neighbours (periodic)
        for shift in (1, -1):
            rows.append(idx.ravel())
            cols.append(np.roll(idx, -shift, axis=1).ravel())
            vals.append(np.repeat(-c_th, nt))
        diag += 2.0 * c_th[:, None]
        # outward radial neighbour
        rows.append(idx[:-1].ravel())
        cols.append(idx[1:].ravel())
        vals.append(np.repeat(-c_out[:-1], nt))
        diag[:-1] += c_out[:-1, None]
        # inward radial neighbour; m = 0 couples across the centre with weight c_in[0] = 0
        rows.append(idx[1:].ravel())
        cols.append(idx[:-1].ravel())
        vals.append(np.repeat(-c_in[1:], nt))
        diag[1:] += c_in[1:, None]
        # ghost cell outside r = 1
        diag[-1] += 2.0 * c_out[-1]
        bcoef = 2.0 * c_out[-1]
        rows.append(idx.ravel())
        cols.append(idx.ravel())
        vals.append(diag.ravel())
        A = sp.csr_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
            shape=(nr * nt, nr * nt),
        )
        return A, bcoef

    @property
    def operator(self) -> sp.csr_matrix:
        return self._stencil[0]

    @property
    def boundary_coefficient(self) -> float:
        return self._stencil[1]

    def rhs(self, boundary: np.ndarray) -> np.ndarray:
        """Right-hand side carrying Dirichlet samples ``boundary`` (n_theta,)."""
        b = np.zeros(self.shape)
        b[-1] = self.boundary_coefficient * boundary
        return b.ravel()

    def neg_laplacian(self, u: np.ndarray, boundary: np.ndarray) -> np.ndarray:
        """-Lap_h u with Dirichlet samples, shape (n_r, n_theta)."""
        return (self.operator @ u.ravel() - self.rhs(boundary)).reshape(self.shape)

    def harmonic_extension(self, boundary: np.ndarray) -> np.ndarray:
        return spla.splu(self.operator.tocsc()).solve(self.rhs(boundary)).reshape(self.shape)

    def sample(self, f) -> np.ndarray:
        """Evaluate ``f(x1, x2)`` at the cell centres."""
        x, y = self.xy()
        return f(x, y)

    def boundary_samples(self, datum: AdmissibleDatum) -> np.ndarray:
        return datum.species_values(self.theta)


@dataclass
class SolveStats:
    mu: float
    iterations: int
    residual: float
    overlap: float
    energy: float
    converged: bool
    clamped: int = 0
    interface_width: float | None = None

    def to_dict(self) -> dict:
        return {
            "mu": self.mu,
            "iterations": self.iterations,
            "residual": self.residual,
            "overlap": self.overlap,
            "energy": self.energy,
            "converged": self.converged,
            "clamped": self.clamped,
            "interface_width": self.interface_width,
        }


@dataclass
class DensityGrid:
    """k species densities on a polar grid together with their boundary samples."""

    grid: PolarGrid
    u: np.ndarray  # (k, n_r, n_theta)
    boundary: np.ndarray  # (k, n_theta)
    mu: float = 0.0
    datum: AdmissibleDatum | None = field(default=None, repr=False)

    @property
    def k(self) -> int:
        return self.u.shape[0]

    @property
    def total(self) -> np.ndarray:
        return self.u.sum(axis=0)

    @property
    def amplitude(self) -> float:
        return float(max(self.boundary.max(), 1e-300))

    def copy(self) -> "DensityGrid":
        return DensityGrid(self.grid, self.u.copy(), self.boundary.copy(), self.mu, self.datum)

    def dump_csv(self) -> str:
        R, T = np.meshgrid(self.grid.r, self.grid.theta, indexing="ij")
        head = "r,theta," + ",".join(f"u_{i + 1}" for i in range(self.k))
        cols = np.column_stack([R.ravel(), T.ravel()] + [ui.ravel() for ui in self.u])
        lines = [head] + [",".join(f"{v:.17g}" for v in row) for row in cols]
        return "\n".join(lines) + "\n"


def residual(state: DensityGrid, mu: float | None = None) -> float:
    """Infinity norm of the (non-lagged) discrete system in flux form.

    Each row is multiplied by its radius r_m, i.e. the residual of
    -(r u_r)_r - u_thetatheta / r + r mu u_i sum_j u_j.  Near the centre the
    plain rows carry weights ~ 1/(r dtheta)^2 and evaluating them already
    costs ~1e-8 in rounding at the default grid; the flux form has O(1)
    weights and equals the plain residual at the rim.
    """
    mu = state.mu if mu is None else mu
    g = state.grid
    total = state.total
    weight = g.r[:, None]
    worst = 0.0
    for i in range(state.k):
        r = g.neg_laplacian(state.u[i], state.boundary[i]) + mu * state.u[i] * (total - state.u[i])
        worst = max(worst, float(np.max(np.abs(weight * r))))
    return worst


def overlap(state: DensityGrid) -> float:
    """max_{i != j} of the discrete integral of u_i u_j."""
    area = state.grid.cell_area
    best = 0.0
    for i in range(state.k):
        for j in range(i + 1, state.k):
            best = max(best, float(np.sum(state.u[i] * state.u[j] * area)))
    return best


def energy(state: DensityGrid) -> float:
    """Discrete Dirichlet energy sum_i int |grad u_i|^2 (boundary via ghost cells)."""
    g = state.grid
    total = 0.0
    for i in range(state.k):
        u = state.u[i]
        total += float(np.sum(u * (g.operator @ u.ravel()).reshape(g.shape) * g.cell_area))
        total -= float(np.sum(u * g.rhs(state.boundary[i]).reshape(g.shape) * g.cell_area))
    return total


def interface_width(state: DensityGrid, fraction: float = 0.1) -> float:
    """Mean radial-ring width of the band where the total density is below
    ``fraction`` of its local (ring) maximum, measured along the outer half of
    the disk where interfaces are well separated.
    """
    U = state.total
    g = state.grid
    widths = []
    for m in range(g.n_r // 2, g.n_r):
        ring = U[m]
        low = ring < fraction * ring.max()
        if not low.any() or low.all():
            continue
        # count runs of low cells around the ring
        edges = np.count_nonzero(np.diff(np.concatenate([low, low[:1]]).astype(int)) == 1)
        if edges:
            widths.append(np.count_nonzero(low) / edges * g.r[m] * g.dtheta)
    return float(np.mean(widths)) if widths else 0.0


def initial_state(datum: AdmissibleDatum, grid: PolarGrid) -> DensityGrid:
    """Harmonic extension of each species: the exact solution at mu = 0."""
    bnd = grid.boundary_samples(datum)
    lu = spla.splu(grid.operator.tocsc())
    u = np.stack([lu.solve(grid.rhs(b)).reshape(grid.shape) for b in bnd])
    np.maximum(u, 0.0, out=u)
    return DensityGrid(grid, u, bnd, 0.0, datum)


def solve(datum: AdmissibleDatum, mu: float, grid: PolarGrid | None = None,
          init: DensityGrid | None = None, tol: float | None = None,
          omega: float = DEFAULT_OMEGA, max_iter: int = DEFAULT_MAX_ITER,
          allow_cold: bool = False, raise_on_failure: bool = True):
    """Solve the discrete system at interaction strength ``mu``.

    Returns ``(state, stats)``.  ``tol`` defaults to 1e-8 times the datum
    amplitude.  Starting above mu = 100 without ``init`` is refused unless
    ``allow_cold`` is set, since warm starting is part of the contract there.
    """
    if mu < 0:
        raise ValueError(f"mu must be nonnegative, got {mu}")
    grid = grid or (init.grid if init is not None else PolarGrid())
    if init is None and mu > COLD_START_LIMIT and not allow_cold:
        raise NonConvergence(
            f"cold start at mu={mu:g} is unsupported; warm start from a continuation "
            f"below mu={COLD_START_LIMIT:g}",
            mu=mu,
        )
    state = initial_state(datum, grid) if init is None else init.copy()
    state.mu = float(mu)
    state.datum = datum
    amp = state.amplitude
    tol = 1e-8 * amp if tol is None else tol
    A = grid.operator
    rhs = [grid.rhs(b) for b in state.boundary]
    clamped = 0
    res = residual(state, mu)
    it = 0
    if mu == 0.0:
        omega = 1.0
    while res > tol and it < max_iter:
        it += 1
        for i in range(state.k):
            c = (state.total - state.u[i]).ravel()
            M = (A + sp.diags(mu * c)).tocsc()
            v = spla.splu(M).solve(rhs[i]).reshape(grid.shape)
            new = (1.0 - omega) * state.u[i] + omega * v
            low = float(new.min())
            if low < -NEGATIVITY_SLACK * amp:
                raise NegativityViolation(f"species {i + 1} reached {low:.3g} at mu={mu:g}")
            neg = new < 0.0
            if neg.any():
                clamped += int(np.count_nonzero(neg))
                new[neg] = 0.0
            state.u[i] = new
        res = residual(state, mu)
        if it % 10 == 0:
            log.debug("mu=%g iteration %d residual %.3e", mu, it, res)
    stats = SolveStats(
        mu=float(mu),
        iterations=it,
        residual=res,
        overlap=overlap(state),
        energy=energy(state),
        converged=res <= tol,
        clamped=clamped,
        interface_width=interface_width(state),
    )
    log.info("mu=%g: %d iterations, residual %.3e, overlap %.3e", mu, it, res, stats.overlap)
    if not stats.converged and raise_on_failure:
        raise NonConvergence(
            f"no convergence at mu={mu:g} after {it} iterations (residual {res:.3e} > {tol:.3e})",
            mu=mu,
            result=(state, stats),
        )
    return state, stats


def continuation(datum: AdmissibleDatum, mu_schedule, grid: PolarGrid | None = None,
                 **kwargs) -> list[tuple[float, DensityGrid, SolveStats]]:
    """Solve along an increasing mu schedule, warm-starting each solve."""
    schedule = [float(m) for m in mu_schedule]
    if not schedule:
        raise EmptySchedule("mu schedule is empty")
    if any(b <= a for a, b in zip(schedule, schedule[1:])):
        raise ValueError(f"mu schedule must be strictly increasing: {schedule}")
    grid = grid or PolarGrid()
    out = []
    state = None
    for mu in schedule:
        state, stats = solve(datum, mu, grid, init=state, **kwargs)
        out.append((mu, state.copy(), stats))
    overlaps = [s.overlap for _, _, s in out]
    if any(b > a for a, b in zip(overlaps, overlaps[1:])):
        log.warning("overlap is not monotone along the schedule: %s", overlaps)
    return out


def interior_max(values: np.ndarray) -> float:
    """Max of |values| over all rings but the outermost.

    The ghost closure on the last ring is only first-order accurate in the
    normal direction, so smooth fields leave an O(1) stencil residual there;
    the grid-consistency checks look at the rings inside it.
    """
    return float(np.max(np.abs(values[..., :-1, :])))


def reference_laplacian_residual(grid: PolarGrid, amplitude: float = 1.0) -> float:
    """Max |Lap_h| of the exact harmonic r^3 cos(3 theta) on the interior rings.

    The grid-consistency yardstick for harmonicity and sign checks.
    """
    f = grid.sample(lambda x, y: x**3 - 3 * x * y * y)
    bnd = np.cos(3.0 * grid.theta)
    return amplitude * interior_max(grid.neg_laplacian(f, bnd))


def membership_checks(state: DensityGrid, tol_factor: float = 10.0) -> dict:
    """Discrete sign conditions of the segregated class.

    Reports the largest violation of -Lap u_i <= 0, of
    -Lap(u_i - sum_{j!=i} u_j) >= 0, and of u_i >= 0, plus the overlap.
    The tolerance is ``tol_factor`` times the discrete Laplacian of r^3 cos 3theta
    scaled by the datum amplitude.
    """
    g = state.grid
    lap = np.stack([g.neg_laplacian(state.u[i], state.boundary[i]) for i in range(state.k)])
    total = lap.sum(axis=0)
    sub = interior_max(np.maximum(lap, 0.0))
    sup = max(interior_max(np.maximum(-(2.0 * lap[i] - total), 0.0)) for i in range(state.k))
    neg = float(np.max(np.maximum(-state.u, 0.0)))
    tol = tol_factor * reference_laplacian_residual(g, state.amplitude)
    return {
        "subharmonic_violation": sub,
        "superharmonic_violation": sup,
        "negativity_violation": neg,
        "overlap": overlap(state),
        "tolerance": tol,
        "passed": sub <= tol and sup <= tol and neg == 0.0,
    }


def stats_json(stats: list[SolveStats]) -> str:
    return json.dumps([s.to_dict() for s in stats], indent=2)
