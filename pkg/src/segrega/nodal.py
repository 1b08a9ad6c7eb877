"""Nodal geometry of segregated states.

Every source (a polar density state, the modulus of a harmonic field, or a
synthetic label model) is resampled on a Cartesian raster of the disk.  Two
label maps are kept:

* ``labels``: dominant species where the top density exceeds the threshold,
  ``UNASSIGNED`` inside the numerical interface corridor;
* ``filled``: the dominant species wherever any density is positive, with the
  remaining corridor filled by the nearest labelled pixel.  Interfaces are the
  boundaries between filled labels, i.e. the medial line of the corridor.

Multiple points are clusters of pixels that see at least three filled labels
within two pixels.  The interface network plus the circle is then checked as
a planar graph.
"""

from __future__ import annotations

import json
import logging
import math
from collections import Counter
from dataclasses import dataclass, field
from typing import Callable, Sequence

import networkx as nx
import numpy as np
from scipy import ndimage
from scipy.interpolate import RegularGridInterpolator

from .errors import (
    DisconnectedRegion,
    EulerViolation,
    FitFailure,
    GeometryError,
    IdentityViolation,
    MissingRegion,
    UnclassifiableMultiset,
    UnstableMultiplicity,
)

log = logging.getLogger(__name__)

UNASSIGNED = -1
OUTSIDE = -2
THRESHOLD_REL = 1e-3
MP_WINDOW = 2  # "graph distance 2"
MP_MERGE = 3  # delta_mp in pixels
BOUNDARY_MARGIN = 4  # pixels; candidates closer to the circle belong to boundary zeros
EXPONENT_TOL = 0.1
FIT_RESIDUAL_MAX = 0.15

K6_CLASSES = {
    (6,): "SIX",
    (4, 4): "FOUR_FOUR",
    (3, 5): "THREE_FIVE",
    (3, 3, 4): "FOUR_THREE_THREE",
    (3, 3, 3, 3): "QUAD_TRIPLE",
}


@dataclass
class SpeciesRaster:
    """k nonnegative fields on an n x n Cartesian raster of [-1, 1]^2."""

    fields: np.ndarray  # (k, n, n), index [species, iy, ix]
    zeros: np.ndarray  # boundary zero angles, zero i opens species i's arc
    kind: str = "synthetic"
    sampler: Callable | None = None  # (k, ...) values at complex points
    state: object | None = None  # originating DensityGrid, if any
    field: object | None = None  # originating FourierField, if any
    amplitude: float = 1.0
    cell: float | None = None  # native grid spacing of the source

    @property
    def k(self) -> int:
        return self.fields.shape[0]

    @property
    def n(self) -> int:
        return self.fields.shape[1]

    @property
    def h(self) -> float:
        return 2.0 / self.n

    @property
    def coords(self) -> np.ndarray:
        return -1.0 + (np.arange(self.n) + 0.5) * self.h

    @property
    def inside(self) -> np.ndarray:
        x = self.coords
        return x[None, :] ** 2 + x[:, None] ** 2 < 1.0

    def points(self) -> np.ndarray:
        x = self.coords
        return x[None, :] + 1j * x[:, None]

    def sample(self, z) -> np.ndarray:
        """Species values at complex points ``z`` (shape (k,) + z.shape)."""
        z = np.asarray(z, dtype=complex)
        if self.sampler is not None:
            return self.sampler(z)
        x = self.coords
        interp = RegularGridInterpolator((x, x), np.moveaxis(self.fields, 0, -1),
                                         bounds_error=False, fill_value=None)
        pts = np.stack([z.imag.ravel(), z.real.ravel()], axis=-1)
        vals = interp(pts)
        return np.moveaxis(vals, -1, 0).reshape((self.k,) + z.shape)

    def total(self, z) -> np.ndarray:
        return self.sample(z).sum(axis=0)


# ---------------------------------------------------------------------------
# sources


def polar_sampler(state) -> Callable:
    """Bilinear interpolation of a polar density state at complex points."""
    g = state.grid
    r_ext = np.concatenate([[0.0], g.r, [1.0]])
    th_ext = np.concatenate([g.theta, [2.0 * math.pi]])
    k = state.k
    data = np.empty((k, len(r_ext), len(th_ext)))
    core = np.concatenate([state.u, state.u[:, :, :1]], axis=2)
    data[:, 1:-1] = core
    data[:, 0] = state.u[:, 0].mean(axis=1)[:, None]
    data[:, -1] = np.concatenate([state.boundary, state.boundary[:, :1]], axis=1)
    interps = RegularGridInterpolator((r_ext, th_ext), np.moveaxis(data, 0, -1),
                                      bounds_error=False, fill_value=None)

    def sampler(z):
        z = np.asarray(z, dtype=complex)
        r = np.clip(np.abs(z), 0.0, 1.0)
        th = np.mod(np.angle(z), 2.0 * math.pi)
        vals = interps(np.stack([r.ravel(), th.ravel()], axis=-1))
        return np.moveaxis(vals, -1, 0).reshape((k,) + z.shape)

    return sampler


def alternating_modulus(state) -> Callable:
    """|sum_j (-1)^j u_j| of a polar state, sampled at complex points.

    In the segregated limit this equals U; at finite mu it stays close to the
    limit inside the interaction core around multiple points, where U itself
    is smeared out.
    """
    sampler = polar_sampler(state)
    signs = np.array([(-1.0) ** (j + 1) for j in range(state.k)])
    return lambda z: np.abs(np.tensordot(signs, sampler(np.asarray(z, dtype=complex)), axes=1))


def raster_from_state(state, n: int | None = None) -> SpeciesRaster:
    n = n or 2 * state.grid.n_r + 1
    sampler = polar_sampler(state)
    x = -1.0 + (np.arange(n) + 0.5) * 2.0 / n
    z = x[None, :] + 1j * x[:, None]
    fields = np.maximum(sampler(z), 0.0)
    fields[:, np.abs(z) >= 1.0] = 0.0
    datum = state.datum
    zeros = datum.zeros if datum is not None else _zeros_from_boundary(state.boundary, state.grid.theta)
    return SpeciesRaster(fields, np.asarray(zeros), "density", sampler, state=state,
                         amplitude=state.amplitude, cell=state.grid.dr)


def _zeros_from_boundary(boundary: np.ndarray, theta: np.ndarray) -> np.ndarray:
    # start of each species' support: first positive sample after a zero run
    out = []
    for b in boundary:
        pos = b > 0
        starts = np.flatnonzero(pos & ~np.roll(pos, 1))
        out.append(theta[starts[0]] - 0.5 * (theta[1] - theta[0]) if len(starts) else 0.0)
    return np.mod(np.array(out), 2.0 * math.pi)


def raster_from_field(field, datum=None, n: int = 257, zeros=None) -> SpeciesRaster:
    """Split |psi| into species by the nodal domains of psi.

    Each nodal domain is matched to the boundary arcs it touches.  When every
    domain touches exactly one arc the labels are species indices; otherwise
    the labels enumerate the domains (fewer regions than arcs).
    """
    from .harmonic import eval_field

    x = -1.0 + (np.arange(n) + 0.5) * 2.0 / n
    z = x[None, :] + 1j * x[:, None]
    inside = np.abs(z) < 1.0
    psi = np.where(inside, eval_field(field, np.where(inside, z, 0.0)), 0.0)
    if zeros is None and datum is not None:
        zeros = datum.zeros
    if zeros is None:
        raise ValueError("boundary zeros are required to label nodal domains")
    zeros = np.sort(np.mod(np.asarray(zeros, dtype=float), 2.0 * math.pi))
    k = len(zeros)
    comp = np.zeros(psi.shape, dtype=int)
    sign_of = {}
    ncomp = 0
    for sign in (1.0, -1.0):
        lab, nl = ndimage.label((sign * psi > 0) & inside, structure=np.ones((3, 3)))
        comp[lab > 0] = lab[lab > 0] + ncomp
        sign_of.update({c + ncomp: sign for c in range(1, nl + 1)})
        ncomp += nl
    # probe each arc just inside the rim
    h = 2.0 / n
    arc_comp = []
    for i in range(k):
        a, b = zeros[i], zeros[(i + 1) % k]
        if b <= a:
            b += 2.0 * math.pi
        probe = (1.0 - 2.5 * h) * np.exp(1j * 0.5 * (a + b))
        iy = min(max(int((probe.imag + 1.0) / h), 0), n - 1)
        ix = min(max(int((probe.real + 1.0) / h), 0), n - 1)
        arc_comp.append(int(comp[iy, ix]))
    kept = list(dict.fromkeys(c for c in arc_comp if c > 0))
    label_of = {c: i for i, c in enumerate(kept)}
    nlab = len(kept)
    fields = np.zeros((nlab, n, n))
    absval = np.abs(psi)
    for c, i in label_of.items():
        fields[i][comp == c] = absval[comp == c]
    signs = np.array([sign_of[c] for c in kept])
    # nearest same-sign domain per pixel, so each species only sees its own lobe
    owner = {}
    for sign in (1.0, -1.0):
        mine = np.isin(comp, [c for c in kept if sign_of[c] == sign])
        idx = ndimage.distance_transform_edt(~mine, return_distances=False, return_indices=True)
        owner[sign] = comp[idx[0], idx[1]]
    kept_arr = np.array(kept)

    def sampler(zz, _f=field, _s=signs):
        zz = np.asarray(zz, dtype=complex)
        v = np.asarray(eval_field(_f, zz), dtype=float)
        iy = np.clip(((zz.imag + 1.0) / h).astype(int), 0, n - 1)
        ix = np.clip(((zz.real + 1.0) / h).astype(int), 0, n - 1)
        own = np.where(v >= 0, owner[1.0][iy, ix], owner[-1.0][iy, ix])
        shape = (-1,) + (1,) * zz.ndim
        mask = own[None] == kept_arr.reshape(shape)
        return np.where(mask, np.maximum(_s.reshape(shape) * v[None], 0.0), 0.0)

    rast = SpeciesRaster(fields, zeros, "psi", sampler, field=field,
                         amplitude=float(np.max(absval)) or 1.0, cell=h)
    rast.signs = signs
    return rast


def raster_from_labels(labels: np.ndarray, zeros, k: int | None = None) -> SpeciesRaster:
    """One-hot raster from a label map (``UNASSIGNED``/``OUTSIDE`` for none)."""
    labels = np.asarray(labels)
    k = k or int(labels.max()) + 1
    fields = np.stack([(labels == i).astype(float) for i in range(k)])
    return SpeciesRaster(fields, np.asarray(zeros, dtype=float), "labels", amplitude=1.0)


def raster_from_functions(funcs: Sequence[Callable], zeros, n: int = 257) -> SpeciesRaster:
    """Raster from per-species callables of complex points."""
    x = -1.0 + (np.arange(n) + 0.5) * 2.0 / n
    z = x[None, :] + 1j * x[:, None]
    inside = np.abs(z) < 1.0

    def sampler(zz):
        zz = np.asarray(zz, dtype=complex)
        return np.stack([np.maximum(np.asarray(f(zz), dtype=float), 0.0) for f in funcs])

    fields = sampler(z)
    fields[:, ~inside] = 0.0
    amp = float(fields.max()) or 1.0
    return SpeciesRaster(fields, np.asarray(zeros, dtype=float), "synthetic", sampler, amplitude=amp)


# ---------------------------------------------------------------------------
# partition types


@dataclass
class MultiplePoint:
    location: tuple[float, float]
    multiplicity: int
    on_boundary: bool = False
    labels: tuple[int, ...] = ()
    local_phase: float | None = None
    fit_exponent: float | None = None

    @property
    def z(self) -> complex:
        return complex(*self.location)

    def to_dict(self) -> dict:
        return {
            "location": list(self.location),
            "multiplicity": self.multiplicity,
            "on_boundary": self.on_boundary,
            "labels": [int(v) for v in self.labels],
            "local_phase": self.local_phase,
            "fit_exponent": self.fit_exponent,
        }


@dataclass
class Interface:
    labels: tuple[int, int]
    endpoints: tuple[str, ...]
    polyline: np.ndarray  # (m, 2) points in (x1, x2)
    npix: int

    @property
    def midpoint(self) -> complex:
        mid = self.polyline[len(self.polyline) // 2]
        return complex(mid[0], mid[1])

    def to_dict(self) -> dict:
        return {
            "labels": [int(v) for v in self.labels],
            "endpoints": list(self.endpoints),
            "polyline": [[float(a), float(b)] for a, b in self.polyline],
        }


@dataclass
class NodalPartition:
    raster: SpeciesRaster
    labels: np.ndarray
    filled: np.ndarray
    threshold: float
    multiple_points: list[MultiplePoint] = field(default_factory=list)
    boundary_points: list[MultiplePoint] = field(default_factory=list)
    interfaces: list[Interface] = field(default_factory=list)
    problems: list[str] = field(default_factory=list)

    @property
    def k(self) -> int:
        return len(self.raster.zeros)

    @property
    def n_regions(self) -> int:
        return int(self.raster.k)

    @property
    def zeros(self) -> np.ndarray:
        return self.raster.zeros

    @property
    def state(self):
        return self.raster.state

    @property
    def all_multiple_points(self) -> list[MultiplePoint]:
        """Interior multiple points and boundary zeros with multiplicity >= 3."""
        return list(self.multiple_points) + [b for b in self.boundary_points if b.multiplicity >= 3]

    def to_dict(self) -> dict:
        return {
            "k": self.k,
            "n_regions": self.n_regions,
            "source": self.raster.kind,
            "threshold": self.threshold,
            "raster": self.raster.n,
            "zeros": [float(v) for v in self.zeros],
            "regions_rle": rle_encode(self.labels),
            "multiple_points": [m.to_dict() for m in self.multiple_points],
            "boundary_points": [m.to_dict() for m in self.boundary_points],
            "interfaces": [i.to_dict() for i in self.interfaces],
            "problems": list(self.problems),
        }


def rle_encode(labels: np.ndarray) -> list[list[int]]:
    """Row-major run-length encoding as ``[[value, count], ...]``."""
    flat = labels.ravel()
    change = np.flatnonzero(np.diff(flat)) + 1
    starts = np.concatenate([[0], change])
    ends = np.concatenate([change, [len(flat)]])
    return [[int(flat[a]), int(b - a)] for a, b in zip(starts, ends)]


def rle_decode(runs, n: int) -> np.ndarray:
    flat = np.concatenate([np.full(c, v, dtype=int) for v, c in runs])
    return flat.reshape(n, n)


# ---------------------------------------------------------------------------
# extraction


def _fill_nearest(labels: np.ndarray, inside: np.ndarray) -> np.ndarray:
    missing = (labels < 0) & inside
    if not missing.any():
        return labels.copy()
    have = labels >= 0
    if not have.any():
        return labels.copy()
    _, (iy, ix) = ndimage.distance_transform_edt(~have, return_indices=True)
    out = labels.copy()
    out[missing] = labels[iy[missing], ix[missing]]
    return out


def _neighbour_label_sets(filled: np.ndarray, inside: np.ndarray, w: int) -> np.ndarray:
    """Number of distinct labels in the (2w+1)^2 window around each pixel."""
    kmax = int(filled.max()) + 1
    count = np.zeros(filled.shape, dtype=int)
    for lab in range(kmax):
        present = ndimage.maximum_filter((filled == lab) & inside, size=2 * w + 1, mode="constant")
        count += present
    return count


def extract_partition(source, threshold: float | None = None, datum=None,
                      n: int | None = None, check: bool = True) -> NodalPartition:
    """Label map, multiple points and interfaces of a segregated state.

    ``source`` may be a :class:`~segrega.pde.DensityGrid`, a
    :class:`~segrega.harmonic.FourierField` (taken as |psi|, requires
    ``datum`` or its zeros) or a :class:`SpeciesRaster`.
    """
    from .harmonic import FourierField
    from .pde import DensityGrid

    if isinstance(source, DensityGrid):
        rast = raster_from_state(source, n)
    elif isinstance(source, FourierField):
        rast = raster_from_field(source, datum, n or 257)
    elif isinstance(source, SpeciesRaster):
        rast = source
    else:
        raise TypeError(f"unsupported source {type(source).__name__}")
    threshold = THRESHOLD_REL * rast.amplitude if threshold is None else threshold
    inside = rast.inside
    top = rast.fields.max(axis=0)
    arg = rast.fields.argmax(axis=0)
    labels = np.where(top > threshold, arg, UNASSIGNED)
    labels[~inside] = OUTSIDE
    filled = np.where(top > 0.0, arg, UNASSIGNED)
    filled[~inside] = OUTSIDE
    filled = _fill_nearest(filled, inside)
    part = NodalPartition(rast, labels, filled, threshold)

    problems = []
    for i in range(rast.k):
        if not np.any(labels == i):
            problems.append(f"MissingRegion: species {i + 1} has an empty region")
            continue
        _, ncomp = ndimage.label(filled == i, structure=np.ones((3, 3)))
        if ncomp > 1:
            problems.append(f"DisconnectedRegion: region {i + 1} splits into {ncomp} components")
    part.problems = problems
    if check:
        for msg in problems:
            if msg.startswith("MissingRegion"):
                raise MissingRegion(msg)
        for msg in problems:
            if msg.startswith("DisconnectedRegion"):
                raise DisconnectedRegion(msg)

    _detect_multiple_points(part)
    _trace_interfaces(part)
    return part


def _pixel_xy(rast: SpeciesRaster, iy, ix) -> np.ndarray:
    x = rast.coords
    return x[np.asarray(ix)] + 1j * x[np.asarray(iy)]


def _labels_near(part: NodalPartition, z: complex, radius: float) -> set[int]:
    rast = part.raster
    pts = rast.points()
    sel = (np.abs(pts - z) < radius) & rast.inside
    vals = part.filled[sel]
    return {int(v) for v in np.unique(vals) if v >= 0}


def _detect_multiple_points(part: NodalPartition) -> None:
    rast = part.raster
    h = rast.h
    inside = rast.inside
    count = _neighbour_label_sets(part.filled, inside, MP_WINDOW)
    rad = np.abs(rast.points())
    cand = (count >= 3) & inside & (rad < 1.0 - BOUNDARY_MARGIN * h)
    merged = ndimage.binary_dilation(cand, structure=np.ones((3, 3)), iterations=MP_MERGE // 2 + 1)
    lab, nclus = ndimage.label(merged, structure=np.ones((3, 3)))
    mps = []
    for c in range(1, nclus + 1):
        iy, ix = np.nonzero(cand & (lab == c))
        if len(iy) == 0:
            continue
        zc = complex(np.mean(_pixel_xy(rast, iy, ix)))
        # radius must cover the candidate cluster plus the window
        spread = float(np.max(np.abs(_pixel_xy(rast, iy, ix) - zc))) if len(iy) > 1 else 0.0
        r0 = spread + (MP_WINDOW + 2) * h
        labs = _labels_near(part, zc, r0)
        if len(labs) < 3:
            continue
        mps.append(MultiplePoint((zc.real, zc.imag), len(labs), False, tuple(sorted(labs))))
    mps.sort(key=lambda m: m.location)
    part.multiple_points = mps


def _rdp(points: np.ndarray, eps: float) -> np.ndarray:
    """Douglas-Peucker decimation of a polyline."""
    if len(points) < 3:
        return points
    a, b = points[0], points[-1]
    ab = b - a
    L = math.hypot(*ab)
    if L == 0:
        d = np.hypot(*(points - a).T)
    else:
        d = np.abs(ab[0] * (points[:, 1] - a[1]) - ab[1] * (points[:, 0] - a[0])) / L
    i = int(np.argmax(d))
    if d[i] > eps:
        left = _rdp(points[: i + 1], eps)
        right = _rdp(points[i:], eps)
        return np.vstack([left[:-1], right])
    return np.vstack([a, b])


def _order_pixels(pts: np.ndarray, start: complex) -> np.ndarray:
    """Greedy nearest-neighbour walk through pixel centres from ``start``."""
    remaining = list(range(len(pts)))
    cur = int(np.argmin(np.abs(pts - start)))
    order = [cur]
    remaining.remove(cur)
    while remaining:
        rem = np.array(remaining)
        j = int(rem[np.argmin(np.abs(pts[rem] - pts[cur]))])
        order.append(j)
        remaining.remove(j)
        cur = j
    return pts[order]


def _trace_interfaces(part: NodalPartition) -> None:
    rast = part.raster
    h = rast.h
    filled = part.filled
    inside = rast.inside
    k = part.k
    zeros_z = np.exp(1j * part.zeros)
    mps = part.multiple_points
    excl = [(m.z, _exclusion_radius(part, m)) for m in mps]
    pts_all = rast.points()

    # pixels on a two-label boundary (4-neighbourhood)
    pairs: dict[tuple[int, int], np.ndarray] = {}
    for dy, dx in ((0, 1), (1, 0)):
        a = filled
        b = np.roll(filled, (-dy, -dx), axis=(0, 1))
        valid = inside & np.roll(inside, (-dy, -dx), axis=(0, 1)) & (a >= 0) & (b >= 0) & (a != b)
        if dy:
            valid[-1, :] = False
        else:
            valid[:, -1] = False
        for lo, hi in set(zip(np.minimum(a, b)[valid].tolist(), np.maximum(a, b)[valid].tolist())):
            sel = valid & (np.minimum(a, b) == lo) & (np.maximum(a, b) == hi)
            m = pairs.setdefault((lo, hi), np.zeros(filled.shape, dtype=bool))
            m |= sel
            m |= np.roll(sel, (dy, dx), axis=(0, 1))

    interfaces = []
    problems = part.problems
    for (lo, hi), mask in sorted(pairs.items()):
        m = mask.copy()
        for zc, rr in excl:
            m &= np.abs(pts_all - zc) >= rr
        lab, ncomp = ndimage.label(m, structure=np.ones((3, 3)))
        for c in range(1, ncomp + 1):
            iy, ix = np.nonzero(lab == c)
            if len(iy) < 3:
                continue
            pts = _pixel_xy(rast, iy, ix)
            ends = []
            for q, (zc, rr) in enumerate(excl):
                if np.min(np.abs(pts - zc)) < rr + 2.5 * h:
                    ends.append(f"q{q}")
            rim = np.abs(pts) > 1.0 - (BOUNDARY_MARGIN + 2) * h
            for zr in _rim_contacts(pts[rim]):
                dang = np.abs(np.angle(zeros_z * np.conj(zr)))
                z_i = int(np.argmin(dang))
                if dang[z_i] < max(8.0 * h, 0.05):
                    ends.append(f"z{z_i}")
                else:
                    problems.append(
                        f"interface {lo + 1}|{hi + 1} meets the circle at angle "
                        f"{np.angle(zr):.3f}, away from every boundary zero"
                    )
            start = zeros_z[int(ends[0][1:])] if ends and ends[0].startswith("z") else (
                excl[int(ends[0][1:])][0] if ends else pts[0])
            ordered = _order_pixels(pts, start)
            xy = np.column_stack([ordered.real, ordered.imag])
            poly = _rdp(xy, h)
            interfaces.append(Interface((lo, hi), tuple(ends), poly, len(iy)))
    part.interfaces = interfaces

    # boundary zeros: multiplicity = incident interfaces + 1
    deg = Counter(e for itf in interfaces for e in set(itf.endpoints))
    bpts = []
    for i, zz in enumerate(zeros_z):
        d = deg.get(f"z{i}", 0)
        labs = (int((i - 1) % k), i)
        bpts.append(MultiplePoint((zz.real, zz.imag), d + 1, True, labs))
    part.boundary_points = bpts


def _rim_contacts(pts: np.ndarray, gap: float = 0.1) -> list[complex]:
    """Unit vectors of the angular clusters of rim pixels."""
    if len(pts) == 0:
        return []
    ang = np.sort(np.mod(np.angle(pts), 2.0 * math.pi))
    jumps = np.diff(np.concatenate([ang, [ang[0] + 2.0 * math.pi]]))
    cuts = np.flatnonzero(jumps > gap)
    if len(cuts) == 0:
        return [complex(np.exp(1j * ang).mean() / abs(np.exp(1j * ang).mean()))]
    out = []
    # clusters run between consecutive cuts, wrapping around
    starts = (cuts + 1) % len(ang)
    for a, b in zip(starts, np.roll(cuts, -1)):
        idx = np.arange(a, b + 1) if a <= b else np.concatenate([np.arange(a, len(ang)), np.arange(0, b + 1)])
        v = np.exp(1j * ang[idx]).mean()
        out.append(complex(v / abs(v)))
    return out


def _exclusion_radius(part: NodalPartition, mp: MultiplePoint) -> float:
    return (MP_WINDOW + MP_MERGE) * part.raster.h


# ---------------------------------------------------------------------------
# multiplicity, graph, identity


def multiplicity(partition: NodalPartition, p, r: float | None = None) -> int:
    """Number of regions meeting B_r(p), stable over radii r, r/2, r/4."""
    z = p if isinstance(p, complex) else complex(*p)
    h = partition.raster.h
    r = r if r is not None else 8.0 * h
    counts = [len(_labels_near(partition, z, rr)) for rr in (r, r / 2.0, r / 4.0)]
    if len(set(counts)) != 1:
        raise UnstableMultiplicity(f"multiplicity at {z} varies with radius: {counts}")
    return counts[0]


@dataclass
class PartitionGraph:
    graph: nx.MultiGraph
    n: int
    m_edges: int
    f: int
    interface_count: int
    is_tree: bool
    leaves: int

    @property
    def euler(self) -> int:
        return self.n - self.m_edges + self.f

    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "m": self.m_edges,
            "f": self.f,
            "euler": self.euler,
            "interfaces": self.interface_count,
            "is_tree": self.is_tree,
            "leaves": self.leaves,
            "adjacency": {str(v): sorted(str(u) for u in self.graph.neighbors(v)) for v in self.graph.nodes},
        }


def build_graph(partition: NodalPartition, strict: bool = True) -> PartitionGraph:
    """Planar graph of interfaces plus boundary arcs.

    Vertices: interior multiple points and the k boundary zeros.  Edges: the
    interfaces and the k boundary arcs.  Faces: the regions plus the outside.
    """
    k = partition.k
    G = nx.MultiGraph()
    for i in range(k):
        G.add_node(f"z{i}")
    for q in range(len(partition.multiple_points)):
        G.add_node(f"q{q}")
    tree = nx.MultiGraph()
    tree.add_nodes_from(G.nodes)
    bad = []
    for itf in partition.interfaces:
        ends = list(itf.endpoints)
        if len(ends) != 2:
            bad.append(f"interface {itf.labels} has endpoints {ends}")
            continue
        G.add_edge(ends[0], ends[1], kind="interface", labels=itf.labels)
        tree.add_edge(ends[0], ends[1])
    for i in range(k):
        G.add_edge(f"z{i}", f"z{(i + 1) % k}", kind="arc", species=i)
    n = G.number_of_nodes()
    m = G.number_of_edges()
    f = partition.n_regions + 1
    simple = nx.Graph(tree)
    is_tree = (
        tree.number_of_edges() == simple.number_of_edges()
        and nx.is_connected(tree)
        and nx.is_tree(simple)
    ) if tree.number_of_nodes() else False
    leaves = sum(1 for v in tree.nodes if tree.degree(v) == 1)
    pg = PartitionGraph(G, n, m, f, tree.number_of_edges(), is_tree, leaves)
    if strict and (bad or pg.euler != 2):
        raise EulerViolation(
            f"n - m + f = {n} - {m} + {f} = {pg.euler} != 2" + (f"; {bad}" if bad else "")
        )
    return pg


def verify_multiplicity_identity(partition: NodalPartition, strict: bool = True) -> dict:
    """Compare sum (m(p) - 2) over Z_3 with k - 2 (or 2 rho - 2 - k for rho regions)."""
    k = partition.k
    rho = partition.n_regions
    zs = partition.all_multiple_points
    total = sum(mp.multiplicity - 2 for mp in zs)
    expected = 2 * rho - 2 - k
    graph = build_graph(partition, strict=False)
    interior = len(partition.multiple_points)
    degree_ok = all(
        graph.graph.degree(f"q{q}") == mp.multiplicity for q, mp in enumerate(partition.multiple_points)
    )
    report = {
        "k": k,
        "regions": rho,
        "sum_index": total,
        "expected": expected,
        "identity_holds": total == expected,
        "z3_count": len(zs),
        "interior_z3": interior,
        "euler": graph.euler,
        "euler_holds": graph.euler == 2,
        "tree": graph.is_tree,
        "interface_count": graph.interface_count,
        "expected_interface_count": k + interior - 1,
        "tree_count_holds": graph.interface_count == k + interior - 1,
        "degree_matches_multiplicity": degree_ok,
        "z3_nonempty": (len(zs) >= 1) if k >= 3 else True,
        "z3_bound": (1 <= len(zs) <= k - 2) if k >= 3 else len(zs) == 0,
        "multiplicities": sorted(mp.multiplicity for mp in zs),
    }
    checks = ["identity_holds", "euler_holds"]
    if rho == k:
        # a full partition: the interface network is a tree
        checks += ["tree", "tree_count_holds", "z3_nonempty", "z3_bound"]
    if partition.raster.kind == "psi":
        s = k // 2
        interior_m = [mp.multiplicity for mp in partition.multiple_points]
        report["interior_even"] = all(m % 2 == 0 for m in interior_m)
        report["interior_count_bound"] = interior <= s - 1
        report["saturated_all_four"] = interior < s - 1 or all(m == 4 for m in interior_m)
        checks += ["interior_even", "interior_count_bound", "saturated_all_four"]
    report["checks"] = checks
    report["passed"] = all(report[key] for key in checks)
    if strict and not report["identity_holds"]:
        raise IdentityViolation(
            f"sum of (m(p) - 2) = {total} but expected {expected}", dump=graph.to_dict()
        )
    return report


def classify_k6(partition: NodalPartition) -> str:
    """Name of the six-species configuration realised by the multiplicities."""
    if partition.k != 6:
        raise GeometryError(f"classification needs k = 6, got {partition.k}")
    ms = tuple(sorted(mp.multiplicity for mp in partition.all_multiple_points))
    return classify_multiset(ms)


def classify_multiset(ms) -> str:
    key = tuple(sorted(int(m) for m in ms))
    try:
        return K6_CLASSES[key]
    except KeyError:
        raise UnclassifiableMultiset(
            f"multiplicities {list(key)} match none of the five six-species configurations"
        ) from None


# ---------------------------------------------------------------------------
# local diagnostics


def _circle(z0: complex, rr: float, n: int = 512) -> tuple[np.ndarray, np.ndarray]:
    th = 2.0 * math.pi * (np.arange(n) + 0.5) / n
    return th, z0 + rr * np.exp(1j * th)


def local_exponent_fit(U: Callable, p, h: int | None = None, r: float | None = None,
                       max_residual: float = FIT_RESIDUAL_MAX) -> dict:
    """Fit U ~ a r^e |cos((h/2)(theta + theta_0))| around ``p``.

    ``U`` maps complex points to values.  The exponent is the log-log slope of
    circle means over radii r, r/2, r/4; the phase is fitted on the smallest
    circle.  ``h`` defaults to the nearest integer to twice the exponent.
    """
    z0 = p.z if isinstance(p, MultiplePoint) else (p if isinstance(p, complex) else complex(*p))
    if h is None and isinstance(p, MultiplePoint):
        h = p.multiplicity
    if r is None:
        r = min(0.4, 0.9 * (1.0 - abs(z0)))
    radii = np.array([r, r / 2.0, r / 4.0])
    means, profiles = [], []
    for rr in radii:
        th, zz = _circle(z0, rr)
        vals = np.asarray(U(zz), dtype=float)
        means.append(float(np.mean(vals)))
        profiles.append((th, vals))
    if min(means) <= 0:
        raise FitFailure(f"U vanishes on a fitting circle around {z0}")
    slope = float(np.polyfit(np.log(radii), np.log(means), 1)[0])
    h_used = h if h is not None else max(int(round(2.0 * slope)), 1)
    # phase fit on every circle, residual relative to the data
    th, vals = profiles[-1]
    grid = np.linspace(-math.pi, math.pi, 2881)
    best = (math.inf, 0.0)
    half = 0.5 * h_used
    basis_all = np.abs(np.cos(half * (th[None, :] + grid[:, None])))
    amp = basis_all @ vals / np.sum(basis_all**2, axis=1)
    err = np.linalg.norm(amp[:, None] * basis_all - vals[None, :], axis=1)
    i = int(np.argmin(err))
    best = (float(err[i]), float(grid[i]))
    theta0 = best[1]
    resid = 0.0
    for th, vals in profiles:
        basis = np.abs(np.cos(half * (th + theta0)))
        a = float(basis @ vals / (basis @ basis))
        resid = max(resid, float(np.linalg.norm(a * basis - vals) / max(np.linalg.norm(vals), 1e-300)))
    out = {"exponent": slope, "theta0": theta0, "residual": resid, "h": h_used,
           "radii": radii.tolist(), "means": means,
           "exponent_ok": abs(slope - 0.5 * h_used) <= EXPONENT_TOL}
    if resid > max_residual:
        raise FitFailure(f"local expansion fit residual {resid:.3g} exceeds {max_residual}")
    return out


def _grad(f: Callable, z, step: float) -> np.ndarray:
    gx = (f(z + step) - f(z - step)) / (2.0 * step)
    gy = (f(z + 1j * step) - f(z - 1j * step)) / (2.0 * step)
    return np.array([gx, gy])


def gradient_reflection_check(sampler: Callable, points: Sequence, pairs: Sequence[tuple[int, int]],
                              offset: float, step: float | None = None,
                              multiple_points: Sequence[complex] = ()) -> dict:
    """One-sided gradients of the two species meeting at interface points.

    At each point the normal is the direction of grad(u_a - u_b); u_a's
    gradient is taken at ``offset`` inside its region and u_b's on the other
    side.  Reports the angle between them (pi when reflected) and the relative
    magnitude mismatch, and |grad U| at the interface.  When multiple points
    are given, |grad U| is also sampled along rays approaching them.
    """
    step = step or 0.25 * offset
    rows = []
    for z, (a, b) in zip(points, pairs):
        z = complex(z)
        fa = lambda w, a=a: sampler(np.asarray(w))[a]
        fb = lambda w, b=b: sampler(np.asarray(w))[b]
        diff = lambda w: fa(w) - fb(w)
        # raster midpoints sit up to a pixel off the interface; snap onto it
        for _ in range(8):
            nvec = _grad(diff, z, step)
            nn = float(np.hypot(*nvec))
            if nn == 0:
                break
            dz = float(diff(z)) / nn
            z -= dz * complex(nvec[0], nvec[1]) / nn
            if abs(dz) < 1e-3 * step:
                break
        if nn == 0:
            continue
        nz = complex(nvec[0], nvec[1]) / nn
        ga = _grad(fa, z + offset * nz, step)
        gb = _grad(fb, z - offset * nz, step)
        na, nb = float(np.hypot(*ga)), float(np.hypot(*gb))
        cosang = float(np.dot(ga, gb) / max(na * nb, 1e-300))
        total = lambda w: sampler(np.asarray(w)).sum(axis=0)
        gU = float(np.hypot(*_grad(total, z + offset * nz, step)))
        rows.append({
            "point": [z.real, z.imag],
            "labels": [int(a), int(b)],
            "angle": float(math.acos(max(-1.0, min(1.0, cosang)))),
            "magnitude_mismatch": abs(na - nb) / max(na, nb, 1e-300),
            "grad_U": gU,
        })
    decay = []
    total = lambda w: sampler(np.asarray(w)).sum(axis=0)
    for mp in multiple_points:
        mp = complex(mp)
        prof = []
        for dist in (0.2, 0.1, 0.05):
            th, zz = _circle(mp, dist, 64)
            g = _grad(total, zz, min(step, 0.25 * dist))
            prof.append([dist, float(np.mean(np.hypot(*g)))])
        decay.append({"point": [mp.real, mp.imag], "profile": prof})
    return {
        "interface_points": rows,
        "max_angle_defect": max((math.pi - r["angle"] for r in rows), default=0.0),
        "max_magnitude_mismatch": max((r["magnitude_mismatch"] for r in rows), default=0.0),
        "min_grad_U": min((r["grad_U"] for r in rows), default=0.0),
        "multiple_point_decay": decay,
    }


def interface_samples(partition: NodalPartition, min_distance: float = 0.15):
    """Midpoints of interfaces, kept away from multiple points and the circle."""
    pts, pairs = [], []
    away = [m.z for m in partition.all_multiple_points]
    for itf in partition.interfaces:
        z = itf.midpoint
        if abs(z) > 1.0 - min_distance:
            continue
        if any(abs(z - q) < min_distance for q in away):
            continue
        pts.append(z)
        pairs.append(itf.labels)
    return pts, pairs


def partition_json(partition: NodalPartition, extra: dict | None = None) -> str:
    data = partition.to_dict()
    if extra:
        data.update(extra)
    return json.dumps(data, indent=2)


def partition_from_dict(data: dict, check: bool = True) -> NodalPartition:
    """Rebuild a partition from its exported label map and re-run extraction."""
    n = int(data["raster"])
    labels = rle_decode(data["regions_rle"], n)
    k_regions = int(data.get("n_regions", data["k"]))
    rast = raster_from_labels(np.where(labels >= 0, labels, -1), data["zeros"], k_regions)
    return extract_partition(rast, threshold=0.5, check=check)


def interfaces_csv(partition: NodalPartition) -> str:
    lines = ["interface,label_a,label_b,x1,x2"]
    for i, itf in enumerate(partition.interfaces):
        for x1, x2 in itf.polyline:
            lines.append(f"{i},{itf.labels[0] + 1},{itf.labels[1] + 1},{x1:.17g},{x2:.17g}")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# synthetic partitions

# Reference trees for the five six-species configurations, zeros at j*pi/3.
# Interior vertices are given in polar form (radius, angle).
K6_TREES = {
    "SIX": ([(0.0, 0.0)], [("q0", f"z{j}") for j in range(6)]),
    "FOUR_FOUR": (
        [(0.3, math.pi), (0.3, 0.0)],
        [("q0", "z2"), ("q0", "z3"), ("q0", "z4"), ("q0", "q1"),
         ("q1", "z5"), ("q1", "z0"), ("q1", "z1")],
    ),
    "THREE_FIVE": (
        [(0.45, math.pi + math.pi / 6), (0.15, math.pi / 6)],
        [("q0", "z3"), ("q0", "z4"), ("q0", "q1"),
         ("q1", "z5"), ("q1", "z0"), ("q1", "z1"), ("q1", "z2")],
    ),
    "FOUR_THREE_THREE": (
        [(0.0, 0.0), (0.5, math.pi / 2), (0.5, -math.pi / 2)],
        [("q0", "z0"), ("q0", "z3"), ("q0", "q1"), ("q0", "q2"),
         ("q1", "z1"), ("q1", "z2"), ("q2", "z4"), ("q2", "z5")],
    ),
    "QUAD_TRIPLE": (
        [(0.6, math.pi / 6), (0.35, 5 * math.pi / 9), (0.35, -4 * math.pi / 9), (0.6, 7 * math.pi / 6)],
        [("q0", "z0"), ("q0", "z1"), ("q0", "q1"), ("q1", "z2"), ("q1", "q2"),
         ("q2", "z5"), ("q2", "q3"), ("q3", "z3"), ("q3", "z4")],
    ),
}


def synthetic_tree_raster(vertices, edges, zeros, n: int = 257, width: float = 1.0) -> SpeciesRaster:
    """Partition cut out by straight interfaces of a planar tree.

    ``vertices`` are interior points (complex or (x1, x2)); edges join tokens
    ``"q<i>"`` (vertex i) and ``"z<j>"`` (boundary zero j).  Species j owns the
    face touching the arc from zero j to zero j+1; its density is the distance
    to the interface set.
    """
    zeros = np.sort(np.mod(np.asarray(zeros, dtype=float), 2.0 * math.pi))
    k = len(zeros)
    verts = [v if isinstance(v, complex) else complex(*v) for v in vertices]

    def point(tok: str) -> complex:
        idx = int(tok[1:])
        return verts[idx] if tok[0] == "q" else complex(np.exp(1j * zeros[idx]))

    x = -1.0 + (np.arange(n) + 0.5) * 2.0 / n
    z = x[None, :] + 1j * x[:, None]
    inside = np.abs(z) < 1.0
    h = 2.0 / n
    dist = np.full(z.shape, np.inf)
    for a, b in edges:
        za, zb = point(a), point(b)
        d = zb - za
        t = np.clip(((z - za) * np.conj(d)).real / max(abs(d) ** 2, 1e-300), 0.0, 1.0)
        dist = np.minimum(dist, np.abs(z - (za + t * d)))
    cut = dist <= width * h
    lab, ncomp = ndimage.label(inside & ~cut)
    fields = np.zeros((k, n, n))
    for j in range(k):
        a, b = zeros[j], zeros[(j + 1) % k]
        if b <= a:
            b += 2.0 * math.pi
        probe = (1.0 - 3.0 * h) * np.exp(1j * 0.5 * (a + b))
        iy = int((probe.imag + 1.0) / h)
        ix = int((probe.real + 1.0) / h)
        c = lab[iy, ix]
        if c == 0:
            raise GeometryError(f"arc {j} has no face in the synthetic tree")
        fields[j][lab == c] = dist[lab == c]
    return SpeciesRaster(fields, zeros, "synthetic", amplitude=float(fields.max()) or 1.0)


def k6_reference_raster(name: str, n: int = 257) -> SpeciesRaster:
    verts, edges = K6_TREES[name]
    zeros = np.arange(6) * math.pi / 3.0
    return synthetic_tree_raster([r * complex(math.cos(t), math.sin(t)) for r, t in verts], edges, zeros, n)
