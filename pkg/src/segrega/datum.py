"""Admissible boundary data on the unit circle.

A datum assigns to each of ``k`` species a nonnegative Lipschitz profile
supported on an open arc of the circle.  The closures of the arcs tile the
circle, so the total datum vanishes exactly at the ``k`` shared endpoints.
For even ``k`` the alternating combination ``sum_j (-1)**j phi_j`` (species
numbered from 1) is the boundary value of the harmonic function studied in
:mod:`segrega.harmonic`.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import (
    DatumError,
    GapOnCircle,
    NegativeProfile,
    NonLipschitzProfile,
    OddSpeciesCount,
    OverlappingSupports,
)

TWO_PI = 2.0 * math.pi
SHAPES = ("bump_sin", "bump_poly", "custom_samples")

# tiling tolerance for shared endpoints (radians)
ENDPOINT_TOL = 1e-12
DEFAULT_LIPSCHITZ_FACTOR = 1e3


def normalize_angle(theta):
    """Map angles to [0, 2pi)."""
    t = np.mod(theta, TWO_PI)
    # np.mod can return exactly 2pi for tiny negative inputs
    return np.where(t >= TWO_PI, 0.0, t)


@dataclass(frozen=True)
class Arc:
    """Counterclockwise arc from ``start`` to ``end`` (radians)."""

    start: float
    end: float

    def __post_init__(self):
        if not (0.0 <= self.start < TWO_PI):
            raise DatumError(f"arc start {self.start!r} not in [0, 2pi)")
        length = self.end - self.start
        if not (0.0 < length < TWO_PI):
            raise DatumError(f"arc length {length!r} not in (0, 2pi)")

    @property
    def length(self) -> float:
        return self.end - self.start

    @property
    def midpoint(self) -> float:
        return float(normalize_angle(0.5 * (self.start + self.end)))

    def local(self, theta):
        """Offset of ``theta`` from the arc start, lifted to [0, 2pi)."""
        return normalize_angle(np.asarray(theta, dtype=float) - self.start)

    def contains(self, theta):
        """Half-open membership test ``[start, end)`` modulo 2pi."""
        return self.local(theta) < self.length


@dataclass(frozen=True)
class BoundaryProfile:
    """Shape of one species' boundary trace on its arc.

    ``custom_samples`` holds values at the interior nodes of a uniform
    subdivision of the arc (the endpoints are implicitly zero); the profile is
    the piecewise-linear interpolant scaled by ``amplitude``.
    """

    shape: str = "bump_sin"
    amplitude: float = 1.0
    samples: tuple[float, ...] | None = None

    def __post_init__(self):
        if self.shape not in SHAPES:
            raise DatumError(f"unknown profile shape {self.shape!r}")
        if not (self.amplitude > 0.0 and math.isfinite(self.amplitude)):
            raise NegativeProfile(f"amplitude must be positive, got {self.amplitude!r}")
        if self.shape == "custom_samples":
            if not self.samples:
                raise DatumError("custom_samples profile needs samples")
            object.__setattr__(self, "samples", tuple(float(v) for v in self.samples))
            if min(self.samples) <= 0.0:
                raise NegativeProfile("custom samples must be strictly positive inside the arc")

    def evaluate(self, t, length: float):
        """Profile value at arc offset ``t`` in [0, length]; zero outside."""
        t = np.asarray(t, dtype=float)
        x = t / length
        inside = (x > 0.0) & (x < 1.0)
        if self.shape == "bump_sin":
            val = np.sin(math.pi * x)
        elif self.shape == "bump_poly":
            val = 4.0 * x * (1.0 - x)
        else:
            nodes = np.linspace(0.0, 1.0, len(self.samples) + 2)
            vals = np.concatenate(([0.0], self.samples, [0.0]))
            val = np.interp(x, nodes, vals)
        return np.where(inside, self.amplitude * val, 0.0)

    def lipschitz_constant(self, length: float) -> float:
        if self.shape == "bump_sin":
            return self.amplitude * math.pi / length
        if self.shape == "bump_poly":
            return 4.0 * self.amplitude / length
        vals = np.concatenate(([0.0], self.samples, [0.0]))
        h = length / (len(self.samples) + 1)
        return float(self.amplitude * np.max(np.abs(np.diff(vals))) / h)

    def to_dict(self) -> dict:
        out = {"shape": self.shape, "amplitude": self.amplitude}
        if self.samples is not None:
            out["samples"] = list(self.samples)
        return out


@dataclass(frozen=True)
class AdmissibleDatum:
    """``k`` boundary profiles with arc supports tiling the circle."""

    arcs: tuple[Arc, ...]
    profiles: tuple[BoundaryProfile, ...]
    lipschitz_factor: float = field(default=DEFAULT_LIPSCHITZ_FACTOR, compare=False)

    @property
    def k(self) -> int:
        return len(self.arcs)

    @property
    def zeros(self) -> np.ndarray:
        """Shared endpoints p_1..p_k; p_i is where species i's arc starts."""
        return np.array([a.start for a in self.arcs])

    @property
    def amplitude(self) -> float:
        return max(p.amplitude for p in self.profiles)

    def species_values(self, theta) -> np.ndarray:
        """Array of shape ``(k,) + theta.shape`` with phi_i(theta)."""
        theta = np.asarray(theta, dtype=float)
        out = np.empty((self.k,) + theta.shape)
        for i, (arc, prof) in enumerate(zip(self.arcs, self.profiles)):
            t = arc.local(theta)
            out[i] = np.where(t < arc.length, prof.evaluate(t, arc.length), 0.0)
        return out

    def __call__(self, theta):
        return eval_datum(self, theta)

    def species_of(self, theta):
        """Index (0-based) of the arc holding ``theta`` (half-open arcs)."""
        theta = np.asarray(theta, dtype=float)
        out = np.full(theta.shape, -1, dtype=int)
        for i, arc in enumerate(self.arcs):
            out = np.where(arc.contains(theta), i, out)
        return out

    def scaled(self, factor: float) -> "AdmissibleDatum":
        profiles = tuple(
            BoundaryProfile(p.shape, p.amplitude * factor, p.samples) for p in self.profiles
        )
        return AdmissibleDatum(self.arcs, profiles, self.lipschitz_factor)

    def shifted(self, by: int = 1) -> "AdmissibleDatum":
        """Cyclically relabel species (species i becomes species i+by)."""
        by %= self.k
        arcs = self.arcs[-by:] + self.arcs[:-by] if by else self.arcs
        profiles = self.profiles[-by:] + self.profiles[:-by] if by else self.profiles
        return AdmissibleDatum(arcs, profiles, self.lipschitz_factor)

    def to_dict(self) -> dict:
        return {
            "k": self.k,
            "arcs": [{"start": a.start, "end": a.end} for a in self.arcs],
            "profiles": [p.to_dict() for p in self.profiles],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def from_dict(cls, data: dict) -> "AdmissibleDatum":
        arcs = [Arc(float(a["start"]), float(a["end"])) for a in data["arcs"]]
        profiles = [
            BoundaryProfile(
                p.get("shape", "bump_sin"),
                float(p.get("amplitude", 1.0)),
                tuple(p["samples"]) if p.get("samples") is not None else None,
            )
            for p in data["profiles"]
        ]
        return build_datum(int(data["k"]), arcs, profiles)

    @classmethod
    def from_json(cls, text: str) -> "AdmissibleDatum":
        return cls.from_dict(json.loads(text))


def _check_tiling(arcs: Sequence[Arc]) -> None:
    k = len(arcs)
    for i, arc in enumerate(arcs):
        nxt = arcs[(i + 1) % k]
        # signed distance from this arc's end to the next start, in (-pi, pi]
        d = math.remainder(nxt.start - arc.end, TWO_PI)
        if d < -ENDPOINT_TOL:
            raise OverlappingSupports(f"arcs {i} and {(i + 1) % k} overlap by {-d:.3g} rad")
        if d > ENDPOINT_TOL:
            raise GapOnCircle(f"gap of {d:.3g} rad between arcs {i} and {(i + 1) % k}")
    total = sum(a.length for a in arcs)
    if total > TWO_PI + k * ENDPOINT_TOL:
        raise OverlappingSupports(f"arcs cover {total:.6g} rad > 2pi")
    if total < TWO_PI - k * ENDPOINT_TOL:
        raise GapOnCircle(f"arcs cover {total:.6g} rad < 2pi")


def build_datum(
    k: int,
    arcs: Sequence[Arc],
    profiles: Sequence[BoundaryProfile],
    lipschitz_factor: float = DEFAULT_LIPSCHITZ_FACTOR,
) -> AdmissibleDatum:
    """Validate arcs and profiles and return an :class:`AdmissibleDatum`.

    Arcs must be listed counterclockwise with each arc ending where the next
    one starts; this structural tiling is what guarantees exactly ``k`` zeros.
    """
    if k < 2:
        raise DatumError(f"need at least two species, got k={k}")
    if len(arcs) != k or len(profiles) != k:
        raise DatumError(f"expected {k} arcs and profiles, got {len(arcs)} and {len(profiles)}")
    arcs = tuple(a if isinstance(a, Arc) else Arc(*a) for a in arcs)
    _check_tiling(arcs)
    for i, (arc, prof) in enumerate(zip(arcs, profiles)):
        if prof.shape == "custom_samples":
            bound = lipschitz_factor * prof.amplitude
            lip = prof.lipschitz_constant(arc.length)
            if lip > bound:
                raise NonLipschitzProfile(
                    f"profile {i}: difference quotient {lip:.3g} exceeds bound {bound:.3g}"
                )
    return AdmissibleDatum(arcs, tuple(profiles), lipschitz_factor)


def eval_datum(d: AdmissibleDatum, theta):
    """Total datum ``sum_i phi_i(theta)``."""
    vals = d.species_values(theta)
    out = vals.sum(axis=0)
    return float(out) if np.ndim(out) == 0 else out


@dataclass(frozen=True)
class AlternatingDatum:
    """Signed datum ``sum_j (-1)**j phi_j`` for an even species count."""

    base: AdmissibleDatum

    def __post_init__(self):
        if self.base.k % 2:
            raise OddSpeciesCount(f"alternating datum needs even k, got k={self.base.k}")

    @property
    def k(self) -> int:
        return self.base.k

    @property
    def s(self) -> int:
        return self.base.k // 2

    @property
    def amplitude(self) -> float:
        return self.base.amplitude

    @property
    def signs(self) -> np.ndarray:
        # species are numbered from 1: species 1 carries -1
        return np.array([(-1.0) ** (j + 1) for j in range(self.k)])

    def __call__(self, theta):
        return eval_alternating(self, theta)


def alternating(d: AdmissibleDatum) -> AlternatingDatum:
    return AlternatingDatum(d)


def eval_alternating(d: AlternatingDatum | AdmissibleDatum, theta):
    if isinstance(d, AdmissibleDatum):
        d = AlternatingDatum(d)
    vals = d.base.species_values(theta)
    out = np.tensordot(d.signs, vals, axes=1)
    return float(out) if np.ndim(out) == 0 else out


# ---------------------------------------------------------------------------
# constructors


def symmetric_datum(k: int, amplitude: float = 1.0, phase: float = 0.0,
                    shape: str = "bump_sin") -> AdmissibleDatum:
    """``k`` equal arcs of length 2pi/k, the first starting at ``phase``."""
    h = TWO_PI / k
    start0 = float(normalize_angle(phase))
    starts = [float(normalize_angle(start0 + i * h)) for i in range(k)]
    arcs = [Arc(a, a + h) for a in starts]
    profiles = [BoundaryProfile(shape, amplitude) for _ in range(k)]
    return build_datum(k, arcs, profiles)


def mode_datum(s: int, amplitude: float = 1.0) -> AdmissibleDatum:
    """Datum with ``2s`` sine bumps whose alternating sum is ``amplitude*cos(s*theta)``.

    The zeros of cos(s theta) sit at pi/(2s) + j pi/s; on each arc between them
    |cos(s theta)| is a sine bump, and the sign pattern starts negative.
    """
    return symmetric_datum(2 * s, amplitude, phase=math.pi / (2 * s))


def random_datum(k: int, rng: np.random.Generator, min_fraction: float = 0.25,
                 shapes: Sequence[str] = ("bump_sin", "bump_poly")) -> AdmissibleDatum:
    """Random admissible datum: random arc lengths, rotation, shapes, amplitudes.

    Each arc gets at least ``min_fraction`` of the equal share 2pi/k.
    """
    w = rng.dirichlet(np.ones(k))
    lengths = TWO_PI / k * min_fraction + w * TWO_PI * (1.0 - min_fraction)
    lengths *= TWO_PI / lengths.sum()
    start = float(rng.uniform(0.0, TWO_PI))
    arcs = []
    a = start
    for i in range(k):
        s0 = float(normalize_angle(a))
        arcs.append(Arc(s0, s0 + float(lengths[i])))
        a += float(lengths[i])
    # force exact closure of the tiling against accumulated rounding
    last = arcs[-1]
    gap = math.remainder(arcs[0].start - last.end, TWO_PI)
    arcs[-1] = Arc(last.start, last.end + gap)
    profiles = [
        BoundaryProfile(str(rng.choice(list(shapes))), float(rng.uniform(0.5, 2.0)))
        for _ in range(k)
    ]
    return build_datum(k, arcs, profiles)
