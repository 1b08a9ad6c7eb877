import json
import math
import warnings

import numpy as np
import pytest

from segrega.datum import alternating, mode_datum, random_datum, symmetric_datum
from segrega.errors import (
    DisconnectedRegion,
    EulerViolation,
    FitFailure,
    IdentityViolation,
    MissingRegion,
    TruncationTooSmall,
    UnclassifiableMultiset,
    UnstableMultiplicity,
)
from segrega.harmonic import solve_dirichlet
from segrega.nodal import (
    K6_TREES,
    build_graph,
    classify_k6,
    classify_multiset,
    extract_partition,
    gradient_reflection_check,
    interface_samples,
    interfaces_csv,
    k6_reference_raster,
    local_exponent_fit,
    multiplicity,
    partition_from_dict,
    partition_json,
    raster_from_functions,
    raster_from_labels,
    rle_decode,
    rle_encode,
    verify_multiplicity_identity,
)
from segrega.pde import DensityGrid, PolarGrid, solve


def psi_partition(s, n=257):
    d = mode_datum(s)
    return extract_partition(solve_dirichlet(alternating(d)), datum=d, n=n)


@pytest.fixture(scope="module")
def six():
    return psi_partition(3)


def test_cos3_sectors(six):
    assert six.n_regions == 6 and six.k == 6
    assert len(six.interfaces) == 6
    assert len(six.multiple_points) == 1
    mp = six.multiple_points[0]
    assert mp.multiplicity == 6 and abs(mp.z) < 2 * six.raster.h
    assert all(b.multiplicity == 2 for b in six.boundary_points)
    assert classify_k6(six) == "SIX"


def test_multiplicity_queries(six):
    assert multiplicity(six, 0.5 * np.exp(1j * math.pi / 3)) == 1
    # cos 3theta vanishes on the ray theta = pi/6
    assert multiplicity(six, 0.5 * np.exp(1j * math.pi / 6), r=0.03) == 2
    assert multiplicity(six, 0j, r=0.1) == 6


def test_unstable_multiplicity(six):
    # close to the six-point: the big disk sees 6 labels, the small one fewer
    with pytest.raises(UnstableMultiplicity):
        multiplicity(six, 0.04 * np.exp(1j * 0.52), r=0.08)


def test_graph_counts(six):
    g = build_graph(six)
    assert (g.n, g.m_edges, g.f) == (7, 12, 7)
    assert g.euler == 2 and g.is_tree and g.leaves == 6
    quad = extract_partition(k6_reference_raster("QUAD_TRIPLE"))
    gq = build_graph(quad)
    assert (gq.n, gq.m_edges, gq.f) == (10, 15, 7)


@pytest.mark.parametrize("name", list(K6_TREES))
def test_five_configurations(name):
    part = extract_partition(k6_reference_raster(name))
    rep = verify_multiplicity_identity(part)
    assert rep["sum_index"] == 4 and rep["passed"]
    assert rep["interface_count"] == 6 + rep["interior_z3"] - 1
    assert build_graph(part).euler == 2
    assert classify_k6(part) == name


def test_classify_multisets():
    assert classify_multiset([6]) == "SIX"
    assert classify_multiset([5, 3]) == "THREE_FIVE"
    assert classify_multiset([4, 4]) == "FOUR_FOUR"
    with pytest.raises(UnclassifiableMultiset):
        classify_multiset([4, 4, 3])


def test_two_species_pde_partition():
    d = symmetric_datum(2)
    g = PolarGrid(32, 64)
    state = None
    for mu in (1.0, 100.0):
        state, _ = solve(d, mu, g, init=state)
    part = extract_partition(state)
    assert part.n_regions == 2 and len(part.interfaces) == 1
    assert part.multiple_points == []
    gr = build_graph(part)
    assert (gr.n, gr.m_edges, gr.f) == (2, 3, 3) and gr.euler == 2
    rep = verify_multiplicity_identity(part)
    assert rep["sum_index"] == 0 == rep["expected"]


def test_sector_density_grid():
    g = PolarGrid(64, 128)
    X, Y = g.xy()
    psi = X**3 - 3 * X * Y**2
    sector = np.floor(np.mod(np.arctan2(Y, X) - math.pi / 6, 2 * math.pi) / (math.pi / 3)).astype(int)
    bsector = np.floor(np.mod(g.theta - math.pi / 6, 2 * math.pi) / (math.pi / 3)).astype(int)
    u = np.stack([np.where(sector == j, np.abs(psi), 0.0) for j in range(6)])
    b = np.stack([np.where(bsector == j, np.abs(np.cos(3 * g.theta)), 0.0) for j in range(6)])
    part = extract_partition(DensityGrid(g, u, b, 0.0, mode_datum(3)))
    assert classify_k6(part) == "SIX"
    assert verify_multiplicity_identity(part)["passed"]


def test_psi_sources_of_random_data():
    rng = np.random.default_rng(17)
    for s in (2, 3, 4):
        d = random_datum(2 * s, rng)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", TruncationTooSmall)
            f = solve_dirichlet(alternating(d))
        part = extract_partition(f, datum=d)
        rep = verify_multiplicity_identity(part)
        assert rep["identity_holds"] and rep["euler_holds"]
        assert rep["interior_even"] and rep["interior_count_bound"]


def test_region_guards():
    n = 65
    x = -1 + (np.arange(n) + 0.5) * 2 / n
    X, Y = np.meshgrid(x, x)
    th = np.mod(np.arctan2(Y, X), 2 * math.pi)
    labels = np.floor(th / (math.pi / 2)).astype(int)
    labels[X**2 + Y**2 >= 1] = -2
    zeros = np.arange(4) * math.pi / 2
    ok = extract_partition(raster_from_labels(labels, zeros), threshold=0.5)
    assert ok.n_regions == 4
    two_parts = labels.copy()
    two_parts[(labels == 1) & (X < -0.5)] = 0  # disconnected pocket of species 0
    with pytest.raises(DisconnectedRegion):
        extract_partition(raster_from_labels(two_parts, zeros), threshold=0.5)
    missing = labels.copy()
    missing[labels == 3] = -1
    with pytest.raises(MissingRegion):
        extract_partition(raster_from_labels(missing, zeros, k=4), threshold=0.5)


def test_corruptions_are_fatal(six):
    broken = extract_partition(k6_reference_raster("FOUR_FOUR"))
    broken.interfaces = broken.interfaces[1:]
    with pytest.raises(EulerViolation):
        build_graph(broken)
    wrong = extract_partition(k6_reference_raster("SIX"))
    wrong.multiple_points[0].multiplicity = 5
    with pytest.raises(IdentityViolation) as info:
        verify_multiplicity_identity(wrong)
    assert "adjacency" in info.value.dump


def test_exponent_fits():
    U3 = lambda z: np.abs((z**3).real)
    fit = local_exponent_fit(U3, 0j, h=6)
    assert fit["exponent"] == pytest.approx(3.0, abs=1e-9) and fit["residual"] < 1e-9
    U2 = lambda z: np.abs((z**2).real)
    fit2 = local_exponent_fit(U2, 0j, h=4)
    assert fit2["exponent"] == pytest.approx(2.0, abs=1e-9)
    assert fit2["theta0"] == pytest.approx(0.0, abs=1e-3) or abs(abs(fit2["theta0"]) - math.pi / 2) < 1e-3
    noise = np.random.default_rng(0)
    with pytest.raises(FitFailure):
        local_exponent_fit(lambda z: noise.uniform(0.1, 1.0, np.shape(z)), 0j, h=6)


def test_gradient_reflection_of_abs_x():
    sampler = lambda z: np.stack([np.maximum(np.real(z), 0), np.maximum(-np.real(z), 0)])
    rep = gradient_reflection_check(sampler, [0.1j], [(0, 1)], offset=0.05)
    row = rep["interface_points"][0]
    assert row["angle"] == pytest.approx(math.pi)
    assert row["magnitude_mismatch"] == pytest.approx(0.0, abs=1e-12)
    assert rep["min_grad_U"] == pytest.approx(1.0)


def test_gradient_decay_near_six_point(six):
    pts, pairs = interface_samples(six)
    rep = gradient_reflection_check(six.raster.sampler, pts, pairs, offset=0.002,
                                    multiple_points=[0j])
    assert rep["max_angle_defect"] < 0.05 and rep["max_magnitude_mismatch"] < 0.01
    prof = rep["multiple_point_decay"][0]["profile"]
    # |grad U| = 3 r^2 for r^3 cos 3theta
    for r, g in prof:
        assert g == pytest.approx(3 * r * r, rel=0.02)


def test_exports_roundtrip():
    part = extract_partition(k6_reference_raster("THREE_FIVE"))
    data = json.loads(partition_json(part))
    assert rle_decode(rle_encode(part.labels), part.raster.n).tolist() == part.labels.tolist()
    again = partition_from_dict(data)
    assert classify_k6(again) == "THREE_FIVE"
    csv = interfaces_csv(part)
    assert csv.splitlines()[0] == "interface,label_a,label_b,x1,x2"


def test_function_raster():
    zeros = [0.0, math.pi]
    part = extract_partition(raster_from_functions(
        [lambda z: np.maximum(np.imag(z), 0), lambda z: np.maximum(-np.imag(z), 0)], zeros))
    assert part.n_regions == 2 and len(part.interfaces) == 1
    assert set(part.interfaces[0].endpoints) == {"z0", "z1"}
