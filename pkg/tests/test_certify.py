import math
import warnings

import numpy as np
import pytest

from segrega.certify import (
    chebyshev_moments,
    derivative_characterization,
    find_2s_point,
    is_2s_point,
    k6_conditions,
    moment_report,
    monomial_moments,
    monomials_from_chebyshev,
    pullback_derivatives,
    reconstruct_alternating,
)
from segrega.datum import alternating, mode_datum, random_datum, symmetric_datum
from segrega.errors import (
    BoundaryPoint,
    DegenerateDatum,
    OddMultiplicityPresent,
    OddSpeciesCount,
    SpeciesCountNot6,
    TruncationTooSmall,
)
from segrega.harmonic import eval_field, recenter, solve_dirichlet
from segrega.kernels import QuadratureRule, moebius

COS3 = alternating(mode_datum(3))


def field_of(datum_or_fn, N=256):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", TruncationTooSmall)
        return solve_dirichlet(datum_or_fn, N=N)


def test_cos3_origin_all_vanish():
    cheb = chebyshev_moments(COS3, 0j)
    assert len(cheb.cheb_T_moments) == 3 and len(cheb.cheb_U_moments) == 2
    assert max(abs(v) for v in cheb.values) < 1e-10 and cheb.verdict
    mono = monomial_moments(COS3, 0j)
    assert len(mono.monomial_moments) == 6
    assert max(abs(v) for v in mono.values) < 1e-10 and mono.verdict
    ok, rep = is_2s_point(COS3, 0j)
    assert ok
    assert math.hypot(*rep.order_pair) == pytest.approx(1.0, abs=1e-12)


def test_cos3_off_origin():
    rep = chebyshev_moments(COS3, (0.3, 0.0))
    assert rep.cheb_T_moments[0] == pytest.approx(2 * math.pi * 0.027, abs=1e-8)
    assert not rep.verdict
    assert not is_2s_point(COS3, (0.1, 0.1))[0]


def test_single_mode_s1():
    rep = chebyshev_moments(alternating(mode_datum(1)), 0j)
    assert len(rep.cheb_T_moments) == 1 and rep.cheb_U_moments == []
    assert abs(rep.cheb_T_moments[0]) < 1e-12 and rep.verdict


def test_mixed_modes_fail_or_degenerate():
    fn = lambda t: np.cos(t) + 0.5 * np.cos(3 * t)
    try:
        ok, rep = is_2s_point(fn, 0j, s=3)
    except DegenerateDatum:
        return
    assert not ok
    assert abs(rep.cheb_T_moments[1]) == pytest.approx(math.pi, abs=1e-10)


def test_degenerate_datum_detected():
    # moments below order 3 and the order-3 pair all vanish
    fn = lambda t: np.cos(4 * t)
    with pytest.raises(DegenerateDatum):
        is_2s_point(fn, 0j, s=3)


def test_odd_and_boundary_guards():
    with pytest.raises(OddSpeciesCount):
        chebyshev_moments(symmetric_datum(5), 0j)
    with pytest.raises(BoundaryPoint):
        chebyshev_moments(COS3, (1.0, 0.0))
    with pytest.raises(SpeciesCountNot6):
        k6_conditions(symmetric_datum(4), 0j)


def test_k4_reduction():
    d = random_datum(4, np.random.default_rng(4))
    p = 0.2 - 0.1j
    rep = monomial_moments(d, p)
    rule = QuadratureRule()
    w = moebius(p, rule.points)
    g = alternating(d)(np.angle(w))
    mass = np.sum(g) * rule.weight
    m1 = np.sum(g * rule.points.real) * rule.weight
    m2 = np.sum(g * rule.points.imag) * rule.weight
    assert rep.monomial_moments[(0, 0)] == pytest.approx(mass, abs=1e-13)
    assert rep.monomial_moments[(1, 0)] == pytest.approx(m1, abs=1e-13)
    assert rep.monomial_moments[(1, 1)] == pytest.approx(m2, abs=1e-13)


def test_inverse_formula_reconstruction():
    rng = np.random.default_rng(12)
    for _ in range(5):
        alt = alternating(random_datum(6, rng))
        d = lambda t, _a=alt: _a(t)
        p = 0.7 * np.sqrt(rng.uniform()) * np.exp(2j * np.pi * rng.uniform())
        for s in (3, 4, 5):
            rep = moment_report(d, p, s=s)
            rebuilt = monomials_from_chebyshev(rep.cheb_T_moments, rep.cheb_U_moments, s)
            for key, val in rep.monomial_moments.items():
                assert rebuilt[key] == pytest.approx(val, abs=1e-8)


def test_t_moments_are_recentred_coefficients():
    d = alternating(random_datum(6, np.random.default_rng(2)))
    f = field_of(d)
    p = 0.25 + 0.4j
    rep = chebyshev_moments(d, p)
    g = recenter(f, p)
    for j, m in enumerate(rep.cheb_T_moments):
        assert m == pytest.approx(math.pi * g.A[j], abs=1e-10)
    for j, m in enumerate(rep.cheb_U_moments, start=1):
        assert m == pytest.approx(math.pi * g.B[j], abs=1e-10)


def test_scaling_and_sign_flip():
    rng = np.random.default_rng(8)
    base = random_datum(6, rng)
    p = -0.3 + 0.2j
    ref = moment_report(base, p)
    scaled = moment_report(base.scaled(3.5), p)
    np.testing.assert_allclose(scaled.values, 3.5 * np.array(ref.values), rtol=1e-12, atol=1e-14)
    assert scaled.verdict == ref.verdict
    flipped = moment_report(base.shifted(1), p)
    np.testing.assert_allclose(flipped.values, -np.array(ref.values), rtol=1e-12, atol=1e-14)
    assert flipped.verdict == ref.verdict


def test_k6_examples():
    sym = symmetric_datum(6)
    rep = k6_conditions(sym, 0j)
    assert rep.verdict
    # oracle on 2^15 nodes: every group vanishes
    big = k6_conditions(sym, 0j, rule=QuadratureRule(2**15))
    assert big.max_abs < 1e-12
    assert k6_conditions(mode_datum(3), 0j).verdict == is_2s_point(COS3, 0j)[0] is True
    off = k6_conditions(mode_datum(3), (0.2, -0.1))
    psi = (0.2 - 0.1j) ** 3
    assert off.named_moments["C1"] == pytest.approx(2 * math.pi * psi.real, abs=1e-10)
    assert not off.verdict


def test_derivative_examples():
    f3 = field_of(COS3)
    assert derivative_characterization(f3, 0j).verdict
    f2 = field_of(lambda t: np.cos(2 * t))
    rep = derivative_characterization(f2, 0j)
    assert rep.value == pytest.approx(0.0, abs=1e-14)
    np.testing.assert_allclose(rep.hessian, [[2, 0], [0, -2]], atol=1e-12)
    assert not rep.verdict
    rep = derivative_characterization(f3, (0.5, 0.0))
    assert rep.value == pytest.approx(0.125, abs=1e-12) and not rep.verdict


def test_pullback_derivatives_match_finite_differences():
    d = alternating(random_datum(6, np.random.default_rng(30)))
    f = field_of(d)
    p = 0.3 - 0.2j
    val, grad, hess = pullback_derivatives(f, p)
    G = lambda z: eval_field(f, moebius(p, z))
    h = 1e-4
    fd_grad = [(G(h) - G(-h)) / (2 * h), (G(1j * h) - G(-1j * h)) / (2 * h)]
    np.testing.assert_allclose(grad, fd_grad, atol=1e-7)
    fd_xx = (G(h) - 2 * G(0j) + G(-h)) / h**2
    fd_xy = (G(h + 1j * h) - G(h - 1j * h) - G(-h + 1j * h) + G(-h - 1j * h)) / (4 * h * h)
    assert hess[0, 0] == pytest.approx(fd_xx, abs=1e-5)
    assert hess[0, 1] == pytest.approx(fd_xy, abs=1e-5)
    assert val == pytest.approx(G(0j), abs=1e-14)


def test_bridge_to_k6_moments():
    d = random_datum(6, np.random.default_rng(31))
    f = field_of(alternating(d))
    for p in (0j, 0.35 + 0.1j, -0.2 - 0.5j):
        k6 = k6_conditions(d, p)
        der = derivative_characterization(f, p, tol=k6.tolerance)
        # kinks at the zeros leave an O(n^-2) trapezoid error in the pull-back sums
        for name, val in k6.named_moments.items():
            assert der.bridged_moments[name] == pytest.approx(val, abs=5e-6)


def test_report_json_shape():
    rep = chebyshev_moments(COS3, 0j)
    data = rep.to_dict()
    assert set(data) >= {"p", "s", "moments", "max_abs", "verdict"}


def test_find_2s_point():
    loc, rep = find_2s_point(COS3)
    assert loc is not None and abs(complex(*loc)) < 1e-6 and rep.verdict
    generic = alternating(random_datum(6, np.random.default_rng(3)))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", TruncationTooSmall)
        assert find_2s_point(generic) == (None, None)


class _FakePoint:
    def __init__(self, m, on_boundary=False):
        self.multiplicity = m
        self.on_boundary = on_boundary


class _FakePartition:
    def __init__(self, k, mps, state=None):
        self.k = k
        self.multiple_points = mps
        self.state = state


def test_reconstruction_guards():
    with pytest.raises(OddMultiplicityPresent):
        reconstruct_alternating(_FakePartition(6, [_FakePoint(3), _FakePoint(5)]))
    with pytest.raises(OddSpeciesCount):
        reconstruct_alternating(_FakePartition(5, []))


def test_reconstruction_of_sectors():
    from segrega.pde import DensityGrid, PolarGrid

    g = PolarGrid(64, 128)
    X, Y = g.xy()
    psi = X**3 - 3 * X * Y**2
    th = g.theta
    bnd_psi = np.cos(3 * th)
    sector = np.floor(np.mod(np.arctan2(Y, X) - math.pi / 6, 2 * math.pi) / (math.pi / 3)).astype(int)
    bsector = np.floor(np.mod(th - math.pi / 6, 2 * math.pi) / (math.pi / 3)).astype(int)
    # species j (0-based) sits on sector j and carries sign (-1)^(j+1)
    u = np.stack([np.where(sector == j, np.abs(psi), 0.0) for j in range(6)])
    b = np.stack([np.where(bsector == j, np.abs(bnd_psi), 0.0) for j in range(6)])
    state = DensityGrid(g, u, b, 0.0, None)
    out = reconstruct_alternating(_FakePartition(6, [_FakePoint(6)], state))
    assert np.allclose(np.abs(out["psi"]), np.abs(psi))
    assert np.allclose(out["psi"], psi) or np.allclose(out["psi"], -psi)
    assert out["passed"]
