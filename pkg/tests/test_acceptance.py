"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line."""

import json
import math
import subprocess
import sys
import time
import warnings

import numpy as np
import pytest

from conftest import RESULTS
from segrega.certify import (
    chebyshev_moments,
    derivative_characterization,
    is_2s_point,
    k6_conditions,
    moment_report,
    monomial_moments,
    monomials_from_chebyshev,
    reconstruct_alternating,
)
from segrega.datum import alternating, mode_datum, random_datum, symmetric_datum
from segrega.errors import TruncationTooSmall
from segrega.harmonic import (
    eval_field,
    eval_gradient,
    eval_hessian,
    find_zero_critical_points,
    solve_dirichlet,
)
from segrega.kernels import QuadratureRule
from segrega.nodal import (
    K6_TREES,
    alternating_modulus,
    build_graph,
    classify_k6,
    extract_partition,
    k6_reference_raster,
    local_exponent_fit,
    verify_multiplicity_identity,
)
from segrega.pde import PolarGrid, continuation

GRID = (128, 256)
K6_SCHEDULE = [1.0, 10.0, 100.0, 1000.0, 10000.0]
K2_SCHEDULE = [1.0, 100.0, 10000.0]
LINEAR_TOL = 1e-8


def record(n, ok, detail, elapsed=None, limit=None):
    timing = "" if elapsed is None else f" [{elapsed:.1f}s / limit {limit:g}s]"
    line = f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}{timing}"
    RESULTS[n] = line
    print(line)
    return ok


def quiet_field(d, **kw):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", TruncationTooSmall)
        return solve_dirichlet(d, **kw)


def random_points(rng, n, rmax=0.9):
    return rmax * np.sqrt(rng.uniform(0, 1, n)) * np.exp(2j * np.pi * rng.uniform(0, 1, n))


@pytest.fixture(scope="session")
def k6_runs():
    t0 = time.perf_counter()
    runs = continuation(symmetric_datum(6), K6_SCHEDULE, PolarGrid(*GRID))
    return runs, time.perf_counter() - t0


@pytest.fixture(scope="session")
def k6_partition(k6_runs):
    runs, _ = k6_runs
    return extract_partition(runs[-1][1])


@pytest.fixture(scope="session")
def k2_runs():
    t0 = time.perf_counter()
    d = random_datum(2, np.random.default_rng(7))
    runs = continuation(d, K2_SCHEDULE, PolarGrid(*GRID))
    return runs, time.perf_counter() - t0


@pytest.fixture(scope="session")
def random_k6_cases():
    rng = np.random.default_rng(2024)
    return [(random_datum(6, rng), random_points(rng, 20)) for _ in range(50)]


def test_criterion_01_harmonic_oracle():
    t0 = time.perf_counter()
    rng = np.random.default_rng(1)
    pts = random_points(rng, 1000, rmax=0.999)
    r, th = np.abs(pts), np.angle(pts)
    worst = [0.0, 0.0, 0.0]
    for j in (1, 2, 3):
        f = solve_dirichlet(lambda t, j=j: np.cos(j * np.asarray(t)))
        worst[0] = max(worst[0], np.max(np.abs(eval_field(f, pts) - r**j * np.cos(j * th))))
        # gradient and Hessian of Re z^j
        dz = j * pts ** (j - 1)
        grad = np.stack([dz.real, -dz.imag], axis=-1)
        worst[1] = max(worst[1], np.max(np.abs(eval_gradient(f, pts) - grad)))
        d2 = j * (j - 1) * pts ** (j - 2) if j > 1 else np.zeros_like(pts)
        hess = np.stack([np.stack([d2.real, -d2.imag], -1), np.stack([-d2.imag, -d2.real], -1)], -2)
        worst[2] = max(worst[2], np.max(np.abs(eval_hessian(f, pts) - hess)))
    dt = time.perf_counter() - t0
    ok = worst[0] <= 1e-8 and worst[1] <= 1e-6 and worst[2] <= 1e-4 and dt < 5
    assert record(1, ok, f"value/grad/hess errors {worst[0]:.2e}/{worst[1]:.2e}/{worst[2]:.2e}", dt, 5)


def test_criterion_02_cos3_positive_and_negative():
    t0 = time.perf_counter()
    alt = alternating(mode_datum(3))
    cheb = chebyshev_moments(alt, 0j)
    mono = monomial_moments(alt, 0j)
    ok2s, rep = is_2s_point(alt, 0j)
    n_cheb = len(cheb.cheb_T_moments) + len(cheb.cheb_U_moments)
    worst = max(max(abs(v) for v in cheb.values), max(abs(v) for v in mono.values))
    order = math.hypot(*rep.order_pair)
    neg = chebyshev_moments(alt, (0.3, 0.0)).cheb_T_moments[0]
    neg_err = abs(neg - 2 * math.pi * 0.027)
    dt = time.perf_counter() - t0
    ok = (n_cheb == 5 and len(mono.monomial_moments) == 6 and worst < 1e-10 and ok2s
          and order > 1e-6 and neg_err < 1e-8 and dt < 5)
    assert record(2, ok, f"max moment {worst:.1e}, |(A3,B3)|={order:.3f}, "
                         f"negative-case error {neg_err:.1e}", dt, 5)


def test_criterion_03_chebyshev_monomial_equivalence(random_k6_cases):
    t0 = time.perf_counter()
    agree, total, worst = 0, 0, 0.0
    for d, pts in random_k6_cases:
        alt = alternating(d)
        for p in pts:
            rep = moment_report(alt, p)
            rebuilt = monomials_from_chebyshev(rep.cheb_T_moments, rep.cheb_U_moments, rep.s)
            worst = max(worst, max(abs(rebuilt[key] - val) for key, val in rep.monomial_moments.items()))
            agree += rep.cheb_verdict == rep.monomial_verdict
            total += 1
    dt = time.perf_counter() - t0
    ok = agree == total and worst <= 1e-8 and dt < 60
    assert record(3, ok, f"verdicts agree {agree}/{total}, inverse-formula error {worst:.1e}", dt, 60)


def test_criterion_04_derivative_equivalence(random_k6_cases):
    t0 = time.perf_counter()
    rule = QuadratureRule()
    agree, total = 0, 0
    for d, pts in random_k6_cases:
        field = quiet_field(alternating(d), rule=rule)
        for p in pts:
            k6 = k6_conditions(d, p, rule=rule)
            der = derivative_characterization(field, p, tol=k6.tolerance)
            agree += der.verdict == k6.verdict
            total += 1
    dt = time.perf_counter() - t0
    ok = agree == total and dt < 60
    assert record(4, ok, f"verdicts agree {agree}/{total}", dt, 60)


def test_criterion_05_multiplicity_identity(k6_partition, k2_runs):
    t0 = time.perf_counter()
    parts = {name: extract_partition(k6_reference_raster(name)) for name in K6_TREES}
    parts["pde k=6"] = k6_partition
    for mu, state, _ in k2_runs[0]:
        parts[f"pde k=2 mu={mu:g}"] = extract_partition(state)
    failures = []
    for name, part in parts.items():
        rep = verify_multiplicity_identity(part)
        euler = build_graph(part).euler == 2
        if not (rep["identity_holds"] and euler and rep["tree_count_holds"]):
            failures.append(name)
        if name in K6_TREES and classify_k6(part) != name:
            failures.append(f"{name} misclassified")
    dt = time.perf_counter() - t0
    ok = not failures and dt < 30
    assert record(5, ok, f"{len(parts) - len(failures)}/{len(parts)} partitions satisfy "
                         f"identity, Euler and tree count {failures or ''}", dt, 30)


def test_criterion_06_critical_point_bound():
    t0 = time.perf_counter()
    rng = np.random.default_rng(6)
    worst_excess, exact_ok = -99, True
    for s in (2, 3, 4):
        for _ in range(20):
            alt = alternating(random_datum(2 * s, rng))
            # no s here: count rather than let the search raise above s-1
            pts = find_zero_critical_points(quiet_field(alt))
            worst_excess = max(worst_excess, len(pts) - (s - 1))
        pts = find_zero_critical_points(solve_dirichlet(alternating(mode_datum(s))), s=s)
        exact_ok &= len(pts) == 1 and abs(pts[0].z) < 1e-6 and pts[0].order == s
    dt = time.perf_counter() - t0
    ok = worst_excess <= 0 and exact_ok and dt < 120
    assert record(6, ok, f"max count minus (s-1) = {worst_excess}, cos(s theta) origin points "
                         f"{'found' if exact_ok else 'wrong'}", dt, 120)


def test_criterion_07_two_species_oracle(k2_runs):
    runs, elapsed = k2_runs
    worst = 0.0
    for mu, state, _ in runs:
        diff = state.u[0] - state.u[1]
        ext = state.grid.harmonic_extension(state.boundary[0] - state.boundary[1])
        worst = max(worst, float(np.max(np.abs(diff - ext))))
    ok = worst <= 10 * LINEAR_TOL and elapsed < 120
    assert record(7, ok, f"max |u1-u2 - ext| over mu {K2_SCHEDULE} = {worst:.1e}", elapsed, 120)


def test_criterion_08_segregation_trend(k6_runs, k6_partition):
    runs, elapsed = k6_runs
    ov = [stats.overlap for _, _, stats in runs]
    monotone = all(b < a for a, b in zip(ov, ov[1:]))
    ratio = ov[-1] / ov[0]
    part = k6_partition
    cls = classify_k6(part)
    cell = 1.0 / GRID[0]
    mp = max(part.multiple_points, key=lambda m: m.multiplicity)
    near = abs(mp.z) <= 3 * cell
    fit = local_exponent_fit(alternating_modulus(runs[-1][1]), mp)
    ok = monotone and ratio < 1e-2 and cls == "SIX" and near and abs(fit["exponent"] - 3) <= 0.1
    ok &= elapsed < 900
    assert record(8, ok, f"overlap ratio {ratio:.1e} ({'monotone' if monotone else 'NOT monotone'}), "
                         f"{cls} at |p|={abs(mp.z):.1e}, exponent {fit['exponent']:.3f}", elapsed, 900)


def test_criterion_09_reconstruction(k6_partition):
    t0 = time.perf_counter()
    rec = reconstruct_alternating(k6_partition)
    dt = time.perf_counter() - t0
    ok = rec["passed"] and dt < 60
    assert record(9, ok, f"alternating-sum residual {rec['residual']:.3e} <= "
                         f"{rec['tolerance']:.3e} (10x r^3 cos 3theta)", dt, 60)


def _cli(tmp, name, *args):
    out = tmp / name
    cmd = [sys.executable, "-m", "segrega", *args, "--threads", "1", "--seed", "5", "--out", str(out)]
    proc = subprocess.run(cmd, capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
    return {p.name: p.read_bytes() for p in sorted(out.iterdir())}


def test_criterion_10_determinism(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"datum": {"preset": "random", "k": 6}}))
    commands = [
        ("solve", "--config", str(cfg), "--mu-schedule", "1,10,100", "--grid", "16x64"),
        ("certify", "--config", str(cfg), "--point", "0.1,-0.2"),
        ("harmonic", "--config", str(cfg)),
    ]
    same = 0
    for i, args in enumerate(commands):
        a = _cli(tmp_path, f"a{i}", *args)
        b = _cli(tmp_path, f"b{i}", *args)
        same += a == b
    ok = same == len(commands)
    assert record(10, ok, f"{same}/{len(commands)} commands byte-identical across repeated runs")
