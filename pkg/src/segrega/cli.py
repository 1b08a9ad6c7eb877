"""Command line front end.

Subcommands::

    segrega solve            mu-continuation, grid dumps, stats, partition
    segrega certify          point certificates and their cross-equivalences
    segrega verify           combinatorial and local checks of a partition
    segrega harmonic         psi_a coefficients, samples and critical points
    segrega datum validate   admissibility check of a datum

Configuration is one JSON document (``--config``); flags override it and
the built-in defaults fill the rest.  Exit codes:

    0  all requested checks passed
    1  a non-fatal check failed (verify)
    2  NonConvergence (solve, or verify with a fresh solve)
    3  configuration or datum error, including OddSpeciesCount
    4  certificate equivalences disagree
    5  fatal geometry failure (missing/disconnected region, identity, Euler)
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import math
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .errors import (
    DatumError,
    GeometryError,
    NonConvergence,
    SegregaError,
)

log = logging.getLogger("segrega")

EXIT_OK = 0
EXIT_CHECK = 1
EXIT_NONCONVERGENCE = 2
EXIT_CONFIG = 3
EXIT_EQUIVALENCE = 4
EXIT_GEOMETRY = 5

DEFAULTS = {
    "datum": {"preset": "symmetric", "k": 6},
    "grid": [128, 256],
    "mu_schedule": [1.0, 10.0, 100.0, 1000.0, 10000.0],
    "truncation": 256,
    "quadrature": 4096,
    "tolerances": {},
    "out": "out",
    "seed": 0,
    "point": None,
    "partition": None,
    "threshold": None,
    "raster": None,
}


class ConfigError(SegregaError):
    """Malformed or out-of-range experiment configuration."""


# ---------------------------------------------------------------------------
# deterministic output


def _canon(obj):
    """Plain JSON types, numpy scalars and arrays unpacked."""
    if isinstance(obj, dict):
        return {str(k): _canon(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_canon(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _canon(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        return float(obj)
    if isinstance(obj, complex):
        return [obj.real, obj.imag]
    return obj


def format_float(x: float) -> str:
    if math.isnan(x):
        return '"nan"'
    if math.isinf(x):
        return '"inf"' if x > 0 else '"-inf"'
    return format(x, ".17g")


def dumps(obj, indent: int = 2, _level: int = 0) -> str:
    """JSON with every float printed to 17 significant digits."""
    obj = _canon(obj) if _level == 0 else obj
    pad = " " * (indent * (_level + 1))
    end = " " * (indent * _level)
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f"{pad}{json.dumps(k)}: {dumps(v, indent, _level + 1)}" for k, v in obj.items()]
        return "{\n" + ",\n".join(items) + "\n" + end + "}"
    if isinstance(obj, list):
        if not obj:
            return "[]"
        if all(not isinstance(v, (dict, list)) for v in obj):
            return "[" + ", ".join(dumps(v, indent, _level + 1) for v in obj) + "]"
        return "[\n" + ",\n".join(pad + dumps(v, indent, _level + 1) for v in obj) + "\n" + end + "]"
    if isinstance(obj, bool) or obj is None:
        return json.dumps(obj)
    if isinstance(obj, float):
        return format_float(obj)
    return json.dumps(obj)


# where results go and how many threads compute them do not change the results
_UNHASHED = ("out", "threads")


def config_hash(cfg: dict) -> str:
    keep = {k: v for k, v in cfg.items() if k not in _UNHASHED}
    return hashlib.sha256(json.dumps(_canon(keep), sort_keys=True).encode()).hexdigest()


def header(cfg: dict, command: str) -> dict:
    return {"tool": "segrega", "version": __version__, "command": command, "config_hash": config_hash(cfg)}


class Writer:
    """Writes report files under the output directory with a provenance header."""

    def __init__(self, out: Path, cfg: dict, command: str):
        self.out = Path(out)
        self.head = header(cfg, command)
        self.out.mkdir(parents=True, exist_ok=True)
        self.written: list[Path] = []

    def json(self, name: str, data: dict) -> Path:
        path = self.out / name
        path.write_text(dumps({"header": self.head, **_canon(data)}) + "\n")
        self.written.append(path)
        return path

    def csv(self, name: str, text: str) -> Path:
        path = self.out / name
        lines = [f"# {k}: {v}" for k, v in self.head.items()]
        path.write_text("\n".join(lines) + "\n" + text)
        self.written.append(path)
        return path


# ---------------------------------------------------------------------------
# configuration


def load_config(args) -> dict:
    cfg = json.loads(json.dumps(DEFAULTS))
    if args.config:
        path = Path(args.config)
        if not path.exists():
            raise ConfigError(f"config file {path} does not exist")
        try:
            data = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file {path} is not valid JSON: {exc}") from None
        if not isinstance(data, dict):
            raise ConfigError("config must be a JSON object")
        unknown = set(data) - set(DEFAULTS)
        if unknown:
            raise ConfigError(f"unknown config fields: {sorted(unknown)}")
        base = path.parent
        for key in ("datum", "partition"):
            if isinstance(data.get(key), str):
                data[key] = str((base / data[key]).resolve()) if not Path(data[key]).is_absolute() else data[key]
        cfg.update(data)
    if getattr(args, "mu_schedule", None):
        try:
            cfg["mu_schedule"] = [float(v) for v in args.mu_schedule.split(",") if v.strip()]
        except ValueError:
            raise ConfigError(f"bad --mu-schedule {args.mu_schedule!r}") from None
    if getattr(args, "grid", None):
        try:
            nr, nt = args.grid.lower().split("x")
            cfg["grid"] = [int(nr), int(nt)]
        except ValueError:
            raise ConfigError(f"bad --grid {args.grid!r}, expected NRxNT") from None
    if getattr(args, "point", None):
        try:
            x1, x2 = (float(v) for v in args.point.split(","))
        except ValueError:
            raise ConfigError(f"bad --point {args.point!r}, expected x1,x2") from None
        cfg["point"] = [x1, x2]
    if getattr(args, "out", None):
        cfg["out"] = args.out
    if getattr(args, "seed", None) is not None:
        cfg["seed"] = args.seed
    if getattr(args, "partition", None):
        cfg["partition"] = args.partition
    if getattr(args, "datum", None):
        cfg["datum"] = args.datum
    _check_ranges(cfg)
    return cfg


def _check_ranges(cfg: dict) -> None:
    nr, nt = cfg["grid"]
    if nr < 8 or nt < 64 or nt % 2:
        raise ConfigError(f"grid {nr}x{nt} out of range (n_r >= 8, even n_theta >= 64)")
    if any(m < 0 for m in cfg["mu_schedule"]):
        raise ConfigError("mu values must be nonnegative")
    if int(cfg["truncation"]) < 1 or int(cfg["quadrature"]) < 16:
        raise ConfigError("truncation must be >= 1 and quadrature >= 16")
    if cfg["point"] is not None:
        x1, x2 = cfg["point"]
        if x1 * x1 + x2 * x2 >= 1.0:
            raise ConfigError(f"point {cfg['point']} is not inside the unit disk")
    for key in ("partition",):
        if cfg.get(key) and not Path(cfg[key]).exists():
            raise ConfigError(f"{key} file {cfg[key]} does not exist")


def make_datum(spec, seed: int):
    """Datum from a preset, an inline serialized datum or a file path."""
    from .datum import AdmissibleDatum

    if isinstance(spec, str):
        path = Path(spec)
        if not path.exists():
            raise ConfigError(f"datum file {path} does not exist")
        data = json.loads(path.read_text())
        # a bare datum or a report that embeds one
        return AdmissibleDatum.from_dict(data.get("datum", data))
    if not isinstance(spec, dict):
        raise ConfigError("datum must be an object or a file path")
    try:
        return _datum_from_spec(spec, seed)
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"bad datum specification: {exc!r}") from None


def _datum_from_spec(spec: dict, seed: int):
    from .datum import AdmissibleDatum, mode_datum, random_datum, symmetric_datum

    preset = spec.get("preset")
    if preset is None:
        return AdmissibleDatum.from_dict(spec)
    amp = float(spec.get("amplitude", 1.0))
    if preset == "symmetric":
        return symmetric_datum(int(spec["k"]), amplitude=amp, phase=float(spec.get("phase", 0.0)),
                               shape=spec.get("shape", "bump_sin"))
    if preset == "mode":
        return mode_datum(int(spec["s"]), amplitude=amp)
    if preset == "random":
        rng = np.random.default_rng(int(spec.get("seed", seed)))
        return random_datum(int(spec["k"]), rng)
    raise ConfigError(f"unknown datum preset {preset!r}")


# ---------------------------------------------------------------------------
# subcommands


def cmd_solve(cfg: dict, w: Writer) -> int:
    from .nodal import build_graph, extract_partition, verify_multiplicity_identity
    from .pde import PolarGrid, continuation

    datum = make_datum(cfg["datum"], cfg["seed"])
    grid = PolarGrid(*cfg["grid"])
    try:
        runs = continuation(datum, cfg["mu_schedule"], grid)
    except NonConvergence as exc:
        w.json("solve_failure.json", {"mu": exc.mu, "error": str(exc)})
        raise
    final = runs[-1][1]
    w.json("stats.json", {"datum": datum.to_dict(), "grid": cfg["grid"],
                          "stats": [s.to_dict() for _, _, s in runs]})
    w.csv("state.csv", final.dump_csv())
    part = extract_partition(final, threshold=cfg["threshold"], check=False)
    report = {"partition": part.to_dict()}
    try:
        report["identity"] = verify_multiplicity_identity(part, strict=False)
        report["graph"] = build_graph(part, strict=False).to_dict()
    except GeometryError as exc:
        report["geometry_error"] = str(exc)
    if part.k == 6:
        from .nodal import classify_k6

        try:
            report["classification"] = classify_k6(part)
        except GeometryError as exc:
            report["classification"] = None
            report["geometry_error"] = str(exc)
    w.json("partition.json", report)
    return EXIT_OK


def cmd_certify(cfg: dict, w: Writer) -> int:
    from .certify import (
        chebyshev_moments,
        derivative_characterization,
        is_2s_point,
        k6_conditions,
        monomial_moments,
        monomials_from_chebyshev,
    )
    from .datum import alternating
    from .harmonic import solve_dirichlet
    from .kernels import QuadratureRule

    datum = make_datum(cfg["datum"], cfg["seed"])
    alt = alternating(datum)  # OddSpeciesCount for odd k
    if cfg["point"] is None:
        raise ConfigError("certify needs a point (--point x1,x2)")
    p = complex(*cfg["point"])
    rule = QuadratureRule(int(cfg["quadrature"]))
    tol = cfg["tolerances"].get("moment")
    cheb = chebyshev_moments(alt, p, rule=rule, tol=tol)
    mono = monomial_moments(alt, p, rule=rule, tol=tol)
    verdict_2s, rep_2s = is_2s_point(alt, p, rule=rule, tol=tol)
    s = alt.s
    rebuilt = monomials_from_chebyshev(rep_2s.cheb_T_moments, rep_2s.cheb_U_moments, s)
    recon_err = max(abs(rebuilt[key] - rep_2s.monomial_moments[key]) for key in rebuilt)
    checks = {
        "chebyshev": cheb.cheb_verdict,
        "monomial": mono.monomial_verdict,
        "is_2s_point": verdict_2s,
    }
    report = {
        "datum": datum.to_dict(),
        "point": [p.real, p.imag],
        "s": s,
        "chebyshev": cheb.to_dict(),
        "monomial": mono.to_dict(),
        "is_2s_point": {"verdict": verdict_2s, "order_pair": list(rep_2s.order_pair)},
        "reconstruction_error": recon_err,
    }
    if datum.k == 6:
        field = solve_dirichlet(alt, N=int(cfg["truncation"]), rule=rule)
        k6 = k6_conditions(datum, p, rule=rule, tol=tol)
        der = derivative_characterization(field, p, tol=k6.tolerance)
        checks["k6_conditions"] = k6.verdict
        checks["derivative"] = der.verdict
        report["k6_conditions"] = k6.to_dict()
        report["derivative"] = der.to_dict()
    consistent = len(set(checks.values())) == 1
    recon_tol = cfg["tolerances"].get("reconstruction", 1e-8)
    report["verdicts"] = checks
    report["equivalences_consistent"] = consistent
    report["reconstruction_consistent"] = recon_err <= recon_tol
    w.json("certify.json", report)
    if not consistent or recon_err > recon_tol:
        log.error("certificate equivalences disagree: %s", checks)
        return EXIT_EQUIVALENCE
    return EXIT_OK


def _partition_from_config(cfg: dict):
    """Partition from a file, a synthetic preset, a psi field or a fresh solve."""
    from .datum import alternating
    from .harmonic import solve_dirichlet
    from .nodal import extract_partition, k6_reference_raster, partition_from_dict

    if cfg.get("partition"):
        data = json.loads(Path(cfg["partition"]).read_text())
        data = data.get("partition", data)
        return partition_from_dict(data), None
    spec = cfg["datum"]
    if isinstance(spec, dict) and spec.get("preset") == "synthetic":
        return extract_partition(k6_reference_raster(spec["name"], cfg.get("raster") or 257)), None
    if isinstance(spec, dict) and spec.get("source") == "psi":
        datum = make_datum({k: v for k, v in spec.items() if k != "source"}, cfg["seed"])
        field = solve_dirichlet(alternating(datum), N=int(cfg["truncation"]))
        return extract_partition(field, datum=datum, n=cfg.get("raster") or 257), datum
    from .pde import PolarGrid, continuation

    datum = make_datum(spec, cfg["seed"])
    runs = continuation(datum, cfg["mu_schedule"], PolarGrid(*cfg["grid"]))
    return extract_partition(runs[-1][1], threshold=cfg["threshold"]), datum


def cmd_verify(cfg: dict, w: Writer) -> int:
    from .nodal import (
        FitFailure,
        alternating_modulus,
        build_graph,
        classify_k6,
        gradient_reflection_check,
        interface_samples,
        local_exponent_fit,
        verify_multiplicity_identity,
    )
    from .pde import membership_checks

    report: dict = {}
    try:
        part, _ = _partition_from_config(cfg)
        report["partition"] = part.to_dict()
        report["identity"] = verify_multiplicity_identity(part, strict=True)
        graph = build_graph(part, strict=True)
        report["graph"] = graph.to_dict()
        if part.k == 6 and part.n_regions == 6:
            report["classification"] = classify_k6(part)
    except GeometryError as exc:
        report["fatal"] = f"{type(exc).__name__}: {exc}"
        if getattr(exc, "dump", None):
            report["graph_dump"] = exc.dump
        w.json("verify.json", report)
        log.error("%s", report["fatal"])
        return EXIT_GEOMETRY

    passed = bool(report["identity"]["passed"])
    rast = part.raster
    fits = []
    if rast.kind in ("psi", "density"):
        U, profile = rast.total, "total"
        odd = any(mp.multiplicity % 2 for mp in part.multiple_points)
        if rast.kind == "density" and part.k % 2 == 0 and not odd:
            U, profile = alternating_modulus(rast.state), "alternating"
        for mp in part.multiple_points:
            try:
                fit = local_exponent_fit(U, mp)
            except FitFailure as exc:
                fit = {"error": str(exc), "exponent_ok": False}
            fits.append({"point": list(mp.location), "multiplicity": mp.multiplicity,
                         "profile": profile, **fit})
            passed &= bool(fit["exponent_ok"])
        pts, pairs = interface_samples(part)
        offset = 2.0 * (rast.cell or rast.h)
        report["gradient_reflection"] = gradient_reflection_check(
            rast.sample, pts, pairs, offset, multiple_points=[mp.z for mp in part.multiple_points]
        )
    else:
        report["gradient_reflection"] = "skipped: label-only source"
    report["exponent_fits"] = fits
    if rast.state is not None:
        mem = membership_checks(rast.state)
        report["membership"] = mem
        passed &= bool(mem["passed"])
    report["passed"] = passed
    w.json("verify.json", report)
    return EXIT_OK if passed else EXIT_CHECK


def cmd_harmonic(cfg: dict, w: Writer) -> int:
    from .datum import alternating
    from .harmonic import (
        TOL_GRAD,
        TOL_VALUE,
        boundary_sign_changes,
        find_zero_critical_points,
        sample_polar,
        solve_dirichlet,
    )
    from .kernels import QuadratureRule

    datum = make_datum(cfg["datum"], cfg["seed"])
    alt = alternating(datum)
    field = solve_dirichlet(alt, N=int(cfg["truncation"]), rule=QuadratureRule(int(cfg["quadrature"])))
    pts = find_zero_critical_points(field, s=alt.s)
    w.csv("coefficients.csv", field.dump_csv())
    w.csv("psi_samples.csv", sample_polar(field))
    w.json("critical_points.json", {
        "datum": datum.to_dict(),
        "s": alt.s,
        "tail_energy": field.tail_energy,
        "boundary_sign_changes": boundary_sign_changes(alt),
        # a point counts as critical at level zero below these relative residuals
        "tolerances": {"value": TOL_VALUE, "gradient": TOL_GRAD},
        "critical_points": [
            {"location": list(cp.location), "order": cp.order,
             "residual_value": cp.residual_value, "residual_gradient": cp.residual_gradient}
            for cp in pts
        ],
    })
    return EXIT_OK


def cmd_datum_validate(cfg: dict, w: Writer) -> int:
    datum = make_datum(cfg["datum"], cfg["seed"])
    info = {
        "valid": True,
        "k": datum.k,
        "zeros": datum.zeros,
        "amplitude": datum.amplitude,
        "lipschitz": [p.lipschitz_constant(a.length) for a, p in zip(datum.arcs, datum.profiles)],
        "even": datum.k % 2 == 0,
        "datum": datum.to_dict(),
    }
    w.json("datum.json", info)
    return EXIT_OK


COMMANDS = {
    "solve": cmd_solve,
    "certify": cmd_certify,
    "verify": cmd_verify,
    "harmonic": cmd_harmonic,
    "datum validate": cmd_datum_validate,
}


# ---------------------------------------------------------------------------
# entry point


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON experiment config")
    common.add_argument("--mu-schedule", help="comma separated mu values")
    common.add_argument("--grid", help="polar grid as NRxNT")
    common.add_argument("--point", help="interior point x1,x2")
    common.add_argument("--out", help="output directory")
    common.add_argument("--threads", type=int, default=None, help="cap on worker threads")
    common.add_argument("--seed", type=int, default=None, help="seed for random data")
    common.add_argument("--partition", help="partition JSON to verify")
    parser = argparse.ArgumentParser(prog="segrega", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"segrega {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("solve", "certify", "verify", "harmonic"):
        sub.add_parser(name, parents=[common])
    dat = sub.add_parser("datum")
    dsub = dat.add_subparsers(dest="action", required=True)
    val = dsub.add_parser("validate", parents=[common])
    val.add_argument("datum", nargs="?", help="datum JSON file")
    return parser


def _setup_logging() -> None:
    level = os.environ.get("SEGREGA_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)


def main(argv=None) -> int:
    _setup_logging()
    parser = build_parser()
    args = parser.parse_args(argv)
    command = args.command if args.command != "datum" else f"datum {args.action}"
    try:
        cfg = load_config(args)
    except (ConfigError, DatumError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    threads = args.threads
    if threads is not None and threads < 1:
        print("error: --threads must be >= 1", file=sys.stderr)
        return EXIT_CONFIG
    from threadpoolctl import threadpool_limits

    writer = Writer(Path(cfg["out"]), cfg, command)
    try:
        with threadpool_limits(limits=threads):
            return COMMANDS[command](cfg, writer)
    except NonConvergence as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NONCONVERGENCE
    except (ConfigError, DatumError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except GeometryError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_GEOMETRY


if __name__ == "__main__":
    sys.exit(main())
