"""Command-line entry point: ``brokenstrip <subcommand> [options]``.

Every run writes its data (CSV with a header row, or JSON) and a
``manifest.json`` into an output directory chosen, in decreasing priority,
by ``--out-dir``, the ``BROKENSTRIP_OUT_DIR`` environment variable, the
config file and the default ``runs/<subcommand>``.  Option values follow
the same order: command-line flag, then the config file (JSON with an
optional ``"defaults"`` section and one section per subcommand), then the
built-in default.

Exit codes: 0 success, 1 invariant violation, 2 usage error, 3 solver failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import harness as hz
from .eigen import SolverError
from .geometry import GammaBC, GradingSpec, HalfStripGeom, TrapezoidGeom, build_halfstrip_mesh, write_mesh
from .model1d import Method, RobinModel, Variant, dispersion_eigenvalues, fem1d_eigenvalues
from .scattering import (
    DEFAULT_H,
    constant_B,
    constant_D,
    find_threshold_angles,
    scan_phase,
)

EXIT_OK, EXIT_INVARIANT, EXIT_USAGE, EXIT_SOLVER = 0, 1, 2, 3
OUT_DIR_ENV = "BROKENSTRIP_OUT_DIR"
HALF_PI = math.pi / 2

log = logging.getLogger("brokenstrip")


class UsageError(Exception):
    """Invalid parameter combination, reported with exit code 2."""


class InvariantViolation(Exception):
    """A computed result breaks an invariant, reported with exit code 1."""


@dataclass
class RunConfig:
    command: str
    params: dict
    out_dir: Path
    workers: int = 1
    config_file: str | None = None
    outputs: list[str] = field(default_factory=list)

    def path(self, name: str) -> Path:
        self.outputs.append(name)
        return self.out_dir / name


# --------------------------------------------------------------------------
# argument parsing


def _eps_arg(p, required=False, default=0.02):
    p.add_argument("--eps", type=float, required=required, default=None if required else default,
                   help="thickness of the strip")


def _solve_args(p):
    p.add_argument("--h-factor", type=float, default=hz.H_FACTOR, help="element size over eps")
    p.add_argument("--order", type=int, choices=(1, 2), default=2, help="finite element order")
    p.add_argument("--refinements", type=int, default=0, help="uniform refinements of the base mesh")
    p.add_argument("--grading-ratio", type=float, default=1.5, help="geometric ratio of the corner layers")
    p.add_argument("--no-grading", action="store_true", help="uniform columns at the slanted side")
    p.add_argument("--threshold", choices=[t.value for t in hz.ThresholdReference], default="discrete",
                   help="threshold subtracted from eigenvalues: discrete transverse value or pi^2/eps^2")


def _near_field_args(p, h_default=DEFAULT_H):
    p.add_argument("--L", type=float, default=8.0, help="truncation abscissa (lengthened to tan(alpha) + 4 when shorter)")
    p.add_argument("--h", type=float, default=h_default, help="element size in the half-strip")
    p.add_argument("--order", type=int, choices=(1, 2), default=2, help="finite element order")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="brokenstrip", description=__doc__.splitlines()[0])
    parser.add_argument("--config", help="JSON config file (flags override it)")
    parser.add_argument("--out-dir", help=f"output directory (overrides ${OUT_DIR_ENV})")
    parser.add_argument("--workers", type=int, default=None, help="processes for independent solves")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("spectrum", help="smallest eigenvalues of the trapezoid (one or several angles)")
    _eps_arg(p, required=True)
    p.add_argument("--alpha", type=float, nargs="+", required=True, help="angle(s) in radians")
    p.add_argument("--count", type=int, default=5)
    p.add_argument("--gamma-bc", choices=[g.value for g in GammaBC], default="neumann")
    p.add_argument("--mirror", action="store_true", help="also solve at -alpha (sweeps only)")
    p.add_argument("--dump-vectors", action="store_true", help="write nodal eigenfunctions (single angle)")
    _solve_args(p)

    p = sub.add_parser("scan", help="threshold scattering coefficient along an angle grid")
    p.add_argument("--alpha-min", type=float, default=0.0)
    p.add_argument("--alpha-max", type=float, default=0.45 * math.pi)
    p.add_argument("--samples", type=int, default=50)
    p.add_argument("--no-insert", action="store_true", help="keep the grid as given (no midpoints)")
    _near_field_args(p)

    p = sub.add_parser("thresholds", help="angles where S = -1")
    p.add_argument("--max-alpha", type=float, default=1.5)
    p.add_argument("--samples", type=int, default=50)
    p.add_argument("--k-max", type=int, default=3)
    _near_field_args(p)

    p = sub.add_parser("constants", help="constants B (at a threshold angle) and D")
    p.add_argument("--alpha-star", type=float, default=None, help="approximate threshold angle for B")
    p.add_argument("--h", type=float, default=DEFAULT_H)
    p.add_argument("--L", type=float, default=8.0)
    p.add_argument("--order", type=int, choices=(1, 2), default=2)
    p.add_argument("--skip-D", action="store_true")
    p.add_argument("--rellich-tol", type=float, default=0.01, help="allowed relative gap B vs B_rellich")

    p = sub.add_parser("model1d", help="eigenvalues of the one-dimensional Robin models along tau")
    p.add_argument("--variant", choices=[v.value for v in Variant], default="k")
    p.add_argument("--two-b", type=float, default=None, help="2B for the variant k")
    p.add_argument("--D", type=float, default=None, help="D for the variant zero (computed if absent)")
    p.add_argument("--tau-range", type=float, nargs=2, default=(-30.0, 30.0), metavar=("LO", "HI"))
    p.add_argument("--tau-steps", type=int, default=121)
    p.add_argument("--count", type=int, default=5)
    p.add_argument("--method", choices=[m.value for m in Method], default="dispersion")
    p.add_argument("--n-elements", type=int, default=256)

    p = sub.add_parser("verify", help="asymptotic regimes of the trapezoid spectrum")
    p.add_argument("--regime", required=True,
                   choices=["discrete", "generic", "threshold", "model-k", "model-zero"])
    p.add_argument("--alpha", type=float, default=math.pi / 4)
    p.add_argument("--k", type=int, default=1, help="threshold angle index")
    p.add_argument("--q", type=int, default=1)
    p.add_argument("--p", type=int, default=1)
    p.add_argument("--eps-list", type=float, nargs="+", default=list(hz.DEFAULT_EPS_LIST))
    p.add_argument("--tau-list", type=float, nargs="+", default=[0.0])
    p.add_argument("--thresholds", type=float, nargs="+", default=None,
                   help="approximate threshold angles (scanned if absent)")
    p.add_argument("--B", type=float, default=None)
    p.add_argument("--D", type=float, default=None)
    _solve_args(p)

    p = sub.add_parser("broken", help="broken-strip spectrum with symmetry labels")
    _eps_arg(p)
    p.add_argument("--alpha", type=float, required=True)
    p.add_argument("--count", type=int, default=6)
    _solve_args(p)

    p = sub.add_parser("mesh-dump", help="write a mesh as plain text")
    p.add_argument("--domain", choices=["trapezoid", "halfstrip"], default="trapezoid")
    _eps_arg(p)
    p.add_argument("--alpha", type=float, default=0.0)
    p.add_argument("--h", type=float, default=None, help="element size (default eps/6 or 0.04)")
    p.add_argument("--L", type=float, default=8.0)
    p.add_argument("--order", type=int, choices=(1, 2), default=2)
    return parser


def _load_config_file(path: str) -> dict:
    try:
        data = json.loads(Path(path).read_text())
    except OSError as exc:
        raise UsageError(f"cannot read config file {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise UsageError(f"config file {path} is not valid JSON: {exc}") from exc
    if not isinstance(data, dict):
        raise UsageError("config file must hold a JSON object")
    return data


def _apply_config(parser: argparse.ArgumentParser, argv, data: dict) -> argparse.Namespace:
    """Parse ``argv`` with config-file values installed as defaults (flags still win)."""
    sub_action = next(a for a in parser._actions if isinstance(a, argparse._SubParsersAction))
    known = {**data.get("defaults", {})}
    for name, sp in sub_action.choices.items():
        section = {**known, **data.get(name, {})}
        dests = {a.dest for a in sp._actions}
        sp.set_defaults(**{k.replace("-", "_"): v for k, v in section.items() if k.replace("-", "_") in dests})
    if "workers" in data:
        parser.set_defaults(workers=data["workers"])
    return parser.parse_args(argv)


def parse(argv=None) -> RunConfig:
    parser = build_parser()
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    known, _ = pre.parse_known_args(argv)
    data = _load_config_file(known.config) if known.config else {}
    ns = _apply_config(parser, argv, data) if data else parser.parse_args(argv)
    params = {k: v for k, v in vars(ns).items() if k not in ("config", "out_dir", "workers", "verbose", "command")}
    params = {k: (list(v) if isinstance(v, tuple) else v) for k, v in params.items()}
    out = ns.out_dir or os.environ.get(OUT_DIR_ENV) or data.get("out_dir") or data.get("out-dir") or f"runs/{ns.command}"
    workers = ns.workers if ns.workers is not None else 1
    if workers < 1:
        raise UsageError("--workers must be >= 1")
    if ns.verbose:
        logging.basicConfig(level=logging.INFO)
    cfg = RunConfig(ns.command, params, Path(out), workers, known.config)
    validate(cfg)
    return cfg


# --------------------------------------------------------------------------
# validation


def _check(cond: bool, msg: str):
    if not cond:
        raise UsageError(msg)


def validate(cfg: RunConfig) -> None:
    """Reject invalid combinations before any computation."""
    p = cfg.params
    if "eps" in p and p["eps"] is not None:
        _check(p["eps"] > 0, f"--eps must be positive (got {p['eps']})")
    if "h_factor" in p:
        _check(0 < p["h_factor"] <= 0.5, "--h-factor must lie in (0, 0.5]: at least two layers across eps")
        _check(p["refinements"] >= 0, "--refinements must be >= 0")
        _check(p["grading_ratio"] > 1, "--grading-ratio must exceed 1")
    if "count" in p:
        _check(p["count"] >= 1, "--count must be >= 1")
    if cfg.command in ("spectrum", "broken"):
        alphas = p["alpha"] if isinstance(p["alpha"], list) else [p["alpha"]]
        for a in alphas:
            _check(abs(a) < HALF_PI, f"|alpha| must be < pi/2 (got {a})")
            _check(p["eps"] * math.tan(abs(a)) < 1, f"eps*tan(alpha) must be < 1 (alpha={a}, eps={p['eps']})")
        if p.get("dump_vectors"):
            _check(len(alphas) == 1, "--dump-vectors needs a single --alpha")
    if cfg.command in ("scan", "thresholds", "constants"):
        _check(0 < p["h"] <= 0.5, "--h must lie in (0, 0.5]")
        _check(p["L"] >= 4, "--L must be >= 4 (the decaying part needs room)")
    if cfg.command == "scan":
        _check(0 <= p["alpha_min"] < p["alpha_max"] < HALF_PI, "need 0 <= --alpha-min < --alpha-max < pi/2")
        _check(p["samples"] >= 2, "--samples must be >= 2")
    if cfg.command == "thresholds":
        _check(0 < p["max_alpha"] < HALF_PI, "--max-alpha must lie in (0, pi/2)")
        _check(p["k_max"] >= 1 and p["samples"] >= 2, "--k-max >= 1 and --samples >= 2 required")
    if cfg.command == "constants" and p["alpha_star"] is not None:
        _check(0 < p["alpha_star"] < HALF_PI, "--alpha-star must lie in (0, pi/2)")
    if cfg.command == "model1d":
        if p["variant"] == Variant.THRESHOLD_K.value:
            _check(p["two_b"] is not None and p["two_b"] > 0, "--variant k needs --two-b > 0")
        elif p["D"] is not None:
            _check(p["D"] > 0, "--D must be positive")
        _check(p["tau_range"][0] < p["tau_range"][1], "--tau-range LO HI needs LO < HI")
        _check(p["tau_steps"] >= 2, "--tau-steps must be >= 2")
        _check(p["n_elements"] >= 8, "--n-elements must be >= 8")
    if cfg.command == "verify":
        eps = p["eps_list"]
        _check(all(e > 0 for e in eps) and all(b < a for a, b in zip(eps, eps[1:])),
               "--eps-list must be strictly decreasing positive values")
        _check(p["q"] >= 1 and p["p"] >= 1 and p["k"] >= 0, "--q, --p >= 1 and --k >= 0 required")
        if p["regime"] in ("discrete", "generic"):
            _check(abs(p["alpha"]) < HALF_PI, "|alpha| must be < pi/2")
        if p["regime"] == "model-k":
            _check(p["k"] >= 1, "--regime model-k needs --k >= 1")
    if cfg.command == "mesh-dump":
        if p["domain"] == "trapezoid":
            _check(abs(p["alpha"]) < HALF_PI and p["eps"] * math.tan(abs(p["alpha"])) < 1,
                   "need |alpha| < pi/2 and eps*tan(alpha) < 1")
        else:
            _check(0 <= p["alpha"] < HALF_PI and p["L"] > math.tan(p["alpha"]),
                   "need 0 <= alpha < pi/2 and L > tan(alpha)")


def _solve_config(p: dict) -> hz.SolveConfig:
    grading = GradingSpec(enabled=not p["no_grading"], ratio=p["grading_ratio"])
    return hz.SolveConfig(h_factor=p["h_factor"], order=p["order"], refinements=p["refinements"],
                          grading=grading, threshold=p["threshold"])


# --------------------------------------------------------------------------
# subcommands


def cmd_spectrum(cfg: RunConfig) -> int:
    p = cfg.params
    sc = _solve_config(p)
    if len(p["alpha"]) == 1:
        a = p["alpha"][0]
        spec = hz.trapezoid_spectrum(p["eps"], a, p["count"], p["gamma_bc"], sc, keep_vectors=p["dump_vectors"])
        rows = [[i + 1, a, v, v - spec.threshold, spec.threshold_exact, spec.threshold_discrete,
                 bool(v < spec.threshold)] for i, v in enumerate(spec.eigenvalues)]
        hz.write_csv(cfg.path("spectrum.csv"),
                     ["index", "alpha", "eigenvalue", "shifted", "threshold_exact", "threshold_discrete",
                      "below_threshold"], rows)
        if p["dump_vectors"]:
            m = spec.mesh
            header = ["x", "y"] + [f"u_{j + 1}" for j in range(spec.vectors.shape[1])]
            hz.write_csv(cfg.path("eigenfunctions.csv"), header,
                         np.column_stack([m.nodes, spec.vectors]).tolist())
        mesh_info = {"n_dofs": spec.n_dofs, "h": p["eps"] * p["h_factor"]}
    else:
        table = hz.dive_sweep(p["eps"], p["alpha"], p["count"], sc, p["mirror"], cfg.workers)
        table.write_csv(cfg.path("dive.csv"))
        mesh_info = {"h": p["eps"] * p["h_factor"]}
    _manifest(cfg, mesh=mesh_info, solver={"eigensolver": "shift-invert Lanczos", "residual_tol": 1e-8})
    return EXIT_OK


def cmd_scan(cfg: RunConfig) -> int:
    p = cfg.params
    grid = np.linspace(p["alpha_min"], p["alpha_max"], p["samples"])
    kw = {"max_jump": math.inf} if p["no_insert"] else {}
    samples = scan_phase(grid, p["L"], p["h"], p["order"], **kw)
    rows = [[s.alpha, s.S.real, s.S.imag, abs(s.S), s.abs_S_error, s.phase_unwrapped, s.truncation_L,
             s.mesh_h, s.accepted] for s in samples]
    hz.write_csv(cfg.path("scan.csv"),
                 ["alpha", "S_real", "S_imag", "abs_S", "abs_S_error", "phase_unwrapped", "L", "h", "accepted"],
                 rows)
    _manifest(cfg, mesh={"h": p["h"], "L": p["L"]}, solver={"linear_rtol": 1e-10})
    bad = [s.alpha for s in samples if not s.accepted]
    if bad:
        raise InvariantViolation(f"|S| deviates from 1 beyond tolerance at alpha = {bad}")
    return EXIT_OK


def cmd_thresholds(cfg: RunConfig) -> int:
    p = cfg.params
    grid = np.linspace(0.0, p["max_alpha"], p["samples"])
    scan = scan_phase(grid, p["L"], p["h"], p["order"])
    ta = find_threshold_angles(scan, p["k_max"], L=p["L"], h=p["h"], order=p["order"])
    hz.write_json(cfg.path("thresholds.json"), ta.to_dict())
    _manifest(cfg, mesh={"h": p["h"], "L": p["L"]})
    return EXIT_OK


def cmd_constants(cfg: RunConfig) -> int:
    p = cfg.params
    out: dict = {}
    problems = []
    if p["alpha_star"] is not None:
        cb = constant_B(p["alpha_star"], h=p["h"], L=p["L"], order=p["order"])
        out["B"] = cb.to_dict()
        out["B"]["rellich_mismatch"] = cb.rellich_mismatch
        if not (cb.B > 0 and cb.B_rellich > 0):
            problems.append(f"B={cb.B}, B_rellich={cb.B_rellich} not both positive")
        if cb.rellich_mismatch > p["rellich_tol"]:
            problems.append(f"B and B_rellich differ by {cb.rellich_mismatch:.3%}")
    if not p["skip_D"]:
        cd = constant_D(L=p["L"], h=p["h"], order=p["order"])
        out["D"] = cd.to_dict()
        bound = 3 * math.pi**2 * cd.U_norm_sq
        out["D"]["lower_bound"] = bound
        if not (cd.D > 0 and cd.D >= bound):
            problems.append(f"D={cd.D} violates D >= 3 pi^2 int U^2 = {bound}")
    hz.write_json(cfg.path("constants.json"), out)
    _manifest(cfg, mesh={"h": p["h"], "L": p["L"]})
    if problems:
        raise InvariantViolation("; ".join(problems))
    return EXIT_OK


def cmd_model1d(cfg: RunConfig) -> int:
    p = cfg.params
    variant = Variant(p["variant"])
    if variant is Variant.THRESHOLD_K:
        constant = p["two_b"] / 2
    else:
        constant = p["D"] if p["D"] is not None else constant_D().D
    taus = np.linspace(p["tau_range"][0], p["tau_range"][1], p["tau_steps"])
    rows = []
    for tau in taus:
        c = RobinModel.coefficient(variant, tau, constant)
        model = RobinModel(c, variant)
        if Method(p["method"]) is Method.DISPERSION_ROOT:
            spec = dispersion_eigenvalues(model, p["count"])
        else:
            spec = fem1d_eigenvalues(model, p["n_elements"], p["count"])
        rows.append([tau, c] + list(spec.etas))
    header = ["tau", "c"] + [f"eta_{j + 1}" for j in range(p["count"])]
    hz.write_csv(cfg.path("model1d.csv"), header, rows)
    _manifest(cfg, solver={"method": p["method"], "n_elements": p["n_elements"], "constant": constant})
    return EXIT_OK


def cmd_verify(cfg: RunConfig) -> int:
    p = cfg.params
    sc = _solve_config(p)
    eps = p["eps_list"]
    regime = p["regime"]
    if regime == "discrete":
        comp = hz.verify_thm1_discrete(p["alpha"], eps, p["p"], sc)
    elif regime == "generic":
        comp = hz.verify_thm1_generic(p["alpha"], eps, p["q"], sc, p["thresholds"])
    elif regime == "threshold":
        comp = hz.verify_thm1_threshold(p["k"], eps, p["q"], sc, p["thresholds"])
    elif regime == "model-k":
        comp = hz.verify_model_K(p["k"], p["tau_list"], eps, p["q"], sc, p["thresholds"], p["B"])
    else:
        comp = hz.verify_model_zero(p["tau_list"], eps, p["q"], sc, p["D"], p["B"])
    hz.write_json(cfg.path("verify.json"), comp.to_dict())
    _manifest(cfg, mesh={"h_factor": sc.h_factor, "refinements": sc.refinements, "order": sc.order})
    if comp.empty:
        return EXIT_OK
    if not comp.monotone or not comp.meets_floor:
        raise InvariantViolation(f"{comp.regime.value}: monotone={comp.monotone}, meets_floor={comp.meets_floor}")
    return EXIT_OK


def cmd_broken(cfg: RunConfig) -> int:
    p = cfg.params
    sc = _solve_config(p)
    spec = hz.broken_strip_spectrum(p["eps"], p["alpha"], p["count"], sc)
    thr = math.pi**2 / p["eps"] ** 2
    rows = [[i + 1, e.value, e.value - thr, e.parity, e.family_index] for i, e in enumerate(spec)]
    hz.write_csv(cfg.path("broken.csv"), ["index", "eigenvalue", "minus_threshold_exact", "parity",
                                          "family_index"], rows)
    _manifest(cfg, mesh={"h": p["eps"] * p["h_factor"]})
    return EXIT_OK


def cmd_mesh_dump(cfg: RunConfig) -> int:
    p = cfg.params
    if p["domain"] == "trapezoid":
        h = p["h"] if p["h"] is not None else p["eps"] / 6
        from .geometry import build_trapezoid_mesh

        mesh = build_trapezoid_mesh(TrapezoidGeom(p["eps"], p["alpha"]), h, order=p["order"])
    else:
        h = p["h"] if p["h"] is not None else DEFAULT_H
        mesh = build_halfstrip_mesh(HalfStripGeom(p["alpha"], p["L"]), h, order=p["order"])
    path = cfg.path("mesh.txt")
    path.parent.mkdir(parents=True, exist_ok=True)
    write_mesh(mesh, path)
    _manifest(cfg, mesh={"h": h, "n_vertices": mesh.n_vertices, "n_triangles": len(mesh.triangles)})
    return EXIT_OK


COMMANDS = {
    "spectrum": cmd_spectrum,
    "scan": cmd_scan,
    "thresholds": cmd_thresholds,
    "constants": cmd_constants,
    "model1d": cmd_model1d,
    "verify": cmd_verify,
    "broken": cmd_broken,
    "mesh-dump": cmd_mesh_dump,
}


def _manifest(cfg: RunConfig, mesh=None, solver=None):
    cfg.outputs.append("manifest.json")
    hz.write_manifest(cfg.out_dir, cfg.command, cfg.params, [o for o in cfg.outputs if o != "manifest.json"],
                      solver=solver, mesh=mesh)


def main(argv=None) -> int:
    try:
        cfg = parse(argv)
    except UsageError as exc:
        print(f"brokenstrip: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # argparse reports usage errors this way
        return int(exc.code) if exc.code is not None else EXIT_OK
    cfg.out_dir.mkdir(parents=True, exist_ok=True)
    try:
        return COMMANDS[cfg.command](cfg)
    except InvariantViolation as exc:
        print(f"brokenstrip: invariant violated: {exc}", file=sys.stderr)
        return EXIT_INVARIANT
    except (SolverError, ArithmeticError, np.linalg.LinAlgError) as exc:
        print(f"brokenstrip: solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except ValueError as exc:
        print(f"brokenstrip: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
