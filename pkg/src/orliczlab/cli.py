"""Command-line entry point.

Usage::

    orliczlab nfun check --config phi.json --out results/
    orliczlab tensor check --config tensor.json
    orliczlab solve --config heat.json --format both
    orliczlab audit --config audit.json
    orliczlab sweep --config sweep.json
    orliczlab korn --config korn.json

Every run writes ``manifest.json`` (run id, config echo, versions, seed,
wall time) next to the command's own outputs.  Exit codes: 0 all checks
passed, 1 an invariant failed, 2 configuration error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import math
import os
import platform
import sys
import time
from pathlib import Path
from typing import Optional

import numpy as np
import scipy

from . import __version__
from .auditor import (
    FamilyNotUniformError,
    audit_caccioppoli_AL,
    audit_caccioppoli_sAL,
    audit_korn,
    reports_to_csv,
    reports_to_json,
    uniformity_sweep,
)
from .fields import Grid, field_to_bytes, field_to_csv
from .nfunction import (
    estimate_growth_constants,
    make_prototype,
    power_function,
    shift,
)
from .problems import bandlimited, build_problem, tensor_from_dict
from .solver import ConvergenceError, Forcing, rms_norm, solve
from .tensors import check_assumption1, quadruple_equivalence

OUT_ENV = "ORLICZLAB_OUT"
EXIT_OK, EXIT_FAIL, EXIT_CONFIG, EXIT_NUMERIC = 0, 1, 2, 3
COMMANDS = ("nfun", "tensor", "solve", "audit", "sweep", "korn")


class ConfigError(ValueError):
    pass


# --- config access -----------------------------------------------------------


def load_config(path: Optional[str]) -> dict:
    if path is None:
        return {}
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: line {exc.lineno}, column {exc.colno}: {exc.msg}") from exc
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be a JSON object")
    return data


def _field(cfg: dict, dotted: str, kind=None, default=...):
    node = cfg
    for part in dotted.split("."):
        if not isinstance(node, dict) or part not in node:
            if default is not ...:
                return default
            raise ConfigError(f"config field '{dotted}' is missing")
        node = node[part]
    if kind is not None:
        try:
            if kind is float and isinstance(node, bool):
                raise TypeError
            node = kind(node)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"config field '{dotted}': expected {kind.__name__}, got {node!r}") from exc
    return node


def _phi_from(cfg: dict, key: str = "phi"):
    spec = _field(cfg, key)
    if not isinstance(spec, dict):
        raise ConfigError(f"config field '{key}' must be an object")
    try:
        if "power" in spec:
            return power_function(_field(cfg, f"{key}.power", float))
        return make_prototype(
            _field(cfg, f"{key}.kind", str), _field(cfg, f"{key}.p", float), _field(cfg, f"{key}.mu", float, 0.0)
        )
    except ValueError as exc:
        raise ConfigError(f"config field '{key}': {exc}") from exc


def _problem_from(cfg: dict, seed: int):
    for key in ("system", "tensor.kind", "tensor.p", "grid.n", "grid.dt", "grid.m"):
        _field(cfg, key)
    try:
        return build_problem(cfg, seed)
    except (KeyError, TypeError) as exc:
        raise ConfigError(f"problem config: {exc}") from exc
    except ValueError as exc:
        raise ConfigError(f"problem config: {exc}") from exc


# --- output ------------------------------------------------------------------


class Run:
    def __init__(self, command: str, config: dict, seed: int, out: Path, formats: tuple, single_thread: bool):
        self.command = command
        self.config = config
        self.seed = seed
        self.out = out
        self.formats = formats
        self.single_thread = single_thread
        digest = hashlib.sha256(
            json.dumps({"command": command, "config": config, "seed": seed}, sort_keys=True).encode()
        ).hexdigest()
        self.run_id = digest[:16]
        self.files: list[str] = []
        self.checks: dict = {}

    def write_text(self, name: str, text: str):
        (self.out / name).write_text(text)
        self.files.append(name)

    def write_bytes(self, name: str, data: bytes):
        (self.out / name).write_bytes(data)
        self.files.append(name)

    def write_json(self, name: str, payload: dict):
        self.write_text(name, json.dumps({"run_id": self.run_id, **payload}, indent=2, sort_keys=True) + "\n")

    def write_csv(self, name: str, header: list, rows: list):
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["run_id"] + header)
        for row in rows:
            writer.writerow([self.run_id] + [repr(v) if isinstance(v, float) else v for v in row])
        self.write_text(name, buf.getvalue())

    def want(self, fmt: str) -> bool:
        return fmt in self.formats

    def check(self, name: str, passed: bool):
        self.checks[name] = bool(passed)

    @property
    def passed(self) -> bool:
        return all(self.checks.values())

    def manifest(self, status: int, wall: float, error: Optional[str] = None) -> dict:
        return {
            "run_id": self.run_id,
            "command": self.command,
            "config": self.config,
            "seed": self.seed,
            "single_thread": self.single_thread,
            "formats": list(self.formats),
            "versions": {
                "orliczlab": __version__,
                "python": platform.python_version(),
                "numpy": np.__version__,
                "scipy": scipy.__version__,
            },
            "outputs": self.files,
            "checks": self.checks,
            "exit_status": status,
            "error": error,
            "wall_time_s": wall,
        }


# --- subcommands -------------------------------------------------------------


def cmd_nfun(run: Run):
    phi = _phi_from(run.config)
    gc = estimate_growth_constants(phi)
    run.check("g_lo>0", gc.g_lo > 0)
    run.check("g_hi>=g_lo", gc.g_hi >= gc.g_lo)
    run.check("delta2<=2^(1+g_hi)", gc.delta2 <= 2.0 ** (1.0 + gc.g_hi) * (1 + 1e-9))
    run.check("1<=q1<=q2", 1.0 <= gc.q1 * (1 + 1e-12) and gc.q1 <= gc.q2)
    shifted = []
    for a in (0.1, 1.0, 10.0):
        sc = estimate_growth_constants(shift(phi, a).as_spec())
        shifted.append({"a": a, "G": sc.G, "delta2": sc.delta2})
    run.write_json("constants.json", {"phi": json.loads(phi.to_json()), "constants": gc.to_dict(), "shifted": shifted})
    if run.want("csv"):
        run.write_csv(
            "constants.csv",
            ["g_lo", "g_hi", "G", "delta2", "q1", "q2"],
            [[gc.g_lo, gc.g_hi, gc.G, gc.delta2, gc.q1, gc.q2]],
        )


def cmd_tensor(run: Run):
    tensor = tensor_from_dict(_field(run.config, "tensor"))
    n = _field(run.config, "samples", int, 10_000)
    dims = _field(run.config, "dims", list, [2, 3])
    rows = []
    payload = {}
    for d in dims:
        res = quadruple_equivalence(tensor.phi, tensor, run.seed, n=n, d=int(d))
        c, C = check_assumption1(tensor, tensor.phi, samples=max(1000, n // 10), seed=run.seed, d=int(d))
        run.check(f"d={d}:violations", res.violations == 0)
        run.check(f"d={d}:validation", res.passed)
        payload[f"d{d}"] = {
            "violations": res.violations,
            "n_valid": res.n_valid,
            "fits": {k: f.to_dict() for k, f in res.fits.items()},
            "assumption1": {"c": c, "C": C},
        }
        for name, fit in res.fits.items():
            rows.append([int(d), name, fit.K, fit.worst, fit.passed])
    if run.want("json"):
        run.write_json("equivalence.json", {"tensor": tensor.form, "phi": tensor.phi.label, "dims": payload})
    if run.want("csv"):
        run.write_csv("equivalence.csv", ["d", "ratio", "K", "worst", "passed"], rows)


def _solve(run: Run):
    spec, exact = _problem_from(run.config, run.seed)
    result = solve(spec)
    if not np.all(np.isfinite(result.trajectory.values)):
        raise FloatingPointError("trajectory contains non-finite values")
    return spec, exact, result


def cmd_solve(run: Run):
    spec, exact, result = _solve(run)
    summary = result.summary()
    if exact is not None:
        g = spec.grid
        err = rms_norm(result.trajectory.values[-1] - exact.u(g.coords(), g.m * g.dt), g)
        summary["final_rms_error"] = err
    run.check("converged", True)
    run.write_bytes("trajectory.olf", field_to_bytes(result.trajectory))
    if run.want("csv"):
        run.write_text("trajectory.csv", field_to_csv(result.trajectory))
        run.write_csv(
            "steps.csv",
            ["step", "iterations", "residual"],
            [[k + 1, it, res] for k, (it, res) in enumerate(zip(result.iterations, result.residuals))],
        )
    run.write_json("report.json", {"summary": summary})


def _audit_reports(run: Run, spec, result):
    a = _field(run.config, "audit")
    r, R = _field(run.config, "audit.r", float), _field(run.config, "audit.R", float)
    center = a.get("center")
    t0 = a.get("t0")
    forcing = spec.forcing if isinstance(spec.forcing, Forcing) else None
    G = estimate_growth_constants(spec.phi).G
    if spec.system == "sAL":
        reps = audit_caccioppoli_sAL(
            result.trajectory, forcing, spec.phi, spec.tensor, r, R, a.get("delta0"), center, t0, G=G
        )
    else:
        reps = audit_caccioppoli_AL(result.trajectory, forcing, spec.phi, spec.tensor, r, R, center, t0, a.get("slab"), G=G)
    wanted = a.get("estimates")
    if wanted is not None:
        missing = [e for e in map(str, wanted) if e not in reps]
        if missing:
            raise ConfigError(f"config field 'audit.estimates': {missing} not available for {spec.system}")
        reps = {e: reps[e] for e in map(str, wanted)}
    return list(reps.values())


def _report_ok(rep) -> bool:
    terms = list(rep.lhs_terms.values()) + list(rep.rhs_terms.values())
    return all(v >= 0 for v in terms) and math.isfinite(rep.ratio)


def cmd_audit(run: Run):
    spec, _, result = _solve(run)
    reports = _audit_reports(run, spec, result)
    for rep in reports:
        rep.context["capped"] = result.capped
        run.check(f"estimate {rep.estimate}: finite, nonnegative", _report_ok(rep))
    if run.want("json"):
        run.write_text("audit.json", reports_to_json(reports, run.run_id) + "\n")
    if run.want("csv"):
        run.write_text("audit.csv", reports_to_csv(reports, run.run_id))


def cmd_sweep(run: Run):
    mu_list = _field(run.config, "mu_list", list)
    r, R = _field(run.config, "r", float), _field(run.config, "R", float)
    estimate = str(_field(run.config, "estimate", str, "4"))
    template = _field(run.config, "problem")
    _problem_from(template, run.seed)
    try:
        rows = uniformity_sweep(
            template, [float(m) for m in mu_list], r, R, estimate, run.seed,
            center=run.config.get("center"), t0=run.config.get("t0"),
            delta0=_field(run.config, "delta0", float, None),
        )
    except FamilyNotUniformError as exc:
        run.check("family G-uniform", False)
        run.write_csv("sweep.csv", ["mu", "G", "ratio"], [[row["mu"], row["G"], ""] for row in exc.rows])
        raise
    run.check("family G-uniform", True)
    ratios = [row["ratio"] for row in rows]
    run.check("ratios finite", all(math.isfinite(x) for x in ratios))
    factor = _field(run.config, "max_ratio_factor", float, None)
    if factor is not None:
        run.check(f"ratio spread <= {factor}", max(ratios) <= factor * min(ratios))
    run.write_csv("sweep.csv", ["mu", "G", "ratio"], [[row["mu"], row["G"], row["ratio"]] for row in rows])
    if run.want("json"):
        run.write_text("sweep_reports.json", reports_to_json([row["report"] for row in rows], run.run_id) + "\n")


def cmd_korn(run: Run):
    phis = _field(run.config, "phis", list)
    count = _field(run.config, "fields", int, 100)
    n = _field(run.config, "n", int, 32)
    r = _field(run.config, "r", float, 1.0)
    dim = _field(run.config, "dim", int, 2)
    grid = Grid(dim, n, dt=1.0, m=0)
    x = grid.coords()
    rows = []
    for k in range(len(phis)):
        phi = _phi_from({"phi": phis[k]})
        for i in range(count):
            u = bandlimited(run.seed + i, dim).u(x)
            rep = audit_korn(u, grid, phi, r)
            rows.append([phi.label, run.seed + i, rep.lhs, rep.sym_term, rep.osc_term, rep.ratio])
    run.check("ratios finite", all(math.isfinite(row[-1]) for row in rows))
    run.write_csv("korn.csv", ["phi", "seed", "lhs", "phi_sym", "phi_osc", "ratio"], rows)
    if run.want("json"):
        summary = {}
        for row in rows:
            summary[row[0]] = max(summary.get(row[0], 0.0), row[-1])
        run.write_json("korn.json", {"max_ratio": summary, "count": count, "n": n, "r": r})


HANDLERS = {
    "nfun": cmd_nfun,
    "tensor": cmd_tensor,
    "solve": cmd_solve,
    "audit": cmd_audit,
    "sweep": cmd_sweep,
    "korn": cmd_korn,
}


# --- entry point -------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="orliczlab", description=__doc__.split("\n\n")[0])
    parser.add_argument("command", choices=COMMANDS)
    parser.add_argument("action", nargs="?", help="'check' for nfun and tensor")
    parser.add_argument("--config", help="JSON config file")
    parser.add_argument("--out", help=f"output directory (default ${OUT_ENV} or ./orliczlab-out)")
    parser.add_argument("--seed", type=int, default=None, help="u64 seed (overrides config 'seed')")
    parser.add_argument("--single-thread", action="store_true", help="bit-reproducible sequential path")
    parser.add_argument("--format", choices=("json", "csv", "both"), default="both")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    t_start = time.perf_counter()
    out = Path(args.out or os.environ.get(OUT_ENV) or "orliczlab-out")
    formats = ("json", "csv") if args.format == "both" else (args.format,)
    config: dict = {}
    run = None
    try:
        if args.command in ("nfun", "tensor") and args.action != "check":
            raise ConfigError(f"'{args.command}' expects the action 'check'")
        if args.command not in ("nfun", "tensor") and args.action is not None:
            raise ConfigError(f"'{args.command}' takes no action argument")
        config = load_config(args.config)
        seed = args.seed if args.seed is not None else _field(config, "seed", int, 0)
        if not 0 <= seed < 2**64:
            raise ConfigError("seed must be an unsigned 64-bit integer")
        out.mkdir(parents=True, exist_ok=True)
        run = Run(args.command, config, seed, out, formats, args.single_thread)
        HANDLERS[args.command](run)
        status, error = (EXIT_OK if run.passed else EXIT_FAIL), None
    except ConfigError as exc:
        status, error = EXIT_CONFIG, str(exc)
    except (ConvergenceError, FloatingPointError, ArithmeticError) as exc:
        status, error = EXIT_NUMERIC, f"{type(exc).__name__}: {exc}"
    except FamilyNotUniformError as exc:
        status, error = EXIT_FAIL, str(exc)
    except ValueError as exc:
        status, error = EXIT_FAIL, str(exc)
    wall = time.perf_counter() - t_start
    if run is None:
        run = Run(args.command, config, 0, out, formats, args.single_thread)
    try:
        out.mkdir(parents=True, exist_ok=True)
        (out / "manifest.json").write_text(json.dumps(run.manifest(status, wall, error), indent=2, sort_keys=True) + "\n")
    except OSError as exc:
        print(f"orliczlab: cannot write manifest: {exc}", file=sys.stderr)
    if error:
        print(f"orliczlab {args.command}: {error}", file=sys.stderr)
    else:
        failed = [k for k, v in run.checks.items() if not v]
        print(f"orliczlab {args.command}: {'PASS' if not failed else 'FAIL ' + ', '.join(failed)} (run {run.run_id})")
    return status


if __name__ == "__main__":
    sys.exit(main())
