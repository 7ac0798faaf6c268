"""Command-line scenario runner.

Exit codes: 0 success, 2 invalid configuration, 3 escape or blow-up,
4 certificate or acceptance violation.  Every subcommand writes a
``report.json`` (also echoed to stdout) and its CSV series into ``--out``.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import sys
from pathlib import Path

import numpy as np

from . import acceptance
from .config import Scenario, certificate_from_json, load_scenario, signal_fn
from .errors import (AlignmentError, CertificateError, ConfigError, ContractionError, DataError,
                     DomainError, GridTooCoarseError)
from .feedback import CONTROLLERS, closed_loop, controller_outputs
from .functionals import IdeSystem, LADDER
from .hyperbolic import HyperbolicSystem, initial_v, solve_pde, to_ide, upwind_reference
from .ide import SolveConfig, escape_time_bound, solve
from .sampled import Grid, to_csv
from .stability import check_razumikhin

EXIT_OK, EXIT_CONFIG, EXIT_ESCAPE, EXIT_VIOLATION = 0, 2, 3, 4


class Failure(Exception):
    def __init__(self, code: int, report: dict):
        super().__init__(report.get("error", ""))
        self.code = code
        self.report = report


# helpers -----------------------------------------------------------------

def _outdir(sc: Scenario, default: str) -> Path:
    out = sc.out or Path("out") / default
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_series(path: Path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([format(float(x), ".17g") for x in row])


def _default_times(T: float, h: float, count: int = 40) -> list:
    stride = max(1, math.floor(T / h / count))
    n = round(T / h)
    return [k * h for k in range(0, n + 1, stride)]


def _require(sc: Scenario, cls, what: str):
    if not isinstance(sc.system, cls):
        raise ConfigError([f"{sc.kind} needs {what} system"])


def _pde_signals(sc: Scenario, sysh: HyperbolicSystem, K: int, rng):
    dz, h = sysh.steps(K)
    x0 = signal_fn(sc.raw.get("initial", {"type": "random"}), Grid(0.0, dz, K), rng, 1, (0.0, 1.0))
    n = round(sc.T / h)
    w = None
    if sysh.m:
        w = signal_fn(sc.raw.get("input", {"type": "zero"}), Grid(0.0, h, n), rng, sysh.m)
    return x0, w


# subcommands -------------------------------------------------------------

def cmd_simulate_ide(sc: Scenario) -> dict:
    _require(sc, IdeSystem, "an IDE")
    sys_ = sc.system
    K, h = sc.K, sc.system.r / sc.K
    rng = sc.rng()
    n = round(sc.T / h)
    x0 = signal_fn(sc.raw.get("initial", {"type": "random"}), Grid(-sys_.r, h, K), rng, sys_.n)
    inputs = None
    if sys_.m:
        inputs = signal_fn(sc.raw.get("input", {"type": "zero"}), Grid(-sys_.r, h, K + n), rng, sys_.m)
    traj = solve(sys_, x0, inputs, SolveConfig(sc.T, sc.tol))
    out = _outdir(sc, "simulate-ide")
    to_csv(traj.solution, out / "solution.csv")
    _write_series(out / "windows.csv", ["t_start", "t_end", "R", "delta", "sweeps", "factor"],
                  [(w.t_start, w.t_end, w.R, w.delta, w.sweeps, w.factor) for w in traj.windows])
    report = {"escaped": traj.escaped, "t_max": None if math.isinf(traj.t_max_reached) else traj.t_max_reached,
              "last_finite_norm": traj.last_finite_norm, "windows": len(traj.windows),
              "max_factor": traj.max_factor, "escape_time_bound": escape_time_bound(sys_, traj.last_finite_norm)}
    if traj.escaped:
        raise Failure(EXIT_ESCAPE, report | {"error": f"solution escaped at t={traj.t_max_reached:g}"})
    return report


def cmd_simulate_pde(sc: Scenario) -> dict:
    _require(sc, HyperbolicSystem, "a hyperbolic")
    sysh = sc.system
    rng = sc.rng()
    x0, w = _pde_signals(sc, sysh, sc.K, rng)
    _, h = sysh.steps(sc.K)
    times = sc.snapshot_times or _default_times(sc.T, h)
    sol = solve_pde(sysh, x0, w, sc.T, times, SolveConfig(sc.T, sc.tol))
    out = _outdir(sc, "simulate-pde")
    sol.write_snapshots(out)
    sups = [(t, float(np.max(np.abs(p.values)))) for t, p in sorted(sol.snapshots.items())]
    _write_series(out / "sup_trace.csv", ["t", "sup_x"], sups)
    to_csv(sol.boundary_traces(), out / "boundary_traces.csv",
           header=["t_lo", "t_hi"] + [f"p_{i + 1}" for i in range(sysh.N)] + ["v"])
    report = {"escaped": sol.escaped, "snapshots": len(sups), "sup_first": sups[0][1] if sups else None,
              "sup_last": sups[-1][1] if sups else None}
    if sol.escaped:
        raise Failure(EXIT_ESCAPE, report | {"error": f"closure escaped at t={sol.trajectory.t_max_reached:g}"})
    return report


def cmd_convert(sc: Scenario) -> dict:
    _require(sc, HyperbolicSystem, "a hyperbolic")
    sysh = sc.system
    ide = to_ide(sysh)
    mod = ide.moduli
    out = _outdir(sc, "convert")
    x0, _ = _pde_signals(sc, sysh, sc.K, sc.rng())
    hist = initial_v(sysh, x0).stacked()
    to_csv(hist, out / "closure_initial.csv",
           header=["t_lo", "t_hi"] + [f"p_{i + 1}" for i in range(sysh.N)] + ["v"])
    ladder = [{"R": R, "N": mod.N(R), "M": mod.M(R), "a": mod.a(R),
               "b": None if mod.b is None else mod.b(R)} for R in LADDER]
    return {"state_dimension": ide.n, "input_dimension": ide.m, "r": ide.r,
            "simple_characteristics": sysh.is_simple(), "moduli": ladder}


def cmd_check_razumikhin(sc: Scenario) -> dict:
    ide = to_ide(sc.system) if isinstance(sc.system, HyperbolicSystem) else sc.system
    cert = certificate_from_json(sc.raw["certificate"], ide.r)
    samples = int(sc.raw.get("samples", 10_000))
    rep = check_razumikhin(ide, cert, samples=samples, seed=sc.seed, K=sc.K)
    report = {"samples": rep.samples, "violations": rep.violations, "worst_margin": rep.worst_margin,
              "effective_lambda": rep.effective_lambda, "analytic": rep.analytic,
              "passed": rep.passed, "witness": rep.witness}
    out = _outdir(sc, "check-razumikhin")
    (out / "razumikhin.json").write_text(json.dumps(report, indent=2))
    if not rep.passed:
        raise Failure(EXIT_VIOLATION, report | {"error": f"{rep.violations} violations"})
    return report


def cmd_feedback_demo(sc: Scenario) -> dict:
    raw = sc.raw
    g = float(raw.get("g", 1.0))
    controller = raw.get("controller", "kernel")
    if controller not in CONTROLLERS:
        raise ConfigError([f"controller must be one of {CONTROLLERS}"])
    K = sc.K
    h = 1.0 / K
    T = sc.T
    rng = sc.rng()
    x0 = signal_fn(raw.get("initial", {"type": "random"}), Grid(0.0, h, K), rng, 1, (0.0, 1.0))
    n = round(T / h)
    w = signal_fn(raw.get("input", {"type": "zero"}), Grid(0.0, h, n), rng, 1)
    times = sc.snapshot_times or [k * 0.25 for k in range(int(T / 0.25) + 1)]
    res = closed_loop(g, x0, controller, w, T, times, SolveConfig(T, sc.tol))
    out = _outdir(sc, "feedback-demo")
    res.solution.write_snapshots(out)
    o = controller_outputs(res)
    t = np.arange(len(o["kernel"])) * h
    _write_series(out / "controls.csv", ["t", "u_kernel", "u_ide", "u_two_point"],
                  zip(t, o["kernel"], o["ide"], o["two-point"]))
    sups = {f"{s:g}": float(np.max(np.abs(p.values))) for s, p in sorted(res.snapshots.items())}
    mismatch = max(float(np.max(np.abs(o["kernel"] - o[k]))) for k in ("ide", "two-point"))
    report = {"g": g, "controller": controller, "sup_by_time": sups, "controller_mismatch": mismatch}
    if res.solution.escaped:
        raise Failure(EXIT_ESCAPE, report | {"error": "closed loop escaped"})
    return report


def cmd_equivalence_audit(sc: Scenario) -> dict:
    _require(sc, HyperbolicSystem, "a hyperbolic")
    sysh = sc.system
    errs = []
    for K in (sc.K, 2 * sc.K):
        x0, w = _pde_signals(sc, sysh, K, sc.rng())
        _, h = sysh.steps(K)
        times = sc.snapshot_times or _default_times(sc.T, sysh.steps(sc.K)[1])
        sol = solve_pde(sysh, x0, w, sc.T, times, SolveConfig(sc.T, sc.tol))
        if sol.escaped:
            raise Failure(EXIT_ESCAPE, {"error": "closure escaped", "K": K})
        ref = upwind_reference(sysh, x0, w, sc.T, times)
        errs.append(max(float(np.max(np.abs(sol.snapshots[t].values - ref[t].values))) for t in times))
    exact = max(errs) <= 1e-12
    ratio = None if exact else errs[0] / max(errs[1], 1e-300)
    report = {"K": [sc.K, 2 * sc.K], "discrepancy": errs, "ratio": ratio}
    out = _outdir(sc, "equivalence-audit")
    (out / "equivalence.json").write_text(json.dumps(report, indent=2))
    if not exact and not 1.5 <= ratio <= 2.5:
        raise Failure(EXIT_VIOLATION, report | {"error": f"convergence ratio {ratio:.3g} outside [1.5, 2.5]"})
    return report


def cmd_acceptance(sc: Scenario) -> dict:
    res = acceptance.run_criterion(int(sc.raw["criterion"]), seed=sc.seed)
    print(res.line(), file=sys.stderr)
    report = res.to_json()
    if not res.passed:
        raise Failure(EXIT_VIOLATION, report | {"error": f"criterion {res.number} failed"})
    return report


COMMANDS = {
    "simulate-ide": cmd_simulate_ide,
    "simulate-pde": cmd_simulate_pde,
    "convert": cmd_convert,
    "check-razumikhin": cmd_check_razumikhin,
    "feedback-demo": cmd_feedback_demo,
    "equivalence-audit": cmd_equivalence_audit,
    "acceptance": cmd_acceptance,
}


# argument parsing ---------------------------------------------------------

def _global_flags(parser, suppress: bool):
    d = {"default": argparse.SUPPRESS} if suppress else {"default": None}
    parser.add_argument("--seed", type=int, help="random seed (Philox stream key)", **d)
    parser.add_argument("--out", help="output directory", **d)
    parser.add_argument("--K", type=int, help="cells per delay horizon", **d)
    parser.add_argument("--T", type=float, help="final time", **d)
    parser.add_argument("--tol", type=float, help="fixed-point tolerance", **d)
    parser.add_argument("-v", "--verbose", action="store_true", help="log solver windows", **d)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="idepde", description=__doc__.splitlines()[0])
    _global_flags(p, suppress=False)
    sub = p.add_subparsers(dest="command", required=True)

    def add(name, help_):
        sp = sub.add_parser(name, help=help_)
        _global_flags(sp, suppress=True)
        sp.add_argument("--scenario", help="scenario JSON file")
        sp.add_argument("--system", help="system JSON file")
        return sp

    add("simulate-ide", "solve an integral delay equation").add_argument("--initial", help="initial-history signal as JSON")
    sp = add("simulate-pde", "solve a transport PDE through its closure")
    sp.add_argument("--initial", help="initial-profile signal as JSON")
    sp.add_argument("--input", help="input signal(s) as JSON")
    add("convert", "report the closure IDE of a transport PDE")
    sp = add("check-razumikhin", "sample the Razumikhin inequality")
    sp.add_argument("--cert", help="certificate JSON file")
    sp.add_argument("--samples", type=int)
    sp = add("feedback-demo", "closed loop with the finite-time boundary law")
    sp.add_argument("--g", type=float)
    sp.add_argument("--controller", choices=CONTROLLERS)
    sp.add_argument("--w-bar", type=float, help="constant actuator error")
    add("equivalence-audit", "compare with the upwind oracle at K and 2K")
    sp = sub.add_parser("run", help="run a scenario file (kind taken from the file)")
    _global_flags(sp, suppress=True)
    sp.add_argument("scenario")
    sp = sub.add_parser("acceptance", help="run the acceptance suite")
    _global_flags(sp, suppress=True)
    sp.add_argument("--criterion", type=int, choices=range(1, 11))
    return p


def _scenario_from_args(args) -> Scenario:
    overrides = {k: getattr(args, k, None) for k in ("K", "T", "tol", "seed", "out")}
    if args.command == "run":
        return load_scenario(args.scenario, overrides)
    raw: dict = {}
    scen = getattr(args, "scenario", None)
    if scen:
        path = Path(scen)
        if not path.exists():
            raise ConfigError([f"scenario file {path} does not exist"])
        raw = json.loads(path.read_text())
        base = path.parent
    else:
        base = Path(".")
    raw["kind"] = args.command
    if getattr(args, "system", None):
        raw["system_file"] = str(Path(args.system).resolve())
    elif "system_file" in raw:
        raw["system_file"] = str((base / raw["system_file"]).resolve())
    if "certificate_file" in raw:
        raw["certificate_file"] = str((base / raw["certificate_file"]).resolve())
    for key in ("initial", "input"):
        if getattr(args, key, None):
            raw[key] = json.loads(getattr(args, key))
    if getattr(args, "cert", None):
        raw["certificate_file"] = str(Path(args.cert).resolve())
    for key in ("samples", "g", "controller"):
        if getattr(args, key, None) is not None:
            raw[key] = getattr(args, key)
    if getattr(args, "w_bar", None) is not None:
        raw["input"] = {"type": "constant", "value": args.w_bar}
    if args.command == "acceptance":
        raw["criterion"] = args.criterion
    return load_scenario(raw, overrides)


def _run_acceptance_suite(args) -> int:
    seed = getattr(args, "seed", None) or 0
    results = acceptance.run_all(seed=seed, echo=lambda line: print(line, file=sys.stderr))
    report = {"results": [r.to_json() for r in results], "passed": all(r.passed for r in results)}
    out = Path(args.out) if getattr(args, "out", None) else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        (out / "report.json").write_text(json.dumps(report, indent=2))
    print(json.dumps(report, indent=2))
    return EXIT_OK if report["passed"] else EXIT_VIOLATION


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if getattr(args, "verbose", False) else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command == "acceptance" and getattr(args, "criterion", None) is None:
        return _run_acceptance_suite(args)
    code, report = EXIT_OK, {}
    sc = None
    try:
        sc = _scenario_from_args(args)
        report = COMMANDS[sc.kind](sc)
        report["status"] = "ok"
    except ConfigError as exc:
        code, report = EXIT_CONFIG, {"status": "invalid", "errors": exc.violations}
    except GridTooCoarseError as exc:
        code, report = EXIT_CONFIG, {"status": "invalid", "errors": [str(exc)],
                                     "required_step": exc.required_step}
    except (AlignmentError, DomainError, DataError, CertificateError) as exc:
        code, report = EXIT_CONFIG, {"status": "invalid", "errors": [str(exc)]}
    except ContractionError as exc:
        code, report = EXIT_ESCAPE, {"status": "escape", "error": str(exc), "factor": exc.factor}
    except Failure as exc:
        code, report = exc.code, {"status": "failed"} | exc.report
    text = json.dumps(report, indent=2, default=str)
    print(text)
    if sc is not None and code != EXIT_CONFIG:
        out = _outdir(sc, sc.kind)
        (out / "report.json").write_text(text + "\n")
    return code


if __name__ == "__main__":
    sys.exit(main())
