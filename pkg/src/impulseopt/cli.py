"""Batch front-end: solve, sweep, and verify interception scenarios.

Exit codes: 0 success, 2 configuration error, 3 convergence failure,
4 verification failure.  The default output directory comes from the
IMPULSEOPT_OUT environment variable (falling back to the working
directory).
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from pathlib import Path

import numpy as np

from impulseopt import bcs, diagnostics
from impulseopt.bcs import Variant, build_bvp, parameter_map
from impulseopt.mpbvp import SolverError
from impulseopt.scenarios import load_scenario_file

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_CONVERGENCE = 3
EXIT_VERIFICATION = 4

OUTPUT_DIR_ENV = "IMPULSEOPT_OUT"

TRAJECTORY_SAMPLES = 200


class ConfigError(Exception):
    """Invalid command-line or file configuration."""


def _out_dir(arg: str | None) -> Path:
    path = Path(arg or os.environ.get(OUTPUT_DIR_ENV, "."))
    path.mkdir(parents=True, exist_ok=True)
    return path


def _load_scenario(path: str):
    try:
        return load_scenario_file(path)
    except (OSError, ValueError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read scenario file {path}: {exc}") from exc


def _trajectory_csv(sol, pmap, scenario, path: Path) -> None:
    bp = pmap.breakpoints(sol.params)
    n = pmap.n_segments
    cons = scenario.constraints
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        header = (["segment", "t"]
                  + [f"rM_{a}" for a in "xyz"] + [f"vM_{a}" for a in "xyz"]
                  + [f"rT_{a}" for a in "xyz"] + [f"vT_{a}" for a in "xyz"]
                  + ["primer_magnitude"]
                  + [f"eps_{a}" for a in "xyz"] + [f"p_eps_{a}" for a in "xyz"])
        w.writerow(header)
        for k in range(n):
            s = np.linspace(k / n, (k + 1) / n, TRAJECTORY_SAMPLES)
            y = sol.interpolate(k, s)
            t = bp[k] + (s * n - k) * (bp[k + 1] - bp[k])
            primer = np.linalg.norm(y[bcs._PV], axis=0)
            slack = None
            if pmap.has_terminal_box and k >= n - 2:
                ab = pmap.get(sol.params,
                              "slack_pre" if k == n - 2 else "slack_post")
                kw = cons.k3 if k == n - 2 else cons.k4
                eps, p_eps = bcs.slackness_values(
                    ab, kw, float(bp[k + 1] - bp[k]), t - bp[k])
                slack = np.vstack([eps, p_eps])
            for j in range(s.size):
                row = [k, f"{t[j]:.17g}"]
                row += [f"{v:.17g}" for v in y[0:6, j]]
                row += [f"{v:.17g}" for v in y[12:18, j]]
                row += [f"{primer[j]:.17g}"]
                if slack is not None:
                    row += [f"{v:.17g}" for v in slack[:, j]]
                else:
                    row += [""] * 6
                w.writerow(row)


def _summary(report) -> str:
    inst = report.instants
    parts = [f"cost = {report.cost:.4f}"]
    for k in ("t1", "t2", "th", "tf"):
        if k in inst:
            parts.append(f"{k} = {inst[k]:.7g}")
    lines = ["The maximum residual is "
             f"{report.max_residual:.3e}.",
             ", ".join(parts),
             "dv1 = [" + "; ".join(f"{v:.4f}" for v in report.dv1) + "]"]
    if report.dv2 is not None:
        lines.append("dv2 = [" + "; ".join(f"{v:.4f}" for v in report.dv2) + "]")
    if report.terminal_deviation is not None:
        lines.append("terminal deviation: "
                     + ", ".join(f"{v:.4f}" for v in report.terminal_deviation))
    return "\n".join(lines)


def cmd_solve(args) -> int:
    scenario, guesses = _load_scenario(args.scenario)
    try:
        variant = Variant.from_name(args.variant)
    except KeyError as exc:
        raise ConfigError(str(exc)) from exc
    if not 1e-12 <= args.tol <= 1e-6:
        raise ConfigError("tol must lie in [1e-12, 1e-6]")
    guess = dict(guesses)
    if args.guess:
        try:
            guess.update(json.loads(Path(args.guess).read_text()))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read guess file {args.guess}: {exc}") from exc
    fixed_t1 = args.fixed_t1
    if variant is Variant.ONE_IMPULSE_FIXED_T1 and fixed_t1 is None:
        raise ConfigError("variant OneImpulseFixedT1 requires --fixed-t1")
    out = _out_dir(args.out)
    try:
        bvp, pmap = build_bvp(variant, scenario, guess, fixed_t1=fixed_t1,
                              fixed_t1_scaled=args.fixed_t1_scaled,
                              mesh_points=args.mesh_points)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    meta = {"scenario_label": scenario.label, "variant": variant.value,
            "fixed_t1": fixed_t1, "fixed_t1_scaled": args.fixed_t1_scaled,
            "tol": args.tol}
    try:
        sol, pmap = bcs.solve_variant(
            variant, scenario, guess, tol=args.tol, fixed_t1=fixed_t1,
            fixed_t1_scaled=args.fixed_t1_scaled,
            mesh_points=args.mesh_points)
    except SolverError as exc:
        (out / "failure.json").write_text(json.dumps(
            {**meta, "error": str(exc),
             "guess_params": [float(v) for v in bvp.params]}, indent=2))
        print(f"convergence failure: {exc}", file=sys.stderr)
        return EXIT_CONVERGENCE
    report = diagnostics.verify(sol, pmap, scenario)
    (out / "solution.json").write_text(
        diagnostics.report_to_json(report, sol.params, extra=meta))
    _trajectory_csv(sol, pmap, scenario, out / "trajectory.csv")
    (out / "primer.csv").write_text(diagnostics.primer_csv(sol, pmap))
    print(_summary(report))
    return EXIT_OK


def _parse_grid(spec: str) -> np.ndarray:
    try:
        start, step, stop = (float(x) for x in spec.split(":"))
    except ValueError as exc:
        raise ConfigError(f"grid spec must be start:step:stop, got {spec!r}") from exc
    if step <= 0:
        raise ConfigError("grid step must be positive")
    grid = np.arange(start, stop + 0.5 * step, step)
    if grid.size == 0:
        raise ConfigError("empty grid")
    return grid


def cmd_sweep(args) -> int:
    scenario, guesses = _load_scenario(args.scenario)
    grid = _parse_grid(args.grid)
    out = _out_dir(args.out)
    rows = diagnostics.sweep_fixed_impulse(scenario, grid, scaled=args.scaled,
                                           tol=args.tol, guess=guesses)
    monotone = diagnostics.sweep_is_monotone(rows)
    (out / "sweep.csv").write_text(diagnostics.sweep_csv(rows))
    n_ok = sum(r["converged"] for r in rows)
    print(f"{n_ok}/{len(rows)} rows converged; "
          f"cost strictly increasing: {monotone}")
    for r in rows:
        if r["converged"]:
            print(f"t1 = {r['t1']:.6g}  th = {r['th']:.6f}  cost = {r['cost']:.4f}")
        else:
            print(f"t1 = {r['t1']:.6g}  FAILED: {r['error']}")
    return EXIT_OK if n_ok >= 1 else EXIT_CONVERGENCE


def cmd_verify(args) -> int:
    scenario, _ = _load_scenario(args.scenario)
    try:
        doc = json.loads(Path(args.solution).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read solution file {args.solution}: {exc}") from exc
    label = doc.get("scenario_label", "")
    if label and scenario.label and label != scenario.label:
        raise ConfigError(f"artifact was produced for scenario {label!r}, "
                          f"not {scenario.label!r}")
    try:
        variant = Variant.from_name(doc["variant"])
        pmap = parameter_map(variant, scenario, fixed_t1=doc.get("fixed_t1"),
                             fixed_t1_scaled=bool(doc.get("fixed_t1_scaled")))
        params = np.asarray(doc["raw_params"], dtype=float)
    except (KeyError, ValueError) as exc:
        raise ConfigError(f"invalid solution artifact: {exc}") from exc
    if params.size != pmap.n:
        raise ConfigError("solution artifact parameter dimension mismatch")
    instants = pmap.instants(params)
    dv1 = pmap.get(params, "dv1")
    dv2 = pmap.get(params, "dv2") if "dv2" in pmap.slices else None
    impulse_at_t0 = any(i is None for i, _ in pmap.impulses)
    orc = diagnostics.oracle_trajectory(scenario, instants, dv1, dv2,
                                        impulse_at_t0=impulse_at_t0)
    deviation = None
    if "interceptor_at_tf" in orc and scenario.r_f is not None:
        deviation = orc["interceptor_at_tf"].r - scenario.r_f
    values, active, comp = diagnostics._constraint_survey(
        pmap, scenario, instants, params, deviation)
    violations = []
    if orc["miss"] > 1.0:
        violations.append(f"interception miss {orc['miss']:.6g} m > 1 m")
    for name in doc.get("active_constraints", []):
        g = values.get(name)
        scale = diagnostics._TIME_SCALE if name.startswith("time:") \
            else diagnostics._IMPULSE_SCALE
        if g is None or abs(g) / scale > diagnostics.ACTIVE_THRESHOLD:
            violations.append(f"reported-active constraint {name} has |g| = "
                              f"{abs(g) if g is not None else float('nan'):.6g}")
    for name, product in comp.items():
        if abs(product) > 1e-8:
            violations.append(f"complementarity product {name} = {product:.3e}")
    if deviation is not None:
        print("terminal deviation: "
              + ", ".join(f"{v:.4f}" for v in deviation))
    print(f"interception miss: {orc['miss']:.6g} m")
    if violations:
        for v in violations:
            print(f"VIOLATION: {v}", file=sys.stderr)
        return EXIT_VERIFICATION
    print(f"verification passed ({len(active)} active constraints)")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="impulseopt",
        description="Optimal impulsive space-interception solver")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("solve", help="solve one scenario/variant")
    p.add_argument("--scenario", required=True)
    p.add_argument("--variant", required=True)
    p.add_argument("--tol", type=float, default=1e-9)
    p.add_argument("--guess", help="JSON file overriding the scenario guesses")
    p.add_argument("--out", help="output directory")
    p.add_argument("--fixed-t1", type=float, dest="fixed_t1")
    p.add_argument("--fixed-t1-scaled", action="store_true",
                   dest="fixed_t1_scaled")
    p.add_argument("--mesh-points", type=int, default=11, dest="mesh_points")
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("sweep", help="fixed-impulse-instant sweep")
    p.add_argument("--scenario", required=True)
    p.add_argument("--grid", required=True, help="start:step:stop")
    p.add_argument("--scaled", action="store_true",
                   help="grid values are fractions of the impact instant")
    p.add_argument("--tol", type=float, default=1e-9)
    p.add_argument("--out", help="output directory")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("verify", help="re-check a solution artifact")
    p.add_argument("--solution", required=True)
    p.add_argument("--scenario", required=True)
    p.set_defaults(func=cmd_verify)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
