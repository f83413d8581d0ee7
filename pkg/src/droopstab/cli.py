"""Command line interface.

Subcommands: analyze, simulate, sweep, export, ieee13.  The analyze exit
code encodes the verdict: 0 = stability certified, 2 = sufficient conditions
fail but the full system is stable (conservatism), 3 = full system unstable.
Operational failures (bad files, no equilibrium) exit 1 with a stage label.

All floats in emitted files use the shortest round-trip representation so
artifacts are byte-stable and re-importable without loss.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from .conditions import AnalysisError, AnalysisOptions, StabilityReport, analyze
from .equilibrium import find_equilibrium
from .grid import GridSpec, GridSpecError, load_grid, save_grid
from .ieee13 import build_ieee13
from .linearize import extract_blocks, jacobian, to_standard_form
from .simulator import StepPolicy, simulate_nonlinear, trajectory_to_csv
from .timescale import build_reduced_model

logger = logging.getLogger(__name__)


def _fmt(x) -> str:
    return repr(float(x))


def write_matrix_csv(path, a: np.ndarray) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for row in np.atleast_2d(a):
            f.write(",".join(_fmt(v) for v in row) + "\n")


def read_matrix_csv(path) -> np.ndarray:
    rows = []
    with open(path, "r", encoding="utf-8") as f:
        for line in f:
            line = line.strip()
            if line:
                rows.append([float(v) for v in line.split(",")])
    return np.array(rows)


def write_eigenvalues_csv(path, a: np.ndarray) -> None:
    ev = np.sort_complex(np.linalg.eigvals(a))
    with open(path, "w", encoding="utf-8") as f:
        f.write("real,imag\n")
        for v in ev:
            f.write(f"{_fmt(v.real)},{_fmt(v.imag)}\n")


def _load_spec(path: str) -> GridSpec:
    if path == "ieee13":
        return build_ieee13()
    return load_grid(path)


def _parse_gain(text: str | None):
    if text is None:
        return None
    parts = [float(v) for v in text.split(",")]
    return parts[0] if len(parts) == 1 else parts


def _load_q(text: str | None):
    if text is None or text == "identity":
        return None
    return read_matrix_csv(text)


def _report_table(rep: StabilityReport) -> str:
    d = rep.to_dict()
    lines = [
        f"grid: {rep.n} inverters, {rep.m} lines (spec {rep.spec_hash})",
        f"equilibrium: converged={d['equilibrium']['converged']} "
        f"residual={d['equilibrium']['residual_norm']:.3e} "
        f"iterations={d['equilibrium']['iterations']}",
        f"timescales: eps1={rep.eps1:.6g}  eps2={rep.eps2:.6g}  eps3={rep.eps3:.6g}",
        "",
        f"{'check':34s}{'value':>16s}  verdict",
    ]

    def flagrow(name, flag, abscissa):
        lines.append(f"{name:34s}{abscissa:16.6g}  {'PASS' if flag else 'FAIL'}")

    flagrow("voltage coupling block Hurwitz", *rep.hurwitz_e)
    flagrow("angle subsystem Hurwitz", *rep.hurwitz_slow)
    flagrow("full system Hurwitz", *rep.hurwitz_full)
    if rep.eps1_star is not None:
        lines.append(f"{'eps1 < eps1_star':34s}{rep.eps1_star:16.6g}  "
                     f"{'PASS' if rep.verdict_reduced else 'FAIL'}")
        lines.append(f"{'eps3 < eps3_star':34s}{rep.eps3_star:16.6g}  "
                     f"{'PASS' if rep.eps3 < rep.eps3_star else 'FAIL'}")
    if rep.gain_bounds is not None:
        lines.append("")
        lines.append("voltage droop gain ranges:")
        for gb in rep.gain_bounds:
            rng = "k_q > 0" if gb.kind == "unbounded-positive" else f"0 < k_q < {gb.upper:.6g}"
            lines.append(f"  bus {gb.bus}: {rng}")
    if rep.warnings:
        lines.append("")
        lines.extend(f"warning: {w}" for w in rep.warnings)
    lines.append("")
    lines.append(f"certified={rep.certified} conservative={rep.conditions_conservative} "
                 f"exit={rep.exit_code()}")
    return "\n".join(lines)


def cmd_analyze(args) -> int:
    try:
        spec = _load_spec(args.spec)
    except (GridSpecError, OSError) as exc:
        print(f"[parse] {exc}", file=sys.stderr)
        return 1
    opt = AnalysisOptions(
        k_p=_parse_gain(args.kp), k_q=_parse_gain(args.kq),
        q_slow=_load_q(args.q_slow), q_fast=_load_q(args.q_fast), q_xi=_load_q(args.q_xi),
        eps1_policy=args.eps1_policy, seed=args.seed,
    )
    try:
        rep = analyze(spec, opt)
    except AnalysisError as exc:
        print(exc, file=sys.stderr)
        return 1

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "report.json", "w", encoding="utf-8") as f:
        json.dump(rep.to_dict(), f, indent=2)
        f.write("\n")
    (out / "report.txt").write_text(_report_table(rep) + "\n", encoding="utf-8")

    eq = find_equilibrium(spec)
    a = jacobian(spec, eq.point)
    blocks = to_standard_form(extract_blocks(a, spec))
    reduced = build_reduced_model(blocks)
    write_eigenvalues_csv(out / "eigenvalues_e.csv", reduced.e_matrix)
    write_eigenvalues_csv(out / "eigenvalues_slow.csv", reduced.a_slow)
    write_eigenvalues_csv(out / "eigenvalues_full.csv", a)

    if args.format == "json":
        json.dump(rep.to_dict(), sys.stdout, indent=2)
        print()
    else:
        print(_report_table(rep))
    return rep.exit_code()


def cmd_export(args) -> int:
    try:
        spec = _load_spec(args.spec)
        eq = find_equilibrium(spec)
        if not eq.converged:
            print("[equilibrium] did not converge", file=sys.stderr)
            return 1
        a = jacobian(spec, eq.point)
        blocks = to_standard_form(extract_blocks(a, spec))
        reduced = build_reduced_model(blocks)
    except (GridSpecError, OSError, AnalysisError) as exc:
        print(f"[export] {exc}", file=sys.stderr)
        return 1
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_matrix_csv(out / "matrix_full.csv", a)
    write_matrix_csv(out / "matrix_e.csv", reduced.e_matrix)
    write_matrix_csv(out / "matrix_slow.csv", reduced.a_slow)
    write_matrix_csv(out / "matrix_gamma0.csv", reduced.gamma0)
    write_eigenvalues_csv(out / "eigenvalues_e.csv", reduced.e_matrix)
    write_eigenvalues_csv(out / "eigenvalues_slow.csv", reduced.a_slow)
    write_eigenvalues_csv(out / "eigenvalues_full.csv", a)
    print(f"wrote matrices and eigenvalue tables to {out}")
    return 0


def cmd_simulate(args) -> int:
    try:
        spec = _load_spec(args.spec)
    except (GridSpecError, OSError) as exc:
        print(f"[parse] {exc}", file=sys.stderr)
        return 1
    eq = find_equilibrium(spec)
    if not eq.converged:
        print("[equilibrium] did not converge", file=sys.stderr)
        return 1
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    path = out / "trajectory.csv"
    if args.horizon <= 0:
        # header-only artifact for a degenerate horizon
        from .simulator import Trajectory
        traj = Trajectory(np.empty(0), np.empty((0, 3 * spec.n + 2 * spec.m)))
        trajectory_to_csv(traj, path, spec.n, spec.m)
        print(f"wrote {path}")
        return 0
    x0 = eq.point.copy()
    x0.delta[0] += args.perturb
    traj = simulate_nonlinear(spec, x0, args.horizon,
                              StepPolicy(rtol=args.rtol, atol=args.atol))
    trajectory_to_csv(traj, path, spec.n, spec.m)
    for w in traj.metadata.get("warnings", []):
        print(f"warning: {w}", file=sys.stderr)
    print(f"wrote {path} ({len(traj.times)} steps)")
    return 0


def cmd_sweep(args) -> int:
    try:
        spec = _load_spec(args.spec)
    except (GridSpecError, OSError) as exc:
        print(f"[parse] {exc}", file=sys.stderr)
        return 1
    kps = [float(v) for v in args.kp_grid.split(",")]
    kqs = [float(v) for v in args.kq_grid.split(",")]
    points = [(kp, kq) for kp in kps for kq in kqs]

    def run(point):
        kp, kq = point
        try:
            rep = analyze(spec, AnalysisOptions(k_p=kp, k_q=kq, seed=args.seed,
                                                eps1_policy=args.eps1_policy,
                                                mc_samples=0))
            return (kp, kq, rep.hurwitz_e[1], rep.hurwitz_slow[1], rep.hurwitz_full[1],
                    rep.eps1_star, rep.eps3_star, rep.verdict_reduced, rep.verdict_full,
                    rep.certified, rep.exit_code(), "")
        except AnalysisError as exc:
            return (kp, kq, None, None, None, None, None, False, False, False, 1, str(exc))

    if args.jobs > 1:
        with ThreadPoolExecutor(max_workers=args.jobs) as pool:
            rows = list(pool.map(run, points))   # map preserves input order
    else:
        rows = [run(p) for p in points]

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    path = out / "sweep.csv"
    header = ("k_p,k_q,abscissa_e,abscissa_slow,abscissa_full,eps1_star,eps3_star,"
              "verdict_reduced,verdict_full,certified,exit_code,error")
    with open(path, "w", encoding="utf-8") as f:
        f.write(header + "\n")
        for row in rows:
            cells = []
            for v in row:
                if v is None:
                    cells.append("")
                elif isinstance(v, bool):
                    cells.append(str(v).lower())
                elif isinstance(v, str):
                    cells.append(v.replace(",", ";"))
                else:
                    cells.append(_fmt(v))
            f.write(",".join(cells) + "\n")
    print(f"wrote {path} ({len(rows)} points)")
    return 0


def cmd_ieee13(args) -> int:
    if args.action != "gen":
        print(f"unknown ieee13 action {args.action!r}; expected 'gen'", file=sys.stderr)
        return 1
    spec = build_ieee13(k_q=args.kq_scalar, k_p=args.kp_scalar)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_grid(spec, out)
    print(f"wrote {out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="droopstab",
        description="Small-signal stability certificates for droop-controlled "
                    "inverter distribution grids")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    pa = sub.add_parser("analyze", help="run the full certification pipeline")
    pa.add_argument("--spec", required=True, help="grid spec file, or 'ieee13' for the bundled dataset")
    pa.add_argument("--out", default="out", help="output directory")
    pa.add_argument("--kp", help="frequency droop gain override (scalar or comma list)")
    pa.add_argument("--kq", help="voltage droop gain override (scalar or comma list)")
    pa.add_argument("--q-slow", help="'identity' or CSV matrix path")
    pa.add_argument("--q-fast", help="'identity' or CSV matrix path")
    pa.add_argument("--q-xi", help="'identity' or CSV matrix path")
    pa.add_argument("--eps1-policy", choices=["actual", "half-star"], default="half-star")
    pa.add_argument("--seed", type=int, default=42)
    pa.add_argument("--format", choices=["table", "json"], default="table")
    pa.set_defaults(func=cmd_analyze)

    ps = sub.add_parser("simulate", help="integrate the nonlinear dynamics from a perturbed equilibrium")
    ps.add_argument("--spec", required=True)
    ps.add_argument("--out", default="out")
    ps.add_argument("--horizon", type=float, default=1.0, help="simulation horizon (s)")
    ps.add_argument("--perturb", type=float, default=1e-4, help="initial angle perturbation (rad)")
    ps.add_argument("--rtol", type=float, default=1e-8)
    ps.add_argument("--atol", type=float, default=1e-10)
    ps.set_defaults(func=cmd_simulate)

    pw = sub.add_parser("sweep", help="evaluate analyze over a droop gain grid")
    pw.add_argument("--spec", required=True)
    pw.add_argument("--out", default="out")
    pw.add_argument("--kp-grid", required=True, help="comma-separated k_p values")
    pw.add_argument("--kq-grid", required=True, help="comma-separated k_q values")
    pw.add_argument("--eps1-policy", choices=["actual", "half-star"], default="half-star")
    pw.add_argument("--seed", type=int, default=42)
    pw.add_argument("--jobs", type=int, default=1)
    pw.set_defaults(func=cmd_sweep)

    pe = sub.add_parser("export", help="export system matrices and spectra as CSV")
    pe.add_argument("--spec", required=True)
    pe.add_argument("--out", default="out")
    pe.set_defaults(func=cmd_export)

    pg = sub.add_parser("ieee13", help="bundled dataset utilities")
    pg.add_argument("action", choices=["gen"])
    pg.add_argument("--out", default="ieee13.json")
    pg.add_argument("--kq", dest="kq_scalar", type=float, default=0.05)
    pg.add_argument("--kp", dest="kp_scalar", type=float, default=0.6)
    pg.set_defaults(func=cmd_ieee13)
    return parser


def main(argv=None) -> int:
    level = os.environ.get("DROOPSTAB_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING))
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
