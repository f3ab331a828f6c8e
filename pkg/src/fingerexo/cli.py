"""Command line entry point: ``fingerexo <command> [options]``.

Every file written starts with ``#`` comment lines giving the tool
version, geometry digest, seed and the effective parameters.  Failures
print one ``error=<CODE> message`` line on stderr and exit non-zero.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .acceptance import run_all
from .controlsim import ControllerGains, Scenario, emg_reference_pipeline, read_emg_csv, simulate_position
from .differential import assemble_jacobian, grasp_stability_report, reduced_jacobian_batch
from .errors import FingerExoError, ParseError
from .geometry import IDX, FingerPose, MeasuredState, load_geometry
from .kinematics import (SolveOptions, solve_calibration, solve_fk_analytic, solve_fk_numeric, solve_ik,
                         solve_ik_path)
from .linkopt import (OPTIMIZED, OPTIMUM, ConstraintSpec, SearchSpace, exhaustive_search, screening_rates,
                      sensitivity_scan)
from .rendering import (RenderSession, RenderTarget, VirtualMapping, displayed_impedance,
                        finite_difference_impedance, normalized_virtual_impedance, standard_and_nullspace_force,
                        subspace_proxy)

EXIT_CODES = {
    "CONFIG_ERROR": 3, "PARSE_ERROR": 4, "PRECONDITION": 5, "NON_CONVERGENCE": 6, "INFEASIBLE_POSE": 7,
    "AMBIGUOUS_BRANCH": 8, "GEOMETRY_DEGENERATE": 9, "IMPLAUSIBLE_LENGTH": 10, "SINGULAR_CONSTRAINT_BLOCK": 11,
    "SINGULAR_JACOBIAN": 12, "DEGENERATE_PASSIVE_COLUMN": 13, "DEGENERATE_K": 14,
    "RANK_DEFICIENT_MAPPING": 15, "RANK_DEFICIENT_NONACTUATED": 16, "EMPTY_SERIES": 17, "ERROR": 1,
}
ACCEPT_FAILED = 20

STATE_COLUMNS = ("q_o1_deg", "q_o2_deg", "l_x_mm", "q_B_deg", "q_K_deg", "q_D_deg", "q_G_deg", "q_N_deg",
                 "c_1_mm", "c_2_mm")


# ----------------------------------------------------------------- output

class Output:
    """Writes files under one directory, each with the provenance header."""

    def __init__(self, directory: str, seed: int, geom_digest: str, params: dict):
        self.dir = Path(directory)
        self.dir.mkdir(parents=True, exist_ok=True)
        self.header = [f"# fingerexo {__version__}", f"# geometry {geom_digest}", f"# seed {seed}",
                       "# params " + json.dumps(params, sort_keys=True, default=str)]

    def _path(self, name: str) -> Path:
        return self.dir / Path(name).name

    def csv(self, name: str, columns, rows) -> Path:
        path = self._path(name)
        buf = io.StringIO()
        buf.write("\n".join(self.header) + "\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            w.writerow([_cell(v) for v in r])
        path.write_text(buf.getvalue())
        return path

    def json(self, name: str, payload) -> Path:
        path = self._path(name)
        path.write_text("\n".join(self.header) + "\n" + json.dumps(payload, indent=2, sort_keys=True,
                                                                    default=_json_default) + "\n")
        return path


def _cell(v):
    if isinstance(v, (bool, np.bool_)):
        return int(v)
    if isinstance(v, (float, np.floating)):
        return repr(float(v)) if math.isfinite(v) else ("nan" if math.isnan(v) else str(float(v)))
    return v


def _json_default(v):
    if isinstance(v, np.ndarray):
        return v.tolist()
    if isinstance(v, (np.floating, np.integer)):
        return v.item()
    if isinstance(v, np.bool_):
        return bool(v)
    return str(v)


def read_table(path: str, columns) -> dict:
    """Numeric CSV with the given header; ``#`` lines are skipped."""
    p = Path(path)
    if not p.is_file():
        raise ParseError(f"input file not found: {path}", row=0)
    rows = [r for r in csv.reader(io.StringIO(p.read_text())) if r and not r[0].lstrip().startswith("#")]
    if not rows:
        raise ParseError(f"{path}: no header", row=0)
    header = [h.strip() for h in rows[0]]
    missing = [c for c in columns if c not in header]
    if missing:
        raise ParseError(f"{path}: missing column(s) {', '.join(missing)}", row=1)
    data = {c: [] for c in header}
    for i, r in enumerate(rows[1:], start=2):
        if len(r) != len(header):
            raise ParseError(f"{path}: row {i} has {len(r)} fields, expected {len(header)}", row=i)
        for c, v in zip(header, r):
            try:
                data[c].append(float(v))
            except ValueError:
                raise ParseError(f"{path}: row {i} column {c} is not a number", row=i) from None
    return {c: np.array(v) for c, v in data.items()}


def _pair(text: str, name: str) -> tuple:
    try:
        a, b = (float(v) for v in text.split(","))
    except ValueError:
        raise ParseError(f"--{name} expects two comma-separated numbers, got {text!r}", row=0) from None
    return a, b


def _state_row(state) -> list:
    z = state.vector(0.0)
    deg = math.degrees
    return [deg(z[IDX["q_o1"]]), deg(z[IDX["q_o2"]]), z[IDX["l_x"]], deg(z[IDX["q_B"]]), deg(z[IDX["q_K"]]),
            deg(z[IDX["q_D"]]), deg(z[IDX["q_G"]]), deg(z[IDX["q_N"]]), z[IDX["c_1"]], z[IDX["c_2"]]]


def closing_trajectory(duration: float = 4.0, dt: float = 0.01) -> tuple:
    """Default finger motion: close to (70, 80) deg and open again."""
    t = np.arange(0.0, duration + dt / 2, dt)
    s = 0.5 * (1 - np.cos(2 * np.pi * t / duration))
    return t, 70.0 * s, 80.0 * s


def _trajectory(args) -> tuple:
    if args.input:
        tab = read_table(args.input, ("t", "q_o1", "q_o2"))
        return tab["t"], tab["q_o1"], tab["q_o2"], tab
    t, a, b = closing_trajectory()
    return t, a, b, {}


# --------------------------------------------------------------- commands

def cmd_solve_ik(args, geom, out):
    opts = SolveOptions(check_bounds=not args.no_bounds)
    if args.input:
        tab = read_table(args.input, ("t", "q_o1_deg", "q_o2_deg"))
        poses = [FingerPose.from_degrees(a, b) for a, b in zip(tab["q_o1_deg"], tab["q_o2_deg"])]
        states = solve_ik_path(geom, poses, opts)
        out.csv("ik.csv", ("t",) + STATE_COLUMNS, ([t] + _state_row(s) for t, s in zip(tab["t"], states)))
        return {"samples": len(states)}
    state = solve_ik(geom, FingerPose.from_degrees(*_pair(args.pose, "pose")), opts)
    out.csv("ik.csv", STATE_COLUMNS, [_state_row(state)])
    return dict(zip(STATE_COLUMNS, _state_row(state)))


def cmd_solve_fk(args, geom, out):
    opts = SolveOptions(check_bounds=False)
    solve = (lambda m, o: solve_fk_analytic(geom, m)) if args.method == "analytic" else \
        (lambda m, o: solve_fk_numeric(geom, m, o))
    if args.input:
        tab = read_table(args.input, ("t", "l_x_mm", "q_B_deg"))
        states, prev = [], None
        for lx, qb in zip(tab["l_x_mm"], tab["q_B_deg"]):
            o = SolveOptions(check_bounds=False, warm_start=prev)
            prev = solve(MeasuredState(lx, math.radians(qb)), o)
            states.append(prev)
        out.csv("fk.csv", ("t",) + STATE_COLUMNS, ([t] + _state_row(s) for t, s in zip(tab["t"], states)))
        return {"samples": len(states)}
    lx, qb = _pair(args.meas, "meas")
    state = solve(MeasuredState(lx, math.radians(qb)), opts)
    out.csv("fk.csv", STATE_COLUMNS, [_state_row(state)])
    return dict(zip(STATE_COLUMNS, _state_row(state)))


def cmd_calibrate(args, geom, out):
    lx, qb = _pair(args.meas, "meas")
    res = solve_calibration(geom, MeasuredState(lx, math.radians(qb)), args.c2)
    payload = {"l_LM_mm": res.l_LM, "iterations": res.iterations, "residual_mm": res.residual,
               "plausible": res.plausible, "warning": res.warning,
               "pose_deg": list(res.state.pose.degrees())}
    out.json("calibration.json", payload)
    return payload


def cmd_jacobian(args, geom, out):
    state = solve_ik(geom, FingerPose.from_degrees(*_pair(args.pose, "pose")), SolveOptions(check_bounds=False))
    jac = assemble_jacobian(geom, state)
    payload = {k: getattr(jac, k) for k in ("J_Om", "J_Op", "J_Rm", "J_Rp", "J_Cm", "J_Cp", "J_A")}
    payload["cond_Cp"] = jac.cond_Cp
    payload["j_active"] = jac.j_active
    payload["j_passive"] = jac.j_passive
    out.json("jacobian.json", payload)
    return {"J_A": jac.J_A.tolist(), "cond_Cp": jac.cond_Cp}


def cmd_grasp_report(args, geom, out):
    q1 = np.radians(np.arange(0.0, 80.0 + 1e-9, args.step))
    q2 = np.radians(np.arange(0.0, 90.0 + 1e-9, args.step))
    rep = grasp_stability_report(geom, q1, q2, F_A=args.force)
    out.csv("grasp.csv", ("q_o1_deg", "q_o2_deg", "tau_1", "tau_2", "ratio", "same_sign", "error"),
            ([r.q_o1_deg, r.q_o2_deg, r.tau_1, r.tau_2, r.ratio, r.same_sign, r.error] for r in rep.rows))
    summary = {"poses": len(rep.rows), "same_sign_fraction": rep.fraction_stable,
               "violations": len(rep.violations)}
    out.json("grasp.json", summary)
    return summary


def cmd_sensitivity(args, geom, out):
    rep = sensitivity_scan(geom, FingerPose.from_degrees(*_pair(args.pose, "pose")), args.perturbation)
    out.csv("sensitivity.csv", ("variable", "E1", "E2", "c_1_at_E1", "c_1_at_E2", "c_2_at_E1", "c_2_at_E2",
                                "SI_c1", "SI_c2", "SI_g"),
            ([e.variable, e.E1, e.E2, e.S1[0], e.S2[0], e.S1[1], e.S2[1], e.SI_c1, e.SI_c2, e.SI_g]
             for e in rep.entries))
    payload = {"SI_g": rep.as_dict(), "missing": rep.missing}
    out.json("sensitivity.json", payload)
    return payload


def cmd_optimize_links(args, geom, out):
    space = (SearchSpace.around(OPTIMUM[args.finger], args.half_width, args.step) if args.half_width is not None
             else SearchSpace.for_finger(args.finger, args.step))
    cons = ConstraintSpec(q_o1_deg=(0.0, 80.0, args.grid_step), q_o2_deg=(0.0, 90.0, args.grid_step))
    results = exhaustive_search(space, cons, base=geom, workers=args.workers, aggregate=args.aggregate)
    out.csv("optimize.csv", OPTIMIZED + ("feasible", "violation", "p"),
            (list(r.lengths) + [r.feasible, r.violation, r.p(args.aggregate)] for r in results))
    rates = screening_rates(results)
    best = results[0] if results and results[0].feasible else None
    optimum = tuple(float(v) for v in OPTIMUM[args.finger])
    listed = [r for r in results if r.lengths == optimum]
    payload = {"rates": rates, "best": list(best.lengths) if best else None,
               "best_p": best.p(args.aggregate) if best else None,
               "reference_optimum_feasible": bool(listed and listed[0].feasible) if listed else None}
    out.json("optimize.json", payload)
    return payload


def cmd_simulate(args, geom, out):
    gains = ControllerGains(K_P=args.kp, K_I=args.ki)
    common = dict(duration=args.duration, dt=args.dt, start=args.start, gains=gains, filter_on=not args.no_filter)
    if args.reference == "step":
        sc = Scenario(kind="step", amplitude=args.amplitude, **common)
    elif args.reference == "ramp":
        sc = Scenario(kind="ramp", rate=args.rate, ramp_end=args.ramp_end, **common)
    elif args.reference == "csv":
        if not args.input:
            raise ParseError("--reference csv needs --input with columns t,ref", row=0)
        tab = read_table(args.input, ("t", "ref"))
        sc = Scenario(kind="samples", times=tab["t"], values=tab["ref"], **common)
    else:
        if not args.input or not args.weights:
            raise ParseError("--reference emg needs --input (t,ch1..ch8) and --weights (8 rows)", row=0)
        t, ch = read_emg_csv(args.input)
        W = np.loadtxt(args.weights, delimiter=",", comments="#", ndmin=2)
        refs = emg_reference_pipeline(t, ch, W)
        col = ("index", "middle", "ring", "little").index(args.finger)
        sc = Scenario(kind="emg", times=t, values=refs[:, col], **common)
    ticks = simulate_position(sc)
    out.csv("simulate.csv", ("t", "ref", "meas", "e", "F_thr", "F_cont", "F_PWM", "limit", "pos"),
            ([k.t, k.ref, k.meas, k.e, k.F_thr, k.F_cont, k.F_PWM, k.limit, k.pos] for k in ticks[::args.decimate]))
    err = np.array([abs(k.ref - k.pos) for k in ticks])
    return {"samples": len(ticks), "max_abs_error_mm": float(err.max()), "final_error_mm": float(err[-1])}


def _path_states(geom, deg1, deg2):
    poses = [FingerPose.from_degrees(a, b) for a, b in zip(deg1, deg2)]
    states = solve_ik_path(geom, poses, SolveOptions(check_bounds=False))
    return states, np.array([s.vector(geom.l_LM) for s in states])


def cmd_render(args, geom, out):
    t, a, b, tab = _trajectory(args)
    states, Z = _path_states(geom, a, b)
    JA = reduced_jacobian_batch(geom, Z)
    target = RenderTarget(mode="joint", q_lim=tuple(math.radians(v) for v in _pair(args.q_lim, "q-lim")),
                          K_cont=_pair(args.k_cont, "k-cont"))
    session = RenderSession(target, method=args.method)
    q = np.radians(np.column_stack([a, b]))
    qdot = np.gradient(q, t, axis=0) if len(t) > 1 else np.zeros_like(q)
    user = np.column_stack([tab["tau_1"], tab["tau_2"]]) if "tau_1" in tab and "tau_2" in tab else None
    rows, active = [], 0
    for k in range(len(t)):
        cmd = session.tick((JA[k][:, 0], JA[k][:, 1]), q[k], None if user is None else user[k], qdot[k])
        qs = np.degrees(cmd.q_star) if cmd.q_star is not None else (math.nan, math.nan)
        ev = np.real(cmd.impedance.eigenvalues)
        rows.append([t[k], qs[0], qs[1], cmd.tau_star[0], cmd.tau_star[1], cmd.F_a, ev[0], ev[1],
                     cmd.impedance.passive])
        active += cmd.F_a != 0
    out.csv("render.csv", ("t", "q*_1_deg", "q*_2_deg", "tau*_1", "tau*_2", "F_a", "impedance_1", "impedance_2",
                           "passive"), rows)
    return {"samples": len(rows), "frames_with_force": int(active),
            "all_passive": bool(all(r[-1] for r in rows))}


def cmd_audit(args, geom, out):
    t, a, b, _ = _trajectory(args)
    _, Z = _path_states(geom, a, b)
    JA = reduced_jacobian_batch(geom, Z)
    Z_x = normalized_virtual_impedance([J[:, [0]] for J in JA])
    x = np.radians(np.column_stack([a, b]))
    methods = ("standard", "nullspace", "subspace")
    forces = {m: np.empty(len(t)) for m in methods}
    eig = {m: np.empty(len(t)) for m in methods}
    for k in range(len(t)):
        vm = VirtualMapping(JA[k], (0,), Z_q=np.eye(1), Z_x=Z_x)
        dx = -x[k]                      # proxy held at the open hand
        sn = standard_and_nullspace_force(vm, dx)
        forces["standard"][k] = sn["standard"][0]
        forces["nullspace"][k] = sn["nullspace"][0]
        forces["subspace"][k] = subspace_proxy(vm, dx)[1][0]
        for m in methods:
            eig[m][k] = float(np.max(np.real(displayed_impedance(m, vm).eigenvalues)))
    lx = Z[:, IDX["l_x"]]
    fd = {m: np.concatenate([[math.nan], finite_difference_impedance(forces[m], lx)]) for m in methods}
    cols = ["t", "l_x_mm"] + [f"F_{m}" for m in methods] + [f"eig_{m}" for m in methods] + [f"fd_{m}" for m in methods]
    out.csv("audit.csv", cols, ([t[k], lx[k]] + [forces[m][k] for m in methods] + [eig[m][k] for m in methods]
                                + [fd[m][k] for m in methods] for k in range(len(t))))
    summary = {}
    for m in methods:
        f = fd[m][np.isfinite(fd[m])]
        summary[m] = {"theoretical_passive_fraction": float(np.mean(eig[m] <= 1e-12)),
                      "measured_passive_fraction": float(np.mean(f <= 0)) if len(f) else None}
    out.json("audit.json", summary)
    return summary


def cmd_accept(args, geom, out):
    results = run_all(args.seed, report=lambda r: print(r.line(), file=sys.stderr, flush=True))
    payload = {"passed": all(r.passed for r in results), "criteria": [r.as_dict() for r in results]}
    out.json("accept.json", payload)
    return payload


COMMANDS = {
    "solve-ik": cmd_solve_ik, "solve-fk": cmd_solve_fk, "calibrate": cmd_calibrate, "jacobian": cmd_jacobian,
    "grasp-report": cmd_grasp_report, "sensitivity": cmd_sensitivity, "optimize-links": cmd_optimize_links,
    "simulate": cmd_simulate, "render": cmd_render, "audit": cmd_audit, "accept": cmd_accept,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", default="index", help="geometry file or preset name (index, middle, ring, little)")
    common.add_argument("--out", default=".", help="output directory")
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--workers", type=int, default=1)

    parser = argparse.ArgumentParser(prog="fingerexo", description="Finger exoskeleton linkage toolkit")
    parser.add_argument("--version", action="version", version=f"fingerexo {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("solve-ik", parents=[common], help="actuator stroke and joints for finger poses")
    p.add_argument("--pose", default="40,45", help="q_o1,q_o2 in degrees")
    p.add_argument("--input", help="CSV with t,q_o1_deg,q_o2_deg")
    p.add_argument("--no-bounds", action="store_true", help="do not reject poses outside the stroke/slider limits")

    p = sub.add_parser("solve-fk", parents=[common], help="finger pose from the two measurements")
    p.add_argument("--meas", default="20,240", help="l_x (mm),q_B (deg)")
    p.add_argument("--input", help="CSV with t,l_x_mm,q_B_deg")
    p.add_argument("--method", choices=("analytic", "numeric"), default="analytic")

    p = sub.add_parser("calibrate", parents=[common], help="estimate the proximal phalanx length")
    p.add_argument("--meas", required=True, help="l_x (mm),q_B (deg) with the middle slider at --c2")
    p.add_argument("--c2", type=float, default=40.0)

    p = sub.add_parser("jacobian", parents=[common], help="differential kinematics at one pose")
    p.add_argument("--pose", default="40,45")

    p = sub.add_parser("grasp-report", parents=[common], help="joint torques for a unit actuator force")
    p.add_argument("--step", type=float, default=1.0, help="grid step in degrees")
    p.add_argument("--force", type=float, default=1.0)

    p = sub.add_parser("sensitivity", parents=[common], help="one-at-a-time length sensitivity")
    p.add_argument("--pose", default="40,45")
    p.add_argument("--perturbation", type=float, default=0.1)

    p = sub.add_parser("optimize-links", parents=[common], help="exhaustive link-length search")
    p.add_argument("--finger", choices=tuple(OPTIMUM), default="index")
    p.add_argument("--step", type=float, default=1.0, help="length step in mm")
    p.add_argument("--half-width", type=float, help="search +-this many mm around the reference optimum")
    p.add_argument("--grid-step", type=float, default=1.0, help="joint grid step in degrees")
    p.add_argument("--aggregate", choices=("mean", "min"), default="mean")

    p = sub.add_parser("simulate", parents=[common], help="closed-loop actuator position control")
    p.add_argument("--reference", choices=("step", "ramp", "csv", "emg"), default="step")
    p.add_argument("--amplitude", type=float, default=25.0)
    p.add_argument("--rate", type=float, default=10.0)
    p.add_argument("--ramp-end", type=float, default=45.0)
    p.add_argument("--start", type=float, default=0.0)
    p.add_argument("--duration", type=float, default=5.0)
    p.add_argument("--dt", type=float, default=1e-3)
    p.add_argument("--kp", type=float, default=ControllerGains.K_P)
    p.add_argument("--ki", type=float, default=ControllerGains.K_I)
    p.add_argument("--no-filter", action="store_true", help="disable the temperature filter")
    p.add_argument("--input", help="reference CSV (t,ref) or EMG CSV (t,ch1..ch8)")
    p.add_argument("--weights", help="8 x n channel weight matrix (CSV)")
    p.add_argument("--finger", choices=("index", "middle", "ring", "little"), default="index")
    p.add_argument("--decimate", type=int, default=1, help="write every n-th tick")

    p = sub.add_parser("render", parents=[common], help="joint-limit rendering along a trajectory")
    p.add_argument("--method", choices=("proxy_torque", "proxy_pose"), default="proxy_torque")
    p.add_argument("--input", help="CSV with t,q_o1,q_o2 in degrees (optional tau_1,tau_2)")
    p.add_argument("--q-lim", default="30,30", help="joint limits in degrees")
    p.add_argument("--k-cont", default="100,100", help="contact stiffness per joint (N*mm/rad)")

    p = sub.add_parser("audit", parents=[common], help="compare standard, null-space and subspace rendering")
    p.add_argument("--input", help="CSV with t,q_o1,q_o2 in degrees")

    sub.add_parser("accept", parents=[common], help="run the acceptance suite")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.workers < 1:
            raise ParseError("--workers must be at least 1", row=0)
        geom = load_geometry(args.config)
        params = {k: v for k, v in vars(args).items() if k not in ("out",)}
        out = Output(args.out, args.seed, geom.digest(), params)
        result = COMMANDS[args.command](args, geom, out)
    except FingerExoError as exc:
        print(f"error={exc.code} {exc}", file=sys.stderr)
        return EXIT_CODES.get(exc.code, 1)
    print(json.dumps(result, indent=2, sort_keys=True, default=_json_default))
    if args.command == "accept" and not result["passed"]:
        return ACCEPT_FAILED
    return 0


if __name__ == "__main__":
    sys.exit(main())
