"""Scenario execution: solve, track joints, export, report.

`run_offline` solves one window covering the whole gait; `run_receding`
slides a fixed window forward at the replan stride, committing the leading
knots of each solution.  Both share the same tail: kinematic tracking,
trajectory export, and a report whose constraint margins come from
re-reading the written file, not from solver internals, so the report
cannot claim anything the exported trajectory does not show.
"""

from __future__ import annotations

import dataclasses
import json
import os
import time

import numpy as np

from .export import (compute_margins, export_plan, manipulability_minima,
                     read_export, sample_times, total_com_path)
from .gait import plan_feet
from .kinematics import KinematicModel
from .scenario import MODE_LOCOMOTION, MODE_PAYLOAD, Scenario
from .splines import ComSpline, PiecewiseHermite, PwlProfile
from .sqp import solve, warm_start_shift
from .srbd import ComState, N_ARMS, N_FEET
from .transcription import TrajectoryPlan, build_nlp, extract_plan
from .wbc import ik_track

REPORT_VERSION = 1


class PipelineError(RuntimeError):
    """Scenario execution could not produce a usable result."""


def _skew(v):
    return np.array([[0.0, -v[2], v[1]],
                     [v[2], 0.0, -v[0]],
                     [-v[1], v[0], 0.0]])


def static_guess(problem) -> np.ndarray:
    """Static-equilibrium variable vector for a planning problem.

    CoM rides the reference targets, arms sit at their nominal offsets
    carrying exactly the payload weight, and feet forces solve the
    force/moment balance at each knot (minimum-norm, so symmetric stances
    get the expected front/hind split).
    """
    lay = problem.layout
    x = np.zeros(lay.n)
    g = problem.consts.gravity
    for k in range(lay.n_knots):
        r = problem.com_targets[k]
        x[lay.com_pos(k)] = r
        rhs = np.concatenate([-problem.effective_mass * g, np.zeros(3)])
        for a in range(lay.n_arms):
            m_arm = sum(p.mass for p in problem.payloads if p.arm == a)
            p_arm = r + problem.arm_nominal[a]
            f_arm = m_arm * g
            x[lay.arm_pos(a, k)] = p_arm
            x[lay.arm_force(a, k)] = f_arm
            rhs[:3] -= f_arm
            rhs[3:] -= np.cross(p_arm - r, f_arm)
        feet = [i for i in range(N_FEET) if lay.foot_force(i, k) is not None]
        A = np.zeros((6, 3 * len(feet)))
        for j, i in enumerate(feet):
            A[:3, 3 * j:3 * j + 3] = np.eye(3)
            A[3:, 3 * j:3 * j + 3] = _skew(problem.feet_positions[k, i] - r)
        F = np.linalg.lstsq(A, rhs, rcond=None)[0]
        for j, i in enumerate(feet):
            x[lay.foot_force(i, k)] = F[3 * j:3 * j + 3]
    return x


def _balance_feet(x, problem, k, r, acc):
    """Write min-norm feet forces at knot k balancing the com state."""
    lay = problem.layout
    g = problem.consts.gravity
    rhs = np.concatenate([problem.effective_mass * (acc - g), np.zeros(3)])
    for a in range(lay.n_arms):
        f_arm = x[lay.arm_force(a, k)]
        rhs[:3] -= f_arm
        rhs[3:] -= np.cross(x[lay.arm_pos(a, k)] - r, f_arm)
    feet = [i for i in range(N_FEET) if lay.foot_force(i, k) is not None]
    A = np.zeros((6, 3 * len(feet)))
    for j, i in enumerate(feet):
        A[:3, 3 * j:3 * j + 3] = np.eye(3)
        A[3:, 3 * j:3 * j + 3] = _skew(problem.feet_positions[k, i] - r)
    F = np.linalg.lstsq(A, rhs, rcond=None)[0]
    for j, i in enumerate(feet):
        x[lay.foot_force(i, k)] = F[3 * j:3 * j + 3]


def _braked_tail(x0, problem, n_tail):
    """Rebuild the trailing knots of a shifted warm start in place.

    The index shift repeats the final source knot, which breaks the com
    chain rows of the tail whenever that knot still carries velocity.
    Integrate a jerk profile steering toward rest at the new terminal
    target instead (exact chain consistency by construction) and
    rebalance the feet forces about the rolled com positions.
    """
    lay = problem.layout
    if n_tail <= 0 or n_tail >= lay.n_knots - 1:
        return x0
    dt = lay.dt
    k0 = lay.n_knots - 1 - n_tail
    p = x0[lay.com_pos(k0)].copy()
    v = x0[lay.com_vel(k0)].copy()
    a = x0[lay.com_acc(k0)].copy()

    # end-state sensitivity to each segment jerk (same for every axis)
    M = np.zeros((3, n_tail))
    for s in range(n_tail):
        dp = dv = da = 0.0
        for t in range(s, n_tail):
            j = 1.0 if t == s else 0.0
            dp += dt * dv + 0.5 * dt**2 * da + dt**3 / 6.0 * j
            dv += dt * da + 0.5 * dt**2 * j
            da += dt * j
        M[:, s] = (dp, dv, da)
    horizon = n_tail * dt
    free = np.stack([p + horizon * v + 0.5 * horizon**2 * a,
                     v + horizon * a, a])
    goal = np.stack([problem.com_targets[-1], np.zeros(3), np.zeros(3)])
    # comparable row magnitudes: velocity and acceleration in length units
    w = np.array([1.0, dt, dt**2])
    jerks = np.linalg.lstsq(M * w[:, None], (goal - free) * w[:, None],
                            rcond=None)[0]

    for s in range(n_tail):
        j = jerks[s]
        x0[lay.jerk(k0 + s)] = j
        p = p + dt * v + 0.5 * dt**2 * a + dt**3 / 6.0 * j
        v = v + dt * a + 0.5 * dt**2 * j
        a = a + dt * j
        k = k0 + 1 + s
        x0[lay.com_pos(k)] = p
        x0[lay.com_vel(k)] = v
        x0[lay.com_acc(k)] = a
        _balance_feet(x0, problem, k, p, a)
    return x0


@dataclasses.dataclass
class RunReport:
    """Everything a run produced, mirrored verbatim into the report file."""

    kind: str  # "offline" | "receding"
    scenario: dict
    mode: str
    status: str
    windows: list
    dimensions: dict
    margins: dict | None
    manipulability: dict | None
    tracking: dict | None
    stitch: dict | None
    files: dict
    iterations_total: int
    wall_time_total: float
    report_version: int = REPORT_VERSION

    @property
    def ok(self) -> bool:
        return self.status == "optimal"

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def save_report(report: RunReport, path: str) -> str:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(report.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path


def load_report(path: str) -> dict:
    with open(path, "r", encoding="utf-8") as fh:
        return json.load(fh)


def scrub_wall_time(obj):
    """Copy of a report structure with wall-clock fields removed.

    Reports are deterministic except for timing; comparisons between runs
    must go through this.
    """
    if isinstance(obj, dict):
        return {k: scrub_wall_time(v) for k, v in obj.items()
                if "wall_time" not in k}
    if isinstance(obj, list):
        return [scrub_wall_time(v) for v in obj]
    return obj


def _window_dict(stats, window_start: float, n_variables: int) -> dict:
    d = dataclasses.asdict(stats)
    d["window_start"] = float(window_start)
    d["n_variables"] = int(n_variables)
    return d


def _dimensions(problem) -> dict:
    lay = problem.layout
    return {
        "n_variables": int(lay.n),
        "n_knots": int(lay.n_knots),
        "n_arms": int(lay.n_arms),
        "n_equalities": int(problem.A_eq.shape[0] + 3 * lay.n_knots),
        "n_inequalities": int(problem.A_in.shape[0]),
    }


def _track_and_export(scenario: Scenario, plan: TrajectoryPlan, out_dir: str,
                      fmt: str, track: bool):
    os.makedirs(out_dir, exist_ok=True)
    base = f"{scenario.name}_{scenario.mode}"
    traj_path = os.path.join(out_dir, f"{base}_trajectory.{fmt}")
    ik = None
    tracking = None
    joint_names = None
    if track:
        times, _ = sample_times(plan.times, scenario.export_rate)
        model = KinematicModel.default()
        joint_names = model.joint_names()
        ik = ik_track(model, plan, dt=1.0 / scenario.export_rate, times=times)
        tracking = {
            "feet_err_max": float(ik.feet_err.max()),
            "com_err_max": float(ik.com_err.max()),
            "arm_err_max": (float(ik.arm_err.max())
                            if ik.arm_err.size else None),
            "diverged": bool(ik.diverged),
            "divergence_time": ik.divergence_time,
            "n_samples": int(ik.n_samples),
        }
    export_plan(plan, ik, path=traj_path, fmt=fmt,
                rate=scenario.export_rate, joint_names=joint_names)
    data = read_export(traj_path)
    margins = compute_margins(data, scenario.to_dict())
    manip = manipulability_minima(data)
    return traj_path, margins, manip, tracking


def _emit(report: RunReport, out_dir: str) -> RunReport:
    os.makedirs(out_dir, exist_ok=True)
    base = f"{report.scenario['name']}_{report.mode}"
    report_path = os.path.join(out_dir, f"{base}_report.json")
    report.files["report"] = report_path
    save_report(report, report_path)
    return report


def run_offline(scenario: Scenario, out_dir: str = ".", fmt: str = "csv",
                track: bool = True) -> RunReport:
    """Solve the whole horizon as one window and export the result."""
    t_begin = time.perf_counter()
    feet_plan = plan_feet(scenario.gait, scenario.initial_stance,
                          scenario.terrain)
    problem = build_nlp(scenario, feet_plan)
    x, _, stats = solve(problem, static_guess(problem), scenario.solver)
    dims = _dimensions(problem)
    windows = [_window_dict(stats, 0.0, dims["n_variables"])]
    report = RunReport(
        kind="offline", scenario=scenario.to_dict(), mode=scenario.mode,
        status=stats.status, windows=windows, dimensions=dims,
        margins=None, manipulability=None, tracking=None, stitch=None,
        files={}, iterations_total=int(stats.iterations),
        wall_time_total=0.0)
    if stats.status == "optimal":
        plan = extract_plan(problem, x)
        traj_path, margins, manip, tracking = _track_and_export(
            scenario, plan, out_dir, fmt, track)
        report.files["trajectory"] = traj_path
        report.margins = margins
        report.manipulability = manip
        report.tracking = tracking
    report.wall_time_total = time.perf_counter() - t_begin
    return _emit(report, out_dir)


def _arm_edge_accel(pos, vel, j0, j1, dt, edge):
    """Hermite segment-edge acceleration from knot arrays (j0 -> j1)."""
    p0, v0, p1, v1 = pos[j0], vel[j0], pos[j1], vel[j1]
    if edge == 0:
        return (-6.0 * p0 - 4.0 * dt * v0 + 6.0 * p1 - 2.0 * dt * v1) / dt**2
    return (6.0 * p0 + 2.0 * dt * v0 - 6.0 * p1 + 4.0 * dt * v1) / dt**2


def run_receding(scenario: Scenario, out_dir: str = ".", fmt: str = "csv",
                 track: bool = True) -> RunReport:
    """Slide a fixed window at the replan stride and stitch the commits.

    Window k starts at k * replan_stride and commits its leading
    stride-worth of knots (the final window commits everything).  Each
    window is pinned to the previous solution's state at the commit
    boundary, so stitched position/velocity jumps stay at the solver's
    feasibility tolerance.  A failed window halts the loop; the report
    then carries the windows solved so far and no trajectory.
    """
    if not scenario.receding:
        raise PipelineError("scenario has no receding horizon configured")
    t_begin = time.perf_counter()
    dt = scenario.dt
    S = int(round(scenario.replan_stride / dt))
    W = int(round(scenario.window / dt))
    n_win = int(round((scenario.total_time - scenario.window)
                      / scenario.replan_stride)) + 1
    n_total = int(round(scenario.total_time / dt)) + 1
    with_arms = scenario.mode == MODE_PAYLOAD
    n_arms = N_ARMS if with_arms else 0

    feet_plan = plan_feet(scenario.gait, scenario.initial_stance,
                          scenario.terrain)
    schedule = feet_plan.schedule

    com_pos = np.zeros((n_total, 3))
    com_vel = np.zeros((n_total, 3))
    com_acc = np.zeros((n_total, 3))
    jerks = np.zeros((n_total - 1, 3))
    foot_knots = np.zeros((N_FEET, n_total, 3))
    arm_pos = np.zeros((n_arms, n_total, 3))
    arm_vel = np.zeros((n_arms, n_total, 3))
    arm_force = np.zeros((n_arms, n_total, 3))

    windows: list[dict] = []
    jumps = {"pos": [], "vel": [], "acc": [], "arm_pos": [], "arm_vel": []}
    initial_com = None
    initial_arms = None
    boundary = None  # previous window's state at its commit knot
    prev_x = None
    prev_layout = None
    dims = None
    status = "optimal"

    for k in range(n_win):
        start = k * scenario.replan_stride
        problem = build_nlp(scenario, feet_plan, schedule,
                            window_start=start,
                            window_duration=scenario.window,
                            initial_com=initial_com,
                            initial_arms=initial_arms)
        if dims is None:
            dims = _dimensions(problem)
        if prev_x is not None and scenario.mpc_warm_start:
            x0 = warm_start_shift(prev_x, prev_layout, problem.layout, S)
            x0 = _braked_tail(x0, problem, S)
        else:
            x0 = static_guess(problem)
        x, _, stats = solve(problem, x0, scenario.solver)
        windows.append(_window_dict(stats, start,
                                    _dimensions(problem)["n_variables"]))
        if stats.status != "optimal":
            status = "failed"
            break
        plan_k = extract_plan(problem, x)

        if boundary is not None:
            b_pos, b_vel, b_acc, b_arm_p, b_arm_v = boundary
            jumps["pos"].append(np.abs(plan_k.com_pos[0] - b_pos).max())
            jumps["vel"].append(np.abs(plan_k.com_vel[0] - b_vel).max())
            jumps["acc"].append(np.abs(plan_k.com_acc[0] - b_acc).max())
            if n_arms:
                jumps["arm_pos"].append(
                    np.abs(plan_k.arm_pos_knots[:, 0] - b_arm_p).max())
                jumps["arm_vel"].append(
                    np.abs(plan_k.arm_vel_knots[:, 0] - b_arm_v).max())

        commit = range(S) if k < n_win - 1 else range(W + 1)
        for j in commit:
            gk = k * S + j
            com_pos[gk] = plan_k.com_pos[j]
            com_vel[gk] = plan_k.com_vel[j]
            com_acc[gk] = plan_k.com_acc[j]
            foot_knots[:, gk] = plan_k.foot_force_knots[:, j]
            if j < W:
                jerks[gk] = plan_k.jerks[j]
            for a in range(n_arms):
                arm_pos[a, gk] = plan_k.arm_pos_knots[a, j]
                arm_vel[a, gk] = plan_k.arm_vel_knots[a, j]
                arm_force[a, gk] = plan_k.arm_force_knots[a, j]

        if k < n_win - 1:
            initial_com = ComState(plan_k.com_pos[S].copy(),
                                   plan_k.com_vel[S].copy(),
                                   plan_k.com_acc[S].copy())
            initial_arms = []
            for a in range(n_arms):
                if S < W:
                    acc = _arm_edge_accel(plan_k.arm_pos_knots[a],
                                          plan_k.arm_vel_knots[a],
                                          S, S + 1, dt, edge=0)
                else:
                    acc = _arm_edge_accel(plan_k.arm_pos_knots[a],
                                          plan_k.arm_vel_knots[a],
                                          S - 1, S, dt, edge=1)
                initial_arms.append((plan_k.arm_pos_knots[a, S].copy(),
                                     plan_k.arm_vel_knots[a, S].copy(), acc))
            if not n_arms:
                initial_arms = None
            boundary = (plan_k.com_pos[S].copy(), plan_k.com_vel[S].copy(),
                        plan_k.com_acc[S].copy(),
                        plan_k.arm_pos_knots[:, S].copy(),
                        plan_k.arm_vel_knots[:, S].copy())
            prev_x, prev_layout = x, problem.layout

    stitch = None
    if len(jumps["pos"]) > 0:
        stitch = {
            "n_boundaries": len(jumps["pos"]),
            "max_pos_jump": float(max(jumps["pos"])),
            "max_vel_jump": float(max(jumps["vel"])),
            "max_acc_jump": float(max(jumps["acc"])),
            "max_arm_pos_jump": (float(max(jumps["arm_pos"]))
                                 if jumps["arm_pos"] else None),
            "max_arm_vel_jump": (float(max(jumps["arm_vel"]))
                                 if jumps["arm_vel"] else None),
        }

    report = RunReport(
        kind="receding", scenario=scenario.to_dict(), mode=scenario.mode,
        status=status, windows=windows, dimensions=dims,
        margins=None, manipulability=None, tracking=None, stitch=stitch,
        files={}, iterations_total=sum(w["iterations"] for w in windows),
        wall_time_total=0.0)
    if status == "optimal":
        times_g = dt * np.arange(n_total)
        com = ComSpline(com_pos, com_vel, com_acc, jerks, dt, start_time=0.0)
        stance = np.array(
            [[schedule.in_stance(i, float(t)) for t in times_g]
             for i in range(N_FEET)])
        plan = TrajectoryPlan(
            dt=dt, times=times_g, mode=scenario.mode, com=com,
            feet_plan=feet_plan, schedule=schedule, stance=stance,
            feet_forces=tuple(PwlProfile(foot_knots[i], dt, start_time=0.0)
                              for i in range(N_FEET)),
            arm_paths=tuple(PiecewiseHermite(times_g, arm_pos[a], arm_vel[a])
                            for a in range(n_arms)),
            arm_forces=tuple(PwlProfile(arm_force[a], dt, start_time=0.0)
                             for a in range(n_arms)),
            payloads=scenario.payloads, consts=scenario.constants,
            com_pos=com_pos, com_vel=com_vel, com_acc=com_acc, jerks=jerks,
            foot_force_knots=foot_knots, arm_pos_knots=arm_pos,
            arm_vel_knots=arm_vel, arm_force_knots=arm_force)
        traj_path, margins, manip, tracking = _track_and_export(
            scenario, plan, out_dir, fmt, track)
        report.files["trajectory"] = traj_path
        report.margins = margins
        report.manipulability = manip
        report.tracking = tracking
    report.wall_time_total = time.perf_counter() - t_begin
    return _emit(report, out_dir)


def run(scenario: Scenario, out_dir: str = ".", fmt: str = "csv",
        track: bool = True, offline: bool = False) -> RunReport:
    """Dispatch to receding-horizon or offline execution.

    `offline=True` forces a single whole-horizon solve even when the
    scenario configures a window.
    """
    if scenario.receding and not offline:
        return run_receding(scenario, out_dir, fmt, track)
    return run_offline(scenario, out_dir, fmt, track)


def compare_modes(scenario: Scenario, out_dir: str = ".", fmt: str = "csv",
                  track: bool = True, offline: bool = False) -> dict:
    """Run both planning modes and summarize them from the exports alone.

    The summary never touches solver internals: manipulability minima and
    the combined robot+payload CoM paths are recomputed from the two
    trajectory files, so the comparison holds for anyone re-reading them.
    """
    out = {"report_version": REPORT_VERSION, "kind": "compare",
           "name": scenario.name, "modes": {}}
    for mode in (MODE_PAYLOAD, MODE_LOCOMOTION):
        rep = run(scenario.with_mode(mode), out_dir, fmt, track, offline)
        entry = {
            "status": rep.status,
            "files": dict(rep.files),
            "n_variables": rep.dimensions["n_variables"],
            "n_arms": rep.dimensions["n_arms"],
            "iterations_total": rep.iterations_total,
            "wall_time_total": rep.wall_time_total,
        }
        if rep.ok:
            data = read_export(rep.files["trajectory"])
            entry["manipulability"] = manipulability_minima(data)
            entry["total_com"] = total_com_path(data, rep.scenario).tolist()
            entry["times"] = data.times.tolist()
        out["modes"][mode] = entry
    path = os.path.join(out_dir, f"{scenario.name}_compare.json")
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(out, fh, indent=2, sort_keys=True)
        fh.write("\n")
    out["file"] = path
    return out


def check_report(report_path: str) -> dict:
    """Re-read a run's trajectory export and recompute what it claims.

    Margins and manipulability minima in the report must match a fresh
    recomputation from the trajectory file exactly; any discrepancy means
    the files were edited or produced by different code.
    """
    rep = load_report(report_path)
    if rep.get("kind") == "compare":
        raise PipelineError(
            "check runs on plan/mpc reports; compare files reference "
            "per-mode reports, check those instead")
    result = {"report": report_path, "status": rep.get("status"),
              "ok": True, "checks": {}}

    def record(name, ok, detail):
        result["checks"][name] = {"ok": bool(ok), "detail": detail}
        if not ok:
            result["ok"] = False

    traj = rep.get("files", {}).get("trajectory")
    if rep.get("status") != "optimal":
        record("status", False, "run did not finish optimally")
        return result
    if not traj or not os.path.exists(traj):
        record("trajectory_file", False, f"missing trajectory file {traj!r}")
        return result
    data = read_export(traj)
    echo = rep["scenario"]

    expected_knots = int(round(echo["gait"]["total_time"] / echo["dt"])) + 1
    record("knot_count", data.n_knots == expected_knots,
           f"{data.n_knots} knots, expected {expected_knots}")

    margins = compute_margins(data, echo)
    stored = rep.get("margins") or {}
    worst = 0.0
    mismatched = []
    for key in sorted(set(margins) | set(stored)):
        a, b = margins.get(key), stored.get(key)
        if a is None and b is None:
            continue
        if a is None or b is None:
            mismatched.append(key)
            continue
        diff = abs(a - b)
        worst = max(worst, diff)
        if diff != 0.0:
            mismatched.append(key)
    record("margins", not mismatched,
           "recomputed margins match the report" if not mismatched else
           f"mismatch in {mismatched} (max |diff| {worst:.3e})")

    manip = manipulability_minima(data)
    record("manipulability", manip == rep.get("manipulability"),
           "per-leg minima match" if manip == rep.get("manipulability")
           else "per-leg minima differ from the report")

    result["margins"] = margins
    return result
