"""Trajectory export files and post-hoc constraint checking.

Schema (version 1).  One row per sample time; rows at knot times carry the
solver's knot variables verbatim (`knot` holds the knot index, -1 between
knots).  Sample times are knot-anchored: every knot time appears exactly,
with a uniform grid at the export rate filling each segment, so downstream
checks never interpolate to reach a knot.

Columns, in order:

    t, knot
    com_px/py/pz, com_vx/vy/vz, com_ax/ay/az
    jerk_x/y/z            right-continuous segment jerk; the final knot row
                          repeats the last segment
    per foot F in LF, RF, LH, RH:
        F_px/py/pz, F_fx/fy/fz, F_stance
    per arm A in LA, RA (empty cells when the plan has no arm variables):
        A_px/py/pz, A_vx/vy/vz, A_ax/ay/az, A_fx/fy/fz
    base_px/py/pz, base_qw/qx/qy/qz, q_<joint> x 24, w_LF/RF/LH/RH
                          joint-space tracking; empty cells when exported
                          without a tracked trajectory

Arm acceleration columns hold the cubic-segment acceleration at the sample
time (right edge value at interior knots); the payload dynamics tie it to
the arm force at knot rows.  CSV cells are `repr` of the float, so parsing
returns bit-identical values; JSON mirrors the same table as
{"schema_version", "columns", "rows"} with null for empty cells.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass

import numpy as np
from scipy.spatial.transform import Rotation

from .srbd import FOOT_NAMES, GRAVITY, N_ARMS, N_FEET
from .terrain import Terrain

SCHEMA_VERSION = 1
ARM_LABELS = ("LA", "RA")
_KNOT_TOL = 1e-9


class ExportError(ValueError):
    """Malformed export request or file."""


def default_joint_names() -> list[str]:
    from .kinematics import KinematicModel
    return KinematicModel.default().joint_names()


def column_names(joint_names) -> list[str]:
    cols = ["t", "knot"]
    cols += [f"com_{c}" for c in ("px", "py", "pz", "vx", "vy", "vz",
                                  "ax", "ay", "az")]
    cols += ["jerk_x", "jerk_y", "jerk_z"]
    for f in FOOT_NAMES:
        cols += [f"{f}_{c}" for c in ("px", "py", "pz", "fx", "fy", "fz")]
        cols.append(f"{f}_stance")
    for a in ARM_LABELS:
        cols += [f"{a}_{c}" for c in ("px", "py", "pz", "vx", "vy", "vz",
                                      "ax", "ay", "az", "fx", "fy", "fz")]
    cols += ["base_px", "base_py", "base_pz",
             "base_qw", "base_qx", "base_qy", "base_qz"]
    cols += [f"q_{name}" for name in joint_names]
    cols += [f"w_{f}" for f in FOOT_NAMES]
    return cols


def sample_times(knot_times, rate: float) -> tuple[np.ndarray, np.ndarray]:
    """Sample times and knot indices (-1 between knots) for an export.

    Knot times appear verbatim; a uniform grid at plan-independent spacing
    would drift off the knots in floating point, so the grid is rebuilt
    inside each segment instead.
    """
    if not rate > 0.0:
        raise ExportError("export rate must be positive")
    step = 1.0 / rate
    times: list[float] = []
    knots: list[int] = []
    for k in range(len(knot_times) - 1):
        t0, t1 = float(knot_times[k]), float(knot_times[k + 1])
        times.append(t0)
        knots.append(k)
        j = 1
        while t0 + j * step < t1 - _KNOT_TOL:
            times.append(t0 + j * step)
            knots.append(-1)
            j += 1
    times.append(float(knot_times[-1]))
    knots.append(len(knot_times) - 1)
    return np.asarray(times), np.asarray(knots, dtype=int)


def _fmt(v) -> str:
    return repr(float(v))


def _quat_wxyz(R: np.ndarray) -> np.ndarray:
    x, y, z, w = Rotation.from_matrix(R).as_quat()
    return np.array([w, x, y, z])


def export_plan(plan, ik=None, *, path: str, fmt: str = "csv",
                rate: float | None = None, joint_names=None) -> str:
    """Write the sampled trajectory table for `plan` (+ tracked joints).

    `ik`, when given, must be sampled on exactly the times this export
    uses (build them with `sample_times(plan.times, rate)` and pass them to
    `ik_track`).  Returns the written path.
    """
    if fmt not in ("csv", "json"):
        raise ExportError(f"format must be csv or json, got {fmt!r}")
    rate = 100.0 if rate is None else float(rate)
    times, knot_idx = sample_times(plan.times, rate)
    n = len(times)
    if ik is not None:
        if len(ik.times) != n or np.max(np.abs(ik.times - times)) > 1e-9:
            raise ExportError(
                "tracked trajectory is not sampled on the export times; "
                "pass sample_times(...) to ik_track")
    if joint_names is None:
        joint_names = default_joint_names()
    cols = column_names(joint_names)
    with_arms = len(plan.arm_paths) > 0
    n_seg = plan.n_knots - 1

    rows: list[list] = []
    for i, t in enumerate(times):
        t = float(t)
        k = int(knot_idx[i])
        row: list = [t, k]
        if k >= 0:
            com_p, com_v, com_a = (plan.com_pos[k], plan.com_vel[k],
                                   plan.com_acc[k])
            jerk = plan.jerks[min(k, n_seg - 1)]
        else:
            com_p, com_v, com_a = plan.com.eval(t)
            seg = min(int((t - plan.start_time) / plan.dt), n_seg - 1)
            jerk = plan.jerks[seg]
        row += [float(v) for v in (*com_p, *com_v, *com_a, *jerk)]
        for f in range(N_FEET):
            p = plan.feet_plan.position(f, t)
            force = (plan.foot_force_knots[f, k] if k >= 0
                     else plan.feet_forces[f].eval(t))
            stance = plan.schedule.in_stance(f, t)
            row += [float(v) for v in (*p, *force)]
            row.append(1 if stance else 0)
        for a in range(N_ARMS):
            if not with_arms:
                row += [None] * 12
                continue
            if k >= 0:
                p, v = plan.arm_pos_knots[a, k], plan.arm_vel_knots[a, k]
                acc = plan.arm_paths[a].eval(t)[2]
                force = plan.arm_force_knots[a, k]
            else:
                p, v, acc = plan.arm_paths[a].eval(t)
                force = plan.arm_forces[a].eval(t)
            row += [float(x) for x in (*p, *v, *acc, *force)]
        if ik is None:
            row += [None] * (7 + len(joint_names) + N_FEET)
        else:
            row += [float(v) for v in ik.base_pos[i]]
            row += [float(v) for v in _quat_wxyz(ik.base_rot[i])]
            row += [float(v) for v in ik.q[i]]
            row += [float(ik.manipulability[f, i]) for f in range(N_FEET)]
        if len(row) != len(cols):
            raise ExportError("internal: row width disagrees with schema")
        rows.append(row)

    if fmt == "csv":
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["schema_version", str(SCHEMA_VERSION)])
            writer.writerow(cols)
            for row in rows:
                writer.writerow(["" if v is None
                                 else (str(v) if isinstance(v, int)
                                       else _fmt(v)) for v in row])
    else:
        table = {"schema_version": SCHEMA_VERSION, "columns": cols,
                 "rows": rows}
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(table, fh, separators=(",", ":"))
            fh.write("\n")
    return path


@dataclass
class ExportData:
    """Parsed trajectory table with typed views (NaN for empty cells)."""

    schema_version: int
    columns: list
    raw: np.ndarray  # (n, n_cols) float, NaN where the cell was empty
    times: np.ndarray
    knot_index: np.ndarray
    com_pos: np.ndarray
    com_vel: np.ndarray
    com_acc: np.ndarray
    jerk: np.ndarray
    feet_pos: np.ndarray  # (n, 4, 3)
    feet_force: np.ndarray
    stance: np.ndarray  # (n, 4) bool
    arm_pos: np.ndarray | None  # (n, 2, 3)
    arm_vel: np.ndarray | None
    arm_acc: np.ndarray | None
    arm_force: np.ndarray | None
    base_pos: np.ndarray | None
    base_quat: np.ndarray | None
    q: np.ndarray | None
    manip: np.ndarray | None  # (n, 4)

    @property
    def knot_rows(self) -> np.ndarray:
        return np.flatnonzero(self.knot_index >= 0)

    @property
    def n_knots(self) -> int:
        return int(self.knot_index.max()) + 1


def read_export(path: str) -> ExportData:
    """Parse a trajectory export (csv or json, by content)."""
    with open(path, "r", encoding="utf-8") as fh:
        head = fh.read(1)
        fh.seek(0)
        if head == "{":
            table = json.load(fh)
            version = table.get("schema_version")
            cols = table.get("columns")
            raw_rows = [[("" if c is None else c) for c in row]
                        for row in table.get("rows", [])]
        else:
            reader = csv.reader(fh)
            first = next(reader, None)
            if not first or first[0] != "schema_version":
                raise ExportError(f"{path}: missing schema_version header")
            version = int(first[1])
            cols = next(reader, None)
            raw_rows = list(reader)
    if version != SCHEMA_VERSION:
        raise ExportError(f"{path}: unsupported schema_version {version}")
    if not cols or not raw_rows:
        raise ExportError(f"{path}: empty trajectory table")
    n_cols = len(cols)
    data = np.full((len(raw_rows), n_cols), np.nan)
    for i, row in enumerate(raw_rows):
        if len(row) != n_cols:
            raise ExportError(f"{path}: row {i} has {len(row)} cells, "
                              f"expected {n_cols}")
        for j, cell in enumerate(row):
            if cell != "":
                data[i, j] = float(cell)

    idx = {name: j for j, name in enumerate(cols)}

    def block(names) -> np.ndarray:
        return data[:, [idx[n] for n in names]]

    def vec3(prefix, comps=("x", "y", "z")) -> np.ndarray:
        return block([f"{prefix}{c}" for c in comps])

    def optional(arr: np.ndarray):
        return None if np.isnan(arr).all() else arr

    feet_pos = np.stack([vec3(f"{f}_p") for f in FOOT_NAMES], axis=1)
    feet_force = np.stack([vec3(f"{f}_f") for f in FOOT_NAMES], axis=1)
    stance = block([f"{f}_stance" for f in FOOT_NAMES]) > 0.5
    arm_pos = optional(np.stack([vec3(f"{a}_p") for a in ARM_LABELS], axis=1))
    arm_vel = optional(np.stack([vec3(f"{a}_v") for a in ARM_LABELS], axis=1))
    arm_acc = optional(np.stack([vec3(f"{a}_a") for a in ARM_LABELS], axis=1))
    arm_force = optional(np.stack([vec3(f"{a}_f") for a in ARM_LABELS],
                                  axis=1))
    q_cols = [name for name in cols if name.startswith("q_")]
    return ExportData(
        schema_version=version, columns=list(cols), raw=data,
        times=data[:, idx["t"]],
        knot_index=data[:, idx["knot"]].astype(int),
        com_pos=vec3("com_p"), com_vel=vec3("com_v"), com_acc=vec3("com_a"),
        jerk=vec3("jerk_"),
        feet_pos=feet_pos, feet_force=feet_force, stance=stance,
        arm_pos=arm_pos, arm_vel=arm_vel, arm_acc=arm_acc,
        arm_force=arm_force,
        base_pos=optional(vec3("base_p")),
        base_quat=optional(block(["base_qw", "base_qx", "base_qy",
                                  "base_qz"])),
        q=optional(block(q_cols)),
        manip=optional(block([f"w_{f}" for f in FOOT_NAMES])))


# --- post-hoc constraint margins --------------------------------------------

def _arm_index(arm) -> int:
    if isinstance(arm, str):
        return ("left", "right").index(arm)
    return int(arm)


def _payload_masses(scenario: dict) -> np.ndarray:
    masses = np.zeros(N_ARMS)
    for p in scenario["payloads"]:
        masses[_arm_index(p["arm"])] += p["mass"]
    return masses


def _edge_accels(p0, v0, p1, v1, dt):
    """Cubic-segment endpoint accelerations from its Hermite knots."""
    a0 = (-6.0 * p0 - 4.0 * dt * v0 + 6.0 * p1 - 2.0 * dt * v1) / dt**2
    a1 = (6.0 * p0 + 2.0 * dt * v0 - 6.0 * p1 + 4.0 * dt * v1) / dt**2
    return a0, a1


def compute_margins(data: ExportData, scenario: dict) -> dict:
    """Constraint residuals/margins recomputed from an exported table.

    `scenario` is the resolved configuration echo stored in the report.
    Residual entries (`*_max`) must vanish; margin entries (`*_min`) must
    be nonnegative for a feasible plan.  Entries are None where the
    scenario has no such constraint (e.g. arm families in locomotion-only
    exports).
    """
    with_arms = data.arm_pos is not None
    robot = scenario["robot"]
    weights = scenario["weights"]
    terrain = Terrain(kind=scenario["terrain"]["kind"],
                      slope_deg=scenario["terrain"]["slope_deg"])
    arm_mass = _payload_masses(scenario)
    eff_mass = robot["mass"] + (0.0 if with_arms else float(arm_mass.sum()))
    g = GRAVITY
    rows = data.knot_rows
    n_knots = data.n_knots
    times = data.times[rows]
    dts = np.diff(times)

    r = data.com_pos[rows]
    v = data.com_vel[rows]
    acc = data.com_acc[rows]
    jerk = data.jerk[rows]
    feet_p = data.feet_pos[rows]
    feet_f = data.feet_force[rows]
    stance = data.stance[rows]

    # Newton rows and angular momentum rate at every knot.
    force_sum = feet_f.sum(axis=1)
    moment = -np.cross(feet_p - r[:, None, :], feet_f).sum(axis=1)
    if with_arms:
        arm_p = data.arm_pos[rows]
        arm_f = data.arm_force[rows]
        force_sum += arm_f.sum(axis=1)
        moment -= np.cross(arm_p - r[:, None, :], arm_f).sum(axis=1)
    lin = eff_mass * acc - eff_mass * g - force_sum
    out = {
        "srbd_linear_max": float(np.abs(lin).max()),
        "srbd_angular_max": float(np.abs(moment).max()),
    }

    # CoM chain propagation defect per segment (constant jerk).
    dt_col = dts[:, None]
    j_seg = jerk[:-1]
    defect_r = r[1:] - (r[:-1] + v[:-1] * dt_col + acc[:-1] * dt_col**2 / 2
                        + j_seg * dt_col**3 / 6)
    defect_v = v[1:] - (v[:-1] + acc[:-1] * dt_col + j_seg * dt_col**2 / 2)
    defect_a = acc[1:] - (acc[:-1] + j_seg * dt_col)
    out["com_chain_max"] = float(max(np.abs(defect_r).max(),
                                     np.abs(defect_v).max(),
                                     np.abs(defect_a).max()))

    # Stance force floor and friction pyramid in the local contact frame.
    uni = []
    fric = []
    normal = []
    mu = weights["mu"]
    for k in range(n_knots):
        for f in range(N_FEET):
            if not stance[k, f]:
                continue
            nrm, tx, ty = terrain.frame_at(feet_p[k, f, 0], feet_p[k, f, 1])
            fn = float(nrm @ feet_f[k, f])
            normal.append(fn)
            uni.append(fn - weights["f_z_min"])
            fric.append(mu * fn - abs(float(tx @ feet_f[k, f])))
            fric.append(mu * fn - abs(float(ty @ feet_f[k, f])))
    out["stance_normal_min"] = float(min(normal)) if normal else None
    out["unilateral_margin_min"] = float(min(uni)) if uni else None
    out["friction_margin_min"] = float(min(fric)) if fric else None

    # Final CoM box around the nominal stance-centered target.
    target = feet_p[-1].mean(axis=0) + np.array([0.0, 0.0,
                                                 robot["com_height"]])
    box = np.asarray(weights["final_com_box"])
    out["final_com_margin_min"] = float((box - np.abs(r[-1] - target)).min())

    if not with_arms:
        for key in ("payload_link_max", "arm_accel_consistency_max",
                    "arm_box_margin_min", "self_collision_margin_min",
                    "payload_force_margin_min", "payload_accel_margin_min"):
            out[key] = None
        return out

    arm_v = data.arm_vel[rows]
    arm_a = data.arm_acc[rows]

    # Payload point-mass rows at both edges of every arm segment, plus
    # consistency of the exported acceleration column with the Hermite
    # stencil it must satisfy.
    link = []
    consist = []
    accel_bound = []
    pbar = np.asarray(robot["arm_offsets"])
    b_f = np.asarray(weights["b_f"])
    box_margin = []
    for a in range(N_ARMS):
        m = arm_mass[a]
        for s in range(n_knots - 1):
            dt = dts[s]
            a0, a1 = _edge_accels(arm_p[s, a], arm_v[s, a],
                                  arm_p[s + 1, a], arm_v[s + 1, a], dt)
            link.append(m * (a0 - g) + arm_f[s, a])
            link.append(m * (a1 - g) + arm_f[s + 1, a])
            consist.append(np.abs(arm_a[s, a] - a0).max())
            accel_bound.append(np.abs(a0))
            accel_bound.append(np.abs(a1))
        consist.append(np.abs(
            arm_a[n_knots - 1, a]
            - _edge_accels(arm_p[-2, a], arm_v[-2, a], arm_p[-1, a],
                           arm_v[-1, a], dts[-1])[1]).max())
        box_margin.append(
            (np.asarray(weights["b_ee"])
             - np.abs(arm_p[:, a] - r - pbar[a])).min())
    out["payload_link_max"] = float(np.abs(np.array(link)).max())
    out["arm_accel_consistency_max"] = float(max(consist))
    out["arm_box_margin_min"] = float(min(box_margin))

    # Hands keep a lateral separation: (p_left - p_right) . y >= b_s.
    sep = arm_p[:, 0, 1] - arm_p[:, 1, 1] - weights["b_s"]
    out["self_collision_margin_min"] = float(sep.min())

    # Force deviation box and the acceleration bound it implies.
    force_dev = [(b_f - np.abs(arm_f[:, a] - arm_mass[a] * g)).min()
                 for a in range(N_ARMS)]
    out["payload_force_margin_min"] = float(min(force_dev))
    loaded = arm_mass > 0.0
    if loaded.any():
        margins = []
        per_arm = np.array(accel_bound).reshape(N_ARMS, -1, 3)
        for a in range(N_ARMS):
            if loaded[a]:
                margins.append((b_f / arm_mass[a] - per_arm[a]).min())
        out["payload_accel_margin_min"] = float(min(margins))
    else:
        out["payload_accel_margin_min"] = None
    return out


def manipulability_minima(data: ExportData) -> dict:
    """Per-leg minima of the tracked manipulability, overall and in swing."""
    if data.manip is None:
        return {"overall": None, "swing": None}
    out = {"overall": {}, "swing": {}}
    for i, name in enumerate(FOOT_NAMES):
        w = data.manip[:, i]
        out["overall"][name] = float(w.min())
        swing = ~data.stance[:, i]
        out["swing"][name] = float(w[swing].min()) if swing.any() else None
    return out


def total_com_path(data: ExportData, scenario: dict) -> np.ndarray:
    """Combined robot+payload CoM path implied by an export.

    Locomotion-only plans already optimize the combined CoM; payload-aware
    plans carry the payloads at the hands, so the payload masses shift the
    total away from the planned robot CoM.
    """
    masses = _payload_masses(scenario)
    if data.arm_pos is None or not masses.sum() > 0.0:
        return data.com_pos.copy()
    M = scenario["robot"]["mass"]
    total = M * data.com_pos.copy()
    for a in range(N_ARMS):
        total += masses[a] * data.arm_pos[:, a]
    return total / (M + masses.sum())


def srbd_residual_profile(data: ExportData, scenario: dict) -> np.ndarray:
    """Per-knot max-norm of the rigid-body dynamics residual (for reports)."""
    arm_sum = float(_payload_masses(scenario).sum())
    eff_mass = scenario["robot"]["mass"] + (arm_sum if data.arm_pos is None
                                            else 0.0)
    rows = data.knot_rows
    r = data.com_pos[rows]
    force = data.feet_force[rows].sum(axis=1)
    moment = -np.cross(data.feet_pos[rows] - r[:, None, :],
                       data.feet_force[rows]).sum(axis=1)
    if data.arm_pos is not None:
        force += data.arm_force[rows].sum(axis=1)
        moment -= np.cross(data.arm_pos[rows] - r[:, None, :],
                           data.arm_force[rows]).sum(axis=1)
    lin = eff_mass * data.com_acc[rows] - eff_mass * GRAVITY - force
    return np.maximum(np.abs(lin).max(axis=1), np.abs(moment).max(axis=1))
