"""Direct transcription of payload-aware locomotion planning.

Builds a sparse NLP over knot variables at a fixed rate: CoM state (position,
velocity, acceleration) with piecewise-constant jerk, stance-foot forces
(piecewise linear in time, absent during swing), and, in payload-aware mode,
arm end-effector positions/velocities (cubic Hermite splines) and arm contact
forces.  All costs are quadratic; all constraints are linear except the
angular-momentum-rate rows, which are bilinear in (positions, forces).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .gait import ContactSchedule, FeetPlan
from .splines import ComSpline, PiecewiseHermite, PwlProfile
from .srbd import N_ARMS, N_FEET, ComState, PayloadSpec, RobotConstants, skew
from .terrain import Terrain

MODE_PAYLOAD = "payload_aware"
MODE_LOCOMOTION = "locomotion_only"


class BuildError(ValueError):
    """Ill-posed transcription request."""


@dataclass(frozen=True)
class PlannerWeights:
    """Cost weights and constraint bounds of the planning NLP."""

    w_jerk: float = 0.1
    w_ftan: float = 1e-4
    w_com_ref: float = 50.0
    w_arm_accel: float = 1.0
    w_arm_final: float = 100.0
    f_z_min: float = 100.0
    mu: float = 0.5
    b_ee: np.ndarray = field(default_factory=lambda: np.array([0.4, 0.6, 0.3]))
    b_f: np.ndarray = field(default_factory=lambda: np.array([16.0, 16.0, 6.0]))
    b_s: float = 0.25
    final_com_box: np.ndarray = field(
        default_factory=lambda: np.array([0.05, 0.05, 0.05]))

    def __post_init__(self):
        for name in ("b_ee", "b_f", "final_com_box"):
            v = np.asarray(getattr(self, name), dtype=float)
            if v.shape != (3,) or np.any(v < 0.0):
                raise BuildError(f"{name} must be a nonnegative 3-vector")
            object.__setattr__(self, name, v)
        scalars = dict(w_jerk=self.w_jerk, w_ftan=self.w_ftan,
                       w_com_ref=self.w_com_ref, w_arm_accel=self.w_arm_accel,
                       w_arm_final=self.w_arm_final, f_z_min=self.f_z_min,
                       b_s=self.b_s)
        for name, v in scalars.items():
            if v < 0.0:
                raise BuildError(f"{name} must be nonnegative")
        if not self.mu > 0.0:
            raise BuildError("mu must be positive")


class VariableLayout:
    """Knot-major variable indexing.

    Per knot k: com pos/vel/acc (9), jerk of segment k (3, absent at the
    last knot), one 3-vector force per stance foot, then per arm pos/vel/
    force (9) in payload-aware mode.  Swing feet have no force variables.
    """

    def __init__(self, n_knots: int, dt: float, stance: np.ndarray,
                 with_arms: bool):
        stance = np.asarray(stance, dtype=bool)
        if stance.shape != (N_FEET, n_knots):
            raise BuildError("stance table must be (4, n_knots)")
        if n_knots < 2:
            raise BuildError("need at least two knots")
        self.n_knots = int(n_knots)
        self.n_segments = self.n_knots - 1
        self.dt = float(dt)
        self.stance = stance
        self.n_arms = N_ARMS if with_arms else 0

        self._com_pos = np.full(n_knots, -1)
        self._com_vel = np.full(n_knots, -1)
        self._com_acc = np.full(n_knots, -1)
        self._jerk = np.full(self.n_segments, -1)
        self._foot = np.full((N_FEET, n_knots), -1)
        self._arm_pos = np.full((self.n_arms, n_knots), -1)
        self._arm_vel = np.full((self.n_arms, n_knots), -1)
        self._arm_force = np.full((self.n_arms, n_knots), -1)

        off = 0
        for k in range(n_knots):
            self._com_pos[k] = off; off += 3
            self._com_vel[k] = off; off += 3
            self._com_acc[k] = off; off += 3
            if k < self.n_segments:
                self._jerk[k] = off; off += 3
            for i in range(N_FEET):
                if stance[i, k]:
                    self._foot[i, k] = off; off += 3
            for a in range(self.n_arms):
                self._arm_pos[a, k] = off; off += 3
                self._arm_vel[a, k] = off; off += 3
                self._arm_force[a, k] = off; off += 3
        self.n = off

    @property
    def with_arms(self) -> bool:
        return self.n_arms > 0

    def com_pos(self, k: int) -> slice:
        return slice(self._com_pos[k], self._com_pos[k] + 3)

    def com_vel(self, k: int) -> slice:
        return slice(self._com_vel[k], self._com_vel[k] + 3)

    def com_acc(self, k: int) -> slice:
        return slice(self._com_acc[k], self._com_acc[k] + 3)

    def jerk(self, s: int) -> slice:
        return slice(self._jerk[s], self._jerk[s] + 3)

    def in_stance(self, foot: int, k: int) -> bool:
        return bool(self.stance[foot, k])

    def foot_force(self, foot: int, k: int) -> slice | None:
        off = self._foot[foot, k]
        return None if off < 0 else slice(off, off + 3)

    def arm_pos(self, arm: int, k: int) -> slice:
        return slice(self._arm_pos[arm, k], self._arm_pos[arm, k] + 3)

    def arm_vel(self, arm: int, k: int) -> slice:
        return slice(self._arm_vel[arm, k], self._arm_vel[arm, k] + 3)

    def arm_force(self, arm: int, k: int) -> slice:
        return slice(self._arm_force[arm, k], self._arm_force[arm, k] + 3)


class _Rows:
    """Accumulates sparse rows of a linear operator A x + b with bounds."""

    def __init__(self, n_cols: int):
        self.n_cols = n_cols
        self.rows: list[int] = []
        self.cols: list[int] = []
        self.vals: list[float] = []
        self.offset: list[float] = []
        self.lower: list[float] = []
        self.upper: list[float] = []
        self.blocks: list[tuple[str, int, int]] = []
        self._block_start = 0
        self._block_name: str | None = None

    @property
    def m(self) -> int:
        return len(self.offset)

    def begin(self, name: str):
        self._flush()
        self._block_name = name
        self._block_start = self.m

    def _flush(self):
        if self._block_name is not None and self.m > self._block_start:
            self.blocks.append((self._block_name, self._block_start,
                                self.m - self._block_start))
        self._block_name = None

    def add(self, cols_vals: list[tuple], offset: float,
            lower: float, upper: float):
        r = self.m
        for c, v in cols_vals:
            if isinstance(c, slice):
                raise TypeError("pass explicit column indices")
            self.rows.append(r)
            self.cols.append(int(c))
            self.vals.append(float(v))
        self.offset.append(float(offset))
        self.lower.append(float(lower))
        self.upper.append(float(upper))

    def add_vec(self, col_blocks: list[tuple[slice, object]],
                offsets, lowers, uppers):
        """Three stacked rows from slices with per-row (diag) or matrix coeffs."""
        offsets = np.broadcast_to(np.asarray(offsets, float), (3,))
        lowers = np.broadcast_to(np.asarray(lowers, float), (3,))
        uppers = np.broadcast_to(np.asarray(uppers, float), (3,))
        base = self.m
        for d in range(3):
            r = base + d
            for sl, coeff in col_blocks:
                coeff = np.asarray(coeff, dtype=float)
                if coeff.ndim == 0:
                    self.rows.append(r)
                    self.cols.append(sl.start + d)
                    self.vals.append(float(coeff))
                else:  # 3x3 block
                    for c in range(3):
                        v = coeff[d, c]
                        if v != 0.0:
                            self.rows.append(r)
                            self.cols.append(sl.start + c)
                            self.vals.append(float(v))
            self.offset.append(float(offsets[d]))
            self.lower.append(float(lowers[d]))
            self.upper.append(float(uppers[d]))

    def finish(self):
        self._flush()
        A = sp.csr_matrix(
            (self.vals, (self.rows, self.cols)), shape=(self.m, self.n_cols))
        return (A, np.array(self.offset), np.array(self.lower),
                np.array(self.upper), list(self.blocks))


class _Quad:
    """Accumulates a quadratic cost 1/2 x'Hx + q'x + c."""

    def __init__(self, n: int):
        self.n = n
        self.rows: list[int] = []
        self.cols: list[int] = []
        self.vals: list[float] = []
        self.q = np.zeros(n)
        self.c = 0.0

    def add_diag(self, sl: slice, h: float):
        for i in range(sl.start, sl.stop):
            self.rows.append(i); self.cols.append(i); self.vals.append(h)

    def add_block(self, idx: np.ndarray, H: np.ndarray):
        for a, ia in enumerate(idx):
            for b, ib in enumerate(idx):
                v = H[a, b]
                if v != 0.0:
                    self.rows.append(int(ia))
                    self.cols.append(int(ib))
                    self.vals.append(float(v))

    def finish(self):
        H = sp.csc_matrix((self.vals, (self.rows, self.cols)),
                          shape=(self.n, self.n))
        H.sum_duplicates()
        return H, self.q, self.c


@dataclass
class NlpProblem:
    """Transcribed problem: linear/bilinear equalities, linear inequalities,
    quadratic cost, plus the parameters needed to interpret a solution."""

    layout: VariableLayout
    times: np.ndarray  # (N,) absolute knot times
    # linear equalities A_eq x + b_eq = 0, then bilinear angular rows appended
    A_eq: sp.csr_matrix
    b_eq: np.ndarray
    eq_blocks: list
    # inequalities lb <= A_in x + b_in <= ub
    A_in: sp.csr_matrix
    b_in: np.ndarray
    lb_in: np.ndarray
    ub_in: np.ndarray
    in_blocks: list
    # cost 1/2 x'Hx + q'x + c0
    H: sp.csc_matrix
    q: np.ndarray
    c0: float
    # parameters
    consts: RobotConstants
    payloads: tuple
    mode: str
    feet_positions: np.ndarray  # (N, 4, 3) at knots
    frames: np.ndarray  # (4, N, 3, 3) rows: normal, tangent_x, tangent_y
    feet_plan: FeetPlan
    schedule: ContactSchedule
    weights: PlannerWeights
    com_targets: np.ndarray  # (N, 3) p_mean + c_ref per knot
    arm_nominal: np.ndarray  # (n_arms, 3) offsets relative to the CoM
    effective_mass: float
    cost_names: tuple = ("jerk", "ftan", "com_ref", "arm_accel", "arm_final")

    # ---- interface used by the solver ----

    @property
    def n(self) -> int:
        return self.layout.n

    @property
    def m_eq(self) -> int:
        return self.A_eq.shape[0] + 3 * self.layout.n_knots

    def eval_eq(self, x: np.ndarray) -> np.ndarray:
        x = self._check(x)
        lin = self.A_eq @ x + self.b_eq
        return np.concatenate([lin, self._angular_values(x)])

    def eval_ineq(self, x: np.ndarray) -> np.ndarray:
        x = self._check(x)
        return self.A_in @ x + self.b_in

    def eval_eq_jacobian(self, x: np.ndarray) -> sp.csr_matrix:
        x = self._check(x)
        vals = self._angular_jac_values(x)
        J_ang = sp.csr_matrix((vals, (self._ang_rows, self._ang_cols)),
                              shape=(3 * self.layout.n_knots, self.n))
        return sp.vstack([self.A_eq, J_ang], format="csr")

    def eval_cost_and_gradient(self, x: np.ndarray) -> tuple[float, np.ndarray]:
        x = self._check(x)
        Hx = self.H @ x
        return float(0.5 * x @ Hx + self.q @ x + self.c0), Hx + self.q

    def feasibility(self, x: np.ndarray) -> float:
        c_eq = self.eval_eq(x)
        c_in = self.eval_ineq(x)
        viol = np.maximum(np.maximum(self.lb_in - c_in, c_in - self.ub_in), 0.0)
        return max(float(np.max(np.abs(c_eq), initial=0.0)),
                   float(np.max(viol, initial=0.0)))

    def _check(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.shape != (self.n,):
            raise ValueError(f"x must have shape ({self.n},), got {x.shape}")
        return x

    # ---- bilinear angular-momentum rows ----

    def _contacts_at(self, k: int):
        """(position, force-slice, pos-slice-or-None) per active contact."""
        out = []
        lay = self.layout
        for i in range(N_FEET):
            fs = lay.foot_force(i, k)
            if fs is not None:
                out.append((self.feet_positions[k, i], fs, None))
        for a in range(lay.n_arms):
            out.append((None, lay.arm_force(a, k), lay.arm_pos(a, k)))
        return out

    def _angular_values(self, x: np.ndarray) -> np.ndarray:
        lay = self.layout
        g = np.zeros(3 * lay.n_knots)
        for k in range(lay.n_knots):
            r = x[lay.com_pos(k)]
            total = np.zeros(3)
            for p_fix, fs, ps in self._contacts_at(k):
                p = x[ps] if ps is not None else p_fix
                total -= np.cross(p - r, x[fs])
            g[3 * k:3 * k + 3] = total
        return g

    def _build_angular_pattern(self):
        rows, cols = [], []
        lay = self.layout
        for k in range(lay.n_knots):
            rk = range(3 * k, 3 * k + 3)
            blocks = [lay.com_pos(k)]
            for _, fs, ps in self._contacts_at(k):
                blocks.append(fs)
                if ps is not None:
                    blocks.append(ps)
            for sl in blocks:
                for r in rk:
                    for c in range(sl.start, sl.stop):
                        rows.append(r)
                        cols.append(c)
        self._ang_rows = np.array(rows)
        self._ang_cols = np.array(cols)

    def _angular_jac_values(self, x: np.ndarray) -> np.ndarray:
        lay = self.layout
        vals = []
        for k in range(lay.n_knots):
            r = x[lay.com_pos(k)]
            contacts = self._contacts_at(k)
            f_sum = np.zeros(3)
            per_contact = []
            for p_fix, fs, ps in contacts:
                p = x[ps] if ps is not None else p_fix
                f = x[fs]
                f_sum += f
                per_contact.append((p, f, ps is not None))
            vals.append(-skew(f_sum).ravel())  # d/dr
            for p, f, has_pos in per_contact:
                vals.append(-skew(p - r).ravel())  # d/df
                if has_pos:
                    vals.append(skew(f).ravel())  # d/dp (arms)
        return np.concatenate(vals)

    # ---- cost introspection ----

    def cost_breakdown(self, x: np.ndarray) -> dict:
        x = self._check(x)
        lay, w = self.layout, self.weights
        out = {}
        jerk = sum(float(np.sum(x[lay.jerk(s)] ** 2))
                   for s in range(lay.n_segments))
        out["jerk"] = w.w_jerk * jerk
        ftan = 0.0
        for k in range(lay.n_knots):
            for i in range(N_FEET):
                fs = lay.foot_force(i, k)
                if fs is None:
                    continue
                f = x[fs]
                _, tx, ty = self.frames[i, k]
                ftan += float((tx @ f) ** 2 + (ty @ f) ** 2)
        out["ftan"] = w.w_ftan * ftan
        com = sum(float(np.sum((x[lay.com_pos(k)] - self.com_targets[k]) ** 2))
                  for k in range(lay.n_knots))
        out["com_ref"] = w.w_com_ref * com
        arm_acc = 0.0
        arm_fin = 0.0
        for a in range(lay.n_arms):
            segs = self._arm_spline(x, a).segments()
            from .splines import accel_sq_integral
            arm_acc += accel_sq_integral(segs)
            k = lay.n_knots - 1
            dev = (x[lay.arm_pos(a, k)] - x[lay.com_pos(k)]
                   - self.arm_nominal[a])
            arm_fin += float(np.sum(dev ** 2))
        out["arm_accel"] = w.w_arm_accel * arm_acc
        out["arm_final"] = w.w_arm_final * arm_fin
        return out

    def _arm_spline(self, x: np.ndarray, arm: int) -> PiecewiseHermite:
        lay = self.layout
        pos = np.array([x[lay.arm_pos(arm, k)] for k in range(lay.n_knots)])
        vel = np.array([x[lay.arm_vel(arm, k)] for k in range(lay.n_knots)])
        return PiecewiseHermite(self.times, pos, vel)


@dataclass(frozen=True)
class TrajectoryPlan:
    """Continuous-time plan extracted from a solved problem."""

    dt: float
    times: np.ndarray
    mode: str
    com: ComSpline
    feet_plan: FeetPlan
    schedule: ContactSchedule
    stance: np.ndarray  # (4, N)
    feet_forces: tuple  # 4 x PwlProfile over the horizon
    arm_paths: tuple  # n_arms x PiecewiseHermite
    arm_forces: tuple  # n_arms x PwlProfile
    payloads: tuple
    consts: RobotConstants
    # raw knot arrays for exact export
    com_pos: np.ndarray
    com_vel: np.ndarray
    com_acc: np.ndarray
    jerks: np.ndarray
    foot_force_knots: np.ndarray  # (4, N, 3), zeros during swing
    arm_pos_knots: np.ndarray
    arm_vel_knots: np.ndarray
    arm_force_knots: np.ndarray

    @property
    def start_time(self) -> float:
        return float(self.times[0])

    @property
    def end_time(self) -> float:
        return float(self.times[-1])

    @property
    def n_knots(self) -> int:
        return len(self.times)


def _arm_accel_rows(dt: float):
    """Coefficient stencils (p0, v0, p1, v1) of segment-edge accelerations."""
    a0 = np.array([-6.0 / dt**2, -4.0 / dt, 6.0 / dt**2, -2.0 / dt])
    a1 = np.array([6.0 / dt**2, 2.0 / dt, -6.0 / dt**2, 4.0 / dt])
    return a0, a1


def build_nlp(scenario, feet_plan: FeetPlan,
              schedule: ContactSchedule | None = None, *,
              window_start: float = 0.0,
              window_duration: float | None = None,
              initial_com: ComState | None = None,
              initial_arms: list | None = None) -> NlpProblem:
    """Assemble the NLP for one planning window of `scenario`.

    `scenario` provides constants, payloads, weights, solver mode, dt and
    terrain (duck-typed; see scenario module).  The window defaults to the
    whole feet-plan horizon.  `initial_arms` entries are (pos, vel, acc)
    per arm; defaults place arms at their nominal offsets, at rest.
    """
    if schedule is None:
        schedule = feet_plan.schedule
    consts: RobotConstants = scenario.constants
    weights: PlannerWeights = scenario.weights
    terrain: Terrain = scenario.terrain
    payloads: tuple = tuple(scenario.payloads)
    mode: str = scenario.mode
    dt: float = scenario.dt
    if mode not in (MODE_PAYLOAD, MODE_LOCOMOTION):
        raise BuildError(f"unknown mode {mode!r}")

    total = schedule.total_time
    if window_duration is None:
        window_duration = total - window_start
    n_seg = window_duration / dt
    if abs(n_seg - round(n_seg)) > 1e-9 or round(n_seg) < 1:
        raise BuildError(
            f"window duration {window_duration} not a positive multiple of dt={dt}")
    n_seg = int(round(n_seg))
    N = n_seg + 1
    times = window_start + dt * np.arange(N)
    if times[-1] > total + 1e-9:
        raise BuildError("window extends beyond the planned feet horizon")

    with_arms = mode == MODE_PAYLOAD
    stance = np.array([[schedule.in_stance(i, float(t)) for t in times]
                       for i in range(N_FEET)])
    layout = VariableLayout(N, dt, stance, with_arms)

    # payload mass per arm (zero when no payload on that arm)
    arm_mass = np.zeros(N_ARMS)
    for p in payloads:
        arm_mass[p.arm] += p.mass
    eff_mass = consts.mass if with_arms else consts.mass + float(arm_mass.sum())

    feet_positions = np.array([feet_plan.positions_at(float(t)) for t in times])
    frames = np.zeros((N_FEET, N, 3, 3))
    for i in range(N_FEET):
        for k in range(N):
            x, y = feet_positions[k, i, 0], feet_positions[k, i, 1]
            n, tx, ty = terrain.frame_at(x, y)
            frames[i, k] = np.vstack([n, tx, ty])

    com_targets = np.array([feet_plan.mean_position(float(t)) for t in times]) \
        + consts.com_ref_offset
    g = consts.gravity

    # boundary data
    if initial_com is None:
        initial_com = ComState(com_targets[0], np.zeros(3), np.zeros(3))
    arm_nominal = consts.nominal_arm_offsets
    if with_arms:
        if initial_arms is None:
            initial_arms = [(initial_com.position + arm_nominal[a],
                             np.zeros(3), np.zeros(3))
                            for a in range(N_ARMS)]
        if len(initial_arms) != N_ARMS:
            raise BuildError("initial_arms must have one entry per arm")
    else:
        initial_arms = []

    lay = layout
    eq = _Rows(lay.n)
    a0c, a1c = _arm_accel_rows(dt)

    # CoM chain: state propagation under constant jerk per segment.
    eq.begin("com_chain")
    for s in range(lay.n_segments):
        r0, v0, acc0 = lay.com_pos(s), lay.com_vel(s), lay.com_acc(s)
        r1, v1, acc1 = lay.com_pos(s + 1), lay.com_vel(s + 1), lay.com_acc(s + 1)
        j = lay.jerk(s)
        eq.add_vec([(r1, 1.0), (r0, -1.0), (v0, -dt), (acc0, -dt**2 / 2),
                    (j, -dt**3 / 6)], 0.0, 0.0, 0.0)
        eq.add_vec([(v1, 1.0), (v0, -1.0), (acc0, -dt), (j, -dt**2 / 2)],
                   0.0, 0.0, 0.0)
        eq.add_vec([(acc1, 1.0), (acc0, -1.0), (j, -dt)], 0.0, 0.0, 0.0)

    # Newton rows: m a = m g + sum of contact forces.
    eq.begin("srbd_lin")
    for k in range(N):
        blocks = [(lay.com_acc(k), eff_mass)]
        for i in range(N_FEET):
            fs = lay.foot_force(i, k)
            if fs is not None:
                blocks.append((fs, -1.0))
        for a in range(lay.n_arms):
            blocks.append((lay.arm_force(a, k), -1.0))
        eq.add_vec(blocks, -eff_mass * g, 0.0, 0.0)

    # Payload point-mass rows at both edges of every arm segment:
    # m_pay * accel_edge - m_pay * g + f_edge = 0.
    if with_arms:
        eq.begin("payload_link")
        for a in range(N_ARMS):
            m = arm_mass[a]
            for s in range(lay.n_segments):
                p0, v0 = lay.arm_pos(a, s), lay.arm_vel(a, s)
                p1, v1 = lay.arm_pos(a, s + 1), lay.arm_vel(a, s + 1)
                f0, f1 = lay.arm_force(a, s), lay.arm_force(a, s + 1)
                eq.add_vec([(p0, m * a0c[0]), (v0, m * a0c[1]),
                            (p1, m * a0c[2]), (v1, m * a0c[3]), (f0, 1.0)],
                           -m * g, 0.0, 0.0)
                eq.add_vec([(p0, m * a1c[0]), (v0, m * a1c[1]),
                            (p1, m * a1c[2]), (v1, m * a1c[3]), (f1, 1.0)],
                           -m * g, 0.0, 0.0)

    # Boundary rows: initial CoM state pinned, terminal vel/acc zero.
    eq.begin("com_boundary")
    eq.add_vec([(lay.com_pos(0), 1.0)], -initial_com.position, 0.0, 0.0)
    eq.add_vec([(lay.com_vel(0), 1.0)], -initial_com.velocity, 0.0, 0.0)
    eq.add_vec([(lay.com_acc(0), 1.0)], -initial_com.acceleration, 0.0, 0.0)
    eq.add_vec([(lay.com_vel(N - 1), 1.0)], 0.0, 0.0, 0.0)
    eq.add_vec([(lay.com_acc(N - 1), 1.0)], 0.0, 0.0, 0.0)

    if with_arms:
        eq.begin("arm_boundary")
        last = lay.n_segments - 1
        for a in range(N_ARMS):
            p_init, v_init, acc_init = (np.asarray(v, float)
                                        for v in initial_arms[a])
            eq.add_vec([(lay.arm_pos(a, 0), 1.0)], -p_init, 0.0, 0.0)
            eq.add_vec([(lay.arm_vel(a, 0), 1.0)], -v_init, 0.0, 0.0)
            eq.add_vec([(lay.arm_vel(a, N - 1), 1.0)], 0.0, 0.0, 0.0)
            # spline-edge accelerations at both horizon ends
            eq.add_vec([(lay.arm_pos(a, 0), a0c[0]), (lay.arm_vel(a, 0), a0c[1]),
                        (lay.arm_pos(a, 1), a0c[2]), (lay.arm_vel(a, 1), a0c[3])],
                       -acc_init, 0.0, 0.0)
            eq.add_vec([(lay.arm_pos(a, last), a1c[0]),
                        (lay.arm_vel(a, last), a1c[1]),
                        (lay.arm_pos(a, N - 1), a1c[2]),
                        (lay.arm_vel(a, N - 1), a1c[3])], 0.0, 0.0, 0.0)

    A_eq, b_eq, _, _, eq_blocks = eq.finish()

    # ---- inequalities ----
    ineq = _Rows(lay.n)
    INFTY = np.inf

    ineq.begin("stability")
    for k in range(N):
        for i in range(N_FEET):
            fs = lay.foot_force(i, k)
            if fs is None:
                continue
            n = frames[i, k, 0]
            ineq.add([(fs.start + d, n[d]) for d in range(3) if n[d] != 0.0],
                     0.0, weights.f_z_min, INFTY)

    ineq.begin("friction")
    for k in range(N):
        for i in range(N_FEET):
            fs = lay.foot_force(i, k)
            if fs is None:
                continue
            n = frames[i, k, 0]
            for t_ax in (1, 2):
                t = frames[i, k, t_ax]
                lo_row = t - weights.mu * n  # t.f - mu n.f <= 0
                hi_row = t + weights.mu * n  # t.f + mu n.f >= 0
                ineq.add([(fs.start + d, lo_row[d]) for d in range(3)
                          if lo_row[d] != 0.0], 0.0, -INFTY, 0.0)
                ineq.add([(fs.start + d, hi_row[d]) for d in range(3)
                          if hi_row[d] != 0.0], 0.0, 0.0, INFTY)

    if with_arms:
        ineq.begin("arm_workspace")
        for a in range(N_ARMS):
            ctr = arm_nominal[a]
            half = weights.b_ee / 2.0
            for k in range(N):
                ineq.add_vec([(lay.arm_pos(a, k), 1.0), (lay.com_pos(k), -1.0)],
                             0.0, ctr - half, ctr + half)

        ineq.begin("arm_separation")
        for k in range(N):
            # left arm stays at least b_s to the +y of the right arm
            ineq.add([(lay.arm_pos(0, k).start + 1, 1.0),
                      (lay.arm_pos(1, k).start + 1, -1.0)],
                     0.0, weights.b_s, INFTY)

        ineq.begin("arm_force_box")
        for a in range(N_ARMS):
            ctr = arm_mass[a] * g
            half = weights.b_f / 2.0
            for k in range(N):
                ineq.add_vec([(lay.arm_force(a, k), 1.0)], 0.0,
                             ctr - half, ctr + half)

    ineq.begin("final_com_box")
    half = weights.final_com_box
    ineq.add_vec([(lay.com_pos(N - 1), 1.0)], 0.0,
                 com_targets[N - 1] - half, com_targets[N - 1] + half)

    A_in, b_in, lb_in, ub_in, in_blocks = ineq.finish()

    # ---- quadratic cost ----
    quad = _Quad(lay.n)
    for s in range(lay.n_segments):
        quad.add_diag(lay.jerk(s), 2.0 * weights.w_jerk)
    for k in range(N):
        for i in range(N_FEET):
            fs = lay.foot_force(i, k)
            if fs is None:
                continue
            tx, ty = frames[i, k, 1], frames[i, k, 2]
            Hb = 2.0 * weights.w_ftan * (np.outer(tx, tx) + np.outer(ty, ty))
            quad.add_block(np.arange(fs.start, fs.stop), Hb)
    for k in range(N):
        sl = lay.com_pos(k)
        quad.add_diag(sl, 2.0 * weights.w_com_ref)
        quad.q[sl] += -2.0 * weights.w_com_ref * com_targets[k]
        quad.c += weights.w_com_ref * float(com_targets[k] @ com_targets[k])
    if with_arms:
        Hseg = weights.w_arm_accel * dt / 3.0 * (
            2.0 * np.outer(a0c, a0c) + np.outer(a0c, a1c)
            + np.outer(a1c, a0c) + 2.0 * np.outer(a1c, a1c))
        for a in range(N_ARMS):
            for s in range(lay.n_segments):
                for d in range(3):
                    idx = np.array([lay.arm_pos(a, s).start + d,
                                    lay.arm_vel(a, s).start + d,
                                    lay.arm_pos(a, s + 1).start + d,
                                    lay.arm_vel(a, s + 1).start + d])
                    quad.add_block(idx, Hseg)
            # final arm pose relative to the CoM
            k = N - 1
            w = weights.w_arm_final
            for d in range(3):
                ip = lay.arm_pos(a, k).start + d
                ir = lay.com_pos(k).start + d
                quad.add_block(np.array([ip, ir]),
                               2.0 * w * np.array([[1.0, -1.0], [-1.0, 1.0]]))
                quad.q[ip] += -2.0 * w * arm_nominal[a, d]
                quad.q[ir] += 2.0 * w * arm_nominal[a, d]
                quad.c += w * arm_nominal[a, d] ** 2
    H, q, c0 = quad.finish()

    problem = NlpProblem(
        layout=layout, times=times, A_eq=A_eq, b_eq=b_eq, eq_blocks=eq_blocks,
        A_in=A_in, b_in=b_in, lb_in=lb_in, ub_in=ub_in, in_blocks=in_blocks,
        H=H, q=q, c0=c0, consts=consts, payloads=payloads, mode=mode,
        feet_positions=feet_positions, frames=frames, feet_plan=feet_plan,
        schedule=schedule, weights=weights, com_targets=com_targets,
        arm_nominal=arm_nominal[:lay.n_arms] if with_arms else np.zeros((0, 3)),
        effective_mass=eff_mass)
    problem._build_angular_pattern()
    # the angular block sits after all linear equality rows
    problem.eq_blocks = eq_blocks + [("srbd_ang", A_eq.shape[0],
                                      3 * layout.n_knots)]
    return problem


def eval_constraints(problem: NlpProblem, x) -> tuple[np.ndarray, np.ndarray]:
    """Equality values and inequality values (bounds live on the problem)."""
    return problem.eval_eq(x), problem.eval_ineq(x)


def eval_cost_and_gradient(problem: NlpProblem, x) -> tuple[float, np.ndarray]:
    return problem.eval_cost_and_gradient(x)


def eval_eq_jacobian(problem: NlpProblem, x) -> sp.csr_matrix:
    return problem.eval_eq_jacobian(x)


def extract_plan(problem: NlpProblem, x) -> TrajectoryPlan:
    """Interpolate solved knot values into a continuous-time plan."""
    x = problem._check(x)
    lay = problem.layout
    N = lay.n_knots
    dt = lay.dt
    t0 = float(problem.times[0])

    com_pos = np.array([x[lay.com_pos(k)] for k in range(N)])
    com_vel = np.array([x[lay.com_vel(k)] for k in range(N)])
    com_acc = np.array([x[lay.com_acc(k)] for k in range(N)])
    jerks = np.array([x[lay.jerk(s)] for s in range(lay.n_segments)])
    com = ComSpline(com_pos, com_vel, com_acc, jerks, dt, start_time=t0)

    foot_knots = np.zeros((N_FEET, N, 3))
    for i in range(N_FEET):
        for k in range(N):
            fs = lay.foot_force(i, k)
            if fs is not None:
                foot_knots[i, k] = x[fs]
    feet_forces = tuple(PwlProfile(foot_knots[i], dt, start_time=t0)
                        for i in range(N_FEET))

    arm_paths = []
    arm_forces = []
    arm_pos_knots = np.zeros((lay.n_arms, N, 3))
    arm_vel_knots = np.zeros((lay.n_arms, N, 3))
    arm_force_knots = np.zeros((lay.n_arms, N, 3))
    for a in range(lay.n_arms):
        arm_pos_knots[a] = [x[lay.arm_pos(a, k)] for k in range(N)]
        arm_vel_knots[a] = [x[lay.arm_vel(a, k)] for k in range(N)]
        arm_force_knots[a] = [x[lay.arm_force(a, k)] for k in range(N)]
        arm_paths.append(PiecewiseHermite(problem.times, arm_pos_knots[a],
                                          arm_vel_knots[a]))
        arm_forces.append(PwlProfile(arm_force_knots[a], dt, start_time=t0))

    return TrajectoryPlan(
        dt=dt, times=problem.times.copy(), mode=problem.mode, com=com,
        feet_plan=problem.feet_plan, schedule=problem.schedule,
        stance=lay.stance.copy(), feet_forces=feet_forces,
        arm_paths=tuple(arm_paths), arm_forces=tuple(arm_forces),
        payloads=problem.payloads, consts=problem.consts,
        com_pos=com_pos, com_vel=com_vel, com_acc=com_acc, jerks=jerks,
        foot_force_knots=foot_knots, arm_pos_knots=arm_pos_knots,
        arm_vel_knots=arm_vel_knots, arm_force_knots=arm_force_knots)
