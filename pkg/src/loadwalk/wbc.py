"""Task-priority kinematic whole-body tracking of trajectory plans.

Each IK step solves a strict three-level hierarchy by damped least
squares with exact nullspace projection:

  level 1   feet positions and CoM position
  level 2   arm hand positions, resolved in the level-1 nullspace
  level 3   postural regularization (nominal joints, upright base)

Joint position and velocity limits are enforced by clamping saturated
joints and re-solving the tasks over the remaining freedoms. The damping
acts only on the step computation; the inter-level projectors come from
rank-revealing SVDs, so a lower-priority task cannot disturb a higher
one beyond machine precision at the velocity level.

The CoM task tracks the mass-weighted link positions of the chain model.
For locomotion-only plans the planner lumped the payload into the body
mass, so the tracked point is the combined CoM of the robot plus the
payload point masses at the hands, and the hands themselves hold the
nominal body-relative carry pose. Payload-aware plans provide explicit
arm trajectories and treat the planned CoM as the robot's own.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .kinematics import KinematicModel, RobotState, so3_log
from .srbd import N_ARMS
from .transcription import MODE_PAYLOAD, TrajectoryPlan

N_FEET = 4

DLS_DAMPING = 1e-3  # task-space units, fixed
_RANK_TOL = 1e-10


class TrackingError(ValueError):
    """Invalid tracking request."""


@dataclass(frozen=True)
class IkTargets:
    """World-frame task targets for one IK step.

    `arms` holds world hand targets; `arms_body` holds base-frame targets
    evaluated at the current pose (used for the carry posture). At most
    one of them is set; both None drops the level-2 task entirely.
    `payload_masses` adds point masses at the hands to the tracked CoM.
    """

    feet: np.ndarray
    com: np.ndarray
    posture: np.ndarray
    arms: np.ndarray | None = None
    arms_body: np.ndarray | None = None
    payload_masses: np.ndarray | None = None


@dataclass(frozen=True)
class IkStepResult:
    state: RobotState
    lin_err1: float       # |J1 d - e1|_inf of the velocity-level solve
    lin_err2: float       # same for the arm task (nan without one)
    feet_err: np.ndarray  # (4,) post-step distances to the foot targets
    com_err: float
    arm_err: np.ndarray   # (2,) post-step hand distances (nan without)
    n_saturated: int


def _dls_solve(jac: np.ndarray, err: np.ndarray, damping: float) -> np.ndarray:
    """Damped least-squares step J^T (J J^T + lambda^2 I)^-1 e."""
    m = jac.shape[0]
    gram = jac @ jac.T + damping**2 * np.eye(m)
    return jac.T @ np.linalg.solve(gram, err)


def _budget_scale(base, add, lo, hi) -> float:
    """Largest s in [0,1] keeping base + s*add inside [lo, hi]."""
    s = 1.0
    grow = add > 1e-15
    if np.any(grow):
        s = min(s, float(np.min((hi[grow] - base[grow]) / add[grow])))
    shrink = add < -1e-15
    if np.any(shrink):
        s = min(s, float(np.min((lo[shrink] - base[shrink]) / add[shrink])))
    return max(s, 0.0)


def _null_projector(jac: np.ndarray) -> np.ndarray:
    """Exact orthogonal projector onto the nullspace of `jac`."""
    n = jac.shape[1]
    if jac.shape[0] == 0:
        return np.eye(n)
    _, sing, vt = np.linalg.svd(jac, full_matrices=True)
    rank = int(np.sum(sing > _RANK_TOL * max(float(sing[0]), 1e-300)))
    v_null = vt[rank:].T
    return v_null @ v_null.T


def _tracked_com(model: KinematicModel, state: RobotState, masses):
    """Tracked CoM point and Jacobian, with payloads lumped at the hands."""
    fk = model.forward_kinematics(state, validate=False)
    point = model.total_mass * fk.com
    jac = model.total_mass * model.com_jacobian(state)
    total = model.total_mass
    if masses is not None:
        for i, arm in enumerate(model.arms):
            if masses[i] <= 0.0:
                continue
            point = point + masses[i] * fk.ee[arm.name]
            jac = jac + masses[i] * model.point_jacobian(state, arm.name)
            total += masses[i]
    return point / total, jac / total, fk


POSTURE_GAIN = 0.3  # fractional level-3 step


def ik_step(model: KinematicModel, state: RobotState, targets: IkTargets,
            dt: float, damping: float = DLS_DAMPING,
            max_saturation_passes: int = 3,
            posture_gain: float = POSTURE_GAIN) -> IkStepResult:
    """One prioritized IK step toward `targets` over a step of `dt`.

    Levels 1 and 2 take full error-cancelling steps. The postural level
    steps by `posture_gain` of its error: a full step along the curved
    level-1/2 nullspace manifold is locally expansive and destabilizes
    the stack, while a fractional step keeps the curvature error second
    order and contracts.
    """
    if not dt > 0.0:
        raise TrackingError("dt must be positive")
    n_v = model.n_v
    masses = targets.payload_masses
    com_pt, com_jac, fk = _tracked_com(model, state, masses)

    # level 1: feet + CoM
    jac1 = np.empty((3 * N_FEET + 3, n_v))
    err1 = np.empty(3 * N_FEET + 3)
    for i, leg in enumerate(model.legs):
        jac1[3 * i:3 * i + 3] = model.point_jacobian(state, leg.name)
        err1[3 * i:3 * i + 3] = targets.feet[i] - fk.feet[i]
    jac1[12:15] = com_jac
    err1[12:15] = targets.com - com_pt

    # level 2: arm hands (world targets, or body-fixed carry pose)
    arm_goal = targets.arms
    if arm_goal is None and targets.arms_body is not None:
        arm_goal = state.base_pos + (state.base_rot @ targets.arms_body.T).T
    if arm_goal is not None:
        jac2 = np.empty((3 * N_ARMS, n_v))
        err2 = np.empty(3 * N_ARMS)
        for i, arm in enumerate(model.arms):
            jac2[3 * i:3 * i + 3] = model.point_jacobian(state, arm.name)
            err2[3 * i:3 * i + 3] = arm_goal[i] - fk.ee[arm.name]
    else:
        jac2 = err2 = None

    # level 3: posture (joints to nominal, base orientation to upright)
    jac3 = np.zeros((3 + model.n_q, n_v))
    jac3[0:3, 3:6] = np.eye(3)
    jac3[3:, 6:] = np.eye(model.n_q)
    err3 = posture_gain * np.concatenate([-so3_log(state.base_rot),
                                          targets.posture - state.q])

    # per-step joint displacement budget from position and velocity limits
    vmax = model.velocity_limits * dt
    budget_lo = np.maximum(model.lower_limits - state.q, -vmax)
    budget_hi = np.minimum(model.upper_limits - state.q, vmax)

    # level 1 saturates by clamp-and-reproject: a joint driven to its
    # budget is fixed there and the task re-solved over the rest
    delta = np.zeros(n_v)
    fixed = np.zeros(n_v, dtype=bool)
    for _ in range(max_saturation_passes + 1):
        free = ~fixed
        r1 = err1 - jac1[:, fixed] @ delta[fixed]
        step = delta.copy()
        step[free] = _dls_solve(jac1[:, free], r1, damping)
        clip = np.clip(step[6:], budget_lo, budget_hi)
        viol = np.where(np.abs(clip - step[6:]) > 1e-12)[0]
        if viol.size == 0 or np.all(fixed[6:]):
            delta = step
            break
        delta[6:] = clip
        fixed[6 + viol] = True
        delta[~fixed] = 0.0
    else:
        delta = step
    delta[6:] = np.clip(delta[6:], budget_lo, budget_hi)
    free = ~fixed

    # lower levels act on the unsaturated joints in the exact nullspace
    # of the level-1 rows and are scaled (never clamped) to the remaining
    # budget, so they cannot disturb level 1 even when limits bind
    null1 = _null_projector(jac1[:, free])
    if jac2 is not None:
        j2f = jac2[:, free]
        d2 = np.zeros(n_v)
        d2[free] = null1 @ _dls_solve(
            j2f @ null1, err2 - jac2 @ delta, damping)
        delta = delta + _budget_scale(
            delta[6:], d2[6:], budget_lo, budget_hi) * d2
        null12 = _null_projector(np.vstack([jac1[:, free], j2f]))
    else:
        null12 = null1
    d3 = np.zeros(n_v)
    d3[free] = null12 @ _dls_solve(
        jac3[:, free] @ null12, err3 - jac3 @ delta, damping)
    delta = delta + _budget_scale(
        delta[6:], d3[6:], budget_lo, budget_hi) * d3

    n_saturated = int(fixed[6:].sum() +
                      np.sum((np.abs(delta[6:] - budget_lo) < 1e-12) |
                             (np.abs(delta[6:] - budget_hi) < 1e-12)))
    # numerical safety net; a no-op when the scaling did its job
    delta[6:] = np.clip(delta[6:], budget_lo, budget_hi)

    # residuals of the applied step: d2/d3 live in the exact level-1
    # nullspace, so lin_err1 is what level 1 alone achieved
    lin_err1 = float(np.max(np.abs(jac1 @ delta - err1)))
    lin_err2 = np.nan
    if jac2 is not None:
        lin_err2 = float(np.max(np.abs(jac2 @ delta - err2)))

    new_state = model.integrate(state, delta / dt, dt)
    new_state = RobotState(new_state.base_pos, new_state.base_rot,
                           model.clamp_to_limits(new_state.q))

    com_new, _, fk_new = _tracked_com(model, new_state, masses)
    feet_err = np.linalg.norm(targets.feet - fk_new.feet, axis=1)
    com_err = float(np.linalg.norm(targets.com - com_new))
    if arm_goal is not None:
        goal = targets.arms
        if goal is None:
            goal = new_state.base_pos + \
                (new_state.base_rot @ targets.arms_body.T).T
        arm_err = np.linalg.norm(goal - fk_new.arm_ee, axis=1)
    else:
        arm_err = np.full(N_ARMS, np.nan)
    return IkStepResult(state=new_state, lin_err1=lin_err1,
                        lin_err2=lin_err2, feet_err=feet_err,
                        com_err=com_err, arm_err=arm_err,
                        n_saturated=n_saturated)


def plan_targets(model: KinematicModel, plan: TrajectoryPlan,
                 t: float) -> IkTargets:
    """Task targets the plan implies at time `t` (mode dependent)."""
    feet = plan.feet_plan.positions_at(t)
    com = plan.com.eval(t)[0]
    if plan.mode == MODE_PAYLOAD:
        arms = np.array([path.eval(t)[0] for path in plan.arm_paths])
        return IkTargets(feet=feet, com=com, posture=model.q_nominal,
                         arms=arms)
    masses = np.zeros(N_ARMS)
    for p in plan.payloads:
        masses[p.arm] += p.mass
    return IkTargets(feet=feet, com=com, posture=model.q_nominal,
                     arms_body=plan.consts.nominal_arm_offsets.copy(),
                     payload_masses=masses)


@dataclass
class IkTrajectory:
    """Joint-space realization of a plan with per-sample diagnostics."""

    times: np.ndarray           # (n,)
    q: np.ndarray               # (n, n_q)
    qdot: np.ndarray            # (n, n_q), applied step velocity
    base_pos: np.ndarray        # (n, 3)
    base_rot: np.ndarray        # (n, 3, 3)
    manipulability: np.ndarray  # (4, n) per-leg metric
    stance: np.ndarray          # (4, n) contact flags from the plan
    feet_err: np.ndarray        # (4, n)
    com_err: np.ndarray         # (n,)
    arm_err: np.ndarray         # (2, n)
    lin_err1: np.ndarray        # (n,)
    n_saturated: np.ndarray     # (n,)
    diverged: bool
    divergence_time: float | None
    mode: str

    @property
    def n_samples(self) -> int:
        return len(self.times)

    def state_at(self, k: int) -> RobotState:
        return RobotState(self.base_pos[k], self.base_rot[k], self.q[k])

    def min_manipulability(self) -> np.ndarray:
        """Per-leg minimum over all samples."""
        return self.manipulability.min(axis=1)

    def min_swing_manipulability(self) -> np.ndarray:
        """Per-leg minimum over swing samples (nan if a leg never swings)."""
        out = np.full(N_FEET, np.nan)
        for i in range(N_FEET):
            swing = ~self.stance[i]
            if np.any(swing):
                out[i] = float(self.manipulability[i, swing].min())
        return out


def ik_track(model: KinematicModel, plan: TrajectoryPlan, dt: float,
             damping: float = DLS_DAMPING, settle_steps: int = 300,
             settle_tol: float = 1e-9, divergence_threshold: float = 2e-2,
             divergence_patience: int = 25,
             times: np.ndarray | None = None) -> IkTrajectory:
    """Track a plan with prioritized IK at period `dt`.

    The robot starts from the nominal posture, settles onto the initial
    targets, then steps through [start, end]. A level-1 error above
    `divergence_threshold` for `divergence_patience` consecutive samples
    flags the trajectory as diverged (reported, not silent).  `times`
    overrides the uniform sample grid (strictly increasing, starting at the
    plan start, inside the horizon); `dt` then only paces the settle phase.
    """
    if not dt > 0.0:
        raise TrackingError("dt must be positive")
    t0, t1 = plan.start_time, plan.end_time
    if t1 <= t0:
        raise TrackingError("plan horizon is empty")
    if times is not None:
        times = np.asarray(times, dtype=float)
        if times.ndim != 1 or len(times) < 2 or np.any(np.diff(times) <= 0.0):
            raise TrackingError("times must be strictly increasing")
        if abs(times[0] - t0) > 1e-9 or times[-1] > t1 + 1e-9:
            raise TrackingError("times must start at the plan start and "
                                "stay inside its horizon")

    targets0 = plan_targets(model, plan, t0)
    # place the nominal posture so the tracked CoM starts on target
    state = model.nominal_state()
    com0 = _tracked_com(model, state, targets0.payload_masses)[0]
    state = RobotState(state.base_pos + (targets0.com - com0),
                       state.base_rot, state.q)
    for _ in range(settle_steps):
        res = ik_step(model, state, targets0, dt, damping)
        state = res.state
        if max(float(res.feet_err.max()), res.com_err) < settle_tol:
            break

    if times is None:
        n_steps = int(np.ceil((t1 - t0) / dt - 1e-9))
        times = np.minimum(t0 + dt * np.arange(n_steps + 1), t1)
    n = len(times)
    traj = IkTrajectory(
        times=times, q=np.empty((n, model.n_q)),
        qdot=np.zeros((n, model.n_q)), base_pos=np.empty((n, 3)),
        base_rot=np.empty((n, 3, 3)), manipulability=np.empty((N_FEET, n)),
        stance=np.empty((N_FEET, n), dtype=bool),
        feet_err=np.empty((N_FEET, n)), com_err=np.empty(n),
        arm_err=np.empty((N_ARMS, n)), lin_err1=np.empty(n),
        n_saturated=np.zeros(n, dtype=int), diverged=False,
        divergence_time=None, mode=plan.mode)

    def record(k, state, res):
        traj.q[k] = state.q
        traj.base_pos[k] = state.base_pos
        traj.base_rot[k] = state.base_rot
        for i, leg in enumerate(model.legs):
            traj.manipulability[i, k] = model.leg_manipulability(
                state.q, leg.name)
            traj.stance[i, k] = plan.schedule.in_stance(i, float(times[k]))
        traj.feet_err[:, k] = res.feet_err
        traj.com_err[k] = res.com_err
        traj.arm_err[:, k] = res.arm_err
        traj.lin_err1[k] = res.lin_err1
        traj.n_saturated[k] = res.n_saturated

    res0 = ik_step(model, state, targets0, dt, damping)
    state = res0.state
    record(0, state, res0)
    bad_run = 0
    for k in range(1, n):
        targets = plan_targets(model, plan, float(times[k]))
        step_dt = float(times[k] - times[k - 1])
        res = ik_step(model, state, targets, step_dt, damping)
        traj.qdot[k] = (res.state.q - state.q) / step_dt
        state = res.state
        record(k, state, res)
        level1 = max(float(res.feet_err.max()), res.com_err)
        bad_run = bad_run + 1 if level1 > divergence_threshold else 0
        if bad_run >= divergence_patience and not traj.diverged:
            traj.diverged = True
            traj.divergence_time = float(times[k])
            warnings.warn(
                f"IK level-1 error {level1:.3g} m exceeded "
                f"{divergence_threshold} for {divergence_patience} "
                f"consecutive samples at t={times[k]:.2f}s",
                RuntimeWarning, stacklevel=2)
    return traj
