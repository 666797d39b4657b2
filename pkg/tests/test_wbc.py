import numpy as np
import pytest

from loadwalk.kinematics import KinematicModel, RobotState
from loadwalk.srbd import RobotConstants
from loadwalk.transcription import MODE_LOCOMOTION, MODE_PAYLOAD
from loadwalk.wbc import (IkTargets, TrackingError, ik_step, ik_track,
                          plan_targets)

from util import NOMINAL_STANCE, synthetic_plan, walking_plan


@pytest.fixture(scope="module")
def model():
    return KinematicModel.default()


def settled_standing(model, arms=True, payload_masses=None, steps=150):
    """Drive the nominal posture onto the standing targets."""
    consts = RobotConstants()
    targets = IkTargets(
        feet=NOMINAL_STANCE.copy(), com=consts.com_ref_offset.copy(),
        posture=model.q_nominal,
        arms=(consts.com_ref_offset + consts.nominal_arm_offsets
              if arms else None),
        payload_masses=payload_masses)
    state = model.nominal_state()
    for _ in range(steps):
        state = ik_step(model, state, targets, 0.02).state
    return state, targets


class TestIkStep:
    def test_converges_on_standing_targets(self, model):
        state, targets = settled_standing(model)
        res = ik_step(model, state, targets, 0.02)
        assert res.feet_err.max() < 1e-9
        assert res.com_err < 1e-9
        assert res.arm_err.max() < 1e-9

    def test_respects_velocity_limits_on_far_target(self, model):
        state, targets = settled_standing(model)
        far = IkTargets(feet=targets.feet, com=targets.com + [0.4, 0, 0],
                        posture=targets.posture, arms=targets.arms)
        res = ik_step(model, state, far, 0.02)
        dq = res.state.q - state.q
        assert np.all(np.abs(dq) <= model.velocity_limits * 0.02 + 1e-12)

    def test_respects_position_limits(self, model):
        state, targets = settled_standing(model)
        # command the posture toward a corner well outside the limits
        bad = IkTargets(feet=targets.feet + [[0, 0, 0.8]] * 4,
                        com=targets.com, posture=model.upper_limits + 1.0)
        for _ in range(100):
            state = ik_step(model, state, bad, 0.05).state
        assert np.all(state.q >= model.lower_limits - 1e-12)
        assert np.all(state.q <= model.upper_limits + 1e-12)

    def test_rejects_bad_dt(self, model):
        state, targets = settled_standing(model, steps=1)
        with pytest.raises(TrackingError):
            ik_step(model, state, targets, 0.0)


class TestPriorityOrdering:
    def test_unreachable_arm_leaves_level1_untouched(self, model):
        state, targets = settled_standing(model, arms=False)
        unreachable = IkTargets(
            feet=targets.feet, com=targets.com, posture=targets.posture,
            arms=np.array([[3.0, 1.0, 2.0], [3.0, -1.0, 2.0]]))
        for _ in range(80):
            r_with = ik_step(model, state, unreachable, 0.02)
            r_without = ik_step(model, state, targets, 0.02)
            # paired same-state steps: the arm task must not leak into the
            # level-1 rows of the applied velocity
            assert abs(r_with.lin_err1 - r_without.lin_err1) < 1e-9
            state = r_with.state
        # level-2 failure stays visible while level-1 keeps tracking; the
        # saturated arm creeps, so level 1 re-chases the moving CoM at
        # each step rather than settling to machine precision
        assert r_with.arm_err.min() > 0.5
        assert r_with.feet_err.max() < 1e-3
        assert r_with.com_err < 1e-3

    def test_arm_task_absent_gives_nan_error(self, model):
        state, targets = settled_standing(model, arms=False)
        res = ik_step(model, state, targets, 0.02)
        assert np.all(np.isnan(res.arm_err))
        assert np.isnan(res.lin_err2)


class TestTrackStanding:
    def test_payload_aware_standing_settles(self, model):
        plan = synthetic_plan(mode=MODE_PAYLOAD, total_time=1.0)
        traj = ik_track(model, plan, 0.02)
        assert not traj.diverged
        assert traj.feet_err.max() < 1e-4
        assert traj.com_err.max() < 1e-4
        assert traj.arm_err.max() < 1e-4
        assert np.all(traj.stance)
        assert np.all(np.isnan(traj.min_swing_manipulability()))
        assert np.all(traj.manipulability > 0.05)

    def test_limits_hold_at_every_sample(self, model):
        plan = synthetic_plan(mode=MODE_PAYLOAD, total_time=1.0,
                              com_travel=(0.1, 0.0, 0.0))
        traj = ik_track(model, plan, 0.02)
        lo, hi = model.lower_limits, model.upper_limits
        assert np.all(traj.q >= lo - 1e-12) and np.all(traj.q <= hi + 1e-12)
        assert np.all(np.abs(traj.qdot) <= model.velocity_limits + 1e-9)

    def test_loco_mode_tracks_combined_com(self, model):
        plan = synthetic_plan(mode=MODE_LOCOMOTION, total_time=1.0,
                              payload=10.0)
        traj = ik_track(model, plan, 0.02)
        assert not traj.diverged
        assert traj.com_err.max() < 1e-4
        # with 20 kg held forward of the body, the robot's own CoM must
        # sit behind the tracked point
        state = traj.state_at(traj.n_samples - 1)
        fk = model.forward_kinematics(state, validate=False)
        target = plan.com.eval(plan.end_time)[0]
        assert fk.com[0] < target[0] - 0.02
        # combined point on target: robot CoM plus hands-held masses
        combined = (model.total_mass * fk.com + 10.0 * fk.arm_ee.sum(axis=0))
        combined /= model.total_mass + 20.0
        np.testing.assert_allclose(combined, target, atol=1e-4)

    def test_loco_mode_keeps_carry_posture(self, model):
        plan = synthetic_plan(mode=MODE_LOCOMOTION, total_time=1.0)
        traj = ik_track(model, plan, 0.02)
        state = traj.state_at(traj.n_samples - 1)
        fk = model.forward_kinematics(state, validate=False)
        want = state.base_pos + \
            (state.base_rot @ plan.consts.nominal_arm_offsets.T).T
        np.testing.assert_allclose(fk.arm_ee, want, atol=1e-4)

    def test_payload_aware_vs_loco_base_shift(self, model):
        aware = ik_track(model, synthetic_plan(MODE_PAYLOAD, 1.0), 0.02)
        loco = ik_track(model, synthetic_plan(MODE_LOCOMOTION, 1.0), 0.02)
        # the combined-CoM regulation must pull the base backward
        assert loco.base_pos[-1, 0] < aware.base_pos[-1, 0] - 0.03

    def test_divergence_is_reported(self, model):
        plan = synthetic_plan(mode=MODE_PAYLOAD, total_time=1.0,
                              com_travel=(0.0, 0.0, 2.0))  # out of reach
        with pytest.warns(RuntimeWarning, match="level-1"):
            traj = ik_track(model, plan, 0.02, divergence_patience=10)
        assert traj.diverged
        assert traj.divergence_time is not None

    def test_rejects_bad_dt(self, model):
        plan = synthetic_plan(mode=MODE_PAYLOAD, total_time=1.0)
        with pytest.raises(TrackingError):
            ik_track(model, plan, -0.01)


class TestTrackWalking:
    def test_walk_tracks_and_logs_swing_manipulability(self, model):
        feet = walking_plan(total_time=9.0, cycles=1, stride=(0.2, 0, 0))
        plan = synthetic_plan(mode=MODE_PAYLOAD, total_time=9.0,
                              com_travel=(0.2, 0.0, 0.0), feet=feet)
        traj = ik_track(model, plan, 0.02)
        assert not traj.diverged
        assert traj.feet_err.max() < 5e-3
        assert traj.com_err.max() < 1e-3
        swing_min = traj.min_swing_manipulability()
        assert np.all(np.isfinite(swing_min))  # every leg swings once
        assert np.all(swing_min > 0.0)
        assert np.any(~traj.stance)

    def test_plan_targets_mode_dispatch(self, model):
        aware = synthetic_plan(MODE_PAYLOAD, 1.0)
        loco = synthetic_plan(MODE_LOCOMOTION, 1.0)
        t_aware = plan_targets(model, aware, 0.5)
        t_loco = plan_targets(model, loco, 0.5)
        assert t_aware.arms is not None and t_aware.payload_masses is None
        assert t_loco.arms is None
        np.testing.assert_allclose(t_loco.payload_masses, [10.0, 10.0])
        np.testing.assert_allclose(
            t_loco.arms_body, RobotConstants().nominal_arm_offsets)
