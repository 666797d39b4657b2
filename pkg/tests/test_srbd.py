"""Rigid-body and payload residual oracles: hand-derived static/dynamic cases."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from loadwalk.srbd import (GRAVITY, ComState, EndEffectorSet, PayloadSpec,
                           RobotConstants, payload_residual, skew,
                           srbd_residual)

FEET = np.array([[0.35, 0.30, 0.0],
                 [0.35, -0.30, 0.0],
                 [-0.35, 0.30, 0.0],
                 [-0.35, -0.30, 0.0]])
ARMS = np.array([[0.45, 0.25, 0.45],
                 [0.45, -0.25, 0.45]])


def static_state(r=(0.0, 0.0, 0.55)):
    return ComState(np.array(r), np.zeros(3), np.zeros(3))


class TestSrbdResidual:
    def test_static_equilibrium_symmetric(self):
        # 113 kg supported by four equal vertical forces, no arm load.
        consts = RobotConstants(mass=113.0)
        fz = 113.0 * 9.81 / 4.0
        forces = np.zeros((6, 3))
        forces[:4, 2] = fz
        ees = EndEffectorSet(FEET, ARMS, forces, np.array([1, 1, 1, 1, 0, 0], bool))
        res = srbd_residual(static_state(), ees, consts)
        np.testing.assert_allclose(res, np.zeros(6), atol=1e-10)

    def test_free_fall(self):
        consts = RobotConstants(mass=50.0)
        state = ComState(np.zeros(3), np.zeros(3), GRAVITY)
        ees = EndEffectorSet(FEET, ARMS, np.zeros((6, 3)), np.zeros(6, bool))
        res = srbd_residual(state, ees, consts)
        np.testing.assert_allclose(res, np.zeros(6), atol=1e-12)

    def test_perturbed_foot_force_moment(self):
        # Shift 10 N of vertical force from LF to RH: moment arms are the
        # foot offsets, so the residual picks up the unbalanced torque.
        consts = RobotConstants(mass=113.0)
        fz = 113.0 * 9.81 / 4.0
        forces = np.zeros((6, 3))
        forces[:4, 2] = fz
        forces[0, 2] -= 10.0
        forces[3, 2] += 10.0
        ees = EndEffectorSet(FEET, ARMS, forces, np.array([1, 1, 1, 1, 0, 0], bool))
        res = srbd_residual(static_state((0.0, 0.0, 0.55)), ees, consts)
        np.testing.assert_allclose(res[:3], np.zeros(3), atol=1e-10)
        # torque = sum (p_i - r) x f_i; residual is its negation.
        p_lf = FEET[0] - np.array([0.0, 0.0, 0.55])
        p_rh = FEET[3] - np.array([0.0, 0.0, 0.55])
        torque = np.cross(p_lf, [0, 0, -10.0]) + np.cross(p_rh, [0, 0, 10.0])
        np.testing.assert_allclose(res[3:], -torque, atol=1e-10)
        assert np.linalg.norm(res[3:]) > 1.0

    def test_payload_forces_enter_linear_balance(self):
        # Arms push down on the robot with the payload weight; feet carry
        # robot + payload weight in static balance.
        consts = RobotConstants(mass=113.0)
        m_pay = 10.0
        fz = (113.0 + 2 * m_pay) * 9.81 / 4.0
        forces = np.zeros((6, 3))
        forces[:4, 2] = fz
        forces[4:, 2] = -m_pay * 9.81
        # arms placed symmetrically about the CoM so moments also cancel
        state = static_state((0.45, 0.0, 0.45))
        feet = FEET + np.array([0.45, 0.0, 0.0])
        ees = EndEffectorSet(feet, ARMS, forces, np.ones(6, bool))
        res = srbd_residual(state, ees, consts)
        np.testing.assert_allclose(res, np.zeros(6), atol=1e-9)

    def test_swing_force_rejected(self):
        forces = np.zeros((6, 3))
        forces[1, 2] = 5.0
        with pytest.raises(ValueError):
            EndEffectorSet(FEET, ARMS, forces, np.array([1, 0, 1, 1, 0, 0], bool))

    @given(st.integers(0, 2**32 - 1))
    @settings(max_examples=25, deadline=None)
    def test_linear_row_matches_newton(self, seed):
        rng = np.random.default_rng(seed)
        consts = RobotConstants(mass=float(rng.uniform(20, 200)))
        forces = rng.normal(scale=100.0, size=(6, 3))
        state = ComState(rng.normal(size=3), rng.normal(size=3),
                         rng.normal(size=3))
        ees = EndEffectorSet(FEET, ARMS, forces, np.ones(6, bool))
        res = srbd_residual(state, ees, consts)
        expect = consts.mass * (state.acceleration - GRAVITY) - forces.sum(axis=0)
        np.testing.assert_allclose(res[:3], expect, rtol=1e-12, atol=1e-9)


class TestPayloadResidual:
    def test_static_hold(self):
        # 10 kg payload at rest: arm pushes down with the payload weight.
        pay = PayloadSpec(mass=10.0, arm=0)
        res = payload_residual(np.zeros(3), np.array([0.0, 0.0, -98.1]), pay)
        np.testing.assert_allclose(res, np.zeros(3), atol=1e-12)

    def test_lateral_acceleration(self):
        # f = (8, 0, -98.1) on the robot means the payload is pushed with
        # (-8, 0, 0), i.e. accelerates at -0.8 m/s^2 in x for 10 kg.
        pay = PayloadSpec(mass=10.0, arm=1)
        res = payload_residual(np.array([-0.8, 0.0, 0.0]),
                               np.array([8.0, 0.0, -98.1]), pay)
        np.testing.assert_allclose(res, np.zeros(3), atol=1e-12)

    def test_zero_mass_returns_force(self):
        pay = PayloadSpec(mass=0.0, arm=0)
        f = np.array([1.0, -2.0, 3.0])
        np.testing.assert_allclose(payload_residual(np.zeros(3), f, pay), f)

    def test_negative_mass_rejected(self):
        with pytest.raises(ValueError):
            PayloadSpec(mass=-1.0, arm=0)

    def test_bad_arm_index_rejected(self):
        with pytest.raises(ValueError):
            PayloadSpec(mass=1.0, arm=2)

    @given(st.floats(0.1, 50.0), st.integers(0, 2**32 - 1))
    @settings(max_examples=25, deadline=None)
    def test_force_recovers_acceleration(self, mass, seed):
        rng = np.random.default_rng(seed)
        accel = rng.normal(size=3)
        pay = PayloadSpec(mass=mass, arm=0)
        # Solve for the arm force that makes the residual vanish.
        f = -mass * (accel - GRAVITY)
        np.testing.assert_allclose(payload_residual(accel, f, pay),
                                   np.zeros(3), atol=1e-9)


class TestConstants:
    def test_gravity_must_point_down(self):
        with pytest.raises(ValueError):
            RobotConstants(gravity=np.array([0.0, 0.0, 9.81]))
        with pytest.raises(ValueError):
            RobotConstants(gravity=np.array([0.1, 0.0, -9.81]))

    def test_skew_matches_cross(self):
        rng = np.random.default_rng(3)
        a, b = rng.normal(size=3), rng.normal(size=3)
        np.testing.assert_allclose(skew(a) @ b, np.cross(a, b), atol=1e-14)
