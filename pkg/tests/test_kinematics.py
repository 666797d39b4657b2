import numpy as np
import pytest
import yaml
from hypothesis import given, settings
from hypothesis import strategies as st

from loadwalk.kinematics import (ChainError, KinematicModel, RobotState,
                                 project_so3, rotation_about, so3_exp)
from loadwalk.srbd import RobotConstants

THIGH, SHANK = 0.40, 0.41


@pytest.fixture(scope="module")
def model():
    return KinematicModel.default()


def random_state(model, rng, rot=True):
    lo, hi = model.lower_limits, model.upper_limits
    # stay clear of the limits so FD perturbations remain valid
    q = lo + (0.1 + 0.8 * rng.random(model.n_q)) * (hi - lo)
    base_pos = rng.standard_normal(3)
    base_rot = so3_exp(0.6 * rng.standard_normal(3)) if rot else np.eye(3)
    return RobotState(base_pos=base_pos, base_rot=base_rot, q=q)


class TestLoad:
    def test_default_structure(self, model):
        assert [l.name for l in model.legs] == ["LF", "RF", "LH", "RH"]
        assert [l.name for l in model.arms] == ["LA", "RA"]
        assert all(l.dof == 3 for l in model.legs)
        assert all(l.dof == 6 for l in model.arms)
        assert model.n_q == 24
        assert model.n_v == 30

    def test_total_mass_matches_reduced_model(self, model):
        assert model.total_mass == pytest.approx(RobotConstants().mass)

    def test_slices_disjoint_and_contiguous(self, model):
        seen = np.zeros(model.n_q, dtype=int)
        for limb in model.limbs:
            seen[model.limb_slice(limb.name)] += 1
        assert np.all(seen == 1)

    def test_limits_finite_and_nominal_inside(self, model):
        lo, hi = model.lower_limits, model.upper_limits
        assert np.all(np.isfinite(lo)) and np.all(np.isfinite(hi))
        qn = model.q_nominal
        assert np.all(qn >= lo) and np.all(qn <= hi)

    def test_rejects_unknown_key(self, tmp_path):
        raw = open_default()
        raw["limbs"][0]["spring"] = 1.0
        path = tmp_path / "robot.yaml"
        path.write_text(yaml.safe_dump(raw))
        with pytest.raises(ChainError, match="LF.*unknown keys.*spring"):
            KinematicModel.load(path)

    def test_rejects_infinite_limit(self, tmp_path):
        raw = open_default()
        raw["limbs"][0]["joints"][1]["upper"] = float("inf")
        path = tmp_path / "robot.yaml"
        path.write_text(yaml.safe_dump(raw))
        with pytest.raises(ChainError, match="finite"):
            KinematicModel.load(path)

    def test_rejects_nominal_outside_limits(self, tmp_path):
        raw = open_default()
        raw["limbs"][2]["joints"][2]["nominal"] = 3.0
        path = tmp_path / "robot.yaml"
        path.write_text(yaml.safe_dump(raw))
        with pytest.raises(ChainError, match="nominal"):
            KinematicModel.load(path)

    def test_rejects_zero_axis(self, tmp_path):
        raw = open_default()
        raw["limbs"][4]["joints"][0]["axis"] = [0.0, 0.0, 0.0]
        path = tmp_path / "robot.yaml"
        path.write_text(yaml.safe_dump(raw))
        with pytest.raises(ChainError, match="axis"):
            KinematicModel.load(path)

    def test_rejects_missing_leg(self, tmp_path):
        raw = open_default()
        del raw["limbs"][3]
        path = tmp_path / "robot.yaml"
        path.write_text(yaml.safe_dump(raw))
        with pytest.raises(ChainError, match="4 legs"):
            KinematicModel.load(path)


def open_default():
    import importlib.resources
    ref = importlib.resources.files("loadwalk") / "robots" / \
        "default_quadruped.yaml"
    return yaml.safe_load(ref.read_text())


class TestCalibration:
    def test_nominal_feet_at_stance(self, model):
        fk = model.forward_kinematics(model.nominal_state())
        want = np.array([[0.35, 0.30, 0.0], [0.35, -0.30, 0.0],
                         [-0.35, 0.30, 0.0], [-0.35, -0.30, 0.0]])
        np.testing.assert_allclose(fk.feet, want, atol=1e-12)

    def test_nominal_hands_at_arm_offsets(self, model):
        state = model.nominal_state()
        fk = model.forward_kinematics(state)
        consts = RobotConstants()
        # base origin doubles as the reduced-model CoM reference point
        want = state.base_pos + consts.nominal_arm_offsets
        np.testing.assert_allclose(fk.arm_ee, want, atol=1e-12)

    def test_base_height_matches_com_reference(self, model):
        assert model.nominal_base_height == pytest.approx(
            RobotConstants().com_ref_offset[2])

    def test_knee_rotation_matches_planar_oracle(self, model):
        # two-link sagittal chain: haa = 0 keeps the leg in its xz-plane
        state = model.nominal_state()
        sl = model.limb_slice("LF")
        alpha = model.q_nominal[sl][1]
        hip = state.base_pos + np.array([0.35, 0.30, 0.0])
        for theta in (-0.9, -0.3, 0.2, 0.7):
            q = model.q_nominal
            q[sl.start + 2] = theta
            fk = model.forward_kinematics(
                RobotState(state.base_pos, np.eye(3), q))
            want = hip + np.array([
                -THIGH * np.sin(alpha) - SHANK * np.sin(alpha + theta),
                0.0,
                -THIGH * np.cos(alpha) - SHANK * np.cos(alpha + theta)])
            np.testing.assert_allclose(fk.feet[0], want, atol=1e-12)

    def test_hip_roll_rotates_foot_about_hip_x(self, model):
        state = model.nominal_state()
        sl = model.limb_slice("RH")
        hip = state.base_pos + np.array([-0.35, -0.30, 0.0])
        foot0 = model.forward_kinematics(state).feet[3]
        for theta in (-0.5, 0.25, 0.6):
            q = model.q_nominal
            q[sl.start] = theta
            fk = model.forward_kinematics(
                RobotState(state.base_pos, np.eye(3), q))
            want = hip + rotation_about([1.0, 0, 0], theta) @ (foot0 - hip)
            np.testing.assert_allclose(fk.feet[3], want, atol=1e-12)

    def test_out_of_limit_raises(self, model):
        q = model.q_nominal
        q[model.limb_slice("LF").start] = 0.9  # haa limit is 0.7
        with pytest.raises(ChainError, match="LF_haa"):
            model.forward_kinematics(RobotState(np.zeros(3), np.eye(3), q))

    def test_wrong_shape_raises(self, model):
        with pytest.raises(ChainError, match="shape"):
            model.forward_kinematics(
                RobotState(np.zeros(3), np.eye(3), np.zeros(7)))


class TestFrameInvariance:
    @settings(max_examples=25, deadline=None)
    @given(st.integers(0, 2**31 - 1), st.floats(-2.0, 2.0),
           st.floats(-2.0, 2.0), st.floats(-2.0, 2.0))
    def test_base_translation_shifts_all_frames(self, seed, dx, dy, dz):
        model = KinematicModel.default()
        rng = np.random.default_rng(seed)
        state = random_state(model, rng)
        d = np.array([dx, dy, dz])
        fk0 = model.forward_kinematics(state)
        fk1 = model.forward_kinematics(RobotState(
            state.base_pos + d, state.base_rot, state.q))
        np.testing.assert_allclose(fk1.feet, fk0.feet + d, atol=1e-12)
        np.testing.assert_allclose(fk1.arm_ee, fk0.arm_ee + d, atol=1e-12)
        np.testing.assert_allclose(fk1.com, fk0.com + d, atol=1e-12)

    def test_base_rotation_rotates_base_frame_chain(self, model):
        rng = np.random.default_rng(3)
        state = random_state(model, rng, rot=False)
        rot = so3_exp(rng.standard_normal(3))
        fk0 = model.forward_kinematics(
            RobotState(np.zeros(3), np.eye(3), state.q))
        fk1 = model.forward_kinematics(
            RobotState(state.base_pos, rot, state.q))
        for name in ("LF", "RF", "LH", "RH", "LA", "RA"):
            want = state.base_pos + rot @ fk0.ee[name]
            np.testing.assert_allclose(fk1.ee[name], want, atol=1e-12)

    def test_com_is_mass_weighted_average(self, model):
        # moving only the base must move the CoM by the base mass fraction
        rng = np.random.default_rng(11)
        state = random_state(model, rng, rot=False)
        # rebuild with every limb mass zeroed: com must sit at the base lump
        raw = open_default()
        for limb in raw["limbs"]:
            for j in limb["joints"]:
                j["mass"] = 0.0
        import tempfile
        from pathlib import Path
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / "robot.yaml"
            path.write_text(yaml.safe_dump(raw))
            base_only = KinematicModel.load(path)
        fk = base_only.forward_kinematics(state)
        np.testing.assert_allclose(fk.com, state.base_pos, atol=1e-12)


class TestJacobians:
    def fd_point(self, model, state, name, eps=1e-6):
        jac = np.zeros((3, model.n_v))
        for k in range(model.n_v):
            dv = np.zeros(model.n_v)
            dv[k] = 1.0
            plus = model.integrate(state, dv, eps)
            minus = model.integrate(state, dv, -eps)
            if name == "com":
                p1 = model.forward_kinematics(plus, validate=False).com
                p0 = model.forward_kinematics(minus, validate=False).com
            else:
                p1 = model.ee_position(plus, name)
                p0 = model.ee_position(minus, name)
            jac[:, k] = (p1 - p0) / (2 * eps)
        return jac

    @pytest.mark.parametrize("name", ["LF", "RH", "LA", "RA"])
    def test_point_jacobian_matches_fd(self, model, name):
        rng = np.random.default_rng(int.from_bytes(name.encode(), "little"))
        for _ in range(3):
            state = random_state(model, rng)
            jac = model.point_jacobian(state, name)
            fd = self.fd_point(model, state, name)
            np.testing.assert_allclose(jac, fd, rtol=1e-6, atol=1e-7)

    def test_com_jacobian_matches_fd(self, model):
        rng = np.random.default_rng(7)
        for _ in range(3):
            state = random_state(model, rng)
            jac = model.com_jacobian(state)
            fd = self.fd_point(model, state, "com")
            np.testing.assert_allclose(jac, fd, rtol=1e-6, atol=1e-7)


class TestManipulability:
    def test_straight_knee_is_singular(self, model):
        q = model.q_nominal
        sl = model.limb_slice("LF")
        q[sl] = [0.0, 0.4, 0.0]
        assert model.leg_manipulability(q, "LF") == pytest.approx(0.0,
                                                                  abs=1e-12)

    def test_nominal_posture_has_positive_w(self, model):
        for leg in ("LF", "RF", "LH", "RH"):
            assert model.leg_manipulability(model.q_nominal, leg) > 0.05

    def test_leg_subvector_matches_full_vector(self, model):
        q = model.q_nominal
        sl = model.limb_slice("RF")
        w_full = model.leg_manipulability(q, "RF")
        w_leg = model.leg_manipulability(q[sl], "RF")
        assert w_full == w_leg

    @settings(max_examples=25, deadline=None)
    @given(st.integers(0, 2**31 - 1))
    def test_invariant_under_base_motion(self, seed):
        # w computed from the world-frame Jacobian at any base pose must
        # agree with the base-relative metric
        model = KinematicModel.default()
        rng = np.random.default_rng(seed)
        state = random_state(model, rng)
        for leg in ("LF", "RH"):
            w = model.leg_manipulability(state.q, leg)
            sl = model.limb_slice(leg)
            cols = model.point_jacobian(state, leg)[:, 6 + sl.start:
                                                    6 + sl.stop]
            w_world = np.sqrt(max(np.linalg.det(cols @ cols.T), 0.0))
            assert w_world == pytest.approx(w, rel=1e-9, abs=1e-12)

    def test_arm_name_rejected(self, model):
        with pytest.raises(ChainError, match="not a leg"):
            model.leg_manipulability(model.q_nominal, "LA")


class TestIntegrate:
    def test_linear_and_joint_integration(self, model):
        state = model.nominal_state()
        vel = np.zeros(model.n_v)
        vel[0:3] = [0.1, -0.2, 0.3]
        vel[6] = 0.5
        new = model.integrate(state, vel, 0.2)
        np.testing.assert_allclose(
            new.base_pos, state.base_pos + [0.02, -0.04, 0.06], atol=1e-15)
        assert new.q[0] == pytest.approx(state.q[0] + 0.1)

    def test_rotation_stays_on_so3(self, model):
        rng = np.random.default_rng(5)
        state = model.nominal_state()
        for _ in range(200):
            vel = np.zeros(model.n_v)
            vel[3:6] = rng.standard_normal(3)
            state = model.integrate(state, vel, 0.05)
        rot = state.base_rot
        np.testing.assert_allclose(rot @ rot.T, np.eye(3), atol=1e-12)
        assert np.linalg.det(rot) == pytest.approx(1.0, abs=1e-12)

    def test_exp_matches_rodrigues(self):
        axis = np.array([0.0, 1.0, 0.0])
        np.testing.assert_allclose(so3_exp(axis * 0.7),
                                   rotation_about(axis, 0.7), atol=1e-15)

    def test_project_restores_orthonormality(self):
        rng = np.random.default_rng(9)
        noisy = so3_exp(rng.standard_normal(3)) + 1e-4 * rng.standard_normal(
            (3, 3))
        rot = project_so3(noisy)
        np.testing.assert_allclose(rot @ rot.T, np.eye(3), atol=1e-12)
