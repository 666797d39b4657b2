"""Kinematic chain model of a quadruped with two payload arms.

The robot is loaded from a chain-description YAML file: a floating base
plus serial limbs. Every joint is revolute and is described by its
rotation axis and fixed translational offset in the parent frame, its
position and velocity limits, a nominal posture value, and the mass of
the link that follows it (lumped at the link's distal frame origin).
The file shipped at robots/default_quadruped.yaml describes the default
113 kg platform with four 3-DoF legs and two 6-DoF arms.

Frames: the base pose is a world position plus rotation matrix. Joint
frame j has origin p_j = p_{j-1} + R_{j-1} @ offset_j and orientation
R_j = R_{j-1} @ Rot(axis_j, q_j); the end effector sits at ee_offset in
the last joint frame. Point Jacobians are taken with respect to the
generalized velocity [base linear, base angular (world), qdot].
"""

from __future__ import annotations

import importlib.resources
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import yaml

from .srbd import skew

N_LEGS = 4
N_ARMS = 2
DEFAULT_CHAIN_FILE = "default_quadruped.yaml"

_LIMIT_EPS = 1e-9


class ChainError(ValueError):
    """Malformed chain description or out-of-range configuration."""


@dataclass(frozen=True)
class Joint:
    """One revolute joint and the link that follows it."""

    name: str
    axis: np.ndarray
    offset: np.ndarray
    nominal: float
    lower: float
    upper: float
    vel_limit: float
    mass: float


@dataclass(frozen=True)
class Limb:
    name: str
    kind: str
    root_offset: np.ndarray
    ee_offset: np.ndarray
    joints: tuple[Joint, ...]

    @property
    def dof(self) -> int:
        return len(self.joints)


@dataclass(frozen=True)
class RobotState:
    """Floating-base pose plus the stacked joint vector."""

    base_pos: np.ndarray
    base_rot: np.ndarray
    q: np.ndarray


@dataclass(frozen=True)
class FkResult:
    feet: np.ndarray      # (4, 3) foot positions, legs in file order
    arm_ee: np.ndarray    # (2, 3) hand positions, left then right
    com: np.ndarray       # mass-weighted whole-body center of mass
    ee: dict              # end-effector position by limb name


def rotation_about(axis, angle: float) -> np.ndarray:
    """Rodrigues rotation about a unit axis."""
    k = skew(axis)
    return np.eye(3) + np.sin(angle) * k + (1.0 - np.cos(angle)) * (k @ k)


def so3_exp(rotvec) -> np.ndarray:
    rotvec = np.asarray(rotvec, dtype=float)
    angle = float(np.linalg.norm(rotvec))
    if angle < 1e-12:
        return np.eye(3) + skew(rotvec)
    return rotation_about(rotvec / angle, angle)


def so3_log(rot) -> np.ndarray:
    """Rotation vector of a rotation matrix (inverse of so3_exp)."""
    rot = np.asarray(rot, dtype=float)
    cos = (np.trace(rot) - 1.0) / 2.0
    angle = float(np.arccos(np.clip(cos, -1.0, 1.0)))
    if angle < 1e-9:
        # first order: vee of the skew part
        return 0.5 * np.array([rot[2, 1] - rot[1, 2],
                               rot[0, 2] - rot[2, 0],
                               rot[1, 0] - rot[0, 1]])
    if angle > np.pi - 1e-6:
        # near pi the skew part vanishes; recover the axis from R + I
        mat = (rot + np.eye(3)) / 2.0
        axis = np.sqrt(np.maximum(np.diag(mat), 0.0))
        k = int(np.argmax(axis))
        axis = mat[:, k] / max(axis[k], 1e-12)
        axis = axis / np.linalg.norm(axis)
        return angle * axis
    vee = 0.5 * np.array([rot[2, 1] - rot[1, 2],
                          rot[0, 2] - rot[2, 0],
                          rot[1, 0] - rot[0, 1]])
    return angle / np.sin(angle) * vee


def project_so3(mat) -> np.ndarray:
    """Nearest rotation matrix (polar projection via SVD)."""
    u, _, vt = np.linalg.svd(np.asarray(mat, dtype=float))
    d = np.sign(np.linalg.det(u @ vt))
    return u @ np.diag([1.0, 1.0, d]) @ vt


def _vec3(raw, where: str) -> np.ndarray:
    v = np.asarray(raw, dtype=float)
    if v.shape != (3,) or not np.all(np.isfinite(v)):
        raise ChainError(f"{where}: expected a finite 3-vector, got {raw!r}")
    return v


def _require_keys(entry: dict, required: set, optional: set, where: str):
    if not isinstance(entry, dict):
        raise ChainError(f"{where}: expected a mapping")
    keys = set(entry)
    missing = required - keys
    unknown = keys - required - optional
    if missing:
        raise ChainError(f"{where}: missing keys {sorted(missing)}")
    if unknown:
        raise ChainError(f"{where}: unknown keys {sorted(unknown)}")


def _parse_joint(entry: dict, where: str) -> Joint:
    _require_keys(entry, {"name", "axis", "offset", "nominal", "lower",
                          "upper", "vel_limit", "mass"}, set(), where)
    axis = _vec3(entry["axis"], f"{where}.axis")
    norm = np.linalg.norm(axis)
    if norm < 1e-9:
        raise ChainError(f"{where}: joint axis must be nonzero")
    lower = float(entry["lower"])
    upper = float(entry["upper"])
    nominal = float(entry["nominal"])
    vel = float(entry["vel_limit"])
    mass = float(entry["mass"])
    if not (np.isfinite(lower) and np.isfinite(upper)):
        raise ChainError(f"{where}: joint limits must be finite")
    if not lower < upper:
        raise ChainError(f"{where}: lower limit must be below upper")
    if not (lower - _LIMIT_EPS <= nominal <= upper + _LIMIT_EPS):
        raise ChainError(f"{where}: nominal value {nominal} outside limits")
    if not (np.isfinite(vel) and vel > 0.0):
        raise ChainError(f"{where}: vel_limit must be positive and finite")
    if not (np.isfinite(mass) and mass >= 0.0):
        raise ChainError(f"{where}: mass must be >= 0")
    return Joint(name=str(entry["name"]), axis=axis / norm,
                 offset=_vec3(entry["offset"], f"{where}.offset"),
                 nominal=nominal, lower=lower, upper=upper,
                 vel_limit=vel, mass=mass)


class KinematicModel:
    """Floating-base serial-limb robot built from a chain description."""

    def __init__(self, name: str, base_mass: float, base_com_offset,
                 nominal_base_height: float, limbs):
        self.name = name
        self.base_mass = float(base_mass)
        self.base_com_offset = _vec3(base_com_offset, "base.com_offset")
        self.nominal_base_height = float(nominal_base_height)
        self.limbs = tuple(limbs)
        if self.base_mass < 0.0:
            raise ChainError("base mass must be >= 0")
        names = [l.name for l in self.limbs]
        if len(set(names)) != len(names):
            raise ChainError("limb names must be unique")
        for limb in self.limbs:
            if limb.kind not in ("leg", "arm"):
                raise ChainError(f"limb {limb.name}: unknown kind {limb.kind}")
        self.legs = tuple(l for l in self.limbs if l.kind == "leg")
        self.arms = tuple(l for l in self.limbs if l.kind == "arm")
        if len(self.legs) != N_LEGS or len(self.arms) != N_ARMS:
            raise ChainError("model must have exactly 4 legs and 2 arms")
        self._slices = {}
        start = 0
        for limb in self.limbs:
            self._slices[limb.name] = slice(start, start + limb.dof)
            start += limb.dof
        self.n_q = start
        self.total_mass = self.base_mass + sum(
            j.mass for l in self.limbs for j in l.joints)

    # -- loading ---------------------------------------------------------

    @classmethod
    def load(cls, path) -> "KinematicModel":
        path = Path(path)
        try:
            raw = yaml.safe_load(path.read_text())
        except yaml.YAMLError as exc:
            raise ChainError(f"{path}: invalid YAML ({exc})") from exc
        _require_keys(raw, {"format_version", "name", "base",
                            "nominal_base_height", "limbs"}, set(), str(path))
        if int(raw["format_version"]) != 1:
            raise ChainError(f"{path}: unsupported format_version")
        _require_keys(raw["base"], {"mass", "com_offset"}, set(), "base")
        limbs = []
        if not isinstance(raw["limbs"], list) or not raw["limbs"]:
            raise ChainError("limbs: expected a non-empty list")
        for entry in raw["limbs"]:
            where = f"limb {entry.get('name', '?')}" \
                if isinstance(entry, dict) else "limb"
            _require_keys(entry, {"name", "kind", "root_offset", "ee_offset",
                                  "joints"}, set(), where)
            if not isinstance(entry["joints"], list) or not entry["joints"]:
                raise ChainError(f"{where}: joints must be a non-empty list")
            joints = tuple(
                _parse_joint(j, f"{where}.joint[{i}]")
                for i, j in enumerate(entry["joints"]))
            limbs.append(Limb(
                name=str(entry["name"]), kind=str(entry["kind"]),
                root_offset=_vec3(entry["root_offset"], f"{where}.root_offset"),
                ee_offset=_vec3(entry["ee_offset"], f"{where}.ee_offset"),
                joints=joints))
        return cls(name=str(raw["name"]), base_mass=raw["base"]["mass"],
                   base_com_offset=raw["base"]["com_offset"],
                   nominal_base_height=raw["nominal_base_height"],
                   limbs=limbs)

    @classmethod
    def default(cls) -> "KinematicModel":
        ref = importlib.resources.files("loadwalk") / "robots" / \
            DEFAULT_CHAIN_FILE
        with importlib.resources.as_file(ref) as path:
            return cls.load(path)

    # -- indexing and limits ---------------------------------------------

    def limb(self, name: str) -> Limb:
        for limb in self.limbs:
            if limb.name == name:
                return limb
        raise KeyError(name)

    def limb_slice(self, name: str) -> slice:
        return self._slices[name]

    @property
    def q_nominal(self) -> np.ndarray:
        return np.array([j.nominal for l in self.limbs for j in l.joints])

    @property
    def lower_limits(self) -> np.ndarray:
        return np.array([j.lower for l in self.limbs for j in l.joints])

    @property
    def upper_limits(self) -> np.ndarray:
        return np.array([j.upper for l in self.limbs for j in l.joints])

    @property
    def velocity_limits(self) -> np.ndarray:
        return np.array([j.vel_limit for l in self.limbs for j in l.joints])

    def joint_names(self) -> list:
        return [f"{l.name}_{j.name}" for l in self.limbs for j in l.joints]

    def nominal_state(self, base_pos=None) -> RobotState:
        if base_pos is None:
            base_pos = np.array([0.0, 0.0, self.nominal_base_height])
        return RobotState(base_pos=np.asarray(base_pos, dtype=float),
                          base_rot=np.eye(3), q=self.q_nominal)

    def check_limits(self, q: np.ndarray):
        q = np.asarray(q, dtype=float)
        if q.shape != (self.n_q,):
            raise ChainError(f"q must have shape ({self.n_q},), got {q.shape}")
        lo, hi = self.lower_limits, self.upper_limits
        bad = np.where((q < lo - _LIMIT_EPS) | (q > hi + _LIMIT_EPS))[0]
        if bad.size:
            names = self.joint_names()
            k = int(bad[0])
            raise ChainError(
                f"joint {names[k]} value {q[k]:.6f} outside "
                f"[{lo[k]}, {hi[k]}]")

    def clamp_to_limits(self, q: np.ndarray) -> np.ndarray:
        return np.clip(q, self.lower_limits, self.upper_limits)

    # -- forward kinematics ----------------------------------------------

    def _limb_frames(self, limb: Limb, q_limb, base_pos, base_rot):
        """Joint origins, world axes, link lump points, and EE position."""
        d = limb.dof
        origins = np.empty((d, 3))
        axes = np.empty((d, 3))
        p = base_pos + base_rot @ limb.root_offset
        rot = base_rot
        for j, (jnt, qj) in enumerate(zip(limb.joints, q_limb)):
            p = p + rot @ jnt.offset
            origins[j] = p
            axes[j] = rot @ jnt.axis
            rot = rot @ rotation_about(jnt.axis, qj)
        ee = p + rot @ limb.ee_offset
        lumps = np.empty((d, 3))
        lumps[:d - 1] = origins[1:]
        lumps[d - 1] = ee
        return origins, axes, lumps, ee

    def forward_kinematics(self, state: RobotState,
                           validate: bool = True) -> FkResult:
        if validate:
            self.check_limits(state.q)
        base_pos = np.asarray(state.base_pos, dtype=float)
        base_rot = np.asarray(state.base_rot, dtype=float)
        feet = np.empty((N_LEGS, 3))
        arm_ee = np.empty((N_ARMS, 3))
        ee_by_name = {}
        msum = self.base_mass * (base_pos + base_rot @ self.base_com_offset)
        leg_i = arm_i = 0
        for limb in self.limbs:
            q_limb = state.q[self._slices[limb.name]]
            _, _, lumps, ee = self._limb_frames(
                limb, q_limb, base_pos, base_rot)
            masses = np.array([j.mass for j in limb.joints])
            msum = msum + masses @ lumps
            ee_by_name[limb.name] = ee
            if limb.kind == "leg":
                feet[leg_i] = ee
                leg_i += 1
            else:
                arm_ee[arm_i] = ee
                arm_i += 1
        return FkResult(feet=feet, arm_ee=arm_ee,
                        com=msum / self.total_mass, ee=ee_by_name)

    def ee_position(self, state: RobotState, limb_name: str) -> np.ndarray:
        limb = self.limb(limb_name)
        q_limb = state.q[self._slices[limb_name]]
        return self._limb_frames(limb, q_limb, state.base_pos,
                                 state.base_rot)[3]

    # -- differential kinematics -----------------------------------------

    @property
    def n_v(self) -> int:
        """Generalized velocity dimension: 6 base DoF plus the joints."""
        return 6 + self.n_q

    def point_jacobian(self, state: RobotState, limb_name: str) -> np.ndarray:
        """Jacobian of the limb end effector wrt [v_base, omega, qdot]."""
        limb = self.limb(limb_name)
        sl = self._slices[limb_name]
        origins, axes, _, ee = self._limb_frames(
            limb, state.q[sl], state.base_pos, state.base_rot)
        jac = np.zeros((3, self.n_v))
        jac[:, 0:3] = np.eye(3)
        jac[:, 3:6] = -skew(ee - state.base_pos)
        cols = np.cross(axes, ee[None, :] - origins)
        jac[:, 6 + sl.start:6 + sl.stop] = cols.T
        return jac

    def com_jacobian(self, state: RobotState) -> np.ndarray:
        """Jacobian of the mass-weighted whole-body CoM."""
        jac = np.zeros((3, self.n_v))
        total = self.total_mass
        fk = self.forward_kinematics(state, validate=False)
        jac[:, 0:3] = np.eye(3)
        jac[:, 3:6] = -skew(fk.com - state.base_pos)
        for limb in self.limbs:
            sl = self._slices[limb.name]
            origins, axes, lumps, _ = self._limb_frames(
                limb, state.q[sl], state.base_pos, state.base_rot)
            masses = np.array([j.mass for j in limb.joints])
            for j in range(limb.dof):
                # joint j moves every lump from link j outward
                weighted = masses[j:] @ (lumps[j:] - origins[j]) / total
                jac[:, 6 + sl.start + j] = np.cross(axes[j], weighted)
        return jac

    def leg_manipulability(self, q: np.ndarray, leg_name: str) -> float:
        """w = sqrt(det(J_u J_u^T)) of the base-relative foot Jacobian.

        J_u is the linear foot Jacobian wrt the leg joints with the base
        held fixed, so the metric is invariant under base motion. A fully
        extended (straight-knee) leg is singular and yields w = 0.
        """
        limb = self.limb(leg_name)
        if limb.kind != "leg":
            raise ChainError(f"{leg_name} is not a leg")
        sl = self._slices[leg_name]
        q = np.asarray(q, dtype=float)
        q_limb = q[sl] if q.shape == (self.n_q,) else q
        if q_limb.shape != (limb.dof,):
            raise ChainError(
                f"expected full q ({self.n_q},) or leg q ({limb.dof},)")
        origins, axes, _, ee = self._limb_frames(
            limb, q_limb, np.zeros(3), np.eye(3))
        jac = np.cross(axes, ee[None, :] - origins).T
        if jac.shape[0] == jac.shape[1]:
            # sqrt(det(J J^T)) = |det J| for square J, computed without
            # squaring the conditioning
            return float(abs(np.linalg.det(jac)))
        gram = jac @ jac.T
        return float(np.sqrt(max(np.linalg.det(gram), 0.0)))

    # -- integration -------------------------------------------------------

    def integrate(self, state: RobotState, vel: np.ndarray,
                  dt: float) -> RobotState:
        """Step the state by a generalized velocity [v, omega, qdot].

        The angular velocity is taken in world frame; the base rotation is
        re-projected onto SO(3) to stop drift over long rollouts.
        """
        vel = np.asarray(vel, dtype=float)
        if vel.shape != (self.n_v,):
            raise ChainError(f"velocity must have shape ({self.n_v},)")
        base_pos = state.base_pos + vel[0:3] * dt
        base_rot = project_so3(so3_exp(vel[3:6] * dt) @ state.base_rot)
        return RobotState(base_pos=base_pos, base_rot=base_rot,
                          q=state.q + vel[6:] * dt)
