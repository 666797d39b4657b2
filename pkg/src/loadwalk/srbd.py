"""Single rigid body dynamics with point-mass payloads at the arm hands.

The robot is a single rigid body of mass m at its center of mass r, driven
by gravity and the contact forces at four feet and two arm end-effectors:

    m r_ddot = m g + sum_i f_i
    L_dot    = sum_i (p_i - r) x f_i = 0        (angular momentum rate kept zero)

Each carried payload is a point mass rigidly attached at one arm hand; the
force the payload exerts on the arm is the reaction of the arm force on the
payload, so

    m_pay p_ddot = m_pay g - f_arm .
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

GRAVITY = np.array([0.0, 0.0, -9.81])

N_FEET = 4
N_ARMS = 2
N_CONTACTS = N_FEET + N_ARMS

FOOT_NAMES = ("LF", "RF", "LH", "RH")
ARM_NAMES = ("left_arm", "right_arm")


@dataclass(frozen=True)
class ComState:
    """Center of mass position, velocity, acceleration in world frame."""

    position: np.ndarray
    velocity: np.ndarray
    acceleration: np.ndarray

    def __post_init__(self):
        for name in ("position", "velocity", "acceleration"):
            v = np.asarray(getattr(self, name), dtype=float)
            if v.shape != (3,):
                raise ValueError(f"{name} must be a 3-vector")
            object.__setattr__(self, name, v)


@dataclass(frozen=True)
class EndEffectorSet:
    """Snapshot of all six contact points: 4 feet then 2 arm hands.

    Forces are the forces acting ON the robot.  Swing feet must carry zero
    force; the contact flag order matches the position rows.
    """

    feet_positions: np.ndarray  # (4, 3)
    arm_positions: np.ndarray  # (2, 3)
    forces: np.ndarray  # (6, 3), feet rows first
    contact_flags: np.ndarray  # (6,) bool

    def __post_init__(self):
        feet = np.asarray(self.feet_positions, dtype=float)
        arms = np.asarray(self.arm_positions, dtype=float)
        forces = np.asarray(self.forces, dtype=float)
        flags = np.asarray(self.contact_flags, dtype=bool)
        if feet.shape != (N_FEET, 3):
            raise ValueError("feet_positions must be (4, 3)")
        if arms.shape != (N_ARMS, 3):
            raise ValueError("arm_positions must be (2, 3)")
        if forces.shape != (N_CONTACTS, 3):
            raise ValueError("forces must be (6, 3)")
        if flags.shape != (N_CONTACTS,):
            raise ValueError("contact_flags must be (6,)")
        swing = ~flags
        if np.any(np.abs(forces[swing]) > 0.0):
            raise ValueError("swing contacts must carry exactly zero force")
        object.__setattr__(self, "feet_positions", feet)
        object.__setattr__(self, "arm_positions", arms)
        object.__setattr__(self, "forces", forces)
        object.__setattr__(self, "contact_flags", flags)

    @property
    def positions(self) -> np.ndarray:
        return np.vstack([self.feet_positions, self.arm_positions])


@dataclass(frozen=True)
class PayloadSpec:
    """Point-mass payload rigidly held by one arm (0 = left, 1 = right)."""

    mass: float
    arm: int

    def __post_init__(self):
        if self.mass < 0.0:
            raise ValueError(f"payload mass must be >= 0, got {self.mass}")
        if self.arm not in (0, 1):
            raise ValueError(f"arm index must be 0 or 1, got {self.arm}")

    @property
    def weight(self) -> np.ndarray:
        return self.mass * GRAVITY


@dataclass(frozen=True)
class RobotConstants:
    """Rigid-body parameters of the reduced model."""

    mass: float = 113.0
    gravity: np.ndarray = field(default_factory=lambda: GRAVITY.copy())
    com_ref_offset: np.ndarray = field(
        default_factory=lambda: np.array([0.0, 0.0, 0.55]))
    # Nominal arm hand offsets relative to the CoM, left then right.
    nominal_arm_offsets: np.ndarray = field(
        default_factory=lambda: np.array([[0.45, 0.25, -0.10],
                                          [0.45, -0.25, -0.10]]))

    def __post_init__(self):
        if not self.mass > 0.0:
            raise ValueError("mass must be positive")
        g = np.asarray(self.gravity, dtype=float)
        if g.shape != (3,) or g[0] != 0.0 or g[1] != 0.0 or g[2] >= 0.0:
            raise ValueError("gravity must be (0, 0, g_z) with g_z < 0")
        object.__setattr__(self, "gravity", g)
        object.__setattr__(self, "com_ref_offset",
                           np.asarray(self.com_ref_offset, dtype=float))
        off = np.asarray(self.nominal_arm_offsets, dtype=float)
        if off.shape != (N_ARMS, 3):
            raise ValueError("nominal_arm_offsets must be (2, 3)")
        object.__setattr__(self, "nominal_arm_offsets", off)


def srbd_residual(state: ComState, ees: EndEffectorSet,
                  consts: RobotConstants) -> np.ndarray:
    """Dynamics residual (6,): linear then angular; zero iff dynamics hold.

    linear:  m r_ddot - m g - sum_i f_i
    angular: -sum_i (p_i - r) x f_i      (angular momentum rate must vanish)
    """
    m = consts.mass
    lin = m * state.acceleration - m * consts.gravity - self_force_sum(ees)
    rel = ees.positions - state.position
    ang = -np.sum(np.cross(rel, ees.forces), axis=0)
    return np.concatenate([lin, ang])


def self_force_sum(ees: EndEffectorSet) -> np.ndarray:
    return np.sum(ees.forces, axis=0)


def payload_residual(arm_accel, arm_force, payload: PayloadSpec,
                     gravity: np.ndarray = GRAVITY) -> np.ndarray:
    """Payload point-mass residual (3,): m_pay (p_ddot - g) + f_arm.

    `arm_force` is the contact force on the robot arm; the payload sees its
    reaction.  A zero-mass payload leaves the bare arm force as residual.
    """
    accel = np.asarray(arm_accel, dtype=float)
    force = np.asarray(arm_force, dtype=float)
    return payload.mass * (accel - np.asarray(gravity, dtype=float)) + force


def skew(v) -> np.ndarray:
    """Matrix form [v]_x of the cross product, skew(v) @ w = v x w."""
    x, y, z = np.asarray(v, dtype=float)
    return np.array([[0.0, -z, y],
                     [z, 0.0, -x],
                     [-y, x, 0.0]])
