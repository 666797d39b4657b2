"""Shared builders for tests: small scenario stand-ins and oracles."""

from types import SimpleNamespace

import numpy as np

from loadwalk.gait import GaitSpec, build_schedule, plan_feet
from loadwalk.pipeline import static_guess  # noqa: F401  shared solver seed
from loadwalk.srbd import PayloadSpec, RobotConstants
from loadwalk.terrain import FLAT, Terrain
from loadwalk.transcription import (MODE_LOCOMOTION, MODE_PAYLOAD,
                                    PlannerWeights)

NOMINAL_STANCE = np.array([[0.35, 0.30, 0.0],
                           [0.35, -0.30, 0.0],
                           [-0.35, 0.30, 0.0],
                           [-0.35, -0.30, 0.0]])


def make_scenario(mode=MODE_PAYLOAD, mass=113.0, payload=10.0, dt=0.2,
                  weights=None, terrain=None, **weight_kw):
    payloads = () if payload == 0.0 else (PayloadSpec(payload, 0),
                                          PayloadSpec(payload, 1))
    return SimpleNamespace(
        constants=RobotConstants(mass=mass),
        weights=weights or PlannerWeights(**weight_kw),
        terrain=terrain or FLAT,
        payloads=payloads,
        mode=mode,
        dt=dt)


def standing_plan(total_time=2.0, stance=None, terrain=None):
    gait = GaitSpec(cycles=0, total_time=total_time)
    stance = NOMINAL_STANCE if stance is None else stance
    return plan_feet(gait, stance, terrain or FLAT)


def walking_plan(total_time=13.0, stride=(0.25, 0.0, 0.0), terrain=None,
                 stance=None, **gait_kw):
    gait = GaitSpec(stride=np.asarray(stride, float), total_time=total_time,
                    **gait_kw)
    stance = NOMINAL_STANCE if stance is None else stance
    return plan_feet(gait, stance, terrain or FLAT)


def synthetic_plan(mode=MODE_PAYLOAD, total_time=2.0, payload=10.0,
                   com_travel=(0.0, 0.0, 0.0), feet=None):
    """Hand-built TrajectoryPlan: linear CoM drift, arms riding along.

    Bypasses the solver so tracking tests stay fast. Knot force arrays
    are zeros; they are not consumed by kinematic tracking.
    """
    from loadwalk.splines import ComSpline, PiecewiseHermite, PwlProfile
    from loadwalk.transcription import TrajectoryPlan

    scen = make_scenario(mode=mode, payload=payload)
    consts = scen.constants
    if feet is None:
        feet = standing_plan(total_time)
    dt = scen.dt
    n = int(round(total_time / dt)) + 1
    times = dt * np.arange(n)
    travel = np.asarray(com_travel, dtype=float)
    vel = travel / total_time
    com0 = consts.com_ref_offset
    com_pos = com0 + np.outer(times, vel)
    com_vel = np.tile(vel, (n, 1))
    com = ComSpline(com_pos, com_vel, np.zeros((n, 3)),
                    np.zeros((n - 1, 3)), dt)
    stance = np.array([[feet.schedule.in_stance(i, float(t)) for t in times]
                       for i in range(4)])
    zeros = np.zeros((n, 3))
    if mode == MODE_PAYLOAD:
        arm_paths = tuple(
            PiecewiseHermite(times, com_pos + consts.nominal_arm_offsets[i],
                             com_vel) for i in range(2))
    else:
        arm_paths = ()
    arm_forces = tuple(PwlProfile(zeros, dt) for _ in range(len(arm_paths)))
    return TrajectoryPlan(
        dt=dt, times=times, mode=mode, com=com, feet_plan=feet,
        schedule=feet.schedule, stance=stance,
        feet_forces=tuple(PwlProfile(zeros, dt) for _ in range(4)),
        arm_paths=arm_paths, arm_forces=arm_forces,
        payloads=scen.payloads, consts=consts,
        com_pos=com_pos, com_vel=com_vel, com_acc=np.zeros((n, 3)),
        jerks=np.zeros((n - 1, 3)),
        foot_force_knots=np.zeros((4, n, 3)),
        arm_pos_knots=np.zeros((2, n, 3)), arm_vel_knots=np.zeros((2, n, 3)),
        arm_force_knots=np.zeros((2, n, 3)))


def fd_jacobian(fun, x, h=1e-6):
    """Dense central finite-difference Jacobian of fun: R^n -> R^m."""
    x = np.asarray(x, dtype=float)
    f0 = np.asarray(fun(x))
    J = np.zeros((len(f0), len(x)))
    for i in range(len(x)):
        e = np.zeros_like(x)
        e[i] = h
        J[:, i] = (np.asarray(fun(x + e)) - np.asarray(fun(x - e))) / (2 * h)
    return J


