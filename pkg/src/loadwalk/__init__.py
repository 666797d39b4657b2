"""Payload-aware trajectory optimization for quadruped mobile manipulators.

Plans single-rigid-body center-of-mass motion, contact forces and arm
end-effector trajectories for a quadruped carrying known point-mass payloads,
then maps plans to joint space with a task-priority differential IK tracker.
"""

__version__ = "0.1.0"

GRAVITY_Z = -9.81
