"""Heuristic crawl gait: contact schedule and swing-foot trajectories.

Feet are moved one at a time in a fixed order; every swing covers one stride
in `step_duration` seconds with a dwell between consecutive swings, so at
least three feet stay in stance at all times.  Swing paths are piecewise
cubic: a single zero-end-velocity cubic in the ground plane, and a two-arc
vertical profile through an apex with the configured clearance.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .splines import PiecewiseHermite
from .srbd import FOOT_NAMES, N_FEET
from .terrain import Terrain


class GaitError(ValueError):
    """Invalid gait timing or contact schedule."""


@dataclass(frozen=True)
class GaitSpec:
    """Crawl parameters. `pattern` lists foot names in swing order."""

    pattern: tuple = ("RH", "RF", "LH", "LF")
    cycles: int = 1
    stride: np.ndarray = field(default_factory=lambda: np.array([0.25, 0.0, 0.0]))
    step_duration: float = 1.5
    dwell: float = 0.2
    lead_in: float = 1.5
    total_time: float = 13.0
    clearance: float = 0.08
    # Optional touchdown-height override per step (global step order);
    # None entries fall back to the terrain height.
    foothold_heights: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "pattern", tuple(self.pattern))
        object.__setattr__(self, "stride", np.asarray(self.stride, dtype=float))
        object.__setattr__(self, "foothold_heights", tuple(self.foothold_heights))
        for name in self.pattern:
            if name not in FOOT_NAMES:
                raise GaitError(f"unknown foot {name!r} in gait pattern")
        if self.cycles < 0:
            raise GaitError("cycles must be >= 0")
        if self.stride.shape != (3,):
            raise GaitError("stride must be a 3-vector")
        if not self.step_duration > 0.0:
            raise GaitError("step_duration must be positive")
        if self.dwell < 0.0 or self.lead_in < 0.0:
            raise GaitError("dwell and lead_in must be >= 0")
        if not self.total_time > 0.0:
            raise GaitError("total_time must be positive")
        if self.clearance < 0.0:
            raise GaitError("clearance must be >= 0")
        n_steps = len(self.pattern) * self.cycles
        if self.foothold_heights and len(self.foothold_heights) != n_steps:
            raise GaitError(
                f"foothold_heights needs one entry per step ({n_steps}), "
                f"got {len(self.foothold_heights)}")

    @property
    def n_steps(self) -> int:
        return len(self.pattern) * self.cycles

    def step_feet(self) -> list[int]:
        """Foot index for every step, in execution order."""
        order = [FOOT_NAMES.index(name) for name in self.pattern]
        return order * self.cycles


@dataclass(frozen=True)
class ContactSchedule:
    """Per-foot swing windows; a foot is in stance outside its windows.

    Swing is the open interval (lift_off, touch_down): at the boundary
    instants the foot still carries force, so piecewise-linear force
    profiles can ramp to zero inside the first swing segment.
    """

    total_time: float
    swings: tuple  # per foot: tuple of (lift_off, touch_down)

    def __post_init__(self):
        swings = tuple(tuple((float(a), float(b)) for a, b in foot)
                       for foot in self.swings)
        if len(swings) != N_FEET:
            raise GaitError("schedule needs one swing list per foot")
        object.__setattr__(self, "swings", swings)
        self.validate()

    def validate(self):
        intervals = []
        for foot, windows in enumerate(self.swings):
            prev_end = -np.inf
            for lift, touch in windows:
                if not (0.0 <= lift < touch <= self.total_time):
                    raise GaitError(
                        f"swing ({lift}, {touch}) of foot {FOOT_NAMES[foot]} "
                        f"outside [0, {self.total_time}]")
                if lift < prev_end:
                    raise GaitError(
                        f"overlapping swings for foot {FOOT_NAMES[foot]}")
                prev_end = touch
                intervals.append((lift, touch, foot))
        intervals.sort()
        for (l0, t0, f0), (l1, t1, f1) in zip(intervals, intervals[1:]):
            if l1 < t0:  # open-interval overlap: two feet in the air at once
                raise GaitError(
                    f"feet {FOOT_NAMES[f0]} and {FOOT_NAMES[f1]} swing "
                    f"simultaneously ({l1:.3f} < {t0:.3f}); need >= 3 in stance")

    def in_stance(self, foot: int, t: float) -> bool:
        # epsilon so knot times that land exactly on lift/touch instants
        # stay in stance despite floating-point accumulation
        return not any(lift + 1e-9 < t < touch - 1e-9
                       for lift, touch in self.swings[foot])

    def stance_flags(self, t: float) -> np.ndarray:
        return np.array([self.in_stance(i, t) for i in range(N_FEET)])

    def stance_count(self, t: float) -> int:
        return int(np.sum(self.stance_flags(t)))


def build_schedule(gait: GaitSpec) -> ContactSchedule:
    """Lay out the crawl swings sequentially with dwells in between."""
    swings: list[list[tuple[float, float]]] = [[] for _ in range(N_FEET)]
    t = gait.lead_in
    for foot in gait.step_feet():
        lift, touch = t, t + gait.step_duration
        if touch > gait.total_time + 1e-9:
            raise GaitError(
                f"gait timing infeasible: swing ends at {touch:.3f} s but "
                f"total_time is {gait.total_time} s")
        swings[foot].append((lift, touch))
        t = touch + gait.dwell
    return ContactSchedule(total_time=gait.total_time,
                           swings=tuple(tuple(w) for w in swings))


@dataclass(frozen=True)
class FeetPlan:
    """Reference foot trajectories plus the schedule they realize."""

    trajectories: tuple  # 4 x PiecewiseHermite over [0, total_time]
    schedule: ContactSchedule

    def position(self, foot: int, t: float) -> np.ndarray:
        return self.trajectories[foot].eval(t)[0]

    def positions_at(self, t: float) -> np.ndarray:
        return np.array([self.position(i, t) for i in range(N_FEET)])

    def mean_position(self, t: float) -> np.ndarray:
        # All four feet contribute regardless of contact state.
        return self.positions_at(t).mean(axis=0)


def plan_feet(gait: GaitSpec, initial_stance: np.ndarray,
              terrain: Terrain) -> FeetPlan:
    """Swing trajectories for every foot; stance phases exactly constant.

    Touchdown targets are start + stride in the plane, at terrain height
    (or the per-step override).  The swing apex sits `clearance` above the
    higher of lift-off and touchdown.
    """
    initial_stance = np.asarray(initial_stance, dtype=float)
    if initial_stance.shape != (N_FEET, 3):
        raise GaitError("initial_stance must be (4, 3)")
    schedule = build_schedule(gait)
    heights = gait.foothold_heights or (None,) * gait.n_steps

    # Group (step_index, lift, touch) by foot, in time order.
    events: list[list[tuple[int, float, float]]] = [[] for _ in range(N_FEET)]
    t = gait.lead_in
    for step, foot in enumerate(gait.step_feet()):
        events[foot].append((step, t, t + gait.step_duration))
        t += gait.step_duration + gait.dwell

    trajectories = []
    for foot in range(N_FEET):
        times = [0.0]
        pos = [initial_stance[foot].copy()]
        vel = [np.zeros(3)]
        for step, lift, touch in events[foot]:
            p0 = pos[-1]
            target_xy = p0[:2] + gait.stride[:2]
            override = heights[step]
            z1 = (terrain.height_at(*target_xy) if override is None
                  else float(override))
            p1 = np.array([target_xy[0], target_xy[1], z1])
            apex_t = 0.5 * (lift + touch)
            apex = np.array([0.5 * (p0[0] + p1[0]), 0.5 * (p0[1] + p1[1]),
                             max(p0[2], p1[2]) + gait.clearance])
            # Mid-knot of the planar zero-end-velocity cubic: peak speed
            # 1.5 * distance / duration; vertical velocity zero at apex.
            apex_v = np.array([1.5 * (p1[0] - p0[0]) / gait.step_duration,
                               1.5 * (p1[1] - p0[1]) / gait.step_duration, 0.0])
            if lift > times[-1] + 1e-12:
                times.append(lift)
                pos.append(p0.copy())
                vel.append(np.zeros(3))
            times.extend([apex_t, touch])
            pos.extend([apex, p1])
            vel.extend([apex_v, np.zeros(3)])
        if times[-1] < gait.total_time - 1e-12:
            times.append(gait.total_time)
            pos.append(pos[-1].copy())
            vel.append(np.zeros(3))
        trajectories.append(PiecewiseHermite(np.array(times), np.array(pos),
                                             np.array(vel)))
    return FeetPlan(trajectories=tuple(trajectories), schedule=schedule)
