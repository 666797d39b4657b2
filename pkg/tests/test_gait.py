"""Contact schedule and swing trajectory properties."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from loadwalk.gait import (ContactSchedule, FeetPlan, GaitError, GaitSpec,
                           build_schedule, plan_feet)
from loadwalk.terrain import FLAT, Terrain

STANCE0 = np.array([[0.35, 0.30, 0.0],
                    [0.35, -0.30, 0.0],
                    [-0.35, 0.30, 0.0],
                    [-0.35, -0.30, 0.0]])


def default_gait(**kw):
    base = dict(pattern=("RH", "RF", "LH", "LF"), cycles=1,
                stride=np.array([0.25, 0.0, 0.0]), step_duration=1.5,
                dwell=0.2, lead_in=1.5, total_time=13.0, clearance=0.08)
    base.update(kw)
    return GaitSpec(**base)


class TestSchedule:
    def test_crawl_timing(self):
        sched = build_schedule(default_gait())
        # RH first: lift at lead_in, swings chained with dwells.
        expect = {3: (1.5, 3.0), 1: (3.2, 4.7), 2: (4.9, 6.4), 0: (6.6, 8.1)}
        for foot, window in expect.items():
            assert len(sched.swings[foot]) == 1
            np.testing.assert_allclose(sched.swings[foot][0], window,
                                       atol=1e-12)

    def test_stance_boundary_semantics(self):
        sched = build_schedule(default_gait())
        assert sched.in_stance(3, 1.5)  # lift-off instant is still stance
        assert not sched.in_stance(3, 2.0)
        assert sched.in_stance(3, 3.0)  # touch-down instant back in stance

    def test_three_feet_always_in_stance(self):
        sched = build_schedule(default_gait())
        for t in np.linspace(0.0, 13.0, 400):
            assert sched.stance_count(float(t)) >= 3

    def test_timing_overflow_rejected(self):
        with pytest.raises(GaitError):
            build_schedule(default_gait(total_time=5.0))

    def test_simultaneous_swings_rejected(self):
        with pytest.raises(GaitError):
            ContactSchedule(total_time=10.0,
                            swings=(((1.0, 3.0),), ((2.0, 4.0),), (), ()))

    def test_zero_steps(self):
        sched = build_schedule(default_gait(cycles=0))
        assert all(len(w) == 0 for w in sched.swings)
        assert sched.stance_count(5.0) == 4

    @given(st.floats(0.1, 2.0), st.floats(0.0, 0.5), st.floats(0.0, 2.0))
    @settings(max_examples=40, deadline=None)
    def test_schedule_always_crawls(self, step_duration, dwell, lead_in):
        gait = default_gait(step_duration=step_duration, dwell=dwell,
                            lead_in=lead_in, total_time=30.0)
        sched = build_schedule(gait)
        for t in np.linspace(0.0, 30.0, 301):
            assert sched.stance_count(float(t)) >= 3


class TestFeetPlan:
    def test_stance_exactly_constant(self):
        plan = plan_feet(default_gait(), STANCE0, FLAT)
        # Foot LF swings last (6.6-8.1); before that it must not move at all.
        for t in [0.0, 1.0, 3.3, 6.6]:
            p, v, _ = plan.trajectories[0].eval(t)
            np.testing.assert_array_equal(p, STANCE0[0])
            np.testing.assert_array_equal(v, np.zeros(3))

    def test_touchdown_at_stride(self):
        plan = plan_feet(default_gait(), STANCE0, FLAT)
        for foot in range(4):
            p = plan.position(foot, 13.0)
            np.testing.assert_allclose(p, STANCE0[foot] + [0.25, 0, 0],
                                       atol=1e-12)

    def test_zero_velocity_at_lift_and_touch(self):
        plan = plan_feet(default_gait(), STANCE0, FLAT)
        for foot, (lift, touch) in [(3, (1.5, 3.0)), (0, (6.6, 8.1))]:
            for t in (lift, touch):
                _, v, _ = plan.trajectories[foot].eval(t)
                np.testing.assert_allclose(v, np.zeros(3), atol=1e-12)

    def test_apex_clearance(self):
        gait = default_gait(clearance=0.08)
        plan = plan_feet(gait, STANCE0, FLAT)
        apex_t = 0.5 * (1.5 + 3.0)
        p, v, _ = plan.trajectories[3].eval(apex_t)
        assert p[2] == pytest.approx(0.08)
        assert v[2] == pytest.approx(0.0)
        # apex is the max height along the swing
        zs = [plan.position(3, float(t))[2] for t in np.linspace(1.5, 3.0, 200)]
        assert max(zs) <= 0.08 + 1e-9

    def test_slope_touchdown_height(self):
        # 10 degree downhill: touchdown z tracks tan(-10 deg) * x.
        terrain = Terrain(kind="slope", slope_deg=-10.0)
        stance = STANCE0.copy()
        stance[:, 2] = [terrain.height_at(x, y) for x, y, _ in STANCE0]
        gait = default_gait(stride=np.array([0.2, 0.0, 0.0]))
        plan = plan_feet(gait, stance, terrain)
        for foot in range(4):
            p = plan.position(foot, 13.0)
            assert p[2] == pytest.approx(math.tan(math.radians(-10.0)) * p[0])
        # each step drops tan(10 deg) * 0.2 = 0.035265 m
        drop = stance[3, 2] - plan.position(3, 13.0)[2]
        assert drop == pytest.approx(math.tan(math.radians(10.0)) * 0.2,
                                     abs=1e-12)

    def test_foothold_height_override(self):
        gait = default_gait(foothold_heights=(0.3, None, None, None))
        plan = plan_feet(gait, STANCE0, FLAT)
        assert plan.position(3, 13.0)[2] == pytest.approx(0.3)  # RH steps first
        assert plan.position(1, 13.0)[2] == pytest.approx(0.0)

    def test_mean_position_uses_all_feet(self):
        plan = plan_feet(default_gait(), STANCE0, FLAT)
        np.testing.assert_allclose(plan.mean_position(0.0),
                                   STANCE0.mean(axis=0), atol=1e-12)
        np.testing.assert_allclose(plan.mean_position(13.0),
                                   STANCE0.mean(axis=0) + [0.25, 0, 0],
                                   atol=1e-12)

    def test_lateral_stride(self):
        gait = default_gait(stride=np.array([0.0, 0.25, 0.0]))
        plan = plan_feet(gait, STANCE0, FLAT)
        p = plan.position(2, 13.0)
        np.testing.assert_allclose(p, STANCE0[2] + [0, 0.25, 0], atol=1e-12)

    def test_multi_cycle(self):
        gait = default_gait(cycles=2, total_time=20.0)
        plan = plan_feet(gait, STANCE0, FLAT)
        for foot in range(4):
            np.testing.assert_allclose(plan.position(foot, 20.0),
                                       STANCE0[foot] + [0.5, 0, 0], atol=1e-12)
