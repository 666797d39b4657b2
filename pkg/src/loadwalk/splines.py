"""Trajectory parameterizations.

Cubic Hermite segments for end-effector paths, piecewise-linear force
profiles, and jerk-integrated center-of-mass splines.  All evaluation is
closed form; the squared-acceleration integral of a Hermite segment is
integrated termwise (the acceleration is linear in time, its square is a
quadratic polynomial).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

# Slack for endpoint evaluation under floating-point time accumulation.
_TIME_EPS = 1e-9


def _as_vec3(x) -> np.ndarray:
    v = np.asarray(x, dtype=float)
    if v.shape != (3,):
        raise ValueError(f"expected 3-vector, got shape {v.shape}")
    return v


@dataclass(frozen=True)
class HermiteSegment:
    """Cubic segment interpolating positions and velocities at both ends."""

    p0: np.ndarray
    v0: np.ndarray
    p1: np.ndarray
    v1: np.ndarray
    duration: float

    def __post_init__(self):
        object.__setattr__(self, "p0", _as_vec3(self.p0))
        object.__setattr__(self, "v0", _as_vec3(self.v0))
        object.__setattr__(self, "p1", _as_vec3(self.p1))
        object.__setattr__(self, "v1", _as_vec3(self.v1))
        if not self.duration > 0.0:
            raise ValueError(f"segment duration must be positive, got {self.duration}")

    def accel_endpoints(self) -> tuple[np.ndarray, np.ndarray]:
        """Acceleration at t=0 and t=duration; accel is linear between them."""
        T = self.duration
        d = self.p1 - self.p0
        a0 = (6.0 * d - T * (4.0 * self.v0 + 2.0 * self.v1)) / T**2
        a1 = (-6.0 * d + T * (2.0 * self.v0 + 4.0 * self.v1)) / T**2
        return a0, a1


def _clamp_time(t: float, duration: float) -> float:
    if t < -_TIME_EPS or t > duration + _TIME_EPS:
        raise ValueError(f"time {t} outside segment [0, {duration}]")
    return min(max(t, 0.0), duration)


def hermite_eval(seg: HermiteSegment, t: float) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Position, velocity, acceleration of `seg` at local time t in [0, duration]."""
    T = seg.duration
    t = _clamp_time(t, T)
    s = t / T
    # Hermite basis on [0, 1]; velocity rows carry a factor T, time derivatives 1/T.
    h00 = 2 * s**3 - 3 * s**2 + 1
    h10 = s**3 - 2 * s**2 + s
    h01 = -2 * s**3 + 3 * s**2
    h11 = s**3 - s**2
    p = h00 * seg.p0 + h10 * T * seg.v0 + h01 * seg.p1 + h11 * T * seg.v1
    d00 = 6 * s**2 - 6 * s
    d10 = 3 * s**2 - 4 * s + 1
    d01 = -6 * s**2 + 6 * s
    d11 = 3 * s**2 - 2 * s
    v = (d00 * seg.p0 + d10 * T * seg.v0 + d01 * seg.p1 + d11 * T * seg.v1) / T
    a0, a1 = seg.accel_endpoints()
    a = a0 + (a1 - a0) * s
    return p, v, a


def accel_sq_integral(segments) -> float:
    """Integral of squared acceleration norm over a list of Hermite segments.

    Per segment and axis the acceleration is a0 + (a1 - a0) t / T; squaring and
    integrating termwise gives T/3 (a0^2 + a0 a1 + a1^2).
    """
    total = 0.0
    for seg in segments:
        a0, a1 = seg.accel_endpoints()
        total += seg.duration / 3.0 * float(np.sum(a0 * a0 + a0 * a1 + a1 * a1))
    return total


@dataclass(frozen=True)
class PiecewiseHermite:
    """C1 piecewise-cubic curve through (time, position, velocity) knots."""

    times: np.ndarray  # (M,), strictly increasing
    positions: np.ndarray  # (M, 3)
    velocities: np.ndarray  # (M, 3)

    def __post_init__(self):
        times = np.asarray(self.times, dtype=float)
        pos = np.asarray(self.positions, dtype=float)
        vel = np.asarray(self.velocities, dtype=float)
        if times.ndim != 1 or len(times) < 2:
            raise ValueError("need at least two knots")
        if np.any(np.diff(times) <= 0.0):
            raise ValueError("knot times must be strictly increasing")
        if pos.shape != (len(times), 3) or vel.shape != (len(times), 3):
            raise ValueError("positions/velocities must be (M, 3)")
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "positions", pos)
        object.__setattr__(self, "velocities", vel)

    @property
    def start_time(self) -> float:
        return float(self.times[0])

    @property
    def end_time(self) -> float:
        return float(self.times[-1])

    def segment(self, k: int) -> HermiteSegment:
        return HermiteSegment(
            self.positions[k], self.velocities[k],
            self.positions[k + 1], self.velocities[k + 1],
            float(self.times[k + 1] - self.times[k]),
        )

    def segment_index(self, t: float) -> int:
        if t < self.times[0] - _TIME_EPS or t > self.times[-1] + _TIME_EPS:
            raise ValueError(f"time {t} outside [{self.times[0]}, {self.times[-1]}]")
        k = int(np.searchsorted(self.times, t, side="right")) - 1
        return min(max(k, 0), len(self.times) - 2)

    def eval(self, t: float) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        k = self.segment_index(t)
        return hermite_eval(self.segment(k), t - float(self.times[k]))

    def segments(self) -> list[HermiteSegment]:
        return [self.segment(k) for k in range(len(self.times) - 1)]


@dataclass(frozen=True)
class PwlProfile:
    """Piecewise-linear vector profile on a uniform knot grid."""

    knot_values: np.ndarray  # (N, 3)
    dt: float
    start_time: float = 0.0

    def __post_init__(self):
        vals = np.asarray(self.knot_values, dtype=float)
        if vals.ndim != 2 or vals.shape[1] != 3 or len(vals) < 1:
            raise ValueError("knot_values must be (N, 3) with N >= 1")
        if not self.dt > 0.0:
            raise ValueError("dt must be positive")
        object.__setattr__(self, "knot_values", vals)

    @property
    def end_time(self) -> float:
        return self.start_time + (len(self.knot_values) - 1) * self.dt

    def eval(self, t: float) -> np.ndarray:
        tau = t - self.start_time
        total = (len(self.knot_values) - 1) * self.dt
        if len(self.knot_values) == 1:
            if abs(tau) > _TIME_EPS:
                raise ValueError(f"time {t} outside single-knot profile")
            return self.knot_values[0].copy()
        tau = _clamp_time(tau, total)
        k = min(int(tau / self.dt), len(self.knot_values) - 2)
        s = tau / self.dt - k
        return (1.0 - s) * self.knot_values[k] + s * self.knot_values[k + 1]


def pwl_eval(profile: PwlProfile, t: float) -> np.ndarray:
    """Linear interpolation of `profile` at absolute time t."""
    return profile.eval(t)


@dataclass(frozen=True)
class ComSpline:
    """CoM trajectory: per-knot pos/vel/acc plus constant jerk per segment.

    Within segment k (local time s): a(s) = a_k + j_k s, and vel/pos are the
    corresponding quadratic/cubic integrals from the knot state.
    """

    positions: np.ndarray  # (N, 3)
    velocities: np.ndarray  # (N, 3)
    accelerations: np.ndarray  # (N, 3)
    jerks: np.ndarray  # (N-1, 3)
    dt: float
    start_time: float = 0.0

    def __post_init__(self):
        pos = np.asarray(self.positions, dtype=float)
        vel = np.asarray(self.velocities, dtype=float)
        acc = np.asarray(self.accelerations, dtype=float)
        jrk = np.asarray(self.jerks, dtype=float)
        n = len(pos)
        if n < 1 or pos.shape != (n, 3) or vel.shape != (n, 3) or acc.shape != (n, 3):
            raise ValueError("positions/velocities/accelerations must be (N, 3)")
        if jrk.shape != (max(n - 1, 0), 3):
            raise ValueError("jerks must be (N-1, 3)")
        if not self.dt > 0.0:
            raise ValueError("dt must be positive")
        for name, arr in (("positions", pos), ("velocities", vel),
                          ("accelerations", acc), ("jerks", jrk)):
            object.__setattr__(self, name, arr)

    @property
    def n_knots(self) -> int:
        return len(self.positions)

    @property
    def end_time(self) -> float:
        return self.start_time + (self.n_knots - 1) * self.dt

    def eval(self, t: float) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        tau = t - self.start_time
        total = (self.n_knots - 1) * self.dt
        if self.n_knots == 1:
            if abs(tau) > _TIME_EPS:
                raise ValueError(f"time {t} outside single-knot spline")
            return (self.positions[0].copy(), self.velocities[0].copy(),
                    self.accelerations[0].copy())
        tau = _clamp_time(tau, total)
        k = min(int(tau / self.dt), self.n_knots - 2)
        s = tau - k * self.dt
        r, v, a = self.positions[k], self.velocities[k], self.accelerations[k]
        j = self.jerks[k]
        pos = r + v * s + 0.5 * a * s**2 + j * s**3 / 6.0
        vel = v + a * s + 0.5 * j * s**2
        acc = a + j * s
        return pos, vel, acc
