"""Terrain height and contact-frame queries.

Flat ground and a constant-pitch slope (rotation about the world y axis,
z = tan(pitch) * x).  Individual footholds may override the height, e.g. for
a platform step; overridden footholds keep a vertical contact normal.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class Terrain:
    kind: str = "flat"  # "flat" | "slope"
    slope_deg: float = 0.0

    def __post_init__(self):
        if self.kind not in ("flat", "slope"):
            raise ValueError(f"unknown terrain kind {self.kind!r}")
        if self.kind == "flat" and self.slope_deg != 0.0:
            raise ValueError("flat terrain cannot carry a slope angle")
        if abs(self.slope_deg) >= 60.0:
            raise ValueError("slope angle out of range")

    def height_at(self, x: float, y: float) -> float:
        if self.kind == "flat":
            return 0.0
        return math.tan(math.radians(self.slope_deg)) * x

    def frame_at(self, x: float, y: float) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Contact frame (normal, tangent_x, tangent_y) at the surface point."""
        if self.kind == "flat":
            return (np.array([0.0, 0.0, 1.0]),
                    np.array([1.0, 0.0, 0.0]),
                    np.array([0.0, 1.0, 0.0]))
        th = math.radians(self.slope_deg)
        normal = np.array([-math.sin(th), 0.0, math.cos(th)])
        t_x = np.array([math.cos(th), 0.0, math.sin(th)])
        t_y = np.array([0.0, 1.0, 0.0])
        return normal, t_x, t_y

    def normal_at(self, x: float, y: float) -> np.ndarray:
        return self.frame_at(x, y)[0]


FLAT = Terrain()
