"""Pinhole cameras and rigid poses.

Cameras look down +z.  Pixel (row i, col j) has the ray direction
``normalize(((j + 0.5 - cx) / fx, (i + 0.5 - cy) / fy, 1))`` through its
center.  Depth maps are z-depth in meters with 0 marking invalid pixels.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import rotation


@dataclass(frozen=True)
class PinholeCamera:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValueError("principal point must lie inside the image")

    def pixel_rays(self, rows: np.ndarray, cols: np.ndarray) -> np.ndarray:
        """Unit ray directions through the given pixel centers, (N, 3)."""
        d = np.stack(
            [
                (np.asarray(cols) + 0.5 - self.cx) / self.fx,
                (np.asarray(rows) + 0.5 - self.cy) / self.fy,
                np.ones_like(np.asarray(cols, dtype=np.float64)),
            ],
            axis=-1,
        )
        return d / np.linalg.norm(d, axis=-1, keepdims=True)

    def to_dict(self) -> dict:
        return {
            "fx": self.fx,
            "fy": self.fy,
            "cx": self.cx,
            "cy": self.cy,
            "width": self.width,
            "height": self.height,
        }

    @staticmethod
    def from_dict(d: dict) -> "PinholeCamera":
        return PinholeCamera(
            fx=float(d["fx"]),
            fy=float(d["fy"]),
            cx=float(d["cx"]),
            cy=float(d["cy"]),
            width=int(d["width"]),
            height=int(d["height"]),
        )


@dataclass(frozen=True)
class Pose:
    """Rigid transform child -> parent: x_parent = R(q) x_child + t."""

    position: np.ndarray = field(default_factory=lambda: np.zeros(3))
    orientation: np.ndarray = field(default_factory=lambda: np.array([1.0, 0, 0, 0]))

    def __post_init__(self):
        p = np.asarray(self.position, dtype=np.float64).reshape(3).copy()
        q = rotation.check_normalized(
            np.asarray(self.orientation, dtype=np.float64).reshape(4)
        ).copy()
        p.flags.writeable = False
        q.flags.writeable = False
        object.__setattr__(self, "position", p)
        object.__setattr__(self, "orientation", q)

    def transform(self, pts: np.ndarray) -> np.ndarray:
        return rotation.rotate(self.orientation, pts) + self.position

    def inverse_transform(self, pts: np.ndarray) -> np.ndarray:
        return rotation.rotate_inv(self.orientation, np.asarray(pts) - self.position)

    def inverse(self) -> "Pose":
        q_inv = rotation.conjugate(self.orientation)
        return Pose(-rotation.rotate(q_inv, self.position), q_inv)

    def compose(self, other: "Pose") -> "Pose":
        """self o other: apply ``other`` first, then ``self``."""
        return Pose(
            self.transform(other.position),
            rotation.normalize(rotation.multiply(self.orientation, other.orientation)),
        )

    def to_dict(self) -> dict:
        return {"position": self.position.tolist(), "quaternion": self.orientation.tolist()}

    @staticmethod
    def from_dict(d: dict) -> "Pose":
        return Pose(np.asarray(d["position"]), np.asarray(d["quaternion"]))

    @staticmethod
    def identity() -> "Pose":
        return Pose()
