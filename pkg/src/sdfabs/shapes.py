"""Analytic signed-distance primitives and CSG trees.

A :class:`ShapeSpec` is a tree of analytic primitives (sphere, box, cylinder,
torus) combined by union, smooth union, or subtraction, each node carrying a
rigid translation offset in canonical coordinates.  Distances follow the usual
convention: negative inside, positive outside.

The smooth union uses the polynomial smooth-minimum

    h = clamp(0.5 + 0.5 * (d_b - d_a) / k, 0, 1)
    d = lerp(d_b, d_a, h) - k * h * (1 - h)

which blends surfaces within a band of width ``k``.  Primitive distance
functions follow Quilez's catalogue of exact SDFs; cylinders are capped and
aligned with the z axis, tori lie in the xy plane around the z axis.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import SpecOutOfBounds

# Shapes must fit this box so sphere tracing can start outside the surface.
BAKE_BOUND = 0.45


@dataclass(frozen=True)
class ShapeSpec:
    """One node of an analytic shape tree.

    kind: "sphere" | "box" | "cylinder" | "torus" | "union" |
          "smooth_union" | "subtraction"
    params: primitive parameters (see the factory helpers below).
    children: operand subtrees for the combinator kinds.
    offset: rigid translation applied to this node in canonical coordinates.
    """

    kind: str
    params: dict = field(default_factory=dict)
    children: tuple["ShapeSpec", ...] = ()
    offset: tuple[float, float, float] = (0.0, 0.0, 0.0)

    def sdf(self, points: np.ndarray) -> np.ndarray:
        """Evaluate the signed distance at an (N, 3) array of points."""
        p = np.asarray(points, dtype=np.float64) - np.asarray(self.offset)
        if self.kind == "sphere":
            return np.linalg.norm(p, axis=-1) - self.params["radius"]
        if self.kind == "box":
            q = np.abs(p) - np.asarray(self.params["half_extents"])
            outside = np.linalg.norm(np.maximum(q, 0.0), axis=-1)
            inside = np.minimum(q.max(axis=-1), 0.0)
            return outside + inside
        if self.kind == "cylinder":
            dr = np.hypot(p[..., 0], p[..., 1]) - self.params["radius"]
            dz = np.abs(p[..., 2]) - self.params["half_height"]
            d = np.stack([dr, dz], axis=-1)
            outside = np.linalg.norm(np.maximum(d, 0.0), axis=-1)
            inside = np.minimum(d.max(axis=-1), 0.0)
            return outside + inside
        if self.kind == "torus":
            q = np.hypot(p[..., 0], p[..., 1]) - self.params["major"]
            return np.hypot(q, p[..., 2]) - self.params["minor"]
        if self.kind == "union":
            values = [c.sdf(p) for c in self.children]
            return np.minimum.reduce(values)
        if self.kind == "smooth_union":
            k = self.params["k"]
            d = self.children[0].sdf(p)
            for child in self.children[1:]:
                d = _smooth_min(d, child.sdf(p), k)
            return d
        if self.kind == "subtraction":
            a, b = self.children
            return np.maximum(a.sdf(p), -b.sdf(p))
        raise ValueError(f"unknown shape kind {self.kind!r}")

    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        """Conservative axis-aligned bounding box (lo, hi)."""
        off = np.asarray(self.offset)
        if self.kind == "sphere":
            r = self.params["radius"]
            lo, hi = np.full(3, -r), np.full(3, r)
        elif self.kind == "box":
            h = np.asarray(self.params["half_extents"], dtype=np.float64)
            lo, hi = -h, h.copy()
        elif self.kind == "cylinder":
            r, hh = self.params["radius"], self.params["half_height"]
            lo, hi = np.array([-r, -r, -hh]), np.array([r, r, hh])
        elif self.kind == "torus":
            rr = self.params["major"] + self.params["minor"]
            m = self.params["minor"]
            lo, hi = np.array([-rr, -rr, -m]), np.array([rr, rr, m])
        elif self.kind in ("union", "smooth_union"):
            los, his = zip(*(c.bounds() for c in self.children))
            lo = np.minimum.reduce(los)
            hi = np.maximum.reduce(his)
            if self.kind == "smooth_union":
                # The blend can bulge outside the operands by up to k/4.
                lo = lo - self.params["k"] * 0.25
                hi = hi + self.params["k"] * 0.25
        elif self.kind == "subtraction":
            lo, hi = self.children[0].bounds()
        else:
            raise ValueError(f"unknown shape kind {self.kind!r}")
        return lo + off, hi + off

    def check_bounds(self, limit: float = BAKE_BOUND) -> None:
        """Raise :class:`SpecOutOfBounds` if the spec may leave the bake box."""
        lo, hi = self.bounds()
        if (lo < -limit).any() or (hi > limit).any():
            raise SpecOutOfBounds(
                f"shape bounds [{lo}, {hi}] exceed +/-{limit} canonical box"
            )

    def to_dict(self) -> dict:
        d: dict = {"kind": self.kind}
        if self.params:
            d["params"] = dict(self.params)
        if self.children:
            d["children"] = [c.to_dict() for c in self.children]
        if any(self.offset):
            d["offset"] = list(self.offset)
        return d

    @staticmethod
    def from_dict(d: dict) -> "ShapeSpec":
        return ShapeSpec(
            kind=d["kind"],
            params=dict(d.get("params", {})),
            children=tuple(ShapeSpec.from_dict(c) for c in d.get("children", ())),
            offset=tuple(d.get("offset", (0.0, 0.0, 0.0))),
        )

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    @staticmethod
    def from_json(text: str) -> "ShapeSpec":
        return ShapeSpec.from_dict(json.loads(text))


def _smooth_min(a: np.ndarray, b: np.ndarray, k: float) -> np.ndarray:
    h = np.clip(0.5 + 0.5 * (b - a) / k, 0.0, 1.0)
    return b + (a - b) * h - k * h * (1.0 - h)


def sphere(radius: float, offset=(0.0, 0.0, 0.0)) -> ShapeSpec:
    return ShapeSpec("sphere", {"radius": float(radius)}, offset=tuple(offset))


def box(half_extents, offset=(0.0, 0.0, 0.0)) -> ShapeSpec:
    return ShapeSpec(
        "box",
        {"half_extents": [float(v) for v in half_extents]},
        offset=tuple(offset),
    )


def cylinder(radius: float, half_height: float, offset=(0.0, 0.0, 0.0)) -> ShapeSpec:
    return ShapeSpec(
        "cylinder",
        {"radius": float(radius), "half_height": float(half_height)},
        offset=tuple(offset),
    )


def torus(major: float, minor: float, offset=(0.0, 0.0, 0.0)) -> ShapeSpec:
    return ShapeSpec(
        "torus", {"major": float(major), "minor": float(minor)}, offset=tuple(offset)
    )


def union(*children: ShapeSpec, offset=(0.0, 0.0, 0.0)) -> ShapeSpec:
    return ShapeSpec("union", children=tuple(children), offset=tuple(offset))


def smooth_union(k: float, *children: ShapeSpec, offset=(0.0, 0.0, 0.0)) -> ShapeSpec:
    return ShapeSpec(
        "smooth_union", {"k": float(k)}, children=tuple(children), offset=tuple(offset)
    )


def subtraction(a: ShapeSpec, b: ShapeSpec, offset=(0.0, 0.0, 0.0)) -> ShapeSpec:
    return ShapeSpec("subtraction", children=(a, b), offset=tuple(offset))
