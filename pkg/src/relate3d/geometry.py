"""Oriented 3D boxes, footprint polygons, IoU and augmentation transforms.

Internal frame: x forward, y left, z up. ``z`` is the box *center* height,
so the vertical extent of a box is ``[z - h/2, z + h/2]``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

TWO_PI = 2.0 * math.pi


def normalize_angle(theta: float) -> float:
    """Wrap an angle to the half-open interval (-pi, pi]."""
    wrapped = math.remainder(float(theta), TWO_PI)
    if wrapped <= -math.pi:
        wrapped += TWO_PI
    return wrapped


@dataclass(frozen=True)
class Box3D:
    x: float
    y: float
    z: float
    h: float
    w: float
    l: float
    theta: float = 0.0

    def __post_init__(self):
        vals = (self.x, self.y, self.z, self.h, self.w, self.l, self.theta)
        if not all(math.isfinite(v) for v in vals):
            raise ValueError(f"non-finite box field in {vals}")
        if self.h <= 0 or self.w <= 0 or self.l <= 0:
            raise ValueError(f"box sizes must be positive, got h={self.h} w={self.w} l={self.l}")
        for name in ("x", "y", "z", "h", "w", "l"):
            object.__setattr__(self, name, float(getattr(self, name)))
        object.__setattr__(self, "theta", normalize_angle(self.theta))

    @property
    def center(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z])

    @property
    def volume(self) -> float:
        return self.h * self.w * self.l

    @property
    def bev_area(self) -> float:
        return self.w * self.l

    @property
    def bev_diagonal(self) -> float:
        return math.hypot(self.w, self.l)

    def to_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z, self.h, self.w, self.l, self.theta])

    @classmethod
    def from_array(cls, values) -> "Box3D":
        x, y, z, h, w, l, theta = (float(v) for v in values)
        return cls(x, y, z, h, w, l, theta)

    def replace(self, **changes) -> "Box3D":
        fields = dict(x=self.x, y=self.y, z=self.z, h=self.h, w=self.w, l=self.l, theta=self.theta)
        fields.update(changes)
        return Box3D(**fields)


# ---------------------------------------------------------------------------
# polygons
# ---------------------------------------------------------------------------

def bev_corners(box: Box3D) -> np.ndarray:
    """Footprint corners as a (4, 2) array in counter-clockwise order.

    The box length runs along the heading direction, the width across it.
    """
    hl, hw = box.l / 2.0, box.w / 2.0
    local = np.array([[hl, hw], [-hl, hw], [-hl, -hw], [hl, -hw]])
    c, s = math.cos(box.theta), math.sin(box.theta)
    rot = np.array([[c, -s], [s, c]])
    return local @ rot.T + np.array([box.x, box.y])


def polygon_area(poly) -> float:
    """Shoelace area; positive for counter-clockwise winding."""
    pts = np.asarray(poly, dtype=float)
    if len(pts) < 3:
        return 0.0
    x, y = pts[:, 0], pts[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(np.roll(x, -1), y))


def _cross(o, a, b) -> float:
    return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])


def _segment_line_intersection(p, q, a, b):
    # p, q straddle the infinite line through a -> b
    dp = _cross(a, b, p)
    dq = _cross(a, b, q)
    t = dp / (dp - dq)
    return (p[0] + t * (q[0] - p[0]), p[1] + t * (q[1] - p[1]))


def clip_convex(subject, clipper) -> list[tuple[float, float]]:
    """Sutherland-Hodgman clipping of ``subject`` against convex CCW ``clipper``."""
    output = [tuple(map(float, p)) for p in subject]
    clip = [tuple(map(float, p)) for p in clipper]
    for k in range(len(clip)):
        if not output:
            break
        a, b = clip[k], clip[(k + 1) % len(clip)]
        points, output = output, []
        prev = points[-1]
        prev_in = _cross(a, b, prev) >= 0.0
        for cur in points:
            cur_in = _cross(a, b, cur) >= 0.0
            if cur_in:
                if not prev_in:
                    output.append(_segment_line_intersection(prev, cur, a, b))
                output.append(cur)
            elif prev_in:
                output.append(_segment_line_intersection(prev, cur, a, b))
            prev, prev_in = cur, cur_in
    return output


def convex_intersection_area(a, b) -> float:
    """Area of the intersection of two convex CCW polygons."""
    if len(a) < 3 or len(b) < 3:
        return 0.0
    clipped = clip_convex(a, b)
    if len(clipped) < 3:
        return 0.0
    return max(polygon_area(clipped), 0.0)


# ---------------------------------------------------------------------------
# IoU
# ---------------------------------------------------------------------------

def _footprint_key(box: Box3D) -> tuple:
    return (box.x, box.y, box.w, box.l, box.theta)


def bev_intersection_area(a: Box3D, b: Box3D) -> float:
    """Footprint intersection area, symmetric in its arguments bit for bit."""
    if math.hypot(a.x - b.x, a.y - b.y) > 0.5 * (a.bev_diagonal + b.bev_diagonal):
        return 0.0
    # clip in a canonical order so that swapping the arguments is exact
    first, second = (a, b) if _footprint_key(a) <= _footprint_key(b) else (b, a)
    return convex_intersection_area(bev_corners(first), bev_corners(second))


def vertical_overlap(a: Box3D, b: Box3D) -> float:
    top = min(a.z + a.h / 2.0, b.z + b.h / 2.0)
    bottom = max(a.z - a.h / 2.0, b.z - b.h / 2.0)
    return max(top - bottom, 0.0)


def iou_bev(a: Box3D, b: Box3D) -> float:
    if _footprint_key(a) == _footprint_key(b):
        return 1.0
    inter = bev_intersection_area(a, b)
    if inter <= 0.0:
        return 0.0
    union = a.bev_area + b.bev_area - inter
    return min(max(inter / union, 0.0), 1.0)


def iou_3d(a: Box3D, b: Box3D) -> float:
    if a == b:
        return 1.0
    dz = vertical_overlap(a, b)
    if dz <= 0.0:
        return 0.0
    inter = bev_intersection_area(a, b) * dz
    if inter <= 0.0:
        return 0.0
    union = a.volume + b.volume - inter
    return min(max(inter / union, 0.0), 1.0)


# ---------------------------------------------------------------------------
# augmentation transforms
# ---------------------------------------------------------------------------

def transform_flip_x(box: Box3D) -> Box3D:
    """Mirror across the x axis (y -> -y, heading negated)."""
    return box.replace(y=-box.y, theta=-box.theta)


def transform_rotate_z(box: Box3D, phi: float) -> Box3D:
    c, s = math.cos(phi), math.sin(phi)
    return box.replace(
        x=c * box.x - s * box.y,
        y=s * box.x + c * box.y,
        theta=box.theta + phi,
    )


def transform_scale(box: Box3D, s: float) -> Box3D:
    if not s > 0:
        raise ValueError(f"scale factor must be positive, got {s}")
    return box.replace(
        x=box.x * s, y=box.y * s, z=box.z * s,
        h=box.h * s, w=box.w * s, l=box.l * s,
    )
