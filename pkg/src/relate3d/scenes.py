"""Synthetic frames with the layouts relation reasoning is meant to exploit.

Patterns
--------
parallel_parking
    One or two roadside rows of cars; every car in a row shares one heading
    and one lateral offset from the road axis.
multi_lane
    Two or three traffic lanes, one heading per lane, sparse longitudinal spacing.
clusters
    Tight groups of pedestrians lined up with a shared heading; groups are
    far apart from each other.
mixed
    A parking row, a traffic lane and a pedestrian group in one frame.
uniform
    Cars scattered uniformly with random headings (no shared structure).

Proposals are the ground truth perturbed by Gaussian center/heading noise,
plus uniformly placed distractors. Proposal features are a fixed random
linear map of a normalized encoding of the underlying true box, with its
own noise, so features correlate with geometry but cannot replace it.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .data_io import Frame, LabeledBox
from .geometry import Box3D, bev_corners, normalize_angle
from .relation import ProposalSet
from .rng import stream

PATTERNS = ("parallel_parking", "multi_lane", "clusters", "mixed", "uniform")

FOCAL_PX = 715.0
CAMERA_CENTER = (609.0, 173.0)
FEATURE_MAP_SEED = 7

# (h, w, l) ranges
CAR_SIZE = ((1.4, 1.7), (1.6, 1.9), (3.6, 4.6))
PED_SIZE = ((1.6, 1.9), (0.5, 0.7), (0.6, 0.9))


@dataclass(frozen=True)
class SceneSpec:
    pattern: str = "parallel_parking"
    num_objects: int = 12
    heading_noise_sd: float = 0.15
    center_noise_sd: float = 0.25
    feature_dim: int = 32
    seed: int = 0
    num_distractors: int = 2
    feature_noise_sd: float = 0.3
    min_separation: float = 0.0

    def __post_init__(self):
        if self.pattern not in PATTERNS:
            raise ValueError(f"unknown scene pattern {self.pattern!r}; choose from {', '.join(PATTERNS)}")
        if self.num_objects < 0 or self.num_distractors < 0:
            raise ValueError("object counts must be >= 0")
        if min(self.heading_noise_sd, self.center_noise_sd, self.feature_noise_sd) < 0:
            raise ValueError("noise standard deviations must be >= 0")
        if self.feature_dim < 1:
            raise ValueError("feature_dim must be >= 1")


def _size(rng, ranges):
    return tuple(rng.uniform(lo, hi) for lo, hi in ranges)


def _split(total: int, parts: int, rng) -> list[int]:
    if parts <= 1:
        return [total]
    cuts = np.sort(rng.integers(0, total + 1, size=parts - 1))
    return list(np.diff(np.concatenate([[0], cuts, [total]])).astype(int))


# ---------------------------------------------------------------------------
# layouts: each returns (boxes, classes, group ids)
# ---------------------------------------------------------------------------

def _parking(n, rng, group0=0):
    psi = rng.uniform(-math.pi, math.pi)
    along = np.array([math.cos(psi), math.sin(psi)])
    normal = np.array([-along[1], along[0]])
    origin = np.array([rng.uniform(6.0, 12.0), rng.uniform(-2.0, 2.0)])
    rows = 1 if n < 4 or rng.random() < 0.3 else 2
    boxes, groups = [], []
    for r, count in enumerate(_split(n, rows, rng) if rows == 2 else [n]):
        side = 1.0 if r == 0 else -1.0
        offset = side * rng.uniform(4.0, 6.0)
        heading = psi if rng.random() < 0.8 else psi + math.pi
        s = rng.uniform(0.0, 4.0)
        for _ in range(count):
            h, w, l = _size(rng, CAR_SIZE)
            s += l / 2.0
            pos = origin + (s + rng.normal(0, 0.1)) * along + (offset + rng.normal(0, 0.05)) * normal
            boxes.append(Box3D(pos[0], pos[1], -1.0 + h / 2.0, h, w, l, heading))
            groups.append(group0 + r)
            s += l / 2.0 + rng.uniform(0.6, 1.6)
    return boxes, ["Car"] * len(boxes), groups


def _far_enough(pos, placed, min_sep):
    return all(math.dist(pos, q) >= min_sep for q in placed)


def _lanes(n, rng, min_sep, group0=0):
    psi = rng.uniform(-0.2, 0.2)
    along = np.array([math.cos(psi), math.sin(psi)])
    normal = np.array([-along[1], along[0]])
    origin = np.array([rng.uniform(6.0, 10.0), rng.uniform(-3.0, 3.0)])
    lanes = 2 if n < 6 or rng.random() < 0.5 else 3
    boxes, groups, placed = [], [], []
    for lane, count in enumerate(_split(n, lanes, rng)):
        heading = psi if lane == 0 or rng.random() < 0.6 else psi + math.pi
        offset = (lane - (lanes - 1) / 2.0) * 3.5
        s = rng.uniform(0.0, 6.0)
        for _ in range(count):
            h, w, l = _size(rng, CAR_SIZE)
            for _attempt in range(100):
                s += rng.uniform(8.0, 16.0)
                pos = origin + s * along + (offset + rng.normal(0, 0.1)) * normal
                if _far_enough(pos, placed, min_sep):
                    break
            placed.append(pos)
            boxes.append(Box3D(pos[0], pos[1], -1.0 + h / 2.0, h, w, l, heading))
            groups.append(group0 + lane)
    return boxes, ["Car"] * len(boxes), groups


def _clusters(n, rng, group0=0):
    boxes, groups, anchors = [], [], []
    g = 0
    remaining = n
    while remaining > 0:
        size = min(remaining, int(rng.integers(3, 7)))
        for _attempt in range(200):
            anchor = np.array([rng.uniform(6.0, 60.0), rng.uniform(-25.0, 25.0)])
            if _far_enough(anchor, anchors, 16.0):
                break
        anchors.append(anchor)
        heading = rng.uniform(-math.pi, math.pi)
        direction = np.array([-math.sin(heading), math.cos(heading)])
        spacing = rng.uniform(0.9, 1.4)
        for m in range(size):
            h, w, l = _size(rng, PED_SIZE)
            pos = anchor + (m - (size - 1) / 2.0) * spacing * direction + rng.normal(0, 0.05, size=2)
            boxes.append(Box3D(pos[0], pos[1], -1.0 + h / 2.0, h, w, l, heading))
            groups.append(group0 + g)
        remaining -= size
        g += 1
    return boxes, ["Pedestrian"] * len(boxes), groups


def _uniform(n, rng, min_sep, group0=0):
    boxes, placed = [], []
    for _ in range(n):
        for _attempt in range(200):
            pos = np.array([rng.uniform(5.0, 55.0), rng.uniform(-20.0, 20.0)])
            if _far_enough(pos, placed, max(min_sep, 5.0)):
                break
        placed.append(pos)
        h, w, l = _size(rng, CAR_SIZE)
        boxes.append(Box3D(pos[0], pos[1], -1.0 + h / 2.0, h, w, l, rng.uniform(-math.pi, math.pi)))
    return boxes, ["Car"] * n, [group0 + k for k in range(n)]


def _layout(spec: SceneSpec, rng):
    n = spec.num_objects
    if n == 0:
        return [], [], []
    if spec.pattern == "parallel_parking":
        return _parking(n, rng)
    if spec.pattern == "multi_lane":
        return _lanes(n, rng, spec.min_separation)
    if spec.pattern == "clusters":
        return _clusters(n, rng)
    if spec.pattern == "uniform":
        return _uniform(n, rng, spec.min_separation)
    n_park, n_lane, n_ped = _split(n, 3, rng)
    boxes, classes, groups = _parking(n_park, rng) if n_park else ([], [], [])
    for part, kind in ((n_lane, "lane"), (n_ped, "ped")):
        if not part:
            continue
        g0 = max(groups, default=-1) + 1
        b, c, g = _lanes(part, rng, spec.min_separation, g0) if kind == "lane" else _clusters(part, rng, g0)
        if kind == "ped":
            # keep the pedestrian group clear of the road
            b = [bx.replace(y=bx.y + 25.0) for bx in b]
        boxes += b
        classes += c
        groups += g
    return boxes, classes, groups


# ---------------------------------------------------------------------------
# image-plane proxies
# ---------------------------------------------------------------------------

def proxy_bbox2d(box: Box3D) -> tuple:
    """Pinhole projection stand-in for frames without images (depth = x)."""
    depth = max(box.x, 1e-3)
    u = CAMERA_CENTER[0] - FOCAL_PX * box.y / depth
    v = CAMERA_CENTER[1] - FOCAL_PX * box.z / depth
    half_w = 0.5 * FOCAL_PX * max(box.w, box.l) / depth
    half_h = 0.5 * FOCAL_PX * box.h / depth
    return (u - half_w, v - half_h, u + half_w, v + half_h)


def _azimuth_interval(box: Box3D):
    corners = bev_corners(box)
    az = np.arctan2(corners[:, 1], corners[:, 0])
    return az.min(), az.max()


def occlusion_levels(boxes) -> list[int]:
    """0/1/2 by the fraction of a box's azimuth span covered by closer boxes."""
    spans = [_azimuth_interval(b) for b in boxes]
    ranges = [math.hypot(b.x, b.y) for b in boxes]
    levels = []
    for i, (lo, hi) in enumerate(spans):
        covered = 0.0
        for j, (lo2, hi2) in enumerate(spans):
            if j != i and ranges[j] < ranges[i]:
                covered = max(covered, max(0.0, min(hi, hi2) - max(lo, lo2)))
        frac = covered / max(hi - lo, 1e-9)
        levels.append(2 if frac > 0.5 else 1 if frac > 0.1 else 0)
    return levels


# ---------------------------------------------------------------------------
# features
# ---------------------------------------------------------------------------

def feature_map(feature_dim: int) -> np.ndarray:
    """The fixed (feature_dim x 9) map shared by every generated frame."""
    rng = stream(FEATURE_MAP_SEED, f"feature-map/{feature_dim}")
    return rng.normal(0.0, 1.0 / 3.0, size=(feature_dim, 9))


def _feature_inputs(box: Box3D, objectness: float, noise_sd: float, rng) -> np.ndarray:
    e = rng.normal(0.0, noise_sd, size=9)
    theta = box.theta + e[6]
    return np.array([
        (box.x - 30.0) / 20.0 + e[0],
        box.y / 15.0 + e[1],
        box.z + e[2],
        box.h - 1.5 + e[3],
        box.w - 1.5 + e[4],
        (box.l - 3.0) / 2.0 + e[5],
        math.cos(theta),
        math.sin(theta),
        objectness + e[8],
    ])


# ---------------------------------------------------------------------------
# generation
# ---------------------------------------------------------------------------

def generate_scene(spec: SceneSpec, frame_id: str | None = None, return_groups: bool = False):
    """Build one synthetic frame, deterministic under ``spec.seed``.

    With ``return_groups`` also returns the layout group (row, lane or
    cluster) of every ground-truth object.
    """
    layout_rng = stream(spec.seed, "scene/layout")
    noise_rng = stream(spec.seed, "scene/noise")
    feat_rng = stream(spec.seed, "scene/features")
    boxes, classes, groups = _layout(spec, layout_rng)

    occ = occlusion_levels(boxes)
    gts = [LabeledBox(c, b, 0.0, o, normalize_angle(b.theta - math.atan2(b.y, b.x)), proxy_bbox2d(b))
           for b, c, o in zip(boxes, classes, occ)]

    prop_boxes, prop_classes, truth, objectness, scores = [], [], [], [], []
    for b, c in zip(boxes, classes):
        dx, dy, dz = noise_rng.normal(0.0, spec.center_noise_sd, size=3) if spec.center_noise_sd else (0, 0, 0)
        dt = noise_rng.normal(0.0, spec.heading_noise_sd) if spec.heading_noise_sd else 0.0
        prop_boxes.append(b.replace(x=b.x + dx, y=b.y + dy, z=b.z + dz, theta=b.theta + dt))
        prop_classes.append(c)
        truth.append(b)
        objectness.append(1.0)
        scores.append(noise_rng.uniform(0.3, 1.0))

    if boxes:
        xs = [b.x for b in boxes]
        ys = [b.y for b in boxes]
        lo = (min(xs) - 5.0, min(ys) - 5.0)
        hi = (max(xs) + 5.0, max(ys) + 5.0)
    else:
        lo, hi = (5.0, -20.0), (55.0, 20.0)
    cls = max(set(classes), key=classes.count) if classes else "Car"
    size_ranges = PED_SIZE if cls == "Pedestrian" else CAR_SIZE
    for _ in range(spec.num_distractors):
        h, w, l = _size(noise_rng, size_ranges)
        d = Box3D(noise_rng.uniform(lo[0], hi[0]), noise_rng.uniform(lo[1], hi[1]), -1.0 + h / 2.0,
                  h, w, l, noise_rng.uniform(-math.pi, math.pi))
        prop_boxes.append(d)
        prop_classes.append(cls)
        truth.append(d)
        objectness.append(0.0)
        scores.append(noise_rng.uniform(0.05, 0.6))

    fmap = feature_map(spec.feature_dim)
    if prop_boxes:
        z = np.stack([_feature_inputs(t, o, spec.feature_noise_sd, feat_rng) for t, o in zip(truth, objectness)])
        features = z @ fmap.T
    else:
        features = np.zeros((0, spec.feature_dim))

    frame = Frame(
        frame_id=frame_id or f"{spec.pattern}-{spec.seed:06d}",
        ground_truth=gts,
        proposals=ProposalSet(prop_boxes, features, prop_classes, np.array(scores)),
    )
    if return_groups:
        return frame, list(groups)
    return frame


def generate_frames(spec: SceneSpec, count: int) -> list[Frame]:
    """``count`` frames with seeds derived from ``spec.seed``."""
    seeds = stream(spec.seed, "scene/frame-seeds").integers(0, 2**31 - 1, size=count)
    return [generate_scene(_with_seed(spec, int(s)), frame_id=f"{spec.pattern}-{spec.seed}-{k:05d}")
            for k, s in enumerate(seeds)]


def _with_seed(spec: SceneSpec, seed: int) -> SceneSpec:
    return SceneSpec(**{**spec.__dict__, "seed": seed})
