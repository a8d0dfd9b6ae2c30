"""KITTI label parsing and the JSON-Lines frame format.

KITTI labels live in camera coordinates (x right, y down, z forward, box
location at the bottom face). Internally boxes are x forward, y left, z up
with ``z`` at the box center, so parsing maps::

    (x, y, z) = (z_cam, -x_cam, -y_cam + h / 2)
    theta     = -rotation_y - pi / 2
"""
from __future__ import annotations

import json
import math
import os
import tempfile
from dataclasses import dataclass, field

import numpy as np

from .geometry import Box3D, normalize_angle
from .relation import ProposalSet

KITTI_CLASSES = (
    "Car", "Van", "Truck", "Pedestrian", "Person_sitting", "Cyclist", "Tram", "Misc", "DontCare",
)
IGNORED_CLASSES = ("DontCare",)


class ParseError(ValueError):
    def __init__(self, message: str, line_number: int | None = None):
        self.line_number = line_number
        prefix = f"line {line_number}: " if line_number is not None else ""
        super().__init__(prefix + message)


@dataclass
class LabeledBox:
    class_name: str
    box: Box3D | None
    truncation: float = 0.0
    occlusion: int = 0
    alpha: float = 0.0
    bbox2d: tuple = (0.0, 0.0, 0.0, 0.0)
    score: float | None = None

    def __post_init__(self):
        if not 0.0 <= self.truncation <= 1.0:
            raise ValueError(f"truncation {self.truncation} outside [0, 1]")
        if self.occlusion not in (0, 1, 2, 3):
            raise ValueError(f"occlusion {self.occlusion} not in {{0,1,2,3}}")
        if self.box is None and not self.ignored:
            raise ValueError(f"{self.class_name} label needs a box")
        self.bbox2d = tuple(float(v) for v in self.bbox2d)

    @property
    def ignored(self) -> bool:
        return self.class_name in IGNORED_CLASSES

    @property
    def bbox_height(self) -> float:
        return self.bbox2d[3] - self.bbox2d[1]

    def to_json(self) -> dict:
        return {
            "class": self.class_name,
            "truncation": self.truncation,
            "occlusion": self.occlusion,
            "alpha": self.alpha,
            "bbox2d": list(self.bbox2d),
            "box": None if self.box is None else self.box.to_array().tolist(),
            "score": self.score,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "LabeledBox":
        box = obj.get("box")
        return cls(
            class_name=obj["class"],
            box=None if box is None else Box3D.from_array(box),
            truncation=float(obj.get("truncation", 0.0)),
            occlusion=int(obj.get("occlusion", 0)),
            alpha=float(obj.get("alpha", 0.0)),
            bbox2d=tuple(obj.get("bbox2d", (0.0, 0.0, 0.0, 0.0))),
            score=obj.get("score"),
        )


# ---------------------------------------------------------------------------
# KITTI
# ---------------------------------------------------------------------------

def kitti_to_box(h, w, l, x_cam, y_cam, z_cam, rotation_y) -> Box3D:
    return Box3D(z_cam, -x_cam, -y_cam + h / 2.0, h, w, l, normalize_angle(-rotation_y - math.pi / 2.0))


def box_to_kitti(box: Box3D) -> tuple:
    """Inverse of :func:`kitti_to_box`: ``(h, w, l, x_cam, y_cam, z_cam, rotation_y)``."""
    return (box.h, box.w, box.l, -box.y, -(box.z - box.h / 2.0), box.x,
            normalize_angle(-box.theta - math.pi / 2.0))


def parse_kitti_label_line(line: str, line_number: int | None = None) -> LabeledBox:
    fields = line.split()
    if len(fields) not in (15, 16):
        raise ParseError(f"expected 15 or 16 fields, got {len(fields)}", line_number)
    cls = fields[0]
    if cls not in KITTI_CLASSES:
        raise ParseError(f"unknown class {cls!r}", line_number)
    try:
        nums = [float(v) for v in fields[1:]]
    except ValueError as exc:
        raise ParseError(f"non-numeric field ({exc})", line_number) from None
    if not all(math.isfinite(v) for v in nums):
        raise ParseError("non-finite field", line_number)
    trunc, occ, alpha = nums[0], nums[1], nums[2]
    if occ != int(occ):
        raise ParseError(f"occlusion must be an integer, got {fields[2]}", line_number)
    bbox = tuple(nums[3:7])
    h, w, l = nums[7:10]
    x, y, z = nums[10:13]
    ry = nums[13]
    score = nums[14] if len(nums) == 15 else None
    try:
        box = None if cls in IGNORED_CLASSES else kitti_to_box(h, w, l, x, y, z, ry)
        # DontCare rows carry -1 placeholders for truncation/occlusion
        if cls in IGNORED_CLASSES:
            trunc, occ = min(max(trunc, 0.0), 1.0), min(max(int(occ), 0), 3)
        return LabeledBox(cls, box, trunc, int(occ), alpha, bbox, score)
    except ValueError as exc:
        raise ParseError(str(exc), line_number) from None


def parse_kitti_label_text(text: str) -> list[LabeledBox]:
    return [parse_kitti_label_line(line, n) for n, line in enumerate(text.splitlines(), start=1)
            if line.strip()]


def parse_kitti_label_file(path) -> list[LabeledBox]:
    with open(path, encoding="ascii") as fh:
        return parse_kitti_label_text(fh.read())


def format_kitti_label_line(label: LabeledBox) -> str:
    if label.box is None:
        dims = (-1.0, -1.0, -1.0, -1000.0, -1000.0, -1000.0, -10.0)
    else:
        dims = box_to_kitti(label.box)
    vals = [label.truncation, label.occlusion, label.alpha, *label.bbox2d, *dims]
    if label.score is not None:
        vals.append(label.score)
    return " ".join([label.class_name] + [repr(float(v)) if not isinstance(v, int) else str(v) for v in vals])


# ---------------------------------------------------------------------------
# frames
# ---------------------------------------------------------------------------

@dataclass
class Frame:
    frame_id: str
    ground_truth: list = field(default_factory=list)
    proposals: ProposalSet = None

    def __post_init__(self):
        if not self.frame_id:
            raise ValueError("frame_id must be non-empty")
        if self.proposals is None:
            self.proposals = ProposalSet([], np.zeros((0, 0)))

    def to_json(self) -> dict:
        p = self.proposals
        return {
            "frame_id": self.frame_id,
            "ground_truth": [g.to_json() for g in self.ground_truth],
            "proposals": {
                "boxes": [b.to_array().tolist() for b in p.boxes],
                "features": p.features.tolist(),
                "classes": list(p.class_labels),
                "scores": p.scores.tolist(),
            },
        }

    @classmethod
    def from_json(cls, obj: dict) -> "Frame":
        props = obj.get("proposals") or {}
        boxes = [Box3D.from_array(b) for b in props.get("boxes", [])]
        feats = props.get("features", [])
        widths = {len(row) for row in feats}
        if len(widths) > 1:
            raise ValueError(f"inconsistent feature dims {sorted(widths)}")
        features = np.array(feats, dtype=float).reshape(len(boxes), widths.pop() if widths else 0)
        return cls(
            frame_id=str(obj["frame_id"]),
            ground_truth=[LabeledBox.from_json(g) for g in obj.get("ground_truth", [])],
            proposals=ProposalSet(boxes, features, list(props.get("classes", [])),
                                  np.array(props.get("scores", []), dtype=float)),
        )


def atomic_write_text(path, text: str) -> None:
    """Write via a temp file in the same directory, then rename over ``path``."""
    path = os.fspath(path)
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def dumps_jsonl(records) -> str:
    return "".join(json.dumps(r, separators=(",", ":"), allow_nan=False) + "\n" for r in records)


def save_frames(frames, path) -> None:
    atomic_write_text(path, dumps_jsonl(f.to_json() for f in frames))


def load_frames(path) -> list[Frame]:
    frames = []
    dims = set()
    with open(path, encoding="utf-8") as fh:
        for n, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                frame = Frame.from_json(json.loads(line))
            except (ValueError, KeyError, TypeError) as exc:
                raise ParseError(f"bad frame record ({exc})", n) from None
            if len(frame.proposals):
                dims.add(frame.proposals.feature_dim)
                if len(dims) > 1:
                    raise ParseError(f"feature dim {frame.proposals.feature_dim} differs from earlier frames", n)
            frames.append(frame)
    return frames
