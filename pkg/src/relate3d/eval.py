"""KITTI-style matching, interpolated AP (R11 / R40) and report tables."""
from __future__ import annotations

import csv
import io
import warnings
from dataclasses import dataclass, field

import numpy as np

from .data_io import LabeledBox
from .geometry import Box3D, iou_3d, iou_bev

DIFFICULTIES = ("easy", "moderate", "hard")
# (min 2D box height px, max occlusion, max truncation)
DIFFICULTY_THRESHOLDS = {
    "easy": (40.0, 0, 0.15),
    "moderate": (25.0, 1, 0.30),
    "hard": (25.0, 2, 0.50),
}
DEFAULT_IOU = {"Car": 0.7, "Pedestrian": 0.5, "Cyclist": 0.5}
IOU_FUNCTIONS = {"3d": iou_3d, "bev": iou_bev}

TP, FP, IGNORED = "tp", "fp", "ignored"


@dataclass
class DetectionResult:
    class_name: str
    box: Box3D
    score: float

    def __post_init__(self):
        self.score = float(self.score)
        if not np.isfinite(self.score):
            raise ValueError("detection score must be finite")

    def to_json(self) -> dict:
        return {"class": self.class_name, "box": self.box.to_array().tolist(), "score": self.score}

    @classmethod
    def from_json(cls, obj: dict) -> "DetectionResult":
        return cls(obj["class"], Box3D.from_array(obj["box"]), obj["score"])


def difficulty_filter(gt: LabeledBox, level: str) -> bool:
    """Whether ``gt`` counts toward ``level`` under the KITTI thresholds."""
    min_height, max_occ, max_trunc = DIFFICULTY_THRESHOLDS[level]
    return gt.bbox_height >= min_height and gt.occlusion <= max_occ and gt.truncation <= max_trunc


def sort_detections(dets) -> list:
    """Descending score; equal scores keep input order."""
    return sorted(dets, key=lambda d: -d.score)


def match_frame(dets, gts, iou_fn, threshold: float, care=None) -> list[str]:
    """Greedy score-ordered matching; one flag per detection (in ``dets`` order).

    ``dets`` must already be sorted by descending score. ``care[k]`` False
    marks ground truth ``k`` as ignored: it is never a TP target and never
    a miss, and a detection landing on it is dropped from the sweep instead
    of becoming a false positive.
    """
    if care is None:
        care = [not g.ignored for g in gts]
    used = [False] * len(gts)
    flags = []
    for d in dets:
        best, best_iou = -1, -1.0
        ignored_hit = False
        for k, g in enumerate(gts):
            if g.box is None:
                continue
            iou = iou_fn(d.box, g.box)
            if iou < threshold:
                continue
            if care[k]:
                if not used[k] and iou > best_iou:
                    best, best_iou = k, iou
            else:
                ignored_hit = True
        if best >= 0:
            used[best] = True
            flags.append(TP)
        elif ignored_hit:
            flags.append(IGNORED)
        else:
            flags.append(FP)
    return flags


def recall_positions(mode: str) -> np.ndarray:
    if mode == "r40":
        return np.arange(1, 41) / 40
    if mode == "r11":
        return np.arange(0, 11) / 10
    raise ValueError(f"unknown recall mode {mode!r}")


def pr_curve(scores, is_tp, num_gt: int):
    """Recall/precision at each distinct score threshold (ties enter together)."""
    scores = np.asarray(scores, dtype=float)
    is_tp = np.asarray(is_tp, dtype=bool)
    if num_gt <= 0 or scores.size == 0:
        return np.zeros(0), np.zeros(0)
    order = np.argsort(-scores, kind="stable")
    s, t = scores[order], is_tp[order]
    tp_cum = np.cumsum(t)
    fp_cum = np.cumsum(~t)
    # last index of each run of equal scores
    last = np.flatnonzero(np.append(s[1:] != s[:-1], True))
    tp_at, fp_at = tp_cum[last], fp_cum[last]
    return tp_at / num_gt, tp_at / (tp_at + fp_at)


def interpolated_precision(recall, precision, positions) -> np.ndarray:
    """Max precision at any recall >= r, for each r in ``positions`` (0 if unreachable)."""
    out = np.zeros(len(positions))
    for k, r in enumerate(positions):
        ok = recall >= r
        if np.any(ok):
            out[k] = precision[ok].max()
    return out


def ap_interpolated(scores, is_tp, num_gt: int, recall_points: str = "r40") -> float:
    if num_gt <= 0:
        warnings.warn("AP requested with no ground truth; defined as 0", RuntimeWarning, stacklevel=2)
        return 0.0
    recall, precision = pr_curve(scores, is_tp, num_gt)
    return float(interpolated_precision(recall, precision, recall_positions(recall_points)).mean())


# ---------------------------------------------------------------------------
# full evaluation
# ---------------------------------------------------------------------------

@dataclass
class EvalConfig:
    classes: tuple = ("Car", "Pedestrian", "Cyclist")
    iou_thresholds: dict = field(default_factory=lambda: dict(DEFAULT_IOU))
    recall_mode: str = "r40"
    difficulties: tuple = DIFFICULTIES
    metrics: tuple = ("3d", "bev")

    def threshold(self, cls: str, metric: str) -> float:
        t = self.iou_thresholds.get(cls, 0.5)
        return t[metric] if isinstance(t, dict) else t


@dataclass
class ApReport:
    recall_mode: str
    results: dict  # class -> difficulty -> metric -> entry

    def ap(self, cls: str, difficulty: str, metric: str) -> float:
        return self.results[cls][difficulty][metric]["ap"]

    def to_json(self) -> dict:
        return {"recall_mode": self.recall_mode, "results": self.results}

    def table(self) -> str:
        """Aligned text table: one row per class and metric, one column per difficulty."""
        diffs = None
        rows = []
        for cls, by_diff in self.results.items():
            diffs = list(by_diff)
            metrics = list(next(iter(by_diff.values())))
            for metric in metrics:
                label = f"{cls} {metric.upper()} AP_{self.recall_mode.upper()}"
                rows.append([label] + [f"{100.0 * by_diff[d][metric]['ap']:.2f}" for d in diffs])
        if not rows:
            return ""
        header = ["Metric"] + [d.capitalize() for d in diffs]
        widths = [max(len(r[c]) for r in rows + [header]) for c in range(len(header))]

        def fmt(r):
            return "  ".join(cell.ljust(widths[0]) if c == 0 else cell.rjust(widths[c]) for c, cell in enumerate(r))

        return "\n".join([fmt(header), "  ".join("-" * w for w in widths)] + [fmt(r) for r in rows]) + "\n"

    def pr_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["class", "difficulty", "metric", "recall", "precision"])
        for cls, by_diff in self.results.items():
            for diff, by_metric in by_diff.items():
                for metric, entry in by_metric.items():
                    for r, p in zip(entry["recall"], entry["precision"]):
                        w.writerow([cls, diff, metric, repr(r), repr(p)])
        return buf.getvalue()


def evaluate(frames, detections: dict, config: EvalConfig | None = None) -> ApReport:
    """Pooled PR sweep over all frames per class x difficulty x metric.

    ``frames`` carry the ground truth; ``detections`` maps frame_id to a
    list of :class:`DetectionResult`. Frames without an entry have no
    detections.
    """
    config = config or EvalConfig()
    gt_by_id = {f.frame_id: f.ground_truth for f in frames}
    unknown = sorted(set(detections) - set(gt_by_id))
    if unknown:
        raise KeyError(f"detections reference unknown frame ids: {unknown[:5]}")
    results = {}
    for cls in config.classes:
        results[cls] = {}
        for diff in config.difficulties:
            results[cls][diff] = {}
            for metric in config.metrics:
                iou_fn = IOU_FUNCTIONS[metric]
                thr = config.threshold(cls, metric)
                scores, flags = [], []
                num_gt = 0
                for fid, gts in gt_by_id.items():
                    cls_gts = [g for g in gts if g.class_name == cls or g.ignored]
                    care = [g.class_name == cls and not g.ignored and difficulty_filter(g, diff)
                            for g in cls_gts]
                    num_gt += sum(care)
                    dets = sort_detections(d for d in detections.get(fid, []) if d.class_name == cls)
                    f = match_frame(dets, cls_gts, iou_fn, thr, care)
                    for d, flag in zip(dets, f):
                        if flag != IGNORED:
                            scores.append(d.score)
                            flags.append(flag == TP)
                tp = int(sum(flags))
                fp = len(flags) - tp
                if num_gt > 0:
                    recall, precision = pr_curve(scores, flags, num_gt)
                    ap = float(interpolated_precision(recall, precision,
                                                      recall_positions(config.recall_mode)).mean())
                else:
                    recall, precision, ap = np.zeros(0), np.zeros(0), 0.0
                results[cls][diff][metric] = {
                    "ap": ap, "tp": tp, "fp": fp, "fn": num_gt - tp, "num_gt": num_gt,
                    "no_ground_truth": num_gt == 0,
                    "recall": recall.tolist(), "precision": precision.tolist(),
                }
    return ApReport(config.recall_mode, results)
