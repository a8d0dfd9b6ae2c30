"""``relate3d`` command-line driver.

Exit codes: 0 success, 1 usage error, 2 data error, 3 tolerance breach.
"""
from __future__ import annotations

import argparse
import json
import math
import os
import sys
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from . import nn
from .data_io import ParseError, atomic_write_text, dumps_jsonl, load_frames, save_frames
from .eval import DetectionResult, EvalConfig, evaluate
from .relation import RelationConfig, RelationModule, refine
from .rng import stream
from .scenes import PATTERNS, SceneSpec, generate_frames
from .spatial_graph import GraphStrategy, graph_degree_stats
from .training import TOY_CONFIG, TrainConfig

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_TOLERANCE = 0, 1, 2, 3


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _threads() -> int:
    try:
        return max(1, int(os.environ.get("RELATE3D_THREADS", "1")))
    except ValueError:
        return 1


def _write(path, text: str) -> None:
    try:
        atomic_write_text(path, text)
    except OSError as exc:
        raise UsageError(f"cannot write {path}: {exc}") from None


def _check_writable(path) -> None:
    directory = os.path.dirname(os.path.abspath(path))
    if not os.path.isdir(directory) or not os.access(directory, os.W_OK):
        raise UsageError(f"output directory for {path} is not writable")


def _check_readable(path) -> None:
    if not os.path.isfile(path):
        raise UsageError(f"input file {path} does not exist")


def _load(path):
    _check_readable(path)
    try:
        return load_frames(path)
    except (ParseError, OSError) as exc:
        raise DataError(str(exc)) from None


def _json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=False, allow_nan=False) + "\n"


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_synth(args) -> int:
    _check_writable(args.out)
    spec = SceneSpec(pattern=args.pattern, num_objects=args.n, seed=args.seed,
                     heading_noise_sd=args.heading_noise, center_noise_sd=args.center_noise,
                     feature_dim=args.feature_dim, num_distractors=args.distractors,
                     min_separation=args.min_separation)
    frames = generate_frames(spec, args.frames)
    save_frames(frames, args.out)
    n_gt = sum(len(f.ground_truth) for f in frames)
    n_prop = sum(len(f.proposals) for f in frames)
    print(json.dumps({"frames": len(frames), "ground_truth": n_gt, "proposals": n_prop}))
    return EXIT_OK


def _strategy(args) -> GraphStrategy:
    return GraphStrategy(args.strategy, k=args.k, r=args.r)


def cmd_graph(args) -> int:
    frames = _load(args.input)
    if args.out:
        _check_writable(args.out)
    by_id = {f.frame_id: f for f in frames}
    if args.frame_id not in by_id:
        raise DataError(f"unknown frame id {args.frame_id!r}")
    centers = by_id[args.frame_id].proposals.centers()
    if args.brute_force:
        from .oracles import brute_force_knn, brute_force_radius
        from .spatial_graph import RelationGraph
        rows = brute_force_knn(centers, args.k) if args.strategy == "knn" else brute_force_radius(centers, args.r)
        graph = RelationGraph(len(rows), tuple(tuple(r) for r in rows))
    else:
        graph = _strategy(args).build(centers)
    out = {"frame_id": args.frame_id, **graph.to_json(), "degree_stats": graph_degree_stats(graph)}
    text = _json(out)
    if args.out:
        _write(args.out, text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def _ablation_flags(spec: str | None) -> dict:
    enabled = set() if spec is None else {s.strip() for s in spec.split(",") if s.strip()}
    known = {"init_box", "box_diff", "feature_append"}
    if spec is None:
        enabled = known
    bad = enabled - known
    if bad:
        raise UsageError(f"unknown ablation component(s): {', '.join(sorted(bad))}")
    return {f"use_{name}": name in enabled for name in sorted(known)}


def _load_config(path, args) -> RelationConfig:
    base = {}
    if path:
        _check_readable(path)
        try:
            with open(path, encoding="utf-8") as fh:
                base = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise DataError(f"bad config {path}: {exc}") from None
    for key, value in TOY_CONFIG.items():
        base.setdefault(key, value)
    try:
        return RelationConfig.from_json(base)
    except (TypeError, ValueError) as exc:
        raise UsageError(f"config inconsistency: {exc}") from None


def save_checkpoint(path, module: RelationModule, head: nn.Parameters) -> None:
    obj = module.to_json()
    obj["head"] = head.to_json()
    _write(path, json.dumps(obj, separators=(",", ":")) + "\n")


def load_checkpoint(path):
    _check_readable(path)
    try:
        with open(path, encoding="utf-8") as fh:
            obj = json.load(fh)
        return RelationModule.from_json(obj), nn.Parameters.from_json(obj["head"])
    except (OSError, KeyError, ValueError) as exc:
        raise DataError(f"bad checkpoint {path}: {exc}") from None


def cmd_train(args) -> int:
    from .training import toy_train
    for p in (args.checkpoint_out, args.metrics_out):
        _check_writable(p)
    frames = _load(args.input)
    flags = _ablation_flags(args.ablation)
    config = _load_config(args.config, args)
    dims = {f.proposals.feature_dim for f in frames if len(f.proposals)}
    if dims and dims != {config.input_feature_dim}:
        if args.config:
            raise UsageError(f"config input_feature_dim {config.input_feature_dim} "
                             f"does not match frame features {sorted(dims)}")
        config = config.with_flags(input_feature_dim=dims.pop())
    tc = TrainConfig(epochs=args.epochs, lr=args.lr, batch_size=args.batch_size)
    result = toy_train(frames, config, epochs=args.epochs, seed=args.seed, train_config=tc, **flags)
    save_checkpoint(args.checkpoint_out, result.module, result.head)
    _write(args.metrics_out, result.metrics_csv())
    print(json.dumps({"epochs": args.epochs, **result.final}))
    return EXIT_OK


def cmd_refine(args) -> int:
    _check_writable(args.out)
    frames = _load(args.input)
    module, head = load_checkpoint(args.checkpoint)
    for f in frames:
        if len(f.proposals) and f.proposals.feature_dim != module.config.input_feature_dim:
            raise DataError(f"frame {f.frame_id}: feature dim {f.proposals.feature_dim} does not match "
                            f"checkpoint input dim {module.config.input_feature_dim}")

    def run(frame):
        boxes, scores = refine(module, head, frame.proposals)
        dets = [DetectionResult(c, b, s) for c, b, s in zip(frame.proposals.class_labels, boxes, scores)]
        return {"frame_id": frame.frame_id, "detections": [d.to_json() for d in dets]}

    with ThreadPoolExecutor(max_workers=_threads()) as pool:
        records = list(pool.map(run, frames))
    _write(args.out, dumps_jsonl(records))
    return EXIT_OK


def load_detections(path) -> dict:
    _check_readable(path)
    out = {}
    try:
        with open(path, encoding="utf-8") as fh:
            for n, line in enumerate(fh, start=1):
                if not line.strip():
                    continue
                rec = json.loads(line)
                out.setdefault(str(rec["frame_id"]), []).extend(
                    DetectionResult.from_json(d) for d in rec.get("detections", []))
    except (OSError, KeyError, ValueError) as exc:
        raise DataError(f"{path}: bad detection record ({exc})") from None
    return out


def cmd_eval(args) -> int:
    _check_writable(args.out)
    frames = _load(args.gt)
    dets = load_detections(args.det)
    classes = tuple(c.strip() for c in args.classes.split(",") if c.strip())
    thresholds = {}
    for cls in classes:
        default = 0.7 if cls == "Car" else 0.5
        thresholds[cls] = {"3d": args.iou_3d if args.iou_3d is not None else default,
                           "bev": args.iou_bev if args.iou_bev is not None else default}
    config = EvalConfig(classes=classes, iou_thresholds=thresholds, recall_mode=args.recall_mode)
    try:
        report = evaluate(frames, dets, config)
    except KeyError as exc:
        raise DataError(str(exc)) from None
    _write(args.out, _json(report.to_json()))
    table = report.table()
    base, _ = os.path.splitext(args.out)
    _write(base + ".txt", table)
    if args.pr_csv:
        _write(args.pr_csv, report.pr_csv())
    if args.pretty:
        sys.stdout.write(table)
    return EXIT_OK


# ---------------------------------------------------------------------------
# oracle suites
# ---------------------------------------------------------------------------

def check_iou(seed: int, pairs: int = 200) -> float:
    from .geometry import Box3D, iou_bev
    from .oracles import raster_iou_bev
    rng = stream(seed, "check/iou")
    worst = 0.0
    for _ in range(pairs):
        a = Box3D(0.0, 0.0, 0.0, 1.5, rng.uniform(0.5, 3), rng.uniform(0.5, 5), rng.uniform(-math.pi, math.pi))
        b = Box3D(rng.normal(0, 1.5), rng.normal(0, 1.5), 0.0, 1.5, rng.uniform(0.5, 3), rng.uniform(0.5, 5),
                  rng.uniform(-math.pi, math.pi))
        worst = max(worst, abs(iou_bev(a, b) - raster_iou_bev(a, b)))
    return worst


def check_graph(seed: int, frames: int = 100) -> float:
    from .oracles import brute_force_knn, brute_force_radius
    from .spatial_graph import knn_graph, radius_graph
    rng = stream(seed, "check/graph")
    mismatches = 0
    for _ in range(frames):
        n = int(rng.integers(0, 120))
        c = rng.uniform(-30, 30, size=(n, 3)) * np.array([1.0, 1.0, 0.1])
        for k in (1, 4, 16, 32):
            mismatches += [list(r) for r in knn_graph(c, k).neighbors] != brute_force_knn(c, k)
        for r in (2.0, 6.0, 10.0):
            mismatches += [list(x) for x in radius_graph(c, r).neighbors] != brute_force_radius(c, r)
    return float(mismatches)


def check_grad(seed: int) -> float:
    from .gradcheck import relation_gradient_check
    return relation_gradient_check(seed)["max_rel_error"]


CHECK_SUITES = {
    "grad": (check_grad, 1e-5),
    "iou": (check_iou, 2e-3),
    "graph": (check_graph, 0.0),
}


def cmd_check(args) -> int:
    names = list(CHECK_SUITES) if args.suite == "all" else [args.suite]
    ok = True
    for name in names:
        fn, tol = CHECK_SUITES[name]
        err = fn(args.seed)
        passed = err <= tol if tol == 0.0 else err < tol
        ok &= passed
        print(f"{name}: max_error={err:.3e} tolerance={tol:.0e} {'PASS' if passed else 'FAIL'}")
    return EXIT_OK if ok else EXIT_TOLERANCE


# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="relate3d", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("synth", help="generate synthetic frames (JSONL)")
    s.add_argument("--pattern", required=True, choices=PATTERNS)
    s.add_argument("--n", type=int, default=12, help="ground-truth objects per frame")
    s.add_argument("--seed", type=int, required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--frames", type=int, default=1)
    s.add_argument("--heading-noise", type=float, default=0.15)
    s.add_argument("--center-noise", type=float, default=0.25)
    s.add_argument("--feature-dim", type=int, default=32)
    s.add_argument("--distractors", type=int, default=2)
    s.add_argument("--min-separation", type=float, default=0.0)
    s.set_defaults(func=cmd_synth)

    g = sub.add_parser("graph", help="build the relation graph for one frame")
    g.add_argument("--in", dest="input", required=True)
    g.add_argument("--strategy", choices=("knn", "radius"), default="knn")
    g.add_argument("--k", type=int, default=16)
    g.add_argument("--r", type=float, default=6.0)
    g.add_argument("--frame-id", required=True)
    g.add_argument("--out")
    g.add_argument("--brute-force", action="store_true", help="use the O(n^2) reference construction")
    g.set_defaults(func=cmd_graph)

    t = sub.add_parser("train", help="toy-train the relation module")
    t.add_argument("--in", dest="input", required=True)
    t.add_argument("--config")
    t.add_argument("--ablation", help="comma list of enabled components: init_box,box_diff,feature_append")
    t.add_argument("--epochs", type=int, default=TrainConfig.epochs)
    t.add_argument("--seed", type=int, required=True)
    t.add_argument("--lr", type=float, default=TrainConfig.lr)
    t.add_argument("--batch-size", type=int, default=TrainConfig.batch_size)
    t.add_argument("--checkpoint-out", required=True)
    t.add_argument("--metrics-out", required=True)
    t.set_defaults(func=cmd_train)

    r = sub.add_parser("refine", help="refine proposals with a trained checkpoint")
    r.add_argument("--in", dest="input", required=True)
    r.add_argument("--checkpoint", required=True)
    r.add_argument("--out", required=True)
    r.set_defaults(func=cmd_refine)

    e = sub.add_parser("eval", help="KITTI-style AP report")
    e.add_argument("--gt", required=True)
    e.add_argument("--det", required=True)
    e.add_argument("--classes", default="Car")
    e.add_argument("--iou-3d", type=float)
    e.add_argument("--iou-bev", type=float)
    e.add_argument("--recall-mode", choices=("r11", "r40"), default="r40")
    e.add_argument("--out", required=True)
    e.add_argument("--pr-csv")
    e.add_argument("--pretty", action="store_true")
    e.set_defaults(func=cmd_eval)

    c = sub.add_parser("check", help="run oracle suites")
    c.add_argument("--suite", choices=("grad", "graph", "iou", "all"), default="all")
    c.add_argument("--seed", type=int, default=0)
    c.set_defaults(func=cmd_check)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"relate3d: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, ParseError, nn.ShapeError) as exc:
        print(f"relate3d: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
