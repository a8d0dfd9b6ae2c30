"""Desk-scale training of the relation module plus a refinement head.

Proposals matched to a ground-truth box (BEV IoU >= ``reg_iou``) regress
the residual ``gt - proposal`` with smooth-L1; every proposal gets a
binary confidence target (BEV IoU >= ``cls_iou``). Frames are batched as
a disjoint union, which is exact because graphs never cross frames.
"""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np

from . import nn
from .geometry import iou_bev, normalize_angle
from .relation import (
    BOX_DIM, THETA, EdgeCache, RelationConfig, RelationModule, box_difference, create_head,
    forward_var, head_var, node_box_inputs,
)
from .rng import stream

ABLATION_FLAGS = ("use_init_box", "use_box_diff", "use_feature_append")


# Desk-scale module: one relation layer of width 32 trains reliably on a
# single core within the ablation budget.
TOY_CONFIG = {"num_layers": 1, "node_dim": 32, "output_dim": 32, "head_hidden": (32,)}


def toy_config(**overrides) -> RelationConfig:
    return RelationConfig(**{**TOY_CONFIG, **overrides})


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 40
    lr: float = 2e-3
    batch_size: int = 4
    warmup_steps: int = 40
    cosine_decay: bool = True
    smooth_l1_beta: float = 1.0 / 9.0
    cls_weight: float = 1.0
    reg_iou: float = 0.3
    cls_iou: float = 0.5
    val_fraction: float = 0.2


@dataclass
class PreparedFrame:
    features: np.ndarray
    box_array: np.ndarray
    node_boxes: np.ndarray
    edges: EdgeCache
    positive: np.ndarray
    targets: np.ndarray
    labels: np.ndarray

    @property
    def n(self) -> int:
        return len(self.features)


def assign_targets(frame, reg_iou: float, cls_iou: float):
    """Best-overlap ground truth per proposal -> (positive mask, residual targets, labels)."""
    props = frame.proposals
    n = len(props)
    positive = np.zeros(n, dtype=bool)
    targets = np.zeros((n, BOX_DIM))
    labels = np.zeros(n)
    gts = [g for g in frame.ground_truth if g.box is not None and not g.ignored]
    for i, (b, cls) in enumerate(zip(props.boxes, props.class_labels)):
        best, best_iou = None, 0.0
        for g in gts:
            if g.class_name != cls:
                continue
            iou = iou_bev(b, g.box)
            if iou > best_iou:
                best, best_iou = g, iou
        if best is not None and best_iou >= reg_iou:
            positive[i] = True
            targets[i] = box_difference(best.box, b)
        labels[i] = 1.0 if best_iou >= cls_iou else 0.0
    return positive, targets, labels


def prepare_frame(frame, config: RelationConfig, train_config: TrainConfig) -> PreparedFrame:
    props = frame.proposals
    box_array = props.box_array()
    graph = config.strategy.build(props.centers())
    positive, targets, labels = assign_targets(frame, train_config.reg_iou, train_config.cls_iou)
    return PreparedFrame(
        features=props.features.reshape(len(props), config.input_feature_dim),
        box_array=box_array,
        node_boxes=node_box_inputs(config, box_array),
        edges=EdgeCache.build(graph, box_array, config.diff_box_scale),
        positive=positive, targets=targets, labels=labels,
    )


def merge_frames(frames: list[PreparedFrame]) -> PreparedFrame:
    """Disjoint union of several prepared frames."""
    if len(frames) == 1:
        return frames[0]
    recv, send, starts, pooled, diffs = [], [], [], [], []
    node_off = edge_off = 0
    for f in frames:
        e = f.edges
        recv.append(e.receivers + node_off)
        send.append(e.senders + node_off)
        starts.append(e.starts + edge_off)
        pooled.append(e.pooled_nodes + node_off)
        diffs.append(e.box_diffs)
        node_off += f.n
        edge_off += len(e.receivers)
    cat = np.concatenate
    edges = EdgeCache(cat(recv).astype(int), cat(send).astype(int), cat(starts).astype(int),
                      cat(pooled).astype(int), cat(diffs) if diffs else np.zeros((0, BOX_DIM)))
    return PreparedFrame(
        features=cat([f.features for f in frames]),
        box_array=cat([f.box_array for f in frames]),
        node_boxes=cat([f.node_boxes for f in frames]),
        edges=edges,
        positive=cat([f.positive for f in frames]),
        targets=cat([f.targets for f in frames]),
        labels=cat([f.labels for f in frames]),
    )


def loss_var(tape: nn.Tape, module: RelationModule, head: nn.Parameters, batch: PreparedFrame,
             train_config: TrainConfig):
    refined, _ = forward_var(tape, module, batch.features, batch.node_boxes, batch.edges)
    out = head_var(tape, head, refined)
    pos = np.flatnonzero(batch.positive)
    terms = []
    if len(pos):
        residual = nn.slice_cols(tape, nn.gather_rows(tape, out, pos), 0, BOX_DIM)
        reg = nn.total(tape, nn.smooth_l1(tape, residual, batch.targets[pos], train_config.smooth_l1_beta))
        terms.append(nn.scale(tape, reg, 1.0 / len(pos)))
    logits = nn.slice_cols(tape, out, BOX_DIM, BOX_DIM + 1)
    cls = nn.total(tape, nn.bce_with_logits(tape, logits, batch.labels[:, None]))
    terms.append(nn.scale(tape, cls, train_config.cls_weight / max(batch.n, 1)))
    loss = terms[0]
    for t in terms[1:]:
        loss = nn.add(tape, loss, t)
    return loss


def predict(module: RelationModule, head: nn.Parameters, batch: PreparedFrame):
    """Residuals (n x 7) and logits (n,) without recording."""
    tape = nn.Tape(record=False)
    refined, _ = forward_var(tape, module, batch.features, batch.node_boxes, batch.edges)
    out = head_var(tape, head, refined).value
    return out[:, :BOX_DIM], out[:, BOX_DIM]


def residual_errors(module, head, frames: list[PreparedFrame]) -> dict:
    """Heading and center MAE of refined positive proposals against their targets."""
    heading, center = [], []
    for f in frames:
        if f.n == 0 or not f.positive.any():
            continue
        residuals, _ = predict(module, head, f)
        pos = f.positive
        miss = residuals[pos] - f.targets[pos]
        heading.extend(abs(normalize_angle(v)) for v in miss[:, THETA])
        center.extend(np.linalg.norm(miss[:, :3], axis=1))
    if not heading:
        return {"heading_mae": 0.0, "center_mae": 0.0}
    return {"heading_mae": float(np.mean(heading)), "center_mae": float(np.mean(center))}


def split_frames(frames, val_fraction: float, seed: int):
    order = stream(seed, "train/split").permutation(len(frames))
    n_val = int(round(val_fraction * len(frames)))
    val_idx = set(order[:n_val].tolist())
    train = [f for k, f in enumerate(frames) if k not in val_idx]
    val = [f for k, f in enumerate(frames) if k in val_idx]
    return train, val


@dataclass
class TrainResult:
    module: RelationModule
    head: nn.Parameters
    history: list = field(default_factory=list)

    def metrics_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["epoch", "loss", "heading_mae", "center_mae"])
        for row in self.history:
            w.writerow([row["epoch"], repr(row["loss"]), repr(row["heading_mae"]), repr(row["center_mae"])])
        return buf.getvalue()

    @property
    def final(self) -> dict:
        return self.history[-1]


def toy_train(frames, config: RelationConfig, epochs: int | None = None, seed: int = 0,
              train_config: TrainConfig | None = None, val_frames=None, **flags) -> TrainResult:
    """Train module + head with Adam; history row 0 is the untrained model.

    ``flags`` may override ``use_init_box``, ``use_box_diff`` and
    ``use_feature_append``. Without ``val_frames`` the frames are split
    by ``seed``.
    """
    unknown = set(flags) - set(ABLATION_FLAGS)
    if unknown:
        raise TypeError(f"unknown ablation flags {sorted(unknown)}")
    config = config.with_flags(**flags) if flags else config
    train_config = train_config or TrainConfig()
    epochs = train_config.epochs if epochs is None else epochs
    if val_frames is None:
        train_frames, val_frames = split_frames(list(frames), train_config.val_fraction, seed)
    else:
        train_frames = list(frames)

    module = RelationModule.create(config, seed)
    head = create_head(config, seed)
    params = module.parameters() + head.arrays()
    train = [prepare_frame(f, config, train_config) for f in train_frames]
    train = [f for f in train if f.n]
    val = [prepare_frame(f, config, train_config) for f in val_frames]

    result = TrainResult(module, head)
    result.history.append({"epoch": 0, "loss": _mean_loss(module, head, train, train_config),
                           **residual_errors(module, head, val)})
    bs = max(1, train_config.batch_size)
    total = epochs * -(-len(train) // bs) if train_config.cosine_decay else 0
    adam = nn.AdamState(lr=train_config.lr, warmup_steps=train_config.warmup_steps, total_steps=total)
    order_rng = stream(seed, "train/order")
    for epoch in range(1, epochs + 1):
        order = order_rng.permutation(len(train))
        losses = []
        for start in range(0, len(order), bs):
            batch = merge_frames([train[k] for k in order[start:start + bs]])
            tape = nn.Tape()
            loss = loss_var(tape, module, head, batch, train_config)
            grads = tape.backward(np.ones((1, 1)), output=loss)
            nn.adam_step(adam, params, grads.for_params(params))
            losses.append(float(loss.value[0, 0]))
        result.history.append({"epoch": epoch, "loss": float(np.mean(losses)) if losses else 0.0,
                               **residual_errors(module, head, val)})
    return result


def _mean_loss(module, head, frames, train_config) -> float:
    if not frames:
        return 0.0
    vals = []
    for f in frames:
        tape = nn.Tape(record=False)
        vals.append(float(loss_var(tape, module, head, f, train_config).value[0, 0]))
    return float(np.mean(vals))


def median(values) -> float:
    return float(np.median(np.asarray(values, dtype=float)))

