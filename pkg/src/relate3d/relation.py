"""Inter-object relation module: a GNN over proposal graphs.

Node init fuses each proposal's RoI feature with its box through an MLP.
Each layer builds one message per directed edge ``(i, j)`` from
``[v_j - v_i, b_j - b_i, v_i]``, runs it through that layer's edge MLP and
max-pools messages per receiving node. The per-layer node states are
concatenated and projected to the output width.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import nn
from .geometry import Box3D, normalize_angle
from .rng import stream
from .spatial_graph import GraphStrategy, RelationGraph

BOX_DIM = 7
THETA = 6


# ---------------------------------------------------------------------------
# boxes as vectors
# ---------------------------------------------------------------------------

def encode_box(b: Box3D) -> np.ndarray:
    """``(x, y, z, h, w, l, theta)``."""
    return np.array([b.x, b.y, b.z, b.h, b.w, b.l, b.theta])


def decode_box(v) -> Box3D:
    return Box3D.from_array(v)


def encode_boxes(boxes) -> np.ndarray:
    if len(boxes) == 0:
        return np.zeros((0, BOX_DIM))
    return np.stack([encode_box(b) for b in boxes])


def wrap_angles(values) -> np.ndarray:
    return np.array([normalize_angle(v) for v in np.ravel(values)], dtype=float).reshape(np.shape(values))


def box_difference(b_j: Box3D, b_i: Box3D) -> np.ndarray:
    d = encode_box(b_j) - encode_box(b_i)
    d[THETA] = normalize_angle(d[THETA])
    return d


def box_differences(box_array: np.ndarray, receivers, senders) -> np.ndarray:
    """Row e is ``b[senders[e]] - b[receivers[e]]`` with a wrapped heading."""
    d = box_array[senders] - box_array[receivers]
    if len(d):
        d[:, THETA] = wrap_angles(d[:, THETA])
    return d


# ---------------------------------------------------------------------------
# data containers
# ---------------------------------------------------------------------------

@dataclass
class ProposalSet:
    boxes: list
    features: np.ndarray
    class_labels: list = None
    scores: np.ndarray = None

    def __post_init__(self):
        n = len(self.boxes)
        feats = np.asarray(self.features, dtype=float)
        if n:
            feats = feats.reshape(n, -1)
        else:
            feats = feats.reshape(0, feats.shape[-1] if feats.ndim == 2 else 0)
        self.features = feats
        if self.class_labels is None:
            self.class_labels = ["Car"] * n
        if self.scores is None:
            self.scores = np.ones(n)
        self.scores = np.asarray(self.scores, dtype=float)
        if not (len(self.features) == len(self.class_labels) == len(self.scores) == n):
            raise ValueError("proposal boxes, features, labels and scores must have equal length")

    def __len__(self):
        return len(self.boxes)

    @property
    def feature_dim(self) -> int:
        return self.features.shape[1]

    def centers(self) -> np.ndarray:
        return np.array([[b.x, b.y, b.z] for b in self.boxes]).reshape(-1, 3)

    def box_array(self) -> np.ndarray:
        return encode_boxes(self.boxes)

    def permute(self, perm) -> "ProposalSet":
        perm = np.asarray(perm, dtype=int)
        return ProposalSet([self.boxes[p] for p in perm], self.features[perm],
                           [self.class_labels[p] for p in perm], self.scores[perm])


# Box inputs are divided by a typical magnitude per component: 10 m for
# positions, 1 m for sizes. Absolute headings span the whole circle (1 rad),
# while headings of related neighbours differ by a few tenths (0.2 rad).
NODE_BOX_SCALE = (0.1, 0.1, 0.1, 1.0, 1.0, 1.0, 1.0)
DIFF_BOX_SCALE = (0.1, 0.1, 0.1, 1.0, 1.0, 1.0, 5.0)


@dataclass(frozen=True)
class RelationConfig:
    strategy: GraphStrategy = field(default_factory=GraphStrategy)
    num_layers: int = 4
    node_dim: int = 256
    input_feature_dim: int = 32
    output_dim: int = 256
    edge_hidden: tuple = None
    init_hidden: tuple = None
    head_hidden: tuple = (64,)
    use_init_box: bool = True
    use_box_diff: bool = True
    use_feature_append: bool = True
    center_whitening: bool = False
    node_box_scale: tuple = NODE_BOX_SCALE
    diff_box_scale: tuple = DIFF_BOX_SCALE

    def __post_init__(self):
        if self.num_layers < 1:
            raise ValueError("num_layers must be >= 1")
        for name in ("node_dim", "input_feature_dim", "output_dim"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.edge_hidden is None:
            object.__setattr__(self, "edge_hidden", (self.node_dim,))
        if self.init_hidden is None:
            object.__setattr__(self, "init_hidden", (self.node_dim,))
        for name in ("edge_hidden", "init_hidden", "head_hidden"):
            object.__setattr__(self, name, tuple(int(d) for d in getattr(self, name)))
        for name in ("node_box_scale", "diff_box_scale"):
            scale = tuple(float(v) for v in getattr(self, name))
            if len(scale) != BOX_DIM or not all(np.isfinite(v) and v > 0 for v in scale):
                raise ValueError(f"{name} needs {BOX_DIM} positive finite entries")
            object.__setattr__(self, name, scale)

    @property
    def init_in_dim(self) -> int:
        return self.input_feature_dim + (BOX_DIM if self.use_init_box else 0)

    @property
    def edge_in_dim(self) -> int:
        return 2 * self.node_dim + (BOX_DIM if self.use_box_diff else 0)

    @property
    def concat_dim(self) -> int:
        return (self.num_layers + 1 if self.use_feature_append else 1) * self.node_dim

    def with_flags(self, **flags) -> "RelationConfig":
        return replace(self, **flags)

    def to_json(self) -> dict:
        out = asdict(self)
        out["strategy"] = asdict(self.strategy)
        for name in ("edge_hidden", "init_hidden", "head_hidden", "node_box_scale", "diff_box_scale"):
            out[name] = list(out[name])
        return out

    @classmethod
    def from_json(cls, obj: dict) -> "RelationConfig":
        obj = dict(obj)
        obj["strategy"] = GraphStrategy(**obj.get("strategy", {}))
        return cls(**obj)


@dataclass
class RelationModule:
    config: RelationConfig
    init_mlp: nn.Parameters
    edge_mlps: list
    projection: nn.Parameters

    def __post_init__(self):
        cfg = self.config
        if self.init_mlp.spec.in_dim != cfg.init_in_dim or self.init_mlp.spec.out_dim != cfg.node_dim:
            raise nn.ShapeError("init MLP dims do not match config")
        if len(self.edge_mlps) != cfg.num_layers:
            raise nn.ShapeError(f"expected {cfg.num_layers} edge MLPs, got {len(self.edge_mlps)}")
        for p in self.edge_mlps:
            if p.spec.in_dim != cfg.edge_in_dim or p.spec.out_dim != cfg.node_dim:
                raise nn.ShapeError("edge MLP dims do not match config")
        if self.projection.spec.layer_dims != (cfg.concat_dim, cfg.output_dim):
            raise nn.ShapeError("projection dims do not match config")

    @classmethod
    def create(cls, config: RelationConfig, seed: int) -> "RelationModule":
        rng = stream(seed, "init/relation")
        cfg = config
        init = nn.init_params(nn.MlpSpec((cfg.init_in_dim, *cfg.init_hidden, cfg.node_dim)), rng)
        edges = [nn.init_params(nn.MlpSpec((cfg.edge_in_dim, *cfg.edge_hidden, cfg.node_dim)), rng)
                 for _ in range(cfg.num_layers)]
        proj = nn.init_params(nn.MlpSpec((cfg.concat_dim, cfg.output_dim)), rng)
        return cls(config, init, edges, proj)

    def parameters(self) -> list[np.ndarray]:
        out = self.init_mlp.arrays()
        for p in self.edge_mlps:
            out.extend(p.arrays())
        out.extend(self.projection.arrays())
        return out

    def to_json(self) -> dict:
        return {
            "format_version": 1,
            "config": self.config.to_json(),
            "init_mlp": self.init_mlp.to_json(),
            "edge_mlps": [p.to_json() for p in self.edge_mlps],
            "projection": self.projection.to_json(),
        }

    @classmethod
    def from_json(cls, obj: dict) -> "RelationModule":
        if obj.get("format_version") != 1:
            raise ValueError(f"unsupported checkpoint format_version {obj.get('format_version')!r}")
        return cls(
            RelationConfig.from_json(obj["config"]),
            nn.Parameters.from_json(obj["init_mlp"]),
            [nn.Parameters.from_json(p) for p in obj["edge_mlps"]],
            nn.Parameters.from_json(obj["projection"]),
        )


# ---------------------------------------------------------------------------
# forward pass
# ---------------------------------------------------------------------------

def _check_inputs(module: RelationModule, proposals: ProposalSet, graph: RelationGraph):
    cfg = module.config
    if len(proposals) and proposals.feature_dim != cfg.input_feature_dim:
        raise nn.ShapeError(
            f"proposal features have {proposals.feature_dim} columns, config expects {cfg.input_feature_dim}")
    if graph.num_nodes != len(proposals):
        raise nn.ShapeError(f"graph has {graph.num_nodes} nodes for {len(proposals)} proposals")


def node_box_inputs(config: RelationConfig, box_array: np.ndarray) -> np.ndarray:
    """Scaled box block fed to the init MLP, optionally with per-frame centered positions."""
    box_array = np.array(box_array, dtype=float).reshape(-1, BOX_DIM)
    if config.center_whitening and len(box_array):
        box_array[:, :3] -= box_array[:, :3].mean(axis=0)
    return box_array * np.asarray(config.node_box_scale)


def init_nodes_var(tape: nn.Tape, module: RelationModule, features: np.ndarray, node_boxes: np.ndarray):
    """``node_boxes`` is the output of :func:`node_box_inputs`."""
    cfg = module.config
    if len(features) == 0:
        return tape.constant(np.zeros((0, cfg.node_dim)))
    parts = [features]
    if cfg.use_init_box:
        parts.append(node_boxes)
    x = tape.constant(np.concatenate(parts, axis=1))
    return nn.mlp(tape, module.init_mlp, x)


def init_nodes(module: RelationModule, proposals: ProposalSet) -> np.ndarray:
    """Initial node states, one row per proposal."""
    if len(proposals) and proposals.feature_dim != module.config.input_feature_dim:
        raise nn.ShapeError(
            f"proposal features have {proposals.feature_dim} columns, "
            f"config expects {module.config.input_feature_dim}")
    tape = nn.Tape(record=False)
    node_boxes = node_box_inputs(module.config, proposals.box_array())
    return init_nodes_var(tape, module, proposals.features, node_boxes).value


@dataclass
class EdgeCache:
    """Graph-derived constants reused across layers and training epochs."""
    receivers: np.ndarray
    senders: np.ndarray
    starts: np.ndarray
    pooled_nodes: np.ndarray
    box_diffs: np.ndarray

    @classmethod
    def build(cls, graph: RelationGraph, box_array: np.ndarray, diff_scale=None) -> "EdgeCache":
        """``box_diffs`` are wrapped ``b_j - b_i`` times ``diff_scale`` (default 1)."""
        recv, send = graph.edge_arrays()
        deg = graph.degrees()
        pooled_nodes = np.flatnonzero(deg > 0)
        offsets = np.concatenate([[0], np.cumsum(deg)])[:-1]
        diffs = box_differences(box_array, recv, send) if len(recv) else np.zeros((0, BOX_DIM))
        if diff_scale is not None:
            diffs = diffs * np.asarray(diff_scale)
        return cls(recv, send, offsets[pooled_nodes].astype(int), pooled_nodes, diffs)


def layer_forward_var(tape: nn.Tape, module: RelationModule, layer: int, v, edges: EdgeCache):
    cfg = module.config
    if len(edges.receivers) == 0:
        return v
    v_i = nn.gather_rows(tape, v, edges.receivers)
    v_j = nn.gather_rows(tape, v, edges.senders)
    parts = [nn.sub(tape, v_j, v_i)]
    if cfg.use_box_diff:
        parts.append(tape.constant(edges.box_diffs))
    parts.append(v_i)
    messages = nn.mlp(tape, module.edge_mlps[layer], nn.concat_cols(tape, parts))
    pooled, _ = nn.segment_max(tape, messages, edges.starts)
    # isolated nodes keep their state
    return nn.scatter_rows(tape, v, pooled, edges.pooled_nodes)


def layer_forward(module: RelationModule, layer: int, v, boxes, graph: RelationGraph) -> np.ndarray:
    box_array = boxes if isinstance(boxes, np.ndarray) else encode_boxes(boxes)
    tape = nn.Tape(record=False)
    out = layer_forward_var(tape, module, layer, tape.constant(v), EdgeCache.build(graph, box_array, module.config.diff_box_scale))
    return out.value


def forward_var(tape: nn.Tape, module: RelationModule, features: np.ndarray, node_boxes: np.ndarray,
                edges: EdgeCache):
    """Refined features Var and the list of per-layer node-state Vars."""
    cfg = module.config
    states = [init_nodes_var(tape, module, features, node_boxes)]
    for layer in range(cfg.num_layers):
        states.append(layer_forward_var(tape, module, layer, states[-1], edges))
    if len(features) == 0:
        return tape.constant(np.zeros((0, cfg.output_dim))), states
    combined = nn.concat_cols(tape, states) if cfg.use_feature_append else states[-1]
    proj = module.projection
    out = nn.linear(tape, combined, tape.param(proj.weights[0]), tape.param(proj.biases[0]))
    return out, states


def forward(module: RelationModule, proposals: ProposalSet, graph: RelationGraph | None = None,
            tape: nn.Tape | None = None):
    """Returns ``(refined features n x output_dim, [V^0 .. V^L])``."""
    if graph is None:
        graph = module.config.strategy.build(proposals.centers())
    _check_inputs(module, proposals, graph)
    tape = tape if tape is not None else nn.Tape(record=False)
    box_array = proposals.box_array()
    out, states = forward_var(tape, module, proposals.features, node_box_inputs(module.config, box_array),
                              EdgeCache.build(graph, box_array, module.config.diff_box_scale))
    return out.value, [s.value for s in states]


# ---------------------------------------------------------------------------
# refinement head
# ---------------------------------------------------------------------------

MIN_SIZE = 1e-3


def create_head(config: RelationConfig, seed: int) -> nn.Parameters:
    """Head MLP whose output layer starts at zero, so an untrained head leaves proposals unchanged."""
    spec = nn.MlpSpec((config.output_dim, *config.head_hidden, BOX_DIM + 1))
    head = nn.init_params(spec, stream(seed, "init/head"))
    head.weights[-1][...] = 0.0
    return head


def zero_head(config: RelationConfig) -> nn.Parameters:
    head = create_head(config, 0)
    for a in head.arrays():
        a[...] = 0.0
    return head


def head_var(tape: nn.Tape, head_params: nn.Parameters, refined):
    return nn.mlp(tape, head_params, refined)


def refine_head_forward(head_params: nn.Parameters, refined: np.ndarray):
    """Per-proposal box residuals (n x 7) and confidence logits (n,)."""
    refined = np.asarray(refined, dtype=float)
    if len(refined) == 0:
        return np.zeros((0, BOX_DIM)), np.zeros(0)
    out, _ = nn.mlp_forward(head_params.spec, head_params, refined, nn.Tape(record=False))
    return out[:, :BOX_DIM], out[:, BOX_DIM]


def apply_residuals(boxes, residuals) -> list[Box3D]:
    """Add residuals to boxes; heading is re-wrapped and sizes kept positive."""
    out = []
    for b, r in zip(boxes, np.asarray(residuals, dtype=float).reshape(-1, BOX_DIM)):
        v = encode_box(b) + r
        v[3:6] = np.maximum(v[3:6], MIN_SIZE)
        out.append(decode_box(v))
    return out


def refine(module: RelationModule, head: nn.Parameters, proposals: ProposalSet,
           graph: RelationGraph | None = None):
    """Refined boxes and confidence scores for one frame."""
    refined, _ = forward(module, proposals, graph)
    residuals, logits = refine_head_forward(head, refined)
    return apply_residuals(proposals.boxes, residuals), nn.sigmoid(logits)


def heading_error(pred: float, truth: float) -> float:
    return abs(normalize_angle(pred - truth))

