"""A small dense reverse-mode autodiff engine in float64.

Values are 2-D numpy arrays. Each op returns a :class:`Var`; when the tape
is recording, the op also appends a backward closure. :meth:`Tape.backward`
replays the closures in reverse, exactly once each.

Forward matrix products use ``np.einsum`` rather than BLAS ``@`` because
BLAS tiling makes a row's result depend on its position in the batch, and
the relation module promises bitwise permutation equivariance.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

_LINEAR_SUBSCRIPTS = "ij,jk->ik"


class ShapeError(ValueError):
    pass


class Var:
    __slots__ = ("value", "grad", "requires_grad", "__weakref__")

    def __init__(self, value, requires_grad: bool = False):
        self.value = value
        self.grad = None
        self.requires_grad = requires_grad

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        return f"Var(shape={self.value.shape})"


class Tape:
    """Records backward closures for one forward pass.

    ``kink_margin`` tracks how close any ReLU input, max-pool runner-up or
    smooth-L1 breakpoint came to its non-differentiable point; finite
    difference checks should only be trusted when it exceeds the step size.
    """

    def __init__(self, record: bool = True):
        self.record = record
        self._ops: list = []
        self._params: dict[int, Var] = {}
        self.kink_margin = np.inf
        self.output: Var | None = None
        self._replayed = False

    def __len__(self):
        return len(self._ops)

    def param(self, array: np.ndarray) -> Var:
        """Leaf for a parameter array; the same array always maps to the same Var."""
        key = id(array)
        var = self._params.get(key)
        if var is None:
            var = Var(array, requires_grad=self.record)
            self._params[key] = var
        return var

    def constant(self, array) -> Var:
        return Var(np.asarray(array, dtype=float))

    def input(self, array) -> Var:
        return Var(np.asarray(array, dtype=float), requires_grad=self.record)

    def push(self, out: Var, backward_fn) -> Var:
        if self.record:
            self._ops.append((out, backward_fn))
        self.output = out
        return out

    def note_margin(self, values) -> None:
        if self.record and np.size(values):
            self.kink_margin = min(self.kink_margin, float(np.min(np.abs(values))))

    def backward(self, output_grad=None, output: Var | None = None) -> "Gradients":
        if not self.record:
            raise RuntimeError("tape was not recording")
        if self._replayed:
            raise RuntimeError("tape already replayed")
        output = output if output is not None else self.output
        if output is None:
            raise RuntimeError("empty tape")
        if output_grad is None:
            output_grad = np.ones_like(output.value)
        output_grad = np.asarray(output_grad, dtype=float)
        if output_grad.shape != output.value.shape:
            raise ShapeError(
                f"output_grad shape {output_grad.shape} does not match output {output.value.shape}")
        output.grad = output_grad.copy()
        for out, fn in reversed(self._ops):
            if out.grad is not None:
                fn(out.grad)
        self._replayed = True
        return Gradients({key: var.grad if var.grad is not None else np.zeros_like(var.value)
                          for key, var in self._params.items()})


@dataclass
class Gradients:
    """Parameter gradients keyed by ``id`` of the parameter array."""
    by_id: dict

    def __getitem__(self, array: np.ndarray) -> np.ndarray:
        return self.by_id.get(id(array), np.zeros_like(array))

    def for_params(self, arrays) -> list[np.ndarray]:
        return [self[a] for a in arrays]


def backward(tape: Tape, output_grad) -> Gradients:
    return tape.backward(output_grad)


def _accumulate(var: Var, g: np.ndarray) -> None:
    if not var.requires_grad:
        return
    if var.grad is None:
        var.grad = np.array(g, dtype=float, copy=True)
    else:
        var.grad += g


def _wants_grad(*vars_) -> bool:
    return any(v.requires_grad for v in vars_)


# ---------------------------------------------------------------------------
# primitive ops
# ---------------------------------------------------------------------------

def linear(tape: Tape, x: Var, w: Var, b: Var) -> Var:
    """Row-wise affine map ``x @ w + b``."""
    if x.value.ndim != 2 or x.value.shape[1] != w.value.shape[0]:
        raise ShapeError(f"linear: expected input with {w.value.shape[0]} columns, got shape {x.value.shape}")
    out = Var(np.einsum(_LINEAR_SUBSCRIPTS, x.value, w.value) + b.value,
              requires_grad=_wants_grad(x, w, b))

    def fn(g):
        if x.requires_grad:
            _accumulate(x, g @ w.value.T)
        _accumulate(w, x.value.T @ g)
        _accumulate(b, g.sum(axis=0, keepdims=True))

    return tape.push(out, fn)


def relu(tape: Tape, x: Var) -> Var:
    tape.note_margin(x.value)
    mask = x.value > 0
    out = Var(np.where(mask, x.value, 0.0), requires_grad=x.requires_grad)

    def fn(g):
        _accumulate(x, g * mask)

    return tape.push(out, fn)


def add(tape: Tape, a: Var, b: Var) -> Var:
    out = Var(a.value + b.value, requires_grad=_wants_grad(a, b))

    def fn(g):
        _accumulate(a, g)
        _accumulate(b, g)

    return tape.push(out, fn)


def sub(tape: Tape, a: Var, b: Var) -> Var:
    out = Var(a.value - b.value, requires_grad=_wants_grad(a, b))

    def fn(g):
        _accumulate(a, g)
        _accumulate(b, -g)

    return tape.push(out, fn)


def mul(tape: Tape, a: Var, b: Var) -> Var:
    out = Var(a.value * b.value, requires_grad=_wants_grad(a, b))

    def fn(g):
        _accumulate(a, _unbroadcast(g * b.value, a.value.shape))
        _accumulate(b, _unbroadcast(g * a.value, b.value.shape))

    return tape.push(out, fn)


def _unbroadcast(g, shape):
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def concat_cols(tape: Tape, parts: list[Var]) -> Var:
    widths = [p.value.shape[1] for p in parts]
    out = Var(np.concatenate([p.value for p in parts], axis=1), requires_grad=_wants_grad(*parts))
    offsets = np.cumsum([0] + widths)

    def fn(g):
        for p, lo, hi in zip(parts, offsets[:-1], offsets[1:]):
            _accumulate(p, g[:, lo:hi])

    return tape.push(out, fn)


def slice_cols(tape: Tape, x: Var, lo: int, hi: int) -> Var:
    out = Var(x.value[:, lo:hi], requires_grad=x.requires_grad)

    def fn(g):
        full = np.zeros_like(x.value)
        full[:, lo:hi] = g
        _accumulate(x, full)

    return tape.push(out, fn)


def gather_rows(tape: Tape, x: Var, index) -> Var:
    index = np.asarray(index, dtype=int)
    out = Var(x.value[index], requires_grad=x.requires_grad)

    def fn(g):
        full = np.zeros_like(x.value)
        np.add.at(full, index, g)
        _accumulate(x, full)

    return tape.push(out, fn)


def scatter_rows(tape: Tape, base: Var, rows: Var, index) -> Var:
    """Copy of ``base`` with ``base[index] = rows``."""
    index = np.asarray(index, dtype=int)
    value = base.value.copy()
    value[index] = rows.value
    out = Var(value, requires_grad=_wants_grad(base, rows))

    def fn(g):
        gb = g.copy()
        gb[index] = 0.0
        _accumulate(base, gb)
        _accumulate(rows, g[index])

    return tape.push(out, fn)


def segment_max(tape: Tape, rows: Var, starts) -> tuple[Var, np.ndarray]:
    """Column-wise max over consecutive row segments beginning at ``starts``.

    Returns the pooled rows and, per segment and column, the row that won.
    Exact ties go to the lowest row index.
    """
    values = rows.value
    starts = np.asarray(starts, dtype=int)
    n_rows = len(values)
    if len(starts) == 0:
        return tape.push(Var(np.zeros((0, values.shape[1])), rows.requires_grad), lambda g: None), \
            np.zeros((0, values.shape[1]), dtype=int)
    ends = np.append(starts[1:], n_rows)
    if np.any(ends <= starts):
        raise ValueError("max pooling over an empty group")
    pooled = np.maximum.reduceat(values, starts, axis=0)
    seg_of_row = np.repeat(np.arange(len(starts)), ends - starts)
    hit = values == pooled[seg_of_row]
    row_ids = np.where(hit, np.arange(n_rows)[:, None], n_rows)
    argmax = np.minimum.reduceat(row_ids, starts, axis=0)
    if tape.record:
        # gap to the runner-up; a near tie is a kink for finite differences
        masked = np.where(np.arange(n_rows)[:, None] == argmax[seg_of_row], -np.inf, values)
        runner_up = np.maximum.reduceat(masked, starts, axis=0)
        multi = (ends - starts) > 1
        tape.note_margin((pooled - runner_up)[multi])
    out = Var(pooled, requires_grad=rows.requires_grad)
    cols = np.arange(values.shape[1])

    def fn(g):
        full = np.zeros_like(values)
        np.add.at(full, (argmax, np.broadcast_to(cols, argmax.shape)), g)
        _accumulate(rows, full)

    return tape.push(out, fn), argmax


def max_pool_groups(tape: Tape, rows: Var, groups) -> tuple[Var, np.ndarray]:
    """One output row per group: the column-wise max over the group's rows.

    Returns the pooled Var and the (group, column) argmax row indices into ``rows``.
    """
    groups = [list(g) for g in groups]
    for k, grp in enumerate(groups):
        if not grp:
            raise ValueError(f"max pooling over an empty group (group {k})")
    flat = np.array([r for grp in groups for r in grp], dtype=int)
    if flat.size and (flat.min() < 0 or flat.max() >= len(rows.value)):
        raise IndexError("group row index out of range")
    # gather in ascending row order within each group so ties resolve to the lowest row
    flat = np.concatenate([np.sort(np.asarray(g, dtype=int)) for g in groups]) if groups else flat
    starts = np.cumsum([0] + [len(g) for g in groups[:-1]]) if groups else np.zeros(0, dtype=int)
    gathered = gather_rows(tape, rows, flat)
    pooled, local = segment_max(tape, gathered, starts)
    return pooled, flat[local] if local.size else local


def total(tape: Tape, x: Var) -> Var:
    """Sum of all entries as a 1x1 Var."""
    out = Var(np.array([[x.value.sum()]]), requires_grad=x.requires_grad)

    def fn(g):
        _accumulate(x, np.full_like(x.value, g[0, 0]))

    return tape.push(out, fn)


def scale(tape: Tape, x: Var, c: float) -> Var:
    out = Var(x.value * c, requires_grad=x.requires_grad)

    def fn(g):
        _accumulate(x, g * c)

    return tape.push(out, fn)


def smooth_l1(tape: Tape, pred: Var, target: np.ndarray, beta: float) -> Var:
    """Elementwise smooth-L1 of ``pred - target``."""
    diff = pred.value - target
    tape.note_margin(np.abs(diff) - beta)
    absd = np.abs(diff)
    quad = absd < beta
    out = Var(np.where(quad, 0.5 * diff ** 2 / beta, absd - 0.5 * beta), requires_grad=pred.requires_grad)

    def fn(g):
        _accumulate(pred, g * np.where(quad, diff / beta, np.sign(diff)))

    return tape.push(out, fn)


def bce_with_logits(tape: Tape, logits: Var, labels: np.ndarray) -> Var:
    z = logits.value
    out = Var(np.maximum(z, 0.0) - z * labels + np.log1p(np.exp(-np.abs(z))),
              requires_grad=logits.requires_grad)

    def fn(g):
        _accumulate(logits, g * (_sigmoid(z) - labels))

    return tape.push(out, fn)


def _sigmoid(z):
    return np.where(z >= 0, 1.0 / (1.0 + np.exp(-np.abs(z))), np.exp(-np.abs(z)) / (1.0 + np.exp(-np.abs(z))))


sigmoid = _sigmoid


# ---------------------------------------------------------------------------
# MLPs
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class MlpSpec:
    """Layer widths, input first. ReLU on hidden layers, none on the output."""
    layer_dims: tuple

    def __post_init__(self):
        dims = tuple(int(d) for d in self.layer_dims)
        if len(dims) < 2:
            raise ValueError("an MLP needs at least an input and an output width")
        if min(dims) < 1:
            raise ValueError(f"all widths must be >= 1, got {dims}")
        object.__setattr__(self, "layer_dims", dims)

    @property
    def in_dim(self) -> int:
        return self.layer_dims[0]

    @property
    def out_dim(self) -> int:
        return self.layer_dims[-1]


@dataclass
class Parameters:
    spec: MlpSpec
    weights: list = field(default_factory=list)
    biases: list = field(default_factory=list)

    def __post_init__(self):
        dims = self.spec.layer_dims
        if len(self.weights) != len(dims) - 1 or len(self.biases) != len(dims) - 1:
            raise ShapeError("parameter count does not match spec")
        for k, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.shape != (dims[k], dims[k + 1]) or b.shape != (1, dims[k + 1]):
                raise ShapeError(
                    f"layer {k}: expected W{(dims[k], dims[k + 1])} b{(1, dims[k + 1])}, "
                    f"got W{w.shape} b{b.shape}")

    def arrays(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend((w, b))
        return out

    def copy(self) -> "Parameters":
        return Parameters(self.spec, [w.copy() for w in self.weights], [b.copy() for b in self.biases])

    def to_json(self) -> dict:
        return {
            "format_version": 1,
            "dims": list(self.spec.layer_dims),
            "weights": [w.ravel().tolist() for w in self.weights],
            "biases": [b.ravel().tolist() for b in self.biases],
        }

    @classmethod
    def from_json(cls, obj) -> "Parameters":
        if isinstance(obj, str):
            obj = json.loads(obj)
        if obj.get("format_version") != 1:
            raise ValueError(f"unsupported parameter format_version {obj.get('format_version')!r}")
        spec = MlpSpec(tuple(obj["dims"]))
        dims = spec.layer_dims
        weights, biases = [], []
        for k, (w, b) in enumerate(zip(obj["weights"], obj["biases"])):
            w = np.asarray(w, dtype=float)
            b = np.asarray(b, dtype=float)
            if w.size != dims[k] * dims[k + 1] or b.size != dims[k + 1]:
                raise ShapeError(f"layer {k}: flat sizes do not match dims {dims}")
            weights.append(w.reshape(dims[k], dims[k + 1]))
            biases.append(b.reshape(1, dims[k + 1]))
        return cls(spec, weights, biases)


def init_params(spec: MlpSpec, seed) -> Parameters:
    """Uniform(+-sqrt(6 / fan_in)) weights, zero biases."""
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    dims = spec.layer_dims
    weights, biases = [], []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        bound = np.sqrt(6.0 / fan_in)
        weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
        biases.append(np.zeros((1, fan_out)))
    return Parameters(spec, weights, biases)


def mlp(tape: Tape, params: Parameters, x: Var) -> Var:
    dims = params.spec.layer_dims
    if x.value.ndim != 2 or x.value.shape[1] != dims[0]:
        raise ShapeError(f"MLP expects input width {dims[0]}, got shape {x.value.shape}")
    h = x
    last = len(params.weights) - 1
    for k, (w, b) in enumerate(zip(params.weights, params.biases)):
        h = linear(tape, h, tape.param(w), tape.param(b))
        if k < last:
            h = relu(tape, h)
    return h


def mlp_forward(spec: MlpSpec, params: Parameters, inputs, tape: Tape | None = None):
    """Evaluate an MLP row-wise; returns ``(output array, tape)``."""
    if params.spec != spec:
        raise ShapeError(f"parameters built for {params.spec.layer_dims}, spec is {spec.layer_dims}")
    tape = tape if tape is not None else Tape()
    x = inputs if isinstance(inputs, Var) else tape.input(np.atleast_2d(np.asarray(inputs, dtype=float)))
    out = mlp(tape, params, x)
    return out.value, tape


# ---------------------------------------------------------------------------
# finite differences
# ---------------------------------------------------------------------------

def finite_difference_check(loss_fn, arrays, analytic, step: float = 1e-5) -> float:
    """Largest ``|analytic - central| / max(1, |central|)`` over every entry.

    ``loss_fn()`` must read the parameter arrays in place; each entry is
    nudged by +-step and restored.
    """
    worst = 0.0
    for arr, grad in zip(arrays, analytic):
        flat = arr.reshape(-1)
        gflat = np.asarray(grad).reshape(-1)
        for idx in range(flat.size):
            orig = flat[idx]
            flat[idx] = orig + step
            up = loss_fn()
            flat[idx] = orig - step
            down = loss_fn()
            flat[idx] = orig
            central = (up - down) / (2.0 * step)
            err = abs(gflat[idx] - central) / max(1.0, abs(central))
            worst = max(worst, err)
    return worst


# ---------------------------------------------------------------------------
# Adam
# ---------------------------------------------------------------------------

@dataclass
class AdamState:
    lr: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    warmup_steps: int = 0
    total_steps: int = 0
    min_lr_ratio: float = 0.01
    step: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)

    def current_lr(self) -> float:
        """Linear warmup, then cosine decay to ``min_lr_ratio * lr`` if ``total_steps`` is set."""
        if self.warmup_steps and self.step <= self.warmup_steps:
            return self.lr * self.step / self.warmup_steps
        if self.total_steps <= self.warmup_steps:
            return self.lr
        frac = min(1.0, (self.step - self.warmup_steps) / (self.total_steps - self.warmup_steps))
        low = self.min_lr_ratio * self.lr
        return low + 0.5 * (self.lr - low) * (1.0 + math.cos(math.pi * frac))


def adam_step(state: AdamState, params: list[np.ndarray], grads: list[np.ndarray]) -> list[np.ndarray]:
    """Bias-corrected Adam update applied in place; returns ``params``."""
    if not state.m:
        state.m = [np.zeros_like(p) for p in params]
        state.v = [np.zeros_like(p) for p in params]
    if len(params) != len(state.m) or len(grads) != len(params):
        raise ShapeError("parameter/gradient/moment counts differ")
    state.step += 1
    lr = state.current_lr()
    c1 = 1.0 - state.beta1 ** state.step
    c2 = 1.0 - state.beta2 ** state.step
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if p.shape != g.shape or p.shape != m.shape:
            raise ShapeError(f"shape mismatch: param {p.shape}, grad {g.shape}")
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        p -= lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return params
