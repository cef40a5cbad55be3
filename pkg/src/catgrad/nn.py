"""A small tape-based reverse-mode autodiff over numpy arrays.

Only what the dense pipelines need: matmul, bias, a few activations,
row softmax, elementwise arithmetic, reductions and two losses.  Arrays are
float64 throughout.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np


class Node:
    __slots__ = ("value", "grad", "param")

    def __init__(self, value, param: str | None = None):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad = None
        self.param = param

    @property
    def shape(self):
        return self.value.shape

    def _acc(self, g):
        self.grad = g if self.grad is None else self.grad + g


class Tape:
    """Records primitives during a forward pass; :meth:`backward` replays them in reverse."""

    def __init__(self):
        self._ops: list[Callable[[], None]] = []
        self.leaves: list[Node] = []
        self.consumed = False

    def leaf(self, value, param: str | None = None) -> Node:
        node = Node(value, param)
        self.leaves.append(node)
        return node

    def _record(self, out: Node, fn: Callable[[Node], None]) -> Node:
        self._ops.append(lambda: fn(out) if out.grad is not None else None)
        return out

    def matmul(self, a: Node, b: Node) -> Node:
        if a.shape[-1] != b.shape[0]:
            raise ValueError(f"matmul shapes {a.shape} and {b.shape} do not align")

        def back(o):
            a._acc(o.grad @ b.value.T)
            b._acc(a.value.T @ o.grad)
        return self._record(Node(a.value @ b.value), back)

    def add_bias(self, a: Node, b: Node) -> Node:
        if a.shape[-1] != b.shape[-1]:
            raise ValueError(f"bias of shape {b.shape} does not match {a.shape}")

        def back(o):
            a._acc(o.grad)
            b._acc(o.grad.sum(axis=0))
        return self._record(Node(a.value + b.value), back)

    def add(self, a: Node, b: Node) -> Node:
        def back(o):
            a._acc(o.grad)
            b._acc(o.grad)
        return self._record(Node(a.value + b.value), back)

    def sub(self, a: Node, b: Node) -> Node:
        def back(o):
            a._acc(o.grad)
            b._acc(-o.grad)
        return self._record(Node(a.value - b.value), back)

    def mul(self, a: Node, b: Node) -> Node:
        def back(o):
            a._acc(o.grad * b.value)
            b._acc(o.grad * a.value)
        return self._record(Node(a.value * b.value), back)

    def scale(self, a: Node, c: float) -> Node:
        return self._record(Node(a.value * c), lambda o: a._acc(o.grad * c))

    def relu(self, a: Node) -> Node:
        mask = a.value > 0
        return self._record(Node(a.value * mask), lambda o: a._acc(o.grad * mask))

    def sigmoid(self, a: Node) -> Node:
        s = 0.5 * (1.0 + np.tanh(0.5 * a.value))
        return self._record(Node(s), lambda o: a._acc(o.grad * s * (1.0 - s)))

    def softmax(self, a: Node) -> Node:
        z = a.value - a.value.max(axis=-1, keepdims=True)
        e = np.exp(z)
        s = e / e.sum(axis=-1, keepdims=True)

        def back(o):
            a._acc(s * (o.grad - (o.grad * s).sum(axis=-1, keepdims=True)))
        return self._record(Node(s), back)

    def log_softmax(self, a: Node) -> Node:
        z = a.value - a.value.max(axis=-1, keepdims=True)
        ls = z - np.log(np.exp(z).sum(axis=-1, keepdims=True))
        s = np.exp(ls)

        def back(o):
            a._acc(o.grad - s * o.grad.sum(axis=-1, keepdims=True))
        return self._record(Node(ls), back)

    def sum(self, a: Node, axis=None) -> Node:
        def back(o):
            g = o.grad if axis is None else np.expand_dims(o.grad, axis)
            a._acc(np.broadcast_to(g, a.shape).copy())
        return self._record(Node(a.value.sum(axis=axis)), back)

    def mean(self, a: Node, axis=None) -> Node:
        count = a.value.size if axis is None else a.shape[axis]
        return self.scale(self.sum(a, axis), 1.0 / count)

    def bce_with_logits(self, logits: Node, targets) -> Node:
        """Per-row log-likelihood sum_j t log s(l) + (1 - t) log(1 - s(l))."""
        t = np.asarray(targets, dtype=np.float64)
        l = logits.value
        ll = t * l - np.logaddexp(0.0, l)
        s = 0.5 * (1.0 + np.tanh(0.5 * l))

        def back(o):
            logits._acc(o.grad[..., None] * (t - s))
        return self._record(Node(ll.sum(axis=-1)), back)

    def squared_error(self, a: Node, targets) -> Node:
        t = np.asarray(targets, dtype=np.float64)
        diff = a.value - t
        return self._record(Node((diff ** 2).sum(axis=-1)),
                            lambda o: a._acc(2.0 * o.grad[..., None] * diff))

    def backward(self, out: Node, upstream) -> None:
        if self.consumed:
            raise RuntimeError("tape has already been consumed by backward")
        upstream = np.asarray(upstream, dtype=np.float64)
        if upstream.shape != out.shape:
            raise ValueError(f"upstream shape {upstream.shape} != output shape {out.shape}")
        self.consumed = True
        out.grad = upstream
        for op in reversed(self._ops):
            op()


class ParamStore:
    """Named float64 arrays with a gradient accumulator per array."""

    def __init__(self, arrays: dict | None = None):
        self.values: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}
        for k, v in (arrays or {}).items():
            self[k] = v

    def __setitem__(self, name, value):
        self.values[name] = np.array(value, dtype=np.float64)
        self.grads[name] = np.zeros_like(self.values[name])

    def __getitem__(self, name):
        return self.values[name]

    def __contains__(self, name):
        return name in self.values

    def __iter__(self):
        return iter(self.values)

    def names(self):
        return list(self.values)

    def zero_grad(self) -> None:
        for g in self.grads.values():
            g[...] = 0.0

    def copy(self) -> "ParamStore":
        out = ParamStore(self.values)
        for k, g in self.grads.items():
            out.grads[k] = g.copy()
        return out

    def flat(self) -> np.ndarray:
        return np.concatenate([v.ravel() for v in self.values.values()])

    def flat_grad(self) -> np.ndarray:
        return np.concatenate([g.ravel() for g in self.grads.values()])

    def size(self) -> int:
        return sum(v.size for v in self.values.values())

    def save(self, path) -> None:
        """Write ``<path>.bin`` (raw little-endian float64) and ``<path>.json`` (manifest)."""
        path = Path(path)
        manifest, offset = [], 0
        for name, v in self.values.items():
            manifest.append({"name": name, "shape": list(v.shape), "offset": offset})
            offset += v.size
        blob = np.concatenate([v.ravel() for v in self.values.values()]) if manifest \
            else np.zeros(0)
        blob.astype("<f8").tofile(path.with_suffix(".bin"))
        path.with_suffix(".json").write_text(
            json.dumps({"format": "catgrad-params", "version": 1, "dtype": "<f8",
                        "arrays": manifest}, indent=1))

    @classmethod
    def load(cls, path) -> "ParamStore":
        path = Path(path)
        manifest = json.loads(path.with_suffix(".json").read_text())
        blob = np.fromfile(path.with_suffix(".bin"), dtype=manifest["dtype"])
        store = cls()
        for entry in manifest["arrays"]:
            size = int(np.prod(entry["shape"], dtype=np.int64))
            store[entry["name"]] = blob[entry["offset"]:entry["offset"] + size].reshape(entry["shape"])
        return store


@dataclass(frozen=True)
class Dense:
    name: str
    n_in: int
    n_out: int
    activation: str | None = None


ACTIVATIONS = {None: None, "linear": None, "relu": "relu", "sigmoid": "sigmoid",
               "softmax": "softmax"}


def mlp(name: str, sizes: Sequence[int], hidden_activation: str = "relu",
        out_activation: str | None = None) -> list[Dense]:
    layers = []
    for i, (a, b) in enumerate(zip(sizes[:-1], sizes[1:])):
        act = out_activation if i == len(sizes) - 2 else hidden_activation
        layers.append(Dense(f"{name}{i}", a, b, act))
    return layers


def init_params(layers: Sequence[Dense], rng, store: ParamStore | None = None) -> ParamStore:
    """Glorot-uniform weights, zero biases."""
    store = store if store is not None else ParamStore()
    for layer in layers:
        limit = np.sqrt(6.0 / (layer.n_in + layer.n_out))
        store[f"{layer.name}.W"] = rng.uniform(-limit, limit, (layer.n_in, layer.n_out))
        store[f"{layer.name}.b"] = np.zeros(layer.n_out)
    return store


def apply_layers(tape: Tape, params: ParamStore, layers: Sequence[Dense], h: Node) -> Node:
    for layer in layers:
        if h.shape[-1] != layer.n_in:
            raise ValueError(f"layer {layer.name!r} expects {layer.n_in} inputs, "
                             f"got {h.shape[-1]}")
        W = params[f"{layer.name}.W"]
        if W.shape != (layer.n_in, layer.n_out):
            raise ValueError(f"layer {layer.name!r} weight has shape {W.shape}")
        h = tape.matmul(h, tape.leaf(W, f"{layer.name}.W"))
        h = tape.add_bias(h, tape.leaf(params[f"{layer.name}.b"], f"{layer.name}.b"))
        act = ACTIVATIONS[layer.activation]
        if act is not None:
            h = getattr(tape, act)(h)
    return h


@dataclass
class Forward:
    output: np.ndarray
    tape: Tape
    out_node: Node
    input_node: Node


def forward(params: ParamStore, layers: Sequence[Dense], x) -> Forward:
    tape = Tape()
    inp = tape.leaf(np.asarray(x, dtype=np.float64))
    out = apply_layers(tape, params, layers, inp)
    return Forward(out.value, tape, out, inp)


def backward(fwd: Forward, upstream, params: ParamStore | None = None) -> np.ndarray:
    """Run the tape backwards, add parameter gradients into ``params``; return d/d input."""
    fwd.tape.backward(fwd.out_node, upstream)
    if params is not None:
        accumulate(fwd.tape, params)
    g = fwd.input_node.grad
    return np.zeros_like(fwd.input_node.value) if g is None else g


def accumulate(tape: Tape, params: ParamStore) -> None:
    for leaf in tape.leaves:
        if leaf.param is not None and leaf.grad is not None:
            params.grads[leaf.param] += leaf.grad


@dataclass
class OptimState:
    kind: str
    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    rho: float = 0.9
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam(lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999,
         eps: float = 1e-8) -> OptimState:
    return OptimState("adam", lr, beta1=beta1, beta2=beta2, eps=eps)


def rmsprop(lr: float = 1e-3, rho: float = 0.9, eps: float = 1e-7) -> OptimState:
    return OptimState("rmsprop", lr, rho=rho, eps=eps)


def _check_finite(grads: dict) -> None:
    bad = [k for k, g in grads.items() if not np.all(np.isfinite(g))]
    if bad:
        raise FloatingPointError(f"non-finite gradient in {', '.join(bad)}")


def adam_step(state: OptimState, params: dict, grads: dict) -> None:
    """In-place Adam update (descent) with bias correction."""
    _check_finite(grads)
    state.step += 1
    t = state.step
    for k, g in grads.items():
        m = state.m.setdefault(k, np.zeros_like(g))
        v = state.v.setdefault(k, np.zeros_like(g))
        m *= state.beta1
        m += (1 - state.beta1) * g
        v *= state.beta2
        v += (1 - state.beta2) * g * g
        m_hat = m / (1 - state.beta1 ** t)
        v_hat = v / (1 - state.beta2 ** t)
        p = params[k]
        p -= state.lr * m_hat / (np.sqrt(v_hat) + state.eps)


def rmsprop_step(state: OptimState, params: dict, grads: dict) -> None:
    _check_finite(grads)
    state.step += 1
    for k, g in grads.items():
        v = state.v.setdefault(k, np.zeros_like(g))
        v *= state.rho
        v += (1 - state.rho) * g * g
        p = params[k]
        p -= state.lr * g / (np.sqrt(v) + state.eps)


def optimizer_step(state: OptimState, params: dict, grads: dict) -> None:
    """Dispatch on ``state.kind``; overflowing parameters are left for the caller to detect."""
    step = {"adam": adam_step, "rmsprop": rmsprop_step}.get(state.kind)
    if step is None:
        raise ValueError(f"unknown optimizer {state.kind!r}")
    with np.errstate(over="ignore"):
        step(state, params, grads)


def make_optimizer(name: str, lr: float) -> OptimState:
    if name == "adam":
        return adam(lr)
    if name == "rmsprop":
        return rmsprop(lr)
    raise ValueError(f"unknown optimizer {name!r}")


@dataclass
class GradCheck:
    passed: bool
    max_rel_error: float
    checked: int
    worst: tuple | None = None


def finite_diff_check(loss_and_grad: Callable[[ParamStore], tuple], params: ParamStore,
                      h: float = 1e-4, tol: float = 1e-4, n_coords: int = 50,
                      rng=None, floor: float = 1e-6) -> GradCheck:
    """Compare analytic gradients with central differences on sampled coordinates.

    ``loss_and_grad(params)`` returns (loss, {name: grad}).  The relative
    error is |a - n| / max(|a|, |n|, floor).
    """
    if h <= 0:
        raise ValueError("step h must be positive")
    rng = rng if rng is not None else np.random.default_rng(0)
    _, grads = loss_and_grad(params)
    coords = [(k, i) for k in params.names() for i in range(params[k].size)]
    if len(coords) > n_coords:
        pick = rng.choice(len(coords), n_coords, replace=False)
        coords = [coords[i] for i in sorted(pick)]
    worst, worst_err = None, 0.0
    for name, i in coords:
        arr = params.values[name].reshape(-1)
        orig = arr[i]
        arr[i] = orig + h
        lp, _ = loss_and_grad(params)
        arr[i] = orig - h
        lm, _ = loss_and_grad(params)
        arr[i] = orig
        numeric = (lp - lm) / (2 * h)
        analytic = float(np.reshape(grads[name], -1)[i])
        err = abs(analytic - numeric) / max(abs(analytic), abs(numeric), floor)
        if err > worst_err or worst is None:
            worst, worst_err = (name, i, analytic, numeric), err
    return GradCheck(worst_err < tol, float(worst_err), len(coords), worst)
