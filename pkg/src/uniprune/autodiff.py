"""Reverse-mode automatic differentiation over dense float64 arrays.

A ``Graph`` is a flat list of nodes in topological order: placeholders are
bound per call, parameters carry their current value (and may be trainable),
and every op node records its kind plus input node ids.  ``forward`` evaluates
all nodes and caches the results on the graph; ``backward`` runs reverse
accumulation from a scalar loss and returns one gradient per trainable
parameter.  Everything is float64 and single-threaded, so repeated runs on the
same inputs are bit-identical.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

Array = np.ndarray


class NonFiniteError(ArithmeticError):
    """Raised when an op produces NaN or Inf, or a non-finite value is bound."""


@dataclass
class Node:
    op: str
    inputs: tuple[int, ...] = ()
    name: str | None = None
    value: Array | None = None  # constants and current parameter values
    trainable: bool = False
    attrs: dict = field(default_factory=dict)


def _as_f8(value) -> Array:
    out = np.asarray(value, dtype=np.float64)
    if not np.isfinite(out).all():
        raise NonFiniteError("non-finite value")
    return out


class Graph:
    """Static computation graph; build once, bind placeholders per call."""

    def __init__(self) -> None:
        self.nodes: list[Node] = []
        self.params: dict[str, int] = {}  # parameter name -> node id
        self.placeholders: dict[str, int] = {}
        self._values: list[Array] | None = None
        self._needs_grad: list[bool] | None = None

    def _add(self, node: Node) -> int:
        self.nodes.append(node)
        self._needs_grad = None
        return len(self.nodes) - 1

    # -- leaves ------------------------------------------------------------

    def placeholder(self, name: str, shape: tuple[int, ...], integer: bool = False) -> int:
        if name in self.placeholders:
            raise ValueError(f"duplicate placeholder {name!r}")
        nid = self._add(Node("placeholder", name=name,
                             attrs={"shape": tuple(shape), "integer": integer}))
        self.placeholders[name] = nid
        return nid

    def parameter(self, name: str, value, trainable: bool = True) -> int:
        if name in self.params:
            raise ValueError(f"duplicate parameter {name!r}")
        nid = self._add(Node("parameter", name=name, value=_as_f8(value),
                             trainable=trainable))
        self.params[name] = nid
        return nid

    def constant(self, value) -> int:
        value = np.asarray(value)
        if not np.issubdtype(value.dtype, np.integer):
            value = _as_f8(value)
        return self._add(Node("constant", value=value))

    def get_param(self, name: str) -> Array:
        return self.nodes[self.params[name]].value

    def set_param(self, name: str, value) -> None:
        node = self.nodes[self.params[name]]
        new = _as_f8(value)
        if new.shape != node.value.shape:
            raise ValueError(f"parameter {name!r}: shape {new.shape} != {node.value.shape}")
        node.value = new

    def trainable_ids(self) -> list[int]:
        return [i for i, n in enumerate(self.nodes) if n.trainable]

    # -- ops ---------------------------------------------------------------

    def add(self, a: int, b: int) -> int:
        return self._add(Node("add", (a, b)))

    def mul(self, a: int, b: int) -> int:
        return self._add(Node("mul", (a, b)))

    def matmul(self, a: int, b: int) -> int:
        return self._add(Node("matmul", (a, b)))

    def scale(self, x: int, factor: float) -> int:
        return self._add(Node("scale", (x,), attrs={"factor": float(factor)}))

    def silu(self, x: int) -> int:
        return self._add(Node("silu", (x,)))

    def softmax(self, x: int) -> int:
        return self._add(Node("softmax", (x,)))

    def affine_softmax(self, x: int, scale: float, shift) -> int:
        """softmax(x * scale + shift) over the last axis, in one fused op.

        ``shift`` is a fixed array broadcast against x; attention uses it for
        the causal bias, with ``scale`` as the score normalizer.
        """
        return self._add(Node("affine_softmax", (x,),
                              attrs={"scale": float(scale), "shift": _as_f8(shift)}))

    def log_softmax(self, x: int) -> int:
        return self._add(Node("log_softmax", (x,)))

    def rms_norm(self, x: int, gain: int, eps: float = 1e-6) -> int:
        return self._add(Node("rms_norm", (x, gain), attrs={"eps": eps}))

    def embedding(self, table: int, ids: int) -> int:
        return self._add(Node("embedding", (table, ids)))

    def rope(self, x: int, cos: Array, sin: Array) -> int:
        # x: (..., seq, dim) with dim even; cos/sin: (seq, dim/2) tables
        return self._add(Node("rope", (x,), attrs={"cos": _as_f8(cos), "sin": _as_f8(sin)}))

    def reshape(self, x: int, shape: tuple[int, ...]) -> int:
        return self._add(Node("reshape", (x,), attrs={"shape": tuple(shape)}))

    def transpose(self, x: int, axes: tuple[int, ...]) -> int:
        return self._add(Node("transpose", (x,), attrs={"axes": tuple(axes)}))

    def cross_entropy(self, logits: int, targets: int) -> int:
        return self._add(Node("cross_entropy", (logits, targets)))

    def mse(self, a: int, b: int) -> int:
        return self._add(Node("mse", (a, b)))

    def kl_div(self, student_logits: int, teacher_logits: int) -> int:
        return self._add(Node("kl_div", (student_logits, teacher_logits)))


# -- forward -----------------------------------------------------------------


def _log_softmax(x: Array) -> Array:
    shifted = x - x.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def _rope_tables(node: Node, x: Array) -> tuple[Array, Array]:
    cos, sin = node.attrs["cos"], node.attrs["sin"]
    if x.shape[-1] != 2 * cos.shape[-1] or x.shape[-2] != cos.shape[-2]:
        raise ValueError(f"rope: input {x.shape} does not match tables {cos.shape}")
    return cos, sin


def _eval(node: Node, v: list[Array]) -> Array:
    op = node.op
    if op == "add":
        return v[node.inputs[0]] + v[node.inputs[1]]
    if op == "mul":
        return v[node.inputs[0]] * v[node.inputs[1]]
    if op == "matmul":
        a, b = v[node.inputs[0]], v[node.inputs[1]]
        if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
            raise ValueError(f"matmul: incompatible shapes {a.shape} @ {b.shape}")
        if a.ndim > 2 and b.ndim == 2:
            # one big GEMM instead of a strided batch of small ones
            return (a.reshape(-1, a.shape[-1]) @ b).reshape(*a.shape[:-1], b.shape[-1])
        return a @ b
    if op == "scale":
        return v[node.inputs[0]] * node.attrs["factor"]
    if op == "silu":
        x = v[node.inputs[0]]
        e = np.exp(-x)
        e += 1.0
        return np.divide(x, e, out=e)
    if op == "softmax":
        x = v[node.inputs[0]]
        e = np.exp(x - x.max(axis=-1, keepdims=True))
        return e / e.sum(axis=-1, keepdims=True)
    if op == "affine_softmax":
        t = v[node.inputs[0]] * node.attrs["scale"]
        t += node.attrs["shift"]
        t -= t.max(axis=-1, keepdims=True)
        np.exp(t, out=t)
        t /= t.sum(axis=-1, keepdims=True)
        return t
    if op == "log_softmax":
        return _log_softmax(v[node.inputs[0]])
    if op == "rms_norm":
        x, gain = v[node.inputs[0]], v[node.inputs[1]]
        r = 1.0 / np.sqrt((x * x).mean(axis=-1, keepdims=True) + node.attrs["eps"])
        return x * r * gain
    if op == "embedding":
        table, ids = v[node.inputs[0]], v[node.inputs[1]]
        if ids.max() >= table.shape[0] or ids.min() < 0:
            raise ValueError("embedding: id out of range")
        return table[ids]
    if op == "rope":
        x = v[node.inputs[0]]
        cos, sin = _rope_tables(node, x)
        half = x.shape[-1] // 2
        xa, xb = x[..., :half], x[..., half:]
        out = np.empty(x.shape)  # C order even when x is a transpose view
        oa, ob = out[..., :half], out[..., half:]
        np.multiply(xa, cos, out=oa)
        oa -= xb * sin
        np.multiply(xa, sin, out=ob)
        ob += xb * cos
        return out
    if op == "reshape":
        return v[node.inputs[0]].reshape(node.attrs["shape"])
    if op == "transpose":
        return v[node.inputs[0]].transpose(node.attrs["axes"])
    if op == "cross_entropy":
        logits, targets = v[node.inputs[0]], v[node.inputs[1]]
        logp = _log_softmax(logits)
        picked = np.take_along_axis(logp, targets[..., None], axis=-1)
        return np.asarray(-picked.mean())
    if op == "mse":
        a, b = v[node.inputs[0]], v[node.inputs[1]]
        if a.shape != b.shape:
            raise ValueError(f"mse: shapes differ {a.shape} vs {b.shape}")
        d = a - b
        return np.asarray((d * d).mean())
    if op == "kl_div":
        s, t = v[node.inputs[0]], v[node.inputs[1]]
        if s.shape != t.shape:
            raise ValueError(f"kl_div: shapes differ {s.shape} vs {t.shape}")
        a, b = _log_softmax(s), _log_softmax(t)
        p = np.exp(a)
        n_pos = max(1, p.size // p.shape[-1])
        return np.asarray((p * (a - b)).sum() / n_pos)
    raise ValueError(f"unknown op {op!r}")


def forward(graph: Graph, bindings: dict[str, Array] | None = None) -> list[Array]:
    """Evaluate every node; returns values indexable by node id."""
    bindings = bindings or {}
    unknown = set(bindings) - set(graph.placeholders)
    if unknown:
        raise ValueError(f"bindings for unknown placeholders: {sorted(unknown)}")
    values: list[Array] = [None] * len(graph.nodes)  # type: ignore[list-item]
    for i, node in enumerate(graph.nodes):
        if node.op == "placeholder":
            if node.name not in bindings:
                raise ValueError(f"unbound placeholder {node.name!r}")
            bound = np.asarray(bindings[node.name])
            if bound.shape != node.attrs["shape"]:
                raise ValueError(f"placeholder {node.name!r}: shape {bound.shape} "
                                 f"!= {node.attrs['shape']}")
            if node.attrs["integer"]:
                if not np.issubdtype(bound.dtype, np.integer):
                    raise ValueError(f"placeholder {node.name!r} expects integers")
                values[i] = bound.astype(np.int64, copy=False)
            else:
                values[i] = _as_f8(bound)
            continue
        if node.op in ("parameter", "constant"):
            values[i] = node.value
            continue
        try:
            with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
                out = _eval(node, values)
        except (ValueError, IndexError) as exc:
            raise ValueError(f"node {i} ({node.op}): {exc}") from exc
        if out.dtype == np.float64 and not np.isfinite(out).all():
            raise NonFiniteError(f"node {i} ({node.op}) produced non-finite values")
        values[i] = out
    graph._values = values
    return values


# -- backward ----------------------------------------------------------------


def _unbroadcast(g: Array, shape: tuple[int, ...]) -> Array:
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def _matmul_grad(g: Array, other: Array, side: str, shape: tuple[int, ...]) -> Array:
    if side == "left":
        if g.ndim > 2 and other.ndim == 2 and len(shape) == g.ndim:
            return (g.reshape(-1, g.shape[-1]) @ other.T).reshape(shape)
        out = g @ other.swapaxes(-1, -2)
    else:
        if other.ndim > 2 and g.ndim > 2 and len(shape) == 2:
            # weight gradient: fold the batch dims into one GEMM
            return other.reshape(-1, other.shape[-1]).T @ g.reshape(-1, g.shape[-1])
        out = other.swapaxes(-1, -2) @ g
    if out.shape != shape:
        out = out.sum(axis=tuple(range(out.ndim - len(shape))))
    return out


def _needs_grad(graph: Graph) -> list[bool]:
    if graph._needs_grad is None:
        needs = [False] * len(graph.nodes)
        for i, node in enumerate(graph.nodes):
            needs[i] = node.trainable or any(needs[j] for j in node.inputs)
        graph._needs_grad = needs
    return graph._needs_grad


def backward(graph: Graph, loss: int, values: list[Array] | None = None) -> dict[int, Array]:
    """Gradients of a scalar loss node for every trainable parameter.

    Uses the values cached by the most recent ``forward`` unless given
    explicitly.  Parameters that the loss does not depend on get zeros.
    """
    v = values if values is not None else graph._values
    if v is None:
        raise ValueError("backward before forward: no cached values")
    if v[loss].shape != ():
        raise ValueError(f"loss node must be scalar, got shape {v[loss].shape}")
    needs = _needs_grad(graph)
    adj: dict[int, Array] = {loss: np.asarray(1.0)}
    for i in range(loss, -1, -1):
        if i not in adj or not needs[i]:
            continue
        node, g = graph.nodes[i], adj[i]
        for slot, j in enumerate(node.inputs):
            if not needs[j]:
                continue
            contrib = _vjp(node, i, slot, g, v)
            if j in adj:
                adj[j] = adj[j] + contrib
            else:
                adj[j] = contrib
    grads: dict[int, Array] = {}
    for i in graph.trainable_ids():
        grads[i] = adj.get(i)
        if grads[i] is None:
            grads[i] = np.zeros_like(graph.nodes[i].value)
        elif grads[i].shape != graph.nodes[i].value.shape:
            grads[i] = np.broadcast_to(grads[i], graph.nodes[i].value.shape).copy()
    return grads


def _vjp(node: Node, nid: int, slot: int, g: Array, v: list[Array]) -> Array:
    op = node.op
    if op == "add":
        return _unbroadcast(g, v[node.inputs[slot]].shape)
    if op == "mul":
        other = v[node.inputs[1 - slot]]
        return _unbroadcast(g * other, v[node.inputs[slot]].shape)
    if op == "matmul":
        a, b = v[node.inputs[0]], v[node.inputs[1]]
        if slot == 0:
            return _matmul_grad(g, b, "left", a.shape)
        return _matmul_grad(g, a, "right", b.shape)
    if op == "scale":
        return g * node.attrs["factor"]
    if op == "silu":
        x = v[node.inputs[0]]
        s = 1.0 / (1.0 + np.exp(-x))
        return g * s * (1.0 + x * (1.0 - s))
    if op == "softmax":
        y = v[nid]
        return y * (g - (g * y).sum(axis=-1, keepdims=True))
    if op == "affine_softmax":
        y = v[nid]
        out = y * (g - (g * y).sum(axis=-1, keepdims=True))
        out *= node.attrs["scale"]
        return out
    if op == "log_softmax":
        y = v[nid]
        return g - np.exp(y) * g.sum(axis=-1, keepdims=True)
    if op == "rms_norm":
        x, gain = v[node.inputs[0]], v[node.inputs[1]]
        dim = x.shape[-1]
        r = 1.0 / np.sqrt((x * x).mean(axis=-1, keepdims=True) + node.attrs["eps"])
        if slot == 0:
            gg = g * gain
            return gg * r - x * (r ** 3 / dim) * (gg * x).sum(axis=-1, keepdims=True)
        return _unbroadcast(g * x * r, gain.shape)
    if op == "embedding":
        table, ids = v[node.inputs[0]], v[node.inputs[1]]
        out = np.zeros_like(table)
        np.add.at(out, ids.reshape(-1), g.reshape(-1, table.shape[-1]))
        return out
    if op == "rope":
        x = v[node.inputs[0]]
        cos, sin = node.attrs["cos"], node.attrs["sin"]
        half = x.shape[-1] // 2
        ga, gb = g[..., :half], g[..., half:]
        return np.concatenate([ga * cos + gb * sin, -ga * sin + gb * cos], axis=-1)
    if op == "reshape":
        return g.reshape(v[node.inputs[0]].shape)
    if op == "transpose":
        return g.transpose(np.argsort(node.attrs["axes"]))
    if op == "cross_entropy":
        logits, targets = v[node.inputs[0]], v[node.inputs[1]]
        p = np.exp(_log_softmax(logits))
        n_pos = max(1, logits.size // logits.shape[-1])
        out = p * (g / n_pos)
        idx = targets[..., None]
        np.put_along_axis(out, idx, np.take_along_axis(out, idx, -1) - g / n_pos, -1)
        return out
    if op == "mse":
        a, b = v[node.inputs[0]], v[node.inputs[1]]
        d = (a - b) * (2.0 * g / a.size)
        return d if slot == 0 else -d
    if op == "kl_div":
        s, t = v[node.inputs[0]], v[node.inputs[1]]
        a, b = _log_softmax(s), _log_softmax(t)
        p = np.exp(a)
        n_pos = max(1, p.size // p.shape[-1])
        if slot == 0:
            per_pos = (p * (a - b)).sum(axis=-1, keepdims=True)
            return p * ((a - b) - per_pos) * (g / n_pos)
        return (np.exp(b) - p) * (g / n_pos)
    raise ValueError(f"no gradient for op {op!r}")


def finite_diff(f: Callable[[Array], float], x: Array, eps: float = 1e-5) -> Array:
    """Central-difference gradient of a scalar function, one coordinate at a time."""
    x = np.asarray(x, dtype=np.float64)
    grad = np.zeros_like(x)
    for idx in np.ndindex(x.shape):
        xp = x.copy()
        xp[idx] = x[idx] + eps
        up = f(xp)
        xp[idx] = x[idx] - eps
        down = f(xp)
        grad[idx] = (up - down) / (2.0 * eps)
    return grad
