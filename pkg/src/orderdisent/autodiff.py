"""Small reverse-mode differentiation engine over dense float64 arrays.

A :class:`Graph` is a static list of primitive nodes.  Leaves are either
parameters or data inputs and are identified by name; values are supplied at
evaluation time through a ``bindings`` mapping, so one graph can be evaluated
against many parameter snapshots.

    >>> g = Graph()
    >>> x = g.param("x")
    >>> loss = g.sum(g.mul(x, x))
    >>> grads = gradients(g, loss, {"x": np.array([1.0, -2.0, 3.0])}, {"x"})
    >>> grads["x"]
    array([ 2., -4.,  6.])
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

PROB_FLOOR = 1e-7
PROB_CEIL = 1.0 - 1e-7


class AutodiffError(ValueError):
    pass


class ShapeError(AutodiffError):
    pass


class UnboundLeafError(AutodiffError):
    pass


class NonFiniteError(AutodiffError, ArithmeticError):
    pass


@dataclass(frozen=True)
class Node:
    op: str
    inputs: tuple[int, ...] = ()
    attrs: tuple = ()
    name: str | None = None


@dataclass
class Graph:
    """Append-only list of nodes; node ids are list positions (already topological)."""

    nodes: list[Node] = field(default_factory=list)

    def _add(self, op, inputs=(), attrs=(), name=None) -> int:
        for i in inputs:
            if not 0 <= i < len(self.nodes):
                raise AutodiffError(f"{op}: input {i} is not a node of this graph")
        self.nodes.append(Node(op, tuple(inputs), tuple(attrs), name))
        return len(self.nodes) - 1

    # leaves
    def param(self, name: str) -> int:
        return self._add("param", name=name)

    def input(self, name: str) -> int:
        return self._add("input", name=name)

    def leaf_names(self, kind: str | None = None) -> list[str]:
        kinds = ("param", "input") if kind is None else (kind,)
        return [n.name for n in self.nodes if n.op in kinds]

    # primitives
    def affine(self, x: int, w: int, b: int | None = None) -> int:
        return self._add("affine", (x, w) if b is None else (x, w, b))

    def relu(self, x: int) -> int:
        return self._add("relu", (x,))

    def softmax(self, x: int) -> int:
        return self._add("softmax", (x,))

    def log(self, x: int) -> int:
        """Natural log of probabilities clamped to [1e-7, 1 - 1e-7]."""
        return self._add("log", (x,))

    def sum(self, x: int, axis: int | None = None) -> int:
        return self._add("sum", (x,), (axis,))

    def mean(self, x: int) -> int:
        return self._add("mean", (x,))

    def add(self, a: int, b: int) -> int:
        return self._add("add", (a, b))

    def sub(self, a: int, b: int) -> int:
        return self._add("sub", (a, b))

    def mul(self, a: int, b: int) -> int:
        return self._add("mul", (a, b))

    def scale(self, x: int, c: float) -> int:
        return self._add("scale", (x,), (float(c),))

    def sqdist(self, a: int, b: int) -> int:
        """Squared Euclidean distance along the last axis."""
        return self._add("sqdist", (a, b))

    def hinge(self, x: int) -> int:
        return self._add("hinge", (x,))

    def concat(self, *xs: int) -> int:
        return self._add("concat", xs)


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and grad.shape[ax] != 1:
            grad = grad.sum(axis=ax, keepdims=True)
    return grad


def _check_broadcast(op, a, b):
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: incompatible shapes {a.shape} and {b.shape}") from None


def _forward(node: Node, args: list[np.ndarray]) -> np.ndarray:
    op = node.op
    if op == "affine":
        x, w = args[0], args[1]
        if x.ndim == 0 or w.ndim != 2 or x.shape[-1] != w.shape[0]:
            raise ShapeError(f"affine: cannot multiply {x.shape} by {w.shape}")
        out = x @ w
        if len(args) == 3:
            if args[2].shape != (w.shape[1],):
                raise ShapeError(f"affine: bias {args[2].shape} != ({w.shape[1]},)")
            out = out + args[2]
        return out
    if op == "relu" or op == "hinge":
        return np.maximum(args[0], 0.0)
    if op == "softmax":
        x = args[0]
        e = np.exp(x - x.max(axis=-1, keepdims=True))
        return e / e.sum(axis=-1, keepdims=True)
    if op == "log":
        return np.log(np.clip(args[0], PROB_FLOOR, PROB_CEIL))
    if op == "sum":
        (axis,) = node.attrs
        return np.asarray(args[0].sum() if axis is None else args[0].sum(axis=axis))
    if op == "mean":
        if args[0].size == 0:
            raise ShapeError("mean of an empty tensor")
        return np.asarray(args[0].mean())
    if op in ("add", "sub", "mul"):
        _check_broadcast(op, args[0], args[1])
        if op == "add":
            return args[0] + args[1]
        if op == "sub":
            return args[0] - args[1]
        return args[0] * args[1]
    if op == "scale":
        return args[0] * node.attrs[0]
    if op == "sqdist":
        if args[0].shape != args[1].shape:
            raise ShapeError(f"sqdist: shapes {args[0].shape} and {args[1].shape} differ")
        d = args[0] - args[1]
        return (d * d).sum(axis=-1)
    if op == "concat":
        lead = {a.shape[:-1] for a in args}
        if len(lead) != 1:
            raise ShapeError(f"concat: leading shapes differ {sorted(lead)}")
        return np.concatenate(args, axis=-1)
    raise AutodiffError(f"unknown primitive {op!r}")


def _backward(node: Node, args: list[np.ndarray], out: np.ndarray, g: np.ndarray, need):
    """Return per-input gradient contributions (None where not needed)."""
    op = node.op
    res = [None] * len(args)
    if op == "affine":
        x, w = args[0], args[1]
        if need[0]:
            res[0] = g @ w.T
        if need[1]:
            res[1] = np.outer(x, g) if x.ndim == 1 else x.reshape(-1, x.shape[-1]).T @ g.reshape(-1, g.shape[-1])
        if len(args) == 3 and need[2]:
            res[2] = g.reshape(-1, g.shape[-1]).sum(axis=0)
    elif op == "relu" or op == "hinge":
        # subgradient 0 at exactly 0
        res[0] = g * (args[0] > 0)
    elif op == "softmax":
        res[0] = out * (g - (g * out).sum(axis=-1, keepdims=True))
    elif op == "log":
        p = args[0]
        inside = (p >= PROB_FLOOR) & (p <= PROB_CEIL)
        res[0] = np.where(inside, g / np.clip(p, PROB_FLOOR, PROB_CEIL), 0.0)
    elif op == "sum":
        (axis,) = node.attrs
        if axis is None:
            res[0] = np.broadcast_to(g, args[0].shape).copy()
        else:
            res[0] = np.broadcast_to(np.expand_dims(g, axis), args[0].shape).copy()
    elif op == "mean":
        res[0] = np.full(args[0].shape, float(g) / args[0].size)
    elif op == "add":
        res[0] = _unbroadcast(g, args[0].shape) if need[0] else None
        res[1] = _unbroadcast(g, args[1].shape) if need[1] else None
    elif op == "sub":
        res[0] = _unbroadcast(g, args[0].shape) if need[0] else None
        res[1] = _unbroadcast(-g, args[1].shape) if need[1] else None
    elif op == "mul":
        res[0] = _unbroadcast(g * args[1], args[0].shape) if need[0] else None
        res[1] = _unbroadcast(g * args[0], args[1].shape) if need[1] else None
    elif op == "scale":
        res[0] = g * node.attrs[0]
    elif op == "sqdist":
        d = 2.0 * (args[0] - args[1]) * g[..., None]
        res[0], res[1] = d, -d
    elif op == "concat":
        edges = np.cumsum([a.shape[-1] for a in args])[:-1]
        res = list(np.split(g, edges, axis=-1))
    return res


def evaluate(graph: Graph, bindings: Mapping[str, np.ndarray]) -> list[np.ndarray]:
    """Value of every node, indexed by node id.

    Raises UnboundLeafError, ShapeError, or NonFiniteError.
    """
    values: list[np.ndarray] = []
    for node in graph.nodes:
        if node.op in ("param", "input"):
            if node.name not in bindings:
                raise UnboundLeafError(f"leaf {node.name!r} is not bound")
            v = np.asarray(bindings[node.name], dtype=np.float64)
        else:
            # overflow surfaces as NonFiniteError below, not as a numpy warning
            with np.errstate(over="ignore", invalid="ignore"):
                v = _forward(node, [values[i] for i in node.inputs])
        if not np.all(np.isfinite(v)):
            raise NonFiniteError(f"non-finite value at node {len(values)} ({node.op})")
        values.append(v)
    return values


def value_and_gradients(
    graph: Graph,
    loss: int,
    bindings: Mapping[str, np.ndarray],
    wrt,
) -> tuple[list[np.ndarray], dict[str, np.ndarray]]:
    """Evaluate the graph and back-propagate ``loss`` to the parameter leaves in ``wrt``.

    Only nodes lying on a path from a ``wrt`` leaf to ``loss`` are visited
    backwards, so parameters outside ``wrt`` are never touched.
    """
    wrt = set(wrt)
    if not 0 <= loss < len(graph.nodes):
        raise AutodiffError(f"loss node {loss} is not in the graph")
    params = {n.name for n in graph.nodes if n.op == "param"}
    missing = wrt - params
    if missing:
        raise AutodiffError(f"not parameter leaves of this graph: {sorted(missing)}")

    values = evaluate(graph, bindings)
    if values[loss].size != 1 or values[loss].ndim > 1:
        raise ShapeError(f"loss must be scalar, got shape {values[loss].shape}")
    if not wrt:
        return values, {}

    # forward sweep: which nodes depend on a wrt leaf
    depends = [False] * len(graph.nodes)
    for i, node in enumerate(graph.nodes):
        if node.op == "param":
            depends[i] = node.name in wrt
        elif node.op != "input":
            depends[i] = any(depends[j] for j in node.inputs)

    grads: list[np.ndarray | None] = [None] * len(graph.nodes)
    grads[loss] = np.ones_like(values[loss])
    for i in range(loss, -1, -1):
        g = grads[i]
        node = graph.nodes[i]
        if g is None or not depends[i] or node.op in ("param", "input"):
            continue
        need = [depends[j] for j in node.inputs]
        parts = _backward(node, [values[j] for j in node.inputs], values[i], g, need)
        for j, part, n in zip(node.inputs, parts, need):
            if n and part is not None:
                grads[j] = part if grads[j] is None else grads[j] + part

    out: dict[str, np.ndarray] = {}
    for i, node in enumerate(graph.nodes):
        if node.op == "param" and node.name in wrt:
            g = grads[i]
            g = np.zeros_like(values[i]) if g is None else g
            # a name bound to several leaf nodes accumulates
            out[node.name] = out[node.name] + g if node.name in out else g
    return values, out


def gradients(graph: Graph, loss: int, bindings: Mapping[str, np.ndarray], wrt) -> dict[str, np.ndarray]:
    return value_and_gradients(graph, loss, bindings, wrt)[1]


def finite_difference_check(
    graph: Graph,
    loss: int,
    bindings: Mapping[str, np.ndarray],
    h: float = 1e-5,
    wrt=None,
) -> float:
    """Max relative error between analytic and central-difference gradients.

    Relative error per entry is ``|a - n| / max(|a|, |n|, 1e-8)``.
    """
    if not h > 0:
        raise ValueError(f"step h must be positive, got {h}")
    if wrt is None:
        wrt = {n.name for n in graph.nodes if n.op == "param"}
    analytic = gradients(graph, loss, bindings, wrt)
    base = {k: np.array(v, dtype=np.float64) for k, v in bindings.items()}
    worst = 0.0
    for name in sorted(analytic):
        theta = base[name]
        flat = theta.reshape(-1)
        a_flat = analytic[name].reshape(-1)
        for k in range(flat.size):
            orig = flat[k]
            flat[k] = orig + h
            up = float(evaluate(graph, base)[loss])
            flat[k] = orig - h
            down = float(evaluate(graph, base)[loss])
            flat[k] = orig
            numeric = (up - down) / (2.0 * h)
            if not np.isfinite(numeric):
                raise NonFiniteError(f"non-finite loss near {name}[{k}]")
            denom = max(abs(a_flat[k]), abs(numeric), 1e-8)
            worst = max(worst, abs(a_flat[k] - numeric) / denom)
    return worst
