"""Static-graph reverse-mode differentiation over float64 numpy arrays.

Expressions are built symbolically from :func:`input` and :func:`const`
leaves, then frozen into a :class:`Graph`.  A graph never holds values;
every call to :meth:`Graph.forward` allocates its own value table, so one
graph can be evaluated from several threads at once.

    >>> x = input("x")
    >>> g = Graph(sum(square(x)))
    >>> float(g.evaluate({"x": np.array([3.0, 4.0])}))
    25.0
    >>> g.gradient({"x": np.array([3.0, 4.0])}, "x")
    array([6., 8.])

Broadcasting is limited to what dense layers need: equal shapes, a scalar
against anything, or a 1-D row vector against the last axis of a matrix.
"""

from __future__ import annotations

import os
from typing import Iterable, Mapping, Sequence

import numpy as np

Tensor = np.ndarray

CHECK_FINITE = os.environ.get("QUCE_UNCHECKED", "") == ""


class AutodiffError(ValueError):
    pass


class ShapeError(AutodiffError):
    pass


class UnboundInputError(AutodiffError, KeyError):
    pass


class NonFiniteError(AutodiffError, FloatingPointError):
    pass


def as_tensor(value) -> Tensor:
    arr = np.asarray(value, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise NonFiniteError("tensor contains NaN or Inf")
    return arr


class Node:
    """One vertex of an expression graph."""

    __slots__ = ("op", "inputs", "name", "value", "attr")

    def __init__(self, op: str, inputs: tuple = (), name=None, value=None, attr=None):
        self.op = op
        self.inputs = inputs
        self.name = name
        self.value = value
        self.attr = attr

    def __repr__(self):
        if self.op == "input":
            return f"Node(input {self.name!r})"
        return f"Node({self.op}, {len(self.inputs)} inputs)"

    def __add__(self, other):
        return add(self, _lift(other))

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, neg(_lift(other)))

    def __rsub__(self, other):
        return add(_lift(other), neg(self))

    def __mul__(self, other):
        return mul(self, _lift(other))

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, _lift(other))


def _lift(value) -> Node:
    return value if isinstance(value, Node) else const(value)


# -- leaves and primitives ---------------------------------------------------

def input(name: str) -> Node:  # noqa: A001 - mirrors the graph vocabulary
    return Node("input", name=name)


def const(value) -> Node:
    return Node("const", value=as_tensor(value))


def matmul(a: Node, b: Node) -> Node:
    return Node("matmul", (a, b))


def add(a: Node, b: Node) -> Node:
    return Node("add", (a, b))


def mul(a: Node, b: Node) -> Node:
    return Node("mul", (a, b))


def neg(a: Node) -> Node:
    return Node("neg", (a,))


def tanh(a: Node) -> Node:
    return Node("tanh", (a,))


def relu(a: Node) -> Node:
    return Node("relu", (a,))


def sigmoid(a: Node) -> Node:
    return Node("sigmoid", (a,))


def log(a: Node, floor: float | None = None) -> Node:
    """Natural log; with ``floor`` set, inputs below it are clamped and
    receive zero gradient."""
    return Node("log", (a,), attr=floor)


def exp(a: Node) -> Node:
    return Node("exp", (a,))


def square(a: Node) -> Node:
    return Node("square", (a,))


def sum(a: Node) -> Node:  # noqa: A001
    return Node("sum", (a,))


def broadcast(a: Node, shape: Sequence[int]) -> Node:
    """Explicitly tile ``a`` to ``shape`` (same rules as implicit add/mul)."""
    return Node("broadcast", (a,), attr=tuple(shape))


# -- forward / backward kernels ----------------------------------------------

def _stable_sigmoid(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def _check_broadcast(a: Tensor, b: Tensor) -> tuple:
    sa, sb = a.shape, b.shape
    if sa == sb or sa == () or sb == ():
        return np.broadcast_shapes(sa, sb)
    if len(sa) == 1 and len(sb) == 2 and sa[0] == sb[1]:
        return sb
    if len(sb) == 1 and len(sa) == 2 and sb[0] == sa[1]:
        return sa
    raise ShapeError(f"incompatible shapes {sa} and {sb}")


def _unbroadcast(grad: Tensor, shape: tuple) -> Tensor:
    if grad.shape == shape:
        return grad
    if shape == ():
        return np.asarray(grad.sum())
    # 1-D row vector broadcast along axis 0 of a matrix
    return grad.sum(axis=0).reshape(shape)


def _forward(node: Node, args: list) -> Tensor:
    op = node.op
    if op == "matmul":
        a, b = args
        if a.ndim == 0 or b.ndim == 0 or a.shape[-1] != b.shape[0]:
            raise ShapeError(f"matmul shapes {a.shape} @ {b.shape}")
        return a @ b
    if op == "add":
        _check_broadcast(*args)
        return args[0] + args[1]
    if op == "mul":
        _check_broadcast(*args)
        return args[0] * args[1]
    (a,) = args
    if op == "neg":
        return -a
    if op == "tanh":
        return np.tanh(a)
    if op == "relu":
        return np.maximum(a, 0.0)
    if op == "sigmoid":
        return _stable_sigmoid(np.asarray(a))
    if op == "log":
        if node.attr is not None:
            a = np.maximum(a, node.attr)
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.log(a)
    if op == "exp":
        with np.errstate(over="ignore"):
            return np.exp(a)
    if op == "square":
        return a * a
    if op == "sum":
        return np.asarray(a.sum())
    if op == "broadcast":
        _check_broadcast(a, np.empty(node.attr))
        return np.broadcast_to(a, node.attr).copy()
    raise AutodiffError(f"unknown primitive {op!r}")


def _backward(node: Node, args: list, out: Tensor, g: Tensor) -> list:
    op = node.op
    if op == "matmul":
        a, b = args
        if a.ndim == 1 and b.ndim == 1:
            return [b * g, a * g]
        if a.ndim == 1:
            ga = b @ g
            gb = np.outer(a, g) if b.ndim == 2 else a * g
        else:
            ga = g @ b.T if b.ndim == 2 else np.outer(g, b)
            gb = a.T @ g
        return [ga, gb]
    if op == "add":
        return [_unbroadcast(g, args[0].shape), _unbroadcast(g, args[1].shape)]
    if op == "mul":
        a, b = args
        return [_unbroadcast(g * b, a.shape), _unbroadcast(g * a, b.shape)]
    (a,) = args
    if op == "neg":
        return [-g]
    if op == "tanh":
        return [g * (1.0 - out * out)]
    if op == "relu":
        return [g * (a > 0)]
    if op == "sigmoid":
        return [g * out * (1.0 - out)]
    if op == "log":
        if node.attr is not None:
            return [np.where(a > node.attr, g / np.maximum(a, node.attr), 0.0)]
        return [g / a]
    if op == "exp":
        return [g * out]
    if op == "square":
        return [2.0 * a * g]
    if op == "sum":
        return [np.broadcast_to(g, a.shape)]
    if op == "broadcast":
        return [_unbroadcast(g, a.shape)]
    raise AutodiffError(f"unknown primitive {op!r}")


# -- graph -------------------------------------------------------------------

class Graph:
    """An immutable expression graph with one designated output.

    ``inputs`` may name extra inputs the output does not depend on; their
    gradient is reported as zeros instead of raising.
    """

    def __init__(self, output: Node, inputs: Iterable[str] = ()):
        order: list[Node] = []
        seen: set[int] = set()
        stack = [(output, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for parent in node.inputs:
                if id(parent) not in seen:
                    stack.append((parent, False))
        self.output = output
        self._order = tuple(order)
        self._index = {id(n): i for i, n in enumerate(order)}
        self._parents = tuple(tuple(self._index[id(p)] for p in n.inputs) for n in order)
        names = {n.name for n in order if n.op == "input"}
        self.input_names = frozenset(names | set(inputs))

    def __len__(self):
        return len(self._order)

    def forward(self, bindings: Mapping[str, Tensor], check: bool | None = None) -> list:
        """Return the value of every node in topological order."""
        check = CHECK_FINITE if check is None else check
        values: list = [None] * len(self._order)
        for i, node in enumerate(self._order):
            if node.op == "input":
                try:
                    v = bindings[node.name]
                except KeyError:
                    raise UnboundInputError(f"input {node.name!r} is not bound") from None
                v = np.asarray(v, dtype=np.float64)
                if check and not np.all(np.isfinite(v)):
                    raise NonFiniteError(f"input {node.name!r} is not finite")
            elif node.op == "const":
                v = node.value
            else:
                v = _forward(node, [values[j] for j in self._parents[i]])
                if check and not np.all(np.isfinite(v)):
                    raise NonFiniteError(f"{node.op} produced a non-finite value")
            values[i] = v
        return values

    def backward(self, values: list, wrt: Sequence[str],
                 bindings: Mapping[str, Tensor] | None = None) -> dict[str, Tensor]:
        """Reverse sweep from the scalar output given a :meth:`forward` table."""
        out = values[-1]
        if np.ndim(out) != 0:
            raise ShapeError(f"gradient needs a scalar output, got shape {np.shape(out)}")
        for name in wrt:
            if name not in self.input_names:
                raise UnboundInputError(f"{name!r} is not an input of this graph")
        adj: list = [None] * len(self._order)
        adj[-1] = np.ones((), dtype=np.float64)
        for i in range(len(self._order) - 1, -1, -1):
            g = adj[i]
            node = self._order[i]
            if g is None or not node.inputs:
                continue
            parents = self._parents[i]
            grads = _backward(node, [values[j] for j in parents], values[i], g)
            for j, gj in zip(parents, grads):
                adj[j] = gj if adj[j] is None else adj[j] + gj
        result = {}
        for name in wrt:
            total = None
            for i, node in enumerate(self._order):
                if node.op == "input" and node.name == name and adj[i] is not None:
                    total = adj[i] if total is None else total + adj[i]
            if total is None:
                shape = _bound_shape(name, values, self._order, bindings)
                total = np.zeros(shape)
            result[name] = np.array(total, dtype=np.float64)
        return result

    def evaluate(self, bindings: Mapping[str, Tensor], check: bool | None = None) -> Tensor:
        return self.forward(bindings, check)[-1]

    def value_and_grad(self, bindings: Mapping[str, Tensor], wrt: Sequence[str],
                       check: bool | None = None) -> tuple[Tensor, dict[str, Tensor]]:
        values = self.forward(bindings, check)
        return values[-1], self.backward(values, wrt, bindings)

    def gradient(self, bindings: Mapping[str, Tensor], wrt: str,
                 check: bool | None = None) -> Tensor:
        return self.value_and_grad(bindings, [wrt], check)[1][wrt]

    def value_of(self, values: list, node: Node) -> Tensor:
        """Look up an intermediate node's value in a forward table."""
        return values[self._index[id(node)]]


def _bound_shape(name, values, order, bindings):
    for i, node in enumerate(order):
        if node.op == "input" and node.name == name:
            return np.shape(values[i])
    if bindings is not None and name in bindings:
        return np.shape(bindings[name])
    raise UnboundInputError(f"input {name!r} is not bound")


def evaluate(graph: Graph, bindings: Mapping[str, Tensor]) -> Tensor:
    return graph.evaluate(bindings)


def gradient(graph: Graph, bindings: Mapping[str, Tensor], wrt: str) -> Tensor:
    return graph.gradient(bindings, wrt)
