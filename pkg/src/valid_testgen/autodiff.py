"""Dense float64 tensors and a small reverse-mode tape.

A :class:`Graph` is built eagerly: every op computes and caches its value
when it is appended, so node ids are topologically ordered by construction.
``backward`` walks the tape once from the root and returns the adjoint of the
requested node.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any, Callable, Sequence

import numpy as np
import numpy.typing as npt

from .errors import ContractViolation, NumericError, ShapeError

Tensor = npt.NDArray[np.float64]

LOG_2PI = float(np.log(2.0 * np.pi))


def as_tensor(data: Any, shape: Sequence[int] | None = None) -> Tensor:
    """Copy external data into a read-only, finite float64 array."""

    array = np.array(data, dtype=np.float64)
    if shape is not None:
        if int(np.prod(shape)) != array.size:
            raise ShapeError("Cannot reshape tensor", array.shape, tuple(shape), operation="as_tensor")
        array = array.reshape(tuple(shape))
    if not np.all(np.isfinite(array)):
        raise NumericError("Tensor contains non-finite values", operation="as_tensor")
    array.setflags(write=False)
    return array


def _stable_sigmoid(values: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * values))


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def softmax(logits: np.ndarray) -> np.ndarray:
    """Row-wise softmax with max-subtraction."""

    return np.exp(_log_softmax(np.asarray(logits, dtype=np.float64)))


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _check_broadcast(kind: str, left: np.ndarray, right: np.ndarray) -> None:
    try:
        np.broadcast_shapes(left.shape, right.shape)
    except ValueError:
        raise ShapeError("Operand shapes do not broadcast", left.shape, right.shape, operation=kind) from None


@dataclass(frozen=True)
class Node:
    kind: str
    inputs: tuple[int, ...]
    value: np.ndarray
    aux: Any = None


class Graph:
    """Append-only tape of elementary operations over float64 arrays."""

    def __init__(self) -> None:
        self.nodes: list[Node] = []

    def __len__(self) -> int:
        return len(self.nodes)

    def _push(self, kind: str, inputs: tuple[int, ...], value: np.ndarray, aux: Any = None) -> int:
        value = np.asarray(value, dtype=np.float64)
        value.setflags(write=False)
        self.nodes.append(Node(kind, inputs, value, aux))
        return len(self.nodes) - 1

    def _node(self, node_id: int) -> Node:
        if not 0 <= node_id < len(self.nodes):
            raise ContractViolation("Unknown node id", operation="graph", node=node_id)
        return self.nodes[node_id]

    def value(self, node_id: int) -> np.ndarray:
        return self._node(node_id).value

    # leaves

    def input(self, value: Any) -> int:
        return self._push("input", (), as_tensor(value))

    def constant(self, value: Any) -> int:
        return self._push("const", (), as_tensor(value))

    # elementwise / linear algebra

    def add(self, a: int, b: int) -> int:
        left, right = self.value(a), self.value(b)
        _check_broadcast("add", left, right)
        return self._push("add", (a, b), left + right)

    def sub(self, a: int, b: int) -> int:
        left, right = self.value(a), self.value(b)
        _check_broadcast("sub", left, right)
        return self._push("sub", (a, b), left - right)

    def mul(self, a: int, b: int) -> int:
        left, right = self.value(a), self.value(b)
        _check_broadcast("mul", left, right)
        return self._push("mul", (a, b), left * right)

    def scale(self, a: int, factor: float) -> int:
        return self._push("scale", (a,), self.value(a) * factor, float(factor))

    def neg(self, a: int) -> int:
        return self.scale(a, -1.0)

    def matmul(self, a: int, b: int) -> int:
        left, right = self.value(a), self.value(b)
        if right.ndim != 2 or left.ndim not in (1, 2) or left.shape[-1] != right.shape[0]:
            raise ShapeError("Incompatible matmul operands", left.shape, right.shape, operation="matmul")
        return self._push("matmul", (a, b), left @ right)

    def transpose(self, a: int) -> int:
        value = self.value(a)
        if value.ndim != 2:
            raise ShapeError("Transpose needs a matrix", value.shape, (2,), operation="transpose")
        return self._push("transpose", (a,), value.T)

    def relu(self, a: int) -> int:
        return self._push("relu", (a,), np.maximum(self.value(a), 0.0))

    def sigmoid(self, a: int) -> int:
        return self._push("sigmoid", (a,), _stable_sigmoid(self.value(a)))

    def softplus(self, a: int) -> int:
        return self._push("softplus", (a,), np.logaddexp(0.0, self.value(a)))

    def exp(self, a: int) -> int:
        return self._push("exp", (a,), np.exp(self.value(a)))

    def log(self, a: int) -> int:
        value = self.value(a)
        if np.any(value <= 0.0):
            raise NumericError("log of a non-positive value", operation="log")
        return self._push("log", (a,), np.log(value))

    def square(self, a: int) -> int:
        return self._push("square", (a,), np.square(self.value(a)))

    # reductions and indexing

    def reduce_sum(self, a: int, axis: int | None = None) -> int:
        return self._push("sum", (a,), self.value(a).sum(axis=axis), axis)

    def mean(self, a: int) -> int:
        return self.scale(self.reduce_sum(a), 1.0 / self.value(a).size)

    def take(self, a: int, index: int | tuple[int, ...]) -> int:
        value = self.value(a)
        if isinstance(index, tuple):
            if len(index) != value.ndim or not all(0 <= i < n for i, n in zip(index, value.shape)):
                raise ShapeError("Index out of range", value.shape, tuple(index), operation="take")
            flat = int(np.ravel_multi_index(index, value.shape))
        else:
            flat = int(index)
        if not 0 <= flat < value.size:
            raise ShapeError("Index out of range", value.shape, (flat,), operation="take")
        return self._push("take", (a,), value.reshape(-1)[flat], flat)

    def slice_last(self, a: int, start: int, stop: int) -> int:
        value = self.value(a)
        if not 0 <= start < stop <= value.shape[-1]:
            raise ShapeError("Slice outside last axis", value.shape, (start, stop), operation="slice")
        return self._push("slice", (a,), value[..., start:stop], (start, stop))

    # probabilistic heads

    def softmax(self, a: int) -> int:
        return self._push("softmax", (a,), softmax(self.value(a)))

    def softmax_cross_entropy(self, logits: int, labels: Sequence[int] | np.ndarray) -> int:
        """Mean negative log-likelihood of integer labels under softmax(logits)."""

        value = self.value(logits)
        targets = np.atleast_1d(np.asarray(labels, dtype=np.int64))
        batch = np.atleast_2d(value)
        if batch.shape[0] != targets.shape[0]:
            raise ShapeError("Label count does not match batch", batch.shape, targets.shape, operation="cross_entropy")
        log_probs = _log_softmax(batch)
        loss = -log_probs[np.arange(targets.shape[0]), targets].mean()
        return self._push("xent", (logits,), loss, targets)

    def gaussian_log_density(self, x: int, mu: int, sigma: int) -> int:
        """Sum over all elements of log N(x; mu, sigma^2)."""

        xv, muv, sv = self.value(x), self.value(mu), self.value(sigma)
        if xv.shape != muv.shape or xv.shape != sv.shape:
            shape = muv.shape if xv.shape != muv.shape else sv.shape
            raise ShapeError("Gaussian operands differ in shape", xv.shape, shape, operation="gaussian_log_density")
        residual = (xv - muv) / sv
        density = -(0.5 * LOG_2PI + np.log(sv) + 0.5 * residual * residual).sum()
        return self._push("gauss", (x, mu, sigma), density)

    # evaluation

    def forward(self, root: int) -> float:
        value = self.value(root)
        if value.size != 1:
            raise ContractViolation("Root is not a scalar", operation="forward", shape=value.shape)
        result = float(value.reshape(()))
        if not np.isfinite(result):
            raise NumericError("Objective evaluated to a non-finite value", operation="forward")
        return result

    def gradients(self, root: int, wrt: Sequence[int]) -> list[Tensor]:
        """Adjoints of ``root`` with respect to each node in ``wrt``."""

        if self.value(root).size != 1:
            raise ContractViolation("backward needs a scalar root", operation="backward", shape=self.value(root).shape)
        adjoints: list[np.ndarray | None] = [None] * (root + 1)
        adjoints[root] = np.ones_like(self.value(root))
        for node_id in range(root, -1, -1):
            grad = adjoints[node_id]
            node = self.nodes[node_id]
            if grad is None or not node.inputs:
                continue
            for parent, parent_grad in zip(node.inputs, _VJP[node.kind](self, node, grad)):
                parent_grad = _unbroadcast(np.asarray(parent_grad), self.nodes[parent].value.shape)
                current = adjoints[parent]
                adjoints[parent] = parent_grad if current is None else current + parent_grad
        results = []
        for node_id in wrt:
            shape = self._node(node_id).value.shape
            grad = adjoints[node_id] if node_id <= root else None
            results.append(np.zeros(shape) if grad is None else np.array(grad, dtype=np.float64).reshape(shape))
        return results

    def backward(self, root: int, wrt: int) -> Tensor:
        return self.gradients(root, [wrt])[0]


def _vjp_matmul(graph: Graph, node: Node, grad: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    left = graph.nodes[node.inputs[0]].value
    right = graph.nodes[node.inputs[1]].value
    if left.ndim == 1:
        return right @ grad, np.outer(left, grad)
    return grad @ right.T, left.T @ grad


def _vjp_sum(graph: Graph, node: Node, grad: np.ndarray) -> tuple[np.ndarray]:
    shape = graph.nodes[node.inputs[0]].value.shape
    if node.aux is None:
        return (np.broadcast_to(grad, shape),)
    return (np.broadcast_to(np.expand_dims(grad, node.aux), shape),)


def _vjp_take(graph: Graph, node: Node, grad: np.ndarray) -> tuple[np.ndarray]:
    shape = graph.nodes[node.inputs[0]].value.shape
    out = np.zeros(int(np.prod(shape)))
    out[node.aux] = grad
    return (out.reshape(shape),)


def _vjp_slice(graph: Graph, node: Node, grad: np.ndarray) -> tuple[np.ndarray]:
    start, stop = node.aux
    out = np.zeros_like(graph.nodes[node.inputs[0]].value)
    out[..., start:stop] = grad
    return (out,)


def _vjp_softmax(graph: Graph, node: Node, grad: np.ndarray) -> tuple[np.ndarray]:
    probs = node.value
    return (probs * (grad - (grad * probs).sum(axis=-1, keepdims=True)),)


def _vjp_xent(graph: Graph, node: Node, grad: np.ndarray) -> tuple[np.ndarray]:
    logits = graph.nodes[node.inputs[0]].value
    batch = np.atleast_2d(logits)
    probs = softmax(batch)
    probs[np.arange(batch.shape[0]), node.aux] -= 1.0
    return ((grad * probs / batch.shape[0]).reshape(logits.shape),)


def _vjp_gauss(graph: Graph, node: Node, grad: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    xv, muv, sv = (graph.nodes[i].value for i in node.inputs)
    diff = xv - muv
    inv_var = 1.0 / (sv * sv)
    return (
        -grad * diff * inv_var,
        grad * diff * inv_var,
        grad * (diff * diff * inv_var - 1.0) / sv,
    )


_VJP: dict[str, Callable[[Graph, Node, np.ndarray], tuple[np.ndarray, ...]]] = {
    "add": lambda g, n, d: (d, d),
    "sub": lambda g, n, d: (d, -d),
    "mul": lambda g, n, d: (d * g.nodes[n.inputs[1]].value, d * g.nodes[n.inputs[0]].value),
    "scale": lambda g, n, d: (d * n.aux,),
    "matmul": _vjp_matmul,
    "transpose": lambda g, n, d: (d.T,),
    "relu": lambda g, n, d: (d * (g.nodes[n.inputs[0]].value > 0.0),),
    "sigmoid": lambda g, n, d: (d * n.value * (1.0 - n.value),),
    "softplus": lambda g, n, d: (d * _stable_sigmoid(g.nodes[n.inputs[0]].value),),
    "exp": lambda g, n, d: (d * n.value,),
    "log": lambda g, n, d: (d / g.nodes[n.inputs[0]].value,),
    "square": lambda g, n, d: (2.0 * d * g.nodes[n.inputs[0]].value,),
    "sum": _vjp_sum,
    "take": _vjp_take,
    "slice": _vjp_slice,
    "softmax": _vjp_softmax,
    "xent": _vjp_xent,
    "gauss": _vjp_gauss,
}


def forward(graph: Graph, root: int) -> float:
    return graph.forward(root)


def backward(graph: Graph, root: int, wrt: int) -> Tensor:
    return graph.backward(root, wrt)


def finite_difference_gradient(objective: Callable[[np.ndarray], float], x: Any, h: float = 1e-5) -> Tensor:
    """Central-difference estimate of the gradient of a scalar objective."""

    if h <= 0:
        raise ContractViolation("Step must be positive", operation="finite_difference", h=h)
    point = np.array(x, dtype=np.float64)
    flat = point.reshape(-1)
    grad = np.zeros_like(flat)
    for index in range(flat.size):
        original = flat[index]
        flat[index] = original + h
        upper = float(objective(point))
        flat[index] = original - h
        lower = float(objective(point))
        flat[index] = original
        if not (np.isfinite(upper) and np.isfinite(lower)):
            raise NumericError("Objective is not finite near x", operation="finite_difference", index=index)
        grad[index] = (upper - lower) / (2.0 * h)
    return grad.reshape(point.shape)
