#!/usr/bin/env python3
"""
Autodiff Component - dense double-precision tensors with reverse-mode differentiation

Every Tensor is also a graph node: it records the operation that produced it,
its parent tensors and a backward rule. Graphs are built on the fly for each
training step and thrown away afterwards.
"""

from enum import Enum
from typing import Callable, Dict, Iterable, Mapping, Optional, Sequence, Tuple

import numpy as np

from components.errors import ContractError, ShapeError

# Probabilities are clamped to this band before taking a logarithm
PROB_EPS = 1e-7
# Variance floor used by layer normalization
LAYER_NORM_EPS = 1e-5


class Op(str, Enum):
    """Operation tags recorded on graph nodes"""

    LEAF = "leaf"
    MATMUL = "matmul"
    ADD = "add"
    SUB = "sub"
    MUL = "mul"
    SCALAR_MUL = "scalar_mul"
    POWER = "power"
    LOG = "log"
    EXP = "exp"
    SIGMOID = "sigmoid"
    SOFTMAX = "softmax"
    CONCAT = "concat"
    GATHER = "gather"
    SUM = "sum"
    MEAN = "mean"
    TRANSPOSE = "transpose"
    LAYER_NORM = "layer_norm"
    RELU = "relu"
    CLIP = "clip"
    RESHAPE = "reshape"
    STRAIGHT_THROUGH = "straight_through"


BackwardFn = Callable[[np.ndarray], Tuple[Optional[np.ndarray], ...]]


def _unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    """Sum a broadcast gradient back down to the operand's shape"""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _broadcast_shape(op: str, a: "Tensor", b: "Tensor") -> Tuple[int, ...]:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(op, a.shape, b.shape) from None


class Tensor:
    """
    Dense float64 tensor that doubles as a node of the computation graph

    Args:
        data: array-like values (copied and stored as float64)
        requires_grad (bool): whether backward should produce a gradient for this leaf
        name (str, optional): label used in diagnostics
    """

    def __init__(self, data, requires_grad: bool = False, name: Optional[str] = None):
        array = np.array(data, dtype=np.float64)
        if any(dim < 1 for dim in array.shape):
            raise ShapeError("tensor", array.shape)
        self.data = array
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = requires_grad
        self.name = name
        self.op = Op.LEAF
        self.parents: Tuple["Tensor", ...] = ()
        self._backward: Optional[BackwardFn] = None

    @classmethod
    def _node(cls, data: np.ndarray, op: Op, parents: Sequence["Tensor"],
              backward: BackwardFn) -> "Tensor":
        node = cls.__new__(cls)
        node.data = np.asarray(data, dtype=np.float64)
        node.grad = None
        node.name = None
        node.op = op
        node.parents = tuple(parents)
        node.requires_grad = any(p.requires_grad for p in parents)
        node._backward = backward if node.requires_grad else None
        return node

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        return self.data.copy()

    def detach(self) -> "Tensor":
        """Same values, cut from the graph"""
        return Tensor(self.data)

    def __repr__(self):
        label = f" name={self.name}" if self.name else ""
        return f"Tensor(shape={self.shape}, op={self.op.value}{label})"

    # Operators delegate to the module-level ops below
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scalar_mul(self, other)
        return mul(self, other)

    def __rmul__(self, other):
        return self.__mul__(other)

    def __neg__(self):
        return scalar_mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __pow__(self, exponent: float):
        return power(self, exponent)

    @property
    def T(self) -> "Tensor":
        return transpose(self)

    def sum(self, axis: Optional[int] = None) -> "Tensor":
        return tensor_sum(self, axis)

    def mean(self, axis: Optional[int] = None) -> "Tensor":
        return tensor_mean(self, axis)

    def reshape(self, *shape) -> "Tensor":
        return reshape(self, shape[0] if len(shape) == 1 and isinstance(shape[0], tuple) else shape)

    def backward(self) -> None:
        """Populate .grad on every node reachable from this scalar"""
        if self.data.size != 1:
            raise ContractError(f"backward requires a scalar loss, got shape {self.shape}")
        order = _topological_order(self)
        for node in order:
            node.grad = None
        self.grad = np.ones_like(self.data)
        for node in reversed(order):
            if node._backward is None or node.grad is None:
                continue
            parent_grads = node._backward(node.grad)
            for parent, grad in zip(node.parents, parent_grads):
                if grad is None or not parent.requires_grad:
                    continue
                parent.grad = grad if parent.grad is None else parent.grad + grad


def _topological_order(root: Tensor):
    """Parents-before-children order, computed iteratively to survive deep graphs"""
    order = []
    visited = set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for parent in reversed(node.parents):
            if id(parent) not in visited:
                stack.append((parent, False))
    return order


def as_tensor(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


def backward(loss: Tensor, params: Mapping[str, Tensor]) -> Dict[str, np.ndarray]:
    """
    Run reverse-mode differentiation from a scalar loss

    Args:
        loss (Tensor): scalar node
        params (Mapping[str, Tensor]): named parameters to collect gradients for

    Returns:
        dict: parameter name -> gradient array (zeros for unreachable parameters)

    Raises:
        ContractError: If the loss is not a scalar
    """
    for tensor in params.values():
        tensor.grad = None
    loss.backward()
    grads = {}
    for name, tensor in params.items():
        grads[name] = tensor.grad.copy() if tensor.grad is not None else np.zeros_like(tensor.data)
    return grads


# ---------------------------------------------------------------------------
# Operations
# ---------------------------------------------------------------------------

def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError("matmul", a.shape, b.shape)

    def _backward(grad):
        return grad @ b.data.T, a.data.T @ grad

    return Tensor._node(a.data @ b.data, Op.MATMUL, (a, b), _backward)


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("add", a, b)

    def _backward(grad):
        return _unbroadcast(grad, a.shape), _unbroadcast(grad, b.shape)

    return Tensor._node(a.data + b.data, Op.ADD, (a, b), _backward)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("sub", a, b)

    def _backward(grad):
        return _unbroadcast(grad, a.shape), _unbroadcast(-grad, b.shape)

    return Tensor._node(a.data - b.data, Op.SUB, (a, b), _backward)


def mul(a, b) -> Tensor:
    """Elementwise product with numpy broadcasting"""
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("mul", a, b)

    def _backward(grad):
        return _unbroadcast(grad * b.data, a.shape), _unbroadcast(grad * a.data, b.shape)

    return Tensor._node(a.data * b.data, Op.MUL, (a, b), _backward)


def scalar_mul(a, c: float) -> Tensor:
    a = as_tensor(a)
    c = float(c)

    def _backward(grad):
        return (grad * c,)

    return Tensor._node(a.data * c, Op.SCALAR_MUL, (a,), _backward)


def power(a, exponent: float) -> Tensor:
    a = as_tensor(a)
    exponent = float(exponent)

    def _backward(grad):
        if exponent == 0.0:
            return (np.zeros_like(a.data),)
        return (grad * exponent * a.data ** (exponent - 1.0),)

    return Tensor._node(a.data ** exponent, Op.POWER, (a,), _backward)


def log(a) -> Tensor:
    a = as_tensor(a)

    def _backward(grad):
        return (grad / a.data,)

    return Tensor._node(np.log(a.data), Op.LOG, (a,), _backward)


def log_prob(p) -> Tensor:
    """Logarithm of a probability, clamped to [PROB_EPS, 1 - PROB_EPS] first"""
    return log(clip(p, PROB_EPS, 1.0 - PROB_EPS))


def exp(a) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.data)

    def _backward(grad):
        return (grad * out,)

    return Tensor._node(out, Op.EXP, (a,), _backward)


def sigmoid(a) -> Tensor:
    """Logistic function; outputs are clamped to [PROB_EPS, 1 - PROB_EPS]"""
    a = as_tensor(a)
    x = a.data
    raw = np.empty_like(x)
    positive = x >= 0
    raw[positive] = 1.0 / (1.0 + np.exp(-x[positive]))
    ex = np.exp(x[~positive])
    raw[~positive] = ex / (1.0 + ex)
    out = np.clip(raw, PROB_EPS, 1.0 - PROB_EPS)
    inside = (raw > PROB_EPS) & (raw < 1.0 - PROB_EPS)

    def _backward(grad):
        return (grad * out * (1.0 - out) * inside,)

    return Tensor._node(out, Op.SIGMOID, (a,), _backward)


def softmax(a, axis: int = -1) -> Tensor:
    a = as_tensor(a)
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def _backward(grad):
        inner = (grad * out).sum(axis=axis, keepdims=True)
        return (out * (grad - inner),)

    return Tensor._node(out, Op.SOFTMAX, (a,), _backward)


def concat(tensors: Sequence, axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    if not tensors:
        raise ContractError("concat requires at least one tensor")
    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError:
        raise ShapeError("concat", *[t.shape for t in tensors]) from None
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def _backward(grad):
        return tuple(np.split(grad, bounds, axis=axis))

    return Tensor._node(out, Op.CONCAT, tensors, _backward)


def gather(a, indices: Iterable[int]) -> Tensor:
    """Select rows (entries along axis 0) by index; repeats are allowed"""
    a = as_tensor(a)
    idx = np.asarray(list(indices) if not isinstance(indices, np.ndarray) else indices, dtype=np.int64)
    if idx.ndim != 1 or idx.size == 0:
        raise ShapeError("gather", a.shape, idx.shape)
    if idx.min() < 0 or idx.max() >= a.shape[0]:
        raise ContractError(f"gather index out of range for {a.shape[0]} rows")

    def _backward(grad):
        out_grad = np.zeros_like(a.data)
        np.add.at(out_grad, idx, grad)
        return (out_grad,)

    return Tensor._node(a.data[idx], Op.GATHER, (a,), _backward)


def tensor_sum(a, axis: Optional[int] = None) -> Tensor:
    a = as_tensor(a)

    def _backward(grad):
        if axis is None:
            return (np.broadcast_to(grad, a.shape).copy(),)
        return (np.broadcast_to(np.expand_dims(grad, axis), a.shape).copy(),)

    return Tensor._node(a.data.sum(axis=axis), Op.SUM, (a,), _backward)


def tensor_mean(a, axis: Optional[int] = None) -> Tensor:
    a = as_tensor(a)
    count = a.data.size if axis is None else a.shape[axis]

    def _backward(grad):
        if axis is None:
            return (np.broadcast_to(grad / count, a.shape).copy(),)
        return (np.broadcast_to(np.expand_dims(grad, axis) / count, a.shape).copy(),)

    return Tensor._node(a.data.mean(axis=axis), Op.MEAN, (a,), _backward)


def transpose(a) -> Tensor:
    a = as_tensor(a)
    if a.data.ndim != 2:
        raise ShapeError("transpose", a.shape)

    def _backward(grad):
        return (grad.T,)

    return Tensor._node(a.data.T, Op.TRANSPOSE, (a,), _backward)


def reshape(a, shape: Sequence[int]) -> Tensor:
    a = as_tensor(a)
    shape = tuple(int(s) for s in shape)
    try:
        out = a.data.reshape(shape)
    except ValueError:
        raise ShapeError("reshape", a.shape, shape) from None

    def _backward(grad):
        return (grad.reshape(a.shape),)

    return Tensor._node(out, Op.RESHAPE, (a,), _backward)


def layer_norm(a, eps: float = LAYER_NORM_EPS) -> Tensor:
    """Normalize the last axis to zero mean and unit variance (no affine part)"""
    a = as_tensor(a)
    mu = a.data.mean(axis=-1, keepdims=True)
    centered = a.data - mu
    inv_std = 1.0 / np.sqrt((centered ** 2).mean(axis=-1, keepdims=True) + eps)
    normed = centered * inv_std

    def _backward(grad):
        g_mean = grad.mean(axis=-1, keepdims=True)
        gx_mean = (grad * normed).mean(axis=-1, keepdims=True)
        return (inv_std * (grad - g_mean - normed * gx_mean),)

    return Tensor._node(normed, Op.LAYER_NORM, (a,), _backward)


def relu(a) -> Tensor:
    a = as_tensor(a)
    mask = a.data > 0

    def _backward(grad):
        return (grad * mask,)

    return Tensor._node(a.data * mask, Op.RELU, (a,), _backward)


def clip(a, low: float, high: float) -> Tensor:
    """Clamp values; the gradient passes only where the input was inside the band"""
    a = as_tensor(a)
    inside = (a.data >= low) & (a.data <= high)

    def _backward(grad):
        return (grad * inside,)

    return Tensor._node(np.clip(a.data, low, high), Op.CLIP, (a,), _backward)


def straight_through(hard: np.ndarray, soft) -> Tensor:
    """Forward value is `hard`; the gradient flows to `soft` unchanged"""
    soft = as_tensor(soft)
    hard = np.asarray(hard, dtype=np.float64)
    if hard.shape != soft.shape:
        raise ShapeError("straight_through", hard.shape, soft.shape)

    def _backward(grad):
        return (grad,)

    return Tensor._node(hard.copy(), Op.STRAIGHT_THROUGH, (soft,), _backward)


_FORWARD_TABLE = {
    Op.MATMUL: matmul,
    Op.ADD: add,
    Op.SUB: sub,
    Op.MUL: mul,
    Op.SCALAR_MUL: scalar_mul,
    Op.POWER: power,
    Op.LOG: log,
    Op.EXP: exp,
    Op.SIGMOID: sigmoid,
    Op.SOFTMAX: softmax,
    Op.CONCAT: lambda *ts, axis=0: concat(ts, axis=axis),
    Op.GATHER: gather,
    Op.SUM: tensor_sum,
    Op.MEAN: tensor_mean,
    Op.TRANSPOSE: transpose,
    Op.LAYER_NORM: layer_norm,
    Op.RELU: relu,
    Op.CLIP: clip,
    Op.RESHAPE: reshape,
    Op.STRAIGHT_THROUGH: straight_through,
}


def forward_op(kind, *inputs, **attrs) -> Tensor:
    """
    Dispatch an operation by tag

    Args:
        kind (Op or str): operation tag
        *inputs: operand tensors followed by positional attributes
            (scalar for scalar_mul/power, indices for gather, bounds for clip)
        **attrs: keyword attributes such as axis

    Returns:
        Tensor: the result node
    """
    try:
        op = Op(kind)
    except ValueError:
        raise ContractError(f"unknown operation '{kind}'") from None
    if op is Op.LEAF:
        raise ContractError("leaf is not an operation")
    return _FORWARD_TABLE[op](*inputs, **attrs)
