"""Minimal dense-tensor reverse-mode autodiff, Adam, and checkpoint io.

Values are float64 numpy arrays wrapped in graph `Node`s. The op set is just
what multilayer function approximators need: matmul, add, sub, elementwise
mul, relu, sigmoid, exp, square, clip, concat, narrow (slice), sum, mean,
plus scalar scaling. Each op records a backward closure; `backward()` runs
one reverse topological pass and accumulates dRoot/dLeaf into `Node.grad`.

Everything is batch-vectorised (a node usually holds a (batch, features)
array), single-threaded, and deterministic.
"""

from __future__ import annotations

import struct

import numpy as np


class ShapeError(ValueError):
    """Raised when operand shapes do not conform for an operation."""


class NonFiniteError(RuntimeError):
    """Raised when a value that must be finite is not."""


class Node:
    """One value in the computation graph.

    `value` and `grad` (lazily allocated) always share a shape. `parents`
    and `_backward` record how to push the gradient one step back.
    """

    __slots__ = ("value", "grad", "parents", "_backward")

    def __init__(self, value, parents=(), backward=None):
        self.value = value
        self.grad = None
        self.parents = parents
        self._backward = backward

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        return f"Node(shape={self.value.shape}, leaf={not self.parents})"

    # sugar used by model code; free functions below do the work
    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __matmul__(self, other):
        return matmul(self, other)


def constant(x) -> Node:
    """Wrap an array as a graph leaf (gradients stop here)."""
    value = np.asarray(x, dtype=np.float64)
    if not np.all(np.isfinite(value)):
        raise NonFiniteError("constant() given non-finite entries")
    return Node(value)


def parameter(x) -> Node:
    """Alias of constant(); a leaf whose .grad the optimizer will read."""
    return constant(x)


def _accum(node: Node, g: np.ndarray) -> None:
    if node.grad is None:
        node.grad = g.copy() if isinstance(g, np.ndarray) else np.asarray(g)
    else:
        node.grad = node.grad + g


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Reduce a broadcast gradient back to `shape` by summing expanded axes."""
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _check_broadcast(a: Node, b: Node, opname: str) -> None:
    try:
        np.broadcast_shapes(a.value.shape, b.value.shape)
    except ValueError:
        raise ShapeError(
            f"{opname}: shapes {a.value.shape} and {b.value.shape} do not broadcast"
        ) from None


def add(a: Node, b: Node) -> Node:
    _check_broadcast(a, b, "add")
    out = Node(a.value + b.value, (a, b))

    def bwd():
        _accum(a, _unbroadcast(out.grad, a.value.shape))
        _accum(b, _unbroadcast(out.grad, b.value.shape))

    out._backward = bwd
    return out


def sub(a: Node, b: Node) -> Node:
    _check_broadcast(a, b, "sub")
    out = Node(a.value - b.value, (a, b))

    def bwd():
        _accum(a, _unbroadcast(out.grad, a.value.shape))
        _accum(b, _unbroadcast(-out.grad, b.value.shape))

    out._backward = bwd
    return out


def mul(a: Node, b: Node) -> Node:
    """Elementwise (broadcasting) product."""
    _check_broadcast(a, b, "mul")
    out = Node(a.value * b.value, (a, b))

    def bwd():
        _accum(a, _unbroadcast(out.grad * b.value, a.value.shape))
        _accum(b, _unbroadcast(out.grad * a.value, b.value.shape))

    out._backward = bwd
    return out


def scale(a: Node, c: float) -> Node:
    """Multiply by a python float (no node for the scalar)."""
    c = float(c)
    out = Node(a.value * c, (a,))

    def bwd():
        _accum(a, out.grad * c)

    out._backward = bwd
    return out


def matmul(a: Node, b: Node) -> Node:
    if a.value.ndim != 2 or b.value.ndim != 2 or a.value.shape[1] != b.value.shape[0]:
        raise ShapeError(
            f"matmul: shapes {a.value.shape} and {b.value.shape} do not conform"
        )
    out = Node(a.value @ b.value, (a, b))

    def bwd():
        _accum(a, out.grad @ b.value.T)
        _accum(b, a.value.T @ out.grad)

    out._backward = bwd
    return out


def relu(a: Node) -> Node:
    mask = a.value > 0.0
    out = Node(np.where(mask, a.value, 0.0), (a,))

    def bwd():
        _accum(a, out.grad * mask)

    out._backward = bwd
    return out


def sigmoid(a: Node) -> Node:
    s = 1.0 / (1.0 + np.exp(-a.value))
    out = Node(s, (a,))

    def bwd():
        _accum(a, out.grad * s * (1.0 - s))

    out._backward = bwd
    return out


def exp(a: Node) -> Node:
    e = np.exp(a.value)
    out = Node(e, (a,))

    def bwd():
        _accum(a, out.grad * e)

    out._backward = bwd
    return out


def square(a: Node) -> Node:
    out = Node(a.value * a.value, (a,))

    def bwd():
        _accum(a, out.grad * 2.0 * a.value)

    out._backward = bwd
    return out


def clip(a: Node, lo: float, hi: float) -> Node:
    """Clamp to [lo, hi]; gradient is zero outside the open interval."""
    mask = (a.value > lo) & (a.value < hi)
    out = Node(np.clip(a.value, lo, hi), (a,))

    def bwd():
        _accum(a, out.grad * mask)

    out._backward = bwd
    return out


def concat(nodes, axis: int = 1) -> Node:
    nodes = list(nodes)
    if not nodes:
        raise ShapeError("concat: empty input")
    out = Node(np.concatenate([n.value for n in nodes], axis=axis), tuple(nodes))
    sizes = [n.value.shape[axis] for n in nodes]

    def bwd():
        offset = 0
        for n, size in zip(nodes, sizes):
            sl = [slice(None)] * out.grad.ndim
            sl[axis] = slice(offset, offset + size)
            _accum(n, out.grad[tuple(sl)])
            offset += size

    out._backward = bwd
    return out


def narrow(a: Node, axis: int, start: int, length: int) -> Node:
    """Contiguous slice along one axis (the graph 'slice' op)."""
    if start < 0 or start + length > a.value.shape[axis]:
        raise ShapeError(
            f"narrow: [{start}:{start + length}) out of range for shape "
            f"{a.value.shape} on axis {axis}"
        )
    sl = [slice(None)] * a.value.ndim
    sl[axis] = slice(start, start + length)
    sl = tuple(sl)
    out = Node(a.value[sl], (a,))

    def bwd():
        g = np.zeros_like(a.value)
        g[sl] = out.grad
        _accum(a, g)

    out._backward = bwd
    return out


def tensor_sum(a: Node) -> Node:
    """Full reduction to a 0-d scalar."""
    out = Node(np.asarray(a.value.sum()), (a,))

    def bwd():
        _accum(a, np.broadcast_to(out.grad, a.value.shape))

    out._backward = bwd
    return out


def mean(a: Node) -> Node:
    """Full-mean reduction to a 0-d scalar."""
    size = a.value.size
    out = Node(np.asarray(a.value.mean()), (a,))

    def bwd():
        _accum(a, np.broadcast_to(out.grad / size, a.value.shape))

    out._backward = bwd
    return out


def backward(root: Node) -> None:
    """Accumulate dRoot/dNode into .grad for every node reachable from root.

    Root must be scalar-shaped. Visits each node exactly once (reverse
    topological order), so shared subexpressions accumulate correctly.
    Repeated calls keep adding into existing gradients.
    """
    if root.value.ndim != 0 and root.value.size != 1:
        raise ShapeError(f"backward: root must be scalar-shaped, got {root.value.shape}")

    order: list[Node] = []
    seen: set[int] = set()
    stack: list[tuple[Node, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            if id(p) not in seen:
                stack.append((p, False))

    _accum(root, np.ones_like(root.value))
    for node in reversed(order):
        if node._backward is not None and node.grad is not None:
            node._backward()


class ParamStore:
    """Named parameter leaves plus Adam state and a step counter."""

    def __init__(self):
        self.params: dict[str, Node] = {}
        self._m: dict[str, np.ndarray] = {}
        self._v: dict[str, np.ndarray] = {}
        self.step_count = 0

    def add(self, name: str, value: np.ndarray) -> Node:
        if name in self.params:
            raise ValueError(f"duplicate parameter name: {name}")
        node = parameter(value)
        self.params[name] = node
        self._m[name] = np.zeros_like(node.value)
        self._v[name] = np.zeros_like(node.value)
        return node

    def __getitem__(self, name: str) -> Node:
        return self.params[name]

    def names(self):
        return list(self.params)

    def zero_grad(self) -> None:
        for node in self.params.values():
            node.grad = None

    def adam_step(self, lr: float = 1e-4, beta1: float = 0.9,
                  beta2: float = 0.999, eps: float = 1e-8) -> None:
        """One Adam update over all parameters; clears gradients after.

        Missing gradients count as zero (moments still decay). Any
        non-finite gradient aborts before touching any parameter.
        """
        for name, node in self.params.items():
            if node.grad is not None and not np.all(np.isfinite(node.grad)):
                raise NonFiniteError(f"non-finite gradient for parameter '{name}'")
        self.step_count += 1
        t = self.step_count
        bc1 = 1.0 - beta1 ** t
        bc2 = 1.0 - beta2 ** t
        for name, node in self.params.items():
            g = node.grad if node.grad is not None else 0.0
            m = self._m[name]
            v = self._v[name]
            m *= beta1
            m += (1.0 - beta1) * g
            v *= beta2
            v += (1.0 - beta2) * np.square(g)
            node.value = node.value - lr * (m / bc1) / (np.sqrt(v / bc2) + eps)
        self.zero_grad()

    def values(self) -> dict[str, np.ndarray]:
        return {name: node.value.copy() for name, node in self.params.items()}

    def load_values(self, arrays: dict[str, np.ndarray]) -> None:
        for name, arr in arrays.items():
            if name not in self.params:
                raise KeyError(f"unknown parameter '{name}'")
            node = self.params[name]
            if arr.shape != node.value.shape:
                raise ShapeError(
                    f"parameter '{name}': shapes {arr.shape} and {node.value.shape} differ"
                )
            node.value = np.asarray(arr, dtype=np.float64).copy()


CHECKPOINT_MAGIC = b"GAPW"
CHECKPOINT_VERSION = 1


def save_checkpoint(path, tensors: dict[str, np.ndarray],
                    version: int = CHECKPOINT_VERSION) -> None:
    """Write named float64 tensors in the GAPW binary format.

    Layout: magic "GAPW", version u32, tensor count u32, then per tensor:
    name length u32 + UTF-8 name, rank u32, extents u32 each, raw
    little-endian float64 data. All integers little-endian.
    """
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<II", version, len(tensors)))
        for name, arr in tensors.items():
            arr = np.ascontiguousarray(arr, dtype=np.float64)
            raw_name = name.encode("utf-8")
            fh.write(struct.pack("<I", len(raw_name)))
            fh.write(raw_name)
            fh.write(struct.pack("<I", arr.ndim))
            for extent in arr.shape:
                fh.write(struct.pack("<I", extent))
            fh.write(arr.astype("<f8").tobytes())


def load_checkpoint(path) -> dict[str, np.ndarray]:
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != CHECKPOINT_MAGIC:
            raise ValueError(f"{path}: bad magic {magic!r}, expected {CHECKPOINT_MAGIC!r}")
        version, count = struct.unpack("<II", fh.read(8))
        if version != CHECKPOINT_VERSION:
            raise ValueError(f"{path}: unsupported checkpoint version {version}")
        tensors: dict[str, np.ndarray] = {}
        for _ in range(count):
            (name_len,) = struct.unpack("<I", fh.read(4))
            name = fh.read(name_len).decode("utf-8")
            (rank,) = struct.unpack("<I", fh.read(4))
            shape = struct.unpack(f"<{rank}I", fh.read(4 * rank)) if rank else ()
            n = int(np.prod(shape)) if shape else 1
            data = np.frombuffer(fh.read(8 * n), dtype="<f8").astype(np.float64)
            tensors[name] = data.reshape(shape)
    return tensors
