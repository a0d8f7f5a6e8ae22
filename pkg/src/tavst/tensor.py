"""Dense tensors with hand-written reverse-mode gradients.

Covers exactly the operations the model needs: matmul, gated-recurrence
arithmetic, softmax / cross-entropy, and the concat / stack / slice plumbing
that moves vectors between modules. Standard precision stores float32;
verify precision stores float64 (finite-difference certification is
unreliable at 32 bits). Gradients of a reused tensor accumulate by
summation.
"""

from __future__ import annotations

from enum import Enum
from typing import Sequence

import numpy as np


class ShapeError(ValueError):
    """Operand shapes are incompatible with the requested operation."""


class Precision(Enum):
    STANDARD = "standard"
    VERIFY = "verify"

    @property
    def dtype(self) -> np.dtype:
        return np.dtype(np.float32) if self is Precision.STANDARD else np.dtype(np.float64)


_grad_enabled = True


class no_grad:
    """Skip graph construction inside the block (decode-only passes)."""

    def __enter__(self):
        global _grad_enabled
        self._saved = _grad_enabled
        _grad_enabled = False
        return self

    def __exit__(self, *exc):
        global _grad_enabled
        _grad_enabled = self._saved
        return False


class Tensor:
    """Row-major numeric array with a paired same-shape gradient buffer."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if not np.issubdtype(arr.dtype, np.floating):
            arr = arr.astype(np.float64)
        self.data = arr
        self.grad = np.zeros_like(arr)
        self.requires_grad = requires_grad
        self._parents: tuple = ()
        self._backward = None

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self) -> None:
        self.grad[...] = 0.0

    def backward(self) -> None:
        """Reverse-mode accumulation from this scalar into every ancestor."""
        if self.data.size != 1:
            raise ShapeError(f"backward() needs a scalar, got shape {self.shape}")
        order = []
        visited = set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in visited:
                    stack.append((p, False))
        self.grad[...] = 1.0
        for node in reversed(order):
            if node._backward is not None:
                node._backward()

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype}, requires_grad={self.requires_grad})"


def _track(*tensors: Tensor) -> bool:
    return _grad_enabled and any(t.requires_grad for t in tensors)


def _attach(out: Tensor, parents: tuple, backward) -> None:
    out.requires_grad = True
    out._parents = parents
    out._backward = backward


# ---------------------------------------------------------------------------
# linear algebra
# ---------------------------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix/vector product for 2-D and 1-D operands."""
    A, B = a.data, b.data
    if A.ndim == 2 and B.ndim == 2:
        if A.shape[1] != B.shape[0]:
            raise ShapeError(f"matmul: inner dims disagree, {A.shape} @ {B.shape}")
    elif A.ndim == 2 and B.ndim == 1:
        if A.shape[1] != B.shape[0]:
            raise ShapeError(f"matmul: inner dims disagree, {A.shape} @ {B.shape}")
    elif A.ndim == 1 and B.ndim == 2:
        if A.shape[0] != B.shape[0]:
            raise ShapeError(f"matmul: inner dims disagree, {A.shape} @ {B.shape}")
    elif A.ndim == 1 and B.ndim == 1:
        if A.shape[0] != B.shape[0]:
            raise ShapeError(f"matmul: inner dims disagree, {A.shape} @ {B.shape}")
    else:
        raise ShapeError(f"matmul: unsupported ranks {A.shape} @ {B.shape}")
    out = Tensor(A @ B)
    if _track(a, b):
        def backward():
            g = out.grad
            if A.ndim == 2 and B.ndim == 2:
                if a.requires_grad:
                    a.grad += g @ B.T
                if b.requires_grad:
                    b.grad += A.T @ g
            elif A.ndim == 2 and B.ndim == 1:
                if a.requires_grad:
                    a.grad += np.outer(g, B)
                if b.requires_grad:
                    b.grad += A.T @ g
            elif A.ndim == 1 and B.ndim == 2:
                if a.requires_grad:
                    a.grad += B @ g
                if b.requires_grad:
                    b.grad += np.outer(A, g)
            else:
                if a.requires_grad:
                    a.grad += g * B
                if b.requires_grad:
                    b.grad += g * A
        _attach(out, (a, b), backward)
    return out


def linear(w: Tensor, x: Tensor, b: Tensor | None = None) -> Tensor:
    """y = w @ x (+ b) for w (out, in), x (in,). Fused to keep graphs small."""
    W, X = w.data, x.data
    if W.ndim != 2 or X.ndim != 1 or W.shape[1] != X.shape[0]:
        raise ShapeError(f"linear: need (out,in) @ (in,), got {W.shape} @ {X.shape}")
    y = W @ X
    if b is not None:
        if b.data.shape != y.shape:
            raise ShapeError(f"linear: bias shape {b.data.shape} != output {y.shape}")
        y = y + b.data
    out = Tensor(y)
    parents = (w, x) if b is None else (w, x, b)
    if _track(*parents):
        def backward():
            g = out.grad
            if w.requires_grad:
                w.grad += np.outer(g, X)
            if x.requires_grad:
                x.grad += W.T @ g
            if b is not None and b.requires_grad:
                b.grad += g
        _attach(out, parents, backward)
    return out


def transpose(a: Tensor) -> Tensor:
    if a.data.ndim != 2:
        raise ShapeError(f"transpose: need a matrix, got shape {a.shape}")
    out = Tensor(a.data.T.copy())
    if _track(a):
        def backward():
            a.grad += out.grad.T
        _attach(out, (a,), backward)
    return out


# ---------------------------------------------------------------------------
# elementwise arithmetic
# ---------------------------------------------------------------------------


def _same_shape(a: Tensor, b: Tensor, op: str) -> None:
    if a.data.shape != b.data.shape:
        raise ShapeError(f"{op}: shapes disagree, {a.shape} vs {b.shape}")


def add(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "add")
    out = Tensor(a.data + b.data)
    if _track(a, b):
        def backward():
            if a.requires_grad:
                a.grad += out.grad
            if b.requires_grad:
                b.grad += out.grad
        _attach(out, (a, b), backward)
    return out


def sub(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "sub")
    out = Tensor(a.data - b.data)
    if _track(a, b):
        def backward():
            if a.requires_grad:
                a.grad += out.grad
            if b.requires_grad:
                b.grad -= out.grad
        _attach(out, (a, b), backward)
    return out


def mul(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "mul")
    out = Tensor(a.data * b.data)
    if _track(a, b):
        def backward():
            if a.requires_grad:
                a.grad += out.grad * b.data
            if b.requires_grad:
                b.grad += out.grad * a.data
        _attach(out, (a, b), backward)
    return out


def scale(a: Tensor, c: float) -> Tensor:
    out = Tensor(a.data * c)
    if _track(a):
        def backward():
            a.grad += out.grad * c
        _attach(out, (a,), backward)
    return out


def add_const(a: Tensor, c: float) -> Tensor:
    out = Tensor(a.data + c)
    if _track(a):
        def backward():
            a.grad += out.grad
        _attach(out, (a,), backward)
    return out


def lerp(a: Tensor, b: Tensor, t: Tensor) -> Tensor:
    """(1 - t) * a + t * b, elementwise; the gated-recurrence blend."""
    _same_shape(a, b, "lerp")
    _same_shape(a, t, "lerp")
    out = Tensor((1.0 - t.data) * a.data + t.data * b.data)
    if _track(a, b, t):
        def backward():
            g = out.grad
            if a.requires_grad:
                a.grad += g * (1.0 - t.data)
            if b.requires_grad:
                b.grad += g * t.data
            if t.requires_grad:
                t.grad += g * (b.data - a.data)
        _attach(out, (a, b, t), backward)
    return out


def add_n(parts: Sequence[Tensor]) -> Tensor:
    """Sum of same-shape tensors as a single graph node (left-to-right order)."""
    if not parts:
        raise ShapeError("add_n: empty input")
    acc = parts[0].data.copy()
    for p in parts[1:]:
        _same_shape(parts[0], p, "add_n")
        acc = acc + p.data
    out = Tensor(acc)
    if _track(*parts):
        def backward():
            for p in parts:
                if p.requires_grad:
                    p.grad += out.grad
        _attach(out, tuple(parts), backward)
    return out


# ---------------------------------------------------------------------------
# nonlinearities
# ---------------------------------------------------------------------------


def tanh(x: Tensor) -> Tensor:
    out = Tensor(np.tanh(x.data))
    if _track(x):
        def backward():
            x.grad += out.grad * (1.0 - out.data * out.data)
        _attach(out, (x,), backward)
    return out


def sigmoid(x: Tensor) -> Tensor:
    # exp(-|x|) never overflows, so both branches stay finite
    t = np.exp(-np.abs(x.data))
    out = Tensor(np.where(x.data >= 0, 1.0 / (1.0 + t), t / (1.0 + t)))
    if _track(x):
        def backward():
            x.grad += out.grad * out.data * (1.0 - out.data)
        _attach(out, (x,), backward)
    return out


def relu(x: Tensor) -> Tensor:
    out = Tensor(np.maximum(x.data, 0.0))
    if _track(x):
        def backward():
            # subgradient 0 at exactly 0
            x.grad += out.grad * (x.data > 0)
        _attach(out, (x,), backward)
    return out


_ACTIVATIONS = {"tanh": tanh, "sigmoid": sigmoid, "relu": relu}


def activation(kind: str, x: Tensor) -> Tensor:
    """Elementwise nonlinearity by name: tanh, sigmoid, or relu."""
    try:
        fn = _ACTIVATIONS[kind]
    except KeyError:
        raise ValueError(f"unknown activation {kind!r}") from None
    return fn(x)


# ---------------------------------------------------------------------------
# softmax / cross-entropy
# ---------------------------------------------------------------------------


def softmax(x: Tensor) -> Tensor:
    """Stable softmax over a vector (max-subtraction)."""
    if x.data.ndim != 1 or x.data.shape[0] < 1:
        raise ShapeError(f"softmax: need a non-empty vector, got shape {x.shape}")
    e = np.exp(x.data - x.data.max())
    out = Tensor(e / e.sum())
    if _track(x):
        def backward():
            g = out.grad
            y = out.data
            x.grad += y * (g - np.dot(g, y))
        _attach(out, (x,), backward)
    return out


def log_softmax_values(logits: np.ndarray) -> np.ndarray:
    """Data-level log-softmax (no graph); used when recording distributions."""
    m = logits.max()
    z = logits - m
    return z - np.log(np.exp(z).sum())


def cross_entropy(logits: Tensor, target: int) -> Tensor:
    """-log softmax(logits)[target] as a scalar, stable via log-sum-exp."""
    x = logits.data
    if x.ndim != 1:
        raise ShapeError(f"cross_entropy: need a logit vector, got shape {logits.shape}")
    n = x.shape[0]
    if not 0 <= target < n:
        raise IndexError(f"cross_entropy: target {target} out of range [0, {n})")
    m = x.max()
    lse = m + np.log(np.exp(x - m).sum())
    out = Tensor(np.asarray(lse - x[target]))
    if _track(logits):
        def backward():
            p = np.exp(x - lse)
            p[target] -= 1.0
            logits.grad += out.grad * p
        _attach(out, (logits,), backward)
    return out


# ---------------------------------------------------------------------------
# shape plumbing
# ---------------------------------------------------------------------------


def concat(parts: Sequence[Tensor], axis: int = 0) -> Tensor:
    """Contiguous concatenation; backward slices the gradient back apart."""
    if not parts:
        raise ShapeError("concat: empty input")
    shapes = [p.data.shape for p in parts]
    base = shapes[0]
    for s in shapes[1:]:
        if len(s) != len(base) or any(
            s[d] != base[d] for d in range(len(base)) if d != axis
        ):
            raise ShapeError(f"concat: non-concat dims disagree across {shapes}")
    out = Tensor(np.concatenate([p.data for p in parts], axis=axis))
    if _track(*parts):
        offsets = np.cumsum([0] + [s[axis] for s in shapes])
        def backward():
            for p, lo, hi in zip(parts, offsets[:-1], offsets[1:]):
                if p.requires_grad:
                    sl = [slice(None)] * out.grad.ndim
                    sl[axis] = slice(lo, hi)
                    p.grad += out.grad[tuple(sl)]
        _attach(out, tuple(parts), backward)
    return out


def stack_rows(rows: Sequence[Tensor]) -> Tensor:
    """Stack 1-D vectors into a matrix, one per row."""
    if not rows:
        raise ShapeError("stack_rows: empty input")
    for r in rows:
        if r.data.ndim != 1 or r.data.shape != rows[0].data.shape:
            raise ShapeError(
                f"stack_rows: need equal-length vectors, got {[r.shape for r in rows]}"
            )
    out = Tensor(np.stack([r.data for r in rows], axis=0))
    if _track(*rows):
        def backward():
            for i, r in enumerate(rows):
                if r.requires_grad:
                    r.grad += out.grad[i]
        _attach(out, tuple(rows), backward)
    return out


def row(m: Tensor, i: int) -> Tensor:
    """Select row i of a matrix (also the embedding lookup)."""
    if m.data.ndim != 2:
        raise ShapeError(f"row: need a matrix, got shape {m.shape}")
    if not 0 <= i < m.data.shape[0]:
        raise IndexError(f"row: index {i} out of range [0, {m.data.shape[0]})")
    out = Tensor(m.data[i].copy())
    if _track(m):
        def backward():
            m.grad[i] += out.grad
        _attach(out, (m,), backward)
    return out


def flatten(x: Tensor) -> Tensor:
    out = Tensor(x.data.reshape(-1).copy())
    if _track(x):
        def backward():
            x.grad += out.grad.reshape(x.data.shape)
        _attach(out, (x,), backward)
    return out


def suppress_index(x: Tensor, i: int) -> Tensor:
    """Copy of a logit vector with entry i forced to -1e30 (decode masking)."""
    if x.data.ndim != 1:
        raise ShapeError(f"suppress_index: need a vector, got shape {x.shape}")
    data = x.data.copy()
    data[i] = -1e30
    out = Tensor(data)
    if _track(x):
        def backward():
            g = out.grad.copy()
            g[i] = 0.0
            x.grad += g
        _attach(out, (x,), backward)
    return out


# ---------------------------------------------------------------------------
# reductions
# ---------------------------------------------------------------------------


def reduce_sum(x: Tensor) -> Tensor:
    out = Tensor(np.asarray(x.data.sum()))
    if _track(x):
        def backward():
            x.grad += out.grad
        _attach(out, (x,), backward)
    return out


def reduce_mean(x: Tensor) -> Tensor:
    n = x.data.size
    out = Tensor(np.asarray(x.data.sum() / n))
    if _track(x):
        def backward():
            x.grad += out.grad / n
        _attach(out, (x,), backward)
    return out
