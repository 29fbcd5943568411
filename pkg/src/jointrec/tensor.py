"""Minimal dense float64 tensor engine with reverse-mode differentiation.

Every trainable quantity in this package lives in a `Tensor`; losses are
scalar tensors and `backward()` accumulates gradients into leaf tensors.
A central-difference oracle (`finite_difference_gradient`) is provided so
every analytic gradient can be checked against an independent route.
"""

from __future__ import annotations

import numpy as np


class ShapeError(ValueError):
    """Raised when an op receives incompatible shapes."""


class NonScalarRootError(ValueError):
    """Raised when backward() is called on a non-scalar tensor."""


BCE_EPS = 1e-12  # probability clamp keeping the loss finite at saturation


def _arr(x) -> np.ndarray:
    return np.asarray(x, dtype=np.float64)


class Tensor:
    """A dense float64 array plus the bookkeeping for reverse-mode autodiff.

    Leaves created with requires_grad=True start with a zero gradient
    buffer; gradients accumulate (sum) across backward passes until
    explicitly zeroed.
    """

    __slots__ = ("data", "grad", "requires_grad", "op", "_prev", "_backward_fn")

    def __init__(self, data, requires_grad=False, op="leaf", prev=()):
        self.data = _arr(data)
        self.requires_grad = bool(requires_grad)
        self.op = op
        self._prev = tuple(p for p in prev if p.requires_grad)
        self._backward_fn = None
        # leaves carry a persistent accumulator; intermediates get one lazily
        self.grad = np.zeros_like(self.data) if (requires_grad and not prev) else None

    @property
    def shape(self):
        return self.data.shape

    def detach(self) -> "Tensor":
        """A constant copy; gradients do not flow through it."""
        return Tensor(self.data.copy())

    def item(self) -> float:
        return float(self.data)

    def backward(self):
        """Reverse-mode accumulation from a scalar root.

        Leaf gradients are additive across calls; intermediate buffers are
        reset on every call so repeated backward() exactly doubles leaves.
        """
        if self.data.shape != ():
            raise NonScalarRootError(
                f"backward requires a scalar root, got shape {self.data.shape}")
        topo = self._toposort()
        for node in topo:
            if node._prev:  # intermediate: fresh buffer per pass
                node.grad = np.zeros_like(node.data)
            elif node.grad is None:
                node.grad = np.zeros_like(node.data)
        self.grad = self.grad + 1.0 if self.grad is not None else np.ones(())
        if not self._prev:
            return
        for node in reversed(topo):
            if node._backward_fn is not None:
                node._backward_fn()

    def _toposort(self):
        order, visited, stack = [], set(), [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for p in node._prev:
                if id(p) not in visited:
                    stack.append((p, False))
        return order

    def __repr__(self):
        return f"Tensor(op={self.op}, shape={self.data.shape})"


class Parameters:
    """Named trainable leaf tensors with per-leaf gradient accumulators."""

    def __init__(self):
        self._store: dict[str, Tensor] = {}

    def add(self, name: str, data) -> Tensor:
        if name in self._store:
            raise ValueError(f"duplicate parameter name: {name}")
        t = Tensor(data, requires_grad=True)
        self._store[name] = t
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self._store[name]

    def __contains__(self, name: str) -> bool:
        return name in self._store

    def __len__(self):
        return len(self._store)

    def names(self):
        return list(self._store)

    def items(self):
        return self._store.items()

    def zero_grads(self, prefix: str = ""):
        for name, t in self._store.items():
            if name.startswith(prefix):
                t.grad = np.zeros_like(t.data)

    def snapshot_grads(self, prefix: str = "") -> dict[str, np.ndarray]:
        return {n: t.grad.copy() for n, t in self._store.items()
                if n.startswith(prefix)}

    def grad_norm(self, prefix: str = "") -> float:
        total = 0.0
        for name, t in self._store.items():
            if name.startswith(prefix):
                total += float(np.sum(t.grad * t.grad))
        return float(np.sqrt(total))

    def sgd_step(self, lr: float, prefix: str = ""):
        """In-place descent step on every parameter under `prefix`."""
        for name, t in self._store.items():
            if name.startswith(prefix):
                t.data -= lr * t.grad


def _check2d(op, *tensors):
    for t in tensors:
        if t.data.ndim != 2:
            raise ShapeError(f"{op}: expected 2-d input, got shape {t.data.shape}")


def _node(data, op, prev, backward_fn):
    out = Tensor(data, requires_grad=any(p.requires_grad for p in prev),
                 op=op, prev=prev)
    if out.requires_grad:
        out._backward_fn = backward_fn(out)
    return out


def constant(data) -> Tensor:
    return Tensor(data)


# ---------------------------------------------------------------------------
# arithmetic


def matmul(a: Tensor, b: Tensor) -> Tensor:
    _check2d("matmul", a, b)
    if a.data.shape[1] != b.data.shape[0]:
        raise ShapeError(f"matmul: {a.data.shape} @ {b.data.shape}")

    def bw(out):
        def run():
            if a.requires_grad:
                a.grad += out.grad @ b.data.T
            if b.requires_grad:
                b.grad += a.data.T @ out.grad
        return run

    return _node(a.data @ b.data, "matmul", (a, b), bw)


def add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise add; the only broadcast allowed is a row bias (n,) or (1,n)."""
    sa, sb = a.data.shape, b.data.shape
    if sa == sb:
        bias = False
    elif len(sa) == 2 and sb in ((sa[1],), (1, sa[1])):
        bias = True
    else:
        raise ShapeError(f"add: {sa} + {sb}")

    def bw(out):
        def run():
            if a.requires_grad:
                a.grad += out.grad
            if b.requires_grad:
                b.grad += out.grad.sum(axis=0).reshape(sb) if bias else out.grad
        return run

    return _node(a.data + b.data, "add", (a, b), bw)


def sub(a: Tensor, b: Tensor) -> Tensor:
    if a.data.shape != b.data.shape:
        raise ShapeError(f"sub: {a.data.shape} - {b.data.shape}")

    def bw(out):
        def run():
            if a.requires_grad:
                a.grad += out.grad
            if b.requires_grad:
                b.grad -= out.grad
        return run

    return _node(a.data - b.data, "sub", (a, b), bw)


def mul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.shape != b.data.shape:
        raise ShapeError(f"mul: {a.data.shape} * {b.data.shape}")

    def bw(out):
        def run():
            if a.requires_grad:
                a.grad += out.grad * b.data
            if b.requires_grad:
                b.grad += out.grad * a.data
        return run

    return _node(a.data * b.data, "mul", (a, b), bw)


def scale(a: Tensor, c: float) -> Tensor:
    c = float(c)

    def bw(out):
        def run():
            if a.requires_grad:
                a.grad += c * out.grad
        return run

    return _node(a.data * c, "scale", (a,), bw)


def scale_rows(x: Tensor, s: Tensor) -> Tensor:
    """Multiply each row of x (m,n) by the scalar in s (m,1)."""
    _check2d("scale_rows", x, s)
    if s.data.shape != (x.data.shape[0], 1):
        raise ShapeError(f"scale_rows: {x.data.shape} rows-by {s.data.shape}")

    def bw(out):
        def run():
            if x.requires_grad:
                x.grad += out.grad * s.data
            if s.requires_grad:
                s.grad += (out.grad * x.data).sum(axis=1, keepdims=True)
        return run

    return _node(x.data * s.data, "scale_rows", (x, s), bw)


def concat(parts, axis: int = 1) -> Tensor:
    if axis != 1:
        raise ShapeError("concat: only the feature axis (1) is supported")
    _check2d("concat", *parts)
    rows = {p.data.shape[0] for p in parts}
    if len(rows) != 1:
        raise ShapeError(f"concat: row mismatch {[p.data.shape for p in parts]}")
    widths = [p.data.shape[1] for p in parts]
    offsets = np.cumsum([0] + widths)

    def bw(out):
        def run():
            for p, lo, hi in zip(parts, offsets[:-1], offsets[1:]):
                if p.requires_grad:
                    p.grad += out.grad[:, lo:hi]
        return run

    return _node(np.concatenate([p.data for p in parts], axis=1),
                 "concat", tuple(parts), bw)


def slice_cols(x: Tensor, lo: int, hi: int) -> Tensor:
    _check2d("slice_cols", x)
    if not (0 <= lo < hi <= x.data.shape[1]):
        raise ShapeError(f"slice_cols: [{lo}:{hi}] of {x.data.shape}")

    def bw(out):
        def run():
            if x.requires_grad:
                x.grad[:, lo:hi] += out.grad
        return run

    return _node(x.data[:, lo:hi].copy(), "slice_cols", (x,), bw)


# ---------------------------------------------------------------------------
# nonlinearities


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid(x: Tensor) -> Tensor:
    val = _sigmoid(x.data)

    def bw(out):
        def run():
            if x.requires_grad:
                x.grad += out.grad * val * (1.0 - val)
        return run

    return _node(val, "sigmoid", (x,), bw)


def relu(x: Tensor) -> Tensor:
    def bw(out):
        def run():
            if x.requires_grad:
                x.grad += out.grad * (x.data > 0)
        return run

    return _node(np.maximum(x.data, 0.0), "relu", (x,), bw)


def softplus(x: Tensor) -> Tensor:
    """Elementwise ln(1 + e^x), computed without overflow."""
    def bw(out):
        def run():
            if x.requires_grad:
                x.grad += out.grad * _sigmoid(x.data)
        return run

    return _node(np.logaddexp(0.0, x.data), "softplus", (x,), bw)


def row_softmax(x: Tensor) -> Tensor:
    _check2d("row_softmax", x)
    shifted = x.data - x.data.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    p = e / e.sum(axis=1, keepdims=True)

    def bw(out):
        def run():
            if x.requires_grad:
                gp = out.grad * p
                x.grad += gp - p * gp.sum(axis=1, keepdims=True)
        return run

    return _node(p, "row_softmax", (x,), bw)


# ---------------------------------------------------------------------------
# reductions


def mean(x: Tensor, axis: int) -> Tensor:
    if not (0 <= axis < x.data.ndim):
        raise ShapeError(f"mean: axis {axis} of shape {x.data.shape}")
    size = x.data.shape[axis]

    def bw(out):
        def run():
            if x.requires_grad:
                x.grad += np.expand_dims(out.grad, axis) / size
        return run

    return _node(x.data.mean(axis=axis), "mean", (x,), bw)


def rowsum(x: Tensor) -> Tensor:
    """Sum over the feature axis, keeping a (m,1) column."""
    _check2d("rowsum", x)

    def bw(out):
        def run():
            if x.requires_grad:
                x.grad += out.grad  # broadcasts the (m,1) column
        return run

    return _node(x.data.sum(axis=1, keepdims=True), "rowsum", (x,), bw)


def sum_all(x: Tensor) -> Tensor:
    def bw(out):
        def run():
            if x.requires_grad:
                x.grad += out.grad
        return run

    return _node(x.data.sum(), "sum_all", (x,), bw)


def frobenius_sq(x: Tensor) -> Tensor:
    def bw(out):
        def run():
            if x.requires_grad:
                x.grad += out.grad * 2.0 * x.data
        return run

    return _node(np.sum(x.data * x.data), "frobenius_sq", (x,), bw)


def bce_mean(p: Tensor, y: np.ndarray) -> Tensor:
    """Mean binary cross-entropy of probabilities p against 0/1 targets y.

    Probabilities are clamped to [BCE_EPS, 1-BCE_EPS]; the gradient is zero
    where the clamp is active.
    """
    y = _arr(y)
    if p.data.shape != y.shape:
        raise ShapeError(f"bce: predictions {p.data.shape} vs labels {y.shape}")
    n = p.data.size
    clamped = np.clip(p.data, BCE_EPS, 1.0 - BCE_EPS)
    inside = (p.data > BCE_EPS) & (p.data < 1.0 - BCE_EPS)
    val = -np.mean(y * np.log(clamped) + (1.0 - y) * np.log1p(-clamped))

    def bw(out):
        def run():
            if p.requires_grad:
                g = (clamped - y) / (clamped * (1.0 - clamped)) / n
                p.grad += out.grad * np.where(inside, g, 0.0)
        return run

    return _node(val, "bce", (p,), bw)


def scalar_combine(terms, coeffs) -> Tensor:
    """Weighted sum of scalar tensors with constant coefficients."""
    coeffs = [float(c) for c in coeffs]
    if len(terms) != len(coeffs):
        raise ShapeError(f"scalar_combine: {len(terms)} terms, {len(coeffs)} coeffs")
    for t in terms:
        if t.data.shape != ():
            raise ShapeError(f"scalar_combine: non-scalar term of shape {t.data.shape}")

    def bw(out):
        def run():
            for t, c in zip(terms, coeffs):
                if t.requires_grad:
                    t.grad += c * out.grad
        return run

    val = sum(c * t.data for t, c in zip(terms, coeffs))
    return _node(val, "scalar_combine", tuple(terms), bw)


# ---------------------------------------------------------------------------
# indexing / shaping


def gather(m: Tensor, idx) -> Tensor:
    """Rows of a 2-d tensor by integer index; backward scatter-adds."""
    _check2d("gather", m)
    idx = np.asarray(idx, dtype=np.int64)
    if idx.ndim != 1:
        raise ShapeError(f"gather: index must be 1-d, got shape {idx.shape}")
    if idx.size and (idx.min() < 0 or idx.max() >= m.data.shape[0]):
        raise ShapeError(f"gather: index out of range for {m.data.shape[0]} rows")

    def bw(out):
        def run():
            if m.requires_grad:
                np.add.at(m.grad, idx, out.grad)
        return run

    return _node(m.data[idx], "gather", (m,), bw)


def stack_tokens(tokens) -> Tensor:
    """Stack T same-shape (m,d) tensors into (m,T,d) along a token axis."""
    _check2d("stack", *tokens)
    shapes = {t.data.shape for t in tokens}
    if len(shapes) != 1:
        raise ShapeError(f"stack: mixed shapes {[t.data.shape for t in tokens]}")

    def bw(out):
        def run():
            for i, t in enumerate(tokens):
                if t.requires_grad:
                    t.grad += out.grad[:, i, :]
        return run

    return _node(np.stack([t.data for t in tokens], axis=1),
                 "stack", tuple(tokens), bw)


def token_slice(x: Tensor, t: int) -> Tensor:
    """Unstack: token t of a (m,T,d) tensor as (m,d)."""
    if x.data.ndim != 3:
        raise ShapeError(f"token_slice: expected 3-d input, got {x.data.shape}")
    if not (0 <= t < x.data.shape[1]):
        raise ShapeError(f"token_slice: token {t} of {x.data.shape}")

    def bw(out):
        def run():
            if x.requires_grad:
                x.grad[:, t, :] += out.grad
        return run

    return _node(x.data[:, t, :].copy(), "token_slice", (x,), bw)


def unstack_tokens(x: Tensor):
    return [token_slice(x, t) for t in range(x.data.shape[1])]


def edge_aggregate(h: Tensor, src, dst, coeff, num_nodes: int) -> Tensor:
    """Sparse propagate: out[src[k]] += coeff[k] * h[dst[k]].

    Edge order is preserved in the accumulation, so callers that sort edges
    by a labeling-independent key get bit-identical results under node
    relabeling.
    """
    _check2d("edge_aggregate", h)
    src = np.asarray(src, dtype=np.int64)
    dst = np.asarray(dst, dtype=np.int64)
    coeff = _arr(coeff)
    if not (src.shape == dst.shape == coeff.shape):
        raise ShapeError(
            f"edge_aggregate: src {src.shape}, dst {dst.shape}, coeff {coeff.shape}")
    if src.size and (src.max() >= num_nodes or dst.max() >= h.data.shape[0]
                     or src.min() < 0 or dst.min() < 0):
        raise ShapeError("edge_aggregate: edge index out of range")

    out_data = np.zeros((num_nodes, h.data.shape[1]))
    np.add.at(out_data, src, coeff[:, None] * h.data[dst])

    def bw(out):
        def run():
            if h.requires_grad:
                np.add.at(h.grad, dst, coeff[:, None] * out.grad[src])
        return run

    return _node(out_data, "edge_aggregate", (h,), bw)


# ---------------------------------------------------------------------------
# gradient oracle


def finite_difference_gradient(builder, params: Parameters, h: float = 1e-5,
                               names=None) -> dict[str, np.ndarray]:
    """Central-difference gradient of builder(params) per parameter coordinate.

    The builder must be a deterministic function of the parameter values; it
    is re-evaluated 2x per coordinate with the coordinate nudged by +-h.
    """
    if h <= 0:
        raise ValueError("finite differences need h > 0")
    grads = {}
    for name, t in params.items():
        if names is not None and name not in names:
            continue
        flat = t.data.ravel()
        g = np.zeros(flat.size)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            fp = float(builder(params).data)
            flat[i] = orig - h
            fm = float(builder(params).data)
            flat[i] = orig
            g[i] = (fp - fm) / (2.0 * h)
        grads[name] = g.reshape(t.data.shape)
    return grads
