"""Dense float64 tensors with a reverse-mode differentiation tape.

Every value is a node in an acyclic expression graph. Leaf nodes hold
parameters or constants; interior nodes remember the operation that
produced them plus a vector-Jacobian-product rule. ``backward`` sweeps
the graph in reverse topological order and accumulates adjoints, and
``finite_difference_check`` validates any scalar expression against
central differences.

Storage is always row-major contiguous float64; scalars have shape (1,).
There is no broadcasting: the few "row-wise" operations that the models
and losses need are explicit ops with their own backward rules.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .errors import ContractError, DimensionError, NumericError

Array = np.ndarray


def _as_buffer(values) -> Array:
    """Coerce input to a C-contiguous float64 array with ndim >= 1."""
    arr = np.ascontiguousarray(values, dtype=np.float64)
    if arr.ndim == 0:
        arr = arr.reshape(1)
    if arr.size == 0:
        raise DimensionError("empty tensors are not allowed")
    return arr


class Tensor:
    """One node of the tape: a float64 value plus backward plumbing.

    ``data`` is the value, ``grad`` the adjoint (filled by ``backward``),
    ``op`` the producing operation ("leaf" for parameters/constants), and
    ``inputs`` the parent nodes. Values are treated as immutable once the
    node exists.
    """

    __slots__ = ("data", "op", "inputs", "grad", "requires_grad", "name", "_vjp")

    def __init__(self, values, *, requires_grad: bool = False, name: str | None = None,
                 op: str = "leaf", inputs: tuple["Tensor", ...] = (),
                 vjp: Callable[[Array], Sequence[Array | None]] | None = None):
        self.data = _as_buffer(values)
        self.op = op
        self.inputs = inputs
        self.grad: Array | None = None
        self.requires_grad = requires_grad or any(t.requires_grad for t in inputs)
        self.name = name
        self._vjp = vjp

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"item() on non-scalar tensor of shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, op={self.op!r}, requires_grad={self.requires_grad})"


def constant(values, name: str | None = None) -> Tensor:
    """A leaf that never receives a gradient (e.g. teacher-side values)."""
    return Tensor(values, requires_grad=False, name=name)


def parameter(values, name: str | None = None) -> Tensor:
    """A leaf that participates in differentiation."""
    return Tensor(values, requires_grad=True, name=name)


def _node(op: str, values: Array, inputs: tuple[Tensor, ...],
          vjp: Callable[[Array], Sequence[Array | None]]) -> Tensor:
    return Tensor(values, op=op, inputs=inputs, vjp=vjp)


def _check_same_shape(op: str, a: Tensor, b: Tensor) -> None:
    if a.shape != b.shape:
        raise DimensionError(f"{op}: shapes {a.shape} and {b.shape} differ")


# ---------------------------------------------------------------------------
# matrix ops


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim != 2 or b.ndim != 2:
        raise DimensionError(f"matmul: expected 2-D operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul: inner dimensions differ: {a.shape} x {b.shape}")
    out = a.data @ b.data

    def vjp(g: Array):
        return g @ b.data.T, a.data.T @ g

    return _node("matmul", out, (a, b), vjp)


def transpose(a: Tensor) -> Tensor:
    if a.ndim != 2:
        raise DimensionError(f"transpose: expected 2-D operand, got {a.shape}")

    def vjp(g: Array):
        return (g.T,)

    return _node("transpose", a.data.T, (a,), vjp)


def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    shape = tuple(int(s) for s in shape)
    if int(np.prod(shape)) != a.data.size:
        raise DimensionError(f"reshape: cannot view {a.shape} as {shape}")
    old = a.shape

    def vjp(g: Array):
        return (g.reshape(old),)

    return _node("reshape", a.data.reshape(shape), (a,), vjp)


# ---------------------------------------------------------------------------
# elementwise ops (broadcast-free: shapes must match exactly)


def add(a: Tensor, b: Tensor) -> Tensor:
    _check_same_shape("add", a, b)
    return _node("add", a.data + b.data, (a, b), lambda g: (g, g))


def sub(a: Tensor, b: Tensor) -> Tensor:
    _check_same_shape("sub", a, b)
    return _node("sub", a.data - b.data, (a, b), lambda g: (g, -g))


def mul(a: Tensor, b: Tensor) -> Tensor:
    _check_same_shape("mul", a, b)
    return _node("mul", a.data * b.data, (a, b), lambda g: (g * b.data, g * a.data))


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0.0
    return _node("relu", np.where(mask, a.data, 0.0), (a,), lambda g: (g * mask,))


def square(a: Tensor) -> Tensor:
    return _node("square", a.data * a.data, (a,), lambda g: (2.0 * a.data * g,))


def scale(a: Tensor, c: float) -> Tensor:
    c = float(c)
    return _node("scale", a.data * c, (a,), lambda g: (g * c,))


def softplus(a: Tensor) -> Tensor:
    # log(1 + e^x) computed as max(x, 0) + log1p(e^{-|x|}) to avoid overflow
    x = a.data
    out = np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))

    def vjp(g: Array):
        return (g / (1.0 + np.exp(-x)),)

    return _node("softplus", out, (a,), vjp)


def sigmoid(a: Tensor) -> Tensor:
    x = a.data
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)

    def vjp(g: Array):
        return (g * out * (1.0 - out),)

    return _node("sigmoid", out, (a,), vjp)


def clip_min(a: Tensor, floor: float) -> Tensor:
    """max(x, floor) elementwise; subgradient 0 wherever the floor binds."""
    floor = float(floor)
    mask = a.data > floor
    return _node("clip_min", np.where(mask, a.data, floor), (a,), lambda g: (g * mask,))


# ---------------------------------------------------------------------------
# row-wise ops


def add_rows(x: Tensor, b: Tensor) -> Tensor:
    """Add vector b to every row of 2-D x (the bias pattern)."""
    if x.ndim != 2 or b.ndim != 1 or x.shape[1] != b.shape[0]:
        raise DimensionError(f"add_rows: shapes {x.shape} and {b.shape} incompatible")

    def vjp(g: Array):
        return g, g.sum(axis=0)

    return _node("add_rows", x.data + b.data[None, :], (x, b), vjp)


def div_rows(x: Tensor, r: Tensor) -> Tensor:
    """Divide row i of 2-D x by scalar r[i]."""
    if x.ndim != 2 or r.ndim != 1 or x.shape[0] != r.shape[0]:
        raise DimensionError(f"div_rows: shapes {x.shape} and {r.shape} incompatible")
    inv = 1.0 / r.data
    out = x.data * inv[:, None]

    def vjp(g: Array):
        gx = g * inv[:, None]
        gr = -(g * out).sum(axis=1) * inv
        return gx, gr

    return _node("div_rows", out, (x, r), vjp)


def slice_rows(x: Tensor, start: int, stop: int) -> Tensor:
    """Contiguous row slice of a 2-D tensor."""
    if x.ndim != 2:
        raise DimensionError(f"slice_rows: expected 2-D operand, got {x.shape}")
    if not (0 <= start < stop <= x.shape[0]):
        raise ContractError(f"slice_rows: bad range [{start}, {stop}) for {x.shape[0]} rows")

    def vjp(g: Array):
        full = np.zeros_like(x.data)
        full[start:stop] = g
        return (full,)

    return _node("slice_rows", x.data[start:stop].copy(), (x,), vjp)


def take_per_row(x: Tensor, cols) -> Tensor:
    """Gather x[i, cols[i]] for each row i; returns a vector."""
    if x.ndim != 2:
        raise DimensionError(f"take_per_row: expected 2-D operand, got {x.shape}")
    cols = np.asarray(cols, dtype=np.intp)
    if cols.ndim != 1 or cols.shape[0] != x.shape[0]:
        raise DimensionError("take_per_row: need one column index per row")
    if cols.min() < 0 or cols.max() >= x.shape[1]:
        raise ContractError(f"take_per_row: column index out of range for {x.shape[1]} columns")
    rows = np.arange(x.shape[0])

    def vjp(g: Array):
        full = np.zeros_like(x.data)
        full[rows, cols] = g
        return (full,)

    return _node("take_per_row", x.data[rows, cols].copy(), (x,), vjp)


# ---------------------------------------------------------------------------
# reductions


def sum_all(x: Tensor) -> Tensor:
    shape = x.shape

    def vjp(g: Array):
        return (np.full(shape, g.reshape(-1)[0]),)

    return _node("sum", np.array([x.data.sum()]), (x,), vjp)


def mean_all(x: Tensor) -> Tensor:
    n = x.data.size
    shape = x.shape

    def vjp(g: Array):
        return (np.full(shape, g.reshape(-1)[0] / n),)

    return _node("mean", np.array([x.data.mean()]), (x,), vjp)


def frobenius_sq(x: Tensor) -> Tensor:
    """Sum of squared entries, as a scalar tensor."""

    def vjp(g: Array):
        return (2.0 * x.data * g.reshape(-1)[0],)

    return _node("frobenius_sq", np.array([float((x.data * x.data).sum())]), (x,), vjp)


def row_l2_norm(x: Tensor) -> Tensor:
    """Per-row Euclidean norms of a 2-D tensor; gradient 0 at exact-zero rows."""
    if x.ndim != 2:
        raise DimensionError(f"row_l2_norm: expected 2-D operand, got {x.shape}")
    norms = np.sqrt((x.data * x.data).sum(axis=1))

    def vjp(g: Array):
        safe = np.where(norms > 0.0, norms, 1.0)
        gx = (g / safe)[:, None] * x.data
        gx[norms == 0.0] = 0.0
        return (gx,)

    return _node("row_l2_norm", norms, (x,), vjp)


# ---------------------------------------------------------------------------
# softmax family


def softmax(x: Tensor) -> Tensor:
    """Row-wise softmax with per-row max subtraction."""
    if x.ndim != 2:
        raise DimensionError(f"softmax: expected 2-D operand, got {x.shape}")
    if x.shape[1] < 2:
        raise ContractError("softmax: needs at least 2 classes")
    if not np.isfinite(x.data).all():
        raise NumericError("softmax: non-finite input")
    shifted = x.data - x.data.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=1, keepdims=True)

    def vjp(g: Array):
        dot = (g * out).sum(axis=1, keepdims=True)
        return (out * (g - dot),)

    return _node("softmax", out, (x,), vjp)


def logsumexp_rows(x: Tensor) -> Tensor:
    """Row-wise log(sum(exp(x))); the stable core of cross-entropy."""
    if x.ndim != 2:
        raise DimensionError(f"logsumexp_rows: expected 2-D operand, got {x.shape}")
    if not np.isfinite(x.data).all():
        raise NumericError("logsumexp_rows: non-finite input")
    m = x.data.max(axis=1, keepdims=True)
    e = np.exp(x.data - m)
    s = e.sum(axis=1, keepdims=True)
    out = (m + np.log(s)).reshape(-1)
    soft = e / s

    def vjp(g: Array):
        return (soft * g[:, None],)

    return _node("logsumexp_rows", out, (x,), vjp)


# ---------------------------------------------------------------------------
# image ops for the small conv net


def conv2d(x: Tensor, w: Tensor) -> Tensor:
    """3x3 convolution, stride 1, zero padding 1 (spatial size preserved).

    x: [B, Cin, H, W], w: [Cout, Cin, 3, 3].
    """
    if x.ndim != 4 or w.ndim != 4:
        raise DimensionError(f"conv2d: expected 4-D operands, got {x.shape} and {w.shape}")
    if w.shape[2] != 3 or w.shape[3] != 3:
        raise DimensionError(f"conv2d: kernel must be 3x3, got {w.shape}")
    if x.shape[1] != w.shape[1]:
        raise DimensionError(f"conv2d: channel mismatch: {x.shape} vs {w.shape}")
    b, cin, h, wd = x.shape
    cout = w.shape[0]

    xp = np.pad(x.data, ((0, 0), (0, 0), (1, 1), (1, 1)))
    # [B, Cin, H, W, 3, 3] patches -> [B*H*W, Cin*9]
    win = np.lib.stride_tricks.sliding_window_view(xp, (3, 3), axis=(2, 3))
    cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(b * h * wd, cin * 9)
    wmat = w.data.reshape(cout, cin * 9)
    out = (cols @ wmat.T).reshape(b, h, wd, cout).transpose(0, 3, 1, 2)

    def vjp(g: Array):
        gcols = g.transpose(0, 2, 3, 1).reshape(b * h * wd, cout)
        gw = (gcols.T @ cols).reshape(cout, cin, 3, 3)
        gx_cols = (gcols @ wmat).reshape(b, h, wd, cin, 3, 3)
        gxp = np.zeros_like(xp)
        for ki in range(3):
            for kj in range(3):
                gxp[:, :, ki:ki + h, kj:kj + wd] += gx_cols[:, :, :, :, ki, kj].transpose(0, 3, 1, 2)
        return np.ascontiguousarray(gxp[:, :, 1:-1, 1:-1]), gw

    return _node("conv2d", np.ascontiguousarray(out), (x, w), vjp)


def add_channel_bias(x: Tensor, b: Tensor) -> Tensor:
    """Add per-channel bias b[c] to a [B, C, H, W] tensor."""
    if x.ndim != 4 or b.ndim != 1 or x.shape[1] != b.shape[0]:
        raise DimensionError(f"add_channel_bias: shapes {x.shape} and {b.shape} incompatible")

    def vjp(g: Array):
        return g, g.sum(axis=(0, 2, 3))

    return _node("add_channel_bias", x.data + b.data[None, :, None, None], (x, b), vjp)


def global_avg_pool(x: Tensor) -> Tensor:
    """Mean over the spatial axes: [B, C, H, W] -> [B, C]."""
    if x.ndim != 4:
        raise DimensionError(f"global_avg_pool: expected 4-D operand, got {x.shape}")
    h, w = x.shape[2], x.shape[3]

    def vjp(g: Array):
        return (np.broadcast_to(g[:, :, None, None] / (h * w), x.shape).copy(),)

    return _node("global_avg_pool", x.data.mean(axis=(2, 3)), (x,), vjp)


# ---------------------------------------------------------------------------
# backward sweep


def _topo_order(root: Tensor) -> list[Tensor]:
    """Iterative post-order over the graph; deterministic for a fixed tape."""
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
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
    return order


def backward(root: Tensor) -> dict[str, Array]:
    """Reverse sweep from a scalar root; fills .grad on every reachable node.

    Returns a map from parameter name to gradient for every named leaf
    with requires_grad that the sweep reached.
    """
    if root.shape != (1,):
        raise ContractError(f"backward: root must have scalar shape (1,), got {root.shape}")
    order = _topo_order(root)
    for node in order:
        node.grad = None
    root.grad = np.ones(1)
    for node in reversed(order):
        if node.grad is None or node._vjp is None or not node.requires_grad:
            continue
        input_grads = node._vjp(node.grad)
        for parent, g in zip(node.inputs, input_grads):
            if g is None or not parent.requires_grad:
                continue
            if g.shape != parent.shape:
                g = g.reshape(parent.shape)
            if parent.grad is None:
                parent.grad = g.copy() if g.base is not None else g
            else:
                parent.grad = parent.grad + g
    grads: dict[str, Array] = {}
    for node in order:
        if node._vjp is None and node.requires_grad and node.name:
            grads[node.name] = node.grad if node.grad is not None else np.zeros(node.shape)
    return grads


def grads_for(root: Tensor, params: dict[str, Tensor]) -> dict[str, Array]:
    """Gradients of a scalar root for every named parameter (zeros if unreached)."""
    backward(root)
    out = {}
    for name, p in params.items():
        out[name] = p.grad if p.grad is not None else np.zeros(p.shape)
    return out


# ---------------------------------------------------------------------------
# finite differences


def finite_difference_check(f: Callable[[Tensor], Tensor], x: Array,
                            eps: float = 1e-5) -> float:
    """Max relative error between backward() and central differences.

    ``f`` maps a leaf tensor to a scalar expression. Each coordinate i is
    perturbed by +/-eps and (f(x+e_i*eps) - f(x-e_i*eps)) / (2*eps) is
    compared to the analytic gradient; the relative error denominator is
    max(|numeric|, |analytic|, 1e-8).
    """
    if eps <= 0:
        raise ContractError("finite_difference_check: eps must be positive")
    x = _as_buffer(x)
    leaf = parameter(x.copy())
    out = f(leaf)
    if out.shape != (1,):
        raise ContractError("finite_difference_check: f must return a scalar tensor")
    backward(out)
    analytic = leaf.grad if leaf.grad is not None else np.zeros(x.shape)

    flat = x.reshape(-1)
    numeric = np.zeros(flat.shape)
    for i in range(flat.size):
        bumped = flat.copy()
        bumped[i] = flat[i] + eps
        f_plus = f(constant(bumped.reshape(x.shape))).item()
        bumped[i] = flat[i] - eps
        f_minus = f(constant(bumped.reshape(x.shape))).item()
        numeric[i] = (f_plus - f_minus) / (2.0 * eps)
    numeric = numeric.reshape(x.shape)

    denom = np.maximum(np.maximum(np.abs(numeric), np.abs(analytic)), 1e-8)
    return float((np.abs(numeric - analytic) / denom).max())
