"""Minimal dense-tensor engine with reverse-mode differentiation.

Only the operations needed by the surrogate backward pass are provided:
matrix multiply, 2-D convolution, average pooling, clamp (with graph-scalar
bounds), a frozen-statistics channel affine (batch norm), softmax cross
entropy, elementwise arithmetic without general broadcasting, and a
straight-through rounding op.
"""

from __future__ import annotations

import numpy as np


class DimensionError(ValueError):
    """Raised when operand shapes are incompatible."""


class ParameterError(ValueError):
    """Raised when a scalar parameter is out of its valid range."""


class UsageError(RuntimeError):
    """Raised on graph misuse (e.g. backward from a non-scalar)."""


def _as_array(data, dtype):
    a = np.asarray(data, dtype=dtype)
    if a.dtype.kind not in "fiu":
        raise ParameterError(f"unsupported dtype {a.dtype}")
    return a.astype(dtype if dtype is not None else np.float64, copy=False)


class Tensor:
    """A dense array participating in a reverse-mode differentiation graph.

    Graph nodes are created implicitly by the operations below; ``backward``
    traverses them in reverse construction order exactly once, accumulating
    gradients additively at fan-out points.
    """

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, dtype=np.float64):
        self.data = _as_array(data, dtype)
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward = None

    # -- introspection -------------------------------------------------
    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def item(self):
        return float(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    # -- graph plumbing ------------------------------------------------
    def _node(self, data, parents, backward):
        out = Tensor.__new__(Tensor)
        out.data = data
        out.requires_grad = any(p.requires_grad for p in parents)
        out.grad = None
        out._parents = parents if out.requires_grad else ()
        out._backward = backward if out.requires_grad else None
        return out

    def zero_grad(self):
        self.grad = None

    def _accumulate(self, g):
        if g.shape != self.data.shape:
            raise DimensionError(
                f"gradient shape {g.shape} != tensor shape {self.data.shape}"
            )
        if self.grad is None:
            self.grad = g.astype(self.data.dtype, copy=True)
        else:
            self.grad = self.grad + g

    def backward(self, grad=None):
        """Populate ``grad`` on every requires_grad tensor reachable from self.

        ``self`` must be a scalar unless an explicit seed gradient is given.
        Repeated calls without ``zero_grad`` accumulate.
        """
        if grad is None:
            if self.size != 1:
                raise UsageError("backward() requires a scalar root")
            grad = np.ones_like(self.data)
        else:
            grad = np.asarray(grad, dtype=self.data.dtype)
            if grad.shape != self.data.shape:
                raise DimensionError("seed gradient shape mismatch")

        topo: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, processed = stack.pop()
            if processed:
                topo.append(node)
                continue
            if id(node) in seen or not node.requires_grad:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                stack.append((p, False))

        self._accumulate(grad)
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # -- operator sugar --------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)

    def __sub__(self, other):
        return add(self, mul(other, -1.0) if isinstance(other, Tensor) else -other)

    def __matmul__(self, other):
        return matmul(self, other)

    def reshape(self, *shape):
        return reshape(self, shape if len(shape) > 1 else shape[0])

    def sum(self):
        return tsum(self)


def _coerce_pair(a, b):
    if not isinstance(a, Tensor):
        a, b = b, a
    if isinstance(b, Tensor):
        if a.shape == b.shape:
            return a, b, None
        if b.size == 1:
            return a, b, "b_scalar"
        if a.size == 1:
            return a, b, "a_scalar"
        raise DimensionError(f"shape mismatch {a.shape} vs {b.shape}")
    return a, b, "const"


def add(a, b):
    a, b, mode = _coerce_pair(a, b)
    if mode == "const":
        out = a._node(a.data + b, (a,), None)
        if out.requires_grad:
            out._backward = lambda g: a._accumulate(g)
        return out

    def backward(g):
        if a.requires_grad:
            a._accumulate(g if mode != "a_scalar" else g.sum().reshape(a.shape))
        if b.requires_grad:
            b._accumulate(g if mode != "b_scalar" else g.sum().reshape(b.shape))

    return a._node(a.data + b.data, (a, b), backward)


def mul(a, b):
    a, b, mode = _coerce_pair(a, b)
    if mode == "const":
        out = a._node(a.data * b, (a,), None)
        if out.requires_grad:
            out._backward = lambda g: a._accumulate(g * b)
        return out

    def backward(g):
        if a.requires_grad:
            ga = g * b.data
            a._accumulate(ga if mode != "a_scalar" else ga.sum().reshape(a.shape))
        if b.requires_grad:
            gb = g * a.data
            b._accumulate(gb if mode != "b_scalar" else gb.sum().reshape(b.shape))

    return a._node(a.data * b.data, (a, b), backward)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim != 2 or b.ndim != 2:
        raise DimensionError("matmul expects 2-D operands")
    if a.shape[1] != b.shape[0]:
        raise DimensionError(f"inner extents differ: {a.shape} @ {b.shape}")

    def backward(g):
        if a.requires_grad:
            a._accumulate(g @ b.data.T)
        if b.requires_grad:
            b._accumulate(a.data.T @ g)

    return a._node(a.data @ b.data, (a, b), backward)


def reshape(x: Tensor, shape) -> Tensor:
    old = x.shape
    data = x.data.reshape(shape)

    def backward(g):
        x._accumulate(g.reshape(old))

    return x._node(data, (x,), backward)


def tsum(x: Tensor) -> Tensor:
    def backward(g):
        x._accumulate(np.full_like(x.data, float(g)))

    return x._node(np.asarray(x.data.sum()), (x,), backward)


def _bound_value(b):
    return float(b.data) if isinstance(b, Tensor) else float(b)


def clamp(x: Tensor, lo, hi) -> Tensor:
    """Elementwise clamp with sub-derivative 1 on the closed interval.

    ``lo``/``hi`` may be graph scalars; the derivative wrt ``hi`` is 1 where
    x > hi (0 elsewhere), and symmetrically for ``lo``.
    """
    lo_v, hi_v = _bound_value(lo), _bound_value(hi)
    if lo_v > hi_v:
        raise ParameterError(f"clamp bounds inverted: lo={lo_v} > hi={hi_v}")
    data = np.clip(x.data, lo_v, hi_v)
    parents = [x]
    lo_t = lo if isinstance(lo, Tensor) else None
    hi_t = hi if isinstance(hi, Tensor) else None
    if lo_t is not None:
        parents.append(lo_t)
    if hi_t is not None:
        parents.append(hi_t)

    below = x.data < lo_v
    above = x.data > hi_v

    def backward(g):
        if x.requires_grad:
            x._accumulate(np.where(below | above, 0.0, g))
        if hi_t is not None and hi_t.requires_grad:
            hi_t._accumulate(np.asarray((g * above).sum()).reshape(hi_t.shape))
        if lo_t is not None and lo_t.requires_grad:
            lo_t._accumulate(np.asarray((g * below).sum()).reshape(lo_t.shape))

    return x._node(data, tuple(parents), backward)


def with_value(x: Tensor, value) -> Tensor:
    """Forward-value substitution: emits ``value``, backward is identity.

    Realizes the decoupled forward/backward pairing at layer boundaries:
    the simulated representation is the forward value while gradients flow
    through the surrogate chain unchanged.
    """
    value = np.asarray(value, dtype=x.data.dtype)
    if value.shape != x.shape:
        raise DimensionError("substituted value shape mismatch")

    def backward(g):
        x._accumulate(g)

    return x._node(value, (x,), backward)


def ste_round(x: Tensor) -> Tensor:
    """Round to nearest with a straight-through (identity) backward."""

    def backward(g):
        x._accumulate(g)

    return x._node(np.rint(x.data), (x,), backward)


def _pool_check(x, k):
    if x.ndim != 4:
        raise DimensionError("avg_pool2d expects a [B,C,H,W] tensor")
    B, C, H, W = x.shape
    if k < 1:
        raise ParameterError("pool size must be >= 1")
    if H % k or W % k:
        raise DimensionError(f"spatial dims {H}x{W} not divisible by k={k}")
    return B, C, H, W


def avg_pool2d(x: Tensor, k: int) -> Tensor:
    B, C, H, W = _pool_check(x, k)
    data = x.data.reshape(B, C, H // k, k, W // k, k).mean(axis=(3, 5))

    def backward(g):
        gx = np.repeat(np.repeat(g, k, axis=2), k, axis=3) / (k * k)
        x._accumulate(gx)

    return x._node(data, (x,), backward)


def _conv_geometry(x_shape, w_shape, stride, padding):
    B, C, H, W = x_shape
    F, Cw, kh, kw = w_shape
    if C != Cw:
        raise DimensionError(f"channel mismatch: input {C}, kernel {Cw}")
    Hp, Wp = H + 2 * padding, W + 2 * padding
    if kh > Hp or kw > Wp:
        raise DimensionError("kernel larger than padded input")
    Ho = (Hp - kh) // stride + 1
    Wo = (Wp - kw) // stride + 1
    return B, C, H, W, F, kh, kw, Ho, Wo


def _im2col(xd, kh, kw, stride, padding, Ho, Wo):
    if padding:
        xd = np.pad(xd, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    B, C = xd.shape[:2]
    cols = np.empty((B, C, kh, kw, Ho, Wo), dtype=xd.dtype)
    for i in range(kh):
        for j in range(kw):
            cols[:, :, i, j] = xd[
                :, :, i : i + stride * Ho : stride, j : j + stride * Wo : stride
            ]
    return cols


def _col2im(dcols, x_shape, kh, kw, stride, padding, Ho, Wo):
    B, C, H, W = x_shape
    dxp = np.zeros((B, C, H + 2 * padding, W + 2 * padding), dtype=dcols.dtype)
    for i in range(kh):
        for j in range(kw):
            dxp[
                :, :, i : i + stride * Ho : stride, j : j + stride * Wo : stride
            ] += dcols[:, :, i, j]
    if padding:
        return dxp[:, :, padding:-padding, padding:-padding]
    return dxp


def conv2d(x: Tensor, w: Tensor, stride: int = 1, padding: int = 0) -> Tensor:
    """Cross-correlation with zero padding (the usual deep-learning conv)."""
    if x.ndim != 4 or w.ndim != 4:
        raise DimensionError("conv2d expects [B,C,H,W] input and [F,C,kh,kw] kernel")
    B, C, H, W, F, kh, kw, Ho, Wo = _conv_geometry(x.shape, w.shape, stride, padding)
    cols = _im2col(x.data, kh, kw, stride, padding, Ho, Wo)
    out = np.tensordot(cols, w.data, axes=([1, 2, 3], [1, 2, 3]))  # [B,Ho,Wo,F]
    out = np.ascontiguousarray(out.transpose(0, 3, 1, 2))

    def backward(g):
        if w.requires_grad:
            dw = np.tensordot(g, cols, axes=([0, 2, 3], [0, 4, 5]))
            w._accumulate(dw)
        if x.requires_grad:
            dcols = np.tensordot(g, w.data, axes=([1], [0]))  # [B,Ho,Wo,C,kh,kw]
            dcols = dcols.transpose(0, 3, 4, 5, 1, 2)
            x._accumulate(_col2im(dcols, x.shape, kh, kw, stride, padding, Ho, Wo))

    return x._node(out, (x, w), backward)


def channel_affine(x: Tensor, gamma: Tensor, beta: Tensor, mean, var, eps: float) -> Tensor:
    """Per-channel normalize-and-affine with frozen statistics.

    ``mean``/``var`` are constants (captured batch or running statistics);
    gradients flow to ``x``, ``gamma`` and ``beta`` only. Channel axis is 1
    for 4-D inputs and the last axis for 2-D inputs.
    """
    if eps <= 0:
        raise ParameterError("eps must be positive")
    mean = np.asarray(mean, dtype=x.data.dtype)
    var = np.asarray(var, dtype=x.data.dtype)
    if np.any(var < 0):
        raise ParameterError("variance must be non-negative")
    C = gamma.size
    if x.ndim == 4:
        if x.shape[1] != C:
            raise DimensionError("channel count mismatch")
        bshape = (1, C, 1, 1)
        axes = (0, 2, 3)
    elif x.ndim == 2:
        if x.shape[1] != C:
            raise DimensionError("feature count mismatch")
        bshape = (1, C)
        axes = (0,)
    else:
        raise DimensionError("channel_affine expects 2-D or 4-D input")
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mean.reshape(bshape)) * inv.reshape(bshape)
    out = gamma.data.reshape(bshape) * xhat + beta.data.reshape(bshape)

    def backward(g):
        if x.requires_grad:
            x._accumulate(g * (gamma.data * inv).reshape(bshape))
        if gamma.requires_grad:
            gamma._accumulate((g * xhat).sum(axis=axes).reshape(gamma.shape))
        if beta.requires_grad:
            beta._accumulate(g.sum(axis=axes).reshape(beta.shape))

    return x._node(out, (x, gamma, beta), backward)


def softmax_cross_entropy(logits: Tensor, labels) -> Tensor:
    """Mean over the batch of -log softmax(logits)[label]."""
    if logits.ndim != 2:
        raise DimensionError("logits must be [B,K]")
    labels = np.asarray(labels)
    B, K = logits.shape
    if labels.shape != (B,):
        raise DimensionError("labels must be a length-B vector of class indices")
    if labels.min() < 0 or labels.max() >= K:
        raise ParameterError(f"label out of range [0,{K})")
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    ez = np.exp(z)
    p = ez / ez.sum(axis=1, keepdims=True)
    loss = -np.mean(np.log(p[np.arange(B), labels] + 1e-300))

    def backward(g):
        dz = p.copy()
        dz[np.arange(B), labels] -= 1.0
        logits._accumulate(float(g) * dz / B)

    return logits._node(np.asarray(loss), (logits,), backward)


def assert_finite(x: Tensor, what: str = "tensor"):
    if not np.all(np.isfinite(x.data)):
        raise FloatingPointError(f"non-finite values in {what}")
