"""Minimal reverse-mode automatic differentiation over dense float64 arrays.

Define-by-run: every operation on tensors that require gradients records its
inputs and a backward rule on the output node. ``backward(loss)`` walks the
recorded graph once, in reverse topological order, and accumulates gradients
into the ``grad`` field of the participating leaves. A graph can be
differentiated exactly once; the next training step rebuilds it from scratch.

Everything is float64. Binary elementwise ops require equal shapes or a
scalar on one side; general broadcasting is deliberately not supported.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "Tensor",
    "ShapeError",
    "DomainError",
    "EmptyReductionError",
    "TapeError",
    "tensor",
    "exp",
    "log",
    "relu",
    "square",
    "reduce_sum",
    "reduce_mean",
    "conv2d",
    "pool2d_mean",
    "upsample_bilinear",
    "concat",
    "softmax_cross_entropy",
    "backward",
    "zero_grads",
]


class ShapeError(ValueError):
    """Operand shapes are incompatible for the requested operation."""


class DomainError(ValueError):
    """Operand values lie outside the operation's domain (log of <= 0, division by 0)."""


class EmptyReductionError(ValueError):
    """Masked mean requested over a mask with no true elements."""


class TapeError(RuntimeError):
    """Backward invoked on a non-scalar output or on an already-consumed graph."""


class Tensor:
    """Dense float64 array that can participate in reverse-mode differentiation."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "_consumed")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self._parents: tuple[Tensor, ...] = ()
        self._backward = None
        self._consumed = False

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def item(self) -> float:
        return self.data.item()

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    # -- operator sugar -------------------------------------------------
    def __add__(self, other):
        return _binary("add", self, _as_tensor(other))

    def __radd__(self, other):
        return _binary("add", _as_tensor(other), self)

    def __sub__(self, other):
        return _binary("sub", self, _as_tensor(other))

    def __rsub__(self, other):
        return _binary("sub", _as_tensor(other), self)

    def __mul__(self, other):
        return _binary("mul", self, _as_tensor(other))

    def __rmul__(self, other):
        return _binary("mul", _as_tensor(other), self)

    def __truediv__(self, other):
        return _binary("div", self, _as_tensor(other))

    def __rtruediv__(self, other):
        return _binary("div", _as_tensor(other), self)

    def __neg__(self):
        out = _node(-self.data, (self,))
        if out._parents:
            def bw(g, a=self):
                yield a, -g
            out._backward = bw
        return out


def tensor(data, requires_grad: bool = False) -> Tensor:
    """Construct a tensor from array-like data."""
    return Tensor(data, requires_grad=requires_grad)


def _as_tensor(x) -> Tensor:
    if isinstance(x, Tensor):
        return x
    if np.isscalar(x):
        return Tensor(float(x))
    raise TypeError(f"cannot use {type(x).__name__} as a tensor operand")


def _node(data: np.ndarray, parents: tuple[Tensor, ...]) -> Tensor:
    out = Tensor(data)
    tracked = tuple(p for p in parents if p.requires_grad or p._parents)
    if tracked:
        out.requires_grad = True
        out._parents = tracked
    return out


def _accum(t: Tensor, g: np.ndarray) -> None:
    # Gradients for graph-internal nodes are staged in the backward pass dict;
    # this helper only feeds leaf .grad buffers.
    if t.grad is None:
        t.grad = np.zeros_like(t.data)
    t.grad += g


def _reduce_to_scalar_grad(g: np.ndarray) -> np.ndarray:
    return np.asarray(g.sum(), dtype=np.float64)


def _binary(kind: str, a: Tensor, b: Tensor) -> Tensor:
    a_scalar = a.data.shape == ()
    b_scalar = b.data.shape == ()
    if a.data.shape != b.data.shape and not (a_scalar or b_scalar):
        raise ShapeError(
            f"{kind}: operands must share a shape or one must be scalar, "
            f"got {a.data.shape} and {b.data.shape}"
        )
    if kind == "add":
        data = a.data + b.data
        da = lambda g: g
        db = lambda g: g
    elif kind == "sub":
        data = a.data - b.data
        da = lambda g: g
        db = lambda g: -g
    elif kind == "mul":
        data = a.data * b.data
        da = lambda g: g * b.data
        db = lambda g: g * a.data
    elif kind == "div":
        if np.any(b.data == 0.0):
            raise DomainError("div: divisor contains zero")
        data = a.data / b.data
        da = lambda g: g / b.data
        db = lambda g: -g * a.data / (b.data * b.data)
    else:  # pragma: no cover
        raise ValueError(kind)

    out = _node(data, (a, b))
    if out._parents:
        def bw(g, a=a, b=b, a_scalar=a_scalar, b_scalar=b_scalar, da=da, db=db):
            if a.requires_grad or a._parents:
                ga = da(g)
                yield a, _reduce_to_scalar_grad(ga) if a_scalar and ga.shape != () else ga
            if b.requires_grad or b._parents:
                gb = db(g)
                yield b, _reduce_to_scalar_grad(gb) if b_scalar and gb.shape != () else gb
        out._backward = bw
    return out


def exp(a: Tensor) -> Tensor:
    data = np.exp(a.data)
    out = _node(data, (a,))
    if out._parents:
        def bw(g, a=a, data=data):
            yield a, g * data
        out._backward = bw
    return out


def log(a: Tensor) -> Tensor:
    if np.any(a.data <= 0.0):
        raise DomainError("log: operand contains non-positive values")
    out = _node(np.log(a.data), (a,))
    if out._parents:
        def bw(g, a=a):
            yield a, g / a.data
        out._backward = bw
    return out


def relu(a: Tensor) -> Tensor:
    # Subgradient at exactly 0 is defined as 0.
    mask = a.data > 0.0
    out = _node(np.where(mask, a.data, 0.0), (a,))
    if out._parents:
        def bw(g, a=a, mask=mask):
            yield a, np.where(mask, g, 0.0)
        out._backward = bw
    return out


def square(a: Tensor) -> Tensor:
    out = _node(a.data * a.data, (a,))
    if out._parents:
        def bw(g, a=a):
            yield a, g * (2.0 * a.data)
        out._backward = bw
    return out


def _check_mask(a: Tensor, mask) -> np.ndarray:
    m = np.asarray(mask, dtype=bool)
    if m.shape != a.data.shape:
        raise ShapeError(f"mask shape {m.shape} does not match operand shape {a.data.shape}")
    return m


def reduce_sum(a: Tensor, mask=None) -> Tensor:
    """Sum to a scalar; masked positions contribute zero."""
    if mask is None:
        out = _node(np.asarray(a.data.sum()), (a,))
        if out._parents:
            def bw(g, a=a):
                yield a, np.broadcast_to(g, a.data.shape).astype(np.float64, copy=True)
            out._backward = bw
        return out
    m = _check_mask(a, mask)
    out = _node(np.asarray(np.where(m, a.data, 0.0).sum()), (a,))
    if out._parents:
        def bw(g, a=a, m=m):
            yield a, np.where(m, np.float64(g), 0.0)
        out._backward = bw
    return out


def reduce_mean(a: Tensor, mask=None) -> Tensor:
    """Mean to a scalar; with a mask, divides by the count of true elements."""
    if mask is None:
        n = a.data.size
        out = _node(np.asarray(a.data.sum() / n), (a,))
        if out._parents:
            def bw(g, a=a, n=n):
                yield a, np.full(a.data.shape, np.float64(g) / n)
            out._backward = bw
        return out
    m = _check_mask(a, mask)
    n = int(m.sum())
    if n == 0:
        raise EmptyReductionError("masked mean over an all-false mask")
    out = _node(np.asarray(np.where(m, a.data, 0.0).sum() / n), (a,))
    if out._parents:
        def bw(g, a=a, m=m, n=n):
            yield a, np.where(m, np.float64(g) / n, 0.0)
        out._backward = bw
    return out


def _conv_out_extent(size: int, k: int, stride: int, dilation: int, padding: int) -> int:
    return (size + 2 * padding - dilation * (k - 1) - 1) // stride + 1


def conv2d(x: Tensor, kernel: Tensor, bias: Tensor, stride: int = 1,
           dilation: int = 1, padding: int = 0) -> Tensor:
    """2D cross-correlation over NCHW input with OIHW kernel and per-channel bias."""
    if x.data.ndim != 4 or kernel.data.ndim != 4:
        raise ShapeError("conv2d expects NCHW input and OIHW kernel")
    n, c, h, w = x.data.shape
    o, ci, kh, kw = kernel.data.shape
    if ci != c:
        raise ShapeError(f"conv2d: input has {c} channels, kernel expects {ci}")
    if bias.data.shape != (o,):
        raise ShapeError(f"conv2d: bias shape {bias.data.shape} != ({o},)")
    if stride < 1 or dilation < 1 or padding < 0:
        raise ValueError("conv2d: stride/dilation must be >= 1, padding >= 0")
    oh = _conv_out_extent(h, kh, stride, dilation, padding)
    ow = _conv_out_extent(w, kw, stride, dilation, padding)
    if oh < 1 or ow < 1:
        raise ShapeError(f"conv2d: non-positive output extent ({oh}x{ow})")

    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    s0, s1, s2, s3 = xp.strides
    # Zero-copy (N, C, KH, KW, OH, OW) window view; tensordot folds it into
    # a single GEMM against the kernel.
    windows = np.lib.stride_tricks.as_strided(
        xp, shape=(n, c, kh, kw, oh, ow),
        strides=(s0, s1, s2 * dilation, s3 * dilation, s2 * stride, s3 * stride),
        writeable=False)
    out_data = np.tensordot(windows, kernel.data, axes=([1, 2, 3], [1, 2, 3]))
    out_data = np.ascontiguousarray(out_data.transpose(0, 3, 1, 2))
    out_data += bias.data.reshape(1, o, 1, 1)

    out = _node(out_data, (x, kernel, bias))
    if out._parents:
        def bw(g, x=x, kernel=kernel, bias=bias, windows=windows, kh=kh, kw=kw,
               oh=oh, ow=ow, stride=stride, dilation=dilation,
               padding=padding, xp_shape=xp.shape):
            if bias.requires_grad or bias._parents:
                yield bias, g.sum(axis=(0, 2, 3))
            if kernel.requires_grad or kernel._parents:
                yield kernel, np.tensordot(g, windows, axes=([0, 2, 3], [0, 4, 5]))
            if x.requires_grad or x._parents:
                gxp = np.zeros(xp_shape)
                for i in range(kh):
                    hs = slice(i * dilation, i * dilation + (oh - 1) * stride + 1, stride)
                    for j in range(kw):
                        ws = slice(j * dilation, j * dilation + (ow - 1) * stride + 1, stride)
                        gxp[:, :, hs, ws] += np.tensordot(
                            g, kernel.data[:, :, i, j], axes=([1], [0])
                        ).transpose(0, 3, 1, 2)
                if padding:
                    yield x, gxp[:, :, padding:-padding, padding:-padding]
                else:
                    yield x, gxp
        out._backward = bw
    return out


def _pool_bounds(size: int, out_size: int) -> list[tuple[int, int]]:
    # Floor partition boundaries: disjoint cells tiling [0, size).
    return [(size * i // out_size, size * (i + 1) // out_size) for i in range(out_size)]


def pool2d_mean(x: Tensor, output_size: tuple[int, int]) -> Tensor:
    """Adaptive mean pooling: each output cell averages its tile of the input."""
    if x.data.ndim != 4:
        raise ShapeError("pool2d_mean expects NCHW input")
    n, c, h, w = x.data.shape
    oh, ow = output_size
    if oh < 1 or ow < 1:
        raise ShapeError("pool2d_mean: zero output extent")
    if oh > h or ow > w:
        raise ShapeError(f"pool2d_mean: output {oh}x{ow} exceeds input {h}x{w}")

    if h % oh == 0 and w % ow == 0:
        fh, fw = h // oh, w // ow
        out_data = x.data.reshape(n, c, oh, fh, ow, fw).mean(axis=(3, 5))
        out = _node(out_data, (x,))
        if out._parents:
            def bw(g, x=x, oh=oh, ow=ow, fh=fh, fw=fw):
                gx = np.broadcast_to(
                    g.reshape(g.shape[0], g.shape[1], oh, 1, ow, 1) / (fh * fw),
                    (g.shape[0], g.shape[1], oh, fh, ow, fw),
                ).reshape(g.shape[0], g.shape[1], oh * fh, ow * fw)
                yield x, gx.copy()
            out._backward = bw
        return out

    hb = _pool_bounds(h, oh)
    wb = _pool_bounds(w, ow)
    out_data = np.empty((n, c, oh, ow))
    for i, (h0, h1) in enumerate(hb):
        for j, (w0, w1) in enumerate(wb):
            out_data[:, :, i, j] = x.data[:, :, h0:h1, w0:w1].mean(axis=(2, 3))
    out = _node(out_data, (x,))
    if out._parents:
        def bw(g, x=x, hb=hb, wb=wb):
            gx = np.zeros_like(x.data)
            for i, (h0, h1) in enumerate(hb):
                for j, (w0, w1) in enumerate(wb):
                    area = (h1 - h0) * (w1 - w0)
                    gx[:, :, h0:h1, w0:w1] += g[:, :, i:i + 1, j:j + 1] / area
            yield x, gx
        out._backward = bw
    return out


def _bilinear_matrix(in_size: int, out_size: int) -> np.ndarray:
    # Row i holds the align_corners=False interpolation weights of output i
    # over the input axis; the adjoint of the resize is just the transpose.
    src = (np.arange(out_size) + 0.5) * (in_size / out_size) - 0.5
    src = np.clip(src, 0.0, in_size - 1.0)
    i0 = np.floor(src).astype(np.intp)
    i1 = np.minimum(i0 + 1, in_size - 1)
    w1 = src - i0
    m = np.zeros((out_size, in_size))
    np.add.at(m, (np.arange(out_size), i0), 1.0 - w1)
    np.add.at(m, (np.arange(out_size), i1), w1)
    return m


def upsample_bilinear(x: Tensor, target: tuple[int, int]) -> Tensor:
    """Bilinear resampling (align_corners=False) of NCHW input to a target size."""
    if x.data.ndim != 4:
        raise ShapeError("upsample_bilinear expects NCHW input")
    th, tw = target
    if th < 1 or tw < 1:
        raise ShapeError("upsample_bilinear: target must be at least 1x1")
    h, w = x.data.shape[2:]
    mh = _bilinear_matrix(h, th)
    mwt = _bilinear_matrix(w, tw).T
    out = _node(np.matmul(np.matmul(mh, x.data), mwt), (x,))
    if out._parents:
        def bw(g, x=x, mh=mh, mwt=mwt):
            yield x, np.matmul(np.matmul(mh.T, g), mwt.T)
        out._backward = bw
    return out


def concat(tensors, axis: int) -> Tensor:
    """Concatenate tensors along an axis."""
    ts = list(tensors)
    if not ts:
        raise ShapeError("concat of an empty sequence")
    data = np.concatenate([t.data for t in ts], axis=axis)
    out = _node(data, tuple(ts))
    if out._parents:
        sizes = [t.data.shape[axis] for t in ts]
        offsets = np.cumsum([0] + sizes)

        def bw(g, ts=ts, axis=axis, offsets=offsets):
            for t, lo, hi in zip(ts, offsets[:-1], offsets[1:]):
                if t.requires_grad or t._parents:
                    idx = [slice(None)] * g.ndim
                    idx[axis] = slice(lo, hi)
                    yield t, g[tuple(idx)]
        out._backward = bw
    return out


def softmax_cross_entropy(logits: Tensor, labels, valid) -> Tensor:
    """Mean cross entropy of per-pixel class logits against integer labels.

    ``logits`` is (N, K, H, W); ``labels`` and ``valid`` are (N, H, W).
    Only valid pixels contribute; the mean divides by their count. Logits are
    stabilized by max subtraction before exponentiation.
    """
    if logits.data.ndim != 4:
        raise ShapeError("softmax_cross_entropy expects (N, K, H, W) logits")
    n, k, h, w = logits.data.shape
    lab = np.asarray(labels)
    m = np.asarray(valid, dtype=bool)
    if lab.shape != (n, h, w) or m.shape != (n, h, w):
        raise ShapeError("labels/valid must be (N, H, W)")
    count = int(m.sum())
    if count == 0:
        raise EmptyReductionError("cross entropy over a batch with no valid pixels")
    if lab[m].size and (lab[m].min() < 0 or lab[m].max() >= k):
        raise DomainError(f"labels must lie in [0, {k}) at valid pixels")

    z = logits.data - logits.data.max(axis=1, keepdims=True)
    ez = np.exp(z)
    sez = ez.sum(axis=1, keepdims=True)
    logp = z - np.log(sez)
    ni, hi, wi = np.nonzero(m)
    picked = logp[ni, lab[ni, hi, wi], hi, wi]
    out = _node(np.asarray(-picked.sum() / count), (logits,))
    if out._parents:
        softmax = ez / sez

        def bw(g, logits=logits, softmax=softmax, lab=lab, m=m, count=count,
               ni=ni, hi=hi, wi=wi):
            gl = np.where(m[:, None, :, :], softmax, 0.0)
            gl[ni, lab[ni, hi, wi], hi, wi] -= 1.0
            yield logits, gl * (np.float64(g) / count)
        out._backward = bw
    return out


def backward(loss: Tensor) -> None:
    """Reverse-accumulate d(loss)/d(leaf) into every requires_grad leaf.

    The loss must be a scalar produced by a live (not yet differentiated)
    graph. Each graph can be walked once.
    """
    if loss.data.shape != ():
        raise TapeError(f"backward requires a scalar loss, got shape {loss.data.shape}")
    if loss._consumed:
        raise TapeError("backward already ran on this graph; rebuild it before differentiating again")

    topo: list[Tensor] = []
    visited: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            topo.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in visited:
                stack.append((p, False))

    staged: dict[int, np.ndarray] = {id(loss): np.asarray(1.0)}
    for node in reversed(topo):
        g = staged.pop(id(node), None)
        node._consumed = True
        if g is None:
            continue
        if node._backward is None:
            if node.requires_grad:
                _accum(node, g)
            continue
        for parent, pg in node._backward(g):
            prev = staged.get(id(parent))
            staged[id(parent)] = pg if prev is None else prev + pg


def zero_grads(params) -> None:
    """Clear the grad buffers of an iterable of tensors."""
    for p in params:
        p.grad = None
