"""Dense tensors with tape-based reverse-mode differentiation.

Only the handful of operations the pose networks need are provided. There is no
implicit broadcasting: elementwise operations require identical shapes, and the
only scalar interaction is :func:`scale`.

Usage::

    x = Tensor(np.random.randn(1, 1, 5, 5), requires_grad=True)
    with Tape() as tape:
        y = sum_sq_diff(conv2d(x, w, b, padding=1), target)
    backward(y)
    x.grad
"""

from __future__ import annotations

import contextlib
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np

from .errors import AutodiffError, ShapeError

Array = np.ndarray
VJP = Callable[[Array], Tuple[Optional[Array], ...]]

_tape_stack: List["Tape"] = []


class Tensor:
    """Immutable dense array; only ``grad`` is written after creation."""

    __slots__ = ("data", "requires_grad", "grad", "_tape", "name")

    def __init__(self, data, requires_grad: bool = False, dtype=None, name: str = ""):
        arr = np.asarray(data, dtype=dtype if dtype is not None else None)
        if arr.dtype.kind not in "fc":
            arr = arr.astype(np.float64)
        self.data: Array = arr
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[Array] = None
        self._tape: Optional[Tape] = None
        self.name = name

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def is_leaf(self) -> bool:
        return self._tape is None

    def numpy(self) -> Array:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{flag})"

    def __add__(self, other: "Tensor") -> "Tensor":
        return add(self, other)

    def __sub__(self, other: "Tensor") -> "Tensor":
        return sub(self, other)

    def __mul__(self, other: "Tensor") -> "Tensor":
        return mul(self, other)

    def __neg__(self) -> "Tensor":
        return scale(self, -1.0)


@dataclass
class Tape:
    """Ordered record of executed ops; replayed backwards by :func:`backward`."""

    entries: List[Tuple[Tensor, Tuple[Tensor, ...], VJP]] = field(default_factory=list)
    consumed: bool = False

    def __enter__(self) -> "Tape":
        _tape_stack.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _tape_stack.pop()

    def __len__(self) -> int:
        return len(self.entries)

    def reset(self) -> None:
        self.entries.clear()
        self.consumed = False


def active_tape() -> Optional[Tape]:
    return _tape_stack[-1] if _tape_stack else None


@contextlib.contextmanager
def no_tape():
    """Temporarily run ops without recording, even inside an active tape."""
    saved = list(_tape_stack)
    _tape_stack.clear()
    try:
        yield
    finally:
        _tape_stack.extend(saved)


def _emit(data: Array, inputs: Sequence[Tensor], vjp: VJP) -> Tensor:
    out = Tensor(data)
    tape = active_tape()
    if tape is not None and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        out._tape = tape
        tape.entries.append((out, tuple(inputs), vjp))
    return out


def _same_shape(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


# ---------------------------------------------------------------------------
# elementwise


def add(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "add")
    return _emit(a.data + b.data, (a, b), lambda g: (g, g))


def sub(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "sub")
    return _emit(a.data - b.data, (a, b), lambda g: (g, -g))


def mul(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "mul")
    ad, bd = a.data, b.data
    return _emit(ad * bd, (a, b), lambda g: (g * bd, g * ad))


def elementwise(a: Tensor, b: Tensor, kind: str) -> Tensor:
    if kind == "add":
        return add(a, b)
    if kind == "mul":
        return mul(a, b)
    raise ValueError(f"unknown elementwise kind {kind!r}")


def scale(a: Tensor, c: float) -> Tensor:
    return _emit(a.data * c, (a,), lambda g: (g * c,))


def sigmoid(a: Tensor) -> Tensor:
    s = np.empty_like(a.data)
    pos = a.data >= 0
    # split branches so exp never overflows
    s[pos] = 1.0 / (1.0 + np.exp(-a.data[pos]))
    e = np.exp(a.data[~pos])
    s[~pos] = e / (1.0 + e)
    return _emit(s, (a,), lambda g: (g * s * (1.0 - s),))


def tanh(a: Tensor) -> Tensor:
    t = np.tanh(a.data)
    return _emit(t, (a,), lambda g: (g * (1.0 - t * t),))


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    return _emit(np.where(mask, a.data, 0.0).astype(a.dtype), (a,), lambda g: (g * mask,))


def unary(a: Tensor, kind: str, c: float = 1.0) -> Tensor:
    if kind == "sigmoid":
        return sigmoid(a)
    if kind == "tanh":
        return tanh(a)
    if kind == "relu":
        return relu(a)
    if kind == "scale":
        return scale(a, c)
    raise ValueError(f"unknown unary kind {kind!r}")


# ---------------------------------------------------------------------------
# reductions


def sum(a: Tensor) -> Tensor:  # noqa: A001 - mirrors numpy naming
    shape, dt = a.shape, a.dtype
    return _emit(np.asarray(a.data.sum(), dtype=dt), (a,), lambda g: (np.full(shape, g, dtype=dt),))


def sum_sq_diff(a: Tensor, b: Tensor) -> Tensor:
    """Sum of squared differences, the l2 objective."""
    _same_shape(a, b, "sum_sq_diff")
    d = a.data - b.data
    return _emit(np.asarray(np.sum(d * d), dtype=a.dtype), (a, b), lambda g: (2.0 * g * d, -2.0 * g * d))


def normalize_maps(a: Tensor) -> Tensor:
    """Divide every (b, c) spatial map of a rank-4 tensor by its own sum."""
    if a.ndim != 4:
        raise ShapeError(f"normalize_maps expects rank 4, got {a.shape}")
    z = a.data.sum(axis=(2, 3), keepdims=True)
    if np.any(z == 0):
        raise AutodiffError("normalize_maps: map sums to zero")
    out = a.data / z

    def vjp(g):
        return ((g - (g * out).sum(axis=(2, 3), keepdims=True)) / z,)

    return _emit(out, (a,), vjp)


# ---------------------------------------------------------------------------
# channel plumbing


def index_channels(a: Tensor, idx: Sequence[int]) -> Tensor:
    """Gather channels ``idx`` (repeats allowed) from a rank-4 tensor."""
    idx = np.asarray(idx, dtype=np.intp)
    if a.ndim != 4:
        raise ShapeError(f"index_channels expects rank 4, got {a.shape}")
    if idx.size and (idx.min() < 0 or idx.max() >= a.shape[1]):
        raise ShapeError(f"index_channels: channel index out of range for {a.shape[1]} channels")
    shape = a.shape

    def vjp(g):
        out = np.zeros(shape, dtype=g.dtype)
        np.add.at(out, (slice(None), idx), g)
        return (out,)

    return _emit(a.data[:, idx], (a,), vjp)


def scatter_channels(a: Tensor, idx: Sequence[int], num_channels: int) -> Tensor:
    """Sum channel ``j`` of ``a`` into output channel ``idx[j]``.

    Contributions are added in increasing ``j``; channels that receive nothing
    are zero.
    """
    idx = np.asarray(idx, dtype=np.intp)
    if a.ndim != 4 or a.shape[1] != idx.size:
        raise ShapeError(f"scatter_channels: {a.shape} does not match {idx.size} indices")
    b, _, h, w = a.shape
    out = np.zeros((b, num_channels, h, w), dtype=a.dtype)
    for j, k in enumerate(idx):
        out[:, k] += a.data[:, j]
    return _emit(out, (a,), lambda g: (g[:, idx],))


def concat(tensors: Sequence[Tensor], axis: int = 1) -> Tensor:
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]
    return _emit(
        np.concatenate([t.data for t in tensors], axis=axis),
        tuple(tensors),
        lambda g: tuple(np.split(g, splits, axis=axis)),
    )


# ---------------------------------------------------------------------------
# convolution


def conv_output_size(n: int, k: int, stride: int, padding: int, dilation: int) -> int:
    return (n + 2 * padding - dilation * (k - 1) - 1) // stride + 1


def _taps(xpn: Array, k: int, stride: int, dilation: int, ho: int, wo: int) -> List[Tuple[slice, slice]]:
    out = []
    for i in range(k):
        for j in range(k):
            r0, c0 = i * dilation, j * dilation
            out.append((slice(r0, r0 + stride * (ho - 1) + 1, stride), slice(c0, c0 + stride * (wo - 1) + 1, stride)))
    return out


def conv2d(
    x: Tensor,
    kernel: Tensor,
    bias: Optional[Tensor] = None,
    stride: int = 1,
    padding: int = 0,
    dilation: int = 1,
    groups: int = 1,
) -> Tensor:
    """2-D cross-correlation (no kernel flip) of ``x[B,Cin,H,W]`` with ``kernel[Cout,Cin/groups,k,k]``.

    ``groups == Cin == Cout`` gives a per-channel (depthwise) convolution, which
    is how many independent single-channel kernels are applied in one call.
    """
    if x.ndim != 4:
        raise ShapeError(f"conv2d: input must be rank 4 (B,C,H,W), got shape {x.shape}")
    if kernel.ndim != 4:
        raise ShapeError(f"conv2d: kernel must be rank 4 (Cout,Cin,k,k), got shape {kernel.shape}")
    B, cin, H, W = x.shape
    cout, cin_g, kh, kw = kernel.shape
    if kh != kw:
        raise ShapeError(f"conv2d: kernel must be square, got {kh}x{kw}")
    k = kh
    if k < 1 or stride < 1 or dilation < 1 or padding < 0 or groups < 1:
        raise ShapeError(f"conv2d: invalid k={k} stride={stride} padding={padding} dilation={dilation}")
    if cin % groups or cout % groups:
        raise ShapeError(f"conv2d: channels (in={cin}, out={cout}) not divisible by groups={groups}")
    if cin_g * groups != cin:
        raise ShapeError(f"conv2d: input channel dimension {cin} != kernel in-channels {cin_g} x groups {groups}")
    if bias is not None and bias.shape != (cout,):
        raise ShapeError(f"conv2d: bias shape {bias.shape} != ({cout},) out-channel dimension")
    ho = conv_output_size(H, k, stride, padding, dilation)
    wo = conv_output_size(W, k, stride, padding, dilation)
    if ho < 1 or wo < 1:
        raise ShapeError(f"conv2d: non-positive output size {ho}x{wo} for input {H}x{W}")

    if groups == cin == cout:
        return _depthwise_conv2d(x, kernel, bias, stride, padding, dilation, ho, wo)

    G, cout_g, kk = groups, cout // groups, k * k
    xpn = np.pad(x.data.transpose(0, 2, 3, 1), ((0, 0), (padding, padding), (padding, padding), (0, 0)))
    taps = _taps(xpn, k, stride, dilation, ho, wo)
    # cols[b, h, w, g, tap, c] holds the input patch for group g
    cols = np.stack([xpn[:, rs, cs, :] for rs, cs in taps], axis=3)
    cols = cols.reshape(B, ho, wo, kk, G, cin_g).transpose(0, 1, 2, 4, 3, 5).reshape(B, ho, wo, G, kk * cin_g)
    # wmat[g, o, tap*cin_g + c]
    wmat = kernel.data.reshape(G, cout_g, cin_g, kk).transpose(0, 1, 3, 2).reshape(G, cout_g, kk * cin_g)

    if G == 1:
        out = cols[..., 0, :] @ wmat[0].T
    elif cout_g == 1:
        out = np.einsum("bhwgc,gc->bhwg", cols, wmat[:, 0, :])
    else:
        out = np.einsum("bhwgc,goc->bhwgo", cols, wmat).reshape(B, ho, wo, cout)
    if bias is not None:
        out = out + bias.data
    result = np.ascontiguousarray(out.transpose(0, 3, 1, 2))

    def vjp(g):
        gn = g.transpose(0, 2, 3, 1)  # B,ho,wo,cout
        gx = gk = gb = None
        if bias is not None and bias.requires_grad:
            gb = gn.sum(axis=(0, 1, 2))
        gg = gn.reshape(B, ho, wo, G, cout_g)
        if kernel.requires_grad:
            if G == 1:
                gw = gg[..., 0, :].reshape(-1, cout_g).T @ cols[..., 0, :].reshape(-1, kk * cin_g)
                gw = gw[None]
            else:
                gw = np.einsum("bhwgo,bhwgc->goc", gg, cols)
            gk = gw.reshape(G, cout_g, kk, cin_g).transpose(0, 1, 3, 2).reshape(cout, cin_g, k, k)
        if x.requires_grad:
            if G == 1:
                gcols = gg[..., 0, :] @ wmat[0]
                gcols = gcols[..., None, :]
            else:
                gcols = np.einsum("bhwgo,goc->bhwgc", gg, wmat)
            gcols = gcols.reshape(B, ho, wo, G, kk, cin_g).transpose(0, 1, 2, 4, 3, 5).reshape(B, ho, wo, kk, cin)
            gxp = np.zeros_like(xpn)
            for t, (rs, cs) in enumerate(taps):
                gxp[:, rs, cs, :] += gcols[:, :, :, t, :]
            gx = gxp[:, padding : padding + H, padding : padding + W, :].transpose(0, 3, 1, 2)
        return gx, gk, gb

    inputs = (x, kernel) if bias is None else (x, kernel, bias)
    if bias is None:
        return _emit(result, inputs, lambda g: vjp(g)[:2])
    return _emit(result, inputs, vjp)


def _depthwise_conv2d(x, kernel, bias, stride, padding, dilation, ho, wo):
    B, C, H, W = x.shape
    k = kernel.shape[-1]
    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    taps = _taps(xp, k, stride, dilation, ho, wo)
    w = kernel.data.reshape(C, k * k)
    out = np.zeros((B, C, ho, wo), dtype=np.result_type(x.dtype, kernel.dtype))
    for t, (rs, cs) in enumerate(taps):
        out += xp[:, :, rs, cs] * w[:, t, None, None]
    if bias is not None:
        out += bias.data[:, None, None]

    def vjp(g):
        gx = gk = gb = None
        if bias is not None and bias.requires_grad:
            gb = g.sum(axis=(0, 2, 3))
        if kernel.requires_grad:
            gk = np.stack([np.einsum("bchw,bchw->c", g, xp[:, :, rs, cs]) for rs, cs in taps], axis=1)
            gk = gk.reshape(kernel.shape)
        if x.requires_grad:
            gxp = np.zeros_like(xp)
            for t, (rs, cs) in enumerate(taps):
                gxp[:, :, rs, cs] += g * w[:, t, None, None]
            gx = gxp[:, :, padding:padding + H, padding:padding + W]
        return gx, gk, gb

    if bias is None:
        return _emit(out, (x, kernel), lambda g: vjp(g)[:2])
    return _emit(out, (x, kernel, bias), vjp)


# ---------------------------------------------------------------------------
# reverse pass


def backward(objective: Tensor) -> None:
    """Accumulate d(objective)/d(leaf) into ``grad`` of every requires-grad leaf."""
    if objective.size != 1:
        raise AutodiffError(f"backward: objective must be scalar, got shape {objective.shape}")
    tape = objective._tape
    if tape is None:
        raise AutodiffError("backward: objective is detached (not produced on an active tape)")
    if tape.consumed:
        raise AutodiffError("backward: tape already consumed; reset it before another backward pass")
    tape.consumed = True

    adj = {id(objective): np.ones(objective.shape, dtype=objective.dtype)}
    leaves = {}
    for out, inputs, vjp in reversed(tape.entries):
        g = adj.pop(id(out), None)
        if g is None:
            continue
        for inp, gi in zip(inputs, vjp(g)):
            if gi is None or not inp.requires_grad:
                continue
            key = id(inp)
            if key in adj:
                adj[key] = adj[key] + gi
            else:
                adj[key] = gi
            if inp.is_leaf:
                leaves[key] = inp
    for key, leaf in leaves.items():
        g = np.asarray(adj[key], dtype=leaf.dtype).reshape(leaf.shape)
        leaf.grad = g.copy() if leaf.grad is None else leaf.grad + g
