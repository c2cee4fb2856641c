"""Dense NCHW tensors with a reverse-mode gradient tape.

Every differentiable primitive the network needs lives here. Operations are
recorded on a thread-local tape in execution order, so replaying the tape
backwards is already a valid topological order. The tape is cleared after
each :func:`backward`.
"""

from __future__ import annotations

import contextlib
import threading
from dataclasses import dataclass, field
from typing import Callable, Iterator, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import expit

from .errors import ContractError, DimensionError

DEFAULT_LEAKY_SLOPE = 0.2

_state = threading.local()
_default_dtype = np.dtype(np.float32)


def set_default_dtype(dtype) -> None:
    global _default_dtype
    dtype = np.dtype(dtype)
    if dtype not in (np.float32, np.float64):
        raise ContractError(f"unsupported dtype {dtype}")
    _default_dtype = dtype


def get_default_dtype() -> np.dtype:
    return _default_dtype


@contextlib.contextmanager
def default_dtype(dtype):
    prev = _default_dtype
    set_default_dtype(dtype)
    try:
        yield
    finally:
        set_default_dtype(prev)


def _thread_state():
    if not hasattr(_state, "tape"):
        _state.tape = GradientTape()
        _state.grad_enabled = True
        _state.kink_log = None
    return _state


class Tensor:
    """A float array that may take part in the gradient tape.

    Float arrays keep their dtype; anything else is converted to the default
    dtype (float32 unless changed with :func:`set_default_dtype`).
    """

    __slots__ = ("data", "requires_grad", "grad", "_node", "__weakref__")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data)
        if dtype is not None:
            arr = arr.astype(dtype, copy=False)
        elif arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(_default_dtype)
        self.data: np.ndarray = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._node: _Node | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self) -> np.dtype:
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def is_leaf(self) -> bool:
        return self._node is None

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"item() needs a single element, got shape {self.shape}")
        return float(self.data.reshape(()))

    def detach(self) -> Tensor:
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        backward(self)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{flag})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return scale(self, -1.0)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


@dataclass(eq=False)
class _Node:
    op: str
    inputs: tuple[Tensor, ...]
    out: Tensor
    backward: Callable[[np.ndarray], Sequence[np.ndarray | None]]
    alive: bool = True


@dataclass
class GradientTape:
    """Ordered record of primitive applications since the last backward pass."""

    nodes: list[_Node] = field(default_factory=list)

    def record(self, node: _Node) -> None:
        self.nodes.append(node)

    def clear(self) -> None:
        for node in self.nodes:
            node.alive = False
            node.out._node = None
            node.out.requires_grad = False
        self.nodes.clear()

    def __len__(self) -> int:
        return len(self.nodes)


def current_tape() -> GradientTape:
    return _thread_state().tape


def clear_tape() -> None:
    current_tape().clear()


def is_grad_enabled() -> bool:
    return _thread_state().grad_enabled


@contextlib.contextmanager
def no_grad() -> Iterator[None]:
    st = _thread_state()
    prev = st.grad_enabled
    st.grad_enabled = False
    try:
        yield
    finally:
        st.grad_enabled = prev


@contextlib.contextmanager
def kink_monitor() -> Iterator[list[np.ndarray]]:
    """Collect the sign pattern at every non-smooth point evaluated inside the block.

    Finite-difference checks compare these patterns between the base and the
    perturbed evaluation to tell when a step crossed a kink of leaky_relu or |.|.
    """
    st = _thread_state()
    prev = st.kink_log
    log: list[np.ndarray] = []
    st.kink_log = log
    try:
        yield log
    finally:
        st.kink_log = prev


def _log_kink(arr: np.ndarray) -> None:
    log = _thread_state().kink_log
    if log is not None:
        log.append(arr > 0)


def _make(op: str, data: np.ndarray, inputs: Sequence[Tensor], backward_fn) -> Tensor:
    needs = any(t.requires_grad for t in inputs)
    out = Tensor(data)
    st = _thread_state()
    if needs and st.grad_enabled:
        out.requires_grad = True
        node = _Node(op, tuple(inputs), out, backward_fn)
        out._node = node
        st.tape.record(node)
    return out


def backward(loss: Tensor) -> None:
    """Propagate d(loss)/d(.) into ``grad`` of every requires_grad leaf.

    Leaf gradients accumulate across calls; the tape is cleared afterwards, so
    a second call without a new forward pass raises :class:`ContractError`.
    """
    if loss.data.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    node = loss._node
    if node is None or not node.alive:
        raise ContractError("loss is not on the gradient tape (no forward pass recorded since last backward)")
    tape = current_tape()
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for nd in reversed(tape.nodes):
        g = grads.pop(id(nd.out), None)
        if g is None:
            continue
        in_grads = nd.backward(g)
        for inp, gi in zip(nd.inputs, in_grads):
            if gi is None or not inp.requires_grad:
                continue
            if inp._node is None:
                gi = gi.astype(inp.data.dtype, copy=False)
                if inp.grad is None:
                    inp.grad = np.array(gi, copy=True)
                else:
                    inp.grad = inp.grad + gi
            else:
                key = id(inp)
                if key in grads:
                    grads[key] = grads[key] + gi
                else:
                    grads[key] = gi
    tape.clear()


# ---------------------------------------------------------------- checks


def _check_same(op: str, a: Tensor, b: Tensor) -> None:
    if a.shape != b.shape:
        raise DimensionError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


def _check4(op: str, x: Tensor) -> None:
    if x.ndim != 4:
        raise DimensionError(f"{op}: expected (n, c, h, w), got shape {x.shape}")


# ----------------------------------------------------------- arithmetic


def _const_like(value, ref: Tensor) -> Tensor:
    return Tensor(np.full(ref.shape, value, dtype=ref.dtype))


def add(a, b) -> Tensor:
    if not isinstance(a, Tensor):
        a, b = b, a
    if not isinstance(b, Tensor):
        c = float(b)
        return _make("add_const", a.data + a.data.dtype.type(c), (a,), lambda g: (g,))
    _check_same("add", a, b)
    return _make("add", a.data + b.data, (a, b), lambda g: (g, g))


def sub(a, b) -> Tensor:
    if not isinstance(a, Tensor):
        a = _const_like(a, b)
    if not isinstance(b, Tensor):
        b = _const_like(b, a)
    _check_same("sub", a, b)
    return _make("sub", a.data - b.data, (a, b), lambda g: (g, -g))


def mul(a, b) -> Tensor:
    if not isinstance(a, Tensor):
        a, b = b, a
    if not isinstance(b, Tensor):
        return scale(a, float(b))
    _check_same("mul", a, b)
    ad, bd = a.data, b.data
    return _make("mul", ad * bd, (a, b), lambda g: (g * bd, g * ad))


def div(a, b) -> Tensor:
    if not isinstance(b, Tensor):
        return scale(a, 1.0 / float(b))
    if not isinstance(a, Tensor):
        a = _const_like(a, b)
    _check_same("div", a, b)
    ad, bd = a.data, b.data
    out = ad / bd
    return _make("div", out, (a, b), lambda g: (g / bd, -g * out / bd))


def scale(x: Tensor, s) -> Tensor:
    """Multiply every element of ``x`` by a python float or a single-element tensor."""
    if isinstance(s, Tensor):
        if s.size != 1:
            raise DimensionError(f"scale: factor must have one element, got shape {s.shape}")
        sv = s.data.reshape(())
        xd = x.data

        def bw(g):
            return g * sv, np.reshape(np.sum(g * xd), s.shape)

        return _make("scale", xd * sv, (x, s), bw)
    c = x.data.dtype.type(s)
    return _make("scale_const", x.data * c, (x,), lambda g: (g * c,))


def sum_all(x: Tensor) -> Tensor:
    shp = x.shape
    return _make("sum", np.asarray(x.data.sum(), dtype=x.dtype), (x,),
                 lambda g: (np.broadcast_to(g, shp).copy(),))


def mean_all(x: Tensor) -> Tensor:
    shp, n = x.shape, x.size
    return _make("mean", np.asarray(x.data.mean(), dtype=x.dtype), (x,),
                 lambda g: (np.full(shp, g / n, dtype=g.dtype),))


# ----------------------------------------------------------- pointwise


def leaky_relu(x: Tensor, slope: float = DEFAULT_LEAKY_SLOPE) -> Tensor:
    xd = x.data
    _log_kink(xd)
    pos = xd > 0
    k = xd.dtype.type(slope)
    return _make("leaky_relu", np.where(pos, xd, xd * k), (x,),
                 lambda g: (np.where(pos, g, g * k),))


def sigmoid(x: Tensor) -> Tensor:
    out = expit(x.data)
    return _make("sigmoid", out, (x,), lambda g: (g * out * (1 - out),))


def concat_channels(tensors: Sequence[Tensor]) -> Tensor:
    if not tensors:
        raise DimensionError("concat_channels: nothing to concatenate")
    for t in tensors:
        _check4("concat_channels", t)
    ref = tensors[0].shape
    for t in tensors[1:]:
        if (t.shape[0],) + t.shape[2:] != (ref[0],) + ref[2:]:
            raise DimensionError(f"concat_channels: {t.shape} incompatible with {ref}")
    splits = np.cumsum([t.shape[1] for t in tensors])[:-1]

    def bw(g):
        return np.split(g, splits, axis=1)

    return _make("concat", np.concatenate([t.data for t in tensors], axis=1), tuple(tensors), bw)


def global_avg_pool(x: Tensor) -> Tensor:
    """(n, c, h, w) -> (n, c, 1, 1) spatial mean."""
    _check4("global_avg_pool", x)
    n, c, h, w = x.shape
    area = h * w

    def bw(g):
        return (np.broadcast_to(g / area, (n, c, h, w)).copy(),)

    return _make("gap", x.data.mean(axis=(2, 3), keepdims=True), (x,), bw)


def channel_mul(x: Tensor, a: Tensor) -> Tensor:
    """Scale each channel of ``x`` (n, c, h, w) by ``a`` (n, c, 1, 1)."""
    _check4("channel_mul", x)
    if a.shape != (x.shape[0], x.shape[1], 1, 1):
        raise DimensionError(f"channel_mul: weights {a.shape} do not match {x.shape}")
    xd, ad = x.data, a.data

    def bw(g):
        return g * ad, (g * xd).sum(axis=(2, 3), keepdims=True)

    return _make("channel_mul", xd * ad, (x, a), bw)


_POINTWISE = {
    "leaky_relu": leaky_relu,
    "sigmoid": sigmoid,
    "add": add,
    "mul": mul,
    "concat_channels": lambda *ts: concat_channels(ts),
    "scale": scale,
}


def pointwise(fn: str, *args, **kwargs) -> Tensor:
    """Dispatch by name to one of the elementwise primitives."""
    try:
        op = _POINTWISE[fn]
    except KeyError:
        raise ContractError(f"unknown pointwise op {fn!r}") from None
    return op(*args, **kwargs)


# ------------------------------------------------------------- losses


def l1_mean(a: Tensor, b: Tensor) -> Tensor:
    """Mean absolute difference; the subgradient at a tie is 0."""
    _check_same("l1_mean", a, b)
    diff = a.data - b.data
    _log_kink(diff)
    n = diff.size
    out = np.asarray(np.abs(diff).mean(), dtype=diff.dtype)
    sgn = np.sign(diff)

    def bw(g):
        ga = sgn * (g / n)
        return ga, -ga

    return _make("l1_mean", out, (a, b), bw)


# --------------------------------------------------------- convolution


def conv2d(x: Tensor, w: Tensor, b: Tensor | None = None, stride: int = 1, padding: int = 0) -> Tensor:
    """Cross-correlation of ``x`` (n, c_in, h, w) with ``w`` (c_out, c_in, k, k)."""
    _check4("conv2d", x)
    if w.ndim != 4 or w.shape[2] != w.shape[3]:
        raise DimensionError(f"conv2d: weight must be (c_out, c_in, k, k), got {w.shape}")
    cout, cin, k, _ = w.shape
    if k % 2 == 0:
        raise DimensionError(f"conv2d: kernel size must be odd, got {k}")
    n, c, h, wd = x.shape
    if c != cin:
        raise DimensionError(f"conv2d: input has {c} channels, weight expects {cin}")
    if b is not None and b.shape != (cout,):
        raise DimensionError(f"conv2d: bias shape {b.shape} != ({cout},)")
    s, p = int(stride), int(padding)
    oh = (h + 2 * p - k) // s + 1
    ow = (wd + 2 * p - k) // s + 1
    if oh < 1 or ow < 1:
        raise DimensionError(f"conv2d: empty output for input {x.shape}, k={k}, stride={s}, padding={p}")

    xp = np.pad(x.data, ((0, 0), (0, 0), (p, p), (p, p))) if p else x.data
    # im2col: rows are output pixels (n, oh, ow), columns are (c_in, ki, kj)
    if k == 1:
        cols = xp[:, :, : s * (oh - 1) + 1 : s, : s * (ow - 1) + 1 : s].transpose(0, 2, 3, 1).reshape(-1, cin)
    else:
        win = sliding_window_view(xp, (k, k), axis=(2, 3))[:, :, ::s, ::s]
        cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(-1, cin * k * k)
    wmat = w.data.reshape(cout, -1)
    out = cols @ wmat.T
    if b is not None:
        out += b.data
    out = np.ascontiguousarray(out.reshape(n, oh, ow, cout).transpose(0, 3, 1, 2))

    def bw(g):
        g2 = g.transpose(0, 2, 3, 1).reshape(-1, cout)
        gw = (g2.T @ cols).reshape(w.shape)
        gb = g2.sum(axis=0) if b is not None else None
        gx = None
        if x.requires_grad:
            gcols = (g2 @ wmat).reshape(n, oh, ow, cin, k, k)
            if k == 1 and s == 1:
                gxp = gcols[..., 0, 0].transpose(0, 3, 1, 2)
            else:
                gxp = np.zeros(xp.shape, dtype=gcols.dtype)
                for i in range(k):
                    for j in range(k):
                        gxp[:, :, i : i + s * (oh - 1) + 1 : s, j : j + s * (ow - 1) + 1 : s] += \
                            gcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
            gx = gxp[:, :, p : p + h, p : p + wd] if p else gxp
        return (gx, gw, gb) if b is not None else (gx, gw)

    inputs = (x, w, b) if b is not None else (x, w)
    return _make("conv2d", out, inputs, bw)


# ------------------------------------------------------------ resampling


def avg_pool2(x: Tensor) -> Tensor:
    _check4("avg_pool2", x)
    n, c, h, w = x.shape
    if h % 2 or w % 2:
        raise DimensionError(f"avg_pool2: spatial extents must be even, got {h}x{w}")
    out = x.data.reshape(n, c, h // 2, 2, w // 2, 2).mean(axis=(3, 5))

    def bw(g):
        return (np.repeat(np.repeat(g * 0.25, 2, axis=2), 2, axis=3),)

    return _make("avg_pool2", out, (x,), bw)


def up_nearest2(x: Tensor) -> Tensor:
    _check4("up_nearest2", x)
    n, c, h, w = x.shape
    out = np.repeat(np.repeat(x.data, 2, axis=2), 2, axis=3)

    def bw(g):
        return (g.reshape(n, c, h, 2, w, 2).sum(axis=(3, 5)),)

    return _make("up_nearest2", out, (x,), bw)


def resample2(x: Tensor, mode: str) -> Tensor:
    if mode == "pool_avg":
        return avg_pool2(x)
    if mode == "up_nearest":
        return up_nearest2(x)
    raise ContractError(f"resample2: unknown mode {mode!r}")


def _shuffle_array(a: np.ndarray, r: int) -> np.ndarray:
    n, c, h, w = a.shape
    oc = c // (r * r)
    return a.reshape(n, oc, r, r, h, w).transpose(0, 1, 4, 2, 5, 3).reshape(n, oc, h * r, w * r)


def _unshuffle_array(a: np.ndarray, r: int) -> np.ndarray:
    n, c, h, w = a.shape
    return a.reshape(n, c, h // r, r, w // r, r).transpose(0, 1, 3, 5, 2, 4).reshape(n, c * r * r, h // r, w // r)


def pixel_shuffle(x: Tensor, r: int) -> Tensor:
    """Sub-pixel rearrangement: out[n, c, h*r+i, w*r+j] = x[n, c*r*r + i*r + j, h, w]."""
    _check4("pixel_shuffle", x)
    if r < 1 or x.shape[1] % (r * r):
        raise DimensionError(f"pixel_shuffle: {x.shape[1]} channels not divisible by r^2={r * r}")
    return _make("pixel_shuffle", _shuffle_array(x.data, r), (x,), lambda g: (_unshuffle_array(g, r),))


def pixel_unshuffle(x: Tensor, r: int) -> Tensor:
    _check4("pixel_unshuffle", x)
    if r < 1 or x.shape[2] % r or x.shape[3] % r:
        raise DimensionError(f"pixel_unshuffle: spatial extents {x.shape[2:]} not divisible by {r}")
    return _make("pixel_unshuffle", _unshuffle_array(x.data, r), (x,), lambda g: (_shuffle_array(g, r),))


# ------------------------------------------------------------ padding


def pad_edge(x: Tensor, bottom: int, right: int) -> Tensor:
    """Replicate the last row/column so the map grows by ``bottom`` rows and ``right`` columns."""
    _check4("pad_edge", x)
    n, c, h, w = x.shape
    out = np.pad(x.data, ((0, 0), (0, 0), (0, bottom), (0, right)), mode="edge")

    def bw(g):
        g = g.copy()
        if bottom:
            g[:, :, h - 1, :] += g[:, :, h:, :].sum(axis=2)
        g = g[:, :, :h, :]
        if right:
            g[:, :, :, w - 1] += g[:, :, :, w:].sum(axis=3)
        return (g[:, :, :, :w],)

    return _make("pad_edge", out, (x,), bw)


def crop(x: Tensor, h: int, w: int) -> Tensor:
    """Keep the top-left ``h`` x ``w`` window."""
    _check4("crop", x)
    H, W = x.shape[2:]
    if h > H or w > W:
        raise DimensionError(f"crop: {h}x{w} larger than {H}x{W}")

    def bw(g):
        full = np.zeros(x.shape, dtype=g.dtype)
        full[:, :, :h, :w] = g
        return (full,)

    return _make("crop", np.ascontiguousarray(x.data[:, :, :h, :w]), (x,), bw)
