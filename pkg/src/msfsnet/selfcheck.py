"""Gradient self-test: every differentiable primitive plus the full loss through a toy network."""

from __future__ import annotations

import time
from typing import Callable

import numpy as np

from . import tensor as T
from .gradcheck import GradCheckReport, grad_check
from .losses import LossWeights, loss_total
from .network import MSFSNet, NetworkConfig, encode_output, forward
from .tensor import Tensor

TOL_32 = 1e-3
TOL_64 = 1e-6

# smallest configuration that still exercises all three scales
TOY_NETWORK = NetworkConfig(base_channels=8, rcab_bottleneck_count=1, zero_head=False)
TOY_SIZE = 8


def _projected(op: Callable[[], Tensor], rng: np.random.Generator) -> Callable[[], Tensor]:
    """Scalar ``mean(op() * r)`` with a fixed random ``r``: smooth in op's output."""
    with T.no_grad():
        y = op()
    r = Tensor(rng.standard_normal(y.shape).astype(y.dtype))
    return lambda: T.mean_all(T.mul(op(), r))


def _primitive_cases(rng: np.random.Generator) -> dict[str, tuple[Callable[[], Tensor], dict[str, Tensor]]]:
    dt = T.get_default_dtype()

    def leaf(*shape, lo=None):
        a = rng.standard_normal(shape)
        if lo is not None:
            a = lo + np.abs(a)
        return Tensor(a.astype(dt), requires_grad=True)

    x4 = leaf(2, 3, 4, 6)
    y4 = leaf(2, 3, 4, 6)
    pos = leaf(2, 3, 4, 6, lo=0.5)
    w3 = leaf(5, 3, 3, 3)
    b5 = leaf(5)
    w1 = leaf(4, 3, 1, 1)
    s = leaf(1)
    att = leaf(2, 3, 1, 1)
    ch4 = leaf(1, 8, 3, 2)
    tgt = Tensor(rng.standard_normal((2, 3, 4, 6)).astype(dt))
    ops = {
        "add": (lambda: T.add(x4, y4), {"a": x4, "b": y4}),
        "sub": (lambda: T.sub(x4, y4), {"a": x4, "b": y4}),
        "mul": (lambda: T.mul(x4, y4), {"a": x4, "b": y4}),
        "div": (lambda: T.div(x4, pos), {"a": x4, "b": pos}),
        "scale": (lambda: T.scale(x4, s), {"x": x4, "s": s}),
        "sum_all": (lambda: T.sum_all(T.mul(x4, x4)), {"x": x4}),
        "mean_all": (lambda: T.mean_all(T.mul(x4, y4)), {"x": x4, "y": y4}),
        "leaky_relu": (lambda: T.leaky_relu(x4), {"x": x4}),
        "sigmoid": (lambda: T.sigmoid(x4), {"x": x4}),
        "concat_channels": (lambda: T.concat_channels([x4, y4]), {"a": x4, "b": y4}),
        "global_avg_pool": (lambda: T.global_avg_pool(T.mul(x4, x4)), {"x": x4}),
        "channel_mul": (lambda: T.channel_mul(x4, att), {"x": x4, "a": att}),
        "l1_mean": (lambda: T.l1_mean(x4, tgt), {"x": x4}),
        "conv2d_3x3": (lambda: T.conv2d(x4, w3, b5, 1, 1), {"x": x4, "w": w3, "b": b5}),
        "conv2d_stride2": (lambda: T.conv2d(x4, w3, b5, 2, 1), {"x": x4, "w": w3, "b": b5}),
        "conv2d_1x1": (lambda: T.conv2d(x4, w1, None, 1, 0), {"x": x4, "w": w1}),
        "avg_pool2": (lambda: T.avg_pool2(x4), {"x": x4}),
        "up_nearest2": (lambda: T.up_nearest2(x4), {"x": x4}),
        "pixel_shuffle": (lambda: T.pixel_shuffle(ch4, 2), {"x": ch4}),
        "pixel_unshuffle": (lambda: T.pixel_unshuffle(x4, 2), {"x": x4}),
        "pad_edge": (lambda: T.pad_edge(x4, 3, 2), {"x": x4}),
        "crop": (lambda: T.crop(x4, 3, 5), {"x": x4}),
    }
    return {name: (_projected(op, rng), leaves) for name, (op, leaves) in ops.items()}


def _network_case(seed: int):
    dt = T.get_default_dtype()
    rng = np.random.default_rng(seed)
    net = MSFSNet(TOY_NETWORK, seed=seed)
    x = Tensor(rng.random((1, TOY_NETWORK.in_channels, TOY_SIZE, TOY_SIZE)).astype(dt))
    gt = Tensor(rng.random((1, TOY_NETWORK.in_channels, TOY_SIZE, TOY_SIZE)).astype(dt))

    def fn():
        out, taps = forward(x, net.params, net.cfg)
        encode_output(out, net.params, taps)
        return loss_total(out, gt, taps, LossWeights())

    return fn, dict(net.named_parameters())


def gradient_suite(float64: bool = False, seed: int = 0, per_leaf: int = 3,
                   log: Callable[[str], None] | None = None) -> list[tuple[str, GradCheckReport]]:
    """Run all checks at 32- or 64-bit; returns ``(name, report)`` pairs.

    Network parameters are sampled (``per_leaf`` elements of each tensor);
    primitive leaves are checked element by element.
    """
    dtype = np.float64 if float64 else np.float32
    tol = TOL_64 if float64 else TOL_32
    results = []
    with T.default_dtype(dtype):
        rng = np.random.default_rng(seed)
        for name, (fn, leaves) in _primitive_cases(rng).items():
            t0 = time.perf_counter()
            rep = grad_check(fn, leaves, tol=tol)
            results.append((name, rep))
            if log:
                log(f"{name:<18} {rep.summary()} ({time.perf_counter() - t0:.2f}s)")
        t0 = time.perf_counter()
        fn, leaves = _network_case(seed)
        rep = grad_check(fn, leaves, tol=tol, max_per_leaf=per_leaf, rng=np.random.default_rng(seed))
        results.append(("network_loss_total", rep))
        if log:
            log(f"{'network_loss_total':<18} {rep.summary()} ({time.perf_counter() - t0:.2f}s)")
    return results
