"""Residual channel-attention block and the resampling modules of the encoder/decoder."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionError
from .layers import Conv
from .tensor import DEFAULT_LEAKY_SLOPE, Tensor, add, channel_mul, global_avg_pool, leaky_relu, pixel_shuffle, sigmoid


@dataclass
class RCABParams:
    conv1: Conv
    conv2: Conv
    att_reduce: Conv
    att_expand: Conv
    slope: float = DEFAULT_LEAKY_SLOPE

    @classmethod
    def init(cls, rng: np.random.Generator, channels: int, ratio: int = 4,
             slope: float = DEFAULT_LEAKY_SLOPE) -> RCABParams:
        if ratio < 1 or channels % ratio:
            raise DimensionError(f"RCAB: {channels} channels not divisible by attention ratio {ratio}")
        mid = channels // ratio
        return cls(
            Conv.init(rng, channels, channels, 3),
            Conv.init(rng, channels, channels, 3),
            Conv.init(rng, channels, mid, 1),
            Conv.init(rng, mid, channels, 1),
            slope,
        )

    @property
    def channels(self) -> int:
        return self.conv1.in_channels


def channel_attention(feat: Tensor, p: RCABParams) -> Tensor:
    """Per-channel gates in (0, 1), shape (n, c, 1, 1)."""
    z = global_avg_pool(feat)
    z = leaky_relu(p.att_reduce(z), p.slope)
    return sigmoid(p.att_expand(z))


def rcab(x: Tensor, p: RCABParams) -> Tensor:
    if x.shape[1] != p.channels:
        raise DimensionError(f"RCAB: input has {x.shape[1]} channels, block expects {p.channels}")
    body = p.conv2(leaky_relu(p.conv1(x), p.slope))
    return add(x, channel_mul(body, channel_attention(body, p)))


@dataclass
class DownParams:
    conv: Conv
    slope: float = DEFAULT_LEAKY_SLOPE

    @classmethod
    def init(cls, rng: np.random.Generator, cin: int, cout: int, slope: float = DEFAULT_LEAKY_SLOPE) -> DownParams:
        return cls(Conv.init(rng, cin, cout, 3, stride=2), slope)


def downsample(x: Tensor, p: DownParams) -> Tensor:
    """3x3 stride-2 convolution followed by LeakyReLU; halves h and w."""
    h, w = x.shape[2:]
    if h % 2 or w % 2:
        raise DimensionError(f"downsample needs even spatial extents, got {h}x{w}")
    return leaky_relu(p.conv(x), p.slope)


@dataclass
class UpParams:
    """1x1 reduce to the working width, RCAB, 1x1 expand to 4*c_out, pixel shuffle."""

    reduce: Conv
    rcab: RCABParams
    expand: Conv

    @classmethod
    def init(cls, rng: np.random.Generator, cin: int, cmid: int, cout: int, ratio: int = 4,
             slope: float = DEFAULT_LEAKY_SLOPE) -> UpParams:
        return cls(
            Conv.init(rng, cin, cmid, 1),
            RCABParams.init(rng, cmid, ratio, slope),
            Conv.init(rng, cmid, 4 * cout, 1),
        )

    @property
    def out_channels(self) -> int:
        return self.expand.out_channels // 4


def upsample(x: Tensor, p: UpParams) -> Tensor:
    """Doubles h and w; output channels are ``p.out_channels``."""
    y = rcab(p.reduce(x), p.rcab)
    y = p.expand(y)
    if y.shape[1] % 4:
        raise DimensionError(f"upsample: {y.shape[1]} channels not divisible by 4")
    return pixel_shuffle(y, 2)
