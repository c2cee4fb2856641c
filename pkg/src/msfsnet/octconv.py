"""Octave convolution and the frequency separation module (FSM).

An octave feature is a pair: a high-frequency map at full resolution and a
low-frequency map at half resolution. Channels are split by a ratio alpha
(the share that goes to the low band).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Union

import numpy as np

from .errors import DimensionError
from .layers import Conv
from .tensor import Tensor, add, avg_pool2, up_nearest2


@dataclass
class FrequencyPair:
    hf: Tensor
    lf: Tensor
    # False when both fields hold the same undecomposed feature
    split: bool = True

    @property
    def alpha(self) -> float:
        if not self.split:
            return 0.0
        c = self.hf.shape[1] + self.lf.shape[1]
        return self.lf.shape[1] / c

    def validate(self) -> None:
        if not self.split:
            return
        h, w = self.hf.shape[2:]
        if self.lf.shape[2:] != (h // 2, w // 2) or h % 2 or w % 2:
            raise DimensionError(f"low band {self.lf.shape} is not half of high band {self.hf.shape}")
        if self.lf.shape[0] != self.hf.shape[0]:
            raise DimensionError("bands disagree on batch size")


OctInput = Union[Tensor, FrequencyPair]


def split_channels(c: int, alpha: float) -> tuple[int, int]:
    """Return (hf_channels, lf_channels); alpha * c must be integral."""
    lf = alpha * c
    if abs(lf - round(lf)) > 1e-9:
        raise DimensionError(f"alpha={alpha} does not split {c} channels into whole numbers")
    lf = int(round(lf))
    return c - lf, lf


@dataclass
class OctConvParams:
    """Weights of the four paths; a path is None when either of its bands is empty."""

    in_channels: int
    out_channels: int
    kernel_size: int
    alpha_in: float
    alpha_out: float
    hh: Conv | None = None
    hl: Conv | None = None
    lh: Conv | None = None
    ll: Conv | None = None

    @classmethod
    def init(cls, rng: np.random.Generator, cin: int, cout: int, k: int,
             alpha_in: float, alpha_out: float) -> OctConvParams:
        hi, li = split_channels(cin, alpha_in)
        ho, lo = split_channels(cout, alpha_out)
        p = cls(cin, cout, k, alpha_in, alpha_out)
        if hi and ho:
            p.hh = Conv.init(rng, hi, ho, k)
        if hi and lo:
            p.hl = Conv.init(rng, hi, lo, k)
        if li and ho:
            p.lh = Conv.init(rng, li, ho, k)
        if li and lo:
            p.ll = Conv.init(rng, li, lo, k)
        return p

    def paths(self) -> list[Conv]:
        return [c for c in (self.hh, self.hl, self.lh, self.ll) if c is not None]

    def zero_(self) -> None:
        for c in self.paths():
            c.zero_()


def _sum(a: Tensor | None, b: Tensor | None) -> Tensor | None:
    if a is None:
        return b
    if b is None:
        return a
    return add(a, b)


def octconv(x: OctInput, p: OctConvParams) -> OctInput:
    """Four-path octave convolution.

    high_out = conv(high; W_hh) + up2(conv(low; W_lh))
    low_out  = conv(low; W_ll) + conv(pool2(high); W_hl)

    Input is a plain tensor when ``alpha_in`` is 0 (all high band) or 1 (all
    low band); likewise the output for ``alpha_out``.
    """
    hi, li = split_channels(p.in_channels, p.alpha_in)
    ho, lo = split_channels(p.out_channels, p.alpha_out)

    if isinstance(x, FrequencyPair):
        if li == 0 or hi == 0:
            raise DimensionError(f"alpha_in={p.alpha_in} expects a plain tensor, got a frequency pair")
        x.validate()
        xh, xl = x.hf, x.lf
    else:
        if li and hi:
            raise DimensionError(f"alpha_in={p.alpha_in} expects a frequency pair, got a plain tensor")
        xh, xl = (x, None) if li == 0 else (None, x)

    if xh is not None and xh.shape[1] != hi:
        raise DimensionError(f"high band has {xh.shape[1]} channels, expected {hi}")
    if xl is not None and xl.shape[1] != li:
        raise DimensionError(f"low band has {xl.shape[1]} channels, expected {li}")
    if xh is not None and (p.hl is not None or p.lh is not None):
        h, w = xh.shape[2:]
        if h % 2 or w % 2:
            raise DimensionError(f"odd spatial size {h}x{w} with an active low-frequency path")

    yh = yl = None
    if p.hh is not None:
        yh = p.hh(xh)
    if p.lh is not None:
        yh = _sum(yh, up_nearest2(p.lh(xl)))
    if p.ll is not None:
        yl = p.ll(xl)
    if p.hl is not None:
        yl = _sum(yl, p.hl(avg_pool2(xh)))

    if lo == 0:
        return yh
    if ho == 0:
        return yl
    return FrequencyPair(yh, yl)


@dataclass
class FSMParams:
    """1x1 split -> 3x3 octave conv -> 1x1 merge, plus the input residual.

    With ``alpha=0`` all three stages degenerate to plain convolutions; this is
    the undecomposed stand-in used by the "without FSM" ablation.
    """

    split: OctConvParams
    mid: OctConvParams
    merge: OctConvParams
    alpha: float = 0.5

    @classmethod
    def init(cls, rng: np.random.Generator, channels: int, alpha: float = 0.5) -> FSMParams:
        if channels % 2:
            raise DimensionError(f"FSM needs an even channel count, got {channels}")
        return cls(
            OctConvParams.init(rng, channels, channels, 1, 0.0, alpha),
            OctConvParams.init(rng, channels, channels, 3, alpha, alpha),
            OctConvParams.init(rng, channels, channels, 1, alpha, 0.0),
            alpha,
        )


def fsm(x: Tensor, p: FSMParams) -> tuple[Tensor, FrequencyPair]:
    """Return the residual output and the (hf, lf) taps of the middle octave conv.

    When the module runs undecomposed (alpha=0) both taps are the same full feature.
    """
    n, c, h, w = x.shape
    if c % 2:
        raise DimensionError(f"FSM needs an even channel count, got {c}")
    if p.alpha > 0 and (h % 2 or w % 2):
        raise DimensionError(f"FSM needs even spatial extents, got {h}x{w}")
    y = octconv(x, p.split)
    mid = octconv(y, p.mid)
    out = octconv(mid, p.merge)
    taps = mid if isinstance(mid, FrequencyPair) else FrequencyPair(mid, mid, split=False)
    return add(out, x), taps
