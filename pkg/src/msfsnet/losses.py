"""Training losses and image-quality metrics."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.ndimage import correlate1d

from . import tensor as T
from .errors import ContractError, DimensionError
from .network import SCALES, ScaleTaps
from .tensor import Tensor, l1_mean

PSNR_INF = math.inf


@dataclass
class LossWeights:
    lambda1: float = 0.05  # contrastive (high-frequency) term
    lambda2: float = 0.05  # consistency (low-frequency) term
    eps_contrastive: float = 1e-7
    detach_negatives: bool = False

    def validate(self) -> None:
        if self.lambda1 < 0 or self.lambda2 < 0:
            raise ContractError("loss weights must be non-negative")
        if self.eps_contrastive <= 0:
            raise ContractError("eps_contrastive must be positive")


def _require(taps: list, name: str) -> None:
    if len(taps) != SCALES or any(t is None for t in taps):
        raise ContractError(f"taps.{name} must be populated for all {SCALES} scales")


def loss_low(taps: ScaleTaps) -> Tensor:
    """Sum over scales of the mean |encoder LF - output-image LF|."""
    _require(taps.en_lf, "en_lf")
    _require(taps.out_lf, "out_lf")
    total = None
    for en, out in zip(taps.en_lf, taps.out_lf):
        term = l1_mean(en, out)
        total = term if total is None else T.add(total, term)
    return total


def loss_high(taps: ScaleTaps, w: LossWeights | None = None) -> Tensor:
    """Sum over scales of L1(anchor, positive) / (L1(anchor, negative) + eps).

    Anchor is the decoder HF tap, positive the output-image HF tap, negative
    the encoder HF tap of the blurry input.
    """
    w = w or LossWeights()
    _require(taps.de_hf, "de_hf")
    _require(taps.out_hf, "out_hf")
    _require(taps.en_hf, "en_hf")
    total = None
    for anchor, pos, neg in zip(taps.de_hf, taps.out_hf, taps.en_hf):
        if w.detach_negatives:
            neg = neg.detach()
        term = T.div(l1_mean(anchor, pos), T.add(l1_mean(anchor, neg), w.eps_contrastive))
        total = term if total is None else T.add(total, term)
    return total


@dataclass
class LossParts:
    total: Tensor
    low: Tensor | None
    high: Tensor | None
    recon: Tensor

    def values(self) -> dict[str, float]:
        return {
            "loss_total": self.total.item(),
            "loss_low": self.low.item() if self.low is not None else 0.0,
            "loss_high": self.high.item() if self.high is not None else 0.0,
            "loss_recon": self.recon.item(),
        }


def loss_parts(sharp: Tensor, gt: Tensor, taps: ScaleTaps, w: LossWeights | None = None) -> LossParts:
    """All three terms; a term whose weight is zero is not built into the graph."""
    w = w or LossWeights()
    w.validate()
    if sharp.shape != gt.shape:
        raise DimensionError(f"output {sharp.shape} and ground truth {gt.shape} differ")
    recon = l1_mean(sharp, gt)
    total = recon
    high = low = None
    if w.lambda1 > 0:
        high = loss_high(taps, w)
        total = T.add(total, T.scale(high, w.lambda1))
    if w.lambda2 > 0:
        low = loss_low(taps)
        total = T.add(total, T.scale(low, w.lambda2))
    return LossParts(total, low, high, recon)


def loss_total(sharp: Tensor, gt: Tensor, taps: ScaleTaps, w: LossWeights | None = None) -> Tensor:
    """lambda1 * loss_high + lambda2 * loss_low + mean |sharp - gt|."""
    return loss_parts(sharp, gt, taps, w).total


# ---------------------------------------------------------------- metrics


def psnr(a: np.ndarray, b: np.ndarray, peak: float = 1.0) -> float:
    """Peak signal-to-noise ratio in dB; identical inputs give ``inf``."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise DimensionError(f"psnr: shape mismatch {a.shape} vs {b.shape}")
    mse = float(np.mean((a - b) ** 2))
    if mse == 0:
        return PSNR_INF
    return 10.0 * math.log10(peak * peak / mse)


def to_gray(img: np.ndarray) -> np.ndarray:
    """BT.601 luma for (3, h, w) or (h, w, 3) arrays; 2-D input passes through."""
    img = np.asarray(img, dtype=np.float64)
    if img.ndim == 2:
        return img
    if img.ndim == 3 and img.shape[0] in (1, 3):
        img = np.moveaxis(img, 0, -1)
    if img.ndim == 3 and img.shape[-1] == 1:
        return img[..., 0]
    if img.ndim == 3 and img.shape[-1] == 3:
        return img @ np.array([0.299, 0.587, 0.114])
    raise DimensionError(f"cannot convert shape {img.shape} to grayscale")


def gaussian_kernel1d(sigma: float, radius: int) -> np.ndarray:
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-0.5 * (x / sigma) ** 2)
    return k / k.sum()


SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03


def ssim(a: np.ndarray, b: np.ndarray, data_range: float = 1.0) -> float:
    """Mean SSIM with an 11x11 Gaussian window (sigma 1.5), valid region only."""
    x, y = to_gray(a), to_gray(b)
    if x.shape != y.shape:
        raise DimensionError(f"ssim: shape mismatch {x.shape} vs {y.shape}")
    if min(x.shape) < SSIM_WINDOW:
        raise ContractError(f"ssim needs images of at least {SSIM_WINDOW}x{SSIM_WINDOW}, got {x.shape}")
    r = SSIM_WINDOW // 2
    g = gaussian_kernel1d(SSIM_SIGMA, r)

    def blur(img):
        out = correlate1d(correlate1d(img, g, axis=0, mode="constant"), g, axis=1, mode="constant")
        return out[r:-r, r:-r]

    c1 = (SSIM_K1 * data_range) ** 2
    c2 = (SSIM_K2 * data_range) ** 2
    mx, my = blur(x), blur(y)
    sxx = blur(x * x) - mx * mx
    syy = blur(y * y) - my * my
    sxy = blur(x * y) - mx * my
    num = (2 * mx * my + c1) * (2 * sxy + c2)
    den = (mx * mx + my * my + c1) * (sxx + syy + c2)
    return float(np.mean(num / den))
