"""Low/high-frequency entropy statistics of paired image corpora.

Each image is area-downscaled, split into a Gaussian low-pass part and the
residual high-pass part, converted to luma, and summarised by the Shannon
entropy of its intensity histogram. Two corpora are then compared per band
and scale via the Jensen-Shannon divergence of their entropy distributions.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from scipy.ndimage import correlate1d

from .errors import ContractError, IngestError
from .images import pair_files, read_image
from .losses import gaussian_kernel1d, to_gray

DEFAULT_SIGMA = 2.0
DEFAULT_SCALES = (1.0, 0.5, 0.25)
INTENSITY_BINS = 256
ENTROPY_BINS = 64
HF_OFFSET = 0.5  # high band is signed; shift it into [0, 1] before binning

# Decomposition runs on a dyadic fixed-point grid: differences of grid values
# are exact in float64, so low + high reproduces the image bit for bit.
_GRID = 2.0 ** -40


def _snap(a: np.ndarray) -> np.ndarray:
    return np.round(np.asarray(a, dtype=np.float64) / _GRID) * _GRID


@dataclass
class FreqDecomposition:
    image: np.ndarray  # the (downscaled) image that lf + hf reconstructs
    lf: np.ndarray
    hf: np.ndarray
    scale: float


def area_downscale(img: np.ndarray, scale: float) -> np.ndarray:
    """Block-average the last two axes by an integer factor 1/scale."""
    factor = round(1.0 / scale)
    if factor < 1 or abs(factor * scale - 1.0) > 1e-9:
        raise ContractError(f"scale must be 1/k for integer k, got {scale}")
    img = np.asarray(img, dtype=np.float64)
    if factor == 1:
        return img
    h, w = img.shape[-2:]
    h2, w2 = h // factor, w // factor
    if h2 == 0 or w2 == 0:
        raise ContractError(f"image {h}x{w} too small for scale {scale}")
    img = img[..., : h2 * factor, : w2 * factor]
    return img.reshape(img.shape[:-2] + (h2, factor, w2, factor)).mean(axis=(-3, -1))


def gaussian_blur(img: np.ndarray, sigma: float) -> np.ndarray:
    """Separable Gaussian over the last two axes, radius ceil(3 sigma), reflective borders."""
    if not sigma > 0:
        raise ContractError(f"sigma must be positive, got {sigma}")
    k = gaussian_kernel1d(sigma, math.ceil(3 * sigma))
    out = correlate1d(np.asarray(img, dtype=np.float64), k, axis=-1, mode="reflect")
    return correlate1d(out, k, axis=-2, mode="reflect")


def freq_decompose(img: np.ndarray, sigma: float = DEFAULT_SIGMA, scale: float = 1.0) -> FreqDecomposition:
    if not sigma > 0:
        raise ContractError(f"sigma must be positive, got {sigma}")
    base = _snap(area_downscale(img, scale))
    lf = _snap(gaussian_blur(base, sigma))
    hf = base - lf
    return FreqDecomposition(base, lf, hf, scale)


def shannon_entropy(img: np.ndarray, bins: int = INTENSITY_BINS, value_range: tuple[float, float] = (0.0, 1.0)) -> float:
    """Entropy in bits of the intensity histogram; values outside the range are clipped in."""
    if bins < 2:
        raise ContractError("bins must be >= 2")
    v = np.clip(np.asarray(img, dtype=np.float64).ravel(), *value_range)
    counts, _ = np.histogram(v, bins=bins, range=value_range)
    p = counts[counts > 0] / v.size
    return float(-(p * np.log2(p)).sum()) + 0.0


@dataclass
class EntropyDistribution:
    label: str
    values: np.ndarray  # one entropy (bits) per image
    edges: np.ndarray
    hist: np.ndarray  # normalised, sums to 1


def entropy_distribution(values: Sequence[float], edges: np.ndarray, label: str = "") -> EntropyDistribution:
    values = np.asarray(values, dtype=np.float64)
    counts, _ = np.histogram(np.clip(values, edges[0], edges[-1]), bins=edges)
    return EntropyDistribution(label, values, edges, counts / counts.sum())


def pooled_edges(a: Sequence[float], b: Sequence[float], bins: int = ENTROPY_BINS) -> np.ndarray:
    pooled = np.concatenate([np.asarray(a, float), np.asarray(b, float)])
    lo, hi = float(pooled.min()), float(pooled.max())
    if hi - lo < 1e-12:
        lo, hi = lo - 0.5, hi + 0.5
    return np.linspace(lo, hi, bins + 1)


def js_divergence(p, q) -> float:
    """Jensen-Shannon divergence in bits between two normalised histograms."""
    if isinstance(p, EntropyDistribution) and isinstance(q, EntropyDistribution):
        if p.edges.shape != q.edges.shape or not np.array_equal(p.edges, q.edges):
            raise ContractError("histograms use different bin edges")
        p, q = p.hist, q.hist
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    if p.shape != q.shape:
        raise ContractError(f"histograms have different binning: {p.shape} vs {q.shape}")
    m = 0.5 * (p + q)

    def kl(x):
        nz = x > 0
        return float((x[nz] * np.log2(x[nz] / m[nz])).sum())

    return min(max(0.5 * kl(p) + 0.5 * kl(q), 0.0), 1.0)


def band_entropy(img: np.ndarray, band: str, sigma: float, scale: float, bins: int = INTENSITY_BINS) -> float:
    dec = freq_decompose(to_gray(img), sigma, scale)
    if band == "LF":
        return shannon_entropy(dec.lf, bins)
    if band == "HF":
        return shannon_entropy(dec.hf + HF_OFFSET, bins)
    raise ContractError(f"band must be 'LF' or 'HF', got {band!r}")


@dataclass
class ReportRow:
    band: str
    scale: float
    js_bits: float
    mean_entropy_a: float
    mean_entropy_b: float
    n_images: int
    dist_a: EntropyDistribution
    dist_b: EntropyDistribution


def entropy_report(
    corpus_a: Sequence[np.ndarray],
    corpus_b: Sequence[np.ndarray],
    sigma: float = DEFAULT_SIGMA,
    scales: Iterable[float] = DEFAULT_SCALES,
    bins: int = INTENSITY_BINS,
    hist_bins: int = ENTROPY_BINS,
    labels: tuple[str, str] = ("a", "b"),
) -> list[ReportRow]:
    """One row per (band, scale): entropy distributions of both corpora and their JS divergence."""
    if len(corpus_a) == 0 or len(corpus_b) == 0:
        raise IngestError("both corpora must be non-empty")
    if len(corpus_a) != len(corpus_b):
        raise IngestError(f"corpora are not paired: {len(corpus_a)} vs {len(corpus_b)} images")
    gray_a = [to_gray(im) for im in corpus_a]
    gray_b = [to_gray(im) for im in corpus_b]
    rows = []
    for band in ("HF", "LF"):
        for scale in scales:
            ea = [band_entropy(im, band, sigma, scale, bins) for im in gray_a]
            eb = [band_entropy(im, band, sigma, scale, bins) for im in gray_b]
            edges = pooled_edges(ea, eb, hist_bins)
            da = entropy_distribution(ea, edges, f"{band}_{labels[0]}@{scale:g}")
            db = entropy_distribution(eb, edges, f"{band}_{labels[1]}@{scale:g}")
            rows.append(ReportRow(band, scale, js_divergence(da, db), float(np.mean(ea)),
                                  float(np.mean(eb)), len(ea), da, db))
    return rows


def load_corpus_pair(dir_a: str | Path, dir_b: str | Path) -> tuple[list[np.ndarray], list[np.ndarray]]:
    pairs = pair_files(dir_a, dir_b)
    return [read_image(a) for a, _ in pairs], [read_image(b) for _, b in pairs]


REPORT_COLUMNS = ["band", "scale", "js_bits", "mean_entropy_a", "mean_entropy_b", "n_images"]


def write_report(rows: Sequence[ReportRow], out_csv: str | Path, histograms: bool = True) -> list[Path]:
    """Write the summary CSV and, next to it, one histogram CSV per (band, scale)."""
    out_csv = Path(out_csv)
    out_csv.parent.mkdir(parents=True, exist_ok=True)
    written = [out_csv]
    with out_csv.open("w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(REPORT_COLUMNS)
        for r in rows:
            wr.writerow([r.band, f"{r.scale:g}", f"{r.js_bits:.6f}", f"{r.mean_entropy_a:.6f}",
                         f"{r.mean_entropy_b:.6f}", r.n_images])
    if histograms:
        for r in rows:
            side = out_csv.with_name(f"{out_csv.stem}_hist_{r.band}_{r.scale:g}.csv")
            with side.open("w", newline="") as fh:
                wr = csv.writer(fh)
                wr.writerow(["bin_lo", "bin_hi", "p_a", "p_b"])
                e = r.dist_a.edges
                for i in range(len(e) - 1):
                    wr.writerow([f"{e[i]:.6f}", f"{e[i + 1]:.6f}", f"{r.dist_a.hist[i]:.6f}", f"{r.dist_b.hist[i]:.6f}"])
            written.append(side)
    return written
