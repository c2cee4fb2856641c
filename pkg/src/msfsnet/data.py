"""Paired blurry/sharp datasets: directory ingestion, synthetic generation, batching."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .analysis import gaussian_blur
from .errors import ContractError, IngestError
from .images import pair_files, read_image, write_image

SIZE_MULTIPLE = 4


@dataclass
class PairedDataset:
    blurry: list[np.ndarray]
    sharp: list[np.ndarray]
    names: list[str] = field(default_factory=list)

    def __post_init__(self):
        if len(self.blurry) != len(self.sharp):
            raise IngestError("blurry and sharp lists differ in length")
        if not self.names:
            self.names = [f"{i:05d}" for i in range(len(self.blurry))]

    def __len__(self) -> int:
        return len(self.blurry)


def ingest_pairs(blurry_dir: str | Path, sharp_dir: str | Path) -> PairedDataset:
    blurry, sharp, names = [], [], []
    for pb, ps in pair_files(blurry_dir, sharp_dir):
        b, s = read_image(pb), read_image(ps)
        for path, img in ((pb, b), (ps, s)):
            h, w = img.shape[1:]
            if h % SIZE_MULTIPLE or w % SIZE_MULTIPLE:
                raise IngestError(f"{path}: size {h}x{w} is not divisible by {SIZE_MULTIPLE}")
        if b.shape != s.shape:
            raise IngestError(f"{pb.name}: blurry {b.shape} and sharp {s.shape} differ in shape")
        blurry.append(b)
        sharp.append(s)
        names.append(pb.name)
    return PairedDataset(blurry, sharp, names)


def _synth_sharp(rng: np.random.Generator, size: int, channels: int) -> np.ndarray:
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64) / size
    ang = rng.uniform(0, 2 * np.pi)
    ramp = np.cos(ang) * xx + np.sin(ang) * yy
    c0, c1 = rng.uniform(0.1, 0.9, (2, channels))
    img = c0[:, None, None] + (c1 - c0)[:, None, None] * ramp[None]
    for _ in range(rng.integers(3, 9)):
        y0, x0 = rng.integers(0, size, 2)
        hh, ww = rng.integers(size // 8, size // 2 + 1, 2)
        img[:, y0 : y0 + hh, x0 : x0 + ww] = rng.uniform(0, 1, channels)[:, None, None]
    for _ in range(rng.integers(1, 4)):
        # straight edges: half-plane fills
        a = rng.uniform(0, 2 * np.pi)
        off = rng.uniform(-0.3, 0.3)
        mask = (np.cos(a) * (xx - 0.5) + np.sin(a) * (yy - 0.5)) > off
        img[:, mask] = 0.5 * img[:, mask] + 0.5 * rng.uniform(0, 1, channels)[:, None]
    if rng.random() < 0.5:
        # fine stripes inside one patch
        y0, x0 = rng.integers(0, size - size // 4, 2)
        period = int(rng.integers(2, 6))
        patch = ((np.arange(size // 4)[:, None] + np.arange(size // 4)[None]) // period) % 2
        img[:, y0 : y0 + size // 4, x0 : x0 + size // 4] += 0.3 * (patch - 0.5)
    return np.clip(img, 0, 1)


def synth_corpus(n: int, size: int, seed: int = 0, channels: int = 3,
                 sigma_range: tuple[float, float] = (1.0, 3.0)) -> PairedDataset:
    """Procedural sharp images and Gaussian-blurred partners; deterministic in ``seed``."""
    if size % SIZE_MULTIPLE or size <= 0:
        raise ContractError(f"size must be a positive multiple of {SIZE_MULTIPLE}, got {size}")
    if n < 1:
        raise ContractError("n must be >= 1")
    rng = np.random.default_rng(seed)
    blurry, sharp = [], []
    for _ in range(n):
        s = _synth_sharp(rng, size, channels)
        sigma = rng.uniform(*sigma_range)
        b = np.clip(gaussian_blur(s, sigma), 0, 1)
        # quantise both to 8 bits so written PNGs round-trip exactly
        sharp.append((np.rint(s * 255) / 255).astype(np.float32))
        blurry.append((np.rint(b * 255) / 255).astype(np.float32))
    return PairedDataset(blurry, sharp, [f"{i:05d}.png" for i in range(n)])


def write_dataset(ds: PairedDataset, out_dir: str | Path) -> tuple[Path, Path]:
    out = Path(out_dir)
    bdir, sdir = out / "blurry", out / "sharp"
    for name, b, s in zip(ds.names, ds.blurry, ds.sharp):
        write_image(bdir / name, b)
        write_image(sdir / name, s)
    return bdir, sdir


def sample_batch(ds: PairedDataset, idx, rng: np.random.Generator, crop: int | None,
                 flip: bool) -> tuple[np.ndarray, np.ndarray]:
    """Stack the pairs at ``idx`` with a shared random crop/flip per pair."""
    bs, ss = [], []
    for i in idx:
        b, s = ds.blurry[i], ds.sharp[i]
        h, w = b.shape[1:]
        if crop is not None and crop < min(h, w):
            y0 = int(rng.integers(0, h - crop + 1))
            x0 = int(rng.integers(0, w - crop + 1))
            b = b[:, y0 : y0 + crop, x0 : x0 + crop]
            s = s[:, y0 : y0 + crop, x0 : x0 + crop]
        if flip and rng.random() < 0.5:
            b, s = b[:, :, ::-1], s[:, :, ::-1]
        bs.append(b)
        ss.append(s)
    if len({x.shape for x in bs}) > 1:
        raise IngestError("images in a batch differ in size; set a crop size")
    return np.ascontiguousarray(np.stack(bs)), np.ascontiguousarray(np.stack(ss))
