"""Image file IO and directory pairing. Images are float arrays in [0, 1], shape (c, h, w)."""

from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

from .errors import IngestError

IMAGE_SUFFIXES = {".png", ".ppm", ".pgm", ".pnm"}


def read_image(path: str | Path) -> np.ndarray:
    path = Path(path)
    try:
        with Image.open(path) as im:
            if im.mode not in ("L", "RGB"):
                im = im.convert("RGB")
            arr = np.asarray(im, dtype=np.uint8)
    except (UnidentifiedImageError, OSError, ValueError) as exc:
        raise IngestError(f"{path}: cannot decode image ({exc})") from exc
    if arr.ndim == 2:
        arr = arr[None]
    else:
        arr = arr.transpose(2, 0, 1)
    return arr.astype(np.float32) / np.float32(255.0)


def write_image(path: str | Path, img: np.ndarray) -> None:
    """Write a (c, h, w) float image, clipped to [0, 1] and rounded to 8 bits."""
    path = Path(path)
    arr = np.clip(np.rint(np.asarray(img, dtype=np.float64) * 255.0), 0, 255).astype(np.uint8)
    if arr.ndim == 3:
        arr = arr[0] if arr.shape[0] == 1 else arr.transpose(1, 2, 0)
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(arr).save(path)


def list_images(directory: str | Path) -> list[Path]:
    d = Path(directory)
    if not d.is_dir():
        raise IngestError(f"{d}: not a directory")
    return sorted(p for p in d.iterdir() if p.is_file() and p.suffix.lower() in IMAGE_SUFFIXES)


def pair_files(dir_a: str | Path, dir_b: str | Path) -> list[tuple[Path, Path]]:
    """Match files by name; any file without a partner is an error."""
    a = {p.name: p for p in list_images(dir_a)}
    b = {p.name: p for p in list_images(dir_b)}
    only_a = sorted(set(a) - set(b))
    only_b = sorted(set(b) - set(a))
    if only_a or only_b:
        parts = []
        if only_a:
            parts.append(f"only in {dir_a}: {', '.join(only_a)}")
        if only_b:
            parts.append(f"only in {dir_b}: {', '.join(only_b)}")
        raise IngestError("unpaired files; " + "; ".join(parts))
    if not a:
        raise IngestError(f"no images found in {dir_a}")
    return [(a[name], b[name]) for name in sorted(a)]
