"""Image preprocessing: grayscale conversion, cropping, downsampling, patch
normalization, and frame-directory I/O.

Templates are plain float64 arrays of shape ``(ry, rx)``; a stack of frames is
``(n_frames, ry, rx)``. A template's source frame is identified by its
position in whatever sequence carries it.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

# ITU Rec 709 luma weights for 8-bit RGB.
_LUMA_R, _LUMA_G, _LUMA_B = 0.2989, 0.5870, 0.1140

FRAME_SUFFIXES = (".png", ".pgm", ".ppm")


def round_half_up(x):
    """Round to nearest integer with exact .5 going up, elementwise."""
    return np.floor(np.asarray(x, dtype=np.float64) + 0.5)


@dataclass(frozen=True)
class CropRect:
    """Rectangular crop: top-left corner (inclusive) plus size, in pixels."""

    x0: int
    y0: int
    width: int
    height: int

    def __post_init__(self):
        if self.x0 < 0 or self.y0 < 0 or self.width <= 0 or self.height <= 0:
            raise ValueError(f"degenerate crop rectangle {self}")

    @classmethod
    def parse(cls, text: str) -> "CropRect":
        """Parse ``"x0,y0,width,height"``."""
        parts = [p.strip() for p in text.split(",")]
        if len(parts) != 4:
            raise ValueError(f"crop must be 'x0,y0,width,height', got {text!r}")
        return cls(*(int(p) for p in parts))

    def unparse(self) -> str:
        return f"{self.x0},{self.y0},{self.width},{self.height}"


def to_grayscale(img: np.ndarray) -> np.ndarray:
    """Convert an 8-bit image to single-channel grayscale.

    3-channel input is combined as 0.2989 R + 0.5870 G + 0.1140 B, rounded
    half-up and clamped to [0, 255]. Single-channel input passes through
    unchanged.
    """
    img = np.asarray(img)
    if img.ndim == 2:
        return img
    if img.ndim == 3 and img.shape[2] == 1:
        return img[:, :, 0]
    if img.ndim == 3 and img.shape[2] == 3:
        rgb = img.astype(np.float64)
        luma = _LUMA_R * rgb[:, :, 0] + _LUMA_G * rgb[:, :, 1] + _LUMA_B * rgb[:, :, 2]
        return np.clip(round_half_up(luma), 0, 255).astype(np.uint8)
    raise ValueError(f"expected 1 or 3 channels, got image of shape {img.shape}")


def crop(img: np.ndarray, rect: CropRect) -> np.ndarray:
    """Extract ``rect`` from a single-channel image."""
    img = np.asarray(img)
    if img.ndim != 2:
        raise ValueError("crop expects a single-channel image")
    h, w = img.shape
    if rect.x0 + rect.width > w or rect.y0 + rect.height > h:
        raise ValueError(f"crop {rect} exceeds image bounds {w}x{h}")
    return img[rect.y0 : rect.y0 + rect.height, rect.x0 : rect.x0 + rect.width]


def downsample(img: np.ndarray, rx: int, ry: int) -> np.ndarray:
    """Reduce a grayscale image to ``rx`` columns by ``ry`` rows.

    Each output pixel is the area-weighted mean of its source block under a
    uniform partition of the image, rounded half-up. When the source
    dimensions are exact multiples of the target this is a plain block mean.
    Upsampling is rejected.
    """
    img = np.asarray(img)
    if img.ndim != 2:
        raise ValueError("downsample expects a single-channel image")
    h, w = img.shape
    if rx > w or ry > h:
        raise ValueError(f"cannot downsample {w}x{h} image up to {rx}x{ry}")
    if rx <= 0 or ry <= 0:
        raise ValueError("target dimensions must be positive")

    if h % ry == 0 and w % rx == 0:
        # Integer blocks: exact integer sums, one rounding at the division.
        bh, bw = h // ry, w // rx
        blocks = img.reshape(ry, bh, rx, bw).astype(np.int64)
        means = blocks.sum(axis=(1, 3)) / float(bh * bw)
    else:
        wr = _overlap_weights(h, ry)
        wc = _overlap_weights(w, rx)
        means = wr @ img.astype(np.float64) @ wc.T
    return np.clip(round_half_up(means), 0, 255).astype(np.uint8)


def _overlap_weights(src: int, dst: int) -> np.ndarray:
    """(dst, src) matrix of normalized overlap lengths between uniform
    destination cells and unit source pixels."""
    edges = np.arange(dst + 1, dtype=np.float64) * (src / dst)
    pix = np.arange(src, dtype=np.float64)
    lo = np.maximum(edges[:-1, None], pix[None, :])
    hi = np.minimum(edges[1:, None], pix[None, :] + 1.0)
    w = np.clip(hi - lo, 0.0, None)
    return w / (src / dst)


def patch_normalize(img: np.ndarray, patch_size: int) -> np.ndarray:
    """Standardize pixel intensities within non-overlapping square patches.

    Every ``patch_size`` x ``patch_size`` patch is shifted to zero mean and
    scaled to unit population standard deviation; patches with zero variance
    become all zeros. Returns float64 values of the same shape.
    """
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 2:
        raise ValueError("patch_normalize expects a single-channel image")
    h, w = img.shape
    if patch_size < 1:
        raise ValueError("patch size must be >= 1")
    if h % patch_size or w % patch_size:
        raise ValueError(
            f"image dims {w}x{h} not divisible by patch size {patch_size}"
        )
    p = patch_size
    patches = img.reshape(h // p, p, w // p, p).transpose(0, 2, 1, 3)
    mean = patches.mean(axis=(2, 3), keepdims=True)
    centered = patches - mean
    std = np.sqrt((centered**2).mean(axis=(2, 3), keepdims=True))
    # Constant patches are detected on the raw values: population variance is
    # zero exactly when all pixels are equal.
    flat = (patches.max(axis=(2, 3), keepdims=True)
            == patches.min(axis=(2, 3), keepdims=True))
    out = np.where(flat, 0.0, centered / np.where(flat, 1.0, std))
    return out.transpose(0, 2, 1, 3).reshape(h, w)


def preprocess_frame(
    img: np.ndarray,
    rx: int,
    ry: int,
    patch_size: int,
    crop_rect: CropRect | None = None,
) -> np.ndarray:
    """Full pipeline for one raw frame: grayscale, optional crop, downsample,
    patch-normalize."""
    gray = to_grayscale(img)
    if crop_rect is not None:
        gray = crop(gray, crop_rect)
    return patch_normalize(downsample(gray, rx, ry), patch_size)


def _frame_sort_key(path: Path):
    stem = path.stem
    return (0, int(stem), "") if stem.isdigit() else (1, 0, stem)


def list_frame_paths(directory: str | Path) -> list[Path]:
    """Frame files in a directory, ordered by numeric filename stem."""
    directory = Path(directory)
    if not directory.is_dir():
        raise FileNotFoundError(f"frame directory not found: {directory}")
    paths = [
        p
        for p in directory.iterdir()
        if p.is_file() and p.suffix.lower() in FRAME_SUFFIXES
    ]
    return sorted(paths, key=_frame_sort_key)


def load_frame(path: str | Path) -> np.ndarray:
    """Load one image as uint8, shape (h, w) or (h, w, 3)."""
    with Image.open(path) as im:
        if im.mode == "L":
            return np.asarray(im, dtype=np.uint8)
        return np.asarray(im.convert("RGB"), dtype=np.uint8)


def load_frames(directory: str | Path) -> list[np.ndarray]:
    """Load all frames of a directory in frame-ordinal order."""
    paths = list_frame_paths(directory)
    if not paths:
        raise FileNotFoundError(f"no frame files in {directory}")
    return [load_frame(p) for p in paths]


def write_frames(
    directory: str | Path, frames, start_index: int = 0, digits: int = 6
) -> list[Path]:
    """Write grayscale frames as zero-padded PNGs starting at ``start_index``."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    written = []
    for off, frame in enumerate(frames):
        path = directory / f"{start_index + off:0{digits}d}.png"
        Image.fromarray(np.asarray(frame, dtype=np.uint8), mode="L").save(path)
        written.append(path)
    return written
