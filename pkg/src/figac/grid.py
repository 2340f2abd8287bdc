"""Pixel-grid containers and finite-difference primitives.

Everything downstream (windowing, edge detection, level-set evolution)
operates on these types.  Fields are immutable float64 rasters indexed
(row, col); derivatives use central differences in the interior and
one-sided differences on the boundary; convolutions replicate the edge
pixel outside the frame.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image
from scipy import ndimage as ndi

HU_MIN = -32768.0
HU_MAX = 32767.0


def _as_readonly(a: np.ndarray) -> np.ndarray:
    out = np.asarray(a, dtype=np.float64).copy()
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class ScalarField:
    """One real value per pixel, indexed (row, col)."""

    values: np.ndarray

    def __post_init__(self):
        v = _as_readonly(self.values)
        if v.ndim != 2:
            raise ValueError(f"field must be 2-D, got shape {v.shape}")
        if v.shape[0] < 3 or v.shape[1] < 3:
            raise ValueError(f"field must be at least 3x3, got {v.shape}")
        if not np.all(np.isfinite(v)):
            raise ValueError("field contains non-finite values")
        object.__setattr__(self, "values", v)

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def shape(self) -> tuple:
        return self.values.shape


@dataclass(frozen=True)
class CtSlice:
    """A CT slice in Hounsfield units, clamped to the representable range."""

    hu: ScalarField
    pixel_spacing: float = 1.0

    def __post_init__(self):
        if self.pixel_spacing <= 0:
            raise ValueError("pixel_spacing must be positive")
        clamped = np.clip(self.hu.values, HU_MIN, HU_MAX)
        object.__setattr__(self, "hu", ScalarField(clamped))


@dataclass(frozen=True)
class Kernel:
    """Small odd-sized convolution stencil."""

    weights: np.ndarray

    def __post_init__(self):
        w = _as_readonly(self.weights)
        if w.ndim != 2 or w.shape[0] != w.shape[1]:
            raise ValueError(f"kernel must be square, got shape {w.shape}")
        if w.shape[0] % 2 == 0:
            raise ValueError(f"kernel size must be odd, got {w.shape[0]}")
        object.__setattr__(self, "weights", w)

    @property
    def size(self) -> int:
        return self.weights.shape[0]

    @staticmethod
    def average(size: int = 3) -> "Kernel":
        """Uniform averaging kernel; weights sum to 1."""
        if size < 1 or size % 2 == 0:
            raise ValueError(f"average kernel size must be odd and positive, got {size}")
        return Kernel(np.full((size, size), 1.0 / (size * size)))

    @staticmethod
    def gaussian(size: int, sigma: float) -> "Kernel":
        """Truncated sampled Gaussian, normalized to sum 1."""
        if size < 1 or size % 2 == 0:
            raise ValueError(f"gaussian kernel size must be odd and positive, got {size}")
        if sigma <= 0:
            raise ValueError(f"gaussian sigma must be positive, got {sigma}")
        half = size // 2
        ax = np.arange(-half, half + 1, dtype=np.float64)
        xx, yy = np.meshgrid(ax, ax)
        w = np.exp(-(xx**2 + yy**2) / (2.0 * sigma**2))
        return Kernel(w / w.sum())


def gradient(f: ScalarField) -> tuple:
    """Per-pixel spatial gradient (gx, gy).

    gx is the derivative along columns, gy along rows.  Central
    differences in the interior, one-sided at the frame.
    """
    gy, gx = np.gradient(f.values)
    return ScalarField(gx), ScalarField(gy)


def gradient_norm(f: ScalarField) -> ScalarField:
    gx, gy = gradient(f)
    return ScalarField(np.hypot(gx.values, gy.values))


def convolve(f: ScalarField, kernel: Kernel) -> ScalarField:
    """2-D convolution with replicate (nearest-pixel) boundary handling."""
    return ScalarField(ndi.convolve(f.values, kernel.weights, mode="nearest"))


def gaussian_smooth(f: ScalarField, size: int = 9, sigma: float = 1.5) -> ScalarField:
    """Convolve with a normalized truncated Gaussian."""
    return convolve(f, Kernel.gaussian(size, sigma))


# ---------------------------------------------------------------------------
# Raster I/O.  8-bit PNGs carry already-windowed gray values; 16-bit PNGs
# carry shifted Hounsfield units with the shift declared in a JSON sidecar
# next to the image ({"hu_offset": -1024}).
# ---------------------------------------------------------------------------

def read_image(path):
    """Load a PNG as CtSlice (16-bit + sidecar) or ScalarField (8-bit)."""
    path = Path(path)
    img = Image.open(path)
    arr = np.asarray(img)
    if arr.ndim == 3:  # RGB(A): accept grayscale content only
        if not (arr[..., :3] == arr[..., :1]).all():
            raise ValueError(f"{path}: color PNG is not a grayscale raster")
        arr = arr[..., 0]
    if arr.dtype == np.uint8:
        return ScalarField(arr.astype(np.float64))
    sidecar = path.with_suffix(".json")
    offset = -1024.0
    if sidecar.exists():
        meta = json.loads(sidecar.read_text())
        offset = float(meta.get("hu_offset", offset))
    return CtSlice(ScalarField(arr.astype(np.float64) + offset))


def write_image(field: ScalarField, path) -> None:
    """Save as 8-bit PNG, linearly rescaling min..max to 0..255."""
    v = field.values
    lo, hi = float(v.min()), float(v.max())
    scaled = np.zeros_like(v) if hi == lo else (v - lo) * (255.0 / (hi - lo))
    Image.fromarray(np.round(scaled).astype(np.uint8)).save(Path(path))


def write_gray_image(field: ScalarField, path) -> None:
    """Save values already in [0, 255] as 8-bit PNG without rescaling."""
    v = field.values
    if v.min() < 0.0 or v.max() > 255.0:
        raise ValueError(f"gray values outside [0, 255]: {v.min()}..{v.max()}")
    Image.fromarray(np.round(v).astype(np.uint8)).save(Path(path))


def write_hu_image(ct: CtSlice, path, hu_offset: float = -1024.0) -> None:
    """Save HU as 16-bit PNG plus the sidecar declaring the offset."""
    path = Path(path)
    stored = np.clip(ct.hu.values - hu_offset, 0, 65535)
    Image.fromarray(np.round(stored).astype(np.uint16)).save(path)
    path.with_suffix(".json").write_text(json.dumps({"hu_offset": hu_offset}))


def write_mask_image(mask: np.ndarray, path) -> None:
    """Save a boolean mask as an 8-bit 0/255 PNG."""
    Image.fromarray(np.where(np.asarray(mask, dtype=bool), 255, 0).astype(np.uint8)).save(Path(path))


def read_mask_image(path) -> np.ndarray:
    arr = np.asarray(Image.open(Path(path)).convert("L"))
    return arr >= 128
