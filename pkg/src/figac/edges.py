"""Bone edge extraction, prompt embedding, and the distance factor.

Canny gives candidate edges; a region-of-interest test and a local
brightness test keep only edges that belong to bone.  Operator strokes
are rasterized into the same set.  The normalized exact Euclidean
distance to the combined set becomes a per-pixel factor that freezes
the level-set update on the set itself and slows it nearby.
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage as ndi

from .grid import Kernel, ScalarField, convolve, gaussian_smooth

logger = logging.getLogger(__name__)

EIGHT_CONNECTED = np.ones((3, 3), dtype=bool)


class NoStoppingSetError(ValueError):
    """Raised when no bone edges and no prompts remain to stop the contour."""


@dataclass(frozen=True)
class EdgeSet:
    """Boolean raster of edge pixels."""

    mask: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.mask, dtype=bool).copy()
        if m.ndim != 2:
            raise ValueError(f"edge mask must be 2-D, got shape {m.shape}")
        m.setflags(write=False)
        object.__setattr__(self, "mask", m)

    @property
    def count(self) -> int:
        return int(self.mask.sum())


@dataclass(frozen=True)
class PromptSet:
    """Operator strokes, each an ordered list of (row, col) vertices."""

    strokes: tuple = field(default_factory=tuple)

    def __post_init__(self):
        clean = []
        for i, stroke in enumerate(self.strokes):
            pts = tuple((float(r), float(c)) for r, c in stroke)
            if len(pts) < 1:
                raise ValueError(f"stroke {i} is empty")
            clean.append(pts)
        object.__setattr__(self, "strokes", tuple(clean))

    def __len__(self) -> int:
        return len(self.strokes)

    def to_json(self) -> str:
        return json.dumps({"strokes": [[[r, c] for r, c in s] for s in self.strokes]})

    @staticmethod
    def from_json(text: str) -> "PromptSet":
        doc = json.loads(text)
        if not isinstance(doc, dict) or "strokes" not in doc:
            raise ValueError('prompt document must be {"strokes": [...]}')
        return PromptSet(tuple(tuple(tuple(p) for p in s) for s in doc["strokes"]))


def _nms(mag: np.ndarray, gx: np.ndarray, gy: np.ndarray) -> np.ndarray:
    """Non-maximum suppression with 4-way quantized gradient directions.

    A pixel survives if its magnitude strictly exceeds the neighbor
    behind it and at least matches the neighbor ahead of it along the
    quantized gradient; the asymmetric tie-break keeps plateau ridges
    one pixel wide.
    """
    angle = np.mod(np.degrees(np.arctan2(gy, gx)), 180.0)
    sector = np.zeros(mag.shape, dtype=np.int8)
    sector[(angle >= 22.5) & (angle < 67.5)] = 1
    sector[(angle >= 67.5) & (angle < 112.5)] = 2
    sector[(angle >= 112.5) & (angle < 157.5)] = 3

    padded = np.pad(mag, 1, mode="constant")
    # Offsets (dr, dc) of the forward neighbor per sector; rows grow downward.
    offsets = {0: (0, 1), 1: (1, 1), 2: (1, 0), 3: (1, -1)}
    ahead = np.empty_like(mag)
    behind = np.empty_like(mag)
    h, w = mag.shape
    for s, (dr, dc) in offsets.items():
        sel = sector == s
        ahead[sel] = padded[1 + dr:1 + dr + h, 1 + dc:1 + dc + w][sel]
        behind[sel] = padded[1 - dr:1 - dr + h, 1 - dc:1 - dc + w][sel]
    return (mag >= ahead) & (mag > behind) & (mag > 0)


def canny(image: ScalarField, low: float = 0.2, high: float = 0.8) -> EdgeSet:
    """Canny edge detection with thresholds relative to the peak response.

    Stages: 5x5 sigma=1 Gaussian smoothing, Sobel gradients, non-maximum
    suppression along 4-way quantized directions, then hysteresis with
    8-connectivity.  low and high are fractions of the maximum magnitude
    surviving suppression.

    Args:
        image: gray raster, typically windowed CT in [0, 255].
        low: weak-edge threshold fraction in [0, 1].
        high: strong-edge threshold fraction in [0, 1], >= low.

    Returns:
        EdgeSet of one-pixel-wide edges.
    """
    if not (0.0 <= low < high <= 1.0):
        raise ValueError(f"need 0 <= low < high <= 1, got low={low} high={high}")
    sm = gaussian_smooth(image, size=5, sigma=1.0).values
    gx = ndi.sobel(sm, axis=1, mode="nearest")
    gy = ndi.sobel(sm, axis=0, mode="nearest")
    mag = np.hypot(gx, gy)
    peak = mag.max()
    if peak == 0.0:
        return EdgeSet(np.zeros(image.shape, dtype=bool))

    thin = np.where(_nms(mag, gx, gy), mag, 0.0)
    peak = thin.max()
    if peak == 0.0:
        return EdgeSet(np.zeros(image.shape, dtype=bool))
    weak = thin >= low * peak
    strong = thin >= high * peak
    labels, _ = ndi.label(weak, structure=EIGHT_CONNECTED)
    keep = np.unique(labels[strong])
    return EdgeSet(weak & np.isin(labels, keep[keep > 0]))


def filter_bone_edges(all_edges: EdgeSet, image: ScalarField, roi: np.ndarray,
                      kernel: Kernel | None = None, eta: float = 70.0) -> EdgeSet:
    """Keep edges inside the ROI whose local mean brightness reaches eta.

    The local mean is the image convolved with an averaging kernel
    (3x3 by default); soft-tissue edges fail the brightness test, edges
    outside the frozen initial-contour region fail the ROI test.
    """
    kernel = kernel or Kernel.average(3)
    roi = np.asarray(roi, dtype=bool)
    if roi.shape != all_edges.mask.shape or image.shape != all_edges.mask.shape:
        raise ValueError("edge mask, image and ROI shapes must agree")
    local_mean = convolve(image, kernel).values
    return EdgeSet(all_edges.mask & roi & (local_mean >= eta))


def _bresenham(r0: int, c0: int, r1: int, c1: int):
    """Integer line rasterization; yields an 8-connected pixel chain."""
    dr, dc = abs(r1 - r0), abs(c1 - c0)
    sr = 1 if r1 >= r0 else -1
    sc = 1 if c1 >= c0 else -1
    err = dc - dr
    r, c = r0, c0
    while True:
        yield r, c
        if r == r1 and c == c1:
            return
        e2 = 2 * err
        if e2 > -dr:
            err -= dr
            c += sc
        if e2 < dc:
            err += dc
            r += sr


def rasterize_prompts(prompts: PromptSet, shape: tuple) -> np.ndarray:
    """Boolean raster of all stroke pixels; bounds-checked per stroke."""
    out = np.zeros(shape, dtype=bool)
    h, w = shape
    for i, stroke in enumerate(prompts.strokes):
        pts = [(int(round(r)), int(round(c))) for r, c in stroke]
        for r, c in pts:
            if not (0 <= r < h and 0 <= c < w):
                raise ValueError(f"stroke {i} leaves the image: ({r}, {c})")
        if len(pts) == 1:
            out[pts[0]] = True
        for (r0, c0), (r1, c1) in zip(pts[:-1], pts[1:]):
            for r, c in _bresenham(r0, c0, r1, c1):
                out[r, c] = True
    return out


def embed_prompts(bone_edges: EdgeSet, prompts: PromptSet) -> EdgeSet:
    """Union the rasterized strokes into the stopping set."""
    if len(prompts) == 0:
        return bone_edges
    return EdgeSet(bone_edges.mask | rasterize_prompts(prompts, bone_edges.mask.shape))


def distance_factor(edges: EdgeSet) -> ScalarField:
    """Normalized exact Euclidean distance to the stopping set.

    Zero exactly on the set, 1 at the farthest pixel.  The factor
    multiplies the level-set update pointwise, so anisotropy here would
    bias the evolution; the transform is exact, not a chamfer sweep.
    """
    if edges.count == 0:
        raise NoStoppingSetError("no stopping set: no bone edges and no prompts")
    dist = ndi.distance_transform_edt(~edges.mask)
    peak = dist.max()
    if peak == 0.0:  # every pixel is an edge
        logger.warning("stopping set covers the whole grid; factor is identically 0")
        return ScalarField(np.zeros(edges.mask.shape))
    return ScalarField(dist / peak)
