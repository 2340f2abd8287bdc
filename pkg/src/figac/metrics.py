"""Overlap and boundary-distance metrics between binary masks.

Dice and Jaccard are reported in percent.  Boundary metrics operate on
the sets of mask pixels that touch the background through a 4-neighbor
(pixels beyond the frame count as background); distances are Euclidean
in pixels.
"""
from __future__ import annotations

import numpy as np
from scipy.spatial import cKDTree


def _as_mask(m) -> np.ndarray:
    m = np.asarray(m, dtype=bool)
    if m.ndim != 2:
        raise ValueError(f"mask must be 2-D, got shape {m.shape}")
    return m


def _check_pair(a, b):
    a, b = _as_mask(a), _as_mask(b)
    if a.shape != b.shape:
        raise ValueError(f"mask shapes differ: {a.shape} vs {b.shape}")
    return a, b


def dice(truth, pred) -> float:
    """Dice overlap in percent; two empty masks count as full agreement."""
    truth, pred = _check_pair(truth, pred)
    denom = truth.sum() + pred.sum()
    if denom == 0:
        return 100.0
    return 100.0 * 2.0 * np.logical_and(truth, pred).sum() / denom


def jaccard(truth, pred) -> float:
    """Intersection over union in percent; empty vs empty is 100."""
    truth, pred = _check_pair(truth, pred)
    union = np.logical_or(truth, pred).sum()
    if union == 0:
        return 100.0
    return 100.0 * np.logical_and(truth, pred).sum() / union


def boundary(mask) -> np.ndarray:
    """Mask pixels with at least one non-mask 4-neighbor."""
    m = _as_mask(mask)
    padded = np.pad(m, 1, mode="constant", constant_values=False)
    interior = (padded[:-2, 1:-1] & padded[2:, 1:-1]
                & padded[1:-1, :-2] & padded[1:-1, 2:])
    return m & ~interior


def _boundary_points(mask) -> np.ndarray:
    rr, cc = np.nonzero(boundary(mask))
    return np.column_stack([rr, cc]).astype(np.float64)


def _boundary_pair(truth, pred):
    pa, pb = _boundary_points(truth), _boundary_points(pred)
    if len(pa) == 0 or len(pb) == 0:
        raise ValueError("undefined boundary metric: empty mask")
    return pa, pb


def hausdorff(truth, pred) -> float:
    """Symmetric Hausdorff distance between mask boundaries, in pixels."""
    truth, pred = _check_pair(truth, pred)
    pa, pb = _boundary_pair(truth, pred)
    d_ab, _ = cKDTree(pb).query(pa)
    d_ba, _ = cKDTree(pa).query(pb)
    return float(max(d_ab.max(), d_ba.max()))


def assd(truth, pred) -> float:
    """Average symmetric surface distance between boundaries, in pixels."""
    truth, pred = _check_pair(truth, pred)
    pa, pb = _boundary_pair(truth, pred)
    d_ab, _ = cKDTree(pb).query(pa)
    d_ba, _ = cKDTree(pa).query(pb)
    return float((d_ab.sum() + d_ba.sum()) / (len(pa) + len(pb)))


def evaluate(truth, pred) -> dict:
    """All four metrics as a flat dict."""
    return {
        "dice": dice(truth, pred),
        "jaccard": jaccard(truth, pred),
        "hausdorff": hausdorff(truth, pred),
        "assd": assd(truth, pred),
    }
