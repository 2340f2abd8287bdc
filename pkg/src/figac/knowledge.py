"""CT windowing and the domain-knowledge edge detector.

Bone windows map Hounsfield units to display gray.  Given bounds on the
soft-tissue and cortical-bone HU populations and on the practicable
window settings, worst-case gray-level bounds for the two populations
follow in closed form; when the populations separate in gray, an edge
detector built from the gray value itself (not only its gradient) can
tell bone boundaries from soft-tissue boundaries.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .grid import CtSlice, ScalarField, gaussian_smooth, gradient_norm


def window_gray(z, width, level):
    """Map HU to display gray under a window of given width and level.

    Saturates at 0 below the window and 255 above; linear in between
    with slope 255/width, hitting 127.5 at the window level.
    """
    if width <= 0:
        raise ValueError(f"window width must be positive, got {width}")
    z = np.asarray(z, dtype=np.float64)
    out = np.clip((255.0 / width) * (z - level) + 127.5, 0.0, 255.0)
    return float(out) if out.ndim == 0 else out


def window_slice(ct: CtSlice, width: float, level: float) -> ScalarField:
    """Window a CT slice to a gray raster in [0, 255]."""
    return ScalarField(window_gray(ct.hu.values, width, level))


@dataclass(frozen=True)
class BoneWindowSpec:
    """Bounds on window settings and tissue intensities.

    width_min/width_max and level_min/level_max delimit the window
    settings considered practicable for bone reading; soft_tissue_max
    is the largest HU soft tissue reaches, bone_min the smallest HU
    cortical bone reaches.
    """

    width_min: float = 1000.0
    width_max: float = 1500.0
    level_min: float = 250.0
    level_max: float = 350.0
    soft_tissue_max: float = 100.0
    bone_min: float = 300.0

    def __post_init__(self):
        if not (0 < self.width_min <= self.width_max):
            raise ValueError("window widths must satisfy 0 < width_min <= width_max")
        if self.level_min > self.level_max:
            raise ValueError("window levels must satisfy level_min <= level_max")
        if self.soft_tissue_max > self.level_min:
            raise ValueError("soft_tissue_max must not exceed level_min")

    def contains(self, width: float, level: float) -> bool:
        return (self.width_min <= width <= self.width_max
                and self.level_min <= level <= self.level_max)


def soft_tissue_gray_max(spec: BoneWindowSpec) -> float:
    """Largest gray any soft-tissue pixel can reach over allowed windows.

    The windowing map increases in HU and the linear branch steepens as
    the width shrinks and the level drops, so the worst case sits at
    z = soft_tissue_max, width = width_max, level = level_min.
    """
    return window_gray(spec.soft_tissue_max, spec.width_max, spec.level_min)


def bone_gray_min(spec: BoneWindowSpec) -> float:
    """Smallest gray any cortical-bone pixel can reach over allowed windows.

    The minimizing window depends on which side of the level the bone
    bound falls: at or above level_max the wide window is worst, below
    it the narrow window is.
    """
    if spec.bone_min >= spec.level_max:
        return window_gray(spec.bone_min, spec.width_max, spec.level_max)
    return window_gray(spec.bone_min, spec.width_min, spec.level_max)


class GraySeparation(NamedTuple):
    separated: bool
    soft_max: float
    bone_min: float


def check_gray_separation(spec: BoneWindowSpec) -> GraySeparation:
    """Whether bone gray always exceeds soft-tissue gray under the spec.

    Separation holds exactly when bone_min >= level_max or when
    (soft_tissue_max - level_min)/width_max <= (bone_min - level_max)/width_min.
    """
    t1 = soft_tissue_gray_max(spec)
    t2 = bone_gray_min(spec)
    ok = (spec.bone_min >= spec.level_max
          or ((spec.soft_tissue_max - spec.level_min) / spec.width_max
              <= (spec.bone_min - spec.level_max) / spec.width_min))
    return GraySeparation(ok, t1, t2)


@dataclass(frozen=True)
class EdgeDetectorParams:
    """Parameters of the intensity-aware edge detector.

    gray_knee should sit between the worst-case soft-tissue and bone
    grays of the active BoneWindowSpec, grad_knee within their gap; the
    defaults match a 1000-1500 HU / 250-350 HU bone-window regime.
    """

    gray_knee: float = 102.0
    grad_knee: float = 13.0
    gray_power: float = 1.0
    grad_power: float = 2.0
    gamma: float = 1.0

    def __post_init__(self):
        if self.grad_knee < 0:
            raise ValueError("grad_knee must be non-negative")
        if self.gray_power <= 0 or self.grad_power <= 0:
            raise ValueError("detector powers must be positive")
        if self.gamma <= 0:
            raise ValueError("gamma must be positive")


def check_detector_params(params: EdgeDetectorParams, spec: BoneWindowSpec) -> None:
    """Validate detector knees against the gray bounds the spec implies.

    Bounds are compared on rounded gray levels; display gray is 8-bit,
    so half-gray slack in the analytic bounds is presentation only.
    """
    t1 = round(soft_tissue_gray_max(spec))
    t2 = round(bone_gray_min(spec))
    if not (t1 <= params.gray_knee <= t2):
        raise ValueError(f"gray_knee {params.gray_knee} outside [{t1}, {t2}]")
    if not (0 <= params.grad_knee <= t2 - t1):
        raise ValueError(f"grad_knee {params.grad_knee} outside [0, {t2 - t1}]")


def classical_edge_detector(image: ScalarField, presmooth: bool = True,
                            smooth_size: int = 9, smooth_sigma: float = 1.5) -> ScalarField:
    """Gradient-only stopping function 1/(1 + |grad I|^2)."""
    sm = gaussian_smooth(image, smooth_size, smooth_sigma) if presmooth else image
    gn = gradient_norm(sm).values
    return ScalarField(1.0 / (1.0 + gn**2))


def bone_edge_detector(image: ScalarField,
                       params: EdgeDetectorParams = EdgeDetectorParams()) -> ScalarField:
    """Intensity-aware stopping function for windowed CT.

    g = 1/(1 + relu(I - gray_knee)^gray_power)
      + gamma/(1 + relu(|grad I|- grad_knee)^grad_power)

    Both terms stay near their maxima on soft tissue, so soft-tissue
    edges do not stall the contour; only pixels that are simultaneously
    bright and steep drive g toward 0.  Values lie in (0, 1 + gamma].
    The gradient is taken on the raw windowed image, no pre-smoothing.
    """
    f1 = np.maximum(image.values - params.gray_knee, 0.0) ** params.gray_power
    gn = gradient_norm(image).values
    f2 = np.maximum(gn - params.grad_knee, 0.0) ** params.grad_power
    return ScalarField(1.0 / (1.0 + f1) + params.gamma / (1.0 + f2))
