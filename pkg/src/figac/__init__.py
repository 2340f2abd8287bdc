"""Fracture-interactive geodesic active contours for bone CT slices."""

from .edges import EdgeSet, NoStoppingSetError, PromptSet, canny, distance_factor, \
    embed_prompts, filter_bone_edges, rasterize_prompts
from .grid import CtSlice, Kernel, ScalarField, convolve, gaussian_smooth, gradient, \
    gradient_norm, read_image, read_mask_image, write_gray_image, write_hu_image, \
    write_image, write_mask_image
from .knowledge import BoneWindowSpec, EdgeDetectorParams, GraySeparation, \
    bone_edge_detector, bone_gray_min, check_detector_params, check_gray_separation, \
    classical_edge_detector, soft_tissue_gray_max, window_gray, window_slice
from .levelset import ContourVanishedError, EvolutionParams, EvolutionState, \
    box_signed_distance, contour_energy, curvature_divergence, evolve, extract_contour, \
    extract_mask, mask_contour, reinitialize, smoothed_delta, smoothed_heaviside, \
    step_classical, step_figac
from .metrics import assd, boundary, dice, evaluate, hausdorff, jaccard
from .pipeline import Phantom, PipelineConfig, PipelineStageError, PlateauConfig, \
    PostprocessConfig, SegmentationResult, StoppingFields, auto_init_box, \
    bridge_narrow_gaps, compute_fields, fill_inner_holes, make_phantom, run

__version__ = "0.1.0"
