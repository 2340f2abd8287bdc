"""End-to-end segmentation pipeline and synthetic bone phantoms.

A run windows the slice, places the initial contour, derives the
stopping fields (edge detector, bone-filtered Canny set with prompts,
distance factor), evolves the level set, and post-processes the mask.
Every stage failure surfaces with the stage name attached.
"""
from __future__ import annotations

import json
import logging
import time
from contextlib import contextmanager
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import ndimage as ndi

from .edges import EdgeSet, PromptSet, canny, distance_factor, embed_prompts, filter_bone_edges
from .grid import CtSlice, Kernel, ScalarField
from .knowledge import (BoneWindowSpec, EdgeDetectorParams, bone_edge_detector,
                        bone_gray_min, classical_edge_detector, window_slice)
from .levelset import (EvolutionParams, EvolutionState, box_signed_distance,
                       evolve, extract_contour, extract_mask, mask_contour)

logger = logging.getLogger(__name__)


class PipelineStageError(RuntimeError):
    """A pipeline stage failed; carries the stage label and the cause."""

    def __init__(self, stage: str, cause: Exception):
        super().__init__(f"stage '{stage}': {cause}")
        self.stage = stage
        self.cause = cause


@contextmanager
def _stage(name: str, timings: dict):
    t0 = time.perf_counter()
    try:
        yield
    except PipelineStageError:
        raise
    except Exception as exc:
        raise PipelineStageError(name, exc) from exc
    finally:
        timings[name] = time.perf_counter() - t0


@dataclass(frozen=True)
class PlateauConfig:
    """Convergence detection: stop once the mask stops changing."""

    enabled: bool = False
    window: int = 200
    threshold: float = 0.0005  # fraction of grid pixels
    check_every: int = 25

    def __post_init__(self):
        if self.window < 1 or self.check_every < 1:
            raise ValueError("plateau window and check_every must be positive")
        if self.window % self.check_every:
            raise ValueError("plateau window must be a multiple of check_every")
        if self.threshold < 0:
            raise ValueError("plateau threshold must be non-negative")


@dataclass(frozen=True)
class PostprocessConfig:
    """Optional monotone mask repairs after evolution."""

    fill_holes: bool = False
    bridge_gaps: bool = False
    gap_seeds: tuple = ()
    gap_tol: float = 20.0
    gap_window: int = 31
    hole_alpha: float = -1.0
    hole_iters: int = 1500

    def __post_init__(self):
        if self.hole_alpha >= 0:
            raise ValueError("hole_alpha must be negative (expansion)")
        if self.gap_tol < 0 or self.gap_window < 3 or self.gap_window % 2 == 0:
            raise ValueError("gap_tol must be >= 0 and gap_window odd and >= 3")
        object.__setattr__(self, "gap_seeds",
                           tuple((int(r), int(c)) for r, c in self.gap_seeds))


@dataclass(frozen=True)
class PipelineConfig:
    """Everything a segmentation run needs, JSON round-trippable."""

    mode: str = "figac"
    window_width: float = 1000.0
    window_level: float = 250.0
    bone_window: BoneWindowSpec = field(default_factory=BoneWindowSpec)
    detector: EdgeDetectorParams = field(default_factory=EdgeDetectorParams)
    canny_low: float = 0.2
    canny_high: float = 0.8
    eta: float = 70.0
    mean_kernel_size: int = 3
    evolution: EvolutionParams = field(default_factory=EvolutionParams)
    init_box: tuple | None = None
    init_threshold: float | None = None  # None: worst-case bone gray of bone_window
    init_margin: int = 5
    prompts: PromptSet = field(default_factory=PromptSet)
    plateau: PlateauConfig = field(default_factory=PlateauConfig)
    postprocess: PostprocessConfig = field(default_factory=PostprocessConfig)
    snapshot_every: int = 0

    def __post_init__(self):
        if self.mode not in ("figac", "classical"):
            raise ValueError(f"mode must be 'figac' or 'classical', got {self.mode!r}")
        if not 0.0 <= self.canny_low < self.canny_high <= 1.0:
            raise ValueError(f"need 0 <= canny_low < canny_high <= 1, got "
                             f"{self.canny_low}/{self.canny_high}")
        if self.window_width <= 0:
            raise ValueError("window_width must be positive")
        if self.mean_kernel_size < 1 or self.mean_kernel_size % 2 == 0:
            raise ValueError("mean_kernel_size must be odd and positive")
        if self.init_box is not None:
            box = tuple(int(v) for v in self.init_box)
            if len(box) != 4:
                raise ValueError("init_box must be (r0, c0, r1, c1)")
            object.__setattr__(self, "init_box", box)
        if self.snapshot_every < 0:
            raise ValueError("snapshot_every must be non-negative")

    def to_dict(self) -> dict:
        return {
            "mode": self.mode,
            "window_width": self.window_width,
            "window_level": self.window_level,
            "bone_window": vars(self.bone_window).copy(),
            "detector": vars(self.detector).copy(),
            "canny_low": self.canny_low,
            "canny_high": self.canny_high,
            "eta": self.eta,
            "mean_kernel_size": self.mean_kernel_size,
            "evolution": vars(self.evolution).copy(),
            "init_box": list(self.init_box) if self.init_box else None,
            "init_threshold": self.init_threshold,
            "init_margin": self.init_margin,
            "prompts": {"strokes": [[[r, c] for r, c in s] for s in self.prompts.strokes]},
            "plateau": vars(self.plateau).copy(),
            "postprocess": {**vars(self.postprocess),
                            "gap_seeds": [list(s) for s in self.postprocess.gap_seeds]},
            "snapshot_every": self.snapshot_every,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    @staticmethod
    def from_dict(doc: dict) -> "PipelineConfig":
        def sub(cls, key):
            got = dict(doc.get(key) or {})
            try:
                return cls(**got)
            except TypeError as exc:
                raise ValueError(f"bad '{key}' config: {exc}") from exc

        known = {"mode", "window_width", "window_level", "bone_window", "detector",
                 "canny_low", "canny_high", "eta", "mean_kernel_size", "evolution",
                 "init_box", "init_threshold", "init_margin", "prompts", "plateau",
                 "postprocess", "snapshot_every"}
        unknown = set(doc) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        defaults = PipelineConfig()
        strokes = (doc.get("prompts") or {}).get("strokes", [])
        return PipelineConfig(
            mode=doc.get("mode", defaults.mode),
            window_width=doc.get("window_width", defaults.window_width),
            window_level=doc.get("window_level", defaults.window_level),
            bone_window=sub(BoneWindowSpec, "bone_window"),
            detector=sub(EdgeDetectorParams, "detector"),
            canny_low=doc.get("canny_low", defaults.canny_low),
            canny_high=doc.get("canny_high", defaults.canny_high),
            eta=doc.get("eta", defaults.eta),
            mean_kernel_size=doc.get("mean_kernel_size", defaults.mean_kernel_size),
            evolution=sub(EvolutionParams, "evolution"),
            init_box=tuple(doc["init_box"]) if doc.get("init_box") else None,
            init_threshold=doc.get("init_threshold"),
            init_margin=doc.get("init_margin", defaults.init_margin),
            prompts=PromptSet(tuple(tuple(tuple(p) for p in s) for s in strokes)),
            plateau=sub(PlateauConfig, "plateau"),
            postprocess=sub(PostprocessConfig, "postprocess"),
            snapshot_every=doc.get("snapshot_every", defaults.snapshot_every),
        )

    @staticmethod
    def from_json(text: str) -> "PipelineConfig":
        return PipelineConfig.from_dict(json.loads(text))


@dataclass(frozen=True)
class StoppingFields:
    """Frozen fields that drive one evolution."""

    g: ScalarField
    beta: ScalarField | None
    all_edges: EdgeSet | None
    bone_edges: EdgeSet | None
    stopping_set: EdgeSet | None


@dataclass
class SegmentationResult:
    mask: np.ndarray
    contour: list
    iterations: int
    convergence_iteration: int | None
    snapshots: list
    diagnostics: dict
    state: EvolutionState
    fields: StoppingFields


def auto_init_box(gray: ScalarField, threshold: float, margin: int = 5) -> tuple:
    """Bounding box of bright pixels, padded and kept inside the frame."""
    rows, cols = np.nonzero(gray.values >= threshold)
    if rows.size == 0:
        raise ValueError(f"no bone-candidate region at or above gray {threshold}")
    h, w = gray.shape
    box = (max(1, int(rows.min()) - margin), max(1, int(cols.min()) - margin),
           min(h - 2, int(rows.max()) + margin), min(w - 2, int(cols.max()) + margin))
    if box[0] >= box[2] or box[1] >= box[3]:
        raise ValueError(f"degenerate initial box {box}")
    return box


def compute_fields(gray: ScalarField, cfg: PipelineConfig, roi: np.ndarray) -> StoppingFields:
    """Edge-detector field plus, in figac mode, the distance factor.

    roi is the region where bone edges are trusted (the initial contour
    interior); it is frozen here and not updated during evolution.
    """
    if cfg.mode == "classical":
        return StoppingFields(g=classical_edge_detector(gray), beta=None,
                              all_edges=None, bone_edges=None, stopping_set=None)
    g = bone_edge_detector(gray, cfg.detector)
    all_edges = canny(gray, cfg.canny_low, cfg.canny_high)
    bone = filter_bone_edges(all_edges, gray, roi,
                             Kernel.average(cfg.mean_kernel_size), cfg.eta)
    stopping = embed_prompts(bone, cfg.prompts)
    return StoppingFields(g=g, beta=distance_factor(stopping), all_edges=all_edges,
                          bone_edges=bone, stopping_set=stopping)


def _plateau_callback(cfg: PlateauConfig, total_pixels: int, out: dict):
    history = {}

    def cb(state: EvolutionState):
        it = state.iteration
        if it % cfg.check_every:
            return True
        mask = state.phi.values <= 0.0
        history[it] = mask
        past = it - cfg.window
        if past in history:
            changed = int(np.count_nonzero(history[past] ^ mask))
            for k in [k for k in history if k <= past]:
                del history[k]
            if changed <= cfg.threshold * total_pixels:
                out["convergence_iteration"] = it
                return False
        return True

    return cb


def run(image, cfg: PipelineConfig | None = None) -> SegmentationResult:
    """Run the full segmentation pipeline on a slice or gray raster.

    Args:
        image: CtSlice (windowed here) or ScalarField already in [0, 255].
        cfg: run configuration, defaults to PipelineConfig().

    Returns:
        SegmentationResult with the final mask, zero-level polylines,
        iteration counts, contour snapshots, per-stage diagnostics and
        the final evolution state (reusable to continue the run).
    """
    cfg = cfg if cfg is not None else PipelineConfig()
    timings: dict = {}
    diagnostics: dict = {"timings": timings}

    with _stage("window", timings):
        gray = window_slice(image, cfg.window_width, cfg.window_level) \
            if isinstance(image, CtSlice) else image
        if not isinstance(gray, ScalarField):
            raise TypeError(f"image must be CtSlice or ScalarField, got {type(image)}")

    with _stage("init", timings):
        threshold = cfg.init_threshold
        if threshold is None:
            threshold = bone_gray_min(cfg.bone_window)
        box = cfg.init_box or auto_init_box(gray, threshold, cfg.init_margin)
        phi0 = box_signed_distance(gray.shape, box)
        diagnostics["init_box"] = list(box)

    with _stage("fields", timings):
        fields = compute_fields(gray, cfg, roi=phi0.values <= 0.0)
        diagnostics["g_range"] = [float(fields.g.values.min()), float(fields.g.values.max())]
        if fields.stopping_set is not None:
            diagnostics["edge_counts"] = {
                "all": fields.all_edges.count,
                "bone": fields.bone_edges.count,
                "stopping": fields.stopping_set.count,
            }

    with _stage("evolve", timings):
        state = EvolutionState(phi=phi0, g=fields.g, params=cfg.evolution, beta=fields.beta)
        snapshots: list = []
        if cfg.snapshot_every > 0:
            snapshots.append((0, extract_contour(phi0)))
        plateau_out: dict = {"convergence_iteration": None}
        callbacks = []
        if cfg.snapshot_every > 0:
            callbacks.append(lambda s: snapshots.append((s.iteration, extract_contour(s.phi)))
                             if s.iteration % cfg.snapshot_every == 0 else None)
        if cfg.plateau.enabled:
            callbacks.append(_plateau_callback(cfg.plateau, phi0.values.size, plateau_out))

        def cb(s):
            keep_going = True
            for f in callbacks:
                if f(s) is False:
                    keep_going = False
            return keep_going

        state = evolve(state, cfg.evolution.n_iters, cb if callbacks else None)
        diagnostics["iterations"] = state.iteration
        diagnostics["convergence_iteration"] = plateau_out["convergence_iteration"]

    with _stage("postprocess", timings):
        mask = extract_mask(state.phi)
        raw_mask = mask
        if cfg.postprocess.fill_holes:
            mask = fill_inner_holes(mask, fields.g, fields.beta, cfg.evolution,
                                    cfg.postprocess.hole_alpha, cfg.postprocess.hole_iters)
        if cfg.postprocess.bridge_gaps:
            mask = bridge_narrow_gaps(mask, gray, cfg.postprocess.gap_seeds,
                                      cfg.postprocess.gap_tol, cfg.postprocess.gap_window)

    with _stage("extract", timings):
        contour = extract_contour(state.phi) if mask is raw_mask else mask_contour(mask)

    return SegmentationResult(mask=mask, contour=contour, iterations=state.iteration,
                              convergence_iteration=plateau_out["convergence_iteration"],
                              snapshots=snapshots, diagnostics=diagnostics,
                              state=state, fields=fields)


def fill_inner_holes(mask: np.ndarray, g: ScalarField, beta: ScalarField | None,
                     evolution: EvolutionParams, hole_alpha: float = -1.0,
                     hole_iters: int = 1500) -> np.ndarray:
    """Fill enclosed background components that the evolution claims as bone.

    Each fully enclosed background component gets a small circular seed
    contour that expands (negative alpha) under the same stopping
    fields.  If the expansion escapes the component and merges with the
    mask, the component was bone interior and is filled; if it parks on
    edges inside the component, the component is a true hole and stays.
    Output is always a superset of the input mask.
    """
    mask = np.asarray(mask, dtype=bool)
    labels, n = ndi.label(~mask)
    border = np.unique(np.concatenate([labels[0], labels[-1], labels[:, 0], labels[:, -1]]))
    h, w = mask.shape
    rr, cc = np.meshgrid(np.arange(h, dtype=np.float64),
                         np.arange(w, dtype=np.float64), indexing="ij")
    out = mask.copy()
    for lab in range(1, n + 1):
        if lab in border:
            continue
        comp = labels == lab
        inner_dist = ndi.distance_transform_edt(comp)
        crr, ccc = np.nonzero(comp)
        sr, sc = int(round(crr.mean())), int(round(ccc.mean()))
        if not comp[sr, sc]:
            # Concave component: centroid fell outside, use the deepest pixel.
            sr, sc = np.unravel_index(int(np.argmax(inner_dist)), comp.shape)
        radius = float(np.clip(0.5 * inner_dist[sr, sc], 1.0, 4.0))
        phi = ScalarField(np.hypot(rr - sr, cc - sc) - radius)
        state = EvolutionState(phi=phi, g=g, beta=beta,
                               params=replace(evolution, alpha=hole_alpha))
        merged = False
        done = 0
        while done < hole_iters:
            prev = extract_mask(state.phi)
            state = evolve(state, min(50, hole_iters - done))
            done = state.iteration
            grown = extract_mask(state.phi)
            if (grown & mask).any():
                merged = True
                break
            if not (grown ^ prev).any():
                break  # parked on edges inside the component
        if merged:
            out |= comp
            logger.info("filled enclosed component of %d px", int(comp.sum()))
    return out


def bridge_narrow_gaps(mask: np.ndarray, gray: ScalarField, seeds,
                       tol: float = 20.0, window: int = 31) -> np.ndarray:
    """Absorb narrow structures by local intensity region growing.

    From each seed, 4-connected growth adds pixels whose gray differs
    from the seed's by at most tol, restricted to a window x window
    box around the seed.  Output is a superset of the input mask.
    """
    mask = np.asarray(mask, dtype=bool)
    v = gray.values
    h, w = mask.shape
    half = window // 2
    out = mask.copy()
    for i, (r, c) in enumerate(seeds):
        r, c = int(r), int(c)
        if not (0 <= r < h and 0 <= c < w):
            raise ValueError(f"gap seed {i} outside the image: ({r}, {c})")
        base = v[r, c]
        r0, r1 = max(0, r - half), min(h, r + half + 1)
        c0, c1 = max(0, c - half), min(w, c + half + 1)
        local = np.abs(v[r0:r1, c0:c1] - base) <= tol
        labels, _ = ndi.label(local)  # 4-connectivity
        out[r0:r1, c0:c1] |= labels == labels[r - r0, c - c0]
    return out


# ---------------------------------------------------------------------------
# Synthetic bone phantoms with analytic ground truth.
# ---------------------------------------------------------------------------

PHANTOM_BACKGROUND = 20.0
PHANTOM_CORTICAL = 200.0
PHANTOM_TRABECULAR = 60.0  # marrow-dominated interior sits in the soft-tissue gray range
PHANTOM_BLOB = 60.0

PHANTOM_KINDS = ("ring", "fractured_ring", "ring_with_blob", "annulus", "two_disks")


@dataclass(frozen=True)
class Phantom:
    image: object  # ScalarField, or CtSlice when built in HU
    truth: np.ndarray
    regions: dict
    suggested_prompt: PromptSet | None = None


def _angle_in(angles: np.ndarray, center_deg: float, span_deg: float) -> np.ndarray:
    diff = np.degrees(angles) - center_deg
    diff = (diff + 180.0) % 360.0 - 180.0
    return np.abs(diff) <= span_deg / 2.0


def make_phantom(kind: str, size: int = 128, noise_sigma: float = 0.0, seed: int = 0,
                 as_hu: bool = False, outer_radius: float = 40.0, inner_radius: float = 25.0,
                 gap_deg: float = 45.0, gap_center_deg: float = 0.0,
                 blob_center: tuple = (28.0, 28.0), blob_radius: float = 7.0,
                 hole_gray: float | None = None) -> Phantom:
    """Synthetic 2-D bone phantom with analytic ground truth.

    Kinds:
      ring           cortical ring with trabecular interior; truth is the
                     full disk of outer_radius.
      fractured_ring ring with a gap_deg arc of the cortical band removed;
                     truth stays the full disk (the closed fragment
                     outline).  Ships a suggested prompt stroke that
                     bridges the gap along the outer arc.
      ring_with_blob ring plus a dim soft-tissue blob inside the would-be
                     initial box; truth unchanged.
      annulus        cortical band only; interior takes hole_gray
                     (background by default).
      two_disks      two cortical disks joined by a 2-px bright channel;
                     truth includes the channel.

    Gray levels are integers when noise_sigma is 0, so 8-bit PNG round
    trips are exact.  Noise is seeded.  With as_hu the grays are mapped
    back through the default 1000/250 bone window into Hounsfield units.
    """
    if kind not in PHANTOM_KINDS:
        raise ValueError(f"unknown phantom kind {kind!r}; pick one of {PHANTOM_KINDS}")
    cy = cx = (size - 1) / 2.0
    # every structure needs a couple of background pixels to the frame
    reach = outer_radius if kind != "two_disks" else 23.5 + 16.0
    if kind == "ring_with_blob":
        reach = max(reach, np.hypot(blob_center[0] - cy, blob_center[1] - cx) + blob_radius)
    if reach + 2.0 > cy:
        raise ValueError(f"phantom geometry reaches {reach:.1f} px from center, "
                         f"exceeds size {size}")
    rr, cc = np.meshgrid(np.arange(size, dtype=np.float64),
                         np.arange(size, dtype=np.float64), indexing="ij")
    dist = np.hypot(rr - cy, cc - cx)
    angle = np.arctan2(rr - cy, cc - cx)

    img = np.full((size, size), PHANTOM_BACKGROUND)
    disk = dist <= outer_radius
    band = disk & (dist > inner_radius)
    interior = dist <= inner_radius
    regions = {"disk": disk, "band": band, "interior": dist <= inner_radius - 2.0}
    prompt = None

    if kind in ("ring", "fractured_ring", "ring_with_blob"):
        img[band] = PHANTOM_CORTICAL
        img[interior] = PHANTOM_TRABECULAR
        truth = disk.copy()
        if kind == "fractured_ring":
            gap = band & _angle_in(angle, gap_center_deg, gap_deg)
            img[gap] = PHANTOM_BACKGROUND
            # Truth keeps the full disk: the fracture void belongs to the
            # fragment outline the operator closes with a stroke.
            regions["gap"] = gap
            rp = outer_radius - 1.0
            half = gap_deg / 2.0 + 3.0
            pts = []
            for a in (gap_center_deg - half, gap_center_deg, gap_center_deg + half):
                ar = np.radians(a)
                pts.append((int(round(cy + rp * np.sin(ar))), int(round(cx + rp * np.cos(ar)))))
            prompt = PromptSet((tuple(pts),))
        if kind == "ring_with_blob":
            blob = np.hypot(rr - blob_center[0], cc - blob_center[1]) <= blob_radius
            img[blob] = PHANTOM_BLOB
            regions["blob"] = blob
    elif kind == "annulus":
        img[band] = PHANTOM_CORTICAL
        hg = PHANTOM_BACKGROUND if hole_gray is None else float(hole_gray)
        img[interior] = hg
        truth = disk.copy() if hg > 102.0 else band.copy()
        regions["hole"] = interior
    else:  # two_disks
        r = 16.0
        ca, cb = (cy, cx - 23.5), (cy, cx + 23.5)
        disk_a = np.hypot(rr - ca[0], cc - ca[1]) <= r
        disk_b = np.hypot(rr - cb[0], cc - cb[1]) <= r
        channel = (np.abs(rr - cy) <= 1.0) & (cc > ca[1] + r - 1) & (cc < cb[1] - r + 1)
        img[disk_a | disk_b | channel] = PHANTOM_CORTICAL
        truth = disk_a | disk_b | channel
        regions = {"disk_a": disk_a, "disk_b": disk_b, "channel": channel}
        prompt = None

    if noise_sigma > 0:
        rng = np.random.default_rng(seed)
        img = np.clip(img + rng.normal(0.0, noise_sigma, img.shape), 0.0, 255.0)

    gray = ScalarField(img)
    if as_hu:
        cfg = PipelineConfig()
        hu = cfg.window_level + (img - 127.5) * (cfg.window_width / 255.0)
        return Phantom(CtSlice(ScalarField(hu)), truth, regions, prompt)
    return Phantom(gray, truth, regions, prompt)
