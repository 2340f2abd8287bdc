"""End-to-end pipeline, phantoms, and post-processing."""
import json

import numpy as np
import pytest
from scipy import ndimage as ndi

from figac.edges import PromptSet
from figac.grid import CtSlice, ScalarField
from figac.levelset import EvolutionParams
from figac.pipeline import (PipelineConfig, PipelineStageError, PlateauConfig,
                            PostprocessConfig, auto_init_box, bridge_narrow_gaps,
                            compute_fields, fill_inner_holes, make_phantom, run)
from figac.metrics import dice


# ------------------------------------------------------------------ phantoms

def test_phantom_deterministic():
    a = make_phantom("ring", noise_sigma=3.0, seed=9)
    b = make_phantom("ring", noise_sigma=3.0, seed=9)
    c = make_phantom("ring", noise_sigma=3.0, seed=10)
    assert np.array_equal(a.image.values, b.image.values)
    assert not np.array_equal(a.image.values, c.image.values)


def test_ring_phantom_areas():
    ph = make_phantom("ring")
    assert abs(ph.truth.sum() - np.pi * 40.0 ** 2) / (np.pi * 40.0 ** 2) <= 0.02
    band = ph.regions["band"].sum()
    expect = np.pi * (40.0 ** 2 - 25.0 ** 2)
    assert abs(band - expect) / expect <= 0.02


def test_fractured_ring_gap_fraction():
    ph = make_phantom("fractured_ring")
    gap = ph.regions["gap"].sum()
    band = ph.regions["band"].sum()
    assert abs(gap / band - 45.0 / 360.0) / (45.0 / 360.0) <= 0.05


def test_fractured_ring_truth_is_closed_outline():
    # the fragment outline closes across the gap: truth keeps the full disk
    ph = make_phantom("fractured_ring")
    assert np.array_equal(ph.truth, make_phantom("ring").truth)
    assert ph.suggested_prompt is not None
    px = np.asarray(ph.suggested_prompt.strokes[0], dtype=float)
    c = (128 - 1) / 2.0
    radii = np.hypot(px[:, 0] - c, px[:, 1] - c)
    assert np.all(radii <= 40.0)  # stroke rides inside the outer arc
    assert np.all(radii >= 25.0)


def test_phantom_geometry_bounds_checked():
    with pytest.raises(ValueError):
        make_phantom("ring", size=64, outer_radius=40.0)
    with pytest.raises(ValueError):
        make_phantom("nonagon")


def test_phantom_hu_windowing_round_trip():
    gray = make_phantom("ring")
    hu = make_phantom("ring", as_hu=True)
    assert isinstance(hu.image, CtSlice)
    from figac.knowledge import window_slice
    back = window_slice(hu.image, 1000.0, 250.0)
    assert np.allclose(back.values, gray.image.values, atol=1e-9)


def test_phantom_noise_stays_in_range():
    ph = make_phantom("ring", noise_sigma=10.0, seed=3)
    assert ph.image.values.min() >= 0.0
    assert ph.image.values.max() <= 255.0


# ------------------------------------------------------------- init box scan

def test_auto_init_box_single_pixel():
    img = np.zeros((64, 64))
    img[20, 30] = 200.0
    box = auto_init_box(ScalarField(img), 114.75, margin=5)
    assert box == (15, 25, 25, 35)


def test_auto_init_box_region_scan():
    img = np.zeros((64, 80))
    img[10:51, 20:61] = 200.0  # rows 10..50, cols 20..60
    box = auto_init_box(ScalarField(img), 114.75, margin=4)
    assert box == (6, 16, 54, 64)


def test_auto_init_box_clamped_inside_frame():
    img = np.zeros((32, 32))
    img[0, 0] = 200.0
    box = auto_init_box(ScalarField(img), 114.75, margin=5)
    assert box[0] >= 1 and box[1] >= 1
    assert box[2] <= 30 and box[3] <= 30


def test_auto_init_box_all_dark_raises():
    with pytest.raises(ValueError, match="no bone-candidate region"):
        auto_init_box(ScalarField(np.zeros((16, 16))), 114.75)


# -------------------------------------------------------------------- config

def test_config_json_round_trip():
    cfg = PipelineConfig(mode="classical", canny_low=0.25, eta=65.0,
                         evolution=EvolutionParams(alpha=1.4, n_iters=500),
                         prompts=PromptSet((((3, 4), (5, 6)),)),
                         plateau=PlateauConfig(enabled=True),
                         postprocess=PostprocessConfig(fill_holes=True))
    back = PipelineConfig.from_json(cfg.to_json())
    assert back == cfg


def test_config_rejects_unknown_keys():
    doc = json.loads(PipelineConfig().to_json())
    doc["slurp"] = 1
    with pytest.raises(ValueError, match="slurp"):
        PipelineConfig.from_dict(doc)


def test_config_validates_fields():
    with pytest.raises(ValueError, match="canny"):
        PipelineConfig(canny_low=0.9, canny_high=0.2)
    with pytest.raises(ValueError, match="hole_alpha"):
        PostprocessConfig(hole_alpha=0.5)
    with pytest.raises(ValueError, match="mode"):
        PipelineConfig(mode="hybrid")


# ----------------------------------------------------------------- end-to-end

def test_ring_segmentation_dice():
    ph = make_phantom("ring")
    res = run(ph.image, PipelineConfig())
    assert dice(ph.truth, res.mask) / 100.0 >= 0.97
    assert res.mask.shape == ph.image.shape
    assert res.iterations == 3000


def test_run_deterministic():
    ph = make_phantom("ring", noise_sigma=2.0, seed=5)
    cfg = PipelineConfig(evolution=EvolutionParams(n_iters=800))
    a = run(ph.image, cfg)
    b = run(ph.image, cfg)
    assert np.array_equal(a.mask, b.mask)
    assert np.array_equal(a.state.phi.values, b.state.phi.values)


def test_run_accepts_hu_slice():
    gray = make_phantom("ring")
    hu = make_phantom("ring", as_hu=True)
    cfg = PipelineConfig(evolution=EvolutionParams(n_iters=600))
    a = run(gray.image, cfg)
    b = run(hu.image, cfg)
    assert np.array_equal(a.mask, b.mask)


def test_run_snapshot_cadence():
    ph = make_phantom("ring")
    cfg = PipelineConfig(evolution=EvolutionParams(n_iters=1500), snapshot_every=500)
    res = run(ph.image, cfg)
    assert [it for it, _ in res.snapshots] == [0, 500, 1000, 1500]


def test_run_plateau_detector_stops_early():
    ph = make_phantom("ring")
    cfg = PipelineConfig(plateau=PlateauConfig(enabled=True))
    res = run(ph.image, cfg)
    assert res.convergence_iteration is not None
    assert res.convergence_iteration < 3000
    full = run(ph.image, PipelineConfig())
    flips = np.count_nonzero(res.mask ^ full.mask)
    assert flips / res.mask.size <= 0.005


def test_run_stage_error_carries_stage_name():
    dark = ScalarField(np.zeros((32, 32)))
    with pytest.raises(PipelineStageError) as exc:
        run(dark, PipelineConfig())
    assert exc.value.stage == "init"


def test_stopping_fields_structure():
    ph = make_phantom("fractured_ring")
    cfg = PipelineConfig(prompts=ph.suggested_prompt)
    roi = np.ones(ph.image.shape, dtype=bool)
    fields = compute_fields(ph.image, cfg, roi)
    assert fields.beta is not None
    # beta vanishes exactly on the stopping set, nowhere else
    assert np.all(fields.beta.values[fields.stopping_set.mask] == 0.0)
    assert np.all(fields.beta.values[~fields.stopping_set.mask] > 0.0)
    # stopping set = filtered edges plus rasterized prompts
    assert np.all(fields.stopping_set.mask[fields.bone_edges.mask])
    assert fields.stopping_set.count >= fields.bone_edges.count


def test_prompt_changes_fractured_outcome():
    ph = make_phantom("fractured_ring")
    cfg_p = PipelineConfig(prompts=ph.suggested_prompt,
                           evolution=EvolutionParams(n_iters=3000))
    cfg_u = PipelineConfig(evolution=EvolutionParams(n_iters=3000))
    with_p = run(ph.image, cfg_p)
    without = run(ph.image, cfg_u)
    d_p = dice(ph.truth, with_p.mask) / 100.0
    d_u = dice(ph.truth, without.mask) / 100.0
    assert d_p >= 0.95
    assert d_p - d_u >= 0.10
    # the unprompted run floods the trabecular interior through the gap
    interior = ph.regions["interior"]
    assert np.count_nonzero(without.mask & interior) == 0


# -------------------------------------------------------------- post-process

def _unit_fields(ph):
    roi = np.ones(ph.image.shape, dtype=bool)
    return compute_fields(ph.image, PipelineConfig(), roi)


def test_fill_inner_holes_bright_hole_filled():
    ph = make_phantom("annulus", hole_gray=200.0)
    fields = _unit_fields(ph)
    band = ph.regions["band"]
    out = fill_inner_holes(band, fields.g, fields.beta, EvolutionParams())
    hole = ph.regions["hole"]
    assert np.all(out[hole])
    assert np.all(out[band])


def test_fill_inner_holes_dark_hole_retained():
    ph = make_phantom("annulus")  # hole at background gray, strong inner edge
    fields = _unit_fields(ph)
    band = ph.regions["band"]
    out = fill_inner_holes(band, fields.g, fields.beta, EvolutionParams())
    hole = ph.regions["hole"]
    assert not np.any(out & hole)
    assert np.array_equal(out, band)


def test_fill_inner_holes_solid_mask_unchanged():
    ph = make_phantom("ring")
    fields = _unit_fields(ph)
    out = fill_inner_holes(ph.truth, fields.g, fields.beta, EvolutionParams())
    assert np.array_equal(out, ph.truth)


def test_fill_inner_holes_monotone():
    ph = make_phantom("annulus", hole_gray=200.0)
    fields = _unit_fields(ph)
    band = ph.regions["band"]
    out = fill_inner_holes(band, fields.g, fields.beta, EvolutionParams())
    assert np.all(out[band])


def test_bridge_narrow_gaps_connects_disks():
    ph = make_phantom("two_disks")
    base = ph.regions["disk_a"] | ph.regions["disk_b"]
    _, n_before = ndi.label(base)
    out = bridge_narrow_gaps(base, ph.image, seeds=[(64, 64)], tol=20.0)
    _, n_after = ndi.label(out)
    assert (n_before, n_after) == (2, 1)
    assert np.all(out[base])
    assert np.all(out[ph.regions["channel"]])


def test_bridge_no_seeds_unchanged():
    ph = make_phantom("two_disks")
    base = ph.regions["disk_a"] | ph.regions["disk_b"]
    out = bridge_narrow_gaps(base, ph.image, seeds=[])
    assert np.array_equal(out, base)


def test_bridge_rejects_out_of_bounds_seed():
    ph = make_phantom("two_disks")
    base = ph.regions["disk_a"]
    with pytest.raises(ValueError, match="seed 1"):
        bridge_narrow_gaps(base, ph.image, seeds=[(5, 5), (500, 5)])


def test_bridge_growth_is_local():
    # growth cannot escape the window around the seed
    ph = make_phantom("two_disks")
    base = np.zeros(ph.image.shape, dtype=bool)
    out = bridge_narrow_gaps(base, ph.image, seeds=[(64, 64)], tol=20.0, window=31)
    rr, cc = np.nonzero(out)
    assert rr.min() >= 64 - 15 and rr.max() <= 64 + 15
    assert cc.min() >= 64 - 15 and cc.max() <= 64 + 15
