"""End-to-end checks of the command-line front end.

Commands run in-process through figac.cli.main so exit codes and stderr
are observable without subprocesses.
"""
import json

import numpy as np
import pytest
from PIL import Image

from figac import (PipelineConfig, ScalarField, auto_init_box, bone_gray_min,
                   box_signed_distance, compute_fields, dice, make_phantom,
                   read_image, read_mask_image, run, write_gray_image)
from figac.cli import main


@pytest.fixture(scope="module")
def ring_dir(tmp_path_factory):
    d = tmp_path_factory.mktemp("ring")
    assert main(["phantom", "ring", "--out", str(d)]) == 0
    return d


@pytest.fixture(scope="module")
def fractured_dir(tmp_path_factory):
    d = tmp_path_factory.mktemp("fractured")
    assert main(["phantom", "fractured_ring", "--out", str(d)]) == 0
    return d


@pytest.fixture(scope="module")
def blob_dir(tmp_path_factory):
    d = tmp_path_factory.mktemp("blob")
    assert main(["phantom", "ring_with_blob", "--out", str(d)]) == 0
    return d


FAST = ["--set", "evolution.n_iters=600"]


# ---------------------------------------------------------------- phantom

def test_phantom_writes_exact_grays(ring_dir):
    img = read_image(ring_dir / "image.png")
    ph = make_phantom("ring")
    assert np.array_equal(img.values, ph.image.values)
    assert np.array_equal(read_mask_image(ring_dir / "truth.png"), ph.truth)


def test_phantom_fractured_ships_prompt(fractured_dir):
    doc = json.loads((fractured_dir / "prompt.json").read_text())
    assert doc["strokes"] and len(doc["strokes"][0]) == 3


def test_phantom_hu_writes_sidecar(tmp_path):
    out = tmp_path / "hu"
    assert main(["phantom", "ring", "--hu", "--out", str(out)]) == 0
    assert (out / "image.json").exists()
    ct = read_image(out / "image.png")
    assert hasattr(ct, "hu")


def test_phantom_rejects_unknown_kind(tmp_path, capsys):
    with pytest.raises(SystemExit) as exc:
        main(["phantom", "hexagon", "--out", str(tmp_path)])
    assert exc.value.code == 2


# ---------------------------------------------------------------- segment

def test_segment_outputs_and_quality(ring_dir, tmp_path):
    out = tmp_path / "seg"
    assert main(["segment", str(ring_dir / "image.png"), "--out", str(out), *FAST]) == 0
    for name in ("mask.png", "contour.json", "diagnostics.json"):
        assert (out / name).exists()
    truth = read_mask_image(ring_dir / "truth.png")
    mask = read_mask_image(out / "mask.png")
    assert dice(truth, mask) >= 97.0
    contour = json.loads((out / "contour.json").read_text())
    assert contour["iteration"] == 600
    assert contour["polylines"]
    diag = json.loads((out / "diagnostics.json").read_text())
    assert "timings" in diag and "init_box" in diag


def test_segment_matches_library(ring_dir, tmp_path):
    out = tmp_path / "seg"
    assert main(["segment", str(ring_dir / "image.png"), "--out", str(out), *FAST]) == 0
    cfg = PipelineConfig.from_dict({**PipelineConfig().to_dict(),
                                    "evolution": {**PipelineConfig().to_dict()["evolution"],
                                                  "n_iters": 600}})
    res = run(read_image(ring_dir / "image.png"), cfg)
    assert np.array_equal(read_mask_image(out / "mask.png"), res.mask)


def test_segment_idempotent_and_input_untouched(ring_dir, tmp_path):
    before = (ring_dir / "image.png").read_bytes()
    out1, out2 = tmp_path / "a", tmp_path / "b"
    for out in (out1, out2):
        assert main(["segment", str(ring_dir / "image.png"), "--out", str(out), *FAST]) == 0
    assert (out1 / "mask.png").read_bytes() == (out2 / "mask.png").read_bytes()
    assert (out1 / "contour.json").read_bytes() == (out2 / "contour.json").read_bytes()
    d1 = json.loads((out1 / "diagnostics.json").read_text())
    d2 = json.loads((out2 / "diagnostics.json").read_text())
    d1.pop("timings"), d2.pop("timings")
    assert d1 == d2
    assert (ring_dir / "image.png").read_bytes() == before


def test_segment_missing_config_exits_2(ring_dir, tmp_path, capsys):
    code = main(["segment", str(ring_dir / "image.png"), "--out", str(tmp_path),
                 "--config", str(tmp_path / "nope.json")])
    assert code == 2
    assert "not found" in capsys.readouterr().err


def test_segment_bad_canny_exits_2_naming_field(ring_dir, tmp_path, capsys):
    code = main(["segment", str(ring_dir / "image.png"), "--out", str(tmp_path),
                 "--set", "canny_low=0.9", "--set", "canny_high=0.2"])
    assert code == 2
    assert "canny" in capsys.readouterr().err


def test_segment_missing_image_exits_2(tmp_path, capsys):
    code = main(["segment", str(tmp_path / "void.png"), "--out", str(tmp_path)])
    assert code == 2
    assert "not found" in capsys.readouterr().err


def test_segment_stage_failure_exits_3_naming_stage(tmp_path, capsys):
    img = tmp_path / "dark.png"
    write_gray_image(ScalarField(np.full((64, 64), 10.0)), img)
    code = main(["segment", str(img), "--out", str(tmp_path / "out")])
    assert code == 3
    err = capsys.readouterr().err
    assert "stage 'init'" in err and "no bone-candidate region" in err


def test_set_rejects_unknown_key(ring_dir, tmp_path, capsys):
    code = main(["segment", str(ring_dir / "image.png"), "--out", str(tmp_path),
                 "--set", "slurp=1"])
    assert code == 2
    assert "slurp" in capsys.readouterr().err


# ----------------------------------------------------------------- evolve

def test_evolve_seven_snapshots(ring_dir, tmp_path):
    out = tmp_path / "ev"
    code = main(["evolve", str(ring_dir / "image.png"), "--out", str(out),
                 "--snapshot-every", "1000", "--set", "evolution.n_iters=7000"])
    assert code == 0
    jsons = sorted(out.glob("snapshot_*.json"))
    pngs = sorted(out.glob("snapshot_*.png"))
    assert len(jsons) == 7 and len(pngs) == 7
    iters = [json.loads(p.read_text())["iteration"] for p in jsons]
    assert iters == [1000, 2000, 3000, 4000, 5000, 6000, 7000]


def test_evolve_rejects_bad_cadence(ring_dir, tmp_path):
    code = main(["evolve", str(ring_dir / "image.png"), "--out", str(tmp_path),
                 "--snapshot-every", "0"])
    assert code == 2


def test_evolve_classical_leaks_figac_does_not(fractured_dir, tmp_path):
    """At late iterations the classical contour abandons part of the
    fragment disk; with the bridging prompt the full outline holds."""
    truth = read_mask_image(fractured_dir / "truth.png")

    def uncovered(out):
        mask = read_mask_image(out / "mask.png")
        return (truth & ~mask).sum() / truth.sum()

    base = ["--snapshot-every", "6000", "--set", "evolution.n_iters=6000"]
    out_c = tmp_path / "classical"
    assert main(["evolve", str(fractured_dir / "image.png"), "--out", str(out_c),
                 "--set", "mode=\"classical\"", *base]) == 0
    out_f = tmp_path / "figac"
    assert main(["evolve", str(fractured_dir / "image.png"), "--out", str(out_f),
                 "--prompts", str(fractured_dir / "prompt.json"), *base]) == 0
    assert uncovered(out_c) > 0.05
    assert uncovered(out_f) <= 0.05


# ----------------------------------------------------------------- fields

def test_fields_match_library_and_beta_png_zero_set(ring_dir, tmp_path):
    out = tmp_path / "fields"
    assert main(["fields", str(ring_dir / "image.png"), "--out", str(out)]) == 0
    g = np.load(out / "g.npy")
    beta = np.load(out / "beta.npy")

    cfg = PipelineConfig()
    gray = read_image(ring_dir / "image.png")
    box = auto_init_box(gray, bone_gray_min(cfg.bone_window), cfg.init_margin)
    phi0 = box_signed_distance(gray.shape, box)
    fields = compute_fields(gray, cfg, roi=phi0.values <= 0.0)
    assert np.array_equal(g, fields.g.values)
    assert np.array_equal(beta, fields.beta.values)

    png = np.asarray(Image.open(out / "beta.png"))
    assert np.array_equal(png == 0, fields.stopping_set.mask)
    assert np.array_equal(read_mask_image(out / "stopping_set.png"),
                          fields.stopping_set.mask)


def test_fields_blob_interior_at_detector_max(blob_dir, tmp_path):
    out = tmp_path / "fields"
    assert main(["fields", str(blob_dir / "image.png"), "--out", str(out)]) == 0
    g = np.load(out / "g.npy")
    regions = make_phantom("ring_with_blob").regions
    # Away from the blob rim the gray is flat 60: both detector terms saturate.
    center = tuple(int(v.mean()) for v in np.nonzero(regions["blob"]))
    assert g[center] == pytest.approx(2.0)


def test_fields_prompt_pixels_in_zero_set(fractured_dir, tmp_path):
    out = tmp_path / "fields"
    assert main(["fields", str(fractured_dir / "image.png"), "--out", str(out),
                 "--prompts", str(fractured_dir / "prompt.json")]) == 0
    beta = np.load(out / "beta.npy")
    strokes = json.loads((fractured_dir / "prompt.json").read_text())["strokes"]
    for stroke in strokes:
        for r, c in stroke:
            assert beta[int(r), int(c)] == 0.0


def test_fields_classical_mode_writes_g_only(ring_dir, tmp_path):
    out = tmp_path / "fields"
    assert main(["fields", str(ring_dir / "image.png"), "--out", str(out),
                 "--set", "mode=\"classical\""]) == 0
    assert (out / "g.npy").exists() and (out / "g.png").exists()
    assert not (out / "beta.npy").exists()
    assert not (out / "beta.png").exists()


# --------------------------------------------------------------- evaluate

def test_evaluate_emits_metric_json(ring_dir, tmp_path, capsys):
    seg = tmp_path / "seg"
    assert main(["segment", str(ring_dir / "image.png"), "--out", str(seg), *FAST]) == 0
    capsys.readouterr()
    report = tmp_path / "report.json"
    code = main(["evaluate", str(ring_dir / "truth.png"), str(seg / "mask.png"),
                 "--out", str(report)])
    assert code == 0
    doc = json.loads(report.read_text())
    assert set(doc) == {"dice", "jaccard", "hd", "assd"}
    assert doc["dice"] >= 97.0
    printed = json.loads(capsys.readouterr().out)
    assert printed == doc


def test_evaluate_missing_file_exits_2(tmp_path):
    assert main(["evaluate", str(tmp_path / "a.png"), str(tmp_path / "b.png")]) == 2
