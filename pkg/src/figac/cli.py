"""Command-line front end.

Subcommands: segment, evolve, fields, evaluate, phantom.  Exit codes:
0 success, 2 usage or configuration problem, 3 runtime failure (the
failing pipeline stage is named on stderr).

Configuration is one JSON document mirroring PipelineConfig; individual
fields are overridable with --set dotted.path=value, values parsed as
JSON with a bare-string fallback.
"""
from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np
from PIL import Image

from .grid import (ScalarField, read_image, read_mask_image, write_gray_image,
                   write_hu_image, write_image, write_mask_image)
from .knowledge import bone_gray_min, window_slice
from .levelset import box_signed_distance
from .metrics import evaluate
from .pipeline import (PHANTOM_KINDS, PipelineConfig, PipelineStageError,
                       auto_init_box, compute_fields, make_phantom, run)


class ConfigError(ValueError):
    """Bad invocation or configuration: maps to exit code 2."""


def _parse_set(expr: str) -> tuple:
    path, sep, raw = expr.partition("=")
    if not sep or not path.strip():
        raise ConfigError(f"--set expects key=value, got {expr!r}")
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return path.strip(), value


def _apply_set(doc: dict, path: str, value) -> None:
    keys = path.split(".")
    node = doc
    for k in keys[:-1]:
        if not isinstance(node.get(k), dict):
            raise ConfigError(f"--set {path!r}: no config section {k!r}")
        node = node[k]
    if keys[-1] not in node:
        raise ConfigError(f"--set {path!r}: no config field {keys[-1]!r}")
    node[keys[-1]] = value


def load_config(args) -> PipelineConfig:
    """Config file -> --set overrides -> prompts file, then validate."""
    if getattr(args, "config", None):
        p = Path(args.config)
        if not p.exists():
            raise ConfigError(f"config file not found: {p}")
        try:
            doc = json.loads(p.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}")
        if not isinstance(doc, dict):
            raise ConfigError("config must be a JSON object")
    else:
        doc = PipelineConfig().to_dict()
    for expr in getattr(args, "set", None) or []:
        path, value = _parse_set(expr)
        _apply_set(doc, path, value)
    if getattr(args, "prompts", None):
        pp = Path(args.prompts)
        if not pp.exists():
            raise ConfigError(f"prompts file not found: {pp}")
        try:
            doc["prompts"] = json.loads(pp.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"prompts file is not valid JSON: {exc}")
    try:
        return PipelineConfig.from_dict(doc)
    except (ValueError, TypeError) as exc:
        raise ConfigError(str(exc))


def _read_input(path) -> object:
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"input image not found: {p}")
    return read_image(p)


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _polylines_doc(polys) -> list:
    return [np.asarray(p, dtype=float).tolist() for p in polys]


def _write_contour(path: Path, iteration: int, polys) -> None:
    path.write_text(json.dumps({"iteration": iteration,
                                "polylines": _polylines_doc(polys)}))


def _overlay_png(gray: ScalarField, polys, path: Path) -> None:
    """Contour drawn in red over the gray image."""
    base = np.clip(gray.values, 0.0, 255.0).astype(np.uint8)
    rgb = np.stack([base] * 3, axis=-1)
    h, w = base.shape
    for poly in polys:
        pts = np.round(np.asarray(poly, dtype=float)).astype(int)
        pts = pts[(pts[:, 0] >= 0) & (pts[:, 0] < h) & (pts[:, 1] >= 0) & (pts[:, 1] < w)]
        rgb[pts[:, 0], pts[:, 1]] = (230, 40, 40)
    Image.fromarray(rgb).save(path)


def _as_gray(image, cfg: PipelineConfig) -> ScalarField:
    if isinstance(image, ScalarField):
        return image
    return window_slice(image, cfg.window_width, cfg.window_level)


def cmd_segment(args) -> int:
    cfg = load_config(args)
    image = _read_input(args.image)
    out = _out_dir(args)
    res = run(image, cfg)
    write_mask_image(res.mask, out / "mask.png")
    _write_contour(out / "contour.json", res.iterations, res.contour)
    (out / "diagnostics.json").write_text(json.dumps(res.diagnostics, indent=2))
    print(f"wrote {out / 'mask.png'} after {res.iterations} iterations")
    return 0


def cmd_evolve(args) -> int:
    if args.snapshot_every < 1:
        raise ConfigError("--snapshot-every must be >= 1")
    cfg = replace(load_config(args), snapshot_every=args.snapshot_every)
    image = _read_input(args.image)
    out = _out_dir(args)
    res = run(image, cfg)
    gray = _as_gray(image, cfg)
    written = 0
    for it, polys in res.snapshots:
        if it == 0:
            continue  # the initial box is not an evolution snapshot
        _write_contour(out / f"snapshot_{it:07d}.json", it, polys)
        _overlay_png(gray, polys, out / f"snapshot_{it:07d}.png")
        written += 1
    write_mask_image(res.mask, out / "mask.png")
    (out / "diagnostics.json").write_text(json.dumps(res.diagnostics, indent=2))
    print(f"wrote {written} snapshots to {out}")
    return 0


def cmd_fields(args) -> int:
    cfg = load_config(args)
    image = _read_input(args.image)
    out = _out_dir(args)
    gray = _as_gray(image, cfg)
    threshold = cfg.init_threshold
    if threshold is None:
        threshold = bone_gray_min(cfg.bone_window)
    box = cfg.init_box or auto_init_box(gray, threshold, cfg.init_margin)
    phi0 = box_signed_distance(gray.shape, box)
    fields = compute_fields(gray, cfg, roi=phi0.values <= 0.0)

    np.save(out / "g.npy", fields.g.values)
    write_image(fields.g, out / "g.png")
    if fields.beta is not None:
        np.save(out / "beta.npy", fields.beta.values)
        write_image(fields.beta, out / "beta.png")
        write_mask_image(fields.stopping_set.mask, out / "stopping_set.png")
    print(f"wrote fields to {out}")
    return 0


def cmd_evaluate(args) -> int:
    for p in (args.truth, args.pred):
        if not Path(p).exists():
            raise ConfigError(f"mask file not found: {p}")
    truth = read_mask_image(args.truth)
    pred = read_mask_image(args.pred)
    scores = evaluate(truth, pred)
    doc = {"dice": scores["dice"], "jaccard": scores["jaccard"],
           "hd": scores["hausdorff"], "assd": scores["assd"]}
    text = json.dumps(doc, indent=2)
    if args.out:
        Path(args.out).write_text(text)
    print(text)
    return 0


def cmd_phantom(args) -> int:
    out = _out_dir(args)
    ph = make_phantom(args.kind, size=args.size, noise_sigma=args.noise_sigma,
                      seed=args.seed, as_hu=args.hu)
    if args.hu:
        write_hu_image(ph.image, out / "image.png")
    else:
        write_gray_image(ph.image, out / "image.png")
    write_mask_image(ph.truth, out / "truth.png")
    if ph.suggested_prompt is not None:
        (out / "prompt.json").write_text(ph.suggested_prompt.to_json())
    print(f"wrote {args.kind} phantom to {out}")
    return 0


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="figac",
                                     description="Bone segmentation by "
                                                 "fracture-interactive contours")
    sub = parser.add_subparsers(dest="subcommand", required=True)

    def add_config_flags(p, prompts=True):
        p.add_argument("--config", help="JSON config file (defaults used if omitted)")
        p.add_argument("--set", action="append", metavar="KEY=VALUE",
                       help="override a config field, dotted path")
        if prompts:
            p.add_argument("--prompts", help="prompt strokes JSON file")

    p = sub.add_parser("segment", help="segment one slice")
    p.add_argument("image")
    p.add_argument("--out", required=True)
    add_config_flags(p)
    p.set_defaults(func=cmd_segment)

    p = sub.add_parser("evolve", help="segment and record contour snapshots")
    p.add_argument("image")
    p.add_argument("--out", required=True)
    p.add_argument("--snapshot-every", type=int, required=True)
    add_config_flags(p)
    p.set_defaults(func=cmd_evolve)

    p = sub.add_parser("fields", help="write the stopping fields for inspection")
    p.add_argument("image")
    p.add_argument("--out", required=True)
    add_config_flags(p)
    p.set_defaults(func=cmd_fields)

    p = sub.add_parser("evaluate", help="compare two mask PNGs")
    p.add_argument("truth")
    p.add_argument("pred")
    p.add_argument("--out", help="also write the JSON report here")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("phantom", help="generate a synthetic test image")
    p.add_argument("kind", choices=PHANTOM_KINDS)
    p.add_argument("--out", required=True)
    p.add_argument("--size", type=int, default=128)
    p.add_argument("--noise-sigma", type=float, default=0.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--hu", action="store_true",
                   help="write 16-bit HU with a JSON sidecar instead of 8-bit gray")
    p.set_defaults(func=cmd_phantom)
    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except PipelineStageError as exc:
        print(f"pipeline failed at stage '{exc.stage}': {exc.cause}", file=sys.stderr)
        return 3
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
