"""Command-line front end: simulate, generate, filter, evaluate, report.

Exit status is 0 when a command finished without hard errors, 1 on any
configuration, I/O or processing error, and 2 on bad usage. Warnings are
counted on the final summary line and never change the exit status.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import math
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import __version__, config as cfgmod, seeding
from .compositor import (BackgroundImage, CompositionError, check_background, compose_image,
                         lut_footprint, sample_plan)
from .dataset_io import (BoxFormatError, DatasetManifest, ImageFormatError, ManifestEntry,
                         ManifestError, atomic_write_bytes, atomic_write_text, encode_png,
                         load_manifest, read_boxes, read_image, save_manifest, write_box_file)
from .lut import LUTError, build_lut, load_lut, lut_to_bytes
from .metrics import (EvalImage, MetricError, evaluate_corpus, sweep_to_csv, threshold_sweep)
from .physics import PhysicsError
from .regulation import RegulationError, apply_filter, filtering_report

HARD_ERRORS = (cfgmod.ConfigError, PhysicsError, LUTError, CompositionError, ManifestError,
               BoxFormatError, ImageFormatError, MetricError, RegulationError, OSError)
IMAGE_SUFFIXES = (".png", ".tif", ".tiff")
SCALES_FILE = "scales.json"


class CLIError(Exception):
    pass


class Run:
    """Resolved config plus the warning counter shared by one command."""

    def __init__(self, cfg: dict, out: Path, stream=None):
        self.cfg = cfg
        self.out = out
        self.stream = stream if stream is not None else sys.stdout
        self.warnings = 0

    def say(self, msg: str) -> None:
        print(msg, file=self.stream)

    def warn(self, msg: str) -> None:
        self.warnings += 1
        print(f"warning: {msg}", file=self.stream)


def _resolve_config(args) -> dict:
    override = {}
    if args.config:
        try:
            override = json.loads(Path(args.config).read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise cfgmod.ConfigError(f"{args.config}: invalid JSON: {exc}") from None
    if args.seed is not None:
        override["seed"] = args.seed
    ev = dict(override.get("evaluation", {}))
    if getattr(args, "preset", None):
        ev["preset"] = args.preset
    if getattr(args, "individual_thr", None) is not None:
        ev["individual_threshold"] = args.individual_thr
    if getattr(args, "image_thr", None) is not None:
        ev["image_threshold"] = args.image_thr
    if ev:
        override["evaluation"] = ev
    return cfgmod.resolve(override)


def _start(args) -> Run:
    cfg = _resolve_config(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    atomic_write_text(out / f"config.{args.command}.json", cfgmod.dump_config(cfg))
    return Run(cfg, out)


# -- simulate -----------------------------------------------------------------

def cmd_simulate(args) -> Run:
    run = _start(args)
    sim = run.cfg["simulation"]
    params = cfgmod.microscope_params(run.cfg)
    t0 = time.perf_counter()
    lut = build_lut(sim["radii_nm"], sim["defocus_um"], params,
                    n_radial_samples=sim["n_radial_samples"],
                    n_quadrature_nodes=sim["n_quadrature_nodes"], rho_max=sim["rho_max"],
                    jobs=args.jobs)
    path = run.out / "lut.bin"
    atomic_write_bytes(path, lut_to_bytes(lut))
    times = np.array(list(lut.timings.values()))
    run.say(f"simulated {len(lut)} profiles in {time.perf_counter() - t0:.1f} s "
            f"(per profile: mean {times.mean():.2f} s, max {times.max():.2f} s)")
    worst = max(lut.entries.values(), key=lambda p: p.convergence_residual)
    run.say(f"worst convergence residual {worst.convergence_residual:.2e} at "
            f"R={worst.radius_nm} nm, Z={worst.defocus_um} um")
    run.say(f"wrote {path}")
    return run


# -- generate -----------------------------------------------------------------

def _load_backgrounds(directory: Path, cfg: dict) -> list[tuple[str, Path, float]]:
    if not directory.is_dir():
        raise CLIError(f"backgrounds directory {directory} does not exist")
    files = sorted(p for p in directory.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)
    if not files:
        raise CLIError(f"no background images in {directory}")
    scales = {}
    scales_path = directory / SCALES_FILE
    if scales_path.exists():
        scales = json.loads(scales_path.read_text(encoding="utf-8"))
    default = cfg["generation"]["default_pixel_scale"]
    out = []
    for f in files:
        scale = scales.get(f.stem, default)
        if scale is None:
            raise CLIError(f"no pixel scale for background {f.name}; add it to {SCALES_FILE} "
                           f"or set generation.default_pixel_scale")
        out.append((f.stem, f, float(scale)))
    return out


_WORKER_LUT = {}


def _worker_lut(path: str):
    if path not in _WORKER_LUT:
        _WORKER_LUT.clear()
        _WORKER_LUT[path] = load_lut(path)
    return _WORKER_LUT[path]


def _generate_one(task):
    """Compose one output image; returns serialized artifacts (no file writes)."""
    index, cfg, lut_path, bg_id, bg_path, scale = task
    seed = cfg["seed"]
    gen = cfg["generation"]
    lut = _worker_lut(lut_path)
    bg = BackgroundImage(read_image(bg_path), scale, bg_id)
    check_background(bg, gen["pixel_scale_range"], gen["side_range"])
    scene = seeding.generator(seed, index, seeding.IMAGE_LEVEL, seeding.STAGE_SCENE)
    lo, hi = gen["base_defocus_um"]
    base_defocus = float(scene.uniform(lo, hi))
    settings = cfgmod.composite_settings(cfg, seed)
    footprint = lut_footprint(lut, scale, settings.size_classes)
    plan_rng = seeding.generator(seed, index, seeding.IMAGE_LEVEL, seeding.STAGE_PLAN)
    density = gen["density_per_um2"] if gen["density_per_um2"] is not None else 0.0
    plan = sample_plan(bg, cfgmod.size_distribution(cfg), base_defocus, density, plan_rng,
                       footprint=footprint, margin_px=gen["margin_px"],
                       jitter=gen["defocus_jitter"], target_count=gen["features_per_image"])
    labeled = compose_image(bg, plan, lut, settings, seed=seed, image_index=index)
    notes = list(labeled.warnings)
    if plan.unplaced:
        notes.append(f"placement saturated: {plan.unplaced} of {plan.target_count} "
                     f"features not placed")
    notes.extend(f"feature {pid} dropped: {why}" for pid, why in labeled.dropped)
    provenance = {
        "image_index": index,
        "background": bg_id,
        "pixel_scale": scale,
        "seed": seed,
        "seed_derivation": "SeedSequence(seed, spawn_key=(image_index, feature, stage))",
        "base_defocus_um": base_defocus,
        "target_count": plan.target_count,
        "unplaced": plan.unplaced,
        "dropped": [list(d) for d in labeled.dropped],
        "features": [asdict(p) for p in labeled.provenance],
    }
    return (index, encode_png(labeled.image.pixels), write_box_file(labeled.labels),
            json.dumps(provenance, indent=1, sort_keys=True) + "\n",
            labeled.image.width, labeled.image.height, len(labeled.labels), notes)


def cmd_generate(args) -> Run:
    run = _start(args)
    gen = run.cfg["generation"]
    lut_path = Path(args.lut)
    if not lut_path.is_file():
        raise CLIError(f"LUT {lut_path} does not exist; run 'simulate' first")
    backgrounds = _load_backgrounds(Path(args.backgrounds), run.cfg)
    tasks = []
    for i in range(gen["n_images"]):
        bg_id, bg_path, scale = backgrounds[i % len(backgrounds)]
        tasks.append((i, run.cfg, str(lut_path), bg_id, str(bg_path), scale))
    if args.jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            results = list(pool.map(_generate_one, tasks))
    else:
        results = [_generate_one(t) for t in tasks]
    entries = []
    for (index, png, labels, prov, width, height, n_feat, notes), task in zip(results, tasks):
        stem = f"img_{index:04d}"
        atomic_write_bytes(run.out / "images" / f"{stem}.png", png)
        atomic_write_text(run.out / "labels" / f"{stem}.txt", labels)
        atomic_write_text(run.out / "provenance" / f"{stem}.json", prov)
        for note in notes:
            run.warn(f"{stem}: {note}")
        entries.append(ManifestEntry(f"images/{stem}.png", f"labels/{stem}.txt", task[5],
                                     width, height, gen["split"], n_feat,
                                     run.cfg["evaluation"]["thickness_nm"]))
        run.say(f"{stem}: {n_feat} features on {task[3]}")
    manifest_path = run.out / "manifest.txt"
    save_manifest(manifest_path, DatasetManifest(tuple(entries)))
    manifest = load_manifest(manifest_path)
    n_img, n_feat = manifest.counts
    run.say(f"wrote {n_img} images with {n_feat} features; manifest recount ok")
    return run


# -- filter and evaluate ------------------------------------------------------

def _read_predictions(pred_dir: Path, manifest: DatasetManifest, run: Run) -> dict:
    if not pred_dir.is_dir():
        raise CLIError(f"predictions directory {pred_dir} does not exist")
    preds = {}
    for e in manifest.entries:
        path = pred_dir / f"{e.stem}.txt"
        if path.exists():
            records = read_boxes(path)
            if any(not r.is_prediction for r in records):
                raise CLIError(f"{path}: expected 6-field prediction records")
            preds[e.stem] = records
        else:
            run.warn(f"no prediction file for {e.stem}; treating as empty")
            preds[e.stem] = []
    return preds


def _preset(run: Run):
    return cfgmod.threshold_preset(run.cfg)


def cmd_filter(args) -> Run:
    run = _start(args)
    manifest = load_manifest(args.manifest)
    preds = _read_predictions(Path(args.predictions), manifest, run)
    preset = _preset(run)
    policy = run.cfg["evaluation"]["empty_policy"]
    decisions = [apply_filter(preds[e.stem], preset, e.stem, policy) for e in manifest.entries]
    report = filtering_report(decisions)
    atomic_write_text(run.out / "decisions.csv", report.to_csv())
    run.say(report.summary())
    return run


def _eval_images(manifest_path: Path, manifest: DatasetManifest) -> list[EvalImage]:
    root = manifest_path.parent
    return [EvalImage(e.stem, e.width, e.height, e.pixel_scale,
                      tuple(read_boxes(root / e.label)), e.thickness_nm)
            for e in manifest.entries]


def cmd_evaluate(args) -> Run:
    run = _start(args)
    manifest_path = Path(args.manifest)
    manifest = load_manifest(manifest_path)
    preds = _read_predictions(Path(args.predictions), manifest, run)
    images = _eval_images(manifest_path, manifest)
    preset = _preset(run)
    report = evaluate_corpus(preds, images, preset, run.cfg["evaluation"]["empty_policy"])
    atomic_write_text(run.out / "report.csv", report.to_csv())
    atomic_write_text(run.out / "aggregate.csv", report.aggregate_csv())
    atomic_write_text(run.out / "report.txt", report.to_text())
    flagged = sum(1 for r in report.per_image if r.flags)
    if flagged:
        run.warn(f"{flagged} images carry undefined-metric flags (see report.csv)")
    if not args.no_sweep:
        rows = threshold_sweep(preds, images, cfgmod.sweep_grid(run.cfg))
        atomic_write_text(run.out / "sweep.csv", sweep_to_csv(rows))
    run.say(report.to_text().rstrip())
    return run


# -- report -------------------------------------------------------------------

def cmd_report(args) -> Run:
    run = _start(args)
    src = Path(args.evaluation)
    path = src / "report.csv"
    if not path.exists():
        raise CLIError(f"{path} not found; run 'evaluate' first")
    with path.open(newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    conf = io.StringIO()
    conf.write("image_id,image_confidence,f1,passed\n")
    norm = io.StringIO()
    norm.write("image_id,normalized_swelling,swelling_pred_pct,swelling_gt_pct,passed\n")
    for r in sorted(rows, key=lambda r: float(r["image_confidence"])):
        conf.write(f"{r['image_id']},{r['image_confidence']},{r['f1']},{r['passed']}\n")
    for r in rows:
        norm.write(f"{r['image_id']},{r['normalized_swelling']},{r['swelling_pred_pct']},"
                   f"{r['swelling_gt_pct']},{r['passed']}\n")
    atomic_write_text(run.out / "confidence_vs_f1.csv", conf.getvalue())
    atomic_write_text(run.out / "normalized_swelling.csv", norm.getvalue())
    ns = [float(r["normalized_swelling"]) for r in rows]
    ns = [v for v in ns if math.isfinite(v)]
    if ns:
        run.say(f"normalized swelling median {float(np.median(ns)):.3f} over {len(ns)} images")
    run.say(f"wrote plot tables for {len(rows)} images")
    return run


# -- parser -------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config file (defaults apply to missing keys)")
    common.add_argument("--seed", type=int, help="64-bit run seed (overrides config)")
    common.add_argument("--jobs", type=int, default=1, help="worker processes")
    common.add_argument("--out", required=True, help="output directory")

    thresholds = argparse.ArgumentParser(add_help=False)
    thresholds.add_argument("--preset", help="threshold preset: high, standard or low")
    thresholds.add_argument("--individual-thr", type=float, help="custom individual threshold")
    thresholds.add_argument("--image-thr", type=float, help="custom image threshold")

    parser = argparse.ArgumentParser(prog="cavityforge",
                                     description="Synthetic cavity micrographs and evaluation.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", parents=[common], help="build the contrast-profile LUT")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("generate", parents=[common], help="composite a labelled dataset")
    p.add_argument("--lut", required=True, help="LUT file from 'simulate'")
    p.add_argument("--backgrounds", required=True,
                   help=f"directory of clean backgrounds (+ optional {SCALES_FILE})")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("filter", parents=[common, thresholds], help="self-regulation filter")
    p.add_argument("--predictions", required=True, help="directory of <stem>.txt predictions")
    p.add_argument("--manifest", required=True, help="dataset manifest listing the images")
    p.set_defaults(func=cmd_filter)

    p = sub.add_parser("evaluate", parents=[common, thresholds], help="metrics report")
    p.add_argument("--predictions", required=True)
    p.add_argument("--manifest", required=True, help="manifest whose labels are ground truth")
    p.add_argument("--no-sweep", action="store_true", help="skip the threshold sweep")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("report", parents=[common], help="plot-ready tables from 'evaluate'")
    p.add_argument("--evaluation", required=True, help="output directory of 'evaluate'")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.jobs < 1:
        parser.error("--jobs must be >= 1")
    try:
        run = args.func(args)
    except (CLIError,) + HARD_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    run.say(f"done: {run.warnings} warning(s)")
    return 0


if __name__ == "__main__":
    sys.exit(main())
