"""Command-line interface: dataset synthesis, segmentation, and evaluation.

Three subcommands cover the desk-scale experiment loop. `synth` writes a
synthetic dataset (images, 16-bit label maps, grain masks, manifest with
stratified split assignments), `segment` runs the pipeline or the
single-scale baseline over one split, and `eval` scores predictions
against the labels and emits a JSON report plus an aligned text table.
All outputs are byte-reproducible for a fixed config and seed.
"""

from __future__ import annotations

import argparse
import json
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Sequence

import cv2
import numpy as np
import yaml

from .errors import ConfigError, CrystalsegError, EmptyLabelMap, ManifestMismatch
from .metrics import acs, aggregated_jaccard, panoptic_quality, size_errors
from .pipeline import (
    FUSION_STRATEGIES,
    PipelineConfig,
    PredictorSpec,
    segment,
    segment_single_scale_baseline,
)
from .synth import CLASS_RECIPES, SynthParams, generate, stratified_split
from .tracker import TrackerParams

SPLITS = ("train", "val", "test", "all")
MANIFEST_NAME = "manifest.json"
_PNG_OPTS = [cv2.IMWRITE_PNG_COMPRESSION, 3]
MAX_LABEL_ID = 65535

_SYNTH_KEYS = {
    "count", "classes", "fractions", "seed",
    "width", "height", "n_seeds_small", "n_seeds_large",
    "boundary_px", "scratch_count", "noise_sigma", "grain_margin",
}
_SYNTH_OVERRIDE_KEYS = _SYNTH_KEYS - {"count", "classes", "fractions", "seed"}
_PIPELINE_KEYS = {
    "fusion", "t", "h", "patch_size", "schedule_overrides",
    "attention_blur_sigma", "d", "baseline", "overlays",
    "tracker", "predictor",
}
_TRACKER_KEYS = {"n_steps", "step_size", "cluster_radius", "min_instance_px", "h"}
_PREDICTOR_KEYS = {
    "kind", "min_detectable_px", "large_break_factor",
    "noise_deg", "noise_seed", "path",
}


def _check_keys(section: dict, allowed: set, where: str) -> None:
    unknown = sorted(set(section) - allowed)
    if unknown:
        raise ConfigError(f"unknown config key {where}.{unknown[0]}")


def load_config(path: str | None) -> dict:
    """Parse and validate the YAML config document. Missing path means all
    defaults; unknown keys at any level are errors, never warnings."""
    if path is None:
        return {}
    text = Path(path).read_text()
    doc = yaml.safe_load(text)
    if doc is None:
        return {}
    if not isinstance(doc, dict):
        raise ConfigError(f"config root in {path} must be a mapping")
    _check_keys(doc, {"synth", "pipeline"}, "config")
    for name, keys in (("synth", _SYNTH_KEYS), ("pipeline", _PIPELINE_KEYS)):
        section = doc.get(name)
        if section is None:
            continue
        if not isinstance(section, dict):
            raise ConfigError(f"config section {name} must be a mapping")
        _check_keys(section, keys, name)
    pipe = doc.get("pipeline") or {}
    for name, keys in (("tracker", _TRACKER_KEYS), ("predictor", _PREDICTOR_KEYS)):
        sub = pipe.get(name)
        if sub is None:
            continue
        if not isinstance(sub, dict):
            raise ConfigError(f"config section pipeline.{name} must be a mapping")
        _check_keys(sub, keys, f"pipeline.{name}")
    return doc


def pipeline_from_config(
    doc: dict,
    fusion_override: str | None = None,
    seed_override: int | None = None,
) -> PipelineConfig:
    pipe = dict(doc.get("pipeline") or {})
    pipe.pop("baseline", None)
    pipe.pop("overlays", None)
    tracker = pipe.pop("tracker", None)
    predictor = pipe.pop("predictor", None)
    if tracker is not None:
        pipe["tracker"] = TrackerParams(**tracker)
    if predictor is not None:
        pipe["predictor"] = PredictorSpec(**predictor)
    if "t" in pipe:
        pipe["t"] = tuple(float(v) for v in pipe["t"])
    if pipe.get("schedule_overrides") is not None:
        pipe["schedule_overrides"] = tuple(
            float(v) for v in pipe["schedule_overrides"]
        )
    if fusion_override is not None:
        pipe["fusion"] = fusion_override
    cfg = PipelineConfig(**pipe)
    if seed_override is not None:
        cfg = PipelineConfig(
            **{**_pipeline_fields(cfg),
               "predictor": PredictorSpec(
                   **{**_predictor_fields(cfg.predictor), "noise_seed": seed_override}
               )}
        )
    return cfg


def _pipeline_fields(cfg: PipelineConfig) -> dict:
    return {
        "fusion": cfg.fusion, "t": cfg.t, "h": cfg.h,
        "patch_size": cfg.patch_size,
        "schedule_overrides": cfg.schedule_overrides,
        "tracker": cfg.tracker, "predictor": cfg.predictor,
        "attention_blur_sigma": cfg.attention_blur_sigma, "d": cfg.d,
    }


def _predictor_fields(spec: PredictorSpec) -> dict:
    return {
        "kind": spec.kind, "min_detectable_px": spec.min_detectable_px,
        "large_break_factor": spec.large_break_factor,
        "noise_deg": spec.noise_deg, "noise_seed": spec.noise_seed,
        "path": spec.path,
    }


def _write_png(path: Path, array: np.ndarray) -> None:
    if not cv2.imwrite(str(path), array, _PNG_OPTS):
        raise OSError(f"failed to write {path}")


def write_image(path: Path, image: np.ndarray) -> None:
    _write_png(path, cv2.cvtColor(image, cv2.COLOR_RGB2BGR))


def read_image(path: Path) -> np.ndarray:
    raw = cv2.imread(str(path), cv2.IMREAD_COLOR)
    if raw is None:
        raise OSError(f"failed to read image {path}")
    return cv2.cvtColor(raw, cv2.COLOR_BGR2RGB)


def write_labels(path: Path, labels: np.ndarray) -> None:
    if labels.max() > MAX_LABEL_ID:
        raise OSError(f"{path}: {labels.max()} instance ids exceed 16-bit PNG range")
    _write_png(path, labels.astype(np.uint16))


def read_labels(path: Path) -> np.ndarray:
    raw = cv2.imread(str(path), cv2.IMREAD_UNCHANGED)
    if raw is None:
        raise OSError(f"failed to read labels {path}")
    if raw.ndim != 2:
        raise OSError(f"{path} is not a single-channel label map")
    return raw.astype(np.int32)


def _overlay(image: np.ndarray, labels: np.ndarray) -> np.ndarray:
    kernel = np.ones((3, 3), np.uint8)
    lab = labels.astype(np.uint16)
    grad = cv2.morphologyEx(lab, cv2.MORPH_GRADIENT, kernel)
    out = image.copy()
    out[grad > 0] = (255, 40, 40)
    return out


def _sample_params(recipe_class: int, overrides: dict, seed: Sequence[int]) -> SynthParams:
    fields = {**CLASS_RECIPES[recipe_class], **overrides}
    return SynthParams(seed=tuple(seed), **fields)


def _params_record(params: SynthParams) -> dict:
    return {
        "width": params.width, "height": params.height,
        "n_seeds_small": params.n_seeds_small,
        "n_seeds_large": params.n_seeds_large,
        "boundary_px": params.boundary_px,
        "scratch_count": params.scratch_count,
        "noise_sigma": params.noise_sigma,
        "grain_margin": params.grain_margin,
        "seed": list(params.seed) if isinstance(params.seed, tuple) else params.seed,
    }


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def cmd_synth(args) -> int:
    doc = load_config(args.config)
    section = dict(doc.get("synth") or {})
    count = args.count if args.count is not None else int(section.get("count", 9))
    classes = [int(c) for c in section.get("classes", [1, 2, 3])]
    for c in classes:
        if c not in CLASS_RECIPES:
            raise ConfigError(f"no recipe for class {c}")
    fractions = tuple(float(f) for f in section.get("fractions", (0.6, 0.2, 0.2)))
    master = args.seed if args.seed is not None else int(section.get("seed", 0))
    overrides = {k: section[k] for k in _SYNTH_OVERRIDE_KEYS if k in section}
    if count < 1:
        raise ConfigError("count must be >= 1")

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    samples = []
    for i in range(count):
        recipe_class = classes[i % len(classes)]
        params = _sample_params(recipe_class, overrides, (master, i))
        smp = generate(params)
        image_id = f"{i:04d}"
        write_image(out / f"image_{image_id}.png", smp.image)
        write_labels(out / f"labels_{image_id}.png", smp.labels)
        _write_png(out / f"mask_{image_id}.png",
                   smp.grain_mask.astype(np.uint8) * 255)
        samples.append({
            "id": image_id,
            "class": smp.class_id,
            "homogeneity": smp.homogeneity,
            "recipe_class": recipe_class,
            "params": _params_record(params),
        })

    split = stratified_split([s["class"] for s in samples], fractions, master)
    names = {}
    for name in ("train", "val", "test"):
        for idx in getattr(split, name):
            names[idx] = name
    for i, entry in enumerate(samples):
        entry["split"] = names[i]
    manifest = {
        "seed": master,
        "fractions": list(fractions),
        "classes_cycle": classes,
        "all_to_train_classes": sorted(split.all_to_train),
        "samples": samples,
    }
    _write_json(out / MANIFEST_NAME, manifest)
    counts = {n: sum(1 for s in samples if s["split"] == n)
              for n in ("train", "val", "test")}
    print(f"wrote {count} samples to {out} "
          f"(train {counts['train']}, val {counts['val']}, test {counts['test']})")
    return 0


def _load_manifest(dataset: Path) -> dict:
    path = dataset / MANIFEST_NAME
    if not path.exists():
        raise ManifestMismatch(f"no {MANIFEST_NAME} in {dataset}")
    return json.loads(path.read_text())


def _split_entries(manifest: dict, split: str) -> list[dict]:
    if split == "all":
        return list(manifest["samples"])
    return [s for s in manifest["samples"] if s["split"] == split]


def _segment_one(dataset: Path, out: Path, entry: dict, cfg: PipelineConfig,
                 baseline: bool, overlays: bool) -> None:
    image_id = entry["id"]
    image = read_image(dataset / f"image_{image_id}.png")
    labels = read_labels(dataset / f"labels_{image_id}.png")
    run = segment_single_scale_baseline if baseline else segment
    pred = run(image, labels, cfg, image_id=image_id)
    write_labels(out / f"pred_{image_id}.png", pred)
    if overlays:
        write_image(out / f"overlay_{image_id}.png", _overlay(image, pred))


def cmd_segment(args) -> int:
    doc = load_config(args.config)
    cfg = pipeline_from_config(doc, args.fusion, args.seed)
    pipe = doc.get("pipeline") or {}
    baseline = bool(pipe.get("baseline", False))
    overlays = args.overlays or bool(pipe.get("overlays", False))
    dataset = Path(args.dataset)
    manifest = _load_manifest(dataset)
    entries = _split_entries(manifest, args.split)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    errors = []

    def worker(entry):
        try:
            _segment_one(dataset, out, entry, cfg, baseline, overlays)
        except Exception as exc:
            return entry["id"], f"{type(exc).__name__}: {exc}"
        return None

    if args.jobs > 1:
        with ThreadPoolExecutor(max_workers=args.jobs) as pool:
            results = list(pool.map(worker, entries))
    else:
        results = [worker(e) for e in entries]
    errors = [r for r in results if r is not None]
    for image_id, message in errors:
        print(f"error on {image_id}: {message}", file=sys.stderr)
    done = len(entries) - len(errors)
    mode = "baseline" if baseline else cfg.fusion
    print(f"segmented {done}/{len(entries)} {args.split} images ({mode}) into {out}")
    return 1 if errors else 0


def _mean_std(values: Sequence[float]) -> dict:
    arr = np.asarray(values, float)
    return {"mean": float(arr.mean()), "std": float(arr.std())}


def _aggregate(rows: list[dict]) -> dict:
    keys = ("pq", "aji", "acs_gt", "acs_pred", "mae", "mre")
    agg = {k: _mean_std([r[k] for r in rows]) for k in keys}
    agg["count"] = len(rows)
    return agg


def _report_text(report: dict) -> str:
    header = ("id", "class", "homog", "PQ", "AJI",
              "ACS_gt", "ACS_pred", "MAE", "MRE")
    lines = ["{:<6} {:>5} {:>7} {:>7} {:>7} {:>8} {:>8} {:>7} {:>7}".format(*header)]
    for r in report["rows"]:
        lines.append(
            "{:<6} {:>5} {:>7.3f} {:>7.3f} {:>7.3f} {:>8.2f} {:>8.2f} "
            "{:>7.2f} {:>7.3f}".format(
                r["id"], r["class"], r["homogeneity"], r["pq"], r["aji"],
                r["acs_gt"], r["acs_pred"], r["mae"], r["mre"],
            )
        )
    lines.append("")
    lines.append("{:<9} {:>5} {:>15} {:>15} {:>15}".format(
        "group", "n", "PQ", "AJI", "MRE"))
    for name, agg in report["aggregates"].items():
        lines.append(
            "{:<9} {:>5} {:>7.3f}±{:<7.3f} {:>7.3f}±{:<7.3f} {:>7.3f}±{:<7.3f}".format(
                name, agg["count"],
                agg["pq"]["mean"], agg["pq"]["std"],
                agg["aji"]["mean"], agg["aji"]["std"],
                agg["mre"]["mean"], agg["mre"]["std"],
            )
        )
    return "\n".join(lines) + "\n"


def cmd_eval(args) -> int:
    dataset = Path(args.dataset)
    pred_dir = Path(args.pred)
    manifest = _load_manifest(dataset)
    entries = _split_entries(manifest, args.split)
    if not entries:
        raise ManifestMismatch(f"split {args.split} has no images to score")
    known = {s["id"] for s in manifest["samples"]}
    for path in sorted(pred_dir.glob("pred_*.png")):
        stem = path.stem.removeprefix("pred_")
        if stem not in known:
            raise ManifestMismatch(f"prediction {path.name} has no manifest entry")

    rows = []
    for entry in entries:
        image_id = entry["id"]
        pred_path = pred_dir / f"pred_{image_id}.png"
        if not pred_path.exists():
            raise ManifestMismatch(
                f"no prediction for {args.split} image {image_id} in {pred_dir}"
            )
        gt = read_labels(dataset / f"labels_{image_id}.png")
        pred = read_labels(pred_path)
        pq, _ = panoptic_quality(gt, pred)
        mae, mre = size_errors(gt, pred)
        try:
            acs_pred = acs(pred)
        except EmptyLabelMap:
            acs_pred = 0.0
        rows.append({
            "id": image_id,
            "class": entry["class"],
            "homogeneity": entry["homogeneity"],
            "pq": pq,
            "aji": aggregated_jaccard(gt, pred),
            "acs_gt": acs(gt),
            "acs_pred": acs_pred,
            "mae": mae,
            "mre": mre,
        })

    aggregates = {"overall": _aggregate(rows)}
    for cls in sorted({r["class"] for r in rows}):
        aggregates[f"class_{cls}"] = _aggregate(
            [r for r in rows if r["class"] == cls]
        )
    report = {"split": args.split, "rows": rows, "aggregates": aggregates}
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _write_json(out / "report.json", report)
    (out / "report.txt").write_text(_report_text(report))
    overall = aggregates["overall"]
    print(f"evaluated {len(rows)} {args.split} images: "
          f"PQ {overall['pq']['mean']:.3f}±{overall['pq']['std']:.3f}, "
          f"MRE {overall['mre']['mean']:.3f} -> {out / 'report.json'}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="crystalseg",
        description="Synthetic polycrystal segmentation experiments",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    synth = sub.add_parser("synth", help="generate a synthetic dataset")
    synth.add_argument("--config", default=None, help="YAML config path")
    synth.add_argument("--out", required=True, help="output dataset directory")
    synth.add_argument("--seed", type=int, default=None, help="master RNG seed")
    synth.add_argument("--count", type=int, default=None, help="number of samples")
    synth.add_argument("--jobs", type=int, default=1, help="unused; accepted for symmetry")
    synth.set_defaults(func=cmd_synth)

    seg = sub.add_parser("segment", help="segment one dataset split")
    seg.add_argument("--config", default=None, help="YAML config path")
    seg.add_argument("--dataset", required=True, help="dataset directory")
    seg.add_argument("--out", required=True, help="prediction output directory")
    seg.add_argument("--seed", type=int, default=None,
                     help="override the noisy-oracle seed")
    seg.add_argument("--fusion", choices=FUSION_STRATEGIES, default=None)
    seg.add_argument("--split", choices=SPLITS, default="test")
    seg.add_argument("--overlays", action="store_true",
                     help="write boundary overlay renders")
    seg.add_argument("--jobs", type=int, default=1, help="parallel images")
    seg.set_defaults(func=cmd_segment)

    ev = sub.add_parser("eval", help="score predictions against labels")
    ev.add_argument("--config", default=None, help="YAML config path (unused)")
    ev.add_argument("--dataset", required=True, help="dataset directory")
    ev.add_argument("--pred", required=True, help="prediction directory")
    ev.add_argument("--out", required=True, help="report output directory")
    ev.add_argument("--seed", type=int, default=None, help="unused; accepted for symmetry")
    ev.add_argument("--split", choices=SPLITS, default="test")
    ev.add_argument("--jobs", type=int, default=1, help="unused; accepted for symmetry")
    ev.set_defaults(func=cmd_eval)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except CrystalsegError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
