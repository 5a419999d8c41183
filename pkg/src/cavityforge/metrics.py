"""Pixel-wise detection metrics, swelling, aggregation and threshold sweeps."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .dataset_io import DEFAULT_THICKNESS_NM, BoxRecord
from .regulation import ThresholdPreset, apply_filter

SPHERE_FACTOR = math.pi / 6.0


class MetricError(ValueError):
    pass


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def box_pixels(box: BoxRecord, width: int, height: int) -> tuple[int, int, int, int]:
    """Half-open integer rectangle (x0, y0, x1, y1) covered by a normalized box."""
    x0 = _round_half_up((box.cx - box.w / 2.0) * width)
    x1 = _round_half_up((box.cx + box.w / 2.0) * width)
    y0 = _round_half_up((box.cy - box.h / 2.0) * height)
    y1 = _round_half_up((box.cy + box.h / 2.0) * height)
    return (min(max(x0, 0), width), min(max(y0, 0), height),
            min(max(x1, 0), width), min(max(y1, 0), height))


def rasterize(objects, width: int, height: int) -> np.ndarray:
    """Union of filled boxes as a (height, width) boolean mask; a mask passes through."""
    if isinstance(objects, np.ndarray):
        if objects.shape != (height, width):
            raise MetricError(f"mask shape {objects.shape} != {(height, width)}")
        return objects.astype(bool)
    out = np.zeros((height, width), dtype=bool)
    for box in objects:
        x0, y0, x1, y1 = box_pixels(box, width, height)
        out[y0:y1, x0:x1] = True
    return out


@dataclass(frozen=True)
class PixelConfusion:
    tp: int
    tn: int
    fp: int
    fn: int

    @property
    def total(self) -> int:
        return self.tp + self.tn + self.fp + self.fn


def confusion(pred_mask: np.ndarray, gt_mask: np.ndarray) -> PixelConfusion:
    pred = np.asarray(pred_mask, dtype=bool)
    gt = np.asarray(gt_mask, dtype=bool)
    if pred.shape != gt.shape:
        raise MetricError(f"mask shapes differ: {pred.shape} vs {gt.shape}")
    tp = int(np.count_nonzero(pred & gt))
    fp = int(np.count_nonzero(pred & ~gt))
    fn = int(np.count_nonzero(~pred & gt))
    return PixelConfusion(tp, pred.size - tp - fp - fn, fp, fn)


@dataclass(frozen=True)
class PRF1:
    precision: float
    recall: float
    f1: float
    precision_undefined: bool = False
    recall_undefined: bool = False

    @property
    def flagged(self) -> bool:
        return self.precision_undefined or self.recall_undefined


def prf1(c: PixelConfusion) -> PRF1:
    """Precision, recall, F1; undefined ratios become 0 with a flag."""
    p_undef = c.tp + c.fp == 0
    r_undef = c.tp + c.fn == 0
    p = 0.0 if p_undef else c.tp / (c.tp + c.fp)
    r = 0.0 if r_undef else c.tp / (c.tp + c.fn)
    f1 = 0.0 if p + r == 0 else 2.0 * p * r / (p + r)
    return PRF1(p, r, f1, p_undef, r_undef)


@dataclass(frozen=True)
class SwellingInput:
    diameters_d: tuple[float, ...]
    area_S: float
    thickness_delta: float = DEFAULT_THICKNESS_NM


def swelling(inp: SwellingInput) -> float:
    """Volumetric swelling in percent for spherical cavities of the given diameters (nm)."""
    d = np.asarray(inp.diameters_d, dtype=np.float64)
    if d.size and not np.all(d > 0):
        raise MetricError("cavity diameters must be positive")
    if not (inp.area_S > 0 and inp.thickness_delta > 0):
        raise MetricError("image area and thickness must be positive")
    v = SPHERE_FACTOR * math.fsum(d ** 3)
    denom = inp.area_S * inp.thickness_delta - v
    if denom <= 0:
        raise MetricError("cavity volume exceeds the imaged volume")
    return 100.0 * v / denom


def box_diameters(boxes: Sequence[BoxRecord], width: int, height: int,
                  pixel_scale: float) -> np.ndarray:
    """Mean of perpendicular box side lengths, in nm."""
    return np.array([(b.w * width + b.h * height) / 2.0 * pixel_scale for b in boxes],
                    dtype=np.float64)


def image_area_nm2(width: int, height: int, pixel_scale: float) -> float:
    return width * height * pixel_scale * pixel_scale


def swelling_from_boxes(boxes: Sequence[BoxRecord], width: int, height: int,
                        pixel_scale: float, thickness_nm: float = DEFAULT_THICKNESS_NM) -> float:
    d = box_diameters(boxes, width, height, pixel_scale)
    return swelling(SwellingInput(tuple(d[d > 0]), image_area_nm2(width, height, pixel_scale),
                                  thickness_nm))


def normalized_swelling(pred: float, gt: float) -> float:
    """pred / gt; NaN (undefined) when the ground truth is zero."""
    if gt == 0:
        return math.nan
    return pred / gt


@dataclass(frozen=True)
class Aggregate:
    n: int
    mean_pred: float
    mean_gt: float
    r2: float
    rmse: float
    r2_undefined: bool = False


def fmean(values) -> float:
    values = list(values)
    return math.fsum(values) / len(values) if values else math.nan


def aggregate(pred, gt) -> Aggregate:
    """Means, coefficient of determination of pred against gt, and RMSE.

    Sums use ``math.fsum`` so the result does not depend on input order.
    """
    pred = [float(v) for v in pred]
    gt = [float(v) for v in gt]
    if len(pred) != len(gt):
        raise MetricError("prediction and ground truth lengths differ")
    n = len(gt)
    if n == 0:
        return Aggregate(0, math.nan, math.nan, math.nan, math.nan, True)
    mean_gt = fmean(gt)
    ss_res = math.fsum((p - g) ** 2 for p, g in zip(pred, gt))
    ss_tot = math.fsum((g - mean_gt) ** 2 for g in gt)
    rmse = math.sqrt(ss_res / n)
    if n < 2 or ss_tot == 0:
        return Aggregate(n, fmean(pred), mean_gt, math.nan, rmse, True)
    return Aggregate(n, fmean(pred), mean_gt, 1.0 - ss_res / ss_tot, rmse)


def relative_feature_size(boxes: Sequence[BoxRecord]) -> float:
    """Mean of (w + h)/2 over boxes, in percent of the image size; NaN when empty."""
    if not boxes:
        return math.nan
    return 100.0 * fmean((b.w + b.h) / 2.0 for b in boxes)


# -- per-image evaluation -----------------------------------------------------

@dataclass(frozen=True, eq=False)
class EvalImage:
    image_id: str
    width: int
    height: int
    pixel_scale: float
    gt_boxes: tuple[BoxRecord, ...]
    thickness_nm: float = DEFAULT_THICKNESS_NM
    gt_mask: np.ndarray | None = None

    def gt_raster(self) -> np.ndarray:
        if self.gt_mask is not None:
            return rasterize(self.gt_mask, self.width, self.height)
        return rasterize(self.gt_boxes, self.width, self.height)


@dataclass(frozen=True)
class ImageMetrics:
    image_id: str
    precision: float
    recall: float
    f1: float
    swelling_pred: float
    swelling_gt: float
    normalized_swelling: float
    image_confidence: float
    passed: bool
    n_pred: int
    n_gt: int
    flags: tuple[str, ...] = ()


def evaluate_image(predictions: Sequence[BoxRecord], image: EvalImage,
                   preset: ThresholdPreset, empty_policy: str = "fail") -> ImageMetrics:
    decision = apply_filter(predictions, preset, image.image_id, empty_policy)
    kept = decision.surviving_predictions
    c = confusion(rasterize(kept, image.width, image.height), image.gt_raster())
    m = prf1(c)
    sw_pred = swelling_from_boxes(kept, image.width, image.height, image.pixel_scale,
                                  image.thickness_nm)
    sw_gt = swelling_from_boxes(image.gt_boxes, image.width, image.height, image.pixel_scale,
                                image.thickness_nm)
    flags = []
    if m.precision_undefined:
        flags.append("precision_undefined")
    if m.recall_undefined:
        flags.append("recall_undefined")
    norm = normalized_swelling(sw_pred, sw_gt)
    if math.isnan(norm):
        flags.append("gt_swelling_zero")
    return ImageMetrics(image.image_id, m.precision, m.recall, m.f1, sw_pred, sw_gt, norm,
                        decision.image_confidence, decision.passed, len(kept),
                        len(image.gt_boxes), tuple(flags))


@dataclass(frozen=True)
class AggregateRow:
    label: str
    n_images: int
    mean_precision: float
    mean_recall: float
    mean_f1: float
    r2: float
    rmse: float
    filtering_rate: float


def _aggregate_rows(label: str, rows: Sequence[ImageMetrics], filtering_rate: float) -> AggregateRow:
    agg = aggregate([r.swelling_pred for r in rows], [r.swelling_gt for r in rows])
    return AggregateRow(label, len(rows), fmean(r.precision for r in rows),
                        fmean(r.recall for r in rows), fmean(r.f1 for r in rows),
                        agg.r2, agg.rmse, filtering_rate)


@dataclass(frozen=True)
class EvaluationReport:
    per_image: tuple[ImageMetrics, ...]
    unfiltered: AggregateRow
    filtered: AggregateRow
    preset: ThresholdPreset
    gt_mode: str = "boxes"

    def to_csv(self) -> str:
        cols = ("image_id,precision,recall,f1,swelling_pred_pct,swelling_gt_pct,"
                "normalized_swelling,image_confidence,passed,n_pred,n_gt,flags")
        lines = [cols]
        for r in self.per_image:
            lines.append(",".join([
                r.image_id, f"{r.precision:.6f}", f"{r.recall:.6f}", f"{r.f1:.6f}",
                f"{r.swelling_pred:.6f}", f"{r.swelling_gt:.6f}", f"{r.normalized_swelling:.6f}",
                f"{r.image_confidence:.6f}", str(int(r.passed)), str(r.n_pred), str(r.n_gt),
                ";".join(r.flags)]))
        return "\n".join(lines) + "\n"

    def aggregate_csv(self) -> str:
        lines = ["set,n_images,mean_precision,mean_recall,mean_f1,r2,rmse_pct,filtering_rate"]
        for a in (self.unfiltered, self.filtered):
            lines.append(f"{a.label},{a.n_images},{a.mean_precision:.6f},{a.mean_recall:.6f},"
                         f"{a.mean_f1:.6f},{a.r2:.6f},{a.rmse:.6f},{a.filtering_rate:.6f}")
        return "\n".join(lines) + "\n"

    def to_text(self) -> str:
        p = self.preset
        out = [f"preset {p.name}: individual {p.individual_threshold}, "
               f"image {p.image_threshold}; ground truth from {self.gt_mode}",
               f"{'set':<14}{'images':>7}{'P':>8}{'R':>8}{'F1':>8}{'R2':>8}{'RMSE%':>9}"
               f"{'filtered':>10}"]
        for a in (self.unfiltered, self.filtered):
            out.append(f"{a.label:<14}{a.n_images:>7d}{a.mean_precision:>8.3f}"
                       f"{a.mean_recall:>8.3f}{a.mean_f1:>8.3f}{a.r2:>8.3f}{a.rmse:>9.4f}"
                       f"{100 * a.filtering_rate:>9.0f}%")
        return "\n".join(out) + "\n"


def evaluate_corpus(predictions: Mapping[str, Sequence[BoxRecord]], images: Sequence[EvalImage],
                    preset: ThresholdPreset, empty_policy: str = "fail") -> EvaluationReport:
    """Per-image metrics plus aggregates with and without image-level filtering.

    Predictions below the individual threshold are always dropped; the
    filtered aggregate further keeps only images that pass the image threshold.
    """
    ids = {im.image_id for im in images}
    missing = ids - set(predictions)
    if missing:
        raise MetricError(f"no predictions for images: {', '.join(sorted(missing))}")
    rows = tuple(sorted((evaluate_image(predictions[im.image_id], im, preset, empty_policy)
                         for im in images), key=lambda r: r.image_id))
    if not rows:
        raise MetricError("empty evaluation corpus")
    passed = [r for r in rows if r.passed]
    rate = 1.0 - len(passed) / len(rows)
    gt_mode = "masks" if any(im.gt_mask is not None for im in images) else "boxes"
    return EvaluationReport(rows, _aggregate_rows("unfiltered", rows, 0.0),
                            _aggregate_rows("self-regulated", passed, rate), preset, gt_mode)


@dataclass(frozen=True)
class SweepRow:
    individual_thr: float
    image_thr: float
    filtering_rate: float
    mean_f1: float
    mean_rmse: float


def threshold_sweep(predictions: Mapping[str, Sequence[BoxRecord]], images: Sequence[EvalImage],
                    grid: Sequence[tuple[float, float]]) -> list[SweepRow]:
    """One row per (individual, image) threshold pair, in grid order.

    ``mean_f1`` is the mean per-image F1 over surviving images and
    ``mean_rmse`` the swelling RMSE over them; both are NaN when every image
    is filtered out.
    """
    rows = []
    for ind, img in grid:
        report = evaluate_corpus(predictions, images, ThresholdPreset("sweep", ind, img))
        rows.append(SweepRow(ind, img, report.filtered.filtering_rate, report.filtered.mean_f1,
                             report.filtered.rmse if report.filtered.n_images else math.nan))
    return rows


def sweep_to_csv(rows: Sequence[SweepRow]) -> str:
    lines = ["individual_thr,image_thr,filtering_rate,mean_F1,mean_RMSE"]
    for r in rows:
        lines.append(f"{r.individual_thr:.6f},{r.image_thr:.6f},{r.filtering_rate:.6f},"
                     f"{r.mean_f1:.6f},{r.mean_rmse:.6f}")
    return "\n".join(lines) + "\n"


@dataclass(frozen=True)
class RoundRobin:
    names: tuple[str, ...]
    f1: np.ndarray
    swelling: dict = field(default_factory=dict)


def round_robin(label_sets: Sequence[Mapping[str, Sequence[BoxRecord]]],
                images: Sequence[EvalImage], names: Sequence[str] | None = None) -> RoundRobin:
    """Mean per-image F1 of set i scored against set j as ground truth.

    The diagonal is 1 by definition. ``images`` supplies geometry only; its
    ground truth is ignored.
    """
    n = len(label_sets)
    names = tuple(names) if names is not None else tuple(f"set{i}" for i in range(n))
    ids = sorted(im.image_id for im in images)
    for k, s in enumerate(label_sets):
        if sorted(s) != ids:
            raise MetricError(f"label set {names[k]} covers different image ids")
    geo = {im.image_id: im for im in images}
    rasters = [{i: rasterize(s[i], geo[i].width, geo[i].height) for i in ids} for s in label_sets]
    mat = np.eye(n)
    for a in range(n):
        for b in range(n):
            if a != b:
                mat[a, b] = fmean(prf1(confusion(rasters[a][i], rasters[b][i])).f1 for i in ids)
    sw = {names[k]: {i: swelling_from_boxes(s[i], geo[i].width, geo[i].height,
                                            geo[i].pixel_scale, geo[i].thickness_nm)
                     for i in ids}
          for k, s in enumerate(label_sets)}
    return RoundRobin(names, mat, sw)
