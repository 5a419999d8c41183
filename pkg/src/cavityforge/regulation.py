"""Image confidence score and dual-threshold self-regulation.

The image score is the box-area weighted mean of detection confidences. Each
input is read as its shortest decimal representation (box files are decimal
text) and the score is accumulated in exact rational arithmetic, so the
inclusive threshold test and the preset nesting guarantee do not depend on
summation order or rounding.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from fractions import Fraction
from typing import Sequence

from .dataset_io import BoxRecord

EMPTY_FAILS = "fail"
EMPTY_PASSES = "pass-through"


class RegulationError(ValueError):
    pass


@dataclass(frozen=True)
class ThresholdPreset:
    name: str
    individual_threshold: float
    image_threshold: float

    def __post_init__(self):
        for v in (self.individual_threshold, self.image_threshold):
            if not 0.0 <= v <= 1.0:
                raise RegulationError(f"threshold {v} outside [0, 1]")


HIGH_INCLUSIVITY = ThresholdPreset("high", 0.45, 0.65)
STANDARD = ThresholdPreset("standard", 0.4, 0.7)
LOW_INCLUSIVITY = ThresholdPreset("low", 0.35, 0.75)
PRESETS = {p.name: p for p in (HIGH_INCLUSIVITY, STANDARD, LOW_INCLUSIVITY)}


def get_preset(name: str) -> ThresholdPreset:
    try:
        return PRESETS[name.lower()]
    except KeyError:
        raise RegulationError(f"unknown preset {name!r}; valid: {', '.join(PRESETS)}") from None


def custom_preset(individual: float, image: float, name: str = "custom") -> ThresholdPreset:
    if individual > image:
        warnings.warn(f"individual threshold {individual} exceeds image threshold {image}",
                      stacklevel=2)
    return ThresholdPreset(name, individual, image)


def _dec(x: float) -> Fraction:
    return Fraction(repr(float(x)))


def _exact_score(predictions: Sequence[BoxRecord]) -> Fraction | None:
    num = Fraction(0)
    den = Fraction(0)
    for p in predictions:
        if p.confidence is None:
            raise RegulationError("image confidence needs predictions with confidence values")
        area = _dec(p.w) * _dec(p.h)
        num += area * _dec(p.confidence)
        den += area
    if den == 0:
        if predictions:
            # all boxes degenerate: fall back to the plain mean
            return sum(_dec(p.confidence) for p in predictions) / len(predictions)
        return None
    return num / den


def image_confidence(predictions: Sequence[BoxRecord]) -> float:
    """Sum(w h c) / sum(w h); 0 for an empty list."""
    score = _exact_score(list(predictions))
    return 0.0 if score is None else float(score)


@dataclass(frozen=True)
class FilterDecision:
    image_id: str
    surviving_predictions: tuple[BoxRecord, ...]
    image_confidence: float
    passed: bool
    preset: ThresholdPreset
    n_predictions: int = 0


def apply_filter(predictions: Sequence[BoxRecord], preset: ThresholdPreset,
                 image_id: str = "", empty_policy: str = EMPTY_FAILS) -> FilterDecision:
    """Drop predictions below the individual threshold, score the rest, compare (>=)."""
    if empty_policy not in (EMPTY_FAILS, EMPTY_PASSES):
        raise RegulationError(f"unknown empty policy {empty_policy!r}")
    predictions = list(predictions)
    for p in predictions:
        if p.confidence is None:
            raise RegulationError(f"{image_id}: label record where a prediction was expected")
    floor = _dec(preset.individual_threshold)
    survivors = tuple(p for p in predictions if _dec(p.confidence) >= floor)
    score = _exact_score(survivors)
    if score is None:
        passed = empty_policy == EMPTY_PASSES
        value = 0.0
    else:
        passed = score >= _dec(preset.image_threshold)
        value = float(score)
    return FilterDecision(image_id, survivors, value, passed, preset, len(predictions))


@dataclass(frozen=True)
class FilteringReport:
    total: int
    failed: int
    rows: tuple[FilterDecision, ...]

    @property
    def rate(self) -> float:
        return self.failed / self.total

    @property
    def rate_percent(self) -> int:
        """Filtering rate rounded half up to a whole percent."""
        return int(math.floor(Fraction(100 * self.failed, self.total) + Fraction(1, 2)))

    def to_csv(self) -> str:
        lines = ["image_id,n_predictions,n_surviving,image_confidence,passed"]
        for d in self.rows:
            lines.append(f"{d.image_id},{d.n_predictions},{len(d.surviving_predictions)},"
                         f"{d.image_confidence:.6f},{int(d.passed)}")
        return "\n".join(lines) + "\n"

    def summary(self) -> str:
        preset = self.rows[0].preset
        return (f"preset {preset.name} ({preset.individual_threshold} & "
                f"{preset.image_threshold}): {self.failed}/{self.total} images filtered "
                f"({self.rate_percent}%)")


def filtering_report(decisions: Sequence[FilterDecision]) -> FilteringReport:
    decisions = tuple(sorted(decisions, key=lambda d: d.image_id))
    if not decisions:
        raise RegulationError("filtering report needs at least one decision")
    failed = sum(1 for d in decisions if not d.passed)
    return FilteringReport(len(decisions), failed, decisions)
