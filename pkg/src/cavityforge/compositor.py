"""Place simulated cavities into clean experimental backgrounds.

Each feature is simulated (LUT lookup), rotated to the background's pixel
scale, warped, labelled, passed through the detector model, scaled to the
local background level and finally Poisson-blended into its footprint. The
footprint is a disc covering the patch out to where its profile stays within
5% of the background level, enlarged by the class's maximum warp.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import spsolve

from . import seeding
from .autolabel import (SQUARE_FALLBACK, SQUARE_SCALE, LabelingError, LabelMask, label_patch,
                        mask_to_box)
from .dataset_io import BoxRecord
from .detector import DetectorParams, enhance
from .lut import ProfileLUT, lut_lookup
from .patches import (DEFAULT_SIZE_CLASSES, CavityPatch, PatchError, SizeClass, WarpError,
                      classify_size, rotate_profile, warp_patch, warped_box_diameter)
from .physics import ContrastProfile

DEFAULT_SCALE_RANGE = (0.079, 0.11)
DEFAULT_SIDE_RANGE = (1024, 4096)
DEFAULT_MARGIN_PX = 2
DEFAULT_JITTER = 0.1
MAX_PLACEMENT_ATTEMPTS = 1000
MAX_FILL_FRACTION = 0.4
MAX_DROP_FRACTION = 0.1
TAIL_TOLERANCE = 0.05
BLEND_BORDER_PX = 2
NORMALIZE_RING_PX = 8
BLEND_TOLERANCE = 1e-6


class CompositionError(RuntimeError):
    pass


class PlacementError(CompositionError):
    pass


class BlendError(CompositionError):
    def __init__(self, message: str, residual: float = math.nan):
        super().__init__(message)
        self.residual = residual

    def __reduce__(self):
        return type(self), (str(self), self.residual)


class NormalizationWarning(UserWarning):
    pass


@dataclass(frozen=True, eq=False)
class BackgroundImage:
    pixels: np.ndarray
    pixel_scale: float
    source_id: str = ""

    def __post_init__(self):
        if self.pixels.ndim != 2:
            raise CompositionError("background must be a 2D grayscale raster")
        if self.pixels.dtype not in (np.uint8, np.uint16):
            raise CompositionError(f"background dtype {self.pixels.dtype} is not 8- or 16-bit")
        if not self.pixel_scale > 0:
            raise CompositionError("pixel_scale must be positive")

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def bit_max(self) -> int:
        return int(np.iinfo(self.pixels.dtype).max)

    @property
    def area_um2(self) -> float:
        return self.width * self.height * (self.pixel_scale * 1e-3) ** 2


def check_background(bg: BackgroundImage, scale_range=DEFAULT_SCALE_RANGE,
                     side_range=DEFAULT_SIDE_RANGE) -> None:
    lo, hi = scale_range
    if not lo <= bg.pixel_scale <= hi:
        raise CompositionError(f"{bg.source_id}: pixel scale {bg.pixel_scale} nm/px "
                               f"outside [{lo}, {hi}]")
    for side in bg.pixels.shape:
        if not side_range[0] <= side <= side_range[1]:
            raise CompositionError(f"{bg.source_id}: side {side} px outside {list(side_range)}")


# -- size and defocus distributions -------------------------------------------

@dataclass(frozen=True)
class LogNormalSizes:
    """Log-normal cavity radii, truncated to [min_nm, max_nm] by redrawing."""

    median_nm: float = 8.0
    sigma: float = 0.4
    min_nm: float = 1.0
    max_nm: float = 50.0

    def __post_init__(self):
        if not (0 < self.min_nm <= self.median_nm <= self.max_nm and self.sigma >= 0):
            raise CompositionError("log-normal sizes need 0 < min <= median <= max, sigma >= 0")

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        out = np.empty(0)
        mu = math.log(self.median_nm)
        for _ in range(1000):
            if out.size >= n:
                break
            draw = rng.lognormal(mu, self.sigma, size=max(2 * (n - out.size), 8))
            out = np.concatenate([out, draw[(draw >= self.min_nm) & (draw <= self.max_nm)]])
        else:
            raise CompositionError("size truncation window holds too little probability mass")
        return out[:n]


@dataclass(frozen=True)
class HistogramSizes:
    """Radii drawn from a histogram, uniform within each bin."""

    edges_nm: tuple[float, ...]
    weights: tuple[float, ...]

    def __post_init__(self):
        if len(self.edges_nm) != len(self.weights) + 1 or not self.weights:
            raise CompositionError("histogram needs len(edges) == len(weights) + 1")
        if np.any(np.diff(self.edges_nm) <= 0) or self.edges_nm[0] <= 0:
            raise CompositionError("histogram edges must be positive and increasing")
        if min(self.weights) < 0 or sum(self.weights) <= 0:
            raise CompositionError("histogram weights must be non-negative with positive sum")

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        p = np.asarray(self.weights, dtype=np.float64)
        bins = rng.choice(p.size, size=n, p=p / p.sum())
        edges = np.asarray(self.edges_nm, dtype=np.float64)
        return rng.uniform(edges[bins], edges[bins + 1])


# -- placement ----------------------------------------------------------------

@dataclass(frozen=True)
class PlanEntry:
    patch_id: int
    radius_nm: float
    defocus_um: float
    center: tuple[int, int]  # (row, col)
    half: int

    @property
    def box(self) -> tuple[int, int, int, int]:
        """Half-open pixel box (x0, y0, x1, y1)."""
        cy, cx = self.center
        return cx - self.half, cy - self.half, cx + self.half + 1, cy + self.half + 1


@dataclass(frozen=True)
class PlacementPlan:
    entries: tuple[PlanEntry, ...]
    target_count: int
    margin_px: int
    unplaced: int = 0
    base_defocus_um: float = math.nan


def boxes_conflict(a: PlanEntry, b: PlanEntry, margin_px: int) -> bool:
    """True when the two boxes, each dilated by ``margin_px``, share a pixel."""
    reach = a.half + b.half + 2 * margin_px
    return (abs(a.center[0] - b.center[0]) <= reach and
            abs(a.center[1] - b.center[1]) <= reach)


def sample_plan(bg: BackgroundImage, sizes, base_defocus_um: float, density_per_um2: float,
                seed, *, footprint: Callable[[float, float], int],
                margin_px: int = DEFAULT_MARGIN_PX, jitter: float = DEFAULT_JITTER,
                max_attempts: int = MAX_PLACEMENT_ATTEMPTS,
                target_count: int | None = None) -> PlacementPlan:
    """Draw feature sizes and defocus values and place their footprints.

    The feature count is ``round(density * area)`` unless ``target_count`` is
    given. Defocus is the base value times ``1 + U(-jitter, jitter)``.
    Footprints are placed largest first by rejection sampling of uniform
    centres; features that cannot be placed within ``max_attempts`` tries
    are counted in ``unplaced``.
    """
    if density_per_um2 < 0:
        raise PlacementError("density must be non-negative")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    n = target_count if target_count is not None else int(round(density_per_um2 * bg.area_um2))
    if n == 0:
        return PlacementPlan((), 0, margin_px, 0, base_defocus_um)
    radii = sizes.sample(rng, n)
    defocus = base_defocus_um * (1.0 + rng.uniform(-jitter, jitter, size=n))
    halves = np.array([footprint(float(r), float(z)) for r, z in zip(radii, defocus)], dtype=int)
    fill = float(np.sum((2 * halves + 1) ** 2)) / (bg.width * bg.height)
    if fill >= MAX_FILL_FRACTION:
        raise PlacementError(f"footprints would cover {100 * fill:.0f}% of the image; "
                             f"limit is {100 * MAX_FILL_FRACTION:.0f}%")

    placed_c = np.empty((0, 2), dtype=np.int64)
    placed_h = np.empty(0, dtype=np.int64)
    entries = []
    for i in np.argsort(-halves, kind="stable"):
        h = int(halves[i])
        if 2 * h + 1 > min(bg.width, bg.height):
            continue
        for _ in range(max_attempts):
            cy = int(rng.integers(h, bg.height - h))
            cx = int(rng.integers(h, bg.width - h))
            reach = placed_h + h + 2 * margin_px
            clash = ((np.abs(placed_c[:, 0] - cy) <= reach) &
                     (np.abs(placed_c[:, 1] - cx) <= reach))
            if not clash.any():
                placed_c = np.vstack([placed_c, [cy, cx]])
                placed_h = np.append(placed_h, h)
                entries.append(PlanEntry(int(i), float(radii[i]), float(defocus[i]), (cy, cx), h))
                break
    entries.sort(key=lambda e: e.patch_id)
    return PlacementPlan(tuple(entries), n, margin_px, n - len(entries), base_defocus_um)


def footprint_half(profile: ContrastProfile, pixel_scale: float, max_warp: float) -> int:
    tail = max(profile.support_rho(TAIL_TOLERANCE), profile.fringe_rho())
    reach = tail * profile.radius_nm / pixel_scale * (1.0 + max_warp)
    return int(math.ceil(reach)) + BLEND_BORDER_PX


def lut_footprint(lut: ProfileLUT, pixel_scale: float,
                  size_classes=DEFAULT_SIZE_CLASSES) -> Callable[[float, float], int]:
    cache: dict = {}

    def half(radius_nm: float, defocus_um: float) -> int:
        profile = lut_lookup(lut, radius_nm, defocus_um)
        key = (profile.radius_nm, profile.defocus_um)
        if key not in cache:
            cls = classify_size(profile.radius_nm, size_classes)
            cache[key] = footprint_half(profile, pixel_scale, cls.max_warp_amplitude)
        return cache[key]

    return half


# -- intensity normalization and blending -------------------------------------

def _ring_mean(pixels: np.ndarray, box: tuple[int, int, int, int], ring_px: int):
    x0, y0, x1, y1 = box
    h, w = pixels.shape
    X0, Y0 = max(x0 - ring_px, 0), max(y0 - ring_px, 0)
    X1, Y1 = min(x1 + ring_px, w), min(y1 + ring_px, h)
    outer = pixels[Y0:Y1, X0:X1].astype(np.float64)
    keep = np.ones(outer.shape, dtype=bool)
    keep[y0 - Y0:y1 - Y0, x0 - X0:x1 - X0] = False
    return outer[keep]


def normalize_patch(patch: CavityPatch, bg: BackgroundImage, center: tuple[int, int], *,
                    pixels: np.ndarray | None = None,
                    ring_px: int = NORMALIZE_RING_PX) -> np.ndarray:
    """Scale a background-relative patch to raster units.

    The anchor is the mean of the ring of width ``ring_px`` around the patch
    box; the scaled patch is clamped to the raster's bit depth. A ring with
    zero variance (flat or saturated) falls back to the global mean with a
    :class:`NormalizationWarning`. ``pixels`` overrides ``bg.pixels`` (the
    canvas being composited).
    """
    canvas = bg.pixels if pixels is None else pixels
    half = patch.half
    cy, cx = center
    box = (cx - half, cy - half, cx + half + 1, cy + half + 1)
    if box[0] < 0 or box[1] < 0 or box[2] > canvas.shape[1] or box[3] > canvas.shape[0]:
        raise CompositionError("patch box extends beyond the image")
    ring = _ring_mean(canvas, box, ring_px)
    if ring.size == 0 or np.ptp(ring) == 0:
        warnings.warn("flat background around patch; using the global mean",
                      NormalizationWarning, stacklevel=2)
        mu = float(np.mean(canvas, dtype=np.float64))
    else:
        mu = float(ring.mean())
    return np.clip(patch.intensity * mu, 0.0, float(bg.bit_max))


def laplacian(img: np.ndarray) -> np.ndarray:
    """5-point discrete Laplacian on interior pixels (border set to 0)."""
    img = np.asarray(img, dtype=np.float64)
    out = np.zeros_like(img)
    out[1:-1, 1:-1] = (img[:-2, 1:-1] + img[2:, 1:-1] + img[1:-1, :-2] + img[1:-1, 2:]
                       - 4.0 * img[1:-1, 1:-1])
    return out


def seamless_blend(bg_region: np.ndarray, raster_patch: np.ndarray, mask: np.ndarray,
                   tolerance: float = BLEND_TOLERANCE) -> np.ndarray:
    """Gradient-domain blend of ``raster_patch`` into ``bg_region`` over ``mask``.

    Solves lap(f) = lap(patch) on mask pixels with f = background on their
    outside neighbours, by a direct sparse solve. Pixels outside the mask are
    returned unchanged.
    """
    bg = np.asarray(bg_region, dtype=np.float64)
    g = np.asarray(raster_patch, dtype=np.float64)
    mask = np.asarray(mask, dtype=bool)
    if bg.shape != g.shape or bg.shape != mask.shape:
        raise BlendError("region, patch and mask shapes differ")
    if mask[0].any() or mask[-1].any() or mask[:, 0].any() or mask[:, -1].any():
        raise BlendError("mask must leave a 1 px border inside the region")
    out = bg.copy()
    m = int(mask.sum())
    if m == 0:
        return out
    index = np.full(mask.shape, -1, dtype=np.int64)
    index[mask] = np.arange(m)
    ys, xs = np.nonzero(mask)
    rhs = 4.0 * g[ys, xs]
    rows, cols = [np.arange(m)], [np.arange(m)]
    vals = [np.full(m, 4.0)]
    for dy, dx in ((-1, 0), (1, 0), (0, -1), (0, 1)):
        ny, nx = ys + dy, xs + dx
        rhs -= g[ny, nx]
        j = index[ny, nx]
        inside = j >= 0
        rows.append(np.flatnonzero(inside))
        cols.append(j[inside])
        vals.append(np.full(int(inside.sum()), -1.0))
        rhs[~inside] += bg[ny[~inside], nx[~inside]]
    a = sp.csc_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                      shape=(m, m))
    x = spsolve(a, rhs, permc_spec="MMD_AT_PLUS_A")
    scale = max(float(np.linalg.norm(rhs)), 1e-300)
    residual = float(np.linalg.norm(rhs - a @ x)) / scale
    if not residual < tolerance:
        raise BlendError(f"Poisson solve residual {residual:.3g} exceeds {tolerance:g}", residual)
    out[ys, xs] = x
    return out


def disc_mask(half: int, radius: float) -> np.ndarray:
    y, x = np.ogrid[-half:half + 1, -half:half + 1]
    return x * x + y * y <= radius * radius


# -- composition --------------------------------------------------------------

@dataclass(frozen=True)
class CompositeSettings:
    detector: DetectorParams = DetectorParams()
    size_classes: tuple[SizeClass, ...] = DEFAULT_SIZE_CLASSES
    ring_px: int = NORMALIZE_RING_PX
    n_rays: int = 64
    max_drop_fraction: float = MAX_DROP_FRACTION


@dataclass(frozen=True)
class FeatureProvenance:
    patch_id: int
    requested_radius_nm: float
    requested_defocus_um: float
    radius_nm: float
    defocus_um: float
    size_class: str
    warp_seed: int
    warp: tuple
    center: tuple[int, int]
    label_method: str
    fringe_radius_px: float
    fringe_diameter_nm: float
    box_diameter_nm: float


@dataclass(frozen=True, eq=False)
class LabeledImage:
    image: BackgroundImage
    labels: tuple[BoxRecord, ...]
    masks: tuple[tuple[tuple[int, int], LabelMask], ...]
    provenance: tuple[FeatureProvenance, ...]
    footprints: tuple[tuple[tuple[int, int], np.ndarray], ...]
    dropped: tuple[tuple[int, str], ...] = ()
    warnings: tuple[str, ...] = field(default=())

    def label_raster(self) -> np.ndarray:
        out = np.zeros(self.image.pixels.shape, dtype=bool)
        for (x0, y0), lm in self.masks:
            h, w = lm.mask.shape
            out[y0:y0 + h, x0:x0 + w] |= lm.mask
        return out

    def footprint_raster(self) -> np.ndarray:
        out = np.zeros(self.image.pixels.shape, dtype=bool)
        for (x0, y0), fm in self.footprints:
            h, w = fm.shape
            out[y0:y0 + h, x0:x0 + w] |= fm
        return out


def compose_image(bg: BackgroundImage, plan: PlacementPlan, lut: ProfileLUT,
                  settings: CompositeSettings = CompositeSettings(), seed: int = 0,
                  image_index: int = 0) -> LabeledImage:
    """Blend every planned feature into ``bg`` in plan order.

    Features whose warp or labelling fails are dropped and recorded; more
    than ``max_drop_fraction`` of the plan dropping fails the whole image.
    The random streams of feature ``i`` are
    ``(seed, image_index, i, stage)`` substreams.
    """
    canvas = bg.pixels.astype(np.float64)
    changed = np.zeros(bg.pixels.shape, dtype=bool)
    labels, masks, prov, footprints, dropped, notes = [], [], [], [], [], []
    for e in plan.entries:
        profile = lut_lookup(lut, e.radius_nm, e.defocus_um)
        cls = classify_size(profile.radius_nm, settings.size_classes)
        warp_seed = seeding.derived_seed(seed, image_index, e.patch_id, seeding.STAGE_WARP)
        try:
            patch = rotate_profile(profile, bg.pixel_scale, half_px=e.half)
            warped = warp_patch(patch, cls, warp_seed, n_rays=settings.n_rays)
            label = label_patch(warped, n_rays=settings.n_rays)
        except (PatchError, WarpError, LabelingError) as exc:
            dropped.append((e.patch_id, f"{type(exc).__name__}: {exc}"))
            continue
        noise_rng = seeding.generator(seed, image_index, e.patch_id, seeding.STAGE_NOISE)
        enhanced = enhance(warped, settings.detector, rng=noise_rng)
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always", NormalizationWarning)
            raster = normalize_patch(enhanced, bg, e.center, pixels=canvas,
                                     ring_px=settings.ring_px)
        notes.extend(f"feature {e.patch_id}: {w.message}" for w in caught)
        x0, y0, x1, y1 = e.box
        fmask = disc_mask(e.half, e.half - BLEND_BORDER_PX + 1)
        region = canvas[y0:y1, x0:x1]
        blended = seamless_blend(region, raster, fmask)
        region[fmask] = blended[fmask]
        changed[y0:y1, x0:x1] |= fmask
        labels.append(BoxRecord(0, *mask_to_box(label, (x0, y0), (bg.width, bg.height))))
        masks.append(((x0, y0), label))
        footprints.append(((x0, y0), fmask))
        fringe_d = 2.0 * profile.fringe_rho() * profile.radius_nm
        box_d = warped_box_diameter(fringe_d, warped.warp)
        if label.method == SQUARE_FALLBACK:
            box_d *= SQUARE_SCALE
        prov.append(FeatureProvenance(e.patch_id, e.radius_nm, e.defocus_um, profile.radius_nm,
                                      profile.defocus_um, cls.name, warp_seed, warped.warp,
                                      e.center, label.method, label.radius_px, fringe_d,
                                      box_d))
    if plan.entries and len(dropped) > settings.max_drop_fraction * len(plan.entries):
        raise CompositionError(f"{bg.source_id}: {len(dropped)} of {len(plan.entries)} "
                               f"features dropped")
    out = bg.pixels.copy()
    out[changed] = np.clip(np.rint(canvas[changed]), 0, bg.bit_max).astype(out.dtype)
    image = BackgroundImage(out, bg.pixel_scale, bg.source_id)
    return LabeledImage(image, tuple(labels), tuple(masks), tuple(prov), tuple(footprints),
                        tuple(dropped), tuple(notes))
