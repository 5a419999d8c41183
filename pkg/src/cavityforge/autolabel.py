"""Pixel-precise cavity masks with the edge on the centre of the darkest outer fringe."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage
from skimage.segmentation import watershed

from .patches import CavityPatch, check_fringe, darkest_minima, sample_rays

WATERSHED = "watershed"
SQUARE_FALLBACK = "square"
MIN_WATERSHED_RADIUS_PX = 8.0
SQUARE_SCALE = 1.5
SNAP_WINDOW_PX = 3.0
_RAY_STEP = 0.25


class LabelingError(RuntimeError):
    pass


@dataclass(frozen=True, eq=False)
class LabelMask:
    mask: np.ndarray
    bbox: tuple[int, int, int, int]  # x_min, y_min, x_max, y_max (inclusive)
    method: str
    radius_px: float
    edge_radii: np.ndarray | None = None


def tight_bbox(mask: np.ndarray) -> tuple[int, int, int, int]:
    rows = np.flatnonzero(mask.any(axis=1))
    cols = np.flatnonzero(mask.any(axis=0))
    if rows.size == 0:
        raise LabelingError("empty mask has no bounding box")
    return int(cols[0]), int(rows[0]), int(cols[-1]), int(rows[-1])


def round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def square_label(shape: tuple[int, int], radius_px: float) -> LabelMask:
    side = max(1, round_half_up(SQUARE_SCALE * 2.0 * radius_px))
    cy, cx = shape[0] // 2, shape[1] // 2
    y0, x0 = cy - side // 2, cx - side // 2
    mask = np.zeros(shape, dtype=bool)
    mask[max(y0, 0):min(y0 + side, shape[0]), max(x0, 0):min(x0 + side, shape[1])] = True
    return LabelMask(mask, tight_bbox(mask), SQUARE_FALLBACK, radius_px)


def _polar_mask(shape: tuple[int, int], angles: np.ndarray, edge: np.ndarray) -> np.ndarray:
    half = shape[0] // 2
    y, x = np.mgrid[-half:shape[0] - half, -half:shape[1] - half].astype(np.float64)
    theta = np.mod(np.arctan2(y, x), 2.0 * math.pi)
    period = 2.0 * math.pi
    a = np.concatenate([angles, angles[:1] + period])
    e = np.concatenate([edge, edge[:1]])
    limit = np.interp(theta, a, e)
    return np.hypot(x, y) <= limit


def label_patch(patch: CavityPatch, n_rays: int = 64) -> LabelMask:
    """Label one (warped) cavity patch.

    Small features (measured fringe radius under 8 px) get a filled square
    1.5x the fringe diameter. Otherwise a two-marker watershed on the inverted
    intensity splits cavity from background along the dark ring, and each
    ray's boundary is then snapped to the darkest point within 3 px. The
    interior marker is a central disc of half the smallest ray fringe radius
    rather than one pixel: a dark central spot would otherwise strand a
    single-pixel seed while the background floods around it.
    """
    fc = check_fringe(patch, n_rays=n_rays)
    if not fc.ok:
        raise LabelingError("no detectable dark fringe")
    shape = patch.intensity.shape
    if fc.radius_px < MIN_WATERSHED_RADIUS_PX:
        return square_label(shape, fc.radius_px)

    markers = np.zeros(shape, dtype=np.int32)
    markers[0, :] = markers[-1, :] = markers[:, 0] = markers[:, -1] = 2
    c = patch.half
    seed_radius = 0.5 * float(np.nanmin(fc.ray_radii))
    yy, xx = np.ogrid[-c:shape[0] - c, -c:shape[1] - c]
    markers[xx * xx + yy * yy <= seed_radius * seed_radius] = 1
    regions = watershed(-patch.intensity, markers)

    radii, samples = sample_rays(patch.intensity, fc.ray_angles, step=_RAY_STEP)
    _, region_rays = sample_rays((regions == 1).astype(np.float64), fc.ray_angles,
                                 step=_RAY_STEP, fill=0.0)
    outside = region_rays < 0.5
    first_out = np.where(outside.any(axis=1), outside.argmax(axis=1), radii.size - 1)
    boundary = radii[first_out]

    edge = np.empty(fc.ray_angles.size)
    for k in range(edge.size):
        lo = np.searchsorted(radii, boundary[k] - SNAP_WINDOW_PX)
        hi = np.searchsorted(radii, boundary[k] + SNAP_WINDOW_PX, side="right")
        # one sample of context on each side so the window's minimum can be interior
        lo_c, hi_c = max(lo - 1, 0), min(hi + 1, radii.size)
        pos = darkest_minima(radii[lo_c:hi_c], samples[k:k + 1, lo_c:hi_c], contrast_floor=-np.inf)[0]
        if np.isfinite(pos) and radii[lo] - 1e-9 <= pos <= radii[hi - 1] + 1e-9:
            edge[k] = pos
        else:
            edge[k] = radii[lo + int(np.argmin(samples[k, lo:hi]))]

    mask = _polar_mask(shape, fc.ray_angles, edge)
    lab, _ = ndimage.label(mask)
    mask = lab == lab[c, c]
    return LabelMask(mask, tight_bbox(mask), WATERSHED, fc.radius_px, edge)


def mask_edge_radii(mask: np.ndarray, angles: np.ndarray) -> np.ndarray:
    """Per ray, the radius of the last mask pixel before leaving the mask."""
    radii, inside = sample_rays(mask.astype(np.float64), angles, step=_RAY_STEP, fill=0.0)
    out = inside < 0.5
    first_out = np.where(out.any(axis=1), out.argmax(axis=1), radii.size)
    return np.where(first_out > 0, radii[np.maximum(first_out - 1, 0)], 0.0)


def mask_to_box(mask: LabelMask | np.ndarray, image_origin: tuple[int, int],
                image_size: tuple[int, int]) -> tuple[float, float, float, float]:
    """Normalized (cx, cy, w, h) of the mask's tight bbox placed at ``image_origin`` (x, y)
    inside an image of ``image_size`` (width, height)."""
    m = mask.mask if isinstance(mask, LabelMask) else np.asarray(mask, dtype=bool)
    if not m.any():
        raise LabelingError("empty mask")
    x_min, y_min, x_max, y_max = tight_bbox(m)
    ox, oy = image_origin
    width, height = image_size
    x0, x1 = ox + x_min, ox + x_max + 1
    y0, y1 = oy + y_min, oy + y_max + 1
    box = ((x0 + x1) / 2.0 / width, (y0 + y1) / 2.0 / height,
           (x1 - x0) / width, (y1 - y0) / height)
    return tuple(float(min(max(v, 0.0), 1.0)) for v in box)
