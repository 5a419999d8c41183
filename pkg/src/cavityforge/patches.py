"""2D cavity patches: rotate a radial profile, warp it, verify the dark fringe survives."""
from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from . import kernels
from .physics import DEFAULT_FRINGE_FLOOR, ContrastProfile

MIN_PATCH_RADIUS_PX = 3
WARP_HARMONICS = (2, 3, 4)
MAX_WARP_ATTEMPTS = 16
FRINGE_RAY_FRACTION = 0.9


class PatchError(ValueError):
    pass


class PatchTooSmallError(PatchError):
    pass


class WarpError(RuntimeError):
    def __init__(self, seed, attempts: int):
        super().__init__(f"fringe destroyed in {attempts} consecutive warps (seed {seed})")
        self.seed = seed
        self.attempts = attempts

    def __reduce__(self):
        return type(self), (self.seed, self.attempts)


@dataclass(frozen=True)
class SizeClass:
    name: str
    lower_nm: float
    upper_nm: float
    max_warp_amplitude: float

    def contains(self, radius_nm: float) -> bool:
        return self.lower_nm <= radius_nm < self.upper_nm


DEFAULT_SIZE_CLASSES = (
    SizeClass("small", 0.0, 5.0, 0.03),
    SizeClass("medium", 5.0, 20.0, 0.07),
    SizeClass("large", 20.0, math.inf, 0.12),
)


def validate_size_classes(classes) -> None:
    ordered = sorted(classes, key=lambda c: c.lower_nm)
    if ordered[0].lower_nm > 0 or ordered[-1].upper_nm != math.inf:
        raise PatchError("size classes must cover (0, inf)")
    for a, b in zip(ordered, ordered[1:]):
        if a.upper_nm != b.lower_nm:
            raise PatchError(f"size classes {a.name} and {b.name} leave a gap or overlap")
        if a.max_warp_amplitude > b.max_warp_amplitude:
            raise PatchError("max warp amplitude must not decrease with size")


def classify_size(radius_nm: float, classes=DEFAULT_SIZE_CLASSES) -> SizeClass:
    """The class whose half-open interval [lower, upper) contains the radius."""
    if not radius_nm > 0:
        raise PatchError("radius must be positive")
    for c in classes:
        if c.contains(radius_nm):
            return c
    raise PatchError(f"no size class contains {radius_nm} nm")


@dataclass(frozen=True, eq=False)
class CavityPatch:
    """Intensity relative to background (1.0) on an odd x odd grid centred on the cavity."""

    intensity: np.ndarray
    physical_radius_nm: float
    pixel_scale: float
    defocus_um: float = math.nan
    warp: tuple = ()
    fringe_radius_px: float = math.nan
    support_radius_px: float = math.nan
    rng_seed: int | None = None
    history: tuple = ()

    @property
    def half(self) -> int:
        return self.intensity.shape[0] // 2

    @property
    def center(self) -> tuple[int, int]:
        return self.half, self.half


def _radius_grid(half: int) -> np.ndarray:
    y, x = np.mgrid[-half:half + 1, -half:half + 1]
    return np.sqrt((x * x + y * y).astype(np.float64))


def rotate_profile(profile: ContrastProfile, pixel_scale: float,
                   extent_rho: float | None = None, half_px: int | None = None) -> CavityPatch:
    """Sweep the 1D profile around its centre onto a pixel grid.

    The patch half-width is ``half_px`` when given, else
    ``ceil(extent_rho * R / pixel_scale)`` pixels with ``extent_rho``
    defaulting to the profile's ``rho_max``. Beyond ``rho_max`` the last
    profile value is held.
    """
    if not pixel_scale > 0:
        raise PatchError("pixel_scale must be positive")
    radius_nm = profile.radius_nm
    if half_px is not None:
        half = int(half_px)
    else:
        extent = profile.rho_max if extent_rho is None else min(extent_rho, profile.rho_max)
        half = math.ceil(extent * radius_nm / pixel_scale)
    if half < MIN_PATCH_RADIUS_PX:
        raise PatchTooSmallError(
            f"patch radius {half} px < {MIN_PATCH_RADIUS_PX} px; use a larger cavity or finer scale")
    r = _radius_grid(half) * (pixel_scale / radius_nm)
    intensity = np.interp(r, profile.rho, profile.intensity)
    return CavityPatch(
        intensity=intensity,
        physical_radius_nm=radius_nm,
        pixel_scale=pixel_scale,
        defocus_um=profile.defocus_um,
        fringe_radius_px=profile.fringe_rho() * radius_nm / pixel_scale,
        support_radius_px=profile.support_rho() * radius_nm / pixel_scale,
    )


@dataclass(frozen=True)
class FringeCheck:
    ok: bool
    radius_px: float
    ray_radii: np.ndarray
    ray_angles: np.ndarray

    def __bool__(self):
        return self.ok


def ray_angles(n_rays: int) -> np.ndarray:
    return np.arange(n_rays) * (2.0 * math.pi / n_rays)


def sample_rays(intensity: np.ndarray, angles: np.ndarray, step: float = 0.25,
                fill: float = 1.0) -> tuple[np.ndarray, np.ndarray]:
    """Bilinear samples along rays from the centre pixel; returns (radii, samples[ray, radius])."""
    half = intensity.shape[0] // 2
    radii = np.arange(step, half - 1 + 1e-9, step)
    ys = half + np.sin(angles)[:, None] * radii[None, :]
    xs = half + np.cos(angles)[:, None] * radii[None, :]
    img = np.ascontiguousarray(intensity, dtype=np.float64)
    vals = kernels.bilinear_sample(img, ys.ravel(), xs.ravel(), fill)
    return radii, vals.reshape(angles.size, radii.size)


def darkest_minima(radii: np.ndarray, samples: np.ndarray,
                   contrast_floor: float = DEFAULT_FRINGE_FLOOR) -> np.ndarray:
    """Per row, the parabola-refined position of the darkest interior local minimum
    below ``1 - contrast_floor``; NaN for rows without one."""
    if samples.shape[1] < 3:
        return np.full(samples.shape[0], np.nan)
    left, mid, right = samples[:, :-2], samples[:, 1:-1], samples[:, 2:]
    cand = (mid < left) & (mid <= right) & (mid < 1.0 - contrast_floor)
    masked = np.where(cand, mid, np.inf)
    j = np.argmin(masked, axis=1)
    rows = np.arange(samples.shape[0])
    found = np.isfinite(masked[rows, j])
    lv, mv, rv = left[rows, j], mid[rows, j], right[rows, j]
    denom = lv - 2.0 * mv + rv
    with np.errstate(divide="ignore", invalid="ignore"):
        off = np.where(denom > 0, 0.5 * (lv - rv) / denom, 0.0)
    off = np.clip(off, -0.5, 0.5)
    step = radii[1] - radii[0] if radii.size > 1 else 1.0
    pos = radii[j + 1] + off * step
    return np.where(found, pos, np.nan)


def check_fringe(patch: CavityPatch, n_rays: int = 64,
                 contrast_floor: float = DEFAULT_FRINGE_FLOOR) -> FringeCheck:
    """Cast rays from the centre and locate the dark fringe on each.

    Succeeds when at least 90% of rays find a minimum below ``1 - contrast_floor``;
    the reported radius is the median over those rays.
    """
    if n_rays < 32:
        raise PatchError("at least 32 rays are required")
    angles = ray_angles(n_rays)
    radii, samples = sample_rays(patch.intensity, angles)
    ray_radii = darkest_minima(radii, samples, contrast_floor)
    good = np.isfinite(ray_radii)
    ok = good.sum() >= FRINGE_RAY_FRACTION * n_rays
    radius = float(np.median(ray_radii[good])) if good.any() else math.nan
    return FringeCheck(bool(ok), radius if ok else math.nan, ray_radii, angles)


def _draw_warp(rng: np.random.Generator, max_amplitude: float) -> tuple:
    amps = rng.uniform(0.0, max_amplitude / len(WARP_HARMONICS), size=len(WARP_HARMONICS))
    phases = rng.uniform(0.0, 2.0 * math.pi, size=len(WARP_HARMONICS))
    return tuple((m, float(a), float(p)) for m, a, p in zip(WARP_HARMONICS, amps, phases))


def warp_scale(theta: np.ndarray, warp) -> np.ndarray:
    scale = np.ones_like(theta, dtype=np.float64)
    for m, a, phi in warp:
        scale += a * np.cos(m * theta + phi)
    return scale


def warped_box_diameter(diameter: float, warp, n_angles: int = 3600) -> float:
    """Mean of the bounding-box sides of a circle of ``diameter`` after ``warp``."""
    theta = np.linspace(0.0, 2.0 * math.pi, n_angles, endpoint=False)
    r = 0.5 * diameter * warp_scale(theta, warp)
    x, y = r * np.cos(theta), r * np.sin(theta)
    return float((np.ptp(x) + np.ptp(y)) / 2.0)


def apply_warp(intensity: np.ndarray, warp) -> np.ndarray:
    """Radial remap r -> r (1 + sum a_m cos(m theta + phi_m)) about the centre pixel."""
    if all(a == 0 for _, a, _ in warp):
        return intensity.copy()
    half = intensity.shape[0] // 2
    y, x = np.mgrid[-half:half + 1, -half:half + 1].astype(np.float64)
    scale = warp_scale(np.arctan2(y, x), warp)
    src_y = half + y / scale
    src_x = half + x / scale
    img = np.ascontiguousarray(intensity, dtype=np.float64)
    out = kernels.bilinear_sample(img, src_y.ravel(), src_x.ravel(), 1.0)
    return out.reshape(intensity.shape)


def warp_patch(patch: CavityPatch, size_class: SizeClass, seed: int,
               n_rays: int = 64) -> CavityPatch:
    """Randomly warp a patch with angular harmonics m = 2..4.

    Amplitudes are drawn in [0, max/3] each, so their sum never exceeds the
    class maximum. Each attempt uses its own substream of ``seed``; a warp is
    kept once the dark fringe is still found on 90% of rays.
    """
    if size_class.max_warp_amplitude == 0:
        return replace(patch, warp=tuple((m, 0.0, 0.0) for m in WARP_HARMONICS),
                       intensity=patch.intensity.copy(), rng_seed=seed)
    for attempt in range(MAX_WARP_ATTEMPTS):
        rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(attempt,)))
        warp = _draw_warp(rng, size_class.max_warp_amplitude)
        warped = replace(patch, intensity=apply_warp(patch.intensity, warp), warp=warp,
                         rng_seed=seed)
        if check_fringe(warped, n_rays=n_rays).ok:
            return warped
    raise WarpError(seed, MAX_WARP_ATTEMPTS)
