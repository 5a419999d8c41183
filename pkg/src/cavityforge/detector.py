"""Detector response: MTF blur followed by DQE-scaled counting noise."""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .patches import CavityPatch

NYQUIST = 0.5  # cycles per pixel


class DetectorError(ValueError):
    pass


@dataclass(frozen=True)
class DetectorParams:
    """``mtf_halfwidth_uc`` is the Lorentzian half-width as a fraction of Nyquist."""

    mtf_plateau_a: float = 0.1
    mtf_halfwidth_uc: float = 0.4
    dqe_zero: float = 0.5
    dose_per_pixel: float = 500.0
    rng_seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.mtf_plateau_a <= 1.0:
            raise DetectorError("mtf_plateau_a must lie in [0, 1]")
        if not self.mtf_halfwidth_uc > 0:
            raise DetectorError("mtf_halfwidth_uc must be positive")
        if not 0.0 < self.dqe_zero <= 1.0:
            raise DetectorError("dqe_zero must lie in (0, 1]")
        if not self.dose_per_pixel > 0:
            raise DetectorError("dose_per_pixel must be positive")

    @property
    def halfwidth_cycles(self) -> float:
        return self.mtf_halfwidth_uc * NYQUIST

    def to_dict(self) -> dict:
        return {
            "mtf_plateau_a": self.mtf_plateau_a,
            "mtf_halfwidth_uc": self.mtf_halfwidth_uc,
            "dqe_zero": self.dqe_zero,
            "dose_per_pixel": self.dose_per_pixel,
            "rng_seed": self.rng_seed,
        }


def mtf(u, params: DetectorParams):
    """MTF(u) = a + (1 - a) / (1 + (u/u_c)^2), u in cycles/pixel."""
    a = params.mtf_plateau_a
    q = np.asarray(u, dtype=np.float64) / params.halfwidth_cycles
    return a + (1.0 - a) / (1.0 + q * q)


def filter_mtf(image: np.ndarray, params: DetectorParams) -> np.ndarray:
    image = np.asarray(image, dtype=np.float64)
    if params.mtf_plateau_a == 1.0:
        return image.copy()
    fy = np.fft.fftfreq(image.shape[0])[:, None]
    fx = np.fft.rfftfreq(image.shape[1])[None, :]
    gain = mtf(np.hypot(fy, fx), params)
    return np.fft.irfft2(np.fft.rfft2(image) * gain, s=image.shape)


def apply_mtf(patch: CavityPatch, params: DetectorParams) -> CavityPatch:
    if "noise" in patch.history:
        raise DetectorError("MTF must be applied before shot noise")
    out = np.maximum(filter_mtf(patch.intensity, params), 0.0)
    return replace(patch, intensity=out, history=patch.history + ("mtf",))


def shot_noise(image: np.ndarray, params: DetectorParams, rng: np.random.Generator) -> np.ndarray:
    image = np.asarray(image, dtype=np.float64)
    if np.any(image < 0):
        raise DetectorError("shot noise needs non-negative intensities")
    effective = params.dose_per_pixel * params.dqe_zero
    return rng.poisson(image * effective).astype(np.float64) / effective


def apply_shot_noise(patch: CavityPatch, params: DetectorParams,
                     rng: np.random.Generator | None = None) -> CavityPatch:
    """Poisson counts at the DQE-scaled dose, converted back to background ratio."""
    if rng is None:
        rng = np.random.default_rng(params.rng_seed)
    out = shot_noise(patch.intensity, params, rng)
    return replace(patch, intensity=out, history=patch.history + ("noise",))


def enhance(patch: CavityPatch, params: DetectorParams,
            rng: np.random.Generator | None = None) -> CavityPatch:
    """Detector model in its fixed order: blur by the MTF, then count."""
    return apply_shot_noise(apply_mtf(patch, params), params, rng)
