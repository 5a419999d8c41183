"""Declarative run configuration (JSON).

Every key has a default; a config file only lists what it changes. Unknown
keys anywhere are errors. Sections::

    seed          64-bit run seed
    microscope    accelerating_voltage (V), mean_inner_potential_phase (rad/m),
                  absorption_coefficient (1/m), foil_thickness_t (m),
                  cavity_depth_zeta (m)
    simulation    radii_nm, defocus_um (LUT grid), n_radial_samples,
                  n_quadrature_nodes, rho_max
    detector      mtf_plateau_a, mtf_halfwidth_uc, dqe_zero, dose_per_pixel
    size_classes  list of {name, lower_nm, upper_nm, max_warp_amplitude}
    generation    n_images, features_per_image or density_per_um2, sizes,
                  base_defocus_um [lo, hi], defocus_jitter, margin_px,
                  pixel_scale_range, side_range, default_pixel_scale, split
    evaluation    preset, individual_threshold, image_threshold, empty_policy,
                  thickness_nm, sweep {individual: [...], image: [...]}
"""
from __future__ import annotations

import copy
import json
import math
from pathlib import Path

from .compositor import CompositeSettings, HistogramSizes, LogNormalSizes
from .detector import DetectorError, DetectorParams
from .lut import DESK_DEFOCUS_UM, DESK_RADII_NM
from .patches import DEFAULT_SIZE_CLASSES, PatchError, SizeClass, validate_size_classes
from .physics import MicroscopeParams, PhysicsError
from .regulation import RegulationError, ThresholdPreset, custom_preset, get_preset


class ConfigError(ValueError):
    pass


DEFAULTS = {
    "seed": 0,
    "microscope": MicroscopeParams().to_dict(),
    "simulation": {
        "radii_nm": list(DESK_RADII_NM),
        "defocus_um": list(DESK_DEFOCUS_UM),
        "n_radial_samples": 512,
        "n_quadrature_nodes": 2048,
        "rho_max": 3.0,
    },
    "detector": {k: v for k, v in DetectorParams().to_dict().items() if k != "rng_seed"},
    "size_classes": [
        {"name": c.name, "lower_nm": c.lower_nm,
         "upper_nm": None if math.isinf(c.upper_nm) else c.upper_nm,
         "max_warp_amplitude": c.max_warp_amplitude}
        for c in DEFAULT_SIZE_CLASSES
    ],
    "generation": {
        "n_images": 5,
        "features_per_image": 40,
        "density_per_um2": None,
        "sizes": {"kind": "lognormal", "median_nm": 8.0, "sigma": 0.4, "min_nm": 1.0,
                  "max_nm": 50.0},
        "base_defocus_um": [-2.3, -0.3],
        "defocus_jitter": 0.1,
        "margin_px": 2,
        "pixel_scale_range": [0.079, 0.11],
        "side_range": [1024, 4096],
        "default_pixel_scale": None,
        "split": "train",
    },
    "evaluation": {
        "preset": "standard",
        "individual_threshold": None,
        "image_threshold": None,
        "empty_policy": "fail",
        "thickness_nm": 100.0,
        "sweep": {"individual": [0.35, 0.4, 0.45],
                  "image": [0.5, 0.55, 0.6, 0.65, 0.7, 0.75, 0.8]},
    },
}

# sections whose values are free-form and replaced wholesale
_OPAQUE = {("generation", "sizes"), ("size_classes",)}


def _merge(base, override, path=()):
    if path in _OPAQUE or not isinstance(base, dict):
        return copy.deepcopy(override)
    if not isinstance(override, dict):
        raise ConfigError(f"{'.'.join(path) or 'config'}: expected a table")
    out = copy.deepcopy(base)
    for key, value in override.items():
        if key not in base:
            where = ".".join(path + (key,))
            raise ConfigError(f"unknown config key {where!r}")
        out[key] = _merge(base[key], value, path + (key,))
    return out


def resolve(override: dict | None = None) -> dict:
    """Defaults merged with ``override``, validated."""
    cfg = _merge(DEFAULTS, override or {})
    validate(cfg)
    return cfg


def load_config(path) -> dict:
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON: {exc}") from None
    return resolve(data)


def dump_config(cfg: dict) -> str:
    return json.dumps(cfg, indent=2, sort_keys=True) + "\n"


def _wrap(section: str, fn):
    try:
        return fn()
    except (PhysicsError, DetectorError, PatchError, RegulationError, TypeError) as exc:
        raise ConfigError(f"{section}: {exc}") from None


def microscope_params(cfg: dict) -> MicroscopeParams:
    return _wrap("microscope", lambda: MicroscopeParams(**cfg["microscope"]))


def detector_params(cfg: dict, rng_seed: int = 0) -> DetectorParams:
    return _wrap("detector", lambda: DetectorParams(**cfg["detector"], rng_seed=rng_seed))


def size_classes(cfg: dict) -> tuple[SizeClass, ...]:
    def build():
        classes = []
        for c in cfg["size_classes"]:
            upper = math.inf if c.get("upper_nm") is None else c["upper_nm"]
            classes.append(SizeClass(c["name"], c["lower_nm"], upper, c["max_warp_amplitude"]))
        validate_size_classes(classes)
        return tuple(sorted(classes, key=lambda c: c.lower_nm))

    try:
        return _wrap("size_classes", build)
    except KeyError as exc:
        raise ConfigError(f"size_classes: missing key {exc}") from None


def size_distribution(cfg: dict):
    spec = dict(cfg["generation"]["sizes"])
    kind = spec.pop("kind", None)
    try:
        if kind == "lognormal":
            return LogNormalSizes(**spec)
        if kind == "histogram":
            return HistogramSizes(tuple(spec.pop("edges_nm")), tuple(spec.pop("weights")),
                                  **spec)
    except (TypeError, KeyError, ValueError) as exc:
        raise ConfigError(f"generation.sizes: {exc}") from None
    raise ConfigError(f"generation.sizes.kind must be 'lognormal' or 'histogram', got {kind!r}")


def composite_settings(cfg: dict, seed: int = 0) -> CompositeSettings:
    return CompositeSettings(detector=detector_params(cfg, seed), size_classes=size_classes(cfg))


def threshold_preset(cfg: dict) -> ThresholdPreset:
    ev = cfg["evaluation"]
    ind, img = ev["individual_threshold"], ev["image_threshold"]
    if ind is None and img is None:
        return _wrap("evaluation.preset", lambda: get_preset(ev["preset"]))
    if ind is None or img is None:
        raise ConfigError("evaluation: set both individual_threshold and image_threshold")
    return _wrap("evaluation", lambda: custom_preset(float(ind), float(img)))


def sweep_grid(cfg: dict) -> list[tuple[float, float]]:
    sw = cfg["evaluation"]["sweep"]
    return [(float(i), float(m)) for i in sw["individual"] for m in sw["image"]]


def validate(cfg: dict) -> None:
    seed = cfg["seed"]
    if not isinstance(seed, int) or isinstance(seed, bool) or not 0 <= seed < 2**64:
        raise ConfigError("seed must be an integer in [0, 2**64)")
    microscope_params(cfg)
    detector_params(cfg)
    size_classes(cfg)
    size_distribution(cfg)
    threshold_preset(cfg)
    sim = cfg["simulation"]
    if not sim["radii_nm"] or not sim["defocus_um"]:
        raise ConfigError("simulation: radii_nm and defocus_um must be non-empty")
    if any(not r > 0 for r in sim["radii_nm"]):
        raise ConfigError("simulation.radii_nm: radii must be positive")
    if any(z == 0 for z in sim["defocus_um"]):
        raise ConfigError("simulation.defocus_um: zero defocus is singular")
    gen = cfg["generation"]
    if not isinstance(gen["n_images"], int) or gen["n_images"] < 0:
        raise ConfigError("generation.n_images must be a non-negative integer")
    if (gen["features_per_image"] is None) == (gen["density_per_um2"] is None):
        raise ConfigError("generation: set exactly one of features_per_image, density_per_um2")
    lo, hi = gen["base_defocus_um"]
    if lo > hi:
        raise ConfigError("generation.base_defocus_um must be [lo, hi] with lo <= hi")
    if not 0 <= gen["defocus_jitter"] < 1:
        raise ConfigError("generation.defocus_jitter must lie in [0, 1)")
    if gen["margin_px"] < 0:
        raise ConfigError("generation.margin_px must be non-negative")
    if cfg["evaluation"]["empty_policy"] not in ("fail", "pass-through"):
        raise ConfigError("evaluation.empty_policy must be 'fail' or 'pass-through'")
    if not cfg["evaluation"]["thickness_nm"] > 0:
        raise ConfigError("evaluation.thickness_nm must be positive")
