import json
import math

import pytest

from cavityforge import config as cfgmod
from cavityforge.compositor import HistogramSizes, LogNormalSizes
from cavityforge.config import ConfigError
from cavityforge.regulation import STANDARD


class TestResolve:
    def test_defaults_valid(self):
        cfg = cfgmod.resolve()
        assert cfg == cfgmod.resolve({})
        assert cfgmod.microscope_params(cfg).accelerating_voltage == 200e3
        assert cfgmod.threshold_preset(cfg) == STANDARD

    def test_partial_override(self):
        cfg = cfgmod.resolve({"detector": {"dose_per_pixel": 100.0}})
        assert cfg["detector"]["dose_per_pixel"] == 100.0
        assert cfg["detector"]["dqe_zero"] == 0.5

    @pytest.mark.parametrize("override,where", [
        ({"bogus": 1}, "bogus"),
        ({"detector": {"gain": 1}}, "detector.gain"),
        ({"evaluation": {"sweep": {"steps": 3}}}, "evaluation.sweep.steps"),
    ])
    def test_unknown_keys(self, override, where):
        with pytest.raises(ConfigError, match=where):
            cfgmod.resolve(override)

    @pytest.mark.parametrize("override,key", [
        ({"microscope": {"accelerating_voltage": -1}}, "accelerating_voltage"),
        ({"detector": {"dqe_zero": 2}}, "dqe_zero"),
        ({"evaluation": {"preset": "medium"}}, "preset"),
        ({"evaluation": {"individual_threshold": 0.3}}, "image_threshold"),
        ({"seed": -1}, "seed"),
        ({"simulation": {"defocus_um": [0.0]}}, "defocus_um"),
        ({"generation": {"density_per_um2": 5.0}}, "features_per_image"),
        ({"generation": {"sizes": {"kind": "gamma"}}}, "sizes"),
        ({"size_classes": [{"name": "a", "lower_nm": 1, "upper_nm": None,
                            "max_warp_amplitude": 0.1}]}, "size_classes"),
    ])
    def test_invalid_values_name_key(self, override, key):
        with pytest.raises(ConfigError, match=key):
            cfgmod.resolve(override)

    def test_custom_thresholds(self):
        cfg = cfgmod.resolve({"evaluation": {"individual_threshold": 0.3,
                                             "image_threshold": 0.6}})
        p = cfgmod.threshold_preset(cfg)
        assert (p.individual_threshold, p.image_threshold) == (0.3, 0.6)


class TestSections:
    def test_size_distributions(self):
        assert isinstance(cfgmod.size_distribution(cfgmod.resolve()), LogNormalSizes)
        cfg = cfgmod.resolve({"generation": {"sizes": {"kind": "histogram",
                                                       "edges_nm": [1, 2, 4],
                                                       "weights": [1, 3]}}})
        assert isinstance(cfgmod.size_distribution(cfg), HistogramSizes)

    def test_size_classes_infinite_top(self):
        classes = cfgmod.size_classes(cfgmod.resolve())
        assert math.isinf(classes[-1].upper_nm)

    def test_sweep_grid(self):
        grid = cfgmod.sweep_grid(cfgmod.resolve())
        assert (0.4, 0.7) in grid and len(grid) == 21

    def test_composite_settings_seeded(self):
        s = cfgmod.composite_settings(cfgmod.resolve(), seed=9)
        assert s.detector.rng_seed == 9


class TestFiles:
    def test_load_and_dump_round_trip(self, tmp_path):
        p = tmp_path / "c.json"
        p.write_text(json.dumps({"seed": 7}))
        cfg = cfgmod.load_config(p)
        assert cfg["seed"] == 7
        p.write_text(cfgmod.dump_config(cfg))
        assert cfgmod.load_config(p) == cfg

    def test_bad_json(self, tmp_path):
        p = tmp_path / "c.json"
        p.write_text("{seed: 1")
        with pytest.raises(ConfigError, match="invalid JSON"):
            cfgmod.load_config(p)
