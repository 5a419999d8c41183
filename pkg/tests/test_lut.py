import numpy as np
import pytest

from cavityforge.lut import (LUTBuildError, LUTError, build_lut, load_lut, lut_from_bytes,
                             lut_lookup, lut_to_bytes, nearest_key, save_lut)
from cavityforge.physics import MicroscopeParams, simulate_profile


@pytest.fixture(scope="module")
def tiny_lut():
    return build_lut([3.0, 6.0], [-0.5, -1.5])


class TestBuild:
    def test_grid_order_and_size(self, tiny_lut):
        assert len(tiny_lut) == 4
        assert list(tiny_lut.entries) == tiny_lut.keys()
        assert set(tiny_lut.timings) == set(tiny_lut.keys())

    def test_entries_match_direct_simulation(self, tiny_lut):
        p = tiny_lut.entries[(6.0, -1.5)]
        direct = simulate_profile(p.request)
        np.testing.assert_array_equal(p.psi, direct.psi)

    @pytest.mark.parametrize("radii,defocus", [([], [-1.0]), ([2.0, 2.0], [-1.0])])
    def test_bad_grids(self, radii, defocus):
        with pytest.raises(LUTError):
            build_lut(radii, defocus)

    def test_failure_names_key(self):
        with pytest.raises(LUTBuildError) as info:
            build_lut([4.0], [-1.0, 0.0])
        assert info.value.key == (4.0, 0.0)


class TestSerialization:
    def test_round_trip_bit_exact(self, tiny_lut, tmp_path):
        data = lut_to_bytes(tiny_lut)
        back = lut_from_bytes(data)
        assert lut_to_bytes(back) == data
        for key in tiny_lut.keys():
            a, b = tiny_lut.entries[key], back.entries[key]
            np.testing.assert_array_equal(a.psi, b.psi)
            np.testing.assert_array_equal(a.rho, b.rho)
            np.testing.assert_array_equal(a.intensity, b.intensity)
            assert a.convergence_residual == b.convergence_residual
        path = tmp_path / "lut.bin"
        save_lut(tiny_lut, path)
        assert path.read_bytes() == data
        assert load_lut(path).params == tiny_lut.params

    def test_params_survive(self):
        params = MicroscopeParams(accelerating_voltage=300e3)
        lut = build_lut([5.0], [-1.0], params)
        assert lut_from_bytes(lut_to_bytes(lut)).params == params

    def test_bad_magic(self, tiny_lut):
        with pytest.raises(LUTError, match="magic"):
            lut_from_bytes(b"XXXXXXXX" + lut_to_bytes(tiny_lut)[8:])

    def test_trailing_bytes(self, tiny_lut):
        with pytest.raises(LUTError, match="trailing"):
            lut_from_bytes(lut_to_bytes(tiny_lut) + b"\0")


class TestLookup:
    def test_exact_key(self, tiny_lut):
        assert nearest_key(tiny_lut, 6.0, -0.5) == (6.0, -0.5)
        assert lut_lookup(tiny_lut, 3.0, -1.5) is tiny_lut.entries[(3.0, -1.5)]

    def test_nearest_in_index_space(self, tiny_lut):
        assert nearest_key(tiny_lut, 5.0, -1.4) == (6.0, -1.5)
        assert nearest_key(tiny_lut, 100.0, -9.0) == (6.0, -1.5)

    def test_tie_goes_to_smaller_key(self, tiny_lut):
        assert nearest_key(tiny_lut, 4.5, -0.5) == (3.0, -0.5)
        assert nearest_key(tiny_lut, 3.0, -1.0) == (3.0, -1.5)
