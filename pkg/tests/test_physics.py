"""Radial contrast profiles against a brute-force Fresnel integral."""
import math

import numpy as np
import pytest
from scipy.special import j0

from cavityforge.physics import (ConvergenceError, MicroscopeParams, PhysicsError,
                                 SimulationRequest, SingularDefocusError, dark_fringe,
                                 electron_wavelength, reduced_defocus, simulate_profile)


def riemann_oracle(radius_nm, defocus_um, rho, params=MicroscopeParams(), n=1_000_000):
    """psi/psi_p by a midpoint sum in u with rho' = 1 - u^2.

    The substitution removes the square-root endpoint of the chord at rho' = 1
    so a plain midpoint sum converges quickly; it shares no code with the
    package's Simpson quadrature.
    """
    beta = reduced_defocus(defocus_um, params.wavevector_k, radius_nm)
    u = (np.arange(n) + 0.5) / n
    rp = 1.0 - u * u
    chord = 2.0 * radius_nm * 1e-9 * u * np.sqrt(1.0 + rp)
    delta = np.expm1((1j * params.mean_inner_potential_phase
                      - params.absorption_coefficient) * chord)
    out = []
    for r in np.atleast_1d(rho):
        f = delta * j0(2.0 * r * rp / beta) * np.exp(1j * rp * rp / beta) * rp * 2.0 * u
        out.append(1.0 - 2j / beta * np.exp(1j * r * r / beta) * f.sum() / n)
    return np.array(out)


def zero_delta(rho_prime, radius_m, params):
    return np.zeros_like(np.asarray(rho_prime, dtype=np.float64), dtype=np.complex128)


class TestConstants:
    def test_wavelength_200kv(self):
        # 2.5079 pm is the tabulated relativistic value at 200 kV
        assert electron_wavelength(200e3) == pytest.approx(2.5079e-12, rel=1e-4)

    def test_wavelength_decreases_with_voltage(self):
        volts = [80e3, 120e3, 200e3, 300e3]
        lams = [electron_wavelength(v) for v in volts]
        assert all(a > b for a, b in zip(lams, lams[1:]))

    @pytest.mark.parametrize("field,value", [
        ("accelerating_voltage", 0.0),
        ("foil_thickness_t", -1e-9),
        ("cavity_depth_zeta", 200e-9),
    ])
    def test_invalid_params_rejected(self, field, value):
        with pytest.raises(PhysicsError, match=field):
            MicroscopeParams(**{field: value})

    def test_reduced_defocus_definition(self):
        p = MicroscopeParams()
        beta = reduced_defocus(-1.0, p.wavevector_k, 10.0)
        assert beta == pytest.approx(2.0 * -1e-6 / (p.wavevector_k * (10e-9) ** 2), rel=1e-14)
        assert beta < 0


class TestRequest:
    @pytest.mark.parametrize("kwargs", [
        {"n_radial_samples": 32},
        {"n_quadrature_nodes": 129},
        {"n_quadrature_nodes": 64},
        {"rho_max": 2.0},
    ])
    def test_validation(self, kwargs):
        with pytest.raises(PhysicsError):
            SimulationRequest(5.0, -1.0, **kwargs)

    def test_negative_radius(self):
        with pytest.raises(PhysicsError):
            SimulationRequest(-1.0, -1.0)

    def test_zero_defocus_is_singular(self):
        with pytest.raises(SingularDefocusError):
            simulate_profile(SimulationRequest(5.0, 0.0))


@pytest.fixture(scope="module")
def profile():
    return simulate_profile(SimulationRequest(8.0, -0.8))


class TestProfile:
    def test_vacuum_is_flat(self):
        p = simulate_profile(SimulationRequest(8.0, -1.3, delta_model=zero_delta))
        assert np.max(np.abs(p.intensity - 1.0)) < 1e-9

    @pytest.mark.parametrize("radius,defocus", [(2.0, -0.3), (5.0, -2.3), (10.0, -0.8)])
    def test_no_absorption_bounded(self, radius, defocus):
        params = MicroscopeParams(absorption_coefficient=0.0)
        p = simulate_profile(SimulationRequest(radius, defocus, params=params))
        assert np.max(p.intensity) <= 4.0

    def test_matches_oracle_at_several_radii(self, profile):
        idx = [0, int(np.argmin(np.abs(profile.rho - 1.0))), int(np.argmin(np.abs(profile.rho - 2.5)))]
        oracle = riemann_oracle(8.0, -0.8, profile.rho[idx])
        np.testing.assert_allclose(profile.psi[idx], oracle, rtol=1e-6, atol=1e-7)

    def test_far_field_returns_to_background(self, profile):
        tail = profile.rho >= 0.9 * profile.rho_max
        assert np.max(np.abs(profile.intensity[tail] - 1.0)) <= 0.02

    def test_convergence_residual_recorded(self, profile):
        assert 0.0 <= profile.convergence_residual < 1e-4

    def test_node_doubling_is_stable(self, profile):
        req = SimulationRequest(8.0, -0.8, n_quadrature_nodes=4096)
        fine = simulate_profile(req, check_convergence=False)
        assert fine.rho_max == profile.rho_max
        assert np.max(np.abs(fine.intensity - profile.intensity)) < 1e-4

    def test_fringe_near_cavity_edge(self, profile):
        assert 0.9 < profile.fringe_rho() < 1.2
        i = int(np.argmin(np.abs(profile.rho - profile.fringe_rho())))
        assert profile.intensity[i] < 0.95

    def test_underfocus_interior_brighter(self, profile):
        assert profile.intensity[0] > 1.0

    def test_rho_max_grows_for_spread_fringes(self):
        p = simulate_profile(SimulationRequest(1.0, -2.3))
        assert p.rho_max > 3.0
        assert p.rho.size == int(round(512 * p.rho_max / 3.0))

    def test_tiny_tolerance_raises(self, monkeypatch):
        import cavityforge.physics as physics
        monkeypatch.setattr(physics, "CONVERGENCE_TOLERANCE", 0.0)
        with pytest.raises(ConvergenceError) as info:
            simulate_profile(SimulationRequest(5.0, -0.8))
        assert info.value.residual > 0


class TestDarkFringe:
    def test_parabola_refined(self):
        rho = np.linspace(0.0, 2.0, 201)
        inten = 1.0 - 0.5 * np.exp(-((rho - 1.0037) / 0.05) ** 2)
        assert dark_fringe(rho, inten) == pytest.approx(1.0037, abs=2e-3)

    def test_endpoints_never_count(self):
        rho = np.linspace(0.0, 1.0, 50)
        assert math.isnan(dark_fringe(rho, 0.5 + rho))

    def test_shallow_minimum_ignored(self):
        rho = np.linspace(0.0, 2.0, 201)
        inten = 1.0 - 0.01 * np.exp(-((rho - 1.0) / 0.05) ** 2)
        assert math.isnan(dark_fringe(rho, inten))

    def test_deepest_of_several(self):
        rho = np.linspace(0.0, 3.0, 301)
        inten = (1.0 - 0.2 * np.exp(-((rho - 0.5) / 0.05) ** 2)
                 - 0.6 * np.exp(-((rho - 1.5) / 0.05) ** 2))
        assert dark_fringe(rho, inten) == pytest.approx(1.5, abs=0.01)
