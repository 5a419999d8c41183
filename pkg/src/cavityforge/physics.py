"""Defocused cavity contrast: 1D radial exit-wave profiles.

The exit wave relative to the perfect-crystal background is

    psi/psi_p = 1 - (2i/beta) exp(i rho^2/beta)
                  * int_0^1 Delta(rho') J0(2 rho rho'/beta) exp(i rho'^2/beta) rho' drho'

with reduced radius ``rho = r/R`` and reduced defocus ``beta = 2 Z / (k R^2)``.
The integral is evaluated with composite Simpson after the substitution
``rho' = sin(theta)``, which removes the square-root endpoint behaviour of
the spherical chord length.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import kernels

# CODATA 2018
PLANCK_H = 6.62607015e-34
ELECTRON_MASS = 9.1093837015e-31
ELEMENTARY_CHARGE = 1.602176634e-19
SPEED_OF_LIGHT = 299792458.0

DEFAULT_FRINGE_FLOOR = 0.05
FAR_FIELD_TOLERANCE = 0.02
CONVERGENCE_TOLERANCE = 1e-4
DEFAULT_QUADRATURE_NODES = 2048
# largest h * (phase rate) accepted by the automatic node refinement
_MAX_PHASE_STEP = 1.0
_RHO_MAX_CAP = 96.0


class PhysicsError(ValueError):
    """Invalid physical input."""


class SingularDefocusError(PhysicsError):
    """Zero defocus makes the reduced defocus vanish."""


class ConvergenceError(RuntimeError):
    """Node doubling changed the profile by more than the tolerance."""

    def __init__(self, message: str, residual: float):
        super().__init__(f"{message} (residual {residual:.3e})")
        self.message = message
        self.residual = residual

    def __reduce__(self):
        return type(self), (self.message, self.residual)


def electron_wavelength(voltage: float) -> float:
    """Relativistic de Broglie wavelength in meters for an accelerating voltage in volts."""
    if not voltage > 0:
        raise PhysicsError(f"accelerating voltage must be positive, got {voltage!r}")
    eV = ELEMENTARY_CHARGE * voltage
    momentum = math.sqrt(2.0 * ELECTRON_MASS * eV
                         * (1.0 + eV / (2.0 * ELECTRON_MASS * SPEED_OF_LIGHT ** 2)))
    return PLANCK_H / momentum


@dataclass(frozen=True)
class MicroscopeParams:
    """Beam and material constants shared by every simulation in a LUT.

    ``mean_inner_potential_phase`` (rad/m) and ``absorption_coefficient`` (1/m)
    describe what the cavity does to the wave per meter of chord, so a vacuum
    cavity in a metal has both negative: less phase, less absorption.
    """

    accelerating_voltage: float = 200e3
    mean_inner_potential_phase: float = -1.46e8
    absorption_coefficient: float = -2.0e6
    foil_thickness_t: float = 100e-9
    cavity_depth_zeta: float = 50e-9

    def __post_init__(self):
        if not self.accelerating_voltage > 0:
            raise PhysicsError("accelerating_voltage must be positive")
        if not self.foil_thickness_t > 0:
            raise PhysicsError("foil_thickness_t must be positive")
        if not 0 <= self.cavity_depth_zeta <= self.foil_thickness_t:
            raise PhysicsError("cavity_depth_zeta must lie in [0, foil_thickness_t]")

    @property
    def wavelength(self) -> float:
        return electron_wavelength(self.accelerating_voltage)

    @property
    def wavevector_k(self) -> float:
        return 2.0 * math.pi / self.wavelength

    def to_dict(self) -> dict:
        return {
            "accelerating_voltage": self.accelerating_voltage,
            "mean_inner_potential_phase": self.mean_inner_potential_phase,
            "absorption_coefficient": self.absorption_coefficient,
            "foil_thickness_t": self.foil_thickness_t,
            "cavity_depth_zeta": self.cavity_depth_zeta,
        }


DeltaModel = Callable[[np.ndarray, float, MicroscopeParams], np.ndarray]


def spherical_cavity_delta(rho_prime: np.ndarray, radius_m: float,
                           params: MicroscopeParams) -> np.ndarray:
    """Delta(rho') for a spherical cavity of radius ``radius_m``.

    The chord through the sphere at reduced radius rho' is 2R sqrt(1 - rho'^2).
    """
    rho_prime = np.asarray(rho_prime, dtype=np.float64)
    chord = 2.0 * radius_m * np.sqrt(np.maximum((1.0 - rho_prime) * (1.0 + rho_prime), 0.0))
    return np.expm1((1j * params.mean_inner_potential_phase
                     - params.absorption_coefficient) * chord)


@dataclass(frozen=True)
class SimulationRequest:
    cavity_radius_nm: float
    defocus_um: float
    params: MicroscopeParams = field(default_factory=MicroscopeParams)
    n_radial_samples: int = 512
    n_quadrature_nodes: int = DEFAULT_QUADRATURE_NODES
    rho_max: float = 3.0
    delta_model: DeltaModel = spherical_cavity_delta

    def __post_init__(self):
        if not self.cavity_radius_nm > 0:
            raise PhysicsError("cavity radius must be positive")
        if self.n_radial_samples < 64:
            raise PhysicsError("n_radial_samples must be >= 64")
        if self.n_quadrature_nodes < 128 or self.n_quadrature_nodes % 2:
            raise PhysicsError("n_quadrature_nodes must be even and >= 128")
        if self.rho_max < 3.0:
            raise PhysicsError("rho_max must be >= 3")

    @property
    def beta(self) -> float:
        return reduced_defocus(self.defocus_um, self.params.wavevector_k, self.cavity_radius_nm)


def reduced_defocus(defocus_um: float, wavevector_k: float, radius_nm: float) -> float:
    """beta = 2 Z / (k R^2), all in SI units."""
    z = defocus_um * 1e-6
    r = radius_nm * 1e-9
    return 2.0 * z / (wavevector_k * r * r)


@dataclass(frozen=True, eq=False)
class ContrastProfile:
    request: SimulationRequest
    beta: float
    rho: np.ndarray
    psi: np.ndarray
    intensity: np.ndarray
    rho_max: float
    quadrature_nodes: int = 0
    convergence_residual: float = 0.0

    @property
    def radius_nm(self) -> float:
        return self.request.cavity_radius_nm

    @property
    def defocus_um(self) -> float:
        return self.request.defocus_um

    def fringe_rho(self, contrast_floor: float = DEFAULT_FRINGE_FLOOR) -> float:
        """Reduced radius of the darkest outer fringe, NaN when there is none."""
        return dark_fringe(self.rho, self.intensity, contrast_floor)

    def support_rho(self, tolerance: float = FAR_FIELD_TOLERANCE) -> float:
        """Smallest rho beyond which the intensity stays within ``tolerance`` of 1."""
        off = np.flatnonzero(np.abs(self.intensity - 1.0) > tolerance)
        if off.size == 0:
            return 0.0
        last = off[-1]
        return float(self.rho[min(last + 1, self.rho.size - 1)])


def dark_fringe(rho: np.ndarray, intensity: np.ndarray,
                contrast_floor: float = DEFAULT_FRINGE_FLOOR) -> float:
    """Position of the darkest interior local minimum lying below ``1 - contrast_floor``.

    The end points never count, so a dark central spot is not a fringe. The
    minimum is refined with a three-point parabola. Returns NaN if none exists.
    """
    v = np.asarray(intensity, dtype=np.float64)
    if v.size < 3:
        return math.nan
    inner = v[1:-1]
    cand = np.flatnonzero((inner < v[:-2]) & (inner <= v[2:]) & (inner < 1.0 - contrast_floor))
    if cand.size == 0:
        return math.nan
    i = int(cand[np.argmin(inner[cand])]) + 1
    return float(np.interp(i + _parabolic_offset(v[i - 1], v[i], v[i + 1]),
                           np.arange(v.size), rho))


def _parabolic_offset(left: float, mid: float, right: float) -> float:
    denom = left - 2.0 * mid + right
    if denom <= 0:
        return 0.0
    return float(np.clip(0.5 * (left - right) / denom, -0.5, 0.5))


def _simpson_weights(n: int) -> np.ndarray:
    weights = np.full(n + 1, 2.0)
    weights[1::2] = 4.0
    weights[0] = weights[-1] = 1.0
    return weights * ((0.5 * math.pi / n) / 3.0)


def _node_levels(req: SimulationRequest, beta: float, rho: np.ndarray) -> np.ndarray:
    """Simpson intervals per rho sample.

    Each sample gets ``req.n_quadrature_nodes`` times the power-of-two factor
    that the default node count would need to resolve its phase rate, so
    doubling the requested nodes doubles every level.
    """
    rates = _phase_rate(req, beta, 0.0) + 2.0 * np.abs(rho) / abs(beta)
    need = (0.5 * math.pi / DEFAULT_QUADRATURE_NODES) * rates / _MAX_PHASE_STEP
    k = np.ceil(np.log2(np.maximum(need, 1.0))).astype(np.int64)
    return req.n_quadrature_nodes * (np.int64(1) << k)


def _quadrature(req: SimulationRequest, beta: float, rho: np.ndarray,
                refine: int = 0) -> tuple[np.ndarray, int]:
    """psi/psi_p at ``rho``; returns the samples and the finest interval count used.

    All levels are nested sub-grids of the finest one, so the integrand is
    evaluated once. ``refine`` doubles every level that many times.
    """
    levels = _node_levels(req, beta, rho) << refine
    n = int(levels.max())
    theta = np.linspace(0.0, 0.5 * math.pi, n + 1)
    s = np.sin(theta)
    c = np.cos(theta)
    delta = req.delta_model(s, req.cavity_radius_nm * 1e-9, req.params)
    base = delta * np.exp(1j * (s * s) / beta) * s * c
    integral = np.empty(rho.size, dtype=np.complex128)
    for m in np.unique(levels):
        idx = np.flatnonzero(levels == m)
        stride = n // int(m)
        g = base[::stride] * _simpson_weights(int(m))
        re, im = kernels.hankel_sum(np.ascontiguousarray(rho[idx]),
                                    np.ascontiguousarray(s[::stride]),
                                    np.ascontiguousarray(g.real),
                                    np.ascontiguousarray(g.imag), 2.0 / beta)
        integral[idx] = re + 1j * im
    psi = 1.0 - (2j / beta) * np.exp(1j * rho * rho / beta) * integral
    return psi, n


def _phase_rate(req: SimulationRequest, beta: float, rho_max: float) -> float:
    r = req.cavity_radius_nm * 1e-9
    p = req.params
    return ((1.0 + 2.0 * rho_max) / abs(beta)
            + 2.0 * r * (abs(p.mean_inner_potential_phase) + abs(p.absorption_coefficient)))


def _choose_rho_max(req: SimulationRequest, beta: float) -> float:
    """Grow rho_max (doubling) until the tail of the profile is back at background."""
    rho_max = req.rho_max
    while rho_max < _RHO_MAX_CAP:
        psi, _ = _quadrature(req, beta, np.linspace(0.9 * rho_max, rho_max, 16))
        inten = psi.real * psi.real + psi.imag * psi.imag
        if np.max(np.abs(inten - 1.0)) <= FAR_FIELD_TOLERANCE:
            return rho_max
        rho_max *= 2.0
    return min(rho_max, _RHO_MAX_CAP)


def simulate_profile(req: SimulationRequest, *, check_convergence: bool = True) -> ContrastProfile:
    """Evaluate the radial contrast profile for one (radius, defocus) pair.

    ``rho_max`` starts at ``req.rho_max`` and is doubled while the far field
    deviates from background by more than 2%; the sample density along rho
    is kept at ``n_radial_samples`` per ``req.rho_max``.
    """
    if req.defocus_um == 0:
        raise SingularDefocusError("zero defocus is singular (beta = 0)")
    beta = req.beta
    if not math.isfinite(beta) or beta == 0:
        raise SingularDefocusError(f"reduced defocus is not usable: {beta!r}")
    rho_max = _choose_rho_max(req, beta)
    n_samples = int(round(req.n_radial_samples * rho_max / req.rho_max))
    rho = np.linspace(0.0, rho_max, n_samples)
    psi, n = _quadrature(req, beta, rho)
    intensity = psi.real * psi.real + psi.imag * psi.imag
    residual = 0.0
    if check_convergence:
        fine, _ = _quadrature(req, beta, rho, refine=1)
        residual = float(np.max(np.abs(fine.real * fine.real + fine.imag * fine.imag - intensity)))
        if residual > CONVERGENCE_TOLERANCE:
            raise ConvergenceError(
                f"quadrature not converged for R={req.cavity_radius_nm} nm, "
                f"Z={req.defocus_um} um with up to {n} intervals", residual)
    return ContrastProfile(request=req, beta=beta, rho=rho, psi=psi, intensity=intensity,
                           rho_max=rho_max, quadrature_nodes=n,
                           convergence_residual=residual)
