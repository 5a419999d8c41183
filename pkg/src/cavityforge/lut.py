"""Lookup table of simulated contrast profiles keyed by (radius nm, defocus um).

Binary layout (all little-endian)::

    magic        8 bytes   b"CAVLUT\\r\\n"
    version      uint32    FORMAT_VERSION
    header_len   uint32
    header       header_len bytes of UTF-8 JSON (sorted keys): grid spec,
                 microscope params, request settings
    n_entries    uint32
    n_entries records, in grid order (radius-major):
        radius_nm, defocus_um, beta, rho_max      4 x float64
        n_samples, quadrature_nodes               2 x uint32
        convergence_residual                      float64
        psi                                       2*n_samples float64, re/im interleaved

The rho grid of an entry is ``linspace(0, rho_max, n_samples)``.
"""
from __future__ import annotations

import json
import os
import struct
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .physics import (ContrastProfile, MicroscopeParams, SimulationRequest,
                      simulate_profile)

FORMAT_VERSION = 1
MAGIC = b"CAVLUT\r\n"

DESK_RADII_NM = tuple(float(r) for r in range(1, 51))
DESK_DEFOCUS_UM = (-0.3, -0.8, -1.3, -1.8, -2.3)

_ENTRY_HEAD = struct.Struct("<4d2Id")


class LUTError(Exception):
    pass


class LUTBuildError(LUTError):
    def __init__(self, key, cause: Exception):
        super().__init__(f"simulation failed for key R={key[0]} nm, Z={key[1]} um: {cause}")
        self.key = key
        self.cause = cause

    def __reduce__(self):
        return type(self), (self.key, self.cause)


@dataclass(eq=False)
class ProfileLUT:
    radii_nm: tuple[float, ...]
    defocus_um: tuple[float, ...]
    params: MicroscopeParams
    entries: dict[tuple[float, float], ContrastProfile]
    n_radial_samples: int = 512
    n_quadrature_nodes: int = 2048
    rho_max: float = 3.0
    version: int = FORMAT_VERSION
    timings: dict = field(default_factory=dict, repr=False)

    def __len__(self):
        return len(self.entries)

    def keys(self):
        return [(r, z) for r in self.radii_nm for z in self.defocus_um]

    def header(self) -> dict:
        return {
            "format": "cavityforge-lut",
            "version": self.version,
            "radii_nm": list(self.radii_nm),
            "defocus_um": list(self.defocus_um),
            "params": self.params.to_dict(),
            "request": {
                "n_radial_samples": self.n_radial_samples,
                "n_quadrature_nodes": self.n_quadrature_nodes,
                "rho_max": self.rho_max,
            },
        }


def _check_grid(values, name):
    values = tuple(float(v) for v in values)
    if not values:
        raise LUTError(f"{name} grid is empty")
    if len(set(values)) != len(values):
        raise LUTError(f"{name} grid has duplicate values")
    return values


def _simulate_key(args):
    key, params, n_radial_samples, n_quadrature_nodes, rho_max = args
    req = SimulationRequest(key[0], key[1], params, n_radial_samples=n_radial_samples,
                            n_quadrature_nodes=n_quadrature_nodes, rho_max=rho_max)
    t0 = time.perf_counter()
    try:
        profile = simulate_profile(req)
    except Exception as exc:
        raise LUTBuildError(key, exc) from exc
    return key, profile, time.perf_counter() - t0


def build_lut(radii_nm, defocus_um, params: MicroscopeParams | None = None, *,
              n_radial_samples: int = 512, n_quadrature_nodes: int = 2048,
              rho_max: float = 3.0, jobs: int = 1, progress=None) -> ProfileLUT:
    """Simulate one profile per grid point.

    Grid points are independent; ``jobs > 1`` fans them out to worker
    processes. Entries are stored in grid order regardless of completion order.
    """
    params = params or MicroscopeParams()
    radii = _check_grid(radii_nm, "radius")
    defocus = _check_grid(defocus_um, "defocus")
    lut = ProfileLUT(radii, defocus, params, {}, n_radial_samples=n_radial_samples,
                     n_quadrature_nodes=n_quadrature_nodes, rho_max=rho_max)
    tasks = [(key, params, n_radial_samples, n_quadrature_nodes, rho_max) for key in lut.keys()]
    results = {}
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            for key, profile, dt in pool.map(_simulate_key, tasks):
                results[key] = (profile, dt)
                if progress:
                    progress(key, dt)
    else:
        for task in tasks:
            key, profile, dt = _simulate_key(task)
            results[key] = (profile, dt)
            if progress:
                progress(key, dt)
    for key in lut.keys():
        lut.entries[key], lut.timings[key] = results[key]
    return lut


def _grid_coordinate(grid: tuple[float, ...], value: float) -> tuple[np.ndarray, float]:
    order = np.argsort(grid)
    sorted_grid = np.asarray(grid, dtype=np.float64)[order]
    idx = np.empty(len(grid))
    idx[order] = np.arange(len(grid), dtype=np.float64)
    if len(grid) == 1:
        return idx, 0.0
    return idx, float(np.interp(value, sorted_grid, np.arange(len(grid), dtype=np.float64)))


def nearest_key(lut: ProfileLUT, radius_nm: float, defocus_um: float) -> tuple[float, float]:
    """Nearest grid key in fractional-index coordinates; ties go to the smaller key."""
    if not lut.entries:
        raise LUTError("lookup in an empty LUT")
    r_idx, r_pos = _grid_coordinate(lut.radii_nm, radius_nm)
    z_idx, z_pos = _grid_coordinate(lut.defocus_um, defocus_um)
    best = None
    for i, r in enumerate(lut.radii_nm):
        for j, z in enumerate(lut.defocus_um):
            d2 = (r_idx[i] - r_pos) ** 2 + (z_idx[j] - z_pos) ** 2
            cand = (d2, r, z)
            if best is None or cand < best:
                best = cand
    return best[1], best[2]


def lut_lookup(lut: ProfileLUT, radius_nm: float, defocus_um: float) -> ContrastProfile:
    return lut.entries[nearest_key(lut, radius_nm, defocus_um)]


def lut_to_bytes(lut: ProfileLUT) -> bytes:
    header = json.dumps(lut.header(), sort_keys=True, separators=(",", ":")).encode("utf-8")
    parts = [MAGIC, struct.pack("<II", lut.version, len(header)), header,
             struct.pack("<I", len(lut.entries))]
    for key in lut.keys():
        p = lut.entries[key]
        n = p.psi.size
        parts.append(_ENTRY_HEAD.pack(key[0], key[1], p.beta, p.rho_max, n,
                                      p.quadrature_nodes, p.convergence_residual))
        inter = np.empty(2 * n, dtype="<f8")
        inter[0::2] = p.psi.real
        inter[1::2] = p.psi.imag
        parts.append(inter.tobytes())
    return b"".join(parts)


def lut_from_bytes(data: bytes) -> ProfileLUT:
    if data[:8] != MAGIC:
        raise LUTError("not a LUT file (bad magic)")
    version, hlen = struct.unpack_from("<II", data, 8)
    if version != FORMAT_VERSION:
        raise LUTError(f"unsupported LUT version {version}")
    off = 16
    header = json.loads(data[off:off + hlen].decode("utf-8"))
    off += hlen
    params = MicroscopeParams(**header["params"])
    req = header["request"]
    lut = ProfileLUT(tuple(header["radii_nm"]), tuple(header["defocus_um"]), params, {},
                     n_radial_samples=req["n_radial_samples"],
                     n_quadrature_nodes=req["n_quadrature_nodes"],
                     rho_max=req["rho_max"], version=version)
    (count,) = struct.unpack_from("<I", data, off)
    off += 4
    for _ in range(count):
        r, z, beta, rho_max, n, nodes, residual = _ENTRY_HEAD.unpack_from(data, off)
        off += _ENTRY_HEAD.size
        psi = np.frombuffer(data, dtype="<c16", count=n, offset=off).astype(np.complex128)
        off += 16 * n
        request = SimulationRequest(r, z, params, n_radial_samples=lut.n_radial_samples,
                                    n_quadrature_nodes=lut.n_quadrature_nodes,
                                    rho_max=lut.rho_max)
        lut.entries[(r, z)] = ContrastProfile(
            request=request, beta=beta, rho=np.linspace(0.0, rho_max, n), psi=psi,
            intensity=psi.real * psi.real + psi.imag * psi.imag, rho_max=rho_max,
            quadrature_nodes=nodes, convergence_residual=residual)
    if off != len(data):
        raise LUTError("trailing bytes after last LUT entry")
    if set(lut.entries) != set(lut.keys()):
        raise LUTError("LUT entries do not match the grid")
    return lut


def save_lut(lut: ProfileLUT, path) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(lut_to_bytes(lut))
    os.replace(tmp, path)


def load_lut(path) -> ProfileLUT:
    return lut_from_bytes(Path(path).read_bytes())
