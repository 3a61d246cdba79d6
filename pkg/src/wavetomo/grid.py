"""Cartesian grids, unit conventions and slowness transforms.

Units throughout the package: millimetres, microseconds, mm/us (so water is
1.5 mm/us) and MHz.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

C_WATER = 1.5
# Leapfrog + 4th-order 5-point Laplacian in 2D is stable for c*dt/dx < sqrt(3/8).
CFL_LIMIT = 0.6
MIN_POINTS_PER_WAVELENGTH = 4.0


@dataclass(frozen=True)
class Grid:
    """Simulation grid with a centred reconstruction field of view.

    Attributes:
        n_full: pixels per side of the simulation grid.
        n_fov: pixels per side of the reconstruction field of view.
        dx: grid spacing [mm].
        dt: time step [us].
        n_steps: number of time samples K.
    """

    n_full: int
    n_fov: int
    dx: float
    dt: float
    n_steps: int

    def __post_init__(self):
        if self.n_fov > self.n_full or self.n_fov < 1:
            raise ValueError(f"n_fov={self.n_fov} must lie in [1, n_full={self.n_full}]")
        if self.dx <= 0 or self.dt <= 0:
            raise ValueError("dx and dt must be positive")
        if self.n_steps < 2:
            raise ValueError("n_steps must be at least 2")

    @property
    def offset(self) -> int:
        return (self.n_full - self.n_fov) // 2

    @property
    def fov(self) -> tuple[slice, slice]:
        o = self.offset
        return slice(o, o + self.n_fov), slice(o, o + self.n_fov)

    @property
    def center(self) -> int:
        """Index of the pixel taken as the geometric origin."""
        return self.n_full // 2

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.n_steps) * self.dt


def embed_in_full_grid(sos: np.ndarray, grid: Grid, c0: float = C_WATER) -> np.ndarray:
    """Place a FOV-sized map in the middle of a full grid filled with ``c0``."""
    sos = np.asarray(sos, dtype=float)
    if sos.shape != (grid.n_fov, grid.n_fov):
        raise ValueError(f"map shape {sos.shape} does not match n_fov={grid.n_fov}")
    full = np.full((grid.n_full, grid.n_full), float(c0))
    full[grid.fov] = sos
    return full


def extract_fov(full: np.ndarray, grid: Grid) -> np.ndarray:
    return np.array(full[..., grid.fov[0], grid.fov[1]])


def _check_positive(**values):
    for name, v in values.items():
        if not v > 0:
            raise ValueError(f"{name} must be positive, got {v}")


def cfl_number(c_max: float, dt: float, dx: float) -> float:
    _check_positive(c_max=c_max, dt=dt, dx=dx)
    return c_max * dt / dx


def points_per_wavelength(c_min: float, f0: float, dx: float) -> float:
    _check_positive(c_min=c_min, f0=f0, dx=dx)
    ppw = c_min / (f0 * dx)
    if ppw < MIN_POINTS_PER_WAVELENGTH:
        warnings.warn(f"only {ppw:.2f} points per wavelength (< {MIN_POINTS_PER_WAVELENGTH})",
                      stacklevel=2)
    return ppw


def check_cfl(c_max: float, dt: float, dx: float, limit: float = CFL_LIMIT) -> float:
    """Return the CFL number, raising ``ValueError`` if it reaches ``limit``."""
    cfl = cfl_number(c_max, dt, dx)
    if cfl >= limit:
        raise ValueError(f"CFL number {cfl:.3f} >= stability bound {limit}")
    return cfl


def sos_to_slowness(c: np.ndarray, c0: float = C_WATER) -> np.ndarray:
    """Squared slowness b = (c0/c)^2."""
    c = np.asarray(c, dtype=float)
    if not np.all(c > 0):
        raise ValueError("speed of sound must be strictly positive")
    return (c0 / c) ** 2


def slowness_to_sos(b: np.ndarray, c0: float = C_WATER) -> np.ndarray:
    b = np.asarray(b, dtype=float)
    if not np.all(b > 0):
        raise ValueError("squared slowness must be strictly positive")
    return c0 / np.sqrt(b)


def disk_mask(n: int, radius: float, center: float | None = None) -> np.ndarray:
    """Boolean disk of ``radius`` pixels centred on pixel ``center`` (default n//2)."""
    c = n // 2 if center is None else center
    yy, xx = np.mgrid[:n, :n]
    return (yy - c) ** 2 + (xx - c) ** 2 <= radius**2


def ring_pixel(grid: Grid, radius_mm: float, angle: float) -> tuple[int, int]:
    """Nearest pixel (row, col) to the point at ``radius_mm`` and ``angle`` from the centre."""
    r = radius_mm / grid.dx
    row = grid.center + int(round(r * math.sin(angle)))
    col = grid.center + int(round(r * math.cos(angle)))
    return row, col
