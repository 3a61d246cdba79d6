"""Virtual ring-array system: geometry, excitation pulse, noisy measurements, source encoding."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .grid import C_WATER, Grid, check_cfl, disk_mask, embed_in_full_grid, points_per_wavelength, ring_pixel
from .wave import SourceTerm, WavePropagator


@dataclass(frozen=True)
class Pulse:
    """Gaussian-modulated sine burst; f0 in MHz, t0 and sigma in us."""

    f0: float = 0.5
    t0: float = 3.2
    sigma: float = 2.0


def pulse_waveform(pulse: Pulse, n_steps: int, dt: float) -> np.ndarray:
    if pulse.sigma <= 0 or pulse.f0 <= 0:
        raise ValueError("pulse sigma and f0 must be positive")
    t = np.arange(n_steps) * dt
    return np.exp(-((t - pulse.t0) ** 2) / (2 * pulse.sigma**2)) * np.sin(2 * np.pi * pulse.f0 * t)


@dataclass(frozen=True)
class ImagingSystem:
    grid: Grid
    n_receivers: int
    n_sources: int
    ring_radius: float
    pulse: Pulse
    c0: float
    receivers: np.ndarray
    sources: np.ndarray
    sponge_width: int = 20
    sponge_alpha: float = 1.5
    mask_margin: int = 3
    propagator: WavePropagator = field(repr=False, compare=False, default=None)

    @property
    def waveform(self) -> np.ndarray:
        return pulse_waveform(self.pulse, self.grid.n_steps, self.grid.dt)

    def source_term(self, i: int) -> SourceTerm:
        return SourceTerm.point(self.sources[i], self.waveform)

    def encoded_source(self, a: np.ndarray) -> SourceTerm:
        a = np.asarray(a, dtype=float)
        if a.shape != (self.n_sources,):
            raise ValueError(f"encoding length {a.shape} != n_sources {self.n_sources}")
        return SourceTerm.encoded(self.sources, a, self.waveform)

    def recon_mask(self) -> np.ndarray:
        """FOV pixels strictly inside the ring (minus ``mask_margin`` cells)."""
        radius = self.ring_radius / self.grid.dx - self.mask_margin
        return disk_mask(self.grid.n_fov, radius)

    def homogeneous(self) -> np.ndarray:
        return np.full((self.grid.n_full, self.grid.n_full), self.c0)


def build_system(grid: Grid, n_receivers: int = 256, n_sources: int = 64, ring_radius: float = 96.0,
                 pulse: Pulse | None = None, c0: float = C_WATER, sponge_width: int = 20,
                 sponge_alpha: float = 1.5, mask_margin: int = 3) -> ImagingSystem:
    """Ring of ``n_receivers`` equispaced transducers; every (J/I)-th one also transmits."""
    pulse = pulse or Pulse()
    if n_sources < 1 or n_receivers % n_sources:
        raise ValueError(f"n_receivers={n_receivers} must be divisible by n_sources={n_sources}")
    if ring_radius <= 0:
        raise ValueError("ring radius must be positive")
    receivers = np.array([ring_pixel(grid, ring_radius, 2 * math.pi * j / n_receivers)
                          for j in range(n_receivers)], dtype=np.int64)
    if receivers.min() < 0 or receivers.max() >= grid.n_full:
        raise ValueError(f"ring of radius {ring_radius} mm does not fit in a {grid.n_full}-pixel grid")
    stride = n_receivers // n_sources
    sources = receivers[::stride].copy()
    prop = WavePropagator(grid, receivers, sponge_width, sponge_alpha)
    return ImagingSystem(grid, n_receivers, n_sources, ring_radius, pulse, c0, receivers, sources,
                         sponge_width, sponge_alpha, mask_margin, prop)


def check_system(system: ImagingSystem, c_min: float = 1.35, c_max: float = 1.7) -> tuple[float, float]:
    """CFL number and points per wavelength over the expected speed range."""
    g = system.grid
    return (check_cfl(c_max, g.dt, g.dx),
            points_per_wavelength(c_min, system.pulse.f0, g.dx))


def simulate_all(c_full: np.ndarray, system: ImagingSystem) -> np.ndarray:
    """Wave traces (I, K, J) for every source."""
    srcs = [system.source_term(i) for i in range(system.n_sources)]
    return system.propagator.simulate_many(c_full, srcs)


def snr_to_noise_std(traces: np.ndarray, snr_db: float) -> float:
    """Noise std giving amplitude SNR ``snr_db`` (dB = 20 log10) against the pooled RMS."""
    rms = float(np.sqrt(np.mean(np.square(traces))))
    if rms == 0:
        raise ValueError("cannot set a noise level relative to all-zero traces")
    if math.isinf(snr_db) and snr_db > 0:
        return 0.0
    return rms / 10 ** (snr_db / 20)


@dataclass
class MeasurementSet:
    """Noisy traces ``data`` (I, K, J) with the clean part kept for re-noising."""

    data: np.ndarray
    clean: np.ndarray
    noise_std: float
    snr_db: float
    seed: int
    phantom_id: int | None = None


def add_noise(clean: np.ndarray, snr_db: float, seed: int, noise_std: float | None = None,
              phantom_id: int | None = None) -> MeasurementSet:
    std = snr_to_noise_std(clean, snr_db) if noise_std is None else float(noise_std)
    rng = np.random.default_rng(seed)
    noise = rng.standard_normal(clean.shape) * std if std > 0 else 0.0
    return MeasurementSet(clean + noise, clean, std, snr_db, seed, phantom_id)


def acquire(sos_fov: np.ndarray, system: ImagingSystem, snr_db: float, seed: int,
            phantom_id: int | None = None) -> MeasurementSet:
    """Simulate all sources through ``sos_fov`` and add white Gaussian noise."""
    c_full = embed_in_full_grid(sos_fov, system.grid, system.c0)
    return add_noise(simulate_all(c_full, system), snr_db, seed, phantom_id=phantom_id)


def incident_traces(system: ImagingSystem) -> np.ndarray:
    """Traces (I, K, J) through pure water."""
    return simulate_all(system.homogeneous(), system)


def sample_encoding(n_sources: int, distribution: str = "rademacher", rng=None) -> np.ndarray:
    """Zero-mean, identity-covariance random weights."""
    rng = rng if rng is not None else np.random.default_rng()
    if distribution == "rademacher":
        return rng.integers(0, 2, n_sources).astype(float) * 2.0 - 1.0
    if distribution in ("normal", "gaussian"):
        return rng.standard_normal(n_sources)
    raise ValueError(f"unknown encoding distribution {distribution!r}")


def encode(stack: np.ndarray, a: np.ndarray) -> np.ndarray:
    """Weighted sum over the leading (source) axis."""
    stack = np.asarray(stack)
    a = np.asarray(a, dtype=float)
    if stack.shape[0] != a.shape[0]:
        raise ValueError(f"encoding length {a.shape[0]} != number of sources {stack.shape[0]}")
    return np.tensordot(a, stack, axes=1)
