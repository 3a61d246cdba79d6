"""Born (single-scattering) forward model, affine in the squared slowness.

The scattered field solves the constant-``c0`` wave equation driven by
``(1/c0^2) (1 - b) d^2 p_i/dt^2``, where ``p_i`` is the incident field.  The
map from the contrast ``x = 1 - b`` (FOV image) to scattered traces is linear;
``BornOperator.adjoint`` is its exact transpose.  Note that the gradient of a
misfit with respect to ``b`` is the *negative* of the adjoint image.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .acquisition import ImagingSystem
from .grid import embed_in_full_grid, sos_to_slowness


@dataclass(frozen=True)
class IncidentCache:
    """Water-only fields for every source.

    Attributes:
        traces: incident traces (I, K, J).
        d2p: second time derivative of the incident field over the FOV, (I, K, n_fov, n_fov).
    """

    traces: np.ndarray
    d2p: np.ndarray


def build_incident_cache(system: ImagingSystem) -> IncidentCache:
    grid = system.grid
    prop = system.propagator
    sl = (slice(None),) + grid.fov
    G = prop.G[grid.fov]
    inv_g = 1.0 / G
    inv_dt2 = 1.0 / grid.dt**2
    K, I, nf = grid.n_steps, system.n_sources, grid.n_fov
    d2p = np.zeros((I, K, nf, nf))

    def observe(k, p_prev, p, p_next):
        # inverse of the damped leapfrog update: equals c0^2 (L p + s)
        d2p[:, k] = (p_next[sl] * inv_g - 2.0 * p[sl] + G * p_prev[sl]) * inv_dt2

    sources = [system.source_term(i) for i in range(I)]
    traces, _ = prop.run_forward(system.homogeneous(), prop.point_injector(sources), I,
                                 observe=observe)
    return IncidentCache(traces, d2p)


class BornOperator:
    """Linear map from the FOV contrast ``x = 1 - b`` to scattered traces.

    Args:
        system: imaging system.
        cache: incident fields; built on demand when omitted.
    """

    def __init__(self, system: ImagingSystem, cache: IncidentCache | None = None):
        self.system = system
        self.cache = cache if cache is not None else build_incident_cache(system)
        self._c0_full = system.homogeneous()
        self._scale = 1.0 / system.c0**2

    def _weights(self, a) -> np.ndarray:
        I = self.system.n_sources
        if np.isscalar(a) or np.ndim(a) == 0:
            w = np.zeros(I)
            w[int(a)] = 1.0
            return w
        a = np.asarray(a, dtype=float)
        if a.shape != (I,):
            raise ValueError(f"encoding length {a.shape} != n_sources {I}")
        return a

    def drive(self, a) -> np.ndarray:
        """d2p for the encoded source, (K, n_fov, n_fov)."""
        return np.tensordot(self._weights(a), self.cache.d2p, axes=1)

    def apply(self, x: np.ndarray, a=0, drive: np.ndarray | None = None) -> np.ndarray:
        """Scattered traces (K, J) for source index or encoding ``a``.

        ``drive`` may pass a precomputed :meth:`drive` of ``a``.
        """
        drive = self.drive(a) if drive is None else drive
        xs = np.asarray(x, dtype=float) * self._scale
        fov = self.system.grid.fov

        def inject(k, gc, p_next):
            p_next[0][fov] += gc[fov] * xs * drive[k]

        traces, _ = self.system.propagator.run_forward(self._c0_full, inject, 1)
        return traces[0]

    def apply_all(self, x: np.ndarray) -> np.ndarray:
        """Scattered traces (I, K, J) for every source, solved as one batch."""
        xs = np.asarray(x, dtype=float) * self._scale
        fov = self.system.grid.fov
        d2p = self.cache.d2p
        I = self.system.n_sources

        def inject(k, gc, p_next):
            p_next[(slice(None),) + fov] += (gc[fov] * xs) * d2p[:, k]

        traces, _ = self.system.propagator.run_forward(self._c0_full, inject, I)
        return traces

    def adjoint(self, residual: np.ndarray, a=0, drive: np.ndarray | None = None) -> np.ndarray:
        """Transpose of :meth:`apply`: FOV image for traces ``residual`` (K, J)."""
        drive = self.drive(a) if drive is None else drive
        fov = self.system.grid.fov
        img = np.zeros(drive.shape[1:])
        for k, q, C in self.system.propagator.run_adjoint(self._c0_full, residual[None]):
            img += drive[k] * (C[fov] * q[0][fov])
        return img * self._scale

    def adjoint_all(self, residual: np.ndarray) -> np.ndarray:
        """Transpose of :meth:`apply_all` for residuals (I, K, J)."""
        fov = self.system.grid.fov
        d2p = self.cache.d2p
        img = np.zeros(d2p.shape[2:])
        for k, q, C in self.system.propagator.run_adjoint(self._c0_full, residual):
            img += np.einsum("bij,bij->ij", d2p[:, k], q[(slice(None),) + fov]) * C[fov]
        return img * self._scale

    def predict(self, sos_fov: np.ndarray) -> np.ndarray:
        """Born-modelled total traces (I, K, J): incident plus scattered."""
        x = 1.0 - sos_to_slowness(sos_fov, self.system.c0)
        return self.cache.traces + self.apply_all(x)


def born_apply(b: np.ndarray, cache: IncidentCache, src_id: int, system: ImagingSystem) -> np.ndarray:
    return BornOperator(system, cache).apply(1.0 - np.asarray(b), src_id)


def born_adjoint(residual: np.ndarray, cache: IncidentCache, src_id: int, system: ImagingSystem) -> np.ndarray:
    return BornOperator(system, cache).adjoint(residual, src_id)


def born_predict(sos_fov: np.ndarray, system: ImagingSystem, cache: IncidentCache | None = None) -> np.ndarray:
    return BornOperator(system, cache).predict(sos_fov)


def born_mismatch(sos_fov: np.ndarray, system: ImagingSystem, op: BornOperator | None = None) -> float:
    """Relative receiver-domain difference between Born and wave traces."""
    from .acquisition import simulate_all

    op = op or BornOperator(system)
    wave = simulate_all(embed_in_full_grid(sos_fov, system.grid, system.c0), system)
    return float(np.linalg.norm(op.predict(sos_fov) - wave) / np.linalg.norm(wave))
