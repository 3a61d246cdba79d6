"""Finite-difference time-domain solver for the 2D acoustic wave equation.

The discrete forward model, for a field ``p`` on the full grid, is

    p[k+1] = G * (2 p[k] - G p[k-1] + C * (L p[k] + s[k])),   p[0] = p[-1] = 0

with ``C = (c dt)^2``, ``L`` the 4th-order (5 points per axis) Laplacian with
zero values outside the grid and ``G`` a multiplicative sponge.  Traces are
``y[k] = p[k]`` sampled at the receiver pixels, ``k = 0 .. K-1``.

The adjoint recursion below is the exact transpose of ``s -> y`` (sponge
included), so inner-product tests hold to round-off rather than to
discretisation error.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Iterator

import numba
import numpy as np

from .grid import CFL_LIMIT, Grid, check_cfl

_A1 = 4.0 / 3.0
_A2 = -1.0 / 12.0


class SimulationError(RuntimeError):
    """Raised when the time stepping produces non-finite values."""


@numba.njit(cache=True)
def _forward_step(p, p_prev, C, G, out):
    # out = G * (2 p - G p_prev + C * L p)
    nb, n, m = p.shape
    for s in range(nb):
        for i in range(n):
            for j in range(m):
                v = -5.0 * p[s, i, j]
                if i > 0:
                    v += _A1 * p[s, i - 1, j]
                if i > 1:
                    v += _A2 * p[s, i - 2, j]
                if i < n - 1:
                    v += _A1 * p[s, i + 1, j]
                if i < n - 2:
                    v += _A2 * p[s, i + 2, j]
                if j > 0:
                    v += _A1 * p[s, i, j - 1]
                if j > 1:
                    v += _A2 * p[s, i, j - 2]
                if j < m - 1:
                    v += _A1 * p[s, i, j + 1]
                if j < m - 2:
                    v += _A2 * p[s, i, j + 2]
                g = G[i, j]
                out[s, i, j] = g * (2.0 * p[s, i, j] - g * p_prev[s, i, j] + C[i, j] * v)


@numba.njit(cache=True)
def _adjoint_step(q, q_next, C, G, out):
    # out = G * (2 q - G q_next + L (C q)), the transpose of _forward_step
    nb, n, m = q.shape
    for s in range(nb):
        for i in range(n):
            for j in range(m):
                v = -5.0 * C[i, j] * q[s, i, j]
                if i > 0:
                    v += _A1 * C[i - 1, j] * q[s, i - 1, j]
                if i > 1:
                    v += _A2 * C[i - 2, j] * q[s, i - 2, j]
                if i < n - 1:
                    v += _A1 * C[i + 1, j] * q[s, i + 1, j]
                if i < n - 2:
                    v += _A2 * C[i + 2, j] * q[s, i + 2, j]
                if j > 0:
                    v += _A1 * C[i, j - 1] * q[s, i, j - 1]
                if j > 1:
                    v += _A2 * C[i, j - 2] * q[s, i, j - 2]
                if j < m - 1:
                    v += _A1 * C[i, j + 1] * q[s, i, j + 1]
                if j < m - 2:
                    v += _A2 * C[i, j + 2] * q[s, i, j + 2]
                g = G[i, j]
                out[s, i, j] = g * (2.0 * q[s, i, j] - g * q_next[s, i, j] + v)


def laplacian(p: np.ndarray, dx: float) -> np.ndarray:
    """4th-order Laplacian with zero exterior values (reference implementation)."""
    out = -5.0 * p
    out[..., 1:, :] += _A1 * p[..., :-1, :]
    out[..., :-1, :] += _A1 * p[..., 1:, :]
    out[..., 2:, :] += _A2 * p[..., :-2, :]
    out[..., :-2, :] += _A2 * p[..., 2:, :]
    out[..., :, 1:] += _A1 * p[..., :, :-1]
    out[..., :, :-1] += _A1 * p[..., :, 1:]
    out[..., :, 2:] += _A2 * p[..., :, :-2]
    out[..., :, :-2] += _A2 * p[..., :, 2:]
    return out / dx**2


def sponge_profile(n: int, width: int = 20, alpha: float = 1.5) -> np.ndarray:
    """Multiplicative damping exp(-alpha (depth/width)^2) in a border of ``width`` cells."""
    idx = np.arange(n)
    dist = np.minimum(idx, n - 1 - idx)
    depth = np.clip(width - dist, 0, None).astype(float)
    g1 = np.exp(-alpha * (depth / max(width, 1)) ** 2) if width > 0 else np.ones(n)
    return np.minimum.outer(g1, g1)


@dataclass(frozen=True)
class SourceTerm:
    """Point sources: ``positions`` (P, 2) pixel indices and per-point ``waveforms`` (P, K).

    An encoded source is just a SourceTerm whose waveforms are weighted copies
    of the excitation pulse.
    """

    positions: np.ndarray
    waveforms: np.ndarray

    def __post_init__(self):
        pos = np.atleast_2d(np.asarray(self.positions, dtype=np.int64))
        wav = np.atleast_2d(np.asarray(self.waveforms, dtype=float))
        if pos.shape[1] != 2 or pos.shape[0] != wav.shape[0]:
            raise ValueError("positions must be (P, 2) and match waveforms (P, K)")
        if not np.all(np.isfinite(wav)):
            raise ValueError("source waveform is not finite")
        object.__setattr__(self, "positions", pos)
        object.__setattr__(self, "waveforms", wav)

    @classmethod
    def point(cls, location, waveform) -> "SourceTerm":
        return cls(np.asarray(location)[None, :], np.asarray(waveform)[None, :])

    @classmethod
    def encoded(cls, locations, weights, waveform) -> "SourceTerm":
        weights = np.asarray(weights, dtype=float)
        return cls(np.asarray(locations), weights[:, None] * np.asarray(waveform)[None, :])


class WavePropagator:
    """Forward and adjoint wave solves for a fixed grid and receiver layout.

    Args:
        grid: simulation grid.
        receivers: (J, 2) receiver pixel indices.
        sponge_width: absorbing border width in cells.
        sponge_alpha: sponge strength.
        cfl_limit: reject speed maps whose CFL number reaches this value.
    """

    check_every = 64

    def __init__(self, grid: Grid, receivers, sponge_width: int = 20, sponge_alpha: float = 1.5,
                 cfl_limit: float = CFL_LIMIT):
        self.grid = grid
        self.receivers = np.atleast_2d(np.asarray(receivers, dtype=np.int64))
        n = grid.n_full
        if np.any(self.receivers < 0) or np.any(self.receivers >= n):
            raise ValueError("receiver outside the grid")
        self.G = sponge_profile(n, sponge_width, sponge_alpha)
        self.cfl_limit = cfl_limit
        self._rr = self.receivers[:, 0]
        self._rc = self.receivers[:, 1]

    @property
    def n_receivers(self) -> int:
        return len(self.receivers)

    def _coeff(self, c_full: np.ndarray) -> np.ndarray:
        c_full = np.asarray(c_full, dtype=float)
        n = self.grid.n_full
        if c_full.shape != (n, n):
            raise ValueError(f"speed map must be {n}x{n}, got {c_full.shape}")
        if not np.all(c_full > 0):
            raise ValueError("speed of sound must be positive")
        check_cfl(float(c_full.max()), self.grid.dt, self.grid.dx, self.cfl_limit)
        # kernels apply the bare stencil, so the coefficient carries 1/dx^2
        return np.ascontiguousarray((c_full * self.grid.dt / self.grid.dx) ** 2)

    # -- low level -----------------------------------------------------------------
    def run_forward(self, c_full, inject: Callable[[int, np.ndarray, np.ndarray], None],
                    n_batch: int = 1, store: bool = False, observe=None):
        """Step the forward recursion with a caller-supplied source.

        ``inject(k, gc, p_next)`` must add ``G*C*s[k]`` into ``p_next`` (shape
        (B, n, n)); ``gc`` is the precomputed ``G*C`` array.  ``observe(k,
        p_prev, p, p_next)``, if given, sees fields k-1, k and k+1 after each step.

        Returns traces (B, K, J) and, if ``store``, the movie (K, B, n, n).
        """
        C = self._coeff(c_full)
        G = self.G
        gc = G * C * self.grid.dx**2
        K, n = self.grid.n_steps, self.grid.n_full
        p_prev = np.zeros((n_batch, n, n))
        p = np.zeros((n_batch, n, n))
        p_next = np.empty((n_batch, n, n))
        traces = np.zeros((n_batch, K, self.n_receivers))
        movie = np.zeros((K, n_batch, n, n)) if store else None
        for k in range(K):
            traces[:, k, :] = p[:, self._rr, self._rc]
            if store:
                movie[k] = p
            if k == K - 1:
                break
            _forward_step(p, p_prev, C, G, p_next)
            inject(k, gc, p_next)
            if observe is not None:
                observe(k, p_prev, p, p_next)
            p_prev, p, p_next = p, p_next, p_prev
            if (k + 1) % self.check_every == 0 and not np.all(np.isfinite(p)):
                raise SimulationError(f"non-finite pressure at step {k + 1}; check CFL and source")
        if not np.all(np.isfinite(traces)):
            raise SimulationError("non-finite traces")
        return traces, movie

    def run_adjoint(self, c_full, residual: np.ndarray) -> Iterator[tuple[int, np.ndarray, np.ndarray]]:
        """Backward recursion driven by trace residuals (B, K, J).

        Yields ``(k, q_k, C)`` for k = K-2 .. 0, where ``C = (c dt)^2`` and the
        source-space adjoint is ``C * q_k`` (zero for k = K-1).
        """
        C = self._coeff(c_full)
        C_phys = C * self.grid.dx**2
        G = self.G
        residual = np.asarray(residual, dtype=float)
        if residual.ndim == 2:
            residual = residual[None]
        K, n = self.grid.n_steps, self.grid.n_full
        nb = residual.shape[0]
        if residual.shape[1:] != (K, self.n_receivers):
            raise ValueError(f"residual shape {residual.shape} does not match (B, {K}, {self.n_receivers})")
        q_next = np.zeros((nb, n, n))  # q[j+1]
        q = np.zeros((nb, n, n))       # q[j]
        q_prev = np.empty((nb, n, n))  # q[j-1]
        g_rec = G[self._rr, self._rc]
        b_idx = np.repeat(np.arange(nb), self.n_receivers)
        r_idx = np.tile(self._rr, nb)
        c_idx = np.tile(self._rc, nb)
        for j in range(K - 1, 0, -1):
            _adjoint_step(q, q_next, C, G, q_prev)
            np.add.at(q_prev, (b_idx, r_idx, c_idx), (g_rec * residual[:, j, :]).ravel())
            q_next, q, q_prev = q, q_prev, q_next
            if j % self.check_every == 0 and not np.all(np.isfinite(q)):
                raise SimulationError(f"non-finite adjoint field at step {j - 1}")
            yield j - 1, q, C_phys

    # -- public API ----------------------------------------------------------------
    def point_injector(self, sources: list[SourceTerm]):
        """Injector for a batch of point-source terms (one per batch member)."""
        K = self.grid.n_steps
        inv_dx2 = 1.0 / self.grid.dx**2
        b_idx, rows, cols, wav = [], [], [], []
        for b, src in enumerate(sources):
            if src.waveforms.shape[1] != K:
                raise ValueError(f"waveform length {src.waveforms.shape[1]} != n_steps {K}")
            if np.any(src.positions < 0) or np.any(src.positions >= self.grid.n_full):
                raise ValueError("source outside the grid")
            b_idx.append(np.full(len(src.positions), b))
            rows.append(src.positions[:, 0])
            cols.append(src.positions[:, 1])
            wav.append(src.waveforms)
        b_idx = np.concatenate(b_idx)
        rows = np.concatenate(rows)
        cols = np.concatenate(cols)
        wav = np.concatenate(wav) * inv_dx2

        def inject(k, gc, p_next):
            np.add.at(p_next, (b_idx, rows, cols), gc[rows, cols] * wav[:, k])

        return inject

    def simulate(self, c_full, src: SourceTerm, store: bool = False):
        """Traces (K, J) for one source term, plus the (K, n, n) movie if ``store``."""
        traces, movie = self.run_forward(c_full, self.point_injector([src]), 1, store)
        return traces[0], (movie[:, 0] if store else None)

    def simulate_many(self, c_full, sources: list[SourceTerm]) -> np.ndarray:
        """Traces (B, K, J) for a batch of independent source terms."""
        traces, _ = self.run_forward(c_full, self.point_injector(sources), len(sources))
        return traces

    def simulate_density(self, c_full, density: np.ndarray, store: bool = False):
        """Solve with a distributed source movie ``density`` (K, n, n)."""
        density = np.asarray(density, dtype=float)

        def inject(k, gc, p_next):
            p_next[0] += gc * density[k]

        traces, movie = self.run_forward(c_full, inject, 1, store)
        return traces[0], (movie[:, 0] if store else None)

    def adjoint_simulate(self, c_full, residual: np.ndarray) -> np.ndarray:
        """Source-space adjoint movie (K, n, n) of ``density -> traces``."""
        residual = np.asarray(residual, dtype=float)
        K, n = self.grid.n_steps, self.grid.n_full
        out = np.zeros((K, n, n))
        for k, q, C in self.run_adjoint(c_full, residual[None]):
            out[k] = C * q[0]
        return out

    def fwi_gradient(self, c_full, src: SourceTerm, observed: np.ndarray):
        """Misfit 0.5*||y(c) - d||^2 and its exact gradient with respect to ``c``.

        Returns ``(misfit, gradient over the FOV, simulated traces)``.
        """
        c_full = np.asarray(c_full, dtype=float)
        traces, movie = self.simulate(c_full, src, store=True)
        residual = traces - observed
        misfit = 0.5 * float(np.sum(residual**2))
        grad = self._gradient_from_fields(c_full, movie, residual)
        return misfit, grad, traces

    def _gradient_from_fields(self, c_full, movie, residual):
        sl = self.grid.fov
        G = self.G[sl]
        inv_g = 1.0 / G
        acc = np.zeros((self.grid.n_fov, self.grid.n_fov))
        zero = np.zeros_like(acc)
        for k, q, _ in self.run_adjoint(c_full, residual[None]):
            p_prev = movie[k - 1][sl] if k > 0 else zero
            # p[k+1]/G - 2 p[k] + G p[k-1] == C * (L p[k] + s[k])
            d2 = movie[k + 1][sl] * inv_g - 2.0 * movie[k][sl] + G * p_prev
            acc += q[0][sl] * d2
        return 2.0 * acc / c_full[sl]
