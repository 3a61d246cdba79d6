"""Model-based reconstruction: full-waveform inversion and Born inversion.

Both solvers minimise a source-encoded least-squares misfit plus a smoothness
penalty with Adam.  The misfit is normalised by the total data energy
``sum_i ||d_i||^2`` so step sizes and penalty weights do not depend on the
trace amplitude.  Born inversion additionally has a deterministic
conjugate-gradient mode on the (all-source) normal equations.
"""
from __future__ import annotations

import time
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.sparse.linalg import LinearOperator, cg

from .acquisition import ImagingSystem, encode, sample_encoding
from .born import BornOperator
from .grid import embed_in_full_grid, slowness_to_sos, sos_to_slowness

# relative trace residual treated as an exact fit
ROUNDOFF = 1e-12


@dataclass(frozen=True)
class InversionConfig:
    """Solver settings.

    ``step_size`` is in mm/us for FWI and in squared-slowness units for Born.
    The step decays geometrically to ``step_size * final_step_ratio`` over the run.
    """

    method: str = "born"
    n_iterations: int = 100
    step_size: float = 0.004
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    reg_weight: float = 0.0
    encoding: str = "rademacher"
    seed: int = 0
    solver: str = "adam"
    cg_tol: float = 1e-10
    final_step_ratio: float = 0.1
    sos_bounds: tuple[float, float] = (1.3, 1.7)

    def __post_init__(self):
        if self.method not in ("fwi", "born"):
            raise ValueError(f"unknown method {self.method!r}")
        if self.solver not in ("adam", "cg"):
            raise ValueError(f"unknown solver {self.solver!r}")
        if self.solver == "cg" and self.method != "born":
            raise ValueError("conjugate gradients are only available for Born inversion")
        if self.n_iterations < 1 or self.step_size <= 0:
            raise ValueError("n_iterations and step_size must be positive")
        if self.reg_weight < 0:
            raise ValueError("reg_weight must be nonnegative")
        if not 0 < self.final_step_ratio <= 1:
            raise ValueError("final_step_ratio must lie in (0, 1]")


@dataclass
class ReconResult:
    sos: np.ndarray
    objective: np.ndarray
    wall_time: float
    config: dict = field(default_factory=dict)


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0

    @classmethod
    def zeros_like(cls, x: np.ndarray) -> "AdamState":
        return cls(np.zeros_like(x, dtype=float), np.zeros_like(x, dtype=float), 0)


def adaptive_update(state: AdamState, gradient: np.ndarray, step: float, beta1: float = 0.9,
                    beta2: float = 0.999, eps: float = 1e-8) -> tuple[AdamState, np.ndarray]:
    """One Adam step; returns the new state and the increment to *add* to the parameters."""
    t = state.t + 1
    m = beta1 * state.m + (1 - beta1) * gradient
    v = beta2 * state.v + (1 - beta2) * gradient * gradient
    m_hat = m / (1 - beta1**t)
    v_hat = v / (1 - beta2**t)
    return AdamState(m, v, t), -step * m_hat / (np.sqrt(v_hat) + eps)


def regularizer(x: np.ndarray, weight: float) -> tuple[float, np.ndarray]:
    """``weight/2 * ||grad x||^2`` with forward differences (Neumann edges) and its gradient."""
    if weight < 0:
        raise ValueError("regularization weight must be nonnegative")
    x = np.asarray(x, dtype=float)
    dy = np.diff(x, axis=0)
    dx = np.diff(x, axis=1)
    value = 0.5 * weight * float(np.sum(dy**2) + np.sum(dx**2))
    grad = np.zeros_like(x)
    grad[1:] += dy
    grad[:-1] -= dy
    grad[:, 1:] += dx
    grad[:, :-1] -= dx
    return value, weight * grad


def _schedule(config: InversionConfig, it: int) -> float:
    frac = it / max(config.n_iterations - 1, 1)
    return config.step_size * config.final_step_ratio**frac


def _data_energy(data: np.ndarray) -> float:
    energy = float(np.sum(np.square(data)))
    if energy == 0:
        raise ValueError("measurements are identically zero")
    return energy


def fwi_reconstruct(data: np.ndarray, system: ImagingSystem, config: InversionConfig,
                    initial: np.ndarray | None = None) -> ReconResult:
    """Encoded-source FWI over the speed of sound inside the reconstruction mask.

    Args:
        data: measured traces (I, K, J).
        system: imaging system.
        config: solver settings (``method`` is ignored).
        initial: starting SOS over the FOV; water when omitted.
    """
    t_start = time.perf_counter()
    grid = system.grid
    data = np.asarray(data, dtype=float)
    energy = _data_energy(data)
    mask = system.recon_mask()
    c = np.full((grid.n_fov, grid.n_fov), system.c0) if initial is None else np.array(initial, dtype=float)
    lo, hi = config.sos_bounds
    rng = np.random.default_rng(config.seed)
    state = AdamState.zeros_like(c)
    objective = np.empty(config.n_iterations)
    prop = system.propagator

    for it in range(config.n_iterations):
        a = sample_encoding(system.n_sources, config.encoding, rng)
        d_a = encode(data, a)
        misfit, grad, _ = prop.fwi_gradient(embed_in_full_grid(c, grid, system.c0),
                                            system.encoded_source(a), d_a)
        if misfit <= 0.5 * ROUNDOFF**2 * float(np.sum(d_a**2)):
            # residual is summation-order noise; Adam would blow it up to full-size steps
            grad = np.zeros_like(grad)
        reg, reg_grad = regularizer(c, config.reg_weight)
        total = misfit / energy + reg
        if not np.isfinite(total):
            raise FloatingPointError(f"FWI objective became non-finite at iteration {it}")
        objective[it] = total
        g = np.where(mask, grad / energy + reg_grad, 0.0)
        state, delta = adaptive_update(state, g, _schedule(config, it), config.beta1, config.beta2, config.eps)
        c = np.clip(c + delta, lo, hi)

    return ReconResult(c, objective, time.perf_counter() - t_start, asdict(config))


def _slowness_bounds(config: InversionConfig, c0: float) -> tuple[float, float]:
    lo, hi = config.sos_bounds
    return (c0 / hi) ** 2, (c0 / lo) ** 2


def born_reconstruct(data: np.ndarray, system: ImagingSystem, config: InversionConfig,
                     operator: BornOperator | None = None) -> ReconResult:
    """Born inversion for the squared slowness inside the reconstruction mask.

    ``data`` are total traces (I, K, J); the incident field is subtracted
    internally.  With ``solver='cg'`` the regularised normal equations are solved
    over all sources at once and ``objective`` holds the residual norm history.
    """
    t_start = time.perf_counter()
    op = operator if operator is not None else BornOperator(system)
    data = np.asarray(data, dtype=float)
    if config.solver == "cg":
        x, objective = _born_cg(data, op, config)
    else:
        x, objective = _born_sgd(data, op, config)
    b = np.clip(1.0 - x, *_slowness_bounds(config, system.c0))
    return ReconResult(slowness_to_sos(b, system.c0), objective, time.perf_counter() - t_start,
                       asdict(config))


def _born_sgd(data, op: BornOperator, config: InversionConfig):
    system = op.system
    n = system.grid.n_fov
    energy = _data_energy(data)
    scattered = data - op.cache.traces
    mask = system.recon_mask()
    b_lo, b_hi = _slowness_bounds(config, system.c0)
    rng = np.random.default_rng(config.seed)
    b = np.ones((n, n))
    state = AdamState.zeros_like(b)
    objective = np.empty(config.n_iterations)
    for it in range(config.n_iterations):
        a = sample_encoding(system.n_sources, config.encoding, rng)
        drive = op.drive(a)
        residual = encode(scattered, a) - op.apply(1.0 - b, a, drive)
        reg, reg_grad = regularizer(b, config.reg_weight)
        total = 0.5 * float(np.sum(residual**2)) / energy + reg
        if not np.isfinite(total):
            raise FloatingPointError(f"Born objective became non-finite at iteration {it}")
        objective[it] = total
        # d/db of the misfit is +A^T r because the model depends on (1 - b)
        g = np.where(mask, op.adjoint(residual, a, drive) / energy + reg_grad, 0.0)
        state, delta = adaptive_update(state, g, _schedule(config, it), config.beta1, config.beta2, config.eps)
        b = np.clip(b + delta, b_lo, b_hi)
    return 1.0 - b, objective


def born_normal_operator(op: BornOperator, weight: float, mask: np.ndarray) -> LinearOperator:
    """``x -> P (A^T A + weight * D^T D) P x`` over the masked pixels, as a scipy operator."""
    n = op.system.grid.n_fov
    idx = np.flatnonzero(mask.ravel())

    def matvec(v):
        x = np.zeros(n * n)
        x[idx] = np.ravel(v)
        x = x.reshape(n, n)
        out = op.adjoint_all(op.apply_all(x)) + regularizer(x, weight)[1]
        return out.ravel()[idx]

    return LinearOperator((idx.size, idx.size), matvec=matvec, dtype=float)


def _born_cg(data, op: BornOperator, config: InversionConfig):
    system = op.system
    n = system.grid.n_fov
    mask = system.recon_mask()
    idx = np.flatnonzero(mask.ravel())
    normal = born_normal_operator(op, config.reg_weight, mask)
    rhs = op.adjoint_all(data - op.cache.traces).ravel()[idx]
    rhs_norm = float(np.linalg.norm(rhs)) or 1.0
    history: list[float] = []

    def record(xk):
        history.append(float(np.linalg.norm(normal.matvec(xk) - rhs)) / rhs_norm)

    sol, _ = cg(normal, rhs, rtol=config.cg_tol, atol=0.0, maxiter=config.n_iterations, callback=record)
    x = np.zeros(n * n)
    x[idx] = sol
    return x.reshape(n, n), np.asarray(history)


def reconstruct(data: np.ndarray, system: ImagingSystem, config: InversionConfig,
                operator: BornOperator | None = None) -> ReconResult:
    if config.method == "fwi":
        return fwi_reconstruct(data, system, config)
    return born_reconstruct(data, system, config, operator)


def slowness_error(sos_estimate: np.ndarray, sos_truth: np.ndarray, c0: float) -> float:
    """Relative L2 error of the squared slowness."""
    b_est = sos_to_slowness(sos_estimate, c0)
    b_true = sos_to_slowness(sos_truth, c0)
    return float(np.linalg.norm(b_est - b_true) / np.linalg.norm(b_true))
