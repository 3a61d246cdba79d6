import numpy as np
import pytest

from wavetomo.acquisition import simulate_all
from wavetomo.born import born_adjoint, born_apply, born_mismatch, born_predict, build_incident_cache
from wavetomo.grid import embed_in_full_grid


def _blob(n, amp, width=0.2):
    y, x = (np.mgrid[:n, :n] - (n - 1) / 2) / n
    return amp * np.exp(-((x - 0.08) ** 2 + (y + 0.05) ** 2) / (2 * width**2))


def test_zero_contrast_gives_zero_traces(system, born_op):
    b = np.ones((system.grid.n_fov,) * 2)
    assert np.all(born_apply(b, born_op.cache, 0, system) == 0)


def test_cache_traces_equal_wave_traces(system, born_op):
    np.testing.assert_array_equal(born_op.cache.traces, simulate_all(system.homogeneous(), system))


def test_cache_is_deterministic(system, born_op):
    again = build_incident_cache(system)
    np.testing.assert_array_equal(again.d2p, born_op.cache.d2p)


def test_second_derivative_matches_movie(system, born_op):
    g = system.grid
    _, movie = system.propagator.simulate(system.homogeneous(), system.source_term(1), store=True)
    p = movie[(slice(None),) + g.fov]
    fd = (p[2:] - 2 * p[1:-1] + p[:-2]) / g.dt**2
    err = np.abs(born_op.cache.d2p[1, 1:-1] - fd).max()
    assert err < 1e-6 * np.abs(fd).max()


def test_linear_part_is_linear(system, born_op, rng):
    n = system.grid.n_fov
    u, v = rng.standard_normal((2, n, n)) * 1e-2
    lhs = born_op.apply(0.7 * u - 1.3 * v, 2)
    rhs = 0.7 * born_op.apply(u, 2) - 1.3 * born_op.apply(v, 2)
    assert np.linalg.norm(lhs - rhs) <= 1e-10 * np.linalg.norm(lhs)


def test_apply_all_matches_per_source(system, born_op, rng):
    x = rng.standard_normal((system.grid.n_fov,) * 2)
    full = born_op.apply_all(x)
    for i in range(system.n_sources):
        np.testing.assert_allclose(full[i], born_op.apply(x, i), rtol=0, atol=1e-12 * np.abs(full).max())


def test_encoded_apply_is_weighted_sum(system, born_op, rng):
    x = rng.standard_normal((system.grid.n_fov,) * 2)
    a = rng.standard_normal(system.n_sources)
    enc = born_op.apply(x, a)
    np.testing.assert_allclose(enc, np.tensordot(a, born_op.apply_all(x), axes=1),
                               atol=1e-11 * np.abs(enc).max())


@pytest.mark.parametrize("src", [0, 3])
def test_adjoint_inner_product(system, born_op, rng, src):
    n, g = system.grid.n_fov, system.grid
    x = rng.standard_normal((n, n))
    y = rng.standard_normal((g.n_steps, system.n_receivers))
    ax = born_op.apply(x, src)
    gap = abs(np.vdot(ax, y) - np.vdot(x, born_op.adjoint(y, src)))
    assert gap / (np.linalg.norm(ax) * np.linalg.norm(y)) < 1e-10


def test_adjoint_all_inner_product(system, born_op, rng):
    n, g = system.grid.n_fov, system.grid
    x = rng.standard_normal((n, n))
    y = rng.standard_normal((system.n_sources, g.n_steps, system.n_receivers))
    ax = born_op.apply_all(x)
    gap = abs(np.vdot(ax, y) - np.vdot(x, born_op.adjoint_all(y)))
    assert gap / (np.linalg.norm(ax) * np.linalg.norm(y)) < 1e-10


def test_zero_residual_gives_zero_image(system, born_op):
    r = np.zeros((system.grid.n_steps, system.n_receivers))
    assert np.all(born_adjoint(r, born_op.cache, 0, system) == 0)


def test_adjoint_is_linear(system, born_op, rng):
    y1, y2 = rng.standard_normal((2, system.grid.n_steps, system.n_receivers))
    lhs = born_op.adjoint(2 * y1 + y2, 1)
    rhs = 2 * born_op.adjoint(y1, 1) + born_op.adjoint(y2, 1)
    np.testing.assert_allclose(lhs, rhs, atol=1e-10 * np.abs(lhs).max())


def test_bad_encoding_length(born_op):
    with pytest.raises(ValueError):
        born_op.drive(np.ones(born_op.system.n_sources + 1))


def test_predict_at_background_is_incident(system, born_op):
    c = np.full((system.grid.n_fov,) * 2, system.c0)
    np.testing.assert_array_equal(born_predict(c, system, born_op.cache), born_op.cache.traces)


def test_weak_phantom_within_five_percent(system, born_op):
    n = system.grid.n_fov
    sos = system.c0 * (1 + _blob(n, 0.005))
    assert born_mismatch(sos, system, born_op) < 0.05


def test_born_error_scales_quadratically(system, born_op):
    n = system.grid.n_fov
    h = _blob(n, 1.0)

    def err(eps):
        sos = system.c0 * (1 + eps * h)
        wave = simulate_all(embed_in_full_grid(sos, system.grid, system.c0), system)
        return np.linalg.norm(born_op.predict(sos) - wave)

    ratio = err(0.01) / err(0.005)
    assert 3.5 <= ratio <= 4.5
