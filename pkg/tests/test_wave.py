import numpy as np
import pytest

from wavetomo.acquisition import pulse_waveform
from wavetomo.grid import Grid, embed_in_full_grid
from wavetomo.wave import SourceTerm, WavePropagator, laplacian, sponge_profile


def _prop(n=32, K=80, dx=1.0, dt=0.2, receivers=None, sponge=6):
    g = Grid(n, n - 2 * sponge, dx, dt, K)
    if receivers is None:
        receivers = [(sponge + 1, j) for j in range(sponge + 1, n - sponge - 1, 3)]
    return g, WavePropagator(g, receivers, sponge_width=sponge)


def test_laplacian_exact_on_quadratics():
    n, dx = 20, 0.5
    y, x = np.mgrid[:n, :n] * dx
    lap = laplacian(3 * x**2 - y**2 + x * y, dx)
    # interior points see the full 5-point stencil; the field is quadratic so the result is exact
    np.testing.assert_allclose(lap[2:-2, 2:-2], 4.0, rtol=0, atol=1e-9)


def test_laplacian_fourth_order_convergence():
    errs = []
    for n in (32, 64):
        dx = 2 * np.pi / n
        y, x = np.mgrid[:n, :n] * dx
        f = np.sin(x) * np.cos(2 * y)
        err = np.abs(laplacian(f, dx) + 5 * f)[4:-4, 4:-4].max()
        errs.append(err)
    assert errs[0] / errs[1] == pytest.approx(16, rel=0.15)


def test_sponge_profile_is_one_inside():
    G = sponge_profile(30, 5, 1.5)
    assert np.all(G[5:25, 5:25] == 1.0)
    assert G[0, 15] == pytest.approx(np.exp(-1.5))
    assert np.all((G > 0) & (G <= 1))


def test_zero_source_gives_zero_traces():
    g, prop = _prop()
    c = np.full((g.n_full, g.n_full), 1.5)
    traces, _ = prop.simulate(c, SourceTerm.point((16, 16), np.zeros(g.n_steps)))
    assert np.all(traces == 0)


def test_homogeneous_symmetry():
    # odd grid so the sponge is symmetric about the centre pixel
    g, prop = _prop(n=33, receivers=[(16, 10), (16, 22), (10, 16), (22, 16)])
    c = np.full((g.n_full, g.n_full), 1.5)
    w = pulse_waveform(__import__("wavetomo").Pulse(0.15, 8.0, 4.0), g.n_steps, g.dt)
    traces, _ = prop.simulate(c, SourceTerm.point((16, 16), w))
    assert np.abs(traces).max() > 0
    for j in range(1, 4):
        np.testing.assert_allclose(traces[:, j], traces[:, 0], rtol=0, atol=1e-14)


def test_cfl_rejected():
    g, prop = _prop(dt=0.5)
    with pytest.raises(ValueError):
        prop.simulate(np.full((g.n_full, g.n_full), 1.5), SourceTerm.point((16, 16), np.ones(g.n_steps)))


def test_bad_speed_map_rejected():
    g, prop = _prop()
    with pytest.raises(ValueError):
        prop.simulate(np.full((g.n_full, g.n_full - 1), 1.5), SourceTerm.point((16, 16), np.ones(g.n_steps)))
    c = np.full((g.n_full, g.n_full), 1.5)
    c[3, 3] = 0.0
    with pytest.raises(ValueError):
        prop.simulate(c, SourceTerm.point((16, 16), np.ones(g.n_steps)))


def test_linearity_in_source(rng):
    g, prop = _prop()
    c = 1.5 + 0.05 * rng.random((g.n_full, g.n_full))
    d1 = rng.standard_normal((g.n_steps, g.n_full, g.n_full))
    d2 = rng.standard_normal((g.n_steps, g.n_full, g.n_full))
    t1, _ = prop.simulate_density(c, d1)
    t2, _ = prop.simulate_density(c, d2)
    t12, _ = prop.simulate_density(c, 2.0 * d1 - 0.5 * d2)
    np.testing.assert_allclose(t12, 2.0 * t1 - 0.5 * t2, rtol=1e-10, atol=1e-12 * np.abs(t12).max())


def test_adjoint_inner_product(rng):
    g, prop = _prop()
    c = 1.5 + 0.1 * rng.random((g.n_full, g.n_full))
    s = rng.standard_normal((g.n_steps, g.n_full, g.n_full))
    y = rng.standard_normal((g.n_steps, prop.n_receivers))
    lhs = np.vdot(prop.simulate_density(c, s)[0], y)
    rhs = np.vdot(s, prop.adjoint_simulate(c, y))
    assert abs(lhs - rhs) / abs(lhs) < 1e-10


def test_batch_matches_single(rng):
    g, prop = _prop()
    c = np.full((g.n_full, g.n_full), 1.5)
    srcs = [SourceTerm.point((10, 12), rng.standard_normal(g.n_steps)),
            SourceTerm.point((20, 18), rng.standard_normal(g.n_steps))]
    batch = prop.simulate_many(c, srcs)
    for b, src in enumerate(srcs):
        np.testing.assert_array_equal(batch[b], prop.simulate(c, src)[0])


def test_encoded_source_is_superposition(rng):
    g, prop = _prop()
    c = np.full((g.n_full, g.n_full), 1.5)
    w = rng.standard_normal(g.n_steps)
    locs = np.array([[10, 12], [20, 18], [14, 14]])
    a = np.array([1.0, -1.0, 0.5])
    enc, _ = prop.simulate(c, SourceTerm.encoded(locs, a, w))
    single = [prop.simulate(c, SourceTerm.point(l, w))[0] for l in locs]
    np.testing.assert_allclose(enc, sum(ai * t for ai, t in zip(a, single)), atol=1e-12 * np.abs(enc).max())


def test_fwi_gradient_matches_finite_differences(rng):
    g, prop = _prop()
    w = pulse_waveform(__import__("wavetomo").Pulse(0.15, 8.0, 4.0), g.n_steps, g.dt)
    src = SourceTerm.point((g.n_full - 8, g.n_full // 2), w)
    true = embed_in_full_grid(1.5 + 0.04 * rng.random((g.n_fov, g.n_fov)), g)
    observed, _ = prop.simulate(true, src)
    c = np.full((g.n_full, g.n_full), 1.5)
    _, grad, _ = prop.fwi_gradient(c, src, observed)
    direction = rng.standard_normal((g.n_fov, g.n_fov))
    eps = 1e-4
    f = [prop.fwi_gradient(embed_in_full_grid(1.5 + s * eps * direction, g), src, observed)[0] for s in (1, -1)]
    fd = (f[0] - f[1]) / (2 * eps)
    assert np.vdot(grad, direction) == pytest.approx(fd, rel=1e-4)


def test_source_term_validation():
    with pytest.raises(ValueError):
        SourceTerm(np.zeros((2, 2)), np.zeros((3, 5)))
    with pytest.raises(ValueError):
        SourceTerm.point((1, 1), np.array([np.nan, 0.0]))
