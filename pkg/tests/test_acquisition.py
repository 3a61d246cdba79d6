import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from wavetomo.acquisition import (Pulse, acquire, add_noise, build_system, encode, pulse_waveform,
                                  sample_encoding, simulate_all, snr_to_noise_std)
from wavetomo.grid import Grid, embed_in_full_grid

from conftest import small_system


def test_paper_geometry_fits():
    grid = Grid(360, 256, 0.6, 0.2, 10)
    s = build_system(grid, 256, 64, 96.0)
    assert s.receivers.min() >= 0 and s.receivers.max() < 360
    np.testing.assert_array_equal(s.sources, s.receivers[::4])


def test_four_receivers_symmetric():
    grid = Grid(101, 61, 1.0, 0.2, 10)
    s = build_system(grid, 4, 1, 30.0)
    offsets = {tuple(o) for o in (s.receivers - 50).tolist()}
    assert offsets == {(0, 30), (30, 0), (0, -30), (-30, 0)}


def test_desk_sources_every_fourth():
    s = small_system(n_receivers=32, n_sources=8)
    np.testing.assert_array_equal(s.sources, s.receivers[[0, 4, 8, 12, 16, 20, 24, 28]])


def test_geometry_errors():
    grid = Grid(64, 40, 2.0, 0.6, 10)
    with pytest.raises(ValueError):
        build_system(grid, 30, 8, 30.0)
    with pytest.raises(ValueError):
        build_system(grid, 32, 8, 80.0)


def test_pulse_values():
    p = Pulse(0.5, 3.2, 2.0)
    w = pulse_waveform(p, 161, 0.02)
    assert w[0] == 0.0
    assert w[160] == pytest.approx(-0.587785252292473, abs=1e-12)
    t = 3.2 + 3 * 2.0
    carrier = math.sin(2 * math.pi * 0.5 * t)
    assert pulse_waveform(p, 2, t)[1] == pytest.approx(math.exp(-4.5) * carrier, rel=1e-12)
    assert math.exp(-4.5) == pytest.approx(0.0111, abs=1e-4)
    with pytest.raises(ValueError):
        pulse_waveform(Pulse(0.5, 3.2, 0.0), 10, 0.1)


@pytest.mark.parametrize("snr, std", [(20, 3.0e-5), (14, 6.0e-5), (6, 1.5e-4)])
def test_snr_pairs(snr, std):
    traces = np.full((2, 3, 4), 3.0e-4)
    assert snr_to_noise_std(traces, snr) == pytest.approx(std, rel=0.005)


def test_snr_limits():
    traces = np.array([3.0, -4.0])
    assert snr_to_noise_std(traces, 0) == pytest.approx(np.sqrt(12.5))
    assert snr_to_noise_std(traces, math.inf) == 0.0
    with pytest.raises(ValueError):
        snr_to_noise_std(np.zeros(5), 20)


def test_noise_statistics_and_reproducibility(system):
    sos = np.full((system.grid.n_fov,) * 2, 1.52)
    m1 = acquire(sos, system, 20.0, seed=5)
    m2 = acquire(sos, system, 20.0, seed=5)
    m3 = acquire(sos, system, 20.0, seed=6)
    np.testing.assert_array_equal(m1.data, m2.data)
    np.testing.assert_array_equal(m1.clean, m3.clean)
    assert not np.array_equal(m1.data, m3.data)
    assert np.std(m1.data - m1.clean) == pytest.approx(m1.noise_std, rel=0.02)
    clean = add_noise(m1.clean, math.inf, 0)
    np.testing.assert_array_equal(clean.data, m1.clean)


def test_encoding_statistics():
    rng = np.random.default_rng(0)
    for dist in ("rademacher", "normal"):
        a = np.array([sample_encoding(6, dist, rng) for _ in range(10_000)])
        assert np.all(np.abs(a.mean(0)) < 3 / np.sqrt(10_000))
        np.testing.assert_allclose(np.cov(a.T), np.eye(6), atol=0.05)
    r = np.array([sample_encoding(6, "rademacher", rng) for _ in range(100)])
    assert set(np.unique(r)) == {-1.0, 1.0}
    with pytest.raises(ValueError):
        sample_encoding(3, "uniform")


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 6), st.integers(0, 2**31 - 1))
def test_encode_linear_and_onehot(n, seed):
    rng = np.random.default_rng(seed)
    d = rng.standard_normal((n, 5, 3))
    a, b = rng.standard_normal((2, n))
    np.testing.assert_allclose(encode(d, a + b), encode(d, a) + encode(d, b), atol=1e-12)
    for i in range(n):
        np.testing.assert_array_equal(encode(d, np.eye(n)[i]), d[i])


def test_encode_length_mismatch():
    with pytest.raises(ValueError):
        encode(np.zeros((3, 2)), np.ones(4))


def test_encoded_misfit_unbiased(system):
    # E_a ||d_a - F_a(c)||^2 = sum_i ||d_i - F_i(c)||^2 for zero-mean, identity-covariance a
    sos = np.full((system.grid.n_fov,) * 2, 1.5)
    sos[10:16, 10:16] = 1.53
    d = simulate_all(embed_in_full_grid(sos, system.grid), system)
    f = simulate_all(system.homogeneous(), system)
    r = d - f
    full = np.sum(r**2)
    rng = np.random.default_rng(3)
    draws = np.array([np.sum(encode(r, sample_encoding(system.n_sources, "normal", rng)) ** 2)
                      for _ in range(200)])
    assert abs(draws.mean() - full) < 3 * draws.std() / np.sqrt(200)
