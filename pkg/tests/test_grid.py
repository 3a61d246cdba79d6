import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from wavetomo.grid import (C_WATER, Grid, check_cfl, cfl_number, disk_mask, embed_in_full_grid, extract_fov,
                           points_per_wavelength, ring_pixel, slowness_to_sos, sos_to_slowness)


def test_grid_rejects_bad_dimensions():
    with pytest.raises(ValueError):
        Grid(10, 12, 1.0, 0.1, 10)
    with pytest.raises(ValueError):
        Grid(10, 8, 0.0, 0.1, 10)
    with pytest.raises(ValueError):
        Grid(10, 8, 1.0, 0.1, 1)


def test_paper_grid_offset():
    assert Grid(360, 214, 0.6, 0.2, 800).offset == 73


def test_odd_offset_uses_floor():
    assert Grid(11, 4, 1.0, 0.1, 4).offset == 3


def test_uniform_embedding_is_uniform():
    g = Grid(16, 8, 1.0, 0.1, 4)
    full = embed_in_full_grid(np.full((8, 8), C_WATER), g)
    assert np.all(full == C_WATER)


def test_small_embedding_layout():
    g = Grid(4, 2, 1.0, 0.1, 4)
    full = embed_in_full_grid(np.full((2, 2), 1.6), g, c0=1.5)
    expected = np.full((4, 4), 1.5)
    expected[1:3, 1:3] = 1.6
    np.testing.assert_array_equal(full, expected)


def test_embedding_shape_mismatch():
    with pytest.raises(ValueError):
        embed_in_full_grid(np.ones((3, 3)), Grid(8, 4, 1.0, 0.1, 4))


@settings(max_examples=30, deadline=None)
@given(arrays(np.float64, (6, 6), elements=st.floats(1.3, 1.7)))
def test_embed_extract_round_trip(sos):
    g = Grid(13, 6, 1.0, 0.1, 4)
    np.testing.assert_array_equal(extract_fov(embed_in_full_grid(sos, g), g), sos)


def test_cfl_examples():
    assert cfl_number(1.6, 0.2, 0.6) == pytest.approx(0.5333, abs=1e-4)
    assert cfl_number(1.0, 0.5, 0.5) == 1.0
    assert cfl_number(1.5, 1e-12, 1.0) == pytest.approx(0.0, abs=1e-11)


def test_cfl_rejects_nonpositive():
    with pytest.raises(ValueError):
        cfl_number(0.0, 0.1, 0.1)
    with pytest.raises(ValueError):
        cfl_number(1.5, -0.1, 0.1)


def test_check_cfl_bound():
    assert check_cfl(1.5, 0.2, 0.6) == pytest.approx(0.5)
    with pytest.raises(ValueError):
        check_cfl(1.7, 0.6, 1.0)


def test_points_per_wavelength_examples():
    assert points_per_wavelength(1.41, 0.5, 0.6) == pytest.approx(4.7, abs=0.005)
    assert points_per_wavelength(1.5, 0.5, 0.6) == pytest.approx(5.0)
    with pytest.warns(UserWarning):
        assert points_per_wavelength(1.0, 1.0, 1.0) == 1.0


def test_points_per_wavelength_no_warning_above_four():
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        points_per_wavelength(1.5, 0.5, 0.6)


def test_slowness_examples():
    np.testing.assert_array_equal(sos_to_slowness(np.full((3, 3), 1.5), 1.5), np.ones((3, 3)))
    assert sos_to_slowness(np.array(1.5 / math.sqrt(2)), 1.5) == pytest.approx(2.0, rel=1e-14)
    with pytest.raises(ValueError):
        sos_to_slowness(np.array([1.5, 0.0]))
    with pytest.raises(ValueError):
        slowness_to_sos(np.array([-1.0]))


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, (5, 4), elements=st.floats(0.1, 10.0)))
def test_slowness_round_trip(c):
    back = slowness_to_sos(sos_to_slowness(c, 1.5), 1.5)
    assert np.max(np.abs(back - c) / c) < 1e-12


def test_ring_pixel_and_disk():
    g = Grid(21, 11, 1.0, 0.1, 4)
    assert ring_pixel(g, 5.0, 0.0) == (10, 15)
    assert ring_pixel(g, 5.0, math.pi / 2) == (15, 10)
    m = disk_mask(11, 2.0)
    assert m.sum() == 13 and m[5, 5]
