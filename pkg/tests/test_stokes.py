import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from polarpose.errors import InvalidInputError
from polarpose.stokes import (CANONICAL_ANGLES, EPS_RHO, PolarQuadruplet, decode_arrays,
                              decode_image, decode_pixel, forward_image, forward_pixel)


def angle_diff_mod_pi(a, b):
    d = np.mod(np.asarray(a) - np.asarray(b), np.pi)
    return np.minimum(d, np.pi - d)


def test_unpolarized_pixel():
    i_un, rho, phi, valid = decode_pixel([1, 1, 1, 1])
    assert i_un == pytest.approx(1.0, abs=1e-15)
    assert rho == pytest.approx(0.0, abs=1e-15)
    assert phi == 0.0
    assert not valid


def test_fully_polarized_pixel():
    i_un, rho, phi, valid = decode_pixel([2, 1, 0, 1])
    assert i_un == pytest.approx(1.0, abs=1e-15)
    assert rho == pytest.approx(1.0, abs=1e-15)
    assert angle_diff_mod_pi(phi, 0.0) < 1e-15
    assert valid


def test_round_trip_random(rng):
    for _ in range(200):
        i_un, rho, phi = rng.uniform(0.01, 1.0), rng.uniform(0.01, 1.0), rng.uniform(0, np.pi)
        intens = [forward_pixel(i_un, rho, phi, a) for a in CANONICAL_ANGLES]
        got = decode_pixel(intens)
        assert got[0] == pytest.approx(i_un, rel=1e-9)
        assert got[1] == pytest.approx(rho, rel=1e-9)
        assert angle_diff_mod_pi(got[2], phi) < 1e-9


def test_more_than_four_angles():
    angles = np.linspace(0, np.pi, 7, endpoint=False)
    intens = [forward_pixel(0.3, 0.6, 2.0, a) for a in angles]
    i_un, rho, phi, _ = decode_pixel(intens, angles)
    assert (i_un, rho) == (pytest.approx(0.3, rel=1e-12), pytest.approx(0.6, rel=1e-12))
    assert angle_diff_mod_pi(phi, 2.0) < 1e-12


@pytest.mark.parametrize("angles", [(0.0, 0.5), (0.0, 0.5, 0.5), (0.0, np.pi / 4, np.pi)])
def test_bad_angle_sets(angles):
    with pytest.raises(InvalidInputError):
        decode_pixel([1.0] * len(angles), angles)


def test_negative_intensity_rejected():
    with pytest.raises(InvalidInputError):
        decode_pixel([1, -0.1, 1, 1])


def test_forward_examples():
    assert forward_pixel(1, 0, 0.3, 1.2) == 1.0
    assert forward_pixel(1, 1, 0, np.pi / 2) == pytest.approx(0.0, abs=1e-15)
    expected = 0.5 * (1 + 0.4 * math.cos(2 * (1.0 - math.pi / 4)))
    assert forward_pixel(0.5, 0.4, 1.0, math.pi / 4) == pytest.approx(expected, rel=1e-15)


unit = st.floats(0.0, 1.0)
angle = st.floats(0.0, math.pi, exclude_max=True)


@given(st.floats(1e-3, 1.0), unit, angle, st.floats(-3.0, 3.0))
def test_forward_bounds_and_periodicity(i_un, rho, phi, a):
    v = forward_pixel(i_un, rho, phi, a)
    assert -1e-15 <= v <= 2 * i_un + 1e-15
    assert forward_pixel(i_un, rho, phi + math.pi, a) == pytest.approx(v, abs=1e-14)


@given(st.floats(1e-3, 1.0), unit, angle, st.floats(-1.0, 1.0))
def test_shift_equivariance(i_un, rho, phi, delta):
    for a in CANONICAL_ANGLES:
        assert forward_pixel(i_un, rho, phi + delta, a + delta) == pytest.approx(
            forward_pixel(i_un, rho, phi, a), abs=1e-14)


@given(st.floats(1e-3, 1.0), unit, angle)
def test_energy_identity(i_un, rho, phi):
    i0, i45, i90, i135 = (forward_pixel(i_un, rho, phi, a) for a in CANONICAL_ANGLES)
    assert abs((i0 + i90) - (i45 + i135)) < 1e-12
    assert abs((i0 + i90) - 2 * i_un) < 1e-12


@settings(max_examples=200)
@given(st.floats(1e-3, 1.0), st.floats(EPS_RHO * 2, 1.0), angle, st.floats(0.1, 10.0))
def test_gain_invariance(i_un, rho, phi, k):
    intens = np.array([forward_pixel(i_un, rho, phi, a) for a in CANONICAL_ANGLES])
    a = decode_pixel(intens)
    b = decode_pixel(intens * k)
    assert b[0] == pytest.approx(k * a[0], rel=1e-12)
    assert b[1] == pytest.approx(a[1], rel=1e-9, abs=1e-12)
    assert angle_diff_mod_pi(a[2], b[2]) < 1e-9


@settings(max_examples=300)
@given(st.floats(1e-5, 1.0), st.floats(2 * EPS_RHO, 1.0), angle)
def test_round_trip_property(i_un, rho, phi):
    intens = [forward_pixel(i_un, rho, phi, a) for a in CANONICAL_ANGLES]
    got = decode_pixel(intens)
    assert got[0] == pytest.approx(i_un, rel=1e-9)
    assert got[1] == pytest.approx(rho, rel=1e-9)
    assert angle_diff_mod_pi(got[2], phi) < 1e-9 * math.pi


def test_decode_image_constant_planes():
    quad = PolarQuadruplet(np.full((4, 5, 6), 0.3))
    dec = decode_image(quad)
    assert np.all(dec.dolp < 1e-15)
    assert not dec.valid.any()


def test_decode_image_saturation():
    rng = np.random.default_rng(0)
    i_un = rng.uniform(0.1, 0.4, (8, 8))
    quad = forward_image(i_un, np.full((8, 8), 0.5), rng.uniform(0, np.pi, (8, 8)),
                         saturation_level=0.9)
    quad.planes[2, 3, 4] = 0.9
    dec = decode_image(quad)
    assert not dec.valid[3, 4]
    assert dec.valid.sum() == 63


def test_decode_image_tiling_is_bit_identical():
    rng = np.random.default_rng(5)
    quad = forward_image(rng.uniform(0, 0.5, (37, 11)), rng.uniform(0, 1, (37, 11)),
                         rng.uniform(0, np.pi, (37, 11)))
    ref = decode_image(quad)
    for tile_rows, workers in [(1, None), (5, 3), (16, 2)]:
        got = decode_image(quad, tile_rows=tile_rows, workers=workers)
        for name in ("i_un", "dolp", "aolp", "valid"):
            assert np.array_equal(getattr(ref, name), getattr(got, name)), name


def test_decode_arrays_matches_pixelwise(rng):
    stack = rng.uniform(0, 1, (4, 50))
    i_un, rho, phi, valid = decode_arrays(stack)
    for k in range(50):
        px = decode_pixel(stack[:, k])
        assert (i_un[k], rho[k], phi[k], valid[k]) == px


def test_quadruplet_validation():
    with pytest.raises(InvalidInputError):
        PolarQuadruplet(np.zeros((3, 4, 4)))
    with pytest.raises(InvalidInputError):
        PolarQuadruplet(np.zeros((2, 4, 4)), angles=(0.0, 1.0))
    with pytest.raises(InvalidInputError):
        PolarQuadruplet(np.zeros((4, 4, 4)), saturation_level=0.0)
