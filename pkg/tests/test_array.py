import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nrisac.array import (AnglePair, ArrayGeometry, angles_from_direction_cosines, array_gain_factor,
                          beam_gain, conjugate_beamformer, dft_codebook, omni_beamformer, steering_matrix,
                          steering_vector, wrap_azimuth)

azimuths = st.floats(-math.pi, math.pi, allow_nan=False)
elevations = st.floats(-math.pi / 2, math.pi / 2, allow_nan=False)
geoms = st.builds(ArrayGeometry, st.integers(1, 10), st.integers(1, 10))


def loop_steering(az, el, nx, ny):
    """Element-by-element evaluation of the planar phase law."""
    out = np.empty(nx * ny, dtype=complex)
    for p in range(nx):
        for q in range(ny):
            phase = math.pi * (p * math.sin(az) * math.cos(el) + q * math.sin(el))
            out[p * ny + q] = complex(math.cos(phase), math.sin(phase)) / math.sqrt(nx * ny)
    return out


def test_broadside_entries_are_equal():
    np.testing.assert_allclose(steering_vector(AnglePair(0, 0), ArrayGeometry(2, 2)), np.full(4, 0.5))


def test_endfire_two_element_row():
    a = steering_vector(AnglePair(math.pi / 2, 0), ArrayGeometry(2, 1))
    np.testing.assert_allclose(a, np.array([1, -1]) / math.sqrt(2), atol=1e-15)


@given(azimuths, elevations, geoms)
@settings(max_examples=200)
def test_steering_vector_has_unit_norm(az, el, geom):
    assert abs(np.linalg.norm(steering_vector(AnglePair(az, el), geom)) - 1) < 1e-12


@given(azimuths, elevations, st.integers(1, 6), st.integers(1, 6))
@settings(max_examples=100)
def test_matches_elementwise_phase_law(az, el, nx, ny):
    a = steering_vector(AnglePair(az, el), ArrayGeometry(nx, ny))
    np.testing.assert_allclose(a, loop_steering(az, el, nx, ny), atol=1e-12)


@given(azimuths, elevations)
@settings(max_examples=50)
def test_kronecker_factorization(az, el):
    geom = ArrayGeometry(4, 3)
    a = steering_vector(AnglePair(az, el), geom)
    v_az = steering_vector(AnglePair(az, el), ArrayGeometry(4, 1))
    # elevation factor: ramp of sin(el) over a column
    v_el = np.exp(1j * math.pi * np.arange(3) * math.sin(el)) / math.sqrt(3)
    np.testing.assert_allclose(a, np.kron(v_az, v_el), atol=1e-12)


def test_steering_matrix_batches_match_single_vectors():
    geom = ArrayGeometry(8, 8)
    az = np.array([0.1, -0.7, 1.2])
    el = np.array([0.0, 0.3, -0.2])
    batch = steering_matrix(az, el, geom)
    assert batch.shape == (3, 64)
    for k in range(3):
        np.testing.assert_allclose(batch[k], steering_vector(AnglePair(az[k], el[k]), geom))


@pytest.mark.parametrize("n_tx, n_rx, expected", [(64, 64, 64.0), (64, 16, 32.0), (1, 1, 1.0)])
def test_array_gain_factor(n_tx, n_rx, expected):
    assert array_gain_factor(n_tx, n_rx) == expected


def test_array_gain_factor_rejects_zero():
    with pytest.raises(ValueError):
        array_gain_factor(0, 4)


@given(azimuths, elevations)
@settings(max_examples=100)
def test_conjugate_beamformer_unit_gain_at_alignment(az, el):
    geom = ArrayGeometry(8, 8)
    f = conjugate_beamformer(AnglePair(az, el), geom)
    assert abs(abs(steering_vector(AnglePair(az, el), geom) @ f) - 1) < 1e-12


@given(st.floats(-1.0, 1.0), st.floats(0.26, 1.0))
@settings(max_examples=100)
def test_gain_below_one_beyond_first_null(u0, offset):
    # First null of an 8-element row sits 2/8 away in direction-cosine space.
    geom = ArrayGeometry(8, 1)
    u1 = u0 + offset if u0 + offset <= 1 else u0 - offset
    if abs(u1) > 1:
        return
    f = conjugate_beamformer(AnglePair(math.asin(u0)), geom)
    assert abs(steering_vector(AnglePair(math.asin(u1)), geom) @ f) < 1 - 1e-6


def test_half_power_beamwidth_8x8_broadside():
    geom = ArrayGeometry(8, 8)
    f = conjugate_beamformer(AnglePair(0, 0), geom)
    grid = np.linspace(-0.3, 0.3, 600001)
    power = np.abs(beam_gain(f, grid, 0.0, geom)) ** 2
    inside = grid[power >= 0.5]
    width_deg = math.degrees(inside.max() - inside.min())

    # Oracle: half-power root of the closed-form 8-element array factor.
    from scipy.optimize import brentq
    af = lambda u: (math.sin(8 * math.pi * u / 2) / (8 * math.sin(math.pi * u / 2))) ** 2 - 0.5
    u3 = brentq(af, 1e-6, 0.25)
    assert width_deg == pytest.approx(math.degrees(2 * math.asin(u3)), abs=1e-3)
    assert width_deg == pytest.approx(12.7, abs=0.15)


def test_transmit_and_receive_responses_coincide():
    geom = ArrayGeometry(8, 8)
    ang = AnglePair(0.4, -0.2)
    # Both ends use the same phase law, so one function serves both.
    np.testing.assert_array_equal(steering_vector(ang, geom), steering_matrix(0.4, -0.2, geom))


@given(st.floats(-50, 50, allow_nan=False))
def test_wrap_azimuth_range(az):
    w = wrap_azimuth(az)
    assert -math.pi < w <= math.pi
    assert math.isclose(math.cos(w), math.cos(az), abs_tol=1e-9)
    assert math.isclose(math.sin(w), math.sin(az), abs_tol=1e-9)


def test_wrap_azimuth_maps_minus_pi_to_pi():
    assert wrap_azimuth(-math.pi) == math.pi
    assert AnglePair(-math.pi).azimuth == math.pi


def test_angle_pair_rejects_elevation_out_of_range():
    with pytest.raises(ValueError):
        AnglePair(0.0, 2.0)


def test_array_geometry_validation():
    assert ArrayGeometry(8, 8).size == 64
    with pytest.raises(ValueError):
        ArrayGeometry(0, 4)


def test_omni_beamformer_gain_is_flat():
    geom = ArrayGeometry(8, 8)
    g = beam_gain(omni_beamformer(geom), np.linspace(-1.5, 1.5, 50), 0.1, geom)
    np.testing.assert_allclose(np.abs(g), 1 / 8, atol=1e-15)


@given(st.floats(-1.4, 1.4), st.floats(-1.4, 1.4))
def test_direction_cosines_round_trip(az, el):
    if abs(math.sin(az) * math.cos(el)) > 1:
        return
    az2, el2 = angles_from_direction_cosines(math.sin(az) * math.cos(el), math.sin(el))
    assert az2 == pytest.approx(az, abs=1e-9)
    assert el2 == pytest.approx(el, abs=1e-9)


def test_dft_codebook_is_orthonormal_without_oversampling():
    beams, az, el = dft_codebook(ArrayGeometry(8, 8))
    assert beams.shape == (64, 64) and az.shape == el.shape == (64,)
    np.testing.assert_allclose(beams @ beams.conj().T, np.eye(64), atol=1e-12)


def test_dft_codebook_oversampled_size_and_pointing():
    geom = ArrayGeometry(8, 8)
    beams, az, el = dft_codebook(geom, 4, 4)
    assert beams.shape == (1024, 64)
    # Each beam peaks in its own pointing direction whenever that direction is physical.
    u = -1.0 + (2.0 * np.arange(32) + 1.0) / 32
    ux, uy = np.meshgrid(u, u, indexing="ij")
    visible = np.flatnonzero(ux.ravel() ** 2 + uy.ravel() ** 2 < 0.9)
    assert visible.size > 500
    for k in visible[::10]:
        assert abs(steering_vector(AnglePair(az[k], el[k]), geom) @ beams[k]) == pytest.approx(1.0, abs=1e-9)


def test_nearest_codebook_beam_maximizes_gain():
    geom = ArrayGeometry(8, 8)
    beams, az, el = dft_codebook(geom)
    rng = np.random.default_rng(0)
    for _ in range(20):
        t_az, t_el = rng.uniform(-0.6, 0.6), rng.uniform(-0.4, 0.4)
        a = steering_vector(AnglePair(t_az, t_el), geom)
        best = int(np.argmax(np.abs(beams @ a)))
        # independent oracle: nearest grid point in direction-cosine space
        ux, uy = math.sin(t_az) * math.cos(t_el), math.sin(t_el)
        cx = np.clip(np.floor((ux + 1) * 4), 0, 7)
        cy = np.clip(np.floor((uy + 1) * 4), 0, 7)
        assert best == int(cx * 8 + cy)
