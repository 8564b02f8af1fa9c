"""
Uniform planar array steering vectors and beamformers.

Elements sit on a half-wavelength grid. The array response factorizes as a
Kronecker product of a horizontal phase ramp (increment ``pi sin(az) cos(el)``)
and a vertical one (increment ``pi sin(el)``), each normalized to unit norm,
so that entry ``p * n_y + q`` belongs to row element ``p`` and column
element ``q``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


def wrap_azimuth(az):
    """Map azimuth angles into (-pi, pi]."""
    wrapped = np.mod(np.asarray(az, dtype=float) + np.pi, 2 * np.pi) - np.pi
    wrapped = np.where(wrapped == -np.pi, np.pi, wrapped)
    return float(wrapped) if np.ndim(wrapped) == 0 else wrapped


@dataclass(frozen=True)
class ArrayGeometry:
    """Planar array with ``n_x`` elements per row and ``n_y`` per column."""

    n_x: int
    n_y: int = 1

    def __post_init__(self):
        if int(self.n_x) < 1 or int(self.n_y) < 1:
            raise ValueError(f"array dimensions must be positive, got {self.n_x}x{self.n_y}")

    @property
    def size(self) -> int:
        return self.n_x * self.n_y


@dataclass(frozen=True)
class AnglePair:
    """Azimuth and elevation in radians."""

    azimuth: float
    elevation: float = 0.0

    def __post_init__(self):
        if not (-np.pi / 2 <= self.elevation <= np.pi / 2):
            raise ValueError(f"elevation {self.elevation} outside [-pi/2, pi/2]")
        object.__setattr__(self, "azimuth", wrap_azimuth(self.azimuth))


def _ramp(n: int, phase_step):
    k = np.arange(n)
    return np.exp(1j * np.pi * np.multiply.outer(phase_step, k)) / np.sqrt(n)


def steering_matrix(azimuth, elevation, geom: ArrayGeometry) -> np.ndarray:
    """
    Steering vectors for a batch of directions.

    Parameters
    ----------
    azimuth, elevation : array_like
        Broadcastable angle arrays in radians.
    geom : ArrayGeometry

    Returns
    -------
    ndarray
        Complex array of shape ``broadcast_shape + (geom.size,)``.
    """
    az, el = np.broadcast_arrays(wrap_azimuth(azimuth), np.asarray(elevation, dtype=float))
    horiz = _ramp(geom.n_x, np.sin(az) * np.cos(el))
    vert = _ramp(geom.n_y, np.sin(el))
    out = horiz[..., :, None] * vert[..., None, :]
    return out.reshape(az.shape + (geom.size,))


def steering_vector(angles: AnglePair, geom: ArrayGeometry) -> np.ndarray:
    """Unit-norm steering vector of ``geom`` towards ``angles``."""
    return steering_matrix(angles.azimuth, angles.elevation, geom)


def array_gain_factor(n_tx: int, n_rx: int) -> float:
    """Array gain factor sqrt(n_tx * n_rx) of a transmit/receive pair."""
    if n_tx < 1 or n_rx < 1:
        raise ValueError("antenna counts must be positive")
    return float(np.sqrt(n_tx * n_rx))


def conjugate_beamformer(predicted: AnglePair, geom: ArrayGeometry) -> np.ndarray:
    """
    Matched beamformer for a predicted direction.

    Returns ``conj(a(predicted))`` so that ``a(predicted) @ f == 1``.
    """
    return np.conj(steering_vector(predicted, geom))


def omni_beamformer(geom: ArrayGeometry) -> np.ndarray:
    """Single active element; its gain ``a @ f`` is ``1/sqrt(N)`` for every direction."""
    f = np.zeros(geom.size, dtype=complex)
    f[0] = 1.0
    return f


def beam_gain(f: np.ndarray, azimuth, elevation, geom: ArrayGeometry) -> np.ndarray:
    """Complex gain ``a(az, el)^T f`` over a batch of directions."""
    return steering_matrix(azimuth, elevation, geom) @ f


def angles_from_direction_cosines(u_az, u_el):
    """
    Invert the phase law: ``u_az = sin(az) cos(el)``, ``u_el = sin(el)``.

    Azimuth is returned in [-pi/2, pi/2]; the front/back ambiguity of the
    planar array is resolved towards the front half-space.
    """
    el = np.arcsin(np.clip(u_el, -1.0, 1.0))
    az = np.arcsin(np.clip(np.asarray(u_az) / np.cos(el), -1.0, 1.0))
    return az, el


def dft_codebook(geom: ArrayGeometry, oversample_x: int = 1, oversample_y: int = 1):
    """
    Two-dimensional DFT beam grid.

    Beams are spaced ``2 / (n * oversample)`` apart in direction-cosine space
    and centred in each cell, so the ``oversample == 1`` grid is the
    orthogonal DFT basis.

    Returns
    -------
    beams : ndarray, shape (n_beams, geom.size)
        Beamformers (conjugated steering vectors).
    az, el : ndarray, shape (n_beams,)
        Pointing angles of the beams.
    """
    nx, ny = geom.n_x * oversample_x, geom.n_y * oversample_y
    u_x = -1.0 + (2.0 * np.arange(nx) + 1.0) / nx
    u_y = -1.0 + (2.0 * np.arange(ny) + 1.0) / ny
    ux, uy = np.meshgrid(u_x, u_y, indexing="ij")
    ux, uy = ux.ravel(), uy.ravel()
    horiz = _ramp(geom.n_x, ux)
    vert = _ramp(geom.n_y, uy)
    beams = np.conj((horiz[:, :, None] * vert[:, None, :]).reshape(len(ux), geom.size))
    az, el = angles_from_direction_cosines(ux, uy)
    return beams, az, el
