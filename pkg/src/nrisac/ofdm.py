"""
OFDM grid, radar echo synthesis and the scalar communication link.

Everything here lives in the resource-grid domain: a grid is an ``M x L``
matrix of subcarrier-by-symbol samples, and the echo received by an
``N_r``-element array is an ``(N_r, M, L)`` cube.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .array import AnglePair, ArrayGeometry, array_gain_factor, steering_vector
from .constants import BOLTZMANN_DBM_PER_HZ, SPEED_OF_LIGHT
from .errors import DivisionDomainError, ShapeError


@dataclass(frozen=True)
class OfdmConfig:
    """
    OFDM numerics of one processing block.

    ``symbol_duration`` is the cyclic-prefix-inclusive symbol time
    ``cp_duration + 1 / subcarrier_spacing``.
    """

    m_subcarriers: int
    l_symbols: int
    subcarrier_spacing: float = 120e3
    cp_duration: float = 1e-3 / (14 * 8) - 1 / 120e3
    carrier_frequency: float = 35e9
    tx_power: float = 1.0

    def __post_init__(self):
        if self.m_subcarriers < 1 or self.l_symbols < 1:
            raise ValueError("grid dimensions must be positive")
        if self.cp_duration <= 0:
            raise ValueError("cyclic prefix duration must be positive")

    @classmethod
    def from_numerology(cls, mu: int, m_subcarriers: int, l_symbols: int, **kwargs):
        """Config whose symbol duration is the NR average ``1 ms / (14 * 2**mu)``."""
        scs = 15e3 * 2**mu
        return cls(m_subcarriers, l_symbols, scs, 1e-3 / (14 * 2**mu) - 1 / scs, **kwargs)

    @property
    def symbol_duration(self) -> float:
        return self.cp_duration + 1.0 / self.subcarrier_spacing

    @property
    def range_bin(self) -> float:
        return SPEED_OF_LIGHT / (2 * self.m_subcarriers * self.subcarrier_spacing)

    @property
    def velocity_bin(self) -> float:
        return SPEED_OF_LIGHT / (2 * self.carrier_frequency * self.l_symbols * self.symbol_duration)


@dataclass(frozen=True)
class PathParams:
    """
    One propagation path.

    For radar paths ``gain`` is the reflection coefficient ``beta``; for
    communication paths it is the one-way path coefficient. ``angles`` is the
    departure direction at the gNB; ``arrival`` is the direction seen by the
    vehicle array and defaults to ``angles`` (line of sight).
    """

    delay: float
    doppler: float
    gain: complex
    angles: AnglePair
    is_los: bool = False
    arrival: AnglePair | None = None

    def __post_init__(self):
        if self.delay < 0:
            raise ValueError("path delay must be nonnegative")


PathSet = Sequence[PathParams]


def reflection_coefficient(distance, rcs=1.0):
    """Radar reflection coefficient ``rcs * (2 d)**-2``."""
    return rcs * (2.0 * np.asarray(distance, dtype=float)) ** -2


def echo_path(distance: float, radial_speed: float, angles: AnglePair, carrier_frequency: float,
              rcs: complex = 1.0, is_los: bool = False) -> PathParams:
    """Radar path from target range, closing speed and direction."""
    return PathParams(
        delay=2 * distance / SPEED_OF_LIGHT,
        doppler=2 * radial_speed * carrier_frequency / SPEED_OF_LIGHT,
        gain=complex(reflection_coefficient(distance, 1.0) * rcs),
        angles=angles,
        is_los=is_los,
    )


# ---------------------------------------------------------------- modulation

def _gray_levels(k: int) -> np.ndarray:
    """PAM amplitude for each Gray-coded ``k``-bit label (as integer)."""
    n = 2**k
    labels = np.arange(n)
    binary = labels.copy()
    shift = labels >> 1
    while shift.any():
        binary ^= shift
        shift >>= 1
    return (n - 1) - 2.0 * binary


def _qam_scale(bits_per_symbol: int) -> float:
    return np.sqrt(2 * (2**bits_per_symbol - 1) / 3)


def _check_bps(bits_per_symbol: int):
    if bits_per_symbol not in (2, 4, 6):
        raise ValueError(f"bits_per_symbol must be 2, 4 or 6, got {bits_per_symbol}")


def qam_modulate(bits, bits_per_symbol: int) -> np.ndarray:
    """Gray-mapped square QAM with unit average power; returns a flat symbol array."""
    _check_bps(bits_per_symbol)
    bits = np.asarray(bits, dtype=np.int64).ravel()
    if bits.size % bits_per_symbol:
        raise ShapeError(f"{bits.size} bits do not fill whole {bits_per_symbol}-bit symbols")
    k = bits_per_symbol // 2
    weights = 1 << np.arange(k - 1, -1, -1)
    groups = bits.reshape(-1, 2, k)
    labels = groups @ weights
    levels = _gray_levels(k)
    return (levels[labels[:, 0]] + 1j * levels[labels[:, 1]]) / _qam_scale(bits_per_symbol)


def qam_demodulate(symbols, bits_per_symbol: int) -> np.ndarray:
    """Hard-decision inverse of :func:`qam_modulate`."""
    _check_bps(bits_per_symbol)
    k = bits_per_symbol // 2
    n = 2**k
    y = np.asarray(symbols).ravel() * _qam_scale(bits_per_symbol)
    levels = _gray_levels(k)
    # level index i (0 = most positive) has amplitude n-1-2i
    label_of_index = np.empty(n, dtype=np.int64)
    label_of_index[((n - 1) - levels).astype(int) // 2] = np.arange(n)

    def axis_bits(x):
        idx = np.clip(np.rint(((n - 1) - x) / 2.0), 0, n - 1).astype(int)
        lab = label_of_index[idx]
        return (lab[:, None] >> np.arange(k - 1, -1, -1)) & 1

    return np.concatenate([axis_bits(y.real), axis_bits(y.imag)], axis=1).ravel()


def modulate_grid(bit_stream, cfg: OfdmConfig, bits_per_symbol: int = 2) -> np.ndarray:
    """
    Fill an ``M x L`` grid with Gray-mapped QAM symbols.

    Raises
    ------
    ShapeError
        If the bit count is not ``M * L * bits_per_symbol``.
    """
    _check_bps(bits_per_symbol)
    bits = np.asarray(bit_stream).ravel()
    expected = cfg.m_subcarriers * cfg.l_symbols * bits_per_symbol
    if bits.size != expected:
        raise ShapeError(f"expected {expected} bits, got {bits.size}")
    return qam_modulate(bits, bits_per_symbol).reshape(cfg.m_subcarriers, cfg.l_symbols)


def demodulate_grid(grid, bits_per_symbol: int = 2) -> np.ndarray:
    return qam_demodulate(grid, bits_per_symbol)


def random_grid(cfg: OfdmConfig, bits_per_symbol: int = 2, seed=None) -> np.ndarray:
    rng = np.random.default_rng(seed)
    bits = rng.integers(0, 2, cfg.m_subcarriers * cfg.l_symbols * bits_per_symbol)
    return modulate_grid(bits, cfg, bits_per_symbol)


def complex_noise(rng: np.random.Generator, shape, variance: float) -> np.ndarray:
    """Circular complex Gaussian samples with per-entry ``variance``."""
    scale = np.sqrt(variance / 2.0)
    return scale * (rng.standard_normal(shape) + 1j * rng.standard_normal(shape))


# ---------------------------------------------------------------- radar echo

def delay_response(delay: float, cfg: OfdmConfig) -> np.ndarray:
    """Per-subcarrier phase ramp ``exp(-j 2 pi m df tau)``."""
    m = np.arange(cfg.m_subcarriers)
    return np.exp(-2j * np.pi * cfg.subcarrier_spacing * m * delay)


def doppler_response(doppler: float, cfg: OfdmConfig) -> np.ndarray:
    """Per-symbol phase ramp ``exp(-j 2 pi mu l T_s)``; echoes carry its conjugate."""
    l = np.arange(cfg.l_symbols)
    return np.exp(-2j * np.pi * doppler * l * cfg.symbol_duration)


def ici_diagonal(doppler: float, cfg: OfdmConfig) -> np.ndarray:
    """Diagonal of the fast-time inter-carrier-interference matrix."""
    m = np.arange(cfg.m_subcarriers)
    return np.exp(2j * np.pi * doppler * cfg.symbol_duration * m / cfg.m_subcarriers)


def path_amplitudes(paths: PathSet, f: np.ndarray, rx_geom: ArrayGeometry, cfg: OfdmConfig,
                    tx_geom: ArrayGeometry | None = None) -> np.ndarray:
    """
    Per-antenna echo amplitudes ``zeta sqrt(p) beta_k [b(theta_k)]_i a(theta_k)^T f``.

    Returns an array of shape ``(K, N_r)``.
    """
    f = np.asarray(f)
    if tx_geom is None:
        tx_geom = rx_geom
    if f.size != tx_geom.size:
        raise ShapeError(f"beamformer has {f.size} entries, transmit array has {tx_geom.size}")
    zeta = array_gain_factor(tx_geom.size, rx_geom.size)
    out = np.empty((len(paths), rx_geom.size), dtype=complex)
    for k, path in enumerate(paths):
        tx_gain = steering_vector(path.angles, tx_geom) @ f
        out[k] = zeta * np.sqrt(cfg.tx_power) * path.gain * steering_vector(path.angles, rx_geom) * tx_gain
    return out


def synthesize_echo(grid: np.ndarray, paths: PathSet, f: np.ndarray, rx_geom: ArrayGeometry,
                    cfg: OfdmConfig, noise_var: float = 0.0, include_ici: bool = False,
                    seed=None, tx_geom: ArrayGeometry | None = None) -> np.ndarray:
    """
    Echo cube received by the gNB array.

    Antenna ``i`` observes ``sum_k alpha_k (S * eta(tau_k) omega(mu_k)^H) + Z_i``
    with optional fast-time ICI applied per path.

    Parameters
    ----------
    grid : ndarray, shape (M, L)
        Transmitted symbols.
    paths : sequence of PathParams
    f : ndarray
        Transmit beamformer.
    rx_geom : ArrayGeometry
        Receive array (also the transmit array unless ``tx_geom`` is given).
    noise_var : float
        Per-entry noise variance.
    seed : int, Generator or None
        Noise source.

    Returns
    -------
    ndarray, shape (N_r, M, L)
    """
    grid = np.asarray(grid)
    if grid.shape != (cfg.m_subcarriers, cfg.l_symbols):
        raise ShapeError(f"grid shape {grid.shape} does not match config "
                         f"({cfg.m_subcarriers}, {cfg.l_symbols})")
    if noise_var < 0:
        raise ValueError("noise variance must be nonnegative")
    amps = path_amplitudes(paths, f, rx_geom, cfg, tx_geom)
    cube = np.zeros((rx_geom.size,) + grid.shape, dtype=complex)
    for k, path in enumerate(paths):
        delay_doppler = np.outer(delay_response(path.delay, cfg), np.conj(doppler_response(path.doppler, cfg)))
        if include_ici:
            delay_doppler *= ici_diagonal(path.doppler, cfg)[:, None]
        cube += amps[k][:, None, None] * (grid * delay_doppler)[None]
    if noise_var > 0:
        cube += complex_noise(np.random.default_rng(seed), cube.shape, noise_var)
    return cube


def tapered_static_channel(paths: PathSet, f: np.ndarray, rx_geom: ArrayGeometry, cfg: OfdmConfig,
                           taper: np.ndarray, noise_var: float = 0.0, seed=None,
                           tx_geom: ArrayGeometry | None = None) -> np.ndarray:
    """
    Slow-time weighted sum of the extracted channel, ``R~ w``, synthesized
    directly.

    For unit-modulus symbols this has exactly the distribution of
    ``extract_channel(synthesize_echo(...), grid) @ w``, without building the
    ``(N_r, M, L)`` cube. ``taper`` holds the ``L`` weights ``w``.

    Returns
    -------
    ndarray, shape (N_r, M)
    """
    w = np.asarray(taper, dtype=float)
    if w.shape != (cfg.l_symbols,):
        raise ShapeError(f"taper needs {cfg.l_symbols} weights, got shape {w.shape}")
    amps = path_amplitudes(paths, f, rx_geom, cfg, tx_geom)
    out = np.zeros((rx_geom.size, cfg.m_subcarriers), dtype=complex)
    for k, path in enumerate(paths):
        slow = np.conj(doppler_response(path.doppler, cfg)) @ w
        out += amps[k][:, None] * delay_response(path.delay, cfg)[None] * slow
    if noise_var > 0:
        out += complex_noise(np.random.default_rng(seed), out.shape, noise_var * float(w @ w))
    return out


def extract_channel(echo: np.ndarray, grid: np.ndarray) -> np.ndarray:
    """Element-wise division of the echo by the transmitted grid."""
    grid = np.asarray(grid)
    if np.any(grid == 0):
        raise DivisionDomainError("transmit grid contains zero symbols")
    return np.asarray(echo) / grid


def post_division_noise_var(noise_var: float, grid: np.ndarray) -> float:
    """Noise variance after channel extraction, ``sigma^2 / (ML) * sum 1/|s|^2``."""
    grid = np.asarray(grid)
    return float(noise_var * np.mean(1.0 / np.abs(grid) ** 2))


# ---------------------------------------------------------------- comm link

def effective_channel(paths: PathSet, f: np.ndarray, combiner: np.ndarray, cfg: OfdmConfig,
                      tx_geom: ArrayGeometry, rx_geom: ArrayGeometry) -> complex:
    """
    Scalar downlink channel
    ``zeta~ sqrt(p) sum_k alpha~_k (v^T u(theta_k)) (a(theta_k)^T f)``.
    """
    combiner = np.asarray(combiner)
    if combiner.size != rx_geom.size:
        raise ShapeError(f"combiner has {combiner.size} entries, vehicle array has {rx_geom.size}")
    zeta = array_gain_factor(tx_geom.size, rx_geom.size)
    h = 0j
    for path in paths:
        arrival = path.angles if path.arrival is None else path.arrival
        h += path.gain * (combiner @ steering_vector(arrival, rx_geom)) * \
            (steering_vector(path.angles, tx_geom) @ f)
    return complex(zeta * np.sqrt(cfg.tx_power) * h)


def comm_receive_snr(paths: PathSet, f: np.ndarray, combiner: np.ndarray, cfg: OfdmConfig,
                     noise_var: float, tx_geom: ArrayGeometry, rx_geom: ArrayGeometry) -> float:
    """Linear receive SNR of the scalar downlink channel."""
    if noise_var <= 0:
        raise ValueError("noise variance must be positive")
    h = effective_channel(paths, f, combiner, cfg, tx_geom, rx_geom)
    return abs(h) ** 2 / noise_var


def ber_over_channel(bits, h, noise_var: float, bits_per_symbol: int, seed=None) -> float:
    """
    Bit-error fraction over ``y = h s + n`` with coherent equalization.

    ``h`` may be a scalar or an array with one entry per symbol.
    """
    bits = np.asarray(bits).ravel()
    symbols = qam_modulate(bits, bits_per_symbol)
    h = np.broadcast_to(np.asarray(h, dtype=complex), symbols.shape)
    y = h * symbols
    if noise_var > 0:
        y = y + complex_noise(np.random.default_rng(seed), symbols.shape, noise_var)
    safe = np.where(h == 0, 1.0, h)
    decided = qam_demodulate(y / safe, bits_per_symbol)
    return float(np.mean(decided != bits))


def slot_bit_errors(h, noise_var, bits_per_symbol: int, n_symbols: int, seed=None) -> np.ndarray:
    """
    Bit errors per slot for a sequence of scalar channels.

    Each slot carries ``n_symbols`` random QAM symbols through its own
    ``h[n]``; ``noise_var`` may be a scalar or per-slot array. Returns the
    error count per slot (out of ``n_symbols * bits_per_symbol`` bits).
    """
    rng = np.random.default_rng(seed)
    h = np.asarray(h, dtype=complex).ravel()
    nv = np.broadcast_to(np.asarray(noise_var, dtype=float), h.shape)
    bits = rng.integers(0, 2, (h.size, n_symbols * bits_per_symbol))
    symbols = qam_modulate(bits, bits_per_symbol).reshape(h.size, n_symbols)
    noise = complex_noise(rng, symbols.shape, 1.0) * np.sqrt(nv)[:, None]
    y = h[:, None] * symbols + noise
    safe = np.where(h == 0, 1.0, h)[:, None]
    decided = qam_demodulate(y / safe, bits_per_symbol).reshape(bits.shape)
    return np.sum(decided != bits, axis=1)


def measure_ber(tx_bits, paths: PathSet, f: np.ndarray, combiner: np.ndarray, cfg: OfdmConfig,
                noise_var: float, seed=None, *, tx_geom: ArrayGeometry, rx_geom: ArrayGeometry,
                bits_per_symbol: int = 2) -> float:
    """Transmit a grid of ``tx_bits`` through the scalar channel and count bit errors."""
    modulate_grid(tx_bits, cfg, bits_per_symbol)  # shape check
    h = effective_channel(paths, f, combiner, cfg, tx_geom, rx_geom)
    return ber_over_channel(tx_bits, h, noise_var, bits_per_symbol, seed)


def ss_rsrp(sss_res) -> float:
    """Linear-average received power over SSS resource elements, in dBm (input in W)."""
    x = np.asarray(sss_res)
    if x.size == 0:
        raise ValueError("SS-RSRP needs at least one resource element")
    return float(10 * np.log10(np.mean(np.abs(x) ** 2)) + 30)


def thermal_noise_dbm(bandwidth: float, density_dbm_hz: float = BOLTZMANN_DBM_PER_HZ) -> float:
    """Thermal noise power over ``bandwidth`` Hz."""
    return density_dbm_hz + 10 * np.log10(bandwidth)
