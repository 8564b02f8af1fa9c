"""
Radar processing of extracted channel cubes.

A channel cube has shape ``(N_r, M, L)`` (antenna, subcarrier, symbol) or
``(M, L)`` for a single antenna. The chain is

1. :func:`delay_doppler_map` - unitary IDFT over subcarriers, DFT over symbols;
2. :func:`detect_presence` - per-cell threshold test on the real part;
3. :func:`coarse_peak_estimate` - strongest moving cell to range and speed;
4. :func:`refine_target` - MUSIC pseudospectra searched by golden section
   inside the +/- one bin bracket around the coarse peak;
5. :func:`estimate_doa_2d` - 2D MUSIC over the receive steering vectors.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, NamedTuple

import numpy as np
from scipy import optimize, special, stats

from .array import AnglePair, ArrayGeometry, steering_matrix
from .constants import CHI, SPEED_OF_LIGHT
from .errors import DegenerateCovarianceError, NoTargetError
from .ofdm import OfdmConfig


# ------------------------------------------------------------ delay-Doppler

def delay_doppler_map(channel: np.ndarray) -> np.ndarray:
    """
    Delay-Doppler representation ``F_M^H R F_L`` of the last two axes.

    Both transforms are unitary, so white noise keeps its per-cell variance.
    """
    channel = np.asarray(channel)
    return np.fft.fft(np.fft.ifft(channel, axis=-2, norm="ortho"), axis=-1, norm="ortho")


def estimate_noise_variance(dd_map: np.ndarray) -> float:
    """
    Robust noise variance of a mostly-noise map, ``median(|Y|^2) / ln 2``.

    Raises
    ------
    ValueError
        If the map has fewer than 100 cells.
    """
    dd_map = np.asarray(dd_map)
    if dd_map.size < 100:
        raise ValueError(f"need at least 100 cells for a noise estimate, got {dd_map.size}")
    return float(np.median(np.abs(dd_map) ** 2) / np.log(2.0))


def q_inverse(p: float) -> float:
    """Inverse Gaussian tail function, found by bracketing root search."""
    if not 0.0 < p < 1.0:
        raise ValueError(f"probability must lie in (0, 1), got {p}")

    def excess(x):
        return 0.5 * special.erfc(x / np.sqrt(2.0)) - p

    return float(optimize.brentq(excess, -40.0, 40.0, xtol=1e-14, rtol=1e-15))


def detection_threshold(noise_var: float, p_fa: float) -> float:
    """Threshold on ``Re(Y)`` for a per-cell false-alarm probability ``p_fa``."""
    return float(np.sqrt(noise_var / 2.0) * q_inverse(p_fa))


@dataclass
class DetectionVerdict:
    present: bool
    triggered_cells: list = field(default_factory=list)
    threshold: float = 0.0


def detect_presence(dd_map: np.ndarray, noise_var: float, p_fa: float = 0.01,
                    exclude_zero_doppler: bool = True) -> DetectionVerdict:
    """
    Per-cell target test on the real part of the delay-Doppler map.

    A cell triggers when ``Re(Y) > sqrt(noise_var / 2) Q^{-1}(p_fa)``; under
    noise only each cell alarms with probability ``p_fa``. The zero-Doppler
    column holds static clutter and is skipped.

    Parameters
    ----------
    dd_map : ndarray, shape (N_r, M, L) or (M, L)
    noise_var : float
        Post-extraction noise variance per cell.
    p_fa : float
        Per-cell false-alarm probability.
    """
    if noise_var <= 0:
        raise ValueError("noise variance must be positive")
    if not 0.0 < p_fa < 1.0:
        raise ValueError(f"p_fa must lie in (0, 1), got {p_fa}")
    dd_map = np.asarray(dd_map)
    cube = dd_map[None] if dd_map.ndim == 2 else dd_map
    thr = detection_threshold(noise_var, p_fa)
    hits = cube.real > thr
    if exclude_zero_doppler:
        hits[..., 0] = False
    cells = [tuple(int(v) for v in idx) for idx in np.argwhere(hits)]
    return DetectionVerdict(bool(cells), cells, thr)


def min_antenna_hits(n_antennas: int, n_cells: int, p_fa: float = 0.01,
                     system_pfa: float = 0.01) -> int:
    """
    Smallest antenna count ``k`` such that, under noise only, the chance that
    any of ``n_cells`` delay-Doppler cells triggers on ``k`` or more antennas
    stays below ``system_pfa`` (union bound over cells).
    """
    if n_antennas < 1 or n_cells < 1:
        raise ValueError("need at least one antenna and one cell")
    tail = stats.binom.sf(np.arange(n_antennas + 1) - 1, n_antennas, p_fa)
    ok = np.nonzero(n_cells * tail <= system_pfa)[0]
    return int(ok[0]) if ok.size else n_antennas + 1


def declare_presence(verdict: DetectionVerdict, n_antennas: int, n_cells: int,
                     p_fa: float = 0.01, system_pfa: float = 0.01) -> bool:
    """
    Array-level presence decision from per-cell verdicts.

    A target is declared when some delay-Doppler cell triggers on at least
    :func:`min_antenna_hits` antennas; for a single antenna this reduces to
    the per-cell test.
    """
    if not verdict.triggered_cells:
        return False
    if n_antennas == 1:
        return True
    need = min_antenna_hits(n_antennas, n_cells, p_fa, system_pfa)
    cells = np.array([c[1:] for c in verdict.triggered_cells])
    _, counts = np.unique(cells, axis=0, return_counts=True)
    return bool(counts.max() >= need)


@dataclass(frozen=True)
class CoarsePeak:
    delay_bin: int
    doppler_bin: int
    magnitude: float

    def signed_doppler_bin(self, l_symbols: int) -> int:
        """Doppler bins above ``L/2`` are receding targets (negative speed)."""
        return self.doppler_bin - l_symbols if self.doppler_bin > l_symbols // 2 else self.doppler_bin


def coarse_peak_estimate(dd_map: np.ndarray, cfg: OfdmConfig, exclude_zero_doppler: bool = True,
                         mask: np.ndarray | None = None):
    """
    Strongest moving-target cell and its range / closing speed.

    Power is summed over antennas before peak picking.

    Returns
    -------
    peak : CoarsePeak
    range : float
        ``m c / (2 M df)``.
    speed : float
        ``l c / (2 f_c L T_s)`` with signed Doppler bin ``l``.
    """
    dd_map = np.asarray(dd_map)
    power = np.abs(dd_map) ** 2
    if power.ndim == 3:
        power = power.sum(axis=0)
    if exclude_zero_doppler:
        power[:, 0] = 0.0
    if mask is not None:
        power = np.where(mask, power, 0.0)
    m_hat, l_hat = np.unravel_index(np.argmax(power), power.shape)
    if power[m_hat, l_hat] <= 0.0:
        raise NoTargetError("no nonzero moving-target cell in the delay-Doppler map")
    peak = CoarsePeak(int(m_hat), int(l_hat), float(np.sqrt(power[m_hat, l_hat])))
    l_signed = peak.signed_doppler_bin(cfg.l_symbols)
    return peak, m_hat * cfg.range_bin, l_signed * cfg.velocity_bin


def remove_static_clutter(channel: np.ndarray) -> np.ndarray:
    """Subtract the slow-time mean, cancelling zero-Doppler returns exactly."""
    channel = np.asarray(channel)
    return channel - channel.mean(axis=-1, keepdims=True)


# ------------------------------------------------------------------- MUSIC

def _as_cube(channel):
    channel = np.asarray(channel)
    return channel[None] if channel.ndim == 2 else channel


def delay_snapshots(channel: np.ndarray) -> np.ndarray:
    """Columns ``r_{i,l}`` (length M) over all antennas and symbols."""
    cube = _as_cube(channel)
    return cube.transpose(1, 0, 2).reshape(cube.shape[1], -1)


def doppler_snapshots(channel: np.ndarray) -> np.ndarray:
    """Rows of each antenna matrix (length L) over all antennas and subcarriers."""
    cube = _as_cube(channel)
    return cube.transpose(2, 0, 1).reshape(cube.shape[2], -1)


def spatial_snapshots(channel: np.ndarray) -> np.ndarray:
    """Array snapshots (length N_r) over all subcarriers and symbols."""
    cube = _as_cube(channel)
    return cube.reshape(cube.shape[0], -1)


def sample_covariance(snapshots: np.ndarray, n_average: int | None = None) -> np.ndarray:
    """``X X^H / n_average``; ``n_average`` defaults to the snapshot count."""
    snapshots = np.asarray(snapshots)
    n = snapshots.shape[1] if n_average is None else n_average
    return snapshots @ snapshots.conj().T / n


def estimate_model_order(eigenvalues: np.ndarray, max_order: int | None = None) -> int:
    """Largest-gap rule on the descending log-eigenvalue sequence."""
    lam = np.sort(np.abs(np.asarray(eigenvalues)))[::-1]
    lam = np.maximum(lam, lam[0] * 1e-15 + 1e-300)
    gaps = -np.diff(np.log(lam))
    if max_order is not None:
        gaps = gaps[:max_order]
    return int(np.argmax(gaps) + 1)


def noise_subspace(cov: np.ndarray, model_order: int, rank_tol: float = 1e-10) -> np.ndarray:
    """
    Eigenvectors of the ``n - model_order`` smallest eigenvalues.

    Raises
    ------
    DegenerateCovarianceError
        If the covariance has fewer than ``model_order`` significant
        eigenvalues or the model order leaves no noise subspace.
    """
    n = cov.shape[0]
    if not 0 < model_order < n:
        raise DegenerateCovarianceError(f"model order {model_order} invalid for dimension {n}")
    lam, vecs = np.linalg.eigh(cov)
    top = lam[-1]
    if not np.isfinite(top) or top <= 0:
        raise DegenerateCovarianceError("covariance is zero or non-finite")
    rank = int(np.sum(lam > rank_tol * top))
    if rank < model_order:
        raise DegenerateCovarianceError(f"covariance rank {rank} below model order {model_order}")
    return vecs[:, : n - model_order]


def music_pseudospectrum(noise_sub: np.ndarray, steering: np.ndarray) -> np.ndarray:
    """``1 / (a^H U_n U_n^H a)`` for steering vectors along the last axis."""
    proj = np.asarray(steering) @ noise_sub.conj()
    denom = np.sum(np.abs(proj) ** 2, axis=-1)
    return 1.0 / np.maximum(denom, np.finfo(float).tiny)


def delay_steering(delay, cfg: OfdmConfig, m_subcarriers: int | None = None) -> np.ndarray:
    """``a_d``: entries ``exp(-j m w_d)`` with ``w_d = 2 pi df tau``."""
    m = np.arange(cfg.m_subcarriers if m_subcarriers is None else m_subcarriers)
    w = 2 * np.pi * cfg.subcarrier_spacing * np.asarray(delay, dtype=float)
    return np.exp(-1j * np.multiply.outer(w, m))


def doppler_steering(doppler, cfg: OfdmConfig, l_symbols: int | None = None) -> np.ndarray:
    """``a_v``: entries ``exp(+j l w_v)`` with ``w_v = 2 pi T_s mu``."""
    l = np.arange(cfg.l_symbols if l_symbols is None else l_symbols)
    w = 2 * np.pi * cfg.symbol_duration * np.asarray(doppler, dtype=float)
    return np.exp(1j * np.multiply.outer(w, l))


def music_spectrum(snapshots: np.ndarray, probe: Callable, model_order: int, at):
    """
    MUSIC pseudospectrum of ``snapshots`` evaluated at ``at``.

    Parameters
    ----------
    snapshots : ndarray, shape (n, n_snapshots)
    probe : callable
        Maps a parameter value (or array) to steering vector(s) of length n.
    model_order : int
        Signal-subspace dimension K.
    at : float or array_like
    """
    snapshots = np.asarray(snapshots)
    if snapshots.shape[1] < model_order + 1:
        raise DegenerateCovarianceError(
            f"{snapshots.shape[1]} snapshots cannot support model order {model_order}")
    un = noise_subspace(sample_covariance(snapshots), model_order)
    out = music_pseudospectrum(un, probe(at))
    return float(out) if np.ndim(out) == 0 else out


# ----------------------------------------------------------- golden section

@dataclass(frozen=True)
class MusicSetup:
    search_lo: float
    search_hi: float
    stop_width: float
    model_order: int = 1

    def __post_init__(self):
        if not self.search_lo < self.search_hi:
            raise ValueError("search interval must satisfy lo < hi")
        if self.stop_width <= 0:
            raise ValueError("stop width must be positive")


class GoldenResult(NamedTuple):
    x: float
    lo: float
    hi: float
    iterations: int
    evaluations: int


def golden_section_search(objective: Callable[[float], float], lo: float, hi: float,
                          stop_width: float, max_iter: int | None = None) -> GoldenResult:
    """
    Golden-section maximization on ``[lo, hi]``.

    Interior points sit at fractions ``1 - chi`` and ``chi`` of the bracket;
    the side holding the smaller value is dropped, so the bracket shrinks by
    ``chi`` per iteration. Stops when the width falls below ``stop_width``
    (or after ``max_iter`` iterations) and reports the bracket midpoint.
    """
    a, b = float(lo), float(hi)
    n_eval = 0

    def f(x):
        nonlocal n_eval
        n_eval += 1
        val = float(objective(x))
        if not np.isfinite(val):
            raise ValueError(f"objective returned non-finite value at {x}")
        return val

    x1 = a + (1 - CHI) * (b - a)
    x2 = a + CHI * (b - a)
    f1, f2 = f(x1), f(x2)
    it = 0
    while b - a >= stop_width and (max_iter is None or it < max_iter):
        if f1 >= f2:
            b, x2, f2 = x2, x1, f1
            x1 = a + (1 - CHI) * (b - a)
            f1 = f(x1)
        else:
            a, x1, f1 = x1, x2, f2
            x2 = a + CHI * (b - a)
            f2 = f(x2)
        it += 1
    return GoldenResult(0.5 * (a + b), a, b, it, n_eval)


def golden_section_refine(objective: Callable[[float], float], setup: MusicSetup) -> float:
    """Maximizer of ``objective`` inside the setup's bracket."""
    return golden_section_search(objective, setup.search_lo, setup.search_hi, setup.stop_width).x


class RefinedTarget(NamedTuple):
    delay: float
    doppler: float
    range: float
    speed: float


def refine_target(channel: np.ndarray, coarse: CoarsePeak, cfg: OfdmConfig, model_order: int = 1,
                  delay_stop: float | None = None, doppler_stop: float | None = None) -> RefinedTarget:
    """
    Super-resolve delay and Doppler around a coarse peak.

    The delay pseudospectrum uses per-symbol antenna stacks (covariance
    averaged over symbols); the Doppler one uses per-subcarrier stacks.
    Each is searched on the bracket one bin either side of the coarse bin.
    Default stop widths are 1e-3 of a bin.
    """
    cube = _as_cube(channel)
    m, l_sym = cube.shape[1], cube.shape[2]
    delay_bin = 1.0 / (m * cfg.subcarrier_spacing)
    doppler_bin = 1.0 / (l_sym * cfg.symbol_duration)
    delay_stop = 1e-3 * delay_bin if delay_stop is None else delay_stop
    doppler_stop = 1e-3 * doppler_bin if doppler_stop is None else doppler_stop

    un_d = noise_subspace(sample_covariance(delay_snapshots(cube), l_sym), model_order)
    un_v = noise_subspace(sample_covariance(doppler_snapshots(cube), m), model_order)

    l_signed = coarse.signed_doppler_bin(l_sym)
    d_setup = MusicSetup((coarse.delay_bin - 1) * delay_bin, (coarse.delay_bin + 1) * delay_bin,
                         delay_stop, model_order)
    v_setup = MusicSetup((l_signed - 1) * doppler_bin, (l_signed + 1) * doppler_bin,
                         doppler_stop, model_order)
    tau = golden_section_refine(
        lambda t: music_pseudospectrum(un_d, delay_steering(t, cfg, m)), d_setup)
    mu = golden_section_refine(
        lambda u: music_pseudospectrum(un_v, doppler_steering(u, cfg, l_sym)), v_setup)
    return RefinedTarget(tau, mu, delay_to_range(tau), doppler_to_speed(mu, cfg.carrier_frequency))


def delay_to_range(delay):
    return delay * SPEED_OF_LIGHT / 2.0


def doppler_to_speed(doppler, carrier_frequency: float):
    return doppler * SPEED_OF_LIGHT / (2.0 * carrier_frequency)


# --------------------------------------------------------------------- DOA

def default_angle_grids(step_deg: float = 1.0):
    """Azimuth over [-90, 90] deg and elevation over [-90, 90] deg."""
    az = np.deg2rad(np.arange(-90.0, 90.0 + step_deg / 2, step_deg))
    el = np.deg2rad(np.arange(-90.0, 90.0 + step_deg / 2, step_deg))
    return az, el


def _local_maxima(spec: np.ndarray):
    padded = np.pad(spec, 1, mode="constant", constant_values=-np.inf)
    core = padded[1:-1, 1:-1]
    is_max = np.ones_like(spec, dtype=bool)
    for di in (-1, 0, 1):
        for dj in (-1, 0, 1):
            if di or dj:
                is_max &= core >= padded[1 + di: padded.shape[0] - 1 + di, 1 + dj: padded.shape[1] - 1 + dj]
    return np.argwhere(is_max)


def find_doa_peaks(channel: np.ndarray, model_order: int, az_grid, el_grid, rx_geom: ArrayGeometry,
                   n_peaks: int = 1, refine: bool = True) -> list[AnglePair]:
    """
    Directions of the ``n_peaks`` strongest 2D-MUSIC peaks.

    The spatial covariance is averaged over all subcarriers and symbols.
    Peaks are ranked by pseudospectrum height and, when ``refine`` is set,
    polished by one golden-section pass per axis within one grid step.
    """
    cube = _as_cube(channel)
    if cube.shape[0] != rx_geom.size:
        raise ValueError(f"cube has {cube.shape[0]} antennas, geometry has {rx_geom.size}")
    if rx_geom.size <= model_order:
        raise DegenerateCovarianceError("need more antennas than the model order")
    cov = sample_covariance(spatial_snapshots(cube), cube.shape[2])
    un = noise_subspace(cov, model_order)
    az_grid = np.asarray(az_grid, dtype=float)
    el_grid = np.asarray(el_grid, dtype=float)
    az_mesh, el_mesh = np.meshgrid(az_grid, el_grid, indexing="ij")
    spec = music_pseudospectrum(un, steering_matrix(az_mesh, el_mesh, rx_geom))
    peaks = _local_maxima(spec)
    order = np.argsort(spec[peaks[:, 0], peaks[:, 1]])[::-1][:n_peaks]

    def point(az, el):
        return float(music_pseudospectrum(un, steering_matrix(az, el, rx_geom)))

    daz = az_grid[1] - az_grid[0] if az_grid.size > 1 else 0.0
    del_ = el_grid[1] - el_grid[0] if el_grid.size > 1 else 0.0
    out = []
    for i, j in peaks[order]:
        az, el = az_grid[i], el_grid[j]
        if refine:
            if daz:
                az = golden_section_search(lambda a: point(a, el), az - daz, az + daz, daz * 1e-3).x
            if del_:
                lo, hi = max(el - del_, -np.pi / 2), min(el + del_, np.pi / 2)
                el = golden_section_search(lambda e: point(az, e), lo, hi, del_ * 1e-3).x
        out.append(AnglePair(float(az), float(el)))
    return out


def estimate_doa_2d(channel: np.ndarray, model_order: int, az_grid, el_grid,
                    rx_geom: ArrayGeometry) -> AnglePair:
    """Direction of the highest 2D-MUSIC peak."""
    return find_doa_peaks(channel, model_order, az_grid, el_grid, rx_geom, n_peaks=1)[0]


def bartlett_power(channel: np.ndarray, angles: AnglePair, rx_geom: ArrayGeometry) -> float:
    """Conventional beamformer output power ``b^H Sigma b`` towards ``angles``."""
    cube = _as_cube(channel)
    cov = sample_covariance(spatial_snapshots(cube))
    b = steering_matrix(angles.azimuth, angles.elevation, rx_geom)
    return float(np.real(b.conj() @ cov @ b))
