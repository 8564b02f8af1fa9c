"""
Road scenario: vehicle trajectory, static scatterers, optional blockage, and
the per-slot radar and communication paths derived from them.

Coordinates are metres with the gNB array facing the ``+y`` direction.
Azimuth is ``atan2(x, y)`` (zero at broadside, positive towards ``+x``) and
elevation is the signed angle above the array's horizontal plane. The road
runs along ``x``; the vehicle drives towards ``-x`` by default.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
from scipy.signal import lfilter

from .array import AnglePair, ArrayGeometry, steering_matrix
from .constants import CARRIER_FREQUENCY, SIM_DURATION, SLOT_DURATION, SPEED_OF_LIGHT
from .ofdm import PathParams, echo_path


@dataclass(frozen=True)
class Scatterer:
    """Static reflector; ``rcs_db`` is relative to the vehicle's RCS."""

    position: tuple
    rcs_db: float = -10.0

    @property
    def rcs(self) -> float:
        return 10 ** (self.rcs_db / 10)


@dataclass(frozen=True)
class Blockage:
    """
    LoS blockage by a larger, faster vehicle in the lane nearer the gNB.

    While active, the LoS gain is zero and the blocker is the strongest
    moving radar return. The blocker starts ``lane_offset`` metres closer to
    the gNB (along ``-y``) and ``speed_excess`` m/s faster than the vehicle.
    """

    start_slot: int
    duration_slots: int
    lane_offset: float = 5.0
    speed_excess: float = 5.0
    rcs_db: float = 6.0

    def __post_init__(self):
        if self.start_slot < 0 or self.duration_slots < 1:
            raise ValueError("blockage needs a nonnegative start and positive duration")

    def active(self, slots) -> np.ndarray:
        slots = np.asarray(slots)
        return (slots >= self.start_slot) & (slots < self.start_slot + self.duration_slots)


DEFAULT_SCATTERERS = (Scatterer((-15.0, 55.0, 6.0)), Scatterer((20.0, 60.0, 6.0)))


@dataclass(frozen=True)
class ScenarioConfig:
    gnb_position: tuple = (0.0, 0.0, 8.0)
    vehicle_start: tuple = (25.0, 40.0, 1.0)
    direction: tuple = (-1.0, 0.0, 0.0)
    nominal_speed: float = 20.0
    speed_jitter_std: float = 0.5
    jitter_correlation_time: float = 0.5
    duration: float = SIM_DURATION
    slot_duration: float = SLOT_DURATION
    slot_count: int = 32000
    scatterers: tuple = DEFAULT_SCATTERERS
    blockage: Blockage | None = None

    def __post_init__(self):
        vals = [*self.gnb_position, *self.vehicle_start, *self.direction]
        for s in self.scatterers:
            vals.extend(s.position)
        if len(self.gnb_position) != 3 or len(self.vehicle_start) != 3:
            raise ValueError("positions must be 3D")
        if not np.all(np.isfinite(vals)):
            raise ValueError("all positions must be finite")
        if np.linalg.norm(self.direction) == 0:
            raise ValueError("road direction must be nonzero")
        if self.slot_count < 1 or self.slot_duration <= 0:
            raise ValueError("need positive slot count and duration")
        if not np.isclose(self.slot_count * self.slot_duration, self.duration, rtol=1e-9):
            raise ValueError(f"slot_count * slot_duration = {self.slot_count * self.slot_duration} "
                             f"differs from duration {self.duration}")
        if self.speed_jitter_std < 0 or self.jitter_correlation_time <= 0:
            raise ValueError("jitter parameters must be nonnegative / positive")

    def with_slots(self, slot_count: int) -> "ScenarioConfig":
        """Same scenario truncated (or extended) to ``slot_count`` slots."""
        return replace(self, slot_count=int(slot_count), duration=int(slot_count) * self.slot_duration)


def direction_angles(vectors) -> tuple[np.ndarray, np.ndarray]:
    """Azimuth and elevation of direction vectors ``(..., 3)``."""
    v = np.asarray(vectors, dtype=float)
    az = np.arctan2(v[..., 0], v[..., 1])
    el = np.arcsin(v[..., 2] / np.linalg.norm(v, axis=-1))
    return az, el


def comm_path_gain(path_length, carrier_frequency: float, rcs: float = 1.0):
    """One-way coefficient ``sqrt(rcs) lambda / (4 pi r) exp(-j 2 pi r / lambda)``."""
    lam = SPEED_OF_LIGHT / carrier_frequency
    r = np.asarray(path_length, dtype=float)
    return np.sqrt(rcs) * lam / (4 * np.pi * r) * np.exp(-2j * np.pi * r / lam)


@dataclass
class WorldTrace:
    """
    Ground truth per slot.

    ``speed`` is the along-road speed and ``radial_speed`` the closing speed
    towards the gNB. Blocker arrays are NaN outside the blockage.
    """

    config: ScenarioConfig
    position: np.ndarray
    speed: np.ndarray
    azimuth: np.ndarray
    elevation: np.ndarray
    range: np.ndarray
    radial_speed: np.ndarray
    blocked: np.ndarray
    blocker_position: np.ndarray
    blocker_speed: np.ndarray
    scatterer_positions: np.ndarray = field(repr=False)
    scatterer_rcs: np.ndarray = field(repr=False)
    _path_cache: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def slot_count(self) -> int:
        return len(self.range)

    def angles(self, n: int) -> AnglePair:
        return AnglePair(float(self.azimuth[n]), float(self.elevation[n]))

    def blocker_state(self, n: int):
        """Range, azimuth, elevation and along-road speed of the blocker at slot ``n``."""
        rel = self.blocker_position[n] - np.asarray(self.config.gnb_position)
        az, el = direction_angles(rel)
        return float(np.linalg.norm(rel)), float(az), float(el), float(self.blocker_speed[n])

    # -- radar ------------------------------------------------------------

    def radar_paths(self, n: int, carrier_frequency: float = CARRIER_FREQUENCY) -> list:
        """Monostatic echo paths at slot ``n``: vehicle (unless blocked), blocker, scatterers."""
        gnb = np.asarray(self.config.gnb_position)
        paths = []
        if not self.blocked[n]:
            paths.append(echo_path(float(self.range[n]), float(self.radial_speed[n]), self.angles(n),
                                   carrier_frequency, 1.0, is_los=True))
        else:
            d, az, el, _ = self.blocker_state(n)
            rel = self.blocker_position[n] - gnb
            closing = -float(np.dot(self._velocity(self.blocker_speed[n]), rel) / d)
            rcs = 10 ** (self.config.blockage.rcs_db / 10)
            paths.append(echo_path(d, closing, AnglePair(az, el), carrier_frequency, rcs))
        for pos, rcs in zip(self.scatterer_positions, self.scatterer_rcs):
            rel = pos - gnb
            az, el = direction_angles(rel)
            paths.append(echo_path(float(np.linalg.norm(rel)), 0.0, AnglePair(float(az), float(el)),
                                   carrier_frequency, rcs))
        return paths

    def _velocity(self, speed):
        u = np.asarray(self.config.direction, dtype=float)
        return speed * u / np.linalg.norm(u)

    # -- communication ----------------------------------------------------

    def comm_path_arrays(self, carrier_frequency: float = CARRIER_FREQUENCY, los_extra_loss_db=None):
        """
        Vectorized downlink paths over all slots.

        Returns
        -------
        gains : ndarray, shape (K, n_slots)
            One-way complex coefficients (LoS first, zero while blocked unless
            ``los_extra_loss_db`` is given, in which case the LoS path is kept
            with that attenuation).
        departure : tuple of ndarray, each (K, n_slots)
            Azimuth and elevation at the gNB.
        arrival : tuple of ndarray, each (K, n_slots)
            Azimuth and elevation seen by the vehicle (direction of travel of
            the incoming wave).
        """
        key = (carrier_frequency, los_extra_loss_db)
        if key in self._path_cache:
            return self._path_cache[key]
        gnb = np.asarray(self.config.gnb_position, dtype=float)
        n = self.slot_count
        k_paths = 1 + len(self.scatterer_positions)
        gains = np.zeros((k_paths, n), dtype=complex)
        dep_az, dep_el = np.zeros((k_paths, n)), np.zeros((k_paths, n))
        arr_az, arr_el = np.zeros((k_paths, n)), np.zeros((k_paths, n))
        los = comm_path_gain(self.range, carrier_frequency)
        if los_extra_loss_db is None:
            los = np.where(self.blocked, 0.0, los)
        else:
            los = np.where(self.blocked, los * 10 ** (-los_extra_loss_db / 20), los)
        gains[0] = los
        dep_az[0], dep_el[0] = self.azimuth, self.elevation
        arr_az[0], arr_el[0] = self.azimuth, self.elevation
        for k, (pos, rcs) in enumerate(zip(self.scatterer_positions, self.scatterer_rcs), start=1):
            leg1 = pos - gnb
            leg2 = self.position - pos
            length = np.linalg.norm(leg1) + np.linalg.norm(leg2, axis=1)
            gains[k] = comm_path_gain(length, carrier_frequency, rcs)
            dep_az[k], dep_el[k] = direction_angles(leg1)
            arr_az[k], arr_el[k] = direction_angles(leg2)
        out = gains, (dep_az, dep_el), (arr_az, arr_el)
        self._path_cache[key] = out
        return out

    def comm_paths(self, n: int, carrier_frequency: float = CARRIER_FREQUENCY) -> list:
        """Downlink paths at slot ``n`` as :class:`PathParams` (delay/Doppler unused)."""
        gains, (daz, del_), (aaz, ael) = self.comm_path_arrays(carrier_frequency)
        out = []
        for k in range(gains.shape[0]):
            if gains[k, n] == 0:
                continue
            out.append(PathParams(0.0, 0.0, complex(gains[k, n]), AnglePair(daz[k, n], del_[k, n]),
                                  is_los=(k == 0), arrival=AnglePair(aaz[k, n], ael[k, n])))
        return out


def effective_channel_trace(gains, departure, arrival, tx_beams, rx_beams,
                            tx_geom: ArrayGeometry, rx_geom: ArrayGeometry, tx_power: float = 1.0):
    """
    Per-slot scalar downlink channel for beam sequences.

    Parameters
    ----------
    gains, departure, arrival
        Output of :meth:`WorldTrace.comm_path_arrays` (possibly sliced).
    tx_beams : ndarray, shape (n_slots, N_t)
    rx_beams : ndarray, shape (n_slots, M_r)
    """
    zeta = np.sqrt(tx_geom.size * rx_geom.size)
    h = np.zeros(gains.shape[1], dtype=complex)
    for k in range(gains.shape[0]):
        a = steering_matrix(departure[0][k], departure[1][k], tx_geom)
        u = steering_matrix(arrival[0][k], arrival[1][k], rx_geom)
        h += gains[k] * np.einsum("ni,ni->n", u, rx_beams) * np.einsum("ni,ni->n", a, tx_beams)
    return zeta * np.sqrt(tx_power) * h


def _speed_profile(cfg: ScenarioConfig, rng: np.random.Generator) -> np.ndarray:
    """Nominal speed plus a stationary Ornstein-Uhlenbeck jitter."""
    n = cfg.slot_count
    if cfg.speed_jitter_std == 0:
        return np.full(n, float(cfg.nominal_speed))
    a = np.exp(-cfg.slot_duration / cfg.jitter_correlation_time)
    shocks = rng.standard_normal(n) * cfg.speed_jitter_std * np.sqrt(1 - a * a)
    shocks[0] = rng.standard_normal() * cfg.speed_jitter_std
    jitter = lfilter([1.0], [1.0, -a], shocks)
    return cfg.nominal_speed + jitter


def generate_scenario(cfg: ScenarioConfig, seed=None) -> WorldTrace:
    """
    Ground-truth trace of one run.

    The vehicle moves along the road axis with jittered speed; angles, range
    and closing speed are taken relative to the gNB. Equal seeds give
    bit-identical traces.
    """
    rng = np.random.default_rng(seed)
    n = cfg.slot_count
    speed = _speed_profile(cfg, rng)
    u = np.asarray(cfg.direction, dtype=float)
    u = u / np.linalg.norm(u)
    travelled = np.concatenate([[0.0], np.cumsum(speed[:-1]) * cfg.slot_duration])
    pos = np.asarray(cfg.vehicle_start, dtype=float) + travelled[:, None] * u
    rel = pos - np.asarray(cfg.gnb_position, dtype=float)
    rng_m = np.linalg.norm(rel, axis=1)
    az, el = direction_angles(rel)
    radial = -(speed[:, None] * u * rel).sum(axis=1) / rng_m

    blocked = np.zeros(n, dtype=bool)
    b_pos = np.full((n, 3), np.nan)
    b_speed = np.full(n, np.nan)
    if cfg.blockage is not None:
        blk = cfg.blockage
        blocked = blk.active(np.arange(n))
        idx = np.nonzero(blocked)[0]
        if idx.size:
            lead = blk.speed_excess * (idx - blk.start_slot) * cfg.slot_duration
            b_pos[idx] = pos[idx] + lead[:, None] * u + np.array([0.0, -blk.lane_offset, 0.0])
            b_speed[idx] = speed[idx] + blk.speed_excess
    scat_pos = np.array([s.position for s in cfg.scatterers], dtype=float).reshape(-1, 3)
    scat_rcs = np.array([s.rcs for s in cfg.scatterers], dtype=float)
    return WorldTrace(cfg, pos, speed, az, el, rng_m, radial, blocked, b_pos, b_speed, scat_pos, scat_rcs)
