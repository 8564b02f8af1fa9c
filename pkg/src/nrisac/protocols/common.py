"""Link configuration, noise calibration and timing shared by the protocol state machines."""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from ..array import ArrayGeometry, dft_codebook
from ..constants import (CARRIER_FREQUENCY, GNB_ARRAY, N_PRB, NUMEROLOGY, SLOT_DURATION,
                         VEHICLE_ARRAY)
from ..frame import FramePlan, build_frame_plan
from ..ofdm import OfdmConfig, reflection_coefficient
from ..scenario import ScenarioConfig, comm_path_gain

# gNB processing between RACH reception and the random-access response.
RAR_PROCESSING_SLOTS = 2
# SSS occupies 127 subcarriers of each SSB.
SSS_LENGTH = 127
# Slots between the end of the radar window and the directed SSB.
RADAR_PROCESSING_SLOTS = 1
# Burst of the 64-beam IA sweep: first 5 ms of each 20 ms period.
IA_BURST_MS = 5.0
IA_PERIOD_MS = 20.0


@dataclass(frozen=True)
class LinkSetup:
    """Arrays, numerology and processing sizes of one simulated link."""

    tx_geom: ArrayGeometry = ArrayGeometry(*GNB_ARRAY)
    rx_geom: ArrayGeometry = ArrayGeometry(*VEHICLE_ARRAY)
    carrier_frequency: float = CARRIER_FREQUENCY
    mu: int = NUMEROLOGY
    n_prb: int = N_PRB
    radar_subcarriers: int = 256
    ia_subcarriers: int = 64
    ia_window_slots: int = 10
    bits_per_symbol: int = 4
    ber_symbols_per_slot: int = 64
    pmi_oversample: int = 4
    vehicle_oversample: int = 4
    measurement_mode: str = "model"
    tx_power: float = 1.0

    def __post_init__(self):
        if self.measurement_mode not in ("model", "radar"):
            raise ValueError(f"unknown measurement mode {self.measurement_mode!r}")
        if self.radar_subcarriers < 8 or self.ia_subcarriers < 8:
            raise ValueError("radar subband too small")

    @property
    def slot_duration(self) -> float:
        return 1e-3 / 2**self.mu

    def plan(self, scheme: str) -> FramePlan:
        return build_frame_plan(scheme, self.mu, n_prb=self.n_prb)

    def radar_config(self, m_subcarriers: int, l_symbols: int) -> OfdmConfig:
        return OfdmConfig.from_numerology(self.mu, m_subcarriers, l_symbols,
                                          carrier_frequency=self.carrier_frequency,
                                          tx_power=self.tx_power)

    @cached_property
    def ia_codebook(self):
        """64-beam 8 x 8 DFT sweep: ``(beams, az, el)``."""
        return dft_codebook(self.tx_geom)

    @cached_property
    def pmi_codebook(self):
        return dft_codebook(self.tx_geom, self.pmi_oversample, self.pmi_oversample)

    @cached_property
    def vehicle_codebook(self):
        return dft_codebook(self.rx_geom, self.vehicle_oversample, self.vehicle_oversample)

    def ssb_subset(self, elevation: float) -> np.ndarray:
        """Indices of the 8 IA beams on the elevation ring nearest ``elevation``."""
        _, _, el = self.ia_codebook
        rings = np.unique(np.round(el, 12))
        ring = rings[np.argmin(np.abs(rings - elevation))]
        return np.nonzero(np.isclose(el, ring))[0]


def start_range(cfg: ScenarioConfig) -> float:
    return float(np.linalg.norm(np.subtract(cfg.vehicle_start, cfg.gnb_position)))


def height_difference(cfg: ScenarioConfig) -> float:
    return float(cfg.gnb_position[2] - cfg.vehicle_start[2])


def comm_noise_var(reference_range: float, snr_db: float, link: LinkSetup) -> float:
    """
    Communication noise variance making the beam-aligned LoS SNR at
    ``reference_range`` (the scenario's start pose) equal to ``snr_db``.
    """
    alpha = comm_path_gain(reference_range, link.carrier_frequency)
    aligned = link.tx_geom.size * link.rx_geom.size * link.tx_power * abs(alpha) ** 2
    return float(aligned / 10 ** (snr_db / 10))


def radar_noise_var(reference_range: float, snr_db: float, link: LinkSetup, m_subcarriers: int,
                    l_symbols: int) -> float:
    """
    Radar noise variance making the per-antenna delay-Doppler peak SNR of the
    vehicle echo at ``reference_range`` equal to ``snr_db`` under single-element
    probing (which has unit end-to-end amplitude gain on a square array pair).
    """
    beta = reflection_coefficient(reference_range)
    peak = link.tx_power * beta**2 * m_subcarriers * l_symbols
    return float(peak / 10 ** (snr_db / 10))


def next_uplink_slot(plan: FramePlan, slot: int) -> int:
    """First uplink slot at or after ``slot``."""
    s = int(slot)
    while plan.slot_type(s) != "U":
        s += 1
    return s


def next_downlink_slot(plan: FramePlan, slot: int) -> int:
    """First slot at or after ``slot`` with downlink symbols."""
    s = int(slot)
    while plan.slot_type(s) == "U":
        s += 1
    return s


def rar_slot(plan: FramePlan, ready_slot: int) -> int:
    """
    Slot boundary at which the random-access response is complete, for a
    vehicle ready to send its preamble at ``ready_slot``.
    """
    rach = next_uplink_slot(plan, ready_slot)
    return rach + 1 + RAR_PROCESSING_SLOTS


def elevation_from_range(distance, drop: float):
    """Depression angle of a target ``drop`` metres below the array."""
    d = np.asarray(distance, dtype=float)
    return -np.arcsin(np.clip(drop / d, -1.0, 1.0))


def sss_rsrp_samples(h: np.ndarray, noise_var: float, rng: np.random.Generator) -> np.ndarray:
    """Linear SS-RSRP of each beam over ``SSS_LENGTH`` BPSK resource elements."""
    h = np.asarray(h, dtype=complex)
    seq = 1.0 - 2.0 * rng.integers(0, 2, SSS_LENGTH)
    noise = np.sqrt(noise_var / 2) * (rng.standard_normal((h.size, SSS_LENGTH))
                                      + 1j * rng.standard_normal((h.size, SSS_LENGTH)))
    y = h[:, None] * seq[None] + noise
    return np.mean(np.abs(y) ** 2, axis=1)


def slot_time(slot: int, slot_duration: float = SLOT_DURATION) -> float:
    return slot * slot_duration


def seed_sequence(seed) -> np.random.SeedSequence:
    """Accept an int, ``None`` or an existing SeedSequence."""
    if isinstance(seed, np.random.SeedSequence):
        return seed
    return np.random.SeedSequence(seed)
