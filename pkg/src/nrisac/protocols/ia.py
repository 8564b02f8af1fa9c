"""
Initial access.

Conventional: the gNB sweeps 64 SSB beams during the first 5 ms of every
20 ms period; the vehicle, listening on one element, keeps the beam of
highest SS-RSRP and answers on the next uplink slot after the burst.

ISAC: the gNB probes on a single element and accumulates echoes over a
10-slot window. If the array-level detector fires it estimates the
direction by 2D MUSIC on the clutter-free channel and sends a single
directed SSB. If no SSB reaches the vehicle within 20 ms of its arrival, the
vehicle falls back to the conventional procedure.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from ..array import AnglePair, omni_beamformer, steering_matrix
from ..constants import P_FA, RECOVERY_MARGIN_DB
from ..ofdm import extract_channel, post_division_noise_var, random_grid, synthesize_echo
from ..radar import (declare_presence, default_angle_grids, delay_doppler_map, detect_presence,
                     estimate_doa_2d, remove_static_clutter)
from ..scenario import ScenarioConfig, generate_scenario
from .common import (IA_BURST_MS, IA_PERIOD_MS, RADAR_PROCESSING_SLOTS, LinkSetup, comm_noise_var,
                     next_downlink_slot, radar_noise_var, rar_slot, sss_rsrp_samples, start_range)

FALLBACK_TIMEOUT_MS = 20.0


@dataclass(frozen=True)
class IaOutcome:
    """Result of one access attempt; ``latency`` is in ms from arrival to RAR."""

    latency: float
    chosen_angle: AnglePair
    angle_error: float
    used_fallback: bool
    detected_by_radar: bool
    true_angle: AnglePair
    chosen_beam: int | None = None

    def to_dict(self) -> dict:
        return {
            "latency_ms": self.latency,
            "chosen_azimuth": self.chosen_angle.azimuth,
            "chosen_elevation": self.chosen_angle.elevation,
            "true_azimuth": self.true_angle.azimuth,
            "true_elevation": self.true_angle.elevation,
            "angle_error": self.angle_error,
            "used_fallback": self.used_fallback,
            "detected_by_radar": self.detected_by_radar,
            "chosen_beam": self.chosen_beam,
        }


def _downlink_gain_vector(world, beams, combiner, link: LinkSetup) -> np.ndarray:
    """Scalar channel at slot 0 for each row of ``beams`` and a fixed combiner."""
    gains, dep, arr = world.comm_path_arrays(link.carrier_frequency)
    zeta = math.sqrt(link.tx_geom.size * link.rx_geom.size)
    h = np.zeros(len(beams), dtype=complex)
    for k in range(gains.shape[0]):
        a = steering_matrix(dep[0][k, 0], dep[1][k, 0], link.tx_geom)
        u = steering_matrix(arr[0][k, 0], arr[1][k, 0], link.rx_geom)
        h += gains[k, 0] * (combiner @ u) * (beams @ a)
    return zeta * math.sqrt(link.tx_power) * h


def _conventional_sweep(world, noise_var: float, rng: np.random.Generator, link: LinkSetup):
    beams, az, el = link.ia_codebook
    h = _downlink_gain_vector(world, beams, omni_beamformer(link.rx_geom), link)
    rsrp = sss_rsrp_samples(h, noise_var, rng)
    best = int(np.argmax(rsrp))
    return best, AnglePair(float(az[best]), float(el[best])), rsrp[best]


def conventional_access(world, noise_var: float, arrival_ms: float, rng: np.random.Generator,
                        link: LinkSetup):
    """
    One full 64-beam sweep starting at the first period boundary at or after
    arrival. Returns ``(latency_ms, beam index, angle)``.
    """
    plan = link.plan("conventional")
    slot_ms = link.slot_duration * 1e3
    period_slots = int(round(IA_PERIOD_MS / slot_ms))
    burst_slots = int(round(IA_BURST_MS / slot_ms))
    start = int(math.ceil(arrival_ms / slot_ms - 1e-9))
    burst_start = -(-start // period_slots) * period_slots
    ready = burst_start + burst_slots - 1
    while plan.slot_type(ready) == "U":
        ready -= 1
    done = rar_slot(plan, ready + 1)
    best, angle, _ = _conventional_sweep(world, noise_var, rng, link)
    return done * slot_ms - arrival_ms, best, angle


def _radar_direction(world, snr_db: float, reference_range: float, rng: np.random.Generator,
                     link: LinkSetup, angle_step_deg: float):
    """Omni probing window; returns the DOA estimate or ``None`` on a miss."""
    l_sym = 14 * link.ia_window_slots
    cfg = link.radar_config(link.ia_subcarriers, l_sym)
    noise_var = radar_noise_var(reference_range, snr_db, link, cfg.m_subcarriers, l_sym)
    grid = random_grid(cfg, 2, rng)
    echo = synthesize_echo(grid, world.radar_paths(0, link.carrier_frequency),
                           omni_beamformer(link.tx_geom), link.tx_geom, cfg, noise_var, seed=rng)
    channel = extract_channel(echo, grid)
    dd = delay_doppler_map(channel)
    verdict = detect_presence(dd, post_division_noise_var(noise_var, grid), P_FA)
    n_cells = cfg.m_subcarriers * (l_sym - 1)
    if not declare_presence(verdict, link.tx_geom.size, n_cells, P_FA):
        return None
    az_grid, el_grid = default_angle_grids(angle_step_deg)
    return estimate_doa_2d(remove_static_clutter(channel), 1, az_grid, el_grid, link.tx_geom)


def run_initial_access(scheme: str, scenario: ScenarioConfig, snr_db: float, seed,
                       link: LinkSetup | None = None, position_spread: float = 20.0,
                       force_miss: bool = False, angle_step_deg: float = 1.0) -> IaOutcome:
    """
    Simulate one access attempt.

    The vehicle appears at a uniform time in [0, 20) ms at a uniform offset
    of up to ``position_spread`` metres along the road from the configured
    start. ``snr_db`` is the beam-aligned LoS SNR at the configured start for
    the downlink, and the per-antenna delay-Doppler peak SNR there for the
    radar. ``force_miss`` suppresses the radar detection.
    """
    if scheme not in ("conventional", "isac"):
        raise ValueError(f"unknown scheme {scheme!r}")
    link = link or LinkSetup()
    rng = np.random.default_rng(seed)
    arrival_ms = float(rng.uniform(0.0, IA_PERIOD_MS))
    offset = float(rng.uniform(-position_spread, position_spread))
    road = np.asarray(scenario.direction, dtype=float)
    road /= np.linalg.norm(road)
    start = tuple(np.asarray(scenario.vehicle_start) + offset * road)
    world = generate_scenario(replace(scenario.with_slots(1), vehicle_start=start, blockage=None), rng)
    ref = start_range(scenario)
    truth = world.angles(0)
    noise_c = comm_noise_var(ref, snr_db, link)

    if scheme == "isac":
        est = None if force_miss else _radar_direction(world, snr_db, ref, rng, link, angle_step_deg)
        if est is not None and _directed_ssb_received(world, est, noise_c, rng, link):
            plan = link.plan("isac")
            slot_ms = link.slot_duration * 1e3
            first = int(math.ceil(arrival_ms / slot_ms - 1e-9))
            ssb = next_downlink_slot(plan, first + link.ia_window_slots + RADAR_PROCESSING_SLOTS)
            latency = rar_slot(plan, ssb + 1) * slot_ms - arrival_ms
            return IaOutcome(latency, est, abs(est.azimuth - truth.azimuth), False, True, truth)
        later = arrival_ms + FALLBACK_TIMEOUT_MS
        lat, beam, angle = conventional_access(world, noise_c, later, rng, link)
        return IaOutcome(FALLBACK_TIMEOUT_MS + lat, angle, abs(angle.azimuth - truth.azimuth), True,
                         est is not None, truth, beam)

    lat, beam, angle = conventional_access(world, noise_c, arrival_ms, rng, link)
    return IaOutcome(lat, angle, abs(angle.azimuth - truth.azimuth), False, False, truth, beam)


def _directed_ssb_received(world, direction: AnglePair, noise_var: float, rng, link: LinkSetup) -> bool:
    """The directed SSB is decodable when its SS-RSRP clears noise + 6 dB."""
    beam = np.conj(steering_matrix(direction.azimuth, direction.elevation, link.tx_geom))[None]
    h = _downlink_gain_vector(world, beam, omni_beamformer(link.rx_geom), link)
    rsrp = sss_rsrp_samples(h, noise_var, rng)[0]
    return bool(rsrp >= noise_var * 10 ** (RECOVERY_MARGIN_DB / 10))


def ia_mse_decomposition(outcomes: list[IaOutcome]) -> dict:
    """
    Split the ISAC access MSE into radar-served and fallback parts.

    ``mse == p_detect * mse_radar + (1 - p_detect) * mse_comm`` holds exactly.
    """
    if not outcomes:
        raise ValueError("no outcomes")
    err = np.array([o.angle_error for o in outcomes])
    radar = np.array([not o.used_fallback for o in outcomes])
    p = float(radar.mean())
    mse_r = float(np.mean(err[radar] ** 2)) if radar.any() else 0.0
    mse_c = float(np.mean(err[~radar] ** 2)) if (~radar).any() else 0.0
    return {"p_detect": p, "mse": float(np.mean(err**2)), "mse_radar": mse_r, "mse_comm": mse_c,
            "rmse": float(np.sqrt(np.mean(err**2)))}
