"""
Beam failure detection and recovery.

Detection
    Conventional: each CSI-RS occasion whose L1-RSRP falls below the noise
    floor plus 3 dB is a beam-failure instance; six instances inside the
    7.5 ms timer declare failure, reported at the end of that CSI-RS period.
    ISAC: a slot is a hit when the measured range and speed both jump past
    their thresholds relative to the one-step prediction (hit slots are not
    used to update the tracker); 12 hits in a 20-slot window declare failure.

Recovery
    ``beam_training``: wait for the next 64-beam sweep, take the strongest
    beam if it clears noise + 6 dB, then RACH/RAR; otherwise radio link
    failure. ``sub6_fallback``: switch to an omnidirectional 5 GHz link at
    numerology 1. ``nlos_beamform``: find the static echoes by 2D MUSIC,
    beamform both ends through the strongest one.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from ..array import AnglePair, omni_beamformer, steering_matrix
from ..constants import (BFI_MARGIN_DB, RECOVERY_MARGIN_DB, SUB6_CARRIER_FREQUENCY, SUB6_NUMEROLOGY)
from ..frame import build_frame_plan, plan_throughput
from ..ofdm import slot_bit_errors, tapered_static_channel
from ..radar import bartlett_power, default_angle_grids, find_doa_peaks
from ..scenario import ScenarioConfig, WorldTrace, direction_angles, effective_channel_trace, generate_scenario
from .common import (seed_sequence, IA_BURST_MS, IA_PERIOD_MS, LinkSetup, radar_noise_var, rar_slot,
                     sss_rsrp_samples, start_range)
from .connected import ConnectedRun, _vehicle_channels, run_connected
from .monitors import BfiCounter, KinematicMonitor, SlotObservation

STRATEGIES = ("beam_training", "sub6_fallback", "nlos_beamform")
# Extra loss of the blocked line of sight at sub-6 GHz (diffraction around the blocker).
SUB6_BLOCKAGE_LOSS_DB = 6.0


@dataclass(frozen=True)
class BfrEvent:
    """
    Failure declaration and recovery bookkeeping.

    ``latency_ms`` is the detection latency; ``false_alarm`` marks a failure
    declared without a blockage.
    """

    failure_slot: int
    detected_slot: int
    recovery_strategy: str
    recovered_slot: int | None = None
    latency_ms: float = float("nan")
    false_alarm: bool = False
    radio_link_failure: bool = False

    def __post_init__(self):
        if self.detected_slot < self.failure_slot:
            raise ValueError("detection cannot precede the failure")
        if self.recovery_strategy not in STRATEGIES:
            raise ValueError(f"unknown recovery strategy {self.recovery_strategy!r}")

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


def default_strategy(scheme: str) -> str:
    return "beam_training" if scheme == "conventional" else "sub6_fallback"


def bfr_detect(scheme: str, slot_stream, failure_slot: int | None = None, *, noise_floor: float | None = None,
               csirs_period: int = 5, slot_duration: float = 0.125e-3, strategy: str | None = None,
               counter: BfiCounter | None = None, monitor: KinematicMonitor | None = None) -> BfrEvent | None:
    """
    Run the scheme's failure monitor over a stream of observations.

    Parameters
    ----------
    scheme : {"conventional", "isac"}
    slot_stream : iterable of SlotObservation
        RSRP observations (conventional) or jump observations (ISAC).
    failure_slot : int, optional
        Slot at which the link actually failed; ``None`` when no failure
        occurred, in which case any declaration is a false alarm.
    noise_floor : float
        Linear noise power (conventional only).

    Returns
    -------
    BfrEvent or None
        The first declaration, or ``None`` if the monitor never fires.
    """
    strategy = strategy or default_strategy(scheme)
    if scheme == "conventional":
        if noise_floor is None or noise_floor <= 0:
            raise ValueError("conventional detection needs a positive noise floor")
        counter = counter or BfiCounter()
        threshold = noise_floor * 10 ** (BFI_MARGIN_DB / 10)
        for obs in slot_stream:
            if obs.rsrp is None:
                continue
            if counter.step(obs.slot, obs.rsrp < threshold):
                # The indication reaches the MAC at the end of the CSI-RS period.
                detected = obs.slot + csirs_period - 1
                return _event(failure_slot, detected, strategy, slot_duration, csirs_period)
        return None
    if scheme == "isac":
        monitor = monitor or KinematicMonitor()
        for obs in slot_stream:
            if obs.range_jump is None:
                continue
            if monitor.update(monitor.is_hit(obs.range_jump, obs.speed_jump)):
                return _event(failure_slot, obs.slot, strategy, slot_duration, None)
        return None
    raise ValueError(f"unknown scheme {scheme!r}")


def _event(failure_slot, detected, strategy, slot_duration, csirs_period):
    if failure_slot is None or detected < failure_slot:
        return BfrEvent(detected, detected, strategy, false_alarm=True, latency_ms=0.0)
    start = failure_slot
    if csirs_period is not None:
        # Failures are attributed to the CSI-RS period in which they begin.
        start = failure_slot - failure_slot % csirs_period
    latency = (detected + 1 - start) * slot_duration * 1e3
    return BfrEvent(failure_slot, detected, strategy, latency_ms=latency)


# ---------------------------------------------------------------- recovery

@dataclass
class RecoveryOutcome:
    event: BfrEvent
    window: tuple
    ber: float
    throughput_mbps: float
    blocked_ber: float
    slot_ber: np.ndarray
    slot_throughput: np.ndarray
    details: dict


def _beam_training(world, run, event, noise_var, link, rng, end):
    plan = link.plan("conventional")
    slot_ms = link.slot_duration * 1e3
    period = int(round(IA_PERIOD_MS / slot_ms))
    burst = int(round(IA_BURST_MS / slot_ms))
    burst_start = -(-(event.detected_slot + 1) // period) * period
    ready = burst_start + burst - 1
    while plan.slot_type(ready) == "U":
        ready -= 1
    if ready >= world.slot_count:
        return None, None, None, {"reason": "sweep after end of trace"}
    beams, az, el = link.ia_codebook
    gains, dep, arr = world.comm_path_arrays(link.carrier_frequency)
    n = burst_start
    omni = omni_beamformer(link.rx_geom)
    h = effective_channel_trace(gains[:, [n] * len(beams)], (dep[0][:, [n] * len(beams)], dep[1][:, [n] * len(beams)]),
                                (arr[0][:, [n] * len(beams)], arr[1][:, [n] * len(beams)]), beams,
                                np.tile(omni, (len(beams), 1)), link.tx_geom, link.rx_geom, link.tx_power)
    rsrp = sss_rsrp_samples(h, noise_var, rng)
    best = int(np.argmax(rsrp))
    info = {"beam": best, "rsrp_over_noise_db": float(10 * np.log10(rsrp[best] / noise_var))}
    if rsrp[best] < noise_var * 10 ** (RECOVERY_MARGIN_DB / 10):
        return None, None, None, info
    recovered = rar_slot(plan, ready + 1)
    w_rx, _, _ = link.vehicle_codebook
    g = _vehicle_channels(world, min(recovered, world.slot_count - 1), beams[best], link)
    g = g + np.sqrt(noise_var / link.n_prb / 2) * (rng.standard_normal(g.shape) + 1j * rng.standard_normal(g.shape))
    rx = w_rx[int(np.argmax(np.abs(w_rx @ g)))]
    n_post = max(0, end - recovered)
    return recovered, np.tile(beams[best], (n_post, 1)), np.tile(rx, (n_post, 1)), info


def _static_reflector(world: WorldTrace, n: int, snr_db: float, link: LinkSetup, rng,
                      n_bins: int = 16):
    """
    Locate the strongest static reflector from an omni probing window ending
    at slot ``n``.

    The window is reduced to its zero-Doppler part with a Blackman taper
    (whose sidelobes keep moving echoes out), taken to the delay domain over
    the full band, and the ``n_bins`` strongest delay bins feed 2D MUSIC.
    The reflector is the MUSIC peak of largest Bartlett power; its range is
    the peak of the delay profile beamformed towards it.
    """
    l_sym = 14 * link.ia_window_slots
    cfg = link.radar_config(12 * link.n_prb, l_sym)
    # Per-RE noise follows the radar SNR definition on the reference subband.
    noise = radar_noise_var(start_range(world.config), snr_db, link, link.radar_subcarriers, l_sym)
    taper = np.blackman(l_sym)
    taper /= taper.sum()
    static = tapered_static_channel(world.radar_paths(n, link.carrier_frequency),
                                    omni_beamformer(link.tx_geom), link.tx_geom, cfg, taper, noise, rng)
    delay = np.fft.ifft(static, axis=1, norm="ortho")
    strongest = np.sort(np.argsort(np.sum(np.abs(delay) ** 2, axis=0))[::-1][:n_bins])
    gated = delay[:, strongest, None]
    n_static = max(1, len(world.scatterer_positions))
    az_grid, el_grid = default_angle_grids(1.0)
    peaks = find_doa_peaks(gated, n_static, az_grid, el_grid, link.tx_geom, n_peaks=n_static)
    powers = [bartlett_power(gated, p, link.tx_geom) for p in peaks]
    doa = peaks[int(np.argmax(powers))]
    b = steering_matrix(doa.azimuth, doa.elevation, link.tx_geom)
    profile = np.abs(b.conj() @ delay) ** 2
    half = cfg.m_subcarriers // 2
    m_hat = float(np.argmax(profile[:half]))
    i = int(m_hat)
    # Parabolic interpolation around the peak bin.
    if 0 < i < half - 1:
        y0, y1, y2 = profile[i - 1: i + 2]
        denom = y0 - 2 * y1 + y2
        if denom:
            m_hat = i + 0.5 * (y0 - y2) / denom
    distance = m_hat * cfg.range_bin
    direction = np.array([math.sin(doa.azimuth) * math.cos(doa.elevation),
                          math.cos(doa.azimuth) * math.cos(doa.elevation), math.sin(doa.elevation)])
    position = np.asarray(world.config.gnb_position) + distance * direction
    return doa, position, powers


def _nlos_beamform(world, run, event, snr_db, link, rng, end):
    recovered = event.detected_slot + 1
    doa, scatterer, powers = _static_reflector(world, event.detected_slot, snr_db, link, rng)
    slots = np.arange(recovered, end)
    drop = world.config.gnb_position[2] - world.config.vehicle_start[2]
    d = np.maximum(run.est_d[slots], drop + 1e-6)
    rho = np.sqrt(d**2 - drop**2)
    vehicle = np.stack([rho * np.sin(run.est_theta[slots]), rho * np.cos(run.est_theta[slots]),
                        np.full(slots.size, world.config.gnb_position[2] - drop)], axis=1)
    arr_az, arr_el = direction_angles(vehicle - scatterer)
    tx = np.tile(np.conj(steering_matrix(doa.azimuth, doa.elevation, link.tx_geom)), (slots.size, 1))
    rx = np.conj(steering_matrix(arr_az, arr_el, link.rx_geom))
    info = {"doa_azimuth": doa.azimuth, "doa_elevation": doa.elevation,
            "scatterer_estimate": [float(v) for v in scatterer]}
    return recovered, tx, rx, info


def bfr_recover(strategy: str, world: WorldTrace, run: ConnectedRun, event: BfrEvent, snr_db: float,
                link: LinkSetup, seed, end_slot: int | None = None) -> RecoveryOutcome:
    """
    Execute a recovery strategy after ``event`` and measure the link from the
    recovered slot to ``end_slot`` (default: end of the blockage or trace).
    """
    if strategy not in STRATEGIES:
        raise ValueError(f"unknown recovery strategy {strategy!r}")
    rng = np.random.default_rng(seed)
    noise_var = run.state.comm_noise
    blk = world.config.blockage
    if end_slot is None:
        end_slot = blk.start_slot + blk.duration_slots if blk is not None else world.slot_count
    end = min(end_slot, len(run.est_theta))

    fc, mu, noise_post, los_loss = link.carrier_frequency, link.mu, noise_var, None
    tx_geom, rx_geom = link.tx_geom, link.rx_geom
    if strategy == "beam_training":
        recovered, tx, rx, info = _beam_training(world, run, event, noise_var, link, rng, end)
    elif strategy == "nlos_beamform":
        recovered, tx, rx, info = _nlos_beamform(world, run, event, snr_db, link, rng, end)
    else:
        recovered = event.detected_slot + 1
        n_post = max(0, end - recovered)
        tx = np.tile(omni_beamformer(tx_geom), (n_post, 1))
        rx = np.tile(omni_beamformer(rx_geom), (n_post, 1))
        fc, mu, los_loss = SUB6_CARRIER_FREQUENCY, SUB6_NUMEROLOGY, SUB6_BLOCKAGE_LOSS_DB
        # Noise scales with the occupied bandwidth, i.e. with subcarrier spacing.
        noise_post = noise_var * 2 ** (SUB6_NUMEROLOGY - link.mu)
        info = {"carrier_frequency": fc, "numerology": mu}

    blocked_window = slice(event.detected_slot + 1, end)
    blocked_ber = float(np.sum(run.bit_errors[blocked_window]) /
                        max(1, run.bits_per_slot * (end - event.detected_slot - 1)))
    if recovered is None or recovered >= end:
        ev = replace(event, radio_link_failure=recovered is None,
                     recovered_slot=None if recovered is None else recovered)
        return RecoveryOutcome(ev, (end, end), float("nan"), 0.0, blocked_ber, np.array([]), np.array([]), info)

    gains, dep, arr = world.comm_path_arrays(fc, los_loss)
    sl = slice(recovered, end)
    h = effective_channel_trace(gains[:, sl], (dep[0][:, sl], dep[1][:, sl]), (arr[0][:, sl], arr[1][:, sl]),
                                tx, rx, tx_geom, rx_geom, link.tx_power)
    errors = slot_bit_errors(h, noise_post, link.bits_per_symbol, link.ber_symbols_per_slot, rng)
    bits = link.bits_per_symbol * link.ber_symbols_per_slot
    slot_ber = errors / bits
    scheme = "conventional" if strategy == "beam_training" else "isac"
    plan = build_frame_plan(scheme, mu, n_prb=link.n_prb)
    tp = plan_throughput(plan, slot_ber, bits_per_symbol=link.bits_per_symbol)
    info["post_snr_db"] = float(10 * np.log10(np.mean(np.abs(h) ** 2) / noise_post))
    ev = replace(event, recovered_slot=int(recovered))
    return RecoveryOutcome(ev, (recovered, end), float(errors.sum() / (bits * errors.size)), float(tp.mean()),
                           blocked_ber, slot_ber, tp, info)


# --------------------------------------------------------------------- run

@dataclass
class BfrRun:
    world: WorldTrace
    connected: ConnectedRun
    event: BfrEvent | None
    recovery: RecoveryOutcome | None
    false_alarm: BfrEvent | None = None


def run_bfr(scheme: str, scenario: ScenarioConfig, snr_db: float, seed, strategy: str | None = None,
            link: LinkSetup | None = None, recover: bool = True) -> BfrRun:
    """
    Connected-mode run with the failure monitors on, followed by recovery.

    The run stops at the end of the blockage (or of the trace when the
    scenario has none).
    """
    link = link or LinkSetup()
    strategy = strategy or default_strategy(scheme)
    if scheme == "conventional" and strategy != "beam_training":
        raise ValueError("the conventional scheme recovers by beam training only")
    if scheme == "isac" and strategy == "beam_training":
        raise ValueError("the ISAC scheme recovers by sub-6 fallback or NLoS beamforming")
    ss = seed_sequence(seed)
    world_seed, run_seed, rec_seed = ss.spawn(3)
    world = generate_scenario(scenario, world_seed)
    blk = scenario.blockage
    end = blk.start_slot + blk.duration_slots if blk is not None else scenario.slot_count
    end = min(end, scenario.slot_count)
    run = run_connected(scheme, world, snr_db, run_seed, link, n_slots=end, monitor=True)
    failure = blk.start_slot if blk is not None else None
    detect = dict(noise_floor=run.state.comm_noise, csirs_period=run.state.plan.csirs_period_slots or 5,
                  slot_duration=scenario.slot_duration, strategy=strategy)
    obs = run.state.observations
    onset = failure if failure is not None else len(run.est_theta)
    # A declaration before the onset is a false alarm; the monitor is then
    # re-armed at the onset so the true failure is still timed.
    false_alarm = bfr_detect(scheme, [o for o in obs if o.slot < onset], None, **detect)
    event = None
    if failure is not None:
        event = bfr_detect(scheme, [o for o in obs if o.slot >= onset], failure, **detect)
    recovery = None
    if recover and event is not None:
        recovery = bfr_recover(strategy, world, run, event, snr_db, link, rec_seed, end)
        event = recovery.event
    return BfrRun(world, run, event, recovery, false_alarm)
