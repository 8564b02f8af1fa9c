"""
Connected-mode beam tracking.

Conventional: every CSI-RS occasion the vehicle measures the 64-port channel
through its current combiner, picks the PMI codeword of largest gain from the
oversampled DFT codebook, then refines its own combiner against that
codeword. The report rides the next uplink slot and takes effect at the
following occasion. Once per SSB period the 8-beam SSB subset is measured
and can replace the serving beam if it is stronger by 3 dB.

ISAC: no CSI-RS. The gNB beamforms towards the EKF one-step prediction and
the vehicle combines towards the two-step prediction; each slot's echo
yields a state measurement that updates the filter.

:func:`connected_step` advances one slot; :func:`run_connected` loops it
and evaluates the link (BER, throughput) in one vectorized pass.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ..array import omni_beamformer, steering_matrix
from ..constants import BFI_MARGIN_DB
from ..errors import ConditioningError, DegenerateGeometryError, NoTargetError
from ..frame import FramePlan, plan_throughput
from ..ofdm import (extract_channel, random_grid, reflection_coefficient, slot_bit_errors,
                    synthesize_echo)
from ..radar import (coarse_peak_estimate, delay_doppler_map, golden_section_search,
                     music_pseudospectrum, noise_subspace, refine_target, sample_covariance,
                     spatial_snapshots)
from ..scenario import WorldTrace, effective_channel_trace
from ..tracker import NoiseSpec, TrackBelief, TrackState, ekf_step, init_track
from .common import (seed_sequence, LinkSetup, comm_noise_var, elevation_from_range, height_difference,
                     radar_noise_var, sss_rsrp_samples, start_range)
from .monitors import BfiCounter, KinematicMonitor, SlotObservation

SSB_SWITCH_MARGIN_DB = 3.0
# Below this |sin(azimuth)| the closing speed says little about the road speed.
MIN_SPEED_OBSERVABILITY = 0.2


@dataclass
class SlotRecord:
    slot: int
    est_theta: float
    est_d: float
    est_v: float
    tx_angles: tuple | None = None
    rx_angles: tuple | None = None
    tx_index: int | None = None
    rx_index: int | None = None
    events: list = field(default_factory=list)


@dataclass
class ConnectedState:
    """Mutable per-run state of either scheme."""

    scheme: str
    link: LinkSetup
    plan: FramePlan
    comm_noise: float
    radar_noise: float
    drop: float
    rng: np.random.Generator
    noise: NoiseSpec | None = None
    belief: TrackBelief | None = None
    one_ahead: TrackState | None = None
    two_ahead: TrackState | None = None
    kinematic: KinematicMonitor | None = None
    serving_tx: int | None = None
    serving_rx: int | None = None
    pending: tuple | None = None
    bfi: BfiCounter | None = None
    last_rsrp: float = float("nan")
    failed_slot: int | None = None
    gated: int = 0
    observations: list = field(default_factory=list)


def new_state(scheme: str, world: WorldTrace, snr_db: float, seed, link: LinkSetup | None = None,
              monitor: bool = False) -> ConnectedState:
    """Fresh state for a run; ``monitor`` enables the beam-failure monitors."""
    if scheme not in ("conventional", "isac"):
        raise ValueError(f"unknown scheme {scheme!r}")
    link = link or LinkSetup()
    ref = start_range(world.config)
    state = ConnectedState(
        scheme, link, link.plan(scheme), comm_noise_var(ref, snr_db, link),
        radar_noise_var(ref, snr_db, link, link.radar_subcarriers, 14),
        height_difference(world.config), np.random.default_rng(seed))
    if scheme == "isac":
        state.noise = NoiseSpec.default(beta_scale=float(reflection_coefficient(ref)))
        if monitor:
            state.kinematic = KinematicMonitor()
    elif monitor:
        state.bfi = BfiCounter()
    return state


# ------------------------------------------------------------------ ISAC

def model_measurement(world: WorldTrace, n: int, noise: NoiseSpec, rng) -> TrackState:
    """
    Direct state measurement: truth plus Gaussian errors of the configured
    measurement variances. While the LoS is blocked the strongest moving
    echo belongs to the blocker, so its state is measured instead.
    """
    if world.blocked[n]:
        d, az, _, v = world.blocker_state(n)
        beta = float(reflection_coefficient(d, 10 ** (world.config.blockage.rcs_db / 10)))
    else:
        az, d, v = float(world.azimuth[n]), float(world.range[n]), float(world.speed[n])
        beta = float(reflection_coefficient(d))
    err = rng.standard_normal(4) * np.sqrt(noise.measurement)
    return TrackState(az + err[0], d + err[1], v + err[2], beta + err[3])


def radar_measurement(world: WorldTrace, n: int, prior: TrackState, state: ConnectedState) -> TrackState:
    """
    State measurement from one slot of echo on the radar subband.

    The echo is receive-beamformed towards the prior direction, the
    delay-Doppler peak is searched within three range bins of the prior and
    super-resolved, and the azimuth is refined by spatial MUSIC.
    """
    link, rng = state.link, state.rng
    cfg = link.radar_config(link.radar_subcarriers, 14)
    el_prior = float(elevation_from_range(prior.range, state.drop))
    a_tx = steering_matrix(prior.azimuth, el_prior, link.tx_geom)
    f = np.conj(a_tx)
    grid = random_grid(cfg, 2, rng)
    echo = synthesize_echo(grid, world.radar_paths(n, link.carrier_frequency), f, link.tx_geom, cfg,
                           state.radar_noise, seed=rng)
    ch = extract_channel(echo, grid)
    beamformed = np.tensordot(a_tx.conj(), ch, axes=1)[None]
    dd = delay_doppler_map(beamformed)
    m_pred = prior.range / cfg.range_bin
    mask = np.zeros(dd.shape[1:], dtype=bool)
    mask[max(0, int(m_pred) - 3): int(m_pred) + 5, :] = True
    peak, _, _ = coarse_peak_estimate(dd, cfg, exclude_zero_doppler=False, mask=mask)
    target = refine_target(beamformed, peak, cfg, 1)
    d_hat = float(target.range)
    el_hat = float(elevation_from_range(d_hat, state.drop))

    un = noise_subspace(sample_covariance(spatial_snapshots(ch)), 1)
    az_hat = golden_section_search(
        lambda az: float(music_pseudospectrum(un, steering_matrix(az, el_hat, link.tx_geom))),
        prior.azimuth - 0.1, prior.azimuth + 0.1, 1e-5).x

    m = np.arange(cfg.m_subcarriers)
    l = np.arange(cfg.l_symbols)
    eta = np.exp(-2j * np.pi * cfg.subcarrier_spacing * m * target.delay)
    omega = np.exp(2j * np.pi * target.doppler * l * cfg.symbol_duration)
    alpha = np.einsum("m,imk,k->i", eta.conj(), ch, omega.conj()) / (cfg.m_subcarriers * cfg.l_symbols)
    b = steering_matrix(az_hat, el_hat, link.tx_geom)
    tx_gain = abs(steering_matrix(az_hat, el_hat, link.tx_geom) @ f)
    zeta = link.tx_geom.size
    beta_hat = abs(b.conj() @ alpha) / (zeta * math.sqrt(link.tx_power) * max(tx_gain, 1e-12))

    # Closing speed is the road speed projected on the line of sight.
    s = math.sin(az_hat) * math.cos(el_hat)
    v_hat = target.speed / s if abs(s) > MIN_SPEED_OBSERVABILITY else prior.speed
    return TrackState(float(az_hat), d_hat, float(v_hat), float(beta_hat))


def _measure(world, n, prior, state):
    if state.link.measurement_mode == "radar" and prior is not None:
        try:
            return radar_measurement(world, n, prior, state)
        except (NoTargetError, ValueError, np.linalg.LinAlgError):
            return None
    return model_measurement(world, n, state.noise, state.rng)


def _isac_step(n: int, world: WorldTrace, state: ConnectedState) -> SlotRecord:
    dt = world.config.slot_duration
    events = []
    if state.belief is None:
        z = model_measurement(world, n, state.noise, state.rng)
        state.belief = init_track(z.range, z.speed, z.azimuth, state.noise,
                                  rcs=z.refl_coeff * (2 * z.range) ** 2)
        state.one_ahead = state.two_ahead = state.belief.mean
        events.append(("track_init", {}))
    prior, combiner_state = state.one_ahead, state.two_ahead
    tx = (prior.azimuth, float(elevation_from_range(prior.range, state.drop)))
    rx = (combiner_state.azimuth, float(elevation_from_range(combiner_state.range, state.drop)))

    z = _measure(world, n, prior, state)
    if z is not None and state.kinematic is not None:
        jump_d, jump_v = z.range - prior.range, z.speed - prior.speed
        state.observations.append(SlotObservation(n, range_jump=jump_d, speed_jump=jump_v))
        hit = state.kinematic.is_hit(jump_d, jump_v)
        if state.kinematic.update(hit) and state.failed_slot is None:
            state.failed_slot = n
            events.append(("beam_failure", {"monitor": "kinematic"}))
        if hit:
            z = None
            state.gated += 1
    try:
        out = ekf_step(state.belief, z, state.noise, dt)
    except (DegenerateGeometryError, ConditioningError) as exc:
        events.append(("track_lost", {"reason": str(exc)}))
        state.belief = None
        est = state.one_ahead
    else:
        state.belief, state.one_ahead, state.two_ahead = out.posterior, out.one_ahead, out.two_ahead
        est = out.posterior.mean
    return SlotRecord(n, est.azimuth, est.range, est.speed, tx_angles=tx, rx_angles=rx, events=events)


# ---------------------------------------------------------- conventional

def _port_channels(world: WorldTrace, n: int, combiner: np.ndarray, link: LinkSetup) -> np.ndarray:
    """Per-port downlink channel ``h`` (so that beam ``f`` sees ``h @ f``) through ``combiner``."""
    gains, dep, arr = _slot_paths(world, n, link)
    zeta = math.sqrt(link.tx_geom.size * link.rx_geom.size)
    h = np.zeros(link.tx_geom.size, dtype=complex)
    for k in range(len(gains)):
        u = steering_matrix(arr[0][k], arr[1][k], link.rx_geom)
        a = steering_matrix(dep[0][k], dep[1][k], link.tx_geom)
        h += gains[k] * (combiner @ u) * a
    return zeta * math.sqrt(link.tx_power) * h


def _vehicle_channels(world: WorldTrace, n: int, beam: np.ndarray, link: LinkSetup) -> np.ndarray:
    """Per-element vehicle channel for a fixed gNB beam (combiner ``v`` sees ``g @ v``)."""
    gains, dep, arr = _slot_paths(world, n, link)
    zeta = math.sqrt(link.tx_geom.size * link.rx_geom.size)
    g = np.zeros(link.rx_geom.size, dtype=complex)
    for k in range(len(gains)):
        u = steering_matrix(arr[0][k], arr[1][k], link.rx_geom)
        a = steering_matrix(dep[0][k], dep[1][k], link.tx_geom)
        g += gains[k] * (a @ beam) * u
    return zeta * math.sqrt(link.tx_power) * g


def _slot_paths(world: WorldTrace, n: int, link: LinkSetup):
    gains, dep, arr = world.comm_path_arrays(link.carrier_frequency)
    return gains[:, n], (dep[0][:, n], dep[1][:, n]), (arr[0][:, n], arr[1][:, n])


def _csi_occasion(n: int, world: WorldTrace, state: ConnectedState, events: list, bootstrap: bool):
    link, rng = state.link, state.rng
    w_tx, _, _ = link.pmi_codebook
    w_rx, _, _ = link.vehicle_codebook
    # CSI-RS averages one RE per port and RB over the band.
    est_var = state.comm_noise / link.n_prb
    if not bootstrap and state.pending is not None:
        state.serving_tx, state.serving_rx = state.pending
        state.pending = None
    # Fresh links listen on one element, as during access.
    combiner = omni_beamformer(link.rx_geom) if bootstrap else w_rx[state.serving_rx]
    h_ports = _port_channels(world, n, combiner, link)
    noisy = h_ports + np.sqrt(est_var / 2) * (rng.standard_normal(h_ports.shape)
                                              + 1j * rng.standard_normal(h_ports.shape))
    pmi = int(np.argmax(np.abs(w_tx @ noisy)))
    g = _vehicle_channels(world, n, w_tx[pmi], link)
    g_noisy = g + np.sqrt(est_var / 2) * (rng.standard_normal(g.shape) + 1j * rng.standard_normal(g.shape))
    rx_new = int(np.argmax(np.abs(w_rx @ g_noisy)))

    if state.serving_tx is not None:
        h_serv = complex(h_ports @ w_tx[state.serving_tx])
        n_re = link.n_prb
        noise = np.sqrt(state.comm_noise / 2) * (rng.standard_normal(n_re) + 1j * rng.standard_normal(n_re))
        state.last_rsrp = float(np.mean(np.abs(h_serv + noise) ** 2))
        if state.bfi is not None:
            state.observations.append(SlotObservation(n, rsrp=state.last_rsrp))
            instance = state.last_rsrp < state.comm_noise * 10 ** (BFI_MARGIN_DB / 10)
            if state.bfi.step(n, instance) and state.failed_slot is None:
                state.failed_slot = n
                events.append(("beam_failure", {"monitor": "rsrp", "bfi_count": state.bfi.count}))
    if bootstrap:
        state.serving_tx, state.serving_rx = pmi, rx_new
        events.append(("link_init", {"pmi": pmi, "combiner": rx_new}))
    else:
        if state.pending is None and pmi != state.serving_tx:
            events.append(("pmi_report", {"pmi": pmi}))
        state.pending = (pmi, rx_new)


def _ssb_refresh(n: int, world: WorldTrace, state: ConnectedState, events: list):
    link, rng = state.link, state.rng
    w_tx, az_pmi, el_pmi = link.pmi_codebook
    w_rx, _, _ = link.vehicle_codebook
    beams, az, el = link.ia_codebook
    subset = link.ssb_subset(float(world.elevation[n]))
    h_ports = _port_channels(world, n, w_rx[state.serving_rx], link)
    rsrp = sss_rsrp_samples(beams[subset] @ h_ports, state.comm_noise, rng)
    serving = sss_rsrp_samples(np.array([h_ports @ w_tx[state.serving_tx]]), state.comm_noise, rng)[0]
    best = int(np.argmax(rsrp))
    if rsrp[best] > serving * 10 ** (SSB_SWITCH_MARGIN_DB / 10):
        b = subset[best]
        ux, uy = math.sin(az[b]) * math.cos(el[b]), math.sin(el[b])
        cand_ux = np.sin(az_pmi) * np.cos(el_pmi)
        cand_uy = np.sin(el_pmi)
        state.serving_tx = int(np.argmin((cand_ux - ux) ** 2 + (cand_uy - uy) ** 2))
        state.pending = None
        events.append(("ssb_switch", {"ssb_beam": int(b)}))


def _conventional_step(n: int, world: WorldTrace, state: ConnectedState) -> SlotRecord:
    events = []
    plan = state.plan
    if state.serving_tx is None:
        _csi_occasion(n, world, state, events, bootstrap=True)
    elif plan.is_csirs_slot(n):
        _csi_occasion(n, world, state, events, bootstrap=False)
    period = plan.slots_per_period
    if plan.is_ssb_slot(n) and n % period == max(plan.ssb_slots):
        _ssb_refresh(n, world, state, events)
    _, az, _ = state.link.pmi_codebook
    return SlotRecord(n, float(az[state.serving_tx]), float("nan"), float("nan"),
                      tx_index=state.serving_tx, rx_index=state.serving_rx, events=events)


def connected_step(scheme: str, slot_index: int, world: WorldTrace, state: ConnectedState) -> SlotRecord:
    """
    Advance the connected-mode state machine by one slot.

    Returns the slot's estimates, the beams in use and any protocol events.
    """
    if scheme != state.scheme:
        raise ValueError(f"state belongs to scheme {state.scheme!r}, not {scheme!r}")
    if not 0 <= slot_index < world.slot_count:
        raise IndexError(f"slot {slot_index} outside the trace")
    if scheme == "isac":
        return _isac_step(slot_index, world, state)
    return _conventional_step(slot_index, world, state)


# ------------------------------------------------------------------- runs

@dataclass
class ConnectedRun:
    """Per-slot outcome of a connected-mode run."""

    scheme: str
    est_theta: np.ndarray
    est_d: np.ndarray
    est_v: np.ndarray
    tx_beams: np.ndarray
    rx_beams: np.ndarray
    events: list
    state: ConnectedState
    channel: np.ndarray | None = None
    bit_errors: np.ndarray | None = None
    bits_per_slot: int = 0
    ber: np.ndarray | None = None
    throughput: np.ndarray | None = None


def beams_from_records(records: list[SlotRecord], link: LinkSetup):
    """Stack the beamformer and combiner used in each slot."""
    if records and records[0].tx_index is not None:
        w_tx, _, _ = link.pmi_codebook
        w_rx, _, _ = link.vehicle_codebook
        tx = w_tx[[r.tx_index for r in records]]
        rx = w_rx[[r.rx_index for r in records]]
        return tx, rx
    tx_ang = np.array([r.tx_angles for r in records])
    rx_ang = np.array([r.rx_angles for r in records])
    tx = np.conj(steering_matrix(tx_ang[:, 0], tx_ang[:, 1], link.tx_geom))
    rx = np.conj(steering_matrix(rx_ang[:, 0], rx_ang[:, 1], link.rx_geom))
    return tx, rx


def evaluate_link(run: ConnectedRun, world: WorldTrace, plan: FramePlan, noise_var, seed,
                  link: LinkSetup, carrier_frequency: float | None = None, los_extra_loss_db=None):
    """Fill in per-slot channel, bit errors, BER and throughput of ``run``."""
    fc = link.carrier_frequency if carrier_frequency is None else carrier_frequency
    gains, dep, arr = world.comm_path_arrays(fc, los_extra_loss_db)
    n = len(run.est_theta)
    h = effective_channel_trace(gains[:, :n], (dep[0][:, :n], dep[1][:, :n]),
                                (arr[0][:, :n], arr[1][:, :n]), run.tx_beams, run.rx_beams,
                                link.tx_geom, link.rx_geom, link.tx_power)
    run.channel = h
    run.bits_per_slot = link.ber_symbols_per_slot * link.bits_per_symbol
    run.bit_errors = slot_bit_errors(h, noise_var, link.bits_per_symbol, link.ber_symbols_per_slot, seed)
    run.ber = run.bit_errors / run.bits_per_slot
    run.throughput = plan_throughput(plan, run.ber, bits_per_symbol=link.bits_per_symbol)
    return run


def run_connected(scheme: str, world: WorldTrace, snr_db: float, seed, link: LinkSetup | None = None,
                  n_slots: int | None = None, monitor: bool = False) -> ConnectedRun:
    """
    Run connected mode over the trace and evaluate the link.

    ``snr_db`` is the beam-aligned LoS SNR at the start pose. The same seed
    gives an identical run.
    """
    link = link or LinkSetup()
    ss = seed_sequence(seed)
    proto_seed, link_seed = ss.spawn(2)
    state = new_state(scheme, world, snr_db, proto_seed, link, monitor)
    n_slots = world.slot_count if n_slots is None else min(n_slots, world.slot_count)
    records = [connected_step(scheme, n, world, state) for n in range(n_slots)]
    tx, rx = beams_from_records(records, link)
    events = [(r.slot, name, fields) for r in records for name, fields in r.events]
    run = ConnectedRun(scheme, np.array([r.est_theta for r in records]),
                       np.array([r.est_d for r in records]), np.array([r.est_v for r in records]),
                       tx, rx, events, state)
    return evaluate_link(run, world, state.plan, state.comm_noise, link_seed, link)
