import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nrisac.array import AnglePair, ArrayGeometry, omni_beamformer
from nrisac.constants import CHI
from nrisac.errors import DegenerateCovarianceError, NoTargetError
from nrisac.ofdm import (OfdmConfig, PathParams, complex_noise, echo_path, extract_channel, random_grid,
                         synthesize_echo)
from nrisac.radar import (CoarsePeak, DetectionVerdict, MusicSetup, bartlett_power, coarse_peak_estimate,
                          declare_presence, default_angle_grids, delay_doppler_map, delay_snapshots,
                          delay_steering, delay_to_range, detect_presence, detection_threshold,
                          doppler_steering, doppler_to_speed, estimate_doa_2d, estimate_model_order,
                          estimate_noise_variance, find_doa_peaks, golden_section_refine,
                          golden_section_search, min_antenna_hits, music_spectrum, noise_subspace, q_inverse,
                          refine_target, remove_static_clutter, sample_covariance)

SINGLE = ArrayGeometry(1, 1)


def tail(x):
    return 0.5 * math.erfc(x / math.sqrt(2))


def bisect_tail(p):
    """Oracle: plain bisection on the Gaussian tail."""
    lo, hi = -10.0, 10.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if tail(mid) > p:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


# ------------------------------------------------------------ delay-Doppler

def test_zero_map():
    assert not np.any(delay_doppler_map(np.zeros((8, 6))))


def test_bin_aligned_path_concentrates_in_one_cell():
    cfg = OfdmConfig.from_numerology(3, 32, 16)
    m0, l0, alpha = 5, 3, 0.7 - 0.2j
    tau = m0 / (32 * cfg.subcarrier_spacing)
    mu = l0 / (16 * cfg.symbol_duration)
    ch = extract_channel(synthesize_echo(np.ones((32, 16)), [PathParams(tau, mu, alpha, AnglePair(0))],
                                         np.ones(1), SINGLE, cfg), np.ones((32, 16)))
    dd = delay_doppler_map(ch[0])
    assert abs(dd[m0, l0]) == pytest.approx(math.sqrt(32 * 16) * abs(alpha), rel=1e-12)
    dd[m0, l0] = 0
    assert np.max(np.abs(dd)) < 1e-10


def test_map_is_unitary_on_noise():
    rng = np.random.default_rng(0)
    noise = complex_noise(rng, (4, 256, 128), 1.5)
    dd = delay_doppler_map(noise)
    assert np.var(dd) == pytest.approx(np.var(noise), rel=0.02)
    assert np.linalg.norm(dd) == pytest.approx(np.linalg.norm(noise), rel=1e-12)


def test_noise_variance_estimate():
    rng = np.random.default_rng(1)
    cells = complex_noise(rng, (100, 100), 2.0)
    est = estimate_noise_variance(cells)
    assert 1.9 <= est <= 2.1
    cells[3, 3] = 1e4
    assert estimate_noise_variance(cells) == pytest.approx(est, rel=0.02)
    assert estimate_noise_variance(np.zeros((20, 20))) == 0.0
    with pytest.raises(ValueError):
        estimate_noise_variance(np.ones((5, 5)))


# --------------------------------------------------------------- detection

@pytest.mark.parametrize("p", [0.1, 0.01, 1e-3, 1e-6])
def test_q_inverse_matches_bisection(p):
    assert q_inverse(p) == pytest.approx(bisect_tail(p), abs=1e-9)


def test_q_inverse_rejects_bad_probability():
    for p in (0.0, 1.0, -0.2):
        with pytest.raises(ValueError):
            q_inverse(p)


def test_threshold_constant():
    assert detection_threshold(2.0, 0.01) == pytest.approx(2.3263, abs=1e-3)


@pytest.mark.parametrize("p_fa", [0.1, 0.01])
def test_false_alarm_calibration(p_fa):
    rng = np.random.default_rng(2)
    dd = complex_noise(rng, (4, 256, 129), 1.0)
    verdict = detect_presence(dd, 1.0, p_fa, exclude_zero_doppler=True)
    n_cells = 4 * 256 * 128
    rate = len(verdict.triggered_cells) / n_cells
    assert abs(rate - p_fa) <= 0.3 * p_fa


def test_zero_doppler_column_excluded():
    dd = np.zeros((8, 8), dtype=complex)
    dd[2, 0] = 100.0
    v = detect_presence(dd, 1.0)
    assert not v.present and v.triggered_cells == []
    dd[2, 3] = 100.0
    v = detect_presence(dd, 1.0)
    assert v.present and v.triggered_cells == [(0, 2, 3)]
    assert detect_presence(dd, 1.0, exclude_zero_doppler=False).triggered_cells == [(0, 2, 0), (0, 2, 3)]


def test_detect_presence_validation():
    with pytest.raises(ValueError):
        detect_presence(np.zeros((4, 4)), 0.0)
    with pytest.raises(ValueError):
        detect_presence(np.zeros((4, 4)), 1.0, p_fa=1.5)


def test_moving_target_detected_at_20_db():
    cfg = OfdmConfig.from_numerology(3, 64, 28)
    geom = ArrayGeometry(4, 4)
    path = echo_path(20.0, 12.0, AnglePair(0.5, -0.1), 35e9)
    f = omni_beamformer(geom)
    clean = synthesize_echo(np.ones((64, 28)), [path], f, geom, cfg)
    peak = np.max(np.abs(delay_doppler_map(clean))) ** 2
    noise_var = peak / 100
    hits = 0
    for seed in range(100):
        grid = random_grid(cfg, 2, seed)
        echo = synthesize_echo(grid, [path], f, geom, cfg, noise_var, seed=1000 + seed)
        v = detect_presence(delay_doppler_map(extract_channel(echo, grid)), noise_var)
        hits += declare_presence(v, geom.size, 64 * 27)
    assert hits >= 99


def test_min_antenna_hits_union_bound():
    # Oracle: direct binomial tail sums.
    n, p, cells = 64, 0.01, 64 * 139
    k = min_antenna_hits(n, cells, p, 0.01)

    def sf(k):
        return sum(math.comb(n, j) * p**j * (1 - p) ** (n - j) for j in range(k, n + 1))

    assert cells * sf(k) <= 0.01 < cells * sf(k - 1)
    assert min_antenna_hits(1, 10, 0.01, 0.5) == 1


def test_declare_presence_counts_antennas_per_cell():
    cells = [(a, 3, 4) for a in range(7)] + [(0, 1, 1)]
    v = DetectionVerdict(True, cells, 1.0)
    need = min_antenna_hits(16, 100)
    assert declare_presence(v, 16, 100) == (7 >= need)
    assert declare_presence(DetectionVerdict(True, [(0, 1, 1)]), 1, 100)
    assert not declare_presence(DetectionVerdict(False), 16, 100)


# -------------------------------------------------------------- coarse peak

def test_coarse_range_example():
    cfg = OfdmConfig.from_numerology(3, 256, 140)
    path = echo_path(30.0, 20.0, AnglePair(0), 35e9)
    grid = random_grid(cfg, 2, 0)
    dd = delay_doppler_map(extract_channel(synthesize_echo(grid, [path], np.ones(1), SINGLE, cfg), grid))
    peak, rng_hat, v_hat = coarse_peak_estimate(dd, cfg)
    assert cfg.range_bin == pytest.approx(4.883, abs=1e-3)
    assert cfg.velocity_bin == pytest.approx(3.4286, abs=1e-4)
    assert peak.delay_bin == 6 and rng_hat == pytest.approx(29.30, abs=0.01)
    assert peak.doppler_bin == 6 and v_hat == pytest.approx(20.57, abs=0.01)


def test_bin_centred_target_has_no_quantization_error():
    cfg = OfdmConfig.from_numerology(3, 64, 32)
    d, v = 7 * cfg.range_bin, 4 * cfg.velocity_bin
    path = echo_path(d, v, AnglePair(0), 35e9)
    dd = delay_doppler_map(extract_channel(synthesize_echo(np.ones((64, 32)), [path], np.ones(1), SINGLE, cfg),
                                           np.ones((64, 32))))
    _, r, s = coarse_peak_estimate(dd, cfg)
    assert r == pytest.approx(d, abs=1e-9) and s == pytest.approx(v, abs=1e-9)


def test_receding_target_has_negative_speed():
    cfg = OfdmConfig.from_numerology(3, 64, 32)
    path = echo_path(20.0, -3 * cfg.velocity_bin, AnglePair(0), 35e9)
    dd = delay_doppler_map(synthesize_echo(np.ones((64, 32)), [path], np.ones(1), SINGLE, cfg))
    peak, _, s = coarse_peak_estimate(dd, cfg)
    assert peak.doppler_bin == 29
    assert s == pytest.approx(-3 * cfg.velocity_bin)


def test_no_moving_peak_raises():
    cfg = OfdmConfig.from_numerology(3, 8, 8)
    dd = np.zeros((8, 8), dtype=complex)
    dd[:, 0] = 5.0
    with pytest.raises(NoTargetError):
        coarse_peak_estimate(dd, cfg)


def test_clutter_removal_cancels_static_paths():
    cfg = OfdmConfig.from_numerology(3, 16, 14)
    static = echo_path(40.0, 0.0, AnglePair(0.2), 35e9)
    ch = extract_channel(synthesize_echo(np.ones((16, 14)), [static], np.ones(1), SINGLE, cfg), np.ones((16, 14)))
    assert np.max(np.abs(remove_static_clutter(ch))) < 1e-15 + 1e-12 * np.max(np.abs(ch))


# ------------------------------------------------------------------- MUSIC

def tone_snapshots(w0, n=16, n_snap=40, seed=0, noise=0.0):
    rng = np.random.default_rng(seed)
    amp = complex_noise(rng, n_snap, 1.0)
    x = np.exp(1j * w0 * np.arange(n))[:, None] * amp[None]
    if noise:
        x = x + complex_noise(rng, x.shape, noise)
    return x


def probe(n=16):
    return lambda w: np.exp(1j * np.multiply.outer(np.asarray(w, dtype=float), np.arange(n)))


def test_music_noiseless_tone_contrast():
    x = tone_snapshots(0.9)
    peak = music_spectrum(x, probe(), 1, 0.9)
    far = music_spectrum(x, probe(), 1, 0.9 + math.pi)
    assert peak / far >= 1e6


@given(st.floats(0, 2 * math.pi))
@settings(max_examples=20)
def test_music_invariant_to_global_phase(phi):
    x = tone_snapshots(0.4, noise=0.1)
    w = np.linspace(-3, 3, 31)
    a = music_spectrum(x, probe(), 1, w)
    b = music_spectrum(x * np.exp(1j * phi), probe(), 1, w)
    np.testing.assert_allclose(a, b, rtol=1e-6)


def test_music_two_tones_resolved():
    n, bin_w = 32, 2 * math.pi / 32
    w_true = (0.5, 1.5)
    for seed in range(10):
        rng = np.random.default_rng(seed)
        amps = complex_noise(rng, (2, 200), 1.0)
        x = sum(np.exp(1j * w * np.arange(n))[:, None] * amps[k][None] for k, w in enumerate(w_true))
        x = x + complex_noise(rng, x.shape, 0.01)
        grid = np.linspace(0, 2, 4001)
        spec = music_spectrum(x, probe(n), 2, grid)
        inner = spec[1:-1]
        peaks = grid[1:-1][(inner > spec[:-2]) & (inner > spec[2:])]
        top = peaks[np.argsort(music_spectrum(x, probe(n), 2, peaks))[::-1][:2]]
        for w in w_true:
            assert np.min(np.abs(top - w)) < bin_w


def test_music_rank_deficiency():
    x = tone_snapshots(0.3, n_snap=1)
    with pytest.raises(DegenerateCovarianceError):
        music_spectrum(x, probe(), 1, 0.3)
    x = tone_snapshots(0.3, n_snap=10)
    with pytest.raises(DegenerateCovarianceError):
        noise_subspace(sample_covariance(x), 2)
    with pytest.raises(DegenerateCovarianceError):
        noise_subspace(np.zeros((4, 4)), 1)


def test_delay_covariance_rank_equals_path_count():
    cfg = OfdmConfig.from_numerology(3, 32, 28)
    geom = ArrayGeometry(2, 2)
    paths = [echo_path(d, v, AnglePair(a), 35e9) for d, v, a in ((10, 5, 0.1), (23, -8, 0.5), (31, 12, -0.4))]
    grid = random_grid(cfg, 2, 3)
    ch = extract_channel(synthesize_echo(grid, paths, omni_beamformer(geom), geom, cfg), grid)
    lam = np.linalg.eigvalsh(sample_covariance(delay_snapshots(ch)))
    rel = lam / lam.sum()
    assert np.sum(rel > 1e-8) == 3
    assert estimate_model_order(lam) == 3


# ----------------------------------------------------------- golden section

def test_chi_constant():
    assert CHI == pytest.approx(0.618034, abs=1e-6)


@given(st.integers(1, 40))
def test_contraction_law(n):
    res = golden_section_search(lambda x: -(x - 0.37) ** 2, 0.0, 1.0, 1e-300, max_iter=n)
    assert res.iterations == n
    assert res.hi - res.lo == pytest.approx(CHI**n, abs=1e-9)
    assert res.evaluations == n + 2


def test_parabola_maximum():
    x = golden_section_refine(lambda x: -(x - 0.37) ** 2, MusicSetup(0.0, 1.0, 1e-4))
    assert 0.3699 <= x <= 0.3701


@given(st.floats(-5, 5), st.floats(0.01, 5), st.floats(-6, 6))
@settings(max_examples=50)
def test_evaluations_stay_inside_bracket(lo, width, peak):
    hi = lo + width
    seen = []

    def objective(x):
        seen.append(x)
        return -abs(x - peak)

    golden_section_search(objective, lo, hi, width * 1e-4)
    assert all(lo <= x <= hi for x in seen)


def test_non_finite_objective_raises():
    with pytest.raises(ValueError):
        golden_section_search(lambda x: float("nan"), 0, 1, 1e-3)


def test_music_setup_validation():
    with pytest.raises(ValueError):
        MusicSetup(1.0, 0.0, 1e-3)
    with pytest.raises(ValueError):
        MusicSetup(0.0, 1.0, 0.0)


# ------------------------------------------------------------- refinement

def test_unit_conversions():
    assert delay_to_range(0.0) == 0.0
    assert delay_to_range(0.31453e-6) == pytest.approx(47.18, abs=0.01)
    assert doppler_to_speed(4666.7, 35e9) == pytest.approx(20.0, abs=1e-3)


def test_steering_laws():
    cfg = OfdmConfig.from_numerology(3, 8, 6)
    tau, mu = 2.1e-7, 3000.0
    np.testing.assert_allclose(delay_steering(tau, cfg),
                               np.exp(-2j * np.pi * cfg.subcarrier_spacing * tau * np.arange(8)))
    np.testing.assert_allclose(doppler_steering(mu, cfg), np.exp(2j * np.pi * cfg.symbol_duration * mu * np.arange(6)))


def test_refine_noiseless_off_grid_target():
    cfg = OfdmConfig.from_numerology(3, 64, 56)
    geom = ArrayGeometry(2, 2)
    d, v = 5.37 * cfg.range_bin, 3.62 * cfg.velocity_bin
    path = echo_path(d, v, AnglePair(0.3), 35e9)
    grid = random_grid(cfg, 2, 5)
    ch = extract_channel(synthesize_echo(grid, [path], omni_beamformer(geom), geom, cfg,
                                         noise_var=1e-20, seed=1), grid)
    peak, _, _ = coarse_peak_estimate(delay_doppler_map(ch), cfg)
    t = refine_target(ch, peak, cfg)
    assert t.range == pytest.approx(d, abs=0.01 * cfg.range_bin)
    assert t.speed == pytest.approx(v, abs=0.01 * cfg.velocity_bin)


# --------------------------------------------------------------------- DOA

def doa_channel(az, el, geom, snr_db, seed, m=32, l=14):
    cfg = OfdmConfig.from_numerology(3, m, l)
    path = echo_path(25.0, 10.0, AnglePair(az, el), 35e9)
    grid = random_grid(cfg, 2, seed)
    f = omni_beamformer(geom)
    clean = synthesize_echo(grid, [path], f, geom, cfg)
    per_antenna = np.mean(np.abs(clean) ** 2)
    noise = 0.0 if snr_db is None else per_antenna * m * l / 10 ** (snr_db / 10)
    return extract_channel(synthesize_echo(grid, [path], f, geom, cfg, noise, seed=seed + 1), grid)


def test_doa_broadside_noiseless():
    geom = ArrayGeometry(8, 8)
    az, el = default_angle_grids(1.0)
    est = estimate_doa_2d(doa_channel(0.0, 0.0, geom, None, 0), 1, az, el, geom)
    assert abs(est.azimuth) < math.radians(1) and abs(est.elevation) < math.radians(1)


def test_doa_start_pose_at_20_db():
    geom = ArrayGeometry(8, 8)
    az, el = default_angle_grids(1.0)
    errs = []
    for seed in range(100):
        ch = doa_channel(0.488, -0.147, geom, 20, seed)
        errs.append(abs(estimate_doa_2d(ch, 1, az, el, geom).azimuth - 0.488))
    assert np.median(errs) <= 0.02


def test_doa_invariant_to_global_phase():
    geom = ArrayGeometry(4, 4)
    az, el = default_angle_grids(2.0)
    ch = doa_channel(0.3, 0.1, geom, 15, 3)
    a = find_doa_peaks(ch, 1, az, el, geom, refine=False)[0]
    b = find_doa_peaks(ch * np.exp(0.7j), 1, az, el, geom, refine=False)[0]
    assert a == b
    assert bartlett_power(ch, a, geom) == pytest.approx(bartlett_power(ch * 1j, a, geom))


def test_doa_requires_more_antennas_than_order():
    geom = ArrayGeometry(2, 1)
    with pytest.raises(DegenerateCovarianceError):
        find_doa_peaks(np.ones((2, 4, 4)), 2, [0.0, 0.1], [0.0, 0.1], geom)
    with pytest.raises(ValueError):
        find_doa_peaks(np.ones((3, 4, 4)), 1, [0.0, 0.1], [0.0, 0.1], geom)


def test_two_static_reflectors_found():
    geom = ArrayGeometry(8, 8)
    cfg = OfdmConfig.from_numerology(3, 64, 14)
    truth = [AnglePair(-0.27, -0.03), AnglePair(0.32, -0.03)]
    paths = [echo_path(50.0, 0.0, truth[0], 35e9), echo_path(62.0, 0.0, truth[1], 35e9)]
    grid = random_grid(cfg, 2, 0)
    ch = extract_channel(synthesize_echo(grid, paths, omni_beamformer(geom), geom, cfg, 1e-16, seed=1), grid)
    az, el = default_angle_grids(1.0)
    found = find_doa_peaks(ch, 2, az, el, geom, n_peaks=2)
    for t in truth:
        assert min(abs(p.azimuth - t.azimuth) + abs(p.elevation - t.elevation) for p in found) < 0.01
