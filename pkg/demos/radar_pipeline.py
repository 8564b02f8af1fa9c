"""
One sensing pass on the default start pose: echo synthesis, delay-Doppler
detection, coarse estimate, MUSIC refinement and 2D direction finding.
"""

import numpy as np

from nrisac.array import ArrayGeometry, omni_beamformer
from nrisac.ofdm import OfdmConfig, extract_channel, post_division_noise_var, random_grid, synthesize_echo
from nrisac.radar import (coarse_peak_estimate, declare_presence, default_angle_grids, delay_doppler_map,
                          detect_presence, estimate_doa_2d, refine_target, remove_static_clutter)
from nrisac.scenario import ScenarioConfig, generate_scenario

world = generate_scenario(ScenarioConfig().with_slots(1), seed=0)
truth = world.angles(0)
print(f"truth: range {world.range[0]:.3f} m, closing speed {world.radial_speed[0]:.3f} m/s, "
      f"azimuth {truth.azimuth:.4f} rad, elevation {truth.elevation:.4f} rad")

geom = ArrayGeometry(8, 8)
cfg = OfdmConfig.from_numerology(3, 256, 140)
paths = world.radar_paths(0)
grid = random_grid(cfg, 2, seed=1)
clean = synthesize_echo(grid, paths, omni_beamformer(geom), geom, cfg)
peak = np.max(np.abs(delay_doppler_map(extract_channel(clean, grid)[0]))) ** 2
noise_var = peak / 10 ** (20 / 10)  # 20 dB per-antenna peak SNR
echo = synthesize_echo(grid, paths, omni_beamformer(geom), geom, cfg, noise_var, seed=2)

channel = extract_channel(echo, grid)
dd = delay_doppler_map(channel)
verdict = detect_presence(dd, post_division_noise_var(noise_var, grid))
n_cells = cfg.m_subcarriers * (cfg.l_symbols - 1)
print(f"presence declared: {declare_presence(verdict, geom.size, n_cells)} "
      f"({len(verdict.triggered_cells)} cells over threshold)")

coarse, rng_c, spd_c = coarse_peak_estimate(dd, cfg)
print(f"coarse: range {rng_c:.3f} m (bin {cfg.range_bin:.3f}), speed {spd_c:.3f} m/s (bin {cfg.velocity_bin:.3f})")

moving = remove_static_clutter(channel)
fine = refine_target(moving, coarse, cfg)
print(f"MUSIC:  range {fine.range:.3f} m, speed {fine.speed:.3f} m/s")

az_grid, el_grid = default_angle_grids(1.0)
doa = estimate_doa_2d(moving, 1, az_grid, el_grid, geom)
print(f"DOA:    azimuth {doa.azimuth:.4f} rad, elevation {doa.elevation:.4f} rad")
