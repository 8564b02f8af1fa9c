"""Physical constants and the default link-level simulation parameters."""

import math

# Rounded value; the bin-width arithmetic throughout the package uses it.
SPEED_OF_LIGHT = 3.0e8

BOLTZMANN_DBM_PER_HZ = -174.0

CARRIER_FREQUENCY = 35e9
SUB6_CARRIER_FREQUENCY = 5e9
NUMEROLOGY = 3
SUB6_NUMEROLOGY = 1
SLOT_DURATION = 0.125e-3
SIM_DURATION = 4.0
N_PRB = 208
LAYERS = 1
BITS_PER_SYMBOL = 4
NOISE_BANDWIDTH = 300e6

# gNB and vehicle arrays: 8x8 (N_t = N_r = 64) and 4x4 (M_r = 16).
GNB_ARRAY = (8, 8)
VEHICLE_ARRAY = (4, 4)

# EKF process noise (std per slot) and measurement noise (std).
PROCESS_STD = (1e-3, 1e-3, 1e-3)
MEASUREMENT_STD = (0.1, 0.2, 0.15)
# Reflection-coefficient variances, relative to the squared initial value.
BETA_PROCESS_REL_VAR = 1e-6
BETA_MEASUREMENT_REL_VAR = 1e-2

# Beam-failure detection.
BFD_TIMER = 7.5e-3
BFI_MAX = 6
RANGE_JUMP_THRESHOLD = 2.0
SPEED_JUMP_THRESHOLD = 1.0
PERSIST_SLOTS = 12
PERSIST_WINDOW = 20
BFI_MARGIN_DB = 3.0
RECOVERY_MARGIN_DB = 6.0

P_FA = 0.01

# Golden-section contraction ratio.
CHI = (math.sqrt(5.0) - 1.0) / 2.0
