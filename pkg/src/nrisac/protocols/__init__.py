"""Initial access, connected-mode tracking and beam-failure state machines."""

from .bfr import BfrEvent, BfrRun, RecoveryOutcome, bfr_detect, bfr_recover, run_bfr
from .common import LinkSetup
from .connected import ConnectedRun, ConnectedState, connected_step, new_state, run_connected
from .ia import IaOutcome, ia_mse_decomposition, run_initial_access
from .monitors import BfiCounter, KinematicMonitor, SlotObservation

__all__ = [
    "BfiCounter", "BfrEvent", "BfrRun", "ConnectedRun", "ConnectedState", "IaOutcome", "KinematicMonitor",
    "LinkSetup", "RecoveryOutcome", "SlotObservation", "bfr_detect", "bfr_recover", "connected_step",
    "ia_mse_decomposition", "new_state", "run_bfr", "run_connected", "run_initial_access",
]
