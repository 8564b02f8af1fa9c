"""Link-level simulation of 5G NR beam management with and without radar sensing."""

from .array import AnglePair, ArrayGeometry, conjugate_beamformer, dft_codebook, steering_vector
from .frame import FramePlan, build_frame_plan, overhead_metrics, throughput
from .harness import RunReport, compute_metrics, run_experiment
from .scenario import Blockage, ScenarioConfig, Scatterer, WorldTrace, generate_scenario
from .tracker import NoiseSpec, TrackState, ekf_step

__version__ = "0.1.0"

__all__ = [
    "AnglePair", "ArrayGeometry", "Blockage", "FramePlan", "NoiseSpec", "RunReport", "ScenarioConfig",
    "Scatterer", "TrackState", "WorldTrace", "build_frame_plan", "compute_metrics", "conjugate_beamformer",
    "dft_codebook", "ekf_step", "generate_scenario", "overhead_metrics", "run_experiment", "steering_vector",
    "throughput", "__version__",
]
