"""MU-MIMO uplink symbol detection toolkit.

Classical message-passing detectors (EP, BPIC, MMSE, exhaustive ML), their
GNN-refined counterparts (GEPNet, GPICNet) with training, posterior-accuracy
diagnostics, and a Monte-Carlo SER benchmark harness.
"""

from .constellation import Constellation, make_constellation
from .system import (
    InstanceBatch,
    RngStream,
    SystemInstance,
    lift_complex_to_real,
    lift_vector,
    sample_batch,
    sample_instance,
    snr_to_noise_var,
)
from .base import BpicState, DetectionResult, Detector, EpState
from .cavity import discrete_moments, discretized_gaussian_pmf, gaussian_product, hard_decision
from .ep import EpDetector, ep_detect, ep_estimate, ep_observe
from .bpic import BpicDetector, bpic_detect, bpic_dsc, bpic_observe
from .baselines import MlOracle, MmseDetector, ml_oracle, mmse_detect
from .gnn import (
    CavityDistribution,
    EdgeAttributes,
    GnnDims,
    GnnParams,
    GnnState,
    NodeAttributes,
    gnn_backward,
    gnn_forward,
    gnn_init,
    gnn_readout,
    gnn_round,
)
from .checkpoint import load_params, save_params
from .neural import GepnetConfig, GepnetDetector, GpicnetConfig, GpicnetDetector
from .training import TrainConfig, TrainResult, cross_entropy_loss, evaluate_ser, train
from .analysis import (
    MetricsReport,
    TruePosterior,
    condition_binned_ser,
    enumerate_posterior,
    moment_gaps,
    probability_ratio,
    residual_noise_stats,
)
from .bench import ResultRow, Scenario, run_robustness, run_sweep
from .complexity import complexity_estimate

__all__ = [
    "Constellation",
    "make_constellation",
    "InstanceBatch",
    "RngStream",
    "SystemInstance",
    "lift_complex_to_real",
    "lift_vector",
    "sample_batch",
    "sample_instance",
    "snr_to_noise_var",
    "BpicState",
    "DetectionResult",
    "Detector",
    "EpState",
    "discrete_moments",
    "discretized_gaussian_pmf",
    "gaussian_product",
    "hard_decision",
    "EpDetector",
    "ep_detect",
    "ep_estimate",
    "ep_observe",
    "BpicDetector",
    "bpic_detect",
    "bpic_dsc",
    "bpic_observe",
    "MlOracle",
    "MmseDetector",
    "ml_oracle",
    "mmse_detect",
    "CavityDistribution",
    "EdgeAttributes",
    "GnnDims",
    "GnnParams",
    "GnnState",
    "NodeAttributes",
    "gnn_backward",
    "gnn_forward",
    "gnn_init",
    "gnn_readout",
    "gnn_round",
    "load_params",
    "save_params",
    "GepnetConfig",
    "GepnetDetector",
    "GpicnetConfig",
    "GpicnetDetector",
    "TrainConfig",
    "TrainResult",
    "cross_entropy_loss",
    "evaluate_ser",
    "train",
    "MetricsReport",
    "TruePosterior",
    "condition_binned_ser",
    "enumerate_posterior",
    "moment_gaps",
    "probability_ratio",
    "residual_noise_stats",
    "ResultRow",
    "Scenario",
    "run_robustness",
    "run_sweep",
    "complexity_estimate",
]

__version__ = "0.1.0"
