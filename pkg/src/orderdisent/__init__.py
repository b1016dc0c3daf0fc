"""Order-guided disentangled representation learning on sequence-structured data."""
from .estimator import OrderGuidedClassifier
from .experiments import probe_disentanglement, run_ablation, run_comparison, sequence_strips
from .metrics import confusion, metrics
from .net import NetworkConfig, ParamSet, forward, init_params
from .objectives import LossWeights
from .seqgen import GeneratorConfig, generate, load, save
from .trainer import TrainConfig, TrainResult, train

__version__ = "0.1.0"

__all__ = [
    "GeneratorConfig", "LossWeights", "NetworkConfig", "OrderGuidedClassifier", "ParamSet",
    "TrainConfig", "TrainResult", "confusion", "forward", "generate", "init_params", "load",
    "metrics", "probe_disentanglement", "run_ablation", "run_comparison", "save",
    "sequence_strips", "train",
]
