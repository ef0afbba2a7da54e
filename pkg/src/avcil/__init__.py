"""Exemplar-free audio-visual class-incremental learning on frozen fused features.

The main entry points are :class:`~avcil.pipeline.HailLearner` (hierarchical
analytic learner with prototype replay), the baselines in
:mod:`avcil.baselines`, the synthetic stream in :mod:`avcil.synth` and the
experiment runner in :mod:`avcil.harness`.
"""

from .baselines import EWCLearner, ICaRLLearner, JointLearner, LwFLearner, SoftmaxHeadLearner
from .fusion import FeaturePair, FusedOutput, FusionParams, fuse_forward, fusion_loss, train_fusion
from .harness import ExperimentConfig, RunRecord, report, run_experiment
from .hail import ExpansionMap, Features, HailModel, expand, fit_general, fit_species, incremental_update
from .inference import GammaSchedule, ModalityBalancer, gamma_at, predict, route_species
from .kernels import RidgeConfig, kmeans, make_rng, ridge_solve
from .metrics import AccuracyMatrix, avg_accuracy, forgetting
from .pipeline import FeatureExtractor, HailConfig, HailLearner
from .prototypes import PrototypeBank, build_general, build_species, ema_update
from .storage import load_checkpoint, save_checkpoint
from .synth import SynthConfig, degrade, generate

__version__ = "0.1.0"

__all__ = [
    "AccuracyMatrix", "EWCLearner", "ExpansionMap", "ExperimentConfig", "FeatureExtractor", "FeaturePair",
    "Features", "FusedOutput", "FusionParams", "GammaSchedule", "HailConfig", "HailLearner", "HailModel",
    "ICaRLLearner", "JointLearner", "LwFLearner", "ModalityBalancer", "PrototypeBank", "RidgeConfig",
    "RunRecord", "SoftmaxHeadLearner", "SynthConfig", "avg_accuracy", "build_general", "build_species",
    "degrade", "ema_update", "expand", "fit_general", "fit_species", "forgetting", "fuse_forward",
    "fusion_loss", "gamma_at", "generate", "incremental_update", "kmeans", "load_checkpoint", "make_rng",
    "predict", "report", "ridge_solve", "route_species", "run_experiment", "save_checkpoint", "train_fusion",
]
