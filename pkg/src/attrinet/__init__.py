"""Inherently interpretable multi-label classifier built on counterfactual
class attribution maps, with model guidance and explanation-quality metrics."""

__version__ = "0.1.0"

from .dataset import ContaminationSpec, ImageBatch, ImageRecord, ManifestDataset
from .generator import AttributionGenerator, counterfactual
from .critic import TaskCritic, gradient_penalty
from .classifier import PooledLogisticHeads, ThresholdTable, calibrate_thresholds
from .guidance import GuidanceMask, GuidancePolicy
from .layers import TaskCode, make_task_code
from .losses import ClassCenterPair, ClassCenters, LossWeights
from .model import ModelBundle, build_model
from .trainer import TrainConfig, schedule, train

__all__ = [
    "AttributionGenerator",
    "ClassCenterPair",
    "ClassCenters",
    "ContaminationSpec",
    "GuidanceMask",
    "GuidancePolicy",
    "ImageBatch",
    "ImageRecord",
    "LossWeights",
    "ManifestDataset",
    "ModelBundle",
    "PooledLogisticHeads",
    "TaskCode",
    "TaskCritic",
    "ThresholdTable",
    "TrainConfig",
    "build_model",
    "calibrate_thresholds",
    "counterfactual",
    "gradient_penalty",
    "make_task_code",
    "schedule",
    "train",
]
