"""Per-class logistic regression over average-pooled attribution maps.

Each class owns a weight grid matching the pooled map; the prediction is
``sigmoid(sum(w * avg_pool(map)))`` with no bias term, so the weighted map is
exactly the decision computation.  Decision thresholds are calibrated by
maximizing the Youden index on validation scores.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import DegenerateClass, ShapeMismatch


def default_pool_factor(image_size: int) -> int:
    """Pooling factor: 32 at full scale, 8 at desk scale."""
    return 32 if image_size >= 320 else 8


class PooledLogisticHeads(nn.Module):
    """One bias-free logistic regression weight grid per class."""

    def __init__(self, num_classes: int, image_size: int, pool_factor: int):
        super().__init__()
        if image_size % pool_factor != 0:
            raise ShapeMismatch(
                f"pool factor {pool_factor} does not divide image size {image_size}"
            )
        self.num_classes = num_classes
        self.image_size = image_size
        self.pool_factor = pool_factor
        grid = image_size // pool_factor
        self.grid_size = grid
        self.weights = nn.ParameterList(
            [nn.Parameter(torch.zeros(grid, grid)) for _ in range(num_classes)]
        )

    def pooled(self, maps: torch.Tensor) -> torch.Tensor:
        if maps.ndim != 4 or maps.shape[1] != 1:
            raise ShapeMismatch(f"expected (B,1,H,W) maps, got {tuple(maps.shape)}")
        if maps.shape[2] % self.pool_factor or maps.shape[3] % self.pool_factor:
            raise ShapeMismatch(
                f"map dims {tuple(maps.shape[2:])} not divisible by {self.pool_factor}"
            )
        return F.avg_pool2d(maps, self.pool_factor)

    def logits(self, maps: torch.Tensor, class_index: int) -> torch.Tensor:
        """Training-dtype logits; gradients flow into map and weight grid."""
        pooled = self.pooled(maps)
        return (pooled * self.weights[class_index]).sum(dim=(1, 2, 3))

    @torch.no_grad()
    def predict(self, maps: torch.Tensor, class_index: int) -> tuple[torch.Tensor, torch.Tensor]:
        """(probability, logit) per image, computed in float64."""
        pooled = self.pooled(maps.double())
        logits = (pooled * self.weights[class_index].double()).sum(dim=(1, 2, 3))
        return torch.sigmoid(logits), logits


@dataclass
class ThresholdTable:
    """Per-class decision thresholds in (0, 1)."""

    values: np.ndarray  # (C,)
    class_names: list[str]

    def to_json(self, path: Path | str) -> None:
        data = {name: float(v) for name, v in zip(self.class_names, self.values)}
        Path(path).write_text(json.dumps(data, indent=2) + "\n")

    @classmethod
    def from_json(cls, path: Path | str, class_names: list[str]) -> "ThresholdTable":
        data = json.loads(Path(path).read_text())
        return cls(np.array([data[name] for name in class_names]), class_names)


def youden_candidates(scores: np.ndarray) -> np.ndarray:
    """Midpoints of consecutive sorted unique scores."""
    uniq = np.unique(scores)
    if len(uniq) < 2:
        return np.empty(0)
    return (uniq[:-1] + uniq[1:]) / 2.0


def youden_index(scores: np.ndarray, labels: np.ndarray, threshold: float) -> float:
    """Sensitivity + specificity - 1 for the rule ``score >= threshold``."""
    pred = scores >= threshold
    pos = labels == 1
    neg = ~pos
    sens = float(pred[pos].mean()) if pos.any() else 0.0
    spec = float((~pred[neg]).mean()) if neg.any() else 0.0
    return sens + spec - 1.0


def calibrate_threshold(scores: np.ndarray, labels: np.ndarray, class_index: int = 0) -> float:
    """Threshold maximizing the Youden index over score-midpoint candidates.

    Falls back to 0.5 (with a warning) when all scores coincide.
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if labels.min() == labels.max():
        raise DegenerateClass(class_index)
    candidates = youden_candidates(scores)
    if len(candidates) == 0:
        warnings.warn(
            f"class {class_index}: all scores identical, returning threshold 0.5",
            stacklevel=2,
        )
        return 0.5
    youden = np.array([youden_index(scores, labels, t) for t in candidates])
    return float(candidates[int(np.argmax(youden))])


def calibrate_thresholds(
    scores: np.ndarray, labels: np.ndarray, class_names: list[str]
) -> ThresholdTable:
    """Calibrate one threshold per class from (N, C) scores and labels."""
    num_classes = scores.shape[1]
    values = np.array(
        [calibrate_threshold(scores[:, c], labels[:, c], c) for c in range(num_classes)]
    )
    return ThresholdTable(values, class_names)
