"""Model bundle: generator, critic, classification heads and class centers.

The bundle groups everything inference needs; construction is deterministic
given an init seed.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from .classifier import PooledLogisticHeads, ThresholdTable, default_pool_factor
from .critic import TaskCritic
from .generator import AttributionGenerator
from .layers import TaskCode, init_weights, make_task_code
from .losses import ClassCenters


@dataclass
class ModelBundle:
    generator: AttributionGenerator
    critic: TaskCritic
    heads: PooledLogisticHeads
    centers: ClassCenters
    class_names: list[str]
    image_size: int
    scale: str
    pool_factor: int
    thresholds: ThresholdTable | None = None

    @property
    def num_classes(self) -> int:
        return len(self.class_names)

    def task_code(self, class_index: int) -> TaskCode:
        return make_task_code(class_index, self.num_classes)


def build_model(
    class_names: list[str],
    image_size: int,
    scale: str = "desk",
    pool_factor: int | None = None,
    init_seed: int = 0,
) -> ModelBundle:
    """Construct a fresh bundle with deterministic weight initialization."""
    num_classes = len(class_names)
    pool = pool_factor or default_pool_factor(image_size)
    generator = AttributionGenerator(num_classes, scale=scale)
    critic = TaskCritic(num_classes, scale=scale, image_size=image_size)
    heads = PooledLogisticHeads(num_classes, image_size, pool)
    rng = torch.Generator().manual_seed(init_seed)
    init_weights(generator, rng)
    init_weights(critic, rng)
    centers = ClassCenters.zeros(num_classes, image_size)
    return ModelBundle(
        generator=generator,
        critic=critic,
        heads=heads,
        centers=centers,
        class_names=class_names,
        image_size=image_size,
        scale=scale,
        pool_factor=pool,
    )


@torch.no_grad()
def attribution_maps(bundle: ModelBundle, pixels: torch.Tensor, class_index: int) -> torch.Tensor:
    """Attribution maps (B,1,H,W) for one class, no gradients."""
    return bundle.generator(pixels, bundle.task_code(class_index))


@torch.no_grad()
def predict_dataset(
    bundle: ModelBundle, dataset, batch_size: int = 16
) -> tuple[np.ndarray, np.ndarray]:
    """Predicted probabilities (N, C) and labels (N, C) over a whole dataset."""
    n = len(dataset)
    num_classes = bundle.num_classes
    probs = np.zeros((n, num_classes), dtype=np.float64)
    labels = np.zeros((n, num_classes), dtype=np.int8)
    for start in range(0, n, batch_size):
        idx = list(range(start, min(n, start + batch_size)))
        batch = dataset.batch(idx)
        labels[idx] = batch.labels.numpy().astype(np.int8)
        for c in range(num_classes):
            maps = bundle.generator(batch.pixels, bundle.task_code(c))
            p, _ = bundle.heads.predict(maps, c)
            probs[idx, c] = p.numpy()
    return probs, labels
