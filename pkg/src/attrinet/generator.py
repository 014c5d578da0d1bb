"""Task-switched class attribution generator.

Given an image and a task code the generator produces a residual attribution
map whose addition to the input yields a counterfactual for the selected
class.  The output stage ``tanh(x + residual) - x`` bounds the counterfactual
to [-1, 1] by construction.
"""

from __future__ import annotations

import torch
import torch.nn as nn

from .errors import ShapeMismatch
from .layers import (
    TASK_CODE_UPSAMPLING,
    AdaConv,
    AdaDeconv,
    AdaResBlock,
    TaskCode,
    TaskEmbedding,
)

# channel widths of the three encoder stages at full scale; desk scale
# divides by 4 and shortens the bottleneck from 6 to 3 blocks
_SCALES = {
    "full": {"channels": (64, 128, 256), "bottlenecks": 6},
    "desk": {"channels": (16, 32, 64), "bottlenecks": 3},
}


class AttributionGenerator(nn.Module):
    """Encoder / bottleneck / decoder network conditioned through AdaIN stages."""

    def __init__(self, num_classes: int, scale: str = "desk"):
        super().__init__()
        if scale not in _SCALES:
            raise ValueError(f"scale must be one of {sorted(_SCALES)}, got {scale!r}")
        self.num_classes = num_classes
        self.scale = scale
        cfg = _SCALES[scale]
        c0, c1, c2 = cfg["channels"]
        self.channels = (c0, c1, c2)
        embed_dim = TASK_CODE_UPSAMPLING * num_classes
        self.embed = TaskEmbedding(embed_dim)
        self.down = nn.ModuleList(
            [
                AdaConv(1, c0, 7, 1, 3, embed_dim),
                AdaConv(c0, c1, 4, 2, 1, embed_dim),
                AdaConv(c1, c2, 4, 2, 1, embed_dim),
            ]
        )
        self.bottleneck = nn.ModuleList(
            [AdaResBlock(c2, embed_dim) for _ in range(cfg["bottlenecks"])]
        )
        self.up = nn.ModuleList(
            [
                AdaDeconv(c2, c1, 4, 2, 1, embed_dim),
                AdaDeconv(c1, c0, 4, 2, 1, embed_dim),
            ]
        )
        self.out_conv = nn.Conv2d(c0, 1, 7, 1, 3)

    def _check_input(self, x: torch.Tensor, task: TaskCode) -> None:
        if x.ndim != 4 or x.shape[1] != 1:
            raise ShapeMismatch(f"expected (B,1,H,W) input, got {tuple(x.shape)}")
        if x.shape[2] % 4 != 0 or x.shape[3] % 4 != 0:
            raise ShapeMismatch(
                f"spatial dims must be divisible by 4, got {tuple(x.shape[2:])}"
            )
        if task.length != TASK_CODE_UPSAMPLING * self.num_classes:
            raise ShapeMismatch(
                f"task code length {task.length} incompatible with "
                f"{self.num_classes} classes"
            )

    def residual(self, x: torch.Tensor, task: TaskCode) -> torch.Tensor:
        """Pre-tanh residual, before the bounded output stage."""
        self._check_input(x, task)
        emb = self.embed(task.vector.to(x.dtype))
        h = x
        for stage in self.down:
            h = stage(h, emb)
        for block in self.bottleneck:
            h = block(h, emb)
        for stage in self.up:
            h = stage(h, emb)
        return self.out_conv(h)

    def forward(self, x: torch.Tensor, task: TaskCode) -> torch.Tensor:
        """Attribution map for one class: ``tanh(x + residual) - x``."""
        return torch.tanh(x + self.residual(x, task)) - x


def counterfactual(x: torch.Tensor, attribution: torch.Tensor) -> torch.Tensor:
    """The counterfactual image ``x + attribution``."""
    if x.shape != attribution.shape:
        raise ShapeMismatch(
            f"image {tuple(x.shape)} and attribution {tuple(attribution.shape)} differ"
        )
    return x + attribution
