"""Task-switched Wasserstein critic with gradient penalty.

The critic scores how much an image looks like a real class-negative sample
for the selected task.  Lipschitz-1 behaviour is encouraged by penalizing the
squared deviation of the input-gradient norm from 1 at random interpolates
between real and generated images.
"""

from __future__ import annotations

from typing import Callable

import numpy as np
import torch
import torch.nn as nn

from .errors import ShapeMismatch
from .layers import TASK_CODE_UPSAMPLING, AdaConv, TaskCode, TaskEmbedding

GRADIENT_PENALTY_COEFF = 10.0

_SCALES = {
    "full": (64, 128, 256, 512, 1024, 2048),
    "desk": (16, 32, 64, 128, 256, 512),
}


class TaskCritic(nn.Module):
    """Strided conv stack conditioned through AdaIN; one scalar score per image.

    Each stage halves the spatial extent.  The stack depth adapts to the input
    size so the final feature map keeps at least a 4x4 extent: instance
    normalization of a 1x1 map is identically zero, which would make the score
    input-independent.  At 320px input this gives the full six stages (5x5
    final map).  The final conv's score map is averaged into one scalar per
    image.
    """

    def __init__(self, num_classes: int, scale: str = "desk", image_size: int = 64):
        super().__init__()
        if scale not in _SCALES:
            raise ValueError(f"scale must be one of {sorted(_SCALES)}, got {scale!r}")
        self.num_classes = num_classes
        self.scale = scale
        self.image_size = image_size
        channels = _SCALES[scale]
        num_stages = min(len(channels), max(1, int(np.log2(image_size)) - 2))
        embed_dim = TASK_CODE_UPSAMPLING * num_classes
        self.embed = TaskEmbedding(embed_dim)
        stages = []
        in_ch = 1
        for out_ch in channels[:num_stages]:
            stages.append(AdaConv(in_ch, out_ch, 4, 2, 1, embed_dim))
            in_ch = out_ch
        self.stages = nn.ModuleList(stages)
        self.out_conv = nn.Conv2d(in_ch, 1, 3, 1, 1)

    def forward(self, x: torch.Tensor, task: TaskCode) -> torch.Tensor:
        if x.ndim != 4 or x.shape[1] != 1:
            raise ShapeMismatch(f"expected (B,1,H,W) input, got {tuple(x.shape)}")
        if task.length != TASK_CODE_UPSAMPLING * self.num_classes:
            raise ShapeMismatch(
                f"task code length {task.length} incompatible with "
                f"{self.num_classes} classes"
            )
        emb = self.embed(task.vector.to(x.dtype))
        h = x
        for stage in self.stages:
            h = stage(h, emb)
        return self.out_conv(h).mean(dim=(1, 2, 3))

    def gradient_penalty(
        self,
        real: torch.Tensor,
        fake: torch.Tensor,
        task: TaskCode,
        rng: np.random.Generator | None = None,
        eps: torch.Tensor | None = None,
    ) -> torch.Tensor:
        return gradient_penalty(lambda x: self(x, task), real, fake, rng=rng, eps=eps)


def gradient_penalty(
    score_fn: Callable[[torch.Tensor], torch.Tensor],
    real: torch.Tensor,
    fake: torch.Tensor,
    rng: np.random.Generator | None = None,
    eps: torch.Tensor | None = None,
) -> torch.Tensor:
    """Mean squared deviation from 1 of the score gradient norm at interpolates.

    The interpolation weight is drawn uniformly per batch item from ``rng``
    unless an explicit ``eps`` tensor of shape (B, 1, 1, 1) is supplied.
    """
    if real.shape != fake.shape:
        raise ShapeMismatch(
            f"real {tuple(real.shape)} and fake {tuple(fake.shape)} differ"
        )
    b = real.shape[0]
    if eps is None:
        rng = rng if rng is not None else np.random.default_rng()
        eps_np = rng.random(b).astype(np.float64)
        eps = torch.from_numpy(eps_np).to(real.dtype).view(b, 1, 1, 1)
    # keep the graph through real/fake when they carry gradients, so the
    # penalty's dependence on them via the interpolation point is visible
    interp = eps * real + (1.0 - eps) * fake
    if not interp.requires_grad:
        interp = interp.detach().requires_grad_(True)
    scores = score_fn(interp)
    grads = torch.autograd.grad(scores.sum(), interp, create_graph=True)[0]
    norms = grads.flatten(1).norm(2, dim=1)
    return ((norms - 1.0) ** 2).mean()
