"""Shared network building blocks: task codes, task embeddings and AdaIN stages.

The generator and the critic are both switched between diagnostic tasks by the
same mechanism: a one-hot class selector is upsampled by repetition, mapped
through a small fully connected stack, and injected into every stage through
adaptive instance normalization (per-channel scale and shift predicted from
the embedding).
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import IndexOutOfRange

TASK_CODE_UPSAMPLING = 20
TASK_EMBEDDING_LAYERS = 8
INSTANCE_NORM_EPS = 1e-5


@dataclass
class TaskCode:
    """One-hot class selector upsampled by repetition to length 20*C."""

    class_index: int
    vector: torch.Tensor  # (20*C,) float32, a contiguous block of ones

    @property
    def length(self) -> int:
        return int(self.vector.shape[0])


def make_task_code(class_index: int, num_classes: int) -> TaskCode:
    """Build the upsampled one-hot code selecting one diagnostic task."""
    if not 0 <= class_index < num_classes:
        raise IndexOutOfRange(
            f"class index {class_index} not in [0,{num_classes})"
        )
    one_hot = torch.zeros(num_classes)
    one_hot[class_index] = 1.0
    vector = one_hot.repeat_interleave(TASK_CODE_UPSAMPLING)
    return TaskCode(class_index=class_index, vector=vector)


def init_weights(module: nn.Module, rng: torch.Generator, std: float = 0.02) -> None:
    """Deterministic weight init (in place).

    Convs and affine heads get normal(0, std); the task-embedding stacks get
    He init instead, since an 8-layer stack at std 0.02 would shrink the
    conditioning signal to numerical noise.
    """
    embed_params = set()
    for m in module.modules():
        if isinstance(m, TaskEmbedding):
            for layer in m.layers:
                with torch.no_grad():
                    he_std = (2.0 / layer.weight.shape[1]) ** 0.5
                    layer.weight.normal_(0.0, he_std, generator=rng)
                    layer.bias.zero_()
                embed_params.add(id(layer.weight))
                embed_params.add(id(layer.bias))
    for m in module.modules():
        if isinstance(m, (nn.Conv2d, nn.ConvTranspose2d, nn.Linear)):
            if id(m.weight) in embed_params:
                continue
            with torch.no_grad():
                m.weight.normal_(0.0, std, generator=rng)
                if m.bias is not None:
                    m.bias.zero_()


class TaskEmbedding(nn.Module):
    """Stack of equal-width fully connected layers mapping task code to embedding.

    ReLU between layers, linear output.
    """

    def __init__(self, width: int, num_layers: int = TASK_EMBEDDING_LAYERS):
        super().__init__()
        self.width = width
        self.layers = nn.ModuleList([nn.Linear(width, width) for _ in range(num_layers)])

    def forward(self, code: torch.Tensor) -> torch.Tensor:
        h = code
        for i, layer in enumerate(self.layers):
            h = layer(h)
            if i < len(self.layers) - 1:
                h = F.relu(h)
        return h


def instance_norm(x: torch.Tensor, eps: float = INSTANCE_NORM_EPS) -> torch.Tensor:
    """Per-sample, per-channel normalization over the spatial dims.

    Written with plain tensor ops so double backward (needed by the gradient
    penalty) is always available.
    """
    mu = x.mean(dim=(2, 3), keepdim=True)
    var = x.var(dim=(2, 3), keepdim=True, unbiased=False)
    return (x - mu) / torch.sqrt(var + eps)


class AdaIN(nn.Module):
    """Adaptive instance normalization: scale/shift predicted from an embedding."""

    def __init__(self, embed_dim: int, num_features: int):
        super().__init__()
        self.affine = nn.Linear(embed_dim, 2 * num_features)
        self.num_features = num_features

    def style_params(self, embedding: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        """The (scale, shift) pair this stage derives from an embedding."""
        h = self.affine(embedding)
        gamma, beta = h.chunk(2, dim=-1)
        return 1.0 + gamma, beta

    def forward(self, x: torch.Tensor, embedding: torch.Tensor) -> torch.Tensor:
        scale, shift = self.style_params(embedding)
        if scale.ndim == 1:
            scale = scale.unsqueeze(0)
            shift = shift.unsqueeze(0)
        scale = scale.unsqueeze(-1).unsqueeze(-1)
        shift = shift.unsqueeze(-1).unsqueeze(-1)
        return instance_norm(x) * scale + shift


class AdaConv(nn.Module):
    """Convolution followed by AdaIN and ReLU."""

    def __init__(self, in_ch: int, out_ch: int, kernel: int, stride: int, padding: int, embed_dim: int):
        super().__init__()
        self.conv = nn.Conv2d(in_ch, out_ch, kernel, stride, padding)
        self.adain = AdaIN(embed_dim, out_ch)

    def forward(self, x: torch.Tensor, embedding: torch.Tensor) -> torch.Tensor:
        return F.relu(self.adain(self.conv(x), embedding))


class AdaDeconv(nn.Module):
    """Transposed convolution followed by AdaIN and ReLU."""

    def __init__(self, in_ch: int, out_ch: int, kernel: int, stride: int, padding: int, embed_dim: int):
        super().__init__()
        self.conv = nn.ConvTranspose2d(in_ch, out_ch, kernel, stride, padding)
        self.adain = AdaIN(embed_dim, out_ch)

    def forward(self, x: torch.Tensor, embedding: torch.Tensor) -> torch.Tensor:
        return F.relu(self.adain(self.conv(x), embedding))


class AdaResBlock(nn.Module):
    """Residual block with a single conditioned convolution."""

    def __init__(self, channels: int, embed_dim: int):
        super().__init__()
        self.conv = nn.Conv2d(channels, channels, 3, 1, 1)
        self.adain = AdaIN(embed_dim, channels)

    def forward(self, x: torch.Tensor, embedding: torch.Tensor) -> torch.Tensor:
        return x + F.relu(self.adain(self.conv(x), embedding))
