"""Training objectives and learnable class centers.

Conventions, fixed once for all modules:
  - L1 regularization averages |pixels| per image, then means over the batch.
    A per-image pixel SUM would make the effective sparsity pressure grow
    with the pixel count and, at the default term weights, flatten every
    attribution map to zero; the per-pixel mean keeps the published weights
    meaningful at any resolution.
  - The center loss uses the squared L2 distance summed over pixels, halved,
    then meaned over the batch.
  - The guidance (energy) loss is computed per image and meaned over the
    items that carry a mask; an all-zero attribution contributes 0 since it
    has no misplaced energy.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields

import torch

from .errors import EmptyBatch, ShapeMismatch

GUIDANCE_EPS = 1e-8


@dataclass
class LossWeights:
    """Term weights of the generator objective plus the L1 class weighting."""

    adv: float = 1.0
    cls: float = 100.0
    reg: float = 100.0
    ctr: float = 0.01
    guid: float = 30.0
    l1_neg: float = 2.0  # weight on class-negative maps (should shrink to zero)
    l1_pos: float = 1.0

    def __post_init__(self):
        for f in fields(self):
            if getattr(self, f.name) < 0:
                raise ValueError(f"loss weight {f.name} must be nonnegative")

    @classmethod
    def from_dict(cls, data: dict) -> "LossWeights":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown loss weight keys: {sorted(unknown)}")
        return cls(**data)


@dataclass
class ClassCenterPair:
    """Learnable mean attribution maps of one class, for each label bit."""

    neg: torch.Tensor  # (H, W)
    pos: torch.Tensor  # (H, W)

    def get(self, label_bit: int) -> torch.Tensor:
        return self.pos if label_bit else self.neg


@dataclass
class ClassCenters:
    """Center pairs for all classes."""

    pairs: list[ClassCenterPair]

    @classmethod
    def zeros(cls, num_classes: int, image_size: int) -> "ClassCenters":
        return cls(
            [
                ClassCenterPair(
                    neg=torch.zeros(image_size, image_size),
                    pos=torch.zeros(image_size, image_size),
                )
                for _ in range(num_classes)
            ]
        )

    def __getitem__(self, class_index: int) -> ClassCenterPair:
        return self.pairs[class_index]

    def __len__(self) -> int:
        return len(self.pairs)


# ---------------------------------------------------------------------------
# individual terms
# ---------------------------------------------------------------------------


def critic_loss(
    real_neg_scores: torch.Tensor,
    fake_scores: torch.Tensor,
    gp: torch.Tensor | float = 0.0,
    gp_coeff: float = 10.0,
) -> torch.Tensor:
    """Critic objective: push real-negative scores up, fake scores down."""
    if real_neg_scores.numel() == 0 or fake_scores.numel() == 0:
        raise EmptyBatch("critic loss needs nonempty real and fake scores")
    return -real_neg_scores.mean() + fake_scores.mean() + gp_coeff * gp


def adversarial_loss(fake_scores: torch.Tensor) -> torch.Tensor:
    """Generator's adversarial term: raise the critic's score of fakes."""
    if fake_scores.numel() == 0:
        raise EmptyBatch("adversarial loss needs nonempty fake scores")
    return -fake_scores.mean()


def _per_image_l1(maps: torch.Tensor) -> torch.Tensor:
    return maps.abs().flatten(1).mean(dim=1)


def reg_loss(
    neg_maps: torch.Tensor | None,
    pos_maps: torch.Tensor | None,
    l1_neg: float = 2.0,
    l1_pos: float = 1.0,
) -> torch.Tensor:
    """Sparsity term: weighted per-image mean |pixel| of negative and positive maps."""
    total = torch.zeros(())
    if neg_maps is not None and neg_maps.numel():
        total = total + l1_neg * _per_image_l1(neg_maps).mean()
    if pos_maps is not None and pos_maps.numel():
        total = total + l1_pos * _per_image_l1(pos_maps).mean()
    return total


def classification_loss(logits: torch.Tensor, targets: torch.Tensor) -> torch.Tensor:
    """Binary cross entropy on sigmoid(logits), meaned over the batch.

    Computed from logits for numerical stability.
    """
    return torch.nn.functional.binary_cross_entropy_with_logits(
        logits, targets.to(logits.dtype)
    )


def center_loss(maps: torch.Tensor, label_bit: int, pair: ClassCenterPair) -> torch.Tensor:
    """Half the mean squared L2 distance between maps and their class center."""
    center = pair.get(label_bit).detach().to(maps.dtype)
    if maps.shape[-2:] != center.shape:
        raise ShapeMismatch(
            f"maps {tuple(maps.shape[-2:])} vs center {tuple(center.shape)}"
        )
    diff = maps.flatten(1) - center.flatten()
    return 0.5 * (diff**2).sum(dim=1).mean()


def update_centers(
    pair: ClassCenterPair, maps: torch.Tensor, label_bit: int, lr: float
) -> None:
    """One SGD step on the center: ``v <- v - lr * mean(v - m)`` (in place).

    A batch with no items leaves the center unchanged.
    """
    if maps.numel() == 0:
        return
    center = pair.get(label_bit)
    with torch.no_grad():
        grad = (center.unsqueeze(0) - maps.detach().squeeze(1)).mean(dim=0)
        center -= lr * grad


def guidance_loss(
    maps: torch.Tensor,
    masks: torch.Tensor,
    eps: float = GUIDANCE_EPS,
) -> torch.Tensor:
    """Energy loss: one minus the fraction of |map| mass inside the mask.

    ``maps`` is (B,1,H,W) or (H,W); ``masks`` matches spatially, binary or
    soft in [0,1].  Items whose total energy is below ``eps`` contribute 0.
    """
    if maps.ndim == 2:
        maps = maps.unsqueeze(0).unsqueeze(0)
    if masks.ndim == 2:
        masks = masks.unsqueeze(0).expand(maps.shape[0], -1, -1)
    if masks.ndim == 4:
        masks = masks.squeeze(1)
    if masks.shape[-2:] != maps.shape[-2:] or masks.shape[0] != maps.shape[0]:
        raise ShapeMismatch(
            f"maps {tuple(maps.shape)} vs masks {tuple(masks.shape)}"
        )
    mag = maps.abs().squeeze(1)
    inside = (mag * masks.to(mag.dtype)).flatten(1).sum(dim=1)
    total = mag.flatten(1).sum(dim=1)
    ratio = inside / total.clamp_min(eps)
    per_item = torch.where(total < eps, torch.zeros_like(ratio), 1.0 - ratio)
    return per_item.mean()


@dataclass
class GeneratorLossTerms:
    """Unweighted per-class loss terms of one generator update."""

    adv: torch.Tensor | float
    cls: torch.Tensor | float
    reg: torch.Tensor | float
    ctr: torch.Tensor | float
    guid: torch.Tensor | float | None = None  # None when guidance is disabled


def total_generator_loss(
    terms: GeneratorLossTerms | list[GeneratorLossTerms],
    weights: LossWeights,
) -> torch.Tensor:
    """Weighted sum of the generator terms, added up over classes.

    Accumulated in float64 so the weighted combination is exact regardless of
    the training dtype.
    """
    if isinstance(terms, GeneratorLossTerms):
        terms = [terms]
    total = torch.zeros((), dtype=torch.float64)
    for t in terms:
        total = (
            total
            + weights.adv * t.adv
            + weights.cls * t.cls
            + weights.reg * t.reg
            + weights.ctr * t.ctr
        )
        if t.guid is not None:
            total = total + weights.guid * t.guid
    return total
