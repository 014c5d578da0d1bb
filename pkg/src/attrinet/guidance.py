"""Construction and selection of guidance masks.

Masks constrain where attribution energy may live.  Besides per-record ground
truth, class-level pseudo masks are built from the few annotated records
(union or overlap-weighted count of their regions), and special masks support
a loose central square and spurious-region avoidance.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Iterable, Iterator

import numpy as np
from PIL import Image

from .dataset import ImageRecord, rasterize_boxes, save_binary_mask
from .errors import ConflictingRegions, EmptyMask, NoAnnotations

MASK_KINDS = {
    "gt",
    "pseudo_binary",
    "pseudo_weighted",
    "pseudo_bbox",
    "loose_square",
    "avoidance",
}
_BINARY_KINDS = MASK_KINDS - {"pseudo_weighted"}

MaskLoader = Callable[[ImageRecord, int], np.ndarray | None]


@dataclass
class GuidanceMask:
    """A per-class (H, W) mask; binary for all kinds except weighted pseudo."""

    values: np.ndarray
    class_index: int
    kind: str

    def __post_init__(self):
        if self.kind not in MASK_KINDS:
            raise ValueError(f"unknown mask kind {self.kind!r}")
        v = np.asarray(self.values, dtype=np.float32)
        if self.kind in _BINARY_KINDS:
            if not np.isin(v, (0.0, 1.0)).all():
                raise ValueError(f"{self.kind} mask must be binary")
        else:
            if v.min() < 0 or not np.isclose(v.max(), 1.0):
                raise ValueError("weighted mask must lie in [0,1] with max exactly 1")
        self.values = v


@dataclass
class GuidancePolicy:
    """How guidance masks are assigned to training samples.

    Modes: ``none`` (no guidance), ``full`` (per-record ground truth),
    ``mixed`` (ground truth when present, class pseudo mask otherwise) and
    ``fixed`` (one externally supplied mask per class, e.g. spurious-region
    avoidance).
    """

    mode: str = "none"
    oversample_annotated_freq: float = 0.1
    fixed_masks: dict[int, GuidanceMask] = field(default_factory=dict)

    def __post_init__(self):
        if self.mode not in {"none", "full", "mixed", "fixed"}:
            raise ValueError(f"unknown guidance mode {self.mode!r}")
        if not 0.0 <= self.oversample_annotated_freq <= 1.0:
            raise ValueError("oversample_annotated_freq must be in [0,1]")

    @property
    def enabled(self) -> bool:
        return self.mode != "none"


# ---------------------------------------------------------------------------
# builders
# ---------------------------------------------------------------------------


def _record_mask(
    record: ImageRecord,
    class_index: int,
    height: int,
    width: int,
    mask_loader: MaskLoader | None,
) -> np.ndarray | None:
    """Ground-truth mask of one record: segmentation if loadable, else boxes."""
    if mask_loader is not None:
        m = mask_loader(record, class_index)
        if m is not None:
            return np.asarray(m, dtype=np.float32)
    boxes = record.boxes_for(class_index)
    if boxes:
        return rasterize_boxes(boxes, height, width)
    return None


def build_pseudo_binary(
    records: Iterable[ImageRecord],
    class_index: int,
    height: int,
    width: int,
    mask_loader: MaskLoader | None = None,
) -> GuidanceMask:
    """Union of all available annotations for one class."""
    acc = np.zeros((height, width), dtype=np.float32)
    found = False
    for rec in records:
        m = _record_mask(rec, class_index, height, width, mask_loader)
        if m is not None:
            acc = np.maximum(acc, (m > 0).astype(np.float32))
            found = True
    if not found:
        raise NoAnnotations(class_index)
    return GuidanceMask(acc, class_index, "pseudo_binary")


def build_pseudo_weighted(
    records: Iterable[ImageRecord],
    class_index: int,
    height: int,
    width: int,
    mask_loader: MaskLoader | None = None,
) -> GuidanceMask:
    """Per-pixel annotation overlap count, normalized to a max of 1."""
    counts = np.zeros((height, width), dtype=np.float32)
    found = False
    for rec in records:
        m = _record_mask(rec, class_index, height, width, mask_loader)
        if m is not None:
            counts += (m > 0).astype(np.float32)
            found = True
    if not found:
        raise NoAnnotations(class_index)
    counts /= counts.max()
    return GuidanceMask(counts, class_index, "pseudo_weighted")


def build_pseudo_bbox(
    records: Iterable[ImageRecord],
    class_index: int,
    height: int,
    width: int,
) -> GuidanceMask:
    """Union of bounding boxes only (segmentations ignored)."""
    boxes = [b for rec in records for b in rec.boxes_for(class_index)]
    if not boxes:
        raise NoAnnotations(class_index)
    return GuidanceMask(rasterize_boxes(boxes, height, width), class_index, "pseudo_bbox")


def build_loose_square(side: int, height: int, width: int, class_index: int = 0) -> GuidanceMask:
    """Centered side x side square of ones."""
    if side <= 0:
        raise EmptyMask(f"loose square side must be positive, got {side}")
    if side > min(height, width):
        raise ValueError(f"side {side} exceeds image extent {height}x{width}")
    mask = np.zeros((height, width), dtype=np.float32)
    y0 = (height - side) // 2
    x0 = (width - side) // 2
    mask[y0 : y0 + side, x0 : x0 + side] = 1.0
    return GuidanceMask(mask, class_index, "loose_square")


def save_mask_png(mask: GuidanceMask, path) -> None:
    """Export a mask as PNG: binary kinds as 0/255, weighted as 8-bit scaled."""
    if mask.kind == "pseudo_weighted":
        arr = np.rint(mask.values * 255.0).astype(np.uint8)
        Image.fromarray(arr, mode="L").save(path)
    else:
        save_binary_mask(path, mask.values)


def default_avoidance_center_box(image_size: int) -> tuple[int, int, int, int]:
    """Center region covering the synthetic features but not the corner tag."""
    s = image_size / 64.0
    return (int(6 * s), int(12 * s), int(52 * s), int(46 * s))


def build_avoidance(
    exclusion_box: tuple[int, int, int, int],
    center_box: tuple[int, int, int, int],
    height: int,
    width: int,
    class_index: int = 0,
) -> GuidanceMask:
    """Ones on the center box, zero elsewhere; must not touch the exclusion box."""
    ex = rasterize_boxes([exclusion_box], height, width)
    inc = rasterize_boxes([center_box], height, width)
    if inc.sum() == 0:
        raise EmptyMask("center box rasterizes to an empty region")
    if (ex * inc).any():
        raise ConflictingRegions(
            f"center box {center_box} overlaps exclusion box {exclusion_box}"
        )
    return GuidanceMask(inc, class_index, "avoidance")


# ---------------------------------------------------------------------------
# selection and oversampling
# ---------------------------------------------------------------------------


def select_mask(
    record: ImageRecord,
    class_index: int,
    policy: GuidancePolicy,
    pseudo_masks: dict[int, GuidanceMask] | None,
    height: int,
    width: int,
    mask_loader: MaskLoader | None = None,
) -> GuidanceMask | None:
    """The guidance mask a policy assigns to one (record, class), or None."""
    if policy.mode == "none":
        return None
    if policy.mode == "fixed":
        return policy.fixed_masks.get(class_index)
    gt = _record_mask(record, class_index, height, width, mask_loader)
    if gt is not None:
        return GuidanceMask((gt > 0).astype(np.float32), class_index, "gt")
    if policy.mode == "mixed" and pseudo_masks:
        return pseudo_masks.get(class_index)
    return None


def avoidance_policy_from_log(
    log_entries: list[dict],
    image_size: int,
    num_classes: int,
    center_box: tuple[int, int, int, int] | None = None,
    oversample_annotated_freq: float = 0.1,
) -> GuidancePolicy:
    """Fixed-mask policy keeping attributions away from logged tag regions.

    The center region (which the model may use) is validated to be disjoint
    from every logged tag box; the same mask is applied to every class.
    """
    if not log_entries:
        raise ValueError("injection log is empty; nothing to avoid")
    center = center_box or default_avoidance_center_box(image_size)
    mask = None
    boxes = sorted({tuple(e["box"]) for e in log_entries})
    for box in boxes:
        mask = build_avoidance(box, center, image_size, image_size)
    fixed = {c: GuidanceMask(mask.values, c, "avoidance") for c in range(num_classes)}
    return GuidancePolicy(
        mode="fixed",
        oversample_annotated_freq=oversample_annotated_freq,
        fixed_masks=fixed,
    )


def oversample_indices(
    annotated_ids: list,
    unannotated_ids: list,
    freq: float,
    rng_seed,
) -> Iterator:
    """Infinite reproducible id stream with annotated ids at long-run rate ``freq``."""
    if not 0.0 <= freq <= 1.0:
        raise ValueError("freq must be in [0,1]")
    if freq > 0 and not annotated_ids:
        raise ValueError("freq > 0 requires a nonempty annotated pool")
    if freq < 1 and not unannotated_ids:
        raise ValueError("freq < 1 requires a nonempty unannotated pool")
    rng = np.random.default_rng(rng_seed)
    annotated = list(annotated_ids)
    plain = list(unannotated_ids)
    while True:
        if rng.random() < freq:
            yield annotated[int(rng.integers(len(annotated)))]
        else:
            yield plain[int(rng.integers(len(plain)))]


def split_annotated(
    records: list[ImageRecord],
    build_fraction: float = 0.4,
    rng_seed: int = 0,
) -> tuple[list[ImageRecord], list[ImageRecord]]:
    """Split annotated records into a pseudo-mask-building part and an eval part."""
    annotated = [r for r in records if r.boxes or r.seg_masks]
    rng = np.random.default_rng(rng_seed)
    perm = rng.permutation(len(annotated))
    k = int(round(build_fraction * len(annotated)))
    build = [annotated[i] for i in perm[:k]]
    rest = [annotated[i] for i in perm[k:]]
    return build, rest
