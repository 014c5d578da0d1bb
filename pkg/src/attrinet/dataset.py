"""Dataset ingestion, per-class pair sampling, synthetic data and tag contamination.

A dataset on disk is a directory with

    manifest.csv        one row per image: id,path,<class columns>,boxes,masks
    meta.json           {"size", "class_names", ...} (optional for external data)
    images/*.png        8-bit grayscale
    masks/*.png         per-class binary masks, 0/255 (optional)

Boxes are encoded ``c:x:y:w:h`` (semicolon separated) in resized-pixel
coordinates, masks ``c:relative/path.png``.  Pixels are normalized to [-1, 1]
on load because the attribution generator's output stage is tanh-bounded.
"""

from __future__ import annotations

import csv
import json
import math
import shutil
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
from PIL import Image

from . import textfont
from .errors import (
    EmptyPositiveSet,
    IndexOutOfRange,
    InsufficientSamples,
    MalformedBox,
    MalformedLabel,
    MissingColumn,
    UnknownClass,
)

Box = tuple[int, int, int, int, int]  # (class_index, x, y, w, h)

PIXEL_EPS = 1e-6


# ---------------------------------------------------------------------------
# records and batches
# ---------------------------------------------------------------------------


@dataclass
class ImageRecord:
    """One manifest row: an image, its multi-hot labels and optional annotations."""

    id: str
    image_path: str
    labels: np.ndarray  # (C,) values in {0, 1}
    boxes: list[Box] = field(default_factory=list)
    seg_masks: dict[int, str] = field(default_factory=dict)

    def has_annotation(self, class_index: int) -> bool:
        if class_index in self.seg_masks:
            return True
        return any(b[0] == class_index for b in self.boxes)

    def boxes_for(self, class_index: int) -> list[tuple[int, int, int, int]]:
        return [(x, y, w, h) for (c, x, y, w, h) in self.boxes if c == class_index]


@dataclass
class ImageBatch:
    """A batch of normalized images with labels and optional per-class masks.

    Invariants are checked on construction: pixels must lie in [-1, 1] and
    masks must be binary.
    """

    pixels: torch.Tensor  # (B, 1, H, W) float32 in [-1, 1]
    labels: torch.Tensor  # (B, C) float32 multi-hot
    masks: torch.Tensor | None = None  # (B, C, H, W) float32 in {0, 1}
    has_gt_annotation: torch.Tensor | None = None  # (B, C) bool
    ids: list[str] = field(default_factory=list)
    indices: list[int] = field(default_factory=list)

    def __post_init__(self):
        if self.pixels.ndim != 4 or self.pixels.shape[1] != 1:
            raise ValueError(f"pixels must be (B,1,H,W), got {tuple(self.pixels.shape)}")
        if self.pixels.shape[2] != self.pixels.shape[3]:
            raise ValueError("images must be square")
        lo, hi = float(self.pixels.min()), float(self.pixels.max())
        if lo < -1.0 - PIXEL_EPS or hi > 1.0 + PIXEL_EPS:
            raise ValueError(f"pixel values outside [-1,1]: min={lo}, max={hi}")
        if self.labels.shape[0] != self.pixels.shape[0]:
            raise ValueError("labels/pixels batch size mismatch")
        if self.masks is not None:
            binary = (self.masks == 0) | (self.masks == 1)
            if not bool(binary.all()):
                raise ValueError("masks must be binary {0,1}")

    def __len__(self) -> int:
        return self.pixels.shape[0]

    @property
    def image_size(self) -> int:
        return self.pixels.shape[2]


@dataclass
class ContaminationSpec:
    """Where and how to stamp a spurious tag onto positives of one class."""

    target_class: int
    fraction: float
    tag_text: str = "CXR-ROOM1"
    tag_region: tuple[int, int, int, int] | None = None  # (x, y, w, h); None = auto
    pixel_value: float = 1.0

    def __post_init__(self):
        if not 0.0 <= self.fraction <= 1.0:
            raise ValueError(f"fraction must be in [0,1], got {self.fraction}")
        if not -1.0 <= self.pixel_value <= 1.0:
            raise ValueError("pixel_value must be in [-1,1]")

    def resolve_region(self, image_size: int) -> tuple[int, int, int, int]:
        """Tag placement for a given image size; defaults to the top-left corner."""
        scale = max(1, image_size // 64)
        w, h = textfont.text_extent(self.tag_text, scale)
        if self.tag_region is not None:
            x, y, rw, rh = self.tag_region
            if rw < w or rh < h:
                raise ValueError(
                    f"tag_region {self.tag_region} too small for text box ({w}x{h})"
                )
        else:
            x, y = 4 * scale, 3 * scale
        if x < 0 or y < 0 or x + w > image_size or y + h > image_size:
            raise ValueError(f"tag box ({x},{y},{w},{h}) outside {image_size}px image")
        return (x, y, w, h)


# ---------------------------------------------------------------------------
# pixel I/O
# ---------------------------------------------------------------------------


def load_image(path: Path | str, size: int | None = None) -> np.ndarray:
    """Load a grayscale PNG as float32 (H, W) in [-1, 1], resizing if asked."""
    img = Image.open(path).convert("L")
    if size is not None and img.size != (size, size):
        img = img.resize((size, size), Image.BILINEAR)
    arr = np.asarray(img, dtype=np.float32)
    return arr / 127.5 - 1.0


def save_image(path: Path | str, values: np.ndarray) -> None:
    """Quantize a [-1, 1] float array to 8-bit grayscale PNG."""
    arr = np.clip(np.rint((values + 1.0) * 127.5), 0, 255).astype(np.uint8)
    Image.fromarray(arr, mode="L").save(path)


def load_binary_mask(path: Path | str, size: int | None = None) -> np.ndarray:
    """Load a 0/255 mask PNG as float32 (H, W) in {0, 1} (nearest-neighbor resize)."""
    img = Image.open(path).convert("L")
    if size is not None and img.size != (size, size):
        img = img.resize((size, size), Image.NEAREST)
    return (np.asarray(img) >= 128).astype(np.float32)


def save_binary_mask(path: Path | str, mask: np.ndarray) -> None:
    arr = np.where(np.asarray(mask) > 0.5, 255, 0).astype(np.uint8)
    Image.fromarray(arr, mode="L").save(path)


def scale_box(box: tuple[int, int, int, int], sx: float, sy: float) -> tuple[int, int, int, int]:
    """Proportional box rescale, keeping at least one pixel of extent."""
    x, y, w, h = box
    return (
        int(round(x * sx)),
        int(round(y * sy)),
        max(1, int(round(w * sx))),
        max(1, int(round(h * sy))),
    )


# ---------------------------------------------------------------------------
# manifests
# ---------------------------------------------------------------------------


def _parse_boxes(text: str, row_id: str, num_classes: int) -> list[Box]:
    boxes: list[Box] = []
    if not text:
        return boxes
    for chunk in text.split(";"):
        parts = chunk.split(":")
        if len(parts) != 5:
            raise MalformedBox(row_id, f"expected c:x:y:w:h, got {chunk!r}")
        try:
            c, x, y, w, h = (int(p) for p in parts)
        except ValueError:
            raise MalformedBox(row_id, f"non-integer field in {chunk!r}") from None
        if not 0 <= c < num_classes:
            raise UnknownClass(row_id, c)
        if x < 0 or y < 0 or w <= 0 or h <= 0:
            raise MalformedBox(row_id, f"box ({x},{y},{w},{h}) has invalid extent")
        boxes.append((c, x, y, w, h))
    return boxes


def _parse_masks(text: str, row_id: str, num_classes: int) -> dict[int, str]:
    masks: dict[int, str] = {}
    if not text:
        return masks
    for chunk in text.split(";"):
        c_str, _, rel = chunk.partition(":")
        try:
            c = int(c_str)
        except ValueError:
            raise UnknownClass(row_id, c_str) from None
        if not 0 <= c < num_classes or not rel:
            raise UnknownClass(row_id, c_str)
        masks[c] = rel
    return masks


def load_manifest(
    path: Path | str,
    class_names: list[str],
    image_size: int | None = None,
) -> list[ImageRecord]:
    """Parse and validate a manifest CSV into a list of ``ImageRecord``.

    Box bounds against the image extent are only checked when ``image_size``
    is known.
    """
    path = Path(path)
    num_classes = len(class_names)
    records: list[ImageRecord] = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        for col in ["id", "path", *class_names, "boxes", "masks"]:
            if col not in header:
                raise MissingColumn(col, str(path))
        for row in reader:
            row_id = row["id"]
            labels = np.zeros(num_classes, dtype=np.int8)
            for ci, name in enumerate(class_names):
                raw = row[name].strip()
                if raw not in ("0", "1"):
                    raise MalformedLabel(row_id, f"column {name!r} has value {raw!r}")
                labels[ci] = int(raw)
            boxes = _parse_boxes(row["boxes"].strip(), row_id, num_classes)
            if image_size is not None:
                for (c, x, y, w, h) in boxes:
                    if x + w > image_size or y + h > image_size:
                        raise MalformedBox(
                            row_id, f"box ({x},{y},{w},{h}) exceeds {image_size}px image"
                        )
            masks = _parse_masks(row["masks"].strip(), row_id, num_classes)
            records.append(ImageRecord(row_id, row["path"], labels, boxes, masks))
    return records


def save_manifest(path: Path | str, records: list[ImageRecord], class_names: list[str]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["id", "path", *class_names, "boxes", "masks"])
        for rec in records:
            boxes = ";".join(":".join(str(v) for v in b) for b in rec.boxes)
            masks = ";".join(f"{c}:{p}" for c, p in sorted(rec.seg_masks.items()))
            writer.writerow([rec.id, rec.image_path, *rec.labels.tolist(), boxes, masks])


# ---------------------------------------------------------------------------
# on-disk dataset with pair sampling
# ---------------------------------------------------------------------------


class ManifestDataset:
    """A manifest-backed dataset with cached pixels and per-class pair sampling."""

    def __init__(
        self,
        root: Path | str,
        class_names: list[str] | None = None,
        image_size: int | None = None,
    ):
        self.root = Path(root)
        meta_path = self.root / "meta.json"
        self.meta: dict = {}
        if meta_path.exists():
            self.meta = json.loads(meta_path.read_text())
        self.class_names: list[str] = class_names or self.meta.get("class_names") or []
        if not self.class_names:
            raise MissingColumn("class_names", str(meta_path))
        self.image_size: int = image_size or int(self.meta.get("size", 0)) or 0
        native_size = None
        self.records = load_manifest(self.root / "manifest.csv", self.class_names, None)
        if self.records:
            with Image.open(self.root / self.records[0].image_path) as probe:
                native_size = probe.size[0]
        if not self.image_size:
            self.image_size = native_size or 0
        # loading at a non-native resolution: masks are resized nearest-neighbor
        # on load, boxes are rescaled proportionally here
        if native_size and native_size != self.image_size:
            ratio = self.image_size / native_size
            for rec in self.records:
                rec.boxes = [
                    (c, *scale_box((x, y, w, h), ratio, ratio))
                    for (c, x, y, w, h) in rec.boxes
                ]
        for rec in self.records:
            for (c, x, y, w, h) in rec.boxes:
                if x + w > self.image_size or y + h > self.image_size:
                    raise MalformedBox(
                        rec.id, f"box ({x},{y},{w},{h}) exceeds {self.image_size}px image"
                    )
        self._pixel_cache: dict[int, np.ndarray] = {}
        self._mask_cache: dict[tuple[int, int], np.ndarray | None] = {}
        labels = np.stack([r.labels for r in self.records]) if self.records else np.zeros((0, len(self.class_names)))
        self._pos_indices = [np.flatnonzero(labels[:, c] == 1) for c in range(self.num_classes)]
        self._neg_indices = [np.flatnonzero(labels[:, c] == 0) for c in range(self.num_classes)]

    @property
    def num_classes(self) -> int:
        return len(self.class_names)

    def __len__(self) -> int:
        return len(self.records)

    def positives(self, class_index: int) -> np.ndarray:
        return self._pos_indices[class_index]

    def negatives(self, class_index: int) -> np.ndarray:
        return self._neg_indices[class_index]

    def image(self, index: int) -> np.ndarray:
        if index not in self._pixel_cache:
            rec = self.records[index]
            self._pixel_cache[index] = load_image(self.root / rec.image_path, self.image_size)
        return self._pixel_cache[index]

    def annotation_mask(self, index: int, class_index: int) -> np.ndarray | None:
        """Ground-truth pixel mask for (sample, class): seg mask if present, else
        rasterized boxes. None when the record carries no annotation for the class."""
        key = (index, class_index)
        if key not in self._mask_cache:
            rec = self.records[index]
            result: np.ndarray | None = None
            if class_index in rec.seg_masks:
                result = load_binary_mask(self.root / rec.seg_masks[class_index], self.image_size)
            else:
                boxes = rec.boxes_for(class_index)
                if boxes:
                    result = rasterize_boxes(boxes, self.image_size, self.image_size)
            self._mask_cache[key] = result
        return self._mask_cache[key]

    def record_mask_loader(self):
        """Loader mapping (record, class) to its annotation mask, for guidance."""
        index_by_id = {r.id: i for i, r in enumerate(self.records)}

        def loader(record: ImageRecord, class_index: int) -> np.ndarray | None:
            return self.annotation_mask(index_by_id[record.id], class_index)

        return loader

    def batch(self, indices, with_masks: bool = False) -> ImageBatch:
        indices = [int(i) for i in indices]
        pixels = np.stack([self.image(i) for i in indices])[:, None, :, :]
        labels = np.stack([self.records[i].labels for i in indices]).astype(np.float32)
        masks = None
        has_gt = None
        if with_masks:
            b, c = len(indices), self.num_classes
            masks = np.zeros((b, c, self.image_size, self.image_size), dtype=np.float32)
            has_gt = np.zeros((b, c), dtype=bool)
            for bi, i in enumerate(indices):
                for ci in range(c):
                    m = self.annotation_mask(i, ci)
                    if m is not None:
                        masks[bi, ci] = m
                        has_gt[bi, ci] = True
        return ImageBatch(
            pixels=torch.from_numpy(np.ascontiguousarray(pixels)),
            labels=torch.from_numpy(labels),
            masks=None if masks is None else torch.from_numpy(masks),
            has_gt_annotation=None if has_gt is None else torch.from_numpy(has_gt),
            ids=[self.records[i].id for i in indices],
            indices=indices,
        )

    def sample_pair(
        self,
        class_index: int,
        batch_size: int,
        rng_seed,
        with_masks: bool = False,
        oversample_annotated_freq: float | None = None,
    ) -> tuple[ImageBatch, ImageBatch]:
        """Draw one positive and one negative batch for a class, reproducibly.

        With ``oversample_annotated_freq`` set, each positive slot is filled from
        the annotated-positive pool with that probability (sampling with
        replacement); otherwise batches are drawn uniformly without replacement.
        """
        if not 0 <= class_index < self.num_classes:
            raise IndexOutOfRange(f"class {class_index} not in [0,{self.num_classes})")
        rng = np.random.default_rng(rng_seed)
        pos_pool = self._pos_indices[class_index]
        neg_pool = self._neg_indices[class_index]
        if len(pos_pool) < batch_size:
            raise InsufficientSamples(class_index, batch_size, len(pos_pool), positive=True)
        if len(neg_pool) < batch_size:
            raise InsufficientSamples(class_index, batch_size, len(neg_pool), positive=False)

        if oversample_annotated_freq is not None:
            annotated = np.array(
                [i for i in pos_pool if self.records[i].has_annotation(class_index)], dtype=int
            )
            plain = np.array(
                [i for i in pos_pool if not self.records[i].has_annotation(class_index)], dtype=int
            )
            if len(annotated) == 0 or len(plain) == 0:
                pos_idx = rng.choice(pos_pool, size=batch_size, replace=False)
            else:
                take_annot = rng.random(batch_size) < oversample_annotated_freq
                pos_idx = np.where(
                    take_annot,
                    rng.choice(annotated, size=batch_size, replace=True),
                    rng.choice(plain, size=batch_size, replace=True),
                )
        else:
            pos_idx = rng.choice(pos_pool, size=batch_size, replace=False)
        neg_idx = rng.choice(neg_pool, size=batch_size, replace=False)
        return (
            self.batch(pos_idx, with_masks=with_masks),
            self.batch(neg_idx, with_masks=with_masks),
        )


def rasterize_boxes(boxes, height: int, width: int) -> np.ndarray:
    """Binary union of (x, y, w, h) boxes over half-open pixel intervals."""
    out = np.zeros((height, width), dtype=np.float32)
    for (x, y, w, h) in boxes:
        out[max(0, y) : min(height, y + h), max(0, x) : min(width, x + w)] = 1.0
    return out


# ---------------------------------------------------------------------------
# synthetic dataset
# ---------------------------------------------------------------------------

# Per-class generating features at a 64px reference scale.  Each disease is a
# fixed-location structure (position/extent jitter only), so the negative and
# positive distributions differ exactly on the feature region.
_FEATURE_NAMES = [
    "central_mass",
    "corner_wedge",
    "upper_band",
    "right_column",
    "lower_left_spot",
    "upper_right_block",
]

MAX_SYNTHETIC_CLASSES = len(_FEATURE_NAMES)


def _feature_mask(class_index: int, size: int, rng: np.random.Generator) -> np.ndarray:
    """Boolean pixel mask of the generating feature for one class."""
    s = size / 64.0
    yy, xx = np.mgrid[0:size, 0:size]
    jit = lambda a: int(round(rng.integers(-a, a + 1) * s))  # noqa: E731

    if class_index == 0:  # enlarged central ellipse
        cx, cy = 32 * s + jit(1), 34 * s + jit(1)
        rx = (10 + rng.integers(-1, 2)) * s
        ry = (8 + rng.integers(-1, 2)) * s
        return ((xx - cx) / rx) ** 2 + ((yy - cy) / ry) ** 2 <= 1.0
    if class_index == 1:  # wedge anchored at the lower-right of its cell
        x0, y0 = int(37 * s) + jit(1), int(37 * s) + jit(1)
        ln = int(round((14 + rng.integers(-1, 2)) * s))
        cell = (xx >= x0) & (xx < x0 + ln) & (yy >= y0) & (yy < y0 + ln)
        return cell & ((xx - x0) + (yy - y0) >= ln - 1)
    if class_index == 2:  # horizontal band in the upper body
        y0 = int(15 * s) + jit(1)
        hh = int(round((5 + rng.integers(0, 2)) * s))
        return (yy >= y0) & (yy < y0 + hh) & (xx >= int(14 * s)) & (xx < int(50 * s))
    if class_index == 3:  # vertical column on the right
        x0 = int(44 * s) + jit(1)
        ww = int(round((5 + rng.integers(0, 2)) * s))
        return (xx >= x0) & (xx < x0 + ww) & (yy >= int(24 * s)) & (yy < int(46 * s))
    if class_index == 4:  # small disk lower-left
        cx, cy = 18 * s + jit(1), 44 * s + jit(1)
        r = (5 + rng.integers(-1, 2)) * s
        return (xx - cx) ** 2 + (yy - cy) ** 2 <= r**2
    if class_index == 5:  # block upper-right
        x0, y0 = int(42 * s) + jit(1), int(22 * s) + jit(1)
        ww = int(round((8 + rng.integers(-1, 2)) * s))
        return (xx >= x0) & (xx < x0 + ww) & (yy >= y0) & (yy < y0 + ww)
    raise IndexOutOfRange(f"no synthetic feature defined for class {class_index}")


def _compose_image(
    size: int, labels: np.ndarray, rng: np.random.Generator
) -> tuple[np.ndarray, dict[int, np.ndarray]]:
    """Render one synthetic image plus the exact feature masks of its positives."""
    s = size / 64.0
    yy, xx = np.mgrid[0:size, 0:size]
    canvas = np.full((size, size), -0.85, dtype=np.float64)
    body_val = -0.15 + rng.uniform(-0.05, 0.05)
    body = ((xx - 32 * s) / (26 * s)) ** 2 + ((yy - 36 * s) / (24 * s)) ** 2 <= 1.0
    canvas[body] = body_val

    # uninformative soft blobs: structured background variation
    for _ in range(int(rng.integers(2, 5))):
        bx = rng.uniform(10 * s, 54 * s)
        by = rng.uniform(16 * s, 56 * s)
        sigma = rng.uniform(3 * s, 6 * s)
        amp = rng.uniform(-0.12, 0.12)
        canvas += amp * np.exp(-((xx - bx) ** 2 + (yy - by) ** 2) / (2 * sigma**2))

    masks: dict[int, np.ndarray] = {}
    for ci in np.flatnonzero(labels):
        fm = _feature_mask(int(ci), size, rng)
        boost = 0.55 + rng.uniform(-0.05, 0.05)
        canvas[fm] = body_val + boost
        masks[int(ci)] = fm

    canvas += rng.normal(0.0, 0.02, size=canvas.shape)
    return np.clip(canvas, -1.0, 1.0), masks


def synthetic_class_names(num_classes: int) -> list[str]:
    if not 2 <= num_classes <= MAX_SYNTHETIC_CLASSES:
        raise ValueError(f"num_classes must be in [2,{MAX_SYNTHETIC_CLASSES}]")
    return _FEATURE_NAMES[:num_classes]


def make_synthetic(
    out_dir: Path | str,
    num_samples: int,
    num_classes: int,
    size: int,
    rng_seed: int,
    annotated_fraction: float = 1.0,
) -> Path:
    """Generate a desk-scale synthetic dataset on disk and return its root.

    Labels are independent per-class Bernoulli(0.5) draws, so findings
    co-occur.  ``annotated_fraction`` controls which manifest rows carry the
    ground-truth feature masks and boxes (the mask PNGs are written only for
    those rows).  Identical seeds produce byte-identical datasets.
    """
    if num_samples < 1:
        raise ValueError("num_samples must be positive")
    if size < 32:
        raise ValueError("size must be >= 32")
    class_names = synthetic_class_names(num_classes)

    out = Path(out_dir)
    (out / "images").mkdir(parents=True, exist_ok=True)
    (out / "masks").mkdir(exist_ok=True)

    rng = np.random.default_rng(rng_seed)
    labels = (rng.random((num_samples, num_classes)) < 0.5).astype(np.int8)
    # guarantee both label values exist per class so pair sampling is possible
    for c in range(num_classes):
        col = labels[:, c]
        if col.min() == col.max():
            col[int(c) % num_samples] = 1 - col[int(c) % num_samples]

    n_annotated = int(round(annotated_fraction * num_samples))
    annotated = np.zeros(num_samples, dtype=bool)
    annotated[rng.permutation(num_samples)[:n_annotated]] = True

    records: list[ImageRecord] = []
    for i in range(num_samples):
        rec_id = f"s{i:06d}"
        img, masks = _compose_image(size, labels[i], rng)
        rel_img = f"images/{rec_id}.png"
        save_image(out / rel_img, img)
        boxes: list[Box] = []
        seg_masks: dict[int, str] = {}
        if annotated[i]:
            for ci, fm in masks.items():
                ys, xs = np.nonzero(fm)
                if len(ys) == 0:
                    continue
                x0, y0 = int(xs.min()), int(ys.min())
                boxes.append((ci, x0, y0, int(xs.max()) - x0 + 1, int(ys.max()) - y0 + 1))
                rel_mask = f"masks/{rec_id}_c{ci}.png"
                save_binary_mask(out / rel_mask, fm)
                seg_masks[ci] = rel_mask
        records.append(ImageRecord(rec_id, rel_img, labels[i].copy(), boxes, seg_masks))

    save_manifest(out / "manifest.csv", records, class_names)
    meta = {
        "size": size,
        "class_names": class_names,
        "num_samples": num_samples,
        "seed": int(rng_seed),
        "annotated_fraction": annotated_fraction,
    }
    (out / "meta.json").write_text(json.dumps(meta, indent=2) + "\n")
    return out


# ---------------------------------------------------------------------------
# contamination
# ---------------------------------------------------------------------------


def contaminate(
    dataset_root: Path | str,
    spec: ContaminationSpec,
    rng_seed: int,
    out_dir: Path | str,
) -> Path:
    """Copy a dataset, stamping the tag onto a fraction of one class's positives.

    Writes ``injection_log.jsonl`` (one line per contaminated image with the
    tag bounding box) into the new dataset directory.  Untouched images are
    copied byte-identically.
    """
    ds = ManifestDataset(dataset_root)
    if not 0 <= spec.target_class < ds.num_classes:
        raise IndexOutOfRange(f"target class {spec.target_class} not in [0,{ds.num_classes})")
    pos = ds.positives(spec.target_class)
    if len(pos) == 0:
        raise EmptyPositiveSet(spec.target_class)
    region = spec.resolve_region(ds.image_size)

    k = int(math.floor(spec.fraction * len(pos) + 0.5))
    rng = np.random.default_rng(rng_seed)
    selected = set(int(i) for i in rng.choice(pos, size=k, replace=False)) if k else set()

    out = Path(out_dir)
    (out / "images").mkdir(parents=True, exist_ok=True)
    src = Path(dataset_root)
    if (src / "masks").exists():
        shutil.copytree(src / "masks", out / "masks", dirs_exist_ok=True)
    shutil.copy2(src / "manifest.csv", out / "manifest.csv")
    if (src / "meta.json").exists():
        shutil.copy2(src / "meta.json", out / "meta.json")

    scale = max(1, ds.image_size // 64)
    x, y, w, h = region
    log_lines = []
    for i, rec in enumerate(ds.records):
        dst = out / rec.image_path
        if i in selected:
            img = load_image(src / rec.image_path, ds.image_size)
            img = textfont.render_text(img, spec.tag_text, x, y, spec.pixel_value, scale)
            save_image(dst, img)
            log_lines.append(
                json.dumps({"id": rec.id, "class": spec.target_class, "box": [x, y, w, h]})
            )
        else:
            shutil.copy2(src / rec.image_path, dst)

    (out / "injection_log.jsonl").write_text("".join(line + "\n" for line in log_lines))
    return out


def read_injection_log(path: Path | str) -> list[dict]:
    """Parse an injection log into dicts with keys id, class, box."""
    lines = Path(path).read_text().splitlines()
    return [json.loads(line) for line in lines if line.strip()]
