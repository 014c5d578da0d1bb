"""Local and global explanations.

The local explanation of one prediction is the attribution map weighted
elementwise by the block-upsampled classifier grid; summing its pooled version
reproduces the classification logit exactly, so the explanation *is* the
decision computation.  The global explanation combines the learned class
centers with the classifier weight grids and is independent of any input.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .errors import NumericalError, ShapeMismatch  # noqa: E402
from .model import ModelBundle  # noqa: E402

FAITHFULNESS_TOL = 1e-5


def upsample_weights(weights: np.ndarray, factor: int) -> np.ndarray:
    """Nearest-neighbor block replication of a pooled weight grid.

    Block replication (rather than smooth interpolation) keeps the pooled
    weighted map exactly equal to the logit contributions.
    """
    weights = np.asarray(weights)
    if factor == 1:
        return weights.copy()
    return np.kron(weights, np.ones((factor, factor), dtype=weights.dtype))


@dataclass
class LocalExplanation:
    weighted_map: np.ndarray  # (H, W) float64
    positive_part: np.ndarray  # (H, W) >= 0
    probability: float
    logit: float
    class_index: int


@dataclass
class GlobalExplanation:
    class_names: list[str]
    centers_pos: list[np.ndarray]  # (H, W) per class
    centers_neg: list[np.ndarray]
    weight_grids: list[np.ndarray]  # upsampled to (H, W)


def weighted_maps_batch(bundle: ModelBundle, pixels: torch.Tensor, class_index: int) -> np.ndarray:
    """Weighted attribution maps (B, H, W) in float64 for one class."""
    with torch.no_grad():
        maps = bundle.generator(pixels, bundle.task_code(class_index))
    w_up = upsample_weights(
        bundle.heads.weights[class_index].detach().numpy().astype(np.float64),
        bundle.pool_factor,
    )
    return maps.squeeze(1).numpy().astype(np.float64) * w_up


def local_explain(
    bundle: ModelBundle, pixels: torch.Tensor, class_index: int
) -> LocalExplanation:
    """Local explanation of one image's prediction for one class."""
    if pixels.ndim == 3:
        pixels = pixels.unsqueeze(0)
    if pixels.ndim != 4 or pixels.shape[0] != 1:
        raise ShapeMismatch(f"expected a single image, got {tuple(pixels.shape)}")
    with torch.no_grad():
        maps = bundle.generator(pixels, bundle.task_code(class_index))
        prob, logit = bundle.heads.predict(maps, class_index)
    weighted = weighted_maps_batch(bundle, pixels, class_index)[0]
    gamma = bundle.pool_factor
    h = weighted.shape[0] // gamma
    pooled = weighted.reshape(h, gamma, h, gamma).mean(axis=(1, 3))
    pooled_sum = float(pooled.sum())
    if abs(pooled_sum - float(logit[0])) > FAITHFULNESS_TOL:
        raise NumericalError(
            f"faithfulness identity violated: pooled sum {pooled_sum} vs logit {float(logit[0])}"
        )
    return LocalExplanation(
        weighted_map=weighted,
        positive_part=np.maximum(weighted, 0.0),
        probability=float(prob[0]),
        logit=float(logit[0]),
        class_index=class_index,
    )


def global_explain(bundle: ModelBundle) -> GlobalExplanation:
    """Input-free global explanation: class centers plus classifier grids."""
    centers_pos, centers_neg, grids = [], [], []
    for c in range(bundle.num_classes):
        centers_pos.append(bundle.centers[c].pos.numpy().astype(np.float64).copy())
        centers_neg.append(bundle.centers[c].neg.numpy().astype(np.float64).copy())
        grids.append(
            upsample_weights(
                bundle.heads.weights[c].detach().numpy().astype(np.float64),
                bundle.pool_factor,
            )
        )
    return GlobalExplanation(list(bundle.class_names), centers_pos, centers_neg, grids)


# ---------------------------------------------------------------------------
# rendering and export
# ---------------------------------------------------------------------------


def _panel(ax, values: np.ndarray, title: str, flip_sign: bool = False) -> None:
    shown = -values if flip_sign else values
    vmax = float(np.abs(shown).max()) or 1.0
    ax.imshow(shown, cmap="seismic", vmin=-vmax, vmax=vmax)
    ax.set_title(title, fontsize=8)
    ax.axis("off")


def save_local_panel(
    explanation: LocalExplanation,
    image: np.ndarray,
    path: Path | str,
    class_name: str = "",
    flip_sign: bool = False,
) -> None:
    """Render input | weighted map | positive evidence to a PNG.

    ``flip_sign`` only affects rendering, never the stored arrays.
    """
    fig, axes = plt.subplots(1, 3, figsize=(7.5, 2.8))
    axes[0].imshow(image, cmap="gray", vmin=-1, vmax=1)
    axes[0].set_title("input", fontsize=8)
    axes[0].axis("off")
    _panel(axes[1], explanation.weighted_map, f"weighted map {class_name}", flip_sign)
    _panel(axes[2], explanation.positive_part, "positive evidence", flip_sign)
    fig.suptitle(
        f"p={explanation.probability:.3f} logit={explanation.logit:.3f}", fontsize=9
    )
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def save_global_panels(explanation: GlobalExplanation, out_dir: Path | str) -> list[Path]:
    """Render per-class panels (positive center | negative center | weights)."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for c, name in enumerate(explanation.class_names):
        fig, axes = plt.subplots(1, 3, figsize=(7.5, 2.8))
        _panel(axes[0], explanation.centers_pos[c], f"{name}: positive center")
        _panel(axes[1], explanation.centers_neg[c], f"{name}: negative center")
        _panel(axes[2], explanation.weight_grids[c], f"{name}: classifier weights")
        fig.tight_layout()
        path = out_dir / f"global_class_{c}.png"
        fig.savefig(path, dpi=120)
        plt.close(fig)
        paths.append(path)
    arrays = {}
    for c in range(len(explanation.class_names)):
        arrays[f"center_pos_{c}"] = explanation.centers_pos[c]
        arrays[f"center_neg_{c}"] = explanation.centers_neg[c]
        arrays[f"weight_grid_{c}"] = explanation.weight_grids[c]
    np.savez(out_dir / "global_explanation.npz", **arrays)
    paths.append(out_dir / "global_explanation.npz")
    return paths


def export_local_explanation(
    explanation: LocalExplanation,
    image: np.ndarray,
    out_dir: Path | str,
    sample_id: str,
    class_name: str,
    flip_sign: bool = False,
) -> tuple[Path, Path]:
    """Write <id>_<class>.png and .npz under ``out_dir``."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    stem = f"{sample_id}_{class_name}"
    png = out_dir / f"{stem}.png"
    npz = out_dir / f"{stem}.npz"
    save_local_panel(explanation, image, png, class_name, flip_sign)
    np.savez(
        npz,
        weighted_map=explanation.weighted_map,
        positive_part=explanation.positive_part,
        probability=np.float64(explanation.probability),
        logit=np.float64(explanation.logit),
        class_index=np.int64(explanation.class_index),
    )
    return png, npz
