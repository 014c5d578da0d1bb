"""Evaluation metrics: AUC, class/disease/confounder sensitivity, reporting.

Sensitivity metrics operate on attribution magnitudes (absolute values by
default; a flag switches to positive parts only).  All metrics are pure
functions over numpy arrays in float64.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import stats

from .errors import (
    DegenerateClass,
    EmptyAnnotation,
    EmptyTagRegion,
    InsufficientSamples,
    NoCorrectPositives,
    ZeroAttribution,
)

TOP_PIXEL_FRACTION = 0.1
GRID_NEGATIVES = 3


def _magnitude(values: np.ndarray, mode: str) -> np.ndarray:
    if mode == "abs":
        return np.abs(values)
    if mode == "positive":
        return np.maximum(values, 0.0)
    raise ValueError(f"unknown magnitude mode {mode!r}")


def auc(scores, labels) -> float:
    """Area under the ROC curve via midrank statistics.

    Equals the probability that a positive outranks a negative, counting ties
    as half.
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    pos = labels == 1
    n_pos = int(pos.sum())
    n_neg = int((~pos).sum())
    if n_pos == 0 or n_neg == 0:
        raise DegenerateClass(-1, "AUC needs both classes present")
    ranks = stats.rankdata(scores)
    return float((ranks[pos].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def class_sensitivity_grids(
    attributions: np.ndarray,
    probabilities: np.ndarray,
    labels: np.ndarray,
    threshold: float = 0.5,
    target_grids: int = 200,
    magnitude: str = "abs",
) -> list[float]:
    """Per-grid energy concentration scores for one class.

    Grids hold one correctly predicted positive (most confident first) and
    three negatives (most confidently negative first); each grid's score is
    the positive cell's share of the grid's total attribution energy.
    """
    attributions = np.asarray(attributions, dtype=np.float64)
    probabilities = np.asarray(probabilities, dtype=np.float64)
    labels = np.asarray(labels)
    pos_ok = np.flatnonzero((labels == 1) & (probabilities >= threshold))
    neg = np.flatnonzero(labels == 0)
    if len(pos_ok) == 0:
        raise NoCorrectPositives(-1)
    if len(neg) < GRID_NEGATIVES:
        raise InsufficientSamples(-1, GRID_NEGATIVES, len(neg), positive=False)
    pos_ok = pos_ok[np.argsort(-probabilities[pos_ok], kind="stable")]
    neg = neg[np.argsort(probabilities[neg], kind="stable")]
    num_grids = min(target_grids, len(pos_ok), len(neg) // GRID_NEGATIVES)
    energies = _magnitude(attributions, magnitude).reshape(len(attributions), -1).sum(axis=1)
    scores = []
    for g in range(num_grids):
        e_pos = energies[pos_ok[g]]
        e_neg = energies[neg[g * GRID_NEGATIVES : (g + 1) * GRID_NEGATIVES]].sum()
        scores.append(float(e_pos / (e_pos + e_neg)) if e_pos + e_neg > 0 else 0.25)
    return scores


def class_sensitivity(*args, **kwargs) -> float:
    """Mean grid score; see ``class_sensitivity_grids``."""
    return float(np.mean(class_sensitivity_grids(*args, **kwargs)))


def disease_sensitivity(
    attribution: np.ndarray, annotation: np.ndarray, magnitude: str = "abs"
) -> float:
    """Energy pointing game: attribution mass inside the annotation over total."""
    attribution = np.asarray(attribution, dtype=np.float64)
    annotation = np.asarray(annotation)
    if attribution.shape != annotation.shape:
        raise EmptyAnnotation(
            f"annotation shape {annotation.shape} != attribution {attribution.shape}"
        )
    region = annotation > 0
    if not region.any():
        raise EmptyAnnotation()
    mag = _magnitude(attribution, magnitude)
    total = mag.sum()
    if total == 0:
        raise ZeroAttribution()
    return float(mag[region].sum() / total)


def top_pixel_set(attribution: np.ndarray, fraction: float = TOP_PIXEL_FRACTION) -> np.ndarray:
    """Boolean mask of the top-``fraction`` pixels by |value|.

    Ties at the cutoff are broken by flat pixel index, so the selection is
    deterministic.
    """
    mag = np.abs(np.asarray(attribution, dtype=np.float64)).ravel()
    k = int(round(fraction * mag.size))
    mask = np.zeros(mag.size, dtype=bool)
    if k > 0:
        order = np.argsort(-mag, kind="stable")
        mask[order[:k]] = True
    return mask.reshape(attribution.shape)


def confounder_sensitivity(
    attribution: np.ndarray,
    tag_boxes: list[tuple[int, int, int, int]],
    fraction: float = TOP_PIXEL_FRACTION,
) -> float:
    """Fraction of the tag region covered by the attribution's top pixels."""
    attribution = np.asarray(attribution, dtype=np.float64)
    if not tag_boxes:
        raise EmptyTagRegion()
    h, w = attribution.shape
    region = np.zeros((h, w), dtype=bool)
    for (x, y, bw, bh) in tag_boxes:
        region[max(0, y) : min(h, y + bh), max(0, x) : min(w, x + bw)] = True
    if not region.any():
        raise EmptyTagRegion("tag boxes rasterize to an empty region")
    top = top_pixel_set(attribution, fraction)
    return float((top & region).sum() / region.sum())


def paired_ttest(a, b, alternative: str = "greater") -> tuple[float, float]:
    """Paired t statistic and p-value for mean(a) vs mean(b)."""
    res = stats.ttest_rel(np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64), alternative=alternative)
    return float(res.statistic), float(res.pvalue)


def bootstrap_ci(
    values, num_resamples: int = 1000, rng_seed: int = 0, alpha: float = 0.05
) -> tuple[float, float]:
    """Percentile bootstrap CI of the mean; degenerate for a single value."""
    values = np.asarray(values, dtype=np.float64)
    if values.size == 0:
        return (float("nan"), float("nan"))
    if values.size == 1:
        return (float(values[0]), float(values[0]))
    rng = np.random.default_rng(rng_seed)
    idx = rng.integers(0, values.size, size=(num_resamples, values.size))
    means = values[idx].mean(axis=1)
    return (
        float(np.percentile(means, 100 * alpha / 2)),
        float(np.percentile(means, 100 * (1 - alpha / 2))),
    )


# ---------------------------------------------------------------------------
# report generation
# ---------------------------------------------------------------------------


@dataclass
class MetricRow:
    class_name: str
    value: float
    ci_low: float
    ci_high: float
    n: int


def _write_rows(path: Path, rows: list[MetricRow]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["class", "value", "ci_low", "ci_high", "n"])
        for r in rows:
            writer.writerow(
                [r.class_name, f"{r.value:.10g}", f"{r.ci_low:.10g}", f"{r.ci_high:.10g}", r.n]
            )


def _summarize(per_class_values: dict[str, list[float]], rng_seed: int) -> list[MetricRow]:
    rows = []
    all_vals: list[float] = []
    for name, vals in per_class_values.items():
        if not vals:
            continue
        lo, hi = bootstrap_ci(vals, rng_seed=rng_seed)
        rows.append(MetricRow(name, float(np.mean(vals)), lo, hi, len(vals)))
        all_vals.extend(vals)
    if all_vals:
        lo, hi = bootstrap_ci(all_vals, rng_seed=rng_seed)
        rows.append(MetricRow("mean", float(np.mean(all_vals)), lo, hi, len(all_vals)))
    return rows


def report(
    bundle,
    dataset,
    out_dir: Path | str,
    thresholds=None,
    injection_log: list[dict] | None = None,
    which: tuple[str, ...] = ("auc", "class_sensitivity", "disease_sensitivity"),
    magnitude: str = "abs",
    rng_seed: int = 0,
) -> dict:
    """Evaluate a model on a dataset and write per-metric CSV tables.

    ``injection_log`` entries enable the confounder sensitivity table,
    computed on the positive class centers of the logged classes.
    """
    from .explain import weighted_maps_batch  # local import to avoid a cycle
    from .model import predict_dataset

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    probs, labels = predict_dataset(bundle, dataset)
    names = bundle.class_names
    num_classes = len(names)
    tau = thresholds.values if thresholds is not None else np.full(num_classes, 0.5)

    explanations = _all_weighted_maps(bundle, dataset, weighted_maps_batch)
    results: dict[str, dict] = {}

    if "auc" in which:
        per_class = {}
        for c in range(num_classes):
            if labels[:, c].min() == labels[:, c].max():
                continue
            rng = np.random.default_rng((rng_seed, 1, c))
            boots = []
            n = len(labels)
            for _ in range(1000):
                idx = rng.integers(0, n, size=n)
                if labels[idx, c].min() != labels[idx, c].max():
                    boots.append(auc(probs[idx, c], labels[idx, c]))
            value = auc(probs[:, c], labels[:, c])
            lo, hi = (np.percentile(boots, 2.5), np.percentile(boots, 97.5)) if boots else (value, value)
            per_class[names[c]] = (value, float(lo), float(hi), n)
        rows = [MetricRow(k, *v) for k, v in per_class.items()]
        if rows:
            mean_v = float(np.mean([r.value for r in rows]))
            rows.append(MetricRow("mean", mean_v, mean_v, mean_v, len(labels)))
        _write_rows(out_dir / "auc.csv", rows)
        results["auc"] = {r.class_name: r.value for r in rows}

    if "class_sensitivity" in which:
        per_class_vals: dict[str, list[float]] = {}
        for c in range(num_classes):
            try:
                grids = class_sensitivity_grids(
                    explanations[:, c], probs[:, c], labels[:, c],
                    threshold=float(tau[c]), magnitude=magnitude,
                )
            except (NoCorrectPositives, InsufficientSamples):
                grids = []
            per_class_vals[names[c]] = grids
        rows = _summarize(per_class_vals, rng_seed)
        _write_rows(out_dir / "class_sensitivity.csv", rows)
        results["class_sensitivity"] = {r.class_name: r.value for r in rows}

    if "disease_sensitivity" in which:
        per_class_vals = {}
        excluded = 0
        for c in range(num_classes):
            vals = []
            for i in range(len(dataset)):
                ann = dataset.annotation_mask(i, c)
                if ann is None or not (ann > 0).any():
                    continue
                try:
                    vals.append(disease_sensitivity(explanations[i, c], ann, magnitude))
                except ZeroAttribution:
                    excluded += 1
            per_class_vals[names[c]] = vals
        rows = _summarize(per_class_vals, rng_seed)
        _write_rows(out_dir / "disease_sensitivity.csv", rows)
        results["disease_sensitivity"] = {r.class_name: r.value for r in rows}
        results["disease_sensitivity_excluded"] = excluded

    if injection_log:
        boxes_by_class: dict[int, list] = {}
        for entry in injection_log:
            boxes_by_class.setdefault(int(entry["class"]), []).append(tuple(entry["box"]))
        rows = []
        for c, boxes in sorted(boxes_by_class.items()):
            unique_boxes = sorted(set(boxes))
            value = confounder_sensitivity(bundle.centers[c].pos.numpy(), unique_boxes)
            rows.append(MetricRow(names[c], value, value, value, 1))
        _write_rows(out_dir / "confounder_sensitivity.csv", rows)
        results["confounder_sensitivity"] = {r.class_name: r.value for r in rows}

    (out_dir / "metrics.json").write_text(json.dumps(results, indent=2) + "\n")
    return results


def _all_weighted_maps(bundle, dataset, weighted_maps_batch, batch_size: int = 16) -> np.ndarray:
    """Weighted local-explanation maps (N, C, H, W) for a whole dataset."""
    n = len(dataset)
    size = dataset.image_size
    out = np.zeros((n, bundle.num_classes, size, size), dtype=np.float64)
    for start in range(0, n, batch_size):
        idx = list(range(start, min(n, start + batch_size)))
        batch = dataset.batch(idx)
        for c in range(bundle.num_classes):
            out[idx, c] = weighted_maps_batch(bundle, batch.pixels, c)
    return out
