from __future__ import annotations

import csv

import numpy as np
import pytest

from attrinet import metrics as mx
from attrinet.errors import (
    DegenerateClass,
    EmptyAnnotation,
    EmptyTagRegion,
    NoCorrectPositives,
    ZeroAttribution,
)
from helpers import pairwise_auc_oracle


class TestAuc:
    def test_perfect_separation(self):
        assert mx.auc([0.9, 0.8, 0.1, 0.2], [1, 1, 0, 0]) == 1.0

    def test_constant_scores_give_half(self):
        assert mx.auc([0.5, 0.5, 0.5, 0.5], [1, 0, 1, 0]) == 0.5

    def test_small_example(self):
        # oracle: 3 of 4 pairs ordered correctly
        assert mx.auc([0.8, 0.4, 0.6, 0.1], [1, 1, 0, 0]) == 0.75

    def test_matches_pair_counting_oracle(self):
        rng = np.random.default_rng(0)
        for _ in range(50):
            n = int(rng.integers(4, 100))
            labels = rng.integers(0, 2, size=n)
            if labels.min() == labels.max():
                labels[:2] = [0, 1]
            scores = np.round(rng.random(n), 2)  # rounding forces ties
            assert abs(mx.auc(scores, labels) - pairwise_auc_oracle(scores, labels)) < 1e-12

    def test_degenerate(self):
        with pytest.raises(DegenerateClass):
            mx.auc([0.1, 0.2], [1, 1])


class TestClassSensitivity:
    def _stack(self, *maps):
        return np.stack(maps)

    def test_blank_negatives_score_one(self):
        attr = self._stack(np.ones((8, 8)), np.zeros((8, 8)), np.zeros((8, 8)), np.zeros((8, 8)))
        probs = np.array([0.9, 0.1, 0.1, 0.1])
        labels = np.array([1, 0, 0, 0])
        assert mx.class_sensitivity(attr, probs, labels) == 1.0

    def test_identical_maps_score_quarter(self):
        m = np.random.default_rng(0).normal(size=(8, 8))
        attr = self._stack(m, m, m, m)
        probs = np.array([0.9, 0.1, 0.1, 0.1])
        labels = np.array([1, 0, 0, 0])
        assert abs(mx.class_sensitivity(attr, probs, labels) - 0.25) < 1e-12

    def test_three_to_one_energy_ratio(self):
        attr = self._stack(
            3 * np.ones((4, 4)), np.ones((4, 4)), np.ones((4, 4)), np.ones((4, 4))
        )
        probs = np.array([0.8, 0.2, 0.2, 0.2])
        labels = np.array([1, 0, 0, 0])
        assert abs(mx.class_sensitivity(attr, probs, labels) - 0.5) < 1e-12

    def test_most_confident_selection_and_grid_count(self):
        rng = np.random.default_rng(1)
        attr = rng.normal(size=(10, 4, 4))
        labels = np.array([1, 1, 1, 0, 0, 0, 0, 0, 0, 0])
        probs = np.array([0.9, 0.4, 0.8, 0.1, 0.2, 0.3, 0.15, 0.25, 0.35, 0.05])
        grids = mx.class_sensitivity_grids(attr, probs, labels, threshold=0.5)
        # only two positives clear the threshold, so only two grids
        assert len(grids) == 2

    def test_no_correct_positives(self):
        attr = np.zeros((4, 4, 4))
        with pytest.raises(NoCorrectPositives):
            mx.class_sensitivity_grids(
                attr, np.array([0.2, 0.1, 0.1, 0.1]), np.array([1, 0, 0, 0])
            )

    def test_positive_part_mode(self):
        pos_map = np.full((4, 4), -1.0)  # negative values vanish under positive-part
        neg_map = np.ones((4, 4))
        attr = self._stack(pos_map, neg_map, neg_map, neg_map)
        probs = np.array([0.9, 0.1, 0.1, 0.1])
        labels = np.array([1, 0, 0, 0])
        abs_score = mx.class_sensitivity(attr, probs, labels, magnitude="abs")
        pos_score = mx.class_sensitivity(attr, probs, labels, magnitude="positive")
        assert abs_score == 0.25 and pos_score == 0.0


class TestDiseaseSensitivity:
    def test_fully_inside(self):
        attr = np.zeros((8, 8))
        attr[2:4, 2:4] = 1.0
        mask = np.zeros((8, 8))
        mask[1:5, 1:5] = 1
        assert mx.disease_sensitivity(attr, mask) == 1.0

    def test_uniform_map_area_ratio(self):
        attr = np.full((10, 10), 0.7)
        mask = np.zeros((10, 10))
        mask[0, :] = 1  # 10% of pixels
        assert abs(mx.disease_sensitivity(attr, mask) - 0.1) < 1e-12

    def test_scaling_invariance(self):
        rng = np.random.default_rng(2)
        attr = rng.normal(size=(8, 8))
        mask = (rng.random((8, 8)) < 0.3).astype(float)
        if not mask.any():
            mask[0, 0] = 1
        assert abs(
            mx.disease_sensitivity(attr, mask) - mx.disease_sensitivity(5.0 * attr, mask)
        ) < 1e-12

    def test_empty_annotation(self):
        with pytest.raises(EmptyAnnotation):
            mx.disease_sensitivity(np.ones((4, 4)), np.zeros((4, 4)))

    def test_zero_attribution(self):
        mask = np.ones((4, 4))
        with pytest.raises(ZeroAttribution):
            mx.disease_sensitivity(np.zeros((4, 4)), mask)


class TestConfounderSensitivity:
    def test_top_decile_exactly_on_tag(self):
        attr = np.zeros((20, 20))  # 400 pixels, top 10% = a 2x20 strip of 40
        attr[:2, :] = 5.0
        box = (0, 0, 20, 2)
        assert mx.confounder_sensitivity(attr, [box]) == 1.0

    def test_zero_on_tag(self):
        rng = np.random.default_rng(0)
        attr = np.abs(rng.normal(size=(20, 20))) + 1.0
        attr[:2, :] = 0.0
        assert mx.confounder_sensitivity(attr, [(0, 0, 20, 2)]) == 0.0

    def test_tie_break_deterministic(self):
        attr = np.ones((10, 10))  # fully tied; stable order picks lowest indices
        top = mx.top_pixel_set(attr)
        expected = np.zeros(100, dtype=bool)
        expected[:10] = True
        assert np.array_equal(top.ravel(), expected)
        val_a = mx.confounder_sensitivity(attr, [(0, 0, 10, 1)])
        val_b = mx.confounder_sensitivity(attr, [(0, 0, 10, 1)])
        assert val_a == val_b == 1.0

    def test_empty_boxes(self):
        with pytest.raises(EmptyTagRegion):
            mx.confounder_sensitivity(np.ones((4, 4)), [])


class TestBootstrap:
    def test_single_value_degenerate(self):
        assert mx.bootstrap_ci([0.7]) == (0.7, 0.7)

    def test_reproducible(self):
        values = np.random.default_rng(0).random(30)
        assert mx.bootstrap_ci(values, rng_seed=5) == mx.bootstrap_ci(values, rng_seed=5)

    def test_matches_brute_force_recomputation(self):
        # oracle: replay the same resampling with an independent implementation
        values = np.random.default_rng(1).random(25)
        lo, hi = mx.bootstrap_ci(values, num_resamples=500, rng_seed=9)
        rng = np.random.default_rng(9)
        idx = rng.integers(0, values.size, size=(500, values.size))
        means = sorted(values[i].mean() for i in idx)
        assert abs(lo - np.percentile(means, 2.5)) < 1e-12
        assert abs(hi - np.percentile(means, 97.5)) < 1e-12


class TestPairedTTest:
    def test_direction(self):
        rng = np.random.default_rng(0)
        base = rng.random(40)
        better = base + 0.2 + 0.01 * rng.normal(size=40)
        t, p = mx.paired_ttest(better, base, alternative="greater")
        assert t > 0 and p < 1e-6


@pytest.fixture(scope="module")
def trained(tiny_dataset, tmp_path_factory):
    from attrinet import trainer as tr
    from attrinet.checkpoint import load_checkpoint

    out = tmp_path_factory.mktemp("report_run")
    cfg = tr.TrainConfig(
        generator_steps=3, batch_size=3, critic_steps_per_gen=1,
        critic_boost_initial=1, critic_boost_steps=1, checkpoint_every=3, seed=2,
    )
    result = tr.train(tiny_dataset, cfg, out)
    return load_checkpoint(result.final_checkpoint).bundle


class TestReport:
    def test_report_writes_tables(self, trained, tiny_dataset, tmp_path):
        results = mx.report(trained, tiny_dataset, tmp_path)
        for name in ("auc.csv", "class_sensitivity.csv", "disease_sensitivity.csv", "metrics.json"):
            assert (tmp_path / name).exists()
        with open(tmp_path / "auc.csv") as fh:
            rows = list(csv.DictReader(fh))
        assert rows and set(rows[0]) == {"class", "value", "ci_low", "ci_high", "n"}
        assert "mean" in {r["class"] for r in rows}
        assert set(results["auc"]) >= set(tiny_dataset.class_names)

    def test_report_deterministic(self, trained, tiny_dataset, tmp_path):
        mx.report(trained, tiny_dataset, tmp_path / "a", rng_seed=3)
        mx.report(trained, tiny_dataset, tmp_path / "b", rng_seed=3)
        for name in ("auc.csv", "class_sensitivity.csv", "disease_sensitivity.csv"):
            assert (tmp_path / "a" / name).read_text() == (tmp_path / "b" / name).read_text()
