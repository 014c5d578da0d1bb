from __future__ import annotations

import math

import numpy as np
import pytest
import torch

from attrinet.errors import EmptyBatch, ShapeMismatch
from attrinet.losses import (
    ClassCenterPair,
    ClassCenters,
    GeneratorLossTerms,
    LossWeights,
    adversarial_loss,
    center_loss,
    classification_loss,
    critic_loss,
    guidance_loss,
    reg_loss,
    total_generator_loss,
    update_centers,
)


class TestCriticLoss:
    def test_separated_scores(self):
        val = critic_loss(torch.tensor([1.0, 1.0]), torch.tensor([0.0, 0.0]))
        assert abs(float(val) + 1.0) < 1e-12

    def test_equal_scores_cancel(self):
        val = critic_loss(torch.tensor([0.5]), torch.tensor([0.5]))
        assert abs(float(val)) < 1e-12

    def test_matches_direct_recomputation(self):
        rng = np.random.default_rng(1)
        real = torch.from_numpy(rng.normal(size=8))
        fake = torch.from_numpy(rng.normal(size=8))
        gp = 0.37
        expected = -real.numpy().mean() + fake.numpy().mean() + 10.0 * gp
        assert abs(float(critic_loss(real, fake, gp)) - expected) < 1e-7

    def test_empty_batch(self):
        with pytest.raises(EmptyBatch):
            critic_loss(torch.empty(0), torch.tensor([1.0]))


class TestAdversarialLoss:
    def test_symmetric_scores_cancel(self):
        assert float(adversarial_loss(torch.tensor([2.0, -2.0]))) == 0.0

    def test_constant_scores(self):
        assert abs(float(adversarial_loss(torch.tensor([1.0, 1.0, 1.0]))) + 1.0) < 1e-12

    def test_negates_critic_fake_term(self):
        fake = torch.from_numpy(np.random.default_rng(0).normal(size=6))
        real = torch.zeros(6)
        # critic loss with zero real scores reduces to the fake term
        fake_term = float(critic_loss(real, fake, gp=0.0))
        assert abs(float(adversarial_loss(fake)) + fake_term) < 1e-12


class TestRegLoss:
    def test_zero_maps(self):
        z = torch.zeros(2, 1, 4, 4)
        assert float(reg_loss(z, z)) == 0.0

    def test_half_filled_negative_map(self):
        # per-pixel mean convention: 2.0 * mean(|0.5|) = 1.0
        neg = torch.full((1, 1, 4, 4), 0.5)
        assert abs(float(reg_loss(neg, None, l1_neg=2.0)) - 1.0) < 1e-6

    def test_doubling_weight_doubles_term(self):
        neg = torch.rand(3, 1, 4, 4)
        assert abs(float(reg_loss(neg, None, l1_neg=4.0)) - 2 * float(reg_loss(neg, None, l1_neg=2.0))) < 1e-5


class TestClassificationLoss:
    def test_confident_correct_is_near_zero(self):
        logits = torch.tensor([20.0, -20.0])
        targets = torch.tensor([1.0, 0.0])
        assert float(classification_loss(logits, targets)) < 1e-6

    def test_uninformative_logit_gives_ln2(self):
        val = classification_loss(torch.zeros(4), torch.tensor([1.0, 0.0, 1.0, 0.0]))
        assert abs(float(val) - math.log(2)) < 1e-7

    def test_batch_mean_matches_per_item_oracle(self):
        rng = np.random.default_rng(3)
        logits = rng.normal(size=10)
        targets = rng.integers(0, 2, size=10).astype(float)
        per_item = [
            -(t * math.log(1 / (1 + math.exp(-z))) + (1 - t) * math.log(1 - 1 / (1 + math.exp(-z))))
            for z, t in zip(logits, targets)
        ]
        val = classification_loss(torch.from_numpy(logits), torch.from_numpy(targets))
        assert abs(float(val) - np.mean(per_item)) < 1e-9


class TestCenterLoss:
    def pair(self, size=4):
        return ClassCenterPair(neg=torch.zeros(size, size), pos=torch.ones(size, size))

    def test_map_equal_to_center_is_zero(self):
        pair = self.pair()
        maps = torch.ones(2, 1, 4, 4)
        assert float(center_loss(maps, 1, pair)) == 0.0

    def test_unit_offset_on_4x4(self):
        pair = self.pair()
        maps = pair.pos.unsqueeze(0).unsqueeze(0) + 1.0
        assert abs(float(center_loss(maps, 1, pair)) - 8.0) < 1e-6

    def test_symmetric_pair_mean(self):
        pair = ClassCenterPair(neg=torch.zeros(4, 4), pos=torch.zeros(4, 4))
        d = 0.3
        maps = torch.stack([torch.full((1, 4, 4), d), torch.full((1, 4, 4), -d)])
        expected = 0.5 * 16 * d * d  # each item contributes the same distance
        assert abs(float(center_loss(maps, 0, pair)) - expected) < 1e-6

    def test_gradient_matches_finite_differences(self):
        pair = ClassCenterPair(
            neg=torch.from_numpy(np.random.default_rng(0).normal(size=(4, 4))),
            pos=torch.zeros(4, 4, dtype=torch.float64),
        )
        maps = torch.from_numpy(
            np.random.default_rng(1).normal(size=(2, 1, 4, 4))
        ).requires_grad_(True)
        center_loss(maps, 0, pair).backward()
        analytic = maps.grad.clone()
        h = 1e-6
        flat = maps.detach().view(-1)
        for i in range(0, flat.numel(), 5):
            orig = float(flat[i])
            with torch.no_grad():
                flat[i] = orig + h
                fp = float(center_loss(maps.detach(), 0, pair))
                flat[i] = orig - h
                fm = float(center_loss(maps.detach(), 0, pair))
                flat[i] = orig
            num = (fp - fm) / (2 * h)
            a = float(analytic.view(-1)[i])
            assert abs(a - num) / max(abs(a), abs(num), 1e-8) < 1e-4

    def test_shape_mismatch(self):
        with pytest.raises(ShapeMismatch):
            center_loss(torch.zeros(1, 1, 8, 8), 0, self.pair(4))


class TestUpdateCenters:
    def test_empty_batch_leaves_center(self):
        pair = ClassCenterPair(neg=torch.rand(4, 4), pos=torch.rand(4, 4))
        before = pair.neg.clone()
        update_centers(pair, torch.empty(0, 1, 4, 4), 0, lr=0.5)
        assert torch.equal(pair.neg, before)

    def test_full_step_moves_to_map(self):
        pair = ClassCenterPair(neg=torch.rand(4, 4), pos=torch.rand(4, 4))
        target = torch.rand(1, 1, 4, 4)
        update_centers(pair, target, 1, lr=1.0)
        assert torch.allclose(pair.pos, target[0, 0])

    def test_small_step_from_zero(self):
        pair = ClassCenterPair(neg=torch.zeros(4, 4), pos=torch.zeros(4, 4))
        update_centers(pair, torch.ones(1, 1, 4, 4), 1, lr=0.1)
        assert torch.allclose(pair.pos, torch.full((4, 4), 0.1))

    def test_matches_analytic_gradient_step(self):
        rng = np.random.default_rng(2)
        pair = ClassCenterPair(
            neg=torch.from_numpy(rng.normal(size=(4, 4))).float(),
            pos=torch.zeros(4, 4),
        )
        maps = torch.from_numpy(rng.normal(size=(3, 1, 4, 4))).float()
        before = pair.neg.clone()
        update_centers(pair, maps, 0, lr=0.2)
        expected = before - 0.2 * (before.unsqueeze(0) - maps.squeeze(1)).mean(0)
        assert torch.allclose(pair.neg, expected, atol=1e-7)

    def test_drift_bounded_by_lr_times_max_gap(self):
        rng = np.random.default_rng(5)
        pair = ClassCenterPair(
            neg=torch.from_numpy(rng.normal(size=(8, 8))).float(),
            pos=torch.zeros(8, 8),
        )
        maps = torch.from_numpy(rng.normal(size=(4, 1, 8, 8))).float()
        before = pair.neg.clone()
        lr = 0.1
        update_centers(pair, maps, 0, lr=lr)
        drift = float((pair.neg - before).abs().max())
        bound = lr * float((before.unsqueeze(0) - maps.squeeze(1)).abs().max())
        assert drift <= bound + 1e-7


class TestGuidanceLoss:
    def test_all_ones_mask_is_zero(self):
        maps = torch.rand(2, 1, 8, 8) - 0.5
        assert float(guidance_loss(maps, torch.ones(8, 8))) == 0.0

    def test_energy_fully_outside_is_one(self):
        maps = torch.zeros(1, 1, 8, 8)
        maps[0, 0, 0, 0] = 1.0
        mask = torch.zeros(8, 8)
        mask[4:, 4:] = 1.0
        assert float(guidance_loss(maps, mask)) == 1.0

    def test_uniform_map_quarter_mask(self):
        maps = torch.full((1, 1, 8, 8), 0.3)
        mask = torch.zeros(8, 8)
        mask[:4, :4] = 1.0
        assert abs(float(guidance_loss(maps, mask)) - 0.75) < 1e-6

    def test_scale_invariance(self):
        rng = np.random.default_rng(0)
        maps = torch.from_numpy(rng.normal(size=(1, 1, 8, 8)))
        mask = torch.from_numpy((rng.random((8, 8)) < 0.4).astype(np.float64))
        a = float(guidance_loss(maps, mask))
        b = float(guidance_loss(3.7 * maps, mask))
        assert abs(a - b) < 1e-12

    def test_moving_mass_inside_never_increases(self):
        mask = torch.zeros(8, 8)
        mask[:, :4] = 1.0
        maps = torch.zeros(1, 1, 8, 8)
        maps[0, 0, 0, 6] = 1.0  # outside
        before = float(guidance_loss(maps, mask))
        maps[0, 0, 0, 6] = 0.0
        maps[0, 0, 0, 2] = 1.0  # moved inside
        after = float(guidance_loss(maps, mask))
        assert after <= before

    def test_range_and_zero_map(self):
        rng = np.random.default_rng(1)
        for _ in range(20):
            maps = torch.from_numpy(rng.normal(size=(3, 1, 8, 8)))
            mask = torch.from_numpy((rng.random((3, 8, 8)) < 0.5).astype(np.float64))
            v = float(guidance_loss(maps, mask))
            assert 0.0 <= v <= 1.0
        assert float(guidance_loss(torch.zeros(1, 1, 8, 8), mask[:1])) == 0.0

    def test_shape_mismatch(self):
        with pytest.raises(ShapeMismatch):
            guidance_loss(torch.zeros(1, 1, 8, 8), torch.zeros(4, 4))


class TestTotalLoss:
    def test_all_zero_terms(self):
        terms = GeneratorLossTerms(adv=0.0, cls=0.0, reg=0.0, ctr=0.0, guid=0.0)
        assert float(total_generator_loss(terms, LossWeights())) == 0.0

    def test_unit_terms_default_weights(self):
        terms = GeneratorLossTerms(adv=1.0, cls=1.0, reg=1.0, ctr=1.0, guid=1.0)
        val = float(total_generator_loss(terms, LossWeights()))
        assert abs(val - 231.01) < 1e-6

    def test_guidance_skipped_when_disabled(self):
        terms = GeneratorLossTerms(adv=1.0, cls=1.0, reg=1.0, ctr=1.0, guid=None)
        val = float(total_generator_loss(terms, LossWeights()))
        assert abs(val - 201.01) < 1e-6

    def test_ablation_configs_drop_disabled_terms(self):
        terms = GeneratorLossTerms(adv=1.0, cls=1.0, reg=1.0, ctr=1.0, guid=1.0)
        rows = {
            (0.0, 100.0, 0.0, 0.0, 0.0): 100.0,
            (1.0, 100.0, 0.0, 0.0, 0.0): 101.0,
            (1.0, 100.0, 100.0, 0.0, 0.0): 201.0,
            (1.0, 100.0, 100.0, 0.01, 0.0): 201.01,
            (1.0, 100.0, 100.0, 0.01, 30.0): 231.01,
        }
        for (adv, cls, reg, ctr, guid), expected in rows.items():
            w = LossWeights(adv=adv, cls=cls, reg=reg, ctr=ctr, guid=guid)
            assert abs(float(total_generator_loss(terms, w)) - expected) < 1e-9

    def test_sums_over_classes(self):
        terms = [
            GeneratorLossTerms(adv=1.0, cls=0.0, reg=0.0, ctr=0.0, guid=None),
            GeneratorLossTerms(adv=2.0, cls=0.0, reg=0.0, ctr=0.0, guid=None),
        ]
        assert float(total_generator_loss(terms, LossWeights())) == 3.0

    def test_negative_weight_rejected(self):
        with pytest.raises(ValueError):
            LossWeights(adv=-1.0)

    def test_unknown_weight_key_rejected(self):
        with pytest.raises(ValueError):
            LossWeights.from_dict({"sparsity": 1.0})


class TestClassCenters:
    def test_zero_construction_and_indexing(self):
        centers = ClassCenters.zeros(3, 16)
        assert len(centers) == 3
        assert torch.equal(centers[1].pos, torch.zeros(16, 16))
