from __future__ import annotations

import dataclasses
import math
import unittest

import numpy as np

from tadquality.enum import Preset
from tadquality.losses import BackgroundSample
from tadquality.losses import LossWeights
from tadquality.losses import RemSample
from tadquality.losses import RemTerms
from tadquality.losses import focal_loss
from tadquality.losses import giou_loss_1d
from tadquality.losses import l1_refine_loss
from tadquality.losses import quality_bce_loss
from tadquality.losses import rem_loss
from tadquality.losses import rem_terms
from tadquality.losses import total_loss
from tadquality.quality_maps import Interval


class TestFocalLoss(unittest.TestCase):
    def test_half_probability(self):
        result = focal_loss([0.5], 0)
        self.assertAlmostEqual(result.value, 0.25 * 0.25 * math.log(2), places=12)
        self.assertAlmostEqual(result.value, 0.0433, places=4)

    def test_zero_alpha(self):
        for p in (0.1, 0.5, 0.9):
            with self.subTest(p=p):
                self.assertEqual(focal_loss([p], 0, alpha=0.0).value, 0.0)

    def test_confident_positive(self):
        self.assertLess(focal_loss([1.0], 0).value, 1e-12)

    def test_reduces_to_cross_entropy(self):
        probs = np.array([0.2, 0.7, 0.4])
        result = focal_loss(probs, 1, alpha=1.0, gamma=0.0)
        self.assertLess(abs(result.value + math.log(0.7)), 1e-9)

    def test_background(self):
        result = focal_loss([0.3, 0.6], None)
        expected = -0.75 * (0.09 * math.log(0.7) + 0.36 * math.log(0.4))
        self.assertAlmostEqual(result.value, expected, places=12)
        self.assertTrue(np.all(result.gradient > 0))

    def test_non_negative(self):
        rng = np.random.default_rng(5)
        for _ in range(100):
            probs = rng.uniform(size=4)
            target = int(rng.integers(-1, 4))
            self.assertGreaterEqual(focal_loss(probs, None if target < 0 else target).value, 0.0)


class TestGiouLoss(unittest.TestCase):
    @dataclasses.dataclass
    class TestVector:
        pred: Interval
        gt: Interval
        expected: float

    test_vectors = [
        TestVector(Interval(0, 4), Interval(0, 4), 0.0),
        TestVector(Interval(0, 1), Interval(2, 3), 4 / 3),
        TestVector(Interval(0, 2), Interval(1, 3), 2 / 3),
        TestVector(Interval(1, 1), Interval(1, 1), 1.0),
    ]

    def test_giou_loss(self):
        for i, vector in enumerate(self.test_vectors):
            with self.subTest(i=i):
                self.assertAlmostEqual(
                    giou_loss_1d(vector.pred, vector.gt).value, vector.expected, places=12
                )

    def test_range(self):
        rng = np.random.default_rng(6)
        for _ in range(200):
            a, b = np.sort(rng.uniform(0, 10, 2)), np.sort(rng.uniform(0, 10, 2))
            value = giou_loss_1d(Interval(*a), Interval(*b)).value
            self.assertGreaterEqual(value, 0.0)
            self.assertLessEqual(value, 2.0)

    def test_gradient_direction(self):
        # growing the end towards the ground truth lowers the loss
        result = giou_loss_1d(Interval(0, 2), Interval(1, 3))
        self.assertLess(result.gradient[1], 0)


class TestL1RefineLoss(unittest.TestCase):
    def test_exact_target(self):
        result = l1_refine_loss([0.2, 0.0], [12, 10], [10, 10], 20)
        self.assertAlmostEqual(result.value, 0.0, places=12)

    def test_missed_target(self):
        result = l1_refine_loss([0.0, 0.0], [12, 10], [10, 10], 20)
        self.assertAlmostEqual(result.value, 0.2, places=12)
        np.testing.assert_array_equal(result.gradient, [-1.0, 0.0])

    def test_zero_width_skipped(self):
        with self.assertLogs("tadquality", level="WARNING"):
            result = l1_refine_loss([0.3, 0.1], [1, 1], [0, 0], 0)
        self.assertTrue(result.skipped)
        self.assertEqual(result.value, 0.0)


class TestQualityBceLoss(unittest.TestCase):
    def test_half_target(self):
        # tIoU([0, 4], [1, 3]) is 1/2
        result = quality_bce_loss(0.5, Interval(0, 4), Interval(1, 3))
        self.assertAlmostEqual(result.value, math.log(2), places=12)
        self.assertAlmostEqual(float(result.gradient[0]), 0.0, places=12)

    def test_perfect(self):
        result = quality_bce_loss(1.0, Interval(0, 4), Interval(0, 4))
        self.assertLessEqual(result.value, 1e-6)

    def test_minimised_at_target(self):
        proposal, gt = Interval(0, 4), Interval(1, 3)
        values = [quality_bce_loss(q, proposal, gt).value for q in np.linspace(0.05, 0.95, 91)]
        self.assertAlmostEqual(np.linspace(0.05, 0.95, 91)[int(np.argmin(values))], 0.5)


class TestRemLoss(unittest.TestCase):
    def sample(self, **changes) -> RemSample:
        fields = dict(
            location=10.0,
            gt=Interval(7, 14),
            label_index=1,
            offset_start=3.0,
            offset_end=4.0,
            class_scores=np.array([0.0, 1.0]),
            quality=1.0,
            delta_start=0.0,
            delta_end=0.0,
            refined_class_scores=np.array([0.0, 1.0]),
            refined_quality=1.0,
        )
        fields.update(changes)
        return RemSample(**fields)

    def test_unit_terms(self):
        terms = RemTerms(1, 1, 1, 1, 1, 1)
        self.assertAlmostEqual(terms.weighted(LossWeights(lambda_=1.0, gamma=0.5)), 5.0)
        self.assertAlmostEqual(terms.weighted(LossWeights(lambda_=0.0, gamma=0.0)), 2.0)

    def test_empty(self):
        self.assertEqual(rem_loss([]), 0.0)

    def test_perfect_predictions(self):
        self.assertLess(rem_loss([self.sample(), self.sample()]), 1e-5)

    def test_averaged_over_positives(self):
        worse = self.sample(offset_start=1.0)
        single = rem_terms([worse])
        double = rem_terms([worse, self.sample()])
        self.assertAlmostEqual(double.coarse_loc, single.coarse_loc / 2)
        self.assertGreater(single.refined_loc, 0.0)

    def test_background_joins_classification(self):
        background = BackgroundSample(np.array([0.9, 0.9]), np.array([0.9, 0.9]))
        terms = rem_terms([self.sample()], [background])
        self.assertGreater(terms.coarse_cls, 0.1)
        self.assertAlmostEqual(terms.coarse_loc, 0.0)

    def test_total_loss(self):
        self.assertAlmostEqual(total_loss(1.0, 0.2, 5.0), 2.0)
        self.assertEqual(total_loss(1.5, 0.7, 0.0), 1.5)
        self.assertEqual(total_loss(0.0, 0.0), 0.0)

    def test_presets(self):
        self.assertEqual(LossWeights.preset(Preset.THUMOS), LossWeights())
        self.assertEqual(LossWeights.preset("activitynet").gamma, 1.0)
