from __future__ import annotations

import dataclasses
import itertools
import unittest

import numpy as np

from tadquality.enum import NMSDecay
from tadquality.enum import Preset
from tadquality.exceptions import InvalidParameterException
from tadquality.exceptions import ScoreOutOfRangeException
from tadquality.inference import CoarsePrediction
from tadquality.inference import Detection
from tadquality.inference import InferenceConfig
from tadquality.inference import Prediction
from tadquality.inference import PyramidConfig
from tadquality.inference import RefinedPrediction
from tadquality.inference import assign_level
from tadquality.inference import boundary_quality_lookup
from tadquality.inference import decode_coarse
from tadquality.inference import final_score
from tadquality.inference import fuse_scores
from tadquality.inference import refine
from tadquality.inference import run_pipeline
from tadquality.inference import scale_index
from tadquality.inference import soft_nms
from tadquality.quality_maps import AnchorScaleSet
from tadquality.quality_maps import Interval
from tadquality.quality_maps import QualityMapPair


def coarse(location, offset_start, offset_end, level=0, scores=(1.0,), quality=1.0):
    return CoarsePrediction(
        level=level,
        location=location,
        offset_start=offset_start,
        offset_end=offset_end,
        class_scores=np.array(scores),
        quality=quality,
    )


def detection(start, end, score, label="a", video_id="v"):
    return Detection(interval=Interval(start, end), label=label, score=score, video_id=video_id)


class TestDecode(unittest.TestCase):
    def test_decode_coarse(self):
        pyramid = PyramidConfig()
        for pred, expected in (
            (coarse(5, 2, 3), Interval(3, 8)),
            (coarse(5, 0, 0), Interval(5, 5)),
            (coarse(5, 2, 3, level=2), Interval(12, 32)),
        ):
            with self.subTest(pred=pred):
                self.assertEqual(decode_coarse(pred, pyramid), expected)

    def test_negative_offsets(self):
        with self.assertRaises(InvalidParameterException):
            coarse(5, -1, 3)

    def test_assign_level(self):
        pyramid = PyramidConfig()
        for duration, level in ((0, 0), (3.9, 0), (4, 1), (12, 2), (31.9, 3), (32, 4), (1000, 4)):
            with self.subTest(duration=duration):
                self.assertEqual(assign_level(duration, pyramid), level)

    def test_invalid_pyramid(self):
        with self.assertRaises(InvalidParameterException):
            PyramidConfig(strides=(1, 4, 2), regression_ranges=((0, 1), (1, 2), (2, 3)))
        with self.assertRaises(InvalidParameterException):
            PyramidConfig(strides=(1, 2), regression_ranges=((0, 1),))


class TestRefine(unittest.TestCase):
    def test_refine(self):
        interval = refine(100, 10, 10, 0.2, -0.1)
        self.assertAlmostEqual(interval.start, 88, places=12)
        self.assertAlmostEqual(interval.end, 109, places=12)

    def test_zero_deltas_identity(self):
        self.assertEqual(refine(7.5, 2.25, 4, 0, 0), Interval(5.25, 11.5))

    def test_zero_width(self):
        self.assertEqual(refine(6, 0, 0, 0.7, -3), Interval(6, 6))

    def test_inverted_clamps_to_midpoint(self):
        # start 10 - 1 + 2 = 11, end 10 + 1 - 4 = 7
        self.assertEqual(refine(10, 1, 1, -2, -4), Interval(9, 9))


class TestScores(unittest.TestCase):
    def test_fuse_scores(self):
        y, q = fuse_scores(np.array([0.6]), np.array([0.8]), 1.0, 0.0)
        np.testing.assert_allclose(y, [0.7])
        self.assertEqual(q, 0.5)
        y, q = fuse_scores(np.array([0.3, 0.9]), np.array([0.3, 0.9]), 0.4, 0.4)
        np.testing.assert_allclose(y, [0.3, 0.9])
        self.assertAlmostEqual(q, 0.4)

    def test_final_score(self):
        for args, expected in (
            ((0.8, 0.9, 0.64, 1.0), 0.576),
            ((0.8, 0.0, 0.64, 1.0), 0.0),
            ((1.0, 1.0, 1.0, 1.0), 1.0),
        ):
            with self.subTest(args=args):
                self.assertAlmostEqual(final_score(*args), expected, places=12)

    def test_final_score_range(self):
        with self.assertRaises(ScoreOutOfRangeException):
            final_score(1.2, 1, 1, 1)

    def test_final_score_monotone(self):
        rng = np.random.default_rng(17)
        for i in range(10000):
            args = rng.uniform(size=4)
            position = i % 4
            bumped = args.copy()
            bumped[position] = rng.uniform(args[position], 1.0)
            self.assertGreaterEqual(final_score(*bumped), final_score(*args))


class TestScaleIndex(unittest.TestCase):
    def setUp(self):
        self.scale_set = AnchorScaleSet(1, 50, 20)

    def test_vectors(self):
        self.assertAlmostEqual(scale_index(10, 2, self.scale_set), 4 / (49 / 19), places=12)
        self.assertAlmostEqual(scale_index(10, 2, self.scale_set), 1.5510, places=4)
        self.assertEqual(scale_index(2, 2, self.scale_set), 0.0)
        self.assertEqual(scale_index(500, 2, self.scale_set), 19.0)

    def test_grid_durations(self):
        for i, r in enumerate(self.scale_set.scales):
            with self.subTest(i=i):
                self.assertAlmostEqual(scale_index(2 * r, 2, self.scale_set), i, places=9)

    def test_non_decreasing(self):
        durations = np.linspace(0, 150, 1001)
        indices = [scale_index(d, 2, self.scale_set) for d in durations]
        self.assertTrue(np.all(np.diff(indices) >= 0))

    def test_single_scale(self):
        self.assertEqual(scale_index(77, 2, AnchorScaleSet.single(16)), 0.0)

    def test_invalid_tau(self):
        with self.assertRaises(InvalidParameterException):
            scale_index(10, 0, self.scale_set)


class TestBoundaryQualityLookup(unittest.TestCase):
    def test_grid_values(self):
        quality_map = np.arange(12, dtype=float).reshape(4, 3) / 11
        for t, i in itertools.product(range(4), range(3)):
            with self.subTest(t=t, i=i):
                self.assertEqual(boundary_quality_lookup(quality_map, t, i), quality_map[t, i])

    def test_midpoint(self):
        quality_map = np.array([[0.0, 0.0], [1.0, 1.0]])
        self.assertAlmostEqual(boundary_quality_lookup(quality_map, 0.5, 0.5), 0.5)

    def test_clamped(self):
        quality_map = np.array([[0.1, 0.2], [0.3, 0.4]])
        self.assertAlmostEqual(boundary_quality_lookup(quality_map, 9.0, 0), 0.3)
        self.assertAlmostEqual(boundary_quality_lookup(quality_map, -2.0, 5), 0.2)

    def test_within_bounds(self):
        rng = np.random.default_rng(8)
        quality_map = rng.uniform(size=(10, 5))
        values = boundary_quality_lookup(
            quality_map, rng.uniform(-2, 12, 500), rng.uniform(-1, 6, 500)
        )
        self.assertTrue(np.all(values >= quality_map.min() - 1e-12))
        self.assertTrue(np.all(values <= quality_map.max() + 1e-12))


class TestSoftNMS(unittest.TestCase):
    def test_single(self):
        dets = [detection(0, 5, 0.7)]
        self.assertEqual(soft_nms(dets), dets)

    def test_identical_intervals(self):
        kept = soft_nms([detection(0, 5, 0.9), detection(0, 5, 0.8)], threshold=0.5)
        self.assertEqual([d.score for d in kept], [0.9])

    def test_identical_intervals_without_floor(self):
        kept = soft_nms([detection(0, 5, 0.9), detection(0, 5, 0.8)], threshold=0.5, score_floor=0.0)
        self.assertEqual([d.score for d in kept], [0.9, 0.0])

    def test_disjoint(self):
        dets = [detection(0, 5, 0.9), detection(10, 15, 0.8)]
        self.assertEqual(soft_nms(dets, threshold=0.5), dets)

    def test_linear_decay(self):
        # tIoU([0, 4], [2, 6]) = 1/3
        kept = soft_nms([detection(0, 4, 0.9), detection(2, 6, 0.6)], threshold=0.3)
        self.assertAlmostEqual(kept[1].score, 0.6 * (1 - 1 / 3))
        kept = soft_nms([detection(0, 4, 0.9), detection(2, 6, 0.6)], threshold=0.5)
        self.assertEqual(kept[1].score, 0.6)

    def test_gaussian_decay(self):
        kept = soft_nms(
            [detection(0, 4, 0.9), detection(2, 6, 0.6)],
            threshold=0.9,
            decay=NMSDecay.GAUSSIAN,
            sigma=0.5,
        )
        self.assertAlmostEqual(kept[1].score, 0.6 * np.exp(-(1 / 9) / 0.5))

    def test_per_class(self):
        dets = [detection(0, 5, 0.9, label="a"), detection(0, 5, 0.8, label="b")]
        self.assertEqual(len(soft_nms(dets, per_class=True)), 2)
        self.assertEqual(len(soft_nms(dets, per_class=False)), 1)

    def test_invalid_threshold(self):
        for threshold in (0.0, 1.0, 1.5):
            with self.subTest(threshold=threshold):
                with self.assertRaises(InvalidParameterException):
                    soft_nms([], threshold=threshold)

    def random_detections(self, rng, count=40):
        return [
            detection(start, start + length, score)
            for start, length, score in zip(
                rng.uniform(0, 50, count), rng.uniform(1, 20, count), rng.uniform(0.01, 1, count)
            )
        ]

    def test_never_increases_scores(self):
        rng = np.random.default_rng(21)
        for i in range(20):
            dets = self.random_detections(rng)
            original = {(d.interval, d.label): d.score for d in dets}
            kept = soft_nms(dets, threshold=float(rng.uniform(0.1, 0.9)))
            with self.subTest(i=i):
                self.assertLessEqual(len(kept), len(dets))
                for d in kept:
                    self.assertLessEqual(d.score, original[(d.interval, d.label)])

    def test_identity_with_loose_threshold(self):
        rng = np.random.default_rng(22)
        dets = self.random_detections(rng)
        kept = soft_nms(dets, threshold=1 - 1e-12, score_floor=0.0)
        self.assertEqual(
            [d.score for d in kept], sorted((d.score for d in dets), reverse=True)
        )

    def test_positive_scaling_keeps_order(self):
        rng = np.random.default_rng(23)
        dets = self.random_detections(rng)
        scaled = [dataclasses.replace(d, score=0.5 * d.score) for d in dets]
        self.assertEqual(
            [d.interval for d in soft_nms(dets, score_floor=0.0)],
            [d.interval for d in soft_nms(scaled, score_floor=0.0)],
        )


class TestRunPipeline(unittest.TestCase):
    def setUp(self):
        self.scale_set = AnchorScaleSet(1, 50, 20)
        self.cfg = InferenceConfig(scale_set=self.scale_set)
        self.ones = QualityMapPair(np.ones((64, 20)), np.ones((64, 20)), self.scale_set)

    def test_empty(self):
        self.assertEqual(run_pipeline([], self.ones, self.cfg, ["a"]), [])

    def test_single_all_ones(self):
        pred = Prediction(
            coarse=coarse(10, 3, 4),
            refined=RefinedPrediction(0.0, 0.0, np.array([1.0]), 1.0),
        )
        (det,) = run_pipeline([pred], self.ones, self.cfg, ["a"], video_id="v")
        self.assertEqual(det.interval, Interval(7, 14))
        self.assertAlmostEqual(det.score, 1.0, places=12)
        self.assertEqual(det.label, "a")
        self.assertEqual(det.video_id, "v")

    def test_refinement_and_fusion(self):
        pred = Prediction(
            coarse=coarse(5, 2, 2, level=1, scores=(0.2, 0.6), quality=0.8),
            refined=RefinedPrediction(0.5, -0.5, np.array([0.4, 0.8]), 0.4),
        )
        (det,) = run_pipeline([pred], None, dataclasses.replace(self.cfg, use_boundary_quality=False), ["a", "b"])
        # width 4: start 5 - 2 - 1 = 2, end 5 + 2 - 1 = 6, stride 2
        self.assertEqual(det.interval, Interval(4, 12))
        self.assertEqual(det.label, "b")
        self.assertAlmostEqual(det.score, 0.7 * 0.6)

    def test_ablation_switches(self):
        pred = Prediction(
            coarse=coarse(5, 2, 2, scores=(0.6,), quality=0.8),
            refined=RefinedPrediction(0.5, -0.5, np.array([0.8]), 0.4),
        )
        cfg = dataclasses.replace(
            self.cfg,
            use_refinement=False,
            use_refined_scores=False,
            use_refined_quality=False,
            use_boundary_quality=False,
        )
        (det,) = run_pipeline([pred], self.ones, cfg, ["a"])
        self.assertEqual(det.interval, Interval(3, 7))
        self.assertAlmostEqual(det.score, 0.6 * 0.8)

    def test_boundary_quality_lookup(self):
        start_map = np.full((64, 20), 0.25)
        maps = QualityMapPair(start_map, np.ones((64, 20)), self.scale_set)
        pred = Prediction(coarse=coarse(10, 3, 4))
        (det,) = run_pipeline([pred], maps, self.cfg, ["a"])
        self.assertAlmostEqual(det.p_start, 0.25)
        self.assertAlmostEqual(det.score, 0.5)

    def test_scale_set_mismatch(self):
        with self.assertRaises(InvalidParameterException):
            run_pipeline([], self.ones, InferenceConfig(scale_set=AnchorScaleSet(1, 130, 22)), ["a"])

    def random_predictions(self, rng, count=30):
        return [
            Prediction(
                coarse=coarse(
                    float(rng.integers(0, 60)),
                    float(rng.uniform(0, 8)),
                    float(rng.uniform(0, 8)),
                    scores=tuple(rng.uniform(size=3)),
                    quality=float(rng.uniform()),
                ),
                refined=RefinedPrediction(
                    float(rng.uniform(-0.3, 0.3)),
                    float(rng.uniform(-0.3, 0.3)),
                    rng.uniform(size=3),
                    float(rng.uniform()),
                ),
            )
            for _ in range(count)
        ]

    def test_deterministic_and_order_invariant(self):
        rng = np.random.default_rng(31)
        maps = QualityMapPair(rng.uniform(size=(64, 20)), rng.uniform(size=(64, 20)), self.scale_set)
        predictions = self.random_predictions(rng)
        first = run_pipeline(predictions, maps, self.cfg, ["a", "b", "c"])
        second = run_pipeline(predictions, maps, self.cfg, ["a", "b", "c"])
        shuffled = [predictions[i] for i in rng.permutation(len(predictions))]
        third = run_pipeline(shuffled, maps, self.cfg, ["a", "b", "c"])
        for other in (second, third):
            self.assertEqual(
                [(d.interval, d.label, d.score) for d in first],
                [(d.interval, d.label, d.score) for d in other],
            )


class TestInferencePreset(unittest.TestCase):
    def test_presets(self):
        self.assertEqual(InferenceConfig.preset("thumos"), InferenceConfig())
        activitynet = InferenceConfig.preset(Preset.ACTIVITYNET)
        self.assertEqual(activitynet.scale_set, AnchorScaleSet(1, 130, 22))
        self.assertEqual(activitynet.nms_threshold, 0.85)
        self.assertTrue(activitynet.per_class_nms)
