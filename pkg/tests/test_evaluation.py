from __future__ import annotations

import itertools
import random
import unittest

import numpy as np

from tadquality.enum import APInterpolation
from tadquality.enum import Preset
from tadquality.evaluation import EvalProtocol
from tadquality.evaluation import MapTable
from tadquality.evaluation import average_precision
from tadquality.evaluation import map_table
from tadquality.evaluation import match_detections
from tadquality.evaluation import oracle_rescore
from tadquality.evaluation import pr_curve
from tadquality.evaluation import score_tiou_correlation
from tadquality.exceptions import EmptyGroundTruthException
from tadquality.exceptions import InvalidParameterException
from tadquality.inference import Detection
from tadquality.quality_maps import GroundTruthAction
from tadquality.quality_maps import Interval


def gt(start, end, label="a", video_id="v"):
    return GroundTruthAction(interval=Interval(start, end), label=label, video_id=video_id)


def det(start, end, score, label="a", video_id="v"):
    return Detection(interval=Interval(start, end), label=label, score=score, video_id=video_id)


def brute_force_ap(true_positives, num_gt):
    """Sum over true positives of the best precision reached at or after their rank"""
    precisions = [
        sum(true_positives[: k + 1]) / (k + 1) for k in range(len(true_positives))
    ]
    return sum(
        max(precisions[k:]) for k, hit in enumerate(true_positives) if hit
    ) / num_gt


class TestMatchDetections(unittest.TestCase):
    def test_vectors(self):
        gts = [gt(0, 10)]
        for dets, expected in (
            ([det(0, 9, 0.9)], [True]),
            ([det(0, 9, 0.9), det(1, 10, 0.8)], [True, False]),
            ([det(0, 4, 0.9)], [False]),
        ):
            with self.subTest(dets=dets):
                matches = match_detections(dets, gts, 0.5)
                self.assertEqual([m.true_positive for m in matches], expected)

    def test_highest_score_claims_first(self):
        matches = match_detections([det(1, 10, 0.3), det(0, 6, 0.8)], [gt(0, 10)], 0.5)
        self.assertEqual([m.detection.score for m in matches], [0.8, 0.3])
        self.assertEqual([m.true_positive for m in matches], [True, False])

    def test_picks_best_overlap(self):
        matches = match_detections(
            [det(0, 10, 0.9), det(10, 20, 0.8)], [gt(10, 20), gt(0, 10)], 0.5
        )
        self.assertEqual([m.true_positive for m in matches], [True, True])

    def test_class_and_video_must_agree(self):
        gts = [gt(0, 10, label="a", video_id="v")]
        for detection in (det(0, 10, 0.9, label="b"), det(0, 10, 0.9, video_id="w")):
            with self.subTest(detection=detection):
                (match,) = match_detections([detection], gts, 0.5)
                self.assertFalse(match.true_positive)

    def test_pr_curve(self):
        matches = match_detections([det(0, 4, 0.9), det(0, 10, 0.5)], [gt(0, 10)], 0.5)
        curve = pr_curve(matches, 1)
        np.testing.assert_allclose(curve.precision, [0.0, 0.5])
        np.testing.assert_allclose(curve.recall, [0.0, 1.0])


class TestAveragePrecision(unittest.TestCase):
    def test_vectors(self):
        for true_positives, num_gt, expected in (
            ([True], 1, 1.0),
            ([False, True], 1, 0.5),
            ([], 1, 0.0),
            ([True, False, True], 2, (1.0 + 2 / 3) / 2),
            ([True], 0, 0.0),
        ):
            with self.subTest(true_positives=true_positives, num_gt=num_gt):
                self.assertAlmostEqual(average_precision(true_positives, num_gt), expected)

    def test_matches_brute_force(self):
        for length in range(1, 7):
            for true_positives in itertools.product((False, True), repeat=length):
                for num_gt in range(max(sum(true_positives), 1), 4):
                    with self.subTest(true_positives=true_positives, num_gt=num_gt):
                        self.assertAlmostEqual(
                            average_precision(list(true_positives), num_gt),
                            brute_force_ap(list(true_positives), num_gt),
                            places=12,
                        )

    def test_eleven_point(self):
        for true_positives, num_gt, expected in (
            ([False, True], 1, 0.5),
            ([True, False], 2, 6 / 11),
            ([True], 1, 1.0),
        ):
            with self.subTest(true_positives=true_positives):
                self.assertAlmostEqual(
                    average_precision(true_positives, num_gt, APInterpolation.ELEVEN_POINT),
                    expected,
                )

    def test_negative_ground_truth_count(self):
        with self.assertRaises(InvalidParameterException):
            average_precision([True], -1)


class TestMapTable(unittest.TestCase):
    def setUp(self):
        self.gts = [
            gt(0, 10, "a", "v1"),
            gt(20, 30, "b", "v1"),
            gt(5, 8, "a", "v2"),
            gt(40, 70, "c", "v2"),
        ]

    def test_perfect_detections(self):
        dets = [det(g.interval.start, g.interval.end, 1.0, g.label, g.video_id) for g in self.gts]
        table = map_table(dets, self.gts)
        np.testing.assert_array_equal(table.ap, np.ones((3, 5)))
        self.assertEqual(table.average_map, 1.0)
        self.assertEqual(table.classes, ("a", "b", "c"))

    def test_single_class(self):
        gts = [gt(0, 10), gt(20, 30)]
        dets = [det(0, 9, 0.9), det(50, 60, 0.8), det(21, 30, 0.7)]
        table = map_table(dets, gts, EvalProtocol(thresholds=(0.5,)))
        matches = match_detections(dets, gts, 0.5)
        expected = average_precision([m.true_positive for m in matches], 2)
        self.assertAlmostEqual(table.average_map, expected)
        self.assertAlmostEqual(expected, (1.0 + 2 / 3) / 2)

    def test_order_invariant(self):
        rng = np.random.default_rng(4)
        dets = [
            det(s, s + float(rng.uniform(2, 30)), float(rng.uniform()), label, video)
            for s, label, video in zip(
                rng.uniform(0, 60, 40), itertools.cycle("abc"), itertools.cycle(("v1", "v2"))
            )
        ]
        expected = map_table(dets, self.gts).ap
        shuffled = list(dets)
        random.Random(1).shuffle(shuffled)
        np.testing.assert_array_equal(map_table(shuffled, self.gts).ap, expected)

    def test_average_is_mean_of_thresholds(self):
        dets = [det(0, 7, 0.9, "a", "v1"), det(22, 30, 0.6, "b", "v1"), det(40, 50, 0.5, "c", "v2")]
        table = map_table(dets, self.gts)
        self.assertAlmostEqual(table.average_map, float(np.mean(table.mean_ap)))

    def test_classes_without_ground_truth_are_skipped(self):
        table = map_table([], self.gts, EvalProtocol(classes=("a", "z")))
        self.assertEqual(table.classes, ("a",))

    def test_empty_ground_truth(self):
        with self.assertRaises(EmptyGroundTruthException):
            map_table([det(0, 1, 0.5)], [])

    def test_frames(self):
        table = MapTable(classes=("a", "b"), thresholds=(0.3, 0.5), ap=np.array([[1.0, 0.5], [0.5, 0.0]]))
        self.assertEqual(table.summary(), {"tiou_0.30": 0.75, "tiou_0.50": 0.25, "average": 0.5})
        frame = table.to_frame()
        self.assertEqual(list(frame.columns), ["class", "tiou_0.30", "tiou_0.50", "average"])
        self.assertEqual(list(frame["class"]), ["a", "b", "mAP"])
        self.assertEqual(list(frame["average"]), [0.75, 0.25, 0.5])


class TestEvalProtocol(unittest.TestCase):
    def test_presets(self):
        self.assertEqual(EvalProtocol.preset(Preset.THUMOS).thresholds, (0.3, 0.4, 0.5, 0.6, 0.7))
        thresholds = EvalProtocol.preset("ActivityNet").thresholds
        self.assertEqual(len(thresholds), 10)
        self.assertEqual((thresholds[0], thresholds[-1]), (0.5, 0.95))

    def test_invalid(self):
        for thresholds in ((), (0.5, 0.3), (0.0, 0.5), (0.5, 1.0), (0.5, 0.5)):
            with self.subTest(thresholds=thresholds):
                with self.assertRaises(InvalidParameterException):
                    EvalProtocol(thresholds=thresholds)


class TestOracle(unittest.TestCase):
    def test_oracle_rescore(self):
        gts = [gt(0, 3), gt(10, 20, label="b")]
        rescored = oracle_rescore(
            [det(0, 3, 0.1), det(5, 8, 0.9), det(0, 2, 0.5), det(10, 20, 0.5)], gts
        )
        for detection, expected in zip(rescored, (1.0, 0.0, 2 / 3, 0.0)):
            with self.subTest(detection=detection):
                self.assertAlmostEqual(detection.score, expected)

    def test_oracle_lifts_hits_above_false_positives(self):
        gts = [gt(0, 10), gt(20, 30)]
        dets = [det(40, 50, 0.9), det(0, 10, 0.2), det(21, 30, 0.1)]
        before = map_table(dets, gts).average_map
        after = map_table(oracle_rescore(dets, gts), gts).average_map
        self.assertGreater(after, before)
        self.assertEqual(after, 1.0)


class TestScoreTiouCorrelation(unittest.TestCase):
    def setUp(self):
        self.gts = [gt(0, 10)]
        self.intervals = [(0, 10), (0, 8), (0, 5), (0, 2)]

    def test_perfect_ranking(self):
        dets = [det(s, e, score) for (s, e), score in zip(self.intervals, (0.9, 0.7, 0.5, 0.1))]
        self.assertAlmostEqual(score_tiou_correlation(dets, self.gts), 1.0)

    def test_reversed_ranking(self):
        dets = [det(s, e, score) for (s, e), score in zip(self.intervals, (0.1, 0.5, 0.7, 0.9))]
        self.assertAlmostEqual(score_tiou_correlation(dets, self.gts), -1.0)

    def test_degenerate(self):
        self.assertEqual(score_tiou_correlation([det(0, 5, 0.4)], self.gts), 0.0)
        constant = [det(s, e, 0.5) for s, e in self.intervals]
        self.assertEqual(score_tiou_correlation(constant, self.gts), 0.0)
