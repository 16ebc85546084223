from __future__ import annotations

import math
import tempfile
import unittest
from pathlib import Path

import numpy as np

from osbf_speller.dataset import ProtocolMeta, SynthConfig, synth_dataset
from osbf_speller.evaluation import (
    CSV_COLUMNS,
    EvalReport,
    MetricError,
    TrialPrediction,
    bitrate,
    build_report,
    class_split,
    itr,
    predict_dv_med,
    predict_erp_avg,
    predict_scorebased,
    read_results_csv,
    symbol_index,
    write_results_csv,
)
from osbf_speller.linsvm import Hyperplane
from osbf_speller.scoring import ZONE_A, ZONE_B, ZONE_C, ZONE_D, ZONE_E, ScoreProfile, ZoneTensor, decision_tensor, sbf_heuristic_profile

GRID = ProtocolMeta(
    n_symbols=36,
    levels=("row", "column"),
    n_flashes=6,
    max_iterations=8,
    soa_seconds=0.25,
    flashes_per_iteration=12,
    overhead_seconds=0.0,
    n_channels=1,
    samples_per_channel=1,
)


def _prediction(correct: bool, stop: int = 8, levels_correct: int = 2) -> TrialPrediction:
    return TrialPrediction(
        trial=1,
        flashes=(1, 1),
        stop_iteration=stop,
        predicted_symbol=0,
        correct=correct,
        levels_correct=levels_correct,
    )


def _report(accuracy: float) -> EvalReport:
    return EvalReport(
        method="osbf",
        mode="nostop",
        accuracy=accuracy,
        mean_iterations=8.0,
        bitrate_bits=0.0,
        trial_duration_min=0.4,
        itr_bits_per_min=0.0,
        level_accuracy=accuracy,
        fallback_count=0,
    )


class MetricTests(unittest.TestCase):
    def test_bitrate_identities(self) -> None:
        self.assertAlmostEqual(bitrate(36, 1.0), math.log2(36), delta=1e-12)
        for n in (2, 6, 36):
            self.assertAlmostEqual(bitrate(n, 1.0 / n), 0.0, delta=1e-12)
        self.assertAlmostEqual(bitrate(2, 0.0), 1.0, delta=1e-12)

    def test_bitrate_rises_with_accuracy_above_chance(self) -> None:
        for n in (2, 6, 30, 36):
            with self.subTest(n=n):
                grid = np.linspace(1.0 / n, 1.0, 201)
                values = np.array([bitrate(n, float(p)) for p in grid])
                self.assertTrue((np.diff(values) > 0).all())

    def test_bitrate_domain(self) -> None:
        with self.assertRaises(MetricError):
            bitrate(1, 1.0)
        with self.assertRaises(MetricError):
            bitrate(36, 1.2)

    def test_trial_duration_and_itr(self) -> None:
        duration, rate = itr(2.0, 0.25, 12, 8)
        self.assertEqual(duration, 0.4)
        self.assertAlmostEqual(rate, 5.0)
        with self.assertRaises(MetricError):
            itr(1.0, 0.25, 12, 0)

    def test_symbol_index_is_row_major(self) -> None:
        self.assertEqual(symbol_index((1, 1), 6), 0)
        self.assertEqual(symbol_index((2, 3), 6), 8)
        self.assertEqual(symbol_index((6, 6), 6), 35)

    def test_build_report(self) -> None:
        predictions = [_prediction(True), _prediction(True), _prediction(False, stop=4, levels_correct=1), _prediction(True)]
        report = build_report(predictions, "osbf", "earlystop", GRID, classifier="msvm", subject="s01", dataset="demo")
        self.assertEqual(report.accuracy, 0.75)
        self.assertEqual(report.mean_iterations, 7.0)
        self.assertEqual(report.level_accuracy, 7 / 8)
        self.assertAlmostEqual(report.bitrate_bits, bitrate(36, 0.75))
        self.assertAlmostEqual(report.trial_duration_min, 0.25 * 12 * 7 / 60)
        self.assertAlmostEqual(report.itr_bits_per_min, report.bitrate_bits / report.trial_duration_min)
        with self.assertRaises(MetricError):
            build_report([], "osbf", "nostop", GRID)


class PredictionTests(unittest.TestCase):
    def test_dv_med_picks_largest_mean(self) -> None:
        train_set, _ = synth_dataset(SynthConfig(n_trials=3, n_iterations=4, n_flashes=5, feature_dim=3, target_shift=50.0, seed=2))
        h = Hyperplane(w=np.ones(3), b=0.0)
        dv = decision_tensor(h, train_set)
        predictions = predict_dv_med(dv, train_set)
        expected = np.argmax(dv.values.mean(axis=1), axis=-1) + 1
        self.assertEqual([p.flashes for p in predictions], [tuple(int(f) for f in row) for row in expected])
        self.assertTrue(all(p.stop_iteration == 4 for p in predictions))

    def test_erp_average_commutes_with_dv_average(self) -> None:
        rng = np.random.default_rng(1)
        for seed in range(10):
            _, test = synth_dataset(SynthConfig(n_trials=4, n_iterations=3, n_flashes=4, n_levels=2, feature_dim=5, target_shift=1.0, seed=seed))
            h = Hyperplane(w=rng.standard_normal(5), b=float(rng.standard_normal()))
            by_dv = predict_dv_med(decision_tensor(h, test), test)
            by_erp = predict_erp_avg(h, test)
            self.assertEqual([p.flashes for p in by_dv], [p.flashes for p in by_erp])

    def test_erp_average_checks_dimension(self) -> None:
        _, test = synth_dataset(SynthConfig(n_trials=1, n_iterations=1, n_flashes=2, feature_dim=3, seed=0))
        with self.assertRaises(MetricError):
            predict_erp_avg(Hyperplane(w=np.zeros(4), b=0.0), test)

    def test_scorebased_nostop_and_earlystop(self) -> None:
        # flash 1 scores 2 per iteration, flash 2 scores 1, flash 3 scores -2
        codes = np.tile(np.array([ZONE_A, ZONE_B, ZONE_E], dtype=np.int8), (4, 1)).reshape(1, 4, 1, 3)
        z = ZoneTensor(codes=codes)
        truth = np.array([[1]])
        p = ScoreProfile(s=(2, 1, 0, -1, -2), delta=5, bounds=(-2, 2))

        nostop = predict_scorebased(z, p, "nostop", truth=truth)
        self.assertEqual((nostop[0].flashes, nostop[0].stop_iteration, nostop[0].correct), ((1,), 4, True))

        # the leader gap grows by one per iteration and first reaches 5 at iteration 5, so it never fires
        early = predict_scorebased(z, p, "earlystop", truth=truth)
        self.assertTrue(early[0].fallback)
        self.assertEqual(early[0].stop_iteration, 4)

        codes_wide = np.tile(np.array([ZONE_A, ZONE_C, ZONE_E], dtype=np.int8), (4, 1)).reshape(1, 4, 1, 3)
        # a gap of 2 per iteration first clears 5 at iteration 3
        stopped = predict_scorebased(ZoneTensor(codes=codes_wide), p, "earlystop", truth=truth)
        self.assertEqual((stopped[0].stop_iteration, stopped[0].fallback, stopped[0].correct), (3, False, True))

    def test_trial_stops_when_last_level_stops(self) -> None:
        level0 = np.tile(np.array([ZONE_A, ZONE_E], dtype=np.int8), (4, 1))
        level1 = np.array([[ZONE_C, ZONE_C], [ZONE_C, ZONE_C], [ZONE_E, ZONE_A], [ZONE_E, ZONE_A]], dtype=np.int8)
        codes = np.stack([level0, level1], axis=1).reshape(1, 4, 2, 2)
        p = ScoreProfile(s=(2, 1, 0, -1, -2), delta=5, bounds=(-2, 2))
        # level 0 gap is 4 per iteration (stops at 2); level 1 gap reaches 8 at iteration 4 (stops at 4)
        out = predict_scorebased(ZoneTensor(codes=codes), p, "earlystop", truth=np.array([[1, 2]]))
        self.assertEqual(out[0].stop_iteration, 4)
        self.assertEqual(out[0].flashes, (1, 2))
        self.assertTrue(out[0].correct)
        self.assertEqual(out[0].predicted_symbol, 1)

    def test_scorebased_prefix_and_errors(self) -> None:
        codes = np.tile(np.array([ZONE_E, ZONE_D], dtype=np.int8), (3, 1)).reshape(1, 3, 1, 2)
        z = ZoneTensor(codes=codes)
        p = sbf_heuristic_profile()
        out = predict_scorebased(z, p, "nostop", n_r=2, truth=np.array([[1]]))
        self.assertEqual((out[0].flashes, out[0].stop_iteration, out[0].correct), ((2,), 2, False))
        with self.assertRaises(MetricError):
            predict_scorebased(z, p, "nostop", n_r=4, truth=np.array([[1]]))
        with self.assertRaises(MetricError):
            predict_scorebased(z, p, "sometimes", truth=np.array([[1]]))


class ReportFileTests(unittest.TestCase):
    def test_class_split(self) -> None:
        standard = {"a": _report(0.9), "b": _report(0.5), "c": _report(0.7)}
        msvm = {"a": _report(0.8), "b": _report(0.6), "c": _report(0.7)}
        split = class_split(standard, msvm)
        self.assertEqual(split["class1"]["subjects"], ["a"])
        self.assertEqual(split["class2"]["subjects"], ["b"])
        self.assertEqual(split["ties"], ["c"])
        self.assertAlmostEqual(split["class2"]["msvm"], 0.6)
        with self.assertRaises(MetricError):
            class_split({"a": _report(0.9)}, {"z": _report(0.9)})

    def test_results_csv_round_trip(self) -> None:
        report = build_report([_prediction(True)], "sbf", "nostop", GRID, classifier="l2", subject="s01", dataset="demo")
        with tempfile.TemporaryDirectory() as tmp:
            path = write_results_csv([report], Path(tmp) / "out" / "results.csv")
            header = path.read_text(encoding="utf-8").splitlines()[0]
            rows = read_results_csv(path)
        self.assertEqual(header, ",".join(CSV_COLUMNS))
        self.assertEqual(rows[0]["accuracy"], "1.000000")
        self.assertEqual(rows[0]["mean_iters"], "8.000000")
        self.assertEqual(rows[0]["duration_min"], "0.400000")
        self.assertEqual(rows[0]["subject"], "s01")


if __name__ == "__main__":
    unittest.main()
