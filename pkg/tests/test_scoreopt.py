from __future__ import annotations

import json
import unittest

import numpy as np

from osbf_speller.acceptance import random_zone_tensor
from osbf_speller.scoreopt import (
    LatticeBounds,
    ScoreOptError,
    TimingParams,
    check_constraints,
    earlystop_objective,
    exhaustive_search,
    nostop_objective,
    optimize_earlystop,
    optimize_nostop,
)
from osbf_speller.scoring import ZONE_A, ZONE_B, ZONE_C, ZONE_E, ScoreProfile, ZoneTensor, sbf_heuristic_profile

SMALL = LatticeBounds(l=-3, u=3)


def _clear_target() -> tuple[ZoneTensor, np.ndarray]:
    """One trial, two iterations, three flashes; the target is in zone a every time."""
    codes = np.array([[ZONE_A, ZONE_E, ZONE_E], [ZONE_A, ZONE_E, ZONE_E]], dtype=np.int8)
    return ZoneTensor(codes=codes.reshape(1, 2, 1, 3)), np.array([[1]])


def _timing(z: ZoneTensor) -> TimingParams:
    n_k, n_r, n_t, n_f = z.shape
    return TimingParams(soa_seconds=0.25, flashes_per_iteration=n_t * n_f, n_trials=n_k, n_iterations=n_r)


class LatticeTests(unittest.TestCase):
    def test_score_vectors_are_feasible_and_ordered(self) -> None:
        vectors = list(SMALL.score_vectors())
        self.assertEqual(vectors, sorted(vectors))
        self.assertEqual(vectors[0], (2, 1, 0, -2, -3))
        for s in vectors:
            self.assertEqual(ScoreProfile(s=s, delta=s[0] - s[4] + 1, bounds=(-3, 3)).validate(), [])

    def test_infeasible_bounds(self) -> None:
        self.assertTrue(LatticeBounds(l=0, u=3).validate())
        self.assertTrue(LatticeBounds(l=-5, u=1).validate())
        z, truth = _clear_target()
        with self.assertRaises(ScoreOptError):
            optimize_nostop(z, truth, LatticeBounds(l=0, u=3))

    def test_default_delta_cap(self) -> None:
        self.assertEqual(LatticeBounds().effective_delta_max(8), 160)
        self.assertEqual(LatticeBounds().effective_delta_max(1), 21)
        self.assertEqual(LatticeBounds(delta_max=30).effective_delta_max(8), 30)


class ObjectiveTests(unittest.TestCase):
    def test_nostop_objective_by_hand(self) -> None:
        z, truth = _clear_target()
        # the target leads by 4 after one iteration and by 8 after two; delta = 5
        self.assertEqual(nostop_objective(z, truth, sbf_heuristic_profile()), 1.5)

    def test_truth_may_be_a_mapping(self) -> None:
        z, truth = _clear_target()
        p = sbf_heuristic_profile()
        self.assertEqual(nostop_objective(z, {1: {0: 1}}, p), nostop_objective(z, truth, p))

    def test_earlystop_objective_by_hand(self) -> None:
        z, truth = _clear_target()
        tp = _timing(z)
        self.assertEqual(tp.factor, 1.25)
        # stops at the second iteration with the target: 1 - 1.25 * 2
        self.assertEqual(earlystop_objective(z, truth, sbf_heuristic_profile(), tp), -1.5)
        never = ScoreProfile(s=(2, 1, 0, -1, -2), delta=9, bounds=(-2, 2))
        # never stops: one error charged all n_r iterations
        self.assertEqual(earlystop_objective(z, truth, never, tp), -2.5)

    def test_infeasible_profile_is_rejected(self) -> None:
        z, truth = _clear_target()
        with self.assertRaises(ScoreOptError):
            nostop_objective(z, truth, ScoreProfile(s=(2, 1, 0, -1, -2), delta=4, bounds=(-2, 2)))

    def test_timing_must_match_tensor(self) -> None:
        z, truth = _clear_target()
        with self.assertRaises(ScoreOptError):
            earlystop_objective(z, truth, sbf_heuristic_profile(), TimingParams(0.25, 3, n_trials=2, n_iterations=2))
        with self.assertRaises(ScoreOptError):
            optimize_earlystop(z, truth, SMALL, None)  # type: ignore[arg-type]

    def test_truth_out_of_range(self) -> None:
        z, _ = _clear_target()
        with self.assertRaises(ScoreOptError):
            nostop_objective(z, np.array([[4]]), sbf_heuristic_profile())


class OptimizerTests(unittest.TestCase):
    def test_clear_target_reaches_ceiling_at_first_vector(self) -> None:
        z, truth = _clear_target()
        result = optimize_nostop(z, truth, SMALL)
        self.assertEqual(result.profile.s, (2, 1, 0, -2, -3))
        self.assertEqual(result.profile.delta, 6)
        self.assertEqual(result.objective, 1.5)
        self.assertEqual(result.per_level_breakdown, {"level0": {"err_rate": 0.0, "x_sum": 1}})

    def test_clear_target_early_stopping(self) -> None:
        z, truth = _clear_target()
        result = optimize_earlystop(z, truth, SMALL, _timing(z), level_names=("row",))
        self.assertEqual(result.objective, -1.5)
        self.assertEqual(result.profile.delta, result.profile.floor)
        self.assertEqual(result.per_level_breakdown["row"]["mean_stop_iteration"], 2.0)

    def test_matches_exhaustive_search(self) -> None:
        rng = np.random.default_rng(12)
        for i in range(5):
            z, truth = random_zone_tensor(rng)
            tp = _timing(z)
            for mode in ("nostop", "earlystop"):
                with self.subTest(instance=i, mode=mode):
                    found = optimize_nostop(z, truth, SMALL) if mode == "nostop" else optimize_earlystop(z, truth, SMALL, tp)
                    profile, value, size = exhaustive_search(z, truth, SMALL, mode, tp)
                    self.assertEqual(found.profile, profile)
                    self.assertEqual(found.objective, value)
                    self.assertGreater(size, 0)
                    self.assertEqual(check_constraints(z, truth, found, tp), [])

    def test_optimum_dominates_sbf(self) -> None:
        rng = np.random.default_rng(13)
        sbf = sbf_heuristic_profile()
        for _ in range(5):
            z, truth = random_zone_tensor(rng)
            tp = _timing(z)
            self.assertGreaterEqual(optimize_nostop(z, truth, SMALL).objective, nostop_objective(z, truth, sbf))
            self.assertGreaterEqual(
                optimize_earlystop(z, truth, SMALL, tp).objective,
                earlystop_objective(z, truth, sbf, tp),
            )

    def test_parallel_branches_agree_with_serial(self) -> None:
        rng = np.random.default_rng(14)
        z, truth = random_zone_tensor(rng)
        tp = _timing(z)
        serial = optimize_earlystop(z, truth, SMALL, tp)
        parallel = optimize_earlystop(z, truth, SMALL, tp, workers=3)
        self.assertEqual(parallel.profile, serial.profile)
        self.assertEqual(parallel.objective, serial.objective)

    def test_constraint_audit_catches_a_wrong_objective(self) -> None:
        z, truth = _clear_target()
        result = optimize_nostop(z, truth, SMALL)
        result.objective = 1.0
        violations = check_constraints(z, truth, result)
        self.assertTrue(any("objective" in v for v in violations))

    def test_constraint_audit_accepts_a_late_separation(self) -> None:
        codes = np.array([[ZONE_B, ZONE_C, ZONE_C], [ZONE_A, ZONE_E, ZONE_E]], dtype=np.int8)
        z = ZoneTensor(codes=codes.reshape(1, 2, 1, 3))
        result = optimize_earlystop(z, np.array([[1]]), SMALL, _timing(z))
        self.assertEqual(check_constraints(z, np.array([[1]]), result, _timing(z)), [])

    def test_result_serialises(self) -> None:
        z, truth = _clear_target()
        payload = json.loads(optimize_nostop(z, truth, SMALL).to_json())
        self.assertEqual(payload["mode"], "nostop")
        self.assertEqual(payload["profile"], {"s": [2, 1, 0, -2, -3], "delta": 6, "bounds": [-3, 3]})
        self.assertEqual(payload["delta_max"], 12)


if __name__ == "__main__":
    unittest.main()
