from __future__ import annotations

import tempfile
import unittest
from dataclasses import replace
from pathlib import Path

import numpy as np

from osbf_speller.dataset import SynthConfig, synth_dataset
from osbf_speller.linsvm import Hyperplane
from osbf_speller.scoring import (
    ZONE_A,
    ZONE_B,
    ZONE_C,
    ZONE_D,
    ZONE_E,
    DvTensor,
    ScoreProfile,
    ScoringError,
    ZoneTensor,
    assign_zones,
    cumulative_scores,
    cumulative_tensor,
    decision_tensor,
    group_layout,
    quartiles,
    save_zones_csv,
    sbf_heuristic_profile,
    score_split,
)


def _dv(values: np.ndarray, grouping: str = "pooled", row_split: int | None = None) -> DvTensor:
    _, _, n_t, n_f = values.shape
    ids, names = group_layout(n_t, n_f, grouping, row_split)
    return DvTensor(values=np.asarray(values, dtype=float), grouping=grouping, group_ids=ids, group_names=names)


class GroupLayoutTests(unittest.TestCase):
    def test_single_level_splits_rows_and_columns(self) -> None:
        ids, names = group_layout(1, 6, "per_level")
        np.testing.assert_array_equal(ids, [[0, 0, 0, 1, 1, 1]])
        self.assertEqual(names, ("rows", "columns"))

    def test_row_split_zero_keeps_one_group(self) -> None:
        ids, names = group_layout(1, 4, "per_level", row_split=0)
        self.assertTrue((ids == 0).all())
        self.assertEqual(len(names), 1)

    def test_multi_level_groups_by_level(self) -> None:
        ids, names = group_layout(2, 3, "per_level", level_names=("row", "column"))
        np.testing.assert_array_equal(ids, [[0, 0, 0], [1, 1, 1]])
        self.assertEqual(names, ("row", "column"))

    def test_unknown_grouping(self) -> None:
        with self.assertRaises(ScoringError):
            group_layout(1, 4, "by_flash")


class QuartileTests(unittest.TestCase):
    def test_linear_interpolation_quartiles(self) -> None:
        values = np.array([1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0]).reshape(2, 1, 1, 4)
        q = quartiles(_dv(values))
        np.testing.assert_allclose(q.values[0], [2.75, 4.5, 6.25])
        self.assertEqual(q.as_dict(), {"pooled": [2.75, 4.5, 6.25]})

    def test_per_level_groups_are_independent(self) -> None:
        values = np.array([[0.0, 0.0, 10.0, 10.0], [1.0, 1.0, 20.0, 20.0]]).reshape(1, 2, 1, 4)
        q = quartiles(_dv(values, "per_level"))
        np.testing.assert_allclose(q.values[0], [0.0, 0.5, 1.0])
        np.testing.assert_allclose(q.values[1], [10.0, 15.0, 20.0])


class ZoneTests(unittest.TestCase):
    def test_zones_follow_quartiles_and_strict_max(self) -> None:
        dv = _dv(np.array([-3.0, -1.0, 0.5, 2.0]).reshape(1, 1, 1, 4))
        q = quartiles(dv)
        # quartiles of [-3, -1, 0.5, 2] are -1.5, -0.25, 0.875
        zones = assign_zones(dv, q)
        np.testing.assert_array_equal(zones.codes[0, 0, 0], [ZONE_E, ZONE_D, ZONE_C, ZONE_A])

    def test_tied_maximum_is_not_zone_a(self) -> None:
        values = np.array([[1.0, 2.0, 2.0, -5.0], [0.0, 0.0, 0.0, 0.0]]).reshape(2, 1, 1, 4)
        dv = _dv(values)
        zones = assign_zones(dv, quartiles(dv))
        self.assertNotIn(ZONE_A, zones.codes[0].ravel().tolist())
        self.assertEqual(int(zones.codes[0, 0, 0, 1]), ZONE_B)

    def test_negative_maximum_is_not_zone_a(self) -> None:
        values = np.array([[-4.0, -3.0, -2.0, -1.0], [-8.0, -7.0, -6.0, -5.0]]).reshape(2, 1, 1, 4)
        dv = _dv(values)
        zones = assign_zones(dv, quartiles(dv))
        self.assertFalse((zones.codes == ZONE_A).any())

    def test_at_most_one_zone_a_per_sequence(self) -> None:
        train_set, _ = synth_dataset(SynthConfig(n_trials=5, n_iterations=4, n_flashes=6, feature_dim=3, seed=4))
        h = Hyperplane(w=np.array([1.0, 0.5, -0.25]), b=0.1)
        zones = score_split(h, train_set).zones
        self.assertTrue(((zones.codes == ZONE_A).sum(axis=3) <= 1).all())

    def test_zones_are_monotone_within_a_sequence(self) -> None:
        rng = np.random.default_rng(31)
        dv = _dv(rng.normal(size=(6, 4, 2, 5)))
        codes = assign_zones(dv, quartiles(dv)).codes.astype(int)
        v = dv.values
        higher = v[..., :, None] > v[..., None, :]
        better_or_equal = codes[..., :, None] <= codes[..., None, :]
        self.assertTrue(better_or_equal[higher].all())

    def test_zones_b_to_e_ignore_a_common_shift(self) -> None:
        rng = np.random.default_rng(32)
        values = rng.integers(-20, 21, size=(5, 3, 1, 6)) / 4.0
        dv = _dv(values)
        q = quartiles(dv)
        for shift in (-7.0, 3.5, 12.0):
            with self.subTest(shift=shift):
                moved = _dv(values + shift)
                codes = assign_zones(dv, q).codes
                moved_codes = assign_zones(moved, replace(q, values=q.values + shift)).codes
                # only the positivity test of zone a depends on the offset
                np.testing.assert_array_equal(
                    np.where(codes == ZONE_A, ZONE_B, codes),
                    np.where(moved_codes == ZONE_A, ZONE_B, moved_codes),
                )

    def test_quartiles_must_match_grouping(self) -> None:
        values = np.arange(8, dtype=float).reshape(1, 1, 1, 8)
        q = quartiles(_dv(values, "pooled"))
        with self.assertRaises(ScoringError):
            assign_zones(_dv(values, "per_level"), q)

    def test_test_split_uses_frozen_train_quartiles(self) -> None:
        train_set, test_set = synth_dataset(SynthConfig(n_trials=6, n_iterations=3, n_flashes=4, feature_dim=2, seed=8))
        h = Hyperplane(w=np.array([0.7, -0.3]), b=0.0)
        scored_train = score_split(h, train_set)
        scored_test = score_split(h, test_set, q=scored_train.quartiles)
        self.assertIs(scored_test.quartiles, scored_train.quartiles)
        expected = assign_zones(decision_tensor(h, test_set), scored_train.quartiles)
        np.testing.assert_array_equal(scored_test.zones.codes, expected.codes)

    def test_dimension_mismatch(self) -> None:
        train_set, _ = synth_dataset(SynthConfig(n_trials=1, n_iterations=1, n_flashes=2, feature_dim=3, seed=0))
        with self.assertRaises(ScoringError):
            decision_tensor(Hyperplane(w=np.zeros(2), b=0.0), train_set)

    def test_zone_csv_export(self) -> None:
        z = ZoneTensor(codes=np.array([ZONE_A, ZONE_E], dtype=np.int8).reshape(1, 1, 1, 2))
        with tempfile.TemporaryDirectory() as tmp:
            text = save_zones_csv(z, Path(tmp) / "zones.csv").read_text(encoding="utf-8")
        self.assertEqual(text, "k,r,t,f,zone\n1,1,0,1,a\n1,1,0,2,e\n")


class ScoreProfileTests(unittest.TestCase):
    def test_cumulative_scores_match_loop(self) -> None:
        codes = np.array([[ZONE_A, ZONE_C, ZONE_E], [ZONE_B, ZONE_D, ZONE_E], [ZONE_A, ZONE_E, ZONE_D]])
        z = ZoneTensor(codes=codes.reshape(1, 3, 1, 3).astype(np.int8))
        p = sbf_heuristic_profile()
        np.testing.assert_array_equal(cumulative_scores(z, p, k=1, t=0, upto_r=2), [3, -1, -4])
        np.testing.assert_array_equal(cumulative_tensor(z, p)[0, :, 0], [[2, 0, -2], [3, -1, -4], [5, -3, -5]])

    def test_cumulative_scores_index_checks(self) -> None:
        z = ZoneTensor(codes=np.zeros((1, 2, 1, 2), dtype=np.int8))
        with self.assertRaises(ScoringError):
            cumulative_scores(z, sbf_heuristic_profile(), k=1, t=0, upto_r=3)

    def test_sbf_default_profile(self) -> None:
        p = sbf_heuristic_profile()
        self.assertEqual(p.s, (2, 1, 0, -1, -2))
        self.assertEqual(p.delta, 5)
        self.assertEqual(p.validate(), [])

    def test_profile_validation(self) -> None:
        self.assertTrue(ScoreProfile(s=(3, 3, 0, -1, -2), delta=6, bounds=(-3, 3)).validate())
        self.assertTrue(ScoreProfile(s=(3, 2, -1, -2, -3), delta=7, bounds=(-3, 3)).validate())
        self.assertTrue(ScoreProfile(s=(3, 2, 1, 0, -1), delta=4, bounds=(-3, 3)).validate())
        with self.assertRaises(ScoringError):
            sbf_heuristic_profile((2, 1, 0, -1))

    def test_profile_dict_round_trip(self) -> None:
        p = ScoreProfile(s=(4, 2, 0, -1, -3), delta=9, bounds=(-5, 5))
        self.assertEqual(ScoreProfile.from_dict(p.to_dict()), p)


if __name__ == "__main__":
    unittest.main()
