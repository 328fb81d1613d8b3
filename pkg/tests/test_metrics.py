import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from sklearn.metrics import cohen_kappa_score, roc_auc_score

from segrisk.exceptions import InvalidInputError, UndefinedMetricError
from segrisk.metrics import (
    binary_auc,
    confusion_matrix,
    dice_scores,
    pixel_f1,
    quadratic_weighted_kappa,
    roc_auc_ovr,
)
from segrisk.tensor_core import IGNORE

from oracles import auc_pairs, quadratic_kappa_loops


class TestConfusion:
    def test_identity_is_diagonal(self):
        ref = np.array([[0, 1], [2, 2]])
        cm = confusion_matrix(ref, ref, 3)
        np.testing.assert_array_equal(cm, np.diag([1, 1, 2]))

    def test_all_ignore(self):
        ref = np.full((2, 2), IGNORE)
        assert not confusion_matrix(np.zeros((2, 2), int), ref, 3).any()

    def test_hand_count(self):
        ref = [0, 0, 1, 2]
        pred = [0, 1, 1, 0]
        expect = np.array([[1, 1, 0], [0, 1, 0], [1, 0, 0]])
        np.testing.assert_array_equal(confusion_matrix(pred, ref, 3), expect)

    def test_shape_mismatch(self):
        with pytest.raises(InvalidInputError):
            confusion_matrix([0, 1], [0, 1, 1], 2)


class TestDice:
    def test_half_overlap(self):
        ref = np.array([1, 1, 0, 0])
        pred = np.array([1, 0, 1, 0])
        assert dice_scores(pred, ref, 2).per_class[1] == 0.5

    def test_perfect_and_disjoint(self):
        ref = np.array([0, 1, 1, 2])
        r = dice_scores(ref, ref, 4)
        np.testing.assert_array_equal(r.per_class[:3], [1, 1, 1])
        assert np.isnan(r.per_class[3]) and r.absent == [3]
        assert r.mean == 1.0
        assert dice_scores(np.array([1, 0, 0, 2]), ref, 4).per_class[1] == 0.0

    def test_absent_as_zero(self):
        ref = np.array([0, 1])
        r = dice_scores(ref, ref, 4, absent_as_zero=True)
        assert r.mean == 0.5

    def test_ignore_excluded(self):
        ref = np.array([0, IGNORE, 1])
        pred = np.array([0, 1, 1])
        assert dice_scores(pred, ref, 2).mean == 1.0

    @given(st.integers(0, 2**32 - 1))
    @settings(max_examples=50)
    def test_f1_identity_and_symmetry(self, seed):
        rng = np.random.default_rng(seed)
        ref = rng.integers(0, 5, size=40)
        pred = rng.integers(0, 5, size=40)
        a, b = dice_scores(pred, ref, 5), pixel_f1(pred, ref, 5)
        np.testing.assert_array_equal(a.per_class, b.per_class)
        assert a.mean == b.mean
        np.testing.assert_array_equal(a.per_class, dice_scores(ref, pred, 5).per_class)
        perm = rng.permutation(5)
        assert dice_scores(perm[pred], perm[ref], 5).mean == pytest.approx(a.mean, abs=1e-15)

    def test_to_dict(self):
        d = dice_scores(np.array([0, 1]), np.array([0, 1]), 3).to_dict()
        assert d == {"per_class": [1.0, 1.0, None], "mean": 1.0, "absent": [2]}


class TestKappa:
    def test_perfect(self):
        assert quadratic_weighted_kappa([0, 1, 2, 3], [0, 1, 2, 3], 4) == 1.0

    def test_reversal(self):
        assert quadratic_weighted_kappa([0, 0, 3, 3], [3, 3, 0, 0], 4) == pytest.approx(-1.0, abs=1e-15)

    def test_constant_agreement(self):
        assert quadratic_weighted_kappa([2, 2, 2], [2, 2, 2], 4) == 1.0

    def test_single_disagreement(self):
        # observed and expected disagreement coincide for one case
        assert quadratic_weighted_kappa([0], [1], 4) == 0.0

    def test_bad_input(self):
        with pytest.raises(InvalidInputError):
            quadratic_weighted_kappa([0, 4], [0, 1], 4)
        with pytest.raises(InvalidInputError):
            quadratic_weighted_kappa([], [], 4)

    @given(st.integers(0, 2**32 - 1), st.integers(2, 6), st.integers(2, 60))
    @settings(max_examples=100, deadline=None)
    def test_matches_oracles(self, seed, n, m):
        rng = np.random.default_rng(seed)
        ref = rng.integers(0, n, size=m)
        pred = np.where(rng.random(m) < 0.6, ref, rng.integers(0, n, size=m))
        try:
            got = quadratic_weighted_kappa(ref, pred, n)
        except UndefinedMetricError:
            return
        assert got == pytest.approx(quadratic_kappa_loops(ref.tolist(), pred.tolist(), n), abs=1e-9)
        assert quadratic_weighted_kappa(pred, ref, n) == pytest.approx(got, abs=1e-12)
        assert -1 - 1e-12 <= got <= 1 + 1e-12
        if len(set(ref)) > 1 or len(set(pred)) > 1:
            assert got == pytest.approx(cohen_kappa_score(ref, pred, labels=list(range(n)), weights="quadratic"), abs=1e-9)


class TestAUC:
    def test_perfect(self):
        assert binary_auc([0.9, 0.8, 0.3, 0.1], [1, 1, 0, 0]) == 1.0

    def test_three_of_four(self):
        assert binary_auc([0.9, 0.4, 0.6, 0.1], [1, 1, 0, 0]) == 0.75

    def test_all_ties(self):
        assert binary_auc([0.3] * 6, [1, 0, 1, 0, 0, 1]) == 0.5

    def test_one_group_empty(self):
        assert np.isnan(binary_auc([0.1, 0.2], [1, 1]))

    @given(st.integers(0, 2**32 - 1), st.integers(2, 80))
    @settings(max_examples=100, deadline=None)
    def test_matches_oracles(self, seed, m):
        rng = np.random.default_rng(seed)
        scores = np.round(rng.random(m), 1)  # rounding forces ties
        pos = rng.random(m) < 0.4
        got = binary_auc(scores, pos)
        want = auc_pairs(scores.tolist(), pos.tolist())
        if np.isnan(want):
            assert np.isnan(got)
            return
        assert got == pytest.approx(want, abs=1e-9)
        assert binary_auc(-scores, pos) == pytest.approx(1 - got, abs=1e-12)
        assert got == pytest.approx(roc_auc_score(pos, scores), abs=1e-9)

    def test_ovr(self):
        rng = np.random.default_rng(0)
        labels = rng.integers(0, 4, size=60)
        scores = rng.random((60, 4)) + np.eye(4)[labels] * 0.5
        per_class, mean = roc_auc_ovr(scores, labels, 4)
        for c in range(4):
            assert per_class[c] == pytest.approx(auc_pairs(scores[:, c].tolist(), (labels == c).tolist()), abs=1e-12)
        assert mean == pytest.approx(per_class.mean())

    def test_ovr_shape(self):
        with pytest.raises(InvalidInputError):
            roc_auc_ovr(np.zeros((3, 2)), [0, 1, 0], 4)
