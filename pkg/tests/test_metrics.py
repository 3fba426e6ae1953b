import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lesionaudit.metrics import (MetricsError, accuracy, bundle, confusion, per_class_recall, recall,
                                 roc_auc_binary, roc_auc_multiclass)

import oracles


class TestConfusion:
    # 10 samples: truth 0 -> 4 right, 2 wrong; truth 1 -> 1 wrong, 3 right
    TRUTH = [0] * 6 + [1] * 4
    PREDS = [0, 0, 0, 0, 1, 1, 0, 1, 1, 1]

    def test_fixture(self):
        cm = confusion(self.PREDS, self.TRUTH, 2)
        np.testing.assert_array_equal(cm, [[4, 2], [1, 3]])
        assert accuracy(cm) == pytest.approx(0.7)
        assert recall(cm) == pytest.approx(0.75)
        np.testing.assert_allclose(per_class_recall(cm), [4 / 6, 0.75])

    def test_absent_class_is_nan_and_skipped_in_macro(self):
        cm = confusion([0, 1, 1], [0, 1, 1], 7)
        per = per_class_recall(cm)
        assert np.isnan(per[2:]).all()
        assert recall(cm, positive=None) == 1.0

    def test_recall_of_absent_positive_is_zero(self):
        assert recall(confusion([0, 0], [0, 0], 2)) == 0.0

    @pytest.mark.parametrize("preds, truth, k", [([0, 1], [0], 2), ([2], [0], 2), ([0], [-1], 2)])
    def test_invalid(self, preds, truth, k):
        with pytest.raises(MetricsError):
            confusion(preds, truth, k)

    def test_empty_matrix(self):
        with pytest.raises(MetricsError):
            accuracy(np.zeros((2, 2), int))

    def test_unknown_averaging(self):
        with pytest.raises(MetricsError):
            recall(np.eye(3, dtype=int), positive=None, averaging="micro")


class TestAuc:
    def test_perfect_and_reversed(self):
        assert roc_auc_binary([0.1, 0.2, 0.8, 0.9], [0, 0, 1, 1]) == 1.0
        assert roc_auc_binary([0.9, 0.8, 0.2, 0.1], [0, 0, 1, 1]) == 0.0

    def test_all_tied(self):
        assert roc_auc_binary([0.5] * 6, [0, 1, 0, 1, 1, 0]) == 0.5

    def test_one_class(self):
        with pytest.raises(MetricsError):
            roc_auc_binary([0.1, 0.2], [1, 1])

    @pytest.mark.parametrize("seed", range(20))
    def test_matches_pairwise_oracle_with_ties(self, seed):
        rng = np.random.default_rng(seed)
        n = int(rng.integers(2, 200))
        y = rng.integers(0, 2, n)
        y[:2] = [0, 1]
        s = rng.integers(0, 10, n) / 10.0  # coarse grid forces ties
        assert abs(roc_auc_binary(s, y) - oracles.pairwise_auc(s, y)) <= 1e-9

    @given(st.lists(st.tuples(st.floats(0, 1), st.integers(0, 1)), min_size=2, max_size=50)
           .filter(lambda xs: 0 < sum(y for _, y in xs) < len(xs)))
    @settings(max_examples=80, deadline=None)
    def test_properties(self, pairs):
        s = np.array([p[0] for p in pairs])
        y = np.array([p[1] for p in pairs])
        auc = roc_auc_binary(s, y)
        assert abs(auc - oracles.pairwise_auc(s, y)) <= 1e-9
        # a strictly increasing map (exact: built from ranks) keeps the ordering and the ties
        _, rank = np.unique(s, return_inverse=True)
        assert roc_auc_binary(rank.astype(float) ** 3 - 7, y) == pytest.approx(auc, abs=1e-12)
        assert roc_auc_binary(s, 1 - y) == pytest.approx(1 - auc, abs=1e-12)

    def test_multiclass_is_macro_one_vs_rest(self):
        rng = np.random.default_rng(3)
        probs = rng.dirichlet(np.ones(4), size=40)
        y = np.arange(40) % 3  # class 3 absent from the truth
        want = np.mean([oracles.pairwise_auc(probs[:, c], y == c) for c in range(3)])
        assert roc_auc_multiclass(probs, y) == pytest.approx(want, abs=1e-12)

    def test_multiclass_needs_two_classes(self):
        with pytest.raises(MetricsError):
            roc_auc_multiclass(np.full((3, 7), 1 / 7), [2, 2, 2])


class TestBundle:
    def test_binary_threshold(self):
        b = bundle([[0.2], [0.6], [0.4], [0.9]], [0, 0, 1, 1], threshold=0.5)
        assert b.accuracy == 0.5 and b.recall == 0.5 and b.auc == 0.75
        assert bundle(np.array([0.2, 0.6, 0.4, 0.9]), [0, 0, 1, 1], threshold=0.3).recall == 1.0

    def test_sevenway_argmax(self):
        probs = np.eye(7)[[0, 1, 2, 3, 4, 5, 6, 0]] * 0.9 + 0.1 / 7
        b = bundle(probs, [0, 1, 2, 3, 4, 5, 6, 1])
        assert b.accuracy == pytest.approx(7 / 8)
        assert b.per_class_recall[1] == 0.5
        assert b.to_dict()["per_class_recall"][0] == 1.0
