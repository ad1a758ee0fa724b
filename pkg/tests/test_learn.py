import json
from fractions import Fraction

import numpy as np
import pytest

from epigrid import learn, synthetic
from epigrid.errors import EngineError, EngineWarning, SchemaMismatchError
from epigrid.features import FeatureTable

import oracles


def table_from(X, y, names=None):
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=np.int64)
    names = tuple(names or (f"x{i}" for i in range(X.shape[1])))
    return FeatureTable(
        adm_ids=np.arange(len(y), dtype=np.int64),
        weeks=np.ones(len(y), dtype=np.int64),
        X=X,
        feature_names=names,
        cases=y.copy(),
        labels=y,
    )


class TestSplit:
    def test_ten_rows_gives_eight_two(self):
        t = table_from(np.arange(10)[:, None], [0, 1] * 5)
        train, test = learn.random_split(t, learn.SplitSpec(0.2, seed=3))
        assert (len(train), len(test)) == (8, 2)

    def test_same_seed_identical(self):
        t = table_from(np.arange(30)[:, None], [0, 1] * 15)
        a = learn.random_split(t, learn.SplitSpec(0.3, seed=9))
        b = learn.random_split(t, learn.SplitSpec(0.3, seed=9))
        assert np.array_equal(a[0].X, b[0].X) and np.array_equal(a[1].X, b[1].X)

    def test_stratified_counts(self):
        y = np.r_[np.zeros(90, dtype=int), np.ones(10, dtype=int)]
        t = table_from(np.arange(100)[:, None], y)
        train, test = learn.random_split(t, learn.SplitSpec(0.2, seed=1, stratify=True))
        assert test.labels.sum() == 2 and len(test) == 20

    def test_single_class_split_warns(self):
        t = table_from(np.arange(10)[:, None], np.zeros(10, dtype=int))
        with pytest.warns(EngineWarning, match="single class"):
            learn.random_split(t, learn.SplitSpec(0.2, seed=0))

    def test_empty_fatal(self):
        t = table_from(np.empty((0, 1)), [])
        with pytest.raises(EngineError):
            learn.random_split(t, learn.SplitSpec(0.2, seed=0))


class TestResample:
    def imbalanced(self, n_neg=90, n_pos=10, seed=0):
        rng = np.random.default_rng(seed)
        X = np.vstack([rng.normal(0, 1, (n_neg, 3)), rng.normal(3, 1, (n_pos, 3))])
        y = np.r_[np.zeros(n_neg, dtype=int), np.ones(n_pos, dtype=int)]
        return table_from(X, y)

    def test_none_is_identity(self):
        t = self.imbalanced()
        out = learn.resample(t, "none", seed=1)
        assert out.table is t
        assert out.synthetic_parents == ()

    def test_undersample_equalizes(self):
        out = learn.resample(self.imbalanced(), "undersample", seed=1)
        y = out.table.labels
        assert np.sum(y == 0) == np.sum(y == 1) == 10

    def test_smote_equalizes_and_interpolates(self):
        t = self.imbalanced()
        out = learn.resample(t, "smote", seed=5)
        y = out.table.labels
        assert np.sum(y == 0) == np.sum(y == 1) == 90
        assert len(out.synthetic_parents) == 80
        synth = out.table.X[len(t):]
        for row, (base, nbr, u) in zip(synth, out.synthetic_parents):
            a, b = t.X[base], t.X[nbr]
            assert 0.0 <= u <= 1.0
            assert np.array_equal(row, a + u * (b - a))
            assert np.all(row >= np.minimum(a, b) - 1e-12)
            assert np.all(row <= np.maximum(a, b) + 1e-12)
        assert np.all(out.table.labels[len(t):] == 1)
        assert np.all(out.table.adm_ids[len(t):] == -1)

    def test_smote_needs_two_minority_rows(self):
        t = self.imbalanced(n_neg=10, n_pos=1)
        with pytest.raises(EngineError, match="minority"):
            learn.resample(t, "smote", seed=0)

    def test_deterministic(self):
        a = learn.resample(self.imbalanced(), "smote", seed=2)
        b = learn.resample(self.imbalanced(), "smote", seed=2)
        assert np.array_equal(a.table.X, b.table.X)


def test_impurity_closed_forms():
    assert learn.gini_impurity([0, 1]) == 0.5
    assert learn.entropy_impurity([0, 1]) == 1.0
    assert learn.gini_impurity([1, 1, 1]) == 0.0
    assert learn.entropy_impurity([0, 0]) == 0.0


class TestForest:
    def separable_1d(self, n=200, seed=3):
        rng = np.random.default_rng(seed)
        x = rng.uniform(-2, 2, n)
        x = x[np.abs(x) > 0.05]
        return table_from(x[:, None], (x > 0).astype(int))

    @pytest.mark.parametrize("criterion", ["gini", "entropy"])
    def test_separable_training_accuracy(self, criterion):
        t = self.separable_1d()
        model = learn.train_forest(t, criterion=criterion, n_trees=10, seed=1)
        labels, scores = learn.predict(model, t)
        assert np.array_equal(labels, t.labels)
        assert np.all((scores >= 0.0) & (scores <= 1.0))

    def test_pure_training_data_single_leaf(self):
        t = table_from(np.arange(6)[:, None], np.ones(6, dtype=int))
        with pytest.warns(EngineWarning, match="single-class"):
            model = learn.train_forest(t, n_trees=4, seed=0)
        for tree in model.trees:
            assert len(tree.feature) == 1 and tree.feature[0] == -1
            assert tree.proba1[0] == 1.0
        labels, scores = learn.predict(model, t)
        assert np.all(scores == 1.0)

    def test_determinism_and_thread_independence(self):
        t = self.separable_1d(400, seed=9)
        X2 = np.column_stack([t.X, np.random.default_rng(1).normal(size=len(t))])
        t2 = table_from(X2, t.labels)
        a = learn.train_forest(t2, n_trees=12, seed=7, n_threads=1)
        b = learn.train_forest(t2, n_trees=12, seed=7, n_threads=4)
        assert json.dumps(learn.forest_to_dict(a)) == json.dumps(learn.forest_to_dict(b))

    def test_min_leaf_bounds_leaf_count(self):
        t = self.separable_1d(300, seed=2)
        model = learn.train_forest(t, n_trees=5, min_leaf=20, seed=1)
        for tree in model.trees:
            n_leaves = int(np.sum(tree.feature < 0))
            assert n_leaves <= len(t) // 20
        labels, _ = learn.predict(model, t)
        assert np.mean(labels == t.labels) > 0.9

    def test_schema_mismatch_fatal(self):
        t = self.separable_1d()
        model = learn.train_forest(t, n_trees=3, seed=1)
        other = table_from(np.ones((4, 2)), [0, 1, 0, 1], names=("a", "b"))
        with pytest.raises(SchemaMismatchError):
            learn.predict(model, other)

    def test_json_roundtrip_preserves_predictions(self):
        t = self.separable_1d(150, seed=5)
        model = learn.train_forest(t, n_trees=8, max_depth=6, seed=2)
        doc = json.loads(json.dumps(learn.forest_to_dict(model)))
        back = learn.forest_from_dict(doc)
        l1, s1 = learn.predict(model, t)
        l2, s2 = learn.predict(back, t)
        assert np.array_equal(s1, s2) and np.array_equal(l1, l2)


class TestEvaluate:
    def from_confusion(self, tp, fp, fn, tn):
        y = np.r_[np.ones(tp + fn, dtype=int), np.zeros(fp + tn, dtype=int)]
        yp = np.r_[
            np.ones(tp, dtype=int),
            np.zeros(fn, dtype=int),
            np.ones(fp, dtype=int),
            np.zeros(tn, dtype=int),
        ]
        return y, yp

    def test_perfect_predictions(self):
        y = np.array([0, 1, 0, 1, 1])
        scores = y.astype(float)
        rep = learn.evaluate(y, y, scores)
        assert rep.accuracy == rep.f1 == rep.mcc == rep.roc_auc == 1.0

    def test_hand_computed_example(self):
        y, yp = self.from_confusion(2, 1, 1, 6)
        rep = learn.evaluate(y, yp, yp.astype(float))
        assert rep.confusion == (2, 1, 1, 6)
        assert rep.precision == pytest.approx(2 / 3, abs=1e-12)
        assert rep.recall == pytest.approx(2 / 3, abs=1e-12)
        assert rep.f1 == pytest.approx(2 / 3, abs=1e-12)
        assert rep.mcc == pytest.approx(11 / 21, abs=1e-12)
        assert rep.accuracy == pytest.approx(0.8, abs=1e-12)
        assert rep.balanced_accuracy == pytest.approx(float(Fraction(16, 21)), abs=1e-12)

    def test_zero_denominators_flagged(self):
        y = np.array([0, 0, 0, 1])
        yp = np.zeros(4, dtype=int)
        rep = learn.evaluate(y, yp, np.zeros(4))
        assert rep.precision == 0.0 and "precision" in rep.undefined
        assert rep.f1 == 0.0 and "f1" in rep.undefined
        single = learn.evaluate(np.zeros(4, dtype=int), yp, np.zeros(4))
        assert single.roc_auc == 0.0 and "roc_auc" in single.undefined

    def test_metric_cross_checks(self):
        rng = np.random.default_rng(6)
        y = rng.integers(0, 2, 200)
        yp = rng.integers(0, 2, 200)
        scores = rng.random(200)
        rep = learn.evaluate(y, yp, scores)
        if rep.precision + rep.recall > 0:
            assert rep.f1 == pytest.approx(
                2 * rep.precision * rep.recall / (rep.precision + rep.recall), abs=1e-12
            )
        # auc(scores, y) == auc(1 - scores, 1 - y)
        flipped = learn.evaluate(1 - y, 1 - yp, 1 - scores)
        assert rep.roc_auc == pytest.approx(flipped.roc_auc, abs=1e-12)
        assert rep.mcc == pytest.approx(flipped.mcc, abs=1e-12)

    def test_auc_equals_pairwise_bruteforce(self):
        rng = np.random.default_rng(7)
        for _ in range(5):
            n = int(rng.integers(10, 300))
            y = rng.integers(0, 2, n)
            if len(np.unique(y)) < 2:
                continue
            scores = np.round(rng.random(n), 2)  # coarse grid forces ties
            assert learn.roc_auc_score(y, scores) == oracles.pairwise_auc(y, scores)

    def test_empty_fatal(self):
        with pytest.raises(EngineError):
            learn.evaluate([], [], [])


class TestImportance:
    def test_label_copy_ranks_first(self):
        base = synthetic.box_table(3000, positive_rate=0.2, n_features=4, seed=3)
        t = synthetic.inject_columns(base, seed=3, label_copy=True, noise=True)
        train, test = learn.random_split(t, learn.SplitSpec(0.25, seed=3))
        model = learn.train_forest(train, n_trees=10, seed=3)
        entries = learn.permutation_importance(model, test, n_repeats=4, seed=3)
        assert entries[0].feature == "label_copy"
        assert entries[0].importance > 0.5

    def test_noise_feature_near_zero(self):
        base = synthetic.box_table(3000, positive_rate=0.2, n_features=4, seed=4)
        t = synthetic.inject_columns(base, seed=4, label_copy=False, noise=True)
        train, test = learn.random_split(t, learn.SplitSpec(0.25, seed=4))
        model = learn.train_forest(train, n_trees=10, seed=4)
        entries = learn.permutation_importance(model, test, n_repeats=6, seed=4)
        noise = next(e for e in entries if e.feature == "noise")
        assert noise.importance == pytest.approx(0.0, abs=max(3 * noise.std, 1e-12))

    def test_deterministic(self):
        base = synthetic.box_table(800, positive_rate=0.25, n_features=3, seed=5)
        train, test = learn.random_split(base, learn.SplitSpec(0.25, seed=5))
        model = learn.train_forest(train, n_trees=6, seed=5)
        a = learn.permutation_importance(model, test, n_repeats=3, seed=5)
        b = learn.permutation_importance(model, test, n_repeats=3, seed=5)
        assert a == b

    def test_informative_feature_rank_one_concentration(self):
        wins = 0
        for trial in range(20):
            rng = np.random.default_rng(400 + trial)
            n = 1500
            y = (rng.random(n) < 0.3).astype(int)
            X = rng.normal(size=(n, 5))
            X[:, 2] += 2.5 * y  # single informative column
            t = table_from(X, y)
            train, test = learn.random_split(t, learn.SplitSpec(0.25, seed=trial))
            model = learn.train_forest(train, n_trees=10, seed=trial)
            entries = learn.permutation_importance(model, test, n_repeats=3, seed=trial)
            wins += entries[0].feature == "x2"
        assert wins >= 19  # rank-1 in >= 95% of seeded trials

    def test_unknown_metric_fatal(self):
        t = synthetic.box_table(100, positive_rate=0.3, n_features=3, seed=1)
        model = learn.train_forest(t, n_trees=2, seed=1)
        with pytest.raises(EngineError, match="metric"):
            learn.permutation_importance(model, t, metric="accuracy")
