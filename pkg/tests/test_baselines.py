import json
import math

import numpy as np
import pytest

from gridcast import sequence
from gridcast.features import FrameStack
from gridcast.models import baselines
from gridcast.models import (cell_rows, balanced_weights,
                             fit_logistic, predict_logistic,
                             ForestConfig, fit_forest, predict_forest,
                             save_forest, load_forest,
                             save_logistic, load_logistic)


def coded_stack():
    """Channel 1 encodes (block, row, col) so row layout is checkable."""
    data = np.zeros((5, 3, 3, 2), dtype=np.float32)
    for b in range(5):
        for r in range(3):
            for c in range(3):
                data[b, r, c, 0] = (b + r + c) % 2
                data[b, r, c, 1] = 100 * b + 10 * r + c
    mask = np.ones((3, 3), dtype=bool)
    return FrameStack(data=data, mask=mask, normalized=True)


class TestCellRows:
    def test_rows_are_time_major_per_cell(self):
        stack = coded_stack()
        refs = [sequence.SampleRef(2, 0, 0)]
        x, y, valid = cell_rows(stack, refs, 2, 3, keep_only_valid=False)
        assert x.shape == (9, 4)
        # cell (1, 2): [ch0(b0), ch1(b0), ch0(b1), ch1(b1)]
        row = x[1 * 3 + 2]
        np.testing.assert_allclose(row, [1.0, 12.0, 0.0, 112.0])
        assert y[1 * 3 + 2] == stack.data[2, 1, 2, 0]
        assert valid.all()

    def test_masked_cells_dropped_from_training_rows(self):
        stack = coded_stack()
        stack.mask[2, 2] = False
        stack.data[:, 2, 2, :] = np.nan
        refs = [sequence.SampleRef(2, 0, 0), sequence.SampleRef(3, 0, 0)]
        x, y, _ = cell_rows(stack, refs, 2, 3)
        assert x.shape == (16, 4)
        assert np.isfinite(x).all() and np.isfinite(y).all()

    def test_prediction_rows_keep_cell_order(self):
        stack = coded_stack()
        stack.mask[0, 1] = False
        refs = [sequence.SampleRef(4, 0, 0)]
        x, _, valid = cell_rows(stack, refs, 2, 3, keep_only_valid=False)
        assert x.shape == (9, 4)
        assert not valid[0, 0, 1]


class TestBalancedWeights:
    def test_weights_halve_each_class_mass(self):
        y = np.array([1, 0, 0, 0])
        w = balanced_weights(y)
        np.testing.assert_allclose(w, [2.0, 2.0 / 3, 2.0 / 3, 2.0 / 3])
        assert w[y == 1].sum() == pytest.approx(w[y == 0].sum())
        assert w.sum() == pytest.approx(len(y))

    def test_single_class_rejected(self):
        with pytest.raises(ValueError, match="single class"):
            balanced_weights(np.ones(10))


class TestLogisticRegression:
    def test_recovers_separating_direction(self):
        rng = np.random.default_rng(0)
        x = rng.normal(size=(400, 2))
        y = (x[:, 0] + x[:, 1] > 0).astype(float)
        model = fit_logistic(x, y)
        w = model.weights / np.linalg.norm(model.weights)
        target = np.array([1.0, 1.0]) / math.sqrt(2)
        assert float(w @ target) > 0.99

    def test_balanced_weights_center_the_imbalanced_intercept(self):
        # constant features leave only the intercept; the class-weighted
        # optimum is 0.5 regardless of the 9:1 imbalance
        x = np.ones((200, 3))
        y = np.zeros(200)
        y[:20] = 1.0
        model = fit_logistic(x, y)
        p = predict_logistic(model, x[:1])
        assert abs(p[0] - 0.5) < 1e-3

    def test_single_class_rejected(self):
        with pytest.raises(ValueError, match="single class"):
            fit_logistic(np.ones((5, 2)), np.ones(5))

    def test_gradient_norm_stop(self):
        rng = np.random.default_rng(1)
        x = rng.normal(size=(50, 2))
        y = rng.integers(0, 2, size=50).astype(float)
        model = fit_logistic(x, y, max_iters=100000, tol=1e-6)
        assert model.n_iters < 100000
        assert model.grad_norm < 1e-6

    def test_iteration_cap(self):
        rng = np.random.default_rng(2)
        x = rng.normal(size=(300, 4))
        y = (x[:, 0] > 0).astype(float)  # separable: gradient never vanishes
        model = fit_logistic(x, y, max_iters=17)
        assert model.n_iters == 17

    def test_predictions_in_unit_interval(self):
        rng = np.random.default_rng(3)
        x = rng.normal(size=(100, 3))
        y = (x[:, 0] - x[:, 2] > 0.3).astype(float)
        model = fit_logistic(x, y)
        p = predict_logistic(model, rng.normal(size=(40, 3)) * 100)
        assert p.shape == (40,)
        assert np.all((p >= 0) & (p <= 1))

    def test_shape_mismatch_rejected(self):
        with pytest.raises(ValueError, match="design matrix"):
            fit_logistic(np.ones((5, 2)), np.zeros(4))

    def test_json_roundtrip(self, tmp_path):
        rng = np.random.default_rng(3)
        x = rng.normal(size=(60, 4))
        y = (x[:, 0] + x[:, 2] > 0).astype(np.float64)
        model = fit_logistic(x, y)
        path = tmp_path / "logreg.json"
        save_logistic(path, model)
        loaded = load_logistic(path)
        np.testing.assert_array_equal(predict_logistic(model, x),
                                      predict_logistic(loaded, x))
        assert loaded.n_iters == model.n_iters

    def test_version_tamper_rejected(self, tmp_path):
        model = fit_logistic(np.eye(4), np.array([1.0, 0, 0, 1]))
        path = tmp_path / "logreg.json"
        save_logistic(path, model)
        doc = json.loads(path.read_text())
        doc["format_version"] = 2
        path.write_text(json.dumps(doc))
        with pytest.raises(ValueError, match="format"):
            load_logistic(path)


def brute_force_root_split(x, y, w):
    """All features x all midpoints, python loops, weighted entropy in nats."""
    def ent(wp, wn):
        tot = wp + wn
        if tot == 0:
            return 0.0
        p = wp / tot
        out = 0.0
        if p > 0:
            out -= p * math.log(p)
        if p < 1:
            out -= (1 - p) * math.log(1 - p)
        return out

    w_tot = w.sum()
    wp_tot = w[y == 1].sum()
    h_parent = ent(wp_tot, w_tot - wp_tot)
    best = None
    for f in range(x.shape[1]):
        for thr in sorted({(a + b) / 2 for a, b in
                           zip(sorted(set(x[:, f]))[:-1], sorted(set(x[:, f]))[1:])}):
            left = x[:, f] <= thr
            wl = w[left].sum()
            wlp = w[left & (y == 1)].sum()
            wr = w_tot - wl
            wrp = wp_tot - wlp
            gain = h_parent - (wl / w_tot) * ent(wlp, wl - wlp) \
                - (wr / w_tot) * ent(wrp, wr - wrp)
            if best is None or gain > best[0] + 1e-15:
                best = (gain, f, thr)
    return best


class TestEntropy:
    def test_known_values(self):
        assert baselines._entropy(1.0, 1.0) == pytest.approx(math.log(2), abs=1e-15)
        assert baselines._entropy(3.0, 0.0) == 0.0
        assert baselines._entropy(0.0, 2.0) == 0.0
        assert baselines._entropy(0.0, 0.0) == 0.0

    def test_vectorized_matches_scalar(self):
        rng = np.random.default_rng(0)
        wp = rng.uniform(0, 5, size=50)
        wn = rng.uniform(0, 5, size=50)
        got = baselines._entropy(wp, wn)
        for j in range(50):
            p = wp[j] / (wp[j] + wn[j])
            want = 0.0
            if 0 < p < 1:
                want = -p * math.log(p) - (1 - p) * math.log(1 - p)
            assert got[j] == pytest.approx(want, abs=1e-12)

    def test_maximum_at_even_split(self):
        grid = np.linspace(0.01, 0.99, 99)
        vals = baselines._entropy(grid, 1.0 - grid)
        assert np.argmax(vals) == 49


class TestForestSplits:
    def test_root_split_matches_brute_force(self):
        rng = np.random.default_rng(7)
        for trial in range(5):
            x = rng.normal(size=(24, 3)).round(1)
            y = (x[:, trial % 3] + 0.3 * rng.normal(size=24) > 0).astype(np.int8)
            if y.min() == y.max():
                continue
            w = balanced_weights(y)
            _, f_want, thr_want = brute_force_root_split(x, y, w)
            idx = np.arange(24)
            got = baselines._best_split(x, idx, y[idx], w[idx], np.arange(3))
            assert got is not None
            assert got == (f_want, pytest.approx(thr_want))

    def test_feature_tie_breaks_low(self):
        # identical columns: gains tie exactly, feature 0 must win
        col = np.array([0.0, 1.0, 2.0, 3.0])
        x = np.column_stack([col, col, col])
        y = np.array([0, 0, 1, 1], dtype=np.int8)
        w = np.ones(4)
        got = baselines._best_split(x, np.arange(4), y, w, np.arange(3))
        assert got == (0, 1.5)

    def test_threshold_tie_breaks_low(self):
        # symmetric labels: splits at 0.5 and 2.5 tie, lower must win
        x = np.array([[0.0], [1.0], [2.0], [3.0]])
        y = np.array([1, 0, 0, 1], dtype=np.int8)
        w = np.ones(4)
        got = baselines._best_split(x, np.arange(4), y, w, np.arange(1))
        assert got == (0, 0.5)

    def test_constant_features_yield_no_split(self):
        x = np.ones((6, 2))
        y = np.array([0, 1, 0, 1, 0, 1], dtype=np.int8)
        got = baselines._best_split(x, np.arange(6), y, np.ones(6), np.arange(2))
        assert got is None


class TestForest:
    def separable(self, n=60, seed=0):
        rng = np.random.default_rng(seed)
        x = rng.normal(size=(n, 4))
        y = (x[:, 1] > 0.2).astype(np.int8)
        return x, y

    def test_single_tree_fits_training_data(self):
        x, y = self.separable()
        model = fit_forest(x, y, ForestConfig(n_trees=1, max_features="all",
                                              bootstrap=False, seed=0))
        np.testing.assert_array_equal(predict_forest(model, x) >= 0.5, y == 1)

    def test_probability_is_vote_fraction(self):
        x, y = self.separable(seed=3)
        model = fit_forest(x, y, ForestConfig(n_trees=5, seed=1))
        p = predict_forest(model, x)
        steps = p * 5
        np.testing.assert_allclose(steps, np.round(steps), atol=1e-12)

    def test_leaves_are_pure_or_tiny(self):
        rng = np.random.default_rng(9)
        x = rng.normal(size=(80, 3))
        y = rng.integers(0, 2, size=80).astype(np.int8)
        model = fit_forest(x, y, ForestConfig(n_trees=3, seed=2))
        for tree in model.trees:
            assert (tree["feature"] >= 0).sum() < len(tree["feature"])
            leaves = tree["feature"] < 0
            assert leaves.any()

    def test_vectorized_traversal_matches_loop(self):
        x, y = self.separable(n=50, seed=5)
        model = fit_forest(x, y, ForestConfig(n_trees=2, seed=4))
        tree = model.trees[0]
        got = baselines._tree_votes(tree, x)
        for i in range(len(x)):
            nid = 0
            while tree["feature"][nid] >= 0:
                f = tree["feature"][nid]
                nid = tree["left"][nid] if x[i, f] <= tree["threshold"][nid] \
                    else tree["right"][nid]
            assert got[i] == tree["vote"][nid]

    def test_same_seed_same_forest(self, tmp_path):
        x, y = self.separable(seed=6)
        blobs = []
        for _ in range(2):
            model = fit_forest(x, y, ForestConfig(n_trees=4, seed=11))
            path = tmp_path / f"f{_}.json"
            save_forest(path, model)
            blobs.append(path.read_bytes())
        assert blobs[0] == blobs[1]

    def test_different_seed_different_forest(self):
        x, y = self.separable(seed=6)
        a = fit_forest(x, y, ForestConfig(n_trees=2, seed=0))
        b = fit_forest(x, y, ForestConfig(n_trees=2, seed=5))
        same = all(
            len(ta["feature"]) == len(tb["feature"])
            and np.array_equal(ta["threshold"], tb["threshold"])
            for ta, tb in zip(a.trees, b.trees))
        assert not same

    def test_json_roundtrip(self, tmp_path):
        x, y = self.separable(seed=8)
        model = fit_forest(x, y, ForestConfig(n_trees=3, seed=1))
        path = tmp_path / "forest.json"
        save_forest(path, model)
        loaded = load_forest(path)
        np.testing.assert_array_equal(predict_forest(model, x),
                                      predict_forest(loaded, x))

    def test_version_tamper_rejected(self, tmp_path):
        x, y = self.separable(seed=8)
        model = fit_forest(x, y, ForestConfig(n_trees=1, seed=1))
        path = tmp_path / "forest.json"
        save_forest(path, model)
        doc = json.loads(path.read_text())
        doc["format_version"] = 99
        path.write_text(json.dumps(doc))
        with pytest.raises(ValueError, match="format"):
            load_forest(path)

    def test_max_samples_fraction(self):
        x, y = self.separable(n=100, seed=2)
        model = fit_forest(x, y, ForestConfig(n_trees=2, max_samples=0.3, seed=0))
        p = predict_forest(model, x)
        assert p.shape == (100,)
        with pytest.raises(ValueError, match="max_samples"):
            fit_forest(x, y, ForestConfig(max_samples=1.5))

    def test_single_class_rejected(self):
        with pytest.raises(ValueError, match="single class"):
            fit_forest(np.ones((5, 2)), np.ones(5, dtype=np.int8))

    def test_feature_count_validation(self):
        x, y = self.separable(seed=1)
        with pytest.raises(ValueError, match="max_features"):
            fit_forest(x, y, ForestConfig(max_features=9))

    def test_feature_dimension_checked_at_predict(self):
        x, y = self.separable(seed=1)
        model = fit_forest(x, y, ForestConfig(n_trees=1, seed=0))
        with pytest.raises(ValueError, match="features"):
            predict_forest(model, x[:, :2])

    def test_class_weights_lift_minority_leaves(self):
        # 4 duplicate positives vs 40 negatives at distinct points: balanced
        # weights make the positive cluster win its own region
        x = np.concatenate([np.full((4, 1), 5.0),
                            np.linspace(-3, 0, 40)[:, None]])
        y = np.concatenate([np.ones(4, dtype=np.int8),
                            np.zeros(40, dtype=np.int8)])
        model = fit_forest(x, y, ForestConfig(n_trees=9, bootstrap=False,
                                              max_features="all", seed=0))
        assert predict_forest(model, np.array([[5.0]]))[0] == 1.0
        assert predict_forest(model, np.array([[-2.0]]))[0] == 0.0
