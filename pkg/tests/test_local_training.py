import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fedafa.data import LabeledDataset
from fedafa.local_training import (
    ModelSpec,
    TrainingConfig,
    TrainingDivergedError,
    evaluate,
    init_params,
    loss_and_grad,
    predict,
    sgd_local_train,
    unpack,
)


def random_instance(rng):
    kind = rng.choice(["logistic_regression", "mlp"])
    n_in = int(rng.integers(1, 6))
    hidden = [] if kind == "logistic_regression" else [int(h) for h in rng.integers(1, 7, size=rng.integers(1, 3))]
    output = rng.choice(["softmax", "sigmoid"])
    n_out = 1 if output == "sigmoid" else int(rng.integers(2, 5))
    spec = ModelSpec(str(kind), (n_in, *hidden, n_out), output=str(output))
    params = rng.normal(scale=0.7, size=spec.num_params)
    n = int(rng.integers(1, 9))
    labels = rng.integers(0, 2 if output == "sigmoid" else n_out, size=n)
    return spec, params, LabeledDataset(rng.uniform(-1, 1, size=(n, n_in)), labels)


def finite_difference_grad(spec, params, batch, h=1e-5):
    grad = np.zeros_like(params)
    for i in range(params.size):
        up, down = params.copy(), params.copy()
        up[i] += h
        down[i] -= h
        grad[i] = (loss_and_grad(spec, up, batch)[0] - loss_and_grad(spec, down, batch)[0]) / (2 * h)
    return grad


def max_rel_error(analytic, numeric):
    return float(np.max(np.abs(analytic - numeric) / np.maximum(1e-8, np.abs(analytic) + np.abs(numeric))))


class TestModelSpec:
    def test_num_params(self):
        assert ModelSpec("mlp", (54, 100, 50, 1), output="sigmoid").num_params == 54 * 100 + 100 + 100 * 50 + 50 + 51
        assert ModelSpec("logistic_regression", (20, 2)).num_params == 42

    @pytest.mark.parametrize("kwargs", [
        dict(kind="cnn", layer_sizes=(2, 2)),
        dict(kind="logistic_regression", layer_sizes=(2, 3, 2)),
        dict(kind="mlp", layer_sizes=(2,)),
        dict(kind="mlp", layer_sizes=(2, 0, 2)),
        dict(kind="logistic_regression", layer_sizes=(2, 2), output="sigmoid"),
        dict(kind="logistic_regression", layer_sizes=(2, 1), output="softmax"),
        dict(kind="logistic_regression", layer_sizes=(2, 2), output="tanh"),
    ])
    def test_invalid(self, kwargs):
        with pytest.raises(ValueError):
            ModelSpec(**kwargs)

    @pytest.mark.parametrize("kwargs", [dict(epochs=-1), dict(batch_size=0), dict(learning_rate=0), dict(momentum=1.0)])
    def test_invalid_training_config(self, kwargs):
        with pytest.raises(ValueError):
            TrainingConfig(**kwargs)

    def test_layout_is_weight_then_bias(self):
        spec = ModelSpec("mlp", (2, 3, 1), output="sigmoid")
        params = np.arange(spec.num_params, dtype=float)
        (w1, b1), (w2, b2) = unpack(spec, params)
        np.testing.assert_array_equal(w1, [[0, 1, 2], [3, 4, 5]])
        np.testing.assert_array_equal(b1, [6, 7, 8])
        np.testing.assert_array_equal(w2.ravel(), [9, 10, 11])
        np.testing.assert_array_equal(b2, [12])

    def test_init_bounds(self):
        spec = ModelSpec("mlp", (16, 4, 2))
        p = init_params(spec, np.random.default_rng(0))
        (w1, b1), (w2, b2) = unpack(spec, p)
        assert np.all(np.abs(w1) <= 0.25) and np.all(np.abs(b1) <= 0.25)
        assert np.all(np.abs(w2) <= 0.5) and np.all(np.abs(b2) <= 0.5)


class TestLoss:
    def test_zero_logistic_balanced(self):
        spec = ModelSpec("logistic_regression", (3, 1), output="sigmoid")
        batch = LabeledDataset(np.random.default_rng(0).normal(size=(4, 3)), [0, 1, 0, 1])
        loss, grad = loss_and_grad(spec, np.zeros(4), batch)
        assert loss == pytest.approx(math.log(2), abs=1e-12)
        assert grad[-1] == pytest.approx(0.0, abs=1e-15)

    def test_zero_softmax_ten_classes(self):
        spec = ModelSpec("logistic_regression", (5, 10))
        batch = LabeledDataset(np.random.default_rng(1).normal(size=(7, 5)), np.arange(7))
        assert loss_and_grad(spec, np.zeros(spec.num_params), batch)[0] == pytest.approx(math.log(10), abs=1e-12)

    def test_small_mlp_gradient(self):
        rng = np.random.default_rng(2)
        spec = ModelSpec("mlp", (4, 5, 3))
        params = rng.normal(size=spec.num_params)
        batch = LabeledDataset(rng.uniform(-1, 1, size=(7, 4)), rng.integers(0, 3, size=7))
        _, grad = loss_and_grad(spec, params, batch)
        assert max_rel_error(grad, finite_difference_grad(spec, params, batch)) < 1e-4

    def test_gradient_oracle_fifty_instances(self):
        rng = np.random.default_rng(10)
        worst = 0.0
        for _ in range(50):
            spec, params, batch = random_instance(rng)
            _, grad = loss_and_grad(spec, params, batch)
            worst = max(worst, max_rel_error(grad, finite_difference_grad(spec, params, batch)))
        assert worst < 1e-4

    @settings(max_examples=100, deadline=None)
    @given(st.integers(0, 2**32 - 1))
    def test_loss_nonnegative(self, seed):
        spec, params, batch = random_instance(np.random.default_rng(seed))
        assert loss_and_grad(spec, params * 10, batch)[0] >= 0.0

    def test_extreme_logits_stay_finite(self):
        spec = ModelSpec("logistic_regression", (1, 1), output="sigmoid")
        batch = LabeledDataset([[1.0], [-1.0]], [0, 1])
        loss, grad = loss_and_grad(spec, np.array([1e4, 0.0]), batch)
        assert np.isfinite(loss) and np.all(np.isfinite(grad))

    def test_errors(self):
        spec = ModelSpec("logistic_regression", (3, 2))
        batch = LabeledDataset(np.zeros((2, 3)), [0, 1])
        with pytest.raises(ValueError):
            loss_and_grad(spec, np.zeros(5), batch)
        with pytest.raises(ValueError):
            loss_and_grad(spec, np.zeros(8), LabeledDataset(np.zeros((2, 2)), [0, 1]))
        with pytest.raises(ValueError):
            loss_and_grad(spec, np.zeros(8), LabeledDataset(np.zeros((2, 3)), [0, 2]))

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_non_finite_loss_names_batch(self):
        spec = ModelSpec("logistic_regression", (1, 1), output="sigmoid")
        batch = LabeledDataset([[1.0]], [0])
        with pytest.raises(TrainingDivergedError, match="batch 4"):
            loss_and_grad(spec, np.array([np.inf, 0.0]), batch, batch_index=4)


class TestSgd:
    spec = ModelSpec("logistic_regression", (3, 1), output="sigmoid")

    def shard(self, n=25, seed=0):
        rng = np.random.default_rng(seed)
        x = rng.normal(size=(n, 3))
        return LabeledDataset(x, (x[:, 0] > 0).astype(int))

    def test_zero_epochs(self):
        start = np.array([0.1, 0.2, 0.3, 0.4])
        np.testing.assert_array_equal(sgd_local_train(self.spec, start, self.shard(), TrainingConfig(epochs=0)), start)

    def test_single_full_batch_step(self):
        start = np.array([0.1, -0.2, 0.3, 0.05])
        shard = self.shard()
        cfg = TrainingConfig(epochs=1, batch_size=100, learning_rate=0.3, momentum=0.0)
        # hand-written sigmoid cross-entropy gradient
        z = shard.inputs @ start[:3] + start[3]
        r = 1 / (1 + np.exp(-z)) - shard.labels
        grad = np.concatenate([shard.inputs.T @ r, [r.sum()]]) / len(shard)
        np.testing.assert_allclose(sgd_local_train(self.spec, start, shard, cfg), start - 0.3 * grad, atol=1e-9)

    def test_momentum_recurrence(self):
        start = np.zeros(4)
        shard = self.shard(10)
        cfg = TrainingConfig(epochs=3, batch_size=10, learning_rate=0.1, momentum=0.9)
        w, v = start.copy(), np.zeros(4)
        for _ in range(3):
            v = 0.9 * v + loss_and_grad(self.spec, w, shard)[1]
            w = w - 0.1 * v
        np.testing.assert_allclose(sgd_local_train(self.spec, start, shard, cfg), w, atol=1e-12)

    def test_deterministic(self):
        cfg = TrainingConfig(epochs=3, batch_size=4, seed=7)
        a = sgd_local_train(self.spec, np.zeros(4), self.shard(), cfg)
        b = sgd_local_train(self.spec, np.zeros(4), self.shard(), cfg)
        assert a.tobytes() == b.tobytes()
        c = sgd_local_train(self.spec, np.zeros(4), self.shard(), TrainingConfig(epochs=3, batch_size=4, seed=8))
        assert not np.array_equal(a, c)

    def test_short_last_batch_step_count(self, monkeypatch):
        import fedafa.local_training as lt
        calls = []
        real = lt.loss_and_grad

        def spy(spec, params, batch, batch_index=None):
            calls.append(len(batch))
            return real(spec, params, batch, batch_index)

        monkeypatch.setattr(lt, "loss_and_grad", spy)
        sgd_local_train(self.spec, np.zeros(4), self.shard(25), TrainingConfig(epochs=2, batch_size=10))
        assert calls == [10, 10, 5, 10, 10, 5]

    def test_shuffle_applies_to_indices(self):
        shard = self.shard(12)
        cfg = TrainingConfig(epochs=2, batch_size=5, seed=3)
        perm = np.random.default_rng(cfg.seed).permutation(12)
        inv = np.argsort(perm)
        permuted = shard.subset(perm)
        # training on the permuted shard with the inverse-permuted draw order visits the same batches
        rng_a = np.random.default_rng(cfg.seed)
        a = sgd_local_train(self.spec, np.zeros(4), shard, cfg, rng_a)

        class Remap:
            def __init__(self):
                self.inner = np.random.default_rng(cfg.seed)

            def permutation(self, n):
                return inv[self.inner.permutation(n)]

        b = sgd_local_train(self.spec, np.zeros(4), permuted, cfg, Remap())
        np.testing.assert_array_equal(a, b)

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_divergence_names_step(self):
        shard = LabeledDataset(np.full((4, 3), 1e200), [0, 1, 0, 1])
        with pytest.raises(TrainingDivergedError, match="step 0"):
            sgd_local_train(self.spec, np.ones(4), shard, TrainingConfig(epochs=1, batch_size=2, learning_rate=1e200))

    def test_convergence_on_separable_toy(self):
        rng = np.random.default_rng(0)
        x = np.concatenate([rng.normal(-1, 0.3, size=(50, 2)), rng.normal(1, 0.3, size=(50, 2))])
        data = LabeledDataset(x, np.repeat([0, 1], 50))
        spec = ModelSpec("logistic_regression", (2, 1), output="sigmoid")
        cfg = TrainingConfig(epochs=200, batch_size=100, learning_rate=0.5, momentum=0.0)
        assert evaluate(spec, sgd_local_train(spec, np.zeros(3), data, cfg), data) <= 0.05

    def test_start_shape_checked(self):
        with pytest.raises(ValueError):
            sgd_local_train(self.spec, np.zeros(5), self.shard(), TrainingConfig())


class TestEvaluate:
    def test_perfect_separator(self):
        spec = ModelSpec("logistic_regression", (1, 1), output="sigmoid")
        data = LabeledDataset([[-2.0], [-1.0], [1.0], [2.0]], [0, 0, 1, 1])
        assert evaluate(spec, np.array([5.0, 0.0]), data) == 0.0

    def test_constant_predictor_balanced(self):
        spec = ModelSpec("logistic_regression", (1, 1), output="sigmoid")
        data = LabeledDataset([[-2.0], [-1.0], [1.0], [2.0]], [0, 1, 0, 1])
        assert evaluate(spec, np.array([0.0, 3.0]), data) == 0.5

    def test_sigmoid_threshold_inclusive(self):
        spec = ModelSpec("logistic_regression", (1, 1), output="sigmoid")
        assert predict(spec, np.zeros(2), np.array([[0.3]]))[0] == 1

    def test_zero_softmax_predicts_class_zero(self):
        spec = ModelSpec("logistic_regression", (4, 10))
        labels = np.random.default_rng(0).integers(0, 10, size=200)
        data = LabeledDataset(np.random.default_rng(1).normal(size=(200, 4)), labels)
        assert evaluate(spec, np.zeros(spec.num_params), data) == pytest.approx(1 - np.mean(labels == 0))
