import math

import numpy as np
import pytest

from protoadapt.embedding import (
    AdamState,
    TrainConfig,
    adam_update,
    build_training_pool,
    episode_loss_and_grad,
    global_prototypes_from_pool,
    init_model,
    load_model,
    mlp_forward,
    save_model,
    train,
)
from protoadapt.errors import ConfigError, ShapeError, TaskFormatError, TrainingError
from protoadapt.sinegen import SineGenConfig, Task


def make_task(sx, sy, qx, qy, way=2):
    sx = np.atleast_2d(np.asarray(sx, dtype=float))
    qx = np.atleast_2d(np.asarray(qx, dtype=float))
    return Task(
        way=way,
        shot=len(sx) // way,
        unlabeled_per_class=0,
        task_id=0,
        support_x=sx,
        support_y=np.asarray(sy, dtype=np.int64),
        unlabeled_x=np.empty((0, sx.shape[1])),
        unlabeled_y=np.empty(0, dtype=np.int64),
        query_x=qx,
        query_y=np.asarray(qy, dtype=np.int64),
    )


def random_small_task(rng, way=3, shot=2, query=4, dim=2):
    sx = rng.normal(size=(way * shot, dim))
    qx = rng.normal(size=(way * query, dim))
    sy = np.repeat(np.arange(way), shot)
    qy = np.repeat(np.arange(way), query)
    return make_task(sx, sy, qx, qy, way)


def flat_params(model):
    return np.concatenate([a.ravel() for a in (*model.weights, *model.biases)])


def set_flat(model, vec):
    offset = 0
    for arrays in (model.weights, model.biases):
        for i, a in enumerate(arrays):
            arrays[i] = vec[offset : offset + a.size].reshape(a.shape)
            offset += a.size


def min_kink_distance(model, batches):
    """Smallest |hidden pre-activation|; finite differences need clearance."""
    worst = np.inf
    for x in batches:
        h = np.atleast_2d(x)
        for w, b in zip(model.weights[:-1], model.biases[:-1]):
            pre = h @ w + b
            worst = min(worst, float(np.abs(pre).min()))
            h = np.maximum(pre, 0.0)
    return worst


def numeric_gradient(model, task, h=1e-3):
    base = flat_params(model)
    grad = np.empty_like(base)
    for i in range(base.size):
        for sign in (+1.0, -1.0):
            v = base.copy()
            v[i] += sign * h
            set_flat(model, v)
            loss, _ = episode_loss_and_grad(model, task)
            if sign > 0:
                upper = loss
            else:
                lower = loss
        grad[i] = (upper - lower) / (2 * h)
    set_flat(model, base)
    return grad


def gradient_check(model, task, h=1e-3):
    loss, (gw, gb) = episode_loss_and_grad(model, task)
    analytic = np.concatenate([g.ravel() for g in (*gw, *gb)])
    numeric = numeric_gradient(model, task, h)
    scale = max(np.abs(analytic).max(), np.abs(numeric).max())
    return np.abs(analytic - numeric).max() / scale


def draw_checkable_pair(rng, trial):
    """Random (model, task) with all pre-activations clear of ReLU kinks."""
    while True:
        trial += 1
        model = init_model([2, 4, 3], seed=trial)
        set_flat(model, rng.normal(scale=0.7, size=flat_params(model).size))
        task = random_small_task(rng)
        if min_kink_distance(model, [task.support_x, task.query_x]) >= 5e-3:
            return model, task, trial


class TestMlpForward:
    def test_zero_parameters_embed_to_zero(self):
        model = init_model([2, 40, 40, 5], seed=0)
        set_flat(model, np.zeros(flat_params(model).size))
        out = mlp_forward(model, np.array([[3.0, -1.0], [0.5, 2.0]]))
        np.testing.assert_array_equal(out, np.zeros((2, 5)))

    def test_single_linear_layer_hand_case(self):
        model = init_model([2, 1], seed=0)
        model.weights[0] = np.array([[1.0], [-1.0]])
        model.biases[0] = np.array([0.0])
        out = mlp_forward(model, np.array([[3.0, 1.0]]))
        np.testing.assert_array_equal(out, [[2.0]])

    def test_negative_preactivation_contributes_nothing(self):
        model = init_model([1, 1, 1], seed=0)
        model.weights[0] = np.array([[1.0]])
        model.biases[0] = np.array([-5.0])
        model.weights[1] = np.array([[12.34]])
        model.biases[1] = np.array([0.75])
        out = mlp_forward(model, np.array([[0.0], [2.0]]))  # pre-activations -5, -3
        np.testing.assert_array_equal(out, [[0.75], [0.75]])

    def test_dimension_mismatch(self):
        model = init_model([2, 4, 3], seed=0)
        with pytest.raises(ShapeError):
            mlp_forward(model, np.ones((5, 3)))


class TestEpisodeLoss:
    def test_zero_network_gives_uniform_posterior_loss(self):
        model = init_model([2, 40, 40, 8], seed=0)
        set_flat(model, np.zeros(flat_params(model).size))
        task = random_small_task(np.random.default_rng(0), way=2)
        loss, _ = episode_loss_and_grad(model, task)
        assert loss == pytest.approx(math.log(2.0), abs=1e-12)

    def test_separated_prototypes_saturate_to_tiny_loss(self):
        model = init_model([2, 2], seed=0)
        model.weights[0] = np.eye(2)
        model.biases[0] = np.zeros(2)
        sx = np.array([[0.0, 0.0], [20.0, 0.0]])
        task = make_task(sx, [0, 1], sx, [0, 1])
        loss, _ = episode_loss_and_grad(model, task)
        assert loss < 1e-4

    def test_gradients_match_finite_differences(self):
        rng = np.random.default_rng(11)
        trial = 1000
        for _ in range(3):
            model, task, trial = draw_checkable_pair(rng, trial)
            assert gradient_check(model, task) < 1e-4

    def test_loss_invariant_under_set_order(self):
        rng = np.random.default_rng(5)
        model = init_model([2, 6, 4], seed=2)
        task = random_small_task(rng, way=2, shot=3, query=5)
        loss, _ = episode_loss_and_grad(model, task)
        perm_s = rng.permutation(len(task.support_x))
        perm_q = rng.permutation(len(task.query_x))
        shuffled = make_task(
            task.support_x[perm_s], task.support_y[perm_s],
            task.query_x[perm_q], task.query_y[perm_q],
        )
        loss_shuffled, _ = episode_loss_and_grad(model, shuffled)
        assert loss_shuffled == pytest.approx(loss, rel=1e-12)


class TestAdam:
    def _scalar_setup(self):
        params = ([np.array([[1.0]])], [np.array([0.5])])
        model = init_model([1, 1], seed=0)
        state = AdamState.zeros_like(model)
        return params, state

    def test_zero_gradient_is_fixed_point(self):
        params, state = self._scalar_setup()
        grads = ([np.array([[0.0]])], [np.array([0.0])])
        (new_w, new_b), _ = adam_update(params, grads, state, TrainConfig(), 1)
        np.testing.assert_array_equal(new_w[0], params[0][0])
        np.testing.assert_array_equal(new_b[0], params[1][0])

    def test_first_step_magnitude_is_learning_rate(self):
        params, state = self._scalar_setup()
        grads = ([np.array([[2.0]])], [np.array([0.0])])
        (new_w, _), _ = adam_update(params, grads, state, TrainConfig(), 1)
        assert new_w[0][0, 0] - 1.0 == pytest.approx(-1e-3, rel=1e-6)

    def test_first_step_sign_symmetry(self):
        params, state = self._scalar_setup()
        grads = ([np.array([[-2.0]])], [np.array([0.0])])
        (new_w, _), _ = adam_update(params, grads, state, TrainConfig(), 1)
        assert new_w[0][0, 0] - 1.0 == pytest.approx(+1e-3, rel=1e-6)

    def test_nonfinite_gradient_aborts(self):
        params, state = self._scalar_setup()
        grads = ([np.array([[np.nan]])], [np.array([0.0])])
        with pytest.raises(TrainingError):
            adam_update(params, grads, state, TrainConfig(), 1)


class TestTrain:
    def test_zero_episodes_returns_initialization(self):
        cfg = TrainConfig(episodes=0, val_tasks=0, seed=7)
        result = train(cfg, SineGenConfig(seed=7))
        reference = init_model([2, *cfg.hidden_sizes, cfg.embedding_dim], seed=7)
        for got, want in zip(result.model.weights, reference.weights):
            np.testing.assert_array_equal(got, want)
        assert result.model.global_protos is None

    def test_training_is_bit_deterministic(self):
        cfg = TrainConfig(episodes=300, val_tasks=0, embedding_dim=4, seed=3)
        gen = SineGenConfig(seed=3)
        a = train(cfg, gen)
        b = train(cfg, gen)
        for wa, wb in zip(a.model.weights, b.model.weights):
            np.testing.assert_array_equal(wa, wb)
        np.testing.assert_array_equal(a.model.global_protos.means, b.model.global_protos.means)
        np.testing.assert_array_equal(a.loss_history, b.loss_history)

    def test_loss_decreases(self, quick_result):
        losses = quick_result.loss_history
        assert np.median(losses[-100:]) < np.median(losses[:100])

    def test_shot_range_all_values_occur(self):
        cfg = TrainConfig(episodes=1000, val_tasks=0, embedding_dim=4, train_shot=(1, 5), seed=1)
        result = train(cfg, SineGenConfig(seed=1))
        assert set(result.shot_history.tolist()) == {1, 2, 3, 4, 5}

    def test_global_prototypes_match_recomputation(self):
        cfg = TrainConfig(episodes=200, val_tasks=0, embedding_dim=4, seed=5)
        gen = SineGenConfig(seed=5)
        result = train(cfg, gen)
        pool = build_training_pool(cfg, gen)
        recomputed = global_prototypes_from_pool(result.model, pool)
        np.testing.assert_array_equal(result.model.global_protos.means, recomputed.means)

    def test_early_stopping_keeps_best(self):
        cfg = TrainConfig(
            episodes=2000, embedding_dim=4, seed=2,
            val_tasks=20, val_every=200, val_patience=1,
            val_shot=5, val_unlabeled_per_class=0, val_query_per_class=20,
        )
        result = train(cfg, SineGenConfig(seed=2))
        assert result.best_episode <= result.episodes_run
        errors = [e for _, e in result.val_history]
        best_idx = int(np.argmin(errors))
        assert result.best_episode == result.val_history[best_idx][0]

    def test_pool_too_small_rejected(self):
        with pytest.raises(ConfigError):
            TrainConfig(train_shot=5, query_per_class=10, samples_per_class=10)


class TestModelFile:
    def test_round_trip(self, tmp_path, quick_model):
        path = tmp_path / "model.bin"
        save_model(quick_model, str(path), config_echo={"note": "test"}, seed=9)
        loaded, meta = load_model(str(path))
        for got, want in zip(loaded.weights, quick_model.weights):
            np.testing.assert_array_equal(got, want)
        for got, want in zip(loaded.biases, quick_model.biases):
            np.testing.assert_array_equal(got, want)
        np.testing.assert_array_equal(loaded.global_protos.means, quick_model.global_protos.means)
        assert meta["seed"] == 9
        assert meta["config"] == {"note": "test"}

    def test_bad_magic_rejected(self, tmp_path):
        path = tmp_path / "bogus.bin"
        path.write_bytes(b"NOT-A-MODEL-FILE" + b"\0" * 64)
        with pytest.raises(TaskFormatError):
            load_model(str(path))

    def test_unknown_version_rejected(self, tmp_path, quick_model):
        path = tmp_path / "model.bin"
        save_model(quick_model, str(path))
        raw = bytearray(path.read_bytes())
        raw[13] = 99  # bump the version field
        path.write_bytes(bytes(raw))
        with pytest.raises(TaskFormatError):
            load_model(str(path))

    def test_truncated_rejected(self, tmp_path, quick_model):
        path = tmp_path / "model.bin"
        save_model(quick_model, str(path))
        raw = path.read_bytes()
        path.write_bytes(raw[: len(raw) // 2])
        with pytest.raises(TaskFormatError):
            load_model(str(path))
