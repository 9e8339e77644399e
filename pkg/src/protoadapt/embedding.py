"""Embedding network, episodic training, and the binary model format.

The network is a fully connected MLP (ReLU after each hidden layer, linear
output) evaluated and differentiated in float64.  Training minimizes the
negative log-likelihood of query points under a softmax over negative
squared distances to the class prototypes of the support set, and keeps a
running average of the per-episode prototypes for later label-free
adaptation.
"""

from __future__ import annotations

import io
import json
import os
import struct
from dataclasses import dataclass

import numpy as np

from . import sinegen
from .adapt import PrototypeSet, compute_prototypes, predict, squared_distances
from .errors import ConfigError, ShapeError, TaskFormatError, TrainingError
from .sinegen import SineGenConfig, Task

_INIT_STREAM = 0x696E6974      # parameter init
_EPISODE_STREAM = 0x65706973   # per-episode task pick and point draws

MODEL_MAGIC = b"PADAPT-MODEL\n"
MODEL_VERSION = 1


@dataclass
class EmbeddingModel:
    """MLP parameters plus accumulated global class prototypes."""

    weights: list[np.ndarray]
    biases: list[np.ndarray]
    global_protos: PrototypeSet | None = None
    global_proto_episodes: int = 0

    @property
    def input_dim(self) -> int:
        return self.weights[0].shape[0]

    @property
    def embedding_dim(self) -> int:
        return self.weights[-1].shape[1]

    @property
    def layer_sizes(self) -> list[int]:
        return [self.weights[0].shape[0]] + [w.shape[1] for w in self.weights]

    def copy_params(self) -> tuple[list[np.ndarray], list[np.ndarray]]:
        return [w.copy() for w in self.weights], [b.copy() for b in self.biases]


def init_model(layer_sizes: list[int], seed: int = 0) -> EmbeddingModel:
    """Uniform(-sqrt(6/(fan_in+fan_out)), +...) weights, zero biases."""
    if len(layer_sizes) < 2:
        raise ConfigError("need at least input and output sizes")
    rng = np.random.default_rng([seed & (2**64 - 1), _INIT_STREAM])
    weights, biases = [], []
    for fan_in, fan_out in zip(layer_sizes[:-1], layer_sizes[1:]):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-limit, limit, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return EmbeddingModel(weights=weights, biases=biases)


def mlp_forward(model: EmbeddingModel, inputs: np.ndarray) -> np.ndarray:
    """Embed a batch of rows; z = g(x) with ReLU hidden layers."""
    return _forward_cache(model, inputs)[-1]


def _forward_cache(model: EmbeddingModel, inputs: np.ndarray) -> list[np.ndarray]:
    x = np.atleast_2d(np.asarray(inputs, dtype=np.float64))
    if x.shape[1] != model.input_dim:
        raise ShapeError(f"expected input dim {model.input_dim}, got {x.shape[1]}")
    acts = [x]
    h = x
    for w, b in zip(model.weights[:-1], model.biases[:-1]):
        h = np.maximum(h @ w + b, 0.0)
        acts.append(h)
    acts.append(h @ model.weights[-1] + model.biases[-1])
    return acts


def _backprop(model, acts, d_out, grads_w, grads_b):
    """Accumulate parameter gradients for one batch given d(loss)/d(output)."""
    delta = d_out
    for layer in range(len(model.weights) - 1, -1, -1):
        grads_w[layer] += acts[layer].T @ delta
        grads_b[layer] += delta.sum(axis=0)
        if layer > 0:
            delta = (delta @ model.weights[layer].T) * (acts[layer] > 0.0)


def _episode_loss_grad_protos(model, task):
    support_acts = _forward_cache(model, task.support_x)
    query_acts = _forward_cache(model, task.query_x)
    z_s, z_q = support_acts[-1], query_acts[-1]

    protos = compute_prototypes(z_s, task.support_y, task.way)
    counts = np.bincount(task.support_y, minlength=task.way).astype(np.float64)

    logits = -squared_distances(z_q, protos.means)
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(shifted).sum(axis=1))
    n_query = len(z_q)
    loss = float(np.mean(log_norm - shifted[np.arange(n_query), task.query_y]))

    posteriors = np.exp(shifted)
    posteriors /= posteriors.sum(axis=1, keepdims=True)
    d_logits = posteriors.copy()
    d_logits[np.arange(n_query), task.query_y] -= 1.0
    d_logits /= n_query

    # logits_jc = -|z_j - m_c|^2, and d_logits rows sum to zero, so the
    # z_j term of the derivative cancels.
    d_zq = 2.0 * (d_logits @ protos.means)
    col = d_logits.sum(axis=0)
    d_protos = 2.0 * (d_logits.T @ z_q - col[:, None] * protos.means)
    d_zs = d_protos[task.support_y] / counts[task.support_y][:, None]

    grads_w = [np.zeros_like(w) for w in model.weights]
    grads_b = [np.zeros_like(b) for b in model.biases]
    _backprop(model, query_acts, d_zq, grads_w, grads_b)
    _backprop(model, support_acts, d_zs, grads_w, grads_b)
    return loss, (grads_w, grads_b), protos


def episode_loss_and_grad(model: EmbeddingModel, task: Task):
    """Query-set NLL of one episode and its exact parameter gradients."""
    loss, grads, _ = _episode_loss_grad_protos(model, task)
    return loss, grads


@dataclass(frozen=True)
class TrainConfig:
    """Episodic training settings.

    ``train_shot`` is either a fixed per-class support size or an
    inclusive (low, high) range sampled uniformly per episode.
    """

    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    episodes: int = 40000
    train_shot: int | tuple[int, int] = 5
    query_per_class: int = 5
    samples_per_class: int = 10
    hidden_sizes: tuple[int, ...] = (40, 40)
    embedding_dim: int = 16
    train_pool: int = 100
    val_tasks: int = 100
    val_every: int = 2000
    val_patience: int = 8
    val_shot: int = 5
    val_unlabeled_per_class: int = 50
    val_query_per_class: int = 200
    seed: int = 0

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ConfigError("learning_rate must be positive")
        if self.episodes < 0:
            raise ConfigError("episodes must be >= 0")
        lo, hi = self.shot_range
        if lo < 1 or hi < lo:
            raise ConfigError(f"invalid train_shot {self.train_shot}")
        if hi + self.query_per_class > self.samples_per_class:
            raise ConfigError(
                "each pool task needs samples_per_class >= max train_shot + query_per_class"
            )

    @property
    def shot_range(self) -> tuple[int, int]:
        if isinstance(self.train_shot, int):
            return self.train_shot, self.train_shot
        lo, hi = self.train_shot
        return int(lo), int(hi)


@dataclass
class AdamState:
    m_w: list[np.ndarray]
    v_w: list[np.ndarray]
    m_b: list[np.ndarray]
    v_b: list[np.ndarray]

    @classmethod
    def zeros_like(cls, model: EmbeddingModel) -> "AdamState":
        return cls(
            m_w=[np.zeros_like(w) for w in model.weights],
            v_w=[np.zeros_like(w) for w in model.weights],
            m_b=[np.zeros_like(b) for b in model.biases],
            v_b=[np.zeros_like(b) for b in model.biases],
        )


def adam_update(params, grads, state: AdamState, cfg: TrainConfig, step: int):
    """One bias-corrected Adam step; returns updated (params, state)."""
    if step < 1:
        raise ConfigError("Adam step counter starts at 1")
    weights, biases = params
    grads_w, grads_b = grads
    for g in (*grads_w, *grads_b):
        if not np.all(np.isfinite(g)):
            raise TrainingError(f"non-finite gradient at step {step}")

    c1 = 1.0 - cfg.beta1**step
    c2 = 1.0 - cfg.beta2**step

    def stepped(p, g, m, v):
        m[...] = cfg.beta1 * m + (1.0 - cfg.beta1) * g
        v[...] = cfg.beta2 * v + (1.0 - cfg.beta2) * g * g
        return p - cfg.learning_rate * (m / c1) / (np.sqrt(v / c2) + cfg.epsilon)

    new_w = [stepped(p, g, m, v) for p, g, m, v in zip(weights, grads_w, state.m_w, state.v_w)]
    new_b = [stepped(p, g, m, v) for p, g, m, v in zip(biases, grads_b, state.m_b, state.v_b)]
    return (new_w, new_b), state


@dataclass
class TrainResult:
    model: EmbeddingModel
    loss_history: np.ndarray
    shot_history: np.ndarray
    val_history: list[tuple[int, float]]
    episodes_run: int
    best_episode: int
    stopped_early: bool


def _validation_error(model: EmbeddingModel, tasks: list[Task]) -> float:
    """Mean query error (%); adapts with seeded K-means when tasks carry
    an unlabeled pool, otherwise scores the plain prototype classifier."""
    from .adapt import KMeansMode, seeded_kmeans

    errors = []
    for task in tasks:
        z_support = mlp_forward(model, task.support_x)
        z_query = mlp_forward(model, task.query_x)
        if len(task.unlabeled_x):
            state = seeded_kmeans(
                z_support, task.support_y, mlp_forward(model, task.unlabeled_x), KMeansMode()
            )
            pred = state.classify(z_query)
        else:
            protos = compute_prototypes(z_support, task.support_y, task.way)
            pred = predict(z_query, protos)
        errors.append(100.0 * float(np.mean(pred != task.query_y)))
    return float(np.mean(errors))


def build_training_pool(cfg: TrainConfig, gen: SineGenConfig) -> np.ndarray:
    """Fixed per-task datasets: (pool, way, samples_per_class, 2).

    Each pool task draws its curve parameters and a finite sample once;
    episodes subsample support and query points from it, mirroring
    adaptation to real datasets where every class holds finitely many
    examples.
    """
    way = len(gen.class_offsets)
    pool = np.empty((cfg.train_pool, way, cfg.samples_per_class, 2))
    for i in range(cfg.train_pool):
        rng = sinegen._task_rng(gen, sinegen.TRAIN_STREAM, i)
        amplitude = rng.uniform(*gen.amplitude_range)
        phase = rng.uniform(*gen.phase_range)
        pool[i] = sinegen.sample_class_points(gen, amplitude, phase, cfg.samples_per_class, rng)
    return pool


def global_prototypes_from_pool(model: EmbeddingModel, pool: np.ndarray) -> PrototypeSet:
    """Average of per-task class prototypes under the current weights."""
    n_tasks, way, per_class, _ = pool.shape
    acc = np.zeros((way, model.embedding_dim))
    for i in range(n_tasks):
        for c in range(way):
            acc[c] += mlp_forward(model, pool[i, c]).mean(axis=0)
    return PrototypeSet(class_ids=np.arange(way), means=acc / n_tasks)


def _subsample_episode(pool_task: np.ndarray, shot: int, query: int, rng, task_id: int) -> Task:
    way, per_class, dim = pool_task.shape
    sx, sy, qx, qy = [], [], [], []
    for c in range(way):
        picks = rng.choice(per_class, size=shot + query, replace=False)
        sx.append(pool_task[c, picks[:shot]])
        qx.append(pool_task[c, picks[shot:]])
        sy.append(np.full(shot, c, dtype=np.int64))
        qy.append(np.full(query, c, dtype=np.int64))
    return Task(
        way=way,
        shot=shot,
        unlabeled_per_class=0,
        task_id=task_id,
        support_x=np.concatenate(sx),
        support_y=np.concatenate(sy),
        unlabeled_x=np.empty((0, dim)),
        unlabeled_y=np.empty(0, dtype=np.int64),
        query_x=np.concatenate(qx),
        query_y=np.concatenate(qy),
    )


def train(cfg: TrainConfig, gen: SineGenConfig) -> TrainResult:
    """Episodic training over a fixed pool of generator tasks.

    Each episode picks one pool task, subsamples disjoint support and query
    points from its finite dataset, and takes one Adam step.  Validation
    runs every ``val_every`` episodes on held-out tasks; training stops
    after ``val_patience`` non-improving checks and the best parameters are
    kept.  Global prototypes are the mean over pool tasks of the class
    prototypes under the final weights.
    """
    input_dim = 2  # sine tasks are planar
    model = init_model([input_dim, *cfg.hidden_sizes, cfg.embedding_dim], seed=cfg.seed)
    params = (model.weights, model.biases)
    opt = AdamState.zeros_like(model)

    pool = build_training_pool(cfg, gen)
    val_tasks = None
    if cfg.val_tasks > 0 and cfg.val_every > 0:
        val_sizes = (cfg.val_shot, cfg.val_unlabeled_per_class, cfg.val_query_per_class)
        val_tasks = [
            sinegen.sample_sine_task(gen, val_sizes, j, sinegen.VAL_STREAM)
            for j in range(cfg.val_tasks)
        ]

    lo, hi = cfg.shot_range
    losses = np.empty(cfg.episodes)
    shots = np.empty(cfg.episodes, dtype=np.int64)
    val_hist: list[tuple[int, float]] = []
    best_params = None
    best_error = np.inf
    best_episode = 0
    bad_checks = 0
    stopped_early = False
    episodes_run = 0

    for episode in range(cfg.episodes):
        rng = np.random.default_rng([cfg.seed & (2**64 - 1), _EPISODE_STREAM, episode])
        pick = int(rng.integers(len(pool)))
        shot = lo if lo == hi else int(rng.integers(lo, hi + 1))
        shots[episode] = shot
        task = _subsample_episode(pool[pick], shot, cfg.query_per_class, rng, pick)

        model.weights, model.biases = params
        loss, grads, _ = _episode_loss_grad_protos(model, task)
        losses[episode] = loss
        params, opt = adam_update(params, grads, opt, cfg, episode + 1)
        episodes_run = episode + 1

        if val_tasks and (episode + 1) % cfg.val_every == 0:
            model.weights, model.biases = params
            val_error = _validation_error(model, val_tasks)
            val_hist.append((episode + 1, val_error))
            if val_error < best_error:
                best_error = val_error
                best_params = ([w.copy() for w in params[0]], [b.copy() for b in params[1]])
                best_episode = episode + 1
                bad_checks = 0
            else:
                bad_checks += 1
                if bad_checks >= cfg.val_patience:
                    stopped_early = True
                    break

    if best_params is not None:
        params = best_params
    model.weights, model.biases = params
    if episodes_run:
        model.global_protos = global_prototypes_from_pool(model, pool)
        model.global_proto_episodes = episodes_run

    return TrainResult(
        model=model,
        loss_history=losses[:episodes_run],
        shot_history=shots[:episodes_run],
        val_history=val_hist,
        episodes_run=episodes_run,
        best_episode=best_episode if best_params is not None else episodes_run,
        stopped_early=stopped_early,
    )


# ---------------------------------------------------------------------------
# Model file format: little-endian binary with a JSON config echo.


def save_model(model: EmbeddingModel, path: str, config_echo: dict | None = None, seed: int = 0):
    buf = io.BytesIO()
    buf.write(MODEL_MAGIC)
    sizes = model.layer_sizes
    buf.write(struct.pack("<II", MODEL_VERSION, len(sizes)))
    buf.write(struct.pack(f"<{len(sizes)}I", *sizes))
    for w, b in zip(model.weights, model.biases):
        buf.write(np.ascontiguousarray(w, dtype="<f8").tobytes())
        buf.write(np.ascontiguousarray(b, dtype="<f8").tobytes())
    if model.global_protos is not None:
        gp = model.global_protos
        buf.write(struct.pack("<BIQ", 1, gp.num_classes, model.global_proto_episodes))
        buf.write(np.ascontiguousarray(gp.class_ids, dtype="<i8").tobytes())
        buf.write(np.ascontiguousarray(gp.means, dtype="<f8").tobytes())
    else:
        buf.write(struct.pack("<B", 0))
    buf.write(struct.pack("<q", seed))
    blob = json.dumps(config_echo or {}, sort_keys=True).encode()
    buf.write(struct.pack("<I", len(blob)))
    buf.write(blob)

    tmp = f"{path}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(buf.getvalue())
    os.replace(tmp, path)


def load_model(path: str) -> tuple[EmbeddingModel, dict]:
    """Read a model file; returns the model and {'seed': ..., 'config': ...}."""
    with open(path, "rb") as fh:
        data = fh.read()
    view = memoryview(data)
    if data[: len(MODEL_MAGIC)] != MODEL_MAGIC:
        raise TaskFormatError("not a model file (bad magic)")
    off = len(MODEL_MAGIC)

    def take(fmt):
        nonlocal off
        size = struct.calcsize(fmt)
        if off + size > len(data):
            raise TaskFormatError("model file truncated")
        out = struct.unpack_from(fmt, view, off)
        off += size
        return out

    version, n_sizes = take("<II")
    if version != MODEL_VERSION:
        raise TaskFormatError(f"unsupported model format version {version}")
    sizes = list(take(f"<{n_sizes}I"))

    def array(count, dtype):
        nonlocal off
        nbytes = count * 8
        if off + nbytes > len(data):
            raise TaskFormatError("model file truncated")
        arr = np.frombuffer(data, dtype=dtype, count=count, offset=off).copy()
        off += nbytes
        return arr

    weights, biases = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        weights.append(array(fan_in * fan_out, "<f8").reshape(fan_in, fan_out))
        biases.append(array(fan_out, "<f8"))

    (has_gp,) = take("<B")
    global_protos = None
    episodes = 0
    if has_gp:
        n_classes, episodes = take("<IQ")
        ids = array(n_classes, "<i8")
        means = array(n_classes * sizes[-1], "<f8").reshape(n_classes, sizes[-1])
        global_protos = PrototypeSet(class_ids=ids, means=means)
    (seed,) = take("<q")
    (blob_len,) = take("<I")
    if off + blob_len > len(data):
        raise TaskFormatError("model file truncated")
    config = json.loads(data[off : off + blob_len].decode()) if blob_len else {}

    model = EmbeddingModel(
        weights=weights,
        biases=biases,
        global_protos=global_protos,
        global_proto_episodes=episodes,
    )
    return model, {"seed": seed, "config": config}
