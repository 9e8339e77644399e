"""Deterministic generator for two-class episodes with a sine-wave boundary.

Each episode draws an amplitude/phase pair for the curve
``x2 = A * sin(x1 + phase)``; class points sit above or below the curve
with Laplace noise around the configured offsets.  All randomness derives
from ``(seed, stream, task_index)``, so any episode can be regenerated in
isolation and in any order.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError

# Independent task streams under one seed.  Training, validation and test
# episodes never share an (amplitude, phase) draw.
TRAIN_STREAM = 0
VAL_STREAM = 1
TEST_STREAM = 2

_SEED_MASK = (1 << 64) - 1


@dataclass(frozen=True)
class SineGenConfig:
    """Parameters of the sine-boundary task distribution."""

    amplitude_range: tuple[float, float] = (0.1, 5.0)
    phase_range: tuple[float, float] = (0.0, math.pi)
    x1_range: tuple[float, float] = (-5.0, 5.0)
    class_offsets: tuple[float, float] = (2.0, -2.0)
    laplace_scale: float = 0.5
    seed: int = 0

    def __post_init__(self):
        for name in ("amplitude_range", "phase_range", "x1_range"):
            lo, hi = getattr(self, name)
            if not lo <= hi:
                raise ConfigError(f"{name} must satisfy low <= high, got ({lo}, {hi})")
        if self.amplitude_range[0] <= 0.0:
            raise ConfigError("amplitudes must be positive")
        # scale 0 is allowed as the exact noise-free degenerate case
        if self.laplace_scale < 0.0:
            raise ConfigError("laplace_scale must be >= 0")


@dataclass
class Task:
    """One episode: labeled support, unlabeled pool, and held-out queries.

    The unlabeled section carries its true labels so that oracles and
    metrics can use them; adaptation code must not read them.  A value of
    -1 marks a masked (unavailable) label.
    """

    way: int
    shot: int
    unlabeled_per_class: int
    task_id: int
    support_x: np.ndarray
    support_y: np.ndarray
    unlabeled_x: np.ndarray
    unlabeled_y: np.ndarray
    query_x: np.ndarray
    query_y: np.ndarray

    @property
    def input_dim(self) -> int:
        return self.support_x.shape[1]

    @property
    def query_per_class(self) -> int:
        return len(self.query_x) // self.way

    @property
    def unlabeled_truth_available(self) -> bool:
        return len(self.unlabeled_y) == 0 or bool(np.all(self.unlabeled_y >= 0))

    def validate(self):
        if self.way < 2:
            raise ConfigError("a task needs at least two classes")
        for y, n_classes in ((self.support_y, self.way), (self.query_y, self.way)):
            if len(y) and (y.min() < 0 or y.max() >= n_classes):
                raise ConfigError("labels must lie in [0, way)")
        counts = np.bincount(self.support_y, minlength=self.way)
        if np.any(counts != self.shot):
            raise ConfigError("support must hold exactly `shot` samples per class")


def laplace_sample(location: float, scale: float, u: float) -> float:
    """Map a uniform draw u in (0, 1) through the inverse Laplace CDF."""
    if not 0.0 < u < 1.0:
        raise ValueError(f"u must lie strictly inside (0, 1), got {u}")
    if scale <= 0.0:
        raise ValueError(f"scale must be positive, got {scale}")
    return location - scale * math.copysign(1.0, u - 0.5) * math.log1p(-2.0 * abs(u - 0.5))


def _laplace_noise(rng: np.random.Generator, location: float, scale: float, n: int) -> np.ndarray:
    """Vectorized inverse-CDF sampling; mirrors laplace_sample exactly."""
    if scale == 0.0:
        return np.full(n, float(location))
    u = rng.random(n)
    u[u == 0.0] = 0.5  # measure-zero guard keeps draws strictly inside (0, 1)
    return location - scale * np.sign(u - 0.5) * np.log1p(-2.0 * np.abs(u - 0.5))


def _task_rng(cfg: SineGenConfig, stream: int, task_index: int) -> np.random.Generator:
    return np.random.default_rng([cfg.seed & _SEED_MASK, stream, task_index])


def task_params(cfg: SineGenConfig, task_index: int, stream: int = TRAIN_STREAM) -> tuple[float, float]:
    """Amplitude and phase of one task, independent of how many points get drawn."""
    rng = _task_rng(cfg, stream, task_index)
    amplitude = rng.uniform(*cfg.amplitude_range)
    phase = rng.uniform(*cfg.phase_range)
    return amplitude, phase


def sample_class_points(
    cfg: SineGenConfig,
    amplitude: float,
    phase: float,
    count: int,
    rng: np.random.Generator,
) -> np.ndarray:
    """Points of every class stacked as (way, count, 2) for one curve."""
    lo, hi = cfg.x1_range
    out = np.empty((len(cfg.class_offsets), count, 2))
    for cls, offset in enumerate(cfg.class_offsets):
        x1 = rng.uniform(lo, hi, count)
        x2 = amplitude * np.sin(x1 + phase) + _laplace_noise(rng, offset, cfg.laplace_scale, count)
        out[cls, :, 0] = x1
        out[cls, :, 1] = x2
    return out


def sample_task_points(
    cfg: SineGenConfig,
    amplitude: float,
    phase: float,
    sizes: tuple[int, int, int],
    rng: np.random.Generator,
    task_id: int = 0,
) -> Task:
    """Draw class-balanced support/unlabeled/query sections for fixed curve params."""
    shot, unlabeled, query = sizes
    if shot < 1 or query < 1 or unlabeled < 0:
        raise ConfigError(f"invalid sizes (shot={shot}, unlabeled={unlabeled}, query={query})")

    lo, hi = cfg.x1_range
    sections = []
    for count in (shot, unlabeled, query):
        xs, ys = [], []
        for cls, offset in enumerate(cfg.class_offsets):
            x1 = rng.uniform(lo, hi, count)
            x2 = amplitude * np.sin(x1 + phase) + _laplace_noise(rng, offset, cfg.laplace_scale, count)
            xs.append(np.column_stack([x1, x2]))
            ys.append(np.full(count, cls, dtype=np.int64))
        sections.append((np.concatenate(xs), np.concatenate(ys)))

    (sx, sy), (ux, uy), (qx, qy) = sections
    return Task(
        way=len(cfg.class_offsets),
        shot=shot,
        unlabeled_per_class=unlabeled,
        task_id=task_id,
        support_x=sx,
        support_y=sy,
        unlabeled_x=ux,
        unlabeled_y=uy,
        query_x=qx,
        query_y=qy,
    )


def sample_sine_task(
    cfg: SineGenConfig,
    sizes: tuple[int, int, int],
    task_index: int,
    stream: int = TRAIN_STREAM,
) -> Task:
    """Generate one episode; bit-identical for identical (seed, stream, task_index).

    ``sizes`` is (shot, unlabeled, query), each a per-class count.
    """
    rng = _task_rng(cfg, stream, task_index)
    amplitude = rng.uniform(*cfg.amplitude_range)
    phase = rng.uniform(*cfg.phase_range)
    return sample_task_points(cfg, amplitude, phase, sizes, rng, task_id=task_index)


def generate_tasks(
    cfg: SineGenConfig,
    sizes: tuple[int, int, int],
    count: int,
    stream: int = TEST_STREAM,
    start_index: int = 0,
) -> list[Task]:
    """A list of `count` consecutive episodes from one stream."""
    return [sample_sine_task(cfg, sizes, start_index + i, stream) for i in range(count)]
