"""Experiment runner: per-task evaluation of adaptation strategies.

Every strategy embeds a task's points, adapts, and scores error on the
query set; per-task errors aggregate into a mean with a 95% half-width.
All randomness is keyed by (config seed, task id) so runs replay exactly
regardless of evaluation order.
"""

from __future__ import annotations

import json
import time
from dataclasses import asdict, dataclass, field, replace
from enum import Enum

import numpy as np

from . import sinegen
from .active import AcquisitionKind, OracleProvider, active_adapt
from .adapt import (
    KMeansMode,
    KMeansVariant,
    compute_prototypes,
    predict,
    seeded_kmeans,
    unsupervised_adapt,
)
from .embedding import EmbeddingModel, mlp_forward
from .errors import AdaptationError, ConfigError
from .sinegen import SineGenConfig, Task
from .taskio import require_unlabeled_truth


class Strategy(Enum):
    SUPERVISED = "supervised"
    SEMI_SUPERVISED = "semi"
    UNSUPERVISED = "unsupervised"
    ACTIVE = "active"
    EXTRA_LABELED = "extra-labeled"


@dataclass(frozen=True)
class ExperimentConfig:
    """One evaluation cell.

    ``shot`` counts labeled support samples per class; ``unlabeled`` counts
    extra samples per task, split evenly over the classes (the
    EXTRA_LABELED strategy reveals their labels instead of clustering).
    """

    strategy: Strategy = Strategy.SUPERVISED
    shot: int = 5
    unlabeled: int = 100
    query_per_class: int = 200
    tasks: int = 1000
    kmeans: KMeansMode = KMeansMode()
    acquisition: AcquisitionKind = AcquisitionKind.MARGIN
    transductive: bool = False
    seed: int = 0

    def __post_init__(self):
        if self.tasks < 1:
            raise ConfigError("need at least one evaluation task")
        if self.unlabeled < 0:
            raise ConfigError("unlabeled count must be >= 0")
        if self.shot < 1:
            raise ConfigError("shot must be >= 1")

    def echo(self) -> dict:
        d = asdict(self)
        d["strategy"] = self.strategy.value
        d["kmeans"] = {"variant": self.kmeans.variant.value, "max_iters": self.kmeans.max_iters}
        d["acquisition"] = self.acquisition.value
        return d


@dataclass
class EvalSummary:
    mean_error: float
    ci95_half: float
    per_task_errors: np.ndarray
    config: dict
    wall_time: float
    task_count: int

    @property
    def accuracy(self) -> float:
        return 100.0 - self.mean_error

    def row(self) -> dict:
        return {
            "mean_error": self.mean_error,
            "ci95_half": self.ci95_half,
            "accuracy": self.accuracy,
            "tasks": self.task_count,
            "wall_time": self.wall_time,
            "config": self.config,
        }


def ci95(values) -> tuple[float, float]:
    """Mean and 1.96 * sd/sqrt(T) half-width (sample sd; T=1 gives 0)."""
    values = np.asarray(values, dtype=np.float64)
    if values.size == 0:
        raise ConfigError("ci95 of an empty list")
    mean = float(values.mean())
    if values.size == 1:
        return mean, 0.0
    half = 1.96 * float(values.std(ddof=1)) / np.sqrt(values.size)
    return mean, half


def _unlabeled_per_class(cfg: ExperimentConfig, way: int) -> int:
    if cfg.unlabeled % way:
        raise ConfigError(
            f"unlabeled={cfg.unlabeled} does not split evenly over {way} classes"
        )
    return cfg.unlabeled // way


def generate_eval_tasks(cfg: ExperimentConfig, gen: SineGenConfig, way: int = 2) -> list[Task]:
    sizes = (cfg.shot, _unlabeled_per_class(cfg, way), cfg.query_per_class)
    return sinegen.generate_tasks(gen, sizes, cfg.tasks, stream=sinegen.TEST_STREAM)


def _task_error(model: EmbeddingModel, cfg: ExperimentConfig, task: Task) -> float:
    z_support = mlp_forward(model, task.support_x)
    z_query = mlp_forward(model, task.query_x)
    z_unlabeled = (
        mlp_forward(model, task.unlabeled_x)
        if len(task.unlabeled_x)
        else np.empty((0, model.embedding_dim))
    )

    strategy = cfg.strategy
    if strategy is Strategy.SUPERVISED:
        protos = compute_prototypes(z_support, task.support_y, task.way)
        pred = predict(z_query, protos)

    elif strategy is Strategy.EXTRA_LABELED:
        require_unlabeled_truth(task, "extra-labeled evaluation")
        z_all = np.vstack([z_support, z_unlabeled])
        y_all = np.concatenate([task.support_y, task.unlabeled_y])
        protos = compute_prototypes(z_all, y_all, task.way)
        pred = predict(z_query, protos)

    elif strategy is Strategy.SEMI_SUPERVISED:
        pool = np.vstack([z_unlabeled, z_query]) if cfg.transductive else z_unlabeled
        mode = cfg.kmeans
        if len(pool) == 0:
            # nothing to adapt with: identical to the supervised classifier
            mode = replace(mode, max_iters=0)
        state = seeded_kmeans(z_support, task.support_y, pool, mode)
        pred = state.classify(z_query)

    elif strategy is Strategy.UNSUPERVISED:
        if model.global_protos is None:
            raise AdaptationError("model carries no global prototypes")
        pool = np.vstack([z_unlabeled, z_query]) if cfg.transductive else z_unlabeled
        _, state = unsupervised_adapt(pool, model.global_protos, cfg.kmeans.max_iters)
        pred = state.classify(z_query)

    elif strategy is Strategy.ACTIVE:
        require_unlabeled_truth(task, "simulated active evaluation")
        pool = [z_support, z_unlabeled]
        truth = [task.support_y, task.unlabeled_y]
        if cfg.transductive:
            pool.append(z_query)
            truth.append(task.query_y)
        points = np.vstack(pool)
        labels = np.concatenate(truth)
        result = active_adapt(
            points,
            task.way,
            cfg.acquisition,
            OracleProvider(labels),
            kmeans=cfg.kmeans,
            seed=[cfg.seed, task.task_id],
        )
        pred = result.state.classify(z_query)

    else:
        raise ConfigError(f"unknown strategy {strategy}")

    return 100.0 * float(np.mean(pred != task.query_y))


def evaluate_strategy(
    model: EmbeddingModel,
    cfg: ExperimentConfig,
    gen: SineGenConfig | None = None,
    tasks: list[Task] | None = None,
) -> EvalSummary:
    """Run one strategy over the evaluation tasks and aggregate."""
    start = time.perf_counter()
    if tasks is None:
        if gen is None:
            gen = SineGenConfig(seed=cfg.seed)
        tasks = generate_eval_tasks(cfg, gen)
    errors = np.array([_task_error(model, cfg, t) for t in tasks])
    mean, half = ci95(errors)
    return EvalSummary(
        mean_error=mean,
        ci95_half=half,
        per_task_errors=errors,
        config=cfg.echo(),
        wall_time=time.perf_counter() - start,
        task_count=len(tasks),
    )


@dataclass
class Report:
    rows: list[EvalSummary] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"rows": [r.row() for r in self.rows]}

    def save(self, path: str):
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=2)
            fh.write("\n")

    def table(self) -> str:
        return format_table(self.rows)


def format_table(rows: list[EvalSummary]) -> str:
    """Aligned text table of evaluation rows."""
    headers = ["strategy", "mode", "iters", "shot", "unlabeled", "error%", "ci95", "tasks"]
    body = []
    for r in rows:
        c = r.config
        body.append(
            [
                c["strategy"],
                c["kmeans"]["variant"] if c["strategy"] == "semi" else "-",
                str(c["kmeans"]["max_iters"]) if c["strategy"] in ("semi", "unsupervised", "active") else "-",
                str(c["shot"]),
                str(c["unlabeled"]),
                f"{r.mean_error:.2f}",
                f"{r.ci95_half:.2f}",
                str(r.task_count),
            ]
        )
    widths = [max(len(h), *(len(row[i]) for row in body)) if body else len(h)
              for i, h in enumerate(headers)]
    lines = ["  ".join(h.ljust(w) for h, w in zip(headers, widths))]
    for row in body:
        lines.append("  ".join(v.ljust(w) for v, w in zip(row, widths)))
    return "\n".join(lines)


def run_experiment(
    model: EmbeddingModel,
    configs: list[ExperimentConfig],
    gen: SineGenConfig | None = None,
) -> Report:
    report = Report()
    for cfg in configs:
        report.rows.append(evaluate_strategy(model, cfg, gen=gen))
    return report


def config_from_echo(echo: dict) -> ExperimentConfig:
    """Rebuild a config from a report row for exact replay."""
    return ExperimentConfig(
        strategy=Strategy(echo["strategy"]),
        shot=echo["shot"],
        unlabeled=echo["unlabeled"],
        query_per_class=echo["query_per_class"],
        tasks=echo["tasks"],
        kmeans=KMeansMode(
            variant=KMeansVariant(echo["kmeans"]["variant"]),
            max_iters=echo["kmeans"]["max_iters"],
        ),
        acquisition=AcquisitionKind(echo["acquisition"]),
        transductive=echo["transductive"],
        seed=echo["seed"],
    )
