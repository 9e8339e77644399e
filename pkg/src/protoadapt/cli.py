"""Command-line entry points: data generation, training, evaluation, serving."""

from __future__ import annotations

import dataclasses
import json
import sys

import click
import numpy as np

from . import sinegen
from .active import AcquisitionKind, OracleProvider, active_adapt
from .adapt import KMeansMode, KMeansVariant
from .embedding import TrainConfig, load_model, mlp_forward, save_model, train
from .errors import ProtoAdaptError
from .harness import ExperimentConfig, Report, Strategy, ci95, evaluate_strategy
from .sinegen import SineGenConfig
from .taskio import export_embeddings as export_embeddings_file
from .taskio import read_task_file, require_unlabeled_truth, write_task_file

_STREAMS = {"train": sinegen.TRAIN_STREAM, "val": sinegen.VAL_STREAM, "test": sinegen.TEST_STREAM}


def _load_json(path: str | None) -> dict:
    if path is None:
        return {}
    with open(path, "r", encoding="utf-8") as fh:
        return json.load(fh)


def _gen_config(overrides: dict, seed: int | None) -> SineGenConfig:
    known = {f.name for f in dataclasses.fields(SineGenConfig)}
    kwargs = {k: v for k, v in overrides.items() if k in known}
    for key in ("amplitude_range", "phase_range", "x1_range", "class_offsets"):
        if key in kwargs:
            kwargs[key] = tuple(kwargs[key])
    if seed is not None:
        kwargs["seed"] = seed
    return SineGenConfig(**kwargs)


@click.group()
def main():
    """Few-shot adaptation toolkit."""


@main.command("gen-data")
@click.option("--config", "config_path", type=click.Path(exists=True), help="JSON generator config.")
@click.option("--seed", type=int, default=None, help="Override the generator seed.")
@click.option("--tasks", type=int, default=1000, show_default=True)
@click.option("--shot", type=int, default=5, show_default=True, help="Support samples per class.")
@click.option("--unlabeled", type=int, default=50, show_default=True, help="Unlabeled samples per class.")
@click.option("--query", type=int, default=200, show_default=True, help="Query samples per class.")
@click.option("--stream", type=click.Choice(sorted(_STREAMS)), default="test", show_default=True)
@click.option("--mask-unlabeled", is_flag=True, help="Drop true labels of the unlabeled pool.")
@click.option("--out", required=True, type=click.Path())
def gen_data(config_path, seed, tasks, shot, unlabeled, query, stream, mask_unlabeled, out):
    """Write an episode file from the sine generator."""
    gen = _gen_config(_load_json(config_path), seed)
    episodes = sinegen.generate_tasks(gen, (shot, unlabeled, query), tasks, _STREAMS[stream])
    write_task_file(episodes, out, seed=gen.seed, mask_unlabeled=mask_unlabeled)
    click.echo(f"wrote {tasks} tasks to {out}")


@main.command("train")
@click.option("--config", "config_path", type=click.Path(exists=True),
              help='JSON with optional "train" and "gen" sections.')
@click.option("--seed", type=int, default=None, help="Override both training and generator seeds.")
@click.option("--episodes", type=int, default=None)
@click.option("--out", required=True, type=click.Path())
def train_cmd(config_path, seed, episodes, out):
    """Train the embedding network and write a model file."""
    blob = _load_json(config_path)
    train_kwargs = dict(blob.get("train", {}))
    if "train_shot" in train_kwargs and isinstance(train_kwargs["train_shot"], list):
        train_kwargs["train_shot"] = tuple(train_kwargs["train_shot"])
    if "hidden_sizes" in train_kwargs:
        train_kwargs["hidden_sizes"] = tuple(train_kwargs["hidden_sizes"])
    if seed is not None:
        train_kwargs["seed"] = seed
    if episodes is not None:
        train_kwargs["episodes"] = episodes
    cfg = TrainConfig(**train_kwargs)
    gen = _gen_config(blob.get("gen", {}), seed)

    result = train(cfg, gen)
    echo = {
        "train": dataclasses.asdict(cfg),
        "gen": dataclasses.asdict(gen),
        "episodes_run": result.episodes_run,
        "best_episode": result.best_episode,
    }
    save_model(result.model, out, config_echo=echo, seed=cfg.seed)
    click.echo(
        f"trained {result.episodes_run} episodes"
        f"{' (early stop)' if result.stopped_early else ''}, model -> {out}"
    )


@main.command("export-embeddings")
@click.option("--model", "model_path", required=True, type=click.Path(exists=True))
@click.option("--tasks", "tasks_path", required=True, type=click.Path(exists=True))
@click.option("--mask-unlabeled", is_flag=True)
@click.option("--out", required=True, type=click.Path())
def export_embeddings(model_path, tasks_path, mask_unlabeled, out):
    """Re-write a task file with features replaced by model embeddings."""
    model, _ = load_model(model_path)
    tasks, header = read_task_file(tasks_path)
    export_embeddings_file(model, tasks, out, seed=header.seed, mask_unlabeled=mask_unlabeled)
    click.echo(f"embedded {len(tasks)} tasks -> {out}")


@main.command("eval")
@click.option("--model", "model_path", required=True, type=click.Path(exists=True))
@click.option("--strategy", type=click.Choice([s.value for s in Strategy]), default="supervised",
              show_default=True)
@click.option("--kshot", type=int, default=5, show_default=True, help="Support samples per class.")
@click.option("--unlabeled", type=int, default=100, show_default=True, help="Extra samples per task.")
@click.option("--tasks", type=int, default=1000, show_default=True)
@click.option("--iters", type=int, default=10, show_default=True)
@click.option("--mode", type=click.Choice([v.value for v in KMeansVariant]), default="seeded",
              show_default=True)
@click.option("--acquisition", type=click.Choice([k.value for k in AcquisitionKind]),
              default="margin", show_default=True)
@click.option("--transductive", is_flag=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", type=click.Path(), default=None, help="Write a JSON report.")
def eval_cmd(model_path, strategy, kshot, unlabeled, tasks, iters, mode, acquisition,
             transductive, seed, out):
    """Evaluate one adaptation strategy over generated test tasks."""
    model, _ = load_model(model_path)
    cfg = ExperimentConfig(
        strategy=Strategy(strategy),
        shot=kshot,
        unlabeled=unlabeled,
        tasks=tasks,
        kmeans=KMeansMode(variant=KMeansVariant(mode), max_iters=iters),
        acquisition=AcquisitionKind(acquisition),
        transductive=transductive,
        seed=seed,
    )
    try:
        summary = evaluate_strategy(model, cfg)
    except ProtoAdaptError as exc:
        raise click.ClickException(str(exc)) from exc
    report = Report(rows=[summary])
    click.echo(report.table())
    if out:
        report.save(out)
        click.echo(f"report -> {out}")


@main.command("active-sim")
@click.option("--tasks", "tasks_path", required=True, type=click.Path(exists=True))
@click.option("--model", "model_path", type=click.Path(exists=True), default=None,
              help="Embed features first; omit if the file already holds embeddings.")
@click.option("--iters", type=int, default=10, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", type=click.Path(), default=None)
def active_sim(tasks_path, model_path, iters, seed, out):
    """Compare acquisition strategies with simulated (truthful) answers."""
    episodes, _ = read_task_file(tasks_path)
    model = load_model(model_path)[0] if model_path else None

    def embed(x):
        if x.size == 0:
            return x
        return mlp_forward(model, x) if model is not None else x

    rows = []
    for kind in AcquisitionKind:
        accuracies = []
        for task in episodes:
            require_unlabeled_truth(task, "active simulation")
            points = np.vstack([embed(task.support_x), embed(task.unlabeled_x)])
            truth = np.concatenate([task.support_y, task.unlabeled_y])
            result = active_adapt(
                points,
                task.way,
                kind,
                OracleProvider(truth),
                kmeans=KMeansMode(max_iters=iters),
                seed=[seed, task.task_id],
            )
            pred = result.state.classify(embed(task.query_x))
            accuracies.append(100.0 * float(np.mean(pred == task.query_y)))
        mean, half = ci95(accuracies)
        rows.append({"acquisition": kind.value, "accuracy": mean, "ci95_half": half})

    width = max(len(r["acquisition"]) for r in rows)
    click.echo(f"{'acquisition'.ljust(width)}  accuracy%  ci95")
    for r in rows:
        click.echo(f"{r['acquisition'].ljust(width)}  {r['accuracy']:8.2f}  {r['ci95_half']:.2f}")
    if out:
        with open(out, "w", encoding="utf-8") as fh:
            json.dump({"tasks": len(episodes), "seed": seed, "rows": rows}, fh, indent=2)
        click.echo(f"report -> {out}")


@main.command("serve")
@click.option("--model", "model_path", required=True, type=click.Path(exists=True))
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", type=int, default=8321, show_default=True)
@click.option("--snapshot-dir", type=click.Path(), default=None)
@click.option("--cors-origin", multiple=True, default=("*",), show_default=True,
              help="Allowed browser origins; repeatable.")
def serve(model_path, host, port, snapshot_dir, cors_origin):
    """Serve interactive labeling sessions over HTTP."""
    import uvicorn

    from .service import create_app

    model, _ = load_model(model_path)
    app = create_app(model, snapshot_dir=snapshot_dir, cors_origins=tuple(cors_origin))
    uvicorn.run(app, host=host, port=port, log_level="warning")


if __name__ == "__main__":
    sys.exit(main())
