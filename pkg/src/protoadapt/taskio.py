"""Task and embedding files: a diff-able TSV format with a typed header.

Header line (tab-separated):
    PADAPT-TASKS  version  input_dim  way  shot  unlabeled  query  tasks  seed
counts are per class.  Every following line is one sample:
    task_id  role(S|U|Q)  label  feature...
Floats carry 17 significant digits, so a write/read round trip is
value-exact.  Label -1 marks a masked unlabeled sample.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

from .errors import LabelsUnavailableError, TaskFormatError
from .sinegen import Task

MAGIC = "PADAPT-TASKS"
FORMAT_VERSION = 1
_ROLES = ("S", "U", "Q")


@dataclass(frozen=True)
class TaskFileHeader:
    version: int
    input_dim: int
    way: int
    shot: int
    unlabeled_per_class: int
    query_per_class: int
    task_count: int
    seed: int

    def validate(self):
        if self.version != FORMAT_VERSION:
            raise TaskFormatError(f"unsupported format version {self.version}", line=1)
        positive = {
            "input_dim": self.input_dim,
            "way": self.way,
            "shot": self.shot,
            "query": self.query_per_class,
            "tasks": self.task_count,
        }
        for name, value in positive.items():
            if value < 1:
                raise TaskFormatError(f"{name} must be positive, got {value}", line=1)
        if self.unlabeled_per_class < 0:
            raise TaskFormatError("unlabeled count must be >= 0", line=1)


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def _task_lines(task: Task, mask_unlabeled: bool):
    for role, xs, ys in (
        ("S", task.support_x, task.support_y),
        ("U", task.unlabeled_x, task.unlabeled_y),
        ("Q", task.query_x, task.query_y),
    ):
        for row, label in zip(xs, ys):
            shown = -1 if (role == "U" and mask_unlabeled) else int(label)
            yield "\t".join([str(task.task_id), role, str(shown), *map(_fmt, row)])


def write_task_file(tasks: list[Task], path: str, seed: int = 0, mask_unlabeled: bool = False):
    """Write tasks atomically; all tasks must share dims and counts."""
    if not tasks:
        raise TaskFormatError("refusing to write an empty task file")
    first = tasks[0]
    for t in tasks:
        same = (
            t.input_dim == first.input_dim
            and t.way == first.way
            and t.shot == first.shot
            and t.unlabeled_per_class == first.unlabeled_per_class
            and t.query_per_class == first.query_per_class
        )
        if not same:
            raise TaskFormatError(f"task {t.task_id} differs in shape from task {first.task_id}")

    header = "\t".join(
        map(
            str,
            [
                MAGIC,
                FORMAT_VERSION,
                first.input_dim,
                first.way,
                first.shot,
                first.unlabeled_per_class,
                first.query_per_class,
                len(tasks),
                seed,
            ],
        )
    )
    tmp = f"{path}.tmp"
    with open(tmp, "w", encoding="utf-8") as fh:
        fh.write(header + "\n")
        for task in tasks:
            for line in _task_lines(task, mask_unlabeled):
                fh.write(line + "\n")
    os.replace(tmp, path)


def read_task_file(path: str) -> tuple[list[Task], TaskFileHeader]:
    """Parse a task file, validating the header and per-line shape."""
    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise TaskFormatError("empty file", line=1)

    fields = lines[0].split("\t")
    if fields[0] != MAGIC:
        raise TaskFormatError(f"bad magic {fields[0]!r}", line=1)
    if len(fields) != 9:
        raise TaskFormatError(f"header needs 9 fields, got {len(fields)}", line=1)
    try:
        numbers = [int(v) for v in fields[1:]]
    except ValueError as exc:
        raise TaskFormatError(f"non-integer header field: {exc}", line=1) from None
    header = TaskFileHeader(*numbers)
    header.validate()

    per_task = header.way * (header.shot + header.unlabeled_per_class + header.query_per_class)
    expected_lines = 1 + per_task * header.task_count
    if len(lines) != expected_lines:
        at = len(lines) + 1 if len(lines) < expected_lines else expected_lines + 1
        raise TaskFormatError(
            f"expected {expected_lines} lines for {header.task_count} task(s), found {len(lines)}",
            line=at,
        )

    section_counts = {
        "S": header.way * header.shot,
        "U": header.way * header.unlabeled_per_class,
        "Q": header.way * header.query_per_class,
    }
    n_fields = 3 + header.input_dim
    tasks = []
    lineno = 1
    for _ in range(header.task_count):
        rows = {role: ([], []) for role in _ROLES}
        task_id = None
        for _ in range(per_task):
            lineno += 1
            parts = lines[lineno - 1].split("\t")
            if len(parts) != n_fields:
                raise TaskFormatError(
                    f"expected {n_fields} fields, got {len(parts)}", line=lineno
                )
            try:
                tid = int(parts[0])
                label = int(parts[2])
                feats = [float(v) for v in parts[3:]]
            except ValueError as exc:
                raise TaskFormatError(f"bad number: {exc}", line=lineno) from None
            role = parts[1]
            if role not in _ROLES:
                raise TaskFormatError(f"unknown role {role!r}", line=lineno)
            if not -1 <= label < header.way:
                raise TaskFormatError(f"label {label} outside [-1, {header.way})", line=lineno)
            if task_id is None:
                task_id = tid
            elif tid != task_id:
                raise TaskFormatError(
                    f"task id changed mid-task ({task_id} -> {tid})", line=lineno
                )
            rows[role][0].append(feats)
            rows[role][1].append(label)

        for role in _ROLES:
            if len(rows[role][0]) != section_counts[role]:
                raise TaskFormatError(
                    f"task {task_id}: {len(rows[role][0])} {role} rows, "
                    f"expected {section_counts[role]}",
                    line=lineno,
                )

        def as_arrays(role):
            xs, ys = rows[role]
            x = np.array(xs, dtype=np.float64).reshape(len(xs), header.input_dim)
            return x, np.array(ys, dtype=np.int64)

        sx, sy = as_arrays("S")
        ux, uy = as_arrays("U")
        qx, qy = as_arrays("Q")
        tasks.append(
            Task(
                way=header.way,
                shot=header.shot,
                unlabeled_per_class=header.unlabeled_per_class,
                task_id=int(task_id),
                support_x=sx,
                support_y=sy,
                unlabeled_x=ux,
                unlabeled_y=uy,
                query_x=qx,
                query_y=qy,
            )
        )
    return tasks, header


def require_unlabeled_truth(task: Task, operation: str):
    """Raise if the hidden labels of the unlabeled pool were masked away."""
    if not task.unlabeled_truth_available:
        raise LabelsUnavailableError(
            f"{operation} needs true labels, but task {task.task_id} was exported masked"
        )


def export_embeddings(model, tasks: list[Task], path: str, seed: int = 0,
                      mask_unlabeled: bool = False):
    """Write tasks with features replaced by their embeddings."""
    from .embedding import mlp_forward

    embedded = []
    for task in tasks:
        embedded.append(
            Task(
                way=task.way,
                shot=task.shot,
                unlabeled_per_class=task.unlabeled_per_class,
                task_id=task.task_id,
                support_x=mlp_forward(model, task.support_x),
                support_y=task.support_y,
                unlabeled_x=mlp_forward(model, task.unlabeled_x)
                if len(task.unlabeled_x)
                else np.empty((0, model.embedding_dim)),
                unlabeled_y=task.unlabeled_y,
                query_x=mlp_forward(model, task.query_x),
                query_y=task.query_y,
            )
        )
    write_task_file(embedded, path, seed=seed, mask_unlabeled=mask_unlabeled)
