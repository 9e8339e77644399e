"""HTTP service hosting interactive cluster-labeling sessions.

A session clusters one task's embeddings, surfaces one label query per
cluster, and folds human answers back into per-sample predictions.  State
lives in memory; every mutation can optionally snapshot to JSON.  The
2-D view projects embeddings onto the principal subspace of the cluster
means.
"""

from __future__ import annotations

import json
import os
import threading
import uuid
from dataclasses import dataclass, field

import numpy as np
from fastapi import FastAPI, Request
from fastapi.exceptions import RequestValidationError
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import JSONResponse
from pydantic import BaseModel

from .active import AcquisitionKind, ScriptedProvider, cluster_unlabeled, label_clusters, select_queries
from .adapt import ClusterState, KMeansMode
from .embedding import EmbeddingModel, mlp_forward
from .errors import ProtoAdaptError, ShapeError
from .taskio import read_task_file

_SELECT_STREAM = 1  # must match the active loop so transcripts replay exactly


@dataclass
class Projection:
    center: np.ndarray
    directions: np.ndarray  # (2, D) orthonormal rows
    fallback: bool

    def apply(self, z: np.ndarray) -> np.ndarray:
        z = np.atleast_2d(np.asarray(z, dtype=np.float64))
        if self.fallback:
            coords = z[:, :2]
            if coords.shape[1] < 2:
                coords = np.column_stack([coords, np.zeros(len(coords))])
            return coords
        return (z - self.center) @ self.directions.T


def _first_nonzero_positive(direction: np.ndarray) -> np.ndarray:
    nz = np.flatnonzero(np.abs(direction) > 1e-12)
    if nz.size and direction[nz[0]] < 0:
        return -direction
    return direction


def prototype_projection(means: np.ndarray) -> Projection:
    """Top-2 principal directions of the mean vectors, sign-normalized."""
    means = np.atleast_2d(np.asarray(means, dtype=np.float64))
    if len(means) < 2:
        raise ShapeError("need at least two means to span a view plane")
    center = means.mean(axis=0)
    centered = means - center
    if not np.any(np.abs(centered) > 1e-12):
        return Projection(center=center, directions=np.zeros((2, means.shape[1])), fallback=True)

    _, singular, vt = np.linalg.svd(centered, full_matrices=False)
    directions = [vt[0]]
    if len(singular) > 1 and singular[1] > 1e-12 * singular[0]:
        directions.append(vt[1])
    else:
        # collinear means: complete the basis from the first axis-aligned
        # candidate that is not parallel to the leading direction
        for axis in range(means.shape[1]):
            candidate = np.zeros(means.shape[1])
            candidate[axis] = 1.0
            candidate -= (candidate @ directions[0]) * directions[0]
            norm = np.linalg.norm(candidate)
            if norm > 1e-9:
                directions.append(candidate / norm)
                break
        else:
            directions.append(np.zeros(means.shape[1]))
    dirs = np.vstack([_first_nonzero_positive(d) for d in directions])
    return Projection(center=center, directions=dirs, fallback=False)


def project_to_prototype_subspace(embeddings: np.ndarray, means: np.ndarray):
    """2-D coordinates of embeddings in the means' principal plane.

    Returns (coords, fallback) where fallback means the means were all
    identical and the first two raw dimensions were used instead.
    """
    projection = prototype_projection(means)
    return projection.apply(embeddings), projection.fallback


class SectionPayload(BaseModel):
    x: list[list[float]]
    y: list[int] | None = None


class InlineTask(BaseModel):
    support: SectionPayload
    unlabeled: SectionPayload | None = None
    query: SectionPayload | None = None


class CreateSessionRequest(BaseModel):
    acquisition: str = "margin"
    seed: int = 0
    max_iters: int = 10
    include_queries: bool = False
    way: int | None = None
    task: InlineTask | None = None
    task_file: str | None = None
    task_index: int = 0


class SubmitLabelRequest(BaseModel):
    sample_id: int
    class_id: int


@dataclass
class Session:
    session_id: str
    way: int
    embeddings: np.ndarray
    is_support: np.ndarray
    state: ClusterState
    queries: dict[int, int]
    skipped: list[int]
    answers: dict[int, int] = field(default_factory=dict)
    seed: int = 0
    acquisition: str = "margin"
    projection: Projection | None = None
    lock: threading.Lock = field(default_factory=threading.Lock)

    @property
    def status(self) -> str:
        nonempty = [c for c in range(self.state.num_clusters) if c not in self.skipped]
        done = all(self.state.cluster_class[c] >= 0 for c in nonempty)
        return "complete" if done else "awaiting_labels"

    def pending(self) -> list[int]:
        return sorted(
            sid for c, sid in self.queries.items() if self.state.cluster_class[c] < 0
        )

    def transcript(self) -> dict:
        return {
            "acquisition": self.acquisition,
            "seed": self.seed,
            "queries": {str(c): s for c, s in self.queries.items()},
            "answers": {str(s): a for s, a in self.answers.items()},
            "cluster_class": self.state.cluster_class.tolist(),
            "skipped_clusters": self.skipped,
            "status": self.status,
        }


def _view_payload(session: Session) -> dict:
    coords = session.projection.apply(session.embeddings)
    mean_coords = session.projection.apply(session.state.means)
    classes = session.state.sample_classes()
    query_ids = set(session.queries.values())
    points = []
    for i in range(len(session.embeddings)):
        points.append(
            {
                "sample_id": i,
                "x": float(coords[i, 0]),
                "y": float(coords[i, 1]),
                "cluster": int(session.state.hard_assign[i]),
                "predicted_class": int(classes[i]) if classes[i] >= 0 else None,
                "is_query": i in query_ids,
                "is_support": bool(session.is_support[i]),
            }
        )
    return {
        "session_id": session.session_id,
        "status": session.status,
        "points": points,
        "cluster_means": [
            {
                "cluster": c,
                "x": float(mean_coords[c, 0]),
                "y": float(mean_coords[c, 1]),
                "class_id": int(session.state.cluster_class[c])
                if session.state.cluster_class[c] >= 0
                else None,
            }
            for c in range(session.state.num_clusters)
        ],
        "class_names": [f"class {c}" for c in range(session.way)],
        "pending_queries": session.pending(),
        "projection_fallback": session.projection.fallback,
    }


def _error(status: int, message: str) -> JSONResponse:
    return JSONResponse(status_code=status, content={"detail": message})


def create_app(
    model: EmbeddingModel,
    snapshot_dir: str | None = None,
    cors_origins: tuple[str, ...] = ("*",),
) -> FastAPI:
    app = FastAPI(title="protoadapt session service")
    app.add_middleware(
        CORSMiddleware,
        allow_origins=list(cors_origins),
        allow_methods=["*"],
        allow_headers=["*"],
    )
    sessions: dict[str, Session] = {}
    store_lock = threading.Lock()

    @app.exception_handler(RequestValidationError)
    async def malformed(request: Request, exc: RequestValidationError):
        return _error(400, f"malformed request: {exc.errors()[:1]}")

    def snapshot(session: Session):
        if snapshot_dir is None:
            return
        os.makedirs(snapshot_dir, exist_ok=True)
        path = os.path.join(snapshot_dir, f"{session.session_id}.json")
        payload = {"transcript": session.transcript(), "view": _view_payload(session)}
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(payload, fh)

    @app.get("/healthz")
    async def healthz():
        return {"status": "ok", "embedding_dim": model.embedding_dim}

    @app.post("/sessions")
    async def create_session(req: CreateSessionRequest):
        try:
            kind = AcquisitionKind(req.acquisition)
        except ValueError:
            return _error(400, f"unknown acquisition {req.acquisition!r}")
        if kind is AcquisitionKind.ORACLE:
            return _error(400, "oracle labeling is not interactive")

        try:
            features, labels, is_support, way = _collect_points(req)
        except ProtoAdaptError as exc:
            return _error(400, str(exc))
        if features.shape[1] != model.input_dim:
            return _error(
                422,
                f"task dimension {features.shape[1]} does not match model "
                f"input {model.input_dim}",
            )

        embeddings = mlp_forward(model, features)
        state = cluster_unlabeled(embeddings, way, req.max_iters, [req.seed])
        queries, skipped = select_queries(state, embeddings, kind, seed=[req.seed, _SELECT_STREAM])
        session = Session(
            session_id=uuid.uuid4().hex,
            way=way,
            embeddings=embeddings,
            is_support=is_support,
            state=state,
            queries=queries,
            skipped=skipped,
            seed=req.seed,
            acquisition=kind.value,
            projection=prototype_projection(state.means),
        )
        with store_lock:
            sessions[session.session_id] = session
        snapshot(session)
        return _view_payload(session)

    def _collect_points(req: CreateSessionRequest):
        if req.task is None and req.task_file is None:
            raise ShapeError("request needs an inline task or a task_file")
        if req.task is not None:
            support = np.asarray(req.task.support.x, dtype=np.float64)
            support_y = np.asarray(req.task.support.y or [], dtype=np.int64)
            if len(support_y) != len(support):
                raise ShapeError("support labels must align with support points")
            sections = [support]
            if req.task.unlabeled is not None and req.task.unlabeled.x:
                sections.append(np.asarray(req.task.unlabeled.x, dtype=np.float64))
            if req.include_queries and req.task.query is not None and req.task.query.x:
                sections.append(np.asarray(req.task.query.x, dtype=np.float64))
            widths = {s.shape[1] for s in sections if s.size}
            if len(widths) > 1:
                raise ShapeError("all sections must share one feature width")
            features = np.vstack([s for s in sections if s.size])
            way = req.way or (int(support_y.max()) + 1 if len(support_y) else 2)
            is_support = np.zeros(len(features), dtype=bool)
            is_support[: len(support)] = True
            return features, support_y, is_support, way
        tasks, _ = read_task_file(req.task_file)
        if not 0 <= req.task_index < len(tasks):
            raise ShapeError(f"task_index {req.task_index} outside 0..{len(tasks) - 1}")
        task = tasks[req.task_index]
        sections = [task.support_x, task.unlabeled_x]
        if req.include_queries:
            sections.append(task.query_x)
        features = np.vstack([s for s in sections if len(s)])
        is_support = np.zeros(len(features), dtype=bool)
        is_support[: len(task.support_x)] = True
        return features, task.support_y, is_support, req.way or task.way

    @app.get("/sessions/{session_id}/view")
    async def get_view(session_id: str):
        session = sessions.get(session_id)
        if session is None:
            return _error(404, f"unknown session {session_id}")
        with session.lock:
            return _view_payload(session)

    @app.post("/sessions/{session_id}/labels")
    async def submit_label(session_id: str, req: SubmitLabelRequest):
        session = sessions.get(session_id)
        if session is None:
            return _error(404, f"unknown session {session_id}")
        with session.lock:
            if req.sample_id not in session.queries.values():
                return _error(409, f"sample {req.sample_id} is not a pending query")
            if not 0 <= req.class_id < session.way:
                return _error(400, f"class_id must lie in [0, {session.way})")
            session.answers[req.sample_id] = req.class_id
            # resubmission overwrites: rebuild the labeling from all answers
            session.state = label_clusters(
                session.state,
                {c: s for c, s in session.queries.items() if s in session.answers},
                session.answers,
            )
            snapshot(session)
            return _view_payload(session)

    @app.get("/sessions/{session_id}/transcript")
    async def get_transcript(session_id: str):
        session = sessions.get(session_id)
        if session is None:
            return _error(404, f"unknown session {session_id}")
        with session.lock:
            return session.transcript()

    return app


def replay_transcript(
    model: EmbeddingModel,
    features: np.ndarray,
    way: int,
    transcript: dict,
    max_iters: int = 10,
) -> np.ndarray:
    """Recompute a finished session's predictions offline from its transcript."""
    from .active import active_adapt

    embeddings = mlp_forward(model, features)
    answers = {int(s): int(a) for s, a in transcript["answers"].items()}
    result = active_adapt(
        embeddings,
        way,
        AcquisitionKind(transcript["acquisition"]),
        ScriptedProvider(answers),
        kmeans=KMeansMode(max_iters=max_iters),
        seed=[int(transcript["seed"])],
    )
    return result.sample_classes
