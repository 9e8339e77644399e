"""Active cluster labeling: acquisition functions and the request loop.

Samples are clustered without using any labels (k-means++ seeding under a
caller seed), then one representative per cluster is chosen by an
acquisition function and sent to a label provider.  Answered clusters pass
their class to all of their members.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .adapt import (
    ClusterState,
    KMeansMode,
    compute_prototypes,
    lloyd_cluster,
    softmax_neg_sqdist,
    squared_distances,
)
from .errors import AdaptationError, IncompleteLabelingError

_SELECT_STREAM = 1


class AcquisitionKind(Enum):
    RANDOM = "random"
    NEAREST = "nearest"
    ENTROPY = "entropy"
    MARGIN = "margin"
    ORACLE = "oracle"


class OracleProvider:
    """Answers every query with the sample's hidden true label."""

    def __init__(self, true_labels: np.ndarray):
        self.true_labels = np.asarray(true_labels, dtype=np.int64)
        if len(self.true_labels) and self.true_labels.min() < 0:
            raise AdaptationError("oracle provider needs unmasked labels")

    def answer(self, sample_id: int) -> int | None:
        return int(self.true_labels[sample_id])


class ScriptedProvider:
    """Answers from a preset map; unknown samples stay unanswered."""

    def __init__(self, answers: dict[int, int]):
        self.answers = dict(answers)

    def answer(self, sample_id: int) -> int | None:
        return self.answers.get(sample_id)


def acquisition_score(
    z: np.ndarray,
    cluster: int,
    state: ClusterState,
    kind: AcquisitionKind,
    rng: np.random.Generator | None = None,
) -> float:
    """Score one candidate; selection picks the argmax within its cluster.

    The posterior used by ENTROPY and MARGIN treats the cluster means as
    prototypes, since no class labels exist before the user answers.
    """
    if kind is AcquisitionKind.ORACLE:
        raise AdaptationError("oracle labeling scores clusters, not samples")
    if kind is AcquisitionKind.RANDOM:
        if rng is None:
            raise AdaptationError("random acquisition needs a seeded generator")
        return float(rng.random())
    if kind is AcquisitionKind.NEAREST:
        return -float(squared_distances(z, state.means[cluster][None, :])[0, 0])
    p = softmax_neg_sqdist(np.asarray(z, dtype=np.float64), state.means)
    if kind is AcquisitionKind.ENTROPY:
        return float(np.sum(np.where(p > 0.0, p * np.log(p), 0.0)))
    if kind is AcquisitionKind.MARGIN:
        if len(p) < 2:
            return 1.0
        top = np.sort(p)[::-1]
        return float(top[0] - top[1])
    raise AdaptationError(f"unknown acquisition kind {kind}")


def select_queries(
    state: ClusterState,
    points: np.ndarray,
    kind: AcquisitionKind,
    seed: int | list[int] = 0,
) -> tuple[dict[int, int], list[int]]:
    """One sample id per non-empty cluster (argmax score, lowest id on ties).

    Returns the cluster -> sample map and the list of skipped empty
    clusters.
    """
    points = np.atleast_2d(np.asarray(points, dtype=np.float64))
    rng = np.random.default_rng(seed) if kind is AcquisitionKind.RANDOM else None
    queries: dict[int, int] = {}
    skipped: list[int] = []
    for cluster in range(state.num_clusters):
        members = np.flatnonzero(state.hard_assign == cluster)
        if members.size == 0:
            skipped.append(cluster)
            continue
        scores = np.array(
            [acquisition_score(points[i], cluster, state, kind, rng) for i in members]
        )
        queries[cluster] = int(members[int(np.argmax(scores))])
    return queries, skipped


def label_clusters(
    state: ClusterState,
    queries: dict[int, int],
    answers: dict[int, int],
) -> ClusterState:
    """Apply user answers: cluster_class[c] = answer for c's queried sample."""
    missing = [c for c, sid in queries.items() if sid not in answers]
    if missing:
        raise IncompleteLabelingError(missing)
    cluster_class = state.cluster_class.copy()
    for cluster, sid in queries.items():
        answer = int(answers[sid])
        if answer < 0:
            raise AdaptationError(f"invalid class id {answer} for cluster {cluster}")
        cluster_class[cluster] = answer
    return replace_cluster_class(state, cluster_class)


def replace_cluster_class(state: ClusterState, cluster_class: np.ndarray) -> ClusterState:
    return ClusterState(
        means=state.means,
        hard_assign=state.hard_assign,
        soft_assign=state.soft_assign,
        cluster_class=np.asarray(cluster_class, dtype=np.int64),
        iterations_run=state.iterations_run,
        objective=state.objective,
        objective_history=state.objective_history,
        converged=state.converged,
    )


def oracle_label_clusters(
    state: ClusterState,
    points: np.ndarray,
    true_labels: np.ndarray,
) -> ClusterState:
    """Label each cluster with the class of the nearest true-label prototype."""
    true_labels = np.asarray(true_labels, dtype=np.int64)
    if len(true_labels) and true_labels.min() < 0:
        raise AdaptationError("oracle labeling needs unmasked true labels")
    protos = compute_prototypes(points, true_labels)
    nearest = np.argmin(squared_distances(state.means, protos.means), axis=1)
    return replace_cluster_class(state, protos.class_ids[nearest])


def kmeans_plusplus_init(
    points: np.ndarray,
    k: int,
    rng: np.random.Generator,
) -> np.ndarray:
    """Classic D^2-weighted seeding; deterministic under the generator."""
    points = np.atleast_2d(np.asarray(points, dtype=np.float64))
    n = len(points)
    if n < k:
        raise AdaptationError(f"cannot place {k} centers on {n} points")
    centers = np.empty((k, points.shape[1]))
    first = int(rng.integers(n))
    centers[0] = points[first]
    closest = squared_distances(points, centers[:1])[:, 0]
    for c in range(1, k):
        total = closest.sum()
        if total == 0.0:  # all points coincide with chosen centers
            idx = int(rng.integers(n))
        else:
            r = rng.random() * total
            idx = int(np.searchsorted(np.cumsum(closest), r, side="right"))
            idx = min(idx, n - 1)
        centers[c] = points[idx]
        closest = np.minimum(closest, squared_distances(points, centers[c : c + 1])[:, 0])
    return centers


@dataclass
class Transcript:
    """Audit record of one active-labeling round; sufficient for replay."""

    kind: str
    seed: int | list[int]
    queries: dict[int, int] = field(default_factory=dict)
    answers: dict[int, int] = field(default_factory=dict)
    cluster_class: list[int] = field(default_factory=list)
    skipped_clusters: list[int] = field(default_factory=list)
    unanswered_clusters: list[int] = field(default_factory=list)

    @property
    def complete(self) -> bool:
        return not self.unanswered_clusters

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "seed": self.seed,
            "queries": {str(c): s for c, s in self.queries.items()},
            "answers": {str(s): a for s, a in self.answers.items()},
            "cluster_class": self.cluster_class,
            "skipped_clusters": self.skipped_clusters,
            "unanswered_clusters": self.unanswered_clusters,
        }


@dataclass
class ActiveResult:
    state: ClusterState
    transcript: Transcript
    sample_classes: np.ndarray  # -1 only when no cluster could be labeled


def cluster_unlabeled(
    points: np.ndarray,
    way: int,
    max_iters: int,
    seed: int | list[int],
    seed_means: np.ndarray | None = None,
) -> ClusterState:
    """Hard K-means with k-means++ seeding (or explicit seed means)."""
    points = np.atleast_2d(np.asarray(points, dtype=np.float64))
    if seed_means is None:
        seeds = seed if isinstance(seed, list) else [seed]
        rng = np.random.default_rng([*(s & (2**64 - 1) for s in seeds), 0])
        init = kmeans_plusplus_init(points, way, rng)
    else:
        init = seed_means
    means, assign, iters, converged, history = lloyd_cluster(points, init, max_iters)
    return ClusterState(
        means=means,
        hard_assign=assign,
        soft_assign=None,
        cluster_class=np.full(way, -1, dtype=np.int64),
        iterations_run=iters,
        objective=history[-1],
        objective_history=history,
        converged=converged,
    )


def active_adapt(
    embeddings: np.ndarray,
    way: int,
    kind: AcquisitionKind,
    provider,
    kmeans: KMeansMode = KMeansMode(),
    seed: int | list[int] = 0,
    support_labels: np.ndarray | None = None,
    seed_with_support: bool = False,
) -> ActiveResult:
    """Cluster, request one label per cluster, and propagate the answers.

    ``seed_with_support`` switches the clustering initialization from
    k-means++ to the prototypes of the (first ``len(support_labels)``)
    labeled rows.  The oracle kind bypasses per-sample queries and labels
    clusters from the provider's true labels directly.
    """
    points = np.atleast_2d(np.asarray(embeddings, dtype=np.float64))
    seed_means = None
    if seed_with_support:
        if support_labels is None:
            raise AdaptationError("support labels required to seed the clustering")
        labels = np.asarray(support_labels, dtype=np.int64)
        seed_means = compute_prototypes(points[: len(labels)], labels, way).means
    state = cluster_unlabeled(points, way, kmeans.max_iters, seed, seed_means)

    transcript = Transcript(kind=kind.value, seed=seed)
    if kind is AcquisitionKind.ORACLE:
        truth = getattr(provider, "true_labels", None)
        if truth is None or len(truth) != len(points):
            raise AdaptationError("oracle labeling needs true labels for every sample")
        state = oracle_label_clusters(state, points, truth)
    else:
        seeds = seed if isinstance(seed, list) else [seed]
        queries, skipped = select_queries(state, points, kind, [*seeds, _SELECT_STREAM])
        transcript.queries = queries
        transcript.skipped_clusters = skipped
        cluster_class = state.cluster_class.copy()
        for cluster, sid in queries.items():
            answer = provider.answer(sid)
            if answer is None:
                transcript.unanswered_clusters.append(cluster)
            else:
                transcript.answers[sid] = int(answer)
                cluster_class[cluster] = int(answer)
        state = replace_cluster_class(state, cluster_class)

    transcript.cluster_class = state.cluster_class.tolist()
    classes = state.sample_classes()
    unresolved = classes < 0
    if unresolved.any() and (state.cluster_class >= 0).any():
        classes = classes.copy()
        classes[unresolved] = state.classify(points[unresolved])
    return ActiveResult(state=state, transcript=transcript, sample_classes=classes)
