"""Prototype classifiers and K-means adaptation in embedding space.

Distances are squared Euclidean throughout; posteriors are softmax over
negative squared distances.  Tie-breaking is always toward the lowest
index so every operation is deterministic.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from enum import Enum

import numpy as np

from .errors import AdaptationError, ConfigError, ShapeError

SQUARED_EUCLIDEAN = "squared_euclidean"  # distance used by posteriors and clustering


def squared_distances(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Pairwise squared Euclidean distances, shape (len(a), len(b))."""
    a = np.atleast_2d(np.asarray(a, dtype=np.float64))
    b = np.atleast_2d(np.asarray(b, dtype=np.float64))
    if a.shape[1] != b.shape[1]:
        raise ShapeError(f"dimension mismatch: {a.shape[1]} vs {b.shape[1]}")
    d = (a * a).sum(axis=1)[:, None] + (b * b).sum(axis=1)[None, :] - 2.0 * (a @ b.T)
    return np.maximum(d, 0.0, out=d)


@dataclass(frozen=True)
class PrototypeSet:
    """Per-class mean vectors in embedding space."""

    class_ids: np.ndarray  # (C,) int
    means: np.ndarray      # (C, D) float

    def __post_init__(self):
        if len(self.class_ids) != len(self.means):
            raise ShapeError("one mean vector per class id required")
        if not np.all(np.isfinite(self.means)):
            raise AdaptationError("prototype means must be finite")

    @property
    def num_classes(self) -> int:
        return len(self.class_ids)


def compute_prototypes(
    embeddings: np.ndarray,
    labels: np.ndarray,
    num_classes: int | None = None,
) -> PrototypeSet:
    """Mean embedding per class.  Every class in [0, num_classes) must occur."""
    z = np.atleast_2d(np.asarray(embeddings, dtype=np.float64))
    y = np.asarray(labels, dtype=np.int64)
    if len(z) != len(y):
        raise ShapeError("embeddings and labels must align")
    if len(y) == 0:
        raise AdaptationError("cannot compute prototypes from zero samples")
    if num_classes is None:
        num_classes = int(y.max()) + 1
    counts = np.bincount(y, minlength=num_classes)
    missing = np.flatnonzero(counts == 0)
    if missing.size:
        raise AdaptationError(f"no samples for class(es) {missing.tolist()}")
    means = np.empty((num_classes, z.shape[1]))
    for c in range(num_classes):
        means[c] = z[y == c].mean(axis=0)
    return PrototypeSet(class_ids=np.arange(num_classes), means=means)


def class_posterior(z: np.ndarray, protos: PrototypeSet) -> np.ndarray:
    """Softmax over negative squared distances to the prototypes."""
    return softmax_neg_sqdist(z, protos.means)


def softmax_neg_sqdist(z: np.ndarray, means: np.ndarray) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    single = z.ndim == 1
    logits = -squared_distances(np.atleast_2d(z), means)
    logits -= logits.max(axis=1, keepdims=True)  # stabilize before exponentiating
    p = np.exp(logits)
    p /= p.sum(axis=1, keepdims=True)
    return p[0] if single else p


def predict(z: np.ndarray, protos: PrototypeSet) -> np.ndarray | int:
    """Most probable class; ties resolve to the lowest class id."""
    p = class_posterior(z, protos)
    if p.ndim == 1:
        return int(protos.class_ids[int(np.argmax(p))])
    return protos.class_ids[np.argmax(p, axis=1)]


class KMeansVariant(Enum):
    SEEDED_HARD = "seeded"
    CONSTRAINED_HARD = "constrained"
    SOFT = "soft"


@dataclass(frozen=True)
class KMeansMode:
    variant: KMeansVariant = KMeansVariant.SEEDED_HARD
    max_iters: int = 10

    def __post_init__(self):
        if self.max_iters < 0:
            raise ConfigError("max_iters must be >= 0")


@dataclass
class ClusterState:
    """Cluster means plus assignments and the cluster -> class mapping.

    ``cluster_class`` holds -1 for clusters that have not been assigned a
    class.  ``objective_history`` records the hard objective after seeding
    and after every iteration.
    """

    means: np.ndarray                    # (K, D)
    hard_assign: np.ndarray              # (n,) int
    soft_assign: np.ndarray | None       # (n, K), soft variant only
    cluster_class: np.ndarray            # (K,) int, -1 = unassigned
    iterations_run: int
    objective: float
    objective_history: list[float] = field(default_factory=list)
    converged: bool = False

    @property
    def num_clusters(self) -> int:
        return len(self.means)

    def sample_classes(self) -> np.ndarray:
        """Class of each clustered sample (-1 where its cluster is unlabeled)."""
        return self.cluster_class[self.hard_assign]

    def classify(self, z: np.ndarray) -> np.ndarray:
        """Nearest-mean class for new points, skipping unlabeled clusters."""
        labeled = self.cluster_class >= 0
        if not labeled.any():
            raise AdaptationError("no cluster carries a class yet")
        d = squared_distances(np.atleast_2d(z), self.means)
        d[:, ~labeled] = np.inf
        return self.cluster_class[np.argmin(d, axis=1)]


def _nearest_assign(points, means, pin_idx=None, pin_to=None):
    assign = np.argmin(squared_distances(points, means), axis=1)
    if pin_idx is not None:
        assign[pin_idx] = pin_to
    return assign


def _hard_means(points, assign, k, previous):
    means = previous.copy()
    for c in range(k):
        members = points[assign == c]
        if len(members):  # an emptied cluster keeps its previous mean
            means[c] = members.mean(axis=0)
    return means


def _hard_objective(points, means, assign) -> float:
    if len(points) == 0:
        return 0.0
    diff = points - means[assign]
    return float((diff * diff).sum())


def lloyd_cluster(
    points: np.ndarray,
    init_means: np.ndarray,
    max_iters: int,
    pin_idx: np.ndarray | None = None,
    pin_to: np.ndarray | None = None,
) -> tuple[np.ndarray, np.ndarray, int, bool, list[float]]:
    """Hard K-means from given initial means.

    One iteration updates the means from the current assignment and then
    reassigns every point, so the returned assignment always matches the
    returned means.  Stops when a reassignment changes nothing or after
    ``max_iters`` mean updates.
    """
    points = np.atleast_2d(np.asarray(points, dtype=np.float64))
    means = np.array(init_means, dtype=np.float64, copy=True)
    k = len(means)
    assign = _nearest_assign(points, means, pin_idx, pin_to)
    history = [_hard_objective(points, means, assign)]
    iterations = 0
    converged = False
    for _ in range(max_iters):
        means = _hard_means(points, assign, k, means)
        new_assign = _nearest_assign(points, means, pin_idx, pin_to)
        iterations += 1
        history.append(_hard_objective(points, means, new_assign))
        converged = bool(np.array_equal(new_assign, assign))
        assign = new_assign
        if converged:
            break
    return means, assign, iterations, converged, history


def seeded_kmeans(
    labeled_z: np.ndarray,
    labels: np.ndarray,
    unlabeled_z: np.ndarray,
    mode: KMeansMode = KMeansMode(),
) -> ClusterState:
    """Cluster labeled + unlabeled embeddings, seeded by the class prototypes.

    Cluster index c starts at (and keeps) class c's identity.  The hard
    variants run Lloyd iterations until assignments stop changing; the
    constrained variant additionally pins labeled points to their class's
    cluster.  The soft variant runs exactly ``max_iters`` weighted-mean
    updates: labeled points contribute weight 1 to their own class, and
    unlabeled points spread softmax(-squared distance) weight over all
    clusters.
    """
    labeled_z = np.atleast_2d(np.asarray(labeled_z, dtype=np.float64))
    labels = np.asarray(labels, dtype=np.int64)
    unlabeled_z = np.asarray(unlabeled_z, dtype=np.float64)
    if unlabeled_z.size == 0:
        unlabeled_z = np.empty((0, labeled_z.shape[1]))
    unlabeled_z = np.atleast_2d(unlabeled_z)

    protos = compute_prototypes(labeled_z, labels)
    k = protos.num_classes
    points = np.vstack([labeled_z, unlabeled_z])
    n_labeled = len(labeled_z)

    if mode.variant is KMeansVariant.SOFT:
        return _soft_kmeans(points, labels, n_labeled, protos.means, mode.max_iters)

    pin_idx = np.arange(n_labeled) if mode.variant is KMeansVariant.CONSTRAINED_HARD else None
    pin_to = labels if pin_idx is not None else None
    means, assign, iters, converged, history = lloyd_cluster(
        points, protos.means, mode.max_iters, pin_idx, pin_to
    )
    return ClusterState(
        means=means,
        hard_assign=assign,
        soft_assign=None,
        cluster_class=np.arange(k),
        iterations_run=iters,
        objective=history[-1],
        objective_history=history,
        converged=converged,
    )


def _soft_kmeans(points, labels, n_labeled, init_means, max_iters) -> ClusterState:
    k = len(init_means)
    means = init_means.copy()
    labeled_onehot = np.zeros((n_labeled, k))
    labeled_onehot[np.arange(n_labeled), labels] = 1.0
    labeled_sum = labeled_onehot.T @ points[:n_labeled]
    labeled_count = labeled_onehot.sum(axis=0)
    unlabeled = points[n_labeled:]

    def weights(m):
        w = np.empty((len(points), k))
        w[:n_labeled] = labeled_onehot
        if len(unlabeled):
            w[n_labeled:] = softmax_neg_sqdist(unlabeled, m)
        return w

    history = []
    soft = weights(means)
    history.append(_hard_objective(points, means, np.argmax(soft, axis=1)))
    for _ in range(max_iters):
        w_u = soft[n_labeled:]
        total = labeled_count + w_u.sum(axis=0)
        means = (labeled_sum + w_u.T @ unlabeled) / total[:, None]
        soft = weights(means)  # keep assignments consistent with the new means
        history.append(_hard_objective(points, means, np.argmax(soft, axis=1)))

    hard = np.argmax(soft, axis=1)
    return ClusterState(
        means=means,
        hard_assign=hard,
        soft_assign=soft,
        cluster_class=np.arange(k),
        iterations_run=max_iters,
        objective=history[-1],
        objective_history=history,
        converged=False,
    )


def kmeans_objective(state: ClusterState, points: np.ndarray) -> float:
    """Sum of squared distances of each point to its assigned mean."""
    points = np.atleast_2d(np.asarray(points, dtype=np.float64))
    if len(points) != len(state.hard_assign):
        raise ShapeError("points must be the set that was clustered")
    return _hard_objective(points, state.means, state.hard_assign)


def unsupervised_adapt(
    samples: np.ndarray,
    global_protos: PrototypeSet | None,
    max_iters: int = 10,
) -> tuple[np.ndarray, ClusterState]:
    """Cluster unlabeled samples starting from globally averaged prototypes.

    After clustering, each cluster takes the class of the nearest global
    prototype (several clusters may land on the same class).  Returns the
    per-sample class ids and the labeled cluster state.
    """
    if global_protos is None:
        raise AdaptationError("no global prototypes available")
    samples = np.asarray(samples, dtype=np.float64)
    if samples.size == 0:
        samples = np.empty((0, global_protos.means.shape[1]))
    samples = np.atleast_2d(samples)

    means, assign, iters, converged, history = lloyd_cluster(
        samples, global_protos.means, max_iters
    )
    nearest = np.argmin(squared_distances(means, global_protos.means), axis=1)
    cluster_class = global_protos.class_ids[nearest]
    state = ClusterState(
        means=means,
        hard_assign=assign,
        soft_assign=None,
        cluster_class=cluster_class,
        iterations_run=iters,
        objective=history[-1],
        objective_history=history,
        converged=converged,
    )
    return state.sample_classes(), state
