"""Per-class sample selection at a budget rho.

Three selectors: uniform random, median-window centrality ("moderate"),
and graph-suppression selection ("dgpruning": centrality scores refined
by one additive forward message pass on an RBF-weighted k-NN graph, then
greedy picking with multiplicative suppression of each pick's unselected
neighbors). Budgets round half away from zero with a floor of one sample
per class.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator

from .activation_store import DatasetView, partition_by_class
from .validation import ValidationError, check_labels, check_matrix

METHODS = ("random", "moderate", "dgpruning")


@dataclass(frozen=True)
class CoresetSpec:
    method: str = "dgpruning"
    rho: float = 0.3
    seed: int = 0
    knn_k: int = 5
    gamma_forward: float = 1.0
    gamma_backward: float = 1.0
    normalize_scores: bool = True

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValidationError(f"unknown selection method '{self.method}'")
        if not 0.0 < self.rho < 1.0:
            raise ValidationError(f"rho must be in (0, 1), got {self.rho}")
        if self.knn_k < 1:
            raise ValidationError("knn_k must be >= 1")
        if self.gamma_forward < 0 or self.gamma_backward < 0:
            raise ValidationError("gamma factors must be >= 0")


@dataclass
class Coreset:
    """Per-class selected sample ids, with the selection settings and source model."""

    per_class_ids: dict[int, list[str]]
    spec: CoresetSpec
    source_model: str = ""

    def size(self) -> int:
        return sum(len(v) for v in self.per_class_ids.values())


@dataclass
class SampleGraph:
    """Directed k-NN graph over one class; row i lists node i's neighbors."""

    nodes: np.ndarray  # member indices (global or local), [n]
    neighbors: np.ndarray  # [n, k_eff] positions into `nodes`
    weights: np.ndarray  # [n, k_eff], in (0, 1]
    scores: np.ndarray = field(default_factory=lambda: np.zeros(0))


def budget_size(rho: float, n: int) -> int:
    """max(1, round(rho*n)) with round-half-away-from-zero."""
    return max(1, int(np.floor(rho * n + 0.5)))


def class_center(vectors) -> np.ndarray:
    """Arithmetic mean of the class's pooled activation rows."""
    arr = check_matrix(vectors, "class vectors")
    if arr.shape[0] == 0:
        raise ValidationError("cannot take the center of an empty class")
    return arr.mean(axis=0)


def select_random(indices, rho: float, seed) -> np.ndarray:
    """Uniform sample without replacement; deterministic per seed; sorted output."""
    idx = np.asarray(indices, dtype=np.int64)
    if idx.size == 0:
        raise ValidationError("empty class")
    k = budget_size(rho, idx.size)
    rng = np.random.default_rng(seed)
    return np.sort(rng.choice(idx, size=k, replace=False))


def select_moderate(vectors, rho: float, indices=None) -> np.ndarray:
    """Samples whose distance-to-center rank is nearest the median rank.

    Ranks are tie-aware (equal distances share their average rank); among
    equal |rank - median_rank| the lower sample index wins. Output sorted.
    """
    arr = check_matrix(vectors, "class vectors")
    idx = _member_indices(indices, arr.shape[0])
    n = arr.shape[0]
    k = budget_size(rho, n)
    dists = np.linalg.norm(arr - class_center(arr), axis=1)
    ranks = _average_ranks(dists)
    score = np.abs(ranks - 0.5 * (n - 1))
    order = np.lexsort((idx, score))
    return np.sort(idx[order[:k]])


def build_knn_graph(vectors, k: int, indices=None) -> SampleGraph:
    """k nearest neighbors per node by Euclidean distance, RBF edge weights.

    Weight w_ij = exp(-d_ij / sigma) with sigma the median of all kept
    (directed) edge distances in the class, floored at 1e-12. A one-sample
    class yields a graph with no edges.
    """
    arr = check_matrix(vectors, "class vectors")
    n = arr.shape[0]
    idx = _member_indices(indices, n)
    if n < 2:
        return SampleGraph(
            nodes=idx,
            neighbors=np.zeros((n, 0), dtype=np.int64),
            weights=np.zeros((n, 0)),
        )
    k_eff = min(k, n - 1)
    dists = _pairwise_distances(arr)
    np.fill_diagonal(dists, np.inf)
    order = np.argsort(dists, axis=1, kind="stable")[:, :k_eff]
    kept = np.take_along_axis(dists, order, axis=1)
    sigma = max(float(np.median(kept)), 1e-12)
    return SampleGraph(nodes=idx, neighbors=order, weights=np.exp(-kept / sigma))


def select_dgpruning(vectors, spec: CoresetSpec, indices=None) -> np.ndarray:
    """Graph-suppression selection: centrality init, forward boost, greedy picks.

    1. s_i = -||x_i - center||, min-max normalized to [0, 1] within the class
       (skipped when spec.normalize_scores is False; a constant score vector
       normalizes to all 0.5).
    2. s'_i = s_i + gamma_forward * sum_j w_ij * s_j over i's neighbors.
    3. Repeatedly pick the unselected node with the highest score (ties to
       the lower index), then scale every unselected neighbor j of the pick
       by (1 - gamma_backward * w_ij), until the budget is met.
    """
    arr = check_matrix(vectors, "class vectors")
    n = arr.shape[0]
    idx = _member_indices(indices, n)
    k = budget_size(spec.rho, n)
    if n == 1:
        return idx.copy()

    center = class_center(arr)
    scores = -np.linalg.norm(arr - center, axis=1)
    if spec.normalize_scores:
        lo, hi = scores.min(), scores.max()
        scores = np.full(n, 0.5) if hi - lo <= 0 else (scores - lo) / (hi - lo)

    graph = build_knn_graph(arr, spec.knn_k)
    if graph.neighbors.shape[1]:
        scores = scores + spec.gamma_forward * (graph.weights * scores[graph.neighbors]).sum(axis=1)

    current = scores.astype(np.float64).copy()
    picked = np.zeros(n, dtype=bool)
    chosen = []
    for _ in range(k):
        masked = np.where(picked, -np.inf, current)
        i = int(np.argmax(masked))  # first max == lowest index on ties
        picked[i] = True
        chosen.append(i)
        for pos, j in enumerate(graph.neighbors[i]):
            if not picked[j]:
                current[j] *= 1.0 - spec.gamma_backward * graph.weights[i, pos]
    return np.sort(idx[np.asarray(chosen, dtype=np.int64)])


def build_coreset(dataset, spec: CoresetSpec) -> Coreset:
    """Run the configured selector per class on last-layer pooled vectors."""
    pooled = dataset.pooled()
    ids = dataset.sample_ids
    per_class: dict[int, list[str]] = {}
    for c, members in partition_by_class(dataset.labels).items():
        vectors = pooled[members]
        if spec.method == "random":
            sel = select_random(members, spec.rho, [spec.seed, c])
        elif spec.method == "moderate":
            sel = select_moderate(vectors, spec.rho, indices=members)
        else:
            sel = select_dgpruning(vectors, spec, indices=members)
        per_class[c] = [ids[i] for i in sel]
    return Coreset(per_class_ids=per_class, spec=spec, source_model=dataset.source_model)


def apply_coreset(coreset: Coreset, dataset) -> DatasetView:
    """Resolve sample ids against (possibly another model's) dataset; row-stable view."""
    pos = {sid: i for i, sid in enumerate(dataset.sample_ids)}
    missing = [
        sid for ids in coreset.per_class_ids.values() for sid in ids if sid not in pos
    ]
    if missing:
        raise ValidationError(f"coreset sample_ids absent from dataset: {missing[:10]}")
    labels = dataset.labels
    selected = []
    for c, sids in coreset.per_class_ids.items():
        for sid in sids:
            i = pos[sid]
            if int(labels[i]) != int(c):
                raise ValidationError(
                    f"sample '{sid}' has label {labels[i]} but coreset assigns class {c}"
                )
            selected.append(i)
    return dataset.view(np.asarray(sorted(selected), dtype=np.int64))


def save_coreset(coreset: Coreset, path) -> Path:
    doc = {
        "spec": asdict(coreset.spec),
        "source_model": coreset.source_model,
        "per_class": {str(c): ids for c, ids in sorted(coreset.per_class_ids.items())},
    }
    path = Path(path)
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    return path


def load_coreset(path) -> Coreset:
    path = Path(path)
    if not path.exists():
        raise ValidationError(f"coreset file not found: {path}")
    raw = json.loads(path.read_text())
    return Coreset(
        per_class_ids={int(c): list(ids) for c, ids in raw["per_class"].items()},
        spec=CoresetSpec(**raw["spec"]),
        source_model=raw.get("source_model", ""),
    )


class CoresetSelector(BaseEstimator):
    """sklearn-style wrapper: fit(X, y) records per-class selected row indices.

    Parameters mirror CoresetSpec. After fit, `per_class_indices_` maps each
    class to its sorted selected rows of X and `selected_indices_` is the
    flat sorted union.
    """

    def __init__(
        self,
        method: str = "dgpruning",
        rho: float = 0.3,
        seed: int = 0,
        knn_k: int = 5,
        gamma_forward: float = 1.0,
        gamma_backward: float = 1.0,
        normalize_scores: bool = True,
    ):
        self.method = method
        self.rho = rho
        self.seed = seed
        self.knn_k = knn_k
        self.gamma_forward = gamma_forward
        self.gamma_backward = gamma_backward
        self.normalize_scores = normalize_scores

    def _spec(self) -> CoresetSpec:
        return CoresetSpec(
            method=self.method,
            rho=self.rho,
            seed=self.seed,
            knn_k=self.knn_k,
            gamma_forward=self.gamma_forward,
            gamma_backward=self.gamma_backward,
            normalize_scores=self.normalize_scores,
        )

    def fit(self, X, y):
        X = check_matrix(X, "X")
        y = check_labels(y, X.shape[0])
        spec = self._spec()
        self.per_class_indices_ = {}
        for c, members in partition_by_class(y).items():
            if spec.method == "random":
                sel = select_random(members, spec.rho, [spec.seed, c])
            elif spec.method == "moderate":
                sel = select_moderate(X[members], spec.rho, indices=members)
            else:
                sel = select_dgpruning(X[members], spec, indices=members)
            self.per_class_indices_[c] = sel
        self.selected_indices_ = np.sort(
            np.concatenate(list(self.per_class_indices_.values()))
        )
        return self

    def fit_select(self, X, y) -> np.ndarray:
        return self.fit(X, y).selected_indices_


def _member_indices(indices, n: int) -> np.ndarray:
    if indices is None:
        return np.arange(n, dtype=np.int64)
    idx = np.asarray(indices, dtype=np.int64)
    if idx.shape != (n,):
        raise ValidationError(f"indices length {idx.size} does not match {n} vectors")
    return idx


def _average_ranks(values: np.ndarray) -> np.ndarray:
    """0-based ranks; exactly equal values share the mean of their positions."""
    order = np.argsort(values, kind="stable")
    ranks = np.empty(values.size, dtype=np.float64)
    sorted_vals = values[order]
    i = 0
    while i < values.size:
        j = i
        while j + 1 < values.size and sorted_vals[j + 1] == sorted_vals[i]:
            j += 1
        ranks[order[i : j + 1]] = 0.5 * (i + j)
        i = j + 1
    return ranks


def _pairwise_distances(x: np.ndarray, chunk: int = 256) -> np.ndarray:
    """Chunked broadcast Euclidean distances; avoids BLAS so results do not
    depend on thread count."""
    n = x.shape[0]
    out = np.empty((n, n), dtype=np.float64)
    for start in range(0, n, chunk):
        stop = min(start + chunk, n)
        diff = x[start:stop, None, :] - x[None, :, :]
        out[start:stop] = np.sqrt(np.maximum((diff * diff).sum(axis=-1), 0.0))
    return out
