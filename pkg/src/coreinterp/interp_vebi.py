"""Sparse identification of relevant convolutional units across layers.

Per class, a one-vs-rest lasso over the concatenated per-layer pooled
activations picks units (layer, filter) with nonzero weight. Unit sets
from two data budgets are aligned per layer by relevance weight before
similarity, and overlap is summarized as intersection coverage.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple

import numpy as np

from .validation import ComputationError, ValidationError, check_matrix, check_tensor4


class RelevantUnit(NamedTuple):
    layer_id: str
    filter_index: int
    weight: float


@dataclass
class RelevantUnits:
    """Method output: per class, units sorted by |weight| descending."""

    per_class: dict[int, list[RelevantUnit]]
    mu: float | dict[int, float]
    dropped_columns: list[tuple[str, int]] = field(default_factory=list)

    def unit_set(self, c: int) -> set[tuple[str, int]]:
        return {(u.layer_id, u.filter_index) for u in self.per_class.get(c, [])}


def build_unit_matrix(view) -> tuple[np.ndarray, list[tuple[str, int]]]:
    """Concatenate per-layer pooled vectors in manifest layer order.

    Returns the [n, D_total] matrix and the column → (layer_id, filter)
    map, which is total and invertible.
    """
    blocks = []
    columns: list[tuple[str, int]] = []
    for layer_id in view.layer_ids:
        pooled = view.pooled(layer_id)
        blocks.append(pooled)
        columns.extend((layer_id, f) for f in range(pooled.shape[1]))
    return np.hstack(blocks), columns


def soft_threshold(value: float, mu: float) -> float:
    if value > mu:
        return value - mu
    if value < -mu:
        return value + mu
    return 0.0


def solve_lasso(
    psi,
    y,
    mu: float,
    *,
    max_sweeps: int = 1000,
    tol: float = 1e-6,
    kkt_tol: float = 1e-6,
) -> np.ndarray:
    """Cyclic coordinate descent for min_w 0.5*||psi w - y||^2 + mu*||w||_1.

    Sweeps stop once the largest coordinate change falls below `tol` and the
    KKT residual is within `kkt_tol`, or after `max_sweeps`.
    """
    psi = check_matrix(psi, "psi")
    y = np.asarray(y, dtype=np.float64).ravel()
    if y.shape[0] != psi.shape[0]:
        raise ValidationError("psi and y disagree on sample count")
    if not np.all(np.isfinite(y)):
        raise ValidationError("y contains non-finite values")
    if mu < 0:
        raise ValidationError("mu must be >= 0")

    n, d = psi.shape
    col_sq = (psi**2).sum(axis=0)
    w = np.zeros(d)
    resid = y.copy()  # y - psi @ w
    for _ in range(max_sweeps):
        max_delta = 0.0
        for j in range(d):
            if col_sq[j] <= 0.0:
                continue
            old = w[j]
            rho = psi[:, j] @ resid + col_sq[j] * old
            new = soft_threshold(rho, mu) / col_sq[j]
            if new != old:
                resid += psi[:, j] * (old - new)
                w[j] = new
                max_delta = max(max_delta, abs(new - old))
        if max_delta < tol and kkt_residual(psi, y, w, mu) <= kkt_tol:
            break
    return w


def kkt_residual(psi, y, w, mu: float) -> float:
    """Max violation of the lasso stationarity conditions (0 at the optimum)."""
    g = psi.T @ (psi @ w - y)
    active = w != 0
    viol_zero = np.maximum(np.abs(g[~active]) - mu, 0.0)
    viol_active = np.abs(g[active] + mu * np.sign(w[active]))
    parts = [viol_zero, viol_active]
    return float(max((p.max() for p in parts if p.size), default=0.0))


def identify_units(
    view, mu: float | None = None, mu_scale: float = 0.05
) -> RelevantUnits:
    """One-vs-rest lasso per class on standardized unit columns.

    Columns are standardized to zero mean / unit variance; zero-variance
    columns are dropped and recorded. When `mu` is None it is derived per
    class as mu_scale * ||psi^T y||_inf (scale-free default).
    """
    labels = view.labels
    classes = sorted(int(c) for c in np.unique(labels))
    if len(classes) < 2:
        raise ValidationError("unit identification needs at least 2 classes")

    psi, columns = build_unit_matrix(view)
    means = psi.mean(axis=0)
    stds = psi.std(axis=0)
    keep = stds > 1e-12
    dropped = [columns[j] for j in np.flatnonzero(~keep)]
    z = (psi[:, keep] - means[keep]) / stds[keep]
    kept_columns = [columns[j] for j in np.flatnonzero(keep)]

    per_class: dict[int, list[RelevantUnit]] = {}
    mu_used: dict[int, float] = {}
    for c in classes:
        y = (labels == c).astype(np.float64)
        mu_c = mu if mu is not None else mu_scale * float(np.abs(z.T @ y).max())
        w = solve_lasso(z, y, mu_c)
        mu_used[c] = mu_c
        nz = np.flatnonzero(w)
        if nz.size == 0:
            warnings.warn(f"class {c}: no units selected at mu={mu_c:.4g}", stacklevel=2)
            per_class[c] = []
            continue
        order = nz[np.argsort(-np.abs(w[nz]), kind="stable")]
        per_class[c] = [
            RelevantUnit(kept_columns[j][0], kept_columns[j][1], float(w[j])) for j in order
        ]
    return RelevantUnits(
        per_class=per_class,
        mu=mu if mu is not None else mu_used,
        dropped_columns=dropped,
    )


def align_unit_sets(
    a: list[RelevantUnit], b: list[RelevantUnit]
) -> tuple[list[RelevantUnit], list[RelevantUnit]]:
    """Trim both sides to equal per-layer unit counts by |weight|.

    Layers present on only one side are dropped; within a shared layer the
    larger side keeps its top min(count_a, count_b) units by |weight| (ties
    to the lower filter index). Raises ComputationError when no layer is
    shared, which excludes the class from similarity.
    """
    if not a or not b:
        raise ComputationError("alignment needs a nonempty unit list on both sides")
    by_layer_a = _group_by_layer(a)
    by_layer_b = _group_by_layer(b)
    shared = sorted(set(by_layer_a) & set(by_layer_b))
    if not shared:
        raise ComputationError("no layer has relevant units on both sides")
    out_a: list[RelevantUnit] = []
    out_b: list[RelevantUnit] = []
    for layer in shared:
        keep = min(len(by_layer_a[layer]), len(by_layer_b[layer]))
        out_a.extend(_top_by_weight(by_layer_a[layer], keep))
        out_b.extend(_top_by_weight(by_layer_b[layer], keep))
    return out_a, out_b


def intersection_coverage(
    a: RelevantUnits, b: RelevantUnits, mode: str = "jaccard"
) -> dict[int, float | None]:
    """Per-class overlap percentage of (layer, filter) identities.

    "jaccard" uses 100*|a∩b|/|a∪b|; "relative_to_b" uses 100*|a∩b|/|b|.
    Classes where the denominator is empty report None (undefined).
    """
    if mode not in ("jaccard", "relative_to_b"):
        raise ValidationError(f"unknown coverage mode '{mode}'")
    out: dict[int, float | None] = {}
    for c in sorted(set(a.per_class) | set(b.per_class)):
        sa, sb = a.unit_set(c), b.unit_set(c)
        denom = len(sa | sb) if mode == "jaccard" else len(sb)
        out[c] = None if denom == 0 else 100.0 * len(sa & sb) / denom
    return out


def vebi_maps(tensor, units: list[RelevantUnit], layer_id: str) -> np.ndarray:
    """Channel-select the layer tensor at the units' filter indices (d' = count)."""
    data = check_tensor4(tensor, f"tensor '{layer_id}'")
    filters = sorted(u.filter_index for u in units if u.layer_id == layer_id)
    if not filters:
        raise ValidationError(f"no units reference layer '{layer_id}'")
    if filters[-1] >= data.shape[3]:
        raise ValidationError(
            f"filter index {filters[-1]} out of range for depth {data.shape[3]}"
        )
    return data[..., filters]


def save_units(units: RelevantUnits, path, extra: dict | None = None) -> Path:
    doc = {
        "mu": units.mu if isinstance(units.mu, float) else {str(c): v for c, v in units.mu.items()},
        "classes": {
            str(c): [[u.layer_id, u.filter_index, u.weight] for u in lst]
            for c, lst in sorted(units.per_class.items())
        },
        "dropped_columns": [[layer, f] for layer, f in units.dropped_columns],
    }
    if extra:
        doc.update(extra)
    path = Path(path)
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    return path


def load_units(path) -> RelevantUnits:
    raw = json.loads(Path(path).read_text())
    mu = raw["mu"]
    if isinstance(mu, dict):
        mu = {int(c): float(v) for c, v in mu.items()}
    return RelevantUnits(
        per_class={
            int(c): [RelevantUnit(layer, int(f), float(w)) for layer, f, w in lst]
            for c, lst in raw["classes"].items()
        },
        mu=mu,
        dropped_columns=[(layer, int(f)) for layer, f in raw.get("dropped_columns", [])],
    )


def _group_by_layer(units: list[RelevantUnit]) -> dict[str, list[RelevantUnit]]:
    grouped: dict[str, list[RelevantUnit]] = {}
    for u in units:
        grouped.setdefault(u.layer_id, []).append(u)
    return grouped


def _top_by_weight(units: list[RelevantUnit], keep: int) -> list[RelevantUnit]:
    return sorted(units, key=lambda u: (-abs(u.weight), u.filter_index))[:keep]
