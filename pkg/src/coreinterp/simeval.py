"""Similarity protocol between interpretation maps from two data budgets.

Flattened maps are compared with a partial-whitening shape metric: both
sides are column-centered, interpolated toward whitened coordinates, and
optimally aligned by an orthogonal transform; the angular distance lies in
[0, pi]. Per-class distances average into a single score, and the score's
mean/std across budgets summarizes robustness to dataset size.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .validation import ComputationError, ValidationError, check_matrix

ROBUSTNESS_BUDGETS = (0.10, 0.20, 0.30, 0.40, 0.50)


@dataclass(frozen=True)
class ShapeMetricConfig:
    alpha: float = 0.5  # 0 = full whitening, 1 = raw (centered) coordinates
    max_rows: int = 20000
    seed: int = 0
    ridge: float | None = None  # None → 1e-8 * trace(cov) / width, per matrix

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ValidationError("alpha must be in [0, 1]")
        if self.max_rows < 1:
            raise ValidationError("max_rows must be positive")
        if self.ridge is not None and self.ridge <= 0:
            raise ValidationError("ridge must be positive when given")


@dataclass
class SimilarityReport:
    per_class_distance: dict[int, float]
    phi_mean: float
    budget_rho: float | None = None
    interpretation: str = ""
    coreset_method: str = ""
    model: str = ""
    skipped_classes: dict[int, str] = field(default_factory=dict)
    config: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "per_class_distance": {str(c): v for c, v in sorted(self.per_class_distance.items())},
            "phi_mean": self.phi_mean,
            "budget_rho": self.budget_rho,
            "interpretation": self.interpretation,
            "coreset_method": self.coreset_method,
            "model": self.model,
            "skipped_classes": {str(c): v for c, v in sorted(self.skipped_classes.items())},
            "config": self.config,
        }


@dataclass
class RobustnessReport:
    """Mean and population std of the class-averaged distance across budgets."""

    entries: list[dict]

    def to_dict(self) -> dict:
        return {"entries": self.entries}


def flatten_maps(maps) -> np.ndarray:
    """[n, h', w', d'] → [(n*h'*w'), d'], sample-major then spatial row-major."""
    arr = np.asarray(maps)
    if arr.ndim == 2:
        return arr
    if arr.ndim != 4:
        raise ValidationError(f"maps must be 4-D (or already flat 2-D), got {arr.shape}")
    n, h, w, d = arr.shape
    return arr.reshape(n * h * w, d)


def angular_shape_distance(X, Y, cfg: ShapeMetricConfig | None = None) -> float:
    """Partial-whitening angular distance between two row-aligned matrices.

    The narrower matrix is zero-padded to equal width; both are column
    centered, mapped through (1-alpha)*(cov + ridge I)^(-1/2) + alpha*I,
    and aligned by the orthogonal transform maximizing the Frobenius inner
    product (via SVD). Rows beyond cfg.max_rows are subsampled with one
    seeded index set shared by both sides.
    """
    cfg = cfg or ShapeMetricConfig()
    X = check_matrix(X, "X")
    Y = check_matrix(Y, "Y")
    if X.shape[0] != Y.shape[0]:
        raise ValidationError("X and Y must have the same row count")
    width = max(X.shape[1], Y.shape[1])
    if cfg.max_rows < width:
        raise ValidationError(f"max_rows={cfg.max_rows} is below the column count {width}")
    X = _pad_columns(X, width)
    Y = _pad_columns(Y, width)
    n = X.shape[0]
    if cfg.max_rows < n:
        rows = np.sort(
            np.random.default_rng(cfg.seed).choice(n, size=cfg.max_rows, replace=False)
        )
        X, Y = X[rows], Y[rows]
        n = cfg.max_rows
    if n <= width:
        raise ValidationError(f"need more rows ({n}) than columns ({width})")

    Xc = X - X.mean(axis=0)
    Yc = Y - Y.mean(axis=0)
    MX = Xc @ _whitener(Xc, cfg)
    MY = Yc @ _whitener(Yc, cfg)
    norm_x = np.linalg.norm(MX)
    norm_y = np.linalg.norm(MY)
    # Optimal orthogonal alignment contributes the nuclear norm of MX^T MY.
    nuclear = np.linalg.svd(MX.T @ MY, compute_uv=False).sum()
    cosine = np.clip(nuclear / (norm_x * norm_y), -1.0, 1.0)
    return float(np.arccos(cosine))


def phi_average(
    maps_pairs: dict[int, object],
    cfg: ShapeMetricConfig | None = None,
    *,
    budget_rho: float | None = None,
    interpretation: str = "",
    coreset_method: str = "",
    model: str = "",
) -> SimilarityReport:
    """Average per-class angular distances into one score.

    `maps_pairs` maps class → (Z, Z') or class → [(Z, Z'), ...]; multi-pair
    classes (one pair per shared layer) use the mean of their pair
    distances. Degenerate classes are skipped and reported.
    """
    cfg = cfg or ShapeMetricConfig()
    distances: dict[int, float] = {}
    skipped: dict[int, str] = {}
    for c, pairs in sorted(maps_pairs.items()):
        if isinstance(pairs, tuple):
            pairs = [pairs]
        try:
            vals = [
                angular_shape_distance(flatten_maps(zx), flatten_maps(zy), cfg)
                for zx, zy in pairs
            ]
        except ComputationError as exc:
            skipped[int(c)] = str(exc)
            continue
        if not vals:
            skipped[int(c)] = "no map pairs"
            continue
        distances[int(c)] = sum(vals) / len(vals)
    if not distances:
        raise ComputationError("all classes were skipped; no similarity to report")
    report = SimilarityReport(
        per_class_distance=distances,
        phi_mean=sum(distances.values()) / len(distances),
        budget_rho=budget_rho,
        interpretation=interpretation,
        coreset_method=coreset_method,
        model=model,
        skipped_classes=skipped,
        config={
            "alpha": cfg.alpha,
            "max_rows": cfg.max_rows,
            "seed": cfg.seed,
            "ridge": cfg.ridge,
        },
    )
    return report


def robustness_summary(
    reports: list[SimilarityReport],
    expected_budgets: tuple[float, ...] = ROBUSTNESS_BUDGETS,
) -> RobustnessReport:
    """Group reports by condition; mean and population std over budgets."""
    groups: dict[tuple[str, str, str], dict[float, float]] = {}
    for rep in reports:
        key = (rep.interpretation, rep.coreset_method, rep.model)
        groups.setdefault(key, {})[rep.budget_rho] = rep.phi_mean
    entries = []
    for (interp, method, model), by_rho in sorted(groups.items()):
        budgets = sorted(by_rho)
        if len(budgets) < 2:
            raise ValidationError(
                f"robustness needs >= 2 budgets for ({interp}, {method}, {model})"
            )
        values = [by_rho[b] for b in budgets]
        mean = sum(values) / len(values)
        std = (sum((v - mean) ** 2 for v in values) / len(values)) ** 0.5
        missing = [b for b in expected_budgets if not _contains(budgets, b)]
        entries.append(
            {
                "interpretation": interp,
                "coreset_method": method,
                "model": model,
                "budgets": budgets,
                "missing_budgets": missing,
                "phi_mean": mean,
                "phi_std": std,
            }
        )
    return RobustnessReport(entries=entries)


def render_table(report: RobustnessReport) -> str:
    """Aligned text table: one block per model, selectors x interpretations."""
    models = sorted({e["model"] for e in report.entries})
    interps = sorted({e["interpretation"] for e in report.entries})
    methods = sorted({e["coreset_method"] for e in report.entries})
    cell = {
        (e["model"], e["coreset_method"], e["interpretation"]): f"{e['phi_mean']:.3e}±{e['phi_std']:.2e}"
        for e in report.entries
    }
    width = max(
        [len(s) for s in cell.values()] + [len(s) for s in interps] + [len(s) for s in methods] + [12]
    )
    lines = []
    for model in models:
        lines.append(f"== {model} ==")
        header = " | ".join([f"{'selection':<{width}}"] + [f"{i:<{width}}" for i in interps])
        lines.append(header)
        lines.append("-" * len(header))
        for method in methods:
            row = [f"{method:<{width}}"]
            for interp in interps:
                row.append(f"{cell.get((model, method, interp), '—'):<{width}}")
            lines.append(" | ".join(row))
        lines.append("")
    return "\n".join(lines)


def save_report(report, path) -> Path:
    path = Path(path)
    path.write_text(json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n")
    return path


def _pad_columns(mat: np.ndarray, width: int) -> np.ndarray:
    if mat.shape[1] == width:
        return mat
    out = np.zeros((mat.shape[0], width))
    out[:, : mat.shape[1]] = mat
    return out


def _whitener(centered: np.ndarray, cfg: ShapeMetricConfig) -> np.ndarray:
    n, width = centered.shape
    if np.linalg.norm(centered) == 0.0:
        raise ComputationError("degenerate representation: zero norm after centering")
    cov = centered.T @ centered / (n - 1)
    # 1e-8 keeps full whitening within 1e-4 of exact invariance for maps with
    # condition numbers up to ~1e4 while still flooring rank-deficient axes.
    ridge = cfg.ridge if cfg.ridge is not None else 1e-8 * np.trace(cov) / width
    ridge = max(ridge, 1e-30)
    vals, vecs = np.linalg.eigh(cov + ridge * np.eye(width))
    vals = np.maximum(vals, ridge)
    inv_sqrt = (vecs * vals**-0.5) @ vecs.T
    return (1.0 - cfg.alpha) * inv_sqrt + cfg.alpha * np.eye(width)


def _contains(budgets: list[float], b: float, tol: float = 1e-9) -> bool:
    return any(abs(x - b) <= tol for x in budgets)
