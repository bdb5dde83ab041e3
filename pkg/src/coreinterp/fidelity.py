"""Classification fidelity of interpretation maps through the frozen head.

Maps (or perturbed tensors) are globally average pooled and pushed through
the linear head; accuracy against labels tells whether the extracted
features stay relevant to the model. For unit-based interpretation the
identified channels are zeroed and the accuracy drop is tracked.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .activation_store import ClassifierHead
from .interp_vebi import RelevantUnit
from .validation import ValidationError, check_labels, check_tensor4


@dataclass
class FidelityReport:
    accuracy: float
    baseline_accuracy: float
    accuracy_drop: float
    n_evaluated: int
    condition: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "accuracy": self.accuracy,
            "baseline_accuracy": self.baseline_accuracy,
            "accuracy_drop": self.accuracy_drop,
            "n_evaluated": self.n_evaluated,
            "condition": self.condition,
        }


def classify(maps, head: ClassifierHead, labels) -> tuple[np.ndarray, float]:
    """argmax(head.weights @ GAP(maps) + bias) per sample; ties go to the lower class.

    Returns (predictions, accuracy).
    """
    data = check_tensor4(maps, "maps")
    labels = check_labels(labels, data.shape[0])
    if data.shape[3] != head.input_depth:
        raise ValidationError(
            f"depth mismatch: maps depth {data.shape[3]}, head expects {head.input_depth}"
        )
    pooled = data.astype(np.float64).mean(axis=(1, 2))
    logits = pooled @ head.weights.T + head.bias
    preds = np.argmax(logits, axis=1)  # first max == lowest class index
    return preds, float(np.mean(preds == labels))


def perturb_and_classify(
    tensor,
    labels,
    units: list[RelevantUnit],
    head: ClassifierHead,
    condition: dict | None = None,
) -> FidelityReport:
    """Zero the identified channels (head input layer only) and track the drop."""
    data = check_tensor4(tensor, "tensor")
    filters = sorted({u.filter_index for u in units if u.layer_id == head.input_layer_id})
    if filters and filters[-1] >= data.shape[3]:
        raise ValidationError(
            f"filter index {filters[-1]} out of range for depth {data.shape[3]}"
        )
    _, baseline = classify(data, head, labels)
    perturbed = np.array(data, copy=True)
    if filters:
        perturbed[..., filters] = 0.0
    _, accuracy = classify(perturbed, head, labels)
    return FidelityReport(
        accuracy=accuracy,
        baseline_accuracy=baseline,
        accuracy_drop=baseline - accuracy,
        n_evaluated=data.shape[0],
        condition=condition or {},
    )


def write_accuracy_csv(rows: list[dict], path) -> Path:
    """CSV of (rho, method, coreset, accuracy) rows for budget-vs-accuracy curves."""
    path = Path(path)
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=["rho", "method", "coreset", "accuracy"])
        writer.writeheader()
        for row in rows:
            writer.writerow({k: row[k] for k in writer.fieldnames})
    return path
