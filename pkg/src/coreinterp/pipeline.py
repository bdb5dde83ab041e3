"""Pipeline plumbing shared by the CLI: feature fitting, maps, reports.

A Features bundle holds one interpretation method's output (per-class NMF
models, relevant units, or a topic model) together with provenance: the
hash of everything that determines the numbers (dataset fingerprint,
coreset content, hyperparameters, seed). Equal hashes imply equal outputs.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .activation_store import partition_by_class
from .coreset import Coreset, apply_coreset, load_coreset
from .fidelity import FidelityReport, classify, perturb_and_classify
from .interp_ice import ActivationNmf, fit_nmf, ice_maps, load_nmf, save_nmf
from .interp_topic import TopicModel, fit_topics, load_topic_model, save_topic_model, topic_maps, topic_reconstruct
from .interp_vebi import RelevantUnits, align_unit_sets, identify_units, load_units, save_units, vebi_maps
from .simeval import ShapeMetricConfig, SimilarityReport, phi_average
from .validation import ComputationError, ValidationError

INTERPRETATIONS = ("ice", "topic", "vebi")

DEFAULT_PARAMS = {
    "ice": {"r": 8, "max_iter": 200, "tol": 1e-4},
    "topic": {"m": 10, "l": 64, "epochs": 20, "lr": 1e-2, "batch_size": 64, "init_noise": 0.01},
    "vebi": {"mu": None, "mu_scale": 0.05},
}


@dataclass
class Features:
    method: str
    params: dict
    seed: int
    provenance: dict = field(default_factory=dict)
    ice_models: dict[int, ActivationNmf] | None = None
    units: RelevantUnits | None = None
    topic: TopicModel | None = None


def canonical_hash(obj) -> str:
    return hashlib.sha256(
        json.dumps(obj, sort_keys=True, separators=(",", ":")).encode()
    ).hexdigest()


def dataset_fingerprint(dataset) -> str:
    m = dataset.manifest if hasattr(dataset, "manifest") else dataset.base.manifest
    doc = {
        "sample_ids": m.sample_ids,
        "labels": [int(v) for v in m.labels],
        "layer_ids": m.layer_ids,
        "source_model": m.source_model,
        "metadata": m.metadata,
    }
    return canonical_hash(doc)


def coreset_fingerprint(coreset: Coreset) -> str:
    from dataclasses import asdict

    return canonical_hash(
        {
            "spec": asdict(coreset.spec),
            "source_model": coreset.source_model,
            "per_class": {str(c): ids for c, ids in sorted(coreset.per_class_ids.items())},
        }
    )


def resolve_params(method: str, params: dict | None) -> dict:
    if method not in INTERPRETATIONS:
        raise ValidationError(f"unknown interpretation method '{method}'")
    merged = dict(DEFAULT_PARAMS[method])
    for key, value in (params or {}).items():
        if key not in merged:
            raise ValidationError(f"unknown {method} parameter '{key}'")
        merged[key] = value
    return merged


def fit_features(view, method: str, params: dict | None = None, seed: int = 0) -> Features:
    """Fit one interpretation method on a dataset view (full data or coreset)."""
    params = resolve_params(method, params)
    feat = Features(method=method, params=params, seed=seed)
    if method == "ice":
        models: dict[int, ActivationNmf] = {}
        tensor = view.tensor()
        for c, members in partition_by_class(view.labels).items():
            block = tensor[members]
            v = np.maximum(
                block.reshape(-1, block.shape[3]).astype(np.float64), 0.0
            )
            models[c] = fit_nmf(v, params["r"], params["max_iter"], params["tol"], seed)
        feat.ice_models = models
    elif method == "vebi":
        feat.units = identify_units(view, mu=params["mu"], mu_scale=params["mu_scale"])
    else:
        feat.topic = fit_topics(
            view,
            view.head(),
            m=params["m"],
            l=params["l"],
            epochs=params["epochs"],
            lr=params["lr"],
            seed=seed,
            batch_size=params["batch_size"],
            init_noise=params["init_noise"],
        )
    return feat


def save_features(feat: Features, directory) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    if feat.method == "ice":
        for c, model in sorted(feat.ice_models.items()):
            save_nmf(model, directory, c)
    elif feat.method == "vebi":
        save_units(feat.units, directory / "units.json")
    else:
        save_topic_model(feat.topic, directory)
    doc = {
        "method": feat.method,
        "params": feat.params,
        "seed": feat.seed,
        "provenance": feat.provenance,
    }
    if feat.method == "ice":
        doc["classes"] = sorted(feat.ice_models)
    path = directory / "features.json"
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    return path


def load_features(directory, head=None) -> Features:
    directory = Path(directory)
    meta_path = directory / "features.json"
    if not meta_path.exists():
        raise ValidationError(f"not a features directory: {directory}")
    meta = json.loads(meta_path.read_text())
    feat = Features(
        method=meta["method"],
        params=meta["params"],
        seed=meta["seed"],
        provenance=meta.get("provenance", {}),
    )
    if feat.method == "ice":
        feat.ice_models = {c: load_nmf(directory, c) for c in meta["classes"]}
    elif feat.method == "vebi":
        feat.units = load_units(directory / "units.json")
    else:
        feat.topic = load_topic_model(directory, head=head)
    return feat


def maps_pairs(dataset, feat_full: Features, feat_coreset: Features):
    """Per-class (Z, Z') interpretation map pairs on the full dataset's tensors.

    For unit-based features the sets are aligned per layer first and one
    pair per shared layer is produced; classes without a shared layer (or
    with an empty side) are skipped with a reason.
    """
    if feat_full.method != feat_coreset.method:
        raise ValidationError("cannot compare features from different methods")
    method = feat_full.method
    pairs: dict[int, object] = {}
    skipped: dict[int, str] = {}
    members_by_class = partition_by_class(dataset.labels)
    if method == "vebi":
        for c, members in members_by_class.items():
            try:
                full_units, cor_units = align_unit_sets(
                    feat_full.units.per_class.get(c, []),
                    feat_coreset.units.per_class.get(c, []),
                )
            except ComputationError as exc:
                skipped[c] = str(exc)
                continue
            layer_pairs = []
            for layer in sorted({u.layer_id for u in full_units}):
                tensor = dataset.tensor(layer)[members]
                layer_pairs.append(
                    (vebi_maps(tensor, full_units, layer), vebi_maps(tensor, cor_units, layer))
                )
            pairs[c] = layer_pairs
        return pairs, skipped
    tensor = dataset.tensor()
    for c, members in members_by_class.items():
        block = tensor[members]
        if method == "ice":
            pairs[c] = (
                ice_maps(block, feat_full.ice_models[c]),
                ice_maps(block, feat_coreset.ice_models[c]),
            )
        else:
            pairs[c] = (
                topic_maps(block, feat_full.topic),
                topic_maps(block, feat_coreset.topic),
            )
    return pairs, skipped


def similarity_report(
    dataset,
    feat_full: Features,
    feat_coreset: Features,
    cfg: ShapeMetricConfig | None = None,
    *,
    budget_rho: float | None = None,
    coreset_method: str = "",
) -> SimilarityReport:
    pairs, skipped = maps_pairs(dataset, feat_full, feat_coreset)
    if not pairs:
        raise ComputationError("all classes were skipped; no similarity to report")
    report = phi_average(
        pairs,
        cfg,
        budget_rho=budget_rho,
        interpretation=feat_full.method,
        coreset_method=coreset_method,
        model=dataset.source_model,
    )
    report.skipped_classes.update(skipped)
    return report


def fidelity_report(dataset, feat: Features, condition: dict | None = None) -> FidelityReport:
    """Accuracy through the frozen head using this feature bundle's maps.

    ice/topic: classify reconstructed maps. vebi: zero the identified
    last-layer units per class and report the perturbed accuracy.
    """
    head = dataset.head()
    labels = dataset.labels
    tensor = dataset.tensor(head.input_layer_id)
    _, baseline = classify(tensor, head, labels)
    members_by_class = partition_by_class(labels)

    if feat.method == "vebi":
        correct = 0
        for c, members in members_by_class.items():
            units = [
                u
                for u in feat.units.per_class.get(c, [])
                if u.layer_id == head.input_layer_id
            ]
            rep = perturb_and_classify(tensor[members], labels[members], units, head)
            correct += round(rep.accuracy * members.size)
        accuracy = correct / labels.size
    elif feat.method == "ice":
        correct = 0
        for c, members in members_by_class.items():
            maps = ice_maps(tensor[members], feat.ice_models[c])
            preds, _ = classify(maps, head, labels[members])
            correct += int((preds == labels[members]).sum())
        accuracy = correct / labels.size
    else:
        maps = topic_maps(tensor, feat.topic)
        recon = topic_reconstruct(maps, feat.topic)
        _, accuracy = classify(recon, head, labels)

    return FidelityReport(
        accuracy=float(accuracy),
        baseline_accuracy=float(baseline),
        accuracy_drop=float(baseline - accuracy),
        n_evaluated=int(labels.size),
        condition=condition or {},
    )


def features_provenance(
    dataset, method: str, params: dict, seed: int, coreset: Coreset | None
) -> dict:
    prov = {
        "dataset_sha": dataset_fingerprint(dataset),
        "seed": seed,
        "coreset": None,
    }
    if coreset is not None:
        prov["coreset"] = {
            "method": coreset.spec.method,
            "rho": coreset.spec.rho,
            "seed": coreset.spec.seed,
            "source_model": coreset.source_model,
            "sha": coreset_fingerprint(coreset),
        }
    prov["config_hash"] = canonical_hash(
        {
            "dataset_sha": prov["dataset_sha"],
            "coreset": prov["coreset"],
            "method": method,
            "params": params,
            "seed": seed,
        }
    )
    return prov


def view_for_coreset(dataset, coreset_path) -> tuple:
    coreset = load_coreset(coreset_path)
    return coreset, apply_coreset(coreset, dataset)
