"""Config-driven command line for the whole pipeline.

Subcommands: select, interpret, evaluate, robustness, visualize, transfer.
A JSON config file supplies defaults; flags (and generic --set key=value
overrides) take precedence. Exit codes: 0 success, 2 validation error,
3 computation error, 1 unexpected failure.
"""

from __future__ import annotations

import argparse
import copy
import json
import sys
from pathlib import Path

from . import pipeline
from .activation_store import load_dataset
from .coreset import CoresetSpec, apply_coreset, build_coreset, load_coreset, save_coreset
from .fidelity import write_accuracy_csv
from .interp_ice import ice_maps
from .interp_topic import topic_maps
from .interp_vebi import vebi_maps
from .simeval import (
    ROBUSTNESS_BUDGETS,
    ShapeMetricConfig,
    render_table,
    robustness_summary,
    save_report,
)
from .validation import ComputationError, ValidationError
from .viz import compose_heatmap, compose_panel, overlay

DEFAULT_CONFIG = {
    "dataset": None,
    "output_dir": "outputs",
    "seed": 0,
    "coreset": {
        "methods": ["random", "moderate", "dgpruning"],
        "budgets": [0.05, 0.10, 0.20, 0.30, 0.40, 0.50, 0.95],
        "knn_k": 5,
        "gamma_forward": 1.0,
        "gamma_backward": 1.0,
        "normalize_scores": True,
    },
    "interpretation": {"method": "ice", "params": {}},
    "shape_metric": {"alpha": 0.5, "max_rows": 20000, "seed": 0, "ridge": None},
    "visualize": {"k": 5, "images": None},
}


def load_config(path: str | None, sets: list[str] | None = None, **flags) -> dict:
    cfg = copy.deepcopy(DEFAULT_CONFIG)
    if path:
        p = Path(path)
        if not p.exists():
            raise ValidationError(f"config file not found: {p}")
        try:
            user = json.loads(p.read_text())
        except json.JSONDecodeError as exc:
            raise ValidationError(f"config does not parse: {exc}") from exc
        _merge(cfg, user)
    for item in sets or []:
        if "=" not in item:
            raise ValidationError(f"--set expects key=value, got '{item}'")
        key, _, value = item.partition("=")
        _set_dotted(cfg, key.strip(), _parse_value(value))
    for key, value in flags.items():
        if value is not None:
            _set_dotted(cfg, key, value)
    _validate_config(cfg)
    return cfg


def _merge(base: dict, extra: dict) -> None:
    for key, value in extra.items():
        if isinstance(value, dict) and isinstance(base.get(key), dict):
            _merge(base[key], value)
        else:
            base[key] = value


def _set_dotted(cfg: dict, dotted: str, value) -> None:
    node = cfg
    parts = dotted.split(".")
    for part in parts[:-1]:
        node = node.setdefault(part, {})
    node[parts[-1]] = value


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def _validate_config(cfg: dict) -> None:
    for rho in cfg["coreset"]["budgets"]:
        if not 0.0 < float(rho) < 1.0:
            raise ValidationError(f"budget {rho} outside (0, 1)")
    for m in cfg["coreset"]["methods"]:
        if m not in ("random", "moderate", "dgpruning"):
            raise ValidationError(f"unknown selection method '{m}'")
    if cfg["interpretation"]["method"] not in pipeline.INTERPRETATIONS:
        raise ValidationError(
            f"unknown interpretation method '{cfg['interpretation']['method']}'"
        )


def _require_dataset(cfg: dict, override: str | None = None):
    path = override or cfg["dataset"]
    if not path:
        raise ValidationError("no dataset given (config key 'dataset' or --dataset)")
    return load_dataset(path)


def _shape_config(cfg: dict) -> ShapeMetricConfig:
    sm = cfg["shape_metric"]
    return ShapeMetricConfig(
        alpha=sm["alpha"], max_rows=sm["max_rows"], seed=sm["seed"], ridge=sm["ridge"]
    )


def _spec_for(cfg: dict, method: str, rho: float) -> CoresetSpec:
    cs = cfg["coreset"]
    return CoresetSpec(
        method=method,
        rho=float(rho),
        seed=int(cfg["seed"]),
        knn_k=int(cs["knn_k"]),
        gamma_forward=float(cs["gamma_forward"]),
        gamma_backward=float(cs["gamma_backward"]),
        normalize_scores=bool(cs["normalize_scores"]),
    )


def _coreset_path(out: Path, model: str, method: str, rho: float) -> Path:
    return out / model / "coresets" / f"coreset_{method}_rho{rho:.2f}.json"


def _features_dir(out: Path, model: str, interp: str, coreset=None, source_model=None) -> Path:
    if coreset is None:
        return out / model / interp / "full"
    selector = coreset.spec.method
    if source_model and coreset.source_model and coreset.source_model != source_model:
        selector = f"{selector}_from_{coreset.source_model}"
    return out / model / interp / selector / f"rho{coreset.spec.rho:.2f}"


# -- commands ----------------------------------------------------------------


def cmd_select(args) -> int:
    cfg = load_config(args.config, args.set, dataset=args.dataset, output_dir=args.output_dir)
    dataset = _require_dataset(cfg)
    out = Path(cfg["output_dir"])
    written = []
    for method in cfg["coreset"]["methods"]:
        for rho in cfg["coreset"]["budgets"]:
            spec = _spec_for(cfg, method, rho)
            coreset = build_coreset(dataset, spec)
            path = _coreset_path(out, dataset.source_model, method, float(rho))
            path.parent.mkdir(parents=True, exist_ok=True)
            extra = {
                "config_hash": pipeline.canonical_hash(
                    {
                        "dataset_sha": pipeline.dataset_fingerprint(dataset),
                        "spec": spec.__dict__,
                    }
                )
            }
            save_coreset(coreset, path)
            doc = json.loads(path.read_text())
            doc.update(extra)
            path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
            written.append(path)
    for path in written:
        print(path)
    return 0


def _interpret(cfg: dict, dataset, coreset_path: str | None) -> Path:
    interp = cfg["interpretation"]["method"]
    params = pipeline.resolve_params(interp, cfg["interpretation"]["params"])
    out = Path(cfg["output_dir"])
    coreset = None
    view = dataset
    if coreset_path:
        coreset = load_coreset(coreset_path)
        view = apply_coreset(coreset, dataset)
    feat = pipeline.fit_features(view, interp, params, seed=int(cfg["seed"]))
    feat.provenance = pipeline.features_provenance(
        dataset, interp, params, int(cfg["seed"]), coreset
    )
    directory = _features_dir(out, dataset.source_model, interp, coreset, dataset.source_model)
    pipeline.save_features(feat, directory)
    return directory


def cmd_interpret(args) -> int:
    cfg = load_config(args.config, args.set, dataset=args.dataset, output_dir=args.output_dir)
    dataset = _require_dataset(cfg)
    directory = _interpret(cfg, dataset, args.coreset)
    print(directory)
    return 0


def _evaluate(cfg: dict, dataset, full_dir, coreset_dir) -> dict[str, Path]:
    head = dataset.head()
    feat_full = pipeline.load_features(full_dir, head=head)
    feat_cor = pipeline.load_features(coreset_dir, head=head)
    cor_info = feat_cor.provenance.get("coreset") or {}
    rho = cor_info.get("rho")
    method = cor_info.get("method", "")
    sim = pipeline.similarity_report(
        dataset,
        feat_full,
        feat_cor,
        _shape_config(cfg),
        budget_rho=rho,
        coreset_method=method,
    )
    sim.config["full_features_hash"] = feat_full.provenance.get("config_hash")
    sim.config["coreset_features_hash"] = feat_cor.provenance.get("config_hash")
    sim.config["seed"] = int(cfg["seed"])

    condition = {
        "interpretation": feat_cor.method,
        "coreset_method": method,
        "rho": rho,
        "model": dataset.source_model,
        "config_hash": feat_cor.provenance.get("config_hash"),
    }
    fid_cor = pipeline.fidelity_report(dataset, feat_cor, condition)
    fid_full = pipeline.fidelity_report(
        dataset, feat_full, {**condition, "rho": 1.0, "coreset_method": "full"}
    )

    out_dir = Path(coreset_dir)
    paths = {
        "similarity": save_report(sim, out_dir / "similarity.json"),
        "fidelity": out_dir / "fidelity.json",
        "csv": out_dir / "fidelity.csv",
    }
    paths["fidelity"].write_text(
        json.dumps(
            {"coreset": fid_cor.to_dict(), "full_reference": fid_full.to_dict()},
            indent=2,
            sort_keys=True,
        )
        + "\n"
    )
    write_accuracy_csv(
        [
            {"rho": rho, "method": feat_cor.method, "coreset": method, "accuracy": fid_cor.accuracy},
            {"rho": 1.0, "method": feat_full.method, "coreset": "full", "accuracy": fid_full.accuracy},
        ],
        paths["csv"],
    )
    return paths


def cmd_evaluate(args) -> int:
    cfg = load_config(args.config, args.set, dataset=args.dataset, output_dir=args.output_dir)
    dataset = _require_dataset(cfg)
    paths = _evaluate(cfg, dataset, args.features_full, args.features_coreset)
    for p in paths.values():
        print(p)
    return 0


def cmd_robustness(args) -> int:
    cfg = load_config(args.config, args.set, dataset=args.dataset, output_dir=args.output_dir)
    dataset = _require_dataset(cfg)
    out = Path(cfg["output_dir"])
    interp = cfg["interpretation"]["method"]
    budgets = [b for b in cfg["coreset"]["budgets"] if any(abs(b - r) < 1e-9 for r in ROBUSTNESS_BUDGETS)]
    if len(budgets) < 2:
        raise ValidationError("robustness needs >= 2 of the budgets 0.10 ... 0.50")

    full_dir = _interpret({**cfg, "dataset": cfg["dataset"]}, dataset, None)
    reports = []
    csv_rows = []
    for method in cfg["coreset"]["methods"]:
        for rho in budgets:
            spec = _spec_for(cfg, method, rho)
            coreset = build_coreset(dataset, spec)
            cpath = _coreset_path(out, dataset.source_model, method, float(rho))
            cpath.parent.mkdir(parents=True, exist_ok=True)
            save_coreset(coreset, cpath)
            cor_dir = _interpret(cfg, dataset, cpath)
            paths = _evaluate(cfg, dataset, full_dir, cor_dir)
            sim = json.loads(paths["similarity"].read_text())
            fid = json.loads(paths["fidelity"].read_text())
            csv_rows.append(
                {
                    "rho": rho,
                    "method": interp,
                    "coreset": method,
                    "accuracy": fid["coreset"]["accuracy"],
                }
            )
            full_reference_accuracy = fid["full_reference"]["accuracy"]
            from .simeval import SimilarityReport

            reports.append(
                SimilarityReport(
                    per_class_distance={
                        int(c): v for c, v in sim["per_class_distance"].items()
                    },
                    phi_mean=sim["phi_mean"],
                    budget_rho=rho,
                    interpretation=interp,
                    coreset_method=method,
                    model=dataset.source_model,
                )
            )
    summary = robustness_summary(reports)
    interp_dir = out / dataset.source_model / interp
    save_report(summary, interp_dir / "robustness.json")
    (interp_dir / "robustness_table.txt").write_text(render_table(summary))
    # Full-data reference row so budget curves always plot against it.
    csv_rows.append(
        {"rho": 1.0, "method": interp, "coreset": "full", "accuracy": full_reference_accuracy}
    )
    write_accuracy_csv(csv_rows, interp_dir / "fidelity_curves.csv")
    print(interp_dir / "robustness.json")
    print(interp_dir / "robustness_table.txt")
    return 0


def cmd_visualize(args) -> int:
    cfg = load_config(args.config, args.set, dataset=args.dataset, output_dir=args.output_dir)
    dataset = _require_dataset(cfg)
    images_dir = args.images or cfg["visualize"]["images"]
    if not images_dir:
        raise ValidationError("no images directory (config 'visualize.images' or --images)")
    feat = pipeline.load_features(args.features, head=dataset.head())
    sample_ids = [s for s in args.samples.split(",") if s]
    if not sample_ids:
        raise ValidationError("--samples must list at least one sample id")
    k = int(args.k or cfg["visualize"]["k"])

    pos = {sid: i for i, sid in enumerate(dataset.sample_ids)}
    missing = [s for s in sample_ids if s not in pos]
    if missing:
        raise ValidationError(f"samples not in dataset: {missing}")

    viz_dir = Path(args.features) / "viz"
    viz_dir.mkdir(parents=True, exist_ok=True)
    tiles = []
    for sid in sample_ids:
        i = pos[sid]
        image_path = Path(images_dir) / f"{sid}.png"
        maps = _sample_maps(dataset, feat, i)
        import cv2

        img = cv2.imread(str(image_path), cv2.IMREAD_COLOR)
        if img is None:
            raise ValidationError(f"unreadable image: {image_path}")
        hm = compose_heatmap(maps, min(k, maps.shape[2]), img.shape[:2], {"sample_id": sid, "method": feat.method})
        tiles.append(overlay(hm, image_path, viz_dir / f"overlay_{sid}.png"))
    panel = compose_panel(tiles, viz_dir / "panel.png")
    print(panel)
    return 0


def _sample_maps(dataset, feat, index: int):
    label = int(dataset.labels[index])
    if feat.method == "ice":
        tensor = dataset.tensor()[index : index + 1]
        return ice_maps(tensor, feat.ice_models[label])[0]
    if feat.method == "topic":
        tensor = dataset.tensor()[index : index + 1]
        return topic_maps(tensor, feat.topic)[0]
    layer = dataset.head().input_layer_id
    units = feat.units.per_class.get(label, [])
    if not any(u.layer_id == layer for u in units):
        raise ComputationError(f"class {label} has no units in layer '{layer}'")
    return vebi_maps(dataset.tensor(layer)[index : index + 1], units, layer)[0]


def cmd_transfer(args) -> int:
    cfg = load_config(args.config, args.set, dataset=args.dataset, output_dir=args.output_dir)
    dataset = _require_dataset(cfg)  # target dataset (possibly another model)
    directory = _interpret(cfg, dataset, args.coreset)
    print(directory)
    if args.features_full:
        paths = _evaluate(cfg, dataset, args.features_full, directory)
        for p in paths.values():
            print(p)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="coreinterp",
        description="Coreset-based CNN interpretation pipeline",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="JSON config file")
        p.add_argument("--dataset", help="dataset manifest path (overrides config)")
        p.add_argument("--output-dir", dest="output_dir", help="output root (overrides config)")
        p.add_argument(
            "--set",
            action="append",
            metavar="KEY=VALUE",
            help="dotted config override, value parsed as JSON (repeatable)",
        )

    p = sub.add_parser("select", help="write per-(method, rho) coreset files")
    common(p)
    p.set_defaults(func=cmd_select)

    p = sub.add_parser("interpret", help="fit interpretation features (full data or coreset)")
    common(p)
    p.add_argument("--coreset", help="coreset JSON; omit to use the full dataset")
    p.set_defaults(func=cmd_interpret)

    p = sub.add_parser("evaluate", help="similarity + fidelity reports for a features pair")
    common(p)
    p.add_argument("--features-full", required=True, help="features dir fit on full data")
    p.add_argument("--features-coreset", required=True, help="features dir fit on a coreset")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("robustness", help="sweep budgets 0.10-0.50 and summarize mean±std")
    common(p)
    p.set_defaults(func=cmd_robustness)

    p = sub.add_parser("visualize", help="heatmap panel for selected samples")
    common(p)
    p.add_argument("--features", required=True, help="features dir")
    p.add_argument("--samples", required=True, help="comma-separated sample ids")
    p.add_argument("--images", help="directory with {sample_id}.png files")
    p.add_argument("--k", type=int, help="channels combined per heatmap")
    p.set_defaults(func=cmd_visualize)

    p = sub.add_parser("transfer", help="interpret a dataset with another model's coreset")
    common(p)
    p.add_argument("--coreset", required=True, help="coreset JSON from the source model")
    p.add_argument("--features-full", help="target-model full features dir (enables evaluate)")
    p.set_defaults(func=cmd_transfer)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ValidationError as exc:
        print(f"validation error: {exc}", file=sys.stderr)
        return 2
    except ComputationError as exc:
        print(f"computation error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
