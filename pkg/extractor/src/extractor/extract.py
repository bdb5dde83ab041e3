"""Export activation tensors, labels, and a pooled-input head to disk.

Outputs follow the coreinterp interchange format: one NPY v1.0 file per
hooked layer (float32 little-endian, [n, h, w, d]), a head.npz with
(weights, bias, input_layer_id), and a manifest.json tying everything
together. The extractor talks to the interpretation toolkit only through
these files.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
from PIL import Image

from .models import REGISTRY, build_model, export_gap_linear_head

IMAGE_EXTENSIONS = (".png", ".jpg", ".jpeg", ".bmp")


@dataclass
class ExtractionJob:
    model: str
    dataset_dir: str | Path
    output_dir: str | Path
    layers: list[str] = field(default_factory=list)  # empty → model defaults
    batch_size: int = 32
    image_size: int = 32
    seed: int = 0
    device: str = "cpu"
    normalize: str = "unit"  # "unit" → [0,1]; "imagenet" → standard mean/std

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.normalize not in ("unit", "imagenet"):
            raise ValueError(f"unknown normalize mode '{self.normalize}'")


def list_image_folder(dataset_dir) -> tuple[list[Path], list[int], list[str]]:
    """Images from class subdirectories; classes are the sorted dir names."""
    root = Path(dataset_dir)
    if not root.is_dir():
        raise FileNotFoundError(f"dataset directory not found: {root}")
    class_names = sorted(p.name for p in root.iterdir() if p.is_dir())
    if not class_names:
        raise ValueError(f"no class subdirectories under {root}")
    paths: list[Path] = []
    labels: list[int] = []
    for label, name in enumerate(class_names):
        files = sorted(
            p for p in (root / name).iterdir() if p.suffix.lower() in IMAGE_EXTENSIONS
        )
        paths.extend(files)
        labels.extend([label] * len(files))
    if not paths:
        raise ValueError(f"no images found under {root}")
    return paths, labels, class_names


def load_images(paths: list[Path], image_size: int, normalize: str = "unit") -> torch.Tensor:
    """Decode to RGB, bilinear-resize, scale to [0,1] (optionally standardize)."""
    batch = np.empty((len(paths), 3, image_size, image_size), dtype=np.float32)
    for i, path in enumerate(paths):
        with Image.open(path) as img:
            arr = np.asarray(
                img.convert("RGB").resize((image_size, image_size), Image.BILINEAR),
                dtype=np.float32,
            )
        batch[i] = arr.transpose(2, 0, 1) / 255.0
    tensor = torch.from_numpy(batch)
    if normalize == "imagenet":
        mean = torch.tensor([0.485, 0.456, 0.406]).view(1, 3, 1, 1)
        std = torch.tensor([0.229, 0.224, 0.225]).view(1, 3, 1, 1)
        tensor = (tensor - mean) / std
    return tensor


def extract(job: ExtractionJob, model: torch.nn.Module | None = None) -> Path:
    """Run the job; returns the manifest path.

    A prebuilt model instance (e.g. one trained by the caller) can be passed
    in; it must match the registry architecture named by job.model. Layer
    names are validated before any file is written.
    """
    paths, labels, class_names = list_image_folder(job.dataset_dir)
    if job.model not in REGISTRY:
        raise ValueError(f"unknown model '{job.model}'; known: {sorted(REGISTRY)}")
    entry = REGISTRY[job.model]
    if model is None:
        model, _ = build_model(job.model, num_classes=len(class_names), seed=job.seed)
    model = model.eval().to(job.device)

    layers = list(job.layers) or list(entry.default_layers)
    modules = dict(model.named_modules())
    missing = [name for name in layers if name not in modules]
    if missing:
        raise ValueError(f"layers not found in model '{job.model}': {missing}")
    if entry.head_input_layer not in layers:
        layers = layers + [entry.head_input_layer]

    captured: dict[str, list[np.ndarray]] = {name: [] for name in layers}
    handles = [
        modules[name].register_forward_hook(_capture_hook(captured, name)) for name in layers
    ]
    logits_all: list[np.ndarray] = []
    try:
        with torch.no_grad():
            for start in range(0, len(paths), job.batch_size):
                chunk = paths[start : start + job.batch_size]
                images = load_images(chunk, job.image_size, job.normalize).to(job.device)
                logits_all.append(model(images).cpu().numpy())
    finally:
        for h in handles:
            h.remove()

    tensors = {name: np.concatenate(captured[name], axis=0) for name in layers}
    logits = np.concatenate(logits_all, axis=0)
    top1 = np.argmax(logits, axis=1)

    out = Path(job.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    tensor_files = {}
    for name in layers:
        fname = f"{name.replace('.', '_')}.npy"
        np.save(out / fname, np.ascontiguousarray(tensors[name], dtype="<f4"))
        tensor_files[name] = fname

    head_meta = _export_head(model, entry, tensors[entry.head_input_layer], logits, out)

    sample_ids = [f"{p.parent.name}/{p.stem}" for p in paths]
    manifest = {
        "sample_ids": sample_ids,
        "labels": [int(v) for v in labels],
        "class_names": class_names,
        "layer_ids": layers,
        "tensor_files": tensor_files,
        "classifier_file": "head.npz",
        "source_model": job.model,
        "metadata": {
            "extractor": "activation-extractor",
            "image_size": job.image_size,
            "normalize": job.normalize,
            "seed": job.seed,
            "nonlinearity": {name: entry.nonlinearity for name in layers},
            "model_top1": [int(v) for v in top1],
            **head_meta,
        },
    }
    manifest_path = out / "manifest.json"
    manifest_path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return manifest_path


def _capture_hook(captured: dict[str, list[np.ndarray]], name: str):
    def hook(_module, _inputs, output):
        # NCHW → NHWC float32, detached copy.
        arr = output.detach().cpu().numpy().astype(np.float32)
        captured[name].append(np.transpose(arr, (0, 2, 3, 1)))

    return hook


def _export_head(model, entry, head_tensor: np.ndarray, logits: np.ndarray, out: Path) -> dict:
    """GAP+linear heads export directly; MLP heads are distilled by least
    squares from pooled features onto the model's logits."""
    if entry.head_kind == "gap_linear":
        weights, bias = export_gap_linear_head(model)
        meta = {"head": "exact_gap_linear"}
    else:
        pooled = head_tensor.astype(np.float64).mean(axis=(1, 2))
        design = np.hstack([pooled, np.ones((pooled.shape[0], 1))])
        theta, *_ = np.linalg.lstsq(design, logits.astype(np.float64), rcond=None)
        weights, bias = theta[:-1].T, theta[-1]
        distilled = np.argmax(pooled @ weights.T + bias, axis=1)
        agreement = float(np.mean(distilled == np.argmax(logits, axis=1)))
        meta = {"head": "distilled_linear", "distilled_head_agreement": agreement}
    with open(out / "head.npz", "wb") as fh:
        np.savez(
            fh,
            weights=np.asarray(weights, dtype="<f4"),
            bias=np.asarray(bias, dtype="<f4"),
            input_layer_id=np.asarray(entry.head_input_layer),
        )
    return meta
