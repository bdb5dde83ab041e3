"""Activation interchange format and dataset model.

Tensors travel as NPY v1.0 files (float32 little-endian, C order, axis
order [n, h, w, d]); a JSON manifest ties layers, labels, and the
classifier head together. Loading is lazy per layer; loaded arrays are
validated once and treated as immutable afterwards.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .validation import ValidationError, check_finite, check_labels, check_tensor4

INTERCHANGE_DTYPE = np.dtype("<f4")

_MANIFEST_KEYS = ("sample_ids", "labels", "layer_ids", "tensor_files", "source_model")


@dataclass
class ActivationTensor:
    """4-D activation block [n, h, w, d] from one convolutional layer."""

    data: np.ndarray
    layer_id: str

    def __post_init__(self):
        self.data = check_tensor4(self.data, f"tensor '{self.layer_id}'")

    @property
    def n(self) -> int:
        return self.data.shape[0]

    @property
    def depth(self) -> int:
        return self.data.shape[3]


@dataclass
class ActivationVectorSet:
    """Pooled activations [n, d]; row i derives from sample i of the source tensor."""

    data: np.ndarray
    layer_id: str

    def __post_init__(self):
        arr = np.asarray(self.data)
        if arr.ndim != 2:
            raise ValidationError(f"vector set must be 2-D, got shape {arr.shape}")
        self.data = check_finite(arr, f"vectors '{self.layer_id}'")


@dataclass
class ClassifierHead:
    """Frozen linear classifier consuming pooled features of one layer."""

    weights: np.ndarray  # [C, d_cls]
    bias: np.ndarray  # [C]
    input_layer_id: str

    def __post_init__(self):
        self.weights = check_finite(np.asarray(self.weights, dtype=np.float64), "head weights")
        self.bias = check_finite(np.asarray(self.bias, dtype=np.float64), "head bias")
        if self.weights.ndim != 2 or self.bias.ndim != 1:
            raise ValidationError("head must have 2-D weights and 1-D bias")
        if self.weights.shape[0] != self.bias.shape[0]:
            raise ValidationError("head weights and bias disagree on class count")

    @property
    def num_classes(self) -> int:
        return self.weights.shape[0]

    @property
    def input_depth(self) -> int:
        return self.weights.shape[1]


@dataclass
class DatasetManifest:
    sample_ids: list[str]
    labels: np.ndarray
    layer_ids: list[str]
    tensor_files: dict[str, str]
    source_model: str = ""
    class_names: list[str] | None = None
    classifier_file: str | None = None
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        n = len(self.sample_ids)
        self.labels = check_labels(self.labels, n)
        if len(set(self.sample_ids)) != n:
            raise ValidationError("sample_ids must be unique")
        c = self.num_classes
        if self.labels.size and self.labels.max() >= c:
            raise ValidationError(f"label {self.labels.max()} out of range for {c} classes")
        missing = [l for l in self.layer_ids if l not in self.tensor_files]
        if missing:
            raise ValidationError(f"layer_ids without tensor files: {missing}")

    @property
    def n(self) -> int:
        return len(self.sample_ids)

    @property
    def num_classes(self) -> int:
        if self.class_names:
            return len(self.class_names)
        return int(self.labels.max()) + 1 if self.labels.size else 0


def write_tensor(path, array) -> Path:
    """Write a 4-D tensor as NPY v1.0, float32 little-endian, C row-major."""
    arr = np.ascontiguousarray(np.asarray(array), dtype=INTERCHANGE_DTYPE)
    if arr.ndim != 4:
        raise ValidationError(f"activation tensor must be 4-D, got shape {arr.shape}")
    path = Path(path)
    np.save(path, arr)
    return path


def read_tensor(path, expect_samples: int | None = None) -> np.ndarray:
    """Load and validate one tensor file; errors name the offending file."""
    path = Path(path)
    if not path.exists():
        raise ValidationError(f"tensor file missing: {path}")
    arr = np.load(path)
    if arr.ndim != 4:
        raise ValidationError(f"{path}: expected 4-D tensor, got shape {arr.shape}")
    if arr.dtype != INTERCHANGE_DTYPE:
        raise ValidationError(f"{path}: expected dtype <f4, got {arr.dtype}")
    if expect_samples is not None and arr.shape[0] != expect_samples:
        raise ValidationError(
            f"{path}: sample count {arr.shape[0]} does not match manifest n={expect_samples}"
        )
    if not np.all(np.isfinite(arr)):
        raise ValidationError(f"{path}: contains non-finite values")
    arr.flags.writeable = False
    return arr


def write_head(path, head: ClassifierHead) -> Path:
    path = Path(path)
    with open(path, "wb") as fh:
        np.savez(
            fh,
            weights=head.weights.astype(INTERCHANGE_DTYPE),
            bias=head.bias.astype(INTERCHANGE_DTYPE),
            input_layer_id=np.asarray(head.input_layer_id),
        )
    return path


def read_head(path) -> ClassifierHead:
    path = Path(path)
    if not path.exists():
        raise ValidationError(f"classifier file missing: {path}")
    with np.load(path) as f:
        return ClassifierHead(
            weights=f["weights"], bias=f["bias"], input_layer_id=str(f["input_layer_id"])
        )


class ActivationDataset:
    """Manifest-backed dataset with lazy, validated, per-layer tensor access."""

    def __init__(self, manifest: DatasetManifest, root):
        self.manifest = manifest
        self.root = Path(root)
        self._tensors: dict[str, np.ndarray] = {}
        self._pooled: dict[str, np.ndarray] = {}
        self._head: ClassifierHead | None = None

    # -- identity -----------------------------------------------------------
    @property
    def n(self) -> int:
        return self.manifest.n

    @property
    def num_classes(self) -> int:
        return self.manifest.num_classes

    @property
    def labels(self) -> np.ndarray:
        return self.manifest.labels

    @property
    def sample_ids(self) -> list[str]:
        return self.manifest.sample_ids

    @property
    def layer_ids(self) -> list[str]:
        return list(self.manifest.layer_ids)

    @property
    def source_model(self) -> str:
        return self.manifest.source_model

    # -- tensors ------------------------------------------------------------
    def tensor(self, layer_id: str | None = None) -> np.ndarray:
        layer_id = layer_id or self.layer_ids[-1]
        if layer_id not in self.manifest.tensor_files:
            raise ValidationError(f"unknown layer '{layer_id}'")
        if layer_id not in self._tensors:
            path = self.root / self.manifest.tensor_files[layer_id]
            self._tensors[layer_id] = read_tensor(path, expect_samples=self.n)
        return self._tensors[layer_id]

    def pooled(self, layer_id: str | None = None) -> np.ndarray:
        layer_id = layer_id or self.layer_ids[-1]
        if layer_id not in self._pooled:
            self._pooled[layer_id] = _gap(self.tensor(layer_id))
        return self._pooled[layer_id]

    def head(self) -> ClassifierHead:
        if self.manifest.classifier_file is None:
            raise ValidationError("dataset has no classifier head")
        if self._head is None:
            head = read_head(self.root / self.manifest.classifier_file)
            shape = _peek_shape(self.root / self.manifest.tensor_files[head.input_layer_id])
            if head.input_depth != shape[3]:
                raise ValidationError(
                    f"head expects depth {head.input_depth}, layer "
                    f"'{head.input_layer_id}' has depth {shape[3]}"
                )
            self._head = head
        return self._head

    def view(self, indices) -> "DatasetView":
        return DatasetView(self, indices)

    def class_indices(self) -> dict[int, np.ndarray]:
        return partition_by_class(self)


class DatasetView:
    """Read-only row subset of a dataset; order-stable (ascending global index)."""

    def __init__(self, base: ActivationDataset, indices):
        idx = np.asarray(indices, dtype=np.int64)
        if idx.ndim != 1:
            raise ValidationError("view indices must be 1-D")
        if idx.size == 0:
            raise ValidationError("view must select at least one sample")
        if idx.min() < 0 or idx.max() >= base.n:
            raise ValidationError("view index out of range")
        if np.unique(idx).size != idx.size:
            raise ValidationError("view indices contain duplicates")
        self.base = base
        self.indices = np.sort(idx)

    @property
    def n(self) -> int:
        return self.indices.size

    @property
    def num_classes(self) -> int:
        return self.base.num_classes

    @property
    def labels(self) -> np.ndarray:
        return self.base.labels[self.indices]

    @property
    def sample_ids(self) -> list[str]:
        ids = self.base.sample_ids
        return [ids[i] for i in self.indices]

    @property
    def layer_ids(self) -> list[str]:
        return self.base.layer_ids

    @property
    def source_model(self) -> str:
        return self.base.source_model

    def tensor(self, layer_id: str | None = None) -> np.ndarray:
        return self.base.tensor(layer_id)[self.indices]

    def pooled(self, layer_id: str | None = None) -> np.ndarray:
        return self.base.pooled(layer_id)[self.indices]

    def head(self) -> ClassifierHead:
        return self.base.head()

    def view(self, indices) -> "DatasetView":
        return DatasetView(self.base, self.indices[np.asarray(indices, dtype=np.int64)])

    def class_indices(self) -> dict[int, np.ndarray]:
        # Local (view-relative) indices per class.
        return partition_by_class(self.labels)


def load_dataset(manifest_path) -> ActivationDataset:
    """Parse and validate a manifest; tensors are checked on first access."""
    path = Path(manifest_path)
    if not path.exists():
        raise ValidationError(f"manifest not found: {path}")
    try:
        raw = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ValidationError(f"manifest does not parse: {exc}") from exc
    missing = [k for k in _MANIFEST_KEYS if k not in raw]
    if missing:
        raise ValidationError(f"manifest missing keys: {missing}")
    manifest = DatasetManifest(
        sample_ids=list(raw["sample_ids"]),
        labels=np.asarray(raw["labels"]),
        layer_ids=list(raw["layer_ids"]),
        tensor_files=dict(raw["tensor_files"]),
        source_model=raw["source_model"],
        class_names=raw.get("class_names"),
        classifier_file=raw.get("classifier_file"),
        metadata=raw.get("metadata") or {},
    )
    for layer_id in manifest.layer_ids:
        f = path.parent / manifest.tensor_files[layer_id]
        if not f.exists():
            raise ValidationError(f"tensor file missing for layer '{layer_id}': {f}")
    if manifest.classifier_file and not (path.parent / manifest.classifier_file).exists():
        raise ValidationError(f"classifier file missing: {manifest.classifier_file}")
    return ActivationDataset(manifest, path.parent)


def save_manifest(manifest: DatasetManifest, path) -> Path:
    doc = {
        "sample_ids": manifest.sample_ids,
        "labels": [int(v) for v in manifest.labels],
        "class_names": manifest.class_names,
        "layer_ids": manifest.layer_ids,
        "tensor_files": manifest.tensor_files,
        "classifier_file": manifest.classifier_file,
        "source_model": manifest.source_model,
        "metadata": manifest.metadata,
    }
    path = Path(path)
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    return path


def global_average_pool(tensor):
    """Channel-wise spatial mean: [n, h, w, d] → [n, d], preserving sample order."""
    if isinstance(tensor, ActivationTensor):
        return ActivationVectorSet(_gap(tensor.data), tensor.layer_id)
    return _gap(np.asarray(tensor))


def _gap(data: np.ndarray) -> np.ndarray:
    if data.ndim != 4:
        raise ValidationError(f"expected 4-D tensor, got shape {data.shape}")
    return data.mean(axis=(1, 2), dtype=np.float64)


def partition_by_class(obj) -> dict[int, np.ndarray]:
    """Map class → sorted sample indices; lists are disjoint and cover [0, n)."""
    labels = obj.labels if hasattr(obj, "labels") else check_labels(obj)
    labels = check_labels(labels)
    return {int(c): np.flatnonzero(labels == c) for c in np.unique(labels)}


def _peek_shape(path) -> tuple:
    return np.load(path, mmap_mode="r").shape


def make_synthetic(
    out_dir,
    *,
    classes: int = 4,
    per_class: int = 100,
    height: int = 4,
    width: int = 4,
    depth: int = 16,
    spread: float = 0.5,
    seed: int = 0,
    channel_pattern: str = "dense",
    layer_depths: list[int] | None = None,
    model_name: str | None = None,
) -> Path:
    """Write a synthetic activation dataset (tensors + manifest + head); returns manifest path.

    Each class is one Gaussian component with class-separated channel means;
    the bundled head's rows are the last layer's class mean directions (bias
    -0.5*||mean||^2), which puts it above chance by construction. Sample ids
    and labels depend only on (classes, per_class), so datasets generated
    with different seeds share ids and stay transfer-compatible. Deterministic
    per seed, byte for byte.

    channel_pattern: "dense" draws uniform per-channel means; "one_hot" gives
    class c a single active channel (channel c mod depth), which pins down
    exactly one relevant unit per class.
    """
    if min(classes, per_class, height, width, depth) < 1:
        raise ValidationError("all synthetic dimensions must be positive")
    if spread < 0:
        raise ValidationError("spread must be >= 0")
    if channel_pattern not in ("dense", "one_hot"):
        raise ValidationError(f"unknown channel_pattern '{channel_pattern}'")

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    n = classes * per_class
    labels = np.repeat(np.arange(classes), per_class)
    sample_ids = [f"s{i:06d}" for i in range(n)]
    depths = list(layer_depths) if layer_depths else [depth]
    layer_ids = [f"conv{i}" for i in range(len(depths))]

    tensor_files = {}
    means = None
    for layer_id, d in zip(layer_ids, depths):
        means = _class_means(rng, classes, d, channel_pattern)
        noise = rng.standard_normal((n, height, width, d))
        data = means[labels][:, None, None, :] + spread * noise
        write_tensor(out / f"{layer_id}.npy", data)
        tensor_files[layer_id] = f"{layer_id}.npy"

    head = ClassifierHead(
        weights=means,
        bias=-0.5 * (means**2).sum(axis=1),
        input_layer_id=layer_ids[-1],
    )
    write_head(out / "head.npz", head)

    manifest = DatasetManifest(
        sample_ids=sample_ids,
        labels=labels,
        layer_ids=layer_ids,
        tensor_files=tensor_files,
        source_model=model_name or f"synthetic-seed{seed}",
        class_names=[f"class_{c}" for c in range(classes)],
        classifier_file="head.npz",
    )
    dataset = ActivationDataset(manifest, out)
    from .fidelity import classify  # local import: fidelity depends on this module

    _, baseline = classify(dataset.tensor(layer_ids[-1]), head, labels)
    manifest.metadata = {
        "generator": "gaussian-mixture",
        "channel_pattern": channel_pattern,
        "spread": spread,
        "seed": seed,
        "baseline_accuracy": baseline,
        "activation_sign": "unbounded",
    }
    return save_manifest(manifest, out / "manifest.json")


def _class_means(rng: np.random.Generator, classes: int, depth: int, pattern: str) -> np.ndarray:
    if pattern == "one_hot":
        means = np.zeros((classes, depth))
        means[np.arange(classes), np.arange(classes) % depth] = 2.0
        return means
    return rng.uniform(0.5, 1.5, size=(classes, depth))
