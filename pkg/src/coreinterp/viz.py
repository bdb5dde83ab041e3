"""Heatmap rendering of interpretation maps over input images.

Channels are scored by their element sum; the top-k channels combine by
per-location max, resize bilinearly to the image, min-max normalize, and
blend onto the image with a value-premultiplied viridis colormap. All
outputs are deterministic for fixed inputs.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import cv2
import numpy as np

from .validation import ValidationError, check_finite

BLEND = 0.5
COLORMAP_NAME = "viridis"


@dataclass
class Heatmap:
    values: np.ndarray  # [h_img, w_img] in [0, 1]
    source: dict = field(default_factory=dict)

    def __post_init__(self):
        arr = np.asarray(self.values, dtype=np.float64)
        if arr.ndim != 2:
            raise ValidationError(f"heatmap must be 2-D, got shape {arr.shape}")
        check_finite(arr, "heatmap")
        if arr.size and (arr.min() < 0.0 or arr.max() > 1.0):
            raise ValidationError("heatmap values must lie in [0, 1]")
        self.values = arr


def score_maps(maps) -> np.ndarray:
    """Per-channel relevance score: sum over spatial locations. [h, w, d'] → [d']."""
    arr = np.asarray(maps, dtype=np.float64)
    if arr.ndim != 3:
        raise ValidationError(f"per-sample maps must be 3-D [h, w, d'], got {arr.shape}")
    return arr.sum(axis=(0, 1))


def compose_heatmap(maps, k: int, target_hw: tuple[int, int], source: dict | None = None) -> Heatmap:
    """Top-k channels by score, per-location max, bilinear resize, min-max normalize.

    Score ties resolve to the lower channel index; a constant combined map
    normalizes to all zeros.
    """
    arr = np.asarray(maps, dtype=np.float64)
    if arr.ndim != 3:
        raise ValidationError(f"per-sample maps must be 3-D [h, w, d'], got {arr.shape}")
    d = arr.shape[2]
    if not 1 <= k <= d:
        raise ValidationError(f"k={k} out of range for {d} channels")
    scores = score_maps(arr)
    top = np.argsort(-scores, kind="stable")[:k]
    combined = arr[..., top].max(axis=2)
    h_img, w_img = target_hw
    resized = cv2.resize(
        combined.astype(np.float32), (w_img, h_img), interpolation=cv2.INTER_LINEAR
    ).astype(np.float64)
    lo, hi = resized.min(), resized.max()
    values = np.zeros_like(resized) if hi - lo <= 0 else (resized - lo) / (hi - lo)
    meta = dict(source or {})
    meta.update({"k": k, "normalization": "minmax", "resize": "bilinear"})
    return Heatmap(values=values, source=meta)


def overlay(heatmap: Heatmap, image_path, out_path, blend: float = BLEND) -> Path:
    """Alpha-blend the colormapped heatmap onto an RGB image; writes PNG.

    The colormap color is premultiplied by the heatmap value, so a zero
    heatmap leaves exactly (1-blend) * image.
    """
    img = cv2.imread(str(image_path), cv2.IMREAD_COLOR)
    if img is None:
        raise ValidationError(f"unreadable image: {image_path}")
    hm = heatmap.values
    if hm.shape != img.shape[:2]:
        raise ValidationError(
            f"heatmap shape {hm.shape} does not match image {img.shape[:2]}"
        )
    out = _blend(img, hm, blend)
    out_path = Path(out_path)
    if not cv2.imwrite(str(out_path), out):
        raise ValidationError(f"could not write image: {out_path}")
    meta = dict(heatmap.source)
    meta.update({"colormap": COLORMAP_NAME, "blend": blend, "image": Path(image_path).name})
    out_path.with_suffix(".json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    return out_path


def compose_panel(image_paths, out_path, gutter: int = 4) -> Path:
    """Side-by-side grid of equally sized images (coreset methods vs full data)."""
    tiles = []
    for p in image_paths:
        img = cv2.imread(str(p), cv2.IMREAD_COLOR)
        if img is None:
            raise ValidationError(f"unreadable image: {p}")
        tiles.append(img)
    if len({t.shape for t in tiles}) != 1:
        raise ValidationError("panel tiles must share one shape")
    h = tiles[0].shape[0]
    spacer = np.full((h, gutter, 3), 255, dtype=np.uint8)
    row: list[np.ndarray] = []
    for i, tile in enumerate(tiles):
        if i:
            row.append(spacer)
        row.append(tile)
    panel = np.hstack(row)
    out_path = Path(out_path)
    if not cv2.imwrite(str(out_path), panel):
        raise ValidationError(f"could not write image: {out_path}")
    return out_path


def _blend(img: np.ndarray, hm: np.ndarray, blend: float) -> np.ndarray:
    v8 = np.round(hm * 255.0).astype(np.uint8)
    colored = cv2.applyColorMap(v8, cv2.COLORMAP_VIRIDIS).astype(np.float64)
    layer = colored * hm[..., None]
    out = (1.0 - blend) * img.astype(np.float64) + blend * layer
    return np.round(np.clip(out, 0.0, 255.0)).astype(np.uint8)
