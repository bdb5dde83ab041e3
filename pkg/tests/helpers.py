"""Deterministic golden-panel recipe shared by viz and acceptance tests."""

from pathlib import Path

import cv2
import numpy as np

from coreinterp import compose_heatmap, compose_panel, overlay

DATA_DIR = Path(__file__).parent / "data"
GOLDEN_PANEL = DATA_DIR / "golden_panel.png"
GOLDEN_INPUTS = [DATA_DIR / "golden_input_0.png", DATA_DIR / "golden_input_1.png"]


def write_golden_inputs() -> None:
    rng = np.random.default_rng(2024)
    DATA_DIR.mkdir(exist_ok=True)
    for path in GOLDEN_INPUTS:
        img = (rng.random((32, 32, 3)) * 255).astype(np.uint8)
        cv2.imwrite(str(path), img)


def build_panel(out_dir: Path) -> Path:
    """Overlay seeded random maps on the committed inputs and tile them."""
    rng = np.random.default_rng(7)
    tiles = []
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    for i, image_path in enumerate(GOLDEN_INPUTS):
        maps = rng.random((6, 6, 5))
        hm = compose_heatmap(maps, 3, (32, 32), {"sample_id": f"golden_{i}"})
        tiles.append(overlay(hm, image_path, out_dir / f"tile_{i}.png"))
    return compose_panel(tiles, out_dir / "panel.png")


if __name__ == "__main__":
    write_golden_inputs()
    panel = build_panel(DATA_DIR / "_work")
    GOLDEN_PANEL.write_bytes(panel.read_bytes())
    for p in (DATA_DIR / "_work").iterdir():
        p.unlink()
    (DATA_DIR / "_work").rmdir()
    print(f"wrote {GOLDEN_PANEL}")
