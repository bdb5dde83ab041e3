import numpy as np
import pytest
from PIL import Image

PALETTE = [(220, 40, 40), (40, 220, 40), (40, 40, 220), (220, 220, 40)]


def make_image_folder(root, classes=2, per_class=5, size=32, seed=0):
    """Class-colored quadrant patterns over noise; strongly separable."""
    rng = np.random.default_rng(seed)
    root.mkdir(parents=True, exist_ok=True)
    for c in range(classes):
        class_dir = root / f"class{c}"
        class_dir.mkdir(exist_ok=True)
        q = c % 4
        r0 = 0 if q in (0, 1) else size // 2
        c0 = 0 if q in (0, 2) else size // 2
        color = np.array(PALETTE[c % len(PALETTE)], dtype=np.int64)
        for i in range(per_class):
            img = rng.integers(0, 60, size=(size, size, 3))
            jitter = rng.integers(-20, 20, size=3)
            img[r0 : r0 + size // 2, c0 : c0 + size // 2] = np.clip(color + jitter, 0, 255)
            Image.fromarray(img.astype(np.uint8)).save(class_dir / f"img{i:04d}.png")
    return root


@pytest.fixture(scope="session")
def ten_image_folder(tmp_path_factory):
    return make_image_folder(tmp_path_factory.mktemp("imgs10"), classes=2, per_class=5)


@pytest.fixture(scope="session")
def hundred_image_folder(tmp_path_factory):
    return make_image_folder(tmp_path_factory.mktemp("imgs100"), classes=4, per_class=25)


@pytest.fixture(scope="session")
def thousand_image_folder(tmp_path_factory):
    return make_image_folder(tmp_path_factory.mktemp("imgs1000"), classes=4, per_class=250)
