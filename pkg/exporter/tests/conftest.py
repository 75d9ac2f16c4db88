import numpy as np
import pytest
from PIL import Image

from cam_exporter.model import make_color_prototype_model

CLASS_NAMES = ("red_zone", "green_zone", "blue_zone")
CLASS_COLORS = ((220, 40, 40), (40, 200, 60), (50, 60, 210))


@pytest.fixture
def model_path(tmp_path):
    return make_color_prototype_model(
        tmp_path / "model.npz", CLASS_COLORS, CLASS_NAMES, kernel=5, stride=4
    )


@pytest.fixture
def sample_images(tmp_path):
    """Two-tone test images: left half one prototype color, right half another."""
    rng = np.random.default_rng(42)
    paths = []
    combos = [((220, 40, 40), (40, 200, 60)), ((50, 60, 210), (220, 40, 40))]
    for i, (left, right) in enumerate(combos):
        img = np.zeros((64, 64, 3), dtype=np.uint8)
        img[:, :32] = left
        img[:, 32:] = right
        noise = rng.integers(-10, 10, img.shape)
        img = np.clip(img.astype(int) + noise, 0, 255).astype(np.uint8)
        path = tmp_path / f"img{i}.png"
        Image.fromarray(img).save(path)
        paths.append(path)
    return paths
