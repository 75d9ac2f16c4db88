import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from wsseg.core import BackgroundMode, ClassTaxonomy


@pytest.fixture
def taxonomy3():
    return ClassTaxonomy(
        (("stroma", (228, 26, 28)), ("tumor", (55, 126, 184)), ("vessel", (77, 175, 74))),
        BackgroundMode.NONE,
    )


@pytest.fixture
def taxonomy_bg():
    return ClassTaxonomy(
        (
            ("glands", (228, 26, 28)),
            ("muscle", (55, 126, 184)),
            ("background", (255, 255, 255)),
        ),
        BackgroundMode.BACKGROUND,
    )


@pytest.fixture
def taxonomy_bg_other():
    return ClassTaxonomy(
        (
            ("glands", (228, 26, 28)),
            ("muscle", (55, 126, 184)),
            ("background", (255, 255, 255)),
            ("other", (128, 128, 128)),
        ),
        BackgroundMode.BACKGROUND_AND_OTHER,
    )


@pytest.fixture(scope="session")
def blob_fixture(tmp_path_factory):
    """Small shared synthetic dataset; session-scoped to keep the suite fast."""
    from wsseg.pipeline import make_synthetic_fixture

    out = tmp_path_factory.mktemp("blobs")
    manifest = make_synthetic_fixture(
        out, n_images=6, n_classes=4, size=32, noise=0.3, activation_blur=1.0, seed=7
    )
    return manifest
