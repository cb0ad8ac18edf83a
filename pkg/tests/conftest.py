import numpy as np
import pytest

from sdfabs.geometry import PinholeCamera
from sdfabs.synth import CategoryConfig, make_category, resolve_shape_space

# Small camera keeps per-scene cost down; protocol-scale cameras are used in
# the acceptance suite where the criteria demand them.
TEST_CAMERA = PinholeCamera(fx=180.0, fy=180.0, cx=79.5, cy=59.5, width=160, height=120)


@pytest.fixture(scope="session")
def cups_category():
    cfg = make_category("cups", cam=TEST_CAMERA)
    return cfg, resolve_shape_space(cfg)


@pytest.fixture(scope="session")
def bumpbox_category():
    cfg = make_category("bumpboxes", cam=TEST_CAMERA)
    return cfg, resolve_shape_space(cfg)


@pytest.fixture(scope="session")
def clubs_category():
    cfg = make_category("clubs", cam=TEST_CAMERA)
    return cfg, resolve_shape_space(cfg)
