import io

import numpy as np
import pytest
import torch
from PIL import Image

from mapprior.config import tiny_model_config
from mapprior.data import SyntheticSpec, generate_synthetic_scene


@pytest.fixture(autouse=True)
def _seed_everything():
    torch.manual_seed(0)
    np.random.seed(0)
    yield


@pytest.fixture(scope="session")
def tiny_cfg():
    return tiny_model_config()


def mini_model_config():
    """A very small model for fast unit tests of the training and CLI plumbing."""
    cfg = tiny_model_config()
    cfg.encoder.encoder_layers = 1
    cfg.encoder.image_size = (64, 32)
    cfg.encoder.bev_size = (8, 4)
    cfg.encoder.max_polylines = 8
    cfg.decoder.num_queries = 24
    return cfg.validate()


@pytest.fixture
def mini_cfg():
    return mini_model_config()


@pytest.fixture(scope="session")
def scenes():
    """One scene per layout, fixed seeds."""
    out = []
    for i, layout in enumerate(("straight", "curve", "t_intersection", "crossroad")):
        lanes = 1 if layout in ("t_intersection", "crossroad") else 2
        curv = 0.015 if layout == "curve" else 0.0
        out.append(generate_synthetic_scene(SyntheticSpec(seed=100 + i, layout=layout, lanes_per_road=lanes, curvature=curv)))
    return out


def png_bytes(color, size=256):
    arr = np.zeros((size, size, 3), dtype=np.uint8)
    arr[:] = color
    buf = io.BytesIO()
    Image.fromarray(arr).save(buf, format="PNG")
    return buf.getvalue()
