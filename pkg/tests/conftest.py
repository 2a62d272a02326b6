"""
Conftest for pytest configuration and shared fixtures
"""

import numpy as np
import pytest

from src.core import default_dtype
from src.models import HlgHead, hlg_toy, setr_toy
from src.training import DataConfig, RecipeConfig


@pytest.fixture(autouse=True)
def reset_global_random_state():
    """Nothing in src draws from the global stream; tests that do start from a known seed"""
    np.random.seed(0)
    yield


@pytest.fixture
def rng():
    """Seeded generator for test inputs"""
    return np.random.default_rng(1234)


@pytest.fixture
def float64():
    """Build tensors and parameters in float64 inside the test"""
    with default_dtype(np.float64):
        yield


@pytest.fixture
def setr_toy_config():
    """2-layer SETR with a PUP head on 64x64 inputs"""
    return setr_toy(num_classes=4, image_size=64)


@pytest.fixture
def hlg_toy_config():
    """HLG segmenter sized for 64x64 inputs"""
    return hlg_toy(num_classes=4, head=HlgHead.SEGMENT, image_size=64)


@pytest.fixture
def hlg_cls_config():
    """HLG classifier sized for 64x64 inputs"""
    return hlg_toy(num_classes=5, head=HlgHead.CLASSIFY, image_size=64)


@pytest.fixture
def tiny_data_config():
    """Small synthetic segmentation corpus"""
    return DataConfig(num_samples=4, height=32, width=32, num_classes=4, seed=3, augment=False)


@pytest.fixture
def short_recipe():
    """A few SGD steps with no intermediate evaluation"""
    return RecipeConfig(max_iters=3, batch_size=2, seed=7, eval_interval=0)


@pytest.fixture
def tmp_out(tmp_path):
    """Output directory for command and report tests"""
    out = tmp_path / "out"
    out.mkdir()
    return out
