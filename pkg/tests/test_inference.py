"""
Unit tests for whole-image and sliding-window inference
"""

import numpy as np
import pytest

from src.core import Tensor
from src.models import build_model
from src.training import predict_whole, sliding_window_infer
from src.training.inference import window_starts
from tests.test_utils import TinyConfigs


def pointwise(images: Tensor) -> Tensor:
    """Logits equal to the pixel values"""
    return images


def window_mean(images: Tensor) -> Tensor:
    """Every pixel gets the mean colour of its window"""
    b, h, w, c = images.shape
    mean = images.data.mean(axis=(1, 2), keepdims=True)
    return Tensor(np.broadcast_to(mean, (b, h, w, c)).copy())


class ModeRecorder:
    """Pointwise model that records its training flag on every call"""

    def __init__(self):
        self.training = True
        self.seen = []

    def train(self, mode=True):
        self.training = mode
        return self

    def eval(self):
        return self.train(False)

    def __call__(self, images: Tensor) -> Tensor:
        self.seen.append(self.training)
        return images


class TestWindowStarts:
    """Test window origins"""

    @pytest.mark.parametrize("size, window, stride, expected", [
        (10, 4, 3, [0, 3, 6]),
        (10, 4, 4, [0, 4, 6]),
        (8, 4, 4, [0, 4]),
        (5, 8, 2, [0]),
        (4, 4, 1, [0]),
    ])
    def test_starts(self, size, window, stride, expected):
        assert window_starts(size, window, stride) == expected


class TestSlidingWindow:
    """Test overlap averaging"""

    def test_pointwise_model_is_exact(self, rng):
        """Test averaging identical per-pixel logits changes nothing"""
        image = rng.random((13, 11, 3)).astype(np.float32)
        out = sliding_window_infer(pointwise, image, window=5, stride=3)
        assert out.shape == (1, 13, 11, 3)
        np.testing.assert_allclose(out[0], image, rtol=1e-6)

    def test_overlap_is_averaged(self):
        """Test a pixel covered by two windows gets the mean of both"""
        image = np.zeros((1, 6, 1, 1), dtype=np.float32)
        image[0, :3] = 1.0
        out = sliding_window_infer(window_mean, image, window=(4, 1), stride=(2, 1))
        # windows rows 0-3 (mean 0.75) and rows 2-5 (mean 0.25)
        np.testing.assert_allclose(out[0, :, 0, 0], [0.75, 0.75, 0.5, 0.5, 0.25, 0.25])

    def test_small_image_is_padded_to_window(self, rng):
        """Test an image smaller than the window is zero-padded, then cropped back"""
        image = rng.random((1, 6, 7, 2)).astype(np.float32)
        out = sliding_window_infer(window_mean, image, window=8, stride=4)
        assert out.shape == (1, 6, 7, 2)
        expected = np.broadcast_to(image.sum(axis=(1, 2), keepdims=True) / 64.0, out.shape)
        np.testing.assert_allclose(out, expected, rtol=1e-6)

    def test_setr_crop_off_the_patch_grid(self):
        """Test a 36x36 image runs through an 8-pixel-patch SETR with a 40-pixel window"""
        model = build_model(TinyConfigs.setr(), seed=0)
        image = np.random.default_rng(0).random((36, 36, 3)).astype(np.float32)
        out = sliding_window_infer(model, image, window=40, stride=26)
        assert out.shape == (1, 36, 36, 3)
        assert np.isfinite(out).all()

    def test_runs_in_eval_mode(self, rng):
        """Test the forward sees eval mode and the caller's mode comes back"""
        model = ModeRecorder()
        sliding_window_infer(model, rng.random((8, 8, 1)), window=4, stride=4)
        assert model.seen == [False] * 4
        assert model.training

    def test_bad_stride(self, rng):
        with pytest.raises(ValueError):
            sliding_window_infer(pointwise, rng.random((4, 4, 3)), window=2, stride=0)

    def test_model_predict_is_used(self, hlg_toy_config):
        """Test a segmenter is called through its predict method"""
        model = build_model(hlg_toy_config, seed=0).eval()
        image = np.random.default_rng(0).random((64, 64, 3)).astype(np.float32)
        out = sliding_window_infer(model, image, window=64, stride=32)
        np.testing.assert_allclose(out, predict_whole(model, image), rtol=1e-5, atol=1e-6)
