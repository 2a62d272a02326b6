"""
Unit tests for the HLG backbone, classifier and segmenter
"""

import numpy as np
import pytest

from src.core import Tensor, count_ops
from src.models import HlgHead, build_model, hlg_variant
from src.models.hlg_backbone import HlgBackbone, HlgClassifier, HlgSegmenter, stage_transition
from src.training import cls_loss


def _images(batch, h, w, seed=0):
    return Tensor(np.random.default_rng(seed).random((batch, h, w, 3)).astype(np.float32))


class TestHlgBackbone:
    """Test the four-stage pyramid"""

    def test_pyramid_shapes(self, hlg_toy_config):
        """Test strides 4, 8, 16, 32 and the stage widths"""
        backbone = HlgBackbone(hlg_toy_config, np.random.default_rng(0)).eval()
        pyramid = backbone(_images(1, 64, 64))
        assert len(pyramid) == 4
        assert pyramid.strides == (4, 8, 16, 32)
        assert [m.shape for m in pyramid.maps] == [
            (1, 16, 16, 16), (1, 8, 8, 32), (1, 4, 4, 64), (1, 2, 2, 128),
        ]

    def test_non_divisible_input(self, hlg_toy_config):
        """Test grids round up: 50 -> 13, 7, 4, 2"""
        backbone = HlgBackbone(hlg_toy_config, np.random.default_rng(0)).eval()
        pyramid = backbone(_images(1, 50, 50))
        assert [m.shape[1] for m in pyramid.maps] == [13, 7, 4, 2]

    def test_stage_transition_halves_grid(self, hlg_toy_config):
        backbone = HlgBackbone(hlg_toy_config, np.random.default_rng(0)).eval()
        x = Tensor(np.random.default_rng(1).normal(size=(1, 16, 16, 16)).astype(np.float32))
        assert stage_transition(x, backbone.stages[1]).shape == (1, 8, 8, 32)

    def test_stage_layout(self, hlg_toy_config):
        """Test each stage holds depth / 2 plain + dilated pairs"""
        backbone = HlgBackbone(hlg_toy_config, np.random.default_rng(0))
        for stage, cfg in zip(backbone.stages, hlg_toy_config.stages):
            assert len(stage.pairs) == cfg.depth // 2
            pair = stage.pairs[0]
            assert (pair.plain.dilation, pair.dilated.dilation) == (1, cfg.dilation)
            assert pair.plain.window == cfg.window

    def test_stages_are_scoped(self, hlg_toy_config):
        backbone = HlgBackbone(hlg_toy_config, np.random.default_rng(0)).eval()
        with count_ops() as counter:
            backbone(_images(1, 64, 64))
        for label in ("stem", "stage1", "stage2", "stage3", "stage4"):
            assert counter.macs(label) > 0
        assert counter.macs("stage1/global_attn") > 0


class TestHlgHeads:
    """Test classification and segmentation outputs"""

    def test_classifier_logits(self, hlg_cls_config):
        model = build_model(hlg_cls_config, seed=0).eval()
        assert isinstance(model, HlgClassifier)
        assert model(_images(2, 64, 64)).shape == (2, 5)

    def test_segmenter_logits(self, hlg_toy_config):
        """Test full-resolution logits and the fused width"""
        model = build_model(hlg_toy_config, seed=0).eval()
        assert isinstance(model, HlgSegmenter)
        out = model(_images(1, 64, 64))
        assert out.logits.shape == (1, 64, 64, 4)
        assert out.aux_logits == []
        assert model.fused_width == sum(hlg_toy_config.channels)

    def test_segmenter_odd_size(self, hlg_toy_config):
        model = build_model(hlg_toy_config, seed=0).eval()
        assert model.predict(_images(1, 40, 56)).shape == (1, 40, 56, 4)

    def test_segmenter_scopes(self, hlg_toy_config):
        model = build_model(hlg_toy_config, seed=0).eval()
        with count_ops() as counter:
            model(_images(1, 64, 64))
        for label in ("fuse", "seg_pair", "decoder"):
            assert counter.macs(label) > 0

    def test_classifier_backward(self, hlg_cls_config):
        """Test a classification loss reaches the stem"""
        model = build_model(hlg_cls_config, seed=0)
        cls_loss(model(_images(2, 64, 64)), np.array([0, 3])).backward()
        assert model.backbone.stem.conv1.conv.weight.grad is not None
        assert model.fc.weight.grad is not None


@pytest.mark.slow
class TestPublishedResolution:
    """Test a full variant at 224 x 224"""

    def test_mobile_grids(self):
        """Test the 56 / 28 / 14 / 7 pyramid"""
        config = hlg_variant("hlg-mobile", head=HlgHead.CLASSIFY)
        backbone = HlgBackbone(config, np.random.default_rng(0)).eval()
        pyramid = backbone(_images(1, 224, 224))
        assert [m.shape[1:] for m in pyramid.maps] == [
            (56, 56, 48), (28, 28, 96), (14, 14, 192), (7, 7, 384),
        ]
