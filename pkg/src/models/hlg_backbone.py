"""
Four-stage HLG backbone, classification head and segmentation head
"""

import logging
from dataclasses import dataclass
from typing import List, Optional, Tuple

import numpy as np

from ..core import functional as F
from ..core.module import ConvBNAct, LayerNorm, Linear, Module, ModuleList
from ..core.profiler import op_scope
from ..core.tensor import Tensor
from .config import GlobalBias, HlgConfig
from .hlg_layer import HlgBlock, HlgLayerPair
from .setr_decoders import PupDecoder, SegmentationOutput
from .setr_encoder import TokenSequence

logger = logging.getLogger(__name__)

STAGE_STRIDES = (4, 8, 16, 32)


@dataclass
class FeaturePyramid:
    """Stage outputs at strides 4, 8, 16, 32"""
    maps: List[Tensor]

    @property
    def strides(self) -> Tuple[int, ...]:
        return STAGE_STRIDES

    def __getitem__(self, idx: int) -> Tensor:
        return self.maps[idx]

    def __len__(self) -> int:
        return len(self.maps)


def _ceil_div(n: int, d: int) -> int:
    return -(-n // d)


class Stem(Module):
    """conv3x3 s2 + BN + GELU, conv1x1 + BN + GELU, conv3x3 s2 + BN"""

    def __init__(self, dim: int, rng: np.random.Generator):
        super().__init__()
        self.conv1 = ConvBNAct(3, dim, 3, rng, stride=2, act="gelu")
        self.conv2 = ConvBNAct(dim, dim, 1, rng, act="gelu")
        self.conv3 = ConvBNAct(dim, dim, 3, rng, stride=2, act=None)

    def forward(self, x: Tensor) -> Tensor:
        return self.conv3(self.conv2(self.conv1(x)))


def stem_embed(image: Tensor, stem: Stem) -> Tensor:
    """[B, H, W, 3] -> [B, ceil(H/4), ceil(W/4), C_1]"""
    if image.ndim == 3:
        image = F.reshape(image, (1, *image.shape))
    return stem(image)


def stage_transition(x: Tensor, stage: "HlgStage") -> Tensor:
    """
    Run only the first (stride-2) sub-layer of a stage: halves the grid and
    changes the width from C_{i-1} to C_i
    """
    return stage.pairs[0].plain(x)


class HlgStage(Module):
    """L_i / 2 layer pairs; in stages 2-4 the first DWMLP has stride 2"""

    def __init__(self, config: HlgConfig, index: int, in_dim: int, rng: np.random.Generator,
                 drop_rates: List[float]):
        super().__init__()
        st = config.stages[index]
        grid = _ceil_div(config.image_size, STAGE_STRIDES[index])
        pairs = []
        for j in range(st.depth // 2):
            blocks = []
            for k, dilation in enumerate((1, st.dilation)):
                first = j == 0 and k == 0
                blocks.append(HlgBlock(
                    in_dim=in_dim if first else st.channels,
                    dim=st.channels,
                    heads=st.heads,
                    window=st.window,
                    dilation=dilation,
                    mlp_ratio=config.mlp_ratio,
                    se_ratio=config.se_ratio,
                    stride=2 if first and index > 0 else 1,
                    rng=rng,
                    embedding=config.window_embedding,
                    global_bias=config.global_bias,
                    grid=(grid, grid),
                    drop_path=drop_rates[2 * j + k],
                ))
            pairs.append(HlgLayerPair(*blocks))
        self.pairs = ModuleList(pairs)

    def forward(self, x: Tensor) -> Tensor:
        for pair in self.pairs:
            x = pair(x)
        return x


class HlgBackbone(Module):
    """Stem plus four stages; `forward` returns the feature pyramid"""

    def __init__(self, config: HlgConfig, rng: np.random.Generator):
        super().__init__()
        config.validate()
        self.config = config
        total = sum(config.depths)
        rates = list(np.linspace(0.0, config.drop_path, total)) if total > 1 else [0.0]
        self.stem = Stem(config.stages[0].channels, rng)
        stages, start, in_dim = [], 0, config.stages[0].channels
        for i, st in enumerate(config.stages):
            stages.append(HlgStage(config, i, in_dim, rng, [float(r) for r in rates[start:start + st.depth]]))
            start += st.depth
            in_dim = st.channels
        self.stages = ModuleList(stages)

    def forward(self, images: Tensor) -> FeaturePyramid:
        with op_scope("stem"):
            x = stem_embed(images, self.stem)
        maps = []
        for i, stage in enumerate(self.stages):
            with op_scope(f"stage{i + 1}"):
                x = stage(x)
            maps.append(x)
        return FeaturePyramid(maps)


def forward_features(images: Tensor, backbone: HlgBackbone) -> FeaturePyramid:
    return backbone(images)


class HlgClassifier(Module):
    """Backbone -> LayerNorm -> global average pool -> Linear(C_4, K)"""

    def __init__(self, config: HlgConfig, rng: np.random.Generator):
        super().__init__()
        self.config = config
        self.backbone = HlgBackbone(config, rng)
        self.norm = LayerNorm(config.stages[-1].channels)
        self.fc = Linear(config.stages[-1].channels, config.num_classes, rng, tag="head")

    def forward(self, images: Tensor) -> Tensor:
        top = self.backbone(images)[-1]
        with op_scope("head"):
            return self.fc(F.global_avg_pool(self.norm(top)))


def forward_classify(images: Tensor, model: HlgClassifier) -> Tensor:
    """Logits [B, K]"""
    return model(images)


class HlgSegmenter(Module):
    """
    All four stages resized to stride 16 and concatenated, a linear fuse to
    C_3, one plain + dilated HLG pair, then a progressive-upsampling head
    """

    def __init__(self, config: HlgConfig, rng: np.random.Generator):
        super().__init__()
        self.config = config
        self.backbone = HlgBackbone(config, rng)
        s3 = config.stages[2]
        self.fuse = Linear(sum(config.channels), s3.channels, rng, tag="fuse")
        grid = _ceil_div(config.image_size, 16)
        bias = GlobalBias.RELATIVE if config.global_bias is GlobalBias.DENSE else config.global_bias
        blocks = [
            HlgBlock(s3.channels, s3.channels, s3.heads, config.seg_window, dilation,
                     config.mlp_ratio, config.se_ratio, 1, rng, config.window_embedding,
                     bias, (grid, grid))
            for dilation in (1, config.seg_dilation)
        ]
        self.pair = HlgLayerPair(*blocks)
        self.decoder = PupDecoder(s3.channels, config.num_classes, 16, config.seg_width, rng)
        self.fused_width: Optional[int] = None

    def forward(self, images: Tensor) -> SegmentationOutput:
        if images.ndim == 3:
            images = F.reshape(images, (1, *images.shape))
        b, h, w, _ = images.shape
        pyramid = self.backbone(images)
        gh, gw = _ceil_div(h, 16), _ceil_div(w, 16)
        with op_scope("fuse"):
            x = F.concat([F.bilinear_resize(m, gh, gw) for m in pyramid.maps], axis=-1)
            self.fused_width = x.shape[-1]
            x = self.fuse(x)
        with op_scope("seg_pair"):
            x = self.pair(x)
        with op_scope("decoder"):
            tokens = TokenSequence(F.reshape(x, (b, gh * gw, x.shape[-1])), (gh, gw))
            logits = self.decoder(tokens, (h, w))
        return SegmentationOutput(logits, [])

    def predict(self, images: Tensor) -> Tensor:
        return self.forward(images).logits


def forward_segment(images: Tensor, model: HlgSegmenter) -> SegmentationOutput:
    return model(images)
