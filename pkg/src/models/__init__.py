"""
Model definitions: SETR (encoder + decoders) and the HLG family
"""

import numpy as np

from .config import (
    DecoderConfig,
    DecoderKind,
    GlobalBias,
    HLG_VARIANTS,
    HlgConfig,
    HlgHead,
    HlgStageConfig,
    MlaPlan,
    ModelConfig,
    SETR_VARIANTS,
    SetrConfig,
    SetrEncoderConfig,
    WindowEmbedding,
    canonical_dict,
    config_from_dict,
    hlg_toy,
    hlg_variant,
    model_config,
    setr_toy,
    setr_variant,
)
from .hlg_backbone import FeaturePyramid, HlgBackbone, HlgClassifier, HlgSegmenter
from .setr_decoders import SegmentationOutput, SetrSegmenter
from .setr_encoder import PositionEmbedding, SetrEncoder, TokenSequence


def build_model(config: ModelConfig, seed: int = 0):
    """Instantiate the model a config describes, initialized from `seed`"""
    rng = np.random.default_rng(seed)
    if isinstance(config, SetrConfig):
        return SetrSegmenter(config, rng)
    if config.head is HlgHead.SEGMENT:
        return HlgSegmenter(config, rng)
    return HlgClassifier(config, rng)


__all__ = [
    'DecoderConfig',
    'DecoderKind',
    'GlobalBias',
    'HLG_VARIANTS',
    'HlgConfig',
    'HlgHead',
    'HlgStageConfig',
    'MlaPlan',
    'ModelConfig',
    'SETR_VARIANTS',
    'SetrConfig',
    'SetrEncoderConfig',
    'WindowEmbedding',
    'canonical_dict',
    'config_from_dict',
    'hlg_toy',
    'hlg_variant',
    'model_config',
    'setr_toy',
    'setr_variant',
    'build_model',
    'FeaturePyramid',
    'HlgBackbone',
    'HlgClassifier',
    'HlgSegmenter',
    'SegmentationOutput',
    'SetrSegmenter',
    'PositionEmbedding',
    'SetrEncoder',
    'TokenSequence',
]
