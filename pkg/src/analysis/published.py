"""
Published parameter and compute figures for the named variants

Compute figures are in multiply-accumulates (the tables call them FLOPs).
SETR figures are for 768x768 crops with 19 classes and auxiliary heads;
HLG figures are for 224x224 ImageNet classification.
"""

from dataclasses import dataclass
from typing import Dict, Optional

from ..core.errors import ConfigError
from ..models.config import ModelConfig, hlg_variant, setr_variant


@dataclass(frozen=True)
class PublishedFigures:
    params: float
    macs: Optional[float] = None
    param_tolerance: float = 0.02
    flop_tolerance: float = 0.10
    input_size: int = 224


PUBLISHED: Dict[str, PublishedFigures] = {
    "setr-naive-t-large": PublishedFigures(305.67e6, input_size=768),
    "setr-pup-t-large": PublishedFigures(318.31e6, input_size=768),
    "setr-mla-t-large": PublishedFigures(310.57e6, input_size=768),
    "setr-naive-t-base": PublishedFigures(87.69e6, input_size=768),
    "setr-pup-t-base": PublishedFigures(97.64e6, input_size=768),
    "setr-mla-t-base": PublishedFigures(92.59e6, input_size=768),
    "hlg-mobile": PublishedFigures(4.3e6, 0.9e9, param_tolerance=0.05),
    "hlg-tiny": PublishedFigures(11.0e6, 2.1e9, param_tolerance=0.05),
    "hlg-small": PublishedFigures(24.2e6, 4.7e9, param_tolerance=0.05),
    "hlg-medium": PublishedFigures(43.7e6, 9.0e9, param_tolerance=0.05),
    "hlg-large": PublishedFigures(84.2e6, 15.9e9, param_tolerance=0.05),
}


def published_config(key: str) -> ModelConfig:
    """The model config the published figures refer to"""
    if key not in PUBLISHED:
        raise ConfigError(f"No published figures for '{key}' (known: {sorted(PUBLISHED)})")
    if key.startswith("setr-"):
        _, decoder, backbone = key.split("-", 2)
        return setr_variant(decoder, backbone, num_classes=19, image_size=PUBLISHED[key].input_size)
    return hlg_variant(key, num_classes=1000, image_size=PUBLISHED[key].input_size)
