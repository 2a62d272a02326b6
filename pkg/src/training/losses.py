"""
Training losses
"""

from typing import Optional

import numpy as np

from ..core import functional as F
from ..core.errors import ShapeError
from ..core.tensor import Tensor
from ..models.setr_decoders import SegmentationOutput
from .data import IGNORE_INDEX


def seg_loss(output: SegmentationOutput, mask: np.ndarray, aux_weight: float = 0.4,
             ignore_index: Optional[int] = IGNORE_INDEX) -> Tensor:
    """
    Pixel-wise cross-entropy on the main logits plus aux_weight times the
    sum of the auxiliary cross-entropies

    Raises:
        ShapeError: logits and mask disagree spatially
        ValueError: a label outside [0, K) that is not the ignore index
    """
    mask = np.asarray(mask)
    logits = output.logits
    if mask.ndim == logits.ndim - 2:
        mask = mask[None]
    if logits.shape[:-1] != mask.shape:
        raise ShapeError(f"logits {logits.shape} do not match mask {mask.shape}")
    loss = F.cross_entropy(logits, mask, ignore_index)
    if aux_weight and output.aux_logits:
        aux = [F.cross_entropy(a, mask, ignore_index) for a in output.aux_logits]
        total = aux[0]
        for term in aux[1:]:
            total = F.add(total, term)
        loss = F.add(loss, F.scale(total, aux_weight))
    return loss


def cls_loss(logits: Tensor, labels: np.ndarray) -> Tensor:
    """Mean cross-entropy over a batch of [B, K] logits"""
    return F.cross_entropy(logits, np.asarray(labels), ignore_index=None)
