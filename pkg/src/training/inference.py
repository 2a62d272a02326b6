"""
Whole-image and sliding-window inference
"""

from contextlib import contextmanager
from typing import Callable, Iterator, List, Tuple, Union

import numpy as np

from ..core.tensor import Tensor, no_grad

Predictor = Callable[[Tensor], Tensor]


def _predictor(model) -> Predictor:
    return getattr(model, "predict", model)


def _batched(image: np.ndarray) -> np.ndarray:
    image = np.asarray(image)
    return image[None] if image.ndim == 3 else image


@contextmanager
def _eval_mode(model) -> Iterator[None]:
    """Run the block with the model in eval mode, then restore its previous mode"""
    was_training = getattr(model, "training", None)
    if was_training is not None:
        model.eval()
    try:
        yield
    finally:
        if was_training:
            model.train()


def predict_whole(model, image: np.ndarray) -> np.ndarray:
    """Logits [B, H, W, K] from one eval-mode forward over the full image"""
    with _eval_mode(model), no_grad():
        return _predictor(model)(Tensor(_batched(image))).data


def window_starts(size: int, window: int, stride: int) -> List[int]:
    """Grid of window origins; the last window is shifted back to end at the border"""
    window = min(window, size)
    count = max(size - window + stride - 1, 0) // stride + 1
    return sorted({max(min(i * stride + window, size) - window, 0) for i in range(count)})


def sliding_window_infer(model, image: np.ndarray, window: Union[int, Tuple[int, int]],
                         stride: Union[int, Tuple[int, int]]) -> np.ndarray:
    """
    Average logits over overlapping windows in eval mode

    Each pixel's logits are the sum over the windows that cover it divided
    by how many windows cover it. An image smaller than the window is
    zero-padded at the bottom/right up to the window, so every forward sees
    a full window; the padded logits are cropped off.
    """
    images = _batched(image)
    b, h, w, _ = images.shape
    wh, ww = (window, window) if isinstance(window, int) else window
    sh, sw = (stride, stride) if isinstance(stride, int) else stride
    if sh < 1 or sw < 1:
        raise ValueError(f"stride must be positive, got {(sh, sw)}")
    if wh < 1 or ww < 1:
        raise ValueError(f"window must be positive, got {(wh, ww)}")
    hp, wp = max(h, wh), max(w, ww)
    if (hp, wp) != (h, w):
        images = np.pad(images, ((0, 0), (0, hp - h), (0, wp - w), (0, 0)))
    predict = _predictor(model)
    total, counts = None, np.zeros((1, hp, wp, 1), dtype=np.float64)
    with _eval_mode(model), no_grad():
        for top in window_starts(hp, wh, sh):
            for left in window_starts(wp, ww, sw):
                crop = images[:, top:top + wh, left:left + ww]
                logits = predict(Tensor(crop)).data
                if total is None:
                    total = np.zeros((b, hp, wp, logits.shape[-1]), dtype=np.float64)
                total[:, top:top + wh, left:left + ww] += logits
                counts[:, top:top + wh, left:left + ww] += 1.0
    out = (total / counts)[:, :h, :w]
    return out.astype(images.dtype if images.dtype.kind == "f" else np.float32)
