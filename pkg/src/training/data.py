"""
Desk-scale corpora and augmentation

Synthetic segmentation samples are colored shapes on a textured background
with exact masks; every sample is a pure function of (seed, index).
"""

import logging
from dataclasses import dataclass, replace
from enum import Enum
from pathlib import Path
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np

from ..core import functional as F
from ..core.errors import ConfigError
from ..core.tensor import Tensor, no_grad
from ..reports.pnm import read_pnm

logger = logging.getLogger(__name__)

IGNORE_INDEX = 255


class DataKind(Enum):
    SYNTH_SEG = "synth-seg"
    SYNTH_CLS = "synth-cls"
    IMAGE_DIR = "image-dir"


@dataclass
class DataConfig:
    """
    Corpus description

    Attributes:
        kind: synthetic segmentation, synthetic classification or an image directory
        num_samples / height / width / num_classes / seed: synthetic corpus shape
        path: directory with images/*.ppm and masks/*.pgm (image-dir only)
        crop_size: training crop; None keeps the full image size
        augment: random resize / crop / flip during training
        eval_samples: how many corpus samples are scored at each eval interval
    """
    kind: DataKind = DataKind.SYNTH_SEG
    num_samples: int = 16
    height: int = 64
    width: int = 64
    num_classes: int = 4
    seed: int = 0
    path: Optional[str] = None
    crop_size: Optional[int] = None
    augment: bool = True
    eval_samples: int = 4


@dataclass
class SynthSegSample:
    """Image [H, W, 3] float32 in [0, 1] and mask [H, W] of class ids"""
    image: np.ndarray
    mask: np.ndarray
    seed: int = 0
    index: int = 0


@dataclass
class ClsSample:
    image: np.ndarray
    label: int
    seed: int = 0
    index: int = 0


Sample = Union[SynthSegSample, ClsSample]


def class_palette(num_classes: int, seed: int) -> np.ndarray:
    """One RGB colour per class, shared by every sample of a corpus"""
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(1,)))
    return rng.uniform(0.1, 0.9, size=(num_classes, 3))


def _random_shape(rng: np.random.Generator, height: int, width: int, kind: Optional[int] = None) -> np.ndarray:
    """Boolean mask of a rectangle or ellipse; never empty"""
    side = min(height, width)
    kind = int(rng.integers(0, 2)) if kind is None else kind
    yy, xx = np.mgrid[0:height, 0:width]
    if kind == 0:
        h = int(rng.integers(max(2, side // 5), max(3, side // 2) + 1))
        w = int(rng.integers(max(2, side // 5), max(3, side // 2) + 1))
        top = int(rng.integers(0, max(1, height - h + 1)))
        left = int(rng.integers(0, max(1, width - w + 1)))
        return (yy >= top) & (yy < top + h) & (xx >= left) & (xx < left + w)
    cy, cx = rng.uniform(0, height - 1), rng.uniform(0, width - 1)
    ry = rng.uniform(max(1.5, side / 10), max(2.0, side / 4))
    rx = rng.uniform(max(1.5, side / 10), max(2.0, side / 4))
    shape = ((yy - cy) / ry) ** 2 + ((xx - cx) / rx) ** 2 <= 1.0
    shape[int(round(cy)), int(round(cx))] = True
    return shape


def _texture(rng: np.random.Generator, height: int, width: int) -> np.ndarray:
    yy, xx = np.mgrid[0:height, 0:width]
    fy, fx = rng.uniform(0.05, 0.4, size=2)
    phase = rng.uniform(0, 2 * np.pi)
    return 0.08 * np.sin(fy * yy + fx * xx + phase)


def synth_seg_sample(index: int, height: int, width: int, num_classes: int, seed: int) -> SynthSegSample:
    """
    One shapes image; class (index mod (K-1)) + 1 is always drawn, on top
    """
    if num_classes < 2:
        raise ValueError(f"synthetic segmentation needs K >= 2, got {num_classes}")
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(0, index)))
    palette = class_palette(num_classes, seed)
    texture = _texture(rng, height, width)
    image = palette[0][None, None, :] + texture[..., None]
    mask = np.zeros((height, width), dtype=np.int64)
    extra = int(rng.integers(0, 3))
    classes = [int(c) for c in rng.integers(1, num_classes, size=extra)]
    classes.append(index % (num_classes - 1) + 1)
    for cls in classes:
        region = _random_shape(rng, height, width)
        mask[region] = cls
        image[region] = palette[cls] + 0.3 * texture[region][:, None]
    image = image + rng.normal(0.0, 0.02, size=image.shape)
    return SynthSegSample(np.clip(image, 0.0, 1.0).astype(np.float32), mask, seed, index)


def synth_cls_sample(index: int, height: int, width: int, num_classes: int, seed: int) -> ClsSample:
    """One shape whose colour and outline are fixed by its class (index mod K)"""
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(2, index)))
    palette = class_palette(num_classes, seed)
    label = index % num_classes
    image = 0.5 + _texture(rng, height, width)[..., None] + np.zeros((1, 1, 3))
    region = _random_shape(rng, height, width, kind=label % 2)
    image[region] = palette[label]
    image = image + rng.normal(0.0, 0.02, size=image.shape)
    return ClsSample(np.clip(image, 0.0, 1.0).astype(np.float32), label, seed, index)


def synth_seg_dataset(n: int, height: int, width: int, num_classes: int, seed: int) -> List[SynthSegSample]:
    """Reproducible corpus of n shapes images"""
    if num_classes < 2:
        raise ValueError(f"synthetic segmentation needs K >= 2, got {num_classes}")
    return [synth_seg_sample(i, height, width, num_classes, seed) for i in range(n)]


def synth_cls_dataset(n: int, height: int, width: int, num_classes: int, seed: int) -> List[ClsSample]:
    return [synth_cls_sample(i, height, width, num_classes, seed) for i in range(n)]


def load_image_dir(path: Union[str, Path]) -> List[SynthSegSample]:
    """
    images/<name>.ppm with masks/<name>.pgm (grey value = class id)

    Raises:
        ConfigError: missing directory or unmatched image/mask pair
    """
    root = Path(path)
    images_dir, masks_dir = root / "images", root / "masks"
    if not images_dir.is_dir() or not masks_dir.is_dir():
        raise ConfigError(f"{root} must contain 'images' and 'masks' directories")
    samples = []
    for i, image_path in enumerate(sorted(images_dir.glob("*.ppm"))):
        mask_path = masks_dir / f"{image_path.stem}.pgm"
        if not mask_path.exists():
            raise ConfigError(f"no mask {mask_path.name} for image {image_path.name}")
        image = read_pnm(image_path).astype(np.float32) / 255.0
        mask = read_pnm(mask_path).astype(np.int64)
        if image.shape[:2] != mask.shape:
            raise ConfigError(f"{image_path.name}: image {image.shape[:2]} vs mask {mask.shape}")
        samples.append(SynthSegSample(image, mask, 0, i))
    if not samples:
        raise ConfigError(f"no .ppm images found in {images_dir}")
    logger.info("Loaded %d image/mask pairs from %s", len(samples), root)
    return samples


def build_corpus(config: DataConfig) -> List[Sample]:
    if config.kind is DataKind.SYNTH_SEG:
        return synth_seg_dataset(config.num_samples, config.height, config.width,
                                 config.num_classes, config.seed)
    if config.kind is DataKind.SYNTH_CLS:
        return synth_cls_dataset(config.num_samples, config.height, config.width,
                                 config.num_classes, config.seed)
    if not config.path:
        raise ConfigError("data kind 'image-dir' needs a path")
    return load_image_dir(config.path)


# ---------------------------------------------------------------------------
# augmentation
# ---------------------------------------------------------------------------
def resize_image(image: np.ndarray, height: int, width: int) -> np.ndarray:
    with no_grad():
        return F.bilinear_resize(Tensor(image), height, width).data


def resize_mask(mask: np.ndarray, height: int, width: int) -> np.ndarray:
    """Nearest neighbour with half-pixel centres; never invents labels"""
    rows = np.minimum(((np.arange(height) + 0.5) * mask.shape[0] / height).astype(np.int64), mask.shape[0] - 1)
    cols = np.minimum(((np.arange(width) + 0.5) * mask.shape[1] / width).astype(np.int64), mask.shape[1] - 1)
    return mask[rows[:, None], cols[None, :]]


def flip(sample: SynthSegSample) -> SynthSegSample:
    """Horizontal flip of image and mask"""
    return replace(sample, image=sample.image[:, ::-1].copy(), mask=sample.mask[:, ::-1].copy())


def pad_to(sample: SynthSegSample, height: int, width: int) -> SynthSegSample:
    """Pad bottom/right: image with 0, mask with the ignore index"""
    ph, pw = max(0, height - sample.image.shape[0]), max(0, width - sample.image.shape[1])
    if ph == 0 and pw == 0:
        return sample
    image = np.pad(sample.image, ((0, ph), (0, pw), (0, 0)))
    mask = np.pad(sample.mask, ((0, ph), (0, pw)), constant_values=IGNORE_INDEX)
    return replace(sample, image=image, mask=mask)


def augment(sample: SynthSegSample, rng: np.random.Generator, crop_size: Optional[Tuple[int, int]] = None,
            ratio_range: Sequence[float] = (0.5, 2.0), flip_prob: float = 0.5) -> SynthSegSample:
    """
    Random resize (ratio in ratio_range), pad, random crop, random flip

    The mask follows the image with nearest-neighbour resizing, so its label
    set can only shrink (plus the ignore index from padding).
    """
    h, w = sample.mask.shape
    crop = (h, w) if crop_size is None else tuple(crop_size)
    ratio = float(rng.uniform(ratio_range[0], ratio_range[1]))
    nh, nw = max(1, int(round(h * ratio))), max(1, int(round(w * ratio)))
    if (nh, nw) != (h, w):
        sample = replace(sample, image=resize_image(sample.image, nh, nw), mask=resize_mask(sample.mask, nh, nw))
    sample = pad_to(sample, crop[0], crop[1])
    sh, sw = sample.mask.shape
    top = int(rng.integers(0, sh - crop[0] + 1))
    left = int(rng.integers(0, sw - crop[1] + 1))
    sample = replace(
        sample,
        image=sample.image[top:top + crop[0], left:left + crop[1]].copy(),
        mask=sample.mask[top:top + crop[0], left:left + crop[1]].copy(),
    )
    if rng.random() < flip_prob:
        sample = flip(sample)
    return sample


def collate(samples: Sequence[Sample]) -> Tuple[np.ndarray, np.ndarray]:
    """Stack into images [B, H, W, 3] and masks [B, H, W] (or labels [B])"""
    images = np.stack([s.image for s in samples])
    if isinstance(samples[0], ClsSample):
        return images, np.array([s.label for s in samples], dtype=np.int64)
    return images, np.stack([s.mask for s in samples])
