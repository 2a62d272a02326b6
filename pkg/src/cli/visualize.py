"""
Figure dumps for a trained model: position-embedding similarity, attention
rows and channel-mean feature maps

Every image is min-max normalized on its own and written as a binary PGM;
the functions also return the raw float arrays.
"""

import logging
from enum import Enum
from pathlib import Path
from typing import Dict, List, Optional, Tuple, Union

import numpy as np

from ..core.module import Module
from ..core.tensor import Tensor, get_default_dtype, no_grad
from ..models.hlg_backbone import HlgClassifier, HlgSegmenter
from ..models.hlg_layer import HlgBlock
from ..models.setr_decoders import SetrSegmenter
from ..reports.pnm import normalize_minmax, write_pgm

logger = logging.getLogger(__name__)


class Visual(Enum):
    POS_SIM = "pos-sim"
    ATTENTION = "attention"
    FEATURES = "features"


def _ceil_div(n: int, d: int) -> int:
    return -(-n // d)


def position_similarity(table: np.ndarray, grid: Tuple[int, int]) -> np.ndarray:
    """
    Cosine similarity of every position vector to every other, tiled

    Tile (i, j) of the [gh*gh, gw*gw] result is the (gh, gw) grid of
    similarities between patch (i, j) and all patches. Zero vectors have
    similarity 0 to everything.
    """
    gh, gw = grid
    table = np.asarray(table, dtype=np.float64)
    if table.shape[0] != gh * gw:
        raise ValueError(f"position table has {table.shape[0]} rows, grid {grid} needs {gh * gw}")
    norms = np.linalg.norm(table, axis=1, keepdims=True)
    unit = np.divide(table, norms, out=np.zeros_like(table), where=norms > 0)
    sims = unit @ unit.T
    # [gh, gw, gh, gw] -> rows (i, r), cols (j, c)
    return sims.reshape(gh, gw, gh, gw).transpose(0, 2, 1, 3).reshape(gh * gh, gw * gw)


def _check_point(point: Tuple[int, int], grid: Tuple[int, int]) -> int:
    r, c = point
    if not (0 <= r < grid[0] and 0 <= c < grid[1]):
        raise ValueError(f"query point ({r}, {c}) is outside the {grid[0]}x{grid[1]} token grid")
    return r * grid[1] + c


def _run(model: Module, image: np.ndarray) -> None:
    model.eval()
    batch = np.asarray(image, dtype=get_default_dtype())
    if batch.ndim == 3:
        batch = batch[None]
    with no_grad():
        model(Tensor(batch))


def hlg_blocks(model: Module) -> List[Tuple[int, HlgBlock]]:
    """Backbone blocks in execution order as (stage index, block)"""
    blocks = []
    for i, stage in enumerate(model.backbone.stages):
        for pair in stage.pairs:
            blocks.extend([(i, pair.plain), (i, pair.dilated)])
    return blocks


def hlg_stage_grid(image_hw: Tuple[int, int], stage: int) -> Tuple[int, int]:
    """Feature grid of a backbone stage (0-based) for an input size"""
    h, w = _ceil_div(_ceil_div(image_hw[0], 2), 2), _ceil_div(_ceil_div(image_hw[1], 2), 2)
    for _ in range(stage):
        h, w = _ceil_div(h, 2), _ceil_div(w, 2)
    return h, w


def attention_map(model: Module, image: np.ndarray, layer: int, head: int,
                  point: Tuple[int, int]) -> np.ndarray:
    """
    Attention row of one query position

    SETR: `layer` is the 1-based encoder layer, `point` a token-grid cell;
    the result is the [gh, gw] row over all tokens. HLG: `layer` is the
    1-based block index over the whole backbone, `point` a cell of that
    block's feature grid; the result is the row over the window-embedding
    grid of its global attention.

    Raises:
        ValueError: layer, head or point out of range, or an unsupported model
    """
    image_hw = np.asarray(image).shape[-3:-1]
    if isinstance(model, SetrSegmenter):
        layers = model.encoder.layers
        if not 1 <= layer <= len(layers):
            raise ValueError(f"layer {layer} is outside [1, {len(layers)}]")
        attn = layers[layer - 1].attn
        p = model.config.encoder.patch
        grid = (_ceil_div(image_hw[0], p), _ceil_div(image_hw[1], p))
        key_grid = grid
    elif isinstance(model, (HlgClassifier, HlgSegmenter)):
        blocks = hlg_blocks(model)
        if not 1 <= layer <= len(blocks):
            raise ValueError(f"layer {layer} is outside [1, {len(blocks)}]")
        stage, block = blocks[layer - 1]
        attn = block.attn
        grid = hlg_stage_grid(image_hw, stage)
        key_grid = (_ceil_div(grid[0], block.window), _ceil_div(grid[1], block.window))
    else:
        raise ValueError(f"attention maps are not available for {type(model).__name__}")
    if not 0 <= head < attn.heads:
        raise ValueError(f"head {head} is outside [0, {attn.heads})")
    query = _check_point(point, grid)

    attn.record_attention = True
    try:
        _run(model, image)
        weights = attn.last_attention if isinstance(model, SetrSegmenter) else attn.last_global
    finally:
        attn.record_attention = False
    row = np.asarray(weights[0, head, query], dtype=np.float64)
    return row.reshape(key_grid)


def feature_map(model: Module, image: np.ndarray, layer: int) -> np.ndarray:
    """
    Channel mean of one feature map: encoder layer output (SETR, 1-based
    layer) or backbone stage output (HLG, stage 1..4)
    """
    batch = np.asarray(image, dtype=get_default_dtype())
    if batch.ndim == 3:
        batch = batch[None]
    model.eval()
    with no_grad():
        if isinstance(model, SetrSegmenter):
            outputs = model.encoder(Tensor(batch))
            if not 1 <= layer <= len(outputs):
                raise ValueError(f"layer {layer} is outside [1, {len(outputs)}]")
            z = outputs[layer - 1]
            fmap = z.tokens.data[0].reshape(*z.grid, z.channels)
        elif isinstance(model, (HlgClassifier, HlgSegmenter)):
            pyramid = model.backbone(Tensor(batch))
            if not 1 <= layer <= len(pyramid):
                raise ValueError(f"stage {layer} is outside [1, {len(pyramid)}]")
            fmap = pyramid[layer - 1].data[0]
        else:
            raise ValueError(f"feature maps are not available for {type(model).__name__}")
    return np.asarray(fmap, dtype=np.float64).mean(axis=-1)


def visualize(model: Module, what: Union[str, Visual], out_dir: Union[str, Path],
              image: Optional[np.ndarray] = None, layer: int = 1, head: int = 0,
              point: Tuple[int, int] = (0, 0)) -> Dict[Path, np.ndarray]:
    """
    Write one figure into out_dir and return {path: raw array}

    Raises:
        ValueError: unknown `what`, missing image, or out-of-range selection
    """
    what = Visual(what)
    out = Path(out_dir)
    if what is Visual.POS_SIM:
        if not isinstance(model, SetrSegmenter):
            raise ValueError("pos-sim needs a model with a learned position table (SETR)")
        raw = position_similarity(model.encoder.pos_embed.data, model.config.encoder.pos_grid)
        path = out / "pos_sim.pgm"
    else:
        if image is None:
            raise ValueError(f"'{what.value}' needs an input image")
        if what is Visual.ATTENTION:
            raw = attention_map(model, image, layer, head, point)
            path = out / f"attention_l{layer}_h{head}_r{point[0]}_c{point[1]}.pgm"
        else:
            raw = feature_map(model, image, layer)
            path = out / f"features_l{layer}.pgm"
    write_pgm(path, normalize_minmax(raw))
    logger.info("Wrote %s (%dx%d)", path, raw.shape[0], raw.shape[1])
    return {path: raw}
