"""
SETR encoder: image sequentialization, learned positions and a stack of
pre-norm transformer layers whose every output is kept for the decoders
"""

import logging
import math
from dataclasses import dataclass
from typing import List, Optional, Tuple

import numpy as np

from ..core import functional as F
from ..core.errors import ShapeError
from ..core.module import Dropout, DropPath, LayerNorm, Linear, Module, ModuleList, Parameter, trunc_normal
from ..core.profiler import op_scope
from ..core.tensor import Tensor
from .config import SetrEncoderConfig

logger = logging.getLogger(__name__)


@dataclass
class TokenSequence:
    """Tokens [B, L, C] laid out row-major over a (h, w) grid"""
    tokens: Tensor
    grid: Tuple[int, int]

    def __post_init__(self):
        h, w = self.grid
        if self.tokens.ndim != 3 or self.tokens.shape[1] != h * w:
            raise ShapeError(f"tokens {self.tokens.shape} do not match grid {self.grid}")

    @property
    def length(self) -> int:
        return self.tokens.shape[1]

    @property
    def channels(self) -> int:
        return self.tokens.shape[2]


@dataclass
class PositionEmbedding:
    """Position table [L, C] for a native (h, w) grid"""
    table: Tensor
    native_grid: Tuple[int, int]

    def __post_init__(self):
        h, w = self.native_grid
        if self.table.ndim != 2 or self.table.shape[0] != h * w:
            raise ShapeError(f"position table {self.table.shape} does not cover grid {self.native_grid}")


# ---------------------------------------------------------------------------
# attention building blocks (shared with the HLG layer)
# ---------------------------------------------------------------------------
def split_heads(x: Tensor, heads: int) -> Tensor:
    """[..., N, C] -> [..., heads, N, C/heads]"""
    *lead, n, c = x.shape
    x = F.reshape(x, (*lead, n, heads, c // heads))
    k = len(lead)
    return F.permute(x, (*range(k), k + 1, k, k + 2))


def merge_heads(x: Tensor) -> Tensor:
    """[..., heads, N, d] -> [..., N, heads * d]"""
    *lead, h, n, d = x.shape
    k = len(lead)
    x = F.permute(x, (*range(k), k + 1, k, k + 2))
    return F.reshape(x, (*lead, n, h * d))


def scaled_dot_attention(q: Tensor, k: Tensor, v: Tensor, bias: Optional[Tensor] = None,
                         mask: Optional[np.ndarray] = None) -> Tuple[Tensor, Tensor]:
    """
    softmax(q k^T / sqrt(d) + bias) v over the last two axes

    Args:
        q: [..., N, d]
        k, v: [..., M, d]
        bias: added to the [..., N, M] logits; shape must be a trailing suffix
        mask: bool [..., N, M] (broadcastable); False keys are excluded

    Returns:
        (output [..., N, d], attention weights [..., N, M])
    """
    d = q.shape[-1]
    logits = F.scale(F.matmul(q, F.transpose(k), tag="attn"), 1.0 / math.sqrt(d))
    if bias is not None:
        logits = F.add(logits, bias)
    weights = F.softmax(logits, axis=-1, mask=mask)
    return F.matmul(weights, v, tag="attn"), weights


class MultiHeadAttention(Module):
    """Fused QKV projection, m heads of scaled dot-product attention, output projection"""

    def __init__(self, dim: int, heads: int, rng: np.random.Generator, dropout: float = 0.0):
        super().__init__()
        self.heads = heads
        self.qkv = Linear(dim, 3 * dim, rng, tag="qkv")
        self.proj = Linear(dim, dim, rng, tag="proj")
        self.drop = Dropout(dropout)
        self.record_attention = False
        self.last_attention: Optional[np.ndarray] = None

    def forward(self, x: Tensor) -> Tensor:
        b, n, c = x.shape
        qkv = F.reshape(self.qkv(x), (b, n, 3, self.heads, c // self.heads))
        qkv = F.permute(qkv, (2, 0, 3, 1, 4))
        q, k, v = qkv[0], qkv[1], qkv[2]
        out, weights = scaled_dot_attention(q, k, v)
        if self.record_attention:
            self.last_attention = weights.data.copy()
        return self.drop(self.proj(merge_heads(out)))


# ---------------------------------------------------------------------------
# operations
# ---------------------------------------------------------------------------
def sequentialize(image: Tensor, patch: int, proj: Tensor, bias: Optional[Tensor] = None) -> TokenSequence:
    """
    Split an image into P x P patches in row-major order and project each

    Args:
        image: [H, W, 3] or [B, H, W, 3]
        patch: P; H and W must be multiples of P
        proj: [3 P^2, C]; each patch is flattened in (row, col, channel) order
        bias: optional [C]

    Raises:
        ShapeError: H or W is not a multiple of P
    """
    if image.ndim == 3:
        image = F.reshape(image, (1, *image.shape))
    b, h, w, c = image.shape
    if h % patch or w % patch:
        raise ShapeError(f"image {h}x{w} is not divisible by patch size {patch}")
    gh, gw = h // patch, w // patch
    x = F.reshape(image, (b, gh, patch, gw, patch, c))
    x = F.permute(x, (0, 1, 3, 2, 4, 5))
    x = F.reshape(x, (b, gh * gw, patch * patch * c))
    return TokenSequence(F.linear(x, proj, bias, tag="patch"), (gh, gw))


def interpolate_positions(pe: PositionEmbedding, new_grid: Tuple[int, int]) -> PositionEmbedding:
    """Bilinearly resize the position table as a (h, w, C) map"""
    new_grid = (int(new_grid[0]), int(new_grid[1]))
    if new_grid[0] < 1 or new_grid[1] < 1:
        raise ShapeError(f"position grid {new_grid} must be positive")
    if new_grid == tuple(pe.native_grid):
        return pe
    h, w = pe.native_grid
    c = pe.table.shape[1]
    grid = F.reshape(pe.table, (h, w, c))
    resized = F.bilinear_resize(grid, *new_grid)
    return PositionEmbedding(F.reshape(resized, (new_grid[0] * new_grid[1], c)), new_grid)


def add_positions(seq: TokenSequence, pe: PositionEmbedding, interpolate: bool = False) -> TokenSequence:
    """
    E = tokens + positions

    Raises:
        ShapeError: the grids differ and interpolation was not requested
    """
    if tuple(seq.grid) != tuple(pe.native_grid):
        if not interpolate:
            raise ShapeError(
                f"token grid {seq.grid} does not match position grid {pe.native_grid}; "
                f"pass interpolate=True to resize the table"
            )
        pe = interpolate_positions(pe, seq.grid)
    return TokenSequence(F.add(seq.tokens, pe.table), seq.grid)


class TransformerLayer(Module):
    """Pre-norm MSA then pre-norm MLP, each with an un-normalized residual"""

    def __init__(self, dim: int, heads: int, mlp_ratio: float, rng: np.random.Generator,
                 dropout: float = 0.0, drop_path: float = 0.0):
        super().__init__()
        hidden = int(dim * mlp_ratio)
        self.norm1 = LayerNorm(dim)
        self.attn = MultiHeadAttention(dim, heads, rng, dropout)
        self.norm2 = LayerNorm(dim)
        self.fc1 = Linear(dim, hidden, rng, tag="mlp")
        self.fc2 = Linear(hidden, dim, rng, tag="mlp")
        self.drop = Dropout(dropout)
        self.drop_path = DropPath(drop_path)

    def forward(self, z: TokenSequence) -> TokenSequence:
        x = z.tokens
        with op_scope("attn"):
            x = F.add(x, self.drop_path(self.attn(self.norm1(x))))
        with op_scope("mlp"):
            h = self.drop(F.gelu(self.fc1(self.norm2(x))))
            x = F.add(x, self.drop_path(self.drop(self.fc2(h))))
        return TokenSequence(x, z.grid)


def transformer_layer(z: TokenSequence, layer: TransformerLayer) -> TokenSequence:
    if z.channels != layer.norm1.weight.shape[0]:
        raise ShapeError(f"token width {z.channels} vs layer width {layer.norm1.weight.shape[0]}")
    return layer(z)


class SetrEncoder(Module):
    """
    Patch projection + position table + L_e transformer layers

    `forward` returns every layer output Z^1..Z^{L_e}; no final norm is
    applied here.
    """

    def __init__(self, config: SetrEncoderConfig, rng: np.random.Generator):
        super().__init__()
        config.validate()
        self.config = config
        p, c = config.patch, config.hidden
        self.patch_embed = Linear(3 * p * p, c, rng, tag="patch")
        gh, gw = config.pos_grid
        self.pos_embed = Parameter(trunc_normal(rng, (gh * gw, c)))
        rates = np.linspace(0.0, config.drop_path, config.layers) if config.layers > 1 else [0.0]
        self.layers = ModuleList(
            TransformerLayer(c, config.heads, config.mlp_ratio, rng, config.dropout, float(r))
            for r in rates
        )

    @property
    def positions(self) -> PositionEmbedding:
        return PositionEmbedding(self.pos_embed, self.config.pos_grid)

    def embed(self, image: Tensor, use_positions: bool = True) -> TokenSequence:
        with op_scope("patch_embed"):
            seq = sequentialize(image, self.config.patch, self.patch_embed.weight, self.patch_embed.bias)
        if use_positions:
            seq = add_positions(seq, self.positions, interpolate=True)
        return seq

    def forward(self, image: Tensor, use_positions: bool = True) -> List[TokenSequence]:
        z = self.embed(image, use_positions)
        outputs: List[TokenSequence] = []
        with op_scope("encoder"):
            for layer in self.layers:
                z = transformer_layer(z, layer)
                outputs.append(z)
        return outputs


def encode(image: Tensor, encoder: SetrEncoder) -> List[TokenSequence]:
    """All layer outputs Z^1..Z^{L_e} for an image batch"""
    return encoder(image)
