"""
Hierarchical local-global layer

Window partitioning (plain and dilated), windowed local attention with a
relative bias, window-embedding global attention, the shared-projection
query fixup and the DWMLP block. Feature maps are [B, H, W, C] tensors.
"""

import logging
from dataclasses import dataclass
from typing import Dict, Optional, Tuple

import numpy as np

from ..core import functional as F
from ..core.errors import ShapeError
from ..core.module import Conv2d, DropPath, LayerNorm, Linear, Module, Parameter, trunc_normal
from ..core.profiler import op_scope
from ..core.tensor import Tensor
from .config import GlobalBias, WindowEmbedding
from .setr_encoder import merge_heads, scaled_dot_attention, split_heads

logger = logging.getLogger(__name__)


def _ceil_to(n: int, unit: int) -> int:
    return -(-n // unit) * unit


@dataclass
class WindowPartition:
    """
    Windows [B * num_windows, R*R, C] cut from a [B, H, W, C] map

    Window order is (block row, row phase, block col, col phase); with D == 1
    the phases vanish and windows are contiguous R x R tiles in row-major
    order. `valid` marks positions that come from the unpadded map.
    """
    windows: Tensor
    batch: int
    grid: Tuple[int, int]
    padded: Tuple[int, int]
    window: int
    dilation: int
    valid: np.ndarray

    @property
    def blocks(self) -> Tuple[int, int]:
        unit = self.window * self.dilation
        return self.padded[0] // unit, self.padded[1] // unit

    @property
    def num_windows(self) -> int:
        nb, nbw = self.blocks
        return nb * nbw * self.dilation * self.dilation

    def with_windows(self, windows: Tensor) -> "WindowPartition":
        """Same layout, different per-window content (e.g. projected queries)"""
        return WindowPartition(windows, self.batch, self.grid, self.padded, self.window,
                               self.dilation, self.valid)


def _partition_array(x: np.ndarray, window: int, dilation: int) -> np.ndarray:
    """numpy twin of window_partition for masks: [Hp, Wp] -> [num_windows, R*R]"""
    hp, wp = x.shape
    unit = window * dilation
    r, d = window, dilation
    y = x.reshape(hp // unit, r, d, wp // unit, r, d)
    y = y.transpose(0, 2, 3, 5, 1, 4)
    return y.reshape(-1, r * r)


def window_partition(x: Tensor, window: int, dilation: int = 1) -> WindowPartition:
    """
    Cut a map into R x R windows; with dilation D a window gathers positions
    spaced D apart

    Position (r, c) inside a block of R*D rows/cols lands in window phase
    (r mod D, c mod D) at in-window index (r div D, c div D). Maps whose
    extents are not multiples of R*D are zero-padded.
    """
    if window < 1 or dilation < 1:
        raise ShapeError(f"window {window} and dilation {dilation} must be >= 1")
    if x.ndim == 3:
        x = F.reshape(x, (1, *x.shape))
    b, h, w, c = x.shape
    unit = window * dilation
    hp, wp = _ceil_to(h, unit), _ceil_to(w, unit)
    x = F.pad(x, ((0, 0), (0, hp - h), (0, wp - w), (0, 0)))
    r, d = window, dilation
    y = F.reshape(x, (b, hp // unit, r, d, wp // unit, r, d, c))
    y = F.permute(y, (0, 1, 3, 4, 6, 2, 5, 7))
    y = F.reshape(y, (-1, r * r, c))
    mask = np.zeros((hp, wp), dtype=bool)
    mask[:h, :w] = True
    return WindowPartition(y, b, (h, w), (hp, wp), window, dilation, _partition_array(mask, r, d))


def window_assemble(p: WindowPartition) -> Tensor:
    """Exact inverse of window_partition; padding is cropped"""
    r, d = p.window, p.dilation
    nb, nbw = p.blocks
    c = p.windows.shape[-1]
    expected = (p.batch * p.num_windows, r * r)
    if p.windows.ndim != 3 or p.windows.shape[:2] != expected:
        raise ShapeError(f"windows {p.windows.shape} do not match partition metadata {expected}")
    y = F.reshape(p.windows, (p.batch, nb, d, nbw, d, r, r, c))
    y = F.permute(y, (0, 1, 5, 2, 3, 6, 4, 7))
    y = F.reshape(y, (p.batch, p.padded[0], p.padded[1], c))
    h, w = p.grid
    if (h, w) != p.padded:
        y = y[:, :h, :w, :]
    return y


def local_relative_index(window: int) -> np.ndarray:
    """[R^2 * R^2] indices into a (2R-1)^2 table of (drow, dcol) offsets"""
    coords = np.stack(np.meshgrid(np.arange(window), np.arange(window), indexing="ij")).reshape(2, -1)
    rel = coords[:, :, None] - coords[:, None, :] + (window - 1)
    return (rel[0] * (2 * window - 1) + rel[1]).reshape(-1)


def global_relative_index(grid: Tuple[int, int], window: int) -> np.ndarray:
    """
    [N * G] indices into a (4R-1)^2 table

    The offset of query (i, j) to window (a, b) is measured from the window
    centre (aR + R//2, bR + R//2) and clipped to +-(2R-1).
    """
    h, w = grid
    gh, gw = -(-h // window), -(-w // window)
    limit = 2 * window - 1
    rows = np.arange(gh) * window + window // 2
    cols = np.arange(gw) * window + window // 2
    dr = np.clip(np.arange(h)[:, None] - rows[None, :], -limit, limit) + limit
    dc = np.clip(np.arange(w)[:, None] - cols[None, :], -limit, limit) + limit
    idx = dr[:, None, :, None] * (2 * limit + 1) + dc[None, :, None, :]
    return idx.reshape(-1)


class HlgAttention(Module):
    """
    One projection set shared by local and global attention

    Holds the fused QKV and output projections, the local relative-bias
    table, the global bias, the query-fixup depth-wise kernel and, for the
    dwconv window-embedding mode, the embedding conv.
    """

    def __init__(self, dim: int, heads: int, window: int, dilation: int, rng: np.random.Generator,
                 embedding: WindowEmbedding = WindowEmbedding.AVG,
                 global_bias: GlobalBias = GlobalBias.RELATIVE,
                 grid: Optional[Tuple[int, int]] = None, drop_path: float = 0.0):
        super().__init__()
        self.dim, self.heads, self.window, self.dilation = dim, heads, window, dilation
        self.embedding, self.global_bias_mode = embedding, global_bias
        self.qkv = Linear(dim, 3 * dim, rng, tag="qkv")
        self.proj = Linear(dim, dim, rng, tag="proj")
        self.local_bias = Parameter(trunc_normal(rng, ((2 * window - 1) ** 2, heads)))
        self._local_index = local_relative_index(window)
        if global_bias is GlobalBias.RELATIVE:
            self.global_bias = Parameter(trunc_normal(rng, ((4 * window - 1) ** 2, heads)))
        elif global_bias is GlobalBias.DENSE:
            if grid is None:
                raise ShapeError("dense global bias needs the feature grid at construction")
            n = grid[0] * grid[1]
            g = -(-grid[0] // window) * -(-grid[1] // window)
            self.global_bias = Parameter(trunc_normal(rng, (heads, n, g)))
        else:
            self.global_bias = None
        self.grid = grid
        self.fixup = Conv2d(dim, dim, 3, rng, padding=1, groups=dim, bias=False, zero_init=True)
        if embedding is WindowEmbedding.DWCONV:
            self.embed_conv = Conv2d(dim, dim, window, rng, stride=window, groups=dim)
        else:
            self.embed_conv = None
        self.drop_path = DropPath(drop_path)
        self.record_attention = False
        self.last_local: Optional[np.ndarray] = None
        self.last_global: Optional[np.ndarray] = None
        self._global_index: Dict[Tuple[int, int], np.ndarray] = {}

    def local_bias_matrix(self) -> Tensor:
        """B_W as [heads, R^2, R^2]"""
        n = self.window * self.window
        b = F.take(self.local_bias, self._local_index, axis=0)
        return F.permute(F.reshape(b, (n, n, self.heads)), (2, 0, 1))

    def global_bias_matrix(self, grid: Tuple[int, int]) -> Optional[Tensor]:
        """B_G as [heads, N, G] for a feature grid"""
        if self.global_bias is None:
            return None
        n = grid[0] * grid[1]
        g = -(-grid[0] // self.window) * -(-grid[1] // self.window)
        if self.global_bias_mode is GlobalBias.DENSE:
            if tuple(grid) != tuple(self.grid):
                raise ShapeError(f"dense global bias was built for grid {self.grid}, got {grid}")
            return self.global_bias
        if grid not in self._global_index:
            self._global_index[grid] = global_relative_index(grid, self.window)
        b = F.take(self.global_bias, self._global_index[grid], axis=0)
        return F.permute(F.reshape(b, (n, g, self.heads)), (2, 0, 1))

    def kv_weights(self) -> Tuple[Tensor, Tensor]:
        """The K and V columns of the shared projection"""
        c = self.dim
        return self.qkv.weight[:, c:], self.qkv.bias[c:]

    def q_weights(self) -> Tuple[Tensor, Tensor]:
        c = self.dim
        return self.qkv.weight[:, :c], self.qkv.bias[:c]


@dataclass
class LocalResult:
    """Z_L plus the window-layout queries and values reused by global attention"""
    z_l: Tensor
    q_w: WindowPartition
    v_w: WindowPartition


def local_attention(p: WindowPartition, w: HlgAttention, residual: Optional[Tensor] = None,
                    use_bias: bool = True) -> LocalResult:
    """
    Multi-head attention inside every window, with B_W and a residual

    Args:
        p: partitioned (normalized) input
        w: shared attention weights
        residual: map added to the assembled output; defaults to assemble(p)
        use_bias: add the local relative bias

    Returns:
        LocalResult with Z_L [B, H, W, C]
    """
    bn, n, c = p.windows.shape
    if c != w.dim:
        raise ShapeError(f"window width {c} vs attention width {w.dim}")
    if n != w.window * w.window:
        raise ShapeError(f"windows hold {n} positions, attention expects R={w.window}")
    qkv = F.reshape(w.qkv(p.windows), (bn, n, 3, c))
    q, k, v = qkv[:, :, 0, :], qkv[:, :, 1, :], qkv[:, :, 2, :]
    mask = None
    if not p.valid.all():
        mask = np.tile(p.valid, (p.batch, 1))[:, None, None, :]
    bias = w.local_bias_matrix() if use_bias else None
    out, weights = scaled_dot_attention(split_heads(q, w.heads), split_heads(k, w.heads),
                                        split_heads(v, w.heads), bias=bias, mask=mask)
    if w.record_attention:
        w.last_local = weights.data.copy()
    out = p.with_windows(w.proj(merge_heads(out)))
    residual = window_assemble(p) if residual is None else residual
    z_l = F.add(residual, w.drop_path(window_assemble(out)))
    return LocalResult(z_l, p.with_windows(q), p.with_windows(v))


def window_embedding(z: Tensor, window: int, mode: WindowEmbedding = WindowEmbedding.AVG,
                     conv: Optional[Conv2d] = None) -> Tensor:
    """
    One vector per R x R window: [B, H, W, C] -> [B, ceil(H/R), ceil(W/R), C]

    avg divides by the number of real (unpadded) positions, max ignores the
    padding, dwconv applies a depth-wise conv with kernel = stride = R.
    """
    if not isinstance(mode, WindowEmbedding):
        try:
            mode = WindowEmbedding(mode)
        except ValueError as exc:
            raise ValueError(f"Unsupported window embedding mode '{mode}'") from exc
    if z.ndim == 3:
        z = F.reshape(z, (1, *z.shape))
    _, h, w, _ = z.shape
    hp, wp = _ceil_to(h, window), _ceil_to(w, window)
    pads = ((0, 0), (0, hp - h), (0, wp - w), (0, 0))
    if mode is WindowEmbedding.AVG:
        pooled = F.pool2d(F.pad(z, pads), window, window, "avg")
        if (hp, wp) != (h, w):
            valid = np.zeros((hp, wp))
            valid[:h, :w] = 1.0
            counts = valid.reshape(hp // window, window, wp // window, window).sum(axis=(1, 3))
            pooled = F.scale(pooled, (window * window / counts)[:, :, None])
        return pooled
    if mode is WindowEmbedding.MAX:
        floor = float(np.finfo(z.dtype).min)
        return F.pool2d(F.pad(z, pads, value=floor), window, window, "max")
    if conv is None:
        raise ValueError("dwconv window embedding needs its depth-wise conv weights")
    return conv(F.pad(z, pads))


def shared_query_fixup(q_w: WindowPartition, v_w: WindowPartition, dw_kernel: Tensor) -> Tensor:
    """Q_L = Q_W + DWConv3x3(V_W), both assembled to [B, H, W, C]"""
    q = window_assemble(q_w)
    v = window_assemble(v_w)
    pad = dw_kernel.shape[0] // 2
    return F.add(q, F.conv2d(v, dw_kernel, stride=1, padding=pad, groups=v.shape[-1]))


def global_attention(z_l: Tensor, z_g: Tensor, w: HlgAttention, q_l: Optional[Tensor] = None) -> Tensor:
    """
    Every position of Z_L attends over all window embeddings Z_G

    Args:
        z_l: [B, H, W, C], also the residual
        z_g: [B, ceil(H/R), ceil(W/R), C]
        w: shared attention weights (K/V are the same columns local attention uses)
        q_l: queries [B, H, W, C]; when omitted they are projected from z_l

    Raises:
        ShapeError: z_g does not match z_l's window grid
    """
    b, h, wd, c = z_l.shape
    gh, gw = -(-h // w.window), -(-wd // w.window)
    if z_g.shape != (b, gh, gw, c):
        raise ShapeError(f"global map {z_g.shape} does not match {z_l.shape} with R={w.window}")
    kv_w, kv_b = w.kv_weights()
    kv = F.reshape(F.linear(F.reshape(z_g, (b, gh * gw, c)), kv_w, kv_b, tag="kv_global"),
                   (b, gh * gw, 2, c))
    k, v = kv[:, :, 0, :], kv[:, :, 1, :]
    if q_l is None:
        q_wt, q_b = w.q_weights()
        q = F.linear(F.reshape(z_l, (b, h * wd, c)), q_wt, q_b, tag="q_global")
    else:
        q = F.reshape(q_l, (b, h * wd, c))
    out, weights = scaled_dot_attention(split_heads(q, w.heads), split_heads(k, w.heads),
                                        split_heads(v, w.heads), bias=w.global_bias_matrix((h, wd)))
    if w.record_attention:
        w.last_global = weights.data.copy()
    out = F.reshape(w.proj(merge_heads(out)), (b, h, wd, c))
    return F.add(z_l, w.drop_path(out))


class SqueezeExcite(Module):
    """Global pool -> Linear(E, S) -> ReLU -> Linear(S, E) -> sigmoid gate"""

    def __init__(self, channels: int, squeeze: int, rng: np.random.Generator):
        super().__init__()
        self.reduce = Linear(channels, squeeze, rng, tag="se")
        self.expand = Linear(squeeze, channels, rng, tag="se")

    def forward(self, x: Tensor) -> Tensor:
        b, h, w, c = x.shape
        gate = F.sigmoid(self.expand(F.relu(self.reduce(F.global_avg_pool(x)))))
        gate = F.broadcast_to(F.reshape(gate, (b, 1, 1, c)), x.shape)
        return F.mul(x, gate)


class DwMlp(Module):
    """
    Pre-norm MLP with a depth-wise 3x3 conv and squeeze-excitation inside

    LN -> Linear(C_in, E) -> GELU -> DWConv3x3(stride s) -> GELU -> SE ->
    Linear(E, C); residual when s == 1 and C_in == C.
    """

    def __init__(self, in_dim: int, out_dim: int, hidden: int, squeeze: int, stride: int,
                 rng: np.random.Generator, drop_path: float = 0.0):
        super().__init__()
        if stride not in (1, 2):
            raise ShapeError(f"DWMLP stride must be 1 or 2, got {stride}")
        self.stride = stride
        self.norm = LayerNorm(in_dim)
        self.fc1 = Linear(in_dim, hidden, rng, tag="mlp")
        self.dwconv = Conv2d(hidden, hidden, 3, rng, stride=stride, padding=1, groups=hidden)
        self.se = SqueezeExcite(hidden, squeeze, rng)
        self.fc2 = Linear(hidden, out_dim, rng, tag="mlp")
        self.residual = stride == 1 and in_dim == out_dim
        self.drop_path = DropPath(drop_path)

    def forward(self, x: Tensor) -> Tensor:
        y = F.gelu(self.fc1(self.norm(x)))
        y = F.gelu(self.dwconv(y))
        y = self.fc2(self.se(y))
        return F.add(x, self.drop_path(y)) if self.residual else y


def dwmlp(x: Tensor, stride: int, weights: DwMlp) -> Tensor:
    if stride != weights.stride:
        raise ShapeError(f"DWMLP built with stride {weights.stride}, called with {stride}")
    return weights(x)


class HlgBlock(Module):
    """
    One sub-layer: DWMLP, local attention (plain or dilated), global attention

    Args:
        in_dim / dim: input and output widths (they differ at stage transitions)
        heads, window, dilation: attention layout
        mlp_ratio, se_ratio: E = int(mlp_ratio * dim), S = max(1, int(se_ratio * dim))
        stride: DWMLP stride (2 at stage transitions)
    """

    def __init__(self, in_dim: int, dim: int, heads: int, window: int, dilation: int,
                 mlp_ratio: float, se_ratio: float, stride: int, rng: np.random.Generator,
                 embedding: WindowEmbedding = WindowEmbedding.AVG,
                 global_bias: GlobalBias = GlobalBias.RELATIVE,
                 grid: Optional[Tuple[int, int]] = None, drop_path: float = 0.0):
        super().__init__()
        hidden = int(mlp_ratio * dim)
        squeeze = max(1, int(se_ratio * dim))
        self.window, self.dilation = window, dilation
        self.mlp = DwMlp(in_dim, dim, hidden, squeeze, stride, rng, drop_path)
        self.norm_local = LayerNorm(dim)
        self.norm_global = LayerNorm(dim)
        self.attn = HlgAttention(dim, heads, window, dilation, rng, embedding, global_bias,
                                 grid, drop_path)

    def forward(self, x: Tensor) -> Tensor:
        with op_scope("dwmlp"):
            x = self.mlp(x)
        with op_scope("local_attn"):
            p = window_partition(self.norm_local(x), self.window, self.dilation)
            local = local_attention(p, self.attn, residual=x)
        with op_scope("global_attn"):
            q_l = shared_query_fixup(local.q_w, local.v_w, self.attn.fixup.weight)
            z_g = window_embedding(self.norm_global(local.z_l), self.window, self.attn.embedding,
                                   self.attn.embed_conv)
            return global_attention(local.z_l, z_g, self.attn, q_l)


class HlgLayerPair(Module):
    """Plain sub-layer followed by a dilated sub-layer with the same window size"""

    def __init__(self, plain: HlgBlock, dilated: HlgBlock):
        super().__init__()
        if plain.window != dilated.window:
            raise ShapeError(f"paired sub-layers need one window size, got {plain.window} and {dilated.window}")
        self.plain = plain
        self.dilated = dilated

    def forward(self, x: Tensor) -> Tensor:
        return self.dilated(self.plain(x))


def hlg_layer_pair(x: Tensor, pair: HlgLayerPair) -> Tensor:
    return pair(x)
