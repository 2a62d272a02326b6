"""
Analytic parameter and compute model

Walks a model configuration the same way the model constructors do and
emits one breakdown row per module part. Rows carry the `op_scope` label the
live forward uses, so analytic and instrumented multiply-accumulate counts
can be compared scope by scope.

Conventions:
    - FLOPs = 2 x multiply-accumulates (MACs)
    - only matmuls and convolutions are counted; softmax, normalization,
      activations, pooling and resizing are free
    - batch size 1, eval mode (auxiliary SETR heads cost nothing unless
      training=True)
"""

import logging
import math
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from ..core.errors import ShapeError
from ..core.profiler import OpCounter, count_ops
from ..core.tensor import Tensor, get_default_dtype, no_grad
from ..models.config import (
    DecoderKind,
    GlobalBias,
    HlgConfig,
    HlgHead,
    ModelConfig,
    SetrConfig,
    WindowEmbedding,
)

logger = logging.getLogger(__name__)

InputSize = Union[int, Tuple[int, int]]
STAGE_STRIDES = (4, 8, 16, 32)
BREAKDOWN_COLUMNS = ["scope", "module", "params", "macs", "flops"]


# ---------------------------------------------------------------------------
# primitive costs
# ---------------------------------------------------------------------------
def matmul_flops(m: int, n: int, k: int) -> int:
    """[m, k] @ [k, n]"""
    return 2 * m * n * k


def linear_params(in_features: int, out_features: int, bias: bool = True) -> int:
    return in_features * out_features + (out_features if bias else 0)


def conv_params(kernel: int, in_channels: int, out_channels: int, groups: int = 1, bias: bool = True) -> int:
    return kernel * kernel * (in_channels // groups) * out_channels + (out_channels if bias else 0)


def conv_macs(out_h: int, out_w: int, kernel: int, in_channels: int, out_channels: int, groups: int = 1) -> int:
    return out_h * out_w * kernel * kernel * (in_channels // groups) * out_channels


def conv_flops(out_h: int, out_w: int, kernel: int, in_channels: int, out_channels: int, groups: int = 1) -> int:
    return 2 * conv_macs(out_h, out_w, kernel, in_channels, out_channels, groups)


def _out_extent(size: int, kernel: int, stride: int, padding: int) -> int:
    return (size + 2 * padding - kernel) // stride + 1


def _ceil_div(n: int, d: int) -> int:
    return -(-n // d)


def _ceil_to(n: int, unit: int) -> int:
    return _ceil_div(n, unit) * unit


# ---------------------------------------------------------------------------
# report
# ---------------------------------------------------------------------------
@dataclass
class CostRow:
    scope: str
    module: str
    params: int = 0
    macs: int = 0


@dataclass
class CostReport:
    """
    Static cost of one configuration at one input size

    `breakdown` has one row per module part with columns scope, module,
    params, macs and flops; the totals are sums over those rows.
    """
    model: str
    input_size: Tuple[int, int]
    breakdown: pd.DataFrame = field(default_factory=lambda: pd.DataFrame(columns=BREAKDOWN_COLUMNS))

    @property
    def total_params(self) -> int:
        return int(self.breakdown["params"].sum())

    @property
    def total_macs(self) -> int:
        return int(self.breakdown["macs"].sum())

    @property
    def total_flops(self) -> int:
        return 2 * self.total_macs

    def by_scope(self) -> pd.DataFrame:
        """params / macs / flops summed per scope label"""
        return self.breakdown.groupby("scope", sort=False)[["params", "macs", "flops"]].sum()

    def by_group(self) -> pd.DataFrame:
        """Summed per top-level scope (stage, encoder, decoder, head, ...)"""
        frame = self.breakdown.assign(group=self.breakdown["scope"].str.split("/").str[0])
        return frame.groupby("group", sort=False)[["params", "macs", "flops"]].sum()

    def to_text(self) -> str:
        """Plain-text table, header states the FLOP convention"""
        h, w = self.input_size
        lines = [
            f"Cost report: {self.model} @ {h}x{w}",
            "FLOPs = 2 x multiply-accumulates; matmul and conv only",
            f"Total params: {self.total_params:,} ({self.total_params / 1e6:.2f}M)",
            f"Total MACs:   {self.total_macs:,} ({self.total_macs / 1e9:.3f}G)",
            f"Total FLOPs:  {self.total_flops:,} ({self.total_flops / 1e9:.3f}G)",
            "",
            f"{'group':<16}{'params':>16}{'MACs':>18}{'share':>9}",
            "-" * 59,
        ]
        total = max(self.total_macs, 1)
        for name, row in self.by_group().iterrows():
            lines.append(f"{name:<16}{int(row['params']):>16,}{int(row['macs']):>18,}"
                         f"{100.0 * row['macs'] / total:>8.1f}%")
        return "\n".join(lines)


class _Ledger:
    def __init__(self):
        self.rows: List[CostRow] = []

    def add(self, scope: str, module: str, params: int = 0, macs: int = 0) -> None:
        self.rows.append(CostRow(scope, module, int(params), int(macs)))

    def frame(self) -> pd.DataFrame:
        frame = pd.DataFrame([vars(r) for r in self.rows], columns=["scope", "module", "params", "macs"])
        frame["params"] = frame["params"].astype(np.int64)
        frame["macs"] = frame["macs"].astype(np.int64)
        frame["flops"] = 2 * frame["macs"]
        return frame


# ---------------------------------------------------------------------------
# SETR
# ---------------------------------------------------------------------------
def _pup_rows(ledger: _Ledger, scope: str, prefix: str, dim: int, num_classes: int, patch: int,
              width: int, grid: Tuple[int, int]) -> None:
    h, w = grid
    steps = int(round(math.log2(patch)))
    for i in range(steps):
        cin = dim if i == 0 else width
        ledger.add(scope, f"{prefix}.blocks.{i}", conv_params(3, cin, width, bias=False) + 2 * width,
                   conv_macs(h, w, 3, cin, width))
        h, w = 2 * h, 2 * w
    ledger.add(scope, f"{prefix}.cls", conv_params(1, width, num_classes), conv_macs(h, w, 1, width, num_classes))


def _setr_rows(config: SetrConfig, size: Tuple[int, int], training: bool) -> _Ledger:
    enc, dec = config.encoder, config.decoder
    p, c, k = enc.patch, enc.hidden, dec.num_classes
    if size[0] % p or size[1] % p:
        raise ShapeError(f"input {size} is not divisible by patch size {p}")
    gh, gw = size[0] // p, size[1] // p
    n = gh * gw
    hidden = int(c * enc.mlp_ratio)
    ledger = _Ledger()

    ledger.add("patch_embed", "encoder.patch_embed", linear_params(3 * p * p, c), n * 3 * p * p * c)
    pos_h, pos_w = enc.pos_grid
    ledger.add("patch_embed", "encoder.pos_embed", pos_h * pos_w * c)
    for i in range(enc.layers):
        prefix = f"encoder.layers.{i}"
        ledger.add("encoder/attn", f"{prefix}.attn",
                   2 * c + linear_params(c, 3 * c) + linear_params(c, c),
                   n * c * 3 * c + 2 * n * n * c + n * c * c)
        ledger.add("encoder/mlp", f"{prefix}.mlp",
                   2 * c + linear_params(c, hidden) + linear_params(hidden, c),
                   2 * n * c * hidden)
    ledger.add("encoder", "norm", 2 * c)

    if dec.kind is DecoderKind.NAIVE:
        ledger.add("decoder", "decoder.conv", conv_params(1, c, c, bias=False) + 2 * c, conv_macs(gh, gw, 1, c, c))
        ledger.add("decoder", "decoder.cls", conv_params(1, c, k), conv_macs(gh, gw, 1, c, k))
    elif dec.kind is DecoderKind.PUP:
        _pup_rows(ledger, "decoder", "decoder", c, k, p, dec.pup_width, (gh, gw))
    else:
        (inner, width), streams = dec.mla_widths(c), dec.mla_streams
        for m in range(streams):
            ledger.add("decoder", f"decoder.lateral.{m}", conv_params(1, c, inner, bias=False) + 2 * inner,
                       conv_macs(gh, gw, 1, c, inner))
            for part, c_out in (("fuse", inner), ("head_a", inner), ("head_b", width)):
                ledger.add("decoder", f"decoder.{part}.{m}", conv_params(3, inner, c_out, bias=False) + 2 * c_out,
                           conv_macs(gh, gw, 3, inner, c_out))
        ledger.add("decoder", "decoder.cls", conv_params(1, streams * width, k),
                   conv_macs(4 * gh, 4 * gw, 1, streams * width, k))

    aw = dec.aux_width
    for j, _ in enumerate(dec.aux_taps):
        macs = conv_macs(gh, gw, 1, c, aw) + conv_macs(gh, gw, 1, aw, k) if training else 0
        ledger.add("aux", f"aux.{j}", conv_params(1, c, aw, bias=False) + 2 * aw + conv_params(1, aw, k), macs)
    return ledger


# ---------------------------------------------------------------------------
# HLG
# ---------------------------------------------------------------------------
def _hlg_block_rows(ledger: _Ledger, scope: str, prefix: str, in_dim: int, dim: int, heads: int,
                    window: int, dilation: int, mlp_ratio: float, se_ratio: float, stride: int,
                    grid: Tuple[int, int], embedding: WindowEmbedding, bias_mode: GlobalBias,
                    bias_grid: Tuple[int, int]) -> Tuple[int, int]:
    """Rows for one HLG sub-layer; returns its output grid"""
    e = int(mlp_ratio * dim)
    s = max(1, int(se_ratio * dim))
    h, w = grid
    ho, wo = _out_extent(h, 3, stride, 1), _out_extent(w, 3, stride, 1)

    params = (2 * in_dim + linear_params(in_dim, e) + conv_params(3, e, e, groups=e)
              + linear_params(e, s) + linear_params(s, e) + linear_params(e, dim))
    macs = h * w * in_dim * e + conv_macs(ho, wo, 3, e, e, groups=e) + 2 * e * s + ho * wo * e * dim
    ledger.add(f"{scope}/dwmlp", f"{prefix}.mlp", params, macs)

    unit = window * dilation
    padded = _ceil_to(ho, unit) * _ceil_to(wo, unit)
    params = 2 * dim + linear_params(dim, 3 * dim) + linear_params(dim, dim) + (2 * window - 1) ** 2 * heads
    macs = padded * 3 * dim * dim + 2 * padded * window * window * dim + padded * dim * dim
    ledger.add(f"{scope}/local_attn", f"{prefix}.local_attn", params, macs)

    n = ho * wo
    gh, gw = _ceil_div(ho, window), _ceil_div(wo, window)
    g = gh * gw
    params = 2 * dim + conv_params(3, dim, dim, groups=dim, bias=False)
    macs = conv_macs(ho, wo, 3, dim, dim, groups=dim) + g * dim * 2 * dim + 2 * n * g * dim + n * dim * dim
    if bias_mode is GlobalBias.RELATIVE:
        params += (4 * window - 1) ** 2 * heads
    elif bias_mode is GlobalBias.DENSE:
        params += heads * bias_grid[0] * bias_grid[1] * _ceil_div(bias_grid[0], window) * _ceil_div(bias_grid[1], window)
    if embedding is WindowEmbedding.DWCONV:
        params += conv_params(window, dim, dim, groups=dim)
        macs += conv_macs(gh, gw, window, dim, dim, groups=dim)
    ledger.add(f"{scope}/global_attn", f"{prefix}.global_attn", params, macs)
    return ho, wo


def _hlg_rows(config: HlgConfig, size: Tuple[int, int]) -> _Ledger:
    ledger = _Ledger()
    c1 = config.stages[0].channels
    h1, w1 = _out_extent(size[0], 3, 2, 1), _out_extent(size[1], 3, 2, 1)
    h2, w2 = _out_extent(h1, 3, 2, 1), _out_extent(w1, 3, 2, 1)
    stem = "backbone.stem"
    ledger.add("stem", f"{stem}.conv1", conv_params(3, 3, c1, bias=False) + 2 * c1, conv_macs(h1, w1, 3, 3, c1))
    ledger.add("stem", f"{stem}.conv2", conv_params(1, c1, c1, bias=False) + 2 * c1, conv_macs(h1, w1, 1, c1, c1))
    ledger.add("stem", f"{stem}.conv3", conv_params(3, c1, c1, bias=False) + 2 * c1, conv_macs(h2, w2, 3, c1, c1))

    grid, in_dim = (h2, w2), c1
    for i, st in enumerate(config.stages):
        native = _ceil_div(config.image_size, STAGE_STRIDES[i])
        for j in range(st.depth // 2):
            for k, (part, dilation) in enumerate((("plain", 1), ("dilated", st.dilation))):
                first = j == 0 and k == 0
                grid = _hlg_block_rows(
                    ledger, f"stage{i + 1}", f"backbone.stages.{i}.pairs.{j}.{part}",
                    in_dim if first else st.channels, st.channels, st.heads, st.window, dilation,
                    config.mlp_ratio, config.se_ratio, 2 if first and i > 0 else 1, grid,
                    config.window_embedding, config.global_bias, (native, native),
                )
        in_dim = st.channels

    k = config.num_classes
    if config.head is HlgHead.CLASSIFY:
        c4 = config.stages[-1].channels
        ledger.add("head", "norm", 2 * c4)
        ledger.add("head", "fc", linear_params(c4, k), c4 * k)
        return ledger

    s3 = config.stages[2]
    gh, gw = _ceil_div(size[0], 16), _ceil_div(size[1], 16)
    fused = sum(config.channels)
    ledger.add("fuse", "fuse", linear_params(fused, s3.channels), gh * gw * fused * s3.channels)
    bias = GlobalBias.RELATIVE if config.global_bias is GlobalBias.DENSE else config.global_bias
    seg_grid = _ceil_div(config.image_size, 16)
    for part, dilation in (("plain", 1), ("dilated", config.seg_dilation)):
        _hlg_block_rows(ledger, "seg_pair", f"pair.{part}", s3.channels, s3.channels, s3.heads,
                        config.seg_window, dilation, config.mlp_ratio, config.se_ratio, 1, (gh, gw),
                        config.window_embedding, bias, (seg_grid, seg_grid))
    _pup_rows(ledger, "decoder", "decoder", s3.channels, k, 16, config.seg_width, (gh, gw))
    return ledger


# ---------------------------------------------------------------------------
# entry points
# ---------------------------------------------------------------------------
def default_input_size(config: ModelConfig) -> Tuple[int, int]:
    if isinstance(config, SetrConfig):
        return tuple(config.encoder.image_size)
    return config.image_size, config.image_size


def _normalize_size(config: ModelConfig, input_size: Optional[InputSize]) -> Tuple[int, int]:
    if input_size is None:
        return default_input_size(config)
    if isinstance(input_size, int):
        return input_size, input_size
    return int(input_size[0]), int(input_size[1])


def cost_report(config: ModelConfig, input_size: Optional[InputSize] = None, training: bool = False) -> CostReport:
    """Breakdown and totals for `config` at `input_size` (defaults to the config's native size)"""
    config.validate()
    size = _normalize_size(config, input_size)
    if isinstance(config, SetrConfig):
        ledger = _setr_rows(config, size, training)
    else:
        ledger = _hlg_rows(config, size)
    report = CostReport(config.name, size, ledger.frame())
    logger.debug("%s @ %s: %d params, %d MACs", config.name, size, report.total_params, report.total_macs)
    return report


def count_params(config: ModelConfig) -> int:
    """Exact number of learnable scalars the built model holds"""
    return cost_report(config).total_params


def count_macs(config: ModelConfig, input_size: Optional[InputSize] = None) -> int:
    return cost_report(config, input_size).total_macs


def count_flops(config: ModelConfig, input_size: Optional[InputSize] = None) -> int:
    """2 x multiply-accumulates of one eval-mode forward at batch 1"""
    return cost_report(config, input_size).total_flops


# ---------------------------------------------------------------------------
# instrumented cross-check
# ---------------------------------------------------------------------------
def instrumented_counter(model, input_size: Tuple[int, int]) -> OpCounter:
    """Run one eval-mode forward on a zero image and record every matmul/conv"""
    h, w = input_size
    images = Tensor(np.zeros((1, h, w, 3), dtype=get_default_dtype()))
    model.eval()
    with no_grad(), count_ops() as counter:
        model(images)
    return counter


def compare_scopes(report: CostReport, counter: OpCounter) -> pd.DataFrame:
    """Analytic vs measured MACs per scope label, with the relative gap"""
    analytic = report.breakdown.groupby("scope", sort=False)["macs"].sum()
    measured = pd.Series(counter.by_scope(), dtype=np.int64)
    scopes: Sequence[str] = list(dict.fromkeys(list(analytic.index) + list(measured.index)))
    frame = pd.DataFrame({
        "scope": scopes,
        "analytic_macs": [int(analytic.get(s, 0)) for s in scopes],
        "measured_macs": [int(measured.get(s, 0)) for s in scopes],
    })
    denom = frame["measured_macs"].where(frame["measured_macs"] > 0, 1)
    frame["rel_gap"] = (frame["analytic_macs"] - frame["measured_macs"]) / denom
    return frame
