"""
Model configuration: dataclasses, enums and the named-variant registries
"""

import logging
from dataclasses import asdict, dataclass, field, fields, replace
from enum import Enum
from typing import Any, Dict, List, Optional, Tuple, Union

from ..core.errors import ConfigError

logger = logging.getLogger(__name__)


class DecoderKind(Enum):
    """SETR decoder heads"""
    NAIVE = "naive"
    PUP = "pup"
    MLA = "mla"


class MlaPlan(Enum):
    """MLA stream channel plan"""
    HALVING = "halving"     # 1x1 C->C/2, 3x3 C/2->C/2, 3x3 C/2->C/4
    QUARTER = "quarter"     # every stream conv at C/4


class WindowEmbedding(Enum):
    """How one summary vector per window is formed"""
    AVG = "avg"
    MAX = "max"
    DWCONV = "dwconv"


class GlobalBias(Enum):
    """Parameterization of the global-attention positional bias"""
    RELATIVE = "relative"   # clipped offsets from the window centre (aR + R//2)
    DENSE = "dense"         # full [N, G] table; fixed grid, tiny inputs only
    NONE = "none"


class HlgHead(Enum):
    CLASSIFY = "classify"
    SEGMENT = "segment"


@dataclass
class SetrEncoderConfig:
    """
    Transformer encoder of SETR

    Attributes:
        layers: number of transformer layers L_e
        hidden: token width C
        heads: attention heads m (head dim C/m)
        patch: patch size P
        mlp_ratio: MLP hidden width as a multiple of C
        image_size: size the position table is created for (grid = size/P)
        dropout: dropout inside attention output and MLP
        drop_path: stochastic depth, scaled linearly over layers
    """
    layers: int = 24
    hidden: int = 1024
    heads: int = 16
    patch: int = 16
    mlp_ratio: float = 4.0
    image_size: Tuple[int, int] = (768, 768)
    dropout: float = 0.0
    drop_path: float = 0.0

    @property
    def head_dim(self) -> int:
        return self.hidden // self.heads

    @property
    def pos_grid(self) -> Tuple[int, int]:
        return self.image_size[0] // self.patch, self.image_size[1] // self.patch

    def validate(self) -> None:
        if self.layers < 1 or self.hidden < 1 or self.heads < 1 or self.patch < 1:
            raise ConfigError(f"SETR encoder extents must be positive: {self}")
        if self.hidden % self.heads:
            raise ConfigError(f"hidden size {self.hidden} is not divisible by {self.heads} heads")
        if self.image_size[0] % self.patch or self.image_size[1] % self.patch:
            raise ConfigError(f"image size {self.image_size} is not divisible by patch {self.patch}")


@dataclass
class DecoderConfig:
    """
    SETR decoder head

    Attributes:
        kind: naive, pup or mla
        num_classes: K
        mla_streams: M, number of tapped layers for MLA
        mla_taps: 1-based layer indices; empty means uniform with step L_e/M
        aux_taps: 1-based layer indices for auxiliary heads
        pup_width: channel width of every PUP conv stage
        mla_width: MLA stream output width; None means C/4
        mla_plan: QUARTER keeps every stream conv at mla_width; HALVING runs
            the lateral and first two 3x3 convs at 2 * mla_width
        aux_width: hidden width of the 2-layer auxiliary heads
        aux_weight: loss weight of each auxiliary head
    """
    kind: DecoderKind = DecoderKind.PUP
    num_classes: int = 19
    mla_streams: int = 4
    mla_taps: List[int] = field(default_factory=list)
    aux_taps: List[int] = field(default_factory=list)
    pup_width: int = 512
    mla_width: Optional[int] = None
    mla_plan: MlaPlan = MlaPlan.QUARTER
    aux_width: int = 256
    aux_weight: float = 0.4

    def mla_widths(self, hidden: int) -> Tuple[int, int]:
        """(inner width, stream output width) of every MLA stream"""
        out = self.mla_width or hidden // 4
        return (2 * out if self.mla_plan is MlaPlan.HALVING else out), out

    def resolved_mla_taps(self, layers: int) -> List[int]:
        if self.mla_taps:
            return list(self.mla_taps)
        step = layers // self.mla_streams
        return [step * (m + 1) for m in range(self.mla_streams)]

    def validate(self, layers: int) -> None:
        if self.num_classes < 1:
            raise ConfigError(f"num_classes must be positive, got {self.num_classes}")
        for tap in self.aux_taps:
            if not 1 <= tap <= layers:
                raise ConfigError(f"aux tap {tap} is outside [1, {layers}]")
        if self.kind is DecoderKind.MLA:
            if self.mla_streams < 1 or layers % self.mla_streams and not self.mla_taps:
                raise ConfigError(f"{layers} layers cannot be split into {self.mla_streams} MLA streams")
            taps = self.resolved_mla_taps(layers)
            if len(taps) != self.mla_streams:
                raise ConfigError(f"MLA needs {self.mla_streams} taps, got {taps}")
            for tap in taps:
                if not 1 <= tap <= layers:
                    raise ConfigError(f"MLA tap {tap} is outside [1, {layers}]")


@dataclass
class SetrConfig:
    name: str
    encoder: SetrEncoderConfig
    decoder: DecoderConfig

    @property
    def num_classes(self) -> int:
        return self.decoder.num_classes

    def validate(self) -> None:
        self.encoder.validate()
        self.decoder.validate(self.encoder.layers)
        if self.decoder.kind is DecoderKind.PUP and self.encoder.patch & (self.encoder.patch - 1):
            raise ConfigError(f"PUP upsamples by 2x per stage; patch {self.encoder.patch} is not a power of 2")


@dataclass
class HlgStageConfig:
    """One row of the stage table: width C_i, heads H_i, depth L_i, window R_i, dilation D_i"""
    channels: int
    heads: int
    depth: int
    window: int = 7
    dilation: int = 1


@dataclass
class HlgConfig:
    """
    Four-stage HLG network

    Attributes:
        stages: per-stage table
        mlp_ratio: DWMLP expansion
        se_ratio: squeeze width as a fraction of the block output width
        drop_path: maximum stochastic-depth rate (linear over depth)
        image_size: input size used to size dense global-bias tables
        seg_window / seg_dilation: R and D of the segmentation decoder pair
        seg_width: channel width of the segmentation PUP head
    """
    name: str
    stages: List[HlgStageConfig]
    mlp_ratio: float = 4.0
    se_ratio: float = 0.25
    num_classes: int = 1000
    drop_path: float = 0.1
    window_embedding: WindowEmbedding = WindowEmbedding.AVG
    global_bias: GlobalBias = GlobalBias.RELATIVE
    head: HlgHead = HlgHead.CLASSIFY
    image_size: int = 224
    seg_window: int = 8
    seg_dilation: int = 6
    seg_width: int = 256

    @property
    def channels(self) -> List[int]:
        return [s.channels for s in self.stages]

    @property
    def depths(self) -> List[int]:
        return [s.depth for s in self.stages]

    def validate(self) -> None:
        if len(self.stages) != 4:
            raise ConfigError(f"HLG needs exactly 4 stages, got {len(self.stages)}")
        for i, s in enumerate(self.stages, start=1):
            if s.channels % s.heads:
                raise ConfigError(f"stage {i}: width {s.channels} not divisible by {s.heads} heads")
            if s.depth < 2 or s.depth % 2:
                raise ConfigError(f"stage {i}: depth {s.depth} must be a positive even number (layer pairs)")
            if s.window < 1 or s.dilation < 1:
                raise ConfigError(f"stage {i}: window and dilation must be >= 1")
        if self.num_classes < 1:
            raise ConfigError(f"num_classes must be positive, got {self.num_classes}")
        if self.seg_window < 1 or self.seg_dilation < 1 or self.seg_width < 1:
            raise ConfigError(
                f"segmentation head needs positive window/dilation/width, got "
                f"{self.seg_window}/{self.seg_dilation}/{self.seg_width}"
            )


ModelConfig = Union[SetrConfig, HlgConfig]


# ---------------------------------------------------------------------------
# registries
# ---------------------------------------------------------------------------
SETR_BACKBONES: Dict[str, Dict[str, int]] = {
    "t-base": {"layers": 12, "hidden": 768, "heads": 12},
    "t-large": {"layers": 24, "hidden": 1024, "heads": 16},
}

SETR_AUX_TAPS: Dict[Tuple[str, DecoderKind], List[int]] = {
    ("t-large", DecoderKind.NAIVE): [10, 15, 20],
    ("t-large", DecoderKind.PUP): [10, 15, 20, 24],
    ("t-large", DecoderKind.MLA): [6, 12, 18, 24],
    ("t-base", DecoderKind.NAIVE): [5, 8, 10],
    ("t-base", DecoderKind.PUP): [5, 8, 10, 12],
    ("t-base", DecoderKind.MLA): [3, 6, 9, 12],
}

SETR_VARIANTS = ("setr-naive", "setr-pup", "setr-mla", "setr-toy")


def _stages(channels, heads, depths, window=7, dilations=(8, 4, 2, 1)) -> List[HlgStageConfig]:
    windows = window if isinstance(window, (list, tuple)) else [window] * 4
    return [HlgStageConfig(c, h, d, r, dl) for c, h, d, r, dl in zip(channels, heads, depths, windows, dilations)]


HLG_VARIANTS: Dict[str, Dict[str, Any]] = {
    "hlg-mobile": dict(stages=([48, 96, 192, 384], [2, 4, 8, 16], [2, 2, 2, 2]),
                       mlp_ratio=2.5, se_ratio=0.25, drop_path=0.1),
    "hlg-tiny": dict(stages=([64, 128, 256, 512], [2, 4, 8, 16], [2, 2, 6, 2]),
                     mlp_ratio=3.0, se_ratio=0.25, drop_path=0.1),
    "hlg-small": dict(stages=([96, 192, 384, 768], [3, 6, 12, 24], [2, 2, 6, 2]),
                      mlp_ratio=3.0, se_ratio=0.25, drop_path=0.1),
    "hlg-medium": dict(stages=([96, 192, 384, 768], [3, 6, 12, 24], [2, 2, 14, 2]),
                       mlp_ratio=4.0, se_ratio=0.125, drop_path=0.1),
    "hlg-large": dict(stages=([128, 256, 512, 1024], [4, 8, 16, 32], [2, 2, 14, 2]),
                      mlp_ratio=4.0, se_ratio=0.25, drop_path=0.3),
}


def setr_variant(decoder: Union[str, DecoderKind], backbone: str = "t-large",
                 num_classes: int = 19, image_size: int = 768) -> SetrConfig:
    """Named SETR model: decoder in naive/pup/mla, backbone in t-base/t-large"""
    kind = DecoderKind(decoder) if not isinstance(decoder, DecoderKind) else decoder
    if backbone not in SETR_BACKBONES:
        raise ConfigError(f"Unknown SETR backbone '{backbone}' (expected one of {sorted(SETR_BACKBONES)})")
    encoder = SetrEncoderConfig(image_size=(image_size, image_size), **SETR_BACKBONES[backbone])
    dec = DecoderConfig(kind=kind, num_classes=num_classes,
                        aux_taps=list(SETR_AUX_TAPS[(backbone, kind)]))
    config = SetrConfig(name=f"setr-{kind.value}-{backbone}", encoder=encoder, decoder=dec)
    config.validate()
    return config


def setr_toy(num_classes: int = 4, image_size: int = 64) -> SetrConfig:
    """Calibration config: 2 layers, C=64, 4 heads, P=8, PUP head"""
    config = SetrConfig(
        name="setr-toy",
        encoder=SetrEncoderConfig(layers=2, hidden=64, heads=4, patch=8,
                                  image_size=(image_size, image_size)),
        decoder=DecoderConfig(kind=DecoderKind.PUP, num_classes=num_classes, pup_width=32,
                              aux_width=32),
    )
    config.validate()
    return config


def hlg_variant(name: str, num_classes: int = 1000, head: HlgHead = HlgHead.CLASSIFY,
                image_size: int = 224) -> HlgConfig:
    """Named HLG model from the stage table (hlg-mobile ... hlg-large)"""
    if name not in HLG_VARIANTS:
        raise ConfigError(f"Unknown HLG variant '{name}' (expected one of {sorted(HLG_VARIANTS)})")
    entry = dict(HLG_VARIANTS[name])
    channels, heads, depths = entry.pop("stages")
    config = HlgConfig(name=name, stages=_stages(channels, heads, depths), num_classes=num_classes,
                       head=head, image_size=image_size, **entry)
    config.validate()
    return config


def hlg_toy(num_classes: int = 4, head: HlgHead = HlgHead.SEGMENT, image_size: int = 64) -> HlgConfig:
    """Calibration config sized for 64x64 inputs"""
    config = HlgConfig(
        name="hlg-toy",
        stages=_stages([16, 32, 64, 128], [1, 2, 4, 8], [2, 2, 2, 2],
                       window=[4, 4, 2, 2], dilations=[4, 2, 2, 1]),
        mlp_ratio=2.0,
        se_ratio=0.25,
        num_classes=num_classes,
        drop_path=0.0,
        head=head,
        image_size=image_size,
        seg_window=2,
        seg_dilation=2,
        seg_width=32,
    )
    config.validate()
    return config


def model_config(name: str, backbone: Optional[str] = None, num_classes: Optional[int] = None,
                 **overrides: Any) -> ModelConfig:
    """
    Resolve a variant name to a full structural config

    Args:
        name: setr-naive/setr-pup/setr-mla/setr-toy or hlg-mobile/.../hlg-large/hlg-toy
        backbone: t-base or t-large for the named SETR decoders
        num_classes: class count override
        **overrides: forwarded to the variant builder (image_size, head)

    Raises:
        ConfigError: unknown variant
    """
    kwargs = dict(overrides)
    if num_classes is not None:
        kwargs["num_classes"] = num_classes
    if name == "setr-toy":
        return setr_toy(**kwargs)
    if name == "hlg-toy":
        return hlg_toy(**kwargs)
    if name in SETR_VARIANTS:
        return setr_variant(name.split("-", 1)[1], backbone or "t-large", **kwargs)
    if name in HLG_VARIANTS:
        return hlg_variant(name, **kwargs)
    raise ConfigError(
        f"Unknown model '{name}' (expected one of {sorted(SETR_VARIANTS + tuple(HLG_VARIANTS) + ('hlg-toy',))})"
    )


def canonical_dict(config: ModelConfig) -> Dict[str, Any]:
    """Plain-data view of a config (enums as values); input to the checkpoint fingerprint"""

    def convert(value):
        if isinstance(value, Enum):
            return value.value
        if isinstance(value, dict):
            return {k: convert(v) for k, v in value.items()}
        if isinstance(value, (list, tuple)):
            return [convert(v) for v in value]
        return value

    data = convert(asdict(config))
    data["family"] = "setr" if isinstance(config, SetrConfig) else "hlg"
    return data


def config_from_dict(data: Dict[str, Any]) -> ModelConfig:
    """Inverse of canonical_dict"""
    data = dict(data)
    family = data.pop("family", None)
    if family == "setr":
        enc = dict(data["encoder"])
        enc["image_size"] = tuple(enc["image_size"])
        dec = dict(data["decoder"])
        dec["kind"] = DecoderKind(dec["kind"])
        dec["mla_plan"] = MlaPlan(dec.get("mla_plan", MlaPlan.QUARTER.value))
        return SetrConfig(name=data["name"], encoder=SetrEncoderConfig(**enc), decoder=DecoderConfig(**dec))
    if family == "hlg":
        data["stages"] = [HlgStageConfig(**s) for s in data["stages"]]
        data["window_embedding"] = WindowEmbedding(data["window_embedding"])
        data["global_bias"] = GlobalBias(data["global_bias"])
        data["head"] = HlgHead(data["head"])
        return HlgConfig(**data)
    raise ConfigError(f"Unknown model family '{family}' in stored config")


def with_overrides(config: ModelConfig, **changes: Any) -> ModelConfig:
    """dataclasses.replace that also re-validates"""
    known = {f.name for f in fields(config)}
    unknown = set(changes) - known
    if unknown:
        raise ConfigError(f"Unknown config fields {sorted(unknown)} for {type(config).__name__}")
    updated = replace(config, **changes)
    updated.validate()
    return updated
