"""
Run configuration files

Grammar (one statement per line):

    [section]              section header: run, model, data or recipe
    key = value            assignment inside the current section
    # comment              full-line or trailing comment

Values may be quoted. Booleans are true/false, lists are comma-separated. Every problem is
reported as ConfigError("<path>:<line>: <message>"); missing required fields
are reported together.

    [run]      out
    [model]    name (required), backbone, num_classes, image_size, head,
               dropout, drop_path, pup_width, mla_width, mla_plan, aux_width, aux_weight,
               aux_taps, mla_taps, channels, heads, depths, windows, dilations,
               mlp_ratio, se_ratio, window_embedding, global_bias,
               seg_window, seg_dilation, seg_width
    [data]     kind, num_samples, height, width, num_classes, seed, path,
               crop_size, augment, eval_samples
    [recipe]   optimizer, base_lr, max_iters, batch_size, seed, deterministic,
               momentum, weight_decay, poly_power, warmup_iters,
               warmup_start_lr, min_lr, eval_interval, checkpoint_interval,
               aux_weight
"""

import logging
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Tuple, Union

from ..core.errors import ConfigError
from ..models.config import (
    GlobalBias,
    HlgConfig,
    HlgHead,
    HlgStageConfig,
    MlaPlan,
    ModelConfig,
    SetrConfig,
    WindowEmbedding,
    model_config,
)
from ..training.data import DataConfig, DataKind
from ..training.optim import OptimizerKind, RecipeConfig

logger = logging.getLogger(__name__)

Entry = Tuple[str, int]  # raw value, line number


def _bool(raw: str) -> bool:
    lowered = raw.lower()
    if lowered in ("true", "yes", "1"):
        return True
    if lowered in ("false", "no", "0"):
        return False
    raise ValueError(f"expected true or false, got '{raw}'")


def _int_list(raw: str) -> List[int]:
    return [int(v) for v in raw.split(",") if v.strip()]


def _optional_int(raw: str) -> Optional[int]:
    return None if raw.lower() == "none" else int(raw)


def _optional_float(raw: str) -> Optional[float]:
    return None if raw.lower() == "none" else float(raw)


def _enum(kind) -> Callable[[str], Any]:
    def convert(raw: str):
        try:
            return kind(raw.lower())
        except ValueError:
            choices = ", ".join(m.value for m in kind)
            raise ValueError(f"'{raw}' is not one of: {choices}") from None
    return convert


SETR_MODEL_KEYS = {
    "dropout": float, "drop_path": float, "pup_width": int, "mla_width": _optional_int,
    "mla_plan": _enum(MlaPlan), "aux_width": int, "aux_weight": float, "aux_taps": _int_list,
    "mla_taps": _int_list,
}
HLG_MODEL_KEYS = {
    "channels": _int_list, "heads": _int_list, "depths": _int_list, "windows": _int_list,
    "dilations": _int_list, "mlp_ratio": float, "se_ratio": float, "drop_path": float,
    "window_embedding": _enum(WindowEmbedding), "global_bias": _enum(GlobalBias),
    "seg_window": int, "seg_dilation": int, "seg_width": int,
}

SCHEMA: Dict[str, Dict[str, Callable[[str], Any]]] = {
    "run": {"out": str},
    "model": {
        "name": str, "backbone": str, "num_classes": int, "image_size": int, "head": _enum(HlgHead),
        **SETR_MODEL_KEYS, **HLG_MODEL_KEYS,
    },
    "data": {
        "kind": _enum(DataKind), "num_samples": int, "height": int, "width": int, "num_classes": int,
        "seed": int, "path": str, "crop_size": _optional_int, "augment": _bool, "eval_samples": int,
    },
    "recipe": {
        "optimizer": _enum(OptimizerKind), "base_lr": float, "max_iters": int, "batch_size": int,
        "seed": int, "deterministic": _bool, "momentum": float, "weight_decay": _optional_float,
        "poly_power": float, "warmup_iters": int, "warmup_start_lr": float, "min_lr": float,
        "eval_interval": int, "checkpoint_interval": int, "aux_weight": _optional_float,
    },
}

REQUIRED = [("run", "out"), ("model", "name")]


@dataclass
class RunConfig:
    """A fully resolved run: model, data, recipe and output directory"""
    model: ModelConfig
    data: DataConfig
    recipe: RecipeConfig
    out: Path
    source: Optional[Path] = None
    raw: Dict[str, Dict[str, str]] = field(default_factory=dict)


class _Located:
    """Raw entries of one file, with line-precise error helpers"""

    def __init__(self, path: str, sections: Dict[str, Dict[str, Entry]]):
        self.path = path
        self.sections = sections

    def error(self, line: int, message: str) -> ConfigError:
        return ConfigError(f"{self.path}:{line}: {message}")

    def has(self, section: str, key: str) -> bool:
        return key in self.sections.get(section, {})

    def line(self, section: str, key: str) -> int:
        return self.sections[section][key][1]

    def get(self, section: str, key: str, default: Any = None) -> Any:
        if not self.has(section, key):
            return default
        raw, line = self.sections[section][key]
        try:
            return SCHEMA[section][key](raw)
        except ValueError as exc:
            raise self.error(line, f"invalid value for {section}.{key}: {exc}") from None


def parse_text(text: str, path: str = "<config>") -> Dict[str, Dict[str, Entry]]:
    """Split a config file into sections of (raw value, line) entries"""
    sections: Dict[str, Dict[str, Entry]] = {}
    current: Optional[str] = None
    for lineno, raw_line in enumerate(text.splitlines(), start=1):
        line = raw_line.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("["):
            if not line.endswith("]"):
                raise ConfigError(f"{path}:{lineno}: malformed section header '{raw_line.strip()}'")
            current = line[1:-1].strip().lower()
            if current not in SCHEMA:
                raise ConfigError(f"{path}:{lineno}: unknown section [{current}] (expected one of {sorted(SCHEMA)})")
            sections.setdefault(current, {})
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value', got '{raw_line.strip()}'")
        if current is None:
            raise ConfigError(f"{path}:{lineno}: assignment outside of any [section]")
        key, value = (part.strip() for part in line.split("=", 1))
        key = key.lower()
        if len(value) >= 2 and value[0] == value[-1] and value[0] in "\"'":
            value = value[1:-1]
        if key not in SCHEMA[current]:
            raise ConfigError(f"{path}:{lineno}: unknown key '{key}' in [{current}]")
        if key in sections[current]:
            raise ConfigError(f"{path}:{lineno}: duplicate key '{key}' in [{current}]")
        if not value:
            raise ConfigError(f"{path}:{lineno}: empty value for '{key}'")
        sections[current][key] = (value, lineno)
    return sections


def _build_model(cfg: _Located) -> ModelConfig:
    name = cfg.get("model", "name")
    name_line = cfg.line("model", "name")
    kwargs: Dict[str, Any] = {}
    for key in ("image_size", "head"):
        if cfg.has("model", key):
            kwargs[key] = cfg.get("model", key)
    is_setr = name.startswith("setr-")
    family_keys, other_keys = (SETR_MODEL_KEYS, HLG_MODEL_KEYS) if is_setr else (HLG_MODEL_KEYS, SETR_MODEL_KEYS)
    for key in set(other_keys) - set(family_keys):
        if cfg.has("model", key):
            raise cfg.error(cfg.line("model", key), f"key '{key}' does not apply to model '{name}'")
    if is_setr and cfg.has("model", "head"):
        raise cfg.error(cfg.line("model", "head"), f"key 'head' does not apply to model '{name}'")
    if not is_setr and cfg.has("model", "backbone"):
        raise cfg.error(cfg.line("model", "backbone"), f"key 'backbone' does not apply to model '{name}'")
    backbone, num_classes = cfg.get("model", "backbone"), cfg.get("model", "num_classes")
    try:
        config = model_config(name, backbone, num_classes, **kwargs)
    except ConfigError as exc:
        raise cfg.error(name_line, str(exc)) from None

    if isinstance(config, SetrConfig):
        enc = {k: cfg.get("model", k) for k in ("dropout", "drop_path") if cfg.has("model", k)}
        dec_keys = ("pup_width", "mla_width", "mla_plan", "aux_width", "aux_weight", "aux_taps", "mla_taps")
        dec = {k: cfg.get("model", k) for k in dec_keys if cfg.has("model", k)}
        config = replace(config, encoder=replace(config.encoder, **enc), decoder=replace(config.decoder, **dec))
    else:
        config = _apply_hlg_keys(cfg, config)
    # structural errors are reported at the name line
    try:
        config.validate()
    except ConfigError as exc:
        raise cfg.error(name_line, str(exc)) from None
    return config


def _apply_hlg_keys(cfg: _Located, config: HlgConfig) -> HlgConfig:
    table = ("channels", "heads", "depths", "windows", "dilations")
    if any(cfg.has("model", k) for k in table):
        for k in ("channels", "heads", "depths"):
            if not cfg.has("model", k):
                first = min(cfg.line("model", t) for t in table if cfg.has("model", t))
                raise cfg.error(first, f"an explicit stage table needs channels, heads and depths (missing '{k}')")
        columns = {k: cfg.get("model", k) for k in table if cfg.has("model", k)}
        columns.setdefault("windows", [s.window for s in config.stages])
        columns.setdefault("dilations", [s.dilation for s in config.stages])
        for k, values in columns.items():
            if len(values) != 4:
                raise cfg.error(cfg.line("model", k) if cfg.has("model", k) else cfg.line("model", "name"),
                                f"'{k}' needs 4 values, got {len(values)}")
        stages = [HlgStageConfig(*row) for row in zip(columns["channels"], columns["heads"], columns["depths"],
                                                      columns["windows"], columns["dilations"])]
        config = replace(config, stages=stages)
    scalars = {k: cfg.get("model", k) for k in HLG_MODEL_KEYS if k not in table and cfg.has("model", k)}
    return replace(config, **scalars)


def _build_data(cfg: _Located, model: ModelConfig) -> DataConfig:
    values = {k: cfg.get("data", k) for k in SCHEMA["data"] if cfg.has("data", k)}
    if "num_classes" in values and values["num_classes"] != model.num_classes:
        raise cfg.error(cfg.line("data", "num_classes"),
                        f"data has {values['num_classes']} classes but the model predicts {model.num_classes}")
    values["num_classes"] = model.num_classes
    if isinstance(model, HlgConfig) and model.head is HlgHead.CLASSIFY:
        values.setdefault("kind", DataKind.SYNTH_CLS)
    data = DataConfig(**values)
    if data.kind is DataKind.IMAGE_DIR and not data.path:
        line = cfg.line("data", "kind")
        raise cfg.error(line, "data kind 'image-dir' needs a path")
    return data


def _build_recipe(cfg: _Located) -> RecipeConfig:
    values = {k: cfg.get("recipe", k) for k in SCHEMA["recipe"] if cfg.has("recipe", k)}
    kind = values.pop("optimizer", OptimizerKind.SGD_POLY)
    recipe = RecipeConfig.for_optimizer(kind, **values)
    try:
        recipe.validate()
    except ConfigError as exc:
        line = min((cfg.line("recipe", k) for k in values), default=0)
        raise cfg.error(line, str(exc)) from None
    return recipe


def parse_config(path: Union[str, Path], out: Optional[str] = None, seed: Optional[int] = None,
                 deterministic: Optional[bool] = None) -> RunConfig:
    """
    Read and validate a run configuration; command-line values override the file

    Raises:
        ConfigError: unreadable file, unknown section or key, malformed line,
            invalid value, invalid variant or missing required fields
    """
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"{path}: cannot read config ({exc.strerror or exc})") from None
    return parse_config_text(text, str(path), out, seed, deterministic)


def parse_config_text(text: str, path: str = "<config>", out: Optional[str] = None, seed: Optional[int] = None,
                      deterministic: Optional[bool] = None) -> RunConfig:
    sections = parse_text(text, path)
    cfg = _Located(path, sections)
    missing = [f"{s}.{k}" for s, k in REQUIRED if not cfg.has(s, k) and not (s == "run" and k == "out" and out)]
    if missing:
        raise ConfigError(f"{path}: missing required field(s): {', '.join(missing)}")

    model = _build_model(cfg)
    data = _build_data(cfg, model)
    recipe = _build_recipe(cfg)
    if seed is not None:
        recipe = replace(recipe, seed=seed)
    if deterministic is not None:
        recipe = replace(recipe, deterministic=deterministic)
    run = RunConfig(
        model=model,
        data=data,
        recipe=recipe,
        out=Path(out or cfg.get("run", "out")),
        source=Path(path) if path != "<config>" else None,
        raw={s: {k: v for k, (v, _) in entries.items()} for s, entries in sections.items()},
    )
    logger.debug("Parsed %s: model %s, %d iters", path, model.name, recipe.max_iters)
    return run
