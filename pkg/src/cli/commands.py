"""
train / eval / analyze / visualize

Each command takes a parsed RunConfig, writes its artifacts into run.out
and returns a CommandResult. Errors propagate as the typed exceptions of
src.core.errors; exit_code_for maps them to process exit codes.
"""

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple, Union

import numpy as np

from ..analysis.audit import AuditResult, audit_published
from ..analysis.cost_model import compare_scopes, cost_report, instrumented_counter
from ..analysis.published import PUBLISHED, published_config
from ..core.errors import CheckpointError, ConfigError, DivergenceError
from ..models import build_model, canonical_dict
from ..reports.pnm import read_pnm, write_bytes_atomic, write_pgm
from ..reports.report_generator import generate_cost_report
from ..training.data import ClsSample, build_corpus, collate
from ..training.inference import predict_whole, sliding_window_infer
from ..training.metrics import SegmentationMeter, top1
from ..training.trainer import Trainer
from .checkpoint import load_checkpoint, restore_model, save_checkpoint
from .config_parser import RunConfig
from .visualize import visualize

logger = logging.getLogger(__name__)

CHECKPOINT_NAME = "checkpoint.bin"
METRICS_LOG_NAME = "metrics.log"

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_CONFIG = 2
EXIT_CHECKPOINT = 3
EXIT_DIVERGENCE = 4


def exit_code_for(exc: BaseException) -> int:
    if isinstance(exc, ConfigError):
        return EXIT_CONFIG
    if isinstance(exc, CheckpointError):
        return EXIT_CHECKPOINT
    if isinstance(exc, DivergenceError):
        return EXIT_DIVERGENCE
    return EXIT_ERROR


@dataclass
class CommandResult:
    exit_code: int = EXIT_OK
    artifacts: List[Path] = field(default_factory=list)
    summary: Dict[str, Any] = field(default_factory=dict)


def _load_model(run: RunConfig, checkpoint: Optional[Union[str, Path]], allow_mismatch: bool = False):
    path = Path(checkpoint) if checkpoint else run.out / CHECKPOINT_NAME
    ckpt = load_checkpoint(path)
    model = build_model(run.model, run.recipe.seed)
    restore_model(ckpt, model, run.model, allow_mismatch)
    model.eval()
    return model, ckpt


# ---------------------------------------------------------------------------
# train
# ---------------------------------------------------------------------------
def cmd_train(run: RunConfig, resume: bool = False, show_progress: Optional[bool] = None) -> CommandResult:
    """
    Train from scratch (or from out/checkpoint.bin with resume), appending
    to out/metrics.log and rewriting out/checkpoint.bin at every checkpoint
    interval and at the end
    """
    out = run.out
    out.mkdir(parents=True, exist_ok=True)
    ckpt_path = out / CHECKPOINT_NAME
    log_path = out / METRICS_LOG_NAME

    model = build_model(run.model, run.recipe.seed)
    corpus = build_corpus(run.data)
    state = None
    if resume:
        ckpt = load_checkpoint(ckpt_path)
        restore_model(ckpt, model, run.model)
        state = ckpt.train_state()
        if state.seed != run.recipe.seed:
            raise ConfigError(f"checkpoint was trained with seed {state.seed}, config asks for {run.recipe.seed}")
        logger.info("Resuming %s from step %d", run.model.name, state.step)
    elif log_path.exists():
        log_path.unlink()

    def on_checkpoint(m, s):
        save_checkpoint(ckpt_path, m, run.model, s, run.recipe.optimizer.value)

    trainer = Trainer(model, corpus, run.recipe, run.model.num_classes,
                      augment=run.data.augment, crop_size=run.data.crop_size,
                      eval_samples=run.data.eval_samples, log_path=log_path,
                      on_checkpoint=on_checkpoint, show_progress=show_progress)
    result = trainer.fit(state)

    summary: Dict[str, Any] = {"steps": result.state.step, "lr": result.state.lr}
    losses = [r["loss"] for r in result.history if "loss" in r]
    if losses:
        summary["final_loss"] = losses[-1]
    for record in result.history:
        if "metric" in record:
            summary[str(record["metric"])] = record["value"]
    return CommandResult(EXIT_OK, [ckpt_path, log_path], summary)


# ---------------------------------------------------------------------------
# eval
# ---------------------------------------------------------------------------
def _segment(model, image: np.ndarray, window: Optional[int]) -> np.ndarray:
    if window and tuple(image.shape[:2]) != (window, window):
        return sliding_window_infer(model, image, window, max(1, 2 * window // 3))
    return predict_whole(model, image)


def cmd_eval(run: RunConfig, checkpoint: Optional[Union[str, Path]] = None) -> CommandResult:
    """
    Score the whole corpus: mIoU and pixel accuracy (segmenters) or top-1
    (classifiers). Writes out/eval.txt and, for segmenters, one PGM of raw
    class ids per sample under out/predictions/.
    """
    model, _ = _load_model(run, checkpoint)
    corpus = build_corpus(run.data)
    out = run.out
    artifacts: List[Path] = []
    if isinstance(corpus[0], ClsSample):
        images, labels = collate(corpus)
        summary: Dict[str, Any] = {"top1": top1(predict_whole(model, images), labels)}
        table = None
    else:
        meter = SegmentationMeter(run.model.num_classes)
        for i, sample in enumerate(corpus):
            pred = _segment(model, sample.image, run.data.crop_size)[0].argmax(axis=-1)
            meter.add_batch(pred, sample.mask)
            artifacts.append(write_pgm(out / "predictions" / f"{i:04d}.pgm", pred.astype(np.uint8)))
        summary = meter.summary()
        table = meter.to_frame()

    lines = [f"{name}={format(float(value), '.9g')}" for name, value in summary.items()]
    if table is not None:
        lines += ["", table.to_string(index=False)]
    artifacts.insert(0, write_bytes_atomic(out / "eval.txt", ("\n".join(lines) + "\n").encode("utf-8")))
    logger.info("Evaluated %d samples: %s", len(corpus), summary)
    return CommandResult(EXIT_OK, artifacts, summary)


# ---------------------------------------------------------------------------
# analyze
# ---------------------------------------------------------------------------
def published_key(run: RunConfig) -> Optional[str]:
    """Key of the PUBLISHED entry whose config equals run.model, if any"""
    target = canonical_dict(run.model)
    for key in PUBLISHED:
        if canonical_dict(published_config(key)) == target:
            return key
    return None


def cmd_analyze(run: RunConfig, input_size: Optional[Tuple[int, int]] = None,
                verify: bool = False) -> CommandResult:
    """
    Cost report for run.model; audited against the published figures when
    the config is a published variant at its published resolution, and
    cross-checked against an instrumented forward when `verify` is set
    """
    report = cost_report(run.model, input_size)
    result: Optional[AuditResult] = None
    key = published_key(run)
    if key is not None and report.input_size == (PUBLISHED[key].input_size,) * 2:
        result = audit_published(key)
    scope_check = None
    if verify:
        model = build_model(run.model, run.recipe.seed)
        scope_check = compare_scopes(report, instrumented_counter(model, report.input_size))
    workbook = generate_cost_report(str(run.out), report, result, scope_check)
    text = workbook.with_suffix(".txt")
    summary: Dict[str, Any] = {
        "params": report.total_params,
        "macs": report.total_macs,
        "flops": report.total_flops,
    }
    if result is not None:
        summary["audit"] = "PASS" if result.passed else "FAIL"
    if scope_check is not None:
        summary["max_scope_gap"] = float(scope_check["rel_gap"].abs().max())
    return CommandResult(EXIT_OK, [workbook, text], summary)


# ---------------------------------------------------------------------------
# visualize
# ---------------------------------------------------------------------------
def load_input_image(run: RunConfig, input_path: Optional[Union[str, Path]] = None) -> np.ndarray:
    """A PPM file scaled to [0, 1], or the first corpus sample"""
    if input_path is not None:
        pixels = read_pnm(input_path)
        if pixels.ndim != 3:
            raise ValueError(f"{input_path}: expected a color (P6) image")
        return pixels.astype(np.float32) / 255.0
    return build_corpus(run.data)[0].image


def cmd_visualize(run: RunConfig, what: str, checkpoint: Optional[Union[str, Path]] = None,
                  layer: int = 1, head: int = 0, point: Tuple[int, int] = (0, 0),
                  input_path: Optional[Union[str, Path]] = None) -> CommandResult:
    model, _ = _load_model(run, checkpoint)
    image = None if what == "pos-sim" else load_input_image(run, input_path)
    written = visualize(model, what, run.out / "visualize", image, layer, head, point)
    summary = {str(p.name): f"{raw.shape[0]}x{raw.shape[1]}" for p, raw in written.items()}
    return CommandResult(EXIT_OK, list(written), summary)
