"""
Training loop and the metrics log

Log format: one record per line, space-separated key=value pairs.
    step=<int> loss=<float> lr=<float>
    step=<int> metric=<name> value=<float>
Floats use '{:.9g}', so two runs with identical numerics write identical
files. `step` counts completed optimizer steps.
"""

import logging
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Union

import numpy as np
import pandas as pd
from tqdm import tqdm

from ..core.errors import DivergenceError, NonFiniteError
from ..core.module import Module
from ..core.tensor import Tensor, forward_rng
from ..models.setr_decoders import SegmentationOutput
from .data import ClsSample, Sample, SynthSegSample, augment, collate
from .inference import predict_whole
from .losses import cls_loss, seg_loss
from .metrics import SegmentationMeter, top1
from .optim import RecipeConfig, TrainState, learning_rate, optimizer_step

logger = logging.getLogger(__name__)

CheckpointHook = Callable[[Module, TrainState], None]


def format_record(**fields) -> str:
    parts = []
    for key, value in fields.items():
        if isinstance(value, float):
            value = format(value, ".9g")
        parts.append(f"{key}={value}")
    return " ".join(parts)


def parse_record(line: str) -> Dict[str, Union[int, float, str]]:
    record: Dict[str, Union[int, float, str]] = {}
    for token in line.split():
        key, _, raw = token.partition("=")
        for cast in (int, float):
            try:
                record[key] = cast(raw)
                break
            except ValueError:
                continue
        else:
            record[key] = raw
    return record


def read_metrics_log(path: Union[str, Path]) -> pd.DataFrame:
    """Metrics log as a DataFrame; loss rows have NaN metric/value and vice versa"""
    lines = [ln for ln in Path(path).read_text(encoding="utf-8").splitlines() if ln.strip()]
    return pd.DataFrame([parse_record(ln) for ln in lines])


def truncate_metrics_log(path: Path, step: int) -> None:
    """Drop records written after `step` (used when resuming)"""
    if not path.exists():
        return
    kept = [ln for ln in path.read_text(encoding="utf-8").splitlines()
            if ln.strip() and int(parse_record(ln).get("step", 0)) <= step]
    path.write_text("".join(ln + "\n" for ln in kept), encoding="utf-8")


@dataclass
class TrainResult:
    state: TrainState
    history: List[Dict[str, Union[int, float, str]]] = field(default_factory=list)


class Trainer:
    """
    Single-process trainer over an in-memory corpus

    Step t draws its batch, augmentation and dropout masks from
    default_rng([seed, t]), so a run resumed at step t continues exactly as
    the uninterrupted run would.

    Args:
        model: a segmenter (returns SegmentationOutput) or a classifier (returns logits)
        corpus: training samples
        recipe: optimizer, schedule and intervals
        augment: random resize / crop / flip for segmentation samples
        crop_size: training crop (None keeps the sample size)
        eval_samples: number of corpus samples scored at each eval interval
        num_classes: class count for the segmentation meter
        log_path: metrics log file, appended to
        on_checkpoint: called with (model, state) at checkpoint intervals and at the end
    """

    def __init__(self, model: Module, corpus: Sequence[Sample], recipe: RecipeConfig,
                 num_classes: int, augment: bool = True, crop_size: Optional[int] = None,
                 eval_samples: int = 4, log_path: Optional[Union[str, Path]] = None,
                 on_checkpoint: Optional[CheckpointHook] = None, show_progress: Optional[bool] = None):
        recipe.validate()
        if not corpus:
            raise ValueError("training corpus is empty")
        self.model = model
        self.corpus = list(corpus)
        self.recipe = recipe
        self.num_classes = num_classes
        self.augment = augment
        self.crop_size = crop_size
        self.eval_samples = min(eval_samples, len(self.corpus))
        self.log_path = Path(log_path) if log_path is not None else None
        self.on_checkpoint = on_checkpoint
        self.show_progress = sys.stderr.isatty() if show_progress is None else show_progress
        self.history: List[Dict[str, Union[int, float, str]]] = []
        self.params = dict(model.named_parameters())

    # -- records -------------------------------------------------------------
    def _emit(self, **fields) -> None:
        line = format_record(**fields)
        logger.info(line)
        self.history.append(parse_record(line))
        if self.log_path is not None:
            self.log_path.parent.mkdir(parents=True, exist_ok=True)
            with open(self.log_path, "a", encoding="utf-8") as fh:
                fh.write(line + "\n")

    # -- batches -------------------------------------------------------------
    def _aux_weight(self) -> float:
        if self.recipe.aux_weight is not None:
            return self.recipe.aux_weight
        decoder = getattr(getattr(self.model, "config", None), "decoder", None)
        return decoder.aux_weight if decoder is not None else 0.4

    def make_batch(self, rng: np.random.Generator):
        n = len(self.corpus)
        size = self.recipe.batch_size
        indices = rng.choice(n, size=size, replace=size > n)
        samples = []
        for i in indices:
            sample = self.corpus[int(i)]
            if isinstance(sample, SynthSegSample) and self.augment:
                crop = None if self.crop_size is None else (self.crop_size, self.crop_size)
                sample = augment(sample, rng, crop_size=crop)
            elif isinstance(sample, ClsSample) and self.augment and rng.random() < 0.5:
                sample = ClsSample(sample.image[:, ::-1].copy(), sample.label, sample.seed, sample.index)
            samples.append(sample)
        return collate(samples)

    # -- steps ---------------------------------------------------------------
    def train_step(self, state: TrainState) -> TrainState:
        """One optimizer step; raises DivergenceError on NaN/Inf loss or gradients"""
        rng = np.random.default_rng([state.seed, state.step])
        images, targets = self.make_batch(rng)
        self.model.train()
        self.model.zero_grad()
        try:
            with forward_rng(rng):
                output = self.model(Tensor(images))
                if isinstance(output, SegmentationOutput):
                    loss = seg_loss(output, targets, self._aux_weight())
                else:
                    loss = cls_loss(output, targets)
        except NonFiniteError as exc:
            raise DivergenceError(f"step {state.step}: forward produced non-finite values ({exc})") from exc
        value = loss.item()
        if not np.isfinite(value):
            raise DivergenceError(f"step {state.step}: loss is {value}")
        loss.backward()
        grads = {name: p.grad for name, p in self.params.items() if p.grad is not None}
        for name, grad in grads.items():
            if not np.all(np.isfinite(grad)):
                raise DivergenceError(f"step {state.step}: non-finite gradient for '{name}'")
        state = optimizer_step(state, self.params, grads, self.recipe)
        self._emit(step=state.step, loss=value, lr=state.lr)
        return state

    def evaluate(self, step: int) -> Dict[str, float]:
        """Score the first eval_samples corpus samples; logs one record per metric"""
        self.model.eval()
        samples = self.corpus[:self.eval_samples]
        if isinstance(samples[0], ClsSample):
            images, labels = collate(samples)
            results = {"top1": top1(predict_whole(self.model, images), labels)}
        else:
            meter = SegmentationMeter(self.num_classes)
            for sample in samples:
                logits = predict_whole(self.model, sample.image)
                meter.add_batch(logits[0].argmax(axis=-1), sample.mask)
            results = {"miou": meter.mean_iou(), "pixel_accuracy": meter.pixel_accuracy()}
        for name, value in results.items():
            self._emit(step=step, metric=name, value=float(value))
        self.model.train()
        return results

    def fit(self, state: Optional[TrainState] = None) -> TrainResult:
        """Run until recipe.max_iters; resumes from `state` when given"""
        recipe = self.recipe
        state = state or TrainState(step=0, lr=learning_rate(0, recipe), seed=recipe.seed)
        if state.step and self.log_path is not None:
            truncate_metrics_log(self.log_path, state.step)
        logger.info("Training %s for %d steps from step %d",
                    type(self.model).__name__, recipe.max_iters, state.step)
        progress = tqdm(total=recipe.max_iters, initial=state.step, desc="train",
                        disable=not self.show_progress, leave=False)
        try:
            while state.step < recipe.max_iters:
                state = self.train_step(state)
                progress.update(1)
                progress.set_postfix(loss=self.history[-1]["loss"], lr=state.lr)
                if recipe.eval_interval and state.step % recipe.eval_interval == 0:
                    self.evaluate(state.step)
                if (self.on_checkpoint and recipe.checkpoint_interval
                        and state.step % recipe.checkpoint_interval == 0 and state.step < recipe.max_iters):
                    self.on_checkpoint(self.model, state)
        finally:
            progress.close()
        if self.on_checkpoint:
            self.on_checkpoint(self.model, state)
        return TrainResult(state, self.history)


def train(model: Module, corpus: Sequence[Sample], recipe: RecipeConfig, num_classes: int,
          **kwargs) -> TrainResult:
    """Convenience wrapper around Trainer(...).fit()"""
    return Trainer(model, corpus, recipe, num_classes, **kwargs).fit()
