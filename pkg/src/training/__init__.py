"""
Training harness: corpora, losses, optimizers, metrics, inference and the trainer
"""

from .data import (
    IGNORE_INDEX,
    ClsSample,
    DataConfig,
    DataKind,
    SynthSegSample,
    augment,
    build_corpus,
    collate,
    flip,
    load_image_dir,
    synth_cls_dataset,
    synth_seg_dataset,
)
from .inference import predict_whole, sliding_window_infer
from .losses import cls_loss, seg_loss
from .metrics import SegmentationMeter, confusion_matrix, miou, pixel_accuracy, top1
from .optim import (
    OptimizerKind,
    RecipeConfig,
    TrainState,
    adamw_cosine_step,
    cosine_lr,
    learning_rate,
    optimizer_step,
    poly_lr,
    sgd_poly_step,
)
from .trainer import TrainResult, Trainer, read_metrics_log, train

__all__ = [
    'IGNORE_INDEX',
    'ClsSample',
    'DataConfig',
    'DataKind',
    'SynthSegSample',
    'augment',
    'build_corpus',
    'collate',
    'flip',
    'load_image_dir',
    'synth_cls_dataset',
    'synth_seg_dataset',
    'predict_whole',
    'sliding_window_infer',
    'cls_loss',
    'seg_loss',
    'SegmentationMeter',
    'confusion_matrix',
    'miou',
    'pixel_accuracy',
    'top1',
    'OptimizerKind',
    'RecipeConfig',
    'TrainState',
    'adamw_cosine_step',
    'cosine_lr',
    'learning_rate',
    'optimizer_step',
    'poly_lr',
    'sgd_poly_step',
    'TrainResult',
    'Trainer',
    'read_metrics_log',
    'train',
]
