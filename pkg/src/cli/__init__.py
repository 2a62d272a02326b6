"""
Command-line layer: run configuration, checkpoints, figures and the commands
"""

from .checkpoint import (
    Checkpoint,
    config_fingerprint,
    decode_checkpoint,
    encode_checkpoint,
    load_checkpoint,
    restore_model,
    save_checkpoint,
)
from .commands import (
    CommandResult,
    cmd_analyze,
    cmd_eval,
    cmd_train,
    cmd_visualize,
    exit_code_for,
)
from .config_parser import RunConfig, parse_config, parse_config_text
from .visualize import Visual, attention_map, feature_map, position_similarity, visualize

__all__ = [
    'Checkpoint',
    'config_fingerprint',
    'decode_checkpoint',
    'encode_checkpoint',
    'load_checkpoint',
    'restore_model',
    'save_checkpoint',
    'CommandResult',
    'cmd_analyze',
    'cmd_eval',
    'cmd_train',
    'cmd_visualize',
    'exit_code_for',
    'RunConfig',
    'parse_config',
    'parse_config_text',
    'Visual',
    'attention_map',
    'feature_map',
    'position_similarity',
    'visualize',
]
