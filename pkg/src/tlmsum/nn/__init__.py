"""Tensor primitives, layers, optimisation and checkpointing shared by all models."""

from .checkpoint import (CheckpointError, CheckpointMismatchError, CorruptCheckpointError, ModelCheckpoint,
                         config_hash, load_checkpoint, save_checkpoint)
from .layers import (BiLSTM, Block, Dropout, Embedding, LayerNorm, Linear, LSTMCell, TransformerLM, run_lstm,
                     seed_dropout)
from .ops import ShapeError
from .optim import ParameterStore, ScheduleSpec, TrainConfig, adam_step, lr_schedule

__all__ = [
    "BiLSTM", "Block", "CheckpointError", "CheckpointMismatchError", "CorruptCheckpointError", "Dropout",
    "Embedding", "LSTMCell", "LayerNorm", "Linear", "ModelCheckpoint", "ParameterStore", "ScheduleSpec",
    "ShapeError", "TrainConfig", "TransformerLM", "adam_step", "config_hash", "load_checkpoint", "lr_schedule",
    "run_lstm", "save_checkpoint", "seed_dropout",
]
