"""Deterministic ice-layer thickness regression at miniature scale.

Library + CLI for: extracting per-layer mean thickness targets from labeled
echogram masks, generating synthetic layered scenes with exact oracles, and
training miniature multi-output CNN regressors with Adam on an MAE loss.
"""

from .backbones import (ArchitectureSpec, BACKBONE_KINDS, Model, build_model,
                        load_model, model_forward, save_model)
from .groundtruth import (DatasetIndex, LayerMask, ThicknessVector,
                          extract_thickness, load_manifest, max_layer_count,
                          pixels_to_cm, validate_mask)
from .rng import Rng
from .synthgen import SceneSpec, SyntheticSample, generate_dataset, generate_scene
from .tensor import Tape, Tensor
from .training import (AdamState, LossRecord, TrainConfig, adam_step, evaluate,
                       report_table, train)

__all__ = [
    "ArchitectureSpec", "BACKBONE_KINDS", "Model", "build_model", "load_model",
    "model_forward", "save_model", "DatasetIndex", "LayerMask",
    "ThicknessVector", "extract_thickness", "load_manifest", "max_layer_count",
    "pixels_to_cm", "validate_mask", "Rng", "SceneSpec", "SyntheticSample",
    "generate_dataset", "generate_scene", "Tape", "Tensor", "AdamState",
    "LossRecord", "TrainConfig", "adam_step", "evaluate", "report_table",
    "train",
]
