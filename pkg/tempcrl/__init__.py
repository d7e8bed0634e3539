from __future__ import annotations

from ._private.config import ExperimentConfig
from ._private.errors import (
    CalibrationError,
    CheckpointError,
    ConfigError,
    ContractError,
    InvalidDistributionError,
    NumericFailureError,
    TempcrlError,
    VerificationExceptionGroup,
)
from ._private.logging import TempcrlLogger
from ._private.types import GraphKind, GraphMethod, R2Predictor, R2Split
from .diffcore import ParamTensor, Rng, value_and_grad
from .evaluate import EvalConfig, MetricsReport, evaluate_oracle, evaluate_run, lemma1_check, shd, summarize
from .flows import FlowStack, make_encoder, make_entangler
from .graphlearn import EncoParams, NotearsParams, hard_graph
from .model import Assignment, EncoderModel, PriorNet, prior_logprob
from .scm import CausalGraph, GeneratorConfig, GroundTruthSCM, Trajectory, generate
from .train import TrainConfig, TrainResult, checkpoint_load, checkpoint_save, train
from .verify import run_verification

__all__ = [
    "Assignment",
    "CalibrationError",
    "CausalGraph",
    "CheckpointError",
    "ConfigError",
    "ContractError",
    "EncoParams",
    "EncoderModel",
    "EvalConfig",
    "ExperimentConfig",
    "FlowStack",
    "GeneratorConfig",
    "GraphKind",
    "GraphMethod",
    "GroundTruthSCM",
    "InvalidDistributionError",
    "MetricsReport",
    "NotearsParams",
    "NumericFailureError",
    "ParamTensor",
    "PriorNet",
    "R2Predictor",
    "R2Split",
    "Rng",
    "TempcrlError",
    "TempcrlLogger",
    "TrainConfig",
    "TrainResult",
    "Trajectory",
    "VerificationExceptionGroup",
    "checkpoint_load",
    "checkpoint_save",
    "evaluate_oracle",
    "evaluate_run",
    "generate",
    "hard_graph",
    "lemma1_check",
    "make_encoder",
    "make_entangler",
    "prior_logprob",
    "run_verification",
    "shd",
    "summarize",
    "train",
    "value_and_grad",
]
