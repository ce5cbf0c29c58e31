"""Deterministic simulator of federated masked-autoencoder pretraining."""

from .aggregation import ServerOptState, Strategy, combine_deltas, step
from .benchmark import ProbeResult, probe, sweep_epochs, train_bound
from .config import RunConfig, build_scenario, load_config, save_config
from .mae import ImageSample, MaeParams, ModelShape, encode, forward, grad, masked_l1_loss, patchify, sample_mask
from .numeric import SeededRng, axpy, elementwise, weighted_mean
from .orchestrator import (Federation, FederationConfig, RoundRecord, UpdateMessage, decode_update,
                           encode_update, run_federation)
from .partition import SplitAssignment, SynthSpec, generate_synth, heterogeneous_split, homogeneous_split
from .persistence import Checkpoint, load_checkpoint, save_checkpoint
from .trainer import ClientUpdate, TrainerConfig, local_train

__version__ = "0.1.0"

__all__ = [
    "ServerOptState", "Strategy", "combine_deltas", "step",
    "ProbeResult", "probe", "sweep_epochs", "train_bound",
    "RunConfig", "build_scenario", "load_config", "save_config",
    "ImageSample", "MaeParams", "ModelShape", "encode", "forward", "grad", "masked_l1_loss",
    "patchify", "sample_mask",
    "SeededRng", "axpy", "elementwise", "weighted_mean",
    "Federation", "FederationConfig", "RoundRecord", "UpdateMessage", "decode_update",
    "encode_update", "run_federation",
    "SplitAssignment", "SynthSpec", "generate_synth", "heterogeneous_split", "homogeneous_split",
    "Checkpoint", "load_checkpoint", "save_checkpoint",
    "ClientUpdate", "TrainerConfig", "local_train",
]
