"""Flat on-disk run configuration and scenario assembly.

A config file is an INI document with a single ``[run]`` section of
``key = value`` lines.  Every key is a field of :class:`RunConfig`; unknown keys
are rejected.  ``server_lr`` may be left empty to use the strategy default.
"""

from __future__ import annotations

import configparser
import io
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from .aggregation import Strategy
from .errors import ConfigError, FedMaeError, NotFoundError
from .mae import ImageSample, ModelShape
from .numeric import SeededRng, stream_id
from .orchestrator import FederationConfig
from .partition import (SplitAssignment, SynthSpec, generate_synth, heterogeneous_split,
                        homogeneous_split, pools_from_samples)

SCHEMA_VERSION = 1
SECTION = "run"


@dataclass(frozen=True)
class RunConfig:
    schema_version: int = SCHEMA_VERSION
    seed: int = 0
    kind: str = "fedfound"
    # federation
    num_clients: int = 5
    rounds: int = 150
    strategy: str = "fedavg"
    server_lr: float | None = None
    momentum: float = 0.9
    beta1: float = 0.9
    beta2: float = 0.99
    eps: float = 1e-8
    weighting: str = "sample"
    literal_signs: bool = False
    drop_prob: float = 0.0
    corrupt_prob: float = 0.0
    workers: int = 1
    # local training
    local_steps: int = 5
    lr: float = 1.0
    batch_size: int = 32
    mask_ratio: float = 0.6
    # model
    patch: int = 4
    hidden: int = 32
    latent: int = 8
    height: int = 16
    width: int = 16
    init_scale: float = 0.4
    # data and split
    split: str = "heterogeneous"
    split_manifest: str = ""
    server_size: int = 150
    per_client: int = 0
    clients_b: int = 2
    classes: int = 8
    per_class: int = 150
    synth_rank: int = 3
    amplitude: float = 0.4
    noise: float = 0.2
    shift_b: float = 0.05
    contrast_b: float = 0.9
    domain_mix: float = 1.0
    tile: int = 4
    # benchmark
    probe_per_class: int = 100
    probe_classifier: str = "linear"
    probe_epochs: int = 300
    probe_lr: float = 0.5
    probe_hidden: int = 64
    probe_seed: int = 0
    sweep_every: int = 10
    checkpoint_every: int = 0

    def __post_init__(self):
        if self.schema_version != SCHEMA_VERSION:
            raise ConfigError(f"config schema v{self.schema_version} is not supported (v{SCHEMA_VERSION})")
        if self.kind not in ("lower", "upper", "fedfound"):
            raise ConfigError(f"kind must be lower, upper or fedfound, got {self.kind!r}")
        if self.split not in ("homogeneous", "heterogeneous", "manifest"):
            raise ConfigError(f"split must be homogeneous, heterogeneous or manifest, got {self.split!r}")
        if self.split == "manifest" and not self.split_manifest:
            raise ConfigError("split = manifest needs split_manifest")
        if self.sweep_every < 1 or self.checkpoint_every < 0:
            raise ConfigError("sweep_every must be >= 1 and checkpoint_every >= 0")
        try:
            self.federation()
            self.synth_spec()
        except FedMaeError as exc:
            raise ConfigError(str(exc)) from exc

    def strategy_obj(self) -> Strategy:
        return Strategy(self.strategy, self.server_lr, self.momentum, self.beta1, self.beta2,
                        self.eps, self.weighting, self.literal_signs)

    def model_shape(self) -> ModelShape:
        return ModelShape(self.patch, self.hidden, self.latent, self.height, self.width)

    def federation(self) -> FederationConfig:
        from .trainer import TrainerConfig

        return FederationConfig(
            num_clients=self.num_clients,
            rounds=self.rounds,
            strategy=self.strategy_obj(),
            trainer=TrainerConfig(self.local_steps, self.lr, self.batch_size, self.mask_ratio),
            shape=self.model_shape(),
            split=self.split,
            seed=self.seed,
            init_scale=self.init_scale,
            drop_prob=self.drop_prob,
            corrupt_prob=self.corrupt_prob,
            workers=self.workers,
        )

    def synth_spec(self) -> SynthSpec:
        return SynthSpec(self.classes, self.per_class, self.height, self.width, self.synth_rank,
                         self.amplitude, self.noise, self.shift_b, self.contrast_b,
                         self.domain_mix, self.tile, self.seed)

    def probe_kwargs(self) -> dict:
        kw = {"epochs": self.probe_epochs, "lr": self.probe_lr}
        if self.probe_classifier == "mlp":
            kw["hidden"] = self.probe_hidden
        return kw


_FIELDS = {f.name: f for f in fields(RunConfig)}


def _parse_value(name: str, text: str):
    default = _FIELDS[name].default
    text = text.strip()
    if name == "server_lr":
        return None if text.lower() in ("", "none", "default") else float(text)
    if isinstance(default, bool):
        low = text.lower()
        if low in ("true", "yes", "1", "on"):
            return True
        if low in ("false", "no", "0", "off"):
            return False
        raise ValueError(f"not a boolean: {text!r}")
    if isinstance(default, int):
        return int(text)
    if isinstance(default, float):
        return float(text)
    return text


def _format_value(value) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def config_from_text(text: str, **overrides) -> RunConfig:
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from exc
    extra = [s for s in cp.sections() if s != SECTION]
    if extra:
        raise ConfigError(f"unknown config sections: {extra}")
    values = {}
    if cp.has_section(SECTION):
        for key, raw in cp.items(SECTION):
            if key not in _FIELDS:
                raise ConfigError(f"unknown config key {key!r}")
            try:
                values[key] = _parse_value(key, raw)
            except ValueError as exc:
                raise ConfigError(f"bad value for {key}: {exc}") from exc
    values.update({k: v for k, v in overrides.items() if v is not None})
    return RunConfig(**values)


def config_to_text(cfg: RunConfig) -> str:
    buf = io.StringIO()
    buf.write(f"[{SECTION}]\n")
    for f in fields(RunConfig):
        buf.write(f"{f.name} = {_format_value(getattr(cfg, f.name))}\n")
    return buf.getvalue()


def load_config(path, **overrides) -> RunConfig:
    path = Path(path)
    if not path.is_file():
        raise NotFoundError(f"config not found: {path}")
    return config_from_text(path.read_text(), **overrides)


def save_config(path, cfg: RunConfig) -> None:
    from .persistence import atomic_write

    atomic_write(path, config_to_text(cfg))


@dataclass
class Scenario:
    """Everything one run needs: federation config, node shards and the labelled probe set."""

    config: RunConfig
    federation: FederationConfig
    split: SplitAssignment
    shards: dict[int, list[ImageSample]]
    pretrain: list[ImageSample]
    probe_set: list[ImageSample] = field(default_factory=list)


PROBE_ID_OFFSET = 10**7


def make_split(cfg: RunConfig, pretrain: list[ImageSample]) -> SplitAssignment:
    pool_a, pool_b = pools_from_samples(pretrain)
    rng = SeededRng(cfg.seed, stream_id("split"))
    if cfg.split == "manifest":
        split = SplitAssignment.from_manifest(Path(cfg.split_manifest).read_text())
    elif cfg.split == "homogeneous":
        per_client = cfg.per_client or (pool_a.size + pool_b.size - cfg.server_size) // max(cfg.num_clients, 1)
        split = homogeneous_split(pool_a, pool_b, per_client, cfg.server_size, rng, cfg.num_clients)
    else:
        split = heterogeneous_split(pool_a, pool_b, cfg.server_size, rng,
                                    cfg.num_clients - cfg.clients_b, cfg.clients_b)
    split.validate([pool_a, pool_b])
    if split.num_clients != cfg.num_clients:
        raise ConfigError(f"split has {split.num_clients} clients, config expects {cfg.num_clients}")
    return split


def build_scenario(cfg: RunConfig) -> Scenario:
    spec = cfg.synth_spec()
    pretrain = generate_synth(spec)
    split = make_split(cfg, pretrain)
    by_id = {s.sample_id: s for s in pretrain}
    shards = {node: [by_id[int(i)] for i in ids] for node, ids in split.nodes.items()}
    probe_set = generate_synth(replace(spec, per_class=cfg.probe_per_class), draw=1,
                               id_offset=PROBE_ID_OFFSET)
    return Scenario(cfg, cfg.federation(), split, shards, pretrain, probe_set)


def synth_manifest(samples) -> str:
    from .numeric import checksum64

    lines = ["# sample_id domain label pixel_checksum"]
    for s in samples:
        lines.append(f"{s.sample_id} {s.domain} {s.label} {checksum64(np.asarray(s.pixels).ravel()):016x}")
    return "\n".join(lines) + "\n"
