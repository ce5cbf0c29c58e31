"""Federation state machine, update wire format and an in-process simulated network.

Every round the global model is broadcast to the server (node 0) and the
clients (nodes 1..N).  Each node trains locally, its update is packed into an
``UpdateMessage`` and pushed through :class:`SimulatedNetwork`, and the
aggregator decodes what arrives, combines it and takes one optimizer step.
"""

from __future__ import annotations

import hashlib
import logging
import struct
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from . import aggregation
from .aggregation import ServerOptState, Strategy
from .errors import (ChecksumError, DimensionError, InvalidArgumentError, NumericError,
                     ProtocolError, TruncatedPayloadError, VersionMismatchError)
from .mae import ImageSample, ModelShape, batch_loss, init_params, sample_mask
from .numeric import SeededRng, as_param_vector, checksum64, stream_id
from .trainer import ClientUpdate, TrainerConfig, local_train, patchify_all

log = logging.getLogger(__name__)

PROTOCOL_VERSION = 1
MAGIC = b"FFMU"
# magic, version, round, node id, n_k, delta length, trace length
_HEADER = struct.Struct("<4sHIIQQI")
_DIGEST = 8


def _digest(data: bytes) -> bytes:
    return hashlib.blake2b(data, digest_size=_DIGEST).digest()


@dataclass(eq=False)
class UpdateMessage:
    version: int
    round: int
    node_id: int
    num_samples: int
    delta: np.ndarray
    loss_trace: np.ndarray
    checksum: bytes = b""

    def body(self) -> bytes:
        header = _HEADER.pack(MAGIC, self.version, self.round, self.node_id, self.num_samples,
                              self.delta.size, self.loss_trace.size)
        return (header + np.ascontiguousarray(self.delta, dtype="<f8").tobytes()
                + np.ascontiguousarray(self.loss_trace, dtype="<f8").tobytes())

    def pack(self) -> bytes:
        return self.body() + self.checksum

    @classmethod
    def unpack(cls, data: bytes, expected_version: int = PROTOCOL_VERSION) -> "UpdateMessage":
        """Parse wire bytes, checking length, checksum and version in that order."""
        if len(data) < _HEADER.size + _DIGEST:
            raise TruncatedPayloadError(f"message of {len(data)} bytes is shorter than a header")
        magic, version, rnd, node, n_k, n_delta, n_trace = _HEADER.unpack_from(data)
        expected = _HEADER.size + 8 * (n_delta + n_trace) + _DIGEST
        if magic != MAGIC or len(data) != expected:
            raise TruncatedPayloadError(
                f"message from node {node} round {rnd}: {len(data)} bytes, header implies {expected}",
                node, rnd)
        if _digest(data[:-_DIGEST]) != data[-_DIGEST:]:
            raise ChecksumError(f"checksum mismatch in update from node {node} round {rnd}",
                                node, rnd)
        if version != expected_version:
            raise VersionMismatchError(
                f"node {node} speaks protocol v{version}, expected v{expected_version}", node, rnd)
        off = _HEADER.size
        delta = np.frombuffer(data, dtype="<f8", count=n_delta, offset=off).astype(np.float64)
        trace = np.frombuffer(data, dtype="<f8", count=n_trace, offset=off + 8 * n_delta)
        return cls(version, rnd, node, n_k, delta, trace.astype(np.float64), data[-_DIGEST:])

    def verify(self) -> bool:
        return _digest(self.body()) == self.checksum


def encode_update(u: ClientUpdate, round_index: int, version: int = PROTOCOL_VERSION) -> UpdateMessage:
    delta = np.asarray(u.delta, dtype=np.float64).ravel()
    if delta.size == 0:
        raise InvalidArgumentError(f"node {u.node_id}: refusing to encode an empty delta")
    if u.num_samples < 1:
        raise InvalidArgumentError(f"node {u.node_id}: sample count must be >= 1")
    msg = UpdateMessage(version, round_index, u.node_id, u.num_samples, delta.copy(),
                        np.asarray(u.loss_trace, dtype=np.float64))
    msg.checksum = _digest(msg.body())
    return msg


def decode_update(msg, expected_version: int = PROTOCOL_VERSION) -> ClientUpdate:
    """Turn an ``UpdateMessage`` (or its wire bytes) back into a ``ClientUpdate``."""
    if isinstance(msg, (bytes, bytearray)):
        msg = UpdateMessage.unpack(bytes(msg), expected_version)
    else:
        if not msg.verify():
            raise ChecksumError(f"checksum mismatch in update from node {msg.node_id} "
                                f"round {msg.round}", msg.node_id, msg.round)
        if msg.version != expected_version:
            raise VersionMismatchError(f"node {msg.node_id} speaks protocol v{msg.version}, "
                                       f"expected v{expected_version}", msg.node_id, msg.round)
    return ClientUpdate(msg.node_id, msg.num_samples, msg.delta.copy(),
                        [float(x) for x in msg.loss_trace])


class SimulatedNetwork:
    """Lossless in-process queue with optional seeded drop/corrupt faults.

    Fault decisions are drawn per (round, node) so they do not depend on the
    order in which nodes send.
    """

    def __init__(self, seed: int = 0, drop_prob: float = 0.0, corrupt_prob: float = 0.0):
        for p in (drop_prob, corrupt_prob):
            if not 0.0 <= p <= 1.0:
                raise InvalidArgumentError("fault probabilities must lie in [0, 1]")
        self.drop_prob = drop_prob
        self.corrupt_prob = corrupt_prob
        self._rng = SeededRng(seed, stream_id("network-faults"))
        self._queue: list[tuple[int, bytes]] = []
        self.dropped: list[tuple[int, int]] = []

    @property
    def faulty(self) -> bool:
        return self.drop_prob > 0 or self.corrupt_prob > 0

    def send(self, node_id: int, round_index: int, data: bytes) -> None:
        if self.faulty:
            g = self._rng.at_block(round_index).substream(node_id).generator()
            u_drop, u_corrupt, pos = g.random(), g.random(), g.integers(_HEADER.size, len(data))
            if u_drop < self.drop_prob:
                self.dropped.append((round_index, node_id))
                log.info("round %d: dropped update from node %d", round_index, node_id)
                return
            if u_corrupt < self.corrupt_prob:
                buf = bytearray(data)
                buf[pos] ^= 0xFF
                data = bytes(buf)
        self._queue.append((node_id, data))

    def drain(self) -> list[tuple[int, bytes]]:
        out, self._queue = self._queue, []
        return out


@dataclass(frozen=True)
class FederationConfig:
    num_clients: int = 5
    rounds: int = 150
    strategy: Strategy = field(default_factory=Strategy)
    trainer: TrainerConfig = field(default_factory=TrainerConfig)
    shape: ModelShape = field(default_factory=ModelShape)
    split: str = "heterogeneous"
    seed: int = 0
    init_scale: float = 0.4
    drop_prob: float = 0.0
    corrupt_prob: float = 0.0
    workers: int = 1

    def __post_init__(self):
        if self.num_clients < 0:
            raise InvalidArgumentError("num_clients must be >= 0")
        if self.rounds < 1:
            raise InvalidArgumentError("rounds must be >= 1")

    @property
    def num_nodes(self) -> int:
        return self.num_clients + 1


@dataclass
class RoundRecord:
    round: int
    global_loss: float
    node_losses: dict[int, float]
    delta_norm: float
    checksum: int
    grad_steps: int
    broadcast_checksums: dict[int, int] = field(default_factory=dict)
    dropped: list[int] = field(default_factory=list)
    corrupted: list[int] = field(default_factory=list)
    # seconds spent in the round; kept out of the CSV so reruns stay byte-identical
    wall_clock: float = 0.0


def make_eval_batch(samples: Sequence[ImageSample], shape: ModelShape, mask_ratio: float,
                    seed: int, size: int = 64):
    """Fixed (patches, mask) batch used to report the global pretraining loss."""
    from .mae import patchify

    g = SeededRng(seed, stream_id("eval-batch")).generator()
    pick = np.sort(g.permutation(len(samples))[: min(size, len(samples))])
    return [(patchify(samples[i].pixels, shape.patch), sample_mask(shape.num_patches, mask_ratio, g))
            for i in pick]


class Federation:
    """Round-by-round driver; holds the global model and the server optimizer state."""

    def __init__(self, cfg: FederationConfig, shards: Mapping[int, Sequence[ImageSample]],
                 eval_batch=None, theta=None, state: ServerOptState | None = None):
        expected = set(range(cfg.num_nodes))
        if set(shards) != expected:
            raise InvalidArgumentError(f"shards must cover nodes {sorted(expected)}, got {sorted(shards)}")
        for node, data in shards.items():
            if len(data) == 0:
                raise InvalidArgumentError(f"node {node} has no data")
        self.cfg = cfg
        self.shards = {k: list(v) for k, v in sorted(shards.items())}
        self._patches = {k: patchify_all(v, cfg.shape.patch) for k, v in self.shards.items()}
        if eval_batch is None:
            pooled = [s for k in sorted(self.shards) for s in self.shards[k]]
            eval_batch = make_eval_batch(pooled, cfg.shape, cfg.trainer.mask_ratio, cfg.seed)
        self.eval_batch = eval_batch
        if theta is None:
            theta = init_params(cfg.shape, SeededRng(cfg.seed, stream_id("init")), cfg.init_scale)
        self.theta = as_param_vector(theta, name="theta").copy()
        if self.theta.size != cfg.shape.num_params:
            raise DimensionError(f"theta has {self.theta.size} entries, model needs {cfg.shape.num_params}")
        self.state = state if state is not None else ServerOptState.zeros(self.theta.size)
        self.network = SimulatedNetwork(cfg.seed, cfg.drop_prob, cfg.corrupt_prob)
        self.records: list[RoundRecord] = []

    @property
    def round(self) -> int:
        return self.state.round

    def _train_node(self, node: int, theta: np.ndarray, t: int) -> ClientUpdate:
        rng = SeededRng(self.cfg.seed, stream_id("node", node), t)
        return local_train(theta, self.shards[node], self.cfg.trainer, rng, self.cfg.shape,
                           node_id=node, patches=self._patches[node])

    def run_round(self) -> RoundRecord:
        cfg, t = self.cfg, self.state.round
        started = time.perf_counter()
        wire_model = np.ascontiguousarray(self.theta, dtype="<f8").tobytes()
        sent = checksum64(self.theta)
        copies = {}
        for node in self.shards:
            copies[node] = np.frombuffer(wire_model, dtype="<f8").astype(np.float64)
        received = {node: checksum64(th) for node, th in copies.items()}
        if any(c != sent for c in received.values()):
            raise ProtocolError(f"broadcast checksum mismatch in round {t}", round_index=t)

        nodes = sorted(self.shards)
        if cfg.workers > 1:
            with ThreadPoolExecutor(cfg.workers) as pool:
                updates = list(pool.map(lambda n: self._train_node(n, copies[n], t), nodes))
        else:
            updates = [self._train_node(n, copies[n], t) for n in nodes]

        for u in updates:
            self.network.send(u.node_id, t, encode_update(u, t).pack())

        arrived, corrupted = [], []
        for node, data in self.network.drain():
            try:
                arrived.append(decode_update(data))
            except ProtocolError as exc:
                if not self.network.faulty:
                    raise type(exc)(f"round {t}, node {node}: {exc}", node, t) from exc
                log.warning("round %d: discarding update from node %d (%s)", t, node, exc)
                corrupted.append(node)
        dropped = sorted(n for r, n in self.network.dropped if r == t)

        if arrived:
            delta_bar = aggregation.combine_deltas(arrived, cfg.strategy.weighting)
            self.theta, self.state = aggregation.step(cfg.strategy, self.state, self.theta, delta_bar)
            delta_norm = float(np.linalg.norm(delta_bar))
        else:
            log.warning("round %d: no updates arrived; model unchanged", t)
            self.state = ServerOptState(t + 1, self.state.momentum, self.state.m, self.state.v)
            delta_norm = 0.0

        loss = batch_loss(self.theta, self.eval_batch, cfg.shape)
        if not np.isfinite(loss):
            raise NumericError(f"non-finite global loss after round {t}", t)
        rec = RoundRecord(
            round=t,
            global_loss=loss,
            node_losses={u.node_id: u.loss_trace[-1] for u in updates},
            delta_norm=delta_norm,
            checksum=checksum64(self.theta),
            grad_steps=cfg.trainer.local_steps,
            broadcast_checksums=received,
            dropped=dropped,
            corrupted=sorted(corrupted),
            wall_clock=time.perf_counter() - started,
        )
        self.records.append(rec)
        return rec

    def run(self, rounds: int | None = None, on_round=None) -> tuple[np.ndarray, list[RoundRecord]]:
        """Run until ``rounds`` total rounds have completed (default ``cfg.rounds``)."""
        target = self.cfg.rounds if rounds is None else rounds
        while self.state.round < target:
            rec = self.run_round()
            if on_round is not None:
                on_round(self, rec)
        return self.theta, self.records


def run_federation(cfg: FederationConfig, shards: Mapping[int, Sequence[ImageSample]],
                   eval_batch=None, on_round=None) -> tuple[np.ndarray, list[RoundRecord]]:
    return Federation(cfg, shards, eval_batch).run(on_round=on_round)
