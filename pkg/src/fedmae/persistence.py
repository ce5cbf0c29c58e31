"""Binary checkpoints and CSV outputs.

Checkpoint layout, all little-endian::

    magic        8 bytes  b"FFMCKPT\\0"
    version      u16
    patch, hidden, latent, height, width   5 x u32
    round        u64      completed rounds
    seed         u64      master seed
    rng_counter  u64      next RNG block (node streams are keyed by round)
    n            u64      parameter count
    theta        n x f64
    opt_round    u64
    momentum     n x f64
    m            n x f64
    v            n x f64
    digest       8 bytes  BLAKE2b-64 of every preceding byte
"""

from __future__ import annotations

import csv
import hashlib
import io
import os
import struct
import tempfile
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .aggregation import ServerOptState
from .errors import (CheckpointChecksumError, CheckpointFormatError, CheckpointVersionError,
                     NotFoundError)
from .mae import ModelShape

CHECKPOINT_MAGIC = b"FFMCKPT\x00"
CHECKPOINT_VERSION = 1
_HEAD = struct.Struct("<8sH5IQQQQ")
_U64 = struct.Struct("<Q")
_DIGEST = 8


@dataclass(eq=False)
class Checkpoint:
    shape: ModelShape
    round: int
    seed: int
    theta: np.ndarray
    state: ServerOptState
    rng_counter: int | None = None

    def __post_init__(self):
        if self.rng_counter is None:
            self.rng_counter = self.round

    def equals(self, other: "Checkpoint") -> bool:
        return (self.shape == other.shape and self.round == other.round
                and self.seed == other.seed and self.rng_counter == other.rng_counter
                and np.array_equal(self.theta, other.theta) and self.state.equals(other.state))


def _f64(a: np.ndarray) -> bytes:
    return np.ascontiguousarray(a, dtype="<f8").tobytes()


def checkpoint_bytes(ck: Checkpoint) -> bytes:
    s = ck.shape
    n = ck.theta.size
    if n != s.num_params:
        raise CheckpointFormatError(f"theta has {n} entries but shape implies {s.num_params}")
    parts = [
        _HEAD.pack(CHECKPOINT_MAGIC, CHECKPOINT_VERSION, s.patch, s.hidden, s.latent, s.height,
                   s.width, ck.round, ck.seed, ck.rng_counter, n),
        _f64(ck.theta),
        _U64.pack(ck.state.round),
        _f64(ck.state.momentum),
        _f64(ck.state.m),
        _f64(ck.state.v),
    ]
    body = b"".join(parts)
    return body + hashlib.blake2b(body, digest_size=_DIGEST).digest()


def parse_checkpoint(data: bytes) -> Checkpoint:
    if len(data) < 8 or data[:8] != CHECKPOINT_MAGIC:
        raise CheckpointFormatError("not a checkpoint file (bad magic bytes)")
    if len(data) < _HEAD.size + _DIGEST:
        raise CheckpointChecksumError("checkpoint truncated inside its header")
    if hashlib.blake2b(data[:-_DIGEST], digest_size=_DIGEST).digest() != data[-_DIGEST:]:
        raise CheckpointChecksumError("checkpoint checksum mismatch (corrupted or truncated)")
    (_, version, p, h, d, H, W, rnd, seed, counter, n) = _HEAD.unpack_from(data)
    if version != CHECKPOINT_VERSION:
        raise CheckpointVersionError(
            f"checkpoint format v{version} is incompatible with this reader (v{CHECKPOINT_VERSION})")
    shape = ModelShape(p, h, d, H, W)
    if shape.num_params != n:
        raise CheckpointFormatError(f"shape header implies {shape.num_params} parameters, payload has {n}")
    if len(data) != _HEAD.size + 8 * (4 * n + 1) + _DIGEST:
        raise CheckpointFormatError("payload length does not match the header")
    off = _HEAD.size

    def take(count):
        nonlocal off
        out = np.frombuffer(data, dtype="<f8", count=count, offset=off).astype(np.float64)
        off += 8 * count
        return out

    theta = take(n)
    (opt_round,) = _U64.unpack_from(data, off)
    off += 8
    mom, m, v = take(n), take(n), take(n)
    return Checkpoint(shape, rnd, seed, theta, ServerOptState(opt_round, mom, m, v), counter)


def atomic_write(path, data: bytes | str) -> None:
    """Write via a temp file in the same directory, then rename over ``path``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    raw = data.encode() if isinstance(data, str) else data
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(raw)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def save_checkpoint(path, ck: Checkpoint) -> None:
    atomic_write(path, checkpoint_bytes(ck))


def load_checkpoint(path) -> Checkpoint:
    path = Path(path)
    if not path.is_file():
        raise NotFoundError(f"checkpoint not found: {path}")
    return parse_checkpoint(path.read_bytes())


def csv_text(header: Sequence[str], rows: Iterable[Sequence]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow(row)
    return buf.getvalue()


ROUNDS_HEADER = ("round", "global_loss", "delta_norm", "checksum", "dropped", "corrupted")


def rounds_csv(records) -> str:
    rows = ((r.round, repr(r.global_loss), repr(r.delta_norm), f"{r.checksum:016x}",
             ";".join(map(str, r.dropped)), ";".join(map(str, r.corrupted))) for r in records)
    return csv_text(ROUNDS_HEADER, rows)


def write_rounds_csv(path, records) -> None:
    atomic_write(path, rounds_csv(records))


def read_csv(path) -> list[dict[str, str]]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))
