"""Flat parameter-vector arithmetic and counter-based seeded randomness.

A parameter vector is a 1-D ``float64`` numpy array.  Every function here is
pure: inputs are never modified and a fresh array is returned.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import DimensionError, DomainError, InvalidArgumentError, NumericError

_MASK64 = (1 << 64) - 1


def as_param_vector(x, *, name: str = "vector") -> np.ndarray:
    """Validate ``x`` as a non-empty, finite, 1-D float64 vector."""
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim != 1:
        raise DimensionError(f"{name} must be 1-D, got shape {arr.shape}")
    if arr.size == 0:
        raise DimensionError(f"{name} must be non-empty")
    if not np.all(np.isfinite(arr)):
        raise NumericError(f"{name} contains non-finite values")
    return arr


def _check_same_length(*vs: np.ndarray) -> None:
    n = vs[0].shape[0]
    for v in vs[1:]:
        if v.shape[0] != n:
            raise DimensionError(f"length mismatch: {n} vs {v.shape[0]}")


def _finite(out: np.ndarray, what: str) -> np.ndarray:
    if not np.all(np.isfinite(out)):
        raise NumericError(f"{what} produced non-finite values")
    return out


def axpy(a: float, x, y) -> np.ndarray:
    """Return ``a * x + y``."""
    x = as_param_vector(x, name="x")
    y = as_param_vector(y, name="y")
    _check_same_length(x, y)
    with np.errstate(over="ignore", invalid="ignore"):
        out = a * x + y
    return _finite(out, "axpy")


def weighted_mean(vs: Sequence, ws: Sequence[float]) -> np.ndarray:
    """Weighted average ``sum(w_i * v_i) / sum(w_i)``.

    Accumulation runs left to right in the order given, so callers that need
    scheduler-independent results must sort their inputs first.  Each weight is
    normalised before scaling, which makes a single-element mean return its
    input bit for bit.
    """
    if len(vs) == 0:
        raise InvalidArgumentError("weighted_mean of an empty list")
    if len(vs) != len(ws):
        raise InvalidArgumentError(f"{len(vs)} vectors but {len(ws)} weights")
    weights = [float(w) for w in ws]
    if any(w < 0 or not np.isfinite(w) for w in weights):
        raise InvalidArgumentError("weights must be finite and nonnegative")
    total = 0.0
    for w in weights:
        total += w
    if total <= 0:
        raise InvalidArgumentError("total weight must be positive")
    vecs = [as_param_vector(v, name=f"vs[{i}]") for i, v in enumerate(vs)]
    _check_same_length(*vecs)
    acc = np.zeros_like(vecs[0])
    for w, v in zip(weights, vecs):
        acc = acc + (w / total) * v
    return _finite(acc, "weighted_mean")


def elementwise(op: str, x, c: float = 0.0) -> np.ndarray:
    """Apply ``square``, ``sqrt`` or ``add_scalar`` element by element."""
    x = as_param_vector(x, name="x")
    if op == "square":
        out = x * x
    elif op == "sqrt":
        if np.any(x < 0):
            raise DomainError("sqrt of a negative element")
        out = np.sqrt(x)
    elif op == "add_scalar":
        out = x + c
    else:
        raise InvalidArgumentError(f"unknown elementwise op {op!r}")
    return _finite(out, op)


def checksum64(x: np.ndarray) -> int:
    """64-bit digest of the little-endian float64 bytes of ``x``."""
    data = np.ascontiguousarray(x, dtype="<f8").tobytes()
    return int.from_bytes(hashlib.blake2b(data, digest_size=8).digest(), "little")


def stream_id(*parts) -> int:
    """Derive a 64-bit stream id from a tuple of purpose tags / integers."""
    text = "/".join(str(p) for p in parts).encode()
    return int.from_bytes(hashlib.blake2b(text, digest_size=8).digest(), "little")


@dataclass(frozen=True)
class SeededRng:
    """Counter-based random stream keyed by ``(seed, stream)``.

    Backed by Philox: the 128-bit key holds the seed and stream id, and
    ``block`` sets the third counter word so that independent blocks of the
    same stream (e.g. one per round) never overlap.  Nothing is mutable; each
    call to :meth:`generator` starts the block from its beginning.
    """

    seed: int
    stream: int = 0
    block: int = 0

    def __post_init__(self):
        for field in ("seed", "stream", "block"):
            v = getattr(self, field)
            if not 0 <= int(v) <= _MASK64:
                raise InvalidArgumentError(f"{field} must fit in 64 unsigned bits, got {v}")

    def generator(self) -> np.random.Generator:
        key = np.array([self.seed, self.stream], dtype=np.uint64)
        counter = np.array([0, 0, self.block, 0], dtype=np.uint64)
        return np.random.Generator(np.random.Philox(key=key, counter=counter))

    def substream(self, *parts) -> "SeededRng":
        return SeededRng(self.seed, stream_id(self.stream, *parts), self.block)

    def at_block(self, block: int) -> "SeededRng":
        return SeededRng(self.seed, self.stream, block)
