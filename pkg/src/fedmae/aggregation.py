"""Server-side combination of client deltas under FedAvg, FedAvgM, FedAdam and FedAdagrad.

The mean client delta points toward client progress, so the server treats its
negation as a pseudo-gradient and *adds* the resulting step.  Setting
``literal_signs=True`` subtracts the step instead.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from .errors import DimensionError, InvalidArgumentError, NumericError
from .numeric import weighted_mean

KINDS = ("fedavg", "fedavgm", "fedadam", "fedadagrad")
WEIGHTINGS = ("uniform", "sample")

_DEFAULT_SERVER_LR = {"fedavg": 1.0, "fedavgm": 1.0, "fedadam": 1e-2, "fedadagrad": 1e-2}


def normalize_kind(kind: str) -> str:
    k = kind.lower().replace("-", "").replace("_", "")
    if k not in KINDS:
        raise InvalidArgumentError(f"unknown strategy {kind!r}; expected one of {KINDS}")
    return k


@dataclass(frozen=True)
class Strategy:
    kind: str = "fedavg"
    server_lr: float | None = None
    momentum: float = 0.9
    beta1: float = 0.9
    beta2: float = 0.99
    eps: float = 1e-8
    weighting: str = "sample"
    literal_signs: bool = False

    def __post_init__(self):
        object.__setattr__(self, "kind", normalize_kind(self.kind))
        if self.server_lr is None:
            object.__setattr__(self, "server_lr", _DEFAULT_SERVER_LR[self.kind])
        if not self.server_lr > 0:
            raise InvalidArgumentError("server_lr must be positive")
        if not 0.0 <= self.momentum < 1.0:
            raise InvalidArgumentError("momentum must lie in [0, 1)")
        for b in (self.beta1, self.beta2):
            if not 0.0 <= b < 1.0:
                raise InvalidArgumentError("beta1 and beta2 must lie in [0, 1)")
        if not self.eps > 0:
            raise InvalidArgumentError("eps must be positive")
        if self.weighting not in WEIGHTINGS:
            raise InvalidArgumentError(f"weighting must be one of {WEIGHTINGS}")


@dataclass(frozen=True, eq=False)
class ServerOptState:
    round: int
    momentum: np.ndarray
    m: np.ndarray
    v: np.ndarray

    @classmethod
    def zeros(cls, n: int) -> "ServerOptState":
        return cls(0, np.zeros(n), np.zeros(n), np.zeros(n))

    def equals(self, other: "ServerOptState") -> bool:
        return (
            self.round == other.round
            and np.array_equal(self.momentum, other.momentum)
            and np.array_equal(self.m, other.m)
            and np.array_equal(self.v, other.v)
        )


def combine_deltas(updates: Sequence, weighting: str = "sample") -> np.ndarray:
    """Average client deltas, ordered by node id.

    ``uniform`` gives every node weight one; ``sample`` weights by local sample count.
    """
    if len(updates) == 0:
        raise InvalidArgumentError("no client updates to combine")
    if weighting not in WEIGHTINGS:
        raise InvalidArgumentError(f"weighting must be one of {WEIGHTINGS}")
    ordered = sorted(updates, key=lambda u: u.node_id)
    ws = [1.0 if weighting == "uniform" else float(u.num_samples) for u in ordered]
    return weighted_mean([u.delta for u in ordered], ws)


def step(strategy: Strategy, state: ServerOptState, theta, delta_bar):
    """One server update. Returns ``(theta_next, new_state)``; inputs are untouched."""
    theta = np.asarray(theta, dtype=np.float64)
    d = np.asarray(delta_bar, dtype=np.float64)
    n = theta.shape[0]
    if d.shape != theta.shape or state.m.shape[0] != n:
        raise DimensionError(
            f"length mismatch: theta {theta.shape}, delta {d.shape}, state {state.m.shape}"
        )
    if not np.all(np.isfinite(d)):
        raise NumericError(f"non-finite aggregated delta at round {state.round}", state.round)

    s = strategy
    sign = -1.0 if s.literal_signs else 1.0
    mom, m, v = state.momentum, state.m, state.v
    if s.kind == "fedavg":
        upd = s.server_lr * d
    elif s.kind == "fedavgm":
        mom = s.momentum * mom + d
        upd = s.server_lr * mom
    elif s.kind == "fedadam":
        m = s.beta1 * m + (1.0 - s.beta1) * d
        v = s.beta2 * v + (1.0 - s.beta2) * (d * d)
        m_hat = m / (1.0 - s.beta1 ** (state.round + 1))
        upd = s.server_lr * m_hat / (np.sqrt(v) + s.eps)
    else:  # fedadagrad
        m = s.beta1 * m + (1.0 - s.beta1) * d
        v = v + d * d
        upd = s.server_lr * m / np.sqrt(v + s.eps)

    theta_next = theta + sign * upd
    if not np.all(np.isfinite(theta_next)):
        raise NumericError(f"non-finite model after round {state.round}", state.round)
    return theta_next, replace(state, round=state.round + 1, momentum=mom, m=m, v=v)
