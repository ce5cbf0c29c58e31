"""K local SGD steps at one node, returning the parameter delta for the round."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import InvalidArgumentError
from .mae import ImageSample, ModelShape, loss_and_grad, patchify, sample_mask
from .numeric import SeededRng, as_param_vector


@dataclass(frozen=True)
class TrainerConfig:
    local_steps: int = 5
    lr: float = 1.0
    batch_size: int = 32
    mask_ratio: float = 0.6

    def __post_init__(self):
        if self.local_steps < 1:
            raise InvalidArgumentError("local_steps must be >= 1")
        if not self.lr >= 0:
            raise InvalidArgumentError("lr must be nonnegative")
        if self.batch_size < 1:
            raise InvalidArgumentError("batch_size must be >= 1")
        if not 0.0 < self.mask_ratio < 1.0:
            raise InvalidArgumentError("mask_ratio must lie in (0, 1)")


@dataclass(eq=False)
class ClientUpdate:
    node_id: int
    num_samples: int
    delta: np.ndarray
    loss_trace: list[float] = field(default_factory=list)
    # Per-step gradient norms; local bookkeeping only, never sent on the wire.
    grad_norms: list[float] = field(default_factory=list)


def minibatch_plan(num_samples: int, num_patches: int, cfg: TrainerConfig, rng: SeededRng):
    """Sample indices and masks for each of the ``cfg.local_steps`` steps.

    The data order is shuffled once from the node's stream and then cycled;
    masks are drawn fresh for every sample at every step.
    """
    if num_samples < 1:
        raise InvalidArgumentError("local data must be non-empty")
    g = rng.generator()
    order = g.permutation(num_samples)
    bs = min(cfg.batch_size, num_samples)
    plan = []
    for k in range(cfg.local_steps):
        idx = order[(k * bs + np.arange(bs)) % num_samples]
        masks = [sample_mask(num_patches, cfg.mask_ratio, g) for _ in range(bs)]
        plan.append((idx, masks))
    return plan


def patchify_all(data: Sequence[ImageSample], p: int) -> list[np.ndarray]:
    return [patchify(s.pixels, p) for s in data]


def local_train(
    theta_t,
    data: Sequence[ImageSample],
    cfg: TrainerConfig,
    rng: SeededRng,
    shape: ModelShape,
    node_id: int = 0,
    patches: list[np.ndarray] | None = None,
) -> ClientUpdate:
    """Run ``cfg.local_steps`` plain SGD steps starting from ``theta_t``.

    The trajectory is accumulated as an offset from ``theta_t``, so the
    node's final parameters are exactly ``theta_t + delta``.
    ``patches`` may carry precomputed patchified ``data``.
    """
    if len(data) == 0:
        raise InvalidArgumentError(f"node {node_id} has no local data")
    theta_t = as_param_vector(theta_t, name="theta_t")
    if theta_t.size != shape.num_params:
        raise InvalidArgumentError(
            f"theta has {theta_t.size} entries, model needs {shape.num_params}"
        )
    if patches is None:
        patches = patchify_all(data, shape.patch)
    plan = minibatch_plan(len(data), shape.num_patches, cfg, rng)

    delta = np.zeros_like(theta_t)
    trace, norms = [], []
    for idx, masks in plan:
        batch = [(patches[i], m) for i, m in zip(idx, masks)]
        loss, g = loss_and_grad(theta_t + delta, batch, shape)
        trace.append(loss)
        norms.append(float(np.linalg.norm(g)))
        delta = delta - cfg.lr * g
    return ClientUpdate(node_id, len(data), delta, trace, norms)
