"""Desk-scale masked autoencoder with hand-written gradients.

Each patch goes through a small MLP encoder (``p*p -> hidden -> tanh ->
latent``).  Masked patches are swapped for a learned mask token before
encoding.  The decoder sees every patch latent plus the mean latent of the
image, (``latent -> hidden -> tanh -> p*p``), which is the only path by which
visible patches inform the reconstruction of masked ones.  The training loss is
the mean absolute error over masked pixels only.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import DimensionError, InvalidArgumentError
from .numeric import SeededRng, as_param_vector


@dataclass
class ImageSample:
    pixels: np.ndarray
    domain: str = "A"
    label: int = 0
    sample_id: int = 0


@dataclass(frozen=True)
class ModelShape:
    patch: int = 4
    hidden: int = 32
    latent: int = 8
    height: int = 16
    width: int = 16

    @property
    def patch_dim(self) -> int:
        return self.patch * self.patch

    @property
    def num_patches(self) -> int:
        if self.height % self.patch or self.width % self.patch:
            raise InvalidArgumentError(
                f"{self.height}x{self.width} image is not divisible by patch {self.patch}"
            )
        return (self.height // self.patch) * (self.width // self.patch)

    def layout(self) -> list[tuple[str, tuple[int, ...]]]:
        q, h, d = self.patch_dim, self.hidden, self.latent
        return [
            ("enc_w1", (q, h)),
            ("enc_b1", (h,)),
            ("enc_w2", (h, d)),
            ("enc_b2", (d,)),
            ("dec_w1", (d, h)),
            ("dec_b1", (h,)),
            ("dec_w2", (h, q)),
            ("dec_b2", (q,)),
            ("mask_token", (q,)),
        ]

    @property
    def num_params(self) -> int:
        return sum(int(np.prod(s)) for _, s in self.layout())


@dataclass
class MaeParams:
    shape: ModelShape
    enc_w1: np.ndarray
    enc_b1: np.ndarray
    enc_w2: np.ndarray
    enc_b2: np.ndarray
    dec_w1: np.ndarray
    dec_b1: np.ndarray
    dec_w2: np.ndarray
    dec_b2: np.ndarray
    mask_token: np.ndarray

    def flatten(self) -> np.ndarray:
        return np.concatenate([getattr(self, name).ravel() for name, _ in self.shape.layout()])

    @classmethod
    def unflatten(cls, vec, shape: ModelShape) -> "MaeParams":
        vec = np.asarray(vec, dtype=np.float64)
        if vec.ndim != 1 or vec.size != shape.num_params:
            raise DimensionError(
                f"expected {shape.num_params} parameters for {shape}, got {vec.size}"
            )
        parts, off = {}, 0
        for name, s in shape.layout():
            n = int(np.prod(s))
            parts[name] = vec[off : off + n].reshape(s).copy()
            off += n
        return cls(shape=shape, **parts)

    @classmethod
    def zeros(cls, shape: ModelShape) -> "MaeParams":
        return cls.unflatten(np.zeros(shape.num_params), shape)


def init_params(shape: ModelShape, rng: SeededRng, scale: float = 0.4) -> np.ndarray:
    """Weights and mask token uniform in ``[-scale, scale]``, biases zero."""
    g = rng.generator()
    parts = []
    for name, s in shape.layout():
        if "_b" in name:
            parts.append(np.zeros(int(np.prod(s))))
        else:
            parts.append(g.uniform(-scale, scale, size=int(np.prod(s))))
    return np.concatenate(parts)


def patchify(pixels: np.ndarray, p: int) -> np.ndarray:
    """Split an ``H x W`` image into row-major ``p x p`` patches, shape ``(P, p*p)``."""
    img = np.asarray(pixels, dtype=np.float64)
    if img.ndim != 2:
        raise DimensionError(f"image must be 2-D, got shape {img.shape}")
    H, W = img.shape
    if p <= 0 or H % p or W % p:
        raise InvalidArgumentError(f"{H}x{W} image is not divisible by patch size {p}")
    blocks = img.reshape(H // p, p, W // p, p).transpose(0, 2, 1, 3)
    return blocks.reshape(-1, p * p).copy()


def unpatchify(patches: np.ndarray, p: int, height: int, width: int) -> np.ndarray:
    blocks = np.asarray(patches).reshape(height // p, width // p, p, p)
    return blocks.transpose(0, 2, 1, 3).reshape(height, width)


def num_masked(P: int, ratio: float) -> int:
    # kept = round-half-up((1 - ratio) * P)
    kept = int(np.floor((1.0 - ratio) * P + 0.5))
    return P - kept


def sample_mask(P: int, ratio: float, rng) -> np.ndarray:
    """Sorted indices of the patches to hide, drawn uniformly without replacement.

    ``rng`` is a :class:`SeededRng` or an already-running numpy ``Generator``.
    """
    if not 0.0 < ratio < 1.0:
        raise InvalidArgumentError(f"mask ratio must lie in (0, 1), got {ratio}")
    if P < 2:
        raise InvalidArgumentError(f"need at least 2 patches, got {P}")
    g = rng.generator() if isinstance(rng, SeededRng) else rng
    k = num_masked(P, ratio)
    return np.sort(g.permutation(P)[:k])


def _mask_matrix(masks: Sequence[np.ndarray], B: int, P: int) -> np.ndarray:
    M = np.zeros((B, P), dtype=bool)
    for i, m in enumerate(masks):
        m = np.asarray(m, dtype=np.int64)
        if m.size and (m.min() < 0 or m.max() >= P):
            raise DimensionError(f"mask index out of range [0, {P})")
        M[i, m] = True
    return M


def _as_params(params, shape: ModelShape | None) -> MaeParams:
    if isinstance(params, MaeParams):
        return params
    if shape is None:
        raise InvalidArgumentError("a ModelShape is required with a flat parameter vector")
    return MaeParams.unflatten(params, shape)


def _forward_batch(prm: MaeParams, X: np.ndarray, M: np.ndarray):
    """Shared forward pass; returns reconstruction and cached activations."""
    Xin = np.where(M[..., None], prm.mask_token, X)
    H1 = np.tanh(Xin @ prm.enc_w1 + prm.enc_b1)
    Z = H1 @ prm.enc_w2 + prm.enc_b2
    U = Z + Z.mean(axis=1, keepdims=True)
    H3 = np.tanh(U @ prm.dec_w1 + prm.dec_b1)
    R = H3 @ prm.dec_w2 + prm.dec_b2
    return R, (Xin, H1, U, H3)


def _stack(patch_sets, q: int) -> np.ndarray:
    X = np.stack([np.asarray(ps, dtype=np.float64) for ps in patch_sets])
    if X.ndim != 3 or X.shape[2] != q:
        raise DimensionError(f"patch sets must be (P, {q}), got {X.shape[1:]}")
    return X


def forward(params, patches: np.ndarray, mask, shape: ModelShape | None = None) -> np.ndarray:
    """Reconstruct every patch of one image; returns shape ``(P, p*p)``."""
    prm = _as_params(params, shape)
    X = _stack([patches], prm.shape.patch_dim)
    M = _mask_matrix([mask], 1, X.shape[1])
    R, _ = _forward_batch(prm, X, M)
    return R[0]


def masked_l1_loss(recon: np.ndarray, target: np.ndarray, mask) -> float:
    recon = np.asarray(recon, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if recon.shape != target.shape:
        raise DimensionError(f"shape mismatch {recon.shape} vs {target.shape}")
    idx = np.asarray(mask, dtype=np.int64)
    if idx.size == 0:
        raise InvalidArgumentError("masked L1 loss needs at least one masked patch")
    return float(np.abs(recon[idx] - target[idx]).mean())


def batch_loss(params, batch, shape: ModelShape | None = None) -> float:
    """Mean over ``(patches, mask)`` pairs of the masked L1 loss."""
    return loss_and_grad(params, batch, shape, need_grad=False)[0]


def loss_and_grad(params, batch, shape: ModelShape | None = None, need_grad: bool = True):
    """Mean masked L1 loss over a batch and its gradient as a flat vector.

    The subgradient of ``|x|`` at 0 is taken to be 0.
    """
    if len(batch) == 0:
        raise InvalidArgumentError("batch must be non-empty")
    prm = _as_params(params, shape)
    q = prm.shape.patch_dim
    X = _stack([ps for ps, _ in batch], q)
    B, P, _ = X.shape
    M = _mask_matrix([m for _, m in batch], B, P)
    counts = M.sum(axis=1)
    if np.any(counts == 0):
        raise InvalidArgumentError("every sample needs at least one masked patch")

    R, (Xin, H1, U, H3) = _forward_batch(prm, X, M)
    diff = R - X
    per_sample = (np.abs(diff) * M[..., None]).sum(axis=(1, 2)) / (counts * q)
    loss = float(per_sample.mean())
    if not need_grad:
        return loss, None

    dR = np.sign(diff) * (M[..., None] / (counts[:, None, None] * q * B))
    g = {}
    g["dec_w2"] = np.einsum("bph,bpq->hq", H3, dR)
    g["dec_b2"] = dR.sum(axis=(0, 1))
    dA3 = (dR @ prm.dec_w2.T) * (1.0 - H3 * H3)
    g["dec_w1"] = np.einsum("bpd,bph->dh", U, dA3)
    g["dec_b1"] = dA3.sum(axis=(0, 1))
    dU = dA3 @ prm.dec_w1.T
    dZ = dU + dU.mean(axis=1, keepdims=True)
    g["enc_w2"] = np.einsum("bph,bpd->hd", H1, dZ)
    g["enc_b2"] = dZ.sum(axis=(0, 1))
    dA1 = (dZ @ prm.enc_w2.T) * (1.0 - H1 * H1)
    g["enc_w1"] = np.einsum("bpq,bph->qh", Xin, dA1)
    g["enc_b1"] = dA1.sum(axis=(0, 1))
    dXin = dA1 @ prm.enc_w1.T
    g["mask_token"] = (dXin * M[..., None]).sum(axis=(0, 1))
    flat = np.concatenate([g[name].ravel() for name, _ in prm.shape.layout()])
    return loss, flat


def grad(params, batch, shape: ModelShape | None = None) -> np.ndarray:
    return loss_and_grad(params, batch, shape)[1]


def encode_batch(params, patch_sets, shape: ModelShape | None = None) -> np.ndarray:
    """Mean per-patch latent for each image, no masking; shape ``(B, latent)``."""
    prm = _as_params(params, shape)
    X = _stack(patch_sets, prm.shape.patch_dim)
    H1 = np.tanh(X @ prm.enc_w1 + prm.enc_b1)
    Z = H1 @ prm.enc_w2 + prm.enc_b2
    return Z.mean(axis=1)


def encode(params, patches: np.ndarray, shape: ModelShape | None = None) -> np.ndarray:
    return encode_batch(params, [patches], shape)[0]


def check_image(sample: ImageSample, shape: ModelShape) -> None:
    px = np.asarray(sample.pixels)
    if px.shape != (shape.height, shape.width):
        raise DimensionError(f"expected {shape.height}x{shape.width} image, got {px.shape}")
    if not np.all(np.isfinite(px)) or px.min() < 0 or px.max() > 1:
        raise InvalidArgumentError("pixels must be finite and lie in [0, 1]")


def as_param_layout(vec, shape: ModelShape) -> np.ndarray:
    vec = as_param_vector(vec, name="theta")
    if vec.size != shape.num_params:
        raise DimensionError(f"expected {shape.num_params} parameters, got {vec.size}")
    return vec
