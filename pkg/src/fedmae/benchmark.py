"""Lower bound / upper bound / federated comparison on frozen-encoder probes."""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Mapping, Sequence

import numpy as np

from .aggregation import Strategy
from .errors import InvalidArgumentError, NotFoundError
from .mae import ImageSample, ModelShape, encode_batch, patchify
from .numeric import SeededRng, checksum64, stream_id
from .orchestrator import Federation, FederationConfig, RoundRecord
from .partition import SERVER

BOUND_KINDS = ("lower", "upper", "fedfound")
CLASSIFIERS = ("linear", "mlp")


def bound_setup(kind: str, cfg: FederationConfig, shards: Mapping[int, Sequence[ImageSample]]):
    """Federation config and node shards that realise one bound.

    ``lower`` trains the server shard alone and ``upper`` trains every shard
    pooled on one node; both run single-node FedAvg with unit server step,
    which is plain sequential SGD with the same R*K step budget as every
    federated node.
    """
    if kind == "fedfound":
        return cfg, dict(shards)
    single = replace(cfg, num_clients=0, strategy=Strategy("fedavg", server_lr=1.0),
                     drop_prob=0.0, corrupt_prob=0.0)
    if kind == "lower":
        return single, {SERVER: list(shards[SERVER])}
    if kind == "upper":
        return single, {SERVER: [s for k in sorted(shards) for s in shards[k]]}
    raise InvalidArgumentError(f"unknown bound kind {kind!r}; expected one of {BOUND_KINDS}")


def train_bound(kind: str, cfg: FederationConfig, shards: Mapping[int, Sequence[ImageSample]],
                eval_batch=None, checkpoints: Sequence[int] = ()):
    """Pretrain one bound. Returns ``(theta, records, {round: theta})``."""
    bcfg, bshards = bound_setup(kind, cfg, shards)
    fed = Federation(bcfg, bshards, eval_batch)
    wanted = set(checkpoints)
    for r in wanted:
        if not 0 <= r <= cfg.rounds:
            raise NotFoundError(f"checkpoint round {r} outside [0, {cfg.rounds}]")
    saved = {0: fed.theta.copy()} if 0 in wanted else {}

    def keep(f, rec):
        if f.round in wanted:
            saved[f.round] = f.theta.copy()

    theta, records = fed.run(on_round=keep)
    return theta, records, saved


@dataclass
class ProbeResult:
    kind: str
    classifier: str
    accuracy: float
    per_class_accuracy: np.ndarray
    confusion: np.ndarray
    sizes: tuple[int, int, int]
    seed: int
    best_epoch: int = 0
    val_accuracy: float = 0.0


def stratified_split(labels: np.ndarray, seed: int, fractions=(0.7, 0.15)):
    """Per-class seeded shuffle into train/val/test index arrays."""
    labels = np.asarray(labels)
    classes = np.unique(labels)
    if classes.size < 2:
        raise InvalidArgumentError("probe needs at least 2 classes")
    g = SeededRng(seed, stream_id("probe-split")).generator()
    tr, va, te = [], [], []
    for c in classes:
        idx = np.flatnonzero(labels == c)
        if idx.size < 3:
            raise InvalidArgumentError(f"class {c} has {idx.size} samples; need >= 3 to stratify")
        idx = idx[g.permutation(idx.size)]
        n_tr = max(1, int(round(fractions[0] * idx.size)))
        n_va = max(1, int(round(fractions[1] * idx.size)))
        n_tr = min(n_tr, idx.size - 2)
        tr.append(idx[:n_tr])
        va.append(idx[n_tr : n_tr + n_va])
        te.append(idx[n_tr + n_va :])
    return np.concatenate(tr), np.concatenate(va), np.concatenate(te)


def _softmax_xent_grad(logits, y):
    z = logits - logits.max(axis=1, keepdims=True)
    p = np.exp(z)
    p /= p.sum(axis=1, keepdims=True)
    p[np.arange(y.size), y] -= 1.0
    return p / y.size


def fit_classifier(feats_tr, y_tr, feats_va, y_va, num_classes: int, classifier: str = "linear",
                   epochs: int = 300, lr: float = 0.5, hidden: int = 64, seed: int = 0,
                   weight_decay: float = 1e-4):
    """Full-batch gradient descent on cross-entropy, keeping the epoch with best val accuracy.

    Returns ``(predict_fn, best_epoch, best_val_accuracy)``.
    """
    if classifier not in CLASSIFIERS:
        raise InvalidArgumentError(f"classifier must be one of {CLASSIFIERS}")
    g = SeededRng(seed, stream_id("probe-init")).generator()
    d = feats_tr.shape[1]
    if classifier == "linear":
        params = [np.zeros((d, num_classes)), np.zeros(num_classes)]
    else:
        params = [g.normal(0, 1 / np.sqrt(d), (d, hidden)), np.zeros(hidden),
                  g.normal(0, 1 / np.sqrt(hidden), (hidden, num_classes)), np.zeros(num_classes)]

    def logits(ps, X):
        if classifier == "linear":
            return X @ ps[0] + ps[1]
        return np.tanh(X @ ps[0] + ps[1]) @ ps[2] + ps[3]

    def grads(ps, X, y):
        if classifier == "linear":
            dL = _softmax_xent_grad(X @ ps[0] + ps[1], y)
            return [X.T @ dL + weight_decay * ps[0], dL.sum(0)]
        H = np.tanh(X @ ps[0] + ps[1])
        dL = _softmax_xent_grad(H @ ps[2] + ps[3], y)
        dH = (dL @ ps[2].T) * (1 - H * H)
        return [X.T @ dH + weight_decay * ps[0], dH.sum(0),
                H.T @ dL + weight_decay * ps[2], dL.sum(0)]

    best = (-1.0, 0, [p.copy() for p in params])
    for epoch in range(epochs + 1):
        acc = float(np.mean(logits(params, feats_va).argmax(1) == y_va))
        if acc > best[0]:
            best = (acc, epoch, [p.copy() for p in params])
        if epoch == epochs:
            break
        for p, gp in zip(params, grads(params, feats_tr, y_tr)):
            p -= lr * gp
    best_ps = best[2]
    return (lambda X: logits(best_ps, X).argmax(1)), best[1], best[0]


def extract_features(theta, labeled: Sequence[ImageSample], shape: ModelShape) -> np.ndarray:
    return encode_batch(theta, [patchify(s.pixels, shape.patch) for s in labeled], shape)


def probe(theta, labeled: Sequence[ImageSample], shape: ModelShape, classifier: str = "linear",
          seed: int = 0, kind: str = "", encoder=None, **fit_kw) -> ProbeResult:
    """Frozen-feature classification accuracy on a stratified 70/15/15 split.

    Features are standardised with train-split statistics.  ``encoder`` may
    replace the default MAE feature extractor (``fn(theta, samples) -> array``).
    """
    labels = np.array([s.label for s in labeled], dtype=np.int64)
    tr, va, te = stratified_split(labels, seed)
    before = checksum64(np.asarray(theta, dtype=np.float64))
    feats = encoder(theta, labeled) if encoder is not None else extract_features(theta, labeled, shape)
    if checksum64(np.asarray(theta, dtype=np.float64)) != before:
        raise RuntimeError("encoder modified the frozen parameters")
    feats = np.asarray(feats, dtype=np.float64)
    mu = feats[tr].mean(0)
    sd = feats[tr].std(0) + 1e-8
    feats = (feats - mu) / sd

    num_classes = int(labels.max()) + 1
    predict, epoch, val_acc = fit_classifier(feats[tr], labels[tr], feats[va], labels[va],
                                             num_classes, classifier, seed=seed, **fit_kw)
    pred = predict(feats[te])
    conf = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(conf, (labels[te], pred), 1)
    totals = conf.sum(1)
    per_class = np.divide(np.diag(conf), totals, out=np.full(num_classes, np.nan), where=totals > 0)
    acc = float(np.trace(conf) / conf.sum())
    return ProbeResult(kind, classifier, acc, per_class, conf, (tr.size, va.size, te.size), seed,
                       epoch, val_acc)


@dataclass
class SweepPoint:
    round: int
    results: dict[str, ProbeResult] = field(default_factory=dict)


def sweep_epochs(cfg: FederationConfig, shards, labeled: Sequence[ImageSample],
                 checkpoints: Sequence[int], kinds: Sequence[str] = BOUND_KINDS,
                 classifier: str = "linear", probe_seed: int = 0, eval_batch=None,
                 **fit_kw) -> tuple[list[SweepPoint], dict[str, list[RoundRecord]]]:
    """Probe every bound at each checkpoint round (0 = initial model)."""
    checkpoints = sorted(set(int(c) for c in checkpoints))
    for c in checkpoints:
        if not 0 <= c <= cfg.rounds:
            raise NotFoundError(f"checkpoint round {c} is not produced by a {cfg.rounds}-round run")
    points = {c: SweepPoint(c) for c in checkpoints}
    records = {}
    for kind in kinds:
        _, recs, saved = train_bound(kind, cfg, shards, eval_batch, checkpoints)
        records[kind] = recs
        for c in checkpoints:
            if c not in saved:
                raise NotFoundError(f"no checkpoint at round {c} for {kind}")
            points[c].results[kind] = probe(saved[c], labeled, cfg.shape, classifier,
                                            probe_seed, kind, **fit_kw)
    return [points[c] for c in checkpoints], records


def rounds_to_fraction(curve: Sequence[tuple[int, float]], fraction: float = 0.95) -> int:
    """First checkpoint round at which accuracy reaches ``fraction`` of the final value."""
    target = fraction * curve[-1][1]
    for rnd, acc in curve:
        if acc >= target:
            return rnd
    return curve[-1][0]
