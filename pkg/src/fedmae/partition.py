"""Homogeneous and heterogeneous node assignments, plus a synthetic two-domain image set.

Node 0 is the server; clients are numbered from 1.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import InvalidArgumentError
from .mae import ImageSample
from .numeric import SeededRng

SERVER = 0


@dataclass
class DatasetPool:
    domain: str
    ids: np.ndarray

    def __post_init__(self):
        self.ids = np.asarray(self.ids, dtype=np.int64)
        if np.unique(self.ids).size != self.ids.size:
            raise InvalidArgumentError(f"pool {self.domain} has duplicate ids")

    @property
    def size(self) -> int:
        return int(self.ids.size)


@dataclass
class SplitAssignment:
    mode: str
    nodes: dict[int, np.ndarray]
    leftover: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))

    @property
    def num_clients(self) -> int:
        return len(self.nodes) - 1

    def counts(self) -> dict[int, int]:
        return {k: int(v.size) for k, v in sorted(self.nodes.items())}

    def validate(self, pools: Sequence[DatasetPool] | None = None) -> None:
        if SERVER not in self.nodes or self.nodes[SERVER].size == 0:
            raise InvalidArgumentError("server list must be non-empty")
        parts = [*self.nodes.values(), self.leftover]
        allids = np.concatenate(parts)
        if np.unique(allids).size != allids.size:
            raise InvalidArgumentError("node lists overlap")
        if pools is not None:
            expected = np.sort(np.concatenate([p.ids for p in pools]))
            if not np.array_equal(np.sort(allids), expected):
                raise InvalidArgumentError("split does not cover the pools exactly")

    def to_manifest(self) -> str:
        """Plain-text manifest: one ``<node>: <count> | <ids...>`` line per node."""
        lines = [f"# split-manifest v1 mode={self.mode}"]
        for node, ids in sorted(self.nodes.items()):
            label = "server" if node == SERVER else f"client{node}"
            lines.append(f"{label}: {ids.size} | " + " ".join(map(str, ids.tolist())))
        lines.append(f"leftover: {self.leftover.size} | " + " ".join(map(str, self.leftover.tolist())))
        return "\n".join(line.rstrip() for line in lines) + "\n"

    @classmethod
    def from_manifest(cls, text: str) -> "SplitAssignment":
        mode, nodes, leftover = "custom", {}, np.zeros(0, dtype=np.int64)
        for raw in text.splitlines():
            line = raw.strip()
            if not line:
                continue
            if line.startswith("#"):
                for tok in line.split():
                    if tok.startswith("mode="):
                        mode = tok[5:]
                continue
            label, _, rest = line.partition(":")
            count_txt, _, ids_txt = rest.partition("|")
            ids = np.array([int(t) for t in ids_txt.split()], dtype=np.int64)
            if ids.size != int(count_txt):
                raise InvalidArgumentError(f"manifest line {label!r}: count does not match ids")
            label = label.strip()
            if label == "leftover":
                leftover = ids
            elif label == "server":
                nodes[SERVER] = ids
            elif label.startswith("client"):
                nodes[int(label[6:])] = ids
            else:
                raise InvalidArgumentError(f"unknown manifest label {label!r}")
        out = cls(mode, dict(sorted(nodes.items())), leftover)
        out.validate()
        return out


def _ids(pool) -> np.ndarray:
    return pool.ids if isinstance(pool, DatasetPool) else np.asarray(pool, dtype=np.int64)


def homogeneous_split(pool_a, pool_b, per_client: int, server: int, rng: SeededRng,
                      num_clients: int = 5) -> SplitAssignment:
    """Pool both sources, shuffle, deal ``per_client`` ids to each client then ``server`` to the server.

    Whatever remains is left unassigned.
    """
    union = np.concatenate([_ids(pool_a), _ids(pool_b)])
    need = num_clients * per_client + server
    if per_client < 1 or server < 1:
        raise InvalidArgumentError("per_client and server counts must be >= 1")
    if need > union.size:
        raise InvalidArgumentError(f"split needs {need} ids but pools hold {union.size}")
    perm = union[rng.generator().permutation(union.size)]
    nodes = {}
    for c in range(num_clients):
        nodes[c + 1] = perm[c * per_client : (c + 1) * per_client]
    cut = num_clients * per_client
    nodes[SERVER] = perm[cut : cut + server]
    return SplitAssignment("homogeneous", dict(sorted(nodes.items())), perm[cut + server :])


def heterogeneous_split(pool_a, pool_b, server: int, rng: SeededRng,
                        clients_a: int = 3, clients_b: int = 2) -> SplitAssignment:
    """Server and clients ``1..clients_a`` draw from pool A; the last ``clients_b`` clients share pool B.

    Uneven remainders go to the lowest-numbered nodes.
    """
    a, b = _ids(pool_a), _ids(pool_b)
    if server < 1 or a.size - server < clients_a:
        raise InvalidArgumentError(
            f"pool A ({a.size}) must exceed the server count ({server}) by at least {clients_a}"
        )
    if b.size < clients_b:
        raise InvalidArgumentError(f"pool B ({b.size}) needs at least {clients_b} ids")
    g = rng.generator()
    b_perm = b[g.permutation(b.size)]
    a_perm = a[g.permutation(a.size)]
    nodes = {SERVER: a_perm[:server]}
    for i, chunk in enumerate(np.array_split(a_perm[server:], clients_a)):
        nodes[i + 1] = chunk
    for i, chunk in enumerate(np.array_split(b_perm, clients_b)):
        nodes[clients_a + i + 1] = chunk
    return SplitAssignment("heterogeneous", nodes)


@dataclass(frozen=True)
class SynthSpec:
    """Recipe for a labelled two-domain image set.

    Every (class, domain) pair owns a template.  With ``tile > 0`` the template
    repeats one ``tile x tile`` atom across the image; atoms of a domain lie in
    a random ``rank``-dimensional subspace of patch space, and the domain-B
    subspace blends the domain-A one with a fresh subspace in proportion
    ``domain_mix``.  With ``tile == 0`` each template is a rank-``rank`` outer
    product pattern over the whole image.  Domain-B images are also shifted in
    intensity and rescaled in contrast about mid-grey.
    """

    classes: int = 8
    per_class: int = 150
    height: int = 16
    width: int = 16
    rank: int = 3
    amplitude: float = 0.4
    noise: float = 0.2
    shift_b: float = 0.05
    contrast_b: float = 0.9
    domain_mix: float = 1.0
    tile: int = 4
    seed: int = 0

    def __post_init__(self):
        if self.classes < 1 or self.per_class < 1:
            raise InvalidArgumentError("classes and per_class must be >= 1")
        if self.noise < 0 or self.amplitude < 0:
            raise InvalidArgumentError("noise and amplitude must be >= 0")
        if not 0.0 <= self.domain_mix <= 1.0:
            raise InvalidArgumentError("domain_mix must lie in [0, 1]")
        if self.rank < 1 or self.height < 1 or self.width < 1:
            raise InvalidArgumentError("rank and image size must be >= 1")
        if self.tile < 0 or (self.tile and (self.height % self.tile or self.width % self.tile)):
            raise InvalidArgumentError("tile must be 0 or divide the image size")
        if self.tile and self.rank > self.tile * self.tile:
            raise InvalidArgumentError("rank cannot exceed the atom dimension")


DOMAINS = ("A", "B")


def _low_rank(g: np.random.Generator, H: int, W: int, rank: int) -> np.ndarray:
    t = sum(np.outer(g.normal(size=H), g.normal(size=W)) for _ in range(rank))
    t = t - t.min()
    return 0.15 + 0.7 * t / max(t.max(), 1e-12)


def _orthonormal(g: np.random.Generator, n: int, k: int) -> np.ndarray:
    q, _ = np.linalg.qr(g.normal(size=(n, k)))
    return q


def make_templates(spec: SynthSpec) -> np.ndarray:
    """Templates indexed ``[class, domain]``, shape ``(C, 2, H, W)``."""
    g = SeededRng(spec.seed, 0, 0).substream("templates").generator()
    out = np.empty((spec.classes, 2, spec.height, spec.width))
    if spec.tile == 0:
        for c in range(spec.classes):
            base = _low_rank(g, spec.height, spec.width, spec.rank)
            fresh = _low_rank(g, spec.height, spec.width, spec.rank)
            out[c, 0] = base
            out[c, 1] = (1.0 - spec.domain_mix) * base + spec.domain_mix * fresh
        return out
    q = spec.tile * spec.tile
    basis_a = _orthonormal(g, q, spec.rank)
    fresh = _orthonormal(g, q, spec.rank)
    basis_b = np.linalg.qr((1.0 - spec.domain_mix) * basis_a + spec.domain_mix * fresh)[0]
    reps = (spec.height // spec.tile, spec.width // spec.tile)
    for gi, basis in enumerate((basis_a, basis_b)):
        coef = g.normal(size=(spec.classes, spec.rank))
        for c in range(spec.classes):
            atom = 0.5 + spec.amplitude * (basis @ coef[c])
            out[c, gi] = np.tile(atom.reshape(spec.tile, spec.tile), reps)
    return out


def generate_synth(spec: SynthSpec, domains: Sequence[str] = DOMAINS, draw: int = 0,
                   id_offset: int = 0) -> list[ImageSample]:
    """Render ``per_class`` noisy images for every (class, domain).

    ``draw`` selects an independent noise stream over the same templates, so a
    pretraining set and a downstream labelled set can share class structure.
    """
    templates = make_templates(spec)
    samples, sid = [], id_offset
    for dom in domains:
        gi = DOMAINS.index(dom)
        shift = 0.0 if dom == "A" else spec.shift_b
        contrast = 1.0 if dom == "A" else spec.contrast_b
        g = SeededRng(spec.seed, 0, draw).substream("noise", dom).generator()
        for c in range(spec.classes):
            for _ in range(spec.per_class):
                eps = g.normal(size=(spec.height, spec.width)) if spec.noise > 0 else 0.0
                raw = templates[c, gi] + spec.noise * eps
                px = np.clip(0.5 + contrast * (raw - 0.5) + shift, 0.0, 1.0)
                samples.append(ImageSample(px, dom, c, sid))
                sid += 1
    return samples


def pools_from_samples(samples: Sequence[ImageSample]) -> tuple[DatasetPool, DatasetPool]:
    a = [s.sample_id for s in samples if s.domain == "A"]
    b = [s.sample_id for s in samples if s.domain == "B"]
    return DatasetPool("A", a), DatasetPool("B", b)
