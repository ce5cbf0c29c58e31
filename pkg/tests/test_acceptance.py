"""End-to-end acceptance checks.

Each test prints one PASS/FAIL line (also repeated in the pytest terminal
summary) including its runtime against the budget.
"""

import logging
import time

import numpy as np
import pytest

import oracles
from fedmae.aggregation import KINDS, ServerOptState, Strategy, step
from fedmae.benchmark import BOUND_KINDS, rounds_to_fraction, sweep_epochs
from fedmae.cli import main
from fedmae.config import RunConfig, build_scenario, config_to_text
from fedmae.errors import ChecksumError
from fedmae.mae import ModelShape, grad, patchify, sample_mask
from fedmae.numeric import SeededRng, checksum64, stream_id
from fedmae.orchestrator import (Federation, FederationConfig, SimulatedNetwork, decode_update,
                                 encode_update, make_eval_batch)
from fedmae.partition import DatasetPool, heterogeneous_split, homogeneous_split
from fedmae.persistence import load_checkpoint
from fedmae.trainer import TrainerConfig, minibatch_plan

RESULTS = []


def report(num, title, ok, detail, elapsed, budget):
    within = elapsed < budget
    line = (f"[{'PASS' if ok and within else 'FAIL'}] criterion {num:>2}: {title} | {detail} | "
            f"{elapsed:.1f}s (budget {budget:.0f}s{'' if within else ', EXCEEDED'})")
    RESULTS.append(line)
    print(line)
    assert ok, line
    assert within, line


def test_c01_optimizer_conformance():
    t0 = time.perf_counter()
    worst = {}
    rng = np.random.default_rng(101)
    for kind in KINDS:
        worst[kind] = 0.0
        for _ in range(100):
            n = int(rng.integers(1, 64))
            s = Strategy(kind, server_lr=float(rng.uniform(1e-3, 2)),
                         momentum=float(rng.uniform(0, .99)), beta1=float(rng.uniform(0, .99)),
                         beta2=float(rng.uniform(0, .999)), eps=float(10 ** rng.uniform(-10, -4)))
            st = ServerOptState(int(rng.integers(0, 200)), rng.normal(size=n), rng.normal(size=n),
                                rng.random(n) * 10 ** rng.uniform(-6, 1))
            theta = rng.normal(size=n)
            delta = rng.normal(size=n) * 10 ** rng.uniform(-4, 1)
            th, st1 = step(s, st, theta, delta)
            ref = oracles.server_step_oracle(
                kind, theta.tolist(), delta.tolist(), st.round, st.momentum.tolist(), st.m.tolist(),
                st.v.tolist(), lr=s.server_lr, alpha=s.momentum, beta1=s.beta1, beta2=s.beta2,
                eps=s.eps)
            for got, want in zip((th, st1.momentum, st1.m, st1.v), ref):
                worst[kind] = max(worst[kind], oracles.rel_err(got, want))
    ok = max(worst.values()) <= 1e-12
    detail = "max rel err " + ", ".join(f"{k}={v:.1e}" for k, v in worst.items()) + " (tol 1e-12)"
    report(1, "server step vs scalar oracle", ok, detail, time.perf_counter() - t0, 5)


def test_c02_single_node_collapse():
    t0 = time.perf_counter()
    sc = build_scenario(RunConfig())
    data = sc.shards[0]
    cfg = FederationConfig(num_clients=0, rounds=20, strategy=Strategy("fedavg", server_lr=1.0),
                           trainer=TrainerConfig(local_steps=5, lr=1.0, batch_size=32),
                           shape=ModelShape())
    fed = Federation(cfg, {0: data})
    theta0 = fed.theta.copy()
    fed.run()

    # sequential SGD on the server shard, replaying the node's minibatches and masks
    shape = cfg.shape
    ps = [patchify(s.pixels, shape.patch) for s in data]
    theta, naive = theta0.copy(), theta0.copy()
    for t in range(cfg.rounds):
        rng = SeededRng(cfg.seed, stream_id("node", 0), t)
        offset = np.zeros_like(theta)
        for idx, masks in minibatch_plan(len(data), shape.num_patches, cfg.trainer, rng):
            batch = [(ps[i], m) for i, m in zip(idx, masks)]
            offset = offset - cfg.trainer.lr * grad(theta + offset, batch, shape)
            naive = naive - cfg.trainer.lr * grad(naive, batch, shape)
        theta = theta + offset
    ok = fed.theta.tobytes() == theta.tobytes()
    drift = oracles.rel_err(fed.theta, naive)
    detail = (f"bitwise={ok}, checksum {checksum64(fed.theta):016x} vs {checksum64(theta):016x}; "
              f"absolute-coordinate SGD max rel diff {drift:.1e}")
    report(2, "N=0 FedAvg equals sequential SGD (R=20, K=5)", ok, detail,
           time.perf_counter() - t0, 30)


def test_c03_one_step_equivalence():
    t0 = time.perf_counter()
    errs = []
    for seed in range(3):
        sc = build_scenario(RunConfig(seed=seed))
        full = max(len(v) for v in sc.shards.values())
        cfg = FederationConfig(num_clients=5, rounds=1, strategy=Strategy("fedavg", server_lr=1.0,
                                                                          weighting="sample"),
                               trainer=TrainerConfig(local_steps=1, lr=1.0, batch_size=full),
                               shape=ModelShape(), seed=seed)
        fed = Federation(cfg, sc.shards)
        theta0 = fed.theta.copy()
        fed.run()
        shape = cfg.shape
        pooled = []
        for node, data in sc.shards.items():
            rng = SeededRng(seed, stream_id("node", node), 0)
            idx, masks = minibatch_plan(len(data), shape.num_patches, cfg.trainer, rng)[0]
            pooled += [(patchify(data[i].pixels, shape.patch), m) for i, m in zip(idx, masks)]
        # the n_k-weighted mean of per-node mean losses is the pooled per-sample mean
        central = theta0 - cfg.trainer.lr * grad(theta0, pooled, shape)
        errs.append(float(np.max(np.abs(fed.theta - central)) / np.max(np.abs(central))))
    ok = max(errs) <= 1e-10
    report(3, "one-step FedAvg vs centralized full-batch step", ok,
           "rel err " + ", ".join(f"{e:.1e}" for e in errs) + " (tol 1e-10, 3 splits)",
           time.perf_counter() - t0, 30)


def test_c04_gradient_vs_finite_differences():
    t0 = time.perf_counter()
    shape = ModelShape()
    worst, checked = 0.0, 0
    for draw in range(20):
        rng = np.random.default_rng(4000 + draw)
        theta = rng.uniform(-0.4, 0.4, shape.num_params)
        batch = [(rng.random((shape.num_patches, shape.patch_dim)),
                  sample_mask(shape.num_patches, 0.6, rng)) for _ in range(2)]
        g = grad(theta, batch, shape)
        fd = oracles.central_difference(theta, batch, shape.patch_dim, shape.hidden, shape.latent,
                                        step=1e-6)
        sel = np.abs(g) > 1e-8
        rel = np.abs(g[sel] - fd[sel]) / np.maximum(np.abs(g[sel]), np.abs(fd[sel]))
        worst = max(worst, float(rel.max()))
        checked += int(sel.sum())
    ok = worst <= 1e-4
    report(4, "analytic gradient vs central differences", ok,
           f"max rel err {worst:.1e} over {checked} coords, 20 draws, {shape.num_params} params "
           f"(tol 1e-4)", time.perf_counter() - t0, 60)


def test_c05_split_exactness():
    t0 = time.perf_counter()
    a = DatasetPool("A", np.arange(87_970))
    b = DatasetPool("B", np.arange(87_970, 87_970 + 37_876))
    hom = homogeneous_split(a, b, 18_938, 10_000, SeededRng(0, stream_id("split")))
    het = heterogeneous_split(a, b, 10_000, SeededRng(0, stream_id("split")))
    hom.validate([a, b])
    het.validate([a, b])
    ok_hom = (hom.counts() == {0: 10_000, **{k: 18_938 for k in range(1, 6)}}
              and hom.leftover.size == 21_156)
    ok_het = (het.counts() == {0: 10_000, 1: 25_990, 2: 25_990, 3: 25_990, 4: 18_938, 5: 18_938}
              and het.leftover.size == 0)
    pure = (all(np.all(het.nodes[k] < 87_970) for k in (0, 1, 2, 3))
            and all(np.all(het.nodes[k] >= 87_970) for k in (4, 5)))
    ok = ok_hom and ok_het and pure
    detail = (f"homogeneous {list(hom.counts().values())} leftover {hom.leftover.size}; "
              f"heterogeneous {list(het.counts().values())} purity={pure}")
    report(5, "large-pool split counts", ok, detail, time.perf_counter() - t0, 5)


SEEDS = range(5)


@pytest.fixture(scope="module")
def ordering_runs():
    t0 = time.perf_counter()
    runs = []
    for seed in SEEDS:
        cfg = RunConfig(seed=seed)
        sc = build_scenario(cfg)
        pooled = [s for k in sorted(sc.shards) for s in sc.shards[k]]
        eval_batch = make_eval_batch(pooled, sc.federation.shape, cfg.mask_ratio, seed)
        rounds = list(range(0, cfg.rounds + 1, cfg.sweep_every))
        points, _ = sweep_epochs(sc.federation, sc.shards, sc.probe_set, rounds, BOUND_KINDS,
                                 cfg.probe_classifier, cfg.probe_seed, eval_batch,
                                 **cfg.probe_kwargs())
        runs.append(points)
    return runs, time.perf_counter() - t0


def test_c06_ordering(ordering_runs):
    runs, elapsed = ordering_runs
    final = {k: np.mean([pts[-1].results[k].accuracy for pts in runs]) for k in BOUND_KINDS}
    lo, fed, up = final["lower"], final["fedfound"], final["upper"]
    ok = (fed - lo >= 0.02) and (up - fed >= -0.02)
    detail = (f"mean acc lower {lo:.4f}, fedfound {fed:.4f}, upper {up:.4f}; "
              f"fed-lower {fed - lo:+.4f} (>= +0.02), upper-fed {up - fed:+.4f} (>= -0.02)")
    report(6, "lower < federated <= upper over 5 seeds", ok, detail, elapsed, 900)


def test_c07_convergence_shape(ordering_runs):
    runs, elapsed = ordering_runs
    verdicts = []
    for pts in runs:
        curve = lambda k: [(p.round, p.results[k].accuracy) for p in pts]
        r_up, r_lo = rounds_to_fraction(curve("upper")), rounds_to_fraction(curve("lower"))
        verdicts.append((r_up, r_lo, r_up <= 0.5 * r_lo))
    hits = sum(v[2] for v in verdicts)
    ok = hits >= 4
    detail = ("rounds to 95% of final (upper/lower) " +
              ", ".join(f"{u}/{lo}" for u, lo, _ in verdicts) + f"; {hits}/5 seeds satisfy (need 4)")
    report(7, "upper bound plateaus in <= half the lower bound's rounds", ok, detail, elapsed, 900)


def _federation(strategy, rounds):
    sc = build_scenario(RunConfig())
    cfg = FederationConfig(num_clients=5, rounds=rounds, strategy=strategy,
                           trainer=TrainerConfig(), shape=ModelShape())
    return Federation(cfg, sc.shards)


def test_c08_fedavgm_zero_momentum():
    t0 = time.perf_counter()
    a = _federation(Strategy("fedavg", server_lr=1.0), 10)
    b = _federation(Strategy("fedavgm", server_lr=1.0, momentum=0.0), 10)
    a.run()
    b.run()
    same = all(x.checksum == y.checksum for x, y in zip(a.records, b.records))
    ok = same and a.theta.tobytes() == b.theta.tobytes() and len(a.records) == 10
    report(8, "FedAvgM(alpha=0) trajectory equals FedAvg", ok,
           f"10/10 round checksums equal={same}, final {a.records[-1].checksum:016x}",
           time.perf_counter() - t0, 10)


def test_c09_determinism_and_resume(tmp_path):
    t0 = time.perf_counter()
    R = 8
    cfg = RunConfig(rounds=R, strategy="fedadam", checkpoint_every=1)
    path = tmp_path / "run.cfg"
    path.write_text(config_to_text(cfg))
    base = ["pretrain", "--config", str(path), "--seed", "3"]
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(base + ["--out", str(a)]) == 0
    assert main(base + ["--out", str(b)]) == 0
    names = sorted(p.name for p in a.iterdir())
    identical = all((a / n).read_bytes() == (b / n).read_bytes() for n in names)
    final = load_checkpoint(a / "checkpoint_final.bin").theta
    resumed_ok = []
    for r1 in range(1, R):
        out = tmp_path / f"resume{r1}"
        assert main(base + ["--out", str(out), "--resume", str(a / f"checkpoint_r{r1:05d}.bin")]) == 0
        resumed_ok.append((out / "checkpoint_final.bin").read_bytes()
                          == (a / "checkpoint_final.bin").read_bytes())
    ok = identical and all(resumed_ok)
    detail = (f"{len(names)} output files byte-identical={identical}; resume from rounds 1..{R - 1}: "
              f"{sum(resumed_ok)}/{R - 1} match final checksum {checksum64(final):016x}")
    report(9, "byte-identical reruns and split resume", ok, detail, time.perf_counter() - t0, 60)


class _CorruptOnce(SimulatedNetwork):
    def send(self, node_id, round_index, data):
        if (node_id, round_index) == (3, 2):
            data = data[:64] + bytes([data[64] ^ 0x5A]) + data[65:]
        super().send(node_id, round_index, data)


def test_c10_protocol_robustness():
    t0 = time.perf_counter()
    # direct corruption of an encoded message
    fed = _federation(Strategy(), 6)
    u = fed._train_node(4, fed.theta, 0)
    raw = bytearray(encode_update(u, 0).pack())
    raw[100] ^= 0x01
    try:
        decode_update(bytes(raw))
        direct = None
    except ChecksumError as exc:
        direct = (exc.node_id, exc.round_index)

    # corruption inside a lossless federation run
    fed.network = _CorruptOnce(fed.cfg.seed)
    in_run = None
    try:
        fed.run()
    except ChecksumError as exc:
        in_run = (exc.node_id, exc.round_index, "node 3" in str(exc) and "round 2" in str(exc))

    # drop injection
    sc = build_scenario(RunConfig())
    cfg = FederationConfig(num_clients=5, rounds=15, trainer=TrainerConfig(), shape=ModelShape(),
                           drop_prob=0.2)
    logger = logging.getLogger("fedmae.orchestrator")
    seen = []
    handler = logging.Handler()
    handler.emit = lambda rec: seen.append(rec) if "dropped" in rec.getMessage() else None
    logger.addHandler(handler)
    old = logger.level
    logger.setLevel(logging.INFO)
    try:
        dfed = Federation(cfg, sc.shards)
        dfed.run()
    finally:
        logger.removeHandler(handler)
        logger.setLevel(old)
    logged = sorted((r.args[0], r.args[1]) for r in seen)
    recorded = sorted((r.round, n) for r in dfed.records for n in r.dropped)
    drops_ok = (len(dfed.records) == 15 and logged == recorded == sorted(dfed.network.dropped)
                and len(logged) > 0)
    ok = direct == (4, 0) and in_run == (3, 2, True) and drops_ok
    detail = (f"direct flip -> ChecksumError(node,round)={direct}; in-run -> {in_run}; "
              f"p_drop=0.2: 15/15 rounds, {len(logged)} drops logged, log==records={logged == recorded}")
    report(10, "corruption detected, drops logged exactly", ok, detail, time.perf_counter() - t0, 30)
