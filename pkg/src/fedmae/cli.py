"""Command-line entry point: ``python -m fedmae <command> ...``.

Exit codes: 0 success, 1 usage or configuration error, 2 runtime or protocol error.
"""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path

from .benchmark import BOUND_KINDS, bound_setup, probe, sweep_epochs
from .config import build_scenario, load_config, synth_manifest
from .errors import ConfigError, FedMaeError, NotFoundError
from .numeric import SeededRng, stream_id
from .orchestrator import Federation, make_eval_batch
from .partition import DatasetPool, generate_synth, heterogeneous_split, homogeneous_split
from .persistence import (Checkpoint, atomic_write, csv_text, load_checkpoint, save_checkpoint,
                          write_rounds_csv)

log = logging.getLogger("fedmae")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: error: {message}\n{self.format_usage()}")


def _config(args):
    try:
        return load_config(args.config, seed=args.seed)
    except NotFoundError as exc:
        raise ConfigError(str(exc)) from exc


def _eval_batch(sc):
    # every kind reports its loss on the same held-out batch
    pooled = [s for k in sorted(sc.shards) for s in sc.shards[k]]
    return make_eval_batch(pooled, sc.federation.shape, sc.federation.trainer.mask_ratio,
                           sc.config.seed)


def cmd_pretrain(args) -> int:
    cfg = _config(args)
    if args.kind:
        cfg = replace(cfg, kind=args.kind)
    if args.rounds:
        cfg = replace(cfg, rounds=args.rounds)
    sc = build_scenario(cfg)
    fcfg, shards = bound_setup(cfg.kind, sc.federation, sc.shards)
    eval_batch = _eval_batch(sc)

    theta = state = None
    if args.resume:
        ck = load_checkpoint(args.resume)
        if ck.shape != fcfg.shape or ck.seed != cfg.seed:
            raise ConfigError("checkpoint shape or seed does not match the config")
        if ck.round > cfg.rounds:
            raise ConfigError(f"checkpoint is at round {ck.round}, beyond the configured {cfg.rounds}")
        theta, state = ck.theta, ck.state
    fed = Federation(fcfg, shards, eval_batch, theta, state)
    out = Path(args.out)

    def snapshot(f, rec):
        if cfg.checkpoint_every and f.round % cfg.checkpoint_every == 0:
            save_checkpoint(out / f"checkpoint_r{f.round:05d}.bin",
                            Checkpoint(fcfg.shape, f.round, cfg.seed, f.theta, f.state))

    fed.run(on_round=snapshot)
    write_rounds_csv(out / "rounds.csv", fed.records)
    save_checkpoint(out / "checkpoint_final.bin",
                    Checkpoint(fcfg.shape, fed.round, cfg.seed, fed.theta, fed.state))
    last = fed.records[-1] if fed.records else None
    if last is not None:
        print(f"{cfg.kind}: {fed.round} rounds, loss {last.global_loss:.6f}, checksum {last.checksum:016x}")
    return 0


PROBE_HEADER = ("kind", "classifier", "seed", "round", "accuracy", "train", "val", "test", "best_epoch")


def cmd_probe(args) -> int:
    cfg = _config(args)
    ck = load_checkpoint(args.checkpoint)
    if ck.shape != cfg.model_shape():
        raise ConfigError("checkpoint shape does not match the config")
    sc = build_scenario(cfg)
    clf = args.classifier or cfg.probe_classifier
    res = probe(ck.theta, sc.probe_set, ck.shape, clf, cfg.probe_seed, cfg.kind, **cfg.probe_kwargs())
    row = (res.kind, res.classifier, cfg.seed, ck.round, repr(res.accuracy), *res.sizes, res.best_epoch)
    path = Path(args.out) / "probe.csv"
    text = csv_text(PROBE_HEADER, [row])
    if path.exists():
        text = path.read_text() + text.split("\n", 1)[1]
    atomic_write(path, text)
    print(f"{res.kind} {res.classifier} accuracy {res.accuracy:.4f}")
    return 0


def cmd_sweep(args) -> int:
    cfg = _config(args)
    every = args.every or cfg.sweep_every
    sc = build_scenario(cfg)
    rounds = list(range(0, cfg.rounds + 1, every))
    if rounds[-1] != cfg.rounds:
        rounds.append(cfg.rounds)
    points, _ = sweep_epochs(sc.federation, sc.shards, sc.probe_set, rounds, BOUND_KINDS,
                             cfg.probe_classifier, cfg.probe_seed, _eval_batch(sc),
                             **cfg.probe_kwargs())
    out = Path(args.out)
    atomic_write(out / "sweep.csv", csv_text(
        ("round", "kind", "accuracy"),
        ((p.round, k, repr(r.accuracy)) for p in points for k, r in p.results.items())))
    final = points[-1]
    atomic_write(out / "bounds.csv", csv_text(
        ("kind", "seed", "accuracy"),
        ((k, cfg.seed, repr(r.accuracy)) for k, r in final.results.items())))
    for k, r in final.results.items():
        print(f"{k}: {r.accuracy:.4f}")
    return 0


def cmd_split(args) -> int:
    a = DatasetPool("A", range(args.pool_a))
    b = DatasetPool("B", range(args.pool_a, args.pool_a + args.pool_b))
    rng = SeededRng(args.seed or 0, stream_id("split"))
    if args.mode == "homogeneous":
        if args.per_client is None:
            raise UsageError("split: --per-client is required for the homogeneous mode")
        split = homogeneous_split(a, b, args.per_client, args.server, rng, args.clients)
    else:
        split = heterogeneous_split(a, b, args.server, rng, args.clients - 2, 2)
    split.validate([a, b])
    if args.summary:
        text = "".join(f"{'server' if n == 0 else f'client{n}'}: {c}\n" for n, c in split.counts().items())
        text += f"leftover: {split.leftover.size}\n"
    else:
        text = split.to_manifest()
    if args.out:
        atomic_write(args.out, text)
    else:
        sys.stdout.write(text)
    return 0


def cmd_synth(args) -> int:
    cfg = _config(args)
    text = synth_manifest(generate_synth(cfg.synth_spec()))
    if args.out:
        atomic_write(args.out, text)
    else:
        sys.stdout.write(text)
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="fedmae", description="Federated masked-autoencoder pretraining simulator")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    def common(sp, out_default="."):
        sp.add_argument("--config", required=True)
        sp.add_argument("--seed", type=int)
        sp.add_argument("--out", default=out_default)

    sp = sub.add_parser("pretrain", help="pretrain a bound or the federation")
    common(sp, "runs")
    sp.add_argument("--kind", choices=BOUND_KINDS)
    sp.add_argument("--rounds", type=int)
    sp.add_argument("--resume")
    sp.set_defaults(func=cmd_pretrain)

    sp = sub.add_parser("probe", help="probe a checkpoint on frozen features")
    common(sp, "runs")
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--classifier", choices=("linear", "mlp"))
    sp.set_defaults(func=cmd_probe)

    sp = sub.add_parser("sweep", help="probe accuracy across pretraining rounds for every bound")
    common(sp, "runs")
    sp.add_argument("--every", type=int)
    sp.set_defaults(func=cmd_sweep)

    sp = sub.add_parser("split", help="materialise a split and print its manifest")
    sp.add_argument("--mode", choices=("homogeneous", "heterogeneous"), required=True)
    sp.add_argument("--pool-a", type=int, required=True)
    sp.add_argument("--pool-b", type=int, required=True)
    sp.add_argument("--server", type=int, required=True)
    sp.add_argument("--per-client", type=int)
    sp.add_argument("--clients", type=int, default=5)
    sp.add_argument("--seed", type=int)
    sp.add_argument("--summary", action="store_true", help="print node counts only")
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_split)

    sp = sub.add_parser("synth", help="print the synthetic dataset manifest")
    sp.add_argument("--config", required=True)
    sp.add_argument("--seed", type=int)
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_synth)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise UsageError(parser.format_usage())
    except UsageError as exc:
        sys.stderr.write(f"{exc}\n")
        return 1
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        sys.stderr.write(f"{exc}\n")
        return 1
    except ConfigError as exc:
        sys.stderr.write(f"config error: {exc}\n")
        return 1
    except (FedMaeError, OSError) as exc:
        sys.stderr.write(f"error: {exc}\n")
        return 2


if __name__ == "__main__":
    sys.exit(main())
