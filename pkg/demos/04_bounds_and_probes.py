"""
Lower bound, upper bound and the federation
===========================================

The lower bound pretrains on the server's own shard, the upper bound on every
shard pooled, and the federation sits in between.  All three take the same
number of gradient steps.  A linear probe on frozen features scores each.
"""

# %%
from fedmae import RunConfig, build_scenario
from fedmae.benchmark import BOUND_KINDS, rounds_to_fraction, sweep_epochs
from fedmae.orchestrator import make_eval_batch

cfg = RunConfig(rounds=60)
sc = build_scenario(cfg)
pooled = [s for k in sorted(sc.shards) for s in sc.shards[k]]
eval_batch = make_eval_batch(pooled, sc.federation.shape, cfg.mask_ratio, cfg.seed)

# %%
# Probe every bound every 10 rounds.
points, records = sweep_epochs(sc.federation, sc.shards, sc.probe_set, range(0, 61, 10),
                               BOUND_KINDS, "linear", cfg.probe_seed, eval_batch,
                               **cfg.probe_kwargs())
print("round " + "".join(f"{k:>10s}" for k in BOUND_KINDS))
for p in points:
    print(f"{p.round:5d} " + "".join(f"{p.results[k].accuracy:10.3f}" for k in BOUND_KINDS))

# %%
# Final reconstruction losses and how quickly each curve flattens.
for k in BOUND_KINDS:
    curve = [(p.round, p.results[k].accuracy) for p in points]
    print(f"{k:9s} loss {records[k][-1].global_loss:.4f}  "
          f"95% of final accuracy by round {rounds_to_fraction(curve)}")
