"""
Quickstart: one small federation, round by round
================================================

Six nodes (a data-holding server plus five clients) pretrain a tiny masked
autoencoder on a synthetic two-domain image set.  Every round the global
model goes out, each node takes a few SGD steps, and the server averages the
returned deltas.
"""

# %%
# Build the default scenario but keep it short.
from fedmae import RunConfig, build_scenario
from fedmae.orchestrator import Federation

cfg = RunConfig(rounds=20)
sc = build_scenario(cfg)
print("images per node:", {k: len(v) for k, v in sc.shards.items()})
print("parameters:", sc.federation.shape.num_params)

# %%
# Node 0 is the server and holds domain-A images; nodes 4 and 5 only see domain B.
print({k: sorted({s.domain for s in v}) for k, v in sc.shards.items()})

# %%
# Run the federation and watch the held-out reconstruction loss fall.
fed = Federation(sc.federation, sc.shards)
for _ in range(cfg.rounds):
    rec = fed.run_round()
    if rec.round % 5 == 4:
        print(f"round {rec.round + 1:3d}  loss {rec.global_loss:.4f}  |mean delta| {rec.delta_norm:.4f}"
              f"  checksum {rec.checksum:016x}")

# %%
# A second run from the same config lands on the same bits.
again = Federation(sc.federation, sc.shards)
again.run()
print("reproducible:", again.theta.tobytes() == fed.theta.tobytes())
