"""
Server optimizers side by side
==============================

The aggregator turns the mean client delta into a model step.  FedAvg adds
it directly, FedAvgM accumulates it in a momentum buffer, and the adaptive
variants rescale it per coordinate with running moments.
"""

# %%
import numpy as np

from fedmae import RunConfig, Strategy, build_scenario
from fedmae.aggregation import ServerOptState, step
from fedmae.orchestrator import Federation

# %%
# A single step on a toy delta shows how differently each rule scales it.
delta = np.array([1e-3, 0.1, -2.0])
for kind in ("fedavg", "fedavgm", "fedadam", "fedadagrad"):
    theta, _ = step(Strategy(kind), ServerOptState.zeros(3), np.zeros(3), delta)
    print(f"{kind:10s} first step {np.array2string(theta, precision=4)}")

# %%
# Momentum with alpha = 0 is exactly FedAvg.
a, _ = step(Strategy("fedavg"), ServerOptState.zeros(3), np.zeros(3), delta)
b, _ = step(Strategy("fedavgm", momentum=0.0), ServerOptState.zeros(3), np.zeros(3), delta)
print("FedAvgM(0) == FedAvg:", a.tobytes() == b.tobytes())

# %%
# Short federated runs under each strategy on the default scenario.
for kind, lr in (("fedavg", None), ("fedavgm", 0.5), ("fedadam", 1e-2), ("fedadagrad", 1e-2)):
    cfg = RunConfig(rounds=15, strategy=kind, server_lr=lr)
    sc = build_scenario(cfg)
    fed = Federation(sc.federation, sc.shards)
    fed.run()
    print(f"{kind:10s} loss after 15 rounds {fed.records[-1].global_loss:.4f}")

# %%
# Flipping the sign convention moves the model away from client progress.
cfg = RunConfig(rounds=15, literal_signs=True)
sc = build_scenario(cfg)
fed = Federation(sc.federation, sc.shards)
fed.run()
print(f"subtracting the mean delta: loss {fed.records[-1].global_loss:.4f}")
