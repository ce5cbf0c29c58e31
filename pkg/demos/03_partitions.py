"""
Splitting two data pools across nodes
=====================================

Two sources of unequal size are divided among five clients and a server,
either mixed (homogeneous) or domain by domain (heterogeneous).
"""

# %%
import numpy as np

from fedmae.numeric import SeededRng
from fedmae.partition import DatasetPool, heterogeneous_split, homogeneous_split

pool_a = DatasetPool("A", np.arange(87_970))
pool_b = DatasetPool("B", np.arange(87_970, 87_970 + 37_876))

# %%
# Mixed: every client gets the same count and the rest stays unassigned.
hom = homogeneous_split(pool_a, pool_b, per_client=18_938, server=10_000, rng=SeededRng(0))
print("homogeneous:", hom.counts(), "leftover", hom.leftover.size)
for node, ids in hom.nodes.items():
    print(f"  node {node}: {np.mean(ids < 87_970):.3f} of its images come from pool A")

# %%
# By domain: the server and clients 1-3 draw from A, clients 4-5 split B.
het = heterogeneous_split(pool_a, pool_b, server=10_000, rng=SeededRng(0))
print("heterogeneous:", het.counts())
print("  clients 4-5 pure B:", all(np.all(het.nodes[k] >= 87_970) for k in (4, 5)))

# %%
# Manifests are plain text and parse back to the same assignment.
small = heterogeneous_split(DatasetPool("A", range(8)), DatasetPool("B", range(8, 12)), 2,
                            SeededRng(1))
print(small.to_manifest())
