"""Tour of the graph builders and combination matrices.

Builds each topology kind, prints the Metropolis weights with their
stochasticity tag, and shows the spectral quantities the rate certificate
consumes.
"""

import numpy as np

from pddiffusion.topology import (TOPOLOGY_KINDS, build_topology,
                                  from_edge_list, metropolis_weights,
                                  spectral_summary, to_edge_list)

np.set_printoptions(precision=3, suppress=True)

for kind in TOPOLOGY_KINDS:
    topo = build_topology(kind, 5, density=0.5, seed=2)
    weights = metropolis_weights(topo)
    print(f"== {kind} (n=5) ==")
    print(f"symmetric: {topo.is_symmetric}  "
          f"stochasticity: {weights.stochasticity}")
    print("entries[l, k] = weight receiver k puts on sender l")
    print(weights.entries)
    summ = spectral_summary(weights.entries)
    print(f"sigma_max(A) = {summ.sigma_max:.3f}  "
          f"smallest nonzero sigma = {summ.sigma_min_nonzero:.3f}")
    print()

# the same graphs travel as 1-indexed edge-list files
import tempfile
from pathlib import Path

topo = build_topology("undirected-random", 5, density=0.5, seed=2)
with tempfile.TemporaryDirectory() as tmp:
    path = Path(tmp) / "graph.txt"
    to_edge_list(topo, path)
    print("edge-list form (self-loops are implicit):")
    print(path.read_text())
    assert from_edge_list(path).edges == topo.edges
print("round trip ok")
