"""Desk-scale version of the headline experiment: 20 agents solving a
compressed-sensing lasso in sharing form.

Part one times the raw 500-iteration digraph run (p = 50 per agent, l1
weight 1). With a 1e-3 ridge the certified dual step is nu-limited and
tiny, so this horizon is about throughput and stability, not accuracy.

Part two contrasts weight classes on a well-conditioned ring benchmark:
with merely row- or asymmetric doubly stochastic weights the recursion
stalls on a biased limit, while symmetric doubly stochastic weights drive
the squared error to the floor.
"""

from time import perf_counter

import numpy as np

from pddiffusion.metrics import iterations_to
from pddiffusion.problem import make_cs_instance
from pddiffusion.solver import run, tune_steps
from pddiffusion.topology import DirectedTopology, build_topology

n = 20

topo = build_topology("random-digraph", n, density=0.5, seed=7)
problem, _, _ = make_cs_instance(n, 50, 40, 0.2, 0.01, 1.0, seed=8,
                                 family="B", ridge=1e-3, oracle=False)
t0 = perf_counter()
trace, state = run(problem, topo, max_iter=500)
elapsed = perf_counter() - t0
print(f"digraph throughput run: 500 iterations x {n} agents (p = 50) "
      f"in {elapsed:.2f}s")
print(f"iterates finite: {bool(np.all(np.isfinite(state.W)))}, "
      f"final dual consensus residual {trace.dual_consensus_residual[-1]:.1e}")

# ring benchmark: same instance under three connectivity patterns
ring_problem, truth, _ = make_cs_instance(n, 20, 40, 0.25, 0.05, 0.3,
                                          seed=1000, family="B", ridge=0.2)
directed = build_topology("ring-digraph", n)
edges = set(directed.edges) | {(k, l) for (l, k) in directed.edges}
symmetric = DirectedTopology(n, frozenset(edges))

steps, _ = tune_steps(ring_problem, symmetric)
print("\nring benchmark, 300 iterations each "
      f"(mu_w = {steps.mu_w:.3f}, mu_y = {steps.mu_y:.3f})")
for name, top in (("directed ring", directed), ("symmetrized ring", symmetric)):
    tr, _ = run(ring_problem, top, steps=steps, max_iter=300,
                ground_truth=truth)
    its = iterations_to(tr, 1e-6)
    reached = f"reaches 1e-6 at iteration {its}" if its else "never reaches 1e-6"
    print(f"  {name:17s} final sq error {tr.sq_error[-1]:.3e}  ({reached})")
print("exact convergence needs symmetric doubly stochastic weights; the")
print("directed run is stable but settles on a biased point")
