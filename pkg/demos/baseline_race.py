"""Racing the sharing-form solver against the consensus baselines.

Part one: iterations to 1e-6 squared error for the primal-dual solver and
proximal EXTRA on a ring lasso benchmark, each measured against its own
centralized solution, each with its own tuned step.

Part two: on a smooth instance whose local costs share one minimizer,
EXTRA, DIGing and the sharing solver must all land on the same point.
"""

import numpy as np

from pddiffusion.baselines import consensus_truth, diging_run, extra_run
from pddiffusion.metrics import iterations_to
from pddiffusion.problem import make_consensus_instance, make_cs_instance
from pddiffusion.solver import run, tune_steps
from pddiffusion.topology import DirectedTopology, build_topology

n = 20


def ring(n):
    edges = {(k, k) for k in range(n)}
    for k in range(n):
        edges |= {(k, (k + 1) % n), ((k + 1) % n, k)}
    return DirectedTopology(n, frozenset(edges))


topo = ring(n)
print("seed   pdd iters   prox-EXTRA iters")
for seed in range(5):
    problem, truth, _ = make_cs_instance(n, 20, 40, 0.25, 0.05, 0.3,
                                         seed=seed + 1000, family="B",
                                         ridge=0.2)
    steps, _ = tune_steps(problem, topo)
    trace_p, _ = run(problem, topo, steps=steps, max_iter=500, tol=1e-6,
                     ground_truth=truth)
    trace_e, _ = extra_run(problem, topo, max_iter=500,
                           ground_truth=consensus_truth(problem))
    print(f"{seed:4d}   {iterations_to(trace_p, 1e-6)!s:>9}   "
          f"{iterations_to(trace_e, 1e-6)!s:>16}")

problem, x_com = make_consensus_instance(6, 5, seed=13)
mesh = build_topology("undirected-random", 6, density=0.6, seed=13)
truth_c = consensus_truth(problem)
_, X_e = extra_run(problem, mesh, max_iter=1200, ground_truth=truth_c)
_, X_d = diging_run(problem, mesh, max_iter=1200, ground_truth=truth_c)
_, state = run(problem, mesh, max_iter=1200)
blocks = np.stack([problem.block(state.W, k) for k in range(6)])

print("\nsmooth cross-check against the common minimizer:")
print(f"  EXTRA   max deviation {np.abs(X_e - x_com).max():.2e}")
print(f"  DIGing  max deviation {np.abs(X_d - x_com).max():.2e}")
print(f"  sharing max deviation {np.abs(blocks - x_com).max():.2e}")
