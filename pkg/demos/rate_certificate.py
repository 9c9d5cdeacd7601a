"""Certifying a linear rate before running, then checking it after.

The certificate needs only the instance curvature (delta, nu), the
coupling spectrum and the combination-matrix spectrum. When it reports
"certified", the squared error is guaranteed under gamma^i times a
computable constant, and the fitted empirical rate should sit at or below
gamma.
"""

import numpy as np

from pddiffusion.certificate import c_o_constant, certify, stepsize_bounds
from pddiffusion.metrics import fit_linear_rate
from pddiffusion.problem import make_cs_instance
from pddiffusion.solver import StepSizes, default_steps, run
from pddiffusion.topology import build_topology, metropolis_weights

n = 5
problem, truth, _ = make_cs_instance(n, 6, 10, 0.5, 0.02, 0.05, seed=4,
                                     family="A", ridge=0.1)
topo = build_topology("undirected-random", n, density=0.5, seed=4)
weights = metropolis_weights(topo)

mu_w_max, mu_y_max = stepsize_bounds(problem.delta, problem.nu, 1.0)
print(f"curvature: delta = {problem.delta:.3f}, nu = {problem.nu:.3f}")

steps = default_steps(problem)      # 0.9 x the certified bounds
cert = certify(problem, weights, steps)
print(f"steps: mu_w = {steps.mu_w:.4f} (max {cert.mu_w_max:.4f}), "
      f"mu_y = {steps.mu_y:.4f} (max {cert.mu_y_max:.4f})")
print(f"gamma1 = {cert.gamma1:.4f}  gamma2 = {cert.gamma2:.4f}  "
      f"gamma3 = {cert.gamma3:.4f}")
print(f"verdict: {cert.verdict}  (gamma = {cert.gamma:.4f})")

trace, _ = run(problem, topo, steps=steps, weights=weights,
               ground_truth=truth, max_iter=300)
fit = fit_linear_rate(trace, burn_in=20)
print(f"\nfitted rate over the run: {fit.gamma_hat:.4f} "
      f"[{fit.gamma_low:.4f}, {fit.gamma_high:.4f}]")

c_o = c_o_constant(problem, truth, steps)
i = trace.iters + 1
envelope = cert.gamma ** i * c_o
use = np.max(trace.sq_error[i >= 10] / envelope[i >= 10])
print(f"worst envelope use after iteration 10: {use:.3f} "
      "(1.0 would touch the bound)")

# oversized steps lose the certificate and the violation says why
bad = certify(problem, weights, StepSizes(mu_w=3.0 * cert.mu_w_max,
                                          mu_y=steps.mu_y))
print(f"\noversized primal step -> {bad.verdict}")
for v in bad.violations:
    print("  violation:", v)
