"""Soft thresholding checked against a brute-force scalar minimizer, plus
the Moreau identity that links a prox to its conjugate's prox."""

import numpy as np

from pddiffusion.problem import NonSmoothTerm, prox_conjugate, prox_g


def grid_prox(v, lam, mu, width=4.0, points=2_000_001):
    u = np.linspace(v - width, v + width, points)
    vals = lam * np.abs(u) + (u - v) ** 2 / (2.0 * mu)
    return u[np.argmin(vals)]


rng = np.random.default_rng(0)
g = NonSmoothTerm("l1", 0.75)

print(" v        prox (closed form)   prox (grid)    |gap|")
for _ in range(6):
    v = float(rng.uniform(-2.5, 2.5))
    mu = float(rng.uniform(0.2, 1.5))
    closed = float(prox_g(g, mu, np.array([v]))[0])
    brute = grid_prox(v, g.lam, mu)
    print(f"{v:+.4f}   {closed:+.10f}      {brute:+.7f}    {abs(closed - brute):.1e}")

# Moreau: v = prox_{mu g}(v) + mu prox_{g*/mu}(v/mu), exact to round-off
v = rng.standard_normal(8)
for kind, term in [("l1", g), ("zero", NonSmoothTerm("zero")),
                   ("indicator-zero", NonSmoothTerm("indicator-zero"))]:
    mu = 0.7
    rec = prox_g(term, mu, v) + mu * prox_conjugate(term, 1.0 / mu, v / mu)
    print(f"Moreau reconstruction gap ({kind}): {np.abs(rec - v).max():.2e}")

# the conjugate prox is what the dual update actually calls: for l1 it is
# the projection onto the lam-radius box
y = prox_conjugate(g, 0.9, np.array([-3.0, -0.2, 0.1, 2.0]))
print("projection onto the 0.75-box:", y)
