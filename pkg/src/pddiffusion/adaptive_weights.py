"""Adaptive combination coefficients for the diffusion solver.

Each receiver ``k`` keeps one smoothed statistic per in-neighbor ``l``,

    chi_sq[l, k](i) = (1 - zeta) chi_sq[l, k](i-1) + zeta ||w_k(i-1)||^2,

fed by the receiver's own primal block (the locally available stand-in
for neighbor quality), and turns the statistics into weights through a
softmax of their inverses:

    a[l, k] = exp(1/chi_sq[l, k]) / sum_{j in N_k} exp(1/chi_sq[j, k]).

The inverse is clamped before exponentiation (floor 1e-8 on chi_sq,
cap 50 on the exponent) to remove the chi -> 0 singularity without
reordering neighbors. An oracle-mode update that scales the statistic
by the contraction certificate and the initial error norms is provided
separately; it needs a reference solution, so it cannot drive a
deployed run.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .topology import CombinationMatrix

#: floor applied to chi_sq before inversion
CHI_SQ_FLOOR = 1e-8

#: cap applied to 1/chi_sq before exponentiation
CHI_INV_CAP = 50.0


@dataclass
class AdaptiveWeightState:
    """Filtered per-edge statistics; only in-neighborhood entries are live."""

    topology: object
    zeta: float
    chi_sq: np.ndarray = field(repr=False)
    iteration: int = 0

    def __post_init__(self):
        if not (0.0 <= self.zeta <= 1.0):
            raise ValueError(f"zeta must lie in [0, 1], got {self.zeta}")
        if self.chi_sq.shape != (self.topology.n, self.topology.n):
            raise ValueError("chi_sq must be n-by-n for the topology")
        if np.any(self.chi_sq < 0):
            raise ValueError("chi_sq entries must be nonnegative")


def init_weight_state(topology, zeta=0.1):
    """Fresh state with the filter initialized at zero."""
    return AdaptiveWeightState(
        topology=topology, zeta=zeta,
        chi_sq=np.zeros((topology.n, topology.n)))


def update_filter(state, k, w_prev_k):
    """Smooth ``||w_k||^2`` into every in-neighbor statistic of agent ``k``."""
    val = float(np.asarray(w_prev_k, dtype=float) @ np.asarray(w_prev_k, dtype=float))
    z = state.zeta
    for l in state.topology.in_neighbors(k):
        state.chi_sq[l, k] = (1.0 - z) * state.chi_sq[l, k] + z * val
    return state


def compute_weights(state, topology=None):
    """Softmax-of-inverse weights from the current statistics.

    Column ``k`` of the result sums to one over the in-neighborhood of
    ``k`` (tag ``row``: the mixing matrix acting on stacked blocks is
    row stochastic). Entries on non-edges stay zero.
    """
    topo = state.topology if topology is None else topology
    n = topo.n
    entries = np.zeros((n, n))
    for k in range(n):
        nbrs = topo.in_neighbors(k)
        expo = np.empty(len(nbrs))
        for j, l in enumerate(nbrs):
            chi = max(state.chi_sq[l, k], CHI_SQ_FLOOR)
            expo[j] = min(1.0 / chi, CHI_INV_CAP)
        scores = np.exp(expo)
        entries[nbrs, k] = scores / scores.sum()
    return CombinationMatrix(entries=entries, stochasticity="row")


def initial_error_norms(problem, truth, steps, w_init=None, y_init=None):
    """Per-agent weighted squared initial errors for the oracle rule.

    Returns one ``(w_sq, y_sq, x_sq)`` triple per agent: the primal error
    in the ``I - mu_y mu_w C_k' C_k`` metric, the dual error in the
    ``I - mu_y mu_w C_k C_k'`` metric, and the plain squared error of the
    splitting variable against its stationary value.
    """
    if hasattr(steps, "mu_w"):
        mu_w, mu_y = float(steps.mu_w), float(steps.mu_y)
    else:
        mu_w, mu_y = (float(s) for s in steps)
    mm = mu_y * mu_w
    n, m = problem.n_agents, problem.m_dim
    W0 = np.zeros(problem.q_total) if w_init is None else np.asarray(w_init, float)
    Y0 = np.zeros((n, m)) if y_init is None else np.asarray(y_init, float)
    if Y0.shape == (m,):
        Y0 = np.tile(Y0, (n, 1))
    cw = problem.apply_Cd(truth.w_star)
    x_star = mu_y * (cw.mean(axis=0)[None, :] - cw)
    out = []
    for k in range(n):
        ck = problem.coupling.mats[k]
        w_err = problem.block(W0, k) - problem.block(truth.w_star, k)
        y_err = Y0[k] - truth.y_star
        w_sq = float(w_err @ w_err) - mm * float(np.sum((ck @ w_err) ** 2))
        y_sq = float(y_err @ y_err) - mm * float(np.sum((ck.T @ y_err) ** 2))
        x_sq = float(x_star[k] @ x_star[k])
        out.append((w_sq, y_sq, x_sq))
    return out


def update_chi_certificate_scaled(state, cert, truth, error_norms,
                                  x_err_prev_sq=0.0):
    """Certificate-scaled statistic update (oracle mode).

    Injects, for every receiver ``k`` and each of its in-neighbors,

        max(gamma1, gamma2, gamma3 * x_err_prev_sq)
            * (w_sq_k + a_m * y_sq_k + a_m * x_sq_k) / denom

    smoothed with factor ``zeta``, where the error norms come from
    :func:`initial_error_norms` and ``denom = 1 - mu_y mu_w sigma_max^2``.
    Requires a reference solution; the statistic is relative to the
    optimum and is meaningless without one.
    """
    if truth is None:
        raise ValueError("oracle-dependent weight rule requires GroundTruth")
    z = state.zeta
    scale = max(cert.gamma1, cert.gamma2, cert.gamma3 * float(x_err_prev_sq))
    for k in range(state.topology.n):
        w_sq, y_sq, x_sq = error_norms[k]
        val = scale * (w_sq + cert.a_m * (y_sq + x_sq)) / cert.denom
        for l in state.topology.in_neighbors(k):
            state.chi_sq[l, k] = (1.0 - z) * state.chi_sq[l, k] + z * val
    return state


def dump_weight_history(history, path):
    """Audit CSV of recorded weight matrices: iter, receiver, sender, weight."""
    with open(path, "w", newline="\n") as fh:
        fh.write("iter,receiver,sender,weight\n")
        for i, entries in enumerate(history):
            senders, receivers = np.nonzero(entries)
            for l, k in zip(senders, receivers):
                fh.write(f"{i},{k},{l},{repr(float(entries[l, k]))}\n")
    return path
