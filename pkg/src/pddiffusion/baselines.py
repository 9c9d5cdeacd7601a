"""Consensus baselines: EXTRA (with proximal variant) and DIGing, ATC form.

Both solve the consensus cast

    min_x  sum_k J_k(x) + sum_k r(x),     r = the instance's g term,

so they require instances whose blocks all share one dimension; the
coupling matrices are ignored. EXTRA accumulates the half-iterate

    s_0 = W x_0 - alpha grad(x_0)
    s_{t+1} = s_t + W x_{t+1} - Wt x_t - alpha (grad(x_{t+1}) - grad(x_t))
    x_{t+1} = prox_{alpha r}(s_t),        Wt = (I + W)/2,

which for r = 0 collapses to the familiar two-step recursion
``x_{t+2} = (I+W) x_{t+1} - Wt x_t - alpha (grad(x_{t+1}) - grad(x_t))``.
DIGing tracks the average gradient,

    x_{t+1} = W (x_t - alpha y_t)
    y_{t+1} = W (y_t + grad(x_{t+1}) - grad(x_t)),   y_0 = grad(x_0),

and only handles smooth instances. Both need symmetric doubly
stochastic weights.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .metrics import RunTrace
from .problem import (CouplingMatrices, LocalCost, NonSmoothTerm,
                      SharingProblem, prox_g, solve_centralized)
from .solver import DIVERGENCE_FACTOR, DivergenceError
from .topology import metropolis_weights

BASELINE_METHODS = ("extra", "diging-atc")

_TUNE_HORIZON = 200
_MAX_HALVINGS = 30


@dataclass(frozen=True)
class BaselineConfig:
    """Method, step size and (symmetric doubly stochastic) weights."""

    method: str
    alpha: float
    weights: object = field(repr=False)

    def __post_init__(self):
        if self.method not in BASELINE_METHODS:
            raise ValueError(f"unknown baseline method {self.method!r}")
        if not self.alpha > 0:
            raise ValueError(f"alpha must be positive, got {self.alpha}")
        a = self.weights.entries
        if self.weights.stochasticity != "doubly" or not np.allclose(
                a, a.T, atol=1e-12):
            raise ValueError(
                f"{self.method} requires symmetric doubly stochastic weights")

    @property
    def w_tilde(self):
        return 0.5 * (np.eye(self.weights.n) + self.weights.entries)


def _consensus_dim(problem):
    sizes = set(problem.q_sizes)
    if len(sizes) != 1:
        raise ValueError(
            "baselines need a consensus-form instance (equal block sizes), "
            f"got sizes {sorted(sizes)}")
    return problem.q_sizes[0]


def consensus_truth(problem, tol=1e-12):
    """Reference solution of the consensus cast of ``problem``.

    Collapses the network into one agent: summed quadratics, identity
    coupling, and the non-smooth term scaled by the number of agents
    (every agent applies its own copy). Solved by the centralized
    routine; the returned ``w_star`` is the consensus point.
    """
    p = _consensus_dim(problem)
    H = np.sum([c.H for c in problem.costs], axis=0)
    b = np.sum([c.b for c in problem.costs], axis=0)
    g = problem.gterm
    if g.kind == "l1":
        g = NonSmoothTerm(kind="l1", lam=g.lam * problem.n_agents)
    collapsed = SharingProblem(
        costs=(LocalCost(H=H, b=b),),
        coupling=CouplingMatrices((np.eye(p),)),
        gterm=g,
    )
    return solve_centralized(collapsed, tol=tol)


def _x_star_of(ground_truth, n, p):
    if ground_truth is None:
        return None
    x = getattr(ground_truth, "w_star", ground_truth)
    x = np.asarray(x, dtype=float)
    if x.shape != (p,):
        raise ValueError(f"consensus reference must have shape ({p},), got {x.shape}")
    return np.tile(x, (n, 1))


def _grad_rows(problem, X):
    return np.vstack([problem.costs[k].grad(X[k]) for k in range(X.shape[0])])


def _trace_row(problem, X, x_ref, alpha):
    if x_ref is None:
        sq = math.nan
    else:
        sq = float(np.sum((X - x_ref) ** 2))
    xbar = X.mean(axis=0)
    cons = float(np.max(np.linalg.norm(X - xbar, axis=1)))
    g_sum = np.sum([c.grad(xbar) for c in problem.costs], axis=0)
    gterm = problem.gterm
    if gterm.kind == "l1":
        step = prox_g(NonSmoothTerm(kind="l1", lam=gterm.lam * problem.n_agents),
                      alpha, xbar - alpha * g_sum)
    else:
        step = xbar - alpha * g_sum
    grad_res = float(np.linalg.norm(xbar - step) / alpha)
    return sq, cons, grad_res


def _run_loop(method, problem, topology, alpha, max_iter, ground_truth,
              weights, x_init, collect):
    n = topology.n
    p = _consensus_dim(problem)
    if weights is None:
        weights = metropolis_weights(topology)
    config = BaselineConfig(method=method, alpha=alpha, weights=weights)
    W = weights.entries.T            # symmetric, but keep the convention
    Wt = config.w_tilde
    x_ref = _x_star_of(ground_truth, n, p)

    X = np.zeros((n, p)) if x_init is None else np.array(x_init, dtype=float)
    if X.shape != (n, p):
        raise ValueError(f"x_init must have shape ({n}, {p})")

    rows = []
    guard = None

    def record(X):
        nonlocal guard
        sq, cons, gres = _trace_row(problem, X, x_ref, alpha)
        err = sq if x_ref is not None else float(np.sum(X ** 2))
        if guard is None:
            guard = max(err, 1.0)
        rows.append((len(rows), sq, cons, gres))
        if not np.all(np.isfinite(X)) or err > DIVERGENCE_FACTOR * guard:
            raise DivergenceError(f"{method} diverged at iteration {len(rows) - 1}")

    state = collect["init"](problem, X, W, Wt, alpha)
    try:
        for _ in range(max_iter):
            X, state = collect["step"](problem, X, state, W, Wt, alpha)
            record(X)
    except DivergenceError as exc:
        exc.trace = _build_trace(rows, alpha, method, problem, extra_meta=collect.get("meta"))
        raise

    trace = _build_trace(rows, alpha, method, problem, extra_meta=collect.get("meta"))
    return trace, X


def _build_trace(rows, alpha, method, problem, extra_meta=None):
    arr = np.array(rows, dtype=float) if rows else np.zeros((0, 4))
    meta = {"method": method, "alpha": alpha, "n_agents": problem.n_agents}
    if extra_meta:
        meta.update(extra_meta)
    n = arr.shape[0]
    return RunTrace(
        iters=arr[:, 0].astype(int),
        sq_error=arr[:, 1],
        dual_consensus_residual=arr[:, 2],
        grad_residual=arr[:, 3],
        mu_w=np.full(n, alpha),
        mu_y=np.full(n, math.nan),
        weights_policy=[method] * n,
        metadata=meta,
        initial_sq_error=float(arr[0, 1]) if n else math.nan,
    )


def _extra_init(problem, X, W, Wt, alpha):
    return None   # (half_iterate, prev_x, prev_grad) created on first step


def _extra_step(problem, X, state, W, Wt, alpha):
    gterm = problem.gterm
    if state is None:
        grad = _grad_rows(problem, X)
        half = W @ X - alpha * grad
        X_new = np.vstack([prox_g(gterm, alpha, half[k]) for k in range(X.shape[0])]) \
            if gterm.kind != "zero" else half
        return X_new, (half, X, grad)
    half, X_prev, grad_prev = state
    grad = _grad_rows(problem, X)
    half = half + W @ X - Wt @ X_prev - alpha * (grad - grad_prev)
    X_new = np.vstack([prox_g(gterm, alpha, half[k]) for k in range(X.shape[0])]) \
        if gterm.kind != "zero" else half
    return X_new, (half, X, grad)


def _diging_init(problem, X, W, Wt, alpha):
    grad = _grad_rows(problem, X)
    return (grad.copy(), grad)      # (tracker y, last gradient)


def _diging_step(problem, X, state, W, Wt, alpha):
    y, grad_prev = state
    X_new = W @ (X - alpha * y)
    grad = _grad_rows(problem, X_new)
    y_new = W @ (y + grad - grad_prev)
    return X_new, (y_new, grad)


def extra_run(problem, topology, alpha=None, max_iter=1000, ground_truth=None,
              weights=None, x_init=None):
    """EXTRA / proximal-EXTRA on the consensus cast of ``problem``.

    Returns ``(trace, x_stack)``. With ``alpha=None`` the step is tuned
    by halving from ``1/delta`` until a probe run stays bounded; the
    chosen step and the number of halvings land in the trace metadata.
    """
    collect = {"init": _extra_init, "step": _extra_step}
    if alpha is None:
        alpha, halvings = tune_alpha("extra", problem, topology,
                                     weights=weights, x_init=x_init)
        collect["meta"] = {"alpha_halvings": halvings}
    return _run_loop("extra", problem, topology, alpha, max_iter,
                     ground_truth, weights, x_init, collect)


def diging_run(problem, topology, alpha=None, max_iter=1000, ground_truth=None,
               weights=None, x_init=None):
    """DIGing (adapt-then-combine gradient tracking); smooth instances only."""
    if problem.gterm.kind != "zero":
        raise ValueError("diging-atc requires a smooth instance (g = zero)")
    collect = {"init": _diging_init, "step": _diging_step}
    if alpha is None:
        alpha, halvings = tune_alpha("diging-atc", problem, topology,
                                     weights=weights, x_init=x_init)
        collect["meta"] = {"alpha_halvings": halvings}
    return _run_loop("diging-atc", problem, topology, alpha, max_iter,
                     ground_truth, weights, x_init, collect)


def tune_alpha(method, problem, topology, weights=None, x_init=None,
               horizon=_TUNE_HORIZON):
    """Halve the step from ``1/delta`` until a probe run stays bounded."""
    runner = {"extra": extra_run, "diging-atc": diging_run}[method]
    alpha = 1.0 / problem.delta
    for halvings in range(_MAX_HALVINGS):
        try:
            runner(problem, topology, alpha=alpha, max_iter=horizon,
                   weights=weights, x_init=x_init)
        except DivergenceError:
            alpha *= 0.5
            continue
        return alpha, halvings
    raise RuntimeError(f"no stable step found for {method} after "
                       f"{_MAX_HALVINGS} halvings from 1/delta")
