"""Primal-dual diffusion engines for sharing-form composite problems.

Three interchangeable steppers drive the same recursion and are kept in
lockstep for cross-validation:

* :func:`pdd_step` -- the per-agent form. Agent ``k`` holds
  ``(w_k, y_k, psi_k, z_k, phi_k, x_k)`` and performs

      w_k <- w_k - mu_w (grad J_k(w_k) + C_k' y_k)
      psi_k <- y_k + mu_y C_k w_k
      z_k <- phi_k + psi_k - psi_k_prev
      phi_k <- sum_{l in N_k} a[l, k] z_l        (one synchronous round)
      y_k <- prox of (mu_y / N) g* at phi_k

  with ``phi_k(-1) = psi_k(-1) = 0``.

* :func:`network_step` -- the stacked form over the whole network,

      W_i = W_{i-1} - mu_w grad J(W_{i-1}) - mu_w C_d' Y_{i-1}
      Z_i = Y_{i-1} + mu_y C_d W_i + X_{i-1}
      X_i = X_{i-1} - D Z_i,   D = I - A  (so X stays in range(D))
      Y_i = prox of mu_y G* at A Z_i

  with ``X_{-1} = 0``. Substituting ``x_k = phi_k - psi_k`` recovers the
  per-agent form exactly, so the two engines agree to round-off.

* :func:`tracking_step` -- the dual-history elimination

      Phi_i = A (Phi_{i-1} + Y_{i-1} - Y_{i-2} + mu_y C_d (W_i - W_{i-1}))

  buffering exactly two past dual iterates (initialized to zero) instead
  of carrying ``X``.

The dual prox uses the scaled parameter ``mu_y / N`` per agent because the
stacked conjugate term is the average ``G*(Y) = (1/N) sum_k g*(y_k)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .problem import prox_conjugate
from .metrics import RunTrace

DIVERGENCE_FACTOR = 1e6


class DivergenceError(RuntimeError):
    """Raised when iterates blow up; carries the partial trace."""

    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = trace


@dataclass(frozen=True)
class StepSizes:
    mu_w: float
    mu_y: float

    def __post_init__(self):
        if self.mu_w <= 0 or self.mu_y <= 0:
            raise ValueError(f"step sizes must be positive, got {self}")

    @property
    def a_m(self):
        """Energy-weighting ratio ``mu_w / mu_y`` used by the rate analysis."""
        return self.mu_w / self.mu_y


def default_steps(problem, safety=0.9):
    """Step sizes at ``safety`` times the certified bounds."""
    from .certificate import stepsize_bounds
    from .topology import spectral_summary

    sigma = spectral_summary(problem.coupling.stacked_blockdiag()).sigma_max
    mu_w_max, mu_y_max = stepsize_bounds(problem.delta, problem.nu, sigma)
    return StepSizes(mu_w=safety * mu_w_max, mu_y=safety * mu_y_max)


def tune_steps(problem, topology, weights=None, horizon=200, max_halvings=30):
    """Halve ``mu_w`` from ``1/delta`` until a probe run stays bounded.

    The dual step stays at 0.9 times its certified bound; only the primal
    step is probed, starting at twice its bound (the same aggressive start
    the baseline tuner uses). Returns ``(StepSizes, halvings)``.
    """
    base = default_steps(problem)
    mu_w = 2.0 * base.mu_w / 0.9
    for halvings in range(max_halvings):
        steps = StepSizes(mu_w=mu_w, mu_y=base.mu_y)
        try:
            run(problem, topology, steps=steps, weights=weights,
                max_iter=horizon)
        except DivergenceError:
            mu_w *= 0.5
            continue
        return steps, halvings
    raise RuntimeError(f"no stable primal step found after {max_halvings} "
                       "halvings from 1/delta")


# ---------------------------------------------------------------------------
# states
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class AgentState:
    """One agent's variables; ``psi``/``phi`` are the last exchanged pair."""

    w: np.ndarray = field(repr=False)
    y: np.ndarray = field(repr=False)
    psi: np.ndarray = field(repr=False)
    z: np.ndarray = field(repr=False)
    phi: np.ndarray = field(repr=False)
    x: np.ndarray = field(repr=False)


@dataclass(frozen=True)
class NetworkState:
    """Stacked variables: ``W`` is the length-Q primal, the rest ``(N, m)``."""

    W: np.ndarray = field(repr=False)
    Y: np.ndarray = field(repr=False)
    Z: np.ndarray = field(repr=False)
    X: np.ndarray = field(repr=False)
    Phi: np.ndarray = field(repr=False)
    Psi: np.ndarray = field(repr=False)


@dataclass(frozen=True)
class TrackingState:
    """Dual-history form: current ``(W, Y)`` plus ``Y_prev`` and ``Phi``."""

    W: np.ndarray = field(repr=False)
    Y: np.ndarray = field(repr=False)
    Y_prev: np.ndarray = field(repr=False)
    Phi: np.ndarray = field(repr=False)


def _dual_init(problem, y_init):
    n, m = problem.n_agents, problem.m_dim
    if y_init is None:
        return np.zeros((n, m))
    y = np.asarray(y_init, dtype=float)
    if y.shape == (m,):
        return np.tile(y, (n, 1))
    if y.shape == (n, m):
        return y.copy()
    raise ValueError(f"y_init must have shape ({m},) or ({n}, {m}), got {y.shape}")

def _primal_init(problem, w_init):
    if w_init is None:
        return np.zeros(problem.q_total)
    w = np.asarray(w_init, dtype=float).ravel()
    if w.shape[0] != problem.q_total:
        raise ValueError(f"w_init has length {w.shape[0]}, expected {problem.q_total}")
    return w.copy()

def _check_x_init(x_init):
    if x_init is not None and np.any(np.asarray(x_init) != 0):
        raise ValueError("the splitting variable x must initialize at zero")


def init_state(problem, w_init=None, y_init=None, x_init=None):
    """Per-agent states with zeroed exchange history (``x_k = 0``)."""
    _check_x_init(x_init)
    W = _primal_init(problem, w_init)
    Y = _dual_init(problem, y_init)
    m = problem.m_dim
    zeros = lambda: np.zeros(m)
    return [
        AgentState(w=problem.block(W, k).copy(), y=Y[k].copy(),
                   psi=zeros(), z=zeros(), phi=zeros(), x=zeros())
        for k in range(problem.n_agents)
    ]


def init_network_state(problem, w_init=None, y_init=None, x_init=None):
    _check_x_init(x_init)
    n, m = problem.n_agents, problem.m_dim
    return NetworkState(
        W=_primal_init(problem, w_init),
        Y=_dual_init(problem, y_init),
        Z=np.zeros((n, m)), X=np.zeros((n, m)),
        Phi=np.zeros((n, m)), Psi=np.zeros((n, m)),
    )


def init_tracking_state(problem, steps, w_init=None, y_init=None):
    """Tracking state; ``Phi`` seeds at ``mu_y C_d W_{-1}`` so the first
    combined value matches the other engines for any primal init."""
    W = _primal_init(problem, w_init)
    return TrackingState(
        W=W,
        Y=_dual_init(problem, y_init),
        Y_prev=np.zeros((problem.n_agents, problem.m_dim)),
        Phi=steps.mu_y * problem.apply_Cd(W),
    )


# ---------------------------------------------------------------------------
# steppers
# ---------------------------------------------------------------------------

def pdd_step(states, problem, weights, steps, iteration=None):
    """One synchronous per-agent round; returns the new list of states.

    Phase one is embarrassingly parallel (each agent touches only its own
    variables); the single communication exchanges the ``z`` vectors, after
    which phase two is again per-agent. Results therefore do not depend on
    the order agents are visited in.
    """
    n = problem.n_agents
    mu_w, mu_y = steps.mu_w, steps.mu_y
    where = f" at iteration {iteration}" if iteration is not None else ""

    new_w, new_psi, new_z = [], [], []
    for k, st in enumerate(states):
        C_k = problem.coupling.mats[k]
        w = st.w - mu_w * (problem.costs[k].grad(st.w) + C_k.T @ st.y)
        psi = st.y + mu_y * (C_k @ w)
        z = st.phi + psi - st.psi
        if not (np.all(np.isfinite(w)) and np.all(np.isfinite(z))):
            raise DivergenceError(f"non-finite iterate at agent {k}{where}")
        new_w.append(w)
        new_psi.append(psi)
        new_z.append(z)

    zmat = np.stack(new_z)
    phimat = weights.combine(zmat)
    out = []
    for k in range(n):
        phi = phimat[k]
        y = prox_conjugate(problem.gterm, mu_y / n, phi)
        out.append(AgentState(w=new_w[k], y=y, psi=new_psi[k],
                              z=new_z[k], phi=phi, x=phi - new_psi[k]))
    return out


def network_step(state, problem, weights, steps, iteration=None):
    """One step of the stacked recursion (identical to :func:`pdd_step`)."""
    mu_w, mu_y = steps.mu_w, steps.mu_y
    W = state.W - mu_w * (problem.grad_stacked(state.W)
                          + problem.apply_Cd_T(state.Y))
    Psi = state.Y + mu_y * problem.apply_Cd(W)
    Z = Psi + state.X
    Phi = weights.combine(Z)
    X = state.X - (Z - Phi)          # X - D Z with D = I - A
    Y = prox_conjugate(problem.gterm, mu_y / problem.n_agents, Phi)
    if not (np.all(np.isfinite(W)) and np.all(np.isfinite(Z))):
        where = f" at iteration {iteration}" if iteration is not None else ""
        bad = [k for k in range(problem.n_agents)
               if not np.all(np.isfinite(problem.block(W, k)))]
        agent = bad[0] if bad else int(np.argmax(~np.isfinite(Z).all(axis=1)))
        raise DivergenceError(f"non-finite iterate at agent {agent}{where}")
    return NetworkState(W=W, Y=Y, Z=Z, X=X, Phi=Phi, Psi=Psi)


def tracking_step(state, problem, weights, steps, iteration=None):
    """One step of the dual-history form (no ``X``, two buffered duals)."""
    mu_w, mu_y = steps.mu_w, steps.mu_y
    W = state.W - mu_w * (problem.grad_stacked(state.W)
                          + problem.apply_Cd_T(state.Y))
    inner = (state.Phi + state.Y - state.Y_prev
             + mu_y * (problem.apply_Cd(W) - problem.apply_Cd(state.W)))
    Phi = weights.combine(inner)
    Y = prox_conjugate(problem.gterm, mu_y / problem.n_agents, Phi)
    if not (np.all(np.isfinite(W)) and np.all(np.isfinite(Phi))):
        where = f" at iteration {iteration}" if iteration is not None else ""
        raise DivergenceError(f"non-finite iterate{where}")
    return TrackingState(W=W, Y=Y, Y_prev=state.Y, Phi=Phi)


def agent_states_to_network(states, problem):
    """Assemble a :class:`NetworkState` from per-agent states."""
    return NetworkState(
        W=problem.join([st.w for st in states]),
        Y=np.stack([st.y for st in states]),
        Z=np.stack([st.z for st in states]),
        X=np.stack([st.x for st in states]),
        Phi=np.stack([st.phi for st in states]),
        Psi=np.stack([st.psi for st in states]),
    )


# ---------------------------------------------------------------------------
# stationary states from a centralized solution
# ---------------------------------------------------------------------------

def stationary_network_state(problem, truth, steps):
    """The fixed point of the recursion induced by a saddle point.

    Duals agree across agents (``Y* = 1 (x) y*``) and the splitting
    variable absorbs each agent's deviation from the average coupling,
    ``x_k* = mu_y (Cbar - C_k w_k*)`` with ``Cbar = (1/N) sum C_l w_l*``,
    which makes ``Z*`` consensual and sums to zero across agents.
    """
    W = np.asarray(truth.w_star, dtype=float).copy()
    n = problem.n_agents
    Y = np.tile(np.asarray(truth.y_star, dtype=float), (n, 1))
    cw = problem.apply_Cd(W)
    cbar = cw.mean(axis=0)
    X = steps.mu_y * (cbar[None, :] - cw)
    Psi = Y + steps.mu_y * cw
    Z = Psi + X
    return NetworkState(W=W, Y=Y, Z=Z, X=X, Phi=Z.copy(), Psi=Psi)


def stationary_agent_states(problem, truth, steps):
    net = stationary_network_state(problem, truth, steps)
    return [
        AgentState(w=problem.block(net.W, k).copy(), y=net.Y[k].copy(),
                   psi=net.Psi[k].copy(), z=net.Z[k].copy(),
                   phi=net.Phi[k].copy(), x=net.X[k].copy())
        for k in range(problem.n_agents)
    ]


# ---------------------------------------------------------------------------
# the driver
# ---------------------------------------------------------------------------

def _trace_metrics(problem, state, truth):
    if truth is not None:
        sq = float(np.sum((state.W - truth.w_star) ** 2))
    else:
        sq = math.nan
    ybar = state.Y.mean(axis=0)
    dual_cons = float(np.max(np.linalg.norm(state.Y - ybar, axis=1)))
    grad_res = float(np.linalg.norm(problem.grad_stacked(state.W)
                                    + problem.apply_Cd_T(state.Y)))
    return sq, dual_cons, grad_res


def run(problem, topology, policy="static", steps=None, weights=None,
        max_iter=500, tol=None, ground_truth=None, w_init=None, y_init=None,
        zeta=0.1, engine="network", record_weights=False, metadata=None):
    """Drive the recursion and collect a :class:`~pddiffusion.metrics.RunTrace`.

    Parameters
    ----------
    problem : SharingProblem
    topology : DirectedTopology
    policy : str
        ``static`` uses fixed combination weights (Metropolis by default);
        ``adaptive`` rebuilds them every iteration from the smoothed
        inverse-quality statistics (see :mod:`pddiffusion.adaptive_weights`).
    steps : StepSizes, optional
        Defaults to 0.9 times the certified bounds.
    weights : CombinationMatrix, optional
        Static weights; ignored under the adaptive policy.
    max_iter : int
    tol : float, optional
        Stop once the squared error ``||W - W*||^2`` falls to ``tol``
        (requires ``ground_truth``). Checked before each step, so an
        already-satisfied tolerance returns an empty trace carrying the
        initial error.
    ground_truth : GroundTruth, optional
    engine : str
        ``network`` (default) or ``tracking``; both produce the same
        iterates.
    record_weights : bool
        Keep each iteration's weight matrix in ``trace.weight_history``.

    Returns
    -------
    (RunTrace, state)

    Raises
    ------
    DivergenceError
        When an iterate goes non-finite or the error grows by more than
        a factor of 1e6 over its initial value; the partial trace rides
        on the exception.
    """
    from .topology import metropolis_weights
    from .adaptive_weights import init_weight_state, update_filter, compute_weights

    if policy not in ("static", "adaptive"):
        raise ValueError(f"unknown weights policy {policy!r}")
    if engine not in ("network", "tracking"):
        raise ValueError(f"unknown engine {engine!r}")
    if topology.n != problem.n_agents:
        raise ValueError(
            f"topology has {topology.n} nodes, problem has {problem.n_agents} agents"
        )
    if steps is None:
        steps = default_steps(problem)
    if weights is None:
        weights = metropolis_weights(topology)
    weights.validate(topology)

    if engine == "network":
        state = init_network_state(problem, w_init, y_init)
        stepper = network_step
    else:
        state = init_tracking_state(problem, steps, w_init, y_init)
        stepper = tracking_step

    wstate = init_weight_state(topology, zeta=zeta) if policy == "adaptive" else None

    def err_of(st):
        if ground_truth is not None:
            return float(np.sum((st.W - ground_truth.w_star) ** 2))
        return float(np.sum(st.W ** 2) + np.sum(st.Y ** 2))

    initial_sq = err_of(state)
    guard = initial_sq if initial_sq > 0 else 1.0

    rows = {key: [] for key in
            ("iter", "sq_error", "dual_consensus_residual", "grad_residual")}
    dual_sq = []
    weight_history = [] if record_weights else None

    meta = {"policy": policy, "engine": engine, "n_agents": problem.n_agents,
            "mu_w": steps.mu_w, "mu_y": steps.mu_y}
    if metadata:
        meta.update(metadata)

    def build_trace():
        nrows = len(rows["iter"])
        return RunTrace(
            iters=np.array(rows["iter"], dtype=int),
            sq_error=np.array(rows["sq_error"], dtype=float),
            dual_consensus_residual=np.array(rows["dual_consensus_residual"], dtype=float),
            grad_residual=np.array(rows["grad_residual"], dtype=float),
            mu_w=np.full(nrows, steps.mu_w),
            mu_y=np.full(nrows, steps.mu_y),
            weights_policy=[policy] * nrows,
            metadata=meta,
            initial_sq_error=initial_sq if ground_truth is not None else math.nan,
            dual_sq_error=np.array(dual_sq, dtype=float) if ground_truth is not None else None,
            weight_history=weight_history,
        )

    for i in range(max_iter):
        if tol is not None and ground_truth is not None and err_of(state) <= tol:
            break
        if policy == "adaptive":
            for k in range(problem.n_agents):
                wstate = update_filter(wstate, k, problem.block(state.W, k))
            weights = compute_weights(wstate, topology)
        if record_weights:
            weight_history.append(weights.entries.copy())
        try:
            state = stepper(state, problem, weights, steps, iteration=i)
        except DivergenceError as exc:
            exc.trace = build_trace()
            raise
        sq, cons, gres = _trace_metrics(problem, state, ground_truth)
        rows["iter"].append(i)
        rows["sq_error"].append(sq)
        rows["dual_consensus_residual"].append(cons)
        rows["grad_residual"].append(gres)
        if ground_truth is not None:
            ystar = np.tile(ground_truth.y_star, (problem.n_agents, 1))
            dual_sq.append(float(np.sum((state.Y - ystar) ** 2)))
        if err_of(state) > DIVERGENCE_FACTOR * guard:
            raise DivergenceError(
                f"squared error grew past {DIVERGENCE_FACTOR:g} times its "
                f"initial value at iteration {i}", trace=build_trace())

    return build_trace(), state
