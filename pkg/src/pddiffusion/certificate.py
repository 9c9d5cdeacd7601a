"""Linear-rate certificates, optimality residuals and the analysis oracle.

The certificate machinery mirrors the convergence statement for the
primal-dual diffusion recursion on symmetric doubly stochastic weights:
step bounds ``mu_w <= 1/(2 delta)`` (inclusive) and
``mu_y < nu / (2 sigma_max(C_d)^2)`` (strict), and the contraction factor

    gamma = max(gamma1, gamma2, gamma3)

with

    gamma1 = (1 - mu_w nu (1 - mu_w delta)) / (1 - mu_y mu_w sigma_max(C_d)^2)
    gamma2 = 1 - mu_w mu_y lambda_min(C_d C_d')
    gamma3 = sigma_lower(A)^2   (smallest non-zero singular value, squared)

``gamma3`` uses the constant spectral factor; the iterate-dependent factor
it stands in for is exercised separately by :func:`error_recursion_check`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .problem import prox_conjugate, pair_residuals
from .topology import spectral_summary, SV_ZERO_RTOL


def stepsize_bounds(delta, nu, sigma_max_cd):
    """Certified step bounds ``(1/(2 delta), nu/(2 sigma_max^2))``.

    The primal bound is inclusive, the dual bound strict.
    """
    if delta <= 0:
        raise ValueError(f"delta must be positive, got {delta}")
    if nu <= 0:
        raise ValueError(f"nu must be positive, got {nu}")
    if sigma_max_cd <= 0:
        raise ValueError(f"sigma_max(C_d) must be positive, got {sigma_max_cd}")
    return 1.0 / (2.0 * delta), nu / (2.0 * sigma_max_cd ** 2)


def _steps_pair(steps):
    if hasattr(steps, "mu_w"):
        return float(steps.mu_w), float(steps.mu_y)
    mu_w, mu_y = steps
    return float(mu_w), float(mu_y)


@dataclass(frozen=True)
class RateCertificate:
    mu_w: float
    mu_y: float
    mu_w_max: float
    mu_y_max: float
    gamma1: float
    gamma2: float
    gamma3: float
    gamma: float
    full_row_rank_coupling: bool
    verdict: str
    violations: tuple = ()
    a_m: float = 0.0
    denom: float = 1.0   # 1 - mu_y mu_w sigma_max(C_d)^2
    c_o: float = math.nan


def rate_gamma(steps, delta, nu, coupling_summary, a_summary):
    """Evaluate the contraction certificate for given steps and spectra.

    Parameters
    ----------
    steps : StepSizes or (mu_w, mu_y)
        Nonnegative steps; zero is allowed here for formula checks.
    delta, nu : float
        Extreme eigenvalues of the local Hessians.
    coupling_summary : SpectralSummary
        Of the block-diagonal coupling ``C_d``.
    a_summary : SpectralSummary
        Of the combination matrix.

    Returns
    -------
    RateCertificate
        ``verdict`` is ``certified`` only when the steps respect both
        bounds, the coupling has full row rank and every gamma component
        is below one; otherwise each violated inequality is named in
        ``violations``.
    """
    mu_w, mu_y = _steps_pair(steps)
    mu_w_max, mu_y_max = stepsize_bounds(delta, nu, coupling_summary.sigma_max)
    sig2 = coupling_summary.sigma_max ** 2
    lam_min = coupling_summary.lambda_min_gram
    violations = []

    if mu_w > mu_w_max:
        violations.append(f"mu_w > 1/(2 delta) = {mu_w_max:.6g}")
    if mu_y >= mu_y_max:
        violations.append(f"mu_y >= nu/(2 sigma_max(C_d)^2) = {mu_y_max:.6g}")

    denom = 1.0 - mu_y * mu_w * sig2
    if denom <= 0:
        violations.append("1 - mu_y mu_w sigma_max(C_d)^2 <= 0")
        gamma1 = math.inf
    else:
        gamma1 = (1.0 - mu_w * nu * (1.0 - mu_w * delta)) / denom
    gamma2 = 1.0 - mu_w * mu_y * lam_min
    gamma3 = a_summary.sigma_min_nonzero ** 2
    gamma = max(gamma1, gamma2, gamma3)

    frr = lam_min > (SV_ZERO_RTOL * coupling_summary.sigma_max) ** 2
    if not frr:
        violations.append("C_d is not full row rank (lambda_min(C_d C_d') ~ 0)")
    for name, val in (("gamma1", gamma1), ("gamma2", gamma2), ("gamma3", gamma3)):
        if val >= 1.0 and (mu_w, mu_y) != (0.0, 0.0):
            violations.append(f"{name} = {val:.6g} >= 1")

    verdict = "certified" if not violations and gamma < 1.0 else "uncertified"
    return RateCertificate(
        mu_w=mu_w, mu_y=mu_y, mu_w_max=mu_w_max, mu_y_max=mu_y_max,
        gamma1=gamma1, gamma2=gamma2, gamma3=gamma3, gamma=gamma,
        full_row_rank_coupling=frr, verdict=verdict,
        violations=tuple(violations),
        a_m=(mu_w / mu_y) if mu_y > 0 else math.nan,
        denom=denom,
    )


def certify(problem, weights, steps):
    """Certificate for a concrete problem/weights/steps triple.

    On top of :func:`rate_gamma` this checks that the combination matrix
    is symmetric doubly stochastic, which the contraction argument
    assumes; directed (row-stochastic) weights yield an uncertified
    verdict with that reason.
    """
    cd = spectral_summary(problem.coupling.stacked_blockdiag())
    a_sum = spectral_summary(weights.entries)
    cert = rate_gamma(steps, problem.delta, problem.nu, cd, a_sum)
    sym = np.allclose(weights.entries, weights.entries.T, atol=1e-12)
    if weights.stochasticity != "doubly" or not sym:
        viol = cert.violations + (
            "combination matrix is not symmetric doubly stochastic",)
        cert = RateCertificate(
            **{**cert.__dict__, "violations": viol, "verdict": "uncertified"})
    return cert


def c_o_constant(problem, truth, steps, w_init=None, y_init=None):
    """Initial-error constant of the geometric envelope ``gamma^i C_o``.

    Numerator: the coupling-weighted squared primal error, plus
    ``a_m = mu_w/mu_y`` times the weighted dual error and the squared
    splitting error, all at the pre-iteration state (zero init by
    default). Denominator: ``1 - mu_y mu_w sigma_max(C_d)^2``.
    """
    mu_w, mu_y = _steps_pair(steps)
    n, m = problem.n_agents, problem.m_dim
    W0 = np.zeros(problem.q_total) if w_init is None else np.asarray(w_init, float)
    Y0 = np.zeros((n, m)) if y_init is None else np.asarray(y_init, float)

    w_err = W0 - truth.w_star
    y_err = Y0 - np.tile(truth.y_star, (n, 1))
    cw = problem.apply_Cd(truth.w_star)
    x_star = mu_y * (cw.mean(axis=0)[None, :] - cw)
    x_err = -x_star

    mm = mu_y * mu_w
    w_term = float(w_err @ w_err) - mm * float(np.sum(problem.apply_Cd(w_err) ** 2))
    y_term = float(np.sum(y_err ** 2)) - mm * float(
        np.sum(problem.apply_Cd_T(y_err) ** 2))
    x_term = float(np.sum(x_err ** 2))

    sigma = spectral_summary(problem.coupling.stacked_blockdiag()).sigma_max
    denom = 1.0 - mm * sigma ** 2
    if denom <= 0:
        raise ValueError("steps violate 1 - mu_y mu_w sigma_max(C_d)^2 > 0")
    a_m = mu_w / mu_y
    return (w_term + a_m * y_term + a_m * x_term) / denom


# ---------------------------------------------------------------------------
# optimality residuals
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class OptimalityResiduals:
    """First-order residuals of a stacked state (all zero at a saddle)."""

    r_primal: float       # || grad J(W) + C_d' Y ||
    r_dual_null: float    # || D Y ||
    r_prox: float         # fixed-point gap of C_d W + xi in subdiff G*(Y)
    r_pair_grad: float    # aggregate-pair residuals at the de-stacked
    r_pair_prox: float    # (W, mean Y)

    def max(self):
        return max(self.r_primal, self.r_dual_null, self.r_prox,
                   self.r_pair_grad, self.r_pair_prox)


def optimality_residuals(problem, weights, W, Ymat, x_range=None):
    """Residuals of the stationarity conditions at ``(W, Y)``.

    ``x_range`` is the range-space shift that should land
    ``C_d W + x_range`` in the subdifferential of ``G*`` at ``Y``; pass the
    solver's splitting variable divided by ``mu_y`` (zero by default).
    """
    W = np.asarray(W, dtype=float)
    Ymat = np.asarray(Ymat, dtype=float)
    n = problem.n_agents
    r_primal = float(np.linalg.norm(problem.grad_stacked(W)
                                    + problem.apply_Cd_T(Ymat)))
    r_null = float(np.linalg.norm(Ymat - weights.combine(Ymat)))
    xi = np.zeros_like(Ymat) if x_range is None else np.asarray(x_range, float)
    inner = Ymat + problem.apply_Cd(W) + xi
    r_prox = float(np.linalg.norm(Ymat - prox_conjugate(problem.gterm, 1.0 / n, inner)))
    rg, rp = pair_residuals(problem, W, Ymat.mean(axis=0))
    return OptimalityResiduals(r_primal=r_primal, r_dual_null=r_null,
                               r_prox=r_prox, r_pair_grad=rg, r_pair_prox=rp)


def residuals_of_state(problem, weights, state, steps):
    """Residuals at a solver state, scaling its ``X`` into range space."""
    mu_w, mu_y = _steps_pair(steps)
    x_range = getattr(state, "X", None)
    if x_range is not None:
        x_range = x_range / mu_y
    return optimality_residuals(problem, weights, state.W, state.Y, x_range)


# ---------------------------------------------------------------------------
# error-recursion oracle
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ErrorRecursionReport:
    """Per-iteration diagnostics of the squared-norm error chain."""

    identity_gap: np.ndarray = field(repr=False)
    gamma1_slack: np.ndarray = field(repr=False)
    endpoint_slack: np.ndarray = field(repr=False)
    dual_nonexpansive_slack: np.ndarray = field(repr=False)

    def max_identity_gap(self):
        return float(np.max(self.identity_gap))

    def holds(self, tol=1e-8):
        return bool(
            np.all(self.identity_gap <= tol)
            and np.all(self.gamma1_slack >= -tol)
            and np.all(self.endpoint_slack >= -tol)
            and np.all(self.dual_nonexpansive_slack >= -tol)
        )


def error_recursion_check(problem, weights, steps, n_iter=100,
                          w_init=None, y_init=None):
    """Validate the squared-norm error chain on a ``g = zero`` quadratic.

    Iterates the analysis form of the recursion (splitting variable
    entering the ``z`` update through ``D``) and checks, per iteration,

    * the exact energy identity

        ||w~_i||^2_{I - mm C_d'C_d} + a_m ||z~_i||^2_{I-D^2} + a_m ||x~_i||^2
          = a_m ||y~_{i-1}||^2_{I - mm C_d C_d'}
            + a_m ||x~_{i-1}||^2_{I-D^2} + ||q_i||^2

      where ``q_i = w~_{i-1} - mu_w (grad J(W_{i-1}) - grad J(W*))`` and
      ``mm = mu_y mu_w`` (gap should be round-off);

    * the descent bound ``||q_i||^2 <= gamma1 ||w~_{i-1}||^2_{I - mm C_d'C_d}``;

    * the resulting gamma-weighted inequality (endpoint of the chain); and

    * dual nonexpansiveness ``||y~_i|| <= ||A z~_i||``.

    Requires ``g = zero`` (so the dual fixed point is the origin and
    ``grad J(W*)`` is exactly computable), symmetric doubly stochastic
    weights and steps inside the certified bounds.
    """
    if problem.gterm.kind != "zero":
        raise ValueError("the error-recursion oracle requires g = zero")
    if weights.stochasticity != "doubly" or not np.allclose(
            weights.entries, weights.entries.T, atol=1e-12):
        raise ValueError("the oracle requires symmetric doubly stochastic weights")
    mu_w, mu_y = _steps_pair(steps)
    cd_sum = spectral_summary(problem.coupling.stacked_blockdiag())
    a_sum = spectral_summary(weights.entries)
    cert = rate_gamma(steps, problem.delta, problem.nu, cd_sum, a_sum)
    if cert.mu_w > cert.mu_w_max or cert.mu_y >= cert.mu_y_max:
        raise ValueError("steps must respect the certified bounds")
    a_m = mu_w / mu_y
    mm = mu_y * mu_w

    n, m = problem.n_agents, problem.m_dim
    # exact minimizer and the analysis-form fixed point
    W_star = problem.join([np.linalg.solve(c.H, c.b) for c in problem.costs])
    cw = problem.apply_Cd(W_star)
    target = mu_y * (cw.mean(axis=0)[None, :] - cw)   # = D X*, rowwise
    D_small = np.eye(n) - weights.entries.T
    X_star = np.linalg.pinv(D_small) @ target

    def D_op(V):
        return V - weights.combine(V)

    def wnorm_primal(v):
        return float(v @ v) - mm * float(np.sum(problem.apply_Cd(v) ** 2))

    def wnorm_dual(V):
        return float(np.sum(V ** 2)) - mm * float(
            np.sum(problem.apply_Cd_T(V) ** 2))

    def wnorm_ID2(V):
        return float(np.sum(V ** 2)) - float(np.sum(D_op(V) ** 2))

    W = np.zeros(problem.q_total) if w_init is None else np.asarray(w_init, float).copy()
    Y = np.zeros((n, m)) if y_init is None else np.asarray(y_init, float).copy()
    if Y.shape == (m,):
        Y = np.tile(Y, (n, 1))
    X = np.zeros((n, m))

    id_gap, g1_slack, end_slack, ne_slack = [], [], [], []
    w_err_prev = W - W_star
    x_err_prev = X - X_star
    for _ in range(n_iter):
        grad_prev = problem.grad_stacked(W)
        y_err_prev = Y.copy()           # Y* = 0 for g = zero
        W = W - mu_w * (grad_prev + problem.apply_Cd_T(Y))
        Z = Y + mu_y * problem.apply_Cd(W) + D_op(X)
        X = X - D_op(Z)
        Y = np.zeros((n, m))            # prox of the zero function's conjugate

        w_err = W - W_star
        # fixed point: Z* = mu_y * mean-coupling rows (consensual), Y* = 0
        z_err = Z - np.tile(mu_y * cw.mean(axis=0), (n, 1))
        x_err = X - X_star
        q = w_err_prev - mu_w * (grad_prev - problem.grad_stacked(W_star))

        lhs = wnorm_primal(w_err) + a_m * (wnorm_ID2(z_err)
                                           + float(np.sum(x_err ** 2)))
        rhs = (a_m * wnorm_dual(y_err_prev) + a_m * wnorm_ID2(x_err_prev)
               + float(q @ q))
        id_gap.append(abs(lhs - rhs))
        g1_bound = cert.gamma1 * wnorm_primal(w_err_prev)
        g1_slack.append(g1_bound - float(q @ q))
        endpoint = (g1_bound + a_m * cert.gamma2 * float(np.sum(y_err_prev ** 2))
                    + a_m * wnorm_ID2(x_err_prev))
        end_slack.append(endpoint - lhs)
        az = z_err - D_op(z_err)                 # A z~_i
        ne_slack.append(float(np.linalg.norm(az)) - float(np.linalg.norm(Y)))
        w_err_prev, x_err_prev = w_err, x_err

    return ErrorRecursionReport(
        identity_gap=np.array(id_gap),
        gamma1_slack=np.array(g1_slack),
        endpoint_slack=np.array(end_slack),
        dual_nonexpansive_slack=np.array(ne_slack),
    )
