"""Sharing-form composite problems and their centralized ground truth.

The network of ``N`` agents minimizes

    sum_k J_k(w_k) + g(sum_k C_k w_k)

where each ``J_k`` is a strongly convex quadratic held by agent ``k``,
``C_k`` maps agent ``k``'s block into the shared M-dimensional space and
``g`` is a closed convex non-smooth term (``l1`` or ``zero``).
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, field

import numpy as np

_SYM_TOL = 1e-10


# ---------------------------------------------------------------------------
# local costs and the non-smooth term
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class LocalCost:
    """Quadratic ``J(w) = 0.5 w'Hw - b'w`` with ``H`` symmetric PSD."""

    H: np.ndarray = field(repr=False)
    b: np.ndarray = field(repr=False)

    def __post_init__(self):
        H = np.asarray(self.H, dtype=float)
        b = np.asarray(self.b, dtype=float).ravel()
        object.__setattr__(self, "H", H)
        object.__setattr__(self, "b", b)
        if H.ndim != 2 or H.shape[0] != H.shape[1]:
            raise ValueError(f"H must be square, got shape {H.shape}")
        if b.shape[0] != H.shape[0]:
            raise ValueError(f"b has length {b.shape[0]}, H is {H.shape[0]}x{H.shape[0]}")
        scale = max(1.0, float(np.abs(H).max()))
        if np.abs(H - H.T).max() > _SYM_TOL * scale:
            raise ValueError("H is not symmetric")

    @property
    def dim(self):
        return self.H.shape[0]

    @classmethod
    def from_least_squares(cls, M, y, ridge=0.0):
        """Cost ``0.5 ||y - M w||^2 + 0.5 ridge ||w||^2`` in (H, b) form."""
        M = np.asarray(M, dtype=float)
        y = np.asarray(y, dtype=float).ravel()
        H = M.T @ M + ridge * np.eye(M.shape[1])
        return cls(H=H, b=M.T @ y)

    def grad(self, w):
        return self.H @ w - self.b

    def value(self, w):
        return 0.5 * float(w @ (self.H @ w)) - float(self.b @ w)


def grad_local(cost, w):
    """Gradient of one agent's quadratic at ``w``."""
    w = np.asarray(w, dtype=float)
    if w.shape != (cost.dim,):
        raise ValueError(f"w has shape {w.shape}, cost dimension is {cost.dim}")
    return cost.grad(w)


@dataclass(frozen=True)
class NonSmoothTerm:
    """The coupling term ``g``: ``l1`` with weight ``lam``, ``zero``, or
    ``indicator-zero`` (the indicator of the origin, pinning the aggregate
    to ``sum_k C_k w_k = 0``)."""

    kind: str
    lam: float = 0.0

    def __post_init__(self):
        if self.kind not in ("l1", "zero", "indicator-zero"):
            raise ValueError(f"unknown non-smooth kind {self.kind!r}")
        if self.lam < 0:
            raise ValueError(f"l1 weight must be nonnegative, got {self.lam}")

    def value(self, u):
        if self.kind == "l1":
            return self.lam * float(np.abs(u).sum())
        if self.kind == "indicator-zero":
            return 0.0 if not np.any(u) else math.inf
        return 0.0


def prox_g(gterm, mu, v):
    """``argmin_u g(u) + ||v - u||^2 / (2 mu)`` for ``mu > 0``.

    Soft-thresholding for ``l1``; the identity for ``zero``; the zero
    vector for ``indicator-zero``.
    """
    if mu <= 0:
        raise ValueError(f"prox step must be positive, got {mu}")
    v = np.asarray(v, dtype=float)
    if gterm.kind == "l1":
        t = mu * gterm.lam
        return np.sign(v) * np.maximum(np.abs(v) - t, 0.0)
    if gterm.kind == "indicator-zero":
        return np.zeros_like(v)
    return v.copy()


def prox_conjugate(gterm, mu, v):
    """Prox of the convex conjugate ``g*`` via the Moreau decomposition,

        prox_{mu g*}(v) = v - mu * prox_{g/mu}(v / mu).

    For ``l1`` this is the clamp onto ``[-lam, lam]``; for ``zero`` (whose
    conjugate is the indicator of the origin) it returns 0; for
    ``indicator-zero`` (whose conjugate vanishes) it is the identity.
    """
    if mu <= 0:
        raise ValueError(f"prox step must be positive, got {mu}")
    v = np.asarray(v, dtype=float)
    return v - mu * prox_g(gterm, 1.0 / mu, v / mu)


# ---------------------------------------------------------------------------
# the assembled problem
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CouplingMatrices:
    """Per-agent maps ``C_k`` (all ``m x q_k``) into the shared space."""

    mats: tuple = field(repr=False)

    def __post_init__(self):
        mats = tuple(np.asarray(C, dtype=float) for C in self.mats)
        object.__setattr__(self, "mats", mats)
        if not mats:
            raise ValueError("need at least one coupling matrix")
        m = mats[0].shape[0]
        for k, C in enumerate(mats):
            if C.ndim != 2:
                raise ValueError(f"C_{k} must be 2-D, got shape {C.shape}")
            if C.shape[0] != m:
                raise ValueError(f"C_{k} has {C.shape[0]} rows, expected {m}")

    @property
    def m(self):
        return self.mats[0].shape[0]

    @property
    def q_sizes(self):
        return tuple(C.shape[1] for C in self.mats)

    def stacked_wide(self):
        """The wide matrix ``C = [C_1 ... C_N]`` of shape ``(m, sum q_k)``."""
        return np.hstack(self.mats)

    def stacked_blockdiag(self):
        """Block-diagonal ``C_d`` of shape ``(m N, sum q_k)``."""
        n = len(self.mats)
        m = self.m
        q = sum(self.q_sizes)
        Cd = np.zeros((m * n, q))
        col = 0
        for k, C in enumerate(self.mats):
            Cd[k * m:(k + 1) * m, col:col + C.shape[1]] = C
            col += C.shape[1]
        return Cd


class SharingProblem:
    """Container tying local costs, coupling matrices and ``g`` together.

    Exposes the stacked operations the solvers need: gradients of the
    separable smooth part, the block-diagonal coupling ``C_d`` and the wide
    aggregate ``C``. Smoothness/strong-convexity constants ``delta`` and
    ``nu`` are the extreme eigenvalues over the local Hessians (the stacked
    Hessian is block-diagonal, so the extremes over blocks are exact).
    """

    def __init__(self, costs, coupling, gterm, data=None):
        costs = tuple(costs)
        if len(costs) != len(coupling.mats):
            raise ValueError(
                f"{len(costs)} costs but {len(coupling.mats)} coupling matrices"
            )
        for k, (cost, C) in enumerate(zip(costs, coupling.mats)):
            if cost.dim != C.shape[1]:
                raise ValueError(
                    f"agent {k}: cost dimension {cost.dim} vs C_{k} with {C.shape[1]} columns"
                )
        self.costs = costs
        self.coupling = coupling
        self.gterm = gterm
        self.data = data

        eigs = [np.linalg.eigvalsh(c.H) for c in costs]
        self.delta = float(max(e[-1] for e in eigs))
        self.nu = float(min(e[0] for e in eigs))
        if self.nu <= 0:
            raise ValueError(
                f"local Hessians must be positive definite (nu = {self.nu:.3e}); "
                "add a ridge term"
            )

        sizes = self.q_sizes
        self._offsets = np.concatenate([[0], np.cumsum(sizes)])

    @property
    def n_agents(self):
        return len(self.costs)

    @property
    def m_dim(self):
        return self.coupling.m

    @property
    def q_sizes(self):
        return self.coupling.q_sizes

    @property
    def q_total(self):
        return int(self._offsets[-1])

    def block(self, W, k):
        """Agent ``k``'s slice of a stacked primal vector."""
        return W[self._offsets[k]:self._offsets[k + 1]]

    def split(self, W):
        return [self.block(W, k) for k in range(self.n_agents)]

    def join(self, blocks):
        return np.concatenate([np.asarray(b, dtype=float) for b in blocks])

    def grad_stacked(self, W):
        """Gradient of ``sum_k J_k`` at a stacked vector."""
        return np.concatenate(
            [c.grad(self.block(W, k)) for k, c in enumerate(self.costs)]
        )

    def smooth_value(self, W):
        return sum(c.value(self.block(W, k)) for k, c in enumerate(self.costs))

    def objective(self, W):
        """Full composite objective ``J(W) + g(C W)``."""
        return self.smooth_value(W) + self.gterm.value(self.apply_C(W))

    def apply_Cd(self, W):
        """Rows ``C_k w_k`` stacked into an ``(N, m)`` array."""
        return np.stack(
            [C @ self.block(W, k) for k, C in enumerate(self.coupling.mats)]
        )

    def apply_Cd_T(self, Ymat):
        """Adjoint of :meth:`apply_Cd` for an ``(N, m)`` array."""
        return np.concatenate(
            [C.T @ Ymat[k] for k, C in enumerate(self.coupling.mats)]
        )

    def apply_C(self, W):
        """Aggregate ``sum_k C_k w_k``."""
        return self.apply_Cd(W).sum(axis=0)


# ---------------------------------------------------------------------------
# instance generators
# ---------------------------------------------------------------------------

def _as_list(val, n, name):
    if np.isscalar(val):
        return [int(val)] * n
    vals = [int(v) for v in val]
    if len(vals) != n:
        raise ValueError(f"{name} must have one entry per agent ({n}), got {len(vals)}")
    return vals


def make_cs_instance(n_agents, p, m_k, sparsity, noise_std, lam, seed,
                     family="B", ridge=None, coupling_dim=None,
                     oracle=True, oracle_tol=1e-10):
    """Synthetic sparse-recovery instance in sharing form.

    Each agent observes ``y_k = M_k x + e_k`` with Gaussian ``M_k`` (scaled
    by ``1/sqrt(m_k)``) and forms the least-squares cost
    ``0.5 ||y_k - M_k w_k||^2`` plus a ridge. Two casts:

    * family ``B`` (consensus LASSO): every block estimates the same
      ``p``-vector and ``C_k = I/N`` feeds the averaged iterate into ``g``;
    * family ``A`` (private blocks): agent ``k`` owns its own sparse
      ``p``-block and ``C_k`` is a random ``coupling_dim x p`` matrix, full
      row rank almost surely when ``coupling_dim <= p``.

    Parameters
    ----------
    n_agents, p : int
        Network size and per-agent block dimension.
    m_k : int or sequence of int
        Rows of each sensing matrix.
    sparsity : float or int
        Fraction of non-zeros in the true signal when given as a float
        in (0, 1], exact count when given as an integer (per block for
        family A).
    noise_std, lam : float
        Observation noise level and l1 weight (``lam = 0`` gives ``g = 0``).
    seed : int
        Identical seeds reproduce the instance bit for bit.
    ridge : float, optional
        Tikhonov weight; defaults to 1e-3 when ``m_k < p`` (so the local
        Hessians stay positive definite) and 0 otherwise.
    coupling_dim : int, optional
        Family-A coupling rows; defaults to ``max(1, p // 2)``.
    oracle : bool
        Solve for the centralized ground truth (skipped when False, in
        which case the second return value is None).

    Returns
    -------
    (SharingProblem, GroundTruth or None, ndarray)
        The instance, its centralized solution and the true signal
        (stacked across agents for family A).
    """
    if family not in ("A", "B"):
        raise ValueError(f"unknown instance family {family!r}")
    if n_agents <= 0 or p <= 0:
        raise ValueError("n_agents and p must be positive")
    rows = _as_list(m_k, n_agents, "m_k")
    if isinstance(sparsity, (int, np.integer)) and not isinstance(sparsity, bool):
        if not 1 <= sparsity <= p:
            raise ValueError(f"sparsity count must lie in [1, {p}], got {sparsity}")
        nnz = int(sparsity)
    else:
        if not 0.0 < sparsity <= 1.0:
            raise ValueError(f"sparsity fraction must lie in (0, 1], got {sparsity}")
        nnz = max(1, int(round(float(sparsity) * p)))

    rng = np.random.default_rng(seed)
    gterm = NonSmoothTerm("l1", lam) if lam > 0 else NonSmoothTerm("zero")

    def sparse_block():
        x = np.zeros(p)
        support = rng.choice(p, size=nnz, replace=False)
        x[support] = rng.choice([-1.0, 1.0], size=nnz)
        return x

    costs, mats, sensing, obs, signal = [], [], [], [], []
    if family == "B":
        x_true = sparse_block()
        signal = x_true
        for k in range(n_agents):
            mk = rows[k]
            rho = ridge if ridge is not None else (1e-3 if mk < p else 0.0)
            M = rng.standard_normal((mk, p)) / math.sqrt(mk)
            e = noise_std * rng.standard_normal(mk)
            y = M @ x_true + e
            costs.append(LocalCost.from_least_squares(M, y, rho))
            mats.append(np.eye(p) / n_agents)
            sensing.append(M)
            obs.append(y)
    else:
        cdim = coupling_dim if coupling_dim is not None else max(1, p // 2)
        if cdim > p:
            raise ValueError(
                f"coupling_dim {cdim} exceeds block dimension {p}; "
                "the stacked coupling could not have full row rank"
            )
        blocks = []
        for k in range(n_agents):
            mk = rows[k]
            rho = ridge if ridge is not None else (1e-3 if mk < p else 0.0)
            x_k = sparse_block()
            blocks.append(x_k)
            M = rng.standard_normal((mk, p)) / math.sqrt(mk)
            e = noise_std * rng.standard_normal(mk)
            y = M @ x_k + e
            costs.append(LocalCost.from_least_squares(M, y, rho))
            mats.append(rng.standard_normal((cdim, p)) / math.sqrt(p))
            sensing.append(M)
            obs.append(y)
        signal = np.concatenate(blocks)

    problem = SharingProblem(
        costs, CouplingMatrices(tuple(mats)), gterm,
        data={"M": sensing, "y": obs,
              "seed": seed, "family": family, "p": p, "lam": lam,
              "ridge": ridge if ridge is not None else "auto",
              "noise_std": noise_std, "sparsity": sparsity},
    )
    truth = solve_centralized(problem, tol=oracle_tol) if oracle else None
    return problem, truth, signal


def make_consensus_instance(n_agents, p, seed, lam=0.0, cond=5.0):
    """Quadratic consensus instance whose local costs share one minimizer.

    Each ``H_k`` is a random SPD matrix with spectrum in ``[1, cond]`` and
    ``b_k = H_k x_com``, so every ``J_k`` (and their sum) is minimized at
    the same point. Used for cross-algorithm agreement checks where a
    sharing-form solver and consensus-form solvers must land on one answer.

    Returns ``(SharingProblem, x_com)``; coupling is ``C_k = I/N``.
    """
    rng = np.random.default_rng(seed)
    x_com = rng.standard_normal(p)
    costs = []
    for _ in range(n_agents):
        Q, _ = np.linalg.qr(rng.standard_normal((p, p)))
        eigs = 1.0 + (cond - 1.0) * rng.random(p)
        H = (Q * eigs) @ Q.T
        H = 0.5 * (H + H.T)
        costs.append(LocalCost(H=H, b=H @ x_com))
    mats = tuple(np.eye(p) / n_agents for _ in range(n_agents))
    gterm = NonSmoothTerm("l1", lam) if lam > 0 else NonSmoothTerm("zero")
    return SharingProblem(costs, CouplingMatrices(mats), gterm), x_com


# ---------------------------------------------------------------------------
# centralized ground truth
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class GroundTruth:
    """Centralized solution: stacked ``w_star``, aggregate dual ``y_star``."""

    w_star: np.ndarray = field(repr=False)
    y_star: np.ndarray = field(repr=False)
    primal_value: float


def pair_residuals(problem, w, y):
    """First-order optimality residuals for an aggregate pair ``(w, y)``.

    Returns ``(r_grad, r_prox)`` where ``r_grad = ||grad J(w) + C' y||``
    and ``r_prox`` is the unit-step fixed-point gap of
    ``C w in subdifferential of g* at y``. Both vanish exactly at a
    saddle point.
    """
    w = np.asarray(w, dtype=float)
    y = np.asarray(y, dtype=float)
    C = problem.coupling.stacked_wide()
    r_grad = float(np.linalg.norm(problem.grad_stacked(w) + C.T @ y))
    gap = y - prox_conjugate(problem.gterm, 1.0, y + problem.apply_C(w))
    return r_grad, float(np.linalg.norm(gap))


def solve_centralized(problem, tol=1e-10, max_iter=10 ** 6):
    """Centralized proximal-gradient (forward-backward) ground truth.

    Runs forward-backward on the dual of ``J(W) + g(C W)``: the smooth part
    is the quadratic ``y -> J*(-C'y)`` (closed-form gradient ``-C W(y)``
    with ``W(y) = H^{-1}(b - C'y)``) and the prox is that of ``g*``. The
    primal iterate ``W(y)`` satisfies the stationarity condition
    ``grad J + C'y = 0`` by construction, so the loop stops when the
    remaining fixed-point residual drops below ``tol``. Nesterov momentum
    with gradient restarts speeds up the strongly convex case (full
    row-rank coupling); the iterate sequence is still a plain
    forward-backward step at an extrapolated point.

    Raises
    ------
    RuntimeError
        If the residual has not reached ``tol`` within ``max_iter``.
    """
    n = problem.n_agents
    m = problem.m_dim
    chol = [np.linalg.cholesky(c.H) for c in problem.costs]

    def local_solve(k, rhs):
        z = np.linalg.solve(chol[k], rhs)
        return np.linalg.solve(chol[k].T, z)

    def primal_of(y):
        return problem.join(
            [local_solve(k, problem.costs[k].b - problem.coupling.mats[k].T @ y)
             for k in range(n)]
        )

    # dual Hessian S = C H^{-1} C' (m x m), exact smoothness constant
    S = np.zeros((m, m))
    for k, C in enumerate(problem.coupling.mats):
        Hinv_Ct = np.column_stack([local_solve(k, C.T[:, j]) for j in range(m)])
        S += C @ Hinv_Ct
    eigS = np.linalg.eigvalsh(S)
    L = float(eigS[-1])
    mu_sc = float(max(eigS[0], 0.0))
    if L <= 0:
        # zero coupling: the dual is trivial, any feasible y works
        y = np.zeros(m)
        W = primal_of(y)
        return GroundTruth(W, y, problem.objective(W))
    step = 1.0 / L
    if mu_sc > 1e-14 * L:
        q = mu_sc / L
        beta = (1.0 - math.sqrt(q)) / (1.0 + math.sqrt(q))
    else:
        beta = None  # fall back to FISTA-style momentum

    y = np.zeros(m)
    v = y.copy()
    t_mom = 1.0
    for it in range(max_iter):
        W_v = primal_of(v)
        y_new = prox_conjugate(problem.gterm, step, v + step * problem.apply_C(W_v))
        if beta is not None:
            b_t = beta
        else:
            t_next = 0.5 * (1.0 + math.sqrt(1.0 + 4.0 * t_mom * t_mom))
            b_t = (t_mom - 1.0) / t_next
            t_mom = t_next
        v_new = y_new + b_t * (y_new - y)
        if float((v - y_new) @ (y_new - y)) > 0.0:  # gradient restart
            v_new = y_new.copy()
            t_mom = 1.0
        y, v = y_new, v_new

        if it % 10 == 0 or it < 5:
            W = primal_of(y)
            gap = y - prox_conjugate(problem.gterm, 1.0, y + problem.apply_C(W))
            if np.linalg.norm(gap) <= tol:
                return GroundTruth(W, y, problem.objective(W))
    raise RuntimeError(
        f"centralized oracle did not reach tol={tol:g} within {max_iter} iterations"
    )


# ---------------------------------------------------------------------------
# CSV-directory serialization
# ---------------------------------------------------------------------------

def _write_csv(path, arr):
    np.savetxt(path, np.atleast_2d(np.asarray(arr, dtype=float)), delimiter=",")


def _read_csv(path):
    return np.loadtxt(path, delimiter=",", ndmin=2)


def save_instance(problem, dirpath, manifest=None):
    """Write a problem as per-agent CSV matrices plus a key-value manifest.

    Files: ``H_k.csv``, ``b_k.csv``, ``C_k.csv`` for each agent, plus
    ``M_k.csv`` / ``y_k.csv`` when the instance carries its raw sensing
    data. ``manifest.txt`` records sizes and generator parameters.
    """
    os.makedirs(dirpath, exist_ok=True)
    meta = {
        "n": problem.n_agents,
        "m_dim": problem.m_dim,
        "q_sizes": ",".join(str(q) for q in problem.q_sizes),
        "g_kind": problem.gterm.kind,
        "lam": problem.gterm.lam,
    }
    if isinstance(problem.data, dict):
        for key in ("p", "seed", "ridge", "noise_std", "sparsity", "family"):
            if key in problem.data:
                meta[key] = problem.data[key]
    if manifest:
        meta.update(manifest)
    for k in range(problem.n_agents):
        _write_csv(os.path.join(dirpath, f"H_{k}.csv"), problem.costs[k].H)
        _write_csv(os.path.join(dirpath, f"b_{k}.csv"), problem.costs[k].b)
        _write_csv(os.path.join(dirpath, f"C_{k}.csv"), problem.coupling.mats[k])
        if isinstance(problem.data, dict) and "M" in problem.data:
            _write_csv(os.path.join(dirpath, f"M_{k}.csv"), problem.data["M"][k])
            _write_csv(os.path.join(dirpath, f"y_{k}.csv"), problem.data["y"][k])
    lines = [f"{key} = {val}" for key, val in meta.items()]
    with open(os.path.join(dirpath, "manifest.txt"), "w", encoding="utf-8",
              newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def load_instance(dirpath):
    """Inverse of :func:`save_instance`; returns ``(SharingProblem, manifest)``."""
    manifest = {}
    with open(os.path.join(dirpath, "manifest.txt"), "r", encoding="utf-8") as fh:
        for raw in fh:
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            key, _, val = line.partition("=")
            manifest[key.strip()] = val.strip()
    n = int(manifest["n"])
    lam = float(manifest.get("lam", 0.0))
    kind = manifest.get("g_kind", "zero")
    gterm = NonSmoothTerm(kind, lam if kind == "l1" else 0.0)
    costs, mats, sensing, obs = [], [], [], []
    for k in range(n):
        H = _read_csv(os.path.join(dirpath, f"H_{k}.csv"))
        b = _read_csv(os.path.join(dirpath, f"b_{k}.csv")).ravel()
        C = _read_csv(os.path.join(dirpath, f"C_{k}.csv"))
        costs.append(LocalCost(H=H, b=b))
        mats.append(C)
        mpath = os.path.join(dirpath, f"M_{k}.csv")
        if os.path.exists(mpath):
            sensing.append(_read_csv(mpath))
            obs.append(_read_csv(os.path.join(dirpath, f"y_{k}.csv")).ravel())
    data = {"M": sensing, "y": obs} if sensing else None
    return SharingProblem(costs, CouplingMatrices(tuple(mats)), gterm, data=data), manifest
