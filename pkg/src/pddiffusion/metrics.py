"""Run traces, empirical linear-rate fits and Monte-Carlo MSD estimates."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

#: squared errors at or below this floor are dropped from rate fits
RATE_FLOOR = 1e-24

CSV_COLUMNS = ("iter", "sq_error", "dual_consensus_residual", "grad_residual",
               "stepsize_mu_w", "stepsize_mu_y", "weights_policy")


def _fmt(x):
    """Shortest round-trip decimal form, for byte-stable CSV output."""
    return repr(float(x))


@dataclass
class RunTrace:
    """Per-iteration metrics of one solver run plus run metadata.

    The canonical CSV schema is
    ``iter, sq_error, dual_consensus_residual, grad_residual,
    stepsize_mu_w, stepsize_mu_y, weights_policy``. Extra in-memory fields
    (``dual_sq_error``, ``weight_history``, ``initial_sq_error``) never
    enter the CSV.
    """

    iters: np.ndarray = field(repr=False)
    sq_error: np.ndarray = field(repr=False)
    dual_consensus_residual: np.ndarray = field(repr=False)
    grad_residual: np.ndarray = field(repr=False)
    mu_w: np.ndarray = field(repr=False)
    mu_y: np.ndarray = field(repr=False)
    weights_policy: list = field(repr=False)
    metadata: dict = field(default_factory=dict)
    initial_sq_error: float = math.nan
    dual_sq_error: np.ndarray = field(default=None, repr=False)
    weight_history: list = field(default=None, repr=False)

    @property
    def n_rows(self):
        return int(self.iters.shape[0])

    def to_csv(self, path, header_comments=()):
        lines = [f"# {c}" for c in header_comments]
        lines.append(",".join(CSV_COLUMNS))
        for i in range(self.n_rows):
            lines.append(",".join([
                str(int(self.iters[i])),
                _fmt(self.sq_error[i]),
                _fmt(self.dual_consensus_residual[i]),
                _fmt(self.grad_residual[i]),
                _fmt(self.mu_w[i]),
                _fmt(self.mu_y[i]),
                self.weights_policy[i],
            ]))
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write("\n".join(lines) + "\n")

    @classmethod
    def from_csv(cls, path):
        header, rows = [], []
        with open(path, "r", encoding="utf-8") as fh:
            for raw in fh:
                line = raw.rstrip("\n")
                if line.startswith("#"):
                    header.append(line[1:].strip())
                    continue
                if not line:
                    continue
                rows.append(line.split(","))
        if not rows or tuple(rows[0]) != CSV_COLUMNS:
            raise ValueError(f"{path}: missing or unexpected CSV header")
        body = rows[1:]
        cols = list(zip(*body)) if body else [[] for _ in CSV_COLUMNS]
        return cls(
            iters=np.array([int(v) for v in cols[0]], dtype=int),
            sq_error=np.array([float(v) for v in cols[1]]),
            dual_consensus_residual=np.array([float(v) for v in cols[2]]),
            grad_residual=np.array([float(v) for v in cols[3]]),
            mu_w=np.array([float(v) for v in cols[4]]),
            mu_y=np.array([float(v) for v in cols[5]]),
            weights_policy=[str(v) for v in cols[6]],
            metadata={"header": header},
        )


def iterations_to(trace, threshold):
    """Steps needed to bring ``sq_error`` to ``threshold`` (None if never)."""
    hits = np.nonzero(trace.sq_error <= threshold)[0]
    return int(hits[0] + 1) if hits.size else None


# ---------------------------------------------------------------------------
# linear-rate fit
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RateFit:
    """Fitted per-iteration factor ``gamma_hat`` with a 95% band."""

    gamma_hat: float
    gamma_low: float
    gamma_high: float
    n_points: int


def fit_linear_rate(trace, burn_in=0):
    """Least-squares slope of ``log sq_error`` after ``burn_in`` iterations.

    Rows with ``sq_error`` at or below the 1e-24 floor (or non-finite) are
    discarded. The fitted factor is ``exp(slope)``; the band is
    ``exp(slope -/+ 1.96 se)`` from the regression standard error.

    Raises
    ------
    ValueError
        With fewer than 10 usable points.
    """
    if hasattr(trace, "sq_error"):
        it = np.asarray(trace.iters, dtype=float)
        sq = np.asarray(trace.sq_error, dtype=float)
    else:
        sq = np.asarray(trace, dtype=float)
        it = np.arange(sq.shape[0], dtype=float)
    keep = (it >= burn_in) & np.isfinite(sq) & (sq > RATE_FLOOR)
    it, sq = it[keep], sq[keep]
    if it.shape[0] < 10:
        raise ValueError(
            f"need at least 10 usable points above the {RATE_FLOOR:g} floor, "
            f"got {it.shape[0]}"
        )
    logs = np.log(sq)
    n = it.shape[0]
    xbar = it.mean()
    sxx = float(np.sum((it - xbar) ** 2))
    slope = float(np.sum((it - xbar) * (logs - logs.mean())) / sxx)
    resid = logs - (logs.mean() + slope * (it - xbar))
    dof = max(n - 2, 1)
    se = math.sqrt(float(np.sum(resid ** 2)) / dof / sxx)
    return RateFit(
        gamma_hat=math.exp(slope),
        gamma_low=math.exp(slope - 1.96 * se),
        gamma_high=math.exp(slope + 1.96 * se),
        n_points=n,
    )


# ---------------------------------------------------------------------------
# Monte-Carlo steady-state error
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class MsdResult:
    """Steady-state mean-square deviation, primal and dual forms."""

    msd_primal: float
    msd_dual: float
    stderr_primal: float
    stderr_dual: float
    per_trial_primal: np.ndarray = field(repr=False)
    per_trial_dual: np.ndarray = field(repr=False)
    n_trials: int = 0


def msd_estimate(run_factory, n_trials, seed, window=0.1):
    """Average steady-state squared error over independent noise draws.

    ``run_factory(trial_seed)`` must return a completed
    :class:`RunTrace` whose metadata carries ``n_agents`` and whose
    ``dual_sq_error`` is populated (i.e. the run had ground truth). The
    steady-state window is the trailing ``window`` fraction of iterations.
    Both the dual-variable deviation ``(1/N) E ||Y - Y*||^2`` and the
    primal ``(1/N) E ||W - W*||^2`` are reported, with standard errors
    from the per-trial spread (sums are numpy pairwise sums, so repeated
    calls reproduce results exactly).
    """
    if n_trials < 2:
        raise ValueError(f"need at least 2 trials, got {n_trials}")
    if not (0.0 < window <= 1.0):
        raise ValueError(f"window must lie in (0, 1], got {window}")
    trial_seeds = np.random.default_rng(seed).integers(0, 2 ** 63 - 1, size=n_trials)
    primal, dual = [], []
    for ts in trial_seeds:
        trace = run_factory(int(ts))
        n_agents = trace.metadata.get("n_agents")
        if n_agents is None:
            raise ValueError("trace metadata must record n_agents")
        if trace.dual_sq_error is None:
            raise ValueError("MSD needs runs with ground truth (dual errors missing)")
        tail = max(1, int(round(window * trace.n_rows)))
        primal.append(float(np.mean(trace.sq_error[-tail:])) / n_agents)
        dual.append(float(np.mean(trace.dual_sq_error[-tail:])) / n_agents)
    primal = np.array(primal)
    dual = np.array(dual)
    return MsdResult(
        msd_primal=float(primal.mean()),
        msd_dual=float(dual.mean()),
        stderr_primal=float(primal.std(ddof=1) / math.sqrt(n_trials)),
        stderr_dual=float(dual.std(ddof=1) / math.sqrt(n_trials)),
        per_trial_primal=primal,
        per_trial_dual=dual,
        n_trials=n_trials,
    )
