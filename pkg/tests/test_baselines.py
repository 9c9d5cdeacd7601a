"""Consensus-form baselines: EXTRA, proximal-EXTRA and DIGing (ATC)."""

import numpy as np
import pytest

from pddiffusion.baselines import (BASELINE_METHODS, BaselineConfig,
                                   consensus_truth, diging_run, extra_run,
                                   tune_alpha)
from pddiffusion.problem import make_consensus_instance, make_cs_instance
from pddiffusion.solver import DivergenceError, run
from pddiffusion.topology import build_topology, metropolis_weights


def smooth_consensus(n=5, p=4, seed=31):
    problem, x_com = make_consensus_instance(n, p, seed=seed)
    top = build_topology("undirected-random", n, density=0.6, seed=seed)
    return problem, x_com, top


# ---------------------------------------------------------------------------
# configuration contracts
# ---------------------------------------------------------------------------

def test_config_validation(mesh6):
    w = metropolis_weights(mesh6)
    cfg = BaselineConfig(method="extra", alpha=0.1, weights=w)
    np.testing.assert_allclose(cfg.w_tilde, 0.5 * (np.eye(6) + w.entries))
    with pytest.raises(ValueError, match="unknown baseline method"):
        BaselineConfig(method="nids", alpha=0.1, weights=w)
    with pytest.raises(ValueError, match="alpha"):
        BaselineConfig(method="extra", alpha=0.0, weights=w)
    ring = metropolis_weights(build_topology("ring-digraph", 6))
    with pytest.raises(ValueError, match="symmetric doubly stochastic"):
        BaselineConfig(method="extra", alpha=0.1, weights=ring)
    assert BASELINE_METHODS == ("extra", "diging-atc")


def test_requires_equal_block_sizes():
    problem, _, _ = make_cs_instance(3, 4, 8, 0.5, 0.02, 0.0, seed=1,
                                     family="A", ridge=0.2, oracle=False)
    # family A couples different blocks; fake inequality by slicing one C
    from pddiffusion.problem import CouplingMatrices, LocalCost, SharingProblem
    costs = list(problem.costs)
    mats = list(problem.coupling.mats)
    costs[0] = LocalCost(H=costs[0].H[:3, :3], b=costs[0].b[:3])
    mats[0] = mats[0][:, :3]
    uneven = SharingProblem(tuple(costs), CouplingMatrices(tuple(mats)),
                            problem.gterm)
    top = build_topology("undirected-random", 3, density=0.9, seed=0)
    with pytest.raises(ValueError, match="consensus-form"):
        extra_run(uneven, top, alpha=0.1, max_iter=5)


def test_diging_rejects_nonsmooth():
    problem, _, _ = make_cs_instance(3, 4, 8, 0.5, 0.02, 0.4, seed=1,
                                     family="B", ridge=0.1, oracle=False)
    top = build_topology("undirected-random", 3, density=0.9, seed=0)
    with pytest.raises(ValueError, match="smooth"):
        diging_run(problem, top, alpha=0.1, max_iter=5)


def test_x_init_shape_checked():
    problem, _, top = smooth_consensus()
    with pytest.raises(ValueError, match="x_init"):
        extra_run(problem, top, alpha=0.05, max_iter=3,
                  x_init=np.zeros((2, 4)))


# ---------------------------------------------------------------------------
# single-node degeneration: both methods are plain gradient descent
# ---------------------------------------------------------------------------

def test_single_node_is_gradient_descent():
    problem, x_com, _ = smooth_consensus(n=1, p=3, seed=4)
    top = build_topology("ring-digraph", 1)
    alpha = 0.9 / problem.delta
    x0 = np.array([[1.0, -2.0, 0.5]])
    ref = x0[0].copy()
    for runner in (extra_run, diging_run):
        _, X = runner(problem, top, alpha=alpha, max_iter=40,
                      x_init=x0.copy())
        r = ref.copy()
        for _ in range(40):
            r = r - alpha * problem.costs[0].grad(r)
        np.testing.assert_allclose(X[0], r, atol=1e-12)


# ---------------------------------------------------------------------------
# the collapsed reference solution
# ---------------------------------------------------------------------------

def test_consensus_truth_smooth_normal_equations():
    problem, x_com, _ = smooth_consensus()
    truth = consensus_truth(problem)
    H = np.sum([c.H for c in problem.costs], axis=0)
    b = np.sum([c.b for c in problem.costs], axis=0)
    np.testing.assert_allclose(truth.w_star, np.linalg.solve(H, b), atol=1e-9)
    np.testing.assert_allclose(truth.w_star, x_com, atol=1e-9)


def test_consensus_truth_scales_l1_by_network_size():
    problem, _, _ = make_cs_instance(4, 5, 10, 0.5, 0.02, 0.1, seed=3,
                                     family="B", ridge=0.1, oracle=False)
    truth = consensus_truth(problem)
    # KKT of min sum_k f_k(x) + (N lam) ||x||_1 checked directly
    H = np.sum([c.H for c in problem.costs], axis=0)
    b = np.sum([c.b for c in problem.costs], axis=0)
    grad = H @ truth.w_star - b
    lam_eff = 0.1 * 4
    assert np.max(np.abs(grad)) <= lam_eff + 1e-8
    active = np.abs(truth.w_star) > 1e-9
    np.testing.assert_allclose(grad[active],
                               -lam_eff * np.sign(truth.w_star[active]),
                               atol=1e-7)


# ---------------------------------------------------------------------------
# convergence and the tracker identity
# ---------------------------------------------------------------------------

def test_extra_converges_smooth():
    problem, x_com, top = smooth_consensus()
    truth = consensus_truth(problem)
    trace, X = extra_run(problem, top, max_iter=700, ground_truth=truth)
    assert trace.sq_error[-1] <= 1e-8
    assert trace.dual_consensus_residual[-1] <= 1e-6
    np.testing.assert_allclose(X, np.tile(x_com, (5, 1)), atol=1e-4)


def test_proximal_extra_converges_lasso():
    problem, _, _ = make_cs_instance(4, 5, 10, 0.5, 0.02, 0.1, seed=3,
                                     family="B", ridge=0.1, oracle=False)
    top = build_topology("undirected-random", 4, density=0.7, seed=5)
    truth = consensus_truth(problem)
    trace, X = extra_run(problem, top, max_iter=900, ground_truth=truth)
    assert trace.sq_error[-1] <= 1e-8
    xbar = X.mean(axis=0)
    np.testing.assert_allclose(X - xbar, 0.0, atol=1e-4)


def test_diging_converges_and_tracks():
    problem, x_com, top = smooth_consensus(seed=12)
    truth = consensus_truth(problem)
    trace, X = diging_run(problem, top, max_iter=800, ground_truth=truth)
    assert trace.sq_error[-1] <= 1e-8
    np.testing.assert_allclose(X, np.tile(x_com, (5, 1)), atol=1e-4)


def test_diging_tracker_sum_identity():
    """The tracker column sums equal the current gradient column sums at
    every iteration under doubly stochastic mixing."""
    problem, _, top = smooth_consensus(seed=9)
    weights = metropolis_weights(top)
    W = weights.entries.T
    rng = np.random.default_rng(2)
    X = rng.standard_normal((5, 4))
    grad = np.vstack([problem.costs[k].grad(X[k]) for k in range(5)])
    y = grad.copy()
    alpha = 0.5 / problem.delta
    for _ in range(60):
        X_new = W @ (X - alpha * y)
        grad_new = np.vstack([problem.costs[k].grad(X_new[k]) for k in range(5)])
        y = W @ (y + grad_new - grad)
        X, grad = X_new, grad_new
        np.testing.assert_allclose(y.sum(axis=0), grad.sum(axis=0), atol=1e-10)


def test_cross_method_agreement_smooth():
    """Criterion-style check at unit scale: the sharing solver and both
    consensus baselines land on the common minimizer."""
    problem, x_com, top = smooth_consensus(n=4, p=3, seed=22)
    truth = consensus_truth(problem)
    _, X_e = extra_run(problem, top, max_iter=900, ground_truth=truth)
    _, X_d = diging_run(problem, top, max_iter=900, ground_truth=truth)
    pdd_trace, state = run(problem, top, max_iter=900)
    tiled = np.tile(x_com, (4, 1))
    np.testing.assert_allclose(X_e, tiled, atol=1e-6)
    np.testing.assert_allclose(X_d, tiled, atol=1e-6)
    np.testing.assert_allclose(state.W, x_com.repeat(4).reshape(3, 4).T.ravel(),
                               atol=1e-6)
    np.testing.assert_allclose(np.abs(X_e - X_d).max(), 0.0, atol=1e-6)


# ---------------------------------------------------------------------------
# the alpha -> 0 limit
# ---------------------------------------------------------------------------

def test_extra_tiny_step_first_round_is_pure_averaging():
    problem, _, top = smooth_consensus(seed=15)
    weights = metropolis_weights(top)
    rng = np.random.default_rng(0)
    x0 = rng.standard_normal((5, 4))
    _, X = extra_run(problem, top, alpha=1e-300, max_iter=1,
                     x_init=x0, weights=weights)
    np.testing.assert_allclose(X, weights.entries.T @ x0, atol=1e-12)


def test_extra_tiny_step_reaches_consensus_mean():
    """With a vanishing step EXTRA still mixes to the initial average; the
    consensus residual decays overall but is not monotone step to step
    (the iteration matrix has complex eigenvalue pairs)."""
    problem, _, top = smooth_consensus(seed=15)
    rng = np.random.default_rng(1)
    x0 = rng.standard_normal((5, 4))
    trace, X = extra_run(problem, top, alpha=1e-300, max_iter=400,
                         x_init=x0.copy())
    np.testing.assert_allclose(X, np.tile(x0.mean(axis=0), (5, 1)), atol=1e-10)
    cons = trace.dual_consensus_residual
    assert cons[-1] <= 1e-10
    increases = int(np.sum(np.diff(cons) > 1e-15))
    assert increases > 0  # the residual is provably not monotone here


# ---------------------------------------------------------------------------
# tuning and divergence
# ---------------------------------------------------------------------------

def test_tuned_alpha_recorded_in_metadata():
    problem, _, top = smooth_consensus(seed=3)
    truth = consensus_truth(problem)
    trace, _ = extra_run(problem, top, max_iter=50, ground_truth=truth)
    assert trace.metadata["alpha"] > 0
    assert trace.metadata["alpha_halvings"] >= 0
    alpha, halvings = tune_alpha("extra", problem, top)
    assert alpha == pytest.approx(trace.metadata["alpha"])
    assert alpha == pytest.approx((1.0 / problem.delta) * 0.5 ** halvings)


def test_divergence_raises_with_trace():
    problem, _, top = smooth_consensus(seed=3)
    big = 50.0 / problem.nu
    with pytest.raises(DivergenceError) as info:
        extra_run(problem, top, alpha=big, max_iter=400)
    assert info.value.trace is not None
    assert info.value.trace.metadata["alpha"] == pytest.approx(big)
    assert 0 < len(info.value.trace.iters) <= 400


def test_trace_layout():
    problem, _, top = smooth_consensus(seed=3)
    truth = consensus_truth(problem)
    trace, _ = extra_run(problem, top, alpha=0.05, max_iter=30,
                         ground_truth=truth)
    assert len(trace.iters) == 30
    assert np.all(trace.mu_w == 0.05)
    assert np.all(np.isnan(trace.mu_y))
    assert trace.weights_policy == ["extra"] * 30
    assert trace.initial_sq_error == pytest.approx(trace.sq_error[0])
