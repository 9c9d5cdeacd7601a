"""Smoothed inverse-quality combination weights and the oracle-scaled rule."""

import numpy as np
import pytest

from pddiffusion.adaptive_weights import (AdaptiveWeightState, CHI_INV_CAP,
                                          CHI_SQ_FLOOR, compute_weights,
                                          dump_weight_history,
                                          init_weight_state,
                                          initial_error_norms,
                                          update_chi_certificate_scaled,
                                          update_filter)
from pddiffusion.certificate import certify
from pddiffusion.problem import make_cs_instance
from pddiffusion.solver import StepSizes, default_steps, run
from pddiffusion.topology import build_topology, metropolis_weights


def test_state_validation(ring5):
    with pytest.raises(ValueError, match="zeta"):
        AdaptiveWeightState(ring5, zeta=1.5, chi_sq=np.zeros((5, 5)))
    with pytest.raises(ValueError, match="n-by-n"):
        AdaptiveWeightState(ring5, zeta=0.1, chi_sq=np.zeros((4, 4)))
    with pytest.raises(ValueError, match="nonnegative"):
        AdaptiveWeightState(ring5, zeta=0.1, chi_sq=-np.ones((5, 5)))
    st = init_weight_state(ring5, zeta=0.3)
    assert st.iteration == 0
    np.testing.assert_array_equal(st.chi_sq, 0.0)


def test_filter_arithmetic(ring5):
    """One smoothing step from 2 toward 4 with zeta = 0.5 lands on 3."""
    st = init_weight_state(ring5, zeta=0.5)
    st.chi_sq[:, 2] = 2.0
    w = np.array([2.0])  # ||w||^2 = 4
    update_filter(st, 2, w)
    for l in ring5.in_neighbors(2):
        assert st.chi_sq[l, 2] == pytest.approx(3.0)
    # entries outside the in-neighborhood are untouched
    for l in range(5):
        if l not in ring5.in_neighbors(2):
            assert st.chi_sq[l, 2] == pytest.approx(2.0)


def test_filter_endpoints(ring5):
    st1 = init_weight_state(ring5, zeta=1.0)
    st1.chi_sq[:, 0] = 7.0
    update_filter(st1, 0, np.array([3.0]))  # value 9 replaces everything
    for l in ring5.in_neighbors(0):
        assert st1.chi_sq[l, 0] == pytest.approx(9.0)

    st0 = init_weight_state(ring5, zeta=0.0)
    st0.chi_sq[:, 0] = 7.0
    update_filter(st0, 0, np.array([3.0]))  # frozen filter
    for l in ring5.in_neighbors(0):
        assert st0.chi_sq[l, 0] == pytest.approx(7.0)


def test_weights_uniform_when_statistics_equal(mesh6):
    """Equal statistics within a neighborhood give uniform weights."""
    st = init_weight_state(mesh6, zeta=0.2)
    st.chi_sq[:] = 4.2
    a = compute_weights(st)
    a.validate(mesh6)
    for k in range(6):
        nbrs = mesh6.in_neighbors(k)
        np.testing.assert_allclose(a.entries[nbrs, k], 1.0 / len(nbrs),
                                   atol=1e-14)


def test_weights_order_follows_inverse_statistic(ring5):
    """A huge statistic (bad neighbor) gets the smallest weight."""
    st = init_weight_state(ring5, zeta=0.2)
    k = 2
    nbrs = ring5.in_neighbors(k)  # [1, 2]
    st.chi_sq[nbrs[0], k] = 1e6
    st.chi_sq[nbrs[1], k] = 1.0
    a = compute_weights(st)
    assert a.entries[nbrs[0], k] < a.entries[nbrs[1], k]
    assert a.entries[:, k].sum() == pytest.approx(1.0)


def test_weights_survive_zero_statistics(mesh6):
    """chi = 0 hits the floor/cap clamps rather than dividing by zero."""
    st = init_weight_state(mesh6, zeta=0.5)
    a = compute_weights(st)
    a.validate(mesh6)
    assert np.all(np.isfinite(a.entries))
    np.testing.assert_allclose(a.entries.sum(axis=0), 1.0, atol=1e-12)
    # the cap makes tiny and exactly-zero statistics indistinguishable
    st.chi_sq[:] = 1.0 / (CHI_INV_CAP * 10)
    b = compute_weights(st)
    np.testing.assert_allclose(a.entries, b.entries, atol=1e-14)
    assert CHI_SQ_FLOOR < 1.0 / CHI_INV_CAP


def test_weights_invariant_to_common_shift(ring5):
    """Adding a constant to all statistics of one receiver reorders
    nothing; weights change smoothly and keep the same ranking."""
    st = init_weight_state(ring5, zeta=0.2)
    rng = np.random.default_rng(3)
    st.chi_sq[:] = rng.uniform(0.5, 2.0, size=(5, 5))
    a = compute_weights(st)
    st.chi_sq += 10.0
    b = compute_weights(st)
    for k in range(5):
        nbrs = ring5.in_neighbors(k)
        assert (np.argsort(a.entries[nbrs, k]) == np.argsort(b.entries[nbrs, k])).all()


def test_valid_matrix_every_iteration(small_lasso):
    problem, truth, _ = small_lasso
    top = build_topology("random-digraph", 4, density=0.5, seed=21)
    trace, _ = run(problem, top, policy="adaptive", zeta=0.2,
                   ground_truth=truth, max_iter=40, record_weights=True)
    assert len(trace.weight_history) == 40
    for entries in trace.weight_history:
        assert np.all(entries >= 0)
        np.testing.assert_allclose(entries.sum(axis=0), 1.0, atol=1e-12)
        nz = np.argwhere(entries > 0)
        assert all((int(l), int(k)) in top.edges for l, k in nz)


def test_zeta_zero_matches_uniform_static(small_lasso):
    """With a frozen filter the statistics stay equal, so the adaptive
    policy degenerates to uniform neighborhood averaging, bit for bit."""
    problem, truth, _ = small_lasso
    top = build_topology("random-digraph", 4, density=0.5, seed=21)
    ta, _ = run(problem, top, policy="adaptive", zeta=0.0,
                ground_truth=truth, max_iter=60)
    uniform = compute_weights(init_weight_state(top, zeta=0.0))
    tb, _ = run(problem, top, policy="static", weights=uniform,
                ground_truth=truth, max_iter=60)
    np.testing.assert_array_equal(ta.sq_error, tb.sq_error)


def symmetrized_ring(n):
    edges = {(k, k) for k in range(n)}
    for k in range(n):
        edges |= {(k, (k + 1) % n), ((k + 1) % n, k)}
    from pddiffusion.topology import DirectedTopology
    return DirectedTopology(n, frozenset(edges))


def test_adaptive_run_weights_are_neighborhood_uniform(small_lasso):
    """The filter feeds every sender of k the same local statistic, so the
    softmax emits uniform columns in any actual run; the neighbors only
    stop looking alike when the statistics come from somewhere else."""
    problem, truth, _ = small_lasso
    top = build_topology("undirected-random", 4, density=0.7, seed=5)
    trace, _ = run(problem, top, policy="adaptive", zeta=0.3,
                   ground_truth=truth, max_iter=30, record_weights=True)
    for entries in trace.weight_history:
        for k in range(4):
            nbrs = top.in_neighbors(k)
            np.testing.assert_allclose(entries[nbrs, k], 1.0 / len(nbrs),
                                       atol=1e-14)


def test_adaptive_converges_on_regular_graph(small_lasso):
    """On a degree-regular graph the uniform columns form a symmetric
    doubly stochastic matrix, so the adaptive run keeps the exact-limit
    property of the static method."""
    problem, truth, _ = small_lasso
    top = symmetrized_ring(4)
    trace, _ = run(problem, top, policy="adaptive", zeta=0.1,
                   ground_truth=truth, max_iter=600)
    assert trace.sq_error[-1] < 1e-10


def test_adaptive_irregular_graph_reaches_neighborhood(small_lasso):
    """Uniform columns on an irregular graph are only row stochastic; the
    run settles near, not at, the solution. Guard the distance."""
    problem, truth, _ = small_lasso
    top = build_topology("undirected-random", 4, density=0.7, seed=5)
    trace, _ = run(problem, top, policy="adaptive", zeta=0.1,
                   ground_truth=truth, max_iter=1000)
    assert trace.sq_error[-1] < 1e-2 * trace.initial_sq_error


# ---------------------------------------------------------------------------
# oracle-scaled rule
# ---------------------------------------------------------------------------

def test_initial_error_norms_zero_at_truth(small_lasso):
    problem, truth, _ = small_lasso
    steps = default_steps(problem)
    norms = initial_error_norms(problem, truth, steps,
                                w_init=truth.w_star, y_init=truth.y_star)
    for w_sq, y_sq, x_sq in norms:
        assert w_sq == pytest.approx(0.0, abs=1e-12)
        assert y_sq == pytest.approx(0.0, abs=1e-12)
        assert x_sq >= 0.0  # the stationary splitting value is not zero


def test_initial_error_norms_spreadsheet(small_lasso):
    """Recompute the k-th triple directly from its definition."""
    problem, truth, _ = small_lasso
    steps = StepSizes(mu_w=0.05, mu_y=0.4)
    rng = np.random.default_rng(10)
    W0 = rng.standard_normal(problem.q_total)
    Y0 = rng.standard_normal((4, problem.m_dim))
    norms = initial_error_norms(problem, truth, steps, w_init=W0, y_init=Y0)
    mm = 0.05 * 0.4
    cw = problem.apply_Cd(truth.w_star)
    cbar = cw.mean(axis=0)
    for k in range(4):
        ck = problem.coupling.mats[k]
        we = problem.block(W0, k) - problem.block(truth.w_star, k)
        ye = Y0[k] - truth.y_star
        expect_w = we @ we - mm * (ck @ we) @ (ck @ we)
        expect_y = ye @ ye - mm * (ck.T @ ye) @ (ck.T @ ye)
        expect_x = np.sum((steps.mu_y * (cbar - cw[k])) ** 2)
        assert norms[k][0] == pytest.approx(expect_w, rel=1e-12)
        assert norms[k][1] == pytest.approx(expect_y, rel=1e-12)
        assert norms[k][2] == pytest.approx(expect_x, rel=1e-12)


def test_certificate_scaled_update_arithmetic(small_lasso):
    problem, truth, _ = small_lasso
    top = build_topology("undirected-random", 4, density=0.7, seed=5)
    steps = default_steps(problem)
    cert = certify(problem, metropolis_weights(top), steps)
    assert cert.verdict == "certified"
    norms = initial_error_norms(problem, truth, steps)
    st = init_weight_state(top, zeta=0.5)
    update_chi_certificate_scaled(st, cert, truth, norms, x_err_prev_sq=0.0)
    scale = max(cert.gamma1, cert.gamma2)  # gamma3 term vanishes at x_err = 0
    for k in range(4):
        w_sq, y_sq, x_sq = norms[k]
        expect = 0.5 * scale * (w_sq + cert.a_m * (y_sq + x_sq)) / cert.denom
        for l in top.in_neighbors(k):
            assert st.chi_sq[l, k] == pytest.approx(expect, rel=1e-12)
    # a large prior splitting error swings the max to the gamma3 branch
    st2 = init_weight_state(top, zeta=1.0)
    big = 1e6
    update_chi_certificate_scaled(st2, cert, truth, norms, x_err_prev_sq=big)
    k0 = top.in_neighbors(0)[0]
    w_sq, y_sq, x_sq = norms[0]
    expect = cert.gamma3 * big * (w_sq + cert.a_m * (y_sq + x_sq)) / cert.denom
    assert st2.chi_sq[k0, 0] == pytest.approx(expect, rel=1e-12)


def test_certificate_scaled_update_requires_truth(ring5):
    st = init_weight_state(ring5, zeta=0.1)
    with pytest.raises(ValueError, match="GroundTruth"):
        update_chi_certificate_scaled(st, None, None, [])


def test_certificate_scaled_statistic_decays_from_optimum(small_lasso):
    """Started at the optimum the injected statistic is the pure splitting
    term; repeated updates with shrinking errors drive chi down."""
    problem, truth, _ = small_lasso
    top = build_topology("undirected-random", 4, density=0.7, seed=5)
    steps = default_steps(problem)
    cert = certify(problem, metropolis_weights(top), steps)
    st = init_weight_state(top, zeta=0.4)
    norms = initial_error_norms(problem, truth, steps)
    update_chi_certificate_scaled(st, cert, truth, norms)
    first = st.chi_sq.copy()
    shrunk = [(1e-6 * w, 1e-6 * y, 1e-6 * x) for w, y, x in norms]
    for _ in range(25):
        update_chi_certificate_scaled(st, cert, truth, shrunk)
    for k in range(4):
        for l in top.in_neighbors(k):
            assert st.chi_sq[l, k] < first[l, k]


def test_dump_weight_history_roundtrips(tmp_path, mesh6):
    st = init_weight_state(mesh6, zeta=0.3)
    rng = np.random.default_rng(1)
    history = []
    for i in range(3):
        for k in range(6):
            update_filter(st, k, rng.standard_normal(2))
        history.append(compute_weights(st).entries.copy())
    path = dump_weight_history(history, tmp_path / "weights.csv")
    lines = (tmp_path / "weights.csv").read_text().strip().splitlines()
    assert lines[0] == "iter,receiver,sender,weight"
    rebuilt = [np.zeros((6, 6)) for _ in range(3)]
    for ln in lines[1:]:
        i, k, l, wv = ln.split(",")
        rebuilt[int(i)][int(l), int(k)] = float(wv)
    for got, want in zip(rebuilt, history):
        np.testing.assert_array_equal(got, want)
