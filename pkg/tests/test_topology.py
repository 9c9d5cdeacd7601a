"""Graph construction, Metropolis weights and spectral summaries."""

import numpy as np
import pytest

from pddiffusion.topology import (CombinationMatrix, DirectedTopology,
                                  build_topology, disagreement_matrix,
                                  from_edge_list, metropolis_weights,
                                  mixing_matrix, spectral_summary,
                                  to_edge_list)


def complete_topology(n):
    edges = {(l, k) for l in range(n) for k in range(n)}
    return DirectedTopology(n, frozenset(edges))


# ---------------------------------------------------------------------------
# construction and validation
# ---------------------------------------------------------------------------

def test_ring_digraph_edges():
    top = build_topology("ring-digraph", 4)
    expected = {(k, k) for k in range(4)} | {(0, 1), (1, 2), (2, 3), (3, 0)}
    assert top.edges == frozenset(expected)
    assert not top.is_symmetric


def test_self_loops_required():
    with pytest.raises(ValueError, match="self-loop"):
        DirectedTopology(2, frozenset({(0, 0), (0, 1), (1, 0)}))


def test_strong_connectivity_required():
    # two components joined one way only
    edges = {(0, 0), (1, 1), (2, 2), (0, 1), (1, 0), (1, 2)}
    with pytest.raises(ValueError, match="strongly connected"):
        DirectedTopology(3, frozenset(edges))


def test_unknown_kind_and_bad_density():
    with pytest.raises(ValueError, match="unknown topology kind"):
        build_topology("star", 4)
    with pytest.raises(ValueError, match="density"):
        build_topology("random-digraph", 4, density=0.0)
    with pytest.raises(ValueError, match="density"):
        build_topology("random-digraph", 4, density=1.5)
    with pytest.raises(ValueError):
        build_topology("ring-digraph", 0)


def test_build_is_deterministic():
    a = build_topology("random-digraph", 12, density=0.3, seed=99)
    b = build_topology("random-digraph", 12, density=0.3, seed=99)
    assert a.edges == b.edges
    c = build_topology("random-digraph", 12, density=0.3, seed=100)
    assert a.edges != c.edges  # overwhelmingly likely for n = 12


def test_undirected_random_is_symmetric():
    for seed in range(5):
        top = build_topology("undirected-random", 8, density=0.4, seed=seed)
        assert top.is_symmetric


def test_random_digraphs_strongly_connected():
    for seed in range(10):
        top = build_topology("random-digraph", 9, density=0.3, seed=seed)
        assert top.n == 9
        assert all((k, k) in top.edges for k in range(9))
        # constructor would have raised otherwise; re-check via reachability
        adj = top.adjacency()
        reach = np.linalg.matrix_power(adj + np.eye(9, dtype=int), 9) > 0
        assert reach.all()


def test_in_out_neighbors():
    top = build_topology("ring-digraph", 5)
    assert top.in_neighbors(2) == [1, 2]
    assert top.out_neighbors(2) == [2, 3]


# ---------------------------------------------------------------------------
# Metropolis weights
# ---------------------------------------------------------------------------

def test_metropolis_path_hand_values():
    """Path 0 - 1 - 2: degrees (with loop) are 2, 3, 2.

    Off-diagonal weight on each edge is 1/max(2,3) = 1/3; diagonals absorb
    the remainder, giving 2/3 at the ends and 1/3 in the middle.
    """
    edges = {(0, 0), (1, 1), (2, 2), (0, 1), (1, 0), (1, 2), (2, 1)}
    top = DirectedTopology(3, frozenset(edges))
    a = metropolis_weights(top)
    expected = np.array([
        [2 / 3, 1 / 3, 0.0],
        [1 / 3, 1 / 3, 1 / 3],
        [0.0, 1 / 3, 2 / 3],
    ])
    np.testing.assert_allclose(a.entries, expected, atol=1e-15)
    assert a.stochasticity == "doubly"


def test_metropolis_directed_ring_rows():
    """On a directed ring each receiver has two senders, so weights are 1/2."""
    top = build_topology("ring-digraph", 6)
    a = metropolis_weights(top)
    assert a.stochasticity == "row"
    for k in range(6):
        np.testing.assert_allclose(a.entries[top.in_neighbors(k), k], 0.5)
    np.testing.assert_allclose(a.entries.sum(axis=0), 1.0, atol=1e-14)


def test_metropolis_symmetric_double_stochastic_random():
    for seed in range(8):
        top = build_topology("undirected-random", 7, density=0.5, seed=seed)
        a = metropolis_weights(top)
        assert a.stochasticity == "doubly"
        np.testing.assert_allclose(a.entries, a.entries.T, atol=1e-15)
        np.testing.assert_allclose(a.entries.sum(axis=0), 1.0, atol=1e-12)
        np.testing.assert_allclose(a.entries.sum(axis=1), 1.0, atol=1e-12)
        assert np.all(a.entries >= 0)
        a.validate(top)


def test_combination_matrix_rejects_bad_input():
    with pytest.raises(ValueError, match="square"):
        CombinationMatrix(np.ones((2, 3)), "row")
    with pytest.raises(ValueError, match="nonnegative"):
        CombinationMatrix(np.array([[1.5, 0.0], [-0.5, 1.0]]), "row")
    with pytest.raises(ValueError, match="stochasticity"):
        CombinationMatrix(np.eye(2), "diagonal")
    with pytest.raises(ValueError, match="deviate"):
        CombinationMatrix(np.array([[0.9, 0.0], [0.0, 1.0]]), "row")


def test_validate_flags_positive_weight_off_pattern():
    top = build_topology("ring-digraph", 3)
    a = np.full((3, 3), 1 / 3)  # complete weights on a sparse ring
    with pytest.raises(ValueError, match="non-edge"):
        CombinationMatrix(a, "doubly").validate(top)


def test_combine_matches_matrix_product():
    rngs = np.random.default_rng(5)
    top = build_topology("undirected-random", 6, density=0.6, seed=2)
    a = metropolis_weights(top)
    blocks = rngs.standard_normal((6, 4))
    np.testing.assert_allclose(a.combine(blocks), mixing_matrix(a) @ blocks)


# ---------------------------------------------------------------------------
# disagreement operator and spectra
# ---------------------------------------------------------------------------

def test_disagreement_annihilates_consensus():
    """D = I - A maps consensual stacks to zero; for doubly stochastic A the
    column span is orthogonal to the all-ones vector as well."""
    rng = np.random.default_rng(0)
    for seed in range(6):
        top = build_topology("undirected-random", 6, density=0.5, seed=seed)
        d = disagreement_matrix(metropolis_weights(top))
        ones = np.ones(6)
        np.testing.assert_allclose(d @ ones, 0.0, atol=1e-14)
        np.testing.assert_allclose(ones @ d, 0.0, atol=1e-14)
        blocks = rng.standard_normal((6, 3))
        consensual = np.tile(blocks[0], (6, 1))
        np.testing.assert_allclose(d @ consensual, 0.0, atol=1e-14)


def test_spectral_summary_identity():
    s = spectral_summary(np.eye(4))
    assert s.sigma_max == pytest.approx(1.0)
    assert s.sigma_min_nonzero == pytest.approx(1.0)
    assert s.lambda_min_gram == pytest.approx(1.0)


def test_spectral_summary_rank_one():
    s = spectral_summary(np.outer([3.0, 4.0], [1.0, 0.0]))
    assert s.sigma_max == pytest.approx(5.0)
    assert s.sigma_min_nonzero == pytest.approx(5.0)
    # square rank-deficient: lambda_min of the Gram matrix is zero
    assert s.lambda_min_gram == pytest.approx(0.0, abs=1e-12)


def test_spectral_summary_wide_vs_tall():
    wide = np.array([[1.0, 0.0, 0.0], [0.0, 2.0, 0.0]])
    s = spectral_summary(wide)
    assert s.lambda_min_gram == pytest.approx(1.0)
    s_tall = spectral_summary(wide.T)
    assert s_tall.lambda_min_gram == 0.0
    assert s_tall.sigma_max == pytest.approx(2.0)


def test_spectral_summary_zero_matrix_raises():
    with pytest.raises(ValueError, match="no non-zero singular value"):
        spectral_summary(np.zeros((3, 3)))


def test_complete_metropolis_is_rank_one_averaging():
    """On the complete graph Metropolis weights equal 1/n everywhere, so the
    mixing matrix is the projector onto consensus."""
    top = complete_topology(5)
    a = metropolis_weights(top)
    np.testing.assert_allclose(a.entries, 1 / 5, atol=1e-15)
    s = spectral_summary(mixing_matrix(a))
    assert s.sigma_max == pytest.approx(1.0)
    assert s.sigma_min_nonzero == pytest.approx(1.0)


# ---------------------------------------------------------------------------
# edge-list round trip
# ---------------------------------------------------------------------------

def test_edge_list_roundtrip(tmp_path):
    for seed in range(4):
        top = build_topology("random-digraph", 7, density=0.35, seed=seed)
        path = tmp_path / f"graph{seed}.txt"
        to_edge_list(top, path)
        back = from_edge_list(path)
        assert back.n == top.n
        assert back.edges == top.edges


def test_edge_list_is_one_indexed_with_comment(tmp_path):
    top = build_topology("ring-digraph", 3)
    path = tmp_path / "ring.txt"
    to_edge_list(top, path)
    lines = path.read_text().strip().splitlines()
    assert lines[0].startswith("#")
    pairs = [tuple(int(v) for v in ln.split()) for ln in lines[1:]]
    assert min(min(p) for p in pairs) == 1
    assert (1, 2) in pairs


def test_from_edge_list_adds_self_loops(tmp_path):
    path = tmp_path / "bare.txt"
    path.write_text("1 2\n2 3\n3 1\n")
    top = from_edge_list(path)
    assert top.n == 3
    assert {(0, 0), (1, 1), (2, 2)} <= set(top.edges)


def test_from_edge_list_rejects_malformed(tmp_path):
    path = tmp_path / "bad.txt"
    path.write_text("1 2 3\n")
    with pytest.raises(ValueError, match="expected"):
        from_edge_list(path)
    path.write_text("0 1\n")
    with pytest.raises(ValueError, match="1-based"):
        from_edge_list(path)
    path.write_text("# only a comment\n")
    with pytest.raises(ValueError, match="no edges"):
        from_edge_list(path)
