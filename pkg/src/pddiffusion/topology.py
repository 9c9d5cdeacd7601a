"""Directed communication graphs, combination weights and spectral summaries.

Agents are numbered ``0 .. n-1``. An edge ``(l, k)`` means agent ``l`` sends
to agent ``k``; every node carries a self-loop. The in-neighborhood
``N_k = {l : (l, k) is an edge}`` therefore always contains ``k`` itself.

Combination weights are stored as an array ``entries`` with ``entries[l, k]``
the weight receiver ``k`` applies to the message of sender ``l``. The matrix
that acts on a stack of per-agent blocks is the transpose, ``entries.T``
(see :func:`mixing_matrix`); the ``row`` stochasticity tag refers to that
mixing matrix, i.e. every receiver's weights sum to one.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

TOPOLOGY_KINDS = ("ring-digraph", "random-digraph", "undirected-random")

#: relative threshold below which a singular value counts as zero
SV_ZERO_RTOL = 1e-10

#: tolerance for stochasticity checks
STOCHASTIC_TOL = 1e-12

_MAX_DRAWS = 100


@dataclass(frozen=True)
class DirectedTopology:
    """A strongly connected digraph with self-loops on every node."""

    n: int
    edges: frozenset = field(repr=False)

    def __post_init__(self):
        if self.n <= 0:
            raise ValueError(f"need at least one node, got n={self.n}")
        for k in range(self.n):
            if (k, k) not in self.edges:
                raise ValueError(f"node {k} is missing its self-loop")
        for l, k in self.edges:
            if not (0 <= l < self.n and 0 <= k < self.n):
                raise ValueError(f"edge ({l}, {k}) out of range for n={self.n}")
        if not _strongly_connected(self.n, self.edges):
            raise ValueError("topology is not strongly connected")

    def in_neighbors(self, k):
        """Sorted senders of agent ``k``, including ``k`` itself."""
        return sorted(l for (l, kk) in self.edges if kk == k)

    def out_neighbors(self, l):
        """Sorted receivers of agent ``l``, including ``l`` itself."""
        return sorted(k for (ll, k) in self.edges if ll == l)

    @property
    def is_symmetric(self):
        return all((k, l) in self.edges for (l, k) in self.edges)

    def adjacency(self):
        """Dense 0/1 array ``adj[l, k] = 1`` iff ``(l, k)`` is an edge."""
        adj = np.zeros((self.n, self.n), dtype=int)
        for l, k in self.edges:
            adj[l, k] = 1
        return adj


def _strongly_connected(n, edges):
    fwd = [[] for _ in range(n)]
    bwd = [[] for _ in range(n)]
    for l, k in edges:
        fwd[l].append(k)
        bwd[k].append(l)
    return _reaches_all(n, fwd) and _reaches_all(n, bwd)


def _reaches_all(n, adj):
    seen = [False] * n
    stack = [0]
    seen[0] = True
    count = 1
    while stack:
        u = stack.pop()
        for v in adj[u]:
            if not seen[v]:
                seen[v] = True
                count += 1
                stack.append(v)
    return count == n


def build_topology(kind, n, density=0.3, seed=0):
    """Build a strongly connected topology with self-loops.

    Parameters
    ----------
    kind : str
        One of ``ring-digraph`` (directed cycle), ``random-digraph``
        (each ordered pair kept with probability ``density``) or
        ``undirected-random`` (each unordered pair kept with probability
        ``density``, both directions added).
    n : int
        Number of agents.
    density : float
        Edge probability for the random kinds, in ``(0, 1]``. Ignored for
        ``ring-digraph``.
    seed : int
        Seed for the random draws; identical seeds give identical graphs.

    Returns
    -------
    DirectedTopology

    Raises
    ------
    ValueError
        For an unknown kind, ``n <= 0`` or a density outside ``(0, 1]``.
    RuntimeError
        If no strongly connected draw is found within 100 attempts.
    """
    if kind not in TOPOLOGY_KINDS:
        raise ValueError(f"unknown topology kind {kind!r}; expected one of {TOPOLOGY_KINDS}")
    if n <= 0:
        raise ValueError(f"need at least one node, got n={n}")

    loops = {(k, k) for k in range(n)}
    if kind == "ring-digraph":
        ring = {(k, (k + 1) % n) for k in range(n)}
        return DirectedTopology(n, frozenset(loops | ring))

    if not (0.0 < density <= 1.0):
        raise ValueError(f"density must lie in (0, 1], got {density}")
    rng = np.random.default_rng(seed)
    for _ in range(_MAX_DRAWS):
        edges = set(loops)
        if kind == "random-digraph":
            for l in range(n):
                for k in range(n):
                    if l != k and rng.random() < density:
                        edges.add((l, k))
        else:  # undirected-random
            for l in range(n):
                for k in range(l + 1, n):
                    if rng.random() < density:
                        edges.add((l, k))
                        edges.add((k, l))
        if _strongly_connected(n, edges):
            return DirectedTopology(n, frozenset(edges))
    raise RuntimeError(
        f"no strongly connected {kind} with n={n}, density={density} "
        f"found in {_MAX_DRAWS} draws; increase density"
    )


# ---------------------------------------------------------------------------
# combination weights
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CombinationMatrix:
    """Nonnegative combination weights on a topology.

    ``entries[l, k]`` is the weight receiver ``k`` gives to sender ``l``;
    it is zero whenever ``(l, k)`` is not an edge. ``stochasticity`` is one
    of ``row``, ``column`` or ``doubly``, stated for the mixing matrix
    ``entries.T`` (so ``row`` means each receiver's weights sum to one).
    """

    entries: np.ndarray = field(repr=False)
    stochasticity: str

    def __post_init__(self):
        a = np.asarray(self.entries, dtype=float)
        object.__setattr__(self, "entries", a)
        if a.ndim != 2 or a.shape[0] != a.shape[1]:
            raise ValueError(f"entries must be square, got shape {a.shape}")
        if self.stochasticity not in ("row", "column", "doubly"):
            raise ValueError(f"unknown stochasticity {self.stochasticity!r}")
        if np.any(a < 0):
            raise ValueError("combination weights must be nonnegative")
        recv = a.sum(axis=0)  # per-receiver sums = rows of entries.T
        send = a.sum(axis=1)
        if self.stochasticity in ("row", "doubly"):
            if np.max(np.abs(recv - 1.0)) > STOCHASTIC_TOL:
                raise ValueError("receiver weight sums deviate from 1 beyond 1e-12")
        if self.stochasticity in ("column", "doubly"):
            if np.max(np.abs(send - 1.0)) > STOCHASTIC_TOL:
                raise ValueError("sender weight sums deviate from 1 beyond 1e-12")

    @property
    def n(self):
        return self.entries.shape[0]

    def validate(self, topology):
        """Check the sparsity pattern against ``topology`` (raises on mismatch)."""
        if topology.n != self.n:
            raise ValueError(f"size mismatch: weights n={self.n}, topology n={topology.n}")
        nz = np.argwhere(self.entries > 0)
        for l, k in nz:
            if (int(l), int(k)) not in topology.edges:
                raise ValueError(f"positive weight on non-edge ({l}, {k})")
        return self

    def combine(self, blocks):
        """Apply one synchronous communication round to stacked blocks.

        ``blocks`` has shape ``(n, m)``; row ``k`` of the result is
        ``sum_l entries[l, k] * blocks[l]``.
        """
        return self.entries.T @ blocks


def mixing_matrix(weights):
    """The matrix acting on stacked per-agent blocks (``entries.T``)."""
    return weights.entries.T.copy()


def disagreement_matrix(weights):
    """``D = I - entries.T``, the blockwise disagreement operator."""
    n = weights.n
    return np.eye(n) - weights.entries.T


def metropolis_weights(topology):
    """Metropolis combination weights for ``topology``.

    For a symmetric topology the classic rule
    ``a[l, k] = 1 / max(|N_k|, |N_l|)`` for ``l != k`` with the diagonal
    absorbing the remainder; the result is symmetric and doubly stochastic.
    For a directed topology the row-normalized variant
    ``a[l, k] = 1 / |N_k|`` for every sender ``l`` of ``k``.

    Neighborhood sizes count the self-loop.
    """
    n = topology.n
    a = np.zeros((n, n))
    deg = [len(topology.in_neighbors(k)) for k in range(n)]
    if topology.is_symmetric:
        for l, k in topology.edges:
            if l != k:
                a[l, k] = 1.0 / max(deg[k], deg[l])
        for k in range(n):
            a[k, k] = 1.0 - a[:, k].sum()
        return CombinationMatrix(a, "doubly").validate(topology)
    for k in range(n):
        for l in topology.in_neighbors(k):
            a[l, k] = 1.0 / deg[k]
    return CombinationMatrix(a, "row").validate(topology)


# ---------------------------------------------------------------------------
# spectral summaries
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SpectralSummary:
    """Largest/smallest-nonzero singular values and ``lambda_min(M M^T)``."""

    sigma_max: float
    sigma_min_nonzero: float
    lambda_min_gram: float


def spectral_summary(mat):
    """Singular-value summary of a matrix.

    Returns
    -------
    SpectralSummary
        ``sigma_max`` and ``sigma_min_nonzero`` are the extreme singular
        values (zeros excluded, relative threshold ``1e-10``);
        ``lambda_min_gram`` is the smallest eigenvalue of ``M @ M.T``
        including exact zeros forced by shape.

    Raises
    ------
    ValueError
        If the matrix has no non-zero singular value.
    """
    m = np.atleast_2d(np.asarray(mat, dtype=float))
    s = np.linalg.svd(m, compute_uv=False)
    if s.size == 0 or s[0] <= 0.0:
        raise ValueError("matrix has no non-zero singular value")
    nonzero = s[s > SV_ZERO_RTOL * s[0]]
    if nonzero.size == 0:
        raise ValueError("matrix has no non-zero singular value")
    rows, cols = m.shape
    lam_min = 0.0 if rows > cols else float(s[-1] ** 2)
    return SpectralSummary(
        sigma_max=float(s[0]),
        sigma_min_nonzero=float(nonzero[-1]),
        lambda_min_gram=lam_min,
    )


# ---------------------------------------------------------------------------
# edge-list serialization
# ---------------------------------------------------------------------------

def to_edge_list(topology, path):
    """Write ``topology`` as one ``l k`` pair per line, 1-indexed."""
    lines = [f"# directed edge list, 1-indexed, n = {topology.n}"]
    for l, k in sorted(topology.edges):
        lines.append(f"{l + 1} {k + 1}")
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def from_edge_list(path):
    """Read an edge-list file written by :func:`to_edge_list`.

    ``#`` starts a comment; node indices are 1-based; self-loops are added
    for every node whether or not the file lists them.
    """
    edges = set()
    n = 0
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            if len(parts) != 2:
                raise ValueError(f"{path}:{lineno}: expected 'l k', got {raw.strip()!r}")
            l, k = (int(p) for p in parts)
            if l < 1 or k < 1:
                raise ValueError(f"{path}:{lineno}: indices are 1-based, got {l} {k}")
            edges.add((l - 1, k - 1))
            n = max(n, l, k)
    if n == 0:
        raise ValueError(f"{path}: no edges found")
    edges |= {(k, k) for k in range(n)}
    return DirectedTopology(n, frozenset(edges))
