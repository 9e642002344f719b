"""Combination matrices over strongly connected networks.

Conventions
-----------
Agents are indexed ``0..n-1`` in the Python API and ``1..n`` in text files.
A combination matrix ``a`` is left-stochastic: ``a[l, k]`` is the weight
agent ``k`` assigns to the message received from agent ``l``, so every
column sums to one.  Matrices are plain ``numpy`` arrays; use
:func:`check_combination_matrix` to validate one supplied by the user.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import reduce
from pathlib import Path

import numpy as np
from scipy.sparse.csgraph import breadth_first_order, connected_components

from .errors import (MalformedAdjacencyError, MatrixValidityError,
                     NotPrimitiveError, NumericalError, SymmetryError)

COLUMN_TOL = 1e-12
DENSE_EIG_MAX = 64
ENVELOPE_POWERS = 200
ENVELOPE_FLOOR = 1e-13


@dataclass(frozen=True)
class Adjacency:
    """Directed neighborhood structure.

    ``neighbors[k]`` is the set of agents whose messages reach agent ``k``;
    it contains ``k`` itself when ``k`` has a self-loop.
    """

    n: int
    neighbors: tuple

    def __post_init__(self):
        if self.n < 1:
            raise MalformedAdjacencyError("agent count must be at least 1")
        if len(self.neighbors) != self.n:
            raise MalformedAdjacencyError(
                f"expected {self.n} neighborhoods, got {len(self.neighbors)}")
        nb = tuple(frozenset(int(l) for l in s) for s in self.neighbors)
        for k, s in enumerate(nb):
            if not s:
                raise MalformedAdjacencyError(f"agent {k + 1} has an empty neighborhood")
            bad = [l for l in s if not 0 <= l < self.n]
            if bad:
                raise MalformedAdjacencyError(
                    f"agent {k + 1} lists out-of-range neighbors {sorted(b + 1 for b in bad)}")
        object.__setattr__(self, "neighbors", nb)

    @classmethod
    def from_edges(cls, n, edges):
        """Build from directed ``(l, k)`` pairs meaning ``l`` sends to ``k``."""
        nb = [set() for _ in range(n)]
        for l, k in edges:
            if not (0 <= l < n and 0 <= k < n):
                raise MalformedAdjacencyError(f"edge ({l + 1}, {k + 1}) outside 1..{n}")
            nb[k].add(l)
        return cls(n, tuple(nb))

    @classmethod
    def undirected(cls, n, pairs, self_loops=True):
        """Symmetric adjacency from unordered pairs, optionally with self-loops."""
        edges = []
        for l, k in pairs:
            edges += [(l, k), (k, l)]
        if self_loops:
            edges += [(k, k) for k in range(n)]
        return cls.from_edges(n, edges)

    @property
    def self_loops(self):
        return tuple(k in s for k, s in enumerate(self.neighbors))

    def edges(self):
        return sorted((l, k) for k, s in enumerate(self.neighbors) for l in s)

    def is_undirected(self):
        return all(k in self.neighbors[l] for k, s in enumerate(self.neighbors) for l in s)

    def degree(self, k):
        """Number of neighbors of ``k`` excluding ``k`` itself."""
        return len(self.neighbors[k] - {k})


def parse_edge_list(text):
    """Parse the edge-list format.

    The first non-comment line is ``agents N``; every following line is a
    directed edge ``l k`` with 1-based indices.  ``#`` starts a comment.
    """
    n = None
    edges = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        tok = line.split()
        if n is None:
            if len(tok) != 2 or tok[0].lower() != "agents":
                raise MalformedAdjacencyError(f"line {lineno}: expected header 'agents N'")
            try:
                n = int(tok[1])
            except ValueError:
                raise MalformedAdjacencyError(f"line {lineno}: bad agent count {tok[1]!r}") from None
            continue
        if len(tok) != 2:
            raise MalformedAdjacencyError(f"line {lineno}: expected 'l k', got {line!r}")
        try:
            l, k = int(tok[0]) - 1, int(tok[1]) - 1
        except ValueError:
            raise MalformedAdjacencyError(f"line {lineno}: non-integer edge {line!r}") from None
        edges.append((l, k))
    if n is None:
        raise MalformedAdjacencyError("missing 'agents N' header")
    return Adjacency.from_edges(n, edges)


def load_edge_list(path):
    return parse_edge_list(Path(path).read_text())


def format_edge_list(adj):
    lines = [f"agents {adj.n}"]
    lines += [f"{l + 1} {k + 1}" for l, k in adj.edges()]
    return "\n".join(lines) + "\n"


def check_combination_matrix(a, adj=None):
    """Validate a left-stochastic matrix and return it as a float array."""
    a = np.asarray(a, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise MatrixValidityError(f"combination matrix must be square, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise MatrixValidityError("combination matrix has non-finite entries")
    if a.min() < 0 or a.max() > 1:
        raise MatrixValidityError("combination weights must lie in [0, 1]")
    dev = np.abs(a.sum(axis=0) - 1).max()
    if dev > COLUMN_TOL:
        raise MatrixValidityError(f"columns must sum to 1 (max deviation {dev:.3e})")
    if adj is not None:
        if adj.n != a.shape[0]:
            raise MatrixValidityError("matrix and adjacency sizes differ")
        for k, s in enumerate(adj.neighbors):
            outside = [l for l in range(adj.n) if l not in s and a[l, k] != 0]
            if outside:
                raise MatrixValidityError(
                    f"agent {k + 1} puts weight on non-neighbors {[l + 1 for l in outside]}")
    return a


def build_averaging_matrix(adj):
    """Uniform averaging rule ``a[l, k] = 1/|N_k|`` over each neighborhood."""
    if not all(adj.self_loops):
        missing = [k + 1 for k, s in enumerate(adj.self_loops) if not s]
        raise MalformedAdjacencyError(f"averaging rule needs self-loops; missing at {missing}")
    a = np.zeros((adj.n, adj.n))
    for k, s in enumerate(adj.neighbors):
        a[list(s), k] = 1.0 / len(s)
    return a


def build_laplacian_matrix(adj):
    """Laplacian rule with gain ``1/d_max``; symmetric and doubly stochastic.

    Off-diagonal neighbors receive ``1/d_max`` and the diagonal takes the
    remainder ``1 - deg_k/d_max``, where degrees exclude self-loops.
    """
    if not adj.is_undirected():
        raise SymmetryError("Laplacian rule requires an undirected adjacency")
    n = adj.n
    deg = np.array([adj.degree(k) for k in range(n)])
    dmax = deg.max()
    if dmax == 0:
        return np.eye(n)
    a = np.zeros((n, n))
    for k, s in enumerate(adj.neighbors):
        for l in s - {k}:
            a[l, k] = 1.0 / dmax
    np.fill_diagonal(a, 1.0 - deg / dmax)
    # enforce exact symmetry (the construction already is; this guards rounding)
    return np.triu(a) + np.triu(a, 1).T


@dataclass(frozen=True)
class NetworkAnalysis:
    """Spectral summary of a primitive combination matrix.

    Attributes
    ----------
    pi : ndarray
        Perron eigenvector, positive and summing to one.
    beta2_magnitude : float
        Modulus of the second largest eigenvalue.
    primitive : bool
    kappa, beta : float
        Envelope ``|[A^m]_{lk} - pi_l| <= kappa beta^m`` fitted for m <= 200,
        with ``beta = (1 + |beta_2|)/2``.
    """

    pi: np.ndarray
    beta2_magnitude: float
    primitive: bool
    kappa: float
    beta: float


def _period(mask):
    """Period of an irreducible nonnegative matrix given its support."""
    n = mask.shape[0]
    order, pred = breadth_first_order(mask.astype(float), 0, directed=True,
                                      return_predecessors=True)
    level = np.full(n, -1)
    level[0] = 0
    for v in order[1:]:
        level[v] = level[pred[v]] + 1
    src, dst = np.nonzero(mask)
    diffs = np.abs(level[src] + 1 - level[dst])
    return reduce(math.gcd, diffs.tolist(), 0)


def perron_vector(a, tol=1e-12, max_iter=1_000_000):
    """Power iteration ``pi <- A pi`` from the uniform vector.

    Iterates until the residual ``|A pi - pi|`` stops improving, so the
    result is accurate to rounding rather than merely below ``tol``.
    """
    n = a.shape[0]
    pi = np.full(n, 1.0 / n)
    best = math.inf
    stall = 0
    for _ in range(max_iter):
        nxt = a @ pi
        nxt /= nxt.sum()
        res = np.abs(nxt - pi).max()
        pi = nxt
        if res < best:
            best, stall = res, 0
        else:
            stall += 1
        if best < tol and (stall >= 20 or res == 0):
            return pi
    raise NumericalError("power iteration for the Perron vector did not converge")


def _beta2_deflated(a, pi, tol=1e-10, max_iter=20000, seed=0):
    # B = A - pi 1^T removes the Perron pair and keeps the rest of the spectrum
    rng = np.random.default_rng(seed)
    x = rng.standard_normal(a.shape[0])
    x -= pi * x.sum()
    logs = []
    prev = None
    for it in range(1, max_iter + 1):
        y = a @ x - pi * x.sum()
        nrm = np.linalg.norm(y)
        if nrm == 0:
            return 0.0
        logs.append(math.log(nrm / np.linalg.norm(x)))
        x = y / nrm
        if it % 100 == 0:
            est = math.exp(np.mean(logs[len(logs) // 2:]))
            if prev is not None and abs(est - prev) < tol:
                return est
            prev = est
    return math.exp(np.mean(logs[len(logs) // 2:]))


def fit_envelope(a, pi, beta, m_max=ENVELOPE_POWERS, floor=ENVELOPE_FLOOR):
    """Smallest ``kappa`` with ``|[A^m] - pi 1^T| <= kappa beta^m`` for m <= m_max.

    Deviations below ``floor`` are rounding noise around the limit and are
    not fitted; otherwise ``kappa`` would be driven by ``eps / beta^m``.
    """
    p = np.eye(a.shape[0])
    kappa = np.abs(p - pi[:, None]).max()
    scale = 1.0
    for _ in range(m_max):
        p = a @ p
        scale *= beta
        dev = np.abs(p - pi[:, None]).max()
        if dev < floor:
            break
        kappa = max(kappa, dev / scale)
    return float(kappa)


def analyze_network(a):
    """Check primitivity and compute the Perron vector and mixing rate.

    Raises
    ------
    NotPrimitiveError
        With ``reason`` set to ``"reducible"`` or ``"periodic"``.
    """
    a = check_combination_matrix(a)
    n = a.shape[0]
    mask = a > 0
    ncomp, _ = connected_components(mask.astype(float), directed=True, connection="strong")
    if ncomp > 1:
        raise NotPrimitiveError("reducible", f"{ncomp} strongly connected components")
    per = _period(mask)
    if per > 1:
        raise NotPrimitiveError("periodic", f"period {per}")
    pi = perron_vector(a)
    if n == 1:
        beta2 = 0.0
    elif n <= DENSE_EIG_MAX:
        ev = np.sort(np.abs(np.linalg.eigvals(a)))[::-1]
        beta2 = float(ev[1])
    else:
        beta2 = _beta2_deflated(a, pi)
    beta2 = min(beta2, 1.0 - 1e-15)
    beta = (1.0 + beta2) / 2.0
    kappa = fit_envelope(a, pi, beta)
    return NetworkAnalysis(pi=pi, beta2_magnitude=beta2, primitive=True,
                           kappa=kappa, beta=beta)


def matrix_power_column(a, m, k):
    """Column ``k`` of ``A^m`` (``m = 0`` gives the identity column)."""
    if m < 0:
        raise ValueError("power must be nonnegative")
    a = np.asarray(a, dtype=float)
    e = np.zeros(a.shape[0])
    e[k] = 1.0
    # A^m e_k by repeated products keeps it O(m n^2)
    for _ in range(m):
        e = a @ e
    return e
