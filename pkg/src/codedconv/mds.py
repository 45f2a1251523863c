"""Real-valued (n, k) MDS coding with a Vandermonde generation matrix.

Worker indices are zero-based: subset ``S`` lists which rows of G (which
workers) produced the outputs handed to :func:`mds_decode`.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

PIVOT_TOL = 1e-12


class SingularSubmatrixError(ArithmeticError):
    pass


@dataclass(frozen=True)
class GenerationMatrix:
    nodes: np.ndarray
    k: int

    @property
    def n(self) -> int:
        return len(self.nodes)

    @property
    def matrix(self) -> np.ndarray:
        # row i: g_i^{k-1}, ..., g_i^0
        return np.vander(self.nodes, self.k, increasing=False)

    def rows(self, subset: Sequence[int]) -> np.ndarray:
        return self.matrix[list(subset)]


def chebyshev_nodes(n: int) -> np.ndarray:
    return np.cos((2 * np.arange(1, n + 1) - 1) * np.pi / (2 * n))


def build_vandermonde(n: int, k: int, nodes="integer") -> GenerationMatrix:
    """G with nodes g_i = i (i = 1..n) by default.

    ``nodes="chebyshev"`` spreads the nodes over (-1, 1), which keeps every
    k-row submatrix far better conditioned once n grows past ~10.  An
    explicit array of distinct reals is also accepted.
    """
    if not 1 <= k <= n:
        raise ValueError(f"need 1 <= k <= n, got n={n}, k={k}")
    if isinstance(nodes, str):
        if nodes == "integer":
            g = np.arange(1, n + 1, dtype=np.float64)
        elif nodes == "chebyshev":
            g = chebyshev_nodes(n)
        else:
            raise ValueError(f"unknown node family {nodes!r}")
    else:
        g = np.asarray(nodes, dtype=np.float64).reshape(-1)
        if len(g) != n:
            raise ValueError(f"need {n} nodes, got {len(g)}")
        if len(np.unique(g)) != n:
            raise ValueError("nodes must be pairwise distinct")
    return GenerationMatrix(g, k)


def mds_encode(G: GenerationMatrix, parts) -> np.ndarray:
    """Stack k equal-length vectors and return the n encoded rows (float64)."""
    rows = [np.asarray(p, dtype=np.float64).reshape(-1) for p in parts]
    if len(rows) != G.k or len({r.size for r in rows}) != 1:
        raise ValueError(f"expected {G.k} equal-length parts, got sizes {[r.size for r in rows]}")
    return G.matrix @ np.stack(rows)


def solve_partial_pivot(a: np.ndarray, b: np.ndarray, tol: float = PIVOT_TOL) -> np.ndarray:
    """Solve a @ x = b by Gaussian elimination with partial pivoting.

    ``b`` may hold many right-hand sides as columns.  Raises
    SingularSubmatrixError when a pivot falls below ``tol`` relative to the
    largest entry of ``a``.
    """
    a = np.array(a, dtype=np.float64)
    x = np.array(b, dtype=np.float64)
    vec = x.ndim == 1
    if vec:
        x = x[:, None]
    m = a.shape[0]
    if a.shape != (m, m) or x.shape[0] != m:
        raise ValueError("shape mismatch in solve")
    scale = max(np.abs(a).max(), 1.0) if m else 1.0
    for col in range(m):
        piv = col + int(np.argmax(np.abs(a[col:, col])))
        if abs(a[piv, col]) < tol * scale:
            raise SingularSubmatrixError(f"pivot {a[piv, col]:.3g} in column {col}")
        if piv != col:
            a[[col, piv]] = a[[piv, col]]
            x[[col, piv]] = x[[piv, col]]
        below = a[col + 1:, col] / a[col, col]
        a[col + 1:, col:] -= np.outer(below, a[col, col:])
        x[col + 1:] -= np.outer(below, x[col])
    for row in range(m - 1, -1, -1):
        x[row] -= a[row, row + 1:] @ x[row + 1:]
        x[row] /= a[row, row]
    return x[:, 0] if vec else x


def mds_decode(G: GenerationMatrix, subset: Sequence[int], outputs) -> np.ndarray:
    """Recover the k source rows from the outputs of the workers in ``subset``."""
    subset = [int(s) for s in subset]
    if len(subset) != G.k or len(set(subset)) != G.k:
        raise ValueError(f"need {G.k} distinct worker indices, got {subset}")
    if not all(0 <= s < G.n for s in subset):
        raise ValueError(f"worker index out of range 0..{G.n - 1}: {subset}")
    rows = [np.asarray(o, dtype=np.float64).reshape(-1) for o in outputs]
    if len(rows) != G.k or len({r.size for r in rows}) != 1:
        raise ValueError(f"expected {G.k} equal-length outputs")
    return solve_partial_pivot(G.rows(subset), np.stack(rows))


def condition_estimate(G: GenerationMatrix, subset: Sequence[int]) -> float:
    return float(np.linalg.cond(G.rows(subset), 1))


def worst_condition(G: GenerationMatrix) -> float:
    """Largest 1-norm condition number over all k-subsets (small n only)."""
    from itertools import combinations

    return max(condition_estimate(G, s) for s in combinations(range(G.n), G.k))
