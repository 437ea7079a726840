"""Sparse kernels: CSR helpers, direct LU, ILU(0) smoothing and restarted GMRES.

Storage is scipy CSR with sorted, duplicate-free indices. The ILU(0)
factorization is pattern-preserving (no fill) and written over the raw CSR
arrays so it stays fast under numba. GMRES is right-preconditioned, so its
recurrence tracks the true residual of the unpreconditioned system.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from numba import njit
from scipy.sparse.linalg import splu


class LinalgError(ValueError):
    pass


def as_csr(A) -> sp.csr_matrix:
    M = sp.csr_matrix(A)
    if not M.has_sorted_indices:
        M.sort_indices()
    return M


def spmv(A, x):
    if A.shape[1] != len(x):
        raise LinalgError(f"spmv dimension mismatch: {A.shape} @ {len(x)}")
    return A @ np.asarray(x)


def spgemm(A, B):
    if A.shape[1] != B.shape[0]:
        raise LinalgError(f"spgemm dimension mismatch: {A.shape} @ {B.shape}")
    C = as_csr(A @ B)
    C.sum_duplicates()
    C.sort_indices()
    return C


def lu_solve(A, b, refine=1):
    """Direct sparse LU solve with a step of iterative refinement."""
    A = sp.csc_matrix(A)
    try:
        lu = splu(A)
    except RuntimeError as exc:
        raise LinalgError(f"singular matrix in LU factorization: {exc}") from exc
    x = lu.solve(np.asarray(b, dtype=float))
    for _ in range(refine):
        x = x + lu.solve(b - A @ x)
    return x


# ---------------------------------------------------------------------------
# ILU(0)
# ---------------------------------------------------------------------------

@njit(cache=True)
def _ilu0_factor(n, indptr, indices, data):
    luval = data.copy()
    diag_pos = np.empty(n, dtype=np.int64)
    for i in range(n):
        diag_pos[i] = -1
        for p in range(indptr[i], indptr[i + 1]):
            if indices[p] == i:
                diag_pos[i] = p
                break
        if diag_pos[i] < 0:
            return luval, diag_pos, i  # structurally missing diagonal
    colmap = np.full(n, -1, dtype=np.int64)
    for i in range(n):
        for p in range(indptr[i], indptr[i + 1]):
            colmap[indices[p]] = p
        for p in range(indptr[i], indptr[i + 1]):
            k = indices[p]
            if k >= i:
                break
            ukk = luval[diag_pos[k]]
            if ukk == 0.0:
                return luval, diag_pos, k
            lik = luval[p] / ukk
            luval[p] = lik
            for pk in range(diag_pos[k] + 1, indptr[k + 1]):
                j = indices[pk]
                pj = colmap[j]
                if pj >= 0:
                    luval[pj] -= lik * luval[pk]
        if luval[diag_pos[i]] == 0.0:
            return luval, diag_pos, i
        for p in range(indptr[i], indptr[i + 1]):
            colmap[indices[p]] = -1
    return luval, diag_pos, -1


@njit(cache=True)
def _ilu0_solve(n, indptr, indices, luval, diag_pos, b):
    x = b.copy()
    for i in range(n):  # forward: L has unit diagonal
        s = x[i]
        for p in range(indptr[i], indptr[i + 1]):
            j = indices[p]
            if j >= i:
                break
            s -= luval[p] * x[j]
        x[i] = s
    for i in range(n - 1, -1, -1):  # backward: U includes the diagonal
        s = x[i]
        for p in range(diag_pos[i] + 1, indptr[i + 1]):
            s -= luval[p] * x[indices[p]]
        x[i] = s / luval[diag_pos[i]]
    return x


@dataclass
class Ilu0Factor:
    """Zero-fill incomplete LU factors sharing the matrix sparsity pattern."""

    n: int
    indptr: np.ndarray
    indices: np.ndarray
    luval: np.ndarray
    diag_pos: np.ndarray

    def solve(self, r):
        return _ilu0_solve(self.n, self.indptr, self.indices, self.luval, self.diag_pos,
                           np.asarray(r, dtype=float))

    @property
    def L(self) -> sp.csr_matrix:
        M = sp.csr_matrix(
            (self.luval.copy(), self.indices.copy(), self.indptr.copy()), shape=(self.n, self.n)
        )
        out = sp.tril(M, k=-1).tolil()
        out.setdiag(1.0)
        return out.tocsr()

    @property
    def U(self) -> sp.csr_matrix:
        M = sp.csr_matrix(
            (self.luval.copy(), self.indices.copy(), self.indptr.copy()), shape=(self.n, self.n)
        )
        return sp.triu(M, k=0).tocsr()


def ilu0(A) -> Ilu0Factor:
    A = as_csr(A)
    n = A.shape[0]
    if A.shape[0] != A.shape[1]:
        raise LinalgError("ilu0 needs a square matrix")
    luval, diag_pos, bad = _ilu0_factor(
        n, A.indptr.astype(np.int64), A.indices.astype(np.int64), A.data.astype(float)
    )
    if bad >= 0:
        raise LinalgError(f"zero or missing pivot at row {bad} in ILU(0)")
    return Ilu0Factor(n, A.indptr.astype(np.int64), A.indices.astype(np.int64), luval, diag_pos)


# ---------------------------------------------------------------------------
# GMRES
# ---------------------------------------------------------------------------

@dataclass
class GmresInfo:
    converged: bool
    iterations: int
    residuals: list = field(default_factory=list)
    breakdown: bool = False
    stagnated: bool = False


def gmres(A, b, M=None, tol=1e-6, max_it=500, restart=50, x0=None):
    """Right-preconditioned restarted GMRES.

    ``A`` is a matrix or a callable matvec; ``M`` a callable applying the
    preconditioner to a vector. Stops when the residual 2-norm drops below
    ``tol`` absolutely or relative to ``|b|``. Returns ``(x, GmresInfo)``.
    """
    matvec = A if callable(A) else (lambda v: A @ v)
    precond = M if M is not None else (lambda v: v)
    b = np.asarray(b, dtype=float)
    n = len(b)
    x = np.zeros(n) if x0 is None else np.asarray(x0, dtype=float).copy()

    norm_b = np.linalg.norm(b)
    target = max(tol, tol * norm_b)
    r = b - matvec(x) if x.any() else b.copy()
    beta = np.linalg.norm(r)
    info = GmresInfo(converged=False, iterations=0, residuals=[float(beta)])
    if beta <= target or norm_b == 0.0:
        info.converged = True
        return x, info

    it = 0
    while it < max_it:
        m = min(restart, max_it - it)
        V = np.zeros((m + 1, n))
        H = np.zeros((m + 1, m))
        cs = np.zeros(m)
        sn = np.zeros(m)
        g = np.zeros(m + 1)
        V[0] = r / beta
        g[0] = beta
        j_used = 0
        happy = False
        for j in range(m):
            w = matvec(precond(V[j]))
            for i in range(j + 1):  # modified Gram-Schmidt
                H[i, j] = np.dot(w, V[i])
                w -= H[i, j] * V[i]
            H[j + 1, j] = np.linalg.norm(w)
            if H[j + 1, j] > 1e-300:
                V[j + 1] = w / H[j + 1, j]
            else:
                happy = True
            for i in range(j):  # apply stored Givens rotations
                t = cs[i] * H[i, j] + sn[i] * H[i + 1, j]
                H[i + 1, j] = -sn[i] * H[i, j] + cs[i] * H[i + 1, j]
                H[i, j] = t
            denom = np.hypot(H[j, j], H[j + 1, j])
            cs[j], sn[j] = H[j, j] / denom, H[j + 1, j] / denom
            H[j, j] = denom
            H[j + 1, j] = 0.0
            g[j + 1] = -sn[j] * g[j]
            g[j] = cs[j] * g[j]
            j_used = j + 1
            it += 1
            res = abs(g[j + 1])
            info.residuals.append(float(res))
            if res <= target or happy:
                break
        y = np.zeros(j_used)
        for i in range(j_used - 1, -1, -1):
            y[i] = (g[i] - H[i, i + 1:j_used] @ y[i + 1:j_used]) / H[i, i]
        x = x + precond(V[:j_used].T @ y)
        r = b - matvec(x)
        beta = np.linalg.norm(r)
        info.residuals[-1] = float(beta)  # replace estimate by the true norm
        info.iterations = it
        if beta <= target:
            info.converged = True
            info.breakdown = happy
            return x, info
        if happy:
            # exact subspace solution that still misses the target
            info.breakdown = True
            return x, info
    # flag stagnation over the last restart cycle
    hist = info.residuals
    if len(hist) > restart and hist[-1] > 0.99 * hist[-restart - 1]:
        info.stagnated = True
    return x, info


# ---------------------------------------------------------------------------
# Matrix Market I/O
# ---------------------------------------------------------------------------

def write_matrix_market(path, A):
    from scipy.io import mmwrite

    mmwrite(path, sp.coo_matrix(A))


def read_matrix_market(path) -> sp.csr_matrix:
    from scipy.io import mmread

    return as_csr(mmread(path))
