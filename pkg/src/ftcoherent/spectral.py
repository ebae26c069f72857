"""Leading singular triples of sparse matrices.

Thick-restarted Golub-Kahan-Lanczos bidiagonalisation with full
reorthogonalisation.  After ``j`` steps the bases satisfy ``A V = P B`` with
``B`` upper triangular (bidiagonal until the first restart) and
``A^T P = V B^T + r e_j^T``; Ritz triples come from the SVD of ``B`` and the
residual of triple ``i`` is ``|beta * U_B[j, i]|``.  Restarting keeps the
leading Ritz vectors, which makes ``B`` diagonal plus one extra column.

Convention: ``M v = sigma u`` and ``M^T u = sigma v``, so ``u`` lives on the
row space (initial boxes) and ``v`` on the column space (image boxes).
"""
from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

log = logging.getLogger(__name__)


class SpectralConvergenceError(RuntimeError):
    """Lanczos did not reach the requested residual."""

    def __init__(self, message: str, best_residual: float):
        super().__init__(message)
        self.best_residual = best_residual


class IllPosedWarning(UserWarning):
    """The leading singular value is not simple."""


@dataclass(frozen=True, eq=False)
class SingularTriple:
    sigma: float
    u: np.ndarray
    v: np.ndarray
    residual: float
    iterations: int
    degenerate: bool = False

    def __repr__(self) -> str:
        return (f"SingularTriple(sigma={self.sigma:.12g}, residual={self.residual:.3g}, "
                f"iterations={self.iterations}, degenerate={self.degenerate})")


def _matvecs(M):
    if sp.issparse(M):
        # the transpose is a CSC view; an explicit copy would double the memory
        A = sp.csr_matrix(M)
        At = A.T
        return A.shape, (lambda x: A @ x), (lambda y: At @ y)
    A = np.asarray(M, dtype=float)
    return A.shape, (lambda x: A @ x), (lambda y: A.T @ y)


def _orth(w, Q, passes=2):
    """Project ``w`` off the columns of ``Q``; returns the accumulated coefficients."""
    h = np.zeros(Q.shape[1])
    if Q.shape[1] == 0:
        return w, h
    for _ in range(passes):
        c = Q.T @ w
        w = w - Q @ c
        h += c
    return w, h


def _fresh(rng, n, Q):
    # random unit vector orthogonal to Q, or None if Q spans everything
    for _ in range(3):
        w, _ = _orth(rng.standard_normal(n), Q)
        nw = np.linalg.norm(w)
        if nw > 1e-8:
            return w / nw
    return None


def true_residual(M, sigma, u, v) -> float:
    return float(max(np.linalg.norm(M @ v - sigma * u), np.linalg.norm(M.T @ u - sigma * v)))


def top_k_singular(M, k: int = 3, tol: float = 1e-10, max_iter: int = 500, seed: int = 0, *,
                   ncv: int | None = None, degenerate_tol: float = 1e-12) -> list[SingularTriple]:
    """Top ``k`` singular triples of ``M`` in descending order.

    ``tol`` bounds ``max(|M v - s u|, |M^T u - s v|)`` of every returned
    triple; ``max_iter`` caps the number of restart cycles.  The entry of
    ``u`` with the largest magnitude is made positive.  Triples whose
    singular value lies within ``degenerate_tol`` of a neighbour are
    flagged ``degenerate``.
    """
    (m, n), A, At = _matvecs(M)
    if k < 1:
        raise ValueError("k must be at least 1")
    if not tol > 0:
        raise ValueError("tol must be positive")
    dmin = min(m, n)
    if k > dmin:
        raise ValueError(f"k={k} exceeds min dimension {dmin}")
    rng = np.random.default_rng(seed)
    mdim = ncv or max(2 * k + 10, 24)
    mdim = min(mdim, dmin)
    keep = min(max(k + 3, mdim // 2), mdim - 1)
    # a full bidiagonalisation of a small matrix is exact
    full = mdim == dmin

    V = np.zeros((n, mdim + 1))
    P = np.zeros((m, mdim))
    B = np.zeros((mdim, mdim))
    V[:, 0] = rng.standard_normal(n)
    V[:, 0] /= np.linalg.norm(V[:, 0])
    j0 = 0
    best = np.inf
    for it in range(1, max_iter + 1):
        beta = 0.0
        r = np.zeros(n)
        for j in range(j0, mdim):
            w, h = _orth(A(V[:, j]), P[:, :j])
            a = np.linalg.norm(w)
            B[:j, j] = h
            if a > 1e-14:
                P[:, j] = w / a
                B[j, j] = a
            else:
                pj = _fresh(rng, m, P[:, :j])
                B[j, j] = 0.0
                if pj is None:
                    mdim = j
                    break
                P[:, j] = pj
            r, _ = _orth(At(P[:, j]), V[:, :j + 1])
            beta = np.linalg.norm(r)
            if j + 1 < mdim:
                if beta > 1e-14:
                    V[:, j + 1] = r / beta
                else:
                    vj = _fresh(rng, n, V[:, :j + 1])
                    if vj is None:
                        mdim = j + 1
                        beta = 0.0
                        break
                    V[:, j + 1] = vj
        Bm = B[:mdim, :mdim]
        ncol = mdim
        if full and beta > 1e-14:
            # the row space is exhausted: append the last Lanczos vector
            V[:, mdim] = r / beta
            Bm = np.hstack([Bm, np.zeros((mdim, 1))])
            Bm[mdim - 1, mdim] = beta
            ncol = mdim + 1
            beta = 0.0
        UB, s, VBt = np.linalg.svd(Bm)
        res = np.abs(beta * UB[mdim - 1, :])
        kr = min(k, s.size)
        worst = float(res[:kr].max())
        best = min(best, worst)
        if worst <= tol or full:
            break
        # thick restart on the leading Ritz vectors
        kk = min(keep, s.size - 1)
        V[:, :kk] = V[:, :mdim] @ VBt[:kk].T
        P[:, :kk] = P[:, :mdim] @ UB[:, :kk]
        B[:] = 0.0
        B[np.arange(kk), np.arange(kk)] = s[:kk]
        if beta > 1e-14:
            V[:, kk] = r / beta
        else:
            V[:, kk] = _fresh(rng, n, V[:, :kk])
        V[:, kk + 1:] = 0.0
        P[:, kk:] = 0.0
        j0 = kk
    else:
        raise SpectralConvergenceError(
            f"no convergence in {max_iter} restarts (best residual {best:.3g} > tol {tol:.3g})", best)

    U = P[:, :mdim] @ UB[:, :k]
    W = V[:, :ncol] @ VBt[:k].T
    Mop = sp.csr_matrix(M) if sp.issparse(M) else np.asarray(M, dtype=float)
    out = []
    for i in range(k):
        sig = max(float(s[i]), 0.0)
        u = U[:, i] / np.linalg.norm(U[:, i])
        v = W[:, i] / np.linalg.norm(W[:, i])
        if u[np.argmax(np.abs(u))] < 0:
            u, v = -u, -v
        res_i = true_residual(Mop, sig, u, v)
        if res_i > tol:
            raise SpectralConvergenceError(f"triple {i + 1} residual {res_i:.3g} exceeds tol {tol:.3g}", res_i)
        close = [abs(s[i] - s[j]) < degenerate_tol for j in (i - 1, i + 1) if 0 <= j < s.size]
        out.append(SingularTriple(sig, u, v, res_i, it, any(close)))
    if len(s) > 1 and s[0] - s[1] < 1e-12:
        warnings.warn("leading singular value is not simple; coherent-set extraction is ill-posed",
                      IllPosedWarning, stacklevel=2)
    return out
