"""Independent reference implementations used only by the tests."""
from __future__ import annotations

import itertools

import numpy as np


def jacobi_svd(A, sweeps: int = 60, tol: float = 1e-15):
    """One-sided Jacobi SVD of a dense matrix.

    Rotates column pairs of ``A`` until they are mutually orthogonal; the
    column norms are then the singular values.  Returns ``U, s, V`` with
    ``A = U diag(s) V^T`` and ``s`` descending.
    """
    A = np.array(A, dtype=float)
    transposed = A.shape[0] < A.shape[1]
    if transposed:
        A = A.T
    m, n = A.shape
    U = A.copy()
    V = np.eye(n)
    for _ in range(sweeps):
        off = 0.0
        for i in range(n - 1):
            for j in range(i + 1, n):
                a = U[:, i] @ U[:, i]
                b = U[:, j] @ U[:, j]
                c = U[:, i] @ U[:, j]
                if abs(c) <= tol * np.sqrt(a * b) or c == 0.0:
                    continue
                off = max(off, abs(c) / np.sqrt(a * b))
                zeta = (b - a) / (2.0 * c)
                t = np.sign(zeta) / (abs(zeta) + np.sqrt(1.0 + zeta * zeta)) if zeta != 0 else 1.0
                cs = 1.0 / np.sqrt(1.0 + t * t)
                sn = cs * t
                ui = U[:, i].copy()
                U[:, i] = cs * ui - sn * U[:, j]
                U[:, j] = sn * ui + cs * U[:, j]
                vi = V[:, i].copy()
                V[:, i] = cs * vi - sn * V[:, j]
                V[:, j] = sn * vi + cs * V[:, j]
        if off <= tol:
            break
    s = np.linalg.norm(U, axis=0)
    order = np.argsort(-s, kind="stable")
    s = s[order]
    V = V[:, order]
    U = U[:, order]
    nz = s > 0
    U[:, nz] /= s[nz]
    if transposed:
        U, V = V, U
    return U, s, V


def fd_gradient(fun, x, y, t, h=1e-6):
    """Central differences of a scalar field in x and y."""
    gx = (fun(x + h, y, t) - fun(x - h, y, t)) / (2 * h)
    gy = (fun(x, y + h, t) - fun(x, y - h, t)) / (2 * h)
    return gx, gy


def fd_jacobian_det(fmap, p, d=1e-6):
    """det of the five-point central-difference Jacobian of ``fmap`` at rows of ``p``.

    The jet map stretches by ~1e3 over ten days, so the three-point stencil's
    O(d^2) error alone exceeds 1e-4 at any usable step.
    """
    cols = []
    for e in (np.array([d, 0.0]), np.array([0.0, d])):
        cols.append((8 * (fmap(p + e) - fmap(p - e)) - (fmap(p + 2 * e) - fmap(p - 2 * e))) / (12 * d))
    return cols[0][:, 0] * cols[1][:, 1] - cols[1][:, 0] * cols[0][:, 1]


def brute_force_best_partition(P, p):
    """Exhaustive maximum of the two-term coherence over mass-matched pairs.

    Enumerates every split of the initial boxes and every split of the
    image boxes whose mass equals the initial split's mass.
    """
    P = np.asarray(P, dtype=float)
    p = np.asarray(p, dtype=float)
    q = p @ P
    nx, ny = P.shape
    best = (-np.inf, None, None)
    for r in range(1, nx):
        for xs in itertools.combinations(range(nx), r):
            x1 = np.zeros(nx, bool)
            x1[list(xs)] = True
            mu1 = p[x1].sum()
            for rr in range(1, ny):
                for ys in itertools.combinations(range(ny), rr):
                    y1 = np.zeros(ny, bool)
                    y1[list(ys)] = True
                    if abs(q[y1].sum() - mu1) > 1e-12:
                        continue
                    w = (p * x1) @ P
                    rho = w[y1].sum() / mu1 + (q - w)[~y1].sum() / (1 - mu1)
                    if rho > best[0] + 1e-12:
                        best = (rho, x1, y1)
    return best
