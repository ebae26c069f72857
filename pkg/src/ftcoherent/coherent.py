"""Coherent partition pairs from the second singular triple.

The singular vectors are unweighted into functions ``f = u / sqrt(p)`` on the
initial boxes and ``g = v / sqrt(q)`` on the image boxes.  A line search over
thresholds ``b`` of ``f`` forms ``X1 = {f >= b}``; for each ``b`` the image
threshold ``c`` is the one whose upper set ``Y1 = {g >= c}`` has the mass
closest to ``mu(X1)``.  The winner maximises

    rho = <L 1_X1, 1_Y1>_nu / mu(X1) + <L 1_X2, 1_Y2>_nu / mu(X2),

which never exceeds ``1 + sigma_2`` for mass-matched pairs.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .operator import TransferMatrices
from .spectral import SingularTriple

BOUND_SLACK = 1e-9


@dataclass(frozen=True, eq=False)
class CoherentPartition:
    """Labels in {1, 2} for every initial and image box, with masses and ``rho``."""

    b: float
    c: float
    x_labels: np.ndarray
    y_labels: np.ndarray
    mu: tuple[float, float]
    nu: tuple[float, float]
    rho: float
    sigma2: float | None = None
    extra: dict = field(default_factory=dict)

    @property
    def X1(self) -> np.ndarray:
        return np.flatnonzero(self.x_labels == 1)

    @property
    def X2(self) -> np.ndarray:
        return np.flatnonzero(self.x_labels == 2)

    @property
    def Y1(self) -> np.ndarray:
        return np.flatnonzero(self.y_labels == 1)

    @property
    def Y2(self) -> np.ndarray:
        return np.flatnonzero(self.y_labels == 2)

    @property
    def bound_slack(self) -> float | None:
        """``1 + sigma_2 - rho`` (nonnegative when the bound holds)."""
        return None if self.sigma2 is None else 1.0 + self.sigma2 - self.rho

    def swapped(self) -> "CoherentPartition":
        return CoherentPartition(self.b, self.c, 3 - self.x_labels, 3 - self.y_labels, self.mu[::-1],
                                 self.nu[::-1], self.rho, self.sigma2, dict(self.extra))

    def summary(self) -> dict:
        return dict(b=self.b, c=self.c, mu1=self.mu[0], mu2=self.mu[1], nu1=self.nu[0], nu2=self.nu[1],
                    rho=self.rho, sigma2=self.sigma2, bound_slack=self.bound_slack)


def mass_tol(tm: TransferMatrices) -> float:
    """Atomic resolution of mass matching, ``2 (max p + max q)``."""
    return 2.0 * (float(np.max(tm.p)) + float(np.max(tm.q)))


def singular_to_functions(triple: SingularTriple, p, q) -> tuple[np.ndarray, np.ndarray]:
    """Unweight a singular pair: ``f = u / sqrt(p)``, ``g = v / sqrt(q)``."""
    return _unweight(triple.u, p, "p"), _unweight(triple.v, q, "q")


def _unweight(x, w, name):
    x = np.asarray(x, dtype=float)
    w = np.asarray(w, dtype=float)
    if x.shape != w.shape:
        raise ValueError(f"vector and {name} differ in length")
    zero = ~(w > 0)
    if np.any(zero & (x != 0)):
        raise ValueError(f"{name} vanishes where the singular vector does not")
    out = np.zeros_like(x)
    out[~zero] = x[~zero] / np.sqrt(w[~zero])
    return out


def coherence(tm: TransferMatrices, x1, y1) -> float:
    """Two-term coherence of the pair ``(X1, Y1)`` given as boolean masks or labels."""
    x1 = _mask(x1, tm.P.shape[0])
    y1 = _mask(y1, tm.P.shape[1])
    mu1 = float(tm.p[x1].sum())
    mu2 = float(tm.p[~x1].sum())
    if mu1 <= 0 or mu2 <= 0:
        raise ValueError("both initial sets need positive mass")
    w = tm.P.T @ (tm.p * x1)
    a11 = float(w[y1].sum())
    a22 = float((tm.q - w)[~y1].sum())
    return a11 / mu1 + a22 / mu2


def _mask(x, n):
    x = np.asarray(x)
    if x.dtype == bool:
        if x.shape != (n,):
            raise ValueError("mask has the wrong length")
        return x
    if x.shape == (n,) and set(np.unique(x)) <= {1, 2}:
        return x == 1
    m = np.zeros(n, dtype=bool)
    m[x.astype(np.int64)] = True
    return m


def _quantile_levels(f, p, n_candidates):
    """Distinct values of ``f`` at ``n_candidates`` mu-quantiles, above the minimum."""
    order = np.argsort(f, kind="stable")
    cum = np.cumsum(p[order])
    total = cum[-1]
    alphas = np.arange(1, n_candidates + 1) / (n_candidates + 1) * total
    idx = np.minimum(np.searchsorted(cum, alphas, side="left"), f.size - 1)
    b = np.unique(f[order][idx])
    return b[b > f.min()]


def threshold_search(tm: TransferMatrices, f, g, n_candidates: int = 512, *, triple: SingularTriple | None = None,
                     sigma2: float | None = None) -> CoherentPartition:
    """Best level-set pair ``({f >= b}, {g >= c})`` over ``n_candidates`` thresholds."""
    if triple is not None:
        if triple.degenerate:
            raise ValueError("singular value is degenerate; thresholding refused")
        sigma2 = triple.sigma if sigma2 is None else sigma2
    f = np.asarray(f, dtype=float)
    g = np.asarray(g, dtype=float)
    P = sp.csr_matrix(tm.P)
    nx, ny = P.shape
    if f.shape != (nx,) or g.shape != (ny,):
        raise ValueError("f, g do not match the matrix shape")
    p = tm.p
    q = tm.q
    bs = _quantile_levels(f, p, n_candidates)
    if bs.size == 0:
        raise ValueError("f is constant; no nontrivial partition")

    # X1 sets are nested upper sets of f: accumulate rows in descending f order
    xord = np.argsort(-f, kind="stable")
    fdesc = f[xord]
    cutx = np.searchsorted(-fdesc, -bs, side="right")
    yord = np.argsort(-g, kind="stable")
    gdesc = g[yord]
    cumq = np.cumsum(q[yord])
    ybound = np.flatnonzero(np.append(gdesc[1:] != gdesc[:-1], True)) + 1
    ycum = cumq[ybound - 1]
    cump = np.cumsum(p[xord])

    w = np.zeros(ny)
    prev = 0
    best = None
    for b, cx in sorted(zip(bs, cutx), key=lambda t: t[1]):
        if cx > prev:
            rows = xord[prev:cx]
            w += P[rows].T @ p[rows]
            prev = cx
        mu1 = float(cump[cx - 1])
        mu2 = float(p.sum() - mu1)
        if mu1 <= 0 or mu2 <= 0:
            continue
        # image cut: distinct-value boundary with nu closest to mu1
        k = int(np.argmin(np.abs(ycum - mu1)))
        cy = int(ybound[k])
        wy = w[yord]
        a11 = float(wy[:cy].sum())
        a22 = float((q[yord][cy:] - wy[cy:]).sum())
        rho = a11 / mu1 + a22 / mu2
        key = (rho, -abs(mu1 - 0.5), -b)
        if best is None or _better(key, best[0]):
            best = (key, b, float(gdesc[cy - 1]), cx, cy, mu1, mu2, float(ycum[k]))
    if best is None:
        raise ValueError("no threshold yields two nonempty sets")
    _, b, c, cx, cy, mu1, mu2, nu1 = best
    xl = np.full(nx, 2, dtype=np.int8)
    xl[xord[:cx]] = 1
    yl = np.full(ny, 2, dtype=np.int8)
    yl[yord[:cy]] = 1
    rho = coherence(tm, xl == 1, yl == 1)
    return CoherentPartition(float(b), c, xl, yl, (mu1, mu2), (nu1, float(q.sum() - nu1)), rho, sigma2,
                             dict(n_candidates=int(bs.size)))


def _better(a, b, rtol=1e-13):
    if abs(a[0] - b[0]) > rtol * max(1.0, abs(b[0])):
        return a[0] > b[0]
    if a[1] != b[1]:
        return a[1] > b[1]
    return a[2] > b[2]


def random_equal_mass_partitions(tm: TransferMatrices, n: int, seed: int = 0):
    """Yield ``n`` random pairs ``(x1_mask, y1_mask)`` with ``nu(Y1) ~ mu(X1) ~ 1/2``."""
    rng = np.random.default_rng(seed)
    nx, ny = tm.P.shape
    for _ in range(n):
        xo = rng.permutation(nx)
        cx = int(np.searchsorted(np.cumsum(tm.p[xo]), 0.5)) + 1
        x1 = np.zeros(nx, dtype=bool)
        x1[xo[:cx]] = True
        mu1 = tm.p[x1].sum()
        yo = rng.permutation(ny)
        cq = np.cumsum(tm.q[yo])
        cy = int(np.argmin(np.abs(cq - mu1))) + 1
        y1 = np.zeros(ny, dtype=bool)
        y1[yo[:cy]] = True
        yield x1, y1


def check_bound(tm: TransferMatrices, sigma2: float, partitions, slack: float = BOUND_SLACK) -> dict:
    """Evaluate ``rho <= 1 + sigma2 + slack`` over an iterable of ``(x1, y1)`` pairs."""
    rhos = np.array([coherence(tm, x1, y1) for x1, y1 in partitions])
    viol = int(np.sum(rhos > 1.0 + sigma2 + slack))
    return dict(n=int(rhos.size), violations=viol, max_rho=float(rhos.max()) if rhos.size else float("nan"),
                bound=1.0 + sigma2)
