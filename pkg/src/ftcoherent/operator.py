"""Ulam estimates of the diffused transfer operator.

For every box of the initial grid a fixed set of test points is spread by the
diffusion stencil, advected by the flow map, spread again, and the final
positions are counted in the boxes of an open-ended image grid.  Each sample
weighs ``1 / (n_test * n_stencil**2)``, so ``P`` is exactly row-stochastic.
"""
from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable

import numpy as np
import scipy.sparse as sp

from .flow import FlowSpec, IntegrationError, flow_map
from .partition import BoxGrid, Lattice, SparseGrid, StripWrap, unit_test_points

log = logging.getLogger(__name__)

RING_COUNTS = (6, 12, 18)


@dataclass(frozen=True)
class DiffusionSpec:
    """Uniform ball diffusion of radius ``eps`` sampled by concentric rings.

    ``rings`` lists the number of points on each ring; ring ``k`` (1-based)
    sits at radius ``k * eps / len(rings)``.
    """

    eps: float = 0.0
    rings: tuple[int, ...] = RING_COUNTS

    def __post_init__(self):
        if not self.eps >= 0:
            raise ValueError("eps must be nonnegative")
        object.__setattr__(self, "rings", tuple(int(r) for r in self.rings))
        if any(r < 1 for r in self.rings):
            raise ValueError("ring counts must be positive")

    @property
    def n_points(self) -> int:
        return 1 if self.eps == 0 else 1 + sum(self.rings)

    @property
    def layout(self) -> str:
        return "origin" if self.eps == 0 else "origin+rings(" + ",".join(map(str, self.rings)) + ")"


def stencil(diff: DiffusionSpec) -> np.ndarray:
    """Offsets of the diffusion mask, shape ``(n_points, 2)``, origin first."""
    if diff.eps < 0:
        raise ValueError("eps must be nonnegative")
    pts = [np.zeros((1, 2))]
    if diff.eps > 0:
        nr = len(diff.rings)
        phase = 0.0
        for k, m in enumerate(diff.rings, start=1):
            if k > 1:
                phase += math.pi / m
            ang = phase + 2.0 * math.pi * np.arange(m) / m
            r = diff.eps * k / nr
            pts.append(r * np.stack([np.cos(ang), np.sin(ang)], axis=1))
    return np.concatenate(pts, axis=0)


@dataclass(eq=False)
class TransferMatrices:
    """Row-stochastic ``P`` with the initial and image measures ``p`` and ``q``."""

    P: sp.csr_matrix
    p: np.ndarray
    q: np.ndarray
    grid_x: BoxGrid | None = None
    grid_y: SparseGrid | None = None
    meta: dict = field(default_factory=dict)

    @property
    def shape(self) -> tuple[int, int]:
        return self.P.shape

    @cached_property
    def M(self) -> sp.csr_matrix:
        return weighted_matrix(self)


def _measure(grid: BoxGrid, p) -> np.ndarray:
    n = grid.n_boxes
    if p is None:
        return np.full(n, 1.0 / n)
    p = np.asarray(p, dtype=float)
    if p.shape != (n,) or np.any(p < 0) or not np.isfinite(p).all() or p.sum() <= 0:
        raise ValueError("p must be a nonnegative vector with one entry per box")
    return p / p.sum()


def _default_flow(flow, wrap):
    if isinstance(flow, FlowSpec):
        spec = flow
        if wrap is None and spec.periodic_x:
            wrap = StripWrap(spec.x_period)
        return (lambda pts: flow_map(spec, pts)), wrap
    return flow, wrap


def _count_rows(keys: np.ndarray):
    """Run-length encode sorted key rows into ``(row, key, count)``."""
    rows, s = keys.shape
    ks = np.sort(keys, axis=1).ravel()
    new = np.ones(ks.size, dtype=bool)
    new[1:] = ks[1:] != ks[:-1]
    new[::s] = True
    start = np.flatnonzero(new)
    counts = np.diff(np.append(start, ks.size))
    return start // s, ks[start], counts


class _Buffer:
    """Append-only 1-d array with amortised growth."""

    def __init__(self, dtype, capacity: int = 1 << 16):
        self._a = np.empty(capacity, dtype=dtype)
        self.size = 0

    def extend(self, x) -> None:
        n = self.size + len(x)
        if n > self._a.size:
            a = np.empty(max(n, self._a.size + self._a.size // 2), dtype=self._a.dtype)
            a[:self.size] = self._a[:self.size]
            self._a = a
        self._a[self.size:n] = x
        self.size = n

    def array(self) -> np.ndarray:
        if self._a.size != self.size:
            self._a = self._a[:self.size].copy()
        return self._a

    def take(self, table: np.ndarray, dtype, step: int = 1 << 22) -> np.ndarray:
        """``table[self]`` cast to ``dtype``, computed in slices."""
        out = np.empty(self.size, dtype=dtype)
        for a in range(0, self.size, step):
            b = min(self.size, a + step)
            out[a:b] = table[self._a[a:b]]
        return out


class _KeyBook:
    """First-seen numbering of box keys, renumbered in key order at the end."""

    def __init__(self):
        self._sorted = np.empty(0, dtype=np.int64)
        self._ids = np.empty(0, dtype=np.int64)

    def ids(self, keys: np.ndarray) -> np.ndarray:
        u = np.unique(keys)
        pos = np.searchsorted(self._sorted, u)
        known = pos < self._sorted.size
        known[known] = self._sorted[pos[known]] == u[known]
        new = u[~known]
        if new.size:
            first = self._ids.size
            at = pos[~known]
            self._sorted = np.insert(self._sorted, at, new)
            self._ids = np.insert(self._ids, at, np.arange(first, first + new.size))
        return self._ids[np.searchsorted(self._sorted, keys)]

    def finish(self) -> tuple[np.ndarray, np.ndarray]:
        """Sorted keys and, for every first-seen id, its rank in that order."""
        rank = np.empty(self._ids.size, dtype=np.int64)
        rank[self._ids] = np.arange(self._ids.size)
        return self._sorted, rank


def build_transition(grid_x: BoxGrid, flow: FlowSpec | Callable[[np.ndarray], np.ndarray], n_test: int,
                     diff: DiffusionSpec | None = None, *, p=None, wrap: Callable | None = None,
                     y_lattice: Lattice | None = None, max_samples: int = 1 << 21,
                     progress: bool = False) -> TransferMatrices:
    """Assemble ``P``, ``p`` and ``q`` for ``flow`` on ``grid_x``.

    ``flow`` is a :class:`FlowSpec` (integrated over its own window) or any
    vectorised map ``(n, 2) -> (n, 2)``.  ``wrap`` reduces final positions
    into the fundamental strip of a periodic flow; it defaults to the x
    period of a periodic ``FlowSpec``.  Image boxes live on ``y_lattice``,
    by default the lattice of ``grid_x``.
    """
    diff = diff or DiffusionSpec()
    fmap, wrap = _default_flow(flow, wrap)
    lattice = y_lattice or grid_x.lattice
    p = _measure(grid_x, p)

    unit = unit_test_points(n_test) * np.array([grid_x.wx, grid_x.wy])
    offs = stencil(diff)
    n_pre = n_post = offs.shape[0]
    per_row_traj = n_test * n_pre
    per_row = per_row_traj * n_post
    nx = grid_x.n_boxes
    chunk = max(1, max_samples // per_row)
    origins = grid_x.origins()

    row_nnz = np.zeros(nx, dtype=np.int64)
    ids = _Buffer(np.int32)
    counts = _Buffer(np.int32)
    book = _KeyBook()
    t_start = time.perf_counter()
    for lo in range(0, nx, chunk):
        hi = min(nx, lo + chunk)
        start = (origins[lo:hi, None, :] + unit[None, :, :])
        start = (start[:, :, None, :] + offs[None, None, :, :]).reshape(-1, 2)
        try:
            img = np.asarray(fmap(start), dtype=float)
        except IntegrationError as exc:
            box = lo + exc.index // per_row_traj
            raise IntegrationError(exc.index, exc.point,
                                   f"integration failed in box {box} at {exc.point}") from exc
        bad = ~np.isfinite(img).all(axis=1)
        if bad.any():
            i = int(np.argmax(bad))
            raise IntegrationError(i, start[i], f"integration failed in box {lo + i // per_row_traj}")
        fin = img[:, None, :] + offs[None, :, :]
        if wrap is not None:
            fin = wrap(fin)
        k = lattice.keys(fin.reshape(-1, 2)).reshape(hi - lo, per_row)
        r, kk, c = _count_rows(k)
        row_nnz[lo:hi] = np.bincount(r, minlength=hi - lo)
        ids.extend(book.ids(kk))
        counts.extend(c)
        if progress:
            el = time.perf_counter() - t_start
            log.info("rows %d/%d  %.1fs", hi, nx, el)

    # renumber image boxes in key order; rows then need their columns re-sorted
    ykeys, rank = book.finish()
    n = ids.size
    idx_dtype = np.int32 if max(ykeys.size, n) < 2 ** 31 else np.int64
    cols = ids.take(rank, idx_dtype)
    del ids, rank
    indptr = np.zeros(nx + 1, dtype=idx_dtype)
    np.cumsum(row_nnz, out=indptr[1:])
    vals = counts.array() / float(per_row)
    del counts
    P = sp.csr_matrix((vals, cols, indptr), shape=(nx, ykeys.size), copy=False)
    P.has_sorted_indices = False
    P.sort_indices()
    sums = np.asarray(P.sum(axis=1)).ravel()
    if np.any(sums == 0):
        raise ValueError(f"row {int(np.argmin(sums))} lost all samples")
    q = P.T @ p
    meta = dict(n_test=n_test, eps=diff.eps, stencil=diff.layout, n_stencil=n_pre,
                assembly_seconds=time.perf_counter() - t_start)
    return TransferMatrices(P, p, q, grid_x, SparseGrid(lattice, ykeys), meta)


def weighted_matrix(tm: TransferMatrices) -> sp.csr_matrix:
    """``M_ij = sqrt(p_i) P_ij / sqrt(q_j)`` with the sparsity pattern of ``P``."""
    P = sp.csr_matrix(tm.P)
    q = np.asarray(tm.q, dtype=float)
    if not P.has_sorted_indices:
        P = P.sorted_indices()
    used = np.zeros(P.shape[1], dtype=bool)
    used[P.indices[P.data != 0]] = True
    if np.any(used & ~(q > 0)):
        j = int(np.flatnonzero(used & ~(q > 0))[0])
        raise ValueError(f"q[{j}] = 0 for a column with nonzero entries")
    inv = np.zeros_like(q)
    inv[q > 0] = 1.0 / np.sqrt(q[q > 0])
    sp_ = np.sqrt(np.asarray(tm.p, dtype=float))
    data = np.empty_like(P.data)
    step = 1 << 22
    # M shares the index arrays of P; only the values are new
    for a in range(0, data.size, step):
        b = min(data.size, a + step)
        rows = np.searchsorted(P.indptr, np.arange(a, b), side="right") - 1
        data[a:b] = P.data[a:b] * sp_[rows] * inv[P.indices[a:b]]
    M = sp.csr_matrix((data, P.indices, P.indptr), shape=P.shape, copy=False)
    M.has_sorted_indices = True
    return M


def apply_L(tm: TransferMatrices, f) -> np.ndarray:
    """Push an X-function forward: ``(L f)_j = sum_i p_i P_ij f_i / q_j``."""
    f = np.asarray(f, dtype=float)
    if f.shape[0] != tm.P.shape[0]:
        raise ValueError("f has the wrong length")
    out = tm.P.T @ (tm.p * f if f.ndim == 1 else tm.p[:, None] * f)
    q = tm.q if f.ndim == 1 else tm.q[:, None]
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(q > 0, out / q, 0.0)


def apply_L_dual(tm: TransferMatrices, g) -> np.ndarray:
    """Pull a Y-function back: ``(L* g)_i = sum_j P_ij g_j``."""
    g = np.asarray(g, dtype=float)
    if g.shape[0] != tm.P.shape[1]:
        raise ValueError("g has the wrong length")
    return tm.P @ g


def from_dense(P, p=None) -> TransferMatrices:
    """Wrap a small dense or sparse stochastic matrix."""
    P = sp.csr_matrix(np.asarray(P, dtype=float) if not sp.issparse(P) else P)
    n = P.shape[0]
    p = np.full(n, 1.0 / n) if p is None else np.asarray(p, dtype=float)
    return TransferMatrices(P, p, P.T @ p)
