"""Rectangular box partitions and point location.

Boxes are half-open rectangles ``[x0, x0 + wx) x [y0, y0 + wy)`` on a regular
lattice.  Box ``(ix, iy)`` of a grid with ``ny`` rows has flat index
``ix * ny + iy``, so flat order is lexicographic in the box origin.  An
optional ``active`` mask keeps only a subset of the lattice (used for rotated
domains); indices then refer to positions among the active boxes.

Image grids are open-ended: :class:`SparseGrid` holds the lattice boxes that
were actually hit, keyed by integer pairs packed into ``int64``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import qmc

OUTSIDE = -1

_OFF = 1 << 30
_SHIFT = 31


def pack_keys(ix, iy) -> np.ndarray:
    """Encode lattice coordinates as sortable ``int64`` keys (lexicographic in ``(ix, iy)``)."""
    ix = np.asarray(ix, dtype=np.int64)
    iy = np.asarray(iy, dtype=np.int64)
    if ix.size and (np.abs(ix).max() >= _OFF or np.abs(iy).max() >= _OFF):
        raise OverflowError("lattice coordinate out of range")
    return ((ix + _OFF) << _SHIFT) | (iy + _OFF)


def unpack_keys(keys) -> tuple[np.ndarray, np.ndarray]:
    keys = np.asarray(keys, dtype=np.int64)
    return (keys >> _SHIFT) - _OFF, (keys & ((1 << _SHIFT) - 1)) - _OFF


@dataclass(frozen=True)
class Lattice:
    """Infinite box lattice with given origin and box widths."""

    x0: float
    y0: float
    wx: float
    wy: float

    def cell(self, points) -> tuple[np.ndarray, np.ndarray]:
        pts = np.asarray(points, dtype=float).reshape(-1, 2)
        ix = np.floor((pts[:, 0] - self.x0) / self.wx)
        iy = np.floor((pts[:, 1] - self.y0) / self.wy)
        return ix.astype(np.int64), iy.astype(np.int64)

    def keys(self, points) -> np.ndarray:
        return pack_keys(*self.cell(points))

    def origins(self, ix, iy) -> np.ndarray:
        return np.stack([self.x0 + np.asarray(ix) * self.wx, self.y0 + np.asarray(iy) * self.wy], axis=1)


@dataclass(frozen=True, eq=False)
class BoxGrid:
    """Regular ``nx x ny`` partition of ``[xmin, xmax) x [ymin, ymax)``."""

    xmin: float
    xmax: float
    ymin: float
    ymax: float
    nx: int
    ny: int
    active: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        if self.nx < 1 or self.ny < 1:
            raise ValueError("nx and ny must be positive")
        if not (self.xmax > self.xmin and self.ymax > self.ymin):
            raise ValueError("degenerate rectangle")
        if self.active is not None:
            act = np.unique(np.asarray(self.active, dtype=np.int64))
            if act.size == 0 or act[0] < 0 or act[-1] >= self.nx * self.ny:
                raise ValueError("active indices out of range")
            object.__setattr__(self, "active", act)
            lut = np.full(self.nx * self.ny, OUTSIDE, dtype=np.int64)
            lut[act] = np.arange(act.size)
            object.__setattr__(self, "_lut", lut)

    @property
    def wx(self) -> float:
        return (self.xmax - self.xmin) / self.nx

    @property
    def wy(self) -> float:
        return (self.ymax - self.ymin) / self.ny

    @property
    def rx(self) -> float:
        return self.wx / 2.0

    @property
    def ry(self) -> float:
        return self.wy / 2.0

    @property
    def lattice(self) -> Lattice:
        return Lattice(self.xmin, self.ymin, self.wx, self.wy)

    @property
    def n_boxes(self) -> int:
        return self.nx * self.ny if self.active is None else int(self.active.size)

    def __len__(self) -> int:
        return self.n_boxes

    @property
    def box_area(self) -> float:
        return self.wx * self.wy

    def flat_indices(self) -> np.ndarray:
        """Lattice flat index of every box, in box order."""
        return np.arange(self.nx * self.ny) if self.active is None else self.active

    def lattice_cells(self) -> tuple[np.ndarray, np.ndarray]:
        flat = self.flat_indices()
        return flat // self.ny, flat % self.ny

    def origins(self, boxes=None) -> np.ndarray:
        ix, iy = self.lattice_cells()
        if boxes is not None:
            ix, iy = ix[boxes], iy[boxes]
        return np.stack([self.xmin + ix * self.wx, self.ymin + iy * self.wy], axis=1)

    def centers(self, boxes=None) -> np.ndarray:
        return self.origins(boxes) + np.array([self.rx, self.ry])

    def keys(self) -> np.ndarray:
        return pack_keys(*self.lattice_cells())

    def locate(self, points, x_period: float | None = None) -> np.ndarray | int:
        """Box index of each point, or ``OUTSIDE`` (-1).

        With ``x_period`` the x coordinate is first reduced into
        ``[xmin, xmin + x_period)``.
        """
        pts = np.asarray(points, dtype=float)
        single = pts.ndim == 1
        pts = pts.reshape(-1, 2)
        x = pts[:, 0]
        if x_period is not None:
            x = self.xmin + np.mod(x - self.xmin, x_period)
        fx = np.floor((x - self.xmin) / self.wx)
        fy = np.floor((pts[:, 1] - self.ymin) / self.wy)
        ok = (fx >= 0) & (fx < self.nx) & (fy >= 0) & (fy < self.ny)
        flat = np.where(ok, fx * self.ny + fy, 0).astype(np.int64)
        out = np.where(ok, flat, OUTSIDE)
        if self.active is not None:
            out = np.where(ok, self._lut[flat], OUTSIDE)
        return int(out[0]) if single else out

    def describe(self) -> dict:
        d = dict(xmin=self.xmin, xmax=self.xmax, ymin=self.ymin, ymax=self.ymax, nx=self.nx, ny=self.ny,
                 rx=self.rx, ry=self.ry, n_boxes=self.n_boxes)
        if self.active is not None:
            d["n_active"] = int(self.active.size)
        return d


def make_grid(rect, nx: int, ny: int, active=None) -> BoxGrid:
    """Grid on ``rect = (xmin, xmax, ymin, ymax)`` with ``nx * ny`` boxes."""
    xmin, xmax, ymin, ymax = (float(v) for v in rect)
    if int(nx) != nx or int(ny) != ny:
        raise ValueError("box counts must be integers")
    return BoxGrid(xmin, xmax, ymin, ymax, int(nx), int(ny), active)


@dataclass(frozen=True, eq=False)
class SparseGrid:
    """Finite set of lattice boxes, ordered by key (lexicographic origin)."""

    lattice: Lattice
    keys: np.ndarray

    def __post_init__(self):
        keys = np.asarray(self.keys, dtype=np.int64)
        if keys.size > 1 and not np.all(np.diff(keys) > 0):
            raise ValueError("keys must be strictly increasing")
        object.__setattr__(self, "keys", keys)

    @classmethod
    def from_points(cls, lattice: Lattice, points) -> "SparseGrid":
        return cls(lattice, np.unique(lattice.keys(points)))

    @property
    def n_boxes(self) -> int:
        return int(self.keys.size)

    def __len__(self) -> int:
        return self.n_boxes

    @property
    def rx(self) -> float:
        return self.lattice.wx / 2.0

    @property
    def ry(self) -> float:
        return self.lattice.wy / 2.0

    @property
    def box_area(self) -> float:
        return self.lattice.wx * self.lattice.wy

    def origins(self, boxes=None) -> np.ndarray:
        ix, iy = unpack_keys(self.keys if boxes is None else self.keys[boxes])
        return self.lattice.origins(ix, iy)

    def centers(self, boxes=None) -> np.ndarray:
        return self.origins(boxes) + np.array([self.rx, self.ry])

    def index_of_keys(self, keys) -> np.ndarray:
        keys = np.asarray(keys, dtype=np.int64)
        pos = np.searchsorted(self.keys, keys)
        pos_c = np.minimum(pos, max(self.keys.size - 1, 0))
        hit = (pos < self.keys.size) & (self.keys[pos_c] == keys) if self.keys.size else np.zeros(keys.shape, bool)
        return np.where(hit, pos_c, OUTSIDE)

    def locate(self, points) -> np.ndarray | int:
        pts = np.asarray(points, dtype=float)
        out = self.index_of_keys(self.lattice.keys(pts))
        return int(out[0]) if pts.ndim == 1 else out

    def describe(self) -> dict:
        return dict(x0=self.lattice.x0, y0=self.lattice.y0, wx=self.lattice.wx, wy=self.lattice.wy,
                    n_boxes=self.n_boxes)


def unit_test_points(n: int) -> np.ndarray:
    """Sample positions in the unit square, shape ``(n, 2)``.

    Perfect squares give the ``m x m`` lattice of sub-cell centres; other
    counts fall back to an unscrambled Halton sequence shifted off the edges.
    """
    if n < 1:
        raise ValueError("need at least one test point")
    m = math.isqrt(n)
    if m * m == n:
        s = (np.arange(m) + 0.5) / m
        gx, gy = np.meshgrid(s, s, indexing="ij")
        return np.stack([gx.ravel(), gy.ravel()], axis=1)
    pts = qmc.Halton(d=2, scramble=False).random(n + 1)[1:]
    return pts + 0.5 / (n + 1) * (pts == 0)


def test_points(grid: BoxGrid, box: int, n: int) -> np.ndarray:
    """``n`` deterministic points inside box ``box``."""
    u = unit_test_points(n)
    o = grid.origins(np.array([box]))[0]
    return o + u * np.array([grid.wx, grid.wy])


test_points.__test__ = False


@dataclass(frozen=True)
class StripWrap:
    """Reduction modulo a period along a direction, relative to an anchor.

    ``w -> w - floor(((w - anchor) . e) / period) * period * e``.  The
    identity frame uses ``anchor = 0, e = (1, 0)``.
    """

    period: float
    direction: tuple[float, float] = (1.0, 0.0)
    anchor: tuple[float, float] = (0.0, 0.0)

    def __call__(self, points) -> np.ndarray:
        pts = np.asarray(points, dtype=float)
        ex, ey = self.direction
        ax, ay = self.anchor
        if ey == 0.0 and ex == 1.0:
            x = pts[..., 0] - ax
            k = np.floor(x / self.period)
            out = pts.copy()
            out[..., 0] = ax + (x - k * self.period)
            over = out[..., 0] >= ax + self.period
            out[..., 0] = np.where(over, out[..., 0] - self.period, out[..., 0])
            return out
        s = (pts[..., 0] - ax) * ex + (pts[..., 1] - ay) * ey
        k = np.floor(s / self.period)[..., None]
        return pts - k * self.period * np.array([ex, ey])
