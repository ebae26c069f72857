"""Empirical studies: spectral gap versus diffusion radius, regularity and
feature width of the singular functions, and frame objectivity."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from types import SimpleNamespace

import numpy as np
from scipy.spatial import cKDTree

from .config import FrameConfig, RunConfig
from .flow import FrameTransform, inverse_transform_point
from .partition import BoxGrid, SparseGrid, unpack_keys

log = logging.getLogger(__name__)


def _centers(grid) -> np.ndarray:
    if isinstance(grid, (BoxGrid, SparseGrid)):
        return grid.centers()
    return np.asarray(grid, dtype=float)


def _cells(grid) -> tuple[np.ndarray, np.ndarray, float, float]:
    if isinstance(grid, BoxGrid):
        ix, iy = grid.lattice_cells()
        return ix, iy, grid.wx, grid.wy
    if isinstance(grid, SparseGrid):
        ix, iy = unpack_keys(grid.keys)
        return ix, iy, grid.lattice.wx, grid.lattice.wy
    raise TypeError("feature_width needs a BoxGrid or SparseGrid")


def effective_eps(eps: float, grid) -> float:
    """Diffusion radius, or the box radius when only numerical diffusion acts."""
    if eps > 0:
        return eps
    return max(grid.rx, grid.ry)


def regularity_modulus(values, grid, exponent: float = 0.5, radius: float | None = None, eps: float | None = None) -> float:
    """``max |f_i - f_j| / |c_i - c_j|**exponent`` over box centres closer than ``radius``.

    ``radius`` defaults to ``4 * eps`` (``eps`` itself defaulting to the box
    radius).  Restricting to nearby pairs measures local regularity; the
    global maximum is dominated by far-apart pairs.
    """
    f = np.asarray(values, dtype=float)
    c = _centers(grid)
    if f.shape[0] != c.shape[0]:
        raise ValueError("one value per box required")
    if radius is None:
        radius = 4.0 * (eps if eps else effective_eps(0.0, grid))
    pairs = cKDTree(c).query_pairs(radius, output_type="ndarray")
    if pairs.size == 0:
        return 0.0
    d = np.linalg.norm(c[pairs[:, 0]] - c[pairs[:, 1]], axis=1)
    df = np.abs(f[pairs[:, 0]] - f[pairs[:, 1]])
    ok = d > 0
    return float(np.max(df[ok] / d[ok] ** exponent)) if ok.any() else 0.0


def feature_width(values, grid, low: float = 0.1, high: float = 0.9) -> dict:
    """Shortest rise from the low to the high level along grid rows and columns.

    Levels are ``min + low * range`` and ``min + high * range``.  The width is
    the smallest centre distance, along a row (x) or a column (y), between a
    box at or below the low level and a box at or above the high level.
    Returns ``{"x": wx_min, "y": wy_min, "width": min of both}``; an axis with
    no such pair reports ``inf``.
    """
    f = np.asarray(values, dtype=float)
    if not (f.max() > 0 and f.min() < 0):
        raise ValueError("function must take both signs")
    ix, iy, wx, wy = _cells(grid)
    lo_lvl = f.min() + low * (f.max() - f.min())
    hi_lvl = f.min() + high * (f.max() - f.min())
    lo = f <= lo_lvl
    hi = f >= hi_lvl
    out = {"x": _axis_width(iy, ix, lo, hi) * wx, "y": _axis_width(ix, iy, lo, hi) * wy}
    out["width"] = min(out["x"], out["y"])
    return out


def _axis_width(line, pos, lo, hi) -> float:
    # nearest low box on the same line for every high box
    span = int(pos.max() - pos.min()) + 2
    key = (line.astype(np.int64) - line.min()) * (2 * span) + (pos - pos.min())
    lk = np.sort(key[lo])
    hk = key[hi]
    if lk.size == 0 or hk.size == 0:
        return math.inf
    j = np.searchsorted(lk, hk)
    best = np.full(hk.shape, np.inf)
    for cand in (j - 1, j):
        ok = (cand >= 0) & (cand < lk.size)
        diff = np.where(ok, np.abs(hk - lk[np.clip(cand, 0, lk.size - 1)]), np.inf)
        best = np.minimum(best, np.where(diff < span, diff, np.inf))
    return float(best.min())


@dataclass
class ScalingRow:
    eps: float
    eps_eff: float
    sigma2: float
    gap: float
    holder_f: float
    holder_g: float
    width_f: float
    width_g: float
    config_hash: str


@dataclass
class ScalingReport:
    rows: list[ScalingRow]
    exponent: float | None = None
    constant: float | None = None
    fit_residual: float | None = None
    c_hat: float = float("nan")
    checks: dict = field(default_factory=dict)

    def __post_init__(self):
        e = [r.eps_eff for r in self.rows]
        if any(b <= a for a, b in zip(e, e[1:])):
            raise ValueError("eps values must be strictly increasing")

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.rows])


def _nonincreasing(a) -> bool:
    return bool(np.all(np.diff(a) <= 0))


def _nondecreasing(a) -> bool:
    return bool(np.all(np.diff(a) >= 0))


def check_radii(eps_list, grid) -> None:
    """Radii must be zero or resolve the box scale (at least twice the smaller box radius)."""
    rmin = min(grid.rx, grid.ry)
    if len(eps_list) == 0:
        raise ValueError("no radii given")
    for eps in eps_list:
        if not eps >= 0 or (0 < eps < 2 * rmin):
            raise ValueError(f"eps={eps} is below twice the box radius {rmin}")


def gap_scaling(config: RunConfig, eps_list, n_test: int | None = None, root=None, analyze=None,
                exponent: float = 0.5) -> ScalingReport:
    """Run the pipeline for each radius and summarise gap, regularity and width.

    Fits ``gap = C eps**beta`` on logs when two or more radii are given and
    reports ``c_hat = max gap / eps``.  Monotonicity findings are recorded in
    ``checks`` rather than raised.
    """
    from . import pipeline

    analyze = analyze or pipeline.analyze
    grid = config.grid.make()
    check_radii(eps_list, grid)
    rows = []
    for eps in sorted(float(e) for e in eps_list):
        cfg = config.with_eps(eps, n_test)
        log.info("gap scaling: eps=%g (run %s)", eps, cfg.hash)
        an = analyze(cfg, root)
        ee = effective_eps(eps, grid)
        r = 4.0 * ee
        rows.append(ScalingRow(
            eps, ee, an.sigma2, 1.0 - an.sigma2,
            regularity_modulus(an.f, an.tm.grid_x, exponent, radius=r),
            regularity_modulus(an.g, an.tm.grid_y, exponent, radius=r),
            feature_width(an.f, an.tm.grid_x)["width"], feature_width(an.g, an.tm.grid_y)["width"],
            cfg.hash))
        del an
    rep = ScalingReport(rows)
    e = rep.column("eps_eff")
    gap = rep.column("gap")
    rep.c_hat = float(np.max(gap / e))
    if len(rows) >= 2 and np.all(gap > 0):
        A = np.stack([np.ones_like(e), np.log(e)], axis=1)
        coef, res, *_ = np.linalg.lstsq(A, np.log(gap), rcond=None)
        rep.constant = float(np.exp(coef[0]))
        rep.exponent = float(coef[1])
        rep.fit_residual = float(np.sqrt(res[0] / len(rows))) if res.size else 0.0
    rep.checks = dict(
        gap_nondecreasing=_nondecreasing(gap),
        c_hat_finite=bool(np.isfinite(rep.c_hat)),
        holder_f_nonincreasing=_nonincreasing(rep.column("holder_f")),
        holder_g_nonincreasing=_nonincreasing(rep.column("holder_g")),
        width_f_nondecreasing=_nondecreasing(rep.column("width_f")),
        width_g_nondecreasing=_nondecreasing(rep.column("width_g")),
    )
    return rep


@dataclass
class ObjectivityReport:
    sigma2: float
    sigma2_transformed: float
    jaccard_x: float
    jaccard_y: float
    exact_x: bool
    exact_y: bool
    grid_exact: bool
    unmatched_y: float

    @property
    def delta_sigma2(self) -> float:
        return abs(self.sigma2 - self.sigma2_transformed)

    def as_dict(self) -> dict:
        d = dict(self.__dict__)
        d["delta_sigma2"] = self.delta_sigma2
        return d


def is_grid_exact(config: RunConfig, ft: FrameTransform) -> bool:
    """Translations by whole boxes commute with the lattice."""
    if ft.theta0 != 0 or ft.theta1 != 0:
        return False
    g = config.grid.make()
    for b in (ft.b0, ft.b1):
        for v, w in ((b[0], g.wx), (b[1], g.wy)):
            if abs(v / w - round(v / w)) > 1e-9:
                return False
    return True


def _weighted_jaccard(a, b, w) -> float:
    union = float(w[a | b].sum())
    return float(w[a & b].sum()) / union if union > 0 else 1.0


def pull_back_labels(base_grid_x: BoxGrid, base_grid_y: SparseGrid, grid_x: BoxGrid, grid_y: SparseGrid,
                     ft: FrameTransform, x_period: float | None):
    """Original-frame box index of every transformed box centre (``-1`` if none)."""
    cx = inverse_transform_point(ft, grid_x.centers(), "t0")
    ix = base_grid_x.locate(cx)
    cy = inverse_transform_point(ft, grid_y.centers(), "t1")
    iy = np.atleast_1d(base_grid_y.locate(cy))
    if x_period is not None:
        # boxes straddling the strip end keep their unwrapped centre
        miss = iy < 0
        iy[miss] = base_grid_y.locate(np.column_stack([np.mod(cy[miss, 0], x_period), cy[miss, 1]]))
    return np.atleast_1d(ix), iy


def compare_partitions(base, other, ft: FrameTransform, x_period: float | None) -> dict:
    """Jaccard indices of ``other`` (transformed frame) pulled back onto ``base``.

    Mass-weighted on each side and maximised over the two label alignments,
    with the same alignment on both sides.
    """
    ix, iy = pull_back_labels(base.tm.grid_x, base.tm.grid_y, other.tm.grid_x, other.tm.grid_y, ft, x_period)
    bx = np.where(ix >= 0, base.partition.x_labels[np.maximum(ix, 0)], 0)
    by = np.where(iy >= 0, base.partition.y_labels[np.maximum(iy, 0)], 0)
    ox = other.partition.x_labels
    oy = other.partition.y_labels
    best = None
    for swap in (False, True):
        tx = 3 - ox if swap else ox
        ty = 3 - oy if swap else oy
        jx = _weighted_jaccard(bx == 1, tx == 1, other.tm.p)
        jy = _weighted_jaccard(by == 1, ty == 1, other.tm.q)
        cand = dict(jaccard_x=jx, jaccard_y=jy, exact_x=bool(np.array_equal(bx, tx)),
                    exact_y=bool(np.array_equal(by, ty)))
        if best is None or min(jx, jy) > min(best["jaccard_x"], best["jaccard_y"]):
            best = cand
    best["unmatched_y"] = float(other.tm.q[iy < 0].sum())
    return best


def _light(an) -> SimpleNamespace:
    """What the comparison needs from an analysis, without the matrices."""
    tm = SimpleNamespace(grid_x=an.tm.grid_x, grid_y=an.tm.grid_y, p=an.tm.p, q=an.tm.q)
    return SimpleNamespace(tm=tm, partition=an.partition, sigma2=an.sigma2)


def objectivity_check(config: RunConfig, ft: FrameTransform, root=None, analyze=None) -> ObjectivityReport:
    """Compare the analysis in the original frame with that in the frame ``ft``."""
    from . import pipeline

    analyze = analyze or pipeline.analyze
    base = _light(analyze(config.replace(frame=FrameConfig()), root))
    moved_cfg = config.replace(frame=FrameConfig.from_transform(ft))
    grid = pipeline.frame_grid(moved_cfg)
    if grid.n_boxes == 0:
        raise ValueError("transformed domain not covered by the grid")
    other = analyze(moved_cfg, root)
    per = config.flow.x_period if config.flow.periodic_x else None
    cmp = compare_partitions(base, other, ft, per)
    return ObjectivityReport(base.sigma2, other.sigma2, cmp["jaccard_x"], cmp["jaccard_y"], cmp["exact_x"],
                             cmp["exact_y"], is_grid_exact(config, ft), cmp["unmatched_y"])
