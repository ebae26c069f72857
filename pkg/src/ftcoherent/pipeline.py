"""Build, solve and extract for a :class:`RunConfig`, with on-disk artifacts.

A run directory holds::

    config.ini  metadata.json
    P.txt  M.txt  p.txt  q.txt  boxes_x.csv  boxes_y.csv        (build)
    singular_values.csv  u_<k>.csv  v_<k>.csv                   (svd)
    partition_x.csv  partition_y.csv  partition.json  *.svg     (extract)

``cached_build`` keys run directories by the config hash under the directory
named by ``FTCOHERENT_CACHE`` (default ``~/.cache/ftcoherent``); setting
``FTCOHERENT_REBUILD=1`` forces reassembly.
"""
from __future__ import annotations

import logging
import math
import os
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import __version__, persist, svg
from .coherent import CoherentPartition, singular_to_functions, threshold_search
from .config import RunConfig
from .flow import FrameTransform, transformed_flow
from .operator import TransferMatrices, build_transition
from .partition import BoxGrid, Lattice, SparseGrid, StripWrap, make_grid, pack_keys, unpack_keys
from .spectral import SingularTriple, top_k_singular, true_residual

log = logging.getLogger(__name__)


def set_threads(n: int) -> None:
    if n and n > 0:
        import numba

        numba.set_num_threads(min(int(n), numba.config.NUMBA_NUM_THREADS))


def frame_grid(cfg: RunConfig) -> BoxGrid:
    """Initial grid in the (possibly transformed) frame.

    Pure translations shift the grid exactly.  With a rotation the grid is
    the lattice-aligned bounding box of the rotated rectangle, keeping the
    boxes whose centres map back inside the original rectangle.
    """
    base = cfg.grid.make()
    ft = cfg.frame.transform()
    if ft.is_identity:
        return base
    b0 = ft.translation("t0")
    if ft.theta0 == 0:
        return make_grid((base.xmin + b0[0], base.xmax + b0[0], base.ymin + b0[1], base.ymax + b0[1]),
                         base.nx, base.ny)
    corners = np.array([[base.xmin, base.ymin], [base.xmax, base.ymin], [base.xmin, base.ymax],
                        [base.xmax, base.ymax]])
    from .flow import inverse_transform_point, transform_point

    tc = transform_point(ft, corners, "t0")
    lo = tc.min(axis=0)
    hi = tc.max(axis=0)
    nx = int(math.ceil((hi[0] - lo[0]) / base.wx))
    ny = int(math.ceil((hi[1] - lo[1]) / base.wy))
    box = make_grid((lo[0], lo[0] + nx * base.wx, lo[1], lo[1] + ny * base.wy), nx, ny)
    back = inverse_transform_point(ft, box.centers(), "t0")
    inside = (back[:, 0] >= base.xmin) & (back[:, 0] < base.xmax) & (back[:, 1] >= base.ymin) & (back[:, 1] < base.ymax)
    return make_grid((box.xmin, box.xmax, box.ymin, box.ymax), nx, ny, active=np.flatnonzero(inside))


def frame_wrap(cfg: RunConfig):
    spec = cfg.flow
    if not spec.periodic_x:
        return None
    ft = cfg.frame.transform()
    if ft.is_identity:
        return StripWrap(spec.x_period)
    th = ft.theta1
    return StripWrap(spec.x_period, (math.cos(th), math.sin(th)), tuple(ft.translation("t1")))


def build(cfg: RunConfig, progress: bool = False) -> TransferMatrices:
    set_threads(cfg.threads)
    grid = frame_grid(cfg)
    ft = cfg.frame.transform()
    fmap = transformed_flow(cfg.flow, ft)
    t = time.perf_counter()
    tm = build_transition(grid, fmap, cfg.grid.n_test, cfg.diffusion, wrap=frame_wrap(cfg), progress=progress)
    tm.meta.update(build_metadata(cfg, tm, time.perf_counter() - t))
    return tm


def build_metadata(cfg: RunConfig, tm: TransferMatrices, seconds: float) -> dict:
    gx = tm.grid_x
    return dict(
        config_hash=cfg.hash, version=__version__, name=cfg.name,
        shape=list(tm.shape), nnz=int(tm.P.nnz), build_seconds=seconds,
        a3_wavenumber=cfg.flow.a3_wavenumber, h=cfg.flow.h, s1=cfg.flow.s1, s2=cfg.flow.s2,
        eps=cfg.diffusion.eps, stencil=tm.meta.get("stencil"), n_stencil=tm.meta.get("n_stencil"),
        n_test=cfg.grid.n_test, implicit_diffusion_radius=max(gx.rx, gx.ry),
        grid_x=gx.describe(), grid_y=tm.grid_y.describe(),
        frame=dict(theta0=cfg.frame.theta0, theta1=cfg.frame.theta1, b0=[cfg.frame.b0x, cfg.frame.b0y],
                   b1=[cfg.frame.b1x, cfg.frame.b1y]),
    )


def _box_table(path, keys, lattice: Lattice, h: str):
    ix, iy = unpack_keys(keys)
    o = lattice.origins(ix, iy)
    persist.save_csv(path, "box_index,ix,iy,x0,y0", (np.arange(ix.size), ix, iy, o[:, 0], o[:, 1]),
                     ("%d", "%d", "%d", "%.17g", "%.17g"), h)


def save_build(cfg: RunConfig, tm: TransferMatrices, run_dir) -> Path:
    run = Path(run_dir)
    run.mkdir(parents=True, exist_ok=True)
    h = cfg.hash
    cfg.save(run / "config.ini")
    persist.save_triplets(run / "P.txt", tm.P, h)
    persist.save_triplets(run / "M.txt", tm.M, h)
    persist.save_vector(run / "p.txt", tm.p, h)
    persist.save_vector(run / "q.txt", tm.q, h)
    gx = tm.grid_x
    _box_table(run / "boxes_x.csv", gx.keys(), gx.lattice, h)
    _box_table(run / "boxes_y.csv", tm.grid_y.keys, tm.grid_y.lattice, h)
    meta = dict(tm.meta)
    meta["config_hash"] = h
    persist.save_json(run / "metadata.json", meta)
    return run


def load_build(run_dir) -> tuple[RunConfig, TransferMatrices]:
    run = Path(run_dir)
    meta = persist.load_json(run / "metadata.json")
    if not (run / "config.ini").exists():
        raise persist.ArtifactError(f"missing artifact {run / 'config.ini'}")
    cfg = RunConfig.load(run / "config.ini")
    h = meta.get("config_hash")
    if h != cfg.hash:
        raise persist.ArtifactError(f"{run}: metadata hash {h} does not match config hash {cfg.hash}")
    P = persist.load_triplets(run / "P.txt", h)
    p = persist.load_vector(run / "p.txt", h)
    q = persist.load_vector(run / "q.txt", h)
    grid = frame_grid(cfg)
    bx = persist.load_csv(run / "boxes_x.csv", h)
    if not np.array_equal(pack_keys(bx["ix"].astype(np.int64), bx["iy"].astype(np.int64)), grid.keys()):
        raise persist.ArtifactError(f"{run}: boxes_x.csv does not match the configured grid")
    by = persist.load_csv(run / "boxes_y.csv", h)
    gy = SparseGrid(grid.lattice, pack_keys(by["ix"].astype(np.int64), by["iy"].astype(np.int64)))
    return cfg, TransferMatrices(P, p, q, grid, gy, meta)


_REBUILT: set[Path] = set()


def cache_root() -> Path:
    return Path(os.environ.get("FTCOHERENT_CACHE", Path.home() / ".cache" / "ftcoherent"))


def cached_build(cfg: RunConfig, root=None, progress: bool = False) -> tuple[Path, TransferMatrices]:
    """Load the build for ``cfg`` from the cache, assembling it when absent."""
    run = Path(root or cache_root()) / cfg.hash
    fresh = os.environ.get("FTCOHERENT_REBUILD") == "1" and run not in _REBUILT
    if not fresh and (run / "metadata.json").exists():
        try:
            return run, load_build(run)[1]
        except persist.ArtifactError as exc:
            log.warning("rebuilding %s: %s", run, exc)
    tm = build(cfg, progress=progress)
    clear_downstream(run)
    save_build(cfg, tm, run)
    _REBUILT.add(run)
    return run, tm


def clear_downstream(run_dir) -> None:
    """Remove svd and extract outputs that belong to an older build."""
    run = Path(run_dir)
    if not run.exists():
        return
    for pat in ("singular_values.csv", "u_*.csv", "v_*.csv", "partition*", "f.csv", "g.csv", "*.svg"):
        for fp in run.glob(pat):
            fp.unlink()


def solve(cfg: RunConfig, tm: TransferMatrices, k: int | None = None) -> list[SingularTriple]:
    s = cfg.solver
    return top_k_singular(tm.M, k or s.k, tol=s.tol, max_iter=s.max_iter, seed=s.seed)


def save_svd(run_dir, triples: list[SingularTriple], h: str) -> None:
    run = Path(run_dir)
    n = len(triples)
    persist.save_csv(run / "singular_values.csv", "index,sigma,residual",
                     (np.arange(1, n + 1), np.array([t.sigma for t in triples]),
                      np.array([t.residual for t in triples])), ("%d", "%.17g", "%.6g"), h)
    for i, t in enumerate(triples, start=1):
        persist.save_csv(run / f"u_{i}.csv", "box_index,value", (np.arange(t.u.size), t.u), ("%d", "%.17g"), h)
        persist.save_csv(run / f"v_{i}.csv", "box_index,value", (np.arange(t.v.size), t.v), ("%d", "%.17g"), h)


def load_svd(run_dir, h: str, degenerate_tol: float = 1e-12) -> list[SingularTriple]:
    run = Path(run_dir)
    sv = persist.load_csv(run / "singular_values.csv", h)
    sig = sv["sigma"]
    out = []
    for i in range(sig.size):
        u = persist.load_csv(run / f"u_{i + 1}.csv", h)["value"]
        v = persist.load_csv(run / f"v_{i + 1}.csv", h)["value"]
        close = any(abs(sig[i] - sig[j]) < degenerate_tol for j in (i - 1, i + 1) if 0 <= j < sig.size)
        out.append(SingularTriple(float(sig[i]), u, v, float(sv["residual"][i]), 0, close))
    return out


def extract(cfg: RunConfig, tm: TransferMatrices, triples: list[SingularTriple]) -> tuple[CoherentPartition, np.ndarray, np.ndarray]:
    if len(triples) < 2:
        raise ValueError("need at least two singular triples")
    f, g = singular_to_functions(triples[1], tm.p, tm.q)
    part = threshold_search(tm, f, g, cfg.n_candidates, triple=triples[1])
    return part, f, g


def save_extract(run_dir, tm: TransferMatrices, part: CoherentPartition, f, g, h: str, plots: bool = True) -> None:
    run = Path(run_dir)
    persist.save_csv(run / "partition_x.csv", "box_index,label", (np.arange(part.x_labels.size), part.x_labels),
                     ("%d", "%d"), h)
    persist.save_csv(run / "partition_y.csv", "box_index,label", (np.arange(part.y_labels.size), part.y_labels),
                     ("%d", "%d"), h)
    persist.save_csv(run / "f.csv", "box_index,value", (np.arange(f.size), f), ("%d", "%.17g"), h)
    persist.save_csv(run / "g.csv", "box_index,value", (np.arange(g.size), g), ("%d", "%.17g"), h)
    summary = dict(part.summary(), config_hash=h, n_x=int(part.x_labels.size), n_y=int(part.y_labels.size))
    persist.save_json(run / "partition.json", summary)
    if plots:
        write_figures(run, tm, part, f, g)


def write_figures(run_dir, tm: TransferMatrices, part: CoherentPartition | None = None, f=None, g=None) -> None:
    run = Path(run_dir)
    gx, gy = tm.grid_x, tm.grid_y
    lx, ly = gx.lattice, gy.lattice
    svg.heatmap(run / "density_y.svg", gy.origins(), ly.wx, ly.wy, tm.q * gx.n_boxes * gx.box_area / gy.box_area,
                title="image density")
    if f is not None:
        svg.heatmap(run / "f2.svg", gx.origins(), lx.wx, lx.wy, f, diverging=True, title="second left singular function")
        svg.heatmap(run / "g2.svg", gy.origins(), ly.wx, ly.wy, g, diverging=True, title="second right singular function")
    if part is not None:
        svg.heatmap(run / "partition_x.svg", gx.origins(), lx.wx, lx.wy, part.x_labels, labels=True,
                    title=f"X1/X2  mu = {part.mu[0]:.4f}/{part.mu[1]:.4f}")
        svg.heatmap(run / "partition_y.svg", gy.origins(), ly.wx, ly.wy, part.y_labels, labels=True,
                    title=f"Y1/Y2  rho = {part.rho:.4f}")


def load_partition(run_dir, h: str, tm: TransferMatrices) -> CoherentPartition:
    run = Path(run_dir)
    s = persist.load_json(run / "partition.json")
    if s.get("config_hash") != h:
        raise persist.ArtifactError(f"{run / 'partition.json'}: config hash mismatch")
    xl = persist.load_csv(run / "partition_x.csv", h)["label"].astype(np.int8)
    yl = persist.load_csv(run / "partition_y.csv", h)["label"].astype(np.int8)
    return CoherentPartition(s["b"], s["c"], xl, yl, (s["mu1"], s["mu2"]), (s["nu1"], s["nu2"]), s["rho"], s["sigma2"])


@dataclass
class Analysis:
    """Everything downstream studies need from one configuration."""

    config: RunConfig
    run_dir: Path
    tm: TransferMatrices
    triples: list[SingularTriple]
    partition: CoherentPartition
    f: np.ndarray
    g: np.ndarray

    @property
    def sigma2(self) -> float:
        return self.triples[1].sigma


def analyze(cfg: RunConfig, root=None, progress: bool = False) -> Analysis:
    """Cached build followed by the SVD and threshold search (results cached too)."""
    run, tm = cached_build(cfg, root, progress)
    h = cfg.hash
    try:
        triples = load_svd(run, h)
        if len(triples) < max(2, cfg.solver.k):
            raise persist.ArtifactError("too few triples")
    except persist.ArtifactError:
        triples = solve(cfg, tm)
        save_svd(run, triples, h)
    try:
        part = load_partition(run, h, tm)
        f = persist.load_csv(run / "f.csv", h)["value"]
        g = persist.load_csv(run / "g.csv", h)["value"]
    except (persist.ArtifactError, KeyError):
        part, f, g = extract(cfg, tm, triples)
        save_extract(run, tm, part, f, g, h)
    return Analysis(cfg, run, tm, triples, part, f, g)


def verify(tm: TransferMatrices, triples: list[SingularTriple] | None = None,
           part: CoherentPartition | None = None, seed: int = 0) -> list[tuple[str, bool, str]]:
    """Re-check the operator, spectral and coherence invariants.

    Returns ``(name, ok, detail)`` per invariant.
    """
    from .operator import apply_L, apply_L_dual

    out = []
    P = tm.P
    sums = np.asarray(P.sum(axis=1)).ravel()
    dev = np.abs(sums - 1.0)
    worst = int(np.argmax(dev))
    out.append(("row_sums", bool(dev.max() <= 1e-12 and P.data.min(initial=0) >= 0),
                f"max |row sum - 1| = {dev.max():.3g} at row {worst}"))
    out.append(("p_normalised", bool(abs(tm.p.sum() - 1) <= 1e-12 and np.all(tm.p >= 0)), f"sum p = {tm.p.sum():.17g}"))
    qq = P.T @ tm.p
    out.append(("q_consistent", bool(np.abs(qq - tm.q).max() <= 1e-12 and np.all(tm.q > 0)
                                     and abs(tm.q.sum() - 1) <= 1e-12),
                f"max |P^T p - q| = {np.abs(qq - tm.q).max():.3g}, min q = {tm.q.min():.3g}"))
    M = tm.M
    sp_, sq = np.sqrt(tm.p), np.sqrt(tm.q)
    r1 = float(np.linalg.norm(M.T @ sp_ - sq))
    r2 = float(np.linalg.norm(M @ sq - sp_))
    out.append(("sigma1_vectors", r1 <= 1e-10 and r2 <= 1e-10, f"|M^T sqrt(p) - sqrt(q)| = {r1:.3g}, |M sqrt(q) - sqrt(p)| = {r2:.3g}"))
    rng = np.random.default_rng(seed)
    worst_d = 0.0
    for _ in range(100):
        f = rng.standard_normal(P.shape[0])
        g = rng.standard_normal(P.shape[1])
        lhs = float(np.dot(tm.q * apply_L(tm, f), g))
        rhs = float(np.dot(tm.p * f, apply_L_dual(tm, g)))
        worst_d = max(worst_d, abs(lhs - rhs) / max(1.0, abs(lhs)))
    out.append(("duality", worst_d <= 1e-12, f"max relative |<Lf,g>_q - <f,L*g>_p| = {worst_d:.3g}"))
    if triples:
        s1 = triples[0]
        ok = abs(s1.sigma - 1.0) <= 1e-10
        out.append(("sigma1_is_one", ok, f"sigma_1 = {s1.sigma:.17g}"))
        res = max(true_residual(M, t.sigma, t.u, t.v) for t in triples)
        out.append(("triple_residuals", res <= 1e-8, f"max residual = {res:.3g}"))
        U = np.stack([t.u for t in triples], axis=1)
        orth = float(np.abs(U.T @ U - np.eye(U.shape[1])).max())
        out.append(("u_orthonormal", orth <= 1e-8, f"max |U^T U - I| = {orth:.3g}"))
    if part is not None and triples and len(triples) > 1:
        from .coherent import coherence, mass_tol

        rho = coherence(tm, part.x_labels == 1, part.y_labels == 1)
        bound = 1.0 + triples[1].sigma
        out.append(("rho_bound", rho <= bound + 1e-9 and abs(rho - part.rho) <= 1e-9,
                    f"rho = {rho:.12g}, 1 + sigma_2 = {bound:.12g}"))
        mt = mass_tol(tm)
        mu1 = float(tm.p[part.x_labels == 1].sum())
        nu1 = float(tm.q[part.y_labels == 1].sum())
        out.append(("mass_match", abs(mu1 - nu1) <= mt, f"|mu(X1) - nu(Y1)| = {abs(mu1 - nu1):.3g}, tol {mt:.3g}"))
    return out
