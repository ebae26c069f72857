"""Command-line driver.

Verbs: ``build``, ``svd``, ``extract``, ``verify``, ``scale``, ``objectivity``.
Exit codes: 0 success, 1 usage, 2 numerical failure, 3 invariant violation.
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import persist, pipeline, svg
from .config import PRESETS, RunConfig, preset
from .flow import FrameTransform, IntegrationError
from .spectral import SpectralConvergenceError

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC, EXIT_INVARIANT = 0, 1, 2, 3


class UsageError(Exception):
    pass


def _config(args) -> RunConfig:
    if args.config and args.preset:
        raise UsageError("give either --config or --preset, not both")
    if args.config:
        try:
            cfg = RunConfig.load(args.config)
        except (OSError, ValueError) as exc:
            raise UsageError(f"cannot read config: {exc}") from exc
    elif args.preset:
        try:
            cfg = preset(args.preset)
        except ValueError as exc:
            raise UsageError(str(exc)) from exc
    else:
        raise UsageError("--config or --preset is required")
    if args.threads is not None:
        cfg = cfg.replace(threads=args.threads)
    if args.out:
        cfg = cfg.replace(out=args.out)
    return cfg


def _run_dir(args) -> Path:
    run = args.run or args.out
    if not run:
        raise UsageError("give the run directory (positional or --out)")
    return Path(run)


def cmd_build(args) -> int:
    cfg = _config(args)
    out = Path(cfg.out)
    tm = pipeline.build(cfg, progress=args.verbose)
    pipeline.clear_downstream(out)
    pipeline.save_build(cfg, tm, out)
    m = tm.meta
    print(f"built {m['shape'][0]}x{m['shape'][1]} nnz={m['nnz']} in {m['build_seconds']:.1f}s -> {out}")
    return EXIT_OK


def _load(run: Path):
    cfg, tm = pipeline.load_build(run)
    return cfg, tm, cfg.hash


def cmd_svd(args) -> int:
    run = _run_dir(args)
    cfg, tm, h = _load(run)
    pipeline.set_threads(args.threads or cfg.threads)
    triples = pipeline.solve(cfg, tm, args.k)
    pipeline.save_svd(run, triples, h)
    for i, t in enumerate(triples, start=1):
        print(f"{i},{t.sigma:.17g},{t.residual:.3g}")
    if triples[0].sigma - (triples[1].sigma if len(triples) > 1 else 0.0) < 1e-12:
        print("warning: leading singular value is not simple", file=sys.stderr)
    return EXIT_OK


def cmd_extract(args) -> int:
    run = _run_dir(args)
    cfg, tm, h = _load(run)
    triples = pipeline.load_svd(run, h)
    part, f, g = pipeline.extract(cfg, tm, triples)
    pipeline.save_extract(run, tm, part, f, g, h, plots=not args.no_plots)
    s = part.summary()
    print(f"rho={s['rho']:.6f} mu1={s['mu1']:.4f} mu2={s['mu2']:.4f} b={s['b']:.6g} c={s['c']:.6g} "
          f"bound_slack={s['bound_slack']:.3g}")
    return EXIT_OK


def cmd_verify(args) -> int:
    run = _run_dir(args)
    cfg, tm, h = _load(run)
    # the stored M is rebuilt from P; a stale M is itself a violation
    triples = None
    if (run / "singular_values.csv").exists():
        triples = pipeline.load_svd(run, h)
    part = pipeline.load_partition(run, h, tm) if (run / "partition.json").exists() else None
    results = pipeline.verify(tm, triples, part)
    if (run / "M.txt").exists():
        d = abs(persist.load_triplets(run / "M.txt", h) - tm.M)
        dmax = float(d.max()) if d.nnz else 0.0
        results.append(("stored_M", dmax <= 1e-15, f"max |M_stored - M(P)| = {dmax:.3g}"))
    bad = [r for r in results if not r[1]]
    for name, ok, detail in results:
        print(f"{'PASS' if ok else 'FAIL'} {name}: {detail}")
    return EXIT_INVARIANT if bad else EXIT_OK


def cmd_scale(args) -> int:
    from .diagnostics import check_radii, gap_scaling

    cfg = _config(args)
    try:
        eps = [float(e) for e in args.eps.split(",")]
        check_radii(eps, cfg.grid.make())
    except ValueError as exc:
        raise UsageError(f"--eps: {exc}") from exc
    rep = gap_scaling(cfg, eps, n_test=args.n_test, root=args.cache)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    cols = ["eps", "eps_eff", "sigma2", "gap", "holder_f", "holder_g", "width_f", "width_g"]
    persist.save_csv(out / "scaling.csv", ",".join(cols), [rep.column(c) for c in cols], ["%.17g"] * len(cols),
                     cfg.hash)
    persist.save_json(out / "scaling.json", dict(exponent=rep.exponent, constant=rep.constant,
                                                 fit_residual=rep.fit_residual, c_hat=rep.c_hat, checks=rep.checks,
                                                 runs=[r.config_hash for r in rep.rows]))
    e = rep.column("eps_eff")
    svg.line_chart(out / "gap.svg", {"1 - sigma_2": (e, rep.column("gap")), "C eps": (e, rep.c_hat * e)},
                   title="spectral gap", xlabel="eps", ylabel="gap", loglog=True)
    svg.line_chart(out / "moduli.svg", {"Holder f": (e, rep.column("holder_f")), "Holder g": (e, rep.column("holder_g"))},
                   title="Hoelder moduli (exponent 1/2)", xlabel="eps", ylabel="modulus", loglog=True)
    for r in rep.rows:
        print(f"eps={r.eps:g} sigma2={r.sigma2:.6f} gap={r.gap:.5f} holder_f={r.holder_f:.4g} "
              f"holder_g={r.holder_g:.4g} width_f={r.width_f:.4g} width_g={r.width_g:.4g}")
    print(f"c_hat={rep.c_hat:.4g} exponent={rep.exponent} checks={rep.checks}")
    return EXIT_OK


def cmd_objectivity(args) -> int:
    from .diagnostics import objectivity_check

    cfg = _config(args)
    ft = FrameTransform(args.theta0, args.theta1, tuple(args.b0), tuple(args.b1))
    rep = objectivity_check(cfg, ft, root=args.cache)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    persist.save_json(out / "objectivity.json", dict(rep.as_dict(), config_hash=cfg.hash))
    print(f"sigma2={rep.sigma2:.12f} sigma2_transformed={rep.sigma2_transformed:.12f} "
          f"delta={rep.delta_sigma2:.3g} jaccard_x={rep.jaccard_x:.4f} jaccard_y={rep.jaccard_y:.4f} "
          f"grid_exact={rep.grid_exact}")
    return EXIT_OK


def parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="INI run configuration")
    common.add_argument("--preset", choices=sorted(PRESETS), help="built-in configuration")
    common.add_argument("--out", help="output (run) directory")
    common.add_argument("--threads", type=int, help="worker threads for the integrator")
    common.add_argument("-v", "--verbose", action="store_true")

    ap = argparse.ArgumentParser(prog="ftcoherent", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="verb", required=True)
    sub.add_parser("build", parents=[common], help="assemble P, p, q, M")
    for verb, hlp in (("svd", "leading singular triples"), ("extract", "threshold search"),
                      ("verify", "re-check invariants")):
        sp_ = sub.add_parser(verb, parents=[common], help=hlp)
        sp_.add_argument("run", nargs="?", help="run directory (defaults to --out)")
        if verb == "svd":
            sp_.add_argument("-k", type=int, default=None, help="number of triples")
        if verb == "extract":
            sp_.add_argument("--no-plots", action="store_true")
    sc = sub.add_parser("scale", parents=[common], help="gap, regularity and width versus eps")
    sc.add_argument("--eps", required=True, help="comma-separated radii")
    sc.add_argument("--n-test", type=int, default=None)
    sc.add_argument("--cache", default=None, help="cache directory for the per-eps runs")
    ob = sub.add_parser("objectivity", parents=[common], help="compare against a moving frame")
    ob.add_argument("--theta0", type=float, default=0.0)
    ob.add_argument("--theta1", type=float, default=0.0)
    ob.add_argument("--b0", type=float, nargs=2, default=(0.0, 0.0))
    ob.add_argument("--b1", type=float, nargs=2, default=(0.0, 0.0))
    ob.add_argument("--cache", default=None)
    return ap


_COMMANDS = dict(build=cmd_build, svd=cmd_svd, extract=cmd_extract, verify=cmd_verify, scale=cmd_scale,
                 objectivity=cmd_objectivity)


def main(argv=None) -> int:
    ap = parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    if not hasattr(args, "run"):
        args.run = None
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return _COMMANDS[args.verb](args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except persist.ArtifactError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (IntegrationError, SpectralConvergenceError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
