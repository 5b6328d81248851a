"""Command-line entry point.

Exit codes: 0 success, 1 a check failed, 2 usage or input error.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io as _io
import json
import logging
import math
import os
import sys

import numpy as np
from scipy import fft as sfft

from . import __version__
from .corpus import (CHECK_COLUMNS, CHECKS, PINNED_SEEDS, empirical_constants,
                     verify_corpus, write_manifest)
from .errors import FormatError, RieszLabError
from .functionals import (PenaltyParams, evaluate_all,
                          necklace_bounds, necklace_flip_point)
from .geometry import GridSpec, StarBoundary, fraenkel_asymmetry, rasterize_star
from .io import (STAR_FORMAT, domain_from_dict, dumps, load_star, read_json,
                 save_domain, star_from_dict, star_to_dict, write_atomic)
from .riesz import CACHE_ENV, CACHE_VERSION, CORRECTION_ORDER
from .shapeopt import (TRACE_COLUMNS, DescentConfig, descend, perturbed_start,
                       stability_threshold)
from .surgery import SURGERY_COLUMNS, surgery_sweep

log = logging.getLogger("rieszlab")

EXIT_OK, EXIT_CHECK, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


def _file_hash(path):
    with open(path, "rb") as f:
        return hashlib.sha1(f.read()).hexdigest()


def provenance(args, **extra):
    out = {"code_version": __version__,
           "kernel_table": f"{CORRECTION_ORDER}/v{CACHE_VERSION}",
           "tol": args.tol, "grid": args.grid, "seed": args.seed}
    out.update(extra)
    return out


def _clean(v):
    if isinstance(v, float) and not math.isfinite(v):
        return repr(v)
    if isinstance(v, (np.floating,)):
        return _clean(float(v))
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, (np.bool_,)):
        return bool(v)
    if isinstance(v, dict):
        return {k: _clean(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_clean(x) for x in v]
    return v


def _csv_text(columns, rows):
    buf = _io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([repr(float(x)) if isinstance(x, (float, np.floating)) else x
                    for x in r])
    return buf.getvalue()


def emit(args, name, text):
    """Write ``text`` to <out>/<name>, or to stdout without --out."""
    if args.out:
        write_atomic(os.path.join(args.out, name), text)
    else:
        sys.stdout.write(text)


def _params(args):
    if args.epsilon < 0:
        raise UsageError("epsilon must be nonnegative")
    if not 0 < args.eta < 1:
        raise UsageError("eta must lie in (0, 1)")
    if not args.alpha > 0:
        raise UsageError("alpha must be positive")
    return PenaltyParams(eta=args.eta, epsilon=args.epsilon, alpha=args.alpha)


def _grid_for_star(b, args):
    n = args.grid or 256
    return GridSpec.centered(2, n, 2.4 * b.max_radius() + 0.2, b.center)


def _load(args, path):
    if not os.path.exists(path):
        raise UsageError(f"no such file: {path}")
    d = read_json(path)
    if isinstance(d, dict) and d.get("format") == STAR_FORMAT:
        b = star_from_dict(d)
        return rasterize_star(b, _grid_for_star(b, args)), b
    return domain_from_dict(d), None


# --------------------------------------------------------------------------
# commands
# --------------------------------------------------------------------------

def cmd_eval(args):
    params = _params(args)
    dom, _ = _load(args, args.domain)
    rep = evaluate_all(dom, params, with_eigen=not args.no_eigen,
                       tol=args.tol, method="direct")
    rec = {"experiment": "eval", "input_hash": _file_hash(args.domain),
           "report": rep.as_dict(),
           "params": {"alpha": params.alpha, "epsilon": params.epsilon,
                      "eta": params.eta},
           "provenance": provenance(args, cells_per_axis=dom.spec.n,
                                    spacing=dom.h)}
    emit(args, "eval.json", dumps(_clean(rec)))
    return EXIT_OK


def cmd_verify(args):
    checks = tuple(c.strip() for c in args.checks.split(",") if c.strip())
    bad = [c for c in checks if c not in CHECKS]
    if bad or not checks:
        raise UsageError(f"unknown checks {bad}; choose from {CHECKS}")
    try:
        rows = verify_corpus(args.corpus, checks, args.alpha, args.grid, args.tol)
    except FileNotFoundError:
        raise UsageError(f"corpus not found: {args.corpus}")
    emit(args, "verify.csv", _csv_text(CHECK_COLUMNS, [r.as_list() for r in rows]))
    consts = empirical_constants(rows)
    for k, v in sorted(consts.items()):
        log.info("min deficit/A^2 for %s: %.6g", k, v)
    return EXIT_OK if all(r.ok for r in rows) else EXIT_CHECK


def _parse_modes(specs):
    a, b = {}, {}
    for s in specs or []:
        try:
            key, val = s.split("=")
            kind, k = key[0], int(key[1:])
            val = float(val)
        except ValueError:
            raise UsageError(f"bad mode '{s}', expected e.g. a2=0.15")
        if kind not in "ab" or k < 1:
            raise UsageError(f"bad mode '{s}'")
        (a if kind == "a" else b)[k] = val
    K = max([2, *a, *b])
    av = [a.get(k, 0.0) for k in range(1, K + 1)]
    bv = [b.get(k, 0.0) for k in range(1, K + 1)]
    return StarBoundary(1.0, (0.0, 0.0), av, bv).scaled_to_area(1.0)


def _descent_config(args, params):
    return DescentConfig(params=params, functional=args.functional,
                         max_mode=args.max_mode, max_iter=args.max_iter,
                         volume="penalty" if args.functional == "G" else args.volume,
                         n=args.grid or 96, solver_tol=min(args.tol, 1e-9))


def cmd_optimize(args):
    params = _params(args)
    if args.start:
        start = load_star(args.start)
    else:
        start = _parse_modes(args.mode or ["a2=0.15"])
    cfg = _descent_config(args, params)
    res = descend(start, cfg)
    A = fraenkel_asymmetry(res.final_evaluation.dom)[0]
    emit(args, "trace.csv", _csv_text(TRACE_COLUMNS, [r.row() for r in res.trace]))
    summary = {"experiment": "optimize", "status": res.status,
               "iterations": res.iterations, "final_asymmetry": A,
               "final": star_to_dict(res.final),
               "residual_std": None if res.residual is None else res.residual.relative_std,
               "provenance": provenance(args, functional=cfg.functional,
                                        epsilon=params.epsilon)}
    emit(args, "optimize.json", dumps(_clean(summary)))
    return EXIT_OK


SWEEP_COLUMNS = ["epsilon", "seed", "status", "final_asymmetry", "final_J",
                 "below_threshold", "necklace_wins"]


def cmd_sweep(args):
    try:
        eps_grid = [float(x) for x in args.eps_grid.split(",") if x.strip()]
    except ValueError:
        raise UsageError("epsilon grid must be comma-separated numbers")
    if not eps_grid:
        raise UsageError("empty epsilon grid")
    if any(e < 0 for e in eps_grid):
        raise UsageError("epsilon must be nonnegative")
    # the penalized form shares the threshold of its torsion functional
    thr = stability_threshold("F_tilde" if args.functional == "F_tilde" else "F",
                              args.alpha)
    flip, _ = necklace_flip_point(args.delta, 2, args.alpha)
    rows = []
    for eps in eps_grid:
        params = PenaltyParams(eta=args.eta, epsilon=eps, alpha=args.alpha)
        cfg = _descent_config(args, params)
        nb = necklace_bounds(args.delta, eps, 2, args.alpha)
        for s in range(args.starts):
            seed = args.seed + s
            try:
                res = descend(perturbed_start(seed), cfg)
                A = fraenkel_asymmetry(res.final_evaluation.dom)[0]
                rows.append([eps, seed, res.status, A, res.final_evaluation.J,
                             eps < thr.bracket[0], nb.necklace_wins])
            except RieszLabError as exc:
                log.warning("descent failed at eps=%g seed=%d: %s", eps, seed, exc)
                rows.append([eps, seed, "failed", float("nan"), float("nan"),
                             eps < thr.bracket[0], nb.necklace_wins])
    emit(args, "sweep.csv", _csv_text(SWEEP_COLUMNS, rows))
    summary = {"experiment": "sweep", "functional": args.functional,
               "threshold_bracket": list(thr.bracket),
               "necklace_flip_epsilon": flip, "delta": args.delta,
               "provenance": provenance(args)}
    emit(args, "sweep.json", dumps(_clean(summary)))
    return EXIT_OK


def cmd_necklace(args):
    if not 0 < args.delta < 1:
        raise UsageError("delta must lie in (0, 1)")
    rec = {"experiment": "necklace", "delta": args.delta, "alpha": args.alpha,
           "provenance": provenance(args)}
    if args.eps_scan:
        flip, b = necklace_flip_point(args.delta, 2, args.alpha)
        rec["flip_epsilon"] = flip
        if b is not None:
            rec["bounds_at_flip"] = b.__dict__
    else:
        if args.epsilon < 0:
            raise UsageError("epsilon must be nonnegative")
        rec["bounds"] = necklace_bounds(args.delta, args.epsilon, 2, args.alpha).__dict__
    emit(args, "necklace.json", dumps(_clean(rec)))
    return EXIT_OK


def _parse_directions(text, N):
    out = []
    for tok in text.split(","):
        tok = tok.strip()
        if len(tok) < 3 or tok[0] not in "+-" or tok[1] != "e":
            raise UsageError(f"bad direction '{tok}', expected e.g. -e1")
        ax = int(tok[2:]) - 1
        if not 0 <= ax < N:
            raise UsageError(f"direction '{tok}' out of range")
        out.append((ax, -1 if tok[0] == "-" else 1))
    return out


def cmd_surgery(args):
    params = _params(args)
    dom, _ = _load(args, args.domain)
    dirs = _parse_directions(args.directions, dom.dim) if args.directions else None
    if not args.c4 > 0:
        raise UsageError("C4 must be positive")
    res = surgery_sweep(dom, params, args.c4, dirs, tol=min(args.tol, 1e-10))
    rows = [[r.row()[c] for c in SURGERY_COLUMNS] for r in res.log]
    emit(args, "surgery.csv", _csv_text(SURGERY_COLUMNS, rows))
    summary = {"experiment": "surgery", "input_hash": _file_hash(args.domain),
               "lambda_initial": res.lambda_initial, "lambda_final": res.lambda_final,
               "lambda_drop": res.lambda_initial - res.lambda_final,
               "F_tilde_initial": res.F_tilde_initial,
               "F_tilde_final": res.F_tilde_final,
               "diameter_initial": res.diameter_initial,
               "diameter_final": res.diameter_final,
               "c4_sensitivity": {str(k): v for k, v in res.c4_sensitivity.items()},
               "provenance": provenance(args, C4=args.c4)}
    emit(args, "surgery.json", dumps(_clean(summary)))
    if args.out:
        save_domain(res.result, os.path.join(args.out, "surgery_result.dom"))
    return EXIT_OK


def cmd_gen_corpus(args):
    if args.count < 1:
        raise UsageError("count must be positive")
    if args.count == 20 and args.seed == 0:
        seeds = PINNED_SEEDS
    else:
        seeds = tuple(range(args.seed, args.seed + args.count))
    if not args.out:
        raise UsageError("gen-corpus needs --out")
    write_manifest(os.path.join(args.out, "manifest.json"), seeds, args.grid or 256)
    return EXIT_OK


# --------------------------------------------------------------------------
# parser
# --------------------------------------------------------------------------

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"{self.prog}: error: {message}\n")
        raise SystemExit(EXIT_USAGE)


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--grid", type=int, default=None,
                        help="cells per axis for rasterized inputs")
    common.add_argument("--tol", type=float, default=1e-9, help="solver tolerance")
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--out", default=None, help="output directory (default stdout)")
    common.add_argument("--threads", type=int, default=1, help="FFT worker threads")
    common.add_argument("-v", "--verbose", action="store_true")

    phys = argparse.ArgumentParser(add_help=False)
    phys.add_argument("--alpha", type=float, default=1.5)
    phys.add_argument("--epsilon", "--eps", type=float, default=0.0)
    phys.add_argument("--eta", type=float, default=0.5)

    desc = argparse.ArgumentParser(add_help=False)
    desc.add_argument("--functional", choices=("F", "F_tilde", "G"), default="F")
    desc.add_argument("--max-mode", type=int, default=4)
    desc.add_argument("--max-iter", type=int, default=40)
    desc.add_argument("--volume", choices=("project", "penalty"), default="project")

    p = _Parser(prog="rieszlab", description=(
        "Shape functionals with torsion or eigenvalue attraction and Riesz "
        f"repulsion. Kernel tables are cached in ${CACHE_ENV} when set."))
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("eval", parents=[common, phys], help="evaluate all functionals")
    s.add_argument("domain")
    s.add_argument("--no-eigen", action="store_true")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("verify", parents=[common], help="inequality checks on a corpus")
    s.add_argument("corpus")
    s.add_argument("--checks", default=",".join(CHECKS))
    s.add_argument("--alpha", type=float, default=1.5)
    s.set_defaults(func=cmd_verify)

    s = sub.add_parser("optimize", parents=[common, phys, desc], help="shape descent")
    s.add_argument("start", nargs="?", help="star boundary file")
    s.add_argument("--mode", action="append", help="start coefficient, e.g. a2=0.15")
    s.set_defaults(func=cmd_optimize)

    s = sub.add_parser("sweep", parents=[common, desc], help="epsilon phase sweep")
    s.add_argument("--eps-grid", required=True)
    s.add_argument("--starts", type=int, default=3)
    s.add_argument("--delta", type=float, default=0.4)
    s.add_argument("--alpha", type=float, default=1.5)
    s.add_argument("--eta", type=float, default=0.5)
    s.set_defaults(func=cmd_sweep)

    s = sub.add_parser("necklace", parents=[common], help="ball versus necklace")
    s.add_argument("--delta", type=float, default=0.4)
    s.add_argument("--alpha", type=float, default=1.5)
    s.add_argument("--epsilon", "--eps", type=float, default=0.0)
    s.add_argument("--eps-scan", action="store_true")
    s.set_defaults(func=cmd_necklace)

    s = sub.add_parser("surgery", parents=[common, phys], help="tail-cutting sweep")
    s.add_argument("domain")
    s.add_argument("--c4", type=float, default=10.0)
    s.add_argument("--directions", default=None, help="e.g. -e1,+e1")
    s.set_defaults(func=cmd_surgery)

    s = sub.add_parser("gen-corpus", parents=[common], help="write a corpus manifest")
    s.add_argument("--count", type=int, default=20)
    s.set_defaults(func=cmd_gen_corpus)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.threads < 1:
        sys.stderr.write("rieszlab: error: --threads must be positive\n")
        return EXIT_USAGE
    try:
        with sfft.set_workers(args.threads):
            return args.func(args)
    except FormatError as exc:
        sys.stderr.write(f"rieszlab: error: {exc}\n")
        return EXIT_USAGE
    except (UsageError, json.JSONDecodeError, OSError) as exc:
        sys.stderr.write(f"rieszlab: error: {exc}\n")
        return EXIT_USAGE
    except RieszLabError as exc:
        sys.stderr.write(f"rieszlab: error: {exc}\n")
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
