"""Command line entry point: ``commlab <subcommand> [--config FILE] [--set sec.key=val]``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .commutator import standard_commutator
from .correctors import (build_hierarchy, corrector_relation_check, flux_identity_residual,
                         moment_scan, skew_defect)
from .elliptic import ConvergenceError
from .ensemble import covariance_tail_check, sample_coefficient
from .lab import (GATEAUX_COLUMNS, MOMENT_COLUMNS, RunManifest, load_config,
                  run_decay_scan, save_decay_scan, write_csv)
from .sensitivity import TestFunction, gateaux_check

log = logging.getLogger("commlab")


def dump_field(path, arr: np.ndarray, meta: dict):
    """Little-endian float64, row-major, component axes first; JSON header alongside."""
    path = Path(path)
    np.ascontiguousarray(arr, dtype="<f8").tofile(path)
    header = dict(meta, dtype="<f8", order="C", shape=list(arr.shape))
    hpath = path.with_suffix(".json")
    hpath.write_text(json.dumps(header, indent=2, sort_keys=True) + "\n")
    return [path, hpath]


def cmd_sample(cfg, out, args):
    spec = cfg.spec()
    a = sample_coefficient(spec, cfg.index)
    d = cfg.d
    rows = [dict(k=k, l=l, mean=float(a[k, l].mean()), min=float(a[k, l].min()),
                 max=float(a[k, l].max())) for k in range(d) for l in range(d)]
    files = [write_csv(out / "sample_stats.csv", rows, ("k", "l", "mean", "min", "max"))]
    if not args.no_dump:
        files += dump_field(out / "coefficient.bin", a, dict(d=d, M=cfg.M, seed=cfg.seed, index=cfg.index))
    for r in rows:
        print(f"a[{r['k']},{r['l']}]  mean={r['mean']:.6g}  min={r['min']:.6g}  max={r['max']:.6g}")
    return files


def cmd_correctors(cfg, out, args):
    a = sample_coefficient(cfg.spec(), cfg.index)
    h = build_hierarchy(a, cfg.order, tol=cfg.tol, dual=True, top_flux=True)
    coeffs, resid = [], []
    for n in range(1, h.depth + 1):
        for s, A in sorted(h.abar[n].items()):
            label = "".join(str(c) for c in s) or "-"
            print(f"abar^{n}[{label}] =\n{np.array2string(A, precision=10)}")
            for k in range(cfg.d):
                for l in range(cfg.d):
                    coeffs.append(dict(level=n, string=label, row=k, col=l, value=float(A[k, l])))
        for s in h.strings(n):
            if s in h.sigma:
                resid.append(dict(check="flux_identity", level=n, value=flux_identity_residual(h, s)))
        resid.append(dict(check="corrector_relation", level=n, value=corrector_relation_check(h, n)))
    resid.append(dict(check="sigma_skew", level=0, value=skew_defect(h)))
    xi = standard_commutator(h, h.depth).as_array()
    resid.append(dict(check="commutator_max_abs", level=h.depth, value=float(np.max(np.abs(xi)))))
    agg = {}
    for r in resid:
        key = (r["check"], r["level"])
        agg[key] = max(agg.get(key, 0.0), r["value"])
    resid = [dict(check=c, level=n, value=v) for (c, n), v in agg.items()]
    for r in resid:
        print(f"{r['check']:<20} level {r['level']}  {r['value']:.3e}")
    return [write_csv(out / "effective_coefficients.csv", coeffs, ("level", "string", "row", "col", "value")),
            write_csv(out / "residuals.csv", resid, ("check", "level", "value"))]


def cmd_rep_check(cfg, out, args):
    spec = cfg.spec()
    a = sample_coefficient(spec, cfg.index)
    da = sample_coefficient(spec, cfg.index + 1) - a
    i, j = cfg.components[:2]
    tab = gateaux_check(a, TestFunction(cfg.radii[0]), i, j, cfg.order, da, cfg.steps)
    for r in tab.rows:
        print(f"t={r['t']:.3e}  lhs={r['lhs']:.10e}  rhs={r['rhs']:.10e}  rel={r['rel_error']:.3e}")
    return [write_csv(out / "gateaux.csv", tab.rows, GATEAUX_COLUMNS)]


def cmd_decay_scan(cfg, out, args):
    res = run_decay_scan(cfg, workers=args.workers)
    for r in res.rows:
        flag = "stable" if r["stable"] else "unstable"
        print(f"R={r['R']:g} L={r['L']}  P={r['P']:.4e} +- {r['stderr']:.2e}  ({flag})")
    for R, f in res.fits["L_exponent"].items():
        print(f"L-exponent at R={R}: {f['slope']:.3f} +- {f['slope_stderr']:.3f} {f['note']}")
    print(f"envelope constant: {res.envelope_constant:.4e}")
    if not res.valid:
        print(f"run invalid: {res.skipped} samples skipped", file=sys.stderr)
    return save_decay_scan(res, out)


def cmd_moment_scan(cfg, out, args):
    stats = moment_scan(cfg.spec(), cfg.sizes, cfg.samples, tol=cfg.tol, workers=args.workers)
    for key, slope in sorted(stats.exponents.items()):
        print(f"level {key[0]} {key[1]:<8} p={key[2]}  growth exponent {slope:.3f}")
    return [write_csv(out / "moment_scan.csv", stats.records, MOMENT_COLUMNS)]


def cmd_tail_check(cfg, out, args):
    rep = covariance_tail_check(cfg.spec())
    rows = [] if rep.lags is None else [dict(r=float(r), value=float(v)) for r, v in zip(rep.lags, rep.values)]
    print(f"ok={rep.ok} slope={rep.slope:.4f} residual={rep.residual:.3e} {rep.message}")
    return [write_csv(out / "tail_check.csv", rows, ("r", "value"))]


COMMANDS = {
    "sample": (cmd_sample, "dump one coefficient field"),
    "correctors": (cmd_correctors, "build and validate the corrector hierarchy of one sample"),
    "rep-check": (cmd_rep_check, "Gateaux difference quotients against the assembled derivative"),
    "decay-scan": (cmd_decay_scan, "Monte Carlo decay scan of commutator averages"),
    "moment-scan": (cmd_moment_scan, "corrector moments versus torus size"),
    "tail-check": (cmd_tail_check, "covariance tail decay of the Gaussian field"),
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="commlab", description=__doc__)
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)
    for name, (_, helptext) in COMMANDS.items():
        s = sub.add_parser(name, help=helptext)
        s.add_argument("--config", help="INI file with [ensemble], [scan], ... sections")
        s.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE",
                       help="override a config entry (repeatable)")
        s.add_argument("--out", help="output directory (overrides [output] dir)")
        s.add_argument("--workers", type=int, default=None, help="worker processes")
        s.add_argument("-v", "--verbose", action="store_true")
        if name == "sample":
            s.add_argument("--no-dump", action="store_true", help="skip the binary field dump")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config, args.set)
        cfg.validate(scan=args.command == "decay-scan")
    except (OSError, ValueError) as exc:
        print(f"commlab: bad configuration: {exc}", file=sys.stderr)
        return 1
    out = Path(args.out or cfg.output)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.ini").write_text(cfg.to_ini())
    man = RunManifest(args.command, cfg.digest(), cfg.seed, __version__)
    man.add_file(out / "config.ini")
    func = COMMANDS[args.command][0]
    t0 = time.perf_counter()
    status = 0
    try:
        files = func(cfg, out, args)
    except (ConvergenceError, RuntimeError, ValueError) as exc:
        print(f"commlab: {args.command} failed: {exc}", file=sys.stderr)
        files, status = [], 1
    man.stage(args.command, time.perf_counter() - t0)
    for f in files:
        man.add_file(f)
    man.write(out)
    return status


if __name__ == "__main__":
    sys.exit(main())
