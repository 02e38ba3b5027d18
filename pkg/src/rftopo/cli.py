"""Command-line entry point: python -m rftopo <subcommand> ..."""
from __future__ import annotations

import argparse
import csv
import json
import math
import sys
import warnings
from pathlib import Path

import numpy as np

from . import harness
from .covariance import make_model
from .kacrice import critical_density_mc
from .sampler import load_field, sample_torus, save_field
from .spinglass import brute_force_crit_search, complexity_probe, expected_crit_goe, make_spin_glass
from .theory import (
    AsymptoticRegimeWarning,
    expected_components_asymptotic,
    expected_euler,
    lk_curvatures,
    nazarov_sodin_cz,
    torus,
)

EXIT_ASSERT = 2


def _floats(text):
    return tuple(float(t) for t in text.split(",") if t.strip())


def _ints(text):
    return tuple(int(t) for t in text.split(",") if t.strip())


def _writer(path):
    fh = open(path, "w", newline="") if path else sys.stdout
    return fh, csv.writer(fh, lineterminator="\n")


def _fmt(x):
    return format(float(x), ".17g")


def _add_run_flags(p):
    p.add_argument("--config", help="JSON file with RunConfig fields; flags override it")
    p.add_argument("--model")
    p.add_argument("--n", type=int)
    p.add_argument("--sides", type=_floats)
    p.add_argument("--shape", type=_ints)
    p.add_argument("--u-grid", type=_floats)
    p.add_argument("--replicates", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--metrics", type=lambda s: tuple(s.split(",")))
    p.add_argument("--side", choices=("excursion", "sojourn"))
    p.add_argument("--ball-u-min", type=float)
    p.add_argument("--out-dir")
    p.add_argument("--workers", type=int)
    p.add_argument("--rel-tol", type=float)
    p.add_argument("--cache-dir")
    p.add_argument("--kacrice-samples", type=int)


def _config(args):
    d = json.loads(Path(args.config).read_text()) if args.config else {}
    for key in harness.RunConfig.__dataclass_fields__:
        val = getattr(args, key, None)
        if val is not None:
            d[key] = val
    if "n" not in d and "sides" in d:
        d["n"] = len(d["sides"])
    return harness.RunConfig.from_dict(d)


def _finish(rows, rel_tol, do_assert):
    bad = harness.check_rows(rows, rel_tol)
    for r in bad:
        print(f"tolerance violated: u={r.u:g} {r.metric} emp={r.emp_mean:.6g} "
              f"se={r.emp_se:.3g} theory={r.theory:.6g}", file=sys.stderr)
    return EXIT_ASSERT if (do_assert and bad) else 0


def cmd_predict(args):
    model = make_model(args.model, args.n)
    sides = args.sides or (40.0,) * args.n
    dom = torus(*sides)
    lk = lk_curvatures(dom, model.second_moment)
    fh, w = _writer(args.out)
    w.writerow(["u", "metric", "value"])
    for u in args.u_grid:
        w.writerow([_fmt(u), "euler", _fmt(expected_euler(lk, u))])
        if u > 0:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", AsymptoticRegimeWarning)
                lead = expected_components_asymptotic(dom, model, u)
                refined = expected_components_asymptotic(dom, model, u, refined=True)
            w.writerow([_fmt(u), "components_leading", _fmt(lead)])
            w.writerow([_fmt(u), "components_refined", _fmt(refined)])
            w.writerow([_fmt(u), "nodal_density", _fmt(nazarov_sodin_cz(model, u))])
    if fh is not sys.stdout:
        fh.close()
    return 0


def cmd_simulate(args):
    cfg = _config(args)
    model = make_model(cfg.model, cfg.n)
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for r in range(cfg.replicates):
        f = sample_torus(model, cfg.sides, cfg.shape, cfg.seed, r)
        save_field(out / f"field_{r:05d}.rftf", f)
    print(f"wrote {cfg.replicates} fields to {out}")
    return 0


def cmd_analyze(args):
    cfg = _config(args)
    fh = open(args.out, "w") if args.out else sys.stdout
    for k, path in enumerate(args.fields):
        f = load_field(path)
        rep = f.provenance.get("replicate")
        for rec in harness.analyze_field(f, cfg):
            row = {"replicate": k if rep is None else rep, "seed": f.provenance.get("seed"),
                   "side": cfg.side, **rec}
            fh.write(json.dumps(row, sort_keys=True) + "\n")
    if fh is not sys.stdout:
        fh.close()
    return 0


def cmd_compare(args):
    cfg = _config(args)
    emp = harness.aggregate(harness.read_records(args.records))
    theory = harness.theory_table(cfg, emp.keys())
    rows = harness.compare_report(emp, theory, model=cfg.model, n=cfg.n, domain=cfg.domain_label)
    text = harness.report_csv(rows)
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return _finish(rows, cfg.rel_tol, args.do_assert)


def cmd_run(args):
    cfg = _config(args)
    res = harness.run(cfg)
    print(f"{len(res.rows)} rows -> {res.report_path} ({res.elapsed:.1f} s)")
    return _finish(res.rows, cfg.rel_tol, args.do_assert)


def cmd_kacrice(args):
    model = make_model(args.model, args.n)
    fh, w = _writer(args.out)
    w.writerow(["u", "index", "density", "stderr", "asymptotic"])
    for u in args.u_grid:
        est = critical_density_mc(model, u, n_samples=args.samples, seed=args.seed)
        for i in range(model.dimension + 1):
            w.writerow([_fmt(u), i, _fmt(est.density[i]), _fmt(est.stderr[i]), _fmt(est.asymptotic)])
        w.writerow([_fmt(u), "all", _fmt(est.total), _fmt(est.total_stderr), _fmt(est.asymptotic)])
    if fh is not sys.stdout:
        fh.close()
    return 0


def cmd_spinglass(args):
    fh, w = _writer(args.out)
    if args.mode == "goe":
        w.writerow(["p", "n", "u", "index", "estimate", "stderr"])
        for i in range(args.n):
            est, se = expected_crit_goe(args.p, args.n, i, args.u, args.samples, args.seed)
            w.writerow([args.p, args.n, _fmt(args.u), i, _fmt(est), _fmt(se)])
    elif args.mode == "probe":
        n_list = args.n_list or (10, 20, 40)
        rows, gaps = complexity_probe(args.p, args.u, n_list, args.samples, args.seed)
        w.writerow(["p", "u", "n", "log_rate", "stderr", "gap_from_previous"])
        for k, (n, val, se) in enumerate(rows):
            w.writerow([args.p, _fmt(args.u), n, _fmt(val), _fmt(se), _fmt(gaps[k - 1]) if k else "nan"])
    else:
        model = make_spin_glass(args.p, args.n, args.seed)
        pts = brute_force_crit_search(model, args.samples, seed=args.seed)
        w.writerow([f"x{a}" for a in range(args.n)] + ["value", "index"])
        for x, v, i in zip(pts.positions, pts.values, pts.index):
            w.writerow([_fmt(c) for c in x] + [_fmt(v), int(i)])
    if fh is not sys.stdout:
        fh.close()
    return 0


def build_parser():
    parser = argparse.ArgumentParser(prog="rftopo", description="Random-field topology toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("predict", help="closed-form expectations on a u-grid")
    p.add_argument("--model", default="bargmann_fock")
    p.add_argument("--n", type=int, default=2)
    p.add_argument("--sides", type=_floats)
    p.add_argument("--u-grid", type=_floats, required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("simulate", help="sample torus fields to disk")
    _add_run_flags(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("analyze", help="level topology of saved fields, as JSON lines")
    _add_run_flags(p)
    p.add_argument("fields", nargs="+")
    p.add_argument("--out")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("compare", help="aggregate analysis records and join with theory")
    _add_run_flags(p)
    p.add_argument("--records", required=True)
    p.add_argument("--out")
    p.add_argument("--assert", dest="do_assert", action="store_true")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("run", help="full simulate/analyze/compare pipeline")
    _add_run_flags(p)
    p.add_argument("--assert", dest="do_assert", action="store_true")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("kacrice", help="Monte-Carlo critical-point densities")
    p.add_argument("--model", default="bargmann_fock")
    p.add_argument("--n", type=int, default=2)
    p.add_argument("--u-grid", type=_floats, default=(math.inf,))
    p.add_argument("--samples", type=int, default=10**6)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.set_defaults(func=cmd_kacrice)

    p = sub.add_parser("spinglass", help="p-spin critical-point counts")
    p.add_argument("--p", type=int, default=3)
    p.add_argument("--n", type=int, default=3)
    p.add_argument("--u", type=float, default=-1.8)
    p.add_argument("--samples", type=int, default=10**4)
    p.add_argument("--mode", choices=("goe", "probe", "brute"), default="goe")
    p.add_argument("--n-list", type=_ints)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.set_defaults(func=cmd_spinglass)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    np.seterr(over="ignore", under="ignore")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
