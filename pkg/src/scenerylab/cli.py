"""Command-line experiment runner."""
from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import math
import os
import platform
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__, green, oracle, rates, selftest
from .config import ConfigError, load_config
from .estimators import (RareEventError, conditional_mc, ell2_concentration, empirical_rate,
                         max_local_time_tail, naive_mc, set_workers)
from .saddlepoint import TiltSolveError
from .scenery import SceneryLaw
from .walk import LawError, StepLaw

CSV_COLUMNS = ("experiment", "estimator", "d", "law", "scenery", "n", "b", "p_hat", "log_p_hat",
               "stderr", "replicas", "seed", "flags")
EXIT_OK, EXIT_ERROR, EXIT_FLAGGED = 0, 1, 2


def fmt(v) -> str:
    """Bit-stable text form: ``.17g`` for floats, plain ``str`` otherwise."""
    if isinstance(v, (float, np.floating)):
        return format(float(v), ".17g")
    return str(v)


def write_csv(path: Path, header, rows) -> bytes:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([fmt(v) for v in r])
    data = buf.getvalue().encode("utf-8")
    if path is not None:
        path.write_bytes(data)
    return data


def _b_for(cfg, law: StepLaw, scen: SceneryLaw, n: int) -> float:
    if cfg.b_rule == "fixed":
        return cfg.b
    if cfg.b_rule == "power":
        return cfg.b_coef * n**cfg.b_beta
    return cfg.b_coef * math.sqrt(scen.variance * green.expected_ell2(law, n))


def _versions() -> dict:
    import numba
    import scipy
    return {"scenerylab": __version__, "python": platform.python_version(), "numpy": np.__version__,
            "scipy": scipy.__version__, "numba": numba.__version__}


def cmd_run(args) -> int:
    cfg = load_config(args.config)
    set_workers(args.workers or cfg.workers or None)
    law = StepLaw.named(cfg.law, cfg.d)
    scen = SceneryLaw(cfg.scenery, cfg.scenery_param)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    rows, flagged = [], False
    for n in cfg.n:
        b = _b_for(cfg, law, scen, n)
        if cfg.estimator == "naive":
            res = naive_mc(law, scen, n, b, cfg.replicas, cfg.seed)
        else:
            res = conditional_mc(law, scen, n, b, cfg.replicas, cfg.inner_replicas, cfg.seed)
        flagged |= res.flagged
        rows.append((cfg.experiment, res.estimator, cfg.d, cfg.law, cfg.scenery, n, float(b), res.p_hat,
                     res.log_p_hat, res.stderr, res.replicas, cfg.seed, ";".join(res.flags)))
    data = write_csv(out / "results.csv", CSV_COLUMNS, rows)
    manifest = {"config_sha256": cfg.digest, "config": {k: list(v) if isinstance(v, tuple) else v
                                                        for k, v in cfg.values.items()},
                "seed": cfg.seed, "results_sha256": hashlib.sha256(data).hexdigest(),
                "versions": _versions(), "wall_time_s": time.perf_counter() - t0, "rows": len(rows)}
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    print(f"wrote {len(rows)} rows to {out / 'results.csv'}")
    return EXIT_FLAGGED if flagged else EXIT_OK


def _kv(pairs) -> dict:
    out = {}
    for p in pairs:
        if "=" not in p:
            raise ValueError(f"expected name=value, got {p!r}")
        k, v = p.split("=", 1)
        out[k] = float(v)
    return out


def cmd_rates(args) -> int:
    if args.rates_cmd == "eval":
        spec = rates.RateSpec(args.tag, _kv(args.params))
        print(fmt(spec.evaluate()))
        return EXIT_OK
    rows = []
    for d in args.d:
        for beta in args.beta:
            reg = rates.classify_regime(d, beta, args.log_power)
            rows.append((d, float(beta), float(args.log_power), reg.tag, reg.note))
    sys.stdout.write(write_csv(None, ("d", "beta", "log_power", "tag", "note"), rows).decode())
    return EXIT_OK


def cmd_fit(args) -> int:
    with open(args.csv, newline="") as fh:
        data = list(csv.DictReader(fh))
    groups: dict[str, list] = {}
    for r in data:
        groups.setdefault(r["experiment"], []).append((float(r["n"]), float(r["b"]), float(r["log_p_hat"])))
    rows = []
    for name, pts in groups.items():
        f = empirical_rate(pts, args.model, intercept=not args.no_intercept)
        rows.append((name, args.model, f.slope, f.intercept, f.slope_stderr, f.r2, len(pts)))
    sys.stdout.write(write_csv(None, ("experiment", "model", "slope", "intercept", "slope_stderr", "r2",
                                      "points"), rows).decode())
    return EXIT_OK


def cmd_oracle(args) -> int:
    law = StepLaw.named(args.law, args.d)
    if args.what == "walk":
        e = oracle.enumerate_walk_expectations(law, args.n)
        print(f"E ell2 = {e.ell2} ({float(e.ell2):.17g})")
        print(f"E ell3 = {e.ell3} ({float(e.ell3):.17g})")
        print("ell_inf law: " + ", ".join(f"{k}: {v}" for k, v in e.ell_inf.items()))
        print("P{S_k = 0}: " + ", ".join(str(p) for p in e.p0))
    else:
        m = oracle.exact_two_walk_moments(law, args.n)
        for i, a in enumerate(m.A, 1):
            print(f"E A^{i} = {a} ({float(a):.17g})")
        print(f"E Lambda = {m.Lambda}\nE Lambda* = {m.Lambda_star}")
    return EXIT_OK


def cmd_green(args) -> int:
    law = StepLaw.named(args.law, args.d)
    if args.d >= 3:
        est = green.green_zero(law, tol=args.tol)
        print(f"G0 = {fmt(est.value)} +- {est.error:.3g} (exact horizon {est.horizon})")
    if args.n:
        tab = green.return_probabilities(law, 2 * args.n)
        print(f"E ell2 = {fmt(green.expected_ell2(law, args.n, tab))}")
        print(f"E ell3 = {fmt(green.expected_ell3(law, args.n, tab))}")
        if args.d == 2:
            print(f"K2 estimate = {fmt(green.estimate_K2(law, args.n, tab))}")
    return EXIT_OK


def _emit(args, header, rows):
    data = write_csv(Path(args.out) if args.out else None, header, rows)
    if not args.out:
        sys.stdout.write(data.decode())


def cmd_concentration(args) -> int:
    set_workers(args.workers)
    law = StepLaw.named(args.law, args.d)
    t = ell2_concentration(law, args.n, args.x, args.replicas, args.seed)
    diag = t.diagnostics()
    rows = [(float(x), float(u), float(lo), float(p), float(se), int(c), float(a), float(b2), float(c3))
            for x, u, lo, p, se, c, a, b2, c3 in zip(t.x, t.upper, t.lower, t.two_sided, t.stderr, t.counts,
                                                     diag["sqrt_x_over_log"], diag["sqrt_x_over_log15"],
                                                     diag["x23_over_n13"])]
    _emit(args, ("x", "p_upper", "p_lower", "p_two_sided", "stderr", "count", "sqrt_x_over_log",
                 "sqrt_x_over_log15", "x23_over_n13"), rows)
    return EXIT_OK


def cmd_maxtail(args) -> int:
    set_workers(args.workers)
    law = StepLaw.named(args.law, args.d)
    t = max_local_time_tail(law, args.n, args.k, args.replicas, args.seed)
    rows = [(int(k), float(p), float(se), float(t.q_hat ** k), bool(ok))
            for k, p, se, ok in zip(t.k, t.p, t.stderr, t.dominated)]
    _emit(args, ("k", "p_hat", "stderr", "q_hat_pow_k", "dominated"), rows)
    print(f"# q_hat = {fmt(t.q_hat)} +- {t.q_stderr:.3g}; fitted slope {fmt(t.slope)} "
          f"vs log q_hat {fmt(math.log(t.q_hat))}", file=sys.stderr)
    return EXIT_OK if t.all_dominated else EXIT_FLAGGED


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="scenerylab", description=__doc__)
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run the experiment described by a config file")
    r.add_argument("config")
    r.add_argument("--out", default="out")
    r.add_argument("--workers", type=int, default=None)
    r.set_defaults(func=cmd_run)

    ra = sub.add_parser("rates", help="evaluate rate functions or classify regimes")
    rsub = ra.add_subparsers(dest="rates_cmd", required=True)
    ev = rsub.add_parser("eval")
    ev.add_argument("tag", choices=rates.TAGS)
    ev.add_argument("params", nargs="*", help="name=value")
    tb = rsub.add_parser("table")
    tb.add_argument("--d", type=int, nargs="+", default=[2, 3, 4])
    tb.add_argument("--beta", type=float, nargs="+", default=[0.4, 0.55, 0.6, 0.75, 1.5])
    tb.add_argument("--log-power", type=float, default=0.0)
    ra.set_defaults(func=cmd_rates)

    f = sub.add_parser("fit", help="fit a rate constant to a results CSV")
    f.add_argument("csv")
    f.add_argument("--model", choices=("T2", "T3a", "T3b"), default="T2")
    f.add_argument("--no-intercept", action="store_true")
    f.set_defaults(func=cmd_fit)

    o = sub.add_parser("oracle", help="exact enumeration at tiny n")
    o.add_argument("what", choices=("walk", "pairs"))
    o.add_argument("--law", choices=("simple", "lazy"), default="simple")
    o.add_argument("--d", type=int, default=2)
    o.add_argument("--n", type=int, default=4)
    o.set_defaults(func=cmd_oracle)

    g = sub.add_parser("green", help="Green's function and expected self-intersections")
    g.add_argument("--law", choices=("simple", "lazy"), default="simple")
    g.add_argument("--d", type=int, default=3)
    g.add_argument("--tol", type=float, default=1e-6)
    g.add_argument("--n", type=int, default=0)
    g.set_defaults(func=cmd_green)

    for name, fn, grid, gname in (("concentration", cmd_concentration, float, "--x"),
                                  ("maxtail", cmd_maxtail, int, "--k")):
        c = sub.add_parser(name)
        c.add_argument("--law", choices=("simple", "lazy"), default="lazy")
        c.add_argument("--d", type=int, default=3)
        c.add_argument("--n", type=int, required=True)
        c.add_argument("--replicas", type=int, required=True)
        c.add_argument("--seed", type=int, default=1)
        c.add_argument(gname, type=grid, nargs="+", required=True)
        c.add_argument("--out", default=None)
        c.add_argument("--workers", type=int, default=None)
        c.set_defaults(func=fn)

    s = sub.add_parser("selftest", help="run the built-in invariant checks")
    s.set_defaults(func=lambda a: EXIT_OK if selftest.run() else EXIT_ERROR)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, LawError, RareEventError, TiltSolveError, ValueError, OSError,
            OverflowError, MemoryError, oracle.OracleBudgetError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
