"""``polykde`` command line: CSV in, CSV out, seeded and deterministic.

Exit codes: 0 success, 1 data error, 2 usage error.
"""

import argparse
import hashlib
import io
import json
import os
import sys

import numpy as np

from . import __version__, _accel
from .errors import DataError, NoConvergence, PolyKDEError
from .kernels import KernelSpec

DEFAULT_SEED = 20240101


class UsageError(Exception):
    pass


# -- io ------------------------------------------------------------------------------

def read_csv(path):
    """Numeric CSV; '#' lines and one optional non-numeric header row are skipped."""
    text = sys.stdin.read() if path == "-" else open(path, encoding="utf-8").read()
    rows = []
    for ln, line in enumerate(text.splitlines(), 1):
        s = line.strip()
        if not s or s.startswith("#"):
            continue
        try:
            rows.append([float(v) for v in s.split(",")])
        except ValueError:
            if rows:
                raise DataError(f"{path}:{ln}: non-numeric value")
            continue
    if not rows:
        raise DataError(f"{path}: no data rows")
    if len({len(r) for r in rows}) != 1:
        raise DataError(f"{path}: rows have differing numbers of columns")
    return np.array(rows)


def _fmt(v):
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return format(float(v), ".17g")
    return str(v)


def write_table(out, header, rows, meta):
    buf = io.StringIO()
    for k, v in meta.items():
        buf.write(f"# {k}: {v}\n")
    if header:
        buf.write(",".join(header) + "\n")
    for r in rows:
        buf.write(",".join(_fmt(v) for v in r) + "\n")
    if out in (None, "-"):
        sys.stdout.write(buf.getvalue())
    else:
        with open(out, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(buf.getvalue())


def _meta(args):
    cfg = {k: v for k, v in sorted(vars(args).items())
           if k not in ("func", "output", "threads") and not callable(v)}
    digest = hashlib.sha256(json.dumps(cfg, sort_keys=True, default=str).encode()).hexdigest()[:16]
    return {"polykde": __version__, "seed": getattr(args, "seed", None), "config_hash": digest,
            "command": args.command}


# -- shared option groups ----------------------------------------------------------------

def _floats(s):
    try:
        return [float(x) for x in str(s).split(",") if x != ""]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected a comma list of numbers, got {s!r}") from exc


def _ints(s):
    try:
        return [int(x) for x in str(s).split(",") if x != ""]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected a comma list of integers, got {s!r}") from exc


def _add_kernel(p):
    p.add_argument("--kernel", choices=["vmf", "epa", "sfp"], default="vmf")
    p.add_argument("--nu", type=float, default=10.0, help="sfp sharpness")
    p.add_argument("--combine", choices=["product", "spherical"], default="product")


def _add_data(p, labels=False):
    p.add_argument("--dims", type=_ints, required=True, help="sphere dimensions d1,d2,...")
    p.add_argument("--sample", required=True, help="CSV file ('-' for stdin)")
    p.add_argument("--force", action="store_true", help="rescale blocks whose norm is off")
    if labels:
        p.add_argument("--labels-col", type=int, default=None, help="0-based label column")


def _add_bw(p):
    p.add_argument("--bw", type=_floats, default=None, help="explicit bandwidth(s)")
    p.add_argument("--bw-select", choices=["rot", "lcv", "lscv"], default=None)
    p.add_argument("--c", type=_floats, default=[1.0], help="multiplier(s) on the selected bandwidth")
    p.add_argument("--per-sphere", action="store_true", help="per-sphere cross-validation search")


def _spec(args):
    return KernelSpec(args.kernel, args.combine, args.nu)


def _load(args, labels_col=None):
    from .polycore import Dims, validate_and_normalize
    raw = read_csv(args.sample)
    labels = None
    if labels_col is not None:
        if not 0 <= labels_col < raw.shape[1]:
            raise DataError("--labels-col is outside the table")
        lab = raw[:, labels_col]
        raw = np.delete(raw, labels_col, axis=1)
        _, labels = np.unique(lab, return_inverse=True)
    return validate_and_normalize(raw, Dims.of(args.dims), force=args.force, labels=labels)


def _bandwidth(args, sample, spec, c=None):
    from .bandwidth import NoConvergence as _NC, rot_bandwidth, select_bandwidth_cv
    if (args.bw is None) == (args.bw_select is None):
        raise UsageError("give exactly one of --bw or --bw-select")
    if args.bw is not None:
        from .polycore import as_bandwidths
        return as_bandwidths(args.bw, sample.dims)
    c = args.c[0] if c is None else c
    plain = type(sample)(sample.X, sample.dims)
    if args.bw_select == "rot":
        try:
            h = rot_bandwidth(plain, spec).h
        except _NC as exc:
            raise DataError(str(exc)) from exc
    else:
        h = select_bandwidth_cv(plain, spec, args.bw_select,
                                "per-sphere" if args.per_sphere else "common").h
    return c * h


# -- subcommands -------------------------------------------------------------------------------

def cmd_eval(args):
    from .kde import KdeModel, log_kde
    from .polycore import validate_and_normalize
    s = _load(args)
    spec = _spec(args)
    model = KdeModel(s, _bandwidth(args, s, spec), spec, uniform_offset=not args.sigma)
    at = validate_and_normalize(read_csv(args.at), s.dims, force=args.force).X
    ld = log_kde(model, at)
    write_table(args.output, ["log_density"], [[v] for v in ld], _meta(args))


def cmd_loo(args):
    from .kde import KdeModel, loo_log_kde
    s = _load(args)
    spec = _spec(args)
    model = KdeModel(s, _bandwidth(args, s, spec), spec, uniform_offset=not args.sigma)
    write_table(args.output, ["loo_log_density"], [[v] for v in loo_log_kde(model)], _meta(args))


def cmd_rank(args):
    from .kde import KdeModel, log_kde, loo_log_kde, rank_by_density
    s = _load(args)
    spec = _spec(args)
    model = KdeModel(s, _bandwidth(args, s, spec), spec, uniform_offset=not args.sigma)
    loo = not args.in_sample
    ell = loo_log_kde(model) if loo else log_kde(model, s.X)
    ranks = rank_by_density(model, loo=loo)
    write_table(args.output, ["index", "rank", "log_density"],
                [[i, ranks[i], ell[i]] for i in range(s.n)], _meta(args))


def cmd_sample(args):
    from .polycore import Dims
    from .sampling import make_rng, sample_kde, sample_kernel_polysphere, sample_pvmf
    rng = make_rng(args.seed)
    spec = _spec(args)
    if args.source == "kde":
        from .kde import KdeModel
        if args.sample is None:
            raise UsageError("sample kde needs --sample")
        if args.dims is None:
            raise UsageError("--dims is required")
        s = _load(args)
        model = KdeModel(s, _bandwidth(args, s, spec), spec)
        Y = sample_kde(model, args.m, rng).X
    else:
        if args.dims is None or args.mu is None:
            raise UsageError(f"sample {args.source} needs --dims and --mu")
        dims = Dims.of(args.dims)
        mu = np.asarray(args.mu, dtype=float)
        if mu.size != dims.ambient:
            raise DataError(f"--mu needs {dims.ambient} coordinates")
        from .polycore import unit_blocks
        mu = unit_blocks(mu, dims)
        if args.source == "vmf":
            if args.kappa is None:
                raise UsageError("sample vmf needs --kappa")
            Y = sample_pvmf(mu, np.broadcast_to(args.kappa, (dims.r,)), dims, rng, args.m)
        else:
            if args.bw is None:
                raise UsageError("sample kernel needs --bw")
            Y = sample_kernel_polysphere(spec, mu, args.bw, rng, args.m, dims=dims)
    write_table(args.output, None, Y.tolist(), _meta(args))


def cmd_bw(args):
    from .bandwidth import rot_bandwidth, select_bandwidth_cv
    s = _load(args)
    spec = _spec(args)
    if args.method == "rot":
        try:
            res = rot_bandwidth(s, spec)
        except NoConvergence as exc:
            raise DataError(str(exc)) from exc
    else:
        res = select_bandwidth_cv(s, spec, args.method, "per-sphere" if args.per_sphere else "common")
    rows = [[j + 1, h] for j, h in enumerate(res.h)]
    meta = _meta(args)
    if res.residual is not None:
        meta["residual"] = format(res.residual, ".3e")
    if res.loss is not None:
        meta["loss"] = format(float(res.loss), ".17g")
    write_table(args.output, ["sphere", "h"], rows, meta)


def cmd_test(args):
    from .inference import GroupedSample, fdr_adjust, k_sample_test, loc_scatter_test
    from .polycore import Dims, PolySample
    if args.labels_col is None:
        raise UsageError("test needs --labels-col")
    s = _load(args, args.labels_col)
    spec = _spec(args)
    g_full = GroupedSample(s)
    targets = [(0, g_full)]
    if args.per_sphere:
        targets = []
        for j, (blk, d) in enumerate(zip(s.blocks(), s.dims.d)):
            targets.append((j + 1, GroupedSample(PolySample(blk, Dims((d,)), s.labels))))
    rows = []
    for sphere, g in targets:
        seed = np.random.SeedSequence([args.seed, sphere])
        if args.stat == "jsd":
            if args.bw is not None:
                hb = args.bw if sphere == 0 else args.bw[(sphere - 1) % len(args.bw)]
                res = [(np.nan, k_sample_test(g, spec, h=hb,
                                              B=args.B, seed=seed, plus_one=args.plus_one))]
            else:
                if args.bw_select != "rot" and args.bw_select is not None:
                    hsel = _bandwidth(args, PolySample(g.sample.X, g.sample.dims), spec, c=1.0)
                    subs = np.random.SeedSequence([args.seed, sphere]).spawn(len(args.c))
                    res = [(c, k_sample_test(g, spec, h=c * hsel, B=args.B, seed=ss, plus_one=args.plus_one))
                           for c, ss in zip(args.c, subs)]
                else:
                    out = k_sample_test(g, spec, c=args.c, B=args.B, seed=seed, plus_one=args.plus_one)
                    res = list(zip(args.c, out))
        else:
            res = [(np.nan, loc_scatter_test(g, args.stat, args.B, seed, args.plus_one))]
        for c, r in res:
            q05, q50, q95 = np.quantile(r.replicates, [0.05, 0.5, 0.95])
            rows.append([sphere, c, r.statistic, r.p_value, r.B, q05, q50, q95])
    header = ["sphere", "c", "statistic", "p_value", "B", "rep_q05", "rep_q50", "rep_q95"]
    if args.per_sphere and args.fdr != "none":
        adj = np.empty(len(rows))
        cs = sorted({str(r[1]) for r in rows})
        for c in cs:
            idx = [i for i, r in enumerate(rows) if str(r[1]) == c]
            adj[idx] = fdr_adjust([rows[i][3] for i in idx], args.fdr)
        rows = [r + [a] for r, a in zip(rows, adj)]
        header.append("p_adjusted")
    write_table(args.output, header, rows, _meta(args))


def cmd_efficiency(args):
    import time
    from .experiments import EFFICIENCY_COLUMNS, efficiency_table
    t0 = time.perf_counter()
    tab = efficiency_table(args.d, args.r, args.nu)
    names = [name for name, _ in EFFICIENCY_COLUMNS(args.nu)]
    rows = [[row["r"], row["d"]] + [row[k] for k in names] for row in tab]
    if args.decimals is not None:
        rows = [r[:2] + [f"{v:.{args.decimals}f}" for v in r[2:]] for r in rows]
    meta = _meta(args)
    meta["seconds"] = f"{time.perf_counter() - t0:.2f}"
    write_table(args.output, ["r", "d"] + names, rows, meta)


def cmd_experiment(args):
    from .experiments import NormalityRun, run_normality
    cfg = NormalityRun(d=args.d, r=args.r, kappa=tuple(args.kappa), deltas=tuple(args.deltas),
                       ns=tuple(args.ns), M=args.M, spec=_spec(args))
    rows = run_normality(cfg, args.seed)
    keys = list(rows[0].keys())
    write_table(args.output, keys, [[r[k] for k in keys] for r in rows], _meta(args))


# -- parser ------------------------------------------------------------------------------

def build_parser():
    p = argparse.ArgumentParser(prog="polykde", description="Kernel density estimation on polyspheres.")
    p.add_argument("--version", action="version", version=f"polykde {__version__}")
    p.add_argument("--threads", type=int, default=None, help="worker threads (env POLYKDE_THREADS)")
    p.add_argument("-o", "--output", default=None, help="output CSV path (default stdout)")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, seed=True):
        sp.add_argument("-o", "--output", default=argparse.SUPPRESS)
        sp.add_argument("--threads", type=int, default=argparse.SUPPRESS)
        if seed:
            sp.add_argument("--seed", type=int, default=DEFAULT_SEED)

    for name, fn, hlp in (("eval", cmd_eval, "log density at query points"),
                          ("loo", cmd_loo, "leave-one-out log densities"),
                          ("rank", cmd_rank, "rank observations by density")):
        sp = sub.add_parser(name, help=hlp)
        _add_data(sp)
        _add_kernel(sp)
        _add_bw(sp)
        sp.add_argument("--sigma", action="store_true",
                        help="density w.r.t. surface measure (no uniform offset)")
        if name == "eval":
            sp.add_argument("--at", required=True, help="CSV of query points")
        if name == "rank":
            sp.add_argument("--in-sample", action="store_true", help="rank by f_hat(X_i) instead of LOO")
        common(sp)
        sp.set_defaults(func=fn)

    sp = sub.add_parser("sample", help="draw from a kde, a PvMF law or a kernel")
    sp.add_argument("source", choices=["kde", "vmf", "kernel"])
    sp.add_argument("--dims", type=_ints, default=None)
    sp.add_argument("--sample", default=None)
    sp.add_argument("--force", action="store_true")
    sp.add_argument("-m", type=int, default=1000, help="number of draws")
    sp.add_argument("--mu", type=_floats, default=None)
    sp.add_argument("--kappa", type=_floats, default=None)
    _add_kernel(sp)
    _add_bw(sp)
    common(sp)
    sp.set_defaults(func=cmd_sample)

    sp = sub.add_parser("bw", help="bandwidth selection")
    sp.add_argument("method", choices=["rot", "lscv", "lcv"])
    _add_data(sp)
    _add_kernel(sp)
    sp.add_argument("--per-sphere", action="store_true")
    common(sp)
    sp.set_defaults(func=cmd_bw)

    sp = sub.add_parser("test", help="k-sample homogeneity tests")
    sp.add_argument("stat", choices=["jsd", "loc", "scatter"])
    _add_data(sp, labels=True)
    _add_kernel(sp)
    _add_bw(sp)
    sp.add_argument("-B", type=int, default=1000, help="permutations")
    sp.add_argument("--plus-one", action="store_true", help="(1 + count)/(B + 1) p-values")
    sp.add_argument("--fdr", choices=["by", "bh", "none"], default="by")
    common(sp)
    sp.set_defaults(func=cmd_test)

    sp = sub.add_parser("efficiency", help="kernel efficiency table")
    sp.add_argument("--d", type=_ints, default=[1, 2, 3, 5, 10])
    sp.add_argument("--r", type=_ints, default=[1, 2, 3, 5, 10])
    sp.add_argument("--nu", type=_floats, default=[1.0, 10.0, 100.0])
    sp.add_argument("--decimals", type=int, default=None, help="round cells (default full precision)")
    common(sp, seed=False)
    sp.set_defaults(func=cmd_efficiency)

    sp = sub.add_parser("experiment", help="simulation harnesses")
    sp.add_argument("name", choices=["normality"])
    sp.add_argument("--d", type=int, default=2)
    sp.add_argument("--r", type=int, default=2)
    sp.add_argument("--kappa", type=_floats, default=[5.0, 5.0])
    sp.add_argument("--deltas", type=_floats, default=[-2, -1, 0, 1, 2, 4])
    sp.add_argument("--ns", type=_ints, default=[2**7, 2**9, 2**11])
    sp.add_argument("-M", type=int, default=2000)
    _add_kernel(sp)
    common(sp)
    sp.set_defaults(func=cmd_experiment)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    threads = args.threads if getattr(args, "threads", None) else os.environ.get("POLYKDE_THREADS")
    if threads:
        try:
            _accel.set_threads(int(threads))
        except ValueError:
            parser.error("POLYKDE_THREADS must be an integer")
    try:
        args.func(args)
    except UsageError as exc:
        parser.error(str(exc))
    except (DataError, OSError) as exc:
        print(f"polykde: error: {exc}", file=sys.stderr)
        return 1
    except PolyKDEError as exc:
        print(f"polykde: error: {exc}", file=sys.stderr)
        return 1
    except ValueError as exc:
        print(f"polykde: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
