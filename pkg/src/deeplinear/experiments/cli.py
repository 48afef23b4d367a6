"""Command line: ``deeplinear {gen-data,train,scan,verify}``.

Exit codes: 0 ok, 1 a hard check failed, 2 usage error or unwritable
output, 3 training diverged. Every subcommand takes ``--config FILE``
(flat ``key=value``); flags given on the command line win over the file.
"""

from __future__ import annotations

import argparse
import os
import sys
import warnings

from .. import network
from ..data import gen_synthetic, load_dataset, save_dataset
from ..initializers import GAUSSIAN, ORTHOGONAL, DimensionPlan, InitScheme
from ..trainer import DIVERGED, TrainConfig, train_run
from .config import ScanConfig, parse_eta, read_config_file
from .scan import run_scan
from .verify import FAMILIES, run_verify

EXIT_OK, EXIT_CHECK, EXIT_USAGE, EXIT_DIVERGED = 0, 1, 2, 3


class UsageError(Exception):
    pass


def _positive_int(text):
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {text}")
    return v


def _nonneg_int(text):
    v = int(text)
    if v < 0:
        raise argparse.ArgumentTypeError(f"must be >= 0, got {text}")
    return v


def _eta(text):
    try:
        return parse_eta(text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _truthy(v):
    if isinstance(v, bool):
        return v
    return str(v).strip().lower() in ("1", "true", "yes", "on")


def _common(p, out_help):
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help=out_help)
    p.add_argument("--jobs", type=_positive_int, default=1, help="worker processes (scan only)")
    p.add_argument("--config", help="flat key=value file; command-line flags override it")


def _data_flags(p):
    p.add_argument("--data", help="dataset directory written by gen-data")
    p.add_argument("--dx", type=_positive_int, default=64)
    p.add_argument("--dy", type=_positive_int, default=4)
    p.add_argument("--n", type=_positive_int, default=16)
    p.add_argument("--data-seed", type=int, default=0)
    p.add_argument("--normalize", action="store_true", help="rescale so ||Y||_F = 1")


def build_parser():
    parser = argparse.ArgumentParser(prog="deeplinear",
                                     description="Deep linear network training, scans and checks.")
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="sample a synthetic realizable dataset")
    _common(g, "dataset directory")
    g.add_argument("--dx", type=_positive_int, required=False)
    g.add_argument("--dy", type=_positive_int, required=False)
    g.add_argument("--n", type=_positive_int, required=False)
    g.add_argument("--normalize", action="store_true")

    t = sub.add_parser("train", help="one gradient-descent run")
    _common(t, "run directory")
    _data_flags(t)
    t.add_argument("--scheme", choices=(ORTHOGONAL, GAUSSIAN), default=ORTHOGONAL)
    t.add_argument("--depth", type=_positive_int, default=16)
    t.add_argument("--width", type=_positive_int, default=64)
    t.add_argument("--steps", type=_nonneg_int, default=1000)
    t.add_argument("--eta", type=_eta, default="auto")
    t.add_argument("--sigma", type=float, default=1.0, help="Gaussian std-dev for every layer")
    t.add_argument("--record-every", type=_positive_int, default=1)
    t.add_argument("--diag-every", type=_nonneg_int, default=0)
    t.add_argument("--stop-rel-loss", type=float, default=0.0)
    t.add_argument("--save-states", action="store_true", help="also write init/, final/ and data/")

    s = sub.add_parser("scan", help="depth x width trainability scan")
    _common(s, "scan output directory")
    _data_flags(s)
    s.add_argument("--depths", default="8,16,32,64,128")
    s.add_argument("--widths", default="4,8,16,32,64,128,256")
    s.add_argument("--schemes", default="orthogonal,gaussian")
    s.add_argument("--trials", type=_positive_int, default=3)
    s.add_argument("--steps", type=_nonneg_int, default=10000)
    s.add_argument("--checkpoints", default="1258,10000")
    s.add_argument("--eta", type=_eta, default="auto")
    s.add_argument("--trajectory-every", type=_nonneg_int, default=0,
                   help="write one loss curve per cell at this cadence")

    v = sub.add_parser("verify", help="run the invariant suite")
    _common(v, "report CSV path (a directory gets verify_report.csv)")
    v.add_argument("--only", action="append", default=None,
                   help=f"check family to run (repeatable or comma separated): {', '.join(FAMILIES)}")
    v.add_argument("--run", help="run directory from 'train --save-states' for the trajectory checks")
    v.add_argument("--inject-fault", action="append", default=None, metavar="FAMILY",
                   help="corrupt this family's inputs; its checks must then fail")
    v.add_argument("--stuck-seeds", type=_positive_int, default=10)
    return parser


def _parse(argv):
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.config:
        try:
            file_values = read_config_file(args.config)
        except (OSError, ValueError) as exc:
            parser.error(f"--config: {exc}")
        sub = parser._subparsers._group_actions[0].choices[args.command]
        known = {a.dest for a in sub._actions}
        unknown = sorted(set(file_values) - known - {"config"})
        if unknown:
            parser.error(f"--config: unknown keys {', '.join(unknown)}")
        file_values.pop("config", None)
        # file values become defaults, so explicit flags still win
        sub.set_defaults(**file_values)
        args = parser.parse_args(argv)
        for a in sub._actions:
            val = getattr(args, a.dest, None)
            if isinstance(val, str) and a.type is not None and a.dest in file_values:
                try:
                    setattr(args, a.dest, a.type(val))
                except (argparse.ArgumentTypeError, ValueError) as exc:
                    parser.error(f"--config {a.dest}: {exc}")
    for flag in ("normalize", "save_states"):
        if hasattr(args, flag):
            setattr(args, flag, _truthy(getattr(args, flag)))
    return parser, args


def _need_out(args):
    if not args.out:
        raise UsageError("--out is required")
    return args.out


def _dataset(args):
    if args.data:
        return load_dataset(args.data)
    return gen_synthetic(args.dx, args.dy, args.n, args.data_seed, normalize=args.normalize)


def cmd_gendata(args):
    for name in ("dx", "dy", "n"):
        if getattr(args, name) is None:
            raise UsageError(f"--{name} is required")
    out = _need_out(args)
    ds = gen_synthetic(args.dx, args.dy, args.n, args.seed, normalize=args.normalize)
    save_dataset(ds, out)
    st = ds.stats
    print(f"r={st.r} kappa={st.kappa:.6g} stable_rank={st.stable_rank:.6g}")
    return EXIT_OK


def cmd_train(args):
    out = _need_out(args)
    ds = _dataset(args)
    plan = DimensionPlan.uniform(ds.d_x, ds.d_y, args.width, args.depth)
    scheme = InitScheme(args.scheme, sigma=args.sigma)
    try:
        cfg = TrainConfig(plan, scheme, steps=args.steps, eta=args.eta, record_every=args.record_every,
                          diag_every=args.diag_every, seed=args.seed, stop_rel_loss=args.stop_rel_loss)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    with warnings.catch_warnings():
        warnings.simplefilter("always", RuntimeWarning)
        rec = train_run(cfg, ds, keep_states=args.save_states)
    rec.save(out)
    if args.save_states:
        save_dataset(ds, os.path.join(out, "data"))
        network.save_checkpoint(rec.initial_state, os.path.join(out, "init"))
        if rec.final_state is not None:
            network.save_checkpoint(rec.final_state, os.path.join(out, "final"))
    t, loss, rel = rec.rows[-1]
    print(f"{rec.status}: t={t} loss={loss:.6g} rel_loss={rel:.6g} eta={rec.header['eta']}")
    return EXIT_DIVERGED if rec.status == DIVERGED else EXIT_OK


def cmd_scan(args):
    out = _need_out(args)
    try:
        cfg = ScanConfig(
            depths=args.depths, widths=args.widths, schemes=args.schemes, trials=args.trials,
            steps=args.steps, checkpoints=args.checkpoints, eta=args.eta, master_seed=args.seed,
            d_x=args.dx, d_y=args.dy, n=args.n, data_seed=args.data_seed, data_path=args.data,
            normalize=args.normalize, trajectory_every=args.trajectory_every,
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    cells = run_scan(cfg, out, jobs=args.jobs, log=lambda m: print(m, file=sys.stderr))
    bad = sum(c.status in ("error",) for c in cells)
    print(f"{len(cells)} cells written to {os.path.join(out, 'scan.csv')}" + (f", {bad} errors" if bad else ""))
    return EXIT_OK


def _split(values):
    if not values:
        return None
    return [v for item in values for v in str(item).split(",") if v]


def cmd_verify(args):
    only = _split(args.only)
    inject = _split(args.inject_fault) or ()
    for name in (only or []) + list(inject):
        if name not in FAMILIES:
            raise UsageError(f"unknown check family {name!r}; choose from {', '.join(FAMILIES)}")
    report, hard = run_verify(only=only, seed=args.seed, run_dir=args.run, inject=inject,
                              stuck_kwargs={"seeds": args.stuck_seeds},
                              log=lambda m: print(m, file=sys.stderr))
    if args.out:
        path = args.out
        if os.path.isdir(path) or path.endswith(os.sep):
            os.makedirs(path, exist_ok=True)
            path = os.path.join(path, "verify_report.csv")
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(report.to_csv())
    soft = [r for r in report.failures if r not in hard]
    print(f"{len(report.entries)} checks, {len(hard)} hard failures, {len(soft)} probabilistic failures")
    for r in hard:
        print(f"FAIL {r.name}: observed {r.observed:.6g} {r.relation} bound {r.bound:.6g}")
    return EXIT_CHECK if hard else EXIT_OK


COMMANDS = {"gen-data": cmd_gendata, "train": cmd_train, "scan": cmd_scan, "verify": cmd_verify}


def main(argv=None):
    parser, args = _parse(argv)
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"deeplinear {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"deeplinear {args.command}: cannot write output: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ValueError as exc:
        print(f"deeplinear {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
