"""``vmwatt`` command line.

Exit codes: 0 success, 1 usage error, 2 data or configuration error,
3 runtime failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import secrets
import signal
import sys
from pathlib import Path

from . import __version__
from ._clock import SystemClock, VirtualClock
from .errors import VmwattError

logger = logging.getLogger("vmwatt")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_RUNTIME = 0, 1, 2, 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _say(args, text: str) -> None:
    if not args.quiet:
        print(text)


def _resolve_seed(args, fallback=None) -> tuple[int, bool]:
    """(seed, auto_chosen)."""
    if getattr(args, "seed", None) is not None:
        return int(args.seed), False
    if fallback is not None:
        return int(fallback), False
    seed = secrets.randbelow(2**31)
    logger.warning("no --seed given; using auto-chosen seed %d", seed)
    return seed, True


def _write_provenance(path: Path, record: dict) -> None:
    path.with_name(path.name + ".provenance.json").write_text(
        json.dumps(record, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _clock(args):
    return VirtualClock(start=SystemClock().now() // 1) if args.no_sleep else SystemClock()


def _gbr_params(args, seed: int = 0):
    from .gbrt import GbrParams

    params = GbrParams(n_trees=args.n_trees, learning_rate=args.learning_rate,
                       max_depth=None if args.max_depth < 0 else args.max_depth,
                       min_samples_leaf=args.min_samples_leaf, seed=seed)
    params.validate()
    return params


# -- subcommands ------------------------------------------------------------

def cmd_collect(args) -> int:
    from .metrics import open_source, run_collector

    source = open_source(args.source)
    n = run_collector(source, args.interval, args.duration, args.out, clock=_clock(args))
    _say(args, f"wrote {n} samples to {args.out}")
    return EXIT_OK


def cmd_log_power(args) -> int:
    from .power import open_backend, run_power_logger

    backend = open_backend(args.backend)
    n = run_power_logger(backend, args.pid, args.interval, args.duration, args.out,
                         clock=_clock(args), ceiling=args.ceiling,
                         check_pid=not args.no_sleep)
    _say(args, f"wrote {n} power rows to {args.out}")
    return EXIT_OK


def cmd_join(args) -> int:
    from .join import join, write_dataset_csv
    from .metrics import read_metrics_csv
    from .power import read_power_csv

    ds = join(read_metrics_csv(args.metrics), read_power_csv(args.power),
              tolerance=args.tolerance, keep_flagged=args.keep_flagged,
              provenance={"metrics": str(args.metrics), "power": str(args.power)})
    write_dataset_csv(ds, args.out)
    p = ds.provenance["sources"][0]
    _say(args, f"joined {p['matched']} rows -> {args.out} (dropped: metrics {p['dropped_metrics']}, "
               f"power {p['dropped_power']}, flagged {p['dropped_flagged']})")
    return EXIT_OK


def cmd_merge(args) -> int:
    from .join import merge_datasets, read_dataset_csv, write_dataset_csv

    ds = merge_datasets([read_dataset_csv(p) for p in args.inputs])
    write_dataset_csv(ds, args.out)
    _say(args, f"merged {len(args.inputs)} datasets, {len(ds)} rows -> {args.out}")
    return EXIT_OK


def cmd_train(args) -> int:
    from .gbrt import fit_gbr, mdi_importances, save_model
    from .join import read_dataset_csv

    ds = read_dataset_csv(args.data)
    seed, _ = _resolve_seed(args, fallback=0)
    model = fit_gbr(ds.X, ds.y, _gbr_params(args, seed), ds.feature_names)
    save_model(model, args.out)
    imp = mdi_importances(model)
    _say(args, f"trained {len(model.trees)} trees on {len(ds)} rows -> {args.out}")
    for name, pct in imp.ranked():
        _say(args, f"  {name:<11s} {pct:6.2f}%")
    if args.importance_figure:
        from .plotting import plot_importances

        plot_importances(imp.as_dict(), args.importance_figure)
    return EXIT_OK


def cmd_eval(args) -> int:
    from .evaluation import ShuffleSplitPlan, cross_validate, write_truthpred_csv
    from .join import read_dataset_csv

    ds = read_dataset_csv(args.data)
    seed, auto = _resolve_seed(args)
    plan = ShuffleSplitPlan(args.folds, args.test_fraction, seed)
    export_fold = args.export_fold if (args.export or args.figure) else None

    def progress(k, score):
        logger.info("fold %d/%d r2=%.4f mae=%.3f rmse=%.3f", k + 1, plan.n_splits,
                    score.r2, score.mae, score.rmse)

    report = cross_validate(ds.X, ds.y, _gbr_params(args), plan, export_fold, progress)
    doc = report.to_dict()
    if auto:
        doc["seed_auto_chosen"] = True
    if args.report:
        Path(args.report).write_text(json.dumps(doc, indent=2) + "\n", encoding="utf-8")
    if args.export:
        write_truthpred_csv(report.truth, report.prediction, args.export)
    if args.figure:
        from .plotting import plot_truth_vs_prediction

        plot_truth_vs_prediction(report.truth, report.prediction, args.figure,
                                 title=f"fold {export_fold}: measured vs estimated power")
    _say(args, f"{plan.n_splits}-fold shuffle split: R2={report.mean_r2:.4f} "
               f"MAE={report.mean_mae:.3f} W RMSE={report.mean_rmse:.3f} W")
    return EXIT_OK


def cmd_plot(args) -> int:
    from .evaluation import read_truthpred_csv
    from .plotting import plot_truth_vs_prediction

    truth, pred = read_truthpred_csv(args.inp)
    plot_truth_vs_prediction(truth, pred, args.out, title=args.title, max_points=args.max_points)
    _say(args, f"wrote {args.out}")
    return EXIT_OK


def cmd_infer(args) -> int:
    from .gbrt import load_model
    from .inference import InferenceSession, infer_live
    from .metrics import open_source

    session = InferenceSession(load_model(args.model), open_source(args.source),
                               args.interval, args.out)
    n = infer_live(session, args.duration, clock=_clock(args))
    if args.out:
        _say(args, f"wrote {n} estimates to {args.out}")
    return EXIT_OK


def cmd_gen_workload(args) -> int:
    from .metrics import load_json_config
    from . import workload as wl

    cfg = load_json_config(args.config) if args.config else {}
    seed, auto = _resolve_seed(args, fallback=cfg.get("seed"))
    if args.kind == "web":
        schedule = wl.gen_web_schedule(wl.web_config_from_dict(cfg, seed))
    else:
        schedule = wl.gen_db_schedule(wl.db_config_from_dict(cfg, seed))
    out = Path(args.out)
    wl.write_schedule(schedule, out)
    if auto:
        _write_provenance(out, {"kind": args.kind, "seed": seed, "config": cfg})
    if args.kind == "db" and args.commands:
        Path(args.commands).write_text("".join(line + "\n" for line in wl.db_commands(schedule)),
                                       encoding="utf-8")
    _say(args, f"{args.kind} schedule with {len(schedule.events)} events -> {out}")
    return EXIT_OK


def cmd_replay(args) -> int:
    from dataclasses import asdict

    from . import workload as wl

    schedule = wl.read_schedule(args.schedule)
    clock = wl.DryRunClock() if args.dry_run else wl.WallClock()
    results = wl.replay_web(schedule, args.base_url, clock, timeout=args.timeout)
    doc = [asdict(r) for r in results]
    if args.report:
        Path(args.report).write_text(json.dumps(doc, indent=1) + "\n", encoding="utf-8")
    errors = sum(len(r.errors) for r in results)
    _say(args, f"replayed {len(results)} events, {sum(r.completed for r in results)} requests "
               f"completed, {errors} errors")
    return EXIT_OK


def cmd_simulate(args) -> int:
    from dataclasses import asdict

    from .metrics import load_json_config, write_metrics_csv
    from .power import write_power_csv
    from .synthetic import SyntheticConfig, config_from_dict, generate

    cfg = config_from_dict(load_json_config(args.config)) if args.config else SyntheticConfig()
    if args.profile:
        cfg.workload_profile = args.profile
    if args.duration is not None:
        cfg.duration = args.duration
    if args.noise is not None:
        cfg.noise_sigma = args.noise
    cfg.seed, auto = _resolve_seed(args, fallback=cfg.seed if args.config else None)
    metrics, power = generate(cfg)
    write_metrics_csv(metrics, args.out_metrics)
    write_power_csv(power, args.out_power)
    record = asdict(cfg)
    record["seed_auto_chosen"] = auto
    _write_provenance(Path(args.out_metrics), record)
    _say(args, f"simulated {len(metrics)} s of '{cfg.workload_profile}' load -> "
               f"{args.out_metrics}, {args.out_power}")
    return EXIT_OK


# -- parser -----------------------------------------------------------------

def _add_seed(p):
    p.add_argument("--seed", type=int, default=argparse.SUPPRESS,
                   help="RNG seed (overrides the global --seed)")


def _add_gbr_flags(p):
    p.add_argument("--n-trees", type=int, default=200, help="boosting rounds (default 200)")
    p.add_argument("--learning-rate", type=float, default=0.1, help="shrinkage in (0, 1] (default 0.1)")
    p.add_argument("--max-depth", type=int, default=3, help="tree depth; negative for unlimited (default 3)")
    p.add_argument("--min-samples-leaf", type=int, default=1, help="minimum rows per leaf (default 1)")


def _add_loop_flags(p, interval_default=1.0):
    p.add_argument("--interval", type=float, default=interval_default, help="seconds between samples")
    p.add_argument("--duration", type=float, default=3600.0, help="seconds to run")
    p.add_argument("--no-sleep", action="store_true",
                   help="advance a virtual clock instead of sleeping (replay/synthetic sources)")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="vmwatt",
                     description="Estimate VM power draw from guest-side resource metrics.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("--seed", type=int, default=None, help="RNG seed for randomized commands")
    parser.add_argument("--quiet", action="store_true", help="only print warnings and errors")
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)

    p = sub.add_parser("collect", help="sample guest metrics to CSV")
    _add_loop_flags(p)
    p.add_argument("--out", required=True, help="metrics CSV to write")
    p.add_argument("--source", default="system",
                   help="system | replay:FILE | synthetic:CONFIG (default system)")
    p.set_defaults(func=cmd_collect)

    p = sub.add_parser("log-power", help="log per-VM host power to CSV")
    p.add_argument("--pid", type=int, default=None, help="VM process id (informational; "
                   "the run stops when it exits)")
    _add_loop_flags(p)
    p.add_argument("--backend", required=True,
                   help="counter-file:PATH | external-csv:PATH | synthetic:CONFIG")
    p.add_argument("--ceiling", type=float, default=10_000.0,
                   help="flag readings above this many watts (default 10000)")
    p.add_argument("--out", required=True, help="power CSV to write")
    p.set_defaults(func=cmd_log_power)

    p = sub.add_parser("join", help="align metrics and power logs into a dataset")
    p.add_argument("--metrics", required=True)
    p.add_argument("--power", required=True)
    p.add_argument("--tolerance", type=float, default=0.5, help="max timestamp gap in seconds")
    p.add_argument("--keep-flagged", action="store_true",
                   help="keep rate-baseline and counter-reset rows")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_join)

    p = sub.add_parser("merge", help="concatenate datasets")
    p.add_argument("--out", required=True)
    p.add_argument("inputs", nargs="+")
    p.set_defaults(func=cmd_merge)

    p = sub.add_parser("train", help="fit a boosted-tree model")
    p.add_argument("--data", required=True)
    _add_gbr_flags(p)
    _add_seed(p)
    p.add_argument("--out", required=True, help="model JSON to write")
    p.add_argument("--importance-figure", help="also render MDI importances to this file")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="shuffle-split cross-validation")
    p.add_argument("--data", required=True)
    p.add_argument("--folds", type=int, default=100)
    p.add_argument("--test-fraction", type=float, default=0.2)
    _add_seed(p)
    _add_gbr_flags(p)
    p.add_argument("--report", help="report JSON to write")
    p.add_argument("--export-fold", type=int, default=0, help="fold whose predictions are exported")
    p.add_argument("--export", help="truth/prediction CSV to write")
    p.add_argument("--figure", help="render the exported fold to this image file")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("plot", help="render a truth/prediction CSV")
    p.add_argument("--in", dest="inp", required=True)
    p.add_argument("--out", required=True, help="image file (.svg, .png, .pdf)")
    p.add_argument("--title")
    p.add_argument("--max-points", type=int, default=300)
    p.set_defaults(func=cmd_plot)

    p = sub.add_parser("infer", help="live power estimates from a model")
    p.add_argument("--model", required=True)
    p.add_argument("--source", default="system")
    _add_loop_flags(p)
    p.add_argument("--out", help="CSV to write (default standard output)")
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("gen-workload", help="generate a web or db load schedule")
    p.add_argument("kind", choices=["web", "db"])
    p.add_argument("--config", help="JSON config file or inline object")
    _add_seed(p)
    p.add_argument("--out", required=True, help="schedule JSON to write")
    p.add_argument("--commands", help="db only: write '<offset>\\tpgbench ...' lines here")
    p.set_defaults(func=cmd_gen_workload)

    p = sub.add_parser("replay", help="drive a web schedule against a server")
    p.add_argument("--schedule", required=True)
    p.add_argument("--base-url", required=True)
    p.add_argument("--dry-run", action="store_true", help="no sleeping, no requests")
    p.add_argument("--timeout", type=float, default=10.0)
    p.add_argument("--report", help="per-event JSON report")
    p.set_defaults(func=cmd_replay)

    p = sub.add_parser("simulate", help="synthetic paired metrics and power logs")
    p.add_argument("--profile", choices=["cpu-heavy", "net-heavy", "disk-heavy", "mixed"])
    p.add_argument("--duration", type=int)
    p.add_argument("--noise", type=float, help="power noise sigma in watts (default 2)")
    p.add_argument("--config", help="synthetic config JSON")
    _add_seed(p)
    p.add_argument("--out-metrics", required=True)
    p.add_argument("--out-power", required=True)
    p.set_defaults(func=cmd_simulate)
    return parser


def _on_sigterm(signum, frame):
    raise KeyboardInterrupt


def dispatch(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    if args.command is None:
        parser.print_usage(sys.stderr)
        print("vmwatt: error: a command is required", file=sys.stderr)
        return EXIT_USAGE
    level = logging.DEBUG if args.verbose else logging.WARNING if args.quiet else logging.INFO
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s", force=True)
    try:
        previous = signal.signal(signal.SIGTERM, _on_sigterm)
    except ValueError:
        previous = None  # not in the main thread
    try:
        return args.func(args)
    except FileNotFoundError as exc:
        print(f"vmwatt: error: no such file: {exc.filename}", file=sys.stderr)
        return EXIT_DATA
    except VmwattError as exc:
        print(f"vmwatt: error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"vmwatt: error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    finally:
        if previous is not None:
            signal.signal(signal.SIGTERM, previous)


def main() -> None:
    sys.exit(dispatch())


if __name__ == "__main__":
    main()
