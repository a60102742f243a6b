"""Command-line entry point: generate, train, evaluate, simulate, compare, inspect.

Every subcommand accepts ``--config FILE``, a flat ``key = value`` text file
whose keys are the long option names (dashes or underscores).  Flags given
on the command line override file values.  Each run records a
``manifest.json`` with its resolved configuration and output hashes.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
import time
from pathlib import Path
from typing import Sequence

import numpy as np

from . import __version__
from .errors import NetselectError, UsageError

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _ints(text: str) -> tuple[int, ...]:
    return tuple(int(v) for v in str(text).replace(" ", "").split(",") if v)


def read_config_file(path: str | os.PathLike) -> dict[str, str]:
    """Parse ``key = value`` lines; ``#`` starts a comment, blank lines are skipped."""
    out = {}
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise UsageError(f"cannot read config file: {exc}") from exc
    for n, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{n}: expected key = value")
        k, v = line.split("=", 1)
        out[k.strip().replace("-", "_")] = v.strip()
    return out


def sha256_file(path: str | os.PathLike) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def write_manifest(run_dir: str | os.PathLike, name: str, args: argparse.Namespace, artifacts: Sequence[str | Path]) -> Path:
    """Add this run to ``run_dir/manifest.json`` (entries keyed by ``name``)."""
    run_dir = Path(run_dir)
    path = run_dir / "manifest.json"
    data = {"runs": {}}
    if path.exists():
        try:
            data = json.loads(path.read_text())
        except (OSError, ValueError):
            data = {"runs": {}}
    config = {k: (list(v) if isinstance(v, tuple) else v) for k, v in vars(args).items() if k not in ("func",)}
    data["runs"][name] = {
        "command": args.command,
        "version": __version__,
        "seed": getattr(args, "seed", None),
        "config": config,
        "artifacts": {
            os.path.relpath(a, run_dir): sha256_file(a) for a in sorted(map(str, artifacts))
        },
    }
    path.write_text(json.dumps(data, indent=2, sort_keys=True) + "\n")
    return path


def _trace_files(directory: str) -> list[Path]:
    d = Path(directory)
    if not d.is_dir():
        raise UsageError(f"{directory} is not a directory")
    files = sorted(p for p in d.glob("*.csv"))
    if not files:
        raise UsageError(f"no trace CSV files in {directory}")
    return files


def _load_traces(directory: str):
    from .trace_model import load_drive

    return [load_drive(p) for p in _trace_files(directory)]


# ------------------------------------------------------------------ commands


def cmd_generate(args) -> int:
    from .synth import SynthConfig, generate_corpus
    from .trace_model import save_drive

    cfg = SynthConfig(
        seed=args.seed,
        duration_s=args.duration,
        network_count=args.networks,
        handover_rate=args.handover_rate,
        handover_mode=args.handover_mode,
        coupling=args.coupling,
    )
    cfg.validate()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    files = []
    for d in generate_corpus(cfg, args.drives, args.prefix):
        p = out / f"{d.drive_id}.csv"
        save_drive(d, p)
        files.append(p)
    write_manifest(out, "generate", args, files)
    print(f"wrote {len(files)} drives to {out}")
    return EXIT_OK


def _predictor_config(args):
    from .predictors import PredictorConfig

    return PredictorConfig(
        task=args.task,
        feature_set=args.features,
        window_length=args.window,
        horizon=args.horizon,
        d_thresh=args.thresh,
        batch_size=args.batch,
        learning_rate=args.lr,
        max_epochs=args.epochs,
        patience=args.patience,
        conv_channels=_ints(args.conv_channels),
        lstm_hidden=args.lstm_hidden,
        fc_hidden=_ints(args.fc_hidden),
        sync=args.sync,
        sample_stride=args.sample_stride,
    )


def cmd_train(args) -> int:
    from .predictors import train_unified

    cfg = _predictor_config(args)
    corpus = _load_traces(args.traces)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)

    def progress(rec):
        if not args.quiet:
            print(
                f"epoch {rec['epoch']:3d}  train {rec['train_loss']:.5f}  "
                f"val {rec['val_loss']:.5f}  metric {rec['val_metric']:.4f}",
                flush=True,
            )

    model = train_unified(corpus, cfg, args.val_fraction, args.seed, progress)
    model.save(out)
    log_path = out.with_name(out.stem + "_training_log.csv")
    model.write_log_csv(log_path)
    write_manifest(out.parent, f"train:{out.name}", args, [out, log_path])
    print(f"saved {cfg.task} model to {out} after {len(model.training_log)} epochs")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    from .metrics_report import write_evaluation
    from .predictors import TrainedPredictor, window_predictions

    model = TrainedPredictor.load(args.model)
    corpus = _load_traces(args.traces)
    outputs, labels = window_predictions(model, corpus, natural=args.distribution == "natural")
    out = Path(args.out)
    norm = model.normalization
    rng = None if model.config.task == "handover" else norm.y_max - norm.y_min
    summary = write_evaluation(out, model.config.task, outputs, labels, args.thresh, rng)
    files = [p for p in out.iterdir() if p.suffix in (".csv", ".json") and p.name != "manifest.json"]
    write_manifest(out, "evaluate", args, files)
    print(json.dumps(summary, sort_keys=True))
    return EXIT_OK


def _forecaster(args):
    from .predictors import TrainedPredictor
    from .simulation import LearnedForecaster, OracleForecaster

    if args.oracle:
        return OracleForecaster(args.window)
    if not args.hand_model or not args.lat_model:
        raise UsageError("ANS needs --hand-model and --lat-model (or --oracle)")
    return LearnedForecaster(TrainedPredictor.load(args.hand_model), TrainedPredictor.load(args.lat_model))


def cmd_simulate(args) -> int:
    from .selection import write_decision_log
    from .simulation import simulate_drive
    from .trace_model import load_drive

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    algos = {"ans": ["ANS"], "baseline": ["Baseline"], "both": ["ANS", "Baseline"]}[args.algo]
    if "ANS" in algos:
        forecaster = _forecaster(args)
    else:
        from .simulation import OracleForecaster

        forecaster = OracleForecaster(args.window)
    files = []
    for i, path in enumerate(_trace_files(args.trace_dir)):
        trace = load_drive(path)
        for algo in algos:
            o = simulate_drive(trace, algo, forecaster, seed=args.seed + i, handover_threshold=args.threshold,
                               window_length=args.window)
            p = out / f"{trace.drive_id}__{algo}.csv"
            o.write_csv(p)
            files.append(p)
            if algo == "ANS":
                dp = out / f"{trace.drive_id}__decisions.csv"
                write_decision_log(zip(o.seconds.tolist(), o.decisions), dp)
                files.append(dp)
    write_manifest(out, "simulate", args, files)
    print(f"simulated {len(files)} outcome files into {out}")
    return EXIT_OK


def cmd_compare(args) -> int:
    from .metrics_report import compare_report
    from .simulation import read_outcome_csv

    res = Path(args.results)
    ans = sorted(res.glob("*__ANS.csv"))
    if not ans:
        raise UsageError(f"no ANS outcome files in {res}")
    pairs = []
    for a in ans:
        drive = a.name[: -len("__ANS.csv")]
        b = res / f"{drive}__Baseline.csv"
        if not b.exists():
            raise UsageError(f"missing Baseline outcome for {drive}")
        pairs.append((read_outcome_csv(a, drive), read_outcome_csv(b, drive)))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rows = compare_report(pairs, out)
    wins = count_wins(rows)
    write_manifest(out, "compare", args, [out / "compare.csv", out / "compare.json"])
    print(json.dumps(wins, sort_keys=True))
    return EXIT_OK


def count_wins(rows: Sequence[dict]) -> dict:
    """Drives where ANS median loss and median latency are both at most Baseline's."""
    by = {}
    for r in rows:
        by.setdefault(r["drive_id"], {})[r["algorithm"]] = r
    wins = sum(
        1
        for d in by.values()
        if d["ANS"]["loss_p50"] <= d["Baseline"]["loss_p50"] and d["ANS"]["latency_p50"] <= d["Baseline"]["latency_p50"]
    )
    return {"drives": len(by), "ans_not_worse": wins}


def inspect_timing(models, trace, iterations: int) -> dict:
    """Wall time of one handover plus one latency inference on a raw telemetry window.

    ``models`` is ``(hand, latency)``.  Each call includes normalization and
    imputation of the raw window, as a live selector would need.
    """
    from .predictors import predict_handover, predict_scalar
    from .preprocess import CANDIDATE_FEATURES

    if iterations < 1:
        raise UsageError("iterations must be at least 1")
    hand, lat = models
    net = trace.networks[0]
    raw = net.matrix(CANDIDATE_FEATURES)
    stats = {}
    for name, model, fn in (("hand", hand, predict_handover), ("latency", lat, predict_scalar)):
        T = model.config.window_length
        if len(raw) < T:
            raise UsageError(f"trace shorter than the {T}-row window")
        window = raw[-T:]
        fn(model, model.prepare_window(window))  # warm caches
        times = np.empty(iterations)
        for i in range(iterations):
            t0 = time.perf_counter()
            fn(model, model.prepare_window(window))
            times[i] = (time.perf_counter() - t0) * 1e3
        stats[name] = {"mean_ms": float(times.mean()), "max_ms": float(times.max())}
    stats["total_mean_ms"] = stats["hand"]["mean_ms"] + stats["latency"]["mean_ms"]
    stats["budget_ms"] = 100.0
    stats["within_budget"] = stats["total_mean_ms"] < 100.0
    stats["iterations"] = iterations
    return stats


def cmd_inspect(args) -> int:
    from .predictors import TrainedPredictor
    from .trace_model import load_drive

    models = (TrainedPredictor.load(args.hand_model), TrainedPredictor.load(args.lat_model))
    stats = inspect_timing(models, load_drive(args.trace), args.iterations)
    text = json.dumps(stats, indent=2, sort_keys=True)
    print(text)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "timing.json").write_text(text + "\n")
        write_manifest(out, "inspect", args, [out / "timing.json"])
    return EXIT_OK if stats["within_budget"] else EXIT_FAIL


# ------------------------------------------------------------------ parser


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="netselect", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    g = sub.add_parser("generate", help="write a synthetic drive corpus")
    g.add_argument("--drives", type=int, default=10)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--duration", type=int, default=1000)
    g.add_argument("--networks", type=int, default=3)
    g.add_argument("--handover-rate", type=float, default=0.03)
    g.add_argument("--handover-mode", choices=("logistic", "rule"), default="logistic")
    g.add_argument("--coupling", type=float, default=1.0)
    g.add_argument("--prefix", default="drive")
    g.add_argument("--out", default="traces")
    g.set_defaults(func=cmd_generate)

    t = sub.add_parser("train", help="train a unified predictor")
    t.add_argument("--traces", required=True)
    t.add_argument("--task", choices=("hand", "handover", "loss", "latency"), default="hand")
    t.add_argument("--features", choices=("gps", "rsrpq", "f7", "f8", "f9"), default="f9")
    t.add_argument("--window", type=int, choices=(32, 64, 128), default=64)
    t.add_argument("--horizon", type=int, default=1)
    t.add_argument("--batch", type=int, default=512)
    t.add_argument("--lr", type=float, default=0.001)
    t.add_argument("--epochs", type=int, default=50)
    t.add_argument("--patience", type=int, default=10)
    t.add_argument("--thresh", type=float, default=0.7)
    t.add_argument("--conv-channels", default="64,64,64,128")
    t.add_argument("--lstm-hidden", type=int, default=128)
    t.add_argument("--fc-hidden", default="64,32")
    t.add_argument("--sync", choices=("batch", "epoch"), default="batch")
    t.add_argument("--sample-stride", type=int, default=1)
    t.add_argument("--val-fraction", type=float, default=0.1)
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--quiet", action="store_true")
    t.add_argument("--out", required=True)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("evaluate", help="score a model on held-out traces")
    e.add_argument("--model", required=True)
    e.add_argument("--traces", required=True)
    e.add_argument("--thresh", type=float, default=0.7)
    e.add_argument("--distribution", choices=("natural", "balanced"), default="natural")
    e.add_argument("--out", required=True)
    e.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("simulate", help="replay drives with ANS and/or the FEC baseline")
    s.add_argument("--trace-dir", required=True)
    s.add_argument("--hand-model")
    s.add_argument("--lat-model")
    s.add_argument("--oracle", action="store_true", help="use ground-truth lookahead forecasts")
    s.add_argument("--algo", choices=("ans", "baseline", "both"), default="both")
    s.add_argument("--threshold", type=float, default=0.7)
    s.add_argument("--window", type=int, default=64, help="warm-up seconds excluded from results")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_simulate)

    c = sub.add_parser("compare", help="percentile report over simulate outputs")
    c.add_argument("--results", required=True)
    c.add_argument("--out", required=True)
    c.set_defaults(func=cmd_compare)

    i = sub.add_parser("inspect", help="time one handover + one latency inference")
    i.add_argument("--hand-model", required=True)
    i.add_argument("--lat-model", required=True)
    i.add_argument("--trace", required=True)
    i.add_argument("--iterations", type=int, default=1000)
    i.add_argument("--out")
    i.set_defaults(func=cmd_inspect)

    for sp in (g, t, e, s, c, i):
        sp.add_argument("--config", help="flat key = value file; command-line flags take precedence")
    return p


def _prescan(parser: argparse.ArgumentParser, argv: list[str]) -> tuple[str | None, str | None]:
    """Subcommand name and ``--config`` value, found before full parsing."""
    choices = parser._subparsers._group_actions[0].choices
    command = next((a for a in argv if a in choices), None)
    config = None
    for i, a in enumerate(argv):
        if a == "--config" and i + 1 < len(argv):
            config = argv[i + 1]
        elif a.startswith("--config="):
            config = a.split("=", 1)[1]
    return command, config


def _apply_config_file(parser: argparse.ArgumentParser, argv: list[str]) -> argparse.Namespace:
    command, config = _prescan(parser, argv)
    if command is not None and config:
        sp = parser._subparsers._group_actions[0].choices[command]
        actions = {a.dest: a for a in sp._actions}
        defaults = {}
        for key, raw in read_config_file(config).items():
            if key not in actions or key in ("help", "config"):
                raise UsageError(f"unknown config key {key!r} for {command}")
            act = actions[key]
            if isinstance(act, argparse._StoreTrueAction):
                val = raw.lower() in ("1", "true", "yes", "on")
            else:
                try:
                    val = act.type(raw) if act.type else raw
                except ValueError as exc:
                    raise UsageError(f"config {key}={raw!r}: {exc}") from exc
                if act.choices is not None and val not in act.choices:
                    raise UsageError(f"config {key}={raw!r} not in {list(act.choices)}")
            defaults[key] = val
            act.required = False
        sp.set_defaults(**defaults)
    args = parser.parse_args(argv)
    if args.command is None:
        raise UsageError("a subcommand is required")
    return args


def dispatch(argv: Sequence[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = _apply_config_file(parser, argv)
        return args.func(args)
    except UsageError as exc:
        print(f"netselect: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NetselectError as exc:
        print(f"netselect: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_FAIL
    except (OSError, ValueError) as exc:
        print(f"netselect: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_FAIL


def main() -> None:
    sys.exit(dispatch())


if __name__ == "__main__":
    main()
