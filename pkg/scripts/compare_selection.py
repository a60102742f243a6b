"""ANS against the FEC split baseline on held-out synthetic drives.

Trains the handover and latency predictors, then replays held-out drives
with learned and with oracle forecasts using common random numbers, and
writes the per-drive percentile reports.
"""
import argparse
import json
import os

from netselect.cli import count_wins
from netselect.metrics_report import compare_report
from netselect.predictors import PredictorConfig, train_unified
from netselect.simulation import LearnedForecaster, OracleForecaster, run_experiment
from netselect.synth import SynthConfig, generate_corpus


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--train-drives", type=int, default=50)
    ap.add_argument("--held-out", type=int, default=20)
    ap.add_argument("--threshold", type=float, default=0.7)
    ap.add_argument("--out", default="comparison")
    args = ap.parse_args()

    arch = dict(conv_channels=(16, 16, 16, 32), lstm_hidden=32, fc_hidden=(16, 8), batch_size=128)
    train = generate_corpus(SynthConfig(seed=11), args.train_drives, "train")
    hand = train_unified(train, PredictorConfig(task="handover", window_length=64, max_epochs=40, patience=8,
                                                **arch), 0.1, seed=0)
    lat = train_unified(train, PredictorConfig(task="latency", window_length=64, max_epochs=15, patience=8,
                                               sample_stride=8, **arch), 0.1, seed=0)
    held = generate_corpus(SynthConfig(seed=13), args.held_out, "holdout")
    seeds = list(range(100, 100 + args.held_out))
    summary = {}
    for name, fc in (("learned", LearnedForecaster(hand, lat)), ("oracle", OracleForecaster(64))):
        out = os.path.join(args.out, name)
        os.makedirs(out, exist_ok=True)
        rows = compare_report(run_experiment(held, fc, seeds=seeds, handover_threshold=args.threshold), out)
        summary[name] = count_wins(rows)
        print(name, summary[name], flush=True)
    with open(os.path.join(args.out, "wins.json"), "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)


if __name__ == "__main__":
    main()
