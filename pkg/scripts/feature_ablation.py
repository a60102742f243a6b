"""Handover prediction quality per input feature set on a synthetic corpus."""
import argparse
import csv
import time

from netselect.metrics_report import roc_auc, true_accuracy
from netselect.predictors import PredictorConfig, train_unified, window_predictions
from netselect.synth import SynthConfig, generate_corpus


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--feature-sets", default="f9,f7,rsrpq,gps")
    ap.add_argument("--train-drives", type=int, default=50)
    ap.add_argument("--test-drives", type=int, default=10)
    ap.add_argument("--duration", type=int, default=1000)
    ap.add_argument("--window", type=int, default=64)
    ap.add_argument("--epochs", type=int, default=40)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", default="ablation.csv")
    args = ap.parse_args()

    train = generate_corpus(SynthConfig(seed=11, duration_s=args.duration), args.train_drives, "train")
    test = generate_corpus(SynthConfig(seed=12, duration_s=args.duration), args.test_drives, "test")
    rows = []
    for fs in args.feature_sets.split(","):
        t0 = time.perf_counter()
        cfg = PredictorConfig(task="handover", feature_set=fs, window_length=args.window, max_epochs=args.epochs,
                              patience=8, conv_channels=(16, 16, 16, 32), lstm_hidden=32, fc_hidden=(16, 8),
                              batch_size=128)
        model = train_unified(train, cfg, val_fraction=0.1, seed=args.seed)
        p, y = window_predictions(model, test)
        row = {"feature_set": fs, "auc": roc_auc(p, y).auc, "true_accuracy": true_accuracy(p, y, 0.7),
               "epochs": len(model.training_log), "seconds": round(time.perf_counter() - t0, 1)}
        print(row, flush=True)
        rows.append(row)
    with open(args.out, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]))
        w.writeheader()
        w.writerows(rows)


if __name__ == "__main__":
    main()
