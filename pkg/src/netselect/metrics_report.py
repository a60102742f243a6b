"""Evaluation metrics and plot-ready report tables."""
from __future__ import annotations

import csv
import json
import os
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import (
    EmptySeries,
    IoFailure,
    LengthMismatch,
    NoValidPairs,
    SingleClass,
    UnpairedOutcomes,
)


def _pair(a, b, what: str):
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape != b.shape or a.ndim != 1:
        raise LengthMismatch(f"{what}: shapes {a.shape} and {b.shape} differ")
    if len(a) == 0:
        raise LengthMismatch(f"{what}: empty input")
    return a, b


# ------------------------------------------------------------- classification


@dataclass(frozen=True)
class ConfusionMatrix:
    tp: int
    fp: int
    tn: int
    fn: int

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn

    @property
    def tp_accuracy(self) -> float:
        """Share of actual positives predicted positive (``nan`` without positives)."""
        pos = self.tp + self.fn
        return self.tp / pos if pos else float("nan")

    @property
    def accuracy(self) -> float:
        return (self.tp + self.tn) / self.total

    def row_normalized(self) -> list[list[float]]:
        """``[[tn, fp], [fn, tp]]`` with each actual-class row divided by its total."""
        rows = [[self.tn, self.fp], [self.fn, self.tp]]
        out = []
        for r in rows:
            s = sum(r)
            out.append([v / s if s else float("nan") for v in r])
        return out


def confusion(preds: Sequence[int], labels: Sequence[int]) -> ConfusionMatrix:
    p, y = _pair(preds, labels, "confusion")
    p = p.astype(bool)
    y = y.astype(bool)
    return ConfusionMatrix(
        tp=int(np.sum(p & y)),
        fp=int(np.sum(p & ~y)),
        tn=int(np.sum(~p & ~y)),
        fn=int(np.sum(~p & y)),
    )


def threshold(probs, d_thresh: float) -> np.ndarray:
    return (np.asarray(probs, dtype=np.float64) >= d_thresh).astype(np.int64)


def true_accuracy(probs, labels, d_thresh: float = 0.7) -> float:
    p, y = _pair(probs, labels, "true_accuracy")
    if np.any((p < 0) | (p > 1)):
        raise ValueError("probabilities must lie in [0, 1]")
    return float(np.mean(threshold(p, d_thresh) == y.astype(np.int64)))


@dataclass(frozen=True)
class RocCurve:
    fpr: np.ndarray
    tpr: np.ndarray
    thresholds: np.ndarray
    auc: float


def roc_auc(probs, labels) -> RocCurve:
    """ROC over every distinct score; AUC by the trapezoidal rule.

    Counts stay integral until the final division, so the area equals the
    Mann-Whitney statistic up to one rounding.
    """
    s, y = _pair(probs, labels, "roc_auc")
    s = s.astype(np.float64)
    y = y.astype(bool)
    n_pos = int(y.sum())
    n_neg = len(y) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise SingleClass("ROC needs both classes")
    order = np.argsort(-s, kind="stable")
    s_sorted = s[order]
    y_sorted = y[order]
    tp = np.cumsum(y_sorted, dtype=np.int64)
    fp = np.cumsum(~y_sorted, dtype=np.int64)
    last = np.r_[np.flatnonzero(np.diff(s_sorted) != 0), len(s) - 1]
    tp = np.r_[0, tp[last]]
    fp = np.r_[0, fp[last]]
    # twice the trapezoid area in count units, exact in integers
    area2 = int(np.sum((fp[1:] - fp[:-1]) * (tp[1:] + tp[:-1])))
    auc = area2 / (2 * n_pos * n_neg)
    return RocCurve(fp / n_neg, tp / n_pos, np.r_[np.inf, s_sorted[last]], auc)


def mann_whitney_auc(probs, labels) -> float:
    """Reference AUC by comparing every positive/negative pair."""
    s, y = _pair(probs, labels, "mann_whitney_auc")
    pos = s[y.astype(bool)]
    neg = s[~y.astype(bool)]
    if len(pos) == 0 or len(neg) == 0:
        raise SingleClass("needs both classes")
    gt = sum(int(np.sum(p > neg)) for p in pos)
    eq = sum(int(np.sum(p == neg)) for p in pos)
    return (2 * gt + eq) / (2 * len(pos) * len(neg))


# ------------------------------------------------------------- regression


@dataclass(frozen=True)
class RatioResult:
    ratio: float
    included: int
    excluded: int


def prediction_ratio(preds, reals, label_range: float | None = None, eps_fraction: float = 1e-6) -> RatioResult:
    """Mean of ``pred / real`` over pairs whose real value exceeds a small floor.

    The floor is ``eps_fraction * label_range`` (label range defaults to the
    span of ``reals``); excluded pairs are counted.
    """
    p, r = _pair(preds, reals, "prediction_ratio")
    p = p.astype(np.float64)
    r = r.astype(np.float64)
    if label_range is None:
        label_range = float(np.max(r) - np.min(r)) if len(r) else 0.0
    floor = eps_fraction * label_range
    ok = r > floor
    if not ok.any():
        raise NoValidPairs("every real value is at or below the exclusion floor")
    return RatioResult(float(np.mean(p[ok] / r[ok])), int(ok.sum()), int((~ok).sum()))


# ------------------------------------------------------------- distributions


@dataclass(frozen=True)
class PercentileSummary:
    p25: float
    p50: float
    p75: float


def percentiles(series) -> PercentileSummary:
    x = np.asarray(series, dtype=np.float64).ravel()
    if len(x) == 0:
        raise EmptySeries("no values")
    q = np.percentile(x, [25, 50, 75], method="linear")
    return PercentileSummary(float(q[0]), float(q[1]), float(q[2]))


# ------------------------------------------------------------- reports


REPORT_COLUMNS = (
    "drive_id",
    "algorithm",
    "seconds",
    "loss_p25",
    "loss_p50",
    "loss_p75",
    "latency_p25",
    "latency_p50",
    "latency_p75",
    "loss_mean",
    "latency_mean",
)


def compare_report(pairs: Sequence[tuple], out_dir: str | os.PathLike | None = None) -> list[dict]:
    """Per drive and algorithm, percentile summaries of per-second loss rate and latency.

    ``pairs`` holds ``(ans_outcome, baseline_outcome)`` tuples covering the
    same drive and seconds.  When ``out_dir`` is given the rows are written
    to ``compare.csv`` and ``compare.json``.
    """
    rows = []
    for pair in pairs:
        if len(pair) != 2:
            raise UnpairedOutcomes("each entry must hold exactly two outcomes")
        a, b = pair
        if a.drive_id != b.drive_id or not np.array_equal(a.seconds, b.seconds):
            raise UnpairedOutcomes(f"outcomes for {a.drive_id!r} and {b.drive_id!r} do not cover the same seconds")
        for o in (a, b):
            loss = percentiles(o.loss_rate)
            lat_vals = o.mean_latency_ms[~np.isnan(o.mean_latency_ms)]
            lat = percentiles(lat_vals) if len(lat_vals) else PercentileSummary(*(float("nan"),) * 3)
            rows.append(
                {
                    "drive_id": o.drive_id,
                    "algorithm": o.algorithm,
                    "seconds": int(len(o.seconds)),
                    "loss_p25": loss.p25,
                    "loss_p50": loss.p50,
                    "loss_p75": loss.p75,
                    "latency_p25": lat.p25,
                    "latency_p50": lat.p50,
                    "latency_p75": lat.p75,
                    "loss_mean": float(np.mean(o.loss_rate)),
                    "latency_mean": float(np.mean(lat_vals)) if len(lat_vals) else float("nan"),
                }
            )
    if out_dir is not None:
        write_rows_csv(os.path.join(out_dir, "compare.csv"), REPORT_COLUMNS, rows)
        write_json(os.path.join(out_dir, "compare.json"), rows)
    return rows


def write_rows_csv(path, columns: Sequence[str], rows: Sequence[dict]) -> None:
    try:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(columns)
            for r in rows:
                w.writerow([repr(r[c]) if isinstance(r[c], float) else r[c] for c in columns])
    except OSError as exc:
        raise IoFailure(str(exc)) from exc


def write_json(path, obj) -> None:
    try:
        with open(path, "w") as fh:
            json.dump(obj, fh, indent=2, sort_keys=True)
            fh.write("\n")
    except OSError as exc:
        raise IoFailure(str(exc)) from exc


def write_evaluation(
    out_dir: str | os.PathLike,
    task: str,
    outputs: np.ndarray,
    labels: np.ndarray,
    d_thresh: float = 0.7,
    label_range: float | None = None,
) -> dict:
    """Emit the evaluation tables for one model; returns a summary dict."""
    os.makedirs(out_dir, exist_ok=True)
    summary: dict = {"task": task, "samples": int(len(labels))}
    if task == "handover":
        cm = confusion(threshold(outputs, d_thresh), labels)
        norm = cm.row_normalized()
        write_rows_csv(
            os.path.join(out_dir, "confusion.csv"),
            ("form", "tn", "fp", "fn", "tp"),
            [
                {"form": "counts", "tn": cm.tn, "fp": cm.fp, "fn": cm.fn, "tp": cm.tp},
                {"form": "row_normalized", "tn": norm[0][0], "fp": norm[0][1], "fn": norm[1][0], "tp": norm[1][1]},
            ],
        )
        roc = roc_auc(outputs, labels)
        write_rows_csv(
            os.path.join(out_dir, "roc.csv"),
            ("fpr", "tpr"),
            [{"fpr": float(f), "tpr": float(t)} for f, t in zip(roc.fpr, roc.tpr)] + [{"fpr": "auc", "tpr": roc.auc}],
        )
        summary.update(
            d_thresh=d_thresh,
            auc=roc.auc,
            true_accuracy=true_accuracy(outputs, labels, d_thresh),
            tp_accuracy=cm.tp_accuracy,
            tp=cm.tp, fp=cm.fp, tn=cm.tn, fn=cm.fn,
        )
    else:
        res = prediction_ratio(outputs, labels, label_range)
        write_rows_csv(
            os.path.join(out_dir, "ratio.csv"),
            ("ratio", "included", "excluded", "mae"),
            [{"ratio": res.ratio, "included": res.included, "excluded": res.excluded,
              "mae": float(np.mean(np.abs(outputs - labels)))}],
        )
        summary.update(prediction_ratio=res.ratio, excluded=res.excluded, mae=float(np.mean(np.abs(outputs - labels))))
    pc = percentiles(outputs)
    write_rows_csv(
        os.path.join(out_dir, "percentiles.csv"),
        ("series", "p25", "p50", "p75"),
        [{"series": "output", "p25": pc.p25, "p50": pc.p50, "p75": pc.p75}],
    )
    write_json(os.path.join(out_dir, "summary.json"), summary)
    return summary
