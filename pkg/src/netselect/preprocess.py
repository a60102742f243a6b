"""Feature selection, min-max normalization, KNN imputation, windowing and balancing."""
from __future__ import annotations

import os
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.spatial import cKDTree

from .container import read_container, write_container
from .errors import (
    AllMissingFeature,
    InsufficientData,
    InvalidConfig,
    NoEligibleNeighbor,
    NoPositives,
    TraceTooShort,
    WrongTask,
)
from .trace_model import DriveTrace, NetworkTrace, handover_indicator

TASKS = ("handover", "loss", "latency")
LABEL_COLUMN = {"loss": "packet_loss_rate", "latency": "latency"}

_F7 = (
    "timestamp",
    "rsrp",
    "rsrq",
    "modem_bandwidth",
    "normalized_bandwidth",
    "packet_loss_rate",
    "total_bitrate",
)
_F8 = (
    "timestamp",
    "rsrp",
    "rsrq",
    "modem_bandwidth",
    "normalized_bandwidth",
    "total_bitrate",
    "gps_longitude",
    "gps_latitude",
)
_F9 = _F7 + ("gps_longitude", "gps_latitude")

PREDEFINED = {
    "gps": ("GPS-only", ("gps_longitude", "gps_latitude")),
    "rsrpq": ("RSRP/RSRQ", ("rsrp", "rsrq")),
    "f7": ("7-feature", _F7),
    "f8": ("8-feature", _F8),
    "f9": ("9-feature", _F9),
}
# Every column any predefined set can draw on; preprocessing runs over all of them.
CANDIDATE_FEATURES = _F9


@dataclass(frozen=True)
class FeatureSet:
    names: tuple[str, ...]
    kind: str = "custom"

    def __post_init__(self):
        object.__setattr__(self, "names", tuple(self.names))
        if len(set(self.names)) != len(self.names):
            raise InvalidConfig(f"duplicate feature names in {self.names}")
        for key, (kind, names) in PREDEFINED.items():
            if self.kind == kind and self.names != names:
                raise InvalidConfig(f"{kind} must be exactly {names}")

    @classmethod
    def predefined(cls, key: str) -> "FeatureSet":
        for k, (kind, names) in PREDEFINED.items():
            if key in (k, kind):
                return cls(names, kind)
        raise InvalidConfig(f"unknown feature set {key!r}; expected one of {list(PREDEFINED)}")

    @property
    def key(self) -> str:
        for k, (kind, _) in PREDEFINED.items():
            if kind == self.kind:
                return k
        return "custom"

    def __len__(self) -> int:
        return len(self.names)


# ---------------------------------------------------------------- (a) selection


def _stack_rows(traces: Sequence[DriveTrace], names: Sequence[str]) -> np.ndarray:
    blocks = [net.matrix(names) for d in traces for net in d.networks]
    return np.vstack(blocks) if blocks else np.empty((0, len(names)))


def pearson_matrix(X: np.ndarray) -> np.ndarray:
    """Pairwise-complete Pearson correlation of the columns of ``X`` (NaN = missing).

    A column pair whose overlap has zero variance in either column gets 0.
    """
    X = np.asarray(X, dtype=np.float64)
    f = X.shape[1]
    out = np.eye(f)
    present = ~np.isnan(X)
    for a in range(f):
        for b in range(a + 1, f):
            m = present[:, a] & present[:, b]
            if m.sum() < 2:
                raise InsufficientData(f"columns {a},{b} share fewer than two complete rows")
            xa = X[m, a] - X[m, a].mean()
            xb = X[m, b] - X[m, b].mean()
            den = np.sqrt((xa @ xa) * (xb @ xb))
            r = 0.0 if den == 0 else float(np.clip((xa @ xb) / den, -1.0, 1.0))
            out[a, b] = out[b, a] = r
    return out


def correlation_matrix(traces: Sequence[DriveTrace], features: FeatureSet) -> np.ndarray:
    return pearson_matrix(_stack_rows(traces, features.names))


def prune_features(corr: np.ndarray, features: FeatureSet, threshold: float = 0.9) -> FeatureSet:
    """Greedy scan in declared order; drop a feature whose |corr| with a kept one exceeds ``threshold``."""
    corr = np.asarray(corr)
    if corr.shape != (len(features), len(features)):
        raise InvalidConfig("correlation matrix does not match feature set")
    kept: list[int] = []
    for i in range(len(features)):
        if all(abs(corr[i, j]) <= threshold for j in kept):
            kept.append(i)
    if len(kept) == len(features):
        return features
    return FeatureSet(tuple(features.names[i] for i in kept), "custom")


# ------------------------------------------------------------ (b) normalization


@dataclass(frozen=True)
class NormalizationParams:
    names: tuple[str, ...]
    x_min: np.ndarray
    x_max: np.ndarray
    y_min: float | None = None
    y_max: float | None = None

    @property
    def degenerate(self) -> np.ndarray:
        return self.x_max == self.x_min

    def to_json(self) -> dict:
        return {
            "names": list(self.names),
            "x_min": [float(v) for v in self.x_min],
            "x_max": [float(v) for v in self.x_max],
            "y_min": self.y_min,
            "y_max": self.y_max,
        }

    @classmethod
    def from_json(cls, d: dict) -> "NormalizationParams":
        return cls(tuple(d["names"]), np.array(d["x_min"], float), np.array(d["x_max"], float), d["y_min"], d["y_max"])

    def select(self, names: Sequence[str]) -> "NormalizationParams":
        idx = [self.names.index(n) for n in names]
        return NormalizationParams(tuple(names), self.x_min[idx], self.x_max[idx], self.y_min, self.y_max)


def fit_normalization(rows: np.ndarray, names: Sequence[str], labels: np.ndarray | None = None) -> NormalizationParams:
    rows = np.asarray(rows, dtype=np.float64).reshape(-1, len(names))
    present = ~np.isnan(rows)
    empty = [n for n, ok in zip(names, present.any(axis=0)) if not ok]
    if empty:
        raise AllMissingFeature(f"no values present for {empty}")
    x_min = np.nanmin(rows, axis=0)
    x_max = np.nanmax(rows, axis=0)
    y_min = y_max = None
    if labels is not None:
        labels = np.asarray(labels, dtype=np.float64)
        if np.all(np.isnan(labels)):
            raise AllMissingFeature("no label values present")
        y_min, y_max = float(np.nanmin(labels)), float(np.nanmax(labels))
    return NormalizationParams(tuple(names), x_min, x_max, y_min, y_max)


def apply_normalization(rows: np.ndarray, params: NormalizationParams) -> np.ndarray:
    """Min-max scale, clip to [0, 1]; degenerate features map to 0 and NaN stays NaN."""
    rows = np.asarray(rows, dtype=np.float64)
    span = params.x_max - params.x_min
    safe = np.where(span == 0, 1.0, span)
    out = np.clip((rows - params.x_min) / safe, 0.0, 1.0)
    return np.where(span == 0, np.where(np.isnan(rows), np.nan, 0.0), out)


def normalize_labels(y: np.ndarray, params: NormalizationParams) -> np.ndarray:
    span = params.y_max - params.y_min
    return (np.asarray(y, float) - params.y_min) / (span if span else 1.0)


def denormalize_labels(y: np.ndarray, params: NormalizationParams) -> np.ndarray:
    return np.asarray(y, float) * (params.y_max - params.y_min) + params.y_min


# ---------------------------------------------------------------- (c) imputation


def _nearest_partial(Q, Qmask_cols, D, k):
    """Brute-force distances over mutually present columns; returns (dist, local idx) per query."""
    Dsub = D[:, Qmask_cols]
    dpresent = ~np.isnan(Dsub)
    anyshared = dpresent.any(axis=1)
    dist = np.empty((len(Q), len(D)))
    for s in range(0, len(Q), 256):
        diff = Q[s : s + 256, None, :] - Dsub[None, :, :]
        dist[s : s + 256] = np.sqrt(np.sum(np.where(np.isnan(diff), 0.0, diff * diff), axis=2))
    dist[:, ~anyshared] = np.inf
    return dist


def impute_knn(rows: np.ndarray, k: int = 2, donors: np.ndarray | None = None) -> np.ndarray:
    """Replace each missing cell with the mean of that feature over its ``k`` nearest donors.

    Distance is Euclidean over the features present in both the query row and
    the donor; a donor is eligible for a cell only if it has that feature.
    ``donors`` defaults to ``rows`` itself.  Ties break toward the lower donor
    index.
    """
    if k < 1:
        raise InvalidConfig("k must be >= 1")
    X = np.array(rows, dtype=np.float64)
    D = X.copy() if donors is None else np.asarray(donors, dtype=np.float64)
    miss = np.isnan(X)
    if not miss.any():
        return X
    if (~miss).sum(axis=1).min() == 0:
        raise NoEligibleNeighbor("a row has no present values to measure distance with")
    dmiss = np.isnan(D)
    out = X.copy()
    patterns, inverse = np.unique(miss, axis=0, return_inverse=True)
    inverse = inverse.ravel()
    for p_i, pattern in enumerate(patterns):
        if not pattern.any():
            continue
        q_idx = np.flatnonzero(inverse == p_i)
        present = np.flatnonzero(~pattern)
        Q = X[np.ix_(q_idx, present)]
        for j in np.flatnonzero(pattern):
            cand = ~dmiss[:, j]
            if not cand.any():
                raise NoEligibleNeighbor(f"feature {j} is missing in every donor")
            full = cand & ~dmiss[:, present].any(axis=1)
            partial = cand & ~full
            dists, idxs = [], []
            full_idx = np.flatnonzero(full)
            if len(full_idx):
                Dfull = D[np.ix_(full_idx, present)]
                kk = min(k + 8, len(full_idx))
                _, i = cKDTree(Dfull).query(Q, k=kk)
                i = i.reshape(len(Q), kk)
                # same arithmetic as the brute-force path so ties compare exactly
                diff = Q[:, None, :] - Dfull[i]
                d = np.sqrt(np.sum(diff * diff, axis=2))
                dk = np.sort(d, axis=1)
                # a tie reaching the edge of the fetched set may hide lower-index donors
                spill = np.flatnonzero(dk[:, min(k, kk) - 1] == dk[:, -1]) if kk < len(full_idx) else []
                if len(spill):
                    dist = _nearest_partial(Q[spill], present, D[full_idx], k)
                    sel = np.argsort(dist, axis=1, kind="stable")[:, :kk]
                    d[spill] = np.take_along_axis(dist, sel, axis=1)
                    i[spill] = sel
                dists.append(d)
                idxs.append(full_idx[i])
            part_idx = np.flatnonzero(partial)
            if len(part_idx):
                dist = _nearest_partial(Q, present, D[part_idx], k)
                kk = min(k, len(part_idx))
                sel = np.argsort(dist, axis=1, kind="stable")[:, :kk]
                dists.append(np.take_along_axis(dist, sel, axis=1))
                idxs.append(part_idx[sel])
            dist_all = np.hstack(dists)
            idx_all = np.hstack(idxs)
            order = np.lexsort((idx_all, dist_all), axis=1)[:, :k]
            dsel = np.take_along_axis(dist_all, order, axis=1)
            isel = np.take_along_axis(idx_all, order, axis=1)
            vals = np.where(np.isfinite(dsel), D[isel, j], np.nan)
            if np.any(np.all(np.isnan(vals), axis=1)):
                raise NoEligibleNeighbor(f"no donor shares a present feature with a row missing feature {j}")
            out[q_idx, j] = np.nanmean(vals, axis=1)
    return out


@dataclass
class Preprocessor:
    """Fitted normalization + imputation over all candidate features of a corpus."""

    params: NormalizationParams
    donors: np.ndarray
    k: int = 2

    def transform_matrix(self, raw: np.ndarray) -> np.ndarray:
        return impute_knn(apply_normalization(raw, self.params), self.k, donors=self.donors)

    def transform(self, trace: NetworkTrace) -> np.ndarray:
        """(duration, len(CANDIDATE_FEATURES)) normalized, complete matrix for one network."""
        return self.transform_matrix(trace.matrix(self.params.names))


def fit_preprocessor(
    traces: Sequence[DriveTrace],
    label_column: str | None = None,
    k: int = 2,
    max_donors: int = 20000,
    seed: int = 0,
) -> Preprocessor:
    raw = _stack_rows(traces, CANDIDATE_FEATURES)
    labels = _stack_rows(traces, [label_column])[:, 0] if label_column else None
    params = fit_normalization(raw, CANDIDATE_FEATURES, labels)
    norm = apply_normalization(raw, params)
    complete = norm[~np.isnan(norm).any(axis=1)]
    if len(complete) == 0:
        complete = norm
    # duplicate donors would crowd out distinct neighbours
    complete = np.unique(complete, axis=0)
    if len(complete) > max_donors:
        pick = np.sort(np.random.default_rng(seed).choice(len(complete), max_donors, replace=False))
        complete = complete[pick]
    return Preprocessor(params, np.ascontiguousarray(complete), k)


# ------------------------------------------------------------ (d) windowing


@dataclass(frozen=True)
class WindowedSample:
    inputs: np.ndarray
    label: float
    origin: tuple[str, int, int]


@dataclass(frozen=True)
class WindowConfig:
    feature_set: FeatureSet
    window_length: int = 64
    horizon: int = 1
    task: str = "handover"
    step: int = 1

    def __post_init__(self):
        if self.task not in TASKS:
            raise InvalidConfig(f"task must be one of {TASKS}")
        if self.window_length < 1 or self.horizon < 1 or self.step < 1:
            raise InvalidConfig("window_length, horizon and step must be positive")


@dataclass
class SupervisedDataset:
    inputs: np.ndarray  # (n, T, F)
    labels: np.ndarray  # (n,)
    network_ids: np.ndarray
    end_timestamps: np.ndarray
    drive_ids: list[str]
    task: str
    feature_set: FeatureSet
    window_length: int
    horizon: int
    normalization: NormalizationParams | None = field(default=None)

    def __len__(self) -> int:
        return len(self.labels)

    def __getitem__(self, i: int) -> WindowedSample:
        return WindowedSample(
            self.inputs[i], float(self.labels[i]), (self.drive_ids[i], int(self.network_ids[i]), int(self.end_timestamps[i]))
        )

    def subset(self, idx) -> "SupervisedDataset":
        idx = np.asarray(idx, dtype=np.int64)
        return SupervisedDataset(
            self.inputs[idx],
            self.labels[idx],
            self.network_ids[idx],
            self.end_timestamps[idx],
            [self.drive_ids[i] for i in idx],
            self.task,
            self.feature_set,
            self.window_length,
            self.horizon,
            self.normalization,
        )

    def drop_missing_labels(self) -> "SupervisedDataset":
        ok = ~np.isnan(self.labels)
        return self if ok.all() else self.subset(np.flatnonzero(ok))

    @staticmethod
    def concat(parts: Sequence["SupervisedDataset"]) -> "SupervisedDataset":
        if not parts:
            raise InsufficientData("nothing to concatenate")
        p0 = parts[0]
        return SupervisedDataset(
            np.concatenate([p.inputs for p in parts]),
            np.concatenate([p.labels for p in parts]),
            np.concatenate([p.network_ids for p in parts]),
            np.concatenate([p.end_timestamps for p in parts]),
            [d for p in parts for d in p.drive_ids],
            p0.task,
            p0.feature_set,
            p0.window_length,
            p0.horizon,
            p0.normalization,
        )

    def save(self, path: str | os.PathLike) -> None:
        uniq = sorted(set(self.drive_ids))
        header = {
            "kind": "supervised_dataset",
            "task": self.task,
            "feature_set": {"kind": self.feature_set.kind, "names": list(self.feature_set.names)},
            "window_length": self.window_length,
            "horizon": self.horizon,
            "drive_ids": uniq,
            "normalization": self.normalization.to_json() if self.normalization else None,
        }
        pos = {d: i for i, d in enumerate(uniq)}
        write_container(
            path,
            header,
            {
                "inputs": self.inputs,
                "labels": self.labels,
                "network_ids": self.network_ids,
                "end_timestamps": self.end_timestamps,
                "drive_index": np.array([pos[d] for d in self.drive_ids], dtype=np.int64),
            },
        )

    @classmethod
    def load(cls, path: str | os.PathLike) -> "SupervisedDataset":
        h, a = read_container(path)
        fs = FeatureSet(tuple(h["feature_set"]["names"]), h["feature_set"]["kind"])
        norm = NormalizationParams.from_json(h["normalization"]) if h["normalization"] else None
        return cls(
            a["inputs"],
            a["labels"],
            a["network_ids"],
            a["end_timestamps"],
            [h["drive_ids"][i] for i in a["drive_index"]],
            h["task"],
            fs,
            h["window_length"],
            h["horizon"],
            norm,
        )


def trace_labels(trace: NetworkTrace, task: str) -> np.ndarray:
    if task == "handover":
        return handover_indicator(trace).astype(np.float64)
    return np.asarray(trace[LABEL_COLUMN[task]], dtype=np.float64)


def make_windows(
    trace: NetworkTrace,
    config: WindowConfig,
    matrix: np.ndarray | None = None,
    drive_id: str = "",
) -> SupervisedDataset:
    """One sample per window end ``e`` with label taken ``horizon`` rows later.

    ``matrix`` is the per-row feature matrix to cut windows from, with columns
    in ``config.feature_set`` order; by default the raw trace columns.
    With step 1 the sample count is ``duration - T - H + 1``.
    """
    n = len(trace)
    T, H = config.window_length, config.horizon
    if n < T + H:
        raise TraceTooShort(f"trace of {n} rows cannot hold window {T} + horizon {H}")
    if matrix is None:
        matrix = trace.matrix(config.feature_set.names)
    matrix = np.asarray(matrix, dtype=np.float64)
    if matrix.shape != (n, len(config.feature_set)):
        raise InvalidConfig(f"feature matrix shape {matrix.shape} does not match trace/feature set")
    ends = np.arange(T - 1, n - H, config.step)
    views = np.lib.stride_tricks.sliding_window_view(matrix, T, axis=0)  # (n-T+1, F, T)
    inputs = np.ascontiguousarray(views[ends - (T - 1)].transpose(0, 2, 1))
    labels = trace_labels(trace, config.task)[ends + H]
    return SupervisedDataset(
        inputs,
        labels,
        np.full(len(ends), trace.network_id, dtype=np.int64),
        trace.timestamps[ends].astype(np.int64),
        [drive_id] * len(ends),
        config.task,
        config.feature_set,
        T,
        H,
    )


# ------------------------------------------------------------ (e) balancing


def balance_undersample(dataset: SupervisedDataset, seed: int) -> SupervisedDataset:
    """Keep every minority-class sample, draw as many majority samples without replacement.

    For handover data the positives are the minority.  Order of the kept
    samples follows the input.
    """
    if dataset.task != "handover":
        raise WrongTask("balancing applies to the handover task only")
    pos = np.flatnonzero(dataset.labels == 1)
    neg = np.flatnonzero(dataset.labels == 0)
    if len(pos) == 0:
        raise NoPositives("no positive samples to balance against")
    minority, majority = (pos, neg) if len(pos) <= len(neg) else (neg, pos)
    rng = np.random.default_rng(seed)
    chosen = rng.choice(majority, size=len(minority), replace=False)
    return dataset.subset(np.sort(np.concatenate([minority, chosen])))
