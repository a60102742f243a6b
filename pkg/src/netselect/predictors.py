"""Task predictors (handover, loss, latency) and unified multi-network training.

One parameter set is shared by every network.  During training each
network keeps its own instance of the model; the instances compute
gradients on their own network's windows, the gradients are averaged and a
single update is applied, so the instances never diverge.
"""
from __future__ import annotations

import csv
import math
import os
from dataclasses import asdict, dataclass, field, replace
from typing import Sequence

import numpy as np

from . import neural_core as nc
from .container import read_container, write_container
from .errors import (
    DivergedTraining,
    EmptyCorpus,
    InvalidConfig,
    IoFailure,
    MissingFeature,
    NonFiniteGradient,
    ShapeMismatch,
)
from .preprocess import (
    CANDIDATE_FEATURES,
    LABEL_COLUMN,
    PREDEFINED,
    TASKS,
    FeatureSet,
    NormalizationParams,
    Preprocessor,
    SupervisedDataset,
    WindowConfig,
    balance_undersample,
    denormalize_labels,
    fit_preprocessor,
    make_windows,
    normalize_labels,
)
from .trace_model import DriveTrace, NetworkTrace

TASK_LOSS = {"handover": "bce", "loss": "mse", "latency": "mae"}
TASK_ALIASES = {"hand": "handover", "handover": "handover", "loss": "loss", "latency": "latency", "lat": "latency"}
FORMAT_VERSION = 1


@dataclass(frozen=True)
class PredictorConfig:
    """Everything that determines a trained predictor besides data and seed.

    ``sync`` selects how often per-network gradients are averaged:
    ``"batch"`` applies one shared update per mini-batch step, ``"epoch"``
    accumulates each instance's gradient over a whole epoch and applies one
    update per epoch.
    """

    task: str = "handover"
    feature_set: str = "f9"
    window_length: int = 64
    horizon: int = 1
    d_thresh: float = 0.7
    batch_size: int = 512
    learning_rate: float = 0.001
    max_epochs: int = 50
    patience: int = 10
    conv_channels: tuple[int, ...] = (64, 64, 64, 128)
    lstm_hidden: int = 128
    lstm_layers: int = 2
    fc_hidden: tuple[int, ...] = (64, 32)
    padding: str = "valid"
    optimizer: str = "adam"
    sync: str = "batch"
    sample_stride: int = 1
    balance: bool = True
    knn_k: int = 2
    max_donors: int = 20000

    def __post_init__(self):
        object.__setattr__(self, "task", TASK_ALIASES.get(self.task, self.task))
        object.__setattr__(self, "conv_channels", tuple(int(c) for c in self.conv_channels))
        object.__setattr__(self, "fc_hidden", tuple(int(c) for c in self.fc_hidden))
        self.validate()

    def validate(self) -> None:
        if self.task not in TASKS:
            raise InvalidConfig(f"task must be one of {TASKS}")
        if self.feature_set not in PREDEFINED:
            raise InvalidConfig(f"feature_set must be one of {list(PREDEFINED)}")
        if self.task == "loss" and self.feature_set != "f8":
            raise InvalidConfig("the loss predictor is defined on the 8-feature set only")
        if not 0.0 <= self.d_thresh <= 1.0:
            raise InvalidConfig("d_thresh must lie in [0, 1]")
        for name in ("window_length", "horizon", "batch_size", "max_epochs", "sample_stride", "knn_k", "max_donors"):
            if getattr(self, name) < 1:
                raise InvalidConfig(f"{name} must be positive")
        if self.patience < 0 or self.learning_rate <= 0:
            raise InvalidConfig("patience must be >= 0 and learning_rate > 0")
        if self.sync not in ("batch", "epoch"):
            raise InvalidConfig("sync must be 'batch' or 'epoch'")
        self.arch()  # surfaces an impossible window/padding combination early

    @property
    def features(self) -> FeatureSet:
        return FeatureSet.predefined(self.feature_set)

    @property
    def loss_kind(self) -> str:
        return TASK_LOSS[self.task]

    def arch(self) -> nc.ArchConfig:
        arch = nc.ArchConfig(
            num_features=len(self.features),
            conv_channels=self.conv_channels,
            lstm_hidden=self.lstm_hidden,
            lstm_layers=self.lstm_layers,
            fc_hidden=self.fc_hidden,
            padding=self.padding,
            final_activation="sigmoid" if self.task == "handover" else "identity",
        )
        if arch.output_length(self.window_length) < 1:
            raise InvalidConfig(
                f"window {self.window_length} is too short for {len(self.conv_channels)} "
                f"{self.padding}-padded convolutions"
            )
        return arch

    def to_json(self) -> dict:
        d = asdict(self)
        d["conv_channels"] = list(self.conv_channels)
        d["fc_hidden"] = list(self.fc_hidden)
        return d

    @classmethod
    def from_json(cls, d: dict) -> "PredictorConfig":
        return cls(**d)


@dataclass
class TrainedPredictor:
    config: PredictorConfig
    params: nc.ModelParams
    preprocessor: Preprocessor
    training_log: list[dict] = field(default_factory=list)

    def __post_init__(self):
        arch = self.config.arch()
        if arch != self.params.arch:
            raise ShapeMismatch("parameter architecture does not match the predictor config")

    @property
    def normalization(self) -> NormalizationParams:
        return self.preprocessor.params

    @property
    def feature_index(self) -> list[int]:
        return [CANDIDATE_FEATURES.index(n) for n in self.config.features.names]

    def prepare(self, trace: NetworkTrace) -> np.ndarray:
        """Normalized, imputed model-input rows for a whole network trace."""
        return self.preprocessor.transform(trace)[:, self.feature_index]

    def prepare_window(self, window: np.ndarray) -> np.ndarray:
        """Raw ``(T, len(CANDIDATE_FEATURES))`` telemetry rows to a model-input window."""
        window = np.asarray(window, dtype=np.float64)
        if window.shape != (self.config.window_length, len(CANDIDATE_FEATURES)):
            raise ShapeMismatch(
                f"window shape {window.shape}, expected ({self.config.window_length}, {len(CANDIDATE_FEATURES)})"
            )
        return self.preprocessor.transform_matrix(window)[:, self.feature_index]

    def save(self, path: str | os.PathLike) -> None:
        header = {
            "kind": "trained_predictor",
            "format_version": FORMAT_VERSION,
            "config": self.config.to_json(),
            "arch": self.params.arch.to_json(),
            "normalization": self.preprocessor.params.to_json(),
            "knn_k": self.preprocessor.k,
            "training_log": self.training_log,
            "param_names": list(self.params.tensors),
        }
        arrays = {f"param/{n}": t for n, t in self.params.tensors.items()}
        arrays["donors"] = self.preprocessor.donors
        write_container(path, header, arrays)

    @classmethod
    def load(cls, path: str | os.PathLike) -> "TrainedPredictor":
        h, a = read_container(path)
        if h.get("kind") != "trained_predictor":
            raise IoFailure(f"{path}: not a trained predictor")
        config = PredictorConfig.from_json(h["config"])
        arch = nc.ArchConfig.from_json(h["arch"])
        params = nc.ModelParams(arch, {n: a[f"param/{n}"] for n in h["param_names"]})
        pre = Preprocessor(NormalizationParams.from_json(h["normalization"]), a["donors"], h["knn_k"])
        return cls(config, params, pre, h["training_log"])

    def write_log_csv(self, path: str | os.PathLike) -> None:
        write_training_log(self.training_log, path)


def write_training_log(log: Sequence[dict], path: str | os.PathLike) -> None:
    try:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["epoch", "train_loss", "val_loss", "val_metric"])
            for rec in log:
                w.writerow([rec["epoch"], repr(rec["train_loss"]), repr(rec["val_loss"]), repr(rec["val_metric"])])
    except OSError as exc:
        raise IoFailure(str(exc)) from exc


# ------------------------------------------------------------------ training


def _exact_mean(values: Sequence[float]) -> float:
    """Order-free mean that returns ``v`` exactly when all values equal ``v``."""
    v = np.sort(np.asarray(values, dtype=np.float64))
    lo = v[0]
    return float(lo + np.sum(v - lo) / len(v))


def _network_ids(corpus: Sequence[DriveTrace]) -> list[int]:
    ids = corpus[0].network_ids
    for d in corpus[1:]:
        if d.network_ids != ids:
            raise InvalidConfig(f"drive {d.drive_id} has networks {d.network_ids}, expected {ids}")
    return ids


def build_network_datasets(
    drives: Sequence[DriveTrace],
    config: PredictorConfig,
    pre: Preprocessor,
    network_ids: Sequence[int],
) -> list[SupervisedDataset | None]:
    """One windowed dataset per network position, pooled over ``drives``.

    Regression labels are min-max normalized with the preprocessor's label
    range.  Samples whose label is missing are dropped.
    """
    feats = config.features
    idx = [CANDIDATE_FEATURES.index(n) for n in feats.names]
    wcfg = WindowConfig(feats, config.window_length, config.horizon, config.task, config.sample_stride)
    out: list[SupervisedDataset | None] = []
    for pos in range(len(network_ids)):
        parts = []
        for d in drives:
            net = d.networks[pos]
            if len(net) < config.window_length + config.horizon:
                continue
            ds = make_windows(net, wcfg, pre.transform(net)[:, idx], drive_id=d.drive_id)
            parts.append(ds.drop_missing_labels())
        parts = [p for p in parts if len(p)]
        if not parts:
            out.append(None)
            continue
        ds = SupervisedDataset.concat(parts)
        ds.normalization = pre.params.select(feats.names)
        if config.task != "handover":
            ds.labels = normalize_labels(ds.labels, pre.params)
        out.append(ds)
    return out


def split_drives(corpus: Sequence[DriveTrace], val_fraction: float, seed: int):
    """Seeded split by whole drives; returns ``(train, validation)``."""
    if not 0.0 <= val_fraction < 1.0:
        raise InvalidConfig("val_fraction must lie in [0, 1)")
    n_val = int(round(val_fraction * len(corpus)))
    if len(corpus) - n_val < 1:
        n_val = len(corpus) - 1
    order = np.random.default_rng(seed).permutation(len(corpus))
    val_idx = set(order[:n_val].tolist())
    train = [d for i, d in enumerate(corpus) if i not in val_idx]
    val = [d for i, d in enumerate(corpus) if i in val_idx]
    return train, val


def _val_metric(config: PredictorConfig, pred: np.ndarray, labels: np.ndarray, pre: Preprocessor) -> float:
    from .metrics_report import prediction_ratio, true_accuracy

    if config.task == "handover":
        return true_accuracy(pred, labels, config.d_thresh)
    real = denormalize_labels(labels, pre.params)
    est = clamp_scalar(denormalize_labels(pred, pre.params), config.task)
    try:
        return prediction_ratio(est, real, label_range=pre.params.y_max - pre.params.y_min).ratio
    except Exception:
        return math.nan


def train_unified(
    corpus: Sequence[DriveTrace],
    config: PredictorConfig,
    val_fraction: float = 0.1,
    seed: int = 0,
    progress=None,
) -> TrainedPredictor:
    """Train one shared model across every network of ``corpus``.

    All instances start from the same seeded initialization.  For an epoch
    each instance draws its own batches (the batch order is seeded by
    ``(seed, epoch)`` only, so identical datasets see identical batches) and
    computes gradients on its network's windows; gradients are averaged with
    :func:`neural_core.average_gradients` and applied once to the shared
    parameters.  Training stops early when validation loss has not improved
    for ``patience`` epochs and the best parameters are returned.
    """
    if not corpus:
        raise EmptyCorpus("no drives to train on")
    net_ids = _network_ids(corpus)
    train_drives, val_drives = split_drives(corpus, val_fraction, seed)
    label_col = LABEL_COLUMN.get(config.task)
    pre = fit_preprocessor(train_drives, label_col, config.knn_k, config.max_donors, seed)

    train_sets = build_network_datasets(train_drives, config, pre, net_ids)
    val_sets = build_network_datasets(val_drives, config, pre, net_ids) if val_drives else [None] * len(net_ids)
    if config.task == "handover" and config.balance:
        # a network without both classes keeps its natural windows
        train_sets = [_maybe_balance(d, seed) for d in train_sets]
        val_sets = [_maybe_balance(d, seed + 1) for d in val_sets]
    train_sets = [d for d in train_sets if d is not None and len(d)]
    val_sets = [d for d in val_sets if d is not None and len(d)]
    if not train_sets:
        raise EmptyCorpus("no training windows in corpus")

    arch = config.arch()
    params = nc.init_params(arch, seed)
    opt = nc.OptimizerState(config.learning_rate, config.optimizer)
    kind = config.loss_kind
    B = config.batch_size
    n_max = max(len(d) for d in train_sets)
    steps = math.ceil(n_max / B)

    best, best_loss, wait = params, math.inf, 0
    log: list[dict] = []
    for epoch in range(1, config.max_epochs + 1):
        perms = []
        for d in train_sets:
            rng = np.random.default_rng([seed, epoch])
            perm = rng.permutation(len(d))
            reps = math.ceil(steps * B / len(d))
            perms.append(np.tile(perm, reps)[: steps * B] if reps > 1 else perm)
        batch_losses = []
        acc: list[dict[str, np.ndarray]] | None = None
        try:
            for s in range(steps):
                grad_sets = []
                step_losses = []
                for d, perm in zip(train_sets, perms):
                    idx = perm[s * B : (s + 1) * B]
                    if len(idx) == 0:
                        idx = perm[:B]
                    loss, g = nc.loss_and_grad(params, d.inputs[idx], d.labels[idx], kind)
                    grad_sets.append(g)
                    step_losses.append(loss)
                batch_losses.append(_exact_mean(step_losses))
                if config.sync == "batch":
                    new, opt = nc.optimizer_step(params.tensors, nc.average_gradients(grad_sets), opt)
                    params = nc.ModelParams(arch, new)
                else:
                    if acc is None:
                        acc = [{n: g.copy() for n, g in gs.items()} for gs in grad_sets]
                    else:
                        for a_i, g_i in zip(acc, grad_sets):
                            for n in a_i:
                                a_i[n] += g_i[n]
            if config.sync == "epoch":
                mean_sets = [{n: v / steps for n, v in a_i.items()} for a_i in acc]
                new, opt = nc.optimizer_step(params.tensors, nc.average_gradients(mean_sets), opt)
                params = nc.ModelParams(arch, new)
        except NonFiniteGradient as exc:
            raise DivergedTraining(f"epoch {epoch}: {exc}") from exc
        train_loss = _exact_mean(batch_losses)
        if not math.isfinite(train_loss) or not all(np.all(np.isfinite(t)) for t in params.tensors.values()):
            raise DivergedTraining(f"epoch {epoch}: non-finite loss or parameters")

        eval_sets = val_sets or train_sets
        losses, metrics = [], []
        for d in eval_sets:
            pred = nc.predict(params, d.inputs)
            losses.append(nc.loss_value(pred, d.labels, kind))
            metrics.append(_val_metric(config, pred, d.labels, pre))
        val_loss = _exact_mean(losses)
        val_metric = _exact_mean(metrics) if all(math.isfinite(m) for m in metrics) else math.nan
        if not math.isfinite(val_loss):
            raise DivergedTraining(f"epoch {epoch}: validation loss is not finite")
        rec = {"epoch": epoch, "train_loss": train_loss, "val_loss": val_loss, "val_metric": val_metric}
        log.append(rec)
        if progress is not None:
            progress(rec)
        if val_loss < best_loss:
            best, best_loss, wait = params, val_loss, 0
        else:
            wait += 1
            if wait >= config.patience:
                break
    return TrainedPredictor(config, best, pre, log)


def _maybe_balance(d: SupervisedDataset | None, seed: int) -> SupervisedDataset | None:
    if d is None or not len(d) or not (d.labels == 1).any() or not (d.labels == 0).any():
        return d
    return balance_undersample(d, seed)


# ------------------------------------------------------------------ inference


def clamp_scalar(values: np.ndarray, task: str) -> np.ndarray:
    values = np.maximum(np.asarray(values, dtype=np.float64), 0.0)
    return np.minimum(values, 1.0) if task == "loss" else values


def _as_batch(model: TrainedPredictor, windows: np.ndarray) -> np.ndarray:
    X = np.asarray(windows, dtype=np.float64)
    if X.ndim == 2:
        X = X[None]
    expect = (model.config.window_length, len(model.config.features))
    if X.ndim != 3 or X.shape[1:] != expect:
        raise ShapeMismatch(f"windows of shape {X.shape[1:]} given, model expects {expect}")
    return X


def predict_handover_batch(model: TrainedPredictor, windows: np.ndarray) -> np.ndarray:
    """Handover probabilities for prepared ``(n, T, F)`` model-input windows."""
    if model.config.task != "handover":
        raise InvalidConfig("not a handover predictor")
    return nc.predict(model.params, _as_batch(model, windows))


def predict_handover(model: TrainedPredictor, window: np.ndarray) -> float:
    """Probability of a handover ``horizon`` seconds after a single prepared window."""
    return float(predict_handover_batch(model, window)[0])


def predict_scalar_batch(model: TrainedPredictor, windows: np.ndarray) -> np.ndarray:
    if model.config.task not in ("loss", "latency"):
        raise InvalidConfig("not a scalar predictor")
    raw = nc.predict(model.params, _as_batch(model, windows))
    return clamp_scalar(denormalize_labels(raw, model.normalization), model.config.task)


def predict_scalar(model: TrainedPredictor, window: np.ndarray) -> float:
    """De-normalized loss rate or latency (ms) for a single prepared window."""
    return float(predict_scalar_batch(model, window)[0])


def classify_handover(probability: float, d_thresh: float = 0.7) -> int:
    if not 0.0 <= probability <= 1.0:
        raise InvalidConfig(f"probability {probability} outside [0, 1]")
    return int(probability >= d_thresh)


def baseline_rule_predict(
    window,
    names: Sequence[str] = CANDIDATE_FEATURES,
    rsrp_thresh: float = -110.0,
    rsrq_thresh: float = -15.0,
) -> int:
    """Classic signal-threshold handover rule on the newest row of ``window``.

    ``window`` is either a ``(T, len(names))`` array of raw values or a
    mapping from column name to a sequence of values.
    """
    if hasattr(window, "keys"):
        cols = window
        latest = {}
        for c in ("rsrp", "rsrq"):
            if c not in cols:
                raise MissingFeature(c)
            latest[c] = float(np.asarray(cols[c], dtype=np.float64)[-1])
    else:
        arr = np.asarray(window, dtype=np.float64)
        latest = {}
        for c in ("rsrp", "rsrq"):
            if c not in names:
                raise MissingFeature(c)
            latest[c] = float(arr[-1, list(names).index(c)])
    return int(latest["rsrp"] < rsrp_thresh or latest["rsrq"] < rsrq_thresh)


def window_predictions(model: TrainedPredictor, drives: Sequence[DriveTrace], natural: bool = True):
    """Model outputs and labels over every window of ``drives``.

    Returns ``(outputs, labels)``; handover outputs are probabilities,
    scalar outputs are de-normalized and labels are in physical units.
    With ``natural=False`` handover windows are balanced first.
    """
    cfg = model.config
    net_ids = _network_ids(drives)
    sets = build_network_datasets(drives, cfg, model.preprocessor, net_ids)
    outs, labels = [], []
    for d in sets:
        if d is None:
            continue
        if cfg.task == "handover":
            if not natural:
                d = _maybe_balance(d, 0)
            outs.append(nc.predict(model.params, d.inputs))
            labels.append(d.labels)
        else:
            raw = nc.predict(model.params, d.inputs)
            outs.append(clamp_scalar(denormalize_labels(raw, model.normalization), cfg.task))
            labels.append(denormalize_labels(d.labels, model.normalization))
    if not outs:
        raise EmptyCorpus("no windows to evaluate")
    return np.concatenate(outs), np.concatenate(labels)
