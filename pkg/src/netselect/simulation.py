"""Packet-level replay of ANS and the FEC baseline over drive traces.

Randomness uses common random numbers: for every (network, second, packet
slot) one uniform draw is fixed by the drive seed, and a packet sent in that
slot is lost iff its draw falls below the network-second loss rate.  Both
algorithms read the same draws, so their outcomes are paired.
"""
from __future__ import annotations

import csv
import os
from dataclasses import dataclass, field
from typing import Protocol, Sequence

import numpy as np

from .errors import IoFailure, ModelFeatureMismatch, TraceTooShort
from .predictors import TrainedPredictor, predict_handover_batch, predict_scalar_batch
from .preprocess import CANDIDATE_FEATURES
from .selection import (
    SOURCE_PACKETS,
    TOTAL_PACKETS,
    NetworkForecast,
    SelectionDecision,
    ans_select,
    baseline_assign,
)
from .trace_model import DriveTrace, handover_indicator

ALGORITHMS = ("ANS", "Baseline")


@dataclass(frozen=True)
class VideoLoad:
    fps: int = 30
    packets_per_frame: int = SOURCE_PACKETS
    coded_packets_per_frame: int = TOTAL_PACKETS

    @property
    def packets_per_second(self) -> int:
        return self.fps * self.packets_per_frame


@dataclass(frozen=True)
class LinkSecondState:
    """Per-network, per-second link conditions read from a trace, shape ``(N, duration)``."""

    loss_probability: np.ndarray
    latency_ms: np.ndarray
    handover_flag: np.ndarray

    @classmethod
    def from_trace(cls, trace: DriveTrace) -> "LinkSecondState":
        loss = np.vstack([_carry_forward(n["packet_loss_rate"], 0.0) for n in trace.networks])
        lat = np.vstack([_carry_forward(n["latency"], 0.0) for n in trace.networks])
        ho = np.vstack([handover_indicator(n) for n in trace.networks])
        return cls(np.clip(loss, 0.0, 1.0), lat, ho)


def _carry_forward(x: np.ndarray, initial: float) -> np.ndarray:
    """Fill missing values with the last known one (``initial`` before any)."""
    x = np.asarray(x, dtype=np.float64)
    ok = ~np.isnan(x)
    if ok.all():
        return x.copy()
    idx = np.where(ok, np.arange(len(x)), -1)
    np.maximum.accumulate(idx, out=idx)
    return np.where(idx >= 0, x[np.maximum(idx, 0)], initial)


@dataclass
class SimOutcome:
    algorithm: str
    drive_id: str
    seconds: np.ndarray
    sent: np.ndarray
    lost: np.ndarray
    mean_latency_ms: np.ndarray
    chosen_network: np.ndarray
    decisions: list[SelectionDecision] = field(default_factory=list)

    @property
    def loss_rate(self) -> np.ndarray:
        return self.lost / self.sent

    @property
    def delivered(self) -> np.ndarray:
        return self.sent - self.lost

    def write_csv(self, path: str | os.PathLike) -> None:
        try:
            with open(path, "w", newline="") as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(["second", "algorithm", "sent", "lost", "mean_latency_ms", "chosen_network"])
                for i in range(len(self.seconds)):
                    lat = self.mean_latency_ms[i]
                    w.writerow(
                        [
                            int(self.seconds[i]),
                            self.algorithm,
                            int(self.sent[i]),
                            int(self.lost[i]),
                            "" if np.isnan(lat) else repr(float(lat)),
                            "" if self.chosen_network[i] < 0 else int(self.chosen_network[i]),
                        ]
                    )
        except OSError as exc:
            raise IoFailure(str(exc)) from exc


def read_outcome_csv(path: str | os.PathLike, drive_id: str) -> SimOutcome:
    """Inverse of :meth:`SimOutcome.write_csv` (decisions are not stored)."""
    try:
        with open(path, newline="") as fh:
            recs = list(csv.DictReader(fh))
    except OSError as exc:
        raise IoFailure(str(exc)) from exc
    if not recs:
        raise IoFailure(f"{path}: no rows")
    return SimOutcome(
        recs[0]["algorithm"],
        drive_id,
        np.array([int(r["second"]) for r in recs], dtype=np.int64),
        np.array([int(r["sent"]) for r in recs], dtype=np.int64),
        np.array([int(r["lost"]) for r in recs], dtype=np.int64),
        np.array([float(r["mean_latency_ms"]) if r["mean_latency_ms"] else np.nan for r in recs]),
        np.array([int(r["chosen_network"]) if r["chosen_network"] else -1 for r in recs], dtype=np.int64),
    )


# ------------------------------------------------------------------ forecasters


class Forecaster(Protocol):
    warmup: int

    def forecast(self, trace: DriveTrace, first: int) -> tuple[np.ndarray, np.ndarray]:
        """``(latency, handover_prob)`` arrays of shape ``(N, duration - first)``."""


@dataclass
class LearnedForecaster:
    """Trained handover and latency predictors applied to each network's trailing window.

    The forecast for second ``t`` uses the window ending ``horizon`` rows
    earlier, so nothing at or after ``t`` is read.
    """

    hand: TrainedPredictor
    latency: TrainedPredictor

    def __post_init__(self):
        if self.hand.config.task != "handover":
            raise ModelFeatureMismatch("hand model is not a handover predictor")
        if self.latency.config.task != "latency":
            raise ModelFeatureMismatch("latency model is not a latency predictor")
        for m in (self.hand, self.latency):
            if tuple(m.preprocessor.params.names) != CANDIDATE_FEATURES:
                raise ModelFeatureMismatch(f"model expects columns {m.preprocessor.params.names}")

    @property
    def warmup(self) -> int:
        return max(m.config.window_length + m.config.horizon - 1 for m in (self.hand, self.latency))

    def _outputs(self, model: TrainedPredictor, trace: DriveTrace, first: int, scalar: bool) -> np.ndarray:
        T, H = model.config.window_length, model.config.horizon
        out = []
        for net in trace.networks:
            rows = model.prepare(net)
            views = np.lib.stride_tricks.sliding_window_view(rows, T, axis=0)  # (n-T+1, F, T)
            ends = np.arange(first, len(net)) - H
            X = np.ascontiguousarray(views[ends - (T - 1)].transpose(0, 2, 1))
            out.append(predict_scalar_batch(model, X) if scalar else predict_handover_batch(model, X))
        return np.vstack(out)

    def forecast(self, trace: DriveTrace, first: int):
        return (
            self._outputs(self.latency, trace, first, scalar=True),
            self._outputs(self.hand, trace, first, scalar=False),
        )


@dataclass
class OracleForecaster:
    """Ground-truth lookahead: the true latency and handover flag of second ``t``."""

    window_length: int = 64

    @property
    def warmup(self) -> int:
        return self.window_length

    def forecast(self, trace: DriveTrace, first: int):
        state = LinkSecondState.from_trace(trace)
        return state.latency_ms[:, first:], state.handover_flag[:, first:].astype(np.float64)


# ------------------------------------------------------------------ simulation


def packet_uniforms(network_count: int, duration: int, slots: int, seed: int) -> np.ndarray:
    """Common random numbers, shape ``(network_count, duration, slots)``."""
    return np.random.default_rng([seed, 0]).random((network_count, duration, slots))


def _ans(trace, state, U, load, forecaster, first, seed, threshold) -> SimOutcome:
    lat_hat, prob_hat = forecaster.forecast(trace, first)
    ids = trace.network_ids
    rng = np.random.default_rng([seed, 1])
    n_sec = trace.duration_s - first
    pps = load.packets_per_second
    chosen = np.empty(n_sec, dtype=np.int64)
    decisions = []
    for s in range(n_sec):
        fc = [
            NetworkForecast(nid, float(lat_hat[k, s]), float(np.clip(prob_hat[k, s], 0.0, 1.0)))
            for k, nid in enumerate(ids)
        ]
        d = ans_select(fc, threshold, rng)
        decisions.append(d)
        chosen[s] = ids.index(d.chosen_network)
    t = np.arange(first, trace.duration_s)
    draws = U[chosen, t, :pps]
    lost = np.sum(draws < state.loss_probability[chosen, t][:, None], axis=1)
    sent = np.full(n_sec, pps, dtype=np.int64)
    lat = np.where(lost < sent, state.latency_ms[chosen, t], np.nan)
    return SimOutcome(
        "ANS",
        trace.drive_id,
        trace.networks[0].timestamps[first:].copy(),
        sent,
        lost.astype(np.int64),
        lat,
        np.asarray(ids)[chosen],
        decisions,
    )


def _baseline(trace, state, U, load, first) -> SimOutcome:
    N = len(trace.networks)
    frame = baseline_assign(0, N)
    share = frame.shares[0]
    n_sec = trace.duration_s - first
    t = np.arange(first, trace.duration_s)
    # per network: (seconds, frames, packets of that network's share)
    lost_pkts = np.stack(
        [
            U[k, t, : load.fps * share].reshape(n_sec, load.fps, share) < state.loss_probability[k, t][:, None, None]
            for k in range(N)
        ]
    )
    delivered_per_net = share - lost_pkts.sum(axis=3)  # (N, seconds, frames)
    delivered_frame = delivered_per_net.sum(axis=0)  # (seconds, frames)
    recovered = delivered_frame >= frame.source_packet_count
    lost = (~recovered).sum(axis=1) * load.packets_per_frame
    sent = np.full(n_sec, load.packets_per_second, dtype=np.int64)
    dsum = delivered_per_net.sum(axis=2)  # (N, seconds)
    tot = dsum.sum(axis=0)
    wlat = (dsum * state.latency_ms[:, t]).sum(axis=0)
    lat = np.where(tot > 0, wlat / np.maximum(tot, 1), np.nan)
    return SimOutcome(
        "Baseline",
        trace.drive_id,
        trace.networks[0].timestamps[first:].copy(),
        sent,
        lost.astype(np.int64),
        lat,
        np.full(n_sec, -1, dtype=np.int64),
    )


def simulate_drive(
    trace: DriveTrace,
    algorithm: str,
    forecaster: Forecaster | None = None,
    load: VideoLoad = VideoLoad(),
    seed: int = 0,
    handover_threshold: float = 0.7,
    window_length: int | None = None,
) -> SimOutcome:
    """Replay one drive with ``algorithm`` (``"ANS"`` or ``"Baseline"``).

    Seconds before the warm-up (the forecaster's window, or
    ``window_length`` if larger) are skipped for both algorithms so that
    outcomes stay paired.
    """
    algorithm = {"ans": "ANS", "baseline": "Baseline"}.get(algorithm.lower(), algorithm)
    if algorithm not in ALGORITHMS:
        raise ValueError(f"algorithm must be one of {ALGORITHMS}")
    first = max(window_length or 0, forecaster.warmup if forecaster is not None else 0)
    if algorithm == "ANS" and forecaster is None:
        raise ModelFeatureMismatch("ANS needs a forecaster")
    if trace.duration_s <= first + 1:
        raise TraceTooShort(f"drive of {trace.duration_s} s leaves no seconds after a {first} s warm-up")
    state = LinkSecondState.from_trace(trace)
    N = len(trace.networks)
    slots = max(load.packets_per_second, load.fps * (load.coded_packets_per_frame // max(N, 1)))
    U = packet_uniforms(N, trace.duration_s, slots, seed)
    if algorithm == "ANS":
        return _ans(trace, state, U, load, forecaster, first, seed, handover_threshold)
    return _baseline(trace, state, U, load, first)


def run_experiment(
    corpus: Sequence[DriveTrace],
    forecaster: Forecaster,
    load: VideoLoad = VideoLoad(),
    seeds: Sequence[int] | int = 0,
    handover_threshold: float = 0.7,
    window_length: int | None = None,
) -> list[tuple[SimOutcome, SimOutcome]]:
    """``(ANS, Baseline)`` outcome pairs, one per drive, on shared random draws."""
    if not corpus:
        raise ValueError("empty corpus")
    if isinstance(seeds, (int, np.integer)):
        seeds = [int(seeds) + i for i in range(len(corpus))]
    if len(seeds) != len(corpus):
        raise ValueError("one seed per drive is required")
    first = max(window_length or 0, forecaster.warmup)
    pairs = []
    for trace, s in zip(corpus, seeds):
        a = simulate_drive(trace, "ANS", forecaster, load, s, handover_threshold, first)
        b = simulate_drive(trace, "Baseline", forecaster, load, s, handover_threshold, first)
        pairs.append((a, b))
    return pairs
