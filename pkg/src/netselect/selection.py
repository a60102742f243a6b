"""Per-second network choice (ANS) and the FEC split baseline."""
from __future__ import annotations

import csv
import os
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .errors import EmptyForecastList, IndivisibleSplit, IoFailure, UnknownPacketId

SOURCE_PACKETS = 24
TOTAL_PACKETS = 36
REASONS = ("min_latency_ok", "skipped_k_networks", "random_fallback")


@dataclass(frozen=True)
class NetworkForecast:
    network_id: int
    predicted_latency: float
    handover_probability: float

    def __post_init__(self):
        if not self.predicted_latency >= 0:
            raise ValueError(f"predicted latency {self.predicted_latency} must be >= 0")
        if not 0.0 <= self.handover_probability <= 1.0:
            raise ValueError(f"handover probability {self.handover_probability} outside [0, 1]")


@dataclass(frozen=True)
class SelectionDecision:
    chosen_network: int
    reason: str
    forecasts: tuple[NetworkForecast, ...]
    skipped: int = 0

    def __post_init__(self):
        if self.reason not in REASONS:
            raise ValueError(f"unknown reason {self.reason!r}")
        if self.chosen_network not in {f.network_id for f in self.forecasts}:
            raise ValueError("chosen network is not among the forecasts")


def ans_select(
    forecasts: Sequence[NetworkForecast],
    handover_threshold: float = 0.7,
    rng: np.random.Generator | None = None,
) -> SelectionDecision:
    """Lowest predicted latency among networks whose handover risk is below threshold.

    Networks are ranked by ``(predicted_latency, network_id)``.  When every
    network is at or above the threshold one is drawn uniformly with ``rng``
    (a fresh generator seeded with 0 if none is given).
    """
    if not forecasts:
        raise EmptyForecastList("no forecasts to choose from")
    ranked = sorted(forecasts, key=lambda f: (f.predicted_latency, f.network_id))
    for k, f in enumerate(ranked):
        if f.handover_probability < handover_threshold:
            reason = "min_latency_ok" if k == 0 else "skipped_k_networks"
            return SelectionDecision(f.network_id, reason, tuple(forecasts), k)
    rng = rng if rng is not None else np.random.default_rng(0)
    pick = ranked[int(rng.integers(len(ranked)))]
    return SelectionDecision(pick.network_id, "random_fallback", tuple(forecasts), len(ranked))


def brute_force_select(forecasts: Sequence[NetworkForecast], handover_threshold: float) -> int | None:
    """Reference choice: filter by threshold, then latency argmin (lowest id on ties)."""
    ok = [f for f in forecasts if f.handover_probability < handover_threshold]
    if not ok:
        return None
    best = min(f.predicted_latency for f in ok)
    return min(f.network_id for f in ok if f.predicted_latency == best)


def write_decision_log(decisions: Iterable[tuple[int, SelectionDecision]], path: str | os.PathLike) -> None:
    """CSV ``timestamp,chosen_network,reason,latency_1..N,prob_1..N``; forecasts listed by network id."""
    decisions = list(decisions)
    n = max((len(d.forecasts) for _, d in decisions), default=0)
    header = ["timestamp", "chosen_network", "reason"]
    header += [f"latency_{i}" for i in range(1, n + 1)] + [f"prob_{i}" for i in range(1, n + 1)]
    try:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for ts, d in decisions:
                fc = sorted(d.forecasts, key=lambda f: f.network_id)
                w.writerow(
                    [ts, d.chosen_network, d.reason]
                    + [repr(float(f.predicted_latency)) for f in fc]
                    + [repr(float(f.handover_probability)) for f in fc]
                )
    except OSError as exc:
        raise IoFailure(str(exc)) from exc


@dataclass(frozen=True)
class FecFrame:
    """A source frame expanded to ``total_packet_count`` coded packets.

    ``assignment[p]`` is the network position (0-based) carrying packet ``p``.
    """

    frame_id: int
    assignment: tuple[int, ...]
    source_packet_count: int = SOURCE_PACKETS
    total_packet_count: int = TOTAL_PACKETS
    network_count: int = 3

    def __post_init__(self):
        if len(self.assignment) != self.total_packet_count:
            raise ValueError("assignment must cover every coded packet")

    def packets_for(self, network: int) -> list[int]:
        return [p for p, n in enumerate(self.assignment) if n == network]

    @property
    def shares(self) -> tuple[int, ...]:
        return tuple(len(self.packets_for(n)) for n in range(self.network_count))


def baseline_assign(frame_id: int, network_count: int = 3) -> FecFrame:
    """Round-robin the 36 coded packets: packet ``p`` goes to network ``p mod N``."""
    if network_count < 1 or TOTAL_PACKETS % network_count:
        raise IndivisibleSplit(f"{TOTAL_PACKETS} packets cannot be split evenly over {network_count} networks")
    return FecFrame(frame_id, tuple(p % network_count for p in range(TOTAL_PACKETS)), network_count=network_count)


def fec_reconstruct(frame: FecFrame, delivered: Iterable[int]) -> bool:
    """True iff at least ``source_packet_count`` distinct coded packets arrived."""
    got = set(delivered)
    bad = [p for p in got if not (isinstance(p, (int, np.integer)) and 0 <= p < frame.total_packet_count)]
    if bad:
        raise UnknownPacketId(f"packets {sorted(map(str, bad))} are not part of frame {frame.frame_id}")
    return len(got) >= frame.source_packet_count
