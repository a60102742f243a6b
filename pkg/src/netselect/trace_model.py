"""Drive/telemetry data model and CSV trace files.

A drive is stored column-wise: every numeric telemetry column of a
:class:`NetworkTrace` is a float64 array where ``NaN`` marks an explicitly
missing value.  :meth:`NetworkTrace.row` exposes the same data as a
:class:`TelemetryRow` with ``None`` for missing cells.
"""
from __future__ import annotations

import csv
import math
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .errors import (
    IoFailure,
    MissingColumn,
    NetworkLengthMismatch,
    TimestampNotMonotone,
    TraceTooShort,
)

NUMERIC_COLUMNS = (
    "gps_longitude",
    "gps_latitude",
    "rsrp",
    "rsrq",
    "rssi",
    "modem_bandwidth",
    "normalized_bandwidth",
    "total_bitrate",
    "packet_loss_rate",
    "latency",
)
CSV_COLUMNS = (
    "timestamp",
    "network_id",
    "gps_longitude",
    "gps_latitude",
    "rsrp",
    "rsrq",
    "rssi",
    "modem_bandwidth",
    "normalized_bandwidth",
    "total_bitrate",
    "packet_loss_rate",
    "latency",
    "serving_cell_id",
)
OPTIONAL_COLUMNS = ("gps_longitude", "gps_latitude")


@dataclass(frozen=True)
class TelemetryRow:
    timestamp: int
    rsrp: float | None
    rsrq: float | None
    rssi: float | None
    modem_bandwidth: float | None
    normalized_bandwidth: float | None
    total_bitrate: float | None
    packet_loss_rate: float | None
    latency: float | None
    serving_cell_id: str | None
    gps_longitude: float | None = None
    gps_latitude: float | None = None


def _nan_equal(a: np.ndarray, b: np.ndarray) -> bool:
    return a.shape == b.shape and bool(np.array_equal(a, b, equal_nan=True))


@dataclass(eq=False)
class NetworkTrace:
    """One network's gapless 1 Hz telemetry series."""

    network_id: int
    timestamps: np.ndarray
    columns: dict[str, np.ndarray]
    serving_cell_id: list[str | None]

    def __post_init__(self):
        self.timestamps = np.asarray(self.timestamps, dtype=np.int64)
        n = len(self.timestamps)
        cols = {}
        for name in NUMERIC_COLUMNS:
            arr = np.asarray(self.columns.get(name, np.full(n, np.nan)), dtype=np.float64)
            if arr.shape != (n,):
                raise NetworkLengthMismatch(f"column {name} has shape {arr.shape}, expected ({n},)")
            arr.setflags(write=False)
            cols[name] = arr
        self.columns = cols
        self.timestamps.setflags(write=False)
        if len(self.serving_cell_id) != n:
            raise NetworkLengthMismatch("serving_cell_id length differs from timestamps")
        self.serving_cell_id = list(self.serving_cell_id)
        if n > 1 and np.any(np.diff(self.timestamps) <= 0):
            raise TimestampNotMonotone(f"network {self.network_id}: timestamps not strictly increasing")
        loss = cols["packet_loss_rate"]
        if np.any((loss < 0) | (loss > 1)):
            raise ValueError("packet_loss_rate outside [0, 1]")
        if np.any(cols["latency"] < 0):
            raise ValueError("negative latency")

    def __len__(self) -> int:
        return len(self.timestamps)

    def __getitem__(self, name: str) -> np.ndarray:
        if name == "timestamp":
            return self.timestamps.astype(np.float64)
        return self.columns[name]

    def __eq__(self, other) -> bool:
        if not isinstance(other, NetworkTrace):
            return NotImplemented
        return (
            self.network_id == other.network_id
            and _nan_equal(self.timestamps, other.timestamps)
            and all(_nan_equal(self.columns[c], other.columns[c]) for c in NUMERIC_COLUMNS)
            and self.serving_cell_id == other.serving_cell_id
        )

    def row(self, i: int) -> TelemetryRow:
        vals = {}
        for name in NUMERIC_COLUMNS:
            v = float(self.columns[name][i])
            vals[name] = None if math.isnan(v) else v
        return TelemetryRow(
            timestamp=int(self.timestamps[i]),
            serving_cell_id=self.serving_cell_id[i],
            **vals,
        )

    @property
    def rows(self) -> list[TelemetryRow]:
        return [self.row(i) for i in range(len(self))]

    def matrix(self, names: Sequence[str]) -> np.ndarray:
        """Stack the named columns into a (duration, len(names)) array."""
        return np.column_stack([self[n] for n in names]) if names else np.empty((len(self), 0))


@dataclass(eq=False)
class DriveTrace:
    drive_id: str
    networks: list[NetworkTrace] = field(default_factory=list)

    def __post_init__(self):
        if not self.networks:
            raise NetworkLengthMismatch("a drive needs at least one network")
        ref = self.networks[0].timestamps
        for net in self.networks[1:]:
            if not _nan_equal(net.timestamps, ref):
                raise NetworkLengthMismatch(
                    f"network {net.network_id} timestamps differ from network {self.networks[0].network_id}"
                )

    @property
    def duration_s(self) -> int:
        return len(self.networks[0])

    @property
    def network_ids(self) -> list[int]:
        return [n.network_id for n in self.networks]

    def __eq__(self, other) -> bool:
        if not isinstance(other, DriveTrace):
            return NotImplemented
        return (
            self.drive_id == other.drive_id
            and len(self.networks) == len(other.networks)
            and all(a == b for a, b in zip(self.networks, other.networks))
        )


def _parse_float(cell: str | None) -> float:
    if cell is None:
        return math.nan
    cell = cell.strip()
    if not cell:
        return math.nan
    try:
        return float(cell)
    except ValueError:
        return math.nan


def load_drive(path: str | os.PathLike, schema: Mapping[str, str] | None = None) -> DriveTrace:
    """Read a drive CSV.

    ``schema`` maps canonical column names to the names used in the file;
    unmapped columns are looked up under their canonical name.  Interior
    timestamp gaps are filled with all-missing rows; networks must share
    first and last timestamps.
    """
    schema = dict(schema or {})
    path = Path(path)
    try:
        fh = open(path, newline="")
    except OSError as exc:
        raise IoFailure(str(exc)) from exc
    with fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        lookup = {c: schema.get(c, c) for c in CSV_COLUMNS}
        for canon in ("timestamp", "network_id", "serving_cell_id") + tuple(
            c for c in NUMERIC_COLUMNS if c not in OPTIONAL_COLUMNS
        ):
            if lookup[canon] not in header:
                raise MissingColumn(f"column {lookup[canon]!r} (for {canon}) not in {path}")
        per_net: dict[int, list[dict]] = {}
        for rec in reader:
            try:
                ts = int(rec[lookup["timestamp"]])
                nid = int(rec[lookup["network_id"]])
            except (TypeError, ValueError) as exc:
                raise TimestampNotMonotone(f"unparseable timestamp/network_id in {path}: {rec}") from exc
            per_net.setdefault(nid, []).append((ts, rec))

    networks = []
    spans = {}
    for nid in sorted(per_net):
        recs = per_net[nid]
        ts = [t for t, _ in recs]
        if any(b <= a for a, b in zip(ts, ts[1:])):
            raise TimestampNotMonotone(f"network {nid}: timestamps not strictly increasing")
        spans[nid] = (ts[0], ts[-1])
    if len(set(spans.values())) > 1:
        raise NetworkLengthMismatch(f"networks cover different time spans: {spans}")

    for nid in sorted(per_net):
        start, stop = spans[nid]
        n = stop - start + 1
        grid = np.arange(start, stop + 1, dtype=np.int64)
        cols = {c: np.full(n, np.nan) for c in NUMERIC_COLUMNS}
        cells: list[str | None] = [None] * n
        for ts, rec in per_net[nid]:
            i = ts - start
            for c in NUMERIC_COLUMNS:
                cols[c][i] = _parse_float(rec.get(lookup[c]))
            cell = (rec.get(lookup["serving_cell_id"]) or "").strip()
            cells[i] = cell or None
        networks.append(NetworkTrace(nid, grid, cols, cells))
    return DriveTrace(drive_id=path.stem, networks=networks)


def _fmt(v: float) -> str:
    return "" if math.isnan(v) else repr(float(v))


def save_drive(trace: DriveTrace, path: str | os.PathLike) -> None:
    """Write ``trace`` as CSV; floats use ``repr`` so reloading is bit-exact."""
    try:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(CSV_COLUMNS)
            for i in range(trace.duration_s):
                for net in trace.networks:
                    w.writerow(
                        [int(net.timestamps[i]), net.network_id]
                        + [_fmt(net.columns[c][i]) for c in CSV_COLUMNS[2:-1]]
                        + [net.serving_cell_id[i] or ""]
                    )
    except OSError as exc:
        raise IoFailure(str(exc)) from exc


def handover_indicator(trace: NetworkTrace) -> np.ndarray:
    """0/1 array, 1 at index t iff the serving cell differs from the last known one.

    Rows with a missing cell id never carry an event; the comparison skips
    over them to the most recent known id.
    """
    out = np.zeros(len(trace), dtype=np.int64)
    last = None
    for i, cell in enumerate(trace.serving_cell_id):
        if cell is None:
            continue
        if last is not None and cell != last:
            out[i] = 1
        last = cell
    return out


def handover_events(trace: NetworkTrace) -> list[int]:
    if len(trace) < 2:
        raise TraceTooShort("handover detection needs at least two rows")
    ind = handover_indicator(trace)
    return [int(t) for t in trace.timestamps[ind == 1]]


def handover_rate(trace: NetworkTrace) -> float:
    return len(handover_events(trace)) / (len(trace) - 1)
