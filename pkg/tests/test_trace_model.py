import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from netselect.errors import (
    IoFailure,
    MissingColumn,
    NetworkLengthMismatch,
    TimestampNotMonotone,
    TraceTooShort,
)
from netselect.trace_model import (
    CSV_COLUMNS,
    DriveTrace,
    handover_events,
    handover_indicator,
    handover_rate,
    load_drive,
    save_drive,
)

from conftest import make_network


def _write(path, rows, header=CSV_COLUMNS):
    with open(path, "w") as fh:
        fh.write(",".join(header) + "\n")
        for r in rows:
            fh.write(",".join(str(v) for v in r) + "\n")


def _row(ts, net, cell="A", rsrp=-90, loss=0.0, lat=40):
    return [ts, net, 35.0, 32.8, rsrp, -10, -60, 30, 0.5, 4, loss, lat, cell]


def test_load_groups_networks_and_fills_gaps(tmp_path):
    p = tmp_path / "d1.csv"
    rows = []
    for ts in (0, 1, 3):  # second 2 missing for network 1 only
        rows.append(_row(ts, 1))
    for ts in (0, 1, 2, 3):
        rows.append(_row(ts, 2))
    _write(p, rows)
    d = load_drive(p)
    assert d.drive_id == "d1"
    assert d.network_ids == [1, 2]
    assert d.duration_s == 4
    n1 = d.networks[0]
    assert math.isnan(n1["rsrp"][2])
    assert n1.serving_cell_id[2] is None
    assert n1.row(2).rsrp is None
    assert n1.row(1).rsrp == -90.0


def test_missing_required_column(tmp_path):
    p = tmp_path / "d.csv"
    header = [c for c in CSV_COLUMNS if c != "rsrq"]
    _write(p, [[0, 1, 35, 32, -90, -60, 30, 0.5, 4, 0, 40, "A"]], header)
    with pytest.raises(MissingColumn):
        load_drive(p)


def test_gps_columns_are_optional(tmp_path):
    p = tmp_path / "d.csv"
    header = [c for c in CSV_COLUMNS if not c.startswith("gps")]
    _write(p, [[t, 1, -90, -10, -60, 30, 0.5, 4, 0, 40, "A"] for t in range(3)], header)
    d = load_drive(p)
    assert np.all(np.isnan(d.networks[0]["gps_longitude"]))


def test_schema_mapping(tmp_path):
    p = tmp_path / "d.csv"
    header = ["time" if c == "timestamp" else c for c in CSV_COLUMNS]
    _write(p, [_row(t, 1) for t in range(3)], header)
    d = load_drive(p, schema={"timestamp": "time"})
    assert list(d.networks[0].timestamps) == [0, 1, 2]


def test_non_monotone_timestamps(tmp_path):
    p = tmp_path / "d.csv"
    _write(p, [_row(0, 1), _row(2, 1), _row(1, 1)])
    with pytest.raises(TimestampNotMonotone):
        load_drive(p)


def test_network_span_mismatch(tmp_path):
    p = tmp_path / "d.csv"
    _write(p, [_row(t, 1) for t in range(3)] + [_row(t, 2) for t in range(4)])
    with pytest.raises(NetworkLengthMismatch):
        load_drive(p)


def test_unreadable_file(tmp_path):
    with pytest.raises(IoFailure):
        load_drive(tmp_path / "absent.csv")


def test_round_trip_is_exact(tmp_path, short_drive):
    p = tmp_path / "rt.csv"
    save_drive(short_drive, p)
    back = load_drive(p)
    back.drive_id = short_drive.drive_id
    assert back == short_drive


@given(
    st.lists(
        st.tuples(
            st.one_of(st.none(), st.floats(-140, -40, allow_nan=False)),
            st.one_of(st.none(), st.sampled_from(["A", "B", "C"])),
        ),
        min_size=1,
        max_size=30,
    )
)
def test_round_trip_property(tmp_path_factory, cells):
    n = len(cells)
    rsrp = [math.nan if v is None else v for v, _ in cells]
    net = make_network(4, n, rsrp=rsrp, cells=[c for _, c in cells])
    d = DriveTrace("prop", [net])
    p = tmp_path_factory.mktemp("rt") / "prop.csv"
    save_drive(d, p)
    assert load_drive(p) == d


def test_handover_indicator_examples():
    net = make_network(1, 5, cells=["A", "A", "B", "B", "C"])
    assert list(handover_indicator(net)) == [0, 0, 1, 0, 1]
    assert handover_events(net) == [2, 4]
    assert handover_rate(net) == 0.5


def test_handover_skips_missing_cells():
    net = make_network(1, 5, cells=["A", None, "A", None, "B"])
    assert list(handover_indicator(net)) == [0, 0, 0, 0, 1]


def test_handover_needs_two_rows():
    with pytest.raises(TraceTooShort):
        handover_events(make_network(1, 1))


@given(st.lists(st.sampled_from(["A", "B", "C", None]), min_size=2, max_size=60))
def test_handover_count_matches_distinct_runs(cells):
    known = [c for c in cells if c is not None]
    runs = sum(1 for a, b in zip(known, known[1:]) if a != b)
    assert len(handover_events(make_network(1, len(cells), cells=cells))) == runs


def test_invalid_values_rejected():
    with pytest.raises(ValueError):
        make_network(1, 3, packet_loss_rate=1.5)
    with pytest.raises(ValueError):
        make_network(1, 3, latency=-1.0)


def test_arrays_are_read_only(short_drive):
    with pytest.raises(ValueError):
        short_drive.networks[0].columns["rsrp"][0] = 0.0
