import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from netselect.container import read_container, write_container
from netselect.errors import IoFailure


@given(
    hnp.arrays(np.float64, hnp.array_shapes(max_dims=3, max_side=5)),
    hnp.arrays(np.int64, hnp.array_shapes(max_dims=2, max_side=5)),
)
def test_round_trip_bit_exact(tmp_path_factory, a, b):
    p = tmp_path_factory.mktemp("c") / "x.bin"
    write_container(p, {"note": "x"}, {"a": a, "b": b})
    h, arrays = read_container(p)
    assert h["note"] == "x"
    assert arrays["a"].tobytes() == a.astype("<f8").tobytes()
    assert np.array_equal(arrays["b"], b)


def test_write_is_deterministic(tmp_path):
    arr = {"w": np.arange(6.0).reshape(2, 3)}
    write_container(tmp_path / "1", {"k": 1, "a": 2}, arr)
    write_container(tmp_path / "2", {"a": 2, "k": 1}, arr)
    assert (tmp_path / "1").read_bytes() == (tmp_path / "2").read_bytes()


def test_bad_magic(tmp_path):
    p = tmp_path / "junk"
    p.write_bytes(b"nope" + bytes(20))
    with pytest.raises(IoFailure):
        read_container(p)
