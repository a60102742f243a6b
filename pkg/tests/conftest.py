import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from netselect.predictors import PredictorConfig, train_unified
from netselect.synth import SynthConfig, generate_corpus, generate_drive
from netselect.trace_model import DriveTrace, NetworkTrace

settings.register_profile(
    "netselect", deadline=None, max_examples=60, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("netselect")

TINY_ARCH = dict(conv_channels=(4, 4, 4, 4), lstm_hidden=6, fc_hidden=(5, 3), batch_size=64)


def make_network(network_id, n, start=0, cells=None, **cols):
    """NetworkTrace with constant defaults for any column not given."""
    base = {
        "rsrp": -90.0,
        "rsrq": -10.0,
        "rssi": -62.0,
        "modem_bandwidth": 30.0,
        "normalized_bandwidth": 0.5,
        "total_bitrate": 4.0,
        "packet_loss_rate": 0.0,
        "latency": 50.0,
        "gps_longitude": 35.0,
        "gps_latitude": 32.8,
    }
    base.update(cols)
    arrays = {k: np.broadcast_to(np.asarray(v, dtype=float), (n,)).copy() for k, v in base.items()}
    cells = cells if cells is not None else ["c0"] * n
    return NetworkTrace(network_id, np.arange(start, start + n), arrays, list(cells))


@pytest.fixture(scope="session")
def short_drive():
    return generate_drive(SynthConfig(seed=3, duration_s=300), "short")


@pytest.fixture(scope="session")
def small_corpus():
    return generate_corpus(SynthConfig(seed=21, duration_s=240), 4, "small")


@pytest.fixture(scope="session")
def tiny_models(small_corpus):
    """Briefly trained handover and latency models on the small corpus."""
    hand = train_unified(
        small_corpus,
        PredictorConfig(task="handover", feature_set="f9", window_length=16, max_epochs=2, **TINY_ARCH),
        val_fraction=0.25,
        seed=0,
    )
    lat = train_unified(
        small_corpus,
        PredictorConfig(task="latency", feature_set="f9", window_length=16, max_epochs=2, sample_stride=4, **TINY_ARCH),
        val_fraction=0.25,
        seed=0,
    )
    return hand, lat


# acceptance verdicts, printed once at the end of the run
ACCEPTANCE: dict[int, tuple[bool, str]] = {}


def record_acceptance(number: int, passed: bool, detail: str) -> None:
    ACCEPTANCE[number] = (bool(passed), detail)
    print(f"criterion {number:2d}: {'PASS' if passed else 'FAIL'}  {detail}")


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
