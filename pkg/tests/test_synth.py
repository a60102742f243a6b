import numpy as np
import pytest

from netselect.errors import InvalidConfig
from netselect.preprocess import pearson_matrix
from netselect.synth import SynthConfig, generate_corpus, generate_drive, generate_drive_with_log
from netselect.trace_model import handover_events


def test_same_seed_same_drive():
    cfg = SynthConfig(seed=9, duration_s=250)
    assert generate_drive(cfg, "a") == generate_drive(cfg, "a")


def test_different_seed_differs():
    a = generate_drive(SynthConfig(seed=1, duration_s=250), "a")
    b = generate_drive(SynthConfig(seed=2, duration_s=250), "a")
    assert not a == b


def test_invalid_duration():
    with pytest.raises(InvalidConfig):
        generate_drive(SynthConfig(duration_s=100))


def test_value_ranges(short_drive):
    for net in short_drive.networks:
        assert np.nanmin(net["rsrp"]) >= -120 and np.nanmax(net["rsrp"]) <= -70
        assert np.all((net["packet_loss_rate"] >= 0) & (net["packet_loss_rate"] <= 1))
        assert np.all(net["latency"] >= 0)


def test_log_matches_cell_changes():
    trace, log = generate_drive_with_log(SynthConfig(seed=4, duration_s=400), "x")
    for net in trace.networks:
        assert handover_events(net) == log[net.network_id]


def test_handover_rate_near_target():
    # 100 drives x 1000 s pooled; the calibrated rate should land within half a point
    corpus = generate_corpus(SynthConfig(seed=77), 100, "rate")
    events = sum(len(handover_events(n)) for d in corpus for n in d.networks)
    steps = sum(len(n) - 1 for d in corpus for n in d.networks)
    assert 0.025 <= events / steps <= 0.035


def test_rule_mode_fires_iff_two_low_seconds():
    cfg = SynthConfig(seed=5, duration_s=600, handover_mode="rule")
    trace, _ = generate_drive_with_log(cfg, "r")
    for net in trace.networks:
        rsrp = np.asarray(net["rsrp"])
        ind = np.zeros(len(rsrp), dtype=bool)
        ind[[t - int(net.timestamps[0]) for t in handover_events(net)]] = True
        for i in range(1, len(rsrp)):
            if ind[i]:
                # previous second low, and the value before the post-handover jump low as well
                assert rsrp[i - 1] < cfg.rule_threshold
                assert rsrp[i] - cfg.rule_jump_db < cfg.rule_threshold or rsrp[i] == cfg.rsrp_bounds[1]
            elif rsrp[i - 1] < cfg.rule_threshold:
                assert rsrp[i] >= cfg.rule_threshold


def test_zero_coupling_decorrelates_loss_and_latency():
    trace = generate_drive(SynthConfig(seed=6, duration_s=20000, coupling=0.0), "z")
    for net in trace.networks:
        c = pearson_matrix(np.column_stack([net["rsrp"], net["packet_loss_rate"], net["latency"]]))
        assert abs(c[0, 1]) < 0.1 and abs(c[0, 2]) < 0.1


def test_networks_are_not_synchronised(short_drive):
    a, b = (np.asarray(n["latency"]) for n in short_drive.networks[:2])
    assert abs(np.corrcoef(a, b)[0, 1]) < 0.5
