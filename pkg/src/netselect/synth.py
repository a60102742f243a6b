"""Synthetic multi-network drive traces.

Each network's RSRP is a reflected random walk on ``rsrp_bounds``; cell
load is a clipped AR(1) process; the vehicle follows one fixed closed route
so GPS positions repeat across drives.  Handovers fire per second with a
logistic hazard in (low RSRP, high load, proximity to a cell edge on the
route).  The hazard offset is calibrated so the expected handover fraction
equals ``handover_rate``.  Loss and latency fall as RSRP improves, with a
short spike after every handover.
"""
from __future__ import annotations

from dataclasses import dataclass, replace
from functools import lru_cache

import numpy as np
from scipy.optimize import brentq

from .errors import InvalidConfig
from .neural_core import sigmoid
from .trace_model import DriveTrace, NetworkTrace

ROUTE_ORIGIN = (35.00, 32.78)  # lon, lat


@dataclass(frozen=True)
class SynthConfig:
    seed: int = 0
    duration_s: int = 1000
    network_count: int = 3
    handover_rate: float = 0.03
    handover_mode: str = "logistic"  # or "rule"
    coupling: float = 1.0

    rsrp_bounds: tuple[float, float] = (-120.0, -70.0)
    rsrp_step_db: float = 2.5
    load_mean: float = 0.4
    load_rho: float = 0.97
    load_step: float = 0.04

    hazard_rsrp_center: float = -110.0
    hazard_rsrp_slope: float = 0.45
    hazard_load_coef: float = 9.0
    hazard_geo_coef: float = 4.0

    rule_threshold: float = -110.0
    rule_jump_db: float = 15.0

    loss_knee_dbm: float = -105.0
    loss_slope: float = 0.012
    loss_noise: float = 0.01
    latency_base_ms: float = 35.0
    latency_slope_ms: float = 1.6
    latency_load_ms: float = 40.0
    latency_noise_ms: float = 4.0
    burst_loss: float = 0.3
    burst_latency_ms: float = 120.0
    burst_decay: float = 0.5
    burst_len: int = 3

    gps_missing_fraction: float = 0.36
    gps_block_s: float = 30.0
    speed_mps: float = 12.0
    geo_seed: int = 1234
    cell_edges_per_network: int = 8
    cell_edge_width: float = 0.04  # route fraction
    random_start: bool = True  # each drive joins the route at a random point
    shared_cell_edges: bool = True
    calibration_drives: int = 256

    def validate(self) -> None:
        if self.duration_s < 200:
            raise InvalidConfig("duration_s must be at least 200")
        if self.network_count < 1:
            raise InvalidConfig("network_count must be positive")
        if not 0.0 <= self.handover_rate < 1.0:
            raise InvalidConfig("handover_rate must lie in [0, 1)")
        if self.handover_mode not in ("logistic", "rule"):
            raise InvalidConfig("handover_mode must be 'logistic' or 'rule'")
        if not 0.0 <= self.gps_missing_fraction < 1.0:
            raise InvalidConfig("gps_missing_fraction must lie in [0, 1)")
        lo, hi = self.rsrp_bounds
        if not lo < hi:
            raise InvalidConfig("rsrp_bounds must be increasing")


# ---------------------------------------------------------------- geography


def _route_length(cfg: SynthConfig) -> float:
    return cfg.speed_mps * cfg.duration_s


def _edge_positions(cfg: SynthConfig) -> np.ndarray:
    """Fixed cell-edge locations (fractions of the route), one row per network.

    With ``shared_cell_edges`` every network degrades at the same places,
    as under a tunnel or behind terrain.
    """
    rng = np.random.default_rng(cfg.geo_seed)
    if cfg.shared_cell_edges:
        return np.tile(rng.random(cfg.cell_edges_per_network), (cfg.network_count, 1))
    return rng.random((cfg.network_count, cfg.cell_edges_per_network))


def _edge_proximity(frac: np.ndarray, edges: np.ndarray, width: float) -> np.ndarray:
    """Sum of Gaussian bumps around each edge; ``frac`` is (..., T), ``edges`` is (E,)."""
    d = np.abs(frac[..., None] - edges)
    d = np.minimum(d, 1.0 - d)
    return np.exp(-((d / width) ** 2)).sum(axis=-1)


def _route_coords(frac: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    theta = 2 * np.pi * frac
    lon = ROUTE_ORIGIN[0] + 0.030 * np.cos(theta) + 0.004 * np.sin(3 * theta)
    lat = ROUTE_ORIGIN[1] + 0.020 * np.sin(theta)
    return lon, lat


# ---------------------------------------------------------------- processes


def _exogenous(cfg: SynthConfig, rng: np.random.Generator, chains: int):
    """RSRP walk, load and route position for ``chains`` parallel networks (no handover feedback)."""
    T = cfg.duration_s
    lo, hi = cfg.rsrp_bounds
    rsrp = np.empty((chains, T))
    rsrp[:, 0] = rng.uniform(lo, hi, chains)
    steps = rng.normal(0.0, cfg.rsrp_step_db, (chains, T))
    for t in range(1, T):
        x = rsrp[:, t - 1] + steps[:, t]
        x = np.where(x > hi, 2 * hi - x, x)
        rsrp[:, t] = np.where(x < lo, 2 * lo - x, x)
    load = np.empty((chains, T))
    stat_sd = cfg.load_step / np.sqrt(1 - cfg.load_rho**2)
    load[:, 0] = np.clip(rng.normal(cfg.load_mean, stat_sd, chains), 0, 1)
    eps = rng.normal(0.0, cfg.load_step, (chains, T))
    for t in range(1, T):
        load[:, t] = np.clip(cfg.load_mean + cfg.load_rho * (load[:, t - 1] - cfg.load_mean) + eps[:, t], 0, 1)
    return rsrp, load


def _positions(cfg: SynthConfig, rng: np.random.Generator) -> np.ndarray:
    T = cfg.duration_s
    speed = np.empty(T)
    speed[0] = cfg.speed_mps
    noise = rng.normal(0.0, 1.0, T)
    for t in range(1, T):
        speed[t] = np.clip(cfg.speed_mps + 0.9 * (speed[t - 1] - cfg.speed_mps) + noise[t], 0.0, 30.0)
    dist = np.concatenate([[0.0], np.cumsum(speed[1:])])
    start = rng.random() if cfg.random_start else 0.0
    return (start + dist / _route_length(cfg)) % 1.0


def _logit_rest(cfg: SynthConfig, rsrp, load, geo) -> np.ndarray:
    return (
        cfg.coupling * cfg.hazard_rsrp_slope * (cfg.hazard_rsrp_center - rsrp)
        + cfg.hazard_load_coef * (load - cfg.load_mean)
        + cfg.hazard_geo_coef * geo
    )


@lru_cache(maxsize=64)
def _calibrated_offset(cfg: SynthConfig) -> float:
    """Logit offset making the mean per-second handover hazard equal ``handover_rate``."""
    rng = np.random.default_rng(np.random.SeedSequence([cfg.geo_seed, 0xCA1]))
    edges = _edge_positions(cfg)
    rests = []
    for _ in range(cfg.calibration_drives):
        rsrp, load = _exogenous(cfg, rng, cfg.network_count)
        frac = _positions(cfg, rng)
        geo = np.stack([_edge_proximity(frac, edges[n], cfg.cell_edge_width) for n in range(cfg.network_count)])
        rests.append(_logit_rest(cfg, rsrp, load, geo)[:, 1:].ravel())
    rest = np.concatenate(rests)
    target = cfg.handover_rate
    return float(brentq(lambda o: sigmoid(o + rest).mean() - target, -80.0, 80.0, xtol=1e-12))


def hazard_offset(cfg: SynthConfig) -> float:
    return _calibrated_offset(replace(cfg, seed=0))


def _gps_missing(cfg: SynthConfig, rng: np.random.Generator) -> np.ndarray:
    """Two-state Markov mask with stationary missing fraction ``gps_missing_fraction``."""
    f = cfg.gps_missing_fraction
    T = cfg.duration_s
    if f == 0:
        return np.zeros(T, dtype=bool)
    leave_missing = 1.0 / cfg.gps_block_s
    enter_missing = leave_missing * f / (1 - f)
    u = rng.random(T)
    out = np.empty(T, dtype=bool)
    out[0] = u[0] < f
    for t in range(1, T):
        out[t] = (u[t] >= leave_missing) if out[t - 1] else (u[t] < enter_missing)
    return out


def generate_drive_with_log(config: SynthConfig, drive_id: str | None = None):
    """Generate one drive; also return the injected handover timestamps per network."""
    cfg = config
    cfg.validate()
    ss = np.random.SeedSequence(cfg.seed)
    r_exo, r_pos, r_ho, r_noise, r_gps = (np.random.default_rng(s) for s in ss.spawn(5))
    N, T = cfg.network_count, cfg.duration_s
    lo, hi = cfg.rsrp_bounds

    frac = _positions(cfg, r_pos)
    edges = _edge_positions(cfg)
    geo = np.stack([_edge_proximity(frac, edges[n], cfg.cell_edge_width) for n in range(N)])

    if cfg.handover_mode == "logistic":
        rsrp, load = _exogenous(cfg, r_exo, N)
        if cfg.handover_rate == 0:
            hazard = np.zeros((N, T))
        else:
            hazard = sigmoid(hazard_offset(cfg) + _logit_rest(cfg, rsrp, load, geo))
        ho = r_ho.random((N, T)) < hazard
        ho[:, 0] = False
    else:
        rsrp, load = _exogenous(cfg, r_exo, N)
        steps = np.diff(rsrp, axis=1)
        ho = np.zeros((N, T), dtype=bool)
        for t in range(1, T):
            x = rsrp[:, t - 1] + steps[:, t - 1]
            x = np.where(x > hi, 2 * hi - x, x)
            x = np.where(x < lo, 2 * lo - x, x)
            fire = (x < cfg.rule_threshold) & (rsrp[:, t - 1] < cfg.rule_threshold)
            ho[:, t] = fire
            rsrp[:, t] = np.where(fire, np.minimum(x + cfg.rule_jump_db, hi), x)

    kernel = cfg.burst_decay ** np.arange(cfg.burst_len)
    burst = np.stack([np.convolve(h.astype(float), kernel)[:T] for h in ho])

    q = (rsrp - lo) / (hi - lo)
    c = cfg.coupling
    noise = lambda sd: r_noise.normal(0.0, sd, (N, T))  # noqa: E731
    loss = np.clip(c * cfg.loss_slope * (cfg.loss_knee_dbm - rsrp) + noise(cfg.loss_noise) + c * cfg.burst_loss * burst, 0.0, 1.0)
    latency = np.maximum(
        1.0,
        cfg.latency_base_ms
        + c * cfg.latency_slope_ms * (hi - rsrp)
        + cfg.latency_load_ms * load**2
        + noise(cfg.latency_noise_ms)
        + c * cfg.burst_latency_ms * burst,
    )
    rsrq = np.clip(-18.0 + 9.0 * q - 8.0 * load + noise(1.5), -20.0, -3.0)
    rssi = rsrp + 28.0 + noise(1.0)
    bw = np.maximum(0.5, 10.0 + 30.0 * q + 25.0 * (1.0 - load) + noise(4.0))
    nbw = np.clip(1.0 - load + noise(0.05), 0.0, 1.0)
    bitrate = np.clip(0.15 * bw + noise(0.8), 0.5, 8.0) * (1.0 - loss)

    lon, lat = _route_coords(frac)
    lon = lon + r_gps.normal(0.0, 1e-5, T)
    lat = lat + r_gps.normal(0.0, 1e-5, T)
    missing = _gps_missing(cfg, r_gps)
    lon[missing] = np.nan
    lat[missing] = np.nan

    ts = np.arange(T, dtype=np.int64)
    networks, log = [], {}
    for n in range(N):
        cell_no = np.cumsum(ho[n])
        cells = [f"N{n + 1}C{k:04d}" for k in cell_no]
        cols = {
            "gps_longitude": lon,
            "gps_latitude": lat,
            "rsrp": rsrp[n],
            "rsrq": rsrq[n],
            "rssi": rssi[n],
            "modem_bandwidth": bw[n],
            "normalized_bandwidth": nbw[n],
            "total_bitrate": bitrate[n],
            "packet_loss_rate": loss[n],
            "latency": latency[n],
        }
        networks.append(NetworkTrace(n + 1, ts, cols, cells))
        log[n + 1] = [int(t) for t in np.flatnonzero(ho[n])]
    return DriveTrace(drive_id or f"drive_s{cfg.seed}", networks), log


def generate_drive(config: SynthConfig, drive_id: str | None = None) -> DriveTrace:
    return generate_drive_with_log(config, drive_id)[0]


def generate_corpus(config: SynthConfig, drives: int, prefix: str = "drive") -> list[DriveTrace]:
    """``drives`` independent drives; drive ``i`` uses seed ``config.seed * 100003 + i``."""
    out = []
    for i in range(drives):
        cfg = replace(config, seed=config.seed * 100003 + i)
        out.append(generate_drive(cfg, f"{prefix}_{config.seed}_{i:03d}"))
    return out
