"""Synthetic two-modality plant data shaped like SWaT (51 sensor / 16 network
features, ~12% attack rows).

Continuous sensors are mixtures of a few shared slow cycles plus drift and
noise; actuators copy a few thresholded cycles or stay constant. Network
rows arrive several per sensor row and follow plant activity or the true
value of individual process signals. Each
attack segment hits the sensor side, the network side, or both, so a
single-modality detector can only see part of the attacks.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .data import NETWORK_FEATURES, SENSOR_FEATURES, AlignedSet, RawTable, write_csv
from .numeric import make_rng

NETWORK_NAMES = [
    "pkt_count", "bytes_total", "pkt_len_mean", "pkt_len_std", "iat_mean", "iat_std", "tcp_ratio", "udp_ratio",
    "cip_read_ratio", "cip_write_ratio", "modbus_ratio", "src_port_count", "dst_port_count", "syn_ratio",
    "retransmit_ratio", "payload_value",
]
N_LATENT = 4
N_ACT_PATTERNS = 3


@dataclass
class SyntheticSpec:
    sample_count: int = 10_000
    attack_ratio: float = 0.121
    seed: int = 0
    window: int = 8
    sensor_features: int = SENSOR_FEATURES
    network_features: int = NETWORK_FEATURES
    network_rows_per_sample: int = 4
    sinusoid_amplitude: float = 1.0
    drift_amplitude: float = 0.3
    noise_level: float = 0.05
    sensor_attack_magnitude: float = 1.5
    network_attack_magnitude: float = 1.5
    attack_mix: tuple[float, float, float] = (0.4, 0.35, 0.25)  # sensor-only, network-only, both
    segment_min: int = 3
    segment_max: int = 12
    missing_rate: float = 0.0005
    sensor_attack_pool: int = 6  # attackable continuous sensors
    network_attack_pool: int = 6  # attackable network features

    def __post_init__(self):
        self.attack_mix = tuple(float(v) for v in self.attack_mix)
        self.validate()

    def validate(self) -> None:
        if not 0.0 < self.attack_ratio < 1.0:
            raise ValueError(f"attack_ratio must be in (0, 1), got {self.attack_ratio}")
        if self.sample_count < 10:
            raise ValueError(f"sample_count must be >= 10, got {self.sample_count}")
        if self.sensor_features < 2 or self.network_features < 1:
            raise ValueError("need at least 2 sensor features and 1 network feature")
        if self.network_rows_per_sample < 1 or self.window < 1:
            raise ValueError("network_rows_per_sample and window must be >= 1")
        if not 1 <= self.segment_min <= self.segment_max:
            raise ValueError("need 1 <= segment_min <= segment_max")
        if len(self.attack_mix) != 3 or min(self.attack_mix) < 0 or not math.isclose(sum(self.attack_mix), 1.0):
            raise ValueError(f"attack_mix must be 3 nonnegative weights summing to 1, got {self.attack_mix}")
        if not 0.0 <= self.missing_rate < 1.0:
            raise ValueError(f"missing_rate must be in [0, 1), got {self.missing_rate}")
        if not 1 <= self.sensor_attack_pool <= (self.sensor_features + 1) // 2:
            raise ValueError("sensor_attack_pool must be between 1 and the continuous sensor count")
        if not 1 <= self.network_attack_pool <= self.network_features:
            raise ValueError("network_attack_pool must be between 1 and network_features")
        if not 0 <= self.seed < 2**64:
            raise ValueError(f"seed out of range: {self.seed}")
        n_attack = round(self.attack_ratio * self.sample_count)
        if n_attack < 1 or self.sample_count - n_attack < self.warmup + 1:
            raise ValueError("attack_ratio leaves no room for attack or normal rows")

    @property
    def warmup(self) -> int:
        """Leading normal rows: enough network history for the first full window."""
        return math.ceil(self.window / self.network_rows_per_sample) + 1

    def to_dict(self) -> dict:
        d = asdict(self)
        d["attack_mix"] = list(self.attack_mix)
        return d


@dataclass
class AttackSegment:
    start: int
    stop: int  # exclusive
    kind: str  # "sensor" | "network" | "both"


def _segments(spec: SyntheticSpec, rng: np.random.Generator) -> list[AttackSegment]:
    n = spec.sample_count
    n_attack = round(spec.attack_ratio * n)
    lengths = []
    while sum(lengths) < n_attack:
        lengths.append(int(rng.integers(spec.segment_min, spec.segment_max + 1)))
    lengths[-1] -= sum(lengths) - n_attack
    if lengths[-1] == 0:
        lengths.pop()
    n_seg = len(lengths)
    free = n - n_attack - spec.warmup
    # one gap of >= 1 normal row between segments, the rest spread at random
    min_gaps = np.ones(n_seg + 1, dtype=np.int64)
    min_gaps[0] = 0
    slack = free - int(min_gaps.sum())
    if slack < 0:
        raise ValueError("too many attack segments for the sample count; lower attack_ratio")
    gaps = min_gaps + rng.multinomial(slack, np.full(n_seg + 1, 1.0 / (n_seg + 1)))
    kinds = rng.choice(["sensor", "network", "both"], size=n_seg, p=list(spec.attack_mix))
    out, pos = [], spec.warmup
    for length, gap, kind in zip(lengths, gaps[:-1], kinds):
        pos += int(gap)
        out.append(AttackSegment(pos, pos + length, str(kind)))
        pos += length
    return out


def generate_synthetic(spec: SyntheticSpec) -> tuple[RawTable, RawTable]:
    """Deterministic (sensor, network) tables for ``spec``; labels live on the sensor table."""
    spec.validate()
    rng = make_rng(spec.seed)
    n, k = spec.sample_count, spec.network_rows_per_sample
    n_cont = (spec.sensor_features + 1) // 2
    n_act = spec.sensor_features - n_cont
    t = np.arange(n, dtype=np.float64)

    periods = rng.uniform(150.0, 900.0, N_LATENT)
    phases = rng.uniform(0.0, 2 * np.pi, N_LATENT)
    latent = np.sin(2 * np.pi * t[None, :] / periods[:, None] + phases[:, None])  # (K, n)

    mix = rng.normal(size=(n_cont, N_LATENT))
    mix /= np.linalg.norm(mix, axis=1, keepdims=True)
    drift = rng.uniform(-1.0, 1.0, n_cont) * spec.drift_amplitude
    signal = spec.sinusoid_amplitude * (mix @ latent) + drift[:, None] * (t / n)[None, :]
    signal += rng.normal(0.0, spec.noise_level, signal.shape)
    process = signal.copy()  # what the plant does; sensor-side attacks only touch the readings

    # actuators copy a few base switching patterns (duplicate pumps/valves) or sit constant
    base_mix = rng.normal(size=(N_ACT_PATTERNS, N_LATENT))
    base = (base_mix @ latent > 0).astype(np.float64)
    pattern = rng.integers(-1, N_ACT_PATTERNS, n_act)  # -1 = constant
    constant = rng.integers(0, 2, n_act).astype(np.float64)
    actuators = np.where((pattern >= 0)[:, None], base[np.maximum(pattern, 0)], constant[:, None])

    # network drivers: even features follow plant activity, odd ones a sensor signal
    nf = spec.network_features
    activity = actuators.mean(axis=0) if n_act else np.zeros(n)
    tracked = rng.integers(0, n_cont, nf)
    net_noise = rng.normal(0.0, 0.15, (nf, n * k))
    row_sensor = np.repeat(np.arange(n), k)  # sensor row each network row belongs to

    sensor_pool = rng.choice(n_cont, size=spec.sensor_attack_pool, replace=False)
    network_pool = rng.choice(nf, size=spec.network_attack_pool, replace=False)
    labels = np.zeros(n, dtype=np.int64)
    net_offset = np.zeros((nf, n))
    for seg in _segments(spec, rng):
        rows = slice(seg.start, seg.stop)
        labels[rows] = 1
        if seg.kind in ("sensor", "both"):
            feats = rng.choice(sensor_pool, size=min(int(rng.integers(1, 4)), sensor_pool.size), replace=False)
            signs = rng.choice([-1.0, 1.0], size=feats.size)
            signal[feats, rows] += (signs * spec.sensor_attack_magnitude * spec.sinusoid_amplitude)[:, None]
        if seg.kind in ("network", "both"):
            feats = rng.choice(network_pool, size=min(int(rng.integers(1, 4)), network_pool.size), replace=False)
            signs = rng.choice([-1.0, 1.0], size=feats.size)
            net_offset[feats, rows] += (signs * spec.network_attack_magnitude)[:, None]

    drivers = np.where((np.arange(nf) % 2 == 0)[:, None], activity[None, :] * 2.0 - 1.0,
                       process[tracked] / max(spec.sinusoid_amplitude, 1e-12))
    net = (drivers + net_offset)[:, row_sensor] + net_noise

    # physical units: per-feature offset and scale
    s_scale = np.exp(rng.uniform(np.log(0.5), np.log(200.0), n_cont))
    s_base = s_scale * rng.uniform(1.5, 4.0, n_cont)
    sensor_values = np.empty((n, spec.sensor_features))
    sensor_values[:, :n_cont] = (s_base[:, None] + s_scale[:, None] * signal).T
    sensor_values[:, n_cont:] = actuators.T
    n_scale = np.exp(rng.uniform(np.log(1.0), np.log(500.0), nf))
    n_base = n_scale * rng.uniform(2.0, 5.0, nf)
    network_values = (n_base[:, None] + n_scale[:, None] * net).T

    for values in (sensor_values, network_values):
        values[rng.random(values.shape) < spec.missing_rate] = np.nan

    sensor_names = [f"S{i:02d}_{'AIT' if i < n_cont else 'MV'}" for i in range(spec.sensor_features)]
    network_names = NETWORK_NAMES[:nf] if nf <= len(NETWORK_NAMES) else [f"net_{i:02d}" for i in range(nf)]
    net_ts = (np.repeat(t, k) - 1.0 + np.tile(np.arange(1, k + 1) / k, n))
    sensor = RawTable("sensor", sensor_names, t, sensor_values, labels)
    network = RawTable("network", network_names, net_ts, network_values)
    return sensor, network


def write_dataset(spec: SyntheticSpec, out_dir) -> dict[str, Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    sensor, network = generate_synthetic(spec)
    paths = {"sensor": out_dir / "sensor.csv", "network": out_dir / "network.csv", "spec": out_dir / "spec.json"}
    write_csv(sensor, paths["sensor"])
    write_csv(network, paths["network"])
    sidecar = {"generator": "numpy PCG64", "spec": spec.to_dict(),
               "attack_fraction": float(sensor.labels.mean())}
    paths["spec"].write_text(json.dumps(sidecar, indent=1) + "\n", encoding="utf-8")
    return paths


# sanity baseline ------------------------------------------------------------


def _flat_features(samples: AlignedSet) -> np.ndarray:
    return np.concatenate([samples.x_s, samples.x_n.mean(axis=1)], axis=1)


def threshold_baseline(train: AlignedSet, test: AlignedSet, grid: int = 200):
    """Per-feature band detector: alarm when any feature leaves its normal training band
    by more than a shared margin. The margin is brute-force swept for train F1.

    Returns (margin, train F1, test F1).
    """
    from .evaluation import confusion, f1

    x_tr, x_te = _flat_features(train), _flat_features(test)
    normal = x_tr[train.y == 0]
    lo, hi = normal.min(axis=0), normal.max(axis=0)
    width = np.maximum(hi - lo, 1e-12)

    def score(x):
        return np.max(np.maximum(lo - x, x - hi) / width, axis=1)

    s_tr, s_te = score(x_tr), score(x_te)
    candidates = np.unique(np.quantile(s_tr, np.linspace(0.5, 1.0, grid)))
    best_margin, best_f1 = -np.inf, -1.0
    for m in np.concatenate([[-np.inf], candidates]):
        f = f1(confusion(train.y, (s_tr > m).astype(int)))
        if f > best_f1:
            best_margin, best_f1 = float(m), f
    return best_margin, best_f1, f1(confusion(test.y, (s_te > best_margin).astype(int)))


def separable_toy(n: int = 200, seed: int = 0, window: int = 8, sensor_features: int = 5,
                  network_features: int = 3, spread: float = 0.05) -> AlignedSet:
    """Two tight Gaussian blobs per modality (normal near 0.3, attack near 0.7), already in [0, 1]."""
    rng = make_rng(seed)
    y = (rng.random(n) < 0.5).astype(np.int64)
    y[:2] = (0, 1)
    centre = np.where(y == 1, 0.7, 0.3)
    x_s = np.clip(centre[:, None] + spread * rng.standard_normal((n, sensor_features)), 0.0, 1.0)
    x_n = np.clip(centre[:, None, None] + spread * rng.standard_normal((n, window, network_features)), 0.0, 1.0)
    return AlignedSet(x_s, x_n, y, np.arange(n, dtype=np.float64))
