"""Loading, cleaning and aligning the two modalities.

Tables are kept as numpy arrays with ``NaN`` marking a missing cell. The
pipeline order is: fit :class:`PreprocessStats` on the training time range,
impute, min-max normalise, then pair each sensor row with the window of
network rows that precede it.
"""

from __future__ import annotations

import csv
import json
import math
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

SENSOR_FEATURES = 51
NETWORK_FEATURES = 16
DEFAULT_FEATURE_COUNT = {"sensor": SENSOR_FEATURES, "network": NETWORK_FEATURES}
MODALITIES = ("sensor", "network")


class IngestError(ValueError):
    pass


class PreprocessError(ValueError):
    pass


@dataclass
class RawTable:
    """One modality as read from disk. ``values`` is (rows, features); NaN = missing."""

    modality: str
    feature_names: list[str]
    timestamps: np.ndarray
    values: np.ndarray
    labels: np.ndarray | None = None

    def __post_init__(self):
        if self.modality not in MODALITIES:
            raise ValueError(f"unknown modality {self.modality!r}")
        self.timestamps = np.asarray(self.timestamps, dtype=np.float64)
        self.values = np.asarray(self.values, dtype=np.float64).reshape(len(self.timestamps), -1)
        if self.values.shape[1] != len(self.feature_names):
            raise ValueError(f"{self.values.shape[1]} value columns for {len(self.feature_names)} feature names")
        if self.labels is not None:
            self.labels = np.asarray(self.labels, dtype=np.int64)
            if self.labels.shape != self.timestamps.shape:
                raise ValueError("one label per row required")
        if np.any(np.diff(self.timestamps) < 0):
            raise ValueError("timestamps must be nondecreasing")

    def __len__(self) -> int:
        return len(self.timestamps)

    def with_values(self, values: np.ndarray) -> "RawTable":
        return RawTable(self.modality, list(self.feature_names), self.timestamps.copy(), values,
                        None if self.labels is None else self.labels.copy())

    def subset(self, mask) -> "RawTable":
        return RawTable(self.modality, list(self.feature_names), self.timestamps[mask], self.values[mask],
                        None if self.labels is None else self.labels[mask])


# csv ------------------------------------------------------------------------


def ingest_csv(path, modality: str, expected_feature_count: int | None = None) -> RawTable:
    """Read a modality table.

    Layout: first column ``timestamp`` (seconds), then one column per feature,
    optionally a final ``label`` column of 0/1. Empty cells are missing.
    """
    if modality not in MODALITIES:
        raise IngestError(f"unknown modality {modality!r}")
    expected = DEFAULT_FEATURE_COUNT[modality] if expected_feature_count is None else expected_feature_count
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"no such file: {path}")

    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise IngestError(f"{path}: empty file, header row required") from None
        if not header or header[0].lower() != "timestamp":
            raise IngestError(f"{path}: first column must be 'timestamp', found {header[:1]}")
        has_label = header[-1].lower() == "label"
        names = header[1:-1] if has_label else header[1:]
        if len(names) != expected:
            raise IngestError(
                f"{path}: {modality} table must have {expected} feature columns, found {len(names)}")

        width = len(header)
        ts, rows, labels = [], [], []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != width:
                raise IngestError(f"{path}: line {lineno} has {len(row)} cells, header has {width}")
            ts.append(_parse_float(row[0], path, lineno, "timestamp", allow_empty=False))
            rows.append([_parse_float(cell, path, lineno, names[j]) for j, cell in enumerate(row[1:1 + len(names)])])
            if has_label:
                cell = row[-1].strip()
                if cell not in ("0", "1"):
                    raise IngestError(f"{path}: line {lineno}, column 'label': expected 0 or 1, got {cell!r}")
                labels.append(int(cell))

    ts = np.array(ts, dtype=np.float64)
    bad = np.nonzero(np.diff(ts) < 0)[0]
    if bad.size:
        raise IngestError(f"{path}: timestamps not sorted at line {bad[0] + 3}")
    values = np.array(rows, dtype=np.float64).reshape(len(ts), len(names))
    return RawTable(modality, names, ts, values, np.array(labels, dtype=np.int64) if has_label else None)


def _parse_float(cell: str, path, lineno: int, column: str, allow_empty: bool = True) -> float:
    cell = cell.strip()
    if cell == "":
        if allow_empty:
            return math.nan
        raise IngestError(f"{path}: line {lineno}, column {column!r}: empty cell")
    try:
        value = float(cell)
    except ValueError:
        raise IngestError(f"{path}: line {lineno}, column {column!r}: cannot parse {cell!r}") from None
    if not math.isfinite(value):
        raise IngestError(f"{path}: line {lineno}, column {column!r}: non-finite value {cell!r}")
    return value


def write_csv(table: RawTable, path, float_format: str = "{:.6f}") -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    header = ["timestamp", *table.feature_names]
    if table.labels is not None:
        header.append("label")
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for i in range(len(table)):
            row = [float_format.format(table.timestamps[i])]
            row += ["" if math.isnan(v) else float_format.format(v) for v in table.values[i]]
            if table.labels is not None:
                row.append(str(int(table.labels[i])))
            w.writerow(row)


# preprocessing stats --------------------------------------------------------


@dataclass
class FeatureStats:
    mean: float | None
    min: float | None
    max: float | None


@dataclass
class PreprocessStats:
    """Per-feature mean/min/max of observed training values, keyed by modality then feature."""

    features: dict[str, dict[str, FeatureStats]]

    @classmethod
    def fit(cls, *tables: RawTable) -> "PreprocessStats":
        features = {}
        for table in tables:
            per = {}
            for j, name in enumerate(table.feature_names):
                col = table.values[:, j]
                obs = col[~np.isnan(col)]
                if obs.size == 0:
                    per[name] = FeatureStats(None, None, None)
                else:
                    per[name] = FeatureStats(float(np.mean(obs)), float(np.min(obs)), float(np.max(obs)))
            features[table.modality] = per
        return cls(features)

    def columns(self, table: RawTable) -> list[FeatureStats]:
        try:
            per = self.features[table.modality]
        except KeyError:
            raise PreprocessError(f"no statistics for modality {table.modality!r}") from None
        out = []
        for name in table.feature_names:
            if name not in per:
                raise PreprocessError(f"no statistics for {table.modality} feature {name!r}")
            out.append(per[name])
        return out

    def to_dict(self) -> dict:
        return {mod: {name: {"mean": s.mean, "min": s.min, "max": s.max} for name, s in per.items()}
                for mod, per in self.features.items()}

    @classmethod
    def from_dict(cls, d: dict) -> "PreprocessStats":
        return cls({mod: {name: FeatureStats(v["mean"], v["min"], v["max"]) for name, v in per.items()}
                    for mod, per in d.items()})

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path) -> "PreprocessStats":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def impute_missing(table: RawTable, stats: PreprocessStats) -> RawTable:
    """Replace missing cells with the feature's training mean."""
    values = table.values.copy()
    for j, s in enumerate(stats.columns(table)):
        if s.mean is None:
            raise PreprocessError(
                f"cannot impute {table.modality} feature {table.feature_names[j]!r}: "
                "no observed values in the training split")
        col = values[:, j]
        col[np.isnan(col)] = s.mean
    return table.with_values(values)


def minmax_normalize(table: RawTable, stats: PreprocessStats) -> RawTable:
    """Scale to [0, 1] with training min/max; constant features map to 0, unseen extremes are clipped."""
    if np.isnan(table.values).any():
        raise PreprocessError(f"{table.modality} table still has missing values; impute first")
    values = np.zeros_like(table.values)
    for j, s in enumerate(stats.columns(table)):
        if s.min is None or s.max is None:
            raise PreprocessError(f"no range for {table.modality} feature {table.feature_names[j]!r}")
        span = s.max - s.min
        if span > 0:
            values[:, j] = np.clip((table.values[:, j] - s.min) / span, 0.0, 1.0)
    return table.with_values(values)


def preprocess(table: RawTable, stats: PreprocessStats) -> RawTable:
    return minmax_normalize(impute_missing(table, stats), stats)


# alignment ------------------------------------------------------------------


@dataclass
class AlignedSample:
    x_s: np.ndarray  # (sensor features,)
    x_n: np.ndarray  # (T, network features), oldest row first
    y: int


@dataclass
class AlignedSet:
    """Stacked aligned samples; indexing yields :class:`AlignedSample`."""

    x_s: np.ndarray  # (M, Fs)
    x_n: np.ndarray  # (M, T, Fn)
    y: np.ndarray  # (M,)
    timestamps: np.ndarray  # sensor timestamps (M,)

    def __len__(self) -> int:
        return len(self.y)

    def __getitem__(self, i):
        if isinstance(i, (int, np.integer)):
            return AlignedSample(self.x_s[i], self.x_n[i], int(self.y[i]))
        return AlignedSet(self.x_s[i], self.x_n[i], self.y[i], self.timestamps[i])

    def __iter__(self):
        for i in range(len(self)):
            yield self[i]

    @property
    def window(self) -> int:
        return self.x_n.shape[1]

    @classmethod
    def from_samples(cls, samples, timestamps=None) -> "AlignedSet":
        samples = list(samples)
        ts = np.arange(len(samples), dtype=np.float64) if timestamps is None else np.asarray(timestamps)
        return cls(np.stack([s.x_s for s in samples]), np.stack([s.x_n for s in samples]),
                   np.array([s.y for s in samples], dtype=np.int64), ts)


def align_indices(sensor_ts: np.ndarray, network_ts: np.ndarray, window: int):
    """Sensor rows that have ``window`` network rows at or before them.

    Returns (kept sensor row indices, end index into the network table per kept row).
    """
    if window < 1:
        raise ValueError(f"window must be >= 1, got {window}")
    ends = np.searchsorted(network_ts, sensor_ts, side="right")
    keep = np.nonzero(ends >= window)[0]
    return keep, ends[keep]


def align_modalities(sensor: RawTable, network: RawTable, window: int) -> AlignedSet:
    """Pair each sensor row at time t with the last ``window`` network rows stamped <= t."""
    if sensor.labels is None:
        raise ValueError("sensor table carries no label column")
    keep, ends = align_indices(sensor.timestamps, network.timestamps, window)
    if keep.size == 0:
        raise ValueError(f"no sensor row has {window} preceding network rows")
    offsets = ends[:, None] - window + np.arange(window)[None, :]
    return AlignedSet(sensor.values[keep], network.values[offsets], sensor.labels[keep].copy(),
                      sensor.timestamps[keep].copy())


def split_chronological(samples: AlignedSet, train_fraction: float = 0.7):
    """First floor(fraction * M) samples train, the rest test. No shuffling."""
    if not 0.0 < train_fraction < 1.0:
        raise ValueError(f"train_fraction must be in (0, 1), got {train_fraction}")
    n_train = train_split_size(len(samples), train_fraction)
    train, test = samples[:n_train], samples[n_train:]
    for label, part in (("train", train), ("test", test)):
        present = set(np.unique(part.y).tolist())
        if present != {0, 1}:
            warnings.warn(f"{label} split lacks class(es) {sorted({0, 1} - present)}", stacklevel=2)
    return train, test


def train_split_size(m: int, train_fraction: float) -> int:
    n_train = int(math.floor(train_fraction * m))
    if n_train == 0 or n_train == m:
        raise ValueError(f"split of {m} samples at {train_fraction} leaves an empty side")
    return n_train


@dataclass
class PreparedData:
    train: AlignedSet
    test: AlignedSet
    stats: PreprocessStats


def prepare_dataset(sensor: RawTable, network: RawTable, window: int, train_fraction: float,
                    stats: PreprocessStats | None = None) -> PreparedData:
    """Split by time, fit stats on the training range only, preprocess, align.

    The training range ends at the timestamp of the last training sample; rows of
    either modality stamped after it never reach the statistics.
    """
    keep, _ = align_indices(sensor.timestamps, network.timestamps, window)
    if keep.size == 0:
        raise ValueError(f"no sensor row has {window} preceding network rows")
    n_train = train_split_size(keep.size, train_fraction)
    cutoff = sensor.timestamps[keep[n_train - 1]]
    if stats is None:
        stats = PreprocessStats.fit(sensor.subset(sensor.timestamps <= cutoff),
                                    network.subset(network.timestamps <= cutoff))
    aligned = align_modalities(preprocess(sensor, stats), preprocess(network, stats), window)
    train, test = split_chronological(aligned, train_fraction)
    return PreparedData(train, test, stats)
