"""Dataset loading, normalization, windowing and synthetic series generation."""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from transde.errors import DataError

STD_FLOOR = 1e-8
ANOMALY_KINDS = ("spike", "level-shift", "frequency-change")


@dataclass
class TimeSeriesDataset:
    values: np.ndarray  # (T, d)
    labels: Optional[np.ndarray] = None  # (T,) in {0, 1}
    name: str = "series"
    split: str = "train"
    anomalies: list = field(default_factory=list)

    def __post_init__(self) -> None:
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2:
            raise DataError(f"values must be 2-D (T, d), got shape {self.values.shape}")
        if self.values.shape[0] == 0:
            raise DataError("empty series")
        if not np.all(np.isfinite(self.values)):
            raise DataError("values contain NaN or Inf")
        if self.labels is not None:
            labels = np.asarray(self.labels)
            if labels.shape != (self.values.shape[0],):
                raise DataError(
                    f"labels length {labels.size} does not match series length {self.values.shape[0]}"
                )
            if not np.all((labels == 0) | (labels == 1)):
                raise DataError("labels must be 0 or 1")
            self.labels = labels.astype(np.int64)
        if self.split not in ("train", "test"):
            raise DataError(f"unknown split {self.split!r}")

    @property
    def T(self) -> int:
        return self.values.shape[0]

    @property
    def d(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True)
class NormalizerStats:
    mean: np.ndarray
    std: np.ndarray

    @property
    def d(self) -> int:
        return self.mean.shape[0]

    def inverse(self, values: np.ndarray) -> np.ndarray:
        return values * self.std + self.mean


@dataclass(frozen=True)
class WindowBatch:
    windows: np.ndarray  # (B, W, d)
    origin_indices: np.ndarray  # (B,)
    stride: int


# ---------------------------------------------------------------------------
# loaders
# ---------------------------------------------------------------------------


def load_csv(path, has_labels: bool = False, name: Optional[str] = None,
             split: str = "train") -> TimeSeriesDataset:
    """Read a headered, comma-separated file.

    When ``has_labels`` is set the final column must be named ``label``.
    Numbers are parsed with ``float`` so the decimal separator is always a dot,
    whatever the process locale.
    """
    path = Path(path)
    if not path.is_file():
        raise DataError(f"missing file: {path}")
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: no header row") from None
        rows = [r for r in reader if r]
    width = len(header)
    if has_labels:
        if header[-1].strip() != "label":
            raise DataError(f"{path}: last column must be named 'label'")
        if width < 2:
            raise DataError(f"{path}: no value columns")
    if not rows:
        raise DataError("empty series")

    data = np.empty((len(rows), width), dtype=np.float64)
    for r, row in enumerate(rows, start=1):
        if len(row) != width:
            raise DataError(f"ragged row {r}: expected {width} cells, got {len(row)}")
        for c, cell in enumerate(row, start=1):
            try:
                data[r - 1, c - 1] = float(cell)
            except ValueError:
                raise DataError(f"non-numeric cell at row {r}, col {c}") from None

    labels = None
    if has_labels:
        labels = data[:, -1]
        bad = np.flatnonzero((labels != 0) & (labels != 1))
        if bad.size:
            raise DataError(f"label outside {{0,1}} at row {bad[0] + 1}")
        data = data[:, :-1]
    return TimeSeriesDataset(data, labels, name=name or path.stem, split=split)


def load_raw(path, meta=None, split: str = "train") -> TimeSeriesDataset:
    """Read ``<name>.f32`` (little-endian float32, row-major T x d) with its JSON sidecar.

    ``meta`` is either a dict or a path to the sidecar; by default the sidecar is
    ``<name>.json`` next to the data file.  A ``labels`` entry, if present, names
    a headerless file with one 0/1 per line, resolved relative to the sidecar.
    """
    path = Path(path)
    side_dir = path.parent
    if meta is None:
        meta = path.with_suffix(".json")
    if not isinstance(meta, dict):
        meta_path = Path(meta)
        side_dir = meta_path.parent
        try:
            meta = json.loads(meta_path.read_text(encoding="utf-8"))
        except (OSError, ValueError) as exc:
            raise DataError(f"unreadable sidecar {meta_path}: {exc}") from None
    try:
        T, d = int(meta["T"]), int(meta["d"])
    except (KeyError, TypeError, ValueError):
        raise DataError("sidecar must define integer fields 'T' and 'd'") from None
    if T <= 0:
        raise DataError("empty series")
    if d <= 0:
        raise DataError("sidecar d must be positive")
    if not path.is_file():
        raise DataError(f"missing file: {path}")
    blob = path.read_bytes()
    if len(blob) != 4 * T * d:
        raise DataError(f"size mismatch: {len(blob)} bytes for T={T}, d={d} (expected {4 * T * d})")
    values = np.frombuffer(blob, dtype="<f4").reshape(T, d).astype(np.float64)

    labels = None
    if meta.get("labels"):
        label_path = Path(meta["labels"])
        if not label_path.is_absolute():
            label_path = side_dir / label_path
        try:
            labels = np.loadtxt(label_path, dtype=np.float64, ndmin=1)
        except (OSError, ValueError) as exc:
            raise DataError(f"unreadable label file {label_path}: {exc}") from None
    return TimeSeriesDataset(values, labels, name=path.stem, split=split)


def save_raw(ds: TimeSeriesDataset, path) -> None:
    path = Path(path)
    path.write_bytes(np.ascontiguousarray(ds.values, dtype="<f4").tobytes())
    meta = {"T": ds.T, "d": ds.d}
    if ds.labels is not None:
        label_path = path.with_suffix(".labels.txt")
        np.savetxt(label_path, ds.labels, fmt="%d")
        meta["labels"] = label_path.name
    path.with_suffix(".json").write_text(json.dumps(meta), encoding="utf-8")


def save_csv(ds: TimeSeriesDataset, path, columns: Optional[Sequence[str]] = None) -> None:
    columns = list(columns) if columns is not None else [f"x{j}" for j in range(ds.d)]
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(columns + (["label"] if ds.labels is not None else []))
        for t in range(ds.T):
            row = [repr(float(v)) for v in ds.values[t]]
            if ds.labels is not None:
                row.append(str(int(ds.labels[t])))
            writer.writerow(row)


def load_dataset(path, has_labels: Optional[bool] = None, split: str = "train") -> TimeSeriesDataset:
    """Dispatch on file extension (``.csv`` or ``.f32``)."""
    path = Path(path)
    if path.suffix == ".f32":
        return load_raw(path, split=split)
    if has_labels is None:
        has_labels = _csv_has_label_column(path)
    return load_csv(path, has_labels=has_labels, split=split)


def _csv_has_label_column(path: Path) -> bool:
    if not path.is_file():
        raise DataError(f"missing file: {path}")
    with path.open(newline="", encoding="utf-8") as fh:
        header = next(csv.reader(fh), [])
    return bool(header) and header[-1].strip() == "label"


# ---------------------------------------------------------------------------
# normalization
# ---------------------------------------------------------------------------


def fit_normalizer(train: TimeSeriesDataset) -> NormalizerStats:
    if train.T < 2:
        raise DataError("need at least 2 timestamps to fit a normalizer")
    mean = train.values.mean(axis=0)
    std = np.maximum(train.values.std(axis=0), STD_FLOOR)
    return NormalizerStats(mean, std)


def apply_normalizer(ds: TimeSeriesDataset, stats: NormalizerStats) -> TimeSeriesDataset:
    if stats.d != ds.d:
        raise DataError(f"dimension mismatch: normalizer has d={stats.d}, dataset has d={ds.d}")
    return replace(ds, values=(ds.values - stats.mean) / stats.std)


# ---------------------------------------------------------------------------
# windowing
# ---------------------------------------------------------------------------


def window_origins(T: int, W: int, stride: int, cover_tail: bool = False) -> np.ndarray:
    if stride < 1:
        raise DataError("stride must be a positive integer")
    if W < 1 or W > T:
        raise DataError(f"window length {W} exceeds series length {T}")
    origins = np.arange(0, T - W + 1, stride)
    if cover_tail and origins[-1] != T - W:
        origins = np.append(origins, T - W)
    return origins


def sliding_windows(ds: TimeSeriesDataset, W: int, stride: Optional[int] = None,
                    cover_tail: bool = False) -> WindowBatch:
    """Cut ``ds`` into length-``W`` windows.

    ``stride`` defaults to ``W``.  With ``cover_tail`` an extra window anchored
    at ``T - W`` is appended when the strided windows miss trailing timestamps;
    that window breaks the uniform stride and is only meant for scoring.
    """
    stride = W if stride is None else stride
    origins = window_origins(ds.T, W, stride, cover_tail)
    windows = np.lib.stride_tricks.sliding_window_view(ds.values, W, axis=0)[origins]
    return WindowBatch(np.ascontiguousarray(windows.transpose(0, 2, 1)), origins, stride)


# ---------------------------------------------------------------------------
# synthetic data
# ---------------------------------------------------------------------------

NOISE_SIGMA = 0.1
# injection magnitudes, relative to the variable's main sinusoid amplitude
SPIKE_SCALE = (6.0, 10.0)
SHIFT_SCALE = (3.0, 5.0)
FREQ_FACTOR = (3.0, 5.0)
SEGMENT_LENGTH = (30, 91)
_SPLIT_SALT = {"train": 1, "test": 2}


@dataclass(frozen=True)
class SynthConfig:
    T: int = 4000
    d: int = 3
    seed: int = 0
    kinds: tuple = ANOMALY_KINDS
    anomaly_rate: float = 0.05
    split: str = "test"


def synthesize(config: SynthConfig) -> TimeSeriesDataset:
    """Two sinusoids per variable plus N(0, 0.1^2) noise, with optional injected anomalies.

    The sinusoid parameters depend only on ``seed``; noise and anomaly placement
    are also salted with ``split``, so the train and test splits of one seed share
    the same normal behaviour but not the same noise.  Every injection is
    recorded in ``dataset.anomalies``.
    """
    T, d = config.T, config.d
    if T < 200:
        raise DataError("synthetic series need T >= 200")
    if d < 1:
        raise DataError("synthetic series need d >= 1")
    kinds = tuple(config.kinds)
    unknown = set(kinds) - set(ANOMALY_KINDS)
    if unknown:
        raise DataError(f"unknown anomaly kinds: {sorted(unknown)}")
    if kinds and not 0.01 <= config.anomaly_rate <= 0.15:
        raise DataError("anomaly_rate must lie in [0.01, 0.15]")
    if config.split not in _SPLIT_SALT:
        raise DataError(f"unknown split {config.split!r}")

    shape_rng = np.random.default_rng(config.seed)
    periods = shape_rng.uniform([20.0, 70.0], [45.0, 160.0], size=(d, 2))
    amps = shape_rng.uniform([0.6, 0.3], [1.2, 0.8], size=(d, 2))
    phases = shape_rng.uniform(0.0, 2 * np.pi, size=(d, 2))
    offsets = shape_rng.normal(0.0, 1.0, size=d)

    rng = np.random.default_rng([config.seed, _SPLIT_SALT[config.split]])
    t = np.arange(T, dtype=np.float64)[:, None]
    freq = np.broadcast_to(2 * np.pi / periods[:, 0], (T, d)).copy()
    freq2 = 2 * np.pi / periods[:, 1]

    labels = np.zeros(T, dtype=np.int64)
    events: list = []
    shift = np.zeros((T, d))
    spikes = np.zeros((T, d))
    if kinds:
        target = int(round(config.anomaly_rate * T))
        margin = 20
        placed = 0
        attempts = 0
        while placed < target and attempts < 10000:
            attempts += 1
            kind = kinds[rng.integers(len(kinds))]
            length = 1 if kind == "spike" else int(rng.integers(*SEGMENT_LENGTH))
            length = min(length, target - placed) if kind != "spike" else 1
            start = int(rng.integers(margin, T - margin - length))
            lo, hi = start - margin, start + length + margin
            if labels[max(lo, 0):hi].any():
                continue
            var = int(rng.integers(d))
            sign = 1.0 if rng.random() < 0.5 else -1.0
            if kind == "spike":
                amp = sign * rng.uniform(*SPIKE_SCALE) * amps[var, 0]
                spikes[start, var] += amp
            elif kind == "level-shift":
                amp = sign * rng.uniform(*SHIFT_SCALE) * amps[var, 0]
                shift[start:start + length, var] += amp
            else:
                amp = float(rng.uniform(*FREQ_FACTOR))
                freq[start:start + length, var] *= amp
            labels[start:start + length] = 1
            placed += length
            events.append({"kind": kind, "start": start, "end": start + length,
                           "var": var, "amplitude": float(amp)})
        events.sort(key=lambda e: e["start"])

    # integrate the (possibly locally changed) angular frequency so phase stays continuous
    phase1 = phases[:, 0] + np.cumsum(freq, axis=0) - freq[0]
    base = (amps[:, 0] * np.sin(phase1)
            + amps[:, 1] * np.sin(freq2 * t + phases[:, 1])
            + offsets)
    noise = rng.normal(0.0, NOISE_SIGMA, size=(T, d))
    values = base + noise + shift + spikes
    return TimeSeriesDataset(values, labels, name=f"synth-{config.seed}", split=config.split,
                             anomalies=events)


def synthesize_pair(config: SynthConfig) -> tuple:
    """Clean train split and anomalous test split sharing one normal process."""
    train = synthesize(replace(config, kinds=(), split="train"))
    test = synthesize(replace(config, split="test"))
    return train, test
