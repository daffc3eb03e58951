"""Turbofan degradation data: loading, sensor filtering, scaling, windowing.

The on-disk format is the NASA C-MAPSS layout: whitespace-separated ASCII,
one row per (unit, cycle) with 26 columns -- unit id, cycle, three
operational settings and 21 sensor channels. Training units run to failure;
test units are truncated early and ship with a companion file holding the
true remaining life at the truncation point.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import CmapssFormatError, ConfigError, DataIntegrityError

log = logging.getLogger(__name__)

#: Sensor channel symbols, in file column order.
SENSOR_NAMES = (
    "T2", "T24", "T30", "T50", "P2", "P15", "P30", "Nf", "Nc", "epr",
    "Ps30", "phi", "NRf", "NRc", "BPR", "farB", "htBleed", "Nf_dmd",
    "PCNfR_dmd", "W31", "W32",
)

N_COLUMNS = 2 + 3 + len(SENSOR_NAMES)

DROP_SINGLE_VALUE = "single-value"
DROP_MISSING = ">=50%-missing"
DROP_LOW_STD = "low-std"


@dataclass(frozen=True)
class UnitSeries:
    """One unit's multivariate series with cycle index and RUL labels.

    ``sensors`` is (T, S); ``rul`` is NaN when the unit is unlabeled
    (test split loaded without a truth file).
    """

    unit_id: int
    cycles: np.ndarray
    sensors: np.ndarray
    sensor_names: tuple[str, ...]
    op_settings: np.ndarray
    rul: np.ndarray

    @property
    def n_cycles(self) -> int:
        return int(self.cycles.shape[0])

    def __post_init__(self):
        t = self.cycles.shape[0]
        if self.sensors.shape[0] != t or self.op_settings.shape[0] != t or self.rul.shape[0] != t:
            raise ValueError(f"unit {self.unit_id}: inconsistent row counts")
        if self.sensors.shape[1] != len(self.sensor_names):
            raise ValueError(f"unit {self.unit_id}: sensor matrix does not match sensor_names")


@dataclass(frozen=True)
class SensorFilterReport:
    """Which sensors survived the non-informative filter, and why others did not."""

    dropped: dict[str, str]
    retained: tuple[str, ...]

    def to_dict(self) -> dict:
        return {"dropped": dict(self.dropped), "retained": list(self.retained)}


@dataclass(frozen=True)
class MinMaxStats:
    """Per-sensor min/max computed on pooled training rows."""

    sensor_names: tuple[str, ...]
    minimum: np.ndarray
    maximum: np.ndarray

    def to_dict(self) -> dict:
        return {
            "sensor_names": list(self.sensor_names),
            "minimum": self.minimum.tolist(),
            "maximum": self.maximum.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MinMaxStats":
        return cls(
            sensor_names=tuple(d["sensor_names"]),
            minimum=np.asarray(d["minimum"], dtype=float),
            maximum=np.asarray(d["maximum"], dtype=float),
        )


@dataclass
class WindowInstance:
    """A sliding-window slice (ntw x S) with its RUL target.

    ``mode_onehot`` is attached after failure-mode discovery and stays None
    for unlabeled data.
    """

    unit_id: int
    end_cycle: int
    window: np.ndarray
    rul_target: float
    mode_onehot: np.ndarray | None = None


@dataclass
class WindowArrays:
    """Stacked window instances for array-oriented consumers."""

    X: np.ndarray            # (M, ntw, S)
    y: np.ndarray            # (M,)
    unit_ids: np.ndarray     # (M,)
    end_cycles: np.ndarray   # (M,)
    mode_onehot: np.ndarray | None = None  # (M, V)

    def __len__(self) -> int:
        return int(self.X.shape[0])


def _parse_rows(path: Path) -> np.ndarray:
    rows = []
    with open(path, "r", encoding="ascii") as fh:
        for lineno, line in enumerate(fh, start=1):
            parts = line.split()
            if not parts:
                continue
            if len(parts) != N_COLUMNS:
                raise CmapssFormatError(
                    f"{path}:{lineno}: expected {N_COLUMNS} columns, got {len(parts)}"
                )
            try:
                rows.append([float(p) for p in parts])
            except ValueError as exc:
                raise CmapssFormatError(f"{path}:{lineno}: unparseable value ({exc})") from exc
    if not rows:
        raise CmapssFormatError(f"{path}: no data rows")
    return np.asarray(rows, dtype=float)


def _read_rul_truth(path: Path) -> np.ndarray:
    values = []
    with open(path, "r", encoding="ascii") as fh:
        for lineno, line in enumerate(fh, start=1):
            s = line.strip()
            if not s:
                continue
            try:
                values.append(float(s.split()[0]))
            except ValueError as exc:
                raise CmapssFormatError(f"{path}:{lineno}: unparseable RUL value") from exc
    return np.asarray(values, dtype=float)


def load_cmapss(path, split="train", rul_truth_path=None) -> list[UnitSeries]:
    """Load one C-MAPSS-format file into per-unit series.

    Training units get RUL by counting down to 0 at the recorded failure
    cycle. Test units get per-cycle RUL from the companion truth file
    (truth value at truncation plus cycles still to come); without a truth
    file their RUL is NaN.
    """
    if split not in ("train", "test"):
        raise ValueError(f"split must be 'train' or 'test', got {split!r}")
    path = Path(path)
    data = _parse_rows(path)

    unit_col = data[:, 0]
    if not np.all(unit_col == np.round(unit_col)):
        raise CmapssFormatError(f"{path}: non-integer unit ids")
    unit_ids = unit_col.astype(np.int64)
    order = np.unique(unit_ids)

    truth = None
    if split == "test" and rul_truth_path is not None:
        truth = _read_rul_truth(Path(rul_truth_path))
        if truth.shape[0] != order.shape[0]:
            raise DataIntegrityError(
                f"{rul_truth_path}: {truth.shape[0]} truth values for {order.shape[0]} units"
            )

    units = []
    for pos, uid in enumerate(order):
        rows = data[unit_ids == uid]
        cycles = rows[:, 1].astype(np.int64)
        t = cycles.shape[0]
        if not np.array_equal(cycles, np.arange(1, t + 1)):
            raise DataIntegrityError(
                f"{path}: unit {uid} cycles are not consecutive from 1"
            )
        if split == "train":
            rul = (t - cycles).astype(float)
        elif truth is not None:
            rul = truth[pos] + (t - cycles).astype(float)
        else:
            rul = np.full(t, np.nan)
        units.append(
            UnitSeries(
                unit_id=int(uid),
                cycles=cycles,
                sensors=rows[:, 5:].copy(),
                sensor_names=SENSOR_NAMES,
                op_settings=rows[:, 2:5].copy(),
                rul=rul,
            )
        )
    return units


def write_cmapss(path, units) -> None:
    """Serialize units back to the 26-column text format at full precision."""
    units = list(units)
    for u in units:
        if u.sensor_names != SENSOR_NAMES:
            raise ValueError(
                f"unit {u.unit_id}: only the full {len(SENSOR_NAMES)}-sensor layout can be serialized"
            )
    with open(path, "w", encoding="ascii") as fh:
        for u in units:
            for i in range(u.n_cycles):
                fields = [str(u.unit_id), str(int(u.cycles[i]))]
                fields += [repr(float(v)) for v in u.op_settings[i]]
                fields += [repr(float(v)) for v in u.sensors[i]]
                fh.write(" ".join(fields) + "\n")


def filter_sensors(units) -> tuple[list[UnitSeries], SensorFilterReport]:
    """Drop non-informative sensors using pooled statistics over all units.

    A sensor is dropped when it has a single distinct value, is >=50%
    missing, or its pooled standard deviation is below 0.01. The same
    columns are removed from every unit. Any NaN left in a retained sensor
    is a hard error.
    """
    units = list(units)
    if not units:
        raise ValueError("filter_sensors needs at least one unit")
    names = units[0].sensor_names
    pooled = np.vstack([u.sensors for u in units])

    dropped: dict[str, str] = {}
    keep_idx = []
    for j, name in enumerate(names):
        col = pooled[:, j]
        finite = col[~np.isnan(col)]
        if np.unique(finite).size == 1:
            dropped[name] = DROP_SINGLE_VALUE
        elif np.isnan(col).mean() >= 0.5:
            dropped[name] = DROP_MISSING
        elif finite.size and np.std(finite) < 0.01:
            dropped[name] = DROP_LOW_STD
        else:
            keep_idx.append(j)

    if not keep_idx:
        raise ConfigError("all sensors were dropped by the non-informative filter")

    retained = tuple(names[j] for j in keep_idx)
    if np.isnan(pooled[:, keep_idx]).any():
        raise DataIntegrityError("retained sensors still contain NaN values")

    filtered = [
        replace(u, sensors=u.sensors[:, keep_idx].copy(), sensor_names=retained)
        for u in units
    ]
    return filtered, SensorFilterReport(dropped=dropped, retained=retained)


def apply_sensor_filter(units, report: SensorFilterReport) -> list[UnitSeries]:
    """Drop the same sensor columns from another split (e.g. test units)."""
    units = list(units)
    names = units[0].sensor_names
    if set(names) != set(report.retained) | set(report.dropped):
        raise ValueError("sensor set does not match the filter report")
    keep_idx = [i for i, n in enumerate(names) if n in report.retained]
    retained = tuple(names[i] for i in keep_idx)
    return [
        replace(u, sensors=u.sensors[:, keep_idx].copy(), sensor_names=retained)
        for u in units
    ]


def fit_minmax(train) -> MinMaxStats:
    pooled = np.vstack([u.sensors for u in train])
    lo = pooled.min(axis=0)
    hi = pooled.max(axis=0)
    if np.any(hi <= lo):
        bad = [n for n, l, h in zip(train[0].sensor_names, lo, hi) if h <= l]
        raise DataIntegrityError(
            f"constant-range sensors survived filtering: {bad}"
        )
    return MinMaxStats(sensor_names=train[0].sensor_names, minimum=lo, maximum=hi)


def apply_minmax(units, stats: MinMaxStats, clamp: bool) -> list[UnitSeries]:
    out = []
    for u in units:
        if u.sensor_names != stats.sensor_names:
            raise ValueError(f"unit {u.unit_id}: sensor set does not match scaler stats")
        scaled = (u.sensors - stats.minimum) / (stats.maximum - stats.minimum)
        if clamp:
            scaled = np.clip(scaled, 0.0, 1.0)
        out.append(replace(u, sensors=scaled))
    return out


def normalize_minmax(train, test=()) -> tuple[list[UnitSeries], list[UnitSeries], MinMaxStats]:
    """Scale sensors to [0,1] with train statistics; test values are clamped."""
    train = list(train)
    stats = fit_minmax(train)
    scaled_train = apply_minmax(train, stats, clamp=False)
    scaled_test = apply_minmax(list(test), stats, clamp=True)
    return scaled_train, scaled_test, stats


def make_windows(units, ntw, stride=1, pad_short=False) -> list[WindowInstance]:
    """Cut per-unit sliding windows ending at cycles ntw, ntw+stride, ..., T.

    Units shorter than the window are either skipped (with a warning) or,
    with ``pad_short``, turned into a single window left-padded by repeating
    their earliest observation.
    """
    if ntw < 1:
        raise ValueError(f"ntw must be >= 1, got {ntw}")
    if stride < 1:
        raise ValueError(f"stride must be >= 1, got {stride}")

    instances = []
    for u in units:
        t = u.n_cycles
        if t < ntw:
            if not pad_short:
                log.warning("unit %d has %d cycles (< ntw=%d); skipped", u.unit_id, t, ntw)
                continue
            pad = np.repeat(u.sensors[:1], ntw - t, axis=0)
            window = np.vstack([pad, u.sensors])
            instances.append(
                WindowInstance(
                    unit_id=u.unit_id,
                    end_cycle=int(u.cycles[-1]),
                    window=window,
                    rul_target=float(u.rul[-1]),
                )
            )
            continue
        for end in range(ntw, t + 1, stride):
            instances.append(
                WindowInstance(
                    unit_id=u.unit_id,
                    end_cycle=int(u.cycles[end - 1]),
                    window=u.sensors[end - ntw:end],
                    rul_target=float(u.rul[end - 1]),
                )
            )
    return instances


def label_windows(windows, unit_to_mode: dict[int, int], n_modes: int) -> None:
    """Attach one-hot failure-mode labels in place from a per-unit map."""
    eye = np.eye(n_modes)
    for w in windows:
        if w.unit_id not in unit_to_mode:
            raise KeyError(f"no failure-mode label for unit {w.unit_id}")
        w.mode_onehot = eye[unit_to_mode[w.unit_id]].copy()


def stack_windows(windows) -> WindowArrays:
    windows = list(windows)
    if not windows:
        raise ValueError("no windows to stack")
    X = np.stack([w.window for w in windows])
    y = np.asarray([w.rul_target for w in windows], dtype=float)
    unit_ids = np.asarray([w.unit_id for w in windows], dtype=np.int64)
    end_cycles = np.asarray([w.end_cycle for w in windows], dtype=np.int64)
    onehot = None
    if all(w.mode_onehot is not None for w in windows):
        onehot = np.stack([w.mode_onehot for w in windows])
    return WindowArrays(X=X, y=y, unit_ids=unit_ids, end_cycles=end_cycles, mode_onehot=onehot)


MANIFEST_NAME = "dataset_manifest.json"


def save_window_dataset(directory, *, splits: dict[str, WindowArrays],
                        filter_report: SensorFilterReport, scaler: MinMaxStats,
                        ntw: int, stride: int, pad_short: bool,
                        extra: dict | None = None) -> Path:
    """Persist stacked windows as one .npz shard per split plus a JSON manifest."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    shard_files = {}
    for name, arrays in splits.items():
        shard = directory / f"{name}_windows.npz"
        payload = {
            "X": arrays.X,
            "y": arrays.y,
            "unit_ids": arrays.unit_ids,
            "end_cycles": arrays.end_cycles,
        }
        if arrays.mode_onehot is not None:
            payload["mode_onehot"] = arrays.mode_onehot
        np.savez_compressed(shard, **payload)
        shard_files[name] = shard.name
    manifest = {
        "format_version": 1,
        "shards": shard_files,
        "sensor_filter": filter_report.to_dict(),
        "scaler": scaler.to_dict(),
        "ntw": int(ntw),
        "stride": int(stride),
        "pad_short": bool(pad_short),
        "counts": {name: len(arrays) for name, arrays in splits.items()},
    }
    if extra:
        manifest.update(extra)
    manifest_path = directory / MANIFEST_NAME
    with open(manifest_path, "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
    return manifest_path


def load_window_dataset(directory) -> tuple[dict[str, WindowArrays], dict]:
    """Load shards written by :func:`save_window_dataset`."""
    directory = Path(directory)
    manifest_path = directory / MANIFEST_NAME
    if not manifest_path.exists():
        raise FileNotFoundError(f"{manifest_path} not found")
    with open(manifest_path) as fh:
        manifest = json.load(fh)
    splits = {}
    for name, fname in manifest["shards"].items():
        with np.load(directory / fname) as z:
            splits[name] = WindowArrays(
                X=z["X"],
                y=z["y"],
                unit_ids=z["unit_ids"],
                end_cycles=z["end_cycles"],
                mode_onehot=z["mode_onehot"] if "mode_onehot" in z.files else None,
            )
    return splits, manifest
