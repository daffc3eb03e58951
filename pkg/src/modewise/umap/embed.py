"""End-to-end embedding of per-cycle sensor vectors."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import graph as _graph
from . import layout as _layout


@dataclass(frozen=True)
class UmapConfig:
    """Embedding hyperparameters (defaults follow the reference study)."""

    n_neighbors: int = 80
    min_dist: float = 1.0
    n_components: int = 2
    epochs: int = 500
    learning_rate: float = 1.0
    negative_sample_rate: int = 5
    seed: int = 42
    knn_backend: str = "exact"
    knn_eps: float = 0.0


@dataclass(frozen=True)
class LayoutModel:
    """Fitted layout state: embedded points plus the kernel/optimizer settings."""

    points: np.ndarray
    alpha: float
    beta: float
    config: UmapConfig
    n_sigma_floored: int = 0


@dataclass(frozen=True)
class Embedding:
    """One embedded point per input row, keyed by (unit_id, cycle)."""

    unit_ids: np.ndarray   # (N,)
    cycles: np.ndarray     # (N,)
    points: np.ndarray     # (N, D)
    model: LayoutModel

    def __post_init__(self):
        if not (len(self.unit_ids) == len(self.cycles) == len(self.points)):
            raise ValueError("unit_ids, cycles and points must align row-wise")

    def by_unit(self) -> dict[int, tuple[np.ndarray, np.ndarray]]:
        """Per-unit (cycles, points), sorted by cycle."""
        out = {}
        for uid in np.unique(self.unit_ids):
            mask = self.unit_ids == uid
            order = np.argsort(self.cycles[mask], kind="stable")
            out[int(uid)] = (self.cycles[mask][order], self.points[mask][order])
        return out


def units_to_rows(units) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Stack per-cycle sensor vectors of many units into one matrix.

    Returns (X, unit_ids, cycles, rul) with one row per (unit, cycle).
    """
    xs, uids, cycles, ruls = [], [], [], []
    for u in units:
        xs.append(u.sensors)
        uids.append(np.full(u.n_cycles, u.unit_id, dtype=np.int64))
        cycles.append(u.cycles)
        ruls.append(u.rul)
    return np.vstack(xs), np.concatenate(uids), np.concatenate(cycles), np.concatenate(ruls)


def embed_rows(rows, config: UmapConfig, unit_ids=None, cycles=None) -> Embedding:
    """Project rows to ``config.n_components`` dimensions.

    Stages: neighbor graph -> bandwidth calibration -> fuzzy weights ->
    symmetrization -> kernel fit -> spectral init -> SGD layout.
    """
    rows = np.asarray(rows, dtype=np.float64)
    n = rows.shape[0]
    if unit_ids is None:
        unit_ids = np.zeros(n, dtype=np.int64)
    if cycles is None:
        cycles = np.arange(1, n + 1, dtype=np.int64)

    ng = _graph.build_neighbor_graph(rows, config.n_neighbors,
                                     backend=config.knn_backend, eps=config.knn_eps)
    alpha, beta = _layout.fit_curve_params(config.min_dist)
    y0 = _layout.spectral_init(ng.adjacency, config.n_components, seed=config.seed)
    y = _layout.optimize_layout(
        ng.adjacency, y0, alpha, beta,
        epochs=config.epochs,
        learning_rate=config.learning_rate,
        negative_sample_rate=config.negative_sample_rate,
        seed=config.seed,
    )
    model = LayoutModel(points=y, alpha=alpha, beta=beta, config=config,
                        n_sigma_floored=ng.n_sigma_floored)
    return Embedding(unit_ids=np.asarray(unit_ids, dtype=np.int64),
                     cycles=np.asarray(cycles, dtype=np.int64),
                     points=y, model=model)


def export_embedding_csv(path, embedding: Embedding, rul=None) -> Path:
    """Write one row per embedded point: unit_id, cycle, rul, y_1..y_D."""
    path = Path(path)
    d = embedding.points.shape[1]
    rul = np.full(len(embedding.unit_ids), np.nan) if rul is None else np.asarray(rul)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["unit_id", "cycle", "rul"] + [f"y_{i + 1}" for i in range(d)])
        for i in range(len(embedding.unit_ids)):
            writer.writerow(
                [int(embedding.unit_ids[i]), int(embedding.cycles[i]), repr(float(rul[i]))]
                + [repr(float(v)) for v in embedding.points[i]]
            )
    return path


def read_embedding_csv(path) -> tuple[Embedding, np.ndarray]:
    """Inverse of :func:`export_embedding_csv` (model state is not restored)."""
    unit_ids, cycles, ruls, pts = [], [], [], []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        d = len(header) - 3
        for row in reader:
            unit_ids.append(int(row[0]))
            cycles.append(int(row[1]))
            ruls.append(float(row[2]))
            pts.append([float(v) for v in row[3:3 + d]])
    points = np.asarray(pts)
    model = LayoutModel(points=points, alpha=float("nan"), beta=float("nan"),
                        config=UmapConfig(n_components=points.shape[1]))
    emb = Embedding(unit_ids=np.asarray(unit_ids, dtype=np.int64),
                    cycles=np.asarray(cycles, dtype=np.int64),
                    points=points, model=model)
    return emb, np.asarray(ruls)
