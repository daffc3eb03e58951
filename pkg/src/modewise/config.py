"""Run configuration: a sectioned key-value file, hashed per pipeline stage.

The format is INI (human-diffable); defaults mirror the reference study
(window 60 / stride 1, 80 neighbors, min_dist 1, loss balance 10, seed 42).
Each pipeline stage hashes its own config subset chained with its upstream
stage hashes, so changing anything upstream invalidates everything below.
"""

from __future__ import annotations

import configparser
import hashlib
import os
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ConfigError

DATA_ROOT_ENV = "MODEWISE_DATA_ROOT"


@dataclass(frozen=True)
class DataConfig:
    dataset: str = "FD003"
    root: str = ""

    def resolved_root(self) -> Path:
        root = self.root or os.environ.get(DATA_ROOT_ENV, "")
        if not root:
            raise ConfigError(
                f"no dataset root configured (set [data] root or ${DATA_ROOT_ENV})"
            )
        return Path(root)

    def train_path(self) -> Path:
        return self.resolved_root() / f"train_{self.dataset}.txt"

    def test_path(self) -> Path:
        return self.resolved_root() / f"test_{self.dataset}.txt"

    def rul_path(self) -> Path:
        return self.resolved_root() / f"RUL_{self.dataset}.txt"


@dataclass(frozen=True)
class WindowConfig:
    ntw: int = 60
    stride: int = 1
    pad_short_test: bool = True


@dataclass(frozen=True)
class EmbeddingConfig:
    n_neighbors: int = 80
    min_dist: float = 1.0
    n_components: int = 2
    epochs: int = 500
    learning_rate: float = 1.0
    negative_sample_rate: int = 5
    knn_backend: str = "exact"


@dataclass(frozen=True)
class ClusteringConfig:
    n_modes: int = 0  # 0 = pick automatically (silhouette + elbow fallback)
    restarts: int = 10
    max_iter: int = 100
    tol: float = 1e-4


@dataclass(frozen=True)
class TrainingConfig:
    rul_weight: float = 10.0
    mono_weight: float = 0.0
    mono_slope: float = -1.0
    mono_tolerance: float = 0.9
    hidden: tuple[int, int] = (32, 32)
    epochs: int = 2000
    batch_size: int = 256
    learning_rate: float = 1e-4
    folds: int = 5


@dataclass(frozen=True)
class ReproduceConfig:
    etas: tuple[float, ...] = (0.0, 0.5, 1.0)
    lambdas: tuple[float, ...] = (1.0, 10.0, float("inf"))


@dataclass(frozen=True)
class RunConfig:
    seed: int = 42
    threads: int = 0
    data: DataConfig = field(default_factory=DataConfig)
    windows: WindowConfig = field(default_factory=WindowConfig)
    embedding: EmbeddingConfig = field(default_factory=EmbeddingConfig)
    clustering: ClusteringConfig = field(default_factory=ClusteringConfig)
    training: TrainingConfig = field(default_factory=TrainingConfig)
    reproduce: ReproduceConfig = field(default_factory=ReproduceConfig)

    # ---- stage hashing ------------------------------------------------------

    def _lines(self, section: str, obj) -> list[str]:
        out = []
        for k in sorted(vars(obj)):
            v = getattr(obj, k)
            if isinstance(v, tuple):
                v = ",".join(str(x) for x in v)
            out.append(f"{section}.{k}={v}")
        return out

    def stage_hash(self, stage: str) -> str:
        """Chained hash of this stage's config subset plus its upstream hash."""
        if stage == "preprocess":
            lines = self._lines("data", self.data) + self._lines("windows", self.windows)
        elif stage == "embed":
            lines = ([f"upstream={self.stage_hash('preprocess')}", f"run.seed={self.seed}"]
                     + self._lines("embedding", self.embedding))
        elif stage == "cluster":
            lines = ([f"upstream={self.stage_hash('embed')}"]
                     + self._lines("clustering", self.clustering))
        elif stage == "train":
            lines = ([f"upstream={self.stage_hash('cluster')}", f"run.seed={self.seed}"]
                     + self._lines("training", self.training))
        elif stage == "evaluate":
            lines = [f"upstream={self.stage_hash('train')}"]
        else:
            raise ValueError(f"unknown stage {stage!r}")
        return hashlib.sha256("\n".join(lines).encode()).hexdigest()[:12]


def _get(parser, section, key, cast, default):
    if not parser.has_option(section, key):
        return default
    raw = parser.get(section, key)
    try:
        if cast is bool:
            return parser.getboolean(section, key)
        if cast == "floats":
            return tuple(float("inf") if t.strip() in ("inf", "Inf") else float(t)
                         for t in raw.split(",") if t.strip())
        if cast == "int_pair":
            parts = [int(t) for t in raw.split(",")]
            if len(parts) != 2:
                raise ValueError("expected two integers")
            return tuple(parts)
        if cast is float and raw.strip() in ("inf", "Inf"):
            return float("inf")
        return cast(raw)
    except ValueError as exc:
        raise ConfigError(f"[{section}] {key}: cannot parse {raw!r} ({exc})") from exc


def load_config(path=None, overrides: dict | None = None) -> RunConfig:
    """Read a config file (all keys optional) plus CLI overrides."""
    parser = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    if path is not None:
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"config file {path} does not exist")
        parser.read(path)

    cfg = RunConfig(
        seed=_get(parser, "run", "seed", int, 42),
        threads=_get(parser, "run", "threads", int, 0),
        data=DataConfig(
            dataset=_get(parser, "data", "dataset", str, "FD003"),
            root=_get(parser, "data", "root", str, ""),
        ),
        windows=WindowConfig(
            ntw=_get(parser, "windows", "ntw", int, 60),
            stride=_get(parser, "windows", "stride", int, 1),
            pad_short_test=_get(parser, "windows", "pad_short_test", bool, True),
        ),
        embedding=EmbeddingConfig(
            n_neighbors=_get(parser, "embedding", "n_neighbors", int, 80),
            min_dist=_get(parser, "embedding", "min_dist", float, 1.0),
            n_components=_get(parser, "embedding", "n_components", int, 2),
            epochs=_get(parser, "embedding", "epochs", int, 500),
            learning_rate=_get(parser, "embedding", "learning_rate", float, 1.0),
            negative_sample_rate=_get(parser, "embedding", "negative_sample_rate", int, 5),
            knn_backend=_get(parser, "embedding", "knn_backend", str, "exact"),
        ),
        clustering=ClusteringConfig(
            n_modes=_get(parser, "clustering", "n_modes", int, 0),
            restarts=_get(parser, "clustering", "restarts", int, 10),
            max_iter=_get(parser, "clustering", "max_iter", int, 100),
            tol=_get(parser, "clustering", "tol", float, 1e-4),
        ),
        training=TrainingConfig(
            rul_weight=_get(parser, "training", "rul_weight", float, 10.0),
            mono_weight=_get(parser, "training", "mono_weight", float, 0.0),
            mono_slope=_get(parser, "training", "mono_slope", float, -1.0),
            mono_tolerance=_get(parser, "training", "mono_tolerance", float, 0.9),
            hidden=_get(parser, "training", "hidden", "int_pair", (32, 32)),
            epochs=_get(parser, "training", "epochs", int, 2000),
            batch_size=_get(parser, "training", "batch_size", int, 256),
            learning_rate=_get(parser, "training", "learning_rate", float, 1e-4),
            folds=_get(parser, "training", "folds", int, 5),
        ),
        reproduce=ReproduceConfig(
            etas=_get(parser, "reproduce", "etas", "floats", (0.0, 0.5, 1.0)),
            lambdas=_get(parser, "reproduce", "lambdas", "floats", (1.0, 10.0, float("inf"))),
        ),
    )

    from dataclasses import replace
    for key, value in (overrides or {}).items():
        if value is None:
            continue
        if key == "seed":
            cfg = replace(cfg, seed=int(value))
        elif key == "threads":
            cfg = replace(cfg, threads=int(value))
        elif key == "data_root":
            cfg = replace(cfg, data=replace(cfg.data, root=str(value)))
        elif key == "dataset":
            cfg = replace(cfg, data=replace(cfg.data, dataset=str(value)))
        else:
            raise ConfigError(f"unknown override {key!r}")
    return cfg
