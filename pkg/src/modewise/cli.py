"""Command-line pipeline: preprocess | embed | cluster | train | evaluate | reproduce.

Each command validates its upstream artifacts through the run manifest,
skips itself when already completed with an identical configuration (unless
--force), and records its outputs. Plot-ready CSV/JSON is the only output
format; rendering is left to external tools.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from .config import DATA_ROOT_ENV, RunConfig, load_config
from .errors import (
    CmapssFormatError,
    ConfigError,
    DataIntegrityError,
    MissingArtifactError,
    ModewiseError,
)
from .manifest import (
    StageTimer,
    load_manifest,
    record_stage,
    require_stage,
    run_lock,
    save_manifest,
    stage_is_current,
)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_MISSING_ARTIFACT = 3
EXIT_DATA = 4
EXIT_RUNTIME = 5

TRAIN_ROWS = "train_rows.npz"
EMBEDDING_CSV = "embedding.csv"
EMBEDDING_META = "embedding_meta.json"
LABELS_CSV = "mode_labels.csv"
CENTROID_DIR = "centroids"
CLUSTER_JSON = "clustering.json"
TRAIN_LOG = "training_log.json"
REPORT_JSON = "report.json"
SUMMARY_CSV = "reproduce_summary.csv"


def _note_cache_hit(run_dir, stage):
    manifest = load_manifest(run_dir)
    entry = manifest["stages"][stage]
    notes = entry.setdefault("notes", {})
    notes["cache_hits"] = notes.get("cache_hits", 0) + 1
    save_manifest(run_dir, manifest)
    print(f"[{stage}] up to date (config hash {entry['config_hash']}); skipped")


def cmd_preprocess(cfg: RunConfig, run_dir: Path, force: bool) -> None:
    import numpy as np

    from . import dataset as ds

    stage_hash = cfg.stage_hash("preprocess")
    if not force and stage_is_current(run_dir, "preprocess", stage_hash):
        _note_cache_hit(run_dir, "preprocess")
        return

    train_path = cfg.data.train_path()
    test_path = cfg.data.test_path()
    rul_path = cfg.data.rul_path()
    for p in (train_path, test_path, rul_path):
        if not p.exists():
            raise ConfigError(f"dataset file {p} does not exist")

    with StageTimer() as timer:
        train_units = ds.load_cmapss(train_path, split="train")
        test_units = ds.load_cmapss(test_path, split="test", rul_truth_path=rul_path)

        train_f, report = ds.filter_sensors(train_units)
        test_f = ds.apply_sensor_filter(test_units, report)
        train_n, test_n, scaler = ds.normalize_minmax(train_f, test_f)

        w = cfg.windows
        train_w = ds.stack_windows(ds.make_windows(train_n, w.ntw, w.stride, pad_short=False))
        test_w = ds.stack_windows(ds.make_windows(test_n, w.ntw, w.stride,
                                                  pad_short=w.pad_short_test))

        out_dir = run_dir / "dataset"
        manifest_file = ds.save_window_dataset(
            out_dir, splits={"train": train_w, "test": test_w},
            filter_report=report, scaler=scaler,
            ntw=w.ntw, stride=w.stride, pad_short=w.pad_short_test,
            extra={"dataset": cfg.data.dataset, "stage_hash": stage_hash},
        )

        # per-cycle normalized rows of the training units feed the embedding
        from .umap import units_to_rows
        rows, unit_ids, cycles, rul = units_to_rows(train_n)
        rows_file = run_dir / TRAIN_ROWS
        np.savez_compressed(rows_file, rows=rows, unit_ids=unit_ids, cycles=cycles, rul=rul)

    artifacts = [manifest_file, out_dir / "train_windows.npz", out_dir / "test_windows.npz", rows_file]
    record_stage(run_dir, "preprocess", stage_hash, artifacts, timer.elapsed,
                 notes={"sensors_dropped": sorted(report.dropped),
                        "n_train_windows": len(train_w), "n_test_windows": len(test_w)})
    print(f"[preprocess] {len(train_units)} train / {len(test_units)} test units; "
          f"dropped {sorted(report.dropped)}; {len(train_w)}/{len(test_w)} windows")


def cmd_embed(cfg: RunConfig, run_dir: Path, force: bool) -> None:
    import numpy as np

    from .umap import UmapConfig, embed_rows, export_embedding_csv

    stage_hash = cfg.stage_hash("embed")
    if not force and stage_is_current(run_dir, "embed", stage_hash):
        _note_cache_hit(run_dir, "embed")
        return
    require_stage(run_dir, "preprocess", cfg.stage_hash("preprocess"))

    with StageTimer() as timer:
        with np.load(run_dir / TRAIN_ROWS) as z:
            rows, unit_ids, cycles, rul = z["rows"], z["unit_ids"], z["cycles"], z["rul"]
        e = cfg.embedding
        ucfg = UmapConfig(
            n_neighbors=e.n_neighbors, min_dist=e.min_dist, n_components=e.n_components,
            epochs=e.epochs, learning_rate=e.learning_rate,
            negative_sample_rate=e.negative_sample_rate, seed=cfg.seed,
            knn_backend=e.knn_backend,
        )
        emb = embed_rows(rows, ucfg, unit_ids=unit_ids, cycles=cycles)
        csv_file = export_embedding_csv(run_dir / EMBEDDING_CSV, emb, rul=rul)
        meta_file = run_dir / EMBEDDING_META
        with open(meta_file, "w") as fh:
            json.dump({
                "alpha": emb.model.alpha, "beta": emb.model.beta,
                "n_sigma_floored": emb.model.n_sigma_floored,
                "n_rows": int(rows.shape[0]), "config": vars(e) | {"seed": cfg.seed},
            }, fh, indent=2, sort_keys=True)

    record_stage(run_dir, "embed", stage_hash, [csv_file, meta_file], timer.elapsed)
    print(f"[embed] {rows.shape[0]} rows -> {cfg.embedding.n_components}-d "
          f"(alpha={emb.model.alpha:.3f}, beta={emb.model.beta:.3f})")


def cmd_cluster(cfg: RunConfig, run_dir: Path, force: bool) -> None:
    import numpy as np

    from . import trajectory as tj
    from .metrics import clustering_diagnostics
    from .umap import read_embedding_csv

    stage_hash = cfg.stage_hash("cluster")
    if not force and stage_is_current(run_dir, "cluster", stage_hash):
        _note_cache_hit(run_dir, "cluster")
        return
    require_stage(run_dir, "embed", cfg.stage_hash("embed"))

    with StageTimer() as timer:
        emb, _ = read_embedding_csv(run_dir / EMBEDDING_CSV)
        trajs = tj.build_trajectories(emb)
        c = cfg.clustering
        chosen_diag = {}
        n_modes = c.n_modes
        if n_modes == 0:
            n_modes, chosen_diag = tj.choose_mode_count(trajs, restarts=max(2, c.restarts // 2),
                                                        seed=cfg.seed)
        result = tj.dtw_kmeans(trajs, n_modes, restarts=c.restarts,
                               max_iter=c.max_iter, tol=c.tol, seed=cfg.seed)
        labels_file = tj.export_labels_csv(run_dir / LABELS_CSV, result.labels)
        centroid_files = tj.export_centroids_csv(run_dir / CENTROID_DIR, result.centroids)

        silhouette = None
        if n_modes >= 2:
            dist = tj.pairwise_dtw(trajs)
            order = sorted(result.labels)
            lab = np.array([result.labels[u] for u in order])
            silhouette = clustering_diagnostics(lab, distance_matrix=dist).silhouette
        diag_file = run_dir / CLUSTER_JSON
        with open(diag_file, "w") as fh:
            json.dump({
                "n_modes": n_modes, "inertia": result.inertia,
                "best_restart": result.best_restart, "iterations": result.iterations,
                "converged": result.converged, "silhouette": silhouette,
                "mode_sizes": {str(v): sum(1 for x in result.labels.values() if x == v)
                               for v in range(n_modes)},
                "auto_choice": chosen_diag,
            }, fh, indent=2, sort_keys=True)

    record_stage(run_dir, "cluster", stage_hash,
                 [labels_file, diag_file] + centroid_files, timer.elapsed)
    print(f"[cluster] {len(trajs)} trajectories -> {n_modes} modes "
          f"(inertia {result.inertia:.1f}, silhouette {silhouette})")


def _load_labels(run_dir) -> dict[int, int]:
    import csv as _csv

    labels = {}
    with open(run_dir / LABELS_CSV, newline="") as fh:
        for row in _csv.DictReader(fh):
            labels[int(row["unit_id"])] = int(row["failure_mode"])
    return labels


def _train_config(cfg: RunConfig, n_modes: int, mono_weight=None, rul_weight=None):
    from .jointmodel import TrainConfig

    t = cfg.training
    return TrainConfig(
        n_modes=n_modes,
        hidden=t.hidden,
        rul_weight=t.rul_weight if rul_weight is None else rul_weight,
        mono_weight=t.mono_weight if mono_weight is None else mono_weight,
        mono_slope=t.mono_slope,
        mono_tolerance=t.mono_tolerance,
        epochs=t.epochs,
        batch_size=t.batch_size,
        learning_rate=t.learning_rate,
        seed=cfg.seed,
    )


def _run_folds(cfg: RunConfig, run_dir: Path, out_dir: Path, tcfg) -> list[Path]:
    """Train the CV folds on labeled train windows; save one checkpoint each."""
    import numpy as np

    from . import dataset as ds
    from .jointmodel import save_checkpoint, train_cv

    splits, dmanifest = ds.load_window_dataset(run_dir / "dataset")
    labels = _load_labels(run_dir)
    arrays = splits["train"]
    eye = np.eye(tcfg.n_modes)
    arrays.mode_onehot = np.stack([eye[labels[int(u)]] for u in arrays.unit_ids])
    scaler = ds.MinMaxStats.from_dict(dmanifest["scaler"])

    out_dir.mkdir(parents=True, exist_ok=True)
    results = train_cv(arrays, tcfg, n_folds=cfg.training.folds)
    files = []
    log = {}
    for r in results:
        f = out_dir / f"fold_{r.fold}.npz"
        save_checkpoint(f, r.model, tcfg, scaler=scaler, mode_map=labels,
                        dataset_manifest_hash=dmanifest.get("stage_hash"))
        files.append(f)
        log[str(r.fold)] = {
            "val_units": r.val_units,
            "final_loss": r.log.epoch_loss[-1],
            "epoch_loss": r.log.epoch_loss,
        }
    log_file = out_dir / TRAIN_LOG
    with open(log_file, "w") as fh:
        json.dump(log, fh, indent=2, sort_keys=True)
    files.append(log_file)
    return files


def cmd_train(cfg: RunConfig, run_dir: Path, force: bool) -> None:
    stage_hash = cfg.stage_hash("train")
    if not force and stage_is_current(run_dir, "train", stage_hash):
        _note_cache_hit(run_dir, "train")
        return
    require_stage(run_dir, "preprocess", cfg.stage_hash("preprocess"))
    require_stage(run_dir, "cluster", cfg.stage_hash("cluster"))

    labels = _load_labels(run_dir)
    n_modes = len(set(labels.values()))
    tcfg = _train_config(cfg, n_modes)
    with StageTimer() as timer:
        files = _run_folds(cfg, run_dir, run_dir / "model", tcfg)
    record_stage(run_dir, "train", stage_hash, files, timer.elapsed,
                 notes={"n_modes": n_modes, "folds": cfg.training.folds})
    print(f"[train] {cfg.training.folds} folds trained ({timer.elapsed:.0f}s)")


def _evaluate_folds(run_dir: Path, model_dir: Path, n_folds: int):
    """Per-fold full-sequence test metrics plus fold-0 exports."""
    import numpy as np

    from . import dataset as ds
    from . import metrics as mx
    from .jointmodel import export_predictions_csv, load_checkpoint, predict_sequence

    splits, _ = ds.load_window_dataset(run_dir / "dataset")
    test = splits["test"]
    reports = []
    fold0 = None
    for fold in range(n_folds):
        model, _, _ = load_checkpoint(model_dir / f"fold_{fold}.npz")
        data, pred = predict_sequence(model, test)
        per_unit = {}
        for u in np.unique(data.unit_ids):
            mask = data.unit_ids == u
            per_unit[int(u)] = (data.y[mask], pred.rul[mask])
        reports.append(mx.make_report(per_unit))
        if fold == 0:
            fold0 = (data, pred, reports[-1])
    stats = mx.summarize_folds(reports)
    data, pred, report0 = fold0
    pred_file = export_predictions_csv(model_dir / "predictions_fold0.csv", data, pred)
    interval_file = mx.save_interval_csv(model_dir / "intervals_fold0.csv", report0)
    return reports, stats, [pred_file, interval_file]


def cmd_evaluate(cfg: RunConfig, run_dir: Path, force: bool) -> None:
    stage_hash = cfg.stage_hash("evaluate")
    if not force and stage_is_current(run_dir, "evaluate", stage_hash):
        _note_cache_hit(run_dir, "evaluate")
        return
    require_stage(run_dir, "train", cfg.stage_hash("train"))

    with StageTimer() as timer:
        reports, stats, files = _evaluate_folds(run_dir, run_dir / "model", cfg.training.folds)
        report_file = run_dir / REPORT_JSON
        with open(report_file, "w") as fh:
            json.dump({
                "fold_stats": stats,
                "folds": [r.to_dict() for r in reports],
            }, fh, indent=2, sort_keys=True)
    record_stage(run_dir, "evaluate", stage_hash, files + [report_file], timer.elapsed)
    print("[evaluate] " + "  ".join(
        f"{k} {v['mean']:.3f}±{v['std']:.3f}" for k, v in stats.items()))


def cmd_reproduce(cfg: RunConfig, run_dir: Path, force: bool) -> None:
    """The full study: preprocess/embed/cluster, then the eta and lambda grids."""
    import csv as _csv

    cmd_preprocess(cfg, run_dir, force)
    cmd_embed(cfg, run_dir, force)
    cmd_cluster(cfg, run_dir, force)

    from . import metrics as mx

    labels = _load_labels(run_dir)
    n_modes = len(set(labels.values()))

    variants = []
    for eta in cfg.reproduce.etas:
        variants.append(("mono", cfg.training.rul_weight, eta))
    for lam in cfg.reproduce.lambdas:
        if not any(v[1] == lam and v[2] == 0.0 for v in variants):
            variants.append(("balance", lam, 0.0))

    rows = []
    for kind, lam, eta in variants:
        tag = f"lambda_{lam:g}_eta_{eta:g}"
        out_dir = run_dir / "reproduce" / tag
        tcfg = _train_config(cfg, n_modes, mono_weight=eta, rul_weight=lam)
        done = out_dir / "done.json"
        if force or not done.exists():
            with StageTimer() as timer:
                _run_folds(cfg, run_dir, out_dir, tcfg)
                reports, stats, _ = _evaluate_folds(run_dir, out_dir, cfg.training.folds)
            with open(done, "w") as fh:
                json.dump({"stats": stats, "wall_clock_s": timer.elapsed}, fh,
                          indent=2, sort_keys=True)
        with open(done) as fh:
            stats = json.load(fh)["stats"]
        rows.append({"variant": kind, "rul_weight": lam, "mono_weight": eta, **{
            f"{m}_{s}": stats[m][s] for m in ("rmse", "mape", "mae", "mr") for s in ("mean", "std")
        }})

    summary = run_dir / SUMMARY_CSV
    with open(summary, "w", newline="") as fh:
        writer = _csv.DictWriter(fh, fieldnames=list(rows[0]))
        writer.writeheader()
        writer.writerows(rows)

    header = f"{'variant':<8} {'lambda':>7} {'eta':>5} | {'RMSE':>14} {'MAPE':>14} {'MAE':>14} {'MR':>14}"
    print(header)
    print("-" * len(header))
    for r in rows:
        print(f"{r['variant']:<8} {r['rul_weight']:>7g} {r['mono_weight']:>5g} | "
              + " ".join(f"{r[f'{m}_mean']:>8.3f}±{r[f'{m}_std']:<5.3f}"
                         for m in ("rmse", "mape", "mae", "mr")))
    print(f"[reproduce] summary written to {summary}")


COMMANDS = {
    "preprocess": cmd_preprocess,
    "embed": cmd_embed,
    "cluster": cmd_cluster,
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "reproduce": cmd_reproduce,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="modewise",
        description="Failure-mode discovery and mode-aware RUL prediction pipeline",
        epilog=f"The dataset root can also come from ${DATA_ROOT_ENV}.",
    )
    parser.add_argument("--config", help="INI config file (all keys optional)")
    parser.add_argument("--run-dir", default="runs/default", help="artifact directory")
    parser.add_argument("--seed", type=int, help="override [run] seed")
    parser.add_argument("--threads", type=int, help="cap BLAS threads")
    parser.add_argument("--force", action="store_true", help="re-run even if cached")
    parser.add_argument("--data-root", help="override [data] root")
    parser.add_argument("--dataset", help="override [data] dataset id")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sub.add_parser(name, help=f"run the {name} stage")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.threads and args.threads > 0:
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
            os.environ.setdefault(var, str(args.threads))
    try:
        cfg = load_config(args.config, overrides={
            "seed": args.seed, "threads": args.threads,
            "data_root": args.data_root, "dataset": args.dataset,
        })
        run_dir = Path(args.run_dir)
        with run_lock(run_dir):
            COMMANDS[args.command](cfg, run_dir, args.force)
        return EXIT_OK
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except MissingArtifactError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_MISSING_ARTIFACT
    except (CmapssFormatError, DataIntegrityError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except ModewiseError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
