"""Run-directory manifest: stage completion records, artifact paths, locking.

Every command records its stage hash, wall-clock time and produced files
here; a stage is skipped on re-run when its hash matches and all artifacts
still exist. One lock file per run directory keeps concurrent writers out.
"""

from __future__ import annotations

import json
import os
import time
from contextlib import contextmanager
from datetime import datetime, timezone
from pathlib import Path

from . import __version__
from .errors import MissingArtifactError

MANIFEST_NAME = "manifest.json"
LOCK_NAME = ".lock"

#: stage -> command that produces it, for error messages
STAGE_COMMANDS = {
    "preprocess": "preprocess",
    "embed": "embed",
    "cluster": "cluster",
    "train": "train",
    "evaluate": "evaluate",
}

STAGE_ORDER = ["preprocess", "embed", "cluster", "train", "evaluate"]


def manifest_path(run_dir) -> Path:
    return Path(run_dir) / MANIFEST_NAME


def load_manifest(run_dir) -> dict:
    p = manifest_path(run_dir)
    if not p.exists():
        return {"tool_version": __version__, "stages": {}}
    with open(p) as fh:
        return json.load(fh)


def save_manifest(run_dir, manifest: dict) -> None:
    manifest["tool_version"] = __version__
    with open(manifest_path(run_dir), "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)


def record_stage(run_dir, stage: str, config_hash: str, artifacts, wall_clock_s: float,
                 notes: dict | None = None) -> None:
    run_dir = Path(run_dir)
    manifest = load_manifest(run_dir)
    manifest["stages"][stage] = {
        "config_hash": config_hash,
        "completed_at": datetime.now(timezone.utc).isoformat(timespec="seconds"),
        "wall_clock_s": round(wall_clock_s, 3),
        "artifacts": [str(Path(a).relative_to(run_dir)) for a in artifacts],
        **({"notes": notes} if notes else {}),
    }
    save_manifest(run_dir, manifest)


def stage_is_current(run_dir, stage: str, config_hash: str) -> bool:
    """True when the stage ran with this exact hash and its files still exist."""
    entry = load_manifest(run_dir)["stages"].get(stage)
    if entry is None or entry["config_hash"] != config_hash:
        return False
    return all((Path(run_dir) / a).exists() for a in entry["artifacts"])


def require_stage(run_dir, stage: str, config_hash: str) -> dict:
    """The stage's manifest entry, or an error naming the command to run."""
    entry = load_manifest(run_dir)["stages"].get(stage)
    cmd = STAGE_COMMANDS[stage]
    if entry is None:
        raise MissingArtifactError(f"stage '{stage}' has not run yet; run '{cmd}' first")
    if entry["config_hash"] != config_hash:
        raise MissingArtifactError(
            f"stage '{stage}' was produced with a different configuration; re-run '{cmd}'"
        )
    missing = [a for a in entry["artifacts"] if not (Path(run_dir) / a).exists()]
    if missing:
        raise MissingArtifactError(
            f"stage '{stage}' artifacts missing ({', '.join(missing)}); re-run '{cmd}'"
        )
    return entry


@contextmanager
def run_lock(run_dir):
    """Exclusive lock on the run directory (one writer per directory)."""
    run_dir = Path(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    lock = run_dir / LOCK_NAME
    try:
        fd = os.open(lock, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
    except FileExistsError:
        raise MissingArtifactError(
            f"run directory {run_dir} is locked by another invocation "
            f"(remove {lock} if that run crashed)"
        ) from None
    try:
        os.write(fd, f"pid={os.getpid()} at={time.time()}\n".encode())
        os.close(fd)
        yield
    finally:
        lock.unlink(missing_ok=True)


class StageTimer:
    def __enter__(self):
        self.start = time.monotonic()
        return self

    def __exit__(self, *exc):
        self.elapsed = time.monotonic() - self.start
        return False
