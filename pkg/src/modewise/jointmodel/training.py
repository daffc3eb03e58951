"""Training loop, cross-validation harness, gradient check, checkpoints."""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from ..dataset import WindowArrays
from ..errors import TrainingDivergedError
from . import losses
from .nets import BatchPrediction, JointModel


@dataclass(frozen=True)
class TrainConfig:
    """Hyperparameters of the joint objective and its optimizer."""

    n_modes: int
    hidden: tuple[int, int] = (32, 32)
    rul_weight: float = 10.0      # balance between classification and RUL terms
    mono_weight: float = 0.0      # weight of the monotonicity penalty
    mono_slope: float = -1.0      # target backward difference of predictions
    mono_tolerance: float = 0.9   # dead-band half-width around the target slope
    epochs: int = 2000
    batch_size: int = 256
    learning_rate: float = 1e-4
    seed: int = 42
    # The RUL term is written as a function of the regressor parameters only:
    # by default the blend weights are treated as constants inside it and the
    # classifier learns from cross-entropy alone. Propagating the RUL loss
    # into the classifier through the blend turns the probabilities into an
    # interpolation knob (the classic blended-output mixture pathology) and
    # destroys their failure-mode meaning; keep it available for gradient
    # checks of the fully-coupled objective.
    blend_grad_to_classifier: bool = False

    def __post_init__(self):
        if self.n_modes < 1:
            raise ValueError("n_modes must be >= 1")
        if self.rul_weight < 0:
            raise ValueError("rul_weight must be >= 0")
        if self.mono_weight < 0:
            raise ValueError("mono_weight must be >= 0")
        if self.mono_weight > 0:
            if not self.mono_slope < 0:
                raise ValueError("mono_slope must be negative")
            if not 0 < self.mono_tolerance < -self.mono_slope:
                raise ValueError("mono_tolerance must lie in (0, -mono_slope)")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["hidden"] = list(self.hidden)
        d["rul_weight"] = "inf" if np.isinf(self.rul_weight) else self.rul_weight
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        d["hidden"] = tuple(d["hidden"])
        if d.get("rul_weight") == "inf":
            d["rul_weight"] = float("inf")
        return cls(**d)


@dataclass
class TrainLog:
    epoch_loss: list[float] = field(default_factory=list)      # mean per instance
    epoch_ce: list[float] = field(default_factory=list)
    epoch_rul: list[float] = field(default_factory=list)
    epoch_mono: list[float] = field(default_factory=list)
    diverged: bool = False


def _order_by_unit_cycle(arrays: WindowArrays) -> WindowArrays:
    order = np.lexsort((arrays.end_cycles, arrays.unit_ids))
    return WindowArrays(
        X=arrays.X[order],
        y=arrays.y[order],
        unit_ids=arrays.unit_ids[order],
        end_cycles=arrays.end_cycles[order],
        mode_onehot=None if arrays.mode_onehot is None else arrays.mode_onehot[order],
    )


def _unit_chunks(unit_ids, batch_size):
    """Contiguous per-unit index ranges of at most batch_size windows."""
    chunks = []
    start = 0
    n = len(unit_ids)
    for i in range(1, n + 1):
        if i == n or unit_ids[i] != unit_ids[start]:
            for s in range(start, i, batch_size):
                chunks.append((s, min(s + batch_size, i)))
            start = i
    return chunks


def _batch_loss_parts(model, batch: WindowArrays, config: TrainConfig, with_grads):
    ce_w, rul_w = losses.combine_weights(config.rul_weight)
    pred, caches = model.forward(batch.X, with_cache=True)

    # the loss consumes the raw (pre-clamp) combination so gradients cannot
    # dead-lock at the non-negativity clamp of the reported predictions
    hs, d_hs = losses.loss_hs(pred.rul_raw, batch.y)
    ce = np.zeros(len(batch))
    d_probs_extra = None
    if ce_w > 0.0:
        if batch.mode_onehot is None:
            raise ValueError("mode labels are required unless rul_weight is inf")
        ce, d_ce = losses.loss_ce(pred.mode_probs, batch.mode_onehot)
        d_probs_extra = ce_w * d_ce
    pen_sum = 0.0
    d_pen = np.zeros_like(pred.rul_raw)
    if config.mono_weight > 0.0:
        pen, d_pen, _ = losses.mono_penalty(
            pred.rul_raw, batch.unit_ids, batch.end_cycles,
            config.mono_slope, config.mono_tolerance,
        )
        pen_sum = float(pen.sum())

    parts = {
        "ce": float(ce.sum()) * ce_w,
        "rul": float(hs.sum()) * rul_w,
        "mono": pen_sum * config.mono_weight,
    }
    parts["total"] = parts["ce"] + parts["rul"] + parts["mono"]
    if not with_grads:
        return parts, None

    d_rul = rul_w * d_hs + config.mono_weight * d_pen
    grads = model.backward(pred, caches, d_rul, d_probs_extra=d_probs_extra,
                           rul_to_probs=config.blend_grad_to_classifier)
    return parts, grads


def total_loss(model, batch: WindowArrays, config: TrainConfig) -> float:
    """The joint objective summed over the batch (no gradient side effects)."""
    parts, _ = _batch_loss_parts(model, _order_by_unit_cycle(batch), config, with_grads=False)
    return parts["total"]


class Adam:
    def __init__(self, params, beta1=0.9, beta2=0.999, eps=1e-8):
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, params, grads, lr):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        correction = np.sqrt(1.0 - b2 ** self.t) / (1.0 - b1 ** self.t)
        for k, g in grads.items():
            m = self.m[k]
            v = self.v[k]
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * g * g
            params[k] -= lr * correction * m / (np.sqrt(v) + self.eps)


def train(arrays: WindowArrays, config: TrainConfig, model: JointModel | None = None,
          log_every: int = 0) -> tuple[JointModel, TrainLog]:
    """Mini-batch Adam on the joint objective.

    Batches are contiguous per-unit window runs in cycle order, so consecutive
    rows inside a batch form the monotonicity pairs. Deterministic given the
    config seed. A non-finite loss aborts with the last finite parameter state
    attached to the raised error.
    """
    data = _order_by_unit_cycle(arrays)
    ntw, n_sensors = data.X.shape[1], data.X.shape[2]
    if model is None:
        model = JointModel(ntw, n_sensors, config.n_modes,
                           hidden=config.hidden, seed=config.seed)
        # start the regressors at the mean target: the exponential RUL loss
        # grows like exp(err/13) below the target, and a cold start at 0 with
        # targets in the hundreds burns most of the epoch budget climbing out
        for reg in model.regressors:
            reg.params["bo"][:] = float(np.mean(data.y))
    params = model.params()
    opt = Adam(params)
    chunks = _unit_chunks(data.unit_ids, config.batch_size)
    log = TrainLog()
    n = len(data)
    last_good = {k: v.copy() for k, v in params.items()}

    for epoch in range(config.epochs):
        rng = np.random.default_rng([config.seed, epoch])
        order = rng.permutation(len(chunks))
        sums = {"total": 0.0, "ce": 0.0, "rul": 0.0, "mono": 0.0}
        for ci in order:
            s, e = chunks[ci]
            batch = WindowArrays(
                X=data.X[s:e], y=data.y[s:e],
                unit_ids=data.unit_ids[s:e], end_cycles=data.end_cycles[s:e],
                mode_onehot=None if data.mode_onehot is None else data.mode_onehot[s:e],
            )
            parts, grads = _batch_loss_parts(model, batch, config, with_grads=True)
            if not np.isfinite(parts["total"]):
                log.diverged = True
                raise TrainingDivergedError(
                    f"non-finite loss in epoch {epoch}", last_good=last_good, epoch=epoch,
                )
            scale = 1.0 / (e - s)
            opt.step(params, {k: g * scale for k, g in grads.items()}, config.learning_rate)
            for k in sums:
                sums[k] += parts[k]
        log.epoch_loss.append(sums["total"] / n)
        log.epoch_ce.append(sums["ce"] / n)
        log.epoch_rul.append(sums["rul"] / n)
        log.epoch_mono.append(sums["mono"] / n)
        last_good = {k: v.copy() for k, v in params.items()}
        if log_every and (epoch + 1) % log_every == 0:
            print(f"epoch {epoch + 1}/{config.epochs}  loss {log.epoch_loss[-1]:.4f}")
    return model, log


def grad_check(model: JointModel, batch: WindowArrays, config: TrainConfig,
               step: float = 1e-5) -> float:
    """Max relative error of analytic vs central-difference gradients.

    The check always differentiates the fully-coupled objective (RUL loss
    propagating into the blend weights): central differences of the scalar
    loss necessarily include that path, whatever gradient terms training
    chooses to follow. Each coordinate is compared relative to its own
    magnitude, floored at a small fraction of the gradient's overall scale:
    entries far below the inf-norm sit beneath the roundoff of differencing
    the loss and would otherwise report pure floating-point noise.
    """
    import dataclasses

    config = dataclasses.replace(config, blend_grad_to_classifier=True)
    data = _order_by_unit_cycle(batch)
    parts, grads = _batch_loss_parts(model, data, config, with_grads=True)
    flat_analytic = np.concatenate([grads[k].ravel() for k in sorted(grads)])

    theta = model.get_flat()
    numeric = np.empty_like(flat_analytic)
    for i in range(theta.size):
        t = theta.copy()
        t[i] = theta[i] + step
        model.set_flat(t)
        up, _ = _batch_loss_parts(model, data, config, with_grads=False)
        t[i] = theta[i] - step
        model.set_flat(t)
        down, _ = _batch_loss_parts(model, data, config, with_grads=False)
        numeric[i] = (up["total"] - down["total"]) / (2 * step)
    model.set_flat(theta)

    scale = max(np.abs(flat_analytic).max(), np.abs(numeric).max(), 1e-8)
    denom = np.maximum(np.maximum(np.abs(flat_analytic), np.abs(numeric)), 1e-3 * scale)
    return float((np.abs(flat_analytic - numeric) / denom).max())


def unit_folds(unit_ids, n_folds, seed):
    """Deterministic unit partitions: (train_units, val_units) per fold."""
    units = np.unique(np.asarray(unit_ids))
    rng = np.random.default_rng(seed)
    units = units[rng.permutation(units.size)]
    val_groups = np.array_split(units, n_folds)
    folds = []
    for g in val_groups:
        val = set(int(u) for u in g)
        train = [int(u) for u in units if int(u) not in val]
        folds.append((sorted(train), sorted(val)))
    return folds


def take_units(arrays: WindowArrays, units) -> WindowArrays:
    mask = np.isin(arrays.unit_ids, list(units))
    return WindowArrays(
        X=arrays.X[mask], y=arrays.y[mask],
        unit_ids=arrays.unit_ids[mask], end_cycles=arrays.end_cycles[mask],
        mode_onehot=None if arrays.mode_onehot is None else arrays.mode_onehot[mask],
    )


@dataclass
class FoldResult:
    fold: int
    train_units: list[int]
    val_units: list[int]
    model: JointModel
    log: TrainLog


def train_cv(arrays: WindowArrays, config: TrainConfig, n_folds=5,
             fold_indices=None, log_every=0) -> list[FoldResult]:
    """The cross-validation harness: hold out 1/n_folds of the units per fold."""
    folds = unit_folds(arrays.unit_ids, n_folds, config.seed)
    results = []
    for f, (train_units, val_units) in enumerate(folds):
        if fold_indices is not None and f not in fold_indices:
            continue
        model, log = train(take_units(arrays, train_units), config, log_every=log_every)
        results.append(FoldResult(fold=f, train_units=train_units,
                                  val_units=val_units, model=model, log=log))
    return results


def predict_sequence(model: JointModel, arrays: WindowArrays) -> tuple[WindowArrays, BatchPrediction]:
    """Cycle-ordered predictions for the given windows (any number of units)."""
    data = _order_by_unit_cycle(arrays)
    return data, model.forward(data.X)


def export_predictions_csv(path, data: WindowArrays, pred: BatchPrediction) -> Path:
    path = Path(path)
    n_modes = pred.mode_probs.shape[1]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["unit_id", "cycle", "true_rul", "pred_rul"]
                        + [f"p_mode_{v + 1}" for v in range(n_modes)])
        for i in range(len(data)):
            writer.writerow(
                [int(data.unit_ids[i]), int(data.end_cycles[i]),
                 repr(float(data.y[i])), repr(float(pred.rul[i]))]
                + [repr(float(p)) for p in pred.mode_probs[i]]
            )
    return path


CHECKPOINT_VERSION = 1


def save_checkpoint(path, model: JointModel, config: TrainConfig, *,
                    scaler=None, mode_map=None, dataset_manifest_hash=None) -> Path:
    """One-file checkpoint: parameters plus everything needed to reuse them."""
    path = Path(path)
    meta = {
        "version": CHECKPOINT_VERSION,
        "window_len": model.window_len,
        "n_sensors": model.n_sensors,
        "n_modes": model.n_modes,
        "hidden": list(model.hidden),
        "config": config.to_dict(),
        "scaler": scaler.to_dict() if scaler is not None else None,
        "mode_map": {str(k): int(v) for k, v in (mode_map or {}).items()},
        "dataset_manifest_hash": dataset_manifest_hash,
    }
    payload = {f"param:{k}": v for k, v in model.params().items()}
    np.savez(path, __meta__=np.frombuffer(json.dumps(meta).encode(), dtype=np.uint8), **payload)
    return path


def load_checkpoint(path) -> tuple[JointModel, TrainConfig, dict]:
    with np.load(path) as z:
        meta = json.loads(bytes(z["__meta__"]).decode())
        if meta["version"] != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {meta['version']}")
        config = TrainConfig.from_dict(meta["config"])
        model = JointModel(meta["window_len"], meta["n_sensors"], meta["n_modes"],
                           hidden=tuple(meta["hidden"]), seed=config.seed)
        model.set_params({k[len("param:"):]: z[k] for k in z.files if k.startswith("param:")})
    meta["mode_map"] = {int(k): v for k, v in meta["mode_map"].items()}
    return model, config, meta
