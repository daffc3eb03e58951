"""Networks for joint failure-mode classification and per-mode RUL regression.

Everything is plain numpy with hand-derived reverse-mode gradients: a
feed-forward softmax classifier on the flattened window, and one recurrent
(LSTM) regressor per failure mode consuming the window as a sequence. The
combined RUL estimate is the probability-weighted sum of the per-mode
estimates, so classifier and regressors share one differentiable objective.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


def _glorot(rng, shape):
    fan_in, fan_out = shape[0], shape[-1]
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


def softmax(logits):
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def _sigmoid(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


class MlpClassifier:
    """Flattened window -> two ReLU hidden layers -> softmax mode probabilities."""

    def __init__(self, n_inputs, hidden, n_modes, rng):
        h1, h2 = hidden
        self.n_inputs = n_inputs
        self.n_modes = n_modes
        self.params = {
            "W1": _glorot(rng, (n_inputs, h1)), "b1": np.zeros(h1),
            "W2": _glorot(rng, (h1, h2)), "b2": np.zeros(h2),
            "W3": _glorot(rng, (h2, n_modes)), "b3": np.zeros(n_modes),
        }

    def forward(self, x_flat):
        p = self.params
        a1 = np.maximum(0.0, x_flat @ p["W1"] + p["b1"])
        a2 = np.maximum(0.0, a1 @ p["W2"] + p["b2"])
        logits = a2 @ p["W3"] + p["b3"]
        probs = softmax(logits)
        cache = (x_flat, a1, a2, probs)
        return probs, cache

    def backward(self, cache, d_probs):
        """Gradients from d(loss)/d(probs), through the softmax Jacobian."""
        x_flat, a1, a2, probs = cache
        p = self.params
        inner = (d_probs * probs).sum(axis=1, keepdims=True)
        d_logits = probs * (d_probs - inner)
        grads = {
            "W3": a2.T @ d_logits,
            "b3": d_logits.sum(axis=0),
        }
        d_a2 = (d_logits @ p["W3"].T) * (a2 > 0)
        grads["W2"] = a1.T @ d_a2
        grads["b2"] = d_a2.sum(axis=0)
        d_a1 = (d_a2 @ p["W2"].T) * (a1 > 0)
        grads["W1"] = x_flat.T @ d_a1
        grads["b1"] = d_a1.sum(axis=0)
        return grads


class LstmRegressor:
    """Window sequence -> LSTM -> ReLU dense -> linear output.

    Emits the raw (unclamped) estimate; the non-negativity clamp is applied
    at the model level so reported RULs are >= 0 while the training loss sees
    the raw value and gradients never dead-lock at the clamp.
    """

    def __init__(self, n_features, hidden, rng):
        h1, h2 = hidden
        self.n_features = n_features
        self.n_hidden = h1
        b = np.zeros(4 * h1)
        b[h1:2 * h1] = 1.0  # forget-gate bias
        self.params = {
            "Wx": _glorot(rng, (n_features, 4 * h1)),
            "Wh": _glorot(rng, (h1, 4 * h1)),
            "b": b,
            "Wd": _glorot(rng, (h1, h2)), "bd": np.zeros(h2),
            "Wo": _glorot(rng, (h2, 1)), "bo": np.zeros(1),
        }

    def forward(self, x_seq):
        p = self.params
        batch, steps, _ = x_seq.shape
        hsz = self.n_hidden
        h = np.zeros((batch, hsz))
        c = np.zeros((batch, hsz))
        # project every step's input at once; only the recurrence is sequential
        zx = (x_seq.reshape(batch * steps, -1) @ p["Wx"]).reshape(batch, steps, 4 * hsz)
        gates = np.empty((batch, steps, 4 * hsz))
        cells = np.empty((batch, steps, hsz))       # tanh(c_t)
        prev_h = np.empty((batch, steps, hsz))
        prev_c = np.empty((batch, steps, hsz))
        for t in range(steps):
            prev_h[:, t] = h
            prev_c[:, t] = c
            z = zx[:, t] + h @ p["Wh"] + p["b"]
            i = _sigmoid(z[:, :hsz])
            f = _sigmoid(z[:, hsz:2 * hsz])
            g = np.tanh(z[:, 2 * hsz:3 * hsz])
            o = _sigmoid(z[:, 3 * hsz:])
            c = f * c + i * g
            tc = np.tanh(c)
            h = o * tc
            gates[:, t, :hsz] = i
            gates[:, t, hsz:2 * hsz] = f
            gates[:, t, 2 * hsz:3 * hsz] = g
            gates[:, t, 3 * hsz:] = o
            cells[:, t] = tc
        a = np.maximum(0.0, h @ p["Wd"] + p["bd"])
        out = (a @ p["Wo"] + p["bo"])[:, 0]
        cache = (x_seq, gates, cells, prev_h, prev_c, h, a)
        return out, cache

    def backward(self, cache, d_out):
        p = self.params
        x_seq, gates, cells, prev_h, prev_c, h_last, a = cache
        batch, steps, _ = x_seq.shape
        hsz = self.n_hidden

        d_out_pre = d_out[:, None]
        grads = {
            "Wo": a.T @ d_out_pre,
            "bo": d_out_pre.sum(axis=0),
        }
        d_a = (d_out_pre @ p["Wo"].T) * (a > 0)
        grads["Wd"] = h_last.T @ d_a
        grads["bd"] = d_a.sum(axis=0)
        d_h = d_a @ p["Wd"].T

        d_z_all = np.empty_like(gates)
        d_c = np.zeros_like(d_h)
        for t in range(steps - 1, -1, -1):
            i = gates[:, t, :hsz]
            f = gates[:, t, hsz:2 * hsz]
            g = gates[:, t, 2 * hsz:3 * hsz]
            o = gates[:, t, 3 * hsz:]
            tc = cells[:, t]
            d_o = d_h * tc
            d_c = d_c + d_h * o * (1.0 - tc * tc)
            d_z = d_z_all[:, t]
            d_z[:, :hsz] = (d_c * g) * i * (1.0 - i)
            d_z[:, hsz:2 * hsz] = (d_c * prev_c[:, t]) * f * (1.0 - f)
            d_z[:, 2 * hsz:3 * hsz] = (d_c * i) * (1.0 - g * g)
            d_z[:, 3 * hsz:] = d_o * o * (1.0 - o)
            d_h = d_z @ p["Wh"].T
            d_c = d_c * f
        flat_dz = d_z_all.reshape(batch * steps, 4 * hsz)
        grads["Wx"] = x_seq.reshape(batch * steps, -1).T @ flat_dz
        grads["Wh"] = prev_h.reshape(batch * steps, hsz).T @ flat_dz
        grads["b"] = flat_dz.sum(axis=0)
        return grads


@dataclass
class BatchPrediction:
    """Per-window outputs: mode probabilities, per-mode RULs, combined RUL.

    ``mode_ruls`` and ``rul`` are the reported estimates (clamped at 0, so
    the combined value is a convex combination of the per-mode ones); the
    ``*_raw`` twins are the pre-clamp values the training loss consumes.
    """

    mode_probs: np.ndarray      # (B, V)
    mode_ruls: np.ndarray       # (B, V)
    rul: np.ndarray             # (B,)
    mode_ruls_raw: np.ndarray   # (B, V)
    rul_raw: np.ndarray         # (B,)


class JointModel:
    """Classifier plus per-mode regressors behind one forward/backward pair."""

    def __init__(self, window_len, n_sensors, n_modes, hidden=(32, 32), seed=0):
        if n_modes < 1:
            raise ValueError("n_modes must be >= 1")
        self.window_len = window_len
        self.n_sensors = n_sensors
        self.n_modes = n_modes
        self.hidden = tuple(hidden)
        rng = np.random.default_rng(seed)
        self.classifier = MlpClassifier(window_len * n_sensors, hidden, n_modes, rng)
        self.regressors = [LstmRegressor(n_sensors, hidden, rng) for _ in range(n_modes)]

    # -- parameter plumbing -------------------------------------------------

    def params(self) -> dict[str, np.ndarray]:
        """Live parameter arrays, namespaced per component."""
        out = {f"clf/{k}": v for k, v in self.classifier.params.items()}
        for m, reg in enumerate(self.regressors):
            out.update({f"reg{m}/{k}": v for k, v in reg.params.items()})
        return out

    def set_params(self, values: dict[str, np.ndarray]) -> None:
        live = self.params()
        for k, v in values.items():
            live[k][...] = v

    def n_params(self) -> int:
        return sum(v.size for v in self.params().values())

    def get_flat(self) -> np.ndarray:
        params = self.params()
        return np.concatenate([params[k].ravel() for k in sorted(params)])

    def set_flat(self, flat: np.ndarray) -> None:
        params = self.params()
        pos = 0
        for k in sorted(params):
            n = params[k].size
            params[k][...] = flat[pos:pos + n].reshape(params[k].shape)
            pos += n

    # -- forward / backward --------------------------------------------------

    def _check_shape(self, x):
        x = np.asarray(x, dtype=np.float64)
        if x.ndim == 2:
            x = x[None]
        if x.ndim != 3 or x.shape[1] != self.window_len or x.shape[2] != self.n_sensors:
            raise ValueError(
                f"window batch must be (B, {self.window_len}, {self.n_sensors}); got {x.shape}"
            )
        return x

    def forward(self, x, with_cache=False):
        x = self._check_shape(x)
        x_flat = x.reshape(x.shape[0], -1)
        probs, clf_cache = self.classifier.forward(x_flat)
        reg_out = []
        reg_caches = []
        for reg in self.regressors:
            raw, cache = reg.forward(x)
            reg_out.append(raw)
            reg_caches.append(cache)
        mode_ruls_raw = np.stack(reg_out, axis=1)
        mode_ruls = np.maximum(0.0, mode_ruls_raw)
        pred = BatchPrediction(
            mode_probs=probs,
            mode_ruls=mode_ruls,
            rul=(probs * mode_ruls).sum(axis=1),
            mode_ruls_raw=mode_ruls_raw,
            rul_raw=(probs * mode_ruls_raw).sum(axis=1),
        )
        if with_cache:
            return pred, (clf_cache, reg_caches)
        return pred

    def backward(self, pred: BatchPrediction, caches, d_rul_raw, d_probs_extra=None,
                 rul_to_probs=True):
        """Gradients of a scalar loss given d(loss)/d(raw combined rul) and,
        optionally, a direct d(loss)/d(probs) term (e.g. cross-entropy).

        With ``rul_to_probs=False`` the blend weights are treated as constants
        for the RUL path: only ``d_probs_extra`` reaches the classifier.
        """
        clf_cache, reg_caches = caches
        d_probs = d_rul_raw[:, None] * pred.mode_ruls_raw if rul_to_probs else np.zeros_like(pred.mode_probs)
        if d_probs_extra is not None:
            d_probs = d_probs + d_probs_extra
        grads = {f"clf/{k}": v for k, v in self.classifier.backward(clf_cache, d_probs).items()}
        d_mode_raw = d_rul_raw[:, None] * pred.mode_probs
        for m, (reg, cache) in enumerate(zip(self.regressors, reg_caches)):
            for k, v in reg.backward(cache, d_mode_raw[:, m]).items():
                grads[f"reg{m}/{k}"] = v
        return grads
