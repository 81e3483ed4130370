"""Recurrent metamodel: stacked LSTM with a sigmoid read-out, plus an hour-wise dense baseline.

Everything is float64 numpy with hand-written backpropagation through time.
Gate blocks are stored stacked along the last axis in the order
(update, forget, output, candidate)::

    z      = x_k @ w_x + h_{k-1} @ w_h + b          # (batch, 4 * d_emb)
    u, f, o = sigmoid(z[:, :3H])  split in three
    c~     = tanh(z[:, 3H:])
    c_k    = f * c_{k-1} + u * c~
    h_k    = o * tanh(c_k)
    y_k    = sigmoid(h_k^L @ w_y + b_y)
"""
from __future__ import annotations

import base64
import json
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .domain import DEFAULT_LAYOUT, OUTPUT_CHANNELS, FeatureLayout, Normalizer
from .errors import DomainError, TrainingError

log = logging.getLogger(__name__)

GATES = ("u", "f", "o", "c")
SCHEMA_VERSION = 1


def sigmoid(z):
    # tanh form never overflows
    return 0.5 * (1.0 + np.tanh(0.5 * z))


@dataclass(frozen=True)
class ModelLayout:
    kind: str
    input_width: int
    d_emb: int
    n_layers: int
    output_channels: tuple[str, ...] = OUTPUT_CHANNELS

    def __post_init__(self):
        if self.kind not in ("lstm", "ffn"):
            raise DomainError(f"unknown model kind {self.kind!r}")
        if min(self.input_width, self.d_emb, self.n_layers) < 1:
            raise DomainError("input_width, d_emb and n_layers must be >= 1")
        object.__setattr__(self, "output_channels", tuple(self.output_channels))

    @property
    def n_outputs(self) -> int:
        return len(self.output_channels)

    def shapes(self) -> dict[str, tuple[int, ...]]:
        h, shapes = self.d_emb, {}
        for layer in range(self.n_layers):
            d_in = self.input_width if layer == 0 else h
            if self.kind == "lstm":
                shapes[f"lstm{layer}.w_x"] = (d_in, 4 * h)
                shapes[f"lstm{layer}.w_h"] = (h, 4 * h)
                shapes[f"lstm{layer}.b"] = (4 * h,)
            else:
                shapes[f"dense{layer}.w"] = (d_in, h)
                shapes[f"dense{layer}.b"] = (h,)
        shapes["head.w"] = (h, self.n_outputs)
        shapes["head.b"] = (self.n_outputs,)
        return shapes

    def to_dict(self) -> dict:
        return {"kind": self.kind, "input_width": self.input_width, "d_emb": self.d_emb,
                "n_layers": self.n_layers, "output_channels": list(self.output_channels)}


@dataclass(frozen=True)
class LstmLayerWeights:
    """Read-only view of one layer, with per-gate matrices in ``W @ x`` orientation."""

    w_x: np.ndarray
    w_h: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        h = self.w_h.shape[0]
        if self.w_h.shape != (h, 4 * h) or self.w_x.shape[1] != 4 * h or self.b.shape != (4 * h,):
            raise DomainError("inconsistent LSTM layer shapes")

    @property
    def d_emb(self) -> int:
        return self.w_h.shape[0]

    def _block(self, gate: str) -> slice:
        h = self.d_emb
        i = GATES.index(gate)
        return slice(i * h, (i + 1) * h)

    def input_matrix(self, gate: str) -> np.ndarray:
        """``W_i<gate>`` with shape (d_emb, d_in)."""
        return self.w_x[:, self._block(gate)].T

    def hidden_matrix(self, gate: str) -> np.ndarray:
        """``W_h<gate>`` with shape (d_emb, d_emb)."""
        return self.w_h[:, self._block(gate)].T

    def bias(self, gate: str) -> np.ndarray:
        return self.b[self._block(gate)]


class MetamodelWeights:
    """Immutable parameter snapshot plus the layout and scaling it was trained with."""

    def __init__(self, layout: ModelLayout, params: Mapping[str, np.ndarray],
                 normalizer: Normalizer | None = None, feature_layout: FeatureLayout = DEFAULT_LAYOUT):
        shapes = layout.shapes()
        if set(params) != set(shapes):
            raise DomainError(f"parameter names {sorted(params)} do not match layout {sorted(shapes)}")
        frozen = {}
        for name in shapes:
            arr = np.array(params[name], dtype=np.float64)
            if arr.shape != shapes[name]:
                raise DomainError(f"{name}: shape {arr.shape}, expected {shapes[name]}")
            if not np.all(np.isfinite(arr)):
                raise DomainError(f"{name}: non-finite entries")
            arr.setflags(write=False)
            frozen[name] = arr
        self.layout = layout
        self.params = frozen
        self.normalizer = normalizer
        self.feature_layout = feature_layout

    def __getitem__(self, name: str) -> np.ndarray:
        return self.params[name]

    def layer(self, index: int) -> LstmLayerWeights:
        if self.layout.kind != "lstm":
            raise DomainError("only LSTM weights have recurrent layers")
        p = f"lstm{index}."
        return LstmLayerWeights(self.params[p + "w_x"], self.params[p + "w_h"], self.params[p + "b"])

    def replace(self, params: Mapping[str, np.ndarray]) -> "MetamodelWeights":
        return MetamodelWeights(self.layout, params, self.normalizer, self.feature_layout)

    def n_parameters(self) -> int:
        return int(sum(a.size for a in self.params.values()))

    # persistence -----------------------------------------------------------
    def to_json(self) -> str:
        tensors = {
            name: {
                "shape": list(arr.shape),
                "dtype": "float64",
                "data": base64.b64encode(np.ascontiguousarray(arr, dtype="<f8").tobytes()).decode("ascii"),
            }
            for name, arr in self.params.items()
        }
        doc = {
            "schema_version": SCHEMA_VERSION,
            "layout": self.layout.to_dict(),
            "feature_layout": self.feature_layout.to_dict(),
            "normalizer": self.normalizer.to_dict() if self.normalizer is not None else None,
            "tensors": tensors,
        }
        return json.dumps(doc, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "MetamodelWeights":
        doc = json.loads(text)
        if doc.get("schema_version") != SCHEMA_VERSION:
            raise DomainError(f"unsupported weights schema {doc.get('schema_version')}")
        lay = doc["layout"]
        layout = ModelLayout(lay["kind"], lay["input_width"], lay["d_emb"], lay["n_layers"],
                             tuple(lay["output_channels"]))
        params = {
            name: np.frombuffer(base64.b64decode(t["data"]), dtype="<f8").reshape(t["shape"]).astype(np.float64)
            for name, t in doc["tensors"].items()
        }
        norm = Normalizer.from_dict(doc["normalizer"]) if doc.get("normalizer") else None
        return cls(layout, params, norm, FeatureLayout.from_dict(doc["feature_layout"]))

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_json() + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "MetamodelWeights":
        return cls.from_json(Path(path).read_text())


def init_weights(layout: ModelLayout, rng: np.random.Generator, *, forget_bias: float = 1.0,
                 normalizer: Normalizer | None = None,
                 feature_layout: FeatureLayout = DEFAULT_LAYOUT) -> MetamodelWeights:
    """Uniform(-1/sqrt(d_emb), 1/sqrt(d_emb)) everywhere; LSTM forget-gate bias set to ``forget_bias``."""
    bound = 1.0 / math.sqrt(layout.d_emb)
    params = {name: rng.uniform(-bound, bound, size=shape) for name, shape in layout.shapes().items()}
    if layout.kind == "lstm":
        h = layout.d_emb
        for layer in range(layout.n_layers):
            params[f"lstm{layer}.b"][h : 2 * h] = forget_bias
    return MetamodelWeights(layout, params, normalizer, feature_layout)


def zeros_like(weights: MetamodelWeights) -> dict[str, np.ndarray]:
    return {k: np.zeros_like(v) for k, v in weights.params.items()}


# ---------------------------------------------------------------------------
# LSTM kernels (time-major arrays)


def lstm_cell(x, h_prev, c_prev, layer: LstmLayerWeights):
    """One time step for a batch ``x`` of shape (batch, d_in); returns ``(h, c)``."""
    x, h_prev, c_prev = (np.atleast_2d(np.asarray(a, dtype=float)) for a in (x, h_prev, c_prev))
    if x.shape[1] != layer.w_x.shape[0] or h_prev.shape[1] != layer.d_emb or c_prev.shape != h_prev.shape:
        raise DomainError("lstm_cell: shape mismatch")
    h = layer.d_emb
    z = x @ layer.w_x + h_prev @ layer.w_h + layer.b
    gates = sigmoid(z[:, : 3 * h])
    cand = np.tanh(z[:, 3 * h :])
    c = gates[:, h : 2 * h] * c_prev + gates[:, :h] * cand
    return gates[:, 2 * h :] * np.tanh(c), c


def lstm_layer_forward(x: np.ndarray, w_x: np.ndarray, w_h: np.ndarray, b: np.ndarray):
    """Run one layer over a (T, B, D) sequence from zero state.

    Returns hidden states (T + 1, B, H) and cells (T + 1, B, H) with the
    zero initial state at index 0, and post-activation gates (T, B, 4H).
    """
    n_t, n_b, d_in = x.shape
    h = w_h.shape[0]
    hs = np.zeros((n_t + 1, n_b, h))
    cs = np.zeros((n_t + 1, n_b, h))
    acts = np.empty((n_t, n_b, 4 * h))
    xw = (x.reshape(n_t * n_b, d_in) @ w_x + b).reshape(n_t, n_b, 4 * h)
    for t in range(n_t):
        z = xw[t] + hs[t] @ w_h
        a = acts[t]
        a[:, : 3 * h] = sigmoid(z[:, : 3 * h])
        a[:, 3 * h :] = np.tanh(z[:, 3 * h :])
        c = a[:, h : 2 * h] * cs[t] + a[:, :h] * a[:, 3 * h :]
        cs[t + 1] = c
        hs[t + 1] = a[:, 2 * h : 3 * h] * np.tanh(c)
    return hs, cs, acts


def lstm_layer_backward(x, w_x, w_h, hs, cs, acts, dh_out):
    """Backpropagation through time for one layer.

    ``dh_out`` (T, B, H) is the loss gradient reaching each hidden state from
    above. Returns ``(dx, dw_x, dw_h, db)``.
    """
    n_t, n_b, d_in = x.shape
    h = w_h.shape[0]
    w_h_t = np.ascontiguousarray(w_h.T)
    dz = np.empty((n_t, n_b, 4 * h))
    dh_next = np.zeros((n_b, h))
    dc_next = np.zeros((n_b, h))
    for t in range(n_t - 1, -1, -1):
        a = acts[t]
        u, f, o, g = a[:, :h], a[:, h : 2 * h], a[:, 2 * h : 3 * h], a[:, 3 * h :]
        tc = np.tanh(cs[t + 1])
        dh = dh_out[t] + dh_next
        dc = dc_next + dh * o * (1.0 - tc * tc)
        d = dz[t]
        d[:, :h] = dc * g * u * (1.0 - u)
        d[:, h : 2 * h] = dc * cs[t] * f * (1.0 - f)
        d[:, 2 * h : 3 * h] = dh * tc * o * (1.0 - o)
        d[:, 3 * h :] = dc * u * (1.0 - g * g)
        dc_next = dc * f
        dh_next = d @ w_h_t
    flat = dz.reshape(n_t * n_b, 4 * h)
    dw_x = x.reshape(n_t * n_b, d_in).T @ flat
    dw_h = hs[:-1].reshape(n_t * n_b, h).T @ flat
    db = flat.sum(axis=0)
    dx = (flat @ w_x.T).reshape(n_t, n_b, d_in)
    return dx, dw_x, dw_h, db


# ---------------------------------------------------------------------------
# model-level forward / backward


@dataclass
class ForwardCache:
    layers: list
    top: np.ndarray
    y: np.ndarray
    single: bool


def _as_time_major(features: np.ndarray, width: int) -> tuple[np.ndarray, bool]:
    x = np.asarray(features, dtype=np.float64)
    single = x.ndim == 2
    if single:
        x = x[None]
    if x.ndim != 3 or x.shape[-1] != width:
        raise DomainError(f"feature width {x.shape[-1] if x.ndim else None} does not match model input {width}")
    return np.ascontiguousarray(x.transpose(1, 0, 2)), single


def _dropout_mask(shape, rate: float, rng: np.random.Generator | None):
    if rate <= 0.0:
        return None
    if rng is None:
        raise DomainError("training-mode dropout needs an rng")
    return (rng.random(shape) >= rate) / (1.0 - rate)


def forward(weights: MetamodelWeights, features: np.ndarray, *, train: bool = False, dropout: float = 0.0,
            rng: np.random.Generator | None = None, return_cache: bool = False):
    """Predict scaled outputs for (T, F) or (B, T, F) features; result has the same leading shape.

    Dropout (inter-layer only) is applied only when ``train`` is set.
    """
    lay = weights.layout
    x, single = _as_time_major(features, lay.input_width)
    p = weights.params
    layers = []
    inp = x
    for layer in range(lay.n_layers):
        mask = _dropout_mask(inp.shape, dropout, rng) if (train and layer > 0) else None
        if mask is not None:
            inp = inp * mask
        if lay.kind == "lstm":
            pre = f"lstm{layer}."
            hs, cs, acts = lstm_layer_forward(inp, p[pre + "w_x"], p[pre + "w_h"], p[pre + "b"])
            layers.append((inp, mask, hs, cs, acts))
            inp = hs[1:]
        else:
            pre = f"dense{layer}."
            act = np.tanh(inp @ p[pre + "w"] + p[pre + "b"])
            layers.append((inp, mask, act))
            inp = act
    y = sigmoid(inp @ p["head.w"] + p["head.b"])
    out = y.transpose(1, 0, 2)
    out = out[0] if single else np.ascontiguousarray(out)
    if return_cache:
        return out, ForwardCache(layers, inp, y, single)
    return out


def backward(weights: MetamodelWeights, cache: ForwardCache, dpred: np.ndarray) -> dict[str, np.ndarray]:
    """Gradient of the loss w.r.t. every parameter, given dloss/dprediction (same shape as the prediction)."""
    lay = weights.layout
    p = weights.params
    dy = np.asarray(dpred, dtype=float)
    if cache.single:
        dy = dy[None]
    dy = dy.transpose(1, 0, 2)
    dz = dy * cache.y * (1.0 - cache.y)
    n_t, n_b, _ = dz.shape
    grads = {
        "head.w": cache.top.reshape(n_t * n_b, -1).T @ dz.reshape(n_t * n_b, -1),
        "head.b": dz.sum(axis=(0, 1)),
    }
    dh = dz @ p["head.w"].T
    for layer in range(lay.n_layers - 1, -1, -1):
        if lay.kind == "lstm":
            inp, mask, hs, cs, acts = cache.layers[layer]
            pre = f"lstm{layer}."
            dx, grads[pre + "w_x"], grads[pre + "w_h"], grads[pre + "b"] = lstm_layer_backward(
                inp, p[pre + "w_x"], p[pre + "w_h"], hs, cs, acts, dh)
        else:
            inp, mask, act = cache.layers[layer]
            pre = f"dense{layer}."
            dpre = dh * (1.0 - act * act)
            flat = dpre.reshape(-1, dpre.shape[-1])
            grads[pre + "w"] = inp.reshape(-1, inp.shape[-1]).T @ flat
            grads[pre + "b"] = flat.sum(axis=0)
            dx = dpre @ p[pre + "w"].T
        if mask is not None:
            dx = dx * mask
        dh = dx
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise TrainingError(f"non-finite gradient in {name}")
    return grads


def loss(pred: np.ndarray, target: np.ndarray, beta: float = 0.5, *, t_index: int = 0) -> float:
    """``beta * MSE_T + (1 - beta) * MSE_Q``, MSE_Q averaged over every non-temperature channel."""
    return loss_and_grad(pred, target, beta, t_index=t_index)[0]


def loss_and_grad(pred: np.ndarray, target: np.ndarray, beta: float = 0.5, *, t_index: int = 0):
    pred = np.asarray(pred, dtype=float)
    target = np.asarray(target, dtype=float)
    if pred.shape != target.shape:
        raise DomainError(f"prediction shape {pred.shape} != target shape {target.shape}")
    if not 0.0 <= beta <= 1.0:
        raise DomainError("beta must lie in [0, 1]")
    err = pred - target
    n_out = err.shape[-1]
    q_cols = [i for i in range(n_out) if i != t_index]
    n_hours = err[..., 0].size
    mse_t = float(np.mean(err[..., t_index] ** 2))
    mse_q = float(np.mean(err[..., q_cols] ** 2)) if q_cols else 0.0
    grad = np.empty_like(err)
    grad[..., t_index] = beta * 2.0 * err[..., t_index] / n_hours
    if q_cols:
        grad[..., q_cols] = (1.0 - beta) * 2.0 * err[..., q_cols] / (n_hours * len(q_cols))
    return beta * mse_t + (1.0 - beta) * mse_q, grad


# ---------------------------------------------------------------------------
# optimiser and training loop


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-3
    batch_size: int = 32
    epochs: int = 50
    beta: float = 0.5
    dropout: float = 0.1
    seed: int = 0
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    grad_clip: float | None = 1.0

    def __post_init__(self):
        if not self.lr > 0:
            raise DomainError("learning rate must be > 0")
        if not 0.0 <= self.beta <= 1.0:
            raise DomainError("beta must lie in [0, 1]")
        if not 0.0 <= self.dropout < 1.0:
            raise DomainError("dropout must lie in [0, 1)")
        if self.batch_size < 1 or self.epochs < 0:
            raise DomainError("batch_size must be >= 1 and epochs >= 0")


@dataclass
class AdamState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    step: int = 0

    @classmethod
    def zeros(cls, weights: MetamodelWeights) -> "AdamState":
        return cls(zeros_like(weights), zeros_like(weights), 0)


def adam_step(weights: MetamodelWeights, grads: Mapping[str, np.ndarray], state: AdamState,
              config: TrainConfig) -> tuple[MetamodelWeights, AdamState]:
    """Bias-corrected Adam update; returns new weights and a new state."""
    if set(grads) != set(weights.params):
        raise DomainError("gradient names do not mirror the weights")
    b1, b2 = config.adam_beta1, config.adam_beta2
    t = state.step + 1
    new_p, new_m, new_v = {}, {}, {}
    for name, w in weights.params.items():
        g = grads[name]
        if g.shape != w.shape:
            raise DomainError(f"{name}: gradient shape {g.shape} != {w.shape}")
        m = b1 * state.m[name] + (1.0 - b1) * g
        v = b2 * state.v[name] + (1.0 - b2) * g * g
        m_hat = m / (1.0 - b1**t)
        v_hat = v / (1.0 - b2**t)
        new_p[name] = w - config.lr * m_hat / (np.sqrt(v_hat) + config.adam_eps)
        new_m[name], new_v[name] = m, v
    return weights.replace(new_p), AdamState(new_m, new_v, t)


def clip_gradients(grads: dict[str, np.ndarray], max_norm: float | None) -> dict[str, np.ndarray]:
    if max_norm is None:
        return grads
    norm = math.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
    if norm <= max_norm:
        return grads
    scale = max_norm / norm
    return {k: g * scale for k, g in grads.items()}


@dataclass
class TrainingData:
    """Scaled arrays ready for training; batch axis first."""

    x_train: np.ndarray
    y_train: np.ndarray
    x_val: np.ndarray
    y_val: np.ndarray
    output_channels: tuple[str, ...] = OUTPUT_CHANNELS
    normalizer: Normalizer | None = None
    feature_layout: FeatureLayout = DEFAULT_LAYOUT
    mask_train: np.ndarray | None = None
    mask_val: np.ndarray | None = None

    @classmethod
    def from_dataset(cls, dataset, normalizer: Normalizer, channels: Sequence[str] = OUTPUT_CHANNELS,
                     layout: FeatureLayout = DEFAULT_LAYOUT) -> "TrainingData":
        xt, yt, mt = dataset.arrays(normalizer, "train", layout, channels)
        xv, yv, mv = dataset.arrays(normalizer, "validation", layout, channels)
        return cls(xt, yt, xv, yv, tuple(channels), normalizer, layout, mt, mv)


@dataclass
class TrainResult:
    weights: MetamodelWeights
    history: list[dict] = field(default_factory=list)
    best_epoch: int = -1


def evaluate_loss(weights: MetamodelWeights, x: np.ndarray, y: np.ndarray, beta: float, batch_size: int = 64) -> float:
    """Mean per-example loss in eval mode."""
    if len(x) == 0:
        return float("nan")
    total = 0.0
    for lo in range(0, len(x), batch_size):
        pred = forward(weights, x[lo : lo + batch_size])
        n = len(pred)
        total += loss(pred, y[lo : lo + batch_size], beta) * n
    return total / len(x)


def train(data: TrainingData, config: TrainConfig = TrainConfig(), *, kind: str = "lstm", d_emb: int = 32,
          n_layers: int = 2, init: MetamodelWeights | None = None, log_every: int = 1) -> TrainResult:
    """Mini-batch Adam on ``beta * MSE_T + (1 - beta) * MSE_Q``.

    Returns the weights with the lowest validation loss (training loss when
    there is no validation split) and the per-epoch history.
    """
    if len(data.x_train) == 0:
        raise TrainingError("empty training split")
    seeds = np.random.SeedSequence(config.seed).spawn(3)
    init_rng, shuffle_rng, drop_rng = (np.random.default_rng(s) for s in seeds)
    layout = ModelLayout(kind, data.x_train.shape[-1], d_emb, n_layers, data.output_channels)
    weights = init if init is not None else init_weights(layout, init_rng, normalizer=data.normalizer,
                                                         feature_layout=data.feature_layout)
    state = AdamState.zeros(weights)
    has_val = len(data.x_val) > 0
    best, best_score, best_epoch = weights, float("inf"), -1
    history = []
    n = len(data.x_train)
    for epoch in range(config.epochs):
        t0 = time.perf_counter()
        order = shuffle_rng.permutation(n)
        total = 0.0
        for lo in range(0, n, config.batch_size):
            idx = np.sort(order[lo : lo + config.batch_size])
            pred, cache = forward(weights, data.x_train[idx], train=True, dropout=config.dropout,
                                  rng=drop_rng, return_cache=True)
            value, dpred = loss_and_grad(pred, data.y_train[idx], config.beta)
            grads = clip_gradients(backward(weights, cache, dpred), config.grad_clip)
            weights, state = adam_step(weights, grads, state, config)
            total += value * len(idx)
        train_loss = total / n
        val_loss = evaluate_loss(weights, data.x_val, data.y_val, config.beta) if has_val else float("nan")
        if not math.isfinite(train_loss) or (has_val and not math.isfinite(val_loss)):
            raise TrainingError(f"training diverged at epoch {epoch}: train loss {train_loss}, "
                                f"validation loss {val_loss}, lr {config.lr}")
        score = val_loss if has_val else train_loss
        if score < best_score:
            best, best_score, best_epoch = weights, score, epoch
        history.append({"epoch": epoch, "train_loss": train_loss, "val_loss": val_loss,
                        "seconds": time.perf_counter() - t0})
        if log_every and epoch % log_every == 0:
            log.info("%s epoch %d: train %.3e val %.3e (%.1fs)", kind, epoch, train_loss, val_loss,
                     history[-1]["seconds"])
    return TrainResult(best, history, best_epoch)


def ffn_forward(weights: MetamodelWeights, features: np.ndarray, **kwargs):
    """Hour-wise dense baseline; same contract as :func:`forward`."""
    if weights.layout.kind != "ffn":
        raise DomainError("ffn_forward needs FFN weights")
    return forward(weights, features, **kwargs)


def ffn_train(data: TrainingData, config: TrainConfig = TrainConfig(), *, d_emb: int = 32,
              n_layers: int = 2, **kwargs) -> TrainResult:
    return train(data, config, kind="ffn", d_emb=d_emb, n_layers=n_layers, **kwargs)


def numerical_gradient(weights: MetamodelWeights, x: np.ndarray, y: np.ndarray, beta: float = 0.5,
                       step: float = 1e-4, names: Iterable[str] | None = None) -> dict[str, np.ndarray]:
    """Central finite differences of the loss (eval mode, no dropout)."""
    out = {}
    for name in names or weights.params:
        base = weights.params[name]
        g = np.zeros_like(base)
        flat = base.ravel()
        for i in range(flat.size):
            pert = flat.copy()
            pert[i] += step
            plus = loss(forward(weights.replace({**weights.params, name: pert.reshape(base.shape)}), x), y, beta)
            pert[i] -= 2 * step
            minus = loss(forward(weights.replace({**weights.params, name: pert.reshape(base.shape)}), x), y, beta)
            g.flat[i] = (plus - minus) / (2 * step)
        out[name] = g
    return out


def relative_error(a: np.ndarray, b: np.ndarray, floor: float = 1e-12) -> float:
    """Tensor-level relative error ``||a - b|| / max(||a||, ||b||)``."""
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(a), np.linalg.norm(b), floor))


def analytic_gradient(weights: MetamodelWeights, x: np.ndarray, y: np.ndarray, beta: float = 0.5):
    pred, cache = forward(weights, x, return_cache=True)
    _, dpred = loss_and_grad(pred, y, beta)
    return backward(weights, cache, dpred)
