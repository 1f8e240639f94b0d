"""Numpy multilayer perceptron surrogate with hand-written backprop and AdamW."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

CHECKPOINT_FORMAT = "hggs-lab/mlp-v1"


class TrainingDivergenceError(FloatingPointError):
    def __init__(self, epoch: int, loss: float):
        super().__init__(f"non-finite training loss {loss!r} at epoch {epoch}")
        self.epoch = epoch


@dataclass
class MlpSurrogate:
    """tanh hidden layers, identity output; weights are (fan_in, fan_out)."""

    layer_sizes: tuple[int, ...]
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    lo: np.ndarray
    hi: np.ndarray
    seed: int = 0

    def __post_init__(self):
        self.layer_sizes = tuple(int(s) for s in self.layer_sizes)
        self.lo = np.asarray(self.lo, dtype=float)
        self.hi = np.asarray(self.hi, dtype=float)
        pairs = list(zip(self.layer_sizes[:-1], self.layer_sizes[1:]))
        if len(self.weights) != len(pairs) or len(self.biases) != len(pairs):
            raise ValueError("parameter count does not match layer_sizes")
        for (a, b), w, c in zip(pairs, self.weights, self.biases):
            if w.shape != (a, b) or c.shape != (b,):
                raise ValueError(f"layer {a}->{b} has weight {w.shape}, bias {c.shape}")
        if self.layer_sizes[-1] != 1:
            raise ValueError("the surrogate predicts a single scalar")

    @classmethod
    def init(cls, layer_sizes: Sequence[int], lo, hi, seed: int = 0) -> "MlpSurrogate":
        """Uniform fan-in initialization, U(-1/sqrt(fan_in), 1/sqrt(fan_in))."""
        rng = np.random.default_rng(seed)
        ws, bs = [], []
        for a, b in zip(layer_sizes[:-1], layer_sizes[1:]):
            bound = 1.0 / np.sqrt(a)
            ws.append(rng.uniform(-bound, bound, size=(a, b)))
            bs.append(rng.uniform(-bound, bound, size=b))
        return cls(tuple(layer_sizes), ws, bs, lo, hi, seed)

    @property
    def input_dim(self) -> int:
        return self.layer_sizes[0]

    def params(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    def copy(self) -> "MlpSurrogate":
        return MlpSurrogate(
            self.layer_sizes,
            [w.copy() for w in self.weights],
            [b.copy() for b in self.biases],
            self.lo.copy(), self.hi.copy(), self.seed,
        )

    def flat_params(self) -> np.ndarray:
        return np.concatenate([p.ravel() for p in self.params()])

    def normalize(self, coeffs) -> np.ndarray:
        return (np.asarray(coeffs, dtype=float) - self.lo) / (self.hi - self.lo)

    def astype(self, dtype) -> "MlpSurrogate":
        return MlpSurrogate(
            self.layer_sizes,
            [w.astype(dtype) for w in self.weights],
            [b.astype(dtype) for b in self.biases],
            self.lo.copy(), self.hi.copy(), self.seed,
        )


def _forward_cache(model: MlpSurrogate, X: np.ndarray):
    acts = [model.normalize(X).astype(model.weights[0].dtype, copy=False)]
    last = len(model.weights) - 1
    for k, (w, b) in enumerate(zip(model.weights, model.biases)):
        z = acts[-1] @ w + b
        acts.append(z if k == last else np.tanh(z))
    return acts


def predict(model: MlpSurrogate, coeffs) -> np.ndarray:
    """Batch prediction, shape (N,)."""
    X = np.atleast_2d(np.asarray(coeffs, dtype=float))
    if X.shape[1] != model.input_dim:
        raise ValueError(f"expected {model.input_dim} inputs, got {X.shape[1]}")
    return _forward_cache(model, X)[-1][:, 0].astype(float)


def forward(model: MlpSurrogate, coeffs) -> float:
    x = np.asarray(coeffs, dtype=float)
    if x.shape != (model.input_dim,):
        raise ValueError(f"expected a vector of length {model.input_dim}, got shape {x.shape}")
    return float(predict(model, x[None, :])[0])


def _xy(data) -> tuple[np.ndarray, np.ndarray]:
    if hasattr(data, "coeffs"):
        return data.coeffs, data.freqs
    X, y = data
    return np.asarray(X, dtype=float), np.asarray(y, dtype=float)


def loss_mse(model: MlpSurrogate, data) -> float:
    X, y = _xy(data)
    if len(y) == 0:
        raise ValueError("loss of an empty dataset is undefined")
    r = predict(model, X) - y
    return float(np.mean(r * r))


def residuals(model: MlpSurrogate, data) -> np.ndarray:
    """|prediction - label| per sample, in dataset order."""
    X, y = _xy(data)
    if len(y) == 0:
        return np.empty(0)
    return np.abs(predict(model, X) - y)


def loss_and_grads(model: MlpSurrogate, X: np.ndarray, y: np.ndarray):
    """Mean squared error and its gradient for every (weight, bias) pair."""
    acts = _forward_cache(model, X)
    n = X.shape[0]
    diff = acts[-1][:, 0] - y.astype(acts[-1].dtype, copy=False)
    loss = float(np.mean(diff * diff))
    delta = (2.0 / n) * diff[:, None]
    gws: list[np.ndarray] = [None] * len(model.weights)
    gbs: list[np.ndarray] = [None] * len(model.weights)
    for k in range(len(model.weights) - 1, -1, -1):
        gws[k] = acts[k].T @ delta
        gbs[k] = delta.sum(axis=0)
        if k:
            delta = (delta @ model.weights[k].T) * (1.0 - acts[k] * acts[k])
    return loss, gws, gbs


@dataclass
class Adam:
    """Adam with decoupled weight decay; one moment pair per parameter array."""

    params: list[np.ndarray]
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0
    t: int = 0
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)

    def __post_init__(self):
        self.m = [np.zeros_like(p) for p in self.params]
        self.v = [np.zeros_like(p) for p in self.params]

    def step(self, grads: Sequence[np.ndarray], lr: float) -> None:
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            if self.weight_decay:
                p -= lr * self.weight_decay * p
            p -= lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 2e-3
    weight_decay: float = 1e-5
    epochs_per_stage: int = 3000
    warm_epochs: int = 300
    # None means 0.1 ** (1 / epochs_per_stage): one decade per stage
    lr_decay_gamma: float | None = None
    early_stop_patience: int = 200
    early_stop_min_delta: float = 1e-5
    seed: int = 0
    hidden: tuple[int, ...] = (128, 256, 128)
    # reinitialize instead of warm-starting at every HGGS cycle
    reinitialize: bool = False
    # float32 halves training time; float64 keeps gradients exact for checking
    dtype: str = "float64"

    def __post_init__(self):
        if self.learning_rate <= 0 or self.weight_decay < 0:
            raise ValueError("learning_rate must be positive and weight_decay non-negative")
        if self.epochs_per_stage < 1 or self.warm_epochs < 0:
            raise ValueError("epochs_per_stage >= 1 and warm_epochs >= 0 required")
        if self.lr_decay_gamma is not None and not 0.0 < self.lr_decay_gamma <= 1.0:
            raise ValueError("lr_decay_gamma must lie in (0, 1]")
        if self.early_stop_patience < 1:
            raise ValueError("early_stop_patience must be positive")
        if self.dtype not in ("float32", "float64"):
            raise ValueError("dtype must be float32 or float64")

    @property
    def gamma(self) -> float:
        if self.lr_decay_gamma is not None:
            return self.lr_decay_gamma
        return 0.1 ** (1.0 / self.epochs_per_stage)


@dataclass
class TrainResult:
    model: MlpSurrogate
    train_rmse: list[float]
    val_rmse: list[float]
    stopped_epoch: int
    best_epoch: int

    @property
    def history(self) -> dict:
        return {"train_rmse": self.train_rmse, "val_rmse": self.val_rmse}


EpochHook = Callable[[int, MlpSurrogate, "TrainResult"], "tuple[np.ndarray, np.ndarray] | None"]


def new_model(spec, cfg: TrainConfig, seed: int | None = None) -> MlpSurrogate:
    sizes = (spec.coeff_dim, *cfg.hidden, 1)
    return MlpSurrogate.init(sizes, spec.lo, spec.hi, cfg.seed if seed is None else seed)


def train(
    model: MlpSurrogate,
    train_set,
    val_set,
    cfg: TrainConfig,
    epochs: int | None = None,
    on_epoch: EpochHook | None = None,
) -> TrainResult:
    """Full-batch AdamW with exponential decay and early stopping.

    The input model is not modified. Early stopping tracks validation RMSE
    (training RMSE when ``val_set`` is None) and the best parameters are
    returned. ``on_epoch`` may return replacement training arrays that take
    effect from the next epoch.
    """
    epochs = cfg.epochs_per_stage if epochs is None else epochs
    X, y = _xy(train_set)
    if len(y) == 0:
        raise ValueError("cannot train on an empty dataset")
    Xv, yv = _xy(val_set) if val_set is not None else (None, None)
    net = model.astype(cfg.dtype)
    opt = Adam(net.params(), weight_decay=cfg.weight_decay)
    result = TrainResult(net, [], [], 0, -1)
    best_score = np.inf
    best = net.copy()
    gamma = cfg.gamma
    for epoch in range(epochs):
        loss, gws, gbs = loss_and_grads(net, X, y)
        if not np.isfinite(loss):
            raise TrainingDivergenceError(epoch, loss)
        grads = []
        for gw, gb in zip(gws, gbs):
            grads += [gw, gb]
        opt.step(grads, cfg.learning_rate * gamma ** epoch)
        # training RMSE is the pre-update value; it costs no extra pass
        tr = float(np.sqrt(loss))
        result.train_rmse.append(tr)
        score = tr
        if Xv is not None and len(yv):
            score = float(np.sqrt(loss_mse(net, (Xv, yv))))
            result.val_rmse.append(score)
        result.stopped_epoch = epoch
        if score < best_score - cfg.early_stop_min_delta or result.best_epoch < 0:
            best_score = score
            best = net.copy()
            result.best_epoch = epoch
        elif epoch - result.best_epoch >= cfg.early_stop_patience:
            break
        if on_epoch is not None:
            new = on_epoch(epoch, net, result)
            if new is not None:
                X, y = new
    result.model = best
    return result


def save_checkpoint(model: MlpSurrogate, path, extra: dict | None = None) -> Path:
    path = Path(path)
    doc = {
        "format": CHECKPOINT_FORMAT,
        "layer_sizes": list(model.layer_sizes),
        "params": model.flat_params().tolist(),
        "lo": model.lo.tolist(),
        "hi": model.hi.tolist(),
        "seed": model.seed,
    }
    if extra:
        doc["extra"] = extra
    path.write_text(json.dumps(doc))
    return path


def load_checkpoint(path) -> MlpSurrogate:
    doc = json.loads(Path(path).read_text())
    if doc.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"unsupported checkpoint format {doc.get('format')!r}")
    sizes = doc["layer_sizes"]
    flat = np.asarray(doc["params"], dtype=float)
    ws, bs, pos = [], [], 0
    for a, b in zip(sizes[:-1], sizes[1:]):
        ws.append(flat[pos:pos + a * b].reshape(a, b))
        pos += a * b
        bs.append(flat[pos:pos + b].copy())
        pos += b
    if pos != flat.size:
        raise ValueError("checkpoint parameter count does not match layer_sizes")
    return MlpSurrogate(tuple(sizes), ws, bs, doc["lo"], doc["hi"], doc.get("seed", 0))
