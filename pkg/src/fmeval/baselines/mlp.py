"""Fully connected network trained with plain mini-batch SGD, in numpy.

A "4-layer" network here has four weight layers: input -> h -> h -> h -> output.
Regression minimizes mean squared error; binary classification minimizes
mean binary cross-entropy on a single logit.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
import numpy as np

from fmeval.domain import TabularDataset
from fmeval.errors import DivergenceError, InvalidInput
from fmeval.util import atomic_write_bytes, rng_for

REGRESSION = "regression"
BINARY = "binary_classification"


@dataclass(frozen=True)
class MlpConfig:
    layer_sizes: tuple[int, ...]
    activation: str = "relu"
    learning_rate: float = 0.05
    epochs: int = 500
    batch_size: int = 32
    seed: int = 0
    task: str = REGRESSION
    dtype: str = "float64"

    def __post_init__(self):
        object.__setattr__(self, "layer_sizes", tuple(int(s) for s in self.layer_sizes))
        if len(self.layer_sizes) < 2:
            raise InvalidInput("an MLP needs at least an input and an output layer")
        if any(s < 1 for s in self.layer_sizes):
            raise InvalidInput("layer sizes must be positive")
        if self.activation not in ("relu", "tanh"):
            raise InvalidInput(f"unsupported activation {self.activation!r}")
        if self.task not in (REGRESSION, BINARY):
            raise InvalidInput(f"unknown task {self.task!r}")
        if self.task == BINARY and self.layer_sizes[-1] != 1:
            raise InvalidInput("binary classification uses a single output logit")
        if self.epochs < 0 or self.batch_size < 1 or self.learning_rate <= 0:
            raise InvalidInput("epochs >= 0, batch_size >= 1 and learning_rate > 0 are required")

    def with_(self, **changes) -> "MlpConfig":
        return MlpConfig(**{**asdict(self), **changes})

    @property
    def n_params(self) -> int:
        s = self.layer_sizes
        return sum(s[i] * s[i + 1] + s[i + 1] for i in range(len(s) - 1))


def four_layer(n_inputs: int, hidden: int, task: str = REGRESSION, **kw) -> MlpConfig:
    return MlpConfig((n_inputs, hidden, hidden, hidden, 1), task=task, **kw)


def synthetic_mlp_config(seed: int = 0) -> MlpConfig:
    """4 weight layers of 64 units, as used against the 1-D function families."""
    return four_layer(1, 64, REGRESSION, learning_rate=0.01, epochs=2000, batch_size=25, seed=seed)


def table1_mlp_config(n_inputs: int, seed: int = 0, epochs: int = 500) -> MlpConfig:
    """4 weight layers of 500 units for the income task."""
    return four_layer(n_inputs, 500, BINARY, learning_rate=0.05, epochs=epochs, batch_size=32,
                      seed=seed, dtype="float32")


@dataclass
class MlpModel:
    config: MlpConfig
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    loss_trace: list[float] = field(default_factory=list)

    def logits(self, X) -> np.ndarray:
        return _forward(self, np.asarray(X, dtype=self.weights[0].dtype))[0][-1]

    def predict(self, X) -> np.ndarray:
        out = self.logits(X)[:, 0]
        if self.config.task == BINARY:
            return (out > 0).astype(int)
        return out.astype(float)

    def predict_proba(self, X) -> np.ndarray:
        return _sigmoid(self.logits(X)[:, 0].astype(float))

    def loss(self, X, y) -> float:
        return float(_loss_and_grads(self, np.asarray(X, dtype=self.weights[0].dtype),
                                     np.asarray(y, dtype=float), want_grads=False)[0])

    def parameters(self) -> list[np.ndarray]:
        out = []
        for W, b in zip(self.weights, self.biases):
            out += [W, b]
        return out


def init_model(config: MlpConfig) -> MlpModel:
    rng = rng_for(config.seed, "mlp-init")
    dt = np.dtype(config.dtype)
    weights, biases = [], []
    sizes = config.layer_sizes
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        gain = 2.0 if config.activation == "relu" else 1.0
        weights.append(rng.normal(0.0, np.sqrt(gain / fan_in), size=(fan_in, fan_out)).astype(dt))
        biases.append(np.zeros(fan_out, dtype=dt))
    return MlpModel(config, weights, biases)


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def _act(z, kind):
    return np.maximum(z, 0) if kind == "relu" else np.tanh(z)


def _act_grad(z, a, kind):
    return (z > 0).astype(z.dtype) if kind == "relu" else 1.0 - a * a


def _forward(model: MlpModel, X: np.ndarray):
    acts, pre = [X], []
    last = len(model.weights) - 1
    a = X
    for i, (W, b) in enumerate(zip(model.weights, model.biases)):
        z = a @ W + b
        pre.append(z)
        a = z if i == last else _act(z, model.config.activation)
        acts.append(a)
    return acts, pre


def _loss_and_grads(model: MlpModel, X: np.ndarray, y: np.ndarray, want_grads: bool = True):
    acts, pre = _forward(model, X)
    out = acts[-1]
    n = X.shape[0]
    ft = np.promote_types(out.dtype, np.float64)
    if model.config.task == BINARY:
        z = out[:, 0].astype(ft)
        # mean of log(1 + e^z) - y z, computed stably
        loss = np.mean(np.logaddexp(0.0, z) - y * z)
        d_out = ((_sigmoid(z) - y) / n)[:, None]
    else:
        diff = out.astype(ft) - y.reshape(n, -1)
        loss = np.mean(diff**2)
        d_out = 2.0 * diff / diff.size
    if not want_grads:
        return loss, None, None
    d = d_out.astype(X.dtype)
    gW, gb = [None] * len(model.weights), [None] * len(model.weights)
    for i in range(len(model.weights) - 1, -1, -1):
        gW[i] = acts[i].T @ d
        gb[i] = d.sum(axis=0)
        if i > 0:
            d = (d @ model.weights[i].T) * _act_grad(pre[i - 1], acts[i], model.config.activation)
    return loss, gW, gb


def mlp_train(config: MlpConfig, X, y=None, model: MlpModel | None = None) -> MlpModel:
    """Train with shuffled mini-batch SGD at a fixed learning rate.

    ``X`` may be a numerized TabularDataset, in which case ``y`` is taken from it.

    ``loss_trace[e]`` is the mean pre-update mini-batch loss of epoch e, which
    for full-batch runs is the training loss before each step.
    """
    if isinstance(X, TabularDataset):
        X, y = X.matrix(), X.targets()
    X = np.asarray(X, dtype=config.dtype)
    y = np.asarray(y, dtype=float).reshape(len(X), -1) if config.task == REGRESSION else np.asarray(y, dtype=float)
    if X.ndim != 2 or X.shape[1] != config.layer_sizes[0]:
        raise InvalidInput(f"expected inputs of width {config.layer_sizes[0]}, got {X.shape}")
    if config.task == BINARY and not np.all((y == 0) | (y == 1)):
        raise InvalidInput("binary classification labels must be 0 or 1")
    if config.task == REGRESSION and y.shape[1] != config.layer_sizes[-1]:
        raise InvalidInput("target width does not match the output layer")
    model = model or init_model(config)
    rng = rng_for(config.seed, "mlp-batches")
    n = len(X)
    lr = config.learning_rate
    for epoch in range(config.epochs):
        order = rng.permutation(n)
        total, seen = 0.0, 0
        for start in range(0, n, config.batch_size):
            idx = order[start:start + config.batch_size]
            # overflow on the way to a NaN loss is reported as DivergenceError below
            with np.errstate(over="ignore", invalid="ignore"):
                loss, gW, gb = _loss_and_grads(model, X[idx], y[idx])
            if not np.isfinite(loss):
                raise DivergenceError(epoch)
            loss = float(loss)
            for W, b, dW, db in zip(model.weights, model.biases, gW, gb):
                W -= lr * dW
                b -= lr * db
            total += loss * len(idx)
            seen += len(idx)
        model.loss_trace.append(total / seen)
    return model


def flat_grad(model: MlpModel, X, y) -> np.ndarray:
    X = np.asarray(X, dtype=model.weights[0].dtype)
    _, gW, gb = _loss_and_grads(model, X, np.asarray(y, dtype=float))
    return np.concatenate([g.ravel() for pair in zip(gW, gb) for g in pair])


def random_model(config: MlpConfig) -> MlpModel:
    """Initialized weights plus small random biases, so no unit starts exactly at a ReLU kink."""
    model = init_model(config)
    rng = rng_for(config.seed, "mlp-bias")
    for b in model.biases:
        b += rng.normal(0.0, 0.1, size=b.shape).astype(b.dtype)
    return model


def mlp_grad_check(config: MlpConfig, X, y, step: float = 1e-5, model: MlpModel | None = None) -> float:
    """Largest relative gap between backprop and central-difference gradients.

    Relative error is |a - n| / max(|a|, |n|, 1e-8) per parameter. The
    finite differences are taken in extended precision so that cancellation
    in loss(w + h) - loss(w - h) does not swamp small gradients.
    """
    if config.n_params > 1000:
        raise InvalidInput("gradient checks are limited to networks of at most 1000 parameters")
    config = config.with_(dtype="float64")
    model = model or random_model(config)
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    analytic = flat_grad(model, X, y)
    wide = MlpModel(config, [W.astype(np.longdouble) for W in model.weights],
                    [b.astype(np.longdouble) for b in model.biases])
    Xw, yw = X.astype(np.longdouble), y.astype(np.longdouble)
    h = np.longdouble(step)
    numeric = np.empty_like(analytic)
    k = 0
    for p in wide.parameters():
        flat = p.reshape(-1)
        for j in range(flat.size):
            orig = flat[j]
            flat[j] = orig + h
            up = _loss_and_grads(wide, Xw, yw, want_grads=False)[0]
            flat[j] = orig - h
            down = _loss_and_grads(wide, Xw, yw, want_grads=False)[0]
            flat[j] = orig
            numeric[k] = float((up - down) / (2 * h))
            k += 1
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-8)
    return float(np.max(np.abs(analytic - numeric) / denom))


# -- persistence -----------------------------------------------------------------

_MAGIC = "fmeval-mlp-v1"


def dumps_mlp(model: MlpModel) -> bytes:
    """Text header line (JSON) followed by little-endian float64 parameters.

    Parameter order: W0, b0, W1, b1, ...; each W is row-major (fan_in, fan_out).
    """
    header = {"format": _MAGIC, "config": asdict(model.config), "dtype": "<f8",
              "shapes": [list(p.shape) for p in model.parameters()]}
    body = b"".join(np.ascontiguousarray(p, dtype="<f8").tobytes() for p in model.parameters())
    return json.dumps(header, sort_keys=True).encode("utf-8") + b"\n" + body


def loads_mlp(data: bytes) -> MlpModel:
    head, _, body = data.partition(b"\n")
    header = json.loads(head.decode("utf-8"))
    if header.get("format") != _MAGIC:
        raise InvalidInput("not an fmeval MLP weight file")
    config = MlpConfig(**header["config"])
    expected = 8 * sum(int(np.prod(shape)) for shape in header["shapes"])
    if expected != len(body):
        raise InvalidInput("weight file length does not match its header")
    params, offset = [], 0
    for shape in header["shapes"]:
        count = int(np.prod(shape))
        arr = np.frombuffer(body, dtype="<f8", count=count, offset=offset).reshape(shape)
        params.append(arr.astype(config.dtype))
        offset += 8 * count
    return MlpModel(config, params[0::2], params[1::2])


def save_mlp(model: MlpModel, path: str | Path) -> None:
    atomic_write_bytes(path, dumps_mlp(model))


def load_mlp(path: str | Path) -> MlpModel:
    return loads_mlp(Path(path).read_bytes())
