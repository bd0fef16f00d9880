"""Feed-forward classifier in plain numpy: dense, activation, dropout, batchnorm.

Trained with Adam on categorical cross-entropy. The softmax output layer is
fused with the loss for the backward pass, so the gradient reaching the last
dense layer is ``(probs - onehot) / batch``.
"""

from __future__ import annotations

import base64
import json
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import TrainingError, ValidationError

CHECKPOINT_FORMAT = "petridecay-mlp"
CHECKPOINT_VERSION = 1

ACTIVATIONS = ("relu", "sigmoid", "softmax")


@dataclass(frozen=True)
class LayerSpec:
    kind: str  # dense | activation | dropout | batchnorm
    width: int | None = None
    activation: str | None = None
    rate: float = 0.0
    init: str = "he"  # he | glorot (dense only)

    def __post_init__(self):
        if self.kind == "dense":
            if self.width is None or self.width < 1:
                raise ValidationError(f"dense width must be >= 1, got {self.width}")
            if self.init not in ("he", "glorot"):
                raise ValidationError(f"unknown initialiser {self.init!r}")
        elif self.kind == "activation":
            if self.activation not in ACTIVATIONS:
                raise ValidationError(f"unknown activation {self.activation!r}")
        elif self.kind == "dropout":
            if not 0 <= self.rate < 1:
                raise ValidationError(f"dropout rate must lie in [0, 1), got {self.rate}")
        elif self.kind != "batchnorm":
            raise ValidationError(f"unknown layer kind {self.kind!r}")


def dense(width: int, init: str = "he") -> LayerSpec:
    return LayerSpec("dense", width=width, init=init)


def act(name: str) -> LayerSpec:
    return LayerSpec("activation", activation=name)


def dropout(rate: float) -> LayerSpec:
    return LayerSpec("dropout", rate=rate)


def batchnorm() -> LayerSpec:
    return LayerSpec("batchnorm")


# ------------------------------------------------------------------ layers


class _Ctx:
    __slots__ = ("training", "rng", "dropout", "update_stats")

    def __init__(self, training, rng, dropout=True, update_stats=True):
        self.training = training
        self.rng = rng
        self.dropout = dropout
        self.update_stats = update_stats


class Dense:
    def __init__(self, n_in: int, n_out: int, rng: np.random.Generator, init: str):
        fan = n_in if init == "he" else n_in + n_out
        limit = np.sqrt(6.0 / fan)
        self.params = {"W": rng.uniform(-limit, limit, size=(n_in, n_out)), "b": np.zeros(n_out)}
        self.grads = {}

    def forward(self, x, ctx):
        self._x = x
        return x @ self.params["W"] + self.params["b"]

    def backward(self, g):
        self.grads = {"W": self._x.T @ g, "b": g.sum(axis=0)}
        return g @ self.params["W"].T


class Activation:
    def __init__(self, name: str):
        self.name = name
        self.params, self.grads = {}, {}

    def forward(self, x, ctx):
        if self.name == "relu":
            self._mask = x > 0
            return x * self._mask
        if self.name == "sigmoid":
            self._y = 0.5 * (1.0 + np.tanh(0.5 * x))
            return self._y
        return softmax(x)

    def backward(self, g):
        if self.name == "relu":
            return g * self._mask
        if self.name == "sigmoid":
            return g * self._y * (1.0 - self._y)
        raise TrainingError("softmax is only supported as the fused output layer")


class Dropout:
    def __init__(self, rate: float):
        self.rate = rate
        self.params, self.grads = {}, {}

    def forward(self, x, ctx):
        if not (ctx.training and ctx.dropout) or self.rate == 0:
            self._mask = None
            return x
        keep = 1.0 - self.rate
        self._mask = (ctx.rng.random(x.shape) < keep) / keep
        return x * self._mask

    def backward(self, g):
        return g if self._mask is None else g * self._mask


class BatchNorm:
    def __init__(self, width: int, momentum: float = 0.99, eps: float = 1e-3):
        self.momentum, self.eps = momentum, eps
        self.params = {"gamma": np.ones(width), "beta": np.zeros(width)}
        self.running_mean = np.zeros(width)
        self.running_var = np.ones(width)
        self.grads = {}

    def forward(self, x, ctx):
        if ctx.training:
            mu = x.mean(axis=0)
            var = x.var(axis=0)
            if ctx.update_stats:
                m = self.momentum
                self.running_mean = m * self.running_mean + (1 - m) * mu
                self.running_var = m * self.running_var + (1 - m) * var
        else:
            mu, var = self.running_mean, self.running_var
        self._invstd = 1.0 / np.sqrt(var + self.eps)
        self._xhat = (x - mu) * self._invstd
        self._training = ctx.training
        return self.params["gamma"] * self._xhat + self.params["beta"]

    def backward(self, g):
        xhat, invstd = self._xhat, self._invstd
        self.grads = {"gamma": (g * xhat).sum(axis=0), "beta": g.sum(axis=0)}
        dxhat = g * self.params["gamma"]
        if not self._training:
            return dxhat * invstd
        n = g.shape[0]
        return (invstd / n) * (n * dxhat - dxhat.sum(axis=0) - xhat * (dxhat * xhat).sum(axis=0))


def softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def log_softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=1, keepdims=True))


# ------------------------------------------------------------------- model


class Adam:
    def __init__(self, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.t = 0
        self.m: dict = {}
        self.v: dict = {}

    def step(self, params):
        """``params`` yields ``(key, array, grad)``; arrays are updated in place."""
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1 - b1 ** self.t
        c2 = 1 - b2 ** self.t
        for key, p, g in params:
            m = self.m.get(key)
            if m is None:
                m = self.m[key] = np.zeros_like(p)
                self.v[key] = np.zeros_like(p)
            v = self.v[key]
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


class MlpModel:
    """A stack of layers ending in ``dense(n_classes) + softmax``."""

    def __init__(self, input_width: int, specs: Sequence[LayerSpec], seed: int = 0):
        if input_width < 1:
            raise ValidationError("input width must be >= 1")
        specs = list(specs)
        soft = [i for i, s in enumerate(specs) if s.kind == "activation" and s.activation == "softmax"]
        if soft != [len(specs) - 1]:
            raise ValidationError("softmax must appear exactly once, as the final layer")
        self.input_width = input_width
        self.specs = specs
        self.seed = seed
        self.rng = np.random.default_rng(seed)
        self.layers = []
        width = input_width
        for s in specs:
            if s.kind == "dense":
                self.layers.append(Dense(width, s.width, self.rng, s.init))
                width = s.width
            elif s.kind == "activation":
                self.layers.append(Activation(s.activation))
            elif s.kind == "dropout":
                self.layers.append(Dropout(s.rate))
            else:
                self.layers.append(BatchNorm(width))
        self.n_classes = width
        if self.n_classes < 2:
            raise ValidationError("need at least two output classes")
        self.optimizer = Adam()

    def _check(self, x):
        x = np.asarray(x, dtype=float)
        if x.ndim != 2 or x.shape[1] != self.input_width:
            raise ValidationError(f"batch width {x.shape[-1]} != model input width {self.input_width}")
        return x

    def logits(self, x, ctx: _Ctx) -> np.ndarray:
        x = self._check(x)
        for layer in self.layers[:-1]:
            x = layer.forward(x, ctx)
        return x

    def backward(self, dlogits: np.ndarray):
        g = dlogits
        for layer in reversed(self.layers[:-1]):
            g = layer.backward(g)
        return g

    def loss_and_grad(self, x, y, ctx: _Ctx) -> tuple[float, np.ndarray]:
        z = self.logits(x, ctx)
        logp = log_softmax(z)
        n = len(y)
        loss = -float(logp[np.arange(n), y].mean())
        probs = np.exp(logp)
        d = probs.copy()
        d[np.arange(n), y] -= 1.0
        self.backward(d / n)
        return loss, probs

    def parameters(self):
        for i, layer in enumerate(self.layers):
            for name in layer.params:
                yield (i, name), layer.params[name], layer.grads.get(name)

    @property
    def n_parameters(self) -> int:
        return sum(p.size for _, p, _ in self.parameters())

    def dense_widths(self) -> list[int]:
        return [s.width for s in self.specs if s.kind == "dense"]

    def count(self, kind: str) -> int:
        return sum(1 for s in self.specs if s.kind == kind)

    def state(self) -> list[np.ndarray]:
        out = []
        for layer in self.layers:
            out.extend(v.copy() for v in layer.params.values())
            if isinstance(layer, BatchNorm):
                out.extend([layer.running_mean.copy(), layer.running_var.copy()])
        return out

    def load_state(self, arrays: Sequence[np.ndarray]):
        it = iter(arrays)
        for layer in self.layers:
            for k in layer.params:
                layer.params[k] = np.array(next(it), dtype=float)
            if isinstance(layer, BatchNorm):
                layer.running_mean = np.array(next(it), dtype=float)
                layer.running_var = np.array(next(it), dtype=float)
        # fresh arrays: drop optimiser moments tied to the old ones
        self.optimizer.m.clear()
        self.optimizer.v.clear()
        self.optimizer.t = 0


def nap_hidden_widths(n: int) -> list[int]:
    # round half up in exact integer arithmetic, floor at 1
    return [max(1, (n * k + 5) // 10) for k in (12, 6, 3)]


def build_dream_nap(input_width: int, n_classes: int, seed: int = 0) -> MlpModel:
    """Three ReLU hidden layers at 1.2x, 0.6x, 0.3x the input width, dropout 0.2.

    Four dropout layers in total: one on the input and one after each hidden
    activation, the last sitting between the 0.3x layer and the output.
    """
    specs = [dropout(0.2)]
    for w in nap_hidden_widths(input_width):
        specs += [dense(w, "he"), act("relu"), dropout(0.2)]
    specs += [dense(n_classes, "glorot"), act("softmax")]
    return MlpModel(input_width, specs, seed)


def build_dream_napr(input_width: int, n_classes: int, activation: str = "relu",
                     seed: int = 0) -> MlpModel:
    """Hidden widths 300-200-100-50, each with batchnorm, activation and dropout 0.5.

    The input is batch-normalised and dropped out as well, giving five of each.
    """
    if activation not in ("relu", "sigmoid"):
        raise ValidationError(f"activation must be relu or sigmoid, not {activation!r}")
    init = "he" if activation == "relu" else "glorot"
    specs = [batchnorm(), dropout(0.5)]
    for w in (300, 200, 100, 50):
        specs += [dense(w, init), batchnorm(), act(activation), dropout(0.5)]
    specs += [dense(n_classes, "glorot"), act("softmax")]
    return MlpModel(input_width, specs, seed)


def forward(model: MlpModel, batch, training: bool = False) -> np.ndarray:
    ctx = _Ctx(training, model.rng)
    return softmax(model.logits(batch, ctx))


def predict_proba(model: MlpModel, batch, chunk: int = 4096) -> np.ndarray:
    batch = np.asarray(batch, dtype=float)
    if len(batch) == 0:
        return np.zeros((0, model.n_classes))
    return np.vstack([forward(model, batch[i:i + chunk]) for i in range(0, len(batch), chunk)])


def cross_entropy(probs: np.ndarray, y: np.ndarray) -> float:
    p = np.clip(probs[np.arange(len(y)), y], 1e-12, 1.0)
    return float(-np.log(p).mean())


# ---------------------------------------------------------------- training


@dataclass
class TrainConfig:
    batch_size: int = 64
    max_epochs: int = 100
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    patience: int | None = None


def best_epoch(val_losses: Sequence[float]) -> int:
    """1-based epoch with the lowest validation loss (earliest on ties)."""
    if len(val_losses) == 0:
        raise ValidationError("no epochs recorded")
    return int(np.argmin(np.asarray(val_losses))) + 1


def _labels(y, n_classes):
    y = np.asarray(y)
    if y.ndim == 2:
        y = y.argmax(axis=1)
    y = y.astype(np.int64)
    if len(y) and (y.min() < 0 or y.max() >= n_classes):
        raise ValidationError("label index outside the output range")
    return y


def train(model: MlpModel, x_train, y_train, x_val=None, y_val=None,
          cfg: TrainConfig | None = None) -> tuple[MlpModel, list[dict]]:
    """Mini-batch Adam; returns the model restored to its best-validation epoch.

    Labels may be class indices or one-hot rows. Without a validation set the
    training loss drives the snapshot choice.
    """
    cfg = cfg or TrainConfig()
    x_train = model._check(x_train)
    y_train = _labels(y_train, model.n_classes)
    if len(x_train) == 0:
        raise TrainingError("empty training set")
    if cfg.batch_size < 1:
        raise ValidationError("batch_size must be >= 1")
    has_val = x_val is not None and len(x_val) > 0
    if has_val:
        x_val = model._check(x_val)
        y_val = _labels(y_val, model.n_classes)
    opt = model.optimizer
    opt.lr, opt.beta1, opt.beta2, opt.eps = cfg.lr, cfg.beta1, cfg.beta2, cfg.eps

    history: list[dict] = []
    best_loss, best_state, since_best = np.inf, model.state(), 0
    n = len(x_train)
    ctx = _Ctx(True, model.rng)
    for epoch in range(1, cfg.max_epochs + 1):
        order = model.rng.permutation(n)
        tot_loss = tot_correct = 0.0
        for start in range(0, n, cfg.batch_size):
            rows = order[start:start + cfg.batch_size]
            loss, probs = model.loss_and_grad(x_train[rows], y_train[rows], ctx)
            if not np.isfinite(loss):
                raise TrainingError(f"non-finite loss at epoch {epoch}, batch starting at {start}")
            opt.step(model.parameters())
            tot_loss += loss * len(rows)
            tot_correct += float((probs.argmax(axis=1) == y_train[rows]).sum())
        rec = {"epoch": epoch, "loss": tot_loss / n, "accuracy": tot_correct / n}
        if has_val:
            pv = predict_proba(model, x_val)
            rec["val_loss"] = cross_entropy(pv, y_val)
            rec["val_accuracy"] = float((pv.argmax(axis=1) == y_val).mean())
        history.append(rec)
        monitor = rec.get("val_loss", rec["loss"])
        if monitor < best_loss:
            best_loss, best_state, since_best = monitor, model.state(), 0
        else:
            since_best += 1
            if cfg.patience is not None and since_best >= cfg.patience:
                break
    model.load_state(best_state)
    return model, history


# ----------------------------------------------------------- verification


def gradient_check(model: MlpModel, batch, labels, n_checks: int = 60, h: float = 1e-5,
                   seed: int = 0) -> float:
    """Max relative error between backprop and central differences.

    Runs in training mode (batch statistics for batchnorm) with dropout and
    running-stat updates disabled, so the loss is a deterministic function of
    the parameters. The relative error uses a floor of 1e-6 in the denominator.
    """
    batch = model._check(batch)
    y = _labels(labels, model.n_classes)
    ctx = _Ctx(True, model.rng, dropout=False, update_stats=False)

    def loss():
        z = model.logits(batch, ctx)
        return -float(log_softmax(z)[np.arange(len(y)), y].mean())

    model.loss_and_grad(batch, y, ctx)
    params = [(p, g.copy()) for _, p, g in model.parameters()]
    sizes = np.array([p.size for p, _ in params])
    total = int(sizes.sum())
    rng = np.random.default_rng(seed)
    picks = np.sort(rng.choice(total, size=min(n_checks, total), replace=False))
    offsets = np.cumsum(sizes) - sizes
    worst = 0.0
    for flat in picks:
        k = int(np.searchsorted(offsets, flat, side="right") - 1)
        p, g = params[k]
        idx = np.unravel_index(int(flat - offsets[k]), p.shape)
        orig = p[idx]
        p[idx] = orig + h
        lp = loss()
        p[idx] = orig - h
        lm = loss()
        p[idx] = orig
        num = (lp - lm) / (2 * h)
        ana = g[idx]
        worst = max(worst, abs(num - ana) / max(abs(num), abs(ana), 1e-6))
    return worst


# ------------------------------------------------------------- checkpoints


def _encode(a: np.ndarray) -> dict:
    a = np.ascontiguousarray(a, dtype="<f8")
    return {"shape": list(a.shape), "data": base64.b64encode(a.tobytes()).decode("ascii")}


def _decode(d: dict) -> np.ndarray:
    return np.frombuffer(base64.b64decode(d["data"]), dtype="<f8").reshape(d["shape"]).copy()


def save_checkpoint(model: MlpModel, path, label_alphabet: Sequence[str] = (),
                    extra: dict | None = None) -> None:
    """JSON container; arrays are base64 little-endian float64."""
    doc = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "input_width": model.input_width,
        "seed": model.seed,
        "layers": [asdict(s) for s in model.specs],
        "arrays": [_encode(a) for a in model.state()],
        "label_alphabet": list(label_alphabet),
        "extra": extra or {},
    }
    Path(path).write_text(json.dumps(doc), encoding="utf-8")


def load_checkpoint(path) -> tuple[MlpModel, list[str], dict]:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{path}: not a model checkpoint ({exc})") from None
    if doc.get("format") != CHECKPOINT_FORMAT:
        raise ValidationError(f"{path}: not a model checkpoint")
    if doc.get("version") != CHECKPOINT_VERSION:
        raise ValidationError(f"{path}: unsupported checkpoint version {doc.get('version')}")
    model = MlpModel(doc["input_width"], [LayerSpec(**s) for s in doc["layers"]], doc["seed"])
    model.load_state([_decode(a) for a in doc["arrays"]])
    return model, list(doc["label_alphabet"]), doc.get("extra", {})
