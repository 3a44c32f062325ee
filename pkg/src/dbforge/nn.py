"""Small numpy classifiers: softmax regression and ReLU MLPs trained with
minibatch cross-entropy, plus a seeded weighted sampler with replacement."""
from __future__ import annotations

import math
import os
from dataclasses import dataclass

import numpy as np

from .errors import AllZeroWeights, DimMismatch, DivergenceDetected, FormatError

MODEL_TAG = "#dbforge-model"
MODEL_VERSION = "v1"


@dataclass(frozen=True)
class Architecture:
    input_dim: int
    hidden: tuple = ()
    n_classes: int = 2

    def __post_init__(self):
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        if self.input_dim < 1 or self.n_classes < 2 or any(h < 1 for h in self.hidden):
            raise ValueError(f"invalid architecture {self}")
        if len(self.hidden) > 2:
            raise ValueError("at most two hidden layers are supported")

    @property
    def layer_sizes(self):
        return (self.input_dim, *self.hidden, self.n_classes)

    @property
    def n_params(self) -> int:
        sizes = self.layer_sizes
        return sum(a * b + b for a, b in zip(sizes[:-1], sizes[1:]))

    def describe(self) -> str:
        hidden = ",".join(map(str, self.hidden)) or "-"
        return f"input={self.input_dim} hidden={hidden} classes={self.n_classes}"


@dataclass
class TrainConfig:
    epochs: int | None = 20
    iterations: int | None = None
    batch_size: int = 64
    learning_rate: float = 1e-2
    optimizer: str = "adam"
    seed: int = 0
    weight_decay: float = 0.0

    def validate(self):
        if (self.epochs is None) == (self.iterations is None):
            raise ValueError("set exactly one of epochs / iterations")
        budget = self.epochs if self.epochs is not None else self.iterations
        if budget < 0:
            raise ValueError("training budget must be nonnegative")
        if self.batch_size < 1 or self.learning_rate < 0 or self.weight_decay < 0:
            raise ValueError("batch_size must be >= 1, learning_rate and weight_decay >= 0")
        if self.optimizer not in ("sgd", "adam"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        return self


class ClassifierModel:
    """Parameters are ``[W0, b0, W1, b1, ...]`` with ``W_k`` of shape
    (fan_in, fan_out); hidden layers use ReLU."""

    def __init__(self, arch: Architecture, params, init: str = ""):
        self.arch = arch
        self.params = [np.asarray(p, dtype=np.float64) for p in params]
        self.init = init
        self.loss_history: list = []
        sizes = arch.layer_sizes
        expected = []
        for a, b in zip(sizes[:-1], sizes[1:]):
            expected += [(a, b), (b,)]
        if [p.shape for p in self.params] != expected:
            raise DimMismatch(f"parameter shapes {[p.shape for p in self.params]} do not match {arch}")

    def copy(self) -> "ClassifierModel":
        m = ClassifierModel(self.arch, [p.copy() for p in self.params], self.init)
        m.loss_history = list(self.loss_history)
        return m

    def _check(self, X):
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 2 or X.shape[1] != self.arch.input_dim:
            raise DimMismatch(f"expected inputs of width {self.arch.input_dim}, got shape {X.shape}")
        return X

    def logits(self, X) -> np.ndarray:
        h = self._check(X)
        n_layers = len(self.params) // 2
        for k in range(n_layers):
            h = h @ self.params[2 * k] + self.params[2 * k + 1]
            if k < n_layers - 1:
                h = np.maximum(h, 0.0)
        return h

    def predict_proba(self, X) -> np.ndarray:
        return softmax(self.logits(X))

    def predict_labels(self, X) -> np.ndarray:
        # argmax of the probabilities, not the logits: the two can disagree
        # when logits differ below the resolution of the normalized output
        return np.argmax(self.predict_proba(X), axis=1)

    def loss_and_grad(self, X, y, weight_decay: float = 0.0):
        """Mean cross-entropy over the batch and its gradient."""
        X = self._check(X)
        y = np.asarray(y, dtype=np.int64)
        n_layers = len(self.params) // 2
        acts = [X]
        pre = []
        h = X
        for k in range(n_layers):
            z = h @ self.params[2 * k] + self.params[2 * k + 1]
            pre.append(z)
            h = np.maximum(z, 0.0) if k < n_layers - 1 else z
            acts.append(h)
        logits = acts[-1]
        shifted = logits - logits.max(axis=1, keepdims=True)
        logsum = np.log(np.exp(shifted).sum(axis=1))
        n = X.shape[0]
        loss = float(np.mean(logsum - shifted[np.arange(n), y]))
        probs = np.exp(shifted - logsum[:, None])
        delta = probs
        delta[np.arange(n), y] -= 1.0
        delta /= n
        grads = [None] * len(self.params)
        for k in reversed(range(n_layers)):
            grads[2 * k] = acts[k].T @ delta
            grads[2 * k + 1] = delta.sum(axis=0)
            if k > 0:
                delta = (delta @ self.params[2 * k].T) * (pre[k - 1] > 0)
        if weight_decay:
            for k in range(n_layers):
                W = self.params[2 * k]
                loss += 0.5 * weight_decay * float(np.sum(W * W))
                grads[2 * k] = grads[2 * k] + weight_decay * W
        return loss, grads

    def flat_params(self) -> np.ndarray:
        return np.concatenate([p.ravel() for p in self.params])

    def set_flat_params(self, flat) -> None:
        off = 0
        for p in self.params:
            p[...] = np.reshape(flat[off: off + p.size], p.shape)
            off += p.size


def softmax(logits) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def init_model(arch: Architecture, seed: int = 0, scheme: str = "fan_in_uniform") -> ClassifierModel:
    """Weights ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in)), zero biases; ``scheme="zeros"``
    gives an all-zero model."""
    rng = np.random.default_rng(np.random.SeedSequence([int(seed) & (2**63 - 1), 0x1A17]))
    sizes = arch.layer_sizes
    params = []
    for a, b in zip(sizes[:-1], sizes[1:]):
        if scheme == "zeros":
            params.append(np.zeros((a, b)))
        elif scheme == "fan_in_uniform":
            bound = 1.0 / math.sqrt(a)
            params.append(rng.uniform(-bound, bound, size=(a, b)))
        else:
            raise ValueError(f"unknown init scheme {scheme!r}")
        params.append(np.zeros(b))
    return ClassifierModel(arch, params, init=scheme)


class WeightedSampler:
    """Index sampler with replacement, probabilities proportional to ``weights``."""

    def __init__(self, weights, seed: int = 0):
        w = np.asarray(weights, dtype=np.float64)
        if w.ndim != 1 or w.size == 0:
            raise ValueError("weights must be a nonempty 1-D vector")
        if (w < 0).any() or not np.isfinite(w).all():
            raise ValueError("weights must be finite and nonnegative")
        if not w.sum() > 0:
            raise AllZeroWeights("all sampling weights are zero")
        self.weights = w
        self.seed = seed
        self._cdf = np.cumsum(w)
        self._rng = np.random.default_rng(np.random.SeedSequence([int(seed) & (2**63 - 1), 0x5A3]))

    @property
    def probabilities(self) -> np.ndarray:
        return self.weights / self.weights.sum()

    def sample_indices(self, count: int) -> np.ndarray:
        if count < 1:
            raise ValueError("count must be >= 1")
        u = self._rng.random(count) * self._cdf[-1]
        idx = np.searchsorted(self._cdf, u, side="right")
        # guards u landing exactly on the final cumulative value
        return np.minimum(idx, self.weights.size - 1)


def sample_indices(sampler: WeightedSampler, count: int) -> np.ndarray:
    return sampler.sample_indices(count)


class _Adam:
    def __init__(self, params, lr, b1=0.9, b2=0.999, eps=1e-8):
        self.lr, self.b1, self.b2, self.eps = lr, b1, b2, eps
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, params, grads):
        self.t += 1
        c1 = 1 - self.b1 ** self.t
        c2 = 1 - self.b2 ** self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= self.b1
            m += (1 - self.b1) * g
            v *= self.b2
            v += (1 - self.b2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


class _SGD:
    def __init__(self, params, lr):
        self.lr = lr

    def step(self, params, grads):
        for p, g in zip(params, grads):
            p -= self.lr * g


def fit(model: ClassifierModel, X, y, cfg: TrainConfig, sampler: WeightedSampler | None = None,
        every: int | None = None, hook=None) -> ClassifierModel:
    """Train ``model`` in place.

    ``hook(step, model)`` is called after every ``every`` optimizer steps.
    One "epoch" is ceil(N / batch_size) steps in both modes; the mean batch
    loss per epoch is appended to ``model.loss_history``.
    """
    cfg.validate()
    X = model._check(X)
    y = np.asarray(y, dtype=np.int64)
    N = X.shape[0]
    if N == 0:
        raise ValueError("cannot train on an empty dataset")
    if sampler is not None and sampler.weights.size != N:
        raise DimMismatch(f"sampler has {sampler.weights.size} weights for {N} samples")
    B = min(cfg.batch_size, N)
    per_epoch = math.ceil(N / B)
    total = cfg.epochs * per_epoch if cfg.epochs is not None else cfg.iterations
    rng = np.random.default_rng(np.random.SeedSequence([int(cfg.seed) & (2**63 - 1), 0xBA7C]))
    opt = _Adam(model.params, cfg.learning_rate) if cfg.optimizer == "adam" else _SGD(model.params, cfg.learning_rate)

    order = None
    running = []
    for step in range(total):
        pos = step % per_epoch
        if sampler is None:
            if pos == 0:
                order = rng.permutation(N)
            idx = order[pos * B: (pos + 1) * B]
        else:
            idx = sampler.sample_indices(B)
        loss, grads = model.loss_and_grad(X[idx], y[idx], cfg.weight_decay)
        if not math.isfinite(loss):
            raise DivergenceDetected(step, loss)
        running.append(loss)
        if cfg.learning_rate:
            opt.step(model.params, grads)
        if pos == per_epoch - 1 or step == total - 1:
            model.loss_history.append(float(np.mean(running)))
            running = []
        if hook is not None and every and (step + 1) % every == 0:
            hook(step + 1, model)
    return model


def train_erm(ds, arch: Architecture, cfg: TrainConfig, sampler: WeightedSampler | None = None,
              init: str = "fan_in_uniform") -> ClassifierModel:
    if ds.N == 0:
        raise ValueError("cannot train on an empty dataset")
    if arch.input_dim != ds.d:
        raise DimMismatch(f"architecture input {arch.input_dim} != dataset width {ds.d}")
    model = init_model(arch, cfg.seed, init)
    return fit(model, ds.features, ds.labels, cfg, sampler)


def predict_proba(model: ClassifierModel, ds) -> np.ndarray:
    X = ds.features if hasattr(ds, "features") else ds
    return model.predict_proba(X)


def predict_labels(model: ClassifierModel, ds) -> np.ndarray:
    X = ds.features if hasattr(ds, "features") else ds
    return model.predict_labels(X)


def gradient_check(arch: Architecture, X, y, params=None, seed: int = 0, step: float = 1e-5,
                   weight_decay: float = 0.0) -> float:
    """Max relative error between analytic and central-difference gradients.

    Relative error is ``|a - n| / max(|a|, |n|, 1e-4)``; the floor keeps
    near-zero components from amplifying finite-difference noise.
    """
    model = init_model(arch, seed) if params is None else ClassifierModel(arch, [np.array(p, float) for p in params])
    _, grads = model.loss_and_grad(X, y, weight_decay)
    analytic = np.concatenate([g.ravel() for g in grads])
    theta = model.flat_params()
    numeric = np.empty_like(theta)
    for k in range(theta.size):
        orig = theta[k]
        theta[k] = orig + step
        model.set_flat_params(theta)
        lp, _ = model.loss_and_grad(X, y, weight_decay)
        theta[k] = orig - step
        model.set_flat_params(theta)
        lm, _ = model.loss_and_grad(X, y, weight_decay)
        theta[k] = orig
        numeric[k] = (lp - lm) / (2 * step)
    model.set_flat_params(theta)
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-4)
    err = np.abs(analytic - numeric) / denom
    return float(err.max()) if err.size else 0.0


# --- checkpoint format -----------------------------------------------------

def dumps_model(model: ClassifierModel) -> str:
    lines = [f"{MODEL_TAG} {MODEL_VERSION}", f"arch {model.arch.describe()}", f"init {model.init or '-'}"]
    for k, p in enumerate(model.params):
        mat = p if p.ndim == 2 else p[None, :]
        lines.append(f"param {k} {mat.shape[0]} {mat.shape[1]}")
        lines.extend(",".join(repr(v) for v in row) for row in mat.tolist())
    return "\n".join(lines) + "\n"


def save_model(model: ClassifierModel, path) -> None:
    tmp = f"{path}.tmp"
    with open(tmp, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(dumps_model(model))
    os.replace(tmp, path)


def loads_model(text: str) -> ClassifierModel:
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if not lines or lines[0] != f"{MODEL_TAG} {MODEL_VERSION}":
        raise FormatError("missing or unsupported model header", 1)
    try:
        tag, *fields = lines[1].split()
        if tag != "arch":
            raise ValueError
        kv = dict(f.split("=", 1) for f in fields)
        hidden = () if kv["hidden"] == "-" else tuple(int(h) for h in kv["hidden"].split(","))
        arch = Architecture(int(kv["input"]), hidden, int(kv["classes"]))
    except (ValueError, KeyError):
        raise FormatError(f"bad architecture line {lines[1]!r}", 2) from None
    init_tag, _, init = lines[2].partition(" ")
    if init_tag != "init":
        raise FormatError("missing init line", 3)
    params = []
    pos = 3
    n_expected = 2 * (len(arch.layer_sizes) - 1)
    for k in range(n_expected):
        if pos >= len(lines):
            raise FormatError(f"missing parameter block {k}", pos + 1)
        head = lines[pos].split()
        if len(head) != 4 or head[0] != "param" or head[1] != str(k):
            raise FormatError(f"bad parameter header {lines[pos]!r}", pos + 1)
        rows, cols = int(head[2]), int(head[3])
        block = []
        for r in range(rows):
            lineno = pos + 2 + r
            if lineno - 1 >= len(lines):
                raise FormatError("truncated parameter block", lineno)
            try:
                vals = [float(v) for v in lines[lineno - 1].split(",")]
            except ValueError:
                raise FormatError("non-numeric parameter", lineno) from None
            if len(vals) != cols:
                raise FormatError(f"expected {cols} values", lineno)
            block.append(vals)
        arr = np.array(block, dtype=np.float64).reshape(rows, cols)
        params.append(arr if k % 2 == 0 else arr[0])
        pos += 1 + rows
    if pos != len(lines):
        raise FormatError("trailing content after parameters", pos + 1)
    return ClassifierModel(arch, params, "" if init == "-" else init)


def load_model(path) -> ClassifierModel:
    with open(path, encoding="utf-8", newline="\n") as fh:
        return loads_model(fh.read())
