"""Multi-stream attention classifier for gaze depth level, in plain numpy.

Each stream (gaze directions, eye positions, plane intersection) is embedded
by one affine + ReLU layer, gated by its own element-wise attention, then the
three gated embeddings are concatenated and gated once more before a linear
softmax head. Gradients are written out by hand; see ``loss_and_grads``.
"""

from __future__ import annotations

import copy
import io
import struct
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .gaze_geometry import (INTERSECTION, N_FEATURES, POSITION, ROTATION,
                            DepthLabel, GazeDataset)

N_CLASSES = len(DepthLabel)


@dataclass(frozen=True)
class StreamSpec:
    name: str
    columns: slice

    @property
    def input_dim(self) -> int:
        return self.columns.stop - self.columns.start


STREAMS = (
    StreamSpec("rotation", ROTATION),
    StreamSpec("position", POSITION),
    StreamSpec("intersection", INTERSECTION),
)


class NonFiniteError(FloatingPointError):
    def __init__(self, layer: str):
        super().__init__(f"non-finite values at layer {layer!r}")
        self.layer = layer


@dataclass
class AttentionParams:
    W_a: np.ndarray
    b_a: np.ndarray
    W_c: np.ndarray

    @property
    def dim(self) -> int:
        return self.b_a.shape[0]


def _tensor_names(embed_dim: int):
    """Declared tensor order with shapes. Serialization follows this order."""
    names = []
    for s in STREAMS:
        names.append((f"embed.{s.name}.W", (s.input_dim, embed_dim)))
        names.append((f"embed.{s.name}.b", (embed_dim,)))
    for s in STREAMS:
        names.append((f"intra.{s.name}.W_a", (embed_dim, embed_dim)))
        names.append((f"intra.{s.name}.b_a", (embed_dim,)))
        names.append((f"intra.{s.name}.W_c", (embed_dim, embed_dim)))
    d = embed_dim * len(STREAMS)
    names += [("inter.W_a", (d, d)), ("inter.b_a", (d,)), ("inter.W_c", (d, d)),
              ("head.W", (d, N_CLASSES)), ("head.b", (N_CLASSES,))]
    return names


@dataclass
class DepthModelParams:
    """All learnable tensors keyed by name, plus input standardisation."""

    embed_dim: int
    tensors: dict[str, np.ndarray]
    feature_mean: np.ndarray = field(default_factory=lambda: np.zeros(N_FEATURES))
    feature_std: np.ndarray = field(default_factory=lambda: np.ones(N_FEATURES))

    def __post_init__(self):
        expected = _tensor_names(self.embed_dim)
        if [n for n, _ in expected] != list(self.tensors):
            raise ValueError("tensor names do not match the declared layout")
        for name, shape in expected:
            if self.tensors[name].shape != shape:
                raise ValueError(f"{name}: shape {self.tensors[name].shape} != {shape}")

    def attention(self, which: str) -> AttentionParams:
        p = "inter." if which == "inter" else f"intra.{which}."
        t = self.tensors
        return AttentionParams(t[p + "W_a"], t[p + "b_a"], t[p + "W_c"])

    def copy(self) -> "DepthModelParams":
        return copy.deepcopy(self)

    def n_parameters(self, ablate_intra: bool = False) -> int:
        return sum(v.size for k, v in self.tensors.items()
                   if not (ablate_intra and k.startswith("intra.")))


def zero_params(embed_dim: int = 32) -> DepthModelParams:
    return DepthModelParams(embed_dim, {n: np.zeros(s) for n, s in _tensor_names(embed_dim)})


def init_params(seed: int, embed_dim: int = 32) -> DepthModelParams:
    """Fan-in scaled uniform weights, zero biases."""
    rng = np.random.default_rng(seed)
    tensors = {}
    for name, shape in _tensor_names(embed_dim):
        if len(shape) == 1:
            tensors[name] = np.zeros(shape)
        else:
            # W_a is applied as W_a @ y, so its fan-in is its column count
            fan_in = shape[1] if name.endswith("W_a") else shape[0]
            bound = 1.0 / np.sqrt(fan_in)
            tensors[name] = rng.uniform(-bound, bound, shape)
    return DepthModelParams(embed_dim, tensors)


def _softmax(z):
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def _check(x, layer):
    if not np.isfinite(x).all():
        raise NonFiniteError(layer)


def _attend(att: AttentionParams, y):
    # rows of y are samples: z = y W_a^T + b_a, s = tanh(z) W_c  (i.e. W_c^T u per sample)
    u = np.tanh(y @ att.W_a.T + att.b_a)
    w = _softmax(u @ att.W_c)
    return w * y, (y, u, w)


def _attend_backward(att: AttentionParams, cache, d_out):
    y, u, w = cache
    d_w = d_out * y
    d_s = w * (d_w - (d_w * w).sum(axis=1, keepdims=True))
    d_Wc = u.T @ d_s
    d_z = (d_s @ att.W_c.T) * (1.0 - u * u)
    d_Wa = d_z.T @ y
    d_ba = d_z.sum(axis=0)
    d_y = d_out * w + d_z @ att.W_a
    return d_y, d_Wa, d_ba, d_Wc


def elementwise_attention(params: AttentionParams, y) -> np.ndarray:
    """``softmax(W_c^T tanh(W_a y + b_a)) * y`` for one vector or a batch of rows."""
    y = np.asarray(y, dtype=float)
    if y.shape[-1] != params.dim or params.W_a.shape != (params.dim, params.dim) \
            or params.W_c.shape != (params.dim, params.dim):
        raise ValueError(f"input of length {y.shape[-1]} does not fit attention "
                         f"of dimension {params.dim}")
    _check(y, "attention input")
    out, _ = _attend(params, np.atleast_2d(y))
    return out[0] if y.ndim == 1 else out


def _as_batch(features):
    X = np.asarray(features, dtype=float)
    if X.ndim == 1:
        X = X[None, :]
    if X.ndim != 2 or X.shape[1] != N_FEATURES:
        raise ValueError(f"expected {N_FEATURES} features per sample, got shape {X.shape}")
    return X


def forward(params: DepthModelParams, features, ablate_intra: bool = False,
            return_cache: bool = False):
    """Class probabilities for one sample (15,) or a batch (N, 15)."""
    single = np.ndim(features) == 1
    X = _as_batch(features)
    _check(X, "input")
    t = params.tensors
    Z = (X - params.feature_mean) / params.feature_std
    cache = {"streams": []}
    gated = []
    for s in STREAMS:
        x = Z[:, s.columns]
        h = x @ t[f"embed.{s.name}.W"] + t[f"embed.{s.name}.b"]
        y = np.maximum(h, 0.0)
        _check(y, f"embed.{s.name}")
        if ablate_intra:
            a, att_cache = y, None
        else:
            a, att_cache = _attend(params.attention(s.name), y)
            _check(a, f"intra.{s.name}")
        cache["streams"].append((x, h, att_cache))
        gated.append(a)
    concat = np.concatenate(gated, axis=1)
    a, cache["inter"] = _attend(params.attention("inter"), concat)
    _check(a, "inter")
    logits = a @ t["head.W"] + t["head.b"]
    _check(logits, "head")
    probs = _softmax(logits)
    cache["a"] = a
    if single:
        probs = probs[0]
    return (probs, cache) if return_cache else probs


def loss_and_grads(params: DepthModelParams, features, labels, ablate_intra: bool = False):
    """Mean cross-entropy and its exact gradient for every active tensor.

    With ``ablate_intra`` the intra-stream tensors are not part of the graph
    and are absent from the returned gradients.
    """
    X = _as_batch(features)
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    if len(X) == 0:
        raise ValueError("empty batch")
    if len(labels) != len(X):
        raise ValueError("labels do not match batch size")
    P, cache = forward(params, X, ablate_intra, return_cache=True)
    n = len(X)
    rows = np.arange(n)
    loss = float(-np.mean(np.log(np.maximum(P[rows, labels], 1e-300))))

    t = params.tensors
    grads = {}
    d_logits = P.copy()
    d_logits[rows, labels] -= 1.0
    d_logits /= n
    grads["head.W"] = cache["a"].T @ d_logits
    grads["head.b"] = d_logits.sum(axis=0)
    d_a = d_logits @ t["head.W"].T

    d_concat, gWa, gba, gWc = _attend_backward(params.attention("inter"), cache["inter"], d_a)
    grads["inter.W_a"], grads["inter.b_a"], grads["inter.W_c"] = gWa, gba, gWc

    E = params.embed_dim
    for j, s in enumerate(STREAMS):
        x, h, att_cache = cache["streams"][j]
        d_y = d_concat[:, j * E:(j + 1) * E]
        if not ablate_intra:
            d_y, gWa, gba, gWc = _attend_backward(params.attention(s.name), att_cache, d_y)
            grads[f"intra.{s.name}.W_a"] = gWa
            grads[f"intra.{s.name}.b_a"] = gba
            grads[f"intra.{s.name}.W_c"] = gWc
        d_h = d_y * (h > 0)
        grads[f"embed.{s.name}.W"] = x.T @ d_h
        grads[f"embed.{s.name}.b"] = d_h.sum(axis=0)
    # keep declared order
    return loss, {k: grads[k] for k in t if k in grads}


@dataclass
class TrainConfig:
    lr: float = 1e-3
    epochs: int = 100
    batch_size: int = 64
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    ablate_intra: bool = False
    embed_dim: int = 32
    split: tuple[float, float, float] = (0.70, 0.15, 0.15)

    def validate(self):
        if not self.lr > 0:
            raise ValueError("learning rate must be positive")
        if self.epochs < 1 or self.batch_size < 1 or self.embed_dim < 1:
            raise ValueError("epochs, batch_size and embed_dim must be >= 1")
        if len(self.split) != 3 or min(self.split) < 0 or abs(sum(self.split) - 1) > 1e-9:
            raise ValueError(f"split fractions must be non-negative and sum to 1: {self.split}")
        if self.split[0] == 0 or self.split[1] == 0:
            raise ValueError("train and validation fractions must be positive")


class Adam:
    def __init__(self, params: DepthModelParams, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = {k: np.zeros_like(v) for k, v in params.tensors.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.tensors.items()}
        self.t = 0

    def step(self, params: DepthModelParams, grads: dict):
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for k, g in grads.items():
            m, v = self.m[k], self.v[k]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            params.tensors[k] -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def stratified_split(labels, fractions, seed):
    """Per-class shuffled split into (train, val, test) index arrays."""
    rng = np.random.default_rng(seed)
    parts = ([], [], [])
    for c in np.unique(labels):
        idx = rng.permutation(np.flatnonzero(labels == c))
        n_tr = int(round(fractions[0] * len(idx)))
        n_va = int(round(fractions[1] * len(idx)))
        parts[0].append(idx[:n_tr])
        parts[1].append(idx[n_tr:n_tr + n_va])
        parts[2].append(idx[n_tr + n_va:])
    return tuple(np.sort(np.concatenate(p)) for p in parts)


@dataclass
class TrainResult:
    params: DepthModelParams
    history: list[dict]
    train: GazeDataset
    val: GazeDataset
    test: GazeDataset
    best_epoch: int


def evaluate(params: DepthModelParams, dataset: GazeDataset, ablate_intra: bool = False) -> dict:
    if len(dataset) == 0:
        raise ValueError("empty dataset")
    P = forward(params, dataset.features, ablate_intra)
    pred = P.argmax(axis=1)
    y = dataset.labels
    conf = np.zeros((N_CLASSES, N_CLASSES), dtype=np.int64)
    np.add.at(conf, (y, pred), 1)
    loss = float(-np.mean(np.log(np.maximum(P[np.arange(len(y)), y], 1e-300))))
    return {"accuracy": float(np.mean(pred == y)), "loss": loss, "confusion": conf.tolist()}


def train(dataset: GazeDataset, cfg: TrainConfig | None = None, log=None) -> TrainResult:
    """Mini-batch Adam training; returns the parameters with the best validation accuracy."""
    cfg = cfg or TrainConfig()
    cfg.validate()
    counts = dataset.class_counts()
    if counts.min() < 10:
        raise ValueError(f"need at least 10 samples per class, got {counts.tolist()}")
    tr_idx, va_idx, te_idx = stratified_split(dataset.labels, cfg.split, cfg.seed)
    if len(tr_idx) == 0 or len(va_idx) == 0:
        raise ValueError("degenerate split")
    train_ds, val_ds, test_ds = (dataset.subset(i) for i in (tr_idx, va_idx, te_idx))

    params = init_params(cfg.seed, cfg.embed_dim)
    params.feature_mean = train_ds.features.mean(axis=0)
    std = train_ds.features.std(axis=0)
    params.feature_std = np.where(std > 0, std, 1.0)

    opt = Adam(params, cfg.lr, cfg.beta1, cfg.beta2, cfg.eps)
    rng = np.random.default_rng(cfg.seed + 1)
    history = []
    best, best_acc, best_epoch = params.copy(), -1.0, 0
    X, y = train_ds.features, train_ds.labels
    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(len(X))
        for start in range(0, len(X), cfg.batch_size):
            b = order[start:start + cfg.batch_size]
            _, grads = loss_and_grads(params, X[b], y[b], cfg.ablate_intra)
            opt.step(params, grads)
        tr = evaluate(params, train_ds, cfg.ablate_intra)
        va = evaluate(params, val_ds, cfg.ablate_intra)
        history.append({"epoch": epoch, "train_loss": tr["loss"], "train_acc": tr["accuracy"],
                        "val_loss": va["loss"], "val_acc": va["accuracy"]})
        if va["accuracy"] > best_acc:
            best, best_acc, best_epoch = params.copy(), va["accuracy"], epoch
        if log is not None:
            log(history[-1])
    return TrainResult(best, history, train_ds, val_ds, test_ds, best_epoch)


HISTORY_FIELDS = ("epoch", "train_loss", "train_acc", "val_loss", "val_acc")


def write_history(history, path):
    with open(path, "w") as fh:
        fh.write(",".join(HISTORY_FIELDS) + "\n")
        for row in history:
            fh.write(",".join(str(row[k]) for k in HISTORY_FIELDS) + "\n")


# ---- weight file -------------------------------------------------------------
# header: magic, version, embed_dim, n_streams, per-stream input dims,
# n_features, then mean/std vectors, then tensors in declared order (<f8).

MAGIC = b"GZDM"
VERSION = 1


class WeightFileError(ValueError):
    pass


def dumps_weights(params: DepthModelParams) -> bytes:
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<IIII", VERSION, params.embed_dim, len(STREAMS), N_FEATURES))
    buf.write(struct.pack(f"<{len(STREAMS)}I", *(s.input_dim for s in STREAMS)))
    buf.write(np.asarray(params.feature_mean, dtype="<f8").tobytes())
    buf.write(np.asarray(params.feature_std, dtype="<f8").tobytes())
    for name, _ in _tensor_names(params.embed_dim):
        buf.write(np.ascontiguousarray(params.tensors[name], dtype="<f8").tobytes())
    return buf.getvalue()


def loads_weights(data: bytes, source: str = "<bytes>") -> DepthModelParams:
    head = 4 + 16
    if len(data) < head or data[:4] != MAGIC:
        raise WeightFileError(f"{source}: not a depth-model weight file")
    version, embed_dim, n_streams, n_features = struct.unpack_from("<IIII", data, 4)
    if version != VERSION:
        raise WeightFileError(f"{source}: unsupported version {version} (expected {VERSION})")
    if n_streams != len(STREAMS) or n_features != N_FEATURES:
        raise WeightFileError(f"{source}: layout mismatch ({n_streams} streams, "
                              f"{n_features} features)")
    dims = struct.unpack_from(f"<{n_streams}I", data, head)
    if dims != tuple(s.input_dim for s in STREAMS):
        raise WeightFileError(f"{source}: stream dims {dims} do not match model")
    off = head + 4 * n_streams
    layout = _tensor_names(embed_dim)
    total = 2 * N_FEATURES + sum(int(np.prod(s)) for _, s in layout)
    if len(data) != off + 8 * total:
        raise WeightFileError(f"{source}: expected {off + 8 * total} bytes, got {len(data)}")
    flat = np.frombuffer(data, dtype="<f8", offset=off).astype(np.float64)
    mean, std = flat[:N_FEATURES].copy(), flat[N_FEATURES:2 * N_FEATURES].copy()
    pos = 2 * N_FEATURES
    tensors = {}
    for name, shape in layout:
        k = int(np.prod(shape))
        tensors[name] = flat[pos:pos + k].reshape(shape).copy()
        pos += k
    return DepthModelParams(embed_dim, tensors, mean, std)


def save_weights(params: DepthModelParams, path) -> None:
    Path(path).write_bytes(dumps_weights(params))


def load_weights(path) -> DepthModelParams:
    path = Path(path)
    return loads_weights(path.read_bytes(), str(path))


def train_trials(dataset: GazeDataset, cfg: TrainConfig, seeds, log=None) -> list[dict]:
    """Train once per seed on the same data and score each run on its test split."""
    out = []
    for seed in seeds:
        res = train(dataset, replace(cfg, seed=seed))
        metrics = evaluate(res.params, res.test, cfg.ablate_intra)
        row = {"seed": seed, "test_accuracy": metrics["accuracy"], "test_loss": metrics["loss"],
               "confusion": metrics["confusion"], "best_epoch": res.best_epoch, "result": res}
        out.append(row)
        if log is not None:
            log(row)
    return out


def summarize_trials(trials: list[dict]) -> dict:
    acc = np.array([t["test_accuracy"] for t in trials])
    return {"seeds": [t["seed"] for t in trials], "test_accuracy": acc.tolist(),
            "mean": float(acc.mean()), "std": float(acc.std()),
            "best_epochs": [t["best_epoch"] for t in trials]}
