"""ResNet-style MLP policy network, written directly on numpy.

Topology (all hidden layers are FC -> BatchNorm -> ReLU)::

    input -> 512 -> 256 -> [256 -> 256 (+x)] x 2 -> 128 -> 64 -> softmax(10)

In a residual block the shortcut is added after the second batch norm and
before its ReLU. Class ``k`` of the output stands for MCS ``k - 1`` (class 0
is "do not access").
"""
from __future__ import annotations

import json
import logging
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

log = logging.getLogger(__name__)

BN_EPS = 1e-5
_MAGIC = b"DLMACNN\x00"
_VERSION = 1


class ModelFormatError(ValueError):
    pass


@dataclass(frozen=True)
class ModelSpec:
    input_dim: int
    stem_widths: tuple[int, ...] = (512, 256)
    n_blocks: int = 2
    tail_widths: tuple[int, ...] = (128, 64)
    output_dim: int = 10

    def __post_init__(self):
        if self.input_dim < 1 or self.output_dim < 2:
            raise ValueError("bad input/output size")
        if not self.stem_widths:
            raise ValueError("need at least one stem layer")

    @property
    def block_width(self) -> int:
        # blocks keep the stem's output width so the shortcut needs no projection
        return self.stem_widths[-1]

    @property
    def n_hidden(self) -> int:
        return len(self.stem_widths) + 2 * self.n_blocks + len(self.tail_widths)

    def dense_layers(self) -> list[tuple[str, int, int]]:
        """``(name, fan_in, fan_out)`` for each FC layer in forward order."""
        out, prev = [], self.input_dim
        for k, w in enumerate(self.stem_widths):
            out.append((f"stem{k}", prev, w))
            prev = w
        for b in range(self.n_blocks):
            out.append((f"blk{b}a", prev, prev))
            out.append((f"blk{b}b", prev, prev))
        for k, w in enumerate(self.tail_widths):
            out.append((f"tail{k}", prev, w))
            prev = w
        out.append(("out", prev, self.output_dim))
        return out

    def reduced(self, factor: int, input_dim: int | None = None) -> "ModelSpec":
        return ModelSpec(input_dim or self.input_dim,
                         tuple(w // factor for w in self.stem_widths), self.n_blocks,
                         tuple(w // factor for w in self.tail_widths), self.output_dim)


@dataclass
class PolicyModel:
    spec: ModelSpec
    params: dict[str, np.ndarray]
    buffers: dict[str, np.ndarray]
    normalization: tuple[float, float] = (0.0, 1.0)

    @property
    def dtype(self):
        return self.params["out.W"].dtype

    def copy(self) -> "PolicyModel":
        return PolicyModel(self.spec, {k: v.copy() for k, v in self.params.items()},
                           {k: v.copy() for k, v in self.buffers.items()},
                           tuple(self.normalization))


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step_count: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


@dataclass
class TrainConfig:
    epochs: int = 30
    batch_size: int = 256
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    bn_momentum: float = 0.1
    seed: int = 0
    class_weights: np.ndarray | None = None
    eval_batch: int = 4096


def label_to_class(labels) -> np.ndarray:
    return np.asarray(labels, dtype=np.int64) + 1


def class_to_label(classes) -> np.ndarray:
    return np.asarray(classes, dtype=np.int64) - 1


def init_model(spec: ModelSpec, seed: int = 0, dtype=np.float32) -> PolicyModel:
    """He-normal weights, zero biases, unit BN scale, zero BN shift."""
    rng = np.random.default_rng(seed)
    params, buffers = {}, {}
    for name, fan_in, fan_out in spec.dense_layers():
        params[f"{name}.W"] = (rng.standard_normal((fan_in, fan_out))
                               * np.sqrt(2.0 / fan_in)).astype(dtype)
        params[f"{name}.b"] = np.zeros(fan_out, dtype=dtype)
        if name != "out":
            params[f"{name}.gamma"] = np.ones(fan_out, dtype=dtype)
            params[f"{name}.beta"] = np.zeros(fan_out, dtype=dtype)
            buffers[f"{name}.running_mean"] = np.zeros(fan_out, dtype=dtype)
            buffers[f"{name}.running_var"] = np.ones(fan_out, dtype=dtype)
    return PolicyModel(spec, params, buffers)


# ---------------------------------------------------------------- forward / backward

def _softmax(logits):
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def _bn_forward(z, model, name, mode, momentum, cache):
    p, buf = model.params, model.buffers
    if mode == "train":
        mu = z.mean(axis=0)
        var = z.var(axis=0)
        if momentum:
            n = z.shape[0]
            rm, rv = buf[f"{name}.running_mean"], buf[f"{name}.running_var"]
            rm *= 1 - momentum
            rm += momentum * mu
            rv *= 1 - momentum
            rv += momentum * var * (n / (n - 1))
    else:
        mu = buf[f"{name}.running_mean"]
        var = buf[f"{name}.running_var"]
    inv = 1.0 / np.sqrt(var + BN_EPS)
    zhat = (z - mu) * inv
    if cache is not None:
        cache[name] = (zhat, inv)
    return zhat * p[f"{name}.gamma"] + p[f"{name}.beta"]


def _forward(model, x, mode, momentum=0.0, cache=None):
    if mode not in ("train", "eval"):
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
    spec, p = model.spec, model.params
    x = np.asarray(x, dtype=model.dtype)
    if x.ndim != 2 or x.shape[1] != spec.input_dim:
        raise ValueError(f"expected input of shape (batch, {spec.input_dim}), got {x.shape}")
    if mode == "train" and x.shape[0] < 2:
        raise ValueError("train-mode forward needs a batch of at least 2")

    def dense(name, h):
        if cache is not None:
            cache[f"{name}.in"] = h
        return h @ p[f"{name}.W"] + p[f"{name}.b"]

    h = x
    for k in range(len(spec.stem_widths)):
        name = f"stem{k}"
        h = np.maximum(_bn_forward(dense(name, h), model, name, mode, momentum, cache), 0)
        if cache is not None:
            cache[f"{name}.act"] = h
    for b in range(spec.n_blocks):
        skip = h
        a = np.maximum(_bn_forward(dense(f"blk{b}a", h), model, f"blk{b}a", mode, momentum,
                                   cache), 0)
        if cache is not None:
            cache[f"blk{b}a.act"] = a
        u = _bn_forward(dense(f"blk{b}b", a), model, f"blk{b}b", mode, momentum, cache)
        h = np.maximum(u + skip, 0)
        if cache is not None:
            cache[f"blk{b}b.act"] = h
    for k in range(len(spec.tail_widths)):
        name = f"tail{k}"
        h = np.maximum(_bn_forward(dense(name, h), model, name, mode, momentum, cache), 0)
        if cache is not None:
            cache[f"{name}.act"] = h
    return dense("out", h)


def forward(model: PolicyModel, x, mode: str = "eval", bn_momentum: float = 0.0) -> np.ndarray:
    """Class probabilities for a batch of (already normalized) windows.

    In train mode batch statistics are used and, if ``bn_momentum`` is non-zero,
    folded into the running statistics.
    """
    return _softmax(_forward(model, x, mode, bn_momentum))


def freeze_bn_to_batch(model: PolicyModel, x) -> None:
    """Overwrite running BN statistics with the (biased) statistics of ``x``.

    Eval mode then reproduces train-mode activations for this batch while
    treating the statistics as constants.
    """
    cache: dict = {}
    _forward(model, x, "train", 0.0, cache)
    for name, _, _ in model.spec.dense_layers():
        if name == "out":
            continue
        z = cache[f"{name}.in"] @ model.params[f"{name}.W"] + model.params[f"{name}.b"]
        model.buffers[f"{name}.running_mean"][...] = z.mean(axis=0)
        model.buffers[f"{name}.running_var"][...] = z.var(axis=0)


def predict_proba(model: PolicyModel, windows_dbm) -> np.ndarray:
    """Eval-mode probabilities for raw dBm windows."""
    mean, std = model.normalization
    x = (np.asarray(windows_dbm, dtype=model.dtype) - model.dtype.type(mean)) \
        / model.dtype.type(std)
    return forward(model, x, "eval")


def _bn_backward(dy, model, name, mode, cache, grads):
    zhat, inv = cache[name]
    grads[f"{name}.gamma"] = (dy * zhat).sum(axis=0)
    grads[f"{name}.beta"] = dy.sum(axis=0)
    dzhat = dy * model.params[f"{name}.gamma"]
    if mode == "eval":
        return dzhat * inv
    n = dy.shape[0]
    return (inv / n) * (n * dzhat - dzhat.sum(axis=0) - zhat * (dzhat * zhat).sum(axis=0))


def _dense_backward(dz, model, name, cache, grads):
    grads[f"{name}.W"] = cache[f"{name}.in"].T @ dz
    grads[f"{name}.b"] = dz.sum(axis=0)
    return dz @ model.params[f"{name}.W"].T


def loss_and_gradients(model: PolicyModel, x, labels, class_weights=None, mode: str = "train",
                       bn_momentum: float = 0.0):
    """Mean (optionally class-weighted) cross-entropy and its parameter gradients.

    ``labels`` are MCS indices (-1 = idle). With weights the per-example terms
    are scaled by their class weight and still divided by the batch size.
    """
    spec = model.spec
    classes = label_to_class(labels)
    if classes.min(initial=0) < 0 or classes.max(initial=0) >= spec.output_dim:
        raise ValueError("label out of range")
    cache: dict = {}
    logits = _forward(model, x, mode, bn_momentum, cache)
    n = logits.shape[0]
    if len(classes) != n:
        raise ValueError("labels and batch disagree in length")
    z = logits - logits.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    nll = -logp[np.arange(n), classes]
    w = (np.ones(n, dtype=logits.dtype) if class_weights is None
         else np.asarray(class_weights, dtype=logits.dtype)[classes])
    loss = float((w * nll).sum() / n)

    grads: dict[str, np.ndarray] = {}
    d = np.exp(logp)
    d[np.arange(n), classes] -= 1
    d *= (w / n)[:, None]
    d = _dense_backward(d, model, "out", cache, grads)
    for k in reversed(range(len(spec.tail_widths))):
        name = f"tail{k}"
        d = d * (cache[f"{name}.act"] > 0)
        d = _dense_backward(_bn_backward(d, model, name, mode, cache, grads), model, name,
                            cache, grads)
    for b in reversed(range(spec.n_blocks)):
        d = d * (cache[f"blk{b}b.act"] > 0)
        skip_grad = d
        d = _dense_backward(_bn_backward(d, model, f"blk{b}b", mode, cache, grads), model,
                            f"blk{b}b", cache, grads)
        d = d * (cache[f"blk{b}a.act"] > 0)
        d = _dense_backward(_bn_backward(d, model, f"blk{b}a", mode, cache, grads), model,
                            f"blk{b}a", cache, grads)
        d = d + skip_grad
    for k in reversed(range(len(spec.stem_widths))):
        name = f"stem{k}"
        d = d * (cache[f"{name}.act"] > 0)
        d = _dense_backward(_bn_backward(d, model, name, mode, cache, grads), model, name,
                            cache, grads)
    return loss, grads


def adam_step(model: PolicyModel, grads: dict, state: AdamState) -> None:
    """Bias-corrected Adam update, in place on ``model`` and ``state``."""
    for k, g in grads.items():
        if k not in model.params:
            raise KeyError(f"gradient for unknown parameter {k}")
        if g.shape != model.params[k].shape:
            raise ValueError(f"gradient shape {g.shape} != parameter shape for {k}")
    state.step_count += 1
    t = state.step_count
    c1 = 1 - state.beta1 ** t
    c2 = 1 - state.beta2 ** t
    for k, g in grads.items():
        p = model.params[k]
        m = state.m.setdefault(k, np.zeros_like(p))
        v = state.v.setdefault(k, np.zeros_like(p))
        m *= state.beta1
        m += (1 - state.beta1) * g
        v *= state.beta2
        v += (1 - state.beta2) * (g * g)
        p -= (state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)).astype(p.dtype)


# ---------------------------------------------------------------- training

def evaluate(model: PolicyModel, ds, batch: int = 4096, class_weights=None) -> tuple[float, float]:
    """Eval-mode ``(loss, accuracy)`` over a dataset."""
    if len(ds) == 0:
        return float("nan"), float("nan")
    total_loss, correct = 0.0, 0
    for lo in range(0, len(ds), batch):
        idx = np.arange(lo, min(lo + batch, len(ds)))
        probs = predict_proba(model, ds.windows(idx))
        classes = label_to_class(ds.labels[idx])
        nll = -np.log(np.maximum(probs[np.arange(len(idx)), classes], 1e-30))
        if class_weights is not None:
            nll = nll * np.asarray(class_weights)[classes]
        total_loss += float(nll.sum())
        correct += int((probs.argmax(axis=1) == classes).sum())
    return total_loss / len(ds), correct / len(ds)


def train(model: PolicyModel, train_ds, val_ds, cfg: TrainConfig | None = None):
    """Mini-batch Adam on shuffled batches; returns ``(best model, history)``.

    ``history`` holds one dict per epoch (``epoch, train_loss, val_loss,
    val_acc``). The returned model is the snapshot with the best validation
    accuracy. Normalization statistics are taken from ``train_ds``.
    """
    cfg = cfg or TrainConfig()
    if len(train_ds) == 0 or len(val_ds) == 0:
        raise ValueError("train and validation sets must be non-empty")
    for ds in (train_ds, val_ds):
        if ds.window_len != model.spec.input_dim:
            raise ValueError(f"dataset windows have length {ds.window_len}, model expects "
                             f"{model.spec.input_dim}")
    history: list[dict] = []
    if cfg.epochs <= 0:
        return model, history
    model = model.copy()
    model.normalization = tuple(float(v) for v in train_ds.normalization)
    mean, std = model.normalization
    state = AdamState(cfg.lr, cfg.beta1, cfg.beta2, cfg.eps)
    rng = np.random.default_rng(cfg.seed)
    best, best_acc = model.copy(), -1.0
    n = len(train_ds)
    bs = min(cfg.batch_size, n)
    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(n)
        losses = []
        for lo in range(0, n, bs):
            idx = order[lo:lo + bs]
            if len(idx) < 2:
                continue
            x = (train_ds.windows(idx) - np.float32(mean)) / np.float32(std)
            loss, grads = loss_and_gradients(model, x, train_ds.labels[idx], cfg.class_weights,
                                             "train", cfg.bn_momentum)
            adam_step(model, grads, state)
            losses.append(loss)
        val_loss, val_acc = evaluate(model, val_ds, cfg.eval_batch, cfg.class_weights)
        history.append({"epoch": epoch, "train_loss": float(np.mean(losses)),
                        "val_loss": val_loss, "val_acc": val_acc})
        log.info("epoch %d train_loss %.4f val_loss %.4f val_acc %.4f", epoch,
                 history[-1]["train_loss"], val_loss, val_acc)
        if val_acc > best_acc:
            best, best_acc = model.copy(), val_acc
    return best, history


def write_history(history, path) -> None:
    with open(path, "w") as fh:
        fh.write("epoch,train_loss,val_loss,val_acc\n")
        for h in history:
            fh.write(f"{h['epoch']},{h['train_loss']:.6f},{h['val_loss']:.6f},"
                     f"{h['val_acc']:.6f}\n")


# ---------------------------------------------------------------- persistence

def save_model(model: PolicyModel, path) -> None:
    """Versioned container: magic, version, JSON header, float32 LE tensors."""
    names = list(model.params) + list(model.buffers)
    tensors = {**model.params, **model.buffers}
    spec = asdict(model.spec)
    header = {
        "spec": {k: list(v) if isinstance(v, tuple) else v for k, v in spec.items()},
        "normalization": [float(model.normalization[0]), float(model.normalization[1])],
        "class_of_label": {str(lab): lab + 1 for lab in range(-1, model.spec.output_dim - 1)},
        "tensors": [[k, list(tensors[k].shape)] for k in names],
    }
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<II", _VERSION, len(blob)))
        fh.write(blob)
        for k in names:
            fh.write(np.ascontiguousarray(tensors[k], dtype="<f4").tobytes())


def load_model(path, input_dim: int | None = None) -> PolicyModel:
    data = Path(path).read_bytes()
    if data[:8] != _MAGIC:
        raise ModelFormatError(f"{path}: not a model file (bad magic)")
    if len(data) < 16:
        raise ModelFormatError(f"{path}: truncated header")
    version, hlen = struct.unpack_from("<II", data, 8)
    if version != _VERSION:
        raise ModelFormatError(f"{path}: unsupported model version {version}")
    try:
        header = json.loads(data[16:16 + hlen])
    except ValueError as exc:
        raise ModelFormatError(f"{path}: corrupt header") from exc
    s = header["spec"]
    spec = ModelSpec(s["input_dim"], tuple(s["stem_widths"]), s["n_blocks"],
                     tuple(s["tail_widths"]), s["output_dim"])
    if input_dim is not None and spec.input_dim != input_dim:
        raise ValueError(f"model expects windows of {spec.input_dim} slots, got {input_dim}")
    off = 16 + hlen
    params, buffers = {}, {}
    for name, shape in header["tensors"]:
        count = int(np.prod(shape))
        if off + 4 * count > len(data):
            raise ModelFormatError(f"{path}: truncated tensor data at {name}")
        arr = np.frombuffer(data, "<f4", count, off).reshape(shape).astype(np.float32)
        off += 4 * count
        (buffers if name.endswith(("running_mean", "running_var")) else params)[name] = arr
    if off != len(data):
        raise ModelFormatError(f"{path}: {len(data) - off} trailing bytes")
    return PolicyModel(spec, params, buffers, tuple(header["normalization"]))
