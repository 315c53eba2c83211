"""A small convolutional network with hand-written forward and backward passes.

Architecture (fixed, sizes configurable)::

    conv1 -> relu -> lrn -> pool
    conv2 -> relu -> lrn -> pool
    conv3 -> relu -> pool
    conv4 -> relu -> pool
    fc1 -> relu -> fc2 -> relu -> fc3 -> softmax

Layer functions accept a single ``(C, H, W)`` tensor or a batch
``(B, C, H, W)``. Convolutions are valid (no padding) cross-correlations.
"""

import struct
from dataclasses import dataclass, fields

import numpy as np

from .errors import DataError

MODEL_MAGIC = b"DTRJ"
MODEL_VERSION = 1
LRN_AFTER = (True, True, False, False)


@dataclass(frozen=True)
class NetworkConfig:
    input_channels: int = 3
    input_size: int = 165
    conv_filters: tuple = (16, 32, 64, 64)
    conv_kernels: tuple = (7, 5, 3, 3)
    conv_strides: tuple = (1, 1, 1, 1)
    pool_window: int = 2
    pool_stride: int = 2
    lrn_size: int = 5
    lrn_k: float = 2.0
    lrn_alpha: float = 1e-4
    lrn_beta: float = 0.75
    fc_hidden: tuple = (256, 128)
    class_count: int = 10
    learning_rate: float = 0.01
    epochs: int = 200
    batch_size: int = 8
    seed: int = 0

    def __post_init__(self):
        for name in ("conv_filters", "conv_kernels", "conv_strides", "fc_hidden"):
            object.__setattr__(self, name, tuple(int(v) for v in getattr(self, name)))
        if not (len(self.conv_filters) == len(self.conv_kernels) == len(self.conv_strides) == 4):
            raise ValueError("exactly four convolution layers are required")
        if len(self.fc_hidden) != 2:
            raise ValueError("fc_hidden must list the two hidden widths")
        if any(k < 1 or k % 2 == 0 for k in self.conv_kernels):
            raise ValueError("convolution kernels must be odd")
        if any(s < 1 for s in self.conv_strides) or self.pool_stride < 1 or self.pool_window < 1:
            raise ValueError("strides and windows must be >= 1")
        if self.lrn_size < 1 or self.lrn_size % 2 == 0:
            raise ValueError("lrn_size must be odd")
        if self.input_channels < 1 or self.class_count < 2:
            raise ValueError("need >= 1 input channel and >= 2 classes")
        if min(self.conv_filters) < 1 or min(self.fc_hidden) < 1:
            raise ValueError("layer widths must be >= 1")
        if self.learning_rate < 0 or self.epochs < 0 or self.batch_size < 1:
            raise ValueError("invalid training settings")
        self.spatial_sizes()

    @property
    def fc_widths(self):
        return (*self.fc_hidden, self.class_count)

    def spatial_sizes(self):
        """Spatial size after each (conv, pool) pair; raises if any drops below 1."""
        size = self.input_size
        out = []
        for k, s in zip(self.conv_kernels, self.conv_strides):
            conv = (size - k) // s + 1
            if size < k or conv < 1:
                raise ValueError(f"input of size {size} is smaller than kernel {k}")
            if conv < self.pool_window:
                raise ValueError(f"feature map of size {conv} is smaller than pool window")
            size = (conv - self.pool_window) // self.pool_stride + 1
            out.append((conv, size))
        return out

    def flat_length(self):
        return self.conv_filters[-1] * self.spatial_sizes()[-1][1] ** 2

    def feature_length(self):
        conv4 = self.spatial_sizes()[-1][0]
        return self.conv_filters[-1] * conv4 * conv4

    def param_shapes(self):
        shapes = {}
        cin = self.input_channels
        for i, (f, k) in enumerate(zip(self.conv_filters, self.conv_kernels), 1):
            shapes[f"conv{i}.weight"] = (f, cin, k, k)
            shapes[f"conv{i}.bias"] = (f,)
            cin = f
        nin = self.flat_length()
        for i, nout in enumerate(self.fc_widths, 1):
            shapes[f"fc{i}.weight"] = (nout, nin)
            shapes[f"fc{i}.bias"] = (nout,)
            nin = nout
        return shapes


@dataclass
class CnnModel:
    config: NetworkConfig
    params: dict

    def __post_init__(self):
        expected = self.config.param_shapes()
        if list(self.params) != list(expected):
            raise DataError("parameter names do not match the configuration")
        for name, shape in expected.items():
            if self.params[name].shape != shape:
                raise DataError(f"{name}: expected shape {shape}, got {self.params[name].shape}")

    def copy(self):
        return CnnModel(self.config, {k: v.copy() for k, v in self.params.items()})


def init_model(config, rng=None):
    """Zero biases; Gaussian weights with std sqrt(2 / fan_in)."""
    rng = np.random.default_rng(config.seed) if rng is None else rng
    params = {}
    for name, shape in config.param_shapes().items():
        if name.endswith(".bias"):
            params[name] = np.zeros(shape)
        else:
            fan_in = int(np.prod(shape[1:]))
            params[name] = rng.normal(0.0, np.sqrt(2.0 / fan_in), size=shape)
    return CnnModel(config, params)


# --- layers ---------------------------------------------------------------

def _as_batch(x):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 3:
        return x[None], True
    if x.ndim == 4:
        return x, False
    raise DataError(f"expected a (C, H, W) or (B, C, H, W) tensor, got shape {x.shape}")


def _im2col(xs, kh, kw, stride):
    """(C, H, W) -> (Ho * Wo, C * kh * kw) patch matrix."""
    win = np.lib.stride_tricks.sliding_window_view(xs, (kh, kw), axis=(1, 2))[:, ::stride, ::stride]
    c, ho, wo = win.shape[:3]
    return win.transpose(1, 2, 0, 3, 4).reshape(ho * wo, c * kh * kw), ho, wo


def _conv(x, weight, bias, stride):
    b, c, h, w = x.shape
    f, cw, kh, kw = weight.shape
    if c != cw:
        raise DataError(f"conv expects {cw} input channels, got {c}")
    if h < kh or w < kw:
        raise DataError("input smaller than kernel")
    wm = weight.reshape(f, -1)
    ho = (h - kh) // stride + 1
    wo = (w - kw) // stride + 1
    out = np.empty((b, f, ho, wo))
    for i in range(b):
        cols, _, _ = _im2col(x[i], kh, kw, stride)
        out[i] = (cols @ wm.T + bias).T.reshape(f, ho, wo)
    return out


def _conv_backward(dout, x, weight, stride, need_dx=True):
    f, c, kh, kw = weight.shape
    ho, wo = dout.shape[2:]
    wm = weight.reshape(f, -1)
    dx = np.zeros_like(x) if need_dx else None
    dw = np.zeros_like(wm)
    for i in range(len(x)):
        cols, _, _ = _im2col(x[i], kh, kw, stride)
        g = dout[i].reshape(f, -1)
        dw += g @ cols
        if not need_dx:
            continue
        dcols = (g.T @ wm).reshape(ho, wo, c, kh, kw)
        for p in range(kh):
            for q in range(kw):
                dx[i, :, p:p + stride * (ho - 1) + 1:stride, q:q + stride * (wo - 1) + 1:stride] += \
                    dcols[:, :, :, p, q].transpose(2, 0, 1)
    db = dout.sum(axis=(0, 2, 3))
    return dx, dw.reshape(weight.shape), db


def conv_forward(x, weight, bias, stride=1):
    """Valid cross-correlation summed over input maps, plus bias (no activation)."""
    xb, single = _as_batch(x)
    weight = np.asarray(weight, dtype=np.float64)
    if weight.ndim != 4 or weight.shape[2] % 2 == 0 or weight.shape[3] % 2 == 0:
        raise DataError("conv weights must be (F, C, kH, kW) with odd kernel dims")
    bias = np.asarray(bias, dtype=np.float64)
    if bias.shape != (weight.shape[0],):
        raise DataError("conv bias must have one entry per filter")
    out = _conv(xb, weight, bias, stride)
    return out[0] if single else out


def relu(x):
    return np.maximum(np.asarray(x, dtype=np.float64), 0.0)


def _pool(x, window, stride):
    b, c, h, w = x.shape
    if h < window or w < window:
        raise DataError("feature map smaller than pool window")
    ho = (h - window) // stride + 1
    wo = (w - window) // stride + 1
    best = None
    arg = np.zeros((b, c, ho, wo), dtype=np.intp)
    for p in range(window):
        for q in range(window):
            xs = x[:, :, p:p + stride * (ho - 1) + 1:stride, q:q + stride * (wo - 1) + 1:stride]
            if best is None:
                best = xs.copy()
                continue
            better = xs > best
            best = np.where(better, xs, best)
            arg[better] = p * window + q
    return best, arg


def _pool_backward(dout, arg, in_shape, window, stride):
    dx = np.zeros(in_shape)
    ho, wo = dout.shape[2:]
    for p in range(window):
        for q in range(window):
            hit = arg == p * window + q
            dx[:, :, p:p + stride * (ho - 1) + 1:stride, q:q + stride * (wo - 1) + 1:stride] += np.where(hit, dout, 0.0)
    return dx


def max_pool(x, window=2, stride=None):
    """Max over windows; returns the pooled tensor and the in-window argmax (row-major)."""
    stride = window if stride is None else stride
    xb, single = _as_batch(x)
    out, arg = _pool(xb, window, stride)
    return (out[0], arg[0]) if single else (out, arg)


def _window_sum(a, n):
    """Sum over the n nearest channels (zero beyond the ends), channel axis 1."""
    half = n // 2
    out = a.copy()
    channels = a.shape[1]
    for d in range(1, half + 1):
        if d >= channels:
            break
        out[:, d:] += a[:, :-d]
        out[:, :-d] += a[:, d:]
    return out


def _lrn(x, n, k, alpha, beta):
    denom = k + alpha * _window_sum(x * x, n)
    return x * denom ** (-beta), denom


def _lrn_backward(dout, x, denom, n, alpha, beta):
    scaled = dout * x * denom ** (-beta - 1.0)
    return dout * denom ** (-beta) - 2.0 * alpha * beta * x * _window_sum(scaled, n)


def lrn(x, n=5, k=2.0, alpha=1e-4, beta=0.75):
    """Cross-channel response normalization: a / (k + alpha * sum of nearby a^2)^beta."""
    if n < 1 or n % 2 == 0:
        raise ValueError("lrn depth must be odd")
    xb, single = _as_batch(x)
    out, _ = _lrn(xb, n, k, alpha, beta)
    return out[0] if single else out


def fc_forward(x, weight, bias):
    x = np.asarray(x, dtype=np.float64)
    weight = np.asarray(weight, dtype=np.float64)
    if x.shape[-1] != weight.shape[1] or np.shape(bias) != (weight.shape[0],):
        raise DataError(f"fc expects input length {weight.shape[1]}, got {x.shape[-1]}")
    return x @ weight.T + bias


def _softmax(logits):
    shifted = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    total = e.sum(axis=-1, keepdims=True)
    return e / total, shifted - np.log(total)


def softmax_cross_entropy(logits, label):
    """Return (loss, probs) for one example; stable for large logits."""
    logits = np.asarray(logits, dtype=np.float64)
    if not 0 <= label < logits.shape[-1]:
        raise DataError(f"label {label} out of range")
    probs, logp = _softmax(logits)
    return float(-logp[label]), probs


# --- network --------------------------------------------------------------

def _forward(model, x, keep=False):
    cfg, prm = model.config, model.params
    caches = []
    a = x
    conv4 = None
    for i in range(4):
        name = f"conv{i + 1}"
        z = _conv(a, prm[f"{name}.weight"], prm[f"{name}.bias"], cfg.conv_strides[i])
        r = np.maximum(z, 0.0)
        if i == 3:
            conv4 = r
        denom = None
        l = r
        if LRN_AFTER[i]:
            l, denom = _lrn(r, cfg.lrn_size, cfg.lrn_k, cfg.lrn_alpha, cfg.lrn_beta)
        p, arg = _pool(l, cfg.pool_window, cfg.pool_stride)
        if keep:
            caches.append((a, z, l, denom, arg))
        a = p
    h = a.reshape(len(a), -1)
    fc_cache = []
    for i in range(3):
        z = h @ prm[f"fc{i + 1}.weight"].T + prm[f"fc{i + 1}.bias"]
        fc_cache.append((h, z))
        h = np.maximum(z, 0.0) if i < 2 else z
    return h, conv4, (caches, fc_cache, a.shape)


def _check_input(model, x):
    xb, _ = _as_batch(x)
    cfg = model.config
    want = (cfg.input_channels, cfg.input_size, cfg.input_size)
    if xb.shape[1:] != want:
        raise DataError(f"input shape {xb.shape[1:]} does not match network input {want}")
    return xb


def backward(model, inputs, labels):
    """Gradients of the summed cross-entropy over a batch.

    Returns ``(grads, loss)`` where ``grads`` has the same keys as the model
    parameters and ``loss`` is the summed loss.
    """
    cfg, prm = model.config, model.params
    x = _check_input(model, inputs)
    labels = np.atleast_1d(np.asarray(labels, dtype=np.intp))
    if len(labels) != len(x):
        raise DataError("one label per input is required")
    logits, _, (caches, fc_cache, pooled_shape) = _forward(model, x, keep=True)
    probs, logp = _softmax(logits)
    rows = np.arange(len(x))
    loss = float(-logp[rows, labels].sum())

    grads = {}
    d = probs.copy()
    d[rows, labels] -= 1.0
    for i in (2, 1, 0):
        h, z = fc_cache[i]
        if i < 2:
            d = d * (z > 0)
        grads[f"fc{i + 1}.weight"] = d.T @ h
        grads[f"fc{i + 1}.bias"] = d.sum(axis=0)
        d = d @ prm[f"fc{i + 1}.weight"]
    d = d.reshape(pooled_shape)
    for i in (3, 2, 1, 0):
        a, z, l, denom, arg = caches[i]
        d = _pool_backward(d, arg, l.shape, cfg.pool_window, cfg.pool_stride)
        if LRN_AFTER[i]:
            d = _lrn_backward(d, np.maximum(z, 0.0), denom, cfg.lrn_size, cfg.lrn_alpha, cfg.lrn_beta)
        d = d * (z > 0)
        d, dw, db = _conv_backward(d, a, prm[f"conv{i + 1}.weight"], cfg.conv_strides[i], need_dx=i > 0)
        grads[f"conv{i + 1}.weight"] = dw
        grads[f"conv{i + 1}.bias"] = db
    return {k: grads[k] for k in prm}, loss


def logits(model, inputs):
    x = _check_input(model, inputs)
    out, _, _ = _forward(model, x)
    return out


def loss(model, inputs, labels):
    """Summed cross-entropy over a batch."""
    z = logits(model, inputs)
    _, logp = _softmax(z)
    labels = np.atleast_1d(np.asarray(labels, dtype=np.intp))
    return float(-logp[np.arange(len(z)), labels].sum())


def predict(model, x):
    """Return (class, probs) for one stack; ties go to the lowest class index."""
    probs = predict_proba(model, x[None] if np.ndim(x) == 3 else x)
    if np.ndim(x) == 3:
        return int(np.argmax(probs[0])), probs[0]
    return np.argmax(probs, axis=1), probs


def predict_proba(model, inputs, batch_size=16):
    x = _check_input(model, inputs)
    out = []
    for s in range(0, len(x), batch_size):
        z = logits(model, x[s:s + batch_size])
        out.append(_softmax(z)[0])
    return np.concatenate(out)


def extract_features(model, x):
    """Flattened post-ReLU activations of the fourth convolution layer."""
    xb = _check_input(model, x)
    _, conv4, _ = _forward(model, xb)
    feats = conv4.reshape(len(xb), -1)
    return feats[0] if np.ndim(x) == 3 else feats


def train(dataset, config, callback=None):
    """Minibatch gradient descent on softmax cross-entropy.

    ``dataset`` is a sequence of ``(stack, label)`` pairs. Each step applies
    ``theta -= lr * mean_gradient`` over the minibatch. ``callback(epoch, model,
    epoch_loss)`` runs after every epoch; a truthy return value stops training.
    Returns ``(model, losses)`` with the mean per-example loss of each epoch.
    """
    if len(dataset) == 0:
        raise DataError("empty training set")
    x = np.stack([np.asarray(s, dtype=np.float64) for s, _ in dataset])
    y = np.array([int(lbl) for _, lbl in dataset], dtype=np.intp)
    if (y < 0).any() or (y >= config.class_count).any():
        raise DataError("label out of range for class_count")
    rng = np.random.default_rng(config.seed)
    model = init_model(config, rng)
    _check_input(model, x)
    losses = []
    for epoch in range(config.epochs):
        order = rng.permutation(len(x))
        total = 0.0
        for s in range(0, len(order), config.batch_size):
            batch = order[s:s + config.batch_size]
            grads, batch_loss = backward(model, x[batch], y[batch])
            total += batch_loss
            step = config.learning_rate / len(batch)
            for name, g in grads.items():
                model.params[name] -= step * g
        losses.append(total / len(x))
        if callback is not None and callback(epoch, model, losses[-1]):
            break
    return model, losses


# --- model files ----------------------------------------------------------

_CONFIG_LAYOUT = "<ii4i4i4iiiiddd2iidiiq"


def _pack_config(cfg):
    return struct.pack(
        _CONFIG_LAYOUT,
        cfg.input_channels, cfg.input_size,
        *cfg.conv_filters, *cfg.conv_kernels, *cfg.conv_strides,
        cfg.pool_window, cfg.pool_stride, cfg.lrn_size,
        cfg.lrn_k, cfg.lrn_alpha, cfg.lrn_beta,
        *cfg.fc_hidden, cfg.class_count,
        cfg.learning_rate, cfg.epochs, cfg.batch_size, cfg.seed,
    )


def _unpack_config(buf):
    v = struct.unpack(_CONFIG_LAYOUT, buf)
    return NetworkConfig(
        input_channels=v[0], input_size=v[1],
        conv_filters=v[2:6], conv_kernels=v[6:10], conv_strides=v[10:14],
        pool_window=v[14], pool_stride=v[15], lrn_size=v[16],
        lrn_k=v[17], lrn_alpha=v[18], lrn_beta=v[19],
        fc_hidden=v[20:22], class_count=v[22],
        learning_rate=v[23], epochs=v[24], batch_size=v[25], seed=v[26],
    )


def save_model(model, path):
    with open(path, "wb") as fh:
        fh.write(MODEL_MAGIC)
        fh.write(bytes([MODEL_VERSION]))
        fh.write(_pack_config(model.config))
        for name in model.config.param_shapes():
            fh.write(np.ascontiguousarray(model.params[name], dtype="<f8").tobytes())


def load_model(path):
    with open(path, "rb") as fh:
        buf = fh.read()
    if buf[:4] != MODEL_MAGIC:
        raise DataError(f"{path}: not a model file")
    if buf[4] != MODEL_VERSION:
        raise DataError(f"{path}: unsupported model version {buf[4]}")
    head = 5 + struct.calcsize(_CONFIG_LAYOUT)
    try:
        cfg = _unpack_config(buf[5:head])
    except (struct.error, ValueError) as exc:
        raise DataError(f"{path}: bad configuration block ({exc})") from None
    params = {}
    offset = head
    for name, shape in cfg.param_shapes().items():
        count = int(np.prod(shape))
        if offset + 8 * count > len(buf):
            raise DataError(f"{path}: truncated parameters")
        params[name] = np.frombuffer(buf, dtype="<f8", count=count, offset=offset).astype(np.float64).reshape(shape)
        offset += 8 * count
    if offset != len(buf):
        raise DataError(f"{path}: trailing bytes after parameters")
    return CnnModel(cfg, params)


def config_fields():
    return [f.name for f in fields(NetworkConfig)]


# --- optional linear head on conv4 features -------------------------------

class LinearSVM:
    """One-vs-rest linear SVM (squared hinge, L2) fitted by full-batch gradient descent."""

    def __init__(self, reg=1e-3, steps=500, lr=0.1):
        self.reg = reg
        self.steps = steps
        self.lr = lr

    def fit(self, features, labels, class_count=None):
        x = np.asarray(features, dtype=np.float64)
        y = np.asarray(labels, dtype=np.intp)
        k = int(class_count or y.max() + 1)
        self.mean_ = x.mean(axis=0)
        self.scale_ = x.std(axis=0)
        self.scale_[self.scale_ == 0] = 1.0
        xs = (x - self.mean_) / self.scale_
        target = -np.ones((len(y), k))
        target[np.arange(len(y)), y] = 1.0
        w = np.zeros((xs.shape[1], k))
        b = np.zeros(k)
        n = len(y)
        for _ in range(self.steps):
            margin = np.maximum(0.0, 1.0 - target * (xs @ w + b))
            g = -2.0 * target * margin / n
            w -= self.lr * (xs.T @ g + self.reg * w)
            b -= self.lr * g.sum(axis=0)
        self.coef_, self.intercept_ = w, b
        return self

    def decision_function(self, features):
        xs = (np.asarray(features, dtype=np.float64) - self.mean_) / self.scale_
        return xs @ self.coef_ + self.intercept_

    def predict(self, features):
        return np.argmax(self.decision_function(features), axis=1)
