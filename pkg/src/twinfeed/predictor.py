"""Recurrent one-step-ahead channel predictor with deterministic training.

The network is a Jordan-style recurrent net: the external input is the
current channel matrix plus `delay` past matrices (real parts of the whole
window first, then imaginary parts), and the internal input is the previous
predicted output vector appended raw. Hidden layers apply tanh, the output
layer is a plain weighted sum, and there are no bias terms.

Both protocol endpoints must end up with bit-identical weights from the same
data, so everything that touches the parameters is pinned down: PCG64 init
stream seeded from the config, fixed mini-batch order (no shuffling), fixed
reduction order, single-threaded updates.
"""

from __future__ import annotations

import struct
import time
from dataclasses import dataclass, field

import numpy as np

from .channel import ChannelTrace
from .errors import (
    ConfigurationError,
    NumericError,
    ShapeError,
    TraceParseError,
    TrainingError,
)

__all__ = [
    "PredictorConfig",
    "PredictorModel",
    "TrainingReport",
    "preprocess",
    "postprocess",
    "forward",
    "train",
    "predict_step",
    "count_multiplies",
    "multiply_count_formula",
    "build_model",
    "save_model",
    "load_model",
    "model_to_bytes",
    "model_from_bytes",
]

# Components whose training-set deviation falls below this are treated as
# constant: their normalized input is centered only, and the output path pins
# the prediction to the training mean exactly (raw std multiplier of 0).
_STD_FLOOR = 1e-12

_MODEL_MAGIC = b"JRNN"
_MODEL_VERSION = 1


# =========================
# Configuration and model
# =========================


@dataclass(frozen=True)
class PredictorConfig:
    delay: int = 2
    hidden_layers: int = 2
    hidden_units: int = 20
    learn_rate: float = 1e-4
    batch_size: int = 20
    epochs: int = 100
    seed: int = 0
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8

    def __post_init__(self):
        if self.delay < 0:
            raise ConfigurationError(f"delay must be >= 0, got {self.delay}")
        if self.hidden_layers < 1:
            raise ConfigurationError(f"hidden_layers must be >= 1, got {self.hidden_layers}")
        if self.hidden_units < 1:
            raise ConfigurationError(f"hidden_units must be >= 1, got {self.hidden_units}")
        if self.epochs < 1:
            raise ConfigurationError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ConfigurationError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.learn_rate <= 0:
            raise ConfigurationError(f"learn_rate must be positive, got {self.learn_rate}")
        if self.seed < 0 or self.seed >= 2 ** 64:
            raise ConfigurationError(f"seed must fit in 64 unsigned bits, got {self.seed}")


@dataclass(eq=False)
class PredictorModel:
    """Weights, normalization, and recurrent state of one endpoint's predictor.

    `weights` holds the stage matrices in application order:
    input->hidden (J, I), then hidden->hidden (J, J) per extra hidden layer,
    then hidden->output (K, J). `norm_std` is the raw per-component training
    deviation; components with zero deviation are pinned to `norm_mean` on the
    output side. `recurrent_state` lives in the raw channel domain.
    """

    cfg: PredictorConfig
    n_r: int
    n_t: int
    weights: list
    norm_mean: np.ndarray
    norm_std: np.ndarray
    recurrent_state: np.ndarray

    @property
    def vec_width(self) -> int:
        """Real components per channel matrix (re block + im block)."""
        return 2 * self.n_r * self.n_t

    @property
    def input_width(self) -> int:
        """External window inputs plus the internal recurrent block."""
        return (self.cfg.delay + 2) * self.vec_width

    @property
    def output_width(self) -> int:
        return self.vec_width

    @property
    def norm_divisor(self) -> np.ndarray:
        return np.where(self.norm_std > _STD_FLOOR, self.norm_std, 1.0)

    def clone(self) -> "PredictorModel":
        return PredictorModel(
            cfg=self.cfg,
            n_r=self.n_r,
            n_t=self.n_t,
            weights=[w.copy() for w in self.weights],
            norm_mean=self.norm_mean.copy(),
            norm_std=self.norm_std.copy(),
            recurrent_state=self.recurrent_state.copy(),
        )

    def reset_recurrent(self) -> None:
        self.recurrent_state = np.zeros(self.vec_width)


@dataclass
class TrainingReport:
    train_mse: list = field(default_factory=list)
    valid_mse: list = field(default_factory=list)
    final_valid_nmse_db: float = float("nan")
    wall_seconds: float = 0.0
    multiply_count: int = 0


def _stage_shapes(cfg: PredictorConfig, input_width: int, output_width: int):
    shapes = [(cfg.hidden_units, input_width)]
    shapes += [(cfg.hidden_units, cfg.hidden_units)] * (cfg.hidden_layers - 1)
    shapes.append((output_width, cfg.hidden_units))
    return shapes


def build_model(cfg: PredictorConfig, n_r: int, n_t: int) -> PredictorModel:
    """Fresh model with seeded uniform [-1/sqrt(fan_in), +1/sqrt(fan_in)] init,
    identity normalization, and zero recurrent state."""
    vec_width = 2 * n_r * n_t
    input_width = (cfg.delay + 2) * vec_width
    rng = np.random.Generator(np.random.PCG64(cfg.seed))
    weights = []
    for rows, cols in _stage_shapes(cfg, input_width, vec_width):
        bound = 1.0 / np.sqrt(cols)
        weights.append(rng.uniform(-bound, bound, size=(rows, cols)))
    return PredictorModel(
        cfg=cfg,
        n_r=n_r,
        n_t=n_t,
        weights=weights,
        norm_mean=np.zeros(vec_width),
        norm_std=np.ones(vec_width),
        recurrent_state=np.zeros(vec_width),
    )


# =========================
# Vector layout
# =========================


def _entries(m) -> np.ndarray:
    return m.entries if hasattr(m, "entries") else np.asarray(m)


def matrix_to_vec(m) -> np.ndarray:
    """Row-major (rx, tx) flatten: real components first, then imaginary."""
    e = _entries(m)
    return np.concatenate([e.real.ravel(), e.imag.ravel()])


def preprocess(window, recurrent, normalization=None) -> np.ndarray:
    """Assemble the network input vector from a chronological window of
    `delay + 1` channel matrices plus the recurrent vector.

    Layout: real blocks of the window newest-first, then the matching
    imaginary blocks, then the recurrent vector appended untouched.
    `normalization` is an optional (mean, divisor) pair applied per component
    to the window portion only.
    """
    mats = [_entries(m) for m in window]
    if not mats:
        raise ShapeError("window must contain at least one matrix")
    shape = mats[0].shape
    for m in mats[1:]:
        if m.shape != shape:
            raise ShapeError(f"window matrices disagree in shape: {shape} vs {m.shape}")
    half = shape[0] * shape[1]
    recurrent = np.asarray(recurrent, dtype=float)
    if recurrent.shape != (2 * half,):
        raise ShapeError(
            f"recurrent vector must have length {2 * half}, got shape {recurrent.shape}"
        )
    re_blocks = []
    im_blocks = []
    for m in reversed(mats):
        v = np.concatenate([m.real.ravel(), m.imag.ravel()])
        if normalization is not None:
            mean, div = normalization
            v = (v - mean) / div
        re_blocks.append(v[:half])
        im_blocks.append(v[half:])
    return np.concatenate(re_blocks + im_blocks + [recurrent])


def postprocess(out, n_r: int, n_t: int) -> np.ndarray:
    """Inverse of the single-matrix layout: first half real, second half
    imaginary, reshaped row-major to (n_r, n_t)."""
    out = np.asarray(out, dtype=float)
    half = n_r * n_t
    if out.shape != (2 * half,):
        raise ShapeError(f"expected output of length {2 * half}, got shape {out.shape}")
    return (out[:half] + 1j * out[half:]).reshape(n_r, n_t)


# =========================
# Forward pass
# =========================


class _MultiplyCounter:
    __slots__ = ("count",)

    def __init__(self):
        self.count = 0


def _matvec(w: np.ndarray, x: np.ndarray, counter: _MultiplyCounter | None) -> np.ndarray:
    if counter is not None:
        counter.count += w.shape[0] * w.shape[1]
    return w @ x


def forward(model: PredictorModel, net_input, _counter: _MultiplyCounter | None = None) -> np.ndarray:
    """One pass through the stack; returns the denormalized prediction vector
    and stores it as the recurrent state for the next step."""
    a = np.asarray(net_input, dtype=float)
    if a.shape != (model.input_width,):
        raise ShapeError(
            f"network input must have length {model.input_width}, got shape {a.shape}"
        )
    for w in model.weights[:-1]:
        a = np.tanh(_matvec(w, a, _counter))
    y = _matvec(model.weights[-1], a, _counter)
    out = model.norm_mean + model.norm_std * y
    if not np.all(np.isfinite(out)):
        raise NumericError("non-finite network output")
    model.recurrent_state = out.copy()
    return out


def predict_step(model: PredictorModel, window) -> np.ndarray:
    """Predict the next channel matrix from a chronological window of
    `delay + 1` matrices, carrying the recurrent state inside the model."""
    if len(window) != model.cfg.delay + 1:
        raise ShapeError(
            f"window must hold {model.cfg.delay + 1} matrices, got {len(window)}"
        )
    q = preprocess(window, model.recurrent_state, (model.norm_mean, model.norm_divisor))
    out = forward(model, q)
    return postprocess(out, model.n_r, model.n_t)


def count_multiplies(model: PredictorModel) -> int:
    """Scalar multiplications actually performed by one forward pass,
    tallied by instrumenting every stage product. Leaves the model state
    untouched."""
    saved = model.recurrent_state.copy()
    counter = _MultiplyCounter()
    forward(model, np.zeros(model.input_width), _counter=counter)
    model.recurrent_state = saved
    return counter.count


def multiply_count_formula(hidden_units: int, input_width: int, output_width: int) -> int:
    """Closed-form stage count J*(I + J + K) for the default two-hidden-layer
    stack: I*J into the first hidden layer, J*J between the hidden layers,
    J*K into the output layer. A single-hidden-layer model performs
    J*(I + K) instead; `count_multiplies` reports whatever the model really
    does."""
    return hidden_units * (input_width + hidden_units + output_width)


# =========================
# Training
# =========================


def _forward_batch(weights, x):
    acts = [x]
    h = x
    for w in weights[:-1]:
        h = np.tanh(h @ w.T)
        acts.append(h)
    out = h @ weights[-1].T
    return acts, out


def loss_and_gradients(weights, x, y):
    """Mean-squared-error loss of a batch and its analytic gradients, one
    array per stage matrix. Exposed so the gradients can be checked against
    finite differences."""
    acts, out = _forward_batch(weights, x)
    err = out - y
    loss = float(np.mean(err ** 2))
    d_out = (2.0 / err.size) * err
    grads = [None] * len(weights)
    grads[-1] = d_out.T @ acts[-1]
    d_h = d_out @ weights[-1]
    for i in range(len(weights) - 2, -1, -1):
        d_z = d_h * (1.0 - acts[i + 1] ** 2)
        grads[i] = d_z.T @ acts[i]
        if i > 0:
            d_h = d_z @ weights[i]
    return loss, grads


def _window_matrix(norm_parts, raw, delay):
    """Stack training inputs: normalized real blocks newest-first, then the
    imaginary blocks, then the raw teacher-forced recurrent vector."""
    r_norm, i_norm = norm_parts
    n = raw.shape[0]
    rows = np.arange(delay, n - 1)
    re = np.concatenate([r_norm[rows - k] for k in range(delay + 1)], axis=1)
    im = np.concatenate([i_norm[rows - k] for k in range(delay + 1)], axis=1)
    rec = raw[rows]
    return np.concatenate([re, im, rec], axis=1), rows


def _pairs_from_trace(trace_vals, mean, div, delay):
    """(inputs, normalized targets, raw targets) for one-step-ahead pairs.

    The recurrent input is teacher-forced: the raw value the previous step
    should have predicted, i.e. the newest window sample itself.
    """
    norm = (trace_vals - mean) / div
    half = trace_vals.shape[1] // 2
    x, rows = _window_matrix((norm[:, :half], norm[:, half:]), trace_vals, delay)
    y = norm[rows + 1]
    y_raw = trace_vals[rows + 1]
    return x, y, y_raw


def _trace_vecs(trace: ChannelTrace) -> np.ndarray:
    arr = trace.as_array().reshape(len(trace), -1)
    return np.concatenate([arr.real, arr.imag], axis=1)


def train(cfg: PredictorConfig, train_trace: ChannelTrace, valid_trace: ChannelTrace):
    """Fit the predictor by mini-batch Adam on one-step-ahead regression.

    Inputs and targets are standardized per component with statistics from the
    training trace. Batches are consecutive slices in time order; two calls
    with identical arguments produce bit-identical models.

    Returns (model, report) with per-epoch training and validation MSE in
    normalized units and the final validation accuracy in dB.
    """
    if len(train_trace) < cfg.delay + 2:
        raise ConfigurationError(
            f"training trace has {len(train_trace)} samples, "
            f"need more than delay + 1 = {cfg.delay + 1}"
        )
    if len(valid_trace) < cfg.delay + 2:
        raise ConfigurationError(
            f"validation trace has {len(valid_trace)} samples, "
            f"need more than delay + 1 = {cfg.delay + 1}"
        )
    if (train_trace.n_r, train_trace.n_t) != (valid_trace.n_r, valid_trace.n_t):
        raise ShapeError("train and validation traces disagree in antenna counts")

    t_start = time.perf_counter()
    model = build_model(cfg, train_trace.n_r, train_trace.n_t)

    tr = _trace_vecs(train_trace)
    model.norm_mean = tr.mean(axis=0)
    model.norm_std = tr.std(axis=0)
    div = model.norm_divisor

    x_tr, y_tr, _ = _pairs_from_trace(tr, model.norm_mean, div, cfg.delay)
    va = _trace_vecs(valid_trace)
    x_va, y_va, y_va_raw = _pairs_from_trace(va, model.norm_mean, div, cfg.delay)

    weights = model.weights
    adam_m = [np.zeros_like(w) for w in weights]
    adam_v = [np.zeros_like(w) for w in weights]
    beta1, beta2, eps, lr = cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps, cfg.learn_rate
    step = 0

    report = TrainingReport()
    n_pairs = x_tr.shape[0]
    for epoch in range(cfg.epochs):
        sq_sum = 0.0
        for start in range(0, n_pairs, cfg.batch_size):
            xb = x_tr[start:start + cfg.batch_size]
            yb = y_tr[start:start + cfg.batch_size]
            loss, grads = loss_and_gradients(weights, xb, yb)
            sq_sum += loss * xb.shape[0]
            step += 1
            for i, g in enumerate(grads):
                adam_m[i] = beta1 * adam_m[i] + (1.0 - beta1) * g
                adam_v[i] = beta2 * adam_v[i] + (1.0 - beta2) * g ** 2
                m_hat = adam_m[i] / (1.0 - beta1 ** step)
                v_hat = adam_v[i] / (1.0 - beta2 ** step)
                weights[i] -= lr * m_hat / (np.sqrt(v_hat) + eps)
        epoch_mse = sq_sum / n_pairs
        if not np.isfinite(epoch_mse) or not all(np.all(np.isfinite(w)) for w in weights):
            raise TrainingError(f"training diverged at epoch {epoch}")
        report.train_mse.append(epoch_mse)
        _, out_va = _forward_batch(weights, x_va)
        report.valid_mse.append(float(np.mean((out_va - y_va) ** 2)))

    _, out_va = _forward_batch(weights, x_va)
    preds_raw = model.norm_mean + model.norm_std * out_va
    report.final_valid_nmse_db = _nmse_db(preds_raw, y_va_raw)
    report.multiply_count = count_multiplies(model)
    report.wall_seconds = time.perf_counter() - t_start
    return model, report


def _nmse_db(preds_raw: np.ndarray, targets_raw: np.ndarray) -> float:
    powers = np.sum(targets_raw ** 2, axis=1)
    if np.any(powers == 0.0):
        return float("nan")
    linear = float(np.mean(np.sum((preds_raw - targets_raw) ** 2, axis=1) / powers))
    if linear == 0.0:
        return float("-inf")
    return 10.0 * np.log10(linear)


# =========================
# Serialization
# =========================


def model_to_bytes(model: PredictorModel) -> bytes:
    cfg = model.cfg
    head = _MODEL_MAGIC + struct.pack(
        "<IIIIIIIIQdddd",
        _MODEL_VERSION,
        model.n_r,
        model.n_t,
        cfg.delay,
        cfg.hidden_layers,
        cfg.hidden_units,
        cfg.batch_size,
        cfg.epochs,
        cfg.seed,
        cfg.learn_rate,
        cfg.adam_beta1,
        cfg.adam_beta2,
        cfg.adam_eps,
    )
    chunks = [head]
    for arr in [model.norm_mean, model.norm_std, model.recurrent_state, *model.weights]:
        chunks.append(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    return b"".join(chunks)


def model_from_bytes(blob: bytes) -> PredictorModel:
    if blob[:4] != _MODEL_MAGIC:
        raise TraceParseError("not a serialized predictor model (bad magic)")
    fmt = "<IIIIIIIIQdddd"
    head_size = 4 + struct.calcsize(fmt)
    (version, n_r, n_t, delay, hidden_layers, hidden_units, batch_size, epochs,
     seed, learn_rate, b1, b2, eps) = struct.unpack(fmt, blob[4:head_size])
    if version != _MODEL_VERSION:
        raise TraceParseError(f"unsupported model version {version}")
    cfg = PredictorConfig(
        delay=delay,
        hidden_layers=hidden_layers,
        hidden_units=hidden_units,
        learn_rate=learn_rate,
        batch_size=batch_size,
        epochs=epochs,
        seed=seed,
        adam_beta1=b1,
        adam_beta2=b2,
        adam_eps=eps,
    )
    vec_width = 2 * n_r * n_t
    input_width = (delay + 2) * vec_width
    offset = head_size

    def take(shape):
        nonlocal offset
        count = int(np.prod(shape))
        arr = np.frombuffer(blob, dtype="<f8", count=count, offset=offset).reshape(shape)
        offset += count * 8
        return arr.copy()

    norm_mean = take((vec_width,))
    norm_std = take((vec_width,))
    recurrent = take((vec_width,))
    weights = [take(s) for s in _stage_shapes(cfg, input_width, vec_width)]
    if offset != len(blob):
        raise TraceParseError("trailing bytes after model payload")
    return PredictorModel(
        cfg=cfg,
        n_r=n_r,
        n_t=n_t,
        weights=weights,
        norm_mean=norm_mean,
        norm_std=norm_std,
        recurrent_state=recurrent,
    )


def save_model(model: PredictorModel, path) -> None:
    with open(path, "wb") as f:
        f.write(model_to_bytes(model))


def load_model(path) -> PredictorModel:
    with open(path, "rb") as f:
        return model_from_bytes(f.read())
