"""The CNN-LSTM: forward pass, hand-derived gradients, and model files.

Layer stack: 1-D convolution (same padding) -> batch norm -> ELU ->
non-overlapping average pooling -> LSTM over the pooled feature sequence
-> softmax on the final hidden state. The hidden dimension equals the
number of classes, so every intermediate hidden state can be read as a
running class likelihood (see the interpret module).

All gradients are analytic, derived for this fixed graph, including
backpropagation through time over the LSTM and through the batch
statistics of the normalization layer. Arrays are float64 in memory;
model files store binary32.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, fields

import numpy as np

from .binio import FormatError, check_version, expect_magic, read_exact, read_u16, read_u32
from .numerics import Rng, assert_finite, softmax_rows

BN_EPS = 1e-5
BN_MOMENTUM = 0.1  # new_running = (1 - m) * old + m * batch


@dataclass(frozen=True)
class NetConfig:
    """Architecture hyperparameters. Defaults give the full-size model:
    32 kernels of length 64 over 384-point inputs, pooled by 8 into a
    48-step sequence with a 2-dimensional hidden state."""

    kernels: int = 32
    kernel_len: int = 64
    n_samples: int = 384
    pool: int = 8
    n_classes: int = 2

    def __post_init__(self):
        if self.n_samples % self.pool != 0:
            raise ValueError("n_samples must be divisible by the pooling window")
        if min(self.kernels, self.kernel_len, self.n_samples, self.pool, self.n_classes) < 1:
            raise ValueError("all architecture sizes must be positive")

    @property
    def seq_len(self) -> int:
        return self.n_samples // self.pool


# Serialized tensor names, in canonical file order.
_TENSOR_ATTRS: list[tuple[str, str]] = [
    ("conv.w", "conv_w"),
    ("conv.b", "conv_b"),
    ("bn.gamma", "bn_gamma"),
    ("bn.beta", "bn_beta"),
    ("bn.run_mean", "bn_run_mean"),
    ("bn.run_var", "bn_run_var"),
    ("lstm.W_i", "w_i"),
    ("lstm.W_f", "w_f"),
    ("lstm.W_g", "w_g"),
    ("lstm.W_o", "w_o"),
    ("lstm.U_i", "u_i"),
    ("lstm.U_f", "u_f"),
    ("lstm.U_g", "u_g"),
    ("lstm.U_o", "u_o"),
    ("lstm.b_i", "b_i"),
    ("lstm.b_f", "b_f"),
    ("lstm.b_g", "b_g"),
    ("lstm.b_o", "b_o"),
]
_BUFFER_ATTRS = ("bn_run_mean", "bn_run_var")
LEARNABLE_ATTRS: tuple[str, ...] = tuple(
    attr for _, attr in _TENSOR_ATTRS if attr not in _BUFFER_ATTRS
)


@dataclass
class ModelParams:
    """All tensors of the model: learnable weights plus the batch-norm
    running statistics (buffers, excluded from gradients)."""

    conv_w: np.ndarray  # [kernels, 1, kernel_len]
    conv_b: np.ndarray  # [kernels]
    bn_gamma: np.ndarray
    bn_beta: np.ndarray
    bn_run_mean: np.ndarray
    bn_run_var: np.ndarray
    w_i: np.ndarray  # [classes, kernels]
    w_f: np.ndarray
    w_g: np.ndarray
    w_o: np.ndarray
    u_i: np.ndarray  # [classes, classes]
    u_f: np.ndarray
    u_g: np.ndarray
    u_o: np.ndarray
    b_i: np.ndarray  # [classes]
    b_f: np.ndarray
    b_g: np.ndarray
    b_o: np.ndarray

    def learnable_items(self):
        return [(attr, getattr(self, attr)) for attr in LEARNABLE_ATTRS]

    def copy(self) -> "ModelParams":
        return ModelParams(**{f.name: getattr(self, f.name).copy() for f in fields(self)})


def expected_shapes(config: NetConfig) -> dict[str, tuple[int, ...]]:
    k, length, d = config.kernels, config.kernel_len, config.n_classes
    shapes: dict[str, tuple[int, ...]] = {
        "conv_w": (k, 1, length),
        "conv_b": (k,),
        "bn_gamma": (k,),
        "bn_beta": (k,),
        "bn_run_mean": (k,),
        "bn_run_var": (k,),
    }
    for gate in "ifgo":
        shapes[f"w_{gate}"] = (d, k)
        shapes[f"u_{gate}"] = (d, d)
        shapes[f"b_{gate}"] = (d,)
    return shapes


def _glorot(rng: Rng, shape: tuple[int, ...], fan_in: int, fan_out: int) -> np.ndarray:
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(shape, -bound, bound)


def init_params(rng: Rng, config: NetConfig = NetConfig()) -> ModelParams:
    """Glorot-uniform weights, zero biases except a forget bias of 1,
    identity batch-norm affine, unit running variance. Deterministic in
    the generator's seed (fixed draw order)."""
    k, length, d = config.kernels, config.kernel_len, config.n_classes
    conv_w = _glorot(rng, (k, 1, length), fan_in=1 * length, fan_out=k * length)
    gates_w = {g: _glorot(rng, (d, k), fan_in=k, fan_out=d) for g in "ifgo"}
    gates_u = {g: _glorot(rng, (d, d), fan_in=d, fan_out=d) for g in "ifgo"}
    return ModelParams(
        conv_w=conv_w,
        conv_b=np.zeros(k),
        bn_gamma=np.ones(k),
        bn_beta=np.zeros(k),
        bn_run_mean=np.zeros(k),
        bn_run_var=np.ones(k),
        w_i=gates_w["i"],
        w_f=gates_w["f"],
        w_g=gates_w["g"],
        w_o=gates_w["o"],
        u_i=gates_u["i"],
        u_f=gates_u["f"],
        u_g=gates_u["g"],
        u_o=gates_u["o"],
        b_i=np.zeros(d),
        b_f=np.ones(d),
        b_g=np.zeros(d),
        b_o=np.zeros(d),
    )


# ---------------------------------------------------------------------------
# layers
# ---------------------------------------------------------------------------


def _conv_windows(x2: np.ndarray, kernel_len: int) -> np.ndarray:
    # x2: [B, n] -> contiguous [B, n, kernel_len] windows of the padded signal.
    left = (kernel_len - 1) // 2
    right = kernel_len // 2
    xpad = np.pad(x2, ((0, 0), (left, right)))
    return np.ascontiguousarray(np.lib.stride_tricks.sliding_window_view(xpad, kernel_len, axis=1))


def conv1d_same(x: np.ndarray, w: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Stride-1 'same' 1-D convolution (correlation) of a single-channel
    batch [B, 1, n] with kernels [K, 1, L]; zero padding is split
    (L-1)//2 left, L//2 right so output length equals n."""
    x = np.asarray(x, dtype=np.float64)
    w = np.asarray(w, dtype=np.float64)
    if x.ndim != 3 or x.shape[1] != 1:
        raise ValueError(f"expected input [B, 1, n], got {x.shape}")
    if w.ndim != 3 or w.shape[1] != 1:
        raise ValueError(f"expected kernels [K, 1, L], got {w.shape}")
    if np.shape(b) != (w.shape[0],):
        raise ValueError("bias shape does not match kernel count")
    windows = _conv_windows(x[:, 0, :], w.shape[2])
    return _conv_apply(windows, w, np.asarray(b, dtype=np.float64))


def _conv_apply(windows: np.ndarray, w: np.ndarray, b: np.ndarray) -> np.ndarray:
    batch, n, length = windows.shape
    w2 = w[:, 0, :]  # [K, L]
    out = windows.reshape(batch * n, length) @ w2.T + b
    return out.reshape(batch, n, w2.shape[0]).transpose(0, 2, 1)


def _conv_backward(dout, windows, w):
    batch, k, n = dout.shape
    length = windows.shape[2]
    w2 = w[:, 0, :]
    dout_flat = dout.transpose(1, 0, 2).reshape(k, batch * n)
    dw2 = dout_flat @ windows.reshape(batch * n, length)
    db = dout.sum(axis=(0, 2))
    # Scatter the per-tap contributions back onto the padded signal.
    proj = dout.transpose(0, 2, 1).reshape(batch * n, k) @ w2  # [B*n, L]
    proj = proj.reshape(batch, n, length)
    dxpad = np.zeros((batch, n + length - 1))
    for tap in range(length):
        dxpad[:, tap : tap + n] += proj[:, :, tap]
    left = (length - 1) // 2
    dx = dxpad[:, left : left + n]
    return dx, dw2[:, None, :], db


def batchnorm_eval(x, gamma, beta, run_mean, run_var):
    """Per-channel standardization using stored running statistics."""
    inv = 1.0 / np.sqrt(run_var + BN_EPS)
    return gamma[None, :, None] * (x - run_mean[None, :, None]) * inv[None, :, None] + beta[
        None, :, None
    ]


def _batchnorm_train(x, gamma, beta):
    if x.shape[0] < 2:
        raise ValueError("batch norm in train mode needs a batch of at least 2")
    mean = x.mean(axis=(0, 2))
    var = x.var(axis=(0, 2))  # population variance over batch x time
    inv_std = 1.0 / np.sqrt(var + BN_EPS)
    xhat = (x - mean[None, :, None]) * inv_std[None, :, None]
    out = gamma[None, :, None] * xhat + beta[None, :, None]
    return out, xhat, mean, var, inv_std


def batchnorm(x, gamma, beta, run_mean, run_var, mode: str):
    """Batch normalization over a [B, K, n] activation.

    Train mode standardizes with batch statistics (over batch and time);
    eval mode uses the supplied running statistics. The caller owns the
    running-stat update (see `updated_running_stats`)."""
    x = np.asarray(x, dtype=np.float64)
    if mode == "train":
        return _batchnorm_train(x, gamma, beta)[0]
    if mode == "eval":
        return batchnorm_eval(x, gamma, beta, run_mean, run_var)
    raise ValueError(f"unknown mode {mode!r}")


def updated_running_stats(params: ModelParams, batch_mean, batch_var):
    new_mean = (1.0 - BN_MOMENTUM) * params.bn_run_mean + BN_MOMENTUM * batch_mean
    new_var = (1.0 - BN_MOMENTUM) * params.bn_run_var + BN_MOMENTUM * batch_var
    return new_mean, new_var


def _batchnorm_backward(dout, xhat, inv_std, gamma):
    n_stat = dout.shape[0] * dout.shape[2]
    dgamma = np.sum(dout * xhat, axis=(0, 2))
    dbeta = np.sum(dout, axis=(0, 2))
    dxhat = dout * gamma[None, :, None]
    sum_dxhat = dxhat.sum(axis=(0, 2), keepdims=True)
    sum_dxhat_xhat = np.sum(dxhat * xhat, axis=(0, 2), keepdims=True)
    dx = (inv_std[None, :, None] / n_stat) * (
        n_stat * dxhat - sum_dxhat - xhat * sum_dxhat_xhat
    )
    return dx, dgamma, dbeta


def elu(x: np.ndarray) -> np.ndarray:
    """Exponential linear unit, alpha = 1."""
    x = np.asarray(x, dtype=np.float64)
    return np.where(x > 0.0, x, np.expm1(x))


def _elu_backward(dout, x):
    return dout * np.where(x > 0.0, 1.0, np.exp(np.minimum(x, 0.0)))


def avgpool(x: np.ndarray, pool: int) -> np.ndarray:
    """Non-overlapping temporal average pooling of a [B, K, n] activation."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[2] % pool != 0:
        raise ValueError(f"temporal length {x.shape[2]} not divisible by pool {pool}")
    b, k, n = x.shape
    return x.reshape(b, k, n // pool, pool).mean(axis=3)


def avgpool8(x: np.ndarray) -> np.ndarray:
    return avgpool(x, 8)


def _avgpool_backward(dout, pool):
    return np.repeat(dout / pool, pool, axis=2)


def _sigmoid(x):
    z = np.exp(-np.abs(x))
    return np.where(x >= 0.0, 1.0 / (1.0 + z), z / (1.0 + z))


@dataclass
class LstmCache:
    xs: np.ndarray  # [B, T, K]
    i: np.ndarray  # [T, B, D]
    f: np.ndarray
    g: np.ndarray
    o: np.ndarray
    c: np.ndarray  # cell states c_1..c_T
    tanh_c: np.ndarray
    h: np.ndarray  # [T+1, B, D], h[0] = 0


def lstm_forward(xs: np.ndarray, params: ModelParams) -> tuple[np.ndarray, LstmCache]:
    """Run the forget-gate LSTM (no peepholes) over a [B, T, K] sequence
    from zero initial hidden and cell states.

    Returns the hidden-state sequence h_1..h_T as [T, B, D] plus the cache
    needed for backpropagation through time.
    """
    xs = np.asarray(xs, dtype=np.float64)
    batch, steps, _ = xs.shape
    d = params.b_i.shape[0]
    w_all = np.concatenate([params.w_i, params.w_f, params.w_g, params.w_o], axis=0)  # [4D, K]
    u_all = np.concatenate([params.u_i, params.u_f, params.u_g, params.u_o], axis=0)  # [4D, D]
    b_all = np.concatenate([params.b_i, params.b_f, params.b_g, params.b_o])
    proj = xs.reshape(batch * steps, -1) @ w_all.T + b_all  # input part of all gates
    proj = proj.reshape(batch, steps, 4 * d)

    gates = {name: np.empty((steps, batch, d)) for name in "ifgo"}
    c_seq = np.empty((steps, batch, d))
    tanh_c = np.empty((steps, batch, d))
    h_seq = np.zeros((steps + 1, batch, d))
    c = np.zeros((batch, d))
    for t in range(steps):
        a = proj[:, t, :] + h_seq[t] @ u_all.T
        ai, af, ag, ao = a[:, :d], a[:, d : 2 * d], a[:, 2 * d : 3 * d], a[:, 3 * d :]
        i_t, f_t, o_t = _sigmoid(ai), _sigmoid(af), _sigmoid(ao)
        g_t = np.tanh(ag)
        c = f_t * c + i_t * g_t
        tc = np.tanh(c)
        gates["i"][t], gates["f"][t], gates["g"][t], gates["o"][t] = i_t, f_t, g_t, o_t
        c_seq[t] = c
        tanh_c[t] = tc
        h_seq[t + 1] = o_t * tc
    cache = LstmCache(
        xs=xs, i=gates["i"], f=gates["f"], g=gates["g"], o=gates["o"],
        c=c_seq, tanh_c=tanh_c, h=h_seq,
    )
    return h_seq[1:], cache


def _lstm_backward(dh_last: np.ndarray, cache: LstmCache, params: ModelParams):
    xs = cache.xs
    batch, steps, _ = xs.shape
    d = dh_last.shape[1]
    grads = {
        name: np.zeros_like(getattr(params, name))
        for name in ("w_i", "w_f", "w_g", "w_o", "u_i", "u_f", "u_g", "u_o",
                     "b_i", "b_f", "b_g", "b_o")
    }
    dxs = np.empty_like(xs)
    dh = dh_last
    dc = np.zeros((batch, d))
    for t in range(steps - 1, -1, -1):
        i_t, f_t, g_t, o_t = cache.i[t], cache.f[t], cache.g[t], cache.o[t]
        tc = cache.tanh_c[t]
        c_prev = cache.c[t - 1] if t > 0 else np.zeros((batch, d))
        h_prev = cache.h[t]
        do = dh * tc
        dc = dc + dh * o_t * (1.0 - tc * tc)
        di = dc * g_t
        dg = dc * i_t
        df = dc * c_prev
        dc_prev = dc * f_t
        da = {
            "i": di * i_t * (1.0 - i_t),
            "f": df * f_t * (1.0 - f_t),
            "g": dg * (1.0 - g_t * g_t),
            "o": do * o_t * (1.0 - o_t),
        }
        x_t = xs[:, t, :]
        dx_t = np.zeros_like(x_t)
        dh_prev = np.zeros((batch, d))
        for gate in "ifgo":
            w = getattr(params, f"w_{gate}")
            u = getattr(params, f"u_{gate}")
            grads[f"w_{gate}"] += da[gate].T @ x_t
            grads[f"u_{gate}"] += da[gate].T @ h_prev
            grads[f"b_{gate}"] += da[gate].sum(axis=0)
            dx_t += da[gate] @ w
            dh_prev += da[gate] @ u
        dxs[:, t, :] = dx_t
        dh = dh_prev
        dc = dc_prev
    return dxs, grads


@dataclass
class ForwardTrace:
    """Everything the backward pass (and the interpreter) needs."""

    conv_windows: np.ndarray  # [B, n, L]
    conv_out: np.ndarray  # [B, K, n]
    bn_out: np.ndarray
    bn_xhat: np.ndarray | None
    bn_mean: np.ndarray | None  # batch statistics (train mode only)
    bn_var: np.ndarray | None
    bn_inv_std: np.ndarray | None
    elu_out: np.ndarray
    pool_out: np.ndarray  # [B, K, T]
    lstm_cache: LstmCache
    hidden: np.ndarray  # [T, B, D], h_1..h_T
    probs: np.ndarray  # [B, D]


def model_forward(
    batch: np.ndarray, params: ModelParams, mode: str, config: NetConfig = NetConfig()
) -> tuple[np.ndarray, ForwardTrace]:
    """Full forward pass over a [B, 1, n] batch.

    Returns per-class probabilities [B, n_classes] (rows sum to 1) and the
    forward trace. Pure: running statistics are not touched; train-mode
    batch statistics are reported in the trace for the caller.
    """
    x = np.asarray(batch, dtype=np.float64)
    if x.ndim != 3 or x.shape[1] != 1 or x.shape[2] != config.n_samples:
        raise ValueError(f"expected batch [B, 1, {config.n_samples}], got {x.shape}")
    shapes = expected_shapes(config)
    for attr, want in shapes.items():
        got = getattr(params, attr).shape
        if got != want:
            raise ValueError(f"parameter {attr} has shape {got}, expected {want}")
    assert_finite(x, "model input")

    windows = _conv_windows(x[:, 0, :], config.kernel_len)
    conv_out = _conv_apply(windows, params.conv_w, params.conv_b)
    if mode == "train":
        bn_out, xhat, mean, var, inv_std = _batchnorm_train(
            conv_out, params.bn_gamma, params.bn_beta
        )
    elif mode == "eval":
        bn_out = batchnorm_eval(
            conv_out, params.bn_gamma, params.bn_beta, params.bn_run_mean, params.bn_run_var
        )
        xhat = mean = var = inv_std = None
    else:
        raise ValueError(f"unknown mode {mode!r}")
    elu_out = elu(bn_out)
    pool_out = avgpool(elu_out, config.pool)
    lstm_in = pool_out.transpose(0, 2, 1)  # [B, T, K]
    hidden, lstm_cache = lstm_forward(lstm_in, params)
    probs = softmax_rows(hidden[-1])
    trace = ForwardTrace(
        conv_windows=windows,
        conv_out=conv_out,
        bn_out=bn_out,
        bn_xhat=xhat,
        bn_mean=mean,
        bn_var=var,
        bn_inv_std=inv_std,
        elu_out=elu_out,
        pool_out=pool_out,
        lstm_cache=lstm_cache,
        hidden=hidden,
        probs=probs,
    )
    return probs, trace


def _mean_cross_entropy(probs: np.ndarray, labels: np.ndarray) -> float:
    picked = probs[np.arange(probs.shape[0]), labels]
    return float(-np.mean(np.log(np.maximum(picked, 1e-12))))


def model_gradients(
    batch: np.ndarray,
    labels: np.ndarray,
    params: ModelParams,
    config: NetConfig = NetConfig(),
) -> tuple[float, dict[str, np.ndarray], ForwardTrace]:
    """Mean cross-entropy loss and its exact gradients for one train batch.

    Gradients are returned as a dict keyed by parameter attribute name
    (running statistics excluded). The trace is included so the training
    loop can update running statistics from the batch statistics.
    """
    labels = np.asarray(labels)
    if labels.ndim != 1 or labels.shape[0] != np.shape(batch)[0]:
        raise ValueError("labels must be a vector matching the batch size")
    if labels.min() < 0 or labels.max() >= config.n_classes:
        raise ValueError("labels out of range")
    probs, trace = model_forward(batch, params, "train", config)
    loss = _mean_cross_entropy(probs, labels)
    if not np.isfinite(loss):
        raise ValueError("non-finite training loss")

    b = probs.shape[0]
    onehot = np.zeros_like(probs)
    onehot[np.arange(b), labels] = 1.0
    dh_last = (probs - onehot) / b  # softmax + cross-entropy identity

    dxs, lstm_grads = _lstm_backward(dh_last, trace.lstm_cache, params)
    dpool = dxs.transpose(0, 2, 1)  # [B, K, T]
    delu_out = _avgpool_backward(dpool, config.pool)
    dbn_out = _elu_backward(delu_out, trace.bn_out)
    dconv, dgamma, dbeta = _batchnorm_backward(
        dbn_out, trace.bn_xhat, trace.bn_inv_std, params.bn_gamma
    )
    _, dw, db = _conv_backward(dconv, trace.conv_windows, params.conv_w)

    grads: dict[str, np.ndarray] = {"conv_w": dw, "conv_b": db, "bn_gamma": dgamma, "bn_beta": dbeta}
    grads.update(lstm_grads)
    for name, g in grads.items():
        assert_finite(g, f"gradient of {name}")
    return loss, grads, trace


# ---------------------------------------------------------------------------
# model files
# ---------------------------------------------------------------------------

_MODEL_MAGIC = b"EGLM"


def save_params(params: ModelParams, path) -> None:
    """Write all tensors to a named-tensor model file (binary32 values)."""
    with open(path, "wb") as fh:
        fh.write(_MODEL_MAGIC)
        fh.write(struct.pack("<II", 1, len(_TENSOR_ATTRS)))
        for name, attr in _TENSOR_ATTRS:
            arr = np.asarray(getattr(params, attr), dtype=np.float32)
            encoded = name.encode("ascii")
            fh.write(struct.pack("<H", len(encoded)))
            fh.write(encoded)
            fh.write(struct.pack("<B", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            fh.write(arr.tobytes(order="C"))


def load_params(path, config: NetConfig = NetConfig()) -> ModelParams:
    """Read a model file back; raises FormatError on bad magic or version,
    unknown or missing tensor names, shape mismatches, or truncation."""
    known = dict(_TENSOR_ATTRS)
    shapes = expected_shapes(config)
    tensors: dict[str, np.ndarray] = {}
    with open(path, "rb") as fh:
        expect_magic(fh, _MODEL_MAGIC)
        version = read_u32(fh, "version")
        check_version(version, 1, "model file")
        count = read_u32(fh, "tensor count")
        for _ in range(count):
            name_len = read_u16(fh, "tensor name length")
            name = read_exact(fh, name_len, "tensor name").decode("ascii")
            if name not in known:
                raise FormatError(f"unknown tensor name {name!r}")
            rank = read_exact(fh, 1, "tensor rank")[0]
            dims = struct.unpack(f"<{rank}I", read_exact(fh, 4 * rank, "tensor dims"))
            attr = known[name]
            if tuple(dims) != shapes[attr]:
                raise FormatError(
                    f"tensor {name!r} has shape {tuple(dims)}, expected {shapes[attr]}"
                )
            n_vals = int(np.prod(dims)) if dims else 1
            raw = read_exact(fh, 4 * n_vals, f"values of {name!r}")
            arr = np.frombuffer(raw, dtype="<f4").astype(np.float64).reshape(dims)
            if attr in tensors:
                raise FormatError(f"duplicate tensor {name!r}")
            tensors[attr] = arr
    missing = [name for name, attr in _TENSOR_ATTRS if attr not in tensors]
    if missing:
        raise FormatError(f"missing tensors: {', '.join(missing)}")
    if np.any(tensors["bn_run_var"] <= 0.0):
        raise FormatError("bn.run_var must be positive")
    return ModelParams(**tensors)
