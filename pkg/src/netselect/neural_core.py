"""Dense float64 CNN + LSTM + FC network with hand-written reverse-mode gradients.

Layouts: convolution tensors are channel-first ``(B, C, L)``; recurrent
layers take ``(B, L, D)`` and keep time-major buffers internally.  Network inputs arrive as
``(B, T, F)`` windows and are transposed once on entry.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from .errors import EmptyList, InvalidConfig, InvalidLabel, NonFiniteGradient, ShapeMismatch

BCE_EPS = 1e-12


def sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


@dataclass(frozen=True)
class ArchConfig:
    num_features: int
    conv_channels: tuple[int, ...] = (64, 64, 64, 128)
    kernel_size: int = 3
    lstm_hidden: int = 128
    lstm_layers: int = 2
    fc_hidden: tuple[int, ...] = (64, 32)
    padding: str = "valid"
    final_activation: str = "sigmoid"

    def __post_init__(self):
        object.__setattr__(self, "conv_channels", tuple(self.conv_channels))
        object.__setattr__(self, "fc_hidden", tuple(self.fc_hidden))
        if self.padding not in ("valid", "same"):
            raise InvalidConfig("padding must be 'valid' or 'same'")
        if self.final_activation not in ("sigmoid", "identity"):
            raise InvalidConfig("final_activation must be 'sigmoid' or 'identity'")

    def output_length(self, window: int) -> int:
        if self.padding == "same":
            return window
        return window - len(self.conv_channels) * (self.kernel_size - 1)

    def param_shapes(self) -> dict[str, tuple[int, ...]]:
        shapes: dict[str, tuple[int, ...]] = {}
        c_in = self.num_features
        for i, c_out in enumerate(self.conv_channels):
            shapes[f"conv{i}.weight"] = (c_out, c_in, self.kernel_size)
            shapes[f"conv{i}.bias"] = (c_out,)
            c_in = c_out
        d, h = c_in, self.lstm_hidden
        for j in range(self.lstm_layers):
            shapes[f"lstm{j}.W"] = (d, 4 * h)
            shapes[f"lstm{j}.U"] = (h, 4 * h)
            shapes[f"lstm{j}.b"] = (4 * h,)
            d = h
        for i, width in enumerate(self.fc_hidden + (1,)):
            shapes[f"fc{i}.weight"] = (width, d)
            shapes[f"fc{i}.bias"] = (width,)
            d = width
        return shapes

    def to_json(self) -> dict:
        return {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(self).items()}

    @classmethod
    def from_json(cls, d: dict) -> "ArchConfig":
        return cls(**d)


@dataclass
class ModelParams:
    arch: ArchConfig
    tensors: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        shapes = self.arch.param_shapes()
        if set(shapes) != set(self.tensors):
            raise ShapeMismatch("parameter names do not match the architecture")
        for name, shape in shapes.items():
            if self.tensors[name].shape != shape:
                raise ShapeMismatch(f"{name}: {self.tensors[name].shape} != {shape}")
        self.tensors = {n: np.asarray(self.tensors[n], dtype=np.float64) for n in shapes}

    def copy(self) -> "ModelParams":
        return ModelParams(self.arch, {k: v.copy() for k, v in self.tensors.items()})

    def __getitem__(self, name: str) -> np.ndarray:
        return self.tensors[name]

    def bit_equal(self, other: "ModelParams") -> bool:
        return self.arch == other.arch and all(
            np.array_equal(a.view(np.int64), other.tensors[n].view(np.int64)) for n, a in self.tensors.items()
        )


def init_params(arch: ArchConfig, seed: int) -> ModelParams:
    """Seeded uniform fan-in initialization; LSTM forget-gate bias starts at 1."""
    rng = np.random.default_rng(seed)
    out = {}
    for name, shape in arch.param_shapes().items():
        if name.endswith("bias"):
            out[name] = np.zeros(shape)
        elif name.startswith("conv"):
            bound = np.sqrt(6.0 / (shape[1] * shape[2]))
            out[name] = rng.uniform(-bound, bound, shape)
        elif name.startswith("lstm"):
            if name.endswith(".b"):
                b = np.zeros(shape)
                h = shape[0] // 4
                b[h : 2 * h] = 1.0
                out[name] = b
            else:
                bound = 1.0 / np.sqrt(arch.lstm_hidden)
                out[name] = rng.uniform(-bound, bound, shape)
        else:
            bound = np.sqrt(6.0 / shape[1]) if not name.startswith(f"fc{len(arch.fc_hidden)}") else 1.0 / np.sqrt(shape[1])
            out[name] = rng.uniform(-bound, bound, shape)
    return ModelParams(arch, out)


def zero_params(arch: ArchConfig) -> ModelParams:
    return ModelParams(arch, {n: np.zeros(s) for n, s in arch.param_shapes().items()})


# ---------------------------------------------------------------- layers


def conv1d_forward(x: np.ndarray, weight: np.ndarray, bias: np.ndarray, padding: str = "valid"):
    """Stride-1 cross-correlation followed by ReLU.

    ``x`` is ``(C_in, L)`` or batched ``(B, C_in, L)``; returns the activation
    of matching rank and a cache for :func:`conv1d_backward`.
    """
    single = x.ndim == 2
    if single:
        x = x[None]
    B, C, L = x.shape
    c_out, c_in, K = weight.shape
    if C != c_in or bias.shape != (c_out,):
        raise ShapeMismatch(f"conv input channels {C} vs kernel {weight.shape}")
    pad = (K - 1) // 2 if padding == "same" else 0
    if pad:
        x = np.pad(x, ((0, 0), (0, 0), (pad, K - 1 - pad)))
    Lp = x.shape[2]
    if Lp < K:
        raise ShapeMismatch(f"sequence length {L} shorter than kernel {K}")
    L_out = Lp - K + 1
    cols = np.lib.stride_tricks.sliding_window_view(x, K, axis=2)  # (B, C, L_out, K)
    cols = cols.transpose(0, 2, 1, 3).reshape(B * L_out, C * K)
    wmat = weight.reshape(c_out, C * K)
    z = cols @ wmat.T + bias
    a = np.maximum(z, 0.0)
    out = a.reshape(B, L_out, c_out).transpose(0, 2, 1)
    cache = (cols, z, weight, (B, C, L, Lp, L_out, pad))
    return (out[0] if single else out), cache


def conv1d_backward(dout: np.ndarray, cache):
    cols, z, weight, (B, C, L, Lp, L_out, pad) = cache
    single = dout.ndim == 2
    if single:
        dout = dout[None]
    c_out, _, K = weight.shape
    dz = dout.transpose(0, 2, 1).reshape(B * L_out, c_out) * (z > 0)
    dw = (dz.T @ cols).reshape(weight.shape)
    db = dz.sum(axis=0)
    dcols = (dz @ weight.reshape(c_out, C * K)).reshape(B, L_out, C, K)
    dxp = np.zeros((B, C, Lp))
    for k in range(K):
        dxp[:, :, k : k + L_out] += dcols[:, :, :, k].transpose(0, 2, 1)
    dx = dxp[:, :, pad : pad + L]
    return (dx[0] if single else dx), dw, db


def lstm_forward(x: np.ndarray, W: np.ndarray, U: np.ndarray, b: np.ndarray):
    """Single LSTM layer over ``x`` of shape ``(B, L, D)`` from a zero state.

    Gate order in the 4H axis is input, forget, cell candidate, output.
    Returns the hidden sequence ``(B, L, H)``, the final ``(h, c)`` and a cache.
    """
    B, L, D = x.shape
    H = U.shape[0]
    if W.shape != (D, 4 * H) or U.shape != (H, 4 * H) or b.shape != (4 * H,):
        raise ShapeMismatch(f"LSTM weights {W.shape}/{U.shape}/{b.shape} for input dim {D}")
    # time-major buffers keep every per-step slice contiguous
    xt = np.ascontiguousarray(x.transpose(1, 0, 2))
    gates = (xt.reshape(L * B, D) @ W).reshape(L, B, 4 * H)
    gates += b
    cs = np.zeros((L + 1, B, H))
    hs = np.zeros((L + 1, B, H))
    tanh_c = np.empty((L, B, H))
    for t in range(L):
        g = gates[t]
        g += hs[t] @ U
        g[:, : 2 * H] = sigmoid(g[:, : 2 * H])
        g[:, 2 * H : 3 * H] = np.tanh(g[:, 2 * H : 3 * H])
        g[:, 3 * H :] = sigmoid(g[:, 3 * H :])
        np.multiply(g[:, H : 2 * H], cs[t], out=cs[t + 1])
        cs[t + 1] += g[:, :H] * g[:, 2 * H : 3 * H]
        np.tanh(cs[t + 1], out=tanh_c[t])
        np.multiply(g[:, 3 * H :], tanh_c[t], out=hs[t + 1])
    cache = (xt, W, U, gates, cs, hs, tanh_c)
    return hs[1:].transpose(1, 0, 2), (hs[-1], cs[-1]), cache


def lstm_backward(dh_seq: np.ndarray, cache):
    """Backpropagation through time; returns ``(dx, dW, dU, db)``."""
    xt, W, U, gates, cs, hs, tanh_c = cache
    L, B, D = xt.shape
    H = U.shape[0]
    dht = np.ascontiguousarray(dh_seq.transpose(1, 0, 2))
    da_all = np.empty((L, B, 4 * H))
    dh_next = np.zeros((B, H))
    dc_next = np.zeros((B, H))
    for t in range(L - 1, -1, -1):
        g = gates[t]
        i, f, gg, o = g[:, :H], g[:, H : 2 * H], g[:, 2 * H : 3 * H], g[:, 3 * H :]
        dh = dht[t] + dh_next
        tc = tanh_c[t]
        dc = dc_next + dh * o * (1.0 - tc * tc)
        da = da_all[t]
        da[:, :H] = dc * gg * i * (1.0 - i)
        da[:, H : 2 * H] = dc * cs[t] * f * (1.0 - f)
        da[:, 2 * H : 3 * H] = dc * i * (1.0 - gg * gg)
        da[:, 3 * H :] = dh * tc * o * (1.0 - o)
        dc_next = dc * f
        dh_next = da @ U.T
    flat = da_all.reshape(L * B, 4 * H)
    dU = hs[:-1].reshape(L * B, H).T @ flat
    dW = xt.reshape(L * B, D).T @ flat
    db = flat.sum(axis=0)
    dx = (flat @ W.T).reshape(L, B, D).transpose(1, 0, 2)
    return dx, dW, dU, db


def fc_head_forward(hidden: np.ndarray, weights: Sequence[np.ndarray], biases: Sequence[np.ndarray], final_activation: str = "sigmoid"):
    """Affine layers with ReLU between them; last layer width 1.

    Returns predictions of shape ``(B,)`` and a cache.
    """
    a = hidden
    acts = [a]
    pre = []
    for n, (w, b) in enumerate(zip(weights, biases)):
        if a.shape[1] != w.shape[1] or b.shape != (w.shape[0],):
            raise ShapeMismatch(f"fc layer {n}: input {a.shape[1]} vs weight {w.shape}")
        z = a @ w.T + b
        pre.append(z)
        a = np.maximum(z, 0.0) if n < len(weights) - 1 else z
        acts.append(a)
    z = a[:, 0]
    pred = sigmoid(z) if final_activation == "sigmoid" else z
    return pred, (acts, pre, list(weights), final_activation, pred)


def fc_head_backward(dpred: np.ndarray, cache, dz_out: np.ndarray | None = None):
    """Gradients through the head; ``dz_out`` overrides the gradient at the final pre-activation."""
    acts, pre, weights, final_activation, pred = cache
    if dz_out is None:
        dz_out = dpred * pred * (1.0 - pred) if final_activation == "sigmoid" else dpred
    d = dz_out[:, None]
    dws, dbs = [], []
    for n in range(len(weights) - 1, -1, -1):
        if n < len(weights) - 1:
            d = d * (pre[n] > 0)
        dws.append(d.T @ acts[n])
        dbs.append(d.sum(axis=0))
        d = d @ weights[n]
    return d, dws[::-1], dbs[::-1]


# ---------------------------------------------------------------- network


def forward(params: ModelParams, X: np.ndarray):
    """Full network on windows ``X`` of shape ``(B, T, F)``; returns ``(pred, cache)``."""
    arch = params.arch
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 3 or X.shape[2] != arch.num_features:
        raise ShapeMismatch(f"expected (B, T, {arch.num_features}) windows, got {X.shape}")
    p = params.tensors
    h = X.transpose(0, 2, 1)
    conv_caches = []
    for i in range(len(arch.conv_channels)):
        h, c = conv1d_forward(h, p[f"conv{i}.weight"], p[f"conv{i}.bias"], arch.padding)
        conv_caches.append(c)
    seq = np.ascontiguousarray(h.transpose(0, 2, 1))
    lstm_caches = []
    for j in range(arch.lstm_layers):
        seq, _, c = lstm_forward(seq, p[f"lstm{j}.W"], p[f"lstm{j}.U"], p[f"lstm{j}.b"])
        lstm_caches.append(c)
    n_fc = len(arch.fc_hidden) + 1
    pred, head_cache = fc_head_forward(
        seq[:, -1],
        [p[f"fc{i}.weight"] for i in range(n_fc)],
        [p[f"fc{i}.bias"] for i in range(n_fc)],
        arch.final_activation,
    )
    return pred, (conv_caches, lstm_caches, head_cache, seq.shape)


def predict(params: ModelParams, X: np.ndarray, batch_size: int = 512) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if len(X) == 0:
        return np.empty(0)
    return np.concatenate([forward(params, X[s : s + batch_size])[0] for s in range(0, len(X), batch_size)])


def backward(params: ModelParams, cache, dpred: np.ndarray, dz_out: np.ndarray | None = None) -> dict[str, np.ndarray]:
    arch = params.arch
    conv_caches, lstm_caches, head_cache, seq_shape = cache
    grads: dict[str, np.ndarray] = {}
    dh_last, dws, dbs = fc_head_backward(dpred, head_cache, dz_out)
    for i, (dw, db) in enumerate(zip(dws, dbs)):
        grads[f"fc{i}.weight"] = dw
        grads[f"fc{i}.bias"] = db
    dseq = np.zeros(seq_shape)
    dseq[:, -1] = dh_last
    for j in range(arch.lstm_layers - 1, -1, -1):
        dseq, dW, dU, db = lstm_backward(dseq, lstm_caches[j])
        grads[f"lstm{j}.W"], grads[f"lstm{j}.U"], grads[f"lstm{j}.b"] = dW, dU, db
    dh = dseq.transpose(0, 2, 1)
    for i in range(len(arch.conv_channels) - 1, -1, -1):
        dh, dw, db = conv1d_backward(dh, conv_caches[i])
        grads[f"conv{i}.weight"], grads[f"conv{i}.bias"] = dw, db
    return {n: grads[n] for n in params.tensors}


# ---------------------------------------------------------------- losses

LOSSES = ("bce", "mse", "mae")


def _check_loss_inputs(pred, label, kind):
    pred = np.atleast_1d(np.asarray(pred, dtype=np.float64))
    label = np.atleast_1d(np.asarray(label, dtype=np.float64))
    if pred.shape != label.shape:
        raise ShapeMismatch(f"pred {pred.shape} vs label {label.shape}")
    if kind not in LOSSES:
        raise InvalidConfig(f"unknown loss {kind!r}")
    if kind == "bce" and not np.all((label == 0) | (label == 1)):
        raise InvalidLabel("binary cross-entropy needs labels in {0, 1}")
    return pred, label


def loss_value(pred, label, kind: str) -> float:
    """Batch-mean loss: ``bce`` (pred clamped to [eps, 1-eps]), ``mse`` or ``mae``."""
    pred, label = _check_loss_inputs(pred, label, kind)
    if kind == "bce":
        p = np.clip(pred, BCE_EPS, 1.0 - BCE_EPS)
        return float(np.mean(-(label * np.log(p) + (1.0 - label) * np.log1p(-p))))
    if kind == "mse":
        return float(np.mean((pred - label) ** 2))
    return float(np.mean(np.abs(pred - label)))


def loss_grad(pred, label, kind: str) -> np.ndarray:
    """d(batch-mean loss)/d(pred)."""
    pred, label = _check_loss_inputs(pred, label, kind)
    n = len(pred)
    if kind == "bce":
        p = np.clip(pred, BCE_EPS, 1.0 - BCE_EPS)
        return (-(label / p) + (1.0 - label) / (1.0 - p)) / n
    if kind == "mse":
        return 2.0 * (pred - label) / n
    return np.sign(pred - label) / n


def loss_and_grad(params: ModelParams, X: np.ndarray, y: np.ndarray, kind: str) -> tuple[float, dict[str, np.ndarray]]:
    """Mean batch loss and its exact gradient for every parameter.

    With a sigmoid head and ``bce`` the gradient at the logit is taken as
    ``(p - y) / n``, the exact derivative of the unclamped loss.
    """
    pred, cache = forward(params, X)
    loss = loss_value(pred, y, kind)
    y = np.asarray(y, dtype=np.float64)
    if kind == "bce" and params.arch.final_activation == "sigmoid":
        grads = backward(params, cache, None, dz_out=(pred - y) / len(y))
    else:
        grads = backward(params, cache, loss_grad(pred, y, kind))
    if not np.isfinite(loss) or not all(np.all(np.isfinite(g)) for g in grads.values()):
        raise NonFiniteGradient("loss or gradient became non-finite")
    return loss, grads


# ---------------------------------------------------------------- optimization


@dataclass
class OptimizerState:
    learning_rate: float = 0.001
    kind: str = "adam"
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in ("adam", "sgd"):
            raise InvalidConfig("optimizer kind must be 'adam' or 'sgd'")


def optimizer_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray], state: OptimizerState):
    """One deterministic update; returns new ``(params, state)`` without mutating inputs."""
    if set(params) != set(grads):
        raise ShapeMismatch("gradient names do not match parameters")
    for n in params:
        if params[n].shape != grads[n].shape:
            raise ShapeMismatch(f"{n}: grad {grads[n].shape} vs param {params[n].shape}")
    lr = state.learning_rate
    if state.kind == "sgd":
        new = {n: params[n] - lr * grads[n] for n in params}
        return new, OptimizerState(lr, "sgd", state.beta1, state.beta2, state.eps, state.step + 1)
    t = state.step + 1
    b1, b2 = state.beta1, state.beta2
    m, v, new = {}, {}, {}
    for n in params:
        g = grads[n]
        m[n] = b1 * state.m.get(n, 0.0) + (1.0 - b1) * g
        v[n] = b2 * state.v.get(n, 0.0) + (1.0 - b2) * g * g
        m_hat = m[n] / (1.0 - b1**t)
        v_hat = v[n] / (1.0 - b2**t)
        new[n] = params[n] - lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return new, OptimizerState(lr, "adam", b1, b2, state.eps, t, m, v)


def average_gradients(grad_sets: Sequence[dict[str, np.ndarray]]) -> dict[str, np.ndarray]:
    """Element-wise mean of gradient sets.

    Computed as ``min + sum(sorted(g - min)) / n`` so the result is exactly
    invariant to argument order and returns identical inputs unchanged bit
    for bit.
    """
    if not grad_sets:
        raise EmptyList("no gradient sets to average")
    names = list(grad_sets[0])
    out = {}
    for name in names:
        try:
            stack = np.stack([g[name] for g in grad_sets])
        except (KeyError, ValueError) as exc:
            raise ShapeMismatch(f"gradient sets disagree on {name}") from exc
        if any(set(g) != set(names) for g in grad_sets):
            raise ShapeMismatch("gradient sets have different parameter names")
        lo = stack.min(axis=0)
        diffs = np.sort(stack - lo, axis=0)
        acc = diffs[0].copy()
        for d in diffs[1:]:
            acc += d
        # all-equal entries return the shared value itself, signed zeros included
        out[name] = np.where(acc == 0, lo, lo + acc / len(grad_sets))
    return out


# ---------------------------------------------------------------- verification


def layer_of(name: str) -> str:
    return name.split(".", 1)[0]


def gradient_check(
    params: ModelParams,
    X: np.ndarray,
    y: np.ndarray,
    kind: str,
    coords_per_layer: int = 100,
    eps: float = 1e-5,
    seed: int = 0,
    floor: float = 1e-6,
) -> dict[str, tuple[int, float]]:
    """Compare analytic gradients with central differences.

    For each layer, ``coords_per_layer`` coordinates are drawn at random
    (every coordinate when the layer is smaller).  Returns
    ``{layer: (coordinates checked, max relative error)}`` where the relative
    error is ``|a - n| / max(|a|, |n|, floor)``.
    """
    _, grads = loss_and_grad(params, X, y, kind)
    rng = np.random.default_rng(seed)
    coords: dict[str, list[tuple[str, tuple[int, ...]]]] = {}
    for name, t in params.tensors.items():
        coords.setdefault(layer_of(name), []).extend((name, idx) for idx in np.ndindex(t.shape))
    out = {}
    for layer, pool in coords.items():
        if len(pool) > coords_per_layer:
            pick = rng.choice(len(pool), coords_per_layer, replace=False)
            pool = [pool[i] for i in sorted(pick)]
        worst = 0.0
        for name, idx in pool:
            probe = params.copy()
            probe.tensors[name][idx] += eps
            up = loss_value(forward(probe, X)[0], y, kind)
            probe.tensors[name][idx] -= 2 * eps
            down = loss_value(forward(probe, X)[0], y, kind)
            num = (up - down) / (2 * eps)
            a = grads[name][idx]
            worst = max(worst, abs(a - num) / max(abs(a), abs(num), floor))
        out[layer] = (len(pool), worst)
    return out
