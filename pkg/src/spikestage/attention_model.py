"""Transformer encoder classifier over spike-train feature epochs.

Implements the scoring model end to end in numpy with float64 math: a
linear projection of the 10 feature sequences to the model dimension,
stacked pre-norm encoder blocks (multi-head scaled dot-product attention
plus a GELU feed-forward, both residual), mean pooling over the sequence
and a 5-way linear head. Reverse-mode gradients are written out by hand
and validated against finite differences by `grad_check`.

The attention logit scale is a configured constant (default 8), not
derived from the head dimension.
"""

from __future__ import annotations

import io
import json
import math
import struct
from dataclasses import asdict, dataclass

import numpy as np
from scipy.special import erf

from .errors import DataError, NumericError
from .signal_io import Stage
from .spike_encoder import FEATURE_COLUMNS

_LN_EPS = 1e-5
MODEL_MAGIC = b"SPIKESTAGE-MODEL\n"
MODEL_VERSION = b"v1\n"


@dataclass(frozen=True)
class ModelConfig:
    depth: int = 8
    heads: int = 4
    dim: int = 128
    attn_scale: float = 8.0
    mlp_dim: int = 128
    dropout: float = 0.5
    num_classes: int = 5
    seq_len: int = 150
    input_dim: int = len(FEATURE_COLUMNS)
    pos_encoding: str = "learned"  # learned | sinusoidal | none

    def __post_init__(self):
        if self.dim % self.heads != 0:
            raise ValueError(f"dim {self.dim} must be divisible by heads {self.heads}")
        if self.attn_scale <= 0:
            raise ValueError("attn_scale must be positive")
        if not (0.0 <= self.dropout < 1.0):
            raise ValueError("dropout must be in [0, 1)")
        if min(self.depth, self.heads, self.dim, self.mlp_dim, self.num_classes,
               self.seq_len, self.input_dim) < 1:
            raise ValueError("all model dimensions must be positive")
        if self.pos_encoding not in ("learned", "sinusoidal", "none"):
            raise ValueError(f"unknown pos_encoding {self.pos_encoding!r}")

    @property
    def head_dim(self) -> int:
        return self.dim // self.heads


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 100
    batch_size: int = 32
    learning_rate: float = 1e-4
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    max_steps: int | None = None  # optional hard cap on optimizer steps

    def __post_init__(self):
        if min(self.epochs, self.batch_size) < 1 or self.learning_rate <= 0:
            raise ValueError("epochs, batch_size, learning_rate must be positive")


@dataclass
class ModelState:
    """Learnable parameters keyed by name, in deterministic order."""

    config: ModelConfig
    params: dict[str, np.ndarray]

    def copy(self) -> "ModelState":
        return ModelState(self.config, {k: v.copy() for k, v in self.params.items()})


def param_count(config: ModelConfig) -> int:
    """Closed-form parameter count.

    input projection: input_dim*D + D
    positions (learned only): T*D
    per block: 2 layer norms (2*2D), four D x D projections with biases
      (4*(D^2+D)), and the feed-forward pair (D*M + M + M*D + D)
    head: D*C + C
    """
    d, m, t, c = config.dim, config.mlp_dim, config.seq_len, config.num_classes
    per_block = 4 * d + 4 * (d * d + d) + (d * m + m) + (m * d + d)
    total = config.input_dim * d + d + config.depth * per_block + d * c + c
    if config.pos_encoding == "learned":
        total += t * d
    return total


def init_model(config: ModelConfig, seed: int) -> ModelState:
    """Seeded init: uniform(+-1/sqrt(fan_in)) weights, zero biases, unit norms."""
    rng = np.random.default_rng(seed)
    params: dict[str, np.ndarray] = {}

    def linear(name: str, fan_in: int, fan_out: int):
        bound = 1.0 / math.sqrt(fan_in)
        params[f"{name}.W"] = rng.uniform(-bound, bound, size=(fan_in, fan_out))
        params[f"{name}.b"] = np.zeros(fan_out)

    linear("input_proj", config.input_dim, config.dim)
    if config.pos_encoding == "learned":
        params["pos.emb"] = 0.02 * rng.standard_normal((config.seq_len, config.dim))
    for i in range(config.depth):
        p = f"block{i}"
        params[f"{p}.ln1.g"] = np.ones(config.dim)
        params[f"{p}.ln1.b"] = np.zeros(config.dim)
        for proj in ("q", "k", "v", "o"):
            linear(f"{p}.attn.{proj}", config.dim, config.dim)
        params[f"{p}.ln2.g"] = np.ones(config.dim)
        params[f"{p}.ln2.b"] = np.zeros(config.dim)
        linear(f"{p}.ff.1", config.dim, config.mlp_dim)
        linear(f"{p}.ff.2", config.mlp_dim, config.dim)
    linear("head", config.dim, config.num_classes)

    actual = sum(v.size for v in params.values())
    expected = param_count(config)
    assert actual == expected, f"parameter count {actual} != closed form {expected}"
    return ModelState(config, params)


def sinusoidal_table(seq_len: int, dim: int) -> np.ndarray:
    pos = np.arange(seq_len)[:, None]
    i = np.arange(dim)[None, :]
    angles = pos / np.power(10000.0, (2 * (i // 2)) / dim)
    table = np.empty((seq_len, dim))
    table[:, 0::2] = np.sin(angles[:, 0::2])
    table[:, 1::2] = np.cos(angles[:, 1::2])
    return table


# ---------------------------------------------------------------------------
# Primitive ops
# ---------------------------------------------------------------------------


def gelu(x: np.ndarray) -> np.ndarray:
    """Exact-erf GELU: x * Phi(x)."""
    return 0.5 * x * (1.0 + erf(x / math.sqrt(2.0)))


def _gelu_grad(x: np.ndarray) -> np.ndarray:
    phi = np.exp(-0.5 * x * x) / math.sqrt(2.0 * math.pi)
    return 0.5 * (1.0 + erf(x / math.sqrt(2.0))) + x * phi


def softmax_rows(scores: np.ndarray) -> np.ndarray:
    """Row-wise softmax over the last axis, max-subtracted for stability."""
    shifted = scores - scores.max(axis=-1, keepdims=True)
    np.exp(shifted, out=shifted)
    shifted /= shifted.sum(axis=-1, keepdims=True)
    return shifted


def attention(Q: np.ndarray, K: np.ndarray, V: np.ndarray, scale: float) -> np.ndarray:
    """Scaled dot-product attention softmax(Q K^T / scale) V for 2-D inputs."""
    Q, K, V = (np.asarray(a, dtype=np.float64) for a in (Q, K, V))
    if Q.ndim != 2 or Q.shape != K.shape or K.shape != V.shape:
        raise ValueError(f"Q, K, V must share a (T, d) shape, got {Q.shape}, {K.shape}, {V.shape}")
    if scale <= 0:
        raise ValueError("scale must be positive")
    if not all(np.all(np.isfinite(a)) for a in (Q, K, V)):
        raise NumericError("attention: non-finite inputs")
    probs = softmax_rows(Q @ K.T / scale)
    return probs @ V


def multi_head(x: np.ndarray, params: dict[str, np.ndarray], heads: int, scale: float) -> np.ndarray:
    """Multi-head self-attention for one (T, D) sequence.

    `params` holds Wq/bq/Wk/bk/Wv/bv/Wo/bo. Provided as a standalone op;
    the model forward runs the identical batched computation.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2:
        raise ValueError(f"expected (T, D) input, got {x.shape}")
    t, d = x.shape
    if d % heads != 0:
        raise ValueError(f"model dim {d} not divisible by heads {heads}")
    out, _ = _mha_forward(x[None], params, heads, scale)
    return out[0]


def feed_forward(x: np.ndarray, params: dict[str, np.ndarray]) -> np.ndarray:
    """Position-wise two-layer GELU network applied to each row of (T, D).

    `params` holds W1/b1/W2/b2. Rows are processed identically and
    independently.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != params["W1"].shape[0]:
        raise ValueError(f"input shape {x.shape} does not match W1 {params['W1'].shape}")
    return gelu(x @ params["W1"] + params["b1"]) @ params["W2"] + params["b2"]


def _split_heads(x: np.ndarray, heads: int) -> np.ndarray:
    b, t, d = x.shape
    return x.reshape(b, t, heads, d // heads).transpose(0, 2, 1, 3)


def _merge_heads(x: np.ndarray) -> np.ndarray:
    b, h, t, dh = x.shape
    return x.transpose(0, 2, 1, 3).reshape(b, t, h * dh)


def _mha_forward(x, params, heads, scale):
    """Batched MHA on (B, T, D); returns output and the backward cache."""
    q = x @ params["Wq"] + params["bq"]
    k = x @ params["Wk"] + params["bk"]
    v = x @ params["Wv"] + params["bv"]
    qh, kh, vh = (_split_heads(a, heads) for a in (q, k, v))
    probs = softmax_rows(qh @ kh.swapaxes(-1, -2) / scale)
    ctx = _merge_heads(probs @ vh)
    out = ctx @ params["Wo"] + params["bo"]
    cache = {"x": x, "qh": qh, "kh": kh, "vh": vh, "probs": probs, "ctx": ctx}
    return out, cache


def _mha_backward(dout, params, cache, heads, scale):
    x, qh, kh, vh, probs, ctx = (
        cache["x"], cache["qh"], cache["kh"], cache["vh"], cache["probs"], cache["ctx"],
    )
    d = x.shape[-1]
    dWo = _flat_t(ctx) @ _flat(dout)
    dbo = dout.sum(axis=(0, 1))
    dctx = _split_heads(dout @ params["Wo"].T, heads)

    dprobs = dctx @ vh.swapaxes(-1, -2)
    dvh = probs.swapaxes(-1, -2) @ dctx
    dscores = probs * (dprobs - (dprobs * probs).sum(axis=-1, keepdims=True))
    dqh = dscores @ kh / scale
    dkh = dscores.swapaxes(-1, -2) @ qh / scale

    dq, dk, dv = (_merge_heads(a) for a in (dqh, dkh, dvh))
    grads = {
        "Wq": _flat_t(x) @ _flat(dq), "bq": dq.sum(axis=(0, 1)),
        "Wk": _flat_t(x) @ _flat(dk), "bk": dk.sum(axis=(0, 1)),
        "Wv": _flat_t(x) @ _flat(dv), "bv": dv.sum(axis=(0, 1)),
        "Wo": dWo, "bo": dbo,
    }
    dx = dq @ params["Wq"].T + dk @ params["Wk"].T + dv @ params["Wv"].T
    return dx, grads


def _flat(a: np.ndarray) -> np.ndarray:
    return a.reshape(-1, a.shape[-1])


def _flat_t(a: np.ndarray) -> np.ndarray:
    return a.reshape(-1, a.shape[-1]).T


def _layer_norm_forward(x, g, b):
    mu = x.mean(axis=-1, keepdims=True)
    centered = x - mu
    var = (centered * centered).mean(axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + _LN_EPS)
    xhat = centered * inv_std
    return g * xhat + b, (xhat, inv_std)


def _layer_norm_backward(dy, g, cache):
    xhat, inv_std = cache
    dxhat = dy * g
    dg = (dy * xhat).sum(axis=tuple(range(dy.ndim - 1)))
    db = dy.sum(axis=tuple(range(dy.ndim - 1)))
    mean_dxhat = dxhat.mean(axis=-1, keepdims=True)
    mean_dxhat_xhat = (dxhat * xhat).mean(axis=-1, keepdims=True)
    dx = inv_std * (dxhat - mean_dxhat - xhat * mean_dxhat_xhat)
    return dx, dg, db


def softmax_cross_entropy(logits: np.ndarray, labels: np.ndarray):
    """Mean cross-entropy over the batch; returns (loss, dlogits)."""
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    log_probs = shifted - log_z
    n = logits.shape[0]
    loss = -log_probs[np.arange(n), labels].mean()
    dlogits = np.exp(log_probs)
    dlogits[np.arange(n), labels] -= 1.0
    return loss, dlogits / n


# ---------------------------------------------------------------------------
# Full model forward/backward
# ---------------------------------------------------------------------------


def _block_params(params, i):
    p = f"block{i}"
    return {
        "Wq": params[f"{p}.attn.q.W"], "bq": params[f"{p}.attn.q.b"],
        "Wk": params[f"{p}.attn.k.W"], "bk": params[f"{p}.attn.k.b"],
        "Wv": params[f"{p}.attn.v.W"], "bv": params[f"{p}.attn.v.b"],
        "Wo": params[f"{p}.attn.o.W"], "bo": params[f"{p}.attn.o.b"],
    }


def _dropout_mask(rng, shape, rate):
    return (rng.random(shape) >= rate) / (1.0 - rate)


def _forward(state: ModelState, x: np.ndarray, train: bool, rng=None):
    cfg = state.config
    params = state.params
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 2:
        x = x[None]
    if x.shape[1:] != (cfg.seq_len, cfg.input_dim):
        raise ValueError(
            f"expected input of shape (B, {cfg.seq_len}, {cfg.input_dim}), got {x.shape}"
        )
    use_dropout = train and cfg.dropout > 0.0
    if use_dropout and rng is None:
        raise ValueError("train-mode forward with dropout requires an rng")

    h = x @ params["input_proj.W"] + params["input_proj.b"]
    if cfg.pos_encoding == "learned":
        h = h + params["pos.emb"]
    elif cfg.pos_encoding == "sinusoidal":
        h = h + sinusoidal_table(cfg.seq_len, cfg.dim)

    caches = []
    for i in range(cfg.depth):
        blk = {}
        bp = _block_params(params, i)
        u1, blk["ln1"] = _layer_norm_forward(h, params[f"block{i}.ln1.g"], params[f"block{i}.ln1.b"])
        attn_out, blk["mha"] = _mha_forward(u1, bp, cfg.heads, cfg.attn_scale)
        if use_dropout:
            blk["drop1"] = _dropout_mask(rng, attn_out.shape, cfg.dropout)
            attn_out = attn_out * blk["drop1"]
        h = h + attn_out

        u2, blk["ln2"] = _layer_norm_forward(h, params[f"block{i}.ln2.g"], params[f"block{i}.ln2.b"])
        pre = u2 @ params[f"block{i}.ff.1.W"] + params[f"block{i}.ff.1.b"]
        act = gelu(pre)
        if use_dropout:
            blk["drop2"] = _dropout_mask(rng, act.shape, cfg.dropout)
            act_dropped = act * blk["drop2"]
        else:
            act_dropped = act
        ff_out = act_dropped @ params[f"block{i}.ff.2.W"] + params[f"block{i}.ff.2.b"]
        h = h + ff_out

        if not np.all(np.isfinite(h)):
            raise NumericError(f"non-finite activations after encoder block {i}")
        blk.update({"u1": u1, "u2": u2, "pre": pre, "act_dropped": act_dropped})
        caches.append(blk)

    pooled = h.mean(axis=1)
    logits = pooled @ params["head.W"] + params["head.b"]
    cache = {"x": x, "caches": caches, "pooled": pooled, "tokens": h}
    return logits, cache


def forward(state: ModelState, features: np.ndarray, mode: str = "eval", rng=None) -> np.ndarray:
    """Class logits for a batch of feature matrices.

    `features` is (B, T, 10) or a single (T, 10) matrix. Eval mode is a
    pure function of (state, input); train mode applies dropout and needs
    an rng.
    """
    if mode not in ("train", "eval"):
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
    logits, _ = _forward(state, features, train=(mode == "train"), rng=rng)
    return logits


def encode_tokens(state: ModelState, features: np.ndarray) -> np.ndarray:
    """Per-token encoder states (B, T, D) before pooling, eval mode."""
    _, cache = _forward(state, features, train=False)
    return cache["tokens"]


def _backward(state: ModelState, cache, dlogits):
    cfg = state.config
    params = state.params
    grads = {}
    pooled, x = cache["pooled"], cache["x"]
    b, t = x.shape[0], cfg.seq_len

    grads["head.W"] = pooled.T @ dlogits
    grads["head.b"] = dlogits.sum(axis=0)
    dpooled = dlogits @ params["head.W"].T
    dh = np.repeat(dpooled[:, None, :] / t, t, axis=1)

    for i in reversed(range(cfg.depth)):
        blk = cache["caches"][i]
        # feed-forward sub-block
        dff_out = dh
        grads[f"block{i}.ff.2.W"] = _flat_t(blk["act_dropped"]) @ _flat(dff_out)
        grads[f"block{i}.ff.2.b"] = dff_out.sum(axis=(0, 1))
        dact = dff_out @ params[f"block{i}.ff.2.W"].T
        if "drop2" in blk:
            dact = dact * blk["drop2"]
        dpre = dact * _gelu_grad(blk["pre"])
        grads[f"block{i}.ff.1.W"] = _flat_t(blk["u2"]) @ _flat(dpre)
        grads[f"block{i}.ff.1.b"] = dpre.sum(axis=(0, 1))
        du2 = dpre @ params[f"block{i}.ff.1.W"].T
        dres, dg2, db2 = _layer_norm_backward(du2, params[f"block{i}.ln2.g"], blk["ln2"])
        grads[f"block{i}.ln2.g"] = dg2
        grads[f"block{i}.ln2.b"] = db2
        dh = dh + dres

        # attention sub-block
        dattn = dh
        if "drop1" in blk:
            dattn = dattn * blk["drop1"]
        du1, mha_grads = _mha_backward(dattn, _block_params(params, i), blk["mha"], cfg.heads, cfg.attn_scale)
        for short, name in (("Wq", "q.W"), ("bq", "q.b"), ("Wk", "k.W"), ("bk", "k.b"),
                            ("Wv", "v.W"), ("bv", "v.b"), ("Wo", "o.W"), ("bo", "o.b")):
            grads[f"block{i}.attn.{name}"] = mha_grads[short]
        dres, dg1, db1 = _layer_norm_backward(du1, params[f"block{i}.ln1.g"], blk["ln1"])
        grads[f"block{i}.ln1.g"] = dg1
        grads[f"block{i}.ln1.b"] = db1
        dh = dh + dres

    if cfg.pos_encoding == "learned":
        grads["pos.emb"] = dh.sum(axis=0)
    grads["input_proj.W"] = _flat_t(x) @ _flat(dh)
    grads["input_proj.b"] = dh.sum(axis=(0, 1))
    return grads


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------

STAGE_TO_LABEL = {s: s.value for s in Stage}


def stack_dataset(dataset) -> tuple[np.ndarray, np.ndarray]:
    """(features, labels) arrays from labeled FeatureEpochs; unlabeled are rejected."""
    feats, labels = [], []
    for fe in dataset:
        if fe.stage is None:
            raise ValueError(
                f"unlabeled epoch {fe.subject_id}/{fe.epoch_index} cannot be used for training"
            )
        feats.append(fe.features)
        labels.append(fe.stage.value)
    if not feats:
        raise ValueError("empty dataset")
    return np.stack(feats), np.asarray(labels, dtype=np.int64)


@dataclass
class TrainResult:
    state: ModelState
    trace: list[tuple[int, float, float]]  # (epoch, mean_loss, train_accuracy)
    step_losses: list[float]


def train(model: ModelState, dataset, cfg: TrainConfig) -> TrainResult:
    """Adam training on labeled FeatureEpochs; deterministic given cfg.seed.

    `dataset` may be a sequence of FeatureEpochs or a pre-stacked
    (features, labels) pair. The input state is not mutated.
    """
    if isinstance(dataset, tuple):
        x_all, y_all = dataset
    else:
        x_all, y_all = stack_dataset(dataset)
    n = x_all.shape[0]
    state = model.copy()
    rng = np.random.default_rng(cfg.seed)

    m = {k: np.zeros_like(v) for k, v in state.params.items()}
    v = {k: np.zeros_like(p) for k, p in state.params.items()}
    step = 0
    trace = []
    step_losses: list[float] = []

    for epoch in range(cfg.epochs):
        order = rng.permutation(n)
        loss_sum = 0.0
        correct = 0
        seen = 0
        for start in range(0, n, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            xb, yb = x_all[idx], y_all[idx]
            logits, fwd_cache = _forward(state, xb, train=True, rng=rng)
            loss, dlogits = softmax_cross_entropy(logits, yb)
            if not math.isfinite(loss):
                raise NumericError(
                    f"non-finite training loss at epoch {epoch}, step {step}"
                )
            grads = _backward(state, fwd_cache, dlogits)
            step += 1
            for key, p in state.params.items():
                g = grads[key]
                m[key] = cfg.beta1 * m[key] + (1.0 - cfg.beta1) * g
                v[key] = cfg.beta2 * v[key] + (1.0 - cfg.beta2) * (g * g)
                m_hat = m[key] / (1.0 - cfg.beta1 ** step)
                v_hat = v[key] / (1.0 - cfg.beta2 ** step)
                p -= cfg.learning_rate * m_hat / (np.sqrt(v_hat) + cfg.eps)
            loss_sum += loss * len(idx)
            correct += int((logits.argmax(axis=1) == yb).sum())
            seen += len(idx)
            step_losses.append(loss)
            if cfg.max_steps is not None and step >= cfg.max_steps:
                break
        trace.append((epoch, loss_sum / seen, correct / seen))
        if cfg.max_steps is not None and step >= cfg.max_steps:
            break
    return TrainResult(state=state, trace=trace, step_losses=step_losses)


def predict(state: ModelState, features: np.ndarray) -> np.ndarray:
    """Argmax stage indices for a (B, T, 10) batch, eval mode."""
    return forward(state, features, mode="eval").argmax(axis=1)


def write_loss_trace(trace, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("epoch,mean_loss,train_accuracy\n")
        for epoch, mean_loss, acc in trace:
            fh.write(f"{epoch},{mean_loss!r},{acc!r}\n")


# ---------------------------------------------------------------------------
# Gradient check
# ---------------------------------------------------------------------------


def grad_check(state: ModelState, x: np.ndarray, label: int, step: float = 1e-5) -> float:
    """Max relative error between analytic and central-difference gradients.

    Relative error uses a denominator floored at 1 so that near-zero
    gradients are compared absolutely. Dropout must be disabled.
    """
    if state.config.dropout != 0.0:
        raise ValueError("grad_check requires a dropout-free config")
    x = np.asarray(x, dtype=np.float64)
    labels = np.asarray([label])

    logits, cache = _forward(state, x, train=False)
    _, dlogits = softmax_cross_entropy(logits, labels)
    analytic = _backward(state, cache, dlogits)

    def loss_at() -> float:
        lg, _ = _forward(state, x, train=False)
        loss, _ = softmax_cross_entropy(lg, labels)
        return loss

    worst = 0.0
    for key, p in state.params.items():
        flat = p.reshape(-1)
        ana = analytic[key].reshape(-1)
        for j in range(flat.size):
            orig = flat[j]
            flat[j] = orig + step
            up = loss_at()
            flat[j] = orig - step
            down = loss_at()
            flat[j] = orig
            fd = (up - down) / (2.0 * step)
            err = abs(ana[j] - fd) / max(abs(ana[j]), abs(fd), 1.0)
            worst = max(worst, err)
    return worst


# ---------------------------------------------------------------------------
# Model file round-trip
# ---------------------------------------------------------------------------


def save_model(state: ModelState, path) -> None:
    """Binary model file: magic, version, config JSON, named float64 arrays."""
    buf = io.BytesIO()
    buf.write(MODEL_MAGIC)
    buf.write(MODEL_VERSION)
    cfg_json = json.dumps(asdict(state.config), sort_keys=True).encode("utf-8")
    buf.write(struct.pack("<I", len(cfg_json)))
    buf.write(cfg_json)
    buf.write(struct.pack("<I", len(state.params)))
    for name, arr in state.params.items():
        encoded = name.encode("utf-8")
        buf.write(struct.pack("<I", len(encoded)))
        buf.write(encoded)
        buf.write(struct.pack("<I", arr.ndim))
        for dim in arr.shape:
            buf.write(struct.pack("<Q", dim))
        buf.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    with open(path, "wb") as fh:
        fh.write(buf.getvalue())


def load_model(path, expected_config: ModelConfig | None = None) -> ModelState:
    """Read a model file; truncation and config mismatches raise DataError."""
    with open(path, "rb") as fh:
        data = fh.read()
    view = io.BytesIO(data)

    def take(n: int, what: str) -> bytes:
        chunk = view.read(n)
        if len(chunk) != n:
            raise DataError(f"truncated model file while reading {what}")
        return chunk

    if take(len(MODEL_MAGIC), "magic") != MODEL_MAGIC:
        raise DataError("not a model file (bad magic)")
    if take(len(MODEL_VERSION), "version") != MODEL_VERSION:
        raise DataError("unsupported model file version")
    (cfg_len,) = struct.unpack("<I", take(4, "config length"))
    cfg_dict = json.loads(take(cfg_len, "config").decode("utf-8"))
    config = ModelConfig(**cfg_dict)
    if expected_config is not None and config != expected_config:
        raise DataError(
            f"model config mismatch: file holds {config}, expected {expected_config}"
        )
    (n_params,) = struct.unpack("<I", take(4, "parameter count"))
    params: dict[str, np.ndarray] = {}
    for _ in range(n_params):
        (name_len,) = struct.unpack("<I", take(4, "name length"))
        name = take(name_len, "name").decode("utf-8")
        (ndim,) = struct.unpack("<I", take(4, "ndim"))
        shape = tuple(struct.unpack("<Q", take(8, "dim"))[0] for _ in range(ndim))
        count = int(np.prod(shape)) if shape else 1
        arr = np.frombuffer(take(count * 8, f"data for {name}"), dtype="<f8").reshape(shape)
        params[name] = arr.copy()
    if view.read(1):
        raise DataError("trailing bytes after model parameters")

    state = ModelState(config, params)
    reference = init_model(config, seed=0)
    if set(params) != set(reference.params):
        raise DataError("model file parameter names do not match the config")
    for name, ref in reference.params.items():
        if params[name].shape != ref.shape:
            raise DataError(
                f"parameter {name} has shape {params[name].shape}, expected {ref.shape}"
            )
    state.params = {name: params[name] for name in reference.params}  # fixed order
    return state
