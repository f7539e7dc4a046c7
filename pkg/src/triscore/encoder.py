"""A small trainable sequence encoder with exact analytic gradients.

Architecture: token + learned position embeddings, ``n_layers`` pre-layer-norm
transformer blocks (multi-head self-attention, then a GELU feedforward of
hidden width ``4 * hidden_width``), a final layer norm, CLS pooling at
position 0, and a three-layer regression head with tanh between adjacent
layers and a raw scalar output.

Everything runs in float64. The backward pass is written by hand and is
checked against central finite differences in the test suite; forward and
backward are bit-reproducible given (model, batch). Sequences in a batch are
padded and padded positions are masked out of attention keys, so batching
never changes per-sequence semantics.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
from scipy.special import erf

from .sequences import InputSequence
from .vocab import PAD_ID

LN_EPS = 1e-5
_MASK_NEG = -1e30

Gradients = dict[str, np.ndarray]


@dataclass(frozen=True)
class EncoderConfig:
    """Architecture configuration; every parameter shape derives from it.

    Desk-scale defaults are small enough for CPU training; the full-scale
    regression head (3072, 1024, 1) from large pretrained backbones is
    supported but not the default.
    """

    vocab_size: int
    hidden_width: int = 64
    n_layers: int = 2
    n_heads: int = 8
    max_len: int = 96
    head_dims: tuple[int, int, int] = (64, 32, 1)
    seed: int = 0

    def __post_init__(self) -> None:
        if self.vocab_size < 5:
            raise ValueError(f"vocab_size must be >= 5, got {self.vocab_size}")
        if self.hidden_width <= 0 or self.n_heads <= 0 or self.max_len <= 0:
            raise ValueError("hidden_width, n_heads, and max_len must be positive")
        if self.n_layers < 0:
            raise ValueError(f"n_layers must be >= 0, got {self.n_layers}")
        if self.hidden_width % self.n_heads != 0:
            raise ValueError(
                f"hidden_width {self.hidden_width} not divisible by n_heads {self.n_heads}"
            )
        if len(self.head_dims) != 3 or self.head_dims[2] != 1 or min(self.head_dims) < 1:
            raise ValueError(f"head_dims must be three positive widths ending in 1, got {self.head_dims}")

    @property
    def head_width(self) -> int:
        return self.hidden_width // self.n_heads

    @property
    def ffn_width(self) -> int:
        return 4 * self.hidden_width

    def to_dict(self) -> dict:
        return {
            "vocab_size": self.vocab_size,
            "hidden_width": self.hidden_width,
            "n_layers": self.n_layers,
            "n_heads": self.n_heads,
            "max_len": self.max_len,
            "head_dims": list(self.head_dims),
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "EncoderConfig":
        return cls(
            vocab_size=int(d["vocab_size"]),
            hidden_width=int(d["hidden_width"]),
            n_layers=int(d["n_layers"]),
            n_heads=int(d["n_heads"]),
            max_len=int(d["max_len"]),
            head_dims=tuple(int(x) for x in d["head_dims"]),
            seed=int(d["seed"]),
        )


def parameter_shapes(config: EncoderConfig) -> dict[str, tuple[int, ...]]:
    """Parameter names and shapes in the fixed serialization order."""
    d = config.hidden_width
    f = config.ffn_width
    m1, m2, m3 = config.head_dims
    shapes: dict[str, tuple[int, ...]] = {
        "tok_emb": (config.vocab_size, d),
        "pos_emb": (config.max_len, d),
    }
    for i in range(config.n_layers):
        shapes.update(
            {
                f"layer{i}.ln1.g": (d,),
                f"layer{i}.ln1.b": (d,),
                f"layer{i}.attn.wq": (d, d),
                f"layer{i}.attn.bq": (d,),
                f"layer{i}.attn.wk": (d, d),
                f"layer{i}.attn.bk": (d,),
                f"layer{i}.attn.wv": (d, d),
                f"layer{i}.attn.bv": (d,),
                f"layer{i}.attn.wo": (d, d),
                f"layer{i}.attn.bo": (d,),
                f"layer{i}.ln2.g": (d,),
                f"layer{i}.ln2.b": (d,),
                f"layer{i}.ffn.w1": (d, f),
                f"layer{i}.ffn.b1": (f,),
                f"layer{i}.ffn.w2": (f, d),
                f"layer{i}.ffn.b2": (d,),
            }
        )
    shapes.update(
        {
            "ln_f.g": (d,),
            "ln_f.b": (d,),
            "head.w1": (d, m1),
            "head.b1": (m1,),
            "head.w2": (m1, m2),
            "head.b2": (m2,),
            "head.w3": (m2, m3),
            "head.b3": (m3,),
        }
    )
    return shapes


def is_head_param(name: str) -> bool:
    return name.startswith("head.")


@dataclass
class EncoderModel:
    """Configuration plus one float64 tensor per parameter name."""

    config: EncoderConfig
    params: dict[str, np.ndarray] = field(repr=False)

    def copy(self) -> "EncoderModel":
        return EncoderModel(self.config, {k: v.copy() for k, v in self.params.items()})

    def check_finite(self, context: str = "") -> None:
        for name, value in self.params.items():
            if not np.all(np.isfinite(value)):
                raise FloatingPointError(f"non-finite parameter {name!r}{' ' + context if context else ''}")


def init_model(config: EncoderConfig) -> EncoderModel:
    """Deterministically initialize a model.

    Weight matrices (and embeddings) are uniform in +-1/sqrt(fan_in), where an
    embedding's fan-in is the hidden width; biases start at 0, layer-norm
    scales at 1. Draws happen in serialization order, so equal seeds give
    bit-identical models.
    """
    rng = np.random.default_rng(config.seed)
    params: dict[str, np.ndarray] = {}
    for name, shape in parameter_shapes(config).items():
        leaf = name.rsplit(".", 1)[-1]
        if leaf == "g":
            params[name] = np.ones(shape)
        elif leaf.startswith("b") or leaf == "b":
            params[name] = np.zeros(shape)
        else:
            fan_in = config.hidden_width if name.endswith("_emb") else shape[0]
            limit = 1.0 / math.sqrt(fan_in)
            params[name] = rng.uniform(-limit, limit, size=shape)
    return EncoderModel(config=config, params=params)


def zeros_like_params(model: EncoderModel) -> Gradients:
    return {k: np.zeros_like(v) for k, v in model.params.items()}


# ---------------------------------------------------------------------------
# primitive forward/backward pieces

def _ln_forward(x: np.ndarray, g: np.ndarray, b: np.ndarray):
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + LN_EPS)
    xhat = xc * inv
    return xhat * g + b, (xhat, inv, g)


def _ln_backward(dy: np.ndarray, cache):
    xhat, inv, g = cache
    axes = tuple(range(dy.ndim - 1))
    dg = (dy * xhat).sum(axis=axes)
    db = dy.sum(axis=axes)
    dxhat = dy * g
    dx = inv * (
        dxhat
        - dxhat.mean(axis=-1, keepdims=True)
        - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True)
    )
    return dx, dg, db


def _gelu(u: np.ndarray) -> np.ndarray:
    return 0.5 * u * (1.0 + erf(u / math.sqrt(2.0)))


def _gelu_grad(u: np.ndarray) -> np.ndarray:
    cdf = 0.5 * (1.0 + erf(u / math.sqrt(2.0)))
    pdf = np.exp(-0.5 * u * u) / math.sqrt(2.0 * math.pi)
    return cdf + u * pdf


def _linear_backward(x: np.ndarray, dy: np.ndarray, w: np.ndarray):
    n, m = w.shape
    x2 = x.reshape(-1, n)
    dy2 = dy.reshape(-1, m)
    dw = x2.T @ dy2
    db = dy2.sum(axis=0)
    dx = dy @ w.T
    return dx, dw, db


def _split_heads(x: np.ndarray, n_heads: int) -> np.ndarray:
    b, l, d = x.shape
    return x.reshape(b, l, n_heads, d // n_heads).transpose(0, 2, 1, 3)


def _merge_heads(x: np.ndarray) -> np.ndarray:
    b, h, l, dh = x.shape
    return x.transpose(0, 2, 1, 3).reshape(b, l, h * dh)


# ---------------------------------------------------------------------------
# batched forward / backward

def _pad_batch(model: EncoderModel, seqs: Sequence[InputSequence]):
    cfg = model.config
    if not seqs:
        raise ValueError("empty batch")
    lengths = [len(s) for s in seqs]
    max_l = max(lengths)
    if max_l > cfg.max_len:
        raise ValueError(f"sequence length {max_l} exceeds configured max_len {cfg.max_len}")
    ids = np.full((len(seqs), max_l), PAD_ID, dtype=np.int64)
    mask = np.zeros((len(seqs), max_l))
    for row, seq in enumerate(seqs):
        arr = np.asarray(seq.ids, dtype=np.int64)
        if arr.size and (arr.min() < 0 or arr.max() >= cfg.vocab_size):
            raise ValueError(
                f"token id out of range for vocab_size {cfg.vocab_size}: {arr.min()}..{arr.max()}"
            )
        ids[row, : arr.size] = arr
        mask[row, : arr.size] = 1.0
    return ids, mask


def _forward_ids(model: EncoderModel, ids: np.ndarray, mask: np.ndarray, need_cache: bool):
    cfg = model.config
    prm = model.params
    n_heads = cfg.n_heads
    scale = 1.0 / math.sqrt(cfg.head_width)
    length = ids.shape[1]

    x = prm["tok_emb"][ids] + prm["pos_emb"][:length]
    key_bias = _MASK_NEG * (1.0 - mask)[:, None, None, :]

    layer_caches = []
    for i in range(cfg.n_layers):
        p = f"layer{i}"
        a, ln1_cache = _ln_forward(x, prm[f"{p}.ln1.g"], prm[f"{p}.ln1.b"])
        q = a @ prm[f"{p}.attn.wq"] + prm[f"{p}.attn.bq"]
        k = a @ prm[f"{p}.attn.wk"] + prm[f"{p}.attn.bk"]
        v = a @ prm[f"{p}.attn.wv"] + prm[f"{p}.attn.bv"]
        qh, kh, vh = (_split_heads(t, n_heads) for t in (q, k, v))
        scores = qh @ kh.swapaxes(-1, -2) * scale + key_bias
        scores -= scores.max(axis=-1, keepdims=True)
        expd = np.exp(scores)
        probs = expd / expd.sum(axis=-1, keepdims=True)
        ctx = probs @ vh
        merged = _merge_heads(ctx)
        attn_out = merged @ prm[f"{p}.attn.wo"] + prm[f"{p}.attn.bo"]
        x = x + attn_out

        a2, ln2_cache = _ln_forward(x, prm[f"{p}.ln2.g"], prm[f"{p}.ln2.b"])
        u = a2 @ prm[f"{p}.ffn.w1"] + prm[f"{p}.ffn.b1"]
        act = _gelu(u)
        ff_out = act @ prm[f"{p}.ffn.w2"] + prm[f"{p}.ffn.b2"]
        x = x + ff_out
        if need_cache:
            layer_caches.append((ln1_cache, a, qh, kh, vh, probs, merged, ln2_cache, a2, u, act))

    hidden, lnf_cache = _ln_forward(x, prm["ln_f.g"], prm["ln_f.b"])
    cls = hidden[:, 0, :]
    z1 = cls @ prm["head.w1"] + prm["head.b1"]
    t1 = np.tanh(z1)
    z2 = t1 @ prm["head.w2"] + prm["head.b2"]
    t2 = np.tanh(z2)
    pred = (t2 @ prm["head.w3"])[:, 0] + prm["head.b3"][0]

    cache = None
    if need_cache:
        cache = {
            "ids": ids,
            "mask": mask,
            "layers": layer_caches,
            "lnf": lnf_cache,
            "cls": cls,
            "t1": t1,
            "t2": t2,
        }
    return pred, hidden, cache


def _backward_ids(model: EncoderModel, cache: dict, dpred: np.ndarray, grads: Gradients) -> None:
    """Accumulate gradients of sum(dpred * pred) into ``grads`` in place."""
    cfg = model.config
    prm = model.params
    n_heads = cfg.n_heads
    scale = 1.0 / math.sqrt(cfg.head_width)
    ids = cache["ids"]
    cls, t1, t2 = cache["cls"], cache["t1"], cache["t2"]

    dt2 = dpred[:, None] @ prm["head.w3"].T
    grads["head.w3"] += t2.T @ dpred[:, None]
    grads["head.b3"] += np.array([dpred.sum()])
    dz2 = dt2 * (1.0 - t2 * t2)
    dt1, dw2, db2 = _linear_backward(t1, dz2, prm["head.w2"])
    grads["head.w2"] += dw2
    grads["head.b2"] += db2
    dz1 = dt1 * (1.0 - t1 * t1)
    dcls, dw1, db1 = _linear_backward(cls, dz1, prm["head.w1"])
    grads["head.w1"] += dw1
    grads["head.b1"] += db1

    dhidden = np.zeros((ids.shape[0], ids.shape[1], cfg.hidden_width))
    dhidden[:, 0, :] = dcls
    dx, dg, db = _ln_backward(dhidden, cache["lnf"])
    grads["ln_f.g"] += dg
    grads["ln_f.b"] += db

    for i in reversed(range(cfg.n_layers)):
        p = f"layer{i}"
        ln1_cache, a, qh, kh, vh, probs, merged, ln2_cache, a2, u, act = cache["layers"][i]

        dff = dx
        dact, dw2, db2 = _linear_backward(act, dff, prm[f"{p}.ffn.w2"])
        grads[f"{p}.ffn.w2"] += dw2
        grads[f"{p}.ffn.b2"] += db2
        du = dact * _gelu_grad(u)
        da2, dw1, db1 = _linear_backward(a2, du, prm[f"{p}.ffn.w1"])
        grads[f"{p}.ffn.w1"] += dw1
        grads[f"{p}.ffn.b1"] += db1
        dx_ff, dg2, db2n = _ln_backward(da2, ln2_cache)
        grads[f"{p}.ln2.g"] += dg2
        grads[f"{p}.ln2.b"] += db2n
        dx = dx + dx_ff

        dattn = dx
        dmerged, dwo, dbo = _linear_backward(merged, dattn, prm[f"{p}.attn.wo"])
        grads[f"{p}.attn.wo"] += dwo
        grads[f"{p}.attn.bo"] += dbo
        dctx = _split_heads(dmerged, n_heads)
        dprobs = dctx @ vh.swapaxes(-1, -2)
        dvh = probs.swapaxes(-1, -2) @ dctx
        dscores = probs * (dprobs - (dprobs * probs).sum(axis=-1, keepdims=True))
        dqh = dscores @ kh * scale
        dkh = dscores.swapaxes(-1, -2) @ qh * scale
        dq, dk, dv = (_merge_heads(t) for t in (dqh, dkh, dvh))
        da_q, dwq, dbq = _linear_backward(a, dq, prm[f"{p}.attn.wq"])
        da_k, dwk, dbk = _linear_backward(a, dk, prm[f"{p}.attn.wk"])
        da_v, dwv, dbv = _linear_backward(a, dv, prm[f"{p}.attn.wv"])
        grads[f"{p}.attn.wq"] += dwq
        grads[f"{p}.attn.bq"] += dbq
        grads[f"{p}.attn.wk"] += dwk
        grads[f"{p}.attn.bk"] += dbk
        grads[f"{p}.attn.wv"] += dwv
        grads[f"{p}.attn.bv"] += dbv
        dx_attn, dg1, db1n = _ln_backward(da_q + da_k + da_v, ln1_cache)
        grads[f"{p}.ln1.g"] += dg1
        grads[f"{p}.ln1.b"] += db1n
        dx = dx + dx_attn

    length = ids.shape[1]
    np.add.at(grads["tok_emb"], ids.reshape(-1), dx.reshape(-1, cfg.hidden_width))
    grads["pos_emb"][:length] += dx.sum(axis=0)


# ---------------------------------------------------------------------------
# public operations

def encode(model: EncoderModel, seq: InputSequence) -> np.ndarray:
    """Hidden-state matrix for one sequence: one row per input token, after the final layer norm."""
    ids, mask = _pad_batch(model, [seq])
    _, hidden, _ = _forward_ids(model, ids, mask, need_cache=False)
    return hidden[0]


def pool_cls(hidden: np.ndarray) -> np.ndarray:
    """Whole-sequence representation: the hidden state at position 0."""
    hidden = np.asarray(hidden)
    if hidden.ndim != 2 or hidden.shape[0] == 0:
        raise ValueError(f"expected a non-empty (length, width) matrix, got shape {hidden.shape}")
    return hidden[0]


def predict_head(model: EncoderModel, pooled: np.ndarray) -> float:
    """Three-layer regression head: tanh between adjacent layers, raw scalar out."""
    pooled = np.asarray(pooled)
    if pooled.shape != (model.config.hidden_width,):
        raise ValueError(
            f"pooled vector has shape {pooled.shape}, expected ({model.config.hidden_width},)"
        )
    prm = model.params
    t1 = np.tanh(pooled @ prm["head.w1"] + prm["head.b1"])
    t2 = np.tanh(t1 @ prm["head.w2"] + prm["head.b2"])
    return float(t2 @ prm["head.w3"][:, 0] + prm["head.b3"][0])


def forward(model: EncoderModel, seq: InputSequence) -> float:
    """Scalar quality prediction for one rendered sequence."""
    ids, mask = _pad_batch(model, [seq])
    pred, _, _ = _forward_ids(model, ids, mask, need_cache=False)
    return float(pred[0])


def forward_batch(model: EncoderModel, seqs: Sequence[InputSequence]) -> np.ndarray:
    """Scalar predictions for a batch of sequences (padded + masked internally)."""
    ids, mask = _pad_batch(model, seqs)
    pred, _, _ = _forward_ids(model, ids, mask, need_cache=False)
    return pred


def backward(
    model: EncoderModel,
    batch: Sequence[tuple[InputSequence, float]],
    grads: Gradients | None = None,
) -> tuple[float, Gradients]:
    """Mean-squared-error loss over a batch and its exact analytic gradients.

    When ``grads`` is passed, gradients are accumulated into it (used for the
    joint multi-format objective); otherwise a fresh gradient dict is made.
    """
    if not batch:
        raise ValueError("empty batch")
    targets = []
    for seq, gold in batch:
        if gold is None:
            raise ValueError("every batch item needs a gold score")
        targets.append(float(gold))
    ids, mask = _pad_batch(model, [seq for seq, _ in batch])
    pred, _, cache = _forward_ids(model, ids, mask, need_cache=True)
    diff = pred - np.asarray(targets)
    loss = float(np.mean(diff * diff))
    if grads is None:
        grads = zeros_like_params(model)
    dpred = 2.0 * diff / len(batch)
    _backward_ids(model, cache, dpred, grads)
    return loss, grads
