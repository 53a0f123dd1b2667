"""BERT-style encoder forward pass in plain numpy, double precision.

Post-layer-norm block order, GELU (tanh approximation) feed-forward,
tanh pooler over the [CLS] position and a two-logit classifier head.
Class index 0 is non-depressive, index 1 depressive; ties resolve to
non-depressive.

The batched forward optionally records an activation cache consumed by
the reverse pass in finetune.py.
"""

from __future__ import annotations

import math
import zlib
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .corpus import Label
from .tokenizer import TokenSequence

N_SEGMENTS = 2
MASK_BIAS = -1e9
INIT_STD = 0.02

NON_DEPRESSIVE_INDEX = 0
DEPRESSIVE_INDEX = 1


class EncoderError(Exception):
    pass


@dataclass(frozen=True)
class EncoderConfig:
    n_layers: int
    hidden: int
    n_heads: int
    ff_dim: int
    vocab_size: int
    max_positions: int
    layernorm_eps: float = 1e-12

    def __post_init__(self):
        if self.n_layers < 1 or self.hidden < 2 or self.n_heads < 1 or self.ff_dim < 1:
            raise ValueError(f"invalid encoder dimensions: {self}")
        if self.hidden % self.n_heads != 0:
            raise ValueError(f"hidden ({self.hidden}) not divisible by n_heads ({self.n_heads})")
        if self.vocab_size < 1 or self.max_positions < 1:
            raise ValueError(f"invalid vocab/position sizes: {self}")

    @property
    def head_dim(self) -> int:
        return self.hidden // self.n_heads

    def to_dict(self) -> dict:
        return {
            "n_layers": self.n_layers,
            "hidden": self.hidden,
            "n_heads": self.n_heads,
            "ff_dim": self.ff_dim,
            "vocab_size": self.vocab_size,
            "max_positions": self.max_positions,
            "layernorm_eps": self.layernorm_eps,
        }


def tensor_specs(config: EncoderConfig) -> list[tuple[str, tuple[int, ...], str]]:
    """Canonical (name, shape, kind) enumeration; kind in {weight,bias,scale}."""
    d, ff = config.hidden, config.ff_dim
    specs: list[tuple[str, tuple[int, ...], str]] = [
        ("embeddings.token", (config.vocab_size, d), "weight"),
        ("embeddings.position", (config.max_positions, d), "weight"),
        ("embeddings.segment", (N_SEGMENTS, d), "weight"),
        ("embeddings.ln_scale", (d,), "scale"),
        ("embeddings.ln_shift", (d,), "bias"),
    ]
    for i in range(config.n_layers):
        p = f"block{i}"
        specs += [
            (f"{p}.attn.wq", (d, d), "weight"),
            (f"{p}.attn.bq", (d,), "bias"),
            (f"{p}.attn.wk", (d, d), "weight"),
            (f"{p}.attn.bk", (d,), "bias"),
            (f"{p}.attn.wv", (d, d), "weight"),
            (f"{p}.attn.bv", (d,), "bias"),
            (f"{p}.attn.wo", (d, d), "weight"),
            (f"{p}.attn.bo", (d,), "bias"),
            (f"{p}.ln1.scale", (d,), "scale"),
            (f"{p}.ln1.shift", (d,), "bias"),
            (f"{p}.ff.w1", (d, ff), "weight"),
            (f"{p}.ff.b1", (ff,), "bias"),
            (f"{p}.ff.w2", (ff, d), "weight"),
            (f"{p}.ff.b2", (d,), "bias"),
            (f"{p}.ln2.scale", (d,), "scale"),
            (f"{p}.ln2.shift", (d,), "bias"),
        ]
    specs += [
        ("pooler.weight", (d, d), "weight"),
        ("pooler.bias", (d,), "bias"),
        ("classifier.weight", (d, 2), "weight"),
        ("classifier.bias", (2,), "bias"),
    ]
    return specs


class ModelParameters:
    """All encoder/pooler/head tensors, keyed by canonical name."""

    __slots__ = ("config", "tensors")

    def __init__(self, config: EncoderConfig, tensors: dict[str, np.ndarray]):
        expected = {name: shape for name, shape, _ in tensor_specs(config)}
        if set(tensors) != set(expected):
            missing = set(expected) - set(tensors)
            extra = set(tensors) - set(expected)
            raise EncoderError(f"tensor set mismatch: missing={sorted(missing)} extra={sorted(extra)}")
        ordered: dict[str, np.ndarray] = {}
        for name, shape, _ in tensor_specs(config):
            t = np.asarray(tensors[name], dtype=np.float64)
            if t.shape != shape:
                raise EncoderError(f"{name}: shape {t.shape} != expected {shape}")
            if not np.all(np.isfinite(t)):
                raise EncoderError(f"{name}: non-finite values")
            ordered[name] = t
        self.config = config
        self.tensors = ordered

    def copy(self) -> "ModelParameters":
        return ModelParameters(self.config, {k: v.copy() for k, v in self.tensors.items()})

    def n_parameters(self) -> int:
        return sum(t.size for t in self.tensors.values())


def _tensor_rng(seed: int, name: str) -> np.random.Generator:
    # per-tensor stream so re-drawing any subset is order-independent
    ss = np.random.SeedSequence([seed & 0xFFFFFFFFFFFFFFFF, zlib.crc32(name.encode())])
    return np.random.Generator(np.random.PCG64(ss))


def _truncated_normal(rng: np.random.Generator, shape: tuple[int, ...], std: float) -> np.ndarray:
    x = rng.normal(0.0, std, size=shape)
    bad = np.abs(x) > 2.0 * std
    while bad.any():
        x[bad] = rng.normal(0.0, std, size=int(bad.sum()))
        bad = np.abs(x) > 2.0 * std
    return x


def init_tensor(name: str, shape: tuple[int, ...], kind: str, seed: int) -> np.ndarray:
    if kind == "weight":
        return _truncated_normal(_tensor_rng(seed, name), shape, INIT_STD)
    if kind == "scale":
        return np.ones(shape, dtype=np.float64)
    return np.zeros(shape, dtype=np.float64)


def init_params(config: EncoderConfig, seed: int) -> ModelParameters:
    """Deterministic init: weights ~ N(0, 0.02^2) truncated at 2 sigma,
    biases/shifts zero, layer-norm scales one."""
    tensors = {
        name: init_tensor(name, shape, kind, seed)
        for name, shape, kind in tensor_specs(config)
    }
    return ModelParameters(config, tensors)


def layer_norm(x: np.ndarray, scale: np.ndarray, shift: np.ndarray, eps: float) -> np.ndarray:
    """(x - mean) / sqrt(population variance + eps) * scale + shift, last axis."""
    x = np.asarray(x, dtype=np.float64)
    mu = x.mean(axis=-1, keepdims=True)
    var = x.var(axis=-1, keepdims=True)
    return (x - mu) / np.sqrt(var + eps) * scale + shift


def _layer_norm_cached(x, scale, shift, eps):
    mu = x.mean(axis=-1, keepdims=True)
    var = x.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x - mu) * inv
    return xhat * scale + shift, (xhat, inv)


def softmax(scores: np.ndarray) -> np.ndarray:
    """Numerically stable softmax over the last axis."""
    shifted = scores - scores.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


_GELU_C = math.sqrt(2.0 / math.pi)
_GELU_A = 0.044715


def gelu(x: np.ndarray) -> np.ndarray:
    return 0.5 * x * (1.0 + np.tanh(_GELU_C * (x + _GELU_A * x ** 3)))


def gelu_grad(x: np.ndarray) -> np.ndarray:
    t = np.tanh(_GELU_C * (x + _GELU_A * x ** 3))
    return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * _GELU_C * (1.0 + 3.0 * _GELU_A * x * x)


def _dropout_mask(rng: np.random.Generator, shape, rate: float) -> np.ndarray:
    # inverted dropout: mask already carries the 1/(1-rate) scale
    return (rng.random(shape) >= rate) / (1.0 - rate)


def sequences_to_arrays(seqs: list[TokenSequence]) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    ids = np.asarray([s.ids for s in seqs], dtype=np.int64)
    mask = np.asarray([s.attention_mask for s in seqs], dtype=np.float64)
    segs = np.asarray([s.segment_ids for s in seqs], dtype=np.int64)
    return ids, mask, segs


def embed_batch(ids: np.ndarray, segs: np.ndarray, params: ModelParameters) -> np.ndarray:
    cfg = params.config
    if ids.max() >= cfg.vocab_size or ids.min() < 0:
        raise EncoderError(f"token id out of range [0, {cfg.vocab_size})")
    if ids.shape[1] > cfg.max_positions:
        raise EncoderError(f"sequence length {ids.shape[1]} exceeds max_positions {cfg.max_positions}")
    t = params.tensors
    summed = (
        t["embeddings.token"][ids]
        + t["embeddings.position"][: ids.shape[1]][None, :, :]
        + t["embeddings.segment"][segs]
    )
    return summed


def embed(seq: TokenSequence, params: ModelParameters) -> np.ndarray:
    """Token + position + segment embeddings, layer-normed: [max_len, hidden]."""
    ids, _, segs = sequences_to_arrays([seq])
    summed = embed_batch(ids, segs, params)
    t = params.tensors
    out = layer_norm(summed, t["embeddings.ln_scale"], t["embeddings.ln_shift"],
                     params.config.layernorm_eps)
    return out[0]


def forward_batch(
    ids: np.ndarray,
    attn_mask: np.ndarray,
    segs: np.ndarray,
    params: ModelParameters,
    dropout_rate: float = 0.0,
    rng: Optional[np.random.Generator] = None,
    dropout_blocks: frozenset[int] = frozenset(),
    want_cache: bool = False,
):
    """Run the full encoder on a batch; returns (logits, cache).

    Dropout (inverted, seeded) is applied inside ``dropout_blocks`` only,
    on attention probabilities and on the attention/feed-forward outputs.
    """
    cfg = params.config
    t = params.tensors
    eps = cfg.layernorm_eps
    B, T = ids.shape
    H, dh = cfg.n_heads, cfg.head_dim
    scale = 1.0 / math.sqrt(dh)

    cache: dict = {"ids": ids, "segs": segs, "mask": attn_mask, "blocks": []} if want_cache else None

    emb_sum = embed_batch(ids, segs, params)
    x, emb_ln = _layer_norm_cached(emb_sum, t["embeddings.ln_scale"], t["embeddings.ln_shift"], eps)
    if want_cache:
        cache["emb_ln"] = emb_ln

    key_bias = (attn_mask - 1.0)[:, None, None, :] * -MASK_BIAS  # (B,1,1,T), -1e9 at pad keys
    for i in range(cfg.n_layers):
        p = f"block{i}"
        drop_here = dropout_rate > 0.0 and i in dropout_blocks
        bc: dict = {"x_in": x} if want_cache else {}

        q = x @ t[f"{p}.attn.wq"] + t[f"{p}.attn.bq"]
        k = x @ t[f"{p}.attn.wk"] + t[f"{p}.attn.bk"]
        v = x @ t[f"{p}.attn.wv"] + t[f"{p}.attn.bv"]
        qh = q.reshape(B, T, H, dh).transpose(0, 2, 1, 3)
        kh = k.reshape(B, T, H, dh).transpose(0, 2, 1, 3)
        vh = v.reshape(B, T, H, dh).transpose(0, 2, 1, 3)
        scores = qh @ kh.transpose(0, 1, 3, 2) * scale + key_bias
        probs = softmax(scores)
        if drop_here:
            m_probs = _dropout_mask(rng, probs.shape, dropout_rate)
            probs_used = probs * m_probs
        else:
            m_probs = None
            probs_used = probs
        ctx = (probs_used @ vh).transpose(0, 2, 1, 3).reshape(B, T, cfg.hidden)
        attn_out = ctx @ t[f"{p}.attn.wo"] + t[f"{p}.attn.bo"]
        if drop_here:
            m_attn = _dropout_mask(rng, attn_out.shape, dropout_rate)
            attn_out = attn_out * m_attn
        else:
            m_attn = None
        x_mid, ln1 = _layer_norm_cached(x + attn_out, t[f"{p}.ln1.scale"], t[f"{p}.ln1.shift"], eps)

        ff_pre = x_mid @ t[f"{p}.ff.w1"] + t[f"{p}.ff.b1"]
        ff_act = gelu(ff_pre)
        ff_out = ff_act @ t[f"{p}.ff.w2"] + t[f"{p}.ff.b2"]
        if drop_here:
            m_ff = _dropout_mask(rng, ff_out.shape, dropout_rate)
            ff_out = ff_out * m_ff
        else:
            m_ff = None
        x_next, ln2 = _layer_norm_cached(x_mid + ff_out, t[f"{p}.ln2.scale"], t[f"{p}.ln2.shift"], eps)

        if want_cache:
            bc.update(
                qh=qh, kh=kh, vh=vh, probs=probs, m_probs=m_probs, probs_used=probs_used,
                ctx=ctx, m_attn=m_attn, ln1=ln1, x_mid=x_mid,
                ff_pre=ff_pre, ff_act=ff_act, m_ff=m_ff, ln2=ln2,
            )
            cache["blocks"].append(bc)
        x = x_next

    pooled_pre = x[:, 0, :] @ t["pooler.weight"] + t["pooler.bias"]
    pooled = np.tanh(pooled_pre)
    logits = pooled @ t["classifier.weight"] + t["classifier.bias"]
    if want_cache:
        cache["h_last"] = x
        cache["pooled"] = pooled
    return logits, cache


def attention_block(x: np.ndarray, params: ModelParameters, block_index: int,
                    attn_mask: np.ndarray) -> np.ndarray:
    """One encoder block (attention + feed-forward) on a single sequence."""
    cfg = params.config
    t = params.tensors
    p = f"block{block_index}"
    B = 1
    xb = x[None, :, :]
    T = xb.shape[1]
    H, dh = cfg.n_heads, cfg.head_dim
    q = (xb @ t[f"{p}.attn.wq"] + t[f"{p}.attn.bq"]).reshape(B, T, H, dh).transpose(0, 2, 1, 3)
    k = (xb @ t[f"{p}.attn.wk"] + t[f"{p}.attn.bk"]).reshape(B, T, H, dh).transpose(0, 2, 1, 3)
    v = (xb @ t[f"{p}.attn.wv"] + t[f"{p}.attn.bv"]).reshape(B, T, H, dh).transpose(0, 2, 1, 3)
    bias = (np.asarray(attn_mask, dtype=np.float64) - 1.0)[None, None, None, :] * -MASK_BIAS
    probs = softmax(q @ k.transpose(0, 1, 3, 2) / math.sqrt(dh) + bias)
    ctx = (probs @ v).transpose(0, 2, 1, 3).reshape(B, T, cfg.hidden)
    attn_out = ctx @ t[f"{p}.attn.wo"] + t[f"{p}.attn.bo"]
    x_mid = layer_norm(xb + attn_out, t[f"{p}.ln1.scale"], t[f"{p}.ln1.shift"], cfg.layernorm_eps)
    ff = gelu(x_mid @ t[f"{p}.ff.w1"] + t[f"{p}.ff.b1"]) @ t[f"{p}.ff.w2"] + t[f"{p}.ff.b2"]
    out = layer_norm(x_mid + ff, t[f"{p}.ln2.scale"], t[f"{p}.ln2.shift"], cfg.layernorm_eps)
    return out[0]


def pool(h: np.ndarray, params: ModelParameters) -> np.ndarray:
    """tanh(W_p . h[0] + b_p) over the [CLS] row."""
    return np.tanh(h[0] @ params.tensors["pooler.weight"] + params.tensors["pooler.bias"])


@dataclass(frozen=True)
class Prediction:
    prob_depressive: float
    label: Label
    logits: tuple[float, float]


def prediction_from_logits(logits: np.ndarray) -> Prediction:
    probs = softmax(np.asarray(logits, dtype=np.float64))
    depressive = logits[DEPRESSIVE_INDEX] > logits[NON_DEPRESSIVE_INDEX]
    return Prediction(
        prob_depressive=float(probs[DEPRESSIVE_INDEX]),
        label=Label.DEPRESSIVE if depressive else Label.NON_DEPRESSIVE,
        logits=(float(logits[0]), float(logits[1])),
    )


def forward(seq: TokenSequence, params: ModelParameters) -> Prediction:
    """Deterministic inference on one sequence (dropout off)."""
    ids, mask, segs = sequences_to_arrays([seq])
    logits, _ = forward_batch(ids, mask, segs, params)
    return prediction_from_logits(logits[0])
