"""Selective fine-tuning: re-initialize and train only the last encoder
block, the pooler and the classifier head, freezing everything else.

Gradients are exact reverse-mode derivatives of the numpy forward pass in
encoder.py (finite-difference checked in the test suite). Two comparison
plans ship alongside the selective one: head-only (classifier only, no
re-init) and full (every tensor trainable).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .corpus import Label
from .encoder import (
    EncoderConfig,
    ModelParameters,
    forward_batch,
    gelu_grad,
    init_tensor,
    sequences_to_arrays,
    softmax,
    tensor_specs,
    DEPRESSIVE_INDEX,
)
from .tokenizer import TokenSequence, Vocab, encode
from .preprocess import clean_text


@dataclass(frozen=True)
class FreezeMask:
    """Per-tensor trainable flag covering every model tensor exactly once."""

    trainable: dict[str, bool]

    def trainable_names(self) -> list[str]:
        return [n for n, flag in self.trainable.items() if flag]

    def validate_for(self, params: ModelParameters) -> None:
        if set(self.trainable) != set(params.tensors):
            raise ValueError("freeze mask does not cover the parameter set exactly")

    def to_json(self) -> str:
        return json.dumps(self.trainable, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "FreezeMask":
        return cls(trainable=json.loads(text))


def freeze_plan(config: EncoderConfig) -> FreezeMask:
    """The selective scheme: last encoder block + pooler + classifier."""
    last = f"block{config.n_layers - 1}."
    return FreezeMask(
        {
            name: name.startswith(last) or name.startswith(("pooler.", "classifier."))
            for name, _, _ in tensor_specs(config)
        }
    )


def head_only_plan(config: EncoderConfig) -> FreezeMask:
    """Comparison baseline: only the classifier head trains, nothing re-drawn."""
    return FreezeMask(
        {name: name.startswith("classifier.") for name, _, _ in tensor_specs(config)}
    )


def full_plan(config: EncoderConfig) -> FreezeMask:
    return FreezeMask({name: True for name, _, _ in tensor_specs(config)})


def reinit_layers(params: ModelParameters, mask: FreezeMask, seed: int) -> ModelParameters:
    """Re-draw trainable tensors from the init distribution; frozen tensors
    are carried over bit-identically."""
    mask.validate_for(params)
    tensors = {}
    for name, shape, kind in tensor_specs(params.config):
        if mask.trainable[name]:
            tensors[name] = init_tensor(name, shape, kind, seed)
        else:
            tensors[name] = params.tensors[name].copy()
    return ModelParameters(params.config, tensors)


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 2e-5
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    epochs: int = 4
    batch_size: int = 16
    seed: int = 0
    dropout_rate: float = 0.1

    def __post_init__(self):
        if self.lr <= 0:
            raise ValueError("lr must be positive")
        if not (0 < self.beta1 < 1 and 0 < self.beta2 < 1):
            raise ValueError("adam betas must lie in (0,1)")
        if self.epochs < 0 or self.batch_size < 1:
            raise ValueError("epochs >= 0 and batch_size >= 1 required")
        if not 0 <= self.dropout_rate < 1:
            raise ValueError("dropout_rate must lie in [0,1)")


@dataclass
class Metrics:
    train_loss: list[float] = field(default_factory=list)
    train_acc: list[float] = field(default_factory=list)
    val_loss: list[float] = field(default_factory=list)
    val_acc: list[float] = field(default_factory=list)
    test_accuracy: Optional[float] = None
    best_epoch: Optional[int] = None

    def check(self) -> None:
        n = len(self.train_loss)
        if not (len(self.train_acc) == len(self.val_loss) == len(self.val_acc) == n):
            raise ValueError("metric arrays must have equal length")
        for acc in self.train_acc + self.val_acc:
            if not 0.0 <= acc <= 1.0:
                raise ValueError(f"accuracy {acc} outside [0,1]")

    def to_json(self) -> str:
        return json.dumps(
            {
                "train_loss": self.train_loss,
                "train_acc": self.train_acc,
                "val_loss": self.val_loss,
                "val_acc": self.val_acc,
                "test_accuracy": self.test_accuracy,
                "best_epoch": self.best_epoch,
            }
        )

    def to_csv(self) -> str:
        lines = ["epoch,train_loss,train_acc,val_loss,val_acc"]
        for i in range(len(self.train_loss)):
            lines.append(
                f"{i},{self.train_loss[i]!r},{self.train_acc[i]!r},"
                f"{self.val_loss[i]!r},{self.val_acc[i]!r}"
            )
        return "\n".join(lines) + "\n"


def cross_entropy(logits: Sequence[float], label: int) -> float:
    """-ln softmax(logits)[label], via the stable log-sum-exp form."""
    l0, l1 = float(logits[0]), float(logits[1])
    if not (math.isfinite(l0) and math.isfinite(l1)):
        raise ValueError("non-finite logits")
    return float(np.logaddexp(l0, l1) - (l0, l1)[label])


def _ln_backward(dy, ln_cache, scale):
    xhat, inv = ln_cache
    reduce_axes = tuple(range(dy.ndim - 1))
    dscale = (dy * xhat).sum(axis=reduce_axes)
    dshift = dy.sum(axis=reduce_axes)
    dxhat = dy * scale
    dx = inv * (
        dxhat
        - dxhat.mean(axis=-1, keepdims=True)
        - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True)
    )
    return dx, dscale, dshift


def _loss_and_grads(
    ids: np.ndarray,
    attn_mask: np.ndarray,
    segs: np.ndarray,
    y: np.ndarray,
    params: ModelParameters,
    dropout_rate: float = 0.0,
    rng: Optional[np.random.Generator] = None,
    dropout_blocks: frozenset[int] = frozenset(),
) -> tuple[float, int, dict[str, np.ndarray]]:
    """Mean cross-entropy, correct-count and gradients for every tensor."""
    cfg = params.config
    t = params.tensors
    B, T = ids.shape
    H, dh = cfg.n_heads, cfg.head_dim
    d = cfg.hidden
    scale = 1.0 / math.sqrt(dh)

    logits, cache = forward_batch(
        ids, attn_mask, segs, params,
        dropout_rate=dropout_rate, rng=rng, dropout_blocks=dropout_blocks,
        want_cache=True,
    )
    probs = softmax(logits)
    loss = float(np.mean(np.logaddexp(logits[:, 0], logits[:, 1]) - logits[np.arange(B), y]))
    correct = int(np.sum(((logits[:, DEPRESSIVE_INDEX] > logits[:, 1 - DEPRESSIVE_INDEX])
                          .astype(np.int64)) == y))

    grads: dict[str, np.ndarray] = {}
    onehot = np.zeros_like(probs)
    onehot[np.arange(B), y] = 1.0
    dlogits = (probs - onehot) / B

    pooled = cache["pooled"]
    grads["classifier.weight"] = pooled.T @ dlogits
    grads["classifier.bias"] = dlogits.sum(axis=0)
    dpooled = dlogits @ t["classifier.weight"].T
    dpooled_pre = dpooled * (1.0 - pooled * pooled)
    h0 = cache["h_last"][:, 0, :]
    grads["pooler.weight"] = h0.T @ dpooled_pre
    grads["pooler.bias"] = dpooled_pre.sum(axis=0)

    dx = np.zeros_like(cache["h_last"])
    dx[:, 0, :] = dpooled_pre @ t["pooler.weight"].T

    for i in reversed(range(cfg.n_layers)):
        p = f"block{i}"
        bc = cache["blocks"][i]

        dres2, dg2, db2 = _ln_backward(dx, bc["ln2"], t[f"{p}.ln2.scale"])
        grads[f"{p}.ln2.scale"] = dg2
        grads[f"{p}.ln2.shift"] = db2
        dx_mid = dres2.copy()
        dff_out = dres2 if bc["m_ff"] is None else dres2 * bc["m_ff"]

        grads[f"{p}.ff.w2"] = np.einsum("btf,btd->fd", bc["ff_act"], dff_out)
        grads[f"{p}.ff.b2"] = dff_out.sum(axis=(0, 1))
        dff_act = dff_out @ t[f"{p}.ff.w2"].T
        dff_pre = dff_act * gelu_grad(bc["ff_pre"])
        grads[f"{p}.ff.w1"] = np.einsum("btd,btf->df", bc["x_mid"], dff_pre)
        grads[f"{p}.ff.b1"] = dff_pre.sum(axis=(0, 1))
        dx_mid += dff_pre @ t[f"{p}.ff.w1"].T

        dres1, dg1, db1 = _ln_backward(dx_mid, bc["ln1"], t[f"{p}.ln1.scale"])
        grads[f"{p}.ln1.scale"] = dg1
        grads[f"{p}.ln1.shift"] = db1
        dx_in = dres1.copy()
        dattn_out = dres1 if bc["m_attn"] is None else dres1 * bc["m_attn"]

        grads[f"{p}.attn.wo"] = np.einsum("btd,bte->de", bc["ctx"], dattn_out)
        grads[f"{p}.attn.bo"] = dattn_out.sum(axis=(0, 1))
        dctx = dattn_out @ t[f"{p}.attn.wo"].T
        dctxh = dctx.reshape(B, T, H, dh).transpose(0, 2, 1, 3)

        dprobs_used = dctxh @ bc["vh"].transpose(0, 1, 3, 2)
        dvh = bc["probs_used"].transpose(0, 1, 3, 2) @ dctxh
        dprobs = dprobs_used if bc["m_probs"] is None else dprobs_used * bc["m_probs"]
        a = bc["probs"]
        dscores = a * (dprobs - (dprobs * a).sum(axis=-1, keepdims=True))

        dqh = dscores @ bc["kh"] * scale
        dkh = dscores.transpose(0, 1, 3, 2) @ bc["qh"] * scale
        dq = dqh.transpose(0, 2, 1, 3).reshape(B, T, d)
        dk = dkh.transpose(0, 2, 1, 3).reshape(B, T, d)
        dv = dvh.transpose(0, 2, 1, 3).reshape(B, T, d)

        x_in = bc["x_in"]
        grads[f"{p}.attn.wq"] = np.einsum("btd,bte->de", x_in, dq)
        grads[f"{p}.attn.bq"] = dq.sum(axis=(0, 1))
        grads[f"{p}.attn.wk"] = np.einsum("btd,bte->de", x_in, dk)
        grads[f"{p}.attn.bk"] = dk.sum(axis=(0, 1))
        grads[f"{p}.attn.wv"] = np.einsum("btd,bte->de", x_in, dv)
        grads[f"{p}.attn.bv"] = dv.sum(axis=(0, 1))
        dx_in += dq @ t[f"{p}.attn.wq"].T + dk @ t[f"{p}.attn.wk"].T + dv @ t[f"{p}.attn.wv"].T
        dx = dx_in

    demb, dg0, db0 = _ln_backward(dx, cache["emb_ln"], t["embeddings.ln_scale"])
    grads["embeddings.ln_scale"] = dg0
    grads["embeddings.ln_shift"] = db0
    gtok = np.zeros_like(t["embeddings.token"])
    np.add.at(gtok, ids, demb)
    grads["embeddings.token"] = gtok
    gpos = np.zeros_like(t["embeddings.position"])
    gpos[:T] = demb.sum(axis=0)
    grads["embeddings.position"] = gpos
    gseg = np.zeros_like(t["embeddings.segment"])
    np.add.at(gseg, segs, demb)
    grads["embeddings.segment"] = gseg

    return loss, correct, grads


def labels_to_indices(labels: Sequence[Label]) -> np.ndarray:
    out = np.empty(len(labels), dtype=np.int64)
    for i, lab in enumerate(labels):
        if lab is None:
            raise ValueError("unlabeled example in a labeled dataset")
        out[i] = DEPRESSIVE_INDEX if lab is Label.DEPRESSIVE else 1 - DEPRESSIVE_INDEX
    return out


def backward(
    seqs: Sequence[TokenSequence],
    labels: Sequence[Label],
    params: ModelParameters,
    mask: FreezeMask,
) -> dict[str, np.ndarray]:
    """Gradients of the mean batch loss for trainable tensors only
    (inference mode: dropout off, deterministic)."""
    if not seqs:
        raise ValueError("empty batch")
    if len(seqs) != len(labels):
        raise ValueError("batch/labels length mismatch")
    mask.validate_for(params)
    ids, attn, segs = sequences_to_arrays(list(seqs))
    y = labels_to_indices(list(labels))
    _, _, grads = _loss_and_grads(ids, attn, segs, y, params)
    return {name: grads[name] for name in mask.trainable_names()}


AdamState = dict[str, tuple[np.ndarray, np.ndarray]]


def adam_step(
    params: ModelParameters,
    grads: dict[str, np.ndarray],
    state: AdamState,
    t: int,
    config: TrainConfig,
) -> tuple[ModelParameters, AdamState]:
    """One bias-corrected Adam update, applied in place to the given tensors."""
    if t < 1:
        raise ValueError("step index must be >= 1")
    b1, b2 = config.beta1, config.beta2
    for name, g in grads.items():
        m, v = state.get(name, (np.zeros_like(g), np.zeros_like(g)))
        m = b1 * m + (1.0 - b1) * g
        v = b2 * v + (1.0 - b2) * g * g
        state[name] = (m, v)
        m_hat = m / (1.0 - b1 ** t)
        v_hat = v / (1.0 - b2 ** t)
        params.tensors[name] -= config.lr * m_hat / (np.sqrt(v_hat) + config.eps)
    return params, state


Dataset = list[tuple[TokenSequence, Label]]


def encode_documents(docs, vocab: Vocab, max_len: int) -> Dataset:
    """clean_text -> encode for each document, keeping its label."""
    return [(encode(clean_text(d.text), vocab, max_len), d.label) for d in docs]


def _dataset_arrays(dataset: Dataset):
    seqs = [seq for seq, _ in dataset]
    ids, attn, segs = sequences_to_arrays(seqs)
    y = labels_to_indices([label for _, label in dataset])
    return ids, attn, segs, y


def _eval_arrays(ids, attn, segs, y, params, chunk: int = 256) -> tuple[float, float]:
    n = len(ids)
    total_loss = 0.0
    total_correct = 0
    for lo in range(0, n, chunk):
        hi = min(lo + chunk, n)
        logits, _ = forward_batch(ids[lo:hi], attn[lo:hi], segs[lo:hi], params)
        yb = y[lo:hi]
        total_loss += float(
            np.sum(np.logaddexp(logits[:, 0], logits[:, 1]) - logits[np.arange(hi - lo), yb])
        )
        pred = (logits[:, DEPRESSIVE_INDEX] > logits[:, 1 - DEPRESSIVE_INDEX]).astype(np.int64)
        total_correct += int(np.sum(pred == yb))
    return total_loss / n, total_correct / n


def evaluate(dataset: Dataset, params: ModelParameters) -> tuple[float, float]:
    """(mean loss, accuracy) with argmax labels; ties count as non-depressive."""
    if not dataset:
        raise ValueError("empty evaluation set")
    ids, attn, segs, y = _dataset_arrays(dataset)
    return _eval_arrays(ids, attn, segs, y, params)


def train(
    train_set: Dataset,
    val_set: Dataset,
    params: ModelParameters,
    mask: FreezeMask,
    tconfig: TrainConfig,
) -> tuple[ModelParameters, Metrics]:
    """Mini-batch Adam over shuffled epochs; returns the best-validation-
    accuracy snapshot (ties keep the earlier epoch) and per-epoch metrics."""
    mask.validate_for(params)
    work = params.copy()
    metrics = Metrics()
    if tconfig.epochs == 0:
        return work, metrics
    if not train_set:
        raise ValueError("empty train set")
    if not val_set:
        raise ValueError("empty validation set")
    train_labels = {label for _, label in train_set}
    if len(train_labels) < 2:
        raise ValueError("train set must contain both classes")

    ids, attn, segs, y = _dataset_arrays(train_set)
    vids, vattn, vsegs, vy = _dataset_arrays(val_set)

    trainable = set(mask.trainable_names())
    dropout_blocks = frozenset(
        i for i in range(params.config.n_layers)
        if any(name.startswith(f"block{i}.") for name in trainable)
    )
    rng_shuffle = np.random.default_rng([tconfig.seed & 0xFFFFFFFFFFFFFFFF, 1])
    rng_drop = np.random.default_rng([tconfig.seed & 0xFFFFFFFFFFFFFFFF, 2])

    state: AdamState = {}
    step = 0
    n = len(train_set)
    best_acc = -1.0
    best_params = work.copy()
    best_epoch = -1

    for epoch in range(tconfig.epochs):
        perm = rng_shuffle.permutation(n)
        epoch_loss = 0.0
        epoch_correct = 0
        for lo in range(0, n, tconfig.batch_size):
            batch = perm[lo : lo + tconfig.batch_size]
            loss, correct, grads = _loss_and_grads(
                ids[batch], attn[batch], segs[batch], y[batch], work,
                dropout_rate=tconfig.dropout_rate, rng=rng_drop,
                dropout_blocks=dropout_blocks,
            )
            step += 1
            adam_step(work, {k: grads[k] for k in trainable}, state, step, tconfig)
            epoch_loss += loss * len(batch)
            epoch_correct += correct
        metrics.train_loss.append(epoch_loss / n)
        metrics.train_acc.append(epoch_correct / n)
        vloss, vacc = _eval_arrays(vids, vattn, vsegs, vy, work)
        metrics.val_loss.append(vloss)
        metrics.val_acc.append(vacc)
        if vacc > best_acc:
            best_acc = vacc
            best_params = work.copy()
            best_epoch = epoch

    metrics.best_epoch = best_epoch
    metrics.check()
    return best_params, metrics
