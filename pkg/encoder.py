# encoder.py
"""
Transformer encoder with a pruning step between MHA and FFNN:

  y_mha  = LayerNorm(x + MHA(x))
  y_mha, mask = repack(y_mha, prune(attention, mask, alpha), merge)   # scheduled layers only
  y      = LayerNorm(y_mha + FFNN(y_mha))

Per-head projection weights are stored separately so the ledger charges each
head exactly as the closed-form model counts it.
"""
from __future__ import annotations
from contextlib import nullcontext
from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence
import logging
import math

import numpy as np

from config import ModelDims, PruneConfig
from corpus import TokenSequence
from errors import ContractViolation, DegenerateSequenceError
from numerics import (
    Block,
    FlopLedger,
    Matrix,
    MemoryMeter,
    add_bias,
    add_residual,
    gelu,
    layer_norm,
    matmul,
    seeded_random_matrix,
    softmax_masked,
)
from pruning import (
    LayerPruneStats,
    MaskUpdate,
    identity_update,
    importance_scores,
    layer_stats,
    prune_mask,
    repack_batch,
    schedule_applies,
)

logger = logging.getLogger(__name__)

LN_EPS = 1e-12


def tensor_shapes(dims: ModelDims) -> dict[str, tuple[int, ...]]:
    """Every weight tensor by name, in archive order."""
    d, dk, f = dims.d_mha, dims.head_dim, dims.d_ffnn
    shapes: dict[str, tuple[int, ...]] = {
        "token_embedding": (dims.vocab_size, d),
        "position_embedding": (dims.max_len, d),
    }
    for layer in range(dims.layers):
        p = f"layers.{layer}"
        for proj in ("q", "k", "v"):
            for head in range(dims.h):
                shapes[f"{p}.w_{proj}.{head}"] = (d, dk)
                shapes[f"{p}.b_{proj}.{head}"] = (dk,)
        shapes.update({
            f"{p}.w_o": (d, d),
            f"{p}.b_o": (d,),
            f"{p}.ln1_gain": (d,),
            f"{p}.ln1_bias": (d,),
            f"{p}.w_1": (d, f),
            f"{p}.b_1": (f,),
            f"{p}.w_2": (f, d),
            f"{p}.b_2": (d,),
            f"{p}.ln2_gain": (d,),
            f"{p}.ln2_bias": (d,),
        })
    shapes["head.weight"] = (d, dims.num_classes)
    shapes["head.bias"] = (dims.num_classes,)
    return shapes


@dataclass(frozen=True)
class LayerWeights:
    w_q: list[Matrix]
    b_q: list[np.ndarray]
    w_k: list[Matrix]
    b_k: list[np.ndarray]
    w_v: list[Matrix]
    b_v: list[np.ndarray]
    w_o: Matrix
    b_o: np.ndarray
    ln1_gain: np.ndarray
    ln1_bias: np.ndarray
    w_1: Matrix
    b_1: np.ndarray
    w_2: Matrix
    b_2: np.ndarray
    ln2_gain: np.ndarray
    ln2_bias: np.ndarray

    @property
    def heads(self) -> int:
        return len(self.w_q)

    @classmethod
    def from_tensors(cls, prefix: str, heads: int, t: Mapping[str, np.ndarray]) -> "LayerWeights":
        def per_head(name: str) -> list[np.ndarray]:
            return [t[f"{prefix}.{name}.{i}"] for i in range(heads)]

        return cls(
            w_q=per_head("w_q"), b_q=per_head("b_q"),
            w_k=per_head("w_k"), b_k=per_head("b_k"),
            w_v=per_head("w_v"), b_v=per_head("b_v"),
            **{name: t[f"{prefix}.{name}"] for name in (
                "w_o", "b_o", "ln1_gain", "ln1_bias", "w_1", "b_1",
                "w_2", "b_2", "ln2_gain", "ln2_bias",
            )},
        )

    def tensors(self, prefix: str) -> dict[str, np.ndarray]:
        out: dict[str, np.ndarray] = {}
        for proj in ("q", "k", "v"):
            for i in range(self.heads):
                out[f"{prefix}.w_{proj}.{i}"] = getattr(self, f"w_{proj}")[i]
                out[f"{prefix}.b_{proj}.{i}"] = getattr(self, f"b_{proj}")[i]
        for name in ("w_o", "b_o", "ln1_gain", "ln1_bias", "w_1", "b_1",
                     "w_2", "b_2", "ln2_gain", "ln2_bias"):
            out[f"{prefix}.{name}"] = getattr(self, name)
        return out


@dataclass(frozen=True)
class ClassifierHead:
    weight: Matrix
    bias: np.ndarray


@dataclass(frozen=True)
class EncoderWeights:
    dims: ModelDims
    token_embedding: Matrix
    position_embedding: Matrix
    layers: list[LayerWeights]
    head: ClassifierHead

    @classmethod
    def from_tensors(cls, dims: ModelDims, t: Mapping[str, np.ndarray]) -> "EncoderWeights":
        expected = tensor_shapes(dims)
        for name, shape in expected.items():
            if name not in t:
                raise ContractViolation(f"missing weight tensor {name}")
            if tuple(t[name].shape) != shape:
                raise ContractViolation(
                    f"weight tensor {name} has shape {tuple(t[name].shape)}, expected {shape}"
                )
        return cls(
            dims=dims,
            token_embedding=t["token_embedding"],
            position_embedding=t["position_embedding"],
            layers=[
                LayerWeights.from_tensors(f"layers.{i}", dims.h, t) for i in range(dims.layers)
            ],
            head=ClassifierHead(weight=t["head.weight"], bias=t["head.bias"]),
        )

    def tensors(self) -> dict[str, np.ndarray]:
        out = {
            "token_embedding": self.token_embedding,
            "position_embedding": self.position_embedding,
        }
        for i, lw in enumerate(self.layers):
            out.update(lw.tensors(f"layers.{i}"))
        out["head.weight"] = self.head.weight
        out["head.bias"] = self.head.bias
        return out


def _init_tensor(
    name: str, shape: tuple[int, ...], seed: int, index: int,
    init_scale: float, embedding_scale: float,
) -> np.ndarray:
    if name.endswith("_gain"):
        return np.ones(shape, dtype=np.float32)
    if len(shape) == 1:
        return np.zeros(shape, dtype=np.float32)
    scale = embedding_scale if name.endswith("_embedding") else init_scale
    return seeded_random_matrix(shape[0], shape[1], [seed, index], scale)


def init_weights(
    dims: ModelDims,
    seed: int = 0,
    init_scale: float = 0.02,
    embedding_scale: float = 1.0,
) -> EncoderWeights:
    """Uniform random matrices, zero biases, unit LayerNorm gains."""
    tensors = {
        name: _init_tensor(name, shape, seed, idx, init_scale, embedding_scale)
        for idx, (name, shape) in enumerate(tensor_shapes(dims).items())
    }
    return EncoderWeights.from_tensors(dims, tensors)


def init_layer_weights(
    dims: ModelDims,
    seed: int = 0,
    layer_index: int = 0,
    init_scale: float = 0.02,
) -> LayerWeights:
    """One layer only, identical to the same layer from init_weights()."""
    prefix = f"layers.{layer_index}"
    tensors = {
        name: _init_tensor(name, shape, seed, idx, init_scale, 1.0)
        for idx, (name, shape) in enumerate(tensor_shapes(dims).items())
        if name.startswith(prefix + ".")
    }
    return LayerWeights.from_tensors(prefix, dims.h, tensors)


@dataclass
class LayerOutput:
    hidden: Matrix
    mask: np.ndarray
    protected: tuple[int, ...]
    attention: list[Matrix]  # per head, captured before pruning
    length_in: int
    length_post_prune: int
    stats: Optional[LayerPruneStats] = None


@dataclass
class EncoderOutput:
    cls_vectors: Matrix
    lengths_in: list[list[int]]  # [sequence][layer]
    lengths_post_prune: list[list[int]]
    prune_stats: list[list[LayerPruneStats]] = field(default_factory=list)  # [layer][sequence]
    attention: Optional[list[list[np.ndarray]]] = None  # [layer][sequence] -> (h, S, S)

    def mean_lengths(self) -> list[float]:
        if not self.lengths_in:
            return []
        layers = len(self.lengths_in[0])
        return [
            sum(seq[i] for seq in self.lengths_in) / len(self.lengths_in) for i in range(layers)
        ]


def embed(
    sequence: TokenSequence,
    weights: EncoderWeights,
    ledger: Optional[FlopLedger] = None,
) -> Matrix:
    ids = np.asarray(sequence.ids, dtype=np.int64)
    vocab, max_len = weights.token_embedding.shape[0], weights.position_embedding.shape[0]
    if ids.shape[0] > max_len:
        raise ContractViolation(f"sequence length {ids.shape[0]} exceeds max_len {max_len}")
    if ids.size and (ids.min() < 0 or ids.max() >= vocab):
        raise ContractViolation(f"token ids must lie in [0, {vocab}), got range [{ids.min()}, {ids.max()}]")
    return add_residual(
        weights.token_embedding[ids], weights.position_embedding[: ids.shape[0]], ledger
    )


def mha_forward(
    hidden: Matrix,
    mask: np.ndarray,
    weights: LayerWeights,
    ledger: Optional[FlopLedger] = None,
    meter: Optional[MemoryMeter] = None,
) -> tuple[Matrix, list[Matrix]]:
    """LayerNorm(x + W_O concat_h(softmax(Q K^T / sqrt(d_k)) V)) and the per-head probabilities."""
    if hidden.ndim != 2 or hidden.shape[0] != len(mask):
        raise ContractViolation(
            f"hidden of shape {hidden.shape} does not fit mask of length {len(mask)}"
        )
    if hidden.shape[1] != weights.w_o.shape[0]:
        raise ContractViolation(
            f"hidden width {hidden.shape[1]} does not match W_O {weights.w_o.shape}"
        )
    meter = meter or MemoryMeter()
    scale = 1.0 / math.sqrt(weights.w_q[0].shape[1])
    heads: list[Matrix] = []
    attention: list[Matrix] = []
    with meter.scope() as track:
        for i in range(weights.heads):
            q = track(add_bias(matmul(hidden, weights.w_q[i], ledger, Block.MHA), weights.b_q[i], ledger))
            k = track(add_bias(matmul(hidden, weights.w_k[i], ledger, Block.MHA), weights.b_k[i], ledger))
            v = track(add_bias(matmul(hidden, weights.w_v[i], ledger, Block.MHA), weights.b_v[i], ledger))
            # the 1/sqrt(d_k) scaling is part of the 2-per-element softmax charge
            scores = track(matmul(q, k.T, ledger, Block.MHA) * np.float32(scale))
            probs = track(softmax_masked(scores, mask, ledger, Block.MHA))
            heads.append(track(matmul(probs, v, ledger, Block.MHA)))
            attention.append(probs)
        z = track(np.concatenate(heads, axis=1))
        out = track(add_bias(matmul(z, weights.w_o, ledger, Block.MHA), weights.b_o, ledger))
        y = layer_norm(
            add_residual(hidden, out, ledger), weights.ln1_gain, weights.ln1_bias, LN_EPS, ledger
        )
    return y, attention


def ffnn_forward(
    hidden: Matrix,
    weights: LayerWeights,
    ledger: Optional[FlopLedger] = None,
    meter: Optional[MemoryMeter] = None,
) -> Matrix:
    """LayerNorm(x + Linear2(GELU(Linear1(x))))."""
    if hidden.ndim != 2 or hidden.shape[1] != weights.w_1.shape[0]:
        raise ContractViolation(
            f"hidden of shape {hidden.shape} does not fit Linear1 {weights.w_1.shape}"
        )
    meter = meter or MemoryMeter()
    with meter.scope() as track:
        inter = track(add_bias(matmul(hidden, weights.w_1, ledger, Block.FFNN), weights.b_1, ledger))
        inter = track(gelu(inter, ledger, Block.FFNN))
        out = track(add_bias(matmul(inter, weights.w_2, ledger, Block.FFNN), weights.b_2, ledger))
        return layer_norm(
            add_residual(hidden, out, ledger), weights.ln2_gain, weights.ln2_bias, LN_EPS, ledger
        )


def _mask_update(
    attention: list[Matrix], mask: np.ndarray, protected: tuple[int, ...], alpha: float, layer_index: int
) -> MaskUpdate:
    try:
        scores = importance_scores(attention, mask, protected)
    except DegenerateSequenceError:
        logger.warning("Layer %d: degenerate sequence, pruning skipped", layer_index)
        return identity_update(mask, protected)
    update = prune_mask(scores, mask, alpha)
    if update.skipped:
        logger.debug("Layer %d: no prunable tokens, pruning skipped", layer_index)
    return update


def encoder_layer_forward_batch(
    hiddens: Sequence[Matrix],
    masks: Sequence[np.ndarray],
    protecteds: Sequence[tuple[int, ...]],
    weights: LayerWeights,
    prune_cfg: PruneConfig,
    layer_index: int,
    ledger: Optional[FlopLedger] = None,
    meter: Optional[MemoryMeter] = None,
) -> list[LayerOutput]:
    """
    One layer over a batch of equal-width sequences. Pruned sequences are
    repacked together so the FFNN sees one shared width.
    """
    if not (len(hiddens) == len(masks) == len(protecteds)):
        raise ContractViolation("hidden, mask and protected batches differ in size")
    for h, m in zip(hiddens, masks):
        if h.shape[0] != len(m):
            raise ContractViolation(f"mask of length {len(m)} does not fit hidden {h.shape}")

    meter = meter or MemoryMeter()
    scope = ledger.layer(layer_index) if ledger is not None else nullcontext()
    with scope:
        with meter.scope() as track:
            mha = [mha_forward(h, m, weights, ledger, meter) for h, m in zip(hiddens, masks)]
            ys = [track(y) for y, _ in mha]
            attentions = [a for _, a in mha]
            lengths_in = [int(np.sum(m)) for m in masks]

            if schedule_applies(prune_cfg.schedule, layer_index):
                updates = [
                    _mask_update(a, m, p, prune_cfg.alpha, layer_index)
                    for a, m, p in zip(attentions, masks, protecteds)
                ]
                packed = repack_batch(ys, updates, prune_cfg.merge)
                ys = [track(p.hidden) for p in packed]
                new_masks = [p.mask for p in packed]
                new_protected = [p.protected for p in packed]
                stats = [layer_stats(layer_index, u, p) for u, p in zip(updates, packed)]
            else:
                new_masks = [np.asarray(m, dtype=np.int8) for m in masks]
                new_protected = list(protecteds)
                stats = [None] * len(ys)

        # pre-prune rows are dead past this point; only the FFNN inputs stay live
        with meter.hold(*ys):
            outs = [ffnn_forward(y, weights, ledger, meter) for y in ys]

    results = []
    for out, m, p, a, n_in, st in zip(outs, new_masks, new_protected, attentions, lengths_in, stats):
        results.append(LayerOutput(
            hidden=out, mask=m, protected=p, attention=a,
            length_in=n_in, length_post_prune=int(np.sum(m)), stats=st,
        ))
    logger.debug(
        "Layer %d: mean length %.2f -> %.2f",
        layer_index,
        sum(lengths_in) / len(lengths_in),
        sum(r.length_post_prune for r in results) / len(results),
    )
    return results


def default_protected(mask: np.ndarray) -> tuple[int, ...]:
    """CLS at row 0 and SEP at the last unmasked row."""
    valid = np.flatnonzero(np.asarray(mask))
    if valid.size == 0 or valid[0] != 0:
        raise ContractViolation("mask must keep row 0 (CLS) unmasked")
    return tuple(sorted({0, int(valid[-1])}))


def encoder_layer_forward(
    hidden: Matrix,
    mask: np.ndarray,
    weights: LayerWeights,
    prune_cfg: PruneConfig,
    layer_index: int,
    ledger: Optional[FlopLedger] = None,
    protected: Optional[Sequence[int]] = None,
    meter: Optional[MemoryMeter] = None,
) -> LayerOutput:
    if protected is None:
        protected = default_protected(mask)
    return encoder_layer_forward_batch(
        [hidden], [mask], [tuple(protected)], weights, prune_cfg, layer_index, ledger, meter
    )[0]


def encoder_forward(
    batch: Sequence[TokenSequence],
    weights: EncoderWeights,
    dims: ModelDims,
    prune_cfg: PruneConfig,
    ledger: Optional[FlopLedger] = None,
    meter: Optional[MemoryMeter] = None,
    keep_attention: bool = False,
) -> EncoderOutput:
    if not batch:
        raise ContractViolation("encoder_forward needs a non-empty batch")
    width = len(batch[0])
    if any(len(s) != width for s in batch):
        raise ContractViolation(
            f"batch sequences must share one padded length, got {sorted({len(s) for s in batch})}"
        )
    if width > dims.max_len:
        raise ContractViolation(f"padded length {width} exceeds max_len {dims.max_len}")
    if len(weights.layers) != dims.layers:
        raise ContractViolation(
            f"weights carry {len(weights.layers)} layers, dims expect {dims.layers}"
        )
    expected = (dims.vocab_size, dims.d_mha)
    if weights.token_embedding.shape != expected:
        raise ContractViolation(
            f"weights have token embedding {weights.token_embedding.shape}, dims expect {expected}"
        )

    meter = meter or MemoryMeter()
    hiddens = [embed(s, weights, ledger) for s in batch]
    masks = [np.asarray(s.mask, dtype=np.int8) for s in batch]
    protecteds = [tuple(s.protected) for s in batch]

    lengths_in: list[list[int]] = [[] for _ in batch]
    lengths_post: list[list[int]] = [[] for _ in batch]
    prune_stats: list[list[LayerPruneStats]] = []
    archive: Optional[list[list[np.ndarray]]] = [] if keep_attention else None

    with meter.hold(*hiddens):
        for layer_index, lw in enumerate(weights.layers):
            outs = encoder_layer_forward_batch(
                hiddens, masks, protecteds, lw, prune_cfg, layer_index, ledger, meter
            )
            for i, o in enumerate(outs):
                lengths_in[i].append(o.length_in)
                lengths_post[i].append(o.length_post_prune)
            prune_stats.append([o.stats for o in outs if o.stats is not None])
            if archive is not None:
                archive.append([np.stack(o.attention) for o in outs])
            hiddens = [o.hidden for o in outs]
            masks = [o.mask for o in outs]
            protecteds = [o.protected for o in outs]

    # CLS stays at row 0 through every repack
    cls_vectors = np.stack([h[0] for h in hiddens]).astype(np.float32)
    return EncoderOutput(
        cls_vectors=cls_vectors,
        lengths_in=lengths_in,
        lengths_post_prune=lengths_post,
        prune_stats=prune_stats,
        attention=archive,
    )


def classify(
    cls_vectors: Matrix,
    head: ClassifierHead,
    ledger: Optional[FlopLedger] = None,
) -> Matrix:
    if cls_vectors.ndim != 2 or cls_vectors.shape[1] != head.weight.shape[0]:
        raise ContractViolation(
            f"CLS vectors of shape {cls_vectors.shape} do not fit head {head.weight.shape}"
        )
    return add_bias(matmul(cls_vectors, head.weight, ledger), head.bias, ledger)
