# numerics.py
"""
Dense float32 kernels used by the encoder, each charging a FlopLedger with the
counting rules of the FLOP model:

  matmul  (M x N) @ (N x L)   2*M*N*L - M*L
  softmax                     2 per element
  gelu                        1 per element
  bias / residual add         1 per element   (OTHER)
  layer norm                  5 per element   (OTHER)

Only MHA and FFNN tags take part in the analytical comparison; OTHER collects
the operations the closed-form model leaves out.
"""
from __future__ import annotations
from collections import Counter
from contextlib import contextmanager
from enum import Enum
from typing import Callable, Iterator, Optional, Sequence, Union
import math

import numpy as np
import numpy.typing as npt

from errors import ContractViolation

Matrix = npt.NDArray[np.float32]
Vector = npt.NDArray[np.floating]

OUTSIDE_LAYERS = -1

# stands in for -inf on masked keys; exp() of it underflows to exactly 0
_MASK_FILL = -1e9
_GELU_C = math.sqrt(2.0 / math.pi)
_GELU_K = 0.044715


class Block(str, Enum):
    MHA = "MHA"
    FFNN = "FFNN"
    OTHER = "OTHER"


class FlopLedger:
    """
    Operation counts keyed by (layer index, block). The active layer is set
    with the `layer()` context manager; anything charged outside it lands on
    OUTSIDE_LAYERS (embedding, classifier head).
    """

    def __init__(self) -> None:
        self._counts: Counter[tuple[int, Block]] = Counter()
        self._layer = OUTSIDE_LAYERS

    @contextmanager
    def layer(self, index: int) -> Iterator["FlopLedger"]:
        prev = self._layer
        self._layer = index
        try:
            yield self
        finally:
            self._layer = prev

    def charge(self, block: Union[Block, str], count: int) -> None:
        count = int(count)
        if count < 0:
            raise ContractViolation(f"negative FLOP charge {count}")
        self._counts[(self._layer, Block(block))] += count

    def get(self, layer: int, block: Union[Block, str]) -> int:
        return self._counts.get((layer, Block(block)), 0)

    def block_total(self, block: Union[Block, str]) -> int:
        b = Block(block)
        return sum(v for (_, blk), v in self._counts.items() if blk is b)

    def __getitem__(self, block: Union[Block, str]) -> int:
        return self.block_total(block)

    def total(self) -> int:
        return sum(self._counts.values())

    def layers(self) -> list[int]:
        return sorted({layer for layer, _ in self._counts if layer != OUTSIDE_LAYERS})

    def by_layer(self) -> dict[int, dict[Block, int]]:
        out: dict[int, dict[Block, int]] = {}
        for (layer, blk), v in sorted(self._counts.items(), key=lambda kv: (kv[0][0], kv[0][1].value)):
            out.setdefault(layer, {b: 0 for b in Block})[blk] = v
        return out

    def merge(self, other: "FlopLedger") -> "FlopLedger":
        self._counts.update(other._counts)
        return self

    def as_rows(self) -> list[dict[str, int]]:
        return [
            {"layer": layer, **{b.value: counts[b] for b in Block}}
            for layer, counts in self.by_layer().items()
        ]


class MemoryMeter:
    """
    Instrumented activation bytes. `hold()` keeps arrays counted as live for
    the duration of a block; peak never decreases.
    """

    def __init__(self) -> None:
        self.current = 0
        self.peak = 0

    def allocate(self, nbytes: int) -> None:
        self.current += int(nbytes)
        if self.current > self.peak:
            self.peak = self.current

    def release(self, nbytes: int) -> None:
        self.current = max(0, self.current - int(nbytes))

    @contextmanager
    def hold(self, *arrays: np.ndarray) -> Iterator["MemoryMeter"]:
        nbytes = sum(a.nbytes for a in arrays)
        self.allocate(nbytes)
        try:
            yield self
        finally:
            self.release(nbytes)

    @contextmanager
    def scope(self) -> Iterator[Callable[[np.ndarray], np.ndarray]]:
        """Yields `track(array)`; every tracked array is released on exit."""
        held: list[int] = []

        def track(a: np.ndarray) -> np.ndarray:
            self.allocate(a.nbytes)
            held.append(a.nbytes)
            return a

        try:
            yield track
        finally:
            self.release(sum(held))

    def merge(self, other: "MemoryMeter") -> "MemoryMeter":
        self.peak = max(self.peak, other.peak)
        return self


def _charge(ledger: Optional[FlopLedger], tag: Union[Block, str], count: int) -> None:
    if ledger is not None:
        ledger.charge(tag, count)


def matmul(
    a: Matrix,
    b: Matrix,
    ledger: Optional[FlopLedger] = None,
    tag: Union[Block, str] = Block.OTHER,
) -> Matrix:
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ContractViolation(f"matmul shape mismatch: {a.shape} x {b.shape}")
    m, n = a.shape
    l = b.shape[1]
    out = np.matmul(a, b).astype(np.float32, copy=False)
    _charge(ledger, tag, 2 * m * n * l - m * l)
    return out


def add_bias(
    x: Matrix,
    bias: Vector,
    ledger: Optional[FlopLedger] = None,
    tag: Union[Block, str] = Block.OTHER,
) -> Matrix:
    if bias.shape != (x.shape[1],):
        raise ContractViolation(f"bias shape {bias.shape} does not fit matrix {x.shape}")
    _charge(ledger, tag, x.size)
    return (x + bias).astype(np.float32, copy=False)


def add_residual(
    x: Matrix,
    y: Matrix,
    ledger: Optional[FlopLedger] = None,
    tag: Union[Block, str] = Block.OTHER,
) -> Matrix:
    if x.shape != y.shape:
        raise ContractViolation(f"residual shape mismatch: {x.shape} + {y.shape}")
    _charge(ledger, tag, x.size)
    return (x + y).astype(np.float32, copy=False)


def softmax_masked(
    scores: Matrix,
    key_mask: npt.ArrayLike,
    ledger: Optional[FlopLedger] = None,
    tag: Union[Block, str] = Block.OTHER,
) -> Matrix:
    """
    Row softmax over keys. Masked keys get exactly 0; a row with every key
    masked comes back all zero.
    """
    keep = np.asarray(key_mask).astype(bool)
    if scores.ndim != 2 or keep.shape != (scores.shape[1],):
        raise ContractViolation(
            f"key mask of shape {keep.shape} does not fit scores {scores.shape}"
        )
    # float64 internally so rows sum to 1 well inside float32 resolution
    filled = np.where(keep[None, :], scores.astype(np.float64), _MASK_FILL)
    shifted = filled - filled.max(axis=1, keepdims=True)
    e = np.exp(shifted) * keep[None, :]
    denom = e.sum(axis=1, keepdims=True)
    probs = np.divide(e, denom, out=np.zeros_like(e), where=denom > 0)
    _charge(ledger, tag, 2 * scores.size)
    return probs.astype(np.float32)


def layer_norm(
    x: Matrix,
    gain: Vector,
    bias: Vector,
    epsilon: float = 1e-12,
    ledger: Optional[FlopLedger] = None,
) -> Matrix:
    if gain.shape != (x.shape[1],) or bias.shape != (x.shape[1],):
        raise ContractViolation(
            f"layer norm params {gain.shape}/{bias.shape} do not fit matrix {x.shape}"
        )
    if epsilon <= 0:
        raise ContractViolation(f"epsilon must be > 0, got {epsilon}")
    x64 = x.astype(np.float64)
    mean = x64.mean(axis=1, keepdims=True)
    var = x64.var(axis=1, keepdims=True)
    normed = (x64 - mean) / np.sqrt(var + epsilon)
    _charge(ledger, Block.OTHER, 5 * x.size)
    return (normed * gain + bias).astype(np.float32)


def gelu(
    x: Matrix,
    ledger: Optional[FlopLedger] = None,
    tag: Union[Block, str] = Block.OTHER,
) -> Matrix:
    """tanh approximation: 0.5 x (1 + tanh(sqrt(2/pi) (x + 0.044715 x^3)))."""
    with np.errstate(over="ignore"):
        inner = _GELU_C * (x + _GELU_K * np.power(x, 3))
        out = 0.5 * x * (1.0 + np.tanh(inner))
    _charge(ledger, tag, x.size)
    return out.astype(np.float32, copy=False)


def masked_mean_std(values: npt.ArrayLike) -> Optional[tuple[float, float, int]]:
    """
    Mean and population SD over the non-NaN entries. Returns None when there
    is no valid entry ("no valid scores").
    """
    v = np.asarray(values, dtype=np.float64)
    count = int(np.count_nonzero(~np.isnan(v)))
    if count == 0:
        return None
    lo, hi = float(np.nanmin(v)), float(np.nanmax(v))
    if lo == hi:
        # summation rounding must not open a gap around identical values
        return lo, 0.0, count
    return float(np.nanmean(v)), float(np.nanstd(v)), count


def seeded_random_matrix(
    rows: int,
    cols: int,
    seed: Union[int, Sequence[int]],
    scale: float,
) -> Matrix:
    if scale <= 0:
        raise ContractViolation(f"scale must be > 0, got {scale}")
    if rows < 1 or cols < 1:
        raise ContractViolation(f"matrix shape must be positive, got ({rows}, {cols})")
    rng = np.random.default_rng(seed)
    return rng.uniform(-scale, scale, size=(rows, cols)).astype(np.float32)
