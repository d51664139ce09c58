# pruning.py
"""
Attention-based token pruning between the MHA and FFNN blocks.

A token's importance is the attention it receives, averaged over heads and
over the valid query rows. Tokens whose score falls outside
[mu - alpha*sigma, mu + alpha*sigma] are pruned; CLS and every SEP are always
kept and PAD never is. Pruned rows are either dropped or merged into a single
mean row placed just before the final SEP.
"""
from __future__ import annotations
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence, Union
import logging

import numpy as np
import numpy.typing as npt

from config import Schedule
from errors import ContractViolation, DegenerateSequenceError
from numerics import Matrix, masked_mean_std

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class ImportanceScores:
    scores: np.ndarray  # float64, NaN at CLS/SEP/PAD
    protected: tuple[int, ...]


@dataclass(frozen=True)
class MaskUpdate:
    old_mask: np.ndarray
    new_mask: np.ndarray
    kept_indices: tuple[int, ...]
    pruned_indices: tuple[int, ...]
    protected: tuple[int, ...]
    # keep interval; None when there was no valid score to prune on
    mu: Optional[float] = None
    sigma: Optional[float] = None
    lower: Optional[float] = None
    upper: Optional[float] = None
    valid_count: int = 0

    @property
    def skipped(self) -> bool:
        return self.mu is None


@dataclass(frozen=True)
class Repacked:
    hidden: Matrix
    mask: np.ndarray
    protected: tuple[int, ...]
    merged: bool = False


@dataclass(frozen=True)
class LayerPruneStats:
    layer: int
    mu: Optional[float]
    sigma: Optional[float]
    lower: Optional[float]
    upper: Optional[float]
    valid_count: int
    pruned_count: int
    merged: bool


def schedule_applies(schedule: Union[Schedule, str], layer_index: int) -> bool:
    if layer_index < 0:
        raise ContractViolation(f"layer index must be >= 0, got {layer_index}")
    schedule = Schedule(schedule)
    if schedule == Schedule.ALL:
        return True
    if schedule == Schedule.EVEN:
        return layer_index % 2 == 0
    if schedule == Schedule.ODD:
        return layer_index % 2 == 1
    return False


def importance_scores(
    attention: Union[Sequence[Matrix], np.ndarray],
    mask: npt.ArrayLike,
    protected: Iterable[int],
) -> ImportanceScores:
    """
    score[i] = mean over heads and valid query rows of attention[head][q][i].
    PAD query rows are left out of the average; CLS/SEP rows are not.
    """
    a = np.asarray(attention, dtype=np.float64)
    valid = np.asarray(mask).astype(bool)
    s = valid.shape[0]
    if a.ndim != 3 or a.shape[1:] != (s, s):
        raise ContractViolation(
            f"attention of shape {a.shape} does not fit a mask of length {s}"
        )
    protected = tuple(sorted(set(protected)))
    if any(not 0 <= p < s or not valid[p] for p in protected):
        raise ContractViolation(f"protected positions {protected} must be unmasked")
    if not valid.any():
        raise DegenerateSequenceError("degenerate sequence: no unmasked query rows")

    per_query = a.mean(axis=0)
    scores = per_query[valid].mean(axis=0)
    scores[~valid] = np.nan
    if protected:
        scores[list(protected)] = np.nan
    return ImportanceScores(scores=scores, protected=protected)


def prune_mask(
    scores: ImportanceScores,
    mask: npt.ArrayLike,
    alpha: float,
) -> MaskUpdate:
    old = np.asarray(mask).astype(np.int8)
    s = scores.scores
    if s.shape != old.shape:
        raise ContractViolation(
            f"scores of length {s.shape[0]} do not fit mask of length {old.shape[0]}"
        )
    if alpha < 0:
        raise ContractViolation(f"alpha must be >= 0, got {alpha}")

    stats = masked_mean_std(s)
    if stats is None:
        # nothing prunable: only CLS/SEP/PAD
        kept = tuple(int(i) for i in np.flatnonzero(old))
        return MaskUpdate(
            old_mask=old,
            new_mask=old.copy(),
            kept_indices=kept,
            pruned_indices=(),
            protected=scores.protected,
        )

    mu, sigma, count = stats
    lower, upper = mu - alpha * sigma, mu + alpha * sigma
    with np.errstate(invalid="ignore"):
        keep = (s >= lower) & (s <= upper) & ~np.isnan(s)

    new = np.zeros_like(old)
    new[keep] = 1
    if scores.protected:
        new[list(scores.protected)] = 1

    protected = set(scores.protected)
    pruned = tuple(
        int(i) for i in np.flatnonzero((old == 1) & (new == 0)) if int(i) not in protected
    )
    return MaskUpdate(
        old_mask=old,
        new_mask=new,
        kept_indices=tuple(int(i) for i in np.flatnonzero(new)),
        pruned_indices=pruned,
        protected=scores.protected,
        mu=mu,
        sigma=sigma,
        lower=lower,
        upper=upper,
        valid_count=count,
    )


def identity_update(mask: npt.ArrayLike, protected: Iterable[int]) -> MaskUpdate:
    """MaskUpdate that keeps every unmasked position."""
    old = np.asarray(mask).astype(np.int8)
    return MaskUpdate(
        old_mask=old,
        new_mask=old.copy(),
        kept_indices=tuple(int(i) for i in np.flatnonzero(old)),
        pruned_indices=(),
        protected=tuple(sorted(set(protected))),
    )


def repack(hidden: Matrix, update: MaskUpdate, merge: bool) -> Repacked:
    """
    Keep the rows of update.kept_indices in order. With merge, the pruned rows
    collapse into one mean row inserted right before the final SEP.
    """
    if hidden.ndim != 2 or hidden.shape[0] != update.new_mask.shape[0]:
        raise ContractViolation(
            f"hidden of shape {hidden.shape} does not fit mask of length {update.new_mask.shape[0]}"
        )
    kept = np.asarray(update.kept_indices, dtype=np.int64)
    rows = hidden[kept]
    protected = tuple(int(i) for i in np.searchsorted(kept, update.protected))

    merged = merge and len(update.pruned_indices) > 0
    if merged:
        merged_row = (
            hidden[list(update.pruned_indices)].astype(np.float64).mean(axis=0).astype(np.float32)
        )
        final_sep = max(protected) if protected and max(protected) > 0 else None
        at = final_sep if final_sep is not None else rows.shape[0]
        rows = np.insert(rows, at, merged_row, axis=0)
        protected = tuple(p + 1 if p >= at else p for p in protected)

    mask = np.ones(rows.shape[0], dtype=np.int8)
    return Repacked(hidden=np.ascontiguousarray(rows), mask=mask, protected=protected, merged=merged)


def repack_batch(
    hiddens: Sequence[Matrix],
    updates: Sequence[MaskUpdate],
    merge: bool,
) -> list[Repacked]:
    """
    Repack each sequence, then right-pad with zero rows (mask 0) to the longest
    repacked length so the batch shares one width.
    """
    if len(hiddens) != len(updates):
        raise ContractViolation(
            f"batch of {len(hiddens)} matrices does not match {len(updates)} mask updates"
        )
    packed = [repack(h, u, merge) for h, u in zip(hiddens, updates)]
    width = max(p.hidden.shape[0] for p in packed)
    out: list[Repacked] = []
    for p in packed:
        extra = width - p.hidden.shape[0]
        if extra == 0:
            out.append(p)
            continue
        hidden = np.vstack([p.hidden, np.zeros((extra, p.hidden.shape[1]), dtype=np.float32)])
        mask = np.concatenate([p.mask, np.zeros(extra, dtype=np.int8)])
        out.append(Repacked(hidden=hidden, mask=mask, protected=p.protected, merged=p.merged))
    return out


def layer_stats(layer: int, update: MaskUpdate, repacked: Repacked) -> LayerPruneStats:
    return LayerPruneStats(
        layer=layer,
        mu=update.mu,
        sigma=update.sigma,
        lower=update.lower,
        upper=update.upper,
        valid_count=update.valid_count,
        pruned_count=len(update.pruned_indices),
        merged=repacked.merged,
    )
