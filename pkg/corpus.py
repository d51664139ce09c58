# corpus.py
from __future__ import annotations
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Optional, Union
import json
import logging
import os

import numpy as np
from pydantic import BaseModel, NonNegativeInt, ValidationError

from config import ModelDims
from errors import CorpusError
from utils import hash_tokenize

logger = logging.getLogger(__name__)


class CorpusMode(str, Enum):
    SINGLE = "single"
    PAIR = "pair"


@dataclass(frozen=True)
class SpecialIds:
    pad: int = 0
    cls: int = 1
    sep: int = 2

    @property
    def reserved(self) -> int:
        """First id free for ordinary tokens."""
        return max(self.pad, self.cls, self.sep) + 1


@dataclass(frozen=True)
class TokenSequence:
    """
    Encoded input: ids padded to a fixed width, mask with 0 exactly at PAD, and
    the positions of CLS and every SEP.
    """

    ids: np.ndarray
    mask: np.ndarray
    protected: tuple[int, ...]
    item_id: str = ""

    def __len__(self) -> int:
        return int(self.ids.shape[0])

    @property
    def n_valid(self) -> int:
        return int(self.mask.sum())

    def padded_to(self, width: int, pad_id: int = 0) -> "TokenSequence":
        """Same sequence re-padded (or trailing PAD trimmed) to `width`."""
        if width < self.n_valid:
            raise CorpusError(
                f"cannot pad sequence {self.item_id!r} with {self.n_valid} tokens to width {width}"
            )
        ids = np.full(width, pad_id, dtype=np.int64)
        mask = np.zeros(width, dtype=np.int8)
        n = self.n_valid
        ids[:n] = self.ids[:n]
        mask[:n] = 1
        return TokenSequence(ids=ids, mask=mask, protected=self.protected, item_id=self.item_id)


@dataclass
class CorpusItem:
    id: str
    tokens: list[int]
    tokens_b: Optional[list[int]] = None


@dataclass
class Corpus:
    items: list[CorpusItem] = field(default_factory=list)
    mode: CorpusMode = CorpusMode.SINGLE

    def __len__(self) -> int:
        return len(self.items)


class _SingleRecord(BaseModel):
    id: Union[str, int, None] = None
    tokens: list[NonNegativeInt]


class _PairRecord(BaseModel):
    id: Union[str, int, None] = None
    tokens_a: list[NonNegativeInt]
    tokens_b: list[NonNegativeInt]


def token_budget(max_len: int, mode: CorpusMode) -> int:
    return max_len - (3 if mode == CorpusMode.PAIR else 2)


def _truncate_pair(a: list[int], b: list[int], budget: int) -> tuple[list[int], list[int]]:
    # longest first, one token at a time from the tail
    a, b = list(a), list(b)
    while len(a) + len(b) > budget:
        if len(a) >= len(b):
            a.pop()
        else:
            b.pop()
    return a, b


def load_corpus(
    path: str,
    mode: Union[CorpusMode, str] = CorpusMode.SINGLE,
    max_len: int = 128,
    vocab_size: Optional[int] = None,
) -> Corpus:
    """
    Read one JSON object per line. Sequences over the token budget
    (max_len minus the special tokens) are cut from the tail.
    """
    mode = CorpusMode(mode)
    budget = token_budget(max_len, mode)
    if budget < 0:
        raise CorpusError(f"max_len {max_len} leaves no room for special tokens")
    if not os.path.exists(path):
        raise FileNotFoundError(f"Corpus file not found: {path}")

    corpus = Corpus(mode=mode)
    truncated = 0
    with open(path, "r", encoding="utf-8") as f:
        for line_no, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                if mode == CorpusMode.PAIR:
                    rec = _PairRecord.model_validate_json(line)
                    tokens, tokens_b = rec.tokens_a, rec.tokens_b
                else:
                    rec = _SingleRecord.model_validate_json(line)
                    tokens, tokens_b = rec.tokens, None
            except ValidationError as e:
                raise CorpusError(
                    f"malformed {mode.value} record: {e.errors()[0]['msg']}", line_no
                ) from e

            if vocab_size is not None:
                bad = [t for t in tokens + (tokens_b or []) if t >= vocab_size]
                if bad:
                    raise CorpusError(
                        f"token id {bad[0]} outside vocabulary of size {vocab_size}", line_no
                    )

            if tokens_b is None:
                if len(tokens) > budget:
                    tokens = tokens[:budget]
                    truncated += 1
            elif len(tokens) + len(tokens_b) > budget:
                tokens, tokens_b = _truncate_pair(tokens, tokens_b, budget)
                truncated += 1

            item_id = str(rec.id) if rec.id is not None else f"line-{line_no}"
            corpus.items.append(CorpusItem(id=item_id, tokens=tokens, tokens_b=tokens_b))

    if not corpus.items:
        raise CorpusError(f"empty corpus: {path}")
    if truncated:
        logger.warning("Truncated %d of %d records to %d tokens", truncated, len(corpus), budget)
    logger.info("Loaded %d %s records from %s", len(corpus), mode.value, path)
    return corpus


def encode_sequence(
    tokens: list[int],
    dims: ModelDims,
    special: SpecialIds = SpecialIds(),
    tokens_b: Optional[list[int]] = None,
    pad_to: Optional[int] = None,
    item_id: str = "",
) -> TokenSequence:
    """
    single: [CLS, t..., SEP, PAD...]
    pair:   [CLS, a..., SEP, b..., SEP, PAD...]
    """
    width = pad_to or dims.max_len
    if width > dims.max_len:
        raise CorpusError(f"pad width {width} exceeds max_len {dims.max_len}")

    body = [special.cls, *tokens, special.sep]
    protected = [0, len(body) - 1]
    if tokens_b is not None:
        body += [*tokens_b, special.sep]
        protected.append(len(body) - 1)

    if len(body) > width:
        raise CorpusError(
            f"sequence {item_id!r} needs {len(body)} positions with special tokens, only {width} available"
        )
    for t in body:
        if not 0 <= t < dims.vocab_size:
            raise CorpusError(f"token id {t} outside vocabulary of size {dims.vocab_size}")

    ids = np.full(width, special.pad, dtype=np.int64)
    ids[: len(body)] = body
    mask = np.zeros(width, dtype=np.int8)
    mask[: len(body)] = 1
    return TokenSequence(ids=ids, mask=mask, protected=tuple(protected), item_id=item_id)


def encode_corpus(
    corpus: Corpus,
    dims: ModelDims,
    special: SpecialIds = SpecialIds(),
) -> list[TokenSequence]:
    return [
        encode_sequence(it.tokens, dims, special, tokens_b=it.tokens_b, item_id=it.id)
        for it in corpus.items
    ]


def _write_lines(path: str, records: Iterable[dict]) -> int:
    parent = os.path.dirname(path)
    if parent:
        os.makedirs(parent, exist_ok=True)
    count = 0
    with open(path, "w", encoding="utf-8") as f:
        for rec in records:
            f.write(json.dumps(rec) + "\n")
            count += 1
    return count


def write_synthetic_corpus(
    path: str,
    count: int,
    dims: ModelDims,
    seed: int = 0,
    mode: Union[CorpusMode, str] = CorpusMode.SINGLE,
    special: SpecialIds = SpecialIds(),
) -> int:
    """Seeded random token ids, lengths uniform in [max_len/4, budget]."""
    mode = CorpusMode(mode)
    rng = np.random.default_rng(seed)
    budget = token_budget(dims.max_len, mode)
    low = max(1, min(budget, dims.max_len // 4))

    def records():
        for i in range(count):
            n = int(rng.integers(low, budget + 1))
            ids = rng.integers(special.reserved, dims.vocab_size, size=n).tolist()
            if mode == CorpusMode.PAIR:
                cut = int(rng.integers(0, n + 1))
                yield {"id": f"syn-{i}", "tokens_a": ids[:cut], "tokens_b": ids[cut:]}
            else:
                yield {"id": f"syn-{i}", "tokens": ids}

    written = _write_lines(path, records())
    logger.info("Wrote %d synthetic %s records to %s", written, mode.value, path)
    return written


def write_text_corpus(
    text_path: str,
    path: str,
    dims: ModelDims,
    special: SpecialIds = SpecialIds(),
) -> int:
    """One record per non-blank line of a text file, hashed into the vocabulary."""
    with open(text_path, "r", encoding="utf-8") as f:
        lines = [ln for ln in f.read().splitlines() if ln.strip()]
    records = (
        {"id": f"{os.path.basename(text_path)}:{i}",
         "tokens": hash_tokenize(ln, dims.vocab_size, special.reserved)}
        for i, ln in enumerate(lines)
    )
    written = _write_lines(path, records)
    logger.info("Tokenized %d lines of %s into %s", written, text_path, path)
    return written
