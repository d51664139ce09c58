# utils.py
from typing import Iterable, List
import hashlib


def hash_tokenize(text: str, vocab_size: int, reserved: int = 3) -> List[int]:
    """
    Whitespace split, each piece hashed into [reserved, vocab_size).
    Stable across runs and platforms; language-agnostic by construction.
    Meant for smoke tests only.
    """
    span = vocab_size - reserved
    if span <= 0:
        raise ValueError(f"vocab_size {vocab_size} leaves no ids above {reserved} reserved")
    out: List[int] = []
    for piece in text.split():
        digest = hashlib.blake2b(piece.encode("utf-8"), digest_size=8).digest()
        out.append(reserved + int.from_bytes(digest, "little") % span)
    return out


def format_flops(count: int) -> str:
    """3,222,798,336 -> '3.223 GFLOPs'"""
    for unit, scale in (("TFLOPs", 10**12), ("GFLOPs", 10**9), ("MFLOPs", 10**6)):
        if abs(count) >= scale:
            return f"{count / scale:.3f} {unit}"
    return f"{count} FLOPs"


def mean_or_zero(values: Iterable[float]) -> float:
    vals = list(values)
    return sum(vals) / len(vals) if vals else 0.0
