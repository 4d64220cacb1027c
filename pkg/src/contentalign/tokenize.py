"""Hash-bucket tokenizer and image patching."""

from __future__ import annotations

import hashlib
import re
from dataclasses import dataclass

import numpy as np

PAD, CLS, UNK = 0, 1, 2
N_RESERVED = 3

TEXT_CONTEXT = 77
CONTENT_CONTEXT = 512

_WORD_RE = re.compile(r"\w+|[^\w\s]+")


def split_words(s: str) -> list[str]:
    """Lowercase, then split into word runs and punctuation runs."""
    return _WORD_RE.findall(s.lower())


def bucket_id(word: str, size: int) -> int:
    """Stable hash bucket in ``[3, size)`` for a single word."""
    digest = hashlib.blake2b(word.encode("utf-8"), digest_size=8).digest()
    return N_RESERVED + int.from_bytes(digest, "little") % (size - N_RESERVED)


@dataclass(frozen=True)
class Vocabulary:
    """Token ids are a pure function of the word and ``size``."""

    size: int = 4096

    def __post_init__(self):
        if self.size < 4:
            raise ValueError(f"vocabulary size must be >= 4, got {self.size}")

    def token_id(self, word: str) -> int:
        return bucket_id(word, self.size)

    def encode(self, s: str, length: int) -> np.ndarray:
        """CLS followed by up to ``length - 1`` word ids, PAD-filled."""
        if length < 1:
            raise ValueError("context length must be >= 1")
        ids = np.full(length, PAD, dtype=np.int64)
        ids[0] = CLS
        words = split_words(s)[: length - 1]
        for k, w in enumerate(words, start=1):
            ids[k] = self.token_id(w)
        return ids

    def collisions(self, words) -> dict[int, list[str]]:
        """Buckets holding more than one distinct word."""
        buckets: dict[int, set[str]] = {}
        for w in words:
            buckets.setdefault(self.token_id(w), set()).add(w)
        return {b: sorted(ws) for b, ws in buckets.items() if len(ws) > 1}


def tokenize_text(s: str, vocab: Vocabulary, length: int = TEXT_CONTEXT) -> np.ndarray:
    return vocab.encode(s, length)


def tokenize_content(s: str, vocab: Vocabulary, length: int = CONTENT_CONTEXT) -> np.ndarray:
    return vocab.encode(s, length)


def tokenize_batch(texts, vocab: Vocabulary, length: int) -> np.ndarray:
    return np.stack([vocab.encode(t, length) for t in texts]) if texts else np.zeros((0, length), np.int64)


def trim_padding(ids: np.ndarray) -> np.ndarray:
    """Drop trailing columns that are PAD in every row.

    Exact under PAD masking: masked positions never influence the CLS output.
    """
    valid = (ids != PAD).any(axis=0)
    last = int(np.nonzero(valid)[0].max()) + 1 if valid.any() else 1
    return ids[:, :last]


def patchify(image: np.ndarray, patch: int) -> np.ndarray:
    """Split an ``H x W x Ch`` image into ``M = HW / P^2`` row-major patch vectors.

    Each patch vector is the row-major flattening of its ``P x P x Ch`` block.
    Works on a leading batch axis as well.
    """
    image = np.asarray(image, dtype=np.float64)
    batched = image.ndim == 4
    if not batched:
        image = image[None]
    if image.ndim != 4:
        raise ValueError(f"expected H x W x Ch image, got shape {image.shape[1:]}")
    b, h, w, ch = image.shape
    if h % patch or w % patch:
        raise ValueError(f"image {h}x{w} not divisible by patch size {patch}")
    gh, gw = h // patch, w // patch
    out = image.reshape(b, gh, patch, gw, patch, ch).transpose(0, 1, 3, 2, 4, 5)
    out = out.reshape(b, gh * gw, patch * patch * ch)
    return out if batched else out[0]


def unpatchify(patches: np.ndarray, height: int, width: int, channels: int, patch: int) -> np.ndarray:
    """Inverse of :func:`patchify` for a single image."""
    gh, gw = height // patch, width // patch
    blocks = np.asarray(patches).reshape(gh, gw, patch, patch, channels)
    return blocks.transpose(0, 2, 1, 3, 4).reshape(height, width, channels)
