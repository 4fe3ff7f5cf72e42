"""Text encoders producing per-token features for the condition transformer.

The default :class:`HashedTextEncoder` is a deterministic stand-in for a
pretrained encoder: lowercase whitespace tokens are hashed into a fixed
Gaussian codebook. :class:`SidecarTextEncoder` serves precomputed token
features (e.g. from CLIP) stored in an ``.npz`` file keyed by triplet id.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path
from typing import Optional, Protocol

import numpy as np

from .errors import ConfigurationError, ConsistencyError, InputError
from .motion import EditTriplet

CODEBOOK_SIZE = 4096


@dataclass(frozen=True, eq=False)
class TextFeatures:
    """Token embeddings padded to ``max_tokens`` rows.

    ``padding_mask[i]`` is True for padding rows. ``pooled`` is the mean of the
    non-padding rows.
    """

    tokens: np.ndarray
    padding_mask: np.ndarray
    pooled: np.ndarray
    token_count: int

    @property
    def embed_dim(self) -> int:
        return self.tokens.shape[1]

    @classmethod
    def from_tokens(cls, rows: np.ndarray, max_tokens: Optional[int] = None) -> "TextFeatures":
        rows = np.asarray(rows, dtype=np.float32)
        if rows.ndim != 2 or rows.shape[0] < 1:
            raise InputError("need at least one token row")
        max_tokens = rows.shape[0] if max_tokens is None else max_tokens
        rows = rows[:max_tokens]
        n = rows.shape[0]
        tokens = np.zeros((max_tokens, rows.shape[1]), dtype=np.float32)
        tokens[:n] = rows
        mask = np.arange(max_tokens) >= n
        pooled = rows.mean(axis=0, dtype=np.float64).astype(np.float32)
        for a in (tokens, mask, pooled):
            a.setflags(write=False)
        return cls(tokens, mask, pooled, n)


class TextEncoder(Protocol):
    embed_dim: int
    max_tokens: int

    def features(self, triplet: EditTriplet) -> TextFeatures: ...

    def encode(self, instruction: str) -> TextFeatures: ...


def tokenize(instruction: str) -> list[str]:
    return instruction.lower().split()


def _token_index(token: str) -> int:
    digest = hashlib.blake2b(token.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little") % CODEBOOK_SIZE


@lru_cache(maxsize=8)
def _codebook(embed_dim: int, seed: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    # The extra final row is the null token used for empty instructions.
    book = (rng.standard_normal((CODEBOOK_SIZE + 1, embed_dim)) / np.sqrt(embed_dim)).astype(np.float32)
    book.setflags(write=False)
    return book


class HashedTextEncoder:
    def __init__(self, embed_dim: int = 64, max_tokens: int = 16, seed: int = 0):
        if embed_dim < 1 or max_tokens < 1:
            raise InputError("embed_dim and max_tokens must be positive")
        self.embed_dim = embed_dim
        self.max_tokens = max_tokens
        self.seed = seed

    def encode(self, instruction: str) -> TextFeatures:
        book = _codebook(self.embed_dim, self.seed)
        toks = tokenize(instruction)[: self.max_tokens]
        if toks:
            rows = book[[_token_index(t) for t in toks]]
        else:
            rows = book[CODEBOOK_SIZE:]
        return TextFeatures.from_tokens(rows, self.max_tokens)

    def features(self, triplet: EditTriplet) -> TextFeatures:
        return self.encode(triplet.instruction)


class SidecarTextEncoder:
    """Precomputed token features, one ``(L, E)`` array per triplet id."""

    def __init__(self, path, max_tokens: int = 16):
        with np.load(Path(path)) as data:
            self._table = {k: np.asarray(data[k], dtype=np.float32) for k in data.files}
        if not self._table:
            raise ConfigurationError(f"sidecar file {path} holds no features")
        dims = {v.shape[-1] for v in self._table.values()}
        if len(dims) != 1:
            raise ConfigurationError(f"sidecar features have inconsistent widths {sorted(dims)}")
        self.embed_dim = dims.pop()
        self.max_tokens = max_tokens

    def lookup(self, triplet_id: str) -> TextFeatures:
        if triplet_id not in self._table:
            raise ConsistencyError(f"no precomputed text features for id {triplet_id!r}")
        rows = self._table[triplet_id]
        if rows.ndim == 1:
            rows = rows[None, :]
        return TextFeatures.from_tokens(rows, self.max_tokens)

    def features(self, triplet: EditTriplet) -> TextFeatures:
        return self.lookup(triplet.id)

    def encode(self, instruction: str) -> TextFeatures:
        raise ConfigurationError("sidecar encoder is keyed by triplet id, not by text")


def make_encoder(kind: str = "stub", embed_dim: int = 64, max_tokens: int = 16,
                 seed: int = 0, sidecar: Optional[str] = None) -> TextEncoder:
    if kind == "stub":
        return HashedTextEncoder(embed_dim, max_tokens, seed)
    if kind == "external":
        if sidecar is None:
            raise ConfigurationError("external text encoder needs a sidecar path")
        return SidecarTextEncoder(sidecar, max_tokens)
    raise ConfigurationError(f"unknown text encoder {kind!r}; expected 'stub' or 'external'")


def encode(instruction: str, embed_dim: int = 64, max_tokens: int = 16, seed: int = 0) -> TextFeatures:
    """Encode one instruction with the default hashed encoder."""
    return HashedTextEncoder(embed_dim, max_tokens, seed).encode(instruction)
