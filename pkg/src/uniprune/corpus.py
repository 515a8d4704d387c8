"""Byte-level corpus handling: loading, splitting, windowing, batch sampling.

Tokens are raw byte values (vocabulary 256), which keeps the data path free
of any tokenizer dependency.  The eval split is the trailing fraction of the
token stream, so it never overlaps the training region.
"""
from __future__ import annotations

from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np

Array = np.ndarray

MIN_TOKENS = 2048


@dataclass
class Corpus:
    tokens: Array            # 1-d int64 byte ids
    train_end: int           # tokens[:train_end] train, tokens[train_end:] eval

    @classmethod
    def from_bytes(cls, raw: bytes, eval_fraction: float = 0.1) -> "Corpus":
        if not 0.0 < eval_fraction < 1.0:
            raise ValueError("eval_fraction must be in (0, 1)")
        tokens = np.frombuffer(raw, dtype=np.uint8).astype(np.int64)
        if tokens.size < MIN_TOKENS:
            raise ValueError(f"corpus too small: {tokens.size} < {MIN_TOKENS} tokens")
        train_end = int(round(tokens.size * (1.0 - eval_fraction)))
        return cls(tokens, train_end)

    @classmethod
    def from_file(cls, path: str | Path, eval_fraction: float = 0.1) -> "Corpus":
        return cls.from_bytes(Path(path).read_bytes(), eval_fraction)

    @classmethod
    def bundled(cls, eval_fraction: float = 0.1) -> "Corpus":
        raw = resources.files("uniprune").joinpath("data/corpus.txt").read_bytes()
        return cls.from_bytes(raw, eval_fraction)

    @property
    def train(self) -> Array:
        return self.tokens[:self.train_end]

    @property
    def eval(self) -> Array:
        return self.tokens[self.train_end:]

    def sample_batch(self, rng: np.random.Generator, batch_size: int,
                     seq_len: int) -> tuple[Array, Array]:
        """Random training windows; returns (inputs, next-token targets)."""
        span = seq_len + 1
        if self.train_end < span:
            raise ValueError("train split shorter than one window")
        starts = rng.integers(0, self.train_end - span + 1, size=batch_size)
        rows = self.tokens[starts[:, None] + np.arange(span)]
        return rows[:, :-1], rows[:, 1:]

    def batch_fn(self, batch_size: int, seq_len: int):
        """Sampler in the shape the mask trainer expects."""
        def sample(rng: np.random.Generator) -> tuple[Array, Array]:
            return self.sample_batch(rng, batch_size, seq_len)
        return sample


def eval_windows(split: Array, seq_len: int) -> tuple[Array, Array]:
    """Deterministic non-overlapping windows over a split; drops the tail."""
    span = seq_len + 1
    n = split.size // span
    if n == 0:
        raise ValueError("split shorter than one evaluation window")
    rows = split[:n * span].reshape(n, span)
    return rows[:, :-1], rows[:, 1:]
