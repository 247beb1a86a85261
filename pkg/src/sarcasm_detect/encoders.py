"""Sequence encoders producing T×d text and U×d caption feature matrices.

Two providers share one contract (row 0 is the [CLS] position):

* ``toy`` - a small trainable encoder: embedding lookup, sinusoidal
  positions and self-attention blocks with [PAD] keys masked out.
* ``file`` - precomputed matrices read from FT01 tensor files.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Optional, Sequence

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .errors import ConfigError, DataError
from .incongruity import IncongruityBlockParams, glorot, incongruity_sequence

PAD, CLS, UNK = 0, 1, 2
RESERVED = ("[PAD]", "[CLS]", "[UNK]")

_TOKEN_RE = re.compile(r"\w+|[^\w\s]", re.UNICODE)


def split_words(text: str) -> list[str]:
    """Lowercased words and single punctuation marks."""
    return _TOKEN_RE.findall(text.lower())


class Vocab:
    """Token to id map with ids 0-2 reserved for [PAD], [CLS], [UNK]."""

    def __init__(self, tokens: Iterable[str] = ()):
        self.itos: list[str] = list(RESERVED)
        self.stoi: dict[str, int] = {t: i for i, t in enumerate(RESERVED)}
        for t in tokens:
            self.add(t)

    def add(self, token: str) -> int:
        if token not in self.stoi:
            self.stoi[token] = len(self.itos)
            self.itos.append(token)
        return self.stoi[token]

    def __len__(self) -> int:
        return len(self.itos)

    def __contains__(self, token: str) -> bool:
        return token in self.stoi

    def __eq__(self, other: object) -> bool:
        return isinstance(other, Vocab) and self.itos == other.itos

    def id(self, token: str) -> int:
        return self.stoi.get(token, UNK)

    @classmethod
    def build(cls, texts: Iterable[str]) -> "Vocab":
        vocab = cls()
        for text in texts:
            for tok in split_words(text):
                vocab.add(tok)
        return vocab

    def content_tokens(self) -> list[str]:
        return self.itos[len(RESERVED):]

    def save(self, path) -> None:
        """One token per line; line ``k`` (0-based) holds id ``k + 3``."""
        Path(path).write_text("".join(t + "\n" for t in self.content_tokens()), encoding="utf-8")

    @classmethod
    def load(cls, path) -> "Vocab":
        lines = Path(path).read_text(encoding="utf-8").split("\n")
        if lines and lines[-1] == "":
            lines.pop()
        vocab = cls()
        for n, tok in enumerate(lines, start=1):
            if not tok or tok in vocab:
                raise DataError(f"{path}:{n}: empty or duplicate vocabulary entry {tok!r}")
            vocab.add(tok)
        return vocab


@dataclass
class EncoderConfig:
    d: int = 64
    T: int = 64
    U: int = 32
    n_layers: int = 1
    provider: str = "toy"
    heads: int = 2
    d_mlp: Optional[int] = None
    share_embeddings: bool = True

    def validate(self) -> None:
        if self.provider not in ("toy", "file"):
            raise ConfigError(f"unknown encoder provider {self.provider!r}")
        if self.T < 2 or self.U < 2:
            raise ConfigError(f"sequence lengths must be at least 2, got T={self.T}, U={self.U}")
        if self.heads < 1 or self.d % self.heads:
            raise ConfigError(f"model width {self.d} is not divisible by head count {self.heads}")
        if self.n_layers < 0:
            raise ConfigError("n_layers must be non-negative")


def tokenize(text: str, vocab: Vocab, max_len: int) -> tuple[list[int], list[bool]]:
    """[CLS] + word ids truncated to ``max_len - 1`` and right-padded.

    Returns the id sequence and a parallel mask marking real tokens.
    """
    if max_len < 2:
        raise ConfigError(f"max_len must be at least 2, got {max_len}")
    ids = [CLS] + [vocab.id(t) for t in split_words(text)][: max_len - 1]
    mask = [True] * len(ids) + [False] * (max_len - len(ids))
    return ids + [PAD] * (max_len - len(ids)), mask


def sinusoidal_positions(n: int, d: int) -> np.ndarray:
    pos = np.arange(n)[:, None]
    i = np.arange(d)[None, :]
    angle = pos / np.power(10000.0, (2 * (i // 2)) / d)
    return np.where(i % 2 == 0, np.sin(angle), np.cos(angle))


@dataclass
class EncoderParams:
    embedding: Tensor
    layers: list[IncongruityBlockParams] = field(default_factory=list)

    @classmethod
    def init(cls, vocab_size: int, config: EncoderConfig, rng: np.random.Generator) -> "EncoderParams":
        d_mlp = config.d_mlp or 2 * config.d
        return cls(
            embedding=glorot(rng, vocab_size, config.d),
            layers=[IncongruityBlockParams.init(config.d, config.heads, d_mlp, rng) for _ in range(config.n_layers)],
        )

    def named(self, prefix: str) -> Iterator[tuple[str, Tensor]]:
        yield f"{prefix}.embedding", self.embedding
        for i, layer in enumerate(self.layers):
            yield from layer.named(f"{prefix}.layer{i}")


def encode_sequence(
    ids: Sequence[int],
    params: EncoderParams,
    config: EncoderConfig,
    mask: Optional[Sequence[bool]] = None,
    dropout: float = 0.0,
    rng: Optional[np.random.Generator] = None,
    training: bool = False,
) -> Tensor:
    """Toy-provider encoding of one id sequence to an n×d matrix."""
    if config.provider != "toy":
        raise ConfigError("encode_sequence needs the toy provider")
    ids = np.asarray(ids, dtype=np.int64)
    vocab_size = params.embedding.shape[0]
    if ids.size and (ids.min() < 0 or ids.max() >= vocab_size):
        raise DataError(f"token id out of range for a vocabulary of {vocab_size}")
    if mask is None:
        mask = ids != PAD
        mask[0] = True
    key_mask = np.asarray(mask, dtype=bool)
    x = ag.embedding(params.embedding, ids)
    x = ag.add(x, Tensor(sinusoidal_positions(len(ids), config.d)))
    for layer in params.layers:
        x = incongruity_sequence(x, x, layer, key_mask=key_mask, dropout=dropout, rng=rng, training=training)
    return x


def load_sequence_features(path, expected: tuple[int, int]) -> Tensor:
    """Read a precomputed T×d matrix; never trainable."""
    from .data_io import read_tensor_file

    t = read_tensor_file(path)
    if t.shape != tuple(expected):
        raise DataError(f"{path}: feature shape {t.shape} does not match expected {tuple(expected)}")
    t.requires_grad = False
    return t


__all__ = [
    "CLS",
    "PAD",
    "UNK",
    "EncoderConfig",
    "EncoderParams",
    "Vocab",
    "encode_sequence",
    "load_sequence_features",
    "sinusoidal_positions",
    "split_words",
    "tokenize",
]
