"""Text-image and text-caption incongruity extractors.

``cross_modal_mha`` lets text rows attend over visual region rows;
``incongruity_block`` wraps it with an MLP, residual and layer norm and
reads out the [CLS] row.  ``coattention`` builds a bilinear affinity
between text and caption, max-pools it over text positions and uses the
result to weight caption rows.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterator, Optional

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .errors import ConfigError, DimensionError


def glorot(rng: np.random.Generator, fan_in: int, fan_out: int, name: str = "") -> Tensor:
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return Tensor(rng.uniform(-limit, limit, size=(fan_in, fan_out)), requires_grad=True, name=name)


def _vector(value: float, n: int, name: str) -> Tensor:
    return Tensor(np.full(n, value), requires_grad=True, name=name)


@dataclass
class MhaParams:
    wq: list[Tensor]
    wk: list[Tensor]
    wv: list[Tensor]
    wo: Tensor

    @property
    def heads(self) -> int:
        return len(self.wq)

    @classmethod
    def init(cls, d: int, h: int, rng: np.random.Generator) -> "MhaParams":
        if h < 1 or d % h:
            raise ConfigError(f"model width {d} is not divisible by head count {h}")
        dk = d // h
        return cls(
            wq=[glorot(rng, d, dk) for _ in range(h)],
            wk=[glorot(rng, d, dk) for _ in range(h)],
            wv=[glorot(rng, d, dk) for _ in range(h)],
            wo=glorot(rng, d, d),
        )

    def named(self, prefix: str) -> Iterator[tuple[str, Tensor]]:
        for kind in ("wq", "wk", "wv"):
            for i, t in enumerate(getattr(self, kind)):
                yield f"{prefix}.{kind}.{i}", t
        yield f"{prefix}.wo", self.wo


@dataclass
class MlpParams:
    w1: Tensor
    b1: Tensor
    w2: Tensor
    b2: Tensor

    @classmethod
    def init(cls, d: int, d_mlp: int, rng: np.random.Generator) -> "MlpParams":
        if d_mlp < d:
            raise ConfigError(f"MLP hidden width {d_mlp} must be at least the model width {d}")
        return cls(glorot(rng, d, d_mlp), _vector(0.0, d_mlp, ""), glorot(rng, d_mlp, d), _vector(0.0, d, ""))

    def named(self, prefix: str) -> Iterator[tuple[str, Tensor]]:
        yield f"{prefix}.w1", self.w1
        yield f"{prefix}.b1", self.b1
        yield f"{prefix}.w2", self.w2
        yield f"{prefix}.b2", self.b2


@dataclass
class IncongruityBlockParams:
    mha: MhaParams
    mlp: MlpParams
    ln_gain: Tensor
    ln_bias: Tensor

    @classmethod
    def init(cls, d: int, h: int, d_mlp: int, rng: np.random.Generator) -> "IncongruityBlockParams":
        return cls(MhaParams.init(d, h, rng), MlpParams.init(d, d_mlp, rng), _vector(1.0, d, ""), _vector(0.0, d, ""))

    def named(self, prefix: str) -> Iterator[tuple[str, Tensor]]:
        yield from self.mha.named(f"{prefix}.mha")
        yield from self.mlp.named(f"{prefix}.mlp")
        yield f"{prefix}.ln.gain", self.ln_gain
        yield f"{prefix}.ln.bias", self.ln_bias


@dataclass
class CoAttnParams:
    w: Tensor

    @classmethod
    def init(cls, d: int, rng: np.random.Generator) -> "CoAttnParams":
        # layer-normed rows have unit-variance entries; the extra 1/sqrt(d) keeps
        # S W Cᵀ of order one so the tanh does not start saturated
        w = glorot(rng, d, d)
        w.data /= math.sqrt(d)
        return cls(w)

    def named(self, prefix: str) -> Iterator[tuple[str, Tensor]]:
        yield f"{prefix}.w", self.w


def attention_weights(
    queries: Tensor, keys: Tensor, wq: Tensor, wk: Tensor, key_mask: Optional[np.ndarray] = None
) -> Tensor:
    """Row-stochastic T×r weights softmax((Q Wq)(K Wk)ᵀ/√d_k) for one head."""
    dk = wq.shape[1]
    scores = ag.scale(ag.matmul(ag.matmul(queries, wq), ag.transpose(ag.matmul(keys, wk))), 1.0 / math.sqrt(dk))
    mask = None if key_mask is None else np.asarray(key_mask, dtype=bool)[None, :]
    return ag.softmax_rows(scores, mask=mask)


def cross_modal_mha(
    queries: Tensor,
    keys_values: Tensor,
    params: MhaParams,
    key_mask: Optional[np.ndarray] = None,
    return_weights: bool = False,
):
    """Multi-head attention with ``queries`` (T×d) over ``keys_values`` (r×d).

    Each head attends with its own query/key/value maps; the head outputs
    are concatenated and mapped through ``wo``.
    """
    d = queries.shape[1]
    if keys_values.ndim != 2 or keys_values.shape[1] != d:
        raise DimensionError(f"query width {queries.shape} and key width {keys_values.shape} differ")
    if params.wo.shape != (d, d) or d % params.heads:
        raise ConfigError(f"model width {d} is not divisible by head count {params.heads}")
    heads, weights = [], []
    for wq, wk, wv in zip(params.wq, params.wk, params.wv):
        a = attention_weights(queries, keys_values, wq, wk, key_mask)
        heads.append(ag.matmul(a, ag.matmul(keys_values, wv)))
        weights.append(a)
    out = ag.matmul(ag.concat(heads, axis=1), params.wo)
    return (out, weights) if return_weights else out


def mlp(x: Tensor, params: MlpParams, activation: str = "gelu") -> Tensor:
    hidden = ag.elementwise(activation, ag.add_bias(ag.matmul(x, params.w1), params.b1))
    return ag.add_bias(ag.matmul(hidden, params.w2), params.b2)


def incongruity_sequence(
    queries: Tensor,
    keys_values: Tensor,
    params: IncongruityBlockParams,
    key_mask: Optional[np.ndarray] = None,
    dropout: float = 0.0,
    rng: Optional[np.random.Generator] = None,
    training: bool = False,
    activation: str = "gelu",
    eps: float = 1e-6,
) -> Tensor:
    """LNorm(Q + MLP(MHA(Q, K))) over every query row (T×d)."""
    attended = ag.dropout(cross_modal_mha(queries, keys_values, params.mha, key_mask), dropout, rng, training)
    branch = ag.dropout(mlp(attended, params.mlp, activation), dropout, rng, training)
    return ag.layer_norm(ag.add(queries, branch), params.ln_gain, params.ln_bias, eps)


def incongruity_block(
    text: Tensor,
    regions: Tensor,
    params: IncongruityBlockParams,
    dropout: float = 0.0,
    rng: Optional[np.random.Generator] = None,
    training: bool = False,
    activation: str = "gelu",
) -> Tensor:
    """Text-image disparity vector: the [CLS] row of the incongruity sequence."""
    seq = incongruity_sequence(text, regions, params, None, dropout, rng, training, activation)
    return ag.row(seq, 0)


def affinity(text: Tensor, caption: Tensor, params: CoAttnParams) -> Tensor:
    """A = tanh(S W Cᵀ), a T×U matrix in [-1, 1]."""
    if text.ndim != 2 or caption.ndim != 2 or text.shape[1] != caption.shape[1]:
        raise DimensionError(f"text {text.shape} and caption {caption.shape} widths differ")
    return ag.tanh(ag.matmul(ag.matmul(text, params.w), ag.transpose(caption)))


def coattention(text: Tensor, caption: Tensor, params: CoAttnParams) -> Tensor:
    """Text-caption disparity vector v·C with v the column max of the affinity."""
    a = affinity(text, caption, params)
    # the caption attention and the pooled weight vector are the same column max
    v = ag.reduce_max_cols(a)
    return ag.row(ag.matmul(ag.reshape(v, (1, v.shape[0])), caption), 0)
