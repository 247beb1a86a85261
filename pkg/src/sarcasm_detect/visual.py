"""Region projection and coordinate attention over the region grid."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterator

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .errors import ConfigError, DimensionError
from .incongruity import glorot


def grid_side(r: int) -> int:
    side = math.isqrt(r)
    if r < 1 or side * side != r:
        raise ConfigError(f"region count {r} is not a perfect square")
    return side


def project_regions(regions: Tensor, projection: Tensor) -> Tensor:
    """Map r×raw region features to r×d with a trainable raw×d matrix."""
    if regions.ndim != 2 or projection.ndim != 2 or regions.shape[1] != projection.shape[0]:
        raise DimensionError(f"region width {regions.shape} does not match projection {projection.shape}")
    return ag.matmul(regions, projection)


@dataclass
class CoordAttnParams:
    squeeze: Tensor  # (C/reduction)×C
    expand_h: Tensor  # C×(C/reduction)
    expand_w: Tensor  # C×(C/reduction)
    reduction: int

    @classmethod
    def init(cls, channels: int, reduction: int, rng: np.random.Generator) -> "CoordAttnParams":
        if reduction < 1 or channels % reduction:
            raise ConfigError(f"channels {channels} not divisible by reduction {reduction}")
        mid = channels // reduction
        # stored as (out × in) so a 1×1 conv is a left matmul on a C×L map
        return cls(
            squeeze=glorot(rng, mid, channels),
            expand_h=glorot(rng, channels, mid),
            expand_w=glorot(rng, channels, mid),
            reduction=reduction,
        )

    def named(self, prefix: str) -> Iterator[tuple[str, Tensor]]:
        yield f"{prefix}.squeeze", self.squeeze
        yield f"{prefix}.expand_h", self.expand_h
        yield f"{prefix}.expand_w", self.expand_w


def regions_to_grid(x: Tensor) -> Tensor:
    """r×d region rows (row-major over the grid) to a d×H×W map."""
    side = grid_side(x.shape[0])
    return ag.reshape(ag.transpose(x), (x.shape[1], side, side))


def grid_to_regions(x: Tensor) -> Tensor:
    c, h, w = x.shape
    return ag.transpose(ag.reshape(x, (c, h * w)))


def attention_maps(x: Tensor, params: CoordAttnParams, activation: str = "relu") -> tuple[Tensor, Tensor]:
    """Per-axis gates (C×H×1, C×1×W) in (0, 1)."""
    if x.ndim != 3:
        raise DimensionError(f"coordinate attention needs a C×H×W tensor, got {x.shape}")
    c, h, w = x.shape
    if params.squeeze.shape[1] != c:
        raise DimensionError(f"squeeze map {params.squeeze.shape} does not fit {c} channels")
    pooled_h = ag.reshape(ag.avg_pool_axis(x, "W"), (c, h))
    pooled_w = ag.reshape(ag.avg_pool_axis(x, "H"), (c, w))
    joint = ag.elementwise(activation, ag.matmul(params.squeeze, ag.concat([pooled_h, pooled_w], axis=1)))
    f_h, f_w = ag.split(joint, [h, w], axis=1)
    g_h = ag.sigmoid(ag.matmul(params.expand_h, f_h))
    g_w = ag.sigmoid(ag.matmul(params.expand_w, f_w))
    return ag.reshape(g_h, (c, h, 1)), ag.reshape(g_w, (c, 1, w))


def coordinate_attention(x: Tensor, params: CoordAttnParams, activation: str = "relu") -> Tensor:
    """Reweight a C×H×W map by height and width gates built from axis-pooled features."""
    g_h, g_w = attention_maps(x, params, activation)
    return ag.gate(x, g_h, g_w)


def bypass_attention(x: Tensor) -> Tensor:
    return x


def attend_regions(projected: Tensor, params: CoordAttnParams | None, activation: str = "relu") -> Tensor:
    """Apply coordinate attention to r×d projected regions, or pass them through."""
    if params is None:
        return bypass_attention(projected)
    return grid_to_regions(coordinate_attention(regions_to_grid(projected), params, activation))
