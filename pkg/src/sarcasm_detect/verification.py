"""Finite-difference checks for every differentiable building block and the full loss."""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .encoders import EncoderConfig, EncoderParams, encode_sequence
from .errors import ConfigError
from .gradcheck import GradCheckReport, check_with_resampling
from .incongruity import CoAttnParams, IncongruityBlockParams, coattention, incongruity_block
from .model import VARIANTS, Encoded, ModelConfig, build_variant, forward, loss
from .visual import CoordAttnParams, coordinate_attention

# small full-model instance used for the loss check
GRADCHECK_MODEL = dict(d=8, h=2, T=4, U=3, r=4, region_width=6, reduction=2, dropout=0.0, l2=1e-3)


def _param(rng: np.random.Generator, *shape: int, name: str = "") -> Tensor:
    return Tensor(rng.normal(size=shape), requires_grad=True, name=name)


def _weighted_sum(out: Tensor, weights: np.ndarray) -> Tensor:
    # a random projection gives every output entry a distinct, O(1) sensitivity
    return ag.total(ag.mul(out, Tensor(weights)))


def _op_case(rng, shapes, op):
    xs = [_param(rng, *s, name=f"x{i}") for i, s in enumerate(shapes)]
    probe = op(*xs)
    w = rng.normal(size=probe.shape)
    return (lambda: _weighted_sum(op(*xs), w)), xs, [x.name for x in xs]


OP_CASES: dict[str, Callable] = {
    "matmul": lambda rng: _op_case(rng, [(3, 4), (4, 2)], ag.matmul),
    "softmax_rows": lambda rng: _op_case(rng, [(3, 5)], ag.softmax_rows),
    "tanh": lambda rng: _op_case(rng, [(3, 4)], ag.tanh),
    "sigmoid": lambda rng: _op_case(rng, [(3, 4)], ag.sigmoid),
    "relu": lambda rng: _op_case(rng, [(3, 4)], ag.relu),
    "gelu": lambda rng: _op_case(rng, [(3, 4)], ag.gelu),
    "layer_norm": lambda rng: _op_case(rng, [(3, 5), (5,), (5,)], ag.layer_norm),
    "reduce_max_cols": lambda rng: _op_case(rng, [(5, 4)], ag.reduce_max_cols),
    "avg_pool_axis": lambda rng: _op_case(
        rng, [(2, 3, 4)], lambda x: ag.concat([ag.reshape(ag.avg_pool_axis(x, "H"), (2, 4)),
                                              ag.reshape(ag.avg_pool_axis(x, "W"), (2, 3))], axis=1)
    ),
    "concat": lambda rng: _op_case(rng, [(2, 3), (2, 2)], lambda a, b: ag.concat([a, b], axis=1)),
}


def _coordinate_attention_case(rng):
    x = _param(rng, 4, 3, 3, name="x")
    params = CoordAttnParams.init(4, 2, rng)
    for t in (params.squeeze, params.expand_h, params.expand_w):
        t.data = rng.normal(size=t.shape)
    w = rng.normal(size=x.shape)
    tensors = [x, params.squeeze, params.expand_h, params.expand_w]
    return (lambda: _weighted_sum(coordinate_attention(x, params), w)), tensors, ["x", "squeeze", "expand_h", "expand_w"]


def _named_case(named: dict[str, Tensor], extra: dict[str, Tensor], fn, w):
    all_named = {**extra, **named}
    return (lambda: _weighted_sum(fn(), w)), list(all_named.values()), list(all_named)


def _incongruity_case(rng):
    s, i = _param(rng, 3, 8), _param(rng, 4, 8)
    params = IncongruityBlockParams.init(8, 2, 16, rng)
    params.ln_gain.data = rng.normal(size=8)
    params.ln_bias.data = rng.normal(size=8)
    params.mlp.b1.data = rng.normal(size=16) * 0.1
    return _named_case(
        dict(params.named("block")), {"S": s, "I": i}, lambda: incongruity_block(s, i, params), rng.normal(size=8)
    )


def _coattention_case(rng):
    s, c = _param(rng, 4, 6), _param(rng, 3, 6)
    params = CoAttnParams(Tensor(rng.normal(size=(6, 6)) * 0.4, requires_grad=True))
    return _named_case({"W": params.w}, {"S": s, "C": c}, lambda: coattention(s, c, params), rng.normal(size=6))


def _encoder_case(rng):
    cfg = EncoderConfig(d=8, T=5, U=3, n_layers=1, heads=2)
    params = EncoderParams.init(10, cfg, rng)
    ids = [1, 4, 7, 5, 0]
    w = rng.normal(size=(5, 8))
    return _named_case(dict(params.named("encoder")), {}, lambda: encode_sequence(ids, params, cfg), w)


def random_batch(config: ModelConfig, rng: np.random.Generator, size: int = 4, vocab_size: int = 12) -> list[Encoded]:
    """Random encoded samples with distinct tokens (no exact ties in column maxima)."""
    batch = []
    for k in range(size):
        content = rng.choice(np.arange(3, vocab_size), size=config.T - 1 + config.U - 1, replace=False)
        text = np.concatenate([[1], content[: config.T - 2], [0]])
        caption = np.concatenate([[1], content[config.T - 1 :][: config.U - 2], [0]])
        batch.append(
            Encoded(
                id=f"g{k}",
                label=k % 2,
                text_ids=text,
                text_mask=np.arange(config.T) < config.T - 1,
                caption_ids=caption,
                caption_mask=np.arange(config.U) < config.U - 1,
                regions=Tensor(rng.normal(size=(config.r, config.region_width))),
            )
        )
    return batch


def model_case(variant: str = "full", **overrides):
    def build(rng):
        cfg = ModelConfig(**{**GRADCHECK_MODEL, **overrides}).variant(variant)
        params = build_variant(cfg, seed=int(rng.integers(1 << 31)), vocab_size=12)
        named = params.named()
        for name, t in named.items():
            if name.endswith(("b1", "b2", "classifier.b", "ln.bias")):
                t.data = rng.normal(size=t.shape) * 0.1
        batch = random_batch(cfg, rng, vocab_size=12)
        tensors = list(named.values())

        def f():
            preds = [forward(e, params, cfg, training=False) for e in batch]
            return loss(preds, [e.label for e in batch], tensors, cfg.l2)

        return f, tensors, list(named)

    return build


MODULE_CASES: dict[str, Callable] = {
    **{f"op:{k}": v for k, v in OP_CASES.items()},
    "encoder": _encoder_case,
    "coordinate_attention": _coordinate_attention_case,
    "incongruity_block": _incongruity_case,
    "coattention": _coattention_case,
    **{f"model:{v}": model_case(v) for v in VARIANTS},
}


# the ablation variants are opt-in; the full model exercises every branch
DEFAULT_CASES = [name for name in MODULE_CASES if not name.startswith("model:") or name == "model:full"]


@dataclass
class SuiteResult:
    name: str
    report: GradCheckReport
    seconds: float


def run_suite(
    seed: int = 0,
    h: float = 1e-5,
    tol: float = 1e-4,
    max_entries: Optional[int] = None,
    only: Optional[list[str]] = None,
) -> list[SuiteResult]:
    """Check each selected case; ``only=None`` runs :data:`DEFAULT_CASES`."""
    selected = DEFAULT_CASES if only is None else only
    unknown = set(selected) - set(MODULE_CASES)
    if unknown:
        raise ConfigError(f"unknown gradient-check cases: {sorted(unknown)}")
    results = []
    for k, (name, build) in enumerate(MODULE_CASES.items()):
        if name not in selected:
            continue
        start = time.perf_counter()
        report = check_with_resampling(build, seed=seed * 1000 + k, h=h, tol=tol, max_entries=max_entries)
        results.append(SuiteResult(name, report, time.perf_counter() - start))
    return results
