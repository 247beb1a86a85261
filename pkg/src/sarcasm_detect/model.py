"""Full forward pass, fusion classifier, loss and ablation variants."""

from __future__ import annotations

from dataclasses import asdict, dataclass, fields
from typing import Iterator, Optional, Sequence

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .data_io import Sample, read_tensor_file
from .encoders import EncoderConfig, EncoderParams, Vocab, encode_sequence, load_sequence_features, tokenize
from .errors import ConfigError, DataError
from .incongruity import CoAttnParams, IncongruityBlockParams, coattention, glorot, incongruity_block
from .visual import CoordAttnParams, attend_regions, grid_side, project_regions

PROB_FLOOR = 1e-12

VARIANTS = {
    "full": {},
    "no_visual_attention": {"use_visual_attention": False},
    "no_tau_si": {"use_tau_si": False},
    "no_tau_sc": {"use_tau_sc": False},
}


@dataclass
class ModelConfig:
    d: int = 64
    h: int = 2
    T: int = 64
    U: int = 32
    r: int = 49
    region_width: int = 2048
    d_mlp: Optional[int] = None
    reduction: int = 4
    dropout: float = 0.5
    l2: float = 1e-5
    use_visual_attention: bool = True
    use_tau_si: bool = True
    use_tau_sc: bool = True
    encoder_layers: int = 1
    provider: str = "toy"
    share_embeddings: bool = True
    mlp_activation: str = "gelu"
    attention_activation: str = "relu"

    @property
    def hidden(self) -> int:
        return self.d_mlp or 2 * self.d

    @property
    def fused_width(self) -> int:
        return self.d * (int(self.use_tau_si) + int(self.use_tau_sc))

    @property
    def encoder(self) -> EncoderConfig:
        return EncoderConfig(
            d=self.d,
            T=self.T,
            U=self.U,
            n_layers=self.encoder_layers,
            provider=self.provider,
            heads=self.h,
            d_mlp=self.hidden,
            share_embeddings=self.share_embeddings,
        )

    def validate(self) -> None:
        if not (self.use_tau_si or self.use_tau_sc):
            raise ConfigError("at least one of use_tau_si and use_tau_sc must be enabled")
        if self.h < 1 or self.d % self.h:
            raise ConfigError(f"model width {self.d} is not divisible by head count {self.h}")
        grid_side(self.r)
        if self.use_visual_attention and (self.reduction < 1 or self.d % self.reduction):
            raise ConfigError(f"model width {self.d} not divisible by reduction {self.reduction}")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"dropout must lie in [0, 1), got {self.dropout}")
        if self.l2 < 0:
            raise ConfigError("l2 coefficient must be non-negative")
        if self.hidden < self.d:
            raise ConfigError("d_mlp must be at least d")
        self.encoder.validate()

    def variant(self, name: str) -> "ModelConfig":
        if name not in VARIANTS:
            raise ConfigError(f"unknown variant {name!r}; expected one of {sorted(VARIANTS)}")
        return ModelConfig(**{**asdict(self), **VARIANTS[name]})

    @classmethod
    def from_dict(cls, values: dict) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(values) - known
        if unknown:
            raise ConfigError(f"unknown model settings: {sorted(unknown)}")
        return cls(**values)


@dataclass
class ModelParams:
    text_encoder: Optional[EncoderParams] = None
    caption_encoder: Optional[EncoderParams] = None
    projection: Optional[Tensor] = None
    coord_attn: Optional[CoordAttnParams] = None
    block: Optional[IncongruityBlockParams] = None
    coattn: Optional[CoAttnParams] = None
    classifier_w: Tensor = None
    classifier_b: Tensor = None

    def named(self) -> dict[str, Tensor]:
        """Every trainable tensor by a stable dotted name."""
        out: dict[str, Tensor] = {}

        def put(items: Iterator[tuple[str, Tensor]]) -> None:
            for name, t in items:
                if id(t) not in seen:
                    seen.add(id(t))
                    out[name] = t

        seen: set[int] = set()
        if self.text_encoder is not None:
            put(self.text_encoder.named("text_encoder"))
        if self.caption_encoder is not None:
            put(self.caption_encoder.named("caption_encoder"))
        if self.projection is not None:
            put(iter([("projection", self.projection)]))
        if self.coord_attn is not None:
            put(self.coord_attn.named("coord_attn"))
        if self.block is not None:
            put(self.block.named("incongruity"))
        if self.coattn is not None:
            put(self.coattn.named("coattention"))
        put(iter([("classifier.w", self.classifier_w), ("classifier.b", self.classifier_b)]))
        for name, t in out.items():
            t.name = name
        return out

    def tensors(self) -> list[Tensor]:
        return list(self.named().values())

    def load_values(self, values: dict[str, np.ndarray]) -> None:
        named = self.named()
        if set(values) != set(named):
            missing = sorted(set(named) - set(values))
            extra = sorted(set(values) - set(named))
            raise DataError(f"parameter names differ: missing {missing}, unexpected {extra}")
        for name, t in named.items():
            arr = np.asarray(values[name], dtype=np.float64)
            if arr.shape != t.shape:
                raise DataError(f"parameter {name}: shape {arr.shape} vs expected {t.shape}")
            t.data = arr.copy()


def build_variant(config: ModelConfig, seed: int = 0, vocab_size: int = 3) -> ModelParams:
    """Allocate and initialise exactly the tensors the configured variant uses."""
    config.validate()
    rng = np.random.default_rng(seed)
    params = ModelParams()
    needs_caption = config.use_tau_sc
    if config.provider == "toy":
        params.text_encoder = EncoderParams.init(vocab_size, config.encoder, rng)
        if needs_caption:
            params.caption_encoder = (
                params.text_encoder if config.share_embeddings else EncoderParams.init(vocab_size, config.encoder, rng)
            )
    if config.use_tau_si:
        params.projection = glorot(rng, config.region_width, config.d)
        if config.use_visual_attention:
            params.coord_attn = CoordAttnParams.init(config.d, config.reduction, rng)
        params.block = IncongruityBlockParams.init(config.d, config.h, config.hidden, rng)
    if config.use_tau_sc:
        params.coattn = CoAttnParams.init(config.d, rng)
    params.classifier_w = glorot(rng, 2, config.fused_width)
    params.classifier_b = Tensor(np.zeros(2), requires_grad=True)
    params.named()
    return params


@dataclass
class Prediction:
    probs: Tensor  # length-2 vector
    fused: Tensor
    sample_id: str = ""

    @property
    def p_sarcastic(self) -> float:
        return float(self.probs.data[1])

    @property
    def label(self) -> int:
        p = self.probs.data
        return 1 if p[1] > p[0] else 0


@dataclass
class Encoded:
    """A sample turned into arrays the forward pass consumes."""

    id: str
    label: Optional[int]
    text_ids: Optional[np.ndarray] = None
    text_mask: Optional[np.ndarray] = None
    caption_ids: Optional[np.ndarray] = None
    caption_mask: Optional[np.ndarray] = None
    text_features: Optional[Tensor] = None
    caption_features: Optional[Tensor] = None
    regions: Optional[Tensor] = None


def prepare_sample(sample: Sample, vocab: Vocab, config: ModelConfig) -> Encoded:
    """Tokenise and load every modality the variant requires."""
    enc = Encoded(id=sample.id, label=sample.label)
    if config.provider == "toy":
        ids, mask = tokenize(sample.text, vocab, config.T)
        enc.text_ids, enc.text_mask = np.array(ids), np.array(mask)
    else:
        if not sample.text_features_path:
            raise DataError(f"sample {sample.id}: missing text modality (text_features_path)")
        enc.text_features = load_sequence_features(sample.text_features_path, (config.T, config.d))
    if config.use_tau_sc:
        if config.provider == "toy":
            ids, mask = tokenize(sample.caption, vocab, config.U)
            enc.caption_ids, enc.caption_mask = np.array(ids), np.array(mask)
        else:
            if not sample.caption_features_path:
                raise DataError(f"sample {sample.id}: missing caption modality (caption_features_path)")
            enc.caption_features = load_sequence_features(sample.caption_features_path, (config.U, config.d))
    if config.use_tau_si:
        if not sample.region_features_path:
            raise DataError(f"sample {sample.id}: missing image modality (region_features_path)")
        regions = read_tensor_file(sample.region_features_path)
        if regions.shape != (config.r, config.region_width):
            raise DataError(
                f"sample {sample.id}: region features {regions.shape} do not match ({config.r}, {config.region_width})"
            )
        enc.regions = regions
    return enc


def forward(
    sample: Encoded,
    params: ModelParams,
    config: ModelConfig,
    training: bool = False,
    rng: Optional[np.random.Generator] = None,
) -> Prediction:
    rate = config.dropout if training else 0.0
    enc_cfg = config.encoder

    def encode(ids, mask, feats, encoder, modality):
        if feats is not None:
            return feats
        if ids is None or encoder is None:
            raise DataError(f"sample {sample.id}: missing {modality} modality")
        return encode_sequence(ids, encoder, enc_cfg, mask=mask, dropout=rate, rng=rng, training=training)

    text = encode(sample.text_ids, sample.text_mask, sample.text_features, params.text_encoder, "text")
    parts = []
    if config.use_tau_si:
        if sample.regions is None:
            raise DataError(f"sample {sample.id}: missing image modality")
        projected = project_regions(sample.regions, params.projection)
        attended = attend_regions(
            projected, params.coord_attn if config.use_visual_attention else None, config.attention_activation
        )
        parts.append(
            incongruity_block(text, attended, params.block, rate, rng, training, config.mlp_activation)
        )
    if config.use_tau_sc:
        caption = encode(
            sample.caption_ids, sample.caption_mask, sample.caption_features, params.caption_encoder, "caption"
        )
        parts.append(coattention(text, caption, params.coattn))
    fused = parts[0] if len(parts) == 1 else ag.concat(parts, axis=0)
    logits = ag.add(ag.matmul(params.classifier_w, ag.reshape(fused, (fused.shape[0], 1))), _column(params.classifier_b))
    probs = ag.reshape(ag.softmax_rows(ag.reshape(logits, (1, 2))), (2,))
    return Prediction(probs=probs, fused=fused, sample_id=sample.id)


def _column(b: Tensor) -> Tensor:
    return ag.reshape(b, (b.shape[0], 1))


def l2_penalty(params: Sequence[Tensor]) -> Tensor:
    return ag.total(ag.stack([ag.sum_squares(p) for p in params]))


def loss(predictions: Sequence[Prediction], labels: Sequence[int], params: Sequence[Tensor], l2: float) -> Tensor:
    """Mean binary cross-entropy on p(sarcastic) plus ``l2`` times the squared parameter norm."""
    if not predictions:
        raise DataError("loss over an empty batch")
    if len(predictions) != len(labels):
        raise DataError("prediction and label counts differ")
    terms = []
    for pred, y in zip(predictions, labels):
        if y not in (0, 1):
            raise DataError(f"label must be 0 or 1, got {y!r}")
        p = ag.clamp(ag.take(pred.probs, [int(y)]), PROB_FLOOR, 1.0 - PROB_FLOOR)
        terms.append(ag.log(p))
    bce = ag.scale(ag.mean(ag.concat(terms, axis=0)), -1.0)
    if l2 == 0.0 or not params:
        return bce
    return ag.add(bce, ag.scale(l2_penalty(params), l2))


def predict_all(
    encoded: Sequence[Encoded], params: ModelParams, config: ModelConfig
) -> list[Prediction]:
    return [forward(e, params, config, training=False) for e in encoded]


__all__ = [
    "Encoded",
    "ModelConfig",
    "ModelParams",
    "Prediction",
    "VARIANTS",
    "build_variant",
    "forward",
    "l2_penalty",
    "loss",
    "predict_all",
    "prepare_sample",
]
