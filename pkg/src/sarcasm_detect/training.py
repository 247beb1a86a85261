"""Adam with linear warmup/decay, early stopping and checkpoints."""

from __future__ import annotations

import csv
import io
import json
import logging
import math
import struct
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .autograd import Tensor, backward, zero_grad
from .data_io import MetricsReport, compute_metrics
from .encoders import Vocab
from .errors import CheckpointError, ConfigError, NonFiniteError, TrainingError
from .model import Encoded, ModelConfig, ModelParams, build_variant, forward, loss

log = logging.getLogger(__name__)

HISTORY_HEADER = ("epoch", "train_loss", "dev_loss", "dev_acc", "dev_f1", "lr")


@dataclass
class TrainConfig:
    lr: float = 5e-5
    batch_size: int = 32
    warmup: float = 0.1
    epochs: int = 15
    patience: int = 5
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    decay: bool = True
    max_grad_norm: Optional[float] = None

    def validate(self) -> None:
        if not 0.0 <= self.warmup < 1.0:
            raise ConfigError(f"warmup fraction must lie in [0, 1), got {self.warmup}")
        if self.patience < 1:
            raise ConfigError("patience must be at least 1")
        if self.batch_size < 1:
            raise ConfigError("batch size must be at least 1")
        if self.epochs < 1:
            raise ConfigError("epochs must be at least 1")
        if self.lr < 0:
            raise ConfigError("learning rate must be non-negative")

    @classmethod
    def from_dict(cls, values: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(values) - known
        if unknown:
            raise ConfigError(f"unknown training settings: {sorted(unknown)}")
        return cls(**values)


@dataclass
class OptimizerState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    t: int = 0

    @classmethod
    def for_params(cls, named: dict[str, Tensor]) -> "OptimizerState":
        return cls(
            m={k: np.zeros_like(p.data) for k, p in named.items()},
            v={k: np.zeros_like(p.data) for k, p in named.items()},
        )


def adam_step(
    named: dict[str, Tensor],
    state: OptimizerState,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> None:
    """One bias-corrected Adam update using each tensor's ``.grad``."""
    for name, p in named.items():
        if p.grad is None or not np.all(np.isfinite(p.grad)):
            raise TrainingError(f"missing or non-finite gradient for parameter {name}")
    state.t += 1
    c1 = 1.0 - beta1**state.t
    c2 = 1.0 - beta2**state.t
    for name, p in named.items():
        g = p.grad
        m = state.m.setdefault(name, np.zeros_like(p.data))
        v = state.v.setdefault(name, np.zeros_like(p.data))
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        p.data = p.data - lr * (m / c1) / (np.sqrt(v / c2) + eps)
        if not np.all(np.isfinite(p.data)):
            raise NonFiniteError(f"parameter {name} became non-finite")


def warmup_steps(total: int, warmup: float) -> int:
    return math.ceil(warmup * total)


def lr_schedule(step: int, total: int, warmup: float, peak: float, decay: bool = True) -> float:
    """Linear ramp to ``peak`` over the first ceil(warmup·total) steps, then linear decay to 0."""
    if total <= 0:
        raise ConfigError("total step count must be positive")
    w = warmup_steps(total, warmup)
    if step <= w:
        # ratio first so that half-way points give exactly peak/2
        return peak * (step / w) if w else peak
    if not decay:
        return peak
    return peak * ((total - step) / (total - w))


def clip_gradients(tensors: Sequence[Tensor], max_norm: float) -> float:
    norm = math.sqrt(sum(float(np.sum(t.grad * t.grad)) for t in tensors))
    if norm > max_norm:
        for t in tensors:
            t.grad *= max_norm / norm
    return norm


@dataclass
class Evaluation:
    loss: float
    metrics: MetricsReport
    labels: list[int]
    p_sarcastic: list[float]


def evaluate(data: Sequence[Encoded], params: ModelParams, config: ModelConfig) -> Evaluation:
    """Dropout-free predictions, loss and metrics over labelled samples."""
    preds = [forward(e, params, config, training=False) for e in data]
    gold = [e.label for e in data]
    value = loss(preds, gold, params.tensors(), config.l2).item() if preds else float("nan")
    labels = [p.label for p in preds]
    metrics = compute_metrics(labels, gold) if preds else MetricsReport(0, 0, 0, 0, 0.0, 0.0, 0.0, 0.0)
    return Evaluation(value, metrics, labels, [p.p_sarcastic for p in preds])


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    dev_loss: float
    dev_acc: float
    dev_f1: float
    lr: float


@dataclass
class TrainResult:
    params: ModelParams
    state: OptimizerState
    history: list[EpochRecord]
    best_epoch: int
    stopped_early: bool


def history_csv(history: Sequence[EpochRecord]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(HISTORY_HEADER)
    for rec in history:
        writer.writerow([rec.epoch] + [repr(float(getattr(rec, k))) for k in HISTORY_HEADER[1:]])
    return buf.getvalue()


def _snapshot(params: ModelParams) -> dict[str, np.ndarray]:
    return {k: t.data.copy() for k, t in params.named().items()}


def train_loop(
    train: Sequence[Encoded],
    dev: Sequence[Encoded],
    model_config: ModelConfig,
    train_config: TrainConfig,
    vocab_size: int = 3,
    params: Optional[ModelParams] = None,
) -> TrainResult:
    """Minibatch Adam training keeping the best dev-accuracy parameters."""
    if not train:
        raise TrainingError("empty training set")
    train_config.validate()
    model_config.validate()
    if params is None:
        params = build_variant(model_config, seed=train_config.seed, vocab_size=vocab_size)
    named = params.named()
    tensors = list(named.values())
    state = OptimizerState.for_params(named)
    rng = np.random.default_rng(train_config.seed)
    n_batches = math.ceil(len(train) / train_config.batch_size)
    total = n_batches * train_config.epochs

    history: list[EpochRecord] = []
    best: Optional[tuple[float, float]] = None
    best_values = _snapshot(params)
    best_state = (dict(), dict(), 0)
    best_epoch = 0
    stale = 0
    stopped = False
    lr = 0.0
    for epoch in range(1, train_config.epochs + 1):
        order = rng.permutation(len(train))
        batch_losses = []
        for b in range(n_batches):
            batch = [train[i] for i in order[b * train_config.batch_size : (b + 1) * train_config.batch_size]]
            zero_grad(tensors)
            preds = [forward(e, params, model_config, training=True, rng=rng) for e in batch]
            value = loss(preds, [e.label for e in batch], tensors, model_config.l2)
            if not math.isfinite(value.item()):
                raise TrainingError(f"non-finite loss on batch {[e.id for e in batch]}")
            backward(value)
            if train_config.max_grad_norm is not None:
                clip_gradients(tensors, train_config.max_grad_norm)
            lr = lr_schedule(state.t + 1, total, train_config.warmup, train_config.lr, train_config.decay)
            adam_step(named, state, lr, train_config.beta1, train_config.beta2, train_config.eps)
            batch_losses.append(value.item())

        train_loss = float(np.mean(batch_losses))
        if dev:
            ev = evaluate(dev, params, model_config)
            rec = EpochRecord(epoch, train_loss, ev.loss, ev.metrics.accuracy, ev.metrics.f1, lr)
        else:
            rec = EpochRecord(epoch, train_loss, float("nan"), float("nan"), float("nan"), lr)
        history.append(rec)
        log.info("epoch %d train_loss %.6f dev_loss %.6f dev_acc %.4f", epoch, train_loss, rec.dev_loss, rec.dev_acc)

        if not dev:
            best_values, best_epoch = _snapshot(params), epoch
            best_state = ({k: v.copy() for k, v in state.m.items()}, {k: v.copy() for k, v in state.v.items()}, state.t)
            continue
        key = (rec.dev_acc, -rec.dev_loss)
        if best is None or key > best:
            best, best_epoch, stale = key, epoch, 0
            best_values = _snapshot(params)
            best_state = ({k: v.copy() for k, v in state.m.items()}, {k: v.copy() for k, v in state.v.items()}, state.t)
        else:
            stale += 1
            if stale >= train_config.patience:
                stopped = True
                break

    params.load_values(best_values)
    final_state = OptimizerState(m=best_state[0], v=best_state[1], t=best_state[2])
    return TrainResult(params, final_state, history, best_epoch, stopped)


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------

CHECKPOINT_MAGIC = b"SDCK"
CHECKPOINT_VERSION = 1


@dataclass
class Checkpoint:
    params: ModelParams
    state: OptimizerState
    model_config: ModelConfig
    train_config: TrainConfig
    vocab: Vocab
    extra: dict = field(default_factory=dict)


def save_checkpoint(path, ckpt: Checkpoint) -> None:
    """Binary layout: magic, u32 version, u64 header length, JSON header, float64 payload."""
    arrays: list[tuple[str, np.ndarray]] = []
    for name, t in ckpt.params.named().items():
        arrays.append((f"param:{name}", t.data))
    for name in sorted(ckpt.state.m):
        arrays.append((f"adam_m:{name}", ckpt.state.m[name]))
        arrays.append((f"adam_v:{name}", ckpt.state.v[name]))
    header = {
        "version": CHECKPOINT_VERSION,
        "model_config": asdict(ckpt.model_config),
        "train_config": asdict(ckpt.train_config),
        "vocab": ckpt.vocab.content_tokens(),
        "step": ckpt.state.t,
        "extra": ckpt.extra,
        "tensors": [{"name": n, "shape": list(a.shape)} for n, a in arrays],
    }
    head = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    payload = b"".join(np.ascontiguousarray(a, dtype="<f8").tobytes() for _, a in arrays)
    blob = CHECKPOINT_MAGIC + struct.pack("<IQ", CHECKPOINT_VERSION, len(head)) + head + payload
    Path(path).write_bytes(blob)


def load_checkpoint(path) -> Checkpoint:
    try:
        raw = Path(path).read_bytes()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    if raw[:4] != CHECKPOINT_MAGIC or len(raw) < 16:
        raise CheckpointError(f"{path}: not a checkpoint file")
    version, head_len = struct.unpack_from("<IQ", raw, 4)
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: checkpoint version {version}, expected {CHECKPOINT_VERSION}")
    if 16 + head_len > len(raw):
        raise CheckpointError(f"{path}: truncated header")
    try:
        header = json.loads(raw[16 : 16 + head_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: corrupt header") from exc
    specs = header["tensors"]
    expected = sum(8 * int(np.prod(s["shape"], dtype=np.int64)) for s in specs)
    offset = 16 + head_len
    if len(raw) - offset != expected:
        raise CheckpointError(f"{path}: payload is {len(raw) - offset} bytes, header declares {expected}")
    values: dict[str, np.ndarray] = {}
    for s in specs:
        n = int(np.prod(s["shape"], dtype=np.int64))
        values[s["name"]] = np.frombuffer(raw, dtype="<f8", count=n, offset=offset).reshape(s["shape"]).copy()
        offset += 8 * n
    model_config = ModelConfig.from_dict(header["model_config"])
    train_config = TrainConfig.from_dict(header["train_config"])
    vocab = Vocab(header["vocab"])
    params = build_variant(model_config, seed=0, vocab_size=len(vocab))
    params.load_values({k[len("param:"):]: v for k, v in values.items() if k.startswith("param:")})
    state = OptimizerState(
        m={k[len("adam_m:"):]: v for k, v in values.items() if k.startswith("adam_m:")},
        v={k[len("adam_v:"):]: v for k, v in values.items() if k.startswith("adam_v:")},
        t=int(header["step"]),
    )
    return Checkpoint(params, state, model_config, train_config, vocab, header.get("extra", {}))
