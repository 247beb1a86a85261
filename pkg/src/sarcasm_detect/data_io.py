"""Manifests, FT01 tensor files, synthetic data and evaluation metrics."""

from __future__ import annotations

import json
import struct
from collections import Counter
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from .autograd import Tensor
from .errors import ConfigError, ContractError, DataError

SPLITS = ("train", "dev", "test")

MAGIC = b"FT01"
MAX_RANK = 4

# per-split (sarcastic, non-sarcastic) counts of the two public benchmarks
REFERENCE_STATS = {
    "twitter": {"train": (8642, 11174), "dev": (959, 1451), "test": (959, 1450)},
    "multibully": {"train": (1545, 2552), "dev": (201, 384), "test": (429, 743)},
}


# ---------------------------------------------------------------------------
# tensor files
# ---------------------------------------------------------------------------


def write_tensor_file(path, tensor) -> None:
    """Write ``FT01`` + u32 rank + u32 extents + float32 payload, all little-endian."""
    data = tensor.data if isinstance(tensor, Tensor) else np.asarray(tensor, dtype=np.float64)
    if data.ndim > MAX_RANK:
        raise DataError(f"rank {data.ndim} exceeds the maximum of {MAX_RANK}")
    if not np.all(np.isfinite(data)):
        raise DataError(f"refusing to write non-finite values to {path}")
    header = MAGIC + struct.pack(f"<{1 + data.ndim}I", data.ndim, *data.shape)
    Path(path).write_bytes(header + np.ascontiguousarray(data, dtype="<f4").tobytes())


def read_tensor_file(path) -> Tensor:
    try:
        raw = Path(path).read_bytes()
    except OSError as exc:
        raise DataError(f"cannot read tensor file {path}: {exc}") from exc
    if len(raw) < 8 or raw[:4] != MAGIC:
        raise DataError(f"{path}: bad magic {raw[:4]!r}, expected {MAGIC!r}")
    (rank,) = struct.unpack_from("<I", raw, 4)
    if rank > MAX_RANK:
        raise DataError(f"{path}: rank {rank} exceeds the maximum of {MAX_RANK}")
    offset = 8 + 4 * rank
    if len(raw) < offset:
        raise DataError(f"{path}: truncated header")
    shape = struct.unpack_from(f"<{rank}I", raw, 8)
    expected = 4 * int(np.prod(shape, dtype=np.int64))
    payload = len(raw) - offset
    if payload != expected:
        kind = "truncated" if payload < expected else "oversized"
        raise DataError(f"{path}: {kind} payload, {payload} bytes for shape {tuple(shape)} ({expected} expected)")
    values = np.frombuffer(raw, dtype="<f4", offset=offset).astype(np.float64).reshape(shape)
    return Tensor(values)


# ---------------------------------------------------------------------------
# manifests
# ---------------------------------------------------------------------------


@dataclass
class Sample:
    id: str
    text: str
    caption: str = ""
    label: Optional[int] = None
    region_features_path: Optional[str] = None
    split: str = "train"
    text_features_path: Optional[str] = None
    caption_features_path: Optional[str] = None

    def to_json(self) -> str:
        record = {k: v for k, v in asdict(self).items() if v is not None or k in ("label", "region_features_path")}
        return json.dumps(record, ensure_ascii=False, sort_keys=False)


@dataclass
class SplitStats:
    sarcastic: int = 0
    non_sarcastic: int = 0
    unlabeled: int = 0

    @property
    def total(self) -> int:
        return self.sarcastic + self.non_sarcastic + self.unlabeled


@dataclass
class Dataset:
    samples: list[Sample] = field(default_factory=list)

    def split(self, name: str) -> list[Sample]:
        return [s for s in self.samples if s.split == name]

    def stats(self) -> dict[str, SplitStats]:
        out = {name: SplitStats() for name in SPLITS}
        for s in self.samples:
            st = out[s.split]
            if s.label == 1:
                st.sarcastic += 1
            elif s.label == 0:
                st.non_sarcastic += 1
            else:
                st.unlabeled += 1
        return out


def _resolve(base: Path, value) -> Optional[str]:
    if value in (None, ""):
        return None
    p = Path(value)
    return str(p if p.is_absolute() else base / p)


def parse_manifest(path) -> Dataset:
    """Read a UTF-8 JSON-lines manifest; feature paths resolve against its folder."""
    path = Path(path)
    base = path.parent
    samples: list[Sample] = []
    seen: set[str] = set()
    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataError(f"{path}:{lineno}: malformed record: {exc.msg}") from exc
            if not isinstance(rec, dict) or "id" not in rec or "text" not in rec:
                raise DataError(f"{path}:{lineno}: record needs at least 'id' and 'text'")
            sid = str(rec["id"])
            if sid in seen:
                raise DataError(f"{path}:{lineno}: duplicate id {sid!r}")
            seen.add(sid)
            split = rec.get("split", "train")
            if split not in SPLITS:
                raise DataError(f"{path}:{lineno}: unknown split {split!r}")
            label = rec.get("label")
            if label is not None and label not in (0, 1):
                raise DataError(f"{path}:{lineno}: label must be 0 or 1, got {label!r}")
            if label is None and split != "test":
                raise DataError(f"{path}:{lineno}: {split} record {sid!r} has no label")
            samples.append(
                Sample(
                    id=sid,
                    text=str(rec["text"]),
                    caption=str(rec.get("caption") or ""),
                    label=label,
                    region_features_path=_resolve(base, rec.get("region_features_path")),
                    split=split,
                    text_features_path=_resolve(base, rec.get("text_features_path")),
                    caption_features_path=_resolve(base, rec.get("caption_features_path")),
                )
            )
    return Dataset(samples)


def write_manifest(path, samples: Iterable[Sample]) -> None:
    with Path(path).open("w", encoding="utf-8", newline="\n") as fh:
        for s in samples:
            fh.write(s.to_json() + "\n")


def match_reference(stats: dict[str, SplitStats]) -> Optional[str]:
    """Name of the benchmark whose split counts equal ``stats``, if any."""
    for name, ref in REFERENCE_STATS.items():
        if all((stats[s].sarcastic, stats[s].non_sarcastic) == ref[s] and not stats[s].unlabeled for s in SPLITS):
            return name
    return None


# ---------------------------------------------------------------------------
# metrics
# ---------------------------------------------------------------------------


@dataclass
class MetricsReport:
    tp: int
    fp: int
    fn: int
    tn: int
    accuracy: float
    precision: float
    recall: float
    f1: float

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn

    def as_dict(self, places: int = 4) -> dict:
        return {
            "accuracy": round(self.accuracy, places),
            "precision": round(self.precision, places),
            "recall": round(self.recall, places),
            "f1": round(self.f1, places),
            "tp": self.tp,
            "fp": self.fp,
            "fn": self.fn,
            "tn": self.tn,
        }

    def to_text(self) -> str:
        return json.dumps(self.as_dict(), indent=2)


def _ratio(num: float, den: float) -> float:
    return num / den if den else 0.0


def f1_score(precision: float, recall: float) -> float:
    return _ratio(2.0 * precision * recall, precision + recall)


def compute_metrics(
    predictions: Sequence[int], gold: Sequence[int], positive: int = 1, average: str = "binary"
) -> MetricsReport:
    """Accuracy and positive-class precision/recall/F1; 0/0 counts as 0.

    With ``average="macro"`` precision, recall and F1 are averaged over both
    classes; the confusion counts stay relative to ``positive``.
    """
    pred = np.asarray(predictions)
    true = np.asarray(gold)
    if pred.shape != true.shape or pred.ndim != 1:
        raise ContractError(f"prediction and gold lengths differ: {pred.shape} vs {true.shape}")
    if average not in ("binary", "macro"):
        raise ConfigError(f"unknown averaging {average!r}")

    def counts(pos):
        tp = int(np.sum((pred == pos) & (true == pos)))
        fp = int(np.sum((pred == pos) & (true != pos)))
        fn = int(np.sum((pred != pos) & (true == pos)))
        return tp, fp, fn, len(true) - tp - fp - fn

    tp, fp, fn, tn = counts(positive)
    accuracy = _ratio(tp + tn, tp + fp + fn + tn)
    if average == "binary":
        p, r = _ratio(tp, tp + fp), _ratio(tp, tp + fn)
        f1 = f1_score(p, r)
    else:
        per = []
        for cls in (positive, 1 - positive):
            a, b, c, _ = counts(cls)
            pc, rc = _ratio(a, a + b), _ratio(a, a + c)
            per.append((pc, rc, f1_score(pc, rc)))
        p, r, f1 = (float(np.mean([x[i] for x in per])) for i in range(3))
    return MetricsReport(tp, fp, fn, tn, accuracy, p, r, f1)


# ---------------------------------------------------------------------------
# synthetic data
# ---------------------------------------------------------------------------

POSITIVE_WORDS = ("love", "great", "wonderful", "amazing", "perfect", "fantastic")
NEGATIVE_WORDS = ("hate", "awful", "terrible", "horrible", "worst", "dreadful")
TEMPLATES = ("i just {} this day", "{} weather again today", "oh what a {} monday")


def synth_dataset(
    out_dir,
    n: int = 200,
    d_signal: int = 16,
    seed: int = 0,
    regions: int = 4,
    noise: float = 0.5,
    templates: int = 1,
) -> Path:
    """Write a manifest and region feature files where only the text/image pair predicts the label.

    Each sample's text carries a positive or negative polarity word and its
    regions come from cluster A or B.  A sample is sarcastic when positive
    text meets cluster B or negative text meets cluster A, so text alone and
    image alone are both uninformative.  Captions name the cluster.
    Returns the manifest path.
    """
    if n < 8 or n % 2:
        raise ConfigError(f"synthetic dataset size must be even and at least 8, got {n}")
    rng = np.random.default_rng(seed)
    out = Path(out_dir)
    (out / "features").mkdir(parents=True, exist_ok=True)
    # two region prototypes per cluster; every image shows both of its cluster's prototypes
    prototypes = rng.normal(size=(2, 2, d_signal))

    labels = np.array([1] * (n // 2) + [0] * (n // 2))
    # polarity balanced within each label so text carries no label signal
    polarity = np.concatenate([np.arange(n // 2) % 2, np.arange(n // 2) % 2])
    order = rng.permutation(n)
    labels, polarity = labels[order], polarity[order]
    n_train = int(round(0.7 * n))
    n_dev = int(round(0.15 * n))
    splits = ["train"] * n_train + ["dev"] * n_dev + ["test"] * (n - n_train - n_dev)

    samples = []
    for i in range(n):
        positive_text = bool(polarity[i])
        # sarcastic <=> polarity disagrees with the scene: positive+B, negative+A
        cluster = int(labels[i] == positive_text)
        pool = POSITIVE_WORDS if positive_text else NEGATIVE_WORDS
        text = TEMPLATES[int(rng.integers(0, templates))].format(rng.choice(pool))
        kinds = rng.permutation(np.arange(regions) % 2)
        feats = prototypes[cluster, kinds] + noise * rng.normal(size=(regions, d_signal))
        sid = f"s{i:05d}"
        rel = f"features/{sid}.ft"
        write_tensor_file(out / rel, feats)
        samples.append(
            Sample(
                id=sid,
                text=text,
                caption=f"cluster {'ab'[cluster]} scene",
                label=int(labels[i]),
                region_features_path=rel,
                split=splits[i],
            )
        )
    manifest = out / "manifest.jsonl"
    write_manifest(manifest, samples)
    return manifest


def label_counts(samples: Iterable[Sample]) -> Counter:
    return Counter(s.label for s in samples)
