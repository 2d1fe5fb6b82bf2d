"""Dataset ingestion (precomputed CSV, raw JSON-lines) and synthetic fixtures."""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .core import LOSS_KINDS, Dataset, InputError, loss
from .metric import apply_temperature, calibrate_temperature, entropy
from .rng import numpy_generator

CSV_HEADER = ["id", "entropy", "loss_weak", "loss_strong"]
MAX_ENTROPY = math.log(1000)


def read_csv(path) -> Dataset:
    path = Path(path)
    ids, h, lw, ls = [], [], [], []
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [c.strip() for c in header] != CSV_HEADER:
            raise InputError(f"{path}:1: expected header {','.join(CSV_HEADER)}, got {header}")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 4:
                raise InputError(f"{path}:{lineno}: expected 4 fields, got {len(row)}")
            try:
                vals = [float(x) for x in row[1:]]
            except ValueError as exc:
                raise InputError(f"{path}:{lineno}: {exc}") from None
            if not all(math.isfinite(v) for v in vals) or vals[0] < 0:
                raise InputError(f"{path}:{lineno}: non-finite value or negative entropy")
            ids.append(row[0])
            h.append(vals[0])
            lw.append(vals[1])
            ls.append(vals[2])
    if not ids:
        raise InputError(f"{path}: no samples")
    try:
        return Dataset(tuple(ids), h, lw, ls)
    except InputError as exc:
        raise InputError(f"{path}: {exc}") from None


def write_csv(data: Dataset, path=None) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_HEADER)
    for i in range(len(data)):
        w.writerow([data.ids[i], repr(float(data.entropy[i])),
                    repr(float(data.loss_weak[i])), repr(float(data.loss_strong[i]))])
    text = buf.getvalue()
    if path is not None:
        Path(path).write_text(text, encoding="utf-8")
    return text


def dataset_digest(data: Dataset) -> str:
    return hashlib.sha256(write_csv(data).encode("utf-8")).hexdigest()


@dataclass(frozen=True, eq=False)
class RawData:
    """Per-sample classifier outputs; losses and entropy derived on demand."""

    ids: tuple
    weak_probs: np.ndarray
    strong_probs: np.ndarray
    labels: np.ndarray

    def __len__(self):
        return len(self.ids)

    def subset(self, index) -> "RawData":
        index = np.asarray(index)
        return RawData(tuple(self.ids[i] for i in index), self.weak_probs[index],
                       self.strong_probs[index], self.labels[index])


def read_jsonl(path) -> RawData:
    path = Path(path)
    ids, wp, sp, labels = [], [], [], []
    seen = set()
    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                sid = str(obj["id"])
                w = [float(x) for x in obj["weak_probs"]]
                s = [float(x) for x in obj["strong_probs"]]
                y = obj["label"]
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise InputError(f"{path}:{lineno}: malformed record ({exc})") from None
            if not isinstance(y, int) or isinstance(y, bool):
                raise InputError(f"{path}:{lineno}: label must be an integer")
            if wp and (len(w) != len(wp[0]) or len(s) != len(wp[0])):
                raise InputError(f"{path}:{lineno}: inconsistent number of classes")
            if len(w) != len(s):
                raise InputError(f"{path}:{lineno}: weak/strong vectors differ in length")
            if sid in seen:
                raise InputError(f"{path}:{lineno}: duplicate id {sid!r}")
            seen.add(sid)
            ids.append(sid)
            wp.append(w)
            sp.append(s)
            labels.append(y)
    if not ids:
        raise InputError(f"{path}: no samples")
    return RawData(tuple(ids), np.asarray(wp), np.asarray(sp), np.asarray(labels, dtype=np.int64))


def raw_to_dataset(raw: RawData, loss_kind: str, temperature: float = 1.0) -> Dataset:
    if loss_kind not in LOSS_KINDS:
        raise InputError(f"unknown loss kind {loss_kind!r}")
    h, lw, ls = [], [], []
    for i, sid in enumerate(raw.ids):
        try:
            w, s, y = raw.weak_probs[i], raw.strong_probs[i], int(raw.labels[i])
            lw.append(loss(w, y, loss_kind))
            ls.append(loss(s, y, loss_kind))
            zw = w if temperature == 1.0 else apply_temperature(w, temperature)
            h.append(entropy(zw))
        except InputError as exc:
            raise InputError(f"sample {sid!r}: {exc}") from None
    return Dataset(raw.ids, h, lw, ls)


def fit_raw_temperature(raw: RawData) -> float:
    return calibrate_temperature(raw.weak_probs, raw.labels, ids=raw.ids)


def ingest(path, mode: str = "csv", loss_kind: str = "top5", calibrate: bool = False):
    """Load a dataset. Returns ``(dataset, temperature)``."""
    if mode in ("csv", "csv-precomputed"):
        return read_csv(path), 1.0
    if mode in ("jsonl", "jsonl-raw"):
        raw = read_jsonl(path)
        T = fit_raw_temperature(raw) if calibrate else 1.0
        return raw_to_dataset(raw, loss_kind, T), T
    raise InputError(f"unknown ingest mode {mode!r}")


@dataclass(frozen=True)
class SynthParams:
    """Entropy mixture and reward-probability shape for synthetic data.

    Entropy comes from three clipped normals (confident, mid, ambiguous).
    A sample is improved by offloading with probability
    ``peak * exp(-|h - mode|**flatness / (2 * width**flatness))`` (a Gaussian
    bump for ``flatness=2``, flatter-topped above that); otherwise weak and
    strong agree and are both wrong with probability
    ``sigmoid((h - wrong_center) / wrong_scale)``.
    """

    weights: tuple = (0.72, 0.16, 0.12)
    means: tuple = (0.3, 1.9, 3.9)
    sds: tuple = (0.2, 0.45, 0.6)
    peak: float = 0.5
    mode: float = 1.9
    width: float = 0.6
    flatness: float = 4.0
    wrong_center: float = 3.0
    wrong_scale: float = 0.6

    def __post_init__(self):
        if not (len(self.weights) == len(self.means) == len(self.sds)) or not self.weights:
            raise InputError("mixture weights, means and sds must align")
        if any(w < 0 for w in self.weights) or sum(self.weights) <= 0:
            raise InputError("mixture weights must be non-negative with positive sum")
        if any(s <= 0 for s in self.sds):
            raise InputError("mixture sds must be positive")
        if not 0 <= self.peak <= 1:
            raise InputError("peak reward probability must lie in [0, 1]")
        if self.width <= 0 or self.wrong_scale <= 0:
            raise InputError("width and wrong_scale must be positive")
        if self.flatness < 1:
            raise InputError("flatness must be at least 1")

    def reward_probability(self, h):
        h = np.asarray(h, dtype=np.float64)
        z = np.abs(h - self.mode) / self.width
        return self.peak * np.exp(-0.5 * z**self.flatness)

    def wrong_probability(self, h):
        h = np.asarray(h, dtype=np.float64)
        return 1.0 / (1.0 + np.exp(-(h - self.wrong_center) / self.wrong_scale))

    def to_dict(self) -> dict:
        return asdict(self)


def synthesize(params: SynthParams, n: int, seed: int) -> Dataset:
    if n < 1:
        raise InputError("n must be at least 1")
    rng = numpy_generator(seed, "synthesize")
    w = np.asarray(params.weights, dtype=np.float64)
    comp = rng.choice(len(w), size=n, p=w / w.sum())
    h = rng.normal(np.asarray(params.means)[comp], np.asarray(params.sds)[comp])
    h = np.clip(np.abs(h), 0.0, MAX_ENTROPY)
    u = rng.random(n)
    v = rng.random(n)
    improved = u < params.reward_probability(h)
    both_wrong = ~improved & (v < params.wrong_probability(h))
    loss_weak = (improved | both_wrong).astype(np.float64)
    loss_strong = both_wrong.astype(np.float64)
    ids = tuple(f"s{i:06d}" for i in range(n))
    return Dataset(ids, h, loss_weak, loss_strong)


def standard_fixture(n: int = 6000, seed: int = 20240601) -> Dataset:
    """The synthetic dataset used by the acceptance suite."""
    return synthesize(SynthParams(), n, seed)
