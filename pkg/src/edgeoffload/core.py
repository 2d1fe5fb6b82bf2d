"""Token-bucket arithmetic, losses, datasets and policy tables.

Token counts are kept on an integer grid: with rate ``r = Q/P`` and depth
``b = M/P`` the scaled count ``n * P`` always lies in ``{Q, ..., M}`` once the
bucket starts full, so every quantity downstream stays exact.
"""

from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterator, Sequence

import numpy as np

LOSS_KINDS = ("top1", "top5", "rank")
RANK_CAP = 10

_RATIONAL_RE = re.compile(r"^\s*(\d+)\s*/\s*(\d+)\s*$")
_DECIMAL_RE = re.compile(r"^\s*(\d+)(?:\.(\d*))?\s*$|^\s*\.(\d+)\s*$")


class InputError(ValueError):
    """Raised for malformed user input (bad rationals, datasets, configs)."""


def parse_rational(value: str | int | Fraction) -> Fraction:
    """Parse ``"num/den"`` or an exact decimal string into a Fraction.

    Floats are refused: a binary float cannot carry an exact rate such as
    1/10, and the scaled state space depends on exactness.
    """
    if isinstance(value, bool):
        raise InputError(f"not a rational: {value!r}")
    if isinstance(value, Fraction):
        return value
    if isinstance(value, int):
        return Fraction(value)
    if isinstance(value, float):
        raise InputError(
            f"float {value!r} rejected; pass rationals as strings like '1/10' or '0.1'"
        )
    if not isinstance(value, str):
        raise InputError(f"not a rational: {value!r}")
    m = _RATIONAL_RE.match(value)
    if m:
        den = int(m.group(2))
        if den == 0:
            raise InputError(f"zero denominator in {value!r}")
        return Fraction(int(m.group(1)), den)
    m = _DECIMAL_RE.match(value)
    if m:
        if m.group(3) is not None:
            whole, frac = "0", m.group(3)
        else:
            whole, frac = m.group(1), m.group(2) or ""
        return Fraction(int(whole + frac), 10 ** len(frac))
    raise InputError(f"cannot parse {value!r} as a rational ('num/den' or decimal)")


@dataclass(frozen=True)
class ScaledBucket:
    """Integer token bucket: refill ``Q`` per arrival, ``P`` per send, depth ``M``."""

    P: int
    Q: int
    M: int

    def __post_init__(self):
        for name in ("P", "Q", "M"):
            v = getattr(self, name)
            if not isinstance(v, (int, np.integer)) or v <= 0:
                raise InputError(f"{name} must be a positive integer, got {v!r}")
        if not (self.Q < self.P <= self.M):
            raise InputError(f"need Q < P <= M, got P={self.P} Q={self.Q} M={self.M}")

    @property
    def rate(self) -> Fraction:
        return Fraction(self.Q, self.P)

    @property
    def depth(self) -> Fraction:
        return Fraction(self.M, self.P)

    @property
    def states(self) -> range:
        return range(self.Q, self.M + 1)

    @property
    def n_states(self) -> int:
        return self.M - self.Q + 1

    @property
    def n_send_states(self) -> int:
        return self.M - self.P + 1

    def to_dict(self) -> dict:
        return {"P": int(self.P), "Q": int(self.Q), "M": int(self.M)}


def reduce_bucket(r, b) -> ScaledBucket:
    """Scale rational ``(r, b)`` onto the smallest common integer grid.

    >>> reduce_bucket("1/5", 3)
    ScaledBucket(P=5, Q=1, M=15)
    """
    r = parse_rational(r)
    b = parse_rational(b)
    if not (0 < r < 1):
        raise InputError(f"rate must satisfy 0 < r < 1, got {r}")
    if b < 1:
        raise InputError(f"depth must satisfy b >= 1, got {b}")
    P = math.lcm(r.denominator, b.denominator)
    return ScaledBucket(P=P, Q=int(r * P), M=int(b * P))


def step_bucket(n: int, a: int, bucket: ScaledBucket) -> int:
    """Advance the scaled token count by one arrival after action ``a``."""
    if not bucket.Q <= n <= bucket.M:
        raise InputError(f"state {n} outside [{bucket.Q}, {bucket.M}]")
    if a not in (0, 1):
        raise InputError(f"action must be 0 or 1, got {a!r}")
    if a == 1 and n < bucket.P:
        raise InputError(f"cannot send with {n} < P={bucket.P} scaled tokens")
    return min(bucket.M, n - bucket.P * a + bucket.Q)


def _check_probs(probs) -> np.ndarray:
    z = np.asarray(probs, dtype=np.float64)
    if z.ndim != 1 or z.size == 0:
        raise InputError("probability vector must be a non-empty 1-d array")
    if np.any(z < 0) or not np.all(np.isfinite(z)):
        raise InputError("probability vector has negative or non-finite entries")
    if abs(z.sum() - 1.0) > 1e-6:
        raise InputError(f"probabilities sum to {z.sum():.9f}, not 1")
    return z


def label_rank(probs, label: int) -> int:
    """1-indexed position of ``label`` in descending-probability order.

    Equal probabilities are ordered by ascending class index.
    """
    z = _check_probs(probs)
    if not 0 <= label < z.size:
        raise InputError(f"label {label} out of range for {z.size} classes")
    p = z[label]
    ahead = np.count_nonzero(z > p) + np.count_nonzero(z[:label] == p)
    return int(ahead) + 1


def loss(probs, label: int, kind: str) -> float:
    rank = label_rank(probs, label)
    if kind == "top1":
        return float(rank > 1)
    if kind == "top5":
        return float(rank > 5)
    if kind == "rank":
        return float(min(RANK_CAP, rank))
    raise InputError(f"unknown loss kind {kind!r}; expected one of {LOSS_KINDS}")


@dataclass(frozen=True)
class Sample:
    id: str
    entropy: float
    loss_weak: float
    loss_strong: float
    metric: float = math.nan

    @property
    def reward(self) -> float:
        return self.loss_weak - self.loss_strong


def _frozen(a, dtype=np.float64) -> np.ndarray:
    out = np.array(a, dtype=dtype)
    out.setflags(write=False)
    return out


@dataclass(frozen=True, eq=False)
class Dataset:
    """Column-oriented collection of samples.

    ``metric`` is NaN until a metric map has been applied (see
    :meth:`with_metrics`).
    """

    ids: tuple[str, ...]
    entropy: np.ndarray
    loss_weak: np.ndarray
    loss_strong: np.ndarray
    metric: np.ndarray = field(default=None)

    def __post_init__(self):
        n = len(self.ids)
        object.__setattr__(self, "ids", tuple(str(i) for i in self.ids))
        for name in ("entropy", "loss_weak", "loss_strong"):
            arr = _frozen(getattr(self, name))
            if arr.shape != (n,):
                raise InputError(f"column {name} has shape {arr.shape}, expected ({n},)")
            object.__setattr__(self, name, arr)
        metric = self.metric if self.metric is not None else np.full(n, np.nan)
        metric = _frozen(metric)
        if metric.shape != (n,):
            raise InputError(f"column metric has shape {metric.shape}, expected ({n},)")
        object.__setattr__(self, "metric", metric)
        if len(set(self.ids)) != n:
            seen, dups = set(), []
            for i in self.ids:
                if i in seen:
                    dups.append(i)
                seen.add(i)
            raise InputError(f"duplicate sample ids: {dups[:5]}")
        reward = _frozen(self.loss_weak - self.loss_strong)
        object.__setattr__(self, "reward", reward)

    def __len__(self) -> int:
        return len(self.ids)

    def __iter__(self) -> Iterator[Sample]:
        for k in range(len(self)):
            yield self[k]

    def __getitem__(self, k: int) -> Sample:
        return Sample(
            self.ids[k],
            float(self.entropy[k]),
            float(self.loss_weak[k]),
            float(self.loss_strong[k]),
            float(self.metric[k]),
        )

    @classmethod
    def from_samples(cls, samples: Sequence[Sample]) -> "Dataset":
        return cls(
            ids=tuple(s.id for s in samples),
            entropy=[s.entropy for s in samples],
            loss_weak=[s.loss_weak for s in samples],
            loss_strong=[s.loss_strong for s in samples],
            metric=[s.metric for s in samples],
        )

    @property
    def has_metrics(self) -> bool:
        return len(self) > 0 and bool(np.all(np.isfinite(self.metric)))

    def require_metrics(self) -> None:
        if len(self) == 0:
            raise InputError("dataset is empty")
        if not self.has_metrics:
            raise InputError("dataset metrics are not populated; apply a metric map first")

    def subset(self, index) -> "Dataset":
        index = np.asarray(index)
        if index.dtype == bool:
            index = np.flatnonzero(index)
        return Dataset(
            ids=tuple(self.ids[i] for i in index),
            entropy=self.entropy[index],
            loss_weak=self.loss_weak[index],
            loss_strong=self.loss_strong[index],
            metric=self.metric[index],
        )

    def with_metrics(self, metric) -> "Dataset":
        return Dataset(self.ids, self.entropy, self.loss_weak, self.loss_strong, metric)


@dataclass(frozen=True, eq=False)
class PolicyTable:
    """Per-state offload thresholds for states ``P..M`` and values for ``Q..M``."""

    bucket: ScaledBucket
    gamma: float
    thresholds: np.ndarray
    values: np.ndarray
    sweeps: int = 0
    residual: float = 0.0

    def __post_init__(self):
        th = _frozen(self.thresholds)
        vals = _frozen(self.values)
        if th.shape != (self.bucket.n_send_states,):
            raise InputError(
                f"expected {self.bucket.n_send_states} thresholds, got {th.shape}"
            )
        if vals.shape != (self.bucket.n_states,):
            raise InputError(f"expected {self.bucket.n_states} values, got {vals.shape}")
        if not 0 <= self.gamma < 1:
            raise InputError(f"gamma must lie in [0, 1), got {self.gamma}")
        object.__setattr__(self, "thresholds", th)
        object.__setattr__(self, "values", vals)

    def threshold(self, n: int) -> float:
        return float(self.thresholds[n - self.bucket.P])

    def value(self, n: int) -> float:
        return float(self.values[n - self.bucket.Q])

    def threshold_array(self) -> np.ndarray:
        return self.thresholds

    def to_dict(self) -> dict:
        return {
            **self.bucket.to_dict(),
            "gamma": float(self.gamma),
            "thresholds": [_encode_float(t) for t in self.thresholds],
            "values": [float(v) for v in self.values],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PolicyTable":
        try:
            bucket = ScaledBucket(int(d["P"]), int(d["Q"]), int(d["M"]))
            return cls(
                bucket=bucket,
                gamma=float(d["gamma"]),
                thresholds=[_decode_float(t) for t in d["thresholds"]],
                values=[float(v) for v in d["values"]],
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise InputError(f"malformed policy table: {exc}") from exc

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "PolicyTable":
        return cls.from_dict(json.loads(text))


@dataclass(frozen=True, eq=False)
class NaivePolicy:
    """State-independent threshold; sends whenever a full token exists."""

    threshold: float
    bucket: ScaledBucket

    def threshold_array(self) -> np.ndarray:
        return np.full(self.bucket.n_send_states, float(self.threshold))


def apply_policy(metric: float, n: int, policy) -> int:
    b = policy.bucket
    if not b.Q <= n <= b.M:
        raise InputError(f"state {n} outside [{b.Q}, {b.M}]")
    if n < b.P:
        return 0
    return int(metric >= policy.threshold_array()[n - b.P])


def _encode_float(x: float):
    x = float(x)
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return x


def _decode_float(x) -> float:
    if isinstance(x, str):
        if x in ("inf", "-inf"):
            return float(x)
        raise ValueError(f"unexpected threshold string {x!r}")
    return float(x)
