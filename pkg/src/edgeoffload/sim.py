"""Seeded single-device simulation of offload decisions under a token bucket."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .core import Dataset, InputError, ScaledBucket
from .rng import derive_seed, uniform_indices

DRAW_STAGE = "draws"


@dataclass(frozen=True)
class SimConfig:
    sequences: int = 100
    length: int = 100_000
    seed: int = 0
    policy_kind: str = "mdp"

    def __post_init__(self):
        if self.sequences < 1 or self.length < 1:
            raise InputError("sequences and length must be positive")
        if self.policy_kind not in ("mdp", "naive"):
            raise InputError(f"policy_kind must be 'mdp' or 'naive', got {self.policy_kind!r}")


@dataclass(eq=False)
class SimReport:
    bucket: ScaledBucket
    avg_loss: float
    stderr: float
    realized_rate: float
    token_histogram: np.ndarray
    sends_by_state: np.ndarray
    sequence_losses: np.ndarray
    steps: int
    sends: int
    traces: list | None = field(default=None, repr=False)

    @property
    def mean_tokens(self) -> float:
        states = np.arange(self.bucket.Q, self.bucket.M + 1)
        return float(states @ self.token_histogram) / self.token_histogram.sum() / self.bucket.P

    def to_dict(self) -> dict:
        return {
            "bucket": self.bucket.to_dict(),
            "avg_loss": self.avg_loss,
            "stderr": self.stderr,
            "realized_rate": self.realized_rate,
            "steps": self.steps,
            "sends": self.sends,
            "mean_tokens": self.mean_tokens,
            "token_histogram": [int(c) for c in self.token_histogram],
            "sends_by_state": [int(c) for c in self.sends_by_state],
            "sequence_losses": [float(x) for x in self.sequence_losses],
        }

    def histogram_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["state", "count"])
        for n, c in zip(self.bucket.states, self.token_histogram):
            w.writerow([n, int(c)])
        return buf.getvalue()


def summarize(values) -> tuple[float, float]:
    """Mean and standard error across sequences (fixed summation order)."""
    v = np.asarray(values, dtype=np.float64)
    mean = math.fsum(v.tolist()) / v.size
    if v.size < 2:
        return mean, 0.0
    var = math.fsum(((v - mean) ** 2).tolist()) / (v.size - 1)
    return mean, math.sqrt(var / v.size)


def draw_indices(seed: int, sequence: int, device: int, length: int, k: int) -> np.ndarray:
    return uniform_indices(derive_seed(seed, DRAW_STAGE, sequence, device), length, k)


def bucket_trajectory(requests, bucket: ScaledBucket, backend: str | None = None) -> np.ndarray:
    """Scaled token counts of a bucket that starts full, before each step and
    after the last. ``requests[t]`` asks to send; it succeeds only when a
    whole token is present."""
    req = np.ascontiguousarray(requests, dtype=np.uint8)
    out = np.empty(req.size + 1, dtype=np.int64)
    kern = _kernels.get(backend) if backend else _kernels.active
    kern.bucket_trajectory(req, bucket.P, bucket.Q, bucket.M, out)
    return out


def _columns(test: Dataset):
    test.require_metrics()
    return (
        np.ascontiguousarray(test.metric, dtype=np.float64),
        np.ascontiguousarray(test.loss_weak, dtype=np.float64),
        np.ascontiguousarray(test.loss_strong, dtype=np.float64),
    )


def simulate(test: Dataset, policy, cfg: SimConfig, *, keep_traces: bool = False,
             backend: str | None = None) -> SimReport:
    """Run ``cfg.sequences`` i.i.d. input streams of ``cfg.length`` draws.

    ``policy`` is a :class:`~edgeoffload.core.PolicyTable` or
    :class:`~edgeoffload.core.NaivePolicy`. Each stream starts with a full
    bucket; the token histogram is taken at arrival, before the decision.
    With ``keep_traces`` the per-step draw indices and send flags are kept on
    the report.
    """
    metric, lw, ls = _columns(test)
    bucket = policy.bucket
    th = np.ascontiguousarray(policy.threshold_array(), dtype=np.float64)
    kern = _kernels.get(backend) if backend else _kernels.active
    hist = np.zeros(bucket.n_states, dtype=np.int64)
    sends_by_state = np.zeros(bucket.n_states, dtype=np.int64)
    seq_loss = np.empty(cfg.sequences)
    traces = [] if keep_traces else None
    total_sent = 0
    sent = np.empty(cfg.length, dtype=np.uint8)
    for s in range(cfg.sequences):
        idx = draw_indices(cfg.seed, s, 0, cfg.length, len(test))
        loss_sum, n_sent = kern.run_device(
            idx, metric, lw, ls, th, bucket.P, bucket.Q, bucket.M, hist, sends_by_state, sent
        )
        seq_loss[s] = loss_sum / cfg.length
        total_sent += int(n_sent)
        if keep_traces:
            traces.append((idx, sent.copy()))
    avg, se = summarize(seq_loss)
    steps = cfg.sequences * cfg.length
    return SimReport(
        bucket=bucket,
        avg_loss=avg,
        stderr=se,
        realized_rate=total_sent / steps,
        token_histogram=hist,
        sends_by_state=sends_by_state,
        sequence_losses=seq_loss,
        steps=steps,
        sends=total_sent,
        traces=traces,
    )


def offload_odds(test: Dataset, policy, cfg: SimConfig, bins: int = 50,
                 backend: str | None = None):
    """Fraction of arrivals offloaded per equal-width metric bin.

    Returns ``(edges, arrivals, sent)``; odds are ``sent / arrivals`` where
    arrivals are non-zero.
    """
    report = simulate(test, policy, cfg, keep_traces=True, backend=backend)
    metric = np.asarray(test.metric)
    lo, hi = float(metric.min()), float(metric.max())
    if hi <= lo:
        hi = lo + 1.0
    edges = np.linspace(lo, hi, bins + 1)
    sample_bin = np.clip(np.searchsorted(edges, metric, side="right") - 1, 0, bins - 1)
    arrivals = np.zeros(bins, dtype=np.int64)
    sent = np.zeros(bins, dtype=np.int64)
    for idx, flags in report.traces:
        b = sample_bin[idx]
        arrivals += np.bincount(b, minlength=bins)
        sent += np.bincount(b, weights=flags, minlength=bins).astype(np.int64)
    return edges, arrivals, sent


def odds_csv(edges, arrivals, sent) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["metric_bin", "odds"])
    for i in range(len(arrivals)):
        mid = 0.5 * (edges[i] + edges[i + 1])
        odds = sent[i] / arrivals[i] if arrivals[i] else 0.0
        w.writerow([repr(float(mid)), repr(float(odds))])
    return buf.getvalue()


def arrival_curve_violations(counts, bucket: ScaledBucket, strict: bool = False) -> int:
    """Count window end points at which the send counts break the envelope.

    ``counts[t]`` is the number of transmissions in slot ``t``. The envelope
    allows ``ceil((M + w*Q) / P)`` sends in any ``w`` consecutive slots; with
    ``strict`` it is the tighter policer limit ``floor((M + (w-1)*Q) / P)``
    obeyed by a bucket that starts full and refills after each slot.
    Uses ``D[k] = P*C[k] - Q*k`` over prefix counts ``C``: a window ``(i, j]``
    violates iff ``D[j] - D[i]`` reaches ``M + P`` (``> M - Q`` when strict).
    """
    c = np.asarray(counts, dtype=np.int64)
    C = np.concatenate([[0], np.cumsum(c)])
    D = bucket.P * C - bucket.Q * np.arange(C.size, dtype=np.int64)
    run_min = np.minimum.accumulate(D)[:-1]
    excess = D[1:] - run_min
    if strict:
        return int(np.count_nonzero(excess > bucket.M - bucket.Q))
    return int(np.count_nonzero(excess >= bucket.M + bucket.P))
