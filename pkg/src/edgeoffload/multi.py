"""N homogeneous devices sharing an aggregate token bucket ``(r_tot, b_tot)``.

Three strategies:

individual
    each device owns ``(r_tot/N, b_tot/N)`` and nothing is shared.
hierarchical
    each device runs a looser bucket ``(r', b')``; the switch polices the
    merged stream against ``(r_tot, b_tot)`` and drops non-conformant images,
    visiting the slot's senders in a seeded random order.
smart
    every image reaches the switch tagged with its metric; one policy solved
    for per-image epochs (rate ``r_tot/N``, depth ``b_tot``) decides, taking
    each slot's images in descending metric order.

Device ``i`` of sequence ``s`` draws from the same stream under every
strategy, so results are paired across strategies.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from . import _kernels
from .core import Dataset, InputError, parse_rational, reduce_bucket
from .mdp import PolicySolver
from .rng import derive_seed, permutations
from .sim import _columns, draw_indices, summarize

STRATEGIES = ("individual", "hierarchical", "smart")
DEFAULT_R_GRID = tuple(Fraction(k, 100) for k in range(5, 51, 5))
DEFAULT_B_GRID = tuple(Fraction(k) for k in range(1, 11))


@dataclass(frozen=True)
class AggregateBucket:
    """Scaled bucket for a switch, where several sends per slot are allowed
    (so the refill ``Q`` may reach or exceed ``P``)."""

    P: int
    Q: int
    M: int

    @classmethod
    def from_rational(cls, r, b) -> "AggregateBucket":
        r, b = parse_rational(r), parse_rational(b)
        if r <= 0 or b < 1:
            raise InputError(f"aggregate bucket needs r > 0 and b >= 1, got r={r} b={b}")
        if r > b:
            raise InputError(f"aggregate rate {r} exceeds depth {b}")
        P = math.lcm(r.denominator, b.denominator)
        return cls(P, int(r * P), int(b * P))

    @property
    def n_states(self) -> int:
        return self.M - self.Q + 1

    @property
    def states(self) -> range:
        return range(self.Q, self.M + 1)

    def to_dict(self) -> dict:
        return {"P": self.P, "Q": self.Q, "M": self.M}


@dataclass(frozen=True)
class MultiConfig:
    n_devices: int
    r_tot: Fraction
    b_tot: Fraction
    strategy: str = "individual"
    device_bucket_override: tuple | None = None
    seed: int = 0
    sequences: int = 100
    length: int = 100_000

    def __post_init__(self):
        if self.n_devices < 1:
            raise InputError("n_devices must be positive")
        if self.strategy not in STRATEGIES:
            raise InputError(f"strategy must be one of {STRATEGIES}, got {self.strategy!r}")
        if self.sequences < 1 or self.length < 1:
            raise InputError("sequences and length must be positive")
        object.__setattr__(self, "r_tot", parse_rational(self.r_tot))
        object.__setattr__(self, "b_tot", parse_rational(self.b_tot))
        if self.device_bucket_override is not None:
            r, b = self.device_bucket_override
            object.__setattr__(
                self, "device_bucket_override", (parse_rational(r), parse_rational(b))
            )

    @property
    def equal_split(self) -> tuple[Fraction, Fraction]:
        return self.r_tot / self.n_devices, self.b_tot / self.n_devices

    def with_override(self, r, b) -> "MultiConfig":
        return MultiConfig(
            self.n_devices, self.r_tot, self.b_tot, "hierarchical", (r, b),
            self.seed, self.sequences, self.length,
        )


@dataclass(eq=False)
class MultiReport:
    strategy: str
    n_devices: int
    avg_loss: float
    stderr: float
    sequence_losses: np.ndarray
    device_losses: np.ndarray
    attempts: np.ndarray
    forwarded: np.ndarray
    token_bucket: object
    token_histogram: np.ndarray
    token_offset: int
    steps: int
    traces: list | None = field(default=None, repr=False)

    @property
    def realized_rate(self) -> float:
        """Images forwarded into the network per slot, all devices together."""
        return int(self.forwarded.sum()) / self.steps

    @property
    def drops(self) -> int:
        return int(self.attempts.sum() - self.forwarded.sum())

    @property
    def drop_rate(self) -> float:
        att = int(self.attempts.sum())
        return self.drops / att if att else 0.0

    @property
    def mean_tokens(self) -> float:
        """Mean remaining tokens (real units) in the reported bucket: the
        switch bucket, or the sum over devices for individual buckets."""
        states = np.arange(self.token_offset, self.token_offset + self.token_histogram.size)
        return float(states @ self.token_histogram) / self.token_histogram.sum() / self.token_bucket.P

    def to_dict(self) -> dict:
        return {
            "strategy": self.strategy,
            "n_devices": self.n_devices,
            "avg_loss": self.avg_loss,
            "stderr": self.stderr,
            "realized_rate": self.realized_rate,
            "switch_drop_rate": self.drop_rate,
            "mean_tokens": self.mean_tokens,
            "token_bucket": self.token_bucket.to_dict(),
            "token_histogram": {
                str(self.token_offset + i): int(c) for i, c in enumerate(self.token_histogram)
            },
            "sequence_losses": [float(x) for x in self.sequence_losses],
            "devices": [
                {
                    "device": i,
                    "avg_loss": float(self.device_losses[i]),
                    "attempts": int(self.attempts[i]),
                    "forwarded": int(self.forwarded[i]),
                }
                for i in range(self.n_devices)
            ],
        }


def _device_draws(cfg: MultiConfig, s: int, k: int) -> np.ndarray:
    cols = [draw_indices(cfg.seed, s, i, cfg.length, k) for i in range(cfg.n_devices)]
    return np.ascontiguousarray(np.stack(cols, axis=1))


def _run_buckets(test, cfg, policy, switch, keep_traces, backend):
    metric, lw, ls = _columns(test)
    kern = _kernels.get(backend) if backend else _kernels.active
    b = policy.bucket
    th = np.ascontiguousarray(policy.threshold_array(), dtype=np.float64)
    N, L = cfg.n_devices, cfg.length
    use_switch = switch is not None
    Ps, Qs, Ms = (switch.P, switch.Q, switch.M) if use_switch else (1, 1, 1)
    attempts = np.zeros(N, dtype=np.int64)
    forwarded = np.zeros(N, dtype=np.int64)
    dev_loss = np.zeros(N)
    switch_hist = np.zeros(switch.n_states if use_switch else 1, dtype=np.int64)
    sum_hist = np.zeros(N * (b.M - b.Q) + 1, dtype=np.int64)
    seq_loss = np.empty(cfg.sequences)
    traces = [] if keep_traces else None
    sent = np.empty((L, N), dtype=np.uint8)
    fwd = np.empty((L, N), dtype=np.uint8)
    dummy_order = np.zeros((1, 1), dtype=np.int64)
    for s in range(cfg.sequences):
        idx = _device_draws(cfg, s, len(test))
        order = (
            permutations(derive_seed(cfg.seed, "switch-order", s), L, N)
            if use_switch else dummy_order
        )
        sums = np.zeros(N)
        kern.run_multi(
            idx, order, metric, lw, ls, th, b.P, b.Q, b.M, use_switch, Ps, Qs, Ms,
            sums, attempts, forwarded, switch_hist, sum_hist, sent, fwd,
        )
        seq_loss[s] = math.fsum(sums.tolist()) / (N * L)
        dev_loss += sums
        if keep_traces:
            traces.append({"idx": idx, "sent": sent.copy(), "forwarded": fwd.copy()})
    return seq_loss, dev_loss / (cfg.sequences * L), attempts, forwarded, switch_hist, sum_hist, traces


def simulate_individual(test: Dataset, cfg: MultiConfig, solver: PolicySolver, *,
                        keep_traces: bool = False, backend: str | None = None) -> MultiReport:
    r_i, b_i = cfg.equal_split
    if b_i < 1:
        raise InputError(f"per-device depth b_tot/N = {b_i} is below one token")
    policy = solver(r_i, b_i)
    seq_loss, dev_loss, att, fwd, _, sum_hist, traces = _run_buckets(
        test, cfg, policy, None, keep_traces, backend
    )
    avg, se = summarize(seq_loss)
    b = policy.bucket
    return MultiReport(
        "individual", cfg.n_devices, avg, se, seq_loss, dev_loss, att, fwd,
        b, sum_hist, cfg.n_devices * b.Q, cfg.sequences * cfg.length, traces,
    )


def simulate_hierarchical(test: Dataset, cfg: MultiConfig, solver: PolicySolver, *,
                          keep_traces: bool = False, backend: str | None = None) -> MultiReport:
    r_eq, b_eq = cfg.equal_split
    r_d, b_d = cfg.device_bucket_override or (r_eq, b_eq)
    if r_d < r_eq and b_d < b_eq:
        raise InputError(
            f"device bucket ({r_d}, {b_d}) is below the equal split in both rate and depth"
        )
    policy = solver(r_d, b_d)
    switch = AggregateBucket.from_rational(cfg.r_tot, cfg.b_tot)
    seq_loss, dev_loss, att, fwd, switch_hist, _, traces = _run_buckets(
        test, cfg, policy, switch, keep_traces, backend
    )
    avg, se = summarize(seq_loss)
    return MultiReport(
        "hierarchical", cfg.n_devices, avg, se, seq_loss, dev_loss, att, fwd,
        switch, switch_hist, switch.Q, cfg.sequences * cfg.length, traces,
    )


def smart_bucket(cfg: MultiConfig):
    """Per-image-epoch bucket used by the smart switch."""
    return reduce_bucket(cfg.r_tot / cfg.n_devices, cfg.b_tot)


def simulate_smart(test: Dataset, cfg: MultiConfig, solver: PolicySolver, *,
                   keep_traces: bool = False, backend: str | None = None) -> MultiReport:
    bucket = smart_bucket(cfg)
    policy = solver(bucket.rate, bucket.depth)
    metric, lw, ls = _columns(test)
    kern = _kernels.get(backend) if backend else _kernels.active
    th = np.ascontiguousarray(policy.threshold_array(), dtype=np.float64)
    N, L = cfg.n_devices, cfg.length
    sends = np.zeros(N, dtype=np.int64)
    hist = np.zeros(bucket.n_states, dtype=np.int64)
    by_state = np.zeros(bucket.n_states, dtype=np.int64)
    dev_loss = np.zeros(N)
    seq_loss = np.empty(cfg.sequences)
    sent = np.empty((L, N), dtype=np.uint8)
    traces = [] if keep_traces else None
    for s in range(cfg.sequences):
        idx = _device_draws(cfg, s, len(test))
        sums = np.zeros(N)
        kern.run_smart(idx, metric, lw, ls, th, bucket.P, bucket.Q, bucket.M,
                       sums, sends, hist, by_state, sent)
        seq_loss[s] = math.fsum(sums.tolist()) / (N * L)
        dev_loss += sums
        if keep_traces:
            traces.append({"idx": idx, "sent": sent.copy(), "forwarded": sent.copy()})
    avg, se = summarize(seq_loss)
    return MultiReport(
        "smart", N, avg, se, seq_loss, dev_loss / (cfg.sequences * L), sends.copy(), sends,
        bucket, hist, bucket.Q, cfg.sequences * L, traces,
    )


def simulate_multi(test: Dataset, cfg: MultiConfig, solver: PolicySolver, **kw) -> MultiReport:
    run = {
        "individual": simulate_individual,
        "hierarchical": simulate_hierarchical,
        "smart": simulate_smart,
    }[cfg.strategy]
    return run(test, cfg, solver, **kw)


@dataclass
class GridResult:
    rows: list
    best: tuple
    best_loss: float

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["r_prime", "b_prime", "avg_loss", "switch_drop_rate"])
        for row in self.rows:
            if row["valid"]:
                w.writerow([str(row["r_prime"]), str(row["b_prime"]),
                            repr(row["avg_loss"]), repr(row["switch_drop_rate"])])
            else:
                w.writerow([str(row["r_prime"]), str(row["b_prime"]), "invalid", "invalid"])
        return buf.getvalue()

    def to_dict(self) -> dict:
        return {
            "best": {"r_prime": str(self.best[0]), "b_prime": str(self.best[1])},
            "best_loss": self.best_loss,
            "cells": [
                {**row, "r_prime": str(row["r_prime"]), "b_prime": str(row["b_prime"])}
                for row in self.rows
            ],
        }


def grid_search_oversubscription(train: Dataset, cfg: MultiConfig, solver: PolicySolver,
                                 r_grid=DEFAULT_R_GRID, b_grid=DEFAULT_B_GRID, *,
                                 backend: str | None = None) -> GridResult:
    """Evaluate hierarchical over-subscription levels on the training data.

    Cells failing the hierarchical preconditions are recorded as invalid. The
    minimum-loss cell wins; ties go to smaller ``r'`` then smaller ``b'``.
    """
    r_grid = sorted(parse_rational(r) for r in r_grid)
    b_grid = sorted(parse_rational(b) for b in b_grid)
    if not r_grid or not b_grid:
        raise InputError("over-subscription grids must be non-empty")
    rows = []
    best, best_loss = None, math.inf
    for r in r_grid:
        for b in b_grid:
            try:
                rep = simulate_hierarchical(train, cfg.with_override(r, b), solver, backend=backend)
            except InputError as exc:
                rows.append({"r_prime": r, "b_prime": b, "valid": False, "reason": str(exc)})
                continue
            rows.append({
                "r_prime": r, "b_prime": b, "valid": True,
                "avg_loss": rep.avg_loss, "stderr": rep.stderr,
                "switch_drop_rate": rep.drop_rate,
            })
            if rep.avg_loss < best_loss:
                best, best_loss = (r, b), rep.avg_loss
    if best is None:
        raise InputError("no valid cell in the over-subscription grid")
    return GridResult(rows, best, best_loss)


def forwarded_per_slot(trace: dict) -> np.ndarray:
    return trace["forwarded"].sum(axis=1).astype(np.int64)
