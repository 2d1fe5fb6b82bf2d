"""Optimal state-dependent offload thresholds by value iteration.

For a state with a full token, the best threshold maximises
``G(theta) - F(theta) * d`` where ``d = gamma * (V[keep] - V[send])`` is the
discounted value lost by spending a token. Each candidate threshold is a
line in ``d``, so the maximiser is read off the upper envelope of those lines
with a binary search instead of a scan over every training metric.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from . import _kernels
from .core import Dataset, InputError, PolicyTable, ScaledBucket, parse_rational, reduce_bucket

DEFAULT_GAMMA = 0.99
MAX_SWEEPS = 10**6


class NonConvergenceError(RuntimeError):
    def __init__(self, sweeps: int, residual: float):
        super().__init__(
            f"value iteration did not converge in {sweeps} sweeps (residual {residual:.3e})"
        )
        self.sweeps = sweeps
        self.residual = residual


@dataclass(frozen=True, eq=False)
class EmpiricalFG:
    """Tail fraction ``F`` and tail reward mass ``G`` of the training metrics.

    ``values`` holds the distinct metrics ascending; ``tail_count[i]`` and
    ``tail_reward[i]`` aggregate every sample with metric ``>= values[i]``
    (one extra trailing entry of zero for thresholds above the maximum).
    """

    values: np.ndarray
    tail_count: np.ndarray
    tail_reward: np.ndarray
    K: int

    def _index(self, theta):
        return np.searchsorted(self.values, theta, side="left")

    def F(self, theta):
        out = self.tail_count[self._index(theta)] / self.K
        return float(out) if np.ndim(out) == 0 else out

    def G(self, theta):
        out = self.tail_reward[self._index(theta)] / self.K
        return float(out) if np.ndim(out) == 0 else out

    @property
    def sorted_metrics(self) -> np.ndarray:
        return np.repeat(self.values, np.diff(-self.tail_count))

    def candidates(self):
        """Thresholds ``+inf, max, ..., min`` with their F and G (F ascending)."""
        theta = np.concatenate([[np.inf], self.values[::-1]])
        F = self.tail_count[::-1] / self.K
        G = self.tail_reward[::-1] / self.K
        return theta, F, G


def build_fg(train: Dataset) -> EmpiricalFG:
    train.require_metrics()
    m = np.asarray(train.metric)
    r = np.asarray(train.reward)
    order = np.argsort(-m, kind="stable")
    m_desc, r_desc = m[order], r[order]
    values_desc, starts = np.unique(-m_desc, return_index=True)
    values_desc = -values_desc
    ends = np.append(starts[1:], len(m_desc))
    # compensated running sum over descending metrics, read at group ends
    total = 0.0
    comp = 0.0
    tail_desc = np.empty(len(values_desc))
    rl = r_desc.tolist()
    pos = 0
    for g, end in enumerate(ends.tolist()):
        while pos < end:
            x = rl[pos]
            t = total + x
            if abs(total) >= abs(x):
                comp += (total - t) + x
            else:
                comp += (x - t) + total
            total = t
            pos += 1
        tail_desc[g] = total + comp
    values = values_desc[::-1].copy()
    tail_count = np.append(ends[::-1], 0).astype(np.int64)
    tail_reward = np.append(tail_desc[::-1], 0.0)
    for a in (values, tail_count, tail_reward):
        a.setflags(write=False)
    return EmpiricalFG(values, tail_count, tail_reward, len(m))


def upper_envelope(F: np.ndarray, G: np.ndarray):
    """Indices of lines ``G - F*d`` on the upper envelope, ordered by
    increasing slope ``-F``, and the breakpoints between consecutive ones.

    ``F`` must be strictly increasing. Lines that only touch the envelope at a
    single point are dropped in favour of the one with smaller ``F``.
    """
    hull: list[int] = []
    slope = -F
    for j in range(len(F) - 1, -1, -1):
        while len(hull) >= 2:
            a, b = hull[-2], hull[-1]
            # b is redundant when a and j cross at or left of where a and b cross
            lhs = (G[a] - G[j]) * (slope[b] - slope[a])
            rhs = (G[a] - G[b]) * (slope[j] - slope[a])
            if lhs <= rhs:
                hull.pop()
            else:
                break
        hull.append(j)
    h = np.asarray(hull, dtype=np.int64)
    xs = (G[h[:-1]] - G[h[1:]]) / (slope[h[1:]] - slope[h[:-1]])
    return h, xs


def solve_policy(
    fg: EmpiricalFG,
    bucket: ScaledBucket,
    gamma: float = DEFAULT_GAMMA,
    *,
    max_sweeps: int = MAX_SWEEPS,
    record_residuals: bool = False,
    backend: str | None = None,
):
    """Value-iterate to the optimal threshold table for ``bucket``.

    Sweeps are Jacobi style (every state reads the previous sweep's values)
    and stop once the sup-norm change is below ``1e-10 * (1 - gamma)`` and no
    threshold moved. Ties between thresholds go to the larger one.

    With ``record_residuals`` the per-sweep residuals are returned alongside
    the table.
    """
    if not 0 <= gamma < 1:
        raise InputError(f"gamma must lie in [0, 1), got {gamma}")
    theta, F, G = fg.candidates()
    hull, xs = upper_envelope(F, G)
    hF = np.ascontiguousarray(F[hull])
    hG = np.ascontiguousarray(G[hull])
    xs = np.ascontiguousarray(xs, dtype=np.float64)
    kern = _kernels.get(backend) if backend else _kernels.active
    V = np.zeros(bucket.n_states)
    choice = np.empty(bucket.n_send_states, dtype=np.int64)
    history = np.empty(min(max_sweeps, 200_000) if record_residuals else 0)
    tol = 1e-10 * (1.0 - gamma)
    sweeps, resid, ok = kern.value_iteration(
        hF, hG, xs, bucket.P, bucket.Q, bucket.M, float(gamma), tol,
        int(max_sweeps), V, choice, history,
    )
    if not ok:
        raise NonConvergenceError(sweeps, resid)
    thresholds = theta[hull[choice]]
    table = PolicyTable(bucket, float(gamma), thresholds, V, sweeps=sweeps, residual=resid)
    if record_residuals:
        return table, history[: min(sweeps, history.size)].copy()
    return table


def naive_threshold(train: Dataset, r) -> float:
    """Nearest-rank ``(1 - r)`` quantile of the training metrics."""
    train.require_metrics()
    r = parse_rational(r)
    m = np.sort(np.asarray(train.metric))
    K = len(m)
    rank = max(1, math.ceil((1 - r) * K))
    return float(m[min(rank, K) - 1])


def top_fraction_order(data: Dataset) -> np.ndarray:
    """Indices by descending metric, equal metrics by ascending id."""
    ids = np.array(data.ids)
    return np.lexsort((ids, -np.asarray(data.metric)))


def lower_bound_loss(test: Dataset, r) -> float:
    """Loss when exactly the top ``floor(r*K)`` samples by metric are offloaded."""
    test.require_metrics()
    r = parse_rational(r)
    if not 0 <= r <= 1:
        raise InputError(f"rate must lie in [0, 1], got {r}")
    K = len(test)
    k = math.floor(Fraction(r) * K)
    top = top_fraction_order(test)[:k]
    gain = math.fsum(test.reward[top].tolist()) / K
    return math.fsum(test.loss_weak.tolist()) / K - gain


class PolicySolver:
    """Memoised ``(r, b) -> PolicyTable`` for one training set and discount."""

    def __init__(self, fg: EmpiricalFG, gamma: float = DEFAULT_GAMMA, backend: str | None = None):
        self.fg = fg
        self.gamma = gamma
        self.backend = backend
        self._memo: dict = {}

    def __call__(self, r, b) -> PolicyTable:
        key = (parse_rational(r), parse_rational(b))
        if key not in self._memo:
            self._memo[key] = solve_policy(
                self.fg, reduce_bucket(*key), self.gamma, backend=self.backend
            )
        return self._memo[key]
