"""Offloading metric: weak-classifier entropy mapped to expected reward.

The map is a Nadaraya-Watson regression of reward on entropy with a Gaussian
kernel ``exp(-lam * (h - h_k)**2)``, tabulated on 1000 uniformly spaced
entropies and read back by linear interpolation.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .core import Dataset, InputError
from .rng import numpy_generator

GRID_POINTS = 1000
LAMBDA_GRID = tuple(2.0**k for k in range(-6, 15))
T_MIN, T_MAX = 0.05, 20.0
_CHUNK = 1 << 22  # kernel matrix entries per block


def entropy(z) -> float:
    """Shannon entropy in nats, with ``0 log 0 = 0``."""
    z = np.asarray(z, dtype=np.float64)
    if z.ndim != 1 or z.size == 0:
        raise InputError("probability vector must be a non-empty 1-d array")
    if np.any(z < 0) or not np.all(np.isfinite(z)):
        raise InputError("probability vector has negative or non-finite entries")
    if abs(z.sum() - 1.0) > 1e-6:
        raise InputError(f"probabilities sum to {z.sum():.9f}, not 1")
    nz = z[z > 0]
    return float(max(0.0, -np.sum(nz * np.log(nz))))


# -- temperature scaling ----------------------------------------------------


def _log_probs(probs) -> np.ndarray:
    with np.errstate(divide="ignore"):
        return np.log(np.asarray(probs, dtype=np.float64))


def temperature_nll(log_probs: np.ndarray, labels: np.ndarray, T: float) -> float:
    """Mean NLL of labels under ``z ** (1/T)`` renormalised."""
    s = log_probs / T
    rows = np.arange(s.shape[0])
    arg = np.argmax(s, axis=1)
    top = s[rows, arg][:, None]
    # log1p over the non-maximal terms keeps tiny NLLs from rounding to 0
    e = np.exp(s - top)
    e[rows, arg] = 0.0
    picked = s[rows, labels]
    return float(np.mean((top[:, 0] - picked) + np.log1p(np.sum(e, axis=1))))


def apply_temperature(z, T: float) -> np.ndarray:
    """Rescale one probability vector by ``z ** (1/T)`` and renormalise."""
    s = _log_probs(z) / T
    s = s - np.max(s)
    e = np.exp(s)
    return e / e.sum()


def calibrate_temperature(probs, labels, ids=None, grid_points: int = 121) -> float:
    """Temperature minimising mean NLL over ``[0.05, 20]``.

    A log-spaced scan (which always contains T=1) brackets the minimum, then a
    golden-section search refines it to 1e-4 relative width. Scan values tied
    with the minimum (to 1e-12 relative) resolve toward T=1, and refinement is
    kept only if it strictly improves on the scan.
    """
    lp = _log_probs(probs)
    labels = np.asarray(labels, dtype=np.int64)
    if lp.ndim != 2 or lp.shape[0] == 0 or lp.shape[0] != labels.shape[0]:
        raise InputError("probs and labels must be non-empty and aligned")
    if np.any(labels < 0) or np.any(labels >= lp.shape[1]):
        raise InputError("label index out of range")
    picked = lp[np.arange(len(labels)), labels]
    bad = np.flatnonzero(~np.isfinite(picked))
    if bad.size:
        who = ids[bad[0]] if ids is not None else int(bad[0])
        raise InputError(f"sample {who}: label has zero probability, NLL is infinite")

    grid = np.exp(np.linspace(math.log(T_MIN), math.log(T_MAX), grid_points))
    grid[np.argmin(np.abs(np.log(grid)))] = 1.0
    vals = np.array([temperature_nll(lp, labels, T) for T in grid])
    best = vals.min()
    tied = np.flatnonzero(vals <= best + 1e-12 * abs(best))
    i = tied[np.argmin(np.abs(np.log(grid[tied])))]
    T_best, v_best = float(grid[i]), float(vals[i])
    if len(tied) > 1:
        return T_best

    lo = math.log(grid[max(i - 1, 0)])
    hi = math.log(grid[min(i + 1, len(grid) - 1)])
    f = lambda u: temperature_nll(lp, labels, math.exp(u))  # noqa: E731
    invphi = (math.sqrt(5) - 1) / 2
    c, d = hi - invphi * (hi - lo), lo + invphi * (hi - lo)
    fc, fd = f(c), f(d)
    while hi - lo > 1e-4:
        if fc <= fd:
            hi, d, fd = d, c, fc
            c = hi - invphi * (hi - lo)
            fc = f(c)
        else:
            lo, c, fc = c, d, fd
            d = lo + invphi * (hi - lo)
            fd = f(d)
    u = 0.5 * (lo + hi)
    fu = f(u)
    if fu < v_best:
        return math.exp(u)
    return T_best


# -- kernel regression ------------------------------------------------------


def kernel_regression(h_query, h_train, r_train, lam: float) -> np.ndarray:
    """Gaussian-kernel weighted average of ``r_train`` at each query entropy.

    Weights for a query are shifted by its nearest squared distance before
    exponentiation; the shift cancels in the ratio and keeps large ``lam``
    from underflowing every weight to zero.
    """
    hq = np.asarray(h_query, dtype=np.float64)
    ht = np.asarray(h_train, dtype=np.float64)
    rt = np.asarray(r_train, dtype=np.float64)
    out = np.empty(hq.shape[0])
    step = max(1, _CHUNK // max(1, ht.shape[0]))
    for s in range(0, hq.shape[0], step):
        d2 = (hq[s : s + step, None] - ht[None, :]) ** 2
        d2 -= d2.min(axis=1, keepdims=True)
        w = np.exp(-lam * d2)
        out[s : s + step] = (w @ rt) / w.sum(axis=1)
    return out


@dataclass(frozen=True, eq=False)
class MetricMap:
    lam: float
    temperature: float
    h_grid: np.ndarray
    f_values: np.ndarray
    cv_mse: tuple = ()

    def __post_init__(self):
        h = np.array(self.h_grid, dtype=np.float64)
        f = np.array(self.f_values, dtype=np.float64)
        if h.shape != (GRID_POINTS,) or f.shape != (GRID_POINTS,):
            raise InputError(f"metric map needs {GRID_POINTS} grid points")
        if not np.all(np.diff(h) > 0):
            raise InputError("metric map grid must be strictly increasing")
        if not np.all(np.isfinite(f)):
            raise InputError("metric map values must be finite")
        h.setflags(write=False)
        f.setflags(write=False)
        object.__setattr__(self, "h_grid", h)
        object.__setattr__(self, "f_values", f)

    def __call__(self, h):
        return metric_of(h, self)

    def to_dict(self) -> dict:
        return {
            "lambda": float(self.lam),
            "temperature": float(self.temperature),
            "h_grid": [float(x) for x in self.h_grid],
            "f_values": [float(x) for x in self.f_values],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "MetricMap":
        try:
            return cls(
                lam=float(d["lambda"]),
                temperature=float(d["temperature"]),
                h_grid=d["h_grid"],
                f_values=d["f_values"],
            )
        except (KeyError, TypeError) as exc:
            raise InputError(f"malformed metric map: {exc}") from exc

    @classmethod
    def from_json(cls, text: str) -> "MetricMap":
        return cls.from_dict(json.loads(text))


def metric_of(h, mmap: MetricMap):
    """Linear interpolation of the tabulated map, clamped at both ends."""
    out = np.interp(h, mmap.h_grid, mmap.f_values)
    return float(out) if np.ndim(out) == 0 else out


def select_lambda(h, r, seed: int, lambdas=LAMBDA_GRID) -> tuple[float, list[float]]:
    """Pick the kernel width by held-out MSE on a seeded 50/50 split.

    Ties go to the smaller ``lam`` (the smoother fit).
    """
    n = len(h)
    perm = numpy_generator(seed, "metric-cv").permutation(n)
    fit, held = perm[: n // 2], perm[n // 2 :]
    mses = []
    for lam in lambdas:
        pred = kernel_regression(h[held], h[fit], r[fit], lam)
        mses.append(float(np.mean((pred - r[held]) ** 2)))
    best = int(np.argmin(mses))
    return float(lambdas[best]), mses


def fit_metric_map(train: Dataset, seed: int = 0, temperature: float = 1.0) -> MetricMap:
    """Fit the entropy-to-expected-reward map on ``train``."""
    h = np.asarray(train.entropy)
    r = np.asarray(train.reward)
    ok = np.isfinite(h) & np.isfinite(r)
    if np.count_nonzero(ok) < 10:
        raise InputError("metric fit needs at least 10 samples with finite entropy and reward")
    h, r = h[ok], r[ok]
    lo, hi = float(h.min()), float(h.max())
    if hi <= lo:
        # all entropies equal: the map is the mean reward everywhere
        grid = np.linspace(lo, lo + 1.0, GRID_POINTS)
        return MetricMap(1.0, temperature, grid, np.full(GRID_POINTS, float(r.mean())))
    lam, mses = select_lambda(h, r, seed)
    grid = np.linspace(lo, hi, GRID_POINTS)
    f = kernel_regression(grid, h, r, lam)
    return MetricMap(lam, temperature, grid, f, tuple(mses))


def apply_metric_map(data: Dataset, mmap: MetricMap) -> Dataset:
    return data.with_metrics(metric_of(np.asarray(data.entropy), mmap))
