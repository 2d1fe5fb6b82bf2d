"""K-fold evaluation protocol and train/test mismatch perturbations."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field, replace
from fractions import Fraction
from pathlib import Path

import numpy as np

from .core import Dataset, InputError, NaivePolicy, parse_rational, reduce_bucket
from .datasets import RawData, fit_raw_temperature, raw_to_dataset
from .mdp import DEFAULT_GAMMA, build_fg, lower_bound_loss, naive_threshold, solve_policy
from .mdp import top_fraction_order
from .metric import apply_metric_map, fit_metric_map
from .rng import derive_seed, numpy_generator
from .sim import SimConfig, simulate


def perturb_training(train: Dataset, fraction: float, side: str) -> Dataset:
    """Drop the ``floor(fraction*K)`` samples with the highest or lowest metric."""
    train.require_metrics()
    if side not in ("highest", "lowest"):
        raise InputError(f"side must be 'highest' or 'lowest', got {side!r}")
    if not 0 < fraction < 1:
        raise InputError(f"fraction must lie in (0, 1), got {fraction}")
    K = len(train)
    k = math.floor(fraction * K)
    if k >= K:
        raise InputError("perturbation would remove every sample")
    order = top_fraction_order(train)
    drop = order[:k] if side == "highest" else order[K - k:]
    keep = np.setdiff1d(np.arange(K), drop)
    return train.subset(keep)


@dataclass(frozen=True)
class ExperimentSpec:
    buckets: tuple
    loss: str = "top5"
    gamma: float = DEFAULT_GAMMA
    seed: int = 0
    folds: int = 3
    sequences: int = 100
    length: int = 100_000
    calibrate: bool = False
    perturb_fraction: float | None = None
    perturb_side: str | None = None
    output: str | None = None

    def __post_init__(self):
        if self.folds < 2:
            raise InputError("k-fold evaluation needs folds >= 2 (train and test must differ)")
        if not self.buckets:
            raise InputError("bucket grid is empty")
        buckets = tuple((parse_rational(r), parse_rational(b)) for r, b in self.buckets)
        for r, b in buckets:
            reduce_bucket(r, b)
        object.__setattr__(self, "buckets", buckets)
        if (self.perturb_fraction is None) != (self.perturb_side is None):
            raise InputError("perturb_fraction and perturb_side must be given together")


@dataclass
class EvalReport:
    spec: ExperimentSpec
    rows: list
    weak_only: float
    strong_only: float
    folds: list = field(default_factory=list)

    def to_dict(self) -> dict:
        s = self.spec
        return {
            "config": {
                "loss": s.loss, "gamma": s.gamma, "seed": s.seed, "folds": s.folds,
                "sequences": s.sequences, "length": s.length, "calibrate": s.calibrate,
                "perturb_fraction": s.perturb_fraction, "perturb_side": s.perturb_side,
                "buckets": [[str(r), str(b)] for r, b in s.buckets],
            },
            "weak_only": self.weak_only,
            "strong_only": self.strong_only,
            "results": self.rows,
            "folds": self.folds,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["r", "b", "policy", "loss", "stderr", "realized_rate"])
        for row in self.rows:
            r, b = row["r"], row["b"]
            w.writerow([r, b, "mdp", repr(row["mdp_loss"]), repr(row["mdp_stderr"]),
                        repr(row["mdp_rate"])])
            w.writerow([r, b, "naive", repr(row["naive_loss"]), repr(row["naive_stderr"]),
                        repr(row["naive_rate"])])
            w.writerow([r, b, "lower_bound", repr(row["lower_bound"]), "", ""])
            w.writerow([r, b, "weak_only", repr(self.weak_only), "", "0.0"])
            w.writerow([r, b, "strong_only", repr(self.strong_only), "", "1.0"])
        return buf.getvalue()

    def write(self, outdir) -> tuple[Path, Path]:
        out = Path(outdir)
        out.mkdir(parents=True, exist_ok=True)
        jp, cp = out / "eval.json", out / "eval.csv"
        jp.write_text(self.to_json(), encoding="utf-8")
        cp.write_text(self.to_csv(), encoding="utf-8")
        return jp, cp


def fold_indices(n: int, folds: int, seed: int) -> list[np.ndarray]:
    if n < folds:
        raise InputError(f"dataset of {n} samples is too small for {folds} folds")
    perm = numpy_generator(seed, "folds").permutation(n)
    return [np.sort(part) for part in np.array_split(perm, folds)]


def _combine(values, errors) -> tuple[float, float]:
    k = len(values)
    mean = math.fsum(values) / k
    se = math.sqrt(math.fsum(e * e for e in errors)) / k
    return mean, se


def kfold_eval(spec: ExperimentSpec, data: Dataset | RawData) -> EvalReport:
    """Train on ``folds-1`` parts, test on the held-out part, for every fold
    and every ``(r, b)`` in the grid; report fold-averaged losses."""
    raw = data if isinstance(data, RawData) else None
    parts = fold_indices(len(data), spec.folds, spec.seed)
    per_bucket = {key: [] for key in spec.buckets}
    fold_meta = []
    full = raw_to_dataset(raw, spec.loss) if raw is not None else data
    for f, test_idx in enumerate(parts):
        train_idx = np.concatenate([p for g, p in enumerate(parts) if g != f])
        try:
            if raw is not None:
                T = fit_raw_temperature(raw.subset(train_idx)) if spec.calibrate else 1.0
                ds = raw_to_dataset(raw, spec.loss, T)
            else:
                T, ds = 1.0, data
            train, test = ds.subset(np.sort(train_idx)), ds.subset(test_idx)
            mmap = fit_metric_map(train, seed=derive_seed(spec.seed, "metric", f), temperature=T)
            train = apply_metric_map(train, mmap)
            test = apply_metric_map(test, mmap)
            if spec.perturb_fraction is not None:
                train = perturb_training(train, spec.perturb_fraction, spec.perturb_side)
            fg = build_fg(train)
            cfg = SimConfig(spec.sequences, spec.length, derive_seed(spec.seed, "sim", f))
            for r, b in spec.buckets:
                bucket = reduce_bucket(r, b)
                policy = solve_policy(fg, bucket, spec.gamma)
                mdp = simulate(test, policy, cfg)
                naive = simulate(test, NaivePolicy(naive_threshold(train, r), bucket), cfg)
                per_bucket[(r, b)].append({
                    "fold": f,
                    "mdp_loss": mdp.avg_loss, "mdp_stderr": mdp.stderr,
                    "mdp_rate": mdp.realized_rate,
                    "naive_loss": naive.avg_loss, "naive_stderr": naive.stderr,
                    "naive_rate": naive.realized_rate,
                    "lower_bound": lower_bound_loss(test, r),
                    "thresholds": [float(t) if math.isfinite(t) else "inf"
                                   for t in policy.thresholds],
                    "sweeps": policy.sweeps,
                    "mdp_sequence_losses": mdp.sequence_losses.tolist(),
                })
        except InputError as exc:
            raise InputError(f"fold {f}: {exc}") from None
        fold_meta.append({"fold": f, "train": len(train), "test": len(test),
                          "lambda": mmap.lam, "temperature": T})
    rows = []
    for r, b in spec.buckets:
        fr = per_bucket[(r, b)]
        mdp, mdp_se = _combine([x["mdp_loss"] for x in fr], [x["mdp_stderr"] for x in fr])
        nv, nv_se = _combine([x["naive_loss"] for x in fr], [x["naive_stderr"] for x in fr])
        rows.append({
            "r": str(r), "b": str(b),
            "mdp_loss": mdp, "mdp_stderr": mdp_se,
            "mdp_rate": math.fsum(x["mdp_rate"] for x in fr) / len(fr),
            "naive_loss": nv, "naive_stderr": nv_se,
            "naive_rate": math.fsum(x["naive_rate"] for x in fr) / len(fr),
            "lower_bound": math.fsum(x["lower_bound"] for x in fr) / len(fr),
            "per_fold": fr,
        })
    weak = math.fsum(full.loss_weak.tolist()) / len(full)
    strong = math.fsum(full.loss_strong.tolist()) / len(full)
    return EvalReport(spec, rows, weak, strong, fold_meta)


def bucket_grid(rates, depths) -> tuple:
    return tuple((parse_rational(r), parse_rational(b)) for r in rates for b in depths)


DEFAULT_RATES = tuple(Fraction(x) for x in ("0.05", "0.1", "0.25", "0.5"))
DEFAULT_DEPTHS = tuple(Fraction(x) for x in ("1", "2", "5"))


@dataclass
class PerturbationReport:
    baseline: EvalReport
    perturbed: EvalReport

    def rows(self) -> list:
        out = []
        for base, pert in zip(self.baseline.rows, self.perturbed.rows):
            diffs = []
            for fb, fp in zip(base["per_fold"], pert["per_fold"]):
                diffs.extend(np.subtract(fp["mdp_sequence_losses"], fb["mdp_sequence_losses"]))
            d = np.asarray(diffs)
            out.append({
                "r": base["r"], "b": base["b"],
                "baseline_loss": base["mdp_loss"],
                "perturbed_loss": pert["mdp_loss"],
                "delta": float(d.mean()),
                "delta_stderr": float(d.std(ddof=1) / math.sqrt(d.size)) if d.size > 1 else 0.0,
            })
        return out

    def to_dict(self) -> dict:
        s = self.perturbed.spec
        return {
            "fraction": s.perturb_fraction,
            "side": s.perturb_side,
            "results": self.rows(),
            "baseline": self.baseline.to_dict(),
            "perturbed": self.perturbed.to_dict(),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["r", "b", "baseline_loss", "perturbed_loss", "delta", "delta_stderr"])
        for row in self.rows():
            w.writerow([row["r"], row["b"], repr(row["baseline_loss"]),
                        repr(row["perturbed_loss"]), repr(row["delta"]),
                        repr(row["delta_stderr"])])
        return buf.getvalue()

    def write(self, outdir) -> tuple[Path, Path]:
        out = Path(outdir)
        out.mkdir(parents=True, exist_ok=True)
        jp, cp = out / "perturb.json", out / "perturb.csv"
        jp.write_text(self.to_json(), encoding="utf-8")
        cp.write_text(self.to_csv(), encoding="utf-8")
        return jp, cp


def perturbation_study(spec: ExperimentSpec, data) -> PerturbationReport:
    """Paired comparison of the MDP test loss with and without perturbed
    training folds; both runs share folds, metric maps and draw streams."""
    if spec.perturb_fraction is None:
        raise InputError("perturbation study needs perturb_fraction and perturb_side")
    base = replace(spec, perturb_fraction=None, perturb_side=None)
    return PerturbationReport(kfold_eval(base, data), kfold_eval(spec, data))
