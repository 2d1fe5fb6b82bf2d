"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run alone with ``pytest tests/test_acceptance.py -s`` or see the
"acceptance criteria" section of the terminal summary.
"""

import functools
import math
import random
import sys
import time
from fractions import Fraction

import numpy as np
import pytest

from edgeoffload import (ExperimentSpec, MultiConfig, NaivePolicy, PolicySolver, ScaledBucket,
                         SimConfig, apply_metric_map, arrival_curve_violations,
                         bucket_trajectory, build_fg, fit_metric_map, kfold_eval,
                         naive_threshold, reduce_bucket, simulate, simulate_multi,
                         solve_policy, standard_fixture)
from edgeoffload import cli
from edgeoffload.experiments import DEFAULT_DEPTHS, DEFAULT_RATES, bucket_grid, fold_indices
from edgeoffload.multi import (AggregateBucket, forwarded_per_slot, grid_search_oversubscription,
                               simulate_hierarchical, simulate_individual, simulate_smart)
from edgeoffload.rng import derive_seed
from conftest import ACCEPTANCE_LINES, make_dataset
from oracles import (best_threshold_values, discrete_instance, exact_bucket_run, nadaraya_watson,
                     policy_values)

SEED = 0
EVAL_SEQUENCES, EVAL_LENGTH = 20, 20_000


def record(number, title, ok, detail, started):
    line = (f"{'PASS' if ok else 'FAIL'} criterion {number} ({title}): {detail} "
            f"[{time.perf_counter() - started:.1f}s]")
    ACCEPTANCE_LINES.append(line)
    print(line)
    assert ok, line


@functools.lru_cache(maxsize=None)
def fixture():
    return standard_fixture()


@functools.lru_cache(maxsize=None)
def fold_split(fold):
    """Train/test split of the shipped fixture, metric fitted on train, as
    the evaluation protocol builds it."""
    data = fixture()
    parts = fold_indices(len(data), 3, SEED)
    train_idx = np.sort(np.concatenate([p for g, p in enumerate(parts) if g != fold]))
    train, test = data.subset(train_idx), data.subset(parts[fold])
    mmap = fit_metric_map(train, seed=derive_seed(SEED, "metric", fold))
    return apply_metric_map(train, mmap), apply_metric_map(test, mmap)


@functools.lru_cache(maxsize=None)
def eval_report():
    spec = ExperimentSpec(bucket_grid(DEFAULT_RATES, DEFAULT_DEPTHS), seed=SEED,
                          sequences=EVAL_SEQUENCES, length=EVAL_LENGTH)
    return kfold_eval(spec, fixture())


def test_criterion_1_bucket_exactness():
    t0 = time.perf_counter()
    rng = random.Random(11)
    gen = np.random.default_rng(11)
    pairs = [(Fraction(1, 10), Fraction(3, 2))]
    while len(pairs) < 50:
        d = rng.randint(2, 20)
        r = Fraction(rng.randint(1, d - 1), d)
        db = rng.choice([1, 2, 3, 4])
        b = Fraction(rng.randint(db, 6 * db), db)
        pairs.append((r, b))
    mismatched = []
    for r, b in pairs:
        coins = gen.random(100_000) < gen.uniform(0.1, 0.9)
        bk = reduce_bucket(r, b)
        got = bucket_trajectory(coins, bk).tolist()
        if got != exact_bucket_run(r, b, coins.tolist()):
            mismatched.append((str(r), str(b)))
    elapsed = time.perf_counter() - t0
    n_frac = sum(b.denominator > 1 for _, b in pairs)
    record(1, "token-bucket exactness", not mismatched and elapsed < 5.0,
           f"{len(pairs) - len(mismatched)}/50 pairs bit-exact over 1e5 steps "
           f"({n_frac} with fractional b), {elapsed:.2f}s < 5s", t0)


def test_criterion_2_oracle_optimality():
    t0 = time.perf_counter()
    rng = np.random.default_rng(22)
    worst, checked = 0.0, 0
    for i in range(200):
        gamma = (0.0, 0.5, 0.9)[i % 3]
        P = int(rng.integers(2, 6))
        Q = int(rng.integers(1, P))
        M = P + int(rng.integers(0, 4))
        bk = ScaledBucket(P, Q, M)
        levels = rng.choice(np.linspace(0.0, 1.0, 11), size=int(rng.integers(1, 6)), replace=False)
        K = int(rng.integers(3, 12))
        metrics = rng.choice(levels, size=K)
        rewards = rng.normal(0.2, 0.5, size=K).round(3)
        data = make_dataset(metrics, rewards)
        pol = solve_policy(build_fg(data), bk, gamma)
        lv, prob, mass = discrete_instance(metrics, rewards)
        best = best_threshold_values(lv, prob, mass, P, Q, M, gamma)
        mine = policy_values(lv, prob, mass, pol.thresholds, P, Q, M, gamma)
        worst = max(worst, float(np.max(np.abs(mine - best))),
                    float(np.max(np.abs(pol.values - best))))
        checked += 1
    elapsed = time.perf_counter() - t0
    record(2, "oracle optimality", checked >= 200 and worst <= 1e-8 and elapsed < 60,
           f"{checked} instances, max |V - V*| = {worst:.2e} <= 1e-8, {elapsed:.1f}s < 60s", t0)


def test_criterion_3_kernel_regression_oracle():
    t0 = time.perf_counter()
    worst = 0.0
    for seed in (3, 4):
        data = standard_fixture(n=1000, seed=seed)
        mmap = fit_metric_map(data, seed=seed)
        ref = nadaraya_watson(mmap.h_grid.tolist(), data.entropy.tolist(),
                              data.reward.tolist(), mmap.lam)
        worst = max(worst, float(np.max(np.abs(mmap.f_values - ref))))
    record(3, "kernel-regression oracle", worst <= 1e-12,
           f"two 1e3-sample fixtures, max grid deviation {worst:.1e} <= 1e-12", t0)


def test_criterion_4_reference_sandwich():
    t0 = time.perf_counter()
    rep = eval_report()
    strong, weak = rep.strong_only, rep.weak_only
    broken, worst_gap = [], 0.0
    for row in rep.rows:
        se = max(row["mdp_stderr"], row["naive_stderr"])
        chain = [strong, row["lower_bound"], row["mdp_loss"], row["naive_loss"], weak]
        for lo, hi in zip(chain, chain[1:]):
            if lo > hi + 3 * se:
                broken.append(f"({row['r']},{row['b']})")
        if row["b"] == "5":
            gap = (row["mdp_loss"] - row["lower_bound"]) / row["mdp_stderr"]
            worst_gap = max(worst_gap, gap)
    elapsed = time.perf_counter() - t0
    ok = not broken and worst_gap <= 5 and elapsed < 300
    record(4, "reference sandwich", ok,
           f"{len(rep.rows)} cells, sandwich breaks {broken or 'none'}; "
           f"worst b=5 gap to lower bound {worst_gap:.2f} SE <= 5", t0)


def test_criterion_5_threshold_structure():
    t0 = time.perf_counter()
    depths = [Fraction(x) for x in ("1", "3/2", "2", "3", "5")]
    trains = [fold_split(f)[0] for f in range(3)]
    full = fixture()
    trains.append(apply_metric_map(full, fit_metric_map(full, seed=SEED)))
    bad_n, bad_b, tables = 0, 0, 0
    for train in trains:
        fg = build_fg(train)
        for r in DEFAULT_RATES:
            prev = None
            for b in depths:
                th = solve_policy(fg, reduce_bucket(r, b)).thresholds
                tables += 1
                bad_n += int(np.count_nonzero(th[1:] > th[:-1]))
                if prev is not None:
                    bad_b += int(np.count_nonzero(prev > th[: prev.size]))
                prev = th
    record(5, "threshold structure", bad_n == 0 and bad_b == 0,
           f"{tables} tables; increases in n: {bad_n}, decreases in b: {bad_b}", t0)


def test_criterion_6_conformance():
    t0 = time.perf_counter()
    violations, audited = 0, 0
    train, test = fold_split(0)
    fg = build_fg(train)
    cfg = SimConfig(4, EVAL_LENGTH, seed=derive_seed(SEED, "sim", 0))
    for r, b in bucket_grid(DEFAULT_RATES, DEFAULT_DEPTHS):
        bk = reduce_bucket(r, b)
        for pol in (solve_policy(fg, bk), NaivePolicy(naive_threshold(train, r), bk)):
            for _, sent in simulate(test, pol, cfg, keep_traces=True).traces:
                violations += arrival_curve_violations(sent, bk)
                audited += 1
    solver = PolicySolver(fg)
    for N in (2, 4, 8):
        for b_tot in (N, 2 * N):
            r_tot = Fraction(N, 10)
            agg = AggregateBucket.from_rational(r_tot, b_tot)
            base = MultiConfig(N, r_tot, b_tot, sequences=2, length=EVAL_LENGTH, seed=SEED)
            runs = [MultiConfig(N, r_tot, b_tot, s, sequences=2, length=EVAL_LENGTH, seed=SEED)
                    for s in ("individual", "hierarchical", "smart")]
            runs += [base.with_override(rp, bp) for rp, bp in
                     ((r_tot / N * 2, Fraction(b_tot, N)), (r_tot / N, 2 * Fraction(b_tot, N)),
                      (Fraction(1, 2), Fraction(10)))]
            for mc in runs:
                rep = simulate_multi(test, mc, solver, keep_traces=True)
                for tr in rep.traces:
                    violations += arrival_curve_violations(forwarded_per_slot(tr), agg)
                    audited += 1
    record(6, "arrival-curve conformance", violations == 0,
           f"{violations} violations across {audited} audited streams", t0)


def _paired(a, b):
    """Mean of ``a - b`` over paired sequences and its standard error."""
    d = np.asarray(a) - np.asarray(b)
    return float(d.mean()), float(d.std(ddof=1) / math.sqrt(d.size))


def test_criterion_7_multi_device_ordering():
    t0 = time.perf_counter()
    train, test = fold_split(0)
    solver = PolicySolver(build_fg(train))
    failures, notes = [], []
    for N in (2, 4, 8):
        for b_tot in (N, 2 * N):
            r_tot = Fraction(N, 10)
            search = MultiConfig(N, r_tot, b_tot, sequences=5, length=EVAL_LENGTH,
                                 seed=derive_seed(SEED, "grid", N, b_tot))
            best = grid_search_oversubscription(train, search, solver).best

            def cfg(strategy):
                return MultiConfig(N, r_tot, b_tot, strategy, sequences=EVAL_SEQUENCES,
                                   length=EVAL_LENGTH, seed=SEED)

            ind = simulate_individual(test, cfg("individual"), solver, keep_traces=True)
            hier = simulate_hierarchical(test, cfg("individual").with_override(*best), solver)
            smart = simulate_smart(test, cfg("smart"), solver)
            d1, s1 = _paired(smart.sequence_losses, hier.sequence_losses)
            d2, s2 = _paired(hier.sequence_losses, ind.sequence_losses)
            if d1 > 3 * s1 or d2 > 3 * s2:
                failures.append(f"N={N} b_tot={b_tot}")
            eq = simulate_hierarchical(test, cfg("hierarchical"), solver, keep_traces=True)
            same = eq.drops == 0 and np.array_equal(eq.sequence_losses, ind.sequence_losses)
            same = same and all(np.array_equal(x["forwarded"], y["sent"])
                                for x, y in zip(eq.traces, ind.traces))
            if not same:
                failures.append(f"equal split N={N} b_tot={b_tot}")
            notes.append(f"N={N},b={b_tot}:{smart.avg_loss:.4f}<={hier.avg_loss:.4f}"
                         f"<={ind.avg_loss:.4f}")
    elapsed = time.perf_counter() - t0
    record(7, "multi-device ordering", not failures and elapsed < 600,
           f"{'; '.join(notes)}; equal split identical to individual; "
           f"failures: {failures or 'none'}", t0)


def test_criterion_8_robustness_asymmetry():
    t0 = time.perf_counter()
    base = eval_report()
    spec = base.spec
    perturbed = {}
    for side in ("lowest", "highest"):
        s = ExperimentSpec(spec.buckets, seed=spec.seed, sequences=spec.sequences,
                           length=spec.length, perturb_fraction=0.1, perturb_side=side)
        perturbed[side] = kfold_eval(s, fixture())

    def per_sequence_change(rep):
        # paired change per (fold, sequence), averaged over every (r, b) cell
        cells = []
        for b_row, p_row in zip(base.rows, rep.rows):
            cells.append(np.concatenate([
                np.subtract(fp["mdp_sequence_losses"], fb["mdp_sequence_losses"])
                for fb, fp in zip(b_row["per_fold"], p_row["per_fold"])
            ]))
        return np.mean(cells, axis=0)

    low = per_sequence_change(perturbed["lowest"])
    high = per_sequence_change(perturbed["highest"])
    e = high - low
    se = float(e.std(ddof=1) / math.sqrt(e.size))
    margin = abs(high.mean()) - abs(low.mean())
    record(8, "robustness asymmetry", margin > 3 * se,
           f"|change| dropping lowest 10% = {abs(low.mean()):.5f}, highest 10% = "
           f"{abs(high.mean()):.5f}; margin {margin:.5f} > 3 x {se:.5f}", t0)


def test_criterion_9_determinism(tmp_path):
    t0 = time.perf_counter()
    assert cli.main(["gen", "--output", str(tmp_path), "--seed", "1"]) == 0
    cfg = tmp_path / "eval.toml"
    cfg.write_text(
        f'data = "{tmp_path / "dataset.csv"}"\nseed = 7\nfolds = 3\nsequences = 5\n'
        'length = 10000\nrates = ["0.05", "0.1", "0.25", "0.5"]\ndepths = [1, 2, 5]\n'
    )
    outs = []
    for run in ("first", "second"):
        assert cli.main(["eval", "--config", str(cfg), "--output", str(tmp_path / run)]) == 0
        outs.append({name: (tmp_path / run / name).read_bytes()
                     for name in ("eval.json", "eval.csv")})
    same = outs[0] == outs[1]
    record(9, "determinism", same,
           f"eval.json and eval.csv byte-identical across runs: {same}", t0)


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-q", "-s"]))
