import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from edgeoffload import (InputError, SynthParams, build_fg, fit_metric_map, ingest,
                         read_csv, read_jsonl, reduce_bucket, solve_policy, synthesize)
from edgeoffload.datasets import dataset_digest, raw_to_dataset, standard_fixture, write_csv
from edgeoffload.metric import apply_metric_map


def test_csv_round_trip(tmp_path):
    p = tmp_path / "d.csv"
    p.write_text("id,entropy,loss_weak,loss_strong\na,0.1,1,0\nb,2.5,0,0\nc,1.0,1,1\n")
    d = read_csv(p)
    assert len(d) == 3
    assert np.array_equal(d.reward, d.loss_weak - d.loss_strong)
    out = tmp_path / "e.csv"
    write_csv(d, out)
    assert dataset_digest(read_csv(out)) == dataset_digest(d)


@pytest.mark.parametrize("body,where", [
    ("id,entropy,loss_weak\n", ":1:"),
    ("id,entropy,loss_weak,loss_strong\na,0.1,1\n", ":2:"),
    ("id,entropy,loss_weak,loss_strong\na,0.1,1,0\nb,x,1,0\n", ":3:"),
    ("id,entropy,loss_weak,loss_strong\na,-1,1,0\n", ":2:"),
    ("id,entropy,loss_weak,loss_strong\na,0.1,1,0\na,0.2,1,0\n", "duplicate"),
])
def test_csv_errors_name_the_line(tmp_path, body, where):
    p = tmp_path / "bad.csv"
    p.write_text(body)
    with pytest.raises(InputError, match=where):
        read_csv(p)


def test_raw_jsonl_example(tmp_path):
    p = tmp_path / "raw.jsonl"
    p.write_text(json.dumps({"id": "q", "weak_probs": [1, 0], "strong_probs": [0, 1],
                             "label": 1}) + "\n")
    d, T = ingest(p, "jsonl", "top1")
    assert (d.loss_weak[0], d.loss_strong[0], d.reward[0]) == (1, 0, 1)
    assert T == 1.0 and d.entropy[0] == 0


def test_raw_jsonl_errors(tmp_path):
    p = tmp_path / "raw.jsonl"
    rec = {"id": "a", "weak_probs": [0.5, 0.5], "strong_probs": [1, 0], "label": 0}
    p.write_text(json.dumps(rec) + "\n" + json.dumps(rec) + "\n")
    with pytest.raises(InputError, match="duplicate"):
        read_jsonl(p)
    p.write_text(json.dumps(rec) + "\n{broken\n")
    with pytest.raises(InputError, match=":2:"):
        read_jsonl(p)
    p.write_text(json.dumps({**rec, "weak_probs": [0.5, 0.6]}) + "\n")
    with pytest.raises(InputError, match="'a'"):
        ingest(p, "jsonl", "top1")
    with pytest.raises(InputError):
        ingest(p, "parquet")


def test_calibrated_ingest_changes_entropy(tmp_path):
    rng = np.random.default_rng(0)
    lines = []
    for i in range(200):
        z = rng.dirichlet(np.full(5, 0.3))
        y = int(rng.integers(5))
        z = 0.98 * z + 0.02 / 5
        lines.append(json.dumps({"id": i, "weak_probs": z.tolist(), "strong_probs": z.tolist(),
                                 "label": y}))
    p = tmp_path / "raw.jsonl"
    p.write_text("\n".join(lines) + "\n")
    plain, T1 = ingest(p, "jsonl", "top1")
    cal, T = ingest(p, "jsonl", "top1", calibrate=True)
    assert T1 == 1.0 and T > 1.0
    assert np.all(cal.entropy >= plain.entropy - 1e-12)
    assert np.array_equal(cal.loss_weak, plain.loss_weak)


def test_synthesize_is_deterministic(tmp_path):
    a = synthesize(SynthParams(), 10_000, 3)
    b = synthesize(SynthParams(), 10_000, 3)
    assert dataset_digest(a) == dataset_digest(b)
    write_csv(a, tmp_path / "a.csv")
    write_csv(b, tmp_path / "b.csv")
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
    assert dataset_digest(synthesize(SynthParams(), 100, 4)) != dataset_digest(a.subset(range(100)))


def test_synthesize_rejects_bad_input():
    with pytest.raises(InputError):
        synthesize(SynthParams(), 0, 1)
    for bad in (dict(weights=(1, 1), means=(0, 1, 2), sds=(1, 1, 1)), dict(peak=1.5),
                dict(sds=(0.1, -1, 1)), dict(width=0), dict(flatness=0.5)):
        with pytest.raises(InputError):
            SynthParams(**bad)


def test_zero_reward_fixture_never_sends():
    d = synthesize(SynthParams(peak=0.0), 500, 1)
    assert np.all(d.reward == 0)
    d = apply_metric_map(d, fit_metric_map(d))
    pol = solve_policy(build_fg(d), reduce_bucket("1/4", 2))
    assert np.all(np.isinf(pol.thresholds))


def test_reward_curve_matches_configuration():
    p = SynthParams()
    d = synthesize(p, 60_000, 12)
    improved = (d.loss_weak == 1) & (d.loss_strong == 0)
    edges = np.linspace(0, 5, 26)
    b = np.digitize(d.entropy, edges) - 1
    for k in range(25):
        sel = b == k
        n = np.count_nonzero(sel)
        if n < 200:
            continue
        expected = p.reward_probability(d.entropy[sel]).mean()
        sd = np.sqrt(expected * (1 - expected) / n)
        assert abs(improved[sel].mean() - expected) <= 3 * sd + 1e-9


@given(st.floats(0, 6))
def test_reward_shape_is_unimodal(h):
    p = SynthParams()
    v = p.reward_probability(h)
    assert 0 <= v <= p.peak
    # rises toward the mode and falls after it
    toward = min(h + 0.01, p.mode) if h < p.mode else max(h - 0.01, p.mode)
    assert p.reward_probability(toward) >= v - 1e-15


def test_standard_fixture_shape():
    d = standard_fixture()
    assert len(d) == 6000
    assert set(np.unique(d.reward)) <= {0.0, 1.0}
    assert d.loss_strong.mean() < d.loss_weak.mean()


def test_raw_to_dataset_rejects_loss_kind():
    from edgeoffload.datasets import RawData
    raw = RawData(("a",), np.array([[1.0, 0.0]]), np.array([[1.0, 0.0]]), np.array([0]))
    with pytest.raises(InputError):
        raw_to_dataset(raw, "top7")
