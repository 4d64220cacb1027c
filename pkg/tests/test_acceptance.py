"""Acceptance criteria, one pass/fail line each.

Run with ``pytest tests/test_acceptance.py -v`` to see the summary lines; a
failing criterion prints FAIL with its measured values before asserting.
"""

import csv
import filecmp
import math
import time

import numpy as np
import pytest

from contentalign.cli import main as cli_main
from contentalign.corpus import ClassLabel
from contentalign.evaluation import harmonic_mean, per_class_top1, run_gzsl, run_zsl, training_view
from contentalign.loss import LossConfig, coupled_loss
from contentalign.model import ContentAlignModel, ModelConfig
from contentalign.splits import (
    RVL_CDIP_CLASSES,
    RankOrdering,
    make_incremental_split,
    make_sequential_splits,
    validate_split,
)
from contentalign.train import TrainConfig, fit
from oracles import central_difference, max_relative_error, per_class_counts

# Published (u, s, H) triples: finetuned baseline, baseline, content-aligned model per split
PUBLISHED = [
    ("A", "finetuned", 16.50, 61.60, 26.02), ("A", "baseline", 49.74, 35.61, 41.50), ("A", "content", 61.84, 69.36, 65.38),
    ("B", "finetuned", 23.73, 70.92, 35.56), ("B", "baseline", 53.83, 33.88, 41.58), ("B", "content", 69.84, 75.40, 72.52),
    ("C", "finetuned", 29.38, 67.98, 41.03), ("C", "baseline", 41.61, 37.31, 39.34), ("C", "content", 53.94, 72.17, 61.74),
    ("D", "finetuned", 13.25, 78.99, 22.69), ("D", "baseline", 39.37, 36.29, 37.77), ("D", "content", 51.13, 71.17, 59.51),
]

TABLE_1 = {
    "A": {"email", "form", "handwritten", "letter"},
    "B": {"advertisement", "scientific publication", "scientific report", "specification"},
    "C": {"budget", "file folder", "invoice", "news article"},
    "D": {"memo", "presentation", "questionnaire", "resume"},
}

# Frozen after the oracle run (seed 0, split A, clean channel): ZSL 95.00, H 86.80.
# Thresholds sit well below the observed values; the seed spread is in the notes.
ZSL_MIN, H_MIN = 60.0, 50.0
E2E_BUDGET_S = 300.0


@pytest.fixture
def say(capsys):
    def emit(n: int, ok: bool, detail: str) -> None:
        with capsys.disabled():
            print(f"\n[criterion {n}] {'PASS' if ok else 'FAIL'}: {detail}")
    return emit


def test_1_harmonic_mean_reproduction(say):
    worst = max(abs(harmonic_mean(u, s) - h) for *_, u, s, h in PUBLISHED)
    say(1, worst <= 0.01, f"{len(PUBLISHED)} published H values, max |error| {worst:.4f} (tol 0.01)")
    assert len(PUBLISHED) == 12 and worst <= 0.01


def _unit(rng, n, d):
    x = rng.normal(size=(n, d))
    return x / np.linalg.norm(x, axis=1, keepdims=True)


def test_2_gradient_oracle(say):
    rng = np.random.default_rng(2024)
    start = time.perf_counter()
    worst, n_configs = 0.0, 0
    for alignment in ("both", "C2I", "C2T"):
        for inclusive in (False, True):
            for _ in range(17):
                n, d = int(rng.choice([2, 3, 5, 8])), int(rng.choice([3, 8]))
                cfg = LossConfig(alignment, inclusive)
                x = [_unit(rng, n, d) for _ in range(3)]
                taus = np.log(rng.uniform(0.2, 1.5, 2))
                res = coupled_loss(*x, *taus, cfg)
                for k, g in enumerate((res.grad_image, res.grad_text, res.grad_content)):
                    def f(v, k=k):
                        y = list(x)
                        y[k] = v
                        return coupled_loss(*y, *taus, cfg).total
                    worst = max(worst, max_relative_error(g, central_difference(f, x[k], h=1e-4)))
                num = central_difference(lambda t: coupled_loss(*x, t[0], t[1], cfg).total, taus, h=1e-4)
                worst = max(worst, max_relative_error([res.grad_log_tau_ic, res.grad_log_tau_tc], num))
                n_configs += 1
    elapsed = time.perf_counter() - start
    ok = worst < 1e-4 and elapsed < 30 and n_configs >= 100
    say(2, ok, f"{n_configs} configs, max rel error {worst:.2e} (tol 1e-4), {elapsed:.1f}s (budget 30s)")
    assert ok


def test_3_loss_hand_values(say):
    e2 = np.eye(2)
    flat = np.tile([[1.0, 0.0, 0.0]], (3, 1))
    got = [
        coupled_loss(e2, e2, e2, 0.0, 0.0).total,
        coupled_loss(e2, e2, e2, 0.0, 0.0, LossConfig(include_positive=True)).total,
        coupled_loss(flat, flat, flat, 0.0, 0.0).total,
    ]
    want = [-2.0, 2 * math.log(1 + math.exp(-1)), 3 * math.log(2)]
    err = max(abs(a - b) for a, b in zip(got, want))
    say(3, err <= 1e-9, f"values {[round(v, 6) for v in got]}, max |error| {err:.1e} (tol 1e-9)")
    assert err <= 1e-9 and abs(got[1] - 0.6266) < 1e-4


def test_4_metric_oracle(say):
    rng = np.random.default_rng(4)
    mismatches = 0
    for _ in range(1000):
        k = int(rng.integers(2, 17))
        labels = np.concatenate([np.arange(k), rng.integers(0, k, int(rng.integers(0, 200)))])
        preds = np.where(rng.random(len(labels)) < rng.random(), labels, rng.integers(0, k, len(labels)))
        table, mean = per_class_top1(preds, labels, range(k))
        want_table, want_mean = per_class_counts(preds, labels, range(k))
        got_table = {c: (a.correct, a.total) for c, a in table.items()}
        mismatches += got_table != want_table or abs(mean - want_mean) > 1e-12
    _, imbalanced = per_class_top1([0] * 99 + [1] + [0], [0] * 100 + [1], [0, 1])
    ok = mismatches == 0 and imbalanced == 49.5
    say(4, ok, f"1000 random sets, {mismatches} mismatches; imbalanced case {imbalanced} (micro would be 99.0)")
    assert ok


def test_5_split_properties(say, full_corpus):
    canon = [ClassLabel(k, n) for k, n in enumerate(RVL_CDIP_CLASSES)]
    seq = make_sequential_splits(canon, 4)
    quads_ok = {s.name: {canon[k].name for k in s.unseen} for s in seq} == TABLE_1
    acc = np.random.default_rng(5).uniform(0, 100, 16)
    rank = RankOrdering.from_accuracies(list(zip(canon, acc)))
    inc = [make_incremental_split(rank, i) for i in range(2, 9)]
    order = [c.index for c in rank.classes]
    chain_ok = all(s.unseen == frozenset(order[:i]) for i, s in zip(range(2, 9), inc))
    chain_ok &= all(a.unseen < b.unseen for a, b in zip(inc, inc[1:]))
    problems = [p for s in seq + inc for p in validate_split(s, full_corpus)]
    ok = quads_ok and chain_ok and not problems
    say(5, ok, f"quads {'match' if quads_ok else 'differ'}, chain i=2..8 {'holds' if chain_ok else 'broken'}, "
               f"{len(problems)} validation problems")
    assert ok


@pytest.fixture(scope="module")
def trained(full_corpus):
    """Split A, layers=1, seed 0, one model per channel."""
    split = make_sequential_splits(full_corpus.classes)[0]
    models, seconds = {}, {}
    for channel in ("clean", "noisy"):
        start = time.perf_counter()
        model = ContentAlignModel(ModelConfig(vocab_size=full_corpus.tokenizer_vocab, layers=1), seed=0)
        fit(training_view(full_corpus, split, channel), model, TrainConfig(seed=0), split)
        models[channel] = model
        seconds[channel] = time.perf_counter() - start
    return split, models, seconds


@pytest.mark.slow
def test_6_end_to_end_transfer(say, full_corpus, trained):
    split, models, seconds = trained
    start = time.perf_counter()
    zsl = run_zsl(models["clean"], full_corpus, split, "clean")
    gzsl = run_gzsl(models["clean"], full_corpus, split, "clean")
    elapsed = seconds["clean"] + time.perf_counter() - start
    ok = zsl.t1 >= ZSL_MIN and gzsl.h >= H_MIN and elapsed < E2E_BUDGET_S
    say(6, ok, f"ZSL T1 {zsl.t1:.2f} (>= {ZSL_MIN}, chance 25), GZSL u {gzsl.u:.2f} s {gzsl.s:.2f} "
               f"H {gzsl.h:.2f} (>= {H_MIN}), {elapsed:.0f}s (budget {E2E_BUDGET_S:.0f}s)")
    assert ok


@pytest.mark.slow
def test_7_ablation_directionality(say, full_corpus, trained):
    split, models, _ = trained
    h = {ch: run_gzsl(models[ch], full_corpus, split, ch).h for ch in ("clean", "noisy")}
    early = run_gzsl(models["clean"], full_corpus, split, "clean", fusion="early").h
    channel_ok = h["noisy"] <= h["clean"]
    fusion_ok = h["clean"] >= early - 2.0
    say(7, channel_ok, f"noisy H {h['noisy']:.2f} <= clean H {h['clean']:.2f} (asserted); "
                       f"late H {h['clean']:.2f} vs early H {early:.2f}: "
                       f"{'trend holds' if fusion_ok else 'trend not observed'} (logged only)")
    assert channel_ok


@pytest.mark.slow
def test_8_calibration_monotonicity(say, full_corpus, trained, tmp_path):
    split, models, _ = trained
    rep = run_gzsl(models["clean"], full_corpus, split, "clean")
    with rep.write_sweep_csv(tmp_path / "sweep.csv").open() as fh:
        rows = list(csv.DictReader(fh))
    gammas = [float(r["gamma"]) for r in rows]
    s = [float(r["s"]) for r in rows]
    u = [float(r["u"]) for r in rows]
    ok = (gammas == sorted(gammas)
          and all(a >= b for a, b in zip(s, s[1:]))
          and all(a <= b for a, b in zip(u, u[1:])))
    say(8, ok, f"{len(rows)} grid points, s {s[0]:.2f}->{s[-1]:.2f} non-increasing, "
               f"u {u[0]:.2f}->{u[-1]:.2f} non-decreasing")
    assert ok


DETERMINISM_CONFIG = """\
corpus: {docs_per_class: 10}
model: {layers: 1, d_enc: 16, heads: 2, ff_dim: 32, joint_dim: 16}
train: {epochs: 2}
ablation:
  alignments: [both, C2T]
  channels: [clean]
  fusions: [late, early]
  splits: [A]
  incremental_curve: false
"""


@pytest.mark.slow
def test_9_determinism(say, tmp_path):
    cfg = tmp_path / "cfg.yaml"
    cfg.write_text(DETERMINISM_CONFIG)
    outs = []
    for run in ("first", "second"):
        root = tmp_path / run
        for cmd in (["gen"], ["splits"], ["train"], ["eval"], ["eval", "--fusion", "early"], ["ablate"]):
            assert cli_main([*cmd, "--config", str(cfg), "--out", str(root)]) == 0
        outs.append(sorted(root.glob("*/**/metrics.csv")))
    rel = [[p.relative_to(tmp_path / r) for p in ps] for r, ps in zip(("first", "second"), outs)]
    same = rel[0] == rel[1] and len(rel[0]) == 3 and all(
        filecmp.cmp(a, b, shallow=False) for a, b in zip(*outs))
    say(9, same, f"{len(rel[0])} metrics CSVs compared byte for byte across two runs: "
                 f"{'identical' if same else 'differ'}")
    assert same
