"""The nine acceptance criteria, each at its stated tolerance and time budget.

Every test records a one-line verdict before asserting; the lines are printed
in the "acceptance criteria" section at the end of the pytest run.
"""

import json
import math
import time

import numpy as np
import pytest

from a3sn.cli import main
from a3sn.config import AblationMode, TrainConfig
from a3sn.encoding import EncodedInput, Example, Segment, build_vocab, dump_jsonl, encode, synth_dataset
from a3sn.gradcheck import gradcheck_suite
from a3sn.layer import LayerParams, layer_forward
from a3sn.model import ModelParams, forward, loss
from a3sn.tensor import Tensor
from a3sn.training import evaluate, train


def check(log, n, ok, detail):
    log[n] = (bool(ok), detail)
    assert ok, f"criterion {n}: {detail}"


def random_example(rng):
    sentence = tuple(f"w{i}" for i in rng.integers(0, 12, size=rng.integers(0, 12)))
    aspect = tuple(f"a{i}" for i in rng.integers(0, 4, size=rng.integers(1, 4)))
    return Example(sentence, aspect, ("positive", "negative", "neutral")[rng.integers(3)])


def random_encoded(rng, extra_pad=4):
    ex = random_example(rng)
    n = len(ex.sentence) + len(ex.aspect) + 3
    return encode(ex, build_vocab([ex]), n + int(rng.integers(0, extra_pad + 1)))


def brute_force_amplify(segments):
    n = len(segments)
    out = np.ones((n, n))
    for i in range(n):
        for j in range(n):
            if {int(segments[i]), int(segments[j])} == {Segment.SENT, Segment.ASP}:
                out[i, j] = 2.0
    return out


# ------------------------------------------------------------------ 1


def test_criterion_1_amplification_identity(acceptance_log):
    rng = np.random.default_rng(1)
    start = time.perf_counter()
    worst_mass, bad_rows, inexact = 0.0, 0, 0
    for i in range(200):
        if i % 20 == 0:
            lp = LayerParams.init(16, 4, 32, 3, rng)
        enc = random_encoded(rng)
        h = Tensor(rng.normal(size=(len(enc), 16)))
        _, trace = layer_forward(h, enc, lp)
        cross = enc.amplify == 2.0
        for so, sa in zip(trace.score_ori, trace.score_amp):
            inexact += int(not np.array_equal(sa, so * enc.amplify))
            rows = sa.sum(axis=1)
            bad_rows += int(np.sum((rows < 1.0 - 1e-12) | (rows > 2.0 + 1e-12)))
            worst_mass = max(worst_mass, abs(sa[cross].sum() - 2.0 * so[cross].sum()))
    elapsed = time.perf_counter() - start
    ok = inexact == 0 and bad_rows == 0 and worst_mass <= 1e-12 and elapsed < 10
    check(acceptance_log, 1, ok,
          f"200 inputs: inexact heads={inexact}, rows outside [1,2]={bad_rows}, "
          f"max |amp mass - 2*ori mass|={worst_mass:.1e}, {elapsed:.1f}s")


# ------------------------------------------------------------------ 2


def test_criterion_2_amplify_structure(acceptance_log):
    rng = np.random.default_rng(2)
    start = time.perf_counter()
    failures = 0
    for _ in range(1000):
        enc = random_encoded(rng)
        amp, seg = enc.amplify, enc.segments
        n_sent = int(np.sum(seg == Segment.SENT))
        n_asp = int(np.sum(seg == Segment.ASP))
        ok = (np.array_equal(amp, amp.T) and np.all(np.diag(amp) == 1.0)
              and set(np.unique(amp)) <= {1.0, 2.0}
              and int(np.sum(amp == 2.0)) == 2 * n_sent * n_asp
              and np.array_equal(amp, brute_force_amplify(seg)))
        failures += int(not ok)
    elapsed = time.perf_counter() - start
    check(acceptance_log, 2, failures == 0 and elapsed < 5,
          f"1000 inputs: {failures} structural failures, {elapsed:.1f}s")


# ------------------------------------------------------------------ 3


def test_criterion_3_gradient_oracle(acceptance_log):
    start = time.perf_counter()
    worst_op, worst_loss, failed = 0.0, 0.0, []
    for seed in range(5):
        for r in gradcheck_suite(seed, tol=1e-4):
            if r.name == "model_loss":
                worst_loss = max(worst_loss, r.max_rel_error)
            else:
                worst_op = max(worst_op, r.max_rel_error)
            if not r.passed:
                failed.append(f"{r.name}@{seed}")
    elapsed = time.perf_counter() - start
    check(acceptance_log, 3, not failed and elapsed < 120,
          f"5 seeds: max op rel err={worst_op:.1e}, max model-loss rel err={worst_loss:.1e}, "
          f"failed={failed or 'none'}, {elapsed:.1f}s")


# ------------------------------------------------------------------ 4


def test_criterion_4_degenerate_amplify(acceptance_log):
    rng = np.random.default_rng(4)
    start = time.perf_counter()
    worst = 0.0
    for i in range(50):
        lp = LayerParams.init(16, 4, 32, 3, rng)
        # shared weights: both gates compute the same map
        for hp in lp.heads:
            hp.gate_a_kernel.data = hp.gate_o_kernel.data.copy()
            hp.gate_a_bias.data = hp.gate_o_bias.data.copy()
        enc = random_encoded(rng)
        enc = EncodedInput(enc.ids, enc.segments, enc.pad_mask, np.ones_like(enc.amplify), enc.label_id)
        h = Tensor(rng.normal(size=(len(enc), 16)))
        full, no_ori, no_amp = (layer_forward(h, enc, lp, m)[0].data for m in
                                (AblationMode.FULL, AblationMode.NO_ORIGINAL, AblationMode.NO_AMPLIFIED))
        worst = max(worst, np.max(np.abs(full - no_ori)), np.max(np.abs(full - no_amp)))
    elapsed = time.perf_counter() - start
    check(acceptance_log, 4, worst <= 1e-12 and elapsed < 10,
          f"50 inputs, all-ones amplify: max divergence={worst:.1e}, {elapsed:.1f}s")


# ------------------------------------------------------------------ 5 and 6


@pytest.fixture(scope="module")
def synth_split():
    data = synth_dataset(700, 7, 50)
    return data[:500], data[500:]


@pytest.fixture(scope="module")
def standalone(synth_split):
    train_set, test_set = synth_split
    cfg = TrainConfig()
    start = time.perf_counter()
    result = train(train_set, cfg)
    metrics = evaluate(test_set, result.params, cfg, result.vocab)
    return metrics, time.perf_counter() - start


def test_criterion_5_learning(acceptance_log, standalone):
    metrics, elapsed_main = standalone
    start = time.perf_counter()
    small = synth_dataset(8, 2, 50)
    cfg = TrainConfig(epochs=200, seed=3)
    mem = train(small, cfg, val_set=small)
    mem_loss = min(r.loss for r in mem.history if r.split == "train")
    elapsed = elapsed_main + time.perf_counter() - start
    cfg = TrainConfig()
    ok = metrics.accuracy >= 0.95 and mem_loss < 0.01 and elapsed < 300
    check(acceptance_log, 5, ok,
          f"heads={cfg.heads} layers={cfg.layers} dropout={cfg.dropout} epochs={cfg.epochs}: "
          f"test acc={metrics.accuracy:.3f}, 8-example train loss={mem_loss:.1e}, {elapsed:.0f}s")


def test_criterion_6_ablation_harness(acceptance_log, standalone, synth_split, tmp_path):
    train_set, test_set = synth_split
    dump_jsonl(train_set, tmp_path / "train.jsonl")
    dump_jsonl(test_set, tmp_path / "test.jsonl")
    start = time.perf_counter()
    code = main(["ablate", "--data", str(tmp_path / "train.jsonl"), "--test", str(tmp_path / "test.jsonl"),
                 "--out-report", str(tmp_path / "report.md"), "--out-json", str(tmp_path / "report.json")])
    elapsed = time.perf_counter() - start
    rows = (tmp_path / "report.md").read_text().splitlines()[2:]
    per_mode = json.loads((tmp_path / "report.json").read_text())
    full = dict(per_mode["full"])
    full.pop("best_epoch")
    parity = full == json.loads(json.dumps(standalone[0].to_dict()))
    accs = {m: per_mode[m]["accuracy"] for m in per_mode}
    ok = code == 0 and len(rows) == 4 and parity and all(a > 0.8 for a in accs.values()) and elapsed < 900
    check(acceptance_log, 6, ok,
          f"{len(rows)} rows, full row == standalone: {parity}, acc "
          + ", ".join(f"{m}={a:.3f}" for m, a in accs.items()) + f", {elapsed:.0f}s")


# ------------------------------------------------------------------ 7


def test_criterion_7_determinism(acceptance_log, tmp_path):
    tiny = ["--set", "d_model=8", "--set", "heads=2", "--set", "d_ff=16", "--set", "epochs=2", "--seed", "4"]

    def run_all(d):
        d.mkdir()
        outputs = {}
        main(["synth-data", "--n", "40", "--seed", "3", "--out", str(d / "data.jsonl")])
        main(["train", "--data", str(d / "data.jsonl"), "--out-checkpoint", str(d / "m.ckpt"),
              "--metrics-csv", str(d / "h.csv"), *tiny])
        main(["eval", "--checkpoint", str(d / "m.ckpt"), "--data", str(d / "data.jsonl"), "--out-json", str(d / "e.json")])
        main(["inspect-attention", "--checkpoint", str(d / "m.ckpt"), "--text", "friendly waiter and rude staff",
              "--aspect", "waiter", "--out-json", str(d / "a.json")])
        main(["ablate", "--data", str(d / "data.jsonl"), "--out-report", str(d / "r.md"),
              "--out-json", str(d / "r.json"), *tiny])
        for f in sorted(d.iterdir()):
            outputs[f.name] = f.read_bytes()
        return outputs

    a = run_all(tmp_path / "a")
    b = run_all(tmp_path / "b")
    differing = [name for name in a if a[name] != b.get(name)]
    check(acceptance_log, 7, set(a) == set(b) and len(a) == 7 and not differing,
          f"{len(a)} artifacts from synth-data/train/eval/inspect-attention/ablate, differing={differing or 'none'}")


# ------------------------------------------------------------------ 8


def test_criterion_8_classifier_calculus(acceptance_log):
    rng = np.random.default_rng(8)
    data = synth_dataset(30, 8, 50)
    vocab = build_vocab(data)
    cfg = TrainConfig(d_model=16, heads=4, d_ff=32, dropout=0.0)
    worst_grad = 0.0
    for i, ex in enumerate(data[:20]):
        params = ModelParams.init(len(vocab), cfg, np.random.default_rng(i))
        pred = forward(encode(ex, vocab, cfg.max_len), params, cfg)
        gold = int(rng.integers(3))
        loss(pred, gold).backward()
        worst_grad = max(worst_grad, np.max(np.abs(pred.logits_t.grad - (pred.probs - np.eye(3)[gold]))))

    params = ModelParams.init(len(vocab), cfg, np.random.default_rng(0))
    params.w_p.data[:] = 0.0
    pred = forward(encode(data[0], vocab, cfg.max_len), params, cfg)
    worst_ln3 = max(abs(loss(pred, g).item() - math.log(3)) for g in range(3))
    check(acceptance_log, 8, worst_grad <= 1e-6 and worst_ln3 <= 1e-12,
          f"max |dL/dlogits - (p - onehot)|={worst_grad:.1e}, |uniform loss - ln 3|={worst_ln3:.1e}")


# ------------------------------------------------------------------ 9


def test_criterion_9_padding_invariance(acceptance_log):
    rng = np.random.default_rng(9)
    cfg = TrainConfig(d_model=16, heads=4, d_ff=32, max_len=32, layers=2, dropout=0.0)
    worst = 0.0
    for i in range(50):
        ex = random_example(rng)
        vocab = build_vocab([ex])
        params = ModelParams.init(len(vocab), cfg, np.random.default_rng(i))
        n = len(ex.sentence) + len(ex.aspect) + 3
        base = forward(encode(ex, vocab, n), params, cfg).probs
        for extra in (1, 5, cfg.max_len - n):
            if extra <= 0:
                continue
            probs = forward(encode(ex, vocab, n + extra), params, cfg).probs
            worst = max(worst, float(np.max(np.abs(probs - base))))
    check(acceptance_log, 9, worst <= 1e-12, f"50 inputs x up to 3 pad lengths: max prob change={worst:.1e}")
