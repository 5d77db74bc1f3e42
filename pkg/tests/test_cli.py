import json
import subprocess
import sys

import numpy as np
import pytest

from a3sn.cli import main
from a3sn.encoding import load_jsonl

TINY = ["--set", "d_model=8", "--set", "heads=2", "--set", "d_ff=16", "--set", "epochs=2", "--set", "batch_size=8"]


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


@pytest.fixture
def data(tmp_path, capsys):
    path = tmp_path / "d.jsonl"
    assert run(capsys, "synth-data", "--n", 40, "--seed", 1, "--out", path)[0] == 0
    return path


@pytest.fixture
def checkpoint(tmp_path, data, capsys):
    path = tmp_path / "m.ckpt"
    code, out, err = run(capsys, "train", "--data", data, "--out-checkpoint", path, *TINY)
    assert code == 0, err
    return path


# ------------------------------------------------------------------ usage


@pytest.mark.parametrize("argv", [[], ["fly"], ["train", "--bogus"], ["synth-data", "--n", "x", "--out", "o"]])
def test_usage_errors_exit_1(capsys, argv):
    code, _, err = run(capsys, *argv)
    assert code == 1
    assert err.startswith("a3sn: error[usage]:")
    assert len(err.strip().splitlines()) == 1


def test_module_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "a3sn", "synth-data", "--n", "0", "--out", str(tmp_path / "x")],
                          capture_output=True, text=True)
    assert proc.returncode == 1
    assert "error[usage]" in proc.stderr


# ------------------------------------------------------------- synth-data


def test_synth_data_deterministic_and_parses(tmp_path, capsys):
    a, b = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
    code, out, _ = run(capsys, "synth-data", "--n", 300, "--seed", 7, "--out", a)
    assert code == 0
    assert "positive=" in out and "negative=" in out and "neutral=" in out
    run(capsys, "synth-data", "--n", 300, "--seed", 7, "--out", b)
    assert a.read_bytes() == b.read_bytes()
    assert len(load_jsonl(a)) == 300


def test_synth_data_zero_is_usage_error(tmp_path, capsys):
    assert run(capsys, "synth-data", "--n", 0, "--out", tmp_path / "x")[0] == 1


def test_synth_data_unwritable(tmp_path, capsys):
    code, _, err = run(capsys, "synth-data", "--n", 5, "--out", tmp_path / "missing" / "x.jsonl")
    assert code == 2
    assert err.startswith("a3sn: error[io]:")


# ------------------------------------------------------------------ train


def test_train_config_violation_before_training(tmp_path, data, capsys):
    out = tmp_path / "m.ckpt"
    code, _, err = run(capsys, "train", "--data", data, "--out-checkpoint", out, "--set", "heads=3")
    assert code == 1
    assert "error[config]" in err and "divide" in err
    assert not out.exists()


def test_train_config_file_and_overrides(tmp_path, data, capsys):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("# tiny run\nd_model = 8\nheads = 2\nd_ff = 16\nepochs = 1\n")
    csv = tmp_path / "h.csv"
    code, out, err = run(capsys, "train", "--data", data, "--config", cfg, "--set", "epochs=2",
                         "--mode", "no-amplified", "--seed", 5, "--out-checkpoint", tmp_path / "m", "--metrics-csv", csv)
    assert code == 0, err
    lines = csv.read_text().splitlines()
    assert lines[0].startswith("# mode=no-amplified seed=5 ")
    assert len(lines) == 2 + 4
    assert "best_epoch=" in out


def test_train_bad_data_line(tmp_path, capsys):
    bad = tmp_path / "bad.jsonl"
    bad.write_text('{"text": "a", "aspect": "b", "polarity": "neutral"}\n{"text": 1}\n')
    code, _, err = run(capsys, "train", "--data", bad, "--out-checkpoint", tmp_path / "m")
    assert code == 2
    assert ":2:" in err


def test_train_missing_data(tmp_path, capsys):
    code, _, err = run(capsys, "train", "--data", tmp_path / "nope", "--out-checkpoint", tmp_path / "m")
    assert code == 2 and "error[data]" in err


def test_train_rerun_identical_bytes(tmp_path, data, capsys):
    for tag in "ab":
        run(capsys, "train", "--data", data, "--out-checkpoint", tmp_path / f"{tag}.ckpt",
            "--metrics-csv", tmp_path / f"{tag}.csv", *TINY)
    assert (tmp_path / "a.ckpt").read_bytes() == (tmp_path / "b.ckpt").read_bytes()
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()


# ------------------------------------------------------------------- eval


def test_eval_reports_metrics(tmp_path, data, checkpoint, capsys):
    js = tmp_path / "m.json"
    code, out, _ = run(capsys, "eval", "--checkpoint", checkpoint, "--data", data, "--out-json", js)
    assert code == 0
    assert out.startswith("eval: accuracy=")
    m = json.loads(js.read_text())
    conf = np.array(m["confusion"])
    assert conf.sum() == 40
    assert m["accuracy"] == pytest.approx(np.trace(conf) / 40)


def test_eval_bad_checkpoint(tmp_path, data, capsys):
    junk = tmp_path / "junk"
    junk.write_bytes(b"not a checkpoint")
    code, _, err = run(capsys, "eval", "--checkpoint", junk, "--data", data)
    assert code == 2 and "error[data]" in err


# -------------------------------------------------------------- gradcheck


def test_gradcheck_default_passes(capsys):
    code, out, _ = run(capsys, "gradcheck")
    assert code == 0
    names = [line.split()[0] for line in out.splitlines() if "max_rel_error=" in line]
    assert len(names) == len(set(names))
    for op in ("softmax_rows", "layer_norm", "conv1d_same", "amplified_attention", "gated_fusion",
               "layer_forward[full]", "model_loss"):
        assert op in names


def test_gradcheck_tiny_tol_fails_naming_ops(capsys):
    code, out, err = run(capsys, "gradcheck", "--tol", "1e-12")
    assert code == 3
    assert "FAIL" in out
    assert err.startswith("a3sn: error[numeric]:") and "model_loss" in err


def test_gradcheck_bad_arguments(capsys):
    assert run(capsys, "gradcheck", "--tol", "0")[0] == 1
    assert run(capsys, "gradcheck", "--d-model", "7", "--heads", "2")[0] == 1


# ------------------------------------------------------ inspect-attention


def test_inspect_attention(tmp_path, checkpoint, capsys):
    js = tmp_path / "att.json"
    code, out, _ = run(capsys, "inspect-attention", "--checkpoint", checkpoint, "--text",
                       "Our friendly waiter, but unhelpful staff", "--aspect", "staff", "--head", 1, "--out-json", js)
    assert code == 0
    d = json.loads(js.read_text())
    n = len(d["tokens"])
    assert n == 6 + 1 + 3
    for key in ("amplify", "score_ori", "score_amp"):
        assert np.array(d[key]).shape == (n, n)
    so, sa, amp = (np.array(d[k]) for k in ("score_ori", "score_amp", "amplify"))
    cross = amp == 2
    assert sa[cross].sum() == pytest.approx(2 * so[cross].sum(), abs=1e-12)
    assert d["cross_mass_amp"] == pytest.approx(2 * d["cross_mass_ori"], abs=1e-12)
    assert d["segments"][0] == "CLS" and d["segments"][-1] == "SEP2"
    assert "predicted=" in out and "amplified=" in out


@pytest.mark.parametrize("flag,value", [("--layer", 1), ("--head", 2), ("--layer", -1)])
def test_inspect_attention_out_of_range(checkpoint, capsys, flag, value):
    code, _, err = run(capsys, "inspect-attention", "--checkpoint", checkpoint, "--text", "x", "--aspect", "y",
                       flag, value)
    assert code == 1 and "out of range" in err


def test_inspect_attention_empty_aspect(checkpoint, capsys):
    code, _, _ = run(capsys, "inspect-attention", "--checkpoint", checkpoint, "--text", "x", "--aspect", "!!")
    assert code == 1


# ----------------------------------------------------------------- ablate


def test_ablate_small(tmp_path, data, capsys):
    test_set = tmp_path / "t.jsonl"
    run(capsys, "synth-data", "--n", 12, "--seed", 2, "--out", test_set)
    report = tmp_path / "r.md"
    js = tmp_path / "r.json"
    code, out, _ = run(capsys, "ablate", "--data", data, "--test", test_set, "--out-report", report,
                       "--out-json", js, *TINY)
    assert code == 0
    lines = report.read_text().splitlines()
    assert lines[0] == "| Model | Acc. | F1 |" and len(lines) == 6
    assert set(json.loads(js.read_text())) == {"full", "no-original", "no-amplified", "no-gated-fusion"}

    # Full row equals a standalone train + eval with the same flags
    run(capsys, "train", "--data", data, "--out-checkpoint", tmp_path / "f.ckpt", *TINY)
    run(capsys, "eval", "--checkpoint", tmp_path / "f.ckpt", "--data", test_set, "--out-json", tmp_path / "f.json")
    full = json.loads(js.read_text())["full"]
    full.pop("best_epoch")
    assert full == json.loads((tmp_path / "f.json").read_text())

    # rerun regenerates the report byte for byte
    run(capsys, "ablate", "--data", data, "--test", test_set, "--out-report", tmp_path / "r2.md", *TINY)
    assert (tmp_path / "r2.md").read_bytes() == report.read_bytes()


def test_inputs_not_mutated(tmp_path, data, checkpoint, capsys):
    before = data.read_bytes(), checkpoint.read_bytes()
    run(capsys, "eval", "--checkpoint", checkpoint, "--data", data)
    run(capsys, "inspect-attention", "--checkpoint", checkpoint, "--text", "a b", "--aspect", "b")
    assert (data.read_bytes(), checkpoint.read_bytes()) == before
