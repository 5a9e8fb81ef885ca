import json
import math

import numpy as np
import pytest

import mvfuse


def test_tokenize():
    assert mvfuse.tokenize("Slow down.") == ["slow", "down", "."]


def test_fuse_worked_example():
    views = [np.array([[1.0, 0.0]]), np.array([[0.0, 0.0]])]
    alpha, fused = mvfuse.fuse(views, np.array([1.0]), np.array([[1.0, 0.0]]), np.array([[0.0, 0.0]]))
    e = math.exp(math.tanh(1.0) * 0.5)
    assert alpha[0] == pytest.approx(e / (e + math.exp(0.0)), abs=1e-12)
    assert sum(alpha) == pytest.approx(1.0, abs=1e-12)
    assert fused.shape == (1, 2)
    assert fused[0, 0] == pytest.approx(alpha[0])


def test_fuse_shape_error():
    with pytest.raises(ValueError):
        mvfuse.fuse([np.zeros((1, 3))], np.ones(1), np.ones((1, 2)), np.ones((1, 2)))


def test_quantize_int8_half_step():
    rng = np.random.default_rng(0)
    w = rng.normal(size=(7, 5))
    q, scale = mvfuse.quantize_int8(w)
    assert q.dtype == np.int8
    assert scale == pytest.approx(np.abs(w).max() / 127)
    assert np.all(np.abs(q * scale - w) <= scale / 2 * (1 + 1e-12))


def test_evaluate_worked_values():
    r = mvfuse.evaluate([("x", "a b c d e", "a b c d"), ("y", "a b c", ["a b c"])])
    assert r["n"] == 2
    assert r["exact_match"] == 0.5
    same = mvfuse.evaluate([("x", "a b c d", ["a b c d"]), ("y", "e f g h", ["e f g h"])])
    assert same["bleu4"] == pytest.approx(1.0)
    assert same["rouge_l"] == pytest.approx(1.0)
    with pytest.raises(mvfuse.DataError):
        mvfuse.evaluate([])


def test_cost_presets():
    assert "base" in mvfuse.cost_presets()
    base = mvfuse.cost("base")
    assert abs(base["total_params"] / 235e6 - 1) < 0.05
    assert round(base["memory_gb"], 2) == 0.94
    assert round(mvfuse.cost("q-large")["memory_gb"], 2) == 0.77
    one = {"layers": [{"kind": "linear", "d_in": 768, "d_out": 768, "bias": True}]}
    assert mvfuse.cost(spec=one, s_enc=1, s_dec=1)["total_params"] == 590592
    with pytest.raises(mvfuse.ConfigError):
        mvfuse.cost("nope")


def test_synth_train_generate(tmp_path):
    s = mvfuse.synth(tmp_path / "data", scenes=4, seed=7)
    assert s["samples"] == 16
    cfg = {
        "data": {"manifest": s["manifest"], "fractions": [0.5, 0.0, 0.5]},
        "train": {"epochs_per_stage": 1, "seed": 1},
    }
    out = mvfuse.train(cfg, tmp_path / "m.ckpt")
    assert [e["stage"] for e in out["trace"]] == [1, 2]
    assert all(math.isfinite(e["mean_loss"]) for e in out["trace"])
    g = mvfuse.generate(out["checkpoint"], s["manifest"], split="test")
    assert len(g["predictions"]) == 8
    assert {p["id"] for p in g["predictions"]} == {r["id"] for r in g["references"]}

    (tmp_path / "p.json").write_text(json.dumps(g["references"]))
    (tmp_path / "r.json").write_text(json.dumps(g["references"]))
    rep = mvfuse.evaluate_files(tmp_path / "p.json", tmp_path / "r.json")
    assert rep["exact_match"] == 1.0

    with pytest.raises(mvfuse.ConfigError):
        mvfuse.train({"train": {"lr0": -1}}, tmp_path / "x.ckpt")
