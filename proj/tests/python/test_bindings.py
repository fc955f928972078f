import json
import os
import subprocess

import numpy as np
import pytest

import headscope


def test_undiff_matrix_rows():
    m = headscope.build_undiff_matrix(5)
    assert m.shape == (5, 5)
    assert np.allclose(m.sum(axis=1), 1.0)
    assert m[3, 0] == pytest.approx(0.25)
    assert m[0, 4] == 0.0


def test_forward_and_variance():
    model = headscope.Transformer.random(headscope.ModelConfig(seed=3))
    out = model.forward(headscope.encode("two plus two"), 3, capture=[(0, 1), (1, 2)])
    assert out["loss"] > 0
    attn = out["attentions"][(0, 1)]
    assert np.allclose(attn.sum(axis=1), 1.0)
    alpha = headscope.incoming_attention(list(out["attentions"].values()))
    assert sum(alpha) == pytest.approx(len(headscope.encode("two plus two")))
    assert headscope.variance_score([1.0, 3.0]) == pytest.approx(1.0)
    assert headscope.variance_score([2.0, 2.0]) == 0.0


def test_errors_map_to_exception_types():
    with pytest.raises(headscope.InvalidArgument):
        headscope.build_undiff_matrix(0)
    with pytest.raises(headscope.IoError):
        headscope.ingest("/nonexistent/corpus.jsonl")
    assert issubclass(headscope.StaleArtifactError, headscope.ConsistencyError)


def test_planted_detection_and_scoring():
    config = headscope.ModelConfig(seed=1)
    planted = headscope.planted_head_for_seed(config)
    model = headscope.Transformer.planted(config)
    samples, classes = headscope.synthetic_corpus(concentrated=12, diffuse=0, seed=1)
    result = headscope.detect_heads(model, samples, probe_size=6, k=1)
    assert [tuple(h) for h in result["heads"]] == [tuple(planted)]
    scores = headscope.score_samples(model, samples, [planted])
    assert len(scores) == 12
    assert all(s["score"] >= 0 for s in scores)


def test_soft_sample_is_seeded():
    ids = ["a", "b", "c", "d"]
    assert headscope.soft_sample(ids, [1, 2, 3, 4], 2, 7) == headscope.soft_sample(ids, [1, 2, 3, 4], 2, 7)
    assert "a" not in headscope.soft_sample(ids, [0, 2, 3, 4], 3, 1)


def test_run_pipeline(tmp_path):
    corpus = tmp_path / "corpus.jsonl"
    headscope.write_synthetic(10, 10, 4, str(corpus), str(tmp_path / "truth.jsonl"))
    first = headscope.run_pipeline(str(corpus), str(tmp_path / "out"), model="planted",
                                   ratio=0.25, probe_size=20)
    assert len(first["selected"]) == int(0.25 * first["pool_size"])
    again = headscope.run_pipeline(str(corpus), str(tmp_path / "out"), model="planted",
                                   ratio=0.25, probe_size=20, seed=5)
    assert again["detect_reused"] and again["scores_reused"]


@pytest.mark.skipif("HEADSCOPE_CLI" not in os.environ, reason="CLI path not provided")
def test_cli_run(tmp_path):
    cli = os.environ["HEADSCOPE_CLI"]
    subprocess.run([cli, "synth", "--concentrated", "8", "--diffuse", "8", "--output",
                    str(tmp_path / "c.jsonl"), "--truth", str(tmp_path / "t.jsonl")], check=True)
    subprocess.run([cli, "run", "--corpus", str(tmp_path / "c.jsonl"), "--model", "planted",
                    "--ratio", "0.25", "--out-dir", str(tmp_path / "out")], check=True)
    reports = json.loads((tmp_path / "out" / "reports.json").read_text())
    assert [s["name"] for s in reports["subsets"]] == ["full", "soft"]
    bad = subprocess.run([cli, "run", "--corpus", str(tmp_path / "missing.jsonl"),
                          "--out-dir", str(tmp_path / "out")], capture_output=True)
    assert bad.returncode == 3
