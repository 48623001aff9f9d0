"""HTTP service tests over the in-process test client."""

import numpy as np
import pytest
from fastapi.testclient import TestClient

from seqlan.autodiff import Rng
from seqlan import data as D
from seqlan import model as M
from seqlan.serialize import save_model
from seqlan.service.app import create_app
from seqlan.training import evaluate_accuracy


@pytest.fixture(scope="module")
def artifacts(tmp_path_factory):
    root = tmp_path_factory.mktemp("service")
    spec = D.SyntheticSpec(seed=3, len_range=(4, 7))
    sents = D.generate_synthetic(spec, 30)
    vocabs = D.build_vocabs(sents)
    paths = {}
    for arch in ("lan", "crf"):
        cfg = M.ModelConfig(arch=arch, num_layers=2, d_h=8, word_emb_dim=6,
                            char_emb_dim=4, char_hidden=3, heads=2, dropout=0.0, seed=1)
        model = M.build_model(cfg, vocabs, Rng(1))
        path = root / f"{arch}.model"
        save_model(model, str(path))
        paths[arch] = str(path)
    corpus = root / "dev.conll"
    corpus.write_text(D.write_conll(sents[:10]))
    paths["corpus"] = str(corpus)
    return paths


@pytest.fixture()
def client(artifacts):
    app = create_app(artifacts["lan"])
    return TestClient(app)


class TestLifecycle:
    def test_health(self, artifacts):
        client = TestClient(create_app())
        assert client.get("/health").json() == {"status": "ok"}

    def test_no_model_is_conflict(self):
        client = TestClient(create_app())
        r = client.post("/tag", json={"sentences": [["a"]]})
        assert r.status_code == 409

    def test_model_info(self, client):
        info = client.get("/model").json()
        assert info["arch"] == "lan"
        assert info["parameter_count"] > 0
        assert len(info["labels"]) >= 3

    def test_load_missing_file_404(self, client):
        assert client.post("/model/load", json={"path": "/nope.model"}).status_code == 404

    def test_load_garbage_400(self, client, tmp_path):
        bad = tmp_path / "bad.model"
        bad.write_text("garbage\n")
        assert client.post("/model/load", json={"path": str(bad)}).status_code == 400

    def test_load_switches_model(self, client, artifacts):
        r = client.post("/model/load", json={"path": artifacts["crf"]})
        assert r.status_code == 200 and r.json()["arch"] == "crf"


class TestTag:
    def test_tags_in_alphabet(self, client):
        labels = client.get("/model").json()["labels"]
        r = client.post("/tag", json={"sentences": [["ta", "amb0", "w1"], ["w2"]]})
        assert r.status_code == 200
        body = r.json()["sentences"]
        assert len(body) == 2
        assert len(body[0]["tags"]) == 3
        for sent in body:
            assert all(t in labels for t in sent["tags"])

    def test_with_probs_sorted_and_consistent(self, client):
        r = client.post("/tag", json={"sentences": [["ta", "w1"]], "with_probs": True, "top_k": 3})
        sent = r.json()["sentences"][0]
        for tag, probs in zip(sent["tags"], sent["probs"]):
            values = [p["prob"] for p in probs]
            assert values == sorted(values, reverse=True)
            assert probs[0]["label"] == tag
            assert all(0.0 < v <= 1.0 for v in values)

    def test_crf_with_probs_rejected(self, client, artifacts):
        client.post("/model/load", json={"path": artifacts["crf"]})
        r = client.post("/tag", json={"sentences": [["a"]], "with_probs": True})
        assert r.status_code == 400

    def test_bad_tokens_rejected(self, client):
        assert client.post("/tag", json={"sentences": [["two words"]]}).status_code == 400
        assert client.post("/tag", json={"sentences": [[]]}).status_code == 400

    def test_empty_request_rejected_by_validation(self, client):
        assert client.post("/tag", json={"sentences": []}).status_code == 422


class TestAttention:
    def test_rows_are_distributions(self, client):
        r = client.post("/attention", json={"sentences": [["ta", "amb0"]]})
        record = r.json()["records"][0]
        n, L = 2, len(record["labels"])
        info = client.get("/model").json()
        assert len(record["layers"]) == info["num_layers"]
        for layer in record["layers"]:
            arr = np.array(layer)
            assert arr.shape == (n, L)
            np.testing.assert_allclose(arr.sum(axis=1), 1.0, atol=1e-9)

    def test_non_lan_rejected(self, client, artifacts):
        client.post("/model/load", json={"path": artifacts["crf"]})
        assert client.post("/attention", json={"sentences": [["a"]]}).status_code == 400


class TestEvaluate:
    def test_acc_matches_library(self, client, artifacts):
        r = client.post("/evaluate", json={"path": artifacts["corpus"]})
        assert r.status_code == 200
        from seqlan.serialize import load_model

        model = load_model(artifacts["lan"])
        sents = D.parse_conll(open(artifacts["corpus"]).read())
        encoded = [D.encode_sentence(s, model.words, model.chars, model.labels) for s in sents]
        assert r.json()["value"] == evaluate_accuracy(model, encoded)

    def test_missing_corpus_404(self, client):
        assert client.post("/evaluate", json={"path": "/nope.conll"}).status_code == 404

    def test_span_f1_on_pos_tags_400(self, client, artifacts):
        r = client.post("/evaluate", json={"path": artifacts["corpus"], "metric": "span-f1"})
        assert r.status_code == 400


class TestBench:
    def test_rows_and_exact_counts(self, client):
        r = client.post("/bench", json={"sizes": [3, 4], "length": 5, "reps": 1, "hidden": 8})
        rows = r.json()["rows"]
        assert len(rows) == 4
        for row in rows:
            if row["arch"] == "crf":
                assert row["op_count"] == row["n_labels"] ** 2 * 4 + 2 * row["n_labels"]
            else:
                assert row["op_count"] == row["n_labels"] * 5
