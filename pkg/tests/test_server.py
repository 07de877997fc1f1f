import json
import threading
import urllib.error
import urllib.request

import pytest

import facetrank.server as srv
from facetrank import BACKGROUND, METHOD
from facetrank.server import RerankService, make_server, minmax_normalize


class FakeModel:
    def __init__(self, facet, table, default=0.0):
        self.facet = facet
        self.table = dict(table)
        self.default = default
        self.backbone_profile = "compact-from-scratch"
        self.tokenizer_id = f"fake-{facet}"
        self.max_tokens = 64

    def encode(self, seed, cand):
        return cand.paper_id


@pytest.fixture(autouse=True)
def patch_score_batch(monkeypatch):
    monkeypatch.setattr(
        srv, "score_batch", lambda model, pairs: [model.table.get(p, model.default) for p in pairs]
    )


@pytest.fixture
def live_server():
    bg = FakeModel(BACKGROUND, {"a": 2.0, "b": 1.0, "c": 0.0})
    mt = FakeModel(METHOD, {"a": 0.0, "b": 1.0, "c": 2.0})
    service = RerankService(bg_model=bg, mt_model=mt, pool_cap=5)
    server = make_server(service, port=0)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    yield service, server.server_address[1]
    server.shutdown()
    server.server_close()


def post(port, body, path="/rerank"):
    req = urllib.request.Request(
        f"http://127.0.0.1:{port}{path}",
        data=json.dumps(body).encode(),
        headers={"Content-Type": "application/json"},
        method="POST",
    )
    try:
        with urllib.request.urlopen(req) as r:
            return r.status, json.loads(r.read())
    except urllib.error.HTTPError as e:
        return e.code, json.loads(e.read())


def get(port, path):
    try:
        with urllib.request.urlopen(f"http://127.0.0.1:{port}{path}") as r:
            return r.status, json.loads(r.read())
    except urllib.error.HTTPError as e:
        return e.code, json.loads(e.read())


def body_of(ids=("a", "b", "c"), alpha=0.5):
    return {
        "seed": {"title": "seed title", "abstract": "seed abstract"},
        "candidates": [
            {"candidate_id": i, "title": f"t {i}", "abstract": f"a {i}"} for i in ids
        ],
        "alpha": alpha,
    }


class TestNormalize:
    def test_minmax(self):
        assert minmax_normalize([2.0, 1.0, 0.0]) == [1.0, 0.5, 0.0]

    def test_constant_pool_maps_to_half(self):
        assert minmax_normalize([3.0, 3.0]) == [0.5, 0.5]


class TestRerank:
    def test_alpha_one_matches_bg_ranking(self, live_server):
        _, port = live_server
        status, resp = post(port, body_of(alpha=1.0))
        assert status == 200
        assert resp["rankings"]["fused"] == resp["rankings"]["bg"] == ["a", "b", "c"]

    def test_alpha_zero_matches_mt_ranking(self, live_server):
        _, port = live_server
        status, resp = post(port, body_of(alpha=0.0))
        assert status == 200
        assert resp["rankings"]["fused"] == resp["rankings"]["mt"] == ["c", "b", "a"]

    def test_balanced_fusion_tie_breaks_by_id(self, live_server):
        # two candidates with bg_norm (1,0) and mt_norm (0,1): fused ties at 0.5
        _, port = live_server
        status, resp = post(port, body_of(ids=("a", "c"), alpha=0.5))
        assert status == 200
        by_id = {c["candidate_id"]: c for c in resp["candidates"]}
        assert by_id["a"]["bg_norm"] == 1.0 and by_id["a"]["mt_norm"] == 0.0
        assert by_id["c"]["bg_norm"] == 0.0 and by_id["c"]["mt_norm"] == 1.0
        assert by_id["a"]["fused"] == by_id["c"]["fused"] == 0.5
        assert resp["rankings"]["fused"] == ["a", "c"]

    def test_rankings_are_exact_argsorts_of_reported_scores(self, live_server):
        from facetrank.metrics import rank_candidates

        _, port = live_server
        _, resp = post(port, body_of(alpha=0.3))
        for key, field in (("bg", "bg_score"), ("mt", "mt_score"), ("fused", "fused")):
            scored = [(c["candidate_id"], c[field]) for c in resp["candidates"]]
            assert resp["rankings"][key] == rank_candidates(scored)

    def test_deterministic_for_fixed_request(self, live_server):
        _, port = live_server
        a = post(port, body_of())
        b = post(port, body_of())
        assert a == b

    def test_facet_independence(self, live_server):
        service, port = live_server
        _, before = post(port, body_of())
        service.mt_model.table = {"a": 9.0, "b": -2.0, "c": 4.0}
        _, after = post(port, body_of())
        assert [c["bg_score"] for c in after["candidates"]] == [
            c["bg_score"] for c in before["candidates"]
        ]
        assert after["rankings"]["bg"] == before["rankings"]["bg"]
        assert after["rankings"]["mt"] != before["rankings"]["mt"]


class TestValidation:
    def test_alpha_out_of_range(self, live_server):
        _, port = live_server
        assert post(port, body_of(alpha=1.5))[0] == 400

    def test_duplicate_ids(self, live_server):
        _, port = live_server
        assert post(port, body_of(ids=("a", "a")))[0] == 400

    def test_missing_seed_fields(self, live_server):
        _, port = live_server
        body = body_of()
        body["seed"] = {"title": "", "abstract": "x"}
        assert post(port, body)[0] == 400

    def test_empty_candidates(self, live_server):
        _, port = live_server
        body = body_of()
        body["candidates"] = []
        assert post(port, body)[0] == 400

    def test_pool_cap_413(self, live_server):
        _, port = live_server
        assert post(port, body_of(ids=tuple(f"c{i}" for i in range(6))))[0] == 413

    def test_invalid_json_400(self, live_server):
        _, port = live_server
        req = urllib.request.Request(
            f"http://127.0.0.1:{port}/rerank", data=b"not json", method="POST"
        )
        with pytest.raises(urllib.error.HTTPError) as err:
            urllib.request.urlopen(req)
        assert err.value.code == 400

    def test_unknown_route_404(self, live_server):
        _, port = live_server
        assert post(port, {}, path="/nope")[0] == 404


class TestHealth:
    def test_ready_with_both_models(self, live_server):
        _, port = live_server
        status, health = get(port, "/health")
        assert status == 200
        assert health["ready"] is True
        assert health["missing"] == []
        assert set(health["models"]) == {BACKGROUND, METHOD}

    def test_degraded_without_method_model(self):
        service = RerankService(bg_model=FakeModel(BACKGROUND, {}), mt_model=None)
        health = service.health()
        assert health["ready"] is False
        assert health["missing"] == [METHOD]

    def test_manifest_metrics_passed_through(self):
        service = RerankService(
            bg_model=FakeModel(BACKGROUND, {}),
            mt_model=FakeModel(METHOD, {}),
            manifests={BACKGROUND: {"validation_metric": 0.83}},
        )
        health = service.health()
        assert health["models"][BACKGROUND]["checkpoint_validation_metric"] == 0.83

    def test_rerank_503_when_model_missing(self):
        service = RerankService(bg_model=FakeModel(BACKGROUND, {}), mt_model=None)
        server = make_server(service, port=0)
        port = server.server_address[1]
        threading.Thread(target=server.serve_forever, daemon=True).start()
        try:
            assert post(port, body_of())[0] == 503
        finally:
            server.shutdown()
            server.server_close()


class TestBackpressure:
    def test_saturated_queue_sheds_429(self, monkeypatch):
        bg = FakeModel(BACKGROUND, {})
        mt = FakeModel(METHOD, {})
        service = RerankService(bg_model=bg, mt_model=mt, pool_cap=5, max_concurrent=1)
        release = threading.Event()

        def slow_score(model, pairs):
            release.wait(timeout=5)
            return [0.0] * len(pairs)

        monkeypatch.setattr(srv, "score_batch", slow_score)
        server = make_server(service, port=0)
        port = server.server_address[1]
        threading.Thread(target=server.serve_forever, daemon=True).start()
        results = []

        def call():
            results.append(post(port, body_of())[0])

        threads = [threading.Thread(target=call) for _ in range(3)]
        for t in threads:
            t.start()
        import time

        time.sleep(0.3)
        release.set()
        for t in threads:
            t.join(timeout=5)
        server.shutdown()
        server.server_close()
        assert 429 in results
        assert 200 in results
