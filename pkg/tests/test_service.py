import json
import threading
import time

import numpy as np
import pytest
from fastapi.testclient import TestClient

from planoforge.constraints import validate
from planoforge.diffusion import DenoiserConfig, DenoiserModel
from planoforge.domain import fixture_to_dict, planogram_to_dict
from planoforge.service import ModelSnapshot, ServiceState, create_app, generate_response

TINY = DenoiserConfig(widths=(4, 8, 8), time_dim=8)


def tiny_model(seed):
    m = DenoiserModel.create(TINY, seed=seed, zero_output=False)
    m.metadata["schedule"] = {"T": 8, "beta1": 1e-3, "betaT": 0.3}
    return m


@pytest.fixture
def state(corpus):
    return ServiceState(corpus.catalog, corpus.constraints)


@pytest.fixture
def client(state):
    return TestClient(create_app(state))


def load(state, corpus, version, seed=0):
    state.load(ModelSnapshot.from_model(version, tiny_model(seed), corpus.catalog, corpus.constraints))


def test_generate_without_model_is_503(client, corpus):
    r = client.post("/v1/planograms/generate", json={"fixture": fixture_to_dict(corpus.planograms[0].fixture)})
    assert r.status_code == 503


def test_malformed_json_is_400(client):
    r = client.post("/v1/planograms/validate", content=b"{not json", headers={"content-type": "application/json"})
    assert r.status_code == 400
    assert "malformed JSON" in r.json()["error"]


def test_generate_count_zero_and_determinism(client, state, corpus):
    load(state, corpus, "v1")
    fx = fixture_to_dict(corpus.planograms[0].fixture)
    r = client.post("/v1/planograms/generate", json={"fixture": fx, "count": 0})
    assert r.status_code == 200 and r.json()["planograms"] == []
    body = {"fixture": fx, "count": 5, "seed": 42}
    a = client.post("/v1/planograms/generate", json=body)
    b = client.post("/v1/planograms/generate", json=body)
    assert a.status_code == 200 and a.content == b.content
    direct = generate_response(state.active, body, state.active.constraints)
    assert json.loads(a.content) == json.loads(json.dumps(direct))
    assert a.json()["model_version"] == "v1"


def test_generate_bad_count_is_400(client, state, corpus):
    load(state, corpus, "v1")
    fx = fixture_to_dict(corpus.planograms[0].fixture)
    assert client.post("/v1/planograms/generate", json={"fixture": fx, "count": -1}).status_code == 400
    assert client.post("/v1/planograms/generate", json={"count": 1}).status_code == 400


def test_validate_matches_library(client, corpus):
    for pg in corpus.planograms[:20]:
        r = client.post("/v1/planograms/validate", json={"planogram": planogram_to_dict(pg)})
        assert r.status_code == 200
        assert r.json() == json.loads(json.dumps(validate(pg, corpus.constraints, corpus.catalog).to_dict()))


def test_overlap_is_422_with_location(client, corpus):
    obj = planogram_to_dict(corpus.planograms[0])
    first = obj["placements"][0]
    obj["placements"].append(dict(first))
    r = client.post("/v1/planograms/validate", json={"planogram": obj})
    assert r.status_code == 422
    assert any(f"shelf {first['shelf_index']} column" in v for v in r.json()["violations"])


def test_rollback_state_machine(client, state, corpus):
    assert client.post("/v1/admin/rollback").status_code == 409
    load(state, corpus, "v1")
    assert client.post("/v1/admin/rollback").status_code == 409
    load(state, corpus, "v2", seed=1)
    assert client.get("/v1/health").json()["active_version"] == "v2"
    r = client.post("/v1/admin/rollback")
    assert r.status_code == 200
    assert client.get("/v1/health").json()["active_version"] == "v1"


def test_inflight_generate_keeps_its_snapshot(state, corpus):
    load(state, corpus, "v1")
    load(state, corpus, "v2", seed=1)
    fx = fixture_to_dict(corpus.planograms[0].fixture)
    started = threading.Event()
    snap = state.active
    real = snap.model.predict

    def slow_predict(*a, **k):
        started.set()
        time.sleep(0.01)
        return real(*a, **k)

    object.__setattr__(snap.model, "predict", slow_predict)
    client = TestClient(create_app(state))
    out = {}
    th = threading.Thread(target=lambda: out.setdefault("r", client.post(
        "/v1/planograms/generate", json={"fixture": fx, "count": 2, "seed": 1})))
    th.start()
    started.wait(5)
    state.rollback()
    th.join(30)
    assert out["r"].json()["model_version"] == "v2"
    assert state.active.version == "v1"


def test_metrics_text(client, corpus):
    client.get("/v1/health")
    client.post("/v1/planograms/validate", json={"planogram": planogram_to_dict(corpus.planograms[0])})
    text = client.get("/v1/metrics").text
    assert 'requests_total{endpoint="/v1/health",status="200"} 1' in text
    assert 'latency_ms{endpoint="/v1/planograms/validate",quantile="0.99"}' in text


def test_api_key(state):
    c = TestClient(create_app(state, api_key="s3cret"))
    assert c.get("/v1/health").status_code == 401
    assert c.get("/v1/health", headers={"x-api-key": "s3cret"}).status_code == 200
