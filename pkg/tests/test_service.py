import json
import shutil
import threading
import time

import numpy as np
import pytest
from fastapi.testclient import TestClient

from crank.factorization import TrainConfig
from crank.pipeline import ARTIFACTS, save_model_dir, train_models
from crank.scoring import ScoringConfig, score_carousels
from crank.service import Engine, EngineConfig, RankRequest, RequestError, create_app
from crank.simharness import WorldConfig, generate_world

from . import oracles
from .helpers import random_model, single_item_model

CLICK = {"ts": 100, "user": "u1", "carousel": "k", "item": "i1", "event": "click"}


@pytest.fixture
def client(tmp_path):
    engine = Engine.from_model(
        single_item_model(), tmp_path / "state", scoring=ScoringConfig(w=0.5), update_interval_s=0.05
    )
    with TestClient(create_app(engine)) as c:
        yield c


def test_rank_single_candidate_echoes_scoring_values(client):
    r = client.post("/rank", json={"user": "u1", "candidates": [{"id": "k", "items": ["i1"]}]})
    assert r.status_code == 200
    body = r.json()
    assert body["ranking"] == ["k"]
    s = body["scores"]["k"]
    assert s["lambda"] == 0.5
    assert oracles.rel_err(s["phi"], oracles.convex(oracles.affinity(0.5, [1.0]), oracles.discovery([0.8]), 0.5)) < 1e-12
    assert s["phi"] == pytest.approx(0.937752, abs=1e-6)
    assert body["compute_micros"] > 0


@pytest.mark.parametrize(
    "body",
    [
        [1, 2],
        {"candidates": [{"id": "k", "items": ["i1"]}]},
        {"user": "u1", "candidates": []},
        {"user": "u1", "candidates": [{"id": "k", "items": []}]},
        {"user": "u1", "candidates": [{"id": "k", "items": ["i1"]}, {"id": "k", "items": ["i1"]}]},
        {"user": "u1", "candidates": [{"id": "k", "items": ["i1"]}], "zones": 0},
        {"user": "u1", "candidates": [{"id": "k", "items": ["i1", "i1"]}]},
    ],
)
def test_malformed_rank_is_400(client, body):
    r = client.post("/rank", json=body)
    assert r.status_code == 400 and "error" in r.json()


def test_non_json_body_is_400(client):
    r = client.post("/rank", content=b"{nope", headers={"content-type": "application/json"})
    assert r.status_code == 400


def test_unknown_item_is_422_with_id(client):
    r = client.post("/rank", json={"user": "u1", "candidates": [{"id": "k", "items": ["i1", "zz"]}]})
    assert r.status_code == 422
    assert r.json()["item"] == "zz"


def test_zones_clamp_and_order(tmp_path):
    rng = np.random.default_rng(0)
    engine = Engine.from_model(random_model(rng), tmp_path, persist=False)
    cands = [{"id": f"k{n}", "items": [f"i{3 * n}", f"i{3 * n + 1}"]} for n in range(3)]
    full = engine.handle_rank({"user": "u1", "candidates": cands})
    top2 = engine.handle_rank({"user": "u1", "candidates": cands, "zones": 2})
    assert top2["ranking"] == full["ranking"][:2]
    phis = [full["scores"][k]["phi"] for k in full["ranking"]]
    assert phis == sorted(phis, reverse=True)
    assert len(engine.handle_rank({"user": "u1", "candidates": cands, "zones": 10})["ranking"]) == 3


def test_events_accept_partial_and_empty(client):
    good = [dict(CLICK, ts=n) for n in range(3)]
    assert client.post("/events", json=good).json() == {"accepted": 3}
    mixed = good[:2] + [{"ts": 1, "user": "u1"}]
    assert client.post("/events", json=mixed).json() == {"accepted": 2, "rejected": [2]}
    assert client.post("/events", json=[]).json() == {"accepted": 0}
    r = client.post("/events", json=[{"ts": -1}, {"event": "x"}])
    assert r.status_code == 400
    assert r.json()["rejected"] == [0, 1] and len(r.json()["errors"]) == 2
    assert client.post("/events", json={"not": "a list"}).status_code == 400


def test_events_are_durable_before_ack(tmp_path):
    engine = Engine.from_model(single_item_model(), tmp_path, fsync=True)
    engine.handle_events([CLICK])
    lines = (tmp_path / "events.jsonl").read_text().splitlines()
    assert [json.loads(x) for x in lines] == [CLICK]
    engine.stop()


def test_click_raises_lambda_and_phi_within_an_interval(client):
    req = {"user": "u1", "candidates": [{"id": "k", "items": ["i1"]}]}
    before = client.post("/rank", json=req).json()["scores"]["k"]
    assert client.post("/events", json=[CLICK]).status_code == 200
    time.sleep(0.05)
    deadline = time.monotonic() + 2.0
    while time.monotonic() < deadline:
        after = client.post("/rank", json=req).json()["scores"]["k"]
        if after["lambda"] != before["lambda"]:
            break
        time.sleep(0.01)
    assert after["lambda"] > before["lambda"] and after["phi"] > before["phi"]
    assert client.get("/priors/u1/k").json() == {"a": 2.0, "b": 1.0, "lambda": 2 / 3}


def test_health_and_priors(client):
    h = client.get("/health")
    assert h.status_code == 200
    assert h.json()["status"] == "ok" and set(h.json()["artifacts"]) == set(ARTIFACTS)
    assert client.get("/priors/nobody/k").json() == {"a": 1.0, "b": 1.0, "lambda": 0.5}


def test_not_ready_is_503(tmp_path):
    engine = Engine(EngineConfig(model_dir=tmp_path / "missing", state_dir=tmp_path / "s"))
    with TestClient(create_app(engine)) as c:
        assert c.get("/health").status_code == 503
        assert c.post("/rank", json={"user": "u", "candidates": [{"id": "k", "items": ["i"]}]}).status_code == 503
        assert c.post("/events", json=[CLICK]).status_code == 503
        assert c.get("/priors/u/k").status_code == 503


@pytest.fixture(scope="module")
def model_dir(tmp_path_factory):
    world = generate_world(WorldConfig(n_users=20), seed=1)
    out = tmp_path_factory.mktemp("model")
    result = train_models(world.history, world.catalog, TrainConfig(dim=4, iterations=3))
    save_model_dir(result, out)
    return out, world


def test_checksum_mismatch_blocks_readiness(model_dir, tmp_path):
    src, _ = model_dir
    bad = tmp_path / "bad"
    shutil.copytree(src, bad)
    with open(bad / "priors.jsonl", "a") as fh:
        fh.write('{"user":"x","carousel":"y","a":9,"b":9}\n')
    engine = Engine(EngineConfig(model_dir=bad, state_dir=tmp_path / "s"))
    with TestClient(create_app(engine)) as c:
        assert c.get("/health").status_code == 503
        assert not engine.ready


def test_restart_replays_log(model_dir, tmp_path):
    src, world = model_dir
    cfg = EngineConfig(model_dir=src, state_dir=tmp_path / "state", fold_mode="provisional")
    first = Engine(cfg)
    first.load()
    u, k = "u0", world.carousels[0].id
    first.handle_events([{"ts": 10**10, "user": u, "carousel": k, "item": world.carousels[0].items[0], "event": "atc"}])
    first.tick()
    seen = first.prior(u, k)
    first.stop()
    second = Engine(cfg)
    second.load()
    assert second.prior(u, k) == seen
    assert json.loads((tmp_path / "state" / "checkpoint.json").read_text()) == {"offset": 1}
    second.stop()


def test_no_torn_prior_reads_under_concurrent_writes(tmp_path):
    engine = Engine.from_model(random_model(np.random.default_rng(1)), tmp_path, persist=False)
    req = RankRequest.from_json({"user": "u1", "candidates": [{"id": "k1", "items": ["i1", "i2"]}]})
    same = req.candidates * 2  # the request parser forbids this; score directly
    stop = threading.Event()

    def writer():
        while not stop.is_set():
            engine.priors.apply("u1", "k1", "click")

    t = threading.Thread(target=writer)
    t.start()
    try:
        for _ in range(2000):
            a, b = score_carousels("u1", same, engine.stores, engine.cfg.scoring)
            assert a.lam == b.lam and a.phi == b.phi
    finally:
        stop.set()
        t.join()


def test_request_error_body():
    exc = RequestError(422, "unknown item x", item="x")
    assert exc.body() == {"error": "unknown item x", "item": "x"}
