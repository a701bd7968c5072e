import numpy as np
import pytest
from fastapi.testclient import TestClient

from rtinterp.core import IntervalSequence, SplineConfig
from rtinterp.policy import MyopicParams, ParametrizedParams, params_to_dict
from rtinterp.rti import reconstruct
from rtinterp.service import create_app

from conftest import random_sequence


@pytest.fixture
def client():
    return TestClient(create_app())


def _policy(params=MyopicParams(), **extra):
    return params_to_dict(SplineConfig(3, 1), params, **extra)


def _intervals(seq):
    return [{"x": float(x), "y": float(y), "eps": float(e)} for x, y, e in zip(seq.x, seq.y, seq.eps)]


def test_health(client):
    r = client.get("/health")
    assert r.status_code == 200 and r.json()["status"] == "ok" and r.json()["sessions"] == 0


def test_session_streams_the_same_sections_as_the_library(client):
    seq = random_sequence(np.random.default_rng(50), 9)
    params = ParametrizedParams(0.1, 0.8, -2.0)
    r = client.post("/sessions", json={"policy": _policy(params)})
    assert r.status_code == 201
    sid = r.json()["session_id"]
    ivs = _intervals(seq)
    first = client.post(f"/sessions/{sid}/intervals", json={"intervals": ivs[:4]}).json()
    rest = client.post(f"/sessions/{sid}/intervals", json={"intervals": ivs[4:]}).json()
    assert first["received"] == 4 and rest["received"] == 9
    got = [s["coeffs"] for s in first["sections"] + rest["sections"]]
    ref = reconstruct(seq, SplineConfig(3, 1), params).spline.sections
    np.testing.assert_array_equal(np.array(got), np.stack(ref))
    assert client.get("/health").json()["sessions"] == 1
    assert client.delete(f"/sessions/{sid}").status_code == 204
    assert client.post(f"/sessions/{sid}/intervals", json={"intervals": ivs[:1]}).status_code == 404
    assert client.delete(f"/sessions/{sid}").status_code == 404


def test_session_rejects_out_of_order_timestamps(client):
    sid = client.post("/sessions", json={"policy": _policy()}).json()["session_id"]
    client.post(f"/sessions/{sid}/intervals", json={"intervals": [{"x": 1.0, "y": 0.0, "eps": 0.1}]})
    r = client.post(f"/sessions/{sid}/intervals", json={"intervals": [{"x": 0.5, "y": 0.0, "eps": 0.1}]})
    assert r.status_code == 422


def test_validation_errors(client):
    assert client.post("/sessions", json={"policy": {"kind": "lstm"}}).status_code == 422
    bad_e0 = {"policy": _policy(), "e0": [1.0, 2.0, 3.0]}
    assert client.post("/sessions", json=bad_e0).status_code == 422
    neg = {"policy": _policy(), "intervals": [{"x": 0, "y": 0, "eps": -1}, {"x": 1, "y": 0, "eps": 0.1}]}
    assert client.post("/reconstruct", json=neg).status_code == 422


def test_one_shot_reconstruct_in_raw_units(client):
    seq = random_sequence(np.random.default_rng(51), 7)
    mean, std = 0.4, 2.0
    doc = _policy(standardization={"mean": mean, "std": std})
    r = client.post("/reconstruct", json={"policy": doc, "intervals": _intervals(seq)})
    assert r.status_code == 200
    body = r.json()
    assert len(body["sections"]) == 6
    scaled = random_sequence(np.random.default_rng(51), 7)
    model = IntervalSequence.from_arrays(scaled.x, (scaled.y - mean) / std, scaled.eps / std)
    ref = reconstruct(model, SplineConfig(3, 1), MyopicParams())
    assert body["loss"] == pytest.approx(ref.loss, rel=1e-10)
    a0 = np.array(body["sections"][0]["coeffs"])
    np.testing.assert_allclose(a0[1:], std * ref.spline.sections[0][1:], rtol=1e-12)
    assert a0[0] == pytest.approx(std * ref.spline.sections[0][0] + mean, rel=1e-12)
