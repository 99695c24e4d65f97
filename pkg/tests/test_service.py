"""Inference-service tests: endpoint contracts, validation diagnostics, and
parity with the offline prediction path."""

import json
import time

import numpy as np
import pytest
import torch
from fastapi.testclient import TestClient

from glucopred.checkpoint import checkpoint_hash, save_checkpoint
from glucopred.data import build_examples
from glucopred.model import build_model
from glucopred.pipeline import collect_examples
from glucopred.preprocess import DEFAULT_FREQUENCY_MAP, fit_normalizer
from glucopred.serving import (
    RequestFormatError,
    ServingState,
    example_to_request,
    parse_request,
    predict_from_request,
)
from glucopred.service import create_app
from glucopred.synth import GeneratorConfig, default_schemas, generate_cohort

from .conftest import tiny_model_config


@pytest.fixture(scope="module")
def served(tmp_path_factory):
    """A tiny trained-ish checkpoint, its episodes, and a live test app."""
    schemas = default_schemas()
    episodes, _, _, _ = generate_cohort(GeneratorConfig(seed=23, n_patients=10))
    examples = collect_examples(episodes)
    normalizer = fit_normalizer(schemas, examples)
    model = build_model(schemas, tiny_model_config(), seed=1)
    path = tmp_path_factory.mktemp("ckpt") / "model.ckpt"
    save_checkpoint(path, model, normalizer=normalizer, frequency_map=dict(DEFAULT_FREQUENCY_MAP))

    templates_path = tmp_path_factory.mktemp("tpl") / "templates.json"
    state = ServingState.from_checkpoint(path)
    templates = []
    for i, example in enumerate(examples[:6]):
        request = example_to_request(schemas, example.episode, example.cutoff_offset)
        templates.append(
            {
                "name": f"template_{i}",
                "request": request,
                "stored_prediction": predict_from_request(state, request),
            }
        )
    templates_path.write_text(json.dumps({"templates": templates}))

    app = create_app(path, templates_path)
    return schemas, episodes, examples, path, state, TestClient(app)


class TestHealth:
    def test_ready_after_load(self, served):
        *_, client = served
        response = client.get("/health")
        assert response.status_code == 200
        assert response.json()["status"] == "ready"

    def test_503_without_checkpoint(self):
        client = TestClient(create_app())
        assert client.get("/health").status_code == 503
        assert client.post("/predict", json={"sources": {}}).status_code == 503

    def test_hash_matches_checkpoint_file(self, served):
        _, _, _, path, _, client = served
        assert client.get("/health").json()["model_hash"] == checkpoint_hash(path)


class TestPredict:
    def test_matches_offline_path_bitwise(self, served):
        schemas, episodes, examples, _, state, client = served
        for example in examples[:10]:
            request = example_to_request(schemas, example.episode, example.cutoff_offset)
            offline = predict_from_request(state, request)
            online = client.post("/predict", json=request).json()
            assert online == json.loads(json.dumps(offline))

    def test_missing_source_uses_placeholder(self, served):
        *_, client = served
        response = client.post(
            "/predict",
            json={"sources": {"labs": [{"offset_minutes": 10.0, "values": {"result": 120.0, "test_name": "glucose"}}]}},
        )
        assert response.status_code == 200
        body = response.json()
        assert abs(sum(body["probabilities"]) - 1.0) <= 1e-6
        assert abs(sum(body["fusion_weights"].values()) - 1.0) <= 1e-6

    def test_negative_offset_400_names_field(self, served):
        *_, client = served
        response = client.post(
            "/predict",
            json={"sources": {"labs": [{"offset_minutes": -5.0, "values": {}}]}},
        )
        assert response.status_code == 400
        detail = response.json()["detail"]
        assert detail[0]["field"] == "sources.labs[0].offset_minutes"

    def test_unknown_source_400(self, served):
        *_, client = served
        response = client.post("/predict", json={"sources": {"astrology": []}})
        assert response.status_code == 400
        assert "astrology" in response.json()["detail"][0]["field"]

    def test_unknown_feature_400(self, served):
        *_, client = served
        response = client.post(
            "/predict",
            json={"sources": {"labs": [{"offset_minutes": 3.0, "values": {"mystery": 1.0}}]}},
        )
        assert response.status_code == 400
        assert "mystery" in response.json()["detail"][0]["field"]

    def test_unknown_category_allowed(self, served):
        *_, client = served
        response = client.post(
            "/predict",
            json={
                "sources": {
                    "labs": [
                        {"offset_minutes": 3.0, "values": {"result": 99.0, "test_name": "klingon-panel"}}
                    ]
                }
            },
        )
        assert response.status_code == 200

    def test_malformed_body_400(self, served):
        *_, client = served
        response = client.post(
            "/predict", content=b"{not json", headers={"content-type": "application/json"}
        )
        assert response.status_code == 400

    def test_empty_request_all_placeholders(self, served):
        *_, client = served
        response = client.post("/predict", json={"sources": {}})
        assert response.status_code == 200

    def test_latency_budget(self, served):
        schemas, episodes, examples, _, _, client = served
        request = example_to_request(schemas, examples[0].episode, examples[0].cutoff_offset)
        client.post("/predict", json=request)  # warm up
        times = []
        for _ in range(20):
            start = time.perf_counter()
            assert client.post("/predict", json=request).status_code == 200
            times.append(time.perf_counter() - start)
        assert float(np.median(times)) <= 0.1

    def test_concurrent_identical_requests_agree(self, served):
        from concurrent.futures import ThreadPoolExecutor

        schemas, episodes, examples, _, _, client = served
        request = example_to_request(schemas, examples[0].episode, examples[0].cutoff_offset)
        with ThreadPoolExecutor(max_workers=4) as pool:
            bodies = list(
                pool.map(lambda _: client.post("/predict", json=request).json(), range(8))
            )
        assert all(b == bodies[0] for b in bodies)


class TestTemplates:
    def test_served_verbatim(self, served):
        *_, client = served
        payload = client.get("/templates").json()
        assert len(payload["templates"]) == 6
        names = [t["name"] for t in payload["templates"]]
        assert len(set(names)) == 6

    def test_each_template_roundtrips_through_predict(self, served):
        *_, client = served
        for template in client.get("/templates").json()["templates"]:
            response = client.post("/predict", json=template["request"])
            assert response.status_code == 200
            assert response.json() == template["stored_prediction"]


class TestSchemaEndpoint:
    def test_reports_schema_and_bounds(self, served):
        *_, client = served
        payload = client.get("/schema").json()
        names = [s["source_name"] for s in payload["sources"]]
        assert names == ["static", "vitals", "labs", "meds", "diagnosis"]
        assert "labs" in payload["bounds"]
        assert "result" in payload["bounds"]["labs"]
        glucose = payload["bounds"]["labs"]["result"]["glucose"]
        assert glucose["low"] < glucose["high"]
        assert "request_schema" in payload and "response_schema" in payload


class TestParseRequest:
    def test_expansion_applied_when_stop_given(self, served):
        schemas, *_ = served
        payload = {
            "sources": {
                "meds": [
                    {
                        "offset_minutes": 0.0,
                        "values": {"dose": 4.0, "drug": "insulin-rapid", "frequency": "q2h"},
                        "stop_offset_minutes": 240.0,
                    }
                ]
            }
        }
        series = parse_request(schemas, payload, DEFAULT_FREQUENCY_MAP)
        meds = series[4]
        assert [tp.offset_minutes for tp in meds.time_points] == [0.0, 120.0, 240.0]

    def test_records_sorted_by_offset(self, served):
        schemas, *_ = served
        payload = {
            "sources": {
                "labs": [
                    {"offset_minutes": 50.0, "values": {"result": 1.0, "test_name": "lactate"}},
                    {"offset_minutes": 10.0, "values": {"result": 2.0, "test_name": "lactate"}},
                ]
            }
        }
        series = parse_request(schemas, payload, DEFAULT_FREQUENCY_MAP)
        assert [tp.offset_minutes for tp in series[3].time_points] == [10.0, 50.0]

    def test_non_numeric_value_rejected(self, served):
        schemas, *_ = served
        with pytest.raises(RequestFormatError) as err:
            parse_request(
                schemas,
                {"sources": {"labs": [{"offset_minutes": 1.0, "values": {"result": "high"}}]}},
                DEFAULT_FREQUENCY_MAP,
            )
        assert err.value.field == "sources.labs[0].values.result"
