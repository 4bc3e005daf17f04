from __future__ import annotations

import base64
import io

from adapter_service.app import create_app
from adapter_service.backends import StubBackend
from adapter_service.lexicon import load_terms, ROOM_LEXICON_PATH, OBJECT_LEXICON_PATH


def png_b64(color=(10, 20, 30)) -> str:
    from PIL import Image

    buf = io.BytesIO()
    Image.new("RGB", (2, 2), color).save(buf, format="PNG")
    return base64.b64encode(buf.getvalue()).decode("ascii")


class TestLabel:
    def test_scripted_key_returns_fixed_label(self, client):
        response = client.post(
            "/label", json={"image_b64": png_b64(), "frame_key": "video1/00004"}
        )
        assert response.status_code == 200
        body = response.json()
        assert body["backend_id"] == "stub-v1"
        assert 0.0 <= body["room_confidence"] <= 1.0
        assert body["objects"]

    def test_identical_requests_identical_responses(self, client):
        payload = {"image_b64": png_b64(), "frame_key": "video1/00004"}
        first = client.post("/label", json=payload)
        second = client.post("/label", json=payload)
        assert first.content == second.content

    def test_garbage_payload_is_400(self, client):
        response = client.post(
            "/label", json={"image_b64": base64.b64encode(b"not an image").decode()}
        )
        assert response.status_code == 400

    def test_invalid_base64_is_400(self, client):
        assert client.post("/label", json={"image_b64": "!!!"}).status_code == 400

    def test_missing_everything_is_400(self, client):
        assert client.post("/label", json={}).status_code == 400

    def test_keyless_request_is_keyed_by_payload(self, client):
        payload = {"image_b64": png_b64((1, 2, 3))}
        first = client.post("/label", json=payload)
        second = client.post("/label", json=payload)
        assert first.status_code == 200
        assert first.content == second.content


class TestAction:
    def test_scripted_pair(self, client):
        response = client.post(
            "/action",
            json={
                "image_a_b64": png_b64((1, 1, 1)),
                "image_b_b64": png_b64((2, 2, 2)),
                "key_a": "v/00000",
                "key_b": "v/00001",
            },
        )
        assert response.status_code == 200
        body = response.json()
        assert body["action"] in ("forward", "turn_left", "turn_right")

    def test_direction_defined_both_ways(self, client):
        a, b = png_b64((1, 1, 1)), png_b64((2, 2, 2))
        forward = client.post(
            "/action",
            json={"image_a_b64": a, "image_b_b64": b, "key_a": "v/00000", "key_b": "v/00001"},
        )
        backward = client.post(
            "/action",
            json={"image_a_b64": b, "image_b_b64": a, "key_a": "v/00001", "key_b": "v/00000"},
        )
        assert forward.status_code == backward.status_code == 200
        # both directions answer deterministically (values may coincide)
        assert forward.content == client.post(
            "/action",
            json={"image_a_b64": a, "image_b_b64": b, "key_a": "v/00000", "key_b": "v/00001"},
        ).content

    def test_one_missing_image_is_400(self, client):
        response = client.post("/action", json={"image_a_b64": png_b64()})
        assert response.status_code == 400

    def test_never_emits_stop(self, client, corpus):
        for i in range(40):
            response = client.post(
                "/action", json={"key_a": f"x/{i:05d}", "key_b": f"x/{i + 1:05d}",
                                 "image_a_b64": png_b64(), "image_b_b64": png_b64()},
            )
            assert response.json()["action"] != "stop"


class _WarmingBackend:
    backend_id = "warming-stub"
    ready = False

    def label(self, key, image):  # pragma: no cover - unreachable while warming
        raise RuntimeError

    def action(self, key_a, key_b, images):  # pragma: no cover
        raise RuntimeError


class TestHealth:
    def test_ready_is_200_with_lexicon_version(self, client, corpus):
        response = client.get("/health")
        assert response.status_code == 200
        body = response.json()
        assert body["status"] == "ok"
        assert body["lexicon_version"] == corpus["lexicon_sha256"]

    def test_warming_is_503(self):
        from fastapi.testclient import TestClient

        app = create_app(_WarmingBackend(), lexicon_version="abc")
        warming = TestClient(app)
        response = warming.get("/health")
        assert response.status_code == 503
        assert response.json()["status"] == "warming"

    def test_warming_backend_rejects_inference(self):
        from fastapi.testclient import TestClient

        app = create_app(_WarmingBackend(), lexicon_version="abc")
        warming = TestClient(app)
        assert warming.post("/label", json={"frame_key": "v/00000"}).status_code == 503


class TestStubBackendUnit:
    def test_confidence_range(self):
        rooms = load_terms(ROOM_LEXICON_PATH)
        objects = load_terms(OBJECT_LEXICON_PATH)
        backend = StubBackend(rooms=rooms, objects=objects, seed=3)
        for i in range(50):
            room, objs, conf = backend.label(f"v/{i:05d}", None)
            assert room in rooms
            assert 0.6 <= conf <= 0.99
            assert 1 <= len(objs) <= 3
            assert len(set(objs)) == len(objs)

    def test_seed_changes_table(self):
        rooms = load_terms(ROOM_LEXICON_PATH)
        objects = load_terms(OBJECT_LEXICON_PATH)
        a = StubBackend(rooms=rooms, objects=objects, seed=1)
        b = StubBackend(rooms=rooms, objects=objects, seed=2)
        labels_a = [a.label(f"v/{i:05d}", None)[0] for i in range(20)]
        labels_b = [b.label(f"v/{i:05d}", None)[0] for i in range(20)]
        assert labels_a != labels_b
