import io

import numpy as np
import pytest
from fastapi.testclient import TestClient
from PIL import Image

from test_session import build_tiny_dataset, tiny_config
from twoafc.service import create_app
from twoafc.session import Session


@pytest.fixture
def client(tmp_path):
    build_tiny_dataset(tmp_path / "data")
    session = Session.create(tmp_path / "run", tiny_config(tmp_path / "data"))
    return TestClient(create_app(session)), session


class TestSessionEndpoint:
    def test_state_payload(self, client):
        http, _ = client
        body = http.get("/api/session").json()
        assert body["phase"] == "collecting"
        assert body["round"] == 0
        assert body["pending"] == 6


class TestQuestionEndpoint:
    def test_question_payload(self, client):
        http, _ = client
        body = http.get("/api/question", params={"annotator": "alice"}).json()
        assert set(body) == {"question_id", "anchor_url", "option_a_url", "option_b_url", "prompt"}
        assert body["anchor_url"].startswith("/api/image/")
        assert "similar to the anchor" in body["prompt"]

    def test_exhaustion_is_204(self, client):
        http, _ = client
        for i in range(6):
            assert http.get("/api/question", params={"annotator": f"w{i}"}).status_code == 200
        assert http.get("/api/question", params={"annotator": "late"}).status_code == 204

    def test_images_served_as_png(self, client):
        http, session = client
        body = http.get("/api/question", params={"annotator": "alice"}).json()
        response = http.get(body["anchor_url"])
        assert response.status_code == 200
        assert response.headers["content-type"] == "image/png"
        img = Image.open(io.BytesIO(response.content))
        assert img.size == (12, 12)
        anchor_id = body["anchor_url"].rsplit("/", 1)[1]
        assert np.array_equal(np.asarray(img), session.records[anchor_id].pixels)

    def test_unknown_image_404(self, client):
        http, _ = client
        assert http.get("/api/image/notreal").status_code == 404


class TestAnswerEndpoint:
    def test_submit_round_trip(self, client):
        http, session = client
        q = http.get("/api/question", params={"annotator": "alice"}).json()
        response = http.post("/api/answer", json={
            "question_id": q["question_id"], "choice": "A", "annotator_id": "alice"})
        assert response.status_code == 200
        assert len(session.answers) == 1
        assert session.answers[0].question_id == q["question_id"]

    def test_bad_choice_400(self, client):
        http, _ = client
        q = http.get("/api/question", params={"annotator": "alice"}).json()
        response = http.post("/api/answer", json={
            "question_id": q["question_id"], "choice": "C", "annotator_id": "alice"})
        assert response.status_code == 400

    def test_unknown_question_404(self, client):
        http, _ = client
        response = http.post("/api/answer", json={
            "question_id": "zz|a|b", "choice": "A", "annotator_id": "alice"})
        assert response.status_code == 404

    def test_duplicate_post_idempotent(self, client):
        http, session = client
        q = http.get("/api/question", params={"annotator": "alice"}).json()
        payload = {"question_id": q["question_id"], "choice": "B", "annotator_id": "alice"}
        http.post("/api/answer", json=payload)
        http.post("/api/answer", json=payload)
        assert len(session.answers) == 1


class TestRoundAndReports:
    def test_dendrogram_409_before_training(self, client):
        http, _ = client
        assert http.get("/api/dendrogram").status_code == 409

    def test_advance_409_while_collecting(self, client):
        http, _ = client
        assert http.post("/api/round/advance").status_code == 409

    def test_full_round_via_http(self, client):
        http, session = client
        while True:
            response = http.get("/api/question", params={"annotator": "oracle"})
            if response.status_code == 204:
                break
            q = response.json()
            record = session.answer_with_oracle(session.questions[q["question_id"]])
            assert record.question_id == q["question_id"]
        state = http.post("/api/round/advance").json()
        assert state["round"] == 1
        dendrogram = http.get("/api/dendrogram")
        assert dendrogram.status_code == 200
        tree = dendrogram.json()
        assert "children" in tree
        report = http.get("/api/report")
        assert report.status_code == 200
        rows = report.json()
        assert rows[0]["level"] == 0
        csv = http.get("/api/report", params={"format": "csv"})
        assert csv.text.startswith("level,clusters")
