"""HTTP+JSON API over a Session: question leasing, answers, dendrograms, reports."""

from __future__ import annotations

import io
from pathlib import Path

from fastapi import FastAPI, Response
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import JSONResponse, PlainTextResponse
from fastapi.staticfiles import StaticFiles
from PIL import Image
from pydantic import BaseModel

from .errors import InputError, StateError, UnknownIdError
from .evaluation import level_report, pixel_baseline
from .session import Session
from .simulate import true_labels_for


class AnswerBody(BaseModel):
    question_id: str
    choice: str
    annotator_id: str


def _question_payload(question, prompt: str) -> dict:
    return {
        "question_id": question.id,
        "anchor_url": f"/api/image/{question.anchor_id}",
        "option_a_url": f"/api/image/{question.option_a_id}",
        "option_b_url": f"/api/image/{question.option_b_id}",
        "prompt": prompt,
    }


def create_app(session: Session, static_dir: str | None = None,
               prompt: str = "Which object is more similar to the anchor object?") -> FastAPI:
    app = FastAPI(title="twoafc annotation service")
    # the bundled UI is served same-origin; permissive CORS only eases
    # development setups where it runs from a separate dev server
    app.add_middleware(CORSMiddleware, allow_origins=["*"], allow_methods=["*"],
                       allow_headers=["*"])

    @app.exception_handler(InputError)
    async def _input_error(_, exc):
        return JSONResponse(status_code=400, content={"error": str(exc)})

    @app.exception_handler(UnknownIdError)
    async def _unknown_id(_, exc):
        return JSONResponse(status_code=404, content={"error": str(exc)})

    @app.exception_handler(StateError)
    async def _state_error(_, exc):
        return JSONResponse(status_code=409, content={"error": str(exc)})

    @app.get("/api/session")
    def get_session():
        return session.state().to_json()

    @app.get("/api/question")
    def get_question(annotator: str):
        question = session.next_question(annotator)
        if question is None:
            return Response(status_code=204)
        return _question_payload(question, prompt)

    @app.post("/api/answer")
    def post_answer(body: AnswerBody):
        record = session.submit_answer(body.question_id, body.choice, body.annotator_id)
        return {"ok": True, "question_id": record.question_id, "round": record.round}

    @app.get("/api/image/{image_id}")
    def get_image(image_id: str):
        record = session.records.get(image_id)
        if record is None:
            raise UnknownIdError(f"unknown image {image_id!r}")
        pixels = record.pixels
        img = Image.fromarray(pixels if pixels.shape[2] > 1 else pixels[:, :, 0])
        buf = io.BytesIO()
        img.save(buf, format="PNG")
        return Response(content=buf.getvalue(), media_type="image/png")

    @app.get("/api/dendrogram")
    def get_dendrogram():
        return Response(content=session.dendrogram_json(), media_type="application/json")

    @app.get("/api/report")
    def get_report(format: str = "json", max_level: int = 3):
        dendrogram = session.dendrogram()  # raises StateError before first training
        labels = true_labels_for(session)
        baseline = pixel_baseline({r.id: r.pixels for r in session.records.values()})
        report = level_report(dendrogram, baseline, labels, max_level)
        if format == "csv":
            return PlainTextResponse(report.as_csv(), media_type="text/csv")
        return report.as_json()

    @app.post("/api/round/advance")
    def post_advance():
        return session.advance_round().to_json()

    if static_dir and Path(static_dir).is_dir():
        app.mount("/", StaticFiles(directory=static_dir, html=True), name="ui")
    return app
