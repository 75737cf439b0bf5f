"""Scoring endpoint implementing the monitor wire protocol.

POST /score with {"kind": "stuck"|"milestone", "task": string|null,
"window": [{"rationale", "action"}, ...]} returns {"score": s}. "task"
must be present iff the kind is "milestone". GET /health reports the
loaded artifact digests. The service returns raw scores; decision
thresholds live in the cascade controller, not here.
"""

from __future__ import annotations

import logging
from pathlib import Path
from typing import Any, Optional

from fastapi import FastAPI
from fastapi.responses import JSONResponse

from . import __version__
from .data import render_window
from .train import Detector

log = logging.getLogger(__name__)


def _bad_request(detail: str) -> JSONResponse:
    return JSONResponse(status_code=400, content={"error": detail})


def _validate(body: Any) -> Optional[str]:
    if not isinstance(body, dict):
        return "body must be a JSON object"
    kind = body.get("kind")
    if kind not in ("stuck", "milestone"):
        return f"unknown kind {kind!r}"
    task = body.get("task")
    if kind == "milestone" and not task:
        return "milestone scoring requires a task description"
    if kind == "stuck" and task:
        return "stuck scoring does not take a task description"
    window = body.get("window")
    if not isinstance(window, list) or not window:
        return "window must be a non-empty list"
    for entry in window:
        if not isinstance(entry, dict) or "rationale" not in entry or "action" not in entry:
            return "window entries need 'rationale' and 'action'"
        action = entry["action"]
        if not isinstance(action, dict) or "kind" not in action:
            return "actions need a 'kind'"
    return None


def create_app(artifacts: dict[str, Path | str]) -> FastAPI:
    """App serving the detectors in ``artifacts`` (kind -> artifact dir)."""
    detectors: dict[str, Detector] = {}
    for kind, path in artifacts.items():
        detectors[kind] = Detector.load(path)
        log.info("loaded %s detector from %s (digest %s)", kind, path, detectors[kind].config_digest)

    app = FastAPI(title="monitor-service", version=__version__)

    @app.post("/score")
    async def score(body: dict):  # noqa: ANN001 - protocol body validated by hand
        problem = _validate(body)
        if problem:
            return _bad_request(problem)
        kind = body["kind"]
        detector = detectors.get(kind)
        if detector is None:
            return _bad_request(f"no {kind} detector loaded")
        text = render_window(body["window"], body.get("task") if kind == "milestone" else None)
        return {"score": detector.score_text(text)}

    @app.get("/health")
    async def health():
        return {
            "status": "ok",
            "version": __version__,
            "models": {kind: d.config_digest for kind, d in detectors.items()},
        }

    return app
