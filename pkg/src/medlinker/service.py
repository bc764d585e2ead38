"""HTTP endpoints: /extract and /link mirror the two-service split, /code runs both."""

from __future__ import annotations

import json
import logging
import threading
from collections.abc import Callable
from contextlib import asynccontextmanager

from fastapi import FastAPI, Request
from fastapi.concurrency import run_in_threadpool
from fastapi.responses import JSONResponse

from .errors import EmptyMention
from .pipeline import Coder, Referral

log = logging.getLogger(__name__)


class BadRequest(Exception):
    pass


class _State:
    def __init__(self, coder: Coder | None):
        self.coder = coder
        self.error: str | None = None
        self.ready = threading.Event()
        if coder is not None:
            self.ready.set()


async def _json_body(request: Request) -> dict:
    raw = await request.body()
    try:
        body = json.loads(raw)
    except (json.JSONDecodeError, UnicodeDecodeError):
        raise BadRequest("request body is not valid JSON") from None
    if not isinstance(body, dict):
        raise BadRequest("request body must be a JSON object")
    return body


def _require_str(body: dict, key: str) -> str:
    value = body.get(key)
    if not isinstance(value, str):
        raise BadRequest(f"field {key!r} must be a string")
    return value


def create_app(coder: Coder | None = None, loader: Callable[[], Coder] | None = None) -> FastAPI:
    """Build the app around a ready ``coder`` or a ``loader`` run at startup.

    While the loader runs, every endpoint answers 503.
    """
    if (coder is None) == (loader is None):
        raise ValueError("pass exactly one of coder or loader")
    state = _State(coder)

    def _load():
        try:
            state.coder = loader()
        except Exception as exc:  # surfaced through /health
            log.exception("index load failed")
            state.error = f"{type(exc).__name__}: {exc}"
        finally:
            state.ready.set()

    @asynccontextmanager
    async def lifespan(app):
        if loader is not None and not state.ready.is_set():
            threading.Thread(target=_load, name="index-loader", daemon=True).start()
        yield

    app = FastAPI(title="medlinker", lifespan=lifespan)
    app.state.medlinker = state

    @app.exception_handler(BadRequest)
    async def _bad_request(request, exc):
        return JSONResponse({"error": str(exc)}, status_code=400)

    @app.exception_handler(EmptyMention)
    async def _empty_mention(request, exc):
        return JSONResponse({"error": str(exc)}, status_code=422)

    def _coder_or_503():
        if state.coder is None:
            detail = state.error or "index is still loading"
            return None, JSONResponse({"status": "unavailable", "error": detail}, status_code=503)
        return state.coder, None

    @app.get("/health")
    async def health():
        coder, unavailable = _coder_or_503()
        if unavailable:
            return unavailable
        return {"status": "ok", "doc_count": coder.index.doc_count, "manifest": coder.index.manifest()}

    @app.post("/extract")
    async def extract(request: Request):
        coder, unavailable = _coder_or_503()
        if unavailable:
            return unavailable
        text = _require_str(await _json_body(request), "text")
        spans = await run_in_threadpool(coder.extract, text)
        return {"spans": [s.to_dict() for s in spans]}

    @app.post("/link")
    async def link(request: Request):
        coder, unavailable = _coder_or_503()
        if unavailable:
            return unavailable
        body = await _json_body(request)
        mention = _require_str(body, "mention")
        k = body.get("k", coder.cfg.k)
        if not isinstance(k, int) or isinstance(k, bool) or k < 1:
            raise BadRequest("field 'k' must be a positive integer")
        candidates = await run_in_threadpool(coder.link, mention, k)
        return {"mention": mention, "candidates": [c.to_dict() for c in candidates]}

    @app.post("/code")
    async def code(request: Request):
        coder, unavailable = _coder_or_503()
        if unavailable:
            return unavailable
        body = await _json_body(request)
        try:
            referral = Referral.from_dict(body)
        except ValueError as exc:
            raise BadRequest(str(exc)) from None
        result = await run_in_threadpool(coder.code, referral)
        return result.to_dict()

    return app


def serve(coder_loader: Callable[[], Coder], host: str = "127.0.0.1", port: int = 8000) -> None:
    import uvicorn

    uvicorn.run(create_app(loader=coder_loader), host=host, port=port)
