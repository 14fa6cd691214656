"""HTTP service exposing the full workflow.

Active sessions live in memory; every mutation is persisted to the portfolio
store through the engine. Mutating endpoints take a per-session exclusive
lock (single writer per session, many sessions in parallel); reads serve the
current snapshot lock-free.
"""

from __future__ import annotations

import logging
import threading
import time
from collections import defaultdict
from pathlib import Path

from fastapi import Body, FastAPI, Request
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import JSONResponse

from . import analytics
from .config import AppConfig
from .domain import (
    DomainError,
    IllegalTransition,
    BeatParseError,
    ValidationError,
)
from .expander import IllegalState, UnknownSegment
from .gateway import BackendError, GatewayError, RateLimited
from .personas import AllPersonasFailed
from .store import CorruptPortfolio, PortfolioStore, StoryState, UnknownSession, session_to_dict
from .workflow import SelectionError, StateError, StoryEngine, sparkle_from_dict

log = logging.getLogger("storyloom.service")


def _error_payload(code: str, message: str, **extra) -> dict:
    payload = {"error": {"code": code, "message": message}}
    payload["error"].update(extra)
    return payload


def _error_response(exc: Exception) -> JSONResponse:
    if isinstance(exc, ValidationError):
        return JSONResponse(
            status_code=400,
            content=_error_payload("validation", str(exc), fields=exc.fields),
        )
    if isinstance(exc, BeatParseError):
        return JSONResponse(status_code=400, content=_error_payload("invalid_beat", str(exc)))
    if isinstance(exc, (UnknownSession, UnknownSegment)):
        return JSONResponse(status_code=404, content=_error_payload("not_found", str(exc)))
    if isinstance(exc, (IllegalTransition, StateError, SelectionError, IllegalState)):
        return JSONResponse(status_code=409, content=_error_payload("illegal_state", str(exc)))
    if isinstance(exc, RateLimited):
        return JSONResponse(
            status_code=429,
            content=_error_payload("rate_limited", str(exc), retry_after=exc.retry_after),
        )
    if isinstance(exc, AllPersonasFailed):
        return JSONResponse(
            status_code=502,
            content=_error_payload("all_personas_failed", str(exc), failures=exc.failures),
        )
    if isinstance(exc, GatewayError):
        status = exc.status if isinstance(exc, BackendError) and exc.status else 502
        return JSONResponse(
            status_code=502,
            content=_error_payload("backend_error", str(exc), upstream_status=status),
        )
    if isinstance(exc, CorruptPortfolio):
        return JSONResponse(
            status_code=500,
            content=_error_payload(
                "corrupt_portfolio", str(exc), session_id=exc.session_id, position=exc.position
            ),
        )
    if isinstance(exc, DomainError):
        return JSONResponse(status_code=400, content=_error_payload("domain_error", str(exc)))
    raise exc


def _round_payload(state: StoryState) -> dict:
    data = session_to_dict(state.session)
    rounds = data["proposal_history"]
    return {
        "session_id": state.session.session_id,
        "status": state.session.status.value,
        "round": rounds[-1] if rounds else None,
    }


def create_app(config: AppConfig | None = None, engine: StoryEngine | None = None) -> FastAPI:
    config = config or AppConfig()
    if engine is None:
        store = PortfolioStore(config.portfolio_dir)
        engine = StoryEngine(
            profile=config.profile, store=store, retrieval_k=config.retrieval_k
        )

    app = FastAPI(title="storyloom", version="0.1.0")
    app.add_middleware(
        CORSMiddleware, allow_origins=["*"], allow_methods=["*"], allow_headers=["*"]
    )
    app.state.engine = engine

    sessions: dict[str, StoryState] = {}
    locks: defaultdict[str, threading.Lock] = defaultdict(threading.Lock)

    @app.middleware("http")
    async def request_logging(request: Request, call_next):
        started = time.perf_counter()
        response = await call_next(request)
        log.info(
            "request method=%s path=%s status=%s duration_ms=%.1f",
            request.method,
            request.url.path,
            response.status_code,
            (time.perf_counter() - started) * 1000,
        )
        return response

    @app.exception_handler(DomainError)
    async def domain_error_handler(_request: Request, exc: DomainError):
        return _error_response(exc)

    @app.exception_handler(GatewayError)
    async def gateway_error_handler(_request: Request, exc: GatewayError):
        return _error_response(exc)

    def get_state(session_id: str) -> StoryState:
        if session_id in sessions:
            return sessions[session_id]
        if engine.store is not None:
            state = engine.store.load(session_id)  # raises UnknownSession
            sessions[session_id] = state
            return state
        raise UnknownSession(session_id)

    # -- session lifecycle --------------------------------------------------

    @app.post("/sessions", status_code=201)
    def create_session(body: dict = Body(...)):
        sparkle = sparkle_from_dict(body.get("sparkle", body))
        state = engine.create_session(sparkle, session_id=body.get("session_id"))
        sessions[state.session.session_id] = state
        return session_to_dict(state.session)

    @app.get("/sessions")
    def list_sessions():
        known = dict(sessions)
        if engine.store is not None:
            for session_id in engine.store.list_ids():
                if session_id not in known:
                    try:
                        known[session_id] = get_state(session_id)
                    except CorruptPortfolio as exc:
                        log.warning("skipping corrupt portfolio entry: %s", exc)
        summaries = [
            {
                "session_id": state.session.session_id,
                "status": state.session.status.value,
                "sparkle_text": state.session.sparkle.text,
                "beats": len(state.session.beats),
                "segments": len(state.session.segments),
                "target_beat_count": state.session.sparkle.target_beat_count,
            }
            for state in known.values()
        ]
        summaries.sort(key=lambda s: s["session_id"])
        return {"sessions": summaries}

    @app.get("/sessions/{session_id}")
    def get_session(session_id: str):
        return session_to_dict(get_state(session_id).session)

    # -- rounds and proposals -------------------------------------------------

    @app.post("/sessions/{session_id}/proposals")
    def next_round(session_id: str):
        state = get_state(session_id)
        with locks[session_id]:
            engine.run_round(state)
        return _round_payload(state)

    @app.post("/sessions/{session_id}/proposals/{persona_id}/retry")
    def retry_persona(session_id: str, persona_id: str):
        state = get_state(session_id)
        with locks[session_id]:
            engine.retry_persona(state, persona_id)
        return _round_payload(state)

    @app.put("/sessions/{session_id}/proposals/{persona_id}/beat")
    def edit_proposal(session_id: str, persona_id: str, body: dict = Body(...)):
        state = get_state(session_id)
        with locks[session_id]:
            engine.edit_proposal(state, persona_id, body.get("beat", body))
        return _round_payload(state)

    @app.post("/sessions/{session_id}/select")
    def select(session_id: str, body: dict = Body(...)):
        state = get_state(session_id)
        persona_id = body.get("persona_id", "")
        with locks[session_id]:
            engine.select(state, persona_id)
        return {
            "session_id": session_id,
            "status": state.session.status.value,
            "selection_log": list(state.session.selection_log),
        }

    @app.post("/sessions/{session_id}/expand")
    def expand(session_id: str):
        state = get_state(session_id)
        with locks[session_id]:
            segment = engine.expand(state)
        return {
            "session_id": session_id,
            "status": state.session.status.value,
            "segment": session_to_dict(state.session)["segments"][segment.beat_index],
        }

    # -- segment editing -------------------------------------------------------

    @app.post("/sessions/{session_id}/segments/{n}/refine")
    def refine(session_id: str, n: int, body: dict = Body(...)):
        state = get_state(session_id)
        with locks[session_id]:
            engine.refine(state, n, body.get("instruction", ""))
        return {
            "session_id": session_id,
            "segment": session_to_dict(state.session)["segments"][n],
        }

    @app.put("/sessions/{session_id}/segments/{n}")
    def manual_edit(session_id: str, n: int, body: dict = Body(...)):
        state = get_state(session_id)
        with locks[session_id]:
            engine.manual_edit(state, n, body.get("prose", ""))
        return {
            "session_id": session_id,
            "segment": session_to_dict(state.session)["segments"][n],
        }

    @app.post("/sessions/{session_id}/brainstorm")
    def brainstorm(session_id: str, body: dict = Body(...)):
        state = get_state(session_id)
        with locks[session_id]:
            reply = engine.brainstorm(state, body.get("message", ""))
        return {
            "session_id": session_id,
            "reply": reply,
            "transcript_length": len(state.session.brainstorm_log),
        }

    # -- analytics --------------------------------------------------------------

    @app.get("/sessions/{session_id}/metrics")
    def session_metrics(session_id: str):
        state = get_state(session_id)
        return engine.metrics(state).as_dict()

    @app.get("/analytics/transitions")
    def transitions():
        logs = []
        seen: set[str] = set(sessions)
        for state in sessions.values():
            logs.append(list(state.session.selection_log))
        if engine.store is not None:
            for session_id in engine.store.list_ids():
                if session_id in seen:
                    continue
                try:
                    logs.append(list(engine.store.load(session_id).session.selection_log))
                except CorruptPortfolio as exc:
                    log.warning("skipping corrupt portfolio entry: %s", exc)
        matrix = analytics.build_transition_matrix(logs, engine.roster.ids)
        try:
            stats = analytics.asymmetry_stats(matrix).as_dict()
        except analytics.NoTransitions:
            stats = None
        return {"transition_matrix": matrix.as_dict(), "asymmetry": stats}

    @app.get("/healthz")
    def healthz():
        healthy = bool(getattr(engine.backend, "healthy", lambda: True)())
        return {
            "status": "ok" if healthy else "degraded",
            "backend_kind": engine.profile.kind,
            "backend_healthy": healthy,
        }

    if config.ui_dir and Path(config.ui_dir).is_dir():
        from fastapi.staticfiles import StaticFiles

        app.mount("/ui", StaticFiles(directory=str(config.ui_dir), html=True), name="ui")

    return app
