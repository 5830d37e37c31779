"""Online ranking engine and its HTTP surface.

``Engine`` is the in-process core (usable directly by the simulator and
benchmarks); ``create_app`` wraps it in a FastAPI application exposing
``POST /rank``, ``POST /events``, ``GET /health`` and ``GET /priors/{user}/{carousel}``.
"""

from __future__ import annotations

import logging
import threading
import time
from contextlib import asynccontextmanager
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse

from .domain import (
    Carousel,
    EventParseError,
    UnknownItemError,
    event_from_dict,
)
from .ingestion import EventLog, FeedbackApplier, FoldMode, SessionRule
from .pipeline import ARTIFACTS, load_model_dir
from .priors import PriorStore
from .scoring import ScoringConfig, ScoringStores, rank_carousels, score_carousels

_log = logging.getLogger(__name__)


class RequestError(ValueError):
    """Client error with an HTTP status."""

    def __init__(self, status: int, message: str, **extra: Any):
        super().__init__(message)
        self.status = status
        self.extra = extra

    def body(self) -> dict:
        return {"error": str(self), **self.extra}


class NotReady(RequestError):
    def __init__(self) -> None:
        super().__init__(503, "service not ready")


@dataclass
class RankRequest:
    user: str
    candidates: list[Carousel]
    zones: int

    @classmethod
    def from_json(cls, body: Any) -> RankRequest:
        if not isinstance(body, dict):
            raise RequestError(400, "request body must be a JSON object")
        user = body.get("user")
        if not isinstance(user, str) or not user or any(ch.isspace() for ch in user):
            raise RequestError(400, "user must be a non-empty string without whitespace")
        raw = body.get("candidates")
        if not isinstance(raw, list) or not raw:
            raise RequestError(400, "candidates must be a non-empty list")
        candidates = []
        for n, c in enumerate(raw):
            if not isinstance(c, dict) or not isinstance(c.get("items"), list):
                raise RequestError(400, f"candidate {n} must be an object with an items list")
            try:
                candidates.append(Carousel(c.get("id"), tuple(c["items"])))
            except (ValueError, TypeError) as exc:
                raise RequestError(400, f"candidate {n}: {exc}") from None
        ids = [c.id for c in candidates]
        if len(set(ids)) != len(ids):
            raise RequestError(400, "duplicate carousel id in request")
        zones = body.get("zones", len(candidates))
        if isinstance(zones, bool) or not isinstance(zones, int) or zones < 1:
            raise RequestError(400, "zones must be an integer >= 1")
        return cls(user, candidates, zones)


@dataclass
class EngineConfig:
    model_dir: Path | None = None
    state_dir: Path | None = None
    scoring: ScoringConfig = field(default_factory=ScoringConfig)
    session_gap_s: int = 1800
    update_interval_s: float = 10.0
    snapshot_interval_s: float = 60.0
    fold_mode: FoldMode = "provisional"
    fsync: bool = False
    persist: bool = True


class Engine:
    """Loaded model state, live priors and the feedback loop."""

    def __init__(self, cfg: EngineConfig):
        self.cfg = cfg
        self.ready = False
        self.versions: dict[str, str] = {}
        self._stop = threading.Event()
        self._thread: threading.Thread | None = None
        self._last_snapshot = 0.0
        self.stores: ScoringStores | None = None
        self.log: EventLog | None = None
        self.applier: FeedbackApplier | None = None

    @classmethod
    def from_model(cls, model, state_dir: Path, **kwargs) -> Engine:
        """Build a ready engine around an already loaded model (no files read)."""
        engine = cls(EngineConfig(state_dir=Path(state_dir), **kwargs))
        engine._attach(model)
        return engine

    def load(self) -> None:
        if self.cfg.model_dir is None:
            raise ValueError("no model directory configured")
        model = load_model_dir(self.cfg.model_dir)
        self._attach(model)

    def _attach(self, model) -> None:
        cfg = self.cfg
        state_dir = Path(cfg.state_dir or Path(cfg.model_dir) / "state")
        state_dir.mkdir(parents=True, exist_ok=True)
        self.base_priors: PriorStore = model.priors
        live = model.priors.copy()
        self.log = EventLog(state_dir / "events.jsonl", fsync=cfg.fsync)
        # Session bookkeeping is not persisted, so recovery replays the whole log.
        applier = FeedbackApplier(self.log, live, SessionRule(cfg.session_gap_s), cfg.fold_mode)
        applier.apply()
        if cfg.persist:
            applier.checkpoint_path = state_dir / "checkpoint.json"
            applier._write_checkpoint()
        self.applier = applier
        self.snapshot_path = state_dir / "priors.live.jsonl"
        self.stores = ScoringStores(model.item_table, model.discovery, live, model.catalog)
        self.versions = dict(getattr(model, "versions", {}) or {})
        self.ready = True

    @property
    def priors(self) -> PriorStore:
        return self.stores.priors

    # -- requests -----------------------------------------------------------

    def rank(self, req: RankRequest) -> dict:
        if not self.ready:
            raise NotReady()
        cfg = self.cfg.scoring
        t0 = time.perf_counter_ns()
        try:
            scores = score_carousels(req.user, req.candidates, self.stores, cfg)
        except UnknownItemError as exc:
            raise RequestError(422, str(exc), item=exc.item) from None
        ranking = rank_carousels(scores, req.zones, cfg)
        micros = (time.perf_counter_ns() - t0) / 1000.0
        return {
            "ranking": list(ranking.carousels),
            "scores": {
                s.carousel: {"alpha": s.alpha, "gamma": s.gamma, "phi": s.phi, "lambda": s.lam}
                for s in scores
            },
            "compute_micros": micros,
        }

    def handle_rank(self, body: Any) -> dict:
        return self.rank(RankRequest.from_json(body))

    def handle_events(self, batch: Any) -> dict:
        if not self.ready:
            raise NotReady()
        if not isinstance(batch, list):
            raise RequestError(400, "body must be a JSON array of events")
        rejected: list[int] = []
        errors: list[dict] = []
        events = []
        for n, obj in enumerate(batch):
            try:
                events.append(event_from_dict(obj))
            except EventParseError as exc:
                rejected.append(n)
                errors.append({"index": n, "field": exc.field, "error": str(exc)})
        if batch and not events:
            raise RequestError(400, "no valid events in batch", rejected=rejected, errors=errors)
        for e in events:
            self.log.append(e)
        out: dict = {"accepted": len(events)}
        if rejected:
            out["rejected"] = rejected
        return out

    def prior(self, user: str, carousel: str) -> dict:
        if not self.ready:
            raise NotReady()
        p = self.priors.get(user, carousel)
        return {"a": p.a, "b": p.b, "lambda": p.a / (p.a + p.b)}

    def health(self) -> dict:
        if not self.ready:
            return {"status": "loading", "artifacts": {}}
        return {
            "status": "ok",
            "artifacts": {name: self.versions.get(name, "in-memory")[:12] for name in ARTIFACTS},
            "log_offset": self.applier.offset,
        }

    # -- feedback loop ------------------------------------------------------

    def tick(self) -> int:
        """Apply pending log records to the live priors (one update interval)."""
        n = self.applier.apply()
        now = time.monotonic()
        if self.cfg.persist and now - self._last_snapshot >= self.cfg.snapshot_interval_s:
            self.priors.save(self.snapshot_path, ts=time.time())
            self._last_snapshot = now
        return n

    def start(self) -> None:
        if self._thread is not None:
            return
        self._stop.clear()

        def loop() -> None:
            while not self._stop.wait(self.cfg.update_interval_s):
                try:
                    self.tick()
                except Exception:
                    _log.exception("feedback update failed")

        self._thread = threading.Thread(target=loop, name="feedback-applier", daemon=True)
        self._thread.start()

    def stop(self) -> None:
        self._stop.set()
        if self._thread is not None:
            self._thread.join()
            self._thread = None
        if self.log is not None:
            self.log.close()


def create_app(engine: Engine, load_in_background: bool = False) -> FastAPI:
    @asynccontextmanager
    async def lifespan(app: FastAPI):
        def boot() -> None:
            try:
                if not engine.ready:
                    engine.load()
                engine.start()
            except Exception:
                _log.exception("failed to load model artifacts")

        if load_in_background:
            threading.Thread(target=boot, daemon=True).start()
        else:
            boot()
        yield
        engine.stop()

    app = FastAPI(title="carousel ranking", lifespan=lifespan)

    def error(exc: RequestError) -> JSONResponse:
        return JSONResponse(exc.body(), status_code=exc.status)

    async def json_body(request: Request) -> Any:
        try:
            return await request.json()
        except ValueError:
            raise RequestError(400, "malformed JSON body") from None

    @app.post("/rank")
    async def rank(request: Request):
        try:
            if not engine.ready:
                raise NotReady()
            return engine.handle_rank(await json_body(request))
        except RequestError as exc:
            return error(exc)

    @app.post("/events")
    async def events(request: Request):
        try:
            if not engine.ready:
                raise NotReady()
            return engine.handle_events(await json_body(request))
        except RequestError as exc:
            return error(exc)

    @app.get("/health")
    async def health():
        body = engine.health()
        return JSONResponse(body, status_code=200 if engine.ready else 503)

    @app.get("/priors/{user}/{carousel}")
    async def priors(user: str, carousel: str):
        try:
            return engine.prior(user, carousel)
        except RequestError as exc:
            return error(exc)

    return app


def serve(cfg: EngineConfig, port: int = 8080, host: str = "127.0.0.1") -> None:
    import uvicorn

    app = create_app(Engine(cfg), load_in_background=True)
    uvicorn.run(app, host=host, port=port, log_level="info")

