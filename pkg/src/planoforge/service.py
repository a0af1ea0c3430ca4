"""REST front end: planogram generation and validation with two-slot model versioning.

Each request reads the active snapshot once and uses it to completion, so a
concurrent load or rollback never mixes two model versions in one response.
"""

from __future__ import annotations

import json
import logging
import threading
import time
from collections.abc import Sequence
from dataclasses import dataclass, field

import numpy as np
from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse, PlainTextResponse, Response
from starlette.concurrency import run_in_threadpool

from .constraints import Constraint, ConstraintError, constraints_from_obj, validate
from .diffusion import DenoiserModel, NoiseSchedule, sample, schedule_for
from .domain import (
    Catalog,
    DomainError,
    InvariantError,
    UnknownSkuError,
    fixture_from_dict,
    planogram_from_dict,
    planogram_to_dict,
)
from .evaluation import RevenueModel

log = logging.getLogger(__name__)

MAX_GENERATE = 256


@dataclass(frozen=True)
class ModelSnapshot:
    version: str
    model: DenoiserModel
    schedule: NoiseSchedule
    catalog: Catalog
    constraints: tuple[Constraint, ...]
    revenue_model: RevenueModel = field(default_factory=RevenueModel)

    @classmethod
    def from_model(cls, version: str, model: DenoiserModel, catalog: Catalog, constraints: Sequence[Constraint],
                   revenue_model: RevenueModel | None = None) -> ModelSnapshot:
        return cls(version, model.snapshot(), schedule_for(model), catalog, tuple(constraints),
                   revenue_model or RevenueModel())


class Metrics:
    def __init__(self):
        self._lock = threading.Lock()
        self._counts: dict[str, int] = {}
        self._latency: dict[str, list[float]] = {}

    def observe(self, endpoint: str, status: int, seconds: float) -> None:
        with self._lock:
            key = f"{endpoint} {status}"
            self._counts[key] = self._counts.get(key, 0) + 1
            self._latency.setdefault(endpoint, []).append(seconds * 1000.0)

    def render(self) -> str:
        with self._lock:
            lines = []
            for key in sorted(self._counts):
                endpoint, status = key.split(" ")
                lines.append(f'requests_total{{endpoint="{endpoint}",status="{status}"}} {self._counts[key]}')
            for endpoint in sorted(self._latency):
                arr = np.array(self._latency[endpoint])
                for q in (50, 95, 99):
                    lines.append(f'latency_ms{{endpoint="{endpoint}",quantile="0.{q}"}} {np.percentile(arr, q):.3f}')
            return "\n".join(lines) + "\n"


class NoPreviousSnapshot(RuntimeError):
    pass


class ServiceState:
    """Active and previous model snapshots; swaps happen under one lock."""

    def __init__(self, catalog: Catalog, constraints: Sequence[Constraint]):
        self.catalog = catalog
        self.constraints = tuple(constraints)
        self.metrics = Metrics()
        self._lock = threading.Lock()
        self._active: ModelSnapshot | None = None
        self._previous: ModelSnapshot | None = None

    @property
    def active(self) -> ModelSnapshot | None:
        return self._active

    @property
    def previous(self) -> ModelSnapshot | None:
        return self._previous

    def load(self, snapshot: ModelSnapshot) -> None:
        with self._lock:
            self._previous, self._active = self._active, snapshot
        log.info("model %s active", snapshot.version)

    def rollback(self) -> ModelSnapshot:
        with self._lock:
            if self._previous is None:
                raise NoPreviousSnapshot("no previous model version to roll back to")
            self._active, self._previous = self._previous, self._active
            return self._active


class BadRequest(ValueError):
    pass


def _parse_body(raw: bytes) -> dict:
    try:
        obj = json.loads(raw.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise BadRequest(f"malformed JSON: {exc}") from exc
    if not isinstance(obj, dict):
        raise BadRequest("request body must be a JSON object")
    return obj


def _constraints(body: dict, default: tuple[Constraint, ...]) -> tuple[Constraint, ...]:
    if body.get("constraints") is None:
        return default
    try:
        return constraints_from_obj(body["constraints"])
    except (ConstraintError, TypeError, KeyError, ValueError) as exc:
        raise BadRequest(f"bad constraints: {exc}") from exc


def _int_field(body: dict, name: str, default: int | None = None, lo: int = 0, hi: int | None = None) -> int:
    value = body.get(name, default)
    if value is None or isinstance(value, bool) or not isinstance(value, int):
        raise BadRequest(f"field {name!r} must be an integer")
    if value < lo or (hi is not None and value > hi):
        raise BadRequest(f"field {name!r} out of range [{lo}, {hi}]")
    return value


def generate_response(snapshot: ModelSnapshot, body: dict, constraints: tuple[Constraint, ...]) -> dict:
    """Library-side body of a generate call; the endpoint serializes exactly this."""
    try:
        fixture = fixture_from_dict(body["fixture"])
    except KeyError as exc:
        raise BadRequest("missing field 'fixture'") from exc
    except (DomainError, TypeError, ValueError) as exc:
        raise BadRequest(f"bad fixture: {exc}") from exc
    count = _int_field(body, "count", 1, 0, MAX_GENERATE)
    seed = _int_field(body, "seed", 0)
    store_id = str(body.get("store_id", ""))
    pgs = sample(snapshot.model, snapshot.schedule, fixture, snapshot.catalog, seed, count,
                 snapshot.revenue_model, store_id)
    return {
        "model_version": snapshot.version,
        "planograms": [
            {"planogram": planogram_to_dict(pg), "report": validate(pg, constraints, snapshot.catalog).to_dict()}
            for pg in pgs
        ],
    }


def _json(obj, status: int = 200) -> Response:
    payload = json.dumps(obj, sort_keys=True, separators=(",", ":")).encode("utf-8")
    return Response(payload, status_code=status, media_type="application/json")


def create_app(state: ServiceState, api_key: str | None = None) -> FastAPI:
    app = FastAPI(title="planoforge", version="1")

    @app.middleware("http")
    async def _observe(request: Request, call_next):
        if api_key is not None and request.headers.get("x-api-key") != api_key:
            return _json({"error": "unauthorized"}, 401)
        start = time.perf_counter()
        response = await call_next(request)
        state.metrics.observe(request.url.path, response.status_code, time.perf_counter() - start)
        return response

    @app.post("/v1/planograms/generate")
    async def generate(request: Request):
        snapshot = state.active  # pinned for the whole request
        try:
            body = _parse_body(await request.body())
            if snapshot is None:
                return _json({"error": "no model loaded"}, 503)
            constraints = _constraints(body, snapshot.constraints)
            return _json(await run_in_threadpool(generate_response, snapshot, body, constraints))
        except BadRequest as exc:
            return _json({"error": str(exc)}, 400)

    @app.post("/v1/planograms/validate")
    async def validate_endpoint(request: Request):
        try:
            body = _parse_body(await request.body())
            constraints = _constraints(body, state.constraints)
            if "planogram" not in body:
                raise BadRequest("missing field 'planogram'")
            try:
                pg = planogram_from_dict(body["planogram"])
            except InvariantError as exc:
                return _json({"error": str(exc), "violations": list(exc.violations)}, 422)
            except (DomainError, TypeError, ValueError, KeyError) as exc:
                raise BadRequest(f"bad planogram: {exc}") from exc
        except BadRequest as exc:
            return _json({"error": str(exc)}, 400)
        try:
            report = validate(pg, constraints, state.catalog)
        except InvariantError as exc:
            return _json({"error": str(exc), "violations": list(exc.violations)}, 422)
        except UnknownSkuError as exc:
            return _json({"error": str(exc), "violations": [str(exc)]}, 422)
        return _json(report.to_dict())

    @app.post("/v1/admin/rollback")
    def rollback():
        try:
            snap = state.rollback()
        except NoPreviousSnapshot as exc:
            return _json({"error": str(exc)}, 409)
        return _json({"active_version": snap.version})

    @app.get("/v1/health")
    def health():
        active, previous = state.active, state.previous
        return _json(
            {
                "status": "ok" if active is not None else "no-model",
                "active_version": active.version if active else None,
                "previous_version": previous.version if previous else None,
            }
        )

    @app.get("/v1/metrics")
    def metrics():
        return PlainTextResponse(state.metrics.render())

    @app.exception_handler(Exception)
    async def _unhandled(request: Request, exc: Exception):  # pragma: no cover - last resort
        log.exception("unhandled error on %s", request.url.path)
        return JSONResponse({"error": f"{type(exc).__name__}: {exc}"}, status_code=500)

    return app
