"""HTTP/JSON front end for a :class:`~catcache.cache.SemanticCache`.

Routes::

    POST /v1/lookup              {category, embedding | text, model_id?}
    POST /v1/insert              {category, embedding | text, request_body, response_body}
    PUT  /v1/categories/{id}     CategoryConfig fields           -> 204 | 422
    PUT  /v1/categories          [CategoryConfig, ...] (reload)  -> 204 | 422
    POST /v1/load-signal         {model_id, latency_p, queue_depth, observed_at?}
    GET  /v1/stats

Binary payloads travel base64-encoded. ``text`` inputs are hashed into a
deterministic pseudo-embedding; it carries no semantics and exists for
curl-level demos. Timestamps come from the wall clock.
"""

from __future__ import annotations

import base64
import binascii
import hashlib
import json
import logging
import re
import time
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from typing import Optional

import numpy as np

from .cache import SemanticCache
from .controller import AdaptiveController, LoadSignal
from .errors import StorageError, UsageError, ValidationError
from .policy import CategoryConfig

logger = logging.getLogger(__name__)

_CATEGORY_PATH = re.compile(r"^/v1/categories/([^/]+)$")


class HTTPError(Exception):
    def __init__(self, status: int, message: str):
        super().__init__(message)
        self.status = status
        self.message = message


def text_embedding(text: str, dimension: int) -> np.ndarray:
    """Deterministic unit vector derived from a hash of ``text``."""
    seed = int.from_bytes(hashlib.sha256(text.encode("utf-8")).digest()[:8], "little")
    v = np.random.default_rng(seed).normal(size=dimension)
    return v / np.linalg.norm(v)


def _b64decode(value, field: str) -> bytes:
    if not isinstance(value, str):
        raise HTTPError(400, f"{field} must be a base64 string")
    try:
        return base64.b64decode(value, validate=True)
    except (binascii.Error, ValueError):
        raise HTTPError(400, f"{field} is not valid base64") from None


class CacheService:
    """Transport-independent request handling (used by the HTTP handler and tests)."""

    def __init__(self, cache: SemanticCache, controller: Optional[AdaptiveController] = None,
                 clock=lambda: int(time.time() * 1000)):
        self.cache = cache
        self.controller = controller or AdaptiveController(registry=cache.registry)
        if self.controller.registry is None:
            self.controller.registry = cache.registry
        self.clock = clock

    # -- helpers ---------------------------------------------------------

    def _embedding(self, body: dict) -> np.ndarray:
        has_emb = body.get("embedding") is not None
        has_text = body.get("text") is not None
        if has_emb == has_text:
            raise HTTPError(400, "exactly one of 'embedding' or 'text' is required")
        if has_text:
            if not isinstance(body["text"], str):
                raise HTTPError(400, "'text' must be a string")
            return text_embedding(body["text"], self.cache.dimension)
        emb = body["embedding"]
        if not isinstance(emb, list) or not all(isinstance(x, (int, float)) and not isinstance(x, bool)
                                                for x in emb):
            raise HTTPError(400, "'embedding' must be an array of numbers")
        if len(emb) != self.cache.dimension:
            raise HTTPError(400, f"dimension mismatch: expected {self.cache.dimension}, got {len(emb)}")
        return np.asarray(emb, dtype=np.float64)

    @staticmethod
    def _category(body: dict) -> str:
        cat = body.get("category")
        if not isinstance(cat, str) or not cat:
            raise HTTPError(400, "'category' must be a non-empty string")
        return cat

    def _model_for(self, category: str, body: dict) -> str:
        mid = body.get("model_id")
        if mid is not None and not isinstance(mid, str):
            raise HTTPError(400, "'model_id' must be a string")
        return mid or self.cache.registry.get_config(category).model

    # -- routes ----------------------------------------------------------

    def lookup(self, body: dict) -> dict:
        cat = self._category(body)
        emb = self._embedding(body)
        lam = self.controller.current_lambda(self._model_for(cat, body))
        try:
            res = self.cache.lookup(emb, cat, self.clock(), lam)
        except UsageError as exc:
            raise HTTPError(400, str(exc)) from None
        policy = res.policy or self.cache.registry.effective_policy(cat, lam)
        out = {"outcome": res.outcome, "effective_threshold": policy.threshold,
               "effective_ttl_seconds": policy.ttl, "lambda": lam}
        if res.hit:
            out["response_body"] = base64.b64encode(res.response_body).decode("ascii")
            out["similarity"] = res.matched_similarity
        else:
            out["miss_reason"] = res.miss_reason
        return out

    def insert(self, body: dict) -> dict:
        cat = self._category(body)
        emb = self._embedding(body)
        req = _b64decode(body.get("request_body", ""), "request_body")
        resp = _b64decode(body.get("response_body"), "response_body")
        try:
            outcome = self.cache.insert(emb, cat, req, resp, self.clock())
        except StorageError as exc:
            raise HTTPError(507, f"document store write failed: {exc}") from None
        except UsageError as exc:
            raise HTTPError(400, str(exc)) from None
        return {"outcome": outcome}

    def put_category(self, category_id: str, body) -> None:
        if not isinstance(body, dict):
            raise HTTPError(400, "category config must be a JSON object")
        body = dict(body)
        if body.setdefault("category_id", category_id) != category_id:
            raise HTTPError(422, "category_id_mismatch")
        try:
            self.cache.register_category(CategoryConfig.from_dict(body))
        except ValidationError as exc:
            raise HTTPError(422, exc.constraint) from None

    def replace_categories(self, body) -> None:
        if not isinstance(body, list):
            raise HTTPError(400, "expected a JSON array of category configs")
        try:
            configs = [CategoryConfig.from_dict(c) for c in body]
            self.cache.registry.replace_all(configs)
        except (ValidationError, TypeError) as exc:
            raise HTTPError(422, getattr(exc, "constraint", str(exc))) from None
        for cfg in configs:
            if not cfg.allow_caching:
                self.cache.purge_category(cfg.category_id)

    def load_signal(self, body: dict) -> dict:
        body = dict(body)
        body.setdefault("observed_at", self.clock())
        if "latency_percentile" in body and "latency_p" not in body:
            body["latency_p"] = body.pop("latency_percentile")
        try:
            sig = LoadSignal.from_dict(body)
        except UsageError as exc:
            raise HTTPError(400, str(exc)) from None
        if sig.latency_p < 0 or sig.queue_depth < 0:
            raise HTTPError(400, "latency_p and queue_depth must be >= 0")
        return {"applied_lambda": self.controller.ingest_signal(sig)}

    def stats(self) -> dict:
        reg = self.cache.registry
        cats = sorted(set(reg.categories()) | set(self.cache.stats()))
        models = sorted(set(self.controller.models()) | {reg.get_config(c).model for c in cats})
        lambdas = {m: self.controller.current_lambda(m) for m in models}
        policies = {}
        for c in cats:
            lam = lambdas[reg.get_config(c).model]
            pol = reg.effective_policy(c, lam)
            policies[c] = {"threshold": pol.threshold, "ttl_seconds": pol.ttl, "lambda": lam,
                           "registered": reg.is_registered(c)}
        return {
            "categories": {c: self.cache.stats(c).to_dict() for c in cats},
            "models": {m: {"lambda": lambdas[m],
                           "raw_lambda": (self.controller.state(m).raw_lambda
                                          if self.controller.state(m) else 0.0)} for m in models},
            "policies": policies,
            "entries": len(self.cache),
            "controller_warnings": self.controller.warnings,
        }

    def handle(self, method: str, path: str, raw_body: bytes):
        """Dispatch one request; returns ``(status, payload_or_None)``."""
        try:
            body = None
            if method in ("POST", "PUT"):
                try:
                    body = json.loads(raw_body or b"null")
                except (json.JSONDecodeError, UnicodeDecodeError) as exc:
                    raise HTTPError(400, f"malformed JSON: {exc}") from None
                if body is None:
                    raise HTTPError(400, "request body required")
            route = (method, path)
            if route == ("POST", "/v1/lookup"):
                return 200, self.lookup(_obj(body))
            if route == ("POST", "/v1/insert"):
                return 200, self.insert(_obj(body))
            if route == ("POST", "/v1/load-signal"):
                return 200, self.load_signal(_obj(body))
            if route == ("GET", "/v1/stats"):
                return 200, self.stats()
            if route == ("PUT", "/v1/categories"):
                self.replace_categories(body)
                return 204, None
            m = _CATEGORY_PATH.match(path)
            if m and method == "PUT":
                self.put_category(m.group(1), body)
                return 204, None
            if path in ("/v1/lookup", "/v1/insert", "/v1/load-signal", "/v1/stats") or m:
                raise HTTPError(405, "method not allowed")
            raise HTTPError(404, "not found")
        except HTTPError as exc:
            return exc.status, {"error": exc.message}
        except Exception:  # keep the server alive; report a 500
            logger.exception("unhandled error for %s %s", method, path)
            return 500, {"error": "internal error"}


def _obj(body) -> dict:
    if not isinstance(body, dict):
        raise HTTPError(400, "expected a JSON object")
    return body


class _Handler(BaseHTTPRequestHandler):
    service: CacheService  # set on the subclass built by make_server
    protocol_version = "HTTP/1.1"

    def _dispatch(self, method: str) -> None:
        length = int(self.headers.get("Content-Length") or 0)
        raw = self.rfile.read(length) if length else b""
        status, payload = self.service.handle(method, self.path.split("?", 1)[0], raw)
        data = b"" if payload is None else json.dumps(payload).encode()
        self.send_response(status)
        if payload is not None:
            self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(data)))
        self.end_headers()
        if data:
            self.wfile.write(data)

    def do_GET(self):
        self._dispatch("GET")

    def do_POST(self):
        self._dispatch("POST")

    def do_PUT(self):
        self._dispatch("PUT")

    def log_message(self, fmt, *args):
        logger.info("%s - %s", self.address_string(), fmt % args)


def parse_listen(addr: str) -> tuple[str, int]:
    """``host:port`` or ``:port`` or ``port``."""
    host, _, port = addr.rpartition(":")
    try:
        return (host or "127.0.0.1"), int(port)
    except ValueError:
        raise UsageError(f"bad listen address {addr!r}") from None


def make_server(service: CacheService, host: str = "127.0.0.1", port: int = 0) -> ThreadingHTTPServer:
    handler = type("CacheHandler", (_Handler,), {"service": service})
    server = ThreadingHTTPServer((host, port), handler)
    server.daemon_threads = True
    return server


__all__ = ["CacheService", "make_server", "parse_listen", "text_embedding"]
