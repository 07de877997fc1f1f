"""HTTP reranking service over the two facet models.

POST /rerank scores a seed against a candidate pool with both models,
min-max normalizes each facet's scores within the pool, fuses them as
alpha * background + (1 - alpha) * method, and returns all three rankings.
GET /health reports model manifests and readiness. The server is stateless:
candidate texts arrive in the request. A bounded scoring semaphore sheds
load with 429 once saturated.
"""

from __future__ import annotations

import json
import logging
import threading
import time
import uuid
from dataclasses import dataclass
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path
from typing import Sequence

from . import BACKGROUND, METHOD
from .corpus import Paper
from .encoder import FacetModel, load_manifest, score_batch
from .metrics import rank_candidates

log = logging.getLogger("facetrank.server")

MAX_BODY_BYTES = 8 << 20


class RequestError(ValueError):
    def __init__(self, status: int, message: str):
        super().__init__(message)
        self.status = status


@dataclass
class RerankRequest:
    seed: Paper
    candidates: list[Paper]
    alpha: float

    @classmethod
    def from_json(cls, obj: dict, pool_cap: int) -> "RerankRequest":
        if not isinstance(obj, dict):
            raise RequestError(400, "body must be a JSON object")
        seed_obj = obj.get("seed")
        if not isinstance(seed_obj, dict) or not seed_obj.get("title") or not seed_obj.get("abstract"):
            raise RequestError(400, "seed must carry non-empty title and abstract")
        cands_obj = obj.get("candidates")
        if not isinstance(cands_obj, list) or not cands_obj:
            raise RequestError(400, "candidates must be a non-empty list")
        if len(cands_obj) > pool_cap:
            raise RequestError(413, f"pool of {len(cands_obj)} exceeds cap {pool_cap}")
        alpha = obj.get("alpha", 0.5)
        if not isinstance(alpha, (int, float)) or isinstance(alpha, bool) or not 0 <= alpha <= 1:
            raise RequestError(400, f"alpha must be a number in [0, 1], got {alpha!r}")
        seen: set[str] = set()
        candidates = []
        for i, c in enumerate(cands_obj):
            if not isinstance(c, dict):
                raise RequestError(400, f"candidate {i} is not an object")
            cid = str(c.get("candidate_id") or "")
            if not cid:
                raise RequestError(400, f"candidate {i} missing candidate_id")
            if cid in seen:
                raise RequestError(400, f"duplicate candidate_id {cid}")
            if not c.get("title") or not c.get("abstract"):
                raise RequestError(400, f"candidate {cid} missing title or abstract")
            seen.add(cid)
            candidates.append(Paper(paper_id=cid, title=str(c["title"]), abstract=str(c["abstract"])))
        return cls(
            seed=Paper(paper_id="__seed__", title=str(seed_obj["title"]), abstract=str(seed_obj["abstract"])),
            candidates=candidates,
            alpha=float(alpha),
        )


def minmax_normalize(scores: Sequence[float]) -> list[float]:
    """Map scores to [0, 1] within the pool; constant pools map to 0.5."""
    lo, hi = min(scores), max(scores)
    if hi == lo:
        return [0.5] * len(scores)
    return [(s - lo) / (hi - lo) for s in scores]


def rerank(
    bg_model: FacetModel, mt_model: FacetModel, request: RerankRequest
) -> dict:
    ids = [c.paper_id for c in request.candidates]
    bg_scores = score_batch(bg_model, [bg_model.encode(request.seed, c) for c in request.candidates])
    mt_scores = score_batch(mt_model, [mt_model.encode(request.seed, c) for c in request.candidates])
    bg_norm = minmax_normalize(bg_scores)
    mt_norm = minmax_normalize(mt_scores)
    alpha = request.alpha
    fused = [alpha * b + (1 - alpha) * m for b, m in zip(bg_norm, mt_norm)]
    per_candidate = [
        {
            "candidate_id": cid,
            "bg_score": bg_scores[i],
            "mt_score": mt_scores[i],
            "bg_norm": bg_norm[i],
            "mt_norm": mt_norm[i],
            "fused": fused[i],
        }
        for i, cid in enumerate(ids)
    ]
    return {
        "alpha": alpha,
        "candidates": per_candidate,
        "rankings": {
            "bg": rank_candidates(list(zip(ids, bg_scores))),
            "mt": rank_candidates(list(zip(ids, mt_scores))),
            "fused": rank_candidates(list(zip(ids, fused))),
        },
    }


class RerankService:
    """Holds the loaded models plus serving policy; wraps request handling."""

    def __init__(
        self,
        bg_model: FacetModel | None,
        mt_model: FacetModel | None,
        pool_cap: int = 100,
        max_concurrent: int = 8,
        manifests: dict | None = None,
        static_dir: str | Path | None = None,
    ):
        self.bg_model = bg_model
        self.mt_model = mt_model
        self.pool_cap = pool_cap
        self.manifests = manifests or {}
        self.static_dir = Path(static_dir) if static_dir else None
        self._gate = threading.BoundedSemaphore(max_concurrent)

    @classmethod
    def from_checkpoints(
        cls,
        bg_dir: str | Path | None,
        mt_dir: str | Path | None,
        pool_cap: int = 100,
        max_concurrent: int = 8,
        static_dir: str | Path | None = None,
    ) -> "RerankService":
        from .encoder import load_checkpoint

        models = {}
        manifests = {}
        for facet, ckpt in ((BACKGROUND, bg_dir), (METHOD, mt_dir)):
            if ckpt and Path(ckpt).exists():
                models[facet] = load_checkpoint(ckpt)
                manifests[facet] = load_manifest(ckpt)
        return cls(
            bg_model=models.get(BACKGROUND),
            mt_model=models.get(METHOD),
            pool_cap=pool_cap,
            max_concurrent=max_concurrent,
            manifests=manifests,
            static_dir=static_dir,
        )

    @property
    def ready(self) -> bool:
        return self.bg_model is not None and self.mt_model is not None

    def health(self) -> dict:
        missing = [f for f, m in ((BACKGROUND, self.bg_model), (METHOD, self.mt_model)) if m is None]
        models = {}
        for facet, model in ((BACKGROUND, self.bg_model), (METHOD, self.mt_model)):
            if model is None:
                continue
            manifest = self.manifests.get(facet, {})
            models[facet] = {
                "backbone_profile": model.backbone_profile,
                "tokenizer_id": model.tokenizer_id,
                "max_tokens": model.max_tokens,
                "checkpoint_validation_metric": manifest.get("validation_metric"),
                "checkpoint_created_at": manifest.get("created_at"),
            }
        return {"ready": not missing, "missing": missing, "models": models, "pool_cap": self.pool_cap}

    def handle_rerank(self, body: dict) -> dict:
        if not self.ready:
            raise RequestError(503, "facet models not loaded")
        request = RerankRequest.from_json(body, self.pool_cap)
        if not self._gate.acquire(blocking=False):
            raise RequestError(429, "scoring queue full, retry later")
        try:
            response = rerank(self.bg_model, self.mt_model, request)
        finally:
            self._gate.release()
        response["models"] = {
            facet: self.manifests.get(facet, {}).get("tokenizer_id", model.tokenizer_id)
            for facet, model in ((BACKGROUND, self.bg_model), (METHOD, self.mt_model))
        }
        return response


class _Handler(BaseHTTPRequestHandler):
    service: RerankService  # set by make_server

    def log_message(self, fmt, *args):  # route through structured logging
        pass

    def _send(self, status: int, payload: dict):
        body = json.dumps(payload).encode("utf-8")
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(body)))
        self.send_header("Access-Control-Allow-Origin", "*")
        self.end_headers()
        self.wfile.write(body)

    def do_GET(self):
        started = time.monotonic()
        req_id = uuid.uuid4().hex[:12]
        if self.path == "/health":
            status, payload = 200, self.service.health()
            self._send(status, payload)
        elif self.service.static_dir and (self.path == "/" or self.path.startswith("/ui")):
            status = self._serve_static()
        else:
            status, payload = 404, {"error": f"no route for GET {self.path}"}
            self._send(status, payload)
        self._log(req_id, "GET", status, started)

    def do_POST(self):
        started = time.monotonic()
        req_id = uuid.uuid4().hex[:12]
        pool_size = 0
        if self.path != "/rerank":
            status, payload = 404, {"error": f"no route for POST {self.path}"}
        else:
            try:
                length = int(self.headers.get("Content-Length", "0"))
                if length > MAX_BODY_BYTES:
                    raise RequestError(413, "request body too large")
                raw = self.rfile.read(length)
                try:
                    body = json.loads(raw.decode("utf-8"))
                except (UnicodeDecodeError, json.JSONDecodeError):
                    raise RequestError(400, "body is not valid JSON") from None
                pool_size = len(body.get("candidates") or []) if isinstance(body, dict) else 0
                status, payload = 200, self.service.handle_rerank(body)
            except RequestError as exc:
                status, payload = exc.status, {"error": str(exc)}
        self._send(status, payload)
        self._log(req_id, "POST", status, started, pool_size=pool_size)

    def _serve_static(self) -> int:
        rel = self.path[len("/ui"):].lstrip("/") if self.path.startswith("/ui") else ""
        rel = rel or "index.html"
        target = (self.service.static_dir / rel).resolve()
        if not str(target).startswith(str(self.service.static_dir.resolve())) or not target.is_file():
            self._send(404, {"error": "not found"})
            return 404
        ctype = {
            ".html": "text/html", ".js": "application/javascript",
            ".css": "text/css", ".map": "application/json",
        }.get(target.suffix, "application/octet-stream")
        data = target.read_bytes()
        self.send_response(200)
        self.send_header("Content-Type", ctype)
        self.send_header("Content-Length", str(len(data)))
        self.end_headers()
        self.wfile.write(data)
        return 200

    def _log(self, req_id: str, method: str, status: int, started: float, pool_size: int = 0):
        log.info(
            json.dumps(
                {
                    "request_id": req_id,
                    "method": method,
                    "path": self.path,
                    "status": status,
                    "pool_size": pool_size,
                    "latency_ms": round(1000 * (time.monotonic() - started), 2),
                }
            )
        )


def make_server(service: RerankService, host: str = "127.0.0.1", port: int = 8321) -> ThreadingHTTPServer:
    handler = type("BoundHandler", (_Handler,), {"service": service})
    return ThreadingHTTPServer((host, port), handler)


def serve_forever(service: RerankService, host: str = "127.0.0.1", port: int = 8321):
    server = make_server(service, host, port)
    log.info(json.dumps({"event": "listening", "host": host, "port": server.server_address[1]}))
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.server_close()
