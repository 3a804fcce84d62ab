"""The HTTP protocol layer.

POST /paraphrase  {"text": str, "n": int >= 1, "seed": int}
                  -> 200 {"variants": [str; exactly n]}
GET  /healthz     -> 200 once the backend is loaded, 503 before

Errors are non-200 with {"error": str}: 400 for malformed requests, 422
when n paraphrases cannot be produced after filtering, 503 while the model
is not ready.  Degenerate candidates are filtered out: anything shorter
than 10 characters, equal to the input after whitespace normalization, or
duplicating an already accepted variant; generation retries up to 3 times
to refill.
"""

from __future__ import annotations

import threading

from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse

from .backends import BackendError, load_backend, normalize_ws

MIN_VARIANT_CHARS = 10
REGENERATION_ATTEMPTS = 3


def _error(status: int, message: str) -> JSONResponse:
    return JSONResponse(status_code=status, content={"error": message})


def _filtered(candidates, source_norm, accepted):
    for cand in candidates:
        if not isinstance(cand, str):
            continue
        norm = normalize_ws(cand)
        if len(norm) < MIN_VARIANT_CHARS or norm == source_norm or norm in accepted:
            continue
        accepted[norm] = cand
    return accepted


def create_app(model_id: str = "builtin", max_len: int = 64, preload: bool = True) -> FastAPI:
    app = FastAPI(title="paraphrase-service")
    app.state.backend = None
    app.state.model_id = model_id
    app.state.max_len = max_len
    # Inference runs through a single worker lock to bound memory.
    app.state.inference_lock = threading.Lock()

    def load() -> None:
        app.state.backend = load_backend(model_id, max_len)

    app.state.load = load
    if preload:
        load()

    @app.get("/healthz")
    def healthz():
        if app.state.backend is None:
            return _error(503, "model not ready")
        return JSONResponse(status_code=200, content={"status": "ok", "model_id": app.state.model_id})

    @app.post("/paraphrase")
    async def paraphrase(request: Request):
        if app.state.backend is None:
            return _error(503, "model not ready")
        try:
            doc = await request.json()
        except Exception:
            return _error(400, "body is not valid JSON")
        if not isinstance(doc, dict):
            return _error(400, "body must be a JSON object")
        text = doc.get("text")
        n = doc.get("n")
        seed = doc.get("seed")
        if not isinstance(text, str) or not text.strip():
            return _error(400, "text must be a non-empty string")
        if not isinstance(n, int) or isinstance(n, bool) or n < 1:
            return _error(400, "n must be an integer >= 1")
        if not isinstance(seed, int) or isinstance(seed, bool):
            return _error(400, "seed must be an integer")

        source_norm = normalize_ws(text)
        accepted: dict[str, str] = {}
        with app.state.inference_lock:
            for attempt in range(REGENERATION_ATTEMPTS):
                missing = n - len(accepted)
                if missing <= 0:
                    break
                batch = app.state.backend.generate(text, missing + attempt * n, seed + attempt)
                _filtered(batch, source_norm, accepted)
        if len(accepted) < n:
            return _error(422, f"cannot produce {n} distinct paraphrases (got {len(accepted)})")
        variants = list(accepted.values())[:n]
        return JSONResponse(status_code=200, content={"variants": variants})

    return app


def serve(port: int, model_id: str, max_len: int) -> None:
    import uvicorn

    try:
        app = create_app(model_id=model_id, max_len=max_len, preload=True)
    except (BackendError, OSError) as exc:
        raise SystemExit(f"error: cannot load model {model_id!r}: {exc}")
    uvicorn.run(app, host="0.0.0.0", port=port, log_level="warning")
