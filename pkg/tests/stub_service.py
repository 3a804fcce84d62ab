"""Scripted in-process stand-in for the paraphrase service.

Implements the wire protocol exactly (POST /paraphrase, GET /healthz,
400/422 error shapes) plus a few magic inputs that trigger misbehaviour so
client robustness can be exercised:

    "__short__"    replies with n-1 variants (protocol violation)
    "__nonjson__"  replies 200 with a non-JSON body
    "__boom__"     replies 500
    n > 50         replies 422 (unsatisfiable budget)
"""

import json
import threading
from contextlib import contextmanager
from http.server import BaseHTTPRequestHandler, HTTPServer

UNSATISFIABLE_N = 50


def stub_variants(text: str, n: int, seed: int) -> list[str]:
    return [f"{text} ~alt{seed}.{i}" for i in range(n)]


class _Handler(BaseHTTPRequestHandler):
    def log_message(self, *args):
        pass

    def _reply(self, status: int, body: bytes, content_type: str = "application/json"):
        self.send_response(status)
        self.send_header("Content-Type", content_type)
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)

    def _reply_json(self, status: int, doc: dict):
        self._reply(status, json.dumps(doc).encode("utf-8"))

    def do_GET(self):
        if self.path == "/healthz":
            self._reply(200, b"ok", "text/plain")
        else:
            self._reply_json(404, {"error": "not found"})

    def do_POST(self):
        if self.path != "/paraphrase":
            self._reply_json(404, {"error": "not found"})
            return
        length = int(self.headers.get("Content-Length", "0"))
        raw = self.rfile.read(length)
        try:
            doc = json.loads(raw)
            text = doc["text"]
            n = doc["n"]
            seed = doc["seed"]
            if not isinstance(text, str) or not isinstance(n, int) or n < 1 or not isinstance(seed, int):
                raise ValueError("bad fields")
        except (ValueError, KeyError, TypeError):
            self._reply_json(400, {"error": "malformed request"})
            return
        if text == "__nonjson__":
            self._reply(200, b"definitely not json")
            return
        if text == "__boom__":
            self._reply_json(500, {"error": "internal failure"})
            return
        if n > UNSATISFIABLE_N:
            self._reply_json(422, {"error": f"cannot satisfy n={n}"})
            return
        if text == "__short__":
            self._reply_json(200, {"variants": stub_variants(text, n - 1, seed)})
            return
        self._reply_json(200, {"variants": stub_variants(text, n, seed)})


@contextmanager
def run_stub():
    server = HTTPServer(("127.0.0.1", 0), _Handler)
    port = server.server_address[1]
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    try:
        yield f"http://127.0.0.1:{port}"
    finally:
        server.shutdown()
        server.server_close()
