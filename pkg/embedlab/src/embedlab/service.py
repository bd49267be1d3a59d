"""Local HTTP service exposing the /embed and /embed_tokens protocols.

Requests arrive on a threaded server, but model inference is serialized
behind one lock, so responses stay deterministic under concurrent clients.
"""

from __future__ import annotations

import json
import threading
from dataclasses import dataclass
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

from .encoder import EncoderError, TransformerEncoder


class _Handler(BaseHTTPRequestHandler):
    def log_message(self, *args):  # requests are high-volume and uninteresting
        pass

    def _send(self, status: int, doc: dict) -> None:
        body = json.dumps(doc).encode("utf-8")
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)

    def _read_doc(self) -> dict:
        length = int(self.headers.get("Content-Length", "0"))
        doc = json.loads(self.rfile.read(length).decode("utf-8"))
        if not isinstance(doc, dict):
            raise ValueError("request body must be a JSON object")
        return doc

    def do_POST(self):
        server: "_Server" = self.server
        try:
            doc = self._read_doc()
        except (ValueError, UnicodeDecodeError) as exc:
            self._send(400, {"error": f"bad request body: {exc}"})
            return
        if self.path not in ("/embed", "/embed_tokens"):
            self._send(404, {"error": f"unknown path {self.path}"})
            return
        try:
            if doc.get("model") != server.model_name:
                raise EncoderError(
                    f"this service hosts {server.model_name!r}, "
                    f"not {doc.get('model')!r}")
            if self.path == "/embed":
                self._send(200, self._embed(server, doc))
            else:
                self._send(200, self._embed_tokens(server, doc))
        except (EncoderError, TypeError, KeyError) as exc:
            self._send(400, {"error": str(exc)})

    @staticmethod
    def _embed(server: "_Server", doc: dict) -> dict:
        texts = doc["texts"]
        if not isinstance(texts, list) or not texts \
                or not all(isinstance(t, str) and t.strip() for t in texts):
            raise EncoderError("texts must be a non-empty list of non-blank strings")
        with server.lock:
            vectors = server.encoder.embed_texts(texts)
        return {"dim": server.encoder.dim, "vectors": vectors}

    @staticmethod
    def _embed_tokens(server: "_Server", doc: dict) -> dict:
        text = doc["text"]
        if not isinstance(text, str):
            raise EncoderError("text must be a string")
        with server.lock:
            payload = server.encoder.embed_tokens(text)
        return {
            "tokens": list(payload.tokens),
            "vectors": payload.vectors.tolist(),
            "summary_vector": payload.summary_vector.tolist(),
            "truncated": payload.truncated,
        }


class _Server(ThreadingHTTPServer):
    daemon_threads = True

    def __init__(self, address, encoder: TransformerEncoder, model_name: str):
        super().__init__(address, _Handler)
        self.encoder = encoder
        self.model_name = model_name
        self.lock = threading.Lock()


@dataclass
class ServiceHandle:
    server: _Server
    thread: threading.Thread

    @property
    def port(self) -> int:
        return self.server.server_address[1]

    @property
    def url(self) -> str:
        return f"http://127.0.0.1:{self.port}"

    def close(self) -> None:
        self.server.shutdown()
        self.thread.join(timeout=10)
        self.server.server_close()


def _build(model_name: str, port: int) -> _Server:
    encoder = TransformerEncoder(model_name)
    return _Server(("127.0.0.1", port), encoder, model_name)


def start_service(model_name: str, port: int = 0) -> ServiceHandle:
    """Starts the service on a background thread; port 0 picks a free port."""
    server = _build(model_name, port)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    return ServiceHandle(server=server, thread=thread)


def serve_embeddings(model_name: str, port: int) -> None:
    """Runs the service in the foreground until interrupted. An unresolvable
    model name fails here, before the socket opens."""
    server = _build(model_name, port)
    try:
        server.serve_forever()
    finally:
        server.server_close()
