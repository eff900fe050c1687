"""Stand-in external judge for tests.

Run as ``python judge_double.py MODE`` to serve newline-delimited JSON on
stdin/stdout, or use :func:`serve_http` for the HTTP transport.

Modes: zero (score 0), length (score = len(crafted) / 100), mismatch (wrong
id), malformed (not JSON), hang (never answers), nan (non-finite score).
"""
from __future__ import annotations

import json
import sys
import threading
import time
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer


def respond(mode: str, line: str) -> str | None:
    req = json.loads(line)
    if mode == "hang":
        return None
    if mode == "malformed":
        return "this is not json"
    if mode == "mismatch":
        return json.dumps({"id": req["id"] + 1, "score": 0.0})
    if mode == "nan":
        return '{"id": %d, "score": NaN}' % req["id"]
    score = len(req["crafted"]) / 100 if mode == "length" else 0.0
    return json.dumps({"id": req["id"], "score": score})


def main(mode: str) -> None:
    for line in sys.stdin:
        out = respond(mode, line)
        if out is None:
            time.sleep(3600)
            continue
        sys.stdout.write(out + "\n")
        sys.stdout.flush()


def serve_http(mode: str):
    """Start a local server in a daemon thread; returns (server, url)."""

    class Handler(BaseHTTPRequestHandler):
        def do_POST(self):
            body = self.rfile.read(int(self.headers["Content-Length"])).decode()
            out = respond(mode, body)
            if out is None:
                time.sleep(2)
                out = ""
            data = out.encode()
            self.send_response(200)
            self.send_header("Content-Type", "application/json")
            self.send_header("Content-Length", str(len(data)))
            self.end_headers()
            self.wfile.write(data)

        def log_message(self, *args):
            pass

    server = ThreadingHTTPServer(("127.0.0.1", 0), Handler)
    threading.Thread(target=server.serve_forever, daemon=True).start()
    return server, f"http://127.0.0.1:{server.server_address[1]}/score"


if __name__ == "__main__":
    main(sys.argv[1] if len(sys.argv) > 1 else "zero")
