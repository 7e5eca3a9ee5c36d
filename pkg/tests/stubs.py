"""In-process JSON HTTP stub used by the remote scorer and policy tests."""

import json
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer


class JsonStub:
    """Answers every POST from ``responses``, a queue of (status, body) pairs.

    ``handler`` may replace the queue with a function of the request body.
    Requests are recorded in ``requests`` as (path, headers, body).
    """

    def __init__(self, handler=None):
        self.responses = []
        self.requests = []
        self.handler = handler
        self.lock = threading.Lock()
        stub = self

        class Handler(BaseHTTPRequestHandler):
            def do_POST(self):
                n = int(self.headers["Content-Length"])
                body = json.loads(self.rfile.read(n))
                with stub.lock:
                    stub.requests.append((self.path, dict(self.headers), body))
                    if stub.handler is not None:
                        status, reply = stub.handler(body)
                    elif stub.responses:
                        status, reply = stub.responses.pop(0)
                    else:
                        status, reply = 500, {}
                data = json.dumps(reply).encode()
                self.send_response(status)
                self.send_header("Content-Type", "application/json")
                self.send_header("Content-Length", str(len(data)))
                self.end_headers()
                self.wfile.write(data)

            def log_message(self, *args):
                pass

        self.server = ThreadingHTTPServer(("127.0.0.1", 0), Handler)
        self.url = f"http://127.0.0.1:{self.server.server_address[1]}"
        self.thread = threading.Thread(target=self.server.serve_forever, daemon=True)
        self.thread.start()

    @property
    def bodies(self):
        return [(path, body) for path, _, body in self.requests]

    def close(self):
        self.server.shutdown()
        self.server.server_close()
