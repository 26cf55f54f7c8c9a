import json
import re
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from typing import Optional

from .clock import Clock, SystemClock, parse_utc
from .store import ChainStore
from .timestamp import TimestampAuthority
from ..crypto.lattice_sig import PublicKey

PULSE_ROUTE = re.compile(r"^/beacon/2\.0/chain/(\d+)/pulse/(\d+|last)(/raw)?$")
TIME_ROUTE = re.compile(r"^/beacon/2\.0/pulse/time/([^/]+)$")


class Handler(BaseHTTPRequestHandler):
    """
    Read-only beacon endpoints plus the timestamp endpoint:

        GET  /beacon/2.0/chain/<c>/pulse/<i>       pulse i as JSON
        GET  /beacon/2.0/chain/<c>/pulse/<i>/raw   canonical binary encoding
        GET  /beacon/2.0/chain/<c>/pulse/last      latest released pulse
        GET  /beacon/2.0/pulse/last                latest pulse of the served chain
        GET  /beacon/2.0/pulse/time/<t>            first pulse at or after t (ms or RFC 3339)
        GET  /beacon/2.0/keys                      beacon public keys
        POST /timestamp                            {"digest": hex} -> token
        GET  /timestamp/key                        authority public key
    """

    server: "BeaconServer"

    def log_message(self, format, *args):
        print(f"    HTTP {self.address_string()} {format % args}", flush=True)

    def _send(self, status: int, body: bytes, content_type: str = "application/json"):
        self.send_response(status)
        self.send_header("Content-Type", content_type)
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)

    def _json(self, status: int, obj: dict):
        self._send(status, json.dumps(obj).encode())

    def _error(self, status: int, message: str):
        self._json(status, {"error": message})

    def do_GET(self):
        srv = self.server
        path = self.path.split("?", 1)[0].rstrip("/")
        now = srv.clock.now_ms()
        store = srv.store

        if path == "/timestamp/key":
            if srv.authority is None:
                return self._error(404, "no timestamp authority")
            return self._json(200, {"publicKey": srv.authority.public_key.encode().hex()})
        if store is None:
            return self._error(404, "no beacon chain")
        if path == "/beacon/2.0/keys":
            if not srv.public_keys:
                return self._error(404, "no public keys configured")
            return self._json(200, {k: pk.encode().hex() for k, pk in srv.public_keys.items()})
        if path == "/beacon/2.0/pulse/last":
            pulse = store.latest(now)
            if pulse is None:
                return self._error(404, "no pulse released yet")
            return self._json(200, {"pulse": pulse.to_json()})

        match = TIME_ROUTE.match(path)
        if match:
            value = match.group(1)
            try:
                t_ms = int(value) if value.isdigit() else parse_utc(value)
            except ValueError:
                return self._error(400, f"malformed time {value!r}")
            pulse = store.first_at_or_after(t_ms, now)
            if pulse is None:
                return self._error(404, "no pulse at or after the requested time")
            return self._json(200, {"pulse": pulse.to_json()})

        match = PULSE_ROUTE.match(path)
        if not match:
            return self._error(400, f"malformed request {self.path!r}")
        chain, index, raw = int(match.group(1)), match.group(2), match.group(3)
        if chain != store.chain_index:
            return self._error(404, f"unknown chain {chain}")
        if index == "last":
            pulse = store.latest(now)
            index = pulse.pulse_index if pulse else 0
        index = int(index)
        if raw:
            data = store.get_raw(index, now)
            if data is None:
                return self._error(404, f"unknown pulse {index}")
            return self._send(200, data, "application/octet-stream")
        pulse = store.get(index, now)
        if pulse is None:
            return self._error(404, f"unknown pulse {index}")
        self._json(200, {"pulse": pulse.to_json()})

    def do_POST(self):
        if self.path.rstrip("/") != "/timestamp":
            return self._error(404, f"unknown endpoint {self.path!r}")
        if self.server.authority is None:
            return self._error(404, "no timestamp authority")
        length = int(self.headers.get("content-length", 0))
        try:
            digest = bytes.fromhex(json.loads(self.rfile.read(length))["digest"])
            token = self.server.authority.stamp(digest)
        except (ValueError, KeyError, TypeError) as e:
            return self._error(400, f"bad timestamp request: {e}")
        self._json(200, {"token": token.to_json()})


class BeaconServer(ThreadingHTTPServer):
    """
    HTTP front end of a chain store and/or a timestamp authority. Port 0 binds a free port.
    """

    daemon_threads = True

    def __init__(
        self,
        store: Optional[ChainStore] = None,
        authority: Optional[TimestampAuthority] = None,
        clock: Optional[Clock] = None,
        public_keys: Optional[dict[str, PublicKey]] = None,
        host: str = "localhost",
        port: int = 8080,
    ):
        super().__init__((host, port), Handler)
        self.store = store
        self.authority = authority
        self.clock = clock or SystemClock()
        self.public_keys = public_keys or {}
        self._thread = None

    @property
    def url(self) -> str:
        host, port = self.server_address[:2]
        return f"http://{host}:{port}"

    def start(self) -> "BeaconServer":
        self._thread = threading.Thread(target=self.serve_forever, daemon=True)
        self._thread.start()
        print(f"    Serving on {self.url}", flush=True)
        return self

    def stop(self):
        self.shutdown()
        self.server_close()
        if self._thread is not None:
            self._thread.join(timeout=5)


def serve(store: ChainStore, **kwargs) -> BeaconServer:
    return BeaconServer(store=store, **kwargs).start()
