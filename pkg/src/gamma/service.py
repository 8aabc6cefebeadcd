"""Serve a detector over HTTP and query it back as a black box.

Wire protocol: the request body of ``POST /score`` and ``POST /label`` is
the raw executable; every response is a one-key JSON object. ``GET /stats``
reports how many scoring requests were answered, ``GET /info`` (not
metered) the threshold and label mode so a client can configure itself.
"""
from __future__ import annotations

import json
import logging
import math
import threading
import urllib.error
import urllib.request
from http import HTTPStatus
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from typing import Optional, Tuple

from .detector import INFINITE_SCORE, Detector
from .exceptions import BindFailure, CandidateEvaluationFailed, MalformedResponse

logger = logging.getLogger(__name__)

SOFT, HARD = "soft", "hard"
DEFAULT_RETRIES = 2
MAX_BODY = 256 * 1024 * 1024


def _check_mode(mode: str) -> str:
    if mode not in (SOFT, HARD):
        raise ValueError(f"mode must be 'soft' or 'hard', got {mode!r}")
    return mode


def _dumps(obj) -> bytes:
    # json writes floats with repr, i.e. the shortest round-tripping decimal
    return json.dumps(obj).encode() + b"\n"


class ServiceState:
    """Detector, label mode and the query counter shared by all handlers."""

    def __init__(self, detector: Detector, mode: str = SOFT):
        self.detector = detector
        self.mode = _check_mode(mode)
        self._lock = threading.Lock()
        self._queries = 0

    @property
    def queries(self) -> int:
        with self._lock:
            return self._queries

    def _count(self) -> None:
        with self._lock:
            self._queries += 1

    def score(self, data: bytes) -> float:
        self._count()
        return float(self.detector.query(data))

    def label(self, data: bytes) -> int:
        self._count()
        return int(self.detector.query(data) >= self.detector.threshold)


class _Handler(BaseHTTPRequestHandler):
    server_version = "gamma-scoring/1"
    state: ServiceState  # set on the subclass built by ``serve``

    def log_message(self, fmt, *args):
        logger.debug("%s " + fmt, self.address_string(), *args)

    def _reply(self, status, obj):
        body = _dumps(obj)
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)

    def _body(self) -> Optional[bytes]:
        try:
            n = int(self.headers.get("Content-Length", ""))
        except ValueError:
            self._reply(HTTPStatus.LENGTH_REQUIRED, {"error": "length required"})
            return None
        if n <= 0 or n > MAX_BODY:
            self._reply(HTTPStatus.BAD_REQUEST, {"error": "bad body length"})
            return None
        return self.rfile.read(n)

    def do_GET(self):
        if self.path == "/stats":
            self._reply(HTTPStatus.OK, {"queries": self.state.queries})
        elif self.path == "/info":
            theta = self.state.detector.threshold
            self._reply(HTTPStatus.OK, {
                "mode": self.state.mode,
                "threshold": None if math.isinf(theta) else theta})
        else:
            self._reply(HTTPStatus.NOT_FOUND, {"error": "not found"})

    def do_POST(self):
        if self.path not in ("/score", "/label"):
            self._reply(HTTPStatus.NOT_FOUND, {"error": "not found"})
            return
        if self.path == "/score" and self.state.mode == HARD:
            self._reply(HTTPStatus.FORBIDDEN,
                        {"error": "scores are not exposed in hard-label mode"})
            return
        data = self._body()
        if data is None:
            return
        try:
            if self.path == "/score":
                self._reply(HTTPStatus.OK, {"score": self.state.score(data)})
            else:
                self._reply(HTTPStatus.OK, {"label": self.state.label(data)})
        except Exception as exc:  # keep serving; the client sees a 500
            logger.exception("scoring failed")
            self._reply(HTTPStatus.INTERNAL_SERVER_ERROR, {"error": str(exc)})


class ScoringService:
    """A running service; use as a context manager or call :meth:`shutdown`."""

    def __init__(self, state: ServiceState, httpd: ThreadingHTTPServer):
        self.state = state
        self.httpd = httpd
        self._thread: Optional[threading.Thread] = None

    @property
    def address(self) -> Tuple[str, int]:
        host, port = self.httpd.server_address[:2]
        return host, port

    @property
    def url(self) -> str:
        host, port = self.address
        return f"http://{host}:{port}"

    @property
    def queries(self) -> int:
        return self.state.queries

    def start(self) -> "ScoringService":
        self._thread = threading.Thread(target=self.httpd.serve_forever,
                                        daemon=True)
        self._thread.start()
        return self

    def serve_forever(self) -> None:
        self.httpd.serve_forever()

    def shutdown(self) -> None:
        if self._thread is not None:
            self.httpd.shutdown()
            self._thread.join()
            self._thread = None
        self.httpd.server_close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.shutdown()


def parse_bind(bind: str) -> Tuple[str, int]:
    host, _, port = bind.rpartition(":")
    try:
        return host or "127.0.0.1", int(port)
    except ValueError:
        raise BindFailure(f"bind address must be HOST:PORT, got {bind!r}") from None


def serve(detector: Detector, bind_address=("127.0.0.1", 0), mode: str = SOFT,
          start: bool = True) -> ScoringService:
    """Expose ``detector`` over HTTP.

    Port 0 picks a free port; read it back from ``service.address``. With
    ``start=True`` requests are handled on a daemon thread.
    """
    if isinstance(bind_address, str):
        bind_address = parse_bind(bind_address)
    state = ServiceState(detector, mode)
    handler = type("Handler", (_Handler,), {"state": state})
    try:
        httpd = ThreadingHTTPServer(tuple(bind_address), handler)
    except OSError as exc:
        raise BindFailure(f"cannot bind {bind_address}: {exc}") from exc
    httpd.daemon_threads = True
    service = ScoringService(state, httpd)
    return service.start() if start else service


class RemoteDetector:
    """Detector whose every query is one HTTP request to a scoring service.

    Parameters
    ----------
    url : str
        Base URL of the service, e.g. ``http://127.0.0.1:8080``.
    mode : {"soft", "hard"}
        ``soft`` calls ``/score``. ``hard`` calls ``/label`` and maps label
        0 to 0.0 and 1 to inf, with an infinite threshold.
    retries : int
        Extra attempts after a transport error before giving up.
    threshold : float, optional
        Decision threshold in soft mode; fetched from ``/info`` if omitted.
    timeout : float
        Per-request timeout in seconds.
    """

    def __init__(self, url: str, mode: str = SOFT, retries: int = DEFAULT_RETRIES,
                 threshold: Optional[float] = None, timeout: float = 30.0):
        self.url = url.rstrip("/")
        self.mode = _check_mode(mode)
        self.retries = retries
        self.timeout = timeout
        if self.mode == HARD:
            self.threshold = INFINITE_SCORE
        elif threshold is not None:
            self.threshold = float(threshold)
        else:
            info = self._get("/info")
            if info.get("threshold") is None:
                raise MalformedResponse("service did not report a threshold")
            self.threshold = float(info["threshold"])

    def _request(self, path: str, body: Optional[bytes] = None) -> dict:
        req = urllib.request.Request(
            self.url + path, data=body,
            headers={"Content-Type": "application/octet-stream"} if body else {})
        last = None
        for _ in range(self.retries + 1):
            try:
                with urllib.request.urlopen(req, timeout=self.timeout) as resp:
                    raw = resp.read()
                break
            except urllib.error.HTTPError as exc:
                # the service answered; retrying will not change its mind
                raise CandidateEvaluationFailed(
                    f"{path}: HTTP {exc.code}") from exc
            except (urllib.error.URLError, OSError) as exc:
                last = exc
        else:
            raise CandidateEvaluationFailed(
                f"{path}: {self.retries + 1} attempts failed: {last}")
        try:
            doc = json.loads(raw)
        except ValueError as exc:
            raise MalformedResponse(f"{path}: response is not JSON") from exc
        if not isinstance(doc, dict):
            raise MalformedResponse(f"{path}: expected a JSON object")
        return doc

    def _get(self, path: str) -> dict:
        return self._request(path)

    def _field(self, doc: dict, key: str, kinds):
        value = doc.get(key)
        if isinstance(value, bool) or not isinstance(value, kinds):
            raise MalformedResponse(f"missing or invalid {key!r} in {doc!r}")
        return value

    def query(self, data) -> float:
        data = bytes(data)
        if self.mode == SOFT:
            return float(self._field(self._request("/score", data), "score",
                                     (int, float)))
        lab = self._field(self._request("/label", data), "label", int)
        if lab not in (0, 1):
            raise MalformedResponse(f"label must be 0 or 1, got {lab}")
        return 0.0 if lab == 0 else INFINITE_SCORE

    def stats(self) -> int:
        return int(self._field(self._get("/stats"), "queries", int))

    def __repr__(self):
        return f"RemoteDetector({self.url!r}, mode={self.mode!r})"


def remote_detector(url: str, mode: str = SOFT, **kwargs) -> RemoteDetector:
    return RemoteDetector(url, mode, **kwargs)
