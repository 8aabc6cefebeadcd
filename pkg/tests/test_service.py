import json
import math
import threading
import urllib.error
import urllib.request
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import pytest

from gamma.detector import FunctionDetector
from gamma.exceptions import BindFailure, CandidateEvaluationFailed, MalformedResponse
from gamma.service import RemoteDetector, serve


@pytest.fixture
def toy():
    # score is the first byte scaled to [0, 1)
    return FunctionDetector(lambda d: d[0] / 256, threshold=0.5)


def _post(url, body):
    req = urllib.request.Request(url, data=body, method="POST")
    with urllib.request.urlopen(req) as resp:
        return json.loads(resp.read())


def test_endpoints(toy):
    with serve(toy) as svc:
        assert _post(svc.url + "/score", b"\x40rest") == {"score": 0.25}
        assert _post(svc.url + "/label", b"\x40") == {"label": 0}
        assert _post(svc.url + "/label", b"\x80") == {"label": 1}
        with urllib.request.urlopen(svc.url + "/stats") as resp:
            assert json.loads(resp.read()) == {"queries": 3}
        with urllib.request.urlopen(svc.url + "/info") as resp:
            assert json.loads(resp.read()) == {"mode": "soft", "threshold": 0.5}
        assert svc.queries == 3  # /info and /stats are not metered


def test_remote_equals_local(surrogate, benign_bytes, malware_bytes):
    with serve(surrogate) as svc:
        remote = RemoteDetector(svc.url)
        assert remote.threshold == surrogate.threshold
        for x in benign_bytes[:5] + malware_bytes[:5]:
            assert remote.query(x) == surrogate.query(x)  # bit-exact
        assert remote.stats() == 10


def test_hard_mode(surrogate, benign_bytes, malware_bytes):
    benign = next(x for x in benign_bytes if surrogate.query(x) < surrogate.threshold)
    with serve(surrogate, mode="hard") as svc:
        remote = RemoteDetector(svc.url, mode="hard")
        assert math.isinf(remote.threshold)
        assert remote.query(benign) == 0.0
        assert remote.query(malware_bytes[0]) == math.inf
        with pytest.raises(urllib.error.HTTPError) as info:
            _post(svc.url + "/score", benign)
        assert info.value.code == 403
        assert svc.queries == 2


def test_concurrent_counting(toy):
    with serve(toy) as svc:
        remote = RemoteDetector(svc.url)
        threads = [threading.Thread(target=lambda: [remote.query(b"\1") for _ in range(10)])
                   for _ in range(8)]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        assert svc.queries == 80 == remote.stats()


def test_service_down_retries():
    with serve(FunctionDetector(lambda d: 0.1)) as svc:
        url = svc.url
    remote = RemoteDetector(url, threshold=0.5, retries=2, timeout=2)
    with pytest.raises(CandidateEvaluationFailed, match="3 attempts"):
        remote.query(b"MZ")


class _Garbage(BaseHTTPRequestHandler):
    body = b"not json"

    def log_message(self, *args):
        pass

    def do_POST(self):
        self.rfile.read(int(self.headers["Content-Length"]))
        self.send_response(200)
        self.send_header("Content-Length", str(len(self.body)))
        self.end_headers()
        self.wfile.write(self.body)


@pytest.mark.parametrize("body", [b"not json", b"[1, 2]", b'{"score": "high"}',
                                  b'{"label": 7}', b'{"other": 1}'])
def test_malformed_responses(body):
    handler = type("H", (_Garbage,), {"body": body})
    httpd = ThreadingHTTPServer(("127.0.0.1", 0), handler)
    t = threading.Thread(target=httpd.serve_forever, daemon=True)
    t.start()
    try:
        url = "http://127.0.0.1:%d" % httpd.server_address[1]
        mode = "hard" if b"label" in body else "soft"
        with pytest.raises(MalformedResponse):
            RemoteDetector(url, mode=mode, threshold=0.5).query(b"MZ")
    finally:
        httpd.shutdown()
        httpd.server_close()


def test_bind_failure(toy):
    with serve(toy) as svc:
        with pytest.raises(BindFailure):
            serve(toy, svc.address)
    with pytest.raises(BindFailure):
        serve(toy, "localhost:notaport")
    with pytest.raises(ValueError):
        serve(toy, mode="fuzzy")
