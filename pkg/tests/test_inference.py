import json
import threading
import time
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import pytest

from flowprompt.errors import BudgetExceeded, GrammarViolation, HttpError, Timeout
from flowprompt.flags import FlagSet
from flowprompt.grammar import GBNF_V1
from flowprompt.inference import BackendConfig, MockWeights, classify_batch, classify_flow, mock_probability

F0 = FlagSet(False, False, False, False, False, False)
F3 = FlagSet(True, True, True, False, False, False)
MOCK = BackendConfig()


class Script:
    """Per-path responder state shared with the handler."""

    def __init__(self):
        self.lock = threading.Lock()
        self.requests = []
        self.reply = lambda n, body: (200, {"choices": [{"text": '{"prediction":"attack","p_attack":0.7}'}]})


class Handler(BaseHTTPRequestHandler):
    def do_POST(self):
        script = self.server.script
        body = json.loads(self.rfile.read(int(self.headers["Content-Length"])))
        with script.lock:
            script.requests.append((dict(self.headers), body))
            n = len(script.requests)
        status, doc = script.reply(n, body)
        if status is None:
            time.sleep(doc)
            status, doc = 200, {"choices": [{"text": '{"prediction":"benign","p_attack":0.1}'}]}
        data = json.dumps(doc).encode()
        try:
            self.send_response(status)
            self.send_header("Content-Type", "application/json")
            self.send_header("Content-Length", str(len(data)))
            self.end_headers()
            self.wfile.write(data)
        except (BrokenPipeError, ConnectionResetError):
            pass

    def log_message(self, *args):
        pass


@pytest.fixture
def server():
    httpd = ThreadingHTTPServer(("127.0.0.1", 0), Handler)
    httpd.daemon_threads = True
    httpd.script = Script()
    thread = threading.Thread(target=httpd.serve_forever, daemon=True)
    thread.start()
    yield httpd
    httpd.shutdown()
    httpd.server_close()


def remote(httpd, **kw):
    kw.setdefault("backoff_base", 0.01)
    return BackendConfig(kind="remote", endpoint=f"http://127.0.0.1:{httpd.server_port}/v1/completions", **kw)


def test_mock_examples():
    out0 = classify_flow(MOCK, "prompt", F0)
    out3 = classify_flow(MOCK, "prompt", F3)
    assert out0.verdict.p_attack == 0.0474 and out0.verdict.prediction == "benign"
    assert out3.verdict.p_attack == 0.6457 and out3.verdict.prediction == "attack"
    assert mock_probability(MockWeights(), 0) == pytest.approx(0.0474259, abs=1e-7)


def test_mock_batch_order_and_determinism():
    items = [(i, f"prompt {i}", FlagSet(*[(i >> b) & 1 == 1 for b in range(6)])) for i in range(1000)]
    a = classify_batch(MOCK, items)
    b = classify_batch(BackendConfig(n_batch=3), items)
    assert [o.record_id for o in a] == list(range(1000))
    assert [o.verdict for o in a] == [o.verdict for o in b]
    assert all(o.ok and o.latency_ms == 0.0 for o in a)


def test_budget():
    cfg = BackendConfig(n_ctx=64, max_tokens=32)
    with pytest.raises(BudgetExceeded):
        classify_flow(cfg, "x" * 200, F0)
    out = classify_batch(cfg, [(1, "x" * 200, F0)])[0]
    assert not out.ok and "BudgetExceeded" in out.error


def test_remote_success_and_request_shape(server, monkeypatch):
    monkeypatch.setenv("FLOWPROMPT_ENDPOINT", f"http://127.0.0.1:{server.server_port}/c")
    monkeypatch.setenv("FLOWPROMPT_API_KEY", "sekret")
    cfg = BackendConfig.remote_from_env(model_name="m")
    out = classify_flow(cfg, "hello", F0, record_id=4)
    assert out.verdict.prediction == "attack" and out.verdict.p_attack == 0.7 and out.latency_ms > 0
    headers, body = server.script.requests[0]
    assert body == {"model": "m", "prompt": "hello", "temperature": 0.0, "top_p": 1.0, "max_tokens": 32, "grammar": GBNF_V1}
    assert headers["Authorization"] == "Bearer sekret"
    assert "sekret" not in json.dumps(cfg.describe()) and "sekret" not in repr(cfg)


def test_remote_extra_tokens_is_grammar_violation(server):
    server.script.reply = lambda n, b: (200, {"choices": [{"text": 'OK: {"prediction":"attack","p_attack":0.7}'}]})
    with pytest.raises(GrammarViolation):
        classify_flow(remote(server), "p", F0)
    out = classify_batch(remote(server), [(1, "p", F0)])[0]
    assert not out.ok and out.attempts == 1 and out.error.startswith("GrammarViolation")


def test_retry_after_server_error(server):
    server.script.reply = lambda n, b: (500, {}) if n == 1 else (200, {"choices": [{"text": '{"prediction":"benign","p_attack":0.2}'}]})
    out = classify_batch(remote(server), [(7, "p", F0)])[0]
    assert out.ok and out.attempts == 2 and out.verdict.p_attack == 0.2


def test_client_error_not_retried(server):
    server.script.reply = lambda n, b: (400, {"error": "bad"})
    with pytest.raises(HttpError) as info:
        classify_flow(remote(server), "p", F0)
    assert info.value.status == 400 and not info.value.retryable
    out = classify_batch(remote(server), [(1, "p", F0)])[0]
    assert out.attempts == 1 and not out.ok


def test_retries_exhausted(server):
    server.script.reply = lambda n, b: (503, {})
    out = classify_batch(remote(server, max_retries=2), [(1, "p", F0)])[0]
    assert out.attempts == 3 and out.error.startswith("HttpError")
    assert len(server.script.requests) == 3


def test_all_timeouts_keep_length(server):
    server.script.reply = lambda n, b: (None, 0.6)
    cfg = remote(server, timeout=0.1, max_retries=0, n_batch=4)
    with pytest.raises(Timeout):
        classify_flow(cfg, "p", F0)
    items = [(i, "p", F0) for i in range(6)]
    outs = classify_batch(cfg, items)
    assert [o.record_id for o in outs] == list(range(6))
    assert all(not o.ok and o.error.startswith("Timeout") for o in outs)


def test_concurrency_and_latency_accounting(server):
    server.script.reply = lambda n, b: (None, 0.15)
    cfg = remote(server, n_batch=4)
    items = [(i, f"p{i}", F0) for i in range(8)]
    start = time.perf_counter()
    outs = classify_batch(cfg, items)
    wall_ms = (time.perf_counter() - start) * 1000
    lat = [o.latency_ms for o in outs]
    assert all(o.ok for o in outs)
    assert wall_ms <= sum(lat)
    assert sum(lat) >= max(lat) >= 150
    # 8 requests of 150 ms, 4 in flight: about two rounds
    assert wall_ms < 8 * 150


def test_config_invariants():
    with pytest.raises(ValueError):
        BackendConfig(temperature=0.7)
    with pytest.raises(ValueError):
        BackendConfig(n_batch=0)
    with pytest.raises(ValueError):
        BackendConfig(kind="remote")
    with pytest.raises(ValueError):
        MockWeights(float("nan"), 1.0)
    with pytest.raises(ValueError):
        classify_batch(MOCK, [])


def test_env_fallback_when_endpoint_is_none(monkeypatch):
    monkeypatch.setenv("FLOWPROMPT_ENDPOINT", "http://example.invalid/c")
    assert BackendConfig.remote_from_env(endpoint=None).endpoint == "http://example.invalid/c"
    assert BackendConfig.remote_from_env(endpoint="http://other/c").endpoint == "http://other/c"
