import json
import socket
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import pytest

from dbqa.errors import (
    JudgeFormatError,
    ScriptExhaustedError,
    ScriptMismatchError,
    ServiceError,
    TransportError,
)
from dbqa.gateway import (
    BackendConfig,
    ChatMessage,
    CompletionRequest,
    Verdict,
    complete,
    judge_pair,
    judge_tool_format,
    load_backend_config,
    register_script,
    user_request,
)


# ---------------------------------------------------------------------------
# Scripted backends


def test_scripted_returns_the_scripted_response():
    backend = register_script(["A"])
    assert complete(backend, user_request("anything at all")) == "A"


def test_scripted_exhaustion_errors_on_extra_call():
    backend = register_script(["A"])
    complete(backend, user_request("one"))
    with pytest.raises(ScriptExhaustedError):
        complete(backend, user_request("two"))


def test_matcher_satisfied_returns_response():
    backend = register_script([("Knowledge", "uses WAL")])
    assert complete(backend, user_request("Question: x ; Knowledge: docs")) == "uses WAL"


def test_matcher_mismatch_names_expectation_and_prompt():
    backend = register_script([("Knowledge", "uses WAL")])
    with pytest.raises(ScriptMismatchError) as err:
        complete(backend, user_request("no such keyword here"))
    assert "Knowledge" in str(err.value)
    assert "no such keyword here" in str(err.value)


def test_three_entries_come_back_in_order():
    backend = register_script(["one", "two", "three"])
    outputs = [complete(backend, user_request(f"call {i}")) for i in range(3)]
    assert outputs == ["one", "two", "three"]


def test_scripted_backends_are_deterministic():
    def run():
        backend = register_script(["x", "y"])
        return [complete(backend, user_request("p1")), complete(backend, user_request("p2"))]

    assert run() == run()


def test_stop_sequences_truncate_scripted_output():
    backend = register_script(["Action: A\nAction_Input: i\nObservation: fake"])
    out = complete(backend, user_request("p", stop_sequences=("Observation:",)))
    assert "Observation:" not in out
    assert out.endswith("Action_Input: i\n")


# ---------------------------------------------------------------------------
# Request validation


def test_request_needs_messages():
    with pytest.raises(ValueError):
        CompletionRequest(messages=())


def test_user_message_needs_content():
    with pytest.raises(ValueError):
        ChatMessage("user", "")


def test_negative_temperature_rejected():
    with pytest.raises(ValueError):
        user_request("p", temperature=-0.1)


def test_remote_backend_requires_endpoint():
    with pytest.raises(ValueError):
        BackendConfig(kind="remote", model_name="m")


# ---------------------------------------------------------------------------
# Remote transport (local mock server)


class _SequenceHandler(BaseHTTPRequestHandler):
    """Replays a per-server sequence of (status, body) responses."""

    def do_POST(self):
        length = int(self.headers.get("Content-Length", 0))
        self.server.requests.append(json.loads(self.rfile.read(length)))
        status, body = self.server.sequence[min(len(self.server.requests) - 1, len(self.server.sequence) - 1)]
        payload = json.dumps(body).encode("utf-8")
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(payload)))
        self.end_headers()
        self.wfile.write(payload)

    def log_message(self, *args):
        pass


def _chat_body(text):
    return {"choices": [{"message": {"content": text}}]}


@pytest.fixture
def mock_server():
    servers = []

    def start(sequence):
        server = ThreadingHTTPServer(("127.0.0.1", 0), _SequenceHandler)
        server.sequence = sequence
        server.requests = []
        thread = threading.Thread(target=server.serve_forever, daemon=True)
        thread.start()
        servers.append(server)
        return server, f"http://127.0.0.1:{server.server_address[1]}/v1/chat/completions"

    yield start
    for server in servers:
        server.shutdown()
        server.server_close()


def _remote(url, **kwargs):
    defaults = dict(
        kind="remote", model_name="test-model", endpoint_url=url, timeout_s=5.0, retry_backoff_s=0.0
    )
    defaults.update(kwargs)
    return BackendConfig(**defaults)


def test_remote_retries_500s_then_succeeds(mock_server):
    server, url = mock_server([(500, {}), (500, {}), (200, _chat_body("ok"))])
    backend = _remote(url, max_retries=2)
    assert complete(backend, user_request("hello")) == "ok"
    assert len(server.requests) == 3
    assert server.requests[0]["model"] == "test-model"
    assert server.requests[0]["messages"] == [{"role": "user", "content": "hello"}]


def test_remote_gives_up_after_max_retries(mock_server):
    server, url = mock_server([(500, {})])
    backend = _remote(url, max_retries=1)
    with pytest.raises(ServiceError):
        complete(backend, user_request("hello"))
    assert len(server.requests) == 2  # at most max_retries + 1 attempts


def test_remote_does_not_retry_client_errors(mock_server):
    server, url = mock_server([(404, {})])
    backend = _remote(url, max_retries=3)
    with pytest.raises(ServiceError, match="404"):
        complete(backend, user_request("hello"))
    assert len(server.requests) == 1


def test_remote_unusable_body_is_service_error(mock_server):
    server, url = mock_server([(200, {"unexpected": True})])
    with pytest.raises(ServiceError, match="unusable"):
        complete(_remote(url), user_request("hello"))


def test_remote_sends_stop_sequences_and_api_key(mock_server, monkeypatch):
    monkeypatch.setenv("DBQA_API_KEY", "sekrit")
    server, url = mock_server([(200, _chat_body("fine"))])
    complete(_remote(url), user_request("hello", stop_sequences=("Observation:",)))
    assert server.requests[0]["stop"] == ["Observation:"]


class _SlowCountingHandler(BaseHTTPRequestHandler):
    """Tracks how many requests are being served at the same time."""

    def do_POST(self):
        import time as _time

        with self.server.lock:
            self.server.active += 1
            self.server.peak = max(self.server.peak, self.server.active)
        _time.sleep(0.05)
        with self.server.lock:
            self.server.active -= 1
        payload = json.dumps(_chat_body("done")).encode("utf-8")
        self.send_response(200)
        self.send_header("Content-Length", str(len(payload)))
        self.end_headers()
        self.wfile.write(payload)

    def log_message(self, *args):
        pass


def test_in_flight_cap_bounds_concurrent_remote_requests():
    server = ThreadingHTTPServer(("127.0.0.1", 0), _SlowCountingHandler)
    server.lock = threading.Lock()
    server.active = 0
    server.peak = 0
    threading.Thread(target=server.serve_forever, daemon=True).start()
    try:
        url = f"http://127.0.0.1:{server.server_address[1]}/v1/chat/completions"
        backend = _remote(url, max_in_flight=2)
        threads = [
            threading.Thread(target=complete, args=(backend, user_request(f"p{i}")))
            for i in range(6)
        ]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        assert server.peak <= 2
    finally:
        server.shutdown()
        server.server_close()


def test_remote_timeout_is_transport_error():
    # A listening socket that never answers.
    sock = socket.socket()
    sock.bind(("127.0.0.1", 0))
    sock.listen(1)
    port = sock.getsockname()[1]
    try:
        backend = _remote(
            f"http://127.0.0.1:{port}/v1/chat/completions", timeout_s=0.2, max_retries=1
        )
        with pytest.raises(TransportError):
            complete(backend, user_request("hello"))
    finally:
        sock.close()


# ---------------------------------------------------------------------------
# Judges


def test_judge_a_is_win_for_answer_a():
    judge = register_script(["A"])
    assert judge_pair(judge, "q", "gt", "first", "second") == Verdict.WIN


def test_judge_b_is_lose_for_answer_a():
    judge = register_script(["B"])
    assert judge_pair(judge, "q", "gt", "first", "second") == Verdict.LOSE


def test_judge_tie():
    judge = register_script(["TIE"])
    assert judge_pair(judge, "q", "gt", "first", "second") == Verdict.TIE


def test_unparseable_judge_output_is_format_error():
    judge = register_script(["maybe B?"])
    with pytest.raises(JudgeFormatError):
        judge_pair(judge, "q", "gt", "first", "second")


def test_judge_prompt_carries_all_four_texts():
    judge = register_script([("the ground truth answer", "A")])
    judge_pair(judge, "the question", "the ground truth answer", "ans one", "ans two")


def test_judge_empty_input_rejected():
    judge = register_script(["A"])
    with pytest.raises(ValueError):
        judge_pair(judge, "q", "", "a", "b")


def test_swap_mode_agreement_keeps_verdict():
    # Order-insensitive judge: candidate containing "good" wins in both passes.
    judge = register_script([("Candidate A: good", "A"), ("Candidate B: good", "B")])
    assert judge_pair(judge, "q", "gt", "good", "bad", swap_positions=True) == Verdict.WIN


def test_swap_mode_disagreement_is_tie():
    # Position-biased judge: always prefers candidate A.
    judge = register_script(["A", "A"])
    assert judge_pair(judge, "q", "gt", "x", "y", swap_positions=True) == Verdict.TIE


def test_tool_format_judge_yes_no_error(pool):
    tool = pool.get("Selection")
    assert judge_tool_format(register_script(["YES"]), tool, "SELECT 1") is True
    assert judge_tool_format(register_script(["NO"]), tool, "gibberish") is False
    with pytest.raises(JudgeFormatError):
        judge_tool_format(register_script(["dunno"]), tool, "SELECT 1")


def test_tool_format_judge_prompt_includes_declared_format(pool):
    # Fixture authored from the selection tool's contract: one SQL query.
    tool = pool.get("Selection")
    judge = register_script([("a single SQL query", "YES")])
    assert judge_tool_format(judge, tool, "SELECT count(*) FROM orders") is True


# ---------------------------------------------------------------------------
# Config files


def test_load_scripted_backend_config(tmp_path):
    path = tmp_path / "scripted.toml"
    path.write_text(
        'kind = "scripted"\nmodel_name = "fixture"\n\n'
        '[[script]]\nmatch = "Knowledge"\nresponse = "uses WAL"\n\n'
        '[[script]]\nresponse = "B"\n',
        encoding="utf-8",
    )
    backend = load_backend_config(path)
    assert backend.kind == "scripted"
    assert complete(backend, user_request("Knowledge: docs")) == "uses WAL"
    assert complete(backend, user_request("anything")) == "B"


def test_load_remote_backend_config(tmp_path):
    path = tmp_path / "remote.toml"
    path.write_text(
        'kind = "remote"\nmodel_name = "m1"\nendpoint_url = "http://example.invalid/v1/chat"\n'
        "timeout_s = 3.5\nmax_retries = 7\n",
        encoding="utf-8",
    )
    backend = load_backend_config(path)
    assert backend.kind == "remote"
    assert backend.model_name == "m1"
    assert backend.timeout_s == 3.5
    assert backend.max_retries == 7


def test_scripted_config_needs_entries(tmp_path):
    path = tmp_path / "empty.toml"
    path.write_text('kind = "scripted"\n', encoding="utf-8")
    with pytest.raises(ValueError):
        load_backend_config(path)
