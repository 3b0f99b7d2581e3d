from __future__ import annotations

import json

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tsdebate.gateway import (
    EXHAUSTION_MESSAGE,
    REPEATED_CALL_NOTICE,
    BackendReply,
    CaptureRecorder,
    ChatMessage,
    ChatRequest,
    DecodeError,
    Gateway,
    HttpBackend,
    MockBackend,
    ScriptedBackend,
    ScriptExhaustedError,
    ToolIntent,
    parse_text_tool_intents,
)
from tsdebate.series_tools import ToolError, ToolSpec, series_toolkit

from .conftest import make_series


def _tool(name: str = "echo"):
    def handler(args):
        return f"echo: {json.dumps(args, sort_keys=True)}"

    return ToolSpec(name=name, description="echo", parameters={"type": "object"}, handler=handler)


def _request(agent_id: str = "agent", tools=()) -> ChatRequest:
    return ChatRequest(
        model="mock-model",
        messages=(ChatMessage(role="user", text="hello"),),
        tools=tuple(tools),
        agent_id=agent_id,
    )


def _intents(n: int, name: str = "echo") -> tuple[ToolIntent, ...]:
    return tuple(ToolIntent(name=name, arguments={"i": i}, call_id=f"c{i}") for i in range(n))


class TestScriptedBackend:
    def test_pops_replies_in_order(self):
        backend = ScriptedBackend({"a": [BackendReply(text="one"), BackendReply(text="two")]})
        gw = Gateway(backend)
        assert gw.complete(_request("a")).text == "one"
        assert gw.complete(_request("a")).text == "two"

    def test_exhausted_script_raises(self):
        gw = Gateway(ScriptedBackend({"a": []}))
        with pytest.raises(ScriptExhaustedError):
            gw.complete(_request("a"))

    def test_usage_recorded_to_ledger(self):
        backend = ScriptedBackend({"a": [BackendReply(text="hi", input_tokens=100, output_tokens=10)]})
        gw = Gateway(backend)
        gw.complete(_request("a"))
        assert gw.ledger.input_tokens == 100
        assert gw.ledger.output_tokens == 10

    def test_deterministic_backend_records_zero_wall_time(self):
        backend = ScriptedBackend(
            {"a": [BackendReply(text="hi", input_tokens=1, output_tokens=1, duration=9.9)]}
        )
        gw = Gateway(backend)
        gw.complete(_request("a"))
        assert gw.ledger.wall_time == 0.0


class TestToolLoop:
    def test_two_calls_then_answer(self):
        tool = _tool()
        backend = ScriptedBackend(
            {
                "a": [
                    BackendReply(tool_intents=_intents(1)),
                    BackendReply(tool_intents=_intents(1, name="echo")[:1]),
                    BackendReply(text="done"),
                ]
            }
        )
        gw = Gateway(backend)
        result = gw.run_tool_loop(_request("a", [tool]), [tool], budget_limit=5)
        assert result.text == "done"
        assert len(result.tool_log) == 2
        assert [c.seq for c in result.tool_log] == [1, 2]

    def test_six_single_calls_under_limit_five(self):
        tool = _tool()
        turns = [BackendReply(tool_intents=(ToolIntent("echo", {"i": i}, f"c{i}"),)) for i in range(6)]
        turns.append(BackendReply(text="final answer after exhaustion"))
        backend = ScriptedBackend({"a": turns})
        gw = Gateway(backend)
        result = gw.run_tool_loop(_request("a", [tool]), [tool], budget_limit=5)
        assert len(result.tool_log) == 5
        assert result.exhaustion_delivered
        assert result.text == "final answer after exhaustion"

    def test_ten_intents_in_one_reply_executes_exactly_five(self):
        tool = _tool()
        backend = ScriptedBackend(
            {"a": [BackendReply(tool_intents=_intents(10)), BackendReply(text="answer")]}
        )
        gw = Gateway(backend)
        result = gw.run_tool_loop(_request("a", [tool]), [tool], budget_limit=5)
        assert len(result.tool_log) == 5
        assert result.exhaustion_delivered
        assert result.text == "answer"

    def test_exhaustion_message_delivered_into_conversation(self):
        tool = _tool()
        backend = ScriptedBackend(
            {"a": [BackendReply(tool_intents=_intents(7)), BackendReply(text="ok")]}
        )
        gw = Gateway(backend)
        gw.run_tool_loop(_request("a", [tool]), [tool], budget_limit=5)
        final_request = backend.requests[-1]
        tool_texts = [m.text for m in final_request.messages if m.role == "tool"]
        assert EXHAUSTION_MESSAGE in tool_texts

    def test_forced_turn_ends_loop_even_with_more_intents(self):
        tool = _tool()
        backend = ScriptedBackend(
            {
                "a": [
                    BackendReply(tool_intents=_intents(6)),
                    BackendReply(text="", tool_intents=_intents(3)),
                ]
            }
        )
        gw = Gateway(backend)
        result = gw.run_tool_loop(_request("a", [tool]), [tool], budget_limit=5)
        assert len(result.tool_log) == 5
        assert result.text == ""

    def test_unknown_tool_gets_message_and_consumes_budget(self):
        tool = _tool()
        backend = ScriptedBackend(
            {
                "a": [
                    BackendReply(tool_intents=(ToolIntent("bogus", {}, "c0"),)),
                    BackendReply(text="answer"),
                ]
            }
        )
        gw = Gateway(backend)
        result = gw.run_tool_loop(_request("a", [tool]), [tool], budget_limit=5)
        assert len(result.tool_log) == 1
        assert "unknown tool" in result.tool_log[0].result

    def test_tool_error_delivered_as_result_text(self):
        def bad(args):
            raise ToolError("index out of range: valid indices are 0..3")

        tool = ToolSpec("bad", "always fails", {"type": "object"}, bad)
        backend = ScriptedBackend(
            {"a": [BackendReply(tool_intents=(ToolIntent("bad", {}, "c0"),)), BackendReply(text="x")]}
        )
        gw = Gateway(backend)
        result = gw.run_tool_loop(_request("a", [tool]), [tool], budget_limit=3)
        assert "tool error" in result.tool_log[0].result
        assert "0..3" in result.tool_log[0].result

    def test_repeated_identical_call_flagged(self):
        tool = _tool()
        backend = ScriptedBackend(
            {
                "a": [
                    BackendReply(
                        tool_intents=(
                            ToolIntent("echo", {"x": 1}, "c0"),
                            ToolIntent("echo", {"x": 1}, "c1"),
                        )
                    ),
                    BackendReply(text="done"),
                ]
            }
        )
        gw = Gateway(backend)
        result = gw.run_tool_loop(_request("a", [tool]), [tool], budget_limit=5)
        assert REPEATED_CALL_NOTICE not in result.tool_log[0].result
        assert REPEATED_CALL_NOTICE in result.tool_log[1].result

    @settings(max_examples=30, deadline=None)
    @given(
        n_intents=st.integers(min_value=0, max_value=12),
        limit=st.integers(min_value=1, max_value=5),
    )
    def test_budget_never_exceeded(self, n_intents, limit):
        tool = _tool()
        script = [BackendReply(tool_intents=_intents(n_intents)), BackendReply(text="end")]
        if n_intents == 0:
            script = [BackendReply(text="end")]
        gw = Gateway(ScriptedBackend({"a": script}))
        result = gw.run_tool_loop(_request("a", [tool]), [tool], budget_limit=limit)
        assert len(result.tool_log) <= limit
        assert result.text == "end"


class TestTextProtocolFallback:
    def test_parses_tool_lines(self):
        text = "thinking...\nTOOL: get_info {}\nTOOL: get_values {\"start\": 0, \"end\": 3}"
        remaining, intents = parse_text_tool_intents(text)
        assert remaining == "thinking..."
        assert [i.name for i in intents] == ["get_info", "get_values"]
        assert intents[1].arguments == {"start": 0, "end": 3}

    def test_plain_text_untouched(self):
        remaining, intents = parse_text_tool_intents("FINAL ANSWER: stable")
        assert remaining == "FINAL ANSWER: stable"
        assert intents == ()


class TestHttpDecode:
    def test_decodes_text_reply(self):
        raw = json.dumps(
            {
                "choices": [{"message": {"content": "hello"}}],
                "usage": {"prompt_tokens": 11, "completion_tokens": 3},
            }
        )
        reply = HttpBackend._decode(raw, 0.5)
        assert reply.text == "hello"
        assert reply.input_tokens == 11

    def test_decodes_native_tool_calls(self):
        raw = json.dumps(
            {
                "choices": [
                    {
                        "message": {
                            "content": None,
                            "tool_calls": [
                                {
                                    "id": "call-1",
                                    "function": {"name": "get_info", "arguments": "{}"},
                                }
                            ],
                        }
                    }
                ],
                "usage": {},
            }
        )
        reply = HttpBackend._decode(raw, 0.0)
        assert reply.tool_intents[0].name == "get_info"

    def test_malformed_payload_raises_decode_error_with_excerpt(self):
        with pytest.raises(DecodeError, match="payload starts"):
            HttpBackend._decode("<html>not json</html>", 0.0)

    def test_seed_forwarded_in_payload(self):
        backend = HttpBackend("https://example.invalid/v1", api_key="k")
        req = ChatRequest(
            model="m",
            messages=(ChatMessage(role="user", text="q"),),
            seed=2026,
            agent_id="a",
        )
        payload = backend._payload(req)
        assert payload["seed"] == 2026
        assert payload["temperature"] == 0.0

    def test_images_encoded_as_data_urls(self):
        backend = HttpBackend("https://example.invalid/v1", api_key="k")
        req = ChatRequest(
            model="m",
            messages=(ChatMessage(role="user", text="look", images=(b"\x89PNG fake",)),),
            agent_id="a",
        )
        wire = backend._payload(req)["messages"]
        assert wire[0]["content"][1]["image_url"]["url"].startswith("data:image/png;base64,")


class TestHttpTransport:
    def _request(self):
        return ChatRequest(model="m", messages=(ChatMessage(role="user", text="q"),), agent_id="a")

    def _ok_payload(self):
        return json.dumps(
            {
                "choices": [{"message": {"content": "ok"}}],
                "usage": {"prompt_tokens": 5, "completion_tokens": 2},
            }
        ).encode()

    def test_retries_transport_failure_then_succeeds(self, monkeypatch):
        import io
        import urllib.error
        import urllib.request

        waits: list[float] = []
        attempts = {"n": 0}

        def fake_urlopen(req, timeout=None):
            attempts["n"] += 1
            if attempts["n"] < 3:
                raise urllib.error.URLError("connection reset")
            return io.BytesIO(self._ok_payload())

        monkeypatch.setattr(urllib.request, "urlopen", fake_urlopen)
        backend = HttpBackend("https://example.invalid/v1", api_key="k", sleep=waits.append)
        reply = backend.complete(self._request())
        assert reply.text == "ok"
        assert attempts["n"] == 3
        assert waits == [0.5, 1.0]  # exponential backoff

    def test_transport_failure_exhausts_attempts(self, monkeypatch):
        import urllib.error
        import urllib.request
        from tsdebate.gateway import TransportError

        def always_fail(req, timeout=None):
            raise urllib.error.URLError("no route")

        monkeypatch.setattr(urllib.request, "urlopen", always_fail)
        backend = HttpBackend("https://example.invalid/v1", api_key="k", sleep=lambda s: None)
        with pytest.raises(TransportError, match="no route"):
            backend.complete(self._request())

    def test_rate_limit_honors_retry_after(self, monkeypatch):
        import io
        import urllib.error
        import urllib.request
        from email.message import Message

        waits: list[float] = []
        attempts = {"n": 0}

        def fake_urlopen(req, timeout=None):
            attempts["n"] += 1
            if attempts["n"] == 1:
                headers = Message()
                headers["Retry-After"] = "2.5"
                raise urllib.error.HTTPError(req.full_url, 429, "slow down", headers, io.BytesIO(b"{}"))
            return io.BytesIO(self._ok_payload())

        monkeypatch.setattr(urllib.request, "urlopen", fake_urlopen)
        backend = HttpBackend("https://example.invalid/v1", api_key="k", sleep=waits.append)
        reply = backend.complete(self._request())
        assert reply.text == "ok"
        assert waits == [2.5]

    def test_client_error_raises_immediately(self, monkeypatch):
        import io
        import urllib.error
        import urllib.request
        from email.message import Message
        from tsdebate.gateway import TransportError

        def bad_request(req, timeout=None):
            raise urllib.error.HTTPError(
                req.full_url, 400, "bad", Message(), io.BytesIO(b'{"error": "context too long"}')
            )

        monkeypatch.setattr(urllib.request, "urlopen", bad_request)
        backend = HttpBackend("https://example.invalid/v1", api_key="k", sleep=lambda s: None)
        with pytest.raises(TransportError, match="HTTP 400"):
            backend.complete(self._request())


class TestMockBackend:
    def test_numerical_analyst_calls_get_info_then_reports(self):
        series = make_series([1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0])
        tools = series_toolkit(series)
        gw = Gateway(MockBackend())
        request = ChatRequest(
            model="mock",
            messages=(
                ChatMessage(role="system", text="numerical analyst"),
                ChatMessage(role="user", text="Task: describe the series"),
            ),
            tools=tuple(tools),
            agent_id="analyst.NUMERICAL.r1",
        )
        result = gw.run_tool_loop(request, tools, budget_limit=5)
        assert [c.tool for c in result.tool_log] == ["get_info"]
        assert "USEFUL OBSERVATIONS:" in result.text

    def test_reviewer_answer_follows_scaffold(self):
        gw = Gateway(MockBackend())
        request = ChatRequest(
            model="mock",
            messages=(
                ChatMessage(
                    role="user",
                    text=(
                        "Task: pick\nANSWER FORMAT: the final answer must be exactly one of: "
                        "increasing | decreasing | stable"
                    ),
                ),
            ),
            agent_id="reviewer.0",
        )
        reply = gw.complete(request)
        answer_line = [l for l in reply.text.splitlines() if l.startswith("CALIBRATED ANSWER:")][0]
        assert answer_line.split(":", 1)[1].strip() in {"increasing", "decreasing", "stable"}

    def test_mock_is_deterministic(self):
        gw = Gateway(MockBackend())
        request = ChatRequest(
            model="mock",
            messages=(ChatMessage(role="user", text="Task: anything"),),
            agent_id="elicit.0",
        )
        assert gw.complete(request).text == gw.complete(request).text


class TestCapture:
    def test_capture_records_images_and_tools(self, tmp_path):
        recorder = CaptureRecorder(directory=tmp_path)
        backend = ScriptedBackend({"a": [BackendReply(text="hi", input_tokens=1, output_tokens=1)]})
        gw = Gateway(backend, capture=recorder)
        tool = _tool()
        request = ChatRequest(
            model="m",
            messages=(ChatMessage(role="user", text="q", images=(b"png1", b"png2")),),
            tools=(tool,),
            agent_id="a",
        )
        gw.complete(request)
        assert recorder.records[0].image_parts == 2
        assert recorder.records[0].tool_names == ("echo",)
        files = list(tmp_path.glob("*.json"))
        assert len(files) == 1
        data = json.loads(files[0].read_text())
        assert data["agent_id"] == "a"
