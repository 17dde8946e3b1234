import io
import json
import random
import string

import pytest

from conftest import FakeGitHubTransport, GITHUB_URL, ScriptedProvider, repo_shas
from gitinsight.frontend.config import AppConfig
from gitinsight.frontend.mcp import McpServer, PROTOCOL_VERSION, TOOLS
from gitinsight.frontend.pipeline import extract_context
from gitinsight.github_fetch import FetchConfig
from gitinsight.snippet_history import SnippetRef

WELLFORMED_NEEDLE = "Decide whether the explanation below is"
CLAIMS_NEEDLE = "List every factual claim"

V1 = "def f():\n    return calc(1)\n"
V2 = "def f():\n    return calc(2)\n"

PR7 = {
    "number": 7,
    "title": "Introduce calc pipeline",
    "body": "Adds the calc entry point used by f.",
    "merged_at": "2024-01-05T00:00:00Z",
    "closing": [
        {"number": 3, "title": "Need a calc entry point", "body": "Call sites diverge."}
    ],
}


def grounded_provider():
    return ScriptedProvider(
        [
            (CLAIMS_NEEDLE, "CLAIM: shaped by pull request #7\nGROUNDED: yes"),
            (WELLFORMED_NEEDLE, "WELLFORMED: yes\nREASON: coherent"),
            ("Answer:", "The function feeds the calc pipeline from Pull Request #7."),
        ]
    )


def hallucinating_provider():
    return ScriptedProvider(
        [
            (CLAIMS_NEEDLE, "CLAIM: rewritten in rust\nGROUNDED: no"),
            (WELLFORMED_NEEDLE, "WELLFORMED: yes\nREASON: coherent"),
            ("Answer:", "This code was rewritten in rust."),
        ]
    )


@pytest.fixture
def mcp_env(repo_factory):
    root = repo_factory(
        [
            ("Add f()", {"app.py": V1}),
            ("Calc with 2", {"app.py": V2}),
        ]
    )
    newest, oldest = repo_shas(root)
    spec = {oldest: [PR7], newest: []}
    cfg = AppConfig(
        repo_root=root,
        fetch=FetchConfig(repo_owner="acme", repo_name="widget", api_url=GITHUB_URL),
    )
    return cfg, root, spec


def make_server(cfg, spec, provider=None, runner=None, stdin=None, stdout=None):
    return McpServer(
        cfg,
        stdin=stdin,
        stdout=stdout,
        runner=runner,
        transport=FakeGitHubTransport(spec),
        provider=provider,
    )


def call(server, method, params=None, req_id=1):
    frame = {"jsonrpc": "2.0", "id": req_id, "method": method}
    if params is not None:
        frame["params"] = params
    response = server.handle_frame(json.dumps(frame))
    assert response is not None
    return json.loads(response)


def snippet_args(root, **overrides):
    args = {"repo_root": root, "file_path": "app.py", "start_line": 1, "end_line": 2}
    args.update(overrides)
    return args


class TestProtocol:
    def test_initialize(self, mcp_env):
        cfg, _, spec = mcp_env
        reply = call(make_server(cfg, spec), "initialize")
        assert reply["jsonrpc"] == "2.0"
        assert reply["id"] == 1
        result = reply["result"]
        assert result["protocolVersion"] == PROTOCOL_VERSION
        assert result["serverInfo"]["name"] == "gitinsight"
        assert "tools" in result["capabilities"]

    def test_ping(self, mcp_env):
        cfg, _, spec = mcp_env
        assert call(make_server(cfg, spec), "ping")["result"] == {}

    def test_tools_list_has_exactly_two_tools(self, mcp_env):
        cfg, _, spec = mcp_env
        tools = call(make_server(cfg, spec), "tools/list")["result"]["tools"]
        assert [t["name"] for t in tools] == ["extract_context", "explain_code"]
        for tool in tools:
            assert tool["description"]
            schema = tool["inputSchema"]
            assert schema["type"] == "object"
            assert set(schema["required"]) == {
                "repo_root", "file_path", "start_line", "end_line",
            }

    def test_tools_constant_matches_listing(self, mcp_env):
        cfg, _, spec = mcp_env
        assert call(make_server(cfg, spec), "tools/list")["result"]["tools"] == TOOLS

    def test_string_id_round_trips(self, mcp_env):
        cfg, _, spec = mcp_env
        assert call(make_server(cfg, spec), "ping", req_id="req-77")["id"] == "req-77"

    def test_parse_error(self, mcp_env):
        cfg, _, spec = mcp_env
        reply = json.loads(make_server(cfg, spec).handle_frame("{nope"))
        assert reply["error"]["code"] == -32700
        assert reply["id"] is None

    def test_non_object_request(self, mcp_env):
        cfg, _, spec = mcp_env
        reply = json.loads(make_server(cfg, spec).handle_frame("[1, 2]"))
        assert reply["error"]["code"] == -32600

    def test_non_string_method(self, mcp_env):
        cfg, _, spec = mcp_env
        reply = call_raw(make_server(cfg, spec), {"jsonrpc": "2.0", "id": 4, "method": 9})
        assert reply["error"]["code"] == -32600
        assert reply["id"] == 4

    def test_unknown_method(self, mcp_env):
        cfg, _, spec = mcp_env
        reply = call(make_server(cfg, spec), "resources/list")
        assert reply["error"]["code"] == -32601
        assert "resources/list" in reply["error"]["message"]

    @pytest.mark.parametrize(
        "frame",
        [
            {"method": "notifications/initialized"},
            {"method": "notifications/cancelled", "params": {"requestId": 1}},
            {"method": "no/such/method"},
            {"method": "tools/call", "params": {"name": "extract_context"}},
            {"method": 12},
        ],
    )
    def test_notifications_are_silent(self, mcp_env, frame):
        cfg, _, spec = mcp_env
        server = make_server(cfg, spec)
        assert server.handle_frame(json.dumps(frame)) is None


def call_raw(server, frame):
    response = server.handle_frame(json.dumps(frame))
    assert response is not None
    return json.loads(response)


def tool_call(server, name, arguments, req_id=1):
    return call(
        server, "tools/call", {"name": name, "arguments": arguments}, req_id=req_id
    )


class TestExtractContextTool:
    def test_matches_library_output(self, mcp_env):
        cfg, root, spec = mcp_env
        server = make_server(cfg, spec)
        reply = tool_call(server, "extract_context", snippet_args(root))
        result = reply["result"]
        assert result["isError"] is False
        (block,) = result["content"]
        assert block["type"] == "text"
        expected = extract_context(
            SnippetRef(root, "app.py", 1, 2), cfg, transport=FakeGitHubTransport(spec)
        )
        assert block["text"] == expected
        assert "[begin Pull Request #7]" in block["text"]

    def test_failure_is_tool_error_not_rpc_error(self, mcp_env):
        cfg, root, spec = mcp_env
        server = make_server(cfg, spec)
        reply = tool_call(server, "extract_context", snippet_args(root, file_path="ghost.py"))
        result = reply["result"]
        assert result["isError"] is True
        assert "context extraction failed" in result["content"][0]["text"]
        assert "error" not in reply


class TestExplainTool:
    def test_full_pipeline_explanation(self, mcp_env):
        cfg, root, spec = mcp_env
        server = make_server(cfg, spec, provider=grounded_provider())
        reply = tool_call(server, "explain_code", snippet_args(root))
        result = reply["result"]
        assert result["isError"] is False
        assert "calc pipeline" in result["content"][0]["text"]

    def test_suppressed_explanation_is_withheld(self, mcp_env):
        cfg, root, spec = mcp_env
        server = make_server(cfg, spec, provider=hallucinating_provider())
        reply = tool_call(server, "explain_code", snippet_args(root))
        text = reply["result"]["content"][0]["text"]
        assert "Explanation withheld" in text
        assert "rewritten in rust" not in text

    def test_pre_extracted_context_skips_collection(self, mcp_env):
        cfg, root, spec = mcp_env
        provider = grounded_provider()
        server = McpServer(cfg, provider=provider)  # no transport: a fetch would fail
        context = "[begin Pull Request #7]\n  Pull Request #7: t\n[end Pull Request #7]"
        reply = tool_call(
            server, "explain_code", snippet_args(root, context=context)
        )
        assert reply["result"]["isError"] is False
        assert "calc pipeline" in reply["result"]["content"][0]["text"]
        assert any(context in req.user for req in provider.calls)

    def test_trivial_history_reports_nothing_to_explain(self, mcp_env):
        cfg, root, spec = mcp_env
        trivial_log = (
            "commit " + "a" * 40 + "\n"
            "Author: Dev <dev@example.com>\n"
            "Date:   Mon May 1 10:00:00 2023 +0000\n"
            "\n"
            "    Tweak comment\n"
            "\n"
            "diff --git a/app.py b/app.py\n"
            "--- a/app.py\n"
            "+++ b/app.py\n"
            "@@ -1,2 +1,2 @@\n"
            " x = 1\n"
            "-# old note\n"
            "+# new note\n"
        )
        provider = ScriptedProvider()  # any provider call fails the test
        server = make_server(
            cfg, spec, provider=provider, runner=lambda cmd: (0, trivial_log, "")
        )
        reply = tool_call(server, "explain_code", snippet_args(root))
        assert "No explanation was generated" in reply["result"]["content"][0]["text"]
        assert provider.calls == []

    def test_unknown_use_case_rejected(self, mcp_env):
        cfg, root, spec = mcp_env
        server = make_server(cfg, spec, provider=grounded_provider())
        reply = tool_call(server, "explain_code", snippet_args(root, use_case="poetry"))
        assert reply["error"]["code"] == -32602
        assert "poetry" in reply["error"]["message"]

    def test_pipeline_failure_is_tool_error(self, mcp_env):
        cfg, root, spec = mcp_env
        server = make_server(cfg, spec, provider=grounded_provider())
        reply = tool_call(server, "explain_code", snippet_args(root, file_path="ghost.py"))
        result = reply["result"]
        assert result["isError"] is True
        assert "explanation failed" in result["content"][0]["text"]


class TestToolArgValidation:
    def test_unknown_tool(self, mcp_env):
        cfg, root, spec = mcp_env
        reply = tool_call(make_server(cfg, spec), "summon_demon", snippet_args(root))
        assert reply["error"]["code"] == -32602
        assert "summon_demon" in reply["error"]["message"]

    def test_params_must_be_object(self, mcp_env):
        cfg, _, spec = mcp_env
        reply = call(make_server(cfg, spec), "tools/call", params=None)
        assert reply["error"]["code"] == -32602

    def test_missing_arguments_listed(self, mcp_env):
        cfg, _, spec = mcp_env
        reply = tool_call(make_server(cfg, spec), "extract_context", {"file_path": "a"})
        assert reply["error"]["code"] == -32602
        message = reply["error"]["message"]
        assert "repo_root" in message and "start_line" in message

    def test_non_integer_lines(self, mcp_env):
        cfg, root, spec = mcp_env
        reply = tool_call(
            make_server(cfg, spec),
            "extract_context",
            snippet_args(root, start_line="one"),
        )
        assert reply["error"]["code"] == -32602
        assert "integers" in reply["error"]["message"]

    def test_invalid_line_range(self, mcp_env):
        cfg, root, spec = mcp_env
        reply = tool_call(
            make_server(cfg, spec),
            "extract_context",
            snippet_args(root, start_line=5, end_line=2),
        )
        assert reply["error"]["code"] == -32602


class TestRobustness:
    def test_handle_frame_never_raises(self, mcp_env):
        cfg, root, spec = mcp_env
        server = make_server(cfg, spec, provider=ScriptedProvider(default="x"))
        rng = random.Random(20260817)
        frames = [
            "",
            "null",
            "true",
            "42",
            '"just a string"',
            "[]",
            "{}",
            '{"id": 1}',
            '{"method": "tools/call", "id": 1}',
            '{"method": "tools/call", "params": [], "id": 1}',
            '{"method": "tools/call", "params": {"name": null}, "id": 1}',
            json.dumps(
                {
                    "method": "tools/call",
                    "id": 1,
                    "params": {
                        "name": "explain_code",
                        "arguments": {
                            "repo_root": 5,
                            "file_path": [],
                            "start_line": {},
                            "end_line": "x",
                        },
                    },
                }
            ),
        ]
        for _ in range(60):
            frames.append(
                "".join(rng.choice(string.printable) for _ in range(rng.randrange(80)))
            )
        for frame in frames:
            response = server.handle_frame(frame)
            assert response is None or isinstance(response, str)
            if response is not None:
                json.loads(response)  # every response is itself valid JSON

    def test_serve_forever_over_streams(self, mcp_env):
        cfg, root, spec = mcp_env
        frames = [
            json.dumps({"jsonrpc": "2.0", "id": 1, "method": "initialize"}),
            "",
            json.dumps({"method": "notifications/initialized"}),
            json.dumps({"jsonrpc": "2.0", "id": 2, "method": "tools/list"}),
            json.dumps(
                {
                    "jsonrpc": "2.0",
                    "id": 3,
                    "method": "tools/call",
                    "params": {"name": "extract_context", "arguments": snippet_args(root)},
                }
            ),
        ]
        stdin = io.StringIO("\n".join(frames) + "\n")
        stdout = io.StringIO()
        server = make_server(cfg, spec, stdin=stdin, stdout=stdout)
        server.serve_forever()
        lines = [line for line in stdout.getvalue().split("\n") if line]
        assert len(lines) == 3  # blank line and notification answered nothing
        replies = [json.loads(line) for line in lines]
        assert [r["id"] for r in replies] == [1, 2, 3]
        assert "[begin Pull Request #7]" in replies[2]["result"]["content"][0]["text"]
