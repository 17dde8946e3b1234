"""JSON-RPC 2.0 server over newline-delimited stdio frames.

Exposes exactly two tools: extract_context returns the serialized repository
context for a line range, explain_code runs the full pipeline (optionally on
pre-extracted context). Protocol violations get JSON-RPC error responses;
tool and pipeline failures come back as tool results flagged isError. No
incoming frame, however malformed, takes the server down.
"""

from __future__ import annotations

import json
import logging
import sys

from .. import __version__
from ..errors import InsightError
from ..snippet_history import SnippetRef
from ..summarize import USE_CASES, Provider
from ..transport import Transport
from .config import AppConfig
from .pipeline import InsightResult, explain_with_context, extract_context, run_pipeline

logger = logging.getLogger(__name__)

__all__ = ["McpServer", "TOOLS", "PROTOCOL_VERSION"]

PROTOCOL_VERSION = "2024-11-05"

_PARSE_ERROR = -32700
_INVALID_REQUEST = -32600
_METHOD_NOT_FOUND = -32601
_INVALID_PARAMS = -32602

_SNIPPET_PROPS = {
    "repo_root": {
        "type": "string",
        "description": "Path to the local git checkout.",
    },
    "file_path": {
        "type": "string",
        "description": "File path relative to the checkout root.",
    },
    "start_line": {
        "type": "integer",
        "minimum": 1,
        "description": "First line of the snippet (1-based, inclusive).",
    },
    "end_line": {
        "type": "integer",
        "minimum": 1,
        "description": "Last line of the snippet (1-based, inclusive).",
    },
}
_SNIPPET_REQUIRED = ["repo_root", "file_path", "start_line", "end_line"]

TOOLS = [
    {
        "name": "extract_context",
        "description": (
            "Collect the pull requests, issues, and commits that shaped a line "
            "range and return them as tagged context text."
        ),
        "inputSchema": {
            "type": "object",
            "properties": dict(_SNIPPET_PROPS),
            "required": list(_SNIPPET_REQUIRED),
        },
    },
    {
        "name": "explain_code",
        "description": (
            "Explain why a line range exists and what it is for, grounded in "
            "repository history. Pass previously extracted context to skip "
            "collection. The answer is withheld when the validation judge "
            "finds unsupported claims."
        ),
        "inputSchema": {
            "type": "object",
            "properties": {
                **_SNIPPET_PROPS,
                "use_case": {
                    "type": "string",
                    "enum": sorted(USE_CASES),
                    "description": "Kind of answer to produce.",
                },
                "context": {
                    "type": "string",
                    "description": "Pre-extracted context text from extract_context.",
                },
            },
            "required": list(_SNIPPET_REQUIRED),
        },
    },
]


def _tool_text(text: str, is_error: bool = False) -> dict:
    return {"content": [{"type": "text", "text": text}], "isError": is_error}


class McpServer:
    """One server instance per stdio connection. Test seams mirror the
    pipeline's: runner for git, transport for GitHub, provider for the LLM."""

    def __init__(
        self,
        cfg: AppConfig,
        *,
        stdin=None,
        stdout=None,
        runner=None,
        transport: Transport | None = None,
        provider: Provider | None = None,
    ):
        self.cfg = cfg
        self._stdin = stdin if stdin is not None else sys.stdin
        self._stdout = stdout if stdout is not None else sys.stdout
        self._runner = runner
        self._transport = transport
        self._provider = provider

    # -- framing --------------------------------------------------------------

    def serve_forever(self):
        for line in self._stdin:
            line = line.strip()
            if not line:
                continue
            response = self.handle_frame(line)
            if response is not None:
                self._stdout.write(response + "\n")
                self._stdout.flush()

    def handle_frame(self, frame: str) -> str | None:
        """One frame in, at most one response out. Never raises."""
        try:
            message = json.loads(frame)
        except ValueError:
            return self._error(None, _PARSE_ERROR, "parse error: frame is not JSON")
        try:
            return self._dispatch(message)
        except Exception as exc:  # a bug must not kill the connection
            logger.exception("unhandled error while dispatching a frame")
            req_id = message.get("id") if isinstance(message, dict) else None
            return self._error(req_id, -32603, f"internal error: {exc}")

    # -- dispatch --------------------------------------------------------------

    def _dispatch(self, message) -> str | None:
        if not isinstance(message, dict):
            return self._error(None, _INVALID_REQUEST, "request must be an object")
        req_id = message.get("id")
        is_notification = "id" not in message
        method = message.get("method")
        if not isinstance(method, str):
            if is_notification:
                return None
            return self._error(req_id, _INVALID_REQUEST, "method must be a string")

        if method == "initialize":
            result = {
                "protocolVersion": PROTOCOL_VERSION,
                "capabilities": {"tools": {}},
                "serverInfo": {"name": "gitinsight", "version": __version__},
            }
        elif method == "ping":
            result = {}
        elif method == "tools/list":
            result = {"tools": TOOLS}
        elif method == "tools/call":
            result = self._call_tool(message.get("params"))
            if isinstance(result, _RpcError):
                if is_notification:
                    return None
                return self._error(req_id, result.code, result.message)
        elif method.startswith("notifications/"):
            return None
        else:
            if is_notification:
                return None
            return self._error(req_id, _METHOD_NOT_FOUND, f"unknown method {method!r}")

        if is_notification:
            return None
        return json.dumps({"jsonrpc": "2.0", "id": req_id, "result": result})

    def _error(self, req_id, code: int, message: str) -> str:
        return json.dumps(
            {
                "jsonrpc": "2.0",
                "id": req_id,
                "error": {"code": code, "message": message},
            }
        )

    # -- tools -----------------------------------------------------------------

    def _call_tool(self, params):
        if not isinstance(params, dict):
            return _RpcError(_INVALID_PARAMS, "params must be an object")
        name = params.get("name")
        args = params.get("arguments")
        if not isinstance(args, dict):
            args = {}
        if name == "extract_context":
            return self._tool_extract(args)
        if name == "explain_code":
            return self._tool_explain(args)
        return _RpcError(_INVALID_PARAMS, f"unknown tool {name!r}")

    def _snippet_from_args(self, args: dict) -> SnippetRef | _RpcError:
        missing = [k for k in _SNIPPET_REQUIRED if k not in args]
        if missing:
            return _RpcError(
                _INVALID_PARAMS, f"missing arguments: {', '.join(missing)}"
            )
        try:
            start = int(args["start_line"])
            end = int(args["end_line"])
        except (TypeError, ValueError):
            return _RpcError(_INVALID_PARAMS, "line numbers must be integers")
        try:
            return SnippetRef(
                repo_root=str(args["repo_root"]),
                file_path=str(args["file_path"]),
                start_line=start,
                end_line=end,
            )
        except ValueError as exc:
            return _RpcError(_INVALID_PARAMS, str(exc))

    def _tool_extract(self, args: dict):
        snippet = self._snippet_from_args(args)
        if isinstance(snippet, _RpcError):
            return snippet
        try:
            context = extract_context(
                snippet, self.cfg, runner=self._runner, transport=self._transport
            )
        except InsightError as exc:
            return _tool_text(f"context extraction failed: {exc}", is_error=True)
        return _tool_text(context)

    def _tool_explain(self, args: dict):
        snippet = self._snippet_from_args(args)
        if isinstance(snippet, _RpcError):
            return snippet
        use_case = args.get("use_case")
        if use_case is not None and use_case not in USE_CASES:
            return _RpcError(_INVALID_PARAMS, f"unknown use case {use_case!r}")
        pre_context = args.get("context")
        try:
            if isinstance(pre_context, str):
                result = explain_with_context(
                    snippet,
                    pre_context,
                    self.cfg,
                    use_case=use_case,
                    provider=self._provider,
                )
            else:
                result = run_pipeline(
                    snippet,
                    self.cfg,
                    use_case=use_case,
                    runner=self._runner,
                    transport=self._transport,
                    provider=self._provider,
                )
        except InsightError as exc:
            return _tool_text(f"explanation failed: {exc}", is_error=True)
        except OSError as exc:
            return _tool_text(f"cannot read the snippet: {exc}", is_error=True)
        return _tool_text(_render_result(result))


class _RpcError:
    def __init__(self, code: int, message: str):
        self.code = code
        self.message = message


def _render_result(result: InsightResult) -> str:
    if result.verdict is None:
        return (
            "No explanation was generated: the snippet has no non-trivial "
            "history to ground one in."
        )
    if result.suppressed:
        verdict = result.verdict
        detail = verdict.reason or f"{verdict.ungrounded_count} unsupported claim(s)"
        return (
            f"Explanation withheld: the validation judge scored it "
            f"{verdict.score} ({detail})."
        )
    return result.explanation or ""
