"""User-facing entry points: CLI, MCP server, and the pipeline they share."""

from .config import AppConfig, load_config, make_provider
from .mcp import McpServer, TOOLS
from .pipeline import InsightResult, explain_with_context, extract_context, run_pipeline

__all__ = [
    "AppConfig",
    "load_config",
    "make_provider",
    "McpServer",
    "TOOLS",
    "InsightResult",
    "run_pipeline",
    "extract_context",
    "explain_with_context",
]
