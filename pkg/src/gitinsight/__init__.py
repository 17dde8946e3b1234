"""Explain code snippets from their repository history.

The package traces the history of a line range with git, enriches the
touching commits with pull request and issue context from the GitHub API,
asks an LLM for an explanation grounded in that context, and validates the
result with an LLM judge before showing it.
"""

__version__ = "0.1.0"
