"""Turn a context tree plus a code snippet into an LLM explanation.

The output token budget starts at a base amount and grows with the square
root of how many context artifacts exceed a pivot count, so richer context
buys a longer answer without letting it balloon linearly. When the rendered
prompt exceeds the input budget, whole context blocks are evicted oldest
first until it fits.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
import re
from dataclasses import dataclass
from importlib import resources
from typing import Protocol

from .context_serialize import count_artifacts, serialize_context
from .errors import (
    EmptyCompletion,
    ProviderRejection,
    ProviderTimeout,
    TransportError,
    UnknownUseCase,
)
from .github_fetch import ContextTree
from .snippet_history import SnippetRef
from .text_refine import RefinedArtifact, estimate_tokens, truncate_text
from .transport import RequestsTransport, Transport

logger = logging.getLogger(__name__)

__all__ = [
    "BudgetConfig",
    "CompletionRequest",
    "CompletionResult",
    "Provider",
    "ProviderConfig",
    "HttpCompletionProvider",
    "DeterministicMockProvider",
    "Explanation",
    "USE_CASES",
    "output_budget",
    "load_instruction",
    "system_prompt",
    "render_user_prompt",
    "generate_explanation",
    "generate_from_context",
]


# --- output budget ---------------------------------------------------------------

@dataclass(frozen=True)
class BudgetConfig:
    base: int = 400
    step: int = 100
    pivot: int = 3
    max_input_tokens: int = 8000


def output_budget(artifact_count: int, cfg: BudgetConfig | None = None) -> int:
    """Token budget for the answer: base + step * isqrt(count beyond pivot)."""
    cfg = cfg or BudgetConfig()
    return cfg.base + cfg.step * math.isqrt(max(0, artifact_count - cfg.pivot))


# --- prompt assembly -------------------------------------------------------------

USE_CASES = {
    "explain": "explain.txt",
    "history": "history.txt",
}


def _read_template(name: str) -> str:
    return (resources.files("gitinsight") / "templates" / name).read_text("utf-8").strip()


def load_instruction(use_case: str, snippet: SnippetRef) -> str:
    filename = USE_CASES.get(use_case)
    if filename is None:
        known = ", ".join(sorted(USE_CASES))
        raise UnknownUseCase(f"unknown use case {use_case!r} (known: {known})")
    template = _read_template(filename)
    return template.format(
        file_path=snippet.file_path,
        start_line=snippet.start_line,
        end_line=snippet.end_line,
    )


def system_prompt() -> str:
    return _read_template("system.txt")


def render_user_prompt(instruction: str, snippet_text: str, context_text: str) -> str:
    parts = [
        instruction,
        "",
        "[begin context information]",
        "",
        "[begin code snippet]",
        snippet_text,
        "[end code snippet]",
    ]
    if context_text:
        parts += ["", context_text]
    parts += ["", "[end context information]", "", "Answer:"]
    return "\n".join(parts)


# --- providers --------------------------------------------------------------------

@dataclass(frozen=True)
class CompletionRequest:
    system: str
    user: str
    max_output_tokens: int


@dataclass(frozen=True)
class CompletionResult:
    text: str
    model_id: str = ""
    input_tokens: int = 0
    output_tokens: int = 0


class Provider(Protocol):
    def complete(self, request: CompletionRequest) -> CompletionResult: ...


@dataclass(frozen=True)
class ProviderConfig:
    api_url: str = ""
    model: str = ""
    api_key: str = ""
    timeout: float = 120.0
    temperature: float = 0.0


class HttpCompletionProvider:
    """Chat-completions-style JSON over HTTPS."""

    def __init__(self, config: ProviderConfig, transport: Transport | None = None):
        self.config = config
        self._transport = transport or RequestsTransport()

    def complete(self, request: CompletionRequest) -> CompletionResult:
        payload = {
            "model": self.config.model,
            "messages": [
                {"role": "system", "content": request.system},
                {"role": "user", "content": request.user},
            ],
            "max_tokens": request.max_output_tokens,
            "temperature": self.config.temperature,
        }
        body = json.dumps(payload, sort_keys=True, separators=(",", ":")).encode("utf-8")
        headers = {"Content-Type": "application/json"}
        if self.config.api_key:
            headers["Authorization"] = f"Bearer {self.config.api_key}"
        try:
            resp = self._transport.post(self.config.api_url, headers, body, self.config.timeout)
        except TransportError as exc:
            if "timed out" in str(exc).lower() or "timeout" in str(exc).lower():
                raise ProviderTimeout(str(exc)) from exc
            raise
        if resp.status != 200:
            raise ProviderRejection(
                f"provider returned status {resp.status}", status=resp.status
            )
        try:
            data = resp.json()
        except (ValueError, UnicodeDecodeError) as exc:
            raise ProviderRejection(f"provider response is not JSON: {exc}") from exc
        text = _extract_completion_text(data)
        if text is None:
            raise ProviderRejection("provider response has no completion text")
        if not text.strip():
            raise EmptyCompletion("provider returned an empty completion")
        usage = data.get("usage") or {}
        return CompletionResult(
            text=text,
            model_id=str(data.get("model") or self.config.model),
            input_tokens=int(usage.get("prompt_tokens") or 0),
            output_tokens=int(usage.get("completion_tokens") or 0),
        )


def _extract_completion_text(data) -> str | None:
    if not isinstance(data, dict):
        return None
    if isinstance(data.get("text"), str):
        return data["text"]
    choices = data.get("choices")
    if isinstance(choices, list) and choices:
        first = choices[0]
        if isinstance(first, dict):
            message = first.get("message")
            if isinstance(message, dict) and isinstance(message.get("content"), str):
                return message["content"]
            if isinstance(first.get("text"), str):
                return first["text"]
    results = data.get("results")
    if isinstance(results, list) and results:
        first = results[0]
        if isinstance(first, dict) and isinstance(first.get("generated_text"), str):
            return first["generated_text"]
    return None


class DeterministicMockProvider:
    """Offline stand-in for an LLM; same prompt, same answer, every time.

    Free-form prompts get a fixed-template answer derived from a hash of the
    prompt, mentioning the first PR and issue numbers found in the context.
    Prompts that demand constrained marker lines (the judge formats) get a
    compliant all-clear answer, so the offline pipeline runs end to end.
    """

    model_id = "deterministic-mock"

    def __init__(self, salt: str = ""):
        self.salt = salt
        self.calls: list[CompletionRequest] = []

    def complete(self, request: CompletionRequest) -> CompletionResult:
        self.calls.append(request)
        constrained = self._constrained_answer(request.user)
        if constrained is not None:
            text = constrained
        else:
            digest = hashlib.sha256(
                (self.salt + request.system + "\n" + request.user).encode("utf-8")
            ).hexdigest()[:12]
            prs = re.findall(r"Pull Request #(\d+)", request.user)
            issues = re.findall(r"Issue #(\d+)", request.user)
            sentences = [
                "This code serves the purpose recorded in its repository history."
            ]
            if prs:
                sentences.append(f"It was shaped by pull request #{prs[0]}.")
            if issues:
                sentences.append(f"It addresses issue #{issues[0]}.")
            sentences.append(f"[mock {digest}]")
            text = " ".join(sentences)
        return CompletionResult(
            text=text,
            model_id=self.model_id,
            input_tokens=estimate_tokens(request.system + request.user),
            output_tokens=estimate_tokens(text),
        )

    @staticmethod
    def _constrained_answer(user: str) -> str | None:
        needs_wellformed = "WELLFORMED: yes|no" in user
        needs_claims = "CLAIM: <claim>" in user
        needs_score = "SCORE: <0-3>" in user
        needs_reason = "REASON: <" in user
        if not (needs_wellformed or needs_claims or needs_score):
            return None
        lines = []
        if needs_wellformed:
            lines.append("WELLFORMED: yes")
        if needs_claims:
            m = re.search(
                r"\[begin explanation\]\n(.*?)\n\[end explanation\]", user, re.DOTALL
            )
            claim = (m.group(1).split(".")[0].strip() if m else "") or (
                "the explanation describes the code"
            )
            lines.append(f"CLAIM: {claim[:120]}")
            lines.append("GROUNDED: yes")
        if needs_score:
            lines.append("SCORE: 0")
        if needs_reason:
            lines.append("REASON: every claim matches the supplied context")
        return "\n".join(lines)


# --- generation -------------------------------------------------------------------

@dataclass(frozen=True)
class Explanation:
    text: str
    system: str
    prompt: str
    context_text: str  # the serialized context actually sent, after eviction
    artifact_count: int
    output_budget: int
    evicted_blocks: int
    model_id: str = ""


def generate_explanation(
    snippet: SnippetRef,
    tree: ContextTree,
    refined: dict[str, RefinedArtifact],
    provider: Provider,
    *,
    use_case: str = "explain",
    budget: BudgetConfig | None = None,
    snippet_text: str | None = None,
) -> Explanation:
    """Render the prompt, fit it to the input budget, and call the provider.

    `snippet_text` overrides reading the snippet from disk (useful when the
    checkout is not available). Raises EmptyCompletion if the provider
    returns only whitespace.
    """
    budget = budget or BudgetConfig()
    instruction = load_instruction(use_case, snippet)
    system = system_prompt()
    if snippet_text is None:
        snippet_text = snippet.source_text

    nodes = list(tree.pr_nodes)
    orphans = list(tree.orphan_commits)
    evicted = 0
    while True:
        working = ContextTree(nodes, orphans, tree.cross_references)
        context_text = serialize_context(working, refined)
        user = render_user_prompt(instruction, snippet_text, context_text)
        if estimate_tokens(user) <= budget.max_input_tokens:
            break
        if nodes:
            dropped = nodes.pop(0)
            logger.info("evicting pull request #%d to fit input budget", dropped.pr.number)
        elif orphans:
            dropped = orphans.pop(0)
            logger.info("evicting commit %s to fit input budget", dropped.sha)
        else:
            break
        evicted += 1

    return _complete_prompt(provider, system, user, context_text, evicted, budget)


def generate_from_context(
    snippet: SnippetRef,
    context_text: str,
    provider: Provider,
    *,
    use_case: str = "explain",
    budget: BudgetConfig | None = None,
    snippet_text: str | None = None,
) -> Explanation:
    """Like generate_explanation, but for context that is already serialized.

    Whole blocks cannot be evicted from opaque text, so an oversized context
    is truncated instead.
    """
    budget = budget or BudgetConfig()
    instruction = load_instruction(use_case, snippet)
    system = system_prompt()
    if snippet_text is None:
        snippet_text = snippet.source_text
    user = render_user_prompt(instruction, snippet_text, context_text)
    overhead = estimate_tokens(user) - estimate_tokens(context_text)
    if estimate_tokens(user) > budget.max_input_tokens:
        context_text = truncate_text(
            context_text, max(0, budget.max_input_tokens - overhead)
        )
        user = render_user_prompt(instruction, snippet_text, context_text)
    return _complete_prompt(provider, system, user, context_text, 0, budget)


def _complete_prompt(
    provider: Provider,
    system: str,
    user: str,
    context_text: str,
    evicted: int,
    budget: BudgetConfig,
) -> Explanation:
    artifact_count = count_artifacts(context_text)
    max_out = output_budget(artifact_count, budget)
    result = provider.complete(
        CompletionRequest(system=system, user=user, max_output_tokens=max_out)
    )
    if not result.text.strip():
        raise EmptyCompletion("provider returned an empty completion")
    return Explanation(
        text=result.text.strip(),
        system=system,
        prompt=user,
        context_text=context_text,
        artifact_count=artifact_count,
        output_budget=max_out,
        evicted_blocks=evicted,
        model_id=result.model_id,
    )
