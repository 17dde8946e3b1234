"""End-to-end orchestration: history, fetch, context, explanation, judge.

The judge always runs when an explanation was generated. The gate decides
what happens with its verdict: gated runs structurally withhold the
explanation on any nonzero score, ungated runs return it alongside the
verdict. A snippet whose entire history is trivial yields a suppressed
result without a single provider call.
"""

from __future__ import annotations

import logging
from contextlib import contextmanager
from dataclasses import dataclass

from ..errors import InsightError, PipelineError, UnparsableJudgeOutput
from ..github_fetch import CommitLinkage, ContextTree, build_context_tree, fetch_linkages
from ..context_serialize import serialize_context
from ..snippet_history import SnippetRef, filter_trivial, trace_history
from ..summarize import Explanation, Provider, generate_explanation, generate_from_context
from ..text_refine import refine_tree
from ..transport import RequestsTransport, Transport
from ..validate import JudgeVerdict, judge_explanation
from .config import AppConfig, make_provider

logger = logging.getLogger(__name__)

__all__ = ["InsightResult", "run_pipeline", "extract_context", "explain_with_context"]


@dataclass(frozen=True)
class InsightResult:
    snippet: SnippetRef
    explanation: str | None  # None when suppressed or never generated
    suppressed: bool
    verdict: JudgeVerdict | None  # None when no explanation was generated
    context_text: str
    commit_count: int  # commits kept after triviality filtering
    artifact_count: int
    output_budget: int
    evicted_blocks: int
    use_case: str

    def as_dict(self) -> dict:
        verdict = None
        if self.verdict is not None:
            verdict = {
                "score": self.verdict.score,
                "judge": self.verdict.judge_name,
                "wellformed": self.verdict.wellformed,
                "ungrounded_claims": self.verdict.ungrounded_count,
                "reason": self.verdict.reason,
                "parse_failed": self.verdict.parse_failed,
            }
        return {
            "file_path": self.snippet.file_path,
            "start_line": self.snippet.start_line,
            "end_line": self.snippet.end_line,
            "use_case": self.use_case,
            "explanation": self.explanation,
            "suppressed": self.suppressed,
            "verdict": verdict,
            "commit_count": self.commit_count,
            "artifact_count": self.artifact_count,
            "output_budget": self.output_budget,
            "evicted_blocks": self.evicted_blocks,
        }


@contextmanager
def _stage(name: str):
    """Re-raise pipeline failures tagged with the stage that caused them."""
    try:
        yield
    except PipelineError:
        raise
    except InsightError as exc:
        raise PipelineError(name, exc) from exc


def _offline_linkages(shas: list[str]) -> dict[str, CommitLinkage]:
    return {sha: CommitLinkage(sha=sha) for sha in shas}


def _collect_tree(
    snippet: SnippetRef,
    cfg: AppConfig,
    *,
    runner=None,
    transport: Transport | None = None,
) -> tuple[ContextTree, dict, int]:
    """Stages 1-3: trace history, drop trivial commits, fetch linkages, build
    the tree. Returns (tree, refined texts, kept commit count)."""
    with _stage("history"):
        commits = trace_history(snippet, max_commits=cfg.max_commits, runner=runner)
        kept = filter_trivial(commits)
    if not kept:
        return ContextTree(pr_nodes=[], orphan_commits=[]), {}, 0
    shas = [c.sha for c in kept]
    with _stage("fetch"):
        if cfg.fetch is not None:
            linkages = fetch_linkages(
                shas, cfg.fetch, transport or RequestsTransport()
            )
        else:
            logger.debug("no github configuration; commits stay unlinked")
            linkages = _offline_linkages(shas)
    with _stage("context"):
        tree = build_context_tree(kept, linkages)
        refined = refine_tree(tree)
    return tree, refined, len(kept)


def extract_context(
    snippet: SnippetRef,
    cfg: AppConfig,
    *,
    runner=None,
    transport: Transport | None = None,
) -> str:
    """Serialized context for a snippet, exactly as the explainer would see it."""
    tree, refined, _ = _collect_tree(snippet, cfg, runner=runner, transport=transport)
    with _stage("context"):
        return serialize_context(tree, refined)


def _judge_and_gate(
    snippet_text: str,
    explanation: Explanation,
    cfg: AppConfig,
    provider: Provider,
    judge_gate: bool | None,
    commit_count: int,
    snippet: SnippetRef,
    use_case: str,
) -> InsightResult:
    with _stage("judge"):
        try:
            verdict = judge_explanation(
                snippet_text,
                explanation.context_text,
                explanation.text,
                provider,
                judge=cfg.judge,
            )
        except UnparsableJudgeOutput as exc:
            # if the judge cannot be understood, the explanation is unvalidated
            verdict = JudgeVerdict(
                score=3, judge_name=cfg.judge, reason=str(exc), parse_failed=True
            )
    gate = cfg.judge_gate if judge_gate is None else judge_gate
    suppressed = bool(gate and verdict.score > 0)
    if suppressed:
        logger.info("explanation withheld (judge score %d)", verdict.score)
    return InsightResult(
        snippet=snippet,
        explanation=None if suppressed else explanation.text,
        suppressed=suppressed,
        verdict=verdict,
        context_text=explanation.context_text,
        commit_count=commit_count,
        artifact_count=explanation.artifact_count,
        output_budget=explanation.output_budget,
        evicted_blocks=explanation.evicted_blocks,
        use_case=use_case,
    )


def run_pipeline(
    snippet: SnippetRef,
    cfg: AppConfig,
    *,
    use_case: str | None = None,
    runner=None,
    transport: Transport | None = None,
    provider: Provider | None = None,
    judge_gate: bool | None = None,
) -> InsightResult:
    """Full run. Injectable seams: `runner` replaces the git subprocess,
    `transport` the GitHub HTTP layer, `provider` the LLM."""
    use_case = use_case or cfg.use_case
    tree, refined, commit_count = _collect_tree(
        snippet, cfg, runner=runner, transport=transport
    )
    if commit_count == 0:
        logger.info("no non-trivial history; nothing to explain")
        return InsightResult(
            snippet=snippet,
            explanation=None,
            suppressed=True,
            verdict=None,
            context_text="",
            commit_count=0,
            artifact_count=0,
            output_budget=0,
            evicted_blocks=0,
            use_case=use_case,
        )
    if provider is None:
        provider = make_provider(cfg)
    with _stage("summarize"):
        explanation = generate_explanation(
            snippet, tree, refined, provider, use_case=use_case, budget=cfg.budget
        )
    return _judge_and_gate(
        snippet.source_text,
        explanation,
        cfg,
        provider,
        judge_gate,
        commit_count,
        snippet,
        use_case,
    )


def explain_with_context(
    snippet: SnippetRef,
    context_text: str,
    cfg: AppConfig,
    *,
    use_case: str | None = None,
    provider: Provider | None = None,
    judge_gate: bool | None = None,
    snippet_text: str | None = None,
) -> InsightResult:
    """Explain against context that was already extracted and serialized."""
    use_case = use_case or cfg.use_case
    if provider is None:
        provider = make_provider(cfg)
    if snippet_text is None:
        snippet_text = snippet.source_text
    with _stage("summarize"):
        explanation = generate_from_context(
            snippet,
            context_text,
            provider,
            use_case=use_case,
            budget=cfg.budget,
            snippet_text=snippet_text,
        )
    return _judge_and_gate(
        snippet_text,
        explanation,
        cfg,
        provider,
        judge_gate,
        0,
        snippet,
        use_case,
    )
