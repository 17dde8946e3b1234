"""Render a context tree into the tagged text format given to the LLM.

Each pull request becomes a `[begin Pull Request #N]` block holding its
refined body, an "Issues relevant to this PR:" section, and a "Commits
relevant to this PR:" section with ordinal commit headers. Commits with no
PR become `[begin commit <sha>]` blocks. Indentation is two spaces per
hierarchy level. `scan_serialized` re-parses the tags and verifies balance.
"""

from __future__ import annotations

import re

from .errors import IncompleteRefinement, MalformedLog
from .github_fetch import ContextTree, PrNode
from .snippet_history import CommitRecord
from .text_refine import RefinedArtifact, commit_key, issue_key, pr_key

__all__ = [
    "serialize_context",
    "scan_serialized",
    "count_artifacts",
]

_INDENT = "  "

_TAG_RE = re.compile(r"^\s*\[(begin|end) ([^\]]+)\]\s*$")


def _indent_lines(text: str, level: int) -> list[str]:
    pad = _INDENT * level
    out = []
    for ln in text.split("\n"):
        if _TAG_RE.match(ln):
            # content must never masquerade as a structural tag
            ln = "\\" + ln.lstrip()
        out.append(pad + ln if ln else "")
    return out


def _lookup(refined: dict[str, RefinedArtifact], key: str) -> RefinedArtifact:
    art = refined.get(key)
    if art is None:
        raise IncompleteRefinement(f"no refined text for artifact {key}")
    return art


def _render_pr_node(
    node: PrNode, refined: dict[str, RefinedArtifact], seen_issues: set[int]
) -> str:
    number = node.pr.number
    lines = [f"[begin Pull Request #{number}]"]
    lines += _indent_lines(f"Pull Request #{number}: {node.pr.title}".rstrip(), 1)
    body = _lookup(refined, pr_key(number))
    if body.text:
        lines += _indent_lines(body.text, 1)

    issue_entries: list[list[str]] = []
    for issue in node.issues:
        art = _lookup(refined, issue_key(issue.number))
        if art.dropped:
            continue
        entry = _indent_lines(f"Issue #{issue.number}: {issue.title}".rstrip(), 2)
        if art.text and issue.number not in seen_issues:
            entry += _indent_lines(art.text, 2)
        seen_issues.add(issue.number)
        issue_entries.append(entry)
    if issue_entries:
        lines.append("")
        lines += _indent_lines("Issues relevant to this PR:", 1)
        for k, entry in enumerate(issue_entries):
            if k:
                lines.append("")
            lines += entry

    commit_entries: list[list[str]] = []
    ordinal = 0
    for commit in node.commits:
        art = _lookup(refined, commit_key(commit.sha))
        if art.dropped:
            continue
        ordinal += 1
        entry = _indent_lines(f"commit #{ordinal}: {commit.subject}".rstrip(), 2)
        if art.text:
            entry += _indent_lines(art.text, 2)
        commit_entries.append(entry)
    if commit_entries:
        lines.append("")
        lines += _indent_lines("Commits relevant to this PR:", 1)
        for k, entry in enumerate(commit_entries):
            if k:
                lines.append("")
            lines += entry

    lines.append(f"[end Pull Request #{number}]")
    return "\n".join(lines)


def _render_orphan(commit: CommitRecord, refined: dict[str, RefinedArtifact]) -> str | None:
    art = _lookup(refined, commit_key(commit.sha))
    if art.dropped:
        return None
    lines = [f"[begin commit {commit.sha}]"]
    lines += _indent_lines(f"commit {commit.sha}: {commit.subject}".rstrip(), 1)
    if art.text:
        lines += _indent_lines(art.text, 1)
    lines.append(f"[end commit {commit.sha}]")
    return "\n".join(lines)


def serialize_context(tree: ContextTree, refined: dict[str, RefinedArtifact]) -> str:
    """Serialize the tree using the refined text mapping.

    Raises IncompleteRefinement if any artifact lacks a mapping entry. A
    dropped PR is omitted and its commits render as standalone commit
    blocks; a dropped issue or commit is skipped. An issue referenced by
    several PRs shows its body only the first time.
    """
    blocks: list[str] = []
    extra_orphans: list[CommitRecord] = []
    seen_issues: set[int] = set()
    for node in tree.pr_nodes:
        if _lookup(refined, pr_key(node.pr.number)).dropped:
            extra_orphans.extend(node.commits)
            continue
        blocks.append(_render_pr_node(node, refined, seen_issues))
    for commit in list(tree.orphan_commits) + extra_orphans:
        block = _render_orphan(commit, refined)
        if block is not None:
            blocks.append(block)
    return "\n\n".join(blocks)


def scan_serialized(text: str) -> list[str]:
    """Validate tag balance and return the top-level block labels in order.

    Non-tag lines are content and never affect the result. Raises
    MalformedLog with a byte offset on an unmatched or crossed tag.
    """
    stack: list[tuple[str, int]] = []
    top: list[str] = []
    pos = 0
    for line in text.split("\n"):
        m = _TAG_RE.match(line)
        if m:
            kind, label = m.group(1), m.group(2)
            if kind == "begin":
                if not stack:
                    top.append(label)
                stack.append((label, pos))
            else:
                if not stack:
                    raise MalformedLog(f"end tag without begin: [end {label}]", pos)
                open_label, _ = stack.pop()
                if open_label != label:
                    raise MalformedLog(
                        f"crossed tags: [begin {open_label}] closed by [end {label}]", pos
                    )
        pos += len(line.encode("utf-8")) + 1
    if stack:
        label, at = stack[-1]
        raise MalformedLog(f"unclosed block: [begin {label}]", at)
    return top


_PR_HEADER_RE = re.compile(r"^\s*Pull Request #\d+:")
_ISSUE_HEADER_RE = re.compile(r"^\s*Issue #\d+:")
_COMMIT_HEADER_RE = re.compile(r"^\s*commit (?:#\d+|[0-9a-f]{7,64}):")


def count_artifacts(text: str) -> int:
    """Heuristic count of PR, issue, and commit headers in serialized text."""
    count = 0
    for line in text.split("\n"):
        if (
            _PR_HEADER_RE.match(line)
            or _ISSUE_HEADER_RE.match(line)
            or _COMMIT_HEADER_RE.match(line)
        ):
            count += 1
    return count
