"""Clean up pull request, issue, and commit text before serialization.

The steps, in order: check well-formedness, keep only informative template
sections, strip markdown noise (checklists, quoted replies, HTML comments,
sign-off trailers), and truncate to a token budget at a whitespace boundary.
Applying the pipeline twice yields the same text as applying it once.
"""

from __future__ import annotations

import re
from dataclasses import dataclass

from .github_fetch import ContextTree

__all__ = [
    "RefineLimits",
    "RefinedArtifact",
    "TRUNCATION_MARKER",
    "estimate_tokens",
    "is_well_formed",
    "strip_noise",
    "extract_template_sections",
    "truncate_text",
    "refine_text",
    "refine_tree",
    "pr_key",
    "issue_key",
    "commit_key",
]

TRUNCATION_MARKER = " [truncated]"

# headings whose sections carry the substance of a PR/issue template
_SECTION_KEYWORDS = (
    "summary",
    "motivation",
    "description",
    "why",
    "what",
    "context",
    "rationale",
)

_HEADING_RE = re.compile(r"^(#{1,6})\s*(.+?)\s*#*\s*$")
_HTML_COMMENT_RE = re.compile(r"<!--.*?-->", re.DOTALL)
_CHECKLIST_RE = re.compile(r"^\s*[-*+]\s*\[[ xX]\]\s.*$", re.MULTILINE)
_QUOTE_RE = re.compile(r"^\s*>.*$", re.MULTILINE)
_TRAILER_RE = re.compile(
    r"^(?:Signed-off-by|Co-authored-by|Reviewed-by|Acked-by):.*$",
    re.MULTILINE | re.IGNORECASE,
)
_BLANK_RUN_RE = re.compile(r"\n{3,}")


def estimate_tokens(text: str) -> int:
    """Cheap token estimate: one token per four characters, rounded up."""
    return (len(text) + 3) // 4


def is_well_formed(text: str, *, min_alnum_ratio: float = 0.25, min_chars: int = 3) -> bool:
    """False for empty, near-empty, or symbol-soup text."""
    stripped = "".join(text.split())
    if len(stripped) < min_chars:
        return False
    alnum = sum(1 for ch in stripped if ch.isalnum())
    return alnum / len(stripped) >= min_alnum_ratio


def strip_noise(text: str) -> str:
    text = _HTML_COMMENT_RE.sub("", text)
    text = _CHECKLIST_RE.sub("", text)
    text = _QUOTE_RE.sub("", text)
    text = _TRAILER_RE.sub("", text)
    text = _BLANK_RUN_RE.sub("\n\n", text)
    return text.strip()


def extract_template_sections(text: str) -> str:
    """Keep only template sections whose headings look informative.

    When no heading matches (or there are no headings) the text passes
    through unchanged. Matching sections keep their heading lines, so the
    operation is stable under repetition.
    """
    lines = text.split("\n")
    headings: list[tuple[int, int, str]] = []  # (line_idx, level, title)
    for idx, line in enumerate(lines):
        m = _HEADING_RE.match(line)
        if m:
            headings.append((idx, len(m.group(1)), m.group(2).lower()))
    if not headings:
        return text

    def matches(title: str) -> bool:
        words = re.findall(r"[a-z]+", title)
        return any(w in _SECTION_KEYWORDS for w in words)

    matched = [h for h in headings if matches(h[2])]
    if not matched:
        return text

    kept: list[str] = []
    covered_until = -1
    for idx, level, _ in matched:
        if idx <= covered_until:
            # a matching subsection inside an already kept section
            continue
        end = len(lines)
        for other_idx, other_level, _ in headings:
            if other_idx > idx and other_level <= level:
                end = other_idx
                break
        covered_until = end - 1
        section = "\n".join(lines[idx:end]).strip()
        if section:
            kept.append(section)
    return "\n\n".join(kept).strip()


def truncate_text(text: str, max_tokens: int, marker: str = TRUNCATION_MARKER) -> str:
    """Cut at a whitespace boundary so the result fits in max_tokens."""
    if estimate_tokens(text) <= max_tokens:
        return text
    budget = max_tokens * 4 - len(marker)
    if budget <= 0:
        return text[: max(0, max_tokens * 4)]
    head = text[:budget]
    cut = max(head.rfind(" "), head.rfind("\n"), head.rfind("\t"))
    if cut > 0:
        head = head[:cut]
    head = head.rstrip()
    # a heading whose body was cut away would dangle (and could shift section
    # boundaries on a later pass), so drop trailing heading lines entirely
    while head:
        last = head.rsplit("\n", 1)[-1]
        if not last.startswith("#"):
            break
        head = head[: len(head) - len(last)].rstrip()
    if not head:
        return marker.lstrip()
    return head + marker


def refine_text(text: str, max_tokens: int) -> str:
    return truncate_text(strip_noise(extract_template_sections(text)), max_tokens)


@dataclass(frozen=True)
class RefineLimits:
    pr_body_tokens: int = 400
    issue_body_tokens: int = 300
    commit_body_tokens: int = 200


@dataclass(frozen=True)
class RefinedArtifact:
    text: str
    dropped: bool = False


def pr_key(number: int) -> str:
    return f"pr:{number}"


def issue_key(number: int) -> str:
    return f"issue:{number}"


def commit_key(sha: str) -> str:
    return f"commit:{sha}"


def refine_tree(tree: ContextTree, limits: RefineLimits | None = None) -> dict[str, RefinedArtifact]:
    """Refined body text for every artifact in the tree, keyed pr:N / issue:N /
    commit:SHA. Issues with no usable title or body are marked dropped."""
    limits = limits or RefineLimits()
    out: dict[str, RefinedArtifact] = {}
    for node in tree.pr_nodes:
        pr = node.pr
        body = refine_text(pr.body, limits.pr_body_tokens) if is_well_formed(pr.body) else ""
        out[pr_key(pr.number)] = RefinedArtifact(text=body)
        for issue in node.issues:
            key = issue_key(issue.number)
            if key in out:
                continue
            title_ok = is_well_formed(issue.title)
            body_ok = is_well_formed(issue.body)
            if not title_ok and not body_ok:
                out[key] = RefinedArtifact(text="", dropped=True)
                continue
            text = refine_text(issue.body, limits.issue_body_tokens) if body_ok else ""
            out[key] = RefinedArtifact(text=text)
        for commit in node.commits:
            body = (
                refine_text(commit.body, limits.commit_body_tokens)
                if is_well_formed(commit.body)
                else ""
            )
            out[commit_key(commit.sha)] = RefinedArtifact(text=body)
    for commit in tree.orphan_commits:
        body = (
            refine_text(commit.body, limits.commit_body_tokens)
            if is_well_formed(commit.body)
            else ""
        )
        out[commit_key(commit.sha)] = RefinedArtifact(text=body)
    return out
