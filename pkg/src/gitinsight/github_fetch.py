"""Fetch pull request and issue context for commits from the GitHub GraphQL API.

Commits are looked up in batches (aliased `object(oid:)` fields inside one
query) to keep round trips at ceil(n / commits_per_query) plus any pagination
continuations. `build_context_tree` arranges the results into pull request
nodes that own commits, plus orphan commits with no associated PR.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import re
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

from .errors import (
    AuthFailure,
    EmptyBatch,
    MissingLinkage,
    RateLimited,
    SchemaMismatch,
    TransportError,
)
from .snippet_history import CommitRecord
from .transport import Transport

logger = logging.getLogger(__name__)

__all__ = [
    "FetchConfig",
    "IssueInfo",
    "PullRequestInfo",
    "CommitLinkage",
    "PrNode",
    "ContextTree",
    "build_batched_query",
    "build_continuation_query",
    "fetch_linkages",
    "build_context_tree",
]

_SHA_RE = re.compile(r"[0-9a-f]{7,64}")

# connection sizes used in every query; fixed so request bodies are reproducible
_PRS_PER_COMMIT = 10
_CLOSING_ISSUES = 20
_TIMELINE_PAGE = 50


@dataclass(frozen=True)
class FetchConfig:
    repo_owner: str
    repo_name: str
    token: str = ""
    api_url: str = "https://api.github.com/graphql"
    commits_per_query: int = 20
    max_in_flight: int = 4
    page_cap: int = 3
    timeout: float = 30.0
    max_retries: int = 3
    retry_base_delay: float = 1.0
    cache_dir: str | None = None


@dataclass(frozen=True)
class IssueInfo:
    number: int
    title: str
    body: str


@dataclass(frozen=True)
class PullRequestInfo:
    number: int
    title: str
    body: str
    merged_at: str | None
    issues: tuple[IssueInfo, ...] = ()


@dataclass(frozen=True)
class CommitLinkage:
    sha: str
    prs: tuple[PullRequestInfo, ...] = ()


@dataclass
class PrNode:
    pr: PullRequestInfo
    commits: list[CommitRecord]  # oldest first
    issues: list[IssueInfo]  # deduped by number, discovery order


@dataclass
class ContextTree:
    pr_nodes: list[PrNode]  # chronological by each node's earliest commit
    orphan_commits: list[CommitRecord]  # oldest first
    cross_references: dict[str, tuple[int, ...]] = field(default_factory=dict)

    def all_commit_shas(self) -> list[str]:
        shas = [c.sha for node in self.pr_nodes for c in node.commits]
        shas.extend(c.sha for c in self.orphan_commits)
        return shas


# --- query construction ---------------------------------------------------------

_ISSUE_FIELDS = "number title body"
_TIMELINE_TYPES = "[CROSS_REFERENCED_EVENT, CONNECTED_EVENT]"


def _timeline_fields(after: str | None = None) -> str:
    args = f"first: {_TIMELINE_PAGE}"
    if after is not None:
        args += f", after: {json.dumps(after)}"
    args += f", itemTypes: {_TIMELINE_TYPES}"
    return (
        f"timelineItems({args}) {{ "
        "pageInfo { hasNextPage endCursor } "
        "nodes { "
        f"... on CrossReferencedEvent {{ source {{ ... on Issue {{ {_ISSUE_FIELDS} }} }} }} "
        f"... on ConnectedEvent {{ subject {{ ... on Issue {{ {_ISSUE_FIELDS} }} }} }} "
        "} }"
    )


def build_batched_query(shas: list[str], cfg: FetchConfig) -> str:
    """One GraphQL query resolving every commit in `shas` via aliased lookups."""
    if not shas:
        raise EmptyBatch("cannot build a query for zero commits")
    for sha in shas:
        if not _SHA_RE.fullmatch(sha):
            raise ValueError(f"not a commit sha: {sha!r}")
    pr_fields = (
        "number title body mergedAt "
        f"closingIssuesReferences(first: {_CLOSING_ISSUES}) {{ nodes {{ {_ISSUE_FIELDS} }} }} "
        + _timeline_fields()
    )
    parts = []
    for idx, sha in enumerate(shas):
        parts.append(
            f'c{idx}: object(oid: "{sha}") {{ ... on Commit {{ oid '
            f"associatedPullRequests(first: {_PRS_PER_COMMIT}) {{ nodes {{ {pr_fields} }} }} "
            "} }"
        )
    owner = json.dumps(cfg.repo_owner)
    name = json.dumps(cfg.repo_name)
    return (
        f"query {{ repository(owner: {owner}, name: {name}) {{ "
        + " ".join(parts)
        + " } }"
    )


def build_continuation_query(pr_number: int, cursor: str, cfg: FetchConfig) -> str:
    owner = json.dumps(cfg.repo_owner)
    name = json.dumps(cfg.repo_name)
    return (
        f"query {{ repository(owner: {owner}, name: {name}) {{ "
        f"pullRequest(number: {pr_number}) {{ {_timeline_fields(after=cursor)} }} "
        "} }"
    )


# --- request execution -----------------------------------------------------------

def _headers(cfg: FetchConfig) -> dict[str, str]:
    headers = {"Content-Type": "application/json"}
    if cfg.token:
        headers["Authorization"] = f"bearer {cfg.token}"
    return headers


def _cache_path(cfg: FetchConfig, body: bytes) -> str | None:
    if not cfg.cache_dir:
        return None
    digest = hashlib.sha256(cfg.api_url.encode("utf-8") + body).hexdigest()
    return os.path.join(cfg.cache_dir, f"{digest}.json")


def _execute(query: str, cfg: FetchConfig, transport: Transport, sleep) -> dict:
    """POST one GraphQL query with retries; returns the `data` payload."""
    body = json.dumps({"query": query}, sort_keys=True, separators=(",", ":")).encode("utf-8")
    cache_file = _cache_path(cfg, body)
    if cache_file and os.path.exists(cache_file):
        with open(cache_file, encoding="utf-8") as fh:
            return json.load(fh)

    attempt = 0
    while True:
        retry_reason = None
        try:
            resp = transport.post(cfg.api_url, _headers(cfg), body, cfg.timeout)
        except TransportError as exc:
            retry_reason = exc
            resp = None
        if resp is not None:
            if resp.status == 200:
                try:
                    payload = resp.json()
                except (ValueError, UnicodeDecodeError) as exc:
                    raise SchemaMismatch(f"response is not JSON: {exc}") from exc
                errors = payload.get("errors") or []
                if any(e.get("type") == "RATE_LIMITED" for e in errors):
                    retry_reason = RateLimited("GraphQL rate limit")
                elif errors and not payload.get("data"):
                    messages = "; ".join(str(e.get("message", "")) for e in errors)
                    raise SchemaMismatch(f"GraphQL errors: {messages}")
                else:
                    data = payload.get("data")
                    if not isinstance(data, dict):
                        raise SchemaMismatch("response has no data object")
                    if cache_file:
                        os.makedirs(cfg.cache_dir, exist_ok=True)
                        with open(cache_file, "w", encoding="utf-8") as fh:
                            json.dump(data, fh)
                    return data
            elif resp.status == 401:
                raise AuthFailure("credentials rejected (401)")
            elif resp.status == 403:
                text = resp.body.decode("utf-8", errors="replace").lower()
                if "rate limit" in text or "abuse" in text:
                    retry_reason = RateLimited("rate limited (403)")
                else:
                    raise AuthFailure("access forbidden (403)")
            elif resp.status == 429 or resp.status >= 500:
                retry_reason = (
                    RateLimited("rate limited (429)")
                    if resp.status == 429
                    else TransportError(f"server error ({resp.status})")
                )
            else:
                raise TransportError(f"unexpected status {resp.status}")
        if attempt >= cfg.max_retries:
            raise retry_reason
        delay = cfg.retry_base_delay * (2**attempt)
        logger.debug("retrying in %.1fs after %s", delay, retry_reason)
        sleep(delay)
        attempt += 1


# --- response parsing ------------------------------------------------------------

def _parse_issue(obj) -> IssueInfo | None:
    if not isinstance(obj, dict) or "number" not in obj:
        return None
    return IssueInfo(
        number=int(obj["number"]),
        title=str(obj.get("title") or ""),
        body=str(obj.get("body") or ""),
    )


def _parse_timeline(conn: dict, record: dict):
    """Fold one timelineItems page into a mutable PR record."""
    for item in conn.get("nodes") or []:
        if not isinstance(item, dict):
            continue
        issue = _parse_issue(item.get("source") or item.get("subject"))
        if issue is not None and issue.number not in record["issue_numbers"]:
            record["issue_numbers"].add(issue.number)
            record["issues"].append(issue)
    page = conn.get("pageInfo") or {}
    record["has_next"] = bool(page.get("hasNextPage"))
    record["cursor"] = page.get("endCursor")
    record["pages"] += 1


def _parse_pr(node: dict, pr_records: dict[int, dict]) -> int:
    number = int(node["number"])
    record = pr_records.get(number)
    if record is None:
        record = {
            "number": number,
            "title": str(node.get("title") or ""),
            "body": str(node.get("body") or ""),
            "merged_at": node.get("mergedAt"),
            "issues": [],
            "issue_numbers": set(),
            "has_next": False,
            "cursor": None,
            "pages": 0,
        }
        pr_records[number] = record
        closing = (node.get("closingIssuesReferences") or {}).get("nodes") or []
        for obj in closing:
            issue = _parse_issue(obj)
            if issue is not None and issue.number not in record["issue_numbers"]:
                record["issue_numbers"].add(issue.number)
                record["issues"].append(issue)
        timeline = node.get("timelineItems") or {}
        if timeline:
            _parse_timeline(timeline, record)
    return number


def fetch_linkages(
    shas: list[str], cfg: FetchConfig, transport: Transport, *, sleep=time.sleep
) -> dict[str, CommitLinkage]:
    """Resolve each commit sha to its associated PRs and their issues.

    Returns a linkage for every requested sha; commits unknown upstream get an
    empty one. Batches run concurrently up to cfg.max_in_flight; pagination
    continuations run afterwards, capped at cfg.page_cap pages per timeline.
    """
    if not shas:
        return {}
    batches = [
        shas[i : i + cfg.commits_per_query]
        for i in range(0, len(shas), cfg.commits_per_query)
    ]

    def run_batch(batch: list[str]) -> dict:
        return _execute(build_batched_query(batch, cfg), cfg, transport, sleep)

    if len(batches) == 1:
        payloads = [run_batch(batches[0])]
    else:
        with ThreadPoolExecutor(max_workers=cfg.max_in_flight) as pool:
            payloads = list(pool.map(run_batch, batches))

    pr_records: dict[int, dict] = {}
    commit_prs: dict[str, list[int]] = {}
    for batch, data in zip(batches, payloads):
        repo = data.get("repository")
        if not isinstance(repo, dict):
            raise SchemaMismatch("repository missing from response")
        for idx, sha in enumerate(batch):
            obj = repo.get(f"c{idx}")
            numbers: list[int] = []
            if isinstance(obj, dict) and obj:
                nodes = (obj.get("associatedPullRequests") or {}).get("nodes") or []
                for node in nodes:
                    if isinstance(node, dict) and "number" in node:
                        numbers.append(_parse_pr(node, pr_records))
            commit_prs[sha] = numbers

    for record in pr_records.values():
        while record["has_next"] and record["pages"] < cfg.page_cap and record["cursor"]:
            query = build_continuation_query(record["number"], record["cursor"], cfg)
            data = _execute(query, cfg, transport, sleep)
            conn = ((data.get("repository") or {}).get("pullRequest") or {}).get(
                "timelineItems"
            )
            if not isinstance(conn, dict):
                raise SchemaMismatch("timeline continuation missing from response")
            _parse_timeline(conn, record)

    pr_infos = {
        n: PullRequestInfo(
            number=r["number"],
            title=r["title"],
            body=r["body"],
            merged_at=r["merged_at"],
            issues=tuple(r["issues"]),
        )
        for n, r in pr_records.items()
    }
    return {
        sha: CommitLinkage(sha=sha, prs=tuple(pr_infos[n] for n in numbers))
        for sha, numbers in commit_prs.items()
    }


# --- tree assembly ---------------------------------------------------------------

def _ownership_key(pr: PullRequestInfo):
    # earliest merged PR owns the commit; unmerged PRs sort last
    return (pr.merged_at is None, pr.merged_at or "", pr.number)


def build_context_tree(
    commits: list[CommitRecord], linkages: dict[str, CommitLinkage]
) -> ContextTree:
    """Partition commits (given newest first) into PR nodes and orphans.

    Every input commit lands in exactly one place: the node of the PR that
    owns it, or the orphan list. A commit claimed by several PRs goes to the
    earliest merged one; the rest are kept as cross references.
    """
    owners: dict[int, PullRequestInfo] = {}
    node_pairs: dict[int, list[tuple[int, CommitRecord]]] = {}
    orphan_pairs: list[tuple[int, CommitRecord]] = []
    cross: dict[str, tuple[int, ...]] = {}

    for idx, commit in enumerate(commits):  # idx 0 is the newest commit
        linkage = linkages.get(commit.sha)
        if linkage is None:
            raise MissingLinkage(f"no linkage for commit {commit.sha}")
        if not linkage.prs:
            orphan_pairs.append((idx, commit))
            continue
        owner = min(linkage.prs, key=_ownership_key)
        others = tuple(p.number for p in linkage.prs if p.number != owner.number)
        if others:
            cross[commit.sha] = others
        owners.setdefault(owner.number, owner)
        node_pairs.setdefault(owner.number, []).append((idx, commit))

    sortable: list[tuple[int, PrNode]] = []
    for number, pairs in node_pairs.items():
        pairs.sort(key=lambda t: -t[0])  # larger index = older commit
        pr = owners[number]
        seen: set[int] = set()
        issues = [i for i in pr.issues if not (i.number in seen or seen.add(i.number))]
        node = PrNode(pr=pr, commits=[c for _, c in pairs], issues=issues)
        earliest_idx = pairs[0][0]
        sortable.append((earliest_idx, node))
    sortable.sort(key=lambda t: (-t[0], t[1].pr.number))

    orphan_pairs.sort(key=lambda t: -t[0])
    return ContextTree(
        pr_nodes=[node for _, node in sortable],
        orphan_commits=[c for _, c in orphan_pairs],
        cross_references=cross,
    )
