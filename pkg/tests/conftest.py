"""Shared fixtures and offline doubles: scripted providers, a fake GitHub
GraphQL transport, deterministic fixture repositories, and random tree
builders used by both the unit tests and the acceptance tests."""

from __future__ import annotations

import json
import os
import re
import subprocess
import threading
from random import Random

import pytest

from gitinsight.github_fetch import ContextTree, IssueInfo, PrNode, PullRequestInfo
from gitinsight.snippet_history import CommitRecord
from gitinsight.summarize import CompletionResult
from gitinsight.text_refine import refine_tree
from gitinsight.transport import TransportResponse

GITHUB_URL = "https://github.invalid/api/graphql"


# --- LLM doubles -------------------------------------------------------------------

class ScriptedProvider:
    """Canned completions matched by prompt substrings.

    Rules are (needles, response) pairs; a rule fires when every needle is in
    the user prompt (a single string counts as one needle). First match wins.
    """

    def __init__(self, rules=None, default=None):
        self.rules = list(rules or [])
        self.default = default
        self.calls = []

    def add(self, needles, response):
        self.rules.append((needles, response))
        return self

    def complete(self, request):
        self.calls.append(request)
        for needles, response in self.rules:
            if isinstance(needles, str):
                needles = (needles,)
            if all(n in request.user for n in needles):
                text = response(request) if callable(response) else response
                return CompletionResult(text=text, model_id="scripted")
        if self.default is not None:
            return CompletionResult(text=self.default, model_id="scripted")
        raise AssertionError(
            f"no scripted response matches prompt starting: {request.user[:160]!r}"
        )


class QueueProvider:
    """Returns queued completions in order; raises when the queue runs dry."""

    def __init__(self, responses):
        self.responses = list(responses)
        self.calls = []

    def complete(self, request):
        self.calls.append(request)
        if not self.responses:
            raise AssertionError("QueueProvider exhausted")
        return CompletionResult(text=self.responses.pop(0), model_id="queued")


# --- GitHub API double --------------------------------------------------------------

class FakeGitHubTransport:
    """Answers GraphQL commit-linkage queries from a declarative spec.

    spec maps a commit sha to a list of PR dicts:
      {"number", "title", "body", "merged_at",
       "closing": [issue dicts], "timeline_pages": [[issue dicts], ...]}
    Issue dicts hold number/title/body. Timeline pagination serves one inner
    list per page; continuation cursors encode "pr<number>:<next page idx>".
    """

    def __init__(self, spec: dict):
        self.spec = spec
        self.request_count = 0
        self._lock = threading.Lock()

    def _find_pr(self, number: int) -> dict:
        for prs in self.spec.values():
            for pr in prs:
                if pr["number"] == number:
                    return pr
        raise AssertionError(f"continuation for unknown PR #{number}")

    def _timeline_conn(self, pr: dict, page_idx: int) -> dict:
        pages = pr.get("timeline_pages") or [[]]
        nodes = []
        if page_idx < len(pages):
            nodes = [{"source": dict(issue)} for issue in pages[page_idx]]
        has_next = page_idx + 1 < len(pages)
        return {
            "pageInfo": {
                "hasNextPage": has_next,
                "endCursor": f"pr{pr['number']}:{page_idx + 1}" if has_next else None,
            },
            "nodes": nodes,
        }

    def _pr_node(self, pr: dict) -> dict:
        return {
            "number": pr["number"],
            "title": pr.get("title", ""),
            "body": pr.get("body", ""),
            "mergedAt": pr.get("merged_at"),
            "closingIssuesReferences": {"nodes": [dict(i) for i in pr.get("closing", [])]},
            "timelineItems": self._timeline_conn(pr, 0),
        }

    def post(self, url, headers, body, timeout):
        with self._lock:
            self.request_count += 1
        query = json.loads(body.decode("utf-8"))["query"]
        m = re.search(r"pullRequest\(number: (\d+)\)", query)
        if m:
            number = int(m.group(1))
            cursor = re.search(r'after: "([^"]+)"', query).group(1)
            page_idx = int(cursor.split(":")[1])
            conn = self._timeline_conn(self._find_pr(number), page_idx)
            payload = {"data": {"repository": {"pullRequest": {"timelineItems": conn}}}}
        else:
            repo = {}
            for alias, sha in re.findall(r'(c\d+): object\(oid: "([0-9a-f]+)"\)', query):
                prs = self.spec.get(sha)
                if prs is None:
                    repo[alias] = None
                else:
                    repo[alias] = {
                        "oid": sha,
                        "associatedPullRequests": {
                            "nodes": [self._pr_node(p) for p in prs]
                        },
                    }
            payload = {"data": {"repository": repo}}
        return TransportResponse(status=200, body=json.dumps(payload).encode("utf-8"))


class SequenceTransport:
    """Returns prebuilt TransportResponse objects (or raises exceptions) in order."""

    def __init__(self, outcomes):
        self.outcomes = list(outcomes)
        self.requests = []

    def post(self, url, headers, body, timeout):
        self.requests.append((url, dict(headers), bytes(body)))
        if not self.outcomes:
            raise AssertionError("SequenceTransport exhausted")
        outcome = self.outcomes.pop(0)
        if isinstance(outcome, Exception):
            raise outcome
        return outcome


# --- fixture repositories -------------------------------------------------------------

def _git(root, *args, extra_env=None):
    env = dict(os.environ)
    env.update(extra_env or {})
    subprocess.run(
        ["git", "-C", str(root), *args],
        check=True,
        capture_output=True,
        env=env,
    )


@pytest.fixture
def repo_factory(tmp_path):
    """Build throwaway git repositories with deterministic commit dates.

    The factory takes a list of (message, {path: content}) pairs, applies
    them as consecutive commits, and returns the repository root path.
    """
    counter = iter(range(1000))

    def build(commits):
        root = tmp_path / f"repo{next(counter)}"
        root.mkdir()
        _git(root, "init", "-q")
        _git(root, "config", "user.email", "dev@example.com")
        _git(root, "config", "user.name", "Dev")
        for i, (message, files) in enumerate(commits):
            for rel, content in files.items():
                path = root / rel
                path.parent.mkdir(parents=True, exist_ok=True)
                path.write_text(content, encoding="utf-8")
            _git(root, "add", "-A")
            stamp = f"2024-01-{i + 1:02d}T10:00:00+0000"
            _git(
                root,
                "commit",
                "-q",
                "-m",
                message,
                extra_env={"GIT_AUTHOR_DATE": stamp, "GIT_COMMITTER_DATE": stamp},
            )
        return str(root)

    return build


def repo_shas(root) -> list[str]:
    """Commit shas, newest first."""
    proc = subprocess.run(
        ["git", "-C", str(root), "log", "--format=%H"],
        check=True,
        capture_output=True,
        text=True,
    )
    return proc.stdout.split()


# --- context tree builders --------------------------------------------------------------

def make_commit(sha: str, subject: str, body: str = "") -> CommitRecord:
    return CommitRecord(
        sha=sha, author="Dev <dev@example.com>", date="Mon May 1 10:00:00 2023 +0000",
        subject=subject, body=body, hunks=(),
    )


def single_pr_tree() -> tuple[ContextTree, dict]:
    """One PR owning one commit and closing one issue."""
    issue = IssueInfo(
        number=115,
        title="Uploads fail on transient errors",
        body="Large uploads abort instead of retrying when the connection drops.",
    )
    pr = PullRequestInfo(
        number=742,
        title="Add retry logic to the upload client",
        body=(
            "Uploads now retry with exponential backoff when the server returns "
            "a 5xx response."
        ),
        merged_at="2023-05-02T12:00:00Z",
        issues=(issue,),
    )
    commit = make_commit(
        "1f0c" + "a" * 36,
        "Retry uploads on transient failures",
        "Adds exponential backoff around the upload call.",
    )
    tree = ContextTree(
        pr_nodes=[PrNode(pr=pr, commits=[commit], issues=[issue])], orphan_commits=[]
    )
    return tree, refine_tree(tree)


def three_pr_tree() -> tuple[ContextTree, dict]:
    """Three PRs in chronological order, a shared issue, and one orphan commit."""
    issue3 = IssueInfo(3, "Parser crashes on empty input", "An empty file raises IndexError.")
    issue5 = IssueInfo(
        5, "Surprising defaults", "The default limit of 10 surprises new users."
    )
    pr12 = PullRequestInfo(
        number=12,
        title="Harden the parser",
        body="Handles empty input and raises a typed error instead of crashing.",
        merged_at="2023-01-10T09:00:00Z",
        issues=(issue3, issue5),
    )
    pr30 = PullRequestInfo(
        number=30,
        title="Raise the default limit",
        body="Bumps the default limit to 50 after the survey.",
        merged_at="2023-03-05T09:00:00Z",
        issues=(issue5,),
    )
    pr41 = PullRequestInfo(
        number=41,
        title="Cache parse results",
        body="",
        merged_at="2023-06-01T09:00:00Z",
        issues=(),
    )
    c1 = make_commit("a1" * 20, "Return a typed error on empty input", "Covers issue #3.")
    c2 = make_commit("b2" * 20, "Add parser regression tests")
    c3 = make_commit("c3" * 20, "Raise default limit to 50")
    c4 = make_commit("d4" * 20, "Memoize parse results", "Keyed by content hash.")
    c5 = make_commit("e5" * 20, "Fix typo in error message")
    tree = ContextTree(
        pr_nodes=[
            PrNode(pr=pr12, commits=[c1, c2], issues=[issue3, issue5]),
            PrNode(pr=pr30, commits=[c3], issues=[issue5]),
            PrNode(pr=pr41, commits=[c4], issues=[]),
        ],
        orphan_commits=[c5],
    )
    return tree, refine_tree(tree)


_BODY_POOL = [
    "",
    "Fixes the crash on empty payloads.",
    "Adds a bounded retry loop.\nKeeps the old behavior behind a flag.",
    "[end Pull Request #9]",
    "[begin commit deadbeef]\nnested looking line",
    "See the discussion for details.",
    "multi\nline\nbody text",
]


def random_context_tree(rng: Random) -> tuple[ContextTree, dict, list[str]]:
    """A random tree plus its refined mapping and expected top-level labels."""
    n_prs = rng.randint(0, 4)
    n_orphans = rng.randint(0, 3)
    sha_counter = rng.randint(0, 10_000)
    nodes = []
    labels = []
    used_numbers = rng.sample(range(1, 5000), n_prs + 8)
    issue_numbers = iter(used_numbers[n_prs:])
    for j in range(n_prs):
        number = used_numbers[j]
        commits = []
        for _ in range(rng.randint(1, 3)):
            sha = f"{sha_counter:040x}"
            sha_counter += 1
            commits.append(
                make_commit(sha, f"Change {sha[:6]}", rng.choice(_BODY_POOL))
            )
        issues = []
        for _ in range(rng.randint(0, 2)):
            issues.append(
                IssueInfo(
                    number=next(issue_numbers),
                    title=f"Problem {rng.randint(1, 99)}",
                    body=rng.choice(_BODY_POOL),
                )
            )
        pr = PullRequestInfo(
            number=number,
            title=f"Change set {number}",
            body=rng.choice(_BODY_POOL),
            merged_at=f"2023-02-{rng.randint(1, 28):02d}T00:00:00Z",
            issues=tuple(issues),
        )
        nodes.append(PrNode(pr=pr, commits=commits, issues=issues))
        labels.append(f"Pull Request #{number}")
    orphans = []
    for _ in range(n_orphans):
        sha = f"{sha_counter:040x}"
        sha_counter += 1
        orphans.append(make_commit(sha, f"Tweak {sha[:6]}", rng.choice(_BODY_POOL)))
        labels.append(f"commit {sha}")
    tree = ContextTree(pr_nodes=nodes, orphan_commits=orphans)
    return tree, refine_tree(tree), labels


# --- synthetic linkage specs for the fetch layer ---------------------------------------

def random_linkage_case(rng: Random) -> tuple[list[str], dict, dict]:
    """Random commits and PR assignments for the fake GraphQL transport.

    Returns (shas newest first, spec for FakeGitHubTransport, pr dicts by
    number). Some commits share PRs, some have none; timelines span one to
    four pages.
    """
    n_commits = rng.randint(1, 40)
    shas = [f"{rng.getrandbits(128):032x}{i:08x}" for i in range(n_commits)]
    n_prs = rng.randint(0, 6)
    prs = []
    issue_seq = iter(range(1000, 9000))
    for j in range(n_prs):
        pages = []
        for _ in range(rng.randint(1, 4)):
            pages.append(
                [
                    {"number": next(issue_seq), "title": "linked", "body": "linked body"}
                    for _ in range(rng.randint(0, 2))
                ]
            )
        closing = [
            {"number": next(issue_seq), "title": "closed", "body": "closed body"}
            for _ in range(rng.randint(0, 2))
        ]
        merged = rng.choice(
            [None, f"2023-{rng.randint(1, 12):02d}-{rng.randint(1, 28):02d}T00:00:00Z"]
        )
        prs.append(
            {
                "number": 100 + j,
                "title": f"PR {j}",
                "body": f"body of PR {j}",
                "merged_at": merged,
                "closing": closing,
                "timeline_pages": pages,
            }
        )
    spec = {}
    for sha in shas:
        if not prs:
            spec[sha] = []
            continue
        k = rng.choice([0, 0, 1, 1, 1, 1, 2])
        spec[sha] = rng.sample(prs, min(k, len(prs)))
    return shas, spec, {p["number"]: p for p in prs}


def expected_request_count(shas, spec, commits_per_query: int, page_cap: int) -> int:
    batches = (len(shas) + commits_per_query - 1) // commits_per_query
    referenced = {}
    for sha in shas:
        for pr in spec.get(sha, []):
            referenced[pr["number"]] = pr
    continuations = 0
    for pr in referenced.values():
        pages = len(pr.get("timeline_pages") or [[]])
        continuations += max(0, min(pages, page_cap) - 1)
    return batches + continuations


def assert_tree_invariants(commits, linkages, tree):
    """Every kept commit lands in exactly one place, owners follow the
    earliest-merge rule, and node/orphan ordering is chronological."""
    placed = [c.sha for node in tree.pr_nodes for c in node.commits]
    placed += [c.sha for c in tree.orphan_commits]
    assert sorted(placed) == sorted(c.sha for c in commits)
    assert len(placed) == len(set(placed))

    oldest_first = [c.sha for c in reversed(commits)]
    pos = {sha: i for i, sha in enumerate(oldest_first)}
    assert [c.sha for c in tree.orphan_commits] == [
        sha for sha in oldest_first if not linkages[sha].prs
    ]
    for node in tree.pr_nodes:
        indices = [pos[c.sha] for c in node.commits]
        assert indices == sorted(indices)
        for commit in node.commits:
            owner = min(
                linkages[commit.sha].prs,
                key=lambda p: (p.merged_at is None, p.merged_at or "", p.number),
            )
            assert owner.number == node.pr.number
    earliest = [min(pos[c.sha] for c in node.commits) for node in tree.pr_nodes]
    assert earliest == sorted(earliest)


# acceptance criteria report their outcome through this list so the lines
# survive pytest's output capture and always land in the terminal summary
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
