"""Trace the git history of a line range and filter trivial changes.

`trace_history` shells out to `git log -L` and parses the patch stream into
`CommitRecord` objects. `classify_hunk` decides whether a hunk is a trivial
edit (pure deletion, comment-only, string-literal-only, or a simple variable
rename); `filter_trivial` drops commits whose hunks are all trivial so later
stages only see changes that plausibly carry intent.
"""

from __future__ import annotations

import enum
import keyword
import logging
import os
import re
import subprocess
import threading
from dataclasses import dataclass, field
from functools import cached_property

from .errors import (
    FileNotTracked,
    GitFailure,
    GitNotAvailable,
    MalformedLog,
    RangeOutOfBounds,
)

logger = logging.getLogger(__name__)

__all__ = [
    "Triviality",
    "DiffLine",
    "DiffHunk",
    "CommitRecord",
    "SnippetRef",
    "classify_hunk",
    "commit_is_trivial",
    "filter_trivial",
    "parse_log_output",
    "parse_diff_hunks",
    "trace_history",
]


class Triviality(enum.Enum):
    """Outcome of hunk classification. Everything but NON_TRIVIAL is trivial."""

    NON_TRIVIAL = "non_trivial"
    DELETION_ONLY = "deletion_only"
    COMMENT_ONLY = "comment_only"
    STRING_LITERAL_ONLY = "string_literal_only"
    VARIABLE_RENAME = "variable_rename"

    @property
    def trivial(self) -> bool:
        return self is not Triviality.NON_TRIVIAL


@dataclass(frozen=True)
class DiffLine:
    """One patch line: tag is ' ', '-', or '+'; text excludes the tag."""

    tag: str
    text: str


@dataclass(frozen=True)
class DiffHunk:
    file_path: str
    old_start: int
    old_count: int
    new_start: int
    new_count: int
    section: str
    lines: tuple[DiffLine, ...]

    @property
    def removed(self) -> tuple[str, ...]:
        return tuple(l.text for l in self.lines if l.tag == "-")

    @property
    def added(self) -> tuple[str, ...]:
        return tuple(l.text for l in self.lines if l.tag == "+")


@dataclass(frozen=True)
class CommitRecord:
    sha: str
    author: str
    date: str
    subject: str
    body: str
    hunks: tuple[DiffHunk, ...]

    @property
    def message(self) -> str:
        return f"{self.subject}\n\n{self.body}" if self.body else self.subject

    @property
    def is_trivial(self) -> bool:
        return commit_is_trivial(self)


@dataclass(frozen=True)
class SnippetRef:
    """A line range in a file of a local git checkout. Lines are 1-based, inclusive."""

    repo_root: str
    file_path: str
    start_line: int
    end_line: int

    def __post_init__(self):
        if self.start_line < 1:
            raise ValueError("start_line must be 1 or greater")
        if self.end_line < self.start_line:
            raise ValueError("end_line must not precede start_line")

    @cached_property
    def source_text(self) -> str:
        full = os.path.join(self.repo_root, self.file_path)
        with open(full, encoding="utf-8", errors="replace") as fh:
            lines = fh.read().split("\n")
        return "\n".join(lines[self.start_line - 1 : self.end_line])


# --- log parsing --------------------------------------------------------------

_COMMIT_RE = re.compile(r"^commit ([0-9a-f]{7,64})\b")
_HEADER_RE = re.compile(r"^([A-Za-z][A-Za-z-]*):(.*)$")
_HUNK_RE = re.compile(r"^@@ -(\d+)(?:,(\d+))? \+(\d+)(?:,(\d+))? @@(.*)$")

# diff-section lines that carry no hunk content and can be skipped
_DIFF_NOISE_PREFIXES = (
    "index ",
    "old mode",
    "new mode",
    "similarity index",
    "dissimilarity index",
    "rename from",
    "rename to",
    "copy from",
    "copy to",
    "deleted file",
    "new file",
    "Binary files",
    "mode ",
)


def _strip_git_prefix(path: str) -> str:
    if path.startswith(("a/", "b/")):
        return path[2:]
    return path


def _read_hunk(
    lines: list[str], i: int, offs: list[int], total: int, file_path: str
) -> tuple[DiffHunk, int]:
    """Consume one @@-hunk starting at lines[i]; returns the hunk and next index."""
    m = _HUNK_RE.match(lines[i])
    if not m:
        raise MalformedLog("unrecognized hunk header", offs[i])
    old_start = int(m.group(1))
    old_count = int(m.group(2)) if m.group(2) is not None else 1
    new_start = int(m.group(3))
    new_count = int(m.group(4)) if m.group(4) is not None else 1
    section = m.group(5).strip()
    rem_old, rem_new = old_count, new_count
    out: list[DiffLine] = []
    i += 1
    n = len(lines)
    while rem_old > 0 or rem_new > 0:
        if i >= n:
            raise MalformedLog("hunk ended before all counted lines were seen", total)
        line = lines[i]
        if line.startswith("\\"):
            # "\ No newline at end of file" marker
            i += 1
            continue
        if line == "":
            # tolerate a context line whose trailing whitespace was stripped
            if rem_old > 0 and rem_new > 0:
                out.append(DiffLine(" ", ""))
                rem_old -= 1
                rem_new -= 1
                i += 1
                continue
            raise MalformedLog("blank line where diff content was expected", offs[i])
        tag, rest = line[0], line[1:]
        if tag == " ":
            if rem_old <= 0 or rem_new <= 0:
                raise MalformedLog("context line overruns hunk header counts", offs[i])
            rem_old -= 1
            rem_new -= 1
        elif tag == "-":
            if rem_old <= 0:
                raise MalformedLog("deletion overruns hunk header counts", offs[i])
            rem_old -= 1
        elif tag == "+":
            if rem_new <= 0:
                raise MalformedLog("addition overruns hunk header counts", offs[i])
            rem_new -= 1
        else:
            raise MalformedLog("unexpected line inside hunk", offs[i])
        out.append(DiffLine(tag, rest))
        i += 1
    while i < n and lines[i].startswith("\\"):
        i += 1
    hunk = DiffHunk(
        file_path=file_path,
        old_start=old_start,
        old_count=old_count,
        new_start=new_start,
        new_count=new_count,
        section=section,
        lines=tuple(out),
    )
    return hunk, i


def _line_offsets(lines: list[str]) -> tuple[list[int], int]:
    offs = []
    pos = 0
    for ln in lines:
        offs.append(pos)
        pos += len(ln.encode("utf-8")) + 1
    return offs, max(0, pos - 1)


def parse_log_output(text: str) -> list[CommitRecord]:
    """Parse `git log -L` patch output into commit records.

    Raises MalformedLog with the byte offset of the first offending line when
    the text does not look like git output.
    """
    lines = text.split("\n")
    offs, total = _line_offsets(lines)
    commits: list[CommitRecord] = []
    i, n = 0, len(lines)

    while i < n:
        if lines[i] == "":
            i += 1
            continue
        m = _COMMIT_RE.match(lines[i])
        if not m:
            raise MalformedLog("expected a commit header", offs[i])
        sha = m.group(1)
        i += 1

        author = ""
        date = ""
        while i < n and lines[i] != "":
            hm = _HEADER_RE.match(lines[i])
            if not hm:
                raise MalformedLog("expected a commit header field", offs[i])
            name, value = hm.group(1), hm.group(2).strip()
            if name == "Author":
                author = value
            elif name == "Date":
                date = value
            i += 1
        while i < n and lines[i] == "":
            i += 1

        msg_lines: list[str] = []
        while True:
            while i < n and lines[i].startswith("    "):
                msg_lines.append(lines[i][4:])
                i += 1
            blanks = 0
            while i + blanks < n and lines[i + blanks] == "":
                blanks += 1
            if i + blanks < n and lines[i + blanks].startswith("    "):
                msg_lines.extend([""] * blanks)
                i += blanks
                continue
            i += blanks
            break
        subject = msg_lines[0].strip() if msg_lines else ""
        body = "\n".join(msg_lines[1:]).strip("\n")

        hunks: list[DiffHunk] = []
        old_path = ""
        cur_path = ""
        while i < n:
            line = lines[i]
            if line == "":
                i += 1
                continue
            if _COMMIT_RE.match(line):
                break
            if line.startswith("diff --git"):
                old_path = ""
                cur_path = ""
                i += 1
                continue
            if line.startswith("--- "):
                p = line[4:].strip()
                if p != "/dev/null":
                    old_path = _strip_git_prefix(p)
                i += 1
                continue
            if line.startswith("+++ "):
                p = line[4:].strip()
                cur_path = old_path if p == "/dev/null" else _strip_git_prefix(p)
                i += 1
                continue
            if line.startswith("@@"):
                hunk, i = _read_hunk(lines, i, offs, total, cur_path or old_path)
                hunks.append(hunk)
                continue
            if line.startswith(_DIFF_NOISE_PREFIXES):
                i += 1
                continue
            raise MalformedLog("unexpected line in diff section", offs[i])

        commits.append(
            CommitRecord(
                sha=sha,
                author=author,
                date=date,
                subject=subject,
                body=body,
                hunks=tuple(hunks),
            )
        )
    return commits


def parse_diff_hunks(text: str, file_path: str) -> list[DiffHunk]:
    """Parse bare unified-diff hunks (no commit headers) for the given file."""
    lines = text.split("\n")
    offs, total = _line_offsets(lines)
    hunks: list[DiffHunk] = []
    i, n = 0, len(lines)
    while i < n:
        line = lines[i]
        if line == "" or line.startswith(("diff --git", "--- ", "+++ ")):
            i += 1
            continue
        if line.startswith("@@"):
            hunk, i = _read_hunk(lines, i, offs, total, file_path)
            hunks.append(hunk)
            continue
        raise MalformedLog("expected a hunk header", offs[i])
    return hunks


# --- comment and string syntax -------------------------------------------------

_PY_KEYWORDS = frozenset(keyword.kwlist)
_C_FAMILY_KEYWORDS = frozenset(
    """
    if else for while do switch case default break continue return goto
    function var let const class struct enum union typedef static void int
    long short unsigned signed float double char bool true false null nullptr
    new delete this super public private protected final abstract interface
    extends implements import export package try catch finally throw throws
    async await yield in of instanceof typeof sizeof fn mut impl pub use mod
    match loop type defer func go range map chan select volatile register
    inline extern namespace using template operator
    """.split()
)
_ALL_KEYWORDS = _PY_KEYWORDS | _C_FAMILY_KEYWORDS


@dataclass(frozen=True)
class CommentSyntax:
    line_markers: tuple[str, ...]
    block_markers: tuple[tuple[str, str], ...]
    string_delims: tuple[str, ...]  # longest first
    escape: str | None
    keywords: frozenset[str]


_PYTHON_SYNTAX = CommentSyntax(
    line_markers=("#",),
    block_markers=(),
    string_delims=('"""', "'''", '"', "'"),
    escape="\\",
    keywords=_PY_KEYWORDS,
)
_C_SYNTAX = CommentSyntax(
    line_markers=("//",),
    block_markers=(("/*", "*/"),),
    string_delims=('"', "'"),
    escape="\\",
    keywords=_C_FAMILY_KEYWORDS,
)
_JS_SYNTAX = CommentSyntax(
    line_markers=("//",),
    block_markers=(("/*", "*/"),),
    string_delims=("`", '"', "'"),
    escape="\\",
    keywords=_C_FAMILY_KEYWORDS,
)
_HASH_SYNTAX = CommentSyntax(
    line_markers=("#",),
    block_markers=(),
    string_delims=('"', "'"),
    escape="\\",
    keywords=_ALL_KEYWORDS,
)
_SQL_SYNTAX = CommentSyntax(
    line_markers=("--",),
    block_markers=(("/*", "*/"),),
    string_delims=("'",),
    escape=None,
    keywords=_ALL_KEYWORDS,
)

_SYNTAX_BY_EXT: dict[str, CommentSyntax] = {
    ".py": _PYTHON_SYNTAX,
    ".pyi": _PYTHON_SYNTAX,
    ".js": _JS_SYNTAX,
    ".jsx": _JS_SYNTAX,
    ".ts": _JS_SYNTAX,
    ".tsx": _JS_SYNTAX,
    ".mjs": _JS_SYNTAX,
    ".java": _C_SYNTAX,
    ".c": _C_SYNTAX,
    ".h": _C_SYNTAX,
    ".cpp": _C_SYNTAX,
    ".cc": _C_SYNTAX,
    ".hpp": _C_SYNTAX,
    ".cs": _C_SYNTAX,
    ".go": _C_SYNTAX,
    ".rs": _C_SYNTAX,
    ".swift": _C_SYNTAX,
    ".kt": _C_SYNTAX,
    ".scala": _C_SYNTAX,
    ".rb": _HASH_SYNTAX,
    ".sh": _HASH_SYNTAX,
    ".bash": _HASH_SYNTAX,
    ".yaml": _HASH_SYNTAX,
    ".yml": _HASH_SYNTAX,
    ".toml": _HASH_SYNTAX,
    ".cfg": _HASH_SYNTAX,
    ".ini": _HASH_SYNTAX,
    ".sql": _SQL_SYNTAX,
}


def comment_syntax_for(file_path: str) -> CommentSyntax | None:
    _, ext = os.path.splitext(file_path)
    return _SYNTAX_BY_EXT.get(ext.lower())


@dataclass(frozen=True)
class _ScanResult:
    code: str  # comments removed, string literals kept verbatim
    masked: str  # comments removed, string literals replaced by a placeholder
    comments: tuple[str, ...]
    strings: tuple[str, ...]


_STRING_PLACEHOLDER = "\x00"


def _scan_code(text: str, syntax: CommentSyntax) -> _ScanResult:
    """Split text into code, comment content, and string literals."""
    code: list[str] = []
    masked: list[str] = []
    comments: list[str] = []
    strings: list[str] = []
    i, n = 0, len(text)
    while i < n:
        matched = False
        for opener, closer in syntax.block_markers:
            if text.startswith(opener, i):
                end = text.find(closer, i + len(opener))
                if end < 0:
                    comments.append(text[i + len(opener) :].strip())
                    i = n
                else:
                    comments.append(text[i + len(opener) : end].strip())
                    i = end + len(closer)
                code.append(" ")
                masked.append(" ")
                matched = True
                break
        if matched:
            continue
        for marker in syntax.line_markers:
            if text.startswith(marker, i):
                end = text.find("\n", i)
                if end < 0:
                    end = n
                comments.append(text[i + len(marker) : end].strip())
                code.append(" ")
                masked.append(" ")
                i = end
                matched = True
                break
        if matched:
            continue
        for delim in syntax.string_delims:
            if text.startswith(delim, i):
                j = i + len(delim)
                while j < n:
                    if syntax.escape and text.startswith(syntax.escape, j):
                        j += 2
                        continue
                    if text.startswith(delim, j):
                        j += len(delim)
                        break
                    j += 1
                else:
                    j = n
                literal = text[i:j]
                strings.append(literal)
                code.append(literal)
                masked.append(_STRING_PLACEHOLDER)
                i = j
                matched = True
                break
        if matched:
            continue
        code.append(text[i])
        masked.append(text[i])
        i += 1
    return _ScanResult(
        code="".join(code),
        masked="".join(masked),
        comments=tuple(comments),
        strings=tuple(strings),
    )


# --- triviality classification -------------------------------------------------

_TOKEN_RE = re.compile(r"[A-Za-z_]\w*|\d[\w.]*|\S")
_IDENT_RE = re.compile(r"[A-Za-z_]\w*")


def _tokens(text: str) -> list[str]:
    return _TOKEN_RE.findall(text)


def _is_simple_rename(
    removed: tuple[str, ...], added: tuple[str, ...], keywords: frozenset[str]
) -> bool:
    """True when the only difference is one identifier consistently renamed."""
    if len(removed) != len(added) or not removed:
        return False
    mapping: dict[str, str] = {}
    for old_line, new_line in zip(removed, added):
        old_toks = _tokens(old_line)
        new_toks = _tokens(new_line)
        if len(old_toks) != len(new_toks):
            return False
        for o, t in zip(old_toks, new_toks):
            if o == t:
                continue
            if not (_IDENT_RE.fullmatch(o) and _IDENT_RE.fullmatch(t)):
                return False
            if o in keywords or t in keywords:
                return False
            if o in mapping and mapping[o] != t:
                return False
            mapping[o] = t
    renames = {o: t for o, t in mapping.items() if o != t}
    if len(renames) != 1:
        return False
    ((old_name, new_name),) = renames.items()
    # the new name must be fresh and the old one fully gone
    for old_line, new_line in zip(removed, added):
        if re.search(rf"\b{re.escape(new_name)}\b", old_line):
            return False
        if re.search(rf"\b{re.escape(old_name)}\b", new_line):
            return False
    return True


def classify_hunk(hunk: DiffHunk, file_path: str | None = None) -> Triviality:
    """Classify one hunk. Checks run from cheapest to most specific; anything
    that fails every check is NON_TRIVIAL."""
    path = file_path if file_path is not None else hunk.file_path
    removed = hunk.removed
    added = hunk.added
    if not removed and not added:
        return Triviality.NON_TRIVIAL
    if not added:
        return Triviality.DELETION_ONLY

    syntax = comment_syntax_for(path)
    if syntax is not None:
        old = _scan_code("\n".join(removed), syntax)
        new = _scan_code("\n".join(added), syntax)
        if _tokens(old.code) == _tokens(new.code):
            if old.comments != new.comments:
                return Triviality.COMMENT_ONLY
        if (
            _tokens(old.masked) == _tokens(new.masked)
            and old.comments == new.comments
            and old.strings != new.strings
        ):
            return Triviality.STRING_LITERAL_ONLY

    keywords = syntax.keywords if syntax is not None else _ALL_KEYWORDS
    if _is_simple_rename(removed, added, keywords):
        return Triviality.VARIABLE_RENAME
    return Triviality.NON_TRIVIAL


def commit_is_trivial(commit: CommitRecord) -> bool:
    """A commit is trivial when it has hunks and every hunk is trivial."""
    if not commit.hunks:
        return False
    return all(classify_hunk(h).trivial for h in commit.hunks)


def filter_trivial(commits: list[CommitRecord]) -> list[CommitRecord]:
    kept = [c for c in commits if not commit_is_trivial(c)]
    dropped = len(commits) - len(kept)
    if dropped:
        logger.debug("dropped %d trivial commit(s) of %d", dropped, len(commits))
    return kept


# --- running git ----------------------------------------------------------------

_locks_guard = threading.Lock()
_repo_locks: dict[str, threading.Lock] = {}


def _repo_lock(repo_root: str) -> threading.Lock:
    key = os.path.abspath(repo_root)
    with _locks_guard:
        return _repo_locks.setdefault(key, threading.Lock())


def _run_git(cmd: list[str]) -> tuple[int, str, str]:
    try:
        proc = subprocess.run(
            cmd, capture_output=True, text=True, encoding="utf-8", errors="replace"
        )
    except FileNotFoundError as exc:
        raise GitNotAvailable("git executable not found") from exc
    return proc.returncode, proc.stdout, proc.stderr


def trace_history(
    snippet: SnippetRef, *, max_commits: int = 200, runner=None
) -> list[CommitRecord]:
    """Return commits that touched the snippet's line range, newest first.

    `runner` takes the argv list and returns (returncode, stdout, stderr);
    the default runs git as a subprocess. One git process per repository at
    a time; concurrent calls for the same checkout are serialized.
    """
    run = runner or _run_git
    cmd = [
        "git",
        "-C",
        snippet.repo_root,
        "log",
        "--no-color",
        "--no-decorate",
        "-n",
        str(max_commits),
        "-L",
        f"{snippet.start_line},{snippet.end_line}:{snippet.file_path}",
    ]
    logger.debug("tracing %s:%d-%d", snippet.file_path, snippet.start_line, snippet.end_line)
    with _repo_lock(snippet.repo_root):
        code, out, err = run(cmd)
    if code != 0:
        if "There is no path" in err or "does not exist" in err:
            raise FileNotTracked(f"{snippet.file_path} is not tracked by git")
        if re.search(r"has only \d+ lines?", err):
            raise RangeOutOfBounds(
                f"lines {snippet.start_line}-{snippet.end_line} exceed {snippet.file_path}"
            )
        raise GitFailure(f"git log exited with code {code}", stderr=err)
    return parse_log_output(out)
