"""Judge generated explanations before anyone sees them.

Four judge variants score an explanation 0-3 against the context it was
generated from: 0 means grounded and usable, 1 means exactly one unsupported
claim, 2 means several, 3 means the text itself is unusable (repetitive,
truncated, incoherent). Judges 1 and 2 ask the model for the score directly
(and reject answers that contradict their own subtask output); judges 3 and
4 derive the score from subtask answers. Judge 4 checks well-formedness
first and skips claim checking entirely when the text is already unusable.

`evaluate_judge` replays a judge over a rated dataset and reports agreement
metrics against the human scores.
"""

from __future__ import annotations

import json
import logging
import re
from dataclasses import dataclass
from importlib import resources

from .errors import EmptyDataset, UnparsableJudgeOutput
from .summarize import CompletionRequest, Provider

logger = logging.getLogger(__name__)

__all__ = [
    "ClaimCheck",
    "JudgeVerdict",
    "JudgeSample",
    "JudgeMetrics",
    "JUDGES",
    "derived_score",
    "judge_explanation",
    "check_wellformed",
    "check_claims",
    "load_dataset",
    "evaluate_judge",
    "compute_metrics",
]

_JUDGE_MAX_TOKENS = 600

_JUDGE_SYSTEM = (
    "You review explanations that were generated for code snippets. Follow the "
    "required output format exactly: reply only with lines that start with the "
    "markers the task allows."
)

_RUBRIC = (
    "Scores: 0 = well formed and every claim is supported by the context; "
    "1 = well formed but exactly one claim is unsupported; "
    "2 = well formed but two or more claims are unsupported; "
    "3 = not usable (repetitive, truncated, or incoherent)."
)

_WELLFORMED_DEFINITION = (
    "well formed: coherent prose that is not repetitive, not truncated "
    "mid-sentence, and actually talks about the code"
)


@dataclass(frozen=True)
class ClaimCheck:
    text: str
    grounded: bool
    evidence: str = ""


@dataclass(frozen=True)
class JudgeVerdict:
    score: int
    judge_name: str
    wellformed: bool | None = None
    claims: tuple[ClaimCheck, ...] = ()
    reason: str = ""
    raw: str = ""
    parse_failed: bool = False

    @property
    def ungrounded_count(self) -> int:
        return sum(1 for c in self.claims if not c.grounded)


def derived_score(wellformed: bool, ungrounded_count: int) -> int:
    """Map subtask outcomes to the 0-3 rubric."""
    if not wellformed:
        return 3
    if ungrounded_count <= 0:
        return 0
    if ungrounded_count == 1:
        return 1
    return 2


# --- constrained output parsing ---------------------------------------------------

class _ParseFailure(Exception):
    pass


_MARKER_RE = re.compile(r"^\s*(SCORE|REASON|WELLFORMED|CLAIM|GROUNDED|EVIDENCE)\s*:\s*(.*)$")


def _marker_lines(text: str) -> list[tuple[str, str]]:
    out = []
    for line in text.split("\n"):
        m = _MARKER_RE.match(line)
        if m:
            out.append((m.group(1), m.group(2).strip()))
    return out


def _parse_yes_no(value: str) -> bool:
    v = value.strip().lower()
    if v.startswith("yes"):
        return True
    if v.startswith("no"):
        return False
    raise _ParseFailure(f"expected yes or no, got {value!r}")


def _parse_score(value: str) -> int:
    m = re.match(r"([0-3])\b", value.strip())
    if not m:
        raise _ParseFailure(f"expected a score 0-3, got {value!r}")
    return int(m.group(1))


def _parse_claims(pairs: list[tuple[str, str]]) -> tuple[ClaimCheck, ...]:
    """Pair CLAIM lines with their GROUNDED (and optional EVIDENCE) lines."""
    claims: list[ClaimCheck] = []
    pending_text: str | None = None
    pending_grounded: bool | None = None
    pending_evidence = ""

    def flush():
        nonlocal pending_text, pending_grounded, pending_evidence
        if pending_text is None:
            return
        if pending_grounded is None:
            raise _ParseFailure(f"claim without a GROUNDED line: {pending_text!r}")
        claims.append(
            ClaimCheck(text=pending_text, grounded=pending_grounded, evidence=pending_evidence)
        )
        pending_text, pending_grounded, pending_evidence = None, None, ""

    for marker, value in pairs:
        if marker == "CLAIM":
            flush()
            pending_text = value
        elif marker == "GROUNDED":
            if pending_text is None:
                raise _ParseFailure("GROUNDED line without a preceding CLAIM")
            if pending_grounded is not None:
                raise _ParseFailure("two GROUNDED lines for one CLAIM")
            pending_grounded = _parse_yes_no(value)
        elif marker == "EVIDENCE":
            if pending_text is None:
                raise _ParseFailure("EVIDENCE line without a preceding CLAIM")
            pending_evidence = value
    flush()
    return tuple(claims)


def _single(pairs: list[tuple[str, str]], marker: str, required: bool = True) -> str | None:
    values = [v for m, v in pairs if m == marker]
    if not values:
        if required:
            raise _ParseFailure(f"missing {marker} line")
        return None
    if len(values) > 1:
        raise _ParseFailure(f"more than one {marker} line")
    return values[0]


def _complete_with_retry(provider: Provider, user: str, parse_fn):
    """One completion plus one format-reminder retry before giving up."""
    raw = provider.complete(
        CompletionRequest(system=_JUDGE_SYSTEM, user=user, max_output_tokens=_JUDGE_MAX_TOKENS)
    ).text
    try:
        return parse_fn(raw), raw
    except _ParseFailure as first:
        logger.debug("judge output rejected (%s); reprompting", first)
        retry_user = (
            user
            + "\n\nYour previous answer did not follow the required format. "
            "Answer again using exactly the required lines."
        )
        raw = provider.complete(
            CompletionRequest(
                system=_JUDGE_SYSTEM, user=retry_user, max_output_tokens=_JUDGE_MAX_TOKENS
            )
        ).text
        try:
            return parse_fn(raw), raw
        except _ParseFailure as second:
            raise UnparsableJudgeOutput(str(second)) from second


# --- prompts ------------------------------------------------------------------------

def _material_block(snippet: str, context: str, explanation: str) -> str:
    return (
        "[begin code snippet]\n"
        f"{snippet}\n"
        "[end code snippet]\n\n"
        "[begin context information]\n"
        f"{context}\n"
        "[end context information]\n\n"
        "[begin explanation]\n"
        f"{explanation}\n"
        "[end explanation]"
    )


def _judge1_user(snippet: str, context: str, explanation: str) -> str:
    return (
        "Rate the explanation below against the context information.\n"
        f"{_RUBRIC}\n\n"
        f"{_material_block(snippet, context, explanation)}\n\n"
        "Reply with exactly these lines:\n"
        "SCORE: <0-3>\n"
        "REASON: <one sentence, required when the score is 3>"
    )


def _judge2_user(snippet: str, context: str, explanation: str) -> str:
    return (
        "Evaluate the explanation below in four steps.\n"
        f"1. Decide whether it is {_WELLFORMED_DEFINITION}.\n"
        "2. List every factual claim the explanation makes.\n"
        "3. For each claim, decide whether the context information supports it.\n"
        "4. Give the final score consistent with your answers: 3 if not well formed; "
        "otherwise 0 with no unsupported claims, 1 with exactly one, 2 with more.\n"
        f"{_RUBRIC}\n\n"
        f"{_material_block(snippet, context, explanation)}\n\n"
        "Reply with exactly these lines:\n"
        "WELLFORMED: yes|no\n"
        "CLAIM: <claim> (repeated per claim)\n"
        "GROUNDED: yes|no (immediately after its CLAIM)\n"
        "SCORE: <0-3>"
    )


def _judge3_user(snippet: str, context: str, explanation: str) -> str:
    return (
        "Evaluate the explanation below in two steps.\n"
        f"1. Decide whether it is {_WELLFORMED_DEFINITION}.\n"
        "2. List every factual claim it makes and whether the context information "
        "supports it.\n\n"
        f"{_material_block(snippet, context, explanation)}\n\n"
        "Reply with exactly these lines:\n"
        "WELLFORMED: yes|no\n"
        "CLAIM: <claim> (repeated per claim)\n"
        "GROUNDED: yes|no (immediately after its CLAIM)"
    )


def _judge4_wellformed_user(explanation: str, context: str | None = None) -> str:
    context_part = ""
    if context:
        context_part = f"[begin context information]\n{context}\n[end context information]\n\n"
    return (
        f"Decide whether the explanation below is {_WELLFORMED_DEFINITION}.\n\n"
        f"{context_part}"
        "[begin explanation]\n"
        f"{explanation}\n"
        "[end explanation]\n\n"
        "Reply with exactly these lines:\n"
        "WELLFORMED: yes|no\n"
        "REASON: <one sentence>"
    )


def _judge4_claims_user(snippet: str, context: str, explanation: str) -> str:
    return (
        "List every factual claim the explanation below makes, and decide for each "
        "whether the context information supports it.\n\n"
        f"{_material_block(snippet, context, explanation)}\n\n"
        "Reply with exactly these lines, repeated per claim:\n"
        "CLAIM: <claim>\n"
        "GROUNDED: yes|no\n"
        "EVIDENCE: <supporting quote, optional>"
    )


# --- judge variants ----------------------------------------------------------------

def _run_judge1(snippet, context, explanation, provider) -> JudgeVerdict:
    def parse(raw):
        pairs = _marker_lines(raw)
        score = _parse_score(_single(pairs, "SCORE"))
        reason = _single(pairs, "REASON", required=False) or ""
        if score == 3 and not reason:
            raise _ParseFailure("score 3 requires a REASON line")
        return score, reason

    (score, reason), raw = _complete_with_retry(
        provider, _judge1_user(snippet, context, explanation), parse
    )
    return JudgeVerdict(score=score, judge_name="judge1", reason=reason, raw=raw)


def _run_judge2(snippet, context, explanation, provider) -> JudgeVerdict:
    def parse(raw):
        pairs = _marker_lines(raw)
        wellformed = _parse_yes_no(_single(pairs, "WELLFORMED"))
        claims = _parse_claims(pairs)
        score = _parse_score(_single(pairs, "SCORE"))
        ungrounded = sum(1 for c in claims if not c.grounded)
        if score != derived_score(wellformed, ungrounded):
            raise _ParseFailure(
                f"score {score} contradicts subtask answers "
                f"(wellformed={wellformed}, unsupported={ungrounded})"
            )
        return wellformed, claims, score

    (wellformed, claims, score), raw = _complete_with_retry(
        provider, _judge2_user(snippet, context, explanation), parse
    )
    return JudgeVerdict(
        score=score, judge_name="judge2", wellformed=wellformed, claims=claims, raw=raw
    )


def _run_judge3(snippet, context, explanation, provider) -> JudgeVerdict:
    def parse(raw):
        pairs = _marker_lines(raw)
        wellformed = _parse_yes_no(_single(pairs, "WELLFORMED"))
        claims = _parse_claims(pairs)
        return wellformed, claims

    (wellformed, claims), raw = _complete_with_retry(
        provider, _judge3_user(snippet, context, explanation), parse
    )
    return JudgeVerdict(
        score=derived_score(wellformed, sum(1 for c in claims if not c.grounded)),
        judge_name="judge3",
        wellformed=wellformed,
        claims=claims,
        raw=raw,
    )


def check_wellformed(
    explanation: str, provider: Provider, context: str | None = None
) -> tuple[bool, str, str]:
    """Standalone well-formedness check; returns (verdict, reason, raw output)."""

    def parse(raw):
        pairs = _marker_lines(raw)
        wellformed = _parse_yes_no(_single(pairs, "WELLFORMED"))
        reason = _single(pairs, "REASON", required=False) or ""
        return wellformed, reason

    (wellformed, reason), raw = _complete_with_retry(
        provider, _judge4_wellformed_user(explanation, context), parse
    )
    return wellformed, reason, raw


def check_claims(
    snippet: str, context: str, explanation: str, provider: Provider
) -> tuple[tuple[ClaimCheck, ...], str]:
    """Standalone claim grounding check; returns (claims, raw output)."""

    def parse(raw):
        return _parse_claims(_marker_lines(raw))

    claims, raw = _complete_with_retry(
        provider, _judge4_claims_user(snippet, context, explanation), parse
    )
    return claims, raw


def _run_judge4(snippet, context, explanation, provider) -> JudgeVerdict:
    wellformed, reason, raw1 = check_wellformed(explanation, provider)
    if not wellformed:
        # unusable text: no point checking claims
        return JudgeVerdict(
            score=3, judge_name="judge4", wellformed=False, reason=reason, raw=raw1
        )
    claims, raw2 = check_claims(snippet, context, explanation, provider)
    return JudgeVerdict(
        score=derived_score(True, sum(1 for c in claims if not c.grounded)),
        judge_name="judge4",
        wellformed=True,
        claims=claims,
        reason=reason,
        raw=raw1 + "\n" + raw2,
    )


JUDGES = {
    "judge1": _run_judge1,
    "judge2": _run_judge2,
    "judge3": _run_judge3,
    "judge4": _run_judge4,
}


def judge_explanation(
    snippet: str,
    context: str,
    explanation: str,
    provider: Provider,
    *,
    judge: str = "judge4",
) -> JudgeVerdict:
    runner = JUDGES.get(judge)
    if runner is None:
        known = ", ".join(sorted(JUDGES))
        raise ValueError(f"unknown judge {judge!r} (known: {known})")
    return runner(snippet, context, explanation, provider)


# --- dataset evaluation ---------------------------------------------------------------

@dataclass(frozen=True)
class JudgeSample:
    snippet: str
    context: str
    explanation: str
    human_score: int


@dataclass(frozen=True)
class JudgeMetrics:
    """Agreement rates against human scores; None where the stratum is empty."""

    accuracy: float | None
    usability: float | None
    hallucinations_identified: float | None
    bad_form_identified: float | None
    false_hallucination: float | None
    false_bad_form: float | None
    total: int
    parse_failures: int = 0

    def as_dict(self) -> dict:
        return {
            "accuracy": self.accuracy,
            "usability": self.usability,
            "hallucinations_identified": self.hallucinations_identified,
            "bad_form_identified": self.bad_form_identified,
            "false_hallucination": self.false_hallucination,
            "false_bad_form": self.false_bad_form,
            "total": self.total,
            "parse_failures": self.parse_failures,
        }


def load_dataset(path: str | None = None) -> list[JudgeSample]:
    """Load rated samples from JSONL; defaults to the bundled dataset."""
    if path is None:
        text = (resources.files("gitinsight") / "data" / "judge_eval.jsonl").read_text("utf-8")
    else:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    samples = []
    for line in text.split("\n"):
        line = line.strip()
        if not line:
            continue
        obj = json.loads(line)
        samples.append(
            JudgeSample(
                snippet=str(obj["snippet"]),
                context=str(obj["context"]),
                explanation=str(obj["explanation"]),
                human_score=int(obj["human_score"]),
            )
        )
    return samples


def _ratio(hits: int, total: int) -> float | None:
    # an empty stratum means not applicable, never a zero rate
    if total == 0:
        return None
    return hits / total


def compute_metrics(pairs: list[tuple[int, int]], parse_failures: int = 0) -> JudgeMetrics:
    """Agreement metrics over (human_score, judge_score) pairs."""
    if not pairs:
        raise EmptyDataset("no samples to evaluate")

    def merged(score: int) -> int:
        return 1 if score in (1, 2) else score

    total = len(pairs)
    accuracy_hits = sum(1 for h, j in pairs if merged(h) == merged(j))
    usability_hits = sum(1 for h, j in pairs if (h == 0) == (j == 0))

    halluc = [(h, j) for h, j in pairs if h in (1, 2)]
    not_halluc = [(h, j) for h, j in pairs if h not in (1, 2)]
    malformed = [(h, j) for h, j in pairs if h == 3]
    not_malformed = [(h, j) for h, j in pairs if h != 3]

    return JudgeMetrics(
        accuracy=_ratio(accuracy_hits, total),
        usability=_ratio(usability_hits, total),
        hallucinations_identified=_ratio(
            sum(1 for _, j in halluc if j in (1, 2)), len(halluc)
        ),
        bad_form_identified=_ratio(sum(1 for _, j in malformed if j == 3), len(malformed)),
        false_hallucination=_ratio(
            sum(1 for _, j in not_halluc if j in (1, 2)), len(not_halluc)
        ),
        false_bad_form=_ratio(sum(1 for _, j in not_malformed if j == 3), len(not_malformed)),
        total=total,
        parse_failures=parse_failures,
    )


def evaluate_judge(
    samples: list[JudgeSample], provider: Provider, *, judge: str = "judge4"
) -> tuple[JudgeMetrics, list[JudgeVerdict]]:
    """Run one judge over every sample and compare with the human scores.

    A judge whose output stays unparsable after the retry counts as score 3
    (the text could not be validated) and is flagged in parse_failures.
    """
    if not samples:
        raise EmptyDataset("no samples to evaluate")
    verdicts: list[JudgeVerdict] = []
    pairs: list[tuple[int, int]] = []
    failures = 0
    for sample in samples:
        try:
            verdict = judge_explanation(
                sample.snippet, sample.context, sample.explanation, provider, judge=judge
            )
        except UnparsableJudgeOutput as exc:
            failures += 1
            verdict = JudgeVerdict(
                score=3, judge_name=judge, reason=str(exc), parse_failed=True
            )
        verdicts.append(verdict)
        pairs.append((sample.human_score, verdict.score))
    return compute_metrics(pairs, parse_failures=failures), verdicts
