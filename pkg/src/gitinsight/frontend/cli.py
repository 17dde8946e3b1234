"""Command line front end.

Subcommands: explain (full pipeline), context (extraction only), judge-eval
(replay a judge over a rated dataset), serve-mcp (stdio server). Exit codes:
0 success, 1 pipeline failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace

from ..errors import InsightError
from ..validate import JUDGES, evaluate_judge, load_dataset
from .config import load_config, make_provider
from .mcp import McpServer
from .pipeline import InsightResult, extract_context, run_pipeline
from ..snippet_history import SnippetRef

__all__ = ["build_parser", "cli_main", "main"]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gitinsight",
        description=(
            "Explain code from its repository history: PR and issue context, "
            "an LLM summary, and a validation judge in front of the output."
        ),
    )
    parser.add_argument("--config", help="path to a JSON config file")
    parser.add_argument(
        "-v", "--verbose", action="store_true", help="log progress to stderr"
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_snippet_args(p):
        p.add_argument("file", help="file path relative to the repository root")
        p.add_argument("start", type=int, help="first line (1-based)")
        p.add_argument("end", type=int, help="last line (inclusive)")
        p.add_argument("--repo", help="repository root (defaults to the config value)")

    p_explain = sub.add_parser("explain", help="explain a line range")
    add_snippet_args(p_explain)
    p_explain.add_argument("--use-case", dest="use_case", help="explain or history")
    p_explain.add_argument(
        "--judge", choices=sorted(JUDGES), help="judge variant to validate with"
    )
    p_explain.add_argument(
        "--no-judge",
        action="store_true",
        help="show the explanation even when the judge scores it above 0",
    )
    p_explain.add_argument("--json", action="store_true", help="emit a JSON result")

    p_context = sub.add_parser("context", help="print the serialized context only")
    add_snippet_args(p_context)

    p_eval = sub.add_parser("judge-eval", help="evaluate a judge against rated samples")
    p_eval.add_argument("--judge", choices=sorted(JUDGES), default="judge4")
    p_eval.add_argument("--dataset", help="JSONL file (defaults to the bundled set)")
    p_eval.add_argument("--json", action="store_true", help="emit JSON metrics")

    sub.add_parser("serve-mcp", help="serve the MCP tools over stdio")
    return parser


def _make_snippet(args, cfg) -> SnippetRef:
    return SnippetRef(
        repo_root=args.repo or cfg.repo_root,
        file_path=args.file,
        start_line=args.start,
        end_line=args.end,
    )


def _print_explain(result: InsightResult, as_json: bool, out):
    if as_json:
        json.dump(result.as_dict(), out, indent=2)
        out.write("\n")
        return
    if result.verdict is None:
        out.write(
            "No explanation was generated: the snippet has no non-trivial history.\n"
        )
        return
    if result.suppressed:
        verdict = result.verdict
        detail = verdict.reason or f"{verdict.ungrounded_count} unsupported claim(s)"
        out.write(
            f"Explanation withheld: judge {verdict.judge_name} scored it "
            f"{verdict.score} ({detail}).\n"
        )
        return
    out.write(result.explanation + "\n")
    verdict = result.verdict
    out.write(
        f"\n[judge {verdict.judge_name}: score {verdict.score}; "
        f"context artifacts: {result.artifact_count}; "
        f"output budget: {result.output_budget} tokens]\n"
    )


def _print_metrics(metrics, judge: str, as_json: bool, out):
    if as_json:
        json.dump({"judge": judge, **metrics.as_dict()}, out, indent=2)
        out.write("\n")
        return
    out.write(f"judge: {judge} ({metrics.total} samples")
    if metrics.parse_failures:
        out.write(f", {metrics.parse_failures} unparsable")
    out.write(")\n")
    for name, value in metrics.as_dict().items():
        if name in ("total", "parse_failures"):
            continue
        shown = "n/a" if value is None else f"{value:.3f}"
        out.write(f"  {name}: {shown}\n")


def cli_main(
    argv=None,
    *,
    provider=None,
    runner=None,
    transport=None,
    stdin=None,
    stdout=None,
) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    out = stdout if stdout is not None else sys.stdout
    if args.verbose:
        logging.basicConfig(level=logging.DEBUG, stream=sys.stderr)

    try:
        cfg = load_config(args.config)

        if args.command == "explain":
            if args.judge:
                cfg = replace(cfg, judge=args.judge)
            snippet = _make_snippet(args, cfg)
            result = run_pipeline(
                snippet,
                cfg,
                use_case=args.use_case,
                runner=runner,
                transport=transport,
                provider=provider,
                judge_gate=False if args.no_judge else None,
            )
            _print_explain(result, args.json, out)
            return 0

        if args.command == "context":
            snippet = _make_snippet(args, cfg)
            context = extract_context(
                snippet, cfg, runner=runner, transport=transport
            )
            out.write(context + ("\n" if context and not context.endswith("\n") else ""))
            return 0

        if args.command == "judge-eval":
            samples = load_dataset(args.dataset)
            judge_provider = provider if provider is not None else make_provider(cfg)
            metrics, _ = evaluate_judge(samples, judge_provider, judge=args.judge)
            _print_metrics(metrics, args.judge, args.json, out)
            return 0

        if args.command == "serve-mcp":
            server = McpServer(
                cfg,
                stdin=stdin,
                stdout=stdout if stdout is not None else sys.stdout,
                runner=runner,
                transport=transport,
                provider=provider,
            )
            server.serve_forever()
            return 0
    except (InsightError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    parser.error(f"unknown command {args.command!r}")
    return 2


def main():
    sys.exit(cli_main())
