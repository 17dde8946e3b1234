"""Application configuration: a JSON file plus environment variables.

Secrets never need to live in the file: GITHUB_TOKEN and LLM_API_KEY are
read from the environment and win over file values. A missing config file
at the default location just means defaults (offline mock provider, no
GitHub fetching); an explicitly named file must exist.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field, fields

from ..errors import ConfigError
from ..github_fetch import FetchConfig
from ..summarize import (
    BudgetConfig,
    DeterministicMockProvider,
    HttpCompletionProvider,
    Provider,
    ProviderConfig,
)
from ..transport import Transport

__all__ = ["AppConfig", "DEFAULT_CONFIG_PATH", "load_config", "make_provider"]

DEFAULT_CONFIG_PATH = "insight.config.json"


@dataclass(frozen=True)
class AppConfig:
    repo_root: str = "."
    fetch: FetchConfig | None = None  # None disables GitHub context fetching
    provider_kind: str = "mock"  # "http" or "mock"
    provider: ProviderConfig = field(default_factory=ProviderConfig)
    budget: BudgetConfig = field(default_factory=BudgetConfig)
    judge: str = "judge4"
    judge_gate: bool = True
    max_commits: int = 200
    use_case: str = "explain"


def _build(cls, section: dict, where: str):
    allowed = {f.name for f in fields(cls)}
    unknown = set(section) - allowed
    if unknown:
        raise ConfigError(f"unknown keys in {where}: {', '.join(sorted(unknown))}")
    try:
        return cls(**section)
    except TypeError as exc:
        raise ConfigError(f"invalid {where} section: {exc}") from exc


def load_config(path: str | None = None, env: dict | None = None) -> AppConfig:
    env = os.environ if env is None else env
    explicit = path is not None
    path = path or DEFAULT_CONFIG_PATH
    raw: dict = {}
    if os.path.exists(path):
        try:
            with open(path, encoding="utf-8") as fh:
                raw = json.load(fh)
        except (OSError, ValueError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        if not isinstance(raw, dict):
            raise ConfigError(f"config {path} must hold a JSON object")
    elif explicit:
        raise ConfigError(f"config file not found: {path}")

    github = raw.get("github") or {}
    if github and not isinstance(github, dict):
        raise ConfigError("github section must be an object")
    fetch = None
    if github:
        if "owner" not in github or "name" not in github:
            raise ConfigError("github section needs both owner and name")
        passthrough = (
            "api_url",
            "commits_per_query",
            "max_in_flight",
            "page_cap",
            "timeout",
            "max_retries",
            "retry_base_delay",
            "cache_dir",
            "token",
        )
        unknown = set(github) - set(passthrough) - {"owner", "name"}
        if unknown:
            raise ConfigError(f"unknown keys in github: {', '.join(sorted(unknown))}")
        section = {
            "repo_owner": str(github["owner"]),
            "repo_name": str(github["name"]),
        }
        for key in passthrough:
            if key in github:
                section[key] = github[key]
        token = env.get("GITHUB_TOKEN")
        if token:
            section["token"] = token
        fetch = _build(FetchConfig, section, "github")

    provider_section = raw.get("provider") or {}
    if not isinstance(provider_section, dict):
        raise ConfigError("provider section must be an object")
    kind = str(provider_section.pop("kind", "mock")).lower()
    if kind not in ("mock", "http"):
        raise ConfigError(f"provider kind must be 'http' or 'mock', not {kind!r}")
    api_key = env.get("LLM_API_KEY")
    if api_key:
        provider_section["api_key"] = api_key
    provider = _build(ProviderConfig, provider_section, "provider")
    if kind == "http" and not provider.api_url:
        raise ConfigError("provider kind 'http' needs an api_url")

    budget_section = raw.get("budget") or {}
    if not isinstance(budget_section, dict):
        raise ConfigError("budget section must be an object")
    budget = _build(BudgetConfig, budget_section, "budget")

    judge = str(raw.get("judge", "judge4"))
    cfg = AppConfig(
        repo_root=str(raw.get("repo_root", ".")),
        fetch=fetch,
        provider_kind=kind,
        provider=provider,
        budget=budget,
        judge=judge,
        judge_gate=bool(raw.get("judge_gate", True)),
        max_commits=int(raw.get("max_commits", 200)),
        use_case=str(raw.get("use_case", "explain")),
    )
    return cfg


def make_provider(cfg: AppConfig, transport: Transport | None = None) -> Provider:
    if cfg.provider_kind == "mock":
        return DeterministicMockProvider()
    return HttpCompletionProvider(cfg.provider, transport=transport)
