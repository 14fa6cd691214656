"""Configuration: backend profile, portfolio location, bind address.

Sources, lowest to highest precedence: built-in defaults, a JSON config
file, environment variables, explicit CLI flags.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field, replace
from pathlib import Path

from .gateway import BackendProfile

ENV_CONFIG = "STORYLOOM_CONFIG"
ENV_PORTFOLIO = "STORYLOOM_PORTFOLIO"
ENV_BACKEND = "STORYLOOM_BACKEND"
ENV_ENDPOINT = "STORYLOOM_ENDPOINT"
ENV_SEED = "STORYLOOM_SEED"


@dataclass(frozen=True)
class AppConfig:
    profile: BackendProfile = field(default_factory=BackendProfile)
    portfolio_dir: Path = Path("portfolio")
    host: str = "127.0.0.1"
    port: int = 8777
    retrieval_k: int = 3
    ui_dir: Path | None = None  # optional built frontend to serve at /ui


def _profile_from_dict(data: dict) -> BackendProfile:
    script = data.get("mock_script", {})
    return BackendProfile(
        kind=data.get("kind", "mock"),
        endpoint=data.get("endpoint", ""),
        generation_model=data.get("generation_model", "gpt-4o"),
        verification_model=data.get("verification_model", "gpt-3.5-turbo"),
        embedding_model=data.get("embedding_model", "text-embedding-ada-002"),
        context_limit=int(data.get("context_limit", 16000)),
        timeout_s=float(data.get("timeout_s", 60.0)),
        max_retries=int(data.get("max_retries", 3)),
        backoff_base_s=float(data.get("backoff_base_s", 0.5)),
        max_in_flight=int(data.get("max_in_flight", 8)),
        seed=int(data.get("seed", 0)),
        mock_script=tuple((mode, tuple(replies)) for mode, replies in script.items()),
    )


def load_config(
    path: str | Path | None = None,
    env: dict[str, str] | None = None,
) -> AppConfig:
    env = dict(os.environ if env is None else env)
    config = AppConfig()

    config_path = path or env.get(ENV_CONFIG)
    if config_path:
        data = json.loads(Path(config_path).read_text("utf-8"))
        config = AppConfig(
            profile=_profile_from_dict(data.get("backend", {})),
            portfolio_dir=Path(data.get("portfolio_dir", "portfolio")),
            host=data.get("host", "127.0.0.1"),
            port=int(data.get("port", 8777)),
            retrieval_k=int(data.get("retrieval_k", 3)),
            ui_dir=Path(data["ui_dir"]) if data.get("ui_dir") else None,
        )

    profile = config.profile
    if ENV_BACKEND in env:
        profile = replace(profile, kind=env[ENV_BACKEND])
    if ENV_ENDPOINT in env:
        profile = replace(profile, endpoint=env[ENV_ENDPOINT])
    if ENV_SEED in env:
        profile = replace(profile, seed=int(env[ENV_SEED]))
    if ENV_PORTFOLIO in env:
        config = replace(config, portfolio_dir=Path(env[ENV_PORTFOLIO]))
    return replace(config, profile=profile)
