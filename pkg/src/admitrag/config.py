"""Service and CLI configuration: TOML file keys mirroring env vars, env wins."""

from __future__ import annotations

import os
import sys
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .errors import AdmitragError

# env var -> config field
ENV_KEYS = {
    "LISTEN_ADDR": "listen_addr",
    "STORAGE_ROOT": "storage_root",
    "API_TOKEN": "api_token",
    "EMBED_ENDPOINT": "embed_endpoint",
    "EMBED_API_KEY": "embed_api_key",
    "GEN_ENDPOINT_BASE": "gen_endpoint_base",
    "GEN_ENDPOINT_FINETUNED": "gen_endpoint_finetuned",
    "GEN_API_KEY": "gen_api_key",
}


@dataclass
class AppConfig:
    listen_addr: str = "127.0.0.1:8080"
    storage_root: str = "./admitrag-data"
    api_token: str = "change-me"
    active_config: str = "finetuned_rag"

    embedding_provider: str = "reference"  # reference | remote
    embed_endpoint: str = ""
    embed_api_key: str = ""
    embed_dim: int = 256

    generator: str = "remote"  # remote | scripted
    gen_endpoint_base: str = ""
    gen_endpoint_finetuned: str = ""
    gen_api_key: str = ""
    script_path: str = ""
    script_default: str = ""
    base_model_id: str = "base"
    finetuned_model_id: str = "finetuned"
    temperature: float = 0.2
    max_tokens: int = 512

    chunk_size: int = 512
    overlap: int = 64
    top_k: int = 3
    excerpt_chars: int = 240
    kappa_raters: list[str] = field(default_factory=lambda: ["rater_a", "rater_b"])

    @property
    def host(self) -> str:
        return self.listen_addr.rsplit(":", 1)[0]

    @property
    def port(self) -> int:
        return int(self.listen_addr.rsplit(":", 1)[1])


def load_config(path: str | Path | None = None, env: dict[str, str] | None = None) -> AppConfig:
    """Build the config from defaults, then the TOML file, then env overrides."""
    env = os.environ if env is None else env
    config = AppConfig()
    if path is not None:
        try:
            data = tomllib.loads(Path(path).read_text(encoding="utf-8"))
        except (OSError, tomllib.TOMLDecodeError) as exc:
            raise AdmitragError(f"cannot load config {path}: {exc}") from exc
        known = {f.name: f.type for f in fields(AppConfig)}
        unknown = set(data) - set(known)
        if unknown:
            raise AdmitragError(f"unknown config keys: {sorted(unknown)}")
        config = replace(config, **data)
    overrides = {
        field_name: env[env_key] for env_key, field_name in ENV_KEYS.items() if env_key in env and env[env_key]
    }
    if overrides:
        config = replace(config, **overrides)
    return config
