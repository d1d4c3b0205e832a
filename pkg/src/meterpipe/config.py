"""Service and CLI configuration loaded from a JSON document.

Secrets never live here: cloud backends name an environment variable and the
token table maps opaque bearer tokens to roles.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

from .ocr import BackendConfig


@dataclass(frozen=True)
class TokenInfo:
    role: str  # "admin" | "customer"
    customer_id: str | None = None

    def __post_init__(self):
        if self.role not in ("admin", "customer"):
            raise ValueError(f"unknown role {self.role!r}")
        if self.role == "customer" and not self.customer_id:
            raise ValueError("customer tokens need a customer_id")


@dataclass
class ServiceConfig:
    host: str = "127.0.0.1"
    port: int = 8600
    backends: dict[str, BackendConfig] = field(
        default_factory=lambda: {"sevenseg": BackendConfig("sevenseg")}
    )
    scan_backend: str = "sevenseg"
    tokens: dict[str, TokenInfo] = field(default_factory=dict)
    batch_size: int = 10
    flush_timeout: float = 2.0
    time_mode: str = "logical"  # "logical" flushes per confirm; "real" uses a timer
    commit_timeout: float = 5.0
    data_dir: Path | None = None
    static_dir: Path | None = None
    allow_url_ingest: bool = False
    ledger_seed: int = 0

    def __post_init__(self):
        if self.time_mode not in ("logical", "real"):
            raise ValueError(f"unknown time_mode {self.time_mode!r}")
        if self.scan_backend not in self.backends:
            raise ValueError(f"scan_backend {self.scan_backend!r} is not a configured backend")


def _backend_from(raw: dict) -> BackendConfig:
    return BackendConfig(
        kind=raw["kind"],
        endpoint=raw.get("endpoint"),
        credential_env=raw.get("credential_env"),
        fixture_path=raw.get("fixture_path"),
        threshold=float(raw.get("threshold", 0.6)),
        max_inflight=int(raw.get("max_inflight", 4)),
    )


def load_config(path: str | Path) -> ServiceConfig:
    path = Path(path)
    raw = json.loads(path.read_text(encoding="utf-8"))
    backends = {
        name: _backend_from(spec) for name, spec in raw.get("backends", {}).items()
    } or {"sevenseg": BackendConfig("sevenseg")}
    tokens = {
        token: TokenInfo(role=info["role"], customer_id=info.get("customer_id"))
        for token, info in raw.get("tokens", {}).items()
    }

    def resolve(key: str) -> Path | None:
        value = raw.get(key)
        if value is None:
            return None
        p = Path(value)
        return p if p.is_absolute() else path.parent / p

    return ServiceConfig(
        host=raw.get("host", "127.0.0.1"),
        port=int(raw.get("port", 8600)),
        backends=backends,
        scan_backend=raw.get("scan_backend", next(iter(backends))),
        tokens=tokens,
        batch_size=int(raw.get("batch_size", 10)),
        flush_timeout=float(raw.get("flush_timeout", 2.0)),
        time_mode=raw.get("time_mode", "logical"),
        commit_timeout=float(raw.get("commit_timeout", 5.0)),
        data_dir=resolve("data_dir"),
        static_dir=resolve("static_dir"),
        allow_url_ingest=bool(raw.get("allow_url_ingest", False)),
        ledger_seed=int(raw.get("ledger_seed", 0)),
    )
