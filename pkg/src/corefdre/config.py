"""Run configuration shared by the CLI subcommands.

A config file is a flat JSON object; a nested ``coref`` object configures the
resolver. Unknown keys are rejected so typos fail loudly.
"""
from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from .common import fingerprint
from .coref import CorefConfig
from .errors import ConfigError
from .model import DREConfig

DATA_ROOT_ENV = "COREFDRE_DATA_ROOT"
OUT_DIRS = ("checkpoints", "reports", "graphs", "sidecars")


@dataclass
class RunConfig:
    data_root: str | None = None
    train: str | None = None
    dev: str | None = None
    test: str | None = None
    train_chains: str | None = None
    dev_chains: str | None = None
    test_chains: str | None = None
    # sidecar keyed by dialogue id, used for chain_source predicted/external
    chains: str | None = None
    out: str = "runs/default"
    # model
    recipe: str = "TUCORE"
    chain_source: str = "gold"
    encoder: str = "bilstm"
    embed_dim: int = 64
    hidden_dim: int = 64
    heads: int = 2
    gcn_layers: int = 2
    lr: float | None = None
    epochs: int = 20
    seed: int = 13
    tau: float = 0.5
    dropout: float = 0.0
    max_tokens: int = 512
    use_speaker: bool = True
    strip: list[str] = field(default_factory=list)
    embeddings_path: str | None = None
    # ablation grid
    ablate: list[list[str]] = field(default_factory=lambda: [[], ["CC"], ["MU"], ["CC", "MU"]])
    seeds: list[int] = field(default_factory=lambda: [0, 1, 2, 3, 4])
    coref: dict = field(default_factory=dict)

    def __post_init__(self):
        if isinstance(self.strip, str):
            self.strip = [k for k in self.strip.split(",") if k]
        self.strip = [k.strip().upper() for k in self.strip]
        known = {f.name for f in fields(CorefConfig)}
        bad = sorted(set(self.coref) - known)
        if bad:
            raise ConfigError(f"unknown coref config keys: {bad}")
        self.dre_config()  # validates recipe, chain_source, dims

    def resolve(self, path: str | None) -> Path | None:
        if path is None:
            return None
        p = Path(path)
        root = self.data_root or os.environ.get(DATA_ROOT_ENV)
        if not p.is_absolute() and root and not p.exists():
            return Path(root) / p
        return p

    def dre_config(self) -> DREConfig:
        return DREConfig(
            recipe=self.recipe,
            chain_source=self.chain_source,
            encoder=self.encoder,
            embed_dim=self.embed_dim,
            hidden_dim=self.hidden_dim,
            heads=self.heads,
            gcn_layers=self.gcn_layers,
            lr=self.lr,
            epochs=self.epochs,
            seed=self.seed,
            tau=self.tau,
            dropout=self.dropout,
            max_tokens=self.max_tokens,
            use_speaker=self.use_speaker,
            strip=tuple(self.strip),
            embeddings_path=self.embeddings_path,
        )

    def coref_config(self) -> CorefConfig:
        return CorefConfig(**{"seed": self.seed, **self.coref})

    def fingerprint(self) -> str:
        # output location does not change results
        d = asdict(self)
        d.pop("out")
        return fingerprint(d)

    def out_dir(self, sub: str) -> Path:
        p = Path(self.out) / sub
        p.mkdir(parents=True, exist_ok=True)
        return p


def load_config(path=None, overrides: dict | None = None) -> RunConfig:
    """Read a JSON config (optional) and apply overrides; overrides win."""
    raw = {}
    if path is not None:
        try:
            with open(path, encoding="utf-8") as fh:
                raw = json.load(fh)
        except (OSError, json.JSONDecodeError) as e:
            raise ConfigError(f"cannot read config {path}: {e}") from e
        if not isinstance(raw, dict):
            raise ConfigError(f"{path}: config must be a JSON object")
    raw.update({k: v for k, v in (overrides or {}).items() if v is not None})
    known = {f.name for f in fields(RunConfig)}
    bad = sorted(set(raw) - known)
    if bad:
        raise ConfigError(f"unknown config keys: {bad}")
    try:
        return RunConfig(**raw)
    except TypeError as e:
        raise ConfigError(str(e)) from e
