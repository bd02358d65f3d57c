"""Training configuration, per-dataset presets and JSON round-tripping."""

from __future__ import annotations

import dataclasses
import hashlib
import json
import os
from dataclasses import dataclass, fields
from pathlib import Path

from .errors import DataError

# head, alpha, beta, gamma tuned per dataset
PRESETS: dict[str, dict] = {
    "baby": {"heads": 4, "alpha": 0.1, "beta": 0.3, "gamma": 1e-6},
    "sports": {"heads": 4, "alpha": 0.6, "beta": 0.3, "gamma": 1e-6},
    "clothing": {"heads": 4, "alpha": 0.2, "beta": 0.4, "gamma": 1e-6},
}

ABLATIONS = {
    "w/GT": "no_global",
    "w/MCL": "no_mcl",
    "w/v": "no_visual",
    "w/t": "no_textual",
    "w/h": "no_hypergraph",
}


@dataclass(frozen=True)
class TrainConfig:
    embedding_dim: int = 64
    cg_layers: int = 2
    mg_layers: int = 1
    hyperedges: int = 16
    hyper_layers: int = 2
    heads: int = 4
    alpha: float = 0.1
    beta: float = 0.3
    gamma: float = 1e-6
    reg_weight: float = 1e-4
    ssl_weight: float = 1e-3
    temperature: float = 0.2
    gumbel_temperature: float = 0.2
    dropout: float = 0.2
    lr: float = 1e-3
    batch_size: int = 2048
    epochs: int = 1000
    patience: int = 20
    seed: int = 0
    # triples drawn per epoch = ratio * train interactions
    samples_per_interaction: float = 1.0
    val_cutoff: int = 20
    attention: str = "masked"
    in_batch_negatives: bool = False
    bpr_mode: str = "difference"
    modal_in_collab: bool = True
    mask_recent_k: int = 2
    mask_keep_last: int = 5
    no_global: bool = False
    no_mcl: bool = False
    no_visual: bool = False
    no_textual: bool = False
    no_hypergraph: bool = False

    def __post_init__(self):
        positive = ("embedding_dim", "heads", "hyperedges", "batch_size", "val_cutoff")
        for name in positive:
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        for name in ("cg_layers", "mg_layers", "hyper_layers", "patience", "epochs"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        if self.embedding_dim % self.heads:
            raise ValueError("embedding_dim must be divisible by heads")
        if self.temperature <= 0 or self.gumbel_temperature <= 0 or self.lr <= 0:
            raise ValueError("temperatures and lr must be positive")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must lie in [0, 1)")
        if not (0.0 <= self.alpha <= 1.0 and 0.0 <= self.beta <= 1.0):
            raise ValueError("alpha and beta must lie in [0, 1]")
        if self.attention not in ("masked", "dense"):
            raise ValueError("attention must be 'masked' or 'dense'")
        if self.bpr_mode not in ("difference", "sum"):
            raise ValueError("bpr_mode must be 'difference' or 'sum'")

    # -- ablations ---------------------------------------------------------

    def with_ablation(self, *tags: str) -> "TrainConfig":
        flags = {}
        for tag in tags:
            if tag in ("full", ""):
                continue
            if tag not in ABLATIONS:
                raise ValueError(f"unknown ablation {tag!r}; choose from {sorted(ABLATIONS)}")
            flags[ABLATIONS[tag]] = True
        return dataclasses.replace(self, **flags)

    @property
    def ablation_tag(self) -> str:
        tags = [tag for tag, flag in ABLATIONS.items() if getattr(self, flag)]
        return "+".join(tags) if tags else "full"

    @property
    def effective_gamma(self) -> float:
        return 0.0 if self.no_mcl else self.gamma

    @property
    def effective_beta(self) -> float:
        return 0.0 if self.no_hypergraph else self.beta

    def modalities(self, available) -> list[str]:
        drop = set()
        if self.no_visual:
            drop.add("visual")
        if self.no_textual:
            drop.add("textual")
        return [m for m in sorted(available) if m not in drop]

    # -- serialization --------------------------------------------------------

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "TrainConfig":
        data = dict(data)
        preset = data.pop("preset", None)
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise DataError(f"unknown config keys: {sorted(unknown)}")
        base = dict(PRESETS[preset.lower()]) if preset else {}
        base.update(data)
        return cls(**base)

    @classmethod
    def from_preset(cls, name: str, **overrides) -> "TrainConfig":
        key = name.lower()
        if key not in PRESETS:
            raise KeyError(f"no preset named {name!r}; choose from {sorted(PRESETS)}")
        return cls(**{**PRESETS[key], **overrides})

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    def digest(self) -> str:
        return hashlib.sha256(self.to_json().encode()).hexdigest()


def _coerce(name: str, raw: str):
    ftype = {f.name: f.type for f in fields(TrainConfig)}[name]
    if ftype in ("bool", bool):
        low = raw.lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"{name}: expected a boolean, got {raw!r}")
    if ftype in ("int", int):
        return int(raw)
    if ftype in ("float", float):
        return float(raw)
    return raw


def load_config(path=None, overrides: dict | None = None, env=None) -> TrainConfig:
    """Config file, then ``key=value`` overrides, then ``SRGF_SEED``."""
    env = os.environ if env is None else env
    data: dict = {}
    if path is not None:
        p = Path(path)
        if not p.exists():
            raise DataError(f"config file not found: {p}")
        try:
            data = json.loads(p.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise DataError(f"{p}: {exc}") from None
    known = {f.name for f in fields(TrainConfig)}
    for key, raw in (overrides or {}).items():
        if key == "preset":
            data["preset"] = raw
            continue
        if key not in known:
            raise KeyError(key)
        data[key] = _coerce(key, raw) if isinstance(raw, str) else raw
    if env.get("SRGF_SEED"):
        data["seed"] = int(env["SRGF_SEED"])
    return TrainConfig.from_dict(data)
