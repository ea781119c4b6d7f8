"""Flat `key = value` configuration with a fixed schema.

Unknown keys, duplicates, and type mismatches are rejected with the line
number; anything unset falls back to the shipped default. The canonical
rendering of a config (sorted keys, repr'd values) is hashed into every
report record so results are traceable to their settings.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

__all__ = ["SCHEMA", "Config", "parse_config", "default_config", "canonical_text", "config_hash"]

# key -> (type, default)
SCHEMA = {
    "seed": (int, 0),
    "data.image_size": (int, 64),
    "data.superclasses": (int, 2),
    "data.fine_per_super": (int, 4),
    "data.parts_per_class": (int, 2),
    "data.part_frac": (float, 0.18),
    "data.clutter": (int, 14),
    "data.train_per_class": (int, 40),
    "data.val_per_class": (int, 15),
    "data.test_per_class": (int, 15),
    "data.background_images": (int, 80),
    "proposal.scale_k": (float, 60.0),
    "proposal.sigma": (float, 0.8),
    "proposal.min_size": (int, 10),
    "filter.threshold": (float, 0.9),
    "filter.max_count": (int, 40),
    "filternet.epochs": (int, 6),
    "filternet.lr": (float, 0.05),
    "filternet.batch": (int, 32),
    "domainnet.epochs": (int, 6),
    "domainnet.lr": (float, 0.03),
    "domainnet.batch": (int, 32),
    "domainnet.max_patches_per_image": (int, 10),
    "baseline.epochs": (int, 8),
    "baseline.lr": (float, 0.03),
    "baseline.batch": (int, 32),
    "baseline.crops_per_image": (int, 2),
    "parts.k": (int, 3),
    "svm.C": (float, 1.0),
    "svm.epochs": (int, 200),
}


@dataclass(frozen=True)
class Config:
    values: tuple  # sorted (key, value) pairs; immutable and hashable

    def __getitem__(self, key: str):
        for k, v in self.values:
            if k == key:
                return v
        raise KeyError(key)

    def as_dict(self) -> dict:
        return dict(self.values)

    def override(self, **updates) -> "Config":
        d = self.as_dict()
        for key, value in updates.items():
            if key not in d:
                raise KeyError(key)
            d[key] = value
        return Config(tuple(sorted(d.items())))


def default_config() -> Config:
    return Config(tuple(sorted((k, v) for k, (_, v) in SCHEMA.items())))


def _parse_value(raw: str, typ: type, key: str, lineno: int):
    try:
        if typ is bool:
            if raw.lower() in ("true", "false"):
                return raw.lower() == "true"
            raise ValueError
        if typ is int:
            return int(raw)
        if typ is float:
            return float(raw)
        return raw
    except ValueError:
        raise ValueError(
            f"line {lineno}: expected {typ.__name__} for {key!r}, got {raw!r}"
        ) from None


def parse_config(text: str, schema: dict = SCHEMA) -> Config:
    seen = {}
    for lineno, raw_line in enumerate(text.splitlines(), start=1):
        line = raw_line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected 'key = value', got {raw_line.strip()!r}")
        key, _, raw = line.partition("=")
        key = key.strip()
        raw = raw.strip()
        if key not in schema:
            raise ValueError(f"line {lineno}: unknown key {key!r}")
        if key in seen:
            raise ValueError(f"line {lineno}: duplicate key {key!r}")
        seen[key] = _parse_value(raw, schema[key][0], key, lineno)
    merged = {k: seen.get(k, default) for k, (_, default) in schema.items()}
    return Config(tuple(sorted(merged.items())))


def canonical_text(cfg: Config) -> str:
    return "\n".join(f"{k} = {v!r}" for k, v in cfg.values) + "\n"


def config_hash(cfg: Config) -> str:
    return hashlib.sha256(canonical_text(cfg).encode()).hexdigest()[:16]
