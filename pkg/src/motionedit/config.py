"""Run configuration: defaults, INI loading, hashing and seed substreams."""

from __future__ import annotations

import configparser
import hashlib
import json
import zlib
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Optional

import numpy as np

from .diffusion import GuidanceConfig
from .errors import ConfigurationError
from .similarity import SimilarityConfig
from .synth import EDIT_KINDS


@dataclass(frozen=True)
class DataConfig:
    n_triplets: int = 500
    frames: int = 32
    layout: str = "small"
    kinds: tuple[str, ...] = EDIT_KINDS
    magnitude: float = 1.0
    ratios: tuple[float, float, float] = (0.8, 0.1, 0.1)


@dataclass(frozen=True)
class TextConfig:
    encoder: str = "stub"
    embed_dim: int = 64
    max_tokens: int = 16
    sidecar: str = ""


@dataclass(frozen=True)
class ModelSection:
    latent_dim: int = 512
    cond_layers: int = 4
    diff_layers: int = 8
    heads: int = 8
    max_frames: int = 300
    dropout: float = 0.1
    ff_mult: int = 4


@dataclass(frozen=True)
class DiffusionSection:
    T: int = 300
    s_text: float = 2.0
    s_motion: float = 2.0
    p_drop_text: float = 0.1
    p_drop_both: float = 0.1

    def guidance(self) -> GuidanceConfig:
        return GuidanceConfig(self.s_text, self.s_motion, self.p_drop_text, self.p_drop_both)


@dataclass(frozen=True)
class TrainSection:
    steps: int = 1000
    batch_size: int = 128
    lr: float = 1e-4
    weight_decay: float = 1e-2
    grad_clip: float = 1.0
    aux_weight: float = 1.0
    eval_batch_size: int = 32


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    data: DataConfig = field(default_factory=DataConfig)
    similarity: SimilarityConfig = field(default_factory=SimilarityConfig)
    text: TextConfig = field(default_factory=TextConfig)
    model: ModelSection = field(default_factory=ModelSection)
    diffusion: DiffusionSection = field(default_factory=DiffusionSection)
    train: TrainSection = field(default_factory=TrainSection)

    def to_dict(self) -> dict:
        return json.loads(json.dumps(asdict(self)))

    def hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    def write(self, path: Path) -> None:
        doc = {"config": self.to_dict(), "config_hash": self.hash()}
        Path(path).write_text(json.dumps(doc, sort_keys=True, indent=2) + "\n", encoding="utf-8")

    def override(self, section: str, **values) -> "RunConfig":
        values = {k: v for k, v in values.items() if v is not None}
        if not values:
            return self
        return replace(self, **{section: replace(getattr(self, section), **values)})


_SECTIONS = {"data": DataConfig, "similarity": SimilarityConfig, "text": TextConfig,
             "model": ModelSection, "diffusion": DiffusionSection, "train": TrainSection}


def _coerce(raw: str, default: Any, key: str):
    try:
        if isinstance(default, bool):
            return raw.strip().lower() in ("1", "true", "yes", "on")
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        if isinstance(default, tuple):
            items = [s.strip() for s in raw.split(",") if s.strip()]
            if default and isinstance(default[0], float):
                return tuple(float(s) for s in items)
            return tuple(items)
        return raw.strip()
    except ValueError:
        raise ConfigurationError(f"bad value for {key}: {raw!r}") from None


def load_config(path: Optional[Path]) -> RunConfig:
    """Read an INI-style key-value file; unspecified keys keep their defaults."""
    cfg = RunConfig()
    if path is None:
        return cfg
    parser = configparser.ConfigParser()
    parser.optionxform = str
    try:
        with open(path, encoding="utf-8") as fh:
            parser.read_file(fh)
    except configparser.Error as exc:
        raise ConfigurationError(f"cannot parse config {path}: {exc}") from None
    for section in parser.sections():
        if section == "run":
            for key, raw in parser.items(section):
                if key != "seed":
                    raise ConfigurationError(f"unknown key [run] {key}")
                cfg = replace(cfg, seed=_coerce(raw, 0, "run.seed"))
            continue
        if section not in _SECTIONS:
            raise ConfigurationError(f"unknown config section [{section}]")
        current = getattr(cfg, section)
        known = {f.name: getattr(current, f.name) for f in fields(current)}
        updates = {}
        for key, raw in parser.items(section):
            if key not in known:
                raise ConfigurationError(f"unknown key [{section}] {key}")
            updates[key] = _coerce(raw, known[key], f"{section}.{key}")
        try:
            cfg = replace(cfg, **{section: replace(current, **updates)})
        except (ValueError, TypeError) as exc:
            raise ConfigurationError(f"invalid [{section}] settings: {exc}") from None
    return cfg


def substream(seed: int, name: str) -> int:
    """Independent 32-bit seed for a named consumer of the global seed."""
    seq = np.random.SeedSequence([int(seed), zlib.crc32(name.encode())])
    return int(seq.generate_state(1)[0])
