"""Flat ``key = value`` pipeline configuration.

Lines are ``key = value``; ``#`` starts a comment. Keys map one-to-one to
``PipelineConfig`` fields and values are coerced to the field's type
(comma-separated for tuples). The seed resolves as config file, then the
``HISTCODE_SEED`` environment variable, then ``--seed``.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import os
from dataclasses import dataclass, fields
from pathlib import Path

from ..errors import ConfigError

SEED_ENV = "HISTCODE_SEED"
PATH_KEYS = ("out_dir", "slides_dir", "labels", "expression", "drivers")
UNHASHED = PATH_KEYS + ("workers", "deterministic")


@dataclass
class PipelineConfig:
    out_dir: str = "histcode_out"
    slides_dir: str = ""  # empty: <out_dir>/synth/slides
    labels: str = ""
    expression: str = ""
    drivers: str = ""
    seed: int = 0
    workers: int = 1
    deterministic: bool = True

    synth_patients: int = 5
    synth_size: int = 1024
    synth_tumor_min: float = 0.3
    synth_tumor_max: float = 0.55
    synth_mpp: float = 1.0

    tile_px: int = 128
    tile_um: float = 128.0
    tile_mask_downsample: int = 8
    tile_min_tissue_px: int = 100
    tile_tissue_guard: int = 8
    tile_default_mpp: float = 0.5

    pretrain_epochs: int = 10
    pretrain_tiles_per_slide: int = 16
    pretrain_batch_size: int = 64
    pretrain_tau: float = 0.12
    pretrain_lr: float = 0.03
    pretrain_momentum: float = 0.9
    pretrain_weight_decay: float = 1e-4
    pretrain_bank_lr: float = 3.0
    pretrain_bank_size: int = 256
    pretrain_bank_fraction: float = 0.1
    pretrain_encoder: str = "small"
    pretrain_embed_dim: int = 1024
    pretrain_proj_dim: int = 128
    pretrain_input_px: int = 64
    pretrain_weights_path: str = ""

    diag_attn_dim: int = 256
    diag_lr: float = 1e-3
    diag_momentum: float = 0.9
    diag_weight_decay: float = 1e-4
    diag_max_epochs: int = 100
    diag_patience: int = 5

    de_l: int = 100
    de_strict: bool = False
    de_eps: float = 1e-6
    de_threshold: float = 1.5
    de_alphas: tuple = (1e-2, 1e-1, 1.0, 10.0, 100.0, 1e3, 1e4)
    de_default_alpha: float = 10.0

    eval_k: int = 5
    eval_fc_bin_edges: tuple = (-1.0, 0.2, 0.5, 1.0)

    heatmap_downsample: int = 8
    heatmap_gallery_n: int = 4
    heatmap_genes: tuple = ("G_SIGNAL",)

    def validate(self) -> "PipelineConfig":
        positive = [
            "workers", "synth_patients", "synth_size", "tile_px", "tile_mask_downsample", "pretrain_epochs",
            "pretrain_tiles_per_slide", "pretrain_batch_size", "pretrain_bank_size", "diag_attn_dim",
            "diag_max_epochs", "diag_patience", "de_l", "eval_k", "heatmap_downsample", "heatmap_gallery_n",
        ]
        for name in positive:
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.eval_k < 2:
            raise ConfigError("eval_k must be >= 2 for cross-validation")
        if not 0 <= self.synth_tumor_min <= self.synth_tumor_max <= 0.62:
            raise ConfigError("need 0 <= synth_tumor_min <= synth_tumor_max <= 0.62 (synthetic tissue coverage)")
        if not 0 < self.pretrain_bank_fraction <= 1:
            raise ConfigError("pretrain_bank_fraction must be in (0, 1]")
        for name in ("pretrain_tau", "pretrain_lr", "pretrain_bank_lr", "diag_lr", "de_eps", "tile_um", "synth_mpp"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive")
        if self.pretrain_encoder not in ("small", "resnet50"):
            raise ConfigError(f"pretrain_encoder must be small or resnet50, got {self.pretrain_encoder!r}")
        if list(self.eval_fc_bin_edges) != sorted(set(self.eval_fc_bin_edges)) or len(self.eval_fc_bin_edges) < 2:
            raise ConfigError("eval_fc_bin_edges must be strictly increasing")
        for name in ("slides_dir", "labels", "expression", "drivers", "pretrain_weights_path"):
            value = getattr(self, name)
            if value and not Path(value).exists():
                raise ConfigError(f"{name} points to a missing path: {value}")
        return self

    # resolved locations
    @property
    def out(self) -> Path:
        return Path(self.out_dir)

    @property
    def synthetic(self) -> bool:
        return not self.slides_dir

    @property
    def slides_path(self) -> Path:
        return Path(self.slides_dir) if self.slides_dir else self.out / "synth" / "slides"

    @property
    def labels_path(self) -> Path:
        return Path(self.labels) if self.labels else self.out / "synth" / "labels.csv"

    @property
    def expression_path(self) -> Path:
        return Path(self.expression) if self.expression else self.out / "synth" / "expression.tsv"

    @property
    def drivers_path(self) -> Path:
        return Path(self.drivers) if self.drivers else self.out / "synth" / "drivers.txt"

    @property
    def masks_path(self) -> Path:
        return self.out / "synth" / "masks"

    def hashed_values(self, prefixes=None) -> dict:
        out = {}
        for f in fields(self):
            if f.name in UNHASHED:
                continue
            if prefixes is None or f.name == "seed" or f.name.startswith(tuple(prefixes)):
                v = getattr(self, f.name)
                out[f.name] = list(v) if isinstance(v, tuple) else v
        return out

    def hash(self, prefixes=None) -> str:
        blob = json.dumps(self.hashed_values(prefixes), sort_keys=True)
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


def _coerce(field, raw: str):
    raw = raw.strip()
    kind = field.type if isinstance(field.type, str) else field.type.__name__
    try:
        if kind == "bool":
            low = raw.lower()
            if low not in ("1", "0", "true", "false", "yes", "no", "on", "off"):
                raise ValueError(raw)
            return low in ("1", "true", "yes", "on")
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
        if kind == "tuple":
            items = [s.strip() for s in raw.split(",") if s.strip()]
            default = field.default
            if default and isinstance(default[0], str):
                return tuple(items)
            return tuple(float(s) for s in items)
        return raw
    except ValueError as exc:
        raise ConfigError(f"{field.name}: cannot parse {raw!r} as {kind}") from exc


def parse_config_text(text: str, source: str = "<config>") -> dict:
    known = {f.name: f for f in fields(PipelineConfig)}
    values = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected key = value")
        key, raw = (s.strip() for s in line.split("=", 1))
        if key not in known:
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
        values[key] = _coerce(known[key], raw)
    return values


def load_config(path=None, seed=None, overrides: dict | None = None, env=None) -> PipelineConfig:
    env = os.environ if env is None else env
    values = {}
    if path is not None:
        p = Path(path)
        if not p.is_file():
            raise ConfigError(f"config file not found: {path}")
        values.update(parse_config_text(p.read_text(), str(p)))
    if env.get(SEED_ENV):
        try:
            values["seed"] = int(env[SEED_ENV])
        except ValueError as exc:
            raise ConfigError(f"{SEED_ENV} must be an integer") from exc
    if seed is not None:
        values["seed"] = int(seed)
    known = {f.name: f for f in fields(PipelineConfig)}
    for key, value in (overrides or {}).items():
        if key not in known:
            raise ConfigError(f"unknown key {key!r}")
        values[key] = _coerce(known[key], value) if isinstance(value, str) else value
    return PipelineConfig(**values).validate()


def dump_config(config: PipelineConfig) -> str:
    lines = []
    for f in fields(config):
        v = getattr(config, f.name)
        if isinstance(v, tuple):
            v = ",".join(str(x) for x in v)
        elif isinstance(v, bool):
            v = "true" if v else "false"
        lines.append(f"{f.name} = {v}")
    return "\n".join(lines) + "\n"


def replace(config: PipelineConfig, **changes) -> PipelineConfig:
    return dataclasses.replace(config, **changes).validate()
