"""Run configuration: single JSON file plus flag overrides.

Precedence is flags > file > defaults. The output directory can also be
overridden with the ALARMSIFT_OUTPUT_DIR environment variable.
"""
from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass, replace
from pathlib import Path

from .errors import ConfigError

OUTPUT_DIR_ENV = "ALARMSIFT_OUTPUT_DIR"

DEFAULT_BANDS = (0.01, 0.25, 0.75, 0.99)


@dataclass(frozen=True)
class CaptureSpec:
    path: Path
    truth: str = "unknown"


@dataclass(frozen=True)
class RunConfig:
    output_dir: Path = Path("out")
    corpus: Path | None = None
    captures: tuple[CaptureSpec, ...] = ()
    server_ports: frozenset[int] = frozenset()
    flow_timeout: float = 120.0
    components: int = 5
    percentile: float = 0.85
    external_scores: Path | None = None
    external_threshold: float | None = None
    clusters: int = 2
    window: int = 3
    band_boundaries: tuple[float, float, float, float] = DEFAULT_BANDS
    train_fraction: float = 0.6
    validation_fraction: float = 0.25
    runs: int = 5
    seed: int = 7
    alignment_budget: int = 1_000_000

    def validate(self) -> "RunConfig":
        if self.flow_timeout <= 0:
            raise ConfigError("flow timeout must be > 0")
        if not 0 < self.percentile <= 1:
            raise ConfigError("detector percentile must be in (0, 1]")
        if self.components < 1:
            raise ConfigError("detector component count must be >= 1")
        if self.clusters < 1 or self.window < 1:
            raise ConfigError("extraction clusters and window must be >= 1")
        if self.runs < 1:
            raise ConfigError("run count must be >= 1")
        fractions = (self.train_fraction, self.validation_fraction)
        if any(f <= 0 for f in fractions) or sum(fractions) > 1:
            raise ConfigError(
                f"split fractions must be positive and sum to at most 1, got {fractions}"
            )
        if self.external_scores is not None and self.external_threshold is None:
            raise ConfigError("external scores require an external threshold")
        if len(self.band_boundaries) != 4 or list(self.band_boundaries) != sorted(
            set(self.band_boundaries)
        ) or any(not 0 < b < 1 for b in self.band_boundaries):
            raise ConfigError(f"band boundaries must be 4 increasing values in (0,1)")
        return self


_FILE_KEYS = {
    "output_dir", "corpus", "captures", "server_ports", "flow_timeout",
    "components", "percentile", "external_scores", "external_threshold",
    "clusters", "window", "band_boundaries", "train_fraction",
    "validation_fraction", "runs", "seed", "alignment_budget",
}


def load_config(path: str | Path | None = None, overrides: dict | None = None) -> RunConfig:
    """Builds a RunConfig from an optional JSON file and flag overrides."""
    values: dict = {}
    if path is not None:
        try:
            payload = json.loads(Path(path).read_text())
        except FileNotFoundError as exc:
            raise ConfigError(f"config file not found: {path}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file is not valid JSON: {exc}") from exc
        unknown = set(payload) - _FILE_KEYS
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        values.update(payload)
    if overrides:
        values.update({k: v for k, v in overrides.items() if v is not None})

    cfg = RunConfig()
    if "output_dir" in values:
        cfg = replace(cfg, output_dir=Path(values["output_dir"]))
    if os.environ.get(OUTPUT_DIR_ENV):
        cfg = replace(cfg, output_dir=Path(os.environ[OUTPUT_DIR_ENV]))
    if "corpus" in values and values["corpus"] is not None:
        cfg = replace(cfg, corpus=Path(values["corpus"]))
    if "captures" in values:
        specs = []
        for item in values["captures"]:
            if isinstance(item, str):
                specs.append(CaptureSpec(path=Path(item)))
            else:
                specs.append(CaptureSpec(path=Path(item["path"]), truth=item.get("truth", "unknown")))
        cfg = replace(cfg, captures=tuple(specs))
    if "server_ports" in values:
        cfg = replace(cfg, server_ports=frozenset(int(p) for p in values["server_ports"]))
    if "external_scores" in values and values["external_scores"] is not None:
        cfg = replace(cfg, external_scores=Path(values["external_scores"]))
    for key, cast in (
        ("flow_timeout", float), ("components", int), ("percentile", float),
        ("external_threshold", float), ("clusters", int), ("window", int),
        ("train_fraction", float), ("validation_fraction", float),
        ("runs", int), ("seed", int), ("alignment_budget", int),
    ):
        if key in values and values[key] is not None:
            cfg = replace(cfg, **{key: cast(values[key])})
    if "band_boundaries" in values:
        cfg = replace(cfg, band_boundaries=tuple(float(b) for b in values["band_boundaries"]))
    return cfg.validate()


def semantic_echo(cfg: RunConfig) -> dict:
    """The parameters that determine results; used in persisted manifests.

    Paths are deliberately excluded so reruns into different directories
    stay byte-identical.
    """
    return {
        "flow_timeout": cfg.flow_timeout,
        "components": cfg.components,
        "percentile": cfg.percentile,
        "clusters": cfg.clusters,
        "window": cfg.window,
        "band_boundaries": list(cfg.band_boundaries),
        "train_fraction": cfg.train_fraction,
        "validation_fraction": cfg.validation_fraction,
        "runs": cfg.runs,
        "seed": cfg.seed,
        "external": cfg.external_scores is not None,
        "external_threshold": cfg.external_threshold,
    }


def derive_seed(master: int, name: str) -> int:
    """Stable named sub-seed; all stage randomness flows from the master."""
    digest = hashlib.sha256(f"{master}:{name}".encode()).digest()
    return int.from_bytes(digest[:8], "big")
