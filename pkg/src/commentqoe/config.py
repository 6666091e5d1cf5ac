"""Pipeline configuration file (YAML).

Relative paths are resolved against the directory holding the config file.
Remote credentials never live here; they come from environment variables
(see README).
"""

from __future__ import annotations

from dataclasses import dataclass
from datetime import datetime, timedelta
from pathlib import Path

import yaml

from commentqoe.aggregate import DEFAULT_THRESHOLD
from commentqoe.filtering import FilterThresholds
from commentqoe.scoring import BackendConfig
from commentqoe.simulate import DEFAULT_BASE_TIME, OutageSpec, SimulationConfig, parse_timestamp


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class EmbeddingSettings:
    provider: str = "stub"  # stub | remote | sentence-transformers
    dim: int = 384
    model: str = "all-MiniLM-L6-v2"


@dataclass(frozen=True)
class ScoringSettings:
    backend: str = "stub"  # stub | remote
    backend_config: BackendConfig = BackendConfig()
    prompt_template: Path | None = None
    rules: Path | None = None
    model: str | None = None


@dataclass(frozen=True)
class PipelineConfig:
    input: Path | None = None
    output_dir: Path = Path("qoe_out")
    simulation: SimulationConfig = SimulationConfig()
    window: timedelta = timedelta(minutes=5)
    threshold: float = DEFAULT_THRESHOLD
    min_run: int = 1
    thresholds: FilterThresholds = FilterThresholds()
    chunk_size: int = 256
    workers: int = 1
    normalization: Path | None = None
    lexicon: Path | None = None
    anchors: Path | None = None
    embedding: EmbeddingSettings = EmbeddingSettings()
    scoring: ScoringSettings = ScoringSettings()
    outage: OutageSpec | None = None
    objective: Path | None = None


_TOP_KEYS = {
    "input", "output_dir", "seed", "isps", "base_time", "step_seconds", "window_minutes",
    "threshold", "min_run", "filter", "normalization", "lexicon", "anchors", "embedding",
    "scoring", "outage", "objective",
}


def _path(value, base: Path) -> Path | None:
    if value is None:
        return None
    p = Path(value)
    return p if p.is_absolute() else base / p


def _time(value) -> datetime:
    if isinstance(value, datetime):
        return value
    return parse_timestamp(str(value))


def parse_config(raw: dict, base: Path = Path(".")) -> PipelineConfig:
    unknown = set(raw) - _TOP_KEYS
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    try:
        sim = SimulationConfig(
            isps=tuple(raw.get("isps", SimulationConfig.isps)),
            seed=int(raw.get("seed", 0)),
            base_time=_time(raw.get("base_time", DEFAULT_BASE_TIME)),
            step=timedelta(seconds=float(raw.get("step_seconds", 3))),
        )
        flt = raw.get("filter") or {}
        thresholds = FilterThresholds(
            min_words=int(flt.get("min_words", 5)),
            short_text_threshold=float(flt.get("short_text_threshold", 0.40)),
            long_text_threshold=float(flt.get("long_text_threshold", 0.28)),
        )
        emb = raw.get("embedding") or {}
        embedding = EmbeddingSettings(
            provider=str(emb.get("provider", "stub")),
            dim=int(emb.get("dim", 384)),
            model=str(emb.get("model", "all-MiniLM-L6-v2")),
        )
        sc = raw.get("scoring") or {}
        scoring = ScoringSettings(
            backend=str(sc.get("backend", "stub")),
            backend_config=BackendConfig(
                deterministic=bool(sc.get("deterministic", True)),
                pacing_seconds=float(sc.get("pacing_seconds", 1.0)),
                max_retries=int(sc.get("max_retries", 3)),
            ),
            prompt_template=_path(sc.get("prompt_template"), base),
            rules=_path(sc.get("rules"), base),
            model=sc.get("model"),
        )
        outage = None
        if raw.get("outage"):
            o = raw["outage"]
            outage = OutageSpec(
                target_isp=str(o["isp"]),
                start=_time(o["start"]),
                end=_time(o["end"]),
                forced_mos=int(o.get("forced_mos", 1)),
            )
            if outage.target_isp not in sim.isps:
                raise ConfigError(f"outage ISP {outage.target_isp!r} is not one of {sim.isps}")
        cfg = PipelineConfig(
            input=_path(raw.get("input"), base),
            output_dir=_path(raw.get("output_dir", "qoe_out"), base),
            simulation=sim,
            window=timedelta(minutes=float(raw.get("window_minutes", 5))),
            threshold=float(raw.get("threshold", DEFAULT_THRESHOLD)),
            min_run=int(raw.get("min_run", 1)),
            thresholds=thresholds,
            chunk_size=int(flt.get("chunk_size", 256)),
            workers=int(flt.get("workers", 1)),
            normalization=_path(raw.get("normalization"), base),
            lexicon=_path(raw.get("lexicon"), base),
            anchors=_path(raw.get("anchors"), base),
            embedding=embedding,
            scoring=scoring,
            outage=outage,
            objective=_path(raw.get("objective"), base),
        )
    except ConfigError:
        raise
    except (KeyError, TypeError, ValueError) as err:
        raise ConfigError(f"invalid configuration: {err}") from err
    if embedding.provider not in ("stub", "remote", "sentence-transformers"):
        raise ConfigError(f"unknown embedding provider {embedding.provider!r}")
    if scoring.backend not in ("stub", "remote"):
        raise ConfigError(f"unknown scoring backend {scoring.backend!r}")
    if cfg.window <= timedelta(0):
        raise ConfigError("window_minutes must be positive")
    return cfg


def load_config(path: str | Path) -> PipelineConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    with open(path, encoding="utf-8") as fh:
        raw = yaml.safe_load(fh) or {}
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    return parse_config(raw, path.parent)
