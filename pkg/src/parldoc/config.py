"""Pipeline configuration file (JSON).

Endpoint URLs can be overridden with PARLDOC_SPARQL_ENDPOINT, PARLDOC_OCR_ENDPOINT
and PARLDOC_LABELLING_ENDPOINT.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from pathlib import Path

from .entities import DEFAULT_ENDPOINT
from .inference import InferenceConfig
from .ingest import DEFAULT_DPI, DEFAULT_RASTERIZER, MAX_DPI, MIN_DPI
from .matching import MatchConfig


class ConfigError(ValueError):
    pass


@dataclass
class PipelineConfig:
    ocr: InferenceConfig = field(default_factory=lambda: InferenceConfig("http://localhost:8000/v1/chat/completions", "dots.ocr"))
    labelling: InferenceConfig = field(default_factory=lambda: InferenceConfig(
        "http://localhost:8001/v1/chat/completions", "Qwen2.5-VL-72B-Instruct"))
    sparql_endpoint: str = DEFAULT_ENDPOINT
    cache_dir: Path = Path("cache")
    matching: MatchConfig = field(default_factory=MatchConfig)
    rasterizer: str = DEFAULT_RASTERIZER
    dpi: int = DEFAULT_DPI
    concurrency_limit: int = 4
    documents_dir: Path | None = None
    ocr_prompt: Path | None = None
    labelling_prompt: Path | None = None
    query_dir: Path | None = None
    resolve_wikidata: bool = True
    refresh_entities: bool = False

    def __post_init__(self):
        if self.concurrency_limit < 1:
            raise ConfigError("concurrency_limit must be >= 1")
        if not MIN_DPI <= self.dpi <= MAX_DPI:
            raise ConfigError(f"dpi must be in [{MIN_DPI}, {MAX_DPI}]")


def _path(value, base: Path) -> Path | None:
    if value is None:
        return None
    p = Path(value).expanduser()
    return p if p.is_absolute() else (base / p)


def config_from_dict(data: dict, base: Path = Path(".")) -> PipelineConfig:
    data = dict(data)
    inference = data.get("inference", {})
    kwargs = {}
    for stage in ("ocr", "labelling"):
        section = dict(inference.get(stage, {}))
        env = os.environ.get(f"PARLDOC_{stage.upper()}_ENDPOINT")
        if env:
            section["endpoint_url"] = env
        if section:
            default = getattr(PipelineConfig(), stage)
            merged = {**{k: getattr(default, k) for k in default.__dataclass_fields__}, **section}
            try:
                kwargs[stage] = InferenceConfig.from_dict(merged)
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"inference.{stage}: {exc}") from None
    endpoint = os.environ.get("PARLDOC_SPARQL_ENDPOINT") or data.get("sparql_endpoint")
    if endpoint:
        kwargs["sparql_endpoint"] = endpoint
    if "matching" in data:
        section = dict(data["matching"])
        for key in ("generic_patterns_file", "surname_particles_file", "role_lexicon_file"):
            if key in section:
                section[key] = _path(section[key], base)
        try:
            kwargs["matching"] = MatchConfig.from_dict(section)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"matching: {exc}") from None
    for key in ("cache_dir", "documents_dir", "ocr_prompt", "labelling_prompt", "query_dir"):
        if data.get(key) is not None:
            kwargs[key] = _path(data[key], base)
    for key in ("rasterizer", "dpi", "concurrency_limit", "resolve_wikidata", "refresh_entities"):
        if key in data:
            kwargs[key] = data[key]
    return PipelineConfig(**kwargs)


def load_config(path: str | Path | None) -> PipelineConfig:
    """Read a JSON config; relative paths are resolved against the file's directory."""
    if path is None:
        return config_from_dict({})
    path = Path(path)
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: malformed JSON: {exc}") from None
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: expected a JSON object")
    return config_from_dict(data, path.parent.resolve())
