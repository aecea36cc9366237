"""Configuration management for recovery runs."""

import os
import yaml
from pathlib import Path
from typing import Any, Dict, Mapping, Optional
from dataclasses import dataclass, field, fields

from .utils import is_valid_url

ENV_PREFIX = "CAUSALVOTE_"
LLM_CLIENTS = ("http", "scripted", "oracle")
LOG_FORMATS = ("rich", "color", "plain")

_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off", ""}


@dataclass
class Config:
    """Configuration class for recovery, retrieval and evaluation settings."""

    # Run layout
    output_dir: str = "runs/default"
    corpus_dir: str = "corpus"

    # Dataset
    dataset: str = "ASIA"
    truth_variant: str = "original"
    dataset_path: str = ""

    # Knowledge-base roster
    use_background: bool = True
    use_documents: bool = False
    use_pc: bool = False

    # Retrieval
    max_titles: int = 20
    max_documents: int = 10
    query_template: str = "{factorA} and {factorB}"
    search_endpoint: str = "https://serpapi.com/search.json"
    pubmed_endpoint: str = "https://eutils.ncbi.nlm.nih.gov/entrez/eutils"
    offline: bool = False
    fixtures_dir: str = ""

    # PC
    pc_alpha: float = 0.05
    pc_max_order: int = 3
    pc_weight: int = 1

    # LLM
    llm_client: str = "http"
    llm_endpoint: str = "https://api.openai.com/v1"
    model: str = "gpt-4o"
    temperature: float = 0.0
    max_output_tokens: int = 1024
    max_document_chars: int = 12000
    mock_script: str = ""

    # Prompt domain text per dataset; falls back to the registry entry
    domains: Dict[str, str] = field(default_factory=dict)

    # HTTP
    user_agent: str = "causal-vote/0.1"
    max_workers: int = 4
    delay_between_requests: float = 0.5
    timeout: float = 60.0
    max_retries: int = 3
    retry_delay: float = 2.0

    # Logging
    log_level: str = "INFO"
    log_file: str = ""
    log_format: str = "rich"

    @classmethod
    def from_file(cls, config_path: str) -> "Config":
        """Load configuration from a YAML file."""
        if not os.path.exists(config_path):
            raise FileNotFoundError(f"Configuration file not found: {config_path}")

        with open(config_path, 'r', encoding='utf-8') as f:
            config_data = yaml.safe_load(f)

        return cls.from_dict(config_data or {})

    @classmethod
    def from_dict(cls, config_dict: Dict[str, Any]) -> "Config":
        """Create configuration from dictionary, ignoring unknown keys."""
        valid_keys = {f.name for f in fields(cls)}
        filtered_dict = {k: v for k, v in config_dict.items() if k in valid_keys}
        return cls(**filtered_dict)

    @classmethod
    def from_env(cls, environ: Optional[Mapping[str, str]] = None) -> Dict[str, Any]:
        """Field values set through ``CAUSALVOTE_<FIELD>`` variables."""
        environ = os.environ if environ is None else environ
        values: Dict[str, Any] = {}
        for f in fields(cls):
            raw = environ.get(ENV_PREFIX + f.name.upper())
            if raw is not None:
                values[f.name] = _coerce(f.name, f.type, raw)
        return values

    @classmethod
    def load(cls, config_path: Optional[str] = None, overrides: Optional[Mapping[str, Any]] = None,
             environ: Optional[Mapping[str, str]] = None) -> "Config":
        """Merge defaults < YAML file < environment < explicit overrides.

        ``None`` values in ``overrides`` mean "not given" and are skipped.
        """
        data: Dict[str, Any] = {}
        if config_path:
            data.update(cls.from_file(config_path).to_dict())
        data.update(cls.from_env(environ))
        data.update({k: v for k, v in (overrides or {}).items() if v is not None})
        return cls.from_dict(data)

    def to_dict(self) -> Dict[str, Any]:
        """Convert configuration to dictionary."""
        return {f.name: getattr(self, f.name) for f in fields(self)}

    def to_yaml(self) -> str:
        return yaml.safe_dump(self.to_dict(), default_flow_style=False, indent=2, sort_keys=True)

    def save_to_file(self, config_path: str) -> None:
        """Save configuration to a YAML file."""
        Path(config_path).parent.mkdir(parents=True, exist_ok=True)
        with open(config_path, 'w', encoding='utf-8') as f:
            f.write(self.to_yaml())

    def validate(self) -> None:
        """Validate configuration values."""
        errors = []

        if not (self.use_background or self.use_documents or self.use_pc):
            errors.append("at least one of use_background, use_documents, use_pc must be enabled")

        if self.max_titles < 1:
            errors.append("max_titles must be at least 1")

        if self.max_documents < 1:
            errors.append("max_documents must be at least 1")

        if not 0 < self.pc_alpha < 1:
            errors.append("pc_alpha must lie strictly between 0 and 1")

        if self.pc_max_order < 0:
            errors.append("pc_max_order cannot be negative")

        if self.pc_weight < 1:
            errors.append("pc_weight must be at least 1")

        if self.temperature < 0:
            errors.append("temperature cannot be negative")

        if self.max_output_tokens < 1:
            errors.append("max_output_tokens must be at least 1")

        if self.max_workers < 1:
            errors.append("max_workers must be at least 1")

        if self.delay_between_requests < 0:
            errors.append("delay_between_requests cannot be negative")

        if self.max_retries < 0:
            errors.append("max_retries cannot be negative")

        if self.retry_delay < 0:
            errors.append("retry_delay cannot be negative")

        if self.llm_client not in LLM_CLIENTS:
            errors.append(f"llm_client must be one of: {', '.join(LLM_CLIENTS)}")

        if self.llm_client == "scripted" and not self.mock_script:
            errors.append("llm_client 'scripted' requires mock_script")

        if self.offline and not self.fixtures_dir:
            errors.append("offline mode requires fixtures_dir")

        if "{factorA}" not in self.query_template or "{factorB}" not in self.query_template:
            errors.append("query_template must contain {factorA} and {factorB}")

        for name in ("llm_endpoint", "search_endpoint", "pubmed_endpoint"):
            if not is_valid_url(getattr(self, name)):
                errors.append(f"{name} is not a valid URL: {getattr(self, name)}")

        valid_log_levels = ["DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL"]
        if self.log_level.upper() not in valid_log_levels:
            errors.append(f"log_level must be one of: {', '.join(valid_log_levels)}")

        if self.log_format not in LOG_FORMATS:
            errors.append(f"log_format must be one of: {', '.join(LOG_FORMATS)}")

        if errors:
            raise ValueError(f"Configuration validation failed: {'; '.join(errors)}")

    @property
    def run_dir(self) -> Path:
        return Path(self.output_dir)


def _coerce(name: str, annotation: Any, raw: str) -> Any:
    kind = annotation if isinstance(annotation, str) else getattr(annotation, "__name__", str(annotation))
    if "bool" in kind:
        lowered = raw.strip().lower()
        if lowered in _TRUE:
            return True
        if lowered in _FALSE:
            return False
        raise ValueError(f"{ENV_PREFIX}{name.upper()} must be a boolean, got {raw!r}")
    if kind == "int":
        return int(raw)
    if kind == "float":
        return float(raw)
    if "Dict" in kind or "dict" in kind:
        value = yaml.safe_load(raw) or {}
        if not isinstance(value, dict):
            raise ValueError(f"{ENV_PREFIX}{name.upper()} must be a mapping")
        return value
    return raw
