"""Prompt templates for the association and orientation chains.

Templates are plain-text files under ``prompts/``. Rendering substitutes the
known placeholders in a single pass and leaves every other character alone,
so braces that are not placeholders survive untouched.
"""

import re
import logging
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path
from typing import FrozenSet, List, Mapping, Optional, Sequence, Union

logger = logging.getLogger(__name__)

PROMPTS_DIR = Path(__file__).parent / "data" / "prompts"

PLACEHOLDERS = frozenset({
    "domain",
    "factors",
    "factorA",
    "factorB",
    "document",
    "association_context",
    "association_type_context",
    "causal_direction_context",
})

_PLACEHOLDER_RE = re.compile(r"\{(" + "|".join(sorted(PLACEHOLDERS, key=len, reverse=True)) + r")\}")

# Template names by role
ASSOCIATION_REMINDER = "association_reminder"
ASSOCIATION_BACKGROUND = "association_background"
ASSOCIATION_DOCUMENT = "association_document"
ASSOCIATION_TYPE_BACKGROUND = "association_type_background"
ASSOCIATION_TYPE_DOCUMENT = "association_type_document"
RECHECK = "recheck"
CAUSAL_REMINDER = "causal_reminder"
CAUSAL_DIRECTION_BACKGROUND = "causal_direction_background"
CAUSAL_DIRECTION_DOCUMENT = "causal_direction_document"
ASSOCIATION_CONTEXT = "association_context"
ASSOCIATION_TYPE_CONTEXT = "association_type_context"
CAUSAL_DIRECTION_CONTEXT = "causal_direction_context"

QUERY_TEMPLATES = (
    ASSOCIATION_REMINDER,
    ASSOCIATION_BACKGROUND,
    ASSOCIATION_DOCUMENT,
    ASSOCIATION_TYPE_BACKGROUND,
    ASSOCIATION_TYPE_DOCUMENT,
    RECHECK,
    CAUSAL_REMINDER,
    CAUSAL_DIRECTION_BACKGROUND,
    CAUSAL_DIRECTION_DOCUMENT,
)


class TemplateError(ValueError):
    """A template could not be loaded or rendered."""


class UnboundPlaceholderError(TemplateError):
    """Rendering hit a placeholder with no binding."""

    def __init__(self, template: str, placeholder: str):
        self.template = template
        self.placeholder = placeholder
        super().__init__(f"Template {template!r} has unbound placeholder {{{placeholder}}}")


@dataclass(frozen=True)
class PromptTemplate:
    name: str
    text: str

    @property
    def placeholders(self) -> FrozenSet[str]:
        return frozenset(_PLACEHOLDER_RE.findall(self.text))


def render_template(template: PromptTemplate, bindings: Mapping[str, str]) -> str:
    """Substitute placeholders; fails on the first unbound one."""
    missing = sorted(template.placeholders - set(bindings))
    if missing:
        raise UnboundPlaceholderError(template.name, missing[0])
    return _PLACEHOLDER_RE.sub(lambda m: str(bindings[m.group(1)]), template.text)


def _read_template(path: Path) -> str:
    text = path.read_text(encoding="utf-8")
    # Files end with one newline that is not part of the prompt
    return text[:-1] if text.endswith("\n") else text


@lru_cache(maxsize=None)
def _load_cached(name: str, directory: str) -> PromptTemplate:
    path = Path(directory) / f"{name}.txt"
    if not path.exists():
        raise TemplateError(f"No template named {name!r} in {directory}")
    return PromptTemplate(name, _read_template(path))


def load_template(name: str, directory: Optional[Union[str, Path]] = None) -> PromptTemplate:
    return _load_cached(name, str(directory or PROMPTS_DIR))


def available_templates(directory: Optional[Union[str, Path]] = None) -> List[str]:
    base = Path(directory or PROMPTS_DIR)
    return sorted(p.stem for p in base.glob("*.txt"))


def format_factors(factors: Sequence[str]) -> str:
    """Factor list as it appears in prompts: comma-separated, in variable order."""
    return ", ".join(factors)


def chain_bindings(factor_a: str, factor_b: str, factors: Sequence[str], domain: str,
                   document: Optional[str] = None,
                   directory: Optional[Union[str, Path]] = None) -> dict:
    """Every binding a chain for one pair can need."""
    bindings = {
        "domain": domain,
        "factors": format_factors(factors),
        "factorA": factor_a,
        "factorB": factor_b,
        "association_context": load_template(ASSOCIATION_CONTEXT, directory).text,
        "association_type_context": load_template(ASSOCIATION_TYPE_CONTEXT, directory).text,
        "causal_direction_context": load_template(CAUSAL_DIRECTION_CONTEXT, directory).text,
    }
    if document is not None:
        bindings["document"] = document
    return bindings


def render(name: str, bindings: Mapping[str, str], directory: Optional[Union[str, Path]] = None) -> str:
    return render_template(load_template(name, directory), bindings)
