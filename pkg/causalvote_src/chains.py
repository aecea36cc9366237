"""Knowledge bases, verdicts and the prompt chains that produce them.

The association chain runs up to four stages for one pair and one knowledge
base: background reminder, association question, association type question
and, when the type answer names no usable intermediary, a recheck. The
orientation chain runs two: causal background reminder, then the direction
question. Each stage allows one "answer in the expected format" retry.
"""

import re
import logging
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import List, Optional, Sequence, Tuple, Union

from . import prompts
from .cache import cache_key
from .llm import (
    ASSISTANT,
    REFORMAT_SUFFIX,
    STAGE_ASSOCIATION,
    STAGE_CAUSAL_REMINDER,
    STAGE_ORIENTATION,
    STAGE_RECHECK,
    STAGE_REMINDER,
    STAGE_TYPE,
    USER,
    ChatClient,
    ChatRequest,
    ChatTurn,
    ClientError,
    RequestLabel,
)
from .utils import split_list_items, truncate_text

logger = logging.getLogger(__name__)

FULL_TEXT = "full-text"
ABSTRACT_ONLY = "abstract-only"

# Flags
FLAG_PARSE_FAILURE = "parse-failure"
FLAG_CLIENT_ERROR = "client-error"
FLAG_TRUNCATED = "document-truncated"
FLAG_RECHECKED = "rechecked"
FLAG_RECHECK_DEFAULTED = "recheck-defaulted-direct"
FLAG_MISSING_REFERENCE = "missing-reference"

REFORMAT_FIRST = (
    "Your previous response did not choose exactly one option. Respond again according to the "
    "First Expected Response Format, giving exactly one option under 'Answer:'."
)
REFORMAT_SECOND = (
    "Your previous response did not choose exactly one option. Respond again according to the "
    "Second Expected Response Format, giving exactly one option under 'Answer:'."
)

_SECTION_HEADERS = ("Answer:", "Reference:", "Intermediary Factors:", "Thoughts:", "Document Identifier:")
_SECTION_RE = re.compile(r"(" + "|".join(re.escape(h) for h in _SECTION_HEADERS) + r")", re.IGNORECASE)
_OPTION_RE = re.compile(r"\(?\b([A-E])\)")


class KbKind(Enum):
    BACKGROUND = "background"
    DOCUMENT = "document"


@dataclass(frozen=True)
class KnowledgeBase:
    """An evidence source queried by the chains."""

    kind: KbKind
    document_id: Optional[str] = None
    source_db: Optional[str] = None
    text: str = ""

    def __post_init__(self) -> None:
        if self.kind is KbKind.DOCUMENT:
            if not self.document_id:
                raise ValueError("A document knowledge base needs a document id")
            if not self.text.strip():
                raise ValueError(f"Document {self.document_id} has no text")
            if self.source_db not in (FULL_TEXT, ABSTRACT_ONLY):
                raise ValueError(f"Unknown source database: {self.source_db!r}")
        elif self.document_id or self.source_db or self.text:
            raise ValueError("The background knowledge base carries no payload")

    @classmethod
    def background(cls) -> "KnowledgeBase":
        return cls(KbKind.BACKGROUND)

    @classmethod
    def document(cls, document_id: str, text: str, source_db: str = ABSTRACT_ONLY) -> "KnowledgeBase":
        return cls(KbKind.DOCUMENT, document_id, source_db, text)

    @property
    def is_document(self) -> bool:
        return self.kind is KbKind.DOCUMENT

    @property
    def kb_id(self) -> str:
        return f"doc:{self.document_id}" if self.is_document else "background"


@dataclass
class Transcript:
    """Append-only conversation for one chain run."""

    model: str
    temperature: float
    max_tokens: int
    turns: List[ChatTurn] = field(default_factory=list)
    cache_keys: List[str] = field(default_factory=list)

    def append(self, role: str, text: str) -> None:
        expected = USER if len(self.turns) % 2 == 0 else ASSISTANT
        if role != expected:
            raise ValueError(f"Transcript expects a {expected} turn next, got {role}")
        self.turns.append(ChatTurn(role, text))

    def __len__(self) -> int:
        return len(self.turns)

    def to_dict(self) -> dict:
        return {
            "model": self.model,
            "temperature": self.temperature,
            "max_tokens": self.max_tokens,
            "turns": [{"role": t.role, "text": t.text} for t in self.turns],
        }


class Association(Enum):
    ASSOCIATED = "associated"
    INDEPENDENT = "independent"
    UNKNOWN = "unknown"


class AssociationType(Enum):
    DIRECT = "direct"
    INDIRECT = "indirect"
    UNKNOWN = "unknown"


class VerdictValue(Enum):
    INDEPENDENT = "independent"
    DIRECTLY_ASSOCIATED = "directly-associated"
    INDIRECTLY_ASSOCIATED = "indirectly-associated"
    UNKNOWN = "unknown"


class Direction(Enum):
    A_CAUSES_B = "a-causes-b"
    B_CAUSES_A = "b-causes-a"
    UNKNOWN = "unknown"


@dataclass(frozen=True)
class Verdict:
    """A knowledge base's classification of one pair."""

    value: VerdictValue
    intermediaries: Tuple[str, ...] = ()
    reference: Optional[str] = None
    flags: Tuple[str, ...] = ()
    stages: int = 0
    document_identifier: Optional[str] = None
    error: Optional[str] = None
    transcript: Optional[Transcript] = field(default=None, compare=False, repr=False)

    def __post_init__(self) -> None:
        if self.intermediaries and self.value is not VerdictValue.INDIRECTLY_ASSOCIATED:
            object.__setattr__(self, "intermediaries", ())
        if self.value is VerdictValue.UNKNOWN and self.reference is not None:
            object.__setattr__(self, "reference", None)

    @property
    def usable(self) -> bool:
        return self.value is not VerdictValue.UNKNOWN

    def to_dict(self) -> dict:
        payload = {
            "value": self.value.value,
            "intermediaries": list(self.intermediaries),
            "reference": self.reference,
            "flags": list(self.flags),
            "stages": self.stages,
        }
        if self.transcript is not None:
            payload["cache_keys"] = list(self.transcript.cache_keys)
        if self.error:
            payload["error"] = self.error
        return payload


@dataclass(frozen=True)
class OrientationVerdict:
    value: Direction
    reference: Optional[str] = None
    flags: Tuple[str, ...] = ()
    error: Optional[str] = None
    transcript: Optional[Transcript] = field(default=None, compare=False, repr=False)

    def to_dict(self) -> dict:
        payload = {"value": self.value.value, "reference": self.reference, "flags": list(self.flags)}
        if self.transcript is not None:
            payload["cache_keys"] = list(self.transcript.cache_keys)
        if self.error:
            payload["error"] = self.error
        return payload


# Parsing

def _sections(text: str) -> List[Tuple[str, str]]:
    """(header, body) for every recognised section, in order."""
    matches = list(_SECTION_RE.finditer(text))
    sections = []
    for position, match in enumerate(matches):
        end = matches[position + 1].start() if position + 1 < len(matches) else len(text)
        body = text[match.end():end].replace("```", "").replace("``", "")
        sections.append((match.group(1).lower(), body.strip()))
    return sections


def _section(text: str, header: str) -> Optional[str]:
    found = [body for name, body in _sections(text) if name == header.lower()]
    return found[-1] if found else None


def _optional_section(text: str, header: str) -> Optional[str]:
    body = _section(text, header)
    if not body or body.startswith("[Skip"):
        return None
    return body


def _choose_option(text: str, allowed: str) -> Optional[str]:
    """The single option letter chosen in the last Answer block, or None."""
    block = _section(text, "Answer:")
    scope = block if block is not None else text
    letters = {m for m in _OPTION_RE.findall(scope) if m in allowed}
    if len(letters) == 1:
        return letters.pop()
    return None


@dataclass(frozen=True)
class ParsedAnswer:
    value: Enum
    parse_failed: bool = False
    reference: Optional[str] = None
    intermediaries: Tuple[str, ...] = ()
    unmatched: Tuple[str, ...] = ()
    document_identifier: Optional[str] = None


_ASSOCIATION_OPTIONS = {"A": Association.ASSOCIATED, "B": Association.INDEPENDENT, "C": Association.UNKNOWN}
_TYPE_OPTIONS = {"D": AssociationType.DIRECT, "E": AssociationType.INDIRECT, "C": AssociationType.UNKNOWN}
_DIRECTION_OPTIONS = {"A": Direction.A_CAUSES_B, "B": Direction.B_CAUSES_A, "C": Direction.UNKNOWN}


def _document_identifier(text: str) -> Optional[str]:
    body = _section(text, "Document Identifier:")
    return body.splitlines()[0].strip() if body else None


def parse_association_answer(response_text: str) -> ParsedAnswer:
    """(A) associated, (B) independent, (C) unknown."""
    letter = _choose_option(response_text, "ABC")
    if letter is None:
        return ParsedAnswer(Association.UNKNOWN, parse_failed=True)
    return ParsedAnswer(
        _ASSOCIATION_OPTIONS[letter],
        reference=_optional_section(response_text, "Reference:"),
        document_identifier=_document_identifier(response_text),
    )


def match_factors(raw: str, allowed: Sequence[str]) -> Tuple[Tuple[str, ...], Tuple[str, ...]]:
    """Match listed names case-insensitively against ``allowed``.

    Returns (matched, unmatched); matched names use the allowed spelling and
    keep first-mention order. An item that matches nothing is retried split
    on " and ".
    """
    lookup = {name.lower(): name for name in allowed}
    matched: List[str] = []
    unmatched: List[str] = []
    for item in split_list_items(raw):
        candidates = [item]
        if item.lower() not in lookup and re.search(r"\sand\s", item, re.IGNORECASE):
            candidates = [part.strip() for part in re.split(r"\sand\s", item, flags=re.IGNORECASE) if part.strip()]
        for candidate in candidates:
            name = lookup.get(candidate.lower())
            if name is None:
                unmatched.append(candidate)
            elif name not in matched:
                matched.append(name)
    return tuple(matched), tuple(unmatched)


def parse_type_answer(response_text: str, allowed_third_factors: Sequence[str]) -> ParsedAnswer:
    """(D) direct, (E) indirect with its intermediaries, (C) unknown."""
    letter = _choose_option(response_text, "CDE")
    if letter is None:
        return ParsedAnswer(AssociationType.UNKNOWN, parse_failed=True)
    value = _TYPE_OPTIONS[letter]
    matched: Tuple[str, ...] = ()
    unmatched: Tuple[str, ...] = ()
    if value is AssociationType.INDIRECT:
        raw = _optional_section(response_text, "Intermediary Factors:")
        if raw:
            matched, unmatched = match_factors(raw, allowed_third_factors)
    return ParsedAnswer(value, reference=_optional_section(response_text, "Reference:"),
                        intermediaries=matched, unmatched=unmatched)


def parse_direction_answer(response_text: str) -> ParsedAnswer:
    """(A) A causes B, (B) B causes A, (C) unknown."""
    letter = _choose_option(response_text, "ABC")
    if letter is None:
        return ParsedAnswer(Direction.UNKNOWN, parse_failed=True)
    return ParsedAnswer(_DIRECTION_OPTIONS[letter], reference=_optional_section(response_text, "Reference:"))


# Chains

@dataclass(frozen=True)
class ChainSettings:
    model: str = "gpt-4o"
    temperature: float = 0.0
    max_tokens: int = 1024
    max_document_chars: int = 12000
    templates_dir: Optional[Union[str, Path]] = None


class _ChainRun:
    """Drives one conversation, recording turns and cache keys."""

    def __init__(self, client: ChatClient, kb: KnowledgeBase, pair: Tuple[str, str], settings: ChainSettings):
        self.client = client
        self.kb = kb
        self.pair = pair
        self.settings = settings
        self.transcript = Transcript(settings.model, settings.temperature, settings.max_tokens)
        self.flags: List[str] = []
        self.stages = 0

    def ask(self, stage: str, text: str) -> str:
        self.transcript.append(USER, text)
        request = ChatRequest(
            turns=tuple(self.transcript.turns),
            model=self.settings.model,
            temperature=self.settings.temperature,
            max_tokens=self.settings.max_tokens,
            label=RequestLabel(self.pair[0], self.pair[1], self.kb.kb_id, stage),
        )
        self.transcript.cache_keys.append(cache_key(request))
        answer = self.client.complete(request)
        self.transcript.append(ASSISTANT, answer)
        return answer

    def stage(self, stage: str, text: str) -> str:
        self.stages += 1
        return self.ask(stage, text)

    def parsed_stage(self, stage: str, text: str, parse, reformat: str) -> ParsedAnswer:
        parsed = parse(self.stage(stage, text))
        if parsed.parse_failed:
            logger.debug(f"Unparsable {stage} answer for {self.pair} ({self.kb.kb_id}); asking to reformat")
            parsed = parse(self.ask(stage + REFORMAT_SUFFIX, reformat))
            if parsed.parse_failed:
                logger.warning(f"Could not parse {stage} answer for {self.pair[0]} / {self.pair[1]} ({self.kb.kb_id})")
                self.add_flag(FLAG_PARSE_FAILURE)
        return parsed

    def add_flag(self, flag: str) -> None:
        if flag not in self.flags:
            self.flags.append(flag)

    def document_text(self) -> Optional[str]:
        if not self.kb.is_document:
            return None
        text, truncated = truncate_text(self.kb.text, self.settings.max_document_chars)
        if truncated:
            self.add_flag(FLAG_TRUNCATED)
        return text


def cc_chain(client: ChatClient, kb: KnowledgeBase, pair: Tuple[str, str], all_factors: Sequence[str],
             domains: str, settings: Optional[ChainSettings] = None) -> Verdict:
    """Classify one pair against one knowledge base."""
    factor_a, factor_b = pair
    if factor_a == factor_b or factor_a not in all_factors or factor_b not in all_factors:
        raise ValueError(f"Pair {pair} must name two distinct factors from the factor list")
    settings = settings or ChainSettings()
    run = _ChainRun(client, kb, pair, settings)
    third_factors = [f for f in all_factors if f not in pair]
    directory = settings.templates_dir
    bindings = prompts.chain_bindings(factor_a, factor_b, all_factors, domains, run.document_text(), directory)

    def finish(value: VerdictValue, **kwargs) -> Verdict:
        return Verdict(value, flags=tuple(run.flags), stages=run.stages, transcript=run.transcript, **kwargs)

    try:
        run.stage(STAGE_REMINDER, prompts.render(prompts.ASSOCIATION_REMINDER, bindings, directory))

        association_prompt = prompts.ASSOCIATION_DOCUMENT if kb.is_document else prompts.ASSOCIATION_BACKGROUND
        association = run.parsed_stage(STAGE_ASSOCIATION, prompts.render(association_prompt, bindings, directory),
                                       parse_association_answer, REFORMAT_FIRST)
        if association.value is Association.INDEPENDENT:
            return finish(VerdictValue.INDEPENDENT, reference=association.reference,
                          document_identifier=association.document_identifier)
        if association.value is Association.UNKNOWN:
            return finish(VerdictValue.UNKNOWN)

        type_prompt = prompts.ASSOCIATION_TYPE_DOCUMENT if kb.is_document else prompts.ASSOCIATION_TYPE_BACKGROUND
        kind = run.parsed_stage(STAGE_TYPE, prompts.render(type_prompt, bindings, directory),
                                lambda text: parse_type_answer(text, third_factors), REFORMAT_SECOND)
        if kind.value is AssociationType.UNKNOWN:
            return finish(VerdictValue.UNKNOWN)
        if kind.value is AssociationType.DIRECT:
            return finish(VerdictValue.DIRECTLY_ASSOCIATED, reference=kind.reference or association.reference)
        if kind.intermediaries:
            return finish(VerdictValue.INDIRECTLY_ASSOCIATED, intermediaries=kind.intermediaries,
                          reference=kind.reference or association.reference)

        # Indirect, but no intermediary from the factor list: ask again
        logger.debug(f"Rechecking {factor_a} / {factor_b} ({kb.kb_id}); unmatched intermediaries {list(kind.unmatched)}")
        run.add_flag(FLAG_RECHECKED)
        recheck = run.parsed_stage(STAGE_RECHECK, prompts.render(prompts.RECHECK, bindings, directory),
                                   lambda text: parse_type_answer(text, third_factors), REFORMAT_SECOND)
        reference = recheck.reference or kind.reference or association.reference
        if recheck.value is AssociationType.UNKNOWN:
            return finish(VerdictValue.UNKNOWN)
        if recheck.value is AssociationType.INDIRECT and recheck.intermediaries:
            return finish(VerdictValue.INDIRECTLY_ASSOCIATED, intermediaries=recheck.intermediaries, reference=reference)
        if recheck.value is AssociationType.INDIRECT:
            run.add_flag(FLAG_RECHECK_DEFAULTED)
        return finish(VerdictValue.DIRECTLY_ASSOCIATED, reference=reference)
    except ClientError as e:
        run.add_flag(FLAG_CLIENT_ERROR)
        return finish(VerdictValue.UNKNOWN, error=str(e))


def orientation_chain(client: ChatClient, kb: KnowledgeBase, pair: Tuple[str, str], domains: str,
                      settings: Optional[ChainSettings] = None) -> OrientationVerdict:
    """Ask one knowledge base which way the edge between ``pair`` points."""
    factor_a, factor_b = pair
    if factor_a == factor_b:
        raise ValueError(f"Pair {pair} must name two distinct factors")
    settings = settings or ChainSettings()
    run = _ChainRun(client, kb, pair, settings)
    directory = settings.templates_dir
    bindings = prompts.chain_bindings(factor_a, factor_b, list(pair), domains, run.document_text(), directory)

    def finish(value: Direction, **kwargs) -> OrientationVerdict:
        return OrientationVerdict(value, flags=tuple(run.flags), transcript=run.transcript, **kwargs)

    try:
        run.stage(STAGE_CAUSAL_REMINDER, prompts.render(prompts.CAUSAL_REMINDER, bindings, directory))
        query = prompts.CAUSAL_DIRECTION_DOCUMENT if kb.is_document else prompts.CAUSAL_DIRECTION_BACKGROUND
        parsed = run.parsed_stage(STAGE_ORIENTATION, prompts.render(query, bindings, directory),
                                  parse_direction_answer, REFORMAT_FIRST)
    except ClientError as e:
        run.add_flag(FLAG_CLIENT_ERROR)
        return finish(Direction.UNKNOWN, error=str(e))

    if parsed.value is not Direction.UNKNOWN and kb.is_document and not parsed.reference:
        logger.warning(f"Document {kb.document_id} oriented {factor_a} / {factor_b} without a reference; ignoring it")
        run.add_flag(FLAG_MISSING_REFERENCE)
        return finish(Direction.UNKNOWN)
    return finish(parsed.value, reference=parsed.reference if parsed.value is not Direction.UNKNOWN else None)
