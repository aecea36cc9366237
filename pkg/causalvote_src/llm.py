"""Chat-completion clients.

Every client takes a :class:`ChatRequest` (ordered turns plus model and
sampling parameters) and returns the assistant's text. ``HttpChatClient``
talks to an OpenAI-compatible endpoint; ``ScriptedChatClient`` and
``OracleChatClient`` answer offline for tests and dry runs.
"""

import os
import time
import logging
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import TYPE_CHECKING, Dict, List, Optional, Protocol, Tuple, Union

import requests
from requests.adapters import HTTPAdapter
from urllib3.util.retry import Retry

from .graph import CausalGraph
from .utils import read_json

if TYPE_CHECKING:
    from .config import Config
    from .ground_truth import GroundTruthEntry

logger = logging.getLogger(__name__)

USER = "user"
ASSISTANT = "assistant"

# Stage labels
STAGE_REMINDER = "background"
STAGE_ASSOCIATION = "association"
STAGE_TYPE = "association_type"
STAGE_RECHECK = "recheck"
STAGE_CAUSAL_REMINDER = "causal_background"
STAGE_ORIENTATION = "orientation"
REFORMAT_SUFFIX = ":reformat"


class ClientError(RuntimeError):
    """The chat endpoint could not produce a response."""


@dataclass(frozen=True)
class ChatTurn:
    role: str
    text: str


@dataclass(frozen=True)
class RequestLabel:
    """Which pair, knowledge base and chain stage a request belongs to.

    Labels route scripted answers and show up in logs; they are not part of
    the cache key.
    """

    factor_a: str
    factor_b: str
    kb_id: str
    stage: str

    @property
    def base_stage(self) -> str:
        return self.stage.split(":", 1)[0]


@dataclass(frozen=True)
class ChatRequest:
    turns: Tuple[ChatTurn, ...]
    model: str
    temperature: float = 0.0
    max_tokens: int = 1024
    label: Optional[RequestLabel] = None

    def messages(self) -> List[Dict[str, str]]:
        return [{"role": t.role, "content": t.text} for t in self.turns]


class ChatClient(Protocol):
    def complete(self, request: ChatRequest) -> str:
        ...


class RateLimiter:
    """Spaces calls at least ``interval`` seconds apart across threads."""

    def __init__(self, interval: float):
        self.interval = max(0.0, interval)
        self._lock = threading.Lock()
        self._next_slot = 0.0

    def wait(self) -> None:
        if self.interval <= 0:
            return
        with self._lock:
            now = time.monotonic()
            delay = self._next_slot - now
            self._next_slot = max(now, self._next_slot) + self.interval
        if delay > 0:
            time.sleep(delay)


def create_session(user_agent: str, max_retries: int, retry_delay: float) -> requests.Session:
    """requests session with retry/backoff on 429 and 5xx."""
    session = requests.Session()
    session.headers.update({"User-Agent": user_agent})
    retry_strategy = Retry(
        total=max_retries,
        backoff_factor=retry_delay,
        status_forcelist=[429, 500, 502, 503, 504],
        allowed_methods=frozenset({"GET", "POST"}),
    )
    adapter = HTTPAdapter(max_retries=retry_strategy)
    session.mount("http://", adapter)
    session.mount("https://", adapter)
    return session


def llm_api_key() -> Optional[str]:
    return os.environ.get("CAUSALVOTE_LLM_API_KEY") or os.environ.get("OPENAI_API_KEY")


class HttpChatClient:
    """OpenAI-compatible ``/chat/completions`` client."""

    def __init__(self, config: "Config", api_key: Optional[str] = None,
                 session: Optional[requests.Session] = None):
        self.config = config
        self.endpoint = config.llm_endpoint.rstrip("/") + "/chat/completions"
        self.api_key = api_key or llm_api_key()
        self.session = session or create_session(config.user_agent, config.max_retries, config.retry_delay)
        if self.api_key:
            self.session.headers.update({"Authorization": f"Bearer {self.api_key}"})
        self.rate_limiter = RateLimiter(config.delay_between_requests)
        self.call_count = 0
        self._count_lock = threading.Lock()

    def complete(self, request: ChatRequest) -> str:
        if not self.api_key:
            raise ClientError("No LLM API key: set CAUSALVOTE_LLM_API_KEY or OPENAI_API_KEY")
        payload = {
            "model": request.model,
            "messages": request.messages(),
            "temperature": request.temperature,
            "max_tokens": request.max_tokens,
        }
        self.rate_limiter.wait()
        with self._count_lock:
            self.call_count += 1
        try:
            response = self.session.post(self.endpoint, json=payload, timeout=self.config.timeout)
            response.raise_for_status()
            body = response.json()
            return body["choices"][0]["message"]["content"] or ""
        except requests.exceptions.RequestException as e:
            logger.error(f"Chat request failed ({request.label}): {e}")
            raise ClientError(str(e)) from e
        except (KeyError, IndexError, TypeError, ValueError) as e:
            logger.error(f"Malformed chat response ({request.label}): {e}")
            raise ClientError(f"Malformed response: {e}") from e


@dataclass
class ScriptedChatClient:
    """Answers from a table keyed ``"A|B|kb_id|stage"``.

    Any key part may be ``*``. A value may be a list, consumed one answer per
    call and repeating its last entry. Lookups try the exact key first, then
    progressively wider wildcards, then ``default``.
    """

    responses: Dict[str, Union[str, List[str]]] = field(default_factory=dict)
    default: str = "Answer:\n(C) Unknown"
    call_count: int = 0
    calls: List[RequestLabel] = field(default_factory=list)
    _positions: Dict[str, int] = field(default_factory=dict, repr=False)
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False)

    @classmethod
    def from_file(cls, path: Union[str, Path]) -> "ScriptedChatClient":
        payload = read_json(Path(path))
        return cls(responses=dict(payload.get("responses", {})), default=payload.get("default", cls.default))

    def _candidates(self, label: RequestLabel) -> List[str]:
        a, b, kb = label.factor_a, label.factor_b, label.kb_id
        keys = []
        for stage in dict.fromkeys((label.stage, label.base_stage)):
            keys += [
                f"{a}|{b}|{kb}|{stage}",
                f"{a}|{b}|*|{stage}",
                f"*|*|{kb}|{stage}",
                f"*|*|*|{stage}",
            ]
        return keys

    def complete(self, request: ChatRequest) -> str:
        with self._lock:
            self.call_count += 1
            if request.label is None:
                return self.default
            self.calls.append(request.label)
            for key in self._candidates(request.label):
                if key in self.responses:
                    answer = self.responses[key]
                    if isinstance(answer, list):
                        position = self._positions.get(key, 0)
                        self._positions[key] = position + 1
                        return answer[min(position, len(answer) - 1)] if answer else self.default
                    return answer
            return self.default


def _format_answer(option: str, reference: Optional[str] = None, document_id: Optional[str] = None) -> str:
    parts = []
    if document_id:
        parts.append(f"Document Identifier: {document_id}\n")
    parts.append("Thoughts:\nAnswer derived from the reference graph.\n")
    parts.append(f"Answer:\n{option}")
    if reference:
        parts.append(f"\nReference:\n{reference}")
    return "\n".join(parts)


class OracleChatClient:
    """Answers every query from a ground-truth graph.

    Association: (A) for adjacent pairs, (B) otherwise. Association type:
    always (D). Orientation: the truth's direction, or (C) when the truth is
    undirected. Document knowledge bases also get a reference sentence.
    """

    def __init__(self, truth: "GroundTruthEntry"):
        self.truth = truth
        self.call_count = 0
        self._lock = threading.Lock()

    def complete(self, request: ChatRequest) -> str:
        with self._lock:
            self.call_count += 1
        label = request.label
        if label is None:
            return _format_answer("(C) Unknown")
        graph = self.truth.graph
        is_document = label.kb_id != "background"
        reference = f"{label.factor_a} and {label.factor_b} appear together in the reference graph." if is_document else None
        doc_id = label.kb_id if is_document else None
        stage = label.base_stage
        if stage in (STAGE_REMINDER, STAGE_CAUSAL_REMINDER):
            return "The factors are variables of the reference graph."
        if stage == STAGE_ASSOCIATION:
            if graph.skeleton().adjacent(label.factor_a, label.factor_b):
                return _format_answer("(A) Associated", reference, doc_id)
            return _format_answer("(B) Independent", reference, doc_id)
        if stage in (STAGE_TYPE, STAGE_RECHECK):
            return _format_answer("(D) Directly Associated", reference) + "\n\nIntermediary Factors:\n"
        if stage == STAGE_ORIENTATION:
            if isinstance(graph, CausalGraph):
                if graph.has_edge(label.factor_a, label.factor_b):
                    return _format_answer(f"(A) {label.factor_a} is the cause of {label.factor_b}", reference)
                if graph.has_edge(label.factor_b, label.factor_a):
                    return _format_answer(f"(B) {label.factor_b} is the cause of {label.factor_a}", reference)
            return _format_answer("(C) Unknown")
        return _format_answer("(C) Unknown")


def build_client(config: "Config", truth: Optional["GroundTruthEntry"] = None) -> ChatClient:
    """Client named by ``config.llm_client``: http, scripted or oracle."""
    kind = config.llm_client
    if kind == "scripted":
        if not config.mock_script:
            raise ValueError("llm_client 'scripted' requires mock_script")
        return ScriptedChatClient.from_file(config.mock_script)
    if kind == "oracle":
        if truth is None:
            raise ValueError("llm_client 'oracle' requires a ground truth")
        return OracleChatClient(truth)
    if kind == "http":
        return HttpChatClient(config)
    raise ValueError(f"Unknown llm_client: {kind!r}")
