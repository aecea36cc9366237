"""Append-only JSON-lines cache of chat responses."""

import json
import logging
import threading
from datetime import datetime, timezone
from pathlib import Path
from typing import Dict, Optional, Union

from .llm import ChatClient, ChatRequest
from .utils import append_json_line, stable_digest

logger = logging.getLogger(__name__)


def cache_key(request: ChatRequest) -> str:
    """Digest of model, sampling parameters and the full turn sequence."""
    return stable_digest({
        "model": request.model,
        "parameters": {"temperature": request.temperature, "max_tokens": request.max_tokens},
        "turns": [[t.role, t.text] for t in request.turns],
    })


class ResponseCache:
    """Responses keyed by :func:`cache_key`, persisted one record per line.

    Records are never rewritten; a later record for the same key wins on
    load. Lines that do not parse are skipped with a warning.
    """

    def __init__(self, path: Optional[Union[str, Path]] = None):
        self.path = Path(path) if path else None
        self.entries: Dict[str, str] = {}
        self.hits = 0
        self.misses = 0
        self.corrupt_lines = 0
        self._lock = threading.Lock()
        if self.path and self.path.exists():
            self._load()

    def _load(self) -> None:
        with open(self.path, "r", encoding="utf-8") as f:
            for number, line in enumerate(f, start=1):
                line = line.strip()
                if not line:
                    continue
                try:
                    record = json.loads(line)
                    self.entries[record["key"]] = str(record["response"])
                except (json.JSONDecodeError, KeyError, TypeError) as e:
                    self.corrupt_lines += 1
                    logger.warning(f"Skipping corrupt cache line {number} in {self.path}: {e}")
        logger.info(f"Loaded {len(self.entries)} cached responses from {self.path}")

    def get(self, key: str) -> Optional[str]:
        with self._lock:
            if key in self.entries:
                self.hits += 1
                return self.entries[key]
            self.misses += 1
            return None

    def put(self, key: str, response: str, model: str = "") -> None:
        with self._lock:
            self.entries[key] = response
        if self.path:
            append_json_line(self.path, {
                "key": key,
                "model": model,
                "response": response,
                "created_at": datetime.now(timezone.utc).isoformat(),
            })

    def __contains__(self, key: str) -> bool:
        return key in self.entries

    def __len__(self) -> int:
        return len(self.entries)

    def stats(self) -> Dict[str, int]:
        return {"entries": len(self.entries), "hits": self.hits, "misses": self.misses,
                "corrupt_lines": self.corrupt_lines}


class CachedChatClient:
    """Serves repeated requests from a :class:`ResponseCache`."""

    def __init__(self, client: ChatClient, cache: ResponseCache):
        self.client = client
        self.cache = cache
        self.client_calls = 0
        self._lock = threading.Lock()
        self._key_locks: Dict[str, threading.Lock] = {}

    def complete(self, request: ChatRequest) -> str:
        key = cache_key(request)
        # One client call per key, even when workers race on it
        with self._lock:
            key_lock = self._key_locks.setdefault(key, threading.Lock())
        with key_lock:
            try:
                cached = self.cache.get(key)
                if cached is not None:
                    return cached
                with self._lock:
                    self.client_calls += 1
                response = self.client.complete(request)
                self.cache.put(key, response, request.model)
                return response
            finally:
                # Later arrivals find the response in the cache
                with self._lock:
                    if self._key_locks.get(key) is key_lock:
                        del self._key_locks[key]
