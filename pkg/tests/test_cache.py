"""Tests for the response cache."""

import json
import time
from concurrent.futures import ThreadPoolExecutor
from unittest.mock import Mock

import pytest

from causalvote_src.cache import CachedChatClient, ResponseCache, cache_key
from causalvote_src.llm import ChatRequest, ChatTurn, ClientError, RequestLabel, ScriptedChatClient


def make_request(text="question", model="m", temperature=0.0, label_stage="association"):
    return ChatRequest(
        turns=(ChatTurn("user", text),),
        model=model,
        temperature=temperature,
        label=RequestLabel("A", "B", "background", label_stage),
    )


class TestCacheKey:
    """Test cache key derivation."""

    def test_stable(self):
        """Test that equal requests share a key."""
        assert cache_key(make_request()) == cache_key(make_request())

    def test_label_not_part_of_key(self):
        """Test that routing labels do not change the key."""
        assert cache_key(make_request(label_stage="association")) == cache_key(make_request(label_stage="other"))

    def test_content_and_parameters_change_key(self):
        """Test that turns, model and temperature all enter the key."""
        base = cache_key(make_request())
        assert cache_key(make_request(text="other")) != base
        assert cache_key(make_request(model="other")) != base
        assert cache_key(make_request(temperature=0.7)) != base


class TestResponseCache:
    """Test the JSON-lines cache."""

    def test_in_memory(self):
        """Test a cache without a backing file."""
        cache = ResponseCache()
        assert cache.get("k") is None
        cache.put("k", "v")
        assert cache.get("k") == "v"
        assert "k" in cache
        assert cache.stats() == {"entries": 1, "hits": 1, "misses": 1, "corrupt_lines": 0}

    def test_persists_across_instances(self, tmp_path):
        """Test that responses are reloaded from disk."""
        path = tmp_path / "cache.jsonl"
        ResponseCache(path).put("k", "v", model="m")
        reloaded = ResponseCache(path)
        assert reloaded.get("k") == "v"
        record = json.loads(path.read_text().splitlines()[0])
        assert record["model"] == "m"
        assert "created_at" in record

    def test_later_record_wins(self, tmp_path):
        """Test that a repeated key resolves to its last record."""
        path = tmp_path / "cache.jsonl"
        cache = ResponseCache(path)
        cache.put("k", "old")
        cache.put("k", "new")
        assert ResponseCache(path).get("k") == "new"

    def test_corrupt_lines_skipped(self, tmp_path):
        """Test that unparsable lines are skipped and counted."""
        path = tmp_path / "cache.jsonl"
        path.write_text('{"key": "k", "response": "v"}\n{not json\n{"no_key": 1}\n')
        cache = ResponseCache(path)
        assert len(cache) == 1
        assert cache.corrupt_lines == 2


class TestCachedChatClient:
    """Test serving requests through the cache."""

    def test_second_call_served_from_cache(self, tmp_path):
        """Test that a warm cache makes no client calls."""
        inner = ScriptedChatClient(responses={"*|*|*|association": "answer"})
        path = tmp_path / "cache.jsonl"
        first = CachedChatClient(inner, ResponseCache(path))
        assert first.complete(make_request()) == "answer"
        assert first.client_calls == 1

        second = CachedChatClient(inner, ResponseCache(path))
        assert second.complete(make_request()) == "answer"
        assert second.client_calls == 0
        assert inner.call_count == 1

    def test_concurrent_requests_share_one_call(self):
        """Test that racing workers make one client call and leave no per-key locks behind."""
        def slow_answer(request):
            time.sleep(0.05)
            return "answer"

        inner = Mock()
        inner.complete.side_effect = slow_answer
        client = CachedChatClient(inner, ResponseCache())
        with ThreadPoolExecutor(max_workers=8) as executor:
            answers = list(executor.map(lambda _: client.complete(make_request()), range(8)))
        assert answers == ["answer"] * 8
        assert inner.complete.call_count == 1
        assert client._key_locks == {}

    def test_locks_released_for_distinct_requests(self):
        """Test that per-key locks do not accumulate across many requests."""
        client = CachedChatClient(ScriptedChatClient(default="answer"), ResponseCache())
        for k in range(50):
            client.complete(make_request(text=f"question {k}"))
        assert client.client_calls == 50
        assert client._key_locks == {}

    def test_lock_released_after_failure(self):
        """Test that a failing call leaves no lock and is retried next time."""
        inner = Mock()
        inner.complete.side_effect = [ClientError("service unavailable"), "answer"]
        client = CachedChatClient(inner, ResponseCache())
        with pytest.raises(ClientError):
            client.complete(make_request())
        assert client._key_locks == {}
        assert client.complete(make_request()) == "answer"
        assert client.client_calls == 2
