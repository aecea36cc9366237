"""Utility functions shared across the recovery toolkit."""

import os
import re
import json
import hashlib
import threading
from pathlib import Path
from typing import Any, List, Tuple, TypeVar
import logging

import validators

logger = logging.getLogger(__name__)

T = TypeVar("T")

_append_lock = threading.Lock()


def sanitize_filename(filename: str, max_length: int = 255) -> str:
    """Sanitize filename for filesystem compatibility."""
    if not filename:
        return "unnamed"

    # Remove or replace invalid characters
    invalid_chars = r'[<>:"/\\|?*\x00-\x1f]'
    filename = re.sub(invalid_chars, '_', filename)
    filename = re.sub(r'\s+', '_', filename)

    # Remove leading/trailing dots and spaces
    filename = filename.strip('. ')

    # Truncate if too long, preserving extension
    if len(filename) > max_length:
        name, ext = os.path.splitext(filename)
        max_name_length = max_length - len(ext)
        filename = name[:max_name_length] + ext

    return filename or "unnamed"


def pair_directory_name(factor_a: str, factor_b: str) -> str:
    """Directory name for a variable pair, e.g. ``Smoking__Tuberculosis``."""
    return f"{sanitize_filename(factor_a)}__{sanitize_filename(factor_b)}"


def canonical_pair(i: int, j: int) -> Tuple[int, int]:
    """Order an index pair smaller-first."""
    if i == j:
        raise ValueError(f"A pair needs two distinct indices, got ({i}, {j})")
    return (i, j) if i < j else (j, i)


def unordered_pairs(items: List[T]) -> List[Tuple[T, T]]:
    """All unordered pairs of ``items`` in canonical (positional) order."""
    return [
        (items[a], items[b])
        for a in range(len(items))
        for b in range(a + 1, len(items))
    ]


def create_directory(path: Path) -> bool:
    """Create directory if it doesn't exist."""
    try:
        path.mkdir(parents=True, exist_ok=True)
        return True
    except Exception as e:
        logger.error(f"Failed to create directory {path}: {e}")
        return False


def stable_digest(payload: Any) -> str:
    """SHA-256 of the canonical JSON form of ``payload``."""
    canonical = json.dumps(payload, sort_keys=True, ensure_ascii=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def write_json(path: Path, payload: Any) -> None:
    """Write JSON deterministically (sorted keys, fixed indent, trailing newline)."""
    create_directory(path.parent)
    text = json.dumps(payload, indent=2, sort_keys=True, ensure_ascii=False)
    with open(path, 'w', encoding='utf-8') as f:
        f.write(text + "\n")


def read_json(path: Path) -> Any:
    with open(path, 'r', encoding='utf-8') as f:
        return json.load(f)


def append_json_line(path: Path, record: Any) -> None:
    """Append one JSON record as a single line; safe across threads."""
    line = json.dumps(record, sort_keys=True, ensure_ascii=False) + "\n"
    with _append_lock:
        create_directory(path.parent)
        with open(path, 'a', encoding='utf-8') as f:
            f.write(line)
            f.flush()


def clean_text_content(text: str) -> str:
    """Clean and normalize text content."""
    if not text:
        return ""

    # Remove excessive whitespace
    text = re.sub(r'[ \t]+', ' ', text)
    text = re.sub(r'\n\s*\n+', '\n\n', text)

    return text.strip()


def truncate_text(text: str, max_chars: int, marker: str = "\n[... truncated ...]") -> Tuple[str, bool]:
    """Keep the head of ``text`` within ``max_chars``; returns (text, truncated)."""
    if max_chars <= 0 or len(text) <= max_chars:
        return text, False
    keep = max(0, max_chars - len(marker))
    return text[:keep] + marker, True


def split_list_items(raw: str) -> List[str]:
    """Split a free-text list on commas, semicolons and newlines."""
    parts = re.split(r'[,;\n]', raw)
    items = []
    for part in parts:
        item = part.strip().strip('[]()*-.•"\'').strip()
        if item:
            items.append(item)
    return items


def is_valid_url(url: str) -> bool:
    """Check that ``url`` is a well-formed HTTP(S) URL."""
    if not url or not url.startswith(("http://", "https://")):
        return False
    try:
        return validators.url(url) is True
    except Exception:
        return False
