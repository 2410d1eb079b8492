"""Small text and time helpers used by several modules.

Tokenization here is the single definition used by the lexical index, the
hash-based mock embedder, and the overlap mock reranker, so that lexical
signals agree across components.
"""

from __future__ import annotations

import re
from datetime import datetime, timedelta, timezone

_TOKEN_RE = re.compile(r"[a-z0-9]+")


def tokenize(text: str) -> list[str]:
    """Lowercase and split on non-alphanumeric runs. No stemming, no stopwords."""
    return _TOKEN_RE.findall(text.lower())


def estimate_tokens(text: str) -> int:
    """Whitespace token count. Only relative comparisons are meaningful."""
    return len(text.split())


def parse_instant(value: str) -> datetime:
    """Parse an ISO-8601 timestamp into an aware UTC datetime at second resolution.

    Accepts a trailing 'Z' as UTC. Naive inputs are taken to be UTC.
    """
    text = value.strip()
    if text.endswith(("Z", "z")):
        text = text[:-1] + "+00:00"
    try:
        dt = datetime.fromisoformat(text)
    except ValueError as exc:
        raise ValueError(f"not an ISO-8601 timestamp: {value!r}") from exc
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=timezone.utc)
    return dt.astimezone(timezone.utc).replace(microsecond=0)


def normalize_instant(value: datetime | str) -> datetime:
    """Clamp a timestamp to the storage resolution: aware UTC, whole seconds.

    Accepts either a datetime or an ISO-8601 string.
    """
    if isinstance(value, str):
        return parse_instant(value)
    if not isinstance(value, datetime):
        raise ValueError(f"not a timestamp: {value!r}")
    if value.tzinfo is None:
        value = value.replace(tzinfo=timezone.utc)
    return value.astimezone(timezone.utc).replace(microsecond=0)


def format_instant(dt: datetime) -> str:
    """Render an aware datetime as an ISO-8601 UTC string with a 'Z' suffix."""
    return normalize_instant(dt).strftime("%Y-%m-%dT%H:%M:%SZ")


def describe_gap(delta: timedelta | None) -> str:
    """Human-readable idle-time description fed to the boundary detector."""
    if delta is None:
        return "none (first message)"
    seconds = int(delta.total_seconds())
    if seconds < 0:
        seconds = 0
    if seconds < 60:
        return f"{seconds} seconds"
    minutes = seconds // 60
    if minutes < 60:
        return f"{minutes} minutes"
    hours = minutes // 60
    if hours < 24:
        return f"{hours} hours"
    days = hours // 24
    return f"{days} days"
