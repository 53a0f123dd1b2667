"""UTC time helpers shared by the parsers, store and timeline code.

All epoch arithmetic is integer microseconds; no floats touch time values.
"""

from __future__ import annotations

from datetime import datetime, timedelta, timezone

# Microseconds between the WebKit epoch (1601-01-01) and the Unix epoch.
WEBKIT_TO_UNIX_US = 11_644_473_600_000_000

_UNIX_EPOCH = datetime(1970, 1, 1, tzinfo=timezone.utc)


def webkit_us_to_unix_us(webkit_us: int) -> int:
    return webkit_us - WEBKIT_TO_UNIX_US


def unix_us_to_webkit_us(unix_us: int) -> int:
    return unix_us + WEBKIT_TO_UNIX_US


def from_unix_us(unix_us: int) -> datetime:
    """Unix-epoch microseconds -> aware UTC datetime, exactly."""
    return _UNIX_EPOCH + timedelta(microseconds=unix_us)


def to_unix_us(dt: datetime) -> int:
    """Aware datetime -> Unix-epoch microseconds, exactly."""
    if dt.tzinfo is None:
        raise ValueError("naive datetime; UTC-aware required")
    delta = dt.astimezone(timezone.utc) - _UNIX_EPOCH
    return (delta.days * 86_400 + delta.seconds) * 1_000_000 + delta.microseconds


def parse_iso8601_utc(value: str) -> datetime:
    """Parse an ISO-8601 instant ('Z' or explicit offset) into UTC.

    Raises ValueError on anything datetime.fromisoformat cannot handle after
    Z-normalisation, and on naive timestamps.
    """
    text = value.strip()
    if text.endswith(("Z", "z")):
        text = text[:-1] + "+00:00"
    dt = datetime.fromisoformat(text)
    if dt.tzinfo is None:
        raise ValueError(f"timestamp {value!r} has no UTC offset")
    return dt.astimezone(timezone.utc)


def to_iso_z(dt: datetime) -> str:
    """Render UTC datetime as ISO-8601 with 'Z'; microseconds only if nonzero."""
    dt = dt.astimezone(timezone.utc)
    if dt.microsecond:
        return dt.strftime("%Y-%m-%dT%H:%M:%S.%f") + "Z"
    return dt.strftime("%Y-%m-%dT%H:%M:%SZ")
