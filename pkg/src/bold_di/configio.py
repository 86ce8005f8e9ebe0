"""Flat ``key = value`` config text: parsing, serialization, hashing.

One assignment per line; blank lines and ``#`` comments are ignored.  Values
are kept as strings here; each config dataclass owns its own field parsing so
errors can name the offending key.
"""

from __future__ import annotations

import hashlib

from .errors import InvalidInputError


def loads(text: str) -> dict[str, str]:
    out: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise InvalidInputError(f"line {lineno} is not a 'key = value' assignment: {raw!r}")
        key, _, value = line.partition("=")
        key = key.strip()
        if not key:
            raise InvalidInputError(f"line {lineno} has an empty key")
        out[key] = value.strip()
    return out


def dumps(pairs: dict[str, str]) -> str:
    return "".join(f"{k} = {v}\n" for k, v in pairs.items())


def config_hash(text: str) -> str:
    """Short content hash used to stamp derived artifacts."""
    return hashlib.sha256(text.encode("utf-8")).hexdigest()[:16]


def parse_bool(key: str, raw: str) -> bool:
    low = raw.lower()
    if low in ("true", "1", "yes", "on"):
        return True
    if low in ("false", "0", "no", "off"):
        return False
    raise InvalidInputError(f"config key '{key}' expects a boolean, got {raw!r}")


def parse_int(key: str, raw: str) -> int:
    try:
        return int(raw)
    except ValueError as exc:
        raise InvalidInputError(f"config key '{key}' expects an integer, got {raw!r}") from exc


def parse_float(key: str, raw: str) -> float:
    try:
        return float(raw)
    except ValueError as exc:
        raise InvalidInputError(f"config key '{key}' expects a number, got {raw!r}") from exc


def parse_range_list(key: str, raw: str) -> tuple[tuple[float, float], ...]:
    """Comma-separated ``lo:hi`` pairs; an empty string means no entries."""
    raw = raw.strip()
    if not raw:
        return ()
    items = []
    for part in raw.split(","):
        part = part.strip()
        lo, sep, hi = part.partition(":")
        if not sep:
            raise InvalidInputError(f"config key '{key}' expects 'lo:hi' pairs, got {part!r}")
        try:
            items.append((float(lo), float(hi)))
        except ValueError as exc:
            raise InvalidInputError(f"config key '{key}' has a non-numeric bound in {part!r}") from exc
    return tuple(items)


def format_range_list(ranges) -> str:
    return ", ".join(f"{lo:g}:{hi:g}" for lo, hi in ranges)
