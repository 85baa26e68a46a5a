"""Canonical JSON encoding.

Every hash in the system (record hashes, transaction sighashes, block
hashes) is computed over these bytes, so the encoding must be total,
deterministic and platform-stable: UTF-8, object keys sorted by code
point, no insignificant whitespace, shortest round-trip float rendering,
minimal string escaping.
"""

from __future__ import annotations

import json
import math
from typing import Any


class NonCanonicalizable(ValueError):
    """Document cannot be canonically encoded (NaN/Infinity, bad types)."""


def _check(value: Any, path: str) -> None:
    if value is None or isinstance(value, (str, bool, int)):
        return
    if isinstance(value, float):
        if math.isnan(value) or math.isinf(value):
            raise NonCanonicalizable(f"non-finite number at {path}")
        return
    if isinstance(value, (list, tuple)):
        for i, item in enumerate(value):
            _check(item, f"{path}[{i}]")
        return
    if isinstance(value, dict):
        for key in value:
            if not isinstance(key, str):
                raise NonCanonicalizable(f"non-string key {key!r} at {path}")
            _check(value[key], f"{path}.{key}")
        return
    raise NonCanonicalizable(f"unsupported type {type(value).__name__} at {path}")


def canonical_json(document: Any) -> bytes:
    """Encode a JSON value to its unique canonical byte form."""
    _check(document, "$")
    text = json.dumps(
        document,
        sort_keys=True,
        separators=(",", ":"),
        ensure_ascii=False,
        allow_nan=False,
    )
    return text.encode("utf-8")
