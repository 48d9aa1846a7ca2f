"""Flat ``key = value`` text format with dimensioned dense arrays.

Scalars are written one per line::

    kind = tabular
    H = 3

Arrays carry an explicit dimension header and list their entries in
row-major order. Entries may continue over the following lines; the writer
puts one innermost row per line::

    R[2,2,1] =
    0.5
    0.5
    ...

``#`` starts a comment when it opens a line or follows whitespace.
"""
from __future__ import annotations

import math
import re
from typing import Any

import numpy as np

_HEADER = re.compile(r"^([A-Za-z_][A-Za-z0-9_.\-]*)\s*(?:\[\s*([0-9,\s]*)\s*\])?$")


class ParseError(ValueError):
    def __init__(self, message: str, key: str | None = None, line: int | None = None):
        where = f" (line {line})" if line is not None else ""
        super().__init__(f"{message}{where}")
        self.key = key
        self.line = line


def _strip_comment(line: str) -> str:
    if line.lstrip().startswith("#"):
        return ""
    m = re.search(r"\s#", line)
    return line[: m.start()] if m else line


def parse_scalar(token: str) -> Any:
    low = token.lower()
    if low in ("true", "yes", "on"):
        return True
    if low in ("false", "no", "off"):
        return False
    try:
        return int(token)
    except ValueError:
        pass
    try:
        return float(token)
    except ValueError:
        return token


def _parse_numbers(tokens: list[str], key: str, line: int) -> np.ndarray:
    try:
        ints = [int(t) for t in tokens]
        return np.asarray(ints, dtype=np.int64)
    except ValueError:
        pass
    try:
        return np.asarray([float(t) for t in tokens], dtype=np.float64)
    except ValueError as exc:
        raise ParseError(f"non-numeric array entry for {key!r}: {exc}", key, line) from None


def loads(text: str) -> dict[str, Any]:
    out: dict[str, Any] = {}
    pending: tuple[str, tuple[int, ...], list[str], int] | None = None

    def finish(p):
        key, dims, tokens, lineno = p
        need = math.prod(dims)
        if len(tokens) != need:
            raise ParseError(
                f"array {key!r} declares {need} entries but has {len(tokens)}", key, lineno
            )
        out[key] = _parse_numbers(tokens, key, lineno).reshape(dims) if need else np.zeros(dims)

    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = _strip_comment(raw).strip()
        if not line:
            continue
        if "=" not in line:
            if pending is None:
                raise ParseError(f"expected 'key = value', got {line!r}", None, lineno)
            pending[2].extend(line.split())
            continue
        if pending is not None:
            finish(pending)
            pending = None
        left, right = (part.strip() for part in line.split("=", 1))
        m = _HEADER.match(left)
        if m is None:
            raise ParseError(f"malformed key {left!r}", left, lineno)
        key, dims_text = m.group(1), m.group(2)
        if key in out:
            raise ParseError(f"duplicate key {key!r}", key, lineno)
        if dims_text is None:
            if not right:
                raise ParseError(f"missing value for {key!r}", key, lineno)
            out[key] = parse_scalar(right)
            continue
        try:
            dims = tuple(int(x) for x in dims_text.split(",") if x.strip())
        except ValueError:
            raise ParseError(f"bad dimension header for {key!r}", key, lineno) from None
        if not dims or any(d < 0 for d in dims):
            raise ParseError(f"bad dimension header for {key!r}", key, lineno)
        pending = (key, dims, right.split(), lineno)
    if pending is not None:
        finish(pending)
    return out


def _fmt(x: Any) -> str:
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return str(x)


def dumps(data: dict[str, Any]) -> str:
    lines = []
    for key, value in data.items():
        if isinstance(value, (np.ndarray, list, tuple)):
            arr = np.asarray(value)
            dims = ",".join(str(d) for d in arr.shape)
            lines.append(f"{key}[{dims}] =")
            if arr.size:
                rows = arr.reshape(-1, arr.shape[-1]) if arr.ndim > 1 else arr.reshape(1, -1)
                for row in rows:
                    lines.append(" ".join(_fmt(v) for v in row.tolist()))
        else:
            lines.append(f"{key} = {_fmt(value)}")
    return "\n".join(lines) + "\n"
