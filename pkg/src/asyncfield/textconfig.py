"""Line-oriented ``key = value`` configuration format.

Grammar (one entry per line)::

    # comment
    key = value
    seen_config = 0 1 2 0      # repeatable key -> list of entries

Keys may be dotted (``gen.snr``) to namespace groups.  Values are parsed
as int, then float, then ``true``/``false``, else kept as a string.  A
value made of several whitespace-separated ints parses to a tuple of ints.
Keys listed in ``REPEATABLE`` always parse to a list.
"""
from __future__ import annotations

REPEATABLE = {"seen_config"}


class ConfigError(ValueError):
    pass


def _parse_scalar(text: str):
    parts = text.split()
    if len(parts) > 1:
        try:
            return tuple(int(p) for p in parts)
        except ValueError:
            return text
    for conv in (int, float):
        try:
            return conv(text)
        except ValueError:
            pass
    low = text.lower()
    if low in ("true", "false"):
        return low == "true"
    return text


def parse(text: str) -> dict:
    out: dict = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if not key:
            raise ConfigError(f"line {lineno}: empty key")
        val = _parse_scalar(value)
        if key in REPEATABLE:
            out.setdefault(key, []).append(val if isinstance(val, tuple) else (val,))
        elif key in out:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        else:
            out[key] = val
    return out


def _fmt(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (tuple, list)):
        return " ".join(str(int(v)) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def dump(entries: dict, header: str | None = None) -> str:
    lines = []
    if header:
        lines.extend(f"# {h}" for h in header.splitlines())
    for key, value in entries.items():
        if key in REPEATABLE:
            lines.extend(f"{key} = {_fmt(v)}" for v in value)
        else:
            lines.append(f"{key} = {_fmt(value)}")
    return "\n".join(lines) + "\n"


def subsection(entries: dict, prefix: str) -> dict:
    """Entries under ``prefix.`` with the prefix stripped."""
    p = prefix + "."
    return {k[len(p):]: v for k, v in entries.items() if k.startswith(p)}
