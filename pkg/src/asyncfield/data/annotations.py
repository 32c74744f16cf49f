"""Charades-style activity annotations and the progress rule.

An annotation line is comma-separated; the first field is the video id and
the last field is the action list ``"c008 11.90 21.20;c110 58.70 66.20"``
(class token, start seconds, end seconds).  A header line whose first field
is ``id`` is skipped.
"""
from __future__ import annotations

import csv
import io
import re
from dataclasses import dataclass

_CLASS = re.compile(r"^c(\d+)$")


@dataclass(frozen=True)
class ActivityInterval:
    cls: int
    start: float
    end: float

    def __post_init__(self):
        if not self.start < self.end:
            raise ValueError(f"inverted or empty interval [{self.start}, {self.end}]")

    @property
    def midpoint(self) -> float:
        return 0.5 * (self.start + self.end)


class AnnotationError(ValueError):
    def __init__(self, line: int, message: str):
        super().__init__(f"line {line}: {message}")
        self.line = line


def parse_actions(field: str, n_category: int | None = None, line: int = 0) -> list[ActivityInterval]:
    field = field.strip()
    if not field:
        return []
    out = []
    for triple in field.split(";"):
        parts = triple.split()
        if len(parts) != 3:
            raise AnnotationError(line, f"malformed triple {triple!r}")
        m = _CLASS.match(parts[0])
        if not m:
            raise AnnotationError(line, f"unknown class token {parts[0]!r}")
        cls = int(m.group(1))
        if n_category is not None and cls >= n_category:
            raise AnnotationError(line, f"class {parts[0]} outside {n_category} categories")
        try:
            start, end = float(parts[1]), float(parts[2])
        except ValueError:
            raise AnnotationError(line, f"non-numeric bounds in {triple!r}") from None
        if not start < end:
            raise AnnotationError(line, f"inverted interval in {triple!r}")
        out.append(ActivityInterval(cls, start, end))
    return out


def parse_annotations(text: str, n_category: int | None = None, strict: bool = True):
    """Returns ``(records, errors)``; ``records`` is a list of ``(video_id, intervals)``.

    Strict mode raises on the first bad line; lenient mode skips it and
    collects the ``AnnotationError`` in ``errors``.
    """
    records, errors = [], []
    for n, row in enumerate(csv.reader(io.StringIO(text)), 1):
        if not row or not "".join(row).strip():
            continue
        if n == 1 and row[0].strip() == "id":
            continue
        try:
            if len(row) < 2:
                raise AnnotationError(n, "expected at least a video id and an action field")
            records.append((row[0].strip(), parse_actions(row[-1], n_category, n)))
        except AnnotationError as exc:
            if strict:
                raise
            errors.append(exc)
    return records, errors


def progress_labels(interval: ActivityInterval, timestamp: float) -> int:
    """Thirds of the interval by time: 0, 1, 2 (the end point belongs to 2)."""
    t = float(timestamp)
    if not interval.start <= t <= interval.end:
        raise ValueError(f"timestamp {t} outside [{interval.start}, {interval.end}]")
    third = (interval.end - interval.start) / 3.0
    if t < interval.start + third:
        return 0
    if t < interval.start + 2.0 * third:
        return 1
    return 2


def frame_activity(intervals, timestamp: float) -> ActivityInterval | None:
    """The interval covering ``timestamp`` whose midpoint is nearest (ties: earliest listed)."""
    best, best_d = None, None
    for iv in intervals:
        if iv.start <= timestamp <= iv.end:
            d = abs(iv.midpoint - timestamp)
            if best is None or d < best_d:
                best, best_d = iv, d
    return best
