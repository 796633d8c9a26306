"""Trace records and byte-stable CSV output."""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable

TRACE_HEADER = ("time_s", "loop_id", "entity_id", "signal", "value")


def fmt(value) -> str:
    """Locale-free number formatting with 12 significant digits."""
    if isinstance(value, bool):
        return "1" if value else "0"
    if isinstance(value, int):
        return str(value)
    if isinstance(value, float):
        if math.isnan(value):
            return "nan"
        if math.isinf(value):
            return "inf" if value > 0 else "-inf"
        out = format(value, ".12g")
        return "0" if out == "-0" else out
    return str(value)


@dataclass(frozen=True)
class TraceRecord:
    time_ns: int
    loop_id: str
    entity_id: str
    signal: str
    value: float

    @property
    def time(self) -> float:
        return self.time_ns / 1e9


class CsvWriter:
    """Accumulates rows in memory and writes them with ``\\n`` line endings."""

    def __init__(self, header: Iterable[str]):
        self.header = tuple(header)
        self.rows: list[str] = []

    def add(self, *values) -> None:
        self.rows.append(",".join(fmt(v) for v in values))

    def text(self) -> str:
        return ",".join(self.header) + "\n" + "".join(r + "\n" for r in self.rows)

    def write(self, path: Path) -> str:
        data = self.text().encode("ascii")
        path.write_bytes(data)
        return hashlib.sha256(data).hexdigest()


class TraceWriter(CsvWriter):
    def __init__(self):
        super().__init__(TRACE_HEADER)
        self.count = 0

    def record(self, rec: TraceRecord) -> None:
        from .schedule import format_time

        self.rows.append(
            ",".join((format_time(rec.time_ns), rec.loop_id, str(rec.entity_id), rec.signal, fmt(rec.value)))
        )
        self.count += 1


def read_trace(path: Path) -> list[tuple[float, str, str, str, float]]:
    lines = Path(path).read_text().splitlines()
    if not lines or tuple(lines[0].split(",")) != TRACE_HEADER:
        raise ValueError(f"{path} is not a trace file")
    out = []
    for line in lines[1:]:
        t, loop_id, entity, signal, value = line.split(",")
        out.append((float(t), loop_id, entity, signal, float(value)))
    return out
