"""Measurement trace ingest and the analytics that turn traces into noise inputs.

Trace CSV format (one file per measurement session):

    # optional comments
    timestamp_ns,value,unit
    0,1190,ns
    1000,1200,ns

Timestamps are integer ns since trace start and must be nondecreasing; values
are real. The unit column may be omitted (rows of two fields), in which case
the caller-supplied expected unit applies. Units: ``ns`` for latencies and
durations, ``gbps`` for bandwidths, ``ratio`` for normalized traces. Numbers
use ``.`` as the decimal separator regardless of locale.

A detour trace reuses the same CSV with timestamp_ns = event start offset and
value = event duration (unit ns), plus an optional ``# span_ns=N`` comment
giving the replay window length; without it the span defaults to the end of
the last event.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable

from .model import (
    UNIT_GBPS,
    UNIT_NS,
    DetourTrace,
    EmpiricalDistribution,
    round_half_up,
)

__all__ = [
    "UNIT_RATIO",
    "SampleTrace",
    "TraceFormatError",
    "load_trace",
    "save_trace",
    "build_distribution",
    "normalize_min",
    "normalize_max",
    "top_fraction",
    "bandwidth_from_rtt",
    "load_detour_trace",
    "save_detour_trace",
    "save_distribution",
    "load_distribution",
]

UNIT_RATIO = "ratio"
_TRACE_UNITS = (UNIT_NS, UNIT_GBPS, UNIT_RATIO)
_HEADER = "timestamp_ns,value,unit"


class TraceFormatError(ValueError):
    """Bad trace file content; carries the 1-based line number."""

    def __init__(self, message: str, line: int | None = None):
        super().__init__(message if line is None else f"line {line}: {message}")
        self.line = line


@dataclass(frozen=True)
class SampleTrace:
    """Per-sample measurements: (timestamp ns since start, value) rows."""

    rows: tuple[tuple[int, float], ...]
    unit: str

    def __post_init__(self) -> None:
        if self.unit not in _TRACE_UNITS:
            raise ValueError(f"unknown trace unit {self.unit!r}")
        rows = tuple((int(t), float(v)) for t, v in self.rows)
        object.__setattr__(self, "rows", rows)
        prev = None
        for i, (t, v) in enumerate(rows):
            if prev is not None and t < prev:
                raise ValueError(f"row {i}: timestamps must be nondecreasing")
            prev = t
            if self.unit in (UNIT_NS, UNIT_GBPS) and v <= 0:
                raise ValueError(f"row {i}: {self.unit} values must be > 0, got {v}")

    @property
    def values(self) -> tuple[float, ...]:
        return tuple(v for _, v in self.rows)

    @property
    def timestamps(self) -> tuple[int, ...]:
        return tuple(t for t, _ in self.rows)

    def __len__(self) -> int:
        return len(self.rows)


def _parse_rows(path: str | Path, expected_unit: str):
    """Yield (line_number, timestamp, value, unit_or_None) from a trace CSV."""
    text = Path(path).read_text(encoding="utf-8")
    saw_header = False
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        fields = [f.strip() for f in line.split(",")]
        if not saw_header and fields[0] == "timestamp_ns":
            saw_header = True
            continue
        if len(fields) not in (2, 3):
            raise TraceFormatError(f"expected 2 or 3 fields, got {len(fields)}", lineno)
        try:
            ts = int(fields[0])
        except ValueError:
            raise TraceFormatError(f"bad timestamp {fields[0]!r}", lineno) from None
        try:
            value = float(fields[1])
        except ValueError:
            raise TraceFormatError(f"bad value {fields[1]!r}", lineno) from None
        if not math.isfinite(value):
            raise TraceFormatError(f"non-finite value {fields[1]!r}", lineno)
        unit = fields[2] if len(fields) == 3 else None
        if unit is not None and unit != expected_unit:
            raise TraceFormatError(f"unit {unit!r} does not match expected "
                                   f"{expected_unit!r}", lineno)
        yield lineno, ts, value


def load_trace(path: str | Path, expected_unit: str) -> SampleTrace:
    """Read a trace CSV, enforcing the unit and timestamp monotonicity."""
    if expected_unit not in _TRACE_UNITS:
        raise ValueError(f"unknown trace unit {expected_unit!r}")
    rows: list[tuple[int, float]] = []
    prev_ts: int | None = None
    for lineno, ts, value in _parse_rows(path, expected_unit):
        if prev_ts is not None and ts < prev_ts:
            raise TraceFormatError(f"timestamp {ts} decreases (previous {prev_ts})", lineno)
        if expected_unit in (UNIT_NS, UNIT_GBPS) and value <= 0:
            raise TraceFormatError(f"{expected_unit} value must be > 0, got {value}", lineno)
        prev_ts = ts
        rows.append((ts, value))
    if not rows:
        raise TraceFormatError(f"no samples in {path}")
    return SampleTrace(tuple(rows), expected_unit)


def _format_value(v: float) -> str:
    return repr(int(v)) if float(v).is_integer() else repr(float(v))


def save_trace(trace: SampleTrace, path: str | Path, comments: Iterable[str] = ()) -> None:
    """Write the canonical 3-column form (LF endings, '.' decimals)."""
    lines = [f"# {c}" for c in comments]
    lines.append(_HEADER)
    lines.extend(f"{t},{_format_value(v)},{trace.unit}" for t, v in trace.rows)
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def build_distribution(trace: SampleTrace) -> EmpiricalDistribution:
    """Sorted copy of the trace values, unit preserved; the simulator's input."""
    if trace.unit not in (UNIT_NS, UNIT_GBPS):
        raise ValueError(f"cannot build a noise distribution from a {trace.unit!r} trace")
    if len(trace) == 0:
        raise ValueError("empty trace")
    return EmpiricalDistribution.from_values(trace.values, trace.unit)


def normalize_min(trace: SampleTrace) -> SampleTrace:
    """Divide every value by the trace minimum; the result's minimum is 1."""
    if len(trace) == 0:
        raise ValueError("empty trace")
    lo = min(trace.values)
    if lo <= 0:
        raise ValueError(f"minimum must be > 0 to normalize, got {lo}")
    return SampleTrace(tuple((t, v / lo) for t, v in trace.rows), UNIT_RATIO)


def normalize_max(trace: SampleTrace) -> SampleTrace:
    """Divide every value by the trace maximum; the result's maximum is 1."""
    if len(trace) == 0:
        raise ValueError("empty trace")
    hi = max(trace.values)
    if hi <= 0:
        raise ValueError(f"maximum must be > 0 to normalize, got {hi}")
    return SampleTrace(tuple((t, v / hi) for t, v in trace.rows), UNIT_RATIO)


def top_fraction(trace: SampleTrace, frac: float, side: str = "largest") -> SampleTrace:
    """Keep the ceil(frac * n) most extreme samples, in original timestamp order.

    side selects which tail: "largest" (e.g. worst latencies) or "smallest"
    (e.g. deepest bandwidth drops). Ties at the cut are broken toward earlier
    timestamps so output is deterministic.
    """
    if not 0.0 < frac <= 1.0:
        raise ValueError(f"frac must lie in (0, 1], got {frac}")
    if side not in ("largest", "smallest"):
        raise ValueError(f"side must be 'largest' or 'smallest', got {side!r}")
    n = len(trace)
    if n == 0:
        raise ValueError("empty trace")
    keep = math.ceil(frac * n)
    indexed = list(enumerate(trace.rows))
    if side == "largest":
        indexed.sort(key=lambda e: (-e[1][1], e[1][0], e[0]))
    else:
        indexed.sort(key=lambda e: (e[1][1], e[1][0], e[0]))
    chosen = sorted(i for i, _ in indexed[:keep])
    return SampleTrace(tuple(trace.rows[i] for i in chosen), trace.unit)


def bandwidth_from_rtt(size: int, half_rtt_ns: float) -> float:
    """Achieved bandwidth in Gb/s: message size over half the round-trip time."""
    if size < 1:
        raise ValueError(f"size must be >= 1 byte, got {size}")
    if not half_rtt_ns > 0:
        raise ValueError(f"half_rtt must be > 0 ns, got {half_rtt_ns}")
    return 8.0 * size / half_rtt_ns


# ---------------------------------------------------------------------------
# Detour trace and distribution files

def load_detour_trace(path: str | Path) -> DetourTrace:
    """Read a detour trace CSV (start offset, duration) with optional span comment."""
    span: int | None = None
    for raw in Path(path).read_text(encoding="utf-8").splitlines():
        line = raw.strip()
        if line.startswith("#") and "span_ns=" in line:
            span = int(line.split("span_ns=", 1)[1].strip())
    events = []
    for lineno, ts, value in _parse_rows(path, UNIT_NS):
        dur = round_half_up(value)
        if dur <= 0:
            raise TraceFormatError(f"detour duration must be > 0 ns, got {value}", lineno)
        events.append((ts, dur))
    if not events:
        raise TraceFormatError(f"no detour events in {path}")
    if span is None:
        span = max(s + d for s, d in events)
    return DetourTrace(tuple(events), span)


def save_detour_trace(trace: DetourTrace, path: str | Path,
                      comments: Iterable[str] = ()) -> None:
    lines = [f"# {c}" for c in comments]
    lines.append(f"# span_ns={trace.span}")
    lines.append(_HEADER)
    lines.extend(f"{s},{d},{UNIT_NS}" for s, d in trace.events)
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


_DIST_SCHEMA = "nsim.dist/1"


def save_distribution(dist: EmpiricalDistribution, path: str | Path) -> None:
    doc = {"schema": _DIST_SCHEMA, "unit": dist.unit, "samples": list(dist.samples)}
    Path(path).write_text(json.dumps(doc) + "\n", encoding="utf-8")


def load_distribution(path: str | Path) -> EmpiricalDistribution:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    if doc.get("schema") != _DIST_SCHEMA:
        raise ValueError(f"unexpected distribution schema {doc.get('schema')!r}")
    return EmpiricalDistribution(tuple(doc["samples"]), doc["unit"])
