"""
Trace format, trace loading and the synthetic trace generator.

A trace file is a short text header followed by a binary record section:

    MASKTRACE 1
    app <name>
    warps <n>
    pages <count> <vpn ranges, e.g. 0x100000-0x10003f,0x100080>
    records <m>
    end-header
    <m little-endian 16-byte records: warp u32, kind u8, 3 pad bytes, payload u64>

Kinds: 0 = read, 1 = write (payload = virtual address), 2 = delay (payload =
cycles).
"""
import logging
from enum import IntEnum
from pathlib import Path
from typing import FrozenSet, Iterable, List, NamedTuple, Optional, Sequence, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError

from .addressing import PAGE_SHIFT, PAGE_SIZE

logger = logging.getLogger(__name__)

MAGIC = "MASKTRACE 1"
END_OF_HEADER = b"end-header\n"
RECORD_DTYPE = np.dtype([("warp", "<u4"), ("kind", "u1"), ("pad", "V3"), ("payload", "<u8")])
LINE_SIZE = 128
LINES_PER_PAGE = PAGE_SIZE // LINE_SIZE


class RecordKind(IntEnum):
    READ = 0
    WRITE = 1
    DELAY = 2


class TraceRecord(NamedTuple):
    warp: int
    kind: RecordKind
    value: int

    @property
    def is_memory(self) -> bool:
        return self.kind != RecordKind.DELAY

    @property
    def weight(self) -> int:
        """Instructions this record retires: its cycles for delays, one otherwise."""
        return self.value if self.kind == RecordKind.DELAY else 1


class ParseError(ValueError):
    """Malformed trace file; ``record`` is the failing record number (-1 in the header)."""

    def __init__(self, message: str, record: int = -1, line: Optional[int] = None):
        location = f"header line {line}" if line is not None else f"record {record}"
        super().__init__(f"{location}: {message}")
        self.record = record
        self.line = line


class UndeclaredPage(ValueError):
    """A record references a page missing from the declared page set."""

    def __init__(self, record: int, vpn: int):
        super().__init__(f"record {record}: page {vpn:#x} not declared")
        self.record = record
        self.vpn = vpn


class SpecInvalid(ValueError):
    """Synthetic generator parameters out of range."""


class AppTrace:
    """Per-warp record streams of one application plus its declared pages."""

    def __init__(self, name: str, streams: List[List[TraceRecord]], pages: Iterable[int]):
        self.name = name
        self.streams = streams
        self.pages: FrozenSet[int] = frozenset(pages)

    @property
    def warp_count(self) -> int:
        return len(self.streams)

    @property
    def record_count(self) -> int:
        return sum(len(s) for s in self.streams)

    @property
    def instruction_count(self) -> int:
        return sum(r.weight for s in self.streams for r in s)

    def referenced_pages(self) -> FrozenSet[int]:
        return frozenset(r.value >> PAGE_SHIFT for s in self.streams for r in s if r.is_memory)

    def __eq__(self, other) -> bool:
        if not isinstance(other, AppTrace):
            return NotImplemented
        return (self.name, self.streams, self.pages) == (other.name, other.streams, other.pages)

    def __repr__(self) -> str:
        return (f"AppTrace({self.name!r}, warps={self.warp_count}, "
                f"records={self.record_count}, pages={len(self.pages)})")


class SyntheticSpec(BaseModel):
    """Parameters of the two-level reuse generator (hot subset + cold sweep)."""
    model_config = ConfigDict(extra="forbid", frozen=True)

    name: str = "synthetic"
    warps: int = Field(32, ge=1)
    working_set_pages: int = Field(256, ge=1)
    # probability that a private access stays in the warp's hot pages
    locality: float = Field(0.5, ge=0.0, le=1.0)
    # probability that an access follows the sweep shared by all warps
    sharing: float = Field(0.0, ge=0.0, le=1.0)
    memory_ratio: float = Field(0.5, gt=0.0, le=1.0)
    stream_length: int = Field(256, ge=1)
    seed: int = 0
    hot_pages: int = Field(4, ge=1)
    delay_cycles: int = Field(4, ge=1)
    write_fraction: float = Field(0.0, ge=0.0, le=1.0)
    base_vpn: int = Field(0x100000, ge=0)


def make_spec(**params) -> SyntheticSpec:
    """Build a generator spec, converting validation failures to SpecInvalid."""
    try:
        return SyntheticSpec(**params)
    except ValidationError as e:
        raise SpecInvalid(str(e)) from e


def generate(spec: SyntheticSpec) -> AppTrace:
    """
    Generate per-warp streams from a synthetic spec.

    Each memory access either follows a sweep shared by every warp (``sharing``),
    revisits one of the warp's hot pages (``locality``), or advances the warp's
    private cold sweep over its slice of the working set. Consecutive accesses
    of a warp walk successive lines of the chosen page.

    Returns:
        The trace; its page set is exactly the pages referenced
    """
    if not isinstance(spec, SyntheticSpec):
        raise SpecInvalid(f"expected SyntheticSpec, got {type(spec).__name__}")
    rng = np.random.default_rng(spec.seed)
    pages = np.arange(spec.base_vpn, spec.base_vpn + spec.working_set_pages, dtype=np.int64)
    n = spec.stream_length
    streams: List[List[TraceRecord]] = []

    for warp in range(spec.warps):
        private = pages[warp::spec.warps] if spec.working_set_pages >= spec.warps else pages
        start = int(rng.integers(len(private)))
        hot = [int(private[(start + k) % len(private)])
               for k in range(min(spec.hot_pages, len(private)))]
        is_memory = rng.random(n) < spec.memory_ratio
        shared = rng.random(n) < spec.sharing
        local = rng.random(n) < spec.locality
        hot_pick = rng.integers(0, len(hot), n)
        writes = rng.random(n) < spec.write_fraction

        records = []
        cursor = start
        line = warp % LINES_PER_PAGE
        for i in range(n):
            if not is_memory[i]:
                records.append(TraceRecord(warp, RecordKind.DELAY, spec.delay_cycles))
                continue
            if shared[i]:
                page = int(pages[i % spec.working_set_pages])
            elif local[i]:
                page = hot[hot_pick[i]]
            else:
                page = int(private[cursor % len(private)])
                cursor += 1
            line = (line + 1) % LINES_PER_PAGE
            kind = RecordKind.WRITE if writes[i] else RecordKind.READ
            records.append(TraceRecord(warp, kind, (page << PAGE_SHIFT) | (line * LINE_SIZE)))
        streams.append(records)

    trace = AppTrace(spec.name, streams, ())
    trace.pages = trace.referenced_pages()
    return trace


def _format_ranges(pages: Iterable[int]) -> str:
    ordered = sorted(pages)
    parts = []
    i = 0
    while i < len(ordered):
        j = i
        while j + 1 < len(ordered) and ordered[j + 1] == ordered[j] + 1:
            j += 1
        parts.append(f"{ordered[i]:#x}" if i == j else f"{ordered[i]:#x}-{ordered[j]:#x}")
        i = j + 1
    return ",".join(parts)


def _parse_ranges(text: str, line: int) -> List[int]:
    pages = []
    for part in filter(None, text.split(",")):
        try:
            if "-" in part:
                lo, hi = (int(x, 0) for x in part.split("-", 1))
                if hi < lo:
                    raise ValueError(part)
                pages.extend(range(lo, hi + 1))
            else:
                pages.append(int(part, 0))
        except ValueError:
            raise ParseError(f"bad page range {part!r}", line=line)
    return pages


def write_trace(trace: AppTrace, path: Union[str, Path]):
    """Write a trace in the header + binary record format."""
    records = [r for stream in trace.streams for r in stream]
    array = np.zeros(len(records), dtype=RECORD_DTYPE)
    if records:
        array["warp"] = [r.warp for r in records]
        array["kind"] = [int(r.kind) for r in records]
        array["payload"] = [r.value for r in records]
    header = "\n".join([
        MAGIC,
        f"app {trace.name}",
        f"warps {trace.warp_count}",
        f"pages {len(trace.pages)} {_format_ranges(trace.pages)}",
        f"records {len(records)}",
    ]) + "\n"
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as f:
        f.write(header.encode("utf-8"))
        f.write(END_OF_HEADER)
        f.write(array.tobytes())


def load_trace(path: Union[str, Path]) -> AppTrace:
    """
    Load and validate a trace file.

    Raises:
        FileNotFoundError: If the file does not exist
        ParseError: On a malformed header or record, with its number
        UndeclaredPage: If a record's page is not declared
    """
    data = Path(path).read_bytes()
    end = data.find(END_OF_HEADER)
    if not data or end < 0:
        raise ParseError("missing header", line=1)
    header_lines = data[:end].decode("utf-8", errors="replace").splitlines()
    body = data[end + len(END_OF_HEADER):]

    if not header_lines or header_lines[0].strip() != MAGIC:
        raise ParseError(f"expected {MAGIC!r}", line=1)
    fields = {}
    for number, text in enumerate(header_lines[1:], start=2):
        key, _, value = text.partition(" ")
        if key not in ("app", "warps", "pages", "records"):
            raise ParseError(f"unknown header key {key!r}", line=number)
        fields[key] = (value, number)
    for key in ("app", "warps", "pages", "records"):
        if key not in fields:
            raise ParseError(f"missing {key!r} header", line=len(header_lines))

    name = fields["app"][0]
    try:
        warps = int(fields["warps"][0])
        declared_records = int(fields["records"][0])
    except ValueError as e:
        raise ParseError(f"bad integer: {e}", line=fields["warps"][1])
    count_text, _, range_text = fields["pages"][0].partition(" ")
    pages = _parse_ranges(range_text.strip(), fields["pages"][1])
    if str(len(pages)) != count_text:
        raise ParseError(f"page count {count_text} does not match {len(pages)} listed pages",
                         line=fields["pages"][1])

    if len(body) % RECORD_DTYPE.itemsize:
        raise ParseError("truncated record", record=len(body) // RECORD_DTYPE.itemsize)
    array = np.frombuffer(body, dtype=RECORD_DTYPE)
    if len(array) != declared_records:
        raise ParseError(f"header declares {declared_records} records, found {len(array)}",
                         record=min(len(array), declared_records))

    page_set = frozenset(pages)
    streams: List[List[TraceRecord]] = [[] for _ in range(warps)]
    kinds = array["kind"].tolist()
    warp_ids = array["warp"].tolist()
    payloads = array["payload"].tolist()
    for number, (warp, kind, payload) in enumerate(zip(warp_ids, kinds, payloads)):
        if warp >= warps:
            raise ParseError(f"warp {warp} >= declared {warps}", record=number)
        try:
            kind = RecordKind(kind)
        except ValueError:
            raise ParseError(f"unknown record kind {kind}", record=number)
        if kind != RecordKind.DELAY and (payload >> PAGE_SHIFT) not in page_set:
            raise UndeclaredPage(number, payload >> PAGE_SHIFT)
        streams[warp].append(TraceRecord(warp, kind, payload))

    logger.debug("loaded %s: %d warps, %d records", name, warps, len(array))
    return AppTrace(name, streams, page_set)


def stream_summary(streams: Sequence[Sequence[TraceRecord]]) -> dict:
    memory = sum(1 for s in streams for r in s if r.is_memory)
    total = sum(len(s) for s in streams)
    return {"records": total, "memory_records": memory, "delay_records": total - memory}
