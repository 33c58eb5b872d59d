"""
Shared L2 data cache.

Serves data reads and page-walk reads, and bypasses walk levels whose
hit rate falls below the data hit rate of the previous epoch.
"""
import logging
from collections import Counter, OrderedDict
from dataclasses import dataclass
from typing import Dict, List, Optional, Union

from .addressing import MAX_WALK_DEPTH, Asid, MemoryRequest

logger = logging.getLogger(__name__)

NUM_CLASSES = MAX_WALK_DEPTH + 1
COUNTER_MAX = (1 << 64) - 1


class CacheArray:
    """Tag-only set-associative cache with LRU replacement and banked ports."""

    def __init__(self, size_bytes: int = 2 * 1024 * 1024, associativity: int = 16,
                 line_size: int = 128, num_banks: int = 16, hit_latency: int = 10):
        if size_bytes % (associativity * line_size):
            raise ValueError("cache size must be a multiple of associativity x line size")
        self.line_size = line_size
        self.line_shift = line_size.bit_length() - 1
        if 1 << self.line_shift != line_size:
            raise ValueError("line size must be a power of two")
        self.associativity = associativity
        self.num_sets = size_bytes // (associativity * line_size)
        self.num_banks = max(1, num_banks)
        self.hit_latency = hit_latency
        # line -> owning asid, ordered LRU first
        self._sets: List["OrderedDict[int, Asid]"] = [OrderedDict() for _ in range(self.num_sets)]
        self._bank_free = [0] * self.num_banks
        self.way_quota: Optional[Dict[Asid, int]] = None
        self.bank_stall_cycles = 0

    def line_of(self, paddr: int) -> int:
        return paddr >> self.line_shift

    def _set_for(self, line: int) -> "OrderedDict[int, Asid]":
        return self._sets[line % self.num_sets]

    def bank_of(self, line: int) -> int:
        return line % self.num_banks

    def reserve_bank(self, line: int, arrival: int) -> int:
        """Each bank starts one access per cycle; returns the start cycle."""
        bank = self.bank_of(line)
        start = max(arrival, self._bank_free[bank])
        self.bank_stall_cycles += start - arrival
        self._bank_free[bank] = start + 1
        return start

    def lookup(self, line: int) -> bool:
        """Tag check that refreshes LRU on a hit."""
        entries = self._set_for(line)
        if line in entries:
            entries.move_to_end(line)
            return True
        return False

    def peek(self, line: int) -> bool:
        """Tag check that leaves replacement state untouched."""
        return line in self._set_for(line)

    def fill(self, line: int, asid: Asid = 0) -> Optional[int]:
        """Allocate ``line``; returns the evicted line, if any."""
        entries = self._set_for(line)
        if line in entries:
            entries.move_to_end(line)
            return None
        victim = None
        quota = self.way_quota.get(asid) if self.way_quota else None
        if quota is not None:
            owned = [l for l, owner in entries.items() if owner == asid]
            if len(owned) >= quota:
                victim = owned[0]
        if victim is None and len(entries) >= self.associativity:
            victim = next(iter(entries))
        if victim is not None:
            del entries[victim]
        entries[line] = asid
        return victim

    def contents(self) -> set:
        return {line for entries in self._sets for line in entries}


class BypassStats:
    """Per-class epoch hit counters and the bypass decisions they produced.

    Class 0 is data; classes 1..7 are walk depths.
    """

    def __init__(self, min_samples: int = 32):
        self.min_samples = min_samples
        self.hits = [0] * NUM_CLASSES
        self.accesses = [0] * NUM_CLASSES
        self.decisions = [False] * NUM_CLASSES

    def record(self, walk_depth: int, hit: bool):
        self.accesses[walk_depth] = min(COUNTER_MAX, self.accesses[walk_depth] + 1)
        if hit:
            self.hits[walk_depth] = min(COUNTER_MAX, self.hits[walk_depth] + 1)

    def hit_rate(self, walk_depth: int) -> Optional[float]:
        accesses = self.accesses[walk_depth]
        return self.hits[walk_depth] / accesses if accesses else None

    def refresh(self) -> List[bool]:
        """Derive next epoch's decisions from this epoch's rates, then reset."""
        data_rate = self.hit_rate(0)
        if data_rate is not None and self.accesses[0] >= self.min_samples:
            for depth in range(1, NUM_CLASSES):
                if self.accesses[depth] < self.min_samples:
                    continue
                self.decisions[depth] = self.hit_rate(depth) < data_rate
        self.hits = [0] * NUM_CLASSES
        self.accesses = [0] * NUM_CLASSES
        return list(self.decisions)


def should_bypass(req: MemoryRequest, stats: BypassStats) -> bool:
    """Walk reads skip the cache when their level's hit rate trails data requests."""
    return req.walk_depth >= 1 and stats.decisions[req.walk_depth]


@dataclass
class HitAfter:
    latency: int


@dataclass
class MissToDram:
    req: MemoryRequest
    ready_cycle: int


CacheAccess = Union[HitAfter, MissToDram]


class L2Cache:
    """Shared L2 with optional TLB-request bypassing."""

    def __init__(self, array: CacheArray, bypass_enabled: bool = False, min_samples: int = 32,
                 event_log: Optional[list] = None):
        self.array = array
        self.bypass_enabled = bypass_enabled
        self.bypass_stats = BypassStats(min_samples)
        self.stats: Counter = Counter()
        self.event_log = event_log

    def access(self, req: MemoryRequest, cycle: int) -> CacheAccess:
        """
        Serve a request arriving at ``cycle``.

        Writes are write-through and never allocate, so they always continue
        to DRAM. Bypassed walk reads go to DRAM without touching a bank; their
        tags are still peeked so the level keeps being sampled.
        """
        line = self.array.line_of(req.paddr)
        depth = req.walk_depth

        if self.bypass_enabled and should_bypass(req, self.bypass_stats):
            hit = self.array.peek(line)
            self.bypass_stats.record(depth, hit)
            req.bypassed = True
            self.stats[("bypassed", depth)] += 1
            self._log(cycle, req, hit)
            return MissToDram(req, cycle)

        start = self.array.reserve_bank(line, cycle)
        hit = self.array.lookup(line)
        if req.is_write:
            self.stats["writes"] += 1
            return MissToDram(req, start + self.array.hit_latency)

        self.bypass_stats.record(depth, hit)
        self.stats[("accesses", depth)] += 1
        self._log(cycle, req, hit)
        if hit:
            self.stats[("hits", depth)] += 1
            return HitAfter(start - cycle + self.array.hit_latency)
        return MissToDram(req, start + self.array.hit_latency)

    def fill(self, req: MemoryRequest):
        """Install the line of a read returning from DRAM unless it bypassed."""
        if req.bypassed or req.is_write:
            return
        self.array.fill(self.array.line_of(req.paddr), req.asid)

    def end_epoch(self) -> List[bool]:
        decisions = self.bypass_stats.refresh()
        if self.bypass_enabled:
            logger.debug("L2 bypass decisions by walk depth: %s", decisions[1:])
        return decisions

    def hit_rate(self, depths) -> float:
        accesses = sum(self.stats[("accesses", d)] for d in depths)
        hits = sum(self.stats[("hits", d)] for d in depths)
        return hits / accesses if accesses else 0.0

    def _log(self, cycle: int, req: MemoryRequest, hit: bool):
        if self.event_log is not None:
            self.event_log.append(("l2", cycle, req.req_id, req.walk_depth, hit, req.bypassed))
