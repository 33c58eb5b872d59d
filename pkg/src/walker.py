"""Shared multi-threaded page table walker and the optional page walk cache."""
import logging
from collections import Counter, deque
from dataclasses import dataclass, field
from typing import Deque, Dict, List, Optional, Tuple, Union

from .addressing import (ENTRY_SIZE, PAGE_LEVELS, PAGE_SHIFT, PAGE_SIZE, Asid, MemoryRequest,
                         PageTable, RequestIds, Unmapped, level_index)
from .tlb import Mshr, SaturatingCounter, TlbArray

logger = logging.getLogger(__name__)

CONCURRENT_WALK_COUNTER_BITS = 6


class PageWalkCache:
    """Cache of intermediate page table entries keyed by (asid, level, frame, index)."""

    def __init__(self, num_entries: int = 1024, associativity: int = 16):
        self._array = TlbArray(num_entries, associativity)
        self.hits = 0
        self.misses = 0

    @staticmethod
    def _tag(level: int, frame: int, index: int) -> int:
        # index < 512 and level < 8 fit below bit 12
        return (frame << PAGE_SHIFT) | (level << 9) | index

    def probe(self, asid: Asid, level: int, frame: int, index: int) -> Optional[int]:
        entry = self._array.lookup(asid, self._tag(level, frame, index))
        if entry is None:
            self.misses += 1
            return None
        self.hits += 1
        return entry.pfn

    def fill(self, asid: Asid, level: int, frame: int, index: int, next_frame: int):
        self._array.insert(asid, self._tag(level, frame, index), next_frame)

    def invalidate_asid(self, asid: Asid) -> int:
        return self._array.invalidate_asid(asid)


@dataclass
class WalkSlot:
    asid: Asid
    vpn: int
    mshr: Mshr
    start_cycle: int
    table_frame: int
    current_level: int = 1
    pending_request: Optional[MemoryRequest] = None

    @property
    def key(self) -> Tuple[Asid, int]:
        return self.asid, self.vpn


@dataclass
class Backpressure:
    """All walker threads are busy; the walk waits in the FIFO."""
    queue_position: int


@dataclass
class NextRequest:
    slot: WalkSlot
    request: MemoryRequest
    issue_cycle: int

    @property
    def walk_depth(self) -> int:
        return self.request.walk_depth


@dataclass
class WalkDone:
    slot: WalkSlot
    pfn: int
    cycle: int
    # walks that left the FIFO because this one freed its thread
    resumed: List[WalkSlot] = field(default_factory=list)


WalkStep = Union[NextRequest, WalkDone]


class PageTableWalker:
    """Turns shared-TLB misses into dependent per-level memory reads."""

    def __init__(self, page_tables: Dict[Asid, PageTable], request_ids: RequestIds,
                 max_slots: int = 64, pwc: Optional[PageWalkCache] = None,
                 pwc_latency: int = 1):
        self.page_tables = page_tables
        self.request_ids = request_ids
        self.max_slots = max_slots
        self.pwc = pwc
        self.pwc_latency = pwc_latency
        self.slots: Dict[Tuple[Asid, int], WalkSlot] = {}
        self.pending: Deque[Tuple[Asid, int, Mshr, int]] = deque()
        self._pending_keys = set()
        self._active_by_app: Counter = Counter()
        self._queued_by_app: Counter = Counter()
        self.concurrent: Dict[Asid, SaturatingCounter] = {}
        self.max_concurrent = 0
        self.concurrency_histogram: Counter = Counter()
        self.stats: Counter = Counter()

    @property
    def active(self) -> int:
        return len(self.slots)

    def _observe_app(self, asid: Asid):
        counter = self.concurrent.get(asid)
        if counter is None:
            counter = self.concurrent[asid] = SaturatingCounter(CONCURRENT_WALK_COUNTER_BITS)
        counter.observe(self._active_by_app[asid] + self._queued_by_app[asid])

    def snapshot_concurrent(self, reset: bool = True) -> Dict[Asid, int]:
        """Per-app maximum of active plus queued walks since the last reset."""
        snapshot = {asid: int(c) for asid, c in self.concurrent.items()}
        if reset:
            for asid, counter in self.concurrent.items():
                counter.reset()
                counter.observe(self._active_by_app[asid] + self._queued_by_app[asid])
        return snapshot

    def start_walk(self, asid: Asid, vpn: int, mshr: Mshr,
                   cycle: int) -> Union[WalkSlot, Backpressure]:
        """
        Allocate a walker thread for a confirmed shared-TLB miss.

        Returns:
            The slot (existing one for a duplicate page), or Backpressure when
            all threads are busy and the walk was queued
        """
        key = (asid, vpn)
        if key in self.slots:
            return self.slots[key]
        if key in self._pending_keys:
            return Backpressure(self._queue_position(key))
        if len(self.slots) >= self.max_slots:
            self.pending.append((asid, vpn, mshr, cycle))
            self._pending_keys.add(key)
            self._queued_by_app[asid] += 1
            self._observe_app(asid)
            self.stats["backpressure"] += 1
            return Backpressure(len(self.pending) - 1)
        return self._allocate(asid, vpn, mshr, cycle)

    def _queue_position(self, key) -> int:
        for position, (asid, vpn, _, _) in enumerate(self.pending):
            if (asid, vpn) == key:
                return position
        return -1

    def _allocate(self, asid: Asid, vpn: int, mshr: Mshr, cycle: int) -> WalkSlot:
        pt = self.page_tables[asid]
        slot = WalkSlot(asid=asid, vpn=vpn, mshr=mshr, start_cycle=cycle, table_frame=pt.root)
        self.slots[slot.key] = slot
        self._active_by_app[asid] += 1
        self._observe_app(asid)
        self.max_concurrent = max(self.max_concurrent, len(self.slots))
        self.concurrency_histogram[len(self.slots)] += 1
        self.stats["walks_started"] += 1
        return slot

    def advance(self, slot: WalkSlot, cycle: int) -> WalkStep:
        """
        Move a walk to its next memory read.

        Levels served by the page walk cache are skipped, each costing
        ``pwc_latency`` cycles.
        """
        while True:
            level = slot.current_level
            index = level_index(slot.vpn, level)
            if self.pwc is not None:
                cached = self.pwc.probe(slot.asid, level, slot.table_frame, index)
                cycle += self.pwc_latency
                if cached is not None:
                    self.stats["pwc_hits"] += 1
                    if level == PAGE_LEVELS:
                        return self._finish(slot, cached, cycle)
                    slot.table_frame = cached
                    slot.current_level += 1
                    continue
            request = MemoryRequest(
                asid=slot.asid,
                vaddr=slot.vpn << PAGE_SHIFT,
                paddr=slot.table_frame * PAGE_SIZE + index * ENTRY_SIZE,
                walk_depth=level,
                issuing_core=min(slot.mshr.cores) if slot.mshr.cores else -1,
                stalled_warps=slot.mshr.stalled_warps,
                issue_cycle=cycle,
                req_id=self.request_ids.next(),
            )
            slot.pending_request = request
            self.stats["memory_requests"] += 1
            return NextRequest(slot, request, cycle)

    def on_level_complete(self, slot: WalkSlot, cycle: int) -> WalkStep:
        """
        Consume the entry read for the slot's current level.

        Raises:
            Unmapped: If the entry is missing
        """
        pt = self.page_tables[slot.asid]
        level = slot.current_level
        index = level_index(slot.vpn, level)
        next_frame = pt.read_entry(level, slot.table_frame, index)
        if next_frame is None:
            raise Unmapped(slot.asid, slot.vpn << PAGE_SHIFT, level)
        if self.pwc is not None:
            self.pwc.fill(slot.asid, level, slot.table_frame, index, next_frame)
        slot.pending_request = None
        if level == PAGE_LEVELS:
            return self._finish(slot, next_frame, cycle)
        slot.table_frame = next_frame
        slot.current_level += 1
        return self.advance(slot, cycle)

    def _finish(self, slot: WalkSlot, pfn: int, cycle: int) -> WalkDone:
        del self.slots[slot.key]
        self._active_by_app[slot.asid] -= 1
        self.stats["walks_completed"] += 1
        done = WalkDone(slot, pfn, cycle)
        while self.pending and len(self.slots) < self.max_slots:
            asid, vpn, mshr, _ = self.pending.popleft()
            self._pending_keys.discard((asid, vpn))
            self._queued_by_app[asid] -= 1
            done.resumed.append(self._allocate(asid, vpn, mshr, cycle))
        return done

    def invalidate_asid(self, asid: Asid) -> int:
        return self.pwc.invalidate_asid(asid) if self.pwc is not None else 0
