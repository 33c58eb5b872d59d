"""
Cycle-stepped simulation of cores, warps and the shared memory hierarchy.

Each cycle, in order: due completion events are applied, an epoch boundary
(if any) updates tokens, bypass decisions and DRAM counters, pending core
flushes are attempted, DRAM starts new requests, and every core issues at
most one trace record from a greedy-then-oldest warp pick.

The run ends in the cycle where the last application completes its first
pass, or when the run reaches ``min_cycles`` if that is later; nothing
issues in that cycle.
"""
import heapq
import itertools
import logging
from collections import Counter, deque
from dataclasses import dataclass, field
from enum import Enum
from typing import Deque, Dict, List, Optional, Sequence, Tuple

import numpy as np

from .addressing import (PAGE_OFFSET_MASK, PAGE_SHIFT, PAGE_SIZE, MemoryRequest, RequestIds,
                         build_page_tables, translate_vpn)
from .config import DesignFlags, HardwareConfig, MaskConfig
from .dram import DramController, DramGeometry
from .l2cache import CacheArray, HitAfter, L2Cache
from .metrics import weighted_speedup
from .tlb import Mshr, ProbeOutcome, TlbHierarchy
from .walker import NextRequest, PageTableWalker, PageWalkCache, WalkDone, WalkSlot
from .workload import AppTrace, RecordKind

logger = logging.getLogger(__name__)

DEFAULT_MAX_CYCLES = 20_000_000

# event kinds
_WAKE = 0
_TRANSLATED = 1
_L2_TLB = 2
_START_WALK = 3
_ACCESS = 4
_DRAM_SUBMIT = 5
_DRAM_DONE = 6
_RETURN = 7
_WALK_DONE = 8


class ConfigInvalid(ValueError):
    """Partition or workload that the machine cannot run."""


class WarpStatus(Enum):
    READY = "Ready"
    STALLED_TRANSLATION = "StalledTranslation"
    STALLED_DATA = "StalledData"
    FINISHED = "Finished"


class WarpState:
    """A hardware warp slot and the trace warp it is currently running."""

    __slots__ = ("warp_id", "core", "slot", "asid", "app", "stream", "trace_warp", "cursor",
                 "status", "ready_at", "launch_seq")

    def __init__(self, warp_id: int, core: int, slot: int, asid: int, app: int):
        self.warp_id = warp_id
        self.core = core
        self.slot = slot
        self.asid = asid
        self.app = app
        self.stream: Sequence = ()
        self.trace_warp = -1
        self.cursor = 0
        self.status = WarpStatus.FINISHED
        self.ready_at = 0
        self.launch_seq = 0

    def __repr__(self) -> str:
        return (f"WarpState({self.warp_id}, core={self.core}, asid={self.asid}, "
                f"{self.status.value}, cursor={self.cursor})")


class CoreState:
    """One core: its ASID, page table root register, warps and GTO state."""

    def __init__(self, core_id: int, asid: int, page_table_root: int):
        self.core_id = core_id
        self.asid = asid
        self.page_table_root = page_table_root
        self.warps: List[WarpState] = []
        self.ready = set()
        self.greedy: Optional[WarpState] = None
        self.live_warps = 0
        self.draining = False
        self.issued = 0
        self.stall_cycles = 0

    def pick(self) -> WarpState:
        """Greedy-then-oldest: keep issuing the last warp while it is ready."""
        if self.greedy is not None and self.greedy in self.ready:
            return self.greedy
        return min(self.ready, key=lambda w: w.launch_seq)


@dataclass(frozen=True)
class Partition:
    """Core ids owned by each application, in application order."""
    cores: Tuple[Tuple[int, ...], ...]

    @classmethod
    def from_counts(cls, counts: Sequence[int]) -> "Partition":
        """Contiguous core ranges of the given sizes, starting at core 0."""
        bounds = np.cumsum([0] + list(counts))
        return cls(tuple(tuple(range(int(lo), int(hi))) for lo, hi in zip(bounds, bounds[1:])))

    @classmethod
    def equal(cls, num_apps: int, num_cores: int) -> "Partition":
        if num_apps < 1 or num_apps > num_cores:
            raise ConfigInvalid(f"cannot split {num_cores} cores between {num_apps} apps")
        base, extra = divmod(num_cores, num_apps)
        return cls.from_counts([base + (1 if i < extra else 0) for i in range(num_apps)])

    @property
    def counts(self) -> List[int]:
        return [len(c) for c in self.cores]

    def validate(self, num_cores: int, num_apps: int):
        """
        Raises:
            ConfigInvalid: Wrong app count, an app without cores, a core out of
                range or assigned twice
        """
        if len(self.cores) != num_apps:
            raise ConfigInvalid(f"partition covers {len(self.cores)} apps, workload has {num_apps}")
        seen = set()
        for app, cores in enumerate(self.cores):
            if not cores:
                raise ConfigInvalid(f"app {app} has no cores")
            for core in cores:
                if not 0 <= core < num_cores:
                    raise ConfigInvalid(f"core {core} outside 0..{num_cores - 1}")
                if core in seen:
                    raise ConfigInvalid(f"core {core} assigned twice")
                seen.add(core)


class EpochClock:
    def __init__(self, length: int):
        self.length = length
        self.index = 0

    def is_boundary(self, cycle: int) -> bool:
        return cycle > 0 and cycle % self.length == 0

    def next_boundary(self, cycle: int) -> int:
        return (cycle // self.length + 1) * self.length


class AppRuntime:
    """Launch state of one application's trace."""

    def __init__(self, index: int, asid: int, trace: AppTrace, cores: Sequence[int]):
        self.index = index
        self.asid = asid
        self.trace = trace
        self.cores = list(cores)
        self.warps: List[WarpState] = []
        self.waiting: Deque[int] = deque()
        self.pass_remaining = 0
        self.passes = 0
        self.first_pass_cycle: Optional[int] = None
        self.instructions = 0


@dataclass
class SimResult:
    apps: List[str]
    partition: List[int]
    cycles: int
    instructions: List[int]
    ipc: List[float]
    passes: List[int]
    counters: Dict[str, int]
    stalled_warps_histogram: Dict[int, int]
    concurrent_walks_histogram: Dict[int, int]
    audit: List[str] = field(default_factory=list)
    token_history: List[Dict[int, int]] = field(default_factory=list)
    events: Optional[list] = None
    truncated: bool = False


class Simulator:
    """One co-run of applications on a partitioned GPU."""

    def __init__(self, hardware: HardwareConfig, mask: MaskConfig, flags: DesignFlags,
                 traces: Sequence[AppTrace], partition: Partition, seed: int = 1,
                 record_events: bool = False, max_cycles: int = DEFAULT_MAX_CYCLES,
                 min_cycles: int = 0):
        partition.validate(hardware.num_cores, len(traces))
        for trace in traces:
            if trace.instruction_count == 0:
                raise ConfigInvalid(f"trace {trace.name!r} retires no instructions")
        self.hardware = hardware
        self.mask = mask
        self.flags = flags
        self.partition = partition
        self.max_cycles = max_cycles
        self.min_cycles = min_cycles
        self.events: Optional[list] = [] if record_events else None
        self.request_ids = RequestIds()

        asids = [i + 1 for i in range(len(traces))]
        self.page_tables = build_page_tables(
            [(asid, trace.pages) for asid, trace in zip(asids, traces)],
            allocator_seed=seed, physical_frames=hardware.physical_frames)
        self.apps = [AppRuntime(i, asid, trace, partition.cores[i])
                     for i, (asid, trace) in enumerate(zip(asids, traces))]
        static = flags.static_partition and len(traces) > 1

        self.tlb = TlbHierarchy(
            hardware.num_cores,
            l1_entries=hardware.l1_tlb_entries, l1_assoc=hardware.l1_tlb_assoc,
            l2_entries=hardware.l2_tlb_entries, l2_assoc=hardware.l2_tlb_assoc,
            bypass_entries=hardware.bypass_cache_entries if flags.tlb_tokens else 0,
            shared_l2=flags.shared_l2_tlb, tokens_enabled=flags.tlb_tokens,
            initial_tokens=mask.initial_tokens, token_step=mask.token_step,
            l2_ports=hardware.l2_tlb_ports, l2_latency=hardware.l2_tlb_latency,
            l1_latency=hardware.l1_tlb_latency)
        pwc = None
        if flags.page_walk_cache and hardware.pwc_entries:
            pwc = PageWalkCache(hardware.pwc_entries, hardware.pwc_assoc)
        self.walker = PageTableWalker(self.page_tables, self.request_ids,
                                      max_slots=hardware.walker_threads, pwc=pwc,
                                      pwc_latency=hardware.pwc_latency)
        array = CacheArray(hardware.l2_cache_kb * 1024, hardware.l2_cache_assoc,
                           hardware.l2_cache_line, hardware.l2_cache_banks,
                           hardware.l2_cache_latency)
        if static:
            array.way_quota = {asid: max(1, hardware.l2_cache_assoc // len(asids))
                               for asid in asids}
        self.l2 = L2Cache(array, bypass_enabled=flags.l2_bypass,
                          min_samples=mask.bypass_min_samples, event_log=self.events)
        geometry = DramGeometry(hardware.dram_channels, hardware.dram_banks,
                                hardware.dram_row_size, hardware.l2_cache_line,
                                hardware.dram_row_hit_latency, hardware.dram_row_miss_latency,
                                hardware.dram_burst_cycles, hardware.dram_row_policy)
        self.dram = DramController(
            geometry, asids, mask_scheduler=flags.dram_scheduler,
            golden_size=hardware.golden_queue_entries,
            silver_size=hardware.silver_queue_entries,
            normal_size=hardware.normal_queue_entries,
            thres_max=mask.thres_max, idle_window=mask.silver_idle_window,
            channel_sets=split_channels(hardware.dram_channels, asids) if static else None,
            event_log=self.events)
        self.clock = EpochClock(mask.epoch_length)

        self.cores: List[CoreState] = []
        core_owner = {core: app for app in self.apps for core in app.cores}
        for core_id in range(hardware.num_cores):
            app = core_owner.get(core_id)
            asid = app.asid if app is not None else 0
            root = self.page_tables[asid].root if app is not None else -1
            self.cores.append(CoreState(core_id, asid, root))
        self.warps: Dict[int, WarpState] = {}
        self._launch_seq = itertools.count()
        for app in self.apps:
            self._create_warps(app)

        self._heap: List[tuple] = []
        self._seq = itertools.count()
        self._data_owner: Dict[int, WarpState] = {}
        self._walk_owner: Dict[int, WalkSlot] = {}
        self.stats: Counter = Counter()
        self.stalled_warps_histogram: Counter = Counter()
        self.token_history: List[Dict[int, int]] = []
        self.completed_flushes: List[Tuple[int, int]] = []
        self.cycle = 0
        self.end_cycle = 0
        self.done = False
        self.first_passes_done = False
        self.started = False

        for app in self.apps:
            self._start_pass(app, 0)

    # setup

    def _create_warps(self, app: AppRuntime):
        per_core = self.hardware.warps_per_core
        n_cores = len(app.cores)
        count = min(app.trace.warp_count, n_cores * per_core)
        for h in range(count):
            core = self.cores[app.cores[h % n_cores]]
            slot = h // n_cores
            warp = WarpState(core.core_id * per_core + slot, core.core_id, slot, app.asid,
                             app.index)
            core.warps.append(warp)
            app.warps.append(warp)
            self.warps[warp.warp_id] = warp
        self.tlb.tokens.register_app(app.asid, sorted(w.warp_id for w in app.warps))

    def _start_pass(self, app: AppRuntime, cycle: int):
        app.waiting = deque(range(app.trace.warp_count))
        app.pass_remaining = app.trace.warp_count
        for warp in sorted(app.warps, key=lambda w: w.warp_id):
            self._launch_next(warp, cycle)

    def _launch_next(self, warp: WarpState, cycle: int):
        """Give a free hardware warp the next waiting trace warp of its app."""
        app = self.apps[warp.app]
        core = self.cores[warp.core]
        while app.waiting:
            trace_warp = app.waiting.popleft()
            stream = app.trace.streams[trace_warp]
            if not stream:
                self._trace_warp_done(app, cycle)
                # a finished pass relaunched the app and gave this warp new work
                if warp.status != WarpStatus.FINISHED:
                    return
                continue
            if warp.status == WarpStatus.FINISHED:
                core.live_warps += 1
            warp.stream = stream
            warp.trace_warp = trace_warp
            warp.cursor = 0
            warp.status = WarpStatus.READY
            warp.launch_seq = next(self._launch_seq)
            core.ready.add(warp)
            return
        if warp.status != WarpStatus.FINISHED:
            core.live_warps -= 1
        warp.status = WarpStatus.FINISHED
        core.ready.discard(warp)

    def _trace_warp_done(self, app: AppRuntime, cycle: int):
        app.pass_remaining -= 1
        if app.pass_remaining:
            return
        app.passes += 1
        if app.first_pass_cycle is None:
            app.first_pass_cycle = cycle
            logger.debug("app %d (%s) finished its first pass at cycle %d",
                         app.index, app.trace.name, cycle)
            if all(a.first_pass_cycle is not None for a in self.apps):
                self.first_passes_done = True
        # relaunch from the beginning; the ASID and TLB contents carry over
        self._start_pass(app, cycle)

    def _stream_done(self, warp: WarpState, cycle: int):
        app = self.apps[warp.app]
        warp.status = WarpStatus.FINISHED
        self.cores[warp.core].live_warps -= 1
        self._trace_warp_done(app, cycle)
        if warp.status == WarpStatus.FINISHED:
            self._launch_next(warp, cycle)

    # event plumbing

    def _push(self, cycle: int, kind: int, payload):
        heapq.heappush(self._heap, (cycle, next(self._seq), kind, payload))

    def _log(self, *event):
        if self.events is not None:
            self.events.append(event)

    def _dispatch(self, kind: int, payload, cycle: int):
        if kind == _WAKE:
            warp = payload
            if warp.cursor >= len(warp.stream):
                self._stream_done(warp, cycle)
            else:
                self.cores[warp.core].ready.add(warp)
        elif kind == _TRANSLATED:
            warp, pfn = payload
            self._translated(warp, pfn, cycle)
        elif kind == _L2_TLB:
            self._l2_tlb_probe(payload, cycle)
        elif kind == _START_WALK:
            self._start_walk(payload, cycle)
        elif kind == _ACCESS:
            self._access(payload, cycle)
        elif kind == _DRAM_SUBMIT:
            self.dram.submit(payload, cycle)
        elif kind == _DRAM_DONE:
            self.l2.fill(payload)
            self._return(payload, cycle)
        elif kind == _RETURN:
            self._return(payload, cycle)
        elif kind == _WALK_DONE:
            self._finish_walk(payload, cycle)

    # memory path

    def _issue(self, core: CoreState, warp: WarpState, cycle: int):
        core.ready.discard(warp)
        core.greedy = warp
        core.issued += 1
        self.stats["issued"] += 1
        record = warp.stream[warp.cursor]

        if record.kind == RecordKind.DELAY:
            self.apps[warp.app].instructions += record.value
            warp.cursor += 1
            if record.value == 0:
                self._dispatch(_WAKE, warp, cycle)
            else:
                warp.ready_at = cycle + record.value
                self._push(warp.ready_at, _WAKE, warp)
            return

        vpn = record.value >> PAGE_SHIFT
        latency = self.hardware.l1_tlb_latency
        if self.flags.ideal_tlb:
            self.tlb.record_ideal_hit(warp.asid)
            warp.status = WarpStatus.STALLED_DATA
            self._push(cycle + latency, _TRANSLATED,
                       (warp, translate_vpn(self.page_tables[warp.asid], vpn)))
            return

        result = self.tlb.l1_probe(core.core_id, warp.asid, vpn, warp.warp_id, cycle)
        if result.outcome == ProbeOutcome.HIT:
            warp.status = WarpStatus.STALLED_DATA
            self._push(cycle + latency, _TRANSLATED, (warp, result.pfn))
            return
        warp.status = WarpStatus.STALLED_TRANSLATION
        if result.outcome == ProbeOutcome.MISS:
            if self.flags.shared_l2_tlb:
                self._push(self.tlb.l2_ready_cycle(vpn, cycle + latency), _L2_TLB, result.mshr)
            else:
                self._push(cycle + latency, _START_WALK, result.mshr)

    def _l2_tlb_probe(self, mshr: Mshr, cycle: int):
        result = self.tlb.l2_probe(mshr.asid, mshr.vpn, cycle)
        if result.hit:
            self._complete(mshr, result.pfn, cycle)
        else:
            self._start_walk(mshr, cycle)

    def _start_walk(self, mshr: Mshr, cycle: int):
        started = self.walker.start_walk(mshr.asid, mshr.vpn, mshr, cycle)
        if isinstance(started, WalkSlot):
            self._log("walk_start", cycle, mshr.asid, mshr.vpn)
            self._walk_step(self.walker.advance(started, cycle), cycle)

    def _walk_step(self, step, cycle: int):
        if isinstance(step, NextRequest):
            self._walk_owner[step.request.req_id] = step.slot
            if step.issue_cycle > cycle:
                self._push(step.issue_cycle, _ACCESS, step.request)
            else:
                self._access(step.request, cycle)
        elif step.cycle > cycle:
            self._push(step.cycle, _WALK_DONE, step)
        else:
            self._finish_walk(step, cycle)

    def _finish_walk(self, done: WalkDone, cycle: int):
        mshr = done.slot.mshr
        target = None
        if self.flags.shared_l2_tlb:
            has_token = self.tlb.tokens.has_token(mshr.origin_warp)
            target = self.tlb.l2_fill(mshr.asid, mshr.vpn, done.pfn, has_token).value
        self._log("walk_done", cycle, mshr.asid, mshr.vpn, done.pfn, target)
        self._complete(mshr, done.pfn, cycle)
        for slot in done.resumed:
            self._log("walk_start", cycle, slot.asid, slot.vpn)
            self._walk_step(self.walker.advance(slot, cycle), cycle)

    def _complete(self, mshr: Mshr, pfn: int, cycle: int):
        self.tlb.complete(mshr.asid, mshr.vpn, pfn)
        stalled = len(mshr.stalled_warps)
        self.stats["mshr_completed"] += 1
        self.stats["mshr_stalled_warps"] += stalled
        self.stalled_warps_histogram[stalled] += 1
        self._log("mshr", cycle, mshr.asid, mshr.vpn, stalled)
        for warp_id in sorted(mshr.stalled_warps):
            self._translated(self.warps[warp_id], pfn, cycle)

    def _translated(self, warp: WarpState, pfn: int, cycle: int):
        record = warp.stream[warp.cursor]
        is_write = record.kind == RecordKind.WRITE
        req = MemoryRequest(
            asid=warp.asid,
            vaddr=record.value,
            paddr=pfn * PAGE_SIZE + (record.value & PAGE_OFFSET_MASK),
            is_write=is_write,
            issuing_core=warp.core,
            stalled_warps=set() if is_write else {warp.warp_id},
            issue_cycle=cycle,
            req_id=self.request_ids.next(),
        )
        if is_write:
            self.stats["writes"] += 1
            self._access(req, cycle)
            self._retire(warp, cycle)
            return
        warp.status = WarpStatus.STALLED_DATA
        self._data_owner[req.req_id] = warp
        self._access(req, cycle)

    def _access(self, req: MemoryRequest, cycle: int):
        result = self.l2.access(req, cycle)
        if isinstance(result, HitAfter):
            self._push(cycle + result.latency, _RETURN, req)
        elif result.ready_cycle > cycle:
            self._push(result.ready_cycle, _DRAM_SUBMIT, req)
        else:
            self.dram.submit(req, cycle)

    def _return(self, req: MemoryRequest, cycle: int):
        if req.walk_depth:
            slot = self._walk_owner.pop(req.req_id)
            self._walk_step(self.walker.on_level_complete(slot, cycle), cycle)
        elif not req.is_write:
            self._retire(self._data_owner.pop(req.req_id), cycle)

    def _retire(self, warp: WarpState, cycle: int):
        self.apps[warp.app].instructions += 1
        warp.cursor += 1
        if warp.cursor >= len(warp.stream):
            self._stream_done(warp, cycle)
        else:
            warp.status = WarpStatus.READY
            self.cores[warp.core].ready.add(warp)

    # epochs and flushes

    def _end_epoch(self, cycle: int):
        index = cycle // self.clock.length - 1
        self.clock.index = index + 1
        tokens = self.tlb.tokens.end_epoch(index)
        self.l2.end_epoch()
        self.dram.new_epoch(self.walker.snapshot_concurrent(),
                            self.tlb.mshrs.snapshot_wrp_stalled(), cycle)
        self.token_history.append(tokens)
        self.stats["epochs"] += 1
        self._log("epoch", cycle, index, tokens)

    def flush_core(self, core_id: int):
        """Stop issuing on a core and flush its translations once it has drained."""
        core = self.cores[core_id]
        if not core.warps:
            raise ConfigInvalid(f"core {core_id} runs no application")
        core.draining = True

    def _try_flushes(self, cycle: int):
        for core in self.cores:
            if not core.draining:
                continue
            if any(w.status in (WarpStatus.STALLED_TRANSLATION, WarpStatus.STALLED_DATA)
                   for w in core.warps):
                continue
            removed = self.tlb.flush_core(core.core_id, core.asid)
            removed += self.walker.invalidate_asid(core.asid)
            core.draining = False
            self.completed_flushes.append((core.core_id, cycle))
            self.stats["flushes"] += 1
            self._log("flush", cycle, core.core_id, core.asid, removed)

    # main loop

    def step(self, cycle: int):
        """Advance the machine through one cycle."""
        self.cycle = cycle
        self.started = True
        heap = self._heap
        while heap and heap[0][0] <= cycle:
            _, _, kind, payload = heapq.heappop(heap)
            self._dispatch(kind, payload, cycle)
        if self.first_passes_done and cycle + 1 >= self.min_cycles:
            self.done = True
        if self.done:
            return

        if self.clock.is_boundary(cycle):
            self._end_epoch(cycle)
        self._try_flushes(cycle)

        for service in self.dram.tick(cycle):
            self._push(service.done_cycle, _DRAM_DONE, service.req)

        for core in self.cores:
            if core.draining or not core.ready:
                if core.live_warps:
                    core.stall_cycles += 1
                continue
            self._issue(core, core.pick(), cycle)

    def _next_cycle(self, cycle: int) -> int:
        if any(core.ready and not core.draining for core in self.cores):
            return cycle + 1
        candidates = [self.clock.next_boundary(cycle)]
        if self.first_passes_done:
            candidates.append(self.min_cycles - 1)
        if self._heap:
            candidates.append(self._heap[0][0])
        ready = self.dram.next_ready_cycle(cycle) if self.dram.busy() else -1
        if ready >= 0:
            candidates.append(ready)
        if not self._heap and ready < 0:
            raise RuntimeError(f"simulation stalled at cycle {cycle} with no pending work")
        nxt = max(cycle + 1, min(candidates))
        skipped = nxt - cycle - 1
        if skipped:
            for core in self.cores:
                if core.live_warps:
                    core.stall_cycles += skipped
        return nxt

    def run(self) -> SimResult:
        """Run until every application has completed its first full pass and the
        window has reached ``min_cycles``."""
        logger.info("simulating %s on %s cores", [a.trace.name for a in self.apps],
                    self.partition.counts)
        cycle = self.cycle + 1 if self.started else 0
        truncated = False
        while True:
            self.step(cycle)
            if self.done:
                break
            cycle = self._next_cycle(cycle)
            if cycle >= self.max_cycles:
                logger.warning("stopping at the %d-cycle limit before all apps finished",
                               self.max_cycles)
                truncated = True
                break
        self.end_cycle = cycle + 1
        result = self.result()
        result.truncated = truncated
        logger.info("finished at cycle %d, IPC %s", self.end_cycle,
                    [round(x, 4) for x in result.ipc])
        return result

    # inspection

    def warp_status_counts(self) -> Counter:
        return Counter(w.status for w in self.warps.values())

    def check_invariants(self) -> List[str]:
        """Warp bookkeeping problems; empty when every stalled warp sits in one MSHR."""
        problems = []
        membership = Counter(w for m in self.tlb.mshrs.active() for w in m.stalled_warps)
        for warp in self.warps.values():
            count = membership[warp.warp_id]
            stalled = warp.status == WarpStatus.STALLED_TRANSLATION
            if stalled and count != 1:
                problems.append(f"warp {warp.warp_id} stalled on translation in {count} MSHRs")
            elif not stalled and count:
                problems.append(f"warp {warp.warp_id} is {warp.status.value} but in an MSHR")
        statuses = self.warp_status_counts()
        if self.tlb.mshrs.total_stalled() != statuses[WarpStatus.STALLED_TRANSLATION]:
            problems.append(f"{self.tlb.mshrs.total_stalled()} warps held by MSHRs, "
                            f"{statuses[WarpStatus.STALLED_TRANSLATION]} stalled on translation")
        live = sum(core.live_warps for core in self.cores)
        if live != len(self.warps) - statuses[WarpStatus.FINISHED]:
            problems.append(f"{live} live warps counted, {len(self.warps)} warps of which "
                            f"{statuses[WarpStatus.FINISHED]} finished")
        for core in self.cores:
            live = sum(1 for w in core.warps if w.status != WarpStatus.FINISHED)
            if live != core.live_warps:
                problems.append(f"core {core.core_id}: {live} live warps, counted "
                                f"{core.live_warps}")
            if any(w.asid != core.asid for w in core.warps):
                problems.append(f"core {core.core_id} hosts warps of another ASID")
        return problems

    def collect_counters(self) -> Dict[str, int]:
        """Raw event counters every reported rate is derived from."""
        counters: Dict[str, int] = {"cycles": self.end_cycle or self.cycle + 1}
        tlb_keys = ("l1_hits", "l1_misses", "l2_hits", "l2_misses", "bypass_hits",
                    "bypass_probes", "fills_main", "fills_bypass", "mshr_coalesced")
        for app in self.apps:
            prefix = f"app{app.index}."
            app_stats = self.tlb.stats[app.asid]
            counters[prefix + "instructions"] = app.instructions
            counters[prefix + "passes"] = app.passes
            counters[prefix + "first_pass_cycle"] = (app.first_pass_cycle
                                                     if app.first_pass_cycle is not None else -1)
            for key in tlb_keys:
                counters[prefix + key] = app_stats[key]
        for key in tlb_keys:
            counters[key] = sum(self.tlb.stats[a.asid][key] for a in self.apps)

        for key in ("issued", "writes", "epochs", "flushes", "mshr_completed",
                    "mshr_stalled_warps"):
            counters[key] = self.stats[key]
        counters["core_stall_cycles"] = sum(c.stall_cycles for c in self.cores)
        counters["l2_tlb_port_stall_cycles"] = self.tlb.port_stall_cycles

        walker = self.walker.stats
        counters["walks_started"] = walker["walks_started"]
        counters["walks_completed"] = walker["walks_completed"]
        counters["walk_memory_requests"] = walker["memory_requests"]
        counters["walker_backpressure"] = walker["backpressure"]
        counters["pwc_hits"] = walker["pwc_hits"]
        counters["max_concurrent_walks"] = self.walker.max_concurrent

        l2 = self.l2.stats
        walk_depths = range(1, 8)
        counters["l2c_data_accesses"] = l2[("accesses", 0)]
        counters["l2c_data_hits"] = l2[("hits", 0)]
        counters["l2c_walk_accesses"] = sum(l2[("accesses", d)] for d in walk_depths)
        counters["l2c_walk_hits"] = sum(l2[("hits", d)] for d in walk_depths)
        counters["l2c_walk_bypassed"] = sum(l2[("bypassed", d)] for d in walk_depths)
        counters["l2c_writes"] = l2["writes"]
        counters["l2c_bank_stall_cycles"] = self.l2.array.bank_stall_cycles

        dram = self.dram.stats
        for kind in ("data", "walk"):
            counters[f"dram_{kind}_serviced"] = dram[("serviced", kind)]
            counters[f"dram_{kind}_latency"] = dram[("latency", kind)]
            counters[f"dram_{kind}_row_hits"] = dram[("row_hits", kind)]
            counters[f"dram_{kind}_row_misses"] = dram[("row_misses", kind)]
        for queue in ("golden", "silver", "normal"):
            counters[f"dram_{queue}_serviced"] = dram[("serviced_queue", queue)]
        counters["dram_queue_full_stalls"] = dram["queue_full_stalls"]
        counters["dram_line_size"] = self.dram.geometry.line_size
        return counters

    def result(self) -> SimResult:
        cycles = self.end_cycle or self.cycle + 1
        return SimResult(
            apps=[a.trace.name for a in self.apps],
            partition=self.partition.counts,
            cycles=cycles,
            instructions=[a.instructions for a in self.apps],
            ipc=[a.instructions / cycles for a in self.apps],
            passes=[a.passes for a in self.apps],
            counters=self.collect_counters(),
            stalled_warps_histogram=dict(sorted(self.stalled_warps_histogram.items())),
            concurrent_walks_histogram=dict(sorted(self.walker.concurrency_histogram.items())),
            audit=self.dram.audit(),
            token_history=list(self.token_history),
            events=self.events,
        )


def step(sim: Simulator, cycle: int):
    sim.step(cycle)


def split_channels(num_channels: int, asids: Sequence[int]) -> Dict[int, List[int]]:
    """Equal contiguous channel groups per application (round-robin if too few)."""
    if num_channels >= len(asids):
        groups = np.array_split(np.arange(num_channels), len(asids))
        return {asid: [int(c) for c in group] for asid, group in zip(asids, groups)}
    return {asid: [i % num_channels] for i, asid in enumerate(asids)}


def run_pair(hardware: HardwareConfig, mask: MaskConfig, flags: DesignFlags,
             traces: Sequence[AppTrace], partition: Optional[Partition] = None, seed: int = 1,
             max_cycles: int = DEFAULT_MAX_CYCLES, record_events: bool = False,
             min_cycles: int = 0) -> SimResult:
    """
    Co-run applications until the slowest finishes its first pass.

    Args:
        hardware: Machine parameters
        mask: Epoch and policy parameters
        flags: Design switches
        traces: One trace per application (ASIDs are assigned 1..n in order)
        partition: Cores per application; an equal split when omitted
        seed: Physical frame placement seed
        min_cycles: Keep relaunching finished applications until this many cycles

    Raises:
        ConfigInvalid: On partition violations
    """
    if partition is None:
        partition = Partition.equal(len(traces), hardware.num_cores)
    sim = Simulator(hardware, mask, flags, traces, partition, seed, record_events, max_cycles,
                    min_cycles)
    return sim.run()


def run_solo(hardware: HardwareConfig, mask: MaskConfig, flags: DesignFlags, trace: AppTrace,
             cores: int, seed: int = 1, max_cycles: int = DEFAULT_MAX_CYCLES,
             window: int = 0) -> SimResult:
    """
    Run one application alone on ``cores`` cores with unpartitioned L2 and DRAM.

    With ``window`` set to a co-run's cycle count, the application relaunches
    like it does in the co-run, so its IPC covers the same warm passes.
    """
    solo_flags = flags.model_copy(update={"static_partition": False})
    return run_pair(hardware, mask, solo_flags, [trace], Partition.from_counts([cores]), seed,
                    max_cycles, min_cycles=window)


@dataclass
class SplitCandidate:
    counts: List[int]
    weighted_speedup: float
    shared: SimResult
    ipc_alone: List[float]


@dataclass
class PartitionChoice:
    partition: Partition
    weighted_speedup: float
    shared: SimResult
    ipc_alone: List[float]
    candidates: List[SplitCandidate]


def partition_sweep(hardware: HardwareConfig, mask: MaskConfig, flags: DesignFlags,
                    traces: Sequence[AppTrace], seed: int = 1,
                    max_cycles: int = DEFAULT_MAX_CYCLES,
                    solo_cache: Optional[Dict[Tuple[int, int, int], SimResult]] = None
                    ) -> PartitionChoice:
    """
    Evaluate every contiguous two-way core split and keep the best.

    IPC_alone is measured per candidate on the same number of cores over the
    candidate's co-run window, cached by (app index, cores, window). Ties in
    weighted speedup go to the more balanced split, then to the one giving the
    first app fewer cores.
    """
    if len(traces) != 2:
        raise ConfigInvalid(f"partition sweep needs 2 apps, got {len(traces)}")
    n = hardware.num_cores
    if n < 2:
        raise ConfigInvalid("partition sweep needs at least 2 cores")
    solo_cache = {} if solo_cache is None else solo_cache

    def alone(app: int, cores: int, window: int) -> float:
        key = (app, cores, window)
        if key not in solo_cache:
            solo_cache[key] = run_solo(hardware, mask, flags, traces[app], cores, seed, max_cycles,
                                       window)
        return solo_cache[key].ipc[0]

    candidates = []
    for k in range(1, n):
        counts = [k, n - k]
        shared = run_pair(hardware, mask, flags, traces, Partition.from_counts(counts), seed,
                          max_cycles)
        ipc_alone = [alone(0, k, shared.cycles), alone(1, n - k, shared.cycles)]
        ws = weighted_speedup(shared.ipc, ipc_alone)
        candidates.append(SplitCandidate(counts, ws, shared, ipc_alone))
        logger.debug("split %s: weighted speedup %.4f", counts, ws)

    best = max(candidates, key=lambda c: (c.weighted_speedup, -abs(c.counts[0] - c.counts[1]),
                                          -c.counts[0]))
    return PartitionChoice(Partition.from_counts(best.counts), best.weighted_speedup,
                           best.shared, best.ipc_alone, candidates)
