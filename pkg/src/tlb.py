"""
Translation lookaside buffers.

Private per-core L1 TLBs, the shared ASID-tagged L2 TLB with its MSHR file,
the small bypass cache filled by warps without tokens, and the epoch-driven
token controller that decides which warps may fill the shared TLB.
"""
import logging
import math
from collections import Counter, OrderedDict, defaultdict
from dataclasses import dataclass
from enum import Enum
from typing import Dict, Iterable, List, Optional, Set, Tuple

from .addressing import Asid

logger = logging.getLogger(__name__)

TOKEN_COUNT_BITS = 15
TLB_COUNTER_BITS = 16
MSHR_WARP_COUNTER_BITS = 6

TlbKey = Tuple[Asid, int]


class SaturatingCounter:
    """Unsigned counter that sticks at its maximum instead of wrapping."""

    __slots__ = ("bits", "max_value", "value")

    def __init__(self, bits: int):
        self.bits = bits
        self.max_value = (1 << bits) - 1
        self.value = 0

    def increment(self, amount: int = 1):
        self.value = min(self.max_value, self.value + amount)

    def observe(self, sample: int):
        """Keep the running maximum of ``sample``."""
        self.value = max(self.value, min(sample, self.max_value))

    def reset(self):
        self.value = 0

    def __int__(self) -> int:
        return self.value

    def __repr__(self) -> str:
        return f"SaturatingCounter({self.bits}, value={self.value})"


class TlbEntry:
    __slots__ = ("asid", "vpn", "pfn", "lru_stamp")

    def __init__(self, asid: Asid, vpn: int, pfn: int, lru_stamp: int):
        self.asid = asid
        self.vpn = vpn
        self.pfn = pfn
        self.lru_stamp = lru_stamp

    def __repr__(self) -> str:
        return f"TlbEntry(asid={self.asid}, vpn={self.vpn:#x}, pfn={self.pfn:#x})"


class TlbArray:
    """Set-associative, ASID-tagged translation store with LRU replacement."""

    def __init__(self, num_entries: int, associativity: int):
        """
        Args:
            num_entries: Total entries; 0 disables the structure
            associativity: Ways per set; 0 or ``num_entries`` means fully associative
        """
        if num_entries < 0 or associativity < 0:
            raise ValueError("TLB geometry must be non-negative")
        if associativity == 0 or associativity > num_entries:
            associativity = num_entries
        if num_entries and num_entries % associativity:
            raise ValueError(f"{num_entries} entries do not divide into {associativity} ways")
        self.num_entries = num_entries
        self.associativity = associativity
        self.num_sets = num_entries // associativity if num_entries else 0
        self._sets: List["OrderedDict[TlbKey, TlbEntry]"] = [
            OrderedDict() for _ in range(self.num_sets)
        ]
        self._stamp = 0
        self.hit_counter = SaturatingCounter(TLB_COUNTER_BITS)
        self.miss_counter = SaturatingCounter(TLB_COUNTER_BITS)

    @property
    def enabled(self) -> bool:
        return self.num_entries > 0

    @property
    def geometry(self) -> Tuple[int, int]:
        return self.num_sets, self.associativity

    def _set_for(self, vpn: int) -> "OrderedDict[TlbKey, TlbEntry]":
        return self._sets[vpn % self.num_sets]

    def _touch(self, entries, key: TlbKey, entry: TlbEntry):
        self._stamp += 1
        entry.lru_stamp = self._stamp
        entries.move_to_end(key)

    def probe(self, asid: Asid, vpn: int) -> Optional[TlbEntry]:
        """Look up a translation, refresh LRU on a hit and count the outcome."""
        entry = self.lookup(asid, vpn)
        if entry is None:
            self.miss_counter.increment()
        else:
            self.hit_counter.increment()
        return entry

    def lookup(self, asid: Asid, vpn: int) -> Optional[TlbEntry]:
        """Look up without counting; refreshes LRU on a hit."""
        if not self.num_sets:
            return None
        entries = self._set_for(vpn)
        key = (asid, vpn)
        entry = entries.get(key)
        if entry is not None:
            self._touch(entries, key, entry)
        return entry

    def contains(self, asid: Asid, vpn: int) -> bool:
        return bool(self.num_sets) and (asid, vpn) in self._set_for(vpn)

    def insert(self, asid: Asid, vpn: int, pfn: int) -> Optional[TlbEntry]:
        """
        Fill a translation, evicting the set's LRU entry when full.

        Returns:
            The evicted entry, if any
        """
        if not self.num_sets:
            return None
        entries = self._set_for(vpn)
        key = (asid, vpn)
        entry = entries.get(key)
        if entry is not None:
            entry.pfn = pfn
            self._touch(entries, key, entry)
            return None
        victim = None
        if len(entries) >= self.associativity:
            _, victim = entries.popitem(last=False)
        entry = TlbEntry(asid, vpn, pfn, 0)
        entries[key] = entry
        self._touch(entries, key, entry)
        return victim

    def invalidate(self, asid: Asid, vpn: int) -> bool:
        if not self.num_sets:
            return False
        return self._set_for(vpn).pop((asid, vpn), None) is not None

    def invalidate_asid(self, asid: Asid) -> int:
        removed = 0
        for entries in self._sets:
            for key in [k for k in entries if k[0] == asid]:
                del entries[key]
                removed += 1
        return removed

    def clear(self):
        for entries in self._sets:
            entries.clear()

    def keys(self) -> Set[TlbKey]:
        return {key for entries in self._sets for key in entries}

    def __len__(self) -> int:
        return sum(len(entries) for entries in self._sets)


class BypassCache(TlbArray):
    """Small fully associative store for fills from warps without tokens."""

    def __init__(self, num_entries: int = 32):
        super().__init__(num_entries, num_entries)


class Mshr:
    """In-flight translation miss and the warps coalesced onto it."""

    __slots__ = ("asid", "vpn", "stalled_warps", "cores", "max_warps_observed",
                 "origin_warp", "open_cycle", "walking")

    def __init__(self, asid: Asid, vpn: int, origin_warp: int, core: int, cycle: int):
        self.asid = asid
        self.vpn = vpn
        self.stalled_warps: Set[int] = set()
        self.cores: Set[int] = set()
        self.max_warps_observed = SaturatingCounter(MSHR_WARP_COUNTER_BITS)
        self.origin_warp = origin_warp
        self.open_cycle = cycle
        self.walking = False
        self.add_warp(origin_warp, core)

    @property
    def key(self) -> TlbKey:
        return self.asid, self.vpn

    def add_warp(self, warp: int, core: int):
        self.stalled_warps.add(warp)
        self.cores.add(core)
        self.max_warps_observed.observe(len(self.stalled_warps))


class MshrFile:
    """One MSHR per in-flight (asid, vpn), plus per-app stalled-warp maxima."""

    def __init__(self):
        self._mshrs: Dict[TlbKey, Mshr] = {}
        self.wrp_stalled: Dict[Asid, SaturatingCounter] = defaultdict(
            lambda: SaturatingCounter(MSHR_WARP_COUNTER_BITS)
        )

    def get(self, asid: Asid, vpn: int) -> Optional[Mshr]:
        return self._mshrs.get((asid, vpn))

    def open(self, asid: Asid, vpn: int, warp: int, core: int, cycle: int) -> Mshr:
        if (asid, vpn) in self._mshrs:
            raise ValueError(f"MSHR for asid {asid} vpn {vpn:#x} already open")
        mshr = Mshr(asid, vpn, warp, core, cycle)
        self._mshrs[mshr.key] = mshr
        self.wrp_stalled[asid].observe(1)
        return mshr

    def join(self, mshr: Mshr, warp: int, core: int):
        mshr.add_warp(warp, core)
        self.wrp_stalled[mshr.asid].observe(int(mshr.max_warps_observed))

    def close(self, asid: Asid, vpn: int) -> Mshr:
        return self._mshrs.pop((asid, vpn))

    def active(self) -> List[Mshr]:
        return list(self._mshrs.values())

    def total_stalled(self) -> int:
        return sum(len(m.stalled_warps) for m in self._mshrs.values())

    def snapshot_wrp_stalled(self, reset: bool = True) -> Dict[Asid, int]:
        snapshot = {asid: int(counter) for asid, counter in self.wrp_stalled.items()}
        if reset:
            for counter in self.wrp_stalled.values():
                counter.reset()
            # still-open MSHRs carry over into the new epoch
            for mshr in self._mshrs.values():
                self.wrp_stalled[mshr.asid].observe(len(mshr.stalled_warps))
        return snapshot

    def __len__(self) -> int:
        return len(self._mshrs)

    def __contains__(self, key: TlbKey) -> bool:
        return key in self._mshrs


class TokenState:
    """Token bookkeeping of one application."""

    def __init__(self, asid: Asid, warps: Iterable[int], initial_direction: int = -1):
        self.asid = asid
        # global warp ids in (core id, warp id) order
        self.warps: List[int] = list(warps)
        self.token_count = len(self.warps)
        self.direction = initial_direction
        self.epoch_hits = 0
        self.epoch_misses = 0
        self.prev_miss_rate: Optional[float] = None
        self.holders: Set[int] = set(self.warps)
        self.cursor = 0

    @property
    def total_warps(self) -> int:
        return len(self.warps)

    def record(self, hit: bool):
        if hit:
            self.epoch_hits += 1
        else:
            self.epoch_misses += 1


def epoch_update(tokens: TokenState, epoch_index: int, initial_tokens: float = 0.8,
                 step: Optional[int] = None) -> int:
    """
    Recompute an application's token count at the end of epoch ``epoch_index``.

    The first boundary seeds ``floor(initial_tokens * total warps)``; later
    boundaries hill-climb on the shared TLB miss rate, keeping the direction
    while the miss rate falls and flipping it otherwise (ties flip).

    Args:
        tokens: Token state of the application
        epoch_index: Index of the epoch that just ended (0 = first)
        initial_tokens: Fraction of warps holding tokens after the first epoch
        step: Token increment; defaults to 1/16 of the application's warps, 0 keeps the count

    Returns:
        The new token count
    """
    total = tokens.total_warps
    cap = min(total, (1 << TOKEN_COUNT_BITS) - 1)
    if step is None:
        step = max(1, total // 16)
    accesses = tokens.epoch_hits + tokens.epoch_misses
    miss_rate = tokens.epoch_misses / accesses if accesses else None

    if epoch_index == 0:
        tokens.token_count = max(0, min(cap, math.floor(initial_tokens * total + 1e-9)))
        tokens.prev_miss_rate = miss_rate
    elif miss_rate is not None:
        if tokens.prev_miss_rate is not None:
            if not miss_rate < tokens.prev_miss_rate:
                tokens.direction = -tokens.direction
            stepped = tokens.token_count + tokens.direction * step
            tokens.token_count = max(min(1, cap), min(cap, stepped))
        tokens.prev_miss_rate = miss_rate

    tokens.epoch_hits = 0
    tokens.epoch_misses = 0
    logger.debug("asid %d epoch %d: miss rate %s -> %d tokens (direction %+d)",
                 tokens.asid, epoch_index, miss_rate, tokens.token_count, tokens.direction)
    return tokens.token_count


def assign_tokens(tokens: TokenState) -> Dict[int, bool]:
    """
    Hand out ``token_count`` tokens to the application's warps.

    Prior holders keep their token first; remaining tokens go round-robin in
    (core, warp) order starting where the previous assignment stopped.

    Returns:
        Per-warp token map
    """
    warps = tokens.warps
    n = len(warps)
    count = max(0, min(tokens.token_count, n))
    if n == 0:
        tokens.holders = set()
        return {}

    order = [warps[(tokens.cursor + i) % n] for i in range(n)]
    new_holders = [w for w in order if w in tokens.holders][:count]
    chosen = set(new_holders)
    last_added = None
    for position, warp in enumerate(order):
        if len(chosen) >= count:
            break
        if warp not in chosen:
            chosen.add(warp)
            last_added = position
    if last_added is not None:
        tokens.cursor = (tokens.cursor + last_added + 1) % n
    tokens.holders = chosen
    return {warp: warp in chosen for warp in warps}


class TokenController:
    """Per-application token states and the warp -> token lookup."""

    def __init__(self, enabled: bool, initial_tokens: float = 0.8, step: Optional[int] = None):
        self.enabled = enabled
        self.initial_tokens = initial_tokens
        self.step = step
        self.apps: Dict[Asid, TokenState] = {}
        self._has_token: Dict[int, bool] = {}

    def register_app(self, asid: Asid, warps: Iterable[int]):
        state = TokenState(asid, warps)
        self.apps[asid] = state
        for warp in state.warps:
            self._has_token[warp] = True

    def has_token(self, warp: int) -> bool:
        if not self.enabled:
            return True
        return self._has_token.get(warp, True)

    def record_access(self, asid: Asid, hit: bool):
        state = self.apps.get(asid)
        if state is not None:
            state.record(hit)

    def end_epoch(self, epoch_index: int) -> Dict[Asid, int]:
        """Update every application's count and reassign tokens."""
        counts = {}
        for asid in sorted(self.apps):
            state = self.apps[asid]
            counts[asid] = epoch_update(state, epoch_index, self.initial_tokens, self.step)
            if self.enabled:
                self._has_token.update(assign_tokens(state))
        return counts


class ProbeOutcome(Enum):
    HIT = "hit"
    MISS = "miss"
    COALESCED = "coalesced"


class FillTarget(Enum):
    MAIN = "main"
    BYPASS = "bypass"


@dataclass
class L1Result:
    outcome: ProbeOutcome
    pfn: Optional[int] = None
    mshr: Optional[Mshr] = None


@dataclass
class L2Result:
    hit: bool
    pfn: Optional[int] = None
    source: Optional[str] = None


class TlbHierarchy:
    """L1 TLBs, shared L2 TLB, bypass cache, MSHR file and tokens of one GPU."""

    def __init__(self, num_cores: int, l1_entries: int = 64, l1_assoc: int = 0,
                 l2_entries: int = 512, l2_assoc: int = 16, bypass_entries: int = 0,
                 shared_l2: bool = True, tokens_enabled: bool = False,
                 initial_tokens: float = 0.8, token_step: Optional[int] = None,
                 l2_ports: int = 16, l2_latency: int = 10, l1_latency: int = 1):
        self.l1 = [TlbArray(l1_entries, l1_assoc) for _ in range(num_cores)]
        self.shared_l2 = shared_l2
        self.l2 = TlbArray(l2_entries if shared_l2 else 0, l2_assoc)
        self.bypass = BypassCache(bypass_entries if shared_l2 else 0)
        self.mshrs = MshrFile()
        self.tokens = TokenController(tokens_enabled, initial_tokens, token_step)
        self.l1_latency = l1_latency
        self.l2_latency = l2_latency
        self._port_free = [0] * max(1, l2_ports)
        self.port_stall_cycles = 0
        self.stats: Dict[Asid, Counter] = defaultdict(Counter)

    def l1_probe(self, core: int, asid: Asid, vpn: int, warp: int, cycle: int) -> L1Result:
        """
        Probe a core's private TLB.

        A miss whose page is already in flight joins the existing MSHR;
        otherwise a new MSHR is opened and the caller forwards it to the L2.
        """
        entry = self.l1[core].probe(asid, vpn)
        stats = self.stats[asid]
        if entry is not None:
            stats["l1_hits"] += 1
            return L1Result(ProbeOutcome.HIT, pfn=entry.pfn)
        stats["l1_misses"] += 1
        mshr = self.mshrs.get(asid, vpn)
        if mshr is not None:
            self.mshrs.join(mshr, warp, core)
            stats["mshr_coalesced"] += 1
            return L1Result(ProbeOutcome.COALESCED, mshr=mshr)
        mshr = self.mshrs.open(asid, vpn, warp, core, cycle)
        return L1Result(ProbeOutcome.MISS, mshr=mshr)

    def record_ideal_hit(self, asid: Asid):
        self.stats[asid]["l1_hits"] += 1

    def l2_ready_cycle(self, vpn: int, arrival: int) -> int:
        """Cycle at which an L2 probe arriving at ``arrival`` completes."""
        port = vpn % len(self._port_free)
        start = max(arrival, self._port_free[port])
        self.port_stall_cycles += start - arrival
        self._port_free[port] = start + 1
        return start + self.l2_latency

    def l2_probe(self, asid: Asid, vpn: int, cycle: int) -> L2Result:
        """Probe the shared TLB and the bypass cache in parallel."""
        stats = self.stats[asid]
        entry = self.l2.probe(asid, vpn)
        source = "main"
        if entry is None and self.bypass.enabled:
            stats["bypass_probes"] += 1
            entry = self.bypass.probe(asid, vpn)
            source = "bypass"
        hit = entry is not None
        self.tokens.record_access(asid, hit)
        if not hit:
            stats["l2_misses"] += 1
            mshr = self.mshrs.get(asid, vpn)
            if mshr is not None:
                mshr.walking = True
            return L2Result(False)
        stats["l2_hits"] += 1
        if source == "bypass":
            stats["bypass_hits"] += 1
        return L2Result(True, pfn=entry.pfn, source=source)

    def l2_fill(self, asid: Asid, vpn: int, pfn: int, warp_has_token: bool) -> FillTarget:
        """Token holders fill the shared TLB; other warps fill the bypass cache."""
        if warp_has_token or not self.bypass.enabled:
            self.bypass.invalidate(asid, vpn)
            self.l2.insert(asid, vpn, pfn)
            self.stats[asid]["fills_main"] += 1
            return FillTarget.MAIN
        self.l2.invalidate(asid, vpn)
        self.bypass.insert(asid, vpn, pfn)
        self.stats[asid]["fills_bypass"] += 1
        return FillTarget.BYPASS

    def complete(self, asid: Asid, vpn: int, pfn: int) -> Mshr:
        """Close an MSHR and fill the L1 TLB of every core waiting on it."""
        mshr = self.mshrs.close(asid, vpn)
        for core in sorted(mshr.cores):
            self.l1[core].insert(asid, vpn, pfn)
        return mshr

    def flush_core(self, core: int, asid: Asid) -> int:
        """
        Flush a core switching address spaces.

        Empties the core's L1 TLB and drops every shared-TLB and bypass-cache
        entry tagged with the outgoing ASID. In-flight requests of the core must
        already be drained.

        Returns:
            Number of shared entries removed
        """
        if any(core in m.cores for m in self.mshrs.active()):
            raise RuntimeError(f"core {core} still has translations in flight")
        self.l1[core].clear()
        return self.l2.invalidate_asid(asid) + self.bypass.invalidate_asid(asid)
