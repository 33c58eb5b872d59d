"""
Multi-channel DRAM model.

Each channel keeps per-bank row buffers and serves requests either from one
FR-FCFS queue (baseline) or from three prioritized queues: Golden for page
walk reads, Silver for the data requests of one quota-selected application,
and Normal for everything else.
"""
import logging
from collections import Counter, deque
from dataclasses import dataclass
from enum import Enum
from typing import Deque, Dict, Iterable, List, Optional, Sequence, Tuple

from .addressing import Asid, MemoryRequest

logger = logging.getLogger(__name__)

MAX_AUDIT_PROBLEMS = 10


class QueueFull(RuntimeError):
    """Raised when the target queue of a channel has no free entry."""

    def __init__(self, channel: int, queue: "QueueId"):
        super().__init__(f"channel {channel}: {queue.value} queue full")
        self.channel = channel
        self.queue = queue


class QueueId(Enum):
    GOLDEN = "golden"
    SILVER = "silver"
    NORMAL = "normal"


@dataclass(frozen=True)
class DramGeometry:
    channels: int = 8
    banks: int = 8
    row_size: int = 2048
    line_size: int = 128
    row_hit_latency: int = 20
    row_miss_latency: int = 60
    burst_cycles: int = 2
    row_policy: str = "open"

    @property
    def lines_per_row(self) -> int:
        return max(1, self.row_size // self.line_size)


class AddressMapper:
    """Line address split as channel | column | bank | row, channel lowest.

    Consecutive lines of one channel share a row until the row is full.
    ``channel_sets`` restricts an application to a subset of channels (the
    static partitioning design).
    """

    def __init__(self, geometry: DramGeometry,
                 channel_sets: Optional[Dict[Asid, Sequence[int]]] = None):
        self.geometry = geometry
        self.line_shift = geometry.line_size.bit_length() - 1
        self.channel_sets = {asid: list(chans) for asid, chans in (channel_sets or {}).items()}
        self._all = list(range(geometry.channels))

    def decode(self, asid: Asid, paddr: int) -> Tuple[int, int, int]:
        line = paddr >> self.line_shift
        channels = self.channel_sets.get(asid, self._all)
        channel = channels[line % len(channels)]
        rest = line // len(channels) // self.geometry.lines_per_row
        bank = rest % self.geometry.banks
        row = rest // self.geometry.banks
        return channel, bank, row


def compute_quotas(thres_max: int, per_app: Sequence[Tuple[int, int]]) -> List[int]:
    """
    Silver-queue quotas: each application's share of ``thres_max`` in
    proportion to ``Concurrent_i * WrpStalled_i``.

    Args:
        thres_max: Total Silver admissions to distribute
        per_app: (Concurrent_i, WrpStalled_i) per application

    Returns:
        thres_i per application, floored; an equal split when every product is 0
    """
    if not per_app:
        return []
    products = [max(0, c) * max(0, w) for c, w in per_app]
    total = sum(products)
    if total == 0:
        return [thres_max // len(per_app)] * len(per_app)
    return [thres_max * p // total for p in products]


class SilverRotation:
    """Which application currently owns the Silver queue, and its remaining quota."""

    def __init__(self, apps: Iterable[Asid], thres_max: int = 500, idle_window: int = 1000):
        self.apps: List[Asid] = sorted(apps)
        self.thres_max = thres_max
        self.idle_window = idle_window
        self.thres: Dict[Asid, int] = {}
        self.remaining: Dict[Asid, int] = {}
        self.concurrent: Dict[Asid, int] = {}
        self.wrp_stalled: Dict[Asid, int] = {}
        self.current_app: Optional[Asid] = None
        self.last_activity = 0
        self.admitted: Counter = Counter()
        self.set_counters({}, {}, cycle=0)

    @property
    def remaining_quota(self) -> int:
        return self.remaining.get(self.current_app, 0) if self.current_app is not None else 0

    def set_counters(self, concurrent: Dict[Asid, int], wrp_stalled: Dict[Asid, int], cycle: int):
        """Recompute every quota from one epoch's counter snapshot."""
        self.concurrent = {a: concurrent.get(a, 0) for a in self.apps}
        self.wrp_stalled = {a: wrp_stalled.get(a, 0) for a in self.apps}
        quotas = compute_quotas(self.thres_max,
                                [(self.concurrent[a], self.wrp_stalled[a]) for a in self.apps])
        self.thres = dict(zip(self.apps, quotas))
        self.remaining = dict(self.thres)
        self.admitted = Counter()
        start = self.apps.index(self.current_app) if self.current_app in self.apps else 0
        self.current_app = None
        self._select_from(start, cycle)

    def _select_from(self, start: int, cycle: int):
        n = len(self.apps)
        for offset in range(n):
            app = self.apps[(start + offset) % n]
            if self.remaining.get(app, 0) > 0:
                self.current_app = app
                self.last_activity = cycle
                return
        self.current_app = None

    def advance(self, cycle: int):
        if self.current_app is None:
            return
        position = self.apps.index(self.current_app)
        self.current_app = None
        self._select_from(position + 1, cycle)

    def tick(self, cycle: int):
        if self.current_app is not None and cycle - self.last_activity >= self.idle_window:
            self.advance(cycle)

    def admit(self, asid: Asid, cycle: int) -> bool:
        """Consume one unit of quota if ``asid`` holds the Silver turn."""
        if asid != self.current_app or self.remaining[asid] <= 0:
            return False
        self.remaining[asid] -= 1
        self.admitted[asid] += 1
        self.last_activity = cycle
        if self.remaining[asid] == 0:
            self.advance(cycle)
        return True

    def note_activity(self, asid: Asid, cycle: int):
        if asid == self.current_app:
            self.last_activity = cycle


class _Queued:
    __slots__ = ("req", "bank", "row", "arrival")

    def __init__(self, req: MemoryRequest, bank: int, row: int, arrival: int):
        self.req = req
        self.bank = bank
        self.row = row
        self.arrival = arrival


@dataclass
class Service:
    req: MemoryRequest
    channel: int
    queue: QueueId
    row_hit: bool
    start_cycle: int
    done_cycle: int


def oldest_ready_pick(queue: Sequence[_Queued], bank_free: Sequence[int],
                      cycle: int) -> Optional[int]:
    """Index of the oldest request whose bank is free."""
    for index, item in enumerate(queue):
        if bank_free[item.bank] <= cycle:
            return index
    return None


def frfcfs_pick(queue: Sequence[_Queued], open_rows: Sequence[Optional[int]],
                bank_free: Sequence[int], cycle: int) -> Optional[int]:
    """Index of the oldest ready row-buffer hit, else of the oldest ready request."""
    oldest = None
    for index, item in enumerate(queue):
        if bank_free[item.bank] > cycle:
            continue
        if open_rows[item.bank] == item.row:
            return index
        if oldest is None:
            oldest = index
    return oldest


class DramChannel:
    """Queues, bank state and data bus of one channel."""

    def __init__(self, index: int, geometry: DramGeometry, mask_scheduler: bool,
                 golden_size: int = 16, silver_size: int = 64, normal_size: int = 192):
        self.index = index
        self.geometry = geometry
        self.mask_scheduler = mask_scheduler
        self.golden: Deque[_Queued] = deque()
        self.silver: List[_Queued] = []
        self.normal: List[_Queued] = []
        if mask_scheduler:
            self.capacity = {QueueId.GOLDEN: golden_size, QueueId.SILVER: silver_size,
                             QueueId.NORMAL: normal_size}
        else:
            self.capacity = {QueueId.GOLDEN: 0, QueueId.SILVER: 0,
                             QueueId.NORMAL: golden_size + silver_size + normal_size}
        self.open_rows: List[Optional[int]] = [None] * geometry.banks
        self.bank_free = [0] * geometry.banks
        self.bus_free = 0
        self.walk_backlog: Deque[Tuple[MemoryRequest, int]] = deque()
        self.data_backlog: Deque[Tuple[MemoryRequest, int]] = deque()

    def queue(self, queue_id: QueueId):
        return {QueueId.GOLDEN: self.golden, QueueId.SILVER: self.silver,
                QueueId.NORMAL: self.normal}[queue_id]

    def has_room(self, queue_id: QueueId) -> bool:
        return len(self.queue(queue_id)) < self.capacity[queue_id]

    def push(self, queue_id: QueueId, item: _Queued):
        self.queue(queue_id).append(item)

    def occupancy(self) -> int:
        return len(self.golden) + len(self.silver) + len(self.normal)

    def pending(self) -> int:
        return self.occupancy() + len(self.walk_backlog) + len(self.data_backlog)

    def schedule(self, cycle: int) -> Optional[Tuple[QueueId, _Queued]]:
        """Pick the request to service this cycle, if the bus and a bank allow one."""
        if cycle < self.bus_free:
            return None
        if self.golden:
            # arrival order among walks to free banks; a busy bank does not block the rest
            index = oldest_ready_pick(self.golden, self.bank_free, cycle)
            if index is not None:
                item = self.golden[index]
                del self.golden[index]
                return QueueId.GOLDEN, item
        for queue_id in (QueueId.SILVER, QueueId.NORMAL):
            queue = self.queue(queue_id)
            if not queue:
                continue
            index = frfcfs_pick(queue, self.open_rows, self.bank_free, cycle)
            if index is not None:
                return queue_id, queue.pop(index)
        return None

    def service(self, item: _Queued, cycle: int) -> Tuple[bool, int]:
        """Occupy the bank and bus; returns (row hit, completion cycle)."""
        geometry = self.geometry
        row_hit = self.open_rows[item.bank] == item.row
        latency = geometry.row_hit_latency if row_hit else geometry.row_miss_latency
        self.bank_free[item.bank] = cycle + latency
        self.bus_free = cycle + geometry.burst_cycles
        self.open_rows[item.bank] = item.row if geometry.row_policy == "open" else None
        return row_hit, cycle + latency


class DramController:
    """All channels plus the Silver rotation shared between them."""

    def __init__(self, geometry: DramGeometry, apps: Iterable[Asid], mask_scheduler: bool = False,
                 golden_size: int = 16, silver_size: int = 64, normal_size: int = 192,
                 thres_max: int = 500, idle_window: int = 1000,
                 channel_sets: Optional[Dict[Asid, Sequence[int]]] = None,
                 event_log: Optional[list] = None):
        self.geometry = geometry
        self.mask_scheduler = mask_scheduler
        self.mapper = AddressMapper(geometry, channel_sets)
        self.channels = [DramChannel(i, geometry, mask_scheduler, golden_size, silver_size,
                                     normal_size) for i in range(geometry.channels)]
        self.rotation = SilverRotation(apps, thres_max, idle_window)
        self.event_log = event_log
        self.stats: Counter = Counter()
        self.silver_admissions: List[Dict[Asid, int]] = []
        self.silver_quotas: List[Dict[Asid, int]] = []
        # queued request ids, removed when service starts
        self._outstanding = set()
        self._problems: List[str] = []

    def _problem(self, message: str):
        self.stats["audit_problems"] += 1
        if len(self._problems) < MAX_AUDIT_PROBLEMS:
            self._problems.append(message)

    def _classify(self, req: MemoryRequest, cycle: int, channel: DramChannel) -> QueueId:
        if not self.mask_scheduler:
            if not channel.has_room(QueueId.NORMAL):
                raise QueueFull(channel.index, QueueId.NORMAL)
            return QueueId.NORMAL
        if req.walk_depth >= 1:
            if not channel.has_room(QueueId.GOLDEN):
                raise QueueFull(channel.index, QueueId.GOLDEN)
            return QueueId.GOLDEN
        self.rotation.note_activity(req.asid, cycle)
        if (req.asid == self.rotation.current_app and channel.has_room(QueueId.SILVER)
                and self.rotation.admit(req.asid, cycle)):
            return QueueId.SILVER
        if not channel.has_room(QueueId.NORMAL):
            raise QueueFull(channel.index, QueueId.NORMAL)
        return QueueId.NORMAL

    def enqueue(self, req: MemoryRequest, cycle: int) -> QueueId:
        """
        Place a request in its channel's queue.

        Raises:
            QueueFull: If the target queue has no room; nothing is changed
        """
        channel_index, bank, row = self.mapper.decode(req.asid, req.paddr)
        channel = self.channels[channel_index]
        queue_id = self._classify(req, cycle, channel)
        channel.push(queue_id, _Queued(req, bank, row, cycle))
        if req.req_id in self._outstanding:
            self._problem(f"request {req.req_id} enqueued twice")
        self._outstanding.add(req.req_id)
        self.stats["enqueued"] += 1
        self.stats[("enqueued", queue_id.value)] += 1
        return queue_id

    def submit(self, req: MemoryRequest, cycle: int):
        """Hand a request to DRAM; a full queue holds it upstream until room frees."""
        req.dram_enqueue_cycle = cycle
        channel_index, _, _ = self.mapper.decode(req.asid, req.paddr)
        channel = self.channels[channel_index]
        backlog = channel.walk_backlog if req.walk_depth >= 1 else channel.data_backlog
        if not backlog:
            try:
                self.enqueue(req, cycle)
                return
            except QueueFull:
                self.stats["queue_full_stalls"] += 1
        backlog.append((req, cycle))

    def _drain_backlogs(self, channel: DramChannel, cycle: int):
        for backlog in (channel.walk_backlog, channel.data_backlog):
            while backlog:
                req, _ = backlog[0]
                try:
                    self.enqueue(req, cycle)
                except QueueFull:
                    break
                backlog.popleft()

    def tick(self, cycle: int) -> List[Service]:
        """Advance every channel by one cycle; returns the requests started."""
        if self.mask_scheduler:
            self.rotation.tick(cycle)
        started = []
        for channel in self.channels:
            if channel.walk_backlog or channel.data_backlog:
                self._drain_backlogs(channel, cycle)
            if not channel.occupancy():
                continue
            picked = channel.schedule(cycle)
            if picked is None:
                continue
            queue_id, item = picked
            row_hit, done = channel.service(item, cycle)
            req = item.req
            if req.req_id in self._outstanding:
                self._outstanding.remove(req.req_id)
            else:
                self._problem(f"request {req.req_id} serviced twice or never enqueued")
            kind = "walk" if req.walk_depth >= 1 else "data"
            self.stats["started"] += 1
            self.stats[("serviced", kind)] += 1
            self.stats[("latency", kind)] += done - req.dram_enqueue_cycle
            self.stats[("row_hits" if row_hit else "row_misses", kind)] += 1
            self.stats[("serviced_queue", queue_id.value)] += 1
            if self.event_log is not None:
                self.event_log.append(("dram", cycle, channel.index, req.req_id, queue_id.value,
                                       req.walk_depth, row_hit, done, req.dram_enqueue_cycle))
            started.append(Service(req, channel.index, queue_id, row_hit, cycle, done))
        return started

    def new_epoch(self, concurrent: Dict[Asid, int], wrp_stalled: Dict[Asid, int], cycle: int):
        """Snapshot the epoch's counters into fresh Silver quotas."""
        self.silver_admissions.append(dict(self.rotation.admitted))
        self.silver_quotas.append(dict(self.rotation.thres))
        self.rotation.set_counters(concurrent, wrp_stalled, cycle)
        if self.mask_scheduler:
            logger.debug("silver quotas: %s", self.rotation.thres)

    def busy(self) -> bool:
        return any(channel.pending() for channel in self.channels)

    def next_ready_cycle(self, cycle: int) -> int:
        """Earliest cycle at which some queued request could be scheduled."""
        best = None
        for channel in self.channels:
            if channel.walk_backlog or channel.data_backlog:
                return cycle + 1
            if not channel.occupancy():
                continue
            banks = {item.bank for q in (channel.golden, channel.silver, channel.normal)
                     for item in q}
            ready = max(channel.bus_free, min(channel.bank_free[b] for b in banks))
            best = ready if best is None else min(best, ready)
        return max(cycle + 1, best) if best is not None else -1

    def audit(self) -> List[str]:
        """
        Request conservation check.

        Returns:
            Problems found; empty when every enqueued request was serviced
            exactly once or is still queued
        """
        problems = list(self._problems)
        hidden = self.stats["audit_problems"] - len(self._problems)
        if hidden > 0:
            problems.append(f"{hidden} more problems not listed")
        queued = {item.req.req_id for channel in self.channels
                  for q in (channel.golden, channel.silver, channel.normal) for item in q}
        if self._outstanding != queued:
            lost = sorted(self._outstanding - queued)[:MAX_AUDIT_PROBLEMS]
            problems.append(f"enqueued but neither serviced nor queued: {lost}")
        if self.stats["enqueued"] - self.stats["started"] != len(self._outstanding):
            problems.append(f"{self.stats['enqueued']} enqueued, {self.stats['started']} "
                            f"started, {len(self._outstanding)} outstanding")
        return problems
