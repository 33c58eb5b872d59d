"""Address spaces, 4-level page tables and the memory request record."""
import itertools
import logging
from dataclasses import dataclass, field
from types import MappingProxyType
from typing import Callable, Dict, FrozenSet, Iterable, List, Mapping, Optional, Set, Tuple

import numpy as np

logger = logging.getLogger(__name__)

PAGE_SHIFT = 12
PAGE_SIZE = 1 << PAGE_SHIFT
PAGE_OFFSET_MASK = PAGE_SIZE - 1
LEVEL_BITS = 9
LEVEL_MASK = (1 << LEVEL_BITS) - 1
PAGE_LEVELS = 4
ENTRY_SIZE = 8

MAX_ASID = 0xFF
MAX_CONCURRENT_APPS = 64
MAX_WALK_DEPTH = 7

Asid = int
# (level, table frame, index) -> next-level frame (or data frame at the leaf level)
NodeKey = Tuple[int, int, int]
EntryReader = Callable[[int, int, int], Optional[int]]


class CapacityExceeded(RuntimeError):
    """Raised when physical memory cannot hold every data and table frame."""


class Unmapped(LookupError):
    """Raised when a walk reaches a level with no entry for the address."""

    def __init__(self, asid: Asid, vaddr: int, level: int):
        super().__init__(f"asid {asid}: vaddr {vaddr:#x} unmapped at level {level}")
        self.asid = asid
        self.vaddr = vaddr
        self.level = level


def validate_asid(asid: int) -> Asid:
    """Check that an ASID fits the 8-bit identifier field."""
    if not 0 <= asid <= MAX_ASID:
        raise ValueError(f"ASID {asid} outside 0..{MAX_ASID}")
    return asid


def vpn_of(vaddr: int) -> int:
    return vaddr >> PAGE_SHIFT


def level_index(vpn: int, level: int) -> int:
    """Index into the level-``level`` table (1 = root) for a virtual page number."""
    return (vpn >> (LEVEL_BITS * (PAGE_LEVELS - level))) & LEVEL_MASK


@dataclass(frozen=True)
class PageTable:
    """Radix page table of one address space.

    ``nodes`` maps ``(level, table frame, index)`` to the frame the entry points
    at: the next table for levels 1..3, the data frame at level 4.
    """
    asid: Asid
    root: int
    nodes: Mapping[NodeKey, int]
    table_frames: FrozenSet[int]
    data_frames: FrozenSet[int]

    def read_entry(self, level: int, table_frame: int, index: int) -> Optional[int]:
        return self.nodes.get((level, table_frame, index))


@dataclass(eq=False)
class MemoryRequest:
    """A request travelling through the TLBs, the L2 cache and DRAM.

    ``walk_depth`` is 0 for data accesses and 1..6 for page-walk reads of that
    level; deeper walks saturate at 7.
    """
    asid: Asid
    vaddr: int
    paddr: Optional[int] = None
    is_write: bool = False
    walk_depth: int = 0
    issuing_core: int = -1
    stalled_warps: Set[int] = field(default_factory=set)
    issue_cycle: int = 0
    req_id: int = -1
    # set by the L2 cache when the request skips allocation
    bypassed: bool = False
    dram_enqueue_cycle: int = -1

    def __post_init__(self):
        self.walk_depth = min(self.walk_depth, MAX_WALK_DEPTH)
        if self.walk_depth < 0:
            raise ValueError("walk_depth must be non-negative")

    @property
    def is_walk(self) -> bool:
        return self.walk_depth > 0


class RequestIds:
    """Monotone request id source owned by one simulation."""

    def __init__(self):
        self._counter = itertools.count()

    def next(self) -> int:
        return next(self._counter)


class FrameAllocator:
    """Deterministic first-fit allocator over a seeded shuffled free list."""

    def __init__(self, total_frames: int, seed: int):
        if total_frames <= 0:
            raise ValueError("physical memory must hold at least one frame")
        rng = np.random.default_rng(seed)
        self._free = rng.permutation(total_frames)
        self._next = 0

    @property
    def remaining(self) -> int:
        return len(self._free) - self._next

    def allocate(self) -> int:
        if self._next >= len(self._free):
            raise CapacityExceeded(
                f"physical memory exhausted after {len(self._free)} frames"
            )
        frame = int(self._free[self._next])
        self._next += 1
        return frame


def build_page_tables(per_app_virtual_pages: Iterable[Tuple[Asid, Iterable[int]]],
                      allocator_seed: int,
                      physical_frames: int = 1 << 20) -> Dict[Asid, PageTable]:
    """
    Populate disjoint physical address spaces with valid 4-level page tables.

    Args:
        per_app_virtual_pages: (asid, virtual page numbers) per application
        allocator_seed: Seed for the shuffled free frame list
        physical_frames: Number of 4 KB frames in physical memory

    Returns:
        Page table per ASID

    Raises:
        CapacityExceeded: If the frames run out
    """
    allocator = FrameAllocator(physical_frames, allocator_seed)
    tables: Dict[Asid, PageTable] = {}

    for asid, pages in per_app_virtual_pages:
        validate_asid(asid)
        if asid in tables:
            raise ValueError(f"ASID {asid} listed twice")
        vpns = sorted(set(pages))
        if not vpns:
            raise ValueError(f"ASID {asid} declares no virtual pages")

        root = allocator.allocate()
        nodes: Dict[NodeKey, int] = {}
        table_frames = {root}
        data_frames = set()
        for vpn in vpns:
            frame = root
            for level in range(1, PAGE_LEVELS):
                key = (level, frame, level_index(vpn, level))
                child = nodes.get(key)
                if child is None:
                    child = allocator.allocate()
                    nodes[key] = child
                    table_frames.add(child)
                frame = child
            leaf_key = (PAGE_LEVELS, frame, level_index(vpn, PAGE_LEVELS))
            data = allocator.allocate()
            nodes[leaf_key] = data
            data_frames.add(data)

        tables[asid] = PageTable(
            asid=asid,
            root=root,
            nodes=MappingProxyType(nodes),
            table_frames=frozenset(table_frames),
            data_frames=frozenset(data_frames),
        )
        logger.debug("asid %d: %d pages, %d table frames", asid, len(vpns), len(table_frames))

    return tables


def walk_addresses(pt: PageTable, vaddr: int,
                   reader: Optional[EntryReader] = None) -> List[Tuple[int, int]]:
    """
    Physical addresses of the four entries a walker reads for ``vaddr``.

    Each level's table frame comes from the entry read at the previous level,
    so the list can only be produced in order.

    Args:
        pt: Page table of the address space
        vaddr: Virtual byte address
        reader: Entry source ``(level, frame, index) -> frame``; defaults to the
            page table itself

    Returns:
        ``[(walk_depth, entry paddr)]`` for walk depths 1..4
    """
    read = reader if reader is not None else pt.read_entry
    vpn = vpn_of(vaddr)
    frame = pt.root
    result = []
    for level in range(1, PAGE_LEVELS + 1):
        index = level_index(vpn, level)
        result.append((level, frame * PAGE_SIZE + index * ENTRY_SIZE))
        frame = read(level, frame, index)
        if frame is None:
            raise Unmapped(pt.asid, vaddr, level)
    return result


def translate(pt: PageTable, vaddr: int) -> int:
    """Translate a virtual byte address to its physical byte address."""
    return translate_vpn(pt, vpn_of(vaddr)) * PAGE_SIZE + (vaddr & PAGE_OFFSET_MASK)


def translate_vpn(pt: PageTable, vpn: int) -> int:
    """Physical frame number backing ``vpn``."""
    frame = pt.root
    for level in range(1, PAGE_LEVELS + 1):
        frame = pt.nodes.get((level, frame, level_index(vpn, level)))
        if frame is None:
            raise Unmapped(pt.asid, vpn << PAGE_SHIFT, level)
    return frame
