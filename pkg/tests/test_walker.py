"""Tests for the shared page table walker and the page walk cache."""
import unittest
import sys
from pathlib import Path

# Add parent directory to path
sys.path.insert(0, str(Path(__file__).parent.parent))

from src.addressing import RequestIds, Unmapped, build_page_tables, translate_vpn, walk_addresses
from src.tlb import Mshr
from src.walker import Backpressure, NextRequest, PageTableWalker, PageWalkCache, WalkDone, WalkSlot

BASE = 0x100000


def drive(walker, step, cycle=0):
    """Complete every memory read of a walk; returns (walk depths, paddrs, final step)."""
    depths, paddrs = [], []
    while isinstance(step, NextRequest):
        depths.append(step.walk_depth)
        paddrs.append(step.request.paddr)
        step = walker.on_level_complete(step.slot, cycle)
    return depths, paddrs, step


class TestPageTableWalker(unittest.TestCase):
    """Test PageTableWalker."""

    def setUp(self):
        """Set up test fixtures."""
        self.tables = build_page_tables([(1, range(BASE, BASE + 16)), (2, [BASE])],
                                        allocator_seed=1, physical_frames=4096)
        self.walker = PageTableWalker(self.tables, RequestIds(), max_slots=2)

    def _start(self, vpn, asid=1, walker=None):
        walker = walker or self.walker
        return walker.start_walk(asid, vpn, Mshr(asid, vpn, 0, 0, 0), 0)

    def test_fresh_miss_emits_level_one(self):
        slot = self._start(BASE)
        self.assertIsInstance(slot, WalkSlot)
        step = self.walker.advance(slot, 0)
        self.assertIsInstance(step, NextRequest)
        self.assertEqual(step.walk_depth, 1)
        self.assertEqual(self.walker.active, 1)

    def test_full_walk_reads_four_levels(self):
        vpn = BASE + 3
        depths, paddrs, done = drive(self.walker, self.walker.advance(self._start(vpn), 0))
        self.assertEqual(depths, [1, 2, 3, 4])
        self.assertEqual(paddrs, [a for _, a in walk_addresses(self.tables[1], vpn << 12)])
        self.assertIsInstance(done, WalkDone)
        self.assertEqual(done.pfn, translate_vpn(self.tables[1], vpn))
        self.assertEqual(self.walker.active, 0)
        self.assertEqual(self.walker.stats["memory_requests"], 4)

    def test_level_three_completion_emits_level_four(self):
        step = self.walker.advance(self._start(BASE), 0)
        for _ in range(2):
            step = self.walker.on_level_complete(step.slot, 0)
        self.assertEqual(step.walk_depth, 3)
        step = self.walker.on_level_complete(step.slot, 0)
        self.assertEqual(step.walk_depth, 4)

    def test_duplicate_miss_reuses_slot(self):
        first = self._start(BASE)
        second = self._start(BASE)
        self.assertIs(first, second)
        self.assertEqual(self.walker.active, 1)
        self.assertEqual(self.walker.stats["walks_started"], 1)

    def test_backpressure_when_threads_busy(self):
        a = self._start(BASE)
        self._start(BASE + 1)
        queued = self._start(BASE + 2)
        self.assertIsInstance(queued, Backpressure)
        self.assertEqual(queued.queue_position, 0)
        self.assertEqual(self.walker.active, 2)
        _, _, done = drive(self.walker, self.walker.advance(a, 0))
        self.assertEqual([s.vpn for s in done.resumed], [BASE + 2])
        self.assertEqual(self.walker.active, 2)

    def test_pending_walks_leave_in_fifo_order(self):
        walker = PageTableWalker(self.tables, RequestIds(), max_slots=1)
        slot = self._start(BASE, walker=walker)
        for vpn in (BASE + 5, BASE + 3, BASE + 9):
            self._start(vpn, walker=walker)
        order = []
        step = walker.advance(slot, 0)
        while True:
            _, _, done = drive(walker, step)
            if not done.resumed:
                break
            order.append(done.resumed[0].vpn)
            step = walker.advance(done.resumed[0], 0)
        self.assertEqual(order, [BASE + 5, BASE + 3, BASE + 9])

    def test_concurrent_counter_counts_active_and_queued(self):
        for vpn in (BASE, BASE + 1, BASE + 2):
            self._start(vpn)
        self._start(BASE, asid=2)
        snapshot = self.walker.snapshot_concurrent()
        self.assertEqual(snapshot[1], 3)
        self.assertEqual(snapshot[2], 1)
        self.assertLessEqual(self.walker.max_concurrent, 2)

    def test_unmapped_entry_aborts(self):
        step = self.walker.advance(self._start(0x0), 0)
        with self.assertRaises(Unmapped) as ctx:
            drive(self.walker, step)
        self.assertEqual(ctx.exception.level, 2)


class TestPageWalkCache(unittest.TestCase):
    """Test walks through the page walk cache."""

    def setUp(self):
        """Set up test fixtures."""
        self.tables = build_page_tables([(1, range(BASE, BASE + 16))], allocator_seed=2,
                                        physical_frames=4096)
        self.pwc = PageWalkCache(1024, 16)
        self.walker = PageTableWalker(self.tables, RequestIds(), pwc=self.pwc, pwc_latency=1)

    def _walk(self, vpn):
        slot = self.walker.start_walk(1, vpn, Mshr(1, vpn, 0, 0, 0), 0)
        return drive(self.walker, self.walker.advance(slot, 0))

    def test_cold_walk_misses_every_level(self):
        depths, _, _ = self._walk(BASE)
        self.assertEqual(depths, [1, 2, 3, 4])
        self.assertEqual(self.pwc.misses, 4)
        self.assertEqual(self.pwc.hits, 0)

    def test_repeat_walk_needs_no_memory(self):
        self._walk(BASE)
        depths, _, done = self._walk(BASE)
        self.assertEqual(depths, [])
        self.assertEqual(self.pwc.hits, 4)
        self.assertEqual(done.pfn, translate_vpn(self.tables[1], BASE))
        self.assertEqual(done.cycle, 4)

    def test_shared_upper_levels_need_one_read(self):
        self._walk(BASE)
        depths, _, done = self._walk(BASE + 1)
        self.assertEqual(depths, [4])
        self.assertEqual(done.pfn, translate_vpn(self.tables[1], BASE + 1))

    def test_invalidate_asid(self):
        self._walk(BASE)
        self.assertEqual(self.walker.invalidate_asid(1), 4)
        depths, _, _ = self._walk(BASE)
        self.assertEqual(depths, [1, 2, 3, 4])


if __name__ == '__main__':
    unittest.main()
