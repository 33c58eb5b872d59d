"""Tests for the shared L2 cache and walk-request bypassing."""
import random
import unittest
import sys
from pathlib import Path

# Add parent directory to path
sys.path.insert(0, str(Path(__file__).parent.parent))

from src.addressing import MemoryRequest
from src.l2cache import BypassStats, CacheArray, HitAfter, L2Cache, MissToDram, should_bypass

LINE = 128


def small_array(**kwargs):
    """Eight sets of sixteen ways on one bank."""
    params = dict(size_bytes=8 * 16 * LINE, associativity=16, line_size=LINE, num_banks=1)
    params.update(kwargs)
    return CacheArray(**params)


def feed(stats, depth, accesses, hits):
    for i in range(accesses):
        stats.record(depth, i < hits)


class TestCacheArray(unittest.TestCase):
    """Test CacheArray."""

    def test_matches_reference_lru(self):
        array = small_array()
        sets = [[] for _ in range(array.num_sets)]
        rng = random.Random(12)
        for _ in range(100_000):
            line = rng.randrange(400)
            entries = sets[line % array.num_sets]
            expected = line in entries
            if expected:
                entries.remove(line)
            elif len(entries) == 16:
                entries.pop(0)
            entries.append(line)
            hit = array.lookup(line)
            if not hit:
                array.fill(line)
            self.assertEqual(hit, expected)

    def test_fill_returns_lru_victim(self):
        array = small_array(size_bytes=2 * LINE, associativity=2)
        array.fill(0)
        array.fill(1)
        array.lookup(0)
        self.assertEqual(array.fill(2), 1)
        self.assertEqual(array.contents(), {0, 2})

    def test_peek_leaves_lru_order(self):
        array = small_array(size_bytes=2 * LINE, associativity=2)
        array.fill(0)
        array.fill(1)
        self.assertTrue(array.peek(0))
        self.assertEqual(array.fill(2), 0)

    def test_bank_contention(self):
        array = small_array(num_banks=2)
        self.assertEqual(array.reserve_bank(0, 5), 5)
        self.assertEqual(array.reserve_bank(2, 5), 6)
        self.assertEqual(array.reserve_bank(1, 5), 5)
        self.assertEqual(array.bank_stall_cycles, 1)

    def test_way_quota_limits_owner(self):
        array = small_array(size_bytes=4 * LINE, associativity=4)
        array.way_quota = {1: 2, 2: 2}
        for line in range(3):
            array.fill(line, asid=1)
        self.assertEqual(array.contents(), {1, 2})
        array.fill(3, asid=2)
        self.assertEqual(array.contents(), {1, 2, 3})

    def test_rejects_bad_geometry(self):
        with self.assertRaises(ValueError):
            CacheArray(size_bytes=1000, associativity=16, line_size=LINE)
        with self.assertRaises(ValueError):
            CacheArray(size_bytes=16 * 96 * 4, associativity=16, line_size=96)


class TestBypassDecision(unittest.TestCase):
    """Test BypassStats and should_bypass."""

    def setUp(self):
        """Set up test fixtures."""
        self.stats = BypassStats(min_samples=32)

    def test_first_epoch_never_bypasses(self):
        self.assertEqual(self.stats.decisions, [False] * 8)
        self.assertFalse(should_bypass(MemoryRequest(asid=1, vaddr=0, walk_depth=1), self.stats))

    def test_low_walk_hit_rate_bypasses(self):
        feed(self.stats, 0, 100, 70)
        feed(self.stats, 1, 100, 30)
        decisions = self.stats.refresh()
        self.assertTrue(decisions[1])
        self.assertTrue(should_bypass(MemoryRequest(asid=1, vaddr=0, walk_depth=1), self.stats))

    def test_high_walk_hit_rate_stays(self):
        feed(self.stats, 0, 100, 70)
        feed(self.stats, 1, 100, 90)
        self.assertFalse(self.stats.refresh()[1])

    def test_data_never_bypasses(self):
        feed(self.stats, 0, 100, 0)
        self.stats.refresh()
        self.assertFalse(should_bypass(MemoryRequest(asid=1, vaddr=0), self.stats))

    def test_few_samples_keep_previous_decision(self):
        feed(self.stats, 0, 100, 70)
        feed(self.stats, 2, 100, 10)
        self.assertTrue(self.stats.refresh()[2])
        feed(self.stats, 0, 100, 70)
        feed(self.stats, 2, 5, 5)
        self.assertTrue(self.stats.refresh()[2])

    def test_refresh_resets_counters(self):
        feed(self.stats, 0, 40, 20)
        self.stats.refresh()
        self.assertIsNone(self.stats.hit_rate(0))


class TestL2Cache(unittest.TestCase):
    """Test L2Cache access and fill."""

    def setUp(self):
        """Set up test fixtures."""
        self.log = []
        self.cache = L2Cache(small_array(), bypass_enabled=True, min_samples=1,
                             event_log=self.log)

    def test_miss_then_hit(self):
        req = MemoryRequest(asid=1, vaddr=0, paddr=0x4000)
        miss = self.cache.access(req, 0)
        self.assertIsInstance(miss, MissToDram)
        self.assertEqual(miss.ready_cycle, 10)
        self.cache.fill(req)
        hit = self.cache.access(MemoryRequest(asid=1, vaddr=0, paddr=0x4000), 100)
        self.assertEqual(hit, HitAfter(10))
        self.assertEqual(self.cache.hit_rate([0]), 0.5)

    def test_bypassed_request_never_allocates(self):
        self.cache.bypass_stats.decisions[1] = True
        req = MemoryRequest(asid=1, vaddr=0, paddr=0x8000, walk_depth=1)
        result = self.cache.access(req, 7)
        self.assertIsInstance(result, MissToDram)
        self.assertEqual(result.ready_cycle, 7)
        self.assertTrue(req.bypassed)
        self.cache.fill(req)
        self.assertFalse(self.cache.array.peek(self.cache.array.line_of(0x8000)))
        self.assertEqual(self.cache.stats[("bypassed", 1)], 1)
        self.assertEqual(self.log[-1][-1], True)

    def test_bypass_disabled_ignores_decisions(self):
        cache = L2Cache(small_array(), bypass_enabled=False)
        cache.bypass_stats.decisions[1] = True
        req = MemoryRequest(asid=1, vaddr=0, paddr=0x8000, walk_depth=1)
        cache.access(req, 0)
        self.assertFalse(req.bypassed)
        cache.fill(req)
        self.assertTrue(cache.array.peek(cache.array.line_of(0x8000)))

    def test_writes_do_not_allocate(self):
        req = MemoryRequest(asid=1, vaddr=0, paddr=0x100, is_write=True)
        self.assertIsInstance(self.cache.access(req, 0), MissToDram)
        self.cache.fill(req)
        self.assertEqual(self.cache.array.contents(), set())
        self.assertEqual(self.cache.stats["writes"], 1)

    def test_epoch_turns_bypass_on(self):
        for i in range(10):
            req = MemoryRequest(asid=1, vaddr=0, paddr=0x10000)
            self.cache.access(req, i * 20)
            self.cache.fill(req)
        self.cache.access(MemoryRequest(asid=1, vaddr=0, paddr=0x20000, walk_depth=3), 300)
        self.assertTrue(self.cache.end_epoch()[3])


if __name__ == '__main__':
    unittest.main()
