"""Tests for the DRAM channels, FR-FCFS scheduling and the Silver rotation."""
import random
import unittest
import sys
from pathlib import Path

# Add parent directory to path
sys.path.insert(0, str(Path(__file__).parent.parent))

from src.addressing import MemoryRequest, RequestIds
from src.dram import (AddressMapper, DramController, DramGeometry, QueueFull, QueueId,
                      SilverRotation, _Queued, compute_quotas, frfcfs_pick, oldest_ready_pick)

LINE = 128


def reference_pick(queue, open_rows, bank_free, cycle):
    ready = [i for i, item in enumerate(queue) if bank_free[item.bank] <= cycle]
    hits = [i for i in ready if open_rows[queue[i].bank] == queue[i].row]
    if hits:
        return hits[0]
    return ready[0] if ready else None


class TestQuotas(unittest.TestCase):
    """Test compute_quotas."""

    def test_single_app_gets_everything(self):
        self.assertEqual(compute_quotas(500, [(4, 10)]), [500])

    def test_equal_products_split_evenly(self):
        self.assertEqual(compute_quotas(500, [(2, 10), (4, 5)]), [250, 250])

    def test_proportional_split(self):
        self.assertEqual(compute_quotas(500, [(2, 10), (3, 10)]), [200, 300])

    def test_all_zero_splits_equally(self):
        self.assertEqual(compute_quotas(500, [(0, 3), (0, 0)]), [250, 250])

    def test_sum_within_flooring_slack(self):
        rng = random.Random(21)
        for _ in range(10_000):
            n = rng.randint(1, 8)
            per_app = [(rng.randrange(64), rng.randrange(64)) for _ in range(n)]
            quotas = compute_quotas(500, per_app)
            self.assertLessEqual(sum(quotas), 500)
            self.assertGreaterEqual(sum(quotas), 500 - n)
            self.assertTrue(all(q >= 0 for q in quotas))


class TestSilverRotation(unittest.TestCase):
    """Test SilverRotation."""

    def setUp(self):
        """Set up test fixtures."""
        self.rotation = SilverRotation([1, 2], thres_max=4, idle_window=1000)
        self.rotation.set_counters({1: 1, 2: 1}, {1: 1, 2: 1}, cycle=0)

    def test_exhausted_quota_passes_turn(self):
        self.assertEqual(self.rotation.current_app, 1)
        self.assertTrue(self.rotation.admit(1, 1))
        self.assertTrue(self.rotation.admit(1, 2))
        self.assertEqual(self.rotation.current_app, 2)
        self.assertFalse(self.rotation.admit(1, 3))
        self.assertTrue(self.rotation.admit(2, 4))

    def test_idle_app_loses_turn(self):
        self.rotation.tick(999)
        self.assertEqual(self.rotation.current_app, 1)
        self.rotation.tick(1000)
        self.assertEqual(self.rotation.current_app, 2)

    def test_activity_resets_idle_window(self):
        self.rotation.note_activity(1, 900)
        self.rotation.tick(1500)
        self.assertEqual(self.rotation.current_app, 1)

    def test_admissions_never_exceed_quota(self):
        rng = random.Random(4)
        rotation = SilverRotation([1, 2, 3], thres_max=50, idle_window=20)
        for epoch in range(50):
            rotation.set_counters({a: rng.randrange(8) for a in (1, 2, 3)},
                                  {a: rng.randrange(8) for a in (1, 2, 3)}, cycle=epoch * 1000)
            for cycle in range(epoch * 1000, epoch * 1000 + 1000):
                rotation.tick(cycle)
                rotation.admit(rng.choice((1, 2, 3)), cycle)
            for app in (1, 2, 3):
                self.assertLessEqual(rotation.admitted[app], rotation.thres[app])


class TestFrFcfs(unittest.TestCase):
    """Test frfcfs_pick."""

    def test_matches_reference_scheduler(self):
        rng = random.Random(99)
        for _ in range(10_000):
            queue = [_Queued(None, rng.randrange(4), rng.randrange(3), i)
                     for i in range(rng.randint(1, 12))]
            open_rows = [rng.choice((None, 0, 1, 2)) for _ in range(4)]
            bank_free = [rng.randrange(3) for _ in range(4)]
            cycle = rng.randrange(3)
            self.assertEqual(frfcfs_pick(queue, open_rows, bank_free, cycle),
                             reference_pick(queue, open_rows, bank_free, cycle))

    def test_row_hit_beats_older_miss(self):
        queue = [_Queued(None, 0, 5, 0), _Queued(None, 0, 7, 1)]
        self.assertEqual(frfcfs_pick(queue, [7], [0], 0), 1)

    def test_oldest_ready_skips_busy_banks(self):
        queue = [_Queued(None, 0, 5, 0), _Queued(None, 1, 7, 1), _Queued(None, 1, 5, 2)]
        self.assertEqual(oldest_ready_pick(queue, [9, 0], 3), 1)
        self.assertEqual(oldest_ready_pick(queue, [0, 0], 3), 0)
        self.assertIsNone(oldest_ready_pick(queue, [9, 9], 3))


class TestAddressMapper(unittest.TestCase):
    """Test AddressMapper."""

    def setUp(self):
        """Set up test fixtures."""
        self.mapper = AddressMapper(DramGeometry(channels=2, banks=4, row_size=2048))

    def test_channel_lines_fill_a_row_first(self):
        for line in range(0, 32, 2):
            self.assertEqual(self.mapper.decode(1, line * LINE), (0, 0, 0))
        self.assertEqual(self.mapper.decode(1, 31 * LINE), (1, 0, 0))

    def test_bank_then_row_above_the_column(self):
        self.assertEqual(self.mapper.decode(1, 32 * LINE), (0, 1, 0))
        self.assertEqual(self.mapper.decode(1, 96 * LINE), (0, 3, 0))
        self.assertEqual(self.mapper.decode(1, 128 * LINE), (0, 0, 1))


class TestDramController(unittest.TestCase):
    """Test DramController."""

    def setUp(self):
        """Set up test fixtures."""
        self.geometry = DramGeometry(channels=1, banks=8)
        self.ids = RequestIds()

    def _req(self, asid=1, line=0, depth=0):
        return MemoryRequest(asid=asid, vaddr=0, paddr=line * LINE, walk_depth=depth,
                             req_id=self.ids.next())

    def test_golden_served_first(self):
        dram = DramController(self.geometry, [1, 2], mask_scheduler=True)
        data = self._req(line=1)
        walk = self._req(line=2, depth=3)
        self.assertEqual(dram.enqueue(data, 0), QueueId.SILVER)
        self.assertEqual(dram.enqueue(walk, 0), QueueId.GOLDEN)
        started = dram.tick(0)
        self.assertEqual([s.req for s in started], [walk])
        self.assertEqual(started[0].queue, QueueId.GOLDEN)

    def test_silver_only_for_current_app(self):
        dram = DramController(self.geometry, [1, 2], mask_scheduler=True)
        self.assertEqual(dram.rotation.current_app, 1)
        self.assertEqual(dram.enqueue(self._req(asid=2), 0), QueueId.NORMAL)
        self.assertEqual(dram.enqueue(self._req(asid=1), 0), QueueId.SILVER)

    def test_baseline_uses_single_queue(self):
        dram = DramController(self.geometry, [1], mask_scheduler=False)
        self.assertEqual(dram.enqueue(self._req(depth=1), 0), QueueId.NORMAL)
        self.assertEqual(dram.channels[0].capacity[QueueId.NORMAL], 16 + 64 + 192)

    def test_queue_full_changes_nothing(self):
        dram = DramController(self.geometry, [1], golden_size=1, silver_size=1, normal_size=1)
        for line in range(3):
            dram.enqueue(self._req(line=line), 0)
        with self.assertRaises(QueueFull) as ctx:
            dram.enqueue(self._req(line=3), 0)
        self.assertEqual(ctx.exception.queue, QueueId.NORMAL)
        self.assertEqual(dram.channels[0].occupancy(), 3)
        self.assertEqual(dram.stats[("enqueued", "normal")], 3)

    def test_submit_holds_overflow_upstream(self):
        dram = DramController(self.geometry, [1], golden_size=1, silver_size=0, normal_size=0)
        for line in range(3):
            dram.submit(self._req(line=line * 8), 0)
        self.assertEqual(dram.channels[0].occupancy(), 1)
        self.assertEqual(len(dram.channels[0].data_backlog), 2)
        self.assertEqual(dram.stats["queue_full_stalls"], 1)
        cycle = 0
        while dram.busy():
            dram.tick(cycle)
            cycle += 1
        self.assertEqual(dram.stats[("serviced", "data")], 3)

    def test_open_row_hits(self):
        dram = DramController(self.geometry, [1])
        dram.enqueue(self._req(line=0), 0)
        dram.enqueue(self._req(line=8), 0)
        first = dram.tick(0)[0]
        self.assertFalse(first.row_hit)
        self.assertEqual(first.done_cycle, 60)
        self.assertEqual(dram.tick(59), [])
        second = dram.tick(60)[0]
        self.assertTrue(second.row_hit)
        self.assertEqual(second.done_cycle, 80)

    def test_closed_row_policy_never_hits(self):
        geometry = DramGeometry(channels=1, banks=8, row_policy="closed")
        dram = DramController(geometry, [1])
        dram.enqueue(self._req(line=0), 0)
        dram.enqueue(self._req(line=8), 0)
        dram.tick(0)
        self.assertFalse(dram.tick(60)[0].row_hit)

    def test_idle_controller(self):
        dram = DramController(self.geometry, [1])
        self.assertFalse(dram.busy())
        self.assertEqual(dram.next_ready_cycle(10), -1)

    def test_busy_golden_head_does_not_block_other_walks(self):
        dram = DramController(self.geometry, [1], mask_scheduler=True)
        dram.enqueue(self._req(line=0, depth=1), 0)
        self.assertEqual(dram.tick(0)[0].done_cycle, 60)
        blocked = self._req(line=1, depth=2)
        free = self._req(line=16, depth=2)
        dram.enqueue(blocked, 1)
        dram.enqueue(self._req(line=32), 1)
        dram.enqueue(free, 1)
        started = dram.tick(2)
        self.assertEqual([s.req for s in started], [free])
        self.assertEqual(started[0].queue, QueueId.GOLDEN)

    def test_walks_wait_less_than_under_frfcfs(self):
        """Row hits keep a walk waiting under FR-FCFS; the golden queue does not."""
        latencies, row_hits = {}, {}
        for mask_scheduler in (False, True):
            self.ids = RequestIds()
            dram = DramController(DramGeometry(channels=1, banks=2), [1],
                                  mask_scheduler=mask_scheduler)
            for line in range(12):
                dram.submit(self._req(line=line), 0)
            for cycle in range(400):
                if cycle == 1:
                    dram.submit(self._req(line=32, depth=4), 1)
                dram.tick(cycle)
            self.assertEqual(dram.stats[("serviced", "walk")], 1)
            latencies[mask_scheduler] = dram.stats[("latency", "walk")]
            row_hits[mask_scheduler] = dram.stats[("row_hits", "data")]
        self.assertEqual(latencies, {False: 339, True: 119})
        # the walk closes the data row once under the golden queue
        self.assertEqual(row_hits, {False: 11, True: 10})

    def test_channel_subset_mapping(self):
        mapper = AddressMapper(DramGeometry(), channel_sets={1: [0, 1]})
        channels = {mapper.decode(1, line * LINE)[0] for line in range(200)}
        self.assertEqual(channels, {0, 1})
        self.assertEqual({mapper.decode(2, line * LINE)[0] for line in range(200)},
                         set(range(8)))

    def test_requests_conserved(self):
        rng = random.Random(17)
        dram = DramController(DramGeometry(channels=2, banks=4), [1, 2], mask_scheduler=True,
                              golden_size=2, silver_size=2, normal_size=4, thres_max=20,
                              idle_window=50)
        submitted = 0
        cycle = 0
        for cycle in range(3000):
            if cycle % 500 == 0:
                dram.new_epoch({1: 2, 2: 1}, {1: 3, 2: 5}, cycle)
            if rng.random() < 0.4:
                dram.submit(self._req(asid=rng.choice((1, 2)), line=rng.randrange(512),
                                      depth=rng.choice((0, 0, 1, 4))), cycle)
                submitted += 1
            dram.tick(cycle)
        while dram.busy():
            cycle += 1
            dram.tick(cycle)
        self.assertEqual(dram.audit(), [])
        self.assertEqual(dram._outstanding, set())
        serviced = dram.stats[("serviced", "walk")] + dram.stats[("serviced", "data")]
        self.assertEqual(serviced, submitted)
        self.assertEqual(len(dram.silver_admissions), len(dram.silver_quotas))
        for admitted, quotas in zip(dram.silver_admissions, dram.silver_quotas):
            self.assertLessEqual(sum(quotas.values()), 20)
            for asid, count in admitted.items():
                self.assertLessEqual(count, quotas[asid])

    def test_second_service_of_a_request_reported(self):
        dram = DramController(self.geometry, [1])
        req = self._req(line=3)
        dram.enqueue(req, 0)
        dram.tick(0)
        self.assertEqual(dram.audit(), [])
        dram.channels[0].push(QueueId.NORMAL, _Queued(req, 0, 0, 60))
        dram.tick(60)
        problems = dram.audit()
        self.assertEqual(len(problems), 2)
        self.assertIn("serviced twice", problems[0])
        self.assertEqual(dram._outstanding, set())


if __name__ == '__main__':
    unittest.main()
