import pytest

from rascache import hierarchy as H
from rascache.core import (
    AUTHORIZED, COMMITTED, SQUASHED, MemOp, flush, load, squashed_load,
    squashed_store, store,
)
from rascache.kernel import SimulationError
from rascache.simulation import Simulation


def sim(defense, seed=0, **kw):
    return Simulation(defense, None, seed, **kw)


class TestMemOp:
    def test_exactly_one_resolution(self):
        with pytest.raises(ValueError):
            MemOp("load", 0x0, auth_delta=1, squash_delta=1)
        with pytest.raises(ValueError):
            MemOp("load", 0x0, auth_delta=None, squash_delta=None)

    def test_negative_delta_rejected(self):
        with pytest.raises(ValueError):
            MemOp("load", 0x0, auth_delta=-1)


class TestNoFillAssignment:
    @pytest.mark.parametrize("mode,spec,expect", [
        (H.baseline_lru(), True, False),
        (H.sa_random(), True, False),
        (H.ras_spec(), False, False),   # non-speculative load fills
        (H.ras_spec(), True, True),     # speculative load suppressed
        (H.ras_plus(), False, True),    # every load suppressed
    ])
    def test_load_no_fill(self, mode, spec, expect):
        s = sim(mode)
        op = squashed_load(0x1000, 300) if spec else load(0x1000)
        r = s.core.run_program([op])
        suppressed = r[0].outcome.fill_suppressed_at != "none"
        assert suppressed == expect

    def test_store_no_fill_by_mode(self):
        for mode, expect in [(H.ras_spec(), False), (H.ras_plus(), True)]:
            s = sim(mode)
            r = s.core.run_program([store(0x2000)])
            assert (r[0].outcome.fill_suppressed_at != "none") == expect

    def test_ras_spec_authorized_at_issue_fills(self):
        s = sim(H.ras_spec())
        s.core.run_program([MemOp("load", 0x1000, auth_delta=0)])
        assert s.hierarchy.l1.is_resident(0x1000)


class TestAuthorization:
    def test_authorized_before_fill_return_fills_on_return(self):
        # W=1/E=1/R=3: the safe fetch reliably selects the just-authorized
        # address within a few cycles, clearing the pending entry.
        s = sim(H.ras_spec(rate=3, entries=1, window=1))
        s.core.run_program([MemOp("load", 0x5000, auth_delta=20)])
        assert s.hierarchy.l1.is_resident(0x5000)
        assert s.metrics.l1.nofill_cleared_shb == 1

    def test_authorized_after_return_not_filled_then_fetched(self):
        s = sim(H.ras_spec(rate=3, entries=1, window=1))
        s.core.run_program([MemOp("load", 0x5000, auth_delta=500)])
        assert not s.hierarchy.l1.is_resident(0x5000)
        s.run_until(700)  # authorization at 500, fetch fill one memory path later
        assert s.hierarchy.l1.is_resident(0x5000)

    def test_squashed_never_enters_shb(self):
        s = sim(H.ras_spec())
        s.core.shb_log = []
        s.core.run_program([squashed_load(0x5000, 200)])
        s.run_until(300)
        assert s.core.shb_log == []
        assert s.metrics.shb.insertions == 0

    def test_out_of_order_authorization_is_hard_error(self):
        s = sim(H.ras_spec())
        ops = [(0, MemOp("load", 0x1000, auth_delta=50)),
               (5, MemOp("load", 0x2000, auth_delta=0))]
        with pytest.raises(SimulationError):
            s.core.run_timed(ops)


class TestStoreLifecycle:
    def test_committed_store_enters_cache_and_shb(self):
        s = sim(H.ras_spec())
        s.core.run_program([store(0x3000)])
        assert s.metrics.shb.insertions == 1
        assert s.hierarchy.l1.is_resident(0x3000)

    def test_ras_plus_store_shb_but_no_fill(self):
        # issue after the only tick so no fetch can clear the pending entry
        s = sim(H.ras_plus(rate=1000000, entries=1, window=1))
        s.core.run_timed([(1, store(0x3000))])
        assert s.metrics.shb.insertions == 1
        assert not s.hierarchy.l1.is_resident(0x3000)

    def test_squashed_store_never_reaches_cache(self):
        s = sim(H.baseline_lru())
        r = s.core.run_program([squashed_store(0x3000)])
        assert r[0].dropped
        assert s.metrics.l1.accesses == 0
        assert s.metrics.shb.insertions == 0


class TestSquash:
    def test_squash_with_pending_nofill_miss_bypasses(self):
        s = sim(H.ras_spec())
        before = (s.hierarchy.l1.snapshot(), s.hierarchy.l2.snapshot())
        s.core.run_program([squashed_load(0x6000, 170)])
        s.run_until(400)
        assert (s.hierarchy.l1.snapshot(), s.hierarchy.l2.snapshot()) == before
        assert s.metrics.l1.bypassed_fills == 1

    def test_baseline_squash_still_fills_the_leak(self):
        s = sim(H.baseline_lru())
        s.core.run_program([squashed_load(0x6000, 170)])
        s.run_until(400)
        assert s.hierarchy.l1.is_resident(0x6000)

    def test_rob_state_transitions(self):
        s = sim(H.ras_spec())
        s.core.run_program([squashed_load(0x1000, 170), ])
        s.run_until(200)
        assert s.core.rob[0].state == SQUASHED
        s2 = sim(H.ras_spec())
        s2.core.run_program([MemOp("load", 0x1000, auth_delta=20)])
        assert s2.core.rob[0].state == AUTHORIZED


class TestShbPurity:
    def test_every_inserted_address_belongs_to_resolved_op(self):
        s = sim(H.ras_plus())
        s.core.shb_log = []
        ops = [load(0x1000), squashed_load(0x2000, 170), store(0x3000)]
        s.core.run_program(ops)
        s.run_until(s.now + 300)
        states = {st for _seq, st in s.core.shb_log}
        assert states <= {AUTHORIZED, COMMITTED}
        seqs = [seq for seq, _st in s.core.shb_log]
        assert len(seqs) == 2  # the squashed op never inserted


class TestProgramDrivers:
    def test_blocking_program_serializes(self):
        s = sim(H.baseline_lru())
        r = s.core.run_program([load(0x1000), load(0x2000)], max_outstanding=1)
        assert r[1].issue_cycle == r[0].complete_cycle

    def test_windowed_program_overlaps(self):
        s = sim(H.baseline_lru())
        r = s.core.run_program([load(0x1000), load(0x2000)], max_outstanding=2)
        assert r[0].issue_cycle == r[1].issue_cycle == 0
        assert r[0].latency == r[1].latency == 164

    def test_timed_program_issues_at_absolute_cycles(self):
        s = sim(H.baseline_lru())
        r = s.core.run_timed([(0, load(0x1000)), (500, load(0x1000))])
        assert r[1].issue_cycle == 500 and r[1].latency == 2

    def test_flush_op_in_program(self):
        s = sim(H.baseline_lru())
        r = s.core.run_program([load(0x1000), flush(0x1000), load(0x1000)])
        assert r[2].latency == 164
