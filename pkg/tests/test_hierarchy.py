import pytest

from rascache import hierarchy as H
from rascache.cache import CacheGeometry
from rascache.core import flush, load, squashed_load, store
from rascache.hierarchy import HierarchyConfig, NfcResult
from rascache.simulation import Simulation


def sim(defense, seed=0, cfg=None, **kw):
    return Simulation(defense, cfg, seed, **kw)


class TestDefenseMode:
    def test_ras_modes_validate_knobs(self):
        with pytest.raises(ValueError):
            H.DefenseMode(H.RAS_SPEC)  # missing knobs
        with pytest.raises(ValueError):
            H.ras_plus(window=3)  # not a power of two
        assert H.ras_spec().label() == "ras-spec-R3E1W4"
        assert H.random_fill(8).label() == "random-fill-W8"

    def test_baseline_has_no_shb(self):
        s = sim(H.baseline_lru())
        assert s.hierarchy.shb is None


class TestTieredLatency:
    def test_cold_access_full_path(self):
        s = sim(H.baseline_lru())
        r = s.core.run_program([load(0x1000)])
        assert r[0].latency == 2 + 12 + 150
        assert r[0].outcome.fill_suppressed_at == "none"

    def test_l1_hit(self):
        s = sim(H.baseline_lru())
        r = s.core.run_program([load(0x1000), load(0x1000)])
        assert r[1].latency == 2 and r[1].outcome.l1_hit

    def test_l2_hit_after_l1_flush(self):
        s = sim(H.baseline_lru())
        s.core.run_program([load(0x1000)])
        s.hierarchy.l1.flush_line(0x1000)
        r = s.core.run_program([load(0x1000)])
        assert r[0].latency == 2 + 12 and r[0].outcome.l2_hit

    def test_second_access_under_ras_plus_misses_again(self):
        # squashed ops never reach the history buffer, so no fetch intervenes
        s = sim(H.ras_plus())
        r1 = s.core.run_program([squashed_load(0x1000, 170)])
        s.run_until(s.now + 200)
        assert (s.hierarchy.l1.snapshot(), s.hierarchy.l2.snapshot()) == ([], [])
        r2 = s.core.run_program([squashed_load(0x1000, 170)])
        assert r1[0].latency == r2[0].latency == 164

    def test_timing_trichotomy_without_merges(self):
        s = sim(H.baseline_lru())
        tiers = {2, 14, 164}
        addrs = [0x1000 + i * 64 for i in range(32)]
        r = s.core.run_program([load(a) for a in addrs] * 2)
        assert all(x.latency in tiers for x in r)


class TestNoFillChain:
    def test_nofill_propagates_to_l2(self):
        s = sim(H.ras_plus())
        r = s.core.run_program([load(0x2000)])
        assert r[0].outcome.fill_suppressed_at == "both"
        assert not s.hierarchy.l1.is_resident(0x2000)
        assert not s.hierarchy.l2.is_resident(0x2000)

    def test_data_returns_despite_suppression(self):
        s = sim(H.ras_plus())
        r = s.core.run_program([load(0x2000)])
        assert r[0].latency == 164  # requester still served

    def test_ras_spec_nonspec_load_fills(self):
        s = sim(H.ras_spec())
        s.core.run_program([load(0x2000)])
        assert s.hierarchy.l1.is_resident(0x2000)
        assert s.hierarchy.l2.is_resident(0x2000)

    def test_blocked_retries_add_cycles_never_drop(self):
        cfg = HierarchyConfig(l1=CacheGeometry(64, 8, 64, mshr_entries=1))
        s = sim(H.baseline_lru(), cfg=cfg)
        r = s.core.run_program([load(0x1000), load(0x2000)], max_outstanding=2)
        assert r[0].latency == 164
        assert r[1].latency > 164  # waited for the single MSHR
        assert s.hierarchy.l1.is_resident(0x2000)


class TestWritebacks:
    def test_nofill_dirty_store_invisible_in_l2(self):
        s = sim(H.ras_plus())
        r = s.core.run_program([store(0x3000)])
        assert r[0].outcome.fill_suppressed_at == "both"
        assert not s.hierarchy.l2.is_resident(0x3000)
        assert s.metrics.l1.writebacks_out == 1

    def test_unprotected_writeback_is_detectable(self):
        s = sim(H.ras_plus(protect_writebacks=False))
        s.core.run_program([store(0x3000)])
        assert s.hierarchy.l2.is_resident(0x3000)

    def test_fill_allowed_writeback_hits_l2_after(self):
        s = sim(H.baseline_lru())
        s.core.run_program([store(0x3000)])
        s.hierarchy.l1.flush_line(0x3000)  # dirty flush pushes to L2
        r = s.core.run_program([load(0x3000)])
        assert r[0].latency == 14

    def test_writeback_of_l2_resident_line_sets_dirty(self):
        s = sim(H.baseline_lru())
        s.core.run_program([store(0x3000)])
        wb_installs_before = s.metrics.l2.wb_installs
        res, wb, _ = s.hierarchy.l1.flush_line(0x3000)
        s.hierarchy.route_writeback(wb)
        assert s.metrics.l2.wb_installs == wb_installs_before  # update, not install
        idx = s.hierarchy.l2.set_index(0x3000)
        entry = s.hierarchy.l2._find(idx, s.hierarchy.l2.tag_of(0x3000))
        assert entry.dirty


class TestNoFillClearPropagation:
    def test_cleared_both_levels(self):
        s = sim(H.ras_plus())
        s.hierarchy.access(0x3000, is_store=False, no_fill=True, on_complete=lambda o: None)
        s.run_until(s.now + 4)  # request has reached the L2 MSHR
        res = s.hierarchy.propagate_nofillclear(0x3000)
        assert res is NfcResult.CLEARED_L1_L2
        s.run_until(400)
        assert s.hierarchy.l1.is_resident(0x3000)
        assert s.hierarchy.l2.is_resident(0x3000)

    def test_cleared_l1_only_when_l2_hit_path(self):
        s = sim(H.ras_plus())
        # put the line in L2 only: clear a first miss, fill both, flush L1
        s.core.run_program([load(0x5000)])
        s.hierarchy.propagate_nofillclear(0x5000)  # no match; line returned already
        # fill L2 via a fetch-like path: use baseline mechanics instead
        s2 = sim(H.ras_spec())
        s2.core.run_program([load(0x5000)])
        s2.hierarchy.l1.flush_line(0x5000)
        s2.hierarchy.access(0x5000, is_store=False, no_fill=True, on_complete=lambda o: None)
        s2.run_until(s2.now + 4)
        assert s2.hierarchy.propagate_nofillclear(0x5000) is NfcResult.CLEARED_L1

    def test_no_match_after_return(self):
        s = sim(H.ras_plus())
        s.core.run_program([load(0x3000)])
        assert s.hierarchy.propagate_nofillclear(0x3000) is NfcResult.NO_MATCH


class TestShbFetchPath:
    def test_fetch_installs_both_levels(self):
        s = sim(H.ras_plus(rate=3, entries=1, window=1))
        s.core.run_program([store(0x7000)])  # inserts into SHB
        s.run_until(s.now + 400)
        assert s.hierarchy.l1.is_resident(0x7000)
        assert s.hierarchy.l2.is_resident(0x7000)

    def test_fetch_of_resident_line_changes_nothing(self):
        s = sim(H.ras_spec(rate=3, entries=1, window=1))
        s.core.run_program([load(0x7000)])  # non-speculative fill + SHB insert
        s.run_until(s.now + 10)
        before = s.hierarchy.l1.snapshot()
        s.run_until(s.now + 300)  # many ticks fetch the resident line
        assert s.hierarchy.l1.snapshot() == before

    def test_fetch_merges_into_pending_demand(self):
        s = sim(H.ras_spec(rate=3, entries=1, window=1))
        done = []
        r = s.core.run_program([squashed_load(0x9000, 500)])
        # no auth: the squashed op's line never entered the SHB
        assert not s.hierarchy.l1.is_resident(0x9000)

    def test_fetch_dropped_when_mshrs_full(self):
        cfg = HierarchyConfig(l1=CacheGeometry(64, 8, 64, mshr_entries=1))
        s = sim(H.ras_plus(rate=3, entries=4, window=4), cfg=cfg)
        s.core.run_program([load(0x1000)])
        assert s.metrics.shb.dropped_full_mshr > 0


class TestRandomFill:
    def test_demand_miss_never_fills_demand_line(self):
        s = sim(H.random_fill(window=4), seed=3)
        r = s.core.run_program([load(0x4000)])
        assert r[0].outcome.fill_suppressed_at == "both"

    def test_window_confined_prefetch_fill(self):
        s = sim(H.random_fill(window=4), seed=3, record_fills=True)
        s.core.run_program([squashed_load(0x4080, 170)])
        s.run_until(600)
        fills = [f for f in s.metrics.fill_log if f.level == "l1"]
        assert fills, "prefetch must install one window line"
        base = 0x4080 - (0x4080 % 256)
        for f in fills:
            assert base <= f.line_addr < base + 256
            assert f.provenance == "rf_prefetch"

    def test_store_miss_also_prefetches(self):
        s = sim(H.random_fill(window=1), seed=3)
        s.core.run_program([store(0x4000)])
        s.run_until(600)
        # window of one line: the prefetch is the demanded line itself
        assert s.hierarchy.l1.is_resident(0x4000)


class TestFlushRouting:
    def test_flush_latency_present_vs_absent(self):
        s = sim(H.baseline_lru())
        s.core.run_program([load(0x1000)])
        r = s.core.run_program([flush(0x1000), flush(0x1000)])
        assert r[0].latency == (2 + 1) + (12 + 1)
        assert r[1].latency == 2 + 12
        assert r[0].outcome.flushed and not r[1].outcome.flushed
