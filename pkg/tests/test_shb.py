import pytest

from rascache.kernel import Rng, SimulationError
from rascache.metrics import ShbMetrics
from rascache.shb import SafeHistoryBuffer


def make_shb(capacity=4, rate=3, window=4, seed=0):
    return SafeHistoryBuffer(capacity, rate, window, 64,
                             Rng(seed ^ 0x02), Rng(seed ^ 0x03), ShbMetrics())


class TestInsert:
    def test_capacity_one_keeps_newest(self):
        shb = make_shb(capacity=1)
        shb.insert(0xA000)
        shb.insert(0xB000)
        assert list(shb.entries) == [0xB000]

    def test_fifo_drops_oldest(self):
        shb = make_shb(capacity=4)
        for a in (0xA, 0xB, 0xC, 0xD, 0xE):
            shb.insert(a)
        assert list(shb.entries) == [0xB, 0xC, 0xD, 0xE]

    def test_duplicates_allowed(self):
        shb = make_shb(capacity=4)
        shb.insert(0x100)
        shb.insert(0x100)
        assert list(shb.entries) == [0x100, 0x100]


class TestSelect:
    def test_empty_returns_none(self):
        assert make_shb().select_fetch_address() is None

    def test_window_one_returns_the_line(self):
        shb = make_shb(window=1)
        shb.insert(0x1040)
        for _ in range(10):
            assert shb.select_fetch_address() == 0x1040

    def test_window_64_aligned_region(self):
        shb = make_shb(window=64)
        shb.insert(0x1234)
        seen = set()
        for _ in range(2000):
            a = shb.select_fetch_address()
            assert 0x1000 <= a < 0x2000 and a % 64 == 0
            seen.add(a)
        assert seen == {0x1000 + 64 * k for k in range(64)}

    def test_unaligned_entry_window_base_formula(self):
        shb = make_shb(window=4)
        shb.insert(0x12345)  # base = 0x12345 - (0x12345 % 256) = 0x12300
        for _ in range(100):
            a = shb.select_fetch_address()
            assert 0x12300 <= a < 0x12400 and a % 64 == 0

    def test_window_line_uniformity(self):
        shb = make_shb(window=4)
        shb.insert(0x4000)
        counts = {0x4000 + 64 * k: 0 for k in range(4)}
        n = 100_000
        for _ in range(n):
            counts[shb.select_fetch_address()] += 1
        for c in counts.values():
            assert abs(c / n - 0.25) < 0.01

    def test_entry_selection_uniformity(self):
        # four distinct entries in four different windows, W=1 so the fetch
        # address identifies the selected entry
        shb = make_shb(capacity=4, window=1)
        entries = [0x1000, 0x2000, 0x3000, 0x4000]
        for a in entries:
            shb.insert(a)
        counts = dict.fromkeys(entries, 0)
        n = 100_000
        for _ in range(n):
            counts[shb.select_fetch_address()] += 1
        for c in counts.values():
            assert abs(c / n - 0.25) < 0.01


class TestTick:
    def test_rate_emissions_over_interval(self):
        shb = make_shb(rate=3)
        shb.insert(0x1000)
        emitted = [t for t in range(0, 30, 3) if shb.tick(t) is not None]
        assert len(emitted) == 10

    def test_empty_tick_counted_not_emitted(self):
        shb = make_shb(rate=3)
        assert shb.tick(0) is None
        assert shb.metrics.empty_ticks == 1
        assert shb.metrics.emissions == 0

    def test_emission_pairs_fetch_and_clear_address(self):
        shb = make_shb(window=4)
        shb.insert(0x4000)
        fetch, clear = shb.tick(0)
        assert fetch == clear

    def test_off_rate_tick_is_error(self):
        shb = make_shb(rate=3)
        with pytest.raises(SimulationError):
            shb.tick(4)

    def test_invalid_parameters_rejected(self):
        with pytest.raises(ValueError):
            make_shb(capacity=0)
        with pytest.raises(ValueError):
            make_shb(rate=0)
        with pytest.raises(ValueError):
            make_shb(window=0)
