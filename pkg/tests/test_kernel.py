import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rascache.kernel import MASK64, Rng, SimulationError, Simulator


def oracle_splitmix64(seed, n):
    """Independent reference implementation, kept deliberately separate."""
    out = []
    state = seed & MASK64
    for _ in range(n):
        state = (state + 0x9E3779B97F4A7C15) & MASK64
        z = state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
        out.append(z ^ (z >> 31))
    return out


class TestRng:
    def test_known_vector_seed_zero(self):
        # First outputs of the reference stream for seed 0.
        rng = Rng(0)
        assert rng.next_u64() == 0xE220A8397B1DCDAF
        assert rng.next_u64() == 0x6E789E6AA1B965F4
        assert rng.next_u64() == 0x06C45D188009454F

    def test_matches_oracle_seed_42(self):
        rng = Rng(42)
        assert [rng.next_u64() for _ in range(4)] == oracle_splitmix64(42, 4)

    @given(st.integers(min_value=0, max_value=MASK64))
    @settings(max_examples=50)
    def test_matches_oracle_any_seed(self, seed):
        rng = Rng(seed)
        assert [rng.next_u64() for _ in range(8)] == oracle_splitmix64(seed, 8)

    def test_identical_seed_identical_stream(self):
        a, b = Rng(777), Rng(777)
        assert [a.next_u64() for _ in range(100)] == [b.next_u64() for _ in range(100)]

    def test_rand_below_one_always_zero(self):
        rng = Rng(5)
        assert all(rng.rand_below(1) == 0 for _ in range(20))

    def test_rand_below_zero_rejected(self):
        with pytest.raises(ValueError):
            Rng(5).rand_below(0)

    def test_rand_below_seed42_reproducible(self):
        # Frozen from the oracle: first accepted draw mod 4.
        assert Rng(42).rand_below(4) == 1
        assert Rng(42).rand_below(4) == 1

    @given(st.integers(min_value=1, max_value=1000), st.integers(min_value=0, max_value=2**32))
    @settings(max_examples=100)
    def test_rand_below_in_range(self, n, seed):
        rng = Rng(seed)
        assert 0 <= rng.rand_below(n) < n

    def test_rand_below_uniform_million_draws(self):
        rng = Rng(2024)
        counts = [0, 0, 0, 0]
        for _ in range(1_000_000):
            counts[rng.rand_below(4)] += 1
        for c in counts:
            assert abs(c / 1_000_000 - 0.25) < 0.005


class TestSimulator:
    def test_zero_delay_fires_this_cycle(self):
        sim = Simulator()
        fired = []
        sim.schedule(0, "a", lambda: fired.append("a"))
        sim.step()
        assert fired == ["a"] and sim.now == 0

    def test_fifo_tie_break(self):
        sim = Simulator()
        fired = []
        sim.schedule(10, "a", lambda: fired.append("a"))
        sim.schedule(10, "b", lambda: fired.append("b"))
        sim.step()
        assert fired == ["a", "b"] and sim.now == 10

    def test_schedule_in_past_is_hard_error(self):
        sim = Simulator()
        sim.schedule(5, "x", lambda: None)
        sim.step()
        with pytest.raises(SimulationError):
            sim.schedule(4, "y", lambda: None)

    def test_idle_step_advances_one_cycle(self):
        sim = Simulator()
        sim.now = 5
        assert sim.step() == []
        assert sim.now == 6

    def test_step_jumps_to_next_event(self):
        sim = Simulator()
        sim.now = 5
        sim.schedule(9, "a", lambda: None)
        sim.schedule(12, "b", lambda: None)
        assert sim.step() == ["a"]
        assert sim.now == 9

    def test_same_cycle_chaining(self):
        sim = Simulator()
        fired = []
        sim.schedule(3, "a", lambda: (fired.append("a"),
                                      sim.schedule(3, "b", lambda: fired.append("b"))))
        sim.step()
        assert fired == ["a", "b"] and sim.now == 3

    def test_thousand_events_identical_logs(self):
        def run(seed):
            sim = Simulator(seed, record_log=True)
            rng = sim.stream(0x05)
            for i in range(1000):
                sim.schedule(rng.rand_below(500), f"e{i}", lambda: None)
            while sim.pending():
                sim.step()
            return list(sim.log)

        assert run(99) == run(99)

    def test_run_until_lands_on_cycle(self):
        sim = Simulator()
        hits = []
        sim.schedule(7, "a", lambda: hits.append(sim.now))
        sim.run_until(20)
        assert hits == [7] and sim.now == 20

    def test_subsystem_streams_isolated(self):
        sim = Simulator(31337)
        a1 = sim.stream(0x01)
        b1 = sim.stream(0x02)
        # draws interleaved one way
        seq = [a1.next_u64(), b1.next_u64(), a1.next_u64()]
        # extra draws on one stream leave the other untouched
        sim2 = Simulator(31337)
        a2 = sim2.stream(0x01)
        b2 = sim2.stream(0x02)
        for _ in range(10):
            a2.next_u64()
        assert b2.next_u64() == seq[1]
