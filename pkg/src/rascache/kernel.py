"""Deterministic simulation kernel: cycle clock, FIFO event queue, seeded PRNG.

Every simulation instance owns one :class:`Simulator`. Randomness is drawn
from per-subsystem SplitMix64 streams derived from the instance seed, so
adding draws in one subsystem never perturbs decisions made by another.
"""

import heapq
from typing import Callable

MASK64 = (1 << 64) - 1

# Per-subsystem seed offsets (xor'ed into the instance seed).
STREAM_REPLACEMENT = 0x01
STREAM_SHB_ENTRY = 0x02
STREAM_SHB_WINDOW = 0x03
STREAM_WORKLOAD = 0x04


class SimulationError(RuntimeError):
    """A programming error in simulation setup, e.g. scheduling in the past."""


class Rng:
    """SplitMix64 generator. Bit-exact and trivially portable."""

    __slots__ = ("state",)

    def __init__(self, seed: int):
        self.state = seed & MASK64

    def next_u64(self) -> int:
        self.state = (self.state + 0x9E3779B97F4A7C15) & MASK64
        z = self.state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
        return z ^ (z >> 31)

    def rand_below(self, n: int) -> int:
        """Uniform integer in [0, n) via rejection sampling on the raw stream."""
        if n < 1:
            raise ValueError(f"rand_below requires n >= 1, got {n}")
        if n == 1:
            return 0
        limit = ((1 << 64) // n) * n
        while True:
            z = self.next_u64()
            if z < limit:
                return z % n


class Simulator:
    """Single-threaded event loop with a monotone cycle clock.

    Events firing on the same cycle run in insertion order (deterministic
    tie-break). With an empty queue the clock idles forward one cycle per
    step so constant-rate components keep firing.
    """

    def __init__(self, seed: int = 0, record_log: bool = False):
        self.seed = seed
        self.now = 0
        self._queue: list = []
        self._seq = 0
        self.log: list[str] | None = [] if record_log else None

    def stream(self, subsystem: int) -> Rng:
        """A fresh PRNG stream isolated to one subsystem."""
        return Rng(self.seed ^ subsystem)

    def schedule(self, at: int, tag: str, fn: Callable[[], None]) -> None:
        """Enqueue `fn` to fire at cycle `at`. Scheduling in the past is a bug."""
        if at < self.now:
            raise SimulationError(f"cannot schedule '{tag}' at cycle {at}, now is {self.now}")
        heapq.heappush(self._queue, (at, self._seq, tag, fn))
        self._seq += 1

    def step(self) -> list[str]:
        """Advance to the next event cycle (or +1 when idle) and fire everything there.

        Events scheduled for the current cycle while it is being processed
        fire within the same step, after everything already enqueued.
        """
        q = self._queue
        if not q:
            self.now += 1
            return []
        t = q[0][0]
        self.now = t
        fired = []
        log = self.log
        while q and q[0][0] == t:
            _, _, tag, fn = heapq.heappop(q)
            if log is not None:
                log.append(f"{t} {tag}")
            fired.append(tag)
            fn()
        return fired

    def run_until(self, cycle: int) -> None:
        """Fire all events strictly before `cycle`, then land the clock on it."""
        q = self._queue
        while q and q[0][0] < cycle:
            self.step()
        if self.now < cycle:
            self.now = cycle

    def pending(self) -> int:
        return len(self._queue)
