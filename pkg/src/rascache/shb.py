"""Safe history buffer: a bounded FIFO of authorized addresses.

Fetch addresses are produced by picking a random stored entry, then a
random line inside the aligned window of `window_lines` lines containing
that entry. Emission happens at a constant rate, on cycles divisible by
`rate_cycles`, independent of any demand traffic.
"""

from collections import deque

from .kernel import Rng, SimulationError
from .metrics import ShbMetrics


class SafeHistoryBuffer:
    def __init__(self, capacity: int, rate_cycles: int, window_lines: int,
                 line_bytes: int, entry_rng: Rng, window_rng: Rng,
                 metrics: ShbMetrics):
        if capacity < 1 or rate_cycles < 1 or window_lines < 1:
            raise ValueError("capacity, rate_cycles and window_lines must be >= 1")
        self.entries: deque[int] = deque(maxlen=capacity)
        self.capacity = capacity
        self.rate_cycles = rate_cycles
        self.window_lines = window_lines
        self.line_bytes = line_bytes
        self.window_bytes = window_lines * line_bytes
        self._entry_rng = entry_rng
        self._window_rng = window_rng
        self.metrics = metrics

    def insert(self, addr: int) -> None:
        """Append an authorized byte address; the oldest entry drops when full.

        Duplicates are allowed. Addresses are stored unaligned; window
        alignment happens at selection time.
        """
        self.entries.append(addr)
        self.metrics.insertions += 1

    def select_fetch_address(self) -> int | None:
        """Line-aligned address of a random line in the aligned window around
        a uniformly selected entry, or None when the buffer is empty."""
        n = len(self.entries)
        if n == 0:
            return None
        addr = self.entries[self._entry_rng.rand_below(n)]
        base = addr - (addr % self.window_bytes)
        return base + self._window_rng.rand_below(self.window_lines) * self.line_bytes

    def tick(self, now: int) -> tuple[int, int] | None:
        """One constant-rate emission opportunity.

        Returns (fetch_addr, nofillclear_addr) — the same address twice —
        or None on an empty buffer (counted, not emitted).
        """
        if now % self.rate_cycles != 0:
            raise SimulationError(f"shb tick at cycle {now}, rate {self.rate_cycles}")
        addr = self.select_fetch_address()
        if addr is None:
            self.metrics.empty_ticks += 1
            return None
        self.metrics.emissions += 1
        return addr, addr
