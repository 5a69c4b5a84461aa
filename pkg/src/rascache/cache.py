"""One set-associative cache level: tag store, replacement, MSHRs, fill suppression.

Only tags and metadata are modeled. Timing attacks depend on line presence,
not contents, so data payloads are never stored.
"""

from dataclasses import dataclass
from enum import Enum

from .kernel import Rng, SimulationError
from .metrics import CLEAR_NONSPEC, LevelMetrics

LRU = "lru"
RANDOM = "random"


def is_pow2(n: int) -> bool:
    return n >= 1 and (n & (n - 1)) == 0


@dataclass(frozen=True)
class CacheGeometry:
    num_sets: int
    ways: int
    line_bytes: int = 64
    mshr_entries: int = 16
    lfb_entries: int = 8
    wb_entries: int = 8
    hit_latency: int = 2

    def __post_init__(self):
        if not is_pow2(self.num_sets):
            raise ValueError(f"num_sets must be a power of two, got {self.num_sets}")
        if not is_pow2(self.line_bytes):
            raise ValueError(f"line_bytes must be a power of two, got {self.line_bytes}")
        if self.ways < 1 or self.mshr_entries < 1:
            raise ValueError("ways and mshr_entries must be >= 1")

    @property
    def way_size_bytes(self) -> int:
        return self.num_sets * self.line_bytes


class TagEntry:
    __slots__ = ("valid", "dirty", "tag", "lru_rank")

    def __init__(self, rank: int):
        self.valid = False
        self.dirty = False
        self.tag = 0
        self.lru_rank = rank

    def snapshot(self) -> tuple:
        return (self.valid, self.dirty, self.tag, self.lru_rank)


class MshrEntry:
    """Tracks one outstanding miss; merges later requests to the same line.

    no_fill is monotone downward: it may transition 1 -> 0 once and never back.
    """

    __slots__ = ("line_addr", "no_fill", "targets", "issued_at", "store_merged",
                 "orig_no_fill", "cleared_by", "provenance")

    def __init__(self, line_addr: int, no_fill: bool, issued_at: int, provenance: str):
        self.line_addr = line_addr
        self.no_fill = no_fill
        self.orig_no_fill = no_fill
        self.cleared_by: str | None = None
        self.targets: list = []
        self.issued_at = issued_at
        self.store_merged = False
        self.provenance = provenance


class WritebackEntry:
    __slots__ = ("line_addr", "no_fill")

    def __init__(self, line_addr: int, no_fill: bool):
        self.line_addr = line_addr
        self.no_fill = no_fill


class Lookup(Enum):
    HIT = "hit"
    MISS_ALLOCATED = "miss_allocated"
    MISS_MERGED = "miss_merged"
    BLOCKED = "blocked"


class Fill(Enum):
    FILLED = "filled"
    BYPASSED = "bypassed"


class FlushResult(Enum):
    FLUSHED_CLEAN = "flushed_clean"
    FLUSHED_DIRTY = "flushed_dirty"
    NOT_PRESENT = "not_present"


class ClearResult(Enum):
    CLEARED = "cleared"
    NO_MATCH = "no_match"


class CacheLevel:
    def __init__(self, name: str, geom: CacheGeometry, policy: str, metrics: LevelMetrics):
        self.name = name
        self.geom = geom
        self.policy = policy
        self.metrics = metrics
        # Sets are allocated lazily; most runs touch a small fraction of them.
        self._sets: list[list[TagEntry] | None] = [None] * geom.num_sets
        self.mshrs: dict[int, MshrEntry] = {}
        self._line_shift = geom.line_bytes.bit_length() - 1
        self._set_mask = geom.num_sets - 1

    # -- address helpers -------------------------------------------------

    def line_addr(self, addr: int) -> int:
        return (addr >> self._line_shift) << self._line_shift

    def set_index(self, addr: int) -> int:
        return (addr >> self._line_shift) & self._set_mask

    def tag_of(self, addr: int) -> int:
        return addr >> self._line_shift >> (self._set_mask.bit_length())

    def _get_set(self, idx: int) -> list[TagEntry]:
        s = self._sets[idx]
        if s is None:
            s = [TagEntry(rank) for rank in range(self.geom.ways)]
            self._sets[idx] = s
        return s

    def _find(self, idx: int, tag: int) -> TagEntry | None:
        s = self._sets[idx]
        if s is None:
            return None
        for e in s:
            if e.valid and e.tag == tag:
                return e
        return None

    def _touch_lru(self, idx: int, entry: TagEntry) -> None:
        r = entry.lru_rank
        for e in self._sets[idx]:
            if e.lru_rank < r:
                e.lru_rank += 1
        entry.lru_rank = 0

    # -- operations -------------------------------------------------------

    def is_resident(self, addr: int) -> bool:
        """Tag probe without any metadata update or metrics count."""
        return self._find(self.set_index(addr), self.tag_of(addr)) is not None

    def lookup(self, addr: int, is_no_fill: bool, now: int, *, is_store: bool = False,
               is_fetch: bool = False, provenance: str = "demand",
               merge_clears: bool = True) -> tuple[Lookup, MshrEntry | None]:
        """Demand or fetch lookup. Fetches are kept out of the demand counters.

        Merging a fill-allowed request into a no-fill MSHR clears NoFill
        (unless `merge_clears` is off, used for prefetch-style requests whose
        clearing duty belongs to the separate clear signal).
        """
        idx = self.set_index(addr)
        tag = self.tag_of(addr)
        entry = self._find(idx, tag)
        m = self.metrics
        if entry is not None:
            if not is_fetch:
                m.accesses += 1
                m.hits += 1
            if self.policy == LRU:
                self._touch_lru(idx, entry)
            if is_store:
                entry.dirty = True
            return Lookup.HIT, None

        line = self.line_addr(addr)
        mshr = self.mshrs.get(line)
        if mshr is not None:
            if not is_fetch:
                m.accesses += 1
                m.misses += 1
                m.merges += 1
            if not is_no_fill and mshr.no_fill and merge_clears:
                self._clear_nofill(mshr, CLEAR_NONSPEC)
            if is_store:
                mshr.store_merged = True
            return Lookup.MISS_MERGED, mshr

        if len(self.mshrs) >= self.geom.mshr_entries:
            if not is_fetch:
                m.blocked_retries += 1
            return Lookup.BLOCKED, None

        mshr = MshrEntry(line, is_no_fill, now, provenance)
        mshr.store_merged = is_store
        self.mshrs[line] = mshr
        if not is_fetch:
            m.accesses += 1
            m.misses += 1
        if is_no_fill:
            m.nofill_allocated += 1
        return Lookup.MISS_ALLOCATED, mshr

    def write_store(self, addr: int, is_no_fill: bool, now: int) -> tuple[Lookup, MshrEntry | None]:
        """Store entry point; a hit marks the line dirty, a miss allocates/merges."""
        return self.lookup(addr, is_no_fill, now, is_store=True)

    def select_victim(self, set_index: int, rng: Rng) -> int:
        """Invalid way preferred (lowest index); else LRU rank or a random draw."""
        ways = self._get_set(set_index)
        for i, e in enumerate(ways):
            if not e.valid:
                return i
        if self.policy == LRU:
            worst = self.geom.ways - 1
            for i, e in enumerate(ways):
                if e.lru_rank == worst:
                    return i
            raise SimulationError("lru ranks are not a permutation")
        return rng.rand_below(self.geom.ways)

    def complete_fill(self, mshr: MshrEntry, rng: Rng) -> tuple[Fill, WritebackEntry | None]:
        """Consume the returned line: install it, or bypass when still no-fill.

        Frees the MSHR either way. Returns a writeback entry when a dirty
        victim is displaced or when a no-fill store's merged line must be
        pushed down without filling.
        """
        line = mshr.line_addr
        if self.mshrs.get(line) is not mshr:
            raise SimulationError(f"completing a foreign MSHR for {line:#x}")
        del self.mshrs[line]
        m = self.metrics
        m.mshr_completions += 1

        if mshr.no_fill:
            m.bypassed_fills += 1
            if mshr.orig_no_fill and mshr.cleared_by is None:
                m.nofill_never_cleared += 1
            wb = WritebackEntry(line, True) if mshr.store_merged else None
            return Fill.BYPASSED, wb

        idx = self.set_index(line)
        way = self.select_victim(idx, rng)
        entry = self._get_set(idx)[way]
        wb = None
        if entry.valid:
            m.evictions += 1
            if entry.dirty:
                victim_addr = self._rebuild_addr(entry.tag, idx)
                wb = WritebackEntry(victim_addr, False)
        entry.valid = True
        entry.dirty = mshr.store_merged
        entry.tag = self.tag_of(line)
        if self.policy == LRU:
            self._touch_lru(idx, entry)
        m.fills += 1
        return Fill.FILLED, wb

    def _rebuild_addr(self, tag: int, set_index: int) -> int:
        return ((tag << self._set_mask.bit_length()) | set_index) << self._line_shift

    def install_writeback(self, line_addr: int, rng: Rng) -> tuple[bool, WritebackEntry | None]:
        """Fill-allowed writeback arriving from the level above.

        A resident line just turns dirty. Otherwise the line is allocated,
        possibly displacing a victim. Returns (installed, displaced writeback).
        """
        idx = self.set_index(line_addr)
        entry = self._find(idx, self.tag_of(line_addr))
        if entry is not None:
            entry.dirty = True
            return False, None
        way = self.select_victim(idx, rng)
        victim = self._get_set(idx)[way]
        wb = None
        if victim.valid:
            self.metrics.evictions += 1
            if victim.dirty:
                wb = WritebackEntry(self._rebuild_addr(victim.tag, idx), False)
        victim.valid = True
        victim.dirty = True
        victim.tag = self.tag_of(line_addr)
        if self.policy == LRU:
            self._touch_lru(idx, victim)
        self.metrics.wb_installs += 1
        return True, wb

    def flush_line(self, addr: int) -> tuple[FlushResult, WritebackEntry | None, int]:
        """Invalidate one line. A present flush costs one extra cycle, which is
        what gives flush-timing channels their signal."""
        idx = self.set_index(addr)
        entry = self._find(idx, self.tag_of(addr))
        base = self.geom.hit_latency
        if entry is None:
            return FlushResult.NOT_PRESENT, None, base
        entry.valid = False
        if entry.dirty:
            entry.dirty = False
            return FlushResult.FLUSHED_DIRTY, WritebackEntry(self.line_addr(addr), False), base + 1
        return FlushResult.FLUSHED_CLEAN, None, base + 1

    def apply_nofillclear(self, line_addr: int, source: str = CLEAR_NONSPEC) -> ClearResult:
        """Clear the NoFill bit of a matching MSHR. Never touches the tag store."""
        mshr = self.mshrs.get(line_addr)
        if mshr is None:
            return ClearResult.NO_MATCH
        if mshr.no_fill:
            self._clear_nofill(mshr, source)
        return ClearResult.CLEARED

    def _clear_nofill(self, mshr: MshrEntry, source: str) -> None:
        mshr.no_fill = False
        mshr.cleared_by = source
        if source == CLEAR_NONSPEC:
            self.metrics.nofill_cleared_nonspec += 1
        else:
            self.metrics.nofill_cleared_shb += 1

    # -- introspection for tests and invariants ---------------------------

    def snapshot(self) -> list:
        """Bit-comparable image of all tag/replacement state."""
        out = []
        for i, s in enumerate(self._sets):
            if s is not None:
                out.append((i, tuple(e.snapshot() for e in s)))
        return out

    def resident_lines(self) -> list[int]:
        out = []
        nbits = self._set_mask.bit_length()
        for i, s in enumerate(self._sets):
            if s is None:
                continue
            for e in s:
                if e.valid:
                    out.append(((e.tag << nbits) | i) << self._line_shift)
        return out
