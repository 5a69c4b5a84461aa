"""Two-level hierarchy: request routing, the cross-level NoFill chain,
writeback protection, constant-rate safe fetches, and NoFillClear.
"""

from dataclasses import dataclass
from enum import Enum

from .cache import (
    LRU, RANDOM, CacheGeometry, CacheLevel, ClearResult, Fill, FlushResult,
    Lookup, MshrEntry, WritebackEntry, is_pow2,
)
from .kernel import (
    STREAM_REPLACEMENT, STREAM_SHB_ENTRY, STREAM_SHB_WINDOW,
    SimulationError, Simulator,
)
from .metrics import (
    CLEAR_SHB_FETCH, FillEvent, Metrics,
    PROV_DEMAND, PROV_RF_PREFETCH, PROV_SHB_FETCH, PROV_WRITEBACK,
)
from .shb import SafeHistoryBuffer

BASELINE_LRU = "baseline-lru"
SA_RANDOM = "sa-random"
RAS_SPEC = "ras-spec"
RAS_PLUS = "ras-plus"
RANDOM_FILL = "random-fill"

DEFENSE_KINDS = (BASELINE_LRU, SA_RANDOM, RAS_SPEC, RAS_PLUS, RANDOM_FILL)


@dataclass(frozen=True)
class DefenseMode:
    kind: str
    rate_cycles: int = 0
    shb_entries: int = 0
    window_lines: int = 0
    nofillclear: bool = True
    protect_writebacks: bool = True

    def __post_init__(self):
        if self.kind not in DEFENSE_KINDS:
            raise ValueError(f"unknown defense kind {self.kind!r}")
        if self.kind in (RAS_SPEC, RAS_PLUS):
            if self.rate_cycles < 1 or self.shb_entries < 1 or self.window_lines < 1:
                raise ValueError(f"{self.kind} requires rate_cycles, shb_entries "
                                 f"and window_lines all >= 1")
            if not is_pow2(self.window_lines):
                raise ValueError(f"window_lines must be a power of two, "
                                 f"got {self.window_lines}")
        elif self.kind == RANDOM_FILL:
            if self.window_lines < 1 or not is_pow2(self.window_lines):
                raise ValueError("random-fill requires a power-of-two window_lines >= 1")

    @property
    def uses_shb(self) -> bool:
        return self.kind in (RAS_SPEC, RAS_PLUS)

    def label(self) -> str:
        if self.uses_shb:
            return (f"{self.kind}-R{self.rate_cycles}E{self.shb_entries}"
                    f"W{self.window_lines}")
        if self.kind == RANDOM_FILL:
            return f"{self.kind}-W{self.window_lines}"
        return self.kind


def baseline_lru() -> DefenseMode:
    return DefenseMode(BASELINE_LRU)


def sa_random() -> DefenseMode:
    return DefenseMode(SA_RANDOM)


def ras_spec(rate: int = 3, entries: int = 1, window: int = 4, **kw) -> DefenseMode:
    return DefenseMode(RAS_SPEC, rate, entries, window, **kw)


def ras_plus(rate: int = 3, entries: int = 4, window: int = 64, **kw) -> DefenseMode:
    return DefenseMode(RAS_PLUS, rate, entries, window, **kw)


def random_fill(window: int = 4) -> DefenseMode:
    return DefenseMode(RANDOM_FILL, window_lines=window)


@dataclass(frozen=True)
class HierarchyConfig:
    l1: CacheGeometry = CacheGeometry(num_sets=64, ways=8, line_bytes=64,
                                      mshr_entries=16, hit_latency=2)
    l2: CacheGeometry = CacheGeometry(num_sets=1024, ways=8, line_bytes=64,
                                      mshr_entries=16, hit_latency=12)
    l2_latency: int = 12
    mem_latency: int = 150

    def __post_init__(self):
        if self.l1.line_bytes != self.l2.line_bytes:
            raise ValueError("l1 and l2 must share one line size")

    @property
    def l2_path_latency(self) -> int:
        return self.l1.hit_latency + self.l2_latency

    @property
    def mem_path_latency(self) -> int:
        return self.l1.hit_latency + self.l2_latency + self.mem_latency


class NfcResult(Enum):
    CLEARED_L1 = "cleared_l1"
    CLEARED_L1_L2 = "cleared_l1_l2"
    CLEARED_L2 = "cleared_l2"
    NO_MATCH = "no_match"


@dataclass
class AccessOutcome:
    total_latency: int
    l1_hit: bool
    l2_hit: bool
    fill_suppressed_at: str  # none | l1 | l2 | both
    merged: bool = False
    flushed: bool | None = None


class Request:
    __slots__ = ("addr", "is_store", "no_fill", "issue_cycle", "on_complete",
                 "l2_hit", "merged")

    def __init__(self, addr: int, is_store: bool, no_fill: bool, issue_cycle: int,
                 on_complete):
        self.addr = addr
        self.is_store = is_store
        self.no_fill = no_fill
        self.issue_cycle = issue_cycle
        self.on_complete = on_complete
        self.l2_hit = False
        self.merged = False


def _suppressed_tag(l1_bypassed: bool, l2_bypassed: bool) -> str:
    if l1_bypassed and l2_bypassed:
        return "both"
    if l1_bypassed:
        return "l1"
    if l2_bypassed:
        return "l2"
    return "none"


class Hierarchy:
    """L1 + L2 + fixed-latency memory, owned by one simulation instance."""

    def __init__(self, sim: Simulator, cfg: HierarchyConfig, defense: DefenseMode,
                 metrics: Metrics):
        self.sim = sim
        self.cfg = cfg
        self.defense = defense
        self.metrics = metrics
        policy = LRU if defense.kind == BASELINE_LRU else RANDOM
        self.l1 = CacheLevel("l1", cfg.l1, policy, metrics.l1)
        self.l2 = CacheLevel("l2", cfg.l2, policy, metrics.l2)
        self._repl_rng = sim.stream(STREAM_REPLACEMENT)
        self._window_rng = sim.stream(STREAM_SHB_WINDOW)
        self.shb: SafeHistoryBuffer | None = None
        if defense.uses_shb:
            self.shb = SafeHistoryBuffer(
                defense.shb_entries, defense.rate_cycles, defense.window_lines,
                cfg.l1.line_bytes, sim.stream(STREAM_SHB_ENTRY), self._window_rng,
                metrics.shb)
            sim.schedule(0, "shb-tick", self._shb_tick)
        self._shb_targets: list[tuple[int, int]] | None = None  # (line, window_base)

    # -- SHB wiring --------------------------------------------------------

    def record_shb_targets(self) -> list[tuple[int, int]]:
        """Enable and return the log of (fetch line, window base) pairs."""
        self._shb_targets = []
        return self._shb_targets

    def shb_insert(self, addr: int) -> None:
        if self.shb is not None:
            self.shb.insert(addr)

    def _shb_tick(self) -> None:
        emission = self.shb.tick(self.sim.now)
        if emission is not None:
            fetch_addr, clear_addr = emission
            line = self.l1.line_addr(fetch_addr)
            if self._shb_targets is not None:
                base = clear_addr - (clear_addr % self.shb.window_bytes)
                self._shb_targets.append((line, base))
            if self.defense.nofillclear:
                self.propagate_nofillclear(line, source=CLEAR_SHB_FETCH)
            self._issue_fetch(fetch_addr, PROV_SHB_FETCH)
        self.sim.schedule(self.sim.now + self.shb.rate_cycles, "shb-tick", self._shb_tick)

    def _issue_fetch(self, addr: int, provenance: str) -> None:
        """Fill-allowed prefetch-style request. A resident line is a no-op
        (no metadata change); a full MSHR file drops the fetch.

        A safe fetch leaves clearing to the explicit clear signal that
        precedes it (clean attribution); a random-fill prefetch has no such
        signal, so its merge clears like any fill-allowed request."""
        if self.l1.is_resident(addr):
            return
        res, mshr = self.l1.lookup(addr, False, self.sim.now, is_fetch=True,
                                   provenance=provenance,
                                   merge_clears=provenance == PROV_RF_PREFETCH)
        if res is Lookup.BLOCKED:
            self.metrics.shb.dropped_full_mshr += 1
            return
        if res is Lookup.MISS_ALLOCATED:
            self.sim.schedule(self.sim.now + self.cfg.l1.hit_latency, "request-issue",
                              lambda m=mshr: self._l2_attempt(m))

    # -- demand path --------------------------------------------------------

    def access(self, addr: int, *, is_store: bool, no_fill: bool, on_complete) -> None:
        """Route one demand request. The outcome is delivered asynchronously."""
        req = Request(addr, is_store, no_fill, self.sim.now, on_complete)
        self._l1_attempt(req)

    def _l1_attempt(self, req: Request) -> None:
        sim = self.sim
        res, mshr = self.l1.lookup(req.addr, req.no_fill, sim.now,
                                   is_store=req.is_store, provenance=PROV_DEMAND)
        if res is Lookup.HIT:
            done = sim.now + self.cfg.l1.hit_latency
            sim.schedule(done, "fill-return", lambda r=req: self._complete_hit(r))
            return
        if res is Lookup.MISS_ALLOCATED:
            mshr.targets.append(req)
            if self.defense.kind == RANDOM_FILL:
                self._rf_prefetch(req.addr)
            sim.schedule(sim.now + self.cfg.l1.hit_latency, "request-issue",
                         lambda m=mshr: self._l2_attempt(m))
            return
        if res is Lookup.MISS_MERGED:
            req.merged = True
            mshr.targets.append(req)
            return
        sim.schedule(sim.now + 1, "request-issue", lambda r=req: self._l1_attempt(r))

    def _rf_prefetch(self, miss_addr: int) -> None:
        w = self.defense.window_lines
        lb = self.cfg.l1.line_bytes
        base = miss_addr - (miss_addr % (w * lb))
        self._issue_fetch(base + self._window_rng.rand_below(w) * lb, PROV_RF_PREFETCH)

    def _complete_hit(self, req: Request) -> None:
        req.on_complete(AccessOutcome(self.sim.now - req.issue_cycle, True, False, "none"))

    def _l2_attempt(self, l1_mshr: MshrEntry) -> None:
        sim = self.sim
        is_fetch = l1_mshr.provenance != PROV_DEMAND
        res, l2_mshr = self.l2.lookup(l1_mshr.line_addr, l1_mshr.no_fill, sim.now,
                                      is_fetch=is_fetch, provenance=l1_mshr.provenance,
                                      merge_clears=not is_fetch)
        if res is Lookup.HIT:
            sim.schedule(sim.now + self.cfg.l2_latency, "fill-return",
                         lambda m=l1_mshr: self._l1_fill_return(m, l2_hit=True))
            return
        if res is Lookup.MISS_ALLOCATED:
            l2_mshr.targets.append(l1_mshr)
            sim.schedule(sim.now + self.cfg.l2_latency + self.cfg.mem_latency,
                         "fill-return", lambda m=l2_mshr: self._l2_fill_return(m))
            return
        if res is Lookup.MISS_MERGED:
            l2_mshr.targets.append(l1_mshr)
            return
        sim.schedule(sim.now + 1, "request-issue", lambda m=l1_mshr: self._l2_attempt(m))

    def _l2_fill_return(self, l2_mshr: MshrEntry) -> None:
        fill, wb = self.l2.complete_fill(l2_mshr, self._repl_rng)
        if fill is Fill.FILLED:
            self._record_fill("l2", l2_mshr)
        if wb is not None:
            self._wb_to_memory(wb)
        bypassed = fill is Fill.BYPASSED
        for l1_mshr in l2_mshr.targets:
            self._l1_fill_return(l1_mshr, l2_hit=False, l2_bypassed=bypassed)

    def _l1_fill_return(self, l1_mshr: MshrEntry, *, l2_hit: bool,
                        l2_bypassed: bool = False) -> None:
        fill, wb = self.l1.complete_fill(l1_mshr, self._repl_rng)
        if fill is Fill.FILLED:
            self._record_fill("l1", l1_mshr)
        if wb is not None:
            self.route_writeback(wb)
        l1_bypassed = fill is Fill.BYPASSED
        now = self.sim.now
        tag = _suppressed_tag(l1_bypassed, l2_bypassed)
        for req in l1_mshr.targets:
            req.on_complete(AccessOutcome(now - req.issue_cycle, False, l2_hit, tag,
                                          merged=req.merged))

    def _record_fill(self, level: str, mshr: MshrEntry) -> None:
        if self.metrics.record_fills:
            self.metrics.fill_log.append(FillEvent(
                self.sim.now, level, mshr.line_addr, mshr.provenance,
                mshr.orig_no_fill, mshr.cleared_by))

    # -- writebacks ----------------------------------------------------------

    def route_writeback(self, entry: WritebackEntry) -> None:
        """L1 writeback: no-fill entries bypass L2 allocation entirely."""
        self.metrics.l1.writebacks_out += 1
        if entry.no_fill and self.defense.protect_writebacks:
            # Straight into the L2 writeback buffer and on to memory; the
            # tag store never learns about this line.
            self.metrics.l2.writebacks_out += 1
            return
        installed, displaced = self.l2.install_writeback(entry.line_addr, self._repl_rng)
        if displaced is not None:
            self._wb_to_memory(displaced)
        if installed and self.metrics.record_fills:
            self.metrics.fill_log.append(FillEvent(
                self.sim.now, "l2", entry.line_addr, PROV_WRITEBACK, False, None))

    def _wb_to_memory(self, entry: WritebackEntry) -> None:
        self.metrics.l2.writebacks_out += 1

    # -- flush and clear ------------------------------------------------------

    def flush(self, addr: int, on_complete) -> None:
        """Invalidate a line at both levels; reports total flush latency."""
        sim = self.sim
        r1, wb1, lat1 = self.l1.flush_line(addr)
        if wb1 is not None:
            self.route_writeback(wb1)
        r2, wb2, lat2 = self.l2.flush_line(addr)
        if wb2 is not None:
            self._wb_to_memory(wb2)
        was_present = FlushResult.NOT_PRESENT not in (r1, r2)
        issue = sim.now
        sim.schedule(sim.now + lat1 + lat2, "fill-return",
                     lambda: on_complete(AccessOutcome(
                         sim.now - issue, False, False, "none", flushed=was_present)))

    def propagate_nofillclear(self, line_addr: int, source: str = CLEAR_SHB_FETCH) -> NfcResult:
        """Apply the clear signal at L1 then L2 and report which levels matched."""
        c1 = self.l1.apply_nofillclear(line_addr, source)
        c2 = self.l2.apply_nofillclear(line_addr, source)
        if c1 is ClearResult.CLEARED and c2 is ClearResult.CLEARED:
            return NfcResult.CLEARED_L1_L2
        if c1 is ClearResult.CLEARED:
            return NfcResult.CLEARED_L1
        if c2 is ClearResult.CLEARED:
            # An L2 MSHR always has a live L1 counterpart in the shipped flow;
            # this branch documents the signal path rather than a real state.
            raise SimulationError(f"L2-only NoFillClear match for {line_addr:#x}")
        return NfcResult.NO_MATCH
