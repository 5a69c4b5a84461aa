"""Counters collected during a simulation run.

Demand traffic and prefetch-style traffic are counted separately: miss
rates quoted anywhere in this package are always demand misses over demand
accesses.
"""

from dataclasses import dataclass, field

# Fill provenance tags.
PROV_DEMAND = "demand"
PROV_SHB_FETCH = "shb_fetch"
PROV_RF_PREFETCH = "rf_prefetch"
PROV_WRITEBACK = "writeback"

# NoFill clear sources.
CLEAR_SHB_FETCH = "shb_fetch"
CLEAR_NONSPEC = "nonspec_access"


@dataclass
class LevelMetrics:
    accesses: int = 0
    hits: int = 0
    misses: int = 0
    merges: int = 0
    blocked_retries: int = 0
    fills: int = 0
    bypassed_fills: int = 0
    mshr_completions: int = 0
    evictions: int = 0
    wb_installs: int = 0
    writebacks_out: int = 0
    nofill_allocated: int = 0
    nofill_never_cleared: int = 0
    nofill_cleared_shb: int = 0
    nofill_cleared_nonspec: int = 0

    @property
    def miss_rate(self) -> float:
        return self.misses / self.accesses if self.accesses else 0.0

    def as_dict(self) -> dict:
        d = {k: getattr(self, k) for k in self.__dataclass_fields__}
        d["miss_rate"] = self.miss_rate
        return d


@dataclass
class ShbMetrics:
    insertions: int = 0
    emissions: int = 0
    empty_ticks: int = 0
    dropped_full_mshr: int = 0

    def as_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


@dataclass
class FillEvent:
    """One tag-store install, kept only while fill recording is enabled."""

    cycle: int
    level: str
    line_addr: int
    provenance: str
    was_no_fill: bool
    cleared_by: str | None


@dataclass
class Metrics:
    l1: LevelMetrics = field(default_factory=LevelMetrics)
    l2: LevelMetrics = field(default_factory=LevelMetrics)
    shb: ShbMetrics = field(default_factory=ShbMetrics)
    cycles_total: int = 0
    record_fills: bool = False
    fill_log: list[FillEvent] = field(default_factory=list)

    def level(self, name: str) -> LevelMetrics:
        return self.l1 if name == "l1" else self.l2

    def as_dict(self) -> dict:
        return {
            "l1": self.l1.as_dict(),
            "l2": self.l2.as_dict(),
            "shb": self.shb.as_dict(),
            "cycles_total": self.cycles_total,
        }
