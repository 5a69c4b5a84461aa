"""Convenience bundle: one seeded simulator wired to a hierarchy and a core."""

from .core import Core
from .hierarchy import DefenseMode, Hierarchy, HierarchyConfig
from .kernel import Simulator
from .metrics import Metrics


class Simulation:
    """One independent simulation instance. Instances never share state, so
    callers may run them in parallel with distinct seeds."""

    def __init__(self, defense: DefenseMode, hierarchy_cfg: HierarchyConfig | None = None,
                 seed: int = 0, *, record_fills: bool = False, record_log: bool = False,
                 force_fill: bool = False):
        self.defense = defense
        self.cfg = hierarchy_cfg if hierarchy_cfg is not None else HierarchyConfig()
        self.metrics = Metrics(record_fills=record_fills)
        self.sim = Simulator(seed, record_log=record_log)
        self.hierarchy = Hierarchy(self.sim, self.cfg, defense, self.metrics)
        self.core = Core(self.sim, self.hierarchy, force_fill=force_fill)

    @property
    def now(self) -> int:
        return self.sim.now

    def run_until(self, cycle: int) -> None:
        self.sim.run_until(cycle)

    def finalize_metrics(self) -> Metrics:
        self.metrics.cycles_total = self.sim.now
        return self.metrics
