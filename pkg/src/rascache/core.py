"""Abstract speculative core.

Memory operations carry explicit authorization or squash times relative to
issue; the defense mode decides the NoFill flag at issue time. Authorized
load addresses feed the safe history buffer; committed stores feed it when
their request enters the cache. Squashed operations never do.
"""

from dataclasses import dataclass, field

from .hierarchy import (
    BASELINE_LRU, RANDOM_FILL, RAS_PLUS, RAS_SPEC, SA_RANDOM,
    AccessOutcome, Hierarchy,
)
from .kernel import SimulationError, Simulator

LOAD = "load"
STORE = "store"
FLUSH = "flush"

SPECULATIVE = "speculative"
AUTHORIZED = "authorized"
SQUASHED = "squashed"
COMMITTED = "committed"


@dataclass
class MemOp:
    kind: str
    addr: int
    auth_delta: int | None = 0     # cycles from issue to authorization
    squash_delta: int | None = None  # set instead of auth_delta to squash
    seq: int = -1

    def __post_init__(self):
        if (self.auth_delta is None) == (self.squash_delta is None):
            raise ValueError("exactly one of auth_delta / squash_delta must be set")
        delta = self.auth_delta if self.auth_delta is not None else self.squash_delta
        if delta < 0:
            raise ValueError("resolve delta must be >= 0")

    @property
    def squashes(self) -> bool:
        return self.squash_delta is not None


def load(addr: int, auth_delta: int = 0) -> MemOp:
    return MemOp(LOAD, addr, auth_delta=auth_delta)


def squashed_load(addr: int, squash_delta: int) -> MemOp:
    return MemOp(LOAD, addr, auth_delta=None, squash_delta=squash_delta)


def store(addr: int) -> MemOp:
    return MemOp(STORE, addr)


def squashed_store(addr: int, squash_delta: int = 0) -> MemOp:
    return MemOp(STORE, addr, auth_delta=None, squash_delta=squash_delta)


def flush(addr: int) -> MemOp:
    return MemOp(FLUSH, addr)


@dataclass
class RobEntry:
    op: MemOp
    seq: int
    state: str
    issue_cycle: int
    resolve_cycle: int


@dataclass
class OpResult:
    op: MemOp
    issue_cycle: int
    complete_cycle: int = -1
    outcome: AccessOutcome | None = None
    dropped: bool = False

    @property
    def latency(self) -> int:
        return self.complete_cycle - self.issue_cycle


class Core:
    """Issues operations against one hierarchy under one defense mode."""

    def __init__(self, sim: Simulator, hierarchy: Hierarchy, *,
                 force_fill: bool = False):
        self.sim = sim
        self.hierarchy = hierarchy
        self.mode = hierarchy.defense.kind
        self.force_fill = force_fill  # deliberate defense-off bug hook for CI guards
        self.rob: list[RobEntry] = []
        self._next_seq = 0
        self._last_resolved_seq = -1
        self.shb_log: list[tuple[int, str]] | None = None  # (op seq, state at insert)

    # -- NoFill assignment --------------------------------------------------

    def _no_fill_for(self, op: MemOp, speculative: bool) -> bool:
        if self.force_fill:
            return False
        mode = self.mode
        if mode in (BASELINE_LRU, SA_RANDOM):
            return False
        if mode == RAS_SPEC:
            return op.kind == LOAD and speculative
        # RAS_PLUS and RANDOM_FILL suppress every demand fill.
        return True

    # -- lifecycle ------------------------------------------------------------

    def issue(self, op: MemOp, on_complete) -> RobEntry | None:
        """Send one operation into the hierarchy at the current cycle.

        Squashed stores never reach the cache; completion is reported
        immediately with `dropped` semantics (on_complete(None)).
        """
        sim = self.sim
        seq = self._next_seq
        self._next_seq += 1
        op.seq = seq
        now = sim.now

        if op.kind == FLUSH:
            self.hierarchy.flush(op.addr, on_complete)
            return None

        if op.kind == STORE:
            if op.squashes:
                on_complete(None)
                return None
            entry = RobEntry(op, seq, COMMITTED, now, now)
            # Committed store: request enters the cache and the address is
            # recorded as safe at the same cycle.
            self.hierarchy.shb_insert(op.addr)
            if self.shb_log is not None:
                self.shb_log.append((seq, COMMITTED))
            self.hierarchy.access(op.addr, is_store=True,
                                  no_fill=self._no_fill_for(op, False),
                                  on_complete=on_complete)
            return entry

        speculative = op.squashes or op.auth_delta > 0
        entry = RobEntry(op, seq, SPECULATIVE if speculative else AUTHORIZED,
                         now, now + (op.squash_delta if op.squashes else op.auth_delta))
        self.rob.append(entry)
        if not speculative:
            self._resolve(entry)
            self._insert_authorized(entry)
        elif op.squashes:
            sim.schedule(entry.resolve_cycle, "squash", lambda e=entry: self.on_squash(e))
        else:
            sim.schedule(entry.resolve_cycle, "authorize",
                         lambda e=entry: self.on_authorize(e))
        self.hierarchy.access(op.addr, is_store=False,
                              no_fill=self._no_fill_for(op, speculative),
                              on_complete=on_complete)
        return entry

    def _resolve(self, entry: RobEntry) -> None:
        if entry.seq <= self._last_resolved_seq:
            raise SimulationError(
                f"out-of-order resolution: op {entry.seq} after "
                f"{self._last_resolved_seq}")
        self._last_resolved_seq = entry.seq

    def _insert_authorized(self, entry: RobEntry) -> None:
        self.hierarchy.shb_insert(entry.op.addr)
        if self.shb_log is not None:
            self.shb_log.append((entry.seq, entry.state))

    def on_authorize(self, entry: RobEntry) -> None:
        if entry.state != SPECULATIVE:
            raise SimulationError(f"authorizing op {entry.seq} in state {entry.state}")
        self._resolve(entry)
        entry.state = AUTHORIZED
        self._insert_authorized(entry)

    def on_squash(self, entry: RobEntry) -> None:
        if entry.state != SPECULATIVE:
            raise SimulationError(f"squashing op {entry.seq} in state {entry.state}")
        self._resolve(entry)
        entry.state = SQUASHED
        # No SHB insertion; an in-flight no-fill miss completes as a bypass.

    # -- program drivers --------------------------------------------------------

    def run_program(self, ops: list[MemOp], max_outstanding: int = 1) -> list[OpResult]:
        """Issue `ops` in order with a bounded number in flight; run to completion.

        The next operation issues on the cycle an in-flight slot frees up,
        which with max_outstanding=1 models a blocking in-order core.
        """
        results = [OpResult(op, -1) for op in ops]
        state = {"idx": 0, "outstanding": 0}

        def finish(i: int, outcome: AccessOutcome | None) -> None:
            r = results[i]
            r.complete_cycle = self.sim.now
            r.outcome = outcome
            r.dropped = outcome is None
            state["outstanding"] -= 1
            pump()

        def pump() -> None:
            while state["idx"] < len(ops) and state["outstanding"] < max_outstanding:
                i = state["idx"]
                state["idx"] += 1
                op = ops[i]
                if op.kind == STORE and op.squashes:
                    results[i].issue_cycle = self.sim.now
                    results[i].complete_cycle = self.sim.now
                    results[i].dropped = True
                    self.issue(op, lambda _o: None)
                    continue
                state["outstanding"] += 1
                results[i].issue_cycle = self.sim.now
                self.issue(op, lambda o, i=i: finish(i, o))

        pump()
        while state["outstanding"] > 0:
            self.sim.step()
        return results

    def run_timed(self, timed_ops: list[tuple[int, MemOp]]) -> list[OpResult]:
        """Issue each op at its absolute cycle regardless of completion order,
        then run the simulation until every op has completed."""
        results = []
        pending = {"n": len(timed_ops)}

        def finish(res: OpResult, outcome: AccessOutcome | None) -> None:
            res.complete_cycle = self.sim.now
            res.outcome = outcome
            res.dropped = outcome is None
            pending["n"] -= 1

        for at, op in timed_ops:
            res = OpResult(op, at)
            results.append(res)

            def fire(op=op, res=res):
                res.issue_cycle = self.sim.now
                self.issue(op, lambda o, r=res: finish(r, o))

            self.sim.schedule(at, "request-issue", fire)
        while pending["n"] > 0:
            self.sim.step()
        return results
