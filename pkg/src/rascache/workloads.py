"""Synthetic trace generation and replay for qualitative performance trends.

Trace file format, one record per line:

    <gap> <L|S> <hex addr> <auth_delta|X>

`gap` is cycles since the previous issue, `auth_delta` is cycles from issue
to authorization and `X` marks a squashed operation. Lines starting with
`#` are comments. Malformed lines are fatal, reported with their number.
"""

from dataclasses import dataclass

from .core import LOAD, STORE, MemOp
from .hierarchy import DefenseMode, HierarchyConfig
from .kernel import STREAM_WORKLOAD, Rng
from .metrics import Metrics
from .simulation import Simulation

SQUASH = "X"
SQUASH_DELAY = 200  # resolve delay applied to X records at replay
STORE_SHARE = 0.1   # fraction of generated records that are stores
ISSUE_GAP = 4       # cycles between generated issues; slower than the fetch rate


@dataclass
class TraceRecord:
    gap: int
    kind: str  # "L" | "S"
    addr: int
    auth: int | str  # auth_delta or SQUASH

    def __post_init__(self):
        if self.gap < 0:
            raise ValueError("gap must be >= 0")
        if self.auth != SQUASH and self.auth < 0:
            raise ValueError("auth_delta must be >= 0")


@dataclass(frozen=True)
class LocalityModel:
    working_set_bytes: int = 64 * 1024
    stride_bytes: int = 64
    p_sequential: float = 0.6
    p_reuse: float = 0.25
    spec_fraction: float = 0.5
    auth_latency: tuple = ("uniform", 5, 60)  # ("fixed", c) | ("uniform", lo, hi)

    def __post_init__(self):
        for p in (self.p_sequential, self.p_reuse, self.spec_fraction):
            if not 0.0 <= p <= 1.0:
                raise ValueError("probabilities must lie in [0, 1]")
        if self.p_sequential + self.p_reuse > 1.0:
            raise ValueError("p_sequential + p_reuse must not exceed 1")

    def draw_auth(self, rng: Rng) -> int:
        if self.auth_latency[0] == "fixed":
            return self.auth_latency[1]
        lo, hi = self.auth_latency[1], self.auth_latency[2]
        return lo + rng.rand_below(hi - lo + 1)


def _prob(rng: Rng, p: float) -> bool:
    return rng.next_u64() < p * 2**64


def generate_trace(model: LocalityModel, n: int, rng: Rng) -> list[TraceRecord]:
    """Reproducible mixture trace over an aligned working set starting at 0.

    Authorization times are kept strictly increasing across records (clamped
    when a draw would resolve before an earlier record), matching how a real
    reorder buffer authorizes in program order.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    ws = model.working_set_bytes
    line = 64
    records: list[TraceRecord] = []
    cur = 0
    history: list[int] = []
    issue = 0
    last_resolve = -1
    for i in range(n):
        r = rng.next_u64() / 2**64
        if r < model.p_sequential:
            cur = (cur + model.stride_bytes) % ws
        elif r < model.p_sequential + model.p_reuse and history:
            cur = history[len(history) - 1 - rng.rand_below(min(len(history), 64))]
        else:
            cur = rng.rand_below(ws // line) * line
        history.append(cur)
        if len(history) > 64:
            del history[0]

        gap = 0 if i == 0 else ISSUE_GAP
        issue += gap
        if _prob(rng, STORE_SHARE):
            # Stores commit in order: push the issue past every earlier resolve.
            if issue <= last_resolve:
                gap += last_resolve + 1 - issue
                issue = last_resolve + 1
            last_resolve = issue
            records.append(TraceRecord(gap, "S", cur, 0))
            continue
        speculative = _prob(rng, model.spec_fraction)
        delta = model.draw_auth(rng) if speculative else 0
        resolve = max(issue + delta, last_resolve + 1)
        last_resolve = resolve
        records.append(TraceRecord(gap, "L", cur, resolve - issue))
    return records


def format_trace(records: list[TraceRecord]) -> str:
    lines = []
    for r in records:
        auth = SQUASH if r.auth == SQUASH else str(r.auth)
        lines.append(f"{r.gap} {r.kind} {r.addr:#x} {auth}")
    return "\n".join(lines) + "\n"


def parse_trace(text: str) -> list[TraceRecord]:
    """Parse and validate a trace; any malformed line is fatal."""
    records = []
    issue = 0
    last_resolve = -1
    for lineno, raw in enumerate(text.splitlines(), start=1):
        body = raw.split("#", 1)[0].strip()
        if not body:
            continue
        parts = body.split()
        if len(parts) != 4:
            raise ValueError(f"trace line {lineno}: expected 4 fields, got {len(parts)}")
        try:
            gap = int(parts[0])
            kind = parts[1]
            addr = int(parts[2], 16)
            auth: int | str = SQUASH if parts[3] == SQUASH else int(parts[3])
            rec = TraceRecord(gap, kind, addr, auth)
        except ValueError as e:
            raise ValueError(f"trace line {lineno}: {e}") from None
        if kind not in ("L", "S"):
            raise ValueError(f"trace line {lineno}: kind must be L or S, got {kind!r}")
        issue = gap if not records else issue + gap
        if auth != SQUASH:
            resolve = issue if kind == "S" else issue + auth
            # Authorization happens in program order; loads resolving at or
            # before an earlier record's resolution are scenario bugs.
            if kind == "L" and resolve <= last_resolve:
                raise ValueError(
                    f"trace line {lineno}: authorization at cycle {resolve} is not "
                    f"after the previous record's resolution at {last_resolve}")
            last_resolve = max(last_resolve, resolve)
        records.append(rec)
    return records


def load_trace(path: str) -> list[TraceRecord]:
    with open(path, encoding="utf-8") as f:
        return parse_trace(f.read())


def trace_to_ops(records: list[TraceRecord]) -> list[tuple[int, MemOp]]:
    timed = []
    issue = 0
    for i, r in enumerate(records):
        issue = r.gap if i == 0 else issue + r.gap
        if r.kind == "S":
            if r.auth == SQUASH:
                op = MemOp(STORE, r.addr, auth_delta=None, squash_delta=0)
            else:
                op = MemOp(STORE, r.addr)
        elif r.auth == SQUASH:
            op = MemOp(LOAD, r.addr, auth_delta=None, squash_delta=SQUASH_DELAY)
        else:
            op = MemOp(LOAD, r.addr, auth_delta=r.auth)
        timed.append((issue, op))
    return timed


def replay(records: list[TraceRecord], defense: DefenseMode,
           hierarchy_cfg: HierarchyConfig | None = None, seed: int = 0,
           record_fills: bool = False) -> Metrics:
    """Drive a trace through a fresh simulation and return its metrics."""
    simu = Simulation(defense, hierarchy_cfg, seed, record_fills=record_fills)
    simu.core.run_timed(trace_to_ops(records))
    return simu.finalize_metrics()


def nofill_split_report(metrics: Metrics) -> dict[str, dict[str, float]]:
    """Per level: percentage of no-fill MSHR allocations never cleared,
    cleared by a safe fetch, or cleared by a later non-speculative access."""
    out = {}
    for name in ("l1", "l2"):
        lm = metrics.level(name)
        total = lm.nofill_allocated
        if total == 0:
            out[name] = {"never_cleared": 0.0, "cleared_by_shb_fetch": 0.0,
                         "cleared_by_nonspec_access": 0.0}
            continue
        out[name] = {
            "never_cleared": 100.0 * lm.nofill_never_cleared / total,
            "cleared_by_shb_fetch": 100.0 * lm.nofill_cleared_shb / total,
            "cleared_by_nonspec_access": 100.0 * lm.nofill_cleared_nonspec / total,
        }
    return out


def default_workload_rng(seed: int) -> Rng:
    return Rng(seed ^ STREAM_WORKLOAD)
