"""Scripted attacker/victim scenarios with statistical secret-recovery analyzers.

Six kernels: transient-leak flush-reload and prime-probe, and first-round
AES table attacks via prime-probe, flush-reload, evict-time and cache
collision. Attack trials are independent simulations seeded from the
master seed, so they reproduce exactly and may run in parallel.
"""

from dataclasses import dataclass, field

import numpy as np

from .core import MemOp, flush, load, squashed_load
from .hierarchy import DefenseMode, HierarchyConfig
from .cache import CacheGeometry
from .kernel import STREAM_WORKLOAD, Rng
from .simulation import Simulation

LINE = 64
SQUASH_AFTER_FILL = 170  # past the full memory path, so the transient fill races and wins

SHARED_BASE = 0x100000    # flush-reload shared array
PRIME_BASE = 0x200000     # attacker's priming array (32 KiB, covers every set x way)
SENDER_BASE = 0x400000    # transient sender array
AES_REGION = 0x600000     # four 1 KiB lookup tables, contiguous and 4 KiB aligned
EVICT_BASE = 0x800000     # conflict lines used by the evict-time victim
FILLER_BASE = 0xA00000    # ring of addresses standing in for the rest of the program

FILLER_GAP = 2
FILLER_RING = 64


@dataclass
class TimingMatrix:
    row_name: str
    col_name: str
    rows: list
    cols: list
    values: np.ndarray

    def to_csv(self) -> str:
        header = [self.row_name] + [str(c) for c in self.cols]
        lines = [",".join(header)]
        for label, row in zip(self.rows, self.values):
            lines.append(",".join([str(label)] + [f"{v:.6g}" for v in row]))
        return "\n".join(lines) + "\n"


@dataclass
class RecoveryVerdict:
    guessed: int | None
    correct: bool
    separation: float
    best: int = -1

    def as_dict(self) -> dict:
        return {"guessed": self.guessed, "correct": self.correct,
                "separation": self.separation}


@dataclass
class AttackResult:
    attack: str
    defense: str
    seed: int
    matrix: TimingMatrix
    verdict: RecoveryVerdict
    params: dict = field(default_factory=dict)


SEPARATION_CAP = 1e6  # stands in for "infinite" when the rest has zero spread


def recover(scores, direction: str, threshold_z: float = 4.0) -> RecoveryVerdict:
    """Pick the extreme candidate and quantify how far it stands out.

    separation = |best - mean(others)| / std(others). Below `threshold_z`
    the verdict is None: no candidate separates from the noise floor.
    """
    scores = np.asarray(scores, dtype=float)
    if scores.size < 2:
        raise ValueError("recover needs at least 2 candidates")
    if direction not in ("min", "max"):
        raise ValueError(f"direction must be min or max, got {direction!r}")
    best = int(np.argmin(scores) if direction == "min" else np.argmax(scores))
    others = np.delete(scores, best)
    std = float(others.std())
    if std == 0.0:
        separation = 0.0 if scores[best] == others[0] else SEPARATION_CAP
    else:
        separation = abs(float(scores[best]) - float(others.mean())) / std
    guessed = best if separation >= threshold_z else None
    return RecoveryVerdict(guessed, False, separation, best)


def _trial_seeds(seed: int, n: int) -> list[int]:
    rng = Rng(seed ^ STREAM_WORKLOAD)
    return [rng.next_u64() for _ in range(n)]


def _latencies(results) -> list[int]:
    return [r.latency for r in results]


# --------------------------------------------------------------------------
# Transient-execution attacks
# --------------------------------------------------------------------------

def run_spectre_fr(defense: DefenseMode, secret: int, step: int = 64,
                   trials: int = 64, seed: int = 0,
                   hierarchy_cfg: HierarchyConfig | None = None,
                   null_victim: bool = False, force_fill: bool = False,
                   threshold_z: float = 4.0) -> AttackResult:
    """Flush the shared array, run a squashed transient load of
    shared[secret*step], reload every candidate and time it."""
    if not 0 <= secret < 256:
        raise ValueError("secret must be one byte")
    if step % LINE != 0 or step < LINE:
        raise ValueError("step must be a positive multiple of the line size")
    lines = [SHARED_BASE + i * step for i in range(256)]
    lat = np.zeros((256, trials))
    for t, ts in enumerate(_trial_seeds(seed, trials)):
        simu = Simulation(defense, hierarchy_cfg, ts, force_fill=force_fill)
        simu.core.run_program([flush(a) for a in lines], max_outstanding=8)
        victim_start = simu.now
        if not null_victim:
            simu.core.run_program(
                [squashed_load(SHARED_BASE + secret * step, SQUASH_AFTER_FILL)])
        simu.run_until(victim_start + SQUASH_AFTER_FILL + 2)
        res = simu.core.run_program([load(a) for a in lines], max_outstanding=8)
        lat[:, t] = _latencies(res)
    matrix = TimingMatrix("candidate", "trial", list(range(256)),
                          list(range(trials)), lat)
    verdict = recover(lat.mean(axis=1), "min", threshold_z)
    verdict.correct = verdict.guessed == secret
    return AttackResult("spectre-fr", defense.label(), seed, matrix, verdict,
                        {"secret": secret, "step": step, "trials": trials})


PP_PRIME_BARRIER = 16384   # prime worst case plus slack, fixed for run alignment
PP_VICTIM_WINDOW = 256


def _pp_probe_totals(simu: Simulation, num_sets: int, ways: int) -> np.ndarray:
    lines = [PRIME_BASE + j * LINE for j in range(num_sets * ways)]
    res = simu.core.run_program([load(a) for a in lines], max_outstanding=8)
    totals = np.zeros(num_sets)
    for j, r in enumerate(res):
        totals[j % num_sets] += r.latency
    return totals


def _pp_one_run(defense, hierarchy_cfg, ts, secret, with_victim, force_fill) -> np.ndarray:
    simu = Simulation(defense, hierarchy_cfg, ts, force_fill=force_fill)
    num_sets = simu.cfg.l1.num_sets
    ways = simu.cfg.l1.ways
    prime = [load(PRIME_BASE + j * LINE) for j in range(num_sets * ways)]
    simu.core.run_program(prime, max_outstanding=8)
    simu.run_until(PP_PRIME_BARRIER)
    if with_victim:
        simu.core.run_program(
            [squashed_load(SENDER_BASE + secret * LINE, SQUASH_AFTER_FILL)])
    simu.run_until(PP_PRIME_BARRIER + PP_VICTIM_WINDOW)
    return _pp_probe_totals(simu, num_sets, ways)


def run_spectre_pp(defense: DefenseMode, secret: int, trials: int = 4, seed: int = 0,
                   hierarchy_cfg: HierarchyConfig | None = None,
                   null_victim: bool = False, force_fill: bool = False,
                   threshold_z: float = 4.0) -> AttackResult:
    """Prime every set, run the transient sender, probe every set; the
    verdict is taken on probe times minus a victim-free profile of the same
    seeds, which removes the attacker's own self-conflict noise."""
    if not 0 <= secret < 256:
        raise ValueError("secret must be one byte")
    probe_cfg = hierarchy_cfg if hierarchy_cfg is not None else HierarchyConfig()
    num_sets = probe_cfg.l1.num_sets
    diff = np.zeros((num_sets, trials))
    for t, ts in enumerate(_trial_seeds(seed, trials)):
        with_victim = _pp_one_run(defense, hierarchy_cfg, ts, secret,
                                  not null_victim, force_fill)
        profile = _pp_one_run(defense, hierarchy_cfg, ts, secret, False, force_fill)
        diff[:, t] = with_victim - profile
    matrix = TimingMatrix("set", "trial", list(range(num_sets)),
                          list(range(trials)), diff)
    verdict = recover(diff.mean(axis=1), "max", threshold_z)
    verdict.correct = verdict.guessed == secret % num_sets
    return AttackResult("spectre-pp", defense.label(), seed, matrix, verdict,
                        {"secret": secret, "trials": trials})


# --------------------------------------------------------------------------
# AES first-round attacks
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class AesModel:
    """First round of AES-128: sixteen table reads T[(j mod 4)][D_j xor K_j],
    four reads per 1 KiB table, tables contiguous in one 4 KiB region."""

    key: bytes
    region_base: int = AES_REGION
    entry_bytes: int = 4
    table_bytes: int = 1024

    def __post_init__(self):
        if len(self.key) != 16:
            raise ValueError("key must be 16 bytes")
        if self.region_base % (4 * self.table_bytes) != 0:
            raise ValueError("table region must be aligned to its own size")

    def table_base(self, table: int) -> int:
        return self.region_base + table * self.table_bytes

    def first_round_addrs(self, data: bytes) -> list[int]:
        return [self.table_base(j % 4) + self.entry_bytes * (data[j] ^ self.key[j])
                for j in range(16)]

    def region_lines(self) -> list[int]:
        return [self.region_base + i * LINE for i in range(64)]

    def line_of(self, table: int, index: int) -> int:
        """Region-relative line number holding entry `index` of `table`."""
        return table * (self.table_bytes // LINE) + (index * self.entry_bytes) // LINE


def _encrypt(simu: Simulation, model: AesModel, data: bytes):
    return simu.core.run_program([load(a) for a in model.first_round_addrs(data)],
                                 max_outstanding=1)


def _start_filler(simu: Simulation, gap: int = FILLER_GAP) -> None:
    """Background authorized-address stream standing in for the victim's
    non-table instructions. Only its safe-history effect is modeled: the
    stream keeps the FIFO turning over while a miss is outstanding, exactly
    as a live instruction stream would. No-op without a history buffer."""
    if simu.hierarchy.shb is None:
        return
    state = {"i": 0}

    def tick():
        simu.hierarchy.shb_insert(FILLER_BASE + (state["i"] % FILLER_RING) * LINE)
        state["i"] += 1
        simu.sim.schedule(simu.now + gap, "request-issue", tick)

    simu.sim.schedule(simu.now + gap, "request-issue", tick)


def _d_values(d_step: int) -> list[int]:
    return list(range(0, 256, d_step))


def _nibble_predicted_cells(d_values, target_byte: int, model: AesModel,
                            matrix: np.ndarray, col_of) -> np.ndarray:
    """Fold a measurement matrix into 16 key-nibble candidate scores using
    the known table layout."""
    table = (target_byte - 1) % 4
    scores = np.zeros(16)
    for k in range(16):
        cells = [matrix[i, col_of(model.line_of(table, (d ^ (k << 4))))]
                 for i, d in enumerate(d_values)]
        scores[k] = float(np.mean(cells))
    return scores


def run_aes_pp(defense: DefenseMode, key: bytes, target_byte: int = 1,
               trials: int = 2, d_step: int = 16, seed: int = 0,
               hierarchy_cfg: HierarchyConfig | None = None,
               null_victim: bool = False, threshold_z: float = 4.0) -> AttackResult:
    """Prime, one encryption with a swept input byte, probe; the moving
    contention diagonal yields the 4 MSBs of the targeted key byte."""
    model = AesModel(bytes(key))
    d_values = _d_values(d_step)
    cfg = hierarchy_cfg if hierarchy_cfg is not None else HierarchyConfig()
    num_sets = cfg.l1.num_sets
    ways = cfg.l1.ways
    prime_ops = [PRIME_BASE + j * LINE for j in range(num_sets * ways)]
    totals = np.zeros((len(d_values), num_sets))
    seeds = _trial_seeds(seed, len(d_values) * trials)
    for i, d in enumerate(d_values):
        for t in range(trials):
            ts = seeds[i * trials + t]
            scenario = Rng(ts ^ STREAM_WORKLOAD)
            simu = Simulation(defense, hierarchy_cfg, ts)
            _start_filler(simu)
            simu.core.run_program([load(a) for a in prime_ops], max_outstanding=8)
            if null_victim:
                data = bytearray(16)
            else:
                data = bytearray(scenario.rand_below(256) for _ in range(16))
                data[target_byte - 1] = d
            _encrypt(simu, model, bytes(data))
            totals[i] += _pp_probe_totals(simu, num_sets, ways)
    totals /= trials
    matrix = TimingMatrix("input_byte", "set", d_values, list(range(num_sets)), totals)
    region_set0 = (model.region_base // LINE) % num_sets

    def col_of(region_line):
        return (region_set0 + region_line) % num_sets

    scores = _nibble_predicted_cells(d_values, target_byte, model, totals, col_of)
    verdict = recover(scores, "max", threshold_z)
    verdict.correct = verdict.guessed == key[target_byte - 1] >> 4
    return AttackResult("aes-pp", defense.label(), seed, matrix, verdict,
                        {"target_byte": target_byte, "trials": trials,
                         "d_step": d_step})


def run_aes_fr(defense: DefenseMode, key: bytes, target_byte: int = 1,
               trials: int = 2, d_step: int = 16, seed: int = 0,
               hierarchy_cfg: HierarchyConfig | None = None,
               null_victim: bool = False, threshold_z: float = 4.0) -> AttackResult:
    """Flush the shared table region, encrypt, reload all 64 lines; the
    reuse diagonal yields the 4 MSBs of the targeted key byte."""
    model = AesModel(bytes(key))
    d_values = _d_values(d_step)
    lat = np.zeros((len(d_values), 64))
    seeds = _trial_seeds(seed, len(d_values) * trials)
    region = model.region_lines()
    for i, d in enumerate(d_values):
        for t in range(trials):
            ts = seeds[i * trials + t]
            simu = Simulation(defense, hierarchy_cfg, ts)
            _start_filler(simu)
            simu.core.run_program([flush(a) for a in region], max_outstanding=8)
            data = bytearray(16)
            data[target_byte - 1] = 0 if null_victim else d
            _encrypt(simu, model, bytes(data))
            res = simu.core.run_program([load(a) for a in region], max_outstanding=8)
            lat[i] += _latencies(res)
    lat /= trials
    matrix = TimingMatrix("input_byte", "line", d_values, list(range(64)), lat)
    scores = _nibble_predicted_cells(d_values, target_byte, model, lat, lambda l: l)
    verdict = recover(scores, "min", threshold_z)
    verdict.correct = verdict.guessed == key[target_byte - 1] >> 4
    return AttackResult("aes-fr", defense.label(), seed, matrix, verdict,
                        {"target_byte": target_byte, "trials": trials,
                         "d_step": d_step})


def _class_scores(d_values, times: np.ndarray) -> np.ndarray:
    """Mean time per high-nibble class of the swept input byte."""
    scores = np.zeros(16)
    for nib in range(16):
        sel = [i for i, d in enumerate(d_values) if d >> 4 == nib]
        scores[nib] = float(times[sel].mean())
    return scores


def run_aes_evict_time(defense: DefenseMode, key: bytes, trials: int = 4,
                       d_step: int = 16, seed: int = 0,
                       hierarchy_cfg: HierarchyConfig | None = None,
                       null_victim: bool = False, threshold_z: float = 4.0,
                       evicted_line: int = 15) -> AttackResult:
    """The victim evicts one fixed set before each encryption; sweeping two
    input bytes of the table that maps there reveals the xor of the MSBs of
    the corresponding key bytes. Targets bytes 4 and 8 (table 4)."""
    model = AesModel(bytes(key))
    d_values = _d_values(d_step)
    cfg = hierarchy_cfg if hierarchy_cfg is not None else HierarchyConfig()
    region_line = model.line_of(3, evicted_line * (LINE // model.entry_bytes))
    target_set = ((model.region_base // LINE) + region_line) % cfg.l1.num_sets
    evict_ops = [load(EVICT_BASE + target_set * LINE + k * cfg.l1.way_size_bytes)
                 for k in range(cfg.l1.ways)]
    warm_ops = [load(a) for a in model.region_lines()]

    times = np.zeros((len(d_values), 2))
    sweeps = {0: 3, 1: 7}  # column -> swept data index (bytes 4 and 8)
    seeds = _trial_seeds(seed, trials * 2)
    for col, byte_idx in sweeps.items():
        for t in range(trials):
            ts = seeds[col * trials + t]
            simu = Simulation(defense, hierarchy_cfg, ts)
            _start_filler(simu)
            simu.core.run_program(warm_ops, max_outstanding=4)
            for i, d in enumerate(d_values):
                simu.core.run_program(evict_ops, max_outstanding=4)
                data = bytearray(16)
                if not null_victim:
                    data[byte_idx] = d
                res = _encrypt(simu, model, bytes(data))
                times[i, col] += res[-1].complete_cycle - res[0].issue_cycle
    times /= trials

    matrix = TimingMatrix("input_byte", "sweep", d_values, ["d4", "d8"], times)
    v4 = recover(_class_scores(d_values, times[:, 0]), "max", threshold_z)
    v8 = recover(_class_scores(d_values, times[:, 1]), "max", threshold_z)
    if v4.guessed is None or v8.guessed is None:
        verdict = RecoveryVerdict(None, False, min(v4.separation, v8.separation))
    else:
        verdict = RecoveryVerdict(v4.guessed ^ v8.guessed, False,
                                  min(v4.separation, v8.separation))
    verdict.correct = verdict.guessed == (key[3] ^ key[7]) >> 4
    return AttackResult("aes-evict-time", defense.label(), seed, matrix, verdict,
                        {"trials": trials, "d_step": d_step,
                         "evicted_line": evicted_line})


def run_aes_collision(defense: DefenseMode, key: bytes, trials: int = 8,
                      d_step: int = 16, seed: int = 0,
                      hierarchy_cfg: HierarchyConfig | None = None,
                      null_victim: bool = False, threshold_z: float = 4.0,
                      l1_mshrs: int = 1) -> AttackResult:
    """Sweep x = D1 xor D5 and time whole encryptions with misses serialized
    through a single L1 MSHR; a same-line reuse between the two table-1 reads
    shortens the run, revealing the MSBs of K1 xor K5."""
    model = AesModel(bytes(key))
    base = hierarchy_cfg if hierarchy_cfg is not None else HierarchyConfig()
    l1 = base.l1
    cfg = HierarchyConfig(
        l1=CacheGeometry(l1.num_sets, l1.ways, l1.line_bytes, l1_mshrs,
                         l1.lfb_entries, l1.wb_entries, l1.hit_latency),
        l2=base.l2, l2_latency=base.l2_latency, mem_latency=base.mem_latency)
    x_values = _d_values(d_step)
    times = np.zeros((len(x_values), trials))
    seeds = _trial_seeds(seed, len(x_values) * trials)
    for i, x in enumerate(x_values):
        for t in range(trials):
            ts = seeds[i * trials + t]
            scenario = Rng(ts ^ STREAM_WORKLOAD)
            simu = Simulation(defense, cfg, ts)
            _start_filler(simu)
            data = bytearray(16)
            if not null_victim:
                d1 = scenario.rand_below(256)
                data[0] = d1
                data[4] = d1 ^ x
            res = _encrypt(simu, model, bytes(data))
            times[i, t] = res[-1].complete_cycle - res[0].issue_cycle
    matrix = TimingMatrix("xor_value", "trial", x_values, list(range(trials)), times)
    scores = _class_scores(x_values, times.mean(axis=1))
    verdict = recover(scores, "min", threshold_z)
    verdict.correct = verdict.guessed == (key[0] ^ key[4]) >> 4
    return AttackResult("aes-collision", defense.label(), seed, matrix, verdict,
                        {"trials": trials, "d_step": d_step, "l1_mshrs": l1_mshrs})


ATTACKS = {
    "spectre-fr": run_spectre_fr,
    "spectre-pp": run_spectre_pp,
    "aes-pp": run_aes_pp,
    "aes-fr": run_aes_fr,
    "aes-evict-time": run_aes_evict_time,
    "aes-collision": run_aes_collision,
}
