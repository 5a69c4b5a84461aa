"""Experiment configuration, orchestration and report emission.

Configs are strict JSON objects: unknown keys are rejected, defense knobs
are required exactly where the mode uses them, and every output file embeds
the config hash, seed and package version so reruns are verifiable.
"""

import concurrent.futures
import csv
import hashlib
import io
import json
from dataclasses import dataclass, field

from . import __version__
from .attacks import ATTACKS
from .cache import CacheGeometry, is_pow2
from .hierarchy import (
    BASELINE_LRU, DEFENSE_KINDS, RANDOM_FILL, RAS_PLUS, RAS_SPEC,
    DefenseMode, HierarchyConfig,
)
from .report import render_heatmap, render_heatmap_png, render_sweep_png
from .workloads import (
    LocalityModel, default_workload_rng, generate_trace, load_trace,
    nofill_split_report, replay,
)


class ConfigError(ValueError):
    """Invalid experiment configuration; the message names the offending key."""


EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_LEAK_GUARD = 2
EXIT_IO = 3

ATTACK_SCENARIOS = tuple(ATTACKS)
SCENARIOS = ATTACK_SCENARIOS + ("trace",)

DEFAULT_TRIALS = {
    "spectre-fr": 64,
    "spectre-pp": 4,
    "aes-pp": 2,
    "aes-fr": 2,
    "aes-evict-time": 4,
    "aes-collision": 8,
}

# Keys each scenario accepts beyond the common set.
_SCENARIO_KEYS = {
    "spectre-fr": {"secret", "step", "trials"},
    "spectre-pp": {"secret", "trials"},
    "aes-pp": {"key", "target_byte", "trials", "d_step"},
    "aes-fr": {"key", "target_byte", "trials", "d_step"},
    "aes-evict-time": {"key", "trials", "d_step"},
    "aes-collision": {"key", "trials", "d_step", "l1_mshrs"},
    "trace": {"trace", "model", "ops"},
}
_COMMON_KEYS = {"defense", "rate", "entries", "window", "nofillclear",
                "protect_writebacks", "scenario", "seed", "hierarchy",
                "debug_force_fill"}
_HIERARCHY_KEYS = {"l1_sets", "l1_ways", "line_bytes", "l1_mshrs",
                   "l1_hit_latency", "l2_sets", "l2_ways", "l2_mshrs",
                   "l2_latency", "mem_latency"}
_MODEL_KEYS = {"working_set_bytes", "stride_bytes", "p_sequential", "p_reuse",
               "spec_fraction", "auth_latency"}


@dataclass
class ExperimentConfig:
    defense: DefenseMode
    hierarchy: HierarchyConfig
    scenario: str
    seed: int
    params: dict
    force_fill: bool
    raw: dict
    config_hash: str = field(default="")

    def label(self) -> str:
        return f"{self.defense.label()}/{self.scenario}"


def config_hash(raw: dict) -> str:
    blob = json.dumps(raw, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def _require(cond: bool, msg: str) -> None:
    if not cond:
        raise ConfigError(msg)


def _int_key(obj: dict, key: str, minimum: int = 0) -> int:
    v = obj[key]
    _require(isinstance(v, int) and not isinstance(v, bool),
             f"key '{key}' must be an integer")
    _require(v >= minimum, f"key '{key}' must be >= {minimum}")
    return v


def _parse_defense(obj: dict) -> DefenseMode:
    _require("defense" in obj, "missing required key 'defense'")
    kind = obj["defense"]
    _require(kind in DEFENSE_KINDS,
             f"unknown defense '{kind}', expected one of {', '.join(DEFENSE_KINDS)}")
    uses_shb = kind in (RAS_SPEC, RAS_PLUS)
    uses_window = uses_shb or kind == RANDOM_FILL
    for key, used in (("rate", uses_shb), ("entries", uses_shb),
                      ("window", uses_window)):
        if used:
            _require(key in obj, f"defense '{kind}' requires key '{key}'")
        else:
            _require(key not in obj, f"defense '{kind}' does not take key '{key}'")
    rate = _int_key(obj, "rate", 1) if uses_shb else 0
    entries = _int_key(obj, "entries", 1) if uses_shb else 0
    window = _int_key(obj, "window", 1) if uses_window else 0
    if uses_window:
        _require(is_pow2(window), f"key 'window' must be a power of two, got {window}")
    nfc = obj.get("nofillclear", True)
    wbp = obj.get("protect_writebacks", True)
    _require(isinstance(nfc, bool), "key 'nofillclear' must be a boolean")
    _require(isinstance(wbp, bool), "key 'protect_writebacks' must be a boolean")
    return DefenseMode(kind, rate, entries, window, nofillclear=nfc,
                       protect_writebacks=wbp)


def _parse_hierarchy(obj: dict) -> HierarchyConfig:
    h = obj.get("hierarchy", {})
    _require(isinstance(h, dict), "key 'hierarchy' must be an object")
    unknown = set(h) - _HIERARCHY_KEYS
    if unknown:
        raise ConfigError(f"unknown hierarchy key '{sorted(unknown)[0]}'")
    base = HierarchyConfig()
    l1 = CacheGeometry(
        num_sets=h.get("l1_sets", base.l1.num_sets),
        ways=h.get("l1_ways", base.l1.ways),
        line_bytes=h.get("line_bytes", base.l1.line_bytes),
        mshr_entries=h.get("l1_mshrs", base.l1.mshr_entries),
        hit_latency=h.get("l1_hit_latency", base.l1.hit_latency),
    )
    l2 = CacheGeometry(
        num_sets=h.get("l2_sets", base.l2.num_sets),
        ways=h.get("l2_ways", base.l2.ways),
        line_bytes=h.get("line_bytes", base.l2.line_bytes),
        mshr_entries=h.get("l2_mshrs", base.l2.mshr_entries),
        hit_latency=h.get("l2_latency", base.l2.hit_latency),
    )
    try:
        return HierarchyConfig(
            l1=l1, l2=l2,
            l2_latency=h.get("l2_latency", base.l2_latency),
            mem_latency=h.get("mem_latency", base.mem_latency))
    except ValueError as e:
        raise ConfigError(f"hierarchy: {e}") from None


def _parse_key_bytes(obj: dict) -> bytes:
    v = obj.get("key", "00" * 16)
    _require(isinstance(v, str), "key 'key' must be a 32-digit hex string")
    try:
        kb = bytes.fromhex(v)
    except ValueError:
        raise ConfigError("key 'key' must be a 32-digit hex string") from None
    _require(len(kb) == 16, "key 'key' must encode exactly 16 bytes")
    return kb


def parse_config(obj: dict) -> ExperimentConfig:
    """Validate a raw JSON object into an ExperimentConfig. Unknown keys,
    missing required knobs and malformed values all fail with the key name."""
    _require(isinstance(obj, dict), "config must be a JSON object")
    _require("scenario" in obj, "missing required key 'scenario'")
    scenario = obj["scenario"]
    _require(scenario in SCENARIOS,
             f"unknown scenario '{scenario}', expected one of {', '.join(SCENARIOS)}")
    allowed = _COMMON_KEYS | _SCENARIO_KEYS[scenario]
    unknown = set(obj) - allowed
    if unknown:
        raise ConfigError(f"unknown key '{sorted(unknown)[0]}' for scenario "
                          f"'{scenario}'")
    defense = _parse_defense(obj)
    hierarchy = _parse_hierarchy(obj)
    seed = _int_key(obj, "seed", 0) if "seed" in obj else 0
    force_fill = obj.get("debug_force_fill", False)
    _require(isinstance(force_fill, bool), "key 'debug_force_fill' must be a boolean")
    _require(not force_fill or scenario.startswith("spectre-"),
             "key 'debug_force_fill' applies to spectre scenarios only")

    params: dict = {}
    if scenario in ("spectre-fr", "spectre-pp"):
        params["secret"] = _int_key(obj, "secret") if "secret" in obj else 30
        _require(params["secret"] < 256, "key 'secret' must be one byte")
        if scenario == "spectre-fr":
            params["step"] = _int_key(obj, "step", 64) if "step" in obj else 64
    elif scenario.startswith("aes-"):
        params["key"] = _parse_key_bytes(obj)
        if scenario in ("aes-pp", "aes-fr"):
            tb = _int_key(obj, "target_byte", 1) if "target_byte" in obj else 1
            _require(tb <= 16, "key 'target_byte' must be in 1..16")
            params["target_byte"] = tb
        if "d_step" in obj:
            d_step = _int_key(obj, "d_step", 1)
            _require(256 % d_step == 0, "key 'd_step' must divide 256")
            params["d_step"] = d_step
        if scenario == "aes-collision" and "l1_mshrs" in obj:
            params["l1_mshrs"] = _int_key(obj, "l1_mshrs", 1)
    else:  # trace
        has_file = "trace" in obj
        has_model = "model" in obj
        _require(has_file != has_model,
                 "trace scenario needs exactly one of 'trace' or 'model'")
        if has_file:
            _require(isinstance(obj["trace"], str), "key 'trace' must be a path")
            params["trace"] = obj["trace"]
        else:
            m = obj["model"]
            _require(isinstance(m, dict), "key 'model' must be an object")
            unknown = set(m) - _MODEL_KEYS
            if unknown:
                raise ConfigError(f"unknown model key '{sorted(unknown)[0]}'")
            try:
                params["model"] = LocalityModel(
                    **{k: tuple(v) if k == "auth_latency" else v
                       for k, v in m.items()})
            except (TypeError, ValueError) as e:
                raise ConfigError(f"model: {e}") from None
            params["ops"] = _int_key(obj, "ops", 1) if "ops" in obj else 20000
    if scenario != "trace":
        params["trials"] = (_int_key(obj, "trials", 1) if "trials" in obj
                            else DEFAULT_TRIALS[scenario])

    cfg = ExperimentConfig(defense, hierarchy, scenario, seed, params,
                           force_fill, obj)
    cfg.config_hash = config_hash(obj)
    return cfg


def load_config(path: str) -> ExperimentConfig:
    with open(path, encoding="utf-8") as f:
        try:
            obj = json.load(f)
        except json.JSONDecodeError as e:
            raise ConfigError(f"{path}: invalid JSON ({e})") from None
    return parse_config(obj)


# --------------------------------------------------------------------------
# Running
# --------------------------------------------------------------------------

def _provenance(cfg: ExperimentConfig) -> dict:
    return {"config_hash": cfg.config_hash, "seed": cfg.seed,
            "version": __version__}


def _run_attack(cfg: ExperimentConfig):
    fn = ATTACKS[cfg.scenario]
    kwargs = dict(cfg.params)
    secret_or_key = (kwargs.pop("secret", None) if "secret" in kwargs
                     else kwargs.pop("key"))
    return fn(cfg.defense, secret_or_key, seed=cfg.seed,
              hierarchy_cfg=cfg.hierarchy, **kwargs,
              **({"force_fill": True} if cfg.force_fill else {}))


def _run_trace(cfg: ExperimentConfig):
    if "trace" in cfg.params:
        records = load_trace(cfg.params["trace"])
    else:
        rng = default_workload_rng(cfg.seed)
        records = generate_trace(cfg.params["model"], cfg.params["ops"], rng)
    return replay(records, cfg.defense, cfg.hierarchy, cfg.seed)


def run_experiment(cfg: ExperimentConfig, out_dir: str, *,
                   figures: bool = True) -> tuple[int, list[str]]:
    """Execute one experiment and write its report filestree into out_dir.

    Returns (exit_code, written paths). Exit code 2 flags a leak where the
    configured defense promises None — the CI guard contract.
    """
    import os

    written: list[str] = []

    def emit(name: str, text: str) -> str:
        path = os.path.join(out_dir, name)
        with open(path, "w", encoding="utf-8") as f:
            f.write(text)
        written.append(path)
        return path

    try:
        os.makedirs(out_dir, exist_ok=True)
        prov = _provenance(cfg)
        if cfg.scenario == "trace":
            metrics = _run_trace(cfg)
            payload = dict(prov)
            payload["metrics"] = metrics.as_dict()
            payload["nofill_split"] = nofill_split_report(metrics)
            emit("metrics.json", json.dumps(payload, indent=2, sort_keys=True) + "\n")
            return EXIT_OK, written

        result = _run_attack(cfg)
        comment = (f"config_hash={prov['config_hash']} seed={prov['seed']} "
                   f"version={prov['version']}")
        csv_text = (f"# {comment}\n" + result.matrix.to_csv())
        emit("matrix.csv", csv_text)
        verdict = dict(prov)
        verdict.update({"attack": result.attack, "defense": result.defense,
                        **result.verdict.as_dict()})
        emit("verdict.json", json.dumps(verdict, indent=2, sort_keys=True) + "\n")
        meta = dict(prov)
        meta.update({"attack": result.attack, "defense": result.defense,
                     "params": {k: (v.hex() if isinstance(v, bytes) else v)
                                for k, v in result.params.items()}})
        emit("metrics.json", json.dumps(meta, indent=2, sort_keys=True) + "\n")
        title = f"{result.attack} on {result.defense}"
        emit("heatmap.svg", render_heatmap(csv_text, title=title, comment=comment))
        if figures:
            png = os.path.join(out_dir, "heatmap.png")
            render_heatmap_png(csv_text, png, title=title)
            written.append(png)
        if (cfg.defense.kind in (RAS_SPEC, RAS_PLUS)
                and result.verdict.correct):
            return EXIT_LEAK_GUARD, written
        return EXIT_OK, written
    except OSError as e:
        raise RuntimeError(f"i/o failure on {getattr(e, 'filename', out_dir)}: {e}") from e


# --------------------------------------------------------------------------
# Sweeps
# --------------------------------------------------------------------------

SWEEP_COLUMNS = [
    "index", "label", "defense", "rate", "entries", "window", "seed",
    "scenario", "l1_miss_rate", "l2_miss_rate",
    "l1_nofill_never", "l1_nofill_shb", "l1_nofill_nonspec",
    "l2_nofill_never", "l2_nofill_shb", "l2_nofill_nonspec",
    "shb_emissions", "shb_empty_ticks", "shb_dropped",
    "guessed", "correct", "separation",
]


def sweep_row(indexed_config: tuple[int, dict]) -> dict:
    """Run one sweep cell; module-level so process pools can pickle it."""
    index, raw = indexed_config
    cfg = parse_config(raw)
    row = {c: "" for c in SWEEP_COLUMNS}
    row.update(index=index, label=cfg.defense.label(), defense=cfg.defense.kind,
               rate=cfg.defense.rate_cycles or "", entries=cfg.defense.shb_entries or "",
               window=cfg.defense.window_lines or "", seed=cfg.seed,
               scenario=cfg.scenario)
    if cfg.scenario == "trace":
        metrics = _run_trace(cfg)
        split = nofill_split_report(metrics)
        row.update(
            l1_miss_rate=f"{metrics.l1.miss_rate:.6f}",
            l2_miss_rate=f"{metrics.l2.miss_rate:.6f}",
            l1_nofill_never=f"{split['l1']['never_cleared']:.3f}",
            l1_nofill_shb=f"{split['l1']['cleared_by_shb_fetch']:.3f}",
            l1_nofill_nonspec=f"{split['l1']['cleared_by_nonspec_access']:.3f}",
            l2_nofill_never=f"{split['l2']['never_cleared']:.3f}",
            l2_nofill_shb=f"{split['l2']['cleared_by_shb_fetch']:.3f}",
            l2_nofill_nonspec=f"{split['l2']['cleared_by_nonspec_access']:.3f}",
            shb_emissions=metrics.shb.emissions,
            shb_empty_ticks=metrics.shb.empty_ticks,
            shb_dropped=metrics.shb.dropped_full_mshr,
        )
    else:
        result = _run_attack(cfg)
        v = result.verdict
        row.update(guessed="" if v.guessed is None else v.guessed,
                   correct=v.correct, separation=f"{v.separation:.4f}")
    return row


def run_sweep(configs: list[dict], parallelism: int = 1) -> list[dict]:
    """Run every config and return rows in input order regardless of
    completion order. A failing cell aborts the sweep naming its index."""
    indexed = list(enumerate(configs))
    try:
        if parallelism > 1:
            with concurrent.futures.ProcessPoolExecutor(parallelism) as pool:
                return list(pool.map(sweep_row, indexed))
        return [sweep_row(ic) for ic in indexed]
    except Exception as e:
        raise RuntimeError(f"sweep cell failed: {e}") from e


def sweep_csv(rows: list[dict], comment: str = "") -> str:
    buf = io.StringIO()
    if comment:
        buf.write(f"# {comment}\n")
    writer = csv.DictWriter(buf, fieldnames=SWEEP_COLUMNS, lineterminator="\n")
    writer.writeheader()
    for row in rows:
        writer.writerow(row)
    return buf.getvalue()


def write_sweep(configs: list[dict], out_path: str, parallelism: int = 1, *,
                figures: bool = True) -> list[dict]:
    rows = run_sweep(configs, parallelism)
    comment = (f"config_hash={config_hash({'sweep': configs})} "
               f"version={__version__}")
    with open(out_path, "w", encoding="utf-8") as f:
        f.write(sweep_csv(rows, comment))
    if figures:
        render_sweep_png(rows, out_path.rsplit(".", 1)[0] + ".png")
    return rows
