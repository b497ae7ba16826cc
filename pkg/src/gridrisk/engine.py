"""Scenario enumeration, severity evaluation and the parallel run driver."""
from __future__ import annotations

import hashlib
import json
import logging
import multiprocessing as mp
import os
import threading
import time
from collections import Counter
from dataclasses import asdict, dataclass, field, replace
from functools import lru_cache
from pathlib import Path
from typing import Iterable, Iterator, Sequence

import numpy as np

from .caseio import case_checksum
from .grid import ComponentRef, GridCase, component_universe
from .powerflow import (MAX_ITER, TOL_PF, check_limits, redispatch, solve_power_flow)
from .smallsignal import (EPS_STAB, DegenerateModelError, EigenSolveError, LinearizationError,
                          eigenvalues, linearize)
from .topology import find_islands

log = logging.getLogger(__name__)

REASONS = ("pf_diverged", "limit_violation", "islanding", "small_signal", "linearization_failed",
           "eigensolve_failed", "redispatch_infeasible", "internal_error")

RESULTS_FILE = "results.jsonl"
MANIFEST_FILE = "manifest.json"
STATE_FILE = "run_state.json"


class ResumeError(RuntimeError):
    """Existing output belongs to a different case or configuration."""


# ---------------------------------------------------------------- scenarios

@dataclass(frozen=True)
class Scenario:
    id: str
    outages: tuple[ComponentRef, ...]
    order_index: int

    @property
    def order(self) -> int:
        return len(self.outages)


def scenario_id(outages: Sequence[ComponentRef]) -> str:
    if not outages:
        return "base"
    return f"n{len(outages)}:" + "+".join(str(r) for r in outages)


def parse_scenario_id(text: str) -> tuple[ComponentRef, ...]:
    if text == "base":
        return ()
    head, _, body = text.partition(":")
    refs = tuple(ComponentRef.parse(p) for p in body.split("+"))
    if head != f"n{len(refs)}":
        raise ValueError(f"malformed scenario id {text!r}")
    return refs


def scenario_count(n_components: int, max_order: int = 2, include_base: bool = True) -> int:
    count = int(include_base) + n_components
    if max_order >= 2:
        count += n_components * (n_components - 1)
    return count


def enumerate_scenarios(case: GridCase, max_order: int = 2, include_base: bool = True) -> Iterator[Scenario]:
    """Base, then every single outage, then every ordered pair (i, j), j != i."""
    if max_order not in (1, 2):
        raise ValueError("max_order must be 1 or 2")
    comps = component_universe(case)
    k = 0
    if include_base:
        yield Scenario("base", (), k)
        k += 1
    for c in comps:
        yield Scenario(scenario_id((c,)), (c,), k)
        k += 1
    if max_order == 2:
        for a in comps:
            for b in comps:
                if a != b:
                    yield Scenario(scenario_id((a, b)), (a, b), k)
                    k += 1


def sample_positions(total: int, limit: int | None) -> list[int]:
    """Evenly spaced enumeration positions, always keeping the first and last."""
    if limit is None or limit >= total:
        return list(range(total))
    if limit <= 0:
        return []
    if limit == 1:
        return [0]
    return [int(round(x)) for x in np.linspace(0, total - 1, limit)]


# ------------------------------------------------------------------- config

@dataclass(frozen=True)
class EngineConfig:
    max_order: int = 2
    include_base: bool = True
    workers: int = 1
    tol_pf: float = TOL_PF
    max_iter: int = MAX_ITER
    eps_stab: float = EPS_STAB
    sequential_redispatch: bool = False
    warm_start: bool = False
    limit: int | None = None
    batch_size: int = 8
    reorder_window: int = 64  # batches in flight, bounds the reorder buffer

    def __post_init__(self):
        if self.workers < 1:
            raise ValueError("workers must be >= 1")
        if self.max_order not in (1, 2):
            raise ValueError("max_order must be 1 or 2")
        if not (self.tol_pf > 0 and self.max_iter > 0 and self.eps_stab > 0):
            raise ValueError("tolerances must be positive")
        if self.batch_size < 1 or self.reorder_window < 1:
            raise ValueError("batch_size and reorder_window must be >= 1")

    def result_fields(self) -> dict:
        """The settings that can change a result record."""
        return {k: getattr(self, k) for k in ("max_order", "include_base", "tol_pf", "max_iter",
                                              "eps_stab", "sequential_redispatch", "warm_start",
                                              "limit")}

    def fingerprint(self) -> str:
        return hashlib.sha256(json.dumps(self.result_fields(), sort_keys=True).encode()).hexdigest()


# -------------------------------------------------------------- evaluation

@dataclass(frozen=True)
class ScenarioResult:
    id: str
    outages: tuple[str, ...]
    pf_converged: bool
    island_count: int
    spectral_abscissa: float | None
    severity: int
    reason: tuple[str, ...]
    runtime_ms: float
    violations: dict = field(default_factory=lambda: {"thermal": 0, "voltage": 0})

    def to_record(self) -> dict:
        return {"id": self.id, "outages": list(self.outages), "pf_converged": self.pf_converged,
                "island_count": self.island_count, "spectral_abscissa": self.spectral_abscissa,
                "severity": self.severity, "reason": list(self.reason),
                "violations": dict(self.violations), "runtime_ms": self.runtime_ms}

    @classmethod
    def from_record(cls, rec: dict) -> "ScenarioResult":
        return cls(rec["id"], tuple(rec["outages"]), rec["pf_converged"], rec["island_count"],
                   rec["spectral_abscissa"], rec["severity"], tuple(rec["reason"]), rec["runtime_ms"],
                   dict(rec.get("violations", {"thermal": 0, "voltage": 0})))

    def as_scenario(self, sc: Scenario) -> "ScenarioResult":
        return replace(self, id=sc.id, outages=tuple(str(r) for r in sc.outages))


def to_json_line(result: ScenarioResult) -> str:
    return json.dumps(result.to_record(), separators=(",", ":"))


@dataclass
class Diagnosis:
    """Every intermediate product of one scenario evaluation."""

    partition: object = None
    dispatch: object = None
    solution: object = None
    violations: object = None
    state: object = None
    spectral: object = None
    reasons: set = field(default_factory=set)
    degenerate: bool = False


@lru_cache(maxsize=4)
def _base_voltage(case: GridCase, tol: float, max_iter: int):
    sol = solve_power_flow(case, (), tol=tol, max_iter=max_iter)
    return np.nan_to_num(sol.voltage, nan=1.0) if sol.converged else None


def diagnose(case: GridCase, outages: Sequence[ComponentRef], config: EngineConfig = EngineConfig()) -> Diagnosis:
    outages = list(outages)
    d = Diagnosis()
    d.partition = find_islands(case, outages)
    if d.partition.island_count > 1:
        d.reasons.add("islanding")
    d.dispatch = redispatch(case, outages, sequential=config.sequential_redispatch)
    if not d.dispatch.feasible:
        d.reasons.add("redispatch_infeasible")
        return d
    v0 = _base_voltage(case, config.tol_pf, config.max_iter) if config.warm_start and outages else None
    d.solution = solve_power_flow(case, outages, d.dispatch, v0=v0, tol=config.tol_pf,
                                  max_iter=config.max_iter, partition=d.partition)
    if not d.solution.converged:
        d.reasons.add("pf_diverged")
        return d
    d.violations = check_limits(d.solution, case)
    if d.violations.any:
        d.reasons.add("limit_violation")
    try:
        d.state = linearize(case, outages, d.solution, dispatch=d.dispatch)
    except DegenerateModelError:
        d.degenerate = True
        return d
    except LinearizationError:
        d.reasons.add("linearization_failed")
        return d
    try:
        d.spectral = eigenvalues(d.state, config.eps_stab)
    except EigenSolveError:
        d.reasons.add("eigensolve_failed")
        return d
    if d.spectral.unstable:
        d.reasons.add("small_signal")
    return d


def evaluate_outages(case: GridCase, outages: Sequence[ComponentRef], config: EngineConfig = EngineConfig(),
                     sid: str | None = None) -> ScenarioResult:
    """Evaluate one outage set; numerical failures become severe results."""
    outages = tuple(outages)
    sid = sid or scenario_id(outages)
    t0 = time.perf_counter()
    try:
        d = diagnose(case, outages, config)
        reasons = d.reasons
        island_count = d.partition.island_count
        converged = bool(d.solution is not None and d.solution.converged)
        abscissa = d.spectral.spectral_abscissa if d.spectral is not None else None
        viol = {"thermal": len(d.violations.thermal), "voltage": len(d.violations.voltage)} \
            if d.violations is not None else {"thermal": 0, "voltage": 0}
    except Exception:  # noqa: BLE001 - screening never aborts on one scenario
        log.exception("scenario %s failed", sid)
        reasons, island_count, converged, abscissa = {"internal_error"}, 1, False, None
        viol = {"thermal": 0, "voltage": 0}
    runtime = round((time.perf_counter() - t0) * 1000.0, 3)
    reason = tuple(r for r in REASONS if r in reasons)
    return ScenarioResult(sid, tuple(str(r) for r in outages), converged, max(island_count, 1),
                          None if abscissa is None else float(abscissa), int(bool(reason)), reason,
                          runtime, viol)


def canonical_outages(scenario: Scenario, config: EngineConfig) -> tuple[ComponentRef, ...]:
    """Outage tuple actually evaluated; order-free unless redispatch is sequential."""
    if config.sequential_redispatch:
        return scenario.outages
    return tuple(sorted(scenario.outages))


def evaluate_scenario(case: GridCase, scenario: Scenario, config: EngineConfig = EngineConfig()) -> ScenarioResult:
    result = evaluate_outages(case, canonical_outages(scenario, config), config)
    return result.as_scenario(scenario)


# ---------------------------------------------------------- worker pool

_W_CASE: GridCase | None = None
_W_CONFIG: EngineConfig | None = None


def _init_worker(case, config, barrier):
    global _W_CASE, _W_CONFIG
    _W_CASE, _W_CONFIG = case, config
    if barrier is not None:
        try:
            barrier.wait(timeout=60)
        except threading.BrokenBarrierError:
            pass


def _run_batch(batch):
    results = [evaluate_outages(_W_CASE, outs, _W_CONFIG) for outs in batch]
    return os.getpid(), results


def _batched(items, size):
    for k in range(0, len(items), size):
        yield items[k:k + size]


@dataclass
class RunStats:
    worker_batches: Counter = field(default_factory=Counter)
    skipped: int = 0
    evaluated_tasks: int = 0
    max_buffered: int = 0


def ordered_results(case: GridCase, tasks: list, config: EngineConfig, stats: RunStats) -> Iterator[ScenarioResult]:
    """Evaluate ``tasks`` and yield results in task order.

    With several workers, at most ``reorder_window`` batches are in flight;
    completed batches wait in a reorder buffer until all earlier ones are out.
    """
    batches = list(_batched(tasks, config.batch_size))
    if config.workers == 1 or len(batches) <= 1:
        for batch in batches:
            pid, results = _local_batch(case, config, batch)
            stats.worker_batches[pid] += 1
            stats.evaluated_tasks += len(results)
            yield from results
        return
    workers = min(config.workers, len(batches))
    ctx = mp.get_context("fork") if "fork" in mp.get_all_start_methods() else mp.get_context()
    barrier = ctx.Barrier(workers)
    done = {}
    cond = threading.Condition()

    def on_done(k):
        def cb(value):
            with cond:
                done[k] = value
                cond.notify()
        return cb

    errors = []

    def on_error(exc):
        with cond:
            errors.append(exc)
            cond.notify()

    with ctx.Pool(workers, initializer=_init_worker, initargs=(case, config, barrier)) as pool:
        submitted = 0
        window = max(config.reorder_window, workers)
        for k in range(len(batches)):
            while submitted < len(batches) and submitted - k < window:
                pool.apply_async(_run_batch, (batches[submitted],), callback=on_done(submitted),
                                 error_callback=on_error)
                submitted += 1
            with cond:
                while k not in done and not errors:
                    cond.wait()
                if errors:
                    raise errors[0]
                stats.max_buffered = max(stats.max_buffered, len(done))
                pid, results = done.pop(k)
            stats.worker_batches[pid] += 1
            stats.evaluated_tasks += len(results)
            yield from results


def _local_batch(case, config, batch):
    return os.getpid(), [evaluate_outages(case, outs, config) for outs in batch]


# --------------------------------------------------------------- run driver

def _read_prefix(path: Path, expected_ids: list[str]) -> tuple[list[dict], int]:
    """Valid leading records of an existing results file and their byte length."""
    records, good_bytes = [], 0
    with open(path, "rb") as fh:
        for raw in fh:
            if not raw.endswith(b"\n") or len(records) >= len(expected_ids):
                break
            try:
                rec = json.loads(raw)
            except ValueError:
                break
            if not isinstance(rec, dict) or rec.get("id") != expected_ids[len(records)]:
                break
            records.append(rec)
            good_bytes += len(raw)
    return records, good_bytes


def manifest_totals(n_components: int, config: EngineConfig) -> dict:
    n2 = n_components * (n_components - 1) if config.max_order == 2 else 0
    base = int(config.include_base)
    return {"base": base, "n1": n_components, "n2": n2, "total": base + n_components + n2}


def run_all(case: GridCase, config: EngineConfig, out_dir, *, checksum: str | None = None,
            progress=None) -> tuple[dict, RunStats]:
    """Evaluate every (or a sampled subset of) scenario and persist the results.

    Writes ``results.jsonl`` in enumeration order and ``manifest.json`` last.
    Re-running into the same directory resumes: already persisted records are
    kept and skipped.
    """
    t0 = time.perf_counter()
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    checksum = checksum or case_checksum(case)
    results_path, state_path = out / RESULTS_FILE, out / STATE_FILE
    state = {"case_checksum": checksum, "config_fingerprint": config.fingerprint(),
             "config": config.result_fields()}

    scenarios = list(enumerate_scenarios(case, config.max_order, config.include_base))
    selected = [scenarios[k] for k in sample_positions(len(scenarios), config.limit)]
    ids = [s.id for s in selected]

    persisted: list[dict] = []
    if results_path.exists() and results_path.stat().st_size > 0:
        if not state_path.exists():
            raise ResumeError(f"{results_path} exists without {STATE_FILE}; refusing to append")
        old = json.loads(state_path.read_text())
        if old.get("case_checksum") != checksum:
            raise ResumeError("existing results were produced from a different case "
                              f"(checksum {old.get('case_checksum')}, now {checksum})")
        if old.get("config_fingerprint") != state["config_fingerprint"]:
            raise ResumeError(f"existing results were produced with a different configuration: "
                              f"{old.get('config')} vs {state['config']}")
        persisted, nbytes = _read_prefix(results_path, ids)
        with open(results_path, "r+b") as fh:
            fh.truncate(nbytes)
    else:
        state_path.write_text(json.dumps(state, indent=2, sort_keys=True) + "\n")
        results_path.write_bytes(b"")
    (out / MANIFEST_FILE).unlink(missing_ok=True)

    stats = RunStats(skipped=len(persisted))
    remaining = selected[len(persisted):]
    keys = [canonical_outages(s, config) for s in remaining]
    uses = Counter(keys)
    cache: dict = {}
    for rec in persisted:
        key = canonical_outages(Scenario(rec["id"], tuple(ComponentRef.parse(o) for o in rec["outages"]), -1),
                                config)
        if key in uses:
            cache[key] = ScenarioResult.from_record(rec)
    tasks, seen = [], set(cache)
    for key in keys:
        if key not in seen:
            seen.add(key)
            tasks.append(key)

    counts = Counter()
    by_reason = Counter()
    base_result = None

    def tally(rec_sev, rec_reason, rec_id, rec):
        nonlocal base_result
        counts["severe" if rec_sev else "stable"] += 1
        by_reason.update(rec_reason)
        if rec_id == "base":
            base_result = rec

    for rec in persisted:
        tally(rec["severity"], rec["reason"], rec["id"], rec)

    stream = ordered_results(case, tasks, config, stats)
    with open(results_path, "a", encoding="utf-8") as fh:
        for n, sc in enumerate(remaining):
            key = keys[n]
            if key in cache:
                res = cache[key]
            else:
                res = next(stream)
            uses[key] -= 1
            if uses[key] > 0:
                cache[key] = res
            else:
                cache.pop(key, None)
            res = res.as_scenario(sc)
            fh.write(to_json_line(res) + "\n")
            tally(res.severity, res.reason, res.id, res.to_record())
            if n % 256 == 255:
                fh.flush()
                if progress:
                    progress(len(persisted) + n + 1, len(selected))
        fh.flush()
        os.fsync(fh.fileno())
    for _ in stream:  # drain; normally empty
        pass

    manifest = {
        "case_checksum": checksum,
        "case_name": case.name,
        "config": {**config.result_fields(), "workers": config.workers},
        "components": {"line": case.n_lines, "transformer": case.n_transformers,
                       "generator": case.n_generators},
        "totals": manifest_totals(len(component_universe(case)), config),
        "selected": len(selected),
        "evaluated": counts["stable"] + counts["severe"],
        "counts": {"stable": counts["stable"], "severe": counts["severe"],
                   "by_reason": {r: by_reason[r] for r in REASONS if by_reason[r]}},
        "base_case": None if base_result is None else {"severity": base_result["severity"],
                                                       "reason": base_result["reason"]},
        "wall_time_s": round(time.perf_counter() - t0, 3),
    }
    (out / MANIFEST_FILE).write_text(json.dumps(manifest, indent=2) + "\n")
    return manifest, stats


def read_results(path) -> Iterator[ScenarioResult]:
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                yield ScenarioResult.from_record(json.loads(line))
