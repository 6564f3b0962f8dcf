"""Monte-Carlo driver: generate tasksets, run every scheme, count the passes.

Taskset ``i`` of every sweep point uses seed ``seed + i``, so all points
and schemes share common random numbers. Completed points are written to a
checkpoint directory next to the output file and skipped on the next run.
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import multiprocessing as mp
import shutil
from dataclasses import replace
from pathlib import Path
from typing import Any, Callable, Iterator

from .expgen import DURATION_PARAMS, INTR_SCHEMES, ExperimentSpec, gen_system
from .gpu import gpu_schedulable
from .hier import cache_to_vm_alloc, cavm, heuristic_vm_utilization
from .memalloc import BASELINES, baseline_alloc, build_interference_graph, miaa
from .memory import dram_latency_terms
from .model import MS, AnalysisError, SystemConfig
from .vint import evaluate_intr
from .vmpcp import SCHEMES as LOCK_SCHEMES
from .vmpcp import apply_scheme, common_budget_scan, system_schedulable

log = logging.getLogger(__name__)

COLUMNS = ("scheme", "sweep_value", "n_tasksets", "n_schedulable", "fraction", "seed_base")

Verdicts = dict[str, bool]


def _guard(fn: Callable[[], bool]) -> bool:
    # a recurrence that never settles counts as a failed taskset
    try:
        return bool(fn())
    except AnalysisError:
        return False


# ---------------------------------------------------------------- per chapter


def _eval_mem_alloc(system: SystemConfig, p, schemes, seed) -> Verdicts:
    terms = dram_latency_terms(system.platform.dram, p["n_reorder"])
    tasks = system.tasks
    out = {}
    for s in schemes:
        if s == "MIAA":
            graph = build_interference_graph(tasks, terms)
            out[s] = _guard(lambda: miaa(tasks, p["n_cores"], p["n_banks"], terms, graph=graph).schedulable)
        else:
            assert s in BASELINES
            out[s] = _guard(lambda: baseline_alloc(s, tasks, p["n_cores"], p["n_banks"], terms).schedulable)
    return out


_CAVM_MEMO: dict[Any, list | None] = {}


def _cavm_curves(system: SystemConfig, p, seed) -> list | None:
    """Budget curves of every non-empty VCPU, or ``None`` when some VM cannot be designed.

    The design does not depend on how many partitions the platform exposes,
    so it is computed once per seed and reused across that sweep.
    """
    key = (seed, tuple(sorted((k, v) for k, v in p.items() if k != "n_partitions")))
    if key not in _CAVM_MEMO:
        if len(_CAVM_MEMO) > 256:
            _CAVM_MEMO.clear()
        by_id = {t.id: t for t in system.tasks}
        curves = []
        for vm in system.vms:
            design = cavm([by_id[t] for t in vm.tasks], p["vcpus_per_vm"], p["n_cache"],
                          p["vcpu_period"], p["delta"], p["budget_step"])
            if not design.success:
                curves = None
                break
            curves += [c for c, ts in zip(design.budgets, design.vcpu_tasks) if ts]
        _CAVM_MEMO[key] = curves
    return _CAVM_MEMO[key]


def _eval_virt_cache(system: SystemConfig, p, schemes, seed) -> Verdicts:
    by_id = {t.id: t for t in system.tasks}
    vms = [[by_id[t] for t in vm.tasks] for vm in system.vms]
    k, limit = p["n_partitions"], p["n_pcpus"]
    out = {}
    for s in schemes:
        if s == "CAVM":
            def run() -> bool:
                curves = _cavm_curves(system, p, seed)
                if curves is None:
                    return False
                alloc = cache_to_vm_alloc(curves, [p["vcpu_period"]] * len(curves), k)
                return alloc is not None and alloc.utilization <= limit
        else:
            def run() -> bool:
                u = heuristic_vm_utilization(vms, p["vcpus_per_vm"], k, p["vcpu_period"],
                                             p["delta"], s, p["budget_step"])
                return u is not None and u <= limit
        out[s] = _guard(run)
    return out


def _eval_vmpcp(system: SystemConfig, p, schemes, seed) -> Verdicts:
    out = {}
    for s in schemes:
        _, overrun = LOCK_SCHEMES[s]

        def run() -> bool:
            vcpus = apply_scheme(system.vcpus, s)
            budget = common_budget_scan(vcpus, overrun, p["budget_step"])
            if budget is None:
                return False
            return system_schedulable([replace(v, budget=budget) for v in vcpus], overrun)
        out[s] = _guard(run)
    return out


def _eval_vint(system: SystemConfig, p, schemes, seed) -> Verdicts:
    out = {}
    for s in schemes:
        policy, vint = INTR_SCHEMES[s]

        def run() -> bool:
            res = evaluate_intr(system.vcpus, system.interrupts, policy, vint,
                                p["budget_step"], p["pseudo_period_ratio"])
            return res.serviceable if p["metric"] == "serviceable" else res.schedulable
        out[s] = _guard(run)
    return out


def _eval_gpu(system: SystemConfig, p, schemes, seed) -> Verdicts:
    return {s: _guard(lambda: gpu_schedulable(system, s)) for s in schemes}


_EVALUATORS = {
    "mem_alloc": _eval_mem_alloc,
    "virt_cache": _eval_virt_cache,
    "vmpcp": _eval_vmpcp,
    "vint": _eval_vint,
    "gpu": _eval_gpu,
}


def evaluate(spec: ExperimentSpec, seed: int, point=None) -> Verdicts:
    """Pass/fail of every scheme in ``spec`` on the taskset drawn from ``seed``."""
    system = gen_system(spec, seed, point)
    return _EVALUATORS[spec.chapter](system, spec.at(point), spec.schemes, seed)


# ---------------------------------------------------------------- running


def count_column(spec: ExperimentSpec) -> str:
    if spec.chapter == "vint" and spec.params["metric"] == "serviceable":
        return "n_serviceable"
    return "n_schedulable"


def format_sweep_value(spec: ExperimentSpec, value) -> str:
    if value is None:
        return ""
    if isinstance(value, tuple):
        return ":".join(format_sweep_value(spec, v) for v in value)
    if spec.sweep in DURATION_PARAMS:
        return f"{value / MS:.3f}"
    if isinstance(value, int):
        return str(value)
    return f"{value:.3f}"


def fingerprint(spec: ExperimentSpec) -> str:
    blob = json.dumps(
        {
            "chapter": spec.chapter,
            "params": {k: spec.params[k] for k in sorted(spec.params)},
            "sweep": spec.sweep,
            "values": list(spec.values),
            "n_tasksets": spec.n_tasksets,
            "seed": spec.seed,
            "schemes": list(spec.schemes),
        },
        sort_keys=True,
        default=list,
    )
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


_WORKER_SPEC: ExperimentSpec | None = None


def _init_worker(spec: ExperimentSpec) -> None:
    global _WORKER_SPEC
    _WORKER_SPEC = spec


def _work(job: tuple[int, int]) -> tuple[int, Verdicts]:
    index, seed = job
    return index, evaluate(_WORKER_SPEC, seed, _WORKER_SPEC.points()[index])


class Checkpoints:
    """One JSON file per finished sweep point, tagged with the spec fingerprint."""

    def __init__(self, directory: Path, spec: ExperimentSpec):
        self.dir = directory
        self.tag = fingerprint(spec)

    def _path(self, index: int) -> Path:
        return self.dir / f"point-{index:04d}.json"

    def load(self, index: int) -> dict[str, int] | None:
        try:
            data = json.loads(self._path(index).read_text())
        except (OSError, ValueError):
            return None
        return data["counts"] if data.get("fingerprint") == self.tag else None

    def save(self, index: int, counts: dict[str, int]) -> None:
        self.dir.mkdir(parents=True, exist_ok=True)
        tmp = self._path(index).with_suffix(".tmp")
        tmp.write_text(json.dumps({"fingerprint": self.tag, "counts": counts}, sort_keys=True))
        tmp.replace(self._path(index))

    def clear(self) -> None:
        shutil.rmtree(self.dir, ignore_errors=True)


def run_experiment(
    spec: ExperimentSpec,
    jobs: int = 1,
    checkpoints: Checkpoints | None = None,
    progress: Callable[[int, int], None] | None = None,
) -> dict[int, dict[str, int]]:
    """Pass counts per sweep point index and scheme."""
    points = spec.points()
    counts: dict[int, dict[str, int]] = {}
    for i in range(len(points)):
        saved = checkpoints.load(i) if checkpoints else None
        if saved is not None and set(saved) == set(spec.schemes):
            counts[i] = saved
            log.info("point %d restored from checkpoint", i)
    todo = [i for i in range(len(points)) if i not in counts]
    # seed-major order lets one worker reuse per-seed work across points
    queue = [(i, spec.seed + k) for k in range(spec.n_tasksets) for i in todo]
    left = {i: spec.n_tasksets for i in todo}
    partial = {i: dict.fromkeys(spec.schemes, 0) for i in todo}

    def absorb(results: Iterator[tuple[int, Verdicts]]) -> None:
        done = 0
        for i, verdicts in results:
            for s, ok in verdicts.items():
                partial[i][s] += ok
            left[i] -= 1
            done += 1
            if progress:
                progress(done, len(queue))
            if not left[i]:
                counts[i] = partial[i]
                if checkpoints:
                    checkpoints.save(i, counts[i])

    if jobs <= 1 or len(queue) <= 1:
        _init_worker(spec)
        absorb(_work(j) for j in queue)
    else:
        with mp.get_context("spawn").Pool(jobs, _init_worker, (spec,)) as pool:
            absorb(pool.imap_unordered(_work, queue, chunksize=max(len(todo), 1)))
    return counts


def result_rows(spec: ExperimentSpec, counts: dict[int, dict[str, int]]) -> list[dict[str, str]]:
    """CSV rows ordered by scheme (as declared) then sweep point."""
    col = count_column(spec)
    rows = []
    for s in spec.schemes:
        for i, value in enumerate(spec.points()):
            n = counts[i][s]
            rows.append({
                "scheme": s,
                "sweep_value": format_sweep_value(spec, value),
                "n_tasksets": str(spec.n_tasksets),
                col: str(n),
                "fraction": f"{n / spec.n_tasksets:.6f}",
                "seed_base": str(spec.seed),
            })
    return rows


def write_csv(path: Path, spec: ExperimentSpec, rows: list[dict[str, str]]) -> None:
    header = [count_column(spec) if c == "n_schedulable" else c for c in COLUMNS]
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=header, lineterminator="\n")
        w.writeheader()
        w.writerows(rows)


def experiment_to_csv(spec: ExperimentSpec, out: Path, jobs: int = 1, progress=None) -> list[dict[str, str]]:
    """Run ``spec`` with checkpoints under ``<out>.ckpt`` and write the CSV."""
    out = Path(out)
    ckpt = Checkpoints(out.with_name(out.name + ".ckpt"), spec)
    counts = run_experiment(spec, jobs, ckpt, progress)
    rows = result_rows(spec, counts)
    write_csv(out, spec, rows)
    ckpt.clear()
    return rows
