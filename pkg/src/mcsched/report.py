"""Run every analysis that applies to a system description and collect the rows."""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable

from .cache import wcet_under, wcrt_cache
from .gpu import gpu_handling_server, gpu_remote_blocking_sync, gpu_wcrts
from .hier import task_wcrt_hier, vcpu_wcrt
from .memory import MemorySystem, dram_latency_terms, wcrt_cache_memory, wcrt_memory
from .model import MS, AnalysisError, SystemConfig, Task, by_priority
from .vint import attach_pseudo_vcpus, phys_isr_wcrt, task_wcrt_intr, vcpu_wcrt_intr, virt_intr_wcrt
from .vmpcp import local_blocking, remote_blocking, vcpu_task_wcrts, vcpu_wcrt_vmpcp

COLUMNS = ("analysis", "subject", "wcrt_ms", "deadline_ms", "verdict", "detail")


@dataclass
class Row:
    analysis: str
    subject: str
    wcrt: int | None
    deadline: int
    error: str | None = None
    detail: dict[str, int] = field(default_factory=dict)

    @property
    def verdict(self) -> str:
        if self.error:
            return "error"
        return "ok" if self.wcrt is not None else "miss"

    def cells(self) -> list[str]:
        detail = " ".join(f"{k}={v / MS:.3f}" for k, v in self.detail.items())
        return [
            self.analysis,
            self.subject,
            "-" if self.wcrt is None else f"{self.wcrt / MS:.3f}",
            f"{self.deadline / MS:.3f}",
            self.verdict,
            self.error or detail,
        ]


def _row(analysis: str, subject: str, deadline: int, solve: Callable[[], int | None], detail=None) -> Row:
    try:
        w = solve()
    except AnalysisError as exc:
        return Row(analysis, subject, None, deadline, error=str(exc))
    extra = dict(detail(w) if detail and w is not None else {})
    return Row(analysis, subject, w, deadline, detail=extra)


def _cores(system: SystemConfig) -> dict[int, list[Task]]:
    out: dict[int, list[Task]] = {}
    for t in system.tasks:
        if t.id in system.task_core:
            out.setdefault(system.task_core[t.id], []).append(t)
    return {q: by_priority(ts) for q, ts in sorted(out.items())}


def _cache_rows(system: SystemConfig) -> list[Row]:
    rows = []
    delta = system.platform.constants.delta
    for q, core in _cores(system).items():
        if all(t.id in system.task_cache for t in core):
            name, alloc, d = "cache", system.task_cache, delta
        else:
            # no partitions given: plain fixed-priority response times
            name, alloc, d = "fp", {t.id: frozenset() for t in core}, 0
        for t in core:
            c = wcet_under(t, alloc)
            rows.append(_row(name, t.id, t.deadline, lambda: wcrt_cache(t, core, alloc, d),
                             lambda w: {"C": c, "interference": w - c}))
    return rows


def _memory_system(system: SystemConfig) -> MemorySystem | None:
    cores = _cores(system)
    if not cores or not all(q in system.core_banks for q in cores):
        return None
    n = system.platform.n_cores
    return MemorySystem.of([cores.get(q, []) for q in range(n)],
                           [system.core_banks.get(q, frozenset()) for q in range(n)])


def _memory_rows(system: SystemConfig) -> list[Row]:
    ms = _memory_system(system)
    if ms is None:
        return []
    k = system.platform.constants
    terms = dram_latency_terms(system.platform.dram, k.n_cap)
    rows = [_row("memory", t.id, t.deadline, lambda: wcrt_memory(t, ms, terms))
            for core in ms.cores for t in core]
    if all(t.id in system.task_cache for core in ms.cores for t in core):
        rows += [_row("cache+memory", t.id, t.deadline,
                      lambda: wcrt_cache_memory(t, ms, system.task_cache, terms, k.delta, k.requests_per_reload))
                 for core in ms.cores for t in core]
    return rows


def _hier_rows(system: SystemConfig) -> list[Row]:
    if system.interrupts:
        return []  # the interrupt-aware rows replace these
    rows = []
    delta = system.platform.constants.delta
    for v in system.vcpus:
        peers = [u for u in system.vcpus if u.pcpu == v.pcpu]
        rows.append(_row("hier", v.id, v.period, lambda: vcpu_wcrt(v, peers)))
        alloc = system.task_cache if v.tasks and all(t.id in system.task_cache for t in v.tasks) else None
        for t in by_priority(v.tasks):
            rows.append(_row("hier", t.id, t.deadline,
                             lambda: task_wcrt_hier(t, v.tasks, v.budget, v.period, alloc, delta if alloc else 0)))
    return rows


def _vmpcp_rows(system: SystemConfig) -> list[Row]:
    vcpus = system.vcpus
    if not any(s.kind != "normal" for v in vcpus for t in v.tasks for s in t.segments):
        return []
    rows = []
    for overrun in (True, False):
        name = "vmpcp-overrun" if overrun else "vmpcp-no-overrun"
        for v in vcpus:
            rows.append(_row(name, v.id, v.period, lambda: vcpu_wcrt_vmpcp(v, vcpus, overrun)))
            try:
                wcrts = vcpu_task_wcrts(v, vcpus, overrun)
            except AnalysisError as exc:
                rows += [Row(name, t.id, None, t.deadline, error=str(exc)) for t in by_priority(v.tasks)]
                continue
            for t in by_priority(v.tasks):
                rows.append(_row(name, t.id, t.deadline, lambda: wcrts[t.id], lambda w: {
                    "local_blocking": local_blocking(t, v),
                    "remote_blocking": remote_blocking(t, vcpus, overrun) or 0,
                }))
    return rows


def _vint_rows(system: SystemConfig) -> list[Row]:
    if not system.interrupts:
        return []
    vcpus, irqs = list(system.vcpus), list(system.interrupts)
    managed = {i.id for i in irqs if i.kind == "virtual" and i.managed_by_vint}
    if managed:
        by_id = {v.id: v for v in vcpus}
        policies = {by_id[i.vcpu].policy for i in irqs if i.id in managed}
        if len(policies) > 1:
            raise ValueError("interrupts handled through pseudo-VCPUs need VCPUs with one common policy")
        irqs = [replace(i, managed_by_vint=False) for i in irqs]
        vcpus, irqs = attach_pseudo_vcpus(vcpus, irqs, policies.pop(), only=managed)
    dsr = {t for i in irqs for t in i.dsr_tasks}
    rows = []
    for v in vcpus:
        rows.append(_row("vint", v.id, v.period, lambda: vcpu_wcrt_intr(v, vcpus, irqs)))
        # bottom halves are judged with their interrupt's row
        for t in by_priority(t for t in v.tasks if t.id not in dsr):
            rows.append(_row("vint", t.id, t.deadline, lambda: task_wcrt_intr(t, v, vcpus, irqs)))
    for i in irqs:
        if i.kind == "physical":
            rows.append(_row("vint", i.id, i.min_interarrival, lambda: phys_isr_wcrt(i, irqs)))
        else:
            rows.append(_row("vint", i.id, i.min_interarrival, lambda: virt_intr_wcrt(i, vcpus, irqs)))
    return rows


def _gpu_rows(system: SystemConfig) -> list[Row]:
    if not any(t.gpu_segments for t in system.tasks):
        return []
    if not all(t.id in system.task_core for t in system.tasks):
        raise ValueError("GPU analysis needs every task in allocation.task_core")
    modes = ["sync"] + (["server"] if system.gpu_server_core is not None else [])
    by_id = {t.id: t for t in system.tasks}
    rows = []
    for mode in modes:
        name = f"gpu-{mode}"
        try:
            wcrts = gpu_wcrts(system, mode)
        except AnalysisError as exc:
            rows += [Row(name, t.id, None, t.deadline, error=str(exc)) for t in system.tasks]
            continue
        for tid, w in wcrts.items():
            t = by_id[tid]
            if mode == "sync":
                detail = lambda w: {"gpu_blocking": gpu_remote_blocking_sync(t, system) or 0}  # noqa: E731
            else:
                detail = lambda w: {"gpu_handling": gpu_handling_server(t, system) or 0}  # noqa: E731
            rows.append(_row(name, tid, t.deadline, lambda: w, detail))
    return rows


def analyze_system(system: SystemConfig) -> list[Row]:
    """One row per analysed entity for every analysis the system's fields support."""
    rows: list[Row] = []
    for part in (_cache_rows, _memory_rows, _hier_rows, _vmpcp_rows, _vint_rows, _gpu_rows):
        rows += part(system)
    return rows
