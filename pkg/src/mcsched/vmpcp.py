"""Lock-aware analysis for tasks in VCPUs sharing global and local resources.

Each configuration pairs a budget policy (periodic or deferrable server)
with an overrun option: a VCPU may run past its budget only to finish a
global critical section.
"""

from __future__ import annotations

from dataclasses import replace
from typing import Mapping, NamedTuple, Sequence

import numpy as np

from .model import (
    DEFAULT_ITERATION_CAP,
    Task,
    Vcpu,
    by_priority,
    ceil_div,
    ceil_div_grid,
    fixed_point,
    fixed_point_grid,
)

# configuration name -> (VCPU policy, overrun)
SCHEMES: dict[str, tuple[str, bool]] = {
    "PSwO": ("periodic", True),
    "DSwO": ("deferrable", True),
    "PSnO": ("periodic", False),
    "DSnO": ("deferrable", False),
}


class Gcs(NamedTuple):
    index: int
    length: int
    resource: str


def gcs_list(t: Task) -> list[Gcs]:
    return [Gcs(k, s.length, s.resource) for k, s in enumerate(t.segments) if s.kind == "gcs"]


def _longest_gcs(t: Task) -> int:
    return max((s.length for s in t.segments if s.kind == "gcs"), default=0)


def ght(v: Vcpu) -> int:
    """Longest global-resource holding time a VCPU can impose: one longest gcs per task."""
    return sum(_longest_gcs(t) for t in v.tasks)


def sum_ght(v: Vcpu, t: int) -> int:
    """All gcs time the VCPU's tasks can issue in a window of length ``t`` (with carry-in)."""
    return sum((ceil_div(t, x.period) + 1) * sum(x.gcs_lengths()) for x in v.tasks)


def _same_pcpu(v: Vcpu, vcpus: Sequence[Vcpu]) -> list[Vcpu]:
    return [u for u in vcpus if u.pcpu == v.pcpu and u.id != v.id]


def vcpu_blocking(v: Vcpu, vcpus: Sequence[Vcpu], t: int) -> int:
    lower = [u for u in _same_pcpu(v, vcpus) if u.priority < v.priority]
    if v.policy == "deferrable":
        return sum(sum_ght(u, t) for u in lower)
    return sum(ght(u) for u in lower)


def overrun_time(v: Vcpu, overrun: bool) -> int:
    return ght(v) if overrun else 0


def _vcpu_step(v: Vcpu, vcpus: Sequence[Vcpu], overrun: bool):
    base = v.budget + overrun_time(v, overrun)
    hp = [(h.period, h.jitter, h.budget + overrun_time(h, overrun))
          for h in _same_pcpu(v, vcpus) if h.priority > v.priority]

    def step(w: int) -> int:
        return base + vcpu_blocking(v, vcpus, w) + sum(ceil_div(w + j, t) * c for t, j, c in hp)
    return step, base


def vcpu_demand(w: int, v: Vcpu, vcpus: Sequence[Vcpu], overrun: bool) -> int:
    return _vcpu_step(v, vcpus, overrun)[0](w)


def vcpu_wcrt_vmpcp(
    v: Vcpu, vcpus: Sequence[Vcpu], overrun: bool, cap: int = DEFAULT_ITERATION_CAP
) -> int | None:
    step, base = _vcpu_step(v, vcpus, overrun)
    return fixed_point(step, base, v.period, cap)


# ---------------------------------------------------------------- gcs response


def gcs_response_time(load: int, prm: int, budget: int, period: int, policy: str, overrun: bool) -> int:
    """Time from acquiring a global resource until the critical section completes."""
    gap = period - budget
    if not overrun:
        return ceil_div(load, budget) * gap + load + prm
    if policy == "deferrable":
        return load + prm
    return gap + load + prm


def gcs_load(task: Task, gcs: Gcs, v: Vcpu) -> int:
    """Budget needed for the gcs plus one gcs of every higher-priority task in the VCPU."""
    return gcs.length + sum(_longest_gcs(x) for x in v.tasks if x.priority > task.priority)


def gcs_vcpu_preemption(v: Vcpu, vcpus: Sequence[Vcpu]) -> int:
    """Longest gcs of each task on higher-priority VCPUs of the same PCPU."""
    return sum(_longest_gcs(x) for u in _same_pcpu(v, vcpus) if u.priority > v.priority for x in u.tasks)


def gcs_response(task: Task, gcs: Gcs, v: Vcpu, vcpus: Sequence[Vcpu], overrun: bool) -> int:
    return gcs_response_time(
        gcs_load(task, gcs, v), gcs_vcpu_preemption(v, vcpus), v.budget, v.period, v.policy, overrun
    )


# ---------------------------------------------------------------- blocking


def _lcs_ceilings(v: Vcpu) -> dict[str, int]:
    ceil: dict[str, int] = {}
    for t in v.tasks:
        for s in t.segments:
            if s.kind == "lcs":
                ceil[s.resource] = max(ceil.get(s.resource, t.priority), t.priority)
    return ceil


def local_blocking(task: Task, v: Vcpu) -> int:
    lower = [x for x in v.tasks if x.priority < task.priority]
    ceilings = _lcs_ceilings(v)
    lcs = max(
        (s.length for x in lower for s in x.segments
         if s.kind == "lcs" and ceilings[s.resource] > task.priority),
        default=0,
    )
    gcs = sum(_longest_gcs(x) for x in lower)
    return (lcs + gcs) * (len(gcs_list(task)) + 1)


def _vcpu_of(vcpus: Sequence[Vcpu]) -> dict[str, Vcpu]:
    return {t.id: v for v in vcpus for t in v.tasks}


def remote_blocking_gcs(
    task: Task, gcs: Gcs, vcpus: Sequence[Vcpu], overrun: bool, cap: int = DEFAULT_ITERATION_CAP
) -> int | None:
    """Waiting time for one global resource; ``None`` if it exceeds the task's deadline."""
    home = _vcpu_of(vcpus)[task.id]
    lower, higher = [], []
    for u in vcpus:
        if u.id == home.id:
            continue
        for x in u.tasks:
            for g in gcs_list(x):
                if g.resource == gcs.resource:
                    w = gcs_response(x, g, u, vcpus, overrun)
                    (lower if u.priority < home.priority else higher).append((x.period, w))
    start = max((w for _, w in lower), default=0)
    if not higher:
        return start if start <= task.deadline else None

    def step(b: int) -> int:
        return start + sum((ceil_div(b, t) + 1) * w for t, w in higher)

    return fixed_point(step, start, task.deadline, cap)


def remote_blocking(task: Task, vcpus: Sequence[Vcpu], overrun: bool, cap: int = DEFAULT_ITERATION_CAP) -> int | None:
    total = 0
    for g in gcs_list(task):
        b = remote_blocking_gcs(task, g, vcpus, overrun, cap)
        if b is None:
            return None
        total += b
    return total


# ---------------------------------------------------------------- task response


def _task_step(task: Task, v: Vcpu, blocking: int, hp):
    """hp holds (T_h, C_h, W_h - C_h)."""
    gap = v.period - v.budget
    base = task.c + blocking

    def step(w: int) -> int:
        total = base
        for t_h, c_h, extra in hp:
            total += ceil_div(w + gap + extra, t_h) * c_h
        if gap:
            total += ceil_div(w + v.budget, v.period) * gap
        return total
    return step


def vcpu_task_wcrts(
    v: Vcpu, vcpus: Sequence[Vcpu], overrun: bool, cap: int = DEFAULT_ITERATION_CAP
) -> dict[str, int | None]:
    """Response times of every task in ``v``, highest priority first."""
    out: dict[str, int | None] = {}
    done: list[tuple[Task, int]] = []
    failed = False
    for t in by_priority(v.tasks):
        if failed:
            out[t.id] = None
            continue
        br = remote_blocking(t, vcpus, overrun, cap)
        if br is None:
            out[t.id] = None
            failed = True
            continue
        hp = [(h.period, h.c, w - h.c) for h, w in done]
        w = fixed_point(_task_step(t, v, local_blocking(t, v) + br, hp), t.c, t.deadline, cap)
        out[t.id] = w
        if w is None:
            failed = True
        else:
            done.append((t, w))
    return out


def task_wcrt_vmpcp(task: Task, vcpus: Sequence[Vcpu], overrun: bool, cap: int = DEFAULT_ITERATION_CAP) -> int | None:
    return vcpu_task_wcrts(_vcpu_of(vcpus)[task.id], vcpus, overrun, cap)[task.id]


def task_demand(w: int, task: Task, vcpus: Sequence[Vcpu], overrun: bool, hp_wcrt: Mapping[str, int]) -> int:
    """Right-hand side of the task recurrence at ``w``, given higher tasks' response times."""
    v = _vcpu_of(vcpus)[task.id]
    blocking = local_blocking(task, v) + remote_blocking(task, vcpus, overrun)
    hp = [(h.period, h.c, hp_wcrt[h.id] - h.c) for h in v.tasks if h.priority > task.priority]
    return _task_step(task, v, blocking, hp)(w)


def system_schedulable(vcpus: Sequence[Vcpu], overrun: bool, cap: int = DEFAULT_ITERATION_CAP) -> bool:
    if any(vcpu_wcrt_vmpcp(v, vcpus, overrun, cap) is None for v in vcpus):
        return False
    return all(w is not None for v in vcpus for w in vcpu_task_wcrts(v, vcpus, overrun, cap).values())


def apply_scheme(vcpus: Sequence[Vcpu], scheme: str) -> list[Vcpu]:
    policy, _ = SCHEMES[scheme]
    return [replace(v, policy=policy) for v in vcpus]


# ---------------------------------------------------------------- budget scan


def common_budget_scan(
    vcpus: Sequence[Vcpu], overrun: bool, step: int, cap: int = DEFAULT_ITERATION_CAP
) -> int | None:
    """Largest budget ``T - m*step`` (m = 0, 1, ...) at which every VCPU passes its test.

    All VCPUs share one period and receive the same budget. Every candidate
    is evaluated at once on a grid, which gives the same answer as trying
    them one by one from the top.
    """
    if not vcpus:
        return None
    period = vcpus[0].period
    if any(v.period != period for v in vcpus):
        raise ValueError("a common budget needs a common VCPU period")
    budgets = np.arange(period, 0, -step, dtype=np.int64)
    ok = np.ones(budgets.shape, dtype=bool)
    for v in vcpus:
        ok &= _vcpu_pass_grid(v, vcpus, overrun, budgets, cap)
    hits = np.flatnonzero(ok)
    return int(budgets[hits[0]]) if hits.size else None


def _vcpu_pass_grid(v: Vcpu, vcpus, overrun, budgets: np.ndarray, cap) -> np.ndarray:
    base = budgets + overrun_time(v, overrun)
    peers = _same_pcpu(v, vcpus)
    hp = [(h.period, h.policy == "deferrable", overrun_time(h, overrun)) for h in peers if h.priority > v.priority]
    lower = [u for u in peers if u.priority < v.priority]
    if v.policy == "deferrable":
        carry = [(x.period, sum(x.gcs_lengths())) for u in lower for x in u.tasks if x.gcs_lengths()]
        fixed_block = 0
    else:
        carry = []
        fixed_block = sum(ght(u) for u in lower)

    def step(w: np.ndarray) -> np.ndarray:
        total = base + fixed_block
        for t, g in carry:
            total = total + (ceil_div_grid(w, t) + 1) * g
        for t, deferrable, o in hp:
            jitter = (t - budgets) if deferrable else 0
            total = total + ceil_div_grid(w + jitter, t) * (budgets + o)
        return total

    return fixed_point_grid(step, base, v.period, cap) >= 0
