"""Interrupt handling under virtualization, with and without pseudo-VCPUs.

A physical interrupt runs its ISR in the hypervisor on a fixed PCPU. Its
virtual counterpart runs an ISR plus deferred (DSR) tasks inside a VCPU.
When vINT manages a virtual interrupt, that handling is billed to a
pseudo-VCPU that sits above every regular VCPU of the PCPU.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Mapping, NamedTuple, Sequence

import numpy as np

from .hier import _hier_step
from .model import (
    DEFAULT_ITERATION_CAP,
    InterruptSource,
    Task,
    Vcpu,
    _id_key,
    ceil_div,
    ceil_div_grid,
    fixed_point,
    fixed_point_grid,
)


class _View:
    """Lookups over one system's VCPUs and interrupt sources."""

    def __init__(self, vcpus: Sequence[Vcpu], interrupts: Sequence[InterruptSource]):
        self.vcpus = {v.id: v for v in vcpus}
        self.irqs = {i.id: i for i in interrupts}
        self.tasks = {t.id: t for v in vcpus for t in v.tasks}

    def physical_on(self, pcpu: int) -> list[InterruptSource]:
        return [i for i in self.irqs.values() if i.kind == "physical" and i.pcpu == pcpu]

    def virtual_on(self, vcpu_id: str) -> list[InterruptSource]:
        return [i for i in self.irqs.values() if i.kind == "virtual" and i.vcpu == vcpu_id]

    def pseudo_of(self, irq: InterruptSource) -> Vcpu | None:
        return self.vcpus.get(irq.pseudo_vcpu) if irq.pseudo_vcpu else None

    def managed_dsrs(self, vcpu_id: str) -> set[str]:
        """Tasks on the VCPU whose DSR work is billed to a pseudo-VCPU."""
        return {t for i in self.virtual_on(vcpu_id) if self.pseudo_of(i) for t in i.dsr_tasks}

    def pcpu_peers(self, v: Vcpu) -> list[Vcpu]:
        return [u for u in self.vcpus.values() if u.pcpu == v.pcpu and u.id != v.id]


def handling_wcet(irq: InterruptSource, tasks: Mapping[str, Task]) -> int:
    """ISR WCET plus the WCETs of every DSR task it releases."""
    return irq.isr_wcet + sum(tasks[t].c for t in irq.dsr_tasks)


def _phys_terms(view: _View, pcpu: int) -> list[tuple[int, int]]:
    return [(i.min_interarrival, i.isr_wcet) for i in view.physical_on(pcpu)]


# ---------------------------------------------------------------- budgets


def pseudo_vcpu_budget(
    irq: InterruptSource,
    period: int,
    tasks: Mapping[str, Task],
    unmanaged: Sequence[InterruptSource] = (),
) -> int:
    """Budget that lets a pseudo-VCPU of ``period`` absorb every arrival of ``irq``.

    ``unmanaged`` lists the other virtual interrupts of the original VCPU
    that have no pseudo-VCPU; their ISRs may run on this budget too.
    """
    t_vi = irq.min_interarrival
    if period < t_vi:
        raise ValueError(f"pseudo-VCPU period {period} is shorter than the inter-arrival time {t_vi}")
    extra = sum(ceil_div(t_vi, u.min_interarrival) * u.isr_wcet for u in unmanaged if u.id != irq.id)
    return ceil_div(period, t_vi) * (handling_wcet(irq, tasks) + extra)


def attach_pseudo_vcpus(
    vcpus: Sequence[Vcpu],
    interrupts: Sequence[InterruptSource],
    policy: str,
    period_ratio: int = 1,
    only: set[str] | None = None,
) -> tuple[list[Vcpu], list[InterruptSource]]:
    """Give every virtual interrupt (or those in ``only``) its own pseudo-VCPU.

    A pseudo-VCPU's period is ``period_ratio`` times the interrupt's
    inter-arrival time. Pseudo-VCPUs rank above every regular VCPU on their
    PCPU; among themselves they follow the original VCPU's priority, then
    the priority of the interrupt's highest DSR task.
    """
    view = _View(vcpus, interrupts)
    chosen = [i for i in interrupts if i.kind == "virtual" and (only is None or i.id in only)]
    chosen_ids = {i.id for i in chosen}
    pseudo: list[Vcpu] = []
    irqs = {i.id: i for i in interrupts}
    for irq in chosen:
        origin = view.vcpus[irq.vcpu]
        unmanaged = [u for u in view.virtual_on(origin.id) if u.id not in chosen_ids and not u.pseudo_vcpu]
        period = irq.min_interarrival * period_ratio
        pid = f"{irq.id}.pseudo"
        pseudo.append(Vcpu(
            id=pid,
            budget=pseudo_vcpu_budget(irq, period, view.tasks, unmanaged),
            period=period,
            policy=policy,
            pcpu=origin.pcpu,
            kind="pseudo",
            interrupt=irq.id,
            origin=origin.id,
        ))
        irqs[irq.id] = replace(irq, managed_by_vint=True, pseudo_vcpu=pid)

    out = list(vcpus)
    for pcpu in sorted({p.pcpu for p in pseudo}):
        base = max((v.priority for v in vcpus if v.pcpu == pcpu), default=0)
        here = [p for p in pseudo if p.pcpu == pcpu]

        def rank(p: Vcpu):
            irq = irqs[p.interrupt]
            dsr = max((view.tasks[t].priority for t in irq.dsr_tasks), default=0)
            return view.vcpus[p.origin].priority, dsr, _id_key(p.id)

        out.extend(replace(p, priority=base + k) for k, p in enumerate(sorted(here, key=rank), start=1))
    return out, list(irqs.values())


# ---------------------------------------------------------------- VCPUs and tasks


def _vcpu_step(v: Vcpu, view: _View):
    phys = _phys_terms(view, v.pcpu)
    hp = [(h.period, h.jitter, h.budget) for h in view.pcpu_peers(v) if h.priority > v.priority]

    def step(w: int) -> int:
        total = v.budget
        for t, c in phys:
            total += ceil_div(w, t) * c
        for t, j, c in hp:
            total += ceil_div(w + j, t) * c
        return total
    return step


def vcpu_demand_intr(w: int, v: Vcpu, vcpus, interrupts) -> int:
    return _vcpu_step(v, _View(vcpus, interrupts))(w)


def vcpu_wcrt_intr(
    v: Vcpu, vcpus: Sequence[Vcpu], interrupts: Sequence[InterruptSource], cap: int = DEFAULT_ITERATION_CAP
) -> int | None:
    """VCPU response time with physical ISRs and higher VCPUs (pseudo ones included)."""
    return fixed_point(_vcpu_step(v, _View(vcpus, interrupts)), v.budget, v.period, cap)


def _task_parts(task: Task, v: Vcpu, view: _View):
    managed = view.managed_dsrs(v.id)
    hp = [(h.period, h.c) for h in v.tasks if h.priority > task.priority and h.id not in managed]
    hp += [(i.min_interarrival, i.isr_wcet) for i in view.virtual_on(v.id) if not view.pseudo_of(i)]
    return hp


def task_demand_intr(w: int, task: Task, v: Vcpu, vcpus, interrupts) -> int:
    hp = _task_parts(task, v, _View(vcpus, interrupts))
    return _hier_step(task.c, hp, v.budget, v.period)(w)


def task_wcrt_intr(
    task: Task,
    v: Vcpu,
    vcpus: Sequence[Vcpu],
    interrupts: Sequence[InterruptSource],
    cap: int = DEFAULT_ITERATION_CAP,
) -> int | None:
    """Task response time in VCPU ``v``; unmanaged virtual ISRs interfere, managed DSRs do not."""
    hp = _task_parts(task, v, _View(vcpus, interrupts))
    return fixed_point(_hier_step(task.c, hp, v.budget, v.period), task.c, task.deadline, cap)


# ---------------------------------------------------------------- interrupts


def _phys_step(irq: InterruptSource, view: _View):
    hp = [(h.min_interarrival, h.isr_wcet) for h in view.physical_on(irq.pcpu)
          if h.id != irq.id and h.priority > irq.priority]

    def step(w: int) -> int:
        return irq.isr_wcet + sum(ceil_div(w, t) * c for t, c in hp)
    return step


def phys_isr_wcrt(
    irq: InterruptSource, interrupts: Sequence[InterruptSource], cap: int = DEFAULT_ITERATION_CAP
) -> int | None:
    """Response time of a physical ISR; ``None`` once it passes the inter-arrival time."""
    view = _View((), interrupts)
    return fixed_point(_phys_step(irq, view), irq.isr_wcet, irq.min_interarrival, cap)


def _virt_step(irq: InterruptSource, view: _View, vint: bool | None):
    pseudo = view.pseudo_of(irq)
    if vint is None:
        vint = pseudo is not None
    if vint != (pseudo is not None):
        raise ValueError(f"interrupt {irq.id}: vINT analysis needs a pseudo-VCPU, and only then")
    base = handling_wcet(irq, view.tasks)
    siblings = [u for u in view.virtual_on(irq.vcpu) if u.id != irq.id]

    if vint:
        blockers = [
            (u.min_interarrival, u.isr_wcet) for u in siblings
            if view.pseudo_of(u) is None or view.pseudo_of(u).priority < pseudo.priority
        ]
        phys = _phys_terms(view, pseudo.pcpu)
        hp = [(h.period, h.jitter, h.budget) for h in view.pcpu_peers(pseudo) if h.priority > pseudo.priority]

        def step(w: int) -> int:
            total = base
            for t, c in blockers:
                total += ceil_div(w, t) * c
            for t, c in phys:
                total += ceil_div(w, t) * c
            for t, j, c in hp:
                total += ceil_div(w + j, t) * c
            return total
        return step, base

    v = view.vcpus[irq.vcpu]
    dsr = set(irq.dsr_tasks)
    floor = min((view.tasks[t].priority for t in dsr), default=None)
    managed = view.managed_dsrs(v.id)
    hp = []
    if floor is not None:
        hp = [(h.period, h.c) for h in v.tasks if h.priority > floor and h.id not in dsr and h.id not in managed]
    hp += [(u.min_interarrival, u.isr_wcet) for u in siblings if view.pseudo_of(u) is None]
    return _hier_step(base, hp, v.budget, v.period), base


def virt_demand(w: int, irq: InterruptSource, vcpus, interrupts, vint: bool | None = None) -> int:
    return _virt_step(irq, _View(vcpus, interrupts), vint)[0](w)


def virt_intr_wcrt(
    irq: InterruptSource,
    vcpus: Sequence[Vcpu],
    interrupts: Sequence[InterruptSource],
    vint: bool | None = None,
    limit: int | None = None,
    cap: int = DEFAULT_ITERATION_CAP,
) -> int | None:
    """Time from injection until the ISR and all DSRs of ``irq`` finish.

    ``vint`` defaults to whether the interrupt has a pseudo-VCPU. Results
    past ``limit`` (the inter-arrival time unless given) are ``None``.
    """
    step, base = _virt_step(irq, _View(vcpus, interrupts), vint)
    return fixed_point(step, base, irq.min_interarrival if limit is None else limit, cap)


class FlowVerdict(NamedTuple):
    serviceable: bool
    total: int | None


def flow_serviceable(
    phys: InterruptSource,
    virt: InterruptSource,
    ipi: InterruptSource | None,
    vcpus: Sequence[Vcpu],
    interrupts: Sequence[InterruptSource],
    vint: bool | None = None,
    cap: int = DEFAULT_ITERATION_CAP,
) -> FlowVerdict:
    """Physical ISR, optional IPI, then the virtual handler; must fit the shorter inter-arrival time."""
    bound = min(phys.min_interarrival, virt.min_interarrival)
    parts = [phys_isr_wcrt(phys, interrupts, cap)]
    if ipi is not None:
        parts.append(phys_isr_wcrt(ipi, interrupts, cap))
    parts.append(virt_intr_wcrt(virt, vcpus, interrupts, vint, cap=cap))
    if any(p is None for p in parts):
        return FlowVerdict(False, None)
    total = sum(parts)
    return FlowVerdict(total <= bound, total)


# ---------------------------------------------------------------- whole system


def tasks_schedulable_intr(vcpus, interrupts, cap: int = DEFAULT_ITERATION_CAP) -> bool:
    """Every VCPU passes its test and every regular (non-DSR) task meets its deadline.

    DSR tasks are judged through interrupt serviceability instead.
    """
    view = _View(vcpus, interrupts)
    dsrs = {t for i in interrupts for t in i.dsr_tasks}
    for v in vcpus:
        if fixed_point(_vcpu_step(v, view), v.budget, v.period, cap) is None:
            return False
    for v in vcpus:
        if v.kind == "pseudo":
            continue
        for t in v.tasks:
            if t.id in dsrs:
                continue
            hp = _task_parts(t, v, view)
            if fixed_point(_hier_step(t.c, hp, v.budget, v.period), t.c, t.deadline, cap) is None:
                return False
    return True


def interrupts_serviceable(vcpus, interrupts, cap: int = DEFAULT_ITERATION_CAP) -> bool:
    """Every wired flow (virtual interrupt with a physical source) is serviceable."""
    irqs = {i.id: i for i in interrupts}
    for virt in interrupts:
        if virt.kind != "virtual" or virt.source is None:
            continue
        ipi = irqs[virt.ipi] if virt.ipi else None
        if not flow_serviceable(irqs[virt.source], virt, ipi, vcpus, interrupts, cap=cap).serviceable:
            return False
    return True


# ---------------------------------------------------------------- budget scan


def common_budget_scan_intr(
    vcpus: Sequence[Vcpu],
    interrupts: Sequence[InterruptSource],
    step: int,
    cap: int = DEFAULT_ITERATION_CAP,
) -> int | None:
    """Largest common regular-VCPU budget ``T - m*step`` at which every VCPU passes.

    Pseudo-VCPUs keep their budgets. Candidates are evaluated together on
    a grid, which matches trying them one at a time from the top.
    """
    view = _View(vcpus, interrupts)
    regular = [v for v in vcpus if v.kind != "pseudo"]
    if not regular:
        return None
    period = regular[0].period
    if any(v.period != period for v in regular):
        raise ValueError("a common budget needs a common VCPU period")
    for p in vcpus:
        if p.kind == "pseudo" and fixed_point(_vcpu_step(p, view), p.budget, p.period, cap) is None:
            return None
    budgets = np.arange(period, 0, -step, dtype=np.int64)
    ok = np.ones(budgets.shape, dtype=bool)
    for v in regular:
        ok &= _pass_grid(v, view, budgets, cap)
    hits = np.flatnonzero(ok)
    return int(budgets[hits[0]]) if hits.size else None


def _pass_grid(v: Vcpu, view: _View, budgets: np.ndarray, cap: int) -> np.ndarray:
    phys = _phys_terms(view, v.pcpu)
    higher = [h for h in view.pcpu_peers(v) if h.priority > v.priority]
    fixed = [(h.period, h.jitter, h.budget) for h in higher if h.kind == "pseudo"]
    shared = [(h.period, h.policy == "deferrable") for h in higher if h.kind != "pseudo"]

    def step(w: np.ndarray) -> np.ndarray:
        total = budgets
        for t, c in phys:
            total = total + ceil_div_grid(w, t) * c
        for t, j, c in fixed:
            total = total + ceil_div_grid(w + j, t) * c
        for t, deferrable in shared:
            jitter = (t - budgets) if deferrable else 0
            total = total + ceil_div_grid(w + jitter, t) * budgets
        return total

    return fixed_point_grid(step, budgets, v.period, cap) >= 0


@dataclass
class IntrOutcome:
    budget: int | None
    schedulable: bool
    serviceable: bool


def evaluate_intr(
    vcpus: Sequence[Vcpu],
    interrupts: Sequence[InterruptSource],
    policy: str,
    vint: bool,
    step: int,
    pseudo_ratio: int = 1,
    cap: int = DEFAULT_ITERATION_CAP,
) -> IntrOutcome:
    """Apply a scheme (server policy, vINT on or off), size the budgets and run both checks."""
    vcpus = [replace(v, policy=policy) for v in vcpus]
    if vint:
        vcpus, interrupts = attach_pseudo_vcpus(vcpus, interrupts, policy, pseudo_ratio)
    budget = common_budget_scan_intr(vcpus, interrupts, step, cap)
    if budget is None:
        return IntrOutcome(None, False, False)
    vcpus = [v if v.kind == "pseudo" else replace(v, budget=budget) for v in vcpus]
    return IntrOutcome(
        budget,
        tasks_schedulable_intr(vcpus, interrupts, cap),
        interrupts_serviceable(vcpus, interrupts, cap),
    )
