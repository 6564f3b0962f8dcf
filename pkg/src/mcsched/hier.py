"""Hierarchical (VCPU-level) scheduling analysis and cache-aware VM design."""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from typing import Sequence

from .cache import Alloc, _gamma, circular_layout, lowest, wcet_under
from .model import (
    DEFAULT_ITERATION_CAP,
    US,
    AnalysisError,
    Task,
    Vcpu,
    _id_key,
    by_priority,
    ceil_div,
    fixed_point,
)

INF = float("inf")


# ---------------------------------------------------------------- response times


def vcpu_wcrt(v: Vcpu, pcpu_vcpus: Sequence[Vcpu], cap: int = DEFAULT_ITERATION_CAP) -> int | None:
    """Response time of VCPU ``v`` among the VCPUs sharing its PCPU; ``None`` if it exceeds T^v."""
    hp = [(h.period, h.budget, h.jitter) for h in pcpu_vcpus if h.id != v.id and h.priority > v.priority]

    def step(w: int) -> int:
        return v.budget + sum(ceil_div(w + j, t) * c for t, c, j in hp)

    return fixed_point(step, v.budget, v.period, cap)


def _hier_step(c_j: int, hp, budget: int, period: int):
    """hp holds (T_h, C_h + gamma_{h,j}); every task inherits the VCPU's jitter."""
    gap = period - budget

    def step(w: int) -> int:
        total = c_j
        for t_h, c_h in hp:
            total += ceil_div(w + gap, t_h) * c_h
        if gap:
            total += ceil_div(w + budget, period) * gap
        return total
    return step


def _hier_parts(task: Task, tasks: Sequence[Task], alloc: Alloc | None, delta: int):
    if alloc:
        c_j = wcet_under(task, alloc)
        hp = [(h.period, wcet_under(h, alloc) + _gamma(h, task, tasks, alloc, delta))
              for h in tasks if h.priority > task.priority]
    else:
        c_j = task.c
        hp = [(h.period, h.c) for h in tasks if h.priority > task.priority]
    return c_j, hp


def hier_demand(w: int, task: Task, tasks, budget: int, period: int, alloc=None, delta: int = 0) -> int:
    c_j, hp = _hier_parts(task, tasks, alloc, delta)
    return _hier_step(c_j, hp, budget, period)(w)


def task_wcrt_hier(
    task: Task,
    tasks: Sequence[Task],
    budget: int,
    period: int,
    alloc: Alloc | None = None,
    delta: int = 0,
    cap: int = DEFAULT_ITERATION_CAP,
) -> int | None:
    """Response time of ``task`` on a VCPU with the given budget and period, CRPD included."""
    c_j, hp = _hier_parts(task, tasks, alloc, delta)
    return fixed_point(_hier_step(c_j, hp, budget, period), c_j, task.deadline, cap)


def vcpu_tasks_schedulable(tasks, budget, period, alloc=None, delta=0, cap=DEFAULT_ITERATION_CAP) -> bool:
    return all(task_wcrt_hier(t, tasks, budget, period, alloc, delta, cap) is not None for t in by_priority(tasks))


# ---------------------------------------------------------------- cache to tasks


def vcpu_utilization(tasks: Sequence[Task], alloc: Alloc, delta: int) -> Fraction:
    """Sum of (C_i + gamma_{i,n}) / T_i with n the lowest-priority task."""
    if not tasks:
        return Fraction(0)
    n = lowest(tasks)
    return sum((Fraction(wcet_under(t, alloc) + _gamma(t, n, tasks, alloc, delta), t.period) for t in tasks), Fraction(0))


@dataclass
class TaskCacheAlloc:
    utilization: Fraction | float
    alloc: dict[str, frozenset] | None


def cache_to_task_alloc_detail(
    tasks: Sequence[Task],
    n_cache: int,
    delta: int,
    budget: int | None = None,
    period: int | None = None,
    cap: int = DEFAULT_ITERATION_CAP,
) -> TaskCacheAlloc:
    if n_cache <= 0:
        return TaskCacheAlloc(INF, None)
    ordered = by_priority(tasks)
    if not ordered:
        return TaskCacheAlloc(Fraction(0), {})
    low = ordered[-1].id
    sizes = []
    for t in ordered:
        # everyone else is assumed to hold every partition
        per_part = 0 if t.id == low else delta
        sizes.append(min(range(1, n_cache + 1), key=lambda k: (Fraction(t.wcet_for(k) + k * per_part, t.period), k)))
    alloc = {t.id: s for t, s in zip(ordered, circular_layout(sizes, n_cache))}
    if budget is None:
        budget, period = 1, 1  # full budget, no supply gap
    if not vcpu_tasks_schedulable(ordered, budget, period, alloc, delta, cap):
        return TaskCacheAlloc(INF, alloc)
    return TaskCacheAlloc(vcpu_utilization(ordered, alloc, delta), alloc)


def cache_to_task_alloc(tasks, n_cache, delta, budget=None, period=None, cap=DEFAULT_ITERATION_CAP):
    """Heuristic partition assignment for one VCPU; returns its utilization or ``inf``.

    Without a budget the VCPU is assumed to own its PCPU.
    """
    return cache_to_task_alloc_detail(tasks, n_cache, delta, budget, period, cap).utilization


# ---------------------------------------------------------------- bundles


def single_partition_utilization(tasks) -> Fraction:
    return sum((Fraction(t.wcet_for(1), t.period) for t in tasks), Fraction(0))


def cache_sensitivity(t: Task, n_cache: int) -> Fraction:
    return Fraction(t.wcet_for(1) - t.wcet_for(n_cache), t.period)


def average_utilization(tasks, n_cache: int) -> Fraction:
    return sum(
        (Fraction(t.wcet_for(k), t.period) for t in tasks for k in range(1, n_cache + 1)), Fraction(0)
    ) / n_cache


def break_bundle(bundle: Sequence[Task], size, n_cache: int) -> tuple[list[Task], list[Task]]:
    """Peel off the least cache-sensitive tasks until the rest fits ``size``.

    At least one task is always peeled off, even when the bundle already fits.
    """
    first = list(bundle)
    second: list[Task] = []
    for t in sorted(bundle, key=lambda t: (cache_sensitivity(t, n_cache), _id_key(t.id))):
        first.remove(t)
        second.append(t)
        if single_partition_utilization(first) <= size:
            break
    return first, second


@dataclass
class VcpuSlot:
    tasks: list[Task] = field(default_factory=list)
    partitions: int = 0


def _slot_util(slot: VcpuSlot, delta: int) -> Fraction:
    if not slot.tasks:
        return Fraction(0)
    u = cache_to_task_alloc(slot.tasks, slot.partitions, delta)
    return u if u != INF else single_partition_utilization(slot.tasks)


def best_fit_with_cache(
    bundle: Sequence[Task], slots: Sequence[VcpuSlot], n_rem: int, delta: int
) -> tuple[int, int] | None:
    """(VCPU index, extra partitions) for the smallest extra count that makes ``bundle`` fit."""
    order = sorted(range(len(slots)), key=lambda i: (-_slot_util(slots[i], delta), i))
    for k in range(n_rem + 1):
        for i in order:
            if cache_to_task_alloc([*slots[i].tasks, *bundle], slots[i].partitions + k, delta) <= 1:
                return i, k
    return None


# ---------------------------------------------------------------- VM design


def budget_search(
    tasks: Sequence[Task],
    alloc: Alloc | None,
    period: int,
    delta: int,
    step: int = US,
    cap: int = DEFAULT_ITERATION_CAP,
) -> int | None:
    """Smallest budget (a multiple of ``step``, or the full period) that schedules ``tasks`` under ``alloc``."""
    if not tasks:
        return 0
    ok = lambda b: vcpu_tasks_schedulable(tasks, b, period, alloc, delta, cap)  # noqa: E731
    if not ok(period):
        return None
    lo, hi = 0, ceil_div(period, step)  # candidates lo*step .. hi*step, the last clamped to period
    while lo < hi:
        mid = (lo + hi) // 2
        if ok(min(mid * step, period)):
            hi = mid
        else:
            lo = mid + 1
    return min(lo * step, period)


def vcpu_budget_search(
    tasks: Sequence[Task],
    k: int,
    period: int,
    delta: int,
    step: int = US,
    cap: int = DEFAULT_ITERATION_CAP,
) -> int | None:
    """Smallest budget that schedules every task with ``k`` partitions laid out heuristically."""
    if not tasks:
        return 0
    alloc = cache_to_task_alloc_detail(tasks, k, delta, cap=cap).alloc
    if alloc is None:
        return None
    return budget_search(tasks, alloc, period, delta, step, cap)


@dataclass
class VmDesign:
    success: bool
    vcpu_tasks: list[list[Task]]
    partitions: list[int]
    budgets: list[tuple[int | None, ...]]  # budgets[i][k-1] = C^v_i(k), None when invalid
    period: int


def cavm(
    tasks: Sequence[Task],
    n_vcpu: int,
    n_cache: int,
    period: int,
    delta: int,
    step: int = US,
    cap: int = DEFAULT_ITERATION_CAP,
    step_cap: int = 10**5,
) -> VmDesign:
    """Cache-aware VM design: bundle tasks onto VCPUs, then derive budget curves."""
    slots = [VcpuSlot() for _ in range(n_vcpu)]
    n_rem = n_cache

    bundles: list[list[Task]] = []
    current = list(tasks)
    while single_partition_utilization(current) > 1:
        first, current = break_bundle(current, 1, n_cache)
        bundles.append(first)
    bundles.append(current)
    bundles = [b for b in bundles if b]

    steps = 0
    while bundles:
        rest = []
        for b in sorted(bundles, key=lambda b: -average_utilization(b, n_cache)):
            steps += 1
            if steps > step_cap:
                raise AnalysisError(f"VM design made no progress after {step_cap} steps")
            fit = best_fit_with_cache(b, slots, n_rem, delta)
            if fit is None:
                rest.append(b)
                continue
            i, k = fit
            slots[i].tasks.extend(b)
            slots[i].partitions += k
            n_rem -= k
        if not rest:
            break
        bundles, singletons = [], True
        for b in rest:
            if len(b) > 1:
                singletons = False
                size = 1 - min(_slot_util(s, delta) for s in slots)
                bundles.extend(part for part in break_bundle(b, size, n_cache) if part)
            else:
                bundles.append(b)
        if singletons:
            return VmDesign(False, [s.tasks for s in slots], [s.partitions for s in slots], [], period)

    budgets = []
    for s in slots:
        curve: list[int | None] = []
        prev = None
        for k in range(1, n_cache + 1):
            c = None
            if cache_to_task_alloc(s.tasks, k, delta, cap=cap) <= 1:
                c = vcpu_budget_search(s.tasks, k, period, delta, step, cap)
            if prev is not None and (c is None or prev < c):
                c = prev
            curve.append(c)
            prev = c
        budgets.append(tuple(curve))
    return VmDesign(True, [s.tasks for s in slots], [s.partitions for s in slots], budgets, period)


# ---------------------------------------------------------------- cache to VMs


@dataclass
class VmCacheAlloc:
    partitions: list[int]
    utilization: Fraction
    table: dict[int, Fraction]


def _min_valid(curve: Sequence[int | None]) -> int | None:
    for k, c in enumerate(curve, start=1):
        if c is not None:
            return k
    return None


def cache_to_vm_alloc(
    curves: Sequence[Sequence[int | None]], periods: Sequence[int], n_cache: int
) -> VmCacheAlloc | None:
    """Partition counts per VCPU minimizing total utilization; ``None`` when too few partitions.

    ``curves[i][k-1]`` is VCPU i's budget with k partitions (``None`` if invalid);
    curves must be non-increasing once valid.
    """
    xs = [_min_valid(c) for c in curves]
    if any(x is None for x in xs):
        return None
    z = sum(xs)
    if n_cache < z:
        return None

    def cost(i: int, k: int) -> Fraction:
        return Fraction(curves[i][min(k, len(curves[i])) - 1], periods[i])

    rho = {z: list(xs)}
    util = {z: sum((cost(i, x) for i, x in enumerate(xs)), Fraction(0))}
    for k in range(z + 1, n_cache + 1):
        best_u, best_rho = None, None
        for kp in range(z, k):
            extra = k - kp
            gains = [cost(i, r) - cost(i, r + extra) for i, r in enumerate(rho[kp])]
            g = max(gains)
            i = gains.index(g)
            u = util[kp] - g
            if best_u is None or u < best_u:
                best_u = u
                best_rho = list(rho[kp])
                best_rho[i] += extra
        util[k], rho[k] = best_u, best_rho
    return VmCacheAlloc(rho[n_cache], util[n_cache], util)


# ---------------------------------------------------------------- comparators

HEURISTICS = ("BFD+CCP", "WFD+CCP", "FFD+CCP", "BFD+CCS", "WFD+CCS", "FFD+CCS")


def even_partitions(k: int, n: int) -> list[int]:
    """Split ``k`` partitions over ``n`` VCPUs so that counts differ by at most one."""
    return [k // n + (i < k % n) for i in range(n)]


def shared_alloc(tasks: Sequence[Task], k: int) -> dict[str, frozenset] | None:
    """Every task uses all ``k`` partitions of its VCPU."""
    if k < 1:
        return None
    every = frozenset(range(1, k + 1))
    return {t.id: every for t in tasks}


def private_alloc(tasks: Sequence[Task], k: int) -> dict[str, frozenset] | None:
    """Private partitions in proportion to memory size, at least one each (largest remainder)."""
    n = len(tasks)
    if n == 0:
        return {}
    if k < n:
        return None
    spare = k - n
    weights = [max(t.mem_mb, 0) for t in tasks]
    total = sum(weights)
    if total == 0:
        weights, total = [1] * n, n
    shares = [Fraction(spare * w, total) for w in weights]
    sizes = [1 + int(s) for s in shares]
    left = k - sum(sizes)
    for i in sorted(range(n), key=lambda i: (-(shares[i] - int(shares[i])), i))[:left]:
        sizes[i] += 1
    return {t.id: parts for t, parts in zip(tasks, circular_layout(sizes, k))}


def _policy_alloc(policy: str, tasks, k):
    return shared_alloc(tasks, k) if policy == "CCS" else private_alloc(tasks, k)


def heuristic_vm_utilization(
    vms: Sequence[Sequence[Task]],
    vcpus_per_vm: int,
    k_total: int,
    period: int,
    delta: int,
    scheme: str,
    step: int = US,
    cap: int = DEFAULT_ITERATION_CAP,
) -> Fraction | None:
    """Total VM utilization from bin-packing tasks onto VCPUs with a fixed cache policy.

    ``k_total`` partitions are spread evenly over all VCPUs. A task fits a
    VCPU if the VCPU stays schedulable at full budget; budgets then come
    from :func:`budget_search`. ``None`` when some task cannot be placed.
    """
    if scheme not in HEURISTICS:
        raise ValueError(f"unknown scheme {scheme!r}")
    fit, policy = scheme.split("+")
    counts = even_partitions(k_total, len(vms) * vcpus_per_vm)
    per_vcpu = max(k_total // (len(vms) * vcpus_per_vm), 1)
    total = Fraction(0)
    for m, tasks in enumerate(vms):
        parts = counts[m * vcpus_per_vm:(m + 1) * vcpus_per_vm]
        bins: list[list[Task]] = [[] for _ in parts]
        for t in sorted(tasks, key=lambda t: (-t.utilization(per_vcpu), _id_key(t.id))):
            best, best_u = None, None
            for i, k in enumerate(parts):
                trial = [*bins[i], t]
                alloc = _policy_alloc(policy, trial, k)
                if alloc is None or not vcpu_tasks_schedulable(trial, 1, 1, alloc, delta, cap):
                    continue
                u = vcpu_utilization(trial, alloc, delta)
                if fit == "FFD":
                    best = i
                    break
                if best_u is None or (u > best_u if fit == "BFD" else u < best_u):
                    best, best_u = i, u
            if best is None:
                return None
            bins[best].append(t)
        for tasks_v, k in zip(bins, parts):
            if not tasks_v:
                continue
            b = budget_search(tasks_v, _policy_alloc(policy, tasks_v, k), period, delta, step, cap)
            if b is None:
                return None
            total += Fraction(b, period)
    return total
