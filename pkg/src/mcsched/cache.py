"""Intra-core cache interference: warm-up delay, CRPD, and cache-aware allocation."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Mapping, NamedTuple, Sequence

from .model import DEFAULT_ITERATION_CAP, Platform, Task, by_priority, ceil_div, fixed_point

Alloc = Mapping[str, frozenset]
INF = math.inf


def _union(sets) -> frozenset:
    out: set = set()
    for s in sets:
        out |= s
    return frozenset(out)


def _require_on_core(core: Sequence[Task], *tasks: Task) -> None:
    ids = {t.id for t in core}
    for t in tasks:
        if t.id not in ids:
            raise ValueError(f"task {t.id} is not on this core")


def warmup_delay(j: Task, i: Task, core: Sequence[Task], alloc: Alloc, delta: int) -> int:
    """omega_{j,i}: partitions of j polluted by tasks at or above i's priority."""
    _require_on_core(core, j, i)
    others = _union(alloc[k.id] for k in core if k.id != j.id and k.priority >= i.priority)
    return len(alloc[j.id] & others) * delta


def crpd(j: Task, i: Task, core: Sequence[Task], alloc: Alloc, delta: int) -> int:
    """gamma_{j,i}: reload cost when j preempts tasks in the priority band [i, j)."""
    _require_on_core(core, j, i)
    if j.priority <= i.priority:
        raise ValueError("crpd needs a preempting task of strictly higher priority")
    return _gamma(j, i, core, alloc, delta)


def _gamma(j: Task, i: Task, core: Sequence[Task], alloc: Alloc, delta: int) -> int:
    band = _union(alloc[k.id] for k in core if i.priority <= k.priority < j.priority)
    return len(alloc[j.id] & band) * delta


def wcet_under(task: Task, alloc: Alloc) -> int:
    parts = alloc.get(task.id)
    return task.wcet_for(len(parts) if parts else None)


def lowest(core: Sequence[Task]) -> Task:
    return min(core, key=lambda t: t.priority)


def core_utilization(core: Sequence[Task], alloc: Alloc, delta: int) -> Fraction:
    """Utilization with warm-up and preemption reload costs charged per job."""
    if not core:
        return Fraction(0)
    n = lowest(core)
    total = Fraction(0)
    for t in core:
        cost = wcet_under(t, alloc) + warmup_delay(t, n, core, alloc, delta) + _gamma(t, n, core, alloc, delta)
        total += Fraction(cost, t.period)
    return total


class _CoreTerms:
    """Precomputed cache terms for every task on one core."""

    def __init__(self, core: Sequence[Task], alloc: Alloc, delta: int):
        self.core = list(core)
        self.n = lowest(core)
        self.wcet = {t.id: wcet_under(t, alloc) for t in core}
        self.omega_n = {t.id: warmup_delay(t, self.n, core, alloc, delta) for t in core}
        self.alloc = alloc
        self.delta = delta

    def higher(self, i: Task):
        """(T_h, C_h, omega_{h,n}, omega_{h,i}, gamma_{h,i}) for each h above i."""
        core, alloc, delta = self.core, self.alloc, self.delta
        return [
            (h.period, self.wcet[h.id], self.omega_n[h.id],
             warmup_delay(h, i, core, alloc, delta), _gamma(h, i, core, alloc, delta))
            for h in core if h.priority > i.priority
        ]


def cache_demand(w: int, i: Task, core: Sequence[Task], alloc: Alloc, delta: int) -> int:
    """Right-hand side of the cache-aware response-time recurrence at ``w``."""
    terms = _CoreTerms(core, alloc, delta)
    return _cache_step(terms.wcet[i.id] + terms.omega_n[i.id], terms.higher(i))(w)


def _cache_step(base: int, hp):
    def step(w: int) -> int:
        total = base
        for t_h, c_h, om_n, om_i, gam in hp:
            jobs = ceil_div(w, t_h)
            total += jobs * (c_h + gam) + om_n + (jobs - 1) * om_i
        return total
    return step


def wcrt_cache(
    i: Task,
    core: Sequence[Task],
    alloc: Alloc,
    delta: int,
    cap: int = DEFAULT_ITERATION_CAP,
) -> int | None:
    """Response time of ``i`` with warm-up and preemption delays; ``None`` if it misses D_i."""
    _require_on_core(core, i)
    terms = _CoreTerms(core, alloc, delta)
    base = terms.wcet[i.id] + terms.omega_n[i.id]
    return fixed_point(_cache_step(base, terms.higher(i)), base, i.deadline, cap)


def core_schedulable(core: Sequence[Task], alloc: Alloc, delta: int, cap: int = DEFAULT_ITERATION_CAP) -> bool:
    if not core:
        return True
    terms = _CoreTerms(core, alloc, delta)
    for i in by_priority(core):
        base = terms.wcet[i.id] + terms.omega_n[i.id]
        if fixed_point(_cache_step(base, terms.higher(i)), base, i.deadline, cap) is None:
            return False
    return True


def mem_copart_feasible(alloc: Alloc, tasks: Sequence[Task], platform: Platform) -> dict[int, bool]:
    """Per-partition check that co-located pages fit in one memory partition."""
    load: dict[int, Fraction] = {p: Fraction(0) for p in range(1, platform.n_cache + 1)}
    for t in tasks:
        parts = alloc[t.id]
        share = Fraction(t.mem_mb, len(parts))
        for p in parts:
            load[p] = load.get(p, Fraction(0)) + share
    size = platform.partition_mb
    return {p: v <= size for p, v in sorted(load.items())}


def circular_layout(sizes: Sequence[int], n: int) -> list[frozenset]:
    """Hand out ``sizes[i]`` consecutive partition indices per task, wrapping over 1..n."""
    idx = 1
    out = []
    for k in sizes:
        parts = set()
        for _ in range(k):
            parts.add(idx)
            idx = idx % n + 1
        out.append(frozenset(parts))
    return out


class CacheAlloc(NamedTuple):
    alloc: dict[str, frozenset] | None
    utilization: Fraction | float
    heuristic: bool = False


def _greedy_sizes(ordered: Sequence[Task], n: int, delta: int) -> list[int]:
    """Per-task argmin of C(k)+gamma, with gamma charged as if every other task held all partitions."""
    low = ordered[-1].id if ordered else None
    sizes = []
    for t in ordered:
        penalty = 0 if t.id == low else delta
        sizes.append(min(range(1, n + 1), key=lambda k: (t.wcet_for(k) + k * penalty, k)))
    return sizes


def min_cache_alloc(
    core: Sequence[Task],
    n_prime: int,
    platform: Platform,
    max_candidates: int = 10**5,
) -> CacheAlloc:
    """Feasible cache allocation of ``n_prime`` partitions with the lowest utilization.

    Candidates are per-task partition counts laid out circularly over the
    core's partitions; every count vector is tried when there are at most
    ``max_candidates`` of them, otherwise a single greedy vector is tried.
    """
    if n_prime <= 0:
        return CacheAlloc(None, INF)
    ordered = by_priority(core)
    if not ordered:
        return CacheAlloc({}, Fraction(0))
    delta = platform.constants.delta
    cap = platform.constants.iteration_cap
    heuristic = n_prime ** len(ordered) > max_candidates
    if heuristic:
        candidates = [_greedy_sizes(ordered, n_prime, delta)]
    else:
        candidates = itertools.product(range(1, n_prime + 1), repeat=len(ordered))

    best, best_util = None, Fraction(1)
    for sizes in candidates:
        layout = circular_layout(sizes, n_prime)
        alloc = {t.id: s for t, s in zip(ordered, layout)}
        util = core_utilization(ordered, alloc, delta)
        # cheap utilization filter first; the accepted set is unchanged
        if util > best_util:
            continue
        if not all(mem_copart_feasible(alloc, ordered, platform).values()):
            continue
        if not core_schedulable(ordered, alloc, delta, cap):
            continue
        best, best_util = alloc, util
    if best is None:
        return CacheAlloc(None, INF, heuristic)
    return CacheAlloc(best, best_util, heuristic)


def find_best_fit(
    task: Task,
    cores: Sequence[Sequence[Task]],
    cache_counts: Sequence[int],
    platform: Platform,
) -> int | None:
    """Core whose residual capacity after taking ``task`` is smallest (ties: later core)."""
    space, cid = Fraction(1), None
    for j, core in enumerate(cores):
        res = min_cache_alloc([*core, task], cache_counts[j], platform)
        if res.alloc is not None and space >= 1 - res.utilization:
            space, cid = 1 - res.utilization, j
    return cid


@dataclass
class CacheAwareAllocation:
    schedulable: bool
    cores: list[list[Task]]
    cache_counts: list[int]
    remaining: int


def average_utilization(task: Task, n_cache: int) -> Fraction:
    return sum((Fraction(task.wcet_for(k), task.period) for k in range(1, n_cache + 1)), Fraction(0)) / n_cache


def cache_aware_task_alloc(tasks: Sequence[Task], n_cores: int, platform: Platform) -> CacheAwareAllocation:
    """Best-fit decreasing allocation that grows a core's partition count only when needed."""
    n_cache = platform.n_cache
    ordered = sorted(tasks, key=lambda t: (-average_utilization(t, n_cache), t.id))
    cores: list[list[Task]] = [[] for _ in range(n_cores)]
    counts = [0] * n_cores
    remaining = n_cache
    ok = True
    for t in ordered:
        cid = find_best_fit(t, cores, counts, platform)
        if cid is not None:
            cores[cid].append(t)
            continue
        placed = False
        for k in range(1, remaining + 1):
            cid = find_best_fit(t, cores, [c + k for c in counts], platform)
            if cid is not None:
                cores[cid].append(t)
                counts[cid] += k
                remaining -= k
                placed = True
                break
        ok = ok and placed
    return CacheAwareAllocation(ok, cores, counts, remaining)
