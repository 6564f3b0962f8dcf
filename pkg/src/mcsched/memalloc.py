"""Memory-interference-aware task allocation and bin-packing baselines."""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from fractions import Fraction
from typing import Sequence

from .memory import (
    DramLatencyTerms,
    MemorySystem,
    _CoreView,
    _wcrt_memory_on,
    request_driven_delay,
)
from .model import DEFAULT_ITERATION_CAP, MAX_DURATION, AnalysisError, Task, _id_key, by_priority

DEFAULT_STEP_CAP = 10**5


class InterferenceGraph:
    """Complete weighted graph over task ids; weights are utilization penalties."""

    def __init__(self, weights: dict[frozenset, Fraction] | None = None):
        self._w: dict[frozenset, Fraction] = dict(weights or {})

    def weight(self, a: str, b: str) -> Fraction:
        if a == b:
            return Fraction(0)
        return self._w.get(frozenset((a, b)), Fraction(0))

    def set(self, a: str, b: str, w: Fraction) -> None:
        self._w[frozenset((a, b))] = w

    def total(self, task_id: str, others) -> Fraction:
        return sum((self.weight(task_id, o.id) for o in others), Fraction(0))

    def __len__(self) -> int:
        return len(self._w)


def bundle_utilization(tasks) -> Fraction:
    return sum((t.utilization() for t in tasks), Fraction(0))


def build_interference_graph(
    tasks: Sequence[Task], terms: DramLatencyTerms, cap: int = DEFAULT_ITERATION_CAP
) -> InterferenceGraph:
    """Weight of a pair = extra utilization each suffers when alone on two cores sharing one bank."""
    g = InterferenceGraph()
    shared = frozenset({1})
    for a_idx, a in enumerate(tasks):
        for b in tasks[a_idx + 1:]:
            # priorities are irrelevant with one task per core
            ta, tb = _unbounded(a), _unbounded(b)
            system = MemorySystem.of([[ta], [tb]], [shared, shared])
            wa = _wcrt_memory_on(ta, 0, system.cores[0], _CoreView(0, system, terms), cap)
            wb = _wcrt_memory_on(tb, 1, system.cores[1], _CoreView(1, system, terms), cap)
            g.set(a.id, b.id, Fraction(wa - a.c, a.period) + Fraction(wb - b.c, b.period))
    return g


def _unbounded(t: Task) -> Task:
    return replace(t, deadline=MAX_DURATION)


# ---------------------------------------------------------------- core state


@dataclass
class MemAllocation:
    schedulable: bool
    cores: list[list[Task]] = field(default_factory=list)
    banks: list[frozenset] = field(default_factory=list)

    def system(self) -> MemorySystem:
        return MemorySystem.of(self.cores, self.banks)

    def task_core(self) -> dict[str, int]:
        return {t.id: q for q, core in enumerate(self.cores) for t in core}


def core_ok(p: int, cores: Sequence[Sequence[Task]], banks: Sequence[frozenset], terms, cap=DEFAULT_ITERATION_CAP) -> bool:
    """Every task on core ``p`` passes the memory-aware test under the current system."""
    core = cores[p]
    if not core:
        return True
    system = MemorySystem.of(cores, banks)
    view = _CoreView(p, system, terms)
    return all(_wcrt_memory_on(t, p, system.cores[p], view, cap) is not None for t in by_priority(core))


def all_cores_ok(cores, banks, terms, cap=DEFAULT_ITERATION_CAP) -> bool:
    return all(core_ok(p, cores, banks, terms, cap) for p in range(len(cores)))


def _core_util(core) -> Fraction:
    return bundle_utilization(core)


# ---------------------------------------------------------------- MIAA pieces


def least_interfering_bank(
    n_banks: int,
    cores: Sequence[Sequence[Task]],
    banks: Sequence[frozenset],
    graph: InterferenceGraph,
    pending: Sequence[Task],
) -> int:
    """Bank for a newly opened core: an unused one if any, else the bank of the least-coupled core."""
    if len(cores) < n_banks:
        used = set().union(*banks) if banks else set()
        return next(b for b in range(1, n_banks + 1) if b not in used)
    best, best_w = 0, None
    for p, core in enumerate(cores):
        w = sum((graph.total(t.id, pending) for t in core), Fraction(0))
        if best_w is None or best_w > w:
            best, best_w = p, w
    return min(banks[best])


def best_fit_mem(bundle, cores: list[list[Task]], banks, terms, cap=DEFAULT_ITERATION_CAP) -> int | None:
    """First core, fullest first, that stays schedulable with ``bundle`` added (cores left unchanged)."""
    order = sorted(range(len(cores)), key=lambda p: -_core_util(cores[p]))
    for p in order:
        trial = list(cores)
        trial[p] = [*cores[p], *bundle]
        if core_ok(p, trial, banks, terms, cap):
            return p
    return None


def remove_excess(p: int, cores: list[list[Task]], banks, graph: InterferenceGraph, terms, cap=DEFAULT_ITERATION_CAP) -> list[Task]:
    """Strip the least-coupled tasks off core ``p`` until it is schedulable; mutates ``cores``."""
    removed: list[Task] = []
    while not core_ok(p, cores, banks, terms, cap):
        core = cores[p]
        # equal weights fall back to the natural task-id order
        victim = min(core, key=lambda t: (graph.total(t.id, [o for o in core if o.id != t.id]), _id_key(t.id)))
        cores[p] = [t for t in core if t.id != victim.id]
        removed.append(victim)
    return removed


def extract_min_cut(bundle: Sequence[Task], max_util, graph: InterferenceGraph) -> tuple[list[Task], list[Task]]:
    """Split a bundle, pulling the most strongly coupled tasks next to the heaviest one."""
    if len(bundle) < 2:
        raise ValueError("need at least two tasks to split a bundle")
    seed = max(bundle, key=lambda t: t.utilization())
    first = [seed]
    rest = [t for t in bundle if t.id != seed.id]
    while len(rest) > 1:
        pick, best = None, Fraction(-1)
        for t in rest:
            w = graph.total(t.id, first)
            if best < w:
                pick, best = t, w
        if bundle_utilization([*first, pick]) <= max_util:
            first.append(pick)
            rest = [t for t in rest if t.id != pick.id]
        else:
            break
    return first, rest


def miaa(
    tasks: Sequence[Task],
    n_cores: int,
    n_banks: int,
    terms: DramLatencyTerms,
    cap: int = DEFAULT_ITERATION_CAP,
    step_cap: int = DEFAULT_STEP_CAP,
    graph: InterferenceGraph | None = None,
) -> MemAllocation:
    graph = graph if graph is not None else build_interference_graph(tasks, terms, cap)
    cores: list[list[Task]] = []
    banks: list[frozenset] = []
    banks.append(frozenset({least_interfering_bank(n_banks, cores, banks, graph, tasks)}))
    cores.append([])
    bundles: list[list[Task]] = [list(tasks)] if tasks else []
    steps = 0

    while bundles:
        rest: list[list[Task]] = []
        for bundle in sorted(bundles, key=lambda b: -bundle_utilization(b)):
            steps += 1
            if steps > step_cap:
                raise AnalysisError(f"allocation made no progress after {step_cap} steps")
            bundles.remove(bundle)
            p = best_fit_mem(bundle, cores, banks, terms, cap)
            if p is None:
                rest.append(bundle)
                continue
            cores[p] = [*cores[p], *bundle]
            for q in range(len(cores)):
                if q != p and not core_ok(q, cores, banks, terms, cap):
                    bundles.append(remove_excess(q, cores, banks, graph, terms, cap))
        if not rest:
            continue

        singletons = True
        for bundle in rest:
            if len(bundle) > 1:
                singletons = False
                emptiest = min(_core_util(c) for c in cores)
                bundles.extend(extract_min_cut(bundle, 1 - emptiest, graph))
            else:
                bundles.append(bundle)
        if singletons:
            if len(cores) == n_cores:
                return MemAllocation(False, cores, banks)
            merged = [t for b in bundles for t in b]
            banks.append(frozenset({least_interfering_bank(n_banks, cores, banks, graph, merged)}))
            cores.append([])
            bundles = [merged]
    return MemAllocation(True, cores, banks)


# ---------------------------------------------------------------- baselines


BASELINES = ("BFDnB", "BFDwB", "FFDnB", "FFDwB", "IA3nB", "IA3wB")


def baseline_banks(n_cores: int, n_banks: int, partitioned: bool) -> list[frozenset]:
    if partitioned:
        return [frozenset({q % n_banks + 1}) for q in range(n_cores)]
    every = frozenset(range(1, n_banks + 1))
    return [every] * n_cores


def baseline_alloc(
    scheme: str,
    tasks: Sequence[Task],
    n_cores: int,
    n_banks: int,
    terms: DramLatencyTerms,
    cap: int = DEFAULT_ITERATION_CAP,
) -> MemAllocation:
    """Bin-packing allocation where a task fits a core if that core passes the memory-aware test."""
    if scheme not in BASELINES:
        raise ValueError(f"unknown scheme {scheme!r}")
    kind, partitioned = scheme[:3], scheme.endswith("wB")
    banks = baseline_banks(n_cores, n_banks, partitioned)
    if kind == "IA3":
        rd = request_driven_delay(0, banks, terms).total
        key = lambda t: Fraction(t.c + rd * t.dram_requests, t.period)  # noqa: E731
    else:
        key = lambda t: t.utilization()  # noqa: E731
    ordered = sorted(tasks, key=lambda t: (-key(t), _id_key(t.id)))

    cores: list[list[Task]] = [[] for _ in range(n_cores)]
    for t in ordered:
        fits = []
        for p in range(n_cores):
            trial = list(cores)
            trial[p] = [*cores[p], t]
            # new traffic can break other cores too, so every core is rechecked
            if all_cores_ok(trial, banks, terms, cap):
                fits.append(p)
                if kind != "BFD":
                    break
        if not fits:
            return MemAllocation(False, cores, banks)
        # best fit keeps the least spare utilization; ties go to the lower index
        p = max(fits, key=lambda q: (_core_util(cores[q]), -q)) if kind == "BFD" else fits[0]
        cores[p].append(t)
    return MemAllocation(all_cores_ok(cores, banks, terms, cap), cores, banks)
