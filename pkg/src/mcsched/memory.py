"""DRAM interference bounds and memory-aware response-time tests.

Two bounds are combined. The request-driven bound charges a worst-case
delay to every request the task (and its higher-priority preempters)
issue. The job-driven bound counts every request other cores can issue
in the window. Each test takes the smaller of the two.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

from .cache import Alloc, _gamma, lowest, wcet_under
from .model import DEFAULT_ITERATION_CAP, DramTiming, Task, by_priority, ceil_div, fixed_point


@dataclass(frozen=True)
class DramLatencyTerms:
    t_ck: int
    l_pre: int
    l_act: int
    l_rw: int
    l_hit: int
    l_conf: int
    n_reorder: int
    wl: int
    bl: int
    cl: int
    t_wtr: int
    t_wr: int
    t_rp: int
    t_rcd: int

    def conhit(self, m: int) -> int:
        """Service time of ``m`` back-to-back row hits alternating read and write."""
        cycles = -(-m // 2) * (self.wl + self.bl // 2 + self.t_wtr) + (m // 2) * self.cl + (self.t_wr - self.t_wtr)
        return cycles * self.t_ck

    @property
    def l_inter(self) -> int:
        """Per-request inter-bank delay from one earlier request (PRE + ACT + RD/WR)."""
        return self.l_pre + self.l_act + self.l_rw

    @property
    def reopen(self) -> int:
        return (self.t_rp + self.t_rcd) * self.t_ck


def dram_latency_terms(dram: DramTiming, n_cap: int | None = None) -> DramLatencyTerms:
    ck, bl2 = dram.t_ck, dram.bl // 2
    l_rw = max(
        dram.wl + bl2 + dram.t_wtr,
        dram.cl + bl2 + 2 - dram.wl,
        dram.wl + bl2 + dram.t_rtrs - dram.cl,
        dram.cl + bl2 + dram.t_rtrs - dram.wl,
        bl2 + dram.t_rtrs,
    ) * ck
    l_hit = max(dram.cl + bl2 + 2, dram.wl + bl2 + max(dram.t_wtr, dram.t_wr)) * ck
    row_hits = dram.n_cols // dram.bl
    return DramLatencyTerms(
        t_ck=ck,
        l_pre=ck,
        l_act=max(dram.t_rrd, dram.t_faw - 3 * dram.t_rrd) * ck,
        l_rw=l_rw,
        l_hit=l_hit,
        l_conf=(dram.t_rp + dram.t_rcd) * ck + l_hit,
        n_reorder=row_hits if n_cap is None else min(row_hits, n_cap),
        wl=dram.wl, bl=dram.bl, cl=dram.cl, t_wtr=dram.t_wtr, t_wr=dram.t_wr,
        t_rp=dram.t_rp, t_rcd=dram.t_rcd,
    )


@dataclass(frozen=True)
class RequestDelay:
    inter: int
    intra: int

    @property
    def total(self) -> int:
        return self.inter + self.intra


def _rd_inter(p: int, banks: Sequence[frozenset], terms: DramLatencyTerms) -> int:
    return sum(terms.l_inter for q in range(len(banks)) if q != p and not banks[q] & banks[p])


def request_driven_delay(p: int, banks: Sequence[frozenset], terms: DramLatencyTerms) -> RequestDelay:
    """Worst-case delay of one request from core ``p``; ``banks[q]`` is core q's bank set."""
    inter = _rd_inter(p, banks, terms)
    sharers = [q for q in range(len(banks)) if q != p and banks[q] & banks[p]]
    if not sharers:
        return RequestDelay(inter, 0)
    strangers = sum(1 for q in range(len(banks)) if q != p and not banks[q] & banks[p])
    reorder = terms.conhit(terms.n_reorder) + terms.n_reorder * strangers * terms.l_rw + terms.reopen
    intra = reorder + sum(terms.l_conf + _rd_inter(q, banks, terms) for q in sharers)
    return RequestDelay(inter, intra)


@dataclass(frozen=True)
class MemorySystem:
    """Per-core task lists and bank sets; index ``q`` names core q."""

    cores: tuple[tuple[Task, ...], ...]
    banks: tuple[frozenset, ...]

    @classmethod
    def of(cls, cores: Sequence[Sequence[Task]], banks: Sequence[frozenset]) -> "MemorySystem":
        return cls(tuple(tuple(c) for c in cores), tuple(frozenset(b) for b in banks))

    def core_of(self, task: Task) -> int:
        for q, core in enumerate(self.cores):
            if any(t.id == task.id for t in core):
                return q
        raise ValueError(f"task {task.id} is not allocated")


def _jd_coefficients(p: int, banks: Sequence[frozenset], terms: DramLatencyTerms) -> list[int]:
    """JD_p(t) is linear in each A_r(t); return the weight of every core r."""
    n = len(banks)
    share = [[q != r and bool(banks[q] & banks[r]) for r in range(n)] for q in range(n)]
    coef = [0] * n
    for r in range(n):
        if r == p:
            continue
        if share[p][r]:
            coef[r] += terms.l_conf
        else:
            coef[r] += terms.l_inter
        for q in range(n):
            # the inter-bank delay suffered by each sharer q of p
            if q != p and share[p][q] and r != q and not share[q][r]:
                coef[r] += terms.l_inter
    return coef


def _requests(task: Task, extra: Mapping[str, int] | None) -> int:
    return task.dram_requests + (extra.get(task.id, 0) if extra else 0)


def _active(p: int, system: MemorySystem) -> tuple[list[int], int]:
    """Cores that can issue requests (those with tasks, plus ``p``) and p's index among them."""
    active = [q for q, core in enumerate(system.cores) if core or q == p]
    return active, active.index(p)


def job_driven_delay(
    p: int,
    t: int,
    system: MemorySystem,
    terms: DramLatencyTerms,
    extra_requests: Mapping[str, int] | None = None,
) -> int:
    """Total delay that requests of other cores can impose on core ``p`` within ``t``."""
    active, pa = _active(p, system)
    coef = _jd_coefficients(pa, [system.banks[q] for q in active], terms)
    total = 0
    for r, q in enumerate(active):
        if coef[r]:
            total += coef[r] * sum((ceil_div(t, x.period) + 1) * _requests(x, extra_requests) for x in system.cores[q])
    return total


class _CoreView:
    """Everything the memory recurrence of one core needs, computed once.

    Cores without tasks issue no requests, so they are left out of both bounds.
    """

    def __init__(self, p: int, system: MemorySystem, terms: DramLatencyTerms, extra_requests=None):
        active, pa = _active(p, system)
        banks = [system.banks[q] for q in active]
        self.rd = request_driven_delay(pa, banks, terms).total
        coef = _jd_coefficients(pa, banks, terms)
        weighted = (
            (x.period, coef[r] * _requests(x, extra_requests))
            for r, q in enumerate(active) if coef[r]
            for x in system.cores[q]
        )
        self.jd_terms = [(per, w) for per, w in weighted if w]

    def jd(self, t: int) -> int:
        return sum((ceil_div(t, per) + 1) * w for per, w in self.jd_terms)


def _memory_step(c_i: int, h_i: int, hp, view: _CoreView, gamma_terms=None):
    """hp: (T_h, C_h, H_h); gamma_terms: (T_h, gamma_{h,i}, gamma*_{h,i})."""
    rd = view.rd
    jd_terms = view.jd_terms

    def step(w: int) -> int:
        demand = c_i
        reqs = h_i
        for t_h, c_h, h_h in hp:
            jobs = ceil_div(w, t_h)
            demand += jobs * c_h
            reqs += jobs * h_h
        if gamma_terms:
            for t_h, gam, gam_req in gamma_terms:
                jobs = ceil_div(w, t_h)
                demand += jobs * gam
                reqs += jobs * gam_req
        jd = 0
        for per, wt in jd_terms:
            jd += (ceil_div(w, per) + 1) * wt
        return demand + min(reqs * rd, jd)
    return step


def memory_demand(w: int, i: Task, system: MemorySystem, terms: DramLatencyTerms) -> int:
    p = system.core_of(i)
    view = _CoreView(p, system, terms)
    hp = [(h.period, h.c, h.dram_requests) for h in system.cores[p] if h.priority > i.priority]
    return _memory_step(i.c, i.dram_requests, hp, view)(w)


def wcrt_memory(
    i: Task,
    system: MemorySystem,
    terms: DramLatencyTerms,
    cap: int = DEFAULT_ITERATION_CAP,
) -> int | None:
    p = system.core_of(i)
    return _wcrt_memory_on(i, p, system.cores[p], _CoreView(p, system, terms), cap)


def _wcrt_memory_on(i: Task, p: int, core, view: _CoreView, cap: int) -> int | None:
    hp = [(h.period, h.c, h.dram_requests) for h in core if h.priority > i.priority]
    return fixed_point(_memory_step(i.c, i.dram_requests, hp, view), i.c, i.deadline, cap)


def core_schedulable_memory(
    p: int, system: MemorySystem, terms: DramLatencyTerms, cap: int = DEFAULT_ITERATION_CAP
) -> bool:
    core = system.cores[p]
    if not core:
        return True
    view = _CoreView(p, system, terms)
    return all(_wcrt_memory_on(t, p, core, view, cap) is not None for t in by_priority(core))


def system_schedulable_memory(system: MemorySystem, terms: DramLatencyTerms, cap: int = DEFAULT_ITERATION_CAP) -> bool:
    return all(core_schedulable_memory(p, system, terms, cap) for p in range(len(system.cores)))


# ---------------------------------------------------------------- cache + memory


def _reload_requests(system: MemorySystem, alloc: Alloc, per_reload: int) -> dict[str, int]:
    """gamma*_{i,n}: requests to reload partitions after preemption, per task."""
    out = {}
    for core in system.cores:
        if not core:
            continue
        n = lowest(core)
        for t in core:
            out[t.id] = _gamma(t, n, core, alloc, 1) * per_reload
    return out


def _combined_parts(i, system, alloc, terms, delta, per_reload):
    p = system.core_of(i)
    core = system.cores[p]
    view = _CoreView(p, system, terms, _reload_requests(system, alloc, per_reload))
    hp, gam = [], []
    for h in core:
        if h.priority > i.priority:
            hp.append((h.period, wcet_under(h, alloc), h.dram_requests))
            parts = _gamma(h, i, core, alloc, 1)
            gam.append((h.period, parts * delta, parts * per_reload))
    return wcet_under(i, alloc), hp, view, gam


def cache_memory_demand(w, i, system, alloc, terms, delta, per_reload) -> int:
    c_i, hp, view, gam = _combined_parts(i, system, alloc, terms, delta, per_reload)
    return _memory_step(c_i, i.dram_requests, hp, view, gam)(w)


def wcrt_cache_memory(
    i: Task,
    system: MemorySystem,
    alloc: Alloc,
    terms: DramLatencyTerms,
    delta: int,
    per_reload: int,
    cap: int = DEFAULT_ITERATION_CAP,
) -> int | None:
    """Memory-aware response time that also charges preemption reloads.

    Reload time is charged as CPU demand (``delta`` per partition) and the
    reload traffic (``per_reload`` requests per partition) feeds both
    interference bounds.
    """
    c_i, hp, view, gam = _combined_parts(i, system, alloc, terms, delta, per_reload)
    return fixed_point(_memory_step(c_i, i.dram_requests, hp, view, gam), c_i, i.deadline, cap)
