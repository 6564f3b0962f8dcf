"""Independent reference evaluators used to check the package.

These are written from the formulas directly, in the most naive style that
is still fast enough: exact fractions in nanoseconds, plain loops, brute-force
enumeration. They share no code with ``mcsched``.
"""

from __future__ import annotations

import itertools
from fractions import Fraction
from math import ceil

# ---------------------------------------------------------------- DRAM

DDR3_1333_CYCLES = dict(
    t_ck=Fraction(3, 2), t_rp=9, t_rcd=9, cl=9, wl=7, bl=8, t_wtr=5, t_wr=10,
    t_rrd=4, t_faw=20, t_ras=24, t_rc=33, t_rtp=5, t_rtrs=2, n_cols=1024,
)


def dram_terms_ns(d=DDR3_1333_CYCLES, n_cap=None) -> dict:
    """Latency terms in nanoseconds, substituted term by term."""
    ck = d["t_ck"]
    half = d["bl"] // 2
    pre = 1 * ck
    act = max(d["t_rrd"], d["t_faw"] - 3 * d["t_rrd"]) * ck
    rw = max(
        d["wl"] + half + d["t_wtr"],
        d["cl"] + half + 2 - d["wl"],
        d["wl"] + half + d["t_rtrs"] - d["cl"],
        d["cl"] + half + d["t_rtrs"] - d["wl"],
        half + d["t_rtrs"],
    ) * ck
    hit = max(d["cl"] + half + 2, d["wl"] + half + max(d["t_wtr"], d["t_wr"])) * ck
    conf = (d["t_rp"] + d["t_rcd"]) * ck + hit
    reorder = d["n_cols"] // d["bl"] if n_cap is None else min(d["n_cols"] // d["bl"], n_cap)

    def conhit(m):
        cycles = ceil(m / 2) * (d["wl"] + half + d["t_wtr"]) + (m // 2) * d["cl"] + (d["t_wr"] - d["t_wtr"])
        return cycles * ck

    return dict(pre=pre, act=act, rw=rw, hit=hit, conf=conf, n_reorder=reorder, conhit=conhit,
                reopen=(d["t_rp"] + d["t_rcd"]) * ck)


def rd_ns(p: int, banks: list[set], terms: dict) -> Fraction:
    """Per-request delay of core p (request-driven bound)."""
    others = [q for q in range(len(banks)) if q != p]
    apart = [q for q in others if not banks[q] & banks[p]]
    share = [q for q in others if banks[q] & banks[p]]
    inter_one = terms["pre"] + terms["act"] + terms["rw"]

    def inter(x):
        return sum(inter_one for q in range(len(banks)) if q != x and not banks[q] & banks[x])

    total = len(apart) * inter_one
    if share:
        n = terms["n_reorder"]
        total += terms["conhit"](n) + n * len(apart) * terms["rw"] + terms["reopen"]
        total += sum(terms["conf"] + inter(q) for q in share)
    return total


# ---------------------------------------------------------------- fixed points


def iterate(step, start, limit, cap=100_000):
    w = start
    for _ in range(cap):
        if w > limit:
            return None
        nxt = step(w)
        if nxt == w:
            return w
        w = nxt
    raise RuntimeError("no convergence")


def rta(c: int, hp: list[tuple[int, int]], limit: int):
    """Classic response time with (T, C) higher-priority pairs."""
    return iterate(lambda w: c + sum(ceil(Fraction(w, t)) * ch for t, ch in hp), c, limit)


# ---------------------------------------------------------------- cache


def layout(sizes, n):
    out, idx = [], 0
    for k in sizes:
        out.append({(idx + j) % n + 1 for j in range(k)})
        idx = (idx + k) % n
    return out


def cache_utilization(tasks, sets, delta):
    """tasks sorted high to low priority: (C curve, T, mem)."""
    n = len(tasks) - 1
    total = Fraction(0)
    for i, (curve, t, _) in enumerate(tasks):
        c = curve[min(len(sets[i]), len(curve)) - 1]
        others = set().union(*(sets[k] for k in range(len(tasks)) if k != i)) if len(tasks) > 1 else set()
        omega = len(sets[i] & others) * delta
        mid = set().union(*(sets[k] for k in range(i + 1, n + 1))) if i < n else set()
        gamma = len(sets[i] & mid) * delta if i < n else 0
        total += Fraction(c + omega + gamma, t)
    return total


def cache_wcrt(i, tasks, sets, delta):
    """Response time with warm-up and preemption delays (tasks sorted high to low)."""
    n = len(tasks) - 1

    def omega(j, lo):
        others = set().union(*(sets[k] for k in range(lo + 1) if k != j), set())
        return len(sets[j] & others) * delta

    def gamma(j, lo):
        mid = set().union(*(sets[k] for k in range(j + 1, lo + 1)), set())
        return len(sets[j] & mid) * delta

    def cw(j):
        curve = tasks[j][0]
        return curve[min(len(sets[j]), len(curve)) - 1]

    base = cw(i) + omega(i, n)

    def step(w):
        total = base
        for h in range(i):
            jobs = ceil(Fraction(w, tasks[h][1]))
            total += jobs * (cw(h) + gamma(h, i)) + omega(h, n) + (jobs - 1) * omega(h, i)
        return total

    return iterate(step, base, tasks[i][1])


def min_cache_util(tasks, n_prime, delta, partition_mb):
    """Lowest utilization over every count vector that is feasible, or None."""
    cands = []
    for sizes in itertools.product(range(1, n_prime + 1), repeat=len(tasks)):
        sets = layout(sizes, n_prime)
        cands.append((cache_utilization(tasks, sets, delta), sets))
    cands.sort(key=lambda c: c[0])
    for util, sets in cands:
        if util > 1:
            return None
        load = {}
        for (_, _, mem), s in zip(tasks, sets):
            for p in s:
                load[p] = load.get(p, 0) + Fraction(mem, len(s))
        if any(v > partition_mb for v in load.values()):
            continue
        if all(cache_wcrt(i, tasks, sets, delta) is not None for i in range(len(tasks))):
            return util
    return None


# ---------------------------------------------------------------- cache to VMs


def best_split(curves, periods, n_cache):
    """Minimum total utilization over every way to hand out n_cache partitions."""
    best = None
    for split in itertools.product(range(1, n_cache + 1), repeat=len(curves)):
        if sum(split) != n_cache:
            continue
        vals = [curves[i][min(k, len(curves[i])) - 1] for i, k in enumerate(split)]
        if any(v is None for v in vals):
            continue
        u = sum(Fraction(v, p) for v, p in zip(vals, periods))
        if best is None or u < best:
            best = u
    return best


# ---------------------------------------------------------------- budgets


def linear_budget(ok, period, step):
    """Smallest multiple of ``step`` (or the period) passing ``ok``, scanning up from zero."""
    b = 0
    while b < period:
        if ok(b):
            return b
        b += step
    return period if ok(period) else None


def top_budget(ok, period, step):
    """Largest ``period - m*step`` passing ``ok``, scanning down one step at a time."""
    b = period
    while b > 0:
        if ok(b):
            return b
        b -= step
    return None
