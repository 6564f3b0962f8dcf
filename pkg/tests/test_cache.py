from fractions import Fraction

import pytest

from oracles import cache_wcrt, layout, min_cache_util
from mcsched.cache import (
    cache_aware_task_alloc,
    circular_layout,
    core_utilization,
    crpd,
    find_best_fit,
    mem_copart_feasible,
    min_cache_alloc,
    warmup_delay,
    wcrt_cache,
)
from mcsched.model import MS, US, AnalysisConstants, Platform, make_task, with_rms_priorities

DELTA = 45_300_000  # 45.3 us


def fig43():
    """Three tasks (C=2, T=12) with S_h={1,2}, S_m={1}, S_l={2}, delta=1."""
    h, m, l = (make_task(n, 2, 12, priority=p) for n, p in (("h", 3), ("m", 2), ("l", 1)))
    alloc = {"h": frozenset({1, 2}), "m": frozenset({1}), "l": frozenset({2})}
    return [h, m, l], alloc


def table43():
    tasks = with_rms_priorities([
        make_task("t1", 11_940 * US, 40 * MS),
        make_task("t2", 13_150 * US, 120 * MS),
        make_task("t3", 49_580 * US, 180 * MS),
        make_task("t4", 44_300 * US, 600 * MS),
    ])
    alloc = {"t1": frozenset(range(1, 9)), "t2": frozenset({1, 2, 3}),
             "t3": frozenset(range(1, 9)), "t4": frozenset(range(4, 9))}
    return tasks, alloc


def test_warmup_delay_set_formula():
    core, alloc = fig43()
    h, _, l = core
    assert warmup_delay(h, l, core, alloc, 1) == 2


def test_warmup_delay_disjoint_is_zero():
    core, _ = fig43()
    alloc = {"h": frozenset({1}), "m": frozenset({2}), "l": frozenset({3})}
    assert warmup_delay(core[0], core[2], core, alloc, 1) == 0


def test_warmup_delay_table_system():
    core, alloc = table43()
    assert warmup_delay(core[0], core[3], core, alloc, DELTA) == 362_400_000


def test_crpd_examples():
    core, alloc = fig43()
    assert crpd(core[0], core[1], core, alloc, 1) == 1
    t_core, t_alloc = table43()
    assert crpd(t_core[0], t_core[1], t_core, t_alloc, DELTA) == 135_900_000


def test_crpd_rejects_lower_preempter():
    core, alloc = fig43()
    with pytest.raises(ValueError):
        crpd(core[2], core[0], core, alloc, 1)


def test_different_cores_rejected():
    core, alloc = fig43()
    with pytest.raises(ValueError):
        warmup_delay(core[0], make_task("x", 1, 10), core, alloc, 1)


def test_core_utilization_fig43_is_one():
    core, alloc = fig43()
    assert core_utilization(core, alloc, 1) == 1


def test_core_utilization_trivial_cases():
    a = make_task("a", 3, 10, priority=2)
    b = make_task("b", 1, 20, priority=1)
    assert core_utilization([a], {"a": frozenset({1})}, 5) == Fraction(3, 10)
    assert core_utilization([a, b], {"a": frozenset({1}), "b": frozenset({2})}, 5) == Fraction(7, 20)
    assert core_utilization([], {}, 5) == 0


@pytest.mark.parametrize("tid, ms", [("t1", 12.30), ("t2", 25.72), ("t3", 101.36), ("t4", 273.78)])
def test_wcrt_table43(tid, ms):
    core, alloc = table43()
    task = next(t for t in core if t.id == tid)
    assert abs(wcrt_cache(task, core, alloc, DELTA) / MS - ms) <= 0.01


def test_wcrt_table43_matches_oracle():
    core, alloc = table43()
    rows = [(t.wcet, t.period, 0) for t in core]
    sets = [set(alloc[t.id]) for t in core]
    for i, t in enumerate(core):
        assert wcrt_cache(t, core, alloc, DELTA) == cache_wcrt(i, rows, sets, DELTA)


def test_wcrt_single_task_no_delta():
    t = make_task("a", 7, 100, priority=1)
    assert wcrt_cache(t, [t], {"a": frozenset({1})}, 0) == 7


def test_mem_copart_infeasible_share():
    pf = Platform(n_cache=32, mem_total=1024)
    t1 = make_task("t1", 1, 40, mem_mb=18)
    t2 = make_task("t2", 1, 120, mem_mb=66)
    alloc = {"t1": frozenset({1}), "t2": frozenset({1, 2, 3})}
    verdict = mem_copart_feasible(alloc, [t1, t2], pf)
    assert verdict[1] is False and verdict[2] is True


def test_mem_copart_equality_is_feasible():
    pf = Platform(n_cache=32, mem_total=1024)
    assert mem_copart_feasible({"a": frozenset({5})}, [make_task("a", 1, 10, mem_mb=32)], pf)[5]


def test_mem_copart_everyone_everywhere():
    pf = Platform(n_cache=4, mem_total=100)
    tasks = [make_task(n, 1, 10, mem_mb=m) for n, m in (("a", 40), ("b", 60))]
    alloc = {t.id: frozenset(range(1, 5)) for t in tasks}
    assert all(mem_copart_feasible(alloc, tasks, pf).values())


def test_circular_layout_wraps():
    assert circular_layout([3, 2], 4) == [frozenset({1, 2, 3}), frozenset({4, 1})]
    assert [set(s) for s in circular_layout([3, 2], 4)] == layout([3, 2], 4)


def _pf(n_cache=8, mem_total=0, delta=0):
    return Platform(n_cache=n_cache, mem_total=mem_total, constants=AnalysisConstants(delta=delta))


def test_min_cache_alloc_zero_partitions():
    res = min_cache_alloc([make_task("a", 1, 10)], 0, _pf())
    assert res.alloc is None and res.utilization == float("inf")


def test_min_cache_alloc_single_task_takes_all():
    t = make_task("a", (10, 8, 6, 5), 100, priority=1)
    res = min_cache_alloc([t], 3, _pf())
    assert res.alloc == {"a": frozenset({1, 2, 3})} and res.utilization == Fraction(6, 100)


def test_min_cache_alloc_fig43_matches_enumeration():
    core, _ = fig43()
    res = min_cache_alloc(core, 2, _pf(delta=1))
    assert res.utilization == min_cache_util([(t.wcet, t.period, 0) for t in core], 2, 1, 0) == Fraction(3, 4)


def test_find_best_fit_examples():
    pf = _pf(n_cache=4)
    t = make_task("x", 2, 10, priority=1)
    assert find_best_fit(t, [[]], [1], pf) == 0
    a = make_task("a", 3, 10, priority=5)
    b = make_task("b", 0, 10, priority=6)
    # after insertion core 0 sits at 0.5 and core 1 at 0.2: the fuller one wins
    assert find_best_fit(t, [[a], [b]], [1, 1], pf) == 0
    big = make_task("big", 20, 10, priority=1)
    assert find_best_fit(big, [[], []], [1, 1], pf) is None


def test_cata_light_task_uses_one_partition():
    pf = _pf(n_cache=8)
    res = cache_aware_task_alloc([make_task("a", 1, 10, priority=1)], 2, pf)
    assert res.schedulable and res.remaining == 7
    assert sum(1 for c in res.cores if c) == 1


def test_cata_empty():
    res = cache_aware_task_alloc([], 2, _pf())
    assert res.schedulable and res.remaining == 8


def test_cata_eight_task_duplicate_saves_partitions():
    # WCET curves shaped after the measured tasks: the minimum k is enforced with a
    # prohibitive C(k) below it, cache-sensitive tasks keep improving up to 8 partitions
    def curve(c_min, k_min, sensitive):
        out = []
        for k in range(1, 33):
            if k < k_min:
                out.append(10 * c_min)
            elif sensitive and k < 8:
                out.append(c_min + (8 - k) * c_min // 10)
            else:
                out.append(c_min)
        return out

    base = [("t1", 40, 18, 1, True, 11_940), ("t2", 120, 66, 3, False, 13_150),
            ("t3", 180, 52, 2, True, 49_580), ("t4", 600, 50, 2, False, 44_300)]
    tasks = []
    for copy in (1, 2):
        for name, period, mem, k_min, sens, c in base:
            tasks.append(make_task(f"{name}.{copy}", curve(c * US, k_min, sens), period * MS, mem_mb=mem))
    pf = Platform(n_cores=4, n_cache=32, mem_total=2048, constants=AnalysisConstants(delta=DELTA))
    res = cache_aware_task_alloc(with_rms_priorities(tasks), 4, pf)
    assert res.schedulable
    assert 32 - res.remaining <= 24
