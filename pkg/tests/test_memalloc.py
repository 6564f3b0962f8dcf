from fractions import Fraction
from math import ceil

import pytest

from oracles import dram_terms_ns, iterate, rd_ns
from mcsched.memalloc import (
    InterferenceGraph,
    baseline_alloc,
    best_fit_mem,
    build_interference_graph,
    extract_min_cut,
    least_interfering_bank,
    miaa,
    remove_excess,
)
from mcsched.memory import MemorySystem, dram_latency_terms, wcrt_memory
from mcsched.model import DDR3_1333, MS, NS, make_task

TERMS = dram_latency_terms(DDR3_1333)


def task(name, c_ms, t_ms, h=0, prio=1):
    return make_task(name, int(c_ms * MS), int(t_ms * MS), priority=prio, dram_requests=h)


def test_graph_zero_requests():
    a, b = task("a", 1, 10), task("b", 2, 20)
    assert build_interference_graph([a, b], TERMS).weight("a", "b") == 0


def test_graph_symmetric():
    a, b = task("a", 1, 10, 300), task("b", 2, 20, 700)
    g = build_interference_graph([a, b], TERMS)
    assert g.weight("a", "b") == g.weight("b", "a") > 0
    assert g.weight("a", "a") == 0


def test_graph_pair_matches_hand_fixed_point():
    a, b = task("a", 1, 10, 1000), task("b", 2, 20, 1000)
    oracle = dram_terms_ns()
    rd = rd_ns(0, [{1}, {1}], oracle) * NS
    conf = oracle["conf"] * NS

    def alone(me, other):
        step = lambda w: me.c + min(me.dram_requests * rd, (ceil(Fraction(w, other.period)) + 1) * other.dram_requests * conf)  # noqa: E731
        return iterate(step, me.c, 10**15)

    expect = Fraction(alone(a, b) - a.c, a.period) + Fraction(alone(b, a) - b.c, b.period)
    assert build_interference_graph([a, b], TERMS).weight("a", "b") == expect


def test_least_interfering_bank_first_core():
    assert least_interfering_bank(4, [], [], InterferenceGraph(), []) == 1


def test_least_interfering_bank_unused_bank():
    assert least_interfering_bank(4, [[task("a", 1, 10)]], [frozenset({1})], InterferenceGraph(), []) == 2


def test_least_interfering_bank_zero_weight_core():
    a, b, x = task("a", 1, 10), task("b", 1, 10), task("x", 1, 10)
    g = InterferenceGraph()
    g.set("a", "x", Fraction(1, 2))
    assert least_interfering_bank(2, [[a], [b]], [frozenset({1}), frozenset({2})], g, [x]) == 2


def test_least_interfering_bank_tie_lowest_core():
    a, b = task("a", 1, 10), task("b", 1, 10)
    assert least_interfering_bank(2, [[a], [b]], [frozenset({2}), frozenset({1})], InterferenceGraph(), []) == 2


def test_best_fit_mem_cases():
    banks = [frozenset({1}), frozenset({2})]
    assert best_fit_mem([task("x", 1, 10)], [[], []], banks, TERMS) == 0
    assert best_fit_mem([task("x", 11, 10)], [[], []], banks, TERMS) is None
    full = [[task("a", 6, 10, prio=5)], [task("b", 2, 10, prio=5)]]
    assert best_fit_mem([task("x", 3, 10)], full, banks, TERMS) == 0
    assert best_fit_mem([task("x", 5, 10)], full, banks, TERMS) == 1


def test_remove_excess_single_removal():
    cores = [[task("a", 6, 10, prio=2), task("b", 6, 10, prio=1)]]
    out = remove_excess(0, cores, [frozenset({1})], InterferenceGraph(), TERMS)
    assert len(out) == 1 and len(cores[0]) == 1


def test_remove_excess_ties_by_id():
    cores = [[task("t10", 4, 10, prio=3), task("t2", 4, 10, prio=2), task("t1", 4, 10, prio=1)]]
    out = remove_excess(0, cores, [frozenset({1})], InterferenceGraph(), TERMS)
    assert [t.id for t in out] == ["t1"]


def test_remove_excess_schedulable_core_untouched():
    cores = [[task("a", 1, 10)]]
    assert remove_excess(0, cores, [frozenset({1})], InterferenceGraph(), TERMS) == []
    assert len(cores[0]) == 1


def test_extract_min_cut_two_tasks():
    a, b = task("a", 1, 10), task("b", 3, 10)
    assert extract_min_cut([a, b], 1, InterferenceGraph()) == ([b], [a])


def test_extract_min_cut_seed_always_kept():
    a, b = task("a", 1, 10), task("b", 3, 10)
    first, rest = extract_min_cut([a, b], Fraction(1, 100), InterferenceGraph())
    assert first == [b]


def test_extract_min_cut_follows_heaviest_edge():
    ts = [task("a", 4, 10), task("b", 1, 10), task("c", 1, 10), task("d", 1, 10)]
    g = InterferenceGraph()
    g.set("a", "c", Fraction(3, 10))
    g.set("c", "d", Fraction(2, 10))
    g.set("a", "b", Fraction(1, 10))
    first, rest = extract_min_cut(ts, 1, g)
    # a -> c (0.3) -> d (a+c: 0.2 beats b's 0.1), then |rest| == 1 stops the loop
    assert [t.id for t in first] == ["a", "c", "d"] and [t.id for t in rest] == ["b"]


def test_extract_min_cut_rejects_singleton():
    with pytest.raises(ValueError):
        extract_min_cut([task("a", 1, 10)], 1, InterferenceGraph())


def test_miaa_empty_and_single():
    res = miaa([], 4, 4, TERMS)
    assert res.schedulable and len(res.cores) == 1
    res = miaa([task("a", 5, 10, 5000)], 4, 4, TERMS)
    assert res.schedulable and len(res.cores) == 1


def _check_allocation(res):
    assert all(len(b) == 1 for b in res.banks)
    system = MemorySystem.of(res.cores, res.banks)
    for core in res.cores:
        for t in core:
            assert wcrt_memory(t, system, TERMS) is not None


def test_miaa_result_is_verified():
    ts = [task(f"t{i}", 2 + i % 3, 10, 2000 * (i % 4), prio=i) for i in range(1, 9)]
    res = miaa(ts, 4, 4, TERMS)
    assert res.schedulable
    _check_allocation(res)
    assert sorted(t.id for c in res.cores for t in c) == sorted(t.id for t in ts)


def test_miaa_unschedulable_overload():
    ts = [task(f"t{i}", 9, 10, prio=i) for i in range(1, 4)]
    assert not miaa(ts, 2, 2, TERMS).schedulable


def test_baselines_unknown_scheme():
    with pytest.raises(ValueError):
        baseline_alloc("XYZ", [], 2, 2, TERMS)


@pytest.mark.parametrize("scheme", ["BFDnB", "BFDwB", "FFDnB", "FFDwB", "IA3nB", "IA3wB"])
def test_baselines_pack_light_set(scheme):
    ts = [task(f"t{i}", 1.5, 10, 100, prio=i) for i in range(1, 7)]
    res = baseline_alloc(scheme, ts, 2, 2, TERMS)
    assert res.schedulable
