from dataclasses import replace

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import top_budget
from mcsched.hier import task_wcrt_hier, vcpu_wcrt
from mcsched.model import MS, US, InterruptSource, Vcpu, make_task
from mcsched.vint import (
    attach_pseudo_vcpus,
    common_budget_scan_intr,
    evaluate_intr,
    flow_serviceable,
    phys_isr_wcrt,
    pseudo_vcpu_budget,
    task_demand_intr,
    task_wcrt_intr,
    vcpu_wcrt_intr,
    virt_intr_wcrt,
)


def phys(name, c, t, prio=1, pcpu=0):
    return InterruptSource(name, "physical", c, t, priority=prio, pcpu=pcpu)


def virt(name, c, t, vcpu="v", dsr=(), source=None, ipi=None):
    return InterruptSource(name, "virtual", c, t, vcpu=vcpu, dsr_tasks=tuple(dsr), source=source, ipi=ipi)


DSR = make_task("dsr", 50 * US, 5 * MS, priority=9)


def test_pseudo_budget_examples():
    tasks = {"dsr": DSR}
    irq = virt("vi", 10 * US, 5 * MS, dsr=["dsr"])
    assert pseudo_vcpu_budget(irq, 5 * MS, tasks) == 60 * US
    assert pseudo_vcpu_budget(virt("vi", 10 * US, 5 * MS), 20 * MS, {}) == 4 * 10 * US
    sibling = virt("other", 5 * US, 5 * MS)
    assert pseudo_vcpu_budget(irq, 5 * MS, tasks, [sibling]) == 65 * US


def test_pseudo_budget_short_period():
    with pytest.raises(ValueError):
        pseudo_vcpu_budget(virt("vi", 1, 10), 5, {})


def test_vcpu_no_interrupts_reduces():
    a, b = Vcpu("a", 3, 10, priority=2), Vcpu("b", 3, 10, priority=1)
    assert vcpu_wcrt_intr(b, [a, b], []) == vcpu_wcrt(b, [a, b]) == 6


def test_vcpu_with_physical_isr():
    v = Vcpu("v", 4 * MS, 10 * MS)
    assert vcpu_wcrt_intr(v, [v], [phys("p", 10 * US, 5 * MS)]) == 4_010 * US


def test_vcpu_below_pseudo():
    v = Vcpu("v", 4 * MS, 10 * MS, priority=1, tasks=(DSR,))
    vcpus, irqs = attach_pseudo_vcpus([v], [virt("vi", 10 * US, 5 * MS, dsr=["dsr"])], "periodic")
    pseudo = next(p for p in vcpus if p.kind == "pseudo")
    assert pseudo.priority > v.priority and pseudo.budget == 60 * US
    # one pseudo release of 60 us fits into 4.06 ms
    assert vcpu_wcrt_intr(v, vcpus, irqs) == 4 * MS + 60 * US


def test_task_no_virtual_interrupts():
    a = make_task("a", 1 * MS, 20 * MS, priority=2)
    b = make_task("b", 2 * MS, 40 * MS, priority=1)
    v = Vcpu("v", 4 * MS, 10 * MS, tasks=(a, b))
    assert task_wcrt_intr(b, v, [v], []) == task_wcrt_hier(b, [a, b], 4 * MS, 10 * MS)


def test_task_unmanaged_virtual_isr_term():
    t = make_task("t", 1 * MS, 100 * MS, priority=1)
    v = Vcpu("v", 4 * MS, 10 * MS, tasks=(t,))
    irq = virt("vi", 10 * US, 5 * MS)
    w = 1 * MS
    base = task_demand_intr(w, t, v, [v], [])
    # ceil((1 + 6) / 5) = 2 releases
    assert task_demand_intr(w, t, v, [v], [irq]) == base + 2 * 10 * US


def test_task_managed_interrupts_vanish():
    t = make_task("t", 1 * MS, 100 * MS, priority=1)
    v = Vcpu("v", 4 * MS, 10 * MS, tasks=(t, DSR))
    vcpus, irqs = attach_pseudo_vcpus([v], [virt("vi", 10 * US, 5 * MS, dsr=["dsr"])], "periodic")
    v = next(u for u in vcpus if u.id == "v")
    alone = Vcpu("v", 4 * MS, 10 * MS, tasks=(t,))
    assert task_wcrt_intr(t, v, vcpus, irqs) == task_wcrt_intr(t, alone, [alone], [])


def test_phys_isr_cases():
    a = phys("a", 10 * US, 5 * MS, prio=2)
    b = phys("b", 10 * US, 5 * MS, prio=1)
    assert phys_isr_wcrt(a, [a, b]) == 10 * US
    assert phys_isr_wcrt(a, [a]) == 10 * US
    assert phys_isr_wcrt(b, [a, b]) == 20 * US


def test_virt_with_vint_alone():
    v = Vcpu("v", 4 * MS, 10 * MS, tasks=(DSR,))
    vcpus, irqs = attach_pseudo_vcpus([v], [virt("vi", 10 * US, 5 * MS, dsr=["dsr"])], "periodic")
    assert virt_intr_wcrt(irqs[0], vcpus, irqs) == 60 * US


def test_virt_without_vint_full_budget():
    v = Vcpu("v", 10 * MS, 10 * MS, tasks=(DSR,))
    irq = virt("vi", 10 * US, 5 * MS, dsr=["dsr"])
    assert virt_intr_wcrt(irq, [v], [irq]) == 60 * US


def test_virt_without_vint_gap():
    v = Vcpu("v", 4 * MS, 10 * MS, tasks=(DSR,))
    irq = virt("vi", 10 * US, 20 * MS, dsr=["dsr"])
    # 0.06 -> 6.06 -> 12.06 -> 12.06
    assert virt_intr_wcrt(irq, [v], [irq]) == 12_060 * US


def test_virt_mode_mismatch():
    v = Vcpu("v", 4 * MS, 10 * MS, tasks=(DSR,))
    irq = virt("vi", 10 * US, 20 * MS, dsr=["dsr"])
    with pytest.raises(ValueError):
        virt_intr_wcrt(irq, [v], [irq], vint=True)


@given(st.integers(1, 9))
def test_without_vint_monotone_in_gap(budget_ms):
    irq = virt("vi", 10 * US, 100 * MS, dsr=["dsr"])
    lo = Vcpu("v", budget_ms * MS, 10 * MS, tasks=(DSR,))
    hi = replace(lo, budget=(budget_ms + 1) * MS)
    assert virt_intr_wcrt(irq, [hi], [irq]) <= virt_intr_wcrt(irq, [lo], [irq])


@given(st.integers(0, 3 * MS))
@settings(max_examples=50)
def test_vint_isolated_from_regular_tasks(extra):
    worker = make_task("w", 1 * MS + extra, 20 * MS, priority=10)
    v = Vcpu("v", 4 * MS, 10 * MS, tasks=(worker, DSR))
    vcpus, irqs = attach_pseudo_vcpus([v], [virt("vi", 10 * US, 5 * MS, dsr=["dsr"])], "periodic")
    assert virt_intr_wcrt(irqs[0], vcpus, irqs) == 60 * US


def test_flow_cases():
    p = phys("p", 10 * US, 5 * MS)
    v = Vcpu("v", 10 * MS, 10 * MS, tasks=(DSR,))
    vi = virt("vi", 10 * US, 5 * MS, dsr=["dsr"], source="p")
    res = flow_serviceable(p, vi, None, [v], [p, vi])
    assert res.serviceable and res.total == 70 * US
    slow = Vcpu("v", 1 * MS, 10 * MS, tasks=(DSR,))
    res = flow_serviceable(p, vi, None, [slow], [p, vi])
    assert not res.serviceable and res.total is None


def test_flow_with_ipi_adds_time():
    p = phys("p", 10 * US, 5 * MS, pcpu=1)
    ipi = phys("ipi", 5 * US, 5 * MS)
    v = Vcpu("v", 10 * MS, 10 * MS, tasks=(DSR,))
    vi = virt("vi", 10 * US, 5 * MS, dsr=["dsr"], source="p", ipi="ipi")
    assert flow_serviceable(p, vi, ipi, [v], [p, ipi, vi]).total == 75 * US


def test_budget_scan_matches_top_down():
    t = make_task("t", 2 * MS, 20 * MS, priority=1)
    v1 = Vcpu("a", 10 * MS, 10 * MS, priority=2, tasks=(t, DSR))
    v2 = Vcpu("b", 10 * MS, 10 * MS, priority=1, tasks=(make_task("u", 1 * MS, 50 * MS, priority=1),))
    irqs = [phys("p", 10 * US, 5 * MS), virt("vi", 10 * US, 5 * MS, vcpu="a", dsr=["dsr"])]
    vcpus, irqs = attach_pseudo_vcpus([v1, v2], irqs, "periodic")

    def ok(b):
        vs = [v if v.kind == "pseudo" else replace(v, budget=b) for v in vcpus]
        return all(vcpu_wcrt_intr(v, vs, irqs) is not None for v in vs)

    assert common_budget_scan_intr(vcpus, irqs, 10 * US) == top_budget(ok, 10 * MS, 10 * US)


def test_evaluate_vint_beats_plain_on_tight_interrupts():
    dsr = make_task("dsr", 200 * US, 5 * MS, priority=1)
    work = make_task("work", 3 * MS, 10 * MS, priority=5)
    v1 = Vcpu("a", 10 * MS, 10 * MS, priority=2, tasks=(work, dsr))
    v2 = Vcpu("b", 10 * MS, 10 * MS, priority=1, tasks=(make_task("u", 2 * MS, 10 * MS, priority=1),))
    irqs = [phys("p", 20 * US, 5 * MS), virt("vi", 20 * US, 5 * MS, vcpu="a", dsr=["dsr"], source="p")]
    with_vint = evaluate_intr([v1, v2], irqs, "periodic", True, 10 * US)
    without = evaluate_intr([v1, v2], irqs, "periodic", False, 10 * US)
    assert with_vint.serviceable and not without.serviceable
