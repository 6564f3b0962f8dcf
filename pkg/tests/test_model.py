from dataclasses import replace

import numpy as np
import pytest

from mcsched.model import (
    MS,
    NS,
    US,
    AnalysisError,
    DurationOverflow,
    GpuSegment,
    InterruptSource,
    Platform,
    Segment,
    SystemConfig,
    Vcpu,
    Vm,
    assign_rms_priorities,
    fixed_point,
    fixed_point_grid,
    make_task,
    parse_duration,
    validate,
    with_rms_priorities,
)


@pytest.mark.parametrize("text, ps", [
    ("45.3us", 45_300_000), ("1.5ns", 1_500), ("40ms", 40 * MS), ("2s", 2_000 * MS), ("7", 7), ("12 µs", 12 * US),
])
def test_parse_duration(text, ps):
    assert parse_duration(text) == ps


@pytest.mark.parametrize("bad", ["", "ms", "1.5ps", "-3ms", "3 parsecs"])
def test_parse_duration_rejects(bad):
    with pytest.raises(ValueError):
        parse_duration(bad)


def test_parse_duration_overflow():
    with pytest.raises(DurationOverflow):
        parse_duration("10000000s")


def test_rms_orders_by_period():
    tasks = [make_task(f"t{i}", 1, p * MS) for i, p in enumerate((100, 200, 300))]
    assert list(assign_rms_priorities(tasks).values()) == [3, 2, 1]


def test_rms_tie_goes_to_lower_id():
    prio = assign_rms_priorities([make_task("b", 1, 100), make_task("a", 1, 100)])
    assert prio["a"] > prio["b"]


def test_rms_table_tasks():
    periods = {"t1": 40, "t2": 120, "t3": 180, "t4": 600}
    prio = assign_rms_priorities([make_task(k, 1, v * MS) for k, v in reversed(periods.items())])
    assert prio["t1"] > prio["t2"] > prio["t3"] > prio["t4"]
    assert sorted(prio.values()) == [1, 2, 3, 4]


def test_rms_natural_id_order():
    prio = assign_rms_priorities([make_task(f"t{i}", 1, 100) for i in (10, 2, 1)])
    assert prio["t1"] > prio["t2"] > prio["t10"]


def test_rms_empty():
    assert assign_rms_priorities([]) == {}


def _system(*tasks, **kw):
    tasks = with_rms_priorities(list(tasks))
    return SystemConfig(Platform(n_cores=4, n_cache=8), tuple(tasks), {t.id: 0 for t in tasks}, **kw)


def test_validate_clean():
    assert validate(_system(make_task("a", MS, 10 * MS), make_task("b", MS, 20 * MS))) == []


def test_validate_deadline_over_period():
    codes = [v.code for v in validate(_system(make_task("a", MS, 10 * MS, deadline=11 * MS)))]
    assert codes == ["ConstrainedDeadlineViolated"]


def test_validate_wcet_not_monotone():
    codes = [v.code for v in validate(_system(make_task("a", (MS, 2 * MS), 10 * MS)))]
    assert codes == ["WcetNotMonotone"]


def test_validate_is_idempotent():
    s = _system(make_task("a", MS, 10 * MS))
    assert validate(s) == validate(s) == []


def test_validate_reports_structure_problems():
    t = make_task("a", 2 * MS, 10 * MS, segments=(Segment("gcs", MS),), gpu_segments=(GpuSegment(MS, MS, MS),))
    s = replace(_system(t), task_cache={"a": frozenset({9})}, core_banks={7: frozenset({1})},
                vcpus=(Vcpu("v", 11, 10, policy="lazy"),),
                interrupts=(InterruptSource("i", "virtual", US, MS, vcpu="nope", source="p0"),),
                vms=(Vm("vm", ("ghost",), ("v", "w")),))
    codes = {v.code for v in validate(s)}
    assert {"SegmentSumMismatch", "MissingResource", "GpuSegmentInconsistent", "CacheSetOutOfRange",
            "UnknownCore", "BudgetExceedsPeriod", "UnknownPolicy", "DanglingInterrupt",
            "UnknownTask", "UnknownVcpu"} <= codes


def test_validate_duplicate_priority():
    s = _system(make_task("a", 1, 10), make_task("b", 1, 20))
    s = replace(s, tasks=tuple(replace(t, priority=1) for t in s.tasks))
    assert [v.code for v in validate(s)] == ["DuplicatePriority"]


def test_fixed_point_outcomes():
    assert fixed_point(lambda w: 3 + (w // 10) * 0, 0, 100) == 3
    assert fixed_point(lambda w: w + 1, 0, 10) is None
    with pytest.raises(AnalysisError):
        fixed_point(lambda w: 1 - w, 0, 10, cap=50)


def test_fixed_point_grid_matches_scalar():
    starts = np.array([1, 2, 3, 50])

    def step(w):
        return starts + (-(-w // 7)) * 2

    grid = fixed_point_grid(step, starts, 40)
    for s, g in zip(starts, grid):
        scalar = fixed_point(lambda w: int(s) + -(-w // 7) * 2, int(s), 40)
        assert (scalar if scalar is not None else -1) == g


def test_ddr_clock_is_exact():
    assert parse_duration("1.5ns") == 3 * NS // 2
