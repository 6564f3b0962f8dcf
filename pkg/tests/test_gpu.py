from dataclasses import replace

import pytest
from hypothesis import given
from hypothesis import strategies as st

from oracles import rta
from mcsched.gpu import (
    gpu_handling_server,
    gpu_remote_blocking_sync,
    gpu_schedulable,
    gpu_segment_wcrt_sync,
    gpu_wait_server,
    gpu_wcrts,
    task_wcrt_gpu_server,
    task_wcrt_gpu_sync,
)
from mcsched.model import MS, US, AnalysisConstants, GpuSegment, Platform, SystemConfig, make_task

EPS = 100 * US


def gtask(name, prio, g_ms, misc=500 * US, c_ms=2, period_ms=1000):
    seg = () if g_ms is None else (GpuSegment(g_ms * MS, g_ms * MS - misc, misc),)
    return make_task(name, c_ms * MS, period_ms * MS, priority=prio, gpu_segments=seg)


def three_tasks(eps=EPS, server=0):
    tasks = (gtask("h", 3, 3), gtask("m", 2, 3), gtask("l", 1, 4))
    return SystemConfig(
        Platform(n_cores=2, constants=AnalysisConstants(gpu_overhead=eps)),
        tasks, {"h": 0, "m": 0, "l": 1}, gpu_server_core=server,
    )


def by_id(system, tid):
    return next(t for t in system.tasks if t.id == tid)


def test_segment_wcrt_sync():
    s = three_tasks()
    assert gpu_segment_wcrt_sync(by_id(s, "h"), 0, s) == 3 * MS
    assert gpu_segment_wcrt_sync(by_id(s, "m"), 0, s) == 6 * MS
    assert gpu_segment_wcrt_sync(by_id(s, "l"), 0, s) == 4 * MS


def test_remote_blocking_sync_examples():
    lone = SystemConfig(Platform(), (gtask("a", 1, 3),), {"a": 0})
    assert gpu_remote_blocking_sync(lone.tasks[0], lone) == 0
    pair = SystemConfig(Platform(n_cores=2), (gtask("a", 2, 1), gtask("b", 1, 4)), {"a": 0, "b": 1})
    assert gpu_remote_blocking_sync(pair.tasks[0], pair) == 4 * MS
    pair = SystemConfig(Platform(n_cores=2), (gtask("a", 2, 3, period_ms=200), gtask("b", 1, 1)), {"a": 0, "b": 1})
    assert gpu_remote_blocking_sync(pair.tasks[1], pair) == 6 * MS


def test_sync_bounds_trace():
    s = three_tasks()
    w = task_wcrt_gpu_sync(by_id(s, "h"), s)
    # busy 2 + own 3 + remote 6 + ceiling 2*3 = 17, above the observed 9
    assert w == 17 * MS and w >= 9 * MS


def test_sync_classic_without_gpu():
    a = make_task("a", 2, 7, priority=2)
    b = make_task("b", 3, 20, priority=1)
    s = SystemConfig(Platform(), (a, b), {"a": 0, "b": 0})
    assert task_wcrt_gpu_sync(b, s) == rta(3, [(7, 2)], 20)
    assert task_wcrt_gpu_server(b, replace(s, gpu_server_core=1)) == rta(3, [(7, 2)], 20)


def test_sync_ceiling_hits_cpu_only_tasks():
    s = SystemConfig(Platform(), (gtask("cpu", 2, None), gtask("gpu", 1, 3)), {"cpu": 0, "gpu": 0})
    assert task_wcrt_gpu_sync(by_id(s, "cpu"), s) == 2 * MS + 3 * MS


def test_server_handling_fig():
    s = three_tasks()
    h = by_id(s, "h")
    assert gpu_wait_server(h, s) == 4 * MS + EPS
    assert gpu_handling_server(h, s) == 7 * MS + 3 * EPS


def test_server_bounds_trace():
    s = three_tasks()
    w = task_wcrt_gpu_server(by_id(s, "h"), s)
    # 2 + (7 + 3eps) + three server jobs of (0.5 + 2eps), each released twice in the window
    assert w == 2 * MS + 7 * MS + 3 * EPS + 3 * 2 * (500 * US + 2 * EPS)
    assert w == 13_500 * US >= 6 * MS + 3 * EPS


def test_server_off_core_no_server_term():
    s = three_tasks(server=1)
    w = task_wcrt_gpu_server(by_id(s, "h"), s)
    assert w == 2 * MS + 7 * MS + 3 * EPS


def test_server_needs_core():
    s = replace(three_tasks(), gpu_server_core=None)
    with pytest.raises(ValueError):
        task_wcrt_gpu_server(by_id(s, "h"), s)


def test_server_ignores_lower_segments_except_wait():
    s = three_tasks(server=1)
    h = by_id(s, "h")
    base = task_wcrt_gpu_server(h, s)
    longer = replace(s, tasks=(s.tasks[0], s.tasks[1], gtask("l", 1, 4, c_ms=50)))
    assert task_wcrt_gpu_server(h, longer) == base


@given(st.integers(0, 500), st.integers(1, 6))
def test_wait_monotone_in_eps_and_g(eps_us, g_ms):
    s = three_tasks(eps=eps_us * US)
    bigger = three_tasks(eps=(eps_us + 1) * US)
    h = by_id(s, "h")
    assert gpu_wait_server(h, bigger) >= gpu_wait_server(h, s)
    grown = replace(s, tasks=(s.tasks[0], s.tasks[1], gtask("l", 1, 4 + g_ms)))
    assert gpu_wait_server(h, grown) >= gpu_wait_server(h, s)


def test_modes_and_schedulable():
    s = three_tasks()
    assert set(gpu_wcrts(s, "sync")) == {"h", "m", "l"}
    assert gpu_schedulable(s, "server") and gpu_schedulable(s, "sync")
    with pytest.raises(ValueError):
        gpu_wcrts(s, "other")
