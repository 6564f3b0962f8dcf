"""GPU access control: lock-based (MPCP) analysis and a dedicated GPU server.

Under the lock-based scheme a task busy-waits through its GPU segments at a
boosted priority. Under the server scheme it hands each segment to a server
task of top priority and suspends until the result comes back.
"""

from __future__ import annotations

from typing import Callable

from .model import DEFAULT_ITERATION_CAP, SystemConfig, Task, by_priority, ceil_div, fixed_point

MODES = ("sync", "server")


def _core_tasks(task: Task, system: SystemConfig) -> list[Task]:
    core = system.task_core[task.id]
    return [t for t in system.tasks if system.task_core.get(t.id) == core]


def _max_g(t: Task) -> int:
    return max((g.total for g in t.gpu_segments), default=0)


def _misc(t: Task) -> int:
    return sum(g.misc for g in t.gpu_segments)


def _top_down(task: Task, system: SystemConfig, solve: Callable[[Task, dict], int | None]) -> int | None:
    """Solve every higher task on the core first; a miss above makes ``task`` a miss too."""
    done: dict[str, int] = {}
    for t in by_priority(_core_tasks(task, system)):
        w = solve(t, done)
        if t.id == task.id:
            return w
        if w is None:
            return None
        done[t.id] = w
    raise ValueError(f"task {task.id} is not allocated")


# ---------------------------------------------------------------- lock-based


def gpu_segment_wcrt_sync(task: Task, segment: int, system: SystemConfig) -> int:
    """Segment length plus the longest segment of every higher-priority GPU user on the same core."""
    return task.gpu_segments[segment].total + sum(
        _max_g(x) for x in _core_tasks(task, system) if x.priority > task.priority
    )


def gpu_remote_blocking_sync(task: Task, system: SystemConfig, cap: int = DEFAULT_ITERATION_CAP) -> int | None:
    """Total wait to acquire the GPU over all segments; ``None`` past the deadline."""
    if not task.gpu_segments:
        return 0
    others = [x for x in system.tasks if x.id != task.id and x.gpu_segments]
    lower = [gpu_segment_wcrt_sync(x, u, system)
             for x in others if x.priority < task.priority for u in range(len(x.gpu_segments))]
    higher = [(x.period, gpu_segment_wcrt_sync(x, u, system))
              for x in others if x.priority > task.priority for u in range(len(x.gpu_segments))]
    start = max(lower, default=0)

    def step(b: int) -> int:
        return start + sum((ceil_div(b, t) + 1) * w for t, w in higher)

    b = fixed_point(step, start, task.deadline, cap)
    return None if b is None else b * len(task.gpu_segments)


def _sync_step(task: Task, system: SystemConfig, blocking: int, hp_wcrt: dict):
    core = _core_tasks(task, system)
    hp = [(h.period, h.c + h.gpu_time, hp_wcrt[h.id] - (h.c + h.gpu_time))
          for h in core if h.priority > task.priority]
    ceiling = (len(task.gpu_segments) + 1) * sum(
        _max_g(x) for x in core if x.priority < task.priority and x.gpu_segments
    )
    base = task.c + task.gpu_time + blocking + ceiling

    def step(w: int) -> int:
        return base + sum(ceil_div(w + j, t) * c for t, c, j in hp)
    return step, base


def sync_demand(w: int, task: Task, system: SystemConfig, hp_wcrt: dict) -> int:
    return _sync_step(task, system, gpu_remote_blocking_sync(task, system), hp_wcrt)[0](w)


def task_wcrt_gpu_sync(task: Task, system: SystemConfig, cap: int = DEFAULT_ITERATION_CAP) -> int | None:
    """Response time with busy-waiting GPU segments guarded by one global lock."""

    def solve(t: Task, done: dict) -> int | None:
        br = gpu_remote_blocking_sync(t, system, cap)
        if br is None:
            return None
        step, base = _sync_step(t, system, br, done)
        return fixed_point(step, base, t.deadline, cap)

    return _top_down(task, system, solve)


# ---------------------------------------------------------------- server-based


def _eps(system: SystemConfig) -> int:
    return system.platform.constants.gpu_overhead


def gpu_wait_server(task: Task, system: SystemConfig, cap: int = DEFAULT_ITERATION_CAP) -> int | None:
    """Longest wait of one request in the server's priority queue; ``None`` past the deadline."""
    eps = _eps(system)
    others = [x for x in system.tasks if x.id != task.id and x.gpu_segments]
    start = max((_max_g(x) + eps for x in others), default=0)
    # one server invocation per request
    higher = [(x.period, x.gpu_time + len(x.gpu_segments) * eps) for x in others if x.priority > task.priority]

    def step(b: int) -> int:
        return start + sum(ceil_div(b, t) * c for t, c in higher)

    return fixed_point(step, start, task.deadline, cap)


def gpu_handling_server(task: Task, system: SystemConfig, cap: int = DEFAULT_ITERATION_CAP) -> int | None:
    """Wait plus service time of all the task's requests (zero for CPU-only tasks)."""
    eta = len(task.gpu_segments)
    if not eta:
        return 0
    wait = gpu_wait_server(task, system, cap)
    if wait is None:
        return None
    return eta * wait + task.gpu_time + 2 * eta * _eps(system)


def _server_step(task: Task, system: SystemConfig, handling: int, hp_wcrt: dict):
    hp = [(h.period, h.c, hp_wcrt[h.id] - h.c) for h in _core_tasks(task, system) if h.priority > task.priority]
    server = []
    if system.gpu_server_core is not None and system.task_core[task.id] == system.gpu_server_core:
        eps = _eps(system)
        for j in system.tasks:
            if j.gpu_segments:
                work = _misc(j) + 2 * len(j.gpu_segments) * eps
                server.append((j.period, work, max(j.deadline - work, 0)))
    base = task.c + handling

    def step(w: int) -> int:
        total = base
        for t, c, j in hp:
            total += ceil_div(w + j, t) * c
        for t, c, j in server:
            total += ceil_div(w + j, t) * c
        return total
    return step, base


def server_demand(w: int, task: Task, system: SystemConfig, hp_wcrt: dict) -> int:
    return _server_step(task, system, gpu_handling_server(task, system), hp_wcrt)[0](w)


def task_wcrt_gpu_server(task: Task, system: SystemConfig, cap: int = DEFAULT_ITERATION_CAP) -> int | None:
    """Response time when a top-priority server runs GPU segments and the task suspends."""
    if system.gpu_server_core is None and any(t.gpu_segments for t in system.tasks):
        raise ValueError("server-based analysis needs gpu_server_core")

    def solve(t: Task, done: dict) -> int | None:
        handling = gpu_handling_server(t, system, cap)
        if handling is None:
            return None
        step, base = _server_step(t, system, handling, done)
        return fixed_point(step, base, t.deadline, cap)

    return _top_down(task, system, solve)


# ---------------------------------------------------------------- whole system


def gpu_wcrts(system: SystemConfig, mode: str, cap: int = DEFAULT_ITERATION_CAP) -> dict[str, int | None]:
    if mode not in MODES:
        raise ValueError(f"unknown GPU mode {mode!r}")
    solve = task_wcrt_gpu_sync if mode == "sync" else task_wcrt_gpu_server
    return {t.id: solve(t, system, cap) for t in system.tasks}


def gpu_schedulable(system: SystemConfig, mode: str, cap: int = DEFAULT_ITERATION_CAP) -> bool:
    if mode not in MODES:
        raise ValueError(f"unknown GPU mode {mode!r}")
    cores: dict[int, list[Task]] = {}
    for t in system.tasks:
        cores.setdefault(system.task_core[t.id], []).append(t)
    # the lowest task on each core fails whenever anything above it does
    solve = task_wcrt_gpu_sync if mode == "sync" else task_wcrt_gpu_server
    return all(solve(min(ts, key=lambda t: t.priority), system, cap) is not None for ts in cores.values())
