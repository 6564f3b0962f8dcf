"""Domain types, time units, priority assignment and structural validation.

Every duration is a plain ``int`` counting picoseconds. Picoseconds keep
DDR3 clock periods (1.5 ns) exact while half-second task periods stay far
below the 64-bit range, so all recurrences run on exact integer arithmetic.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field, replace
from fractions import Fraction
from typing import Callable, Iterable, Mapping, NamedTuple, Sequence

import numpy as np

PS = 1
NS = 1_000
US = 1_000_000
MS = 1_000_000_000
S = 1_000_000_000_000

MAX_DURATION = 2**63 - 1
DEFAULT_ITERATION_CAP = 10**6

_UNITS = {"ps": PS, "ns": NS, "us": US, "µs": US, "ms": MS, "s": S}
_DURATION_RE = re.compile(r"^\s*([0-9]+(?:\.[0-9]+)?)\s*(ps|ns|us|µs|ms|s)?\s*$")


class AnalysisError(RuntimeError):
    """A recurrence failed to settle within its iteration cap."""


class DurationOverflow(OverflowError):
    """A duration left the signed 64-bit picosecond range."""


def parse_duration(value: str | int, default_unit: str = "ps") -> int:
    """Parse ``"45.3us"``-style text into exact picoseconds.

    Bare integers are read in ``default_unit``. Values that do not land on
    a whole picosecond are rejected rather than rounded.
    """
    if isinstance(value, bool):
        raise ValueError(f"not a duration: {value!r}")
    if isinstance(value, int):
        return checked(value * _UNITS[default_unit])
    match = _DURATION_RE.match(str(value))
    if not match:
        raise ValueError(f"not a duration: {value!r}")
    number, unit = match.groups()
    exact = Fraction(number) * _UNITS[unit or default_unit]
    if exact.denominator != 1:
        raise ValueError(f"{value!r} is not a whole number of picoseconds")
    return checked(int(exact))


def checked(value: int) -> int:
    if value < 0:
        raise ValueError(f"negative duration: {value}")
    if value > MAX_DURATION:
        raise DurationOverflow(f"duration {value} ps exceeds 64-bit range")
    return value


def to_ms(value: int) -> float:
    return value / MS


def ceil_div(a: int, b: int) -> int:
    return -(-a // b)


def fixed_point(
    step: Callable[[int], int],
    start: int,
    limit: int,
    cap: int = DEFAULT_ITERATION_CAP,
) -> int | None:
    """Iterate ``W = step(W)`` from ``start``.

    Returns the fixed point, or ``None`` as soon as an iterate exceeds
    ``limit`` (the task is unschedulable). Raises :class:`AnalysisError`
    when ``cap`` iterations pass without settling.
    """
    w = start
    if w > limit:
        return None
    for _ in range(cap):
        nxt = step(w)
        if nxt > limit:
            return None
        if nxt == w:
            return w
        w = nxt
    raise AnalysisError(f"no fixed point after {cap} iterations (last W={w})")


def fixed_point_grid(
    step: Callable[[np.ndarray], np.ndarray],
    start: np.ndarray,
    limit: np.ndarray | int,
    cap: int = DEFAULT_ITERATION_CAP,
) -> np.ndarray:
    """Element-wise :func:`fixed_point` over int64 arrays; ``-1`` marks entries past ``limit``."""
    w = np.asarray(start, dtype=np.int64).copy()
    limit = np.broadcast_to(np.asarray(limit, dtype=np.int64), w.shape)
    out = np.full(w.shape, -1, dtype=np.int64)
    live = w <= limit
    for _ in range(cap):
        if not live.any():
            return out
        nxt = step(w)
        over = live & (nxt > limit)
        done = live & ~over & (nxt == w)
        out[done] = w[done]
        live &= ~(over | done)
        w = np.where(live, nxt, w)
    if live.any():
        raise AnalysisError(f"no fixed point after {cap} iterations")
    return out


def ceil_div_grid(a: np.ndarray, b) -> np.ndarray:
    return -((-a) // b)


# ---------------------------------------------------------------- tasks


@dataclass(frozen=True)
class Segment:
    kind: str  # "normal", "lcs" or "gcs"
    length: int
    resource: str | None = None


@dataclass(frozen=True)
class GpuSegment:
    total: int
    exec: int
    misc: int


@dataclass(frozen=True)
class Task:
    """A sporadic task.

    ``wcet`` holds C(1), C(2), ... for increasing cache-partition counts;
    a single-entry tuple means the WCET does not depend on the cache.
    """

    id: str
    period: int
    deadline: int
    wcet: tuple[int, ...]
    mem_mb: int = 0
    dram_requests: int = 0
    priority: int = 0
    segments: tuple[Segment, ...] = ()
    gpu_segments: tuple[GpuSegment, ...] = ()

    def wcet_for(self, k: int | None = None) -> int:
        if k is None or k < 1:
            return self.wcet[0]
        return self.wcet[min(k, len(self.wcet)) - 1]

    @property
    def c(self) -> int:
        return self.wcet[0]

    def utilization(self, k: int | None = None) -> Fraction:
        return Fraction(self.wcet_for(k), self.period)

    @property
    def gpu_time(self) -> int:
        return sum(g.total for g in self.gpu_segments)

    def gcs_lengths(self) -> list[int]:
        return [s.length for s in self.segments if s.kind == "gcs"]


def make_task(
    id: str,
    wcet: int | Sequence[int],
    period: int,
    deadline: int | None = None,
    **kw,
) -> Task:
    curve = (wcet,) if isinstance(wcet, int) else tuple(wcet)
    return Task(id=id, period=period, deadline=period if deadline is None else deadline, wcet=curve, **kw)


# ---------------------------------------------------------------- platform


@dataclass(frozen=True)
class DramTiming:
    t_ck: int
    t_rp: int
    t_rcd: int
    cl: int
    wl: int
    bl: int
    t_wtr: int
    t_wr: int
    t_rrd: int
    t_faw: int
    t_ras: int
    t_rc: int
    t_rtp: int
    t_rtrs: int
    n_cols: int
    t_rfc: int = 0
    t_refi: int = 0

    def cycle_fields(self) -> dict[str, int]:
        return {
            k: getattr(self, k)
            for k in ("t_rp", "t_rcd", "cl", "wl", "bl", "t_wtr", "t_wr", "t_rrd",
                      "t_faw", "t_ras", "t_rc", "t_rtp", "t_rtrs", "n_cols")
        }


DDR3_1333 = DramTiming(
    t_ck=1500, t_rp=9, t_rcd=9, cl=9, wl=7, bl=8, t_wtr=5, t_wr=10, t_rrd=4,
    t_faw=20, t_ras=24, t_rc=33, t_rtp=5, t_rtrs=2, n_cols=1024,
    t_rfc=160 * NS, t_refi=7800 * NS,
)


@dataclass(frozen=True)
class AnalysisConstants:
    delta: int = 0  # cache-partition reload time
    requests_per_reload: int = 0  # memory requests per partition reload
    n_cap: int | None = None  # FR-FCFS re-ordering cap
    gpu_overhead: int = 0  # GPU server overhead per intervention
    iteration_cap: int = DEFAULT_ITERATION_CAP


@dataclass(frozen=True)
class Platform:
    n_cores: int = 1
    n_cache: int = 1
    n_banks: int = 1
    mem_total: int = 0
    dram: DramTiming = DDR3_1333
    constants: AnalysisConstants = field(default_factory=AnalysisConstants)

    @property
    def partition_mb(self) -> Fraction:
        return Fraction(self.mem_total, self.n_cache)


# ---------------------------------------------------------------- virtualization


POLICIES = ("periodic", "deferrable", "sporadic")


@dataclass(frozen=True)
class Vcpu:
    id: str
    budget: int
    period: int
    policy: str = "periodic"
    priority: int = 0
    pcpu: int = 0
    tasks: tuple[Task, ...] = ()
    cache_set: frozenset[int] = frozenset()
    kind: str = "regular"  # or "pseudo"
    interrupt: str | None = None  # pseudo VCPUs: the virtual interrupt served
    origin: str | None = None  # pseudo VCPUs: the original VCPU
    budget_curve: tuple[int, ...] = ()

    @property
    def jitter(self) -> int:
        return self.period - self.budget if self.policy == "deferrable" else 0

    @property
    def utilization(self) -> Fraction:
        return Fraction(self.budget, self.period)


@dataclass(frozen=True)
class InterruptSource:
    id: str
    kind: str  # "physical" or "virtual"
    isr_wcet: int
    min_interarrival: int
    priority: int = 0
    pcpu: int | None = None
    vcpu: str | None = None
    dsr_tasks: tuple[str, ...] = ()
    managed_by_vint: bool = False
    pseudo_vcpu: str | None = None
    source: str | None = None  # virtual: the physical interrupt whose ISR raises it
    ipi: str | None = None  # virtual: IPI needed when the source sits on another PCPU


@dataclass(frozen=True)
class Vm:
    id: str
    tasks: tuple[str, ...] = ()  # member task ids
    vcpus: tuple[str, ...] = ()  # VCPU ids, once designed


@dataclass(frozen=True)
class SystemConfig:
    platform: Platform
    tasks: tuple[Task, ...] = ()
    task_core: Mapping[str, int] = field(default_factory=dict)
    task_cache: Mapping[str, frozenset[int]] = field(default_factory=dict)
    core_banks: Mapping[int, frozenset[int]] = field(default_factory=dict)
    vcpus: tuple[Vcpu, ...] = ()
    interrupts: tuple[InterruptSource, ...] = ()
    gpu_server_core: int | None = None
    vms: tuple[Vm, ...] = ()

    def core_tasks(self, core: int) -> list[Task]:
        return [t for t in self.tasks if self.task_core.get(t.id) == core]


# ---------------------------------------------------------------- priorities


def assign_rms_priorities(items: Iterable) -> dict[str, int]:
    """Rate-monotonic priorities: shorter period is higher, ties go to the lower id.

    Priorities are ``1..n`` with ``n`` the highest.
    """
    ordered = sorted(items, key=lambda x: (x.period, _id_key(x.id)))
    if any(x.period <= 0 for x in ordered):
        raise ValueError("periods must be positive")
    n = len(ordered)
    return {x.id: n - rank for rank, x in enumerate(ordered)}


def with_rms_priorities(items: Sequence):
    prio = assign_rms_priorities(items)
    return [replace(x, priority=prio[x.id]) for x in items]


def _id_key(ident):
    """Order ids naturally so that "t2" sorts before "t10"."""
    parts = re.split(r"(\d+)", str(ident))
    return tuple((0, int(p)) if p.isdigit() else (1, p) for p in parts)


def by_priority(items: Iterable) -> list:
    """Highest priority first."""
    return sorted(items, key=lambda x: -x.priority)


# ---------------------------------------------------------------- validation


class Violation(NamedTuple):
    code: str
    subject: str
    detail: str


def validate(system: SystemConfig) -> list[Violation]:
    out: list[Violation] = []
    add = lambda code, subject, detail="": out.append(Violation(code, str(subject), detail))  # noqa: E731
    pf = system.platform

    if pf.n_cores < 1:
        add("InvalidPlatform", "platform", "n_cores must be >= 1")
    if pf.n_cache < 1:
        add("InvalidPlatform", "platform", "n_cache must be >= 1")
    if pf.n_banks < 1:
        add("InvalidPlatform", "platform", "n_banks must be >= 1")
    if pf.n_cache >= 1 and pf.mem_total % pf.n_cache:
        add("MemoryNotDivisible", "platform", f"{pf.mem_total} MB over {pf.n_cache} partitions")
    for name, val in pf.dram.cycle_fields().items():
        if val <= 0:
            add("InvalidDramTiming", name, "must be positive")
    if pf.dram.t_ck <= 0:
        add("InvalidDramTiming", "t_ck", "must be positive")
    if pf.dram.bl % 2:
        add("InvalidDramTiming", "bl", "burst length must be even")
    if pf.constants.iteration_cap < 1:
        add("InvalidConstant", "iteration_cap", "must be >= 1")

    seen: set[str] = set()
    for t in system.tasks:
        if t.id in seen:
            add("DuplicateId", t.id)
        seen.add(t.id)
        _check_task(t, add)

    for core in {system.task_core.get(t.id) for t in system.tasks} - {None}:
        prios = [t.priority for t in system.core_tasks(core)]
        if len(prios) != len(set(prios)):
            add("DuplicatePriority", f"core {core}")
    for tid, core in system.task_core.items():
        if tid not in seen:
            add("UnknownTask", tid, "allocated but not declared")
        if not 0 <= core < pf.n_cores:
            add("UnknownCore", tid, f"core {core} not in 0..{pf.n_cores - 1}")
    for tid, parts in system.task_cache.items():
        if tid not in seen:
            add("UnknownTask", tid, "cache set for undeclared task")
        if any(not 1 <= p <= pf.n_cache for p in parts):
            add("CacheSetOutOfRange", tid, f"partitions must lie in 1..{pf.n_cache}")
    for core, banks in system.core_banks.items():
        if not 0 <= core < pf.n_cores:
            add("UnknownCore", f"bank map core {core}")
        if any(not 1 <= b <= pf.n_banks for b in banks):
            add("BankSetOutOfRange", f"core {core}", f"banks must lie in 1..{pf.n_banks}")

    vcpu_ids = {v.id for v in system.vcpus}
    for v in system.vcpus:
        if v.budget > v.period:
            add("BudgetExceedsPeriod", v.id)
        if v.period <= 0:
            add("NonPositivePeriod", v.id)
        if v.policy not in POLICIES:
            add("UnknownPolicy", v.id, v.policy)
        if not 0 <= v.pcpu < pf.n_cores:
            add("UnknownCore", v.id, f"pcpu {v.pcpu}")
        if v.kind == "pseudo" and (v.interrupt is None or v.origin not in vcpu_ids):
            add("DanglingPseudoVcpu", v.id)
        prios = [t.priority for t in v.tasks]
        if len(prios) != len(set(prios)):
            add("DuplicatePriority", f"vcpu {v.id}")
        for t in v.tasks:
            _check_task(t, add)
    for core in {v.pcpu for v in system.vcpus}:
        prios = [v.priority for v in system.vcpus if v.pcpu == core]
        if len(prios) != len(set(prios)):
            add("DuplicatePriority", f"pcpu {core} vcpus")

    vcpu_tasks = {t.id: t for v in system.vcpus for t in v.tasks}
    for vm in system.vms:
        for tid in vm.tasks:
            if tid not in seen and tid not in vcpu_tasks:
                add("UnknownTask", tid, f"member of VM {vm.id}")
        for vid in vm.vcpus:
            if vid not in vcpu_ids:
                add("UnknownVcpu", vid, f"member of VM {vm.id}")
    irq_ids = {irq.id for irq in system.interrupts if irq.kind == "physical"}
    for irq in system.interrupts:
        if irq.kind == "physical":
            if irq.pcpu is None or not 0 <= irq.pcpu < pf.n_cores:
                add("DanglingInterrupt", irq.id, "physical interrupt needs a valid pcpu")
        elif irq.kind == "virtual":
            if irq.vcpu not in vcpu_ids:
                add("DanglingInterrupt", irq.id, "virtual interrupt needs an existing vcpu")
            for tid in irq.dsr_tasks:
                task = vcpu_tasks.get(tid)
                if task is None:
                    add("UnknownTask", tid, f"DSR of {irq.id}")
                elif task.period < irq.min_interarrival:
                    add("DsrPeriodTooShort", tid, f"DSR of {irq.id}")
            for link in (irq.source, irq.ipi):
                if link is not None and link not in irq_ids:
                    add("DanglingInterrupt", irq.id, f"unknown physical interrupt {link}")
        else:
            add("UnknownInterruptKind", irq.id, irq.kind)
        if irq.min_interarrival <= 0:
            add("NonPositivePeriod", irq.id)
    return out


def _check_task(t: Task, add) -> None:
    if t.period <= 0:
        add("NonPositivePeriod", t.id)
    if t.deadline > t.period:
        add("ConstrainedDeadlineViolated", t.id, "deadline exceeds period")
    if not t.wcet or any(c < 0 for c in t.wcet):
        add("NegativeDuration", t.id, "wcet")
    if any(c > MAX_DURATION for c in (*t.wcet, t.period, t.deadline)):
        add("DurationOverflow", t.id)
    if any(b > a for a, b in zip(t.wcet, t.wcet[1:])):
        add("WcetNotMonotone", t.id, "C(k+1) > C(k)")
    if t.segments and sum(s.length for s in t.segments) != t.wcet[0]:
        add("SegmentSumMismatch", t.id, "segment lengths must sum to the WCET")
    for s in t.segments:
        if s.kind not in ("normal", "lcs", "gcs"):
            add("UnknownSegmentKind", t.id, s.kind)
        elif s.kind != "normal" and s.resource is None:
            add("MissingResource", t.id, "critical section without a resource id")
    for g in t.gpu_segments:
        if min(g.total, g.exec, g.misc) <= 0 or g.exec + g.misc > g.total:
            add("GpuSegmentInconsistent", t.id)
