"""Seeded random system generation for each experiment family.

Randomness comes from numpy's PCG64 (``numpy.random.default_rng(seed)``).
Durations are drawn as whole microseconds from closed intervals, and
utilizations as whole parts-per-billion, so every derived WCET is an exact
integer and a given ``(spec, seed)`` gives the same system on any platform.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Any, Mapping, Sequence

import numpy as np

from .model import (
    MS,
    US,
    AnalysisConstants,
    GpuSegment,
    InterruptSource,
    Platform,
    Segment,
    SystemConfig,
    Vcpu,
    Vm,
    make_task,
    with_rms_priorities,
)
from .vint import attach_pseudo_vcpus, common_budget_scan_intr
from .vmpcp import SCHEMES as LOCK_SCHEMES
from .vmpcp import apply_scheme, common_budget_scan

PPB = 10**9  # utilization unit: parts per billion

CHAPTERS = ("mem_alloc", "virt_cache", "vmpcp", "vint", "gpu")

SCHEMES: dict[str, tuple[str, ...]] = {
    "mem_alloc": ("MIAA", "BFDnB", "BFDwB", "FFDnB", "FFDwB", "IA3nB", "IA3wB"),
    "virt_cache": ("CAVM", "BFD+CCP", "WFD+CCP", "FFD+CCP", "BFD+CCS", "WFD+CCS", "FFD+CCS"),
    "vmpcp": ("PSwO", "DSwO", "PSnO", "DSnO"),
    "vint": ("DSbase", "SSbase", "DSvINT", "SSvINT"),
    "gpu": ("sync", "server"),
}

# Parameter tables. Durations are picoseconds, (lo, hi) pairs are closed ranges,
# ratios and utilizations are plain floats.
DEFAULTS: dict[str, dict[str, Any]] = {
    "mem_alloc": {
        "n_cores": 8,
        "n_banks": 8,
        "n_tasks": 20,
        "period": (100 * MS, 200 * MS),
        "utilization": (0.1, 0.3),
        "intensive_ratio": 0.5,
        "h_intensive": (10_000, 100_000),
        "h_light": (100, 1_000),
        "n_reorder": 12,
    },
    "virt_cache": {
        "n_pcpus": 4,
        "n_vms": 2,
        "vcpus_per_vm": 4,
        "vcpu_period": 10 * MS,
        "n_cache": 32,
        "n_partitions": 32,
        "delta": 207 * US,
        "n_tasks": (10, 15),
        "taskset_utilization": 3.0,
        "wcet": (8_470 * US, 202_020 * US),
        "mem_mb": (8, 40),
        "beta": (0.5, 0.95),
        "c_inf_ratio": (0.3, 0.9),
        "budget_step": US,
    },
    "vmpcp": {
        "n_cores": 8,
        "vcpus_per_core": 2,
        "tasks_per_vcpu": 3,
        "vcpu_period": 5 * MS,
        "period": (100 * MS, 500 * MS),
        "vcpu_utilization": 0.15,
        "gcs_per_task": 1,
        "gcs_length": 10 * US,
        "lockers_per_mutex": 2,
        "budget_step": 10 * US,
    },
    "vint": {
        "n_pcpus": 4,
        "vcpus_per_pcpu": 3,
        "phys_per_pcpu": 6,
        "virt_per_vcpu": 2,
        "vcpu_period": 10 * MS,
        "intr_interarrival_min": 5 * MS,
        "intr_interarrival_width": 5 * MS,
        "period": (100 * MS, 500 * MS),
        "isr_wcet": (5 * US, 10 * US),
        "dsr_wcet": (10 * US, 50 * US),
        "tasks_per_vcpu": 3,
        "dsr_per_vcpu": 2,
        "vcpu_utilization": 0.10,
        "pseudo_period_ratio": 1,
        "budget_step": US,
        "metric": "serviceable",
    },
    "gpu": {
        "n_cores": 4,
        "tasks_per_core": 4,
        "gpu_ratio": 0.2,
        "period": (100 * MS, 500 * MS),
        "core_utilization": 0.5,
        "segments_per_task": 1,
        "gpu_length": (5 * MS, 10 * MS),
        "misc": (500 * US, 2 * MS),
        "epsilon": 100 * US,
    },
}

DURATION_PARAMS = frozenset({
    "period", "vcpu_period", "delta", "wcet", "budget_step", "gcs_length",
    "intr_interarrival_min", "intr_interarrival_width", "isr_wcet", "dsr_wcet",
    "gpu_length", "misc", "epsilon",
})


@dataclass(frozen=True)
class ExperimentSpec:
    """One experiment: a parameter table, a swept parameter, and the taskset budget."""

    chapter: str
    params: Mapping[str, Any] = field(default_factory=dict)
    sweep: str | None = None
    values: tuple = ()
    n_tasksets: int = 100
    seed: int = 0
    schemes: tuple[str, ...] = ()

    def __post_init__(self):
        if self.chapter not in CHAPTERS:
            raise ValueError(f"unknown chapter {self.chapter!r}; expected one of {', '.join(CHAPTERS)}")
        merged = {**DEFAULTS[self.chapter], **self.params}
        unknown = set(self.params) - set(DEFAULTS[self.chapter])
        if unknown:
            raise ValueError(f"unknown parameter(s) for {self.chapter}: {', '.join(sorted(unknown))}")
        object.__setattr__(self, "params", merged)
        if self.n_tasksets < 1:
            raise ValueError("n_tasksets must be >= 1")
        if self.sweep is not None:
            if self.sweep not in merged:
                raise ValueError(f"cannot sweep unknown parameter {self.sweep!r}")
            if not self.values:
                raise ValueError("a sweep needs at least one value")
        for k, v in merged.items():
            if isinstance(v, tuple) and (len(v) != 2 or v[0] > v[1]):
                raise ValueError(f"range {k} must be (lo, hi) with lo <= hi")
        if not self.schemes:
            object.__setattr__(self, "schemes", SCHEMES[self.chapter])
        bad = set(self.schemes) - set(SCHEMES[self.chapter])
        if bad:
            raise ValueError(f"unknown scheme(s) for {self.chapter}: {', '.join(sorted(bad))}")

    def points(self) -> list:
        return list(self.values) if self.sweep else [None]

    def at(self, point) -> dict[str, Any]:
        """Parameter table with the sweep variable set to ``point``."""
        p = dict(self.params)
        if self.sweep is not None and point is not None:
            p[self.sweep] = point
        return p


PRESETS: dict[str, ExperimentSpec] = {
    "table-5.2": ExperimentSpec(
        "mem_alloc", sweep="intensive_ratio",
        values=tuple(round(0.1 * i, 1) for i in range(11)), n_tasksets=500,
    ),
    "table-6.2": ExperimentSpec(
        "virt_cache", sweep="n_partitions", values=(8, 12, 16, 20, 24, 28, 32), n_tasksets=100,
    ),
    "table-7.1": ExperimentSpec(
        "vmpcp", sweep="vcpu_period", values=tuple(k * 5 * MS for k in range(1, 9)), n_tasksets=500,
    ),
    "table-8.2": ExperimentSpec(
        "vint", sweep="intr_interarrival_min", values=(5 * MS,), n_tasksets=500,
    ),
    "table-9.1": ExperimentSpec(
        "gpu", sweep="gpu_ratio", values=tuple(round(0.1 * i, 1) for i in range(11)), n_tasksets=500,
    ),
}


# ---------------------------------------------------------------- sampling


def uniform_int(rng: np.random.Generator, lo: int, hi: int) -> int:
    """Uniform integer on the closed interval [lo, hi]."""
    return int(rng.integers(lo, hi + 1))


def uniform_duration(rng: np.random.Generator, lo: int, hi: int, grain: int = US) -> int:
    """Uniform duration on [lo, hi] in whole ``grain`` steps."""
    return uniform_int(rng, -(-lo // grain), hi // grain) * grain


def to_ppb(u: float) -> int:
    return round(u * PPB)


def split_utilization(rng: np.random.Generator, total_ppb: int, k: int) -> list[int]:
    """Stick-breaking: cut [0, total] at k-1 uniform integer points; pieces sum exactly to total."""
    if k < 1:
        return []
    cuts = np.sort(rng.integers(0, total_ppb + 1, size=k - 1))
    edges = np.concatenate([[0], cuts, [total_ppb]])
    return [int(x) for x in np.diff(edges)]


def wcet_from(piece_ppb: int, period: int) -> int:
    return piece_ppb * period // PPB


def round_half_up(x: float) -> int:
    return int(np.floor(x + 0.5))


def gen_wcet_curve(c1: int, n_cache: int, beta: float, c_inf_ratio: float) -> tuple[int, ...]:
    """C(k) = C_inf + (C(1) - C_inf) * beta^(k-1), rounded to 1 us for k >= 2.

    C(1) is kept exact; the running minimum keeps the curve non-increasing.
    """
    if c1 <= 0:
        raise ValueError("C(1) must be positive")
    c_inf = c_inf_ratio * c1
    curve = [c1]
    for k in range(2, n_cache + 1):
        c = round((c_inf + (c1 - c_inf) * beta ** (k - 1)) / US) * US
        curve.append(min(c, curve[-1]))
    return tuple(curve)


def sample_wcet_curve(rng, c1: int, n_cache: int, beta_range, c_inf_range) -> tuple[int, ...]:
    beta = float(rng.uniform(*beta_range))
    ratio = float(rng.uniform(*c_inf_range))
    return gen_wcet_curve(c1, n_cache, beta, ratio)


# ---------------------------------------------------------------- generators


def gen_system(spec: ExperimentSpec, seed: int, point=None) -> SystemConfig:
    """Deterministic random system for ``spec`` at sweep value ``point``."""
    p = spec.at(point)
    rng = np.random.default_rng(seed)
    return _GENERATORS[spec.chapter](p, rng)


def _gen_mem_alloc(p, rng) -> SystemConfig:
    n = p["n_tasks"]
    heavy = round_half_up(p["intensive_ratio"] * n)
    lo, hi = (to_ppb(u) for u in p["utilization"])
    tasks = []
    for i in range(n):
        period = uniform_duration(rng, *p["period"])
        util = uniform_int(rng, lo, hi)
        h = uniform_int(rng, *(p["h_intensive"] if i < heavy else p["h_light"]))
        tasks.append(make_task(f"t{i + 1}", wcet_from(util, period), period, dram_requests=h))
    platform = Platform(
        n_cores=p["n_cores"], n_banks=p["n_banks"], constants=AnalysisConstants(n_cap=p["n_reorder"])
    )
    return SystemConfig(platform, tuple(with_rms_priorities(tasks)))


def _gen_virt_cache(p, rng) -> SystemConfig:
    n = uniform_int(rng, *p["n_tasks"])
    total = to_ppb(p["taskset_utilization"])
    # redraw until every task fits a VCPU on its own (0 < U(1) <= 1)
    while True:
        pieces = split_utilization(rng, total, n)
        if all(0 < x <= PPB for x in pieces):
            break
    tasks, members = [], [[] for _ in range(p["n_vms"])]
    for i, u in enumerate(pieces):
        c1 = uniform_duration(rng, *p["wcet"])
        period = c1 * PPB // u
        curve = sample_wcet_curve(rng, c1, p["n_cache"], p["beta"], p["c_inf_ratio"])
        mem = uniform_int(rng, *p["mem_mb"])
        vm = uniform_int(rng, 0, p["n_vms"] - 1)
        tid = f"t{i + 1}"
        tasks.append(make_task(tid, curve, period, mem_mb=mem))
        members[vm].append(tid)
    by_id = {t.id: t for t in tasks}
    ranked = {}
    for ids in members:
        for t in with_rms_priorities([by_id[i] for i in ids]):
            ranked[t.id] = t
    platform = Platform(
        n_cores=p["n_pcpus"], n_cache=p["n_cache"], constants=AnalysisConstants(delta=p["delta"])
    )
    vms = tuple(Vm(f"vm{m + 1}", tuple(ids)) for m, ids in enumerate(members))
    return SystemConfig(platform, tuple(ranked[t.id] for t in tasks), vms=vms)


def _gcs_segments(c: int, n_gcs: int, length: int, resources: Sequence[str]) -> tuple[Segment, ...]:
    """Normal time split evenly around ``n_gcs`` equal critical sections."""
    normal = c - n_gcs * length
    piece = normal // (n_gcs + 1)
    segs = []
    for r in resources:
        segs += [Segment("normal", piece), Segment("gcs", length, r)]
    segs.append(Segment("normal", normal - piece * n_gcs))
    return tuple(s for s in segs if s.length > 0)


def _gen_vmpcp(p, rng) -> SystemConfig:
    n_gcs, length = p["gcs_per_task"], p["gcs_length"]
    raw = []  # (vcpu index, core, id, period, wcet)
    k = 0
    for core in range(p["n_cores"]):
        for j in range(p["vcpus_per_core"]):
            pieces = split_utilization(rng, to_ppb(p["vcpu_utilization"]), p["tasks_per_vcpu"])
            for u in pieces:
                period = uniform_duration(rng, *p["period"])
                k += 1
                raw.append((core * p["vcpus_per_core"] + j, core, f"t{k}", period, wcet_from(u, period)))
    # every gcs slot joins a mutex shared by `lockers_per_mutex` slots
    slots = [(i, s) for i in range(len(raw)) for s in range(n_gcs)]
    order = rng.permutation(len(slots))
    owner: dict[int, list[str]] = {i: [] for i in range(len(raw))}
    for rank, idx in enumerate(order):
        owner[slots[idx][0]].append(f"r{rank // p['lockers_per_mutex'] + 1}")

    vcpus = []
    period_v = p["vcpu_period"]
    for v in range(p["n_cores"] * p["vcpus_per_core"]):
        tasks = []
        for i, (vi, core, tid, period, c) in enumerate(raw):
            if vi != v:
                continue
            c = max(c, n_gcs * length)
            segs = _gcs_segments(c, n_gcs, length, owner[i]) if n_gcs else ()
            tasks.append(make_task(tid, c, period, segments=segs))
        vcpus.append(Vcpu(f"v{v + 1}", period_v, period_v, pcpu=v // p["vcpus_per_core"],
                          tasks=tuple(with_rms_priorities(tasks))))
    return SystemConfig(Platform(n_cores=p["n_cores"]), vcpus=tuple(with_rms_priorities(vcpus)))


def _gen_vint(p, rng) -> SystemConfig:
    lo = p["intr_interarrival_min"]
    span = (lo, lo + p["intr_interarrival_width"])
    phys = []
    for pcpu in range(p["n_pcpus"]):
        for _ in range(p["phys_per_pcpu"]):
            phys.append(InterruptSource(
                f"p{len(phys) + 1}", "physical", uniform_duration(rng, *p["isr_wcet"]),
                uniform_duration(rng, *span), pcpu=pcpu,
            ))
    n_virt = p["n_pcpus"] * p["vcpus_per_pcpu"] * p["virt_per_vcpu"]
    if n_virt <= len(phys):
        sources = [phys[i] for i in rng.permutation(len(phys))[:n_virt]]
    else:
        sources = [phys[i] for i in rng.integers(0, len(phys), size=n_virt)]

    vcpus, virts, ipis = [], [], []
    n = 0
    for pcpu in range(p["n_pcpus"]):
        for j in range(p["vcpus_per_pcpu"]):
            vid = f"v{pcpu * p['vcpus_per_pcpu'] + j + 1}"
            tasks = []
            for k, u in enumerate(split_utilization(rng, to_ppb(p["vcpu_utilization"]), p["tasks_per_vcpu"])):
                period = uniform_duration(rng, *p["period"])
                tasks.append(make_task(f"{vid}.t{k + 1}", wcet_from(u, period), period))
            mine = []
            for _ in range(p["virt_per_vcpu"]):
                src = sources[n]
                n += 1
                ipi = None
                if src.pcpu != pcpu:
                    ipi = InterruptSource(f"ipi{n}", "physical", uniform_duration(rng, *p["isr_wcet"]),
                                          src.min_interarrival, pcpu=pcpu)
                    ipis.append(ipi)
                mine.append(InterruptSource(
                    f"i{n}", "virtual", uniform_duration(rng, *p["isr_wcet"]), src.min_interarrival,
                    priority=uniform_int(rng, 1, 10**6), vcpu=vid, source=src.id, ipi=ipi and ipi.id,
                ))
            dsr: dict[int, list[str]] = {}
            for d in range(p["dsr_per_vcpu"] if mine else 0):
                owner = d % len(mine)
                tid = f"{vid}.d{d + 1}"
                tasks.append(make_task(tid, uniform_duration(rng, *p["dsr_wcet"]), mine[owner].min_interarrival))
                dsr.setdefault(owner, []).append(tid)
            virts += [replace(irq, dsr_tasks=tuple(dsr.get(k, ()))) for k, irq in enumerate(mine)]
            vcpus.append(Vcpu(vid, p["vcpu_period"], p["vcpu_period"], pcpu=pcpu,
                              tasks=tuple(with_rms_priorities(tasks))))

    ranked = []
    for pcpu in range(p["n_pcpus"]):
        here = [i for i in (*phys, *ipis) if i.pcpu == pcpu]
        prio = rng.permutation(len(here)) + 1
        ranked += [replace(i, priority=int(r)) for i, r in zip(here, prio)]
    return SystemConfig(Platform(n_cores=p["n_pcpus"]), vcpus=tuple(with_rms_priorities(vcpus)),
                        interrupts=tuple(ranked + virts))


def _gen_gpu(p, rng) -> SystemConfig:
    tasks, cores = [], {}
    for core in range(p["n_cores"]):
        for u in split_utilization(rng, to_ppb(p["core_utilization"]), p["tasks_per_core"]):
            period = uniform_duration(rng, *p["period"])
            tid = f"t{len(tasks) + 1}"
            tasks.append(make_task(tid, wcet_from(u, period), period))
            cores[tid] = core
    users = round_half_up(p["gpu_ratio"] * len(tasks))
    chosen = set(int(i) for i in rng.choice(len(tasks), size=users, replace=False)) if users else set()
    out = []
    for i, t in enumerate(tasks):
        if i in chosen:
            segs = []
            for _ in range(p["segments_per_task"]):
                g = uniform_duration(rng, *p["gpu_length"])
                x = min(uniform_duration(rng, *p["misc"]), g)
                segs.append(GpuSegment(g, g - x, x) if x < g else GpuSegment(g, 0, g))
            t = replace(t, gpu_segments=tuple(segs))
        out.append(t)
    server = uniform_int(rng, 0, p["n_cores"] - 1)
    platform = Platform(n_cores=p["n_cores"], constants=AnalysisConstants(gpu_overhead=p["epsilon"]))
    return SystemConfig(platform, tuple(with_rms_priorities(out)), cores, gpu_server_core=server)


_GENERATORS = {
    "mem_alloc": _gen_mem_alloc,
    "virt_cache": _gen_virt_cache,
    "vmpcp": _gen_vmpcp,
    "vint": _gen_vint,
    "gpu": _gen_gpu,
}


# ---------------------------------------------------------------- budgets


def vcpu_budget_for_experiment(
    system: SystemConfig, chapter: str, scheme: str, step: int | None = None
) -> dict[str, int] | None:
    """Common VCPU budget found by scanning down from the period; ``None`` if none passes.

    The lock experiments step by 10 us, the interrupt experiments by 1 us.
    """
    if chapter == "vmpcp":
        _, overrun = LOCK_SCHEMES[scheme]
        vcpus = apply_scheme(system.vcpus, scheme)
        budget = common_budget_scan(vcpus, overrun, step or 10 * US)
    elif chapter == "vint":
        policy, vint = INTR_SCHEMES[scheme]
        vcpus = [replace(v, policy=policy) for v in system.vcpus]
        irqs = list(system.interrupts)
        if vint:
            vcpus, irqs = attach_pseudo_vcpus(vcpus, irqs, policy)
        budget = common_budget_scan_intr(vcpus, irqs, step or US)
    else:
        raise ValueError(f"no VCPU budget scan for chapter {chapter!r}")
    if budget is None:
        return None
    return {v.id: budget for v in vcpus if v.kind != "pseudo"}


INTR_SCHEMES: dict[str, tuple[str, bool]] = {
    "DSbase": ("deferrable", False),
    "SSbase": ("sporadic", False),
    "DSvINT": ("deferrable", True),
    "SSvINT": ("sporadic", True),
}
