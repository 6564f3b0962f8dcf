"""YAML readers for system descriptions and experiment specs.

Durations are written with a unit (``"45.3us"``, ``"40ms"``); a bare
number is only accepted for zero. Every error names the key path that
caused it, e.g. ``tasks[2].period``.

System file sections: ``platform``, ``dram``, ``tasks``, ``vms``,
``interrupts`` and ``allocation``. VCPUs live inside their VM, each with
its own task list. Priorities left out of a scheduling domain are filled in
rate-monotonically.
"""

from __future__ import annotations

from dataclasses import fields, replace
from pathlib import Path
from typing import Any

import yaml

from .expgen import DEFAULTS, DURATION_PARAMS, PRESETS, ExperimentSpec
from .model import (
    DDR3_1333,
    POLICIES,
    AnalysisConstants,
    DramTiming,
    GpuSegment,
    InterruptSource,
    Platform,
    Segment,
    SystemConfig,
    Task,
    Vcpu,
    Vm,
    parse_duration,
    with_rms_priorities,
)

DRAM_PRESETS = {"ddr3-1333": DDR3_1333}


class ConfigError(ValueError):
    """A config file that cannot be turned into a model; ``key`` is the offending path."""

    def __init__(self, key: str, message: str):
        super().__init__(f"{key}: {message}" if key else message)
        self.key = key


def _read_yaml(path: str | Path) -> Any:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError("", f"cannot read {path}: {exc.strerror}") from None
    try:
        return yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError("", f"{path}: invalid YAML: {exc}") from None


# ---------------------------------------------------------------- field readers


class _Node:
    """A mapping plus its key path, with typed getters that report the path on error."""

    def __init__(self, data: Any, path: str, allowed: set[str] | None = None):
        if not isinstance(data, dict):
            raise ConfigError(path, "expected a mapping")
        self.data, self.path = data, path
        if allowed is not None:
            extra = set(map(str, data)) - allowed
            if extra:
                raise ConfigError(self.key(sorted(extra)[0]), "unknown key")

    def key(self, name: str) -> str:
        return f"{self.path}.{name}" if self.path else name

    def has(self, name: str) -> bool:
        return self.data.get(name) is not None

    def raw(self, name: str, default: Any = ...) -> Any:
        if name not in self.data or self.data[name] is None:
            if default is ...:
                raise ConfigError(self.key(name), "missing required key")
            return default
        return self.data[name]

    def integer(self, name: str, default: Any = ...) -> Any:
        v = self.raw(name, default)
        if v is default and default is not ...:
            return v
        if isinstance(v, bool) or not isinstance(v, int):
            raise ConfigError(self.key(name), f"expected an integer, got {v!r}")
        return v

    def string(self, name: str, default: Any = ...) -> Any:
        v = self.raw(name, default)
        if v is default and default is not ...:
            return v
        return str(v)

    def duration(self, name: str, default: Any = ...) -> Any:
        v = self.raw(name, default)
        if v is default and default is not ...:
            return v
        return duration(v, self.key(name))

    def child(self, name: str, allowed: set[str] | None = None) -> "_Node":
        return _Node(self.raw(name, {}), self.key(name), allowed)

    def items(self, name: str) -> list[tuple[str, Any]]:
        v = self.raw(name, [])
        if not isinstance(v, list):
            raise ConfigError(self.key(name), "expected a list")
        return [(f"{self.key(name)}[{i}]", x) for i, x in enumerate(v)]


def duration(value: Any, key: str) -> int:
    if value == 0 and not isinstance(value, bool):
        return 0
    if isinstance(value, (int, float)) and not isinstance(value, bool):
        raise ConfigError(key, f"duration {value!r} needs a unit (ps, ns, us, ms, s)")
    try:
        return parse_duration(str(value))
    except (ValueError, OverflowError) as exc:
        raise ConfigError(key, str(exc)) from None


def _int_list(value: Any, key: str) -> list[int]:
    if isinstance(value, str) and "-" in value:
        lo, _, hi = value.partition("-")
        try:
            return list(range(int(lo), int(hi) + 1))
        except ValueError:
            raise ConfigError(key, f"bad range {value!r}") from None
    if isinstance(value, int) and not isinstance(value, bool):
        return [value]
    if not isinstance(value, list) or not all(isinstance(x, int) and not isinstance(x, bool) for x in value):
        raise ConfigError(key, "expected a list of integers or a range like '1-4'")
    return list(value)


# ---------------------------------------------------------------- system files

_PLATFORM_KEYS = {"n_cores", "n_cache", "n_banks", "mem_total", "constants"}
_CONST_KEYS = {"delta", "requests_per_reload", "n_cap", "gpu_overhead", "iteration_cap"}
_TASK_KEYS = {"id", "period", "deadline", "wcet", "mem_mb", "dram_requests", "priority",
              "segments", "gpu_segments"}
_VCPU_KEYS = {"id", "budget", "period", "policy", "priority", "pcpu", "tasks", "cache_set", "budget_curve"}
_VM_KEYS = {"id", "tasks", "vcpus"}
_IRQ_KEYS = {"id", "kind", "isr_wcet", "min_interarrival", "priority", "pcpu", "vcpu", "dsr_tasks",
             "vint", "source", "ipi"}
_ALLOC_KEYS = {"task_core", "task_cache", "core_banks", "vcpu_pcpu", "gpu_server_core"}
_SECTIONS = {"platform", "dram", "tasks", "vms", "interrupts", "allocation"}


def _platform(root: _Node) -> Platform:
    pf = root.child("platform", _PLATFORM_KEYS)
    c = pf.child("constants", _CONST_KEYS)
    constants = AnalysisConstants(
        delta=c.duration("delta", 0),
        requests_per_reload=c.integer("requests_per_reload", 0),
        n_cap=c.integer("n_cap", None),
        gpu_overhead=c.duration("gpu_overhead", 0),
        iteration_cap=c.integer("iteration_cap", AnalysisConstants.iteration_cap),
    )
    return Platform(
        n_cores=pf.integer("n_cores", 1),
        n_cache=pf.integer("n_cache", 1),
        n_banks=pf.integer("n_banks", 1),
        mem_total=pf.integer("mem_total", 0),
        dram=_dram(root),
        constants=constants,
    )


def _dram(root: _Node) -> DramTiming:
    raw = root.raw("dram", "ddr3-1333")
    if isinstance(raw, str):
        if raw.lower() not in DRAM_PRESETS:
            raise ConfigError("dram", f"unknown DRAM preset {raw!r}; known: {', '.join(DRAM_PRESETS)}")
        return DRAM_PRESETS[raw.lower()]
    names = {f.name for f in fields(DramTiming)}
    node = _Node(raw, "dram", names)
    values = {}
    for name in names:
        if not node.has(name):
            if name in ("t_rfc", "t_refi"):
                continue
            raise ConfigError(node.key(name), "missing required key")
        values[name] = node.duration(name) if name in ("t_ck", "t_rfc", "t_refi") else node.integer(name)
    return DramTiming(**values)


def _task(raw: Any, key: str) -> tuple[Task, bool, Any]:
    """Task, whether a priority was given, and the raw request count (int or per-k list)."""
    n = _Node(raw, key, _TASK_KEYS)
    wcet_raw = n.raw("wcet")
    if isinstance(wcet_raw, list):
        if not wcet_raw:
            raise ConfigError(n.key("wcet"), "empty WCET curve")
        wcet = tuple(duration(x, f"{n.key('wcet')}[{i}]") for i, x in enumerate(wcet_raw))
    else:
        wcet = (n.duration("wcet"),)
    period = n.duration("period")
    segments = []
    for k, s in n.items("segments"):
        sn = _Node(s, k, {"kind", "length", "resource"})
        kind = sn.string("kind")
        if kind not in ("normal", "lcs", "gcs"):
            raise ConfigError(sn.key("kind"), f"expected normal, lcs or gcs, got {kind!r}")
        segments.append(Segment(kind, sn.duration("length"), sn.string("resource", None)))
    gpu = []
    for k, g in n.items("gpu_segments"):
        gn = _Node(g, k, {"total", "exec", "misc"})
        gpu.append(GpuSegment(gn.duration("total"), gn.duration("exec"), gn.duration("misc")))
    req = n.raw("dram_requests", 0)
    if isinstance(req, list):
        if not req or not all(isinstance(x, int) and not isinstance(x, bool) for x in req):
            raise ConfigError(n.key("dram_requests"), "expected an integer or a list of integers")
    elif isinstance(req, bool) or not isinstance(req, int):
        raise ConfigError(n.key("dram_requests"), f"expected an integer, got {req!r}")
    task = Task(
        id=n.string("id"),
        period=period,
        deadline=n.duration("deadline", period),
        wcet=wcet,
        mem_mb=n.integer("mem_mb", 0),
        dram_requests=req[0] if isinstance(req, list) else req,
        priority=n.integer("priority", 0),
        segments=tuple(segments),
        gpu_segments=tuple(gpu),
    )
    return task, n.has("priority"), req


def _prioritize(items: list, explicit: list[bool], key: str) -> list:
    if all(explicit):
        return items
    if any(explicit):
        raise ConfigError(key, "give a priority to every member or to none (rate-monotonic)")
    return with_rms_priorities(items)


def _tasks(entries, key: str) -> tuple[list[Task], dict[str, Any]]:
    parsed = [_task(raw, k) for k, raw in entries]
    tasks = _prioritize([t for t, _, _ in parsed], [e for _, e, _ in parsed], key)
    return tasks, {t.id: r for t, _, r in parsed}


def _vcpu(raw: Any, key: str, requests: dict) -> tuple[Vcpu, bool]:
    n = _Node(raw, key, _VCPU_KEYS)
    tasks, req = _tasks(n.items("tasks"), n.key("tasks"))
    requests.update(req)
    policy = n.string("policy", "periodic")
    if policy not in POLICIES:
        raise ConfigError(n.key("policy"), f"expected one of {', '.join(POLICIES)}, got {policy!r}")
    period = n.duration("period")
    curve = tuple(duration(x, f"{n.key('budget_curve')}[{i}]") for i, x in enumerate(n.raw("budget_curve", [])))
    v = Vcpu(
        id=n.string("id"),
        budget=n.duration("budget", curve[0] if curve else period),
        period=period,
        policy=policy,
        priority=n.integer("priority", 0),
        pcpu=n.integer("pcpu", 0),
        tasks=tuple(tasks),
        cache_set=frozenset(_int_list(n.raw("cache_set", []), n.key("cache_set"))),
        budget_curve=curve,
    )
    return v, n.has("priority")


def _interrupt(raw: Any, key: str) -> InterruptSource:
    n = _Node(raw, key, _IRQ_KEYS)
    kind = n.string("kind")
    if kind not in ("physical", "virtual"):
        raise ConfigError(n.key("kind"), f"expected physical or virtual, got {kind!r}")
    dsr = n.raw("dsr_tasks", [])
    if not isinstance(dsr, list):
        raise ConfigError(n.key("dsr_tasks"), "expected a list of task ids")
    vint = n.raw("vint", False)
    if not isinstance(vint, bool):
        raise ConfigError(n.key("vint"), "expected true or false")
    return InterruptSource(
        id=n.string("id"),
        kind=kind,
        isr_wcet=n.duration("isr_wcet"),
        min_interarrival=n.duration("min_interarrival"),
        priority=n.integer("priority", 0),
        pcpu=n.integer("pcpu", None),
        vcpu=n.string("vcpu", None),
        dsr_tasks=tuple(map(str, dsr)),
        managed_by_vint=vint,
        source=n.string("source", None),
        ipi=n.string("ipi", None),
    )


def _id_map(node: _Node, name: str, conv) -> dict:
    raw = node.raw(name, {})
    if not isinstance(raw, dict):
        raise ConfigError(node.key(name), "expected a mapping")
    return {k: conv(v, f"{node.key(name)}.{k}") for k, v in raw.items()}


def _as_int(v: Any, key: str) -> int:
    if isinstance(v, bool) or not isinstance(v, int):
        raise ConfigError(key, f"expected an integer, got {v!r}")
    return v


def system_from_dict(data: Any) -> SystemConfig:
    root = _Node(data if data is not None else {}, "", _SECTIONS)
    platform = _platform(root)
    tasks, requests = _tasks(root.items("tasks"), "tasks")

    vcpus, vms, explicit = [], [], []
    for k, raw in root.items("vms"):
        n = _Node(raw, k, _VM_KEYS)
        mine = [_vcpu(r, kk, requests) for kk, r in n.items("vcpus")]
        vcpus += [v for v, _ in mine]
        explicit += [e for _, e in mine]
        member_ids = n.raw("tasks", [])
        if not isinstance(member_ids, list):
            raise ConfigError(n.key("tasks"), "expected a list of task ids")
        vms.append(Vm(n.string("id"), tuple(map(str, member_ids)), tuple(v.id for v, _ in mine)))

    alloc = root.child("allocation", _ALLOC_KEYS)
    pcpus = _id_map(alloc, "vcpu_pcpu", _as_int)
    vcpus = [replace(v, pcpu=pcpus.get(v.id, v.pcpu)) for v in vcpus]
    vcpus = _prioritize(vcpus, explicit, "vms")
    task_cache = {k: frozenset(v) for k, v in _id_map(alloc, "task_cache", _int_list).items()}
    core_banks = {_as_int(k, f"allocation.core_banks.{k}"): frozenset(v)
                  for k, v in _id_map(alloc, "core_banks", _int_list).items()}

    # request curves are sampled at the task's partition count
    def sample(t: Task) -> Task:
        req = requests.get(t.id)
        if isinstance(req, list):
            k = len(task_cache.get(t.id, ())) or 1
            return replace(t, dram_requests=req[min(k, len(req)) - 1])
        return t
    tasks = [sample(t) for t in tasks]
    vcpus = [replace(v, tasks=tuple(sample(t) for t in v.tasks)) for v in vcpus]

    return SystemConfig(
        platform=platform,
        tasks=tuple(tasks),
        task_core=_id_map(alloc, "task_core", _as_int),
        task_cache=task_cache,
        core_banks=core_banks,
        vcpus=tuple(vcpus),
        interrupts=tuple(_interrupt(raw, k) for k, raw in root.items("interrupts")),
        gpu_server_core=alloc.integer("gpu_server_core", None),
        vms=tuple(vms),
    )


def load_system(path: str | Path) -> SystemConfig:
    return system_from_dict(_read_yaml(path))


# ---------------------------------------------------------------- experiment files

_SPEC_KEYS = {"preset", "chapter", "params", "sweep", "n_tasksets", "seed", "schemes"}


def _param(chapter: str, name: str, value: Any, key: str) -> Any:
    if name not in DEFAULTS[chapter]:
        raise ConfigError(key, f"unknown parameter for {chapter}")
    default = DEFAULTS[chapter][name]
    conv = (lambda x, k: duration(x, k)) if name in DURATION_PARAMS else _scalar
    if isinstance(default, tuple):
        if not isinstance(value, list) or len(value) != 2:
            raise ConfigError(key, "expected a [lo, hi] range")
        return tuple(conv(x, f"{key}[{i}]") for i, x in enumerate(value))
    out = conv(value, key)
    if isinstance(default, str) != isinstance(out, str):
        raise ConfigError(key, f"expected a value like {default!r}")
    return out


def _scalar(value: Any, key: str) -> Any:
    if isinstance(value, bool) or not isinstance(value, (int, float, str)):
        raise ConfigError(key, f"expected a number, got {value!r}")
    return value


def spec_from_dict(data: Any) -> ExperimentSpec:
    root = _Node(data if data is not None else {}, "", _SPEC_KEYS)
    base = None
    if root.has("preset"):
        name = root.string("preset")
        if name not in PRESETS:
            raise ConfigError("preset", f"unknown preset {name!r}; known: {', '.join(PRESETS)}")
        base = PRESETS[name]
    chapter = root.string("chapter", base.chapter if base else ...)
    if chapter not in DEFAULTS:
        raise ConfigError("chapter", f"unknown chapter {chapter!r}; expected one of {', '.join(DEFAULTS)}")
    if base and chapter != base.chapter:
        raise ConfigError("chapter", f"preset {base.chapter!r} cannot be used for {chapter!r}")

    params = dict(base.params) if base else {}
    pnode = root.child("params")
    for name, value in pnode.data.items():
        params[name] = _param(chapter, str(name), value, pnode.key(str(name)))

    sweep, values = (base.sweep, base.values) if base else (None, ())
    if root.has("sweep"):
        sn = root.child("sweep", {"param", "values"})
        sweep = sn.string("param")
        raw = sn.raw("values")
        if not isinstance(raw, list) or not raw:
            raise ConfigError(sn.key("values"), "expected a non-empty list")
        values = tuple(_param(chapter, sweep, v, f"{sn.key('values')}[{i}]") for i, v in enumerate(raw))

    schemes = root.raw("schemes", list(base.schemes) if base else [])
    if not isinstance(schemes, list):
        raise ConfigError("schemes", "expected a list")
    n_tasksets = root.integer("n_tasksets", base.n_tasksets if base else 100)
    seed = root.integer("seed", base.seed if base else 0)
    try:
        return ExperimentSpec(chapter, params, sweep, values, n_tasksets, seed, tuple(map(str, schemes)))
    except ValueError as exc:
        raise ConfigError("", str(exc)) from None


def load_spec(path: str | Path) -> ExperimentSpec:
    return spec_from_dict(_read_yaml(path))
