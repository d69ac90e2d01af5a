"""Turns the final store snapshots into issue reports."""

from __future__ import annotations

import enum
from collections import Counter
from dataclasses import dataclass, replace

from .profiler_core import FineOutcome
from .stores import InstructionStore, MissStore, ObjectStore

MISS_PENALTY = 200.0
# fixed, so that the pile-up exclusion cannot flip when the line floor moves
PILEUP_FLOOR = 0.01
FALLBACK_SET_MISSES = 8
FALLBACK_SET_SHARE = 0.5
CHECKED_SHARE = 0.5


class MissType(str, enum.Enum):
    TRUE_SHARING = "TrueSharing"
    APP_FALSE_SHARING = "AppFalseSharing"
    ALLOC_FALSE_SHARING = "AllocatorFalseSharing"
    APP_CONFLICT = "AppConflict"
    ALLOC_CONFLICT = "AllocatorConflict"
    APP_CAPACITY = "AppCapacity"

    @property
    def origin(self) -> str:
        if self is MissType.TRUE_SHARING:
            return "application"
        return "allocator" if self.value.startswith("Allocator") else "application"

    @property
    def family(self) -> str:
        v = self.value
        return "coherence" if "Sharing" in v else "conflict" if "Conflict" in v else "capacity"


@dataclass(frozen=True)
class FilterThresholds:
    global_load_gate: float = 0.03
    global_store_gate: float = 0.01
    instr_access_floor: float = 0.0001
    instr_miss_floor: float = 0.01
    line_set_miss_floor: float = 0.01
    window_ratio: float = 0.005

    def __post_init__(self):
        for k, v in self.__dict__.items():
            if not 0 <= v <= 1:
                raise ValueError(f"{k} must be in [0, 1], got {v}")


@dataclass(frozen=True)
class Totals:
    load_accesses: int = 0
    load_misses: int = 0
    store_accesses: int = 0
    store_misses: int = 0

    @property
    def accesses(self) -> int:
        return self.load_accesses + self.store_accesses

    @property
    def load_ratio(self) -> float:
        return self.load_misses / self.load_accesses if self.load_accesses else 0.0

    @property
    def store_ratio(self) -> float:
        return self.store_misses / self.store_accesses if self.store_accesses else 0.0


@dataclass(frozen=True, order=True)
class ObjectInfo:
    callsite: int
    size: int
    alloc_tid: int
    start: int


@dataclass(frozen=True)
class IssueReport:
    miss_type: MissType
    ips: tuple[int, ...]
    statements: tuple[str, ...] = ()
    lines: tuple[int, ...] = ()
    sets: tuple[int, ...] = ()
    objects: tuple[ObjectInfo, ...] = ()
    regions: tuple[str, ...] = ()
    access_ratio: float = 0.0
    miss_ratio: float = 0.0
    misses: int = 0

    @property
    def origin(self) -> str:
        return self.miss_type.origin

    @property
    def callsites(self) -> tuple[int, ...]:
        return tuple(sorted({o.callsite for o in self.objects}))

    @property
    def slowdown_bound(self) -> float:
        return severity(self.access_ratio)

    def to_dict(self) -> dict:
        return {
            "miss_type": self.miss_type.value,
            "origin": self.origin,
            "ips": [f"{ip:#x}" for ip in self.ips],
            "statements": list(self.statements),
            "lines": [f"{ln:#x}" for ln in self.lines],
            "sets": list(self.sets),
            "objects": [{"callsite": o.callsite, "size": o.size,
                         "alloc_tid": o.alloc_tid, "start": f"{o.start:#x}"}
                        for o in self.objects],
            "regions": list(self.regions),
            "misses": self.misses,
            "severity": {
                "access_ratio": round(self.access_ratio, 9),
                "miss_ratio": round(self.miss_ratio, 9),
                "projected_slowdown_bound": round(self.slowdown_bound, 9),
            },
        }


def severity(access_ratio: float, penalty: float = MISS_PENALTY) -> float:
    """Upper bound on slowdown if every access of the issue missed."""
    return access_ratio * penalty + (1.0 - access_ratio)


def global_gate(totals: Totals, t: FilterThresholds) -> bool:
    if totals.accesses == 0:
        return False
    return not (totals.load_ratio < t.global_load_gate and totals.store_ratio < t.global_store_gate)


def _objects(recs) -> tuple[ObjectInfo, ...]:
    return tuple(sorted({ObjectInfo(r.callsite, r.size, r.alloc_tid, r.start) for r in recs}))


def _access_ratio(ips, instr: InstructionStore) -> float:
    if not instr.total_accesses:
        return 0.0
    return sum(instr.stats[ip].accesses for ip in ips if ip in instr.stats) / instr.total_accesses


def classify_lines(misses: MissStore, objects: ObjectStore, instr: InstructionStore,
                   t: FilterThresholds) -> tuple[list[IssueReport], set[int]]:
    total = misses.total
    if not total:
        return [], set()
    ls = misses.cfg.line_size
    pile = PILEUP_FLOOR * total
    hot_per_set = Counter(misses.set_of(ln) for ln, e in misses.lines.items() if e.misses >= pile)

    reports = []
    sharing_misses: Counter = Counter()
    all_misses: Counter = Counter()
    for line, entry in misses.lines.items():
        kind = entry.sharing()
        all_misses.update(entry.ips)
        if kind is not None:
            sharing_misses.update(entry.ips)
        if kind is None or entry.misses < t.line_set_miss_floor * total:
            continue
        s = misses.set_of(line)
        if misses.set_misses[s] >= pile and hot_per_set[s] >= 2:
            continue
        recs = objects.objects_in_range(line, line + ls)
        if kind == "true":
            mt = MissType.TRUE_SHARING
        elif len(recs) >= 2 and len({r.alloc_tid for r in recs}) >= 2:
            mt = MissType.ALLOC_FALSE_SHARING
        else:
            mt = MissType.APP_FALSE_SHARING
        regions = sorted({g.name for a in range(line, line + ls, 8)
                          if (g := objects.lookup_global(a)) is not None})
        ips = tuple(ip for ip, _ in sorted(entry.ips.items(), key=lambda kv: (-kv[1], kv[0])))
        reports.append(IssueReport(
            mt, ips, lines=(line,), sets=(s,), objects=_objects(recs), regions=tuple(regions),
            access_ratio=_access_ratio(ips, instr), miss_ratio=entry.misses / total,
            misses=entry.misses))
    checked = {ip for ip, n in all_misses.items() if sharing_misses[ip] >= CHECKED_SHARE * n}
    return reports, checked


def classify_instructions(instr: InstructionStore, objects: ObjectStore, checked: set[int],
                          t: FilterThresholds) -> list[IssueReport]:
    total_acc, total_miss = instr.total_accesses, instr.total_misses
    if not total_miss:
        return []
    reports = []
    for ip, st in instr.items():
        if ip in checked or st.misses == 0:
            continue
        if st.accesses < t.instr_access_floor * total_acc or st.misses < t.instr_miss_floor * total_miss:
            continue
        pat = st.pattern
        heap = [objects.archive[o] for o in (pat.objects if pat else ()) if o in objects.archive]
        if pat is not None and pat.outcome is FineOutcome.SAME_SET_CONFLICT:
            mt = MissType.ALLOC_CONFLICT if len(heap) >= 2 else MissType.APP_CONFLICT
            sets = (pat.dominant_set,)
        elif pat is not None and pat.outcome is FineOutcome.MULTI_SET_CAPACITY:
            mt, sets = MissType.APP_CAPACITY, ()
        else:
            s, n = max(st.sets.items(), key=lambda kv: (kv[1], -kv[0]))
            if n >= FALLBACK_SET_MISSES and n >= FALLBACK_SET_SHARE * st.misses:
                mt, sets = MissType.APP_CONFLICT, (s,)
            else:
                mt, sets = MissType.APP_CAPACITY, ()
        if not heap:
            heap = [objects.archive[k] for k in st.objects if k in objects.archive]
        regions = tuple(sorted(k for k in st.objects if isinstance(k, str)))
        reports.append(IssueReport(
            mt, (ip,), sets=sets, objects=_objects(heap), regions=regions,
            access_ratio=st.accesses / total_acc if total_acc else 0.0,
            miss_ratio=st.misses / total_miss, misses=st.misses))
    return reports


def statement_of(ip: int, symbols: dict[int, str]) -> str:
    return symbols.get(ip) or f"ip:{ip:#x}"


def summarize_statements(reports: list[IssueReport], symbols: dict[int, str]) -> list[IssueReport]:
    """Merge same-type reports whose instructions map to a shared source line."""
    parent = list(range(len(reports)))

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    owner: dict[tuple, int] = {}
    for i, r in enumerate(reports):
        for ip in r.ips:
            key = (r.miss_type, statement_of(ip, symbols))
            if key in owner:
                parent[find(i)] = find(owner[key])
            else:
                owner[key] = i
    groups: dict[int, list[IssueReport]] = {}
    for i, r in enumerate(reports):
        groups.setdefault(find(i), []).append(r)
    out = []
    for members in groups.values():
        ips = tuple(dict.fromkeys(ip for r in members for ip in r.ips))
        first = members[0]
        out.append(replace(
            first,
            ips=ips,
            statements=tuple(sorted({statement_of(ip, symbols) for ip in ips if ip in symbols})),
            lines=tuple(sorted({x for r in members for x in r.lines})),
            sets=tuple(sorted({x for r in members for x in r.sets})),
            objects=tuple(sorted({x for r in members for x in r.objects})),
            regions=tuple(sorted({x for r in members for x in r.regions})),
            access_ratio=sum(r.access_ratio for r in members),
            miss_ratio=sum(r.miss_ratio for r in members),
            misses=sum(r.misses for r in members),
        ))
    return out


def order_reports(reports: list[IssueReport]) -> list[IssueReport]:
    return sorted(reports, key=lambda r: (-r.miss_ratio, min(r.ips) if r.ips else 0))


def classify(totals: Totals, misses: MissStore, objects: ObjectStore, instr: InstructionStore,
             t: FilterThresholds, symbols: dict[int, str] | None = None) -> list[IssueReport]:
    if not global_gate(totals, t):
        return []
    line_reports, checked = classify_lines(misses, objects, instr, t)
    reports = line_reports + classify_instructions(instr, objects, checked, t)
    return order_reports(summarize_statements(reports, symbols or {}))
