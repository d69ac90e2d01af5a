"""Object, miss and instruction stores filled by the profiler."""

from __future__ import annotations

import bisect
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterator

from .cache_sim import CacheConfig
from .trace import AllocEvent, FreeEvent, GlobalRegion

PAGE_SHIFT = 12
CHUNK_SHIFT = 20

PAGE, CHUNK, HUGE = "page", "chunk", "huge"


class ObjectStoreError(ValueError):
    pass


@dataclass(eq=False)
class ObjectRecord:
    oid: int
    start: int
    size: int
    callsite: int
    alloc_tid: int
    live: bool = True

    @property
    def end(self) -> int:
        return self.start + self.size

    def __contains__(self, addr: int) -> bool:
        return self.start <= addr < self.start + self.size


def placement(start: int, size: int) -> str:
    last = start + size - 1
    if start >> PAGE_SHIFT == last >> PAGE_SHIFT:
        return PAGE
    if start >> CHUNK_SHIFT == last >> CHUNK_SHIFT:
        return CHUNK
    return HUGE


class _Sorted:
    """Records kept sorted by start, with a parallel key list for bisect."""

    __slots__ = ("starts", "recs")

    def __init__(self):
        self.starts: list[int] = []
        self.recs: list[ObjectRecord] = []

    def __len__(self):
        return len(self.recs)

    def add(self, rec: ObjectRecord) -> None:
        i = bisect.bisect_left(self.starts, rec.start)
        self.starts.insert(i, rec.start)
        self.recs.insert(i, rec)

    def remove(self, rec: ObjectRecord) -> None:
        i = bisect.bisect_left(self.starts, rec.start)
        del self.starts[i]
        del self.recs[i]

    def find(self, addr: int) -> ObjectRecord | None:
        i = bisect.bisect_right(self.starts, addr) - 1
        if i >= 0 and addr < self.recs[i].end:
            return self.recs[i]
        return None


@dataclass
class CallsiteStats:
    allocs: int = 0
    accesses: int = 0
    misses: int = 0
    skipped_allocs: int = 0
    skip: bool = False

    @property
    def ratio(self) -> float:
        return self.misses / self.accesses if self.accesses else 0.0


class ObjectStore:
    """Heap objects indexed at one of three levels by how far they span.

    Small objects live in a per-page table, page-crossing objects inside one
    megabyte in a per-chunk table, everything else in one sorted list.
    """

    def __init__(self, globals_: list[GlobalRegion] | tuple = (),
                 min_samples: int = 1000, skip_fraction: float = 0.1):
        self.min_samples = min_samples
        self.skip_fraction = skip_fraction
        self.pages: dict[int, _Sorted] = {}
        self.chunks: dict[int, _Sorted] = {}
        self.huge = _Sorted()
        self.callsites: dict[int, CallsiteStats] = {}
        self.archive: dict[int, ObjectRecord] = {}
        self.accesses = 0
        self.misses = 0
        self._live = _Sorted()                 # every live range, indexed or not
        self._level: dict[int, str] = {}       # start -> level for indexed objects
        self._next_oid = 0
        regions = sorted(globals_, key=lambda g: g.start)
        self._gstarts = [g.start for g in regions]
        self._globals = regions

    # -- globals ---------------------------------------------------------------

    def lookup_global(self, addr: int) -> GlobalRegion | None:
        i = bisect.bisect_right(self._gstarts, addr) - 1
        if i >= 0 and addr < self._globals[i].end:
            return self._globals[i]
        return None

    # -- heap ------------------------------------------------------------------

    def _site(self, callsite: int) -> CallsiteStats:
        st = self.callsites.get(callsite)
        if st is None:
            st = self.callsites[callsite] = CallsiteStats()
        return st

    def insert(self, ev: AllocEvent) -> ObjectRecord | None:
        if ev.size < 1:
            raise ObjectStoreError(f"object at {ev.addr:#x} has size {ev.size}")
        i = bisect.bisect_right(self._live.starts, ev.addr + ev.size - 1) - 1
        if i >= 0 and self._live.recs[i].end > ev.addr:
            o = self._live.recs[i]
            raise ObjectStoreError(
                f"allocation [{ev.addr:#x}, {ev.addr + ev.size:#x}) overlaps "
                f"live object [{o.start:#x}, {o.end:#x})")
        site = self._site(ev.callsite)
        site.allocs += 1
        rec = ObjectRecord(self._next_oid, ev.addr, ev.size, ev.callsite, ev.tid)
        self._next_oid += 1
        self._live.add(rec)
        if self.callsite_skip(ev.callsite):
            site.skipped_allocs += 1
            return None
        level = placement(rec.start, rec.size)
        self._index(level, rec).add(rec)
        self._level[rec.start] = level
        self.archive[rec.oid] = rec
        return rec

    def _index(self, level: str, rec: ObjectRecord) -> _Sorted:
        if level == PAGE:
            key, table = rec.start >> PAGE_SHIFT, self.pages
        elif level == CHUNK:
            key, table = rec.start >> CHUNK_SHIFT, self.chunks
        else:
            return self.huge
        bucket = table.get(key)
        if bucket is None:
            bucket = table[key] = _Sorted()
        return bucket

    def free(self, ev: FreeEvent) -> ObjectRecord:
        rec = self._live.find(ev.addr)
        if rec is None or rec.start != ev.addr:
            raise ObjectStoreError(f"unmatched free of {ev.addr:#x}")
        self._live.remove(rec)
        rec.live = False
        level = self._level.pop(rec.start, None)
        if level is not None:
            bucket = self._index(level, rec)
            bucket.remove(rec)
            if not bucket and level != HUGE:
                table = self.pages if level == PAGE else self.chunks
                shift = PAGE_SHIFT if level == PAGE else CHUNK_SHIFT
                del table[rec.start >> shift]
        return rec

    def locate(self, addr: int) -> tuple[ObjectRecord | None, list[str]]:
        """Lookup that also reports which levels were probed."""
        probed = []
        bucket = self.pages.get(addr >> PAGE_SHIFT)
        if bucket:
            probed.append(PAGE)
            rec = bucket.find(addr)
            if rec is not None:
                return rec, probed
        # a chunk object may start in the previous chunk only if it crosses
        # into this one, which the level rule forbids
        bucket = self.chunks.get(addr >> CHUNK_SHIFT)
        if bucket:
            probed.append(CHUNK)
            rec = bucket.find(addr)
            if rec is not None:
                return rec, probed
        if self.huge:
            probed.append(HUGE)
            rec = self.huge.find(addr)
            if rec is not None:
                return rec, probed
        return None, probed

    def lookup(self, addr: int) -> ObjectRecord | None:
        return self.locate(addr)[0]

    def objects_in_range(self, lo: int, hi: int) -> list[ObjectRecord]:
        """Live indexed objects overlapping [lo, hi)."""
        starts, recs = self._live.starts, self._live.recs
        i = bisect.bisect_right(starts, lo) - 1
        j = bisect.bisect_left(starts, hi)
        cand = recs[max(i, 0):j]
        if i >= 0 and recs[i].end <= lo:
            cand = cand[1:]
        return [r for r in cand if r.start in self._level]

    def live_objects(self) -> Iterator[ObjectRecord]:
        for rec in self._live.recs:
            if rec.start in self._level:
                yield rec

    def level_of(self, rec: ObjectRecord) -> str | None:
        return self._level.get(rec.start) if rec.live else None

    # -- callsite accounting ---------------------------------------------------

    def attribute(self, rec: ObjectRecord, miss: bool) -> None:
        site = self._site(rec.callsite)
        site.accesses += 1
        self.accesses += 1
        if miss:
            site.misses += 1
            self.misses += 1

    @property
    def average_ratio(self) -> float:
        return self.misses / self.accesses if self.accesses else 0.0

    def callsite_skip(self, callsite: int) -> bool:
        site = self.callsites.get(callsite)
        if site is None:
            return False
        if not site.skip and site.accesses >= self.min_samples:
            site.skip = site.ratio < self.skip_fraction * self.average_ratio
        return site.skip


# -- miss store ----------------------------------------------------------------

class _Many:
    """Saturated word track: more distinct threads than we bother to keep."""

    def __contains__(self, tid):
        return True

    def __len__(self):
        return 1 << 30

    def __repr__(self):
        return "MANY"


MANY = _Many()


@dataclass
class LineEntry:
    misses: int
    loads: list
    stores: list
    ips: Counter = field(default_factory=Counter)

    def word_threads(self, w: int):
        a, b = self.loads[w], self.stores[w]
        if a is MANY or b is MANY:
            return MANY
        return a | b

    def threads(self):
        out: set[int] = set()
        for w in range(len(self.loads)):
            t = self.word_threads(w)
            if t is MANY:
                return MANY
            out |= t
        return out

    def sharing(self) -> str | None:
        """'true', 'false' or None depending on how threads touched the words."""
        if any(len(self.word_threads(w)) >= 2 for w in range(len(self.loads))):
            return "true"
        if len(self.threads()) >= 2:
            return "false"
        return None


class MissStore:
    def __init__(self, cfg: CacheConfig, word_size: int = 8, track_cap: int = 8):
        if cfg.line_size % word_size:
            raise ValueError("line_size must be a multiple of word_size")
        self.cfg = cfg
        self.word_size = word_size
        self.track_cap = track_cap
        self.words = cfg.line_size // word_size
        self.set_misses = [0] * cfg.num_sets
        self.lines: dict[int, LineEntry] = {}
        self.line_accesses: Counter = Counter()
        self.total = 0

    def record_access(self, addr: int) -> None:
        self.line_accesses[addr & ~(self.cfg.line_size - 1)] += 1

    def update(self, rec) -> None:
        if not rec.miss:
            raise ValueError("only misses go to the miss store")
        ls = self.cfg.line_size
        line = rec.addr & ~(ls - 1)
        self.set_misses[(rec.addr // ls) % self.cfg.num_sets] += 1
        entry = self.lines.get(line)
        if entry is None:
            entry = self.lines[line] = LineEntry(
                0, [set() for _ in range(self.words)], [set() for _ in range(self.words)])
        entry.misses += 1
        entry.ips[rec.ip] += 1
        tracks = entry.stores if rec.kind == "S" else entry.loads
        w = (rec.addr % ls) // self.word_size
        t = tracks[w]
        if t is not MANY:
            t.add(rec.tid)
            if len(t) > self.track_cap:
                tracks[w] = MANY
        self.total += 1

    def set_of(self, line: int) -> int:
        return (line // self.cfg.line_size) % self.cfg.num_sets


# -- instruction store -----------------------------------------------------------

@dataclass
class InstructionStats:
    ip: int
    accesses: int = 0
    load_misses: int = 0
    store_misses: int = 0
    run: int = 0
    sets: Counter = field(default_factory=Counter)
    objects: Counter = field(default_factory=Counter)
    pattern: object = None

    @property
    def misses(self) -> int:
        return self.load_misses + self.store_misses


class InstructionStore:
    def __init__(self):
        self.stats: dict[int, InstructionStats] = {}
        self.total_accesses = 0
        self.total_misses = 0

    def _get(self, ip: int) -> InstructionStats:
        st = self.stats.get(ip)
        if st is None:
            st = self.stats[ip] = InstructionStats(ip)
        return st

    def get(self, ip: int) -> InstructionStats | None:
        return self.stats.get(ip)

    def items(self):
        return self.stats.items()

    def __contains__(self, ip):
        return ip in self.stats

    def __len__(self):
        return len(self.stats)

    def record_sample(self, rec) -> None:
        st = self._get(rec.ip)
        st.accesses += 1
        self.total_accesses += 1
        if not rec.miss:
            st.run = 0

    def record_miss(self, rec, set_idx: int, obj_key=None) -> None:
        st = self._get(rec.ip)
        if rec.kind == "S":
            st.store_misses += 1
        else:
            st.load_misses += 1
        st.sets[set_idx] += 1
        st.run += 1
        if obj_key is not None:
            st.objects[obj_key] += 1
        self.total_misses += 1

    def attach(self, pattern) -> None:
        if pattern is None:
            return
        st = self._get(pattern.ip)
        # a conclusive pattern is never downgraded by a later inconclusive one
        if st.pattern is not None and pattern.outcome.value == "Inconclusive" \
                and st.pattern.outcome.value != "Inconclusive":
            return
        st.pattern = pattern
