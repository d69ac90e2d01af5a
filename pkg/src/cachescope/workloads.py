"""Synthetic trace generators, one per bug class.

Each generator scripts both the "application" (its access stream) and the
"allocator" (where objects land), and writes the intended ground truth into
the trace header as ``# GT key=value`` lines.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from .cache_sim import CacheConfig
from .trace import AllocEvent, FreeEvent, GlobalRegion, Trace, TraceHeader

HEAP_BASE = 0x10000000
GLOBAL_BASE = 0x00600000
TEXT_BASE = 0x00401000

ELEM = 4  # int elements in the array loops


class WorkloadError(ValueError):
    pass


class WorkloadKind(enum.Enum):
    FALSE_SHARING = "false-sharing"
    TRUE_SHARING = "true-sharing"
    CONFLICT_STRIDE = "conflict-stride"
    CAPACITY_LOOPS = "capacity"
    ALLOC_FALSE_SHARING = "alloc-false-sharing"
    ALLOC_CONFLICT = "alloc-conflict"
    BASELINE = "baseline"
    MINOR_ISSUE = "minor-issue"

    @property
    def title(self) -> str:
        return "".join(w.capitalize() for w in self.name.split("_"))

    @classmethod
    def parse(cls, text: str) -> "WorkloadKind":
        t = text.strip().lower().replace("_", "-")
        for k in cls:
            if t in (k.value, k.title.lower(), k.name.lower().replace("_", "-")):
                return k
        raise WorkloadError(f"unknown workload kind {text!r}")


SIX_CLASSES = (
    WorkloadKind.FALSE_SHARING,
    WorkloadKind.TRUE_SHARING,
    WorkloadKind.CONFLICT_STRIDE,
    WorkloadKind.CAPACITY_LOOPS,
    WorkloadKind.ALLOC_FALSE_SHARING,
    WorkloadKind.ALLOC_CONFLICT,
)

# (threads, iterations) sized so that default PMU periods still collect
# enough samples for a stable verdict
_DEFAULTS = {
    WorkloadKind.FALSE_SHARING: (2, 300_000),
    WorkloadKind.TRUE_SHARING: (4, 240_000),
    WorkloadKind.CONFLICT_STRIDE: (1, 12),
    WorkloadKind.CAPACITY_LOOPS: (1, 40),
    WorkloadKind.ALLOC_FALSE_SHARING: (2, 300_000),
    WorkloadKind.ALLOC_CONFLICT: (1, 16_000),
    WorkloadKind.BASELINE: (2, 40),
    WorkloadKind.MINOR_ISSUE: (1, 3_150),
}


@dataclass(frozen=True)
class WorkloadSpec:
    kind: WorkloadKind
    threads: int | None = None
    iterations: int | None = None
    seed: int = 0
    scale: int = 4              # capacity: array size in multiples of the cache
    lines: int | None = None    # conflict-stride: distinct lines per set (default assoc + 1)
    repeats: int = 16           # conflict-stride: passes over a set before moving on
    object_size: int | None = None  # alloc cases: 32 (false sharing) / 48 (conflict)
    objects: int = 40           # alloc-conflict: number of same-set objects
    struct_size: int = 52       # false-sharing: per-thread struct stride

    def resolved(self) -> "WorkloadSpec":
        t, it = _DEFAULTS[self.kind]
        osz = self.object_size
        if osz is None:
            osz = 48 if self.kind is WorkloadKind.ALLOC_CONFLICT else 32
        spec = WorkloadSpec(
            self.kind,
            threads=self.threads if self.threads is not None else t,
            iterations=self.iterations if self.iterations is not None else it,
            seed=self.seed, scale=self.scale, lines=self.lines, repeats=self.repeats,
            object_size=osz, objects=self.objects, struct_size=self.struct_size,
        )
        if spec.threads < 1:
            raise WorkloadError("threads must be >= 1")
        if spec.iterations < 1:
            raise WorkloadError("iterations must be >= 1")
        return spec


@dataclass
class GroundTruth:
    workload: str
    miss_type: str              # expected IssueReport label, "none" for clean traces
    oracle_kind: str            # dominant MissKind label intended in the oracle
    ips: tuple[int, ...] = ()
    statements: tuple[str, ...] = ()
    callsites: tuple[int, ...] = ()
    regions: tuple[str, ...] = ()
    expect_report: bool = True

    @property
    def origin(self) -> str:
        if self.miss_type == "none":
            return "none"
        return "allocator" if self.miss_type.startswith("Allocator") else "application"

    def to_meta(self) -> dict[str, str]:
        return {
            "kind": self.workload,
            "workload": self.workload,
            "miss_type": self.miss_type,
            "origin": self.origin,
            "oracle_kind": self.oracle_kind,
            "ips": ",".join(f"0x{i:x}" for i in self.ips),
            "statements": ",".join(self.statements),
            "callsites": ",".join(str(c) for c in self.callsites),
            "regions": ",".join(self.regions),
            "expect_report": "1" if self.expect_report else "0",
        }

    @classmethod
    def from_meta(cls, meta: dict[str, str]) -> "GroundTruth | None":
        name = meta.get("workload") or meta.get("kind")
        if not name:
            return None

        def split(key):
            v = meta.get(key, "")
            return tuple(x for x in v.split(",") if x)

        return cls(
            workload=name,
            miss_type=meta.get("miss_type", "none"),
            oracle_kind=meta.get("oracle_kind", ""),
            ips=tuple(int(x, 16) for x in split("ips")),
            statements=split("statements"),
            callsites=tuple(int(x) for x in split("callsites")),
            regions=split("regions"),
            expect_report=meta.get("expect_report", "1") == "1",
        )


@dataclass
class _Builder:
    cfg: CacheConfig
    segments: list = field(default_factory=list)
    heap: list = field(default_factory=list)   # (access position, event without seq)
    symbols: dict = field(default_factory=dict)
    globals: list = field(default_factory=list)
    _n: int = 0

    def sym(self, ip: int, stmt: str) -> int:
        self.symbols[ip] = stmt
        return ip

    def alloc(self, tid, callsite, addr, size):
        self.heap.append((self._n, "M", tid, callsite, addr, size))

    def free(self, tid, addr):
        self.heap.append((self._n, "F", tid, addr))

    def accesses(self, tid, ip, addr, store):
        tid, ip, addr, store = np.broadcast_arrays(tid, ip, addr, store)
        self.segments.append((tid.ravel(), ip.ravel(), addr.ravel(), store.ravel()))
        self._n += tid.size

    def build(self, meta: dict[str, str]) -> Trace:
        cols = [np.concatenate([s[k] for s in self.segments]) if self.segments
                else np.zeros(0, np.int64) for k in range(4)]
        n = cols[0].shape[0]
        # heap event before access position p shifts every later access by one
        pos = np.array([h[0] for h in self.heap], dtype=np.int64)
        shift = np.zeros(n + 1, dtype=np.int64)
        np.add.at(shift, pos, 1)
        shift = np.cumsum(shift)[:n]
        seq = np.arange(1, n + 1, dtype=np.int64) + shift
        heap = []
        for k, h in enumerate(self.heap):
            s = int(h[0]) + k + 1
            if h[1] == "M":
                heap.append(AllocEvent(s, h[2], h[3], h[4], h[5]))
            else:
                heap.append(FreeEvent(s, h[2], h[3]))
        header = TraceHeader(self.cfg, list(self.globals), dict(self.symbols), meta)
        return Trace(header, seq, cols[0], cols[1], cols[2], cols[3].astype(bool), heap)


def _interleave(rng: np.random.Generator, blocks: np.ndarray) -> np.ndarray:
    """Round-robin over threads with seed-driven jitter.

    ``blocks`` has shape (threads, rounds, k, ...); returns rounds*threads*k
    rows where each round runs every thread's k-access block once, in a
    thread order perturbed by neighbour swaps.
    """
    t, r = blocks.shape[:2]
    keys = np.arange(t)[None, :] + rng.uniform(-0.75, 0.75, size=(r, t))
    order = np.argsort(keys, axis=1, kind="stable")
    picked = blocks[order, np.arange(r)[:, None]]   # (r, t, k, ...)
    return picked.reshape((-1,) + blocks.shape[3:])


def _threaded(b: _Builder, rng, per_thread: list[tuple]) -> None:
    """per_thread[t] = (ip[rounds, k], addr[rounds, k], store[rounds, k])."""
    t = len(per_thread)
    rounds, k = per_thread[0][0].shape
    tid = np.broadcast_to(np.arange(t)[:, None, None], (t, rounds, k))
    ip = np.stack([p[0] for p in per_thread])
    addr = np.stack([p[1] for p in per_thread])
    store = np.stack([p[2] for p in per_thread])
    stacked = np.stack([tid, ip, addr, store.astype(np.int64)], axis=-1)
    flat = _interleave(rng, stacked)
    b.accesses(flat[:, 0], flat[:, 1], flat[:, 2], flat[:, 3].astype(bool))


def _private_buffer(tid: int) -> int:
    # 64KB-spaced per-thread scratch, offset so threads do not share sets
    return HEAP_BASE + 0x4000800 + tid * 0x10000 + tid * 0x400


# -- generators ---------------------------------------------------------------

def _capacity(spec: WorkloadSpec, cfg: CacheConfig, rng, b: _Builder) -> GroundTruth:
    n = spec.scale * cfg.capacity // ELEM
    if n < 1:
        raise WorkloadError("scale too small")
    ip_a = b.sym(TEXT_BASE + 0x100, "capacity.c:12")
    ip_b = b.sym(TEXT_BASE + 0x140, "capacity.c:16")
    per_thread = []
    size = n * ELEM
    for t in range(spec.threads):
        alpha = HEAP_BASE + t * 4 * size
        beta = alpha + 2 * size
        b.alloc(t, 1, alpha, size)
        b.alloc(t, 2, beta, size)
        idx = np.arange(n, dtype=np.int64) * ELEM
        addr = np.concatenate([alpha + idx, beta + idx])
        ip = np.concatenate([np.full(n, ip_a), np.full(n, ip_b)])
        per_thread.append((ip, addr))
    # a whole pass per round keeps each loop sequential within a thread
    reps = spec.iterations
    blocks = [(np.tile(ip, (reps, 1)), np.tile(addr, (reps, 1)), np.zeros((reps, ip.size), bool))
              for ip, addr in per_thread]
    _threaded(b, rng, blocks)
    return GroundTruth("CapacityLoops", "AppCapacity", "Capacity", ips=(ip_a, ip_b),
                       statements=("capacity.c:12", "capacity.c:16"), callsites=(1, 2))


def _conflict_stride(spec: WorkloadSpec, cfg: CacheConfig, rng, b: _Builder) -> GroundTruth:
    lines = spec.lines if spec.lines is not None else cfg.associativity + 1
    if lines <= cfg.associativity:
        raise WorkloadError(
            f"conflict-stride needs more distinct lines per set ({lines}) than the "
            f"associativity ({cfg.associativity})")
    if spec.repeats < 1:
        raise WorkloadError("repeats must be >= 1")
    stride = cfg.num_sets * cfg.line_size
    base = HEAP_BASE
    b.alloc(0, 3, base, lines * stride)
    ip_ld = b.sym(TEXT_BASE + 0x200, "Grid.cpp:262")
    ip_st = b.sym(TEXT_BASE + 0x208, "Grid.cpp:262")
    # one sweep: set 0 lines x repeats, then set 1, ...
    s = np.arange(cfg.num_sets, dtype=np.int64)[:, None, None]
    j = np.arange(lines, dtype=np.int64)[None, None, :]
    addr = (base + s * cfg.line_size + j * stride) + np.zeros((1, spec.repeats, 1), np.int64)
    addr = addr.reshape(-1)
    sweep = np.repeat(addr, 2)
    ips = np.tile([ip_ld, ip_st], addr.size)
    st = np.tile([False, True], addr.size)
    reps = spec.iterations
    blocks = [(np.tile(ips, (reps, 1)), np.tile(sweep, (reps, 1)), np.tile(st, (reps, 1)))]
    _threaded(b, rng, blocks)
    return GroundTruth("ConflictStride", "AppConflict", "Conflict", ips=(ip_ld, ip_st),
                       statements=("Grid.cpp:262",), callsites=(3,))


def _false_sharing(spec: WorkloadSpec, cfg: CacheConfig, rng, b: _Builder) -> GroundTruth:
    t = spec.threads
    if t < 2:
        raise WorkloadError("false sharing needs at least 2 threads")
    ss = spec.struct_size
    if ss < 24 or ss % 4:
        raise WorkloadError("struct_size must be a multiple of 4 and >= 24")
    args = HEAP_BASE
    b.alloc(0, 10, args, t * ss)
    # read-modify-write of the first field and a plain store to the last
    # 8-byte slot of each unpadded struct; with two threads both first
    # fields land on line 0
    ld = b.sym(TEXT_BASE + 0x310, "linear_regression.c:97")
    st = b.sym(TEXT_BASE + 0x314, "linear_regression.c:97")
    st_last = b.sym(TEXT_BASE + 0x330, "linear_regression.c:99")
    r = spec.iterations
    blocks = []
    for tid in range(t):
        a = args + tid * ss
        blocks.append((np.tile([ld, st, st_last], (r, 1)),
                       np.tile([a, a, a + ss - 8], (r, 1)),
                       np.tile([False, True, True], (r, 1))))
    _threaded(b, rng, blocks)
    return GroundTruth("FalseSharing", "AppFalseSharing", "Coherence", ips=(ld, st, st_last),
                       statements=("linear_regression.c:97", "linear_regression.c:99"),
                       callsites=(10,))


def _true_sharing(spec: WorkloadSpec, cfg: CacheConfig, rng, b: _Builder) -> GroundTruth:
    t = spec.threads
    if t < 2:
        raise WorkloadError("true sharing needs at least 2 threads")
    counter = GLOBAL_BASE + 0x40
    b.globals.append(GlobalRegion("g_total", counter, 8))
    ip_ld = b.sym(TEXT_BASE + 0x410, "histogram.c:91")
    ip_st = b.sym(TEXT_BASE + 0x414, "histogram.c:91")
    r = spec.iterations
    block = (np.tile([ip_ld, ip_st], (r, 1)), np.full((r, 2), counter),
             np.tile([False, True], (r, 1)))
    _threaded(b, rng, [block] * t)
    return GroundTruth("TrueSharing", "TrueSharing", "Coherence", ips=(ip_ld, ip_st),
                       statements=("histogram.c:91",), regions=("g_total",))


def _alloc_false_sharing(spec: WorkloadSpec, cfg: CacheConfig, rng, b: _Builder) -> GroundTruth:
    t = spec.threads
    if t < 2:
        raise WorkloadError("allocator false sharing needs at least 2 threads")
    osz = spec.object_size
    if osz * 2 > cfg.line_size:
        raise WorkloadError(
            f"objects of {osz} bytes cannot share a {cfg.line_size}-byte line")
    base = HEAP_BASE + 0x100000
    # thread 0 allocates from main(), the rest from the worker; the allocator
    # hands out consecutive chunks so neighbours share a line
    objs = []
    for tid in range(t):
        addr = base + tid * osz
        b.alloc(tid, 20 if tid == 0 else 21, addr, osz)
        objs.append(addr)
    # a scratch allocation that comes and goes exercises the free path
    scratch = base + 0x10000
    b.alloc(0, 22, scratch, 256)
    ip_pv = b.sym(TEXT_BASE + 0x500, "cache-thrash.cpp:80")
    ip_ld = b.sym(TEXT_BASE + 0x510, "cache-thrash.cpp:84")
    ip_st = b.sym(TEXT_BASE + 0x514, "cache-thrash.cpp:84")
    b.accesses(0, ip_pv, scratch + np.arange(0, 256, 8), False)
    b.free(0, scratch)
    r = spec.iterations
    blocks = [(np.tile([ip_ld, ip_st], (r, 1)), np.full((r, 2), o), np.tile([False, True], (r, 1)))
              for o in objs]
    _threaded(b, rng, blocks)
    return GroundTruth("AllocFalseSharing", "AllocatorFalseSharing", "Coherence",
                       ips=(ip_ld, ip_st), statements=("cache-thrash.cpp:84",),
                       callsites=(20, 21))


def _alloc_conflict(spec: WorkloadSpec, cfg: CacheConfig, rng, b: _Builder) -> GroundTruth:
    n = spec.objects
    osz = spec.object_size
    if n <= cfg.associativity:
        raise WorkloadError(
            f"alloc-conflict needs more same-set objects ({n}) than the associativity "
            f"({cfg.associativity})")
    if osz > cfg.line_size or osz < 16:
        raise WorkloadError("object_size must be in [16, line_size]")
    stride = cfg.num_sets * cfg.line_size
    base = HEAP_BASE + 0x200000
    # the allocator's size-class pages line every object up on one set
    objs = base + np.arange(n, dtype=np.int64) * stride
    for k, o in enumerate(objs.tolist()):
        b.alloc(0, 30 + (k % 2), o, osz)
    ip_f0 = b.sym(TEXT_BASE + 0x600, "raytrace.c:412")
    ip_f1 = b.sym(TEXT_BASE + 0x608, "raytrace.c:413")
    ip_ray = b.sym(TEXT_BASE + 0x620, "raytrace.c:405")
    ray = _private_buffer(0)
    b.alloc(0, 32, ray, 64)
    per_obj_ip = np.array([ip_ray, ip_f0, ip_f1])
    reps = spec.iterations
    ip = np.tile(per_obj_ip, n)
    addr = np.stack([np.full(n, ray), objs, objs + 8], 1).reshape(-1)
    blocks = [(np.tile(ip, (reps, 1)), np.tile(addr, (reps, 1)), np.zeros((reps, ip.size), bool))]
    _threaded(b, rng, blocks)
    return GroundTruth("AllocConflict", "AllocatorConflict", "Conflict", ips=(ip_f0, ip_f1),
                       statements=("raytrace.c:412", "raytrace.c:413"), callsites=(30, 31))


def _baseline(spec: WorkloadSpec, cfg: CacheConfig, rng, b: _Builder) -> GroundTruth:
    # each thread sweeps a private working set of a quarter of the cache
    ws = cfg.capacity // 4 // ELEM
    ip_ld = b.sym(TEXT_BASE + 0x700, "clean.c:20")
    ip_st = b.sym(TEXT_BASE + 0x704, "clean.c:21")
    blocks = []
    for tid in range(spec.threads):
        arr = HEAP_BASE + tid * 0x100000
        b.alloc(tid, 40, arr, ws * ELEM)
        i = np.arange(ws, dtype=np.int64)
        ip = np.stack([np.full(ws, ip_ld), np.full(ws, ip_st)], 1).reshape(-1)
        addr = np.repeat(arr + i * ELEM, 2)
        st = np.tile([False, True], ws)
        blocks.append((np.tile(ip, (spec.iterations, 1)), np.tile(addr, (spec.iterations, 1)),
                       np.tile(st, (spec.iterations, 1))))
    _threaded(b, rng, blocks)
    return GroundTruth("Baseline", "none", "Hit", expect_report=False)


def _minor_issue(spec: WorkloadSpec, cfg: CacheConfig, rng, b: _Builder) -> GroundTruth:
    """A short same-set burst hidden in a long, mostly clean run.

    128 load sites sweep a resident array, so their only misses are cold
    first touches spread thinly over many ips.  A trickle of first-touch
    stores from 64 store sites lifts the store miss ratio over the global
    gate without any single store site reaching 1% of the misses.  The burst
    holds well over 1% of the misses but under 0.01% of the accesses.
    """
    steps = spec.iterations
    sites, site_lines = 128, 2
    store_sites, store_lines = 64, 256
    conflict_lines = cfg.associativity + 1
    stride = cfg.num_sets * cfg.line_size
    burst = 4 * conflict_lines
    words = site_lines * cfg.line_size // 8

    res = HEAP_BASE
    b.alloc(0, 50, res, sites * site_lines * cfg.line_size)
    out = HEAP_BASE + 0x1000000
    b.alloc(0, 51, out, store_lines * cfg.line_size)
    mat = HEAP_BASE + 0x2000000
    b.alloc(0, 52, mat, conflict_lines * stride)

    ld_ips = np.array([b.sym(TEXT_BASE + 0x1000 + 8 * k, f"streamcluster.cpp:{300 + k}")
                       for k in range(sites)])
    st_ips = [b.sym(TEXT_BASE + 0x2000 + 8 * k, f"streamcluster.cpp:{500 + k}")
              for k in range(store_sites)]
    ip_g = b.sym(TEXT_BASE + 0x3000, "streamcluster.cpp:720")

    bases = res + np.arange(sites, dtype=np.int64) * site_lines * cfg.line_size
    every = max(1, steps // store_lines)
    half = steps // 2
    k = 0
    for j in range(steps):
        b.accesses(0, ld_ips, bases + (j % words) * 8, False)
        if j % every == 0 and k < store_lines:
            b.accesses(0, st_ips[k % store_sites], out + k * cfg.line_size, True)
            k += 1
        if j == half:
            g = mat + (np.arange(burst) % conflict_lines) * stride
            b.accesses(0, ip_g, g, False)
    return GroundTruth("MinorIssue", "AppConflict", "Conflict", ips=(int(ip_g),),
                       statements=("streamcluster.cpp:720",), callsites=(52,),
                       expect_report=False)


_GENERATORS = {
    WorkloadKind.CAPACITY_LOOPS: _capacity,
    WorkloadKind.CONFLICT_STRIDE: _conflict_stride,
    WorkloadKind.FALSE_SHARING: _false_sharing,
    WorkloadKind.TRUE_SHARING: _true_sharing,
    WorkloadKind.ALLOC_FALSE_SHARING: _alloc_false_sharing,
    WorkloadKind.ALLOC_CONFLICT: _alloc_conflict,
    WorkloadKind.BASELINE: _baseline,
    WorkloadKind.MINOR_ISSUE: _minor_issue,
}


def generate(spec: WorkloadSpec, cfg: CacheConfig | None = None) -> Trace:
    """Build the trace for ``spec``; deterministic in ``spec.seed``."""
    cfg = cfg or CacheConfig()
    spec = spec.resolved()
    if spec.threads > cfg.num_cores:
        raise WorkloadError(f"{spec.threads} threads but only {cfg.num_cores} cores")
    rng = np.random.default_rng([spec.seed, list(WorkloadKind).index(spec.kind)])
    b = _Builder(cfg)
    gt = _GENERATORS[spec.kind](spec, cfg, rng, b)
    meta = gt.to_meta()
    meta.update(seed=str(spec.seed), threads=str(spec.threads), iterations=str(spec.iterations))
    return b.build(meta)


def ground_truth(trace: Trace) -> GroundTruth | None:
    return GroundTruth.from_meta(trace.header.meta)
