"""End-to-end runs: the sampled profiler and the full-trace oracle."""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from .cache_sim import CacheConfig, CacheSim, MissKind
from .classifier import FilterThresholds, IssueReport, Totals, classify
from .profiler_core import (BreakpointConfig, BreakpointHandler, BreakpointLogEntry, FinePattern,
                            MissWindow, SampledRecord, Sampler, SamplerConfig,
                            select_breakpoint_target)
from .stores import InstructionStore, MissStore, ObjectStore
from .trace import AllocEvent, Trace


@dataclass(frozen=True)
class ProfileConfig:
    sampler: SamplerConfig = field(default_factory=SamplerConfig)
    window: int = 1000
    thresholds: FilterThresholds = field(default_factory=FilterThresholds)
    breakpoint: BreakpointConfig = field(default_factory=BreakpointConfig)
    skip_min_samples: int = 1000
    skip_fraction: float = 0.1


@dataclass
class ProfileResult:
    trace_id: str
    config: ProfileConfig
    cache: CacheConfig
    totals: Totals
    reports: list[IssueReport]
    samples: int
    flushes: int
    flushed_misses: int
    breakpoints: list[BreakpointLogEntry]
    patterns: list[FinePattern]
    max_active_breakpoints: int
    misses: MissStore
    objects: ObjectStore
    instructions: InstructionStore


def simulate(trace: Trace) -> np.ndarray:
    """Oracle kind code for every access of the trace."""
    return CacheSim(trace.header.config).run(trace.tid, trace.addr, trace.store)


def run_profile(trace: Trace, cfg: ProfileConfig | None = None,
                kinds: np.ndarray | None = None) -> ProfileResult:
    """Replay ``trace`` through the emulated profiler.

    The profiler never perturbs the simulated caches, so hit/miss outcomes are
    computed for the whole trace up front and only the events the profiler
    actually sees are walked in Python: sampled accesses, heap events and the
    accesses of the instruction currently under a breakpoint.
    """
    cfg = cfg or ProfileConfig()
    cc = trace.header.config
    if kinds is None:
        kinds = simulate(trace)
    miss = kinds != MissKind.HIT
    seq, tid, ipc, addr, store = trace.seq, trace.tid, trace.ip, trace.addr, trace.store
    line_size, nsets = cc.line_size, cc.num_sets

    def set_of(a: int) -> int:
        return (a // line_size) % nsets

    sampled = Sampler(cfg.sampler).select(tid, store)
    objects = ObjectStore(trace.header.globals, cfg.skip_min_samples, cfg.skip_fraction)
    misses = MissStore(cc)
    instr = InstructionStore()
    bp = BreakpointHandler(cfg.breakpoint)
    windows: dict[tuple[int, bool], MissWindow] = {}
    obj_key: dict[int, object] = {}
    patterns: list[FinePattern] = []
    target_pos: dict[int, np.ndarray] = {}
    counts = Counter()
    flushes = flushed = 0
    max_active = 0

    def attach(p):
        if p is not None:
            patterns.append(p)
            instr.attach(p)

    # main stream: (seq, order, payload); heap events and samples never share a seq
    stream = [(h.seq, 0, h) for h in trace.heap]
    stream += [(int(s), 1, int(i)) for s, i in zip(seq[sampled].tolist(), sampled.tolist())]
    stream.sort(key=lambda x: x[0])

    bp_idx = np.zeros(0, dtype=np.int64)
    bp_ptr = 0

    def arm(ip: int, now: int):
        nonlocal bp_idx, bp_ptr
        pos = target_pos.get(ip)
        if pos is None:
            pos = target_pos[ip] = np.flatnonzero(ipc == ip)
        bp_idx = pos
        bp_ptr = int(np.searchsorted(seq[pos], now, side="right"))

    def observe_until(limit: int):
        """Feed breakpoint accesses with seq <= limit; handle expiry on the way."""
        nonlocal bp_ptr
        while bp.active:
            nxt = int(seq[bp_idx[bp_ptr]]) if bp_ptr < len(bp_idx) else None
            exp = bp.expires_at
            if nxt is not None and nxt <= limit and nxt < exp:
                i = int(bp_idx[bp_ptr])
                bp_ptr += 1
                a = int(addr[i])
                rec = objects.lookup(a)
                ev = SampledRecord(nxt, int(tid[i]), int(ipc[i]), a, "S" if store[i] else "L", False)
                attach(bp.observe(ev, set_of(a), a & ~(line_size - 1), rec.oid if rec else None))
            elif exp <= limit:
                attach(bp.expire(exp))
            else:
                break

    for s, order, payload in stream:
        observe_until(s)
        if order == 0:
            if isinstance(payload, AllocEvent):
                objects.insert(payload)
            else:
                objects.free(payload)
            continue
        i = payload
        a = int(addr[i])
        is_store = bool(store[i])
        m = bool(miss[i])
        rec = SampledRecord(s, int(tid[i]), int(ipc[i]), a, "S" if is_store else "L", m)
        counts[(is_store, m)] += 1
        instr.record_sample(rec)
        misses.record_access(a)
        g = objects.lookup_global(a)
        if g is not None:
            key = g.name
        else:
            o = objects.lookup(a)
            key = None
            if o is not None:
                objects.attribute(o, m)
                key = o.oid
        if m:
            obj_key[s] = key
        w = windows.get((rec.tid, is_store))
        if w is None:
            w = windows[(rec.tid, is_store)] = MissWindow(cfg.window, cfg.thresholds.window_ratio)
        batch = w.update(rec)
        if not batch:
            continue
        flushes += 1
        flushed += len(batch)
        for r in batch:
            misses.update(r)
            instr.record_miss(r, set_of(r.addr), obj_key.pop(r.seq, None))
        ip, expired = select_breakpoint_target(instr, bp, s, batch, set_of)
        if expired is not None:
            patterns.append(expired)
        if ip is not None:
            arm(ip, s)
        max_active = max(max_active, int(bp.active))

    last = int(seq[-1]) if len(seq) else 0
    if trace.heap:
        last = max(last, trace.heap[-1].seq)
    observe_until(last)
    if bp.active:
        attach(bp.expire(last, reason="end"))

    totals = Totals(
        load_accesses=counts[(False, False)] + counts[(False, True)],
        load_misses=counts[(False, True)],
        store_accesses=counts[(True, False)] + counts[(True, True)],
        store_misses=counts[(True, True)],
    )
    reports = classify(totals, misses, objects, instr, cfg.thresholds, trace.header.symbols)
    return ProfileResult(
        trace_id=trace.trace_id(), config=cfg, cache=cc, totals=totals, reports=reports,
        samples=len(sampled), flushes=flushes, flushed_misses=flushed,
        breakpoints=list(bp.log), patterns=patterns, max_active_breakpoints=max_active,
        misses=misses, objects=objects, instructions=instr)


# -- oracle ----------------------------------------------------------------------

@dataclass
class OracleResult:
    trace_id: str
    cache: CacheConfig
    accesses: int
    kinds: dict[str, int]
    set_misses: list[int]
    line_misses: dict[int, int]
    load_miss_ratio: float
    store_miss_ratio: float
    warm_load_miss_ratio: float
    warm_store_miss_ratio: float
    warmup: float

    @property
    def total_misses(self) -> int:
        return sum(self.kinds.values())

    def dominant(self, exclude_compulsory: bool = True) -> str | None:
        ks = {k: v for k, v in self.kinds.items() if not (exclude_compulsory and k == "Compulsory")}
        if not any(ks.values()):
            return None
        return max(ks.items(), key=lambda kv: kv[1])[0]


def _ratio(m: np.ndarray, sel: np.ndarray) -> float:
    n = int(sel.sum())
    return float(m[sel].sum()) / n if n else 0.0


def run_oracle(trace: Trace, kinds: np.ndarray | None = None, warmup: float = 0.1) -> OracleResult:
    """Unsampled ground truth: every access labelled by the simulator."""
    if not 0 <= warmup < 1:
        raise ValueError("warmup must be in [0, 1)")
    cc = trace.header.config
    if kinds is None:
        kinds = simulate(trace)
    m = kinds != MissKind.HIT
    counts = np.bincount(kinds.astype(np.int64), minlength=len(MissKind))
    lines = trace.addr[m] >> cc.line_shift
    set_hist = np.bincount(lines % cc.num_sets, minlength=cc.num_sets) if lines.size else \
        np.zeros(cc.num_sets, dtype=np.int64)
    uniq, cnt = np.unique(lines, return_counts=True)
    warm = np.arange(len(trace)) >= int(len(trace) * warmup)
    loads, stores = ~trace.store, trace.store
    return OracleResult(
        trace_id=trace.trace_id(),
        cache=cc,
        accesses=len(trace),
        kinds={k.label: int(counts[k]) for k in MissKind if k is not MissKind.HIT},
        set_misses=set_hist.tolist(),
        line_misses={int(u) << cc.line_shift: int(c) for u, c in zip(uniq.tolist(), cnt.tolist())},
        load_miss_ratio=_ratio(m, loads),
        store_miss_ratio=_ratio(m, stores),
        warm_load_miss_ratio=_ratio(m, loads & warm),
        warm_store_miss_ratio=_ratio(m, stores & warm),
        warmup=warmup,
    )
