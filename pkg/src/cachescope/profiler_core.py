"""Hybrid sampling: periodic access sampling, the miss-ratio window and the
emulated one-at-a-time instruction breakpoint."""

from __future__ import annotations

import enum
import math
from collections import Counter, deque
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np


@dataclass(frozen=True)
class SamplerConfig:
    load_period: int = 20_000
    store_period: int = 50_000
    period_jitter: float = 0.10
    seed: int = 0

    def __post_init__(self):
        if self.load_period < 1 or self.store_period < 1:
            raise ValueError("sampling periods must be >= 1")
        if not 0 <= self.period_jitter < 1:
            raise ValueError("period_jitter must be in [0, 1)")


def period_bounds(period: int, jitter: float) -> tuple[int, int]:
    lo = max(1, math.ceil(round(period * (1 - jitter), 9)))
    hi = max(lo, math.floor(round(period * (1 + jitter), 9)))
    return lo, hi


class SampledRecord(NamedTuple):
    seq: int
    tid: int
    ip: int
    addr: int
    kind: str   # "L" / "S"
    miss: bool

    @property
    def is_store(self) -> bool:
        return self.kind == "S"


class Sampler:
    """Per-thread, per-kind countdown counters with jittered resets.

    Every (thread, kind) lane owns its own RNG stream so that threads never
    march in lock-step over the same instructions.  ``step`` and ``select``
    consume those streams identically, so the streaming and batch paths pick
    the same accesses.
    """

    def __init__(self, cfg: SamplerConfig | None = None):
        self.cfg = cfg or SamplerConfig()
        self._bounds = (period_bounds(self.cfg.load_period, self.cfg.period_jitter),
                        period_bounds(self.cfg.store_period, self.cfg.period_jitter))
        self._lanes: dict[tuple[int, bool], list] = {}

    def _rng(self, tid: int, is_store: bool) -> np.random.Generator:
        return np.random.default_rng([self.cfg.seed, int(tid), int(is_store)])

    def _draw(self, rng, is_store: bool) -> int:
        lo, hi = self._bounds[is_store]
        return lo + int(rng.random() * (hi - lo + 1))

    def should_sample(self, tid: int, is_store: bool) -> bool:
        lane = self._lanes.get((tid, is_store))
        if lane is None:
            rng = self._rng(tid, is_store)
            lane = self._lanes[(tid, is_store)] = [self._draw(rng, is_store), rng]
        lane[0] -= 1
        if lane[0] == 0:
            lane[0] = self._draw(lane[1], is_store)
            return True
        return False

    def step(self, ev, miss: bool) -> SampledRecord | None:
        if self.should_sample(ev.tid, ev.kind == "S"):
            return SampledRecord(ev.seq, ev.tid, ev.ip, ev.addr, ev.kind, bool(miss))
        return None

    def select(self, tids: np.ndarray, stores: np.ndarray) -> np.ndarray:
        """Indices of the sampled accesses of a fresh sampler over a whole stream."""
        tids = np.asarray(tids, dtype=np.int64)
        stores = np.asarray(stores, dtype=bool)
        if tids.size == 0:
            return np.zeros(0, dtype=np.int64)
        lane = tids * 2 + stores
        order = np.argsort(lane, kind="stable")
        keys, starts, counts = np.unique(lane[order], return_index=True, return_counts=True)
        picked = []
        for key, start, n in zip(keys.tolist(), starts.tolist(), counts.tolist()):
            tid, is_store = key >> 1, bool(key & 1)
            lo, hi = self._bounds[is_store]
            m = n // lo + 2
            u = self._rng(tid, is_store).random(m)
            pos = np.cumsum(lo + (u * (hi - lo + 1)).astype(np.int64))
            pos = pos[pos <= n]
            picked.append(order[start + pos - 1])
        return np.sort(np.concatenate(picked))


class MissWindow:
    """Circular buffer of the most recent sampled records of one thread/kind.

    When the miss ratio strictly exceeds ``threshold`` every buffered miss
    that has not been handed out yet is returned; each record is flushed at
    most once. The ratio is taken over the window capacity, so a cold buffer
    holding a lone first-touch miss does not count as a 100% miss rate.
    """

    def __init__(self, size: int = 1000, threshold: float = 0.005):
        if size < 1:
            raise ValueError("window size must be >= 1")
        if not 0 <= threshold <= 1:
            raise ValueError("threshold must be in [0, 1]")
        self.size = size
        self.threshold = threshold
        self._buf: deque = deque()
        self._pending: deque = deque()   # unflushed misses, oldest first
        self.misses = 0

    def __len__(self) -> int:
        return len(self._buf)

    @property
    def ratio(self) -> float:
        return self.misses / self.size

    def update(self, rec: SampledRecord) -> list[SampledRecord] | None:
        if len(self._buf) == self.size:
            old = self._buf.popleft()
            if old.miss:
                self.misses -= 1
                if self._pending and self._pending[0] is old:
                    self._pending.popleft()
        self._buf.append(rec)
        if rec.miss:
            self.misses += 1
            self._pending.append(rec)
        if self._pending and self.misses > self.threshold * self.size:
            batch = list(self._pending)
            self._pending.clear()
            return batch
        return None


# -- breakpoints ----------------------------------------------------------------

class FineOutcome(str, enum.Enum):
    SAME_SET_CONFLICT = "SameSetConflict"
    MULTI_SET_CAPACITY = "MultiSetCapacity"
    INCONCLUSIVE = "Inconclusive"


@dataclass(frozen=True)
class BreakpointConfig:
    max_accesses: int = 64
    same_set: int = 8
    expiry_events: int = 100_000
    k_consec: int = 4
    t_set: int = 8

    def __post_init__(self):
        if min(self.max_accesses, self.same_set, self.expiry_events, self.k_consec, self.t_set) < 1:
            raise ValueError("breakpoint parameters must be >= 1")


@dataclass(frozen=True)
class FinePattern:
    ip: int
    outcome: FineOutcome
    dominant_set: int | None
    objects: tuple[int, ...]     # distinct heap object ids touched
    accesses: int
    reason: str                  # "same-set", "cap", "expiry", "end"


class BreakpointLogEntry(NamedTuple):
    ip: int
    install_seq: int
    end_seq: int
    reason: str


class BreakpointHandler:
    """A single emulated execute breakpoint shared by all threads.

    Collects every access of the target instruction.  Same-set evidence is
    counted in distinct lines: re-touching one line says nothing about set
    pressure, and sequential element walks would otherwise look like 16
    same-set accesses per line.
    """

    def __init__(self, cfg: BreakpointConfig | None = None):
        self.cfg = cfg or BreakpointConfig()
        self.target: int | None = None
        self.install_seq = 0
        self.collected: list[tuple[int, int, int, int, int | None]] = []
        self.log: list[BreakpointLogEntry] = []
        self._run_set = -1
        self._run_lines: set[int] = set()
        self._set_lines: dict[int, set[int]] = {}

    @property
    def active(self) -> bool:
        return self.target is not None

    @property
    def expires_at(self) -> int:
        return self.install_seq + self.cfg.expiry_events

    def is_expired(self, now: int) -> bool:
        return self.active and now - self.install_seq >= self.cfg.expiry_events

    def install(self, ip: int, seq: int) -> None:
        if self.active:
            raise RuntimeError("a breakpoint is already installed")
        self.target = ip
        self.install_seq = seq
        self.collected = []
        self._run_set = -1
        self._run_lines = set()
        self._set_lines = {}

    def observe(self, ev, set_idx: int, line: int, obj: int | None = None) -> FinePattern | None:
        """Feed one access; returns the finished pattern when the breakpoint retires."""
        if not self.active or ev.ip != self.target:
            return None
        if self.is_expired(ev.seq):
            return self.expire(ev.seq)
        self.collected.append((ev.addr, ev.tid, set_idx, line, obj))
        self._set_lines.setdefault(set_idx, set()).add(line)
        if set_idx != self._run_set:
            self._run_set = set_idx
            self._run_lines = set()
        self._run_lines.add(line)
        if len(self._run_lines) >= self.cfg.same_set:
            return self._finish(ev.seq, FineOutcome.SAME_SET_CONFLICT, set_idx, "same-set")
        if len(self.collected) >= self.cfg.max_accesses:
            return self._judge(ev.seq, "cap")
        return None

    def expire(self, now: int, reason: str = "expiry") -> FinePattern | None:
        if not self.active:
            return None
        if len(self.collected) < self.cfg.same_set:
            return self._finish(now, FineOutcome.INCONCLUSIVE, None, reason)
        return self._judge(now, reason)

    def _judge(self, now: int, reason: str) -> FinePattern:
        best = max(self._set_lines.items(), key=lambda kv: (len(kv[1]), -kv[0]))
        if len(best[1]) >= self.cfg.same_set:
            return self._finish(now, FineOutcome.SAME_SET_CONFLICT, best[0], reason)
        return self._finish(now, FineOutcome.MULTI_SET_CAPACITY, None, reason)

    def _finish(self, now: int, outcome: FineOutcome, dom: int | None, reason: str) -> FinePattern:
        objs = tuple(sorted({c[4] for c in self.collected if c[4] is not None}))
        pat = FinePattern(self.target, outcome, dom, objs, len(self.collected), reason)
        self.log.append(BreakpointLogEntry(self.target, self.install_seq, now, reason))
        self.target = None
        self.collected = []
        return pat


def select_breakpoint_target(instr, bp: BreakpointHandler, now: int,
                             batch: list[SampledRecord] | None = None,
                             set_of=None) -> tuple[int | None, FinePattern | None]:
    """Pick and install the next breakpoint after a flush.

    Candidates are instructions whose last ``k_consec`` flushed samples were
    all misses, else instructions that put ``t_set`` misses on one set within
    this flush.  Instructions that already have a conclusive pattern are not
    re-armed.  Returns (installed ip, pattern finalized by expiry).
    """
    expired = None
    if bp.active:
        if not bp.is_expired(now):
            return None, None
        expired = bp.expire(now)
        instr.attach(expired)

    def eligible(ip):
        st = instr.get(ip)
        return st is None or st.pattern is None or st.pattern.outcome is FineOutcome.INCONCLUSIVE

    def rank(ip):
        st = instr.get(ip)
        return (-(st.misses if st else 0), ip)

    runs = [ip for ip, st in instr.items() if st.run >= bp.cfg.k_consec and eligible(ip)]
    if not runs and batch and set_of is not None:
        per = Counter((r.ip, set_of(r.addr)) for r in batch)
        runs = sorted({ip for (ip, _), n in per.items() if n >= bp.cfg.t_set and eligible(ip)})
    if not runs:
        return None, expired
    ip = min(runs, key=rank)
    bp.install(ip, now)
    return ip, expired
