"""Multi-core set-associative cache model with write-invalidate coherence.

Each simulated thread owns a private cache.  Alongside the real
set-associative state every core keeps a fully-associative LRU shadow of the
same capacity, which is what lets every miss be labelled with its textbook
kind (compulsory / capacity / conflict / coherence).

The per-access work lives in a numba kernel so that multi-million access
traces can be replayed at desk scale; ``CacheSim.access`` and ``CacheSim.run``
are thin wrappers over the same kernel.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np
from numba import njit, typed, types

# markers share a 64-bit word with the sharer mask
MAX_CORES = 32


class MissKind(enum.IntEnum):
    HIT = 0
    COMPULSORY = 1
    CAPACITY = 2
    CONFLICT = 3
    COHERENCE = 4

    @property
    def label(self) -> str:
        return self.name.capitalize()


def _is_pow2(n: int) -> bool:
    return n > 0 and n & (n - 1) == 0


@dataclass(frozen=True)
class CacheConfig:
    line_size: int = 64
    num_sets: int = 128
    associativity: int = 8
    num_cores: int = 16

    def __post_init__(self):
        if self.line_size < 8 or not _is_pow2(self.line_size):
            raise ValueError(f"line_size must be a power of two >= 8, got {self.line_size}")
        if not _is_pow2(self.num_sets):
            raise ValueError(f"num_sets must be a power of two >= 1, got {self.num_sets}")
        if self.associativity < 1:
            raise ValueError(f"associativity must be >= 1, got {self.associativity}")
        if not 1 <= self.num_cores <= MAX_CORES:
            raise ValueError(f"num_cores must be in [1, {MAX_CORES}], got {self.num_cores}")

    @property
    def capacity(self) -> int:
        """Bytes per core."""
        return self.line_size * self.num_sets * self.associativity

    @property
    def lines_per_core(self) -> int:
        return self.num_sets * self.associativity

    @property
    def line_shift(self) -> int:
        return self.line_size.bit_length() - 1


def set_index(addr: int, cfg: CacheConfig) -> int:
    return (addr // cfg.line_size) % cfg.num_sets


def line_address(addr: int, cfg: CacheConfig) -> int:
    return addr & ~(cfg.line_size - 1)


@dataclass(frozen=True)
class AccessOutcome:
    hit: bool
    oracle_kind: MissKind
    set_index: int
    line_addr: int


@dataclass
class CacheStats:
    accesses: int
    hits: int
    misses: dict  # MissKind -> count, misses only
    set_misses: np.ndarray

    @property
    def total_misses(self) -> int:
        return sum(self.misses.values())


@njit(cache=True, inline="always")
def _unlink(core, slot, prev, nxt, head, tail):
    p = prev[core, slot]
    n = nxt[core, slot]
    if p >= 0:
        nxt[core, p] = n
    else:
        head[core] = n
    if n >= 0:
        prev[core, n] = p
    else:
        tail[core] = p


@njit(cache=True, inline="always")
def _push_front(core, slot, prev, nxt, head, tail):
    h = head[core]
    prev[core, slot] = -1
    nxt[core, slot] = h
    if h >= 0:
        prev[core, h] = slot
    else:
        tail[core] = slot
    head[core] = slot


@njit(cache=True)
def _kernel(cores, lines, stores, out, params, clock,
            sa_tag, sa_stamp, sh_line, sh_prev, sh_next, sh_head, sh_tail,
            free_slots, free_top, sh_map, line_info, kind_counts, set_misses):
    set_mask = params[0]
    assoc = params[1]
    ncores = params[2]
    n = lines.shape[0]
    for i in range(n):
        core = cores[i]
        line = lines[i]
        s = line & set_mask
        clock[0] += 1
        now = clock[0]

        seen = line in line_info
        info = line_info[line] if seen else np.int64(0)
        sharers = info & 0xFFFFFFFF
        markers = info >> 32
        bit = np.int64(1) << core

        # set-associative lookup
        way = -1
        victim = 0
        oldest = np.int64(1) << 62
        for w in range(assoc):
            t = sa_tag[core, s, w]
            if t == line:
                way = w
                break
            st = sa_stamp[core, s, w]
            if t < 0:
                st = -1
            if st < oldest:
                oldest = st
                victim = w

        key = line * ncores + core
        slot = sh_map[key] if key in sh_map else -1

        if way >= 0:
            kind = 0
            sa_stamp[core, s, way] = now
        else:
            if markers & bit:
                kind = 4
                markers &= ~bit
            elif not seen:
                kind = 1
            elif slot >= 0:
                kind = 3
            else:
                kind = 2
            sa_tag[core, s, victim] = line
            sa_stamp[core, s, victim] = now
            set_misses[core, s] += 1

        # shadow fully-associative LRU
        if slot >= 0:
            _unlink(core, slot, sh_prev, sh_next, sh_head, sh_tail)
            _push_front(core, slot, sh_prev, sh_next, sh_head, sh_tail)
        else:
            if free_top[core] > 0:
                free_top[core] -= 1
                slot = free_slots[core, free_top[core]]
            else:
                slot = sh_tail[core]
                _unlink(core, slot, sh_prev, sh_next, sh_head, sh_tail)
                del sh_map[sh_line[core, slot] * ncores + core]
            sh_line[core, slot] = line
            sh_map[key] = slot
            _push_front(core, slot, sh_prev, sh_next, sh_head, sh_tail)

        sharers |= bit
        if stores[i]:
            others = sharers & ~bit
            d = 0
            while others:
                if others & 1:
                    for w in range(assoc):
                        if sa_tag[d, s, w] == line:
                            sa_tag[d, s, w] = -1
                            markers |= np.int64(1) << d
                            break
                    okey = line * ncores + d
                    if okey in sh_map:
                        oslot = sh_map[okey]
                        _unlink(d, oslot, sh_prev, sh_next, sh_head, sh_tail)
                        del sh_map[okey]
                        free_slots[d, free_top[d]] = oslot
                        free_top[d] += 1
                others >>= 1
                d += 1
            sharers = bit

        line_info[line] = sharers | (markers << 32)
        kind_counts[core, kind] += 1
        out[i] = kind


class CacheSim:
    """Deterministic private-cache-per-core simulator.

    A store by one core invalidates the line in every other core (both the
    set-associative state and the shadow) and leaves an invalidation marker on
    cores that actually held it.  Miss priority: coherence, compulsory,
    conflict, capacity.
    """

    def __init__(self, cfg: CacheConfig | None = None):
        self.cfg = cfg or CacheConfig()
        c = self.cfg
        nc, ns, a, cap = c.num_cores, c.num_sets, c.associativity, c.lines_per_core
        self._params = np.array([ns - 1, a, nc], dtype=np.int64)
        self._clock = np.zeros(1, dtype=np.int64)
        self._sa_tag = np.full((nc, ns, a), -1, dtype=np.int64)
        self._sa_stamp = np.zeros((nc, ns, a), dtype=np.int64)
        self._sh_line = np.full((nc, cap), -1, dtype=np.int64)
        self._sh_prev = np.full((nc, cap), -1, dtype=np.int32)
        self._sh_next = np.full((nc, cap), -1, dtype=np.int32)
        self._sh_head = np.full(nc, -1, dtype=np.int32)
        self._sh_tail = np.full(nc, -1, dtype=np.int32)
        self._free = np.tile(np.arange(cap - 1, -1, -1, dtype=np.int32), (nc, 1))
        self._free_top = np.full(nc, cap, dtype=np.int32)
        self._sh_map = typed.Dict.empty(types.int64, types.int64)
        self._line_info = typed.Dict.empty(types.int64, types.int64)
        self._kind_counts = np.zeros((nc, len(MissKind)), dtype=np.int64)
        self._set_misses = np.zeros((nc, ns), dtype=np.int64)

    def _check_cores(self, cores: np.ndarray) -> None:
        if cores.size and (cores.min() < 0 or cores.max() >= self.cfg.num_cores):
            bad = cores[(cores < 0) | (cores >= self.cfg.num_cores)][0]
            raise ValueError(f"unknown core id {int(bad)} (num_cores={self.cfg.num_cores})")

    def run(self, cores, addrs, stores) -> np.ndarray:
        """Replay a batch of accesses; returns one MissKind code (int8) per access."""
        cores = np.ascontiguousarray(cores, dtype=np.int64)
        addrs = np.ascontiguousarray(addrs, dtype=np.int64)
        stores = np.ascontiguousarray(stores, dtype=np.bool_)
        if not (cores.shape == addrs.shape == stores.shape):
            raise ValueError("cores, addrs and stores must have the same length")
        self._check_cores(cores)
        if addrs.size and addrs.min() < 0:
            raise ValueError("negative address")
        lines = addrs >> self.cfg.line_shift
        out = np.empty(lines.shape[0], dtype=np.int8)
        _kernel(cores, lines, stores, out, self._params, self._clock,
                self._sa_tag, self._sa_stamp, self._sh_line, self._sh_prev, self._sh_next,
                self._sh_head, self._sh_tail, self._free, self._free_top,
                self._sh_map, self._line_info, self._kind_counts, self._set_misses)
        return out

    def access(self, core: int, addr: int, kind: str = "L") -> AccessOutcome:
        is_store = kind in ("S", "store", True)
        code = self.run(np.array([core]), np.array([addr]), np.array([is_store]))[0]
        mk = MissKind(int(code))
        return AccessOutcome(
            hit=mk is MissKind.HIT,
            oracle_kind=mk,
            set_index=set_index(addr, self.cfg),
            line_addr=line_address(addr, self.cfg),
        )

    def stats(self, core: int | None = None) -> CacheStats:
        if core is None:
            counts = self._kind_counts.sum(axis=0)
            set_misses = self._set_misses.sum(axis=0)
        else:
            if not 0 <= core < self.cfg.num_cores:
                raise ValueError(f"unknown core id {core}")
            counts = self._kind_counts[core]
            set_misses = self._set_misses[core].copy()
        misses = {k: int(counts[k]) for k in MissKind if k is not MissKind.HIT}
        return CacheStats(
            accesses=int(counts.sum()),
            hits=int(counts[MissKind.HIT]),
            misses=misses,
            set_misses=set_misses,
        )
