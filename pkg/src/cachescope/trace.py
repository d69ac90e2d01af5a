"""Memory-access trace events and the line-oriented text codec.

File layout (UTF-8, one record per line, space separated)::

    CFG line_size=64 sets=128 assoc=8 cores=16
    GLOBAL <name> 0x<start> 0x<size>
    SYM 0x<ip> <file>:<line>
    # GT key=value
    M <seq> <tid> <callsite> 0x<addr> <size>
    F <seq> <tid> 0x<addr>
    A <seq> <tid> 0x<ip> 0x<addr> <L|S>

Other ``#`` lines are comments.  ``seq`` is strictly increasing over the body
and doubles as the simulation clock.
"""

from __future__ import annotations

import bisect
import hashlib
import io
from array import array
from itertools import repeat
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, NamedTuple, TextIO, Union

import numpy as np

from .cache_sim import CacheConfig


class TraceError(ValueError):
    def __init__(self, msg: str, lineno: int | None = None):
        self.lineno = lineno
        super().__init__(f"line {lineno}: {msg}" if lineno is not None else msg)


class AccessEvent(NamedTuple):
    seq: int
    tid: int
    ip: int
    addr: int
    kind: str  # "L" or "S"

    @property
    def is_store(self) -> bool:
        return self.kind == "S"


class AllocEvent(NamedTuple):
    seq: int
    tid: int
    callsite: int
    addr: int
    size: int


class FreeEvent(NamedTuple):
    seq: int
    tid: int
    addr: int


Event = Union[AccessEvent, AllocEvent, FreeEvent]


@dataclass(frozen=True)
class GlobalRegion:
    name: str
    start: int
    size: int

    @property
    def end(self) -> int:
        return self.start + self.size


@dataclass
class TraceHeader:
    config: CacheConfig = field(default_factory=CacheConfig)
    globals: list[GlobalRegion] = field(default_factory=list)
    symbols: dict[int, str] = field(default_factory=dict)
    meta: dict[str, str] = field(default_factory=dict)  # "# GT" sidecar

    def validate(self) -> None:
        regions = sorted(self.globals, key=lambda g: g.start)
        for g in regions:
            if g.size < 1:
                raise TraceError(f"global {g.name} has non-positive size")
            if " " in g.name or not g.name:
                raise TraceError(f"bad global name {g.name!r}")
        for a, b in zip(regions, regions[1:]):
            if b.start < a.end:
                raise TraceError(f"global regions {a.name} and {b.name} overlap")
        for ip, stmt in self.symbols.items():
            if " " in stmt or not stmt:
                raise TraceError(f"bad statement {stmt!r} for ip 0x{ip:x}")


class EventValidator:
    """Checks body invariants incrementally: seq order, alloc overlap, free matching."""

    def __init__(self):
        self.last_seq: int | None = None
        self._starts: list[int] = []
        self._ends: dict[int, int] = {}

    def check(self, ev: Event, lineno: int | None = None) -> None:
        if self.last_seq is not None and ev.seq <= self.last_seq:
            raise TraceError(f"out-of-order seq {ev.seq} after {self.last_seq}", lineno)
        self.last_seq = ev.seq
        if isinstance(ev, AllocEvent):
            self._alloc(ev, lineno)
        elif isinstance(ev, FreeEvent):
            if ev.addr not in self._ends:
                raise TraceError(f"unmatched free of 0x{ev.addr:x}", lineno)
            del self._ends[ev.addr]
            self._starts.pop(bisect.bisect_left(self._starts, ev.addr))
        elif ev.kind not in ("L", "S"):
            raise TraceError(f"bad access kind {ev.kind!r}", lineno)

    def _alloc(self, ev: AllocEvent, lineno):
        if ev.size < 1:
            raise TraceError(f"allocation of size {ev.size} at 0x{ev.addr:x}", lineno)
        end = ev.addr + ev.size
        i = bisect.bisect_left(self._starts, ev.addr)
        for j in (i - 1, i):
            if 0 <= j < len(self._starts):
                s = self._starts[j]
                e = self._ends[s]
                if s < end and ev.addr < e:
                    raise TraceError(
                        f"allocation [0x{ev.addr:x}, 0x{end:x}) overlaps live [0x{s:x}, 0x{e:x})",
                        lineno)
        self._starts.insert(i, ev.addr)
        self._ends[ev.addr] = end


# -- encoding ---------------------------------------------------------------

def _header_lines(header: TraceHeader) -> Iterator[str]:
    c = header.config
    yield f"CFG line_size={c.line_size} sets={c.num_sets} assoc={c.associativity} cores={c.num_cores}\n"
    for g in header.globals:
        yield f"GLOBAL {g.name} 0x{g.start:x} 0x{g.size:x}\n"
    for ip in sorted(header.symbols):
        yield f"SYM 0x{ip:x} {header.symbols[ip]}\n"
    for k, v in header.meta.items():
        yield f"# GT {k}={v}\n"


def format_event(ev: Event) -> str:
    if isinstance(ev, AccessEvent):
        return f"A {ev.seq} {ev.tid} 0x{ev.ip:x} 0x{ev.addr:x} {ev.kind}\n"
    if isinstance(ev, AllocEvent):
        return f"M {ev.seq} {ev.tid} {ev.callsite} 0x{ev.addr:x} {ev.size}\n"
    return f"F {ev.seq} {ev.tid} 0x{ev.addr:x}\n"


def write_trace(events: Iterable[Event], header: TraceHeader, sink: TextIO) -> int:
    """Validate and encode; returns the number of body lines written."""
    header.validate()
    sink.writelines(_header_lines(header))
    v = EventValidator()
    n = 0
    for ev in events:
        v.check(ev)
        sink.write(format_event(ev))
        n += 1
    return n


# -- decoding ---------------------------------------------------------------

def _int(tok: str) -> int:
    return int(tok, 0)


def _parse_cfg(parts: list[str], lineno: int) -> CacheConfig:
    kv = {}
    for p in parts[1:]:
        k, sep, v = p.partition("=")
        if not sep:
            raise TraceError(f"bad CFG field {p!r}", lineno)
        kv[k] = v
    try:
        return CacheConfig(
            line_size=int(kv.pop("line_size")),
            num_sets=int(kv.pop("sets")),
            associativity=int(kv.pop("assoc")),
            num_cores=int(kv.pop("cores")),
        )
    except KeyError as e:
        raise TraceError(f"CFG missing {e.args[0]}", lineno) from None
    except ValueError as e:
        raise TraceError(f"bad CFG: {e}", lineno) from None


def _parse_body(parts: list[str], lineno: int) -> Event:
    tag = parts[0]
    try:
        if tag == "A" and len(parts) == 6:
            return AccessEvent(int(parts[1]), int(parts[2]), _int(parts[3]), _int(parts[4]), parts[5])
        if tag == "M" and len(parts) == 6:
            return AllocEvent(int(parts[1]), int(parts[2]), int(parts[3]), _int(parts[4]), int(parts[5]))
        if tag == "F" and len(parts) == 4:
            return FreeEvent(int(parts[1]), int(parts[2]), _int(parts[3]))
    except ValueError:
        pass
    raise TraceError(f"malformed record {' '.join(parts)!r}", lineno)


def read_trace(source: TextIO) -> tuple[TraceHeader, Iterator[Event]]:
    """Parse the header eagerly and return a lazy, validating event stream.

    Errors in the body surface while iterating, after every earlier event has
    already been yielded.
    """
    header = TraceHeader(config=None)  # type: ignore[arg-type]
    lineno = 0
    pending: tuple[int, str] | None = None
    for raw in source:
        lineno += 1
        if not raw.endswith("\n"):
            pending = (lineno, raw)
            break
        line = raw.strip()
        if not line:
            continue
        if line.startswith("#"):
            body = line[1:].strip()
            if body.startswith("GT "):
                k, _, v = body[3:].strip().partition("=")
                header.meta[k] = v
            continue
        parts = line.split(" ")
        tag = parts[0]
        if tag == "CFG":
            if header.config is not None:
                raise TraceError("duplicate CFG", lineno)
            header.config = _parse_cfg(parts, lineno)
        elif tag == "GLOBAL":
            if len(parts) != 4:
                raise TraceError("malformed GLOBAL", lineno)
            try:
                header.globals.append(GlobalRegion(parts[1], _int(parts[2]), _int(parts[3])))
            except ValueError:
                raise TraceError("malformed GLOBAL", lineno) from None
        elif tag == "SYM":
            if len(parts) != 3:
                raise TraceError("malformed SYM", lineno)
            try:
                ip = _int(parts[1])
            except ValueError:
                raise TraceError("malformed SYM", lineno) from None
            if ip in header.symbols:
                raise TraceError(f"duplicate SYM for ip 0x{ip:x}", lineno)
            header.symbols[ip] = parts[2]
        else:
            pending = (lineno, raw)
            break
    if header.config is None:
        raise TraceError("missing CFG header line", lineno or None)
    try:
        header.validate()
    except TraceError as e:
        raise TraceError(str(e), lineno) from None

    def body() -> Iterator[Event]:
        v = EventValidator()
        n = lineno
        if pending is not None:
            yield from _emit(*pending, v)
        for raw in source:
            n += 1
            yield from _emit(n, raw, v)

    return header, body()


def _emit(lineno: int, raw: str, v: EventValidator) -> Iterator[Event]:
    if not raw.endswith("\n"):
        raise TraceError(f"truncated record {raw!r}", lineno)
    line = raw.strip()
    if not line or line.startswith("#"):
        return
    parts = line.split(" ")
    if parts[0] in ("CFG", "GLOBAL", "SYM"):
        raise TraceError(f"{parts[0]} record after body start", lineno)
    ev = _parse_body(parts, lineno)
    v.check(ev, lineno)
    yield ev


# -- columnar in-memory traces ------------------------------------------------

@dataclass
class Trace:
    """A whole trace held as numpy columns for the access stream.

    Heap events are few and kept as a list; ``events()`` re-merges everything
    in seq order.
    """

    header: TraceHeader
    seq: np.ndarray      # int64
    tid: np.ndarray      # int64
    ip: np.ndarray       # int64
    addr: np.ndarray     # int64
    store: np.ndarray    # bool
    heap: list = field(default_factory=list)  # AllocEvent | FreeEvent, seq ordered

    def __post_init__(self):
        self.seq = np.ascontiguousarray(self.seq, dtype=np.int64)
        self.tid = np.ascontiguousarray(self.tid, dtype=np.int64)
        self.ip = np.ascontiguousarray(self.ip, dtype=np.int64)
        self.addr = np.ascontiguousarray(self.addr, dtype=np.int64)
        self.store = np.ascontiguousarray(self.store, dtype=np.bool_)

    def __len__(self) -> int:
        return int(self.seq.shape[0])

    @property
    def num_events(self) -> int:
        return len(self) + len(self.heap)

    @classmethod
    def from_events(cls, header: TraceHeader, events: Iterable[Event]) -> "Trace":
        seq, tid, ip, addr, store = (array("q") for _ in range(5))
        heap = []
        for ev in events:
            if isinstance(ev, AccessEvent):
                seq.append(ev.seq)
                tid.append(ev.tid)
                ip.append(ev.ip)
                addr.append(ev.addr)
                store.append(ev.kind == "S")
            else:
                heap.append(ev)
        return cls(header, np.frombuffer(seq, np.int64), np.frombuffer(tid, np.int64),
                   np.frombuffer(ip, np.int64), np.frombuffer(addr, np.int64),
                   np.frombuffer(store, np.int64).astype(bool), heap)

    def access(self, i: int) -> AccessEvent:
        return AccessEvent(int(self.seq[i]), int(self.tid[i]), int(self.ip[i]),
                           int(self.addr[i]), "S" if self.store[i] else "L")

    def events(self) -> Iterator[Event]:
        heap_seq = np.array([h.seq for h in self.heap], dtype=np.int64)
        cuts = np.searchsorted(self.seq, heap_seq)
        start = 0
        for h, cut in zip(self.heap, cuts):
            for i in range(start, int(cut)):
                yield self.access(i)
            yield h
            start = int(cut)
        for i in range(start, len(self)):
            yield self.access(i)

    def validate(self) -> None:
        self.header.validate()
        if len(self) > 1 and not np.all(np.diff(self.seq) > 0):
            bad = int(np.argmin(np.diff(self.seq) > 0))
            raise TraceError(f"out-of-order seq {int(self.seq[bad + 1])} after {int(self.seq[bad])}")
        heap_seq = np.array([h.seq for h in self.heap], dtype=np.int64)
        pos = np.searchsorted(self.seq, heap_seq)
        clash = (pos < len(self)) & (self.seq[np.minimum(pos, max(len(self) - 1, 0))] == heap_seq) \
            if len(self) else np.zeros(len(heap_seq), bool)
        if clash.any():
            raise TraceError(f"duplicate seq {int(heap_seq[clash][0])}")
        v = EventValidator()
        for ev in self.heap:
            v.check(ev)

    def trace_id(self) -> str:
        """Content hash independent of how the trace was obtained."""
        h = hashlib.sha256()
        h.update("".join(_header_lines(self.header)).encode())
        for col in (self.seq, self.tid, self.ip, self.addr):
            h.update(col.astype("<i8", copy=False).tobytes())
        h.update(self.store.astype(np.uint8).tobytes())
        for ev in self.heap:
            h.update(format_event(ev).encode())
        return h.hexdigest()[:16]

    def write(self, sink: TextIO) -> None:
        self.validate()
        sink.writelines(_header_lines(self.header))
        heap_seq = np.array([h.seq for h in self.heap], dtype=np.int64)
        cuts = np.searchsorted(self.seq, heap_seq)
        start = 0
        for h, cut in zip(self.heap, cuts):
            self._write_range(sink, start, int(cut))
            sink.write(format_event(h))
            start = int(cut)
        self._write_range(sink, start, len(self))

    def _write_range(self, sink: TextIO, lo: int, hi: int, chunk: int = 1 << 16) -> None:
        for a in range(lo, hi, chunk):
            b = min(hi, a + chunk)
            kinds = np.where(self.store[a:b], "S", "L")
            sink.write("".join(
                f"A {s} {t} 0x{i:x} 0x{d:x} {k}\n"
                for s, t, i, d, k in zip(self.seq[a:b].tolist(), self.tid[a:b].tolist(),
                                         self.ip[a:b].tolist(), self.addr[a:b].tolist(),
                                         kinds.tolist())))


def _load_fast(path: str | Path) -> Trace | None:
    """Bulk columnar parse of a well-formed file; None means "use the strict reader"."""
    with open(path, "r", encoding="utf-8", newline="") as f:
        text = f.read()
    if text and not text.endswith("\n"):
        return None
    lines = text.split("\n")[:-1]
    start = 0
    while start < len(lines) and not lines[start].startswith(("A ", "M ", "F ")):
        start += 1
    header, rest = read_trace(io.StringIO("".join(ln + "\n" for ln in lines[:start])))
    for _ in rest:
        return None
    acc, other = [], []
    for ln in lines[start:]:
        if ln.startswith("A "):
            acc.append(ln)
        else:
            other.append((len(acc), ln))
    tok = " ".join(acc).split(" ") if acc else []
    n = len(acc)
    if len(tok) != 6 * n or (n and set(tok[0::6]) != {"A"}):
        return None
    if not set(tok[5::6]) <= {"L", "S"}:
        return None
    kinds = np.array(tok[5::6])
    heap = []
    for _, ln in other:
        parts = ln.split(" ")
        if parts[0] not in ("M", "F"):
            return None
        heap.append(_parse_body(parts, 0))
    try:
        cols = [np.array(tok[1::6], dtype=np.int64), np.array(tok[2::6], dtype=np.int64),
                np.fromiter(map(int, tok[3::6], repeat(0)), np.int64, n),
                np.fromiter(map(int, tok[4::6], repeat(0)), np.int64, n)]
    except (ValueError, OverflowError):
        return None
    store = kinds == "S" if n else np.zeros(0, bool)
    trace = Trace(header, cols[0], cols[1], cols[2], cols[3], store, heap)
    # heap records must sit where their seq says, relative to the accesses
    before = np.array([k for k, _ in other], dtype=np.int64)
    at = np.searchsorted(cols[0], np.array([h.seq for h in heap], dtype=np.int64))
    if not np.array_equal(before, at):
        return None
    trace.validate()
    return trace


def load_trace(path: str | Path) -> Trace:
    """Read a trace file into columns.

    Well-formed files take a bulk path; anything irregular is re-read by the
    streaming reader so that errors carry exact line numbers.
    """
    try:
        fast = _load_fast(path)
    except (TraceError, ValueError):
        fast = None
    if fast is not None:
        return fast
    with open(path, "r", encoding="utf-8", newline="") as f:
        header, body = read_trace(f)
        return Trace.from_events(header, body)


def save_trace(trace: Trace, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        trace.write(f)


def dumps(trace: Trace) -> str:
    buf = io.StringIO()
    trace.write(buf)
    return buf.getvalue()
