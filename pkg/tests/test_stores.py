import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cachescope.cache_sim import CacheConfig
from cachescope.profiler_core import FineOutcome, FinePattern, SampledRecord
from cachescope.stores import (CHUNK, HUGE, MANY, PAGE, InstructionStore, MissStore, ObjectRecord,
                               ObjectStore, ObjectStoreError, placement)
from cachescope.trace import AllocEvent, FreeEvent, GlobalRegion


def alloc(addr, size, callsite=1, tid=0):
    return AllocEvent(0, tid, callsite, addr, size)


def miss(addr, tid=0, kind="L", ip=0x400):
    return SampledRecord(0, tid, ip, addr, kind, True)


# -- object store ------------------------------------------------------------------

def test_small_object_goes_to_page_table():
    s = ObjectStore()
    rec = s.insert(alloc(0x2000, 64))
    assert s.level_of(rec) == PAGE and rec in s.pages[2].recs


def test_page_crossing_object_goes_to_chunk_table():
    s = ObjectStore()
    rec = s.insert(alloc(0x2F80, 0x200))
    assert s.level_of(rec) == CHUNK and rec in s.chunks[0].recs


def test_multi_megabyte_object_is_huge():
    s = ObjectStore()
    rec = s.insert(alloc(0x100000, 2 << 20))
    assert s.level_of(rec) == HUGE
    assert s.lookup(0x100000 + (1 << 20) + 5) is rec


def test_placement_boundaries():
    assert placement(0x1000, 0x1000) == PAGE
    assert placement(0x1000, 0x1001) == CHUNK
    assert placement(0xFFFFF, 2) == HUGE


def test_lookup_probes_page_then_chunk():
    s = ObjectStore()
    small = s.insert(alloc(0x2000, 64))
    big = s.insert(alloc(0x2F80, 0x200))
    assert s.locate(0x2FFF) == (big, [PAGE, CHUNK])
    assert s.locate(0x2010) == (small, [PAGE])
    assert s.locate(0x9000) == (None, [CHUNK])
    assert s.locate(0x500000) == (None, [])


def test_free_removes_and_double_free_fails():
    s = ObjectStore()
    s.insert(alloc(0x4000, 32))
    rec = s.free(FreeEvent(0, 0, 0x4000))
    assert not rec.live and s.lookup(0x4000) is None and not s.pages
    with pytest.raises(ObjectStoreError, match="unmatched free of 0x4000"):
        s.free(FreeEvent(0, 0, 0x4000))


def test_free_of_interior_address_fails():
    s = ObjectStore()
    s.insert(alloc(0x4000, 32))
    with pytest.raises(ObjectStoreError):
        s.free(FreeEvent(0, 0, 0x4008))


def test_overlap_rejected():
    s = ObjectStore()
    s.insert(alloc(0x4000, 32))
    with pytest.raises(ObjectStoreError, match="overlaps"):
        s.insert(alloc(0x3FF0, 17))
    s.insert(alloc(0x3FF0, 16))


def test_globals_lookup():
    s = ObjectStore([GlobalRegion("b", 0x600100, 8), GlobalRegion("a", 0x600000, 0x40)])
    assert s.lookup_global(0x60003F).name == "a"
    assert s.lookup_global(0x600040) is None
    assert s.lookup_global(0x600107).name == "b"


def test_objects_in_range():
    s = ObjectStore()
    a = s.insert(alloc(0x1000, 0x20))
    b = s.insert(alloc(0x1020, 0x20))
    s.insert(alloc(0x1080, 0x20))
    assert s.objects_in_range(0x1000, 0x1040) == [a, b]
    assert s.objects_in_range(0x1010, 0x1021) == [a, b]
    assert s.objects_in_range(0x1040, 0x1080) == []


def test_linear_scan_oracle_and_partition():
    rng = np.random.default_rng(7)
    s = ObjectStore(min_samples=1 << 60)
    live: dict[int, int] = {}
    slots = np.arange(4096) * 0x4000 + 0x10000000
    sizes = [16, 64, 0x1000, 0x3000, 0x2000]
    for _ in range(100_000):
        slot = int(slots[rng.integers(0, slots.size)])
        if slot in live:
            s.free(FreeEvent(0, 0, live[slot][0]))
            del live[slot]
        else:
            off = int(rng.integers(0, 0x800)) & ~15
            # ranges never overlap: each slot owns 0x4000 bytes
            size = min(sizes[rng.integers(0, len(sizes))], 0x4000 - off)
            s.insert(alloc(slot + off, size))
            live[slot] = (slot + off, size)
    spans = sorted(live.values())
    for addr in rng.integers(0x10000000, 0x10000000 + 4096 * 0x4000, 10_000):
        addr = int(addr)
        want = next(((a, n) for a, n in spans if a <= addr < a + n), None)
        got = s.lookup(addr)
        assert (got.start, got.size) == want if got else want is None
    seen = [r.start for b in s.pages.values() for r in b.recs]
    seen += [r.start for b in s.chunks.values() for r in b.recs]
    seen += [r.start for r in s.huge.recs]
    assert sorted(seen) == [a for a, _ in spans]


def _rec(callsite):
    return ObjectRecord(0, 0, 8, callsite, 0)


def _feed(s, callsite, n, m):
    r = _rec(callsite)
    for i in range(n):
        s.attribute(r, i < m)


def test_unseen_callsite_not_skipped():
    assert not ObjectStore().callsite_skip(0)


def test_quiet_callsite_skipped():
    s = ObjectStore()
    _feed(s, 1, 2000, 8)          # 0.4%
    _feed(s, 2, 18000, 992)       # brings the global ratio to 5%
    assert s.average_ratio == pytest.approx(0.05)
    assert s.callsite_skip(1) and not s.callsite_skip(2)


def test_moderate_callsite_kept():
    s = ObjectStore()
    _feed(s, 1, 2000, 80)         # 4%
    _feed(s, 2, 18000, 920)
    assert not s.callsite_skip(1)


def test_too_few_samples_not_skipped():
    s = ObjectStore()
    _feed(s, 1, 999, 0)
    _feed(s, 2, 10000, 5000)
    assert not s.callsite_skip(1)


def test_skip_decision_latches_and_stops_indexing():
    s = ObjectStore()
    _feed(s, 1, 2000, 0)
    _feed(s, 2, 2000, 200)
    assert s.callsite_skip(1)
    _feed(s, 1, 50_000, 50_000)
    assert s.callsite_skip(1)
    assert s.insert(alloc(0x8000, 64, callsite=1)) is None
    assert s.lookup(0x8000) is None
    assert s.callsites[1].skipped_allocs == 1
    # skipped objects still reserve their range
    with pytest.raises(ObjectStoreError):
        s.insert(alloc(0x8020, 64, callsite=2))
    s.free(FreeEvent(0, 0, 0x8000))


# -- miss store -----------------------------------------------------------------------

CFG = CacheConfig()


def test_distinct_words_is_false_sharing():
    m = MissStore(CFG)
    m.update(miss(0x1000, tid=0, kind="S"))
    m.update(miss(0x1008, tid=1, kind="S"))
    e = m.lines[0x1000]
    assert e.sharing() == "false" and e.misses == 2
    assert e.word_threads(0) == {0} and e.word_threads(1) == {1}


def test_same_word_is_true_sharing():
    m = MissStore(CFG)
    m.update(miss(0x1000, tid=0, kind="S"))
    m.update(miss(0x1004, tid=1, kind="L"))
    assert m.lines[0x1000].sharing() == "true"


def test_single_thread_line_not_shared():
    m = MissStore(CFG)
    for a in range(0x1000, 0x1040, 8):
        m.update(miss(a, tid=3))
    assert m.lines[0x1000].sharing() is None


def test_word_track_saturates():
    m = MissStore(CFG, track_cap=2)
    for t in range(3):
        m.update(miss(0x1000, tid=t))
    assert m.lines[0x1000].loads[0] is MANY
    assert m.lines[0x1000].sharing() == "true"


def test_hits_rejected():
    with pytest.raises(ValueError):
        MissStore(CFG).update(SampledRecord(0, 0, 0, 0x40, "L", False))


@settings(max_examples=60, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 1 << 20), st.integers(0, 7), st.sampled_from("LS")),
                max_size=300))
def test_miss_counts_conserved(recs):
    m = MissStore(CFG)
    for a, t, k in recs:
        m.update(miss(a, tid=t, kind=k))
    assert m.total == len(recs) == sum(m.set_misses)
    assert sum(e.misses for e in m.lines.values()) == len(recs)
    for line, e in m.lines.items():
        assert sum(e.ips.values()) == e.misses
        assert m.set_of(line) == (line // 64) % 128


# -- instruction store -------------------------------------------------------------------

def test_instruction_histograms_and_run():
    s = InstructionStore()
    for i in range(5):
        r = miss(i * 8192, ip=0x10)
        s.record_sample(r)
        s.record_miss(r, i % 2, obj_key=7)
    st_ = s.get(0x10)
    assert st_.accesses == 5 and st_.load_misses == 5 and st_.run == 5
    assert st_.sets == {0: 3, 1: 2} and st_.objects == {7: 5}
    s.record_sample(SampledRecord(9, 0, 0x10, 0, "L", False))
    assert st_.run == 0 and st_.accesses == 6
    assert s.total_accesses == 6 and s.total_misses == 5


def test_store_misses_counted_separately():
    s = InstructionStore()
    s.record_miss(miss(0, kind="S", ip=1), 0)
    assert s.get(1).store_misses == 1 and s.get(1).misses == 1


def test_attach_keeps_conclusive_pattern():
    s = InstructionStore()
    good = FinePattern(5, FineOutcome.MULTI_SET_CAPACITY, None, (), 64, "cap")
    s.attach(good)
    s.attach(FinePattern(5, FineOutcome.INCONCLUSIVE, None, (), 2, "expiry"))
    assert s.get(5).pattern is good
    newer = FinePattern(5, FineOutcome.SAME_SET_CONFLICT, 3, (), 8, "same-set")
    s.attach(newer)
    assert s.get(5).pattern is newer
    s.attach(None)
    assert s.get(5).pattern is newer
