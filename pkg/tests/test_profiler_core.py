import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cachescope.cache_sim import CacheConfig, set_index
from cachescope.profiler_core import (BreakpointConfig, BreakpointHandler, FineOutcome,
                                      FinePattern, MissWindow, SampledRecord, Sampler,
                                      SamplerConfig, period_bounds, select_breakpoint_target)
from cachescope.stores import InstructionStore
from cachescope.trace import AccessEvent

CFG = CacheConfig()
STRIDE = CFG.num_sets * CFG.line_size


def rec(seq, miss, tid=0, ip=0x400, addr=0x1000, kind="L"):
    return SampledRecord(seq, tid, ip, addr, kind, miss)


def acc(seq, addr, ip=0x500, tid=0):
    return AccessEvent(seq, tid, ip, addr, "L")


# -- sampler --------------------------------------------------------------------

def test_zero_jitter_samples_every_period():
    s = Sampler(SamplerConfig(load_period=3, period_jitter=0))
    hits = [i for i in range(1, 10) if s.step(acc(i, 0), False)]
    assert hits == [3, 6, 9]


def test_period_bounds_are_exact_integers():
    assert period_bounds(20_000, 0.1) == (18_000, 22_000)
    assert period_bounds(50_000, 0.1) == (45_000, 55_000)
    assert period_bounds(1, 0.1) == (1, 1)


@pytest.mark.parametrize("seed", range(8))
def test_first_default_sample_within_jitter(seed):
    s = Sampler(SamplerConfig(seed=seed))
    n = np.zeros(30_000, dtype=np.int64)
    idx = s.select(n, np.zeros(30_000, bool))
    assert 18_000 <= idx[0] + 1 <= 22_000


def test_thread_lanes_draw_independently():
    cfg = SamplerConfig(load_period=1000, seed=4)
    tids = np.repeat([0, 1], 20_000)
    idx = Sampler(cfg).select(tids, np.zeros(tids.size, bool))
    t0 = idx[idx < 20_000]
    t1 = idx[idx >= 20_000] - 20_000
    assert not np.array_equal(t0, t1)


def test_invalid_sampler_config():
    with pytest.raises(ValueError):
        SamplerConfig(load_period=0)
    with pytest.raises(ValueError):
        SamplerConfig(period_jitter=1.0)


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 200), st.integers(1, 200), st.sampled_from([0.0, 0.1, 0.3]),
       st.integers(0, 2**16), st.integers(0, 3000))
def test_batch_selection_equals_stepping(lp, sp, jit, seed, n):
    rng = np.random.default_rng(seed)
    tids = rng.integers(0, 3, n)
    stores = rng.random(n) < 0.4
    cfg = SamplerConfig(lp, sp, jit, seed)
    s = Sampler(cfg)
    stepped = [i for i in range(n) if s.should_sample(int(tids[i]), bool(stores[i]))]
    assert Sampler(cfg).select(tids, stores).tolist() == stepped


@settings(max_examples=40, deadline=None)
@given(st.integers(2, 500), st.sampled_from([0.0, 0.05, 0.1, 0.25]), st.integers(0, 50_000),
       st.integers(0, 1000))
def test_sampling_density_bounds(period, jit, n, seed):
    cfg = SamplerConfig(load_period=period, period_jitter=jit, seed=seed)
    count = len(Sampler(cfg).select(np.zeros(n, np.int64), np.zeros(n, bool)))
    assert n / (period * (1 + jit)) - 1 <= count <= n / (period * (1 - jit)) + 1


# -- miss window -----------------------------------------------------------------

def test_ratio_at_threshold_does_not_flush():
    w = MissWindow(1000, 0.005)
    for i in range(995):
        assert w.update(rec(i, False)) is None
    batches = [w.update(rec(1000 + i, True)) for i in range(5)]
    assert len(w) == 1000 and w.misses == 5
    assert all(b is None for b in batches)


def test_sixth_miss_flushes_all_six():
    w = MissWindow(1000, 0.005)
    for i in range(995):
        w.update(rec(i, False))
    for i in range(5):
        assert w.update(rec(1000 + i, True)) is None
    batch = w.update(rec(2000, True))
    assert [r.seq for r in batch] == [1000, 1001, 1002, 1003, 1004, 2000]
    # flushed records are never handed out again
    assert w.update(rec(2001, False)) is None


def test_all_hits_never_flush():
    w = MissWindow(50, 0.0)
    assert all(w.update(rec(i, False)) is None for i in range(500))


def test_window_bounded_and_counted():
    w = MissWindow(10, 0.5)
    rng = np.random.default_rng(1)
    for i in range(200):
        w.update(rec(i, bool(rng.random() < 0.3)))
        assert len(w) <= 10
        assert w.misses == sum(r.miss for r in w._buf)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.booleans(), max_size=400), st.integers(1, 40), st.sampled_from([0.0, 0.05, 0.2]))
def test_flush_exactness(stream, size, thr):
    w = MissWindow(size, thr)
    flushed = []
    for i, m in enumerate(stream):
        flushed += [r.seq for r in (w.update(rec(i, m)) or [])]
    # reference: replay with an explicit list and a consumed set
    buf, consumed, expect = [], set(), []
    for i, m in enumerate(stream):
        buf.append((i, m))
        buf = buf[-size:]
        misses = [s for s, mm in buf if mm]
        if misses and len(misses) > thr * size:
            new = [s for s in misses if s not in consumed]
            consumed.update(new)
            expect += new
    assert flushed == expect
    assert len(set(flushed)) == len(flushed)


# -- breakpoints -------------------------------------------------------------------

def observe_all(bp, events):
    out = None
    for ev in events:
        r = bp.observe(ev, set_index(ev.addr, CFG), ev.addr & ~63, None)
        if r is not None:
            assert out is None
            out = r
    return out


def test_same_set_early_exit_after_eight():
    bp = BreakpointHandler()
    bp.install(0x500, 0)
    pat = observe_all(bp, [acc(i + 1, 0x100000 + i * STRIDE) for i in range(8)])
    assert pat.outcome is FineOutcome.SAME_SET_CONFLICT and pat.accesses == 8
    assert pat.reason == "same-set" and pat.dominant_set == set_index(0x100000, CFG)
    assert not bp.active


def test_sequential_lines_hit_cap_as_capacity():
    bp = BreakpointHandler()
    bp.install(0x500, 0)
    pat = observe_all(bp, [acc(i + 1, 0x100000 + 64 * i) for i in range(100)])
    assert pat.outcome is FineOutcome.MULTI_SET_CAPACITY
    assert pat.accesses == 64 and pat.reason == "cap"


def test_repeated_line_is_not_same_set_evidence():
    bp = BreakpointHandler()
    bp.install(0x500, 0)
    # sixteen int loads per line walk one line at a time
    evs = [acc(i + 1, 0x100000 + 4 * i) for i in range(64)]
    pat = observe_all(bp, evs)
    assert pat.outcome is FineOutcome.MULTI_SET_CAPACITY


def test_cap_with_eight_lines_on_one_set_is_conflict():
    bp = BreakpointHandler()
    bp.install(0x500, 0)
    evs = []
    for i in range(64):
        # alternate sets so no consecutive run forms
        a = 0x100000 + (i // 2 % 8) * STRIDE if i % 2 == 0 else 0x200040 + 64 * i
        evs.append(acc(i + 1, a))
    pat = observe_all(bp, evs)
    assert pat.outcome is FineOutcome.SAME_SET_CONFLICT and pat.reason == "cap"


def test_expiry_with_few_accesses_is_inconclusive():
    bp = BreakpointHandler(BreakpointConfig(expiry_events=100))
    bp.install(0x500, 10)
    observe_all(bp, [acc(11 + i, 0x1000 + 64 * i) for i in range(3)])
    assert bp.is_expired(110) and not bp.is_expired(109)
    pat = bp.expire(110)
    assert pat.outcome is FineOutcome.INCONCLUSIVE and pat.accesses == 3
    assert bp.log[-1].reason == "expiry" and not bp.active


def test_expired_breakpoint_ignores_late_access():
    bp = BreakpointHandler(BreakpointConfig(expiry_events=5))
    bp.install(0x500, 0)
    pat = bp.observe(acc(9, 0x40), 1, 0x40)
    assert pat.outcome is FineOutcome.INCONCLUSIVE and pat.accesses == 0


def test_only_one_breakpoint_at_a_time():
    bp = BreakpointHandler()
    bp.install(0x500, 0)
    with pytest.raises(RuntimeError):
        bp.install(0x600, 1)
    assert bp.observe(acc(2, 0x40, ip=0x600), 1, 0x40) is None


def test_objects_recorded_in_pattern():
    bp = BreakpointHandler()
    bp.install(0x500, 0)
    for i in range(8):
        r = bp.observe(acc(i + 1, i * STRIDE), 0, i * STRIDE, obj=i % 3)
    assert r.objects == (0, 1, 2)


def _store(**runs):
    s = InstructionStore()
    for name, (ip, n) in runs.items():
        for k in range(n):
            s.record_sample(rec(k, True, ip=ip))
            s.record_miss(rec(k, True, ip=ip), 0)
    return s


def test_no_candidates_no_target():
    bp = BreakpointHandler()
    assert select_breakpoint_target(InstructionStore(), bp, 10) == (None, None)


def test_longest_run_wins_over_short_run():
    s = _store(a=(0xA, 4), b=(0xB, 3))
    bp = BreakpointHandler()
    ip, _ = select_breakpoint_target(s, bp, 10)
    assert ip == 0xA and bp.target == 0xA


def test_ties_prefer_more_misses_then_lower_ip():
    s = _store(a=(0xB, 6), b=(0xA, 5), c=(0x9, 5))
    assert select_breakpoint_target(s, BreakpointHandler(), 1)[0] == 0xB
    s = _store(a=(0xB, 5), b=(0xA, 5))
    assert select_breakpoint_target(s, BreakpointHandler(), 1)[0] == 0xA


def test_active_target_suppresses_selection():
    s = _store(a=(0xA, 9))
    bp = BreakpointHandler()
    bp.install(0x77, 0)
    assert select_breakpoint_target(s, bp, 50) == (None, None)
    assert bp.target == 0x77


def test_expired_target_is_replaced():
    s = _store(a=(0xA, 9))
    bp = BreakpointHandler(BreakpointConfig(expiry_events=10))
    bp.install(0x77, 0)
    ip, expired = select_breakpoint_target(s, bp, 10)
    assert ip == 0xA and expired.ip == 0x77 and expired.outcome is FineOutcome.INCONCLUSIVE


def test_same_set_batch_fallback():
    s = InstructionStore()
    batch = [rec(i, True, ip=0xC, addr=i * STRIDE) for i in range(8)]
    for r in batch:
        s.record_sample(r)
    s.record_sample(rec(99, False, ip=0xC))   # run reset to zero
    for r in batch[:1]:
        s.record_miss(r, 0)
    bp = BreakpointHandler()
    ip, _ = select_breakpoint_target(s, bp, 100, batch, lambda a: set_index(a, CFG))
    assert ip == 0xC


def test_conclusive_ip_not_rearmed():
    s = _store(a=(0xA, 9), b=(0xB, 4))
    s.attach(FinePattern(0xA, FineOutcome.SAME_SET_CONFLICT, 0, (), 8, "same-set"))
    assert select_breakpoint_target(s, BreakpointHandler(), 1)[0] == 0xB
