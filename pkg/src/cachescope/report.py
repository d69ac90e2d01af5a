"""Rendering of profile/oracle results and agreement checks against ground truth."""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass

from .config import RunConfig
from .pipeline import OracleResult, ProfileResult
from .workloads import GroundTruth

FORMAT_VERSION = 1


def _cache(c) -> dict:
    return {"line_size": c.line_size, "num_sets": c.num_sets,
            "associativity": c.associativity, "num_cores": c.num_cores}


def profile_document(res: ProfileResult, cfg: RunConfig | None = None,
                     gt: GroundTruth | None = None) -> dict:
    t = res.totals
    doc = {
        "kind": "profile",
        "format_version": FORMAT_VERSION,
        "trace_id": res.trace_id,
        "cache": _cache(res.cache),
        "totals": {
            "load_accesses": t.load_accesses, "load_misses": t.load_misses,
            "store_accesses": t.store_accesses, "store_misses": t.store_misses,
            "samples": res.samples, "flushes": res.flushes, "flushed_misses": res.flushed_misses,
        },
        "breakpoints": [
            {"ip": f"{b.ip:#x}", "installed": b.install_seq, "retired": b.end_seq, "reason": b.reason}
            for b in res.breakpoints],
        "patterns": [
            {"ip": f"{p.ip:#x}", "outcome": p.outcome.value, "accesses": p.accesses,
             "dominant_set": p.dominant_set, "objects": len(p.objects), "reason": p.reason}
            for p in res.patterns],
        "issues": [r.to_dict() for r in res.reports],
    }
    if cfg is not None:
        doc["config"] = {k: v for k, v in cfg.as_dict().items() if k != "format"}
    if gt is not None:
        doc["ground_truth"] = gt.to_meta()
    return doc


def oracle_document(res: OracleResult, top_lines: int = 32) -> dict:
    lines = sorted(res.line_misses.items(), key=lambda kv: (-kv[1], kv[0]))[:top_lines]
    sm = res.set_misses
    nz = [x for x in sm if x]
    return {
        "kind": "oracle",
        "format_version": FORMAT_VERSION,
        "trace_id": res.trace_id,
        "cache": _cache(res.cache),
        "accesses": res.accesses,
        "misses": res.kinds,
        "total_misses": res.total_misses,
        "dominant": res.dominant(),
        "load_miss_ratio": round(res.load_miss_ratio, 9),
        "store_miss_ratio": round(res.store_miss_ratio, 9),
        "warmup": res.warmup,
        "warm_load_miss_ratio": round(res.warm_load_miss_ratio, 9),
        "warm_store_miss_ratio": round(res.warm_store_miss_ratio, 9),
        "set_misses": sm,
        "set_uniformity": round(max(nz) / min(nz), 6) if nz else None,
        "top_lines": [{"line": f"{ln:#x}", "misses": n} for ln, n in lines],
    }


def dumps(doc: dict) -> str:
    return json.dumps(doc, sort_keys=True, indent=2) + "\n"


def _pct(x: float) -> str:
    return f"{100 * x:.1f}%"


def render_profile_text(res: ProfileResult) -> str:
    t = res.totals
    out = [
        f"cachescope profile  trace {res.trace_id}",
        f"  sampled loads {t.load_accesses} (miss {_pct(t.load_ratio)}), "
        f"stores {t.store_accesses} (miss {_pct(t.store_ratio)}); "
        f"{res.flushed_misses} misses analysed, {len(res.breakpoints)} breakpoints",
        "",
    ]
    if not res.reports:
        out.append("no significant issues")
        return "\n".join(out) + "\n"
    for n, r in enumerate(res.reports, 1):
        out.append(f"[{n}] {r.miss_type.value} ({r.origin})")
        if r.statements:
            out.append(f"    statement  {', '.join(r.statements)}")
        out.append(f"    ips        {' '.join(f'{ip:#x}' for ip in r.ips)}")
        if r.lines:
            out.append(f"    lines      {' '.join(f'{ln:#x}' for ln in r.lines)}")
        if r.sets:
            out.append(f"    sets       {' '.join(str(s) for s in r.sets)}")
        for o in r.objects[:8]:
            out.append(f"    object     callsite {o.callsite}, {o.size} bytes at {o.start:#x}, "
                       f"allocated by thread {o.alloc_tid}")
        if len(r.objects) > 8:
            out.append(f"    ...        {len(r.objects) - 8} more objects")
        for g in r.regions:
            out.append(f"    global     {g}")
        out.append(f"    severity   {_pct(r.miss_ratio)} of misses, {_pct(r.access_ratio)} of accesses, "
                   f"slowdown bound x{r.slowdown_bound:.2f}")
        out.append("")
    return "\n".join(out)


def render_oracle_text(res: OracleResult) -> str:
    total = res.total_misses
    out = [f"cachescope oracle  trace {res.trace_id}",
           f"  accesses {res.accesses}, misses {total}"]
    for k, v in res.kinds.items():
        share = v / total if total else 0.0
        out.append(f"  {k:<11} {v:>10}  {_pct(share)}")
    out.append(f"  load miss ratio {_pct(res.load_miss_ratio)} "
               f"(after {_pct(res.warmup)} warm-up: {res.warm_load_miss_ratio:.4%})")
    out.append(f"  store miss ratio {_pct(res.store_miss_ratio)}")
    nz = [x for x in res.set_misses if x]
    if nz:
        out.append(f"  per-set misses min {min(nz)} max {max(nz)} over {len(nz)} sets")
    return "\n".join(out) + "\n"


# -- agreement -----------------------------------------------------------------

@dataclass(frozen=True)
class Verdict:
    workload: str
    expected: str
    reported: str
    ok: bool
    reason: str = ""


def _issue_fields(issue) -> tuple[str, set[int], set[int]]:
    if isinstance(issue, dict):
        return (issue["miss_type"], {int(x, 16) for x in issue["ips"]},
                {o["callsite"] for o in issue["objects"]})
    return issue.miss_type.value, set(issue.ips), set(issue.callsites)


def judge(issues: list, gt: GroundTruth) -> Verdict:
    """Does the report list agree with the ground truth of its workload?

    Every issue must carry the expected label, at least one issue must name a
    guilty instruction, and allocator-origin truths need two of the guilty
    callsites in one issue.
    """
    fields_ = [_issue_fields(i) for i in issues]
    labels = sorted({f[0] for f in fields_})
    reported = ",".join(labels) if labels else "none"
    if not gt.expect_report:
        if fields_:
            return Verdict(gt.workload, "none", reported, False, "unexpected report")
        return Verdict(gt.workload, "none", reported, True)
    if not fields_:
        return Verdict(gt.workload, gt.miss_type, reported, False, "missed issue")
    if labels != [gt.miss_type]:
        return Verdict(gt.workload, gt.miss_type, reported, False, "mislabeled")
    guilty = set(gt.ips)
    if not any(f[1] & guilty for f in fields_):
        return Verdict(gt.workload, gt.miss_type, reported, False, "guilty instruction not named")
    if gt.origin == "allocator":
        sites = set(gt.callsites)
        if not any(len(f[2] & sites) >= 2 for f in fields_):
            return Verdict(gt.workload, gt.miss_type, reported, False, "fewer than 2 object callsites")
    return Verdict(gt.workload, gt.miss_type, reported, True)


def compare(profile_doc: dict, oracle_doc: dict | None, gt: GroundTruth) -> tuple[Verdict, dict]:
    if oracle_doc is not None and oracle_doc.get("trace_id") != profile_doc.get("trace_id"):
        raise ValueError(f"trace id mismatch: profile {profile_doc.get('trace_id')} "
                         f"vs oracle {oracle_doc.get('trace_id')}")
    v = judge(profile_doc.get("issues", []), gt)
    summary = {
        "workload": v.workload, "expected": v.expected, "reported": v.reported,
        "match": v.ok, "reason": v.reason,
    }
    if oracle_doc is not None:
        summary["oracle_dominant"] = oracle_doc.get("dominant")
        summary["oracle_expected"] = gt.oracle_kind
    return v, summary


def confusion(verdicts: list[Verdict]) -> dict[str, dict[str, int]]:
    m: dict[str, Counter] = {}
    for v in verdicts:
        m.setdefault(v.expected, Counter())[v.reported] += 1
    return {k: dict(sorted(c.items())) for k, c in sorted(m.items())}


def render_confusion(verdicts: list[Verdict]) -> str:
    mat = confusion(verdicts)
    cols = sorted({c for row in mat.values() for c in row})
    w = max([len(c) for c in cols] + [len(r) for r in mat] + [8])
    out = ["expected \\ reported".ljust(w + 2) + "  ".join(c.rjust(w) for c in cols)]
    for row, counts in mat.items():
        out.append(row.ljust(w + 2) + "  ".join(str(counts.get(c, 0)).rjust(w) for c in cols))
    return "\n".join(out) + "\n"
