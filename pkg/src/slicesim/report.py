"""Post-run invariant verification and per-period / per-step summaries."""

from __future__ import annotations

import csv
import json
from collections import defaultdict
from pathlib import Path
from typing import Optional

from .scenario import parse_json, scenario_from_obj


def _slice_label(sst: str, sd: str) -> str:
    return sst if sd == "" else f"{sst}:{int(sd):06x}"


def load_summary(out_dir) -> dict:
    return json.loads((Path(out_dir) / "summary.json").read_text())


def load_prbs(out_dir) -> dict[str, list[tuple[int, float]]]:
    """slice label -> [(frame_ms, mean PRBs per slot)]"""
    out: dict[str, list[tuple[int, float]]] = defaultdict(list)
    with open(Path(out_dir) / "prbs.csv", newline="") as fh:
        for row in csv.DictReader(fh):
            out[_slice_label(row["sst"], row["sd"])].append((int(row["frame_ms"]), float(row["mean_prbs"])))
    return dict(out)


def load_throughput(out_dir) -> dict[tuple[int, int], list[tuple[int, float]]]:
    """(ue_id, pdu_id) -> [(t_ms, bps)]"""
    out: dict[tuple[int, int], list[tuple[int, float]]] = defaultdict(list)
    with open(Path(out_dir) / "throughput.csv", newline="") as fh:
        for row in csv.DictReader(fh):
            out[(int(row["ue_id"]), int(row["pdu_id"]))].append((int(row["t_ms"]), float(row["bps"])))
    return dict(out)


def load_flow_slices(out_dir) -> dict[tuple[int, int], str]:
    out = {}
    with open(Path(out_dir) / "throughput.csv", newline="") as fh:
        for row in csv.DictReader(fh):
            out[(int(row["ue_id"]), int(row["pdu_id"]))] = _slice_label(row["sst"], row["sd"])
    return out


def load_control_log(out_dir) -> list[dict]:
    with open(Path(out_dir) / "control_log.csv", newline="") as fh:
        return list(csv.DictReader(fh))


def slice_throughput(out_dir) -> dict[str, list[tuple[int, float]]]:
    """slice label -> [(t_ms, summed bps over the slice's flows)]"""
    per: dict[str, dict[int, float]] = defaultdict(lambda: defaultdict(float))
    with open(Path(out_dir) / "throughput.csv", newline="") as fh:
        for row in csv.DictReader(fh):
            per[_slice_label(row["sst"], row["sd"])][int(row["t_ms"])] += float(row["bps"])
    return {k: sorted(v.items()) for k, v in per.items()}


def mean_in(series, lo_ms: float, hi_ms: float, end_stamp: bool = False) -> Optional[float]:
    """Mean of values whose stamp lies in [lo, hi) (or (lo, hi] for end-stamped series)."""
    if end_stamp:
        vals = [v for t, v in series if lo_ms < t <= hi_ms]
    else:
        vals = [v for t, v in series if lo_ms <= t < hi_ms]
    return sum(vals) / len(vals) if vals else None


# ---------------------------------------------------------------- verification


def verify(out_dir) -> list[str]:
    """Re-check scheduler invariants over the emitted CSVs; return violation messages."""
    out_dir = Path(out_dir)
    summary = load_summary(out_dir)
    n = summary["total_prbs"]
    slot_us = summary["slot_us"]
    frame_us = summary["frame_ms"] * 1000
    problems: list[str] = []

    slots: dict[int, list[dict]] = defaultdict(list)
    with open(out_dir / "slots.csv", newline="") as fh:
        for row in csv.DictReader(fh):
            slots[int(row["slot"])].append(row)

    frame_caps: dict[tuple[int, str], int] = {}
    for slot, rows in sorted(slots.items()):
        total_granted = total_used = 0
        feasible_need = 0
        unmet_below_cap = False
        parsed = []
        for r in rows:
            ded, mn, mx = int(r["ded_pct"]), int(r["min_pct"]), int(r["max_pct"])
            demand, granted, used = int(r["demand_prbs"]), int(r["granted_prbs"]), int(r["used_prbs"])
            d_prbs, m_prbs, cap = ded * n // 100, mn * n // 100, mx * n // 100
            label = _slice_label(r["sst"], r["sd"])
            parsed.append((label, d_prbs, m_prbs, cap, demand, granted, used))
            total_granted += granted
            total_used += used
            target = min(m_prbs, demand, cap) if demand > 0 else 0
            feasible_need += max(d_prbs, target)
            if granted < demand and granted < cap:
                unmet_below_cap = True
            frame = (slot * slot_us) // frame_us * frame_us // 1000
            frame_caps[(frame, label)] = max(frame_caps.get((frame, label), 0), cap)
        if total_granted > n:
            problems.append(f"slot {slot}: granted {total_granted} > N={n}")
        if total_used > n:
            problems.append(f"slot {slot}: used {total_used} > N={n}")
        if total_granted < n and unmet_below_cap:
            problems.append(f"slot {slot}: {n - total_granted} PRB(s) idle while a slice has unmet demand")
        for label, d_prbs, m_prbs, cap, demand, granted, used in parsed:
            if granted > cap:
                problems.append(f"slot {slot} slice {label}: granted {granted} > cap {cap}")
            if used > granted:
                problems.append(f"slot {slot} slice {label}: used {used} > granted {granted}")
            if granted < d_prbs:
                problems.append(f"slot {slot} slice {label}: granted {granted} < dedicated {d_prbs}")
            if feasible_need <= n and demand >= m_prbs and granted < m_prbs:
                problems.append(f"slot {slot} slice {label}: saturated but granted {granted} < min {m_prbs}")

    frames: dict[int, float] = defaultdict(float)
    with open(out_dir / "prbs.csv", newline="") as fh:
        for row in csv.DictReader(fh):
            frame, label, mean = int(row["frame_ms"]), _slice_label(row["sst"], row["sd"]), float(row["mean_prbs"])
            cap = frame_caps.get((frame, label))
            if cap is None:
                problems.append(f"prbs.csv frame {frame} slice {label}: no matching slots")
            elif mean > cap + 1e-9:
                problems.append(f"prbs.csv frame {frame} slice {label}: mean {mean} > cap {cap}")
            frames[frame] += mean
    for frame, total in sorted(frames.items()):
        if total > n + 1e-9:
            problems.append(f"prbs.csv frame {frame}: total {total} > N={n}")
    return problems


# ---------------------------------------------------------------- reporting


def _load_scenario(out_dir):
    return scenario_from_obj(parse_json((Path(out_dir) / "scenario.json").read_text()))


def step_bounds(scn) -> list[tuple[float, float]]:
    cuts = sorted({0.0, *(e.t_s for e in scn.timeline if 0.0 < e.t_s < scn.duration_s), scn.duration_s})
    return list(zip(cuts, cuts[1:]))


def period_bounds(scn) -> list[tuple[float, float]]:
    period = scn.xapp.control_period_s
    out, t = [], 0.0
    while t < scn.duration_s - 1e-9:
        out.append((t, min(t + period, scn.duration_s)))
        t += period
    return out


def _aggregate(prbs, thp, lo_s, hi_s) -> dict:
    lo, hi = lo_s * 1000, hi_s * 1000
    return {
        "t_start_s": lo_s,
        "t_end_s": hi_s,
        "mean_prbs": {k: mean_in(v, lo, hi) for k, v in sorted(prbs.items())},
        "mean_bps": {k: mean_in(v, lo, hi, end_stamp=True) for k, v in sorted(thp.items())},
    }


def report(out_dir) -> tuple[str, dict, int]:
    """Summarize a run; returns (text, machine-readable dict, exit code)."""
    out_dir = Path(out_dir)
    scn = _load_scenario(out_dir)
    summary = load_summary(out_dir)
    prbs = load_prbs(out_dir)
    thp = slice_throughput(out_dir)
    violations = verify(out_dir)
    controls = load_control_log(out_dir)

    data = {
        "name": scn.name,
        "total_prbs": summary["total_prbs"],
        "duration_s": scn.duration_s,
        "control_messages": summary["control_messages"],
        "control_failures": sum(1 for c in controls if c["outcome"].startswith("failure")) ,
        "steps": [_aggregate(prbs, thp, lo, hi) for lo, hi in step_bounds(scn)],
        "control_periods": ([_aggregate(prbs, thp, lo, hi) for lo, hi in period_bounds(scn)]
                            if summary["control_messages"] else []),
        "invariant_violations": len(violations),
        "violation_samples": violations[:20],
    }

    lines = [f"{scn.name}: {summary['total_prbs']} PRBs, {scn.duration_s:g} s, "
             f"{summary['control_messages']} control message(s)"]
    for title, rows in (("control periods", data["control_periods"]), ("timeline steps", data["steps"])):
        if not rows:
            continue
        lines.append(f"{title}:")
        for r in rows:
            prb = "  ".join(f"{k}={v:.1f}" for k, v in r["mean_prbs"].items() if v is not None)
            bps = "  ".join(f"{k}={v / 1e6:.2f}Mbps" for k, v in r["mean_bps"].items() if v is not None)
            lines.append(f"  [{r['t_start_s']:6.1f}, {r['t_end_s']:6.1f}) s  PRBs {prb}  |  {bps}")
    lines.append(f"invariant violations: {len(violations)}")
    lines.extend(f"  {v}" for v in violations[:20])
    return "\n".join(lines), data, 0 if not violations else 1


def write_report(out_dir) -> int:
    text, data, code = report(out_dir)
    (Path(out_dir) / "report.json").write_text(json.dumps(data, indent=2, sort_keys=True) + "\n")
    print(text)
    return code
