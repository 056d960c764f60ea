"""Scenario documents: parsing, cross-validation and normalized dumps.

Scenarios are written in the same canonical JSON dialect as the E2 wire
format, so one strict parser serves both.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Optional, Union

from .e2.codec import _Real, canonical_json
from .model import SNSSAI, PduSession, RrmPolicyRatio, SliceConfig, UeContext, Violation, validate_cell_config
from .phy import PRESETS, Numerology, TrafficProfile
from .ric import InvalidXappConfig, SlicingXappConfig

ACTIONS = ("establish_pdu", "release_pdu", "set_traffic", "set_policy", "enable_xapp", "disable_xapp")
BLER_MODES = ("deterministic", "stochastic")


class ScenarioError(Exception):
    pass


class ParseError(ScenarioError):
    def __init__(self, message: str, line: int = 0, column: int = 0, offset: int = 0):
        self.line, self.column, self.offset = line, column, offset
        super().__init__(f"line {line} column {column} (offset {offset}): {message}")


class ValidationError(ScenarioError):
    def __init__(self, violations: list[Violation]):
        self.violations = list(violations)
        super().__init__("; ".join(str(v) for v in self.violations))


@dataclass(frozen=True)
class TimedEvent:
    t_s: float
    action: str
    ue_id: Optional[int] = None
    pdu_id: Optional[int] = None
    snssai: Optional[SNSSAI] = None
    traffic: Optional[TrafficProfile] = None
    policy: Optional[RrmPolicyRatio] = None


@dataclass
class Scenario:
    name: str
    numerology: Numerology
    duration_s: float
    slices: list[SliceConfig]
    ues: list[UeContext]
    timeline: list[TimedEvent] = field(default_factory=list)
    xapp: SlicingXappConfig = field(default_factory=lambda: SlicingXappConfig(enabled=False))
    seed: int = 0
    pf_alpha: float = 0.01
    bler_mode: str = "deterministic"
    kpm_period_ms: int = 500
    overhead_fraction: float = 0.14

    @property
    def total_prbs(self) -> int:
        return self.numerology.total_prbs

    def with_prbs(self, total_prbs: int) -> "Scenario":
        return replace(self, numerology=Numerology(self.numerology.scs_khz, total_prbs))


# ---------------------------------------------------------------- parsing


def _no_duplicates(pairs):
    obj = {}
    for k, v in pairs:
        if k in obj:
            raise ValueError(f"duplicate key {k!r}")
        obj[k] = v
    return obj


def _reject_constant(name):
    raise ValueError(f"non-finite number {name}")


def parse_json(text: str) -> Any:
    if not text.strip():
        raise ParseError("empty document", 1, 1, 0)
    try:
        return json.loads(text, object_pairs_hook=_no_duplicates, parse_constant=_reject_constant)
    except json.JSONDecodeError as e:
        raise ParseError(e.msg, e.lineno, e.colno, e.pos) from None
    except ValueError as e:
        raise ParseError(str(e)) from None


class _Obj:
    def __init__(self, obj: Any, where: str, problems: list[Violation]):
        if not isinstance(obj, dict):
            raise ValidationError([Violation("BadType", f"{where}: expected an object")])
        self.obj, self.where, self.problems = obj, where, problems
        self.used: set[str] = set()

    def get(self, key, kind, default=..., check=None):
        if key not in self.obj:
            if default is ...:
                raise ValidationError(self.problems + [Violation("MissingField", f"{self.where}.{key}")])
            return default
        self.used.add(key)
        v = self.obj[key]
        ok = isinstance(v, kind) and not (isinstance(v, bool) and bool not in (kind if isinstance(kind, tuple) else (kind,)))
        if ok and isinstance(v, float) and not math.isfinite(v):
            ok = False
        if not ok or (check is not None and not check(v)):
            raise ValidationError(self.problems + [Violation("BadValue", f"{self.where}.{key}={v!r}")])
        return v

    def finish(self):
        extra = sorted(set(self.obj) - self.used)
        if extra:
            raise ValidationError(self.problems + [Violation("UnknownField", f"{self.where}: {extra}")])


NUM = (int, float)


def _snssai(o: _Obj) -> SNSSAI:
    return SNSSAI(o.get("sst", int, check=lambda v: 0 <= v <= 255),
                  o.get("sd", int, None, check=lambda v: 0 <= v <= 0xFFFFFF))


def _policy(o: _Obj) -> RrmPolicyRatio:
    pct = lambda v: 0 <= v <= 100  # noqa: E731
    return RrmPolicyRatio(o.get("dedicated_ratio", int, 0, pct), o.get("min_ratio", int, 0, pct),
                          o.get("max_ratio", int, 100, pct))


def _traffic(raw: Any, where: str, problems) -> TrafficProfile:
    o = _Obj(raw, where, problems)
    kind = o.get("kind", str, check=lambda v: v in ("full_buffer", "cbr", "off"))
    rate = o.get("rate_bps", NUM, None, check=lambda v: v > 0)
    start = o.get("start_s", NUM, None, check=lambda v: v >= 0)
    stop = o.get("stop_s", NUM, None, check=lambda v: v >= 0)
    o.finish()
    try:
        return TrafficProfile(kind, None if rate is None else float(rate),
                              None if start is None else float(start), None if stop is None else float(stop))
    except ValueError as e:
        raise ValidationError(problems + [Violation("BadTraffic", f"{where}: {e}")]) from None


def scenario_from_obj(raw: Any) -> Scenario:
    problems: list[Violation] = []
    top = _Obj(raw, "scenario", problems)
    name = top.get("name", str)

    num_raw = _Obj(top.get("numerology", dict, {"preset": "40MHz"}), "numerology", problems)
    preset = num_raw.get("preset", str, None, check=lambda v: v in PRESETS)
    if preset is not None:
        numerology = PRESETS[preset]
        if "total_prbs" in num_raw.obj or "scs_khz" in num_raw.obj:
            raise ValidationError([Violation("BadValue", "numerology: preset excludes scs_khz/total_prbs")])
    else:
        numerology = Numerology(num_raw.get("scs_khz", int, check=lambda v: v in (15, 30, 60)),
                                num_raw.get("total_prbs", int, check=lambda v: 1 <= v <= 0xFFFF))
    num_raw.finish()

    duration = float(top.get("duration_s", NUM, check=lambda v: v > 0))

    slices = []
    for i, s in enumerate(top.get("slices", list)):
        o = _Obj(s, f"slices[{i}]", problems)
        slices.append(SliceConfig(_snssai(o), _policy(o)))
        o.finish()

    ues = []
    for i, u in enumerate(top.get("ues", list, [])):
        o = _Obj(u, f"ues[{i}]", problems)
        ue = UeContext(
            ue_id=o.get("ue_id", int, check=lambda v: v >= 0),
            rnti=o.get("rnti", int),
            mcs=o.get("mcs", int, 20),
            target_bler=float(o.get("target_bler", NUM, 0.0)),
        )
        for j, p in enumerate(o.get("sessions", list, [])):
            po = _Obj(p, f"ues[{i}].sessions[{j}]", problems)
            ue.sessions.append(PduSession(
                ue_id=ue.ue_id,
                pdu_id=po.get("pdu_id", int),
                snssai=_snssai(po),
                traffic=_traffic(po.get("traffic", dict, {"kind": "full_buffer"}), f"{po.where}.traffic", problems),
                mcs=ue.mcs,
            ))
            po.finish()
        o.finish()
        ues.append(ue)

    timeline = []
    for i, e in enumerate(top.get("timeline", list, [])):
        o = _Obj(e, f"timeline[{i}]", problems)
        t = float(o.get("t_s", NUM, check=lambda v: v >= 0))
        action = o.get("action", str, check=lambda v: v in ACTIONS)
        ev = TimedEvent(t, action)
        if action in ("establish_pdu", "release_pdu", "set_traffic"):
            ev = replace(ev, ue_id=o.get("ue_id", int), pdu_id=o.get("pdu_id", int))
        if action == "establish_pdu":
            ev = replace(ev, snssai=_snssai(o),
                         traffic=_traffic(o.get("traffic", dict, {"kind": "full_buffer"}), f"{o.where}.traffic", problems))
        elif action == "set_traffic":
            ev = replace(ev, traffic=_traffic(o.get("traffic", dict), f"{o.where}.traffic", problems))
        elif action == "set_policy":
            ev = replace(ev, snssai=_snssai(o), policy=_policy(o))
        o.finish()
        timeline.append(ev)

    xo = _Obj(top.get("xapp", dict, {}), "xapp", problems)
    xapp = SlicingXappConfig(
        control_period_s=float(xo.get("control_period_s", NUM, 10.0)),
        window_s=float(xo.get("window_s", NUM, 5.0)),
        low_max_pct=xo.get("low_max_pct", int, 90),
        high_max_pct=xo.get("high_max_pct", int, 10),
        enabled=xo.get("enabled", bool, False),
    )
    xo.finish()

    scn = Scenario(
        name=name,
        numerology=numerology,
        duration_s=duration,
        slices=slices,
        ues=ues,
        timeline=timeline,
        xapp=xapp,
        seed=top.get("seed", int, 0, check=lambda v: 0 <= v < 2 ** 64),
        pf_alpha=float(top.get("pf_alpha", NUM, 0.01)),
        bler_mode=top.get("bler_mode", str, "deterministic"),
        kpm_period_ms=top.get("kpm_period_ms", int, 500),
        overhead_fraction=float(top.get("overhead_fraction", NUM, 0.14)),
    )
    top.finish()
    return scn


def validate_scenario(scn: Scenario) -> list[Violation]:
    """Cross-check a scenario: cell config, timeline references, xApp config."""
    out = list(validate_cell_config(scn.slices, scn.ues))
    slot_us = scn.numerology.slot_duration_us
    if scn.duration_s <= 0:
        out.append(Violation("BadDuration", "duration_s must be positive"))
    elif round(scn.duration_s * 1e6) % slot_us:
        out.append(Violation("BadDuration", "duration_s is not a whole number of slots"))
    if not 0.0 < scn.pf_alpha < 1.0:
        out.append(Violation("BadPfAlpha", str(scn.pf_alpha)))
    if scn.bler_mode not in BLER_MODES:
        out.append(Violation("BadBlerMode", scn.bler_mode))
    if scn.kpm_period_ms <= 0 or (scn.kpm_period_ms * 1000) % slot_us:
        out.append(Violation("BadKpmPeriod", str(scn.kpm_period_ms)))
    if not 0.0 <= scn.overhead_fraction < 1.0:
        out.append(Violation("BadOverhead", str(scn.overhead_fraction)))

    times = [e.t_s for e in scn.timeline]
    if times != sorted(times):
        out.append(Violation("TimelineUnsorted"))

    declared = {s.snssai for s in scn.slices}
    ue_by_id = {u.ue_id: u for u in scn.ues}
    live = {(p.ue_id, p.pdu_id): p.snssai for u in scn.ues for p in u.sessions}
    policies = {s.snssai: s.policy for s in scn.slices}
    mins_seen = {s.policy.min_pct for s in scn.slices}
    xapp_ever = scn.xapp.enabled
    for i, e in enumerate(scn.timeline):
        where = f"timeline[{i}] {e.action}@{e.t_s:g}s"
        if not 0 <= e.t_s <= scn.duration_s:
            out.append(Violation("EventOutOfRange", where))
        if e.action in ("establish_pdu", "release_pdu", "set_traffic") and e.ue_id not in ue_by_id:
            out.append(Violation("UnknownUe", where))
            continue
        key = (e.ue_id, e.pdu_id)
        if e.action == "establish_pdu":
            if e.snssai not in declared:
                out.append(Violation("UnknownSlice", where))
            elif key in live:
                out.append(Violation("DuplicatePduSession", where))
            elif not 1 <= e.pdu_id <= 15:
                out.append(Violation("PduIdOutOfRange", where))
            else:
                live[key] = e.snssai
                if len({s for (u, _), s in live.items() if u == e.ue_id}) > 8:
                    out.append(Violation("TooManySlicesPerUe", where))
        elif e.action in ("release_pdu", "set_traffic"):
            if key not in live:
                out.append(Violation("UnknownPduSession", where))
            elif e.action == "release_pdu":
                del live[key]
        elif e.action == "set_policy":
            if e.snssai not in declared:
                out.append(Violation("UnknownSlice", where))
                continue
            policies[e.snssai] = e.policy
            mins_seen.add(e.policy.min_pct)
            cfg = [SliceConfig(s, p) for s, p in policies.items()]
            for v in validate_cell_config(cfg, []):
                out.append(Violation(v.code, f"{where}: {v.detail}"))
        elif e.action == "enable_xapp":
            xapp_ever = True

    if xapp_ever:
        try:
            scn.xapp.validate(SliceConfig(SNSSAI(0), RrmPolicyRatio(0, m, 100)) for m in mins_seen)
        except InvalidXappConfig as e:
            out.append(Violation("BadXappConfig", str(e)))
        if len(scn.slices) < 2:
            out.append(Violation("NotEnoughSlices", "slicing xApp needs at least 2 slices"))
        if scn.xapp.control_period_ms % scn.kpm_period_ms:
            out.append(Violation("BadXappConfig", "control period must be a multiple of the KPM period"))
    return out


def load_scenario(path: Union[str, Path]) -> Scenario:
    text = Path(path).read_text(encoding="utf-8")
    return loads_scenario(text)


def loads_scenario(text: str) -> Scenario:
    scn = scenario_from_obj(parse_json(text))
    problems = validate_scenario(scn)
    if problems:
        raise ValidationError(problems)
    return scn


# ---------------------------------------------------------------- dumping


def _real(x: float) -> _Real:
    return _Real(x)


def _snssai_obj(s: SNSSAI) -> dict:
    d = {"sst": s.sst}
    if s.sd is not None:
        d["sd"] = s.sd
    return d


def _policy_obj(p: RrmPolicyRatio) -> dict:
    return {"dedicated_ratio": p.dedicated_pct, "min_ratio": p.min_pct, "max_ratio": p.max_pct}


def _traffic_obj(t: TrafficProfile) -> dict:
    d: dict[str, Any] = {"kind": t.kind}
    if t.rate_bps is not None:
        d["rate_bps"] = _real(t.rate_bps)
    if t.start_s is not None:
        d["start_s"] = _real(t.start_s)
    if t.stop_s is not None:
        d["stop_s"] = _real(t.stop_s)
    return d


def scenario_to_obj(scn: Scenario) -> dict:
    timeline = []
    for e in scn.timeline:
        d: dict[str, Any] = {"t_s": _real(e.t_s), "action": e.action}
        if e.ue_id is not None:
            d["ue_id"] = e.ue_id
            d["pdu_id"] = e.pdu_id
        if e.snssai is not None:
            d.update(_snssai_obj(e.snssai))
        if e.traffic is not None:
            d["traffic"] = _traffic_obj(e.traffic)
        if e.policy is not None:
            d.update(_policy_obj(e.policy))
        timeline.append(d)
    return {
        "name": scn.name,
        "numerology": {"scs_khz": scn.numerology.scs_khz, "total_prbs": scn.numerology.total_prbs},
        "duration_s": _real(scn.duration_s),
        "seed": scn.seed,
        "pf_alpha": _real(scn.pf_alpha),
        "bler_mode": scn.bler_mode,
        "kpm_period_ms": scn.kpm_period_ms,
        "overhead_fraction": _real(scn.overhead_fraction),
        "slices": [{**_snssai_obj(s.snssai), **_policy_obj(s.policy)} for s in scn.slices],
        "ues": [
            {
                "ue_id": u.ue_id,
                "rnti": u.rnti,
                "mcs": u.mcs,
                "target_bler": _real(u.target_bler),
                "sessions": [{"pdu_id": p.pdu_id, **_snssai_obj(p.snssai), "traffic": _traffic_obj(p.traffic)}
                             for p in u.sessions],
            }
            for u in scn.ues
        ],
        "timeline": timeline,
        "xapp": {
            "enabled": scn.xapp.enabled,
            "control_period_s": _real(scn.xapp.control_period_s),
            "window_s": _real(scn.xapp.window_s),
            "low_max_pct": scn.xapp.low_max_pct,
            "high_max_pct": scn.xapp.high_max_pct,
        },
    }


def dump_scenario(scn: Scenario) -> bytes:
    """Normalized canonical form with every default filled in."""
    return canonical_json(scenario_to_obj(scn))
