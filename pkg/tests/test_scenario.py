import json

import pytest

from slicesim.builtins import builtin_scenarios, exp1_slicing_control, exp2_min_prb_multislice
from slicesim.model import SNSSAI, RrmPolicyRatio
from slicesim.scenario import (
    ParseError, ValidationError, dump_scenario, load_scenario, loads_scenario, scenario_to_obj,
)


def doc(**over):
    base = json.loads(dump_scenario(exp2_min_prb_multislice()))
    base.update(over)
    return json.dumps(base)


def codes(exc):
    return {v.code for v in exc.value.violations}


def test_builtins_valid():
    scns = builtin_scenarios()
    exp1 = scns["exp1_slicing_control"]
    assert len(exp1.slices) == 2 and len(exp1.ues) == 2 and exp1.xapp.enabled
    assert all(len(u.sessions) == 1 for u in exp1.ues)
    exp2 = scns["exp2_min_prb_multislice"]
    assert not exp2.xapp.enabled
    assert [len(u.sessions) for u in exp2.ues] == [2, 0]


@pytest.mark.parametrize("factory", [exp1_slicing_control, exp2_min_prb_multislice])
def test_dump_load_roundtrip(factory):
    scn = factory()
    text = dump_scenario(scn).decode()
    again = loads_scenario(text)
    assert dump_scenario(again) == dump_scenario(scn)
    assert scenario_to_obj(again) == scenario_to_obj(scn)


def test_load_from_file(tmp_path):
    p = tmp_path / "s.json"
    p.write_bytes(dump_scenario(exp1_slicing_control(total_prbs=273)))
    assert load_scenario(p).total_prbs == 273


def test_preset_numerology():
    obj = json.loads(doc())
    obj["numerology"] = {"preset": "100MHz"}
    assert loads_scenario(json.dumps(obj)).total_prbs == 273


def test_defaults_filled():
    obj = json.loads(doc())
    for k in ("seed", "pf_alpha", "bler_mode", "kpm_period_ms", "overhead_fraction", "xapp"):
        obj.pop(k, None)
    scn = loads_scenario(json.dumps(obj))
    assert (scn.seed, scn.pf_alpha, scn.bler_mode, scn.kpm_period_ms) == (0, 0.01, "deterministic", 500)
    assert not scn.xapp.enabled


@pytest.mark.parametrize("text", ["", "   \n", "{", '{"a":1,"a":2}', '{"duration_s": NaN}'])
def test_parse_errors(text):
    with pytest.raises(ParseError):
        loads_scenario(text)


def test_parse_error_position():
    with pytest.raises(ParseError) as e:
        loads_scenario('{\n  "name": "x",\n  oops\n}')
    assert e.value.line == 3


def test_undeclared_slice_in_establish():
    obj = json.loads(doc())
    obj["timeline"][0]["sd"] = 9
    with pytest.raises(ValidationError) as e:
        loads_scenario(json.dumps(obj))
    assert "UnknownSlice" in codes(e)


@pytest.mark.parametrize("mutate,code", [
    (lambda o: o["timeline"].reverse(), "TimelineUnsorted"),
    (lambda o: o["timeline"][0].update(ue_id=9), "UnknownUe"),
    (lambda o: o["timeline"][3].update(pdu_id=9), "UnknownPduSession"),
    (lambda o: o["timeline"][1].update(min_ratio=100, max_ratio=90), "MinExceedsMax"),
    (lambda o: o["timeline"][0].update(t_s=200.0), "EventOutOfRange"),
    (lambda o: o.update(duration_s=0.0), "BadValue"),
    (lambda o: o.update(duration_s=1.0001), "BadDuration"),
    (lambda o: o.update(pf_alpha=1.0), "BadPfAlpha"),
    (lambda o: o.update(bler_mode="sometimes"), "BadBlerMode"),
    (lambda o: o["slices"].append(dict(o["slices"][0])), "DuplicateSnssai"),
    (lambda o: o.update(unexpected=1), "UnknownField"),
    (lambda o: o.pop("slices"), "MissingField"),
    (lambda o: o.update(seed=True), "BadValue"),
])
def test_validation_errors(mutate, code):
    obj = json.loads(doc())
    mutate(obj)
    with pytest.raises(ValidationError) as e:
        loads_scenario(json.dumps(obj))
    assert code in codes(e)


def test_xapp_min_conflict_rejected():
    obj = json.loads(dump_scenario(exp1_slicing_control()))
    obj["slices"][0]["min_ratio"] = 20
    with pytest.raises(ValidationError) as e:
        loads_scenario(json.dumps(obj))
    assert "BadXappConfig" in codes(e)


def test_release_then_reestablish_on_other_slice():
    obj = json.loads(doc())
    obj["timeline"] = [
        {"t_s": 1.0, "action": "release_pdu", "ue_id": 1, "pdu_id": 2},
        {"t_s": 2.0, "action": "establish_pdu", "ue_id": 1, "pdu_id": 2, "sst": 1, "sd": 1,
         "traffic": {"kind": "cbr", "rate_bps": 1e6}},
    ]
    scn = loads_scenario(json.dumps(obj))
    assert scn.timeline[1].snssai == SNSSAI(1, 1)


def test_set_policy_event_parsed():
    scn = loads_scenario(doc())
    ev = scn.timeline[1]
    assert ev.action == "set_policy" and ev.snssai == SNSSAI(1, 2) and ev.policy == RrmPolicyRatio(0, 80, 100)
