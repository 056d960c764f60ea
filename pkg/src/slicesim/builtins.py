"""Built-in replications of the two slicing experiments."""

from __future__ import annotations

from .model import SNSSAI, PduSession, RrmPolicyRatio, SliceConfig, UeContext
from .phy import Numerology, TrafficProfile
from .ric import SlicingXappConfig
from .scenario import Scenario, TimedEvent, validate_scenario

SLICE_1 = SNSSAI(1, 1)
SLICE_2 = SNSSAI(1, 2)
UE_MCS = 20

FULL = TrafficProfile("full_buffer")
OFF = TrafficProfile("off")


def exp1_slicing_control(total_prbs: int = 106, duration_s: float = 100.0, seed: int = 0) -> Scenario:
    """Two slices, one full-buffer UE each, throughput-ranked max-ratio flipping every 10 s."""
    ues = [
        UeContext(1, 0x4601, UE_MCS, 0.0, [PduSession(1, 1, SLICE_1, FULL, mcs=UE_MCS)]),
        UeContext(2, 0x4602, UE_MCS, 0.0, [PduSession(2, 1, SLICE_2, FULL, mcs=UE_MCS)]),
    ]
    return Scenario(
        name="exp1_slicing_control",
        numerology=Numerology(30, total_prbs),
        duration_s=duration_s,
        slices=[SliceConfig(SLICE_1), SliceConfig(SLICE_2)],
        ues=ues,
        xapp=SlicingXappConfig(control_period_s=10.0, window_s=5.0, low_max_pct=90, high_max_pct=10,
                               enabled=True),
        seed=seed,
    )


def exp2_min_prb_multislice(total_prbs: int = 106, seed: int = 0) -> Scenario:
    """UE1 holds a PDU on each slice; UE2 joins slice 1; slice-2 min ratio steps 0 -> 80 -> 40."""
    ues = [
        UeContext(1, 0x4601, UE_MCS, 0.0, [
            PduSession(1, 1, SLICE_1, FULL, mcs=UE_MCS),
            PduSession(1, 2, SLICE_2, FULL, mcs=UE_MCS),
        ]),
        UeContext(2, 0x4602, UE_MCS, 0.0, []),
    ]
    timeline = [
        TimedEvent(20.0, "establish_pdu", ue_id=2, pdu_id=1, snssai=SLICE_1, traffic=FULL),
        TimedEvent(40.0, "set_policy", snssai=SLICE_2, policy=RrmPolicyRatio(0, 80, 100)),
        TimedEvent(60.0, "set_policy", snssai=SLICE_2, policy=RrmPolicyRatio(0, 40, 100)),
        TimedEvent(80.0, "set_traffic", ue_id=1, pdu_id=1, traffic=OFF),
        TimedEvent(80.0, "set_traffic", ue_id=1, pdu_id=2, traffic=OFF),
        TimedEvent(100.0, "set_traffic", ue_id=2, pdu_id=1, traffic=OFF),
    ]
    return Scenario(
        name="exp2_min_prb_multislice",
        numerology=Numerology(30, total_prbs),
        duration_s=100.0,
        slices=[SliceConfig(SLICE_1, RrmPolicyRatio(0, 0, 100)), SliceConfig(SLICE_2, RrmPolicyRatio(0, 0, 100))],
        ues=ues,
        timeline=timeline,
        xapp=SlicingXappConfig(enabled=False),
        seed=seed,
    )


BUILTINS = {
    "exp1": exp1_slicing_control,
    "exp2": exp2_min_prb_multislice,
}


def builtin_scenarios() -> dict[str, Scenario]:
    out = {"exp1_slicing_control": exp1_slicing_control(), "exp2_min_prb_multislice": exp2_min_prb_multislice()}
    for scn in out.values():
        problems = validate_scenario(scn)
        assert not problems, problems
    return out
