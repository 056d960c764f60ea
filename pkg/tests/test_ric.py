import pytest

from slicesim.e2.codec import E2SetupRequestBody, RicIndicationBody
from slicesim.e2.endpoint import E2Endpoint
from slicesim.e2.transport import pipe_pair
from slicesim.model import SNSSAI, KpmRecord, RrmPolicyRatio, SliceConfig
from slicesim.ric import (
    InvalidXappConfig, KpmStore, NonMonotonicTimestamp, NotEnoughSlices, RicRuntime, SlicingXappConfig,
    UnknownSlice, avg_slice_throughput, kpm_xapp_on_indication, slicing_xapp_tick, tick_times,
    write_control_log, xapp_enabled_at,
)

A, B, C = SNSSAI(1, 1), SNSSAI(1, 2), SNSSAI(2)


def rec(t, s=A, rnti=1, pdu=1, bps=1e6):
    return KpmRecord(t, rnti, s, pdu, 20, 0.0, bps, 10)


def ind(*records):
    return RicIndicationBody("gnb-1", tuple(records))


def test_ingest_two_records():
    store = kpm_xapp_on_indication(KpmStore(), ind(rec(0), rec(0, B, rnti=2)))
    assert len(store) == 2 and len(store.series) == 2


def test_eviction():
    store = KpmStore(retention_window_s=60)
    kpm_xapp_on_indication(store, ind(rec(0)))
    assert len(store) == 1
    kpm_xapp_on_indication(store, ind(rec(60_000, B)))
    assert len(store) == 2
    kpm_xapp_on_indication(store, ind(rec(60_001, B)))
    assert store.points((A, 1, 1)) == []


def test_duplicate_timestamp_rejected_others_kept():
    store = KpmStore()
    kpm_xapp_on_indication(store, ind(rec(500)))
    with pytest.raises(NonMonotonicTimestamp) as e:
        kpm_xapp_on_indication(store, ind(rec(500), rec(500, B)))
    assert [r.snssai for r in e.value.rejected] == [A]
    assert len(store.points((B, 1, 1))) == 1


def test_avg_constant():
    store = KpmStore()
    for i in range(10):
        kpm_xapp_on_indication(store, ind(rec(500 * (i + 1), bps=10e6)))
    assert avg_slice_throughput(store, A, 5000, 5) == pytest.approx(10e6)


def test_avg_sums_flows():
    store = KpmStore()
    for i in range(10):
        t = 500 * (i + 1)
        kpm_xapp_on_indication(store, ind(rec(t, rnti=1, bps=4e6), rec(t, rnti=2, bps=6e6)))
    assert avg_slice_throughput(store, A, 5000, 5) == pytest.approx(10e6)


def test_avg_window_bounds():
    store = KpmStore()
    for t, v in ((1000, 1.0), (2000, 2.0), (3000, 3.0)):
        kpm_xapp_on_indication(store, ind(rec(t, bps=v)))
    # window (1000, 3000]
    assert avg_slice_throughput(store, A, 3000, 2) == pytest.approx(2.5)
    assert avg_slice_throughput(store, A, 100_000, 5) == 0.0
    with pytest.raises(UnknownSlice):
        avg_slice_throughput(store, B, 3000, 5)


def test_queries_do_not_mutate():
    store = KpmStore()
    for t in range(0, 5000, 500):
        kpm_xapp_on_indication(store, ind(rec(t, bps=t)))
    before = {k: list(v) for k, v in store.series.items()}
    avg_slice_throughput(store, A, 3000, 2)
    store.points((A, 1, 1))
    kpm_xapp_on_indication(store, ind(rec(5000)))
    avg_slice_throughput(store, A, 5000, 5)
    assert {k: list(v)[:len(before[k])] for k, v in store.series.items()} == before


SLICES = [SliceConfig(A), SliceConfig(B)]


def test_tick_low_high():
    store = KpmStore()
    kpm_xapp_on_indication(store, ind(rec(1000, A, bps=5e6), rec(1000, B, rnti=2, bps=50e6)))
    body = slicing_xapp_tick(store, SLICES, SlicingXappConfig(), 1000)
    assert dict(body.entries) == {A: RrmPolicyRatio(0, 0, 90), B: RrmPolicyRatio(0, 0, 10)}


def test_tick_tie_break():
    store = KpmStore()
    kpm_xapp_on_indication(store, ind(rec(1000, A), rec(1000, B, rnti=2)))
    body = slicing_xapp_tick(store, SLICES, SlicingXappConfig(), 1000)
    assert dict(body.entries) == {A: RrmPolicyRatio(0, 0, 90), B: RrmPolicyRatio(0, 0, 10)}
    # nothing seen at all also ties
    assert slicing_xapp_tick(KpmStore(), SLICES, SlicingXappConfig(), 0) == body


def test_tick_preserves_other_fields_and_middle_slices():
    slices = [SliceConfig(A, RrmPolicyRatio(5, 10, 50)), SliceConfig(B, RrmPolicyRatio(0, 0, 50)),
              SliceConfig(C, RrmPolicyRatio(0, 5, 50))]
    store = KpmStore()
    kpm_xapp_on_indication(store, ind(rec(1000, A, bps=1), rec(1000, B, rnti=2, bps=2), rec(1000, C, rnti=3, bps=3)))
    body = slicing_xapp_tick(store, slices, SlicingXappConfig(), 1000)
    assert dict(body.entries) == {A: RrmPolicyRatio(5, 10, 90), C: RrmPolicyRatio(0, 5, 10)}


def test_tick_errors():
    with pytest.raises(NotEnoughSlices):
        slicing_xapp_tick(KpmStore(), SLICES[:1], SlicingXappConfig(), 0)
    assert slicing_xapp_tick(KpmStore(), SLICES, SlicingXappConfig(enabled=False), 0) is None


def test_xapp_config_validation():
    SlicingXappConfig().validate(SLICES)
    with pytest.raises(InvalidXappConfig):
        SlicingXappConfig(window_s=20).validate()
    with pytest.raises(InvalidXappConfig):
        SlicingXappConfig(high_max_pct=101).validate()
    with pytest.raises(InvalidXappConfig):
        SlicingXappConfig().validate([SliceConfig(A, RrmPolicyRatio(0, 20, 100))])


def test_tick_times():
    cfg = SlicingXappConfig()
    assert tick_times(cfg, None, 0, 100_000) == [0]
    assert tick_times(cfg, 0, 9_500, 100_000) == []
    assert tick_times(cfg, 0, 10_000, 100_000) == [10_000]
    assert tick_times(cfg, 0, 35_000, 100_000) == [10_000, 20_000, 30_000]
    assert tick_times(cfg, 90_000, 100_000, 100_000) == []
    assert len(tick_times(cfg, None, 100_000, 100_000)) == 10


def test_xapp_enabled_at():
    toggles = [(10_000, False), (30_000, True)]
    assert [xapp_enabled_at(True, toggles, t) for t in (0, 10_000, 20_000, 30_000)] == [True, False, False, True]


class _Gnb:
    """Minimal gNB peer that accepts or rejects every control."""

    def __init__(self, accept=True):
        self.accept = accept
        g, r = pipe_pair()
        self.ep = E2Endpoint("gnb", g, {
            "RicSubscriptionRequest": lambda ep, m: ep.respond(m, "RicSubscriptionResponse", m.body),
            "RicControlRequest": self.on_control,
        })
        self.ric_ep = E2Endpoint("ric", r)
        self.controls = []

    def on_control(self, ep, msg):
        self.controls.append(msg)
        if self.accept:
            ep.respond(msg, "RicControlAck")
        else:
            from slicesim.e2.codec import RicControlFailureBody
            ep.respond(msg, "RicControlFailure", RicControlFailureBody("InvalidPolicy", ("MinExceedsMax",)))

    def pump(self):
        while self.ep.pump() + self.ric_ep.pump():
            pass


def _drive(runtime, gnb, end_ms):
    runtime.attach(gnb.ric_ep)
    gnb.ep.start_setup(E2SetupRequestBody("gnb-1", 106, tuple(SLICES)))
    gnb.pump()
    for t in range(500, end_ms + 1, 500):
        gnb.ep.indicate(ind(rec(t, A, bps=1e6 * (t // 10_000 % 2)), rec(t, B, rnti=2, bps=5e5)))
        gnb.pump()


def test_runtime_ten_controls_in_100s():
    rt = RicRuntime(SlicingXappConfig(), end_ms=100_000)
    gnb = _Gnb()
    _drive(rt, gnb, 100_000)
    assert len(gnb.controls) == 10
    assert [e.timestamp_ms for e in rt.control_log[::2]] == list(range(0, 100_000, 10_000))
    assert all(e.outcome == "ack" for e in rt.control_log)


def test_runtime_failure_logged_and_continues():
    rt = RicRuntime(SlicingXappConfig(), end_ms=30_000)
    gnb = _Gnb(accept=False)
    _drive(rt, gnb, 30_000)
    assert len(gnb.controls) == 3
    assert {e.outcome for e in rt.control_log} == {"failure:MinExceedsMax"}


def test_runtime_disabled():
    rt = RicRuntime(SlicingXappConfig(enabled=False), end_ms=30_000)
    gnb = _Gnb()
    _drive(rt, gnb, 30_000)
    assert gnb.controls == [] and rt.control_log == []


def test_replay_identical_control_log(tmp_path):
    logs = []
    for i in range(2):
        rt = RicRuntime(SlicingXappConfig(), end_ms=50_000)
        _drive(rt, _Gnb(), 50_000)
        path = tmp_path / f"log{i}.csv"
        write_control_log(rt.control_log, path)
        logs.append(path.read_bytes())
    assert logs[0] == logs[1]
    assert logs[0].startswith(b"timestamp_ms,snssai,ded,min,max,outcome\n0,1:000001,0,0,90,ack\n")
