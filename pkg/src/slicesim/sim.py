"""Discrete-event simulation of one sliced gNB cell under Near-RT RIC control.

The clock advances in whole slots. Timeline events land on slot
boundaries, KPM indications go out every reporting period, and the RIC
runs on the same virtual clock (in-process by default, or in a separate
process over TCP in lockstep).
"""

from __future__ import annotations

import copy
import csv
import json
import logging
import os
import subprocess
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional

from .e2.codec import (
    E2Message,
    E2SetupRequestBody,
    RicControlFailureBody,
    RicIndicationBody,
    SubscriptionBody,
    _fmt_real,
    quantize,
)
from .e2.endpoint import E2Endpoint
from .e2.transport import TcpTransport, e2_port, pipe_pair
from .model import SNSSAI, KpmRecord, PduSession
from .phy import BlerModel, LinkModel, full_buffer_pin, step_traffic
from .ric import RicRuntime, tick_times, write_control_log, xapp_enabled_at
from .scenario import Scenario, dump_scenario
from .scheduler import InvalidPolicy, SliceScheduler, UnknownSlice

log = logging.getLogger(__name__)

FRAME_US = 10_000
RAN_NODE_ID = "gnb-1"

PRBS_HEADER = ("frame_ms", "sst", "sd", "mean_prbs")
THROUGHPUT_HEADER = ("t_ms", "ue_id", "pdu_id", "sst", "sd", "bps")
SLOTS_HEADER = ("slot", "sst", "sd", "ded_pct", "min_pct", "max_pct", "demand_prbs", "granted_prbs", "used_prbs")


@dataclass
class RunReport:
    name: str
    total_prbs: int
    slots: int
    out_dir: Path
    artifacts: dict[str, Path] = field(default_factory=dict)
    control_messages: int = 0
    mean_prbs: dict[str, float] = field(default_factory=dict)
    delivered_bits: dict[str, int] = field(default_factory=dict)
    wall_s: float = 0.0


def xapp_toggles(scn: Scenario) -> list[tuple[int, bool]]:
    return [(round(e.t_s * 1000), e.action == "enable_xapp") for e in scn.timeline
            if e.action in ("enable_xapp", "disable_xapp")]


def end_ms(scn: Scenario) -> int:
    return round(scn.duration_s * 1000)


def _sd(s: SNSSAI) -> str:
    return s.sd_text()


class _FlowStats:
    __slots__ = ("bytes", "prbs", "tbs", "failed")

    def __init__(self):
        self.bytes = self.prbs = self.tbs = self.failed = 0


class Simulation:
    def __init__(self, scenario: Scenario, out_dir, tcp: bool = False, port: Optional[int] = None):
        self.scn = scenario
        self.out = Path(out_dir)
        self.tcp = tcp
        self.port = port
        num = scenario.numerology
        self.slot_us = num.slot_duration_us
        self.slot_s = num.slot_duration_s
        self.n = num.total_prbs
        self.link = LinkModel(overhead_fraction=scenario.overhead_fraction)
        self.pin = full_buffer_pin(self.n, self.link)
        self.ues = {u.ue_id: copy.deepcopy(u) for u in scenario.ues}
        self.sched = SliceScheduler(scenario.slices, self.n, self.link, scenario.pf_alpha,
                                    self.slot_s, list(self.ues.values()))
        self.bler = BlerModel(scenario.bler_mode, scenario.seed)
        self.flows: dict[tuple[int, int], PduSession] = {}
        for ue in self.ues.values():
            for p in ue.sessions:
                p.mcs = ue.mcs
                self.flows[p.key] = p
        self.flow_list: list[PduSession] = []
        self._refresh_flows()
        self.stats: dict[tuple[int, int], _FlowStats] = {k: _FlowStats() for k in self.flows}
        self.released: dict[tuple[int, int], tuple[PduSession, _FlowStats]] = {}
        self.end_ms = end_ms(scenario)
        self.toggles = xapp_toggles(scenario)
        self.delivered_total: dict[tuple[int, int], int] = {}

        self.gnb: Optional[E2Endpoint] = None
        self.ric: Optional[RicRuntime] = None
        self._peer_pump: Callable[[], int] = lambda: 0
        self.subscribed = False
        self.report_period_ms = scenario.kpm_period_ms
        self.controls_received = 0
        self.controls_expected = 0
        self.last_report_ms: Optional[int] = None
        self._ric_proc: Optional[subprocess.Popen] = None

    # ------------------------------------------------------------ E2 plumbing

    def _refresh_flows(self):
        self.flow_list = [self.flows[k] for k in sorted(self.flows)]

    def _gnb_handlers(self):
        return {
            "RicSubscriptionRequest": self._on_subscription,
            "RicControlRequest": self._on_control,
        }

    def _on_subscription(self, ep: E2Endpoint, msg: E2Message) -> None:
        self.report_period_ms = msg.body.reporting_period_ms
        if self.report_period_ms != self.scn.kpm_period_ms:
            log.warning("RIC asked for %d ms reports; scenario says %d ms",
                        self.report_period_ms, self.scn.kpm_period_ms)
        ep.respond(msg, "RicSubscriptionResponse", SubscriptionBody(self.report_period_ms))
        self.subscribed = True
        self._expect_ticks(None, 0)

    def _on_control(self, ep: E2Endpoint, msg: E2Message) -> None:
        self.controls_received += 1
        body = msg.body
        if body.ran_node_id != RAN_NODE_ID:
            ep.respond(msg, "RicControlFailure", RicControlFailureBody("unknown RAN node", ("UnknownRanNode",)))
            return
        try:
            self.sched.set_policies(body.entries)
        except InvalidPolicy as e:
            codes = tuple(dict.fromkeys(v.code for v in e.violations))
            ep.respond(msg, "RicControlFailure", RicControlFailureBody("policy rejected", codes))
            return
        except UnknownSlice as e:
            ep.respond(msg, "RicControlFailure", RicControlFailureBody(f"unknown slice {e}", ("UnknownSlice",)))
            return
        ep.respond(msg, "RicControlAck")

    def _expect_ticks(self, after_ms, upto_ms):
        for t in tick_times(self.scn.xapp, after_ms, upto_ms, self.end_ms):
            if xapp_enabled_at(self.scn.xapp.enabled, self.toggles, t):
                self.controls_expected += 1

    def _sync(self):
        """Let the RIC catch up with the gNB's virtual time."""
        if self.tcp:
            self.gnb.pump(0.0)
            self.gnb.wait_for(lambda: self.controls_received >= self.controls_expected and not self.gnb.pending,
                              timeout=5.0, what="RIC control")
        else:
            while self.gnb.pump() + self._peer_pump():
                pass
            if self.controls_received != self.controls_expected:
                raise RuntimeError(f"expected {self.controls_expected} controls, got {self.controls_received}")

    def _connect(self):
        setup = E2SetupRequestBody(RAN_NODE_ID, self.n, tuple(s.config for s in self.sched.slices))
        if self.tcp:
            transport = self._start_remote_ric()
            self.gnb = E2Endpoint("gnb", transport, self._gnb_handlers())
            self.gnb.start_setup(setup)
            self.gnb.wait_for(lambda: self.subscribed and not self.gnb.pending, 5.0, "E2 setup and subscription")
        else:
            a, b = pipe_pair()
            self.ric = RicRuntime(copy.copy(self.scn.xapp), self.end_ms, self.scn.kpm_period_ms,
                                  xapp_toggles=self.toggles)
            ric_ep = self.ric.attach(E2Endpoint("ric", b))
            self._peer_pump = ric_ep.pump
            self.gnb = E2Endpoint("gnb", a, self._gnb_handlers())
            self.gnb.start_setup(setup)
        self._sync()

    def _start_remote_ric(self) -> TcpTransport:
        port = self.port or e2_port()
        self.out.mkdir(parents=True, exist_ok=True)
        scn_path = self.out / "scenario.json"
        scn_path.write_bytes(dump_scenario(self.scn))
        env = dict(os.environ, E2_PORT=str(port))
        self._ric_proc = subprocess.Popen(
            [sys.executable, "-m", "slicesim", "ric", "--scenario", str(scn_path), "--out", str(self.out),
             "--port", str(port)],
            env=env,
        )
        deadline = time.monotonic() + 10.0
        while True:
            try:
                return TcpTransport.connect(port=port)
            except OSError:
                if time.monotonic() > deadline or self._ric_proc.poll() is not None:
                    raise
                time.sleep(0.05)

    # ------------------------------------------------------------ timeline

    def _apply_event(self, e) -> None:
        key = (e.ue_id, e.pdu_id)
        if e.action == "establish_pdu":
            ue = self.ues[e.ue_id]
            p = PduSession(e.ue_id, e.pdu_id, e.snssai, e.traffic, mcs=ue.mcs)
            ue.sessions.append(p)
            self.flows[key] = p
            self.stats[key] = _FlowStats()
            self._refresh_flows()
        elif e.action == "release_pdu":
            p = self.flows.pop(key)
            ue = self.ues[e.ue_id]
            ue.sessions = [s for s in ue.sessions if s.pdu_id != e.pdu_id]
            self.released[key] = (p, self.stats.pop(key))
            self._refresh_flows()
        elif e.action == "set_traffic":
            self.flows[key].traffic = e.traffic
        elif e.action == "set_policy":
            self.sched.set_policy(e.snssai, e.policy)
        # enable/disable_xapp act on the RIC, which reads the same timeline

    # ------------------------------------------------------------ reporting

    def _report(self, t_ms: int, thp_writer) -> None:
        period_s = self.report_period_ms / 1000.0
        records = []
        items = [(k, self.flows[k], self.stats[k]) for k in sorted(self.flows)]
        items += [(k, p, st) for k, (p, st) in sorted(self.released.items())]
        self.released.clear()
        for key, p, st in items:
            ue = self.ues[p.ue_id]
            bps = quantize(st.bytes * 8 / period_s)
            if self.bler.mode == "deterministic":
                bler = ue.target_bler
            else:
                bler = st.failed / st.tbs if st.tbs else 0.0
            records.append(KpmRecord(t_ms, ue.rnti, p.snssai, p.pdu_id, ue.mcs, quantize(bler), bps, st.prbs))
            thp_writer.writerow([t_ms, p.ue_id, p.pdu_id, p.snssai.sst, _sd(p.snssai), _fmt_real(bps)])
            self.delivered_total[key] = self.delivered_total.get(key, 0) + st.bytes * 8
            st.bytes = st.prbs = st.tbs = st.failed = 0
        if records and self.subscribed:
            self.gnb.indicate(RicIndicationBody(RAN_NODE_ID, tuple(records)))
            self._expect_ticks(self.last_report_ms if self.last_report_ms is not None else 0, t_ms)
            self.last_report_ms = t_ms
            self._sync()

    # ------------------------------------------------------------ main loop

    def run(self) -> RunReport:
        t0 = time.monotonic()
        self.out.mkdir(parents=True, exist_ok=True)
        slot_us = self.slot_us
        total_slots = round(self.scn.duration_s * 1e6) // slot_us
        frame_slots = max(1, FRAME_US // slot_us)
        report_us = self.scn.kpm_period_ms * 1000
        events = [(round(e.t_s * 1e6), e) for e in self.scn.timeline]
        ev_i = 0
        order = [s.snssai for s in sorted(self.sched.slices, key=lambda s: s.snssai.key)]
        frame_prbs = {s: 0 for s in order}
        frame_count = 0
        total_prbs_by_slice = {s: 0 for s in order}
        deterministic = self.bler.mode == "deterministic"

        self._connect()

        with open(self.out / "prbs.csv", "w", newline="") as f_prbs, \
                open(self.out / "throughput.csv", "w", newline="") as f_thp, \
                open(self.out / "slots.csv", "w", newline="") as f_slots:
            w_prbs = csv.writer(f_prbs, lineterminator="\n")
            w_thp = csv.writer(f_thp, lineterminator="\n")
            w_slots = csv.writer(f_slots, lineterminator="\n")
            w_prbs.writerow(PRBS_HEADER)
            w_thp.writerow(THROUGHPUT_HEADER)
            w_slots.writerow(SLOTS_HEADER)

            for i in range(total_slots):
                now_us = i * slot_us
                while ev_i < len(events) and events[ev_i][0] <= now_us:
                    self._apply_event(events[ev_i][1])
                    ev_i += 1

                flows = self.flow_list
                step_traffic(flows, now_us / 1e6, self.slot_s, self.pin)
                alloc = self.sched.step(i, flows)

                used = dict.fromkeys(order, 0)
                for g in alloc.grants:
                    key = (g.ue_id, g.pdu_id)
                    f = self.flows[key]
                    st = self.stats[key]
                    ue = self.ues[g.ue_id]
                    if deterministic and ue.target_bler == 0.0:
                        delivered = g.tb_bytes
                    else:
                        delivered, requeued = self.bler.apply(g.tb_bytes, ue.target_bler)
                        if requeued and not deterministic:
                            st.failed += 1
                    f.backlog_bytes -= delivered
                    st.bytes += delivered
                    st.prbs += g.prbs
                    st.tbs += 1
                    used[g.snssai] += g.prbs

                policies = {s.snssai: s.policy for s in self.sched.slices}
                for b in alloc.budgets:
                    s = b.snssai
                    p = policies[s]
                    w_slots.writerow((i, s.sst, _sd(s), p.dedicated_pct, p.min_pct, p.max_pct,
                                      alloc.demand_prbs.get(s, 0), b.granted_prbs, used[s]))
                    frame_prbs[s] += used[s]
                    total_prbs_by_slice[s] += used[s]
                frame_count += 1

                end_us = now_us + slot_us
                if frame_count == frame_slots or i == total_slots - 1:
                    frame_ms = (end_us - frame_count * slot_us) // 1000
                    for s in order:
                        w_prbs.writerow((frame_ms, s.sst, _sd(s), f"{frame_prbs[s] / frame_count:.3f}"))
                        frame_prbs[s] = 0
                    frame_count = 0
                if end_us % report_us == 0:
                    self._report(end_us // 1000, w_thp)

        self._finish()
        report = RunReport(
            name=self.scn.name,
            total_prbs=self.n,
            slots=total_slots,
            out_dir=self.out,
            artifacts={name: self.out / name for name in
                       ("prbs.csv", "throughput.csv", "control_log.csv", "slots.csv", "scenario.json",
                        "summary.json")},
            control_messages=self.controls_received,
            mean_prbs={str(s): total_prbs_by_slice[s] / max(1, total_slots) for s in order},
            delivered_bits={f"{u}/{p}": v for (u, p), v in sorted(self.delivered_total.items())},
        )
        self._write_summary(report)
        report.wall_s = time.monotonic() - t0
        return report

    def _finish(self):
        if self.tcp:
            self.gnb.close()
            try:
                rc = self._ric_proc.wait(timeout=30)
            except subprocess.TimeoutExpired:
                self._ric_proc.kill()
                raise RuntimeError("RIC process did not exit")
            if rc != 0:
                raise RuntimeError(f"RIC process exited with status {rc}")
        else:
            self._sync()
            write_control_log(self.ric.control_log, self.out / "control_log.csv")
            self.gnb.close()
            (self.out / "scenario.json").write_bytes(dump_scenario(self.scn))

    def _write_summary(self, report: RunReport) -> None:
        summary = {
            "name": report.name,
            "total_prbs": self.n,
            "scs_khz": self.scn.numerology.scs_khz,
            "slot_us": self.slot_us,
            "frame_ms": FRAME_US // 1000,
            "duration_ms": self.end_ms,
            "kpm_period_ms": self.scn.kpm_period_ms,
            "seed": self.scn.seed,
            "slots": report.slots,
            "control_messages": report.control_messages,
            "mean_prbs": {k: round(v, 6) for k, v in report.mean_prbs.items()},
            "delivered_bits": report.delivered_bits,
        }
        (self.out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")


def run(scenario: Scenario, out_dir, tcp: bool = False, port: Optional[int] = None) -> RunReport:
    return Simulation(scenario, out_dir, tcp=tcp, port=port).run()


def serve_ric(scenario: Scenario, out_dir, port: Optional[int] = None, accept_timeout: float = 30.0) -> RicRuntime:
    """RIC side of TCP mode: accept one gNB, run the xApps, write the control log."""
    from .e2.transport import listen
    from .ric import ric_runtime

    srv = listen(port)
    srv.settimeout(accept_timeout)
    try:
        conn, _ = srv.accept()
    finally:
        srv.close()
    runtime = RicRuntime(copy.copy(scenario.xapp), end_ms(scenario), scenario.kpm_period_ms,
                         xapp_toggles=xapp_toggles(scenario))
    ep = E2Endpoint("ric", TcpTransport(conn))
    ric_runtime(ep, runtime)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_control_log(runtime.control_log, out / "control_log.csv")
    return runtime
