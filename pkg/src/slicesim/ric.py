"""Near-RT RIC: KPM time-series store, the two xApps and the runtime loop."""

from __future__ import annotations

import csv
import logging
from bisect import bisect_right
from collections import deque
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

from .e2.codec import (
    E2Message,
    E2SetupResponseBody,
    RicControlBody,
    RicIndicationBody,
    SubscriptionBody,
)
from .e2.endpoint import E2Endpoint
from .model import SNSSAI, KpmRecord, RrmPolicyRatio, SliceConfig

log = logging.getLogger(__name__)


class RicError(Exception):
    pass


class NonMonotonicTimestamp(RicError):
    def __init__(self, rejected: Sequence[KpmRecord]):
        self.rejected = list(rejected)
        super().__init__(f"{len(self.rejected)} record(s) not newer than their series")


class UnknownSlice(RicError):
    pass


class NotEnoughSlices(RicError):
    pass


class InvalidXappConfig(RicError):
    pass


SeriesKey = tuple[SNSSAI, int, int]


class KpmStore:
    """In-process time-series store keyed by (S-NSSAI, RNTI, PDU id)."""

    def __init__(self, retention_window_s: float = 60.0):
        if retention_window_s <= 0:
            raise ValueError("retention window must be positive")
        self.retention_ms = retention_window_s * 1000.0
        self.series: dict[SeriesKey, deque[tuple[int, KpmRecord]]] = {}
        self.seen_slices: set[SNSSAI] = set()
        self.latest_ms: Optional[int] = None

    def append(self, rec: KpmRecord) -> bool:
        key = (rec.snssai, rec.rnti, rec.pdu_id)
        points = self.series.get(key)
        if points and rec.timestamp_ms <= points[-1][0]:
            return False
        if points is None:
            points = self.series[key] = deque()
        points.append((rec.timestamp_ms, rec))
        self.seen_slices.add(rec.snssai)
        if self.latest_ms is None or rec.timestamp_ms > self.latest_ms:
            self.latest_ms = rec.timestamp_ms
        return True

    def evict(self) -> None:
        if self.latest_ms is None:
            return
        horizon = self.latest_ms - self.retention_ms
        for key in list(self.series):
            points = self.series[key]
            while points and points[0][0] < horizon:
                points.popleft()
            if not points:
                del self.series[key]

    def points(self, key: SeriesKey) -> list[tuple[int, KpmRecord]]:
        return list(self.series.get(key, ()))

    def slice_keys(self, snssai: SNSSAI) -> list[SeriesKey]:
        return sorted((k for k in self.series if k[0] == snssai), key=lambda k: (k[1], k[2]))

    def __len__(self) -> int:
        return sum(len(p) for p in self.series.values())


def kpm_xapp_on_indication(store: KpmStore, body: RicIndicationBody) -> KpmStore:
    """Append every record to its series, then evict past the retention window.

    Records not newer than their series are skipped and reported together
    through NonMonotonicTimestamp once the rest have been stored.
    """
    rejected = [r for r in body.records if not store.append(r)]
    store.evict()
    if rejected:
        raise NonMonotonicTimestamp(rejected)
    return store


def avg_slice_throughput(store: KpmStore, snssai: SNSSAI, now_ms: float, window_s: float) -> float:
    """Mean slice throughput over (now - window, now].

    Flow throughputs are summed per report timestamp, then averaged over the
    distinct timestamps in the window.
    """
    if window_s <= 0:
        raise ValueError("window_s must be positive")
    if snssai not in store.seen_slices:
        raise UnknownSlice(str(snssai))
    lo = now_ms - window_s * 1000.0
    per_ts: dict[int, float] = {}
    for key in store.slice_keys(snssai):
        points = store.series[key]
        stamps = [t for t, _ in points]
        i = bisect_right(stamps, lo)
        for t, rec in list(points)[i:]:
            if t > now_ms:
                break
            per_ts[t] = per_ts.get(t, 0.0) + rec.dl_thp_bps
    if not per_ts:
        return 0.0
    return sum(per_ts[t] for t in sorted(per_ts)) / len(per_ts)


@dataclass
class SlicingXappConfig:
    control_period_s: float = 10.0
    window_s: float = 5.0
    low_max_pct: int = 90
    high_max_pct: int = 10
    enabled: bool = True

    def validate(self, slices: Iterable[SliceConfig] = ()) -> None:
        if not 0 < self.window_s <= self.control_period_s:
            raise InvalidXappConfig("need 0 < window_s <= control_period_s")
        for name in ("low_max_pct", "high_max_pct"):
            v = getattr(self, name)
            if isinstance(v, bool) or not isinstance(v, int) or not 0 <= v <= 100:
                raise InvalidXappConfig(f"{name} must be an integer percentage")
        for s in slices:
            if min(self.low_max_pct, self.high_max_pct) < s.policy.min_pct:
                raise InvalidXappConfig(
                    f"low/high max ratio below slice {s.snssai} min ratio {s.policy.min_pct}")

    @property
    def control_period_ms(self) -> int:
        return round(self.control_period_s * 1000)


def slicing_xapp_tick(store: KpmStore, slices: Sequence[SliceConfig], cfg: SlicingXappConfig,
                      now_ms: float, ran_node_id: str = "gnb") -> Optional[RicControlBody]:
    """Give the slowest slice the low-throughput max ratio and the fastest the high one.

    Ranking uses the windowed average throughput; ties go to ascending
    S-NSSAI, with the lowest-ranked slice treated as the slowest. Slices in
    between keep their policy. Returns None when the xApp is disabled.
    """
    if len(slices) < 2:
        raise NotEnoughSlices(f"need at least 2 slices, have {len(slices)}")
    if not cfg.enabled:
        return None
    avgs = {}
    for s in slices:
        try:
            avgs[s.snssai] = avg_slice_throughput(store, s.snssai, now_ms, cfg.window_s)
        except UnknownSlice:
            avgs[s.snssai] = 0.0
    ranked = sorted(slices, key=lambda s: (avgs[s.snssai], s.snssai.key))
    low, high = ranked[0], ranked[-1]
    updates = {
        low.snssai: _with_max(low.policy, cfg.low_max_pct),
        high.snssai: _with_max(high.policy, cfg.high_max_pct),
    }
    entries = tuple(sorted(updates.items(), key=lambda kv: kv[0].key))
    return RicControlBody(ran_node_id, entries)


def _with_max(p: RrmPolicyRatio, max_pct: int) -> RrmPolicyRatio:
    return RrmPolicyRatio(p.dedicated_pct, p.min_pct, max_pct)


@dataclass
class ControlLogEntry:
    timestamp_ms: int
    snssai: SNSSAI
    policy: RrmPolicyRatio
    outcome: str = "pending"


CONTROL_LOG_HEADER = ("timestamp_ms", "snssai", "ded", "min", "max", "outcome")


def write_control_log(entries: Iterable[ControlLogEntry], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CONTROL_LOG_HEADER)
        for e in entries:
            w.writerow([e.timestamp_ms, str(e.snssai), e.policy.dedicated_pct, e.policy.min_pct,
                        e.policy.max_pct, e.outcome])


def xapp_enabled_at(initial: bool, toggles: Sequence[tuple[int, bool]], t_ms: int) -> bool:
    state = initial
    for when, value in toggles:
        if when <= t_ms:
            state = value
        else:
            break
    return state


def tick_times(cfg: SlicingXappConfig, after_ms: Optional[int], upto_ms: int, end_ms: int) -> list[int]:
    """Control tick instants in (after_ms, upto_ms] that fall before end_ms."""
    period = cfg.control_period_ms
    first = 0 if after_ms is None else (after_ms // period + 1) * period
    return list(range(first, min(upto_ms, end_ms - 1) + 1, period)) if first <= upto_ms else []


class RicRuntime:
    """Event loop of the Near-RT RIC for one E2 node.

    Virtual time advances only through the E2 session: the subscription
    response marks t=0 and each indication moves the clock to its newest
    record. The slicing xApp fires on every control-period boundary that the
    clock passes, strictly before `end_ms`.
    """

    def __init__(self, xapp: SlicingXappConfig, end_ms: int, reporting_period_ms: int = 500,
                 store: Optional[KpmStore] = None, xapp_toggles: Sequence[tuple[int, bool]] = (),
                 ric_id: str = "near-rt-ric"):
        self.xapp = xapp
        self.end_ms = end_ms
        self.reporting_period_ms = reporting_period_ms
        self.store = store or KpmStore()
        self.toggles = sorted(xapp_toggles)
        self.ric_id = ric_id
        self.ran_node_id: Optional[str] = None
        self.total_prbs: Optional[int] = None
        self.slices: list[SliceConfig] = []
        self.subscribed = False
        self.last_tick_ms: Optional[int] = None
        self.control_log: list[ControlLogEntry] = []
        self.inflight: dict[int, tuple[int, RicControlBody]] = {}
        self.ingest_errors = 0
        self.endpoint: Optional[E2Endpoint] = None

    @property
    def handlers(self):
        return {
            "E2SetupRequest": self._on_setup,
            "RicSubscriptionResponse": self._on_subscribed,
            "RicIndication": self._on_indication,
            "RicControlAck": self._on_control_outcome,
            "RicControlFailure": self._on_control_outcome,
        }

    def attach(self, endpoint: E2Endpoint) -> E2Endpoint:
        endpoint.handlers.update(self.handlers)
        self.endpoint = endpoint
        return endpoint

    def _on_setup(self, ep: E2Endpoint, msg: E2Message) -> None:
        body = msg.body
        self.ran_node_id = body.ran_node_id
        self.total_prbs = body.total_prbs
        self.slices = sorted(body.slices, key=lambda c: c.snssai.key)
        if self.xapp.enabled or self.toggles:
            self.xapp.validate(self.slices)
        ep.respond(msg, "E2SetupResponse", E2SetupResponseBody(self.ric_id))
        ep.request("RicSubscriptionRequest", SubscriptionBody(self.reporting_period_ms))

    def _on_subscribed(self, ep: E2Endpoint, msg: E2Message) -> None:
        self.subscribed = True
        self.advance(0)

    def _on_indication(self, ep: E2Endpoint, msg: E2Message) -> None:
        try:
            kpm_xapp_on_indication(self.store, msg.body)
        except NonMonotonicTimestamp as e:
            self.ingest_errors += len(e.rejected)
            log.warning("dropped %d out-of-order KPM record(s)", len(e.rejected))
        self.advance(max(r.timestamp_ms for r in msg.body.records))

    def advance(self, now_ms: int) -> None:
        for t in tick_times(self.xapp, self.last_tick_ms, now_ms, self.end_ms):
            self.last_tick_ms = t
            enabled = xapp_enabled_at(self.xapp.enabled, self.toggles, t)
            if not enabled:
                continue
            cfg = SlicingXappConfig(self.xapp.control_period_s, self.xapp.window_s,
                                    self.xapp.low_max_pct, self.xapp.high_max_pct, True)
            body = slicing_xapp_tick(self.store, self.slices, cfg, t, self.ran_node_id or "gnb")
            if body is not None:
                self.send_control(t, body)

    def send_control(self, t_ms: int, body: RicControlBody) -> None:
        txn = self.endpoint.request("RicControlRequest", body)
        self.inflight[txn] = (len(self.control_log), body)
        for snssai, policy in body.entries:
            self.control_log.append(ControlLogEntry(t_ms, snssai, policy))

    def _on_control_outcome(self, ep: E2Endpoint, msg: E2Message) -> None:
        start, body = self.inflight.pop(msg.transaction_id)
        if msg.msg_type == "RicControlAck":
            outcome = "ack"
            applied = dict(body.entries)
            self.slices = [SliceConfig(c.snssai, applied.get(c.snssai, c.policy)) for c in self.slices]
        else:
            codes = "|".join(msg.body.violations)
            outcome = f"failure:{codes}" if codes else "failure"
            log.info("control %d rejected by gNB: %s", msg.transaction_id, msg.body.cause)
        for e in self.control_log[start:start + len(body.entries)]:
            e.outcome = outcome


def ric_runtime(endpoint: E2Endpoint, runtime: RicRuntime, timeout: float = 5.0) -> RicRuntime:
    """Serve one E2 session until the gNB closes it (blocking; TCP mode)."""
    from .e2.endpoint import TransportClosed

    runtime.attach(endpoint)
    endpoint.wait_for(lambda: endpoint.setup_done, timeout, "E2 setup")
    try:
        while True:
            endpoint.pump(timeout=1.0)
    except TransportClosed:
        pass
    return runtime
