"""Canonical length-prefixed JSON codec for E2 messages.

A frame is a 4-byte big-endian length followed by that many bytes of UTF-8
JSON. Keys are sorted, there is no insignificant whitespace, integers are
written bare and reals carry at most six fractional digits, so two equal
messages always encode to identical bytes.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass
from typing import Any, Optional, Union

from ..model import SNSSAI, KpmRecord, RrmPolicyRatio, SliceConfig

HEADER = struct.Struct(">I")
MAX_FRAME = 1 << 20
U32 = 0xFFFFFFFF
U64 = (1 << 64) - 1

MSG_TYPES = (
    "E2SetupRequest",
    "E2SetupResponse",
    "RicSubscriptionRequest",
    "RicSubscriptionResponse",
    "RicIndication",
    "RicControlRequest",
    "RicControlAck",
    "RicControlFailure",
)
REQUESTS = {
    "E2SetupRequest": "E2SetupResponse",
    "RicSubscriptionRequest": "RicSubscriptionResponse",
    "RicControlRequest": ("RicControlAck", "RicControlFailure"),
}


class E2Error(Exception):
    pass


class InvalidMessage(E2Error):
    pass


class CodecError(E2Error):
    pass


class Truncated(CodecError):
    def __init__(self, need: int):
        self.need = need
        super().__init__(f"truncated: need {need} more byte(s)")


class Malformed(CodecError):
    def __init__(self, offset: int, reason: str):
        self.offset = offset
        self.reason = reason
        super().__init__(f"malformed at byte {offset}: {reason}")


class UnknownType(CodecError):
    def __init__(self, msg_type: Any):
        self.msg_type = msg_type
        super().__init__(f"unknown msg_type {msg_type!r}")


@dataclass(frozen=True)
class E2SetupRequestBody:
    ran_node_id: str
    total_prbs: int
    slices: tuple[SliceConfig, ...]


@dataclass(frozen=True)
class E2SetupResponseBody:
    ric_id: str


@dataclass(frozen=True)
class SubscriptionBody:
    reporting_period_ms: int = 500


@dataclass(frozen=True)
class RicIndicationBody:
    ran_node_id: str
    records: tuple[KpmRecord, ...]


@dataclass(frozen=True)
class RicControlBody:
    ran_node_id: str
    entries: tuple[tuple[SNSSAI, RrmPolicyRatio], ...]


@dataclass(frozen=True)
class RicControlFailureBody:
    cause: str
    violations: tuple[str, ...] = ()


Body = Union[None, E2SetupRequestBody, E2SetupResponseBody, SubscriptionBody,
             RicIndicationBody, RicControlBody, RicControlFailureBody]

BODY_TYPES = {
    "E2SetupRequest": E2SetupRequestBody,
    "E2SetupResponse": E2SetupResponseBody,
    "RicSubscriptionRequest": SubscriptionBody,
    "RicSubscriptionResponse": SubscriptionBody,
    "RicIndication": RicIndicationBody,
    "RicControlRequest": RicControlBody,
    "RicControlAck": type(None),
    "RicControlFailure": RicControlFailureBody,
}


@dataclass(frozen=True)
class E2Message:
    msg_type: str
    transaction_id: int
    body: Body = None


def quantize(x: float) -> float:
    """Snap a real onto the 1e-6 grid the wire format can carry exactly."""
    return round(float(x), 6) + 0.0


# ---------------------------------------------------------------- encoding


def _fmt_real(x: float) -> str:
    text = f"{x:.6f}".rstrip("0")
    if text.endswith("."):
        text += "0"
    return "0.0" if text == "-0.0" else text


class _Real(float):
    """Marks a value for real formatting even when it is integral."""


def _emit(v: Any, out: list[str]) -> None:
    if isinstance(v, dict):
        out.append("{")
        for i, k in enumerate(sorted(v)):
            if i:
                out.append(",")
            out.append(json.dumps(k, ensure_ascii=False))
            out.append(":")
            _emit(v[k], out)
        out.append("}")
    elif isinstance(v, list):
        out.append("[")
        for i, item in enumerate(v):
            if i:
                out.append(",")
            _emit(item, out)
        out.append("]")
    elif isinstance(v, str):
        out.append(json.dumps(v, ensure_ascii=False))
    elif isinstance(v, float):
        if not math.isfinite(v):
            raise InvalidMessage("non-finite real")
        out.append(_fmt_real(v))
    elif isinstance(v, bool):
        out.append("true" if v else "false")
    elif isinstance(v, int):
        out.append(str(v))
    else:
        raise InvalidMessage(f"cannot encode {type(v).__name__}")


def canonical_json(obj: Any) -> bytes:
    out: list[str] = []
    _emit(obj, out)
    return "".join(out).encode("utf-8")


def _check_int(name, v, lo, hi):
    if isinstance(v, bool) or not isinstance(v, int) or not lo <= v <= hi:
        raise InvalidMessage(f"{name}={v!r} not an integer in [{lo}, {hi}]")
    return v


def _check_real(name, v, lo, hi=math.inf):
    if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v) or not lo <= v <= hi:
        raise InvalidMessage(f"{name}={v!r} not a finite real in [{lo}, {hi}]")
    if quantize(v) != v:
        raise InvalidMessage(f"{name}={v!r} has more than 6 fractional digits")
    return _Real(v)


def _check_str(name, v):
    if not isinstance(v, str) or not 0 < len(v) <= 256:
        raise InvalidMessage(f"{name} must be a non-empty string of at most 256 chars")
    return v


def _snssai_fields(s: SNSSAI) -> dict:
    if not isinstance(s, SNSSAI):
        raise InvalidMessage("snssai must be an SNSSAI")
    d = {"sst": s.sst}
    if s.sd is not None:
        d["sd"] = s.sd
    return d


def _policy_fields(p: RrmPolicyRatio) -> dict:
    if not isinstance(p, RrmPolicyRatio) or not p.is_valid():
        raise InvalidMessage(f"invalid RRM policy {p!r}")
    return {"dedicated_ratio": p.dedicated_pct, "min_ratio": p.min_pct, "max_ratio": p.max_pct}


def _body_fields(msg_type: str, body: Body) -> dict:
    expected = BODY_TYPES[msg_type]
    if not isinstance(body, expected):
        raise InvalidMessage(f"{msg_type} needs a {expected.__name__} body, got {type(body).__name__}")
    if msg_type == "E2SetupRequest":
        if not isinstance(body.slices, tuple):
            raise InvalidMessage("slices must be a tuple")
        ids = [c.snssai for c in body.slices]
        if len(set(ids)) != len(ids):
            raise InvalidMessage("duplicate S-NSSAI in slice list")
        return {
            "ran_node_id": _check_str("ran_node_id", body.ran_node_id),
            "total_prbs": _check_int("total_prbs", body.total_prbs, 1, 0xFFFF),
            "slices": [{**_snssai_fields(c.snssai), **_policy_fields(c.policy)} for c in body.slices],
        }
    if msg_type == "E2SetupResponse":
        return {"ric_id": _check_str("ric_id", body.ric_id)}
    if msg_type in ("RicSubscriptionRequest", "RicSubscriptionResponse"):
        return {"reporting_period_ms": _check_int("reporting_period_ms", body.reporting_period_ms, 1, U32)}
    if msg_type == "RicIndication":
        if not isinstance(body.records, tuple) or not body.records:
            raise InvalidMessage("indication needs at least one record")
        recs = []
        for r in body.records:
            if not isinstance(r, KpmRecord):
                raise InvalidMessage("records must be KpmRecord")
            recs.append({
                "timestamp_ms": _check_int("timestamp_ms", r.timestamp_ms, 0, U64),
                "rnti": _check_int("rnti", r.rnti, 1, 0xFFFF),
                **_snssai_fields(r.snssai),
                "pdu_id": _check_int("pdu_id", r.pdu_id, 1, 15),
                "mcs": _check_int("mcs", r.mcs, 0, 31),
                "bler": _check_real("bler", r.bler, 0.0, 1.0),
                "dl_thp_bps": _check_real("dl_thp_bps", r.dl_thp_bps, 0.0),
                "dl_prbs": _check_int("dl_prbs", r.dl_prbs, 0, U32),
            })
        return {"ran_node_id": _check_str("ran_node_id", body.ran_node_id), "records": recs}
    if msg_type == "RicControlRequest":
        if not isinstance(body.entries, tuple) or not body.entries:
            raise InvalidMessage("control needs at least one entry")
        ids = [e[0] for e in body.entries]
        if len(set(ids)) != len(ids):
            raise InvalidMessage("duplicate S-NSSAI in control entries")
        return {
            "ran_node_id": _check_str("ran_node_id", body.ran_node_id),
            "entries": [{**_snssai_fields(s), **_policy_fields(p)} for s, p in body.entries],
        }
    if msg_type == "RicControlFailure":
        if not isinstance(body.violations, tuple) or not all(isinstance(v, str) and v for v in body.violations):
            raise InvalidMessage("violations must be a tuple of non-empty strings")
        return {"cause": _check_str("cause", body.cause), "violations": list(body.violations)}
    return {}


def to_json_obj(msg: E2Message) -> dict:
    if not isinstance(msg, E2Message):
        raise InvalidMessage("not an E2Message")
    if msg.msg_type not in MSG_TYPES:
        raise InvalidMessage(f"unknown msg_type {msg.msg_type!r}")
    obj = {
        "msg_type": msg.msg_type,
        "transaction_id": _check_int("transaction_id", msg.transaction_id, 0, U32),
    }
    obj.update(_body_fields(msg.msg_type, msg.body))
    return obj


def encode(msg: E2Message) -> bytes:
    payload = canonical_json(to_json_obj(msg))
    if len(payload) > MAX_FRAME:
        raise InvalidMessage(f"encoded message is {len(payload)} bytes, limit {MAX_FRAME}")
    return HEADER.pack(len(payload)) + payload


# ---------------------------------------------------------------- decoding


def _reject_constant(name):
    raise ValueError(f"non-finite number {name}")


def _no_duplicates(pairs):
    obj = {}
    for k, v in pairs:
        if k in obj:
            raise ValueError(f"duplicate key {k!r}")
        obj[k] = v
    return obj


_DECODER = json.JSONDecoder(object_pairs_hook=_no_duplicates, parse_constant=_reject_constant)


class _Fields:
    """Strict accessor over one decoded JSON object."""

    def __init__(self, obj: Any, where: str):
        if not isinstance(obj, dict):
            raise Malformed(HEADER.size, f"{where}: expected an object")
        self.obj = obj
        self.where = where
        self.seen: set[str] = set()

    def _get(self, key, optional=False):
        if key not in self.obj:
            if optional:
                return None
            raise Malformed(HEADER.size, f"{self.where}: missing field {key!r}")
        self.seen.add(key)
        return self.obj[key]

    def int(self, key, lo, hi, optional=False):
        v = self._get(key, optional)
        if v is None and optional:
            return None
        if isinstance(v, bool) or not isinstance(v, int) or not lo <= v <= hi:
            raise Malformed(HEADER.size, f"{self.where}.{key}: {v!r} not an integer in [{lo}, {hi}]")
        return v

    def real(self, key, lo, hi=math.inf):
        v = self._get(key)
        if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v) or not lo <= v <= hi:
            raise Malformed(HEADER.size, f"{self.where}.{key}: {v!r} not a real in [{lo}, {hi}]")
        return float(v)

    def str(self, key):
        v = self._get(key)
        if not isinstance(v, str) or not 0 < len(v) <= 256:
            raise Malformed(HEADER.size, f"{self.where}.{key}: expected a non-empty string")
        return v

    def list(self, key, nonempty=False):
        v = self._get(key)
        if not isinstance(v, list) or (nonempty and not v):
            raise Malformed(HEADER.size, f"{self.where}.{key}: expected a{' non-empty' if nonempty else ''} list")
        return v

    def snssai(self) -> SNSSAI:
        return SNSSAI(self.int("sst", 0, 0xFF), self.int("sd", 0, 0xFFFFFF, optional=True))

    def policy(self) -> RrmPolicyRatio:
        p = RrmPolicyRatio(self.int("dedicated_ratio", 0, 100), self.int("min_ratio", 0, 100),
                           self.int("max_ratio", 0, 100))
        if not p.is_valid():
            raise Malformed(HEADER.size, f"{self.where}: policy violates ded <= min <= max")
        return p

    def done(self):
        extra = set(self.obj) - self.seen
        if extra:
            raise Malformed(HEADER.size, f"{self.where}: unexpected field(s) {sorted(extra)}")


def _decode_body(msg_type: str, f: _Fields) -> Body:
    if msg_type == "E2SetupRequest":
        node = f.str("ran_node_id")
        prbs = f.int("total_prbs", 1, 0xFFFF)
        slices = []
        for i, item in enumerate(f.list("slices")):
            g = _Fields(item, f"slices[{i}]")
            slices.append(SliceConfig(g.snssai(), g.policy()))
            g.done()
        if len({c.snssai for c in slices}) != len(slices):
            raise Malformed(HEADER.size, "duplicate S-NSSAI in slice list")
        return E2SetupRequestBody(node, prbs, tuple(slices))
    if msg_type == "E2SetupResponse":
        return E2SetupResponseBody(f.str("ric_id"))
    if msg_type in ("RicSubscriptionRequest", "RicSubscriptionResponse"):
        return SubscriptionBody(f.int("reporting_period_ms", 1, U32))
    if msg_type == "RicIndication":
        node = f.str("ran_node_id")
        records = []
        for i, item in enumerate(f.list("records", nonempty=True)):
            g = _Fields(item, f"records[{i}]")
            records.append(KpmRecord(
                timestamp_ms=g.int("timestamp_ms", 0, U64),
                rnti=g.int("rnti", 1, 0xFFFF),
                snssai=g.snssai(),
                pdu_id=g.int("pdu_id", 1, 15),
                mcs=g.int("mcs", 0, 31),
                bler=g.real("bler", 0.0, 1.0),
                dl_thp_bps=g.real("dl_thp_bps", 0.0),
                dl_prbs=g.int("dl_prbs", 0, U32),
            ))
            g.done()
        return RicIndicationBody(node, tuple(records))
    if msg_type == "RicControlRequest":
        node = f.str("ran_node_id")
        entries = []
        for i, item in enumerate(f.list("entries", nonempty=True)):
            g = _Fields(item, f"entries[{i}]")
            entries.append((g.snssai(), g.policy()))
            g.done()
        if len({s for s, _ in entries}) != len(entries):
            raise Malformed(HEADER.size, "duplicate S-NSSAI in control entries")
        return RicControlBody(node, tuple(entries))
    if msg_type == "RicControlFailure":
        cause = f.str("cause")
        violations = f.list("violations")
        if not all(isinstance(v, str) and v for v in violations):
            raise Malformed(HEADER.size, "violations must be non-empty strings")
        return RicControlFailureBody(cause, tuple(violations))
    return None


def _parse_payload(payload: bytes) -> E2Message:
    try:
        text = payload.decode("utf-8")
    except UnicodeDecodeError as e:
        raise Malformed(HEADER.size + e.start, "invalid UTF-8") from None
    try:
        obj, end = _DECODER.raw_decode(text)
    except json.JSONDecodeError as e:
        raise Malformed(HEADER.size + len(text[: e.pos].encode("utf-8")), e.msg) from None
    except (ValueError, RecursionError) as e:
        raise Malformed(HEADER.size, str(e) or type(e).__name__) from None
    if end != len(text):
        raise Malformed(HEADER.size + len(text[:end].encode("utf-8")), "trailing bytes inside frame")
    f = _Fields(obj, "message")
    msg_type = f._get("msg_type")
    if not isinstance(msg_type, str):
        raise Malformed(HEADER.size, "msg_type must be a string")
    if msg_type not in MSG_TYPES:
        raise UnknownType(msg_type)
    txn = f.int("transaction_id", 0, U32)
    try:
        body = _decode_body(msg_type, f)
    except ValueError as e:
        raise Malformed(HEADER.size, str(e)) from None
    f.done()
    return E2Message(msg_type, txn, body)


def decode_frame(buf: Union[bytes, bytearray, memoryview], offset: int = 0) -> tuple[E2Message, int]:
    """Decode the frame starting at `offset`; return (message, bytes consumed)."""
    avail = len(buf) - offset
    if avail < HEADER.size:
        raise Truncated(HEADER.size - avail)
    (length,) = HEADER.unpack_from(buf, offset)
    if length > MAX_FRAME:
        raise Malformed(offset, f"frame length {length} exceeds limit {MAX_FRAME}")
    if avail < HEADER.size + length:
        raise Truncated(HEADER.size + length - avail)
    payload = bytes(buf[offset + HEADER.size: offset + HEADER.size + length])
    try:
        msg = _parse_payload(payload)
    except Malformed as e:
        if offset:
            raise Malformed(e.offset + offset, e.reason) from None
        raise
    return msg, HEADER.size + length


def decode(data: Union[bytes, bytearray, memoryview]) -> E2Message:
    """Decode exactly one frame; bytes after it are an error."""
    msg, used = decode_frame(data)
    if used != len(data):
        raise Malformed(used, f"{len(data) - used} byte(s) after frame")
    return msg


class FrameReader:
    """Reassembles messages from an arbitrarily chunked byte stream."""

    def __init__(self):
        self._buf = bytearray()

    def feed(self, data: bytes) -> list[E2Message]:
        self._buf += data
        out = []
        pos = 0
        while True:
            try:
                msg, used = decode_frame(self._buf, pos)
            except Truncated:
                break
            except CodecError:
                # drop everything; the stream cannot be resynchronized
                self._buf.clear()
                raise
            out.append(msg)
            pos += used
        del self._buf[:pos]
        return out

    @property
    def pending(self) -> int:
        return len(self._buf)


def is_response(msg_type: str) -> bool:
    return msg_type in ("E2SetupResponse", "RicSubscriptionResponse", "RicControlAck", "RicControlFailure")


def response_matches(request_type: str, response_type: str) -> bool:
    expect = REQUESTS.get(request_type)
    if isinstance(expect, tuple):
        return response_type in expect
    return response_type == expect


def make(msg_type: str, transaction_id: int, body: Optional[Body] = None) -> E2Message:
    return E2Message(msg_type, transaction_id, body)
