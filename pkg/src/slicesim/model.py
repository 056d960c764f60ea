"""Shared domain types: slice identities, RRM policies, UEs, PDU sessions, KPM records."""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Iterable, Optional

if TYPE_CHECKING:
    from .phy import TrafficProfile

MAX_SLICES_PER_UE = 8
MAX_MCS = 28


@dataclass(frozen=True, eq=False)
class SNSSAI:
    sst: int
    sd: Optional[int] = None

    def __eq__(self, other):
        if other.__class__ is not SNSSAI:
            return NotImplemented
        return self.sst == other.sst and self.sd == other.sd

    def __hash__(self):
        # used as a dict key in every scheduling step
        try:
            return self._hash
        except AttributeError:
            h = hash((self.sst, self.sd))
            object.__setattr__(self, "_hash", h)
            return h

    def __post_init__(self):
        if isinstance(self.sst, bool) or not isinstance(self.sst, int) or not 0 <= self.sst <= 0xFF:
            raise ValueError(f"sst out of range: {self.sst!r}")
        if self.sd is not None and (
            isinstance(self.sd, bool) or not isinstance(self.sd, int) or not 0 <= self.sd <= 0xFFFFFF
        ):
            raise ValueError(f"sd out of range: {self.sd!r}")

    @property
    def key(self) -> tuple[int, int]:
        """Total-order key; an absent SD sorts before every present SD."""
        return (self.sst, -1 if self.sd is None else self.sd)

    def __lt__(self, other: "SNSSAI") -> bool:
        return self.key < other.key

    def __str__(self) -> str:
        if self.sd is None:
            return str(self.sst)
        return f"{self.sst}:{self.sd:06x}"

    @classmethod
    def parse(cls, text: str) -> "SNSSAI":
        sst, sep, sd = text.partition(":")
        return cls(int(sst), int(sd, 16) if sep else None)

    def sd_text(self) -> str:
        return "" if self.sd is None else str(self.sd)


@dataclass(frozen=True)
class RrmPolicyRatio:
    dedicated_pct: int = 0
    min_pct: int = 0
    max_pct: int = 100

    def violations(self) -> list[str]:
        out = []
        for v in (self.dedicated_pct, self.min_pct, self.max_pct):
            if isinstance(v, bool) or not isinstance(v, int) or not 0 <= v <= 100:
                return ["PercentOutOfRange"]
        if self.dedicated_pct > self.min_pct:
            out.append("DedicatedExceedsMin")
        if self.min_pct > self.max_pct:
            out.append("MinExceedsMax")
        return out

    def is_valid(self) -> bool:
        return not self.violations()

    def prbs(self, total_prbs: int) -> tuple[int, int, int]:
        """(dedicated, min, max) converted to PRBs with floor rounding."""
        return (
            self.dedicated_pct * total_prbs // 100,
            self.min_pct * total_prbs // 100,
            self.max_pct * total_prbs // 100,
        )


@dataclass(frozen=True)
class SliceConfig:
    snssai: SNSSAI
    policy: RrmPolicyRatio = RrmPolicyRatio()


@dataclass
class PduSession:
    ue_id: int
    pdu_id: int
    snssai: SNSSAI
    traffic: "TrafficProfile"
    backlog_bytes: int = 0
    pf_avg_bps: float = 0.0
    # copied from the owning UE; the UE context is authoritative
    mcs: int = 20
    # fractional-byte carry for CBR arrivals
    arrival_carry: float = 0.0

    @property
    def key(self) -> tuple[int, int]:
        return (self.ue_id, self.pdu_id)


@dataclass
class UeContext:
    ue_id: int
    rnti: int
    mcs: int = 20
    target_bler: float = 0.0
    sessions: list[PduSession] = field(default_factory=list)


@dataclass(frozen=True)
class KpmRecord:
    timestamp_ms: int
    rnti: int
    snssai: SNSSAI
    pdu_id: int
    mcs: int
    bler: float
    dl_thp_bps: float
    dl_prbs: int


@dataclass(frozen=True)
class Violation:
    code: str
    detail: str = ""

    def __str__(self) -> str:
        return f"{self.code}: {self.detail}" if self.detail else self.code


def validate_cell_config(slices: Iterable[SliceConfig], ues: Iterable[UeContext]) -> list[Violation]:
    """Return every admission violation of a cell configuration.

    The result is sorted, so it does not depend on the order of the inputs.
    An empty list means the configuration is admissible.
    """
    slices = list(slices)
    ues = list(ues)
    out: set[Violation] = set()

    counts = Counter(s.snssai for s in slices)
    for snssai, n in counts.items():
        if n > 1:
            out.add(Violation("DuplicateSnssai", str(snssai)))
    for s in slices:
        for code in s.policy.violations():
            out.add(Violation(code, str(s.snssai)))
    if sum(s.policy.dedicated_pct for s in slices) > 100:
        out.add(Violation("DedicatedSumExceeds100"))

    rntis = Counter(ue.rnti for ue in ues)
    for rnti, n in rntis.items():
        if n > 1:
            out.add(Violation("DuplicateRnti", str(rnti)))
    ue_ids = Counter(ue.ue_id for ue in ues)
    for ue_id, n in ue_ids.items():
        if n > 1:
            out.add(Violation("DuplicateUeId", str(ue_id)))

    declared = set(counts)
    for ue in ues:
        if not 1 <= ue.rnti <= 0xFFFF:
            out.add(Violation("RntiOutOfRange", str(ue.rnti)))
        if not 0 <= ue.mcs <= MAX_MCS:
            out.add(Violation("McsOutOfRange", f"ue {ue.ue_id}"))
        if not 0.0 <= ue.target_bler < 1.0:
            out.add(Violation("BlerOutOfRange", f"ue {ue.ue_id}"))
        pdu_ids = Counter(p.pdu_id for p in ue.sessions)
        for pdu_id, n in pdu_ids.items():
            if n > 1:
                out.add(Violation("DuplicatePduSession", f"ue {ue.ue_id} pdu {pdu_id}"))
        for p in ue.sessions:
            if not 1 <= p.pdu_id <= 15:
                out.add(Violation("PduIdOutOfRange", f"ue {ue.ue_id} pdu {p.pdu_id}"))
            if p.snssai not in declared:
                out.add(Violation("UnknownSlice", f"ue {ue.ue_id} pdu {p.pdu_id} -> {p.snssai}"))
        if len({p.snssai for p in ue.sessions}) > MAX_SLICES_PER_UE:
            out.add(Violation("TooManySlicesPerUe", f"ue {ue.ue_id}"))

    return sorted(out, key=lambda v: (v.code, v.detail))
