"""Numerology, MCS-to-capacity mapping, BLER model and traffic sources."""

from __future__ import annotations

import math
import random
from dataclasses import dataclass, field
from typing import Iterable, Optional

SUBCARRIERS_PER_PRB = 12
SYMBOLS_PER_SLOT = 14

# 3GPP TS 38.214 Table 5.1.3.1-1 (64QAM): (modulation order, spectral efficiency)
MCS_TABLE_64QAM: tuple[tuple[int, float], ...] = (
    (2, 0.2344), (2, 0.3066), (2, 0.3770), (2, 0.4902), (2, 0.6016),
    (2, 0.7402), (2, 0.8770), (2, 1.0273), (2, 1.1758), (2, 1.3262),
    (4, 1.3281), (4, 1.4766), (4, 1.6953), (4, 1.9141), (4, 2.1602),
    (4, 2.4063), (4, 2.5703), (6, 2.5664), (6, 2.7305), (6, 3.0293),
    (6, 3.3223), (6, 3.6094), (6, 3.9023), (6, 4.2129), (6, 4.5234),
    (6, 4.8164), (6, 5.1152), (6, 5.3320), (6, 5.5547),
)


class InvalidMcs(ValueError):
    pass


@dataclass(frozen=True)
class Numerology:
    scs_khz: int = 30
    total_prbs: int = 106

    def __post_init__(self):
        if self.scs_khz not in (15, 30, 60):
            raise ValueError(f"unsupported subcarrier spacing {self.scs_khz} kHz")
        if self.total_prbs <= 0:
            raise ValueError("total_prbs must be positive")

    @property
    def mu(self) -> int:
        return {15: 0, 30: 1, 60: 2}[self.scs_khz]

    @property
    def slot_duration_ms(self) -> float:
        return 1.0 / (1 << self.mu)

    @property
    def slot_duration_us(self) -> int:
        return 1000 >> self.mu

    @property
    def slot_duration_s(self) -> float:
        return self.slot_duration_us / 1e6


PRESETS = {
    "40MHz": Numerology(30, 106),
    "100MHz": Numerology(30, 273),
}


@dataclass(frozen=True)
class LinkModel:
    """Analytic per-PRB capacity model driven by an MCS spectral-efficiency table."""

    table: tuple[tuple[int, float], ...] = MCS_TABLE_64QAM
    overhead_fraction: float = 0.14
    _bpp: tuple[int, ...] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if not 0.0 <= self.overhead_fraction < 1.0:
            raise ValueError("overhead_fraction must be in [0, 1)")
        if not self.table:
            raise ValueError("empty MCS table")
        # The standard table dips at the QPSK->64QAM switch (16 -> 17), so
        # monotonicity is only required within one modulation order.
        for (qa, sa), (qb, sb) in zip(self.table, self.table[1:]):
            if sa <= 0 or (qa == qb and sb <= sa):
                raise ValueError("spectral efficiency must increase within a modulation order")
        bpp = tuple(
            max(1, math.floor(SUBCARRIERS_PER_PRB * SYMBOLS_PER_SLOT * se * (1.0 - self.overhead_fraction) / 8))
            for _, se in self.table
        )
        object.__setattr__(self, "_bpp", bpp)

    @property
    def max_mcs(self) -> int:
        return len(self.table) - 1

    def se(self, mcs: int) -> float:
        self._check(mcs)
        return self.table[mcs][1]

    def bytes_per_prb(self, mcs: int) -> int:
        self._check(mcs)
        return self._bpp[mcs]

    def peak_bytes_per_prb(self) -> int:
        return max(self._bpp)

    def _check(self, mcs):
        if isinstance(mcs, bool) or not isinstance(mcs, int) or not 0 <= mcs < len(self.table):
            raise InvalidMcs(f"MCS index {mcs!r} outside 0..{len(self.table) - 1}")


def bytes_per_prb(mcs: int, link: LinkModel) -> int:
    return link.bytes_per_prb(mcs)


def bytes_per_prb_for_se(se: float, overhead: float = 0.14) -> int:
    return max(1, math.floor(SUBCARRIERS_PER_PRB * SYMBOLS_PER_SLOT * se * (1.0 - overhead) / 8))


TRAFFIC_KINDS = ("full_buffer", "cbr", "off")


@dataclass(frozen=True)
class TrafficProfile:
    kind: str = "full_buffer"
    rate_bps: Optional[float] = None
    start_s: Optional[float] = None
    stop_s: Optional[float] = None

    def __post_init__(self):
        if self.kind not in TRAFFIC_KINDS:
            raise ValueError(f"unknown traffic kind {self.kind!r}")
        if self.kind == "cbr" and not (self.rate_bps and self.rate_bps > 0):
            raise ValueError("cbr traffic needs rate_bps > 0")
        if self.kind != "cbr" and self.rate_bps is not None:
            raise ValueError(f"rate_bps only applies to cbr traffic, not {self.kind}")
        if self.start_s is not None and self.stop_s is not None and self.start_s >= self.stop_s:
            raise ValueError("traffic start_s must precede stop_s")

    def active(self, now_s: float) -> bool:
        if self.kind == "off":
            return False
        if self.start_s is not None and now_s < self.start_s:
            return False
        if self.stop_s is not None and now_s >= self.stop_s:
            return False
        return True


def full_buffer_pin(total_prbs: int, link: LinkModel) -> int:
    """Backlog held by a full-buffer source: one slot of the whole cell at peak MCS."""
    return total_prbs * link.peak_bytes_per_prb()


def step_traffic(flows: Iterable, now_s: float, slot_duration_s: float, pin_bytes: int) -> None:
    """Add this slot's arrivals to each flow's backlog in place."""
    for f in flows:
        tp = f.traffic
        if not tp.active(now_s):
            continue
        if tp.kind == "full_buffer":
            if f.backlog_bytes < pin_bytes:
                f.backlog_bytes = pin_bytes
        else:
            exact = tp.rate_bps * slot_duration_s / 8 + f.arrival_carry
            whole = math.floor(exact)
            f.arrival_carry = exact - whole
            f.backlog_bytes += whole


class BlerModel:
    """Deterministic scaling by default; stochastic mode draws whole-TB failures from a seeded RNG."""

    def __init__(self, mode: str = "deterministic", seed: int = 0):
        if mode not in ("deterministic", "stochastic"):
            raise ValueError(f"unknown BLER mode {mode!r}")
        self.mode = mode
        self.rng = random.Random(seed)

    def apply(self, tb_bytes: int, target_bler: float) -> tuple[int, int]:
        return apply_bler(tb_bytes, target_bler, self.mode, self.rng)


def apply_bler(tb_bytes: int, target_bler: float, mode: str = "deterministic",
               rng: Optional[random.Random] = None) -> tuple[int, int]:
    """Split a transport block into (delivered, requeued) bytes."""
    if not 0.0 <= target_bler < 1.0:
        raise ValueError("target_bler must lie in [0, 1)")
    if mode == "deterministic":
        delivered = round(tb_bytes * (1.0 - target_bler))
        return delivered, tb_bytes - delivered
    if rng is None:
        raise ValueError("stochastic BLER needs a seeded generator")
    if target_bler > 0.0 and rng.random() < target_bler:
        return 0, tb_bytes
    return tb_bytes, 0
