"""Two-tier downlink MAC scheduler.

Tier 1 turns per-slice RRM policies into a PRB budget for the slot
(dedicated reservation, prioritized top-up, then a PF-arbitrated shared
pool). Tier 2 spends each slice budget on its flows one PRB at a time with
proportional fair.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass, field, replace
from typing import Iterable, Mapping, Optional, Sequence

from .model import SNSSAI, RrmPolicyRatio, SliceConfig, Violation, validate_cell_config
from .phy import LinkModel

PF_EPSILON = 1e-3
DEFAULT_ALPHA = 0.01


class SchedulerError(Exception):
    pass


class TotalPrbsZero(SchedulerError):
    pass


class UnknownSlice(SchedulerError):
    pass


class InvalidPolicy(SchedulerError):
    def __init__(self, violations: Sequence[Violation]):
        self.violations = list(violations)
        super().__init__("; ".join(str(v) for v in self.violations))


class InvalidConfig(InvalidPolicy):
    pass


@dataclass
class SliceState:
    config: SliceConfig
    pf_avg_bps: float = 0.0

    @property
    def snssai(self) -> SNSSAI:
        return self.config.snssai

    @property
    def policy(self) -> RrmPolicyRatio:
        return self.config.policy


@dataclass(frozen=True)
class SliceBudget:
    snssai: SNSSAI
    dedicated_prbs: int
    granted_prbs: int


@dataclass(frozen=True)
class Grant:
    ue_id: int
    pdu_id: int
    snssai: SNSSAI
    prbs: int
    tb_bytes: int


@dataclass
class Allocation:
    slot_index: int
    grants: list[Grant] = field(default_factory=list)
    budgets: list[SliceBudget] = field(default_factory=list)
    demand_prbs: dict[SNSSAI, int] = field(default_factory=dict)

    @property
    def total_prbs(self) -> int:
        return sum(g.prbs for g in self.grants)

    def prbs_by_slice(self) -> dict[SNSSAI, int]:
        out = {b.snssai: 0 for b in self.budgets}
        for g in self.grants:
            out[g.snssai] = out.get(g.snssai, 0) + g.prbs
        return out


def _share_pool(granted, demand, caps, metric, pool) -> int:
    """Hand out `pool` PRBs one at a time to the eligible slice with the best metric.

    Lists are indexed in ascending S-NSSAI order, so the first maximum wins
    ties. The metric does not move within a slot, so the PRB-by-PRB loop
    collapses to filling the current winner until it becomes ineligible.
    Returns the PRBs left undistributed.
    """
    n = len(granted)
    while pool > 0:
        best = -1
        for i in range(n):
            if granted[i] < demand[i] and granted[i] < caps[i]:
                if best < 0 or metric[i] > metric[best]:
                    best = i
        if best < 0:
            break
        give = min(pool, demand[best] - granted[best], caps[best] - granted[best])
        granted[best] += give
        pool -= give
    return pool


def _budget_lists(policies, pf_avgs, demand, rate, n):
    """Stages 1-3 over parallel lists in ascending S-NSSAI order."""
    k = len(policies)
    dedicated, guarantee, caps = [0] * k, [0] * k, [0] * k
    for i, p in enumerate(policies):
        dedicated[i], guarantee[i], caps[i] = p.prbs(n)

    # dedicated PRBs are held even without demand
    granted = list(dedicated)
    remaining = n - sum(granted)

    shortfall = [
        max(0, min(guarantee[i], demand[i], caps[i]) - granted[i]) if demand[i] > 0 else 0
        for i in range(k)
    ]
    total_short = sum(shortfall)
    if total_short <= remaining:
        for i in range(k):
            granted[i] += shortfall[i]
        remaining -= total_short
    else:
        quotas = [remaining * sh // total_short for sh in shortfall]
        rems = [remaining * sh % total_short for sh in shortfall]
        left = remaining - sum(quotas)
        for i in sorted(range(k), key=lambda j: (-rems[j], j))[:left]:
            quotas[i] += 1
        for i in range(k):
            granted[i] += quotas[i]
        remaining = 0

    metric = [rate[i] / max(pf_avgs[i], PF_EPSILON) for i in range(k)]
    _share_pool(granted, demand, caps, metric, remaining)
    return dedicated, granted, caps, metric


def compute_slice_budgets(
    slices: Sequence[SliceState],
    demand_prbs: Mapping[SNSSAI, int],
    total_prbs: int,
    demand_rate_bps: Optional[Mapping[SNSSAI, float]] = None,
) -> list[SliceBudget]:
    """Inter-slice tier: turn policies and demand into per-slice PRB budgets.

    `demand_rate_bps` weights the shared-pool PF metric; when omitted every
    slice has weight 1, i.e. plain PF over slice averages.
    Budgets come back in ascending S-NSSAI order.
    """
    if total_prbs <= 0:
        raise TotalPrbsZero("cell has no PRBs")
    ordered = sorted(slices, key=lambda s: s.snssai.key)
    demand = [demand_prbs.get(s.snssai, 0) for s in ordered]
    if demand_rate_bps is None:
        rate = [1.0] * len(ordered)
    else:
        rate = [demand_rate_bps.get(s.snssai, 0.0) for s in ordered]
    dedicated, granted, _, _ = _budget_lists(
        [s.policy for s in ordered], [s.pf_avg_bps for s in ordered], demand, rate, total_prbs)
    return [SliceBudget(s.snssai, dedicated[i], granted[i]) for i, s in enumerate(ordered)]


def flow_demand_prbs(flow, link: LinkModel) -> int:
    if flow.backlog_bytes <= 0:
        return 0
    return -(-flow.backlog_bytes // link.bytes_per_prb(flow.mcs))


def _fill_slice(flows, bpps, start, budget, alpha, slot_s) -> int:
    """Intra-slice PF: spend up to `budget` PRBs on `flows`, one PRB at a time.

    `start` holds PRBs already granted to each flow this slot and is
    updated in place. Returns the number of PRBs spent.
    """
    if budget <= 0:
        return 0
    cands = []
    for i, f in enumerate(flows):
        bpp = bpps[i]
        need = -(-f.backlog_bytes // bpp) if f.backlog_bytes > 0 else 0
        if need > start[i]:
            cands.append((i, f, bpp, need))
    if not cands:
        return 0
    if len(cands) == 1:
        i, f, bpp, need = cands[0]
        give = min(budget, need - start[i])
        start[i] += give
        return give

    keep = 1.0 - alpha
    rate_scale = 8 / slot_s

    def metric(f, bpp, k):
        projected = keep * f.pf_avg_bps + alpha * min(k * bpp, f.backlog_bytes) * rate_scale
        return bpp * rate_scale / max(projected, PF_EPSILON)

    heap = [(-metric(f, bpp, start[i]), f.ue_id, f.pdu_id, i, bpp, need) for i, f, bpp, need in cands]
    heapq.heapify(heap)
    spent = 0
    while spent < budget and heap:
        _, ue, pdu, i, bpp, need = heapq.heappop(heap)
        k = start[i] + 1
        start[i] = k
        spent += 1
        if k < need:
            heapq.heappush(heap, (-metric(flows[i], bpp, k), ue, pdu, i, bpp, need))
    return spent


def schedule_slot(
    slot_index: int,
    slices: Sequence[SliceState],
    flows: Iterable,
    total_prbs: int,
    link: LinkModel,
    alpha: float = DEFAULT_ALPHA,
    slot_duration_s: float = 0.0005,
) -> Allocation:
    """Run both tiers for one slot and return the resulting grants.

    Flows need `ue_id`, `pdu_id`, `snssai`, `mcs`, `backlog_bytes` and
    `pf_avg_bps`. Flows on slices that are not configured are ignored.
    """
    if total_prbs <= 0:
        raise TotalPrbsZero("cell has no PRBs")
    ordered = sorted(slices, key=lambda s: s.snssai.key)
    index = {s.snssai: i for i, s in enumerate(ordered)}
    k = len(ordered)
    members: list[list] = [[] for _ in range(k)]
    for f in flows:
        i = index.get(f.snssai)
        if i is not None:
            members[i].append(f)
    rate_scale = 8 / slot_duration_s
    demand, rate, bpps = [0] * k, [0.0] * k, []
    for i in range(k):
        members[i].sort(key=lambda f: (f.ue_id, f.pdu_id))
        b = [link.bytes_per_prb(f.mcs) for f in members[i]]
        bpps.append(b)
        for f, bpp in zip(members[i], b):
            if f.backlog_bytes > 0:
                demand[i] += -(-f.backlog_bytes // bpp)
                rate[i] += bpp * rate_scale

    policies = [s.policy for s in ordered]
    pf = [s.pf_avg_bps for s in ordered]
    dedicated, granted, caps, metric = _budget_lists(policies, pf, demand, rate, total_prbs)

    counts = [[0] * len(m) for m in members]
    used = [_fill_slice(members[i], bpps[i], counts[i], granted[i], alpha, slot_duration_s) for i in range(k)]

    # Unused non-dedicated budget goes back to the shared pool once.
    returned = 0
    for i in range(k):
        back = max(0, granted[i] - max(used[i], dedicated[i]))
        granted[i] -= back
        returned += back
    if returned:
        before = list(granted)
        _share_pool(granted, demand, caps, metric, returned)
        for i in range(k):
            extra = granted[i] - before[i]
            if extra:
                used[i] += _fill_slice(members[i], bpps[i], counts[i], extra, alpha, slot_duration_s)

    grants = []
    for i, s in enumerate(ordered):
        for j, n_prbs in enumerate(counts[i]):
            if n_prbs:
                f = members[i][j]
                grants.append(Grant(f.ue_id, f.pdu_id, s.snssai, n_prbs,
                                    min(f.backlog_bytes, n_prbs * bpps[i][j])))

    return Allocation(
        slot_index=slot_index,
        grants=grants,
        budgets=[SliceBudget(s.snssai, dedicated[i], granted[i]) for i, s in enumerate(ordered)],
        demand_prbs={s.snssai: demand[i] for i, s in enumerate(ordered)},
    )


def update_pf_averages(
    allocation: Allocation,
    flows: Iterable,
    slices: Iterable[SliceState],
    alpha: float = DEFAULT_ALPHA,
    slot_duration_s: float = 0.0005,
) -> None:
    """EWMA update of flow and slice PF averages from this slot's service, in place."""
    if not 0.0 < alpha < 1.0:
        raise ValueError("alpha must lie in (0, 1)")
    served_flow: dict[tuple[int, int], int] = {}
    served_slice: dict[SNSSAI, int] = {}
    for g in allocation.grants:
        served_flow[(g.ue_id, g.pdu_id)] = served_flow.get((g.ue_id, g.pdu_id), 0) + g.tb_bytes
        served_slice[g.snssai] = served_slice.get(g.snssai, 0) + g.tb_bytes
    for f in flows:
        bps = served_flow.get((f.ue_id, f.pdu_id), 0) * 8 / slot_duration_s
        f.pf_avg_bps = ewma(f.pf_avg_bps, bps, alpha)
    for s in slices:
        bps = served_slice.get(s.snssai, 0) * 8 / slot_duration_s
        s.pf_avg_bps = ewma(s.pf_avg_bps, bps, alpha)


def ewma(avg: float, sample: float, alpha: float) -> float:
    return (1.0 - alpha) * avg + alpha * sample


def apply_rrm_policy(slices: Sequence[SliceState], snssai: SNSSAI, policy: RrmPolicyRatio) -> list[SliceState]:
    """Return a new slice list with `snssai`'s policy replaced; PF state carries over."""
    if not any(s.snssai == snssai for s in slices):
        raise UnknownSlice(str(snssai))
    updated = [
        SliceState(replace(s.config, policy=policy), s.pf_avg_bps) if s.snssai == snssai else s
        for s in slices
    ]
    problems = validate_cell_config([s.config for s in updated], [])
    if problems:
        raise InvalidPolicy(problems)
    return updated


class SliceScheduler:
    """Per-cell scheduler state machine, advanced once per slot."""

    def __init__(self, slices: Sequence[SliceConfig], total_prbs: int, link: Optional[LinkModel] = None,
                 alpha: float = DEFAULT_ALPHA, slot_duration_s: float = 0.0005, ues: Sequence = ()):
        problems = validate_cell_config(slices, ues)
        if problems:
            raise InvalidConfig(problems)
        if total_prbs <= 0:
            raise TotalPrbsZero("cell has no PRBs")
        if not 0.0 < alpha < 1.0:
            raise ValueError("alpha must lie in (0, 1)")
        self.slices = [SliceState(c) for c in slices]
        self.total_prbs = total_prbs
        self.link = link or LinkModel()
        self.alpha = alpha
        self.slot_duration_s = slot_duration_s

    def policy(self, snssai: SNSSAI) -> RrmPolicyRatio:
        for s in self.slices:
            if s.snssai == snssai:
                return s.policy
        raise UnknownSlice(str(snssai))

    def set_policy(self, snssai: SNSSAI, policy: RrmPolicyRatio) -> None:
        self.slices = apply_rrm_policy(self.slices, snssai, policy)

    def set_policies(self, entries: Iterable[tuple[SNSSAI, RrmPolicyRatio]]) -> None:
        """Apply several policy updates atomically: all or none."""
        updated = list(self.slices)
        for snssai, policy in entries:
            if not any(s.snssai == snssai for s in updated):
                raise UnknownSlice(str(snssai))
            updated = [
                SliceState(replace(s.config, policy=policy), s.pf_avg_bps) if s.snssai == snssai else s
                for s in updated
            ]
        problems = validate_cell_config([s.config for s in updated], [])
        if problems:
            raise InvalidPolicy(problems)
        self.slices = updated

    def step(self, slot_index: int, flows: Sequence) -> Allocation:
        alloc = schedule_slot(slot_index, self.slices, flows, self.total_prbs, self.link,
                              self.alpha, self.slot_duration_s)
        update_pf_averages(alloc, flows, self.slices, self.alpha, self.slot_duration_s)
        return alloc
