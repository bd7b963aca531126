"""Slice economics: provisioning costs, rewards, and revenue accounting.

Revenue of a slice is its rate reward minus power, subcarrier and
provisioning costs.  A shared subcarrier is billed to a slice once per cell
no matter how many of its users reuse it, and each (cell, video)
provisioning is billed once per slice that consumes it.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from . import channel as ch
from .model import NetworkState
from .scheduling import RequestProfile, ResourceAllocation, SchedulingDecision

__all__ = [
    "SliceRevenue",
    "RevenueReport",
    "provisioning_cost",
    "average_provisioning_cost",
    "delivery_revenue",
    "ld_revenue",
    "hd_revenue",
]


@dataclass(frozen=True)
class SliceRevenue:
    slice_id: int
    reward: float
    power_cost: float
    subcarrier_cost: float
    provisioning_cost: float

    @property
    def revenue(self) -> float:
        return self.reward - self.power_cost - self.subcarrier_cost - self.provisioning_cost


@dataclass(frozen=True)
class RevenueReport:
    per_slice: tuple[SliceRevenue, ...]

    @property
    def total_revenue(self) -> float:
        return sum(s.revenue for s in self.per_slice)

    @property
    def total_reward(self) -> float:
        return sum(s.reward for s in self.per_slice)

    @property
    def total_provisioning_cost(self) -> float:
        return sum(s.provisioning_cost for s in self.per_slice)

    @property
    def total_subcarrier_cost(self) -> float:
        return sum(s.subcarrier_cost for s in self.per_slice)

    @property
    def total_power_cost(self) -> float:
        return sum(s.power_cost for s in self.per_slice)

    def to_json(self) -> str:
        return json.dumps({
            "total_revenue": self.total_revenue,
            "per_slice": [{
                "slice_id": s.slice_id,
                "reward": s.reward,
                "power_cost": s.power_cost,
                "subcarrier_cost": s.subcarrier_cost,
                "provisioning_cost": s.provisioning_cost,
                "revenue": s.revenue,
            } for s in self.per_slice],
        }, indent=2)


def provisioning_cost(
    state: NetworkState,
    decision: SchedulingDecision,
    alloc: ResourceAllocation,
    b: int,
    v: int,
) -> float:
    """Cost of provisioning video ``v`` at cell ``b`` over all active events.

    Local hits pay local storage; transcodes pay the higher variant's storage
    plus processing; remote routes add fronthaul at the transferred variant's
    rate; the origin route pays backhaul.
    """
    sizes = state.video_sizes
    rrs = state.rrs
    fh, bh = state.links.price_fronthaul, state.links.price_backhaul
    cost = float(decision.x[b, v]) * sizes[v] * rrs[b].price_cache
    for k in state.pairs_with_low(v):
        hi, _ = state.transcoding.pairs[k]
        cost += decision.y[b, k] * (sizes[hi] * rrs[b].price_cache
                                    + alloc.processing[b, k] * rrs[b].price_processing)
    for s in range(state.n_rrs):
        if s == b:
            continue
        cost += decision.z[s, b, v] * (sizes[v] * rrs[s].price_cache
                                       + alloc.fronthaul_rate[s, b, v] * fh)
        for k in state.pairs_with_low(v):
            hi, _ = state.transcoding.pairs[k]
            cost += decision.t[s, b, k] * (sizes[hi] * rrs[s].price_cache
                                           + alloc.processing[s, k] * rrs[s].price_processing
                                           + alloc.fronthaul_rate[s, b, v] * fh)
            cost += decision.w[s, b, k] * (sizes[hi] * rrs[s].price_cache
                                           + alloc.fronthaul_rate[s, b, hi] * fh
                                           + alloc.processing[b, k] * rrs[b].price_processing)
    cost += float(decision.o[b, v]) * alloc.backhaul_rate[b, v] * bh
    return float(cost)


def average_provisioning_cost(
    state: NetworkState,
    decision: SchedulingDecision,
    alloc: ResourceAllocation,
    b: int,
) -> float:
    """Popularity-weighted provisioning cost of one video request at cell ``b``."""
    pop = state.popularity.popularity
    return float(sum(pop[v] * provisioning_cost(state, decision, alloc, b, v)
                     for v in range(state.n_videos)))


def _access_costs(state: NetworkState, decision: SchedulingDecision,
                  alloc: ResourceAllocation, members: np.ndarray) -> tuple[float, float]:
    """Power and once-per-cell subcarrier cost charged to one slice."""
    power = 0.0
    for b, r in enumerate(state.rrs):
        power += alloc.power[b][members].sum() * r.price_power
    sub = 0.0
    for b, r in enumerate(state.rrs):
        shared = decision.subcarrier[b][members].max(axis=0) if len(members) else 0.0
        sub += np.sum(shared) * state.subcarrier_bandwidth * r.price_subcarrier
    return float(power), float(sub)


def delivery_revenue(
    state: NetworkState,
    decision: SchedulingDecision,
    alloc: ResourceAllocation,
    channel_data: ch.ChannelRealization,
    profile: RequestProfile,
) -> RevenueReport:
    """Exact per-slice revenue for one delivery slot."""
    rates = ch.rate_table(state, alloc.power, decision.subcarrier, channel_data.gains)
    out = []
    for sl in state.slices:
        members = np.asarray(sl.users, dtype=int)
        reward = float(rates[:, members].sum()) * sl.reward_rate if len(members) else 0.0
        power, sub = _access_costs(state, decision, alloc, members)
        prov = 0.0
        for b in range(state.n_rrs):
            for v in range(state.n_videos):
                served = int((profile.request[members, v] * decision.assoc[b, members]).sum()) \
                    if len(members) else 0
                if served:
                    prov += provisioning_cost(state, decision, alloc, b, v)
        out.append(SliceRevenue(sl.id, reward, power, sub, prov))
    return RevenueReport(per_slice=tuple(out))


def _placement_revenue(state, decision, alloc, cdi, diversity: str) -> RevenueReport:
    rates = ch.ergodic_rate_table(state, alloc.power, decision.subcarrier, cdi)
    out = []
    for sl in state.slices:
        members = np.asarray(sl.users, dtype=int)
        reward = float(rates[:, members].sum()) * sl.reward_rate if len(members) else 0.0
        power, sub = _access_costs(state, decision, alloc, members)
        prov = 0.0
        for b in range(state.n_rrs):
            assoc = int(decision.assoc[b, members].sum()) if len(members) else 0
            mult = min(assoc, 1) if diversity == "ld" else assoc
            if mult:
                prov += mult * average_provisioning_cost(state, decision, alloc, b)
        out.append(SliceRevenue(sl.id, reward, power, sub, prov))
    return RevenueReport(per_slice=tuple(out))


def ld_revenue(state: NetworkState, decision: SchedulingDecision,
               alloc: ResourceAllocation, cdi: ch.ChannelData) -> RevenueReport:
    """Estimated average revenue when same-slice users request alike.

    Each cell's average provisioning is billed once per slice with any
    associated user; this is the optimistic (upper) revenue estimate.
    """
    return _placement_revenue(state, decision, alloc, cdi, "ld")


def hd_revenue(state: NetworkState, decision: SchedulingDecision,
               alloc: ResourceAllocation, cdi: ch.ChannelData) -> RevenueReport:
    """Estimated average revenue when every user requests a different video.

    Provisioning is billed once per associated user, giving the pessimistic
    (lower) estimate; it never exceeds the ld variant.
    """
    return _placement_revenue(state, decision, alloc, cdi, "hd")
