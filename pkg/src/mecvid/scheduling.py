"""Scheduling decisions, resource allocations, delays and feasibility checks.

Binary tensors follow the serving-event vocabulary: per cell ``b`` and video
``v`` a request is satisfied by exactly one of

* ``x``   local cache hit,
* ``y``   local transcode from a cached higher variant,
* ``z``   remote cache over fronthaul,
* ``t``   remote transcode, then fronthaul,
* ``w``   fronthaul of the higher variant, then local transcode,
* ``o``   backhaul from the origin server.

Source/destination axes are ordered ``[src, dst, ...]`` for z/t/w and
fronthaul rates.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Optional, Union

import numpy as np

from . import channel as ch
from .model import NetworkState

ABS_SLACK = 1e-9


def _slack(bound: float) -> float:
    # 1e-9 in natural units, widened for large-magnitude bounds (bit counts)
    # so float accumulation over long sums cannot trip a spurious violation.
    return ABS_SLACK * max(1.0, abs(bound))


@dataclass
class SchedulingDecision:
    """All binary variables of one scheduling decision."""

    assoc: np.ndarray        # (B, U) user association
    subcarrier: np.ndarray   # (B, U, N)
    cache: np.ndarray        # (B, VL)
    x: np.ndarray            # (B, VL)
    y: np.ndarray            # (B, P) transcode pairs
    z: np.ndarray            # (B, B, VL)  [src, dst, video]
    t: np.ndarray            # (B, B, P)   [src, dst, pair]
    w: np.ndarray            # (B, B, P)   [src, dst, pair]
    o: np.ndarray            # (B, VL)

    @classmethod
    def zeros(cls, state: NetworkState) -> "SchedulingDecision":
        B, U, N = state.n_rrs, state.n_users, state.n_subcarriers
        VL, P = state.n_videos, state.n_pairs
        return cls(
            assoc=np.zeros((B, U), dtype=np.int8),
            subcarrier=np.zeros((B, U, N), dtype=np.int8),
            cache=np.zeros((B, VL), dtype=np.int8),
            x=np.zeros((B, VL), dtype=np.int8),
            y=np.zeros((B, P), dtype=np.int8),
            z=np.zeros((B, B, VL), dtype=np.int8),
            t=np.zeros((B, B, P), dtype=np.int8),
            w=np.zeros((B, B, P), dtype=np.int8),
            o=np.zeros((B, VL), dtype=np.int8),
        )

    def copy(self) -> "SchedulingDecision":
        return SchedulingDecision(**{k: v.copy() for k, v in self.__dict__.items()})

    def event_sum(self, state: NetworkState, b: int, v: int) -> int:
        """Total serving events adopted for video ``v`` at cell ``b``."""
        low_pairs = state.pairs_with_low(v)
        others = [s for s in range(state.n_rrs) if s != b]
        total = int(self.x[b, v]) + int(self.o[b, v])
        total += int(sum(self.y[b, k] for k in low_pairs))
        total += int(sum(self.z[s, b, v] for s in others))
        total += int(sum(self.t[s, b, k] + self.w[s, b, k] for s in others for k in low_pairs))
        return total

    def to_jsonable(self) -> dict:
        """Sparse index-list encoding of every binary tensor."""
        out = {}
        for name, arr in self.__dict__.items():
            out[name] = {"shape": list(arr.shape),
                         "ones": [list(map(int, idx)) for idx in np.argwhere(arr != 0)]}
        return out

    @classmethod
    def from_jsonable(cls, data: dict) -> "SchedulingDecision":
        kwargs = {}
        for name, enc in data.items():
            arr = np.zeros(tuple(enc["shape"]), dtype=np.int8)
            for idx in enc["ones"]:
                arr[tuple(idx)] = 1
            kwargs[name] = arr
        return cls(**kwargs)


@dataclass
class ResourceAllocation:
    """All continuous variables: powers, processing rates, link rates."""

    power: np.ndarray           # (B, U, N) Watts
    processing: np.ndarray      # (B, P) cycles/s
    backhaul_rate: np.ndarray   # (B, VL) bits/s
    fronthaul_rate: np.ndarray  # (B, B, VL) bits/s [src, dst, video]

    @classmethod
    def zeros(cls, state: NetworkState) -> "ResourceAllocation":
        B, U, N = state.n_rrs, state.n_users, state.n_subcarriers
        return cls(
            power=np.zeros((B, U, N)),
            processing=np.zeros((B, state.n_pairs)),
            backhaul_rate=np.zeros((B, state.n_videos)),
            fronthaul_rate=np.zeros((B, B, state.n_videos)),
        )

    def copy(self) -> "ResourceAllocation":
        return ResourceAllocation(**{k: v.copy() for k, v in self.__dict__.items()})

    def to_jsonable(self) -> dict:
        return {k: v.tolist() for k, v in self.__dict__.items()}


@dataclass
class RequestProfile:
    """One video request per user: one-hot (U, VL)."""

    request: np.ndarray

    @classmethod
    def from_choices(cls, state: NetworkState, chosen: np.ndarray) -> "RequestProfile":
        req = np.zeros((state.n_users, state.n_videos), dtype=np.int8)
        req[np.arange(state.n_users), np.asarray(chosen, dtype=int)] = 1
        return cls(request=req)

    def video_of(self, u: int) -> int:
        return int(np.argmax(self.request[u]))

    def requesters(self, v: int) -> np.ndarray:
        return np.flatnonzero(self.request[:, v] == 1)


@dataclass(frozen=True)
class ConstraintViolation:
    code: str
    index: tuple
    residual: float


@dataclass
class FeasibilityReport:
    violations: list[ConstraintViolation] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations

    def add(self, code: str, index: tuple, residual: float) -> None:
        self.violations.append(ConstraintViolation(code, tuple(index), float(residual)))

    def extend(self, other: "FeasibilityReport") -> None:
        self.violations.extend(other.violations)

    def codes(self) -> set[str]:
        return {v.code for v in self.violations}

    def to_json(self) -> str:
        return json.dumps({
            "ok": self.ok,
            "violations": [{"code": v.code, "index": list(v.index), "residual": v.residual}
                           for v in self.violations],
        }, indent=2)


# ---------------------------------------------------------------------------
# delays
# ---------------------------------------------------------------------------

@dataclass
class DelayTables:
    access_rate: np.ndarray     # (B, U) bits/s (instantaneous or ergodic)
    transcode: np.ndarray       # (B, P) seconds
    backhaul: np.ndarray        # (B, VL) seconds
    fronthaul: np.ndarray       # (B, B, VL) seconds [src, dst, video]
    sizes: np.ndarray           # (VL,) bits

    def access(self, b: int, u: int, v: int) -> float:
        """Wireless delay of video ``v`` to user ``u`` from cell ``b``; inf at zero rate."""
        r = self.access_rate[b, u]
        return float(self.sizes[v] / r) if r > 0 else np.inf


def _safe_div(num: np.ndarray, den: np.ndarray) -> np.ndarray:
    out = np.full(np.broadcast(num, den).shape, np.inf)
    np.divide(num, den, out=out, where=den > 0)
    return out


def delays(
    state: NetworkState,
    decision: SchedulingDecision,
    alloc: ResourceAllocation,
    rate_source: str,
    channel_data: Union[ch.ChannelRealization, ch.ChannelData],
) -> DelayTables:
    """All delay tables; zero-rate denominators yield an infinite delay."""
    if rate_source == "instantaneous":
        rates = ch.rate_table(state, alloc.power, decision.subcarrier, channel_data.gains)
    elif rate_source == "ergodic":
        rates = ch.ergodic_rate_table(state, alloc.power, decision.subcarrier, channel_data)
    else:
        raise ValueError(f"unknown rate source {rate_source!r}")
    sizes = state.video_sizes
    workload = state.transcoding.task_bits * state.transcoding.cycles_per_bit  # (P,)
    return DelayTables(
        access_rate=rates,
        transcode=_safe_div(workload[None, :], alloc.processing),
        backhaul=_safe_div(sizes[None, :], alloc.backhaul_rate),
        fronthaul=_safe_div(sizes[None, None, :], alloc.fronthaul_rate),
        sizes=sizes,
    )


# ---------------------------------------------------------------------------
# constraint checks
# ---------------------------------------------------------------------------

def check_structure(state: NetworkState, decision: SchedulingDecision,
                    alloc: ResourceAllocation) -> FeasibilityReport:
    """Association/subcarrier couplings and sign constraints."""
    rep = FeasibilityReport()
    over = np.flatnonzero(decision.assoc.sum(axis=0) > 1)
    for u in over:
        rep.add("assoc-count", (int(u),), float(decision.assoc[:, u].sum() - 1))
    for mi, sl in enumerate(state.slices):
        if sl.min_rate > 0:
            for u in sl.users:
                if decision.assoc[:, u].sum() != 1:
                    rep.add("assoc-required", (mi, u), float(1 - decision.assoc[:, u].sum()))
    bad = np.argwhere(decision.subcarrier > decision.assoc[:, :, None])
    for b, u, n in bad:
        rep.add("tau-assoc", (int(b), int(u), int(n)), 1.0)
    for name in ("power", "processing", "backhaul_rate", "fronthaul_rate"):
        arr = getattr(alloc, name)
        if np.any(arr < 0):
            worst = float(arr.min())
            rep.add("negative-alloc", (name,), worst)
    return rep


def check_serving(
    state: NetworkState,
    decision: SchedulingDecision,
    profile: Optional[RequestProfile],
    phase: str,
) -> FeasibilityReport:
    """Exactly-one-event coverage plus cache prerequisites for every event."""
    rep = FeasibilityReport()
    B, VL = state.n_rrs, state.n_videos

    for b in range(B):
        if phase == "placement":
            demand = min(int(decision.assoc[b].sum()), 1)
        for v in range(VL):
            if phase == "delivery":
                if profile is None:
                    raise ValueError("delivery serving check needs a request profile")
                served = int((profile.request[:, v] * decision.assoc[b]).sum())
                required = min(served, 1)
            elif phase == "placement":
                required = demand
            else:
                raise ValueError(f"unknown phase {phase!r}")
            total = decision.event_sum(state, b, v)
            if total > required:
                rep.add("double-serve", (b, v), float(total - required))
            elif total < required:
                rep.add("unserved", (b, v), float(required - total))

    rho = decision.cache
    for b, v in np.argwhere(decision.x > rho):
        rep.add("storage-prereq", ("x", int(b), int(v)), 1.0)
    for b, k in np.argwhere(decision.y == 1):
        hi, _ = state.transcoding.pairs[k]
        if rho[b, hi] == 0:
            rep.add("storage-prereq", ("y", int(b), int(k)), 1.0)
    for s, d, v in np.argwhere(decision.z == 1):
        if s != d and rho[s, v] == 0:
            rep.add("storage-prereq", ("z", int(s), int(d), int(v)), 1.0)
    for name in ("t", "w"):
        for s, d, k in np.argwhere(getattr(decision, name) == 1):
            hi, _ = state.transcoding.pairs[k]
            if s != d and rho[s, hi] == 0:
                rep.add("storage-prereq", (name, int(s), int(d), int(k)), 1.0)
    return rep


def _relevant_users(state: NetworkState, profile: Optional[RequestProfile], v: int) -> np.ndarray:
    if profile is None:
        return np.arange(state.n_users)
    return profile.requesters(v)


def check_parallel_delays(
    state: NetworkState,
    decision: SchedulingDecision,
    alloc: ResourceAllocation,
    rate_source: str,
    channel_data,
    profile: Optional[RequestProfile] = None,
) -> FeasibilityReport:
    """Per-event delay chains of the parallel transmit/transcode pipeline.

    Active events must finish their upstream hops no later than the wireless
    hop: transcoding within the access time (y, w), fronthaul within access
    (z, t), transcode before fronthaul (t), fronthaul before transcode (w),
    backhaul within access (o).  Inactive events are unconstrained.
    """
    rep = FeasibilityReport()
    d = delays(state, decision, alloc, rate_source, channel_data)
    pairs = state.transcoding.pairs

    def against_access(code: str, idx: tuple, b: int, v: int, upstream: float) -> None:
        for u in _relevant_users(state, profile, v):
            acc = d.access(b, int(u), v)
            if upstream > acc + _slack(acc if np.isfinite(acc) else 1.0):
                rep.add(code, idx + (int(u),), float(upstream - acc))

    for b, k in np.argwhere(decision.y == 1):
        _, lo = pairs[k]
        against_access("tc-gt-ac", ("y", int(b), int(k)), int(b), lo, d.transcode[b, k])

    for s, b, v in np.argwhere(decision.z == 1):
        against_access("fh-gt-ac", ("z", int(s), int(b), int(v)), int(b), int(v),
                       d.fronthaul[s, b, v])

    for s, b, k in np.argwhere(decision.t == 1):
        _, lo = pairs[k]
        fh = d.fronthaul[s, b, lo]
        if d.transcode[s, k] > fh + _slack(fh if np.isfinite(fh) else 1.0):
            rep.add("tc-gt-fh", ("t", int(s), int(b), int(k)), float(d.transcode[s, k] - fh))
        against_access("fh-gt-ac", ("t", int(s), int(b), int(k)), int(b), lo, fh)

    for s, b, k in np.argwhere(decision.w == 1):
        hi, lo = pairs[k]
        tc = d.transcode[b, k]
        if d.fronthaul[s, b, hi] > tc + _slack(tc if np.isfinite(tc) else 1.0):
            rep.add("fh-gt-tc", ("w", int(s), int(b), int(k)),
                    float(d.fronthaul[s, b, hi] - tc))
        against_access("tc-gt-ac", ("w", int(s), int(b), int(k)), int(b), lo, tc)

    for b, v in np.argwhere(decision.o == 1):
        against_access("bh-gt-ac", ("o", int(b), int(v)), int(b), int(v), d.backhaul[b, v])

    return rep


def check_capacities(
    state: NetworkState,
    decision: SchedulingDecision,
    alloc: ResourceAllocation,
    rates: Optional[np.ndarray] = None,
) -> FeasibilityReport:
    """Power, processing, link, cache and NOMA caps plus (given rates) QoS."""
    rep = FeasibilityReport()
    B = state.n_rrs
    pairs = state.transcoding.pairs

    for b in range(B):
        used = float((decision.subcarrier[b] * alloc.power[b]).sum())
        cap = state.rrs[b].max_power
        if used > cap + _slack(cap):
            rep.add("power-cap", (b,), used - cap)

        count = decision.y[b].astype(float)
        count += decision.t[b].sum(axis=0)       # b as transcoding source, any destination
        count += decision.w[:, b].sum(axis=0)    # b transcodes what it received
        used = float((count * alloc.processing[b]).sum())
        cap = state.rrs[b].max_processing
        if used > cap + _slack(cap):
            rep.add("processing-cap", (b,), used - cap)

        used = float((decision.o[b] * alloc.backhaul_rate[b]).sum())
        cap = float(state.links.backhaul_cap[b])
        if used > cap + _slack(cap):
            rep.add("backhaul-cap", (b,), used - cap)

        used = float((decision.cache[b] * state.video_sizes).sum())
        cap = state.rrs[b].max_storage
        if used > cap + _slack(cap):
            rep.add("cache-cap", (b,), used - cap)

        for n in range(state.n_subcarriers):
            users = int(decision.subcarrier[b, :, n].sum())
            if users > state.rrs[b].noma_user_cap:
                rep.add("noma-cap", (b, n), float(users - state.rrs[b].noma_user_cap))

    for s in range(B):
        for b in range(B):
            if s == b:
                continue
            used = float((decision.z[s, b] * alloc.fronthaul_rate[s, b]).sum())
            for k, (hi, lo) in enumerate(pairs):
                used += decision.t[s, b, k] * alloc.fronthaul_rate[s, b, lo]
                used += decision.w[s, b, k] * alloc.fronthaul_rate[s, b, hi]
            cap = float(state.links.fronthaul_cap[s, b])
            if used > cap + _slack(cap):
                rep.add("fronthaul-cap", (s, b), used - cap)

    if rates is not None:
        for mi, sl in enumerate(state.slices):
            for u in sl.users:
                got = float(rates[:, u].sum())
                if got < sl.min_rate - _slack(sl.min_rate):
                    rep.add("qos", (mi, u), sl.min_rate - got)

    return rep


def feasible(
    state: NetworkState,
    decision: SchedulingDecision,
    alloc: ResourceAllocation,
    channel_data,
    profile: Optional[RequestProfile] = None,
    phase: str = "delivery",
) -> FeasibilityReport:
    """Union of every constraint check, in a deterministic order."""
    rate_source = "instantaneous" if phase == "delivery" else "ergodic"
    if rate_source == "instantaneous":
        rates = ch.rate_table(state, alloc.power, decision.subcarrier, channel_data.gains)
        sic_mode = "instantaneous"
    else:
        rates = ch.ergodic_rate_table(state, alloc.power, decision.subcarrier, channel_data)
        sic_mode = "ergodic"

    rep = FeasibilityReport()
    rep.extend(check_structure(state, decision, alloc))
    rep.extend(check_serving(state, decision, profile, phase))
    rep.extend(check_parallel_delays(state, decision, alloc, rate_source, channel_data,
                                     profile if phase == "delivery" else None))
    rep.extend(check_capacities(state, decision, alloc, rates))
    for v in ch.check_sic(state, alloc.power, decision.subcarrier, channel_data, sic_mode):
        rep.add("sic", (v.b, v.n, v.strong, v.weak), v.residual)
    return rep
