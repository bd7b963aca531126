"""Resource allocation framework: the two-step alternation over all problem
flavors, the low-complexity delivery variant, cache refreshment, baseline
placements, scheme ablations and solver complexity estimates.

One alternation round = continuous step (powers, processing, link rates under
fixed binaries) followed by a binary step (association, subcarriers, cache,
serving events under the fixed allocation).  Each step can only improve the
flavor's revenue, so the objective trace is non-decreasing; a binary step
that fails or regresses falls back to the previous binaries and stops.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import channel as ch
from .intprog import (LinearProgram, branch_and_bound, build_step2, decode_step2,
                      lp_solve)
from .model import NetworkState, RrsSpec
from .scheduling import RequestProfile, ResourceAllocation, SchedulingDecision
from .sca import (InfeasibleStepError, SolverSettings, minimal_continuous,
                  provisioning_weights, solve_step1)

__all__ = [
    "RafOutcome",
    "RefreshContext",
    "alternate_optimize",
    "place_ld",
    "place_hd",
    "deliver",
    "deliver_lc",
    "refresh",
    "baseline_place",
    "apply_scheme",
    "complexity_estimate",
    "initial_decision",
]

SCHEMES = ("full", "NC", "NoCoop", "CCNT", "OMA")
STRATEGIES = ("LD", "HD", "MPV", "HBV")

# alternation restarts: enumerate every user-association pattern when the
# combinatorial budget allows, otherwise fall back to heuristic seeds
ASSOC_ENUM_BUDGET = 32


@dataclass
class RafOutcome:
    decision: SchedulingDecision
    alloc: ResourceAllocation
    objective_trace: list[float]
    converged: bool
    iterations: int

    @property
    def objective(self) -> float:
        return self.objective_trace[-1] if self.objective_trace else -math.inf

    def to_jsonable(self) -> dict:
        return {
            "decision": self.decision.to_jsonable(),
            "alloc": self.alloc.to_jsonable(),
            "objective_trace": self.objective_trace,
            "converged": self.converged,
            "iterations": self.iterations,
        }


@dataclass
class RefreshContext:
    """Binary outcome of the finished transmission slot, frozen for refresh."""

    old_cache: np.ndarray      # (B, VL)
    old_y: np.ndarray          # (B, P)
    old_z: np.ndarray          # (B, B, VL)
    old_t: np.ndarray          # (B, B, P)
    old_w: np.ndarray          # (B, B, P)
    old_o: np.ndarray          # (B, VL)

    @classmethod
    def from_decision(cls, dec: SchedulingDecision) -> "RefreshContext":
        return cls(old_cache=dec.cache.copy(), old_y=dec.y.copy(), old_z=dec.z.copy(),
                   old_t=dec.t.copy(), old_w=dec.w.copy(), old_o=dec.o.copy())

    @classmethod
    def empty(cls, state: NetworkState) -> "RefreshContext":
        dec = SchedulingDecision.zeros(state)
        return cls.from_decision(dec)

    def availability(self, state: NetworkState) -> np.ndarray:
        """(B, VL) binary: which videos sit in each cell's buffer after the slot.

        A video is present if it was cached, produced by a local transcode,
        fetched over fronthaul (as target, or as the high-bitrate source of a
        local transcode), or pulled from the origin.
        """
        B, VL = state.n_rrs, state.n_videos
        avail = self.old_cache.astype(bool).copy()
        for b, k in np.argwhere(self.old_y == 1):
            avail[b, state.transcoding.pairs[k][1]] = True
        for s, b, v in np.argwhere(self.old_z == 1):
            avail[b, v] = True
        for s, b, k in np.argwhere(self.old_t == 1):
            avail[b, state.transcoding.pairs[k][1]] = True
        for s, b, k in np.argwhere(self.old_w == 1):
            hi, lo = state.transcoding.pairs[k]
            avail[b, lo] = True
            avail[b, hi] = True   # the fetched high-bitrate source stays in the buffer
        for b, v in np.argwhere(self.old_o == 1):
            avail[b, v] = True
        return avail.astype(np.int8)


# ---------------------------------------------------------------------------
# baselines and schemes
# ---------------------------------------------------------------------------

def baseline_place(strategy: str, state: NetworkState, seed: int = 0) -> np.ndarray:
    """Popularity-first (MPV) or high-bitrate-first (HBV) greedy cache fill."""
    VL = state.n_videos
    sizes = state.video_sizes
    if strategy.upper() == "MPV":
        order = sorted(range(VL), key=lambda v: state.videos[v].rank)
        orders = [order] * state.n_rrs
    elif strategy.upper() == "HBV":
        rng = np.random.default_rng(seed)
        orders = []
        for _ in range(state.n_rrs):
            order = []
            for level in range(max(v.bitrate_level for v in state.videos), 0, -1):
                tier = [v for v in range(VL) if state.videos[v].bitrate_level == level]
                order.extend(rng.permutation(tier).tolist())
            orders.append(order)
    else:
        raise ValueError(f"unknown baseline strategy {strategy!r}")

    rho = np.zeros((state.n_rrs, VL), dtype=np.int8)
    for b in range(state.n_rrs):
        left = state.rrs[b].max_storage
        for v in orders[b]:
            if sizes[v] <= left:
                rho[b, v] = 1
                left -= sizes[v]
    return rho


def apply_scheme(scheme: str, state: NetworkState) -> NetworkState:
    """Ablate capabilities: no caching, no cooperation, no transcoding, or OMA."""
    if scheme == "full":
        return state
    if scheme == "NC":
        rrs = tuple(RrsSpec(**{**r.__dict__, "max_storage": 0.0, "max_processing": 0.0})
                    for r in state.rrs)
        return NetworkState(**{**state.__dict__, "rrs": rrs})
    if scheme == "NoCoop":
        links = state.links.__class__(
            backhaul_cap=state.links.backhaul_cap,
            fronthaul_cap=np.zeros_like(np.asarray(state.links.fronthaul_cap)),
            price_backhaul=state.links.price_backhaul,
            price_fronthaul=state.links.price_fronthaul)
        return NetworkState(**{**state.__dict__, "links": links})
    if scheme == "CCNT":
        rrs = tuple(RrsSpec(**{**r.__dict__, "max_processing": 0.0}) for r in state.rrs)
        return NetworkState(**{**state.__dict__, "rrs": rrs})
    if scheme == "OMA":
        rrs = tuple(RrsSpec(**{**r.__dict__, "noma_user_cap": 1}) for r in state.rrs)
        return NetworkState(**{**state.__dict__, "rrs": rrs})
    raise ValueError(f"unknown scheme {scheme!r}")


# ---------------------------------------------------------------------------
# initialization
# ---------------------------------------------------------------------------

def _route_terms(state: NetworkState, rho: np.ndarray, b: int, v: int) -> list[tuple[float, float]]:
    """(fixed cost, cost per bit/s) of every route able to serve v at cell b."""
    pairs = state.transcoding.pairs
    sizes = state.video_sizes
    workload = state.transcoding.task_bits * state.transcoding.cycles_per_bit
    out = []
    if rho[b, v]:
        out.append((sizes[v] * state.rrs[b].price_cache, 0.0))
    for k in state.pairs_with_low(v):
        hi, _ = pairs[k]
        if rho[b, hi] and state.rrs[b].max_processing > 0:
            out.append((sizes[hi] * state.rrs[b].price_cache,
                        workload[k] / sizes[v] * state.rrs[b].price_processing))
    for s in range(state.n_rrs):
        if s == b or state.links.fronthaul_cap[s, b] <= 0:
            continue
        if rho[s, v]:
            out.append((sizes[v] * state.rrs[s].price_cache,
                        state.links.price_fronthaul))
        for k in state.pairs_with_low(v):
            hi, _ = pairs[k]
            if not rho[s, hi]:
                continue
            if state.rrs[s].max_processing > 0:
                out.append((sizes[hi] * state.rrs[s].price_cache,
                            state.links.price_fronthaul
                            + workload[k] / sizes[v] * state.rrs[s].price_processing))
            if state.rrs[b].max_processing > 0:
                out.append((sizes[hi] * state.rrs[s].price_cache,
                            sizes[hi] / sizes[v] * state.links.price_fronthaul
                            + workload[k] / sizes[v] * state.rrs[b].price_processing))
    if state.links.backhaul_cap[b] > 0:
        out.append((0.0, state.links.price_backhaul))
    return out


def _route_cost(state: NetworkState, rho: np.ndarray, b: int, v: int,
                peak: float) -> Optional[float]:
    """Cheapest provisioning cost of serving video v at cell b at rate peak."""
    terms = _route_terms(state, rho, b, v)
    if not terms:
        return None
    return min(fixed + marg * peak for fixed, marg in terms)


def _cell_score(state: NetworkState, mean_gains: np.ndarray, u: int, b: int,
                n_avail: int, routes: list[tuple[float, float]],
                psi: float) -> float:
    """Net benefit of serving user u from cell b over its best route.

    Each subcarrier is included only when its reward at the interference-free
    optimal power beats the power, bandwidth and marginal route prices; the
    route's fixed rent is then subtracted once.
    """
    if not routes:
        return -math.inf
    sigma = state.noise_power()
    ws = state.subcarrier_bandwidth
    ln2 = math.log(2.0)
    alpha = state.rrs[b].price_power
    cap_n = state.rrs[b].max_power / state.n_subcarriers
    best = -math.inf
    for fixed, marg in routes:
        eff = psi - marg
        if eff <= 0:
            continue
        nets = []
        for n in range(state.n_subcarriers):
            g = mean_gains[b, u, n]
            p_star = eff * ws / (alpha * ln2) - sigma / g if alpha > 0 else cap_n
            p_star = min(max(p_star, 0.0), cap_n)
            r_n = ws * math.log2(1 + p_star * g / sigma)
            nets.append(eff * r_n - alpha * p_star
                        - ws * state.rrs[b].price_subcarrier)
        nets.sort(reverse=True)
        score = sum(x for x in nets[:max(n_avail, 1)] if x > 0) - fixed
        best = max(best, score)
    return best


def initial_decision(
    state: NetworkState,
    channel_data,
    flavor: str,
    profile: Optional[RequestProfile] = None,
    fixed_cache: Optional[np.ndarray] = None,
    cache_upper: Optional[np.ndarray] = None,
    association: str = "nearest",
    assoc_override: Optional[np.ndarray] = None,
    tau_override: Optional[np.ndarray] = None,
) -> SchedulingDecision:
    """Deterministic feasible starting point for the alternation.

    ``association`` picks users' cells: ``"nearest"`` by distance, or
    ``"value"``/``"value-drop"`` by an estimated net benefit (isolated-rate
    reward at the per-subcarrier optimal power, minus that cell's power,
    bandwidth and cheapest-route provisioning prices); with ``"value-drop"``
    a best-effort user stays unassociated when every cell looks loss-making.
    Subcarriers are filled round-robin up to the per-subcarrier cap; the
    cache follows the popularity baseline unless fixed; each demanded
    (cell, video) takes its cheapest feasible serving event under nominal
    uniform powers, preferring local routes on ties.
    """
    B, U, N = state.n_rrs, state.n_users, state.n_subcarriers
    VL = state.n_videos
    pairs = state.transcoding.pairs
    sizes = state.video_sizes
    workload = state.transcoding.task_bits * state.transcoding.cycles_per_bit
    dec = SchedulingDecision.zeros(state)

    if fixed_cache is not None:
        rho_plan = np.asarray(fixed_cache, dtype=np.int8)
    else:
        rho_plan = baseline_place("MPV", state)
        if cache_upper is not None:
            rho_plan = rho_plan * np.asarray(cache_upper, dtype=np.int8)

    d = state.distances_km()
    slice_of = state.slice_of_user
    if assoc_override is not None:
        dec.assoc[:] = np.asarray(assoc_override, dtype=np.int8)
    elif association == "nearest":
        for u in range(U):
            dec.assoc[int(np.argmin(d[:, u])), u] = 1
    elif association in ("value", "value-drop"):
        mean_gains = channel_data.mean_gains if isinstance(channel_data, ch.ChannelData) \
            else channel_data.gains
        pop = state.popularity.popularity

        def routes_for(b: int, u: int) -> list[tuple[float, float]]:
            if flavor == "delivery":
                return _route_terms(state, rho_plan, b, profile.video_of(u))
            # placement: popularity-weighted best route per video
            fixed = marg = 0.0
            for v in range(VL):
                terms = _route_terms(state, rho_plan, b, v)
                if not terms:
                    return []
                f, m = min(terms, key=lambda t: t[0] + t[1] * 1e6)
                fixed += pop[v] * f
                marg += pop[v] * m
            return [(fixed, marg)]

        # sequential load-aware assignment: strongest users pick first, and an
        # occupied cell offers a shrinking share of its subcarriers
        taken = [0] * B
        first_pass = []
        for u in range(U):
            mi = slice_of[u]
            psi = state.slices[mi].reward_rate if mi >= 0 else 0.0
            scores = [_cell_score(state, mean_gains, u, b, N, routes_for(b, u), psi)
                      for b in range(B)]
            first_pass.append((max(scores), u))
        for _, u in sorted(first_pass, reverse=True):
            mi = slice_of[u]
            psi = state.slices[mi].reward_rate if mi >= 0 else 0.0
            forced = mi >= 0 and state.slices[mi].min_rate > 0
            scores = [_cell_score(state, mean_gains, u, b,
                                  max(1, N // (taken[b] + 1)), routes_for(b, u), psi)
                      for b in range(B)]
            best_b = int(np.argmax(scores))
            if forced or association == "value" or scores[best_b] > 0:
                dec.assoc[best_b, u] = 1
                taken[best_b] += 1
    else:
        raise ValueError(f"unknown association rule {association!r}")

    if tau_override is not None:
        dec.subcarrier[:] = np.asarray(tau_override, dtype=np.int8) \
            * dec.assoc[:, :, None]
    else:
        for b in range(B):
            cell_users = [u for u in range(U) if dec.assoc[b, u]]
            if not cell_users:
                continue
            cap = state.rrs[b].noma_user_cap
            for n in range(N):
                for j in range(min(cap, len(cell_users))):
                    dec.subcarrier[b, cell_users[(n * cap + j) % len(cell_users)], n] = 1

    dec.cache[:] = rho_plan

    # nominal uniform powers set the rates the serving events must keep up with
    p = np.zeros((B, U, N))
    for b in range(B):
        k = dec.subcarrier[b].sum()
        if k:
            p[b] = dec.subcarrier[b] * (state.rrs[b].max_power / k)
    if isinstance(channel_data, ch.ChannelData):
        rates = ch.ergodic_rate_table(state, p, dec.subcarrier, channel_data)
    else:
        rates = ch.rate_table(state, p, dec.subcarrier, channel_data.gains)

    proc_left = np.array([r.max_processing for r in state.rrs])
    bh_left = np.array(state.links.backhaul_cap, dtype=float)
    fh_left = np.array(state.links.fronthaul_cap, dtype=float)
    mu_proc = np.array([r.price_processing for r in state.rrs])
    mu_cache = np.array([r.price_cache for r in state.rrs])

    for b in range(B):
        if dec.assoc[b].sum() == 0:
            continue
        for v in range(VL):
            if flavor == "delivery":
                need = int((profile.request[:, v] * dec.assoc[b]).sum()) > 0
                peak = max((rates[b, int(u)] for u in profile.requesters(v)), default=0.0)
            else:
                need = True
                peak = float(rates[b].max())
            if not need:
                continue
            # candidates as (cost, order, kind, payload, resources)
            cands = []
            if dec.cache[b, v]:
                cands.append((sizes[v] * mu_cache[b], 0, "x", (b, v), {}))
            for k in state.pairs_with_low(v):
                hi, _ = pairs[k]
                if dec.cache[b, hi]:
                    phi_need = workload[k] * peak / sizes[v]
                    if phi_need <= proc_left[b]:
                        cost = sizes[hi] * mu_cache[b] + phi_need * mu_proc[b]
                        cands.append((cost, 1, "y", (b, k), {"proc": (b, phi_need)}))
            for s in range(B):
                if s == b:
                    continue
                if dec.cache[s, v] and peak <= fh_left[s, b]:
                    cost = sizes[v] * mu_cache[s] + peak * state.links.price_fronthaul
                    cands.append((cost, 2, "z", (s, b, v), {"fh": (s, b, peak)}))
                for k in state.pairs_with_low(v):
                    hi, _ = pairs[k]
                    if not dec.cache[s, hi]:
                        continue
                    phi_need = workload[k] * peak / sizes[v]
                    if phi_need <= proc_left[s] and peak <= fh_left[s, b]:
                        cost = (sizes[hi] * mu_cache[s] + phi_need * mu_proc[s]
                                + peak * state.links.price_fronthaul)
                        cands.append((cost, 3, "t", (s, b, k),
                                      {"proc": (s, phi_need), "fh": (s, b, peak)}))
                    fh_need = sizes[hi] * peak / sizes[v]
                    if phi_need <= proc_left[b] and fh_need <= fh_left[s, b]:
                        cost = (sizes[hi] * mu_cache[s]
                                + fh_need * state.links.price_fronthaul
                                + phi_need * mu_proc[b])
                        cands.append((cost, 4, "w", (s, b, k),
                                      {"proc": (b, phi_need), "fh": (s, b, fh_need)}))
            if peak <= bh_left[b]:
                cands.append((peak * state.links.price_backhaul, 5, "o", (b, v),
                              {"bh": (b, peak)}))
            if not cands:
                continue   # nothing fits; later steps will have to repair
            cands.sort(key=lambda c: (c[0], c[1], c[3]))
            _, _, kind, payload, used = cands[0]
            getattr(dec, kind)[payload] = 1
            if "proc" in used:
                proc_left[used["proc"][0]] -= used["proc"][1]
            if "fh" in used:
                fh_left[used["fh"][0], used["fh"][1]] -= used["fh"][2]
            if "bh" in used:
                bh_left[used["bh"][0]] -= used["bh"][1]
    return dec


def prune_alloc(state: NetworkState, dec: SchedulingDecision,
                alloc: ResourceAllocation) -> ResourceAllocation:
    """Zero the allocation entries no active event uses."""
    out = alloc.copy()
    pairs = state.transcoding.pairs
    used_phi = np.zeros_like(out.processing, dtype=bool)
    for b, k in np.argwhere(dec.y == 1):
        used_phi[b, k] = True
    for s, b, k in np.argwhere(dec.t == 1):
        used_phi[s, k] = True
    for s, b, k in np.argwhere(dec.w == 1):
        used_phi[b, k] = True
    out.processing[~used_phi] = 0.0
    out.backhaul_rate[dec.o == 0] = 0.0
    used_fh = np.zeros_like(out.fronthaul_rate, dtype=bool)
    for s, b, v in np.argwhere(dec.z == 1):
        used_fh[s, b, v] = True
    for s, b, k in np.argwhere(dec.t == 1):
        used_fh[s, b, pairs[k][1]] = True
    for s, b, k in np.argwhere(dec.w == 1):
        used_fh[s, b, pairs[k][0]] = True
    out.fronthaul_rate[~used_fh] = 0.0
    return out


# ---------------------------------------------------------------------------
# the alternation
# ---------------------------------------------------------------------------

def alternate_optimize(
    state: NetworkState,
    channel_data,
    flavor: str,
    settings: Optional[SolverSettings] = None,
    init: Optional[SchedulingDecision] = None,
    profile: Optional[RequestProfile] = None,
    fixed_cache: Optional[np.ndarray] = None,
    cache_upper: Optional[np.ndarray] = None,
) -> RafOutcome:
    """Alternate the continuous and binary steps until the objective settles.

    ``flavor`` is ``"ld"``/``"hd"`` (placement estimates over a CDI set) or
    ``"delivery"`` (one slot, known requests).  ``fixed_cache`` freezes the
    cache (delivery); ``cache_upper`` bounds it per entry (refreshment).
    """
    settings = settings or SolverSettings()
    if init is not None:
        return _alternate_from(state, channel_data, flavor, settings, init,
                               profile, fixed_cache, cache_upper)
    # the two deterministic starting points explore different association
    # basins; the binary step can only shrink the radio support, so run both
    # and keep the better outcome
    starts = []
    B, U = state.n_rrs, state.n_users
    droppable = [state.slices[m].min_rate <= 0 if m >= 0 else True
                 for m in state.slice_of_user]
    budget = 1
    for u in range(U):
        budget *= (B + 1) if droppable[u] else B
        if budget > ASSOC_ENUM_BUDGET:
            break
    if budget <= ASSOC_ENUM_BUDGET:
        # small instance: try every user-association pattern outright; for
        # one-user patterns also seed each single subcarrier, which a shared
        # start cannot reach once the binary step has pruned it
        import itertools
        options = [([-1] if droppable[u] else []) + list(range(B)) for u in range(U)]
        for combo in itertools.product(*options):
            assoc = np.zeros((B, U), dtype=np.int8)
            for u, b in enumerate(combo):
                if b >= 0:
                    assoc[b, u] = 1
            starts.append(initial_decision(state, channel_data, flavor, profile,
                                           fixed_cache, cache_upper,
                                           assoc_override=assoc))
            active = [u for u, b in enumerate(combo) if b >= 0]
            if len(active) == 1 and state.n_subcarriers <= 4:
                u = active[0]
                for n in range(state.n_subcarriers):
                    tau = np.zeros((B, U, state.n_subcarriers), dtype=np.int8)
                    tau[combo[u], u, n] = 1
                    starts.append(initial_decision(
                        state, channel_data, flavor, profile, fixed_cache,
                        cache_upper, assoc_override=assoc, tau_override=tau))
    else:
        for rule in ("nearest", "value", "value-drop"):
            start = initial_decision(state, channel_data, flavor, profile,
                                     fixed_cache, cache_upper, association=rule)
            if not any(np.array_equal(start.assoc, s.assoc) for s in starts):
                starts.append(start)
    # reward at full power with no interference bounds any start's value;
    # visit starts best-bound first and skip the dominated ones
    gains = channel_data.mean_gains if isinstance(channel_data, ch.ChannelData) \
        else channel_data.gains
    sigma = state.noise_power()
    iso = state.subcarrier_bandwidth * np.log2(
        1.0 + np.array([r.max_power for r in state.rrs])[:, None, None]
        * gains / sigma)
    psi_u = np.zeros(state.n_users)
    for u in range(state.n_users):
        mi = state.slice_of_user[u]
        if mi >= 0:
            psi_u[u] = state.slices[mi].reward_rate

    def upper_bound(start: SchedulingDecision) -> float:
        return float((psi_u[None, :, None] * iso * start.subcarrier).sum())

    starts.sort(key=upper_bound, reverse=True)
    best: Optional[RafOutcome] = None
    error: Optional[InfeasibleStepError] = None
    for start in starts:
        if best is not None and upper_bound(start) <= best.objective + 1e-12:
            continue
        try:
            out = _alternate_from(state, channel_data, flavor, settings, start,
                                  profile, fixed_cache, cache_upper)
        except InfeasibleStepError as exc:
            error = exc
            continue
        if best is None or out.objective > best.objective:
            best = out
    if best is None:
        raise error if error is not None else RuntimeError("no outcome")
    if best.objective < 0 and all(droppable):
        # the empty schedule earns zero and beats any loss-making outcome
        empty = SchedulingDecision.zeros(state)
        empty.cache[:] = best.decision.cache if fixed_cache is None \
            else np.asarray(fixed_cache, dtype=np.int8)
        if cache_upper is not None:
            empty.cache[:] = np.minimum(empty.cache, np.asarray(cache_upper))
        if flavor in ("ld", "hd"):
            empty.cache[:] = 0
        best = RafOutcome(decision=empty, alloc=ResourceAllocation.zeros(state),
                          objective_trace=best.objective_trace + [0.0],
                          converged=best.converged, iterations=best.iterations)
    return best


def _alternate_from(state, channel_data, flavor, settings, init, profile,
                    fixed_cache, cache_upper) -> RafOutcome:
    dec = init.copy()
    trace: list[float] = []
    converged = False
    alloc = ResourceAllocation.zeros(state)
    warm: Optional[np.ndarray] = None
    binaries_dirty = False   # decision changed after the last continuous solve
    last_end: Optional[float] = None
    iterations = 0

    for it in range(settings.main_iters):
        iterations = it + 1
        try:
            step1 = solve_step1(state, dec, channel_data, settings, flavor, profile,
                                p_init=warm)
        except InfeasibleStepError:
            if it == 0:
                raise
            converged = True
            break
        alloc = step1.alloc
        warm = alloc.power
        binaries_dirty = False
        trace.append(step1.objective)

        lp = build_step2(state, alloc, channel_data, flavor, profile,
                         fixed_cache=fixed_cache, cache_upper=cache_upper)
        res = branch_and_bound(lp, abs_gap=settings.bnb_gap,
                               node_limit=settings.bnb_node_limit)
        if res.status != "optimal" or res.value < step1.objective - 1e-9:
            converged = True   # keep the previous binaries; nothing better exists
            break
        dec = decode_step2(state, lp, res.x)
        binaries_dirty = True
        trace.append(res.value)
        if last_end is not None and abs(res.value - last_end) <= settings.main_tol:
            converged = True
            break
        last_end = res.value

    if binaries_dirty:
        # close with a continuous solve for the adopted binaries: it releases
        # power sunk into de-scheduled assignments and can only improve
        try:
            step1 = solve_step1(state, dec, channel_data, settings, flavor, profile,
                                p_init=warm)
            if step1.objective >= trace[-1] - 1e-9 * max(1.0, abs(trace[-1])):
                alloc = step1.alloc
                trace.append(step1.objective)
        except InfeasibleStepError:
            pass
    return RafOutcome(decision=dec, alloc=prune_alloc(state, dec, alloc),
                      objective_trace=trace, converged=converged,
                      iterations=iterations)


def place_ld(state: NetworkState, cdi: ch.ChannelData,
             settings: Optional[SolverSettings] = None) -> RafOutcome:
    """Optimistic-diversity cache placement over the CDI."""
    return alternate_optimize(state, cdi, "ld", settings)


def place_hd(state: NetworkState, cdi: ch.ChannelData,
             settings: Optional[SolverSettings] = None) -> RafOutcome:
    """Pessimistic-diversity cache placement over the CDI."""
    return alternate_optimize(state, cdi, "hd", settings)


def deliver(state: NetworkState, csi: ch.ChannelRealization, rho: np.ndarray,
            profile: RequestProfile,
            settings: Optional[SolverSettings] = None) -> RafOutcome:
    """One delivery slot under a fixed cache placement."""
    return alternate_optimize(state, csi, "delivery", settings,
                              profile=profile, fixed_cache=np.asarray(rho))


def refresh(state: NetworkState, csi: ch.ChannelRealization,
            context: RefreshContext, profile: RequestProfile,
            settings: Optional[SolverSettings] = None) -> RafOutcome:
    """Re-pick the cache among videos available in each cell's buffer."""
    avail = context.availability(state)
    return alternate_optimize(state, csi, "delivery", settings,
                              profile=profile, cache_upper=avail)


# ---------------------------------------------------------------------------
# low-complexity delivery: radio frozen, only scheduling and wired resources
# ---------------------------------------------------------------------------

def deliver_lc(state: NetworkState, csi: ch.ChannelRealization,
               frozen: SchedulingDecision, power: np.ndarray,
               profile: RequestProfile,
               settings: Optional[SolverSettings] = None) -> RafOutcome:
    """Delivery with the placement phase's radio decisions carried over.

    Association, subcarriers and powers stay frozen; the alternation only
    re-picks serving events (a small binary program) and re-sizes
    processing/link rates (a linear program).
    """
    settings = settings or SolverSettings()
    rates = ch.rate_table(state, power, frozen.subcarrier, csi.gains)

    # inherit the frozen radio plan, then greedy events against its rates
    dec = frozen.copy()
    for name in ("x", "y", "z", "t", "w", "o"):
        getattr(dec, name)[:] = 0
    _fill_events_greedy(state, dec, rates, profile)

    weights = provisioning_weights(state, dec, "delivery", profile)
    fixed_terms = _delivery_fixed_terms(state, dec, power, rates, profile)

    trace: list[float] = []
    converged = False
    last = None
    iterations = 0
    alloc = ResourceAllocation(power=power.copy(),
                               processing=np.zeros((state.n_rrs, state.n_pairs)),
                               backhaul_rate=np.zeros((state.n_rrs, state.n_videos)),
                               fronthaul_rate=np.zeros((state.n_rrs, state.n_rrs,
                                                        state.n_videos)))
    for it in range(settings.main_iters):
        iterations = it + 1
        cont = _solve_lc_continuous(state, dec, rates, profile, weights)
        if cont is None:
            converged = True
            break
        phi, r_bh, r_fh, cost = cont
        alloc = ResourceAllocation(power=power.copy(), processing=phi,
                                   backhaul_rate=r_bh, fronthaul_rate=r_fh)
        v1 = fixed_terms - cost - _storage_rent(state, dec, weights)
        trace.append(v1)

        lp = _build_lc_events(state, dec, alloc, rates, profile)
        res = branch_and_bound(lp, abs_gap=settings.bnb_gap,
                               node_limit=settings.bnb_node_limit)
        if res.status != "optimal" or res.value < v1 - 1e-9:
            converged = True
            break
        new_dec = _decode_lc_events(state, lp, res.x, dec)
        trace.append(res.value)
        dec = new_dec
        weights = provisioning_weights(state, dec, "delivery", profile)
        if last is not None and abs(res.value - last) <= settings.main_tol:
            converged = True
            break
        last = res.value

    return RafOutcome(decision=dec, alloc=prune_alloc(state, dec, alloc),
                      objective_trace=trace, converged=converged,
                      iterations=iterations)


def _fill_events_greedy(state, dec, rates, profile):
    """Cheapest-feasible serving event per demanded (cell, video), in place."""
    pairs = state.transcoding.pairs
    sizes = state.video_sizes
    workload = state.transcoding.task_bits * state.transcoding.cycles_per_bit
    proc_left = np.array([r.max_processing for r in state.rrs])
    bh_left = np.array(state.links.backhaul_cap, dtype=float)
    fh_left = np.array(state.links.fronthaul_cap, dtype=float)
    for b in range(state.n_rrs):
        for v in range(state.n_videos):
            req = profile.requesters(v)
            if not int((profile.request[:, v] * dec.assoc[b]).sum()):
                continue
            peak = max((rates[b, int(u)] for u in req), default=0.0)
            cands = []
            if dec.cache[b, v]:
                cands.append((sizes[v] * state.rrs[b].price_cache, 0, "x", (b, v), {}))
            for k in state.pairs_with_low(v):
                hi, _ = pairs[k]
                if dec.cache[b, hi]:
                    need = workload[k] * peak / sizes[v]
                    if need <= proc_left[b]:
                        cands.append((sizes[hi] * state.rrs[b].price_cache
                                      + need * state.rrs[b].price_processing,
                                      1, "y", (b, k), {"proc": (b, need)}))
            for s in range(state.n_rrs):
                if s == b:
                    continue
                if dec.cache[s, v] and peak <= fh_left[s, b]:
                    cands.append((sizes[v] * state.rrs[s].price_cache
                                  + peak * state.links.price_fronthaul,
                                  2, "z", (s, b, v), {"fh": (s, b, peak)}))
                for k in state.pairs_with_low(v):
                    hi, _ = pairs[k]
                    if not dec.cache[s, hi]:
                        continue
                    need = workload[k] * peak / sizes[v]
                    if need <= proc_left[s] and peak <= fh_left[s, b]:
                        cands.append((sizes[hi] * state.rrs[s].price_cache
                                      + need * state.rrs[s].price_processing
                                      + peak * state.links.price_fronthaul,
                                      3, "t", (s, b, k),
                                      {"proc": (s, need), "fh": (s, b, peak)}))
                    fh_need = sizes[hi] * peak / sizes[v]
                    if need <= proc_left[b] and fh_need <= fh_left[s, b]:
                        cands.append((sizes[hi] * state.rrs[s].price_cache
                                      + fh_need * state.links.price_fronthaul
                                      + need * state.rrs[b].price_processing,
                                      4, "w", (s, b, k),
                                      {"proc": (b, need), "fh": (s, b, fh_need)}))
            if peak <= bh_left[b]:
                cands.append((peak * state.links.price_backhaul, 5, "o", (b, v),
                              {"bh": (b, peak)}))
            if not cands:
                continue
            cands.sort(key=lambda c: (c[0], c[1], c[3]))
            _, _, kind, payload, used = cands[0]
            getattr(dec, kind)[payload] = 1
            if "proc" in used:
                proc_left[used["proc"][0]] -= used["proc"][1]
            if "fh" in used:
                fh_left[used["fh"][0], used["fh"][1]] -= used["fh"][2]
            if "bh" in used:
                bh_left[used["bh"][0]] -= used["bh"][1]


def _delivery_fixed_terms(state, dec, power, rates, profile) -> float:
    """Reward minus power and subcarrier costs, all frozen in the LC run."""
    total = 0.0
    for sl in state.slices:
        members = np.asarray(sl.users, dtype=int)
        if len(members) == 0:
            continue
        total += float(rates[:, members].sum()) * sl.reward_rate
        for b, r in enumerate(state.rrs):
            total -= float(power[b][members].sum()) * r.price_power
            shared = dec.subcarrier[b][members].max(axis=0)
            total -= float(shared.sum()) * state.subcarrier_bandwidth * r.price_subcarrier
    return total


def _storage_rent(state, dec, weights) -> float:
    from .sca import _storage_cost
    return _storage_cost(state, dec, weights)


def _solve_lc_continuous(state, dec, rates, profile, weights):
    """LP over (processing, link rates) for the active events; None if infeasible."""
    pairs = state.transcoding.pairs
    sizes = state.video_sizes
    workload = state.transcoding.task_bits * state.transcoding.cycles_per_bit
    lp = LinearProgram()
    phi_vars, bh_vars, fh_vars = {}, {}, {}

    def phi_var(b, k, weight):
        if (b, k) not in phi_vars:
            phi_vars[(b, k)] = lp.add_var(f"phi[{b},{k}]", lb=0.0, ub=math.inf,
                                          binary=False, obj=0.0)
        lp.obj[phi_vars[(b, k)]] -= weight
        return phi_vars[(b, k)]

    def bh_var(b, v, weight):
        if (b, v) not in bh_vars:
            bh_vars[(b, v)] = lp.add_var(f"rbh[{b},{v}]", lb=0.0, ub=math.inf,
                                         binary=False, obj=0.0)
        lp.obj[bh_vars[(b, v)]] -= weight
        return bh_vars[(b, v)]

    def fh_var(s, b, v, weight):
        if (s, b, v) not in fh_vars:
            fh_vars[(s, b, v)] = lp.add_var(f"rfh[{s},{b},{v}]", lb=0.0, ub=math.inf,
                                            binary=False, obj=0.0)
        lp.obj[fh_vars[(s, b, v)]] -= weight
        return fh_vars[(s, b, v)]

    def peak(b, v):
        req = profile.requesters(v)
        return max((rates[b, int(u)] for u in req), default=0.0)

    for b, k in np.argwhere(dec.y == 1):
        hi, lo = pairs[k]
        j = phi_var(b, k, weights[b, lo] * state.rrs[b].price_processing)
        lp.add_row([(j, 1.0)], ">", workload[k] * peak(b, lo) / sizes[lo],
                   f"yfloor[{b},{k}]")
    for s, b, v in np.argwhere(dec.z == 1):
        j = fh_var(s, b, v, weights[b, v] * state.links.price_fronthaul)
        lp.add_row([(j, 1.0)], ">", peak(b, v), f"zfloor[{s},{b},{v}]")
    for s, b, k in np.argwhere(dec.t == 1):
        hi, lo = pairs[k]
        jr = fh_var(s, b, lo, weights[b, lo] * state.links.price_fronthaul)
        jp = phi_var(s, k, weights[b, lo] * state.rrs[s].price_processing)
        lp.add_row([(jr, 1.0)], ">", peak(b, lo), f"tfloor[{s},{b},{k}]")
        lp.add_row([(jp, 1.0 / workload[k]), (jr, -1.0 / sizes[lo])], ">", 0.0,
                   f"tchain[{s},{b},{k}]")
    for s, b, k in np.argwhere(dec.w == 1):
        hi, lo = pairs[k]
        jp = phi_var(b, k, weights[b, lo] * state.rrs[b].price_processing)
        jr = fh_var(s, b, hi, weights[b, lo] * state.links.price_fronthaul)
        lp.add_row([(jp, 1.0)], ">", workload[k] * peak(b, lo) / sizes[lo],
                   f"wfloor[{s},{b},{k}]")
        lp.add_row([(jr, 1.0 / sizes[hi]), (jp, -1.0 / workload[k])], ">", 0.0,
                   f"wchain[{s},{b},{k}]")
    for b, v in np.argwhere(dec.o == 1):
        j = bh_var(b, v, weights[b, v] * state.links.price_backhaul)
        lp.add_row([(j, 1.0)], ">", peak(b, v), f"ofloor[{b},{v}]")

    for b in range(state.n_rrs):
        coeffs = []
        for (bb, k), j in phi_vars.items():
            count = dec.y[b, k] if bb == b else 0
            count += dec.t[b, :, k].sum() if bb == b else 0
            count += dec.w[:, b, k].sum() if bb == b else 0
            if bb == b and count:
                coeffs.append((j, float(count)))
        if coeffs:
            lp.add_row(coeffs, "<", state.rrs[b].max_processing, f"proc[{b}]")
        coeffs = [(j, 1.0) for (bb, v), j in bh_vars.items() if bb == b]
        if coeffs:
            lp.add_row(coeffs, "<", float(state.links.backhaul_cap[b]), f"bh[{b}]")
    for s in range(state.n_rrs):
        for b in range(state.n_rrs):
            if s == b:
                continue
            coeffs = []
            for (ss, bb, v), j in fh_vars.items():
                if ss != s or bb != b:
                    continue
                mult = dec.z[s, b, v]
                mult += sum(dec.t[s, b, k] for k in state.pairs_with_low(v))
                mult += sum(dec.w[s, b, k] for k in state.pairs_with_high(v))
                if mult:
                    coeffs.append((j, float(mult)))
            if coeffs:
                lp.add_row(coeffs, "<", float(state.links.fronthaul_cap[s, b]),
                           f"fh[{s},{b}]")

    if lp.n_vars == 0:
        return (np.zeros((state.n_rrs, state.n_pairs)),
                np.zeros((state.n_rrs, state.n_videos)),
                np.zeros((state.n_rrs, state.n_rrs, state.n_videos)), 0.0)
    res = lp_solve(lp)
    if res.status != "optimal":
        return None
    phi = np.zeros((state.n_rrs, state.n_pairs))
    r_bh = np.zeros((state.n_rrs, state.n_videos))
    r_fh = np.zeros((state.n_rrs, state.n_rrs, state.n_videos))
    for (b, k), j in phi_vars.items():
        phi[b, k] = res.x[j]
    for (b, v), j in bh_vars.items():
        r_bh[b, v] = res.x[j]
    for (s, b, v), j in fh_vars.items():
        r_fh[s, b, v] = res.x[j]
    return phi, r_bh, r_fh, -res.value


def _build_lc_events(state, dec, alloc, rates, profile) -> LinearProgram:
    """Binary program over serving events only; radio terms are constants."""
    pairs = state.transcoding.pairs
    sizes = state.video_sizes
    workload = state.transcoding.task_bits * state.transcoding.cycles_per_bit
    lp = LinearProgram()
    lp.obj_const = _delivery_fixed_terms(state, dec, alloc.power, rates, profile)

    weights = provisioning_weights(state, dec, "delivery", profile)
    from .intprog import _event_cost_coeffs
    cost = _event_cost_coeffs(state, alloc)

    evars = {}
    demanded = [(b, v) for b in range(state.n_rrs) for v in range(state.n_videos)
                if int((profile.request[:, v] * dec.assoc[b]).sum()) > 0]

    def peak(b, v):
        req = profile.requesters(v)
        return max((rates[b, int(u)] for u in req), default=0.0)

    for (b, v) in demanded:
        opts = []
        pk = peak(b, v)
        if dec.cache[b, v]:
            opts.append(("x", (b, v)))
        for k in state.pairs_with_low(v):
            hi, _ = pairs[k]
            if dec.cache[b, hi] and alloc.processing[b, k] * sizes[v] >= \
                    workload[k] * pk * (1 - 1e-12):
                opts.append(("y", (b, k)))
        for s in range(state.n_rrs):
            if s == b:
                continue
            if dec.cache[s, v] and alloc.fronthaul_rate[s, b, v] >= pk * (1 - 1e-12):
                opts.append(("z", (s, b, v)))
            for k in state.pairs_with_low(v):
                hi, _ = pairs[k]
                if not dec.cache[s, hi]:
                    continue
                # t: fronthaul keeps up with access, source processor with fronthaul
                if (alloc.fronthaul_rate[s, b, v] >= pk * (1 - 1e-12)
                        and alloc.processing[s, k] / workload[k] >=
                        alloc.fronthaul_rate[s, b, v] / sizes[v] * (1 - 1e-12)):
                    opts.append(("t", (s, b, k)))
                # w: local processor keeps up with access, high-variant
                # fronthaul with the processor
                if (alloc.processing[b, k] * sizes[v] >= workload[k] * pk * (1 - 1e-12)
                        and alloc.fronthaul_rate[s, b, hi] / sizes[hi] >=
                        alloc.processing[b, k] / workload[k] * (1 - 1e-12)):
                    opts.append(("w", (s, b, k)))
        if alloc.backhaul_rate[b, v] >= pk * (1 - 1e-12):
            opts.append(("o", (b, v)))
        row = []
        for kind, key in opts:
            if (kind, key) not in evars:
                evars[(kind, key)] = lp.add_var(f"{kind}{list(key)}",
                                                obj=-weights[b, v] * cost[kind][key])
            row.append((evars[(kind, key)], 1.0))
        if not row:
            # must serve but nothing is provisioned: infeasible program on purpose
            jz = lp.add_var(f"stub[{b},{v}]")
            lp.add_row([(jz, 1.0)], "=", 1.0, f"cover[{b},{v}]")
            lp.add_row([(jz, 1.0)], "=", 0.0, f"cover2[{b},{v}]")
            continue
        lp.add_row(row, "=", 1.0, f"cover[{b},{v}]")

    # capacity rows over the chosen events
    for b in range(state.n_rrs):
        coeffs = [(j, alloc.processing[b, k]) for (kind, key), j in evars.items()
                  if kind == "y" and key[0] == b for k in [key[1]]]
        coeffs += [(j, alloc.processing[key[0], key[2]]) for (kind, key), j in evars.items()
                   if kind == "t" and key[0] == b]
        coeffs += [(j, alloc.processing[key[1], key[2]]) for (kind, key), j in evars.items()
                   if kind == "w" and key[1] == b]
        if coeffs:
            lp.add_row(coeffs, "<", state.rrs[b].max_processing, f"proc[{b}]")
        coeffs = [(j, alloc.backhaul_rate[key[0], key[1]]) for (kind, key), j in evars.items()
                  if kind == "o" and key[0] == b]
        if coeffs:
            lp.add_row(coeffs, "<", float(state.links.backhaul_cap[b]), f"bh[{b}]")
    for s in range(state.n_rrs):
        for b in range(state.n_rrs):
            if s == b:
                continue
            coeffs = [(j, alloc.fronthaul_rate[s, b, key[2]])
                      for (kind, key), j in evars.items()
                      if kind == "z" and key[0] == s and key[1] == b]
            coeffs += [(j, alloc.fronthaul_rate[s, b, pairs[key[2]][1]])
                       for (kind, key), j in evars.items()
                       if kind == "t" and key[0] == s and key[1] == b]
            coeffs += [(j, alloc.fronthaul_rate[s, b, pairs[key[2]][0]])
                       for (kind, key), j in evars.items()
                       if kind == "w" and key[0] == s and key[1] == b]
            if coeffs:
                lp.add_row(coeffs, "<", float(state.links.fronthaul_cap[s, b]),
                           f"fh[{s},{b}]")
    lp.meta = {"events": evars}
    return lp


def _decode_lc_events(state, lp, x, dec) -> SchedulingDecision:
    out = dec.copy()
    for name in ("x", "y", "z", "t", "w", "o"):
        getattr(out, name)[:] = 0
    for (kind, key), j in lp.meta["events"].items():
        if round(x[j]) == 1:
            getattr(out, kind)[key] = 1
    return out


# ---------------------------------------------------------------------------
# complexity estimates
# ---------------------------------------------------------------------------

def complexity_estimate(dims: dict, flavor: str, t0: float = 1.0, rho: float = 1.0,
                        eps0: float = math.e, xi_main: int = 1,
                        xi_sca: int = 1) -> dict:
    """Interior-point operation-count estimates for one solver run.

    ``dims`` carries B, U, M, V, L, N.  Returns the constraint counts of both
    steps and the log-scaled operation orders, including the composite over
    ``xi_main`` alternation rounds with ``xi_sca`` convexification rounds
    each.  The low-complexity delivery counts contain no U term.
    """
    if eps0 <= 1.0:
        raise ValueError("invalid-parameter: eps0 must exceed 1")
    if t0 <= 0 or rho <= 0:
        raise ValueError("invalid-parameter: t0 and rho must be positive")
    B, U, M = dims["B"], dims["U"], dims["M"]
    V, L, N = dims["V"], dims["L"], dims["N"]

    t1_full = (3 * B + B ** 2 + U + M + B * U ** 2 * N
               + B * V * L * U * (1 + B + L)
               + B ** 2 * V * L ** 2 * (2 + 2 * U))
    t2_ld = (3 * B + 2 * U + M + B ** 2 + 2 * B * U + B * N + 2 * B * U * N
             + B * U ** 2 * N
             + B * V * L * (2 + B + L + 6 * M + 4 * U * N + 3 * L * M + 3 * B * M
                            + 4 * L * U * N + 4 * B * U * N)
             + B ** 2 * V * L ** 2 * (4 + 6 * M + 8 * U * N))
    t2_hd = (3 * B + 2 * U + M + B ** 2 + B * U + B * N + 2 * B * U * N
             + B * U ** 2 * N
             + B * V * L * (2 + B + L + 6 * U + 4 * U * N + 3 * L * U + 3 * B * U
                            + 4 * L * U * N + 4 * B * U * N)
             + B ** 2 * V * L ** 2 * (4 + 6 * U + 8 * U * N))
    t2_del = (2 * B + 2 * U + M + B ** 2 + 2 * B * U + B * N + 2 * B * U * N
              + B * U ** 2 * N
              + B * V * L * (2 + B + L + 6 * M + 4 * U * N + 3 * L * M + 3 * B * M
                             + 4 * L * U * N + 4 * B * U * N)
              + B ** 2 * V * L ** 2 * (4 + 6 * M + 8 * U * N))
    t1_lc = 2 * B + B ** 2 + B * V * L * (1 + B + L) + 4 * B ** 2 * V * L ** 2
    t2_lc = 2 * B + B ** 2 + B * V * L * (3 + 2 * B + 2 * L) + 6 * B ** 2 * V * L ** 2

    flavor = flavor.lower()
    if flavor == "ld":
        t1, t2 = t1_full, t2_ld
    elif flavor == "hd":
        t1, t2 = t1_full, t2_hd
    elif flavor == "delivery":
        t1, t2 = t1_full, t2_del
    elif flavor in ("delivery_lc", "lc"):
        t1, t2 = t1_lc, t2_lc
    else:
        raise ValueError(f"unknown flavor {flavor!r}")

    def omega(t: float) -> float:
        return math.log(t / (t0 * rho)) / math.log(eps0)

    o1, o2 = omega(t1), omega(t2)
    per_round = (xi_sca * o1 + o2) if flavor in ("ld", "hd", "delivery") \
        else (o1 + o2)
    return {
        "t1": float(t1), "t2": float(t2),
        "omega1": o1, "omega2": o2,
        "omega_total": xi_main * per_round,
    }
