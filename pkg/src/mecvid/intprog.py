"""Integer programming layer: LP container, solvers, and the Step-2 builder.

The scheduling step of the alternation fixes all continuous quantities and
re-optimizes every binary decision.  Under fixed powers the per-subcarrier
rates become constants, so the whole step collapses to a binary linear
program once min/max/product terms are rewritten with epigraph variables and
three-row product linearizations.

``lp_solve`` delegates the continuous relaxation to scipy's HiGHS; branch
and bound and the exhaustive oracle are implemented here.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence, Union

import numpy as np
from scipy.optimize import linprog

from . import channel as ch
from .model import NetworkState
from .scheduling import RequestProfile, ResourceAllocation, SchedulingDecision

_SENSES = ("<", "=", ">")
ROW_TOL = 1e-9


# ---------------------------------------------------------------------------
# LP container
# ---------------------------------------------------------------------------

class LinearProgram:
    """A maximization LP/ILP built incrementally.

    Rows are stored sparse as (indices, coefficients, sense, rhs).  Binary
    variables carry bounds [0, 1] and an integrality flag.
    """

    def __init__(self):
        self.obj: list[float] = []
        self.obj_const: float = 0.0
        self.lb: list[float] = []
        self.ub: list[float] = []
        self.binary: list[bool] = []
        self.names: list[str] = []
        self.rows: list[tuple[list[int], list[float], str, float, str]] = []
        self.meta: dict = {}
        self._cache = None

    # -- building ----------------------------------------------------------
    def add_var(self, name: str, *, lb: float = 0.0, ub: float = 1.0,
                binary: bool = True, obj: float = 0.0) -> int:
        self.obj.append(float(obj))
        self.lb.append(float(lb))
        self.ub.append(float(ub))
        self.binary.append(bool(binary))
        self.names.append(name)
        self._cache = None
        return len(self.obj) - 1

    def add_to_obj(self, var: int, coeff: float) -> None:
        self.obj[var] += float(coeff)
        self._cache = None

    def add_row(self, coeffs: Iterable[tuple[int, float]], sense: str, rhs: float,
                name: str = "") -> int:
        if sense not in _SENSES:
            raise ValueError(f"sense must be one of {_SENSES}")
        idx, val = [], []
        for j, a in coeffs:
            if a != 0.0:
                idx.append(int(j))
                val.append(float(a))
        self.rows.append((idx, val, sense, float(rhs), name))
        self._cache = None
        return len(self.rows) - 1

    @property
    def n_vars(self) -> int:
        return len(self.obj)

    @property
    def n_rows(self) -> int:
        return len(self.rows)

    def binary_indices(self) -> list[int]:
        return [j for j, b in enumerate(self.binary) if b]

    # -- conversions ---------------------------------------------------------
    def to_arrays(self):
        """Sparse (A_ub, b_ub, A_eq, b_eq) with '>' rows negated into '<'; cached."""
        if self._cache is not None:
            return self._cache
        from scipy.sparse import csr_matrix

        n = self.n_vars
        ub_data, ub_i, ub_j, b_ub = [], [], [], []
        eq_data, eq_i, eq_j, b_eq = [], [], [], []
        for idx, val, sense, rhs, _ in self.rows:
            if sense == "=":
                r = len(b_eq)
                eq_i.extend([r] * len(idx))
                eq_j.extend(idx)
                eq_data.extend(val)
                b_eq.append(rhs)
            else:
                flip = -1.0 if sense == ">" else 1.0
                r = len(b_ub)
                ub_i.extend([r] * len(idx))
                ub_j.extend(idx)
                ub_data.extend([flip * a for a in val])
                b_ub.append(flip * rhs)
        A_ub = csr_matrix((ub_data, (ub_i, ub_j)), shape=(len(b_ub), n)) if b_ub else None
        A_eq = csr_matrix((eq_data, (eq_i, eq_j)), shape=(len(b_eq), n)) if b_eq else None
        self._cache = (A_ub, np.array(b_ub) if b_ub else None,
                       A_eq, np.array(b_eq) if b_eq else None)
        return self._cache

    def to_lp_text(self) -> str:
        """CPLEX-style LP text export for cross-checking with other solvers."""
        def term(j, a):
            return f"{'+' if a >= 0 else '-'} {abs(a):.17g} {self.names[j]}"

        lines = ["Maximize", " obj: " + " ".join(term(j, a) for j, a in enumerate(self.obj) if a)]
        lines.append("Subject To")
        for i, (idx, val, sense, rhs, name) in enumerate(self.rows):
            op = {"<": "<=", "=": "=", ">": ">="}[sense]
            body = " ".join(term(j, a) for j, a in zip(idx, val))
            lines.append(f" {name or f'c{i}'}: {body} {op} {rhs:.17g}")
        lines.append("Bounds")
        for j in range(self.n_vars):
            lines.append(f" {self.lb[j]:.17g} <= {self.names[j]} <= {self.ub[j]:.17g}")
        binaries = [self.names[j] for j in self.binary_indices()]
        if binaries:
            lines.append("Binary")
            lines.append(" " + " ".join(binaries))
        lines.append("End")
        return "\n".join(lines)

    def evaluate(self, x: np.ndarray) -> float:
        return float(np.dot(self.obj, x)) + self.obj_const

    def feasible_point(self, x: np.ndarray, tol: float = 1e-7) -> bool:
        for idx, val, sense, rhs, _ in self.rows:
            lhs = float(sum(a * x[j] for j, a in zip(idx, val)))
            scale = max(1.0, abs(rhs))
            if sense == "<" and lhs > rhs + tol * scale:
                return False
            if sense == ">" and lhs < rhs - tol * scale:
                return False
            if sense == "=" and abs(lhs - rhs) > tol * scale:
                return False
        x = np.asarray(x)
        if np.any(x < np.array(self.lb) - tol) or np.any(x > np.array(self.ub) + tol):
            return False
        return True


@dataclass
class LpResult:
    status: str                  # optimal | infeasible | unbounded
    value: Optional[float] = None
    x: Optional[np.ndarray] = None


def lp_solve(lp: LinearProgram, lb: Optional[np.ndarray] = None,
             ub: Optional[np.ndarray] = None) -> LpResult:
    """Solve the continuous relaxation (integrality dropped) to optimality."""
    A_ub, b_ub, A_eq, b_eq = lp.to_arrays()
    lo = np.array(lp.lb) if lb is None else lb
    hi = np.array(lp.ub) if ub is None else ub
    res = linprog(-np.array(lp.obj), A_ub=A_ub, b_ub=b_ub, A_eq=A_eq, b_eq=b_eq,
                  bounds=list(zip(lo, hi)), method="highs")
    if res.status == 0:
        return LpResult("optimal", -res.fun + lp.obj_const, res.x)
    if res.status == 2:
        return LpResult("infeasible")
    if res.status == 3:
        return LpResult("unbounded")
    raise RuntimeError(f"LP solver failure: {res.message}")


# ---------------------------------------------------------------------------
# branch and bound
# ---------------------------------------------------------------------------

@dataclass
class BnbResult:
    status: str                  # optimal | infeasible | node-limit
    value: Optional[float] = None
    x: Optional[np.ndarray] = None
    bound: Optional[float] = None
    nodes: int = 0


def branch_and_bound(lp: LinearProgram, *, abs_gap: float = 1e-6,
                     node_limit: int = 200_000, int_tol: float = 1e-6) -> BnbResult:
    """Best-bound branch and bound over the binary variables.

    Branches on the most fractional binary (lowest index on ties); children
    pin the variable to 0/1 through its bounds.  Returns a provably optimal
    point (bound gap <= abs_gap) or infeasibility.
    """
    import heapq

    base_lb = np.array(lp.lb)
    base_ub = np.array(lp.ub)
    binaries = np.array(lp.binary_indices(), dtype=int)

    def solve_node(fixings: dict[int, int]) -> LpResult:
        lo, hi = base_lb.copy(), base_ub.copy()
        for j, v in fixings.items():
            lo[j] = hi[j] = v
        return lp_solve(lp, lo, hi)

    root = solve_node({})
    if root.status == "infeasible":
        return BnbResult("infeasible", nodes=1)
    if root.status == "unbounded":
        raise ValueError("unbounded relaxation")

    best_val = -math.inf
    best_x: Optional[np.ndarray] = None
    counter = 0
    nodes = 1
    heap = [(-root.value, counter, {}, root)]

    while heap:
        neg_bound, _, fixings, res = heapq.heappop(heap)
        bound = -neg_bound
        if bound <= best_val + min(abs_gap, 1e-9):
            break  # best-bound order: nothing left can improve
        frac = np.abs(res.x[binaries] - np.round(res.x[binaries]))
        worst = int(np.argmax(frac))
        if frac[worst] <= int_tol:
            xi = res.x.copy()
            xi[binaries] = np.round(xi[binaries])
            if res.value > best_val:
                best_val, best_x = res.value, xi
            continue
        j = int(binaries[worst])
        for v in (0, 1):
            child = dict(fixings)
            child[j] = v
            nodes += 1
            if nodes > node_limit:
                return BnbResult("node-limit", best_val if best_x is not None else None,
                                 best_x, bound, nodes)
            sub = solve_node(child)
            if sub.status != "optimal" or sub.value <= best_val + 1e-12:
                continue
            counter += 1
            heapq.heappush(heap, (-sub.value, counter, child, sub))

    if best_x is None:
        return BnbResult("infeasible", nodes=nodes)
    return BnbResult("optimal", best_val, best_x, best_val, nodes)


# ---------------------------------------------------------------------------
# exhaustive oracle
# ---------------------------------------------------------------------------

def brute_force_oracle(lp: LinearProgram, node_budget: int = 2_000_000) -> tuple[float, np.ndarray]:
    """Exhaustive optimum over binary assignments, with row-bound pruning.

    Binaries are enumerated depth-first in index order; a branch dies as soon
    as some row cannot be satisfied by any completion or the objective cannot
    beat the incumbent.  Remaining continuous variables are resolved by an LP
    at each surviving leaf.  Raises on exhausted ``node_budget`` (too-large).
    """
    n = lp.n_vars
    binaries = lp.binary_indices()
    continuous = [j for j in range(n) if not lp.binary[j]]
    obj = lp.obj

    cols: list[list[tuple[int, float]]] = [[] for _ in range(n)]
    fixed = [0.0] * lp.n_rows
    fmin = [0.0] * lp.n_rows
    fmax = [0.0] * lp.n_rows
    senses, rhss = [], []
    for i, (idx, val, sense, rhs, _) in enumerate(lp.rows):
        senses.append(sense)
        rhss.append(rhs)
        for j, a in zip(idx, val):
            if lp.binary[j]:
                cols[j].append((i, a))
                fmin[i] += min(0.0, a)
                fmax[i] += max(0.0, a)
            else:
                contrib = (a * lp.lb[j], a * lp.ub[j])
                fmin[i] += min(contrib)
                fmax[i] += max(contrib)

    ofix = sum(obj[j] * lp.lb[j] for j in continuous if obj[j] < 0)
    ofree = sum(max(0.0, obj[j]) for j in binaries)
    ofree += sum(obj[j] * lp.ub[j] for j in continuous if obj[j] > 0)
    tol = [ROW_TOL * max(1.0, abs(r)) for r in rhss]

    best_val = -math.inf
    best_x: Optional[np.ndarray] = None
    assign = {}
    visits = 0

    def row_dead(i: int) -> bool:
        if senses[i] == "<":
            return fixed[i] + fmin[i] > rhss[i] + tol[i]
        if senses[i] == ">":
            return fixed[i] + fmax[i] < rhss[i] - tol[i]
        return (fixed[i] + fmin[i] > rhss[i] + tol[i]
                or fixed[i] + fmax[i] < rhss[i] - tol[i])

    def leaf():
        nonlocal best_val, best_x
        if continuous:
            lo = np.array(lp.lb)
            hi = np.array(lp.ub)
            for j, v in assign.items():
                lo[j] = hi[j] = v
            res = lp_solve(lp, lo, hi)
            if res.status != "optimal" or res.value <= best_val:
                return
            best_val, best_x = res.value, res.x.copy()
        else:
            val = sum(obj[j] * v for j, v in assign.items()) + lp.obj_const
            if val > best_val:
                x = np.zeros(n)
                for j, v in assign.items():
                    x[j] = v
                best_val, best_x = val, x

    def descend(pos: int):
        nonlocal visits, ofix, ofree
        visits += 1
        if visits > node_budget:
            raise RuntimeError("too-large: oracle node budget exhausted")
        if pos == len(binaries):
            leaf()
            return
        j = binaries[pos]
        for v in (0, 1):
            assign[j] = v
            dead = False
            for i, a in cols[j]:
                fixed[i] += a * v
                fmin[i] -= min(0.0, a)
                fmax[i] -= max(0.0, a)
            o_gain = obj[j] * v
            ofix += o_gain
            ofree -= max(0.0, obj[j])
            if ofix + ofree + lp.obj_const <= best_val + 1e-12:
                dead = True
            else:
                for i, _ in cols[j]:
                    if row_dead(i):
                        dead = True
                        break
            if not dead:
                descend(pos + 1)
            for i, a in cols[j]:
                fixed[i] -= a * v
                fmin[i] += min(0.0, a)
                fmax[i] += max(0.0, a)
            ofix -= o_gain
            ofree += max(0.0, obj[j])
            del assign[j]

    if continuous and len(binaries) == 0:
        res = lp_solve(lp)
        if res.status != "optimal":
            raise ValueError(f"oracle: relaxation {res.status}")
        return res.value, res.x

    import sys
    old = sys.getrecursionlimit()
    sys.setrecursionlimit(max(old, len(binaries) + 100))
    try:
        descend(0)
    finally:
        sys.setrecursionlimit(old)
    if best_x is None:
        raise ValueError("oracle: no feasible assignment")
    return best_val, best_x


# ---------------------------------------------------------------------------
# product linearization
# ---------------------------------------------------------------------------

def linearize_product(lp: LinearProgram, x_id: int, y_id: int, name: str,
                      obj: float = 0.0) -> int:
    """Add binary z with z <= x, z <= y, z >= x + y - 1, so z = x*y when integral."""
    z = lp.add_var(name, binary=True, obj=obj)
    lp.add_row([(z, 1.0), (x_id, -1.0)], "<", 0.0, f"{name}_le_x")
    lp.add_row([(z, 1.0), (y_id, -1.0)], "<", 0.0, f"{name}_le_y")
    lp.add_row([(z, 1.0), (x_id, -1.0), (y_id, -1.0)], ">", -1.0, f"{name}_ge_sum")
    return z


# ---------------------------------------------------------------------------
# rate coefficients under fixed powers
# ---------------------------------------------------------------------------

def rate_coefficients(state: NetworkState, power: np.ndarray,
                      channel_data: Union[ch.ChannelRealization, ch.ChannelData]) -> np.ndarray:
    """(B, U, N) per-subcarrier rate earned if the assignment is active.

    With powers fixed, Ws*log2(1 + SINR) is a constant per entry; for a CDI
    set the constant is the sample mean.
    """
    ws = state.subcarrier_bandwidth
    if isinstance(channel_data, ch.ChannelData):
        acc = np.zeros((state.n_rrs, state.n_users, state.n_subcarriers))
        for s in channel_data.samples:
            acc += np.log2(1.0 + ch.sinr_table(state, power, s.gains))
        return ws * acc / len(channel_data)
    return ws * np.log2(1.0 + ch.sinr_table(state, power, channel_data.gains))


def sic_conflicts(state: NetworkState, power: np.ndarray,
                  channel_data: Union[ch.ChannelRealization, ch.ChannelData]) -> list[tuple[int, int, int, int]]:
    """(b, n, u, w) pairs whose decode-order condition fails at the fixed powers.

    Such pairs must not share subcarrier n at cell b.  Pairs where either
    power is zero are unconstrained.
    """
    sigma = state.noise_power()
    out = []
    if isinstance(channel_data, ch.ChannelData):
        samples = [s.gains for s in channel_data.samples]
        per_sample = [ch.interference(state, power, g) for g in samples]
        mean_gains = channel_data.mean_gains
        for b in range(state.n_rrs):
            for n in range(state.n_subcarriers):
                order = ch.stronger_matrix(mean_gains[b, :, n])
                for u in range(state.n_users):
                    for w in range(state.n_users):
                        if not order[u, w] or power[b, u, n] <= 0 or power[b, w, n] <= 0:
                            continue
                        lhs = rhs = 0.0
                        for g, (intra, inter) in zip(samples, per_sample):
                            s = ch.stronger_matrix(g[b, :, n])
                            lhs += g[b, u, n] * (intra[b, w, n] + inter[b, w, n] + sigma)
                            rhs += g[b, w, n] * ((s[:, w] * power[b, :, n]).sum() * g[b, u, n]
                                                 + inter[b, u, n] + sigma)
                        scale = max(abs(lhs), abs(rhs), 1e-300)
                        if (lhs - rhs) / scale < -ch.REL_SLACK:
                            out.append((b, n, u, w))
    else:
        g = channel_data.gains
        intra, inter = ch.interference(state, power, g)
        gamma = power * g / (intra + inter + sigma)
        for b in range(state.n_rrs):
            for n in range(state.n_subcarriers):
                s = ch.stronger_matrix(g[b, :, n])
                for u in range(state.n_users):
                    for w in range(state.n_users):
                        if not s[u, w] or power[b, u, n] <= 0 or power[b, w, n] <= 0:
                            continue
                        denom = (s[:, w] * power[b, :, n]).sum() * g[b, u, n] + inter[b, u, n] + sigma
                        lhs = power[b, w, n] * g[b, u, n] / denom
                        if lhs - gamma[b, w, n] < -1e-9:
                            out.append((b, n, u, w))
    return out


# ---------------------------------------------------------------------------
# Step-2 builder
# ---------------------------------------------------------------------------

def _event_cost_coeffs(state: NetworkState, alloc: ResourceAllocation):
    """Constant cost of each serving event under the fixed allocation."""
    sizes = state.video_sizes
    rrs = state.rrs
    fh, bh = state.links.price_fronthaul, state.links.price_backhaul
    pairs = state.transcoding.pairs
    cost = {"x": {}, "y": {}, "z": {}, "t": {}, "w": {}, "o": {}}
    for b in range(state.n_rrs):
        for v in range(state.n_videos):
            cost["x"][(b, v)] = sizes[v] * rrs[b].price_cache
            cost["o"][(b, v)] = alloc.backhaul_rate[b, v] * bh
        for k, (hi, lo) in enumerate(pairs):
            cost["y"][(b, k)] = (sizes[hi] * rrs[b].price_cache
                                 + alloc.processing[b, k] * rrs[b].price_processing)
    for s in range(state.n_rrs):
        for b in range(state.n_rrs):
            if s == b:
                continue
            for v in range(state.n_videos):
                cost["z"][(s, b, v)] = (sizes[v] * rrs[s].price_cache
                                        + alloc.fronthaul_rate[s, b, v] * fh)
            for k, (hi, lo) in enumerate(pairs):
                cost["t"][(s, b, k)] = (sizes[hi] * rrs[s].price_cache
                                        + alloc.processing[s, k] * rrs[s].price_processing
                                        + alloc.fronthaul_rate[s, b, lo] * fh)
                cost["w"][(s, b, k)] = (sizes[hi] * rrs[s].price_cache
                                        + alloc.fronthaul_rate[s, b, hi] * fh
                                        + alloc.processing[b, k] * rrs[b].price_processing)
    return cost


def build_step2(
    state: NetworkState,
    alloc: ResourceAllocation,
    channel_data: Union[ch.ChannelRealization, ch.ChannelData],
    objective: str,
    profile: Optional[RequestProfile] = None,
    *,
    fixed_cache: Optional[np.ndarray] = None,
    cache_upper: Optional[np.ndarray] = None,
) -> LinearProgram:
    """Build the binary program of the scheduling step.

    ``objective`` selects the revenue estimate: ``"ld"``/``"hd"`` for the
    placement flavors (popularity-averaged provisioning billed per slice
    resp. per associated user) and ``"delivery"`` for one slot with known
    requests.  Delivery requires ``profile`` and ``fixed_cache``; a refresh
    run instead passes ``cache_upper`` (per-entry availability bound) to keep
    the cache as a variable.
    """
    if objective not in ("ld", "hd", "delivery"):
        raise ValueError(f"build-error: unknown objective {objective!r}")
    placement = objective in ("ld", "hd")
    if not placement and profile is None:
        raise ValueError("build-error: delivery build needs a request profile")
    if not placement and fixed_cache is None and cache_upper is None:
        raise ValueError("build-error: delivery build needs fixed_cache or cache_upper")

    B, U, N = state.n_rrs, state.n_users, state.n_subcarriers
    VL, P, M = state.n_videos, state.n_pairs, state.n_slices
    pairs = state.transcoding.pairs
    sizes = state.video_sizes
    pop = state.popularity.popularity
    workload = state.transcoding.task_bits * state.transcoding.cycles_per_bit
    slice_of = state.slice_of_user

    cbar = rate_coefficients(state, alloc.power, channel_data)
    cost = _event_cost_coeffs(state, alloc)

    lp = LinearProgram()
    lp.obj_const = -sum(alloc.power[b].sum() * state.rrs[b].price_power for b in range(B))

    # decision variables -----------------------------------------------------
    theta = {(b, u): lp.add_var(f"theta[{b},{u}]") for b in range(B) for u in range(U)}
    tau = {}
    for b in range(B):
        for u in range(U):
            mi = slice_of[u]
            psi = state.slices[mi].reward_rate if mi >= 0 else 0.0
            for n in range(N):
                tau[(b, u, n)] = lp.add_var(f"tau[{b},{u},{n}]", obj=psi * cbar[b, u, n])

    rho: dict[tuple[int, int], Union[int, None]] = {}
    rho_const: Optional[np.ndarray] = None
    if placement or cache_upper is not None:
        upper = np.ones((B, VL)) if cache_upper is None else np.asarray(cache_upper)
        for b in range(B):
            for v in range(VL):
                rho[(b, v)] = lp.add_var(f"rho[{b},{v}]", ub=float(upper[b, v]))
    else:
        rho_const = np.asarray(fixed_cache)

    # serving demand: in delivery only requested videos can generate events
    if placement:
        demanded = {(b, v) for b in range(B) for v in range(VL)}
    else:
        demanded = {(b, v) for b in range(B) for v in range(VL)
                    if profile.requesters(v).size > 0}

    def _cacheable(b: int, v: int) -> bool:
        if rho_const is None:
            return lp.ub[rho[(b, v)]] > 0 if (b, v) in rho else True
        return rho_const[b, v] > 0

    ev_x = {(b, v): lp.add_var(f"x[{b},{v}]") for (b, v) in demanded if _cacheable(b, v)}
    ev_y = {(b, k): lp.add_var(f"y[{b},{k}]")
            for b in range(B) for k in range(P)
            if (b, pairs[k][1]) in demanded and _cacheable(b, pairs[k][0])}
    ev_z = {(s, b, v): lp.add_var(f"z[{s},{b},{v}]")
            for s in range(B) for b in range(B) for v in range(VL)
            if s != b and (b, v) in demanded and _cacheable(s, v)}
    ev_t = {(s, b, k): lp.add_var(f"t[{s},{b},{k}]")
            for s in range(B) for b in range(B) for k in range(P)
            if s != b and (b, pairs[k][1]) in demanded and _cacheable(s, pairs[k][0])}
    ev_w = {(s, b, k): lp.add_var(f"w[{s},{b},{k}]")
            for s in range(B) for b in range(B) for k in range(P)
            if s != b and (b, pairs[k][1]) in demanded and _cacheable(s, pairs[k][0])}
    ev_o = {(b, v): lp.add_var(f"o[{b},{v}]") for (b, v) in demanded}

    def events_for(b: int, v: int):
        """(kind, key, var) of every event able to serve video v at cell b."""
        out = []
        if (b, v) in ev_x:
            out.append(("x", (b, v), ev_x[(b, v)]))
        for k in state.pairs_with_low(v):
            if (b, k) in ev_y:
                out.append(("y", (b, k), ev_y[(b, k)]))
        for s in range(B):
            if s == b:
                continue
            if (s, b, v) in ev_z:
                out.append(("z", (s, b, v), ev_z[(s, b, v)]))
            for k in state.pairs_with_low(v):
                if (s, b, k) in ev_t:
                    out.append(("t", (s, b, k), ev_t[(s, b, k)]))
                if (s, b, k) in ev_w:
                    out.append(("w", (s, b, k), ev_w[(s, b, k)]))
        if (b, v) in ev_o:
            out.append(("o", (b, v), ev_o[(b, v)]))
        return out

    # association / subcarrier structure --------------------------------------
    for u in range(U):
        mi = slice_of[u]
        sense = "=" if (mi >= 0 and state.slices[mi].min_rate > 0) else "<"
        lp.add_row([(theta[(b, u)], 1.0) for b in range(B)], sense, 1.0, f"assoc[{u}]")
    for (b, u, n), j in tau.items():
        lp.add_row([(j, 1.0), (theta[(b, u)], -1.0)], "<", 0.0, f"tau_le_theta[{b},{u},{n}]")
    for b in range(B):
        for n in range(N):
            lp.add_row([(tau[(b, u, n)], 1.0) for u in range(U)], "<",
                       float(state.rrs[b].noma_user_cap), f"noma[{b},{n}]")

    # QoS under the fixed powers
    for mi, sl in enumerate(state.slices):
        if sl.min_rate <= 0:
            continue
        for u in sl.users:
            lp.add_row([(tau[(b, u, n)], cbar[b, u, n]) for b in range(B) for n in range(N)],
                       ">", sl.min_rate, f"qos[{u}]")

    # power cap with tau re-deciding which entries count
    for b in range(B):
        lp.add_row([(tau[(b, u, n)], alloc.power[b, u, n]) for u in range(U) for n in range(N)
                    if alloc.power[b, u, n] > 0],
                   "<", state.rrs[b].max_power, f"power[{b}]")

    # SIC at fixed powers: conflicting pairs may not share the subcarrier
    for (b, n, u, w) in sic_conflicts(state, alloc.power, channel_data):
        lp.add_row([(tau[(b, u, n)], 1.0), (tau[(b, w, n)], 1.0)], "<", 1.0,
                   f"sic[{b},{n},{u},{w}]")

    # cache prerequisites and size --------------------------------------------
    def rho_coeff(b: int, v: int):
        return (rho[(b, v)], 1.0) if rho_const is None else None

    for (b, v), j in ev_x.items():
        rc = rho_coeff(b, v)
        if rc is not None:
            lp.add_row([(j, 1.0), (rc[0], -1.0)], "<", 0.0, f"x_prereq[{b},{v}]")
    for (b, k), j in ev_y.items():
        rc = rho_coeff(b, pairs[k][0])
        if rc is not None:
            lp.add_row([(j, 1.0), (rc[0], -1.0)], "<", 0.0, f"y_prereq[{b},{k}]")
    for (s, b, v), j in ev_z.items():
        rc = rho_coeff(s, v)
        if rc is not None:
            lp.add_row([(j, 1.0), (rc[0], -1.0)], "<", 0.0, f"z_prereq[{s},{b},{v}]")
    for name, evs in (("t", ev_t), ("w", ev_w)):
        for (s, b, k), j in evs.items():
            rc = rho_coeff(s, pairs[k][0])
            if rc is not None:
                lp.add_row([(j, 1.0), (rc[0], -1.0)], "<", 0.0, f"{name}_prereq[{s},{b},{k}]")
    if rho_const is None:
        for b in range(B):
            lp.add_row([(rho[(b, v)], sizes[v]) for v in range(VL)], "<",
                       state.rrs[b].max_storage, f"cache[{b}]")

    # capacity of processors and links under the fixed allocation -------------
    for b in range(B):
        coeffs = [(j, alloc.processing[b, k]) for (bb, k), j in ev_y.items() if bb == b]
        coeffs += [(j, alloc.processing[s, k]) for (s, d, k), j in ev_t.items() if s == b]
        coeffs += [(j, alloc.processing[d, k]) for (s, d, k), j in ev_w.items() if d == b]
        lp.add_row(coeffs, "<", state.rrs[b].max_processing, f"proc[{b}]")
        lp.add_row([(j, alloc.backhaul_rate[bb, v]) for (bb, v), j in ev_o.items() if bb == b],
                   "<", float(state.links.backhaul_cap[b]), f"bh[{b}]")
    for s in range(B):
        for b in range(B):
            if s == b:
                continue
            coeffs = [(j, alloc.fronthaul_rate[s, b, v])
                      for (ss, bb, v), j in ev_z.items() if ss == s and bb == b]
            coeffs += [(j, alloc.fronthaul_rate[s, b, pairs[k][1]])
                       for (ss, bb, k), j in ev_t.items() if ss == s and bb == b]
            coeffs += [(j, alloc.fronthaul_rate[s, b, pairs[k][0]])
                       for (ss, bb, k), j in ev_w.items() if ss == s and bb == b]
            lp.add_row(coeffs, "<", float(state.links.fronthaul_cap[s, b]), f"fh[{s},{b}]")

    # transcode-vs-fronthaul couplings, constant at fixed allocation
    for (s, b, k), j in ev_t.items():
        hi, lo = pairs[k]
        coeff = alloc.fronthaul_rate[s, b, lo] / sizes[lo] - alloc.processing[s, k] / workload[k]
        if coeff > ROW_TOL:
            lp.add_row([(j, 1.0)], "<", 0.0, f"t_chain[{s},{b},{k}]")
    for (s, b, k), j in ev_w.items():
        hi, lo = pairs[k]
        coeff = alloc.processing[b, k] / workload[k] - alloc.fronthaul_rate[s, b, hi] / sizes[hi]
        if coeff > ROW_TOL:
            lp.add_row([(j, 1.0)], "<", 0.0, f"w_chain[{s},{b},{k}]")

    # all-cases coverage -------------------------------------------------------
    if placement:
        vart = {b: lp.add_var(f"cell_active[{b}]") for b in range(B)}
        for b in range(B):
            for u in range(U):
                lp.add_row([(vart[b], 1.0), (theta[(b, u)], -1.0)], ">", 0.0,
                           f"cell_active_ge[{b},{u}]")
            lp.add_row([(vart[b], 1.0)] + [(theta[(b, u)], -1.0) for u in range(U)], "<", 0.0,
                       f"cell_active_le[{b}]")
            for v in range(VL):
                lp.add_row([(j, 1.0) for _, _, j in events_for(b, v)] + [(vart[b], -1.0)],
                           "=", 0.0, f"cover[{b},{v}]")
    else:
        vart = {}
        for (b, v) in demanded:
            req = profile.requesters(v)
            jv = lp.add_var(f"video_active[{b},{v}]")
            vart[(b, v)] = jv
            for u in req:
                lp.add_row([(jv, 1.0), (theta[(b, int(u))], -1.0)], ">", 0.0,
                           f"video_active_ge[{b},{v},{u}]")
            lp.add_row([(jv, 1.0)] + [(theta[(b, int(u))], -1.0) for u in req], "<", 0.0,
                       f"video_active_le[{b},{v}]")
            lp.add_row([(j, 1.0) for _, _, j in events_for(b, v)] + [(jv, -1.0)],
                       "=", 0.0, f"cover[{b},{v}]")

    # subcarrier pricing: once per (cell, subcarrier, slice) -------------------
    for b in range(B):
        price = state.subcarrier_bandwidth * state.rrs[b].price_subcarrier
        for n in range(N):
            for mi, sl in enumerate(state.slices):
                if not sl.users:
                    continue
                jn = lp.add_var(f"sub_used[{b},{n},{mi}]", obj=-price)
                for u in sl.users:
                    lp.add_row([(jn, 1.0), (tau[(b, u, n)], -1.0)], ">", 0.0,
                               f"sub_used_ge[{b},{n},{mi},{u}]")
                lp.add_row([(jn, 1.0)] + [(tau[(b, u, n)], -1.0) for u in sl.users], "<", 0.0,
                           f"sub_used_le[{b},{n},{mi}]")

    # provisioning multiplicity and its event products -------------------------
    def add_cost_products(mult_var: int, b: int, v: int, weight: float, tag: str):
        for kind, key, j in events_for(b, v):
            c = cost[kind][key]
            if weight * c == 0.0:
                continue
            linearize_product(lp, j, mult_var, f"pay_{tag}_{kind}{list(key)}",
                              obj=-weight * c)

    if objective == "ld":
        for b in range(B):
            for mi, sl in enumerate(state.slices):
                if not sl.users:
                    continue
                jm = lp.add_var(f"slice_cell[{b},{mi}]")
                for u in sl.users:
                    lp.add_row([(jm, 1.0), (theta[(b, u)], -1.0)], ">", 0.0,
                               f"slice_cell_ge[{b},{mi},{u}]")
                lp.add_row([(jm, 1.0)] + [(theta[(b, u)], -1.0) for u in sl.users], "<", 0.0,
                           f"slice_cell_le[{b},{mi}]")
                for v in range(VL):
                    add_cost_products(jm, b, v, pop[v], f"{b}.{mi}.{v}")
    elif objective == "hd":
        for b in range(B):
            for u in range(U):
                for v in range(VL):
                    add_cost_products(theta[(b, u)], b, v, pop[v], f"{b}.{u}.{v}")
    else:
        for (b, v) in demanded:
            for mi, sl in enumerate(state.slices):
                req = [u for u in sl.users if profile.request[u, v]]
                if not req:
                    continue
                jm = lp.add_var(f"slice_video[{b},{v},{mi}]")
                for u in req:
                    lp.add_row([(jm, 1.0), (theta[(b, u)], -1.0)], ">", 0.0,
                               f"slice_video_ge[{b},{v},{mi},{u}]")
                lp.add_row([(jm, 1.0)] + [(theta[(b, u)], -1.0) for u in req], "<", 0.0,
                           f"slice_video_le[{b},{v},{mi}]")
                add_cost_products(jm, b, v, 1.0, f"{b}.{v}.{mi}")

    # per-subcarrier delay rows with event*tau products -------------------------
    def users_for_delay(v: int) -> Sequence[int]:
        if placement:
            return range(U)
        return [int(u) for u in profile.requesters(v)]

    def add_delay_rows(kind: str, key: tuple, j: int, b: int, v: int,
                       rhs_coeff: float):
        """sum_n breve * cbar <= rhs_coeff * event, for every relevant user."""
        for u in users_for_delay(v):
            coeffs = [(j, rhs_coeff)]
            any_rate = False
            for n in range(N):
                if cbar[b, u, n] <= 0:
                    continue
                any_rate = True
                br = linearize_product(lp, j, tau[(b, u, n)],
                                       f"br_{kind}{list(key)}u{u}n{n}")
                coeffs.append((br, -cbar[b, u, n]))
            if any_rate:
                lp.add_row(coeffs, ">", 0.0, f"delay_{kind}{list(key)}u{u}")

    for (b, k), j in ev_y.items():
        hi, lo = pairs[k]
        add_delay_rows("y", (b, k), j, b, lo,
                       sizes[lo] * alloc.processing[b, k] / workload[k])
    for (s, b, v), j in ev_z.items():
        add_delay_rows("z", (s, b, v), j, b, v, alloc.fronthaul_rate[s, b, v])
    for (s, b, k), j in ev_t.items():
        hi, lo = pairs[k]
        add_delay_rows("t", (s, b, k), j, b, lo, alloc.fronthaul_rate[s, b, lo])
    for (s, b, k), j in ev_w.items():
        hi, lo = pairs[k]
        add_delay_rows("w", (s, b, k), j, b, lo,
                       sizes[lo] * alloc.processing[b, k] / workload[k])
    for (b, v), j in ev_o.items():
        add_delay_rows("o", (b, v), j, b, v, alloc.backhaul_rate[b, v])

    lp.meta = {
        "objective": objective,
        "theta": theta, "tau": tau, "rho": rho, "rho_const": rho_const,
        "x": ev_x, "y": ev_y, "z": ev_z, "t": ev_t, "w": ev_w, "o": ev_o,
    }
    return lp


def decode_step2(state: NetworkState, lp: LinearProgram, x: np.ndarray) -> SchedulingDecision:
    """Read a Step-2 solution vector back into a SchedulingDecision."""
    m = lp.meta
    dec = SchedulingDecision.zeros(state)
    for (b, u), j in m["theta"].items():
        dec.assoc[b, u] = round(x[j])
    for (b, u, n), j in m["tau"].items():
        dec.subcarrier[b, u, n] = round(x[j])
    if m["rho_const"] is not None:
        dec.cache[:] = np.asarray(m["rho_const"], dtype=np.int8)
    else:
        for (b, v), j in m["rho"].items():
            dec.cache[b, v] = round(x[j])
    for (b, v), j in m["x"].items():
        dec.x[b, v] = round(x[j])
    for (b, k), j in m["y"].items():
        dec.y[b, k] = round(x[j])
    for (s, b, v), j in m["z"].items():
        dec.z[s, b, v] = round(x[j])
    for (s, b, k), j in m["t"].items():
        dec.t[s, b, k] = round(x[j])
    for (s, b, k), j in m["w"].items():
        dec.w[s, b, k] = round(x[j])
    for (b, v), j in m["o"].items():
        dec.o[b, v] = round(x[j])
    return dec
