"""Continuous resource step: concave/convex rate approximations and the
successive-approximation power solver.

Each per-subcarrier rate is the difference of two concave functions of the
power vector,

    rate = f - g,   f = tau*Ws*log2(den + p*h),   g = tau*Ws*log2(den),

with ``den`` the interference-plus-noise seen by the user.  Linearizing g at
an anchor gives a concave under-estimator of the rate; linearizing f gives a
convex over-estimator.  Both coincide with the true rate at the anchor, so
iterating the convexified subproblem from the previous solution produces a
monotone sequence of feasible allocations.

Processing and link rates never earn reward, only cost, so for fixed powers
their optimum is the smallest value the delay chains allow.  The solver
eliminates them through that closed form and optimizes the power vector
alone with an augmented Lagrangian / projected-gradient scheme; power caps
are kept exact by projection onto the capped simplex.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import channel as ch
from .model import NetworkState
from .scheduling import RequestProfile, ResourceAllocation, SchedulingDecision

LN2 = math.log(2.0)


class InfeasibleStepError(RuntimeError):
    """The continuous subproblem admits no feasible allocation."""

    def __init__(self, message: str, binding: list[str]):
        super().__init__(message)
        self.binding = binding


@dataclass
class SolverSettings:
    """Tolerances and iteration caps for the whole solver stack."""

    main_tol: float = 1e-3          # alternation stop on objective change
    main_iters: int = 10
    sca_tol: float = 1e-5           # relative max-power change between iterates
    sca_iters: int = 50
    al_outer_iters: int = 60
    al_inner_iters: int = 60
    al_kkt_tol: float = 1e-6
    al_penalty0: float = 10.0
    constraint_margin: float = 1e-6
    bnb_gap: float = 1e-6
    bnb_node_limit: int = 200_000
    cdi_samples: int = 50

    def __post_init__(self):
        if self.main_tol <= 0 or self.sca_tol <= 0 or self.al_kkt_tol <= 0:
            raise ValueError("tolerances must be positive")
        if self.main_iters < 1 or self.sca_iters < 1:
            raise ValueError("iteration caps must be >= 1")


# ---------------------------------------------------------------------------
# the difference-of-concave split and its gradients
# ---------------------------------------------------------------------------

def _as_samples(channel_data) -> list[np.ndarray]:
    if isinstance(channel_data, ch.ChannelData):
        return [s.gains for s in channel_data.samples]
    return [channel_data.gains]


def _weight_matrices(state: NetworkState, gains: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """(N, BU, BU) interference weights; Wf adds the own-signal diagonal.

    Row (b, u) of Wg holds the coefficient of every transmit power in user
    u's interference at cell b: same-cell entries carry the user's own gain
    for decode-later ('stronger') interferers and zero otherwise; other-cell
    entries carry the cross gain for every foreign user's power.
    """
    B, U, N = gains.shape
    BU = B * U
    wg = np.zeros((N, BU, BU))
    for n in range(N):
        g = gains[:, :, n]
        for b in range(B):
            s = ch.stronger_matrix(g[b])            # [v, u]: v interferes with u
            rows = slice(b * U, (b + 1) * U)
            wg[n, rows, rows] = s.T * g[b][:, None]
            for i in range(B):
                if i == b:
                    continue
                block = np.tile(g[i][:, None], (1, U))   # victim u hears gain g[i, u]
                np.fill_diagonal(block, 0.0)              # same user index excluded
                wg[n, rows, i * U:(i + 1) * U] = block
    wf = wg.copy()
    diag = gains.transpose(2, 0, 1).reshape(N, BU)
    wf[:, np.arange(BU), np.arange(BU)] += diag
    return wg, wf


def dc_split(state: NetworkState, p: np.ndarray, tau: np.ndarray,
             realization: ch.ChannelRealization, b: int, u: int, n: int) -> tuple[float, float]:
    """The two concave pieces whose difference is the instantaneous rate."""
    intra, inter = ch.interference(state, p, realization.gains)
    den = intra[b, u, n] + inter[b, u, n] + state.noise_power()
    ws = state.subcarrier_bandwidth
    f = tau[b, u, n] * ws * math.log2(den + p[b, u, n] * realization.gains[b, u, n])
    g = tau[b, u, n] * ws * math.log2(den)
    return f, g


def _grad(state: NetworkState, p: np.ndarray, tau: np.ndarray, gains: np.ndarray,
          which: str) -> np.ndarray:
    B, U, N = gains.shape
    BU = B * U
    wg, wf = _weight_matrices(state, gains)
    pn = p.transpose(2, 0, 1).reshape(N, BU)
    dg = np.einsum("nij,nj->ni", wg, pn) + state.noise_power()
    if which == "f":
        den = dg + pn * gains.transpose(2, 0, 1).reshape(N, BU)
        w = wf
    else:
        den = dg
        w = wg
    factor = tau.transpose(2, 0, 1).reshape(N, BU) * state.subcarrier_bandwidth / (LN2 * den)
    out = factor[:, :, None] * w                           # (N, BU, BU)
    return out.reshape(N, B, U, B, U).transpose(1, 2, 0, 3, 4)


def grad_g(state: NetworkState, p: np.ndarray, tau: np.ndarray,
           realization: ch.ChannelRealization) -> np.ndarray:
    """(B, U, N, B, U): d g[b,u,n] / d p[i,u',n]; zero across subcarriers."""
    return _grad(state, p, tau, realization.gains, "g")


def grad_f(state: NetworkState, p: np.ndarray, tau: np.ndarray,
           realization: ch.ChannelRealization) -> np.ndarray:
    """(B, U, N, B, U): d f[b,u,n] / d p[i,u',n]."""
    return _grad(state, p, tau, realization.gains, "f")


@dataclass
class DcApproximation:
    """Anchor data of one convexification round.

    Per-sample values of both concave pieces at the anchor plus sample-mean
    anchor gradients; at the anchor both rate approximations reproduce the
    true ergodic rate exactly.
    """

    anchor_power: np.ndarray        # (B, U, N)
    f_val: np.ndarray               # (S, B, U, N)
    g_val: np.ndarray               # (S, B, U, N)
    grad_f: np.ndarray              # (B, U, N, B, U), sample mean
    grad_g: np.ndarray              # (B, U, N, B, U), sample mean


def make_dc_approximation(state: NetworkState, tau: np.ndarray, channel_data,
                          anchor_power: np.ndarray) -> DcApproximation:
    samples = _as_samples(channel_data)
    sys = _RateSystem(state, tau, channel_data)
    f_val, g_val = sys.piece_values(anchor_power)
    gf = np.zeros((state.n_rrs, state.n_users, state.n_subcarriers,
                   state.n_rrs, state.n_users))
    gg = np.zeros_like(gf)
    for gains in samples:
        gf += _grad(state, anchor_power, tau, gains, "f")
        gg += _grad(state, anchor_power, tau, gains, "g")
    return DcApproximation(anchor_power.copy(), f_val, g_val,
                           gf / len(samples), gg / len(samples))


def approx_rates(state: NetworkState, tau: np.ndarray, channel_data,
                 approx: DcApproximation, p: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """(B, U) concave under- and convex over-estimates of the ergodic rate at p."""
    sys = _RateSystem(state, tau, channel_data)
    f_now, g_now = sys.piece_values(p)
    dp = p - approx.anchor_power
    lin_g = np.einsum("bunij,ijn->bun", approx.grad_g, dp)
    lin_f = np.einsum("bunij,ijn->bun", approx.grad_f, dp)
    r_hat = (f_now.mean(axis=0) - approx.g_val.mean(axis=0) - lin_g).sum(axis=2)
    r_tilde = (approx.f_val.mean(axis=0) + lin_f - g_now.mean(axis=0)).sum(axis=2)
    return r_hat, r_tilde


# ---------------------------------------------------------------------------
# vectorized rate system
# ---------------------------------------------------------------------------

class _RateSystem:
    """Stacked per-sample interference weights for fast rate/gradient evaluation."""

    def __init__(self, state: NetworkState, tau: np.ndarray, channel_data):
        self.state = state
        self.samples = _as_samples(channel_data)
        self.S = len(self.samples)
        B, U, N = state.n_rrs, state.n_users, state.n_subcarriers
        self.B, self.U, self.N = B, U, N
        self.BU = B * U
        self.sigma = state.noise_power()
        self.ws = state.subcarrier_bandwidth
        self.tau_n = tau.transpose(2, 0, 1).reshape(N, self.BU).astype(float)
        self.wg = np.zeros((self.S, N, self.BU, self.BU))
        self.wf = np.zeros_like(self.wg)
        self.hdiag = np.zeros((self.S, N, self.BU))
        for s, gains in enumerate(self.samples):
            wg, wf = _weight_matrices(state, gains)
            self.wg[s], self.wf[s] = wg, wf
            self.hdiag[s] = gains.transpose(2, 0, 1).reshape(N, self.BU)

    def _pn(self, p: np.ndarray) -> np.ndarray:
        return p.transpose(2, 0, 1).reshape(self.N, self.BU)

    def denominators(self, p: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        pn = self._pn(p)
        dg = np.einsum("snij,nj->sni", self.wg, pn) + self.sigma
        df = dg + self.hdiag * pn[None, :, :]
        return dg, df

    def piece_values(self, p: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Per-sample f and g, each (S, B, U, N)."""
        dg, df = self.denominators(p)
        f = self.tau_n[None] * self.ws * np.log2(df)
        g = self.tau_n[None] * self.ws * np.log2(dg)
        return (f.reshape(self.S, self.N, self.B, self.U).transpose(0, 2, 3, 1),
                g.reshape(self.S, self.N, self.B, self.U).transpose(0, 2, 3, 1))

    def ergodic_rates(self, p: np.ndarray) -> np.ndarray:
        """(B, U) mean access rates; matches the channel-module definition."""
        f, g = self.piece_values(p)
        return (f - g).mean(axis=0).sum(axis=2)

    def weighted_gradient(self, p: np.ndarray, w_f: np.ndarray, w_g: np.ndarray) -> np.ndarray:
        """(B, U, N) gradient of sum_{b,u} [w_f*E f(p) + w_g*E g(p)] over p.

        Weights are per rate row (B, U), broadcast over subcarriers.
        """
        dg, df = self.denominators(p)
        out = np.zeros((self.N, self.BU))
        if np.any(w_f):
            wrow = (w_f.reshape(self.BU)[None, None, :] * self.tau_n[None]) \
                * self.ws / (LN2 * df)
            out += np.einsum("sni,snij->nj", wrow, self.wf)
        if np.any(w_g):
            wrow = (w_g.reshape(self.BU)[None, None, :] * self.tau_n[None]) \
                * self.ws / (LN2 * dg)
            out += np.einsum("sni,snij->nj", wrow, self.wg)
        return (out / self.S).reshape(self.N, self.B, self.U).transpose(1, 2, 0)

    def anchor_approximation(self, anchor: np.ndarray) -> "DcApproximation":
        """DcApproximation at ``anchor`` without rebuilding the weight stack."""
        f_val, g_val = self.piece_values(anchor)
        dg, df = self.denominators(anchor)
        fac = self.tau_n[None] * self.ws / LN2
        gf = np.einsum("sni,snij->nij", fac / df, self.wf) / self.S
        gg = np.einsum("sni,snij->nij", fac / dg, self.wg) / self.S
        shape = (self.N, self.B, self.U, self.B, self.U)
        gf = gf.reshape(shape).transpose(1, 2, 0, 3, 4)
        gg = gg.reshape(shape).transpose(1, 2, 0, 3, 4)
        return DcApproximation(anchor.copy(), f_val, g_val, gf, gg)


# ---------------------------------------------------------------------------
# minimal processing/link allocation for given access rates
# ---------------------------------------------------------------------------

def minimal_continuous(
    state: NetworkState,
    decision: SchedulingDecision,
    rates: np.ndarray,
    profile: Optional[RequestProfile],
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Smallest (processing, backhaul, fronthaul) satisfying every delay chain.

    ``rates`` is the (B, U) access-rate table the chains must keep up with;
    with a request profile only each video's requesters constrain it.
    Inactive events keep zero allocations.
    """
    B, P, VL = state.n_rrs, state.n_pairs, state.n_videos
    pairs = state.transcoding.pairs
    sizes = state.video_sizes
    workload = state.transcoding.task_bits * state.transcoding.cycles_per_bit

    def peak(b: int, v: int) -> float:
        users = range(state.n_users) if profile is None else profile.requesters(v)
        return max((rates[b, int(u)] for u in users), default=0.0)

    phi = np.zeros((B, P))
    r_bh = np.zeros((B, VL))
    r_fh = np.zeros((B, B, VL))

    for b, k in np.argwhere(decision.y == 1):
        _, lo = pairs[k]
        phi[b, k] = max(phi[b, k], workload[k] * peak(b, lo) / sizes[lo])
    for s, b, v in np.argwhere(decision.z == 1):
        r_fh[s, b, v] = max(r_fh[s, b, v], peak(b, v))
    for s, b, k in np.argwhere(decision.t == 1):
        _, lo = pairs[k]
        r_fh[s, b, lo] = max(r_fh[s, b, lo], peak(b, lo))
    for s, b, k in np.argwhere(decision.w == 1):
        _, lo = pairs[k]
        phi[b, k] = max(phi[b, k], workload[k] * peak(b, lo) / sizes[lo])
    for b, v in np.argwhere(decision.o == 1):
        r_bh[b, v] = max(r_bh[b, v], peak(b, v))

    # Chained floors: trans-then-send needs the source processor to keep up
    # with the adopted fronthaul rate; send-then-transcode needs the
    # high-variant fronthaul to keep up with the local processor.  A raise on
    # one resource can tighten another event sharing it, so iterate.
    for _ in range(4 * (B + P) + 4):
        changed = False
        for s, b, k in np.argwhere(decision.t == 1):
            _, lo = pairs[k]
            need = workload[k] * r_fh[s, b, lo] / sizes[lo]
            if need > phi[s, k] * (1 + 1e-15):
                phi[s, k] = need
                changed = True
        for s, b, k in np.argwhere(decision.w == 1):
            hi, _ = pairs[k]
            need = sizes[hi] * phi[b, k] / workload[k]
            if need > r_fh[s, b, hi] * (1 + 1e-15):
                r_fh[s, b, hi] = need
                changed = True
        if not changed:
            break
    return phi, r_bh, r_fh


# ---------------------------------------------------------------------------
# objective pieces under fixed binaries
# ---------------------------------------------------------------------------

def provisioning_weights(state: NetworkState, decision: SchedulingDecision,
                         flavor: str, profile: Optional[RequestProfile]) -> np.ndarray:
    """(B, VL) multiplier applied to each (cell, video) provisioning cost."""
    B, VL = state.n_rrs, state.n_videos
    out = np.zeros((B, VL))
    pop = state.popularity.popularity
    for b in range(B):
        for sl in state.slices:
            members = np.asarray(sl.users, dtype=int)
            assoc = int(decision.assoc[b, members].sum()) if len(members) else 0
            if flavor == "ld":
                out[b, :] += min(assoc, 1) * pop
            elif flavor == "hd":
                out[b, :] += assoc * pop
            elif flavor == "delivery":
                for v in range(VL):
                    served = int((profile.request[members, v] * decision.assoc[b, members]).sum()) \
                        if len(members) else 0
                    out[b, v] += min(served, 1)
            else:
                raise ValueError(f"unknown flavor {flavor!r}")
    return out


def _alloc_cost(state: NetworkState, decision: SchedulingDecision, weights: np.ndarray,
                phi: np.ndarray, r_bh: np.ndarray, r_fh: np.ndarray) -> float:
    """Weighted allocation-dependent provisioning cost (storage rents excluded)."""
    pairs = state.transcoding.pairs
    total = 0.0
    for b, k in np.argwhere(decision.y == 1):
        _, lo = pairs[k]
        total += weights[b, lo] * phi[b, k] * state.rrs[b].price_processing
    for s, b, v in np.argwhere(decision.z == 1):
        total += weights[b, v] * r_fh[s, b, v] * state.links.price_fronthaul
    for s, b, k in np.argwhere(decision.t == 1):
        _, lo = pairs[k]
        total += weights[b, lo] * (phi[s, k] * state.rrs[s].price_processing
                                   + r_fh[s, b, lo] * state.links.price_fronthaul)
    for s, b, k in np.argwhere(decision.w == 1):
        hi, lo = pairs[k]
        total += weights[b, lo] * (r_fh[s, b, hi] * state.links.price_fronthaul
                                   + phi[b, k] * state.rrs[b].price_processing)
    for b, v in np.argwhere(decision.o == 1):
        total += weights[b, v] * r_bh[b, v] * state.links.price_backhaul
    return float(total)


def _storage_cost(state: NetworkState, decision: SchedulingDecision,
                  weights: np.ndarray) -> float:
    """Weighted allocation-independent provisioning cost (cache rents)."""
    pairs = state.transcoding.pairs
    sizes = state.video_sizes
    total = 0.0
    for b, v in np.argwhere(decision.x == 1):
        total += weights[b, v] * sizes[v] * state.rrs[b].price_cache
    for b, k in np.argwhere(decision.y == 1):
        hi, lo = pairs[k]
        total += weights[b, lo] * sizes[hi] * state.rrs[b].price_cache
    for s, b, v in np.argwhere(decision.z == 1):
        total += weights[b, v] * sizes[v] * state.rrs[s].price_cache
    for s, b, k in np.argwhere((decision.t == 1) | (decision.w == 1)):
        hi, lo = pairs[k]
        total += weights[b, lo] * sizes[hi] * state.rrs[s].price_cache
    return float(total)


def _subcarrier_cost(state: NetworkState, decision: SchedulingDecision) -> float:
    total = 0.0
    for b, r in enumerate(state.rrs):
        for sl in state.slices:
            members = np.asarray(sl.users, dtype=int)
            if len(members) == 0:
                continue
            shared = decision.subcarrier[b][members].max(axis=0)
            total += shared.sum() * state.subcarrier_bandwidth * r.price_subcarrier
    return float(total)


def _rate_price(state: NetworkState, decision: SchedulingDecision,
                weights: np.ndarray) -> np.ndarray:
    """(B, VL) marginal provisioning cost per extra bit/s of peak access rate.

    Derived from the closed-form floors: a one-unit rise in the peak rate of
    video v at cell b raises each active event's processing/link floors by a
    fixed ratio.
    """
    pairs = state.transcoding.pairs
    sizes = state.video_sizes
    workload = state.transcoding.task_bits * state.transcoding.cycles_per_bit
    price = np.zeros_like(weights)
    for b, k in np.argwhere(decision.y == 1):
        _, lo = pairs[k]
        price[b, lo] += weights[b, lo] * workload[k] / sizes[lo] * state.rrs[b].price_processing
    for s, b, v in np.argwhere(decision.z == 1):
        price[b, v] += weights[b, v] * state.links.price_fronthaul
    for s, b, k in np.argwhere(decision.t == 1):
        _, lo = pairs[k]
        price[b, lo] += weights[b, lo] * (state.links.price_fronthaul
                                          + workload[k] / sizes[lo] * state.rrs[s].price_processing)
    for s, b, k in np.argwhere(decision.w == 1):
        hi, lo = pairs[k]
        price[b, lo] += weights[b, lo] * (workload[k] / sizes[lo] * state.rrs[b].price_processing
                                          + sizes[hi] / sizes[lo] * state.links.price_fronthaul)
    for b, v in np.argwhere(decision.o == 1):
        price[b, v] += weights[b, v] * state.links.price_backhaul
    return price


# ---------------------------------------------------------------------------
# decode-order rows, affine in the power vector
# ---------------------------------------------------------------------------

class _SicRows:
    """rhs(p) - lhs(p) <= 0 rows of the averaged decode-order condition.

    Cross-multiplying the two sides makes every same-cell term cancel, so
    only other-cell powers and the noise asymmetry remain; rows are
    normalized to unit coefficient scale and built only for co-assigned
    pairs, ordered by mean gain.
    """

    def __init__(self, state: NetworkState, tau: np.ndarray, channel_data):
        samples = _as_samples(channel_data)
        mean_gains = np.mean(samples, axis=0)
        B, U, N = state.n_rrs, state.n_users, state.n_subcarriers
        sigma = state.noise_power()
        self.coefs: list[np.ndarray] = []
        self.consts: list[float] = []
        self.names: list[str] = []
        for b in range(B):
            for n in range(N):
                active = np.flatnonzero(tau[b, :, n] > 0)
                if active.size < 2:
                    continue
                order = ch.stronger_matrix(mean_gains[b, :, n])
                for u in active:
                    for w in active:
                        if not order[u, w]:
                            continue
                        coef = np.zeros((B, U, N))
                        const = 0.0
                        for g in samples:
                            const += sigma * (g[b, w, n] - g[b, u, n])
                            for i in range(B):
                                if i == b:
                                    continue
                                for v in range(U):
                                    if v != u:
                                        coef[i, v, n] += g[b, w, n] * g[i, u, n]
                                    if v != w:
                                        coef[i, v, n] -= g[b, u, n] * g[i, w, n]
                        coef /= len(samples)
                        const /= len(samples)
                        scale = max(np.abs(coef).max(), abs(const), 1e-300)
                        self.coefs.append(coef / scale)
                        self.consts.append(const / scale)
                        self.names.append(f"sic[{b},{n},{u},{w}]")

    def values(self, p: np.ndarray, margin: float = 0.0) -> np.ndarray:
        if not self.coefs:
            return np.zeros(0)
        return np.array([float((c * p).sum()) + k + margin
                         for c, k in zip(self.coefs, self.consts)])

    def weighted_coef_sum(self, weights: np.ndarray) -> np.ndarray:
        out = np.zeros_like(self.coefs[0])
        for wgt, c in zip(weights, self.coefs):
            if wgt != 0.0:
                out += wgt * c
        return out


def _project_power(state: NetworkState, tau: np.ndarray, p: np.ndarray) -> np.ndarray:
    """Project onto {p >= 0 on the active set, per-cell sums <= cap}."""
    out = np.maximum(p, 0.0) * tau
    for b in range(state.n_rrs):
        cap = state.rrs[b].max_power
        active = tau[b] > 0
        total = out[b][active].sum()
        if total <= cap or total == 0.0:
            continue
        vals = out[b][active]
        lo_t, hi_t = 0.0, vals.max()
        for _ in range(100):
            mid = 0.5 * (lo_t + hi_t)
            if np.maximum(vals - mid, 0.0).sum() > cap:
                lo_t = mid
            else:
                hi_t = mid
        shifted = np.maximum(vals - hi_t, 0.0)
        buf = out[b]
        buf[active] = shifted
        out[b] = buf
    return out


# ---------------------------------------------------------------------------
# the step-1 solver
# ---------------------------------------------------------------------------

@dataclass
class Step1Result:
    alloc: ResourceAllocation
    objective: float
    sca_trace: list[float]
    iterations: int


def solve_step1(
    state: NetworkState,
    decision: SchedulingDecision,
    channel_data,
    settings: SolverSettings,
    flavor: str = "ld",
    profile: Optional[RequestProfile] = None,
    p_init: Optional[np.ndarray] = None,
) -> Step1Result:
    """Optimize powers, processing and link rates under fixed binaries.

    Maximizes the flavor's revenue by successive convexification of the rate
    terms anchored at the previous iterate; processing/link rates are
    recovered as the cheapest values the delay chains allow, so the returned
    allocation is exactly feasible.  The per-iteration objective never
    decreases.  Raises :class:`InfeasibleStepError` when QoS cannot be met.
    """
    if flavor == "delivery" and profile is None:
        raise ValueError("delivery flavor needs a request profile")
    prof = profile if flavor == "delivery" else None
    tau = decision.subcarrier.astype(float)
    B, U, N = state.n_rrs, state.n_users, state.n_subcarriers
    weights = provisioning_weights(state, decision, flavor, profile)
    fixed_cost = _storage_cost(state, decision, weights) + _subcarrier_cost(state, decision)
    slice_of = state.slice_of_user
    psi = np.zeros((B, U))
    rmin = np.zeros(U)
    for u in range(U):
        if slice_of[u] >= 0:
            psi[:, u] = state.slices[slice_of[u]].reward_rate
            rmin[u] = state.slices[slice_of[u]].min_rate
    alpha_pow = np.array([r.price_power for r in state.rrs])
    qos_users = [u for u in range(U) if rmin[u] > 0
                 and decision.subcarrier[:, u, :].sum() > 0]
    for u in range(U):
        if rmin[u] > 0 and decision.subcarrier[:, u, :].sum() == 0:
            raise InfeasibleStepError(f"QoS user {u} has no subcarrier", [f"qos[{u}]"])

    sys = _RateSystem(state, tau, channel_data)

    def finish(p: np.ndarray):
        rates = sys.ergodic_rates(p)
        phi, r_bh, r_fh = minimal_continuous(state, decision, rates, prof)
        alloc = ResourceAllocation(power=p * tau, processing=phi,
                                   backhaul_rate=r_bh, fronthaul_rate=r_fh)
        value = (float((psi * rates).sum())
                 - float((alloc.power * alpha_pow[:, None, None]).sum())
                 - _alloc_cost(state, decision, weights, phi, r_bh, r_fh)
                 - fixed_cost)
        return alloc, value, rates

    def cap_overshoot(alloc: ResourceAllocation) -> float:
        worst = 0.0
        pairs = state.transcoding.pairs
        for b in range(B):
            count = decision.y[b].astype(float) + decision.t[b].sum(axis=0) \
                + decision.w[:, b].sum(axis=0)
            worst = max(worst, ((count * alloc.processing[b]).sum()
                                - state.rrs[b].max_processing)
                        / max(state.rrs[b].max_processing, 1.0))
            worst = max(worst, ((decision.o[b] * alloc.backhaul_rate[b]).sum()
                                - state.links.backhaul_cap[b])
                        / max(state.links.backhaul_cap[b], 1.0))
        for s in range(B):
            for b in range(B):
                if s == b:
                    continue
                used = float((decision.z[s, b] * alloc.fronthaul_rate[s, b]).sum())
                for k, (hi, lo) in enumerate(pairs):
                    used += decision.t[s, b, k] * alloc.fronthaul_rate[s, b, lo]
                    used += decision.w[s, b, k] * alloc.fronthaul_rate[s, b, hi]
                worst = max(worst, (used - state.links.fronthaul_cap[s, b])
                            / max(state.links.fronthaul_cap[s, b], 1.0))
        return worst

    def to_cap_feasible(p: np.ndarray):
        """Scale powers down until the closed-form floors respect all caps."""
        for _ in range(200):
            alloc, value, rates = finish(p)
            if cap_overshoot(alloc) <= 1e-9:
                return p, alloc, value, rates
            p = p * 0.93
        return None

    if tau.sum() == 0:
        alloc, value, _ = finish(np.zeros((B, U, N)))
        return Step1Result(alloc, value, [value], 0)

    sic = _SicRows(state, tau, channel_data)

    def qos_residual(rates: np.ndarray) -> float:
        if not qos_users:
            return 0.0
        return max((rmin[u] - rates[:, u].sum()) / rmin[u] for u in qos_users)

    def fully_feasible(p: np.ndarray, rates: np.ndarray) -> bool:
        if qos_residual(rates) > 1e-9:
            return False
        return not sic.coefs or float(sic.values(p).max()) <= 1e-12

    def run_sca(p0: np.ndarray):
        packed = to_cap_feasible(p0)
        if packed is None:
            return None, -math.inf, [], ["processing/link caps"]
        p, best_alloc, best_value, rates = packed
        if not fully_feasible(p, rates):
            best_value = -math.inf  # never fall back to an infeasible start
            best_alloc = None
        trace: list[float] = []
        p_prev = p.copy()
        binding: list[str] = []
        for it in range(settings.sca_iters):
            approx = sys.anchor_approximation(p)
            p_new, feas_err, binding = _solve_convex_subproblem(
                state, decision, sys, sic, approx, tau, psi, alpha_pow, weights,
                rmin, qos_users, p, settings, prof)
            if feas_err > 1e-6:
                break
            packed = to_cap_feasible(p_new)
            if packed is None:
                break
            p_new, alloc, value, rates = packed
            if not fully_feasible(p_new, rates):
                break  # capacity backoff disturbed QoS/decode order; keep previous
            if value < best_value - 1e-9 * max(1.0, abs(best_value)):
                break  # safeguard: never adopt a worse iterate
            gain = value - best_value if trace else math.inf
            best_alloc, best_value = alloc, value
            trace.append(value)
            dp = np.abs(p_new - p_prev).max()
            p_prev = p_new.copy()
            p = p_new
            if dp < settings.sca_tol * max(r.max_power for r in state.rrs):
                break
            if gain < 1e-5 * max(1.0, abs(value)):
                break  # objective has stalled
        return best_alloc, best_value, trace, binding

    # two deterministic starts: the uniform split, and one that concentrates
    # each subcarrier's budget on its most valuable user (escapes the
    # interference-heavy stationary point of the shared start)
    starts = []
    uniform = np.zeros((B, U, N))
    for b in range(B):
        k = tau[b].sum()
        if k > 0:
            uniform[b] = tau[b] * (state.rrs[b].max_power / k)
    starts.append(uniform)
    dominant = np.zeros((B, U, N))
    mean_gain = np.mean([g for g in _as_samples(channel_data)], axis=0)
    for b in range(B):
        active_n = [n for n in range(N) if tau[b, :, n].sum() > 0]
        if not active_n:
            continue
        budget = state.rrs[b].max_power / len(active_n)
        for n in active_n:
            users = np.flatnonzero(tau[b, :, n] > 0)
            top = users[np.argmax((psi[b, users] + 1e-12) * mean_gain[b, users, n])]
            for u in users:
                share = 0.9 if u == top else 0.1 / max(len(users) - 1, 1)
                dominant[b, u, n] = budget * share
    if tau.sum() > 0 and not np.allclose(dominant, uniform):
        starts.append(dominant)
    if p_init is not None:
        starts.append(np.asarray(p_init) * tau)

    best = (None, -math.inf, [], ["qos/sic"])
    for p0 in starts:
        got = run_sca(p0)
        if got[1] > best[1]:
            best = got
    best_alloc, best_value, trace, binding = best
    if best_alloc is None:
        raise InfeasibleStepError("no feasible allocation found",
                                  binding or ["qos/sic"])
    if not trace:
        trace = [best_value]
    return Step1Result(best_alloc, best_value, trace, len(trace))


def _solve_convex_subproblem(state, decision, sys: _RateSystem, sic: _SicRows,
                             approx: DcApproximation, tau, psi, alpha_pow, weights,
                             rmin, qos_users, p0, settings: SolverSettings,
                             prof) -> tuple[np.ndarray, float, list[str]]:
    """One convexified subproblem: augmented Lagrangian, projected gradient.

    Returns (power, feasibility residual of the relaxed rows, binding names).
    """
    B, U = sys.B, sys.U
    margin = settings.constraint_margin
    anchor = approx.anchor_power
    g_anchor_mean = approx.g_val.mean(axis=0)
    f_anchor_mean = approx.f_val.mean(axis=0)
    rate_price = _rate_price(state, decision, weights)
    video_users = {}
    for v in range(state.n_videos):
        video_users[v] = list(range(U)) if prof is None \
            else [int(u) for u in prof.requesters(v)]

    def surrogate_parts(p):
        f_now, g_now = sys.piece_values(p)
        dp = p - anchor
        lin_g = np.einsum("bunij,ijn->bun", approx.grad_g, dp)
        lin_f = np.einsum("bunij,ijn->bun", approx.grad_f, dp)
        r_hat = (f_now.mean(axis=0) - g_anchor_mean - lin_g).sum(axis=2)
        r_tilde = (f_anchor_mean + lin_f - g_now.mean(axis=0)).sum(axis=2)
        return r_hat, r_tilde

    def objective_and_grad(p):
        """Negated surrogate revenue and its (sub)gradient."""
        r_hat, r_tilde = surrogate_parts(p)
        reward = float((psi * r_hat).sum())
        power_cost = float((p * tau * alpha_pow[:, None, None]).sum())
        prov = 0.0
        wtil = np.zeros((B, U))
        for b in range(B):
            for v in range(state.n_videos):
                if rate_price[b, v] <= 0.0 or not video_users[v]:
                    continue
                us = video_users[v]
                peak_u = max(us, key=lambda u: r_tilde[b, u])
                prov += rate_price[b, v] * max(r_tilde[b, peak_u], 0.0)
                if r_tilde[b, peak_u] > 0.0:
                    wtil[b, peak_u] += rate_price[b, v]
        val = -(reward - power_cost - prov)
        # d(-reward): -psi * (E grad f(p) - E grad g(anchor))
        grad = -(sys.weighted_gradient(p, psi, np.zeros((B, U)))
                 - np.einsum("bunij,bu->ijn", approx.grad_g, psi))
        grad += tau * alpha_pow[:, None, None]
        if np.any(wtil):
            # d(+prov): wtil * (E grad f(anchor) - E grad g(p))
            grad += (np.einsum("bunij,bu->ijn", approx.grad_f, wtil)
                     - sys.weighted_gradient(p, np.zeros((B, U)), wtil))
        return val, grad, r_hat

    def qos_values(r_hat):
        if not qos_users:
            return np.zeros(0)
        return np.array([(rmin[u] * (1 + margin) - r_hat[:, u].sum()) / rmin[u]
                         for u in qos_users])

    lam_qos = np.zeros(len(qos_users))
    lam_sic = np.zeros(len(sic.coefs))
    mu = settings.al_penalty0
    p = p0.copy()
    pmax = max(r.max_power for r in state.rrs)

    def al_value_grad(p):
        val, grad, r_hat = objective_and_grad(p)
        qv = qos_values(r_hat)
        act_q = np.maximum(0.0, lam_qos + mu * qv)
        if qv.size:
            val += float((act_q ** 2 - lam_qos ** 2).sum()) / (2 * mu)
            for i, u in enumerate(qos_users):
                if act_q[i] > 0:
                    w_f = np.zeros((B, U))
                    w_f[:, u] = 1.0 / rmin[u]
                    gq = -(sys.weighted_gradient(p, w_f, np.zeros((B, U)))
                           - np.einsum("bunij,bu->ijn", approx.grad_g, w_f))
                    grad = grad + act_q[i] * gq
        sv = sic.values(p, margin)
        if sv.size:
            act_s = np.maximum(0.0, lam_sic + mu * sv)
            val += float((act_s ** 2 - lam_sic ** 2).sum()) / (2 * mu)
            if act_s.any():
                grad = grad + sic.weighted_coef_sum(act_s)
        return val, grad

    for outer in range(settings.al_outer_iters):
        val, grad = al_value_grad(p)
        step = 0.1 * pmax / max(np.abs(grad).max(), 1e-12)
        p_old = g_old = None
        slow_steps = 0
        for _ in range(settings.al_inner_iters):
            if p_old is not None:
                dp = (p - p_old).ravel()
                dgr = (grad - g_old).ravel()
                denom = float(dp @ dgr)
                if denom > 1e-18:
                    step = float(dp @ dp) / denom
                step = min(max(step, 1e-9 * pmax), 1e3 * pmax)
            cand = _project_power(state, tau, p - step * grad)
            cval, cgrad = al_value_grad(cand)
            tries = 0
            while cval > val - 1e-14 * max(1.0, abs(val)) and tries < 30:
                step *= 0.5
                cand = _project_power(state, tau, p - step * grad)
                cval, cgrad = al_value_grad(cand)
                tries += 1
            if tries >= 30 and cval >= val:
                break
            move = np.abs(cand - p).max()
            gain = val - cval
            p_old, g_old = p, grad
            p, val, grad = cand, cval, cgrad
            if move < 1e-8 * pmax:
                break
            slow_steps = slow_steps + 1 if gain < 1e-7 * max(1.0, abs(val)) else 0
            if slow_steps >= 2:
                break
        _, _, r_hat = objective_and_grad(p)
        qv = np.maximum(0.0, qos_values(r_hat))
        sv = np.maximum(0.0, sic.values(p, margin))
        worst = max(qv.max() if qv.size else 0.0, sv.max() if sv.size else 0.0)
        if worst <= 1e-10:
            break
        lam_qos = np.maximum(0.0, lam_qos + mu * qos_values(r_hat))
        lam_sic = np.maximum(0.0, lam_sic + mu * sic.values(p, margin))
        mu = min(mu * 4.0, 1e12)

    binding = []
    _, _, r_hat = objective_and_grad(p)
    qv = qos_values(r_hat)
    for i, u in enumerate(qos_users):
        if qv[i] > 1e-8:
            binding.append(f"qos[{u}]")
    sv = sic.values(p)
    for name, v in zip(sic.names, sv):
        if v > 1e-8:
            binding.append(name)
    feas = max(float(qv.max()) if qv.size else 0.0,
               float(sv.max()) if sv.size else 0.0, 0.0)
    return p, feas, binding
