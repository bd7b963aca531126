"""Wireless channel: CSI sampling, NOMA SINR/rates, SIC admissibility.

Gains are linear power gains per (rrs, user, subcarrier).  A set of CSI
samples over the same large-scale loss acts as the distributional (CDI)
description used by the placement phase.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np

from .model import NetworkState

REL_SLACK = 1e-9


@dataclass(frozen=True)
class ChannelRealization:
    """One CSI draw: linear power gain per (b, u, n)."""

    gains: np.ndarray              # (B, U, N)
    seed: Optional[int] = None

    def __post_init__(self):
        g = np.asarray(self.gains, dtype=float)
        g.setflags(write=False)
        object.__setattr__(self, "gains", g)


@dataclass(frozen=True)
class ChannelData:
    """An empirical CDI: CSI samples plus their per-entry mean."""

    samples: tuple[ChannelRealization, ...]
    mean_gains: np.ndarray         # (B, U, N)

    def __post_init__(self):
        m = np.asarray(self.mean_gains, dtype=float)
        m.setflags(write=False)
        object.__setattr__(self, "mean_gains", m)

    def __len__(self) -> int:
        return len(self.samples)


@dataclass(frozen=True)
class NoiseModel:
    noise_power: float             # Watts per subcarrier, noise figure included


def path_loss_db(d_km: np.ndarray | float, exponent: float = 3.76) -> np.ndarray | float:
    """Distance-dependent loss in dB: 128.1 + 10*exponent*log10(d_km)."""
    return 128.1 + 10.0 * exponent * np.log10(d_km)


def sample_large_scale(
    state: NetworkState,
    pathloss_exponent: Optional[float] = None,
    rng: Optional[np.random.Generator] = None,
    shadow_std_db: Optional[float] = None,
) -> np.ndarray:
    """(B, U) linear large-scale loss: path loss plus log-normal shadowing."""
    exponent = state.pathloss_exponent if pathloss_exponent is None else pathloss_exponent
    std = state.shadow_std_db if shadow_std_db is None else shadow_std_db
    d = state.distances_km()
    if np.any(d <= 0):
        raise ValueError("invalid-geometry: zero RRS-user distance")
    pl_db = path_loss_db(d, exponent)
    if std > 0:
        if rng is None:
            raise ValueError("shadowing requires an rng")
        pl_db = pl_db + rng.normal(0.0, std, size=d.shape)
    return 10.0 ** (-pl_db / 10.0)


def sample_csi(
    state: NetworkState,
    pathloss_exponent: Optional[float] = None,
    seed: Optional[int] = None,
    large_scale: Optional[np.ndarray] = None,
) -> ChannelRealization:
    """Draw one CSI realization: large-scale loss times unit-mean Rayleigh power fading.

    Pass ``large_scale`` to reuse a fixed loss (shared across CDI samples);
    otherwise loss and shadowing are drawn from the same seed.
    """
    rng = np.random.default_rng(seed)
    if large_scale is None:
        large_scale = sample_large_scale(state, pathloss_exponent, rng)
    B, U = large_scale.shape
    fading = rng.exponential(1.0, size=(B, U, state.n_subcarriers))
    return ChannelRealization(gains=large_scale[:, :, None] * fading, seed=seed)


def sample_cdi(
    state: NetworkState,
    n_samples: int,
    pathloss_exponent: Optional[float] = None,
    seed: Optional[int] = None,
    large_scale: Optional[np.ndarray] = None,
) -> ChannelData:
    """Draw ``n_samples`` CSI realizations over one shared large-scale loss."""
    if n_samples < 1:
        raise ValueError("invalid-cdi: need at least one sample")
    rng = np.random.default_rng(seed)
    if large_scale is None:
        large_scale = sample_large_scale(state, pathloss_exponent, rng)
    samples = []
    for _ in range(n_samples):
        fading = rng.exponential(1.0, size=(*large_scale.shape, state.n_subcarriers))
        samples.append(ChannelRealization(gains=large_scale[:, :, None] * fading))
    mean = np.mean([s.gains for s in samples], axis=0)
    return ChannelData(samples=tuple(samples), mean_gains=mean)


# ---------------------------------------------------------------------------
# SINR and rates
# ---------------------------------------------------------------------------

def stronger_matrix(gains_bn: np.ndarray) -> np.ndarray:
    """(U, U) boolean: entry [v, u] says v decodes after u (v is 'stronger').

    Ties in gain are broken by user index, lower index counting as stronger.
    """
    g = gains_bn
    u_idx = np.arange(g.shape[0])
    return (g[:, None] > g[None, :]) | ((g[:, None] == g[None, :]) & (u_idx[:, None] < u_idx[None, :]))


def interference(state: NetworkState, p: np.ndarray, gains: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Intra- and inter-cell interference tables, each (B, U, N)."""
    B, U, N = gains.shape
    intra = np.zeros((B, U, N))
    for b in range(B):
        for n in range(N):
            s = stronger_matrix(gains[b, :, n])          # [v, u]
            intra[b, :, n] = (s * p[b, :, n][:, None]).sum(axis=0) * gains[b, :, n]
    cell_power = p.sum(axis=1)                           # (B, N)
    inter = np.zeros((B, U, N))
    for b in range(B):
        for b2 in range(B):
            if b2 == b:
                continue
            inter[b] += (cell_power[b2][None, :] - p[b2]) * gains[b2]
    return intra, inter


def sinr_table(state: NetworkState, p: np.ndarray, gains: np.ndarray) -> np.ndarray:
    """(B, U, N) post-SIC SINR for every potential link."""
    intra, inter = interference(state, p, gains)
    return p * gains / (intra + inter + state.noise_power())


def sinr(state: NetworkState, p: np.ndarray, tau: np.ndarray,
         h: ChannelRealization, b: int, u: int, n: int) -> float:
    """SINR of user ``u`` served by RRS ``b`` on subcarrier ``n``."""
    return float(sinr_table(state, p, h.gains)[b, u, n])


def per_subcarrier_rates(state: NetworkState, p: np.ndarray, tau: np.ndarray,
                         gains: np.ndarray) -> np.ndarray:
    """(B, U, N) instantaneous rates tau * Ws * log2(1 + SINR)."""
    return tau * state.subcarrier_bandwidth * np.log2(1.0 + sinr_table(state, p, gains))


def rate_table(state: NetworkState, p: np.ndarray, tau: np.ndarray,
               gains: np.ndarray) -> np.ndarray:
    """(B, U) instantaneous access rates."""
    return per_subcarrier_rates(state, p, tau, gains).sum(axis=2)


def user_rate(state: NetworkState, p: np.ndarray, tau: np.ndarray,
              h: ChannelRealization, b: int, u: int) -> float:
    return float(rate_table(state, p, tau, h.gains)[b, u])


def ergodic_rate_table(state: NetworkState, p: np.ndarray, tau: np.ndarray,
                       cdi: ChannelData) -> np.ndarray:
    """(B, U) access rates averaged over the CDI sample set."""
    if len(cdi) == 0:
        raise ValueError("invalid-cdi: empty sample set")
    acc = np.zeros((state.n_rrs, state.n_users))
    for s in cdi.samples:
        acc += rate_table(state, p, tau, s.gains)
    return acc / len(cdi)


def ergodic_rate(state: NetworkState, p: np.ndarray, tau: np.ndarray,
                 cdi: ChannelData, b: int, u: int) -> float:
    return float(ergodic_rate_table(state, p, tau, cdi)[b, u])


# ---------------------------------------------------------------------------
# SIC admissibility
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SicViolation:
    b: int
    n: int
    strong: int
    weak: int
    residual: float                # lhs - rhs, negative when violated


def _mean_stronger(gains_like: np.ndarray, b: int, n: int) -> np.ndarray:
    return stronger_matrix(gains_like[b, :, n])


def check_sic(
    state: NetworkState,
    p: np.ndarray,
    tau: np.ndarray,
    channel: Union[ChannelRealization, ChannelData],
    mode: str = "instantaneous",
) -> list[SicViolation]:
    """Verify decode-order admissibility for every co-scheduled pair.

    ``instantaneous`` compares the decode SINR at the stronger receiver with
    the weaker user's own SINR on each subcarrier.  ``ergodic`` checks the
    cross-multiplied sample-mean form over a CDI set, ordering users by mean
    gain.  Pairs are only constrained where both assignments are active.
    """
    sigma = state.noise_power()
    out: list[SicViolation] = []

    if mode == "instantaneous":
        if not isinstance(channel, ChannelRealization):
            raise TypeError("instantaneous mode expects a ChannelRealization")
        g = channel.gains
        intra, inter = interference(state, p, g)
        gamma = p * g / (intra + inter + sigma)
        for b in range(state.n_rrs):
            for n in range(state.n_subcarriers):
                active = np.flatnonzero(tau[b, :, n] > 0)
                if active.size < 2:
                    continue
                s = stronger_matrix(g[b, :, n])
                for u in active:
                    for w in active:
                        if not s[u, w]:
                            continue
                        denom = (s[:, w] * p[b, :, n]).sum() * g[b, u, n] + inter[b, u, n] + sigma
                        lhs = p[b, w, n] * g[b, u, n] / denom
                        rhs = gamma[b, w, n]
                        if lhs - rhs < -1e-9:
                            out.append(SicViolation(b, n, int(u), int(w), float(lhs - rhs)))
        return out

    if mode == "ergodic":
        if not isinstance(channel, ChannelData):
            raise TypeError("ergodic mode expects ChannelData")
        samples = [s.gains for s in channel.samples]
        per_sample = [interference(state, p, g) for g in samples]
        for b in range(state.n_rrs):
            for n in range(state.n_subcarriers):
                active = np.flatnonzero(tau[b, :, n] > 0)
                if active.size < 2:
                    continue
                order = _mean_stronger(channel.mean_gains, b, n)
                for u in active:
                    for w in active:
                        if not order[u, w]:
                            continue
                        lhs = rhs = 0.0
                        for g, (intra, inter) in zip(samples, per_sample):
                            s = stronger_matrix(g[b, :, n])
                            lhs += g[b, u, n] * (intra[b, w, n] + inter[b, w, n] + sigma)
                            rhs += g[b, w, n] * ((s[:, w] * p[b, :, n]).sum() * g[b, u, n]
                                                 + inter[b, u, n] + sigma)
                        lhs /= len(samples)
                        rhs /= len(samples)
                        scale = max(abs(lhs), abs(rhs), 1e-300)
                        if (lhs - rhs) / scale < -REL_SLACK:
                            out.append(SicViolation(b, n, int(u), int(w), float(lhs - rhs)))
        return out

    raise ValueError(f"unknown mode {mode!r}")


def dump_csi_csv(realization: ChannelRealization, path: str | Path) -> None:
    """Write a realization as rows (b, u, n, gain) for fixtures."""
    B, U, N = realization.gains.shape
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["b", "u", "n", "gain"])
        for b in range(B):
            for u in range(U):
                for n in range(N):
                    w.writerow([b, u, n, repr(realization.gains[b, u, n])])
