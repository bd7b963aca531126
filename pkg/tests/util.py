"""Shared instance builders and independent oracle evaluators.

The oracle functions here intentionally re-implement formulas with plain
scalar loops, separate from the vectorized package code they check.
"""

from __future__ import annotations

import math

import numpy as np

from mecvid.model import (LinkSpec, NetworkState, PopularityModel, RrsSpec, Slice,
                          default_video_library, make_transcoding_spec, zipf_popularity)


def make_state(B=2, U=2, V=2, L=2, N=2, M=2, seed=0,
               min_rates=None, rewards=None, max_power=None,
               processing=25e9, storage_frac=0.4, fronthaul=40e6, backhaul=80e6,
               noma_cap=2, cycles_per_bit=737.5, zipf=0.8,
               base_bitrate=2e6, duration_s=600.0, noise_figure_db=9.0,
               area_m=400.0) -> NetworkState:
    """A small, fully valid instance with Table-like prices."""
    rng = np.random.default_rng(seed)
    rel = [0.45, 0.55, 0.67, 0.82][:L]
    videos = default_video_library(n_types=V, relative_bitrates=rel,
                                   base_bitrate=base_bitrate, duration_s=duration_s)
    total = sum(v.size_bits for v in videos)

    rrs_pos = np.zeros((B, 2))
    for b in range(1, B):
        ang = 2 * math.pi * (b - 1) / max(B - 1, 1)
        rrs_pos[b] = [250 * math.cos(ang), 250 * math.sin(ang)]
    users = rng.uniform(-area_m, area_m, size=(U, 2))

    if max_power is None:
        max_power = [1.0] + [0.5] * (B - 1)
    rrs = []
    for b in range(B):
        hp = b == 0
        rrs.append(RrsSpec(
            id=b + 1, position=(float(rrs_pos[b, 0]), float(rrs_pos[b, 1])),
            max_power=float(max_power[b]), max_processing=float(processing),
            max_storage=storage_frac * total, noma_user_cap=noma_cap,
            price_power=6.0 if hp else 4.0,
            price_subcarrier=(60.0 if hp else 40.0) / 1e6,
            price_cache=(2.0 if hp else 1.6) / 1e9,
            price_processing=(0.8 if hp else 0.7) / 1e9,
        ))
    links = LinkSpec(
        backhaul_cap=np.full(B, float(backhaul)),
        fronthaul_cap=np.full((B, B), float(fronthaul)) * (1 - np.eye(B)),
        price_backhaul=5.0 / 1e6,
        price_fronthaul=2.0 / 1e6,
    )

    if min_rates is None:
        min_rates = [0.0] * M
    if rewards is None:
        rewards = [(8.75 + 0.25 * m) / 1e6 for m in range(M)]
    members = [[] for _ in range(M)]
    for u in range(U):
        members[u % M].append(u)
    # reward must be monotone in the QoS floor
    floors_sorted = sorted(zip(min_rates, rewards))
    slices = tuple(Slice(id=m + 1, users=tuple(members[m]),
                         min_rate=float(floors_sorted[m][0]),
                         reward_rate=float(floors_sorted[m][1]))
                   for m in range(M))

    ranks = [v.rank for v in videos]
    return NetworkState(
        user_positions=users,
        rrs=tuple(rrs),
        links=links,
        slices=slices,
        videos=videos,
        transcoding=make_transcoding_spec(videos, cycles_per_bit),
        popularity=PopularityModel(zipf, zipf_popularity(ranks, zipf)),
        n_subcarriers=N,
        subcarrier_bandwidth=78125.0,
        total_bandwidth=N * 78125.0,
        noise_psd=10 ** ((-174.0 - 30.0) / 10.0),
        noise_figure_db=noise_figure_db,
    )


# ---------------------------------------------------------------------------
# scalar oracle evaluators
# ---------------------------------------------------------------------------

def naive_sinr(state, p, gains, b, u, n):
    """SINR from the printed definitions, scalar arithmetic only."""
    sigma = state.subcarrier_bandwidth * state.noise_psd * 10 ** (state.noise_figure_db / 10)
    intra = 0.0
    for v in range(state.n_users):
        if v == u:
            continue
        if (gains[b, v, n], -v) > (gains[b, u, n], -u):
            intra += p[b, v, n] * gains[b, u, n]
    inter = 0.0
    for i in range(state.n_rrs):
        if i == b:
            continue
        for v in range(state.n_users):
            if v != u:
                inter += p[i, v, n] * gains[i, u, n]
    return p[b, u, n] * gains[b, u, n] / (intra + inter + sigma)


def naive_rate_table(state, p, tau, gains):
    out = np.zeros((state.n_rrs, state.n_users))
    for b in range(state.n_rrs):
        for u in range(state.n_users):
            acc = 0.0
            for n in range(state.n_subcarriers):
                acc += tau[b, u, n] * state.subcarrier_bandwidth * \
                    math.log2(1.0 + naive_sinr(state, p, gains, b, u, n))
            out[b, u] = acc
    return out


def naive_ergodic_rates(state, p, tau, cdi):
    acc = np.zeros((state.n_rrs, state.n_users))
    for s in cdi.samples:
        acc += naive_rate_table(state, p, tau, s.gains)
    return acc / len(cdi.samples)


def golden_section(fn, lo, hi, iters=200):
    """Maximize a 1-D unimodal function on [lo, hi]."""
    phi = (math.sqrt(5.0) - 1.0) / 2.0
    a, b = lo, hi
    c = b - phi * (b - a)
    d = a + phi * (b - a)
    fc, fd = fn(c), fn(d)
    for _ in range(iters):
        if fc > fd:
            b, d, fd = d, c, fc
            c = b - phi * (b - a)
            fc = fn(c)
        else:
            a, c, fc = c, d, fd
            d = a + phi * (b - a)
            fd = fn(d)
    xm = 0.5 * (a + b)
    return xm, fn(xm)
