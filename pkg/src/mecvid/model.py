"""Problem instance: topology, videos, slices, capacities, prices, popularity.

Everything here is immutable after construction; solvers treat a
``NetworkState`` as a read-only description of one network.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

__all__ = [
    "VideoVariant",
    "RrsSpec",
    "LinkSpec",
    "Slice",
    "TranscodingSpec",
    "PopularityModel",
    "NetworkState",
    "Violation",
    "zipf_popularity",
    "default_video_library",
    "validate",
    "dbm_to_watts",
    "load_config",
    "state_from_config",
]


def dbm_to_watts(dbm: float) -> float:
    return 10.0 ** ((dbm - 30.0) / 10.0)


@dataclass(frozen=True)
class VideoVariant:
    """One bitrate variant of a video type.

    ``type_index`` and ``bitrate_level`` are 1-based; level ``L`` is the
    highest bitrate of a type.  ``rank`` is the global popularity rank
    (1 = most popular).
    """

    type_index: int
    bitrate_level: int
    size_bits: float
    rank: int


@dataclass(frozen=True)
class RrsSpec:
    """A radio node with its co-located cache and processor."""

    id: int
    position: tuple[float, float]  # meters
    max_power: float               # Watts
    max_processing: float          # cycles/s
    max_storage: float             # bits
    noma_user_cap: int             # users per subcarrier
    price_power: float             # units/Watt
    price_subcarrier: float        # units/Hz
    price_cache: float             # units/bit
    price_processing: float        # units/(cycle/s)


@dataclass(frozen=True)
class LinkSpec:
    """Backhaul (origin -> RRS) and fronthaul (RRS -> RRS) capacities."""

    backhaul_cap: np.ndarray       # (B,) bits/s
    fronthaul_cap: np.ndarray      # (B, B) bits/s, entry [src, dst]; diagonal unused
    price_backhaul: float          # units/(bit/s)
    price_fronthaul: float         # units/(bit/s)

    def __post_init__(self):
        object.__setattr__(self, "backhaul_cap", _frozen(self.backhaul_cap))
        object.__setattr__(self, "fronthaul_cap", _frozen(self.fronthaul_cap))


@dataclass(frozen=True)
class Slice:
    """A virtual network: its users, QoS floor and per-rate reward."""

    id: int
    users: tuple[int, ...]         # 0-based user indices
    min_rate: float                # bits/s
    reward_rate: float             # units/(bit/s)


@dataclass(frozen=True)
class TranscodingSpec:
    """Transcoding tasks for every (high, low) variant pair of a type.

    ``pairs[k] = (hi, lo)`` holds 0-based variant indices with the same
    ``type_index`` and a strictly higher bitrate level at ``hi``.
    """

    pairs: tuple[tuple[int, int], ...]
    task_bits: np.ndarray          # (P,) bits per pair
    cycles_per_bit: np.ndarray     # (P,) cycles/bit per pair

    def __post_init__(self):
        object.__setattr__(self, "task_bits", _frozen(self.task_bits))
        object.__setattr__(self, "cycles_per_bit", _frozen(self.cycles_per_bit))

    def workload_cycles(self, k: int) -> float:
        """Total CPU cycles of transcode pair ``k``."""
        return float(self.task_bits[k] * self.cycles_per_bit[k])


@dataclass(frozen=True)
class PopularityModel:
    zipf_exponent: float
    popularity: np.ndarray         # (VL,) aligned with the video list

    def __post_init__(self):
        object.__setattr__(self, "popularity", _frozen(self.popularity))


@dataclass(frozen=True)
class NetworkState:
    """The immutable problem instance shared by every solver."""

    user_positions: np.ndarray     # (U, 2) meters
    rrs: tuple[RrsSpec, ...]
    links: LinkSpec
    slices: tuple[Slice, ...]
    videos: tuple[VideoVariant, ...]
    transcoding: TranscodingSpec
    popularity: PopularityModel
    n_subcarriers: int
    subcarrier_bandwidth: float    # Hz
    total_bandwidth: float         # Hz
    noise_psd: float               # W/Hz
    noise_figure_db: float = 0.0
    pathloss_exponent: float = 3.76
    shadow_std_db: float = 8.0

    def __post_init__(self):
        object.__setattr__(self, "user_positions", _frozen(self.user_positions))

    # -- shape shorthands -------------------------------------------------
    @property
    def n_users(self) -> int:
        return self.user_positions.shape[0]

    @property
    def n_rrs(self) -> int:
        return len(self.rrs)

    @property
    def n_slices(self) -> int:
        return len(self.slices)

    @property
    def n_videos(self) -> int:
        return len(self.videos)

    @property
    def n_pairs(self) -> int:
        return len(self.transcoding.pairs)

    @property
    def video_sizes(self) -> np.ndarray:
        return np.array([v.size_bits for v in self.videos])

    @property
    def slice_of_user(self) -> np.ndarray:
        out = np.full(self.n_users, -1, dtype=int)
        for mi, sl in enumerate(self.slices):
            for u in sl.users:
                out[u] = mi
        return out

    def pairs_with_low(self, lo: int) -> list[int]:
        """Transcode-pair indices whose target variant is ``lo``."""
        return [k for k, (_, l) in enumerate(self.transcoding.pairs) if l == lo]

    def pairs_with_high(self, hi: int) -> list[int]:
        return [k for k, (h, _) in enumerate(self.transcoding.pairs) if h == hi]

    def noise_power(self) -> float:
        """AWGN power per subcarrier, noise figure included (Watts)."""
        return self.subcarrier_bandwidth * self.noise_psd * 10.0 ** (self.noise_figure_db / 10.0)

    def distances_km(self) -> np.ndarray:
        """(B, U) RRS-to-user distances in km."""
        rp = np.array([r.position for r in self.rrs])  # (B,2)
        d = np.linalg.norm(rp[:, None, :] - self.user_positions[None, :, :], axis=2)
        return d / 1000.0


def _frozen(arr) -> np.ndarray:
    a = np.asarray(arr, dtype=float)
    a.setflags(write=False)
    return a


# ---------------------------------------------------------------------------
# popularity and the default library
# ---------------------------------------------------------------------------

def zipf_popularity(ranks: Sequence[int], zipf_exponent: float) -> np.ndarray:
    """Zipf law over ranked items: weight 1/rank^exponent, normalized to 1."""
    if not np.isfinite(zipf_exponent) or zipf_exponent < 0:
        raise ValueError(f"invalid-parameter: zipf exponent must be >= 0, got {zipf_exponent}")
    ranks = np.asarray(ranks, dtype=float)
    if sorted(ranks.astype(int)) != list(range(1, len(ranks) + 1)):
        raise ValueError("invalid-parameter: ranks must be a permutation of 1..K")
    weights = ranks ** (-zipf_exponent)
    return weights / weights.sum()


# The four bitrate variants relative to a 2 Mbps source, 10-minute titles.
DEFAULT_RELATIVE_BITRATES = (0.45, 0.55, 0.67, 0.82)
DEFAULT_BASE_BITRATE = 2e6      # bits/s
DEFAULT_DURATION_S = 600.0


def default_video_library(
    n_types: int = 10,
    relative_bitrates: Sequence[float] = DEFAULT_RELATIVE_BITRATES,
    base_bitrate: float = DEFAULT_BASE_BITRATE,
    duration_s: float = DEFAULT_DURATION_S,
    rank_seed: Optional[int] = None,
) -> tuple[VideoVariant, ...]:
    """Build the stock library: ``n_types`` titles x len(relative_bitrates) levels.

    Ranks default to the (type, level) listing order; pass ``rank_seed`` to
    shuffle them reproducibly.
    """
    n_levels = len(relative_bitrates)
    count = n_types * n_levels
    ranks = np.arange(1, count + 1)
    if rank_seed is not None:
        ranks = np.random.default_rng(rank_seed).permutation(ranks)
    out = []
    i = 0
    for v in range(1, n_types + 1):
        for l, rel in enumerate(relative_bitrates, start=1):
            out.append(VideoVariant(
                type_index=v,
                bitrate_level=l,
                size_bits=rel * base_bitrate * duration_s,
                rank=int(ranks[i]),
            ))
            i += 1
    return tuple(out)


def make_transcoding_spec(
    videos: Sequence[VideoVariant],
    cycles_per_bit: float,
    task_bits: Optional[dict[tuple[int, int], float]] = None,
) -> TranscodingSpec:
    """Enumerate all within-type (high level -> low level) pairs.

    Task size defaults to the size of the target (low) variant.
    """
    pairs = []
    bits = []
    for hi, vh in enumerate(videos):
        for lo, vl in enumerate(videos):
            if vh.type_index == vl.type_index and vh.bitrate_level > vl.bitrate_level:
                pairs.append((hi, lo))
                if task_bits is not None:
                    bits.append(task_bits[(hi, lo)])
                else:
                    bits.append(vl.size_bits)
    return TranscodingSpec(
        pairs=tuple(pairs),
        task_bits=np.array(bits),
        cycles_per_bit=np.full(len(pairs), float(cycles_per_bit)),
    )


# ---------------------------------------------------------------------------
# validation
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Violation:
    code: str
    subject: str
    detail: str


def validate(state: NetworkState) -> list[Violation]:
    """Check every structural invariant; an empty list means the instance is ok."""
    out: list[Violation] = []
    B, U, VL = state.n_rrs, state.n_users, state.n_videos

    # videos
    ranks = sorted(v.rank for v in state.videos)
    if ranks != list(range(1, VL + 1)):
        out.append(Violation("rank-permutation", "videos", "ranks are not a permutation of 1..VL"))
    by_type: dict[int, list[VideoVariant]] = {}
    for v in state.videos:
        if v.size_bits <= 0:
            out.append(Violation("video-size", f"video({v.type_index},{v.bitrate_level})", "size must be positive"))
        by_type.setdefault(v.type_index, []).append(v)
    for t, vs in by_type.items():
        vs = sorted(vs, key=lambda v: v.bitrate_level)
        for a, b in zip(vs, vs[1:]):
            if a.size_bits > b.size_bits:
                out.append(Violation("size-monotonic", f"type {t}",
                                     f"level {a.bitrate_level} larger than level {b.bitrate_level}"))

    # RRSs
    for r in state.rrs:
        if r.max_power < 0:
            out.append(Violation("power-cap", f"rrs {r.id}", f"negative max power {r.max_power}"))
        if r.max_processing < 0:
            out.append(Violation("processing-cap", f"rrs {r.id}", "negative processing capacity"))
        if r.max_storage < 0:
            out.append(Violation("storage-cap", f"rrs {r.id}", "negative storage capacity"))
        if r.noma_user_cap < 1:
            out.append(Violation("noma-cap", f"rrs {r.id}", "per-subcarrier user cap must be >= 1"))

    # links
    if state.links.backhaul_cap.shape != (B,):
        out.append(Violation("link-shape", "backhaul", f"expected ({B},)"))
    if state.links.fronthaul_cap.shape != (B, B):
        out.append(Violation("link-shape", "fronthaul", f"expected ({B},{B})"))
    if np.any(state.links.backhaul_cap < 0) or np.any(state.links.fronthaul_cap < 0):
        out.append(Violation("link-cap", "links", "negative link capacity"))

    # slices
    seen: dict[int, int] = {}
    for sl in state.slices:
        for u in sl.users:
            if not (0 <= u < U):
                out.append(Violation("slice-user", f"slice {sl.id}", f"unknown user {u}"))
            elif u in seen:
                out.append(Violation("slice-overlap", f"slice {sl.id}", f"user {u} also in slice {seen[u]}"))
            else:
                seen[u] = sl.id
    if len(seen) < U:
        missing = sorted(set(range(U)) - set(seen))
        out.append(Violation("slice-cover", "slices", f"users without a slice: {missing}"))
    ordered = sorted(state.slices, key=lambda s: s.min_rate)
    for a, b in zip(ordered, ordered[1:]):
        if a.reward_rate > b.reward_rate:
            out.append(Violation("reward-monotonic", f"slices {a.id},{b.id}",
                                 "reward must be non-decreasing in the QoS floor"))

    # transcoding
    for k, (hi, lo) in enumerate(state.transcoding.pairs):
        vh, vl = state.videos[hi], state.videos[lo]
        if vh.type_index != vl.type_index or vh.bitrate_level <= vl.bitrate_level:
            out.append(Violation("transcode-pair", f"pair {k}", "must map a variant to a lower level of the same type"))
        if state.transcoding.task_bits[k] <= 0 or state.transcoding.cycles_per_bit[k] <= 0:
            out.append(Violation("transcode-positive", f"pair {k}", "task bits and cycles/bit must be positive"))

    # popularity
    pop = state.popularity.popularity
    if pop.shape != (VL,):
        out.append(Violation("popularity-shape", "popularity", f"expected ({VL},)"))
    else:
        if np.any(pop < 0) or abs(pop.sum() - 1.0) > 1e-12:
            out.append(Violation("popularity-sum", "popularity", f"sum {pop.sum()!r}"))
        if state.popularity.zipf_exponent > 0:
            order = np.argsort([v.rank for v in state.videos])
            if np.any(np.diff(pop[order]) > 1e-15):
                out.append(Violation("popularity-order", "popularity", "must be non-increasing in rank"))

    # band
    if abs(state.total_bandwidth - state.n_subcarriers * state.subcarrier_bandwidth) > 1e-9 * state.total_bandwidth:
        out.append(Violation("bandwidth-mismatch", "band", "total bandwidth != N * subcarrier bandwidth"))
    if state.noise_psd <= 0:
        out.append(Violation("noise-psd", "band", "noise PSD must be positive"))

    return out


# ---------------------------------------------------------------------------
# configuration files
# ---------------------------------------------------------------------------

CONFIG_SECTIONS = ("network", "videos", "slices", "prices", "capacities", "popularity", "solver")


def load_config(path: str | Path) -> dict:
    """Read a JSON config and check the section layout."""
    with open(path) as f:
        cfg = json.load(f)
    missing = [s for s in CONFIG_SECTIONS if s not in cfg]
    if missing:
        raise ValueError(f"config missing sections: {missing}")
    return cfg


def _per_rrs(value, b: int) -> float:
    """Prices/caps may be scalars or {'hp':..., 'lp':...} (index 0 is the HP node)."""
    if isinstance(value, dict):
        return float(value["hp"] if b == 0 else value["lp"])
    return float(value)


def state_from_config(
    cfg: dict,
    user_positions: np.ndarray,
    rrs_positions: np.ndarray,
    slice_assignment: Sequence[int],
) -> NetworkState:
    """Assemble a validated-ready NetworkState from a parsed config plus geometry.

    Powers given in dBm and cycle counts given per byte are converted to the
    canonical Watts / per-bit units here.
    """
    net, vid, prices, caps = cfg["network"], cfg["videos"], cfg["prices"], cfg["capacities"]
    B = rrs_positions.shape[0]
    U = user_positions.shape[0]

    videos = default_video_library(
        n_types=int(vid["count"]),
        relative_bitrates=vid.get("relative_bitrates", DEFAULT_RELATIVE_BITRATES),
        base_bitrate=float(vid.get("base_bitrate_bps", DEFAULT_BASE_BITRATE)),
        duration_s=float(vid.get("duration_s", DEFAULT_DURATION_S)),
        rank_seed=vid.get("rank_seed"),
    )
    total_library = sum(v.size_bits for v in videos)

    tc = caps.get("transcoding", {})
    if "cycles_per_bit" in tc and "cycles_per_byte" in tc:
        raise ValueError("give cycles_per_bit or cycles_per_byte, not both")
    if "cycles_per_byte" in tc:
        cycles_per_bit = float(tc["cycles_per_byte"]) / 8.0
    elif "cycles_per_bit" in tc:
        cycles_per_bit = float(tc["cycles_per_bit"])
    else:
        raise ValueError("capacities.transcoding needs cycles_per_bit or cycles_per_byte")

    rrs = []
    for b in range(B):
        if "max_power_dbm" in net:
            p_max = dbm_to_watts(_per_rrs(net["max_power_dbm"], b))
        else:
            p_max = _per_rrs(net["max_power_w"], b)
        storage = caps.get("storage_bits")
        if storage is not None:
            c_max = _per_rrs(storage, b)
        else:
            c_max = _per_rrs(caps["storage_fraction"], b) * total_library
        rrs.append(RrsSpec(
            id=b + 1,
            position=(float(rrs_positions[b, 0]), float(rrs_positions[b, 1])),
            max_power=p_max,
            max_processing=_per_rrs(caps["processing_cps"], b),
            max_storage=c_max,
            noma_user_cap=int(net.get("noma_user_cap", 2)),
            price_power=_per_rrs(prices["power_units_per_watt"], b),
            price_subcarrier=_per_rrs(prices["subcarrier_units_per_mhz"], b) / 1e6,
            price_cache=_per_rrs(prices["cache_units_per_gbit"], b) / 1e9,
            price_processing=_per_rrs(prices["processing_units_per_ghz"], b) / 1e9,
        ))

    links = LinkSpec(
        backhaul_cap=np.full(B, float(caps["backhaul_bps"])),
        fronthaul_cap=np.full((B, B), float(caps["fronthaul_bps"])) * (1 - np.eye(B)),
        price_backhaul=float(prices["backhaul_units_per_mbps"]) / 1e6,
        price_fronthaul=float(prices["fronthaul_units_per_mbps"]) / 1e6,
    )

    assignment = np.asarray(slice_assignment, dtype=int)
    slices = []
    for mi, sc in enumerate(cfg["slices"]):
        members = tuple(int(u) for u in np.flatnonzero(assignment == mi))
        slices.append(Slice(
            id=mi + 1,
            users=members,
            min_rate=float(sc["min_rate_bps"]),
            reward_rate=float(sc["reward_units_per_mbps"]) / 1e6,
        ))

    ranks = [v.rank for v in videos]
    pop = PopularityModel(
        zipf_exponent=float(cfg["popularity"]["zipf_exponent"]),
        popularity=zipf_popularity(ranks, float(cfg["popularity"]["zipf_exponent"])),
    )

    ws = float(net["subcarrier_bandwidth_hz"])
    n = int(net["n_subcarriers"])
    return NetworkState(
        user_positions=np.asarray(user_positions, dtype=float),
        rrs=tuple(rrs),
        links=links,
        slices=tuple(slices),
        videos=videos,
        transcoding=make_transcoding_spec(videos, cycles_per_bit),
        popularity=pop,
        n_subcarriers=n,
        subcarrier_bandwidth=ws,
        total_bandwidth=float(net.get("total_bandwidth_hz", n * ws)),
        noise_psd=dbm_to_watts(float(net.get("noise_psd_dbm_hz", -174.0))),
        noise_figure_db=float(net.get("noise_figure_db", 0.0)),
        pathloss_exponent=float(net.get("pathloss_exponent", 3.76)),
        shadow_std_db=float(net.get("shadowing_std_db", 8.0)),
    )
