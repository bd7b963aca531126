import json
import math

import numpy as np
import pytest

from mecvid.model import (Slice, Violation, dbm_to_watts, default_video_library,
                          load_config, state_from_config, validate, zipf_popularity)

from util import make_state


class TestZipf:
    def test_uniform_when_exponent_zero(self):
        pop = zipf_popularity([1, 2, 3, 4], 0.0)
        assert np.allclose(pop, 0.25)

    def test_two_items_unit_exponent(self):
        pop = zipf_popularity([1, 2], 1.0)
        assert np.allclose(pop, [2 / 3, 1 / 3])

    def test_forty_items_against_direct_summation(self):
        # independent oracle: plain python summation of 1/r^0.8
        lam = 0.8
        weights = [1.0 / r ** lam for r in range(1, 41)]
        total = sum(weights)
        oracle = [w / total for w in weights]
        pop = zipf_popularity(list(range(1, 41)), lam)
        assert np.allclose(pop, oracle, rtol=0, atol=1e-15)
        assert pop[0] == pytest.approx(oracle[0], abs=1e-15)

    def test_sums_to_one_over_random_permutations(self):
        rng = np.random.default_rng(7)
        for _ in range(50):
            k = int(rng.integers(2, 30))
            lam = float(rng.uniform(0.0, 3.0))
            ranks = rng.permutation(np.arange(1, k + 1))
            pop = zipf_popularity(ranks, lam)
            assert abs(pop.sum() - 1.0) <= 1e-12
            assert np.all(pop >= 0)

    def test_relabeling_items_preserves_popularity_by_rank(self):
        ranks = [3, 1, 2]
        pop = zipf_popularity(ranks, 1.3)
        shuffled = zipf_popularity([1, 2, 3], 1.3)
        # item with rank r gets the same mass wherever it sits in the list
        assert pop[1] == shuffled[0]
        assert pop[2] == shuffled[1]
        assert pop[0] == shuffled[2]

    def test_negative_exponent_rejected(self):
        with pytest.raises(ValueError, match="invalid-parameter"):
            zipf_popularity([1, 2], -0.1)

    def test_bad_ranks_rejected(self):
        with pytest.raises(ValueError):
            zipf_popularity([1, 3], 1.0)


class TestVideoLibrary:
    def test_default_shape(self):
        lib = default_video_library()
        assert len(lib) == 40
        assert sorted(v.rank for v in lib) == list(range(1, 41))

    def test_sizes_match_bitrate_times_duration(self):
        lib = default_video_library()
        assert lib[0].size_bits == pytest.approx(0.45 * 2e6 * 600, rel=0, abs=1e-6)
        assert lib[3].size_bits == pytest.approx(9.84e8, rel=0, abs=1e-6)

    def test_sizes_monotone_within_type(self):
        lib = default_video_library()
        for v in range(10):
            sizes = [x.size_bits for x in lib[4 * v:4 * v + 4]]
            assert sizes == sorted(sizes)

    def test_rank_seed_shuffles_deterministically(self):
        a = default_video_library(rank_seed=5)
        b = default_video_library(rank_seed=5)
        c = default_video_library(rank_seed=6)
        assert [v.rank for v in a] == [v.rank for v in b]
        assert [v.rank for v in a] != [v.rank for v in c]
        assert sorted(v.rank for v in c) == list(range(1, 41))


class TestValidate:
    def test_clean_instance_passes(self):
        assert validate(make_state(seed=3)) == []

    def test_negative_power_cap(self):
        state = make_state(max_power=[-1.0, 0.5])
        codes = {v.code for v in validate(state)}
        assert "power-cap" in codes

    def test_slice_overlap(self):
        state = make_state(U=3, M=2)
        bad = list(state.slices)
        bad[1] = Slice(id=2, users=(0, 1), min_rate=0.0, reward_rate=9e-6)
        state = state.__class__(**{**state.__dict__, "slices": tuple(bad)})
        codes = {v.code for v in validate(state)}
        assert "slice-overlap" in codes

    def test_uncovered_user(self):
        state = make_state(U=3, M=2)
        bad = [Slice(id=1, users=(0,), min_rate=0.0, reward_rate=8.75e-6),
               Slice(id=2, users=(1,), min_rate=0.0, reward_rate=9e-6)]
        state = state.__class__(**{**state.__dict__, "slices": tuple(bad)})
        codes = {v.code for v in validate(state)}
        assert "slice-cover" in codes

    def test_reward_monotonicity(self):
        state = make_state(M=2, min_rates=[0.0, 1e6], rewards=[9e-6, 8e-6])
        # builder sorts floors, so break it on purpose
        bad = [Slice(id=1, users=state.slices[0].users, min_rate=0.0, reward_rate=9e-6),
               Slice(id=2, users=state.slices[1].users, min_rate=1e6, reward_rate=8e-6)]
        state = state.__class__(**{**state.__dict__, "slices": tuple(bad)})
        codes = {v.code for v in validate(state)}
        assert "reward-monotonic" in codes


class TestConfig:
    def _config(self):
        return {
            "network": {
                "n_subcarriers": 4, "subcarrier_bandwidth_hz": 78125.0,
                "noise_psd_dbm_hz": -174.0, "noise_figure_db": 9.0,
                "max_power_dbm": {"hp": 47, "lp": 27}, "noma_user_cap": 2,
            },
            "videos": {"count": 2, "relative_bitrates": [0.45, 0.82]},
            "slices": [
                {"min_rate_bps": 0.0, "reward_units_per_mbps": 8.75},
                {"min_rate_bps": 0.0, "reward_units_per_mbps": 9.0},
            ],
            "prices": {
                "power_units_per_watt": {"hp": 6, "lp": 4},
                "subcarrier_units_per_mhz": {"hp": 60, "lp": 40},
                "cache_units_per_gbit": {"hp": 2, "lp": 1.6},
                "processing_units_per_ghz": {"hp": 0.8, "lp": 0.7},
                "fronthaul_units_per_mbps": 2, "backhaul_units_per_mbps": 5,
            },
            "capacities": {
                "processing_cps": {"hp": 50e9, "lp": 25e9},
                "storage_fraction": {"hp": 0.2, "lp": 0.1},
                "fronthaul_bps": 40e6, "backhaul_bps": 80e6,
                "transcoding": {"cycles_per_byte": 5900},
            },
            "popularity": {"zipf_exponent": 0.8},
            "solver": {},
        }

    def _geometry(self):
        users = np.array([[100.0, 0.0], [0.0, 150.0]])
        rrs = np.array([[0.0, 0.0], [250.0, 0.0]])
        return users, rrs

    def test_roundtrip_and_units(self):
        users, rrs = self._geometry()
        state = state_from_config(self._config(), users, rrs, [0, 1])
        assert validate(state) == []
        assert state.rrs[0].max_power == pytest.approx(dbm_to_watts(47))
        assert state.rrs[1].max_power == pytest.approx(dbm_to_watts(27))
        # per-byte workload lands as per-bit
        assert state.transcoding.cycles_per_bit[0] == pytest.approx(5900 / 8)
        assert state.rrs[0].price_cache == pytest.approx(2e-9)
        assert state.slices[0].reward_rate == pytest.approx(8.75e-6)
        assert state.links.price_backhaul == pytest.approx(5e-6)

    def test_cycles_per_bit_tag(self):
        cfg = self._config()
        cfg["capacities"]["transcoding"] = {"cycles_per_bit": 737.5}
        users, rrs = self._geometry()
        state = state_from_config(cfg, users, rrs, [0, 1])
        assert state.transcoding.cycles_per_bit[0] == pytest.approx(737.5)

    def test_both_cycle_tags_rejected(self):
        cfg = self._config()
        cfg["capacities"]["transcoding"] = {"cycles_per_bit": 1.0, "cycles_per_byte": 8.0}
        users, rrs = self._geometry()
        with pytest.raises(ValueError):
            state_from_config(cfg, users, rrs, [0, 1])

    def test_missing_section_rejected(self, tmp_path):
        cfg = self._config()
        del cfg["prices"]
        path = tmp_path / "bad.json"
        path.write_text(json.dumps(cfg))
        with pytest.raises(ValueError, match="prices"):
            load_config(path)
