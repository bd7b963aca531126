import numpy as np
import pytest

from mecvid import channel as ch
from mecvid.economics import (RevenueReport, delivery_revenue, hd_revenue, ld_revenue,
                              provisioning_cost)
from mecvid.model import NetworkState, RrsSpec
from mecvid.scheduling import RequestProfile, ResourceAllocation, SchedulingDecision

from util import make_state
from test_scheduling import random_decision


def zero_price_state(state):
    rrs = tuple(RrsSpec(**{**r.__dict__, "price_power": 0.0, "price_subcarrier": 0.0,
                           "price_cache": 0.0, "price_processing": 0.0})
                for r in state.rrs)
    links = state.links.__class__(backhaul_cap=state.links.backhaul_cap,
                                  fronthaul_cap=state.links.fronthaul_cap,
                                  price_backhaul=0.0, price_fronthaul=0.0)
    return NetworkState(**{**state.__dict__, "rrs": rrs, "links": links})


class TestProvisioningCost:
    def test_all_events_zero(self):
        state = make_state(seed=1)
        dec = SchedulingDecision.zeros(state)
        alloc = ResourceAllocation.zeros(state)
        assert provisioning_cost(state, dec, alloc, 0, 0) == 0.0

    def test_local_hit_single_term(self):
        state = make_state(seed=1)
        dec = SchedulingDecision.zeros(state)
        alloc = ResourceAllocation.zeros(state)
        dec.x[0, 2] = 1
        want = state.videos[2].size_bits * state.rrs[0].price_cache
        assert provisioning_cost(state, dec, alloc, 0, 2) == pytest.approx(want)

    def test_local_transcode_terms(self):
        # oracle: cache rent of the high variant plus processing rent
        state = make_state(seed=1)
        dec = SchedulingDecision.zeros(state)
        alloc = ResourceAllocation.zeros(state)
        k = 0
        hi, lo = state.transcoding.pairs[k]
        dec.y[0, k] = 1
        alloc.processing[0, k] = 3e9
        want = (state.videos[hi].size_bits * state.rrs[0].price_cache
                + 3e9 * state.rrs[0].price_processing)
        assert provisioning_cost(state, dec, alloc, 0, lo) == pytest.approx(want)

    def test_every_route_term_by_term(self):
        state = make_state(seed=2)
        dec = SchedulingDecision.zeros(state)
        alloc = ResourceAllocation.zeros(state)
        k = 0
        hi, lo = state.transcoding.pairs[k]
        dec.x[0, lo] = 1
        dec.y[0, k] = 1
        dec.z[1, 0, lo] = 1
        dec.t[1, 0, k] = 1
        dec.w[1, 0, k] = 1
        dec.o[0, lo] = 1
        alloc.processing[0, k] = 2e9
        alloc.processing[1, k] = 5e9
        alloc.backhaul_rate[0, lo] = 4e6
        alloc.fronthaul_rate[1, 0, lo] = 3e6
        alloc.fronthaul_rate[1, 0, hi] = 7e6
        s_lo = state.videos[lo].size_bits
        s_hi = state.videos[hi].size_bits
        fh = state.links.price_fronthaul
        want = (
            s_lo * state.rrs[0].price_cache                                   # x
            + s_hi * state.rrs[0].price_cache + 2e9 * state.rrs[0].price_processing  # y
            + s_lo * state.rrs[1].price_cache + 3e6 * fh                      # z
            + s_hi * state.rrs[1].price_cache + 5e9 * state.rrs[1].price_processing
            + 3e6 * fh                                                        # t
            + s_hi * state.rrs[1].price_cache + 7e6 * fh
            + 2e9 * state.rrs[0].price_processing                             # w
            + 4e6 * state.links.price_backhaul                                # o
        )
        assert provisioning_cost(state, dec, alloc, 0, lo) == pytest.approx(want, rel=1e-12)


class TestDeliveryRevenue:
    def setup_case(self, seed=3):
        state = make_state(seed=seed)
        h = ch.sample_csi(state, seed=seed)
        dec = SchedulingDecision.zeros(state)
        alloc = ResourceAllocation.zeros(state)
        profile = RequestProfile.from_choices(state, [0, 1])
        return state, h, dec, alloc, profile

    def test_empty_slice_zero(self):
        state = make_state(U=2, M=2, seed=3)  # slice 1 gets user 1 only
        from mecvid.model import Slice
        slices = (state.slices[0].__class__(id=1, users=(0, 1), min_rate=0.0,
                                            reward_rate=8.75e-6),
                  Slice(id=2, users=(), min_rate=0.0, reward_rate=9e-6))
        state = NetworkState(**{**state.__dict__, "slices": slices})
        h = ch.sample_csi(state, seed=3)
        dec = SchedulingDecision.zeros(state)
        alloc = ResourceAllocation.zeros(state)
        profile = RequestProfile.from_choices(state, [0, 1])
        rep = delivery_revenue(state, dec, alloc, h, profile)
        assert rep.per_slice[1].revenue == 0.0

    def test_noma_shared_subcarrier_billed_once(self):
        state = make_state(U=2, M=1, seed=4)
        h = ch.sample_csi(state, seed=4)
        dec = SchedulingDecision.zeros(state)
        alloc = ResourceAllocation.zeros(state)
        profile = RequestProfile.from_choices(state, [0, 0])
        dec.assoc[0, :] = 1
        dec.subcarrier[0, 0, 0] = 1
        rep1 = delivery_revenue(state, dec, alloc, h, profile)
        dec.subcarrier[0, 1, 0] = 1   # same subcarrier reused by the same slice
        rep2 = delivery_revenue(state, dec, alloc, h, profile)
        price = state.subcarrier_bandwidth * state.rrs[0].price_subcarrier
        assert rep1.per_slice[0].subcarrier_cost == pytest.approx(price)
        assert rep2.per_slice[0].subcarrier_cost == pytest.approx(price)
        dec.subcarrier[0, 1, 1] = 1   # second subcarrier is billed
        rep3 = delivery_revenue(state, dec, alloc, h, profile)
        assert rep3.per_slice[0].subcarrier_cost == pytest.approx(2 * price)

    def test_matches_brute_force_recomputation(self):
        rng = np.random.default_rng(5)
        state = make_state(B=2, U=3, V=2, L=2, N=2, M=2, seed=5)
        h = ch.sample_csi(state, seed=5)
        for _ in range(10):
            dec = random_decision(state, rng)
            alloc = ResourceAllocation(
                power=rng.random((2, 3, 2)) * 0.3,
                processing=rng.random((2, state.n_pairs)) * 1e10,
                backhaul_rate=rng.random((2, state.n_videos)) * 1e7,
                fronthaul_rate=rng.random((2, 2, state.n_videos)) * 1e7,
            )
            profile = RequestProfile.from_choices(
                state, rng.integers(0, state.n_videos, size=3))
            rep = delivery_revenue(state, dec, alloc, h, profile)
            want_total = 0.0
            rates = ch.rate_table(state, alloc.power, dec.subcarrier, h.gains)
            for mi, sl in enumerate(state.slices):
                reward = sum(rates[b, u] * sl.reward_rate
                             for b in range(2) for u in sl.users)
                power = sum(alloc.power[b, u, n] * state.rrs[b].price_power
                            for b in range(2) for u in sl.users for n in range(2))
                sub = sum(max((dec.subcarrier[b, u, n] for u in sl.users), default=0)
                          * state.subcarrier_bandwidth * state.rrs[b].price_subcarrier
                          for b in range(2) for n in range(2))
                prov = 0.0
                for b in range(2):
                    for v in range(state.n_videos):
                        hit = min(sum(dec.assoc[b, u] * profile.request[u, v]
                                      for u in sl.users), 1)
                        if hit:
                            prov += provisioning_cost(state, dec, alloc, b, v)
                got = rep.per_slice[mi]
                assert got.reward == pytest.approx(reward, rel=1e-12, abs=1e-12)
                assert got.power_cost == pytest.approx(power, rel=1e-12, abs=1e-12)
                assert got.subcarrier_cost == pytest.approx(sub, rel=1e-12, abs=1e-12)
                assert got.provisioning_cost == pytest.approx(prov, rel=1e-12, abs=1e-12)
                want_total += reward - power - sub - prov
            assert rep.total_revenue == pytest.approx(want_total, rel=1e-12, abs=1e-12)

    def test_additive_and_permutation_invariant(self):
        state = make_state(B=2, U=4, M=2, seed=6)
        h = ch.sample_csi(state, seed=6)
        rng = np.random.default_rng(6)
        dec = random_decision(state, rng)
        alloc = ResourceAllocation(
            power=rng.random((2, 4, 2)) * 0.2,
            processing=rng.random((2, state.n_pairs)) * 1e10,
            backhaul_rate=rng.random((2, state.n_videos)) * 1e7,
            fronthaul_rate=rng.random((2, 2, state.n_videos)) * 1e7,
        )
        profile = RequestProfile.from_choices(state, rng.integers(0, 4, size=4))
        rep = delivery_revenue(state, dec, alloc, h, profile)
        assert rep.total_revenue == pytest.approx(
            sum(s.revenue for s in rep.per_slice), rel=1e-12)
        # swapping two same-slice users' identities (their channels, powers,
        # requests and schedules) leaves the slice revenue unchanged
        u1, u2 = state.slices[0].users[0], state.slices[0].users[1]
        swap = list(range(4))
        swap[u1], swap[u2] = swap[u2], swap[u1]
        h2 = ch.ChannelRealization(gains=h.gains[:, swap, :])
        dec2 = SchedulingDecision(
            assoc=dec.assoc[:, swap], subcarrier=dec.subcarrier[:, swap, :],
            cache=dec.cache, x=dec.x, y=dec.y, z=dec.z, t=dec.t, w=dec.w, o=dec.o)
        alloc2 = ResourceAllocation(power=alloc.power[:, swap, :],
                                    processing=alloc.processing,
                                    backhaul_rate=alloc.backhaul_rate,
                                    fronthaul_rate=alloc.fronthaul_rate)
        profile2 = RequestProfile(request=profile.request[swap])
        rep2 = delivery_revenue(state, dec2, alloc2, h2, profile2)
        for a, b in zip(rep.per_slice, rep2.per_slice):
            assert a.revenue == pytest.approx(b.revenue, rel=1e-11)

    def test_zero_prices_leave_reward(self):
        state = zero_price_state(make_state(seed=7))
        h = ch.sample_csi(state, seed=7)
        rng = np.random.default_rng(7)
        dec = random_decision(state, rng)
        alloc = ResourceAllocation(
            power=rng.random((2, 2, 2)) * 0.2,
            processing=rng.random((2, state.n_pairs)) * 1e10,
            backhaul_rate=rng.random((2, state.n_videos)) * 1e7,
            fronthaul_rate=rng.random((2, 2, state.n_videos)) * 1e7,
        )
        profile = RequestProfile.from_choices(state, [0, 1])
        rep = delivery_revenue(state, dec, alloc, h, profile)
        assert rep.total_revenue == pytest.approx(rep.total_reward, rel=1e-12)


class TestPlacementRevenues:
    def make_cdi(self, state, seed):
        return ch.sample_cdi(state, 4, seed=seed)

    def test_single_user_closed_form(self):
        state = make_state(B=1, U=1, M=1, V=1, L=1, N=1, seed=8)
        cdi = self.make_cdi(state, 8)
        dec = SchedulingDecision.zeros(state)
        alloc = ResourceAllocation.zeros(state)
        dec.assoc[0, 0] = 1
        dec.subcarrier[0, 0, 0] = 1
        dec.cache[0, 0] = 1
        dec.x[0, 0] = 1
        alloc.power[0, 0, 0] = 0.4
        rep = ld_revenue(state, dec, alloc, cdi)
        rate = ch.ergodic_rate_table(state, alloc.power, dec.subcarrier, cdi)[0, 0]
        s0 = state.videos[0].size_bits
        want = (rate * state.slices[0].reward_rate
                - 0.4 * state.rrs[0].price_power
                - state.subcarrier_bandwidth * state.rrs[0].price_subcarrier
                - 1.0 * s0 * state.rrs[0].price_cache)  # popularity of the only video
        assert rep.total_revenue == pytest.approx(want, rel=1e-12)

    def test_no_association_no_provisioning(self):
        state = make_state(seed=8)
        cdi = self.make_cdi(state, 9)
        dec = SchedulingDecision.zeros(state)
        dec.cache[0, 0] = 1
        dec.x[:] = 0
        alloc = ResourceAllocation.zeros(state)
        rep = ld_revenue(state, dec, alloc, cdi)
        assert rep.total_reward == 0.0
        assert rep.total_provisioning_cost == 0.0

    def test_hd_never_exceeds_ld(self):
        state = make_state(B=2, U=4, V=2, L=2, N=2, M=2, seed=10)
        cdi = self.make_cdi(state, 10)
        rng = np.random.default_rng(11)
        for _ in range(50):
            dec = random_decision(state, rng)
            alloc = ResourceAllocation(
                power=rng.random((2, 4, 2)) * 0.2,
                processing=rng.random((2, state.n_pairs)) * 1e10,
                backhaul_rate=rng.random((2, state.n_videos)) * 1e7,
                fronthaul_rate=rng.random((2, 2, state.n_videos)) * 1e7,
            )
            ld = ld_revenue(state, dec, alloc, cdi).total_revenue
            hd = hd_revenue(state, dec, alloc, cdi).total_revenue
            assert hd <= ld + 1e-9

    def test_hd_equals_ld_with_single_association(self):
        state = make_state(B=2, U=2, M=2, seed=12)
        cdi = self.make_cdi(state, 12)
        dec = SchedulingDecision.zeros(state)
        alloc = ResourceAllocation.zeros(state)
        dec.assoc[0, 0] = 1          # one user per slice, one cell each
        dec.assoc[1, 1] = 1
        dec.cache[:, 0] = 1
        dec.x[:, 0] = 1
        ld = ld_revenue(state, dec, alloc, cdi)
        hd = hd_revenue(state, dec, alloc, cdi)
        assert ld.total_revenue == pytest.approx(hd.total_revenue, rel=1e-12)

    def test_two_associates_double_hd_provisioning(self):
        state = make_state(B=2, U=2, M=1, seed=13)
        cdi = self.make_cdi(state, 13)
        dec = SchedulingDecision.zeros(state)
        alloc = ResourceAllocation.zeros(state)
        dec.assoc[0, :] = 1           # both slice users at cell 0
        dec.cache[0, 0] = 1
        dec.x[0, 0] = 1
        ld = ld_revenue(state, dec, alloc, cdi)
        hd = hd_revenue(state, dec, alloc, cdi)
        assert hd.per_slice[0].provisioning_cost == \
            pytest.approx(2 * ld.per_slice[0].provisioning_cost, rel=1e-12)
