import itertools
import math

import numpy as np
import pytest

from mecvid import channel as ch
from mecvid.economics import delivery_revenue, hd_revenue, ld_revenue
from mecvid.intprog import (LinearProgram, branch_and_bound, brute_force_oracle,
                            build_step2, decode_step2, linearize_product, lp_solve,
                            rate_coefficients)
from mecvid.scheduling import RequestProfile, ResourceAllocation, SchedulingDecision
from mecvid.sca import minimal_continuous

from util import make_state


def vertex_enumeration_max(lp):
    """Oracle: enumerate all basic points of {A x <= b, lb <= x <= ub} for <= 6 vars.

    Collects every intersection of n active constraints (rows or bounds),
    keeps the feasible ones and returns the best objective value.
    """
    n = lp.n_vars
    rows = []
    rhs = []
    for idx, val, sense, r, _ in lp.rows:
        a = np.zeros(n)
        a[idx] = val
        if sense in ("<", "="):
            rows.append(a.copy())
            rhs.append(r)
        if sense in (">", "="):
            rows.append(-a)
            rhs.append(-r)
    for j in range(n):
        e = np.zeros(n)
        e[j] = 1
        if np.isfinite(lp.ub[j]):
            rows.append(e.copy())
            rhs.append(lp.ub[j])
        if np.isfinite(lp.lb[j]):
            rows.append(-e)
            rhs.append(-lp.lb[j])
    rows = np.array(rows)
    rhs = np.array(rhs)
    best = None
    for combo in itertools.combinations(range(len(rows)), n):
        A = rows[list(combo)]
        if abs(np.linalg.det(A)) < 1e-10:
            continue
        x = np.linalg.solve(A, rhs[list(combo)])
        if np.all(rows @ x <= rhs + 1e-7):
            v = float(np.dot(lp.obj, x)) + lp.obj_const
            if best is None or v > best:
                best = v
    return best


def random_lp(rng, n_vars, n_rows, binary=False):
    lp = LinearProgram()
    for j in range(n_vars):
        if binary:
            lp.add_var(f"x{j}", obj=float(rng.normal()))
        else:
            lp.add_var(f"x{j}", lb=0.0, ub=float(rng.uniform(0.5, 3.0)),
                       binary=False, obj=float(rng.normal()))
    for i in range(n_rows):
        coeffs = [(j, float(rng.normal())) for j in range(n_vars)
                  if rng.random() < 0.8]
        lp.add_row(coeffs, "<", float(rng.uniform(0.5, 2.5)), f"r{i}")
    return lp


class TestLpSolve:
    def test_simple_bound(self):
        lp = LinearProgram()
        x = lp.add_var("x", lb=0, ub=3, binary=False, obj=1.0)
        res = lp_solve(lp)
        assert res.status == "optimal"
        assert res.value == pytest.approx(3.0)

    def test_infeasible_and_unbounded_distinct(self):
        lp = LinearProgram()
        x = lp.add_var("x", lb=0, ub=1, binary=False, obj=1.0)
        lp.add_row([(x, 1.0)], ">", 2.0)
        assert lp_solve(lp).status == "infeasible"
        lp2 = LinearProgram()
        lp2.add_var("x", lb=0, ub=math.inf, binary=False, obj=1.0)
        assert lp_solve(lp2).status == "unbounded"

    def test_degenerate_ties_terminate(self):
        lp = LinearProgram()
        x = lp.add_var("x", lb=0, ub=1, binary=False, obj=1.0)
        y = lp.add_var("y", lb=0, ub=1, binary=False, obj=1.0)
        for _ in range(4):          # duplicated rows force degeneracy
            lp.add_row([(x, 1.0), (y, 1.0)], "<", 1.0)
        res = lp_solve(lp)
        assert res.status == "optimal"
        assert res.value == pytest.approx(1.0)

    def test_matches_vertex_enumeration(self):
        rng = np.random.default_rng(2)
        solved = 0
        for trial in range(40):
            lp = random_lp(rng, n_vars=int(rng.integers(2, 5)),
                           n_rows=int(rng.integers(1, 5)))
            res = lp_solve(lp)
            want = vertex_enumeration_max(lp)
            if res.status != "optimal":
                assert want is None
                continue
            assert want == pytest.approx(res.value, rel=1e-7, abs=1e-7)
            solved += 1
        assert solved >= 25


class TestBranchAndBound:
    def test_simple_binary(self):
        lp = LinearProgram()
        x = lp.add_var("x", obj=1.0)
        y = lp.add_var("y", obj=1.0)
        lp.add_row([(x, 1.0), (y, 1.0)], "<", 1.0)
        res = branch_and_bound(lp)
        assert res.status == "optimal"
        assert res.value == pytest.approx(1.0)

    def test_integral_relaxation_no_branching(self):
        lp = LinearProgram()
        x = lp.add_var("x", obj=2.0)
        y = lp.add_var("y", obj=1.0)
        lp.add_row([(x, 1.0)], "<", 1.0)
        res = branch_and_bound(lp)
        assert res.status == "optimal"
        assert res.nodes == 1
        assert res.value == pytest.approx(3.0)

    def test_infeasible(self):
        lp = LinearProgram()
        x = lp.add_var("x", obj=1.0)
        lp.add_row([(x, 1.0)], ">", 2.0)
        assert branch_and_bound(lp).status == "infeasible"

    def test_matches_oracle_on_random_ilps(self):
        rng = np.random.default_rng(3)
        for trial in range(30):
            lp = random_lp(rng, n_vars=10, n_rows=6, binary=True)
            res = branch_and_bound(lp)
            try:
                want, _ = brute_force_oracle(lp)
            except ValueError:
                assert res.status == "infeasible"
                continue
            assert res.status == "optimal"
            assert res.value == pytest.approx(want, abs=1e-6)

    def test_bound_dominates_relaxation(self):
        rng = np.random.default_rng(4)
        for _ in range(10):
            lp = random_lp(rng, n_vars=8, n_rows=5, binary=True)
            relax = lp_solve(lp)
            res = branch_and_bound(lp)
            if res.status == "optimal":
                assert res.value <= relax.value + 1e-9

    def test_mixed_continuous(self):
        lp = LinearProgram()
        x = lp.add_var("x", obj=1.0)                       # binary
        y = lp.add_var("y", lb=0, ub=2.0, binary=False, obj=0.5)
        lp.add_row([(x, 1.0), (y, 1.0)], "<", 2.5)
        res = branch_and_bound(lp)
        want, _ = brute_force_oracle(lp)
        assert res.value == pytest.approx(want, abs=1e-9)
        assert res.value == pytest.approx(1.75)

    def test_node_limit_reports_incumbent(self):
        rng = np.random.default_rng(5)
        lp = random_lp(rng, n_vars=16, n_rows=10, binary=True)
        res = branch_and_bound(lp, node_limit=3)
        assert res.status in ("node-limit", "optimal")
        if res.status == "node-limit":
            assert res.bound is not None


class TestBruteForce:
    def test_single_variable(self):
        lp = LinearProgram()
        lp.add_var("x", obj=-2.0)
        val, x = brute_force_oracle(lp)
        assert val == 0.0 and x[0] == 0.0
        lp2 = LinearProgram()
        lp2.add_var("x", obj=2.0)
        val, x = brute_force_oracle(lp2)
        assert val == 2.0 and x[0] == 1.0

    def test_budget_exhaustion_signals(self):
        rng = np.random.default_rng(6)
        lp = random_lp(rng, n_vars=22, n_rows=1, binary=True)
        with pytest.raises(RuntimeError, match="too-large"):
            brute_force_oracle(lp, node_budget=50)


class TestLinearizeProduct:
    def test_truth_table(self):
        for a, b in itertools.product((0, 1), repeat=2):
            lp = LinearProgram()
            x = lp.add_var("x")
            y = lp.add_var("y")
            z = linearize_product(lp, x, y, "z", obj=1.0)
            lp.add_row([(x, 1.0)], "=", float(a))
            lp.add_row([(y, 1.0)], "=", float(b))
            # maximize z subject to the triple: z is forced to a*b either way
            res_hi = branch_and_bound(lp)
            assert res_hi.value == pytest.approx(a * b, abs=1e-9)
            lp.obj[z] = -1.0
            res_lo = branch_and_bound(lp)
            assert -res_lo.value == pytest.approx(a * b, abs=1e-9)


def tiny_delivery_setup(seed=0, with_cache=True, U=2):
    state = make_state(B=2, U=U, V=2, L=2, N=2, M=2, seed=seed)
    rng = np.random.default_rng(seed)
    csi = ch.sample_csi(state, seed=seed)
    dec = SchedulingDecision.zeros(state)
    d = state.distances_km()
    for u in range(U):
        b = int(np.argmin(d[:, u]))
        dec.assoc[b, u] = 1
        dec.subcarrier[b, u, :] = 1
    profile = RequestProfile.from_choices(state, rng.integers(0, state.n_videos, U))
    cache = np.zeros((2, state.n_videos), dtype=np.int8)
    if with_cache:
        cache[0, 1] = 1
        cache[1, state.n_videos - 1] = 1
    power = np.zeros((2, U, 2))
    for b in range(2):
        k = dec.subcarrier[b].sum()
        if k:
            power[b] = dec.subcarrier[b] * (state.rrs[b].max_power / k)
    rates = ch.rate_table(state, power, dec.subcarrier, csi.gains)
    dec.cache[:] = cache
    for b in range(2):
        for v in range(state.n_videos):
            if (profile.request[:, v] * dec.assoc[b]).sum() > 0:
                dec.o[b, v] = 1
    phi, r_bh, r_fh = minimal_continuous(state, dec, rates, profile)
    # provision generous link rates so several events are available
    r_bh = np.maximum(r_bh, rates.max() * (dec.o > 0))
    alloc = ResourceAllocation(power=power, processing=phi + 1e9,
                               backhaul_rate=r_bh * 1.5 + rates.max(),
                               fronthaul_rate=np.ones((2, 2, state.n_videos)) * rates.max() * 2)
    return state, csi, dec, alloc, profile, cache


class TestBuildStep2:
    def test_single_everything_matches_enumeration(self):
        # B=1, U=1, V=1, L=1: the only choice is cache-hit vs backhaul
        state = make_state(B=1, U=1, V=1, L=1, N=1, M=1, seed=1)
        csi = ch.sample_csi(state, seed=1)
        profile = RequestProfile.from_choices(state, [0])
        power = np.full((1, 1, 1), state.rrs[0].max_power)
        rate = ch.rate_table(state, power, np.ones((1, 1, 1), np.int8), csi.gains)[0, 0]
        alloc = ResourceAllocation(power=power,
                                   processing=np.zeros((1, 0)),
                                   backhaul_rate=np.full((1, 1), rate * 1.2),
                                   fronthaul_rate=np.zeros((1, 1, 1)))
        cache = np.ones((1, 1), dtype=np.int8)
        lp = build_step2(state, alloc, csi, "delivery", profile, fixed_cache=cache)
        res = branch_and_bound(lp)
        assert res.status == "optimal"
        # enumeration oracle over {unassociated, x-serve, o-serve}
        psi = state.slices[0].reward_rate
        ws = state.subcarrier_bandwidth
        s0 = state.videos[0].size_bits
        sub_cost = ws * state.rrs[0].price_subcarrier
        pow_cost = power.sum() * state.rrs[0].price_power
        best = max(
            -pow_cost,                                                  # drop user
            rate * psi - pow_cost - sub_cost - s0 * state.rrs[0].price_cache,
            rate * psi - pow_cost - sub_cost
            - alloc.backhaul_rate[0, 0] * state.links.price_backhaul,
        )
        assert res.value == pytest.approx(best, rel=1e-9)
        dec = decode_step2(state, lp, res.x)
        assert dec.x[0, 0] == 1 or dec.o[0, 0] == 1

    def test_zero_prices_associate_everyone(self):
        state = make_state(B=2, U=2, V=2, L=2, N=2, M=2, seed=2)
        from test_economics import zero_price_state
        state = zero_price_state(state)
        csi = ch.sample_csi(state, seed=2)
        profile = RequestProfile.from_choices(state, [0, 1])
        rng = np.random.default_rng(2)
        power = rng.random((2, 2, 2)) * 0.2
        alloc = ResourceAllocation(power=power,
                                   processing=np.ones((2, state.n_pairs)) * 1e9,
                                   backhaul_rate=np.ones((2, state.n_videos)) * 1e8,
                                   fronthaul_rate=np.ones((2, 2, state.n_videos)) * 1e7)
        cache = np.ones((2, state.n_videos), dtype=np.int8)
        lp = build_step2(state, alloc, csi, "delivery", profile, fixed_cache=cache)
        res = branch_and_bound(lp)
        dec = decode_step2(state, lp, res.x)
        assert dec.assoc.sum(axis=0).min() == 1   # every user associated

    def test_auxiliaries_equal_products_and_value_matches_economics(self):
        for seed in range(6):
            state, csi, dec0, alloc, profile, cache = tiny_delivery_setup(seed)
            lp = build_step2(state, alloc, csi, "delivery", profile,
                             fixed_cache=cache)
            res = branch_and_bound(lp)
            assert res.status == "optimal", seed
            assert_auxiliaries_consistent(lp, res.x)
            dec = decode_step2(state, lp, res.x)
            rep = delivery_revenue(state, dec, alloc, csi, profile)
            assert res.value == pytest.approx(rep.total_revenue, abs=1e-9 +
                                              1e-9 * abs(rep.total_revenue)), seed

    def test_ld_value_matches_economics(self):
        for seed in range(4):
            state, cdi, dec0, alloc = tiny_placement_setup(seed)
            lp = build_step2(state, alloc, cdi, "ld")
            res = branch_and_bound(lp)
            assert res.status == "optimal", seed
            dec = decode_step2(state, lp, res.x)
            rep = ld_revenue(state, dec, alloc, cdi)
            assert res.value == pytest.approx(rep.total_revenue, abs=1e-9 +
                                              1e-9 * abs(rep.total_revenue)), seed
            assert_auxiliaries_consistent(lp, res.x)

    def test_hd_value_matches_economics(self):
        for seed in range(4):
            state, cdi, dec0, alloc = tiny_placement_setup(seed)
            lp = build_step2(state, alloc, cdi, "hd")
            res = branch_and_bound(lp)
            assert res.status == "optimal", seed
            dec = decode_step2(state, lp, res.x)
            rep = hd_revenue(state, dec, alloc, cdi)
            assert res.value == pytest.approx(rep.total_revenue, abs=1e-9 +
                                              1e-9 * abs(rep.total_revenue)), seed

    def test_ld_dominates_hd_build(self):
        for seed in range(3):
            state, cdi, dec0, alloc = tiny_placement_setup(seed)
            ld = branch_and_bound(build_step2(state, alloc, cdi, "ld"))
            hd = branch_and_bound(build_step2(state, alloc, cdi, "hd"))
            assert ld.value >= hd.value - 1e-9

    def test_step2_equals_brute_force(self):
        for seed in range(3):
            state, csi, dec0, alloc, profile, cache = tiny_delivery_setup(seed)
            lp = build_step2(state, alloc, csi, "delivery", profile,
                             fixed_cache=cache)
            res = branch_and_bound(lp)
            want, _ = brute_force_oracle(lp, node_budget=3_000_000)
            assert res.value == pytest.approx(want, abs=1e-6), seed

    def test_delivery_feasible_region_nested_in_placement(self):
        state, csi, dec0, alloc, profile, cache = tiny_delivery_setup(3)
        cdi = ch.ChannelData(samples=(csi,), mean_gains=csi.gains)
        lp_del = build_step2(state, alloc, csi, "delivery", profile,
                             fixed_cache=cache)
        res = branch_and_bound(lp_del)
        dec = decode_step2(state, lp_del, res.x)
        # the adopted events stay within what the cache makes possible
        from mecvid.scheduling import check_serving
        assert "storage-prereq" not in \
            {v.code for v in check_serving(state, dec, profile, "delivery").violations}


def tiny_placement_setup(seed=0):
    state = make_state(B=2, U=2, V=2, L=2, N=2, M=2, seed=seed + 50)
    rng = np.random.default_rng(seed)
    cdi = ch.sample_cdi(state, 3, seed=seed)
    dec = SchedulingDecision.zeros(state)
    d = state.distances_km()
    for u in range(2):
        b = int(np.argmin(d[:, u]))
        dec.assoc[b, u] = 1
        dec.subcarrier[b, u, :] = 1
    power = np.zeros((2, 2, 2))
    for b in range(2):
        k = dec.subcarrier[b].sum()
        if k:
            power[b] = dec.subcarrier[b] * (state.rrs[b].max_power / k)
    rates = ch.ergodic_rate_table(state, power, dec.subcarrier, cdi)
    for b in range(2):
        if dec.assoc[b].sum() > 0:
            dec.o[b, :] = 1
    phi, r_bh, r_fh = minimal_continuous(state, dec, rates, None)
    alloc = ResourceAllocation(
        power=power, processing=np.maximum(phi, 2e9),
        backhaul_rate=np.maximum(r_bh, rates.max() * 1.2),
        fronthaul_rate=np.ones((2, 2, state.n_videos)) * rates.max() * 1.5)
    return state, cdi, dec, alloc


def assert_auxiliaries_consistent(lp, x):
    """Every three-row product variable equals the product of its parents."""
    checked = 0
    for idx, val, sense, rhs, name in lp.rows:
        if not name.endswith("_ge_sum"):
            continue
        zv, xv, yv = (round(x[idx[0]]), round(x[idx[1]]), round(x[idx[2]]))
        assert zv == xv * yv, f"{name}: {zv} != {xv}*{yv}"
        checked += 1
    assert checked > 0
