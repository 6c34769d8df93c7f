import numpy as np
import pytest
from hypothesis import given, strategies as st

from rsma_cran.metrics import (PrecoderSet, RateAllocation, achievable_rates, all_sinrs, check_feasibility,
                               energy_efficiency_phi, fronthaul_usage, objective_psi, qt_common, qt_private,
                               rate_mse, sinr_common, sinr_private, transmit_power)
from rsma_cran.netmodel import ChannelState, SystemConfig
from rsma_cran.structure import (ClusterSets, DecodeStructure, RsmaStructure, build_clusters,
                                 build_decode_structure, empty_decode)

from conftest import random_channel, random_precoders


def scalar_channel(values):
    """B=1, L=1 channel with h[0, k] = values[k]."""
    return ChannelState(np.asarray(values, dtype=complex).reshape(1, -1, 1))


class TestPrivateSinr:
    @pytest.mark.parametrize("p", [0.0, 0.5, 3.0])
    def test_single_user(self, p):
        ch = ChannelState(np.array([[[1.0, 0.0]]], dtype=complex))
        w = PrecoderSet(np.array([[np.sqrt(p), 0.0]], dtype=complex), np.zeros((1, 2), complex))
        assert sinr_private(0, w, ch, empty_decode(1), 1.0) == pytest.approx(p)

    def test_zero_precoders(self, rng):
        ch = random_channel(rng, 2, 3, 2)
        assert sinr_private(1, PrecoderSet.zeros(3, 4), ch, empty_decode(3), 1.0) == 0.0

    def test_two_users_half(self):
        ch = scalar_channel([1.0, 1.0])
        w = PrecoderSet(np.ones((2, 1), complex), np.zeros((2, 1), complex))
        assert sinr_private(0, w, ch, empty_decode(2), 1.0) == pytest.approx(0.5)

    def test_decoded_common_removed(self):
        ch = scalar_channel([1.0, 1.0])
        w = PrecoderSet(np.array([[1.0], [0.0]], complex), np.array([[0.0], [1.0]], complex))
        undecoded = sinr_private(0, w, ch, empty_decode(2), 1.0)
        dec = DecodeStructure((frozenset(), frozenset({0, 1})), ((1,), (1,)))
        assert undecoded == pytest.approx(0.5)
        assert sinr_private(0, w, ch, dec, 1.0) == pytest.approx(1.0)

    def test_monotone_in_own_power(self, rng):
        ch = random_channel(rng, 2, 3, 2)
        base = PrecoderSet.zeros(3, 4)
        vals = []
        for a in (0.1, 0.2, 0.4):
            wp = base.private.copy()
            wp[0] = a * ch.aggregate(0)
            vals.append(sinr_private(0, PrecoderSet(wp, base.common), ch, empty_decode(3), 1.0))
        assert vals[0] < vals[1] < vals[2]


def brute_common_sinr(i, k, w, ch, order_k, noise):
    """Direct enumeration of the common-message denominator for a fixed SIC order."""
    h = ch.aggregate(k)
    num = abs(np.vdot(h, w.common[i])) ** 2
    den = noise
    K = w.private.shape[0]
    for j in range(K):
        den += abs(np.vdot(h, w.private[j])) ** 2
    pos = order_k.index(i)
    for l in range(K):
        never_decoded = l not in order_k
        decoded_later = (not never_decoded) and order_k.index(l) > pos
        if never_decoded or decoded_later:
            den += abs(np.vdot(h, w.common[l])) ** 2
    return num / den


class TestCommonSinr:
    def test_single_user_no_private(self):
        ch = scalar_channel([2.0])
        w = PrecoderSet(np.zeros((1, 1), complex), np.array([[0.5j]]))
        dec = DecodeStructure((frozenset({0}),), ((0,),))
        assert sinr_common(0, 0, w, ch, dec, 0.5) == pytest.approx(1.0 / 0.5)

    def test_zero_common(self, rng):
        ch = random_channel(rng, 1, 2, 2)
        w = random_precoders(rng, 2, 2)
        w = PrecoderSet(w.private, np.zeros_like(w.common))
        dec = DecodeStructure((frozenset({0, 1}), frozenset()), ((0,), (0,)))
        assert sinr_common(0, 1, w, ch, dec, 1.0) == 0.0

    def test_not_decoded(self, rng):
        ch = random_channel(rng, 1, 2, 1)
        with pytest.raises(ValueError):
            sinr_common(1, 0, random_precoders(rng, 2, 1), ch, empty_decode(2), 1.0)

    def test_three_user_chain(self, rng):
        ch = random_channel(rng, 2, 3, 2)
        w = random_precoders(rng, 3, 4)
        order = ((0,), (1,), (0, 2, 1))
        dec = DecodeStructure((frozenset({0, 2}), frozenset({1, 2}), frozenset({2})), order)
        # message 0 is first at user 2: both later commons interfere
        expected = brute_common_sinr(0, 2, w, ch, order[2], 0.7)
        h = ch.aggregate(2)
        manual = abs(np.vdot(h, w.common[0])) ** 2 / (
            sum(abs(np.vdot(h, w.private[j])) ** 2 for j in range(3))
            + abs(np.vdot(h, w.common[2])) ** 2 + abs(np.vdot(h, w.common[1])) ** 2 + 0.7)
        assert expected == pytest.approx(manual, rel=1e-12)
        for i in order[2]:
            assert sinr_common(i, 2, w, ch, dec, 0.7) == pytest.approx(
                brute_common_sinr(i, 2, w, ch, order[2], 0.7), rel=1e-12)

    @given(st.integers(0, 10 ** 6))
    def test_matches_enumeration(self, seed):
        r = np.random.default_rng(seed)
        ch = random_channel(r, 3, 5, 2)
        dec = build_decode_structure(ch, build_clusters(ch, (2, 2)), d=2)
        w = random_precoders(r, 5, 6)
        priv, comm = all_sinrs(w, ch, dec, 1.3)
        for i, k in dec.pairs():
            assert comm[i, k] == pytest.approx(brute_common_sinr(i, k, w, ch, dec.order[k], 1.3), rel=1e-10)
        assert np.isnan(comm[~np.isin(np.arange(25).reshape(5, 5), [i * 5 + k for i, k in dec.pairs()])]).all()
        for k in range(5):
            assert priv[k] == pytest.approx(sinr_private(k, w, ch, dec, 1.3))


class TestRates:
    def test_unit_sinr_is_tau(self):
        ch = scalar_channel([1.0])
        w = PrecoderSet(np.ones((1, 1), complex), np.zeros((1, 1), complex))
        assert achievable_rates(w, ch, empty_decode(1), 1.0, 10.0).private[0] == pytest.approx(10.0)

    def test_common_uses_min(self):
        # SINRs 3 at user 0 and 1 at user 1 for message 0
        ch = scalar_channel([np.sqrt(3.0), 1.0])
        w = PrecoderSet(np.zeros((2, 1), complex), np.array([[1.0], [0.0]], complex))
        dec = DecodeStructure((frozenset({0, 1}), frozenset()), ((0,), (0,)))
        b = achievable_rates(w, ch, dec, 1.0, 10.0)
        assert b.common_pairs[0, 0] == pytest.approx(20.0)
        assert b.common_pairs[0, 1] == pytest.approx(10.0)
        assert b.common[0] == pytest.approx(10.0)

    @pytest.mark.parametrize("p", [0.3, 2.0])
    def test_composed(self, p):
        ch = ChannelState(np.array([[[1.0, 0.0]]], dtype=complex))
        w = PrecoderSet(np.array([[np.sqrt(p), 0.0]], dtype=complex), np.zeros((1, 2), complex))
        assert achievable_rates(w, ch, empty_decode(1), 1.0, 10.0).private[0] == pytest.approx(10 * np.log2(1 + p))


class TestUsage:
    def test_fronthaul_hand_sum(self):
        cl = ClusterSets((frozenset({0, 1}),), (frozenset({0}),))
        r = RateAllocation(np.array([3.0, 4.0]), np.array([2.0, 5.0]))
        assert fronthaul_usage(0, r, cl) == pytest.approx(9.0)

    def test_fronthaul_empty(self):
        cl = ClusterSets((frozenset(),), (frozenset(),))
        assert fronthaul_usage(0, RateAllocation(np.ones(2), np.ones(2)), cl) == 0.0

    def test_power_per_bs(self, rng):
        cl = ClusterSets((frozenset({0}), frozenset({1})), (frozenset({1}), frozenset()))
        w = random_precoders(rng, 2, 4).masked(cl, 2)
        expected = np.sum(np.abs(w.private[0, :2]) ** 2) + np.sum(np.abs(w.common[1, :2]) ** 2)
        assert transmit_power(0, w, cl, 2) == pytest.approx(expected)
        assert transmit_power(0, w, cl, 2) + transmit_power(1, w, cl, 2) == pytest.approx(w.total_power())


class TestObjective:
    def test_zero_gap_alpha_one(self, rng):
        cfg = SystemConfig(alpha=1.0)
        r = RateAllocation(np.array(cfg.desired_rates), np.zeros(6))
        assert objective_psi(random_precoders(rng, 6, 8), r, cfg) == 0.0

    def test_alpha_zero_zero_power(self):
        cfg = SystemConfig(alpha=0.0)
        assert objective_psi(PrecoderSet.zeros(6, 8), RateAllocation.zeros(6), cfg) == 0.0

    def test_hand_value(self):
        cfg = SystemConfig(num_bs=1, num_users=2, alpha=0.25, desired_rates=(4.0, 1.0),
                           criticality_levels=("HI", "LO"), private_cluster_size=1, common_cluster_size=1)
        w = PrecoderSet(np.array([[1.0, 0.0], [0.0, 1j]]), np.zeros((2, 2), complex))
        r = RateAllocation(np.array([2.0, 1.0]), np.array([1.0, 0.0]))
        assert rate_mse(r, cfg.desired_rates) == pytest.approx(0.5)
        assert objective_psi(w, r, cfg) == pytest.approx(0.25 * 0.5 + 0.75 * 2.0)

    @given(st.floats(0, 1), st.floats(0, 1), st.floats(0, 1), st.integers(0, 10 ** 6))
    def test_affine_in_alpha(self, a, b, t, seed):
        r_ = np.random.default_rng(seed)
        cfg = SystemConfig()
        w = random_precoders(r_, 6, 8, 0.1)
        r = RateAllocation(r_.uniform(0, 10, 6), r_.uniform(0, 3, 6))
        mix = t * a + (1 - t) * b
        lhs = objective_psi(w, r, cfg, alpha=mix)
        rhs = t * objective_psi(w, r, cfg, alpha=a) + (1 - t) * objective_psi(w, r, cfg, alpha=b)
        assert lhs == pytest.approx(rhs, rel=1e-10, abs=1e-12)

    def test_phi(self, rng):
        cfg = SystemConfig()
        r = RateAllocation(np.full(6, 2.0), np.zeros(6))
        assert energy_efficiency_phi(PrecoderSet.zeros(6, 8), r, cfg) == pytest.approx(12.0 / cfg.circuit_power)
        assert energy_efficiency_phi(PrecoderSet.zeros(6, 8), RateAllocation.zeros(6), cfg) == 0.0

    @given(st.floats(0, 2 * np.pi), st.integers(0, 10 ** 6))
    def test_phase_invariance(self, phase, seed):
        r_ = np.random.default_rng(seed)
        ch = random_channel(r_, 3, 4, 2)
        dec = build_decode_structure(ch, build_clusters(ch, (2, 2)), d=2)
        w = random_precoders(r_, 4, 6)
        rot = w.scaled(np.exp(1j * phase))
        p0, c0 = all_sinrs(w, ch, dec, 1.0)
        p1, c1 = all_sinrs(rot, ch, dec, 1.0)
        np.testing.assert_allclose(p0, p1, rtol=1e-10)
        np.testing.assert_allclose(c0, c1, rtol=1e-10)
        assert rot.total_power() == pytest.approx(w.total_power())


class TestFeasibility:
    def _setup(self, rng):
        cfg = SystemConfig(num_bs=2, num_users=3, antennas_per_bs=2, desired_rates=(3.0, 3.0, 3.0),
                           criticality_levels=("LO",) * 3)
        ch = random_channel(rng, 2, 3, 2, 1e-6)
        cl = build_clusters(ch, (1, 1))
        s = RsmaStructure(cl, build_decode_structure(ch, cl, 1))
        return cfg, ch, s, 1e-12

    def test_zero_solution(self, rng):
        cfg, ch, s, n = self._setup(rng)
        rep = check_feasibility(PrecoderSet.zeros(3, 4), RateAllocation.zeros(3), ch, s, cfg, n)
        assert rep.feasible and rep.worst >= 0

    def test_rate_violation(self, rng):
        cfg, ch, s, n = self._setup(rng)
        w = PrecoderSet(ch.stacked * 1e3, np.zeros((3, 4), complex)).masked(s.clusters, 2)
        bounds = achievable_rates(w, ch, s.decode, n, cfg.bandwidth)
        r = RateAllocation(bounds.private + 1.0, np.zeros(3))
        rep = check_feasibility(w, r, ch, s, cfg, n)
        assert rep.private_rate == pytest.approx(-1.0 / cfg.bandwidth)
        assert not rep.feasible

    def test_fronthaul_violation(self, rng):
        cfg, ch, s, n = self._setup(rng)
        r = RateAllocation(np.full(3, 30.0), np.zeros(3))
        rep = check_feasibility(PrecoderSet.zeros(3, 4), r, ch, s, cfg, n)
        assert rep.fronthaul < 0 and not rep.feasible

    def test_negative_tol(self, rng):
        cfg, ch, s, n = self._setup(rng)
        with pytest.raises(ValueError):
            check_feasibility(PrecoderSet.zeros(3, 4), RateAllocation.zeros(3), ch, s, cfg, n, tol=-1)


class TestQtSurrogate:
    def test_zero_aux(self, rng):
        ch = random_channel(rng, 1, 2, 2)
        w = random_precoders(rng, 2, 2)
        assert qt_private(0, 0.0, 0.7, w, ch, empty_decode(2), 1.0) == pytest.approx(0.7)

    def test_common_value(self):
        ch = scalar_channel([1.0])
        w = PrecoderSet(np.zeros((1, 1), complex), np.array([[2.0]], complex))
        dec = DecodeStructure((frozenset({0}),), ((0,),))
        # gamma - 2 Re{u* w^H h} + |u|^2 sigma^2 with u = 1: 0.5 - 4 + 1
        assert qt_common(0, 0, 1.0, 0.5, w, ch, dec, 1.0) == pytest.approx(-2.5)
