import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from macts.clock import HardwareClock, LogicalClock, hardware_read, logical_read
from macts.protocol import (
    AtsNode,
    Forward,
    NeighborRecord,
    Node,
    SyncMessage,
    by_hop_error_bound,
    estimate_offset,
    estimate_skew,
    update_rate_multiplier,
)
from macts.simulator import sample_delay


def make_node(h_initial=2, **kw):
    return Node(0, HardwareClock(), LogicalClock(1.0, 0, 0.0), h_initial=h_initial, **kw)


def msg(hw=1_000_000, lg=1_000_000, phi=1.0, hop=0, sender=1, origin=None, seq=1):
    return SyncMessage(hw, lg, phi, hop, sender, sender if origin is None else origin, seq)


class TestEstimateSkew:
    # pairs are (receiver H, transmitter H); the estimate is transmitter over receiver
    def test_first_packet_returns_prior(self):
        assert estimate_skew(NeighborRecord(1), (10, 20)) == 1.0

    def test_nominal(self):
        rec = NeighborRecord(1, hw_old_pair=(0, 0))
        assert estimate_skew(rec, (30_000_000, 30_000_000)) == 1.0

    def test_fast_receiver(self):
        rec = NeighborRecord(1, hw_old_pair=(0, 0))
        assert estimate_skew(rec, (30_001_200, 30_000_000)) == pytest.approx(30_000_000 / 30_001_200)

    def test_fast_sender_slow_receiver(self):
        rec = NeighborRecord(1, hw_old_pair=(0, 0))
        got = estimate_skew(rec, (29_998_800, 30_001_200))
        assert got == pytest.approx((1 + 40e-6) / (1 - 40e-6), rel=1e-12)

    @pytest.mark.parametrize("pair", [(0, 10), (-5, 10), (10, 0), (10, -3)])
    def test_non_positive_interval_keeps_prior(self, pair):
        rec = NeighborRecord(1, hw_old_pair=(0, 0), phi_hat=1.5)
        assert estimate_skew(rec, pair) == 1.5

    @given(st.floats(-40, 40), st.floats(-40, 40), st.floats(0, 1e9))
    def test_quantization_bound_against_clocks(self, prx, ptx, t0):
        rx, tx = HardwareClock(prx), HardwareClock(ptx)
        b = 30e6
        old = (hardware_read(rx, t0), hardware_read(tx, t0))
        new = (hardware_read(rx, t0 + b), hardware_read(tx, t0 + b))
        got = estimate_skew(NeighborRecord(1, hw_old_pair=old), new)
        assert abs(got - tx.rate / rx.rate) <= 2 / b * 1.0001


class TestEstimateOffset:
    def test_substitution(self):
        theta_hat = estimate_offset(1_000_103, 1_000_000, 3.33)
        assert theta_hat == pytest.approx(99.67)
        assert theta_hat - 100 == pytest.approx(-0.33)

    def test_exact_compensation(self):
        assert estimate_offset(1003.33, 1000, 3.33) == pytest.approx(0, abs=1e-12)

    def test_monte_carlo_mean_residual(self):
        rng = np.random.default_rng(123)
        d = np.array([sample_delay(rng, 3.33, 0.07) for _ in range(10_000)])
        theta_true = 250.0
        residual = [estimate_offset(1000 + theta_true + x, 1000, 3.33) - theta_true for x in d]
        assert abs(np.mean(residual)) < 0.01


class TestRateMultiplier:
    def test_fixed_point(self):
        assert update_rate_multiplier(1, 1, 1, 0.5) == 1

    def test_half_step(self):
        assert update_rate_multiplier(1, 1.00004, 1, 0.5) == pytest.approx(1.00002, abs=1e-15)

    def test_midpoint(self):
        assert update_rate_multiplier(1.0001, 1, 0.9999, 0.5) == pytest.approx(1.0, abs=1e-15)

    @pytest.mark.parametrize("args", [(0, 1, 1), (1, -1, 1), (1, 1, 0)])
    def test_rejects_non_positive(self, args):
        with pytest.raises(ValueError):
            update_rate_multiplier(*args, 0.5)

    @given(st.floats(0.5, 2), st.floats(0.5, 2), st.floats(0.5, 2), st.floats(0.01, 0.99))
    def test_convex_combination(self, pi, ph, pj, rho):
        out = update_rate_multiplier(pi, ph, pj, rho)
        lo, hi = sorted((pi, ph * pj))
        assert lo * (1 - 1e-12) <= out <= hi * (1 + 1e-12)


class TestByHopBound:
    def test_single_hop_perfect(self):
        assert by_hop_error_bound(1, [3.33], [0.0], 500) == pytest.approx(0)

    def test_linear_delay_sum(self):
        assert by_hop_error_bound(3, [3.40] * 3, [0] * 3, 500) == pytest.approx(0.21)

    def test_skew_term(self):
        assert by_hop_error_bound(2, [3.33] * 2, [40, 40], 1000) == pytest.approx(0.08)

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            by_hop_error_bound(2, [3.33], [0, 0], 500)


class TestNode:
    def test_broadcast_message(self):
        n = make_node()
        m = n.on_broadcast_timer(10**6, 10**6)
        assert (m.hw_ts_us, m.logical_ts_us, m.phi, m.hop_count) == (10**6, 10**6, 1.0, 0)
        assert m.sender_id == 0 and m.origin_id == 0

    def test_broadcast_carries_updated_phi(self):
        n = make_node()
        n.lc = LogicalClock(1.00002, 0, 0.0)
        assert n.on_broadcast_timer(5, 5).phi == 1.00002

    def test_h1_never_forwards(self):
        n = make_node(h_initial=1)
        for k in range(5):
            assert n.on_receive(msg(seq=k + 1), 1_000_003 + k, 1_000_003 + k) is None

    def test_h2_forwards_origin_only(self):
        n = make_node(h_initial=2)
        fwd = n.on_receive(msg(hop=0), 1_000_003, 1_000_003)
        assert fwd == Forward(1, 1, 1)
        assert n.on_receive(msg(hop=1, sender=2, origin=5), 1_000_004, 1_000_004) is None

    def test_forward_restamps_with_own_clock(self):
        n = make_node(h_initial=3)
        n.lc = LogicalClock(1.1, 0, 0.0)
        out = n.forward_message(Forward(1, 7, 4), 2000, 2200)
        assert out == SyncMessage(2000, 2200, 1.1, 1, 0, 7, 4)

    def test_each_flood_forwarded_once(self):
        n = make_node(h_initial=3)
        assert n.on_receive(msg(hop=0, sender=1, origin=1), 10, 10) is not None
        assert n.on_receive(msg(hop=1, sender=2, origin=1), 11, 11) is None

    def test_own_flood_not_forwarded(self):
        n = make_node(h_initial=3)
        n.on_broadcast_timer(5, 5)
        assert n.on_receive(msg(hop=1, sender=2, origin=0, seq=1), 10, 10) is None

    def test_excess_hop_count_dropped(self):
        n = make_node(h_initial=2)
        before = n.lc
        assert n.on_receive(msg(hop=3), 10, 10) is None
        assert n.dropped == 1 and n.lc == before and not n.neighbor_records

    def test_synchronized_fixed_point(self):
        n = make_node(h_initial=1, d_fixed_us=3.0)
        for k in range(1, 6):
            t = k * 30_000_000
            n.on_receive(msg(hw=t, lg=t, seq=k), t + 3, t + 3)
            assert n.lc.phi == 1.0
            assert logical_read(n.lc, t + 3) == t + 3
            assert n.neighbor_records[1].phi_hat == 1.0

    def test_update_moves_half_way(self):
        n = make_node(h_initial=1, d_fixed_us=0.0)
        n.on_receive(msg(hw=1000, lg=1000), 1200, 1200)
        assert n.lc.exact(1200) == pytest.approx(1100)
        assert n.neighbor_records[1].last_local_error_us == pytest.approx(200)

    def test_raw_error_mode(self):
        n = make_node(h_initial=1, d_fixed_us=3.0, local_error_mode="raw")
        n.on_receive(msg(hw=1000, lg=1000), 1003, 1003)
        assert n.neighbor_records[1].last_local_error_us == 3

    def test_skew_pairs_from_origin_packets_only(self):
        n = make_node(h_initial=3)
        n.on_receive(msg(hw=1000, lg=1000, hop=1, sender=1, origin=9), 1000, 1000)
        assert n.neighbor_records[1].hw_old_pair is None
        n.on_receive(msg(hw=2000, lg=2000, hop=0, sender=1, seq=2), 2000, 2000)
        assert n.neighbor_records[1].hw_old_pair == (2000, 2000)


class TestController:
    def setup_node(self, errors, h_current, h_initial=2, heard_at=0):
        n = make_node(h_initial=h_initial)
        n.h_current = h_current
        for j, e in enumerate(errors, start=1):
            n.neighbor_records[j] = NeighborRecord(j, last_local_error_us=e, last_heard_hw_us=heard_at)
        return n

    def test_all_below_threshold_steps_down(self):
        assert self.setup_node([1.2, 3.0, 4.9], 2).controller_step(10) == 1

    def test_divergence_steps_up(self):
        assert self.setup_node([1.0, 12.0], 1).controller_step(10) == 2

    def test_lower_clamp(self):
        assert self.setup_node([1.0, 2.0], 1).controller_step(10) == 1

    def test_upper_clamp(self):
        assert self.setup_node([50.0], 2).controller_step(10) == 2

    def test_no_data_escalates(self):
        n = make_node(h_initial=4)
        n.h_current = 2
        assert n.controller_step(10) == 3

    def test_stale_neighbour_ignored(self):
        n = self.setup_node([1.0], 2, heard_at=100_000_000)
        n.neighbor_records[9] = NeighborRecord(9, last_local_error_us=40.0, last_heard_hw_us=0)
        assert n.controller_step(100_000_000 + 10) == 1

    @given(st.lists(st.floats(0, 30), min_size=1, max_size=6), st.integers(1, 6), st.integers(1, 6))
    def test_depth_stays_in_range(self, errors, h0, hi):
        h0 = min(h0, hi)
        n = self.setup_node(errors, h0, h_initial=hi)
        for _ in range(8):
            assert 1 <= n.controller_step(10) <= hi


class TestAtsNode:
    def test_drops_forwarded_packets(self):
        a = AtsNode(0, HardwareClock(), LogicalClock(1.0, 0, 0.0))
        a.on_receive(msg(hop=1), 10, 10)
        assert a.dropped == 1

    def test_matches_node_with_same_compensation(self):
        rng = np.random.default_rng(5)
        a = AtsNode(0, HardwareClock(), LogicalClock(1.0, 0, 0.0), d_fixed_us=3.33)
        n = Node(0, HardwareClock(), LogicalClock(1.0, 0, 0.0), h_initial=1, d_fixed_us=3.33)
        t = 0
        for k in range(1, 40):
            t += 30_000_000 + int(rng.integers(-2000, 2000))
            sender = int(rng.integers(1, 4))
            m = msg(hw=t + int(rng.integers(-500, 500)), lg=t + int(rng.integers(-500, 500)),
                    phi=float(1 + rng.normal(0, 1e-5)), sender=sender, seq=k)
            assert a.on_receive(m, t, logical_read(a.lc, t)) is None
            assert n.on_receive(m, t, logical_read(n.lc, t)) is None
            assert a.lc == n.lc
