"""Per-node state machines for single-hop (ATS) and multi-hop (MACTS) sync.

Each node periodically broadcasts ``<H, L, phi, hop>``. A receiver estimates
the relative hardware rate of the transmitter from two packets, averages its
rate multiplier with the transmitter's, and moves its logical clock half way
toward the transmitter's delay-compensated logical time. MACTS nodes forward
what they receive, re-stamped with their own clocks, until the hop budget is
spent; a local controller shrinks that budget once neighbours agree to within
a threshold and grows it again when they drift apart.

Nodes are mutable and owned by the simulation engine. The estimation steps are
plain functions so they can be tested on their own.
"""

from __future__ import annotations

from collections.abc import Sequence
from dataclasses import dataclass, field
from typing import NamedTuple

from macts.clock import HardwareClock, LogicalClock, apply_update

RHO_V = 0.5
XI_US = 5.0
D_FIXED_US = 3.33
BROADCAST_PERIOD_S = 30.0
FORWARD_LATENCY_US = 500.0

LOCAL_ERROR_MODES = ("compensated", "raw")


@dataclass(frozen=True, slots=True)
class SyncMessage:
    """A broadcast packet.

    ``origin_id``/``origin_seq`` name the flood a packet belongs to. They are
    not used for synchronization, only so a node forwards each flood once.
    """

    hw_ts_us: int
    logical_ts_us: int
    phi: float
    hop_count: int
    sender_id: int
    origin_id: int
    origin_seq: int


class Forward(NamedTuple):
    """A pending forward; timestamps are filled in when it is transmitted."""

    hop_count: int
    origin_id: int
    origin_seq: int


@dataclass(slots=True)
class NeighborRecord:
    neighbor_id: int
    hw_old_pair: tuple[int, int] | None = None  # (receiver H, transmitter H)
    phi_hat: float = 1.0
    last_local_error_us: float | None = None
    last_heard_hw_us: int | None = None


def estimate_skew(rec: NeighborRecord, new_pair: tuple[int, int]) -> float:
    """Relative rate of the transmitter as seen by the receiver.

    ``new_pair`` is ``(H_receiver, H_transmitter)`` for the current packet.
    Returns ``dH_transmitter / dH_receiver`` over the interval since the
    stored pair, i.e. the factor by which the receiver must scale its own
    hardware rate to match the transmitter's. Without a stored pair, or when
    either interval is not positive, the prior estimate is returned.
    """
    if rec.hw_old_pair is None:
        return rec.phi_hat
    d_rx = new_pair[0] - rec.hw_old_pair[0]
    d_tx = new_pair[1] - rec.hw_old_pair[1]
    if d_rx <= 0 or d_tx <= 0:
        return rec.phi_hat
    return d_tx / d_rx


def estimate_offset(logical_rx_us: float, logical_tx_us: float, d_fixed_us: float) -> float:
    """Delay-compensated offset of the receiver relative to the transmitter."""
    return logical_rx_us - logical_tx_us - d_fixed_us


def update_rate_multiplier(phi_i: float, phi_hat: float, phi_j: float, rho_v: float) -> float:
    if phi_i <= 0 or phi_hat <= 0 or phi_j <= 0:
        raise ValueError(f"rates must be positive: {phi_i}, {phi_hat}, {phi_j}")
    if not 0 < rho_v < 1:
        raise ValueError(f"averaging factor must be in (0, 1), got {rho_v}")
    return rho_v * phi_i + (1 - rho_v) * (phi_hat * phi_j)


def by_hop_error_bound(
    k: int,
    delay_samples_us: Sequence[float],
    skew_errors_ppm: Sequence[float],
    forward_latency_us: float,
    d_fixed_us: float = D_FIXED_US,
) -> float:
    """Error accumulated along a k-hop forwarding chain.

    Sums the per-hop delay residual ``D - d_fixed`` and the drift each
    forwarder's skew error builds up while it holds the packet.
    """
    if k < 1:
        raise ValueError(f"hop count must be >= 1, got {k}")
    if len(delay_samples_us) != k or len(skew_errors_ppm) != k:
        raise ValueError(
            f"expected {k} samples, got {len(delay_samples_us)} delays "
            f"and {len(skew_errors_ppm)} skew errors"
        )
    delay_part = sum(d - d_fixed_us for d in delay_samples_us)
    skew_part = sum(abs(e) * forward_latency_us for e in skew_errors_ppm) / 1e6
    return delay_part + skew_part


@dataclass(slots=True)
class Node:
    """MACTS node. With ``h_initial == 1`` it behaves as plain ATS."""

    node_id: int
    hw: HardwareClock
    lc: LogicalClock = field(default_factory=LogicalClock)
    h_initial: int = 1
    h_current: int = 0
    xi_us: float = XI_US
    d_fixed_us: float = D_FIXED_US
    rho_v: float = RHO_V
    broadcast_period_s: float = BROADCAST_PERIOD_S
    local_error_mode: str = "compensated"
    neighbor_records: dict[int, NeighborRecord] = field(default_factory=dict)
    seq: int = 0
    dropped: int = 0
    _last_forwarded: dict[int, int] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.h_initial < 1:
            raise ValueError(f"initial hop depth must be >= 1, got {self.h_initial}")
        if not 0 < self.rho_v < 1:
            raise ValueError(f"averaging factor must be in (0, 1), got {self.rho_v}")
        if self.local_error_mode not in LOCAL_ERROR_MODES:
            raise ValueError(f"unknown local error mode {self.local_error_mode!r}")
        if self.h_current == 0:
            self.h_current = self.h_initial

    @property
    def phi(self) -> float:
        return self.lc.phi

    def on_broadcast_timer(self, hw_now: int, logical_now: int) -> SyncMessage:
        self.seq += 1
        self._last_forwarded[self.node_id] = self.seq
        return SyncMessage(hw_now, logical_now, self.lc.phi, 0, self.node_id, self.node_id, self.seq)

    def forward_message(self, fwd: Forward, hw_now: int, logical_now: int) -> SyncMessage:
        return SyncMessage(
            hw_now, logical_now, self.lc.phi, fwd.hop_count, self.node_id,
            fwd.origin_id, fwd.origin_seq,
        )

    def on_receive(self, msg: SyncMessage, hw_rx: int, logical_rx: int) -> Forward | None:
        """Process ``msg``; return a forward request if it should be relayed."""
        if msg.hop_count > self.h_initial or msg.hop_count < 0:
            self.dropped += 1
            return None
        rec = self.neighbor_records.get(msg.sender_id)
        if rec is None:
            rec = self.neighbor_records[msg.sender_id] = NeighborRecord(msg.sender_id)

        # Rate pairs come from origin packets only: forwards from the same
        # transmitter can be milliseconds apart, where 1 us quantization
        # would swamp the rate estimate.
        if msg.hop_count == 0:
            pair = (hw_rx, msg.hw_ts_us)
            if rec.hw_old_pair is None or pair[0] > rec.hw_old_pair[0]:
                rec.phi_hat = estimate_skew(rec, pair)
                rec.hw_old_pair = pair

        theta = estimate_offset(logical_rx, msg.logical_ts_us, self.d_fixed_us)
        new_phi = update_rate_multiplier(self.lc.phi, rec.phi_hat, msg.phi, self.rho_v)
        # theta is receiver minus transmitter: step back by half of it
        self.lc = apply_update(self.lc, hw_rx, new_phi, -theta / 2)

        if self.local_error_mode == "compensated":
            rec.last_local_error_us = abs(theta)
        else:
            rec.last_local_error_us = float(abs(logical_rx - msg.logical_ts_us))
        rec.last_heard_hw_us = hw_rx

        hop = msg.hop_count + 1
        if hop >= self.h_current or msg.origin_id == self.node_id:
            return None
        if self._last_forwarded.get(msg.origin_id, -1) >= msg.origin_seq:
            return None
        self._last_forwarded[msg.origin_id] = msg.origin_seq
        return Forward(hop, msg.origin_id, msg.origin_seq)

    def locally_converged(self, hw_now: int) -> bool:
        horizon = 2 * self.broadcast_period_s * 1e6
        errors = [
            r.last_local_error_us
            for r in self.neighbor_records.values()
            if r.last_heard_hw_us is not None
            and r.last_local_error_us is not None
            and hw_now - r.last_heard_hw_us <= horizon
        ]
        return bool(errors) and all(e < self.xi_us for e in errors)

    def controller_step(self, hw_now: int) -> int:
        """Adjust the hop depth once per broadcast period; returns the new depth."""
        if self.locally_converged(hw_now):
            self.h_current = max(1, self.h_current - 1)
        else:
            self.h_current = min(self.h_initial, self.h_current + 1)
        return self.h_current


@dataclass(slots=True)
class AtsNode:
    """Single-hop average time synchronization baseline.

    No forwarding and no hop controller. The classic baseline takes the raw
    timestamp difference as its offset estimate, so ``d_fixed_us`` defaults
    to 0 (no delay compensation).
    """

    node_id: int
    hw: HardwareClock
    lc: LogicalClock = field(default_factory=LogicalClock)
    d_fixed_us: float = 0.0
    rho_v: float = RHO_V
    phi_hat: dict[int, float] = field(default_factory=dict)
    last_pair: dict[int, tuple[int, int]] = field(default_factory=dict)
    seq: int = 0
    dropped: int = 0
    h_current: int = 1

    @property
    def phi(self) -> float:
        return self.lc.phi

    def on_broadcast_timer(self, hw_now: int, logical_now: int) -> SyncMessage:
        self.seq += 1
        return SyncMessage(hw_now, logical_now, self.lc.phi, 0, self.node_id, self.node_id, self.seq)

    def on_receive(self, msg: SyncMessage, hw_rx: int, logical_rx: int) -> None:
        if msg.hop_count != 0:
            self.dropped += 1
            return None
        j = msg.sender_id
        old = self.last_pair.get(j)
        if old is None or hw_rx > old[0]:
            if old is not None and msg.hw_ts_us > old[1]:
                self.phi_hat[j] = (msg.hw_ts_us - old[1]) / (hw_rx - old[0])
            self.last_pair[j] = (hw_rx, msg.hw_ts_us)
        phi_hat = self.phi_hat.get(j, 1.0)
        new_phi = self.rho_v * self.lc.phi + (1 - self.rho_v) * (phi_hat * msg.phi)
        offset = logical_rx - msg.logical_ts_us - self.d_fixed_us
        self.lc = apply_update(self.lc, hw_rx, new_phi, -offset / 2)
        return None

    def controller_step(self, hw_now: int) -> int:
        return 1
