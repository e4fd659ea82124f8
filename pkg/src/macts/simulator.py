"""Deterministic discrete-event simulation of a synchronizing sensor network.

True time is kept in integer nanoseconds. Clocks are read (and quantized to
1 us) only at the moment a node timestamps something. Every broadcast is
delivered to each radio neighbour after an independent delay draw; the
receiver's timestamp is taken at delivery. A sink-style probe samples every
logical clock at the same true instant each measurement interval.

Randomness comes from per-(purpose, node) streams derived from the scenario
seed, so a run is a pure function of its configuration.
"""

from __future__ import annotations

import csv
import heapq
import io
from collections.abc import Sequence
from dataclasses import dataclass, field
from enum import IntEnum
from typing import Any, NamedTuple

import numpy as np

from macts.clock import HardwareClock, LogicalClock, hardware_read, logical_read
from macts.config import ScenarioConfig
from macts.graph import Topology, TopologyError, is_connected
from macts.protocol import AtsNode, Forward, Node, SyncMessage

TRACE_COLUMNS = (
    "probe_time_s",
    "max_global_us",
    "avg_global_us",
    "max_local_us",
    "avg_local_us",
    "msg_total",
    "msg_forwards",
)


class SimulationError(RuntimeError):
    """The engine aborted (event-queue overflow and similar)."""


class EventKind(IntEnum):
    # value is the tiebreak rank among events at the same instant
    PACKET_DELIVERY = 0
    FORWARD_TRANSMIT = 1
    CONTROLLER_TICK = 2
    BROADCAST_TIMER = 3
    MEASUREMENT_PROBE = 4


class Stream(IntEnum):
    DRIFT = 1
    BOOT = 2
    PHASE = 3
    DELAY = 4
    LOSS = 5


class Probe(NamedTuple):
    probe_time_s: float
    max_global_us: float
    avg_global_us: float
    max_local_us: float
    avg_local_us: float
    msg_total: int
    msg_forwards: int
    multi_hop_nodes: int


class Residual(NamedTuple):
    """Offset-estimate error for one received packet."""

    time_s: float
    receiver: int
    sender: int
    hop_count: int
    estimate_error_us: float  # theta_hat - theta_true
    delay_us: float
    receiver_rate: float  # d(logical)/d(true) of the receiver


@dataclass
class RunTrace:
    config: ScenarioConfig
    probes: list[Probe] = field(default_factory=list)
    h_history: list[tuple[float, int, int]] = field(default_factory=list)
    origin_messages: int = 0
    forward_messages: int = 0
    dropped_messages: int = 0
    last_forward_time_s: float | None = None
    convergence_time_s: float | None = None
    residuals: list[Residual] = field(default_factory=list)
    node_rate_ppm: list[float] = field(default_factory=list)
    node_boot_offset_us: list[float] = field(default_factory=list)
    final_logical_rate_ppm: list[float] = field(default_factory=list)

    @property
    def probe_times(self) -> np.ndarray:
        return np.array([p.probe_time_s for p in self.probes])

    def series(self, name: str) -> np.ndarray:
        return np.array([getattr(p, name) for p in self.probes], dtype=float)

    def messages_at(self, time_s: float | None) -> int | None:
        if time_s is None:
            return None
        for p in self.probes:
            if p.probe_time_s >= time_s:
                return p.msg_total
        return None

    @property
    def messages_at_convergence(self) -> int | None:
        return self.messages_at(self.convergence_time_s)

    def single_hop_time_s(self) -> float | None:
        """Time after which every node stays at hop depth 1, if it happens."""
        n = len(self.node_rate_ppm)
        depth = [self.config.hops] * n
        multi = sum(1 for h in depth if h > 1)
        since = 0.0 if multi == 0 else None
        for t, node, h in self.h_history:
            multi += (h > 1) - (depth[node] > 1)
            depth[node] = h
            if multi == 0 and since is None:
                since = t
            elif multi > 0:
                since = None
        return since

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write(f"# config={self.config.to_json()}\n")
        buf.write(f"# seed={self.config.seed}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(TRACE_COLUMNS)
        for p in self.probes:
            w.writerow([
                f"{p.probe_time_s:.3f}",
                f"{p.max_global_us:.6f}",
                f"{p.avg_global_us:.6f}",
                f"{p.max_local_us:.6f}",
                f"{p.avg_local_us:.6f}",
                p.msg_total,
                p.msg_forwards,
            ])
        return buf.getvalue()

    def write_csv(self, path: Any) -> None:
        with open(path, "w", newline="") as fh:
            fh.write(self.to_csv())


def sample_delay(rng: np.random.Generator, mean_us: float, std_us: float) -> float:
    """Normal delay draw, redrawn until strictly positive."""
    if std_us < 0:
        raise ValueError(f"delay std must be non-negative, got {std_us}")
    if std_us == 0:
        return mean_us
    while True:
        d = rng.normal(mean_us, std_us)
        if d > 0:
            return float(d)


def measurement_probe(
    logical_us: Sequence[float], topology: Topology
) -> tuple[float, float, float, float]:
    """(max_global, avg_global, max_local, avg_local) over pairwise |L_i - L_j|.

    Global statistics cover all node pairs, local ones only radio neighbours.
    """
    # float64 is exact for integer clock readings far beyond any run length
    x = np.asarray(logical_us, dtype=float)
    n = x.size
    if n < 2:
        return 0.0, 0.0, 0.0, 0.0
    rel = np.sort(x - x.min())
    max_g = float(rel[-1])
    k = np.arange(n)
    avg_g = float(np.sum(rel * (2 * k - n + 1)) / (n * (n - 1) / 2))
    edges = topology.undirected_edges()
    if edges:
        ii = np.fromiter((e[0] for e in edges), dtype=np.int64, count=len(edges))
        jj = np.fromiter((e[1] for e in edges), dtype=np.int64, count=len(edges))
        d = np.abs(x[ii] - x[jj])
        max_l, avg_l = float(d.max()), float(d.mean())
    else:
        max_l = avg_l = 0.0
    return max_g, avg_g, max_l, avg_l


def detect_convergence(
    trace: RunTrace | Sequence[tuple[float, float]],
    threshold_us: float,
    rule: str = "sustained",
) -> float | None:
    """First probe time from which max global error stays below ``threshold_us``.

    ``trace`` is a RunTrace or a sequence of ``(time_s, max_global_us)``.
    With ``rule="first_crossing"`` the first probe below threshold counts.
    """
    if isinstance(trace, RunTrace):
        points = [(p.probe_time_s, p.max_global_us) for p in trace.probes]
    else:
        points = list(trace)
    if not points:
        raise ValueError("cannot detect convergence on an empty trace")
    if rule == "first_crossing":
        for t, e in points:
            if e < threshold_us:
                return t
        return None
    if rule != "sustained":
        raise ValueError(f"unknown convergence rule {rule!r}")
    start = None
    for t, e in points:
        if e < threshold_us:
            if start is None:
                start = t
        else:
            start = None
    return start


def _stream(seed: int, purpose: Stream, node: int) -> np.random.Generator:
    return np.random.default_rng([seed, int(purpose), node])


def run_scenario(
    cfg: ScenarioConfig,
    topology: Topology | None = None,
    *,
    collect_residuals: bool = False,
) -> RunTrace:
    """Simulate ``cfg`` and return its trace.

    ``topology`` overrides ``cfg.topology`` when given (the config still
    labels the run).
    """
    topo = topology if topology is not None else cfg.topology.build()
    if not is_connected(topo):
        raise TopologyError("topology must be connected before simulation starts")
    n = topo.n
    seed = cfg.seed
    hops = cfg.hops

    period_ns = int(round(cfg.broadcast_period_s * 1e9))
    probe_ns = int(round(cfg.measurement_interval_s * 1e9))
    end_ns = int(round(cfg.sim_duration_s * 1e9))
    fwd_ns = int(round(cfg.forward_latency_us * 1e3))
    mean_d, std_d = cfg.delay_mean_us, cfg.delay_std_us
    loss = cfg.loss_probability
    threshold = cfg.convergence_threshold_us

    trace = RunTrace(cfg)
    nodes: list[Node | AtsNode] = []
    for i in range(n):
        rate = _stream(seed, Stream.DRIFT, i).uniform(-cfg.drift_ppm_bound, cfg.drift_ppm_bound)
        boot = _stream(seed, Stream.BOOT, i).uniform(0.0, cfg.boot_offset_max_s * 1e6)
        hw = HardwareClock(rate_ppm=float(rate), boot_offset_us=float(boot))
        h0 = hardware_read(hw, 0.0)
        lc = LogicalClock(1.0, h0, float(h0))
        trace.node_rate_ppm.append(float(rate))
        trace.node_boot_offset_us.append(float(boot))
        if cfg.protocol == "ats":
            d_fixed = cfg.d_fixed_us if cfg.ats_delay_compensation else 0.0
            nodes.append(AtsNode(i, hw, lc, d_fixed_us=d_fixed, rho_v=cfg.rho_v))
        else:
            nodes.append(
                Node(
                    i, hw, lc,
                    h_initial=cfg.H_initial,
                    xi_us=cfg.xi_us,
                    d_fixed_us=cfg.d_fixed_us,
                    rho_v=cfg.rho_v,
                    broadcast_period_s=cfg.broadcast_period_s,
                    local_error_mode=cfg.local_error_mode,
                )
            )
    delay_rng = [_stream(seed, Stream.DELAY, i) for i in range(n)]
    loss_rng = [_stream(seed, Stream.LOSS, i) for i in range(n)] if loss > 0 else None
    neighbors = [topo.neighbors(i) for i in range(n)]

    queue: list[tuple[int, int, int, int, Any]] = []
    seq = 0

    def push(t: int, kind: EventKind, node: int, payload: Any = None) -> None:
        nonlocal seq
        seq += 1
        heapq.heappush(queue, (t, int(kind), node, seq, payload))
        if len(queue) > cfg.max_queue_events:
            raise SimulationError(
                f"event queue exceeded {cfg.max_queue_events} entries at t={t / 1e9:.3f}s"
            )

    for i in range(n):
        phase = _stream(seed, Stream.PHASE, i).uniform(0.0, cfg.broadcast_period_s)
        first = int(round(phase * 1e9))
        push(first, EventKind.CONTROLLER_TICK, i)
        push(first, EventKind.BROADCAST_TIMER, i)
    push(probe_ns, EventKind.MEASUREMENT_PROBE, -1)

    def transmit(t: int, u: int, msg: SyncMessage) -> None:
        t_us = t / 1e3
        truth = None
        if collect_residuals:
            nd = nodes[u]
            truth = nd.lc.exact(nd.hw.exact(t_us))
        rng = delay_rng[u]
        for v in neighbors[u]:
            d_us = sample_delay(rng, mean_d, std_d)
            if loss_rng is not None and loss_rng[u].random() < loss:
                continue
            push(t + int(round(d_us * 1e3)), EventKind.PACKET_DELIVERY, v, (msg, t, truth))

    below_since: int | None = None
    h_now = [hops] * n
    while queue:
        t, kind, i, _, payload = heapq.heappop(queue)
        if t > end_ns:
            break
        if kind == EventKind.PACKET_DELIVERY:
            msg, t_tx, truth = payload
            node = nodes[i]
            hw_rx = hardware_read(node.hw, t / 1e3)
            lg_rx = logical_read(node.lc, hw_rx)
            if collect_residuals:
                t_tx_us = t_tx / 1e3
                theta_true = node.lc.exact(node.hw.exact(t_tx_us)) - truth
                theta_hat = lg_rx - msg.logical_ts_us - node.d_fixed_us
                trace.residuals.append(
                    Residual(
                        t / 1e9, i, msg.sender_id, msg.hop_count,
                        theta_hat - theta_true, (t - t_tx) / 1e3,
                        node.lc.phi * node.hw.rate,
                    )
                )
            fwd = node.on_receive(msg, hw_rx, lg_rx)
            if fwd is not None:
                push(t + fwd_ns, EventKind.FORWARD_TRANSMIT, i, fwd)
        elif kind == EventKind.FORWARD_TRANSMIT:
            node = nodes[i]
            hw_now = hardware_read(node.hw, t / 1e3)
            out = node.forward_message(payload, hw_now, logical_read(node.lc, hw_now))
            trace.forward_messages += 1
            trace.last_forward_time_s = t / 1e9
            transmit(t, i, out)
        elif kind == EventKind.BROADCAST_TIMER:
            node = nodes[i]
            hw_now = hardware_read(node.hw, t / 1e3)
            msg = node.on_broadcast_timer(hw_now, logical_read(node.lc, hw_now))
            trace.origin_messages += 1
            transmit(t, i, msg)
            push(t + period_ns, EventKind.CONTROLLER_TICK, i)
            push(t + period_ns, EventKind.BROADCAST_TIMER, i)
        elif kind == EventKind.CONTROLLER_TICK:
            node = nodes[i]
            h = node.controller_step(hardware_read(node.hw, t / 1e3))
            if h != h_now[i]:
                h_now[i] = h
                trace.h_history.append((t / 1e9, i, h))
        else:
            readings = []
            for node in nodes:
                readings.append(logical_read(node.lc, hardware_read(node.hw, t / 1e3)))
            mg, ag, ml, al = measurement_probe(readings, topo)
            trace.probes.append(
                Probe(
                    t / 1e9, mg, ag, ml, al,
                    trace.origin_messages + trace.forward_messages,
                    trace.forward_messages,
                    sum(1 for h in h_now if h > 1),
                )
            )
            if mg < threshold:
                below_since = t if below_since is None else below_since
            else:
                below_since = None
            stop = cfg.stop_after_converged_s
            if stop is not None and below_since is not None and t - below_since >= stop * 1e9:
                break
            push(t + probe_ns, EventKind.MEASUREMENT_PROBE, -1)

    trace.dropped_messages = sum(nd.dropped for nd in nodes)
    trace.final_logical_rate_ppm = [(nd.lc.phi * nd.hw.rate - 1.0) * 1e6 for nd in nodes]
    if trace.probes:
        trace.convergence_time_s = detect_convergence(trace, threshold, cfg.convergence_rule)
    return trace


def summary_record(trace: RunTrace, spectral: dict[str, Any] | None = None) -> dict[str, Any]:
    """Flat key-value record of a run: outcome, spectral report and config."""
    conv = trace.convergence_time_s
    rec: dict[str, Any] = {
        "convergence_time_s": conv,
        "convergence_time_min": None if conv is None else conv / 60.0,
        "msgs_at_convergence": trace.messages_at_convergence,
        "origin_messages": trace.origin_messages,
        "forward_messages": trace.forward_messages,
        "dropped_messages": trace.dropped_messages,
        "probes": len(trace.probes),
        "final_max_global_us": trace.probes[-1].max_global_us if trace.probes else None,
        "single_hop_time_s": trace.single_hop_time_s(),
    }
    for k, v in (spectral or {}).items():
        rec[f"spectral.{k}"] = v
    for k, v in trace.config.flat().items():
        rec[f"config.{k}"] = v
    return rec

