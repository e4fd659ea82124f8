"""Post-processing of run traces: steady-state statistics, histograms, tables."""

from __future__ import annotations

import csv
import io
import math
import statistics
from collections import defaultdict
from collections.abc import Iterable, Sequence
from dataclasses import dataclass

import numpy as np
from scipy import stats

from macts.simulator import RunTrace

GUARD_PROBES = 2
MIN_STEADY_PROBES = 30

TABLE_COLUMNS = (
    "protocol",
    "topology",
    "mean_us",
    "std",
    "max_us",
    "conv_time_min_lo",
    "conv_time_min_hi",
    "msgs_at_convergence",
)
CONVERGENCE_COLUMNS = (
    "protocol",
    "topology",
    "H",
    "runs",
    "converged",
    "median_conv_min",
    "min_conv_min",
    "max_conv_min",
    "mean_msgs_at_convergence",
    "status",
)


class NotConverged(ValueError):
    """The trace never met its convergence condition; no steady state exists."""


@dataclass(frozen=True)
class SummaryStats:
    mean: float
    std: float
    max: float
    ci95_mean_lo: float
    ci95_mean_hi: float
    ci95_std_lo: float
    ci95_std_hi: float
    sample_count: int
    window: tuple[float, float] | None = None


def summarize(values: Sequence[float], window: tuple[float, float] | None = None) -> SummaryStats:
    """Mean, sample std and max with 95% intervals.

    The mean interval uses Student's t with n-1 degrees of freedom; the std
    interval uses the chi-square distribution of the sample variance.
    """
    x = np.asarray(values, dtype=float)
    n = x.size
    if n < 2:
        raise ValueError(f"need at least two samples, got {n}")
    mean = float(x.mean())
    std = float(x.std(ddof=1))
    half = float(stats.t.ppf(0.975, n - 1)) * std / math.sqrt(n)
    chi_hi = float(stats.chi2.ppf(0.975, n - 1))
    chi_lo = float(stats.chi2.ppf(0.025, n - 1))
    return SummaryStats(
        mean=mean,
        std=std,
        max=float(x.max()),
        ci95_mean_lo=mean - half,
        ci95_mean_hi=mean + half,
        ci95_std_lo=std * math.sqrt((n - 1) / chi_hi),
        ci95_std_hi=std * math.sqrt((n - 1) / chi_lo),
        sample_count=n,
        window=window,
    )


def steady_state_window(trace: RunTrace, guard_probes: int = GUARD_PROBES) -> list[int]:
    """Probe indices from convergence plus ``guard_probes`` to the end of the run."""
    conv = trace.convergence_time_s
    if conv is None:
        raise NotConverged(f"run with seed {trace.config.seed} did not converge")
    start = next(k for k, p in enumerate(trace.probes) if p.probe_time_s >= conv)
    return list(range(start + guard_probes, len(trace.probes)))


def steady_state_summary(
    trace: RunTrace,
    metric: str = "max_global_us",
    guard_probes: int = GUARD_PROBES,
    min_probes: int = MIN_STEADY_PROBES,
) -> SummaryStats:
    idx = steady_state_window(trace, guard_probes)
    if len(idx) < min_probes:
        raise NotConverged(
            f"only {len(idx)} post-convergence probes, need {min_probes}"
        )
    values = [getattr(trace.probes[k], metric) for k in idx]
    window = (trace.probes[idx[0]].probe_time_s, trace.probes[idx[-1]].probe_time_s)
    return summarize(values, window)


def histogram(series: Iterable[float], bin_width_us: float) -> dict[float, int]:
    """Counts per left-closed bin ``[k*w, (k+1)*w)``, keyed by the left edge."""
    if not bin_width_us > 0:
        raise ValueError(f"bin width must be positive, got {bin_width_us}")
    x = np.asarray(list(series), dtype=float)
    if x.size == 0:
        raise ValueError("cannot build a histogram of an empty series")
    keys = np.floor(x / bin_width_us).astype(np.int64)
    uniq, counts = np.unique(keys, return_counts=True)
    return {float(k * bin_width_us): int(c) for k, c in zip(uniq, counts)}


def histogram_csv(bins: dict[float, int]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["bin_left_us", "count"])
    for left in sorted(bins):
        w.writerow([f"{left:g}", bins[left]])
    return buf.getvalue()


def mode_bin(bins: dict[float, int]) -> float:
    """Left edge of the most populated bin (lowest edge on ties)."""
    best = max(bins.values())
    return min(k for k, c in bins.items() if c == best)


@dataclass(frozen=True)
class ConvergenceRow:
    protocol: str
    topology: str
    hops: int
    runs: int
    converged: int
    median_s: float | None
    min_s: float | None
    max_s: float | None
    mean_msgs: float | None

    @property
    def status(self) -> str:
        if self.converged == 0:
            return "none converged within horizon"
        if self.converged < self.runs:
            return f"{self.runs - self.converged} not converged"
        return "ok"

    def as_record(self) -> dict[str, object]:
        def minutes(x: float | None) -> str:
            return "" if x is None else f"{x / 60:.4f}"

        return {
            "protocol": self.protocol,
            "topology": self.topology,
            "H": self.hops,
            "runs": self.runs,
            "converged": self.converged,
            "median_conv_min": minutes(self.median_s),
            "min_conv_min": minutes(self.min_s),
            "max_conv_min": minutes(self.max_s),
            "mean_msgs_at_convergence": "" if self.mean_msgs is None else f"{self.mean_msgs:.1f}",
            "status": self.status,
        }


def group_key(trace: RunTrace) -> tuple[str, str, int]:
    cfg = trace.config
    return cfg.protocol, cfg.topology.label, cfg.hops


def censored_median(times: Sequence[float | None]) -> float | None:
    """Median where a missing time counts as 'later than any observed'."""
    vals = sorted(math.inf if t is None else t for t in times)
    med = statistics.median(vals)
    return None if math.isinf(med) else float(med)


def convergence_table(traces: Iterable[RunTrace], min_runs: int = 3) -> list[ConvergenceRow]:
    """Aggregate convergence time and message cost per (protocol, topology, H)."""
    groups: dict[tuple[str, str, int], list[RunTrace]] = defaultdict(list)
    for tr in traces:
        groups[group_key(tr)].append(tr)
    rows = []
    for key in sorted(groups):
        runs = groups[key]
        if len(runs) < min_runs:
            raise ValueError(f"group {key} has {len(runs)} runs, need at least {min_runs}")
        times = [tr.convergence_time_s for tr in runs]
        done = sorted(t for t in times if t is not None)
        msgs = [tr.messages_at_convergence for tr in runs if tr.convergence_time_s is not None]
        rows.append(
            ConvergenceRow(
                *key,
                runs=len(runs),
                converged=len(done),
                median_s=censored_median(times),
                min_s=done[0] if done else None,
                max_s=done[-1] if done else None,
                mean_msgs=float(np.mean(msgs)) if msgs else None,
            )
        )
    return rows


def convergence_csv(rows: Sequence[ConvergenceRow]) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=CONVERGENCE_COLUMNS, lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow(r.as_record())
    return buf.getvalue()


def accuracy_table(traces: Iterable[RunTrace]) -> list[dict[str, object]]:
    """Accuracy-table rows, one per protocol/topology/H.

    Steady-state samples of the maximal global error are pooled across the
    converged runs of a group; convergence range is min..max over those runs.
    """
    groups: dict[tuple[str, str], list[RunTrace]] = defaultdict(list)
    for tr in traces:
        groups[(protocol_label(tr), tr.config.topology.label)].append(tr)
    rows = []
    for (protocol, topo), runs in sorted(groups.items()):
        pooled: list[float] = []
        conv = []
        msgs = []
        for tr in runs:
            try:
                idx = steady_state_window(tr)
            except NotConverged:
                continue
            pooled += [trace_value(tr, k) for k in idx]
            conv.append(tr.convergence_time_s / 60)
            msgs.append(tr.messages_at_convergence)
        if len(pooled) < 2:
            rows.append({"protocol": protocol, "topology": topo, "mean_us": "", "std": "",
                         "max_us": "", "conv_time_min_lo": "", "conv_time_min_hi": "",
                         "msgs_at_convergence": ""})
            continue
        s = summarize(pooled)
        rows.append({
            "protocol": protocol,
            "topology": topo,
            "mean_us": f"{s.mean:.3f}",
            "std": f"{s.std:.3f}",
            "max_us": f"{s.max:.3f}",
            "conv_time_min_lo": f"{min(conv):.2f}",
            "conv_time_min_hi": f"{max(conv):.2f}",
            "msgs_at_convergence": f"{np.mean(msgs):.1f}",
        })
    return rows


def protocol_label(trace: RunTrace) -> str:
    """``ats`` or ``macts-H<k>``, so runs with different hop budgets stay apart."""
    cfg = trace.config
    return "ats" if cfg.protocol == "ats" else f"macts-H{cfg.hops}"


def trace_value(trace: RunTrace, k: int, metric: str = "max_global_us") -> float:
    return float(getattr(trace.probes[k], metric))


def accuracy_csv(rows: Sequence[dict[str, object]]) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=TABLE_COLUMNS, lineterminator="\n")
    w.writeheader()
    w.writerows(rows)
    return buf.getvalue()
