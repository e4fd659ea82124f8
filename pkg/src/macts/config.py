"""Scenario configuration: defaults, validation, JSON loading and overrides."""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from macts.graph import (
    Topology,
    TopologyError,
    build_grid,
    build_line,
    build_random_geometric,
    is_connected,
)


class ConfigError(ValueError):
    """Malformed or inconsistent configuration."""


@dataclass(frozen=True)
class TopologySpec:
    kind: str = "grid"  # grid | line | random | file
    rows: int = 5
    cols: int = 5
    n: int = 9
    radius: float = 0.3
    seed: int = 0
    path: str = ""

    def build(self) -> Topology:
        if self.kind == "grid":
            return build_grid(self.rows, self.cols)
        if self.kind == "line":
            return build_line(self.n)
        if self.kind == "random":
            return build_random_geometric(self.n, self.radius, self.seed)
        if self.kind == "file":
            t = Topology.load(self.path)
            if not is_connected(t):
                raise TopologyError(f"topology file {self.path} is not connected")
            return t
        raise ConfigError(f"unknown topology kind {self.kind!r}")

    @property
    def label(self) -> str:
        if self.kind == "grid":
            return f"grid{self.rows}x{self.cols}"
        if self.kind == "line":
            return f"line{self.n}"
        if self.kind == "random":
            return f"random{self.n}_r{self.radius:g}_s{self.seed}"
        return Path(self.path).stem or self.kind

    @classmethod
    def parse(cls, text: str) -> TopologySpec:
        """Parse ``grid:5x5``, ``line:9``, ``random:25:0.3:7`` or ``file:edges.txt``."""
        kind, _, rest = text.partition(":")
        try:
            if kind == "grid":
                r, c = rest.lower().split("x")
                return cls("grid", rows=int(r), cols=int(c))
            if kind == "line":
                return cls("line", n=int(rest))
            if kind == "random":
                n, radius, seed = rest.split(":")
                return cls("random", n=int(n), radius=float(radius), seed=int(seed))
            if kind == "file":
                return cls("file", path=rest)
        except ValueError as exc:
            raise ConfigError(f"bad topology spec {text!r}: {exc}") from exc
        raise ConfigError(f"bad topology spec {text!r}")


@dataclass(frozen=True)
class ScenarioConfig:
    protocol: str = "macts"  # macts | ats
    topology: TopologySpec = field(default_factory=TopologySpec)
    broadcast_period_s: float = 30.0
    sim_duration_s: float = 3600.0
    delay_mean_us: float = 3.33
    delay_std_us: float = 0.07
    drift_ppm_bound: float = 40.0
    boot_offset_max_s: float = 500.0
    H_initial: int = 2
    xi_us: float = 5.0
    rho_v: float = 0.5
    d_fixed_us: float = 3.33
    ats_delay_compensation: bool = False
    forward_latency_us: float = 500.0
    measurement_interval_s: float = 10.0
    convergence_threshold_us: float = 20.0
    convergence_rule: str = "sustained"  # sustained | first_crossing
    local_error_mode: str = "compensated"  # compensated | raw
    loss_probability: float = 0.0
    stop_after_converged_s: float | None = None
    max_queue_events: int = 5_000_000
    seed: int = 0

    def __post_init__(self) -> None:
        self.validate()

    def validate(self) -> None:
        errors = []
        if self.protocol not in ("macts", "ats"):
            errors.append(f"protocol must be 'macts' or 'ats', got {self.protocol!r}")
        if self.broadcast_period_s <= 0:
            errors.append("broadcast_period_s must be positive")
        if self.sim_duration_s <= 0:
            errors.append("sim_duration_s must be positive")
        if self.delay_mean_us <= 0:
            errors.append("delay_mean_us must be positive")
        if self.delay_std_us < 0:
            errors.append("delay_std_us must be non-negative")
        if self.drift_ppm_bound < 0:
            errors.append("drift_ppm_bound must be non-negative")
        if self.boot_offset_max_s < 0:
            errors.append("boot_offset_max_s must be non-negative")
        if self.H_initial < 1:
            errors.append("H_initial must be >= 1")
        if self.xi_us <= 0:
            errors.append("xi_us must be positive")
        if not 0 < self.rho_v < 1:
            errors.append("rho_v must lie in (0, 1)")
        if self.forward_latency_us < 0:
            errors.append("forward_latency_us must be non-negative")
        if self.measurement_interval_s <= 0:
            errors.append("measurement_interval_s must be positive")
        if self.convergence_threshold_us <= 0:
            errors.append("convergence_threshold_us must be positive")
        if self.convergence_rule not in ("sustained", "first_crossing"):
            errors.append(f"unknown convergence_rule {self.convergence_rule!r}")
        if self.local_error_mode not in ("compensated", "raw"):
            errors.append(f"unknown local_error_mode {self.local_error_mode!r}")
        if not 0 <= self.loss_probability < 1:
            errors.append("loss_probability must lie in [0, 1)")
        if self.stop_after_converged_s is not None and self.stop_after_converged_s <= 0:
            errors.append("stop_after_converged_s must be positive when set")
        if self.max_queue_events < 1:
            errors.append("max_queue_events must be positive")
        if self.topology.kind not in ("grid", "line", "random", "file"):
            errors.append(f"unknown topology kind {self.topology.kind!r}")
        if errors:
            raise ConfigError("; ".join(errors))

    @property
    def hops(self) -> int:
        return 1 if self.protocol == "ats" else self.H_initial

    def to_dict(self) -> dict[str, Any]:
        return dataclasses.asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    def flat(self) -> dict[str, Any]:
        out: dict[str, Any] = {}
        for k, v in self.to_dict().items():
            if isinstance(v, dict):
                out.update({f"{k}.{kk}": vv for kk, vv in v.items()})
            else:
                out[k] = v
        return out

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> ScenarioConfig:
        data = dict(data)
        top = data.pop("topology", {})
        if isinstance(top, str):
            topo = TopologySpec.parse(top)
        else:
            topo = _build(TopologySpec, top, "topology.")
        return _build(cls, {**data, "topology": topo}, "")

    def with_overrides(self, overrides: dict[str, Any]) -> ScenarioConfig:
        data = self.to_dict()
        for key, value in overrides.items():
            _set_dotted(data, key, value)
        return ScenarioConfig.from_dict(data)


def _build(cls: type, data: dict[str, Any], prefix: str) -> Any:
    names = {f.name: f for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - set(names))
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(prefix + k for k in unknown)}")
    kwargs = {}
    for k, v in data.items():
        if k == "topology" and isinstance(v, TopologySpec):
            kwargs[k] = v
            continue
        kwargs[k] = _coerce(prefix + k, names[k].default, v)
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc


def _coerce(key: str, default: Any, value: Any) -> Any:
    if value is None:
        return None
    try:
        if isinstance(default, bool):
            if isinstance(value, str):
                if value.lower() not in ("true", "false", "1", "0"):
                    raise ValueError(value)
                return value.lower() in ("true", "1")
            return bool(value)
        if isinstance(default, int):
            if isinstance(value, float) and not value.is_integer():
                raise ValueError(value)
            return int(value)
        if isinstance(default, float) or default is None:
            if isinstance(value, str) and value.lower() in ("none", "null", ""):
                return None
            return float(value)
        if isinstance(default, str):
            return str(value)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad value for {key}: {value!r}") from exc
    return value


def _set_dotted(data: dict[str, Any], key: str, value: Any) -> None:
    parts = key.split(".")
    node = data
    for p in parts[:-1]:
        nxt = node.get(p)
        if not isinstance(nxt, dict):
            raise ConfigError(f"unknown config key {key!r}")
        node = nxt
    if parts[-1] not in node:
        raise ConfigError(f"unknown config key {key!r}")
    node[parts[-1]] = value


def parse_override(text: str) -> tuple[str, Any]:
    key, sep, raw = text.partition("=")
    if not sep or not key:
        raise ConfigError(f"override must look like key=value, got {text!r}")
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return key.strip(), value


def load_config(path: str | Path) -> ScenarioConfig:
    p = Path(path)
    try:
        text = p.read_text()
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {p}") from exc
    except OSError as exc:
        raise ConfigError(f"cannot read config {p}: {exc}") from exc
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"malformed JSON in {p}: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError(f"config {p} must be a JSON object")
    return ScenarioConfig.from_dict(data)
